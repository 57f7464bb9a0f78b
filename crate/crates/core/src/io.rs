//! CSV and JSON exchange formats.
//!
//! Columns are written in a fixed order and floats in their shortest
//! round-trip form, so identical results give identical files.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::calibrate::{DistancePoint, DistanceScan, FrequencyPoint, FrequencyScan, HeatingPoint};
use crate::drift::{ChargingTrace, ServoTrace};
use crate::dynamics::{ScanResult, Trajectory};
use crate::error::{Error, Result};
use crate::estimate::{RabiDataset, RabiRecord};
use crate::hardware::ContinuousVoltage;
use crate::phonons::PhononDistribution;
use crate::rampgen::{MeshAnchor, RampConfig, Waveform, WaveformAnnotations};
use crate::trapmodel::{Segment, VoltageSet};

/// Shortest decimal that parses back to `x`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e9).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn row<W: Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    w.write_record(fields)?;
    Ok(())
}

fn floats(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| format_float(v)).collect()
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?
        .flush()?;
    Ok(())
}

fn parse_rows<T: DeserializeOwned, R: Read>(r: R) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for record in reader.deserialize() {
        out.push(record?);
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(r: R) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(std::io::BufWriter::new(std::fs::File::create(path)?), value)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(std::io::BufReader::new(std::fs::File::open(path)?))
}

const WAVEFORM_HEADER: [&str; 5] = ["t_s", "U_C_V", "U_S_V", "U_O_V", "dU_O_V"];

pub fn write_waveform_csv<W: Write>(w: W, wave: &Waveform) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(WAVEFORM_HEADER)?;
    for i in 0..wave.len() {
        let v = wave.sample(i);
        row(
            &mut out,
            &floats(&[i as f64 * wave.sample_period, v.u_c, v.u_s, v.u_o, v.du_o]),
        )?;
    }
    finish(out)
}

#[derive(Deserialize)]
struct WaveformRow {
    t_s: f64,
    #[serde(rename = "U_C_V")]
    u_c: f64,
    #[serde(rename = "U_S_V")]
    u_s: f64,
    #[serde(rename = "U_O_V")]
    u_o: f64,
    #[serde(rename = "dU_O_V")]
    du_o: f64,
}

/// Reads a uniformly sampled waveform. Annotations are left empty.
pub fn read_waveform_csv<R: Read>(r: R) -> Result<Waveform> {
    let rows: Vec<WaveformRow> = parse_rows(r)?;
    if rows.len() < 2 {
        return Err(Error::Parse {
            line: rows.len() + 1,
            message: "waveform needs at least two samples".into(),
        });
    }
    let step = rows[1].t_s - rows[0].t_s;
    if !(step > 0.0) {
        return Err(Error::Parse {
            line: 3,
            message: "time column must increase".into(),
        });
    }
    for (i, r) in rows.iter().enumerate() {
        let want = rows[0].t_s + i as f64 * step;
        if (r.t_s - want).abs() > 1e-6 * step {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("non-uniform sampling at t = {} s", r.t_s),
            });
        }
    }
    let samples: Vec<VoltageSet> = rows
        .iter()
        .map(|r| VoltageSet::new(r.u_c, r.u_s, r.u_o).with_tilt(r.du_o))
        .collect();
    Waveform::from_samples(step, &samples)
}

/// Metadata written next to a waveform CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSidecar {
    pub samples: usize,
    pub sample_rate: f64,
    pub annotations: WaveformAnnotations,
    pub ramp: Option<RampConfig>,
    pub mesh: Option<Vec<MeshAnchor>>,
}

impl WaveformSidecar {
    pub fn describe(w: &Waveform, ramp: Option<RampConfig>, mesh: Option<Vec<MeshAnchor>>) -> Self {
        Self {
            samples: w.len(),
            sample_rate: w.sample_rate(),
            annotations: w.annotations.clone(),
            ramp,
            mesh,
        }
    }

    /// Restores annotations onto an imported waveform.
    pub fn attach(&self, w: &mut Waveform) -> Result<()> {
        if self.samples != w.len() {
            return Err(Error::Invalid(format!(
                "sidecar describes {} samples, waveform has {}",
                self.samples,
                w.len()
            )));
        }
        w.annotations = self.annotations.clone();
        Ok(())
    }
}

/// Filtered voltages on their fine grid, every `every`-th point.
pub fn write_voltage_csv<W: Write>(w: W, cv: &ContinuousVoltage, every: usize) -> Result<()> {
    let every = every.max(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(WAVEFORM_HEADER)?;
    let n = cv.len();
    let last = ((n - 1) % every != 0).then_some(n - 1);
    for j in (0..n).step_by(every).chain(last) {
        let v = cv.node(j);
        row(
            &mut out,
            &floats(&[j as f64 * cv.step(), v.u_c, v.u_s, v.u_o, v.du_o]),
        )?;
    }
    finish(out)
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "x1_m", "x2_m", "v1_m_per_s", "v2_m_per_s"])?;
    for s in &traj.states {
        row(&mut out, &floats(&[s.time, s.x1, s.x2, s.v1, s.v2]))?;
    }
    finish(out)
}

pub fn write_scan_csv<W: Write>(w: W, scan: &ScanResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let axis = format!("{}_{}", scan.axis.label(), scan.axis.unit());
    out.write_record([
        axis.as_str(),
        "classification",
        "n_coh_1",
        "n_coh_2",
        "n_thermal",
        "n_tot",
        "error",
    ])?;
    for p in &scan.points {
        let mut fields = vec![format_float(p.value)];
        match (p.outcome, p.n_thermal) {
            (Some(o), Some(th)) => {
                fields.push(o.classification.label().to_string());
                fields.extend(floats(&[o.n_coh[0], o.n_coh[1], th, o.mean_n_coh() + th]));
            }
            _ => fields.extend(std::iter::repeat_n(String::new(), 5)),
        }
        fields.push(p.error.clone().unwrap_or_default());
        row(&mut out, &fields)?;
    }
    finish(out)
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    dn: i32,
    t_us: f64,
    successes: u64,
    shots: u64,
}

pub fn write_dataset_csv<W: Write>(w: W, data: &RabiDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dn", "t_us", "successes", "shots"])?;
    for r in &data.records {
        row(
            &mut out,
            &[
                r.dn.to_string(),
                format_float(r.t * 1e6),
                r.successes.to_string(),
                r.shots.to_string(),
            ],
        )?;
    }
    finish(out)
}

pub fn read_dataset_csv<R: Read>(r: R) -> Result<RabiDataset> {
    let rows: Vec<DatasetRow> = parse_rows(r)?;
    let records = rows
        .into_iter()
        .map(|r| RabiRecord {
            dn: r.dn,
            t: r.t_us * 1e-6,
            successes: r.successes,
            shots: r.shots,
        })
        .collect();
    RabiDataset::new(records)
}

pub fn write_distribution_csv<W: Write>(w: W, p: &PhononDistribution) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "p_n"])?;
    for (n, &v) in p.probabilities().iter().enumerate() {
        row(&mut out, &[n.to_string(), format_float(v)])?;
    }
    finish(out)
}

/// Rabi signal samples as `(t, p_up, dn)` rows.
pub fn write_rabi_csv<W: Write>(w: W, rows: &[(f64, f64, i32)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "p_up", "dn"])?;
    for &(t, p, dn) in rows {
        row(
            &mut out,
            &[format_float(t), format_float(p), dn.to_string()],
        )?;
    }
    finish(out)
}

#[derive(Serialize, Deserialize)]
struct ChargingRow {
    t_min: f64,
    #[serde(rename = "U_mV")]
    u_mv: f64,
}

pub fn write_charging_csv<W: Write>(w: W, trace: &ChargingTrace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_min", "U_mV"])?;
    for (&t, &u) in trace.times.iter().zip(&trace.values) {
        row(&mut out, &floats(&[t, u]))?;
    }
    finish(out)
}

/// Reads a charging trace; `sigma` is the measurement accuracy in mV.
pub fn read_charging_csv<R: Read>(r: R, sigma: f64) -> Result<ChargingTrace> {
    let rows: Vec<ChargingRow> = parse_rows(r)?;
    if let Some(i) = rows.windows(2).position(|p| !(p[1].t_min > p[0].t_min)) {
        return Err(Error::Parse {
            line: i + 3,
            message: "times must increase".into(),
        });
    }
    Ok(ChargingTrace {
        times: rows.iter().map(|r| r.t_min).collect(),
        values: rows.iter().map(|r| r.u_mv).collect(),
        sigma,
    })
}

pub fn write_servo_csv<W: Write>(w: W, trace: &ServoTrace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step",
        "error_mV",
        "t_s",
        "drift_mV",
        "correction_mV",
        "active",
    ])?;
    for s in &trace.steps {
        let mut fields = vec![s.step.to_string()];
        fields.extend(floats(&[s.error, s.time, s.drift, s.correction]));
        fields.push(if s.active { "1" } else { "0" }.to_string());
        row(&mut out, &fields)?;
    }
    finish(out)
}

#[derive(Deserialize)]
struct FrequencyRow {
    segment: String,
    #[serde(rename = "voltage_V")]
    voltage: f64,
    #[serde(rename = "omega_2pi_MHz")]
    omega_mhz: f64,
    #[serde(rename = "sigma_2pi_kHz")]
    sigma_khz: f64,
    #[serde(rename = "U_C_V", default)]
    u_c: f64,
    #[serde(rename = "U_S_V", default)]
    u_s: f64,
    #[serde(rename = "U_O_V", default)]
    u_o: f64,
}

/// Frequency scans; consecutive rows with the same segment and held
/// voltages form one scan.
pub fn read_frequency_csv<R: Read>(r: R) -> Result<Vec<FrequencyScan>> {
    let rows: Vec<FrequencyRow> = parse_rows(r)?;
    let tau = 2.0 * std::f64::consts::PI;
    let mut scans: Vec<FrequencyScan> = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        let segment = Segment::parse(&r.segment).ok_or_else(|| Error::Parse {
            line: i + 2,
            message: format!("unknown segment `{}`", r.segment),
        })?;
        let background = VoltageSet::new(r.u_c, r.u_s, r.u_o);
        let point = FrequencyPoint {
            voltage: r.voltage,
            omega: tau * r.omega_mhz * 1e6,
            sigma: tau * r.sigma_khz * 1e3,
        };
        match scans.last_mut() {
            Some(s) if s.segment == segment && s.background == background => s.points.push(point),
            _ => scans.push(FrequencyScan {
                segment,
                points: vec![point],
                background,
            }),
        }
    }
    Ok(scans)
}

pub fn write_frequency_csv<W: Write>(w: W, scans: &[FrequencyScan]) -> Result<()> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "segment",
        "voltage_V",
        "omega_2pi_MHz",
        "sigma_2pi_kHz",
        "U_C_V",
        "U_S_V",
        "U_O_V",
    ])?;
    for s in scans {
        for p in &s.points {
            let mut fields = vec![s.segment.label().to_string()];
            fields.extend(floats(&[
                p.voltage,
                p.omega / tau / 1e6,
                p.sigma / tau / 1e3,
                s.background.u_c,
                s.background.u_s,
                s.background.u_o,
            ]));
            row(&mut out, &fields)?;
        }
    }
    finish(out)
}

#[derive(Serialize, Deserialize)]
struct DistanceRow {
    #[serde(rename = "U_C")]
    u_c: f64,
    #[serde(rename = "U_S")]
    u_s: f64,
    #[serde(rename = "U_O")]
    u_o: f64,
    d_um: f64,
    sigma_um: f64,
}

pub fn read_distance_csv<R: Read>(r: R) -> Result<DistanceScan> {
    let rows: Vec<DistanceRow> = parse_rows(r)?;
    Ok(DistanceScan {
        points: rows
            .into_iter()
            .map(|r| DistancePoint {
                voltages: VoltageSet::new(r.u_c, r.u_s, r.u_o),
                distance: r.d_um * 1e-6,
                sigma: r.sigma_um * 1e-6,
            })
            .collect(),
    })
}

pub fn write_distance_csv<W: Write>(w: W, scan: &DistanceScan) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["U_C", "U_S", "U_O", "d_um", "sigma_um"])?;
    for p in &scan.points {
        let v = p.voltages;
        row(
            &mut out,
            &floats(&[v.u_c, v.u_s, v.u_o, p.distance * 1e6, p.sigma * 1e6]),
        )?;
    }
    finish(out)
}

#[derive(Deserialize)]
struct HeatingRow {
    #[serde(rename = "omega_2pi_MHz")]
    omega_mhz: f64,
    rate_per_ms: f64,
    #[serde(default)]
    sigma_per_ms: f64,
}

pub fn read_heating_csv<R: Read>(r: R) -> Result<Vec<HeatingPoint>> {
    let rows: Vec<HeatingRow> = parse_rows(r)?;
    let tau = 2.0 * std::f64::consts::PI;
    Ok(rows
        .into_iter()
        .map(|r| HeatingPoint {
            omega: tau * r.omega_mhz * 1e6,
            rate: r.rate_per_ms,
            sigma: r.sigma_per_ms,
        })
        .collect())
}

pub fn write_heating_csv<W: Write>(w: W, points: &[HeatingPoint]) -> Result<()> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["omega_2pi_MHz", "rate_per_ms", "sigma_per_ms"])?;
    for p in points {
        row(&mut out, &floats(&[p.omega / tau / 1e6, p.rate, p.sigma]))?;
    }
    finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::HeatingModel;
    use crate::trapmodel::{PhysicalConstants, SegmentBasis};

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.0, -1.89, 1e-9, 2.612e6, 1.0 / 3.0, -6.345e-21, 1e300] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn waveform_csv_round_trip() {
        let samples: Vec<VoltageSet> = (0..5)
            .map(|i| VoltageSet::new(-7.0 + i as f64, 0.1 * i as f64, 9.0).with_tilt(0.01))
            .collect();
        let w = Waveform::from_samples(0.4e-6, &samples).unwrap();
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &w).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,U_C_V,U_S_V,U_O_V,dU_O_V\n"));
        let back = read_waveform_csv(buf.as_slice()).unwrap();
        assert_eq!(back.u_c, w.u_c);
        assert_eq!(back.du_o, w.du_o);
        assert!((back.sample_period - w.sample_period).abs() < 1e-20);
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let data = RabiDataset::new(vec![
            RabiRecord {
                dn: -1,
                t: 5e-6,
                successes: 20,
                shots: 200,
            },
            RabiRecord {
                dn: 1,
                t: 10e-6,
                successes: 130,
                shots: 200,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &data).unwrap();
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), 2);
        assert!((back.records[1].t - 10e-6).abs() < 1e-18);
        let bad = "dn,t_us,successes,shots\n0,1,5,10\n1,x,5,10\n";
        match read_dataset_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_tables_round_trip() {
        let basis = SegmentBasis::reference();
        let c = PhysicalConstants::calcium40();
        let scans = vec![
            FrequencyScan::synthetic(
                &basis,
                Segment::Center,
                &[-7.0, -6.0, -5.0],
                VoltageSet::default(),
                2e3,
                &c,
            )
            .unwrap(),
            FrequencyScan::synthetic(
                &basis,
                Segment::Split,
                &[-2.0, -1.0],
                VoltageSet::new(-7.0, 0.0, 0.0),
                2e3,
                &c,
            )
            .unwrap(),
        ];
        let mut buf = Vec::new();
        write_frequency_csv(&mut buf, &scans).unwrap();
        let back = read_frequency_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&scans) {
            assert_eq!(a.segment, b.segment);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p.omega - q.omega).abs() < 1e-9 * q.omega);
            }
        }
        let model = HeatingModel::reference();
        let points: Vec<HeatingPoint> = [0.2, 1.0, 2.0]
            .iter()
            .map(|&f| {
                let omega = 2.0 * std::f64::consts::PI * f * 1e6;
                HeatingPoint {
                    omega,
                    rate: model.rate_per_ms(omega),
                    sigma: 0.0,
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_heating_csv(&mut buf, &points).unwrap();
        let back = read_heating_csv(buf.as_slice()).unwrap();
        assert!((back[2].omega - points[2].omega).abs() < 1e-6);
    }
}
