use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ionsep::trapmodel::SegmentBasis;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn ionsep(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionsep"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ionsep(out, args);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn default_design_has_200_samples() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["design"]);
    assert_eq!(csv_rows(&dir.path().join("waveform.csv")), 200);
    assert!(dir.path().join("filtered.csv").exists());
    let sidecar = json(&dir.path().join("waveform.json"));
    assert_eq!(sidecar["samples"], 200);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["subcommand"], "design");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn doubled_duration_doubles_the_samples() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["design", "--set", "trajectory.duration=160us"],
    );
    assert_eq!(csv_rows(&dir.path().join("waveform.csv")), 400);
}

#[test]
fn narrow_output_range_saturates() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionsep(dir.path(), &["design", "--set", "awg.range=5V"]);
    assert_eq!(code(&o), 3);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("first indices"), "{stderr}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &[
            "scan", "--axis", "T", "--from", "40us", "--to", "120us", "--points", "0",
        ][..],
        &["scan", "--axis", "sideways", "--from", "0", "--to", "1"],
        &["design", "--set", "no.such.key=1 V"],
        &["frobnicate"],
    ] {
        assert_eq!(code(&ionsep(dir.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn duration_scan_decreases_and_is_fitted() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "scan", "--axis", "T", "--from", "40us", "--to", "120us", "--points", "5",
        ],
    );
    let text = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("T_s,classification,n_coh_1"));
    let n: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(n.len(), 5);
    assert!(n.windows(2).all(|w| w[1] < w[0]), "{n:?}");
    let fit = json(&dir.path().join("scan_fit.json"));
    assert!(fit["tau"].as_f64().unwrap() > 0.0);
}

#[test]
fn tilt_scan_shows_a_window() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "scan", "--axis", "dU_O", "--from", "-20mV", "--to", "20mV", "--points", "9",
        ],
    );
    let text = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let classes: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(classes.len(), 9);
    assert_eq!(classes[4], "separated");
    assert_ne!(classes[0], "separated");
    assert_ne!(classes[8], "separated");
    assert_ne!(classes[0], classes[8]);
}

#[test]
fn malformed_dataset_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "dn,t_us,successes,shots\n0,5,10,200\n1,ten,10,200\n").unwrap();
    let o = ionsep(dir.path(), &["estimate", "--data", data.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionsep(
        dir.path(),
        &["fit", "heating", "--data", "/nonexistent/heating.csv"],
    );
    assert_eq!(code(&o), 4);
}

#[test]
fn vacuum_fixture_has_tiny_occupations() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("rabi_vacuum.csv");
    ok(dir.path(), &["estimate", "--data", data.to_str().unwrap()]);
    let post = json(&dir.path().join("posterior.json"));
    assert!(post["n_th"]["upper"].as_f64().unwrap() < 0.1);
    assert!(post["n_coh"]["upper"].as_f64().unwrap() < 0.1);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn thermal_fixture_recovers_the_thermal_occupation() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("rabi_thermal.csv");
    ok(dir.path(), &["estimate", "--data", data.to_str().unwrap()]);
    let post = json(&dir.path().join("posterior.json"));
    let mean = post["n_th"]["mean"].as_f64().unwrap();
    let sd = post["n_th"]["sd"].as_f64().unwrap();
    assert!((mean - 20.7).abs() < 2.0 * sd, "{mean} +/- {sd}");
    assert!(sd / mean < 0.2);
}

#[test]
fn heating_fixture_gives_the_reference_law() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("heating.csv");
    ok(
        dir.path(),
        &["fit", "heating", "--data", data.to_str().unwrap()],
    );
    let fit = json(&dir.path().join("fit_heating.json"));
    assert!((fit["prefactor"].as_f64().unwrap() - 6.3).abs() < 1e-6);
    assert!((fit["exponent"].as_f64().unwrap() - 1.8).abs() < 1e-6);
}

#[test]
fn alpha_and_beta_fixtures_round_trip_the_basis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fitted.cfg");
    let alpha = fixture("alpha_scans.csv");
    ok(
        dir.path(),
        &[
            "fit",
            "alpha",
            "--data",
            alpha.to_str().unwrap(),
            "--update-config",
            cfg.to_str().unwrap(),
        ],
    );
    let fit = json(&dir.path().join("fit_alpha.json"));
    let basis = SegmentBasis::reference();
    let reference = [
        ("alpha_c", basis.alpha_c),
        ("alpha_s", basis.alpha_s),
        ("alpha_o", basis.alpha_o),
        ("alpha_prime", basis.alpha_prime),
    ];
    let names: Vec<&str> = fit["fit"]["names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for (name, truth) in reference {
        let i = names.iter().position(|n| *n == name).unwrap();
        let v = fit["fit"]["values"][i].as_f64().unwrap();
        let s = fit["fit"]["sigmas"][i].as_f64().unwrap();
        assert!((v - truth).abs() < 3.0 * s, "{name}: {v} +/- {s}");
    }
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("basis.sigma.alpha_c"));

    let beta = fixture("distance_scan.csv");
    ok(
        dir.path(),
        &["fit", "beta", "--data", beta.to_str().unwrap()],
    );
    let fit = json(&dir.path().join("fit_beta.json"));
    for (name, truth) in [
        ("beta_c", basis.beta_c),
        ("beta_s", basis.beta_s),
        ("beta_prime", basis.beta_prime),
    ] {
        let v = fit[name].as_f64().unwrap();
        let i = fit["fit"]["names"]
            .as_array()
            .unwrap()
            .iter()
            .position(|n| n == name)
            .unwrap();
        let s = fit["fit"]["sigmas"][i].as_f64().unwrap();
        assert!((v - truth).abs() < 3.0 * s, "{name}: {v} +/- {s}");
    }
}

#[test]
fn charging_needs_a_dark_period() {
    let dir = tempfile::tempdir().unwrap();
    let on_only = fixture("charging_on_only.csv");
    let o = ionsep(
        dir.path(),
        &[
            "fit",
            "charging",
            "--data",
            on_only.to_str().unwrap(),
            "--on-minutes",
            "90",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("identifiable"));

    let full = fixture("charging.csv");
    ok(
        dir.path(),
        &[
            "fit",
            "charging",
            "--data",
            full.to_str().unwrap(),
            "--on-minutes",
            "60",
        ],
    );
    let fit = json(&dir.path().join("fit_charging.json"));
    let k = fit["params"]["k_prime"].as_f64().unwrap();
    assert!((k / 3.02 - 1.0).abs() < 0.05, "{k}");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let data = fixture("rabi_vacuum.csv");
    let runs: [&[&str]; 3] = [
        &["design"],
        &[
            "estimate",
            "--seed",
            "9",
            "--set",
            "estimate.chain_length=4000",
            "--data",
            data.to_str().unwrap(),
        ],
        &["drift", "servo", "--minutes", "5"],
    ];
    for args in runs {
        ok(a.path(), args);
        ok(b.path(), args);
        for entry in fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            if name == "manifest.json" {
                continue;
            }
            let x = fs::read(a.path().join(&name)).unwrap();
            let y = fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{name:?} differs for {args:?}");
        }
        let (ma, mb) = (
            json(&a.path().join("manifest.json")),
            json(&b.path().join("manifest.json")),
        );
        assert_eq!(ma["config_hash"], mb["config_hash"]);
    }
}

#[test]
fn config_file_and_overrides_hash_alike() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("slow.cfg");
    fs::write(
        &cfg,
        "# slow ramp\ntrajectory.duration = 160 us\nramp.du_o = 1 mV\n",
    )
    .unwrap();
    let from_file = dir.path().join("file");
    let from_set = dir.path().join("set");
    ok(&from_file, &["design", "--config", cfg.to_str().unwrap()]);
    ok(
        &from_set,
        &[
            "design",
            "--set",
            "trajectory.duration=160 us",
            "--set",
            "ramp.du_o=0.001V",
        ],
    );
    let (a, b) = (
        json(&from_file.join("manifest.json")),
        json(&from_set.join("manifest.json")),
    );
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(
        fs::read(from_file.join("waveform.csv")).unwrap(),
        fs::read(from_set.join("waveform.csv")).unwrap()
    );
}

#[test]
fn window_and_demo_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["drift", "window"]);
    let w = json(&dir.path().join("window.json"));
    assert!(w["lower"].as_f64().unwrap() < 0.0 && w["upper"].as_f64().unwrap() > 0.0);
    let out = ok(dir.path(), &["demo", "--set", "estimate.chain_length=3000"]);
    assert!(out.contains("separation: separated"), "{out}");
}
