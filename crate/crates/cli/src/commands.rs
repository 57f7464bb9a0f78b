use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ionsep::calibrate::{fit_alpha, fit_beta, fit_heating_power_law};
use ionsep::config::{parse_quantity, ProjectConfig};
use ionsep::drift::{
    fit_charging, simulate_charging, simulate_servo, ChargingTrace, LaserSchedule,
};
use ionsep::dynamics::{scan, separation_window, simulate_design, ScanAxis};
use ionsep::estimate::{run_mcmc, synthesize_dataset, RabiParams};
use ionsep::io;
use ionsep::numeric::linspace;
use serde::Serialize;
use serde_json::json;

use crate::manifest::Recorder;
use crate::{Cli, Command, DriftMode, FitKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ionsep::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(ionsep::Error::Io(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Run<'a> {
    cli: &'a Cli,
    config: ProjectConfig,
    rec: Recorder,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.cli.out_dir.join(name);
        self.rec.output(&p);
        p
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(p)?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        io::save_json(&p, value)?;
        Ok(())
    }

    fn open(&mut self, path: &Path) -> Result<BufReader<File>> {
        self.rec.input(path);
        let f = File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Ok(BufReader::new(f))
    }
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Design { .. } => "design",
        Command::Scan { .. } => "scan",
        Command::Simulate { .. } => "simulate",
        Command::Estimate { .. } => "estimate",
        Command::Fit { .. } => "fit",
        Command::Drift { .. } => "drift",
        Command::Demo => "demo",
    }
}

fn load_config(cli: &Cli) -> Result<ProjectConfig> {
    let mut config = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None => ProjectConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{item}` is not KEY=VALUE")))?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| CliError::Usage(format!("--set {item}: {e}")))?;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = load_config(cli)?;
    let mut rec = Recorder::new(
        subcommand_name(&cli.command),
        &config.to_text(),
        cli.seed,
        &cli.overrides,
    );
    if let Some(path) = &cli.config {
        rec.input(path);
    }
    fs::create_dir_all(&cli.out_dir)?;
    let mut run = Run { cli, config, rec };
    match &cli.command {
        Command::Design { preview_every } => design(&mut run, *preview_every)?,
        Command::Scan {
            axis,
            from,
            to,
            points,
            values,
            fit_from,
            fit_to,
        } => scan_cmd(
            &mut run,
            axis,
            from.as_deref(),
            to.as_deref(),
            *points,
            values.as_deref(),
            (fit_from.as_deref(), fit_to.as_deref()),
        )?,
        Command::Simulate { trajectory } => simulate(&mut run, *trajectory)?,
        Command::Estimate { data } => estimate(&mut run, data)?,
        Command::Fit {
            kind,
            data,
            on_minutes,
            sigma,
            update_config,
        } => fit(
            &mut run,
            *kind,
            data,
            *on_minutes,
            sigma,
            update_config.as_deref(),
        )?,
        Command::Drift {
            mode,
            on_minutes,
            minutes,
            from,
            to,
            points,
            resolution,
        } => drift(
            &mut run,
            *mode,
            *on_minutes,
            *minutes,
            (from, to, *points),
            resolution,
        )?,
        Command::Demo => demo(&mut run)?,
    }
    let manifest_path = cli.out_dir.join("manifest.json");
    let manifest = run.rec.finish();
    io::save_json(&manifest_path, &manifest)?;
    Ok(())
}

fn design(run: &mut Run, preview_every: usize) -> Result<()> {
    if preview_every == 0 {
        return Err(CliError::Usage("--preview-every must be at least 1".into()));
    }
    let inputs = run.config.design_inputs()?;
    let w = inputs.waveform()?;
    io::write_waveform_csv(run.create("waveform.csv")?, &w)?;
    let sidecar =
        io::WaveformSidecar::describe(&w, Some(inputs.ramp), Some(inputs.mesh.anchors().to_vec()));
    run.json("waveform.json", &sidecar)?;
    let cv = inputs.electrode_voltages(&w)?;
    io::write_voltage_csv(run.create("filtered.csv")?, &cv, preview_every)?;
    let cp = w.annotations.cp_index.map(|i| (i, w.sample(i)));
    println!(
        "{} samples at {} S/s over {} s",
        w.len(),
        io::format_float(w.sample_rate()),
        io::format_float(w.duration())
    );
    if let Some((i, v)) = cp {
        println!(
            "critical point at sample {i}: U_C {} V, U_S {} V, U_O {} V",
            io::format_float(v.u_c),
            io::format_float(v.u_s),
            io::format_float(v.u_o)
        );
    }
    Ok(())
}

fn grid_from(
    axis: ScanAxis,
    from: Option<&str>,
    to: Option<&str>,
    points: usize,
    values: Option<&[String]>,
) -> Result<Vec<f64>> {
    let unit = axis.unit();
    if let Some(values) = values {
        return values
            .iter()
            .filter(|v| !v.trim().is_empty())
            .map(|v| parse_quantity(v, unit).map_err(CliError::from))
            .collect();
    }
    match (from, to) {
        (Some(a), Some(b)) => Ok(linspace(
            parse_quantity(a, unit)?,
            parse_quantity(b, unit)?,
            points,
        )),
        _ => Err(CliError::Usage(
            "scan needs --from and --to, or --values".into(),
        )),
    }
}

fn scan_cmd(
    run: &mut Run,
    axis: &str,
    from: Option<&str>,
    to: Option<&str>,
    points: usize,
    values: Option<&[String]>,
    fit_bounds: (Option<&str>, Option<&str>),
) -> Result<()> {
    let axis = ScanAxis::parse(axis).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scan axis `{axis}` (expected T, dU_O or dU_C_cp)"
        ))
    })?;
    let grid = grid_from(axis, from, to, points, values)?;
    let fit_range = match (axis, fit_bounds) {
        (ScanAxis::Duration, (a, b)) => {
            let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = a.map(|a| parse_quantity(a, "s")).transpose()?.unwrap_or(lo);
            let hi = b.map(|b| parse_quantity(b, "s")).transpose()?.unwrap_or(hi);
            Some((lo, hi))
        }
        _ => None,
    };
    let inputs = run.config.design_inputs()?;
    let result = scan(axis, &grid, &inputs, &run.config.sim, fit_range)?;
    io::write_scan_csv(run.create("scan.csv")?, &result)?;
    let failed = result.points.iter().filter(|p| p.error.is_some()).count();
    let separated = result.points.iter().filter(|p| p.is_separated()).count();
    println!(
        "{} points: {separated} separated, {failed} failed",
        result.points.len()
    );
    if axis == ScanAxis::Duration {
        run.json("scan_fit.json", &result.fit)?;
        match &result.fit {
            Some(f) => println!(
                "n_coh = {} exp(-T / {} s), R^2 {}",
                io::format_float(f.amplitude),
                io::format_float(f.tau),
                io::format_float(f.r_squared)
            ),
            None => eprintln!("warning: no exponential fit over the selected range"),
        }
    }
    Ok(())
}

fn simulate(run: &mut Run, trajectory: bool) -> Result<()> {
    let inputs = run.config.design_inputs()?;
    let result = simulate_design(&inputs, &run.config.sim)?;
    run.json(
        "outcome.json",
        &json!({
            "outcome": result.outcome,
            "budget": result.budget,
            "integrator": run.config.sim.integrator.label(),
            "steps": result.trajectory.steps,
        }),
    )?;
    if trajectory {
        io::write_trajectory_csv(run.create("trajectory.csv")?, &result.trajectory)?;
    }
    let b = &result.budget;
    println!(
        "{}: n_coh {} / {}, thermal {}, total {} / {}",
        result.outcome.classification.label(),
        io::format_float(result.outcome.n_coh[0]),
        io::format_float(result.outcome.n_coh[1]),
        io::format_float(b.n_thermal),
        io::format_float(b.n_total[0]),
        io::format_float(b.n_total[1])
    );
    Ok(())
}

fn estimate(run: &mut Run, data: &Path) -> Result<()> {
    let reader = run.open(data)?;
    let dataset = io::read_dataset_csv(reader)?;
    let priors = run.config.priors()?;
    let mcmc = run.config.mcmc(run.cli.seed);
    let posterior = run_mcmc(&dataset, &priors, &mcmc, run.config.estimator.eta)?;
    run.json("posterior.json", &posterior)?;
    for w in &posterior.warnings {
        eprintln!("warning: {w}");
    }
    for name in ["n_th", "n_coh", "total"] {
        let s = posterior.summary(name).expect("known parameter");
        println!(
            "{name}: {} +/- {} [{}, {}]",
            io::format_float(s.mean),
            io::format_float(s.sd),
            io::format_float(s.lower),
            io::format_float(s.upper)
        );
    }
    Ok(())
}

fn fit(
    run: &mut Run,
    kind: FitKind,
    data: &Path,
    on_minutes: Option<f64>,
    sigma: &str,
    update_config: Option<&Path>,
) -> Result<()> {
    let reader = run.open(data)?;
    let c = run.config.constants;
    match kind {
        FitKind::Alpha => {
            let scans = io::read_frequency_csv(reader)?;
            let fit = fit_alpha(&scans, &c)?;
            fit.apply(&mut run.config.basis);
            run.json("fit_alpha.json", &fit)?;
            print_fit(&fit.fit.names, &fit.fit.values, &fit.fit.sigmas);
        }
        FitKind::Beta => {
            let scan = io::read_distance_csv(reader)?;
            let fit = fit_beta(&scan, &run.config.basis, &c)?;
            fit.apply(&mut run.config.basis);
            run.json("fit_beta.json", &fit)?;
            print_fit(&fit.fit.names, &fit.fit.values, &fit.fit.sigmas);
        }
        FitKind::Heating => {
            let points = io::read_heating_csv(reader)?;
            let model = fit_heating_power_law(&points)?;
            run.config.heating = model;
            run.json("fit_heating.json", &model)?;
            println!(
                "rate = {} (omega / 2pi MHz)^-{} per ms",
                io::format_float(model.prefactor),
                io::format_float(model.exponent)
            );
        }
        FitKind::Charging => {
            let on = on_minutes
                .ok_or_else(|| CliError::Usage("charging fits need --on-minutes".into()))?;
            let trace = io::read_charging_csv(reader, parse_quantity(sigma, "mV")?)?;
            let last = trace.times.last().copied().unwrap_or(0.0);
            let sched = if on >= last {
                LaserSchedule::always_on(on)?
            } else {
                LaserSchedule::on_then_off(on)?
            };
            let fit = fit_charging(&trace, &sched)?;
            run.config.drift.charging = fit.params;
            run.json("fit_charging.json", &fit)?;
            print_fit(&fit.fit.names, &fit.fit.values, &fit.fit.sigmas);
            println!("asymptote {} mV", io::format_float(fit.params.asymptote()));
        }
    }
    if let Some(path) = update_config {
        run.config.validate()?;
        fs::write(path, run.config.to_text())?;
        run.rec.output(path);
    }
    Ok(())
}

fn print_fit(names: &[String], values: &[f64], sigmas: &[f64]) {
    for ((n, v), s) in names.iter().zip(values).zip(sigmas) {
        println!(
            "{n} = {} +/- {}",
            io::format_float(*v),
            io::format_float(*s)
        );
    }
}

fn drift(
    run: &mut Run,
    mode: DriftMode,
    on_minutes: f64,
    minutes: f64,
    grid: (&str, &str, usize),
    resolution: &str,
) -> Result<()> {
    if !(minutes > 0.0) || !(on_minutes >= 0.0) {
        return Err(CliError::Usage(
            "--minutes must be positive and --on-minutes non-negative".into(),
        ));
    }
    let plant = run.config.drift.charging;
    let sched = if on_minutes >= minutes {
        LaserSchedule::always_on(minutes)?
    } else {
        LaserSchedule::on_then_off(on_minutes)?
    };
    match mode {
        DriftMode::Charging => {
            let times: Vec<f64> = (0..=minutes.floor() as usize).map(|i| i as f64).collect();
            let values = simulate_charging(&plant, &sched, 0.0, &times)?;
            let trace = ChargingTrace::new(times, values, run.config.drift.tolerance)?;
            io::write_charging_csv(run.create("charging.csv")?, &trace)?;
            let peak = trace
                .values
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            run.json(
                "charging.json",
                &json!({
                    "params": plant,
                    "asymptote_mV": plant.asymptote(),
                    "half_life_min": plant.half_life(),
                    "peak_mV": peak,
                }),
            )?;
            println!(
                "peak {} mV, asymptote {} mV, discharge half-life {} min",
                io::format_float(peak),
                io::format_float(plant.asymptote()),
                io::format_float(plant.half_life())
            );
        }
        DriftMode::Servo => {
            let servo = run.config.servo(run.cli.seed);
            let steps = (minutes * 60.0 / servo.period).round() as usize;
            let trace = simulate_servo(
                &plant,
                &sched,
                0.0,
                &servo,
                steps,
                run.config.drift.tolerance,
            )?;
            io::write_servo_csv(run.create("servo.csv")?, &trace)?;
            run.json(
                "servo.json",
                &json!({
                    "config": servo,
                    "pole_magnitude": servo.pole_magnitude(),
                    "settling_time_s": trace.settling_time(servo.period),
                    "steady_state_error_mV": trace.steady_state_error,
                }),
            )?;
            println!(
                "steady-state error {} mV, pole magnitude {}",
                io::format_float(trace.steady_state_error),
                io::format_float(servo.pole_magnitude())
            );
        }
        DriftMode::Window => {
            let (from, to, points) = grid;
            let grid = linspace(parse_quantity(from, "V")?, parse_quantity(to, "V")?, points);
            let inputs = run.config.design_inputs()?;
            let window = separation_window(
                &inputs,
                &run.config.sim,
                &grid,
                parse_quantity(resolution, "V")?,
            )?;
            run.json("window.json", &window)?;
            println!(
                "dU_O window [{}, {}] V, critical force {} N",
                io::format_float(window.lower),
                io::format_float(window.upper),
                io::format_float(window.critical_force)
            );
        }
    }
    Ok(())
}

fn demo(run: &mut Run) -> Result<()> {
    let inputs = run.config.design_inputs()?;
    let result = simulate_design(&inputs, &run.config.sim)?;
    io::write_waveform_csv(run.create("demo_waveform.csv")?, &result.waveform)?;
    println!(
        "design: {} samples over {} s",
        result.waveform.len(),
        io::format_float(result.waveform.duration())
    );
    println!(
        "separation: {}, n_coh {} / {}, thermal {}",
        result.outcome.classification.label(),
        io::format_float(result.outcome.n_coh[0]),
        io::format_float(result.outcome.n_coh[1]),
        io::format_float(result.budget.n_thermal)
    );

    let eta = run.config.estimator.eta;
    let omega = run.config.estimator.omega;
    let times: Vec<f64> = (1..=20).map(|i| i as f64 * 5e-6).collect();
    let truth = RabiParams::new(result.budget.n_thermal, result.outcome.n_coh[0], omega);
    let data = synthesize_dataset(&truth, eta, &[-1, 0, 1], &times, 200, run.cli.seed)?;
    io::write_dataset_csv(run.create("demo_rabi.csv")?, &data)?;
    let mut mcmc = run.config.mcmc(run.cli.seed);
    mcmc.length = mcmc.length.min(10_000);
    let posterior = run_mcmc(&data, &run.config.priors()?, &mcmc, eta)?;
    println!(
        "estimate for ion 1: total {} +/- {} (truth {})",
        io::format_float(posterior.total.mean),
        io::format_float(posterior.total.sd),
        io::format_float(truth.n_th + truth.n_coh)
    );

    let sched = LaserSchedule::on_then_off(60.0)?;
    let plant = run.config.drift.charging;
    let times: Vec<f64> = (0..=150).map(|i| i as f64).collect();
    let values = simulate_charging(&plant, &sched, 0.0, &times)?;
    let trace = ChargingTrace::new(times, values, run.config.drift.tolerance)?;
    let fit = fit_charging(&trace, &sched)?;
    println!(
        "charging: K' {} mV/min, delta {} 1/min, kappa {} 1/min",
        io::format_float(fit.params.k_prime),
        io::format_float(fit.params.delta),
        io::format_float(fit.params.kappa_dis)
    );
    run.json(
        "demo.json",
        &json!({
            "outcome": result.outcome,
            "budget": result.budget,
            "posterior_total": posterior.total,
            "charging": fit.params,
        }),
    )?;
    Ok(())
}
