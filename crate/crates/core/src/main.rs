//! Batch CLI for the transport-noise experiment suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use torus_transport::config::{ExperimentSection, FileConfig};
use torus_transport::dynamics::Runner;
use torus_transport::experiments::{self, CheckOutcome};
use torus_transport::report::{
    ensure_out_dir, trajectory_csv, CsvTable, ReportEnvelope, RunManifest,
};

const ENV_OUT_DIR: &str = "TORUS_TRANSPORT_OUT";

#[derive(Parser)]
#[command(
    name = "torus-transport",
    version,
    about = "Pseudo-spectral SPDE experiments with transport noise on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (TOML); a built-in default for the subcommand is used when
    /// omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override (also: the TORUS_TRANSPORT_OUT variable).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Ensemble size override.
    #[arg(long, global = true)]
    paths: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Energy dissipation of the passive scalar over a diffusivity list.
    AnomalousScalar,
    /// Enstrophy dissipation of the 2D vorticity equation.
    AnomalousVorticity,
    /// Energy dissipation of the 2D velocity equation.
    AnomalousVelocity,
    /// Sup-distance to the deterministic limit across noise shells.
    ScalingLimit,
    /// Dissipation gap against the enhanced limit flow.
    GradientGap,
    /// Velocity-corrector residuals and the effective-viscosity cross-check.
    QthetaLimit,
    /// Uniform-in-shell Sobolev statistic and coefficient-field growth.
    UniformSobolev,
    /// Fast algebraic invariant suite.
    Selftest,
}

impl Command {
    fn kind(self) -> &'static str {
        match self {
            Command::AnomalousScalar => "anomalous-scalar",
            Command::AnomalousVorticity => "anomalous-vorticity",
            Command::AnomalousVelocity => "anomalous-velocity",
            Command::ScalingLimit => "scaling-limit",
            Command::GradientGap => "gradient-gap",
            Command::QthetaLimit => "qtheta-limit",
            Command::UniformSobolev => "uniform-sobolev",
            Command::Selftest => "selftest",
        }
    }

    fn default_config(self) -> &'static str {
        match self {
            Command::AnomalousScalar => DEFAULT_ANOMALOUS_SCALAR,
            Command::AnomalousVorticity => DEFAULT_ANOMALOUS_VORTICITY,
            Command::AnomalousVelocity => DEFAULT_ANOMALOUS_VELOCITY,
            Command::ScalingLimit => DEFAULT_SCALING_LIMIT,
            Command::GradientGap => DEFAULT_GRADIENT_GAP,
            Command::QthetaLimit => DEFAULT_QTHETA_LIMIT,
            Command::UniformSobolev => DEFAULT_UNIFORM_SOBOLEV,
            Command::Selftest => DEFAULT_SELFTEST,
        }
    }
}

const DEFAULT_ANOMALOUS_SCALAR: &str = r#"
[grid]
size = 128
[physics]
equation = "scalar"
gamma = 1e-3
mu = 0.5
dt = 2e-3
[ensemble]
paths = 64
[experiment]
kind = "anomalous-scalar"
coefficients = [1e-2, 1e-3]
"#;

const DEFAULT_ANOMALOUS_VORTICITY: &str = r#"
[grid]
size = 128
[physics]
equation = "vorticity"
nu = 1e-3
mu = 0.5
dt = 2e-3
[ensemble]
paths = 64
[experiment]
kind = "anomalous-vorticity"
coefficients = [1e-2, 1e-3]
"#;

const DEFAULT_ANOMALOUS_VELOCITY: &str = r#"
[grid]
size = 128
[physics]
equation = "velocity"
nu = 1e-2
mu = 0.5
dt = 2e-3
[ensemble]
paths = 32
[experiment]
kind = "anomalous-velocity"
coefficients = [1e-2]
"#;

const DEFAULT_SCALING_LIMIT: &str = r#"
[grid]
size = 128
[physics]
equation = "scalar"
gamma = 0.05
mu = 0.5
dt = 2.5e-4
[ensemble]
paths = 32
[experiment]
kind = "scaling-limit"
n_list = [1, 4, 16]
"#;

const DEFAULT_GRADIENT_GAP: &str = r#"
[grid]
size = 128
[physics]
equation = "scalar"
gamma = 0.05
mu = 0.5
dt = 1e-3
[ensemble]
paths = 32
[experiment]
kind = "gradient-gap"
n_list = [1, 16]
"#;

const DEFAULT_QTHETA_LIMIT: &str = r#"
[grid]
size = 128
[physics]
equation = "velocity"
nu = 0.01
mu = 0.5
dt = 1e-3
[ensemble]
paths = 1
[experiment]
kind = "qtheta-limit"
"#;

const DEFAULT_UNIFORM_SOBOLEV: &str = r#"
[grid]
size = 128
[physics]
equation = "scalar"
gamma = 0.05
mu = 0.5
dt = 1e-3
[ensemble]
paths = 16
[experiment]
kind = "uniform-sobolev"
n_list = [2, 4, 8, 16]
"#;

const DEFAULT_SELFTEST: &str = r#"
[grid]
size = 64
[physics]
equation = "scalar"
gamma = 0.05
mu = 0.5
[experiment]
kind = "selftest"
"#;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let mut file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::parse(cli.command.default_config())?,
    };
    if file.experiment.kind() != cli.command.kind() {
        return Err(format!(
            "config is for `{}` but the subcommand is `{}`",
            file.experiment.kind(),
            cli.command.kind()
        )
        .into());
    }
    if let Some(seed) = cli.seed {
        file.ensemble.seed = seed;
    }
    if let Some(paths) = cli.paths {
        file.ensemble.paths = paths;
    }
    if let Some(out) = &cli.out {
        file.output.dir = out.display().to_string();
    } else if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
        file.output.dir = dir;
    }
    let workers = cli.workers.unwrap_or(file.ensemble.workers);

    let (cfg, echo, warnings) = file.to_sim_config()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let out_dir = PathBuf::from(&echo.output.dir);
    ensure_out_dir(&out_dir)?;
    let out_dir_body = out_dir.clone();
    let mut manifest = RunManifest::new(
        cli.command.kind(),
        cfg.seed,
        cli.config.as_deref(),
        echo.clone(),
        &out_dir,
    );
    manifest.write(&out_dir)?;

    let decay = echo.noise.decay;
    let body = move || -> Result<(bool, Vec<String>), Box<dyn std::error::Error + Send + Sync>> {
        let out_dir = out_dir_body;
        let mut artifacts: Vec<String> = Vec::new();
        let pass = match &echo.experiment {
            ExperimentSection::AnomalousScalar { .. }
            | ExperimentSection::AnomalousVorticity { .. }
            | ExperimentSection::AnomalousVelocity { .. } => {
                let spec = echo.experiment.anomalous_spec(decay).unwrap();
                let report = match echo.experiment {
                    ExperimentSection::AnomalousScalar { .. } => {
                        experiments::exp_anomalous_scalar(&cfg, &spec)?
                    }
                    ExperimentSection::AnomalousVorticity { .. } => {
                        experiments::exp_anomalous_vorticity(&cfg, &spec)?
                    }
                    _ => experiments::exp_anomalous_velocity(&cfg, &spec)?,
                };
                let pass = report.pass;
                let rows: Vec<Vec<f64>> = report
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.coefficient,
                            r.shell as f64,
                            r.theta_linf,
                            r.dissipation_mean,
                            r.dissipation_ci_half,
                            r.quadrature_mean,
                            r.quadrature_ci_half,
                            r.paper_bound,
                            r.sharp_bound,
                            r.prediction,
                            r.eta_measured,
                        ]
                    })
                    .collect();
                for row in &report.rows {
                    println!(
                        "coefficient {:>9.3e}  shell {:>3}  dissipation {:.5} +- {:.5}  \
                         bound {:.5}  prediction {:.5}  [{}]",
                        row.coefficient,
                        row.shell,
                        row.dissipation_mean,
                        row.dissipation_ci_half,
                        row.paper_bound,
                        row.prediction,
                        if row.exceeds_paper_bound && row.within_prediction {
                            "pass"
                        } else {
                            "FAIL"
                        }
                    );
                }
                CsvTable {
                    name: "rows.csv".into(),
                    header: "coefficient,shell,theta_linf,dissipation_mean,dissipation_ci_half,\
                             quadrature_mean,quadrature_ci_half,paper_bound,sharp_bound,\
                             prediction,eta_measured"
                        .into(),
                    rows,
                }
                .write(&out_dir)?;
                artifacts.push("rows.csv".into());

                // time-series artifacts for the first row: one sample path
                // and the deterministic limit trajectory
                let first = spec.coefficients[0];
                let row_cfg = experiments::anomalous_row_cfg(&cfg, &spec, first)?;
                let runner = Runner::new(row_cfg)?;
                write_traj(&out_dir, "trajectory_path0.csv", &runner.run_path(0)?)?;
                write_traj(&out_dir, "trajectory_limit.csv", &runner.run_deterministic()?)?;
                artifacts.push("trajectory_path0.csv".into());
                artifacts.push("trajectory_limit.csv".into());
                dump_theta(&out_dir, runner.cfg(), &mut artifacts)?;

                let envelope = ReportEnvelope::new(
                    echo.experiment.kind(),
                    cfg.seed,
                    warnings.clone(),
                    echo.clone(),
                    report,
                );
                envelope.write(&out_dir, "report.json")?;
                artifacts.push("report.json".into());
                pass
            }
            ExperimentSection::ScalingLimit { .. } | ExperimentSection::GradientGap { .. } => {
                let spec = echo.experiment.scaling_spec(decay).unwrap();
                let is_gap = matches!(echo.experiment, ExperimentSection::GradientGap { .. });
                let table = if is_gap {
                    experiments::exp_gradient_gap(&cfg, &spec)?
                } else {
                    experiments::exp_scaling_limit(&cfg, &spec, None)?
                };
                for row in &table.rows {
                    println!(
                        "shell {:>3}  median sup-distance {:.5}  gap {:.5} +- {:.5}  ratio {:.2}",
                        row.shell,
                        row.sup_distance.median,
                        row.gradient_gap_mean,
                        row.gradient_gap_ci_half,
                        row.gradient_ratio_to_limit_molecular
                    );
                }
                let pass = if is_gap {
                    let last = table.rows.last().unwrap();
                    last.gradient_gap_mean <= 0.1 * table.limit_dissipation
                        && last.gradient_ratio_to_limit_molecular >= 3.0
                } else {
                    table.medians_decreasing()
                };
                let rows: Vec<Vec<f64>> = table
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.shell as f64,
                            r.theta_linf,
                            r.sup_distance.median,
                            r.sup_distance.mean,
                            r.sup_distance.q25,
                            r.sup_distance.q75,
                            r.sup_distance.max,
                            r.gradient_gap_mean,
                            r.gradient_gap_ci_half,
                            r.gradient_ratio_to_limit_molecular,
                        ]
                    })
                    .collect();
                CsvTable {
                    name: "table.csv".into(),
                    header: "shell,theta_linf,sup_median,sup_mean,sup_q25,sup_q75,sup_max,\
                             gap_mean,gap_ci_half,ratio_to_limit_molecular"
                        .into(),
                    rows,
                }
                .write(&out_dir)?;
                artifacts.push("table.csv".into());
                ReportEnvelope::new(
                    echo.experiment.kind(),
                    cfg.seed,
                    warnings.clone(),
                    echo.clone(),
                    table,
                )
                .write(&out_dir, "report.json")?;
                artifacts.push("report.json".into());
                pass
            }
            ExperimentSection::QthetaLimit {
                n_list, test_mode, ..
            } => {
                let phi_scalar = torus_transport::SpectralField::from_modes(
                    cfg.grid,
                    &[(
                        *test_mode,
                        num_complex::Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
                    )],
                )?;
                let phi = phi_scalar.biot_savart()?;
                let report = experiments::exp_qtheta_limit(
                    cfg.grid,
                    n_list,
                    decay_of(&echo.experiment),
                    &phi,
                    cfg.mu,
                    cfg.molecular,
                    cfg.dt,
                )?;
                for row in &report.rows {
                    println!(
                        "shell {:>3}  residual(s=-1) {:.4e}  residual(s=+1) {:.4e}",
                        row.shell, row.residual_minus, row.residual_plus
                    );
                }
                println!(
                    "winning sign {:?}, effective viscosity {:.5} vs predicted {:.5} ({})",
                    report.winning_sign,
                    report.effective_viscosity,
                    report.predicted_viscosity,
                    if report.consistent { "pass" } else { "FAIL" }
                );
                let pass = report.consistent;
                let rows: Vec<Vec<f64>> = report
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.shell as f64,
                            r.theta_linf,
                            r.residual_minus,
                            r.residual_plus,
                        ]
                    })
                    .collect();
                CsvTable {
                    name: "residuals.csv".into(),
                    header: "shell,theta_linf,residual_minus,residual_plus".into(),
                    rows,
                }
                .write(&out_dir)?;
                artifacts.push("residuals.csv".into());
                ReportEnvelope::new(
                    echo.experiment.kind(),
                    cfg.seed,
                    warnings.clone(),
                    echo.clone(),
                    report,
                )
                .write(&out_dir, "report.json")?;
                artifacts.push("report.json".into());
                pass
            }
            ExperimentSection::UniformSobolev {
                n_list,
                r0,
                coefficient_exponent,
            } => {
                let report = experiments::exp_uniform_sobolev(
                    &cfg,
                    n_list,
                    *r0,
                    *coefficient_exponent,
                    decay,
                )?;
                for row in &report.rows {
                    println!(
                        "shell {:>3}  E sup |x|^2_Hr0 = {:.5} +- {:.5}  coefficient-field norm {:.3}",
                        row.shell, row.sup_norm_mean, row.sup_norm_ci_half, row.coefficient_field_norm
                    );
                }
                let pass = report.sup_ratio <= 2.0 && report.coefficient_norm_increasing;
                println!(
                    "sup ratio over shells {:.3} (<= 2), coefficient norms increasing: {} [{}]",
                    report.sup_ratio,
                    report.coefficient_norm_increasing,
                    if pass { "pass" } else { "FAIL" }
                );
                let rows: Vec<Vec<f64>> = report
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.shell as f64,
                            r.theta_linf,
                            r.sup_norm_mean,
                            r.sup_norm_ci_half,
                            r.coefficient_field_norm,
                        ]
                    })
                    .collect();
                CsvTable {
                    name: "table.csv".into(),
                    header: "shell,theta_linf,sup_norm_mean,sup_norm_ci_half,coefficient_field_norm"
                        .into(),
                    rows,
                }
                .write(&out_dir)?;
                artifacts.push("table.csv".into());
                ReportEnvelope::new(
                    echo.experiment.kind(),
                    cfg.seed,
                    warnings.clone(),
                    echo.clone(),
                    report,
                )
                .write(&out_dir, "report.json")?;
                artifacts.push("report.json".into());
                pass
            }
            ExperimentSection::Selftest {} => {
                let checks = experiments::selftest();
                let pass = print_checks(&checks);
                ReportEnvelope::new(
                    "selftest",
                    cfg.seed,
                    warnings.clone(),
                    echo.clone(),
                    checks,
                )
                .write(&out_dir, "report.json")?;
                artifacts.push("report.json".into());
                pass
            }
        };
        Ok((pass, artifacts))
    };

    let (pass, artifacts) = if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()?
            .install(body)
            .map_err(|e| e as Box<dyn std::error::Error>)?
    } else {
        body().map_err(|e| e as Box<dyn std::error::Error>)?
    };

    for name in &artifacts {
        manifest.record_artifact(&out_dir, name)?;
    }
    manifest.finalize(&out_dir)?;
    println!(
        "{}: {}  (artifacts in {})",
        cli.command.kind(),
        if pass { "pass" } else { "quantitative failure" },
        out_dir.display()
    );
    Ok(pass)
}

fn decay_of(exp: &ExperimentSection) -> f64 {
    match exp {
        ExperimentSection::QthetaLimit { decay, .. } => *decay,
        _ => 1.0,
    }
}

fn write_traj(
    out_dir: &Path,
    name: &str,
    traj: &torus_transport::dynamics::Trajectory<f64>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    trajectory_csv(&mut buf, traj)?;
    std::fs::write(out_dir.join(name), buf)
}

fn dump_theta(
    out_dir: &Path,
    cfg: &torus_transport::dynamics::SimConfig<f64>,
    artifacts: &mut Vec<String>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    cfg.theta.csv(&mut buf)?;
    std::fs::write(out_dir.join("theta.csv"), buf)?;
    artifacts.push("theta.csv".into());
    Ok(())
}

fn print_checks(checks: &[CheckOutcome]) -> bool {
    let mut pass = true;
    for c in checks {
        println!(
            "{:<26} {}  {}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.detail
        );
        pass &= c.pass;
    }
    pass
}
