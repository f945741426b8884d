use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use conc_nls::cli::{self, RunSummary, ScanConfig, SimulateConfig};
use conc_nls::spectral::PsiConvention;

#[derive(Parser, Debug)]
#[command(name = "conc-nls", version, about = "Soliton, spectrum, normal-form and dispersive computations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum PsiArg {
    Literal,
    Bc,
}

impl From<PsiArg> for PsiConvention {
    fn from(a: PsiArg) -> Self {
        match a {
            PsiArg::Literal => PsiConvention::Literal,
            PsiArg::Bc => PsiConvention::BoundaryCondition,
        }
    }
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Coefficient table over a sigma grid inside the band window.
    Scan {
        #[arg(long, default_value_t = 0.712)]
        sigma_min: f64,
        #[arg(long, default_value_t = 0.96)]
        sigma_max: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, value_enum, default_value_t = PsiArg::Bc)]
        psi_convention: PsiArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record failing rows as NaN with a reason instead of aborting.
        #[arg(long)]
        keep_going: bool,
    },
    /// Largest sigma below which Re Z'_21 stays negative.
    SigmaStar {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
    },
    /// Discrete spectrum of the linearization.
    Spectrum {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
    },
    /// Integrate the reduced modulation system and fit its asymptotics.
    Simulate {
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega0: f64,
        #[arg(long, default_value_t = 0.1)]
        z0_re: f64,
        #[arg(long, default_value_t = 0.0)]
        z0_im: f64,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        /// Defaults to 300 / (2 Im K y0).
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long, default_value_t = 1e-9)]
        rtol: f64,
        #[arg(long, default_value_t = 0.01)]
        nu: f64,
        /// Continue when |z0| exceeds eps^(1/2).
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized weighted sup norms of the linear flow of the point-charge datum.
    Dispersive {
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Comma-separated evaluation times.
        #[arg(long, value_delimiter = ',', default_value = "1,3,10,30,100", value_parser = cli::parse_positive)]
        times: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spatial decay of the continuous-spectrum kernel.
    KernelCheck {
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decay of the scattering remainder pieces.
    Scattering {
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 1e3)]
        t_max: f64,
        /// Dissipation rate eps K_inf of the charge envelope.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Fermi golden rule quantity.
    Fgr {
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
    },
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

struct Outcome {
    outputs: Value,
    out: Option<PathBuf>,
    /// A table went to stdout, so the summary goes to stderr.
    table_on_stdout: bool,
}

impl Outcome {
    fn json(outputs: Value) -> Self {
        Self {
            outputs,
            out: None,
            table_on_stdout: false,
        }
    }

    fn table(outputs: Value, out: &Option<PathBuf>) -> Self {
        Self {
            outputs,
            out: out.clone(),
            table_on_stdout: out.is_none(),
        }
    }
}

fn emit_table(out: &Option<PathBuf>, csv: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write(p, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cmd: &Command) -> anyhow::Result<Outcome> {
    let out = match cmd {
        Command::Scan {
            sigma_min,
            sigma_max,
            steps,
            omega,
            nu,
            psi_convention,
            out,
            keep_going,
        } => {
            let cfg = ScanConfig {
                sigma_min: *sigma_min,
                sigma_max: *sigma_max,
                steps: *steps,
                omega: *omega,
                nu: *nu,
                psi: (*psi_convention).into(),
                keep_going: *keep_going,
            };
            let records = cli::scan(&cfg)?;
            let csv = cli::scan_csv(&records);
            emit_table(out, &csv)?;
            let failed = records.iter().filter(|r| !r.reason.is_empty()).count();
            return Ok(Outcome::table(
                json!({ "rows": records.len(), "failed_rows": failed }),
                out,
            ));
        }
        Command::SigmaStar { tol, omega } => cli::sigma_star(*omega, *tol)?,
        Command::Spectrum { sigma, omega } => cli::spectrum(*sigma, *omega)?,
        Command::Fgr { sigma, omega, nu } => cli::fgr(*sigma, *omega, *nu)?,
        Command::Simulate {
            sigma,
            omega0,
            z0_re,
            z0_im,
            eps,
            t_max,
            rtol,
            nu,
            force,
            out,
        } => {
            let cfg = SimulateConfig {
                sigma: *sigma,
                omega0: *omega0,
                z0: Complex64::new(*z0_re, *z0_im),
                eps: *eps,
                t_max: *t_max,
                rtol: *rtol,
                nu: *nu,
                force: *force,
            };
            let sim = cli::simulate(&cfg)?;
            let csv = cli::trajectory_csv(&sim.trajectory);
            if let Some(p) = out {
                write(p, &csv)?;
            }
            let fit = sim.fit?;
            return Ok(Outcome {
                outputs: json!({
                    "t_max": sim.t_max,
                    "eps_used": sim.eps_used,
                    "y0": sim.trajectory.y0,
                    "stats": sim.trajectory.stats,
                    "fit": fit,
                }),
                out: out.clone(),
                table_on_stdout: false,
            });
        }
        Command::Dispersive {
            sigma,
            omega,
            nu,
            times,
            out,
        } => {
            let rows = cli::dispersive_table(*sigma, *omega, *nu, times)?;
            let lines: Vec<Vec<String>> = rows.iter().map(|r| r.row()).collect();
            let csv = cli::to_csv(&cli::DispersiveRow::HEADER, &lines);
            emit_table(out, &csv)?;
            return Ok(Outcome::table(cli::dispersive_summary(&rows), out));
        }
        Command::KernelCheck { sigma, omega, out } => {
            let (csv, fit) = cli::kernel_check(*sigma, *omega)?;
            emit_table(out, &csv)?;
            return Ok(Outcome::table(serde_json::to_value(fit)?, out));
        }
        Command::Scattering {
            sigma,
            omega,
            t_max,
            eps,
        } => serde_json::to_value(cli::scattering(*sigma, *omega, *t_max, *eps)?)?,
    };
    Ok(Outcome::json(out))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<conc_nls::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = std::env::var("CONC_NLS_THREADS").ok().and_then(|v| v.parse().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let started = Instant::now();
    let inputs = serde_json::to_value(&args.command).unwrap_or(Value::Null);
    let name = inputs["command"].as_str().unwrap_or("unknown").to_string();
    match run(&args.command) {
        Ok(o) => {
            let summary = RunSummary::new(&name, inputs, o.outputs, started);
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            if o.table_on_stdout {
                eprintln!("{text}");
            } else {
                println!("{text}");
            }
            if let Some(p) = o.out {
                if let Err(e) = write(&summary_path(&p), &text) {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(2);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
