use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qsmooth_core::estimation::{estimate, solve_riccati, solve_true_covariance, Channels};
use qsmooth_core::io as files;
use qsmooth_core::sweep::{self, AngleGrid, Cell, Mode, MonteCarloSettings, SweepConfig};
use qsmooth_core::system_model::{build_model, efficiencies, SystemParams};
use qsmooth_core::trajectory::{simulate_true, SimSettings};

/// Offline filtering and smoothing of a continuously monitored squeezed
/// mode, with parameter sweeps over detection efficiency and homodyne angles.
#[derive(Debug, Parser)]
#[command(name = "qsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Metrics at a single parameter point, printed as JSON.
    Point {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep Alice's detection efficiency at fixed angles.
    SweepEta {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated η_A values.
        #[arg(long, value_delimiter = ',', default_values_t = [0.09, 0.43, 0.78])]
        etas: Vec<f64>,
        /// Sweep CSV; `_optimal.csv` and `.json` siblings are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid over (θ_A, θ_B) with optimal-θ_B curves.
    SweepAngles {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// True-state squeezing over (θ_A, θ_B).
    TrueSqueeze {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a measurement record for both detectors.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        /// Record length in seconds.
        #[arg(long, default_value_t = 50e-6)]
        duration: f64,
        /// Step in seconds; defaults to 1/200 of the fastest model rate.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, retrofilter and smooth a record file into trajectories.
    Estimate {
        #[command(flatten)]
        params: ParamArgs,
        /// Record CSV as written by `simulate`.
        #[arg(long)]
        record: PathBuf,
        /// Leave the x_T/p_T columns empty instead of reconstructing them
        /// from both records.
        #[arg(long)]
        no_true: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Paper,
}

/// Physical parameters: preset, then file, then individual flags.
#[derive(Debug, Args)]
struct ParamArgs {
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    /// `key = value` parameter file; angles in degrees.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    /// Beam-splitter transmittance T.
    #[arg(long, conflicts_with = "eta_a")]
    transmittance: Option<f64>,
    /// Target overall efficiency for Alice; sets T.
    #[arg(long)]
    eta_a: Option<f64>,
    #[arg(long)]
    loss_a: Option<f64>,
    #[arg(long)]
    loss_b: Option<f64>,
    #[arg(long)]
    escape_eff: Option<f64>,
    /// Alice's homodyne angle, degrees.
    #[arg(long)]
    theta_a: Option<f64>,
    /// Bob's homodyne angle, degrees.
    #[arg(long)]
    theta_b: Option<f64>,
    #[arg(long)]
    hbar: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<SystemParams> {
        let mut p = match &self.params {
            Some(path) => SystemParams::load(path)
                .with_context(|| format!("reading parameters from {}", path.display()))?,
            None => match self.preset {
                Preset::Paper => SystemParams::paper_defaults(),
            },
        };
        let overrides = [
            (self.gamma, &mut p.gamma),
            (self.xi, &mut p.xi),
            (self.transmittance, &mut p.transmittance),
            (self.loss_a, &mut p.loss_a),
            (self.loss_b, &mut p.loss_b),
            (self.escape_eff, &mut p.escape_eff),
            (self.hbar, &mut p.hbar),
        ];
        for (v, slot) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(d) = self.theta_a {
            p.theta_a = d.to_radians();
        }
        if let Some(d) = self.theta_b {
            p.theta_b = d.to_radians();
        }
        let p = match self.eta_a {
            Some(eta) => p.with_eta_a(eta)?,
            None => p.validated()?,
        };
        Ok(p)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Also reconstruct the metrics from simulated records.
    #[arg(long)]
    monte_carlo: bool,
    #[arg(long, default_value_t = 200)]
    records: usize,
    /// Seconds per record.
    #[arg(long, default_value_t = 50e-6)]
    duration: f64,
    /// Simulation step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn mode(&self) -> Mode {
        if self.monte_carlo {
            Mode::MonteCarlo
        } else {
            Mode::Theory
        }
    }

    fn settings(&self) -> MonteCarloSettings {
        MonteCarloSettings {
            records: self.records,
            duration: self.duration,
            dt: self.dt,
            base_seed: self.seed,
        }
    }
}

/// Angle grids in degrees: `START:STOP:STEP`, or a single angle.
#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value = "0:180:1")]
    theta_a_grid: GridSpec,
    #[arg(long, default_value = "0:180:1")]
    theta_b_grid: GridSpec,
}

#[derive(Debug, Clone, Copy)]
struct GridSpec(AngleGrid);

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let grid = match parts[..] {
            [deg] => AngleGrid::single(deg),
            [start_deg, stop_deg, step_deg] => AngleGrid {
                start_deg,
                stop_deg,
                step_deg,
            },
            _ => {
                return Err(format!(
                    "expected START:STOP:STEP or a single angle, got `{s}`"
                ))
            }
        };
        grid.validate().map_err(|e| e.to_string())?;
        Ok(GridSpec(grid))
    }
}

fn report_sweep(written: &[PathBuf], failed: usize, cells: usize) {
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {cells} cells failed; see the `error` column");
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Point { params, run, out } => {
            let p = params.resolve()?;
            let cell = Cell {
                transmittance: p.transmittance,
                theta_a_deg: p.theta_a.to_degrees(),
                theta_b_deg: p.theta_b.to_degrees(),
            };
            let mc = run.settings();
            let report = sweep::run_point(&p, run.mode(), &mc, cell.seed(mc.base_seed))?;
            let (eta_a, eta_b) = efficiencies(&p)?;
            let doc = serde_json::json!({
                "params": p,
                "eta_a": eta_a,
                "eta_b": eta_b,
                "report": report,
            });
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    serde_json::to_writer_pretty(&mut w, &doc)?;
                    writeln!(w)?;
                    w.flush()?;
                }
                None => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
        }
        Command::SweepEta {
            params,
            run,
            etas,
            out,
        } => {
            if etas.is_empty() {
                bail!("--etas needs at least one value");
            }
            let config = SweepConfig {
                mode: run.mode(),
                monte_carlo: run.settings(),
                ..SweepConfig::point(params.resolve()?)
            }
            .with_eta_a(&etas)?;
            let result = sweep::run_sweep(&config)?;
            let written = files::save_sweep(&out, &result)?;
            report_sweep(&written, result.provenance.failed_cells, result.cells.len());
        }
        Command::SweepAngles {
            params,
            run,
            grid,
            out,
        } => {
            let config = SweepConfig {
                theta_a: grid.theta_a_grid.0,
                theta_b: grid.theta_b_grid.0,
                mode: run.mode(),
                monte_carlo: run.settings(),
                ..SweepConfig::point(params.resolve()?)
            };
            let result = sweep::run_sweep(&config)?;
            let written = files::save_sweep(&out, &result)?;
            report_sweep(&written, result.provenance.failed_cells, result.cells.len());
        }
        Command::TrueSqueeze { params, grid, out } => {
            let config = SweepConfig {
                theta_a: grid.theta_a_grid.0,
                theta_b: grid.theta_b_grid.0,
                ..SweepConfig::point(params.resolve()?)
            };
            let cells = sweep::true_state_squeezing_sweep(&config)?;
            let mut w = create(&out)?;
            files::write_true_squeeze_csv(&mut w, &cells)?;
            w.flush()?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            report_sweep(&[out], failed, cells.len());
        }
        Command::Simulate {
            params,
            duration,
            dt,
            seed,
            out,
        } => {
            let model = build_model(&params.resolve()?)?;
            let v_true = solve_true_covariance(&model)?;
            let settings = SimSettings {
                duration,
                dt,
                seed,
                burn_in: None,
            };
            let (_, record) = simulate_true(&model, &v_true, &settings)?;
            files::save_record(&out, &record)?;
            eprintln!(
                "wrote {} ({} samples, dt = {:e} s)",
                out.display(),
                record.len(),
                record.dt
            );
        }
        Command::Estimate {
            params,
            record,
            no_true,
            out,
        } => {
            let model = build_model(&params.resolve()?)?;
            let rec = files::load_record(&record)
                .with_context(|| format!("reading record {}", record.display()))?;
            let sol = solve_riccati(&model, Channels::AliceAndBob)?;
            let est = estimate(&model, &rec, &sol, !no_true)?;
            files::save_trajectories(&out, &est)?;
            eprintln!(
                "wrote {} ({} points, interior {}..{})",
                out.display(),
                est.filtered.len(),
                est.interior.start,
                est.interior.end
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        let _ = writeln!(std::io::stderr(), "error: {e:#}");
        std::process::exit(1);
    }
}
