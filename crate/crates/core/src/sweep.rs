//! Parameter points and sweeps over the beam-splitter setting and the two
//! homodyne angles.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{self, Channels, RiccatiSolution};
use crate::metrics::{
    EmpiricalMetrics, MetricsReport, RecordAccumulator, RecordSummary, RecoveryKind, StateMetrics,
};
use crate::system_model::{build_model, efficiencies, ModelMatrices, SystemParams};
use crate::trajectory::{self, derive_seed, SimSettings};

/// Version of the CSV layouts written by [`crate::io`].
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Theory,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSettings {
    pub records: usize,
    /// Seconds per record.
    pub duration: f64,
    /// Seconds; `None` selects [`trajectory::default_dt`].
    pub dt: Option<f64>,
    pub base_seed: u64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        MonteCarloSettings {
            records: 200,
            duration: 50e-6,
            dt: None,
            base_seed: 0,
        }
    }
}

impl MonteCarloSettings {
    pub fn validate(&self) -> Result<()> {
        if self.records == 0 {
            return Err(Error::invalid("records", 0.0, "need at least one record"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(
                "duration",
                self.duration,
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Inclusive grid of angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub step_deg: f64,
}

impl AngleGrid {
    pub fn single(deg: f64) -> Self {
        AngleGrid {
            start_deg: deg,
            stop_deg: deg,
            step_deg: 1.0,
        }
    }

    /// `0°, step, …, 180°`.
    pub fn full(step_deg: f64) -> Self {
        AngleGrid {
            start_deg: 0.0,
            stop_deg: 180.0,
            step_deg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_deg.is_finite() && self.step_deg > 0.0) {
            return Err(Error::invalid(
                "step_deg",
                self.step_deg,
                "grid step must be positive",
            ));
        }
        for (name, v) in [("start_deg", self.start_deg), ("stop_deg", self.stop_deg)] {
            if !(0.0..=180.0).contains(&v) {
                return Err(Error::invalid(
                    name,
                    v,
                    "angles must lie in [0, 180] degrees",
                ));
            }
        }
        if self.stop_deg < self.start_deg {
            return Err(Error::invalid(
                "stop_deg",
                self.stop_deg,
                "must not precede start_deg",
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let span = self.stop_deg - self.start_deg;
        let n = (span / self.step_deg + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.start_deg + i as f64 * self.step_deg)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub params: SystemParams,
    /// Beam-splitter settings; empty means the one in `params`.
    pub transmittances: Vec<f64>,
    pub theta_a: AngleGrid,
    pub theta_b: AngleGrid,
    pub mode: Mode,
    pub monte_carlo: MonteCarloSettings,
}

impl SweepConfig {
    /// A single cell at the angles and beam splitter of `params`.
    pub fn point(params: SystemParams) -> Self {
        SweepConfig {
            params,
            transmittances: Vec::new(),
            theta_a: AngleGrid::single(params.theta_a.to_degrees()),
            theta_b: AngleGrid::single(params.theta_b.to_degrees()),
            mode: Mode::Theory,
            monte_carlo: MonteCarloSettings::default(),
        }
    }

    /// Converts target values of η_A into beam-splitter settings.
    pub fn with_eta_a(mut self, etas: &[f64]) -> Result<Self> {
        self.transmittances = etas
            .iter()
            .map(|&eta| self.params.with_eta_a(eta).map(|p| p.transmittance))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.theta_a.validate()?;
        self.theta_b.validate()?;
        for &t in &self.transmittances {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("transmittance", t, "must lie in [0, 1]"));
            }
        }
        if self.mode == Mode::MonteCarlo {
            self.monte_carlo.validate()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let ts = if self.transmittances.is_empty() {
            vec![self.params.transmittance]
        } else {
            self.transmittances.clone()
        };
        let (tas, tbs) = (self.theta_a.values(), self.theta_b.values());
        let mut out = Vec::with_capacity(ts.len() * tas.len() * tbs.len());
        for &transmittance in &ts {
            for &theta_a_deg in &tas {
                for &theta_b_deg in &tbs {
                    out.push(Cell {
                        transmittance,
                        theta_a_deg,
                        theta_b_deg,
                    });
                }
            }
        }
        out
    }
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub transmittance: f64,
    pub theta_a_deg: f64,
    pub theta_b_deg: f64,
}

impl Cell {
    pub fn params(&self, base: &SystemParams) -> SystemParams {
        SystemParams {
            transmittance: self.transmittance,
            ..*base
        }
        .with_angles_deg(self.theta_a_deg, self.theta_b_deg)
    }

    /// Stable per-cell seed, independent of evaluation order.
    pub fn seed(&self, base_seed: u64) -> u64 {
        derive_seed(
            base_seed,
            &[
                self.transmittance.to_bits(),
                (self.theta_a_deg * 1e6).round() as u64,
                (self.theta_b_deg * 1e6).round() as u64,
            ],
        )
    }

    fn label(&self) -> String {
        format!(
            "T={}, theta_a={}deg, theta_b={}deg",
            self.transmittance, self.theta_a_deg, self.theta_b_deg
        )
    }
}

/// Outcome of one cell; failures are kept as messages so the sweep goes on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub eta_a: f64,
    pub eta_b: f64,
    pub outcome: std::result::Result<MetricsReport, String>,
}

/// Simulates `settings.records` records and accumulates their statistics
/// over each record's interior.
pub fn monte_carlo(
    model: &ModelMatrices,
    sol: &RiccatiSolution,
    settings: &MonteCarloSettings,
    cell_seed: u64,
) -> Result<EmpiricalMetrics> {
    settings.validate()?;
    let summaries = (0..settings.records)
        .into_par_iter()
        .map(|i| {
            let sim = SimSettings {
                duration: settings.duration,
                dt: settings.dt,
                seed: derive_seed(cell_seed, &[i as u64]),
                burn_in: None,
            };
            record_summary(model, sol, &sim)
        })
        .collect::<Result<Vec<RecordSummary>>>()?;
    EmpiricalMetrics::from_records(&summaries, sol, model.hbar)
}

/// Statistics of one simulated record.
pub fn record_summary(
    model: &ModelMatrices,
    sol: &RiccatiSolution,
    sim: &SimSettings,
) -> Result<RecordSummary> {
    let (truth, record) = trajectory::simulate_true(model, &sol.v_true, sim)?;
    let out = estimation::estimate(model, &record, sol, false)?;
    let mut acc = RecordAccumulator::new(sol, model.hbar)?;
    for k in out.interior.clone() {
        acc.push(
            &truth.means[k],
            &out.filtered.means[k],
            &out.smoothed.means[k],
        );
    }
    acc.finish()
}

/// Theory metrics at one parameter point, plus Monte-Carlo reconstruction
/// when `mode` asks for it.
pub fn run_point(
    params: &SystemParams,
    mode: Mode,
    mc: &MonteCarloSettings,
    seed: u64,
) -> Result<MetricsReport> {
    let model = build_model(params)?;
    let sol = estimation::solve_riccati(&model, Channels::AliceAndBob)?;
    let mut report = MetricsReport::theory(&sol, model.hbar)?;
    if mode == Mode::MonteCarlo {
        report.empirical = Some(monte_carlo(&model, &sol, mc, seed)?);
    }
    Ok(report)
}

fn evaluate(config: &SweepConfig, cell: &Cell) -> CellResult {
    let params = cell.params(&config.params);
    let (eta_a, eta_b) = efficiencies(&params).unwrap_or((f64::NAN, f64::NAN));
    let outcome = run_point(
        &params,
        config.mode,
        &config.monte_carlo,
        cell.seed(config.monte_carlo.base_seed),
    )
    .map_err(|e| {
        Error::Cell {
            coords: cell.label(),
            source: Box::new(e),
        }
        .to_string()
    });
    CellResult {
        cell: *cell,
        eta_a,
        eta_b,
        outcome,
    }
}

/// Bob's best angle for one θ_A and one recovery metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPoint {
    pub transmittance: f64,
    pub metric: RecoveryKind,
    pub theta_a_deg: f64,
    pub theta_b_deg: f64,
    pub value: f64,
    /// Another θ_B reached the same value; the smaller angle was kept.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub schema_version: u32,
    pub mode: Mode,
    pub params: SystemParams,
    pub transmittances: Vec<f64>,
    pub theta_a: AngleGrid,
    pub theta_b: AngleGrid,
    pub monte_carlo: Option<MonteCarloSettings>,
    /// Integration step actually used by the Monte-Carlo records.
    pub dt: Option<f64>,
    pub cells: usize,
    pub failed_cells: usize,
    pub wall_time_s: f64,
}

impl Provenance {
    fn new(config: &SweepConfig, cells: usize, failed_cells: usize, wall_time_s: f64) -> Self {
        let mc = (config.mode == Mode::MonteCarlo).then_some(config.monte_carlo);
        let dt = mc.and_then(|m| {
            m.dt.or_else(|| {
                build_model(&config.params).ok().map(|model| {
                    let dt = trajectory::default_dt(&model);
                    m.duration / (m.duration / dt).round().max(1.0)
                })
            })
        });
        Provenance {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            mode: config.mode,
            params: config.params,
            transmittances: config.transmittances.clone(),
            theta_a: config.theta_a,
            theta_b: config.theta_b,
            monte_carlo: mc,
            dt,
            cells,
            failed_cells,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub optimal: Vec<OptimalPoint>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub fn reports(&self) -> impl Iterator<Item = (&CellResult, &MetricsReport)> {
        self.cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().map(|r| (c, r)))
    }

    pub fn optimal_curve(&self, transmittance: f64, metric: RecoveryKind) -> Vec<OptimalPoint> {
        self.optimal
            .iter()
            .filter(|p| p.metric == metric && p.transmittance == transmittance)
            .copied()
            .collect()
    }
}

/// Evaluates every cell (in parallel); failed cells are recorded and the
/// sweep continues.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let start = Instant::now();
    let cells = config.cells();
    let results: Vec<CellResult> = cells.par_iter().map(|c| evaluate(config, c)).collect();
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    let optimal = optimal_curves(&results);
    let provenance = Provenance::new(config, results.len(), failed, start.elapsed().as_secs_f64());
    Ok(SweepResult {
        cells: results,
        optimal,
        provenance,
    })
}

/// Relative width within which two grid values count as a tie.
const TIE_TOL: f64 = 1e-12;

/// Per `(T, θ_A)` argmax over θ_B of each theoretical recovery. Only built
/// when θ_B takes more than one value.
pub fn optimal_curves(results: &[CellResult]) -> Vec<OptimalPoint> {
    let mut keys: Vec<(f64, f64)> = results
        .iter()
        .map(|r| (r.cell.transmittance, r.cell.theta_a_deg))
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();

    let mut out = Vec::new();
    for (t, ta) in keys {
        let mut column: Vec<(f64, &MetricsReport)> = results
            .iter()
            .filter(|r| r.cell.transmittance == t && r.cell.theta_a_deg == ta)
            .filter_map(|r| r.outcome.as_ref().ok().map(|rep| (r.cell.theta_b_deg, rep)))
            .collect();
        if column.len() < 2 {
            continue;
        }
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        for metric in RecoveryKind::ALL {
            let best = column
                .iter()
                .map(|(_, r)| r.recoveries.get(metric))
                .fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * best.abs().max(f64::MIN_POSITIVE);
            let mut winners = column
                .iter()
                .filter(|(_, r)| (best - r.recoveries.get(metric)) <= tol);
            let (theta_b_deg, rep) = winners.next().expect("column is non-empty");
            let tied = winners.next().is_some();
            out.push(OptimalPoint {
                transmittance: t,
                metric,
                theta_a_deg: ta,
                theta_b_deg: *theta_b_deg,
                value: rep.recoveries.get(metric),
                tied,
            });
        }
    }
    out
}

/// True-state purity and squeezing of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSqueezeCell {
    pub cell: Cell,
    pub eta_a: f64,
    pub eta_b: f64,
    pub outcome: std::result::Result<StateMetrics, String>,
}

/// Squeezing of the state conditioned on both records over the configured
/// grid. Only the two-channel covariance is solved.
pub fn true_state_squeezing_sweep(config: &SweepConfig) -> Result<Vec<TrueSqueezeCell>> {
    config.validate()?;
    Ok(config
        .cells()
        .par_iter()
        .map(|cell| {
            let params = cell.params(&config.params);
            let (eta_a, eta_b) = efficiencies(&params).unwrap_or((f64::NAN, f64::NAN));
            let outcome = build_model(&params)
                .and_then(|m| {
                    let v = estimation::solve_true_covariance(&m)?;
                    StateMetrics::of(&v, m.hbar)
                })
                .map_err(|e| {
                    Error::Cell {
                        coords: cell.label(),
                        source: Box::new(e),
                    }
                    .to_string()
                });
            TrueSqueezeCell {
                cell: *cell,
                eta_a,
                eta_b,
                outcome,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_values_are_inclusive() {
        assert_eq!(
            AngleGrid::full(45.0).values(),
            vec![0.0, 45.0, 90.0, 135.0, 180.0]
        );
        assert_eq!(AngleGrid::full(1.0).values().len(), 181);
        assert_eq!(AngleGrid::single(65.0).values(), vec![65.0]);
        let g = AngleGrid {
            start_deg: 10.0,
            stop_deg: 20.0,
            step_deg: 0.1,
        };
        assert_eq!(g.values().len(), 101);
    }

    #[test]
    fn grid_validation() {
        assert!(AngleGrid::full(0.0).validate().is_err());
        assert!(AngleGrid::full(-1.0).validate().is_err());
        assert!(AngleGrid::single(181.0).validate().is_err());
        assert!(AngleGrid {
            start_deg: 90.0,
            stop_deg: 10.0,
            step_deg: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn cell_seeds_depend_only_on_coordinates() {
        let c = Cell {
            transmittance: 0.5,
            theta_a_deg: 65.0,
            theta_b_deg: 135.0,
        };
        let d = Cell {
            theta_b_deg: 136.0,
            ..c
        };
        assert_eq!(c.seed(1), c.seed(1));
        assert_ne!(c.seed(1), d.seed(1));
        assert_ne!(c.seed(1), c.seed(2));
    }

    #[test]
    fn failing_cells_are_recorded() {
        let config = SweepConfig {
            transmittances: vec![0.5, 1.0],
            mode: Mode::MonteCarlo,
            monte_carlo: MonteCarloSettings {
                records: 1,
                duration: 1e-6,
                dt: Some(1e-6),
                base_seed: 0,
            },
            ..SweepConfig::point(SystemParams::paper_defaults())
        };
        let r = run_sweep(&config).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.provenance.failed_cells, 2);
        let msg = r.cells[0].outcome.as_ref().unwrap_err();
        assert!(msg.contains("T=0.5") && msg.contains("time step"), "{msg}");

        let mut broken = config;
        broken.params.gamma = -1.0;
        assert!(run_sweep(&broken).is_err());
    }

    #[test]
    fn ties_go_to_smaller_angle() {
        // With no Bob every θ_B gives zero recovery.
        let config = SweepConfig {
            transmittances: vec![1.0],
            theta_b: AngleGrid::full(45.0),
            ..SweepConfig::point(SystemParams::paper_defaults())
        };
        let r = run_sweep(&config).unwrap();
        for p in &r.optimal {
            assert_eq!(p.theta_b_deg, 0.0);
            assert!(p.tied);
            assert_eq!(p.value, 0.0);
        }
        assert_eq!(r.optimal.len(), 4);
    }
}
