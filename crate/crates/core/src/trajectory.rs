//! Synthetic true-state trajectories and homodyne records.
//!
//! The true mean obeys `d⟨x̂⟩_T = A⟨x̂⟩_T dt + K_A[V_T] dw_A + K_B[V_T] dw_B`
//! and each detector emits `y_m dt = C_m⟨x̂⟩_T dt + dw_m`. The simulator and
//! the estimator's true-state filter share [`TrueStep`], so feeding a
//! simulated record back through the filter reproduces the simulated mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Row2, Vec2};
use crate::system_model::ModelMatrices;

/// Integrator stability guard on `dt · (fastest drift rate)`.
pub const MAX_STEP_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    True,
    Filtered,
    Retrofiltered,
    Smoothed,
    Unconditional,
}

/// Uniformly sampled homodyne currents. Sample `k` covers `[k·dt, (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub y_a: Vec<f64>,
    pub y_b: Vec<f64>,
    pub seed: Option<u64>,
    /// Leading samples to exclude from statistics.
    pub burn_in: usize,
}

impl MeasurementRecord {
    pub fn new(dt: f64, y_a: Vec<f64>, y_b: Vec<f64>) -> Result<Self> {
        let rec = MeasurementRecord {
            dt,
            y_a,
            y_b,
            seed: None,
            burn_in: 0,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", self.dt, "must be positive"));
        }
        if self.y_a.is_empty() {
            return Err(Error::EmptySample);
        }
        if self.y_a.len() != self.y_b.len() {
            return Err(Error::LengthMismatch {
                expected: self.y_a.len(),
                found: self.y_b.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_a.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| k as f64 * self.dt)
    }
}

/// A covariance that is constant except for explicitly stored transients at
/// the start (`head`) and end (`tail`) of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceProfile {
    pub steady: Mat2,
    pub head: Vec<Mat2>,
    /// Chronological; entry `i` belongs to index `len − tail.len() + i`.
    pub tail: Vec<Mat2>,
}

impl CovarianceProfile {
    pub fn constant(steady: Mat2) -> Self {
        CovarianceProfile {
            steady,
            head: Vec::new(),
            tail: Vec::new(),
        }
    }

    pub fn at(&self, k: usize, len: usize) -> Mat2 {
        if k < self.head.len() {
            self.head[k]
        } else if k + self.tail.len() >= len {
            self.tail[k + self.tail.len() - len]
        } else {
            self.steady
        }
    }
}

/// Time series of Gaussian-state means with their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub label: Conditioning,
    pub t0: f64,
    pub dt: f64,
    pub means: Vec<Vec2>,
    pub cov: CovarianceProfile,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.t0 + k as f64 * self.dt)
    }

    pub fn cov_at(&self, k: usize) -> Mat2 {
        self.cov.at(k, self.len())
    }
}

/// Steady state of the unmonitored system, `A V + V Aᵀ + Q = 0`.
pub fn unconditional_cov(model: &ModelMatrices) -> Result<Mat2> {
    linalg::solve_lyapunov(&model.a_mat, &model.q_mat)
}

/// `dt = 1 / (200 · fastest rate)`.
pub fn default_dt(model: &ModelMatrices) -> f64 {
    1.0 / (200.0 * model.fastest_rate())
}

/// Samples covering `10/γ`.
pub fn default_burn_in(model: &ModelMatrices, dt: f64) -> usize {
    (10.0 / (model.gamma * dt)).ceil() as usize
}

pub(crate) fn check_step(model: &ModelMatrices, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", dt, "must be positive"));
    }
    let product = dt * model.fastest_rate();
    if product > MAX_STEP_RATE {
        return Err(Error::UnstableStep {
            product,
            limit: MAX_STEP_RATE,
        });
    }
    Ok(())
}

/// One Euler step of the two-channel conditioned mean with fixed gains.
#[derive(Debug, Clone, Copy)]
pub struct TrueStep {
    pub a: Mat2,
    pub c_a: Row2,
    pub c_b: Row2,
    pub k_a: Vec2,
    pub k_b: Vec2,
    pub dt: f64,
}

impl TrueStep {
    pub fn new(model: &ModelMatrices, v_true: &Mat2, dt: f64) -> Self {
        TrueStep {
            a: model.a_mat,
            c_a: model.c_a,
            c_b: model.c_b,
            k_a: model.alice().gain(v_true),
            k_b: model.bob().gain(v_true),
            dt,
        }
    }

    #[inline]
    pub fn step(&self, x: &Vec2, y_a: f64, y_b: f64) -> Vec2 {
        let dt = self.dt;
        let innov_a = y_a * dt - (self.c_a * x)[0] * dt;
        let innov_b = y_b * dt - (self.c_b * x)[0] * dt;
        x + self.a * x * dt + self.k_a * innov_a + self.k_b * innov_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    /// Seconds.
    pub duration: f64,
    /// Seconds; `None` selects [`default_dt`].
    pub dt: Option<f64>,
    pub seed: u64,
    /// Samples; `None` selects [`default_burn_in`].
    pub burn_in: Option<usize>,
}

impl SimSettings {
    pub fn new(duration: f64, dt: f64, seed: u64) -> Self {
        SimSettings {
            duration,
            dt: Some(dt),
            seed,
            burn_in: None,
        }
    }
}

/// Integrates the true-state SDE with Euler–Maruyama and emits both
/// detectors' records. The mean starts at the origin; the leading
/// `burn_in` samples are flagged on the record.
pub fn simulate_true(
    model: &ModelMatrices,
    v_true: &Mat2,
    settings: &SimSettings,
) -> Result<(StateTrajectory, MeasurementRecord)> {
    linalg::require_pd(v_true, "v_true")?;
    let requested_dt = settings.dt.unwrap_or_else(|| default_dt(model));
    check_step(model, requested_dt)?;
    if !(settings.duration.is_finite() && settings.duration > 0.0) {
        return Err(Error::invalid(
            "duration",
            settings.duration,
            "must be positive",
        ));
    }
    let n = (settings.duration / requested_dt).round().max(1.0) as usize;
    let dt = settings.duration / n as f64;
    let burn_in = settings
        .burn_in
        .unwrap_or_else(|| default_burn_in(model, dt))
        .min(n);

    let stepper = TrueStep::new(model, v_true, dt);
    let sd_a = (model.r_a * dt).sqrt();
    let sd_b = (model.r_b * dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut means = Vec::with_capacity(n + 1);
    let mut y_a = Vec::with_capacity(n);
    let mut y_b = Vec::with_capacity(n);
    let mut x = Vec2::zeros();
    for _ in 0..n {
        let na: f64 = StandardNormal.sample(&mut rng);
        let nb: f64 = StandardNormal.sample(&mut rng);
        let (dw_a, dw_b) = (sd_a * na, sd_b * nb);
        let ya = (model.c_a * x)[0] + dw_a / dt;
        let yb = (model.c_b * x)[0] + dw_b / dt;
        means.push(x);
        y_a.push(ya);
        y_b.push(yb);
        x = stepper.step(&x, ya, yb);
    }
    means.push(x);

    let traj = StateTrajectory {
        label: Conditioning::True,
        t0: 0.0,
        dt,
        means,
        cov: CovarianceProfile::constant(*v_true),
    };
    let record = MeasurementRecord {
        dt,
        y_a,
        y_b,
        seed: Some(settings.seed),
        burn_in,
    };
    Ok((traj, record))
}

/// SplitMix64 finalizer; used to derive independent, order-free seeds
/// from a base seed and integer coordinates.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    coords.iter().fold(mix(base), |acc, &c| {
        mix(acc ^ mix(c.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}
