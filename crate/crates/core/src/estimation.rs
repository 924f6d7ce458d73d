//! Steady-state covariances and the mean-tracking recursions for the true,
//! filtered, retrofiltered and smoothed states.
//!
//! Everything downstream of [`solve_riccati`] is linear in the record. The
//! retrofilter is carried in the stabilized variables `z̆ = Λ̆ x_R`,
//! `Λ̆ = (V_R + V_T)⁻¹` so its final condition is simply zero, and the
//! smoother uses the combination
//! `x_S = [I + (V_F − V_T)Λ̆]⁻¹ [x_F + (V_F − V_T) z̆]`, which stays regular
//! when `V_F − V_T` is singular.
//!
//! All trajectories hold `N + 1` points for an `N`-sample record: point `k`
//! sits at `t_k = k·dt`, between sample `k − 1` and sample `k`. The filter at
//! `t_k` has consumed samples `0..k`; the retrofilter at `t_k` summarizes
//! samples `k..N`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::system_model::{Channel, ModelMatrices};
use crate::trajectory::{
    self, Conditioning, CovarianceProfile, MeasurementRecord, StateTrajectory, TrueStep,
};

/// Which records condition the reference ("true") state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    /// Alice only: the reference is Alice's own filtered state and smoothing
    /// is degenerate.
    AliceOnly,
    AliceAndBob,
}

/// Steady-state termination threshold, relative to each equation's scale.
pub const STEADY_TOL: f64 = 1e-12;
/// Largest scaled residual accepted when the iteration stalls at round-off.
pub const ACCEPT_TOL: f64 = 1e-10;
/// Relative distance at which a transient covariance is considered settled.
pub const TRANSIENT_TOL: f64 = 1e-11;
/// Width, in units of `1/γ`, excluded from statistics at each record end.
pub const BOUNDARY_WIDTH: f64 = 20.0;

const MAX_ITERATIONS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `‖AV + VAᵀ + Q − Σ K R Kᵀ‖ / ‖Q‖` for `V_T`.
    pub v_true: f64,
    pub v_filt: f64,
    /// Backward equation residual relative to the sum of its term magnitudes.
    pub lambda_retro: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub v_true: Mat2,
    pub v_filt: Mat2,
    pub lambda_retro: Mat2,
    pub v_smooth: Mat2,
    pub v_unc: Mat2,
    pub residuals: Residuals,
    /// Integration steps used for `V_T`, `V_F`, `Λ̆_R`.
    pub iterations: [usize; 3],
    /// Largest asymmetry removed by re-symmetrization, relative to scale.
    pub max_asymmetry: f64,
    pub channels: Channels,
}

impl RiccatiSolution {
    /// Estimation-error matrix `V_F − V_T`.
    pub fn filter_error(&self) -> Mat2 {
        self.v_filt - self.v_true
    }
}

/// Right-hand side of a forward covariance equation conditioned on `channels`.
fn forward_rhs(model: &ModelMatrices, channels: &[Channel], v: &Mat2) -> Mat2 {
    let mut out = model.a_mat * v + v * model.a_mat.transpose() + model.q_mat;
    for ch in channels {
        let k = ch.gain(v);
        out -= k * k.transpose() * ch.r;
    }
    out
}

fn forward_stiffness(model: &ModelMatrices, channels: &[Channel], v: &Mat2) -> f64 {
    let mut closed = model.a_mat;
    for ch in channels {
        closed -= ch.gain(v) * ch.c;
    }
    2.0 * closed.norm()
}

/// Coefficients of the backward (retrofilter) equations.
#[derive(Debug, Clone, Copy)]
struct RetroCoefficients {
    a_bar: Mat2,
    q_bar: Mat2,
    info: Mat2,
    k_a: Vec2,
    c_over_r: Vec2,
}

impl RetroCoefficients {
    fn new(model: &ModelMatrices, sol_v_true: &Mat2, channels: Channels) -> Self {
        let alice = model.alice();
        let k_a = alice.gain(sol_v_true);
        let q_bar = match channels {
            Channels::AliceAndBob => {
                let bob = model.bob();
                let k_b = bob.gain(sol_v_true);
                k_b * k_b.transpose() * bob.r
            }
            Channels::AliceOnly => Mat2::zeros(),
        };
        RetroCoefficients {
            a_bar: model.a_mat - k_a * alice.c,
            q_bar,
            info: alice.c.transpose() * alice.c / alice.r,
            k_a,
            c_over_r: alice.c.transpose() / alice.r,
        }
    }

    /// `−dΛ̆/dt`.
    fn rhs(&self, l: &Mat2) -> Mat2 {
        l * self.a_bar + self.a_bar.transpose() * l - l * self.q_bar * l + self.info
    }

    fn scale(&self, l: &Mat2) -> f64 {
        2.0 * linalg::max_abs(&(l * self.a_bar))
            + linalg::max_abs(&(l * self.q_bar * l))
            + linalg::max_abs(&self.info)
    }

    fn stiffness(&self, l: &Mat2) -> f64 {
        2.0 * (self.a_bar - self.q_bar * l).norm()
    }

    /// One explicit step of the retrofiltered vector, from `t_{k+1}` to `t_k`.
    #[inline]
    fn z_step(&self, z: &Vec2, l: &Mat2, y: f64, dt: f64) -> Vec2 {
        let drift = (self.a_bar.transpose() - l * self.q_bar) * z;
        let input = (self.c_over_r - l * self.k_a) * y;
        z + (drift + input) * dt
    }
}

struct SteadyState {
    value: Mat2,
    iterations: usize,
    residual: f64,
    max_asymmetry: f64,
}

/// Integrates `dX/dτ = rhs(X)` with RK4 until the scaled residual drops below
/// [`STEADY_TOL`]. The step is re-chosen every iteration from a bound on the
/// local Jacobian, which keeps the march stable as the gains change.
fn integrate_to_steady(
    equation: &'static str,
    start: Mat2,
    rhs: impl Fn(&Mat2) -> Mat2,
    scale: impl Fn(&Mat2) -> f64,
    stiffness: impl Fn(&Mat2) -> f64,
) -> Result<SteadyState> {
    let mut x = start;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut max_asym = 0.0_f64;
    for iter in 0..MAX_ITERATIONS {
        let f = rhs(&x);
        let s = scale(&x);
        let residual = if s > 0.0 {
            linalg::max_abs(&f) / s
        } else {
            0.0
        };
        if residual <= STEADY_TOL {
            return Ok(SteadyState {
                value: x,
                iterations: iter,
                residual,
                max_asymmetry: max_asym,
            });
        }
        if residual < 0.5 * best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 20_000 {
                if residual <= ACCEPT_TOL {
                    return Ok(SteadyState {
                        value: x,
                        iterations: iter,
                        residual,
                        max_asymmetry: max_asym,
                    });
                }
                return Err(Error::NonConvergence {
                    equation,
                    iterations: iter,
                    residual,
                });
            }
        }
        let h = 0.5 / stiffness(&x).max(f64::MIN_POSITIVE);
        let k1 = f;
        let k2 = rhs(&(x + k1 * (0.5 * h)));
        let k3 = rhs(&(x + k2 * (0.5 * h)));
        let k4 = rhs(&(x + k3 * h));
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let mag = linalg::max_abs(&next);
        if mag > 0.0 {
            max_asym = max_asym.max(linalg::asymmetry(&next) / mag);
        }
        x = linalg::symmetrize(&next);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence {
                equation,
                iterations: iter,
                residual: f64::INFINITY,
            });
        }
    }
    let residual = linalg::max_abs(&rhs(&x)) / scale(&x).max(f64::MIN_POSITIVE);
    Err(Error::NonConvergence {
        equation,
        iterations: MAX_ITERATIONS,
        residual,
    })
}

fn solve_forward(
    model: &ModelMatrices,
    channels: &[Channel],
    v_unc: &Mat2,
    equation: &'static str,
) -> Result<SteadyState> {
    let q_scale = linalg::max_abs(&model.q_mat).max(f64::MIN_POSITIVE);
    integrate_to_steady(
        equation,
        *v_unc,
        |v| forward_rhs(model, channels, v),
        |_| q_scale,
        |v| forward_stiffness(model, channels, v),
    )
}

/// `V_S = V_T + (V_F − V_T)[I + Λ̆(V_F − V_T)]⁻¹`.
pub fn combine_covariance(v_true: &Mat2, v_filt: &Mat2, lambda: &Mat2) -> Result<Mat2> {
    let e = v_filt - v_true;
    let m = Mat2::identity() + lambda * e;
    let inv = m.try_inverse().ok_or(Error::SingularCombination {
        condition: f64::INFINITY,
    })?;
    Ok(linalg::symmetrize(&(v_true + e * inv)))
}

/// Solves the steady-state covariance equations for the reference, filtered
/// and retrofiltered states and assembles the smoothed covariance.
pub fn solve_riccati(model: &ModelMatrices, channels: Channels) -> Result<RiccatiSolution> {
    if !linalg::is_hurwitz(&model.a_mat) {
        return Err(Error::NotHurwitz);
    }
    let v_unc = trajectory::unconditional_cov(model)?;
    let alice = model.alice();
    let bob = model.bob();

    let filt = solve_forward(model, &[alice], &v_unc, "filtered covariance")?;
    let truth = match channels {
        Channels::AliceAndBob => solve_forward(model, &[alice, bob], &v_unc, "true covariance")?,
        Channels::AliceOnly => SteadyState { ..filt_copy(&filt) },
    };

    let coeffs = RetroCoefficients::new(model, &truth.value, channels);
    let retro = integrate_to_steady(
        "retrofiltered information",
        Mat2::zeros(),
        |l| coeffs.rhs(l),
        |l| coeffs.scale(l),
        |l| coeffs.stiffness(l),
    )?;

    let v_smooth = combine_covariance(&truth.value, &filt.value, &retro.value)?;
    let q_scale = linalg::max_abs(&model.q_mat).max(f64::MIN_POSITIVE);
    let sol = RiccatiSolution {
        v_true: truth.value,
        v_filt: filt.value,
        lambda_retro: retro.value,
        v_smooth,
        v_unc,
        residuals: Residuals {
            v_true: truth.residual,
            v_filt: filt.residual,
            lambda_retro: retro.residual,
        },
        iterations: [truth.iterations, filt.iterations, retro.iterations],
        max_asymmetry: truth
            .max_asymmetry
            .max(filt.max_asymmetry)
            .max(retro.max_asymmetry),
        channels,
    };
    debug_assert!(sol.residuals.v_filt <= ACCEPT_TOL && q_scale > 0.0);
    check_invariants(model, &sol)?;
    Ok(sol)
}

/// Steady-state covariance of the state conditioned on both records alone;
/// cheaper than [`solve_riccati`] when nothing else is needed.
pub fn solve_true_covariance(model: &ModelMatrices) -> Result<Mat2> {
    if !linalg::is_hurwitz(&model.a_mat) {
        return Err(Error::NotHurwitz);
    }
    let v_unc = trajectory::unconditional_cov(model)?;
    let v = solve_forward(
        model,
        &[model.alice(), model.bob()],
        &v_unc,
        "true covariance",
    )?
    .value;
    if model.is_quantum() && (v * (2.0 / model.hbar)).determinant() < 1.0 - 1e-9 {
        return Err(Error::Invariant(
            "V_T violates the uncertainty bound".into(),
        ));
    }
    Ok(v)
}

fn filt_copy(s: &SteadyState) -> SteadyState {
    SteadyState {
        value: s.value,
        iterations: s.iterations,
        residual: s.residual,
        max_asymmetry: s.max_asymmetry,
    }
}

fn check_invariants(model: &ModelMatrices, sol: &RiccatiSolution) -> Result<()> {
    for (name, v) in [
        ("V_T", &sol.v_true),
        ("V_F", &sol.v_filt),
        ("V_S", &sol.v_smooth),
    ] {
        if !linalg::is_symmetric_pd(v, 1e-8) {
            return Err(Error::Invariant(format!("{name} is not positive-definite")));
        }
        if model.is_quantum() {
            let d = (v * (2.0 / model.hbar)).determinant();
            if d < 1.0 - 1e-9 {
                return Err(Error::Invariant(format!(
                    "{name} violates the uncertainty bound: det(2V/ħ) = {d}"
                )));
            }
        }
    }
    let (lo, _) = linalg::sym_eigenvalues(&sol.lambda_retro);
    if lo < -1e-9 * linalg::max_abs(&sol.lambda_retro) {
        return Err(Error::Invariant("Λ̆_R is not positive semi-definite".into()));
    }
    Ok(())
}

/// How the filter covariance starts at `t_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterStart {
    /// `V_F(t_0) = V_unc`, integrated forward until it settles on `V_F`.
    #[default]
    Unconditional,
    /// Steady-state gain from the first sample.
    SteadyState,
}

fn settle_forward(
    model: &ModelMatrices,
    channel: &Channel,
    start: Mat2,
    target: &Mat2,
    dt: f64,
    max_len: usize,
) -> Vec<Mat2> {
    let tol = TRANSIENT_TOL * linalg::max_abs(target);
    let mut v = start;
    let mut head = Vec::new();
    while head.len() < max_len && linalg::max_abs(&(v - target)) > tol {
        head.push(v);
        v = linalg::symmetrize(&(v + forward_rhs(model, std::slice::from_ref(channel), &v) * dt));
    }
    head
}

fn validate_record(model: &ModelMatrices, record: &MeasurementRecord) -> Result<()> {
    record.validate()?;
    trajectory::check_step(model, record.dt)
}

/// Alice's filter: `dx_F = A x_F dt + K_A[V_F](y_A dt − C_A x_F dt)`, from
/// `x_F(t_0) = 0` and `V_F(t_0) = V_unc`.
pub fn run_filter(
    model: &ModelMatrices,
    record: &MeasurementRecord,
    sol: &RiccatiSolution,
) -> Result<StateTrajectory> {
    run_filter_with(model, record, sol, FilterStart::Unconditional)
}

pub fn run_filter_with(
    model: &ModelMatrices,
    record: &MeasurementRecord,
    sol: &RiccatiSolution,
    start: FilterStart,
) -> Result<StateTrajectory> {
    validate_record(model, record)?;
    let n = record.len();
    let dt = record.dt;
    let alice = model.alice();
    let head = match start {
        FilterStart::Unconditional => {
            settle_forward(model, &alice, sol.v_unc, &sol.v_filt, dt, n + 1)
        }
        FilterStart::SteadyState => Vec::new(),
    };
    let cov = CovarianceProfile {
        steady: sol.v_filt,
        head,
        tail: Vec::new(),
    };
    let steady_gain = alice.gain(&sol.v_filt);
    let a = model.a_mat;
    let c = alice.c;

    let mut means = Vec::with_capacity(n + 1);
    let mut x = Vec2::zeros();
    for (k, &y) in record.y_a.iter().enumerate() {
        means.push(x);
        let gain = if k < cov.head.len() {
            alice.gain(&cov.head[k])
        } else {
            steady_gain
        };
        let innov = y * dt - (c * x)[0] * dt;
        x = x + a * x * dt + gain * innov;
    }
    means.push(x);
    Ok(StateTrajectory {
        label: Conditioning::Filtered,
        t0: 0.0,
        dt,
        means,
        cov,
    })
}

/// The reference state conditioned on both records, with steady gains
/// `K_A[V_T]`, `K_B[V_T]`. Shares its update with the simulator.
pub fn run_true_filter(
    model: &ModelMatrices,
    record: &MeasurementRecord,
    sol: &RiccatiSolution,
) -> Result<StateTrajectory> {
    validate_record(model, record)?;
    let stepper = match sol.channels {
        Channels::AliceAndBob => TrueStep::new(model, &sol.v_true, record.dt),
        Channels::AliceOnly => TrueStep {
            c_b: crate::linalg::Row2::zeros(),
            k_b: Vec2::zeros(),
            ..TrueStep::new(model, &sol.v_true, record.dt)
        },
    };
    let mut means = Vec::with_capacity(record.len() + 1);
    let mut x = Vec2::zeros();
    for (&ya, &yb) in record.y_a.iter().zip(&record.y_b) {
        means.push(x);
        x = stepper.step(&x, ya, yb);
    }
    means.push(x);
    Ok(StateTrajectory {
        label: Conditioning::True,
        t0: 0.0,
        dt: record.dt,
        means,
        cov: CovarianceProfile::constant(sol.v_true),
    })
}

/// Backward pass over Alice's record.
#[derive(Debug, Clone, PartialEq)]
pub struct RetroTrajectory {
    pub dt: f64,
    /// `z̆_R(t_k)`, `k = 0..=N`; the last entry is the final condition 0.
    pub z: Vec<Vec2>,
    /// `Λ̆_R(t_k)`; transient stored in `tail`, ending with the zero final
    /// condition.
    pub lambda: CovarianceProfile,
}

impl RetroTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn lambda_at(&self, k: usize) -> Mat2 {
        self.lambda.at(k, self.len())
    }

    /// Number of points before `t_f` over which `Λ̆_R(t)` differs from its
    /// steady value.
    pub fn convergence_window(&self) -> usize {
        self.lambda.tail.len()
    }
}

/// Integrates `z̆_R` and `Λ̆_R` backward from `z̆(t_f) = 0`, `Λ̆(t_f) = 0`.
pub fn run_retrofilter(
    model: &ModelMatrices,
    record: &MeasurementRecord,
    sol: &RiccatiSolution,
) -> Result<RetroTrajectory> {
    validate_record(model, record)?;
    let n = record.len();
    let dt = record.dt;
    let coeffs = RetroCoefficients::new(model, &sol.v_true, sol.channels);

    // Λ̆ transient, built backward from t_N.
    let target = sol.lambda_retro;
    let tol = TRANSIENT_TOL * linalg::max_abs(&target);
    let mut tail_rev = Vec::new();
    let mut l = Mat2::zeros();
    while tail_rev.len() < n + 1 && linalg::max_abs(&(l - target)) > tol {
        tail_rev.push(l);
        l = linalg::symmetrize(&(l + coeffs.rhs(&l) * dt));
    }
    tail_rev.reverse();
    let lambda = CovarianceProfile {
        steady: target,
        head: Vec::new(),
        tail: tail_rev,
    };

    let mut z = vec![Vec2::zeros(); n + 1];
    for k in (0..n).rev() {
        let l_next = lambda.at(k + 1, n + 1);
        z[k] = coeffs.z_step(&z[k + 1], &l_next, record.y_a[k], dt);
    }
    Ok(RetroTrajectory { dt, z, lambda })
}

/// Pointwise combination of filtered and retrofiltered quantities.
pub fn smooth(
    filtered: &StateTrajectory,
    retro: &RetroTrajectory,
    sol: &RiccatiSolution,
) -> Result<StateTrajectory> {
    let n = filtered.len();
    if retro.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: retro.len(),
        });
    }
    let v_t = sol.v_true;
    let mut means = Vec::with_capacity(n);
    for k in 0..n {
        let e = filtered.cov_at(k) - v_t;
        let l = retro.lambda_at(k);
        let m = Mat2::identity() + e * l;
        let rhs = filtered.means[k] + e * retro.z[k];
        let x = m.lu().solve(&rhs).ok_or(Error::SingularCombination {
            condition: f64::INFINITY,
        })?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularCombination {
                condition: linalg::condition_number(&m),
            });
        }
        means.push(x);
    }

    let head_len = filtered.cov.head.len();
    let tail_len = retro.lambda.tail.len();
    let cov = if head_len + tail_len >= n {
        let all = (0..n)
            .map(|k| combine_covariance(&v_t, &filtered.cov_at(k), &retro.lambda_at(k)))
            .collect::<Result<Vec<_>>>()?;
        CovarianceProfile {
            steady: sol.v_smooth,
            head: all,
            tail: Vec::new(),
        }
    } else {
        let head = (0..head_len)
            .map(|k| combine_covariance(&v_t, &filtered.cov_at(k), &retro.lambda_at(k)))
            .collect::<Result<Vec<_>>>()?;
        let tail = (n - tail_len..n)
            .map(|k| combine_covariance(&v_t, &filtered.cov_at(k), &retro.lambda_at(k)))
            .collect::<Result<Vec<_>>>()?;
        CovarianceProfile {
            steady: sol.v_smooth,
            head,
            tail,
        }
    };

    Ok(StateTrajectory {
        label: Conditioning::Smoothed,
        t0: filtered.t0,
        dt: filtered.dt,
        means,
        cov,
    })
}

/// Everything the estimator produces for one record.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub filtered: StateTrajectory,
    pub retro: RetroTrajectory,
    pub smoothed: StateTrajectory,
    pub true_ref: Option<StateTrajectory>,
    /// Points outside the burn-in and the boundary windows at either end.
    pub interior: Range<usize>,
}

/// Indices of trajectory points usable for statistics: skips the record's
/// burn-in and [`BOUNDARY_WIDTH`]`/γ` at both ends.
pub fn interior_range(model: &ModelMatrices, record: &MeasurementRecord) -> Range<usize> {
    let points = record.len() + 1;
    let edge = (BOUNDARY_WIDTH / (model.gamma * record.dt)).ceil() as usize;
    let start = edge.max(record.burn_in);
    let end = points.saturating_sub(edge);
    start.min(end)..end
}

/// Runs filter, retrofilter and smoother over a record; when `with_true` the
/// two-channel reference is reconstructed from both records as well.
pub fn estimate(
    model: &ModelMatrices,
    record: &MeasurementRecord,
    sol: &RiccatiSolution,
    with_true: bool,
) -> Result<SmootherOutput> {
    let filtered = run_filter(model, record, sol)?;
    let retro = run_retrofilter(model, record, sol)?;
    let smoothed = smooth(&filtered, &retro, sol)?;
    let true_ref = if with_true {
        Some(run_true_filter(model, record, sol)?)
    } else {
        None
    };
    Ok(SmootherOutput {
        filtered,
        retro,
        smoothed,
        true_ref,
        interior: interior_range(model, record),
    })
}
