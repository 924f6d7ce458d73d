//! Purity, trace-squared deviation, squeezing and the smoothing recoveries,
//! both from covariances and from Monte-Carlo ensembles of mean trajectories.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::RiccatiSolution;
use crate::linalg::{self, Mat2, Vec2};

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `1/√det(2V/ħ)`.
pub fn purity(v: &Mat2, hbar: f64) -> Result<f64> {
    linalg::require_pd(v, "covariance")?;
    Ok(1.0 / (v * (2.0 / hbar)).determinant().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Squeezing {
    /// Smaller eigenvalue of `2V/ħ`.
    pub squeeze: f64,
    /// Larger eigenvalue of `2V/ħ`.
    pub antisqueeze: f64,
}

impl Squeezing {
    pub fn squeeze_db(&self) -> f64 {
        to_db(self.squeeze)
    }

    pub fn antisqueeze_db(&self) -> f64 {
        to_db(self.antisqueeze)
    }
}

pub fn squeezing(v: &Mat2, hbar: f64) -> Result<Squeezing> {
    linalg::require_pd(v, "covariance")?;
    let (squeeze, antisqueeze) = linalg::sym_eigenvalues(&(v * (2.0 / hbar)));
    Ok(Squeezing {
        squeeze,
        antisqueeze,
    })
}

/// Average TrSD of a Gaussian estimate with covariance `v_c` from the
/// reference state `v_t`: `(ħ/2)(|V_T|^{-1/2} − |V_C|^{-1/2})`.
pub fn trsd_theory(v_t: &Mat2, v_c: &Mat2, hbar: f64) -> Result<f64> {
    linalg::require_pd(v_t, "reference covariance")?;
    linalg::require_pd(v_c, "conditional covariance")?;
    let (det_true, det_cond) = (v_t.determinant(), v_c.determinant());
    if det_true > det_cond * (1.0 + 1e-12) {
        return Err(Error::InconsistentCovariances { det_true, det_cond });
    }
    Ok((0.5 * hbar * (det_true.powf(-0.5) - det_cond.powf(-0.5))).max(0.0))
}

/// Normalized bivariate Gaussian density `exp(−xᵀV⁻¹x/2) / (2π√|V|)`.
pub fn gaussian_density(x: &Vec2, v_inv: &Mat2, det_v: f64) -> f64 {
    (-0.5 * (x.transpose() * v_inv * x)[0]).exp() / (2.0 * PI * det_v.sqrt())
}

/// Value with a Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    /// Distance to `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr > 0.0 {
            (self.value - target).abs() / self.stderr
        } else if self.value == target {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Ok(Estimate {
            value: mean,
            stderr,
        })
    }
}

/// Number of contiguous batches used when a single series has to supply its
/// own error bar.
pub const BATCHES: usize = 20;

fn batch_means(values: &[f64], batches: usize) -> Vec<f64> {
    let size = values.len() / batches;
    if size == 0 {
        return vec![values.iter().sum::<f64>() / values.len() as f64];
    }
    values
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

/// Empirical TrSD from aligned reference and conditional mean series.
/// The error bar comes from [`BATCHES`] contiguous batch means, which
/// tolerates the time correlation of the series.
pub fn trsd_empirical(
    true_means: &[Vec2],
    cond_means: &[Vec2],
    v_t: &Mat2,
    v_c: &Mat2,
    hbar: f64,
) -> Result<Estimate> {
    if true_means.len() != cond_means.len() {
        return Err(Error::LengthMismatch {
            expected: true_means.len(),
            found: cond_means.len(),
        });
    }
    if true_means.is_empty() {
        return Err(Error::EmptySample);
    }
    let kernel = OverlapKernel::new(v_t, v_c, hbar)?;
    let overlaps: Vec<f64> = true_means
        .iter()
        .zip(cond_means)
        .map(|(t, c)| kernel.density(&(t - c)))
        .collect();
    let batches = Estimate::from_samples(&batch_means(&overlaps, BATCHES))?;
    Ok(Estimate {
        value: kernel.trsd(batches.value),
        stderr: kernel.overlap_scale() * batches.stderr,
    })
}

/// Pieces of the empirical TrSD for one `(V_T, V_C)` pair.
#[derive(Debug, Clone, Copy)]
pub struct OverlapKernel {
    inv: Mat2,
    det: f64,
    offset: f64,
    hbar: f64,
}

impl OverlapKernel {
    pub fn new(v_t: &Mat2, v_c: &Mat2, hbar: f64) -> Result<Self> {
        linalg::require_pd(v_t, "reference covariance")?;
        linalg::require_pd(v_c, "conditional covariance")?;
        let sum = v_t + v_c;
        let inv = sum
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite { what: "V_T + V_C" })?;
        Ok(OverlapKernel {
            inv,
            det: sum.determinant(),
            offset: 0.5 * hbar * (v_t.determinant().powf(-0.5) + v_c.determinant().powf(-0.5)),
            hbar,
        })
    }

    #[inline]
    pub fn density(&self, diff: &Vec2) -> f64 {
        gaussian_density(diff, &self.inv, self.det)
    }

    fn overlap_scale(&self) -> f64 {
        4.0 * PI * self.hbar
    }

    /// TrSD given the mean overlap density.
    pub fn trsd(&self, mean_density: f64) -> f64 {
        self.offset - self.overlap_scale() * mean_density
    }
}

/// Purity and squeezing of one conditional state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub purity: f64,
    pub squeeze: f64,
    pub antisqueeze: f64,
}

impl StateMetrics {
    pub fn of(v: &Mat2, hbar: f64) -> Result<Self> {
        let sq = squeezing(v, hbar)?;
        Ok(StateMetrics {
            purity: purity(v, hbar)?,
            squeeze: sq.squeeze,
            antisqueeze: sq.antisqueeze,
        })
    }

    pub fn squeeze_db(&self) -> f64 {
        to_db(self.squeeze)
    }

    pub fn antisqueeze_db(&self) -> f64 {
        to_db(self.antisqueeze)
    }
}

/// Improvement of the smoothed over the filtered estimate; positive means
/// smoothing helps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recoveries {
    /// `P(ρ_S) − P(ρ_F)`.
    pub purity: f64,
    /// `D(ρ_F) − D(ρ_S)`.
    pub trsd: f64,
    /// `S(ρ_F) − S(ρ_S)`.
    pub squeeze: f64,
    /// `A(ρ_F) − A(ρ_S)`.
    pub antisqueeze: f64,
}

impl Recoveries {
    pub fn between(
        filtered: &StateMetrics,
        smoothed: &StateMetrics,
        trsd_f: f64,
        trsd_s: f64,
    ) -> Self {
        Recoveries {
            purity: smoothed.purity - filtered.purity,
            trsd: trsd_f - trsd_s,
            squeeze: filtered.squeeze - smoothed.squeeze,
            antisqueeze: filtered.antisqueeze - smoothed.antisqueeze,
        }
    }

    pub fn get(&self, kind: RecoveryKind) -> f64 {
        match kind {
            RecoveryKind::Purity => self.purity,
            RecoveryKind::Trsd => self.trsd,
            RecoveryKind::Squeeze => self.squeeze,
            RecoveryKind::Antisqueeze => self.antisqueeze,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    Purity,
    Trsd,
    Squeeze,
    Antisqueeze,
}

impl RecoveryKind {
    pub const ALL: [RecoveryKind; 4] = [
        RecoveryKind::Purity,
        RecoveryKind::Trsd,
        RecoveryKind::Squeeze,
        RecoveryKind::Antisqueeze,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RecoveryKind::Purity => "recovery_p",
            RecoveryKind::Trsd => "recovery_d",
            RecoveryKind::Squeeze => "recovery_s",
            RecoveryKind::Antisqueeze => "recovery_a",
        }
    }
}

/// Metrics of one parameter point: covariance-based values, plus the
/// Monte-Carlo reconstruction when one was run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub true_state: StateMetrics,
    pub filtered: StateMetrics,
    pub smoothed: StateMetrics,
    pub trsd_f: f64,
    pub trsd_s: f64,
    pub recoveries: Recoveries,
    pub v_true: Mat2,
    pub v_filt: Mat2,
    pub v_smooth: Mat2,
    pub v_unc: Mat2,
    pub empirical: Option<EmpiricalMetrics>,
}

impl MetricsReport {
    pub fn theory(sol: &RiccatiSolution, hbar: f64) -> Result<Self> {
        let true_state = StateMetrics::of(&sol.v_true, hbar)?;
        let filtered = StateMetrics::of(&sol.v_filt, hbar)?;
        let smoothed = StateMetrics::of(&sol.v_smooth, hbar)?;
        let trsd_f = trsd_theory(&sol.v_true, &sol.v_filt, hbar)?;
        let trsd_s = trsd_theory(&sol.v_true, &sol.v_smooth, hbar)?;
        Ok(MetricsReport {
            true_state,
            filtered,
            smoothed,
            trsd_f,
            trsd_s,
            recoveries: Recoveries::between(&filtered, &smoothed, trsd_f, trsd_s),
            v_true: sol.v_true,
            v_filt: sol.v_filt,
            v_smooth: sol.v_smooth,
            v_unc: sol.v_unc,
            empirical: None,
        })
    }

    /// `R_P / (P(ρ_T) − P(ρ_F))`, or 0 when filtering is already optimal.
    pub fn purity_recovery_fraction(&self) -> f64 {
        let gap = self.true_state.purity - self.filtered.purity;
        if gap > 0.0 {
            self.recoveries.purity / gap
        } else {
            0.0
        }
    }

    /// `R_S / (S(ρ_F) − S(ρ_T))`, or 0 when filtering is already optimal.
    pub fn squeeze_recovery_fraction(&self) -> f64 {
        let gap = self.filtered.squeeze - self.true_state.squeeze;
        if gap > 0.0 {
            self.recoveries.squeeze / gap
        } else {
            0.0
        }
    }
}

/// Symmetric 2×2 matrix estimate, stored as `(xx, xp, pp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub xx: Estimate,
    pub xp: Estimate,
    pub pp: Estimate,
}

impl CovEstimate {
    pub fn value(&self) -> Mat2 {
        Mat2::new(self.xx.value, self.xp.value, self.xp.value, self.pp.value)
    }

    pub fn stderr(&self) -> Mat2 {
        Mat2::new(
            self.xx.stderr,
            self.xp.stderr,
            self.xp.stderr,
            self.pp.stderr,
        )
    }

    fn shifted(&self, by: &Mat2, sign: f64) -> Self {
        let f = |e: Estimate, b: f64| Estimate {
            value: b + sign * e.value,
            stderr: e.stderr,
        };
        CovEstimate {
            xx: f(self.xx, by[(0, 0)]),
            xp: f(self.xp, by[(0, 1)]),
            pp: f(self.pp, by[(1, 1)]),
        }
    }

    /// Largest entrywise distance to `target`, in standard errors.
    pub fn max_z(&self, target: &Mat2) -> f64 {
        self.xx
            .z_score(target[(0, 0)])
            .max(self.xp.z_score(target[(0, 1)]))
            .max(self.pp.z_score(target[(1, 1)]))
    }

    /// Largest entrywise relative deviation from `target`.
    pub fn max_rel(&self, target: &Mat2) -> f64 {
        let rel = |e: &Estimate, t: f64| (e.value - t).abs() / t.abs();
        rel(&self.xx, target[(0, 0)])
            .max(rel(&self.xp, target[(0, 1)]))
            .max(rel(&self.pp, target[(1, 1)]))
    }
}

/// Running sums over the usable points of one record.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: [f64; 3],
}

impl Moments {
    #[inline]
    fn push(&mut self, v: &Vec2) {
        self.n += 1;
        self.sum[0] += v[0] * v[0];
        self.sum[1] += v[0] * v[1];
        self.sum[2] += v[1] * v[1];
    }

    fn mean(&self) -> [f64; 3] {
        let n = self.n as f64;
        [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n]
    }
}

/// Per-record averages over the usable points of one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSummary {
    pub points: usize,
    /// `E[e_F e_Fᵀ]`, `e_F = x_F − x_T`, as `(xx, xp, pp)`.
    pub err_f: [f64; 3],
    pub err_s: [f64; 3],
    /// Second moments about zero of `x_T` and `x_S`.
    pub mom_t: [f64; 3],
    pub mom_s: [f64; 3],
    /// Mean overlap densities entering the empirical TrSD.
    pub overlap_f: f64,
    pub overlap_s: f64,
}

/// Accumulates one record's statistics point by point.
#[derive(Debug, Clone)]
pub struct RecordAccumulator {
    kernel_f: OverlapKernel,
    kernel_s: OverlapKernel,
    err_f: Moments,
    err_s: Moments,
    mom_t: Moments,
    mom_s: Moments,
    overlap_f: f64,
    overlap_s: f64,
}

impl RecordAccumulator {
    pub fn new(sol: &RiccatiSolution, hbar: f64) -> Result<Self> {
        Ok(RecordAccumulator {
            kernel_f: OverlapKernel::new(&sol.v_true, &sol.v_filt, hbar)?,
            kernel_s: OverlapKernel::new(&sol.v_true, &sol.v_smooth, hbar)?,
            err_f: Moments::default(),
            err_s: Moments::default(),
            mom_t: Moments::default(),
            mom_s: Moments::default(),
            overlap_f: 0.0,
            overlap_s: 0.0,
        })
    }

    #[inline]
    pub fn push(&mut self, x_t: &Vec2, x_f: &Vec2, x_s: &Vec2) {
        let e_f = x_f - x_t;
        let e_s = x_s - x_t;
        self.err_f.push(&e_f);
        self.err_s.push(&e_s);
        self.mom_t.push(x_t);
        self.mom_s.push(x_s);
        self.overlap_f += self.kernel_f.density(&e_f);
        self.overlap_s += self.kernel_s.density(&e_s);
    }

    pub fn finish(&self) -> Result<RecordSummary> {
        let n = self.err_f.n;
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(RecordSummary {
            points: n,
            err_f: self.err_f.mean(),
            err_s: self.err_s.mean(),
            mom_t: self.mom_t.mean(),
            mom_s: self.mom_s.mean(),
            overlap_f: self.overlap_f / n as f64,
            overlap_s: self.overlap_s / n as f64,
        })
    }
}

/// Monte-Carlo reconstruction of the covariances and TrSDs from an ensemble
/// of records. Error bars are standard errors across records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMetrics {
    pub records: usize,
    pub points_per_record: usize,
    /// `Ṽ_F = E[e_F e_Fᵀ] + V_T`.
    pub v_filt: CovEstimate,
    /// `Ṽ_S = E[e_S e_Sᵀ] + V_T`.
    pub v_smooth: CovEstimate,
    /// `Ṽ_T = V_unc − E[x_T x_Tᵀ]`.
    pub v_true: CovEstimate,
    /// `E[x_S x_Sᵀ]`, expected to equal `V_unc − V_S`.
    pub smoothed_mean_cov: CovEstimate,
    /// `E‖x_F − x_T‖²`.
    pub mse_f: Estimate,
    pub mse_s: Estimate,
    pub trsd_f: Estimate,
    pub trsd_s: Estimate,
    /// Purity and squeezing of the reconstructed `Ṽ_F`, `Ṽ_S`.
    pub filtered: StateMetrics,
    pub smoothed: StateMetrics,
    pub recoveries: Recoveries,
    /// Standard errors of the recoveries, from per-record reconstructions.
    pub recoveries_stderr: Recoveries,
}

fn cov_estimate(
    summaries: &[RecordSummary],
    pick: impl Fn(&RecordSummary) -> [f64; 3],
) -> Result<CovEstimate> {
    let col = |i: usize| -> Result<Estimate> {
        let v: Vec<f64> = summaries.iter().map(|s| pick(s)[i]).collect();
        Estimate::from_samples(&v)
    };
    Ok(CovEstimate {
        xx: col(0)?,
        xp: col(1)?,
        pp: col(2)?,
    })
}

fn sym(m: [f64; 3]) -> Mat2 {
    Mat2::new(m[0], m[1], m[1], m[2])
}

impl EmpiricalMetrics {
    pub fn from_records(
        summaries: &[RecordSummary],
        sol: &RiccatiSolution,
        hbar: f64,
    ) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::EmptySample);
        }
        let kernel_f = OverlapKernel::new(&sol.v_true, &sol.v_filt, hbar)?;
        let kernel_s = OverlapKernel::new(&sol.v_true, &sol.v_smooth, hbar)?;
        let v_t = sol.v_true;

        let err_f = cov_estimate(summaries, |s| s.err_f)?;
        let err_s = cov_estimate(summaries, |s| s.err_s)?;
        let mom_t = cov_estimate(summaries, |s| s.mom_t)?;
        let mom_s = cov_estimate(summaries, |s| s.mom_s)?;
        let trace = |s: &RecordSummary, which: fn(&RecordSummary) -> [f64; 3]| {
            let m = which(s);
            m[0] + m[2]
        };
        let mse_f = Estimate::from_samples(
            &summaries
                .iter()
                .map(|s| trace(s, |r| r.err_f))
                .collect::<Vec<_>>(),
        )?;
        let mse_s = Estimate::from_samples(
            &summaries
                .iter()
                .map(|s| trace(s, |r| r.err_s))
                .collect::<Vec<_>>(),
        )?;
        let trsd = |kernel: &OverlapKernel, pick: fn(&RecordSummary) -> f64| -> Result<Estimate> {
            let o = Estimate::from_samples(&summaries.iter().map(pick).collect::<Vec<_>>())?;
            Ok(Estimate {
                value: kernel.trsd(o.value),
                stderr: kernel.overlap_scale() * o.stderr,
            })
        };
        let trsd_f = trsd(&kernel_f, |s| s.overlap_f)?;
        let trsd_s = trsd(&kernel_s, |s| s.overlap_s)?;

        let v_filt = err_f.shifted(&v_t, 1.0);
        let v_smooth = err_s.shifted(&v_t, 1.0);
        let filtered = StateMetrics::of(&v_filt.value(), hbar)?;
        let smoothed = StateMetrics::of(&v_smooth.value(), hbar)?;
        let recoveries = Recoveries::between(&filtered, &smoothed, trsd_f.value, trsd_s.value);

        // Spread of per-record recoveries; records whose reconstruction is
        // not positive-definite are skipped.
        let per_record: Vec<Recoveries> = summaries
            .iter()
            .filter_map(|s| {
                let f = StateMetrics::of(&(sym(s.err_f) + v_t), hbar).ok()?;
                let sm = StateMetrics::of(&(sym(s.err_s) + v_t), hbar).ok()?;
                Some(Recoveries::between(
                    &f,
                    &sm,
                    kernel_f.trsd(s.overlap_f),
                    kernel_s.trsd(s.overlap_s),
                ))
            })
            .collect();
        let spread = |kind: RecoveryKind| -> f64 {
            let v: Vec<f64> = per_record.iter().map(|r| r.get(kind)).collect();
            Estimate::from_samples(&v)
                .map(|e| e.stderr)
                .unwrap_or(f64::NAN)
        };
        let recoveries_stderr = Recoveries {
            purity: spread(RecoveryKind::Purity),
            trsd: spread(RecoveryKind::Trsd),
            squeeze: spread(RecoveryKind::Squeeze),
            antisqueeze: spread(RecoveryKind::Antisqueeze),
        };

        Ok(EmpiricalMetrics {
            records: summaries.len(),
            points_per_record: summaries.iter().map(|s| s.points).min().unwrap_or(0),
            v_filt,
            v_smooth,
            v_true: mom_t.shifted(&sol.v_unc, -1.0),
            smoothed_mean_cov: mom_s,
            mse_f,
            mse_s,
            trsd_f,
            trsd_s,
            filtered,
            smoothed,
            recoveries,
            recoveries_stderr,
        })
    }
}
