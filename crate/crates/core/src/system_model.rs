//! Linear Langevin model of a degenerate OPO whose output is split between
//! two homodyne detectors ("Alice" on the transmitted port of a variable
//! beam splitter, "Bob" on the reflected port).
//!
//! State ordering is `x̂ = (x, p)ᵀ`; the ten noise inputs are the `(x, p)`
//! quadratures of five vacuum modes in the order: intracavity loss, output
//! coupler, beam-splitter open port, Alice's path loss, Bob's path loss.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Row2};

pub type NoiseInput = SMatrix<f64, 2, 10>;
pub type NoiseRow = SMatrix<f64, 1, 10>;

/// Physical knobs of the experiment. Angles are stored in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity decay half-rate γ (rad/s).
    pub gamma: f64,
    /// Normalized pump amplitude ξ, below threshold.
    pub xi: f64,
    /// Energy transmittance T of the variable beam splitter (Alice's share).
    pub transmittance: f64,
    /// Path loss fraction on Alice's arm.
    pub loss_a: f64,
    /// Path loss fraction on Bob's arm.
    pub loss_b: f64,
    /// Cavity escape efficiency η_c = γ_Tc / (γ_Tc + γ_Lc).
    pub escape_eff: f64,
    pub theta_a: f64,
    pub theta_b: f64,
    pub hbar: f64,
}

/// Detection-chain figures for one homodyne arm, as tabulated for the
/// experiment. `1 − L = ζ²·η_prop·η_elec·η_PD`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmEfficiency {
    pub visibility: f64,
    pub propagation_loss: f64,
    /// Electronic-noise to shot-noise power ratio, dB (negative).
    pub clearance_db: f64,
    pub photodiode_qe: f64,
}

impl ArmEfficiency {
    pub const ALICE: ArmEfficiency = ArmEfficiency {
        visibility: 0.992,
        propagation_loss: 0.084,
        clearance_db: -25.4,
        photodiode_qe: 0.99,
    };
    pub const BOB: ArmEfficiency = ArmEfficiency {
        visibility: 0.993,
        propagation_loss: 0.088,
        clearance_db: -25.6,
        photodiode_qe: 0.99,
    };

    pub fn transmission(&self) -> f64 {
        let electronic = 1.0 - 10f64.powf(self.clearance_db / 10.0);
        self.visibility.powi(2) * (1.0 - self.propagation_loss) * electronic * self.photodiode_qe
    }

    pub fn loss(&self) -> f64 {
        1.0 - self.transmission()
    }
}

/// OPO output-coupler transmission and intracavity loss.
pub const OUTPUT_COUPLER: f64 = 0.100;
pub const INTRACAVITY_LOSS: f64 = 0.00282;

impl SystemParams {
    /// Values of the reported experiment: ξ = 0.70, γ/2π = 5 MHz, table losses,
    /// θ_A = 65°, θ_B = 135°, ħ = 1, balanced splitter.
    pub fn paper_defaults() -> Self {
        SystemParams {
            gamma: 2.0 * PI * 5.0e6,
            xi: 0.70,
            transmittance: 0.5,
            loss_a: ArmEfficiency::ALICE.loss(),
            loss_b: ArmEfficiency::BOB.loss(),
            escape_eff: OUTPUT_COUPLER / (OUTPUT_COUPLER + INTRACAVITY_LOSS),
            theta_a: 65f64.to_radians(),
            theta_b: 135f64.to_radians(),
            hbar: 1.0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(
                "gamma",
                self.gamma,
                "must be positive and finite",
            ));
        }
        if !(0.0..1.0).contains(&self.xi) {
            return Err(Error::invalid(
                "xi",
                self.xi,
                "pump must be below threshold, 0 <= xi < 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.transmittance) {
            return Err(Error::invalid(
                "transmittance",
                self.transmittance,
                "must lie in [0, 1]",
            ));
        }
        for (name, v) in [("loss_a", self.loss_a), ("loss_b", self.loss_b)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(name, v, "path loss must lie in [0, 1)"));
            }
        }
        if !(self.escape_eff > 0.0 && self.escape_eff <= 1.0) {
            return Err(Error::invalid(
                "escape_eff",
                self.escape_eff,
                "must lie in (0, 1]",
            ));
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(Error::invalid(
                "hbar",
                self.hbar,
                "must be positive and finite",
            ));
        }
        for (name, v) in [("theta_a", self.theta_a), ("theta_b", self.theta_b)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, v, "angle must be finite"));
            }
        }
        let (ea, eb) = self.raw_efficiencies();
        if ea + eb > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "eta_a + eta_b",
                ea + eb,
                "total efficiency exceeds 1",
            ));
        }
        Ok(())
    }

    fn raw_efficiencies(&self) -> (f64, f64) {
        (
            self.escape_eff * (1.0 - self.loss_a) * self.transmittance,
            self.escape_eff * (1.0 - self.loss_b) * (1.0 - self.transmittance),
        )
    }

    /// Alice's efficiency without the beam-splitter factor, η_A / T.
    pub fn alice_ceiling(&self) -> f64 {
        self.escape_eff * (1.0 - self.loss_a)
    }

    pub fn bob_ceiling(&self) -> f64 {
        self.escape_eff * (1.0 - self.loss_b)
    }

    /// Returns a copy with the beam splitter set so that η_A equals `eta_a`.
    pub fn with_eta_a(mut self, eta_a: f64) -> Result<Self> {
        let ceiling = self.alice_ceiling();
        let t = eta_a / ceiling;
        if !(0.0..=1.0 + 1e-12).contains(&t) {
            return Err(Error::invalid(
                "eta_a",
                eta_a,
                "not reachable with the configured losses",
            ));
        }
        self.transmittance = t.min(1.0);
        self.validated()
    }

    pub fn with_angles_deg(mut self, theta_a_deg: f64, theta_b_deg: f64) -> Self {
        self.theta_a = theta_a_deg.to_radians();
        self.theta_b = theta_b_deg.to_radians();
        self
    }

    pub fn cavity_loss_rate(&self) -> f64 {
        2.0 * self.gamma * (1.0 - self.escape_eff)
    }

    pub fn output_coupler_rate(&self) -> f64 {
        2.0 * self.gamma * self.escape_eff
    }

    pub fn to_param_string(&self) -> String {
        format!(
            "gamma = {:e}\nxi = {}\ntransmittance = {}\nloss_a = {}\nloss_b = {}\nescape_eff = {}\ntheta_a_deg = {}\ntheta_b_deg = {}\nhbar = {}\n",
            self.gamma,
            self.xi,
            self.transmittance,
            self.loss_a,
            self.loss_b,
            self.escape_eff,
            self.theta_a.to_degrees(),
            self.theta_b.to_degrees(),
            self.hbar
        )
    }

    /// Parses a flat `key = value` parameter file. Unlisted keys keep the
    /// value of the `preset` (only `"paper"` is known; it is also the
    /// fallback). `eta_a`, when given, overrides `transmittance`.
    pub fn from_param_str(text: &str) -> Result<Self> {
        let file: ParamFile = toml::from_str(text)?;
        file.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_param_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    preset: Option<String>,
    gamma: Option<f64>,
    xi: Option<f64>,
    transmittance: Option<f64>,
    eta_a: Option<f64>,
    loss_a: Option<f64>,
    loss_b: Option<f64>,
    escape_eff: Option<f64>,
    theta_a_deg: Option<f64>,
    theta_b_deg: Option<f64>,
    hbar: Option<f64>,
}

impl ParamFile {
    fn resolve(self) -> Result<SystemParams> {
        let mut p = match self.preset.as_deref() {
            None | Some("paper") | Some("paper_defaults") => SystemParams::paper_defaults(),
            Some(other) => return Err(Error::Format(format!("unknown preset `{other}`"))),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { p.$field = v; })* };
        }
        set!(gamma, xi, transmittance, loss_a, loss_b, escape_eff, hbar);
        if let Some(d) = self.theta_a_deg {
            p.theta_a = d.to_radians();
        }
        if let Some(d) = self.theta_b_deg {
            p.theta_b = d.to_radians();
        }
        match self.eta_a {
            Some(eta) => p.with_eta_a(eta),
            None => p.validated(),
        }
    }
}

/// Overall detection efficiencies `(η_A, η_B)`.
pub fn efficiencies(params: &SystemParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(params.raw_efficiencies())
}

/// One homodyne channel of the linear model: `y dt = C x dt + dw`,
/// `E[dw²] = R dt`, noise cross-covariance with the process noise `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub c: Row2,
    pub r: f64,
    pub s: Row2,
}

impl Channel {
    pub fn silent() -> Self {
        Channel {
            c: Row2::zeros(),
            r: 1.0,
            s: Row2::zeros(),
        }
    }

    /// Optimal gain `K[V] = (V Cᵀ + Sᵀ) R⁻¹`.
    #[inline]
    pub fn gain(&self, v: &Mat2) -> crate::linalg::Vec2 {
        (v * self.c.transpose() + self.s.transpose()) / self.r
    }

    pub fn is_silent(&self) -> bool {
        self.c.iter().all(|&x| x == 0.0)
    }
}

/// The constant matrices of
/// `dx̂ = A x̂ dt + B dv̂`, `ŷ_m dt = C_m x̂ dt + D_m dv̂` and the induced noise
/// covariances `Q = BBᵀ`, `R_m = D_m D_mᵀ`, `S_m = D_m Bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub a_mat: Mat2,
    pub b_mat: NoiseInput,
    pub c_a: Row2,
    pub c_b: Row2,
    pub d_a: NoiseRow,
    pub d_b: NoiseRow,
    pub q_mat: Mat2,
    pub r_a: f64,
    pub r_b: f64,
    pub s_a: Row2,
    pub s_b: Row2,
    pub hbar: f64,
    /// Characteristic rate used for boundary windows and burn-in (γ).
    pub gamma: f64,
}

impl ModelMatrices {
    /// A model given directly by its estimator-facing matrices. `B` and `D`
    /// are left zero; only `A`, `Q`, `C`, `R`, `S` drive estimation.
    pub fn from_covariances(
        a: Mat2,
        q: Mat2,
        alice: Channel,
        bob: Channel,
        hbar: f64,
        gamma: f64,
    ) -> Self {
        ModelMatrices {
            a_mat: a,
            b_mat: NoiseInput::zeros(),
            c_a: alice.c,
            c_b: bob.c,
            d_a: NoiseRow::zeros(),
            d_b: NoiseRow::zeros(),
            q_mat: q,
            r_a: alice.r,
            r_b: bob.r,
            s_a: alice.s,
            s_b: bob.s,
            hbar,
            gamma,
        }
    }

    pub fn alice(&self) -> Channel {
        Channel {
            c: self.c_a,
            r: self.r_a,
            s: self.s_a,
        }
    }

    pub fn bob(&self) -> Channel {
        Channel {
            c: self.c_b,
            r: self.r_b,
            s: self.s_b,
        }
    }

    /// Largest |Re λ| of the drift; bounds the integrator step.
    pub fn fastest_rate(&self) -> f64 {
        crate::linalg::eigenvalues(&self.a_mat)
            .iter()
            .map(|&(re, im)| (re * re + im * im).sqrt())
            .fold(0.0, f64::max)
    }

    /// Whether the noise correlations are the quantum ones, `S_m = −(ħ/2) C_m`,
    /// so that covariances must obey the uncertainty bound.
    pub fn is_quantum(&self) -> bool {
        let tol = 1e-12 * (1.0 + self.c_a.amax().max(self.c_b.amax()));
        let ha = self.hbar / 2.0;
        (self.s_a + self.c_a * ha).amax() <= tol && (self.s_b + self.c_b * ha).amax() <= tol
    }
}

/// Builds the model matrices from physical parameters.
pub fn build_model(params: &SystemParams) -> Result<ModelMatrices> {
    params.validate()?;
    let p = params;
    Ok(assemble(&Realization {
        gamma: p.gamma,
        xi: p.xi,
        escape_eff: p.escape_eff,
        transmittance: p.transmittance,
        loss_a: p.loss_a,
        loss_b: p.loss_b,
        theta_a: p.theta_a,
        theta_b: p.theta_b,
        hbar: p.hbar,
    }))
}

/// Estimator-level description: only γ, ξ, the two efficiencies and the
/// angles enter `A`, `C_m`, `Q`, `R_m`, `S_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub gamma: f64,
    pub xi: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub theta_a: f64,
    pub theta_b: f64,
    pub hbar: f64,
}

impl EffectiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(
                "gamma",
                self.gamma,
                "must be positive and finite",
            ));
        }
        if !(0.0..1.0).contains(&self.xi) {
            return Err(Error::invalid(
                "xi",
                self.xi,
                "pump must be below threshold, 0 <= xi < 1",
            ));
        }
        for (name, v) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, v, "efficiency must lie in [0, 1]"));
            }
        }
        if self.eta_a + self.eta_b > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "eta_a + eta_b",
                self.eta_a + self.eta_b,
                "total efficiency exceeds 1",
            ));
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(Error::invalid(
                "hbar",
                self.hbar,
                "must be positive and finite",
            ));
        }
        Ok(())
    }

    /// Builds the model through a lossless-cavity realization with equal
    /// path losses `1 − (η_A + η_B)` on both arms.
    pub fn build(&self) -> Result<ModelMatrices> {
        self.validate()?;
        let total = (self.eta_a + self.eta_b).min(1.0);
        let transmittance = if total > 0.0 { self.eta_a / total } else { 0.5 };
        let loss = 1.0 - total;
        Ok(assemble(&Realization {
            gamma: self.gamma,
            xi: self.xi,
            escape_eff: 1.0,
            transmittance,
            loss_a: loss,
            loss_b: loss,
            theta_a: self.theta_a,
            theta_b: self.theta_b,
            hbar: self.hbar,
        }))
    }
}

impl From<&SystemParams> for EffectiveParams {
    fn from(p: &SystemParams) -> Self {
        let (eta_a, eta_b) = p.raw_efficiencies();
        EffectiveParams {
            gamma: p.gamma,
            xi: p.xi,
            eta_a,
            eta_b,
            theta_a: p.theta_a,
            theta_b: p.theta_b,
            hbar: p.hbar,
        }
    }
}

struct Realization {
    gamma: f64,
    xi: f64,
    escape_eff: f64,
    transmittance: f64,
    loss_a: f64,
    loss_b: f64,
    theta_a: f64,
    theta_b: f64,
    hbar: f64,
}

fn assemble(p: &Realization) -> ModelMatrices {
    let hbar = p.hbar;
    let gamma = p.gamma;
    let t = p.transmittance;
    let (la, lb) = (p.loss_a, p.loss_b);
    let eta_a = p.escape_eff * (1.0 - la) * t;
    let eta_b = p.escape_eff * (1.0 - lb) * (1.0 - t);

    let a_mat = Mat2::new(-gamma * (1.0 - p.xi), 0.0, 0.0, -gamma * (1.0 + p.xi));

    let root = (hbar / 2.0).sqrt();
    let g_lc = (2.0 * gamma * (1.0 - p.escape_eff)).sqrt();
    let g_tc = (2.0 * gamma * p.escape_eff).sqrt();
    let mut b_mat = NoiseInput::zeros();
    b_mat[(0, 0)] = root * g_lc;
    b_mat[(1, 1)] = root * g_lc;
    b_mat[(0, 2)] = root * g_tc;
    b_mat[(1, 3)] = root * g_tc;

    let unit = |theta: f64| Row2::new(theta.cos(), theta.sin());
    let m_a = unit(p.theta_a);
    let m_b = unit(p.theta_b);
    let c_a = m_a * (4.0 * gamma * eta_a / hbar).sqrt();
    let c_b = m_b * (4.0 * gamma * eta_b / hbar).sqrt();

    // Coefficients d_j for noise modes j = 2..5, signs as derived from the
    // beam-splitter conventions.
    let d_alice = [
        -((1.0 - la) * t).sqrt(),
        -((1.0 - la) * (1.0 - t)).sqrt(),
        -la.sqrt(),
        0.0,
    ];
    let d_bob = [
        -((1.0 - lb) * (1.0 - t)).sqrt(),
        ((1.0 - lb) * t).sqrt(),
        0.0,
        -lb.sqrt(),
    ];
    let noise_row = |d: [f64; 4], m: Row2| {
        let mut row = NoiseRow::zeros();
        for (j, dj) in d.iter().enumerate() {
            row[(0, 2 + 2 * j)] = dj * m[0];
            row[(0, 3 + 2 * j)] = dj * m[1];
        }
        row
    };

    ModelMatrices {
        a_mat,
        b_mat,
        c_a,
        c_b,
        d_a: noise_row(d_alice, m_a),
        d_b: noise_row(d_bob, m_b),
        q_mat: Mat2::identity() * (hbar * gamma),
        r_a: 1.0,
        r_b: 1.0,
        s_a: c_a * (-hbar / 2.0),
        s_b: c_b * (-hbar / 2.0),
        hbar,
        gamma,
    }
}
