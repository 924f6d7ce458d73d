//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use qsmooth_core::linalg::{Mat2, Row2, Vec2};
use qsmooth_core::system_model::{Channel, ModelMatrices};
use qsmooth_core::MeasurementRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `a X + X aᵀ + q = 0` for symmetric `X` through the 3×3 system in
/// `(x11, x12, x22)`.
pub fn lyapunov(a: &Mat2, q: &Mat2) -> Mat2 {
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let m = nalgebra::Matrix3::new(
        2.0 * a11,
        2.0 * a12,
        0.0,
        a21,
        a11 + a22,
        a12,
        0.0,
        2.0 * a21,
        2.0 * a22,
    );
    let rhs = nalgebra::Vector3::new(-q[(0, 0)], -q[(0, 1)], -q[(1, 1)]);
    let x = m.lu().solve(&rhs).expect("Lyapunov operator is invertible");
    Mat2::new(x[0], x[1], x[1], x[2])
}

/// Stabilizing solution of `AV + VAᵀ + Q − Σ (VCᵀ+Sᵀ)R⁻¹(CV+S) = 0` by
/// Newton–Kleinman iteration on the decorrelated form. Requires
/// `A − Σ SᵀR⁻¹C` Hurwitz.
pub fn kleinman(a: &Mat2, q: &Mat2, channels: &[Channel]) -> Mat2 {
    let mut a_t = *a;
    let mut q_t = *q;
    let mut info = Mat2::zeros();
    for ch in channels {
        a_t -= ch.s.transpose() * ch.c / ch.r;
        q_t -= ch.s.transpose() * ch.s / ch.r;
        info += ch.c.transpose() * ch.c / ch.r;
    }
    // V = 0 is a stabilizing start whenever the decorrelated drift is
    // Hurwitz, which holds for S = 0.
    let mut v = Mat2::zeros();
    for _ in 0..100 {
        let closed = a_t - v * info;
        let next = lyapunov(&closed, &(q_t + v * info * v));
        let done = (next - v).abs().max() <= 1e-15 * v.abs().max();
        v = (next + next.transpose()) * 0.5;
        if done {
            break;
        }
    }
    v
}

/// Output of the two-filter reference smoother.
pub struct TwoFilter {
    pub v_true: Mat2,
    pub x_f: Vec<Vec2>,
    pub x_s: Vec<Vec2>,
}

/// Classical two-filter smoother for the reference mean `x_T`, treated as the
/// Gauss–Markov process `dx_T = A x_T dt + K_A dw_A + K_B dw_B` observed
/// through `y_A dt = C_A x_T dt + dw_A`. Forward: covariance-form Kalman
/// filter of the error `P = V_F − V_T` with correlated-noise gain
/// `P C_Aᵀ/R_A + K_A`. Backward: information filter `(Y, s)` of the
/// decorrelated system `dx = Ā x dt + K_A y dt + K_B dw_B`. Combined as
/// `x_S = (P⁻¹ + Y)⁻¹ (P⁻¹ x_F + s)`. Each recursion uses the same explicit
/// step as the estimator.
pub fn two_filter(model: &ModelMatrices, record: &MeasurementRecord) -> TwoFilter {
    let alice = model.alice();
    let bob = model.bob();
    let a = model.a_mat;
    let dt = record.dt;
    let n = record.len();

    let v_true = kleinman(&a, &model.q_mat, &[alice, bob]);
    let v_unc = lyapunov(&a, &model.q_mat);
    let k_a = (v_true * alice.c.transpose() + alice.s.transpose()) / alice.r;
    let k_b = (v_true * bob.c.transpose() + bob.s.transpose()) / bob.r;
    let a_bar = a - k_a * alice.c;
    let q_bar = k_b * k_b.transpose() * bob.r;
    let c: Row2 = alice.c;
    let r = alice.r;
    let info = c.transpose() * c / r;

    // Forward pass.
    let mut p = v_unc - v_true;
    let mut x = Vec2::zeros();
    let mut x_f = Vec::with_capacity(n + 1);
    let mut p_f = Vec::with_capacity(n + 1);
    for &y in &record.y_a {
        x_f.push(x);
        p_f.push(p);
        let gain = p * c.transpose() / r + k_a;
        x += a * x * dt + gain * ((y - (c * x)[0]) * dt);
        let dp = a_bar * p + p * a_bar.transpose() + q_bar - p * info * p;
        p += dp * dt;
        p = (p + p.transpose()) * 0.5;
    }
    x_f.push(x);
    p_f.push(p);

    // Backward pass.
    let mut y_info = vec![Mat2::zeros(); n + 1];
    let mut s = vec![Vec2::zeros(); n + 1];
    for k in (0..n).rev() {
        let (yk, sk) = (y_info[k + 1], s[k + 1]);
        let u = k_a * record.y_a[k];
        let ds =
            (a_bar - q_bar * yk).transpose() * sk - yk * u + c.transpose() * (record.y_a[k] / r);
        s[k] = sk + ds * dt;
        let dy = yk * a_bar + a_bar.transpose() * yk - yk * q_bar * yk + info;
        let next = yk + dy * dt;
        y_info[k] = (next + next.transpose()) * 0.5;
    }

    let x_s = (0..=n)
        .map(|k| {
            let p_inv = p_f[k]
                .try_inverse()
                .expect("forward error covariance is invertible");
            let total = (p_inv + y_info[k])
                .try_inverse()
                .expect("information is positive");
            total * (p_inv * x_f[k] + s[k])
        })
        .collect();
    TwoFilter { v_true, x_f, x_s }
}

/// Random stable model with `S = 0` and generic `Q`, `R`: a rotated and
/// sheared diagonal drift with rates in `[0.3, 3]`.
pub fn random_classical_model(seed: u64) -> ModelMatrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let (l1, l2) = (u(0.3, 3.0), u(0.3, 3.0));
    let t = Mat2::new(1.0, u(-0.8, 0.8), u(-0.8, 0.8), 1.0);
    let a = t * Mat2::new(-l1, 0.0, 0.0, -l2) * t.try_inverse().unwrap();
    let l = Mat2::new(u(0.2, 1.5), 0.0, u(-1.0, 1.0), u(0.2, 1.5));
    let q = l * l.transpose();
    let alice = Channel {
        c: Row2::new(u(-2.0, 2.0), u(-2.0, 2.0)),
        r: u(0.5, 2.0),
        s: Row2::zeros(),
    };
    let bob = Channel {
        c: Row2::new(u(-2.0, 2.0), u(-2.0, 2.0)),
        r: u(0.5, 2.0),
        s: Row2::zeros(),
    };
    ModelMatrices::from_covariances(a, q, alice, bob, 1.0, 1.0)
}

/// Largest entrywise difference, relative to `max(1, max |reference|)`.
pub fn max_rel_diff(a: &[Vec2], reference: &[Vec2]) -> f64 {
    assert_eq!(a.len(), reference.len());
    let scale = reference
        .iter()
        .map(|v| v.abs().max())
        .fold(1.0_f64, f64::max);
    a.iter()
        .zip(reference)
        .map(|(x, y)| (x - y).abs().max())
        .fold(0.0, f64::max)
        / scale
}
