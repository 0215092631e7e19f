//! The Lambert W function of the exponent, `V(t) = W(e^t)`.
//!
//! `V(t)` is the unique positive solution `x` of `x + log x = t`. It appears
//! in every optimality condition of the entropy-regularized problems solved
//! in [`crate::entropy`].
//!
//! The root is refined in log-coordinates, `u = log x`, where the equation
//! becomes `e^u + u - t = 0`. All higher derivatives of that function equal
//! `e^u`, so a fifth-order Householder step costs one exponential, and the
//! iteration never forms `1/x` (which would overflow for `t` far below zero).

use crate::error::{Error, Result};

/// Householder order (uses derivatives up to this order).
const ORDER: usize = 5;

const MAX_ITERS: u32 = 8;

/// `V(t) = W(e^t)`.
pub fn lambert_v(t: f64) -> f64 {
    lambert_v_counted(t).0
}

/// `V(t)` together with the number of Householder iterations spent.
pub fn lambert_v_counted(t: f64) -> (f64, u32) {
    if t.is_nan() {
        return (f64::NAN, 0);
    }
    if t == f64::INFINITY {
        return (f64::INFINITY, 0);
    }
    if t == f64::NEG_INFINITY {
        return (0.0, 0);
    }

    let tol = 4.0 * f64::EPSILON * t.abs().max(1.0);
    let mut u = initial_log_guess(t);
    let mut iters = 0;
    loop {
        let e = u.exp();
        let g = e + u - t;
        if g.abs() <= tol || iters == MAX_ITERS {
            return (e, iters);
        }
        u += householder_step(g, e);
        iters += 1;
    }
}

/// `V^{-1}(x) = x + log x`.
pub fn lambert_v_inv(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!(
            "lambert_v_inv requires x > 0, got {x}"
        )));
    }
    Ok(x + x.ln())
}

/// `dV/dt = V / (1 + V)`.
pub fn lambert_v_deriv(t: f64) -> f64 {
    let v = lambert_v(t);
    v / (1.0 + v)
}

/// Derivative expressed through an already computed value `v = V(t)`.
#[inline]
pub(crate) fn deriv_from_value(v: f64) -> f64 {
    v / (1.0 + v)
}

/// `x + log x` without the domain check, for internal callers that hold `x > 0`.
#[inline]
pub(crate) fn v_inv_unchecked(x: f64) -> f64 {
    x + x.ln()
}

/// Starting point for `u = log V(t)`.
///
/// * `t <= -1`: `V(t) = e^{t - V(t)} ≈ e^{t - e^t}`.
/// * `-1 < t < 3`: cubic Taylor expansion of `V` around `t = 1` (`V(1) = 1`).
/// * `t >= 3`: asymptotic expansion `t - log t + log t / t`; no exponential of
///   `t` is formed, so arbitrarily large `t` is safe.
fn initial_log_guess(t: f64) -> f64 {
    if t <= -1.0 {
        t - (t - t.exp()).exp()
    } else if t < 3.0 {
        let h = t - 1.0;
        let x = 1.0 + h * (0.5 + h * (1.0 / 16.0 - h / 192.0));
        x.ln()
    } else {
        let lt = t.ln();
        (t - lt + lt / t).ln()
    }
}

/// One Householder step of order [`ORDER`] for `g(u) = e^u + u - t`.
///
/// Uses the Taylor coefficients `c_j = g^{(j)}(u)/j!` and the recurrence for
/// the coefficients of `1/g`, normalized by the Newton step `eps = c_0/c_1`
/// so that no intermediate quantity blows up as `g -> 0`.
fn householder_step(g: f64, e: f64) -> f64 {
    let c1 = e + 1.0;
    let eps = g / c1;
    // normalized coefficients c_j / c_1 for j = 1..=ORDER
    let mut chat = [0.0; ORDER + 1];
    chat[1] = 1.0;
    let mut fact = 1.0;
    for (j, c) in chat.iter_mut().enumerate().skip(2) {
        fact *= j as f64;
        *c = e / fact / c1;
    }
    let mut mu = [0.0; ORDER + 1];
    mu[0] = 1.0;
    for n in 1..=ORDER {
        let mut acc = 0.0;
        let mut pow = 1.0; // eps^(n - j - 1), starting at j = n - 1
        for j in (0..n).rev() {
            acc += mu[j] * chat[n - j] * pow;
            pow *= eps;
        }
        mu[n] = -acc;
    }
    let step = eps * mu[ORDER - 1] / mu[ORDER];
    if step.is_finite() {
        step
    } else {
        -eps
    }
}
