//! The two entropic problems behind the top-k entropy loss.
//!
//! * [`topk_entropy_loss`] evaluates the loss itself,
//!   `max { <a,x> - (1-s) log(1-s) - <x, log x> : x in alpha-simplex_k(1), s = <1,x> }`.
//! * [`entropy_prox`] solves the per-example SDCA subproblem
//!   `min { alpha/2 (|x|^2 + s^2) - <b,x> + <x, log x> + (1-s) log(1-s) }`
//!   over the same set.
//!
//! Both solutions have the form "coordinates in `U` sit at the cap `s/k`, the
//! remaining coordinates `M` are free". `U` is always a set of largest inputs,
//! so it is grown one coordinate at a time until the KKT conditions hold.
//!
//! All vectors here are the reduced `m - 1` dimensional ones: the coordinate
//! of the true class has been removed.

use crate::error::{Error, Result};
use crate::lambert::{deriv_from_value, lambert_v, v_inv_unchecked};
use crate::projections::argsort_desc;
use crate::util::{log_sum_exp, sigmoid, softplus, xlogx};

const MAX_NEWTON: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropySolution {
    /// Dual point in the alpha top-k simplex.
    pub x: Vec<f64>,
    /// `<1,x>`.
    pub s: f64,
    /// Multiplier of the sum constraint on the free coordinates.
    pub t: f64,
    /// Loss value for [`topk_entropy_loss`], objective value for [`entropy_prox`].
    pub value: f64,
    /// Number of partitions tried (`|U| + 1` at termination).
    pub outer_iterations: usize,
}

/// Top-k entropy loss of the score differences `a_j = f_j - f_y`, `j != y`.
///
/// For `k = 1` this is the softmax loss `log(1 + sum_j e^{a_j})`.
pub fn topk_entropy_loss(a: &[f64], k: usize) -> Result<EntropySolution> {
    let n = a.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "top-k entropy needs 1 <= k <= m-1 (k={k}, m-1={n})"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("top-k entropy scores"));
    }
    let order = argsort_desc(a);
    let v: Vec<f64> = order.iter().map(|&i| a[i]).collect();
    let kf = k as f64;
    let scale = v[0].abs().max(v[n - 1].abs()).max(1.0);
    let tol = 1e-12 * scale;

    let mut sum_u = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for u in 0..k.min(n) {
        if u > 0 {
            sum_u += v[u - 1];
        }
        let log_z = log_sum_exp(v[u..].iter().copied());
        // log(s/k) + t collapses to this threshold
        let tau = log_z - ((k - u) as f64).ln();
        let mut viol = (v[u] - tau).max(0.0);
        if u > 0 {
            viol = viol.max(tau - v[u - 1]);
        }
        if viol <= tol {
            return Ok(entropy_loss_partition(a, &order, u, k, sum_u, log_z));
        }
        if best.is_none_or(|(b, _)| viol < b) {
            best = Some((viol, u));
        }
    }
    if k == n {
        // every coordinate at the cap: x = s/k
        let mean = v.iter().sum::<f64>() / kf;
        let c = mean + kf.ln();
        let s = sigmoid(c);
        let log_s = -softplus(-c);
        let log_1ms = -softplus(c);
        let value = mean * s - s * (log_s - kf.ln()) - (1.0 - s) * log_1ms;
        return Ok(EntropySolution {
            x: vec![s / kf; n],
            s,
            t: v[n - 1] - (log_s - kf.ln()),
            value,
            outer_iterations: k + 1,
        });
    }
    // Rounding left every partition marginally infeasible: take the closest.
    let (_, u) = best.expect("at least one partition was tried");
    let sum_u: f64 = v[..u].iter().sum();
    let log_z = log_sum_exp(v[u..].iter().copied());
    Ok(entropy_loss_partition(a, &order, u, k, sum_u, log_z))
}

fn entropy_loss_partition(
    a: &[f64],
    order: &[usize],
    u: usize,
    k: usize,
    sum_u: f64,
    log_z: f64,
) -> EntropySolution {
    let kf = k as f64;
    let rho = u as f64 / kf;
    let mean_u = sum_u / kf;
    // s = 1 / (1 + Q) with c = -log Q
    let c = mean_u + rho * kf.ln() + (1.0 - rho) * (log_z - (1.0 - rho).ln());
    let s = sigmoid(c);
    let log_s = -softplus(-c);
    let log_1ms = -softplus(c);
    let t = log_z + softplus(-c) - (1.0 - rho).ln();
    let value = if u == 0 {
        t
    } else {
        mean_u * s - rho * s * (log_s - kf.ln()) + (1.0 - rho) * s * t - (1.0 - s) * log_1ms
    };
    let mut x = vec![0.0; a.len()];
    for (rank, &i) in order.iter().enumerate() {
        x[i] = if rank < u { s / kf } else { (a[i] - t).exp() };
    }
    EntropySolution {
        x,
        s,
        t,
        value,
        outer_iterations: u + 1,
    }
}

/// Objective minimized by [`entropy_prox`].
pub fn entropy_prox_objective(x: &[f64], b: &[f64], alpha: f64) -> f64 {
    let s: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let lin: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
    let ent: f64 = x.iter().map(|&v| xlogx(v)).sum();
    0.5 * alpha * (sq + s * s) - lin + ent + xlogx(1.0 - s)
}

/// Minimizes [`entropy_prox_objective`] over the alpha top-k simplex of radius 1.
///
/// Free coordinates satisfy `alpha x_i = V(b_i - t)`, capped ones `x_i = s/k`.
/// With no capped coordinate, `t` solves the scalar equation
/// `V(alpha - t) + sum_i V(b_i - t) = alpha`. Otherwise `s` is found by a
/// safeguarded Newton iteration on `sigma = log(s / (1 - s))` with `t(s)`
/// solved in an inner loop.
pub fn entropy_prox(b: &[f64], alpha: f64, k: usize) -> Result<EntropySolution> {
    let n = b.len();
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("entropy prox needs alpha > 0, got {alpha}")));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "entropy prox needs 1 <= k <= m-1 (k={k}, m-1={n})"
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("entropy prox input"));
    }
    let order = argsort_desc(b);
    let v: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let kf = k as f64;
    let scale = v[0].abs().max(v[n - 1].abs()).max(alpha).max(1.0);
    let tol = 1e-10 * scale;

    // No capped coordinate.
    let (t, terms) = solve_v_sum(std::iter::once(alpha).chain(v.iter().copied()), alpha)?;
    let mut s = terms.iter().skip(1).sum::<f64>() / alpha;
    if s >= 1.0 {
        s = 1.0 - terms[0] / alpha;
    }
    let cap_level = v_inv_unchecked(alpha * s / kf);
    let mut best = (v[0] - t - cap_level, 0usize, s, t);
    if best.0 <= tol {
        return Ok(prox_solution(b, &order, 0, k, alpha, s, t));
    }

    let mut sum_u = 0.0;
    let mut sigma = logit(s);
    for u in 1..=k.min(n) {
        sum_u += v[u - 1];
        if u == k && u < n {
            // all mass on U would leave free coordinates at zero
            break;
        }
        let (s_u, t_u) = solve_capped(&v[u..], u, kf, sum_u / kf, alpha, sigma)?;
        let cap_level = v_inv_unchecked(alpha * s_u / kf);
        // without free coordinates any t keeping U clamped works
        let t_u = if u == n { v[n - 1] - cap_level } else { t_u };
        let mut viol = (v[u - 1] - t_u - cap_level).min(0.0).abs();
        if u < n {
            viol = viol.max(v[u] - t_u - cap_level);
        }
        if viol <= tol || u == n {
            return Ok(prox_solution(b, &order, u, k, alpha, s_u, t_u));
        }
        if viol < best.0 {
            best = (viol, u, s_u, t_u);
        }
        sigma = logit(s_u);
    }
    let (_, u, s, t) = best;
    log::debug!("entropy prox: no partition met the KKT tolerance, using |U|={u}");
    Ok(prox_solution(b, &order, u, k, alpha, s, t))
}

fn prox_solution(
    b: &[f64],
    order: &[usize],
    u: usize,
    k: usize,
    alpha: f64,
    s: f64,
    t: f64,
) -> EntropySolution {
    let cap = s / k as f64;
    let mut x = vec![0.0; b.len()];
    for (rank, &i) in order.iter().enumerate() {
        x[i] = if rank < u {
            cap
        } else {
            (lambert_v(b[i] - t) / alpha).min(cap)
        };
    }
    let value = entropy_prox_objective(&x, b, alpha);
    EntropySolution {
        x,
        s,
        t,
        value,
        outer_iterations: u + 1,
    }
}

fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln().clamp(-700.0, 700.0)
}

/// Solves `sum_j V(w_j - t) = c` for `t` (`c > 0`), returning `t` and the terms.
///
/// The left side is convex and decreasing in `t`. Newton started where one
/// term alone already reaches `c` approaches the root monotonically from the
/// left, so no safeguard is needed.
fn solve_v_sum(w: impl Iterator<Item = f64> + Clone, c: f64) -> Result<(f64, Vec<f64>)> {
    let w_max = w.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut t = w_max - v_inv_unchecked(c);
    let mut terms: Vec<f64> = Vec::new();
    let mut prev_g = f64::INFINITY;
    for iter in 0..MAX_NEWTON {
        terms.clear();
        let mut sum = 0.0;
        let mut slope = 0.0;
        for wj in w.clone() {
            let vj = lambert_v(wj - t);
            terms.push(vj);
            sum += vj;
            slope += deriv_from_value(vj);
        }
        let g = sum - c;
        // the sum itself carries rounding error of a few ulps of its magnitude
        let floor = 16.0 * f64::EPSILON * (sum + c);
        if g.abs() <= floor || (iter > 1 && g.abs() >= prev_g) {
            return Ok((t, terms));
        }
        prev_g = g.abs();
        let step = g / slope;
        t += step;
        if step.abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            terms.iter_mut().zip(w.clone()).for_each(|(v, wj)| *v = lambert_v(wj - t));
            return Ok((t, terms));
        }
    }
    Err(Error::NoConvergence {
        solver: "entropy prox (scalar)",
        iterations: MAX_NEWTON,
        residual: terms.iter().sum::<f64>() - c,
    })
}

/// `|U| = u >= 1` coordinates at the cap: finds `(s, t)` from the monotone
/// equation in `s`
///
/// ```text
/// (1 - rho) t(s) + V^{-1}(alpha (1 - s)) - rho V^{-1}(alpha s / k) + mean_u - alpha = 0
/// ```
///
/// where `rho = u/k`, `mean_u = (1/k) sum_U b_i` and `t(s)` solves
/// `sum_M V(b_i - t) = alpha (1 - rho) s`. Without free coordinates (`u = k`
/// equal to the dimension) the `t(s)` term drops out.
fn solve_capped(
    free: &[f64],
    u: usize,
    kf: f64,
    mean_u: f64,
    alpha: f64,
    sigma0: f64,
) -> Result<(f64, f64)> {
    let rho = u as f64 / kf;
    let ln_alpha = alpha.ln();
    let ln_k = kf.ln();
    let eval = |sigma: f64| -> Result<(f64, f64, f64)> {
        let s = sigmoid(sigma);
        let oms = sigmoid(-sigma);
        // V^{-1}(alpha (1 - s)) and V^{-1}(alpha s / k) through logs of s, 1 - s
        let vin_rest = alpha * oms + ln_alpha - softplus(sigma);
        let vin_cap = alpha * s / kf + ln_alpha - softplus(-sigma) - ln_k;
        let (t_term, dt_ds, t) = if free.is_empty() {
            (0.0, 0.0, f64::NAN)
        } else {
            let (t, terms) = solve_v_sum(free.iter().copied(), alpha * (1.0 - rho) * s)?;
            let slope: f64 = terms.iter().map(|&v| deriv_from_value(v)).sum();
            ((1.0 - rho) * t, -alpha * (1.0 - rho) / slope, t)
        };
        let f = t_term + vin_rest - rho * vin_cap + mean_u - alpha;
        // dF/dsigma = dF/ds * s (1 - s)
        let so = s * oms;
        let df = (1.0 - rho) * dt_ds * so - alpha * so - s - rho * alpha * so / kf - rho * oms;
        Ok((f, df, t))
    };

    let (mut f, mut df, mut t) = eval(sigma0)?;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut sigma = sigma0;
    for _ in 0..MAX_NEWTON {
        if f > 0.0 {
            lo = sigma;
        } else {
            hi = sigma;
        }
        let tol = 1e-13 * f64::max(1.0, mean_u.abs() + alpha);
        if f.abs() <= tol || (hi - lo) <= 1e-15 * sigma.abs().max(1.0) {
            return Ok((sigmoid(sigma), t));
        }
        let newton = sigma - f / df;
        sigma = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            (lo + (lo.abs() + 1.0)).min(700.0)
        } else {
            (hi - (hi.abs() + 1.0)).max(-700.0)
        };
        (f, df, t) = eval(sigma)?;
    }
    Err(Error::NoConvergence {
        solver: "entropy prox (capped)",
        iterations: MAX_NEWTON,
        residual: f,
    })
}
