//! Euclidean projections onto the top-k simplices.
//!
//! For radius `r` and `k >= 1`:
//!
//! ```text
//! alpha:  { x : <1,x> <= r, 0 <= x_i <= <1,x>/k }
//! beta:   { x : <1,x> <= r, 0 <= x_i <= r/k }
//! ```
//!
//! [`project_topk`] minimizes `|x - b|^2 + rho <1,x>^2` over either set. With
//! `rho = 0` this is the plain Euclidean projection; `rho > 0` is the biased
//! problem solved in every SDCA step of the top-k hinge losses.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimplexVariant {
    Alpha,
    Beta,
}

/// Feasible set and bias of a top-k simplex projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopkSimplex {
    pub variant: SimplexVariant,
    pub k: usize,
    pub radius: f64,
    /// Weight of the `<1,x>^2` term; zero gives the plain projection.
    pub rho: f64,
}

impl TopkSimplex {
    pub fn alpha(k: usize, radius: f64) -> Self {
        TopkSimplex {
            variant: SimplexVariant::Alpha,
            k,
            radius,
            rho: 0.0,
        }
    }

    pub fn beta(k: usize, radius: f64) -> Self {
        TopkSimplex {
            variant: SimplexVariant::Beta,
            k,
            radius,
            rho: 0.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Largest violation of the set's constraints by `x` (0 when feasible).
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        let cap = match self.variant {
            SimplexVariant::Alpha => s / self.k as f64,
            SimplexVariant::Beta => self.radius / self.k as f64,
        };
        x.iter()
            .map(|&xi| (-xi).max(xi - cap))
            .fold(s - self.radius, f64::max)
            .max(0.0)
    }
}

/// Objective of the biased projection, `|x - b|^2 + rho <1,x>^2`.
pub fn biased_objective(x: &[f64], b: &[f64], rho: f64) -> f64 {
    let dist: f64 = x.iter().zip(b).map(|(xi, bi)| (xi - bi) * (xi - bi)).sum();
    let s: f64 = x.iter().sum();
    dist + rho * s * s
}

/// Projects `b` onto the top-k simplex described by `spec`.
pub fn project_topk(b: &[f64], spec: &TopkSimplex) -> Result<Vec<f64>> {
    let mut out = vec![0.0; b.len()];
    project_topk_into(b, spec, &mut out)?;
    Ok(out)
}

/// Same as [`project_topk`], writing into `out` (same length as `b`).
pub fn project_topk_into(b: &[f64], spec: &TopkSimplex, out: &mut [f64]) -> Result<()> {
    let n = b.len();
    if out.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "output length {} != input length {n}",
            out.len()
        )));
    }
    if spec.k == 0 || n < spec.k {
        return Err(Error::invalid(format!(
            "top-k simplex needs 1 <= k <= dimension (k={}, dimension={n})",
            spec.k
        )));
    }
    if !(spec.radius >= 0.0) || !(spec.rho >= 0.0) {
        return Err(Error::invalid(format!(
            "radius and rho must be non-negative (radius={}, rho={})",
            spec.radius, spec.rho
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    if spec.radius == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    match spec.variant {
        SimplexVariant::Alpha => project_alpha(b, spec.k, spec.radius, spec.rho, out),
        SimplexVariant::Beta => project_beta(b, spec.k, spec.radius, spec.rho, out),
    }
    Ok(())
}

/// Projection onto `{x >= 0, <1,x> <= r}`.
pub fn project_simplex_cap(b: &[f64], r: f64) -> Vec<f64> {
    let mut x: Vec<f64> = b.iter().map(|&v| v.max(0.0)).collect();
    if r <= 0.0 {
        x.fill(0.0);
        return x;
    }
    if x.iter().sum::<f64>() <= r {
        return x;
    }
    let mut v = b.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &vj) in v.iter().enumerate() {
        acc += vj;
        let t = (acc - r) / (j + 1) as f64;
        if vj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for (xi, &bi) in x.iter_mut().zip(b) {
        *xi = (bi - theta).max(0.0);
    }
    x
}

/// Indices of `b` sorted by decreasing value, lower index first among ties.
pub(crate) fn argsort_desc(b: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..b.len()).collect();
    idx.sort_by(|&i, &j| {
        b[j].partial_cmp(&b[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    idx
}

struct Candidate {
    violation: f64,
    upper: usize,
    free: usize,
    s: f64,
    theta: f64,
}

/// Scans partitions `U | M | L` of the sorted coordinates (clamped at the
/// coupled bound `s/k`, free, clamped at zero). For each partition, the KKT
/// conditions reduce to a linear system in `(s, theta)` (or in `(theta, eta)`
/// when `<1,x> = r` is active); the first partition whose solution satisfies
/// all sign conditions is the unique optimum.
fn project_alpha(b: &[f64], k: usize, r: f64, rho: f64, out: &mut [f64]) {
    let n = b.len();
    let order = argsort_desc(b);
    let v: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
    }
    let scale = v.iter().fold(r, |m, x| m.max(x.abs()));
    let tol = 1e-12 * scale;
    let kf = k as f64;

    let violation = |u: usize, mm: usize, s: f64, theta: f64, eta: f64| -> f64 {
        let mut viol = (-s).max(s - r).max(-eta);
        if u == k {
            if u < n {
                viol = viol.max(v[u] - (v[u - 1] - s / kf));
            }
            return viol;
        }
        if u > 0 {
            viol = viol.max(theta + s / kf - v[u - 1]);
        }
        if mm > 0 {
            viol = viol.max(v[u] - theta - s / kf).max(theta - v[u + mm - 1]);
        }
        if u + mm < n {
            viol = viol.max(v[u + mm] - theta);
        }
        viol
    };

    let mut best = Candidate {
        violation: f64::INFINITY,
        upper: 0,
        free: 0,
        s: 0.0,
        theta: 0.0,
    };
    'scan: for u in 0..=k.min(n) {
        let max_free = if u == k { 0 } else { n - u };
        let sum_u = prefix[u];
        for mm in 0..=max_free {
            let sum_m = prefix[u + mm] - prefix[u];
            let mut candidates = [(f64::NAN, f64::NAN, f64::NAN); 2];
            if u == k {
                let s = sum_u / (rho * kf + 1.0);
                candidates[0] = (s, f64::NAN, 0.0);
                candidates[1] = (r, f64::NAN, sum_u / kf - rho * r - r / kf);
            } else {
                let p = 1.0 - u as f64 / kf;
                let q = rho + u as f64 / (kf * kf);
                let det = p * p + mm as f64 * q;
                let s = (p * sum_m + mm as f64 * sum_u / kf) / det;
                let theta = (q * sum_m - p * sum_u / kf) / det;
                candidates[0] = (s, theta, 0.0);
                if mm > 0 {
                    let theta = (sum_m - p * r) / mm as f64;
                    let eta = p * theta - rho * r + sum_u / kf - u as f64 * r / (kf * kf);
                    candidates[1] = (r, theta, eta);
                }
            }
            for &(s, theta, eta) in &candidates {
                if s.is_nan() {
                    continue;
                }
                let viol = violation(u, mm, s, theta, eta);
                if viol < best.violation {
                    best = Candidate {
                        violation: viol,
                        upper: u,
                        free: mm,
                        s,
                        theta,
                    };
                    if viol <= tol {
                        break 'scan;
                    }
                }
            }
        }
    }

    let s = best.s.clamp(0.0, r);
    let cap = s / kf;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < best.upper {
            cap
        } else if rank < best.upper + best.free {
            (v[rank] - best.theta).clamp(0.0, cap)
        } else {
            0.0
        };
    }
}

/// Biased continuous quadratic knapsack with box `[0, r/k]`.
///
/// The solution is `x_i = clip(b_i - theta, 0, r/k)`. With `<1,x> < r` the
/// multiplier satisfies `theta = rho <1,x(theta)>`; otherwise `theta` solves
/// `<1,x(theta)> = r`. Both equations are monotone and piecewise linear in
/// `theta` with breakpoints at `b_i` and `b_i - r/k`.
fn project_beta(b: &[f64], k: usize, r: f64, rho: f64, out: &mut [f64]) {
    let cap = r / k as f64;
    let sum_at = |theta: f64| -> f64 { b.iter().map(|&bi| (bi - theta).clamp(0.0, cap)).sum() };

    let mut breaks: Vec<f64> = b.iter().flat_map(|&bi| [bi - cap, bi]).collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    breaks.dedup();

    let interior = if rho == 0.0 {
        0.0
    } else {
        // theta - rho * s(theta) is strictly increasing
        solve_piecewise(b, cap, &breaks, |theta| theta - rho * sum_at(theta), |n_cap, sum_free, n_free| {
            // theta (1 + rho n_free) = rho (n_cap cap + sum_free)
            Some(rho * (n_cap as f64 * cap + sum_free) / (1.0 + rho * n_free as f64))
        })
    };
    let theta = if sum_at(interior) <= r {
        interior
    } else {
        // r - s(theta) is non-decreasing
        solve_piecewise(b, cap, &breaks, |theta| r - sum_at(theta), |n_cap, sum_free, n_free| {
            if n_free == 0 {
                None
            } else {
                Some((n_cap as f64 * cap + sum_free - r) / n_free as f64)
            }
        })
    };
    for (o, &bi) in out.iter_mut().zip(b) {
        *o = (bi - theta).clamp(0.0, cap);
    }
}

/// Root of a non-decreasing piecewise-linear `f` whose kinks lie in `breaks`.
///
/// Brackets the root between consecutive breakpoints by bisection over the
/// sorted breakpoints, then solves the linear piece exactly via `solve_piece`,
/// which receives the number of capped coordinates, the sum of free `b_i`,
/// and the number of free coordinates on that piece.
fn solve_piecewise(
    b: &[f64],
    cap: f64,
    breaks: &[f64],
    f: impl Fn(f64) -> f64,
    solve_piece: impl Fn(usize, f64, usize) -> Option<f64>,
) -> f64 {
    // first breakpoint with f >= 0
    let (mut lo, mut hi) = (0usize, breaks.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if f(breaks[mid]) >= 0.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo < breaks.len() && f(breaks[lo]) == 0.0 {
        return breaks[lo];
    }
    let left = if lo == 0 { f64::NEG_INFINITY } else { breaks[lo - 1] };
    let right = if lo == breaks.len() { f64::INFINITY } else { breaks[lo] };
    let probe = match (left.is_finite(), right.is_finite()) {
        (true, true) => 0.5 * (left + right),
        (false, true) => right - 1.0,
        (true, false) => left + 1.0,
        (false, false) => 0.0,
    };
    let (mut n_cap, mut n_free, mut sum_free) = (0usize, 0usize, 0.0);
    for &bi in b {
        let z = bi - probe;
        if z >= cap {
            n_cap += 1;
        } else if z > 0.0 {
            n_free += 1;
            sum_free += bi;
        }
    }
    match solve_piece(n_cap, sum_free, n_free) {
        Some(theta) => theta.clamp(left, right),
        None => probe,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn feasible_point_is_fixed() {
        let b = [0.2, 0.1, 0.3];
        for spec in [TopkSimplex::alpha(2, 1.0), TopkSimplex::beta(2, 1.0)] {
            let x = project_topk(&b, &spec).unwrap();
            assert!(close(&x, &b, 1e-15), "{spec:?} {x:?}");
        }
    }

    #[test]
    fn small_cases() {
        let x = project_topk(&[2.0, 0.0], &TopkSimplex::alpha(1, 1.0)).unwrap();
        assert!(close(&x, &[1.0, 0.0], 1e-15));
        let x = project_topk(&[1.0, 1.0, 1.0], &TopkSimplex::alpha(2, 1.0)).unwrap();
        assert!(close(&x, &[1.0 / 3.0; 3], 1e-15));
        let x = project_topk(&[3.0, 0.0, 0.0], &TopkSimplex::alpha(2, 1.0)).unwrap();
        assert!(close(&x, &[0.5, 0.25, 0.25], 1e-15), "{x:?}");
        let x = project_topk(&[3.0, 0.0, 0.0], &TopkSimplex::beta(2, 1.0)).unwrap();
        assert!(close(&x, &[0.5, 0.0, 0.0], 1e-15));
        let x = project_topk(&[-1.0, -2.0], &TopkSimplex::beta(1, 1.0)).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_radius_and_bad_k() {
        let x = project_topk(&[1.0, 2.0], &TopkSimplex::alpha(1, 0.0)).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert!(project_topk(&[1.0, 2.0], &TopkSimplex::alpha(3, 1.0)).is_err());
        assert!(project_topk(&[1.0, 2.0], &TopkSimplex::beta(0, 1.0)).is_err());
        assert!(project_topk(&[f64::NAN, 2.0], &TopkSimplex::beta(1, 1.0)).is_err());
    }

    #[test]
    fn simplex_cap() {
        assert_eq!(project_simplex_cap(&[-1.0, -0.5], 1.0), vec![0.0, 0.0]);
        assert_eq!(project_simplex_cap(&[0.2, 0.1], 1.0), vec![0.2, 0.1]);
        let x = project_simplex_cap(&[2.0, 0.0], 1.0);
        assert!(close(&x, &[1.0, 0.0], 1e-15));
        let x = project_simplex_cap(&[0.8, 0.6, -3.0], 1.0);
        assert!(close(&x, &[0.6, 0.4, 0.0], 1e-15));
    }

    #[test]
    fn alpha_k1_matches_simplex_cap() {
        let b = [0.7, -0.2, 1.4, 0.3];
        let x = project_topk(&b, &TopkSimplex::alpha(1, 1.3)).unwrap();
        assert!(close(&x, &project_simplex_cap(&b, 1.3), 1e-12));
    }

    #[test]
    fn ties_are_resolved() {
        let b = [0.5; 5];
        for k in 1..=5 {
            for spec in [TopkSimplex::alpha(k, 1.0), TopkSimplex::beta(k, 1.0)] {
                let x = project_topk(&b, &spec.with_rho(0.3)).unwrap();
                assert!(spec.infeasibility(&x) <= 1e-12);
                assert!(x.iter().all(|&xi| (xi - x[0]).abs() < 1e-12));
            }
        }
    }
}
