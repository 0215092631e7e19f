//! Reference solvers shared by the integration tests.
//!
//! These are deliberately slow and simple, and share no code with the
//! library routines they check.

#![allow(dead_code)]

use topk::projections::SimplexVariant;

/// Solves `a x = y` by Gaussian elimination with partial pivoting.
/// Returns `None` if the matrix is numerically singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Option<Vec<f64>> {
    let n = y.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        y.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                y[row] -= f * y[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = y[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

pub fn qp_objective(x: &[f64], b: &[f64], rho: f64) -> f64 {
    let s: f64 = x.iter().sum();
    x.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() + rho * s * s
}

/// Minimizes `|x - b|^2 + rho <1,x>^2` over a top-k simplex by trying every
/// active set of the inequality constraints, solving the equality-constrained
/// KKT system for each, and keeping the best feasible point.
pub fn qp_oracle(b: &[f64], variant: SimplexVariant, k: usize, r: f64, rho: f64) -> Vec<f64> {
    let n = b.len();
    let kf = k as f64;
    let feasible = |x: &[f64]| {
        let s: f64 = x.iter().sum();
        let cap = match variant {
            SimplexVariant::Alpha => s / kf,
            SimplexVariant::Beta => r / kf,
        };
        let tol = 1e-10;
        s <= r + tol && x.iter().all(|&v| v >= -tol && v <= cap + tol)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let states = 3usize.pow(n as u32);
    for code in 0..states {
        for sum_active in [false, true] {
            // rows of active equality constraints a x = c
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut c = code;
            for i in 0..n {
                let state = c % 3;
                c /= 3;
                let mut row = vec![0.0; n];
                match state {
                    1 => {
                        row[i] = 1.0;
                        rows.push((row, 0.0));
                    }
                    2 => match variant {
                        SimplexVariant::Alpha => {
                            for (j, v) in row.iter_mut().enumerate() {
                                *v = if j == i { 1.0 - 1.0 / kf } else { -1.0 / kf };
                            }
                            rows.push((row, 0.0));
                        }
                        SimplexVariant::Beta => {
                            row[i] = 1.0;
                            rows.push((row, r / kf));
                        }
                    },
                    _ => {}
                }
            }
            if sum_active {
                rows.push((vec![1.0; n], r));
            }
            let p = rows.len();
            let dim = n + p;
            let mut a = vec![vec![0.0; dim]; dim];
            let mut y = vec![0.0; dim];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = 2.0 * rho + if i == j { 2.0 } else { 0.0 };
                }
                y[i] = 2.0 * b[i];
            }
            for (l, (row, rhs)) in rows.iter().enumerate() {
                for j in 0..n {
                    a[n + l][j] = row[j];
                    a[j][n + l] = row[j];
                }
                y[n + l] = *rhs;
            }
            let Some(sol) = solve_dense(a, y) else { continue };
            let x = sol[..n].to_vec();
            if !feasible(&x) {
                continue;
            }
            let obj = qp_objective(&x, b, rho);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("origin is always feasible").1
}

/// `alpha/2 (|x|^2 + s^2) - <b,x> + <x, log x> + (1-s) log(1-s)`, `s = <1,x>`.
pub fn entropic_objective(x: &[f64], b: &[f64], alpha: f64) -> f64 {
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let s: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let lin: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
    0.5 * alpha * (sq + s * s) - lin + x.iter().map(|&v| xlogx(v)).sum::<f64>() + xlogx(1.0 - s)
}

/// Minimizes [`entropic_objective`] over the alpha top-k simplex of radius 1
/// by projected gradient descent with backtracking. A step is only accepted
/// if no coordinate (nor `1 - s`) shrinks by more than a factor of ten, which
/// keeps the iterates away from the singular logarithms at the boundary.
pub fn entropic_pg_oracle(b: &[f64], alpha: f64, k: usize, max_iters: usize) -> (Vec<f64>, f64) {
    use topk::projections::{project_topk, TopkSimplex};
    let spec = TopkSimplex::alpha(k, 1.0);
    let n = b.len();
    let mut x = vec![0.5 / n as f64; n];
    let mut f = entropic_objective(&x, b, alpha);
    let mut step = 1e-2;
    let mut stall = 0;
    for _ in 0..max_iters {
        let s: f64 = x.iter().sum();
        let g: Vec<f64> = x
            .iter()
            .zip(b)
            .map(|(&xi, &bi)| alpha * (xi + s) - bi + xi.ln() - (1.0 - s).ln())
            .collect();
        let mut accepted = false;
        for _ in 0..200 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let y = project_topk(&trial, &spec).unwrap();
            let sy: f64 = y.iter().sum();
            let interior = y.iter().zip(&x).all(|(yi, xi)| *yi >= 0.1 * xi)
                && 1.0 - sy >= 0.1 * (1.0 - s);
            if interior {
                let fy = entropic_objective(&y, b, alpha);
                let decrease: f64 = g.iter().zip(&y).zip(&x).map(|((gi, yi), xi)| gi * (yi - xi)).sum();
                let dist: f64 = y.iter().zip(&x).map(|(yi, xi)| (yi - xi) * (yi - xi)).sum();
                if fy <= f + decrease + dist / (2.0 * step) {
                    let improved = f - fy;
                    x = y;
                    f = fy;
                    accepted = true;
                    stall = if improved <= 1e-15 * f.abs().max(1.0) { stall + 1 } else { 0 };
                    step *= 1.5;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || stall >= 50 {
            break;
        }
    }
    (x, f)
}
