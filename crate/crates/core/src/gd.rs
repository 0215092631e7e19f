//! Batch gradient descent with a backtracking line search.
//!
//! Used for the nonconvex truncated top-k entropy loss, usually started from
//! a softmax model. Minimizes
//!
//! ```text
//! F(W) = 1/n sum_i L(y_i, W^T x_i) + lambda/2 |W|_F^2
//! ```

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{loss_and_grad, LossSpec};
use crate::model::{scores_into, Model};
use crate::util::fmt_g;

/// Examples per block of the gradient reduction. Blocks are summed in a fixed
/// order, so results do not depend on the thread count.
const BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdConfig {
    pub max_iters: usize,
    /// Stop once the largest gradient entry is below this.
    pub grad_tolerance: f64,
    /// Sufficient-decrease constant of the Armijo rule.
    pub c1: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_halvings: usize,
    /// Stop after `stall_iters` iterations in a row whose relative decrease is below this.
    pub min_rel_decrease: f64,
    pub stall_iters: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            max_iters: 1000,
            grad_tolerance: 1e-6,
            c1: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_halvings: 60,
            min_rel_decrease: 1e-10,
            stall_iters: 5,
        }
    }
}

impl GdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("line search constants must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::invalid("initial step must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdStatus {
    /// Gradient below tolerance.
    Converged,
    /// Relative decrease stayed below the threshold.
    SlowProgress,
    MaxIters,
    /// No step satisfied the Armijo rule.
    Stalled,
}

impl fmt::Display for GdStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GdStatus::Converged => "converged",
            GdStatus::SlowProgress => "slow_progress",
            GdStatus::MaxIters => "max_iters",
            GdStatus::Stalled => "stalled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdReport {
    pub iterations: usize,
    pub status: GdStatus,
    /// Objective at the start and after every accepted step.
    pub objectives: Vec<f64>,
    /// Largest absolute gradient entry at the final point.
    pub grad_norm: f64,
    pub seconds: f64,
}

impl GdReport {
    pub fn objective(&self) -> f64 {
        *self.objectives.last().expect("at least the initial objective")
    }
}

/// Regularized objective and its gradient at row-major `d x m` weights.
pub fn regularized_objective(data: &Dataset, spec: &LossSpec, lambda: f64, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (n, m, d) = (data.len(), data.num_classes(), data.dim());
    if w.len() != d * m {
        return Err(Error::DimensionMismatch(format!("{} weights for a {d} x {m} model", w.len())));
    }
    let blocks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut grad = vec![0.0; d * m];
            let mut loss = 0.0;
            let mut scores = vec![0.0; m];
            let mut g = vec![0.0; m];
            for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let x = data.example(i);
                scores_into(w, m, x, &mut scores);
                loss += loss_and_grad(spec, &scores, data.label(i), &mut g)?;
                for (j, &xj) in x.iter().enumerate() {
                    if xj != 0.0 {
                        for (acc, &gc) in grad[j * m..(j + 1) * m].iter_mut().zip(&g) {
                            *acc += xj * gc;
                        }
                    }
                }
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d * m];
    for (l, g) in blocks {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut reg = 0.0;
    for (gj, &wj) in grad.iter_mut().zip(w) {
        *gj = *gj * inv_n + lambda * wj;
        reg += wj * wj;
    }
    let value = loss * inv_n + 0.5 * lambda * reg;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok((value, grad))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the regularized objective of `spec` starting from `init`.
pub fn gd_train(data: &Dataset, spec: &LossSpec, lambda: f64, init: &Model, cfg: &GdConfig) -> Result<(Model, GdReport)> {
    cfg.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if init.dim() != data.dim() || init.num_classes() != data.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "initial model is {} x {}, data needs {} x {}",
            init.dim(),
            init.num_classes(),
            data.dim(),
            data.num_classes()
        )));
    }
    spec.check_classes(data.num_classes())?;
    let start = Instant::now();
    let mut w = init.weights().to_vec();
    let (mut value, mut grad) = regularized_objective(data, spec, lambda, &w)?;
    let mut objectives = vec![value];
    let mut step = cfg.initial_step;
    let mut full_steps = 0;
    let mut slow = 0;
    let mut iterations = 0;
    let mut trial = vec![0.0; w.len()];

    let status = loop {
        if max_abs(&grad) < cfg.grad_tolerance {
            break GdStatus::Converged;
        }
        if iterations >= cfg.max_iters {
            break GdStatus::MaxIters;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut halvings = 0;
        let accepted = loop {
            for ((t, &wj), &gj) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = wj - step * gj;
            }
            let candidate = regularized_objective(data, spec, lambda, &trial);
            if let Ok((v, g)) = candidate {
                if v <= value - cfg.c1 * step * grad_sq {
                    break Some((v, g));
                }
            }
            if halvings == cfg.max_halvings {
                break None;
            }
            step *= cfg.shrink;
            halvings += 1;
        };
        let Some((new_value, new_grad)) = accepted else {
            break GdStatus::Stalled;
        };
        iterations += 1;
        std::mem::swap(&mut w, &mut trial);
        let decrease = (value - new_value) / value.abs().max(f64::MIN_POSITIVE);
        value = new_value;
        grad = new_grad;
        objectives.push(value);
        if halvings == 0 {
            full_steps += 1;
            if full_steps == 2 {
                step *= 2.0;
                full_steps = 0;
            }
        } else {
            full_steps = 0;
        }
        log::debug!(
            "epoch={iterations} P={} D=nan gap=nan sec={:.3}",
            fmt_g(value, 17),
            start.elapsed().as_secs_f64()
        );
        slow = if decrease < cfg.min_rel_decrease { slow + 1 } else { 0 };
        if slow >= cfg.stall_iters {
            break GdStatus::SlowProgress;
        }
    };

    let seconds = start.elapsed().as_secs_f64();
    log::info!("epoch={iterations} P={} D=nan gap=nan sec={seconds:.3}", fmt_g(value, 17));
    let model = Model::from_weights(data.dim(), data.num_classes(), w, spec.family, spec.k, spec.gamma, lambda)?;
    let report = GdReport {
        iterations,
        status,
        objectives,
        grad_norm: max_abs(&grad),
        seconds,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossFamily;

    #[test]
    fn stationary_start_takes_no_steps() {
        // every example has zero features, so only the regularizer acts and W = 0 is optimal
        let data = Dataset::new(vec![0.0; 6], vec![0, 1, 2], 2, 3).unwrap();
        let spec = LossSpec::new(LossFamily::TopkEntropyTruncated, 1, 0.0).unwrap();
        let init = Model::zeros(2, 3, spec.family, 1, 0.0, 0.1);
        let (model, report) = gd_train(&data, &spec, 0.1, &init, &GdConfig::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.status, GdStatus::Converged);
        assert_eq!(model.weights(), init.weights());
    }

    #[test]
    fn quadratic_regularizer_only() {
        let data = Dataset::new(vec![0.0; 2], vec![0, 1], 1, 2).unwrap();
        let spec = LossSpec::new(LossFamily::TopkEntropy, 1, 0.0).unwrap();
        let init = Model::from_weights(1, 2, vec![3.0, -1.0], spec.family, 1, 0.0, 1.0).unwrap();
        let (model, report) = gd_train(&data, &spec, 0.5, &init, &GdConfig::default()).unwrap();
        assert_eq!(report.status, GdStatus::Converged);
        assert!(max_abs(model.weights()) < 1e-5);
        assert!(report.objectives.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn rejects_mismatched_init() {
        let data = Dataset::new(vec![1.0, 0.0], vec![0, 1], 1, 2).unwrap();
        let spec = LossSpec::new(LossFamily::TopkEntropy, 1, 0.0).unwrap();
        let init = Model::zeros(2, 2, spec.family, 1, 0.0, 1.0);
        assert!(gd_train(&data, &spec, 0.5, &init, &GdConfig::default()).is_err());
    }
}
