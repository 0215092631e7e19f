//! Stochastic dual coordinate ascent for the convex losses.
//!
//! Primal and dual objectives for `n` examples:
//!
//! ```text
//! P(W) = 1/n sum_i L(y_i, W^T x_i) + lambda/2 |W|_F^2
//! D(A) = -1/n sum_i L*(y_i, -lambda n a_i) - lambda/2 |X A^T|_F^2
//! ```
//!
//! The solver keeps `W = X A^T` and maximizes `D` over one `a_i` at a time,
//! visiting the examples in a fresh random order every epoch. Every multiclass
//! update keeps `<1, a_i> = 0`, so only the `m - 1` coordinates `j != y_i`
//! are free. One-vs-all losses run one binary problem per class.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::entropy::entropy_prox;
use crate::error::{Error, Result};
use crate::losses::{binary_loss, eval_loss, LossFamily, LossSpec};
use crate::model::{scores_into, Model};
use crate::projections::project_topk_into;
use crate::util::{fmt_g, sigmoid, xlogx};

/// Relative drift of the maintained `W` from `X A^T` that counts as a correction.
const DRIFT_TOLERANCE: f64 = 1e-8;
/// Epochs between full recomputations of `W`.
const REFRESH_EVERY: usize = 10;
/// A dual decrease larger than this counts as a monotonicity violation.
const MONOTONICITY_SLACK: f64 = 1e-10;
/// Feasibility slack when evaluating conjugates.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub lambda: f64,
    pub max_epochs: usize,
    /// Stop once the relative duality gap `(P - D) / P` is at most this.
    pub gap_tolerance: f64,
    pub gap_check_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossSpec, lambda: f64) -> Self {
        TrainConfig {
            loss,
            lambda,
            max_epochs: 1000,
            gap_tolerance: 1e-3,
            gap_check_every: 1,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gap_tolerance > 0.0) {
            return Err(Error::invalid("gap tolerance must be positive"));
        }
        if self.gap_check_every == 0 {
            return Err(Error::invalid("gap_check_every must be at least 1"));
        }
        if !self.loss.family.is_convex() {
            return Err(Error::invalid(format!(
                "{} is not convex; train it with gradient descent",
                self.loss.family
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub converged: bool,
    /// One entry per gap evaluation, starting at epoch 0.
    pub history: Vec<Checkpoint>,
    /// Updates that decreased the dual by more than `1e-10`.
    pub dual_violations: usize,
    pub max_dual_decrease: f64,
    /// Full recomputations of `W` that found drift above `1e-8`.
    pub drift_corrections: usize,
    /// Updates skipped because the example has a zero feature vector.
    pub noop_updates: usize,
    /// Largest `|<1, a_i>|` seen after an update.
    pub max_dual_sum: f64,
    pub seconds: f64,
    /// Per-class reports of a one-vs-all run.
    pub subproblems: Vec<TrainReport>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.history.last()
    }

    pub fn primal(&self) -> f64 {
        self.last().map_or(f64::NAN, |c| c.primal)
    }

    pub fn dual(&self) -> f64 {
        self.last().map_or(f64::NAN, |c| c.dual)
    }

    pub fn gap(&self) -> f64 {
        self.last().map_or(f64::NAN, |c| c.gap)
    }
}

/// `(P - D) / P`, or the absolute gap when `P` is not positive.
pub fn relative_gap(primal: f64, dual: f64) -> f64 {
    if primal > 0.0 {
        (primal - dual) / primal
    } else {
        primal - dual
    }
}

/// Formats a progress line `epoch=.. P=.. D=.. gap=.. sec=..`.
pub fn progress_line(c: &Checkpoint) -> String {
    format!(
        "epoch={} P={} D={} gap={} sec={:.3}",
        c.epoch,
        fmt_g(c.primal, 17),
        fmt_g(c.dual, 17),
        fmt_g(c.gap, 6),
        c.seconds
    )
}

/// Outcome of a single coordinate update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    /// Change of the dual objective caused by the update.
    pub dual_change: f64,
    /// The example was skipped (zero feature vector).
    pub noop: bool,
}

/// Solver state of a multiclass problem: duals `A` (`n x m`) and `W = X A^T`.
#[derive(Clone, Debug)]
pub struct DualState {
    dim: usize,
    m: usize,
    n: usize,
    lambda: f64,
    /// Row-major `d x m`.
    w: Vec<f64>,
    /// Row-major `n x m`; row `i` is `a_i`.
    a: Vec<f64>,
    sq_norms: Vec<f64>,
    scores: Vec<f64>,
    b: Vec<f64>,
    x: Vec<f64>,
    a_new: Vec<f64>,
}

impl DualState {
    /// The zero dual point (and hence `W = 0`).
    pub fn new(data: &Dataset, lambda: f64) -> Self {
        let (n, m, dim) = (data.len(), data.num_classes(), data.dim());
        DualState {
            dim,
            m,
            n,
            lambda,
            w: vec![0.0; dim * m],
            a: vec![0.0; n * m],
            sq_norms: data.sq_norms(),
            scores: vec![0.0; m],
            b: vec![0.0; m - 1],
            x: vec![0.0; m - 1],
            a_new: vec![0.0; m],
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Row-major `d x m` weights.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Dual vector `a_i`.
    pub fn duals(&self, i: usize) -> &[f64] {
        &self.a[i * self.m..(i + 1) * self.m]
    }

    /// Overwrites `a_i` and adjusts `W` accordingly (a test hook for
    /// arbitrary dual points).
    pub fn set_duals(&mut self, data: &Dataset, i: usize, a_i: &[f64]) {
        let m = self.m;
        let delta: Vec<f64> = a_i.iter().zip(self.duals(i)).map(|(n, o)| n - o).collect();
        rank_one_update(&mut self.w, m, data.example(i), &delta);
        self.a[i * m..(i + 1) * m].copy_from_slice(a_i);
    }

    pub fn model(&self, spec: &LossSpec) -> Model {
        Model::from_weights(self.dim, self.m, self.w.clone(), spec.family, spec.k, spec.gamma, self.lambda)
            .expect("state dimensions are consistent")
    }

    /// Maximizes the dual over `a_i` with all other duals fixed.
    pub fn update_example(&mut self, data: &Dataset, i: usize, spec: &LossSpec) -> Result<UpdateInfo> {
        let m = self.m;
        let y = data.label(i);
        let xi = data.example(i);
        let kk = self.sq_norms[i];
        let nl = self.n as f64 * self.lambda;

        scores_into(&self.w, m, xi, &mut self.scores);
        // q = W^T x_i - <x_i, x_i> a_i
        let a_old = &self.a[i * m..(i + 1) * m];
        let q: Vec<f64> = self.scores.iter().zip(a_old).map(|(s, a)| s - kk * a).collect();

        match spec.family {
            LossFamily::TopkHingeAlpha
            | LossFamily::TopkHingeBeta
            | LossFamily::TopkHingeAlphaSmooth
            | LossFamily::TopkHingeBetaSmooth => {
                let gamma = spec.effective_gamma();
                let radius = 1.0 / nl;
                let denom = kk + gamma * nl;
                if denom == 0.0 {
                    // the subproblem is linear in x: spread the full radius evenly
                    self.x.fill(radius / (m - 1) as f64);
                } else {
                    for (slot, j) in (0..m).filter(|&j| j != y).enumerate() {
                        self.b[slot] = (q[j] + 1.0 - q[y]) / denom;
                    }
                    let mut simplex = spec.simplex().expect("hinge family has a simplex");
                    simplex.radius = radius;
                    simplex.rho = kk / denom;
                    project_topk_into(&self.b, &simplex, &mut self.x)?;
                }
                let mut sum = 0.0;
                for (slot, j) in (0..m).filter(|&j| j != y).enumerate() {
                    self.a_new[j] = -self.x[slot];
                    sum += self.x[slot];
                }
                self.a_new[y] = sum;
            }
            LossFamily::TopkEntropy => {
                if kk == 0.0 {
                    log::debug!("example {i} has a zero feature vector; skipping its update");
                    return Ok(UpdateInfo {
                        dual_change: 0.0,
                        noop: true,
                    });
                }
                for (slot, j) in (0..m).filter(|&j| j != y).enumerate() {
                    self.b[slot] = q[j] - q[y];
                }
                let sol = entropy_prox(&self.b, kk / nl, spec.k)?;
                for (slot, j) in (0..m).filter(|&j| j != y).enumerate() {
                    self.a_new[j] = -sol.x[slot] / nl;
                }
                self.a_new[y] = sol.s / nl;
            }
            other => {
                return Err(Error::invalid(format!(
                    "{other} has no multiclass SDCA update"
                )))
            }
        }

        let a_old = &self.a[i * m..(i + 1) * m];
        let old_term = dual_term(spec, a_old, y, self.lambda, self.n).map_err(|e| at_example(e, i))?;
        let new_term = dual_term(spec, &self.a_new, y, self.lambda, self.n).map_err(|e| at_example(e, i))?;
        let mut q_delta = 0.0;
        let mut norm_change = 0.0;
        let mut delta = vec![0.0; m];
        for c in 0..m {
            delta[c] = self.a_new[c] - a_old[c];
            q_delta += q[c] * delta[c];
            norm_change += self.a_new[c] * self.a_new[c] - a_old[c] * a_old[c];
        }
        let dual_change = (new_term - old_term) / self.n as f64
            - 0.5 * self.lambda * (2.0 * q_delta + kk * norm_change);
        rank_one_update(&mut self.w, m, xi, &delta);
        self.a[i * m..(i + 1) * m].copy_from_slice(&self.a_new);
        Ok(UpdateInfo {
            dual_change,
            noop: false,
        })
    }

    /// Recomputes `W = X A^T` and returns the relative drift of the
    /// incrementally maintained copy.
    pub fn refresh_weights(&mut self, data: &Dataset) -> f64 {
        let m = self.m;
        let mut fresh = vec![0.0; self.w.len()];
        for i in 0..self.n {
            rank_one_update(&mut fresh, m, data.example(i), &self.a[i * m..(i + 1) * m]);
        }
        let drift = frobenius_distance(&self.w, &fresh) / (1.0 + frobenius(&fresh));
        self.w = fresh;
        drift
    }

    /// `(P(W), D(A))`.
    pub fn objectives(&self, data: &Dataset, spec: &LossSpec) -> Result<(f64, f64)> {
        let m = self.m;
        let n = self.n as f64;
        let per_example: Vec<(f64, f64)> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut scores = vec![0.0; m];
                scores_into(&self.w, m, data.example(i), &mut scores);
                let loss = eval_loss(spec, &scores, data.label(i))?;
                let dual = dual_term(spec, self.duals(i), data.label(i), self.lambda, self.n)
                    .map_err(|e| at_example(e, i))?;
                Ok((loss, dual))
            })
            .collect::<Result<_>>()?;
        let loss: f64 = per_example.iter().map(|p| p.0).sum();
        let conj: f64 = per_example.iter().map(|p| p.1).sum();
        let reg = 0.5 * self.lambda * frobenius(&self.w).powi(2);
        // `+ 0.0` turns the -0 of an all-zero dual into 0
        Ok((loss / n + reg, conj / n - reg + 0.0))
    }

    fn max_dual_sum(&self, i: usize) -> f64 {
        self.duals(i).iter().sum::<f64>().abs()
    }
}

fn at_example(e: Error, i: usize) -> Error {
    match e {
        Error::DualInfeasible { .. } => Error::DualInfeasible { example: i },
        other => other,
    }
}

/// `-L*(y, -lambda n a_i)`: the contribution of example `i` to `n D(A)`
/// before the regularizer.
pub fn dual_term(spec: &LossSpec, a_i: &[f64], y: usize, lambda: f64, n: usize) -> Result<f64> {
    let nl = lambda * n as f64;
    let sum: f64 = a_i.iter().sum();
    let scale = a_i.iter().fold(0.0f64, |m, v| m.max(v.abs())) * nl;
    if sum.abs() * nl > DOMAIN_SLACK * (1.0 + scale) {
        return Err(Error::DualInfeasible { example: 0 });
    }
    let v = a_i
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &a)| -nl * a);
    match spec.family {
        LossFamily::TopkHingeAlpha
        | LossFamily::TopkHingeBeta
        | LossFamily::TopkHingeAlphaSmooth
        | LossFamily::TopkHingeBetaSmooth => {
            let v: Vec<f64> = v.collect();
            let simplex = spec.simplex().expect("hinge family has a simplex");
            if simplex.infeasibility(&v) > DOMAIN_SLACK {
                return Err(Error::DualInfeasible { example: 0 });
            }
            let gamma = spec.effective_gamma();
            Ok(v.iter().map(|&vj| vj - 0.5 * gamma * vj * vj).sum())
        }
        LossFamily::TopkEntropy => {
            let v: Vec<f64> = v.collect();
            let simplex = crate::projections::TopkSimplex::alpha(spec.k, 1.0);
            if simplex.infeasibility(&v) > DOMAIN_SLACK {
                return Err(Error::DualInfeasible { example: 0 });
            }
            let s: f64 = v.iter().sum();
            Ok(-v.iter().map(|&vj| xlogx(vj.max(0.0))).sum::<f64>() - xlogx((1.0 - s).max(0.0)))
        }
        other => Err(Error::invalid(format!("{other} has no multiclass dual"))),
    }
}

fn rank_one_update(w: &mut [f64], m: usize, x: &[f64], delta: &[f64]) {
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let row = &mut w[j * m..(j + 1) * m];
            for (wjc, &d) in row.iter_mut().zip(delta) {
                *wjc += xj * d;
            }
        }
    }
}

fn frobenius(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn frobenius_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One coordinate-ascent problem as seen by the epoch loop.
trait DualProblem {
    fn update(&mut self, i: usize) -> Result<UpdateInfo>;
    fn dual_sum(&self, i: usize) -> f64;
    fn refresh(&mut self) -> f64;
    fn objectives(&self) -> Result<(f64, f64)>;
}

struct Multiclass<'a> {
    state: DualState,
    data: &'a Dataset,
    spec: LossSpec,
}

impl DualProblem for Multiclass<'_> {
    fn update(&mut self, i: usize) -> Result<UpdateInfo> {
        self.state.update_example(self.data, i, &self.spec)
    }

    fn dual_sum(&self, i: usize) -> f64 {
        self.state.max_dual_sum(i)
    }

    fn refresh(&mut self) -> f64 {
        self.state.refresh_weights(self.data)
    }

    fn objectives(&self) -> Result<(f64, f64)> {
        self.state.objectives(self.data, &self.spec)
    }
}

fn run_epochs(problem: &mut impl DualProblem, n: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng, tag: &str) -> Result<TrainReport> {
    let start = Instant::now();
    let mut report = TrainReport::default();
    let checkpoint = |epoch: usize, problem: &dyn Fn() -> Result<(f64, f64)>| -> Result<Checkpoint> {
        let (primal, dual) = problem()?;
        let c = Checkpoint {
            epoch,
            primal,
            dual,
            gap: relative_gap(primal, dual),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{tag}{}", progress_line(&c));
        Ok(c)
    };
    let first = checkpoint(0, &|| problem.objectives())?;
    report.history.push(first);
    report.converged = first.gap <= cfg.gap_tolerance;

    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0;
    while !report.converged && epoch < cfg.max_epochs {
        epoch += 1;
        order.shuffle(rng);
        for &i in &order {
            let info = problem.update(i)?;
            if info.noop {
                report.noop_updates += 1;
            }
            if info.dual_change < -MONOTONICITY_SLACK {
                report.dual_violations += 1;
            }
            report.max_dual_decrease = report.max_dual_decrease.max(-info.dual_change);
            report.max_dual_sum = report.max_dual_sum.max(problem.dual_sum(i));
        }
        if epoch % REFRESH_EVERY == 0 && problem.refresh() > DRIFT_TOLERANCE {
            report.drift_corrections += 1;
        }
        if epoch % cfg.gap_check_every == 0 || epoch == cfg.max_epochs {
            let c = checkpoint(epoch, &|| problem.objectives())?;
            report.history.push(c);
            report.converged = c.gap <= cfg.gap_tolerance;
        }
    }
    report.epochs = epoch;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains a linear model with SDCA. One-vs-all families are dispatched to
/// [`ova_train`].
pub fn sdca_train(data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    cfg.loss.check_classes(data.num_classes())?;
    if cfg.loss.family.is_ova() {
        return ova_train(data, cfg);
    }
    check_multiclass_k(cfg, data.num_classes())?;
    let mut problem = Multiclass {
        state: DualState::new(data, cfg.lambda),
        data,
        spec: cfg.loss,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = run_epochs(&mut problem, data.len(), cfg, &mut rng, "")?;
    Ok((problem.state.model(&cfg.loss), report))
}

/// Runs SDCA and also returns the final dual state.
pub fn sdca_train_state(data: &Dataset, cfg: &TrainConfig) -> Result<(DualState, TrainReport)> {
    cfg.validate()?;
    cfg.loss.check_classes(data.num_classes())?;
    if cfg.loss.family.is_ova() {
        return Err(Error::invalid("one-vs-all problems have no multiclass dual state"));
    }
    check_multiclass_k(cfg, data.num_classes())?;
    let mut problem = Multiclass {
        state: DualState::new(data, cfg.lambda),
        data,
        spec: cfg.loss,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = run_epochs(&mut problem, data.len(), cfg, &mut rng, "")?;
    Ok((problem.state, report))
}

fn check_multiclass_k(cfg: &TrainConfig, m: usize) -> Result<()> {
    if cfg.loss.k >= m {
        return Err(Error::invalid(format!(
            "SDCA for {} needs k < {m}, got k={}",
            cfg.loss.family, cfg.loss.k
        )));
    }
    Ok(())
}

/// Binary problem "class `c` against the rest" with scalar duals.
///
/// With `beta_i = s_i lambda n a_i` the dual domain is `beta_i in [0, 1]`.
pub struct BinaryState<'a> {
    data: &'a Dataset,
    family: LossFamily,
    gamma: f64,
    lambda: f64,
    signs: Vec<f64>,
    sq_norms: Vec<f64>,
    w: Vec<f64>,
    a: Vec<f64>,
}

impl<'a> BinaryState<'a> {
    pub fn new(data: &'a Dataset, class: usize, spec: &LossSpec, lambda: f64) -> Self {
        BinaryState {
            data,
            family: spec.family,
            gamma: spec.effective_gamma(),
            lambda,
            signs: data
                .labels()
                .iter()
                .map(|&y| if y == class { 1.0 } else { -1.0 })
                .collect(),
            sq_norms: data.sq_norms(),
            w: vec![0.0; data.dim()],
            a: vec![0.0; data.len()],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    fn nl(&self) -> f64 {
        self.lambda * self.a.len() as f64
    }

    /// `-L*(-beta)` for the binary loss.
    pub fn conjugate_term(&self, beta: f64) -> f64 {
        match self.family {
            LossFamily::OvaLogistic => -xlogx(beta) - xlogx(1.0 - beta),
            _ => beta - 0.5 * self.gamma * beta * beta,
        }
    }

    /// Maximizer over `beta in [0, 1]` of
    /// `-L*(-beta) - beta z - kappa beta^2 / 2`, where `z = s_i <w_{-i}, x_i>`
    /// and `kappa = <x_i, x_i> / (lambda n)`.
    pub fn solve_scalar(&self, z: f64, kappa: f64) -> f64 {
        match self.family {
            LossFamily::OvaLogistic => solve_logistic_scalar(z, kappa),
            _ => {
                let denom = self.gamma + kappa;
                if denom == 0.0 {
                    if z < 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    ((1.0 - z) / denom).clamp(0.0, 1.0)
                }
            }
        }
    }

    fn objectives_impl(&self) -> (f64, f64) {
        let n = self.a.len();
        let nl = self.nl();
        let mut loss = 0.0;
        let mut conj = 0.0;
        for i in 0..n {
            let f: f64 = self.data.example(i).iter().zip(&self.w).map(|(x, w)| x * w).sum();
            loss += binary_loss(self.family, self.signs[i] * f, self.gamma).0;
            let beta = (self.signs[i] * nl * self.a[i]).clamp(0.0, 1.0);
            conj += self.conjugate_term(beta);
        }
        let reg = 0.5 * self.lambda * self.w.iter().map(|v| v * v).sum::<f64>();
        (loss / n as f64 + reg, conj / n as f64 - reg + 0.0)
    }
}

/// Root of `log((1 - beta) / beta) = z + kappa beta` in `(0, 1)`, solved in
/// `sigma = log(beta / (1 - beta))` by safeguarded Newton on the bracket
/// `[-z - kappa, -z]`.
pub(crate) fn solve_logistic_scalar(z: f64, kappa: f64) -> f64 {
    sigmoid(solve_logistic_logit(z, kappa))
}

fn solve_logistic_logit(z: f64, kappa: f64) -> f64 {
    let h = |sigma: f64| -sigma - z - kappa * sigmoid(sigma);
    let (mut lo, mut hi) = (-z - kappa, -z);
    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..100 {
        let value = h(sigma);
        if value > 0.0 {
            lo = sigma;
        } else {
            hi = sigma;
        }
        let p = sigmoid(sigma);
        let slope = -1.0 - kappa * p * (1.0 - p);
        let mut next = sigma - value / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - sigma).abs() <= 1e-12 * sigma.abs().max(1.0) || hi - lo <= 1e-15 * sigma.abs().max(1.0) {
            return next;
        }
        sigma = next;
    }
    sigma
}

impl DualProblem for BinaryState<'_> {
    fn update(&mut self, i: usize) -> Result<UpdateInfo> {
        let x = self.data.example(i);
        let kk = self.sq_norms[i];
        let nl = self.nl();
        let s = self.signs[i];
        let f: f64 = x.iter().zip(&self.w).map(|(a, b)| a * b).sum();
        let z = s * (f - kk * self.a[i]);
        let kappa = kk / nl;
        let beta_old = (s * nl * self.a[i]).clamp(0.0, 1.0);
        let beta = self.solve_scalar(z, kappa);
        let a_new = s * beta / nl;
        let delta = a_new - self.a[i];
        // objective of the scalar subproblem, scaled by 1/n
        let sub = |b: f64| self.conjugate_term(b) - b * z - 0.5 * kappa * b * b;
        let dual_change = (sub(beta) - sub(beta_old)) / self.a.len() as f64;
        for (wj, &xj) in self.w.iter_mut().zip(x) {
            *wj += xj * delta;
        }
        self.a[i] = a_new;
        Ok(UpdateInfo {
            dual_change,
            noop: false,
        })
    }

    fn dual_sum(&self, _i: usize) -> f64 {
        0.0
    }

    fn refresh(&mut self) -> f64 {
        let mut fresh = vec![0.0; self.w.len()];
        for (i, &ai) in self.a.iter().enumerate() {
            for (fj, &xj) in fresh.iter_mut().zip(self.data.example(i)) {
                *fj += xj * ai;
            }
        }
        let drift = frobenius_distance(&self.w, &fresh) / (1.0 + frobenius(&fresh));
        self.w = fresh;
        drift
    }

    fn objectives(&self) -> Result<(f64, f64)> {
        Ok(self.objectives_impl())
    }
}

/// One-vs-all training: an independent binary SDCA problem per class, run
/// in parallel. Each class uses its own stream of the seeded generator, so
/// the result does not depend on scheduling.
pub fn ova_train(data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if !cfg.loss.family.is_ova() {
        return Err(Error::invalid(format!("{} is not a one-vs-all loss", cfg.loss.family)));
    }
    let m = data.num_classes();
    let counts = data.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {} has no training examples", c + 1)));
    }
    let start = Instant::now();
    let results: Vec<(Vec<f64>, TrainReport)> = (0..m)
        .into_par_iter()
        .map(|c| {
            let mut state = BinaryState::new(data, c, &cfg.loss, cfg.lambda);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64 + 1);
            let tag = format!("class={} ", c + 1);
            let report = run_epochs(&mut state, data.len(), cfg, &mut rng, &tag)?;
            Ok((state.w, report))
        })
        .collect::<Result<_>>()?;

    let dim = data.dim();
    let mut weights = vec![0.0; dim * m];
    let mut report = TrainReport::default();
    for (c, (w, sub)) in results.into_iter().enumerate() {
        for j in 0..dim {
            weights[j * m + c] = w[j];
        }
        report.epochs = report.epochs.max(sub.epochs);
        report.dual_violations += sub.dual_violations;
        report.max_dual_decrease = report.max_dual_decrease.max(sub.max_dual_decrease);
        report.drift_corrections += sub.drift_corrections;
        report.subproblems.push(sub);
    }
    report.converged = report.subproblems.iter().all(|s| s.converged);
    let primal: f64 = report.subproblems.iter().map(|s| s.primal()).sum();
    let dual: f64 = report.subproblems.iter().map(|s| s.dual()).sum();
    report.seconds = start.elapsed().as_secs_f64();
    report.history.push(Checkpoint {
        epoch: report.epochs,
        primal,
        dual,
        gap: relative_gap(primal, dual),
        seconds: report.seconds,
    });
    let spec = cfg.loss;
    let model = Model::from_weights(dim, m, weights, spec.family, spec.k, spec.gamma, cfg.lambda)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: LossFamily, k: usize, gamma: f64) -> LossSpec {
        LossSpec::new(family, k, gamma).unwrap()
    }

    #[test]
    fn single_example_closes_gap_in_one_epoch() {
        let data = Dataset::new(vec![1.0, 0.0], vec![0], 2, 2).unwrap();
        let mut cfg = TrainConfig::new(spec(LossFamily::TopkHingeAlpha, 1, 0.0), 1.0);
        cfg.max_epochs = 1;
        cfg.gap_tolerance = 1e-12;
        let (_, report) = sdca_train(&data, &cfg).unwrap();
        assert!(report.gap() <= 1e-6, "{report:?}");
        // brute force over the one-dimensional dual feasible set x in [0, 1/(lambda n)]
        let best = (0..=100_000)
            .map(|t| {
                let x = t as f64 / 100_000.0;
                // D = x - (lambda/2) |X A^T|^2 with a = (x, -x), |x_1| = 1
                x - 0.5 * 2.0 * x * x
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((report.dual() - best).abs() < 1e-9);
    }

    #[test]
    fn zero_state_objectives() {
        let data = Dataset::new(vec![1.0, 0.5, -1.0, 0.2, 0.3, 0.3], vec![0, 1, 2], 2, 3).unwrap();
        let state = DualState::new(&data, 0.1);
        let (p, d) = state.objectives(&data, &spec(LossFamily::TopkHingeAlpha, 1, 0.0)).unwrap();
        assert_eq!((p, d), (1.0, 0.0));
        let (p, d) = state.objectives(&data, &spec(LossFamily::TopkEntropy, 1, 0.0)).unwrap();
        assert!((p - 3f64.ln()).abs() < 1e-15 && d == 0.0);
    }

    #[test]
    fn infeasible_dual_is_reported() {
        let s = spec(LossFamily::TopkHingeAlpha, 1, 0.0);
        assert!(matches!(dual_term(&s, &[1.0, 1.0], 0, 1.0, 1), Err(Error::DualInfeasible { .. })));
        assert!(matches!(dual_term(&s, &[-2.0, 2.0], 0, 1.0, 1), Err(Error::DualInfeasible { .. })));
        assert_eq!(dual_term(&s, &[0.5, -0.5], 0, 1.0, 1).unwrap(), 0.5);
    }

    #[test]
    fn logistic_scalar_root() {
        for (z, kappa) in [(0.0, 0.0), (3.0, 1.0), (-30.0, 0.1), (40.0, 5.0), (0.2, 1e4)] {
            let sigma = solve_logistic_logit(z, kappa);
            let beta = sigmoid(sigma);
            assert!(beta > 0.0 && beta < 1.0);
            let residual = -sigma - z - kappa * beta;
            assert!(residual.abs() < 1e-9, "z={z} kappa={kappa} residual={residual}");
        }
    }

    #[test]
    fn rejects_nonconvex_and_bad_lambda() {
        let data = Dataset::new(vec![1.0, 0.0], vec![0], 2, 2).unwrap();
        let cfg = TrainConfig::new(spec(LossFamily::TopkEntropyTruncated, 1, 0.0), 1.0);
        assert!(sdca_train(&data, &cfg).is_err());
        let cfg = TrainConfig::new(spec(LossFamily::TopkHingeAlpha, 1, 0.0), 0.0);
        assert!(sdca_train(&data, &cfg).is_err());
    }

    #[test]
    fn progress_line_format() {
        let c = Checkpoint {
            epoch: 3,
            primal: 0.5,
            dual: 0.25,
            gap: 0.5,
            seconds: 1.23456,
        };
        assert_eq!(progress_line(&c), "epoch=3 P=0.5 D=0.25 gap=0.5 sec=1.235");
    }
}
