//! Loss functions on a score vector `f` with true class `y`.
//!
//! The multiclass losses depend only on the differences `a_j = f_j - f_y` for
//! `j != y`; the truth coordinate (where `a_y = 0`) is left out of every sort
//! and projection. One-vs-all losses are sums of binary losses on `s_c f_c`
//! with `s_c = +1` for the true class and `-1` otherwise.

use std::fmt;
use std::str::FromStr;

use crate::entropy::topk_entropy_loss;
use crate::error::{Error, Result};
use crate::projections::{argsort_desc, project_topk_into, SimplexVariant, TopkSimplex};
use crate::util::{log_sum_exp, sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossFamily {
    OvaHinge,
    OvaHingeSmooth,
    OvaLogistic,
    TopkHingeAlpha,
    TopkHingeBeta,
    TopkHingeAlphaSmooth,
    TopkHingeBetaSmooth,
    /// Top-k entropy; `k = 1` is the softmax loss.
    TopkEntropy,
    TopkEntropyTruncated,
}

impl LossFamily {
    pub const ALL: [LossFamily; 9] = [
        LossFamily::OvaHinge,
        LossFamily::OvaHingeSmooth,
        LossFamily::OvaLogistic,
        LossFamily::TopkHingeAlpha,
        LossFamily::TopkHingeBeta,
        LossFamily::TopkHingeAlphaSmooth,
        LossFamily::TopkHingeBetaSmooth,
        LossFamily::TopkEntropy,
        LossFamily::TopkEntropyTruncated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::OvaHinge => "ova_hinge",
            LossFamily::OvaHingeSmooth => "ova_hinge_smooth",
            LossFamily::OvaLogistic => "ova_logistic",
            LossFamily::TopkHingeAlpha => "multi_hinge_topk_alpha",
            LossFamily::TopkHingeBeta => "multi_hinge_topk_beta",
            LossFamily::TopkHingeAlphaSmooth => "multi_hinge_topk_alpha_smooth",
            LossFamily::TopkHingeBetaSmooth => "multi_hinge_topk_beta_smooth",
            LossFamily::TopkEntropy => "softmax_topk_entropy",
            LossFamily::TopkEntropyTruncated => "truncated_topk_entropy",
        }
    }

    pub fn is_ova(self) -> bool {
        matches!(
            self,
            LossFamily::OvaHinge | LossFamily::OvaHingeSmooth | LossFamily::OvaLogistic
        )
    }

    /// Families whose definition involves the smoothing parameter.
    pub fn uses_gamma(self) -> bool {
        matches!(
            self,
            LossFamily::OvaHingeSmooth
                | LossFamily::TopkHingeAlphaSmooth
                | LossFamily::TopkHingeBetaSmooth
        )
    }

    /// Whether the loss is convex in the scores.
    pub fn is_convex(self) -> bool {
        self != LossFamily::TopkEntropyTruncated
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(
            self,
            LossFamily::OvaHinge | LossFamily::TopkHingeAlpha | LossFamily::TopkHingeBeta
        )
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss family '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub family: LossFamily,
    pub k: usize,
    /// Smoothing parameter; ignored by the nonsmooth families.
    pub gamma: f64,
}

impl LossSpec {
    pub fn new(family: LossFamily, k: usize, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if family.uses_gamma() && !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "{family} needs a smoothing parameter gamma > 0, got {gamma}"
            )));
        }
        Ok(LossSpec { family, k, gamma })
    }

    /// Checks that `k` makes sense for `m` classes.
    pub fn check_classes(&self, m: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {m}")));
        }
        let max_k = match self.family {
            LossFamily::OvaHinge
            | LossFamily::OvaHingeSmooth
            | LossFamily::OvaLogistic
            | LossFamily::TopkHingeAlpha
            | LossFamily::TopkHingeBeta => m,
            _ => m - 1,
        };
        if self.k > max_k {
            return Err(Error::invalid(format!(
                "{} requires k <= {max_k} for {m} classes, got k={}",
                self.family, self.k
            )));
        }
        Ok(())
    }

    /// The top-k simplex carrying the conjugate of a top-k hinge loss.
    pub fn simplex(&self) -> Option<TopkSimplex> {
        let variant = match self.family {
            LossFamily::TopkHingeAlpha | LossFamily::TopkHingeAlphaSmooth => SimplexVariant::Alpha,
            LossFamily::TopkHingeBeta | LossFamily::TopkHingeBetaSmooth => SimplexVariant::Beta,
            _ => return None,
        };
        Some(TopkSimplex {
            variant,
            k: self.k,
            radius: 1.0,
            rho: 0.0,
        })
    }

    /// Smoothing parameter as used by the solvers (zero for nonsmooth hinges).
    pub fn effective_gamma(&self) -> f64 {
        if self.family.uses_gamma() {
            self.gamma
        } else {
            0.0
        }
    }
}

/// 1 if more than `k - 1` classes score strictly above the truth.
pub fn topk_error(scores: &[f64], y: usize, k: usize) -> u8 {
    u8::from(rank_of_truth(scores, y) >= k)
}

/// Number of classes whose score strictly exceeds the score of `y`.
pub fn rank_of_truth(scores: &[f64], y: usize) -> usize {
    let fy = scores[y];
    scores.iter().filter(|&&f| f > fy).count()
}

/// `1 - (sum of the k largest probabilities)`.
pub fn bayes_topk_error(probs: &[f64], k: usize) -> f64 {
    let mut p = probs.to_vec();
    p.sort_by(|a, b| b.total_cmp(a));
    1.0 - p.iter().take(k).sum::<f64>()
}

/// Loss value at `scores` for true class `y`.
pub fn eval_loss(spec: &LossSpec, scores: &[f64], y: usize) -> Result<f64> {
    loss_impl(spec, scores, y, None)
}

/// Gradient (a subgradient for the nonsmooth families) with respect to the scores.
pub fn grad_loss(spec: &LossSpec, scores: &[f64], y: usize) -> Result<Vec<f64>> {
    let mut g = vec![0.0; scores.len()];
    loss_impl(spec, scores, y, Some(&mut g))?;
    Ok(g)
}

/// Loss value, writing the gradient into `grad`.
pub fn loss_and_grad(spec: &LossSpec, scores: &[f64], y: usize, grad: &mut [f64]) -> Result<f64> {
    if grad.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient buffer has length {}, scores {}",
            grad.len(),
            scores.len()
        )));
    }
    loss_impl(spec, scores, y, Some(grad))
}

/// The softmax loss `log(1 + sum_{j != y} e^{f_j - f_y})`.
pub fn softmax_loss(scores: &[f64], y: usize) -> f64 {
    let fy = scores[y];
    log_sum_exp_with_zero(
        scores
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &f)| f - fy),
    )
}

/// The multiclass hinge loss `max{0, max_{j != y} (1 + f_j - f_y)}`.
pub fn multiclass_hinge_loss(scores: &[f64], y: usize) -> f64 {
    let fy = scores[y];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &f)| 1.0 + f - fy)
        .fold(0.0, f64::max)
}

fn log_sum_exp_with_zero(a: impl Iterator<Item = f64> + Clone) -> f64 {
    log_sum_exp(std::iter::once(0.0).chain(a))
}

fn loss_impl(spec: &LossSpec, scores: &[f64], y: usize, grad: Option<&mut [f64]>) -> Result<f64> {
    let m = scores.len();
    if y >= m {
        return Err(Error::invalid(format!("label {y} out of range for {m} classes")));
    }
    spec.check_classes(m)?;
    if scores.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if spec.family.is_ova() {
        return Ok(ova_loss(spec, scores, y, grad));
    }

    let fy = scores[y];
    let others: Vec<usize> = (0..m).filter(|&j| j != y).collect();
    let k = spec.k;
    let kf = k as f64;
    // reduced gradient over `others`
    let mut g = vec![0.0; m - 1];
    let value = match spec.family {
        LossFamily::TopkHingeAlpha | LossFamily::TopkHingeBeta => {
            let z: Vec<f64> = others.iter().map(|&j| 1.0 + scores[j] - fy).collect();
            let order = argsort_desc(&z);
            let top = &order[..k.min(m - 1)];
            if spec.family == LossFamily::TopkHingeAlpha {
                let sum: f64 = top.iter().map(|&i| z[i]).sum();
                if sum > 0.0 {
                    top.iter().for_each(|&i| g[i] = 1.0 / kf);
                    sum / kf
                } else {
                    0.0
                }
            } else {
                let mut sum = 0.0;
                for &i in top {
                    if z[i] > 0.0 {
                        sum += z[i];
                        g[i] = 1.0 / kf;
                    }
                }
                sum / kf
            }
        }
        LossFamily::TopkHingeAlphaSmooth | LossFamily::TopkHingeBetaSmooth => {
            let z: Vec<f64> = others.iter().map(|&j| 1.0 + scores[j] - fy).collect();
            let gamma = spec.gamma;
            let mut simplex = spec.simplex().expect("hinge family");
            simplex.radius = gamma;
            let mut p = vec![0.0; m - 1];
            project_topk_into(&z, &simplex, &mut p)?;
            let zp: f64 = z.iter().zip(&p).map(|(a, b)| a * b).sum();
            let pp: f64 = p.iter().map(|v| v * v).sum();
            g.iter_mut().zip(&p).for_each(|(gi, pi)| *gi = pi / gamma);
            (zp - 0.5 * pp) / gamma
        }
        LossFamily::TopkEntropy => {
            let a: Vec<f64> = others.iter().map(|&j| scores[j] - fy).collect();
            let sol = topk_entropy_loss(&a, k)?;
            g.copy_from_slice(&sol.x);
            sol.value
        }
        LossFamily::TopkEntropyTruncated => {
            let a: Vec<f64> = others.iter().map(|&j| scores[j] - fy).collect();
            // drop the k-1 largest differences
            let order = argsort_desc(&a);
            let mut kept = order[k - 1..].to_vec();
            kept.sort_unstable();
            let lse = log_sum_exp_with_zero(kept.iter().map(|&i| a[i]));
            kept.iter().for_each(|&i| g[i] = (a[i] - lse).exp());
            lse
        }
        _ => unreachable!("one-vs-all handled above"),
    };
    if let Some(grad) = grad {
        grad[y] = -g.iter().sum::<f64>();
        for (&j, &gj) in others.iter().zip(&g) {
            grad[j] = gj;
        }
    }
    Ok(value)
}

fn ova_loss(spec: &LossSpec, scores: &[f64], y: usize, mut grad: Option<&mut [f64]>) -> f64 {
    let gamma = spec.gamma;
    let mut total = 0.0;
    for (c, &f) in scores.iter().enumerate() {
        let sign = if c == y { 1.0 } else { -1.0 };
        let (value, deriv) = binary_loss(spec.family, sign * f, gamma);
        total += value;
        if let Some(g) = grad.as_deref_mut() {
            g[c] = sign * deriv;
        }
    }
    total
}

/// Binary loss and its derivative at the margin `z = s f`.
pub fn binary_loss(family: LossFamily, z: f64, gamma: f64) -> (f64, f64) {
    match family {
        LossFamily::OvaHinge => {
            if z < 1.0 {
                (1.0 - z, -1.0)
            } else {
                (0.0, 0.0)
            }
        }
        LossFamily::OvaHingeSmooth => {
            if z < 1.0 - gamma {
                (1.0 - z - 0.5 * gamma, -1.0)
            } else if z <= 1.0 {
                ((z - 1.0) * (z - 1.0) / (2.0 * gamma), (z - 1.0) / gamma)
            } else {
                (0.0, 0.0)
            }
        }
        LossFamily::OvaLogistic => (softplus(-z), -sigmoid(-z)),
        other => panic!("{other} is not a binary loss"),
    }
}
