//! Method names and the solver dispatch behind them.

use std::fmt;
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gd::{gd_train, GdConfig, GdStatus};
use crate::losses::{LossFamily, LossSpec};
use crate::model::Model;
use crate::sdca::{sdca_train, TrainConfig};

/// The training methods offered on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    SvmOva,
    SvmOvaSmooth,
    LrOva,
    SvmMulti,
    LrMulti,
    TopkSvmA,
    TopkSvmB,
    TopkSvmASmooth,
    TopkSvmBSmooth,
    TopkEnt,
    TopkEntTrunc,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::SvmOva,
        Method::SvmOvaSmooth,
        Method::LrOva,
        Method::SvmMulti,
        Method::LrMulti,
        Method::TopkSvmA,
        Method::TopkSvmB,
        Method::TopkSvmASmooth,
        Method::TopkSvmBSmooth,
        Method::TopkEnt,
        Method::TopkEntTrunc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SvmOva => "svm_ova",
            Method::SvmOvaSmooth => "svm_ova_smooth",
            Method::LrOva => "lr_ova",
            Method::SvmMulti => "svm_multi",
            Method::LrMulti => "lr_multi",
            Method::TopkSvmA => "topk_svm_a",
            Method::TopkSvmB => "topk_svm_b",
            Method::TopkSvmASmooth => "topk_svm_a_smooth",
            Method::TopkSvmBSmooth => "topk_svm_b_smooth",
            Method::TopkEnt => "topk_ent",
            Method::TopkEntTrunc => "topk_ent_trunc",
        }
    }

    pub fn family(self) -> LossFamily {
        match self {
            Method::SvmOva => LossFamily::OvaHinge,
            Method::SvmOvaSmooth => LossFamily::OvaHingeSmooth,
            Method::LrOva => LossFamily::OvaLogistic,
            Method::SvmMulti | Method::TopkSvmA => LossFamily::TopkHingeAlpha,
            Method::TopkSvmB => LossFamily::TopkHingeBeta,
            Method::TopkSvmASmooth => LossFamily::TopkHingeAlphaSmooth,
            Method::TopkSvmBSmooth => LossFamily::TopkHingeBetaSmooth,
            Method::LrMulti | Method::TopkEnt => LossFamily::TopkEntropy,
            Method::TopkEntTrunc => LossFamily::TopkEntropyTruncated,
        }
    }

    /// Whether `k` is fixed to 1 by the method.
    pub fn fixes_k(self) -> bool {
        matches!(
            self,
            Method::SvmOva | Method::SvmOvaSmooth | Method::LrOva | Method::SvmMulti | Method::LrMulti
        )
    }

    /// Loss specification for this method; `k` is ignored when [`fixes_k`](Self::fixes_k).
    pub fn loss(self, k: usize, gamma: f64) -> Result<LossSpec> {
        let k = if self.fixes_k() { 1 } else { k };
        LossSpec::new(self.family(), k, gamma)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown loss '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub gap_tolerance: f64,
    pub seed: u64,
    pub gd: GdConfig,
    /// Starting point for gradient descent; a softmax model is trained when absent.
    pub init: Option<Model>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 1000,
            gap_tolerance: 1e-3,
            seed: 0,
            gd: GdConfig::default(),
            init: None,
        }
    }
}

/// Final objective values of a run. `dual` and `gap` are NaN for gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSummary {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Epochs (SDCA) or iterations (gradient descent).
    pub epochs: usize,
    pub converged: bool,
}

/// Trains `spec` at regularization `lambda`: SDCA for the convex losses,
/// gradient descent for the truncated entropy.
pub fn train(data: &Dataset, spec: &LossSpec, lambda: f64, opts: &TrainOptions) -> Result<(Model, TrainSummary)> {
    spec.check_classes(data.num_classes())?;
    let sdca_config = |loss| TrainConfig {
        loss,
        lambda,
        max_epochs: opts.max_epochs,
        gap_tolerance: opts.gap_tolerance,
        gap_check_every: 1,
        seed: opts.seed,
    };
    if spec.family.is_convex() {
        let (model, report) = sdca_train(data, &sdca_config(*spec))?;
        if !report.converged {
            log::warn!(
                "{}: gap {} above tolerance after {} epochs",
                spec.family,
                report.gap(),
                report.epochs
            );
        }
        let summary = TrainSummary {
            primal: report.primal(),
            dual: report.dual(),
            gap: report.gap(),
            epochs: report.epochs,
            converged: report.converged,
        };
        return Ok((model, summary));
    }
    let init = match &opts.init {
        Some(m) => m.clone(),
        None => {
            let softmax = LossSpec::new(LossFamily::TopkEntropy, 1, 0.0)?;
            sdca_train(data, &sdca_config(softmax))?.0
        }
    };
    let (model, report) = gd_train(data, spec, lambda, &init, &opts.gd)?;
    if report.status == GdStatus::Stalled {
        log::warn!("line search stalled after {} iterations", report.iterations);
    }
    let summary = TrainSummary {
        primal: report.objective(),
        dual: f64::NAN,
        gap: f64::NAN,
        epochs: report.iterations,
        converged: report.status == GdStatus::Converged,
    };
    Ok((model, summary))
}
