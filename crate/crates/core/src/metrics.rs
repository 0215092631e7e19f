//! Top-k accuracy, result tables and model selection over a grid of `C`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::rank_of_truth;
use crate::model::Model;

/// Top-k accuracy in percent for `k = 1..=kmax`.
///
/// An example counts as correct for `k` when fewer than `k` classes score
/// strictly above its label, so ties never count against the truth.
pub fn topk_accuracy(model: &Model, data: &Dataset, kmax: usize) -> Result<Vec<f64>> {
    model.check_data(data)?;
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let m = model.num_classes();
    let ranks: Vec<usize> = (0..data.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; m],
            |scores, i| {
                model.scores_into(data.example(i), scores);
                rank_of_truth(scores, data.label(i))
            },
        )
        .collect();
    let mut hist = vec![0usize; m];
    for r in ranks {
        hist[r] += 1;
    }
    let mut correct = 0;
    Ok((0..kmax)
        .map(|r| {
            correct += hist.get(r).copied().unwrap_or(0);
            100.0 * correct as f64 / data.len() as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub c: f64,
    pub lambda: f64,
    /// The top-k accuracy this row was selected for (0 if not selected).
    pub k_target: usize,
    /// Accuracy in percent for `k = 1..`.
    pub accuracy: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub kmax: usize,
    pub n_eval: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn new(kmax: usize, n_eval: usize) -> Self {
        MetricsTable {
            kmax,
            n_eval,
            rows: Vec::new(),
        }
    }

    pub fn header(kmax: usize) -> String {
        let mut h = String::from("method,C,lambda,k_target");
        for k in 1..=kmax {
            write!(h, ",top{k}").unwrap();
        }
        h
    }

    pub fn format_row(row: &MetricsRow) -> String {
        let num = |v: f64| if v.is_nan() { "nan".to_string() } else { v.to_string() };
        let mut line = format!("{},{},{},{}", row.method, num(row.c), num(row.lambda), row.k_target);
        for a in &row.accuracy {
            write!(line, ",{a:.2}").unwrap();
        }
        line
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header(self.kmax);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::format_row(row));
            out.push('\n');
        }
        out
    }
}

/// Grid of regularization constants `C = 1 / (lambda n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// Increasing values of `C`.
    pub c_values: Vec<f64>,
    /// Top-k accuracies to select a model for.
    pub target_ks: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::powers_of_two(-18, 18, vec![1])
    }
}

impl GridSpec {
    /// `C = 2^lo, 2^(lo+1), ..., 2^hi`.
    pub fn powers_of_two(lo: i32, hi: i32, target_ks: Vec<usize>) -> Self {
        GridSpec {
            c_values: (lo..=hi).map(|e| 2f64.powi(e)).collect(),
            target_ks,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() {
            return Err(Error::invalid("the C grid is empty"));
        }
        if self.c_values.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("every C must be positive and finite"));
        }
        if self.target_ks.is_empty() || self.target_ks.contains(&0) {
            return Err(Error::invalid("target k values must be at least 1"));
        }
        Ok(())
    }
}

/// `lambda = 1 / (C n)`.
pub fn lambda_from_c(c: f64, n: usize) -> f64 {
    1.0 / (c * n as f64)
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub k_target: usize,
    /// Index into the grid.
    pub index: usize,
    pub c: f64,
    pub lambda: f64,
    /// Validation top-k accuracy of the chosen model.
    pub val_accuracy: f64,
    /// The best `C` sits at an end of the grid.
    pub boundary: bool,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    /// Validation accuracies of every grid point, one row per `C`.
    pub validation: MetricsTable,
    pub selections: Vec<Selection>,
    /// Trained models, in grid order.
    pub models: Vec<Model>,
}

impl CvResult {
    pub fn model_for(&self, k_target: usize) -> Option<&Model> {
        self.selections
            .iter()
            .find(|s| s.k_target == k_target)
            .map(|s| &self.models[s.index])
    }
}

/// Trains one model per `C` on `train` (in parallel) and picks, for each
/// target `k`, the `C` with the best validation top-k accuracy. Ties go to
/// the smaller `C`.
pub fn cross_validate<F>(train: &Dataset, val: &Dataset, method: &str, grid: &GridSpec, kmax: usize, fit: F) -> Result<CvResult>
where
    F: Fn(f64) -> Result<Model> + Sync,
{
    grid.validate()?;
    let kmax = kmax.max(*grid.target_ks.iter().max().expect("validated"));
    let n = train.len();
    let fitted: Vec<(Model, Vec<f64>)> = grid
        .c_values
        .par_iter()
        .map(|&c| {
            let model = fit(lambda_from_c(c, n))?;
            let acc = topk_accuracy(&model, val, kmax)?;
            Ok((model, acc))
        })
        .collect::<Result<_>>()?;

    let mut validation = MetricsTable::new(kmax, val.len());
    for (&c, (_, acc)) in grid.c_values.iter().zip(&fitted) {
        validation.rows.push(MetricsRow {
            method: method.to_string(),
            c,
            lambda: lambda_from_c(c, n),
            k_target: 0,
            accuracy: acc.clone(),
        });
    }
    let last = grid.c_values.len() - 1;
    let selections = grid
        .target_ks
        .iter()
        .map(|&k| {
            let mut best = 0;
            for (idx, (_, acc)) in fitted.iter().enumerate() {
                let (a, b) = (acc[k - 1], fitted[best].1[k - 1]);
                if a > b || (a == b && grid.c_values[idx] < grid.c_values[best]) {
                    best = idx;
                }
            }
            let boundary = last > 0 && (best == 0 || best == last);
            if boundary {
                log::warn!("{method}: best C for top-{k} is at the edge of the grid");
            }
            Selection {
                k_target: k,
                index: best,
                c: grid.c_values[best],
                lambda: lambda_from_c(grid.c_values[best], n),
                val_accuracy: fitted[best].1[k - 1],
                boundary,
            }
        })
        .collect();
    Ok(CvResult {
        validation,
        selections,
        models: fitted.into_iter().map(|(m, _)| m).collect(),
    })
}
