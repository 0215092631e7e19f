//! Linear multiclass models and their text file format.
//!
//! ```text
//! topk-model v1
//! <d> <m> <family> <k> <gamma> <lambda>
//! <w_1: d numbers>
//! ...
//! <w_m: d numbers>
//! ```
//!
//! Numbers are written with 17 significant digits, which reproduces every
//! `f64` exactly on reading.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossFamily;

const MAGIC: &str = "topk-model v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    dim: usize,
    num_classes: usize,
    /// Row-major `d x m`: entry `(j, c)` at `j * m + c`.
    weights: Vec<f64>,
    pub family: LossFamily,
    pub k: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl Model {
    /// A model with all weights zero.
    pub fn zeros(dim: usize, num_classes: usize, family: LossFamily, k: usize, gamma: f64, lambda: f64) -> Self {
        Model {
            dim,
            num_classes,
            weights: vec![0.0; dim * num_classes],
            family,
            k,
            gamma,
            lambda,
        }
    }

    /// Builds a model from row-major `d x m` weights.
    pub fn from_weights(
        dim: usize,
        num_classes: usize,
        weights: Vec<f64>,
        family: LossFamily,
        k: usize,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        if weights.len() != dim * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {dim} x {num_classes} model",
                weights.len()
            )));
        }
        Ok(Model {
            dim,
            num_classes,
            weights,
            family,
            k,
            gamma,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Row-major `d x m` weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.weights[feature * self.num_classes + class]
    }

    /// Weight vector of one class.
    pub fn class_weights(&self, class: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.weight(j, class)).collect()
    }

    /// Scores `f_c(x) = <w_c, x>` written into `out`.
    pub fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        scores_into(&self.weights, self.num_classes, x, out);
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.scores_into(x, &mut out);
        out
    }

    /// Checks that `data` can be scored by this model.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim || data.num_classes() > self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "model is {} x {} but data has dimension {} and {} classes",
                self.dim,
                self.num_classes,
                data.dim(),
                data.num_classes()
            )));
        }
        Ok(())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(Error::file(path))?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(
            out,
            "{} {} {} {} {:.16e} {:.16e}",
            self.dim, self.num_classes, self.family, self.k, self.gamma, self.lambda
        )?;
        for c in 0..self.num_classes {
            let line: Vec<String> = (0..self.dim)
                .map(|j| format!("{:.16e}", self.weight(j, c)))
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(Error::file(path))?);
        let mut lines = reader.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (n, header) = next("header")?;
        if header.trim() != MAGIC {
            return Err(err(n, format!("expected '{MAGIC}'")));
        }
        let (n, meta) = next("metadata")?;
        let fields: Vec<&str> = meta.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(n, "metadata needs: d m family k gamma lambda".into()));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| err(n, format!("bad number '{s}'")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| err(n, format!("bad integer '{s}'")))
        };
        let dim = int(fields[0])?;
        let num_classes = int(fields[1])?;
        let family: LossFamily = fields[2].parse().map_err(|_| err(n, format!("unknown family '{}'", fields[2])))?;
        let k = int(fields[3])?;
        let gamma = num(fields[4])?;
        let lambda = num(fields[5])?;
        let mut model = Model::zeros(dim, num_classes, family, k, gamma, lambda);
        for c in 0..num_classes {
            let (n, line) = next("weight row")?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| err(n, format!("bad weight '{s}'"))))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(err(n, format!("expected {dim} weights, found {}", values.len())));
            }
            for (j, v) in values.into_iter().enumerate() {
                model.weights[j * num_classes + c] = v;
            }
        }
        Ok(model)
    }
}

/// `out_c = sum_j x_j w[j * m + c]` for a row-major `d x m` matrix `w`.
#[inline]
pub(crate) fn scores_into(w: &[f64], m: usize, x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let row = &w[j * m..(j + 1) * m];
            for (o, &wjc) in out.iter_mut().zip(row) {
                *o += xj * wjc;
            }
        }
    }
}
