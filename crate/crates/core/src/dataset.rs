//! Labeled multiclass datasets: LibSVM text IO, the synthetic circle
//! generator, and train/test splitting.
//!
//! Features are stored densely, one example after another, so `example(i)`
//! is a contiguous slice of length `dim`. Labels are 0-based in memory and
//! 1-based in files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// `features` holds `labels.len()` examples of length `dim` back to back.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one example"));
        }
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} exceeds the number of classes {num_classes}",
                y + 1
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// 0-based label of example `i`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Squared norms `<x_i, x_i>` of all examples.
    pub fn sq_norms(&self) -> Vec<f64> {
        self.features
            .chunks_exact(self.dim)
            .map(|x| x.iter().map(|v| v * v).sum())
            .collect()
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Pads features with zeros up to `dim` and raises the class count to
    /// `num_classes`, so that data files missing trailing features or
    /// classes line up with a training set.
    pub fn conform(mut self, dim: usize, num_classes: usize) -> Result<Dataset> {
        if dim < self.dim || num_classes < self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "data has dimension {} and {} classes, model expects {dim} and {num_classes}",
                self.dim, self.num_classes
            )));
        }
        if dim > self.dim {
            let mut features = Vec::with_capacity(self.len() * dim);
            for x in self.features.chunks_exact(self.dim) {
                features.extend_from_slice(x);
                features.resize(features.len() + dim - self.dim, 0.0);
            }
            self.features = features;
            self.dim = dim;
        }
        self.num_classes = num_classes;
        Ok(self)
    }
}

/// Reads a LibSVM/SVMlight text file: `<label> <index>:<value> ...` per line,
/// with 1-based labels and strictly increasing 1-based indices. The
/// dimension and class count are the largest index and label seen.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(Error::file(path))?);
    let mut features: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    let mut dim = 0;
    let mut num_classes = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: i64 = label_tok
            .parse()
            .map_err(|_| err(format!("label '{label_tok}' is not an integer")))?;
        if label < 1 {
            return Err(err(format!("label {label} is below 1")));
        }
        let label = label as usize;
        num_classes = num_classes.max(label);
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index '{idx}'")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value '{val}'")))?;
            if idx <= last {
                return Err(err(format!(
                    "feature indices must be 1-based and increasing ({idx} after {last})"
                )));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value '{val}'")));
            }
            last = idx;
            row.push((idx, val));
        }
        dim = dim.max(last);
        features.push((label - 1, row));
    }
    if features.is_empty() {
        return Err(Error::Empty(path.to_path_buf()));
    }
    let dim = dim.max(1);
    let mut dense = vec![0.0; features.len() * dim];
    let mut labels = Vec::with_capacity(features.len());
    for (i, (y, row)) in features.into_iter().enumerate() {
        for (idx, val) in row {
            dense[i * dim + idx - 1] = val;
        }
        labels.push(y);
    }
    Dataset::new(dense, labels, dim, num_classes.max(2))
}

/// Writes `data` in LibSVM format; zero features are omitted and values are
/// printed in shortest round-trip form.
pub fn write_libsvm(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    for i in 0..data.len() {
        write!(out, "{}", data.label(i) + 1)?;
        for (j, &v) in data.example(i).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// Fraction of examples in the first part, strictly between 0 and 1.
    pub train_fraction: f64,
    pub seed: u64,
    /// Split each class separately to keep the class proportions.
    pub stratified: bool,
}

/// Random two-way split. Both parts keep the original example order.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let frac = spec.train_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut first = Vec::new();
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); data.num_classes()];
        for i in 0..data.len() {
            by_class[data.label(i)].push(i);
        }
        by_class
    } else {
        vec![(0..data.len()).collect()]
    };
    // largest-remainder rounding keeps the total at round(frac * n)
    let target = (frac * data.len() as f64).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|g| frac * g.len() as f64).collect();
    let mut takes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..groups.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(takes.iter().sum());
    for &c in &by_remainder {
        if missing == 0 {
            break;
        }
        if takes[c] < groups[c].len() {
            takes[c] += 1;
            missing -= 1;
        }
    }
    for (c, mut group) in groups.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        group.shuffle(&mut rng);
        let take = takes[c];
        if spec.stratified && (take == 0 || take == group.len()) {
            return Err(Error::invalid(format!(
                "class {} with {} examples cannot be split at fraction {frac}",
                c + 1,
                group.len()
            )));
        }
        first.extend_from_slice(&group[..take]);
    }
    first.sort_unstable();
    let mut in_first = vec![false; data.len()];
    first.iter().for_each(|&i| in_first[i] = true);
    let second: Vec<usize> = (0..data.len()).filter(|&i| !in_first[i]).collect();
    if first.is_empty() || second.is_empty() {
        return Err(Error::invalid("split produced an empty part"));
    }
    Ok((data.subset(&first), data.subset(&second)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CircleSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for CircleSpec {
    fn default() -> Self {
        CircleSpec {
            n_train: 200,
            n_val: 200,
            n_test: 200_000,
            seed: 0,
        }
    }
}

/// Right ends of the five segments of `[0, 7)`.
pub const CIRCLE_SEGMENT_ENDS: [f64; 5] = [1.0, 2.0, 3.0, 6.0, 7.0];

/// Class distribution on each segment.
pub const CIRCLE_CLASS_WEIGHTS: [[f64; 3]; 5] = [
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.4, 0.1, 0.5],
    [0.3, 0.7, 0.0],
    [0.0, 0.0, 1.0],
];

/// Segment containing the position `u` in `[0, 7)`.
pub fn circle_segment(u: f64) -> usize {
    CIRCLE_SEGMENT_ENDS
        .iter()
        .position(|&end| u < end)
        .unwrap_or(CIRCLE_SEGMENT_ENDS.len() - 1)
}

/// Class probabilities at position `u` in `[0, 7)`.
pub fn circle_class_probs(u: f64) -> [f64; 3] {
    CIRCLE_CLASS_WEIGHTS[circle_segment(u)]
}

/// Top-k error of the Bayes classifier on the circle distribution.
pub fn circle_bayes_topk_error(k: usize) -> f64 {
    let mut start = 0.0;
    let mut err = 0.0;
    for (seg, &end) in CIRCLE_SEGMENT_ENDS.iter().enumerate() {
        err += (end - start) / 7.0 * crate::losses::bayes_topk_error(&CIRCLE_CLASS_WEIGHTS[seg], k);
        start = end;
    }
    err
}

/// Draws one example: position `u` uniform on `[0, 7)`, label from the
/// segment's class distribution, feature `(cos 2 pi t, sin 2 pi t)` with
/// `t = u / 7`. Returns `(u, label, feature)`.
pub fn sample_circle_point(rng: &mut impl Rng) -> (f64, usize, [f64; 2]) {
    let u = rng.random::<f64>() * 7.0;
    let weights = circle_class_probs(u);
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut label = weights.len() - 1;
    for (c, &w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            label = c;
            break;
        }
    }
    // never emit a class with zero weight because of rounding in `acc`
    while weights[label] == 0.0 {
        label -= 1;
    }
    let angle = 2.0 * std::f64::consts::PI * (u / 7.0);
    (u, label, [angle.cos(), angle.sin()])
}

/// Train, validation and test sets from the synthetic circle distribution,
/// drawn in that order from one ChaCha8 stream seeded with `spec.seed`.
pub fn generate_circle(spec: &CircleSpec) -> Result<(Dataset, Dataset, Dataset)> {
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 {
        return Err(Error::invalid("circle sample sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| {
        let mut features = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (_, y, x) = sample_circle_point(&mut rng);
            features.extend_from_slice(&x);
            labels.push(y);
        }
        Dataset::new(features, labels, 2, 3)
    };
    let train = draw(spec.n_train)?;
    let val = draw(spec.n_val)?;
    let test = draw(spec.n_test)?;
    Ok((train, val, test))
}
