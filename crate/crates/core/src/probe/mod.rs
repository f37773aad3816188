//! Cross-validated linear probes over layerwise embeddings.

mod svr;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use svr::{train_svr, train_svr_traced, LinearModel, Standardizer, SvrParams};

use crate::embstore::AlignedDataset;
use crate::error::{Error, Result};
use crate::stats::{mean_defined, spearman};
use svr::solve_dual;

pub const DEFAULT_FOLDS: usize = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

// keeps the fold shuffle stream apart from the solver streams
const FOLD_STREAM: u64 = 0x666f_6c64;

/// Fold id for every sample: a seeded shuffle followed by a contiguous split
/// into `k` folds whose sizes differ by at most one (larger folds first).
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::usage(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::usage(format!("{n} samples cannot fill {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, &[FOLD_STREAM])));
    let (base, extra) = (n / k, n % k);
    let mut out = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            out[i] = fold;
        }
        pos += size;
    }
    Ok(out)
}

/// Standardized train/test matrices for one fold of one input matrix.
struct PreparedFold {
    train_rows: Vec<usize>,
    test_rows: Vec<usize>,
    train: Vec<f64>,
    test: Vec<f64>,
    width: usize,
}

impl PreparedFold {
    fn new<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, assignment: &[usize], fold: usize) -> Self {
        let (test_rows, train_rows): (Vec<usize>, Vec<usize>) =
            (0..assignment.len()).partition(|&i| assignment[i] == fold);
        let st = Standardizer::fit(x, &train_rows);
        PreparedFold {
            train: st.transform_augmented(x, &train_rows),
            test: st.transform_augmented(x, &test_rows),
            train_rows,
            test_rows,
            width: x.ncols() + 1,
        }
    }

    /// Trains on the fold's training rows and writes predictions for its
    /// test rows into `out`.
    fn fit_predict(&self, y: &[f64], params: &SvrParams, seed: u64, out: &mut [f64]) {
        let y_train: Vec<f64> = self.train_rows.iter().map(|&i| y[i]).collect();
        let sol = solve_dual(&self.train, self.width, &y_train, params, seed);
        for (t, &i) in self.test_rows.iter().enumerate() {
            out[i] = sol.predict_row(&self.test[t * self.width..(t + 1) * self.width]);
        }
    }
}

fn check_matrix<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::usage(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.iter()
        .map(|v| (*v).into())
        .chain(y.iter().copied())
        .any(|v: f64| !v.is_finite())
    {
        return Err(Error::InvalidData("probe input contains non-finite values".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutput {
    /// One out-of-fold prediction per sample.
    pub predictions: Vec<f64>,
    pub fold_assignment: Vec<usize>,
}

/// k-fold cross-validated SVR predictions. Inputs are standardized on each
/// training fold only.
pub fn cross_validate<T: Copy + Into<f64>>(
    x: ArrayView2<'_, T>,
    y: &[f64],
    k: usize,
    params: &SvrParams,
) -> Result<CvOutput> {
    params.validate()?;
    check_matrix(x, y)?;
    let assignment = fold_assignment(y.len(), k, params.seed)?;
    let mut predictions = vec![0.0; y.len()];
    for fold in 0..k {
        let prepared = PreparedFold::new(x, &assignment, fold);
        prepared.fit_predict(y, params, mix(params.seed, &[fold as u64]), &mut predictions);
    }
    Ok(CvOutput {
        predictions,
        fold_assignment: assignment,
    })
}

/// Outcome of one (feature, layer) probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature: String,
    /// 1-based layer index.
    pub layer: usize,
    /// `None` when either predictions or gold values are constant.
    pub rho: Option<f64>,
    pub mse: f64,
    pub predictions: Vec<f64>,
    pub abs_errors: Vec<f64>,
}

impl ProbeResult {
    fn score(feature: &str, layer: usize, predictions: Vec<f64>, gold: &[f64]) -> Result<Self> {
        let rho = spearman(&predictions, gold)?;
        let abs_errors: Vec<f64> = predictions.iter().zip(gold).map(|(p, g)| (p - g).abs()).collect();
        let mse = abs_errors.iter().map(|e| e * e).sum::<f64>() / gold.len() as f64;
        Ok(ProbeResult {
            feature: feature.to_string(),
            layer,
            rho,
            mse,
            predictions,
            abs_errors,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub params: SvrParams,
    pub folds: usize,
    /// 1-based layers to probe; `None` means all.
    pub layers: Option<Vec<usize>>,
    pub parallel: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            params: SvrParams::default(),
            folds: DEFAULT_FOLDS,
            layers: None,
            parallel: true,
        }
    }
}

/// Every (feature, layer) probe for one model, stored feature-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatrix {
    pub model_tag: String,
    pub feature_names: Vec<String>,
    pub layers: Vec<usize>,
    pub sent_ids: Vec<String>,
    /// Shared by every cell, so per-sentence errors are paired across cells.
    pub fold_assignment: Vec<usize>,
    pub cells: Vec<ProbeResult>,
}

impl ProbeMatrix {
    /// `feature` and `layer_pos` index `feature_names` and `layers`.
    pub fn cell(&self, feature: usize, layer_pos: usize) -> &ProbeResult {
        &self.cells[feature * self.layers.len() + layer_pos]
    }

    pub fn layer_position(&self, layer: usize) -> Option<usize> {
        self.layers.iter().position(|&l| l == layer)
    }

    pub fn rho_rows(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .chunks(self.layers.len())
            .map(|row| row.iter().map(|c| c.rho).collect())
            .collect()
    }

    /// Mean defined rho per layer.
    pub fn layer_means(&self) -> Vec<Option<f64>> {
        (0..self.layers.len())
            .map(|l| mean_defined((0..self.feature_names.len()).map(|f| self.cell(f, l).rho)))
            .collect()
    }
}

/// Probes every feature of `dataset` against every selected layer of model
/// `model`. The fold assignment depends only on the seed and the dataset
/// size; each cell's solver seed depends only on (seed, feature index,
/// layer, fold), so parallel and sequential runs agree bit for bit.
pub fn probe_all(dataset: &AlignedDataset, model: usize, opts: &ProbeOptions) -> Result<ProbeMatrix> {
    opts.params.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot probe an empty dataset"));
    }
    let m = dataset
        .models
        .get(model)
        .ok_or_else(|| Error::usage(format!("model index {model} out of range")))?;
    let layer_count = m.layers.len();
    let layers = match &opts.layers {
        Some(ls) => {
            if let Some(bad) = ls.iter().find(|&&l| l == 0 || l > layer_count) {
                return Err(Error::usage(format!("layer {bad} outside 1..={layer_count}")));
            }
            ls.clone()
        }
        None => (1..=layer_count).collect(),
    };
    let n = dataset.len();
    let assignment = fold_assignment(n, opts.folds, opts.params.seed)?;
    let n_feat = dataset.feature_names.len();
    let gold: Vec<Vec<f64>> = dataset.targets.columns().into_iter().map(|c| c.to_vec()).collect();

    let mut cells = Vec::with_capacity(n_feat * layers.len());
    let mut per_layer: Vec<Vec<ProbeResult>> = Vec::with_capacity(layers.len());
    for &layer in &layers {
        let x = m.layers[layer - 1].view();
        if x.nrows() != n || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "layer {layer} has bad shape or non-finite values"
            )));
        }
        let mut preds = vec![vec![0.0; n]; n_feat];
        for fold in 0..opts.folds {
            let prepared = PreparedFold::new(x, &assignment, fold);
            let run = |(f, out): (usize, &mut Vec<f64>)| {
                let seed = mix(opts.params.seed, &[f as u64, layer as u64, fold as u64]);
                prepared.fit_predict(&gold[f], &opts.params, seed, out);
            };
            if opts.parallel {
                preds.par_iter_mut().enumerate().for_each(run);
            } else {
                preds.iter_mut().enumerate().for_each(run);
            }
        }
        let results = preds
            .into_iter()
            .enumerate()
            .map(|(f, p)| ProbeResult::score(&dataset.feature_names[f], layer, p, &gold[f]))
            .collect::<Result<Vec<_>>>()?;
        per_layer.push(results);
    }
    let mut iters: Vec<_> = per_layer.into_iter().map(Vec::into_iter).collect();
    for _ in 0..n_feat {
        for it in iters.iter_mut() {
            cells.push(it.next().expect("one result per feature"));
        }
    }
    Ok(ProbeMatrix {
        model_tag: m.model_tag.clone(),
        feature_names: dataset.feature_names.clone(),
        layers,
        sent_ids: dataset.sent_ids.clone(),
        fold_assignment: assignment,
        cells,
    })
}

/// `|spearman(length, feature)|` per target column; `None` for constant
/// features.
pub fn length_baseline(lengths: &[f64], targets: ArrayView2<'_, f64>) -> Result<Vec<Option<f64>>> {
    if lengths.len() != targets.nrows() {
        return Err(Error::usage("length and target row counts differ"));
    }
    targets
        .columns()
        .into_iter()
        .map(|col| Ok(spearman(lengths, &col.to_vec())?.map(f64::abs)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthControl {
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
}

/// Mean cross-validated rho of SVRs that see only the sentence length,
/// computed separately within the correct and incorrect groups.
pub fn length_only_probe(
    lengths: &[f64],
    targets: ArrayView2<'_, f64>,
    correct: &[bool],
    k: usize,
    params: &SvrParams,
) -> Result<LengthControl> {
    if lengths.len() != targets.nrows() || correct.len() != lengths.len() {
        return Err(Error::usage("lengths, targets and group mask differ in length"));
    }
    let group = |want: bool, name: &str| -> Result<Option<f64>> {
        let rows: Vec<usize> = (0..lengths.len()).filter(|&i| correct[i] == want).collect();
        if rows.len() < k {
            return Err(Error::usage(format!(
                "{name} group has {} sentences, fewer than {k} folds",
                rows.len()
            )));
        }
        let x = Array2::from_shape_fn((rows.len(), 1), |(i, _)| lengths[rows[i]]);
        let mut rhos = Vec::with_capacity(targets.ncols());
        for col in targets.columns() {
            let y: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
            let cv = cross_validate(x.view(), &y, k, params)?;
            rhos.push(spearman(&cv.predictions, &y)?);
        }
        Ok(mean_defined(rhos))
    };
    Ok(LengthControl {
        correct: group(true, "correct")?,
        incorrect: group(false, "incorrect")?,
    })
}
