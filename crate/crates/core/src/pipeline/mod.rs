//! The three analyses: layerwise profiling, pre/post fine-tuning deltas and
//! the correctness split, plus feature clustering and report output.

mod render;
mod report;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use render::{render_heatmap, ColorScale};
pub use report::{write_cluster_report, write_delta_report, write_profiling_run, write_split_report, ReportFiles};

use crate::conllu::{write_conllu, Treebank};
use crate::embstore::{align, AlignedDataset, DropCount, EmbeddingSet, LabelFile};
use crate::error::{Error, Result};
use crate::probe::{
    length_baseline, length_only_probe, probe_all, LengthControl, ProbeMatrix, ProbeOptions, SvrParams, DEFAULT_FOLDS,
};
use crate::profiler::{profile_treebank, FeatureRegistry};
use crate::stats::{
    cut_dendrogram, length_rank, mean_defined, ward_cluster, wilcoxon_rank_sum, Dendrogram, PValueMethod,
};

/// Settings shared by every analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// The single source of randomness; overrides `svr.seed`.
    pub seed: u64,
    pub svr: SvrParams,
    pub folds: usize,
    /// 1-based layers to probe; `None` means every layer (profiling and
    /// compare) or input/middle/output (split analysis).
    pub layers: Option<Vec<usize>>,
    pub alpha: f64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            svr: SvrParams::default(),
            folds: DEFAULT_FOLDS,
            layers: None,
            alpha: 0.05,
            parallel: true,
        }
    }
}

impl RunConfig {
    fn probe_options(&self, layers: Option<Vec<usize>>) -> ProbeOptions {
        ProbeOptions {
            params: SvrParams {
                seed: self.seed,
                ..self.svr
            },
            folds: self.folds,
            layers,
            parallel: self.parallel,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::usage(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.svr.validate()
    }
}

/// Everything needed to reproduce a report, stamped into its header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub seed: u64,
    pub svr: SvrParams,
    pub folds: usize,
    pub fold_scheme: String,
    pub standardization: String,
    pub alpha: f64,
    pub corpus_sha256: String,
    pub n_sentences: usize,
    pub drops: Vec<DropCount>,
    pub layer_convention: String,
}

impl RunMetadata {
    fn new(cfg: &RunConfig, tb: &Treebank, ds: &AlignedDataset) -> Self {
        RunMetadata {
            tool: concat!("lingprobe ", env!("CARGO_PKG_VERSION")).to_string(),
            seed: cfg.seed,
            svr: SvrParams {
                seed: cfg.seed,
                ..cfg.svr
            },
            folds: cfg.folds,
            fold_scheme: "seeded shuffle, contiguous split, one assignment shared by all probes".into(),
            standardization: "inputs z-scored per training fold; targets unscaled".into(),
            alpha: cfg.alpha,
            corpus_sha256: corpus_sha256(tb),
            n_sentences: ds.len(),
            drops: ds.drops.clone(),
            layer_convention: "layer is 1-based from the input; paper_layer = layer - layer_count - 1".into(),
        }
    }
}

/// SHA-256 of the treebank's canonical CoNLL-U serialization.
pub fn corpus_sha256(tb: &Treebank) -> String {
    let digest = Sha256::digest(write_conllu(tb).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The paper's negative layer index (`-layer_count..=-1`).
pub fn paper_layer(layer: usize, layer_count: usize) -> i64 {
    layer as i64 - layer_count as i64 - 1
}

fn profiled_dataset(
    tb: &Treebank,
    sets: &[EmbeddingSet],
    registry: &FeatureRegistry,
    labels: Option<&LabelFile>,
) -> Result<AlignedDataset> {
    let table = profile_treebank(tb, registry)?;
    align(sets, &table.profiles, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub name: String,
    pub group: String,
    /// One entry per probed layer.
    pub rho: Vec<Option<f64>>,
    pub mse: Vec<f64>,
    /// `|spearman(sentence length, feature)|`.
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n_features: usize,
    pub layer_means: Vec<Option<f64>>,
    /// Mean over every defined (feature, layer) rho in the group.
    pub mean: Option<f64>,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingReport {
    pub kind: String,
    pub metadata: RunMetadata,
    pub model_tag: String,
    pub layer_count: usize,
    pub layers: Vec<usize>,
    pub features: Vec<FeatureRow>,
    /// Feature groups in registry order, then `All`.
    pub groups: Vec<GroupSummary>,
}

impl ProfilingReport {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ProfilingReport = serde_json::from_str(text)?;
        if r.kind != "profiling" {
            return Err(Error::format(format!(
                "expected a profiling report, found {:?}",
                r.kind
            )));
        }
        Ok(r)
    }
}

/// A profiling report together with the probes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilingRun {
    pub report: ProfilingReport,
    pub probes: ProbeMatrix,
}

fn group_summary(name: &str, members: &[usize], probes: &ProbeMatrix, baseline: &[Option<f64>]) -> GroupSummary {
    let layer_means = (0..probes.layers.len())
        .map(|l| mean_defined(members.iter().map(|&f| probes.cell(f, l).rho)))
        .collect();
    let mean = mean_defined(
        members
            .iter()
            .flat_map(|&f| (0..probes.layers.len()).map(move |l| probes.cell(f, l).rho)),
    );
    GroupSummary {
        group: name.to_string(),
        n_features: members.len(),
        layer_means,
        mean,
        baseline: mean_defined(members.iter().map(|&f| baseline[f])),
    }
}

/// Probes every feature at every selected layer of one embedding set and
/// aggregates the rho matrix per feature group.
pub fn run_profiling(
    tb: &Treebank,
    embeddings: &EmbeddingSet,
    registry: &FeatureRegistry,
    cfg: &RunConfig,
) -> Result<ProfilingRun> {
    cfg.validate()?;
    let ds = profiled_dataset(tb, std::slice::from_ref(embeddings), registry, None)?;
    profile_dataset(tb, &ds, registry, cfg)
}

fn profile_dataset(
    tb: &Treebank,
    ds: &AlignedDataset,
    registry: &FeatureRegistry,
    cfg: &RunConfig,
) -> Result<ProfilingRun> {
    if ds.len() < cfg.folds {
        return Err(Error::usage(format!(
            "only {} aligned sentences, fewer than {} folds",
            ds.len(),
            cfg.folds
        )));
    }
    let probes = probe_all(ds, 0, &cfg.probe_options(cfg.layers.clone()))?;
    let baseline = length_baseline(&ds.lengths, ds.targets.view())?;
    let group_names: Vec<String> = ds
        .feature_names
        .iter()
        .map(|n| registry.group_of(n).map_or("Other", |g| g.as_str()).to_string())
        .collect();

    let features = ds
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| FeatureRow {
            name: name.clone(),
            group: group_names[f].clone(),
            rho: (0..probes.layers.len()).map(|l| probes.cell(f, l).rho).collect(),
            mse: (0..probes.layers.len()).map(|l| probes.cell(f, l).mse).collect(),
            baseline: baseline[f],
        })
        .collect();

    let mut order: Vec<&str> = Vec::new();
    for g in &group_names {
        if !order.contains(&g.as_str()) {
            order.push(g);
        }
    }
    let mut groups: Vec<GroupSummary> = order
        .iter()
        .map(|g| {
            let members: Vec<usize> = (0..group_names.len()).filter(|&f| group_names[f] == *g).collect();
            group_summary(g, &members, &probes, &baseline)
        })
        .collect();
    let all: Vec<usize> = (0..group_names.len()).collect();
    groups.push(group_summary("All", &all, &probes, &baseline));

    let report = ProfilingReport {
        kind: "profiling".into(),
        metadata: RunMetadata::new(cfg, tb, ds),
        model_tag: probes.model_tag.clone(),
        layer_count: ds.models[0].layers.len(),
        layers: probes.layers.clone(),
        features,
        groups,
    };
    Ok(ProfilingRun { report, probes })
}

/// Per-sentence absolute errors of every probe, keyed by sentence id.
/// Each value lists errors feature-major, one per probed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSidecar {
    pub model_tag: String,
    pub features: Vec<String>,
    pub layers: Vec<usize>,
    pub errors: BTreeMap<String, Vec<f64>>,
}

impl ErrorSidecar {
    pub fn from_probes(p: &ProbeMatrix) -> Self {
        let errors = p
            .sent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), p.cells.iter().map(|c| c.abs_errors[i]).collect()))
            .collect();
        ErrorSidecar {
            model_tag: p.model_tag.clone(),
            features: p.feature_names.clone(),
            layers: p.layers.clone(),
            errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDelta {
    pub model_tag: String,
    pub rho: Vec<Option<f64>>,
    /// `(rho_pre - rho_fine) * 100`; `None` where either rho is undefined.
    pub delta: Vec<Option<f64>>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub p_method: Vec<PValueMethod>,
    pub significant: Vec<bool>,
    pub layer_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub kind: String,
    pub metadata: RunMetadata,
    pub layer: usize,
    pub paper_layer: i64,
    pub layer_count: usize,
    pub features: Vec<String>,
    pub pre_model: String,
    pub pre_rho: Vec<Option<f64>>,
    /// Layers of the layerwise mean curves.
    pub layers: Vec<usize>,
    pub pre_layer_means: Vec<Option<f64>>,
    pub models: Vec<ModelDelta>,
}

impl DeltaReport {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: DeltaReport = serde_json::from_str(text)?;
        if r.kind != "delta" {
            return Err(Error::format(format!("expected a delta report, found {:?}", r.kind)));
        }
        Ok(r)
    }

    /// Feature x model deltas and significance flags.
    pub fn matrix(&self) -> (Vec<Vec<Option<f64>>>, Vec<Vec<bool>>) {
        let rows = (0..self.features.len())
            .map(|f| self.models.iter().map(|m| m.delta[f]).collect())
            .collect();
        let flags = (0..self.features.len())
            .map(|f| self.models.iter().map(|m| m.significant[f]).collect())
            .collect();
        (rows, flags)
    }

    pub fn flag_count(&self) -> usize {
        self.models
            .iter()
            .map(|m| m.significant.iter().filter(|s| **s).count())
            .sum()
    }
}

/// Compares fine-tuned runs against a pre-trained run at one layer (the
/// output layer by default). Significance comes from a rank-sum test on
/// the two lists of per-sentence absolute errors of each feature.
pub fn run_compare(
    pre: &ProfilingRun,
    fines: &[ProfilingRun],
    layer: Option<usize>,
    alpha: f64,
) -> Result<DeltaReport> {
    if fines.is_empty() {
        return Err(Error::usage("compare needs at least one fine-tuned run"));
    }
    let layer = layer.unwrap_or(pre.report.layer_count);
    let pre_pos = pre
        .probes
        .layer_position(layer)
        .ok_or_else(|| Error::usage(format!("layer {layer} was not probed in the pre-trained run")))?;
    let mut models = Vec::with_capacity(fines.len());
    for fine in fines {
        if fine.probes.feature_names != pre.probes.feature_names {
            return Err(Error::usage(format!(
                "run {} uses a different feature registry",
                fine.probes.model_tag
            )));
        }
        if fine.probes.sent_ids != pre.probes.sent_ids {
            return Err(Error::usage(format!(
                "run {} covers different sentences",
                fine.probes.model_tag
            )));
        }
        let pos = fine
            .probes
            .layer_position(layer)
            .ok_or_else(|| Error::usage(format!("layer {layer} was not probed in run {}", fine.probes.model_tag)))?;
        let n_feat = pre.probes.feature_names.len();
        let mut m = ModelDelta {
            model_tag: fine.probes.model_tag.clone(),
            rho: Vec::with_capacity(n_feat),
            delta: Vec::with_capacity(n_feat),
            z: Vec::with_capacity(n_feat),
            p: Vec::with_capacity(n_feat),
            p_method: Vec::with_capacity(n_feat),
            significant: Vec::with_capacity(n_feat),
            layer_means: fine.probes.layer_means(),
        };
        for f in 0..n_feat {
            let a = pre.probes.cell(f, pre_pos);
            let b = fine.probes.cell(f, pos);
            let test = wilcoxon_rank_sum(&a.abs_errors, &b.abs_errors, alpha)?;
            m.rho.push(b.rho);
            m.delta.push(a.rho.zip(b.rho).map(|(x, y)| (x - y) * 100.0));
            m.z.push(test.z);
            m.p.push(test.p);
            m.p_method.push(test.method);
            m.significant.push(test.significant);
        }
        models.push(m);
    }
    let mut metadata = pre.report.metadata.clone();
    metadata.alpha = alpha;
    Ok(DeltaReport {
        kind: "delta".into(),
        metadata,
        layer,
        paper_layer: paper_layer(layer, pre.report.layer_count),
        layer_count: pre.report.layer_count,
        features: pre.probes.feature_names.clone(),
        pre_model: pre.probes.model_tag.clone(),
        pre_rho: (0..pre.probes.feature_names.len())
            .map(|f| pre.probes.cell(f, pre_pos).rho)
            .collect(),
        layers: pre.probes.layers.clone(),
        pre_layer_means: pre.probes.layer_means(),
        models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFeature {
    pub feature: String,
    pub mse_correct: f64,
    pub mse_incorrect: f64,
    pub z: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub model_tag: String,
    pub layer: usize,
    pub paper_layer: i64,
    pub features: Vec<SplitFeature>,
    pub n_significant: usize,
    /// Significant features whose correct-group MSE is the lower one.
    pub n_correct_lower: usize,
    /// `100 * n_correct_lower / n_significant`; `None` without significant
    /// features.
    pub pct_pos_lower: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub kind: String,
    pub metadata: RunMetadata,
    pub group_probes: String,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_length_correct: f64,
    pub mean_length_incorrect: f64,
    pub length_control: LengthControl,
    pub entries: Vec<SplitEntry>,
}

/// Input, middle and output layer of an `n`-layer model.
pub fn split_layers(layer_count: usize) -> Vec<usize> {
    let mut v = vec![1, (layer_count / 2).max(1), layer_count];
    v.dedup();
    v
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Splits the labelled sentences into correctly and incorrectly classified
/// groups, retrains probes within each group and compares the groups'
/// per-sentence errors feature by feature.
pub fn run_split_analysis(
    tb: &Treebank,
    models: &[EmbeddingSet],
    labels: &LabelFile,
    registry: &FeatureRegistry,
    cfg: &RunConfig,
) -> Result<SplitReport> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::usage("split analysis needs at least one embedding set"));
    }
    let ds = profiled_dataset(tb, models, registry, Some(labels))?;
    let correct = ds.correct.clone().expect("labels were supplied");
    let rows_c: Vec<usize> = (0..ds.len()).filter(|&i| correct[i]).collect();
    let rows_i: Vec<usize> = (0..ds.len()).filter(|&i| !correct[i]).collect();
    for (name, rows) in [("correct", &rows_c), ("incorrect", &rows_i)] {
        if rows.len() < cfg.folds {
            return Err(Error::usage(format!(
                "{name} group has {} sentences, fewer than {} folds",
                rows.len(),
                cfg.folds
            )));
        }
    }
    let ds_c = ds.select_rows(&rows_c);
    let ds_i = ds.select_rows(&rows_i);

    let mut entries = Vec::new();
    for (m, model) in ds.models.iter().enumerate() {
        let layer_count = model.layers.len();
        let layers = cfg.layers.clone().unwrap_or_else(|| split_layers(layer_count));
        let opts = cfg.probe_options(Some(layers.clone()));
        let pc = probe_all(&ds_c, m, &opts)?;
        let pi = probe_all(&ds_i, m, &opts)?;
        for (pos, &layer) in layers.iter().enumerate() {
            let mut features = Vec::with_capacity(ds.feature_names.len());
            for (f, name) in ds.feature_names.iter().enumerate() {
                let (a, b) = (pc.cell(f, pos), pi.cell(f, pos));
                let test = wilcoxon_rank_sum(&a.abs_errors, &b.abs_errors, cfg.alpha)?;
                features.push(SplitFeature {
                    feature: name.clone(),
                    mse_correct: a.mse,
                    mse_incorrect: b.mse,
                    z: test.z,
                    p: test.p,
                    significant: test.significant,
                });
            }
            let n_significant = features.iter().filter(|f| f.significant).count();
            let n_correct_lower = features
                .iter()
                .filter(|f| f.significant && f.mse_correct < f.mse_incorrect)
                .count();
            entries.push(SplitEntry {
                model_tag: model.model_tag.clone(),
                layer,
                paper_layer: paper_layer(layer, layer_count),
                features,
                n_significant,
                n_correct_lower,
                pct_pos_lower: (n_significant > 0).then(|| 100.0 * n_correct_lower as f64 / n_significant as f64),
            });
        }
    }

    let length_control = length_only_probe(
        &ds.lengths,
        ds.targets.view(),
        &correct,
        cfg.folds,
        &SvrParams {
            seed: cfg.seed,
            ..cfg.svr
        },
    )?;
    Ok(SplitReport {
        kind: "split".into(),
        metadata: RunMetadata::new(cfg, tb, &ds),
        group_probes: "probes retrained within each group".into(),
        n_correct: rows_c.len(),
        n_incorrect: rows_i.len(),
        mean_length_correct: mean(&ds_c.lengths),
        mean_length_incorrect: mean(&ds_i.lengths),
        length_control,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub kind: String,
    /// Clustered features, in dendrogram leaf-id order.
    pub features: Vec<String>,
    /// Features left out because some layer's rho is undefined.
    pub excluded: Vec<String>,
    pub baseline: Vec<Option<f64>>,
    pub length_rank: Vec<usize>,
    pub dendrogram: Dendrogram,
    pub k: usize,
    pub clusters: Vec<usize>,
}

/// Ward clustering of the features' layerwise rho profiles, cut into `k`
/// flat clusters (capped at the number of clustered features).
pub fn run_cluster(report: &ProfilingReport, k: usize) -> Result<ClusterReport> {
    let mut features = Vec::new();
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    let mut baseline = Vec::new();
    for row in &report.features {
        match row.rho.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(p) => {
                features.push(row.name.clone());
                points.push(p);
                baseline.push(row.baseline);
            }
            None => excluded.push(row.name.clone()),
        }
    }
    if !excluded.is_empty() {
        warn!(
            "{} feature(s) with undefined rho left out of clustering: {}",
            excluded.len(),
            excluded.join(", ")
        );
    }
    if points.len() < 2 {
        return Err(Error::usage(
            "clustering needs at least two features with defined rho at every layer",
        ));
    }
    let dendrogram = ward_cluster(&points)?;
    let k = k.clamp(1, points.len());
    let clusters = cut_dendrogram(&dendrogram, k)?;
    Ok(ClusterReport {
        kind: "cluster".into(),
        length_rank: length_rank(&baseline),
        features,
        excluded,
        baseline,
        dendrogram,
        k,
        clusters,
    })
}

/// Renders a profiling report (rho, sequential scale) or a delta report
/// (deltas with significance glyphs, diverging scale) from its JSON.
pub fn render_report(json: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let kind: Kind = serde_json::from_str(json)?;
    match kind.kind.as_str() {
        "profiling" => {
            let r = ProfilingReport::from_json(json)?;
            let rows: Vec<Vec<Option<f64>>> = r.features.iter().map(|f| f.rho.clone()).collect();
            let cols: Vec<String> = r
                .layers
                .iter()
                .map(|&l| format!("{l}/{}", paper_layer(l, r.layer_count)))
                .collect();
            render_heatmap(&rows, &r.feature_names(), &cols, None, ColorScale::Sequential)
        }
        "delta" => {
            let r = DeltaReport::from_json(json)?;
            let (rows, flags) = r.matrix();
            let cols: Vec<String> = r.models.iter().map(|m| m.model_tag.clone()).collect();
            render_heatmap(&rows, &r.features, &cols, Some(&flags), ColorScale::Diverging)
        }
        other => Err(Error::format(format!("cannot render a {other:?} report"))),
    }
}
