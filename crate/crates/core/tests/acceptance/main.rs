//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Built without the libtest harness so the
//! lines always reach the output.


use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lingprobe::conllu::{parse_conllu, Treebank};
use lingprobe::embstore::{read_lemb, write_lemb, EmbeddingSet, LabelFile};
use lingprobe::pipeline::{
    run_cluster, run_compare, run_profiling, run_split_analysis, write_cluster_report, write_delta_report,
    write_profiling_run, write_split_report, RunConfig,
};
use lingprobe::profiler::{profile_sentence, profile_treebank, FeatureRegistry};
use lingprobe::stats::{spearman, ward_cluster, wilcoxon_rank_sum};
use lingprobe::synth::{embedding_set, random_treebank, SignalPlanter, TreeOptions};
use lingprobe::Error;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- shared data

const N_SENTENCES: usize = 500;
const DIM: usize = 64;
const LAYERS: usize = 12;
const CORPUS_SEED: u64 = 2024;
const REGISTRY_SIZE: usize = 20;

/// Highest Spearman correlation any prediction can reach against `gold`:
/// tied gold values share an average rank while predictions do not, so
/// `rho <= sqrt(1 - sum(t^3 - t) / (n^3 - n))` over the tie group sizes `t`.
fn tie_ceiling(gold: &[f64]) -> f64 {
    let mut groups: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for v in gold {
        *groups.entry(v.to_bits()).or_default() += 1;
    }
    let n = gold.len() as f64;
    let ties: f64 = groups.values().map(|&t| (t as f64).powi(3) - t as f64).sum();
    (1.0 - ties / (n * n * n - n)).sqrt()
}

struct Features {
    registry: FeatureRegistry,
    names: Vec<String>,
    targets: Array2<f64>,
}

impl Features {
    fn new(full: &FeatureRegistry, all: &Array2<f64>, picked: &[usize]) -> Self {
        let names: Vec<String> = picked.iter().map(|&j| full.features()[j].name.clone()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Features {
            registry: full.subset(&refs).unwrap(),
            targets: all.select(ndarray::Axis(1), picked),
            names,
        }
    }
}

struct Corpus {
    tb: Treebank,
    ids: Vec<String>,
    /// The twenty features with the highest tie ceiling.
    recovery: Features,
    /// Greedy by tie ceiling, skipping any feature whose |rho| with an
    /// already chosen one exceeds 0.9, so no feature is a proxy for another.
    distinct: Features,
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let tb = random_treebank(N_SENTENCES, CORPUS_SEED, TreeOptions::default());
        let full = FeatureRegistry::default_english();
        let all = profile_treebank(&tb, &full).unwrap().targets();
        let column = |j: usize| all.column(j).to_vec();
        let mut order: Vec<(f64, usize)> = (0..all.ncols()).map(|j| (tie_ceiling(&column(j)), j)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let top: Vec<usize> = order.iter().take(REGISTRY_SIZE).map(|&(_, j)| j).collect();
        let mut distinct: Vec<usize> = Vec::new();
        for &(_, j) in &order {
            let redundant = distinct
                .iter()
                .any(|&k| spearman(&column(j), &column(k)).unwrap().is_some_and(|r| r.abs() > 0.9));
            if !redundant && distinct.len() < REGISTRY_SIZE {
                distinct.push(j);
            }
        }
        Corpus {
            ids: tb.sentences.iter().map(|s| s.sent_id.clone()).collect(),
            recovery: Features::new(&full, &all, &top),
            distinct: Features::new(&full, &all, &distinct),
            tb,
        }
    })
}

/// Embedding set whose layer `l` is `scale_l * Z A + noise_l * N(0, 1)`.
/// Layer `l` always draws its noise from seed `1000 + l`.
fn planted(tag: &str, targets: &Array2<f64>, spec: &[(f64, f64)]) -> EmbeddingSet {
    let planter = SignalPlanter::new(targets.ncols(), DIM, CORPUS_SEED);
    let layers: Vec<_> = spec
        .iter()
        .enumerate()
        .map(|(l, &(scale, noise))| planter.layer(targets.view(), scale, noise, 1000 + l as u64).unwrap())
        .collect();
    embedding_set(tag, &corpus().ids, &layers).unwrap()
}

fn cfg() -> RunConfig {
    RunConfig::default()
}

// ------------------------------------------------------------------- criteria

fn golden_features() -> Outcome {
    let start = Instant::now();
    let tb = parse_conllu(golden::conllu_text().as_bytes(), "golden").map_err(err)?;
    let registry = FeatureRegistry::default_english();
    let expected = golden::expected();
    ensure(tb.len() == expected.len(), || {
        format!("parsed {} sentences, expected {}", tb.len(), expected.len())
    })?;
    let mut checked = 0;
    for (sentence, (id, nonzero)) in tb.sentences.iter().zip(&expected) {
        ensure(sentence.sent_id == *id, || {
            format!("sentence order: {} vs {id}", sentence.sent_id)
        })?;
        let profile = profile_sentence(sentence, &registry).map_err(err)?;
        let names: BTreeSet<&str> = nonzero.iter().map(|(n, _)| *n).collect();
        for (name, want) in nonzero {
            let got = profile
                .get(name)
                .ok_or_else(|| format!("{id}: {name} not in registry"))?;
            ensure((got - want).abs() <= 1e-9, || {
                format!("{id}: {name} = {got}, expected {want}")
            })?;
            checked += 1;
        }
        for (name, &got) in &profile.values {
            if !names.contains(name.as_str()) {
                ensure(got == 0.0, || format!("{id}: {name} = {got}, expected 0"))?;
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} sentences, {checked} values, {elapsed:.1?}", tb.len()))
}

fn is_percentage(name: &str) -> bool {
    name.contains("_dist") || name.ends_with("_perc") || matches!(name, "subj_pre" | "obj_post" | "subordinate_post")
}

fn distribution_invariants() -> Outcome {
    let tb = random_treebank(
        1000,
        7,
        TreeOptions {
            min_len: 1,
            max_len: 60,
        },
    );
    let registry = FeatureRegistry::default_english();
    let table = profile_treebank(&tb, &registry).map_err(err)?;
    for p in &table.profiles {
        let id = &p.sent_id;
        for prefix in ["upos_dist_", "dep_dist_"] {
            let sum: f64 = p
                .values
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(_, v)| v)
                .sum();
            ensure((sum - 100.0).abs() <= 1e-9, || format!("{id}: {prefix}* sums to {sum}"))?;
        }
        for (k, &v) in &p.values {
            if is_percentage(k) {
                ensure((0.0..=100.0).contains(&v), || format!("{id}: {k} = {v}"))?;
            }
        }
        let len = p.get("sent_length").unwrap();
        ensure(p.get("parse_depth").unwrap() < len, || {
            format!("{id}: parse_depth >= sent_length")
        })?;
        ensure(p.get("max_links_len").unwrap() < len, || {
            format!("{id}: max_links_len >= sent_length")
        })?;
        ensure(
            p.get("avg_links_len").unwrap() <= p.get("max_links_len").unwrap(),
            || format!("{id}: avg_links_len > max_links_len"),
        )?;
    }
    Ok(format!("{} trees", table.profiles.len()))
}

/// Average ranks by counting, without sorting.
fn oracle_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // a mix of heavily tied, lightly tied and continuous vectors
    match rng.random_range(0..3) {
        0 => (0..n).map(|_| rng.random_range(0..4) as f64).collect(),
        1 => (0..n).map(|_| rng.random_range(0..20) as f64 * 0.5).collect(),
        _ => (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
    }
}

fn spearman_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut undefined = 0;
    for case in 0..10_000 {
        let n = rng.random_range(2..=50);
        let a = random_vector(&mut rng, n);
        let b = random_vector(&mut rng, n);
        let got = spearman(&a, &b).map_err(err)?;
        let want = oracle_pearson(&oracle_ranks(&a), &oracle_ranks(&b));
        match (got, want) {
            (Some(g), Some(w)) => {
                worst = worst.max((g - w).abs());
                ensure((g - w).abs() <= 1e-12, || format!("case {case}: {g} vs oracle {w}"))?;
            }
            (None, None) => undefined += 1,
            _ => return Err(format!("case {case}: {got:?} vs oracle {want:?}")),
        }
        // strictly increasing transform leaves the statistic bit-identical
        let t: Vec<f64> = a.iter().map(|x| (x / 4.0).exp() + 3.0 * x).collect();
        let after = spearman(&t, &b).map_err(err)?;
        ensure(after.map(f64::to_bits) == got.map(f64::to_bits), || {
            format!("case {case}: monotone transform changed {got:?} to {after:?}")
        })?;
    }
    Ok(format!("10000 vectors, max |diff| {worst:.1e}, {undefined} undefined"))
}

/// Two-sided exact p by enumerating every split of the pooled sample.
fn oracle_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = oracle_ranks(&pooled);
    let n = pooled.len();
    let n1 = a.len();
    let centre = n1 as f64 * (n as f64 + 1.0) / 2.0;
    let observed = (ranks[..n1].iter().sum::<f64>() - centre).abs();
    let (mut extreme, mut total) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let sum: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        if (sum - centre).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    f64::from(extreme) / f64::from(total)
}

fn wilcoxon_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = Normal::standard();
    let mut worst = 0.0f64;
    let mut worst_normal = 0.0f64;
    let mut cases = 0;
    for n1 in 1..10 {
        for n2 in 1..=(10 - n1) {
            for rep in 0..40 {
                let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                    if rep % 2 == 0 {
                        (0..n).map(|_| rng.random_range(0..5) as f64).collect()
                    } else {
                        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
                    }
                };
                let a = draw(&mut rng, n1);
                let b = draw(&mut rng, n2);
                let ab = wilcoxon_rank_sum(&a, &b, 0.05).map_err(err)?;
                let ba = wilcoxon_rank_sum(&b, &a, 0.05).map_err(err)?;
                let exact = oracle_exact_p(&a, &b);
                worst = worst.max((ab.p - exact).abs());
                // reference only: how far the plain normal approximation would be
                worst_normal = worst_normal.max(((2.0 * normal.sf(ab.z.abs())).min(1.0) - exact).abs());
                ensure((ab.p - exact).abs() <= 0.08, || {
                    format!("{a:?} vs {b:?}: p {} vs exact {exact}", ab.p)
                })?;
                ensure(ab.z == -ba.z, || {
                    format!("{a:?} vs {b:?}: z {} but swapped z {}", ab.z, ba.z)
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!(
        "{cases} cases over 45 size pairs, max |p - exact| {worst:.1e} (normal approximation alone: {worst_normal:.3})"
    ))
}

#[derive(Clone)]
struct Cluster {
    id: usize,
    members: Vec<usize>,
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &m in members {
        for (ci, v) in c.iter_mut().zip(&points[m]) {
            *ci += v;
        }
    }
    c.iter().map(|v| v / members.len() as f64).collect()
}

/// Ward merges recomputed from cluster centroids at every step.
fn oracle_ward(points: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let m = points.len();
    let mut clusters: Vec<Cluster> = (0..m)
        .map(|i| Cluster {
            id: i,
            members: vec![i],
        })
        .collect();
    let mut out = Vec::new();
    for step in 0..m - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[j]);
                let (na, nb) = (a.members.len() as f64, b.members.len() as f64);
                let gap: f64 = centroid(points, &a.members)
                    .iter()
                    .zip(centroid(points, &b.members))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d = (2.0 * na * nb / (na + nb)).sqrt() * gap;
                let (lo, hi) = (a.id.min(b.id), a.id.max(b.id));
                if best.is_none_or(|(bd, blo, bhi, _, _)| d < bd || (d == bd && (lo, hi) < (blo, bhi))) {
                    best = Some((d, lo, hi, i, j));
                }
            }
        }
        let (d, lo, hi, i, j) = best.unwrap();
        let right = clusters.remove(j);
        let left = &mut clusters[i];
        left.members.extend(right.members);
        left.id = m + step;
        out.push((lo, hi, d));
    }
    out
}

fn ward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..200 {
        let m = rng.random_range(2..=7);
        let dim = rng.random_range(1..=4);
        let points: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let d = ward_cluster(&points).map_err(err)?;
        let want = oracle_ward(&points);
        for (k, (merge, &(lo, hi, dist))) in d.merges.iter().zip(&want).enumerate() {
            ensure(
                (merge.left, merge.right) == (lo, hi) && (merge.distance - dist).abs() <= 1e-9 * dist.max(1.0),
                || format!("case {case} step {k}: {merge:?} vs oracle ({lo}, {hi}, {dist})"),
            )?;
        }
        for w in d.merges.windows(2) {
            ensure(w[1].distance >= w[0].distance * (1.0 - 1e-12), || {
                format!("case {case}: linkage drops from {} to {}", w[0].distance, w[1].distance)
            })?;
        }
    }
    Ok("200 point sets, merges and heights match".into())
}

fn probe_recovery() -> Outcome {
    let c = corpus();
    let f = &c.recovery;
    let start = Instant::now();
    let emb = planted("clean", &f.targets, &[(1.0, 0.01); LAYERS]);
    let run = run_profiling(&c.tb, &emb, &f.registry, &cfg()).map_err(err)?;
    let clean_min = run
        .report
        .features
        .iter()
        .flat_map(|f| f.rho.iter().map(move |r| (r.unwrap_or(f64::NAN), &f.name)))
        .fold((f64::INFINITY, ""), |acc, (r, n)| {
            if r.is_nan() || r < acc.0 {
                (r, n.as_str())
            } else {
                acc
            }
        });

    let noise = planted("noise", &f.targets, &[(0.0, 1.0); LAYERS]);
    let null = run_profiling(&c.tb, &noise, &f.registry, &cfg()).map_err(err)?;
    let null_rho: Vec<f64> = null
        .report
        .features
        .iter()
        .flat_map(|f| f.rho.iter().map(|r| r.unwrap_or(f64::NAN)))
        .collect();
    let over = null_rho.iter().filter(|r| r.is_nan() || r.abs() > 0.1).count();
    let worst_null = null_rho.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mean_null = null_rho.iter().sum::<f64>() / null_rho.len() as f64;
    let elapsed = start.elapsed();

    let detail = format!(
        "min clean rho {:.4} ({}); noise: {over}/{} cells with |rho| > 0.1, max |rho| {worst_null:.3}, mean rho {mean_null:+.4}; {elapsed:.1?}",
        clean_min.0,
        clean_min.1,
        null_rho.len()
    );
    ensure(clean_min.0 >= 0.99, || detail.clone())?;
    ensure(over == 0, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(120), || detail.clone())?;
    Ok(detail)
}

fn layerwise_shape() -> Outcome {
    let c = corpus();
    let f = &c.recovery;
    let spec: Vec<(f64, f64)> = (0..LAYERS)
        .map(|l| if l < 6 { (1.0, 0.01) } else { (0.1, 1.0) })
        .collect();
    let emb = planted("declining", &f.targets, &spec);
    let run = run_profiling(&c.tb, &emb, &f.registry, &cfg()).map_err(err)?;
    let curve: Vec<f64> = run
        .report
        .group("All")
        .unwrap()
        .layer_means
        .iter()
        .map(|m| m.unwrap())
        .collect();
    let early = curve[..6].iter().sum::<f64>() / 6.0;
    let late = curve[6..].iter().sum::<f64>() / 6.0;
    let detail = format!(
        "layers 1-6 mean {early:.3}, layers 7-12 mean {late:.3}, gap {:.3}",
        early - late
    );
    ensure(early - late >= 0.3, || detail.clone())?;
    Ok(detail)
}

/// Same targets with the listed columns shuffled across sentences.
fn degrade(targets: &Array2<f64>, columns: &[usize], seed: u64) -> Array2<f64> {
    let mut out = targets.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &c in columns {
        let mut col: Vec<f64> = out.column(c).to_vec();
        col.shuffle(&mut rng);
        out.column_mut(c).assign(&ndarray::Array1::from(col));
    }
    out
}

/// Features flagged when a pre-trained set at noise `sigma` is compared
/// with a copy whose `degraded` targets were shuffled before planting.
fn delta_flags(f: &Features, degraded: &[usize], sigma: f64) -> lingprobe::Result<BTreeSet<usize>> {
    let c = corpus();
    let run_cfg = RunConfig {
        layers: Some(vec![4]),
        ..cfg()
    };
    let spec = [(1.0, sigma); 4];
    let pre = run_profiling(&c.tb, &planted("pre", &f.targets, &spec), &f.registry, &run_cfg)?;
    let fine_targets = degrade(&f.targets, degraded, 99);
    let fine = run_profiling(&c.tb, &planted("fine", &fine_targets, &spec), &f.registry, &run_cfg)?;
    let d = run_compare(&pre, &[fine], None, 0.05)?;
    Ok(d.models[0]
        .significant
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| i)
        .collect())
}

fn delta_pipeline() -> Outcome {
    let c = corpus();
    let f = &c.distinct;
    let run_cfg = RunConfig {
        layers: Some(vec![4]),
        ..cfg()
    };
    let pre = run_profiling(
        &c.tb,
        &planted("pre", &f.targets, &[(1.0, 0.3); 4]),
        &f.registry,
        &run_cfg,
    )
    .map_err(err)?;
    let same = run_compare(&pre, std::slice::from_ref(&pre), None, 0.05).map_err(err)?;
    let m = &same.models[0];
    ensure(m.delta.iter().all(|d| *d == Some(0.0)), || {
        format!("pre vs pre deltas {:?}", m.delta)
    })?;
    ensure(same.flag_count() == 0, || {
        format!("pre vs pre flags {}", same.flag_count())
    })?;

    let degraded = [1usize, 5, 9, 13, 17];
    let truth: BTreeSet<usize> = degraded.into_iter().collect();
    let names = |s: &BTreeSet<usize>| s.iter().map(|&i| f.names[i].as_str()).collect::<Vec<_>>().join(",");
    let mut sweep = Vec::new();
    let mut at_design = None;
    for sigma in [0.01, 0.1, 0.3, 1.0] {
        let flagged = delta_flags(f, &degraded, sigma).map_err(err)?;
        let hits = flagged.intersection(&truth).count();
        let precision = if flagged.is_empty() {
            0.0
        } else {
            100.0 * hits as f64 / flagged.len() as f64
        };
        sweep.push(format!(
            "sigma {sigma}: {} flagged, recall {hits}/5, precision {precision:.1}%",
            flagged.len()
        ));
        if sigma == 0.3 {
            at_design = Some((flagged, precision));
        }
    }
    let (flagged, precision) = at_design.unwrap();
    let detail = format!(
        "pre vs pre flat; degraded [{}]; at sigma 0.3 flagged [{}]; sweep: {}",
        names(&truth),
        names(&flagged),
        sweep.join("; ")
    );
    ensure(flagged == truth && precision >= 95.0, || detail.clone())?;
    Ok(detail)
}

fn split_analysis() -> Outcome {
    let c = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let correct: Vec<bool> = (0..N_SENTENCES).map(|_| rng.random_bool(0.6)).collect();
    let f = &c.distinct;
    let clean = planted("clean", &f.targets, &[(1.0, 0.01); LAYERS]);
    let noisy = planted("noisy", &f.targets, &[(1.0, 1.0); LAYERS]);
    let mut emb = EmbeddingSet::new("classifier", LAYERS, DIM);
    let mut labels = LabelFile::default();
    for (i, id) in c.ids.iter().enumerate() {
        let src = if correct[i] { &clean } else { &noisy };
        emb.insert(id.clone(), src.values(id).unwrap().to_vec()).map_err(err)?;
        labels.insert(id.clone(), "A", if correct[i] { "A" } else { "B" });
    }
    let r = run_split_analysis(&c.tb, &[emb], &labels, &f.registry, &cfg()).map_err(err)?;
    let pcts: Vec<String> = r
        .entries
        .iter()
        .map(|e| {
            format!(
                "layer {}: {}",
                e.layer,
                e.pct_pos_lower.map_or("n/a".into(), |p| format!("{p:.1}%"))
            )
        })
        .collect();
    let detail = format!(
        "{} correct / {} incorrect; {}",
        r.n_correct,
        r.n_incorrect,
        pcts.join(", ")
    );
    ensure(
        r.entries.iter().all(|e| e.pct_pos_lower.is_some_and(|p| p >= 80.0)),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn read_dir_sorted(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn full_pipeline(dir: &std::path::Path, parallel: bool) -> lingprobe::Result<()> {
    let c = corpus();
    let f = &c.recovery;
    let run_cfg = RunConfig { parallel, ..cfg() };
    let spec: Vec<(f64, f64)> = (0..4).map(|l| (1.0 / (l + 1) as f64, 0.3)).collect();
    let pre = run_profiling(&c.tb, &planted("pre", &f.targets, &spec), &f.registry, &run_cfg)?;
    let fine_targets = degrade(&f.targets, &[0, 2], 5);
    let fine = run_profiling(&c.tb, &planted("fine", &fine_targets, &spec), &f.registry, &run_cfg)?;
    write_profiling_run(&pre, &dir.join("pre"))?;
    write_profiling_run(&fine, &dir.join("fine"))?;
    write_delta_report(&run_compare(&pre, &[fine], None, 0.05)?, &dir.join("delta"))?;
    write_cluster_report(&run_cluster(&pre.report, 4)?, &dir.join("cluster"))?;
    let mut labels = LabelFile::default();
    for (i, id) in c.ids.iter().enumerate() {
        labels.insert(id.clone(), "A", if i % 4 == 0 { "B" } else { "A" });
    }
    let emb = planted("pre", &f.targets, &spec);
    write_split_report(
        &run_split_analysis(&c.tb, &[emb], &labels, &f.registry, &run_cfg)?,
        &dir.join("split"),
    )?;
    Ok(())
}

fn determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    full_pipeline(runs[0].path(), true).map_err(err)?;
    full_pipeline(runs[1].path(), true).map_err(err)?;
    full_pipeline(runs[2].path(), false).map_err(err)?;
    let mut n_files = 0;
    let subdirs = ["pre", "fine", "delta", "cluster", "split"];
    for sub in subdirs {
        let a = read_dir_sorted(&runs[0].path().join(sub));
        for other in &runs[1..] {
            let b = read_dir_sorted(&other.path().join(sub));
            ensure(a.len() == b.len(), || format!("{sub}: file lists differ"))?;
            for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
                ensure(na == nb && ba == bb, || format!("{sub}/{na} differs between runs"))?;
            }
        }
        n_files += a.len();
    }
    let exts: BTreeSet<String> = subdirs
        .iter()
        .flat_map(|s| read_dir_sorted(&runs[0].path().join(s)))
        .filter_map(|(n, _)| n.rsplit('.').next().map(str::to_owned))
        .collect();
    for ext in ["tsv", "json", "svg"] {
        ensure(exts.contains(ext), || format!("no .{ext} artifact produced"))?;
    }

    // bit-level agreement of the probe outputs themselves
    let c = corpus();
    let f = &c.recovery;
    let emb = planted("bits", &f.targets, &[(1.0, 0.5); 3]);
    let par = run_profiling(
        &c.tb,
        &emb,
        &f.registry,
        &RunConfig {
            parallel: true,
            ..cfg()
        },
    )
    .map_err(err)?;
    let seq = run_profiling(
        &c.tb,
        &emb,
        &f.registry,
        &RunConfig {
            parallel: false,
            ..cfg()
        },
    )
    .map_err(err)?;
    let bits = |r: &lingprobe::pipeline::ProfilingRun| -> Vec<u64> {
        r.probes
            .cells
            .iter()
            .flat_map(|cell| {
                cell.predictions
                    .iter()
                    .chain(&cell.abs_errors)
                    .chain([&cell.mse])
                    .map(|v| v.to_bits())
                    .chain(cell.rho.map(f64::to_bits))
            })
            .collect()
    };
    ensure(bits(&par) == bits(&seq), || {
        "parallel and sequential probes differ".into()
    })?;
    Ok(format!(
        "{n_files} artifacts identical across 2 parallel runs and 1 sequential run; probe outputs bit-equal"
    ))
}

fn random_set(rng: &mut ChaCha8Rng) -> EmbeddingSet {
    const ALPHABET: [char; 8] = ['a', 'Z', '0', '-', 'é', 'ß', '語', ' '];
    let word = |rng: &mut ChaCha8Rng, max: usize| -> String {
        (0..rng.random_range(0..=max))
            .map(|_| *ALPHABET.choose(rng).unwrap())
            .collect()
    };
    let layers = rng.random_range(1..=4);
    let dim = rng.random_range(1..=8);
    let mut set = EmbeddingSet::new(word(rng, 12), layers, dim);
    for i in 0..rng.random_range(0..20) {
        let id = format!("{}#{i}", word(rng, 6));
        let values = (0..layers * dim)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => f32::MAX,
                2 => f32::MIN_POSITIVE,
                _ => rng.random_range(-1e6f32..1e6),
            })
            .collect();
        set.insert(id, values).unwrap();
    }
    set
}

fn lemb_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut truncations, mut magics, mut corruptions) = (0, 0, 0);
    for case in 0..300 {
        let set = random_set(&mut rng);
        let mut bytes = Vec::new();
        write_lemb(&set, &mut bytes).map_err(err)?;
        let back = read_lemb(bytes.as_slice()).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == set, || format!("case {case}: round trip changed the set"))?;

        let cuts: Vec<usize> = if bytes.len() <= 64 {
            (0..bytes.len()).collect()
        } else {
            (0..32).map(|_| rng.random_range(0..bytes.len())).collect()
        };
        for cut in cuts {
            let r = catch_unwind(|| read_lemb(&bytes[..cut]));
            ensure(matches!(r, Ok(Err(Error::Format(_)))), || {
                format!("case {case}: truncation at {cut} gave {r:?}")
            })?;
            truncations += 1;
        }

        let mut bad = bytes.clone();
        let at = rng.random_range(0..4);
        bad[at] ^= rng.random_range(1..=255u8);
        let r = catch_unwind(|| read_lemb(bad.as_slice()));
        ensure(matches!(r, Ok(Err(Error::Format(_)))), || {
            format!("case {case}: bad magic gave {r:?}")
        })?;
        magics += 1;

        // arbitrary byte damage may still parse, but must never panic
        let mut damaged = bytes.clone();
        for _ in 0..rng.random_range(1..4) {
            let at = rng.random_range(0..damaged.len());
            damaged[at] = rng.random();
        }
        ensure(catch_unwind(|| read_lemb(damaged.as_slice())).is_ok(), || {
            format!("case {case}: panic on damaged input")
        })?;
        corruptions += 1;
    }
    Ok(format!(
        "300 sets round-tripped; {truncations} truncations, {magics} bad magics, {corruptions} corruptions handled"
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("golden feature sentences", golden_features),
        ("distribution invariants", distribution_invariants),
        ("spearman oracle", spearman_oracle),
        ("wilcoxon oracle", wilcoxon_oracle),
        ("ward oracle", ward_oracle),
        ("probe recovery", probe_recovery),
        ("layerwise shape", layerwise_shape),
        ("delta pipeline", delta_pipeline),
        ("split analysis", split_analysis),
        ("determinism", determinism),
        ("lemb round trip", lemb_round_trip),
    ];
    // keep panics from failed criteria on a single line
    std::panic::set_hook(Box::new(|_| {}));
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
