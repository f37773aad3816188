//! TSV, JSON and SVG writers for the analysis reports. Every writer is a
//! pure function of its report, so identical runs give identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    paper_layer, render_heatmap, ClusterReport, ColorScale, DeltaReport, ErrorSidecar, ProfilingRun, SplitReport,
};
use crate::error::{Error, Result};

/// Paths written by one report writer, in write order.
pub type ReportFiles = Vec<PathBuf>;

fn fmt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Model tags can carry arbitrary metadata; keep file names portable.
fn file_stem(tag: &str) -> String {
    let s: String = tag
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "model".into()
    } else {
        s
    }
}

struct Out<'a> {
    dir: &'a Path,
    files: ReportFiles,
}

impl<'a> Out<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        Ok(Out { dir, files: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io_at(&p, e))?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }
}

fn layer_label(layer: usize, count: usize) -> String {
    format!("{layer}/{}", paper_layer(layer, count))
}

/// Writes `<tag>.rho.tsv`, `<tag>.groups.tsv`, `<tag>.baseline.tsv`,
/// `<tag>.report.json`, `<tag>.errors.json` and `<tag>.heatmap.svg`.
pub fn write_profiling_run(run: &ProfilingRun, dir: &Path) -> Result<ReportFiles> {
    let r = &run.report;
    let stem = file_stem(&r.model_tag);
    let mut out = Out::new(dir)?;

    let mut rho = String::from("feature\tlayer\trho\tmse\tpaper_layer\n");
    for row in &r.features {
        for (l, &layer) in r.layers.iter().enumerate() {
            let _ = writeln!(
                rho,
                "{}\t{layer}\t{}\t{:.6}\t{}",
                row.name,
                fmt6(row.rho[l]),
                row.mse[l],
                paper_layer(layer, r.layer_count)
            );
        }
    }
    out.text(&format!("{stem}.rho.tsv"), &rho)?;

    let mut groups = String::from("group\tn_features");
    for &layer in &r.layers {
        let _ = write!(groups, "\t{}", layer_label(layer, r.layer_count));
    }
    groups.push_str("\tall_layers\tbaseline\n");
    for g in &r.groups {
        let _ = write!(groups, "{}\t{}", g.group, g.n_features);
        for m in &g.layer_means {
            let _ = write!(groups, "\t{}", fmt6(*m));
        }
        let _ = writeln!(groups, "\t{}\t{}", fmt6(g.mean), fmt6(g.baseline));
    }
    out.text(&format!("{stem}.groups.tsv"), &groups)?;

    let ranks = crate::stats::length_rank(&r.features.iter().map(|f| f.baseline).collect::<Vec<_>>());
    let mut base = String::from("feature\tbaseline\tlength_rank\n");
    for (row, rank) in r.features.iter().zip(ranks) {
        let _ = writeln!(base, "{}\t{}\t{rank}", row.name, fmt6(row.baseline));
    }
    out.text(&format!("{stem}.baseline.tsv"), &base)?;

    out.json(&format!("{stem}.report.json"), r)?;
    out.json(&format!("{stem}.errors.json"), &ErrorSidecar::from_probes(&run.probes))?;

    let matrix: Vec<Vec<Option<f64>>> = r.features.iter().map(|f| f.rho.clone()).collect();
    let rows: Vec<String> = r.features.iter().map(|f| f.name.clone()).collect();
    let cols: Vec<String> = r.layers.iter().map(|&l| layer_label(l, r.layer_count)).collect();
    let svg = render_heatmap(&matrix, &rows, &cols, None, ColorScale::Sequential)?;
    out.text(&format!("{stem}.heatmap.svg"), &svg)?;
    Ok(out.files)
}

/// Delta cell as an integer, with `*` when significant.
fn delta_cell(delta: Option<f64>, flagged: bool) -> String {
    let mut s = delta.map(|d| format!("{}", d.round() as i64)).unwrap_or_default();
    if flagged {
        s.push('*');
    }
    s
}

/// Writes `delta.tsv` (integer deltas x100, `*` marks significance),
/// `delta_curves.tsv`, `delta.json` and `delta.heatmap.svg`.
pub fn write_delta_report(r: &DeltaReport, dir: &Path) -> Result<ReportFiles> {
    let mut out = Out::new(dir)?;
    let mut tsv = String::from("feature");
    for m in &r.models {
        let _ = write!(tsv, "\t{}", m.model_tag);
    }
    tsv.push('\n');
    for (f, name) in r.features.iter().enumerate() {
        tsv.push_str(name);
        for m in &r.models {
            let _ = write!(tsv, "\t{}", delta_cell(m.delta[f], m.significant[f]));
        }
        tsv.push('\n');
    }
    out.text("delta.tsv", &tsv)?;

    let mut curves = format!("layer\tpaper_layer\t{}", r.pre_model);
    for m in &r.models {
        let _ = write!(curves, "\t{}", m.model_tag);
    }
    curves.push('\n');
    for (l, &layer) in r.layers.iter().enumerate() {
        let _ = write!(
            curves,
            "{layer}\t{}\t{}",
            paper_layer(layer, r.layer_count),
            fmt6(r.pre_layer_means[l])
        );
        for m in &r.models {
            let _ = write!(curves, "\t{}", fmt6(m.layer_means.get(l).copied().flatten()));
        }
        curves.push('\n');
    }
    out.text("delta_curves.tsv", &curves)?;
    out.json("delta.json", r)?;

    let (matrix, flags) = r.matrix();
    let cols: Vec<String> = r.models.iter().map(|m| m.model_tag.clone()).collect();
    let svg = render_heatmap(&matrix, &r.features, &cols, Some(&flags), ColorScale::Diverging)?;
    out.text("delta.heatmap.svg", &svg)?;
    Ok(out.files)
}

/// Writes `split.tsv` (per feature), `split_summary.tsv` (per model and
/// layer), `split_control.tsv` (per group) and `split.json`.
pub fn write_split_report(r: &SplitReport, dir: &Path) -> Result<ReportFiles> {
    let mut out = Out::new(dir)?;
    let mut tsv = String::from("model\tlayer\tpaper_layer\tfeature\tmse_correct\tmse_incorrect\tz\tp\tsignificant\n");
    let mut summary = String::from("model\tlayer\tpaper_layer\tn_significant\tn_correct_lower\tpct_pos_lower\n");
    for e in &r.entries {
        for f in &e.features {
            let _ = writeln!(
                tsv,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\t{}",
                e.model_tag, e.layer, e.paper_layer, f.feature, f.mse_correct, f.mse_incorrect, f.z, f.p, f.significant
            );
        }
        let _ = writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.model_tag,
            e.layer,
            e.paper_layer,
            e.n_significant,
            e.n_correct_lower,
            e.pct_pos_lower.map(|p| format!("{p:.2}")).unwrap_or_default()
        );
    }
    out.text("split.tsv", &tsv)?;
    out.text("split_summary.tsv", &summary)?;
    let control = format!(
        "group\tn\tmean_length\tlength_only_rho\ncorrect\t{}\t{:.6}\t{}\nincorrect\t{}\t{:.6}\t{}\n",
        r.n_correct,
        r.mean_length_correct,
        fmt6(r.length_control.correct),
        r.n_incorrect,
        r.mean_length_incorrect,
        fmt6(r.length_control.incorrect)
    );
    out.text("split_control.tsv", &control)?;
    out.json("split.json", r)?;
    Ok(out.files)
}

/// Writes `clusters.tsv` (`feature`, `cluster_id`, `length_rank`),
/// `dendrogram.json` and `dendrogram.svg`.
pub fn write_cluster_report(r: &ClusterReport, dir: &Path) -> Result<ReportFiles> {
    let mut out = Out::new(dir)?;
    let mut tsv = String::from("feature\tcluster_id\tlength_rank\n");
    for ((name, c), rank) in r.features.iter().zip(&r.clusters).zip(&r.length_rank) {
        let _ = writeln!(tsv, "{name}\t{c}\t{rank}");
    }
    out.text("clusters.tsv", &tsv)?;
    out.json("dendrogram.json", r)?;
    let labels: Vec<String> = r
        .features
        .iter()
        .zip(&r.length_rank)
        .map(|(n, rank)| format!("{n} [{rank}]"))
        .collect();
    out.text("dendrogram.svg", &r.dendrogram.to_svg(&labels))?;
    Ok(out.files)
}
