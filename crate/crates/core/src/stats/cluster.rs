//! Agglomerative clustering with Ward linkage on Euclidean distances.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step. Leaves are `0..m`; the cluster created by merge
/// `i` gets id `m + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub id: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_points: usize,
    pub merges: Vec<Merge>,
}

/// Ward clustering of the rows of `points`.
///
/// Cluster distances are maintained with the Lance-Williams recurrence for
/// Ward's method, so the merge distance between two clusters `a` and `b` is
/// `sqrt(2 |a| |b| / (|a| + |b|)) * |centroid(a) - centroid(b)|`.
/// Equal distances are resolved by the smallest `(left, right)` id pair.
pub fn ward_cluster(points: &[Vec<f64>]) -> Result<Dendrogram> {
    let m = points.len();
    if m < 2 {
        return Err(Error::usage("clustering needs at least two points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::usage("all points must have the same dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("clustering input contains non-finite values".into()));
    }

    // slot-indexed state; a merged cluster reuses the lower slot
    let mut dist = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = euclidean(&points[i], &points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut ids: Vec<usize> = (0..m).collect();
    let mut sizes = vec![1usize; m];
    let mut active = vec![true; m];
    let mut merges = Vec::with_capacity(m - 1);

    for step in 0..(m - 1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in 0..m {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..m {
                if !active[j] {
                    continue;
                }
                let (lo, hi) = order_pair(ids[i], ids[j]);
                let cand = (dist[i][j], lo, hi, i, j);
                let better = match best {
                    None => true,
                    Some((d, blo, bhi, _, _)) => cand.0 < d || (cand.0 == d && (lo, hi) < (blo, bhi)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (d, left, right, si, sj) = best.expect("at least two active clusters");
        let (ni, nj) = (sizes[si] as f64, sizes[sj] as f64);
        for k in 0..m {
            if !active[k] || k == si || k == sj {
                continue;
            }
            let nk = sizes[k] as f64;
            let sq = ((ni + nk) * dist[si][k].powi(2) + (nj + nk) * dist[sj][k].powi(2) - nk * d * d) / (ni + nj + nk);
            let nd = sq.max(0.0).sqrt();
            dist[si][k] = nd;
            dist[k][si] = nd;
        }
        active[sj] = false;
        sizes[si] += sizes[sj];
        ids[si] = m + step;
        merges.push(Merge {
            left,
            right,
            id: m + step,
            distance: d,
            size: sizes[si],
        });
    }
    Ok(Dendrogram { n_points: m, merges })
}

fn order_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Flat clustering into `k` clusters by undoing the last `k - 1` merges.
/// Cluster labels are `0..k`, numbered in order of each cluster's lowest
/// member.
pub fn cut_dendrogram(d: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let m = d.n_points;
    if k == 0 || k > m {
        return Err(Error::usage(format!("cluster count {k} outside 1..={m}")));
    }
    let mut parent: Vec<usize> = (0..(2 * m - 1)).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for merge in &d.merges[..(m - k)] {
        let l = find(&mut parent, merge.left);
        let r = find(&mut parent, merge.right);
        parent[l] = merge.id;
        parent[r] = merge.id;
    }
    let mut labels = vec![usize::MAX; m];
    let mut root_label: Vec<Option<usize>> = vec![None; 2 * m - 1];
    let mut next = 0;
    for (point, label) in labels.iter_mut().enumerate() {
        let root = find(&mut parent, point);
        *label = *root_label[root].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
    }
    Ok(labels)
}

impl Dendrogram {
    /// Leaf order for drawing: left subtree before right subtree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let m = self.n_points;
        let mut out = Vec::with_capacity(m);
        let mut stack = vec![m + self.merges.len() - 1];
        while let Some(node) = stack.pop() {
            if node < m {
                out.push(node);
            } else {
                let merge = &self.merges[node - m];
                stack.push(merge.right);
                stack.push(merge.left);
            }
        }
        out
    }

    /// Elbow-style SVG rendering with one labelled leaf per point.
    pub fn to_svg(&self, labels: &[String]) -> String {
        let m = self.n_points;
        let order = self.leaf_order();
        let row_h = 14.0;
        let label_w = 200.0;
        let plot_w = 400.0;
        let height = row_h * m as f64 + 20.0;
        let max_d = self
            .merges
            .iter()
            .map(|mg| mg.distance)
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let x_of = |d: f64| label_w + 10.0 + plot_w * d / max_d;

        let mut pos_y = vec![0.0f64; 2 * m - 1];
        let mut pos_x = vec![0.0f64; 2 * m - 1];
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" font-family=\"monospace\" font-size=\"11\">",
            label_w + plot_w + 30.0,
            height
        );
        for (row, &leaf) in order.iter().enumerate() {
            let y = 10.0 + row_h * (row as f64 + 0.5);
            pos_y[leaf] = y;
            pos_x[leaf] = x_of(0.0);
            let label = labels.get(leaf).map(String::as_str).unwrap_or("");
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
                label_w,
                y,
                escape_xml(label)
            );
        }
        for mg in &self.merges {
            let x = x_of(mg.distance);
            let (yl, yr) = (pos_y[mg.left], pos_y[mg.right]);
            let _ = writeln!(
                svg,
                "<path d=\"M{:.1},{:.1}H{:.1}V{:.1}H{:.1}\" fill=\"none\" stroke=\"#333\"/>",
                pos_x[mg.left], yl, x, yr, pos_x[mg.right]
            );
            pos_x[mg.id] = x;
            pos_y[mg.id] = (yl + yr) / 2.0;
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub(crate) fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
