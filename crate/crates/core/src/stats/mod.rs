//! Rank statistics and clustering primitives.

mod cluster;
mod rank;
mod wilcoxon;

pub(crate) use cluster::escape_xml;
pub use cluster::{cut_dendrogram, euclidean, ward_cluster, Dendrogram, Merge};
pub use rank::{average_ranks, length_rank, spearman};
pub use wilcoxon::{wilcoxon_rank_sum, PValueMethod, RankSumTest, EXACT_MAX_POOLED};

/// Mean of the defined entries, `None` when there are none.
pub fn mean_defined<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}
