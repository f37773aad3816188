//! Sentence-level linguistic profiling.
//!
//! A [`FeatureRegistry`] fixes the target schema: which features exist,
//! which group they belong to, which extractor computes them and in which
//! column order they appear. [`profile_sentence`] runs the extractors a
//! registry needs and reads the requested values out of their results,
//! falling back to each feature's default when the sentence does not
//! produce it (an unobserved tag, an empty histogram bin, ...).

pub mod extract;
mod registry;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conllu::{ParsedSentence, Treebank};
use crate::error::{Error, Result};

pub use registry::{FeatureGroup, FeatureParams, FeatureRegistry, FeatureSpec};

/// Identifies one of the group extractors in [`extract`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtractorId {
    RawText,
    Vocabulary,
    Pos,
    VerbInflection,
    VerbPredicate,
    TreeStructure,
    Order,
    SyntacticDep,
    Subordination,
}

impl ExtractorId {
    pub const ALL: [ExtractorId; 9] = [
        ExtractorId::RawText,
        ExtractorId::Vocabulary,
        ExtractorId::Pos,
        ExtractorId::VerbInflection,
        ExtractorId::VerbPredicate,
        ExtractorId::TreeStructure,
        ExtractorId::Order,
        ExtractorId::SyntacticDep,
        ExtractorId::Subordination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorId::RawText => "raw_text",
            ExtractorId::Vocabulary => "vocabulary",
            ExtractorId::Pos => "pos",
            ExtractorId::VerbInflection => "verb_inflection",
            ExtractorId::VerbPredicate => "verb_predicate",
            ExtractorId::TreeStructure => "tree_structure",
            ExtractorId::Order => "order",
            ExtractorId::SyntacticDep => "syntactic_dep",
            ExtractorId::Subordination => "subordination",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == id)
            .ok_or_else(|| Error::Config(format!("unknown extractor {id:?}")))
    }

    pub fn run(self, s: &ParsedSentence) -> extract::Values {
        match self {
            ExtractorId::RawText => extract::raw_text(s),
            ExtractorId::Vocabulary => extract::vocabulary(s),
            ExtractorId::Pos => extract::pos(s),
            ExtractorId::VerbInflection => extract::verb_inflection(s),
            ExtractorId::VerbPredicate => extract::verb_predicate(s),
            ExtractorId::TreeStructure => extract::tree_structure(s),
            ExtractorId::Order => extract::order(s),
            ExtractorId::SyntacticDep => extract::syntactic_dep(s),
            ExtractorId::Subordination => extract::subordination(s),
        }
    }
}

/// Feature values of one sentence, in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub sent_id: String,
    /// Token count of the sentence, kept for length baselines.
    pub length: usize,
    pub values: IndexMap<String, f64>,
}

impl FeatureProfile {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.values.get(feature).copied()
    }
}

/// Profiles one sentence against `registry`.
pub fn profile_sentence(s: &ParsedSentence, registry: &FeatureRegistry) -> Result<FeatureProfile> {
    let mut cache: BTreeMap<ExtractorId, extract::Values> = BTreeMap::new();
    let mut values = IndexMap::with_capacity(registry.len());
    for spec in registry.features() {
        let id = ExtractorId::parse(&spec.extractor)?;
        let produced = cache.entry(id).or_insert_with(|| id.run(s));
        let v = produced.get(spec.lookup_key()).copied().unwrap_or(spec.default);
        values.insert(spec.name.clone(), v);
    }
    Ok(FeatureProfile {
        sent_id: s.sent_id.clone(),
        length: s.len(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation.
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub feature_names: Vec<String>,
    pub profiles: Vec<FeatureProfile>,
    pub summary: Vec<FeatureSummary>,
}

/// Profiles every sentence of `tb` (in treebank order) and summarizes each
/// feature over the corpus.
pub fn profile_treebank(tb: &Treebank, registry: &FeatureRegistry) -> Result<ProfileTable> {
    if tb.is_empty() {
        return Err(Error::usage("cannot profile an empty treebank"));
    }
    registry.check()?;
    let profiles = tb
        .sentences
        .par_iter()
        .map(|s| profile_sentence(s, registry))
        .collect::<Result<Vec<_>>>()?;
    let feature_names: Vec<String> = registry.names().map(str::to_string).collect();
    let summary = summarize(&feature_names, &profiles);
    Ok(ProfileTable {
        feature_names,
        profiles,
        summary,
    })
}

fn summarize(names: &[String], profiles: &[FeatureProfile]) -> Vec<FeatureSummary> {
    let n = profiles.len() as f64;
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = profiles.iter().map(|p| p.values[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            FeatureSummary {
                name: name.clone(),
                mean,
                stdev: var.sqrt(),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

impl ProfileTable {
    /// `sentences x features` matrix of the profiles.
    pub fn targets(&self) -> ndarray::Array2<f64> {
        let (n, f) = (self.profiles.len(), self.feature_names.len());
        ndarray::Array2::from_shape_fn((n, f), |(i, j)| self.profiles[i].values[j])
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.profiles.iter().map(|p| p.length as f64).collect()
    }

    /// `sent_id<TAB>feature...` with six decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sent_id");
        for name in &self.feature_names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for p in &self.profiles {
            out.push_str(&p.sent_id);
            for v in p.values.values() {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("feature\tmean\tstdev\tmin\tmax\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                s.name, s.mean, s.stdev, s.min, s.max
            );
        }
        out
    }

    /// One JSON object per sentence.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.profiles {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a profile TSV as written by [`ProfileTable::to_tsv`]. Lengths are
/// taken from the `sent_length` column when present, otherwise zero.
pub fn read_profile_tsv(text: &str) -> Result<(Vec<String>, Vec<FeatureProfile>)> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::format("empty profile table"))?;
    let mut cols = header.split('\t');
    if cols.next() != Some("sent_id") {
        return Err(Error::format("profile table must start with a sent_id column"));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    let mut profiles = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != names.len() + 1 {
            return Err(Error::format(format!(
                "profile row {} has {} columns, expected {}",
                i + 2,
                fields.len(),
                names.len() + 1
            )));
        }
        let mut values = IndexMap::with_capacity(names.len());
        for (name, f) in names.iter().zip(&fields[1..]) {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(format!("row {}: bad value {f:?}", i + 2)))?;
            values.insert(name.clone(), v);
        }
        let length = values.get("sent_length").map_or(0, |v| *v as usize);
        profiles.push(FeatureProfile {
            sent_id: fields[0].to_string(),
            length,
            values,
        });
    }
    Ok((names, profiles))
}
