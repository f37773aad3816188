//! Layerwise sentence embeddings, label files, and the join of both with
//! feature profiles.
//!
//! LEMB layout (integers little-endian):
//!
//! ```text
//! "LEMB" | version u32 = 1 | n_sentences u32 | n_layers u32 | dim u32
//! | model_tag (u32 length + UTF-8)
//! | n_sentences x (u32 length + UTF-8 sent_id)
//! | n_sentences x n_layers x dim f32, sentence-major, layer-minor
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::profiler::FeatureProfile;

pub const LEMB_MAGIC: &[u8; 4] = b"LEMB";
pub const LEMB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub model_tag: String,
    pub layer_count: usize,
    pub dim: usize,
    /// Per sentence, `layer_count * dim` values, layer by layer.
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingSet {
    pub fn new(model_tag: impl Into<String>, layer_count: usize, dim: usize) -> Self {
        EmbeddingSet {
            model_tag: model_tag.into(),
            layer_count,
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Adds one sentence; `values` holds all layers back to back.
    pub fn insert(&mut self, sent_id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let sent_id = sent_id.into();
        if values.len() != self.layer_count * self.dim {
            return Err(Error::InvalidData(format!(
                "sentence {sent_id}: expected {} x {} values, got {}",
                self.layer_count,
                self.dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "sentence {sent_id}: non-finite embedding value"
            )));
        }
        if self.entries.contains_key(&sent_id) {
            return Err(Error::InvalidData(format!("duplicate sentence id {sent_id}")));
        }
        self.entries.insert(sent_id, values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, sent_id: &str) -> bool {
        self.entries.contains_key(sent_id)
    }

    /// Sentence ids in lexicographic order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn values(&self, sent_id: &str) -> Option<&[f32]> {
        self.entries.get(sent_id).map(Vec::as_slice)
    }

    /// The vector of `sent_id` at 1-based `layer`.
    pub fn vector(&self, sent_id: &str, layer: usize) -> Option<&[f32]> {
        if layer == 0 || layer > self.layer_count {
            return None;
        }
        let v = self.entries.get(sent_id)?;
        Some(&v[(layer - 1) * self.dim..layer * self.dim])
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidData(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len(), "string length")?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Writes `set` in LEMB format and returns the number of bytes written.
pub fn write_lemb<W: Write>(set: &EmbeddingSet, mut w: W) -> Result<u64> {
    for (id, v) in &set.entries {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!("sentence {id}: non-finite embedding value")));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(LEMB_MAGIC);
    buf.extend_from_slice(&LEMB_VERSION.to_le_bytes());
    put_u32(&mut buf, set.entries.len(), "sentence count")?;
    put_u32(&mut buf, set.layer_count, "layer count")?;
    put_u32(&mut buf, set.dim, "dimension")?;
    put_str(&mut buf, &set.model_tag)?;
    for id in set.entries.keys() {
        put_str(&mut buf, id)?;
    }
    w.write_all(&buf)?;
    let mut written = buf.len() as u64;
    for v in set.entries.values() {
        let mut payload = Vec::with_capacity(v.len() * 4);
        for x in v {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&payload)?;
        written += payload.len() as u64;
    }
    w.flush()?;
    Ok(written)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::format(format!(
                "truncated {what}: expected {n} bytes, found {remaining}"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(format!("{what} is not valid UTF-8")))
    }
}

/// Reads a LEMB stream.
pub fn read_lemb<R: Read>(mut input: R) -> Result<EmbeddingSet> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_lemb(&bytes)
}

fn parse_lemb(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != LEMB_MAGIC {
        return Err(Error::format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = c.u32("version")?;
    if version as u32 != LEMB_VERSION {
        return Err(Error::format(format!("unsupported LEMB version {version}")));
    }
    let n = c.u32("sentence count")?;
    let layers = c.u32("layer count")?;
    let dim = c.u32("dimension")?;
    let model_tag = c.string("model tag")?;
    let mut ids = Vec::new();
    for _ in 0..n {
        ids.push(c.string("sentence id")?);
    }
    let per_sentence = layers
        .checked_mul(dim)
        .ok_or_else(|| Error::format("layer count x dimension overflows"))?;
    let payload_bytes = n
        .checked_mul(per_sentence)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("payload size overflows"))?;
    let payload = c.take(payload_bytes, "payload")?;
    if c.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after payload",
            bytes.len() - c.pos
        )));
    }
    let mut set = EmbeddingSet::new(model_tag, layers, dim);
    for (i, id) in ids.into_iter().enumerate() {
        let chunk = &payload[i * per_sentence * 4..(i + 1) * per_sentence * 4];
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        set.insert(id, values).map_err(|e| Error::format(e.to_string()))?;
    }
    Ok(set)
}

/// Reads the debug TSV form: `sent_id<TAB>layer<TAB>v1..vdim`, one row per
/// sentence and 1-based layer. `# model_tag = ...` sets the tag.
pub fn read_embedding_tsv(text: &str) -> Result<EmbeddingSet> {
    let mut model_tag = String::from("tsv");
    let mut rows: BTreeMap<String, BTreeMap<usize, Vec<f32>>> = BTreeMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(tag) = c.trim().strip_prefix("model_tag") {
                model_tag = tag.trim_start().trim_start_matches('=').trim().to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::format(format!(
                "line {line_no}: expected sent_id, layer and values"
            )));
        }
        let layer: usize = fields[1]
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::format(format!("line {line_no}: bad layer {:?}", fields[1])))?;
        let values = fields[2..]
            .iter()
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(format!("line {line_no}: bad embedding value")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(format!(
                    "line {line_no}: expected {d} values, found {}",
                    values.len()
                )))
            }
            _ => {}
        }
        if rows
            .entry(fields[0].to_string())
            .or_default()
            .insert(layer, values)
            .is_some()
        {
            return Err(Error::format(format!("line {line_no}: duplicate layer {layer}")));
        }
    }
    let layer_count = rows.values().flat_map(|l| l.keys().copied()).max().unwrap_or(0);
    let mut set = EmbeddingSet::new(model_tag, layer_count, dim.unwrap_or(0));
    for (id, layers) in rows {
        if layers.len() != layer_count {
            return Err(Error::format(format!(
                "sentence {id} has {} of {layer_count} layers",
                layers.len()
            )));
        }
        let flat: Vec<f32> = layers.into_values().flatten().collect();
        set.insert(id, flat).map_err(|e| Error::format(e.to_string()))?;
    }
    Ok(set)
}

/// Opens an embedding file, LEMB or debug TSV, detected by its magic.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io_at(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io_at(path, e))?;
    if bytes.starts_with(LEMB_MAGIC) {
        parse_lemb(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::format(format!("{}: neither LEMB nor UTF-8 TSV", path.display())))?;
        read_embedding_tsv(&text)
    }
}

pub fn write_lemb_file(set: &EmbeddingSet, path: &Path) -> Result<u64> {
    write_lemb(
        set,
        BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
}

/// Gold and predicted downstream labels per sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelFile {
    pub entries: BTreeMap<String, LabelEntry>,
}

impl LabelFile {
    pub fn insert(&mut self, sent_id: impl Into<String>, gold: impl Into<String>, predicted: impl Into<String>) {
        let gold = gold.into();
        let predicted = predicted.into();
        let correct = gold == predicted;
        self.entries.insert(
            sent_id.into(),
            LabelEntry {
                gold,
                predicted,
                correct,
            },
        );
    }

    /// Parses `sent_id<TAB>gold<TAB>predicted`; a leading `sent_id` header
    /// row is skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut out = LabelFile::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && line.starts_with("sent_id\t")) {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::format(format!(
                    "label file line {}: expected 3 columns, found {}",
                    i + 1,
                    f.len()
                )));
            }
            if out.entries.contains_key(f[0]) {
                return Err(Error::format(format!("label file: duplicate sentence id {}", f[0])));
            }
            out.insert(f[0], f[1], f[2]);
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("sent_id\tgold\tpredicted\n");
        for (id, e) in &self.entries {
            let _ = writeln!(s, "{id}\t{}\t{}", e.gold, e.predicted);
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }
}

/// Per-model layer matrices of an aligned dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayers {
    pub model_tag: String,
    /// One `n x dim` matrix per layer, layer 1 first.
    pub layers: Vec<Array2<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DropCount {
    pub source: String,
    pub dropped: usize,
}

/// Embeddings, targets and labels restricted to their common sentences, in
/// lexicographic sentence-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub sent_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// `n x features`
    pub targets: Array2<f64>,
    /// Sentence lengths in tokens.
    pub lengths: Vec<f64>,
    pub models: Vec<ModelLayers>,
    pub correct: Option<Vec<bool>>,
    pub drops: Vec<DropCount>,
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.sent_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sent_ids.is_empty()
    }

    /// Restriction to the given row indices (kept in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> AlignedDataset {
        AlignedDataset {
            sent_ids: rows.iter().map(|&r| self.sent_ids[r].clone()).collect(),
            feature_names: self.feature_names.clone(),
            targets: self.targets.select(ndarray::Axis(0), rows),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
            models: self
                .models
                .iter()
                .map(|m| ModelLayers {
                    model_tag: m.model_tag.clone(),
                    layers: m.layers.iter().map(|l| l.select(ndarray::Axis(0), rows)).collect(),
                })
                .collect(),
            correct: self.correct.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect()),
            drops: Vec::new(),
        }
    }
}

/// Joins embedding sets, profiles and optional labels on their common
/// sentence ids.
pub fn align(sets: &[EmbeddingSet], profiles: &[FeatureProfile], labels: Option<&LabelFile>) -> Result<AlignedDataset> {
    let feature_names: Vec<String> = profiles
        .first()
        .map(|p| p.values.keys().cloned().collect())
        .unwrap_or_default();
    for p in profiles {
        if p.values.len() != feature_names.len() || !p.values.keys().zip(&feature_names).all(|(a, b)| a == b) {
            return Err(Error::usage(format!(
                "profile {} does not share the feature schema of the first profile",
                p.sent_id
            )));
        }
    }
    let by_id: BTreeMap<&str, &FeatureProfile> = profiles.iter().map(|p| (p.sent_id.as_str(), p)).collect();
    if by_id.len() != profiles.len() {
        return Err(Error::usage("duplicate sentence ids among profiles"));
    }

    let mut common: BTreeSet<&str> = by_id.keys().copied().collect();
    for s in sets {
        common.retain(|id| s.contains(id));
    }
    if let Some(l) = labels {
        common.retain(|id| l.entries.contains_key(*id));
    }
    if common.is_empty() {
        return Err(Error::usage("no sentence id is shared by all inputs"));
    }

    let mut drops = Vec::new();
    for s in sets {
        drops.push(DropCount {
            source: format!("embeddings:{}", s.model_tag),
            dropped: s.len() - common.len(),
        });
    }
    drops.push(DropCount {
        source: "profiles".into(),
        dropped: profiles.len() - common.len(),
    });
    if let Some(l) = labels {
        drops.push(DropCount {
            source: "labels".into(),
            dropped: l.entries.len() - common.len(),
        });
    }

    let n = common.len();
    let f = feature_names.len();
    let mut targets = Array2::<f64>::zeros((n, f));
    let mut lengths = Vec::with_capacity(n);
    for (i, id) in common.iter().enumerate() {
        let p = by_id[id];
        for (j, v) in p.values.values().enumerate() {
            targets[[i, j]] = *v;
        }
        lengths.push(p.length as f64);
    }
    let models = sets
        .iter()
        .map(|s| {
            let layers = (1..=s.layer_count)
                .map(|layer| {
                    let mut m = Array2::<f32>::zeros((n, s.dim));
                    for (i, id) in common.iter().enumerate() {
                        let v = s.vector(id, layer).expect("id in intersection");
                        m.row_mut(i).iter_mut().zip(v).for_each(|(dst, src)| *dst = *src);
                    }
                    m
                })
                .collect();
            ModelLayers {
                model_tag: s.model_tag.clone(),
                layers,
            }
        })
        .collect();
    let correct = labels.map(|l| common.iter().map(|id| l.entries[*id].correct).collect());
    Ok(AlignedDataset {
        sent_ids: common.iter().map(|s| s.to_string()).collect(),
        feature_names,
        targets,
        lengths,
        models,
        correct,
        drops,
    })
}
