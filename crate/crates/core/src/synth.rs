//! Synthetic data: random well-formed dependency trees with plausible
//! English tags and relations, and embeddings with planted linear signals.
//! Used by the property tests, the acceptance suite and the `synth` command.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conllu::{ParsedSentence, Token, Treebank};
use crate::embstore::EmbeddingSet;
use crate::error::{Error, Result};

/// Form, lemma, XPOS and features of one auxiliary.
type AuxForm = (
    &'static str,
    &'static str,
    &'static str,
    &'static [(&'static str, &'static str)],
);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            min_len: 3,
            max_len: 40,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
    Either,
}

/// Relations a head of the given UPOS may govern, with the dependent's UPOS
/// choices, attachment side and sampling weight.
fn child_table(upos: &str) -> &'static [(&'static str, &'static [&'static str], Side, u32)] {
    use Side::*;
    match upos {
        "VERB" => &[
            ("nsubj", &["NOUN", "PRON", "PROPN"], Left, 6),
            ("obj", &["NOUN", "PRON", "PROPN"], Right, 5),
            ("obl", &["NOUN", "PROPN"], Right, 4),
            ("advmod", &["ADV"], Either, 3),
            ("aux", &["AUX"], Left, 3),
            ("mark", &["SCONJ", "PART"], Left, 1),
            ("cc", &["CCONJ"], Left, 1),
            ("conj", &["VERB"], Right, 1),
            ("advcl", &["VERB"], Either, 2),
            ("ccomp", &["VERB"], Right, 1),
            ("xcomp", &["VERB"], Right, 2),
            ("csubj", &["VERB"], Left, 1),
            ("punct", &["PUNCT"], Right, 2),
            ("iobj", &["PRON"], Right, 1),
            ("expl", &["PRON"], Left, 1),
        ],
        "NOUN" | "PROPN" => &[
            ("det", &["DET"], Left, 5),
            ("amod", &["ADJ"], Left, 4),
            ("case", &["ADP"], Left, 3),
            ("nmod", &["NOUN", "PROPN"], Right, 3),
            ("nmod:poss", &["PRON", "PROPN"], Left, 1),
            ("compound", &["NOUN"], Left, 1),
            ("nummod", &["NUM"], Left, 1),
            ("acl", &["VERB"], Right, 1),
            ("acl:relcl", &["VERB"], Right, 1),
            ("conj", &["NOUN"], Right, 1),
            ("cc", &["CCONJ"], Left, 1),
            ("punct", &["PUNCT"], Right, 1),
        ],
        "PRON" => &[("case", &["ADP"], Left, 1)],
        "ADJ" => &[("advmod", &["ADV"], Left, 2), ("obl", &["NOUN"], Right, 1)],
        _ => &[],
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "ta", "vo", "shi", "pre", "dun", "el", "or", "ab", "ne", "sto", "gra", "fi", "u", "qua",
    "ber", "lin", "tor", "ex", "pa", "mo",
];

fn word<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect()
}

struct Lex {
    form: String,
    lemma: String,
    xpos: &'static str,
    feats: BTreeMap<String, String>,
}

fn feats(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn lexeme<R: Rng>(rng: &mut R, upos: &str) -> Lex {
    let plain = |rng: &mut R, xpos: &'static str, f: &[(&str, &str)]| {
        let w = word(rng);
        Lex {
            form: w.clone(),
            lemma: w,
            xpos,
            feats: feats(f),
        }
    };
    match upos {
        "NOUN" => {
            let stem = word(rng);
            if rng.random_bool(0.3) {
                Lex {
                    form: format!("{stem}s"),
                    lemma: stem,
                    xpos: "NNS",
                    feats: feats(&[("Number", "Plur")]),
                }
            } else {
                Lex {
                    form: stem.clone(),
                    lemma: stem,
                    xpos: "NN",
                    feats: feats(&[("Number", "Sing")]),
                }
            }
        }
        "PROPN" => {
            let w = word(rng);
            let mut c = w.chars();
            let cap: String = c
                .next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default();
            Lex {
                form: cap.clone(),
                lemma: cap,
                xpos: "NNP",
                feats: feats(&[("Number", "Sing")]),
            }
        }
        "VERB" => {
            let stem = word(rng);
            let (xpos, suffix, f): (&'static str, &str, &[(&str, &str)]) = match rng.random_range(0..6) {
                0 => ("VB", "", &[("VerbForm", "Inf")]),
                1 => ("VBD", "ed", &[("Mood", "Ind"), ("Tense", "Past"), ("VerbForm", "Fin")]),
                2 => ("VBG", "ing", &[("Tense", "Pres"), ("VerbForm", "Part")]),
                3 => ("VBN", "en", &[("Tense", "Past"), ("VerbForm", "Part")]),
                4 => ("VBP", "", &[("Mood", "Ind"), ("Tense", "Pres"), ("VerbForm", "Fin")]),
                _ => (
                    "VBZ",
                    "s",
                    &[
                        ("Mood", "Ind"),
                        ("Number", "Sing"),
                        ("Person", "3"),
                        ("Tense", "Pres"),
                        ("VerbForm", "Fin"),
                    ],
                ),
            };
            Lex {
                form: format!("{stem}{suffix}"),
                lemma: stem,
                xpos,
                feats: feats(f),
            }
        }
        "AUX" => {
            let opts: [AuxForm; 5] = [
                (
                    "is",
                    "be",
                    "VBZ",
                    &[
                        ("Mood", "Ind"),
                        ("Number", "Sing"),
                        ("Person", "3"),
                        ("Tense", "Pres"),
                        ("VerbForm", "Fin"),
                    ],
                ),
                (
                    "was",
                    "be",
                    "VBD",
                    &[
                        ("Mood", "Ind"),
                        ("Number", "Sing"),
                        ("Person", "3"),
                        ("Tense", "Past"),
                        ("VerbForm", "Fin"),
                    ],
                ),
                (
                    "have",
                    "have",
                    "VBP",
                    &[("Mood", "Ind"), ("Tense", "Pres"), ("VerbForm", "Fin")],
                ),
                ("will", "will", "MD", &[("VerbForm", "Fin")]),
                ("been", "be", "VBN", &[("Tense", "Past"), ("VerbForm", "Part")]),
            ];
            let (form, lemma, xpos, f) = opts[rng.random_range(0..opts.len())];
            Lex {
                form: form.into(),
                lemma: lemma.into(),
                xpos,
                feats: feats(f),
            }
        }
        "PRON" => {
            let opts: [(&str, &[(&str, &str)]); 5] = [
                (
                    "he",
                    &[
                        ("Case", "Nom"),
                        ("Number", "Sing"),
                        ("Person", "3"),
                        ("PronType", "Prs"),
                    ],
                ),
                (
                    "they",
                    &[
                        ("Case", "Nom"),
                        ("Number", "Plur"),
                        ("Person", "3"),
                        ("PronType", "Prs"),
                    ],
                ),
                ("it", &[("Number", "Sing"), ("Person", "3"), ("PronType", "Prs")]),
                ("you", &[("Person", "2"), ("PronType", "Prs")]),
                (
                    "i",
                    &[
                        ("Case", "Nom"),
                        ("Number", "Sing"),
                        ("Person", "1"),
                        ("PronType", "Prs"),
                    ],
                ),
            ];
            let (form, f) = opts[rng.random_range(0..opts.len())];
            Lex {
                form: form.into(),
                lemma: form.into(),
                xpos: "PRP",
                feats: feats(f),
            }
        }
        "DET" => {
            let form = *["the", "a", "this", "some", "every"].choose(rng).expect("nonempty");
            Lex {
                form: form.into(),
                lemma: form.into(),
                xpos: "DT",
                feats: BTreeMap::new(),
            }
        }
        "ADP" => {
            let form = *["of", "in", "on", "with", "from", "to"].choose(rng).expect("nonempty");
            Lex {
                form: form.into(),
                lemma: form.into(),
                xpos: "IN",
                feats: BTreeMap::new(),
            }
        }
        "SCONJ" => plain(rng, "IN", &[]),
        "PART" => Lex {
            form: "to".into(),
            lemma: "to".into(),
            xpos: "TO",
            feats: BTreeMap::new(),
        },
        "CCONJ" => {
            let form = *["and", "or", "but"].choose(rng).expect("nonempty");
            Lex {
                form: form.into(),
                lemma: form.into(),
                xpos: "CC",
                feats: BTreeMap::new(),
            }
        }
        "NUM" => {
            let n = rng.random_range(1..2000).to_string();
            Lex {
                form: n.clone(),
                lemma: n,
                xpos: "CD",
                feats: feats(&[("NumType", "Card")]),
            }
        }
        "ADJ" => {
            let xpos = if rng.random_bool(0.2) { "JJR" } else { "JJ" };
            plain(rng, xpos, &[("Degree", "Pos")])
        }
        "ADV" => plain(rng, "RB", &[]),
        "PUNCT" => {
            let form = *[",", ".", ";"].choose(rng).expect("nonempty");
            Lex {
                form: form.into(),
                lemma: form.into(),
                xpos: if form == "." { "." } else { "," },
                feats: BTreeMap::new(),
            }
        }
        _ => plain(rng, "NN", &[]),
    }
}

struct Node {
    upos: &'static str,
    deprel: &'static str,
    parent: usize,
    side: Side,
    children: Vec<usize>,
}

/// A random valid sentence. Trees are grown top-down from a VERB root by
/// sampling relations each head category licenses, then linearized
/// projectively.
pub fn random_sentence<R: Rng>(rng: &mut R, sent_id: &str, opts: TreeOptions) -> ParsedSentence {
    let target = rng.random_range(opts.min_len.max(1)..=opts.max_len.max(opts.min_len.max(1)));
    let mut nodes = vec![Node {
        upos: "VERB",
        deprel: "root",
        parent: usize::MAX,
        side: Side::Either,
        children: Vec::new(),
    }];
    while nodes.len() < target {
        let expandable: Vec<usize> = (0..nodes.len())
            .filter(|&i| !child_table(nodes[i].upos).is_empty())
            .collect();
        let head = *expandable.choose(rng).expect("the root is always expandable");
        let table = child_table(nodes[head].upos);
        let total: u32 = table.iter().map(|e| e.3).sum();
        let mut pick = rng.random_range(0..total);
        let entry = table
            .iter()
            .find(|e| {
                if pick < e.3 {
                    true
                } else {
                    pick -= e.3;
                    false
                }
            })
            .expect("weights cover the range");
        let upos = *entry.1.choose(rng).expect("nonempty");
        let side = match entry.2 {
            Side::Either if rng.random_bool(0.5) => Side::Left,
            Side::Either => Side::Right,
            s => s,
        };
        let id = nodes.len();
        nodes.push(Node {
            upos,
            deprel: entry.0,
            parent: head,
            side,
            children: Vec::new(),
        });
        nodes[head].children.push(id);
    }

    // projective linearization: left dependents, head, right dependents
    fn linearize(nodes: &[Node], n: usize, out: &mut Vec<usize>) {
        let (left, right): (Vec<usize>, Vec<usize>) =
            nodes[n].children.iter().partition(|&&c| nodes[c].side == Side::Left);
        for c in left.into_iter().rev() {
            linearize(nodes, c, out);
        }
        out.push(n);
        let (punct, rest): (Vec<usize>, Vec<usize>) = right.into_iter().partition(|&c| nodes[c].deprel == "punct");
        for c in rest.into_iter().chain(punct) {
            linearize(nodes, c, out);
        }
    }
    let mut order = Vec::with_capacity(nodes.len());
    linearize(&nodes, 0, &mut order);
    let mut position = vec![0; nodes.len()];
    for (p, &n) in order.iter().enumerate() {
        position[n] = p + 1;
    }

    let tokens: Vec<Token> = order
        .iter()
        .enumerate()
        .map(|(p, &n)| {
            let node = &nodes[n];
            let lex = lexeme(rng, node.upos);
            Token {
                id: p + 1,
                form: lex.form,
                lemma: lex.lemma,
                upos: node.upos.to_string(),
                xpos: Some(lex.xpos.to_string()),
                feats: lex.feats,
                head: if n == 0 { 0 } else { position[node.parent] },
                deprel: node.deprel.to_string(),
                deps: None,
                misc: None,
            }
        })
        .collect();
    let text = tokens.iter().map(|t| t.form.as_str()).collect::<Vec<_>>().join(" ");
    ParsedSentence {
        sent_id: sent_id.to_string(),
        tokens,
        text: Some(text),
    }
}

/// `n` random sentences with ids `synth-00001`, `synth-00002`, ...
pub fn random_treebank(n: usize, seed: u64, opts: TreeOptions) -> Treebank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Treebank {
        sentences: (1..=n)
            .map(|i| random_sentence(&mut rng, &format!("synth-{i:05}"), opts))
            .collect(),
        source_files: Vec::new(),
    }
}

/// Embeds target columns linearly through a fixed random mixing matrix.
///
/// Each target column is z-scored (constant columns become 0) and the
/// layer is `scale * Z A + noise * N(0, 1)`, with `A` a `features x dim`
/// standard normal matrix drawn once from the seed.
pub struct SignalPlanter {
    mixing: Array2<f64>,
}

impl SignalPlanter {
    pub fn new(n_features: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SignalPlanter {
            mixing: Array2::from_shape_fn((n_features, dim), |_| StandardNormal.sample(&mut rng)),
        }
    }

    pub fn dim(&self) -> usize {
        self.mixing.ncols()
    }

    /// One layer; noise draws come from `noise_seed` in row-major order, so
    /// equal seeds give equal noise regardless of the targets.
    pub fn layer(&self, targets: ArrayView2<'_, f64>, scale: f64, noise: f64, noise_seed: u64) -> Result<Array2<f32>> {
        if targets.ncols() != self.mixing.nrows() {
            return Err(Error::usage(format!(
                "planter built for {} features, got {}",
                self.mixing.nrows(),
                targets.ncols()
            )));
        }
        let mut z = targets.to_owned();
        for mut col in z.columns_mut() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
        }
        let signal = z.dot(&self.mixing) * scale;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        Ok(signal.mapv(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (v + noise * e) as f32
        }))
    }
}

/// Packs per-layer `n x dim` matrices into an embedding set keyed by
/// `sent_ids`.
pub fn embedding_set(model_tag: &str, sent_ids: &[String], layers: &[Array2<f32>]) -> Result<EmbeddingSet> {
    let dim = layers.first().map_or(0, |l| l.ncols());
    if layers.iter().any(|l| l.nrows() != sent_ids.len() || l.ncols() != dim) {
        return Err(Error::usage("layer matrices must all be sentences x dim"));
    }
    let mut set = EmbeddingSet::new(model_tag, layers.len(), dim);
    for (i, id) in sent_ids.iter().enumerate() {
        let v: Vec<f32> = layers.iter().flat_map(|l| l.row(i).to_vec()).collect();
        set.insert(id.clone(), v)?;
    }
    Ok(set)
}
