//! Per-group feature extractors. Each takes a validated sentence and returns
//! every value it can produce for that sentence, keyed by feature name.
//! Families (`upos_dist_*`, `dep_dist_*`, ...) only contain the members
//! observed in the sentence; the registry fills the rest with defaults.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::conllu::{ParsedSentence, Token};

pub type Values = BTreeMap<String, f64>;

pub const CONTENT_UPOS: [&str; 5] = ["NOUN", "PROPN", "VERB", "ADJ", "ADV"];
pub const VERBAL_XPOS: [&str; 6] = ["VB", "VBD", "VBG", "VBN", "VBP", "VBZ"];
pub const SUBORDINATE_RELS: [&str; 5] = ["csubj", "ccomp", "xcomp", "advcl", "acl"];
const NOMINAL_UPOS: [&str; 3] = ["NOUN", "PROPN", "PRON"];

/// Largest explicit bin of the arity histogram; larger arities land in `6+`.
pub const ARITY_TOP_BIN: usize = 6;
/// Largest explicit bin of the chain-length histograms.
pub const CHAIN_TOP_BIN: usize = 5;

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_usize(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<usize>() as f64 / xs.len() as f64
    }
}

fn bin_name(prefix: &str, k: usize, top: usize) -> String {
    if k >= top {
        format!("{prefix}{top}+")
    } else {
        format!("{prefix}{k}")
    }
}

/// Histogram of `lengths` as percentages, with an open-ended top bin.
fn length_distribution(out: &mut Values, prefix: &str, lengths: &[usize], top: usize) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for &k in lengths {
        *counts.entry(bin_name(prefix, k, top)).or_default() += 1;
    }
    for (name, c) in counts {
        out.insert(name, pct(c, lengths.len()));
    }
}

fn distribution<'a>(out: &mut Values, prefix: &str, keys: impl Iterator<Item = &'a str>, total: usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    for (k, c) in counts {
        out.insert(format!("{prefix}{k}"), pct(c, total));
    }
}

pub fn raw_text(s: &ParsedSentence) -> Values {
    let words: Vec<&Token> = s.tokens.iter().filter(|t| !t.is_punct()).collect();
    let chars: usize = words.iter().map(|t| t.form.chars().count()).sum();
    let mut out = Values::new();
    out.insert("sent_length".into(), s.len() as f64);
    out.insert("char_per_tok".into(), ratio(chars, words.len()));
    out
}

pub fn vocabulary(s: &ParsedSentence) -> Values {
    let forms: BTreeSet<String> = s.tokens.iter().map(|t| t.form.to_lowercase()).collect();
    let lemmas: BTreeSet<String> = s.tokens.iter().map(|t| t.lemma.to_lowercase()).collect();
    let mut out = Values::new();
    out.insert("ttr_form".into(), ratio(forms.len(), s.len()));
    out.insert("ttr_lemma".into(), ratio(lemmas.len(), s.len()));
    out
}

pub fn pos(s: &ParsedSentence) -> Values {
    let n = s.len();
    let mut out = Values::new();
    distribution(&mut out, "upos_dist_", s.tokens.iter().map(|t| t.upos.as_str()), n);
    distribution(
        &mut out,
        "xpos_dist_",
        s.tokens.iter().filter_map(|t| t.xpos.as_deref()),
        n,
    );
    let words = s.tokens.iter().filter(|t| !t.is_punct()).count();
    let content = s
        .tokens
        .iter()
        .filter(|t| CONTENT_UPOS.contains(&t.upos.as_str()))
        .count();
    out.insert("lexical_density".into(), ratio(content, words));
    out
}

pub fn verb_inflection(s: &ParsedSentence) -> Values {
    let mut out = Values::new();
    let verbal: Vec<&Token> = s
        .tokens
        .iter()
        .filter(|t| t.upos == "VERB" || t.upos == "AUX")
        .collect();
    distribution(
        &mut out,
        "verb_xpos_dist_",
        verbal
            .iter()
            .filter_map(|t| t.xpos.as_deref())
            .filter(|x| VERBAL_XPOS.contains(x)),
        verbal.len(),
    );

    let aux: Vec<&Token> = s.tokens.iter().filter(|t| t.upos == "AUX").collect();
    let num_pers: Vec<String> = aux
        .iter()
        .filter_map(|t| Some(format!("{}+{}", t.feat("Number")?, t.feat("Person")?)))
        .collect();
    distribution(
        &mut out,
        "aux_num_pers_dist_",
        num_pers.iter().map(String::as_str),
        aux.len(),
    );
    for (attr, prefix) in [
        ("Tense", "aux_tense_dist_"),
        ("Mood", "aux_mood_dist_"),
        ("VerbForm", "aux_form_dist_"),
    ] {
        distribution(&mut out, prefix, aux.iter().filter_map(|t| t.feat(attr)), aux.len());
    }
    out
}

/// Children of every token, indexed by `id - 1`, in surface order.
fn children(s: &ParsedSentence) -> Vec<Vec<usize>> {
    let mut kids = vec![Vec::new(); s.len()];
    for t in &s.tokens {
        if t.head > 0 {
            kids[t.head - 1].push(t.id);
        }
    }
    kids
}

/// Arity (non-punct dependents) of every verbal head, in surface order.
/// A verbal head is a VERB with at least one non-punct dependent.
fn verbal_head_arities(s: &ParsedSentence, kids: &[Vec<usize>]) -> Vec<usize> {
    s.tokens
        .iter()
        .filter(|t| t.upos == "VERB")
        .map(|t| {
            kids[t.id - 1]
                .iter()
                .filter(|&&c| s.tokens[c - 1].deprel != "punct")
                .count()
        })
        .filter(|&arity| arity > 0)
        .collect()
}

fn clause_count(arities: &[usize]) -> usize {
    arities.len().max(1)
}

pub fn verb_predicate(s: &ParsedSentence) -> Values {
    let kids = children(s);
    let arities = verbal_head_arities(s, &kids);
    let mut out = Values::new();
    out.insert("verbal_head_dist".into(), pct(arities.len(), s.len()));
    let root_is_verb = s.root().is_some_and(|r| r.upos == "VERB");
    out.insert("verbal_root_perc".into(), if root_is_verb { 100.0 } else { 0.0 });
    out.insert("avg_verb_edges".into(), mean_usize(&arities));
    length_distribution(&mut out, "verbal_arity_", &arities, ARITY_TOP_BIN);
    out
}

fn is_case_marked_nominal(s: &ParsedSentence, kids: &[Vec<usize>], id: usize) -> bool {
    let t = &s.tokens[id - 1];
    NOMINAL_UPOS.contains(&t.upos.as_str())
        && kids[id - 1].iter().any(|&c| {
            let d = &s.tokens[c - 1];
            d.base_deprel() == "case" && d.upos == "ADP"
        })
}

/// Lengths of all root-to-leaf paths in a forest given as `parent` links
/// over a node subset.
fn path_lengths(nodes: &[usize], parent: &HashMap<usize, usize>) -> Vec<usize> {
    let has_child: BTreeSet<usize> = parent.values().copied().collect();
    let mut lengths = Vec::new();
    for &leaf in nodes.iter().filter(|n| !has_child.contains(n)) {
        let mut len = 1;
        let mut cur = leaf;
        while let Some(&p) = parent.get(&cur) {
            len += 1;
            cur = p;
        }
        lengths.push(len);
    }
    lengths
}

/// Prepositional chains: case-marked nominals linked by `nmod` edges.
/// Returns the length of every maximal chain.
pub fn prep_chain_lengths(s: &ParsedSentence) -> Vec<usize> {
    let kids = children(s);
    let marked: Vec<usize> = s
        .tokens
        .iter()
        .map(|t| t.id)
        .filter(|&id| is_case_marked_nominal(s, &kids, id))
        .collect();
    let marked_set: BTreeSet<usize> = marked.iter().copied().collect();
    let parent: HashMap<usize, usize> = marked
        .iter()
        .filter_map(|&id| {
            let t = &s.tokens[id - 1];
            (t.base_deprel() == "nmod" && marked_set.contains(&t.head)).then_some((id, t.head))
        })
        .collect();
    path_lengths(&marked, &parent)
}

pub fn tree_structure(s: &ParsedSentence) -> Values {
    let n = s.len();
    let mut out = Values::new();
    let depth = s.depths().into_iter().max().unwrap_or(0);
    out.insert("parse_depth".into(), depth as f64);

    let links: Vec<usize> = s
        .tokens
        .iter()
        .filter(|t| t.head != 0)
        .map(|t| t.id.abs_diff(t.head))
        .collect();
    out.insert("avg_links_len".into(), mean_usize(&links));
    out.insert("max_links_len".into(), links.iter().copied().max().unwrap_or(0) as f64);

    let chains = prep_chain_lengths(s);
    out.insert("avg_prep_chain_len".into(), mean_usize(&chains));
    length_distribution(&mut out, "prep_dist_", &chains, CHAIN_TOP_BIN);

    let kids = children(s);
    let clauses = clause_count(&verbal_head_arities(s, &kids));
    out.insert("avg_token_per_clause".into(), n as f64 / clauses as f64);
    out
}

pub fn order(s: &ParsedSentence) -> Values {
    let share = |rel: &str, pred: fn(&Token) -> bool| {
        let matching: Vec<&Token> = s.tokens.iter().filter(|t| t.base_deprel() == rel).collect();
        pct(matching.iter().filter(|t| pred(t)).count(), matching.len())
    };
    let mut out = Values::new();
    out.insert("subj_pre".into(), share("nsubj", |t| t.id < t.head));
    out.insert("obj_post".into(), share("obj", |t| t.id > t.head));
    out
}

pub fn syntactic_dep(s: &ParsedSentence) -> Values {
    let mut out = Values::new();
    distribution(
        &mut out,
        "dep_dist_",
        s.tokens.iter().map(|t| t.deprel.as_str()),
        s.len(),
    );
    out
}

fn is_subordinate(t: &Token) -> bool {
    SUBORDINATE_RELS.contains(&t.base_deprel())
}

/// Subordination chains: each subordinate clause head is governed by the
/// nearest subordinate clause head above it. Returns every maximal chain's
/// length.
pub fn subord_chain_lengths(s: &ParsedSentence) -> Vec<usize> {
    let heads: Vec<usize> = s.tokens.iter().filter(|t| is_subordinate(t)).map(|t| t.id).collect();
    let mut parent = HashMap::new();
    for &id in &heads {
        let mut cur = s.tokens[id - 1].head;
        while cur != 0 {
            let t = &s.tokens[cur - 1];
            if is_subordinate(t) {
                parent.insert(id, cur);
                break;
            }
            cur = t.head;
        }
    }
    path_lengths(&heads, &parent)
}

pub fn subordination(s: &ParsedSentence) -> Values {
    let kids = children(s);
    let clauses = clause_count(&verbal_head_arities(s, &kids));
    let sub_heads: Vec<&Token> = s.tokens.iter().filter(|t| is_subordinate(t)).collect();
    let principal = clauses.saturating_sub(sub_heads.len());
    // Equal to the clause count unless subordinate heads outnumber verbal heads.
    let total = principal + sub_heads.len();

    let mut out = Values::new();
    out.insert("principal_prop_dist".into(), pct(principal, total));
    out.insert("subordinate_prop_dist".into(), pct(sub_heads.len(), total));
    let chains = subord_chain_lengths(s);
    out.insert("avg_subord_chain_len".into(), mean_usize(&chains));
    length_distribution(&mut out, "subordinate_dist_", &chains, CHAIN_TOP_BIN);
    let post = sub_heads.iter().filter(|t| t.id > t.head).count();
    out.insert("subordinate_post".into(), pct(post, sub_heads.len()));
    out
}
