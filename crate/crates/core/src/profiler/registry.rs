use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::{ARITY_TOP_BIN, CHAIN_TOP_BIN, VERBAL_XPOS};
use super::ExtractorId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    RawText,
    Vocabulary,
    #[serde(rename = "POS")]
    Pos,
    VerbInflection,
    VerbPredicate,
    TreeStructure,
    Order,
    SyntacticDep,
    Subord,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 9] = [
        FeatureGroup::RawText,
        FeatureGroup::Vocabulary,
        FeatureGroup::Pos,
        FeatureGroup::VerbInflection,
        FeatureGroup::VerbPredicate,
        FeatureGroup::TreeStructure,
        FeatureGroup::Order,
        FeatureGroup::SyntacticDep,
        FeatureGroup::Subord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::RawText => "RawText",
            FeatureGroup::Vocabulary => "Vocabulary",
            FeatureGroup::Pos => "POS",
            FeatureGroup::VerbInflection => "VerbInflection",
            FeatureGroup::VerbPredicate => "VerbPredicate",
            FeatureGroup::TreeStructure => "TreeStructure",
            FeatureGroup::Order => "Order",
            FeatureGroup::SyntacticDep => "SyntacticDep",
            FeatureGroup::Subord => "Subord",
        }
    }

    fn default_extractor(self) -> ExtractorId {
        match self {
            FeatureGroup::RawText => ExtractorId::RawText,
            FeatureGroup::Vocabulary => ExtractorId::Vocabulary,
            FeatureGroup::Pos => ExtractorId::Pos,
            FeatureGroup::VerbInflection => ExtractorId::VerbInflection,
            FeatureGroup::VerbPredicate => ExtractorId::VerbPredicate,
            FeatureGroup::TreeStructure => ExtractorId::TreeStructure,
            FeatureGroup::Order => ExtractorId::Order,
            FeatureGroup::SyntacticDep => ExtractorId::SyntacticDep,
            FeatureGroup::Subord => ExtractorId::Subordination,
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Name of the extractor output to read, when it differs from the
    /// feature name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub group: FeatureGroup,
    pub extractor: String,
    #[serde(default)]
    pub params: FeatureParams,
    #[serde(default)]
    pub default: f64,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, group: FeatureGroup) -> Self {
        FeatureSpec {
            name: name.into(),
            group,
            extractor: group.default_extractor().as_str().to_string(),
            params: FeatureParams::default(),
            default: 0.0,
        }
    }

    pub fn lookup_key(&self) -> &str {
        self.params.key.as_deref().unwrap_or(&self.name)
    }
}

/// Ordered feature schema. The order is the column order of every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureRegistry {
    features: Vec<FeatureSpec>,
}

pub const UD_UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X",
];

/// Penn Treebank tags plus the extra tags used by the English UD treebanks.
pub const EN_XPOS: [&str; 50] = [
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS", "PDT", "POS",
    "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP",
    "WP$", "WRB", ",", ".", ":", "``", "''", "-LRB-", "-RRB-", "HYPH", "NFP", "ADD", "AFX", "GW", "XX", "$",
];

/// Dependency relations of the English UD treebanks, subtypes included.
pub const EN_DEPREL: [&str; 49] = [
    "acl",
    "acl:relcl",
    "advcl",
    "advmod",
    "amod",
    "appos",
    "aux",
    "aux:pass",
    "case",
    "cc",
    "cc:preconj",
    "ccomp",
    "compound",
    "compound:prt",
    "conj",
    "cop",
    "csubj",
    "csubj:pass",
    "dep",
    "det",
    "det:predet",
    "discourse",
    "dislocated",
    "expl",
    "fixed",
    "flat",
    "flat:foreign",
    "goeswith",
    "iobj",
    "list",
    "mark",
    "nmod",
    "nmod:npmod",
    "nmod:poss",
    "nmod:tmod",
    "nsubj",
    "nsubj:pass",
    "nummod",
    "obj",
    "obl",
    "obl:npmod",
    "obl:tmod",
    "orphan",
    "parataxis",
    "punct",
    "reparandum",
    "root",
    "vocative",
    "xcomp",
];

const AUX_NUM_PERS: [&str; 6] = ["Sing+1", "Sing+2", "Sing+3", "Plur+1", "Plur+2", "Plur+3"];
const AUX_TENSE: [&str; 2] = ["Pres", "Past"];
const AUX_MOOD: [&str; 3] = ["Ind", "Imp", "Sub"];
const AUX_FORM: [&str; 4] = ["Fin", "Inf", "Part", "Ger"];

impl FeatureRegistry {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let reg = FeatureRegistry { features };
        reg.check()?;
        Ok(reg)
    }

    /// The full English inventory: every named feature family instantiated
    /// with the UD English tag and relation sets.
    pub fn default_english() -> Self {
        use FeatureGroup::*;
        let mut f = Vec::new();
        let mut add = |name: String, group: FeatureGroup| f.push(FeatureSpec::new(name, group));

        add("sent_length".into(), RawText);
        add("char_per_tok".into(), RawText);
        add("ttr_form".into(), Vocabulary);
        add("ttr_lemma".into(), Vocabulary);
        for t in UD_UPOS {
            add(format!("upos_dist_{t}"), Pos);
        }
        for t in EN_XPOS {
            add(format!("xpos_dist_{t}"), Pos);
        }
        add("lexical_density".into(), Pos);
        for t in VERBAL_XPOS {
            add(format!("verb_xpos_dist_{t}"), VerbInflection);
        }
        for k in AUX_NUM_PERS {
            add(format!("aux_num_pers_dist_{k}"), VerbInflection);
        }
        for k in AUX_TENSE {
            add(format!("aux_tense_dist_{k}"), VerbInflection);
        }
        for k in AUX_MOOD {
            add(format!("aux_mood_dist_{k}"), VerbInflection);
        }
        for k in AUX_FORM {
            add(format!("aux_form_dist_{k}"), VerbInflection);
        }
        add("verbal_head_dist".into(), VerbPredicate);
        add("verbal_root_perc".into(), VerbPredicate);
        add("avg_verb_edges".into(), VerbPredicate);
        for k in 1..ARITY_TOP_BIN {
            add(format!("verbal_arity_{k}"), VerbPredicate);
        }
        add(format!("verbal_arity_{ARITY_TOP_BIN}+"), VerbPredicate);
        add("parse_depth".into(), TreeStructure);
        add("avg_links_len".into(), TreeStructure);
        add("max_links_len".into(), TreeStructure);
        add("avg_prep_chain_len".into(), TreeStructure);
        for k in 1..CHAIN_TOP_BIN {
            add(format!("prep_dist_{k}"), TreeStructure);
        }
        add(format!("prep_dist_{CHAIN_TOP_BIN}+"), TreeStructure);
        add("avg_token_per_clause".into(), TreeStructure);
        add("subj_pre".into(), Order);
        add("obj_post".into(), Order);
        for r in EN_DEPREL {
            add(format!("dep_dist_{r}"), SyntacticDep);
        }
        add("principal_prop_dist".into(), Subord);
        add("subordinate_prop_dist".into(), Subord);
        add("avg_subord_chain_len".into(), Subord);
        for k in 1..CHAIN_TOP_BIN {
            add(format!("subordinate_dist_{k}"), Subord);
        }
        add(format!("subordinate_dist_{CHAIN_TOP_BIN}+"), Subord);
        add("subordinate_post".into(), Subord);
        FeatureRegistry { features: f }
    }

    /// Keeps only the named features, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let features = names
            .iter()
            .map(|n| {
                self.get(n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("feature {n:?} not in registry")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureRegistry::new(features)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let features: Vec<FeatureSpec> = serde_json::from_str(text)?;
        Self::new(features)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.features).expect("registry serializes")
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for spec in &self.features {
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature {:?}", spec.name)));
            }
            ExtractorId::parse(&spec.extractor)?;
        }
        Ok(())
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn group_of(&self, name: &str) -> Option<FeatureGroup> {
        self.get(name).map(|f| f.group)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
