//! Reading and writing CoNLL-U treebanks.
//!
//! Only the basic dependency layer is kept: multiword-token ranges (`3-4`)
//! and empty nodes (`5.1`) are dropped, since basic heads never point to
//! them. Every sentence is validated as a single-rooted tree before it is
//! admitted into a [`Treebank`].

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// One syntactic word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: Option<String>,
    /// Morphological features. Multi-valued attributes keep their raw value
    /// (`Case=Acc,Dat` maps `Case` to `"Acc,Dat"`).
    pub feats: BTreeMap<String, String>,
    /// Head position, 0 for the root.
    pub head: usize,
    pub deprel: String,
    pub deps: Option<String>,
    pub misc: Option<String>,
}

impl Token {
    /// The relation without its subtype (`nmod:poss` -> `nmod`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or(&self.deprel)
    }

    pub fn feat(&self, name: &str) -> Option<&str> {
        self.feats.get(name).map(String::as_str)
    }

    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    pub sent_id: String,
    pub tokens: Vec<Token>,
    pub text: Option<String>,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token by 1-based id.
    pub fn token(&self, id: usize) -> Option<&Token> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn root(&self) -> Option<&Token> {
        self.tokens.iter().find(|t| t.head == 0)
    }

    /// Tokens whose head is `token_id`, in surface order.
    pub fn dependents(&self, token_id: usize) -> Result<Vec<&Token>> {
        self.check_id(token_id)?;
        Ok(self.tokens.iter().filter(|t| t.head == token_id).collect())
    }

    /// Number of head links from `token_id` up to the root.
    pub fn depth_of(&self, token_id: usize) -> Result<usize> {
        self.check_id(token_id)?;
        let mut depth = 0;
        let mut cur = token_id;
        loop {
            let head = self.tokens[cur - 1].head;
            if head == 0 {
                return Ok(depth);
            }
            depth += 1;
            if depth > self.tokens.len() {
                return Err(Error::Validation {
                    sent_id: self.sent_id.clone(),
                    message: "cycle in head links".into(),
                });
            }
            cur = head;
        }
    }

    /// Depth of every token, indexed by `id - 1`. Assumes a validated tree.
    pub fn depths(&self) -> Vec<usize> {
        let n = self.tokens.len();
        let mut depth: Vec<Option<usize>> = vec![None; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            let base = loop {
                if let Some(d) = depth[cur] {
                    break d;
                }
                let head = self.tokens[cur].head;
                if head == 0 {
                    depth[cur] = Some(0);
                    break 0;
                }
                path.push(cur);
                cur = head - 1;
            };
            for (k, &idx) in path.iter().rev().enumerate() {
                depth[idx] = Some(base + k + 1);
            }
        }
        depth.into_iter().map(|d| d.unwrap_or(0)).collect()
    }

    fn check_id(&self, token_id: usize) -> Result<()> {
        if token_id == 0 || token_id > self.tokens.len() {
            return Err(Error::usage(format!(
                "token id {token_id} out of range 1..={} in sentence {}",
                self.tokens.len(),
                self.sent_id
            )));
        }
        Ok(())
    }

    /// Checks the tree invariants: contiguous ids, a single root carrying
    /// the `root` relation, heads in range, no cycles.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            sent_id: self.sent_id.clone(),
            message,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(fail("sentence has no tokens".into()));
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.id != i + 1 {
                return Err(fail(format!(
                    "token ids are not contiguous: expected {}, found {}",
                    i + 1,
                    t.id
                )));
            }
            if t.head > n {
                return Err(fail(format!("token {} has head {} beyond sentence", t.id, t.head)));
            }
            if t.head == t.id {
                return Err(fail(format!("token {} is its own head", t.id)));
            }
            if (t.head == 0) != (t.deprel == "root") {
                return Err(fail(format!(
                    "token {} has head {} with relation {:?}; `root` must coincide with head 0",
                    t.id, t.head, t.deprel
                )));
            }
        }
        let roots = self.tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(fail(format!("expected exactly one root, found {roots}")));
        }
        // Every token must reach the root within n steps.
        for t in &self.tokens {
            let mut cur = t.id;
            let mut steps = 0;
            while cur != 0 {
                if steps > n {
                    return Err(fail(format!("cycle through token {}", t.id)));
                }
                cur = self.tokens[cur - 1].head;
                steps += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Treebank {
    pub sentences: Vec<ParsedSentence>,
    pub source_files: Vec<String>,
}

impl Treebank {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Appends another treebank. Duplicate sentence ids are an error.
    pub fn extend(&mut self, other: Treebank) -> Result<()> {
        let mut seen: HashSet<String> = self.sentences.iter().map(|s| s.sent_id.clone()).collect();
        for s in &other.sentences {
            if !seen.insert(s.sent_id.clone()) {
                return Err(Error::Validation {
                    sent_id: s.sent_id.clone(),
                    message: "duplicate sentence id across treebank files".into(),
                });
            }
        }
        self.sentences.extend(other.sentences);
        self.source_files.extend(other.source_files);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Fail on the first invalid sentence instead of skipping it.
    pub strict: bool,
}

/// Parses a CoNLL-U stream with default (lenient) options.
pub fn parse_conllu<R: Read>(input: R, source_name: &str) -> Result<Treebank> {
    parse_conllu_with(input, source_name, ParseOptions::default())
}

pub fn parse_conllu_with<R: Read>(mut input: R, source_name: &str, opts: ParseOptions) -> Result<Treebank> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let text = match std::str::from_utf8(&bytes) {
        Ok(t) => t,
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
            return Err(Error::Encoding {
                source_name: source_name.to_string(),
                line,
            });
        }
    };

    let mut builder = Builder {
        source_name,
        opts,
        sentences: Vec::new(),
        seen_ids: HashSet::new(),
        ordinal: 0,
    };
    let mut pending = Pending::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !pending.is_empty() {
                builder.finish(std::mem::take(&mut pending))?;
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if pending.has_tokens() {
                return Err(parse_err(source_name, line_no, "comment line inside a sentence"));
            }
            let comment = comment.trim();
            if let Some(v) = meta_value(comment, "sent_id") {
                pending.sent_id = Some(v.to_string());
            } else if let Some(v) = meta_value(comment, "text") {
                pending.text = Some(v.to_string());
            }
            pending.start_line.get_or_insert(line_no);
            continue;
        }
        pending.start_line.get_or_insert(line_no);
        if let Some(tok) = parse_token_line(line, source_name, line_no)? {
            pending.tokens.push(tok);
        }
        pending.has_any_line = true;
    }
    if !pending.is_empty() {
        builder.finish(pending)?;
    }
    Ok(Treebank {
        sentences: builder.sentences,
        source_files: vec![source_name.to_string()],
    })
}

/// Reads and concatenates several CoNLL-U files.
pub fn read_treebank_files<P: AsRef<Path>>(paths: &[P], opts: ParseOptions) -> Result<Treebank> {
    let mut tb = Treebank::default();
    for p in paths {
        let p = p.as_ref();
        let f = File::open(p).map_err(|e| Error::io_at(p, e))?;
        let part = parse_conllu_with(BufReader::new(f), &p.display().to_string(), opts)?;
        tb.extend(part)?;
    }
    Ok(tb)
}

/// Serializes a treebank back to CoNLL-U.
pub fn write_conllu(tb: &Treebank) -> String {
    let mut out = String::new();
    for s in &tb.sentences {
        let _ = writeln!(out, "# sent_id = {}", s.sent_id);
        if let Some(text) = &s.text {
            let _ = writeln!(out, "# text = {text}");
        }
        for t in &s.tokens {
            let feats = if t.feats.is_empty() {
                "_".to_string()
            } else {
                t.feats
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join("|")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id,
                t.form,
                t.lemma,
                t.upos,
                t.xpos.as_deref().unwrap_or("_"),
                feats,
                t.head,
                t.deprel,
                t.deps.as_deref().unwrap_or("_"),
                t.misc.as_deref().unwrap_or("_"),
            );
        }
        out.push('\n');
    }
    out
}

#[derive(Default)]
struct Pending {
    sent_id: Option<String>,
    text: Option<String>,
    tokens: Vec<Token>,
    start_line: Option<usize>,
    has_any_line: bool,
}

impl Pending {
    fn is_empty(&self) -> bool {
        !self.has_any_line && self.start_line.is_none()
    }

    fn has_tokens(&self) -> bool {
        self.has_any_line
    }
}

struct Builder<'a> {
    source_name: &'a str,
    opts: ParseOptions,
    sentences: Vec<ParsedSentence>,
    seen_ids: HashSet<String>,
    ordinal: usize,
}

impl Builder<'_> {
    fn finish(&mut self, p: Pending) -> Result<()> {
        if !p.has_any_line {
            // Comment block without tokens (e.g. document metadata).
            return Ok(());
        }
        self.ordinal += 1;
        let sent_id = p
            .sent_id
            .unwrap_or_else(|| format!("{}:{}", self.source_name, self.ordinal));
        let sentence = ParsedSentence {
            sent_id,
            tokens: p.tokens,
            text: p.text,
        };
        let check = sentence.validate().and_then(|_| {
            if self.seen_ids.contains(&sentence.sent_id) {
                Err(Error::Validation {
                    sent_id: sentence.sent_id.clone(),
                    message: "duplicate sentence id".into(),
                })
            } else {
                Ok(())
            }
        });
        match check {
            Ok(()) => {
                self.seen_ids.insert(sentence.sent_id.clone());
                self.sentences.push(sentence);
                Ok(())
            }
            Err(e) if !self.opts.strict => {
                warn!(
                    "{}: skipping sentence starting at line {}: {e}",
                    self.source_name,
                    p.start_line.unwrap_or(0)
                );
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}

fn meta_value<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    let rest = comment.strip_prefix(key)?;
    let rest = rest.trim_start();
    let rest = rest.strip_prefix('=')?;
    Some(rest.trim())
}

fn parse_err(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn opt_field(s: &str) -> Option<String> {
    (s != "_").then(|| s.to_string())
}

/// Returns `None` for multiword ranges and empty nodes.
fn parse_token_line(line: &str, source_name: &str, line_no: usize) -> Result<Option<Token>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(parse_err(
            source_name,
            line_no,
            format!("expected 10 tab-separated columns, found {}", cols.len()),
        ));
    }
    let id_col = cols[0];
    if id_col.contains('-') || id_col.contains('.') {
        return Ok(None);
    }
    let id: usize = id_col
        .parse()
        .map_err(|_| parse_err(source_name, line_no, format!("invalid token id {id_col:?}")))?;
    if id == 0 {
        return Err(parse_err(source_name, line_no, "token id must be >= 1"));
    }
    let head: usize = cols[6]
        .parse()
        .map_err(|_| parse_err(source_name, line_no, format!("invalid head {:?}", cols[6])))?;
    let mut feats = BTreeMap::new();
    if cols[5] != "_" {
        for pair in cols[5].split('|') {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| parse_err(source_name, line_no, format!("malformed feature {pair:?}")))?;
            feats.insert(k.to_string(), v.to_string());
        }
    }
    Ok(Some(Token {
        id,
        form: cols[1].to_string(),
        lemma: cols[2].to_string(),
        upos: cols[3].to_string(),
        xpos: opt_field(cols[4]),
        feats,
        head,
        deprel: cols[7].to_string(),
        deps: opt_field(cols[8]),
        misc: opt_field(cols[9]),
    }))
}
