//! CoNLL-X treebank reading and writing, projectivity, vocabularies and
//! pretrained embedding files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Id of the unknown-word entry in form and tag vocabularies.
pub const UNK: usize = 0;
/// Id of the artificial root entry in form and tag vocabularies.
pub const ROOT: usize = 1;

const UNK_STR: &str = "<unk>";
const ROOT_STR: &str = "<root>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub pos: String,
    /// Head position, 0 is the artificial root.
    pub head: usize,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Build a sentence from `(form, pos, head, label)` tuples.
    pub fn from_parts<S: AsRef<str>>(parts: &[(S, S, usize, S)]) -> Self {
        let tokens = parts
            .iter()
            .enumerate()
            .map(|(i, (form, pos, head, label))| Token {
                index: i + 1,
                form: form.as_ref().to_owned(),
                pos: pos.as_ref().to_owned(),
                head: *head,
                label: label.as_ref().to_owned(),
            })
            .collect();
        Sentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Heads indexed by token position; slot 0 (the root) holds 0.
    pub fn heads(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.tokens.iter().map(|t| t.head))
            .collect()
    }
}

/// Parse CoNLL-X (or CoNLL-U) text into sentences with gold trees.
pub fn parse_conll(text: &str) -> Result<Vec<Sentence>> {
    read_blocks(text, true)
}

/// Parse CoNLL text whose HEAD/DEPREL columns may be unannotated (`_`).
///
/// Unannotated heads are read as 0 and the tree check is skipped for
/// sentences containing them.
pub fn parse_conll_unannotated(text: &str) -> Result<Vec<Sentence>> {
    read_blocks(text, false)
}

fn read_blocks(text: &str, require_heads: bool) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut block_start = 0;
    let mut annotated = true;

    let mut finish = |tokens: &mut Vec<Token>, start: usize, annotated: bool| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = Sentence {
            tokens: std::mem::take(tokens),
        };
        if annotated {
            check_tree(&sentence.heads()).map_err(|message| Error::Tree {
                sentence: sentences.len() + 1,
                line: start,
                message,
            })?;
        }
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut tokens, block_start, annotated)?;
            annotated = true;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if tokens.is_empty() {
            block_start = lineno;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(Error::Conll {
                line: lineno,
                message: format!(
                    "expected at least 8 tab-separated columns, found {}",
                    cols.len()
                ),
            });
        }
        // Multiword ranges and empty nodes.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0].parse().map_err(|_| Error::Conll {
            line: lineno,
            message: format!("invalid token id {:?}", cols[0]),
        })?;
        if index != tokens.len() + 1 {
            return Err(Error::Conll {
                line: lineno,
                message: format!("expected token id {}, found {}", tokens.len() + 1, index),
            });
        }
        let pos = if cols[3] == "_" { cols[4] } else { cols[3] };
        let head = match cols[6].parse::<usize>() {
            Ok(head) => head,
            Err(_) if !require_heads && cols[6] == "_" => {
                annotated = false;
                0
            }
            Err(_) => {
                return Err(Error::Conll {
                    line: lineno,
                    message: format!("invalid HEAD {:?}", cols[6]),
                })
            }
        };
        tokens.push(Token {
            index,
            form: cols[1].to_owned(),
            pos: pos.to_owned(),
            head,
            label: cols[7].to_owned(),
        });
    }
    finish(&mut tokens, block_start, annotated)?;

    Ok(sentences)
}

/// Check that `heads[1..]` describes a tree rooted at 0.
fn check_tree(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len() - 1;
    for (d, &h) in heads.iter().enumerate().skip(1) {
        if h > n {
            return Err(format!("token {} has head {} outside 0..={}", d, h, n));
        }
        if h == d {
            return Err(format!("token {} is its own head", d));
        }
    }
    // Every token must reach the root within n steps.
    for d in 1..=n {
        let mut cur = d;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur];
            steps += 1;
            if steps > n {
                return Err(format!("cycle through token {}", d));
            }
        }
    }
    Ok(())
}

/// Serialize sentences as CoNLL-X. Columns that are not tracked are `_`.
pub fn emit_conll(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for t in &sentence.tokens {
            writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                t.index, t.form, t.pos, t.head, t.label
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}

/// Whether every arc `h -> d` dominates all tokens strictly between `h` and `d`.
pub fn is_projective(sentence: &Sentence) -> bool {
    is_projective_heads(&sentence.heads())
}

/// Projectivity of a head vector (`heads[0]` is ignored, 0 is the root).
pub fn is_projective_heads(heads: &[usize]) -> bool {
    let n = heads.len() - 1;
    for d in 1..=n {
        let h = heads[d];
        let (lo, hi) = if h < d { (h, d) } else { (d, h) };
        for k in lo + 1..hi {
            let mut cur = k;
            while cur != h && cur != 0 {
                cur = heads[cur];
            }
            if cur != h {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn push(&mut self, item: &str) -> usize {
        if let Some(&id) = self.index.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_owned());
        self.index.insert(item.to_owned(), id);
        id
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

/// Form, POS and label inventories.
///
/// Form and POS ids 0 and 1 are reserved for [`UNK`] and [`ROOT`]. Labels
/// have no reserved entries; their order fixes the action inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub forms: Interner,
    pub tags: Interner,
    pub labels: Interner,
    /// Corpus frequency per form id (0 for the reserved entries).
    pub form_counts: Vec<usize>,
}

impl Vocabulary {
    pub fn from_parts(
        forms: impl IntoIterator<Item = (String, usize)>,
        tags: impl IntoIterator<Item = String>,
        labels: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut vocab = Vocabulary {
            forms: Interner::default(),
            tags: Interner::default(),
            labels: Interner::default(),
            form_counts: vec![0, 0],
        };
        vocab.forms.push(UNK_STR);
        vocab.forms.push(ROOT_STR);
        vocab.tags.push(UNK_STR);
        vocab.tags.push(ROOT_STR);
        for (form, count) in forms {
            if vocab.forms.get(&form).is_none() {
                vocab.forms.push(&form);
                vocab.form_counts.push(count);
            }
        }
        for tag in tags {
            vocab.tags.push(&tag);
        }
        for label in labels {
            vocab.labels.push(&label);
        }
        vocab
    }

    pub fn form_id(&self, form: &str) -> usize {
        self.forms.get(form).filter(|&id| id > ROOT).unwrap_or(UNK)
    }

    pub fn tag_id(&self, tag: &str) -> usize {
        self.tags.get(tag).filter(|&id| id > ROOT).unwrap_or(UNK)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.get(label)
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }
}

/// Build vocabularies; forms seen fewer than `min_count` times map to UNK.
pub fn build_vocab(corpus: &[Sentence], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if corpus.iter().all(Sentence::is_empty) {
        return Err(Error::EmptyCorpus);
    }

    let mut form_freq: HashMap<&str, usize> = HashMap::new();
    let mut tags = Vec::new();
    let mut labels = Vec::new();
    for t in corpus.iter().flat_map(|s| &s.tokens) {
        *form_freq.entry(&t.form).or_default() += 1;
        tags.push(t.pos.as_str());
        labels.push(t.label.as_str());
    }
    tags.sort_unstable();
    tags.dedup();
    labels.sort_unstable();
    labels.dedup();

    let mut forms: Vec<(&str, usize)> = form_freq
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    forms.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    Ok(Vocabulary::from_parts(
        forms.into_iter().map(|(f, c)| (f.to_owned(), c)),
        tags.into_iter().map(str::to_owned),
        labels.into_iter().map(str::to_owned),
    ))
}

/// Pretrained word vectors restricted to a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of vocabulary forms that received a vector.
    pub fn coverage(&self) -> usize {
        self.vectors.len()
    }

    pub fn get(&self, form: &str) -> Option<&[f64]> {
        self.vectors.get(form).map(Vec::as_slice)
    }
}

/// Read whitespace-separated `form v1 .. vd` lines, keeping forms in `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab)
}

pub fn parse_embeddings(text: &str, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut dimension = None;
    let mut vectors = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(form) = fields.next() else { continue };
        let values = fields
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Conll {
                    line: lineno + 1,
                    message: format!("invalid embedding value {:?}", v),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = *dimension.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(Error::EmbeddingDimension {
                line: lineno + 1,
                expected,
                found: values.len(),
            });
        }
        if vocab.forms.get(form).is_some_and(|id| id > ROOT) {
            vectors.insert(form.to_owned(), values);
        }
    }
    let dimension = dimension.ok_or_else(|| Error::Config("embedding file is empty".into()))?;
    log::info!(
        "pretrained embeddings cover {} of {} forms",
        vectors.len(),
        vocab.forms.len() - 2
    );
    Ok(EmbeddingTable { dimension, vectors })
}

/// Split a corpus into projective sentences, logging and counting the rest.
pub fn filter_projective(corpus: Vec<Sentence>) -> (Vec<Sentence>, usize) {
    let before = corpus.len();
    let kept: Vec<Sentence> = corpus
        .into_iter()
        .enumerate()
        .filter(|(i, s)| {
            let ok = is_projective(s);
            if !ok {
                log::warn!("skipping non-projective sentence {}", i + 1);
            }
            ok
        })
        .map(|(_, s)| s)
        .collect();
    let skipped = before - kept.len();
    if skipped > 0 {
        log::warn!("skipped {} non-projective sentences of {}", skipped, before);
    }
    (kept, skipped)
}
