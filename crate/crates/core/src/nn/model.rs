//! Parser parameters and their on-disk format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ParamId, ParamStore, Tensor};
use super::init;
use super::lstm::LstmParams;
use crate::error::{Error, Result};
use crate::transition::{Action, System};
use crate::treebank::{EmbeddingTable, Interner, Sentence, Vocabulary, ROOT};

const MAGIC: &str = "dynparse-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub label_dim: usize,
    pub action_dim: usize,
    /// Dimension of token and composed-subtree representations.
    pub token_dim: usize,
    pub hidden_dim: usize,
    pub state_dim: usize,
    /// Pretrained embedding dimension, 0 when unused.
    pub pretrained_dim: usize,
    pub composition: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 32,
            pos_dim: 12,
            label_dim: 16,
            action_dim: 16,
            token_dim: 32,
            hidden_dim: 64,
            state_dim: 64,
            pretrained_dim: 0,
            composition: true,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and quick experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            word_dim: 8,
            pos_dim: 4,
            label_dim: 4,
            action_dim: 4,
            token_dim: 8,
            hidden_dim: 8,
            state_dim: 8,
            pretrained_dim: 0,
            composition: true,
        }
    }
}

/// Ids of every parameter tensor, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub words: ParamId,
    pub tags: ParamId,
    pub labels: ParamId,
    pub actions: ParamId,
    /// Fixed pretrained table and its learned projection.
    pub pretrained: Option<(ParamId, ParamId)>,
    pub token_weights: ParamId,
    pub token_bias: ParamId,
    pub compose_weights: ParamId,
    pub compose_bias: ParamId,
    pub stack: LstmParams,
    pub buffer: LstmParams,
    pub history: LstmParams,
    pub stack_guard: ParamId,
    pub buffer_guard: ParamId,
    pub history_guard: ParamId,
    pub state_weights: ParamId,
    pub state_bias: ParamId,
    /// Output action embeddings, one row per action.
    pub action_out: ParamId,
    /// Output action biases.
    pub action_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParserModel {
    pub config: ModelConfig,
    pub system: System,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub ids: ModelParams,
}

/// Word and tag ids of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    /// Index 0 is the root.
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ParserModel {
    pub fn new<R: Rng>(
        config: ModelConfig,
        system: System,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut config = config;
        config.pretrained_dim = pretrained.map_or(0, EmbeddingTable::dimension);
        let mut model = Self::skeleton(config, system, vocab, rng)?;
        if let (Some(table), Some((fixed, _))) = (pretrained, model.ids.pretrained) {
            let vocab = &model.vocab;
            let t = model.params.get_mut(fixed);
            for (id, form) in vocab.forms.iter().enumerate() {
                if let Some(v) = table.get(form).filter(|_| id > ROOT) {
                    t.row_mut(id).copy_from_slice(v);
                }
            }
        }
        Ok(model)
    }

    fn skeleton<R: Rng>(
        config: ModelConfig,
        system: System,
        vocab: Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        let c = &config;
        if vocab.num_labels() == 0 {
            return Err(Error::Config("the label inventory is empty".into()));
        }
        let num_actions = 1 + 2 * vocab.num_labels();
        let mut s = ParamStore::default();

        let words = s.add(
            "words",
            init::glorot(vocab.forms.len(), c.word_dim, rng),
            true,
        );
        let tags = s.add("tags", init::glorot(vocab.tags.len(), c.pos_dim, rng), true);
        let labels = s.add(
            "labels",
            init::glorot(vocab.num_labels(), c.label_dim, rng),
            true,
        );
        let actions = s.add(
            "actions",
            init::glorot(num_actions, c.action_dim, rng),
            true,
        );
        let pretrained = (c.pretrained_dim > 0).then(|| {
            let fixed = s.add(
                "pretrained",
                Tensor::zeros(vocab.forms.len(), c.pretrained_dim),
                false,
            );
            let proj = s.add(
                "pretrained.proj",
                init::glorot(c.token_dim, c.pretrained_dim, rng),
                true,
            );
            (fixed, proj)
        });
        let token_weights = s.add(
            "token.w",
            init::glorot(c.token_dim, c.word_dim + c.pos_dim, rng),
            true,
        );
        let token_bias = s.add("token.b", init::zeros(c.token_dim, 1), true);
        let compose_weights = s.add(
            "compose.w",
            init::glorot(c.token_dim, 2 * c.token_dim + c.label_dim, rng),
            true,
        );
        let compose_bias = s.add("compose.b", init::zeros(c.token_dim, 1), true);
        let stack = LstmParams::new(&mut s, "stack", c.token_dim, c.hidden_dim, rng);
        let buffer = LstmParams::new(&mut s, "buffer", c.token_dim, c.hidden_dim, rng);
        let history = LstmParams::new(&mut s, "history", c.action_dim, c.hidden_dim, rng);
        let stack_guard = s.add("stack.guard", init::glorot(c.token_dim, 1, rng), true);
        let buffer_guard = s.add("buffer.guard", init::glorot(c.token_dim, 1, rng), true);
        let history_guard = s.add("history.guard", init::glorot(c.action_dim, 1, rng), true);
        let state_weights = s.add(
            "state.w",
            init::glorot(c.state_dim, 3 * c.hidden_dim, rng),
            true,
        );
        let state_bias = s.add("state.b", init::zeros(c.state_dim, 1), true);
        let action_out = s.add("out.g", init::glorot(num_actions, c.state_dim, rng), true);
        let action_bias = s.add("out.q", init::zeros(num_actions, 1), true);

        Ok(ParserModel {
            config,
            system,
            vocab,
            params: s,
            ids: ModelParams {
                words,
                tags,
                labels,
                actions,
                pretrained,
                token_weights,
                token_bias,
                compose_weights,
                compose_bias,
                stack,
                buffer,
                history,
                stack_guard,
                buffer_guard,
                history_guard,
                state_weights,
                state_bias,
                action_out,
                action_bias,
            },
        })
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.num_labels()
    }

    pub fn num_actions(&self) -> usize {
        1 + 2 * self.num_labels()
    }

    pub fn encode_sentence(&self, sentence: &Sentence) -> EncodedSentence {
        let words = std::iter::once(ROOT)
            .chain(sentence.tokens.iter().map(|t| self.vocab.form_id(&t.form)))
            .collect();
        let tags = std::iter::once(ROOT)
            .chain(sentence.tokens.iter().map(|t| self.vocab.tag_id(&t.pos)))
            .collect();
        EncodedSentence { words, tags }
    }

    fn action_name(&self, action: Action) -> String {
        match action {
            Action::Shift => "SHIFT".to_owned(),
            Action::LeftArc(l) => format!("LEFT {}", self.vocab.labels.name(l)),
            Action::RightArc(l) => format!("RIGHT {}", self.vocab.labels.name(l)),
        }
    }

    /// Serialize as text: a versioned header, the configuration, the
    /// vocabularies, the action inventory in canonical order, then every
    /// parameter tensor in declaration order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        writeln!(out, "{} {}", MAGIC, FORMAT_VERSION).unwrap();
        writeln!(out, "system {}", self.system).unwrap();
        writeln!(
            out,
            "dims word={} pos={} label={} action={} token={} hidden={} state={} pretrained={} composition={}",
            c.word_dim,
            c.pos_dim,
            c.label_dim,
            c.action_dim,
            c.token_dim,
            c.hidden_dim,
            c.state_dim,
            c.pretrained_dim,
            c.composition as u8
        )
        .unwrap();
        writeln!(out, "forms {}", self.vocab.forms.len() - 2).unwrap();
        for (id, form) in self.vocab.forms.iter().enumerate().skip(2) {
            writeln!(out, "{}\t{}", self.vocab.form_counts[id], form).unwrap();
        }
        write_interner(&mut out, "tags", &self.vocab.tags, 2);
        write_interner(&mut out, "labels", &self.vocab.labels, 0);
        writeln!(out, "actions {}", self.num_actions()).unwrap();
        for action in Action::inventory(self.num_labels()) {
            writeln!(out, "{}", self.action_name(action)).unwrap();
        }
        writeln!(out, "tensors {}", self.params.len()).unwrap();
        for id in self.params.ids() {
            let t = self.params.get(id);
            writeln!(out, "tensor {} {} {}", self.params.name(id), t.rows, t.cols).unwrap();
            for r in 0..t.rows {
                let row: Vec<String> = t.row(r).iter().map(f64::to_string).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        let magic = lines.next()?;
        if magic != format!("{} {}", MAGIC, FORMAT_VERSION) {
            return Err(Error::Model(format!("unsupported header {:?}", magic)));
        }
        let system: System = lines.field("system")?.parse()?;
        let dims = lines.field("dims")?;
        let mut config = ModelConfig::default();
        for kv in dims.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Model(format!("bad dimension entry {:?}", kv)))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::Model(format!("bad dimension entry {:?}", kv)))?;
            match k {
                "word" => config.word_dim = v,
                "pos" => config.pos_dim = v,
                "label" => config.label_dim = v,
                "action" => config.action_dim = v,
                "token" => config.token_dim = v,
                "hidden" => config.hidden_dim = v,
                "state" => config.state_dim = v,
                "pretrained" => config.pretrained_dim = v,
                "composition" => config.composition = v != 0,
                _ => return Err(Error::Model(format!("unknown dimension {:?}", k))),
            }
        }

        let nforms = lines.count("forms")?;
        let mut forms = Vec::with_capacity(nforms);
        for _ in 0..nforms {
            let line = lines.next()?;
            let (count, form) = line
                .split_once('\t')
                .ok_or_else(|| Error::Model(format!("bad form entry {:?}", line)))?;
            let count = count
                .parse()
                .map_err(|_| Error::Model(format!("bad form count {:?}", count)))?;
            forms.push((form.to_owned(), count));
        }
        let ntags = lines.count("tags")?;
        let tags = (0..ntags)
            .map(|_| lines.next().map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let nlabels = lines.count("labels")?;
        let labels = (0..nlabels)
            .map(|_| lines.next().map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_parts(forms, tags, labels);

        // Parameter values are all overwritten below.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::skeleton(config, system, vocab, &mut rng)?;

        let nactions = lines.count("actions")?;
        if nactions != model.num_actions() {
            return Err(Error::Model(format!(
                "{} actions listed for {} labels",
                nactions,
                model.num_labels()
            )));
        }
        for action in Action::inventory(model.num_labels()) {
            let line = lines.next()?;
            if line != model.action_name(action) {
                return Err(Error::Model(format!(
                    "action inventory mismatch: expected {:?}, found {:?}",
                    model.action_name(action),
                    line
                )));
            }
        }

        let ntensors = lines.count("tensors")?;
        if ntensors != model.params.len() {
            return Err(Error::Model(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                ntensors
            )));
        }
        for id in model.params.ids() {
            let header = lines.field("tensor")?;
            let expect = {
                let t = model.params.get(id);
                format!("{} {} {}", model.params.name(id), t.rows, t.cols)
            };
            if header != expect {
                return Err(Error::Model(format!(
                    "tensor header {:?}, expected {:?}",
                    header, expect
                )));
            }
            let t = model.params.get_mut(id);
            for r in 0..t.rows {
                let line = lines.next()?;
                let row = line
                    .split(' ')
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Model(format!("bad values in tensor {}", expect)))?;
                if row.len() != t.cols {
                    return Err(Error::Model(format!("bad row length in tensor {}", expect)));
                }
                t.row_mut(r).copy_from_slice(&row);
            }
        }
        if lines.next()? != "end" {
            return Err(Error::Model("missing end marker".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn write_interner(out: &mut String, name: &str, items: &Interner, skip: usize) {
    writeln!(out, "{} {}", name, items.len() - skip).unwrap();
    for item in items.iter().skip(skip) {
        writeln!(out, "{}", item).unwrap();
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.inner
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| Error::Model("unexpected end of file".into()))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| Error::Model(format!("expected {:?}, found {:?}", key, line)))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| Error::Model(format!("bad count {:?} for {}", v, key)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{build_vocab, parse_embeddings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let corpus = vec![
            Sentence::from_parts(&[("the", "D", 2, "det"), ("dog", "N", 0, "root")]),
            Sentence::from_parts(&[("dogs", "N", 2, "nsubj"), ("bark", "V", 0, "root")]),
        ];
        build_vocab(&corpus, 1).unwrap()
    }

    #[test]
    fn every_action_has_output_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ParserModel::new(
            ModelConfig::tiny(),
            System::ArcHybrid,
            vocab(),
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(m.num_actions(), 7);
        assert_eq!(m.params.get(m.ids.action_out).rows, 7);
        assert_eq!(m.params.get(m.ids.action_bias).rows, 7);
        // Forget-gate bias starts at one.
        let b = m.params.get(m.ids.stack.bias);
        assert_eq!(&b.data[8..16], &[1.0; 8]);
        assert!(b.data[..8].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = vocab();
        let emb = parse_embeddings("dog 0.5 -1 2\nbark 1 1 1\n", &v).unwrap();
        let m = ParserModel::new(
            ModelConfig::tiny(),
            System::ArcStandard,
            v,
            Some(&emb),
            &mut rng,
        )
        .unwrap();
        assert_eq!(m.config.pretrained_dim, 3);
        let (fixed, _) = m.ids.pretrained.unwrap();
        let dog = m.vocab.form_id("dog");
        assert_eq!(m.params.get(fixed).row(dog), &[0.5, -1.0, 2.0]);
        assert!(!m.params.is_trainable(fixed));

        let text = m.to_text();
        let back = ParserModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn corrupted_files_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ParserModel::new(
            ModelConfig::tiny(),
            System::ArcHybrid,
            vocab(),
            None,
            &mut rng,
        )
        .unwrap();
        let text = m.to_text();
        assert!(ParserModel::from_text(&text.replacen("dynparse-model 1", "other 1", 1)).is_err());
        assert!(ParserModel::from_text(&text.replacen("RIGHT root", "RIGHT det", 1)).is_err());
        assert!(ParserModel::from_text(&text[..text.len() / 2]).is_err());
    }
}
