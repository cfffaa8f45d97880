//! Greedy decoding and attachment scores.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{action_distribution, Graph, ParserModel, ParserState};
use crate::par::{self, Execution};
use crate::transition::PredictedTree;
use crate::treebank::Sentence;

/// Parse by always taking the most probable valid action.
pub fn greedy_parse(model: &ParserModel, sentence: &Sentence) -> Result<PredictedTree> {
    let encoded = model.encode_sentence(sentence);
    let mut g = Graph::new(&model.params);
    let mut state = ParserState::new(&mut g, model, &encoded)?;
    while !state.is_terminal() {
        let p = state.encode(&mut g)?;
        let valid = state.valid_actions()?;
        let dist = action_distribution(&mut g, model, p, &valid)?;
        state.apply(&mut g, dist.argmax())?;
    }
    state.config().reconstruct_tree()
}

pub fn parse_all(
    model: &ParserModel,
    sentences: &[Sentence],
    exec: Execution,
) -> Result<Vec<PredictedTree>> {
    par::map(exec, sentences, |s| greedy_parse(model, s))
        .into_iter()
        .collect()
}

/// Copy of `sentence` carrying the predicted heads and labels.
pub fn annotate(model: &ParserModel, sentence: &Sentence, tree: &PredictedTree) -> Sentence {
    let mut out = sentence.clone();
    for t in &mut out.tokens {
        t.head = tree.heads[t.index];
        t.label = model.vocab.labels.name(tree.labels[t.index]).to_owned();
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum PunctPolicy {
    #[default]
    Include,
    /// Skip tokens whose POS tag is in the set.
    Exclude(BTreeSet<String>),
}

impl PunctPolicy {
    /// Exclusion policy from a comma-separated tag list.
    pub fn exclude_tags(tags: &str) -> Self {
        PunctPolicy::Exclude(
            tags.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect(),
        )
    }

    fn scores(&self, pos: &str) -> bool {
        match self {
            PunctPolicy::Include => true,
            PunctPolicy::Exclude(tags) => !tags.contains(pos),
        }
    }
}

/// Attachment scores in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub uas: f64,
    pub las: f64,
    pub tokens_scored: usize,
    pub sentences: usize,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{:>10}", "sentences", self.sentences)?;
        writeln!(f, "{:<12}{:>10}", "tokens", self.tokens_scored)?;
        writeln!(f, "{:<12}{:>10.2}", "UAS", self.uas)?;
        write!(f, "{:<12}{:>10.2}", "LAS", self.las)
    }
}

pub fn score(pred: &[Sentence], gold: &[Sentence], policy: &PunctPolicy) -> Result<ScoreReport> {
    if pred.len() != gold.len() {
        return Err(Error::Mismatch(format!(
            "{} predicted sentences, {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut total = 0;
    let mut heads = 0;
    let mut labeled = 0;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Mismatch(format!(
                "sentence {}: {} predicted tokens, {} gold tokens",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        for (pt, gt) in p.tokens.iter().zip(&g.tokens) {
            if !policy.scores(&gt.pos) {
                continue;
            }
            total += 1;
            if pt.head == gt.head {
                heads += 1;
                if pt.label == gt.label {
                    labeled += 1;
                }
            }
        }
    }
    let pct = |k: usize| {
        if total == 0 {
            0.0
        } else {
            100.0 * k as f64 / total as f64
        }
    };
    Ok(ScoreReport {
        uas: pct(heads),
        las: pct(labeled),
        tokens_scored: total,
        sentences: gold.len(),
    })
}

/// Parse `gold` with `model` and score the result against it.
pub fn evaluate(
    model: &ParserModel,
    gold: &[Sentence],
    policy: &PunctPolicy,
    exec: Execution,
) -> Result<ScoreReport> {
    let trees = parse_all(model, gold, exec)?;
    let pred: Vec<Sentence> = gold
        .iter()
        .zip(&trees)
        .map(|(s, t)| annotate(model, s, t))
        .collect();
    score(&pred, gold, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::transition::System;
    use crate::treebank::{build_vocab, is_projective};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gold() -> Sentence {
        Sentence::from_parts(&[
            ("a", "D", 2, "det"),
            ("b", "N", 0, "root"),
            ("c", "P", 2, "punct"),
        ])
    }

    #[test]
    fn perfect_and_partial_scores() {
        let g = vec![gold()];
        let r = score(&g, &g, &PunctPolicy::Include).unwrap();
        assert_eq!((r.uas, r.las), (100.0, 100.0));

        let mut wrong_head = gold();
        wrong_head.tokens[0].head = 3;
        let r = score(&[wrong_head], &g, &PunctPolicy::Include).unwrap();
        assert!((r.uas - 66.67).abs() < 0.01);
        assert!((r.las - 66.67).abs() < 0.01);

        let mut wrong_label = gold();
        wrong_label.tokens[1].label = "dep".into();
        let r = score(&[wrong_label], &g, &PunctPolicy::Include).unwrap();
        assert_eq!(r.uas, 100.0);
        assert!((r.las - 66.67).abs() < 0.01);
        assert!(r.las <= r.uas);
    }

    #[test]
    fn punctuation_exclusion() {
        let mut p = gold();
        p.tokens[2].head = 1;
        let r = score(&[p], &[gold()], &PunctPolicy::exclude_tags("P, X")).unwrap();
        assert_eq!(r.tokens_scored, 2);
        assert_eq!(r.uas, 100.0);
    }

    #[test]
    fn mismatches_are_errors() {
        assert!(score(&[], &[gold()], &PunctPolicy::Include).is_err());
        let short = Sentence::from_parts(&[("a", "D", 0, "root")]);
        match score(&[short], &[gold()], &PunctPolicy::Include) {
            Err(Error::Mismatch(m)) => assert!(m.contains("sentence 1")),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn permutation_invariant() {
        let a = gold();
        let mut b = gold();
        b.tokens[0].head = 3;
        let r1 = score(
            &[a.clone(), b.clone()],
            &[gold(), gold()],
            &PunctPolicy::Include,
        )
        .unwrap();
        let r2 = score(&[b, a], &[gold(), gold()], &PunctPolicy::Include).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn untrained_model_gives_complete_deterministic_trees() {
        let corpus = vec![gold(), Sentence::from_parts(&[("b", "N", 0, "root")])];
        let vocab = build_vocab(&corpus, 1).unwrap();
        for system in [System::ArcHybrid, System::ArcStandard] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let m = ParserModel::new(ModelConfig::tiny(), system, vocab.clone(), None, &mut rng)
                .unwrap();
            let trees = parse_all(&m, &corpus, Execution::Parallel).unwrap();
            let again = parse_all(&m, &corpus, Execution::Sequential).unwrap();
            assert_eq!(trees, again);
            for (t, s) in trees.iter().zip(&corpus) {
                assert_eq!(t.len(), s.len());
                let annotated = annotate(&m, s, t);
                assert!(is_projective(&annotated));
            }
        }
    }
}
