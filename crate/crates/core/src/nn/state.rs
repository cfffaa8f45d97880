//! Incremental parser-state encoding and the action distribution.

use super::graph::{Graph, Value};
use super::lstm::StackLstm;
use super::model::{EncodedSentence, ParserModel};
use crate::error::{Error, Result};
use crate::transition::{Action, ActionSet, Configuration, System};

/// Representation of token `i` (0 is the root) before any composition.
pub fn token_representation(
    g: &mut Graph,
    model: &ParserModel,
    sentence: &EncodedSentence,
    i: usize,
) -> Result<Value> {
    let ids = &model.ids;
    let w = g.lookup(ids.words, sentence.words[i]);
    let t = g.lookup(ids.tags, sentence.tags[i]);
    let x = g.concat(&[w, t])?;
    let weights = g.param(ids.token_weights);
    let bias = g.param(ids.token_bias);
    let mut terms = vec![(weights, x)];
    if let Some((fixed, proj)) = ids.pretrained {
        let e = g.lookup(fixed, sentence.words[i]);
        let p = g.param(proj);
        terms.push((p, e));
    }
    let pre = g.affine(bias, &terms)?;
    Ok(g.tanh(pre))
}

/// Representation of a head after attaching a dependent with `label`:
/// `tanh(C [head; dependent; label] + c)`.
pub fn compose(
    g: &mut Graph,
    model: &ParserModel,
    head: Value,
    dependent: Value,
    label: usize,
) -> Result<Value> {
    if !model.config.composition {
        return Ok(head);
    }
    let l = g.lookup(model.ids.labels, label);
    let x = g.concat(&[head, dependent, l])?;
    let w = g.param(model.ids.compose_weights);
    let b = g.param(model.ids.compose_bias);
    let pre = g.affine(b, &[(w, x)])?;
    Ok(g.tanh(pre))
}

/// `p_t = tanh(W [stack; buffer; history] + d)` from the three summaries.
fn state_vector(
    g: &mut Graph,
    model: &ParserModel,
    stack: Value,
    buffer: Value,
    history: Value,
) -> Result<Value> {
    let x = g.concat(&[stack, buffer, history])?;
    let w = g.param(model.ids.state_weights);
    let b = g.param(model.ids.state_bias);
    let pre = g.affine(b, &[(w, x)])?;
    Ok(g.tanh(pre))
}

/// A configuration together with its stack-LSTM encodings, updated in
/// place as actions are applied.
pub struct ParserState<'m> {
    model: &'m ParserModel,
    config: Configuration,
    stack: StackLstm,
    buffer: StackLstm,
    history: StackLstm,
    /// Current representations of stack elements, bottom first.
    stack_reps: Vec<Value>,
    /// Current representations of buffer elements, front last.
    buffer_reps: Vec<Value>,
}

impl<'m> ParserState<'m> {
    pub fn new(g: &mut Graph, model: &'m ParserModel, sentence: &EncodedSentence) -> Result<Self> {
        let n = sentence.len();
        let config = Configuration::initial(n, model.system)?;
        let tokens = (0..=n)
            .map(|i| token_representation(g, model, sentence, i))
            .collect::<Result<Vec<_>>>()?;

        let ids = &model.ids;
        let guard = g.param(ids.stack_guard);
        let mut stack = StackLstm::new(g, ids.stack, guard)?;
        let guard = g.param(ids.buffer_guard);
        let mut buffer = StackLstm::new(g, ids.buffer, guard)?;
        let guard = g.param(ids.history_guard);
        let history = StackLstm::new(g, ids.history, guard)?;

        // The buffer is built right to left so its top is the next token.
        let buffer_reps: Vec<Value> = config.buffer().iter().rev().map(|&i| tokens[i]).collect();
        for &rep in &buffer_reps {
            buffer = buffer.push(g, rep)?;
        }
        let mut stack_reps = Vec::with_capacity(n + 1);
        for &i in config.stack() {
            stack = stack.push(g, tokens[i])?;
            stack_reps.push(tokens[i]);
        }

        Ok(ParserState {
            model,
            config,
            stack,
            buffer,
            history,
            stack_reps,
            buffer_reps,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn is_terminal(&self) -> bool {
        self.config.is_terminal()
    }

    /// The state vector `p_t`.
    pub fn encode(&self, g: &mut Graph) -> Result<Value> {
        state_vector(
            g,
            self.model,
            self.stack.summary(),
            self.buffer.summary(),
            self.history.summary(),
        )
    }

    pub fn valid_actions(&self) -> Result<ActionSet> {
        self.config.valid_actions(self.model.num_labels())
    }

    fn pop_stack(&mut self) -> Result<Value> {
        self.stack = self.stack.pop()?;
        self.stack_reps.pop().ok_or(Error::EmptyStack)
    }

    fn pop_buffer(&mut self) -> Result<Value> {
        self.buffer = self.buffer.pop()?;
        self.buffer_reps.pop().ok_or(Error::EmptyStack)
    }

    fn push_stack(&mut self, g: &mut Graph, rep: Value) -> Result<()> {
        self.stack = self.stack.push(g, rep)?;
        self.stack_reps.push(rep);
        Ok(())
    }

    fn push_buffer(&mut self, g: &mut Graph, rep: Value) -> Result<()> {
        self.buffer = self.buffer.push(g, rep)?;
        self.buffer_reps.push(rep);
        Ok(())
    }

    pub fn apply(&mut self, g: &mut Graph, action: Action) -> Result<()> {
        self.config.apply_mut(action)?;
        let model = self.model;
        match (model.system, action) {
            (_, Action::Shift) => {
                let rep = self.pop_buffer()?;
                self.push_stack(g, rep)?;
            }
            (System::ArcHybrid, Action::LeftArc(l)) => {
                let dep = self.pop_stack()?;
                let head = self.pop_buffer()?;
                let rep = compose(g, model, head, dep, l)?;
                self.push_buffer(g, rep)?;
            }
            (System::ArcStandard, Action::LeftArc(l)) => {
                let head = self.pop_stack()?;
                let dep = self.pop_stack()?;
                let rep = compose(g, model, head, dep, l)?;
                self.push_stack(g, rep)?;
            }
            (_, Action::RightArc(l)) => {
                let dep = self.pop_stack()?;
                let head = self.pop_stack()?;
                let rep = compose(g, model, head, dep, l)?;
                self.push_stack(g, rep)?;
            }
        }
        let a = g.lookup(model.ids.actions, action.index(model.num_labels()));
        self.history = self.history.push(g, a)?;
        Ok(())
    }
}

/// Encode `config` without incremental updates: replay its arcs in
/// creation order to rebuild subtree representations, then read the stack,
/// buffer and history into fresh stack LSTMs.
pub fn encode_from_scratch(
    g: &mut Graph,
    model: &ParserModel,
    sentence: &EncodedSentence,
    config: &Configuration,
) -> Result<Value> {
    let n = sentence.len();
    let mut reps = (0..=n)
        .map(|i| token_representation(g, model, sentence, i))
        .collect::<Result<Vec<_>>>()?;
    for arc in config.arcs() {
        reps[arc.head] = compose(g, model, reps[arc.head], reps[arc.dependent], arc.label)?;
    }

    let ids = &model.ids;
    let guard = g.param(ids.stack_guard);
    let mut stack = StackLstm::new(g, ids.stack, guard)?;
    for &i in config.stack() {
        stack = stack.push(g, reps[i])?;
    }
    let guard = g.param(ids.buffer_guard);
    let mut buffer = StackLstm::new(g, ids.buffer, guard)?;
    for &i in config.buffer().iter().rev() {
        buffer = buffer.push(g, reps[i])?;
    }
    let guard = g.param(ids.history_guard);
    let mut history = StackLstm::new(g, ids.history, guard)?;
    for &a in config.history() {
        let e = g.lookup(ids.actions, a.index(model.num_labels()));
        history = history.push(g, e)?;
    }
    state_vector(
        g,
        model,
        stack.summary(),
        buffer.summary(),
        history.summary(),
    )
}

/// Softmax over the valid actions only.
pub struct ActionDistribution {
    pub actions: ActionSet,
    /// Log-probabilities, one per element of `actions`.
    pub log_probs: Value,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn prob(&self, action: Action) -> f64 {
        self.actions.position(action).map_or(0.0, |i| self.probs[i])
    }

    /// Most probable action; ties go to the earliest in canonical order.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        self.actions.as_slice()[best]
    }
}

/// Log-softmax of `scores` (indexed by global action index) restricted to `valid`.
pub fn masked_log_softmax(
    g: &mut Graph,
    scores: Value,
    valid: &ActionSet,
    num_labels: usize,
) -> Result<ActionDistribution> {
    if valid.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let indices: Vec<usize> = valid.iter().map(|a| a.index(num_labels)).collect();
    let picked = g.pick(scores, &indices)?;
    let log_probs = g.log_softmax(picked)?;
    let probs = g.forward(log_probs)?.iter().map(|x| x.exp()).collect();
    Ok(ActionDistribution {
        actions: valid.clone(),
        log_probs,
        probs,
    })
}

/// `p(z | p_t) ∝ exp(g_z · p_t + q_z)` over the valid actions.
pub fn action_distribution(
    g: &mut Graph,
    model: &ParserModel,
    state_vec: Value,
    valid: &ActionSet,
) -> Result<ActionDistribution> {
    if valid.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let out = g.param(model.ids.action_out);
    let bias = g.param(model.ids.action_bias);
    let scores = g.affine(bias, &[(out, state_vec)])?;
    masked_log_softmax(g, scores, valid, model.num_labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::ParamStore;
    use crate::nn::model::ModelConfig;
    use crate::treebank::{build_vocab, Sentence};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(system: System, seed: u64) -> (ParserModel, Sentence) {
        let s = Sentence::from_parts(&[
            ("the", "D", 2, "det"),
            ("dog", "N", 3, "nsubj"),
            ("barks", "V", 0, "root"),
            ("loudly", "R", 3, "advmod"),
            ("today", "N", 3, "obl"),
        ]);
        let vocab = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ParserModel::new(ModelConfig::tiny(), system, vocab, None, &mut rng).unwrap();
        (m, s)
    }

    #[test]
    fn distribution_examples() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let valid = ActionSet::new(vec![Action::Shift, Action::LeftArc(0), Action::RightArc(0)]);
        let scores = g.input(vec![0.7, 0.7, 0.7]);
        let d = masked_log_softmax(&mut g, scores, &valid, 1).unwrap();
        for p in &d.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let valid = ActionSet::new(vec![Action::Shift, Action::RightArc(0)]);
        let scores = g.input(vec![3f64.ln(), 100.0, 0.0]);
        let d = masked_log_softmax(&mut g, scores, &valid, 1).unwrap();
        assert!((d.probs[0] - 0.75).abs() < 1e-12);
        assert!((d.probs[1] - 0.25).abs() < 1e-12);
        assert_eq!(d.prob(Action::LeftArc(0)), 0.0);
        assert_eq!(d.argmax(), Action::Shift);

        assert!(matches!(
            masked_log_softmax(&mut g, scores, &ActionSet::default(), 1),
            Err(Error::EmptyActionSet)
        ));
    }

    #[test]
    fn argmax_ties_take_canonical_first() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let valid = ActionSet::new(vec![Action::Shift, Action::LeftArc(0), Action::RightArc(0)]);
        let scores = g.input(vec![0.0, 1.0, 1.0]);
        let d = masked_log_softmax(&mut g, scores, &valid, 1).unwrap();
        assert_eq!(d.argmax(), Action::LeftArc(0));
    }

    #[test]
    fn compose_shapes_and_zero_weights() {
        let (mut m, _) = model(System::ArcHybrid, 1);
        m.params.get_mut(m.ids.compose_weights).data.fill(0.0);
        let mut g = Graph::new(&m.params);
        let h = g.input(vec![0.5; 8]);
        let d = g.input(vec![-0.5; 8]);
        let c = compose(&mut g, &m, h, d, 1).unwrap();
        assert_eq!(g.dim(c), 8);
        assert!(g.value(c).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn compose_by_hand() {
        let (mut m, _) = model(System::ArcHybrid, 1);
        m.config.token_dim = 2;
        m.config.label_dim = 1;
        let w = m.ids.compose_weights;
        *m.params.get_mut(w) = crate::nn::graph::Tensor {
            rows: 2,
            cols: 5,
            data: vec![0.1, 0.2, 0.3, 0.4, 0.5, -0.1, -0.2, 0.3, 0.0, 1.0],
        };
        *m.params.get_mut(m.ids.compose_bias) = crate::nn::graph::Tensor {
            rows: 2,
            cols: 1,
            data: vec![0.05, -0.05],
        };
        *m.params.get_mut(m.ids.labels) = crate::nn::graph::Tensor {
            rows: 1,
            cols: 1,
            data: vec![0.7],
        };
        let mut g = Graph::new(&m.params);
        let h = g.input(vec![1.0, -1.0]);
        let d = g.input(vec![0.5, 2.0]);
        let c = compose(&mut g, &m, h, d, 0).unwrap();
        let x = [1.0, -1.0, 0.5, 2.0, 0.7];
        let row0: f64 = [0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        let row1: f64 = [-0.1, -0.2, 0.3, 0.0, 1.0]
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        assert!((g.value(c)[0] - (row0 + 0.05).tanh()).abs() < 1e-12);
        assert!((g.value(c)[1] - (row1 - 0.05).tanh()).abs() < 1e-12);
    }

    #[test]
    fn incremental_matches_from_scratch() {
        for system in [System::ArcHybrid, System::ArcStandard] {
            let (m, s) = model(system, 3);
            let enc = m.encode_sentence(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..10 {
                let mut g = Graph::new(&m.params);
                let mut state = ParserState::new(&mut g, &m, &enc).unwrap();
                let mut steps = 0;
                loop {
                    let p = state.encode(&mut g).unwrap();
                    assert_eq!(g.dim(p), m.config.state_dim);
                    let q = encode_from_scratch(&mut g, &m, &enc, state.config()).unwrap();
                    for (a, b) in g.value(p).iter().zip(g.value(q)) {
                        assert!((a - b).abs() < 1e-10);
                    }
                    if state.is_terminal() || steps == 50 {
                        break;
                    }
                    let valid = state.valid_actions().unwrap();
                    let a = *valid.as_slice().choose(&mut rng).unwrap();
                    state.apply(&mut g, a).unwrap();
                    steps += 1;
                }
            }
        }
    }

    #[test]
    fn identical_configs_identical_encoding() {
        let (m, s) = model(System::ArcHybrid, 4);
        let enc = m.encode_sentence(&s);
        let run = || {
            let mut g = Graph::new(&m.params);
            let mut st = ParserState::new(&mut g, &m, &enc).unwrap();
            for a in [Action::Shift, Action::Shift, Action::LeftArc(1)] {
                st.apply(&mut g, a).unwrap();
            }
            let p = st.encode(&mut g).unwrap();
            g.value(p).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn normalization_on_random_states() {
        let (m, s) = model(System::ArcHybrid, 5);
        let enc = m.encode_sentence(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new(&m.params);
        let mut st = ParserState::new(&mut g, &m, &enc).unwrap();
        while !st.is_terminal() {
            let p = st.encode(&mut g).unwrap();
            let valid = st.valid_actions().unwrap();
            let d = action_distribution(&mut g, &m, p, &valid).unwrap();
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.probs.iter().all(|&p| p > 0.0));
            let a = valid.as_slice()[rng.gen_range(0..valid.len())];
            st.apply(&mut g, a).unwrap();
        }
    }
}
