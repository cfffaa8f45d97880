//! Static-oracle and dynamic-oracle (exploration) training.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, PunctPolicy};
use crate::nn::{
    action_distribution, ActionDistribution, Gradients, Graph, ParamStore, ParserModel,
    ParserState, Value,
};
use crate::oracle::{dynamic_oracle_costs, static_sequence, GoldTree};
use crate::par::Execution;
use crate::transition::{Action, ActionSet, System};
use crate::treebank::{filter_projective, Sentence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Static,
    Dynamic,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Static => "static",
            OracleKind::Dynamic => "dynamic",
        })
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(OracleKind::Static),
            "dynamic" => Ok(OracleKind::Dynamic),
            _ => Err(Error::Config(format!(
                "unknown oracle `{s}` (expected static or dynamic)"
            ))),
        }
    }
}

/// How the next state is chosen once warmup is over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    /// Sample from the flattened model distribution.
    Sample,
    /// Follow the model's argmax (ablation only).
    OneBest,
}

impl fmt::Display for Exploration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exploration::Sample => "sample",
            Exploration::OneBest => "one-best",
        })
    }
}

impl FromStr for Exploration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Exploration::Sample),
            "one-best" => Ok(Exploration::OneBest),
            _ => Err(Error::Config(format!(
                "unknown exploration `{s}` (expected sample or one-best)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub oracle: OracleKind,
    pub alpha: f64,
    pub gold_warmup_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub l2: f64,
    pub seed: u64,
    pub system: System,
    pub exploration: Exploration,
    /// Include label mistakes in the dynamic-oracle costs.
    pub labeled_costs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            oracle: OracleKind::Static,
            alpha: 1.0,
            gold_warmup_epochs: 1,
            epochs: 10,
            learning_rate: 0.1,
            lr_decay: 0.1,
            clip_norm: 5.0,
            l2: 1e-6,
            seed: 1,
            system: System::ArcHybrid,
            exploration: Exploration::Sample,
            labeled_costs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.oracle == OracleKind::Dynamic && self.system != System::ArcHybrid {
            return Err(Error::Config(format!(
                "the dynamic oracle requires arc-hybrid, not {}",
                self.system
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("lr_decay", self.lr_decay),
            ("l2", self.l2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * epoch as f64)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Alpha(alpha))
    }
}

/// `q_i = p_i^α / Σ_j p_j^α`. Returns the input unchanged at `α = 1`.
pub fn flatten_distribution(probs: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(probs.to_vec());
    }
    // Work in log space so tiny probabilities do not underflow to zero.
    let logs: Vec<f64> = probs.iter().map(|p| alpha * p.ln()).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Inverse-CDF sample in canonical action order.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], valid: &ActionSet, rng: &mut R) -> Action {
    assert_eq!(probs.len(), valid.len(), "one probability per valid action");
    let total: f64 = probs.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return valid.as_slice()[i];
        }
    }
    // Rounding left `u` past the final cumulative sum.
    valid.as_slice()[last]
}

/// `−log Σ_{z ∈ optimal} p(z | p_t)`.
pub fn marginal_nll(
    g: &mut Graph,
    dist: &ActionDistribution,
    optimal: &ActionSet,
) -> Result<Value> {
    if optimal.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let positions = optimal
        .iter()
        .map(|a| {
            dist.actions
                .position(a)
                .ok_or_else(|| Error::InvalidAction {
                    action: a.to_string(),
                    reason: "optimal action is not valid here".into(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let picked = g.pick(dist.log_probs, &positions)?;
    let lse = g.log_sum_exp(picked)?;
    Ok(g.neg(lse))
}

/// Sum of per-step losses: the negative log of the sequence probability.
pub fn sequence_nll(g: &mut Graph, steps: &[Value]) -> Result<Value> {
    if steps.is_empty() {
        return Err(Error::Config("sequence_nll needs at least one step".into()));
    }
    g.sum(steps)
}

/// Clip the global gradient norm, take an L2-regularised step and zero the gradients.
pub fn sgd_update(
    params: &mut ParamStore,
    grads: &mut Gradients,
    lr: f64,
    clip_norm: f64,
    l2: f64,
) -> Result<()> {
    let norm = grads.norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    if !grads.norm().is_finite() {
        grads.zero();
        return Err(Error::NonFiniteGradient);
    }
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let g = grads.get(id);
        for (w, &d) in params.get_mut(id).data.iter_mut().zip(g) {
            *w -= lr * (d + l2 * *w);
        }
    }
    grads.zero();
    Ok(())
}

/// Counters accumulated over one pass through the corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub sentences: usize,
    /// Summed sentence losses.
    pub loss: f64,
    pub transitions: usize,
    /// Transitions taken that were not in the optimal set.
    pub non_optimal: usize,
    /// Sentences dropped because the static oracle failed on them.
    pub skipped: usize,
}

impl EpochStats {
    pub fn mean_loss(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.loss / self.sentences as f64
        }
    }

    pub fn exploration_rate(&self) -> f64 {
        if self.transitions == 0 {
            0.0
        } else {
            self.non_optimal as f64 / self.transitions as f64
        }
    }
}

fn check_model(model: &ParserModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if model.system != cfg.system {
        return Err(Error::Config(format!(
            "model uses {} but training is configured for {}",
            model.system, cfg.system
        )));
    }
    Ok(())
}

/// Backpropagate `loss` and update the model.
fn step(
    model: &mut ParserModel,
    grads: &mut Gradients,
    build: impl FnOnce(&mut Graph<'_>, &ParserModel) -> Result<Option<Value>>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let loss = {
        let mut g = Graph::new(&model.params);
        let Some(loss) = build(&mut g, model)? else {
            return Ok(None);
        };
        let value = g.forward(loss)?[0];
        g.backward(loss, grads)?;
        value
    };
    sgd_update(&mut model.params, grads, lr, cfg.clip_norm, cfg.l2)?;
    Ok(Some(loss))
}

fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// One epoch following the canonical static-oracle sequence of each sentence.
pub fn train_epoch_static<R: Rng + ?Sized>(
    model: &mut ParserModel,
    corpus: &[Sentence],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    check_model(model, cfg)?;
    let lr = cfg.learning_rate_at(epoch);
    let mut grads = Gradients::zeros_like(&model.params);
    let mut stats = EpochStats::default();
    for i in shuffled(corpus.len(), rng) {
        let sentence = &corpus[i];
        let gold = GoldTree::from_sentence(sentence, &model.vocab)?;
        let actions = match static_sequence(&gold, model.system) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("sentence {} skipped: {e}", i + 1);
                stats.skipped += 1;
                continue;
            }
        };
        let encoded = model.encode_sentence(sentence);
        let loss = step(
            model,
            &mut grads,
            |g, model| {
                let mut state = ParserState::new(g, model, &encoded)?;
                let mut losses = Vec::with_capacity(actions.len());
                for &a in &actions {
                    let p = state.encode(g)?;
                    let valid = state.valid_actions()?;
                    let dist = action_distribution(g, model, p, &valid)?;
                    losses.push(marginal_nll(g, &dist, &ActionSet::new(vec![a]))?);
                    state.apply(g, a)?;
                }
                sequence_nll(g, &losses).map(Some)
            },
            lr,
            cfg,
        )?;
        stats.sentences += 1;
        stats.transitions += actions.len();
        stats.loss += loss.unwrap_or(0.0);
    }
    Ok(stats)
}

/// Distribution restricted to `subset` and renormalised.
fn restrict(dist: &ActionDistribution, subset: &ActionSet) -> Vec<f64> {
    let probs: Vec<f64> = subset.iter().map(|a| dist.prob(a)).collect();
    let z: f64 = probs.iter().sum();
    if z > 0.0 {
        probs.into_iter().map(|p| p / z).collect()
    } else {
        vec![1.0 / subset.len() as f64; subset.len()]
    }
}

/// One epoch of training with exploration: the loss targets the optimal set at
/// each visited state, and the next state is sampled from the model.
pub fn train_epoch_dynamic<R: Rng + ?Sized>(
    model: &mut ParserModel,
    corpus: &[Sentence],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    check_model(model, cfg)?;
    if cfg.oracle != OracleKind::Dynamic {
        return Err(Error::Config(
            "train_epoch_dynamic needs the dynamic oracle".into(),
        ));
    }
    let lr = cfg.learning_rate_at(epoch);
    let warmup = epoch < cfg.gold_warmup_epochs;
    let num_labels = model.num_labels();
    let mut grads = Gradients::zeros_like(&model.params);
    let mut stats = EpochStats::default();
    for i in shuffled(corpus.len(), rng) {
        let sentence = &corpus[i];
        let gold = GoldTree::from_sentence(sentence, &model.vocab)?;
        let encoded = model.encode_sentence(sentence);
        let mut taken = 0;
        let mut strayed = 0;
        let loss = step(
            model,
            &mut grads,
            |g, model| {
                let mut state = ParserState::new(g, model, &encoded)?;
                let mut losses = Vec::with_capacity(2 * sentence.len());
                while !state.is_terminal() {
                    debug_assert_eq!(state.config().check_invariants(), Ok(()));
                    let p = state.encode(g)?;
                    let valid = state.valid_actions()?;
                    let dist = action_distribution(g, model, p, &valid)?;
                    let costs =
                        dynamic_oracle_costs(state.config(), &gold, num_labels, cfg.labeled_costs)?;
                    let optimal = costs.argmin();
                    losses.push(marginal_nll(g, &dist, &optimal)?);
                    let next = if warmup {
                        sample_action(&restrict(&dist, &optimal), &optimal, rng)
                    } else {
                        match cfg.exploration {
                            Exploration::Sample => {
                                let q = flatten_distribution(&dist.probs, cfg.alpha)?;
                                sample_action(&q, &valid, rng)
                            }
                            Exploration::OneBest => dist.argmax(),
                        }
                    };
                    if !optimal.contains(next) {
                        strayed += 1;
                    }
                    taken += 1;
                    state.apply(g, next)?;
                }
                if taken != 2 * sentence.len() {
                    return Err(Error::Verification(format!(
                        "walk on sentence {} took {taken} transitions, expected {}",
                        i + 1,
                        2 * sentence.len()
                    )));
                }
                sequence_nll(g, &losses).map(Some)
            },
            lr,
            cfg,
        )?;
        stats.sentences += 1;
        stats.transitions += taken;
        stats.non_optimal += strayed;
        stats.loss += loss.unwrap_or(0.0);
    }
    Ok(stats)
}

pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut ParserModel,
    corpus: &[Sentence],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    match cfg.oracle {
        OracleKind::Static => train_epoch_static(model, corpus, cfg, epoch, rng),
        OracleKind::Dynamic => train_epoch_dynamic(model, corpus, cfg, epoch, rng),
    }
}

/// One JSON-lines record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub oracle: OracleKind,
    pub learning_rate: f64,
    pub loss: f64,
    pub train_uas: f64,
    pub train_las: f64,
    pub dev_uas: Option<f64>,
    pub dev_las: Option<f64>,
    pub exploration_rate: f64,
    pub sentences: usize,
    pub skipped: usize,
}

impl EpochReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

pub struct TrainOutcome {
    /// Snapshot with the best dev UAS (train UAS when there is no dev set).
    pub best: ParserModel,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
    /// Nonprojective training sentences removed before training.
    pub nonprojective: usize,
}

/// Full training loop with per-epoch evaluation and best-model selection.
pub fn train<R: Rng + ?Sized>(
    mut model: ParserModel,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    cfg: &TrainConfig,
    exec: Execution,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainOutcome> {
    check_model(&model, cfg)?;
    let (corpus, nonprojective) = filter_projective(train_set.to_vec());
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let policy = PunctPolicy::Include;
    let mut best: Option<(f64, usize, ParserModel)> = None;
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut model, &corpus, cfg, epoch, rng)?;
        let train_score = evaluate(&model, &corpus, &policy, exec)?;
        let dev_score = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, dev_set, &policy, exec)?)
        };
        let report = EpochReport {
            epoch: epoch + 1,
            oracle: cfg.oracle,
            learning_rate: cfg.learning_rate_at(epoch),
            loss: stats.mean_loss(),
            train_uas: train_score.uas,
            train_las: train_score.las,
            dev_uas: dev_score.as_ref().map(|s| s.uas),
            dev_las: dev_score.as_ref().map(|s| s.las),
            exploration_rate: stats.exploration_rate(),
            sentences: stats.sentences,
            skipped: stats.skipped + nonprojective,
        };
        log::info!(
            "epoch {} loss {:.4} train UAS {:.2} dev UAS {}",
            report.epoch,
            report.loss,
            report.train_uas,
            report.dev_uas.map_or("-".into(), |u| format!("{u:.2}"))
        );
        on_epoch(&report)?;
        let key = report.dev_uas.unwrap_or(report.train_uas);
        if best.as_ref().is_none_or(|(b, _, _)| key > *b) {
            best = Some((key, report.epoch, model.clone()));
        }
        reports.push(report);
    }
    let (best, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        reports,
        nonprojective,
    })
}
