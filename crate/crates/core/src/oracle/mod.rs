//! Static oracles for both transition systems, the arc-hybrid dynamic
//! oracle, and an exhaustive reference oracle used to verify it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::transition::{Action, ActionSet, Configuration, System, ROOT};
use crate::treebank::{Sentence, Vocabulary};

pub mod check;

/// Default number of memoized states the brute-force search may visit.
pub const DEFAULT_BUDGET: usize = 1 << 20;

/// Gold heads and labels with precomputed dependent lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldTree {
    heads: Vec<usize>,
    labels: Vec<usize>,
    /// Sorted dependents per head, including the root at slot 0.
    dependents: Vec<Vec<usize>>,
}

impl GoldTree {
    /// `heads[0]` and `labels[0]` are ignored.
    pub fn new(heads: Vec<usize>, labels: Vec<usize>) -> Self {
        assert_eq!(heads.len(), labels.len());
        let mut dependents = vec![Vec::new(); heads.len()];
        for d in 1..heads.len() {
            dependents[heads[d]].push(d);
        }
        GoldTree {
            heads,
            labels,
            dependents,
        }
    }

    pub fn unlabeled(heads: Vec<usize>) -> Self {
        let labels = vec![0; heads.len()];
        GoldTree::new(heads, labels)
    }

    pub fn from_sentence(sentence: &Sentence, vocab: &Vocabulary) -> Result<Self> {
        let labels = std::iter::once(Ok(0))
            .chain(sentence.tokens.iter().map(|t| {
                vocab
                    .label_id(&t.label)
                    .ok_or_else(|| Error::Config(format!("unknown label {:?}", t.label)))
            }))
            .collect::<Result<Vec<_>>>()?;
        Ok(GoldTree::new(sentence.heads(), labels))
    }

    pub fn len(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head(&self, d: usize) -> usize {
        self.heads[d]
    }

    pub fn label(&self, d: usize) -> usize {
        self.labels[d]
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn dependents(&self, h: usize) -> &[usize] {
        &self.dependents[h]
    }

    fn all_dependents_attached(&self, h: usize, config: &Configuration) -> bool {
        self.dependents[h].iter().all(|&d| config.is_attached(d))
    }

    /// Number of gold dependents of `h` at positions `>= from`.
    fn dependents_from(&self, h: usize, from: usize) -> usize {
        let deps = &self.dependents[h];
        deps.len() - deps.partition_point(|&d| d < from)
    }
}

/// Canonical next action for the system of `config`.
pub fn static_oracle(config: &Configuration, gold: &GoldTree) -> Result<Action> {
    match config.system() {
        System::ArcHybrid => static_oracle_arc_hybrid(config, gold),
        System::ArcStandard => static_oracle_arc_standard(config, gold),
    }
}

pub fn static_oracle_arc_hybrid(config: &Configuration, gold: &GoldTree) -> Result<Action> {
    if config.is_terminal() {
        return Err(Error::Terminal);
    }
    if let Some(s0) = config.s0() {
        if Some(gold.head(s0)) == config.buffer_front() {
            return Ok(Action::LeftArc(gold.label(s0)));
        }
        if Some(gold.head(s0)) == config.s1() && gold.all_dependents_attached(s0, config) {
            return Ok(Action::RightArc(gold.label(s0)));
        }
    }
    if config.can_shift() {
        Ok(Action::Shift)
    } else {
        Err(Error::OracleFailure)
    }
}

pub fn static_oracle_arc_standard(config: &Configuration, gold: &GoldTree) -> Result<Action> {
    if config.is_terminal() {
        return Err(Error::Terminal);
    }
    if let (Some(s0), Some(s1)) = (config.s0(), config.s1()) {
        if s1 != ROOT && gold.head(s1) == s0 && gold.all_dependents_attached(s1, config) {
            return Ok(Action::LeftArc(gold.label(s1)));
        }
        if gold.head(s0) == s1 && gold.all_dependents_attached(s0, config) {
            return Ok(Action::RightArc(gold.label(s0)));
        }
    }
    if config.can_shift() {
        Ok(Action::Shift)
    } else {
        Err(Error::OracleFailure)
    }
}

/// Full canonical action sequence for a gold tree.
pub fn static_sequence(gold: &GoldTree, system: System) -> Result<Vec<Action>> {
    let mut config = Configuration::initial(gold.len(), system)?;
    while !config.is_terminal() {
        let action = static_oracle(&config, gold)?;
        config.apply_mut(action)?;
    }
    Ok(config.history().to_vec())
}

/// Costs of the valid actions of a configuration, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostVector {
    entries: Vec<(Action, u32)>,
}

impl CostVector {
    pub fn new(entries: Vec<(Action, u32)>) -> Self {
        CostVector { entries }
    }

    pub fn get(&self, action: Action) -> Option<u32> {
        self.entries
            .iter()
            .find(|(a, _)| *a == action)
            .map(|&(_, c)| c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Action, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn min(&self) -> Option<u32> {
        self.entries.iter().map(|&(_, c)| c).min()
    }

    pub fn argmin(&self) -> ActionSet {
        let best = self.min();
        ActionSet::new(
            self.entries
                .iter()
                .filter(|&&(_, c)| Some(c) == best)
                .map(|&(a, _)| a)
                .collect(),
        )
    }
}

/// Number of reachable gold arcs an arc-hybrid action gives up, ignoring labels.
pub fn structural_cost(config: &Configuration, gold: &GoldTree, action: Action) -> u32 {
    let next = config.next_token();
    match action {
        Action::Shift => {
            let b = next;
            let h = gold.head(b);
            let head_lost =
                h != ROOT && h < next && !config.is_attached(h) && Some(h) != config.s0();
            // Left dependents of b still on the stack can no longer attach to it.
            let stranded = gold
                .dependents(b)
                .iter()
                .take_while(|&&d| d < b)
                .filter(|&&d| !config.is_attached(d))
                .count();
            head_lost as u32 + stranded as u32
        }
        Action::LeftArc(_) => {
            let s0 = config.s0().expect("LEFT-ARC needs a stack");
            let b = config
                .buffer_front()
                .expect("arc-hybrid buffer holds the root");
            let h = gold.head(s0);
            let in_rest = b != ROOT && (h == ROOT || h > b);
            let head_lost = Some(h) == config.s1() || in_rest;
            head_lost as u32 + gold.dependents_from(s0, next) as u32
        }
        Action::RightArc(_) => {
            let s0 = config.s0().expect("RIGHT-ARC needs a stack");
            let h = gold.head(s0);
            let head_lost = h == ROOT || h >= next;
            head_lost as u32 + gold.dependents_from(s0, next) as u32
        }
    }
}

/// Dynamic-oracle costs of every valid action of an arc-hybrid configuration.
///
/// With `labeled`, an action creating a gold arc with the wrong label costs
/// one more than its structural cost.
pub fn dynamic_oracle_costs(
    config: &Configuration,
    gold: &GoldTree,
    num_labels: usize,
    labeled: bool,
) -> Result<CostVector> {
    if config.system() != System::ArcHybrid {
        return Err(Error::Config(
            "the dynamic oracle is only available for arc-hybrid".into(),
        ));
    }
    let valid = config.valid_actions(num_labels)?;
    let mut entries = Vec::with_capacity(valid.len());
    let mut kind_cost = [None; 3];
    for action in valid.iter() {
        let slot = match action {
            Action::Shift => 0,
            Action::LeftArc(_) => 1,
            Action::RightArc(_) => 2,
        };
        let base = *kind_cost[slot].get_or_insert_with(|| structural_cost(config, gold, action));
        let mut cost = base;
        if labeled {
            if let Some(arc) = config.arc_for(action) {
                if gold.head(arc.dependent) == arc.head && gold.label(arc.dependent) != arc.label {
                    cost += 1;
                }
            }
        }
        entries.push((action, cost));
    }
    Ok(CostVector { entries })
}

/// Minimum-cost valid actions. Never empty for a non-terminal configuration.
pub fn optimal_actions(
    config: &Configuration,
    gold: &GoldTree,
    num_labels: usize,
    labeled: bool,
) -> Result<ActionSet> {
    Ok(dynamic_oracle_costs(config, gold, num_labels, labeled)?.argmin())
}

/// Exhaustive minimum loss over all completions of arc-hybrid configurations.
///
/// Future losses are memoized on `(stack, next buffer token)`, which fully
/// determines the reachable completions.
pub struct BruteForce<'a> {
    gold: &'a GoldTree,
    budget: usize,
    memo: HashMap<(Vec<usize>, usize), u32>,
}

impl<'a> BruteForce<'a> {
    pub fn new(gold: &'a GoldTree, budget: usize) -> Self {
        BruteForce {
            gold,
            budget,
            memo: HashMap::new(),
        }
    }

    pub fn states(&self) -> usize {
        self.memo.len()
    }

    /// Fewest gold arcs missing from any tree reachable from `config`.
    /// With `labeled`, arcs already built with a wrong label also count.
    pub fn min_loss(&mut self, config: &Configuration, labeled: bool) -> Result<u32> {
        if config.system() != System::ArcHybrid {
            return Err(Error::Config(
                "brute-force search is only available for arc-hybrid".into(),
            ));
        }
        let past = config
            .arcs()
            .iter()
            .filter(|arc| {
                self.gold.head(arc.dependent) != arc.head
                    || (labeled && self.gold.label(arc.dependent) != arc.label)
            })
            .count() as u32;
        let mut stack = config.stack().to_vec();
        Ok(past + self.future(&mut stack, config.next_token())?)
    }

    fn future(&mut self, stack: &mut Vec<usize>, next: usize) -> Result<u32> {
        let n = self.gold.len();
        if stack.is_empty() && next > n {
            return Ok(0);
        }
        if let Some(&loss) = self.memo.get(&(stack.clone(), next)) {
            return Ok(loss);
        }
        if self.memo.len() >= self.budget {
            return Err(Error::SearchBudget {
                budget: self.budget,
            });
        }

        let mut best = u32::MAX;
        if next <= n {
            stack.push(next);
            best = best.min(self.future(stack, next + 1)?);
            stack.pop();
        }
        if let Some(s0) = stack.pop() {
            let b = if next <= n { next } else { ROOT };
            let left = (self.gold.head(s0) != b) as u32 + self.future(stack, next)?;
            best = best.min(left);
            if let Some(&s1) = stack.last() {
                let right = (self.gold.head(s0) != s1) as u32 + self.future(stack, next)?;
                best = best.min(right);
            }
            stack.push(s0);
        }

        self.memo.insert((stack.clone(), next), best);
        Ok(best)
    }
}

/// Unlabeled reachability loss of `config` by exhaustive search.
pub fn brute_force_min_loss(config: &Configuration, gold: &GoldTree) -> Result<u32> {
    BruteForce::new(gold, DEFAULT_BUDGET).min_loss(config, false)
}
