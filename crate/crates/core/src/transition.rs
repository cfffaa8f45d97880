//! Parser configurations and the arc-standard and arc-hybrid transition
//! systems.
//!
//! Tokens are numbered `1..=n`; 0 is the artificial root. In arc-hybrid the
//! root sits at the end of the buffer and is attached by a final LEFT-ARC;
//! in arc-standard it sits at the bottom of the stack.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of the artificial root.
pub const ROOT: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    ArcStandard,
    ArcHybrid,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::ArcStandard => "arc-standard",
            System::ArcHybrid => "arc-hybrid",
        })
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc-standard" => Ok(System::ArcStandard),
            "arc-hybrid" => Ok(System::ArcHybrid),
            _ => Err(Error::Config(format!("unknown transition system {:?}", s))),
        }
    }
}

/// A transition. Arc actions carry a label id.
///
/// The derived ordering is the canonical action order: SHIFT, then
/// LEFT-ARC by label, then RIGHT-ARC by label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Shift,
    LeftArc(usize),
    RightArc(usize),
}

impl Action {
    pub fn label(self) -> Option<usize> {
        match self {
            Action::Shift => None,
            Action::LeftArc(l) | Action::RightArc(l) => Some(l),
        }
    }

    /// Same action kind with label 0, for structure-only comparisons.
    pub fn unlabeled(self) -> Action {
        match self {
            Action::Shift => Action::Shift,
            Action::LeftArc(_) => Action::LeftArc(0),
            Action::RightArc(_) => Action::RightArc(0),
        }
    }

    /// Output-layer index in an inventory of `1 + 2 * num_labels` actions.
    pub fn index(self, num_labels: usize) -> usize {
        match self {
            Action::Shift => 0,
            Action::LeftArc(l) => 1 + l,
            Action::RightArc(l) => 1 + num_labels + l,
        }
    }

    pub fn from_index(index: usize, num_labels: usize) -> Action {
        match index {
            0 => Action::Shift,
            i if i <= num_labels => Action::LeftArc(i - 1),
            i => Action::RightArc(i - 1 - num_labels),
        }
    }

    /// All actions in canonical order.
    pub fn inventory(num_labels: usize) -> Vec<Action> {
        (0..1 + 2 * num_labels)
            .map(|i| Action::from_index(i, num_labels))
            .collect()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift => write!(f, "SHIFT"),
            Action::LeftArc(l) => write!(f, "LEFT({})", l),
            Action::RightArc(l) => write!(f, "RIGHT({})", l),
        }
    }
}

/// Distinct actions in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActionSet(Vec<Action>);

impl ActionSet {
    pub fn new(mut actions: Vec<Action>) -> Self {
        actions.sort_unstable();
        actions.dedup();
        ActionSet(actions)
    }

    pub fn as_slice(&self) -> &[Action] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, action: Action) -> bool {
        self.0.binary_search(&action).is_ok()
    }

    pub fn position(&self, action: Action) -> Option<usize> {
        self.0.binary_search(&action).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arc {
    pub head: usize,
    pub dependent: usize,
    pub label: usize,
}

/// Heads and labels read off a terminal configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictedTree {
    /// `heads[d]` for `d in 1..=n`; slot 0 is unused.
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl PredictedTree {
    pub fn len(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    system: System,
    n: usize,
    stack: Vec<usize>,
    /// Next real token in the buffer; `n + 1` once all have been shifted.
    next: usize,
    heads: Vec<Option<(usize, usize)>>,
    arcs: Vec<Arc>,
    history: Vec<Action>,
}

impl Configuration {
    pub fn initial(n: usize, system: System) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        let stack = match system {
            System::ArcHybrid => Vec::new(),
            System::ArcStandard => vec![ROOT],
        };
        Ok(Configuration {
            system,
            n,
            stack,
            next: 1,
            heads: vec![None; n + 1],
            arcs: Vec::with_capacity(n),
            history: Vec::with_capacity(2 * n),
        })
    }

    pub fn system(&self) -> System {
        self.system
    }

    pub fn num_tokens(&self) -> usize {
        self.n
    }

    /// Stack contents, bottom first.
    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    /// Top of the stack.
    pub fn s0(&self) -> Option<usize> {
        self.stack.last().copied()
    }

    /// Second element from the top of the stack.
    pub fn s1(&self) -> Option<usize> {
        self.stack.len().checked_sub(2).map(|i| self.stack[i])
    }

    /// Index of the next unshifted real token (`n + 1` if none remain).
    pub fn next_token(&self) -> usize {
        self.next
    }

    pub fn buffer_len(&self) -> usize {
        let real = self.n + 1 - self.next;
        match self.system {
            System::ArcHybrid => real + 1,
            System::ArcStandard => real,
        }
    }

    pub fn buffer_front(&self) -> Option<usize> {
        if self.next <= self.n {
            Some(self.next)
        } else if self.system == System::ArcHybrid {
            Some(ROOT)
        } else {
            None
        }
    }

    /// Buffer contents, front first.
    pub fn buffer(&self) -> Vec<usize> {
        let mut buffer: Vec<usize> = (self.next..=self.n).collect();
        if self.system == System::ArcHybrid {
            buffer.push(ROOT);
        }
        buffer
    }

    pub fn head_of(&self, dependent: usize) -> Option<usize> {
        self.heads[dependent].map(|(h, _)| h)
    }

    pub fn label_of(&self, dependent: usize) -> Option<usize> {
        self.heads[dependent].map(|(_, l)| l)
    }

    pub fn is_attached(&self, token: usize) -> bool {
        token != ROOT && self.heads[token].is_some()
    }

    /// Arcs in creation order.
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn history(&self) -> &[Action] {
        &self.history
    }

    pub fn is_terminal(&self) -> bool {
        match self.system {
            System::ArcHybrid => self.stack.is_empty() && self.next > self.n,
            System::ArcStandard => self.stack == [ROOT] && self.next > self.n,
        }
    }

    pub fn can_shift(&self) -> bool {
        // In arc-hybrid the root is never shifted.
        self.next <= self.n
    }

    pub fn can_left(&self) -> bool {
        match self.system {
            System::ArcHybrid => !self.stack.is_empty() && self.buffer_len() >= 1,
            System::ArcStandard => self.stack.len() >= 2 && self.s1() != Some(ROOT),
        }
    }

    pub fn can_right(&self) -> bool {
        self.stack.len() >= 2
    }

    pub fn is_valid(&self, action: Action) -> bool {
        match action {
            Action::Shift => self.can_shift(),
            Action::LeftArc(_) => self.can_left(),
            Action::RightArc(_) => self.can_right(),
        }
    }

    /// Valid actions for a label inventory of size `num_labels`.
    pub fn valid_actions(&self, num_labels: usize) -> Result<ActionSet> {
        if self.is_terminal() {
            return Err(Error::Terminal);
        }
        let mut actions = Vec::with_capacity(1 + 2 * num_labels);
        if self.can_shift() {
            actions.push(Action::Shift);
        }
        if self.can_left() {
            actions.extend((0..num_labels).map(Action::LeftArc));
        }
        if self.can_right() {
            actions.extend((0..num_labels).map(Action::RightArc));
        }
        Ok(ActionSet(actions))
    }

    /// Structural actions (label 0) that are valid here.
    pub fn valid_kinds(&self) -> Vec<Action> {
        let mut kinds = Vec::with_capacity(3);
        if self.can_shift() {
            kinds.push(Action::Shift);
        }
        if self.can_left() {
            kinds.push(Action::LeftArc(0));
        }
        if self.can_right() {
            kinds.push(Action::RightArc(0));
        }
        kinds
    }

    /// The arc an arc action would create, without applying it.
    pub fn arc_for(&self, action: Action) -> Option<Arc> {
        let s0 = self.s0()?;
        match (self.system, action) {
            (_, Action::Shift) => None,
            (System::ArcHybrid, Action::LeftArc(label)) => Some(Arc {
                head: self.buffer_front()?,
                dependent: s0,
                label,
            }),
            (System::ArcStandard, Action::LeftArc(label)) => Some(Arc {
                head: s0,
                dependent: self.s1()?,
                label,
            }),
            (_, Action::RightArc(label)) => Some(Arc {
                head: self.s1()?,
                dependent: s0,
                label,
            }),
        }
    }

    pub fn apply(&self, action: Action) -> Result<Configuration> {
        let mut next = self.clone();
        next.apply_mut(action)?;
        Ok(next)
    }

    pub fn apply_mut(&mut self, action: Action) -> Result<()> {
        if !self.is_valid(action) {
            return Err(Error::InvalidAction {
                action: action.to_string(),
                reason: format!("stack {:?}, buffer {:?}", self.stack, self.buffer()),
            });
        }
        match action {
            Action::Shift => {
                self.stack.push(self.next);
                self.next += 1;
            }
            Action::LeftArc(_) | Action::RightArc(_) => {
                let arc = self.arc_for(action).expect("validity implies an arc");
                match (self.system, action) {
                    (System::ArcStandard, Action::LeftArc(_)) => {
                        let top = self.stack.pop().unwrap();
                        self.stack.pop();
                        self.stack.push(top);
                    }
                    _ => {
                        self.stack.pop();
                    }
                }
                self.heads[arc.dependent] = Some((arc.head, arc.label));
                self.arcs.push(arc);
            }
        }
        self.history.push(action);
        Ok(())
    }

    pub fn reconstruct_tree(&self) -> Result<PredictedTree> {
        if !self.is_terminal() {
            return Err(Error::NotTerminal);
        }
        let mut heads = vec![0; self.n + 1];
        let mut labels = vec![0; self.n + 1];
        for d in 1..=self.n {
            let (h, l) = self.heads[d].ok_or(Error::MissingHead(d))?;
            heads[d] = h;
            labels[d] = l;
        }
        Ok(PredictedTree { heads, labels })
    }

    /// Check the token-partition and single-head invariants.
    #[allow(clippy::needless_range_loop)]
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = vec![0u8; self.n + 1];
        for &t in &self.stack {
            if t == ROOT {
                continue;
            }
            if self.heads[t].is_some() {
                return Err(format!("token {} on the stack already has a head", t));
            }
            seen[t] += 1;
        }
        for t in self.next..=self.n {
            if self.heads[t].is_some() {
                return Err(format!("token {} in the buffer already has a head", t));
            }
            seen[t] += 1;
        }
        for t in 1..=self.n {
            if self.heads[t].is_some() {
                seen[t] += 1;
            }
            if seen[t] != 1 {
                return Err(format!(
                    "token {} appears {} times in the partition",
                    t, seen[t]
                ));
            }
        }
        let mut dependents = vec![false; self.n + 1];
        for arc in &self.arcs {
            if arc.head == arc.dependent || dependents[arc.dependent] {
                return Err(format!("bad arc {:?}", arc));
            }
            dependents[arc.dependent] = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 1;
    const B: usize = 2;
    const C: usize = 3;

    #[test]
    fn initial_configs() {
        let c = Configuration::initial(3, System::ArcHybrid).unwrap();
        assert!(c.stack().is_empty());
        assert_eq!(c.buffer(), vec![1, 2, 3, ROOT]);
        let c = Configuration::initial(1, System::ArcStandard).unwrap();
        assert_eq!(c.stack(), &[ROOT]);
        assert_eq!(c.buffer(), vec![1]);
        assert!(Configuration::initial(0, System::ArcHybrid).is_err());
        for n in 1..10 {
            for sys in [System::ArcHybrid, System::ArcStandard] {
                assert!(!Configuration::initial(n, sys).unwrap().is_terminal());
            }
        }
    }

    #[test]
    fn hybrid_valid_actions() {
        let c = Configuration::initial(2, System::ArcHybrid).unwrap();
        assert_eq!(c.valid_actions(2).unwrap().as_slice(), &[Action::Shift]);
        let c = c.apply(Action::Shift).unwrap();
        assert_eq!(c.stack(), &[1]);
        assert_eq!(c.buffer(), vec![2, ROOT]);
        assert_eq!(
            c.valid_actions(2).unwrap().as_slice(),
            &[Action::Shift, Action::LeftArc(0), Action::LeftArc(1)]
        );
    }

    #[test]
    fn standard_valid_actions() {
        let c = Configuration::initial(2, System::ArcStandard).unwrap();
        assert_eq!(c.valid_actions(1).unwrap().as_slice(), &[Action::Shift]);
        let c = c.apply(Action::Shift).unwrap();
        // s1 is ROOT: no LEFT-ARC.
        assert_eq!(
            c.valid_actions(1).unwrap().as_slice(),
            &[Action::Shift, Action::RightArc(0)]
        );
    }

    #[test]
    fn terminal_has_no_actions() {
        let c = Configuration::initial(1, System::ArcHybrid).unwrap();
        let c = c.apply(Action::Shift).unwrap();
        assert_eq!(c.stack(), &[1]);
        assert!(!c.is_terminal());
        let c = c.apply(Action::LeftArc(0)).unwrap();
        assert!(c.is_terminal());
        assert!(matches!(c.valid_actions(1), Err(Error::Terminal)));
        let tree = c.reconstruct_tree().unwrap();
        assert_eq!(tree.heads, vec![0, ROOT]);
    }

    #[test]
    fn running_example_walk() {
        // a <- b, b <- ROOT, c <- b
        let walk = [
            Action::Shift,
            Action::LeftArc(0),
            Action::Shift,
            Action::Shift,
            Action::RightArc(1),
            Action::LeftArc(2),
        ];
        let mut c = Configuration::initial(3, System::ArcHybrid).unwrap();
        let start = c.clone();
        let first = c.apply(Action::Shift).unwrap();
        assert_eq!(start, c);
        assert_eq!(first.stack(), &[A]);
        for &a in &walk {
            assert!(c.reconstruct_tree().is_err());
            c.apply_mut(a).unwrap();
        }
        assert!(c.is_terminal());
        let arcs: Vec<(usize, usize)> = c.arcs().iter().map(|a| (a.head, a.dependent)).collect();
        assert_eq!(arcs, vec![(B, A), (B, C), (ROOT, B)]);
        let tree = c.reconstruct_tree().unwrap();
        assert_eq!(tree.heads, vec![0, B, ROOT, B]);
        assert_eq!(tree.labels, vec![0, 0, 2, 1]);
    }

    #[test]
    fn invalid_action_rejected() {
        let c = Configuration::initial(2, System::ArcHybrid).unwrap();
        assert!(matches!(
            c.apply(Action::LeftArc(0)),
            Err(Error::InvalidAction { .. })
        ));
        assert!(c.apply(Action::RightArc(0)).is_err());
    }

    #[test]
    fn random_walks_keep_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for walk in 0..1000 {
            let n = 1 + walk % 9;
            for system in [System::ArcHybrid, System::ArcStandard] {
                let mut c = Configuration::initial(n, system).unwrap();
                let mut steps = 0;
                while !c.is_terminal() {
                    let valid = c.valid_actions(2).unwrap();
                    assert!(!valid.is_empty());
                    let a = *valid.as_slice().choose(&mut rng).unwrap();
                    let before = c.clone();
                    let again = before.apply(a).unwrap();
                    c.apply_mut(a).unwrap();
                    assert_eq!(c, again);
                    c.check_invariants().unwrap();
                    steps += 1;
                }
                assert_eq!(steps, 2 * n);
                let tree = c.reconstruct_tree().unwrap();
                assert!(tree.heads[1..].iter().all(|&h| h <= n));
            }
        }
    }

    #[test]
    fn action_indices_round_trip() {
        let inv = Action::inventory(3);
        assert_eq!(inv.len(), 7);
        for (i, a) in inv.iter().enumerate() {
            assert_eq!(a.index(3), i);
            assert_eq!(Action::from_index(i, 3), *a);
        }
        let mut sorted = inv.clone();
        sorted.sort();
        assert_eq!(sorted, inv);
    }
}
