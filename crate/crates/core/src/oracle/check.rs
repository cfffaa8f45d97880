//! Exhaustive verification of the dynamic oracle against [`BruteForce`].
//!
//! For every projective tree up to a length bound, every configuration
//! reachable in the arc-hybrid system is visited. At each one the oracle's
//! cost for every valid action must equal the increase in brute-force loss
//! caused by that action, and following zero-cost actions must always end
//! in the gold tree.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dynamic_oracle_costs, BruteForce, CostVector, GoldTree, DEFAULT_BUDGET};
use crate::error::Result;
use crate::par::{self, Execution};
use crate::transition::{Action, Configuration, System};

/// Label inventory used for the synthetic gold trees.
pub const CHECK_LABELS: usize = 2;

/// Signature of a cost function under test.
pub type CostFn = dyn Fn(&Configuration, &GoldTree, usize, bool) -> Result<CostVector> + Sync;

/// The production oracle as a [`CostFn`].
pub fn oracle_costs(
    config: &Configuration,
    gold: &GoldTree,
    num_labels: usize,
    labeled: bool,
) -> Result<CostVector> {
    dynamic_oracle_costs(config, gold, num_labels, labeled)
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub max_len: usize,
    pub random: usize,
    pub random_len: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            max_len: 5,
            random: 0,
            random_len: 8,
            seed: 1,
            exec: Execution::Parallel,
        }
    }
}

/// A gold tree and the action prefix leading to a failing configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
    pub prefix: Vec<Action>,
    pub message: String,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix: Vec<String> = self.prefix.iter().map(Action::to_string).collect();
        write!(
            f,
            "heads {:?} labels {:?} after [{}]: {}",
            &self.heads[1..],
            &self.labels[1..],
            prefix.join(", "),
            self.message
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TreeStats {
    pub configs: usize,
    pub actions: usize,
    pub zero_cost_states: usize,
}

impl std::ops::AddAssign for TreeStats {
    fn add_assign(&mut self, o: TreeStats) {
        self.configs += o.configs;
        self.actions += o.actions;
        self.zero_cost_states += o.zero_cost_states;
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub trees: usize,
    pub stats: TreeStats,
    pub random_trees: usize,
    pub random_stats: TreeStats,
    pub failure: Option<Witness>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// All projective trees over `n` tokens as head vectors (`heads[0] == 0`),
/// built from nested spans so no two arcs can cross.
pub fn projective_trees(n: usize) -> Vec<Vec<usize>> {
    forests(1, n)
        .into_iter()
        .map(|(mut heads, roots)| {
            for r in roots {
                heads[r - 1] = 0;
            }
            std::iter::once(0).chain(heads).collect()
        })
        .collect()
}

const UNSET: usize = usize::MAX;

/// Sequences of adjacent subtrees covering `lo..=hi`: absolute heads for each
/// position (roots left unset) plus the subtree roots.
fn forests(lo: usize, hi: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    if lo > hi {
        return vec![(Vec::new(), Vec::new())];
    }
    let mut out = Vec::new();
    for split in lo..=hi {
        let rest = forests(split + 1, hi);
        for (first, root) in subtrees(lo, split) {
            for (tail, roots) in &rest {
                let mut heads = first.clone();
                heads.extend_from_slice(tail);
                let mut all_roots = vec![root];
                all_roots.extend_from_slice(roots);
                out.push((heads, all_roots));
            }
        }
    }
    out
}

/// Single subtrees spanning exactly `lo..=hi`.
fn subtrees(lo: usize, hi: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out = Vec::new();
    for h in lo..=hi {
        let right = forests(h + 1, hi);
        for (left, left_roots) in forests(lo, h - 1) {
            for (rt, right_roots) in &right {
                let mut heads = left.clone();
                heads.push(UNSET);
                heads.extend_from_slice(rt);
                for &r in left_roots.iter().chain(right_roots) {
                    heads[r - lo] = h;
                }
                out.push((heads, h));
            }
        }
    }
    out
}

/// A random projective tree produced by a uniform random arc-hybrid walk.
pub fn random_projective_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut config = Configuration::initial(n, System::ArcHybrid).expect("n >= 1");
    while !config.is_terminal() {
        let kinds = config.valid_kinds();
        let action = *kinds.choose(rng).unwrap();
        config.apply_mut(action).unwrap();
    }
    config.reconstruct_tree().unwrap().heads
}

/// Gold labels used for checking: alternate between the two labels.
pub fn check_gold(heads: Vec<usize>) -> GoldTree {
    let labels = (0..heads.len()).map(|d| d % CHECK_LABELS).collect();
    GoldTree::new(heads, labels)
}

type StateKey = (Vec<usize>, usize, Vec<Option<(usize, usize)>>);

fn state_key(c: &Configuration) -> StateKey {
    let heads = (0..=c.num_tokens())
        .map(|d| c.head_of(d).zip(c.label_of(d)))
        .collect();
    (c.stack().to_vec(), c.next_token(), heads)
}

struct Checker<'a> {
    gold: &'a GoldTree,
    cost_fn: &'a CostFn,
    bf: BruteForce<'a>,
}

impl<'a> Checker<'a> {
    fn new(gold: &'a GoldTree, cost_fn: &'a CostFn) -> Self {
        Checker {
            gold,
            cost_fn,
            bf: BruteForce::new(gold, DEFAULT_BUDGET),
        }
    }

    fn witness(&self, c: &Configuration, message: String) -> Witness {
        Witness {
            heads: self.gold.heads().to_vec(),
            labels: self.gold.labels().to_vec(),
            prefix: c.history().to_vec(),
            message,
        }
    }

    /// Compare oracle costs of every valid action with brute-force deltas.
    fn check_config(&mut self, c: &Configuration) -> std::result::Result<usize, Witness> {
        let err = |this: &Self, e: crate::error::Error| this.witness(c, e.to_string());
        let valid = c.valid_actions(CHECK_LABELS).map_err(|e| err(self, e))?;
        let mut checked = 0;
        for labeled in [false, true] {
            let costs =
                (self.cost_fn)(c, self.gold, CHECK_LABELS, labeled).map_err(|e| err(self, e))?;
            let covered: Vec<Action> = costs.iter().map(|(a, _)| a).collect();
            if covered != valid.as_slice() {
                return Err(self.witness(c, format!("cost vector covers {:?}", covered)));
            }
            let before = self.bf.min_loss(c, labeled).map_err(|e| err(self, e))?;
            for (action, cost) in costs.iter() {
                let next = c.apply(action).map_err(|e| err(self, e))?;
                let after = self.bf.min_loss(&next, labeled).map_err(|e| err(self, e))?;
                if after < before {
                    return Err(self.witness(
                        c,
                        format!(
                            "loss decreased from {} to {} after {}",
                            before, after, action
                        ),
                    ));
                }
                if cost != after - before {
                    return Err(self.witness(
                        c,
                        format!(
                            "{} {}: oracle cost {} but brute-force delta {}",
                            if labeled { "labeled" } else { "unlabeled" },
                            action,
                            cost,
                            after - before
                        ),
                    ));
                }
                checked += 1;
            }
        }
        Ok(checked)
    }

    /// Successors along structural actions, labelling gold arcs correctly.
    fn successors(&self, c: &Configuration) -> Vec<Configuration> {
        c.valid_kinds()
            .into_iter()
            .map(|kind| {
                let action = match c.arc_for(kind) {
                    Some(arc) if self.gold.head(arc.dependent) == arc.head => match kind {
                        Action::LeftArc(_) => Action::LeftArc(self.gold.label(arc.dependent)),
                        _ => Action::RightArc(self.gold.label(arc.dependent)),
                    },
                    _ => kind,
                };
                c.apply(action).unwrap()
            })
            .collect()
    }

    fn check_all_reachable(&mut self) -> std::result::Result<TreeStats, Witness> {
        let mut stats = TreeStats::default();
        let start = Configuration::initial(self.gold.len(), System::ArcHybrid).unwrap();
        let mut seen = HashSet::new();
        seen.insert(state_key(&start));
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            stats.configs += 1;
            if c.is_terminal() {
                continue;
            }
            stats.actions += self.check_config(&c)?;
            for next in self.successors(&c) {
                if seen.insert(state_key(&next)) {
                    queue.push_back(next);
                }
            }
        }
        stats.zero_cost_states = self.check_zero_cost_paths()?;
        Ok(stats)
    }

    /// Every walk of zero-cost actions must end in the exact gold tree.
    fn check_zero_cost_paths(&self) -> std::result::Result<usize, Witness> {
        let start = Configuration::initial(self.gold.len(), System::ArcHybrid).unwrap();
        let mut seen = HashSet::new();
        seen.insert(state_key(&start));
        let mut queue = VecDeque::from([start]);
        let mut states = 0;
        while let Some(c) = queue.pop_front() {
            states += 1;
            if c.is_terminal() {
                self.check_terminal(&c)?;
                continue;
            }
            let costs = (self.cost_fn)(&c, self.gold, CHECK_LABELS, true)
                .map_err(|e| self.witness(&c, e.to_string()))?;
            let mut any = false;
            for (action, cost) in costs.iter() {
                if cost == 0 {
                    any = true;
                    let next = c.apply(action).unwrap();
                    if seen.insert(state_key(&next)) {
                        queue.push_back(next);
                    }
                }
            }
            if !any {
                return Err(self.witness(&c, "no zero-cost action on a gold-reachable path".into()));
            }
        }
        Ok(states)
    }

    fn check_terminal(&self, c: &Configuration) -> std::result::Result<(), Witness> {
        let tree = c
            .reconstruct_tree()
            .map_err(|e| self.witness(c, e.to_string()))?;
        if tree.heads[1..] != self.gold.heads()[1..] || tree.labels[1..] != self.gold.labels()[1..]
        {
            return Err(self.witness(
                c,
                format!(
                    "zero-cost walk ended in heads {:?} labels {:?}",
                    &tree.heads[1..],
                    &tree.labels[1..]
                ),
            ));
        }
        Ok(())
    }

    /// Check costs along a uniformly random walk, then a zero-cost walk.
    fn check_random_walk<R: Rng>(
        &mut self,
        rng: &mut R,
    ) -> std::result::Result<TreeStats, Witness> {
        let mut stats = TreeStats::default();
        let mut c = Configuration::initial(self.gold.len(), System::ArcHybrid).unwrap();
        while !c.is_terminal() {
            stats.configs += 1;
            stats.actions += self.check_config(&c)?;
            let valid = c.valid_actions(CHECK_LABELS).unwrap();
            let action = *valid.as_slice().choose(rng).unwrap();
            c.apply_mut(action).unwrap();
        }

        let mut c = Configuration::initial(self.gold.len(), System::ArcHybrid).unwrap();
        while !c.is_terminal() {
            stats.zero_cost_states += 1;
            let costs = (self.cost_fn)(&c, self.gold, CHECK_LABELS, true)
                .map_err(|e| self.witness(&c, e.to_string()))?;
            let zero: Vec<Action> = costs
                .iter()
                .filter(|&(_, k)| k == 0)
                .map(|(a, _)| a)
                .collect();
            let Some(&action) = zero.choose(rng) else {
                return Err(self.witness(&c, "no zero-cost action on a gold-reachable path".into()));
            };
            c.apply_mut(action).unwrap();
        }
        self.check_terminal(&c)?;
        Ok(stats)
    }
}

/// Check one gold tree exhaustively.
pub fn check_tree(gold: &GoldTree, cost_fn: &CostFn) -> std::result::Result<TreeStats, Witness> {
    Checker::new(gold, cost_fn).check_all_reachable()
}

/// Run the exhaustive check for all trees up to `opts.max_len`, then the
/// random spot checks. Stops at the first (smallest) failing tree.
pub fn run(opts: &CheckOptions, cost_fn: &CostFn) -> CheckReport {
    let mut report = CheckReport::default();
    for n in 1..=opts.max_len {
        let trees = projective_trees(n);
        let results = par::map(opts.exec, &trees, |heads| {
            check_tree(&check_gold(heads.clone()), cost_fn)
        });
        for result in results {
            report.trees += 1;
            match result {
                Ok(stats) => report.stats += stats,
                Err(w) => {
                    report.failure = Some(w);
                    return report;
                }
            }
        }
    }

    if opts.random > 0 {
        let results = par::map_range(opts.exec, opts.random, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            let gold = check_gold(random_projective_tree(opts.random_len, &mut rng));
            Checker::new(&gold, cost_fn).check_random_walk(&mut rng)
        });
        for result in results {
            report.random_trees += 1;
            match result {
                Ok(stats) => report.random_stats += stats,
                Err(w) => {
                    report.failure = Some(w);
                    return report;
                }
            }
        }
    }
    report
}
