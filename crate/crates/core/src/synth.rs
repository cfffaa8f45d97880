//! Seeded generator for small projective toy treebanks.
//!
//! Sentences follow a small dependency grammar with clausal complements,
//! relative clauses, coordination and prepositional phrases. Each preposition
//! prefers the verb or the preceding noun, but only with probability
//! [`PREFERENCE`], and trailing modifiers of an embedded clause may belong to
//! either verb, so attachment is genuinely ambiguous.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::Sentence;

const DETERMINERS: &[&str] = &["the", "a", "every", "this"];
const ADJECTIVES: &[&str] = &["big", "red", "old", "small", "happy", "quiet"];
const NOUNS: &[&str] = &[
    "dog",
    "cat",
    "man",
    "park",
    "telescope",
    "house",
    "idea",
    "book",
    "river",
    "garden",
    "child",
    "letter",
    "city",
    "road",
    "teacher",
    "song",
    "window",
    "friend",
    "box",
    "hill",
    "story",
    "table",
    "bird",
    "car",
];
const VERBS: &[&str] = &[
    "saw", "liked", "found", "took", "sees", "owns", "wrote", "met", "left",
];
/// Verbs taking a `that` clause.
const SAY_VERBS: &[&str] = &["said", "thought", "knew", "heard"];
const ADVERBS: &[&str] = &["quickly", "often", "never"];
const TEMPORAL: &[&str] = &["yesterday", "today", "again"];
/// Prepositions that usually attach to the verb.
const VERB_PREPS: &[&str] = &["with", "on", "to"];
/// Prepositions that usually attach to the preceding noun.
const NOUN_PREPS: &[&str] = &["of", "from", "near"];
/// Probability that a prepositional phrase follows its preposition's preference.
pub const PREFERENCE: f64 = 0.8;

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    tokens: Vec<(&'static str, &'static str, usize, &'static str)>,
}

impl Builder<'_> {
    fn push(&mut self, pool: &[&'static str], pos: &'static str) -> usize {
        let form = pool.choose(self.rng).expect("nonempty pool");
        self.tokens.push((form, pos, 0, ""));
        self.tokens.len()
    }

    fn last_noun(&self) -> usize {
        self.tokens
            .iter()
            .rposition(|t| t.1 == "NN")
            .expect("a noun was pushed")
            + 1
    }

    fn attach(&mut self, dependent: usize, head: usize, label: &'static str) {
        let t = &mut self.tokens[dependent - 1];
        t.2 = head;
        t.3 = label;
    }

    fn noun_phrase(&mut self, depth: usize) -> usize {
        let det = self.rng.gen_bool(0.7).then(|| self.push(DETERMINERS, "DT"));
        let adjs: Vec<usize> = (0..self.rng.gen_range(0..=2))
            .map(|_| self.push(ADJECTIVES, "JJ"))
            .collect();
        let noun = self.push(NOUNS, "NN");
        if let Some(d) = det {
            self.attach(d, noun, "det");
        }
        for a in adjs {
            self.attach(a, noun, "amod");
        }
        if depth < 2 && self.rng.gen_bool(0.1) {
            let cc = self.push(&["and"], "CC");
            let other = self.noun_phrase(depth + 1);
            self.attach(cc, other, "cc");
            self.attach(other, noun, "conj");
        } else if depth < 2 && self.rng.gen_bool(0.15) {
            let that = self.push(&["that"], "WDT");
            let verb = self.push(VERBS, "VB");
            self.attach(that, verb, "nsubj");
            self.attach(verb, noun, "acl");
            let obj = self.noun_phrase(depth + 1);
            self.attach(obj, verb, "obj");
        }
        noun
    }

    /// A prepositional phrase attached to `verb` or to `noun`, which must be
    /// on the right frontier of the tree built so far.
    fn prep_phrase(&mut self, verb: usize, noun: Option<usize>, depth: usize) {
        let verbal = self.rng.gen_bool(0.5);
        let p = self.push(if verbal { VERB_PREPS } else { NOUN_PREPS }, "IN");
        let obj = self.noun_phrase(depth);
        self.attach(obj, p, "pobj");
        let to_verb = match noun {
            None => true,
            Some(_) => verbal == self.rng.gen_bool(PREFERENCE),
        };
        match (to_verb, noun) {
            (false, Some(n)) => self.attach(p, n, "nmod"),
            _ => self.attach(p, verb, "obl"),
        }
    }

    /// Push a clause and return its verb. `open` receives the verbs whose
    /// clauses end at the last token, outermost first.
    fn clause(&mut self, depth: usize, open: &mut Vec<usize>) -> usize {
        let subj = self.noun_phrase(0);
        let adv = self.rng.gen_bool(0.2).then(|| self.push(ADVERBS, "RB"));
        let says = depth < 2 && self.rng.gen_bool(0.3);
        let verb = self.push(if says { SAY_VERBS } else { VERBS }, "VB");
        self.attach(subj, verb, "nsubj");
        if let Some(a) = adv {
            self.attach(a, verb, "advmod");
        }
        open.push(verb);
        if says {
            let that = self.push(&["that"], "IN");
            let inner = self.clause(depth + 1, open);
            self.attach(that, inner, "mark");
            self.attach(inner, verb, "ccomp");
            return verb;
        }
        let mut has_object = false;
        if self.rng.gen_bool(0.75) {
            let obj = self.noun_phrase(0);
            self.attach(obj, verb, "obj");
            has_object = true;
        }
        for _ in 0..self.rng.gen_range(0..=2) {
            // The most recent noun is always on the right frontier.
            let noun = has_object.then(|| self.last_noun());
            self.prep_phrase(verb, noun, 1);
            has_object = true;
        }
        verb
    }

    fn sentence(&mut self) {
        let mut open = Vec::new();
        let verb = self.clause(0, &mut open);
        if open.len() > 1 && self.rng.gen_bool(0.5) {
            // Outer verb or innermost verb; anything between would cross nothing either.
            let t = self.push(TEMPORAL, "RB");
            let head = if self.rng.gen_bool(0.5) {
                open[0]
            } else {
                open[open.len() - 1]
            };
            self.attach(t, head, "advmod");
        }
        if self.rng.gen_bool(0.8) {
            let dot = self.push(&["."], ".");
            self.attach(dot, verb, "punct");
        }
        self.attach(verb, 0, "root");
    }
}

/// `count` projective sentences, fully determined by `seed`.
pub fn toy_treebank(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut b = Builder {
                rng: &mut rng,
                tokens: Vec::new(),
            };
            b.sentence();
            Sentence::from_parts(&b.tokens)
        })
        .collect()
}
