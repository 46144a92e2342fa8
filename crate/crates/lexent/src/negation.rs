//! Recursively negated entailment datasets over word pairs.
//!
//! A base example relates two words by one of hypernym, hyponym, equal, or
//! disjoint. Negating the premise, the hypothesis, or both maps the
//! relation through a fixed table ([`negate_relation`]); `neutral` emerges
//! under negation and quickly dominates. Applying the three negation
//! patterns to every example of one generation yields the next, so depth
//! `k` holds `3^k` derivations per base pair.
//!
//! [`generate_dataset`] builds a training set from all derivations up to a
//! cutoff depth and per-depth test sets beyond it, label-matched to the
//! training distribution by stratified downsampling.
//!
//! [`set_semantics_oracle`] validates the table independently: words denote
//! sets, negation is complement, and the relation is recomputed from set
//! algebra.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum NegationError {
    #[error("base example {index}: relation `{relation}` is not a base relation")]
    BadBaseRelation { index: usize, relation: Relation },
    #[error("train depth {train} must be below every test depth, got {test}")]
    DepthOrder { train: usize, test: usize },
    #[error("no test depths given")]
    NoTestDepths,
    #[error("word `{0}` has no denotation")]
    UnknownWord(String),
    #[error("degenerate denotation for `{0}`: must be a nonempty proper subset")]
    DegenerateDenotation(String),
    #[error("denotations of `{0}` and `{1}` exhaust the universe")]
    ExhaustiveUnion(String, String),
    #[error("line {line}: expected 3 tab-separated columns")]
    BadColumns { line: usize },
    #[error("line {line}: unknown relation `{value}`")]
    BadRelation { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word-level entailment relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Hypernym,
    Hyponym,
    Equal,
    Disjoint,
    Neutral,
}

impl Relation {
    /// The four relations allowed in base data; `neutral` only arises
    /// through negation.
    pub const BASE: [Relation; 4] = [
        Relation::Hypernym,
        Relation::Hyponym,
        Relation::Equal,
        Relation::Disjoint,
    ];

    /// The relation of the swapped pair: hypernym and hyponym are
    /// converses, the rest are symmetric.
    pub fn swap(self) -> Relation {
        match self {
            Relation::Hypernym => Relation::Hyponym,
            Relation::Hyponym => Relation::Hypernym,
            other => other,
        }
    }
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Relation::Hypernym => "hypernym",
            Relation::Hyponym => "hyponym",
            Relation::Equal => "equal",
            Relation::Disjoint => "disjoint",
            Relation::Neutral => "neutral",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hypernym" => Ok(Relation::Hypernym),
            "hyponym" => Ok(Relation::Hyponym),
            "equal" => Ok(Relation::Equal),
            "disjoint" => Ok(Relation::Disjoint),
            "neutral" => Ok(Relation::Neutral),
            other => Err(format!("unknown relation `{other}`")),
        }
    }
}

/// A word under a stack of `not` prefixes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term {
    pub word: String,
    pub negations: usize,
}

impl Term {
    pub fn new(word: &str) -> Self {
        Self {
            word: word.to_string(),
            negations: 0,
        }
    }

    /// The term with one more negation.
    pub fn negated(&self) -> Self {
        Self {
            word: self.word.clone(),
            negations: self.negations + 1,
        }
    }

    /// Linearized surface form: `not` repeated, space separated, then the
    /// word, so consumers see a sequence of length `negations + 1`.
    pub fn surface(&self) -> String {
        let mut s = String::with_capacity(4 * self.negations + self.word.len());
        for _ in 0..self.negations {
            s.push_str("not ");
        }
        s.push_str(&self.word);
        s
    }
}

/// One labeled example; `level` is the derivation depth (number of
/// expansions applied since the base data).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegExample {
    pub premise: Term,
    pub hypothesis: Term,
    pub relation: Relation,
    pub level: usize,
}

impl NegExample {
    pub fn base(premise: &str, hypothesis: &str, relation: Relation) -> Self {
        Self {
            premise: Term::new(premise),
            hypothesis: Term::new(hypothesis),
            relation,
            level: 0,
        }
    }
}

/// Maps a relation through negation of the premise and/or hypothesis.
///
/// `(false, false)` is the identity; the other three patterns follow the
/// negation table. Total on all inputs.
pub fn negate_relation(rel: Relation, negate_p: bool, negate_q: bool) -> Relation {
    use Relation::*;
    match (rel, negate_p, negate_q) {
        (r, false, false) => r,
        (Neutral, _, _) => Neutral,
        (Disjoint, true, true) => Neutral,
        (Disjoint, false, true) => Hyponym,
        (Disjoint, true, false) => Hypernym,
        (Equal, true, true) => Equal,
        (Equal, false, true) => Disjoint,
        (Equal, true, false) => Disjoint,
        (Hyponym, true, true) => Hypernym,
        (Hyponym, false, true) => Disjoint,
        (Hyponym, true, false) => Neutral,
        (Hypernym, true, true) => Hyponym,
        (Hypernym, false, true) => Neutral,
        (Hypernym, true, false) => Disjoint,
    }
}

/// The three negation patterns applied at each expansion, in emission
/// order: (not-p, not-q), (p, not-q), (not-p, q).
pub const NEGATION_PATTERNS: [(bool, bool); 3] = [(true, true), (false, true), (true, false)];

/// Applies one complete negation: every input example yields exactly three
/// variants with incremented level, so the output is 3x the input size.
pub fn expand_once(examples: &[NegExample]) -> Vec<NegExample> {
    let mut out = Vec::with_capacity(3 * examples.len());
    for example in examples {
        for (negate_p, negate_q) in NEGATION_PATTERNS {
            let premise = if negate_p {
                example.premise.negated()
            } else {
                example.premise.clone()
            };
            let hypothesis = if negate_q {
                example.hypothesis.negated()
            } else {
                example.hypothesis.clone()
            };
            out.push(NegExample {
                premise,
                hypothesis,
                relation: negate_relation(example.relation, negate_p, negate_q),
                level: example.level + 1,
            });
        }
    }
    out
}

/// Folds [`negate_relation`] over a derivation's pattern sequence.
pub fn replay_relation(base: Relation, patterns: &[(bool, bool)]) -> Relation {
    patterns
        .iter()
        .fold(base, |rel, &(p, q)| negate_relation(rel, p, q))
}

/// Options for [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Train on the cumulative union of base data and all expansions up to
    /// this depth.
    pub train_depth: usize,
    /// One held-out test set per depth; all must exceed `train_depth`.
    pub test_depths: Vec<usize>,
    /// Target size of each test set after label-matched downsampling.
    pub downsample_to: usize,
    pub seed: u64,
    /// When set, the depth-k test pool holds every derivation of depth in
    /// (train_depth, k] instead of exactly k.
    pub cumulative_tests: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            train_depth: 2,
            test_depths: vec![3, 4, 5, 6],
            downsample_to: 10_000,
            seed: 0,
            cumulative_tests: false,
        }
    }
}

/// The generated splits: one training set and one test set per requested
/// depth, in the order given.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub train: Vec<NegExample>,
    pub tests: Vec<(usize, Vec<NegExample>)>,
}

type SurfaceKey = (String, usize, String, usize);

fn surface_key(e: &NegExample) -> SurfaceKey {
    (
        e.premise.word.clone(),
        e.premise.negations,
        e.hypothesis.word.clone(),
        e.hypothesis.negations,
    )
}

/// Generates the train/test splits by recursive negation.
///
/// The training set is the union of the base data and every expansion up
/// to `train_depth`, deduplicated by surface form. Each test set holds
/// derivations of its depth only (unless `cumulative_tests`), with any
/// surface form already seen at a shallower depth removed, then
/// downsampled to match the training label distribution by
/// largest-remainder rounding. Deterministic given the seed.
///
/// Recursive table application is order-dependent: different derivations
/// of the same surface pair can disagree once an intermediate pair leaves
/// the table's non-degenerate regime (e.g. a hyponym base reaches
/// `not not p / not q` as disjoint via negate-both-then-premise but as
/// neutral via premise-then-both). Each surface form keeps the label of
/// its first derivation in enumeration order; later conflicting
/// derivations are dropped and counted in the log.
pub fn generate_dataset(
    base: &[NegExample],
    opts: &GenerateOptions,
) -> Result<GeneratedDataset, NegationError> {
    for (index, e) in base.iter().enumerate() {
        if !Relation::BASE.contains(&e.relation) {
            return Err(NegationError::BadBaseRelation {
                index,
                relation: e.relation,
            });
        }
    }
    if opts.test_depths.is_empty() {
        return Err(NegationError::NoTestDepths);
    }
    let max_depth = *opts.test_depths.iter().max().expect("nonempty");
    if let Some(&bad) = opts.test_depths.iter().find(|&&d| d <= opts.train_depth) {
        return Err(NegationError::DepthOrder {
            train: opts.train_depth,
            test: bad,
        });
    }

    // Enumerate every derivation level once; levels[k] holds depth-k items.
    let mut levels: Vec<Vec<NegExample>> = vec![base.to_vec()];
    for _ in 0..max_depth {
        let next = expand_once(levels.last().expect("nonempty"));
        levels.push(next);
    }

    // First-seen dedup across levels; conflicting rederivations are dropped.
    let mut seen: BTreeMap<SurfaceKey, Relation> = BTreeMap::new();
    let mut conflicts = 0usize;
    let mut claim = |e: &NegExample, conflicts: &mut usize| -> bool {
        match seen.get(&surface_key(e)) {
            Some(&rel) => {
                if rel != e.relation {
                    *conflicts += 1;
                }
                false
            }
            None => {
                seen.insert(surface_key(e), e.relation);
                true
            }
        }
    };

    let mut train = Vec::new();
    for level in levels.iter().take(opts.train_depth + 1) {
        for e in level {
            if claim(e, &mut conflicts) {
                train.push(e.clone());
            }
        }
    }

    let train_histogram = label_histogram(&train);
    let mut tests = Vec::new();
    let mut depths = opts.test_depths.clone();
    depths.sort_unstable();
    for &depth in &depths {
        let mut pool = Vec::new();
        let range = if opts.cumulative_tests {
            (opts.train_depth + 1)..=depth
        } else {
            depth..=depth
        };
        for k in range {
            for e in &levels[k] {
                if claim(e, &mut conflicts) {
                    pool.push(e.clone());
                }
            }
        }
        let sampled = downsample(
            pool,
            &train_histogram,
            train.len(),
            opts.downsample_to,
            derive_seed(opts.seed, depth as u64),
        );
        tests.push((depth, sampled));
    }
    if conflicts > 0 {
        log::warn!("dropped {conflicts} rederivations with order-dependent labels");
    }
    // Restore the caller's depth order.
    let mut ordered = Vec::with_capacity(opts.test_depths.len());
    for &depth in &opts.test_depths {
        let found = tests
            .iter()
            .find(|(d, _)| *d == depth)
            .expect("generated above");
        ordered.push(found.clone());
    }
    Ok(GeneratedDataset {
        train,
        tests: ordered,
    })
}

fn label_histogram(examples: &[NegExample]) -> BTreeMap<Relation, usize> {
    let mut hist = BTreeMap::new();
    for e in examples {
        *hist.entry(e.relation).or_insert(0) += 1;
    }
    hist
}

/// Largest-remainder allocation of `total` slots proportional to `hist`.
fn largest_remainder_targets(
    hist: &BTreeMap<Relation, usize>,
    hist_total: usize,
    total: usize,
) -> BTreeMap<Relation, usize> {
    let mut targets = BTreeMap::new();
    let mut remainders: Vec<(Relation, f64)> = Vec::new();
    let mut assigned = 0;
    for (&rel, &count) in hist {
        let exact = total as f64 * count as f64 / hist_total as f64;
        let floor = exact.floor() as usize;
        targets.insert(rel, floor);
        assigned += floor;
        remainders.push((rel, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (rel, _) in remainders.into_iter().take(total.saturating_sub(assigned)) {
        *targets.get_mut(&rel).expect("inserted above") += 1;
    }
    targets
}

fn downsample(
    pool: Vec<NegExample>,
    train_hist: &BTreeMap<Relation, usize>,
    train_total: usize,
    downsample_to: usize,
    seed: u64,
) -> Vec<NegExample> {
    let targets = largest_remainder_targets(train_hist, train_total, downsample_to);
    let mut by_label: BTreeMap<Relation, Vec<NegExample>> = BTreeMap::new();
    for e in pool {
        by_label.entry(e.relation).or_default().push(e);
    }
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (rel, target) in targets {
        let mut candidates = by_label.remove(&rel).unwrap_or_default();
        if candidates.len() < target {
            log::warn!(
                "label {rel}: pool has {} examples, need {target}; taking all",
                candidates.len()
            );
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(target);
        out.extend(candidates);
    }
    out
}

/// Computes the relation between two possibly-negated terms from set
/// denotations, interpreting negation as complement.
///
/// Every referenced word must denote a nonempty proper subset of the
/// universe, and the two words' denotations must not jointly exhaust it.
pub fn set_semantics_oracle(
    denotations: &BTreeMap<String, BTreeSet<u32>>,
    universe: &BTreeSet<u32>,
    p: &Term,
    q: &Term,
) -> Result<Relation, NegationError> {
    let base_p = checked_denotation(denotations, universe, &p.word)?;
    let base_q = checked_denotation(denotations, universe, &q.word)?;
    if base_p.union(base_q).count() == universe.len() {
        return Err(NegationError::ExhaustiveUnion(
            p.word.clone(),
            q.word.clone(),
        ));
    }
    let set_p = apply_negations(base_p, universe, p.negations);
    let set_q = apply_negations(base_q, universe, q.negations);
    Ok(relation_of_sets(&set_p, &set_q))
}

fn checked_denotation<'a>(
    denotations: &'a BTreeMap<String, BTreeSet<u32>>,
    universe: &BTreeSet<u32>,
    word: &str,
) -> Result<&'a BTreeSet<u32>, NegationError> {
    let set = denotations
        .get(word)
        .ok_or_else(|| NegationError::UnknownWord(word.to_string()))?;
    if set.is_empty() || set.len() >= universe.len() || !set.is_subset(universe) {
        return Err(NegationError::DegenerateDenotation(word.to_string()));
    }
    Ok(set)
}

fn apply_negations(set: &BTreeSet<u32>, universe: &BTreeSet<u32>, negations: usize) -> BTreeSet<u32> {
    if negations % 2 == 0 {
        set.clone()
    } else {
        universe.difference(set).copied().collect()
    }
}

fn relation_of_sets(p: &BTreeSet<u32>, q: &BTreeSet<u32>) -> Relation {
    if p == q {
        Relation::Equal
    } else if p.is_subset(q) {
        Relation::Hyponym
    } else if q.is_subset(p) {
        Relation::Hypernym
    } else if p.intersection(q).next().is_none() {
        Relation::Disjoint
    } else {
        Relation::Neutral
    }
}

/// Writes `premise<TAB>hypothesis<TAB>relation` lines.
pub fn write_examples_tsv<W: Write>(
    examples: &[NegExample],
    mut writer: W,
) -> Result<(), NegationError> {
    for e in examples {
        writeln!(
            writer,
            "{}\t{}\t{}",
            e.premise.surface(),
            e.hypothesis.surface(),
            e.relation
        )?;
    }
    Ok(())
}

/// Reads base word pairs from `word<TAB>word<TAB>relation` lines.
pub fn read_base_tsv<R: BufRead>(reader: R) -> Result<Vec<NegExample>, NegationError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(NegationError::BadColumns { line: lineno });
        }
        let relation: Relation = fields[2]
            .trim()
            .parse()
            .map_err(|_| NegationError::BadRelation {
                line: lineno,
                value: fields[2].trim().to_string(),
            })?;
        out.push(NegExample::base(fields[0].trim(), fields[1].trim(), relation));
    }
    Ok(out)
}
