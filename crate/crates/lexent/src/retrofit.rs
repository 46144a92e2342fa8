//! Graph-based retrofitting of embedding matrices.
//!
//! Given an undirected lexical neighbor graph, each word vector is pulled
//! toward its neighbors while staying anchored to its original position.
//! The solver runs Gauss-Seidel sweeps in vocabulary order, each sweep
//! setting
//!
//! ```text
//! x~_j  <-  (alpha_j * x_j + sum_i beta_ji * x~_i) / (alpha_j + sum_i beta_ji)
//! ```
//!
//! over the word's in-vocabulary neighbors `i`. Words with no in-vocabulary
//! neighbors are returned unchanged.
//!
//! [`objective_value`] scores a retrofitted matrix as the sum of anchor
//! terms `alpha_j * ||x~_j - x_j||^2` plus, for each undirected edge, one
//! distance term weighted by the mean of the edge's two directional
//! coefficients. With a symmetric weight rule ([`BetaRule::Constant`]) the
//! sweep above is exact coordinate descent on this objective, so its value
//! never increases from sweep to sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use thiserror::Error;

use crate::embedding::EmbeddingMatrix;

/// Errors from lexicon parsing or retrofitting.
#[derive(Debug, Error)]
pub enum RetrofitError {
    #[error("line {line}: empty word token")]
    EmptyToken { line: usize },
    #[error("asymmetric lexicon: `{from}` lists `{to}` but not vice versa")]
    Asymmetric { from: String, to: String },
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("alpha = 0 for isolated word `{0}`: update undefined")]
    UndefinedUpdate(String),
    #[error("negative alpha {0}")]
    NegativeAlpha(f64),
    #[error("vocabulary mismatch between original and retrofitted matrices")]
    VocabMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected word graph: synonym/hypernym/hyponym links pooled together.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an undirected edge, ignoring self-loops.
    pub fn insert_edge(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.adjacency
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string());
        self.adjacency
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string());
    }

    /// Validates an adjacency map: symmetric, no self-loops.
    pub fn from_adjacency(
        adjacency: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, RetrofitError> {
        for (word, neighbors) in &adjacency {
            for n in neighbors {
                if n == word {
                    return Err(RetrofitError::SelfLoop(word.clone()));
                }
                if !adjacency.get(n).is_some_and(|back| back.contains(word)) {
                    return Err(RetrofitError::Asymmetric {
                        from: word.clone(),
                        to: n.clone(),
                    });
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Parses `word neighbor1 neighbor2 ...` lines.
    ///
    /// The adjacency is symmetrized (union of both directions), self-loops
    /// are dropped, and entries are casefolded to lowercase so they match
    /// embedding vocabularies.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, RetrofitError> {
        let mut lex = Lexicon::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').map(str::trim);
            let word = fields
                .next()
                .filter(|w| !w.is_empty())
                .ok_or(RetrofitError::EmptyToken { line: lineno })?
                .to_lowercase();
            // A word with no neighbors is recorded as isolated.
            lex.adjacency.entry(word.clone()).or_default();
            for neighbor in fields {
                if neighbor.is_empty() {
                    return Err(RetrofitError::EmptyToken { line: lineno });
                }
                lex.insert_edge(&word, &neighbor.to_lowercase());
            }
        }
        Ok(lex)
    }

    /// Neighbors of `word`, empty if unknown.
    pub fn neighbors(&self, word: &str) -> impl Iterator<Item = &str> {
        self.adjacency
            .get(word)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    /// Degree of `word` in the graph.
    pub fn degree(&self, word: &str) -> usize {
        self.adjacency.get(word).map_or(0, BTreeSet::len)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

/// Rule producing the directional edge weight `beta_ji` used when
/// updating word `j` from neighbor `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaRule {
    /// `beta_ji = 1 / (number of in-vocabulary neighbors of j)`.
    InverseDegree,
    /// The same constant for every directed edge.
    Constant(f64),
}

impl BetaRule {
    fn weight(&self, in_vocab_degree: usize) -> f64 {
        match self {
            BetaRule::InverseDegree => 1.0 / in_vocab_degree as f64,
            BetaRule::Constant(c) => *c,
        }
    }
}

/// Solver configuration.
#[derive(Debug, Clone, Copy)]
pub struct RetrofitConfig {
    /// Anchor strength toward the original vector, same for every word.
    pub alpha: f64,
    /// Directional edge weight rule.
    pub beta: BetaRule,
    /// Sweep budget.
    pub max_iterations: usize,
    /// Stop early when no coordinate moves more than this in a sweep.
    pub convergence_tol: f64,
}

impl Default for RetrofitConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: BetaRule::InverseDegree,
            max_iterations: 10,
            convergence_tol: 1e-6,
        }
    }
}

/// Per-word neighbor structure resolved against a concrete vocabulary.
struct ResolvedGraph {
    /// For each vocab index: (neighbor vocab index, beta weight).
    neighbors: Vec<Vec<(usize, f64)>>,
}

fn resolve(
    e: &EmbeddingMatrix,
    lex: &Lexicon,
    cfg: &RetrofitConfig,
) -> Result<ResolvedGraph, RetrofitError> {
    if cfg.alpha < 0.0 {
        return Err(RetrofitError::NegativeAlpha(cfg.alpha));
    }
    let mut neighbors = Vec::with_capacity(e.len());
    for token in e.vocab() {
        let in_vocab: Vec<usize> = lex
            .neighbors(token)
            .filter_map(|n| e.position(n))
            .collect();
        if in_vocab.is_empty() {
            neighbors.push(Vec::new());
            continue;
        }
        let beta = cfg.beta.weight(in_vocab.len());
        neighbors.push(in_vocab.into_iter().map(|i| (i, beta)).collect());
    }
    Ok(ResolvedGraph { neighbors })
}

/// Retrofits `e` to the lexicon, returning the adjusted matrix.
///
/// Lexicon tokens missing from the vocabulary are ignored; vocabulary
/// tokens missing from the lexicon are treated as isolated and returned
/// unchanged. Runs at most `cfg.max_iterations` sweeps, stopping early
/// when the largest per-coordinate change falls below `cfg.convergence_tol`.
pub fn retrofit(
    e: &EmbeddingMatrix,
    lex: &Lexicon,
    cfg: &RetrofitConfig,
) -> Result<EmbeddingMatrix, RetrofitError> {
    let graph = resolve(e, lex, cfg)?;
    if cfg.alpha == 0.0 {
        if let Some(j) = graph.neighbors.iter().position(Vec::is_empty) {
            return Err(RetrofitError::UndefinedUpdate(e.vocab()[j].clone()));
        }
    }
    let original = e.vectors();
    let mut current = original.clone();
    for _ in 0..cfg.max_iterations {
        let mut max_change = 0.0f64;
        for j in 0..e.len() {
            let edges = &graph.neighbors[j];
            if edges.is_empty() {
                continue;
            }
            let mut denom = cfg.alpha;
            let mut numer = original.row(j).mapv(|v| v * cfg.alpha);
            for &(i, beta) in edges {
                denom += beta;
                numer.scaled_add(beta, &current.row(i));
            }
            numer.mapv_inplace(|v| v / denom);
            for (old, new) in current.row(j).iter().zip(numer.iter()) {
                max_change = max_change.max((old - new).abs());
            }
            current.row_mut(j).assign(&numer);
        }
        if max_change < cfg.convergence_tol {
            break;
        }
    }
    EmbeddingMatrix::from_rows(e.vocab().to_vec(), current)
        .map_err(|_| RetrofitError::VocabMismatch)
}

/// Evaluates the retrofitting objective for a candidate solution.
///
/// Anchor terms use `alpha`; each undirected in-vocabulary edge contributes
/// one squared-distance term weighted by the mean of its two directional
/// coefficients, which reduces to the constant for [`BetaRule::Constant`].
pub fn objective_value(
    original: &EmbeddingMatrix,
    retro: &EmbeddingMatrix,
    lex: &Lexicon,
    cfg: &RetrofitConfig,
) -> Result<f64, RetrofitError> {
    if original.vocab() != retro.vocab() || original.dim() != retro.dim() {
        return Err(RetrofitError::VocabMismatch);
    }
    let graph = resolve(original, lex, cfg)?;
    let mut total = 0.0;
    for j in 0..original.len() {
        let diff = &retro.row(j) - &original.row(j);
        total += cfg.alpha * diff.dot(&diff);
        let beta_j = graph.neighbors[j].first().map_or(0.0, |&(_, b)| b);
        for &(i, _) in &graph.neighbors[j] {
            if i < j {
                continue; // count each undirected edge once, from the lower index
            }
            let beta_i = graph.neighbors[i]
                .first()
                .map_or(0.0, |&(_, b)| b);
            let weight = 0.5 * (beta_j + beta_i);
            let gap = &retro.row(j) - &retro.row(i);
            total += weight * gap.dot(&gap);
        }
    }
    Ok(total)
}
