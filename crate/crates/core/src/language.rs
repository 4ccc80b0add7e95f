//! Words over learned tokens.
//!
//! A word is a sequence of tokens, each an observation rather than a symbol.
//! Reading a word means choosing a symbol for every token. The
//! [`CandidateGraph`] limits each token to the symbols with enough global
//! support, and the rules of an [`IntegrityConstraintSet`] reject readings
//! that interpret tokens inconsistently.
//!
//! Rules come in two kinds. Similarity rules may prune a partial reading
//! while a search runs. Dissimilarity rules only judge complete readings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::support::{LocalSupport, SupportMap};

/// Position of a token within its word.
pub type TokenId = usize;

/// Symbol chosen for each token.
pub type Assignment<S> = BTreeMap<TokenId, S>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet<S> {
    symbols: Vec<S>,
}

impl<S: Ord + Clone + fmt::Debug> Alphabet<S> {
    /// Symbols keep the given order, which must not repeat.
    pub fn new(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<S> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(Error::Input("an alphabet needs at least one symbol".into()));
        }
        let distinct: BTreeSet<&S> = symbols.iter().collect();
        if distinct.len() != symbols.len() {
            return Err(Error::Input(format!("alphabet {symbols:?} repeats a symbol")));
        }
        Ok(Self { symbols })
    }

    pub fn contains(&self, symbol: &S) -> bool {
        self.symbols.contains(symbol)
    }

    pub fn symbols(&self) -> &[S] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiLexicalToken<P> {
    pub id: TokenId,
    pub payload: P,
}

/// Bipartite graph from tokens to the symbols they may stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph<S> {
    c_l: f64,
    right: Vec<S>,
    /// Every token, with its edges sorted by descending confidence and then
    /// symbol order.
    adjacency: BTreeMap<TokenId, Vec<(S, f64)>>,
}

impl<S: Ord + Clone + fmt::Debug> CandidateGraph<S> {
    pub fn c_l(&self) -> f64 {
        self.c_l
    }

    pub fn symbols(&self) -> &[S] {
        &self.right
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn contains_token(&self, token: TokenId) -> bool {
        self.adjacency.contains_key(&token)
    }

    /// Candidate symbols of `token`, strongest first. Unknown tokens have none.
    pub fn edges(&self, token: TokenId) -> &[(S, f64)] {
        self.adjacency.get(&token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn confidence(&self, token: TokenId, symbol: &S) -> Option<f64> {
        self.edges(token)
            .iter()
            .find(|(s, _)| s == symbol)
            .map(|(_, c)| *c)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum()
    }

    /// All edges as `(token, symbol, confidence)`.
    pub fn edge_list(&self) -> Vec<(TokenId, S, f64)> {
        self.adjacency
            .iter()
            .flat_map(|(&t, es)| es.iter().map(move |(s, c)| (t, s.clone(), *c)))
            .collect()
    }

    /// Tokens with no candidate symbol at all.
    pub fn unmappable(&self) -> Vec<TokenId> {
        self.adjacency
            .iter()
            .filter(|(_, e)| e.is_empty())
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Adds an edge `(t, s)` for every alphabet symbol `s` whose support for
/// token `t` is non-zero and at least `c_l`. Edges keep the support value
/// unchanged.
pub fn build_candidate_graph<S: Ord + Clone + fmt::Debug>(
    support_maps: &[(TokenId, SupportMap<S>)],
    alphabet: &Alphabet<S>,
    c_l: f64,
) -> CandidateGraph<S> {
    let mut adjacency = BTreeMap::new();
    for (token, support) in support_maps {
        let mut edges: Vec<(S, f64)> = support
            .iter()
            .filter(|(s, w)| *w > 0.0 && *w >= c_l && alphabet.contains(s))
            .map(|(s, w)| (s.clone(), w))
            .collect();
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        adjacency.entry(*token).or_insert_with(Vec::new).extend(edges);
    }
    CandidateGraph {
        c_l,
        right: alphabet.symbols().to_vec(),
        adjacency,
    }
}

/// Thresholds shared by the constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    /// Global support needed to accept a token's tag outright.
    pub c_h: f64,
    /// Global support needed for a candidate edge.
    pub c_l: f64,
    /// Neighbours consulted for global support.
    pub k: usize,
    /// Largest local support that still counts as consistent.
    pub epsilon: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            c_h: 0.80,
            c_l: 0.10,
            k: 1000,
            epsilon: 10.0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.c_l) || !(0.0..=1.0).contains(&self.c_h) {
            return Err(Error::Parameter(format!(
                "c_l = {} and c_h = {} must lie in [0, 1]",
                self.c_l, self.c_h
            )));
        }
        if self.c_l > self.c_h {
            return Err(Error::Parameter(format!(
                "c_l = {} exceeds c_h = {}",
                self.c_l, self.c_h
            )));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Parameter(format!(
                "epsilon = {} must be non-negative",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Similarity,
    Dissimilarity,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub rule: String,
    pub tokens: Vec<TokenId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleVerdict {
    Pass,
    Violated(Vec<Violation>),
}

impl RuleVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, RuleVerdict::Pass)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            RuleVerdict::Pass => &[],
            RuleVerdict::Violated(v) => v,
        }
    }
}

/// Pairwise comparison of the tokens of one word.
pub trait TokenMetric: Sync {
    /// Matched-feature distance between two tokens; `None` when they share
    /// no feature.
    fn pair_distance(&self, a: TokenId, b: TokenId) -> Option<f64>;

    /// Mean of [`TokenMetric::pair_distance`] over `peers`.
    fn local_support(&self, token: TokenId, peers: &[TokenId]) -> Option<LocalSupport> {
        if peers.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in peers {
            match self.pair_distance(token, p) {
                Some(d) => total += d,
                None => return Some(LocalSupport::Incomparable),
            }
        }
        Some(LocalSupport::Distance(total / peers.len() as f64))
    }
}

/// A metric without features: every pair is incomparable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMetric;

impl TokenMetric for NoMetric {
    fn pair_distance(&self, _: TokenId, _: TokenId) -> Option<f64> {
        None
    }
}

/// Explicit table of pair distances, symmetric by construction.
#[derive(Debug, Clone, Default)]
pub struct TableMetric {
    distances: BTreeMap<(TokenId, TokenId), f64>,
}

impl TableMetric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, a: TokenId, b: TokenId, distance: f64) {
        self.distances.insert((a.min(b), a.max(b)), distance);
    }
}

impl TokenMetric for TableMetric {
    fn pair_distance(&self, a: TokenId, b: TokenId) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        self.distances.get(&(a.min(b), a.max(b))).copied()
    }
}

/// What a rule sees while a search is in progress.
pub struct SearchState<'a, S> {
    pub word: &'a [TokenId],
    pub assignment: &'a Assignment<S>,
    /// Tokens not yet assigned, with the symbols they may still take.
    pub open: &'a BTreeMap<TokenId, Vec<S>>,
}

pub trait IntegrityRule<S>: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> ConstraintKind;

    /// Violations of a complete assignment.
    fn check(
        &self,
        word: &[TokenId],
        assignment: &Assignment<S>,
        metrics: &dyn TokenMetric,
    ) -> Vec<Violation>;

    /// Reasons to abandon a partial assignment, empty to keep searching.
    /// Must stay empty whenever some extension of the partial assignment
    /// could still pass [`IntegrityRule::check`].
    fn prune(&self, _state: &SearchState<'_, S>, _metrics: &dyn TokenMetric) -> Vec<Violation> {
        Vec::new()
    }
}

/// The integrity constraints of a language together with their thresholds.
pub struct IntegrityConstraintSet<S> {
    params: Params,
    rules: Vec<Box<dyn IntegrityRule<S>>>,
}

impl<S> fmt::Debug for IntegrityConstraintSet<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrityConstraintSet")
            .field("params", &self.params)
            .field(
                "rules",
                &self.rules.iter().map(|r| r.name().to_string()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl<S: Ord + Clone> IntegrityConstraintSet<S> {
    pub fn new(params: Params) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            rules: Vec::new(),
        })
    }

    pub fn with_rule(mut self, rule: impl IntegrityRule<S> + 'static) -> Self {
        self.rules.push(Box::new(rule));
        self
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn rules(&self) -> impl Iterator<Item = &dyn IntegrityRule<S>> {
        self.rules.iter().map(|r| r.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Evaluates every rule on a complete assignment. Violations are sorted,
    /// so the verdict does not depend on how `word` is ordered.
    pub fn assignment_satisfies(
        &self,
        word: &[TokenId],
        assignment: &Assignment<S>,
        metrics: &dyn TokenMetric,
    ) -> RuleVerdict {
        let mut sorted = word.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut violations: Vec<Violation> = self
            .rules
            .iter()
            .flat_map(|r| r.check(&sorted, assignment, metrics))
            .collect();
        if violations.is_empty() {
            return RuleVerdict::Pass;
        }
        violations.sort();
        violations.dedup();
        RuleVerdict::Violated(violations)
    }

    /// Violations from the first similarity rule that prunes, empty if none
    /// does.
    pub fn prune(&self, state: &SearchState<'_, S>, metrics: &dyn TokenMetric) -> Vec<Violation> {
        for rule in self.rules.iter().filter(|r| r.kind() == ConstraintKind::Similarity) {
            let v = rule.prune(state, metrics);
            if !v.is_empty() {
                return v;
            }
        }
        Vec::new()
    }
}

/// Two tokens of one word that look too different (pair distance above
/// `epsilon`) may not stand for the same symbol.
#[derive(Debug, Clone)]
pub struct PairwiseDissimilarity {
    pub epsilon: f64,
}

impl<S: Ord + Clone + Send + Sync> IntegrityRule<S> for PairwiseDissimilarity {
    fn name(&self) -> &str {
        "pairwise-dissimilarity"
    }

    fn kind(&self) -> ConstraintKind {
        ConstraintKind::Dissimilarity
    }

    fn check(
        &self,
        word: &[TokenId],
        assignment: &Assignment<S>,
        metrics: &dyn TokenMetric,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, &a) in word.iter().enumerate() {
            for &b in &word[i + 1..] {
                let (Some(sa), Some(sb)) = (assignment.get(&a), assignment.get(&b)) else {
                    continue;
                };
                if sa != sb {
                    continue;
                }
                if let Some(d) = metrics.pair_distance(a, b) {
                    if d > self.epsilon {
                        out.push(Violation {
                            rule: "pairwise-dissimilarity".into(),
                            tokens: vec![a.min(b), a.max(b)],
                            detail: format!("distance {d:.3} > {}", self.epsilon),
                        });
                    }
                }
            }
        }
        out
    }
}
