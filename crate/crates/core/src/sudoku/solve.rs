use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{conflicts, valid, Board, Provenance, CELLS};
use crate::error::Result;
use crate::language::{
    Assignment, CandidateGraph, ConstraintKind, IntegrityConstraintSet, IntegrityRule, Params,
    RuleVerdict, SearchState, TokenId, TokenMetric, Violation,
};
use crate::support::{LocalSupport, SupportMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    NoAmbiguities,
    CorrectedBoard,
    NotSolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellAudit {
    /// 1-based.
    pub row: usize,
    /// 1-based.
    pub col: usize,
    pub value: Option<u8>,
    pub provenance: Provenance,
    /// The cell image held no ink.
    pub empty: bool,
    /// Classifier output, before any thresholding.
    pub tag: Option<u8>,
    /// Global support of `tag`.
    pub confidence: Option<f64>,
    pub support: Option<SupportMap<u8>>,
    /// Candidate symbols of a blank, strongest first.
    pub candidates: Vec<(u8, f64)>,
    /// Against the other cells holding the same digit, when there are any.
    pub local_support: Option<LocalSupport>,
    pub locally_consistent: Option<bool>,
    pub violations: Vec<String>,
    /// Candidates of a blank that the search dropped, with the reason.
    pub rejected: Vec<String>,
}

impl CellAudit {
    fn new(index: usize, board: &Board) -> Self {
        Self {
            row: index / 9 + 1,
            col: index % 9 + 1,
            value: board.value(index),
            provenance: board.cell(index).provenance(),
            empty: false,
            tag: None,
            confidence: None,
            support: None,
            candidates: Vec::new(),
            local_support: None,
            locally_consistent: None,
            violations: Vec::new(),
            rejected: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Tentative assignments tried.
    pub nodes: u64,
    /// Complete assignments checked against the integrity rules.
    pub leaves: u64,
    /// The search stopped at its node budget before finishing.
    pub exhausted: bool,
}

/// Tentative assignments [`solve`] tries before giving up.
pub const NODE_BUDGET: u64 = 500_000;

/// Result of reading one board.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub board: Board,
    pub cells: Vec<CellAudit>,
    pub notes: Vec<String>,
    pub search: SearchStats,
}

impl Serialize for Board {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        self.rows().serialize(s)
    }
}

impl Verdict {
    fn new(outcome: Outcome, board: &Board) -> Self {
        Self {
            outcome,
            board: board.clone(),
            cells: (0..CELLS).map(|i| CellAudit::new(i, board)).collect(),
            notes: Vec::new(),
            search: SearchStats::default(),
        }
    }

    fn record(&mut self, violations: &[Violation]) {
        for v in violations {
            let text = format!("{}: {}", v.rule, v.detail);
            for &t in &v.tokens {
                if t < CELLS && !self.cells[t].violations.contains(&text) {
                    self.cells[t].violations.push(text.clone());
                }
            }
        }
    }

    /// Local support of every filled cell against the other cells holding
    /// the same digit. Only solved cells are held to it; for the others it
    /// is informational.
    pub fn annotate_local_support(&mut self, metrics: &dyn TokenMetric, epsilon: f64) {
        let board = self.board.clone();
        for i in 0..CELLS {
            let Some(d) = board.value(i) else { continue };
            let peers: Vec<TokenId> = (0..CELLS)
                .filter(|&j| j != i && board.value(j) == Some(d))
                .collect();
            let ls = metrics.local_support(i, &peers);
            self.cells[i].local_support = ls;
            self.cells[i].locally_consistent = ls.map(|l| l.is_consistent(epsilon));
        }
    }
}

/// A solved cell must look like the other cells with its digit: its local
/// support against all of them must not exceed `epsilon`.
///
/// During search a cell is only judged once no open cell can still take its
/// digit, because until then its peer set, and hence the mean, can change.
#[derive(Debug, Clone)]
pub struct LocalConsistency {
    pub epsilon: f64,
    pub solved: BTreeSet<TokenId>,
}

impl LocalConsistency {
    fn judge(
        &self,
        token: TokenId,
        symbol: u8,
        word: &[TokenId],
        assignment: &Assignment<u8>,
        metrics: &dyn TokenMetric,
    ) -> Option<Violation> {
        let peers: Vec<TokenId> = word
            .iter()
            .copied()
            .filter(|&t| t != token && assignment.get(&t) == Some(&symbol))
            .collect();
        match metrics.local_support(token, &peers)? {
            LocalSupport::Distance(d) if d > self.epsilon => Some(Violation {
                rule: "local-consistency".into(),
                tokens: vec![token],
                detail: format!(
                    "digit {symbol}: local support {d:.3} > {} against {} cells",
                    self.epsilon,
                    peers.len()
                ),
            }),
            _ => None,
        }
    }
}

impl IntegrityRule<u8> for LocalConsistency {
    fn name(&self) -> &str {
        "local-consistency"
    }

    fn kind(&self) -> ConstraintKind {
        ConstraintKind::Similarity
    }

    fn check(
        &self,
        word: &[TokenId],
        assignment: &Assignment<u8>,
        metrics: &dyn TokenMetric,
    ) -> Vec<Violation> {
        self.solved
            .iter()
            .filter_map(|&t| {
                let s = *assignment.get(&t)?;
                self.judge(t, s, word, assignment, metrics)
            })
            .collect()
    }

    fn prune(&self, state: &SearchState<'_, u8>, metrics: &dyn TokenMetric) -> Vec<Violation> {
        let still_open: BTreeSet<u8> = state.open.values().flatten().copied().collect();
        for &t in &self.solved {
            let Some(&s) = state.assignment.get(&t) else {
                continue;
            };
            if still_open.contains(&s) {
                continue;
            }
            if let Some(v) = self.judge(t, s, state.word, state.assignment, metrics) {
                return vec![v];
            }
        }
        Vec::new()
    }
}

/// The integrity constraints of a handwritten board whose `solved` cells
/// are filled by the search.
pub fn sudoku_rules(params: Params, solved: BTreeSet<TokenId>) -> Result<IntegrityConstraintSet<u8>> {
    let epsilon = params.epsilon;
    Ok(IntegrityConstraintSet::new(params)?.with_rule(LocalConsistency { epsilon, solved }))
}

struct Search<'a> {
    graph_order: Vec<(TokenId, Vec<u8>)>,
    rules: &'a IntegrityConstraintSet<u8>,
    metrics: &'a dyn TokenMetric,
    word: Vec<TokenId>,
    assignment: Assignment<u8>,
    open: BTreeMap<TokenId, Vec<u8>>,
    row: [u16; 9],
    col: [u16; 9],
    bx: [u16; 9],
    stats: SearchStats,
    budget: u64,
    rejected: BTreeMap<TokenId, BTreeSet<String>>,
}

impl Search<'_> {
    fn fits(&self, cell: TokenId, d: u8) -> bool {
        let bit = 1u16 << d;
        let (r, c) = (cell / 9, cell % 9);
        (self.row[r] | self.col[c] | self.bx[r / 3 * 3 + c / 3]) & bit == 0
    }

    fn toggle(&mut self, cell: TokenId, d: u8) {
        let bit = 1u16 << d;
        let (r, c) = (cell / 9, cell % 9);
        self.row[r] ^= bit;
        self.col[c] ^= bit;
        self.bx[r / 3 * 3 + c / 3] ^= bit;
    }

    fn note(&mut self, violations: &[Violation]) {
        for v in violations {
            for &t in &v.tokens {
                if self.open.contains_key(&t) || self.graph_order.iter().any(|(c, _)| *c == t) {
                    self.rejected
                        .entry(t)
                        .or_default()
                        .insert(format!("{}: {}", v.rule, v.detail));
                }
            }
        }
    }

    fn run(&mut self, depth: usize) -> bool {
        if depth == self.graph_order.len() {
            self.stats.leaves += 1;
            return match self
                .rules
                .assignment_satisfies(&self.word, &self.assignment, self.metrics)
            {
                RuleVerdict::Pass => true,
                RuleVerdict::Violated(v) => {
                    self.note(&v);
                    false
                }
            };
        }
        let (cell, candidates) = self.graph_order[depth].clone();
        let remaining = self.open.remove(&cell).unwrap_or_default();
        for d in candidates {
            if !self.fits(cell, d) {
                continue;
            }
            if self.stats.nodes >= self.budget {
                self.stats.exhausted = true;
                break;
            }
            self.stats.nodes += 1;
            self.toggle(cell, d);
            self.assignment.insert(cell, d);
            let state = SearchState {
                word: &self.word,
                assignment: &self.assignment,
                open: &self.open,
            };
            let pruned = self.rules.prune(&state, self.metrics);
            if pruned.is_empty() {
                if self.run(depth + 1) {
                    return true;
                }
            } else {
                self.note(&pruned);
            }
            self.assignment.remove(&cell);
            self.toggle(cell, d);
        }
        self.open.insert(cell, remaining);
        false
    }
}

/// Fills the blanks of `board` along the edges of `graph` so that the rows,
/// columns and boxes hold distinct digits and `rules` pass.
///
/// Blanks are tried fewest-candidates first (row-major on ties), each with
/// its candidates strongest first. Filled cells are never changed. The board
/// counts as not solvable once [`NODE_BUDGET`] assignments have been tried.
pub fn solve(
    board: &Board,
    graph: &CandidateGraph<u8>,
    rules: &IntegrityConstraintSet<u8>,
    metrics: &dyn TokenMetric,
) -> Verdict {
    solve_with_budget(board, graph, rules, metrics, NODE_BUDGET)
}

/// [`solve`] with a caller-chosen node budget.
pub fn solve_with_budget(
    board: &Board,
    graph: &CandidateGraph<u8>,
    rules: &IntegrityConstraintSet<u8>,
    metrics: &dyn TokenMetric,
    budget: u64,
) -> Verdict {
    let mut verdict = Verdict::new(Outcome::NotSolvable, board);
    let blanks = board.blanks();
    for &b in &blanks {
        verdict.cells[b].candidates = graph
            .edges(b)
            .iter()
            .filter(|(s, _)| (1..=9).contains(s))
            .cloned()
            .collect();
    }

    let clashes = conflicts(board);
    if !clashes.is_empty() {
        verdict.record(&clashes);
        verdict.notes.push(format!(
            "{} pairs of filled cells break the row, column or box rules",
            clashes.len()
        ));
        return verdict;
    }
    let unmappable: Vec<usize> = blanks
        .iter()
        .copied()
        .filter(|&b| verdict.cells[b].candidates.is_empty())
        .collect();
    if !unmappable.is_empty() {
        let names: Vec<String> = unmappable
            .iter()
            .map(|&i| format!("r{}c{}", i / 9 + 1, i % 9 + 1))
            .collect();
        verdict
            .notes
            .push(format!("unmappable cells (no candidate symbol): {}", names.join(", ")));
        return verdict;
    }
    if blanks.is_empty() {
        verdict.outcome = Outcome::NoAmbiguities;
        return verdict;
    }

    let mut order: Vec<(TokenId, Vec<u8>)> = blanks
        .iter()
        .map(|&b| (b, verdict.cells[b].candidates.iter().map(|c| c.0).collect()))
        .collect();
    order.sort_by_key(|(cell, c)| (c.len(), *cell));

    let mut search = Search {
        open: order.iter().cloned().collect(),
        graph_order: order,
        rules,
        metrics,
        word: (0..CELLS).collect(),
        assignment: (0..CELLS)
            .filter_map(|i| board.value(i).map(|d| (i, d)))
            .collect(),
        row: [0; 9],
        col: [0; 9],
        bx: [0; 9],
        stats: SearchStats::default(),
        budget,
        rejected: BTreeMap::new(),
    };
    for i in 0..CELLS {
        if let Some(d) = board.value(i) {
            search.toggle(i, d);
        }
    }
    let found = search.run(0);
    verdict.search = search.stats;
    for (cell, reasons) in std::mem::take(&mut search.rejected) {
        verdict.cells[cell].rejected = reasons.into_iter().collect();
    }

    if found {
        let mut solved = board.clone();
        for &b in &blanks {
            solved.set(b, search.assignment.get(&b).copied(), Provenance::Solved);
        }
        assert!(
            valid(&solved).unwrap_or(false),
            "solver produced an invalid board:\n{solved}"
        );
        let audits = std::mem::take(&mut verdict.cells);
        verdict = Verdict {
            outcome: Outcome::CorrectedBoard,
            cells: audits,
            ..Verdict::new(Outcome::CorrectedBoard, &solved)
        };
        for i in 0..CELLS {
            verdict.cells[i].value = solved.value(i);
            verdict.cells[i].provenance = solved.cell(i).provenance();
        }
        verdict.search = search.stats;
    } else if search.stats.exhausted {
        verdict.notes.push(format!(
            "search over the {} blank cells stopped after {} assignments",
            blanks.len(),
            search.stats.nodes
        ));
    } else {
        verdict.notes.push(format!(
            "no assignment of the {} blank cells satisfies the rules",
            blanks.len()
        ));
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::language::{build_candidate_graph, Alphabet, NoMetric, TableMetric};

    const SOLVED: &str = "\
534678912
672195348
198342567
859761423
426853791
713924856
961537284
287419635
345286179
";

    fn graph(maps: &[(usize, &[(u8, usize)])], c_l: f64) -> CandidateGraph<u8> {
        let maps: Vec<_> = maps
            .iter()
            .map(|(t, m)| (*t, SupportMap::from_counts(m.iter().copied(), 100).unwrap()))
            .collect();
        build_candidate_graph(&maps, &Alphabet::new(1..=9).unwrap(), c_l)
    }

    fn plain_rules() -> IntegrityConstraintSet<u8> {
        IntegrityConstraintSet::new(Params::default()).unwrap()
    }

    #[test]
    fn ambiguous_cell_resolved_by_rules() {
        let truth: Board = SOLVED.parse().unwrap();
        // r1c3 is 4; its reading is torn between 9 and 4.
        let mut b = truth.clone();
        b.set(2, None, Provenance::Predicted);
        let g = graph(&[(2, &[(9, 46), (4, 43), (7, 2)])], 0.10);
        let v = solve(&b, &g, &plain_rules(), &NoMetric);
        assert_eq!(v.outcome, Outcome::CorrectedBoard);
        assert_eq!(v.board.digits(), truth.digits());
        assert_eq!(v.board.cell(2).provenance(), Provenance::Solved);
        assert_eq!(v.cells[2].candidates, vec![(9, 0.46), (4, 0.43)]);
    }

    #[test]
    fn zero_edge_blank_is_unmappable() {
        let mut b: Board = SOLVED.parse().unwrap();
        b.set(2, None, Provenance::Predicted);
        let g = graph(&[(2, &[(9, 5), (4, 3)])], 0.10);
        let v = solve(&b, &g, &plain_rules(), &NoMetric);
        assert_eq!(v.outcome, Outcome::NotSolvable);
        assert!(v.notes[0].contains("r1c3"));
    }

    #[test]
    fn conflicting_filled_cells_not_solvable() {
        let mut d = SOLVED.parse::<Board>().unwrap().digits();
        d.swap(0, 1);
        d.swap(0, 9);
        let b = Board::from_values(&d, Provenance::Predicted).unwrap();
        let v = solve(&b, &graph(&[], 0.1), &plain_rules(), &NoMetric);
        assert_eq!(v.outcome, Outcome::NotSolvable);
        assert!(v.cells.iter().any(|c| !c.violations.is_empty()));
    }

    #[test]
    fn complete_valid_board_has_no_ambiguities() {
        let b: Board = SOLVED.parse().unwrap();
        let v = solve(&b, &graph(&[], 0.1), &plain_rules(), &NoMetric);
        assert_eq!(v.outcome, Outcome::NoAmbiguities);
    }

    /// Cells `[(r1,c1), (r1,c2), (r2,c1), (r2,c2)]` holding `a b / b a` and
    /// spanning two boxes, so that swapping `a` and `b` keeps the grid valid.
    fn swappable_rectangle(b: &Board) -> Option<[usize; 4]> {
        for r1 in 0..9 {
            for r2 in r1 + 1..9 {
                for c1 in 0..9 {
                    for c2 in c1 + 1..9 {
                        let cells = [r1 * 9 + c1, r1 * 9 + c2, r2 * 9 + c1, r2 * 9 + c2];
                        let boxes: BTreeSet<usize> =
                            cells.iter().map(|&i| i / 27 * 3 + i % 9 / 3).collect();
                        let v = cells.map(|i| b.value(i));
                        if boxes.len() == 2 && v[0] == v[3] && v[1] == v[2] {
                            return Some(cells);
                        }
                    }
                }
            }
        }
        None
    }

    #[test]
    fn locally_inconsistent_branch_rejected() {
        let truth: Board = SOLVED.parse().unwrap();
        let rect = swappable_rectangle(&truth).expect("pattern grid has a rectangle");
        let (a, bb) = (truth.value(rect[0]).unwrap(), truth.value(rect[1]).unwrap());

        let mut board = truth.clone();
        let mut maps: Vec<(usize, Vec<(u8, usize)>)> = Vec::new();
        for &cell in &rect {
            board.set(cell, None, Provenance::Predicted);
            // The strongest reading of every cell is the swapped digit.
            let right = truth.value(cell).unwrap();
            let wrong = if right == a { bb } else { a };
            maps.push((cell, vec![(wrong, 55), (right, 45)]));
        }
        let maps: Vec<(usize, &[(u8, usize)])> =
            maps.iter().map(|(c, m)| (*c, m.as_slice())).collect();
        let g = graph(&maps, 0.10);

        // Cells look alike exactly when their true digits agree.
        let mut m = TableMetric::new();
        for i in 0..CELLS {
            for j in i + 1..CELLS {
                let d = if truth.value(i) == truth.value(j) { 4.0 } else { 12.0 };
                m.set(i, j, d);
            }
        }
        let solved: BTreeSet<usize> = rect.into_iter().collect();
        let rules = sudoku_rules(Params::default(), solved).unwrap();
        let v = solve(&board, &g, &rules, &m);
        assert_eq!(v.outcome, Outcome::CorrectedBoard);
        assert_eq!(v.board.digits(), truth.digits());
        assert!(v.cells[rect[0]].rejected.iter().any(|r| r.contains("local-consistency")));

        // Without the local rule the strongest, swapped reading wins.
        let v = solve(&board, &g, &plain_rules(), &m);
        assert_eq!(v.outcome, Outcome::CorrectedBoard);
        assert_eq!(v.board.value(rect[0]), Some(bb));
    }

    #[test]
    fn fully_inconsistent_board_not_solvable() {
        let mut b: Board = SOLVED.parse().unwrap();
        b.set(3, None, Provenance::Predicted);
        let g = graph(&[(3, &[(6, 90)])], 0.10);
        let mut m = TableMetric::new();
        for j in 0..CELLS {
            m.set(3, j, 20.0);
        }
        let rules = sudoku_rules(Params::default(), [3].into_iter().collect()).unwrap();
        let v = solve(&b, &g, &rules, &m);
        assert_eq!(v.outcome, Outcome::NotSolvable);
        assert!(v.cells[3].rejected[0].contains("local-consistency"));
    }

    #[test]
    fn budget_stops_search() {
        let b = Board::empty();
        let maps: Vec<(usize, Vec<(u8, usize)>)> =
            (0..CELLS).map(|i| (i, (1..=9).map(|d| (d, 10)).collect())).collect();
        let refs: Vec<(usize, &[(u8, usize)])> = maps.iter().map(|(i, m)| (*i, m.as_slice())).collect();
        let g = graph(&refs, 0.10);
        let mut m = TableMetric::new();
        for a in 0..CELLS {
            for c in 0..CELLS {
                if a != c {
                    m.set(a, c, 20.0);
                }
            }
        }
        let rules = sudoku_rules(Params::default(), (0..CELLS).collect()).unwrap();
        let v = solve_with_budget(&b, &g, &rules, &m, 5000);
        assert_eq!(v.outcome, Outcome::NotSolvable);
        assert!(v.search.exhausted);
        assert_eq!(v.search.nodes, 5000);
    }

    #[test]
    fn verdict_serializes() {
        let b: Board = SOLVED.parse().unwrap();
        let v = solve(&b, &graph(&[], 0.1), &plain_rules(), &NoMetric);
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["outcome"], "no_ambiguities");
        assert_eq!(json["board"][0][0], 5);
        assert_eq!(json["cells"][80]["row"], 9);
    }
}
