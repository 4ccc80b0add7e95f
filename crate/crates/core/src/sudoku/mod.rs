//! Validation and repair of handwritten Sudoku boards.
//!
//! A board picture is read cell by cell. Cells whose tag has strong global
//! support keep it; the rest become blanks. If the board then holds a valid
//! solution nothing is ambiguous. Otherwise the blanks are filled by
//! backtracking over their candidate symbols, and every filled cell has to
//! look like the board's other cells carrying the same digit.

mod solve;
mod tag;

pub use solve::{
    solve, solve_with_budget, sudoku_rules, CellAudit, LocalConsistency, Outcome, SearchStats,
    Verdict, NODE_BUDGET,
};
pub use tag::{
    assign_tags, observe_board, observe_cell, tag_cells, validate_handwritten, CellObservation,
    verdict_from_observations, TaggedBoard,
};

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::language::Violation;

pub const CELLS: usize = 81;

/// Where a cell's digit came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Read from a text board.
    Given,
    /// Tag of a handwritten cell with strong global support.
    Predicted,
    /// Filled in by the solver.
    Solved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    value: Option<u8>,
    provenance: Provenance,
}

impl Cell {
    pub const BLANK: Cell = Cell {
        value: None,
        provenance: Provenance::Predicted,
    };

    pub fn value(&self) -> Option<u8> {
        self.value
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// A 9×9 grid of digits 1..9 and blanks, indexed row-major from zero.
#[derive(Clone, PartialEq, Eq)]
pub struct Board {
    cells: [Cell; CELLS],
}

impl Default for Board {
    fn default() -> Self {
        Self::empty()
    }
}

impl Board {
    pub fn empty() -> Self {
        Self {
            cells: [Cell::BLANK; CELLS],
        }
    }

    /// Builds a board from 81 row-major values (`0` or `None` for a blank).
    pub fn from_values(values: &[Option<u8>], provenance: Provenance) -> Result<Self> {
        if values.len() != CELLS {
            return Err(Error::Input(format!(
                "a board has {CELLS} cells, got {}",
                values.len()
            )));
        }
        let mut board = Self::empty();
        for (i, v) in values.iter().enumerate() {
            match v {
                None | Some(0) => {}
                Some(d @ 1..=9) => board.set(i, Some(*d), provenance),
                Some(d) => {
                    return Err(Error::Input(format!("cell {i} holds {d}, not a digit 1..9")))
                }
            }
        }
        Ok(board)
    }

    pub fn from_digits(digits: &[u8; CELLS]) -> Result<Self> {
        let values: Vec<Option<u8>> = digits.iter().map(|&d| Some(d)).collect();
        Self::from_values(&values, Provenance::Given)
    }

    pub fn cell(&self, index: usize) -> Cell {
        self.cells[index]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        self.cells[row * 9 + col].value
    }

    pub fn value(&self, index: usize) -> Option<u8> {
        self.cells[index].value
    }

    /// Sets one cell. Panics on a digit outside 1..9.
    pub fn set(&mut self, index: usize, value: Option<u8>, provenance: Provenance) {
        if let Some(d) = value {
            assert!((1..=9).contains(&d), "digit {d} outside 1..9");
        }
        self.cells[index] = Cell { value, provenance };
    }

    pub fn blanks(&self) -> Vec<usize> {
        (0..CELLS).filter(|&i| self.cells[i].value.is_none()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.value.is_some())
    }

    pub fn digits(&self) -> [Option<u8>; CELLS] {
        let mut out = [None; CELLS];
        for (o, c) in out.iter_mut().zip(&self.cells) {
            *o = c.value;
        }
        out
    }

    /// Rows of digits with `null` for blanks.
    pub fn rows(&self) -> Vec<Vec<Option<u8>>> {
        self.cells
            .chunks(9)
            .map(|r| r.iter().map(|c| c.value).collect())
            .collect()
    }
}

impl fmt::Display for Board {
    /// Nine lines of nine characters, `.` for a blank.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(9) {
            for c in row {
                match c.value {
                    Some(d) => write!(f, "{d}")?,
                    None => f.write_str(".")?,
                }
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Board(\n{self})")
    }
}

impl FromStr for Board {
    type Err = Error;

    /// Accepts nine non-empty lines of nine cells each. Digits are givens;
    /// `.` and `0` are blanks. Spaces and lines starting with `#` are
    /// ignored.
    fn from_str(text: &str) -> Result<Self> {
        let lines: Vec<String> = text
            .lines()
            .map(|l| l.chars().filter(|c| !c.is_whitespace()).collect::<String>())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if lines.len() != 9 {
            return Err(Error::Input(format!(
                "a board has 9 rows, got {}",
                lines.len()
            )));
        }
        let mut values = Vec::with_capacity(CELLS);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != 9 {
                return Err(Error::Input(format!(
                    "row {} has {} cells, expected 9",
                    r + 1,
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                values.push(match ch {
                    '.' | '0' => None,
                    '1'..='9' => Some(ch as u8 - b'0'),
                    other => {
                        return Err(Error::Input(format!(
                            "row {}: {other:?} is neither a digit nor '.'",
                            r + 1
                        )))
                    }
                });
            }
        }
        Board::from_values(&values, Provenance::Given)
    }
}

/// The 27 units: rows, then columns, then 3×3 boxes.
fn units() -> impl Iterator<Item = (&'static str, [usize; 9])> {
    (0..27).map(|u| {
        let mut cells = [0; 9];
        for (k, c) in cells.iter_mut().enumerate() {
            *c = match u / 9 {
                0 => (u % 9) * 9 + k,
                1 => k * 9 + u % 9,
                _ => {
                    let b = u % 9;
                    (b / 3 * 3 + k / 3) * 9 + b % 3 * 3 + k % 3
                }
            };
        }
        (["row", "column", "box"][u / 9], cells)
    })
}

/// Whether the cells `a` and `b` share a row, column or box.
pub fn peers(a: usize, b: usize) -> bool {
    let (ra, ca, rb, cb) = (a / 9, a % 9, b / 9, b % 9);
    a != b && (ra == rb || ca == cb || (ra / 3 == rb / 3 && ca / 3 == cb / 3))
}

/// Every pair of filled cells that repeat a digit within a unit.
pub fn conflicts(board: &Board) -> Vec<Violation> {
    let mut out = Vec::new();
    for (kind, cells) in units() {
        for (i, &a) in cells.iter().enumerate() {
            for &b in &cells[i + 1..] {
                if let (Some(x), Some(y)) = (board.value(a), board.value(b)) {
                    if x == y {
                        out.push(Violation {
                            rule: kind.to_string(),
                            tokens: vec![a, b],
                            detail: format!("digit {x} repeated"),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Whether a complete board satisfies the row, column and box rules.
pub fn valid(board: &Board) -> Result<bool> {
    if let Some(i) = board.blanks().first() {
        return Err(Error::Precondition(format!(
            "cell r{}c{} is blank",
            i / 9 + 1,
            i % 9 + 1
        )));
    }
    Ok(units().all(|(_, cells)| {
        let mut seen = 0u16;
        for c in cells {
            let bit = 1 << board.value(c).unwrap_or(0);
            if seen & bit != 0 {
                return false;
            }
            seen |= bit;
        }
        true
    }))
}
