use std::collections::BTreeSet;

use serde::Serialize;

use super::{solve, sudoku_rules, Board, Provenance, Verdict, CELLS};
use crate::dataset::BoardImage;
use crate::error::Result;
use crate::language::{build_candidate_graph, Alphabet, Params, TokenMetric};
use crate::nn::Model;
use crate::raster::Raster;
use crate::support::{
    global_support, DescriptorExtractor, DescriptorMetric, EmbeddingIndex, SupportMap,
};

/// What the classifier and the embedding index say about one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellObservation {
    pub empty: bool,
    /// Classifier argmax; `None` for empty cells.
    pub tag: Option<u8>,
    /// Classifier probability of `tag`.
    pub probability: f64,
    /// Global support over all ten classes; empty for empty cells.
    pub support: SupportMap<u8>,
}

impl CellObservation {
    pub fn empty(k: usize) -> Self {
        Self {
            empty: true,
            tag: None,
            probability: 0.0,
            support: SupportMap::empty(k),
        }
    }

    /// Global support of the tag.
    pub fn confidence(&self) -> Option<f64> {
        self.tag.map(|t| self.support.weight(&t))
    }
}

pub fn observe_cell(
    model: &Model,
    index: &EmbeddingIndex,
    image: &Raster,
    k: usize,
) -> Result<CellObservation> {
    let out = model.forward(image)?;
    let tag = out.argmax() as u8;
    Ok(CellObservation {
        empty: false,
        tag: Some(tag),
        probability: out.class_probs[tag as usize],
        support: global_support(index, &out.embedding, k)?,
    })
}

pub fn observe_board(
    board: &BoardImage,
    model: &Model,
    index: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<CellObservation>> {
    board
        .cells()
        .iter()
        .map(|c| {
            if c.empty {
                Ok(CellObservation::empty(k))
            } else {
                observe_cell(model, index, &c.image, k)
            }
        })
        .collect()
}

/// A cell keeps its tag when the tag is a Sudoku digit whose global support
/// reaches `c_h`; every other cell is blank.
pub fn assign_tags(observations: &[CellObservation], c_h: f64) -> Board {
    let mut board = Board::empty();
    for (i, o) in observations.iter().enumerate().take(CELLS) {
        if let Some(t @ 1..=9) = o.tag {
            if o.support.weight(&t) >= c_h {
                board.set(i, Some(t), Provenance::Predicted);
            }
        }
    }
    board
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedBoard {
    pub board: Board,
    pub observations: Vec<CellObservation>,
}

pub fn tag_cells(
    board: &BoardImage,
    model: &Model,
    index: &EmbeddingIndex,
    c_h: f64,
    k: usize,
) -> Result<TaggedBoard> {
    let observations = observe_board(board, model, index, k)?;
    Ok(TaggedBoard {
        board: assign_tags(&observations, c_h),
        observations,
    })
}

/// Reads a board picture and decides whether it holds a valid solution,
/// can be repaired into one, or neither.
pub fn validate_handwritten(
    image: &BoardImage,
    model: &Model,
    index: &EmbeddingIndex,
    params: &Params,
    extractor: &dyn DescriptorExtractor,
) -> Result<Verdict> {
    params.validate()?;
    let tagged = tag_cells(image, model, index, params.c_h, params.k)?;
    let metrics = DescriptorMetric::from_images(extractor, image.cells().iter().map(|c| &c.image));
    Ok(verdict_from_observations(&tagged, params, &metrics))
}

/// The part of [`validate_handwritten`] after the cells have been observed.
pub fn verdict_from_observations(
    tagged: &TaggedBoard,
    params: &Params,
    metrics: &dyn TokenMetric,
) -> Verdict {
    let board = &tagged.board;
    let blanks = board.blanks();
    // A complete valid board comes straight back as NoAmbiguities.
    let maps: Vec<_> = blanks
        .iter()
        .map(|&b| (b, tagged.observations[b].support.clone()))
        .collect();
    let alphabet = Alphabet::new(1..=9).expect("digits 1..9 are distinct");
    let graph = build_candidate_graph(&maps, &alphabet, params.c_l);
    let solved: BTreeSet<usize> = blanks.iter().copied().collect();
    let rules = sudoku_rules(*params, solved).expect("params validated by the caller");
    let mut verdict = solve(board, &graph, &rules, metrics);
    for (audit, obs) in verdict.cells.iter_mut().zip(&tagged.observations) {
        audit.empty = obs.empty;
        audit.tag = obs.tag;
        audit.confidence = obs.confidence();
        if !obs.empty {
            audit.support = Some(obs.support.clone());
        }
    }
    verdict.annotate_local_support(metrics, params.epsilon);
    let flagged: Vec<String> = verdict
        .cells
        .iter()
        .filter(|c| c.provenance != Provenance::Solved && c.locally_consistent == Some(false))
        .map(|c| format!("r{}c{}", c.row, c.col))
        .collect();
    if !flagged.is_empty() {
        verdict.notes.push(format!(
            "accepted cells that look unlike their same-digit peers: {}",
            flagged.join(", ")
        ));
    }
    verdict
}
