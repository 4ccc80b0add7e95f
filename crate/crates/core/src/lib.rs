//! Reading handwritten and detected tokens as words of a language.
//!
//! A token is an observation, such as a digit image or a detected part, that
//! a classifier maps to a symbol. This crate scores each reading with
//! global support (agreement among the nearest training embeddings) and
//! local support (how alike same-symbol tokens of one word look), and uses
//! both to accept, repair or reject whole words.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod language;
pub mod nn;
pub mod object;
pub mod raster;
pub mod sudoku;
pub mod support;

pub use error::{Error, Result};
