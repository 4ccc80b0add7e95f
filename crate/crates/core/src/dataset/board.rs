//! Splitting a board picture into 81 digit cells.
//!
//! Geometry: the playing area is the image minus `margin` pixels on every
//! side. It must split into 9 equal pitches per axis; each pitch starts with
//! `gridline` pixels of ruling followed by the cell itself. A 252×252 tiling
//! of 28×28 digits is `margin = 0, gridline = 0`; a 279×279 board with 3-pixel
//! rules is `margin = 0, gridline = 3`.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::raster::{Raster, DIGIT_SIDE};

/// A cell is empty when at least this fraction of its pixels is below
/// [`EMPTY_INTENSITY`].
pub const EMPTY_FRACTION: f64 = 0.99;
pub const EMPTY_INTENSITY: f32 = 0.05;

/// Which end of the 8-bit range is ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InkPolarity {
    /// Dark ink on white paper (pen on a printed board).
    #[default]
    DarkInk,
    /// Light strokes on black, as in MNIST.
    LightInk,
}

impl InkPolarity {
    fn intensity(self, byte: u8) -> f32 {
        match self {
            InkPolarity::DarkInk => (255 - byte) as f32 / 255.0,
            InkPolarity::LightInk => byte as f32 / 255.0,
        }
    }

    fn byte(self, intensity: f32) -> u8 {
        let v = (intensity.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self {
            InkPolarity::DarkInk => 255 - v,
            InkPolarity::LightInk => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridSpec {
    pub margin: usize,
    pub gridline: usize,
    pub polarity: InkPolarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardCell {
    pub image: Raster,
    pub empty: bool,
}

impl BoardCell {
    pub fn new(image: Raster) -> Self {
        let empty = image.fraction_below(EMPTY_INTENSITY) >= EMPTY_FRACTION;
        Self { image, empty }
    }
}

/// 81 cells in row-major order, each 28×28.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardImage {
    cells: Vec<BoardCell>,
    origin: String,
}

impl BoardImage {
    pub fn new(cells: Vec<BoardCell>, origin: impl Into<String>) -> Result<Self> {
        if cells.len() != 81 {
            return Err(Error::Geometry(format!(
                "a board has 81 cells, got {}",
                cells.len()
            )));
        }
        if let Some(i) = cells.iter().position(|c| !c.image.is_digit_sized()) {
            return Err(Error::Geometry(format!("cell {i} is not 28×28")));
        }
        Ok(Self {
            cells,
            origin: origin.into(),
        })
    }

    pub fn from_tiles(tiles: Vec<Raster>, origin: impl Into<String>) -> Result<Self> {
        Self::new(tiles.into_iter().map(BoardCell::new).collect(), origin)
    }

    pub fn cells(&self) -> &[BoardCell] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &BoardCell {
        &self.cells[row * 9 + col]
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }
}

pub fn read_png(path: impl AsRef<Path>, polarity: InkPolarity) -> Result<Raster> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| polarity.intensity(p.0[0])).collect();
    Ok(Raster::new(w as usize, h as usize, data))
}

pub fn write_png(raster: &Raster, path: impl AsRef<Path>, polarity: InkPolarity) -> Result<()> {
    let path = path.as_ref();
    let mut img = GrayImage::new(raster.width() as u32, raster.height() as u32);
    for (p, &v) in img.pixels_mut().zip(raster.data()) {
        *p = Luma([polarity.byte(v)]);
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a board picture and segments it with [`segment_raster`].
pub fn segment_board(image_path: impl AsRef<Path>, grid: &GridSpec) -> Result<BoardImage> {
    let path = image_path.as_ref();
    let raster = read_png(path, grid.polarity)?;
    let mut board = segment_raster(&raster, grid)?;
    board.origin = path.display().to_string();
    Ok(board)
}

fn pitch(extent: usize, grid: &GridSpec, axis: &str) -> Result<usize> {
    let area = extent
        .checked_sub(2 * grid.margin)
        .filter(|&a| a > 0 && a % 9 == 0)
        .ok_or_else(|| {
            Error::Geometry(format!(
                "{axis} of {extent} px minus 2×{} px margin does not split into 9 cells",
                grid.margin
            ))
        })?;
    let pitch = area / 9;
    if pitch <= grid.gridline {
        return Err(Error::Geometry(format!(
            "{axis} pitch of {pitch} px leaves no room beside a {} px gridline",
            grid.gridline
        )));
    }
    Ok(pitch)
}

pub fn segment_raster(raster: &Raster, grid: &GridSpec) -> Result<BoardImage> {
    let px = pitch(raster.width(), grid, "width")?;
    let py = pitch(raster.height(), grid, "height")?;
    let (cw, ch) = (px - grid.gridline, py - grid.gridline);
    let mut cells = Vec::with_capacity(81);
    for row in 0..9 {
        for col in 0..9 {
            let x0 = grid.margin + col * px + grid.gridline;
            let y0 = grid.margin + row * py + grid.gridline;
            let tile = raster.crop(x0, y0, cw, ch).resize(DIGIT_SIDE, DIGIT_SIDE);
            cells.push(BoardCell::new(tile));
        }
    }
    BoardImage::new(cells, "raster")
}

/// Lays 81 tiles out on a board picture following `grid`; gridlines and
/// margins are drawn at full ink intensity. All tiles must share one size.
pub fn compose_board(tiles: &[Raster], grid: &GridSpec) -> Result<Raster> {
    if tiles.len() != 81 {
        return Err(Error::Geometry(format!("need 81 tiles, got {}", tiles.len())));
    }
    let (tw, th) = (tiles[0].width(), tiles[0].height());
    if tiles.iter().any(|t| t.width() != tw || t.height() != th) {
        return Err(Error::Geometry("tiles differ in size".into()));
    }
    let w = 2 * grid.margin + 9 * (tw + grid.gridline);
    let h = 2 * grid.margin + 9 * (th + grid.gridline);
    let mut out = Raster::zeros(w, h);
    if grid.gridline > 0 {
        for y in 0..h {
            for x in 0..w {
                let in_area = x >= grid.margin
                    && y >= grid.margin
                    && x < w - grid.margin
                    && y < h - grid.margin;
                if in_area {
                    let lx = (x - grid.margin) % (tw + grid.gridline) < grid.gridline;
                    let ly = (y - grid.margin) % (th + grid.gridline) < grid.gridline;
                    if lx || ly {
                        out.set(x, y, 1.0);
                    }
                }
            }
        }
    }
    for (i, tile) in tiles.iter().enumerate() {
        let (row, col) = (i / 9, i % 9);
        let x0 = grid.margin + col * (tw + grid.gridline) + grid.gridline;
        let y0 = grid.margin + row * (th + grid.gridline) + grid.gridline;
        for y in 0..th {
            for x in 0..tw {
                out.set(x0 + x, y0 + y, tile.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Reads a directory holding one image per cell named `r{row}c{col}.png`
/// with 1-based indices. Cells of any size are resampled to 28×28.
pub fn load_board_dir(dir: impl AsRef<Path>, polarity: InkPolarity) -> Result<BoardImage> {
    let dir = dir.as_ref();
    let mut cells = Vec::with_capacity(81);
    for row in 1..=9 {
        for col in 1..=9 {
            let path: PathBuf = dir.join(format!("r{row}c{col}.png"));
            if !path.is_file() {
                return Err(Error::Input(format!("missing cell image {}", path.display())));
            }
            let img = read_png(&path, polarity)?.resize(DIGIT_SIDE, DIGIT_SIDE);
            cells.push(BoardCell::new(img));
        }
    }
    BoardImage::new(cells, dir.display().to_string())
}
