//! Detection-proposal files.
//!
//! ```json
//! {"image": {"w": 640, "h": 480},
//!  "proposals": [{"name": "wheel", "score": 0.91,
//!                 "box": {"cx": 120.0, "cy": 300.0, "bw": 150.0, "bh": 150.0},
//!                 "crop": "crops/w1.png"}]}
//! ```
//!
//! `crop` is optional; relative paths resolve against the file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentName {
    Wheel,
    Seat,
    Frame,
    Handlebar,
}

impl ComponentName {
    pub const ALL: [ComponentName; 4] = [
        ComponentName::Wheel,
        ComponentName::Seat,
        ComponentName::Frame,
        ComponentName::Handlebar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentName::Wheel => "wheel",
            ComponentName::Seat => "seat",
            ComponentName::Frame => "frame",
            ComponentName::Handlebar => "handlebar",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == name)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "unknown component name {name:?} (expected wheel, seat, frame or handlebar)"
                ))
            })
    }
}

impl fmt::Display for ComponentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Box given by its center and size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub bw: f64,
    pub bh: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.bw * self.bh
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.cx + self.bw / 2.0).min(other.cx + other.bw / 2.0)
            - (self.cx - self.bw / 2.0).max(other.cx - other.bw / 2.0);
        let iy = (self.cy + self.bh / 2.0).min(other.cy + other.bh / 2.0)
            - (self.cy - self.bh / 2.0).max(other.cy - other.bh / 2.0);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // Two degenerate boxes: overlapping only if they coincide.
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }

    fn within(&self, size: ImageSize) -> bool {
        let eps = 1e-9;
        self.bw >= 0.0
            && self.bh >= 0.0
            && self.cx - self.bw / 2.0 >= -eps
            && self.cy - self.bh / 2.0 >= -eps
            && self.cx + self.bw / 2.0 <= size.w as f64 + eps
            && self.cy + self.bh / 2.0 <= size.h as f64 + eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Position of the proposal in the source file.
    pub id: usize,
    pub name: ComponentName,
    pub score: f64,
    pub bbox: BoundingBox,
    pub crop: Option<PathBuf>,
}

/// Proposals for one image, sorted by descending score (file order on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub size: ImageSize,
    pub proposals: Vec<Detection>,
}

#[derive(Deserialize)]
struct RawFile {
    image: ImageSize,
    proposals: Vec<RawProposal>,
}

#[derive(Deserialize)]
struct RawProposal {
    name: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default)]
    crop: Option<PathBuf>,
}

impl DetectionFile {
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if raw.image.w == 0 || raw.image.h == 0 {
            return Err(Error::Schema(format!(
                "image size {}×{} must be positive",
                raw.image.w, raw.image.h
            )));
        }
        let mut proposals = Vec::with_capacity(raw.proposals.len());
        for (id, p) in raw.proposals.into_iter().enumerate() {
            let name = ComponentName::parse(&p.name)?;
            if !(0.0..=1.0).contains(&p.score) {
                return Err(Error::Schema(format!(
                    "proposal {id}: score {} outside [0, 1]",
                    p.score
                )));
            }
            if !p.bbox.within(raw.image) {
                return Err(Error::Schema(format!(
                    "proposal {id}: box {:?} leaves the {}×{} image",
                    p.bbox, raw.image.w, raw.image.h
                )));
            }
            let crop = match (p.crop, base_dir) {
                (Some(c), Some(base)) if c.is_relative() => Some(base.join(c)),
                (c, _) => c,
            };
            proposals.push(Detection {
                id,
                name,
                score: p.score,
                bbox: p.bbox,
                crop,
            });
        }
        proposals.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        Ok(Self {
            size: raw.image,
            proposals,
        })
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DetectionFile::from_json(&text, path.parent())
}
