//! Naming a cycle from its detected parts.
//!
//! Detected parts (wheels, frames, seats, handlebars) are accepted in
//! falling order of objectness. Cardinality and spatial-range rules then
//! decide between unicycle, bicycle and tricycle. Parts of one kind that look
//! unlike each other are flagged before the rules run, so a stray wheel
//! from another vehicle does not count.
//!
//! The unicycle and tricycle rules mirror the bicycle ones: a unicycle is
//! one wheel carrying one frame (or, without a frame, one seat) in range; a
//! tricycle is three mutually distinct wheels all in range of one frame.

mod classify;
mod search;

pub use classify::{
    classify, crop_metric, ComponentFlag, ComponentReport, ConsistencyCheck, ObjectVerdict,
    RuleCheck,
};
pub use search::{iterative_search, Requirement, SearchConfig, SearchPass, SearchResult};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, ComponentName, Detection, ImageSize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleClass {
    Unicycle,
    Bicycle,
    Tricycle,
    None,
}

impl CycleClass {
    pub fn wheels(self) -> Option<usize> {
        match self {
            CycleClass::Unicycle => Some(1),
            CycleClass::Bicycle => Some(2),
            CycleClass::Tricycle => Some(3),
            CycleClass::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CycleClass::Unicycle => "unicycle",
            CycleClass::Bicycle => "bicycle",
            CycleClass::Tricycle => "tricycle",
            CycleClass::None => "none",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [CycleClass::Unicycle, CycleClass::Bicycle, CycleClass::Tricycle]
            .into_iter()
            .find(|c| c.as_str() == name)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown class {name:?} (expected unicycle, bicycle or tricycle)"
                ))
            })
    }
}

impl fmt::Display for CycleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Distance between box centers with each axis scaled by the image extent.
/// Lies in `[0, √2]` for centers inside the image.
pub fn normalized_distance(a: &BoundingBox, b: &BoundingBox, size: ImageSize) -> f64 {
    let dx = (a.cx - b.cx) / size.w as f64;
    let dy = (a.cy - b.cy) / size.h as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Closed interval of normalized distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && 0.0 <= min && min <= max) {
            return Err(Error::Configuration(format!(
                "range [{min}, {max}] needs 0 ≤ min ≤ max"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, distance: f64) -> bool {
        self.min <= distance && distance <= self.max
    }
}

/// Whether two parts sit at a plausible distance. Two boxes at the same
/// center are one part seen twice, so they fail any range with `min > 0`.
pub fn inrange(a: &BoundingBox, b: &BoundingBox, size: ImageSize, range: &Range) -> bool {
    range.contains(normalized_distance(a, b, size))
}

/// Unordered pair of component names, stored smaller first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairType(ComponentName, ComponentName);

impl PairType {
    pub fn new(a: ComponentName, b: ComponentName) -> Self {
        if a <= b {
            PairType(a, b)
        } else {
            PairType(b, a)
        }
    }

    pub fn names(self) -> (ComponentName, ComponentName) {
        (self.0, self.1)
    }
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Pair types the rules cannot do without.
pub const REQUIRED_PAIRS: [(ComponentName, ComponentName); 2] = [
    (ComponentName::Wheel, ComponentName::Wheel),
    (ComponentName::Wheel, ComponentName::Frame),
];

/// Spatial ranges per pair type plus the threshold for look-alike parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRuleSet {
    ranges: BTreeMap<PairType, Range>,
    pub epsilon: f64,
}

impl ObjectRuleSet {
    pub fn new(ranges: impl IntoIterator<Item = (PairType, Range)>, epsilon: f64) -> Result<Self> {
        let ranges: BTreeMap<PairType, Range> = ranges.into_iter().collect();
        let missing: Vec<String> = REQUIRED_PAIRS
            .iter()
            .map(|&(a, b)| PairType::new(a, b))
            .filter(|p| !ranges.contains_key(p))
            .map(|p| p.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Configuration(format!(
                "no range for pair types: {}",
                missing.join(", ")
            )));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Configuration(format!("epsilon {epsilon} must be ≥ 0")));
        }
        Ok(Self { ranges, epsilon })
    }

    pub fn range(&self, a: ComponentName, b: ComponentName) -> Option<&Range> {
        self.ranges.get(&PairType::new(a, b))
    }

    pub fn ranges(&self) -> impl Iterator<Item = (PairType, &Range)> {
        self.ranges.iter().map(|(p, r)| (*p, r))
    }

    /// Whether `a` and `b` are at a distance allowed for their names. Pair
    /// types without a learned range never are.
    pub fn in_range(&self, a: &Detection, b: &Detection, size: ImageSize) -> bool {
        self.range(a.name, b.name)
            .is_some_and(|r| inrange(&a.bbox, &b.bbox, size, r))
    }

    pub fn to_json(&self) -> String {
        let file = RuleFile {
            schema: 1,
            epsilon: self.epsilon,
            ranges: self
                .ranges
                .iter()
                .map(|(p, r)| RangeEntry {
                    pair: [p.0, p.1],
                    min: r.min,
                    max: r.max,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RuleFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if file.schema != 1 {
            return Err(Error::Schema(format!("unsupported rule schema {}", file.schema)));
        }
        let mut ranges = Vec::new();
        for e in file.ranges {
            ranges.push((PairType::new(e.pair[0], e.pair[1]), Range::new(e.min, e.max)?));
        }
        Self::new(ranges, file.epsilon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    schema: u32,
    epsilon: f64,
    ranges: Vec<RangeEntry>,
}

#[derive(Serialize, Deserialize)]
struct RangeEntry {
    pair: [ComponentName; 2],
    min: f64,
    max: f64,
}

/// One annotated pair of parts from a training image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub size: ImageSize,
    pub first: (ComponentName, BoundingBox),
    pub second: (ComponentName, BoundingBox),
}

impl PairRecord {
    pub fn pair_type(&self) -> PairType {
        PairType::new(self.first.0, self.second.0)
    }

    pub fn distance(&self) -> f64 {
        normalized_distance(&self.first.1, &self.second.1, self.size)
    }
}

/// Ground-truth parts of one training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: ImageSize,
    pub components: Vec<AnnotatedComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedComponent {
    pub name: ComponentName,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Every pair of distinct parts within each annotation.
pub fn pair_records(annotations: &[Annotation]) -> Vec<PairRecord> {
    let mut out = Vec::new();
    for a in annotations {
        for (i, p) in a.components.iter().enumerate() {
            for q in &a.components[i + 1..] {
                out.push(PairRecord {
                    size: a.image,
                    first: (p.name, p.bbox),
                    second: (q.name, q.bbox),
                });
            }
        }
    }
    out
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let annotations: Vec<Annotation> =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    for (i, a) in annotations.iter().enumerate() {
        if a.image.w == 0 || a.image.h == 0 {
            return Err(Error::Schema(format!("annotation {i}: image size must be positive")));
        }
    }
    Ok(annotations)
}

/// The smallest range covering the observed distances of every pair type.
pub fn learn_range(records: &[PairRecord], epsilon: f64) -> Result<ObjectRuleSet> {
    let mut ranges: BTreeMap<PairType, Range> = BTreeMap::new();
    for r in records {
        let d = r.distance();
        ranges
            .entry(r.pair_type())
            .and_modify(|range| {
                range.min = range.min.min(d);
                range.max = range.max.max(d);
            })
            .or_insert(Range { min: d, max: d });
    }
    ObjectRuleSet::new(ranges, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ComponentName::*;

    fn at(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox {
            cx,
            cy,
            bw: 10.0,
            bh: 10.0,
        }
    }

    const SIZE: ImageSize = ImageSize { w: 400, h: 300 };

    #[test]
    fn distance_examples() {
        assert_eq!(normalized_distance(&at(7.0, 9.0), &at(7.0, 9.0), SIZE), 0.0);
        let d = normalized_distance(&at(0.0, 0.0), &at(400.0, 300.0), SIZE);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        let d = normalized_distance(&at(100.0, 50.0), &at(300.0, 200.0), SIZE);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn range_predicate() {
        let r = Range::new(0.3, 0.9).unwrap();
        assert!(inrange(&at(100.0, 50.0), &at(300.0, 200.0), SIZE, &r));
        let r = Range::new(0.05, 0.9).unwrap();
        assert!(!inrange(&at(10.0, 10.0), &at(10.0, 10.0), SIZE, &r));
        let d = normalized_distance(&at(100.0, 50.0), &at(300.0, 200.0), SIZE);
        assert!(inrange(&at(100.0, 50.0), &at(300.0, 200.0), SIZE, &Range::new(0.1, d).unwrap()));
        assert!(Range::new(0.5, 0.4).is_err());
    }

    fn record(a: ComponentName, b: ComponentName, d: f64) -> PairRecord {
        PairRecord {
            size: ImageSize { w: 100, h: 100 },
            first: (a, at(0.0, 0.0)),
            second: (b, at(100.0 * d, 0.0)),
        }
    }

    #[test]
    fn learns_min_max() {
        let recs = vec![
            record(Wheel, Wheel, 0.4),
            record(Wheel, Wheel, 0.6),
            record(Wheel, Wheel, 0.5),
            record(Frame, Wheel, 0.25),
        ];
        let rules = learn_range(&recs, 10.0).unwrap();
        let r = rules.range(Wheel, Wheel).unwrap();
        assert!((r.min - 0.4).abs() < 1e-12 && (r.max - 0.6).abs() < 1e-12);
        let r = rules.range(Wheel, Frame).unwrap();
        assert_eq!(r.min, r.max);
    }

    #[test]
    fn missing_pair_type_is_configuration_error() {
        match learn_range(&[record(Wheel, Wheel, 0.4)], 10.0) {
            Err(Error::Configuration(m)) => assert!(m.contains("wheel-frame"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rule_file_round_trip() {
        let recs = vec![record(Wheel, Wheel, 0.4), record(Wheel, Frame, 0.3), record(Seat, Wheel, 0.2)];
        let rules = learn_range(&recs, 7.5).unwrap();
        assert_eq!(ObjectRuleSet::from_json(&rules.to_json()).unwrap(), rules);
    }

    #[test]
    fn pairs_from_annotations() {
        let a = Annotation {
            image: SIZE,
            components: vec![
                AnnotatedComponent { name: Wheel, bbox: at(50.0, 50.0) },
                AnnotatedComponent { name: Wheel, bbox: at(250.0, 50.0) },
                AnnotatedComponent { name: Frame, bbox: at(150.0, 50.0) },
            ],
        };
        let recs = pair_records(&[a]);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].pair_type(), PairType::new(Frame, Wheel));
    }
}
