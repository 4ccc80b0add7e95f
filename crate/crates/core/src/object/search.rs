use std::collections::BTreeMap;

use serde::Serialize;

use super::CycleClass;
use crate::dataset::{ComponentName, Detection, DetectionFile, ImageSize};
use crate::error::{Error, Result};

/// Scores within this distance of a threshold count as reaching it, so that
/// `0.4 - 0.1` still admits a score of `0.3`.
const SCORE_SLACK: f64 = 1e-9;

/// Largest IoU a late proposal may have with an accepted box.
pub const MASK_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchConfig {
    pub initial_threshold: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            initial_threshold: 0.40,
            decay: 0.1,
            floor: 0.2,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.floor
            && self.floor <= self.initial_threshold
            && self.initial_threshold <= 1.0
            && self.decay > 0.0;
        if !ok {
            return Err(Error::Parameter(format!(
                "search needs 0 < floor ({}) ≤ threshold ({}) ≤ 1 and decay ({}) > 0",
                self.floor, self.initial_threshold, self.decay
            )));
        }
        Ok(())
    }

    /// Thresholds of every pass, highest first.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0.. {
            let t = self.initial_threshold - i as f64 * self.decay;
            if t < self.floor - SCORE_SLACK {
                break;
            }
            out.push(t);
        }
        out
    }
}

/// How many parts of each name the searched class needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Requirement(pub BTreeMap<ComponentName, usize>);

impl Requirement {
    pub fn for_class(class: CycleClass) -> Self {
        let mut need = BTreeMap::new();
        if let Some(w) = class.wheels() {
            need.insert(ComponentName::Wheel, w);
            need.insert(ComponentName::Frame, 1);
        }
        Requirement(need)
    }

    /// Parts still missing from `accepted`, per name.
    pub fn deficit(&self, accepted: &[Detection]) -> BTreeMap<ComponentName, usize> {
        self.0
            .iter()
            .filter_map(|(&name, &n)| {
                let have = accepted.iter().filter(|d| d.name == name).count();
                (have < n).then(|| (name, n - have))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPass {
    pub threshold: f64,
    /// Ids of the proposals accepted in this pass.
    pub accepted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub size: ImageSize,
    /// In acceptance order.
    pub accepted: Vec<Detection>,
    pub passes: Vec<SearchPass>,
    /// Parts still missing when the search stopped.
    pub missing: BTreeMap<ComponentName, usize>,
}

/// Accepts proposals in passes of falling threshold.
///
/// The first pass takes every proposal scoring at least the initial
/// threshold. While `requirement` is unmet and the next threshold is not
/// below the floor, each later pass lowers the threshold by `decay` and takes
/// the best proposals of the still-missing names, skipping any that overlap
/// an accepted box by more than [`MASK_IOU`].
pub fn iterative_search(
    file: &DetectionFile,
    requirement: &Requirement,
    config: &SearchConfig,
) -> Result<SearchResult> {
    config.validate()?;
    let thresholds = config.thresholds();
    let mut accepted: Vec<Detection> = Vec::new();
    let mut taken = vec![false; file.proposals.len()];
    let mut passes = Vec::new();

    let t0 = thresholds[0];
    let mut first = Vec::new();
    for (i, p) in file.proposals.iter().enumerate() {
        if p.score >= t0 - SCORE_SLACK {
            taken[i] = true;
            first.push(p.id);
            accepted.push(p.clone());
        }
    }
    passes.push(SearchPass {
        threshold: t0,
        accepted: first,
    });

    for &t in &thresholds[1..] {
        let mut deficit = requirement.deficit(&accepted);
        if deficit.is_empty() {
            break;
        }
        let mut now = Vec::new();
        for (i, p) in file.proposals.iter().enumerate() {
            if taken[i] || p.score < t - SCORE_SLACK {
                continue;
            }
            let Some(left) = deficit.get_mut(&p.name).filter(|n| **n > 0) else {
                continue;
            };
            if accepted.iter().any(|a| a.bbox.iou(&p.bbox) > MASK_IOU) {
                continue;
            }
            *left -= 1;
            taken[i] = true;
            now.push(p.id);
            accepted.push(p.clone());
        }
        passes.push(SearchPass {
            threshold: t,
            accepted: now,
        });
    }
    Ok(SearchResult {
        size: file.size,
        missing: requirement.deficit(&accepted),
        accepted,
        passes,
    })
}
