use serde::Serialize;

use super::{CycleClass, ObjectRuleSet, SearchPass, SearchResult};
use crate::dataset::{read_png, BoundingBox, ComponentName, Detection, ImageSize, InkPolarity};
use crate::error::Result;
use crate::language::{TokenId, TokenMetric};
use crate::support::{DescriptorExtractor, DescriptorMetric, LocalDescriptor, LocalSupport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentFlag {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConsistencyCheck {
    #[serde(rename = "verified")]
    Verified,
    /// No crops to compare, so look-alike checks were skipped.
    #[serde(rename = "unverified-consistency")]
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub id: usize,
    pub name: ComponentName,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub flag: ComponentFlag,
    /// Against the other parts of the same name, when it was computed.
    pub local_support: Option<LocalSupport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleCheck {
    /// `C1` (wheel count and distinctness) or `C2` (frame placement).
    pub rule: &'static str,
    pub class: CycleClass,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectVerdict {
    pub class: CycleClass,
    pub consistency: ConsistencyCheck,
    pub components: Vec<ComponentReport>,
    pub rule_trace: Vec<RuleCheck>,
    pub passes: Vec<SearchPass>,
    pub notes: Vec<String>,
}

/// Descriptors of the crops of `accepted`, indexed by detection id. `None`
/// unless every accepted part has a crop.
pub fn crop_metric(
    accepted: &[Detection],
    extractor: &dyn DescriptorExtractor,
    polarity: InkPolarity,
) -> Result<Option<DescriptorMetric>> {
    if accepted.is_empty() || accepted.iter().any(|d| d.crop.is_none()) {
        return Ok(None);
    }
    let n = accepted.iter().map(|d| d.id + 1).max().unwrap_or(0);
    let mut descriptors = vec![LocalDescriptor::from_vectors(extractor.method(), Vec::new()); n];
    for d in accepted {
        let crop = d.crop.as_ref().expect("checked above");
        descriptors[d.id] = extractor.describe(&read_png(crop, polarity)?);
    }
    Ok(Some(DescriptorMetric::new(descriptors)))
}

/// Local support of each active member against the other active members.
fn group_support(active: &[&Detection], metrics: &dyn TokenMetric) -> Vec<Option<LocalSupport>> {
    active
        .iter()
        .map(|d| {
            let peers: Vec<TokenId> = active.iter().filter(|p| p.id != d.id).map(|p| p.id).collect();
            metrics.local_support(d.id, &peers)
        })
        .collect()
}

/// Flags, one part at a time, the part of each name that looks least like
/// its peers, until all remaining parts of that name are within `epsilon`
/// of each other. Ties flag the lower-scored part, then the later one.
fn flag_dissimilar(
    accepted: &[Detection],
    metrics: &dyn TokenMetric,
    epsilon: f64,
) -> Vec<(ComponentFlag, Option<LocalSupport>)> {
    let mut out = vec![(ComponentFlag::Consistent, None); accepted.len()];
    for name in ComponentName::ALL {
        let mut active: Vec<usize> = (0..accepted.len())
            .filter(|&i| accepted[i].name == name)
            .collect();
        while active.len() >= 2 {
            let members: Vec<&Detection> = active.iter().map(|&i| &accepted[i]).collect();
            let support = group_support(&members, metrics);
            for (&i, s) in active.iter().zip(&support) {
                out[i].1 = *s;
            }
            let worst = active
                .iter()
                .zip(&support)
                .filter_map(|(&i, s)| match s {
                    Some(LocalSupport::Distance(d)) if *d > epsilon => Some((i, *d)),
                    _ => None,
                })
                .max_by(|a, b| {
                    a.1.total_cmp(&b.1)
                        .then(accepted[b.0].score.total_cmp(&accepted[a.0].score))
                        .then(accepted[a.0].id.cmp(&accepted[b.0].id))
                });
            let Some((i, _)) = worst else { break };
            out[i].0 = ComponentFlag::Inconsistent;
            active.retain(|&j| j != i);
        }
    }
    out
}

struct Parts<'a> {
    wheels: Vec<&'a Detection>,
    frames: Vec<&'a Detection>,
    seats: Vec<&'a Detection>,
}

fn c1(parts: &Parts<'_>, class: CycleClass, rules: &ObjectRuleSet, size: ImageSize) -> RuleCheck {
    let n = class.wheels().expect("named classes have wheels");
    let w = &parts.wheels;
    let (holds, detail) = if w.len() != n {
        (false, format!("{} wheels, need {n}", w.len()))
    } else {
        let clash = w.iter().enumerate().find_map(|(i, a)| {
            w[i + 1..]
                .iter()
                .find(|b| !rules.in_range(a, b, size))
                .map(|b| (a.id, b.id))
        });
        match clash {
            Some((a, b)) => (false, format!("wheels {a} and {b} are not distinct parts in range")),
            None => (true, format!("{n} distinct wheels")),
        }
    };
    RuleCheck {
        rule: "C1",
        class,
        holds,
        detail,
    }
}

fn c2(parts: &Parts<'_>, class: CycleClass, rules: &ObjectRuleSet, size: ImageSize) -> RuleCheck {
    // A unicycle without a frame may carry its seat on the wheel instead.
    let (carriers, kind) = if class == CycleClass::Unicycle && parts.frames.is_empty() {
        (&parts.seats, "seat")
    } else {
        (&parts.frames, "frame")
    };
    let (holds, detail) = if carriers.len() != 1 {
        (false, format!("{} {kind}s, need exactly 1", carriers.len()))
    } else {
        let f = carriers[0];
        match parts.wheels.iter().find(|w| !rules.in_range(f, w, size)) {
            Some(w) => (false, format!("{kind} {} not in range of wheel {}", f.id, w.id)),
            None if parts.wheels.is_empty() => (false, "no wheel to carry".to_string()),
            None => (true, format!("{kind} {} in range of every wheel", f.id)),
        }
    };
    RuleCheck {
        rule: "C2",
        class,
        holds,
        detail,
    }
}

/// Names the object formed by the accepted parts.
///
/// With `metrics`, parts of one name that look unlike each other are
/// flagged and left out before the rules run; without, nothing is flagged
/// and the verdict says so.
pub fn classify(
    search: &SearchResult,
    rules: &ObjectRuleSet,
    metrics: Option<&dyn TokenMetric>,
) -> ObjectVerdict {
    let accepted = &search.accepted;
    let flags = match metrics {
        Some(m) => flag_dissimilar(accepted, m, rules.epsilon),
        None => vec![(ComponentFlag::Consistent, None); accepted.len()],
    };
    let consistent: Vec<&Detection> = accepted
        .iter()
        .zip(&flags)
        .filter(|(_, f)| f.0 == ComponentFlag::Consistent)
        .map(|(d, _)| d)
        .collect();
    let of = |name| consistent.iter().copied().filter(|d| d.name == name).collect::<Vec<_>>();
    let parts = Parts {
        wheels: of(ComponentName::Wheel),
        frames: of(ComponentName::Frame),
        seats: of(ComponentName::Seat),
    };

    let mut trace = Vec::new();
    let mut class = CycleClass::None;
    for candidate in [CycleClass::Unicycle, CycleClass::Bicycle, CycleClass::Tricycle] {
        let a = c1(&parts, candidate, rules, search.size);
        let b = c2(&parts, candidate, rules, search.size);
        if a.holds && b.holds {
            assert_eq!(class, CycleClass::None, "wheel counts make classes exclusive");
            class = candidate;
        }
        trace.push(a);
        trace.push(b);
    }

    let mut notes = Vec::new();
    for (name, n) in &search.missing {
        notes.push(format!("search ended {n} {name}(s) short"));
    }
    let components = accepted
        .iter()
        .zip(flags)
        .map(|(d, (flag, ls))| ComponentReport {
            id: d.id,
            name: d.name,
            score: d.score,
            bbox: d.bbox,
            flag,
            local_support: ls,
        })
        .collect();
    ObjectVerdict {
        class,
        consistency: if metrics.is_some() {
            ConsistencyCheck::Verified
        } else {
            ConsistencyCheck::Unverified
        },
        components,
        rule_trace: trace,
        passes: search.passes.clone(),
        notes,
    }
}
