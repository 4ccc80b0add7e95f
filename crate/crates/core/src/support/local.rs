use std::sync::OnceLock;

use serde::Serialize;

use super::descriptor::{DescriptorExtractor, LocalDescriptor};
use crate::error::{Error, Result};
use crate::language::{TokenId, TokenMetric};
use crate::raster::Raster;

/// Mean matched-feature distance of a token to its peers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LocalSupport {
    Distance(f64),
    /// Some peer shares no matched feature with the token.
    Incomparable,
}

impl LocalSupport {
    pub fn distance(self) -> Option<f64> {
        match self {
            LocalSupport::Distance(d) => Some(d),
            LocalSupport::Incomparable => None,
        }
    }

    /// `f_ls ≤ ε`. A token that cannot be compared carries no evidence of
    /// inconsistency and passes.
    pub fn is_consistent(self, epsilon: f64) -> bool {
        match self {
            LocalSupport::Distance(d) => d <= epsilon,
            LocalSupport::Incomparable => true,
        }
    }
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn nearest(v: &[f32], pool: &[Vec<f32>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, w) in pool.iter().enumerate() {
        let d = dist(v, w);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mutually nearest descriptor pairs `(i in a, j in b, distance)`, ordered by
/// `i`. Nearest-neighbour ties resolve to the lower index.
pub fn mutual_matches(a: &LocalDescriptor, b: &LocalDescriptor) -> Vec<(usize, usize, f64)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let b_to_a: Vec<usize> = b.vectors.iter().map(|v| nearest(v, &a.vectors).0).collect();
    a.vectors
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let (j, d) = nearest(v, &b.vectors);
            (b_to_a[j] == i).then_some((i, j, d))
        })
        .collect()
}

/// Average distance over the `m` mutual matches, or `None` when `m = 0`.
pub fn pair_distance(a: &LocalDescriptor, b: &LocalDescriptor) -> Option<f64> {
    let matches = mutual_matches(a, b);
    if matches.is_empty() {
        return None;
    }
    Some(matches.iter().map(|m| m.2).sum::<f64>() / matches.len() as f64)
}

/// `(1/n) Σ_i (1/m_i) Σ_j fdist_j(token, S_i)` over the `n` similar tokens.
pub fn local_support(token: &LocalDescriptor, similar: &[LocalDescriptor]) -> Result<LocalSupport> {
    if similar.is_empty() {
        return Err(Error::Parameter(
            "local support needs at least one similar token".into(),
        ));
    }
    let mut total = 0.0;
    for peer in similar {
        match pair_distance(token, peer) {
            Some(d) => total += d,
            None => return Ok(LocalSupport::Incomparable),
        }
    }
    Ok(LocalSupport::Distance(total / similar.len() as f64))
}

pub fn local_support_images(
    extractor: &dyn DescriptorExtractor,
    token: &Raster,
    similar: &[Raster],
) -> Result<LocalSupport> {
    let t = extractor.describe(token);
    let peers: Vec<LocalDescriptor> = similar.iter().map(|s| extractor.describe(s)).collect();
    local_support(&t, &peers)
}

/// Pair distances between the tokens of one word, computed on first use.
/// Token ids index `descriptors`.
#[derive(Debug)]
pub struct DescriptorMetric {
    descriptors: Vec<LocalDescriptor>,
    pairs: Vec<OnceLock<Option<f64>>>,
}

impl DescriptorMetric {
    pub fn new(descriptors: Vec<LocalDescriptor>) -> Self {
        let n = descriptors.len();
        Self {
            descriptors,
            pairs: (0..n * n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn from_images<'a>(
        extractor: &dyn DescriptorExtractor,
        images: impl IntoIterator<Item = &'a Raster>,
    ) -> Self {
        Self::new(images.into_iter().map(|i| extractor.describe(i)).collect())
    }

    pub fn descriptor(&self, token: TokenId) -> &LocalDescriptor {
        &self.descriptors[token]
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

impl TokenMetric for DescriptorMetric {
    fn pair_distance(&self, a: TokenId, b: TokenId) -> Option<f64> {
        let (lo, hi) = (a.min(b), a.max(b));
        *self.pairs[lo * self.descriptors.len() + hi]
            .get_or_init(|| pair_distance(&self.descriptors[lo], &self.descriptors[hi]))
    }
}
