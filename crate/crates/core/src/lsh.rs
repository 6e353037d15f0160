//! Banded LSH over MinHash signatures.
//!
//! A signature of `k` components is cut into `bands` groups of `rows`
//! consecutive components. Two documents become a candidate pair when they
//! agree on every component of at least one band.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::config::DedupScope;
use crate::error::{CurateError, Result};
use crate::shingle::MinHashSignature;

const BAND_SALT: u64 = 0x4c53_485f_4241_4e44;

/// Integration step used when scoring banding parameters.
pub const INTEGRATION_STEP: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandingParams {
    pub bands: usize,
    pub rows: usize,
}

impl BandingParams {
    pub fn new(bands: usize, rows: usize) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(CurateError::config("bands", "bands and rows must be at least 1"));
        }
        Ok(Self { bands, rows })
    }

    /// Signature components consumed by the banding (`bands * rows`).
    pub fn k_used(&self) -> usize {
        self.bands * self.rows
    }
}

/// Similarity where the S-curve turns over: `(1/b)^(1/r)`.
pub fn approx_threshold(bands: usize, rows: usize) -> f64 {
    (1.0 / bands as f64).powf(1.0 / rows as f64)
}

/// Probability that two sets with Jaccard `s` share at least one band.
pub fn collision_probability(s: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / INTEGRATION_STEP).round().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// Area of false positives below `threshold` plus false negatives above it.
pub fn banding_error(threshold: f64, bands: usize, rows: usize) -> f64 {
    let fp = trapezoid(|s| collision_probability(s, bands, rows), 0.0, threshold);
    let fneg = trapezoid(|s| 1.0 - collision_probability(s, bands, rows), threshold, 1.0);
    fp + fneg
}

/// Picks the `(bands, rows)` with `bands * rows <= k` minimizing [`banding_error`].
///
/// Near-equal errors prefer more bands.
pub fn select_params(k: usize, threshold: f64) -> BandingParams {
    assert!(k >= 1, "k must be at least 1");
    let mut best = BandingParams { bands: 1, rows: 1 };
    let mut best_err = f64::INFINITY;
    for bands in 1..=k {
        for rows in 1..=k / bands {
            let err = banding_error(threshold, bands, rows);
            if err < best_err - 1e-12 || ((err - best_err).abs() <= 1e-12 && bands > best.bands) {
                best = BandingParams { bands, rows };
                best_err = err;
            }
        }
    }
    best
}

/// Band key: all `rows` components of the band, salted with the band index.
pub fn band_key(band: usize, components: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(components.len() * 8);
    for c in components {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    xxh3_64_with_seed(&bytes, BAND_SALT ^ (band as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// An entry to index.
#[derive(Debug, Clone, Copy)]
pub struct LshItem<'a> {
    pub id: &'a str,
    pub source: &'a str,
    pub signature: &'a MinHashSignature,
}

#[derive(Debug)]
pub struct LshIndex {
    params: BandingParams,
    scope: DedupScope,
    ids: Vec<String>,
    sources: Vec<String>,
    /// Input position of each indexed entry.
    positions: Vec<usize>,
    /// One map per band: key -> indexed entries in insertion order.
    buckets: Vec<HashMap<u64, Vec<u32>>>,
}

impl LshIndex {
    /// Builds the index. Empty-set signatures are not inserted.
    pub fn build(items: &[LshItem<'_>], params: BandingParams, scope: DedupScope) -> Result<Self> {
        let mut kept: Vec<(usize, &LshItem<'_>)> = Vec::with_capacity(items.len());
        let mut reference: Option<&MinHashSignature> = None;
        for (pos, item) in items.iter().enumerate() {
            match reference {
                None => reference = Some(item.signature),
                Some(r) => r.check_compatible(item.signature)?,
            }
            if !item.signature.is_empty() {
                kept.push((pos, item));
            }
        }
        if let Some(r) = reference {
            if params.k_used() > r.k() {
                return Err(CurateError::config(
                    "bands",
                    format!("bands * rows = {} exceeds signature length {}", params.k_used(), r.k()),
                ));
            }
        }

        let rows = params.rows;
        let buckets = (0..params.bands)
            .into_par_iter()
            .map(|band| {
                let mut map: HashMap<u64, Vec<u32>> = HashMap::new();
                for (slot, (_, item)) in kept.iter().enumerate() {
                    let comps = &item.signature.mins()[band * rows..(band + 1) * rows];
                    map.entry(band_key(band, comps)).or_default().push(slot as u32);
                }
                map
            })
            .collect();

        Ok(Self {
            params,
            scope,
            ids: kept.iter().map(|(_, it)| it.id.to_string()).collect(),
            sources: kept.iter().map(|(_, it)| it.source.to_string()).collect(),
            positions: kept.iter().map(|(p, _)| *p).collect(),
            buckets,
        })
    }

    pub fn params(&self) -> BandingParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn occupied_buckets(&self) -> usize {
        self.buckets.iter().map(HashMap::len).sum()
    }

    /// Bands in which two input positions share a bucket.
    pub fn shared_bands(&self, a: usize, b: usize) -> usize {
        let slot = |p: usize| self.positions.iter().position(|&x| x == p);
        let (Some(sa), Some(sb)) = (slot(a), slot(b)) else {
            return 0;
        };
        self.buckets
            .iter()
            .filter(|m| m.values().any(|v| v.contains(&(sa as u32)) && v.contains(&(sb as u32))))
            .count()
    }

    /// Unordered candidate pairs as input positions `(i, j)` with `i < j`, sorted.
    pub fn candidate_positions(&self) -> Vec<(usize, usize)> {
        let within = self.scope == DedupScope::WithinSource;
        let per_band: Vec<Vec<(u32, u32)>> = self
            .buckets
            .par_iter()
            .map(|map| {
                let mut out = Vec::new();
                for members in map.values() {
                    for (x, &a) in members.iter().enumerate() {
                        for &b in &members[x + 1..] {
                            if within && self.sources[a as usize] != self.sources[b as usize] {
                                continue;
                            }
                            out.push((a.min(b), a.max(b)));
                        }
                    }
                }
                out
            })
            .collect();

        let mut seen: HashSet<(u32, u32)> = HashSet::new();
        for pairs in per_band {
            seen.extend(pairs);
        }
        let mut out: Vec<(usize, usize)> = seen
            .into_iter()
            .map(|(a, b)| {
                let (pa, pb) = (self.positions[a as usize], self.positions[b as usize]);
                (pa.min(pb), pa.max(pb))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Unordered candidate pairs by id, each as `(smaller, larger)`, sorted.
    pub fn candidate_pairs(&self) -> Vec<(String, String)> {
        let slot_of: HashMap<usize, usize> = self.positions.iter().enumerate().map(|(s, &p)| (p, s)).collect();
        let mut out: Vec<(String, String)> = self
            .candidate_positions()
            .into_iter()
            .map(|(a, b)| {
                let (x, y) = (&self.ids[slot_of[&a]], &self.ids[slot_of[&b]]);
                if x <= y {
                    (x.clone(), y.clone())
                } else {
                    (y.clone(), x.clone())
                }
            })
            .collect();
        out.sort();
        out
    }
}

pub fn build_index(items: &[LshItem<'_>], params: BandingParams, scope: DedupScope) -> Result<LshIndex> {
    LshIndex::build(items, params, scope)
}
