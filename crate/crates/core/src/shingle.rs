//! Word n-gram shingling and MinHash signatures.
//!
//! A document is lower-cased, punctuation is turned into spaces, and the
//! resulting words are grouped into overlapping windows of `n` words. Each
//! window is hashed to 64 bits; the set of distinct hashes is the document's
//! [`ShingleSet`]. A [`MinHashSignature`] keeps, for each of `k` seeded hash
//! functions, the minimum hash over that set.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{CurateError, Result};
use crate::filter::is_punctuation;

/// Byte placed between words of a shingle before hashing.
pub const WORD_SEPARATOR: u8 = 0x1F;

const SHINGLE_HASH_SEED: u64 = 0x5348_494e_474c_4531;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Lower-cases `text`, replaces punctuation with spaces and splits on whitespace runs.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_punctuation(c) {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            continue;
        }
        // Simple (single scalar) lowercase mapping.
        let lower = c.to_lowercase().next().unwrap_or(c);
        cur.push(lower);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShingleSet {
    /// Sorted, distinct shingle hashes.
    hashes: Vec<u64>,
    word_count: usize,
}

impl ShingleSet {
    /// Builds a set directly from hash values.
    pub fn from_hashes(hashes: impl IntoIterator<Item = u64>, word_count: usize) -> Self {
        let mut hashes: Vec<u64> = hashes.into_iter().collect();
        hashes.sort_unstable();
        hashes.dedup();
        Self { hashes, word_count }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn contains(&self, h: u64) -> bool {
        self.hashes.binary_search(&h).is_ok()
    }
}

/// Hash of one window of words joined by [`WORD_SEPARATOR`].
pub fn shingle_hash<S: AsRef<str>>(window: &[S], buf: &mut Vec<u8>) -> u64 {
    buf.clear();
    for (i, w) in window.iter().enumerate() {
        if i > 0 {
            buf.push(WORD_SEPARATOR);
        }
        buf.extend_from_slice(w.as_ref().as_bytes());
    }
    xxh3_64_with_seed(buf, SHINGLE_HASH_SEED)
}

/// Distinct hashes of every run of `n` consecutive words.
///
/// Fewer than `n` words gives an empty set.
pub fn shingles<S: AsRef<str>>(words: &[S], n: usize) -> ShingleSet {
    assert!(n >= 1, "n-gram size must be at least 1");
    let mut buf = Vec::new();
    let hashes = if words.len() < n {
        Vec::new()
    } else {
        words.windows(n).map(|w| shingle_hash(w, &mut buf)).collect()
    };
    ShingleSet::from_hashes(hashes, words.len())
}

/// Shingle set of a document text.
pub fn shingle_text(text: &str, n: usize) -> ShingleSet {
    shingles(&tokenize_lower(text), n)
}

/// |a ∩ b| / |a ∪ b|, or 0 when both are empty.
pub fn exact_jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    let (x, y) = (&a.hashes, &b.hashes);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = x.len() + y.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-permutation keys for the `k` hash functions of a signature.
pub fn permutation_keys(k: usize, seed: u64) -> Vec<u64> {
    (0..k as u64)
        .map(|i| mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(i + 1))))
        .collect()
}

/// The `i`-th hash function, given its key from [`permutation_keys`].
#[inline]
pub fn permuted_hash(key: u64, x: u64) -> u64 {
    mix64(x ^ key)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    k: usize,
    seed: u64,
    /// Either exactly `k` minima, or empty for the empty-set sentinel.
    mins: Vec<u64>,
}

impl MinHashSignature {
    /// Signature of the empty set. It matches nothing, itself included.
    pub fn empty(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            mins: Vec::new(),
        }
    }

    pub fn from_parts(k: usize, seed: u64, mins: Vec<u64>) -> Result<Self> {
        if !mins.is_empty() && mins.len() != k {
            return Err(CurateError::SketchMismatch(format!(
                "signature has {} components but k = {k}",
                mins.len()
            )));
        }
        Ok(Self { k, seed, mins })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mins(&self) -> &[u64] {
        &self.mins
    }

    pub fn is_empty(&self) -> bool {
        self.mins.is_empty()
    }

    pub fn check_compatible(&self, other: &MinHashSignature) -> Result<()> {
        if self.k != other.k || self.seed != other.seed {
            return Err(CurateError::SketchMismatch(format!(
                "signatures built with (k={}, seed={}) and (k={}, seed={})",
                self.k, self.seed, other.k, other.seed
            )));
        }
        Ok(())
    }
}

/// Reusable MinHash generator for a fixed `(k, seed)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    keys: Vec<u64>,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 1, "signature length must be at least 1");
        Self {
            seed,
            keys: permutation_keys(k, seed),
        }
    }

    pub fn k(&self) -> usize {
        self.keys.len()
    }

    pub fn signature(&self, set: &ShingleSet) -> MinHashSignature {
        self.signature_of(set.hashes())
    }

    /// Signature over arbitrary 64-bit elements (need not be sorted or distinct).
    pub fn signature_of(&self, elements: &[u64]) -> MinHashSignature {
        let k = self.keys.len();
        if elements.is_empty() {
            return MinHashSignature::empty(k, self.seed);
        }
        let mut mins = vec![u64::MAX; k];
        for &x in elements {
            for (m, &key) in mins.iter_mut().zip(&self.keys) {
                let h = permuted_hash(key, x);
                if h < *m {
                    *m = h;
                }
            }
        }
        MinHashSignature {
            k,
            seed: self.seed,
            mins,
        }
    }
}

pub fn minhash_signature(set: &ShingleSet, k: usize, seed: u64) -> MinHashSignature {
    MinHasher::new(k, seed).signature(set)
}

/// Fraction of equal components; 0 if either side is the empty sentinel.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(estimate_unchecked(a, b))
}

pub(crate) fn estimate_unchecked(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let same = a.mins.iter().zip(&b.mins).filter(|(x, y)| x == y).count();
    same as f64 / a.k as f64
}

/// One line of the `sketch` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub k: usize,
    pub seed: u64,
    pub mins: Vec<u64>,
}

impl SignatureRecord {
    pub fn new(id: impl Into<String>, source: Option<String>, sig: &MinHashSignature) -> Self {
        Self {
            id: id.into(),
            source,
            k: sig.k,
            seed: sig.seed,
            mins: sig.mins.clone(),
        }
    }

    pub fn signature(&self) -> Result<MinHashSignature> {
        MinHashSignature::from_parts(self.k, self.seed, self.mins.clone())
    }
}

/// Magic bytes of the binary signature file.
pub const SIGNATURE_MAGIC: &[u8; 4] = b"MHSG";
pub const SIGNATURE_FORMAT_VERSION: u8 = 1;

/// Writes signatures as `MHSG`, version, k (u32 LE), seed (u64 LE), then k
/// little-endian u64 per signature. Empty sentinels are written as all-ones.
pub fn write_signatures_binary<W: Write>(
    out: &mut W,
    k: usize,
    seed: u64,
    sigs: &[MinHashSignature],
) -> io::Result<()> {
    let k32 = u32::try_from(k).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "k does not fit in u32"))?;
    out.write_all(SIGNATURE_MAGIC)?;
    out.write_all(&[SIGNATURE_FORMAT_VERSION])?;
    out.write_all(&k32.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    let mut row = Vec::with_capacity(k * 8);
    for sig in sigs {
        if sig.k != k || sig.seed != seed {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "signature parameters differ from header",
            ));
        }
        row.clear();
        if sig.is_empty() {
            row.resize(k * 8, 0xff);
        } else {
            for m in &sig.mins {
                row.extend_from_slice(&m.to_le_bytes());
            }
        }
        out.write_all(&row)?;
    }
    Ok(())
}

pub fn read_signatures_binary<R: Read>(input: &mut R) -> io::Result<Vec<MinHashSignature>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut header = [0u8; 17];
    input.read_exact(&mut header)?;
    if &header[..4] != SIGNATURE_MAGIC {
        return Err(bad("not a signature file (bad magic)"));
    }
    if header[4] != SIGNATURE_FORMAT_VERSION {
        return Err(bad("unsupported signature format version"));
    }
    let k = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(header[9..17].try_into().unwrap());
    if k == 0 {
        return Err(bad("k must be positive"));
    }
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % (k * 8) != 0 {
        return Err(bad("truncated signature row"));
    }
    Ok(body
        .chunks_exact(k * 8)
        .map(|row| {
            let mins: Vec<u64> = row
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if mins.iter().all(|&m| m == u64::MAX) {
                MinHashSignature::empty(k, seed)
            } else {
                MinHashSignature { k, seed, mins }
            }
        })
        .collect())
}
