//! Synthetic corpora and brute-force oracles shared by the integration tests.
//!
//! The oracles here never call into the library's hashing or set code: Jaccard
//! is computed over literal word n-grams and clusters by graph search.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use curate_core::Document;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.random_range(3..9);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

pub fn random_words(rng: &mut impl Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| random_word(rng)).collect()
}

/// Word n-grams of a space-separated lowercase text, as literal strings.
pub fn oracle_ngrams(text: &str, n: usize) -> HashSet<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n {
        return HashSet::new();
    }
    words.windows(n).map(|w| w.join(" ")).collect()
}

pub fn oracle_jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Connected components (size >= 2) of an undirected graph by depth-first search.
pub fn oracle_components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(x) = stack.pop() {
            comp.insert(x);
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        if comp.len() >= 2 {
            out.insert(comp);
        }
    }
    out
}

/// Two sets of random 64-bit elements with |A ∪ B| = `union` and
/// |A ∩ B| = `inter`. Returns (A, B).
pub fn sets_with_overlap(rng: &mut impl Rng, union: usize, inter: usize) -> (Vec<u64>, Vec<u64>) {
    let mut pool: HashSet<u64> = HashSet::with_capacity(union);
    while pool.len() < union {
        pool.insert(rng.random());
    }
    let mut pool: Vec<u64> = pool.into_iter().collect();
    pool.sort_unstable();
    pool.shuffle(rng);
    let only = union - inter;
    let a_only = only / 2;
    let shared = &pool[..inter];
    let a: Vec<u64> = shared.iter().chain(&pool[inter..inter + a_only]).copied().collect();
    let b: Vec<u64> = shared.iter().chain(&pool[inter + a_only..]).copied().collect();
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plant {
    Unique,
    /// Original that has planted duplicates.
    Original,
    NearDup,
    ExactCopy,
    Short,
}

pub struct PlantedCorpus {
    pub docs: Vec<Document>,
    pub labels: Vec<Plant>,
    /// Group id per document; members of one planted group share it.
    pub group: Vec<usize>,
}

pub struct PlantSpec {
    pub unique: usize,
    pub near: usize,
    pub exact: usize,
    pub short: usize,
    pub words: usize,
    /// Minimum literal 13-gram Jaccard between a near-dup and its original.
    pub min_jaccard: f64,
}

/// Builds a corpus of random-word documents with planted duplicates.
///
/// Near duplicates are made by replacing one word near either end of an original. Each planted
/// duplicate gets its own original, and originals are not otherwise related.
pub fn planted_corpus(spec: &PlantSpec, seed: u64) -> PlantedCorpus {
    let mut r = rng(seed);
    let originals = spec.unique + spec.near + spec.exact;
    let mut texts: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut group = Vec::new();
    for g in 0..originals {
        texts.push(random_words(&mut r, spec.words).join(" "));
        labels.push(if g < spec.unique {
            Plant::Unique
        } else {
            Plant::Original
        });
        group.push(g);
    }
    for i in 0..spec.near {
        let g = spec.unique + i;
        let base: Vec<&str> = texts[g].split(' ').collect();
        let near = loop {
            let mut words: Vec<String> = base.iter().map(|s| s.to_string()).collect();
            // Edits near either end touch few 13-gram windows.
            let edge = r.random_range(0..6.min(words.len()));
            let pos = if r.random_bool(0.5) {
                edge
            } else {
                words.len() - 1 - edge
            };
            words[pos] = random_word(&mut r);
            let candidate = words.join(" ");
            let j = oracle_jaccard(&oracle_ngrams(&texts[g], 13), &oracle_ngrams(&candidate, 13));
            if candidate != texts[g] && j >= spec.min_jaccard {
                break candidate;
            }
        };
        texts.push(near);
        labels.push(Plant::NearDup);
        group.push(g);
    }
    for i in 0..spec.exact {
        let g = spec.unique + spec.near + i;
        texts.push(texts[g].clone());
        labels.push(Plant::ExactCopy);
        group.push(g);
    }
    for i in 0..spec.short {
        texts.push(random_words(&mut r, 5).join(" "));
        labels.push(Plant::Short);
        group.push(originals + i);
    }

    // Random ids so survivors are not always the originals.
    let mut ids: Vec<usize> = (0..texts.len()).collect();
    ids.shuffle(&mut r);
    let sources = ["web", "books", "code"];
    let docs = texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut d = Document::new(format!("doc-{:05}", ids[i]), sources[i % 3], t);
            d.meta.insert(
                "url".into(),
                serde_json::value::RawValue::from_string(format!("\"https://example.org/{i}\"")).unwrap(),
            );
            d
        })
        .collect();
    PlantedCorpus { docs, labels, group }
}

pub fn to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), d.id.clone().into());
        obj.insert("source".into(), d.source.clone().into());
        obj.insert("text".into(), d.text.clone().into());
        if let Some(s) = d.score {
            obj.insert("score".into(), s.into());
        }
        for (k, v) in &d.meta {
            obj.insert(k.clone(), serde_json::from_str(v.get()).unwrap());
        }
        out.push_str(&serde_json::Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}
