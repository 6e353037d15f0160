//! Exact, near-duplicate and paragraph-level deduplication.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::{xxh3_128, xxh3_128_with_seed};

use crate::config::{DedupScope, Stage, VerifyMode};
use crate::document::Document;
use crate::error::{CurateError, Result};
use crate::shingle::{estimate_jaccard, exact_jaccard, tokenize_lower, MinHashSignature, ShingleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Exact,
    Near,
}

impl ClusterKind {
    pub fn stage(self) -> Stage {
        match self {
            ClusterKind::Exact => Stage::Exact,
            ClusterKind::Near => Stage::Near,
        }
    }
}

impl fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterKind::Exact => "exact",
            ClusterKind::Near => "near",
        })
    }
}

/// A group of duplicates of which only `survivor_id` is kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DupCluster {
    /// Sorted ascending; the first entry is the survivor.
    pub member_ids: Vec<String>,
    pub survivor_id: String,
    pub kind: ClusterKind,
}

impl DupCluster {
    /// Builds a cluster from at least two distinct ids; the smallest id survives.
    pub fn new(mut member_ids: Vec<String>, kind: ClusterKind) -> Self {
        member_ids.sort();
        member_ids.dedup();
        debug_assert!(member_ids.len() >= 2);
        Self {
            survivor_id: member_ids[0].clone(),
            member_ids,
            kind,
        }
    }

    /// One audit line: `kind<TAB>survivor<TAB>member<TAB>member...`.
    pub fn audit_line(&self) -> String {
        let mut line = format!("{}\t{}", self.kind, self.survivor_id);
        for m in &self.member_ids {
            line.push('\t');
            line.push_str(m);
        }
        line
    }
}

/// Seedless 128-bit hash of the raw text bytes.
pub fn content_hash(text: &str) -> u128 {
    xxh3_128(text.as_bytes())
}

#[derive(Debug, Clone, Default)]
pub struct ExactDedup {
    /// Input positions that stay, ascending.
    pub survivors: Vec<usize>,
    pub clusters: Vec<DupCluster>,
}

/// Groups byte-identical texts (per source under within-source scope).
pub fn exact_dedup<D: Borrow<Document> + Sync>(docs: &[D], scope: DedupScope) -> ExactDedup {
    let hashes: Vec<u128> = docs.par_iter().map(|d| content_hash(&d.borrow().text)).collect();

    let mut groups: HashMap<(u128, Option<&str>), Vec<usize>> = HashMap::new();
    for (i, h) in hashes.into_iter().enumerate() {
        let source = match scope {
            DedupScope::WithinSource => Some(docs[i].borrow().source.as_str()),
            DedupScope::CrossSource => None,
        };
        groups.entry((h, source)).or_default().push(i);
    }

    let mut survivors = Vec::with_capacity(groups.len());
    let mut clusters = Vec::new();
    for members in groups.into_values() {
        if members.len() == 1 {
            survivors.push(members[0]);
            continue;
        }
        let best = *members
            .iter()
            .min_by(|&&a, &&b| docs[a].borrow().id.cmp(&docs[b].borrow().id))
            .expect("non-empty group");
        survivors.push(best);
        let ids = members.iter().map(|&i| docs[i].borrow().id.clone()).collect();
        clusters.push(DupCluster::new(ids, ClusterKind::Exact));
    }
    survivors.sort_unstable();
    clusters.sort_by(|a, b| a.survivor_id.cmp(&b.survivor_id));
    ExactDedup { survivors, clusters }
}

/// Shingle sets and signatures by document id, for pair verification.
#[derive(Debug, Default)]
pub struct SketchStore {
    sets: HashMap<String, ShingleSet>,
    signatures: HashMap<String, MinHashSignature>,
}

impl SketchStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_set(&mut self, id: impl Into<String>, set: ShingleSet) {
        self.sets.insert(id.into(), set);
    }

    pub fn insert_signature(&mut self, id: impl Into<String>, sig: MinHashSignature) {
        self.signatures.insert(id.into(), sig);
    }

    /// Similarity of two documents under `mode`.
    pub fn similarity(&self, a: &str, b: &str, mode: VerifyMode) -> Result<f64> {
        match mode {
            VerifyMode::ExactSets => {
                let (sa, sb) = (
                    lookup(&self.sets, a, "shingle set")?,
                    lookup(&self.sets, b, "shingle set")?,
                );
                Ok(exact_jaccard(sa, sb))
            }
            VerifyMode::Estimate => {
                let (sa, sb) = (
                    lookup(&self.signatures, a, "signature")?,
                    lookup(&self.signatures, b, "signature")?,
                );
                estimate_jaccard(sa, sb)
            }
        }
    }

    /// True iff the similarity of `a` and `b` is at least `threshold`.
    pub fn verify_pair(&self, a: &str, b: &str, threshold: f64, mode: VerifyMode) -> Result<bool> {
        Ok(self.similarity(a, b, mode)? >= threshold)
    }
}

fn lookup<'a, T>(map: &'a HashMap<String, T>, id: &str, what: &str) -> Result<&'a T> {
    map.get(id)
        .ok_or_else(|| CurateError::PipelineState(format!("no {what} computed for document {id:?}")))
}

/// Similarity test on already-computed sketches.
pub fn similarity_of(
    sets: (&ShingleSet, &ShingleSet),
    sigs: (&MinHashSignature, &MinHashSignature),
    mode: VerifyMode,
) -> f64 {
    match mode {
        VerifyMode::ExactSets => exact_jaccard(sets.0, sets.1),
        VerifyMode::Estimate => crate::shingle::estimate_unchecked(sigs.0, sigs.1),
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Members of every set with at least `min_size` elements, each sorted,
    /// ordered by smallest member.
    pub fn groups(&mut self, min_size: usize) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in 0..self.parent.len() {
            let r = self.find(x);
            by_root.entry(r).or_default().push(x);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().filter(|g| g.len() >= min_size).collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Connected components of the confirmed-pair graph, as near clusters.
pub fn cluster_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Vec<DupCluster> {
    fn intern<'a>(s: &'a str, index: &mut HashMap<&'a str, usize>, names: &mut Vec<&'a str>) -> usize {
        *index.entry(s).or_insert_with(|| {
            names.push(s);
            names.len() - 1
        })
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names: Vec<&str> = Vec::new();
    let edges: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(a, b)| {
            let ia = intern(a.as_ref(), &mut index, &mut names);
            let ib = intern(b.as_ref(), &mut index, &mut names);
            (ia, ib)
        })
        .collect();
    let mut uf = UnionFind::new(names.len());
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut clusters: Vec<DupCluster> = uf
        .groups(2)
        .into_iter()
        .map(|g| DupCluster::new(g.into_iter().map(|i| names[i].to_string()).collect(), ClusterKind::Near))
        .collect();
    clusters.sort_by(|a, b| a.survivor_id.cmp(&b.survivor_id));
    clusters
}

/// Why a document left the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DropReason {
    pub stage: Stage,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DedupApplied {
    /// Positions kept, ascending.
    pub kept: Vec<usize>,
    /// Dropped positions with the cluster survivor they collapsed into.
    pub dropped: Vec<(usize, DropReason)>,
}

/// Drops every non-survivor cluster member.
pub fn apply_dedup<D: Borrow<Document>>(docs: &[D], clusters: &[DupCluster]) -> Result<DedupApplied> {
    let pos: HashMap<&str, usize> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.borrow().id.as_str(), i))
        .collect();
    let mut owner: HashMap<(usize, ClusterKind), &str> = HashMap::new();
    let mut drop_of: BTreeMap<usize, DropReason> = BTreeMap::new();

    for c in clusters {
        if !c.member_ids.contains(&c.survivor_id) {
            return Err(CurateError::Invariant(format!(
                "cluster survivor {:?} is not a member",
                c.survivor_id
            )));
        }
        for m in &c.member_ids {
            let &i = pos
                .get(m.as_str())
                .ok_or_else(|| CurateError::Invariant(format!("cluster member {m:?} is not in the corpus")))?;
            if let Some(prev) = owner.insert((i, c.kind), &c.survivor_id) {
                return Err(CurateError::Invariant(format!(
                    "document {m:?} belongs to two {} clusters (survivors {prev:?} and {:?})",
                    c.kind, c.survivor_id
                )));
            }
            if *m != c.survivor_id {
                drop_of.insert(
                    i,
                    DropReason {
                        stage: c.kind.stage(),
                        reason: format!("{} duplicate in cluster of {}", c.kind, c.member_ids.len()),
                        cluster: Some(c.survivor_id.clone()),
                    },
                );
            }
        }
    }
    for c in clusters {
        if let Some(d) = drop_of.get(&pos[c.survivor_id.as_str()]) {
            return Err(CurateError::Invariant(format!(
                "survivor {:?} is also dropped as a {} duplicate",
                c.survivor_id, d.stage
            )));
        }
    }

    let kept = (0..docs.len()).filter(|i| !drop_of.contains_key(i)).collect();
    Ok(DedupApplied {
        kept,
        dropped: drop_of.into_iter().collect(),
    })
}

/// Bloom filter over normalized paragraphs.
#[derive(Debug, Clone)]
pub struct ParagraphBloom {
    bits: Vec<u64>,
    bit_count: usize,
    hash_count: usize,
    target_fp: f64,
    expected: usize,
    inserted: usize,
    seed: u64,
}

impl ParagraphBloom {
    /// Sizes the filter for `expected` keys at false-positive rate `target_fp`.
    pub fn new(expected: usize, target_fp: f64, seed: u64) -> Self {
        assert!(
            target_fp > 0.0 && target_fp < 1.0,
            "target false-positive rate must be in (0, 1)"
        );
        let n = expected.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let m = (-n * target_fp.ln() / (ln2 * ln2)).ceil().max(1.0) as usize;
        let h = ((m as f64 / n) * ln2).round().max(1.0) as usize;
        Self {
            bits: vec![0; m.div_ceil(64)],
            bit_count: m,
            hash_count: h,
            target_fp,
            expected: expected.max(1),
            inserted: 0,
            seed,
        }
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    pub fn hash_count(&self) -> usize {
        self.hash_count
    }

    pub fn target_fp(&self) -> f64 {
        self.target_fp
    }

    pub fn inserted_count(&self) -> usize {
        self.inserted
    }

    /// `(1 - e^(-h n / m))^h` for `n` inserted keys.
    pub fn false_positive_rate(&self, n: usize) -> f64 {
        let h = self.hash_count as f64;
        (1.0 - (-h * n as f64 / self.bit_count as f64).exp()).powf(h)
    }

    pub fn expected_count(&self) -> usize {
        self.expected
    }

    fn probes(&self, key: &[u8]) -> impl Iterator<Item = usize> + '_ {
        let h = xxh3_128_with_seed(key, self.seed);
        let h1 = h as u64;
        let h2 = ((h >> 64) as u64) | 1;
        let m = self.bit_count as u64;
        (0..self.hash_count as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.probes(key).all(|b| self.bits[b / 64] & (1 << (b % 64)) != 0)
    }

    pub fn insert(&mut self, key: &[u8]) {
        let probes: Vec<usize> = self.probes(key).collect();
        for b in probes {
            self.bits[b / 64] |= 1 << (b % 64);
        }
        self.inserted += 1;
    }

    /// Returns whether `key` tested positive; inserts it otherwise.
    pub fn check_and_insert(&mut self, key: &[u8]) -> bool {
        if self.contains(key) {
            true
        } else {
            self.insert(key);
            false
        }
    }
}

/// Paragraphs of `text`: maximal runs of non-blank lines.
pub fn split_paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.strip_suffix('\n').unwrap_or(line);
        if body.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(&text[s..end]);
            }
        } else {
            start.get_or_insert(offset);
            end = offset + body.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(&text[s..end]);
    }
    out
}

/// Paragraph key: lower-cased words joined by single spaces.
pub fn normalize_paragraph(paragraph: &str) -> String {
    tokenize_lower(paragraph).join(" ")
}

/// Number of paragraphs [`paragraph_dedup`] will test in `text`.
pub fn countable_paragraphs(text: &str) -> usize {
    split_paragraphs(text)
        .into_iter()
        .filter(|p| !normalize_paragraph(p).is_empty())
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParagraphEdit {
    Unchanged,
    /// Some paragraphs removed; the survivors are joined by a blank line.
    Trimmed {
        text: String,
        removed: usize,
    },
    /// Every paragraph was a repeat; the document is dropped.
    Emptied {
        removed: usize,
    },
}

/// First-seen paragraph dedup over `docs` in order.
///
/// Paragraphs whose normalized form is empty are left alone.
pub fn paragraph_dedup<D: Borrow<Document>>(docs: &[D], bloom: &mut ParagraphBloom) -> Vec<ParagraphEdit> {
    docs.iter()
        .map(|d| {
            let text = &d.borrow().text;
            let paragraphs = split_paragraphs(text);
            let mut kept: Vec<&str> = Vec::with_capacity(paragraphs.len());
            let mut removed = 0;
            for p in &paragraphs {
                let key = normalize_paragraph(p);
                if !key.is_empty() && bloom.check_and_insert(key.as_bytes()) {
                    removed += 1;
                } else {
                    kept.push(p);
                }
            }
            if removed == 0 {
                ParagraphEdit::Unchanged
            } else if kept.is_empty() {
                ParagraphEdit::Emptied { removed }
            } else {
                ParagraphEdit::Trimmed {
                    text: kept.join("\n\n"),
                    removed,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shingle::ShingleSet;

    fn docs(spec: &[(&str, &str, &str)]) -> Vec<Document> {
        spec.iter()
            .map(|(id, src, text)| Document::new(*id, *src, *text))
            .collect()
    }

    #[test]
    fn exact_three_copies() {
        let d = docs(&[("c", "s", "same"), ("a", "s", "same"), ("b", "s", "same")]);
        let r = exact_dedup(&d, DedupScope::CrossSource);
        assert_eq!(r.survivors, [1]);
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].survivor_id, "a");
        assert_eq!(r.clusters[0].member_ids, ["a", "b", "c"]);
    }

    #[test]
    fn exact_all_distinct() {
        let d = docs(&[("a", "s", "x"), ("b", "s", "y"), ("c", "s", "z")]);
        let r = exact_dedup(&d, DedupScope::CrossSource);
        assert_eq!(r.survivors, [0, 1, 2]);
        assert!(r.clusters.is_empty());
    }

    #[test]
    fn exact_scope() {
        let d = docs(&[("a", "s1", "dup"), ("b", "s2", "dup")]);
        assert_eq!(exact_dedup(&d, DedupScope::WithinSource).survivors, [0, 1]);
        assert_eq!(exact_dedup(&d, DedupScope::CrossSource).survivors, [0]);
    }

    #[test]
    fn exact_hash_is_byte_sensitive() {
        let d = docs(&[("a", "s", "Text"), ("b", "s", "text"), ("c", "s", "text ")]);
        assert!(exact_dedup(&d, DedupScope::CrossSource).clusters.is_empty());
    }

    #[test]
    fn verify_pair_modes() {
        let mut store = SketchStore::new();
        // |∩| = 8, |∪| = 10.
        store.insert_set("a", ShingleSet::from_hashes(0..9, 0));
        store.insert_set("b", ShingleSet::from_hashes(1..10, 0));
        store.insert_set("c", ShingleSet::from_hashes(100..109, 0));
        assert!((store.similarity("a", "b", VerifyMode::ExactSets).unwrap() - 0.8).abs() < 1e-15);
        assert!(store.verify_pair("a", "b", 0.8, VerifyMode::ExactSets).unwrap());
        assert!(!store.verify_pair("a", "b", 0.81, VerifyMode::ExactSets).unwrap());
        assert!(store.verify_pair("a", "a", 1.0, VerifyMode::ExactSets).unwrap());
        assert!(!store.verify_pair("a", "c", 0.8, VerifyMode::ExactSets).unwrap());
        assert!(matches!(
            store.verify_pair("a", "zz", 0.8, VerifyMode::ExactSets),
            Err(CurateError::PipelineState(_))
        ));
        assert!(matches!(
            store.verify_pair("a", "b", 0.8, VerifyMode::Estimate),
            Err(CurateError::PipelineState(_))
        ));
        let sig = crate::shingle::minhash_signature(&ShingleSet::from_hashes(0..9, 0), 16, 0);
        store.insert_signature("a", sig.clone());
        store.insert_signature("b", sig);
        assert!(store.verify_pair("a", "b", 1.0, VerifyMode::Estimate).unwrap());
    }

    #[test]
    fn clusters_follow_transitivity() {
        let c = cluster_pairs(&[("a", "b"), ("b", "c")]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].member_ids, ["a", "b", "c"]);
        assert_eq!(c[0].survivor_id, "a");
        assert!(cluster_pairs::<&str>(&[]).is_empty());
        let c = cluster_pairs(&[("d", "c"), ("a", "b")]);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].survivor_id, "a");
        assert_eq!(c[1].member_ids, ["c", "d"]);
    }

    #[test]
    fn apply_drops_non_survivors() {
        let d = docs(&[("a", "s", "1"), ("b", "s", "2"), ("c", "s", "3"), ("e", "s", "4")]);
        let cl = DupCluster::new(vec!["c".into(), "a".into(), "b".into()], ClusterKind::Near);
        let r = apply_dedup(&d, &[cl]).unwrap();
        assert_eq!(r.kept, [0, 3]);
        assert_eq!(r.dropped.len(), 2);
        assert!(r
            .dropped
            .iter()
            .all(|(_, why)| why.cluster.as_deref() == Some("a") && why.stage == Stage::Near));
        let none = apply_dedup(&d, &[]).unwrap();
        assert_eq!(none.kept, [0, 1, 2, 3]);
    }

    #[test]
    fn apply_rejects_overlapping_clusters() {
        let d = docs(&[("a", "s", "1"), ("b", "s", "2"), ("c", "s", "3")]);
        let c1 = DupCluster::new(vec!["a".into(), "b".into()], ClusterKind::Near);
        let c2 = DupCluster::new(vec!["b".into(), "c".into()], ClusterKind::Near);
        assert!(matches!(
            apply_dedup(&d, &[c1.clone(), c2]),
            Err(CurateError::Invariant(_))
        ));
        // Same doc in clusters of different kinds is allowed.
        let c3 = DupCluster::new(vec!["a".into(), "b".into()], ClusterKind::Exact);
        assert!(apply_dedup(&d, &[c1, c3]).is_ok());
    }

    #[test]
    fn bloom_sizing() {
        let b = ParagraphBloom::new(1000, 0.01, 0);
        // m = ceil(1000 * ln(100) / ln(2)^2) = ceil(9585.058...) = 9586, h = round(9.586 * ln 2) = 7
        assert_eq!(b.bit_count(), 9586);
        assert_eq!(b.hash_count(), 7);
        assert!((b.false_positive_rate(1000) - 0.01).abs() < 5e-4);
        let tiny = ParagraphBloom::new(10, 0.9, 0);
        assert!(tiny.hash_count() >= 1);
    }

    #[test]
    fn bloom_has_no_false_negatives() {
        let mut b = ParagraphBloom::new(500, 0.05, 3);
        let keys: Vec<String> = (0..500).map(|i| format!("key {i}")).collect();
        for k in &keys {
            b.insert(k.as_bytes());
        }
        assert!(keys.iter().all(|k| b.contains(k.as_bytes())));
        assert_eq!(b.inserted_count(), 500);
    }

    #[test]
    fn paragraph_split() {
        assert_eq!(split_paragraphs("a\nb\n\nc\n \n\n d \n"), ["a\nb", "c", " d "]);
        assert!(split_paragraphs("").is_empty());
        assert!(split_paragraphs("\n \n").is_empty());
        assert_eq!(split_paragraphs("one"), ["one"]);
        assert_eq!(split_paragraphs("x\r\n\r\ny"), ["x\r", "y"]);
    }

    #[test]
    fn paragraph_first_seen_wins() {
        let d = docs(&[
            ("d1", "s", "Shared paragraph here.\n\nOnly in one."),
            ("d2", "s", "Something new.\n\nshared   paragraph, HERE"),
            ("d3", "s", "Only in one."),
        ]);
        let mut bloom = ParagraphBloom::new(10, 1e-6, 0);
        let edits = paragraph_dedup(&d, &mut bloom);
        assert_eq!(edits[0], ParagraphEdit::Unchanged);
        assert_eq!(
            edits[1],
            ParagraphEdit::Trimmed {
                text: "Something new.".into(),
                removed: 1
            }
        );
        assert_eq!(edits[2], ParagraphEdit::Emptied { removed: 1 });
    }

    #[test]
    fn union_find_groups() {
        let mut uf = UnionFind::new(6);
        uf.union(4, 5);
        uf.union(0, 2);
        uf.union(2, 4);
        assert_eq!(uf.groups(2), vec![vec![0, 2, 4, 5]]);
        assert_eq!(uf.groups(1).len(), 3);
    }
}
