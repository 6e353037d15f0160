//! Stage orchestration and the file-level entry points used by the CLI.
//!
//! Stages always run in the order length, exact, near, paragraph, quality.
//! Every document is kept or removed by exactly one stage. Parallel work is
//! collected back in input order, so the worker count never changes the
//! output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PartialConfig, PipelineConfig, Profile, Stage};
use crate::dedup::{
    apply_dedup, cluster_pairs, countable_paragraphs, exact_dedup, paragraph_dedup, similarity_of, DropReason,
    DupCluster, ParagraphBloom, ParagraphEdit,
};
use crate::document::{ingest, Document, JsonlReader, MalformedPolicy};
use crate::error::{ConfigViolation, CurateError, Result};
use crate::filter::{length_filter, quality_keep_count, quality_ranking};
use crate::lsh::{select_params, BandingParams, LshIndex, LshItem};
use crate::report::{emit, CurationReport, Decision, DocOutcome, RunFacts};
use crate::shingle::{shingle_text, tokenize_lower, MinHashSignature, MinHasher, ShingleSet, SignatureRecord};

/// The validated, ordered list of stages to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub profile: Profile,
}

impl StagePlan {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            stages: config.stages.clone(),
            profile: config.profile,
        })
    }

    /// Checks data-dependent requirements before any document is touched.
    pub fn check_inputs(&self, docs: &[Document]) -> Result<()> {
        if self.stages.contains(&Stage::Quality) {
            if let Some(d) = docs.iter().find(|d| d.score.is_none()) {
                return Err(CurateError::MissingScore { id: d.id.clone() });
            }
        }
        Ok(())
    }
}

/// Banding for the near stage: the configured override, else auto-selected.
pub fn banding_for(config: &PipelineConfig) -> BandingParams {
    match (config.bands, config.rows) {
        (Some(bands), Some(rows)) => BandingParams { bands, rows },
        _ => select_params(config.num_perms, config.jaccard_threshold),
    }
}

/// Result of curating an in-memory corpus.
#[derive(Debug, Clone)]
pub struct Curation {
    /// One outcome per input document, in input order.
    pub outcomes: Vec<DocOutcome>,
    /// Exact clusters followed by near clusters.
    pub clusters: Vec<DupCluster>,
    pub facts: RunFacts,
}

impl Curation {
    pub fn report(&self, config: &PipelineConfig) -> CurationReport {
        CurationReport::from_outcomes(&self.outcomes, &self.facts, config)
    }

    pub fn kept(&self) -> impl Iterator<Item = &Document> {
        self.outcomes.iter().filter(|o| o.is_kept()).map(|o| &o.doc)
    }
}

struct Run<'c> {
    config: &'c PipelineConfig,
    outcomes: Vec<DocOutcome>,
    /// Positions in `outcomes` still in the corpus, ascending.
    alive: Vec<usize>,
    clusters: Vec<DupCluster>,
    facts: RunFacts,
}

impl Run<'_> {
    fn alive_docs(&self) -> Vec<&Document> {
        self.alive.iter().map(|&i| &self.outcomes[i].doc).collect()
    }

    /// Applies drops given as positions into `alive`.
    fn drop_alive(&mut self, drops: Vec<(usize, DropReason)>) {
        let mut gone = vec![false; self.alive.len()];
        for (slot, why) in drops {
            gone[slot] = true;
            self.outcomes[self.alive[slot]].decision = Decision::Drop(why);
        }
        let mut slot = 0;
        self.alive.retain(|_| {
            let keep = !gone[slot];
            slot += 1;
            keep
        });
    }

    fn length(&mut self) {
        let threshold = self.config.length_threshold;
        let drops: Vec<(usize, DropReason)> = self
            .alive_docs()
            .par_iter()
            .enumerate()
            .filter_map(|(slot, d)| {
                let decision = length_filter(d, threshold);
                decision.is_drop().then_some((
                    slot,
                    DropReason {
                        stage: Stage::Length,
                        reason: decision.detail,
                        cluster: None,
                    },
                ))
            })
            .collect();
        self.drop_alive(drops);
    }

    fn exact(&mut self) -> Result<()> {
        let docs = self.alive_docs();
        let found = exact_dedup(&docs, self.config.dedup_scope);
        let applied = apply_dedup(&docs, &found.clusters)?;
        debug_assert_eq!(applied.kept, found.survivors);
        self.facts.exact_clusters = found.clusters.len();
        self.clusters.extend(found.clusters);
        self.drop_alive(applied.dropped);
        Ok(())
    }

    fn near(&mut self) -> Result<()> {
        let cfg = self.config;
        let params = banding_for(cfg);
        self.facts.banding = Some(params);

        let docs = self.alive_docs();
        let hasher = MinHasher::new(cfg.num_perms, cfg.seed);
        let sketches: Vec<(ShingleSet, MinHashSignature)> = docs
            .par_iter()
            .map(|d| {
                let set = shingle_text(&d.text, cfg.ngram_size);
                let sig = hasher.signature(&set);
                (set, sig)
            })
            .collect();

        let items: Vec<LshItem<'_>> = docs
            .iter()
            .zip(&sketches)
            .map(|(d, (_, sig))| LshItem {
                id: &d.id,
                source: &d.source,
                signature: sig,
            })
            .collect();
        let index = LshIndex::build(&items, params, cfg.dedup_scope)?;
        let confirmed: Vec<(&str, &str)> = index
            .candidate_positions()
            .into_par_iter()
            .filter(|&(a, b)| {
                let (sa, sb) = (&sketches[a], &sketches[b]);
                similarity_of((&sa.0, &sb.0), (&sa.1, &sb.1), cfg.verify) >= cfg.jaccard_threshold
            })
            .map(|(a, b)| (docs[a].id.as_str(), docs[b].id.as_str()))
            .collect();

        let clusters = cluster_pairs(&confirmed);
        let applied = apply_dedup(&docs, &clusters)?;
        self.facts.near_clusters = clusters.len();
        self.clusters.extend(clusters);
        self.drop_alive(applied.dropped);
        Ok(())
    }

    fn paragraph(&mut self) {
        let docs = self.alive_docs();
        let expected: usize = docs.par_iter().map(|d| countable_paragraphs(&d.text)).sum();
        let mut bloom = ParagraphBloom::new(expected, self.config.bloom_target_fp, self.config.seed);
        let edits = paragraph_dedup(&docs, &mut bloom);

        let mut drops = Vec::new();
        for (slot, edit) in edits.into_iter().enumerate() {
            let pos = self.alive[slot];
            match edit {
                ParagraphEdit::Unchanged => {}
                ParagraphEdit::Trimmed { text, .. } => {
                    let o = &mut self.outcomes[pos];
                    o.trimmed_bytes += o.doc.byte_len() - text.len();
                    o.doc.text = text;
                }
                ParagraphEdit::Emptied { removed } => drops.push((
                    slot,
                    DropReason {
                        stage: Stage::Paragraph,
                        reason: format!("all {removed} paragraphs seen earlier in the corpus"),
                        cluster: None,
                    },
                )),
            }
        }
        self.drop_alive(drops);
    }

    fn quality(&mut self) -> Result<()> {
        let docs = self.alive_docs();
        let ranked = quality_ranking(&docs)?;
        let keep = quality_keep_count(docs.len(), self.config.quality_percentile);
        let n = docs.len();
        let drops: Vec<(usize, DropReason)> = ranked
            .iter()
            .enumerate()
            .skip(keep)
            .map(|(rank, &slot)| {
                (
                    slot,
                    DropReason {
                        stage: Stage::Quality,
                        reason: format!(
                            "score {} ranked {} of {n}, outside top {keep}",
                            docs[slot].score.unwrap_or(f64::NAN),
                            rank + 1
                        ),
                        cluster: None,
                    },
                )
            })
            .collect();
        self.drop_alive(drops);
        Ok(())
    }
}

/// Runs every configured stage over `docs` on the current rayon pool.
pub fn curate(config: &PipelineConfig, docs: Vec<Document>) -> Result<Curation> {
    let plan = StagePlan::new(config)?;
    plan.check_inputs(&docs)?;

    let mut run = Run {
        config,
        alive: (0..docs.len()).collect(),
        outcomes: docs.into_iter().map(DocOutcome::kept).collect(),
        clusters: Vec::new(),
        facts: RunFacts::default(),
    };
    for stage in &plan.stages {
        match stage {
            Stage::Length => run.length(),
            Stage::Exact => run.exact()?,
            Stage::Near => run.near()?,
            Stage::Paragraph => run.paragraph(),
            Stage::Quality => run.quality()?,
        }
    }
    Ok(Curation {
        outcomes: run.outcomes,
        clusters: run.clusters,
        facts: run.facts,
    })
}

/// Builds a rayon pool with `workers` threads (0 means one per core).
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CurateError::config("workers", e.to_string()))
}

/// Side outputs of [`run_pipeline`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    pub report: Option<PathBuf>,
    pub drops: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through `<path>.partial` and renames on success. On a write error
/// the partial file is left behind as a marker.
pub fn write_atomically<T>(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<T>) -> Result<T> {
    let partial = partial_path(path);
    let file = File::create(&partial).map_err(|e| CurateError::io(&partial, e))?;
    let mut w = BufWriter::new(file);
    let value = body(&mut w)
        .and_then(|v| w.flush().map(|_| v))
        .map_err(|source| CurateError::PartialOutput {
            partial: partial.clone(),
            source,
        })?;
    drop(w);
    std::fs::rename(&partial, path).map_err(|e| CurateError::io(path, e))?;
    Ok(value)
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CurateError::io(path, e))
}

pub fn read_corpus(path: &Path, policy: MalformedPolicy) -> Result<(Vec<Document>, usize)> {
    let got = ingest(open_input(path)?, policy).map_err(|e| match e {
        CurateError::Io { source, .. } => CurateError::io(path, source),
        other => other,
    })?;
    Ok((got.docs, got.skipped))
}

/// Reads `input`, curates it, and writes the kept records to `output` plus
/// any requested side files.
pub fn run_pipeline(config: &PipelineConfig, input: &Path, output: &Path, opts: &RunOptions) -> Result<CurationReport> {
    config.validate()?;
    let pool = worker_pool(opts.workers)?;
    let (docs, skipped) = read_corpus(input, config.on_malformed)?;
    let mut curation = pool.install(|| curate(config, docs))?;
    curation.facts.records_skipped = skipped;

    let mut drops_buf: Option<Vec<u8>> = opts.drops.as_ref().map(|_| Vec::new());
    let report = write_atomically(output, |w| {
        emit(
            &curation.outcomes,
            w,
            drops_buf.as_mut().map(|b| b as &mut dyn Write),
            &curation.facts,
            config,
        )
    })?;

    if let (Some(path), Some(buf)) = (&opts.drops, drops_buf) {
        write_atomically(path, |w| w.write_all(&buf))?;
    }
    if let Some(path) = &opts.clusters {
        write_atomically(path, |w| write_cluster_audit(w, &curation.clusters))?;
    }
    if let Some(path) = &opts.report {
        write_atomically(path, |w| write_report(w, &report))?;
    }
    Ok(report)
}

pub fn write_cluster_audit<W: Write>(w: &mut W, clusters: &[DupCluster]) -> io::Result<()> {
    for c in clusters {
        writeln!(w, "{}", c.audit_line())?;
    }
    Ok(())
}

pub fn write_report<W: Write>(w: &mut W, report: &CurationReport) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, report)?;
    w.write_all(b"\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SourceStats {
    pub docs: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistogramBucket {
    pub min_words: usize,
    pub max_words: usize,
    pub docs: u64,
}

/// Read-only corpus summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub docs: u64,
    pub bytes: u64,
    pub per_source: BTreeMap<String, SourceStats>,
    /// Word counts in power-of-two buckets: 0, 1, 2-3, 4-7, ...
    pub word_histogram: Vec<HistogramBucket>,
}

fn word_bucket(words: usize) -> usize {
    if words == 0 {
        0
    } else {
        words.ilog2() as usize + 1
    }
}

impl CorpusStats {
    pub fn add(&mut self, doc: &Document) {
        let bytes = doc.byte_len() as u64;
        self.docs += 1;
        self.bytes += bytes;
        let s = self.per_source.entry(doc.source.clone()).or_default();
        s.docs += 1;
        s.bytes += bytes;

        let bucket = word_bucket(tokenize_lower(&doc.text).len());
        while self.word_histogram.len() <= bucket {
            let b = self.word_histogram.len();
            let (min_words, max_words) = if b == 0 { (0, 0) } else { (1 << (b - 1), (1 << b) - 1) };
            self.word_histogram.push(HistogramBucket {
                min_words,
                max_words,
                docs: 0,
            });
        }
        self.word_histogram[bucket].docs += 1;
    }
}

pub fn stats_of<R: BufRead>(reader: R, policy: MalformedPolicy) -> Result<CorpusStats> {
    let mut stats = CorpusStats::default();
    for row in JsonlReader::new(reader, policy) {
        let (_, doc) = row?;
        stats.add(&doc);
    }
    Ok(stats)
}

pub fn stats(input: &Path, policy: MalformedPolicy) -> Result<CorpusStats> {
    stats_of(open_input(input)?, policy)
}

/// Loads and checks a configuration file. With `input`, also checks the
/// data-dependent stage requirements against that corpus.
pub fn validate_config(path: &Path, input: Option<&Path>) -> Result<PipelineConfig> {
    let config = PartialConfig::from_file(path)?.resolve();
    let mut violations = config.violations();
    if let (Some(input), true) = (input, config.has_stage(Stage::Quality)) {
        let mut missing = 0usize;
        let mut first = None;
        for row in JsonlReader::new(open_input(input)?, config.on_malformed) {
            let (_, doc) = row?;
            if doc.score.is_none() {
                missing += 1;
                first.get_or_insert(doc.id);
            }
        }
        if let Some(id) = first {
            violations.push(ConfigViolation::new(
                "stages",
                format!("quality stage needs a score on every record; {missing} record(s) lack one (first: {id:?})"),
            ));
        }
    }
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(CurateError::Config(violations))
    }
}

/// Signature records for every document, in input order.
pub fn sketch_corpus(docs: &[Document], ngram_size: usize, num_perms: usize, seed: u64) -> Vec<SignatureRecord> {
    let hasher = MinHasher::new(num_perms, seed);
    docs.par_iter()
        .map(|d| {
            let sig = hasher.signature(&shingle_text(&d.text, ngram_size));
            SignatureRecord::new(d.id.clone(), Some(d.source.clone()), &sig)
        })
        .collect()
}

pub fn read_signature_records(path: &Path) -> Result<Vec<SignatureRecord>> {
    let reader = open_input(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CurateError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SignatureRecord = serde_json::from_str(&line).map_err(|e| CurateError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
