//! Per-document outcomes, the curation report and the output writers.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::AddAssign;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::dedup::DropReason;
use crate::document::{write_record, Document};
use crate::error::{CurateError, Result};
use crate::lsh::BandingParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Drop(DropReason),
}

/// Final state of one input document.
#[derive(Debug, Clone)]
pub struct DocOutcome {
    /// The document as it stands after all edits.
    pub doc: Document,
    /// Bytes removed from `doc.text` by paragraph dedup while the document survived.
    pub trimmed_bytes: usize,
    pub decision: Decision,
}

impl DocOutcome {
    pub fn kept(doc: Document) -> Self {
        Self {
            doc,
            trimmed_bytes: 0,
            decision: Decision::Keep,
        }
    }

    pub fn is_kept(&self) -> bool {
        self.decision == Decision::Keep
    }

    /// Byte length of the text as it was read.
    pub fn original_bytes(&self) -> usize {
        self.doc.byte_len() + self.trimmed_bytes
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRemoval {
    pub docs_removed: u64,
    pub bytes_removed: u64,
}

impl AddAssign for StageRemoval {
    fn add_assign(&mut self, o: Self) {
        self.docs_removed += o.docs_removed;
        self.bytes_removed += o.bytes_removed;
    }
}

/// Raw counts for a shard of outcomes; merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    pub docs_in: u64,
    pub docs_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub removed: BTreeMap<Stage, StageRemoval>,
}

impl Tally {
    pub fn add(&mut self, o: &DocOutcome) {
        self.docs_in += 1;
        self.bytes_in += o.original_bytes() as u64;
        if o.trimmed_bytes > 0 {
            *self.removed.entry(Stage::Paragraph).or_default() += StageRemoval {
                docs_removed: 0,
                bytes_removed: o.trimmed_bytes as u64,
            };
        }
        match &o.decision {
            Decision::Keep => {
                self.docs_out += 1;
                self.bytes_out += o.doc.byte_len() as u64;
            }
            Decision::Drop(why) => {
                *self.removed.entry(why.stage).or_default() += StageRemoval {
                    docs_removed: 1,
                    bytes_removed: o.doc.byte_len() as u64,
                };
            }
        }
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        self.docs_in += other.docs_in;
        self.docs_out += other.docs_out;
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
        for (stage, r) in other.removed {
            *self.removed.entry(stage).or_default() += r;
        }
        self
    }

    pub fn of(outcomes: &[DocOutcome]) -> Tally {
        outcomes
            .par_iter()
            .fold(Tally::default, |mut t, o| {
                t.add(o);
                t
            })
            .reduce(Tally::default, Tally::merge)
    }
}

/// Run-level facts that are not derived from the outcomes themselves.
#[derive(Debug, Clone, Default)]
pub struct RunFacts {
    pub near_clusters: usize,
    pub exact_clusters: usize,
    pub banding: Option<BandingParams>,
    pub records_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub docs_in: u64,
    pub docs_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub removed_by_stage: BTreeMap<Stage, StageRemoval>,
    pub pruned_doc_fraction: f64,
    pub pruned_byte_fraction: f64,
    /// Near-duplicate clusters found.
    pub cluster_count: usize,
    pub exact_cluster_count: usize,
    /// Banding used by the near stage, if it ran.
    pub banding: Option<BandingParams>,
    /// Malformed input lines skipped (skip policy only).
    pub records_skipped: usize,
    pub config_echo: PipelineConfig,
}

/// `1 - kept/total`, or 0 for an empty corpus.
fn pruned_fraction(kept: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - kept as f64 / total as f64
    }
}

impl CurationReport {
    pub fn new(tally: Tally, facts: &RunFacts, config: &PipelineConfig) -> Self {
        let mut removed_by_stage: BTreeMap<Stage, StageRemoval> =
            config.stages.iter().map(|&s| (s, StageRemoval::default())).collect();
        for (stage, r) in tally.removed {
            *removed_by_stage.entry(stage).or_default() += r;
        }
        Self {
            docs_in: tally.docs_in,
            docs_out: tally.docs_out,
            bytes_in: tally.bytes_in,
            bytes_out: tally.bytes_out,
            removed_by_stage,
            pruned_doc_fraction: pruned_fraction(tally.docs_out, tally.docs_in),
            pruned_byte_fraction: pruned_fraction(tally.bytes_out, tally.bytes_in),
            cluster_count: facts.near_clusters,
            exact_cluster_count: facts.exact_clusters,
            banding: facts.banding,
            records_skipped: facts.records_skipped,
            config_echo: config.clone(),
        }
    }

    pub fn from_outcomes(outcomes: &[DocOutcome], facts: &RunFacts, config: &PipelineConfig) -> Self {
        Self::new(Tally::of(outcomes), facts, config)
    }

    pub fn removed(&self, stage: Stage) -> StageRemoval {
        self.removed_by_stage.get(&stage).copied().unwrap_or_default()
    }

    /// Checks that every document and byte is accounted for exactly once.
    pub fn check_conservation(&self) -> Result<()> {
        let docs: u64 = self.removed_by_stage.values().map(|r| r.docs_removed).sum();
        let bytes: u64 = self.removed_by_stage.values().map(|r| r.bytes_removed).sum();
        if self.docs_out + docs != self.docs_in {
            return Err(CurateError::Invariant(format!(
                "docs_out {} + removed {docs} != docs_in {}",
                self.docs_out, self.docs_in
            )));
        }
        if self.bytes_out + bytes != self.bytes_in {
            return Err(CurateError::Invariant(format!(
                "bytes_out {} + removed {bytes} != bytes_in {}",
                self.bytes_out, self.bytes_in
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct KeptAnnotation {
    kept: bool,
}

#[derive(Serialize)]
struct DropAnnotation<'a> {
    kept: bool,
    #[serde(flatten)]
    why: &'a DropReason,
}

/// Writes kept documents (sorted by id) and, optionally, dropped ones, and
/// returns the report for the run.
pub fn emit<W: Write>(
    outcomes: &[DocOutcome],
    kept: &mut W,
    mut drops: Option<&mut dyn Write>,
    facts: &RunFacts,
    config: &PipelineConfig,
) -> io::Result<CurationReport> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[a].doc.id.cmp(&outcomes[b].doc.id));
    for i in order {
        let o = &outcomes[i];
        match &o.decision {
            Decision::Keep => write_record(kept, &o.doc, KeptAnnotation { kept: true })?,
            Decision::Drop(why) => {
                if let Some(w) = drops.as_mut() {
                    write_record(w, &o.doc, DropAnnotation { kept: false, why })?;
                }
            }
        }
    }
    let report = CurationReport::from_outcomes(outcomes, facts, config);
    report
        .check_conservation()
        .map_err(|e| io::Error::other(e.to_string()))?;
    Ok(report)
}
