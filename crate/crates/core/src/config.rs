//! Pipeline configuration.
//!
//! The on-disk form is a flat TOML table whose keys are the field names of
//! [`PipelineConfig`]. Values are layered: command-line overrides beat the
//! file, which beats the profile defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::document::MalformedPolicy;
use crate::error::{ConfigViolation, CurateError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Length,
    Exact,
    Near,
    Paragraph,
    Quality,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Length,
        Stage::Exact,
        Stage::Near,
        Stage::Paragraph,
        Stage::Quality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Length => "length",
            Stage::Exact => "exact",
            Stage::Near => "near",
            Stage::Paragraph => "paragraph",
            Stage::Quality => "quality",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (expected one of length, exact, near, paragraph, quality)"))
    }
}

/// Whether duplicates are collapsed only inside one source or across sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupScope {
    #[serde(alias = "within")]
    WithinSource,
    #[serde(alias = "cross")]
    CrossSource,
}

impl FromStr for DedupScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "within" | "within_source" => Ok(DedupScope::WithinSource),
            "cross" | "cross_source" => Ok(DedupScope::CrossSource),
            _ => Err(format!("unknown scope {s:?} (expected within or cross)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Text,
    Code,
}

impl Profile {
    pub fn default_num_perms(self) -> usize {
        match self {
            Profile::Text => 128,
            Profile::Code => 256,
        }
    }

    pub fn default_jaccard_threshold(self) -> f64 {
        match self {
            Profile::Text => 0.8,
            Profile::Code => 0.85,
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(Profile::Text),
            "code" => Ok(Profile::Code),
            _ => Err(format!("unknown profile {s:?} (expected text or code)")),
        }
    }
}

/// How a candidate pair is confirmed as a near duplicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Exact Jaccard over the retained shingle sets.
    #[serde(alias = "exact")]
    ExactSets,
    /// MinHash estimate from the signatures.
    Estimate,
}

impl FromStr for VerifyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" | "exact_sets" => Ok(VerifyMode::ExactSets),
            "estimate" => Ok(VerifyMode::Estimate),
            _ => Err(format!("unknown verify mode {s:?} (expected exact or estimate)")),
        }
    }
}

pub const DEFAULT_LENGTH_THRESHOLD: usize = 200;
pub const DEFAULT_NGRAM_SIZE: usize = 13;
pub const DEFAULT_QUALITY_PERCENTILE: f64 = 0.10;
pub const DEFAULT_BLOOM_FP: f64 = 0.01;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_STAGES: [Stage; 3] = [Stage::Length, Stage::Exact, Stage::Near];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub stages: Vec<Stage>,
    /// Minimum stripped character count a document needs to be kept.
    pub length_threshold: usize,
    /// Words per shingle.
    pub ngram_size: usize,
    /// MinHash permutations per signature.
    pub num_perms: usize,
    pub jaccard_threshold: f64,
    pub dedup_scope: DedupScope,
    pub verify: VerifyMode,
    /// Banding override; both or neither must be set.
    pub bands: Option<usize>,
    pub rows: Option<usize>,
    pub quality_percentile: f64,
    pub bloom_target_fp: f64,
    pub seed: u64,
    pub on_malformed: MalformedPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PartialConfig::default().resolve()
    }
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        PartialConfig {
            profile: Some(profile),
            ..PartialConfig::default()
        }
        .resolve()
    }

    pub fn with_stages(mut self, stages: &[Stage]) -> Self {
        self.stages = stages.to_vec();
        self
    }

    /// Checks every invariant, returning all violations at once.
    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, msg: String| out.push(ConfigViolation::new(key, msg));

        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            bad(
                "jaccard_threshold",
                format!("must be in (0, 1], got {}", self.jaccard_threshold),
            );
        }
        if !(self.quality_percentile > 0.0 && self.quality_percentile <= 1.0) {
            bad(
                "quality_percentile",
                format!("must be in (0, 1], got {}", self.quality_percentile),
            );
        }
        if !(self.bloom_target_fp > 0.0 && self.bloom_target_fp < 1.0) {
            bad(
                "bloom_target_fp",
                format!("must be in (0, 1), got {}", self.bloom_target_fp),
            );
        }
        if self.ngram_size == 0 {
            bad("ngram_size", "must be at least 1".into());
        }
        if self.num_perms == 0 {
            bad("num_perms", "must be at least 1".into());
        }
        match (self.bands, self.rows) {
            (None, None) => {}
            (Some(b), Some(r)) => {
                if b == 0 {
                    bad("bands", "must be at least 1".into());
                }
                if r == 0 {
                    bad("rows", "must be at least 1".into());
                }
                if b.saturating_mul(r) > self.num_perms {
                    bad(
                        "bands",
                        format!("bands * rows = {} exceeds num_perms = {}", b * r, self.num_perms),
                    );
                }
            }
            (Some(_), None) => bad("rows", "must be set together with bands".into()),
            (None, Some(_)) => bad("bands", "must be set together with rows".into()),
        }
        if self.stages.is_empty() {
            bad("stages", "at least one stage is required".into());
        }
        for pair in self.stages.windows(2) {
            if pair[0] == pair[1] {
                bad("stages", format!("stage {} listed twice", pair[0]));
            } else if pair[0] > pair[1] {
                bad(
                    "stages",
                    format!(
                        "stage {} must come before {} (order is length, exact, near, paragraph, quality)",
                        pair[1], pair[0]
                    ),
                );
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CurateError::Config(v))
        }
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// A configuration layer where every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub profile: Option<Profile>,
    pub stages: Option<Vec<Stage>>,
    pub length_threshold: Option<usize>,
    pub ngram_size: Option<usize>,
    pub num_perms: Option<usize>,
    pub jaccard_threshold: Option<f64>,
    pub dedup_scope: Option<DedupScope>,
    pub verify: Option<VerifyMode>,
    pub bands: Option<usize>,
    pub rows: Option<usize>,
    pub quality_percentile: Option<f64>,
    pub bloom_target_fp: Option<f64>,
    pub seed: Option<u64>,
    pub on_malformed: Option<MalformedPolicy>,
}

impl PartialConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("config")
                .to_string();
            CurateError::config(key, format!("{}", e).trim_end().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CurateError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Layers `over` on top of `self`; keys set in `over` win.
    pub fn merge(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            profile: over.profile.or(self.profile),
            stages: over.stages.or(self.stages),
            length_threshold: over.length_threshold.or(self.length_threshold),
            ngram_size: over.ngram_size.or(self.ngram_size),
            num_perms: over.num_perms.or(self.num_perms),
            jaccard_threshold: over.jaccard_threshold.or(self.jaccard_threshold),
            dedup_scope: over.dedup_scope.or(self.dedup_scope),
            verify: over.verify.or(self.verify),
            bands: over.bands.or(self.bands),
            rows: over.rows.or(self.rows),
            quality_percentile: over.quality_percentile.or(self.quality_percentile),
            bloom_target_fp: over.bloom_target_fp.or(self.bloom_target_fp),
            seed: over.seed.or(self.seed),
            on_malformed: over.on_malformed.or(self.on_malformed),
        }
    }

    /// Fills unset keys from the profile defaults.
    pub fn resolve(self) -> PipelineConfig {
        let profile = self.profile.unwrap_or(Profile::Text);
        PipelineConfig {
            profile,
            stages: self.stages.unwrap_or_else(|| DEFAULT_STAGES.to_vec()),
            length_threshold: self.length_threshold.unwrap_or(DEFAULT_LENGTH_THRESHOLD),
            ngram_size: self.ngram_size.unwrap_or(DEFAULT_NGRAM_SIZE),
            num_perms: self.num_perms.unwrap_or(profile.default_num_perms()),
            jaccard_threshold: self.jaccard_threshold.unwrap_or(profile.default_jaccard_threshold()),
            dedup_scope: self.dedup_scope.unwrap_or(DedupScope::CrossSource),
            verify: self.verify.unwrap_or(VerifyMode::ExactSets),
            bands: self.bands,
            rows: self.rows,
            quality_percentile: self.quality_percentile.unwrap_or(DEFAULT_QUALITY_PERCENTILE),
            bloom_target_fp: self.bloom_target_fp.unwrap_or(DEFAULT_BLOOM_FP),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            on_malformed: self.on_malformed.unwrap_or_default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.length_threshold, 200);
        assert_eq!(cfg.ngram_size, 13);
        assert_eq!(cfg.num_perms, 128);
        assert_eq!(cfg.jaccard_threshold, 0.8);
        assert_eq!(cfg.quality_percentile, 0.10);
        assert!(cfg.violations().is_empty());
    }

    #[test]
    fn code_profile_defaults() {
        let cfg = PipelineConfig::for_profile(Profile::Code);
        assert_eq!(cfg.num_perms, 256);
        assert_eq!(cfg.jaccard_threshold, 0.85);
    }

    #[test]
    fn threshold_out_of_range_names_key() {
        let cfg = PartialConfig::from_toml_str("jaccard_threshold = 1.5")
            .unwrap()
            .resolve();
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "jaccard_threshold");
    }

    #[test]
    fn all_violations_reported() {
        let cfg = PartialConfig::from_toml_str(
            "jaccard_threshold = 0.0\nquality_percentile = 2.0\nbloom_target_fp = 1.0\nngram_size = 0\n",
        )
        .unwrap()
        .resolve();
        let keys: Vec<_> = cfg.violations().into_iter().map(|v| v.key).collect();
        assert_eq!(
            keys,
            [
                "jaccard_threshold",
                "quality_percentile",
                "bloom_target_fp",
                "ngram_size"
            ]
        );
    }

    #[test]
    fn banding_must_fit_permutations() {
        let cfg = PartialConfig::from_toml_str("num_perms = 64\nbands = 16\nrows = 8")
            .unwrap()
            .resolve();
        assert_eq!(cfg.violations()[0].key, "bands");
        let cfg = PartialConfig::from_toml_str("bands = 16").unwrap().resolve();
        assert_eq!(cfg.violations()[0].key, "rows");
    }

    #[test]
    fn stage_order_enforced() {
        let cfg = PipelineConfig::default().with_stages(&[Stage::Near, Stage::Exact]);
        assert_eq!(cfg.violations()[0].key, "stages");
        let cfg = PipelineConfig::default().with_stages(&[Stage::Exact, Stage::Exact]);
        assert_eq!(cfg.violations()[0].key, "stages");
    }

    #[test]
    fn unknown_key_is_rejected() {
        match PartialConfig::from_toml_str("jacard_threshold = 0.8").unwrap_err() {
            CurateError::Config(v) => assert_eq!(v[0].key, "jacard_threshold"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let file = PartialConfig::from_toml_str("profile = \"code\"\njaccard_threshold = 0.9\nseed = 7").unwrap();
        let cli = PartialConfig {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = file.merge(cli).resolve();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.jaccard_threshold, 0.9);
        assert_eq!(cfg.num_perms, 256);
    }

    #[test]
    fn parses_enums_and_stage_list() {
        let cfg = PartialConfig::from_toml_str(
            "stages = [\"length\", \"exact\", \"quality\"]\ndedup_scope = \"within_source\"\nverify = \"estimate\"\non_malformed = \"skip\"",
        )
        .unwrap()
        .resolve();
        assert_eq!(cfg.stages, [Stage::Length, Stage::Exact, Stage::Quality]);
        assert_eq!(cfg.dedup_scope, DedupScope::WithinSource);
        assert_eq!(cfg.verify, VerifyMode::Estimate);
        assert_eq!(cfg.on_malformed, MalformedPolicy::Skip);
    }
}
