use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curate_core::dedup::cluster_pairs;
use curate_core::pipeline::{
    banding_for, read_corpus, read_signature_records, sketch_corpus, worker_pool, write_atomically, write_cluster_audit,
};
use curate_core::shingle::write_signatures_binary;
use curate_core::{
    estimate_jaccard, run_pipeline, stats, validate_config, CurateError, CurationReport, DedupScope, LshIndex, LshItem,
    MalformedPolicy, PartialConfig, PipelineConfig, Profile, Result, RunOptions, Stage, VerifyMode,
};

const AFTER_HELP: &str = "\
Stages run in the order length, exact, near, paragraph, quality. The length,
exact and paragraph stages are per-document. The near and quality stages are
barrier stages: they need the whole surviving corpus before any decision is
made, so they hold one pass of the corpus in memory.

Settings are resolved as: command-line flag, then config file, then defaults.

Exit status: 0 success, 1 internal error, 2 configuration error (including a
missing quality score or a sketch mismatch), 3 I/O error, 4 malformed or
duplicate input record.";

#[derive(Parser)]
#[command(
    name = "curate",
    version,
    about = "Length filtering, deduplication and quality selection for JSONL text corpora"
)]
#[command(after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured stages over a corpus.
    #[command(after_help = AFTER_HELP)]
    Run {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print document, byte, per-source and word-count statistics.
    Stats {
        input: PathBuf,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        skip_malformed: bool,
    },
    /// Check a config file, and optionally that an input satisfies its stages.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Also check data-dependent rules (quality scores present).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compute MinHash signatures for every document.
    Sketch {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the signatures in the packed binary format.
        #[arg(long)]
        binary: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Band signatures into an LSH index and list candidate pairs.
    Index {
        /// Signature records written by `curate sketch`.
        sketches: PathBuf,
        /// Write candidate pairs as `id<TAB>id` lines.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Write clusters of candidates whose estimated similarity reaches the threshold.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Exact, near-duplicate and paragraph deduplication.
    #[command(after_help = AFTER_HELP)]
    Dedup {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = DedupMode::Both)]
        mode: DedupMode,
        /// Also remove repeated paragraphs.
        #[arg(long)]
        paragraph: bool,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Length and quality filters.
    ///
    /// `--length-threshold` enables the length filter and `--quality-top` the
    /// quality filter; with neither, only the length filter runs.
    #[command(after_help = AFTER_HELP)]
    Filter {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DedupMode {
    Exact,
    Near,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnMalformed {
    Abort,
    Skip,
}

/// One flag per configuration key.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    /// Comma-separated stage list.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
    #[arg(long)]
    length_threshold: Option<usize>,
    #[arg(long)]
    ngram_size: Option<usize>,
    #[arg(long, visible_alias = "num-perm")]
    num_perms: Option<usize>,
    #[arg(long, visible_alias = "threshold")]
    jaccard_threshold: Option<f64>,
    /// `within` or `cross`.
    #[arg(long, visible_alias = "scope")]
    dedup_scope: Option<DedupScope>,
    /// `exact` or `estimate`.
    #[arg(long)]
    verify: Option<VerifyMode>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long, visible_alias = "quality-top")]
    quality_percentile: Option<f64>,
    #[arg(long, visible_alias = "bloom-fp")]
    bloom_target_fp: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    on_malformed: Option<OnMalformed>,
}

impl ConfigArgs {
    fn overrides(&self) -> PartialConfig {
        PartialConfig {
            profile: self.profile,
            stages: self.stages.clone(),
            length_threshold: self.length_threshold,
            ngram_size: self.ngram_size,
            num_perms: self.num_perms,
            jaccard_threshold: self.jaccard_threshold,
            dedup_scope: self.dedup_scope,
            verify: self.verify,
            bands: self.bands,
            rows: self.rows,
            quality_percentile: self.quality_percentile,
            bloom_target_fp: self.bloom_target_fp,
            seed: self.seed,
            on_malformed: self.on_malformed.map(|m| match m {
                OnMalformed::Abort => MalformedPolicy::Abort,
                OnMalformed::Skip => MalformedPolicy::Skip,
            }),
        }
    }

    fn resolve(&self) -> Result<PipelineConfig> {
        let file = match &self.config {
            Some(path) => PartialConfig::from_file(path)?,
            None => PartialConfig::default(),
        };
        Ok(file.merge(self.overrides()).resolve())
    }

    /// Resolves the config with a stage list fixed by the subcommand.
    fn resolve_with_stages(&self, stages: Vec<Stage>) -> Result<PipelineConfig> {
        if self.stages.is_some() {
            return Err(CurateError::config(
                "stages",
                "set by the subcommand; use `curate run` for a custom list",
            ));
        }
        let mut config = self.resolve()?;
        config.stages = stages;
        Ok(config)
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Write the curation report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write dropped records with their drop reason.
    #[arg(long)]
    drops: Option<PathBuf>,
    /// Write one `kind<TAB>survivor<TAB>members...` line per duplicate cluster.
    #[arg(long)]
    clusters: Option<PathBuf>,
}

impl OutputArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            report: self.report.clone(),
            drops: self.drops.clone(),
            clusters: self.clusters.clone(),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("curate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { input, config, out } => {
            let config = config.resolve()?;
            curate(&config, &input, &out)
        }
        Command::Stats { input, skip_malformed } => {
            let policy = if skip_malformed {
                MalformedPolicy::Skip
            } else {
                MalformedPolicy::Abort
            };
            print_json(&stats(&input, policy)?)
        }
        Command::Validate { config, input } => {
            let config = validate_config(&config, input.as_deref())?;
            println!("ok: stages {}", join_stages(&config.stages));
            Ok(())
        }
        Command::Sketch {
            input,
            output,
            binary,
            workers,
            config,
        } => sketch(&config.resolve()?, &input, &output, binary.as_deref(), workers),
        Command::Index {
            sketches,
            pairs,
            clusters,
            workers,
            config,
        } => index(&config, &sketches, pairs.as_deref(), clusters.as_deref(), workers),
        Command::Dedup {
            input,
            mode,
            paragraph,
            config,
            out,
        } => {
            let mut stages = match mode {
                DedupMode::Exact => vec![Stage::Exact],
                DedupMode::Near => vec![Stage::Near],
                DedupMode::Both => vec![Stage::Exact, Stage::Near],
            };
            if paragraph {
                stages.push(Stage::Paragraph);
            }
            let config = config.resolve_with_stages(stages)?;
            curate(&config, &input, &out)
        }
        Command::Filter { input, config, out } => {
            let mut stages = Vec::new();
            if config.length_threshold.is_some() || config.quality_percentile.is_none() {
                stages.push(Stage::Length);
            }
            if config.quality_percentile.is_some() {
                stages.push(Stage::Quality);
            }
            let config = config.resolve_with_stages(stages)?;
            curate(&config, &input, &out)
        }
    }
}

fn curate(config: &PipelineConfig, input: &Path, out: &OutputArgs) -> Result<()> {
    let report = run_pipeline(config, input, &out.output, &out.options())?;
    summarize(&report);
    Ok(())
}

fn summarize(report: &CurationReport) {
    let mut line = format!(
        "kept {} of {} docs ({} of {} bytes)",
        report.docs_out, report.docs_in, report.bytes_out, report.bytes_in
    );
    for (stage, removed) in &report.removed_by_stage {
        line.push_str(&format!("; {stage}: -{}", removed.docs_removed));
    }
    if report.records_skipped > 0 {
        line.push_str(&format!("; {} malformed lines skipped", report.records_skipped));
    }
    eprintln!("{line}");
}

fn join_stages(stages: &[Stage]) -> String {
    stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(lock))
        .map_err(|e| CurateError::io("<stdout>", e))
}

fn sketch(config: &PipelineConfig, input: &Path, output: &Path, binary: Option<&Path>, workers: usize) -> Result<()> {
    config.validate()?;
    let (docs, _) = read_corpus(input, config.on_malformed)?;
    let pool = worker_pool(workers)?;
    let records = pool.install(|| sketch_corpus(&docs, config.ngram_size, config.num_perms, config.seed));
    write_atomically(output, |w| {
        for rec in &records {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    if let Some(path) = binary {
        let sigs = records.iter().map(|r| r.signature()).collect::<Result<Vec<_>>>()?;
        write_atomically(path, |w| {
            write_signatures_binary(w, config.num_perms, config.seed, &sigs)
        })?;
    }
    eprintln!(
        "sketched {} docs (k={}, n={}, seed={})",
        records.len(),
        config.num_perms,
        config.ngram_size,
        config.seed
    );
    Ok(())
}

fn index(
    args: &ConfigArgs,
    sketches: &Path,
    pairs: Option<&Path>,
    clusters: Option<&Path>,
    workers: usize,
) -> Result<()> {
    let records = read_signature_records(sketches)?;
    let sigs = records.iter().map(|r| r.signature()).collect::<Result<Vec<_>>>()?;

    let mut config = args.resolve()?;
    if let Some(first) = sigs.first() {
        if args.num_perms.is_some_and(|k| k != first.k()) {
            return Err(CurateError::SketchMismatch(format!(
                "--num-perm {} but sketches have k={}",
                config.num_perms,
                first.k()
            )));
        }
        if args.seed.is_some_and(|s| s != first.seed()) {
            return Err(CurateError::SketchMismatch(format!(
                "--seed {} but sketches have seed={}",
                config.seed,
                first.seed()
            )));
        }
        config.num_perms = first.k();
    }
    config.validate()?;
    let params = banding_for(&config);

    let items: Vec<LshItem<'_>> = records
        .iter()
        .zip(&sigs)
        .map(|(r, s)| LshItem {
            id: &r.id,
            source: r.source.as_deref().unwrap_or(""),
            signature: s,
        })
        .collect();
    let pool = worker_pool(workers)?;
    let index = pool.install(|| LshIndex::build(&items, params, config.dedup_scope))?;
    let candidates = index.candidate_positions();

    if let Some(path) = pairs {
        write_atomically(path, |w| {
            for &(a, b) in &candidates {
                writeln!(w, "{}\t{}", items[a].id, items[b].id)?;
            }
            Ok(())
        })?;
    }
    let mut confirmed = Vec::new();
    for &(a, b) in &candidates {
        if estimate_jaccard(&sigs[a], &sigs[b])? >= config.jaccard_threshold {
            confirmed.push((items[a].id, items[b].id));
        }
    }
    let found = cluster_pairs(&confirmed);
    if let Some(path) = clusters {
        write_atomically(path, |w| write_cluster_audit(w, &found))?;
    }
    print_json(&serde_json::json!({
        "items": records.len(),
        "indexed": index.len(),
        "bands": params.bands,
        "rows": params.rows,
        "candidate_pairs": candidates.len(),
        "confirmed_pairs": confirmed.len(),
        "clusters": found.len(),
    }))
}
