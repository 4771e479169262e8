//! Command-line interface.
//!
//! Progress goes to stderr, data to files; stdout carries a single
//! machine-readable JSON summary when `--json` is passed. Exit codes: 0
//! success, 1 partial failure (some simulations or probes failed), 2
//! config/usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use serde_json::json;

use crate::campaign::{run_campaign, CampaignRun};
use crate::config::CampaignConfig;
use crate::corpus::{validate_topics, Corpus, CorpusError};
use crate::metrics::{render_reports, AnalysisOptions, ChangeCriterion};
use crate::oneshot::{run_oneshot_probe, ProbeOptions};
use crate::prompt::PromptTemplates;
use crate::store::{completed_probes, completed_simulations, read_store, StoreRecord, StoreWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "echoaudit",
    version,
    about = "Audit conversational bias in multi-agent LLM chatrooms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run echo-chamber chatroom simulations from a campaign config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Corpus file; overrides the config's corpus and the bundled default.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Store file; overrides the config.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Campaign seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent simulations; overrides the config.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Print a machine-readable summary to stdout.
        #[arg(long)]
        json: bool,
    },
    /// Run the one-shot Likert probe baseline.
    Oneshot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Probe repetitions per cell; overrides the config.
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Compute the four CSV reports from a result store.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        /// Output directory for the CSV files (default: the store's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Change criterion for the histogram and length-sweep reports.
        #[arg(long, value_parser = parse_criterion, default_value = "any-level")]
        criterion: ChangeCriterion,
        /// Keep transcripts with failed classifications.
        #[arg(long)]
        include_degraded: bool,
        /// Count events detected on internal probe messages.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        include_internal: bool,
        #[arg(long)]
        json: bool,
    },
    /// Check a corpus file against every corpus invariant.
    ValidateCorpus {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_criterion(text: &str) -> Result<ChangeCriterion, String> {
    text.parse()
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version are successful exits; real usage errors are not.
            let code = if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return code;
        }
    };
    match cli.command {
        Command::Simulate {
            config,
            corpus,
            store,
            seed,
            parallelism,
            json,
        } => cmd_simulate(&config, corpus, store, seed, parallelism, json),
        Command::Oneshot {
            config,
            corpus,
            store,
            repetitions,
            json,
        } => cmd_oneshot(&config, corpus, store, repetitions, json),
        Command::Analyze {
            store,
            out_dir,
            criterion,
            include_degraded,
            include_internal,
            json,
        } => cmd_analyze(
            &store,
            out_dir,
            criterion,
            include_degraded,
            include_internal,
            json,
        ),
        Command::ValidateCorpus { path, json } => cmd_validate_corpus(&path, json),
    }
}

fn fail_usage(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

/// Backend errors can echo response bodies; never let a credential
/// through to any output channel.
fn scrub(text: &str, secrets: &[String]) -> String {
    let mut out = text.to_string();
    for secret in secrets {
        out = out.replace(secret, "[redacted]");
    }
    out
}

fn load_corpus(
    cli_override: Option<&Path>,
    config: Option<&CampaignConfig>,
) -> Result<Corpus, CorpusError> {
    let path = cli_override
        .map(Path::to_path_buf)
        .or_else(|| config.and_then(|c| c.corpus.clone()));
    match path {
        Some(path) => Corpus::load(path),
        None => Ok(Corpus::bundled()),
    }
}

struct LoadedCampaign {
    config: CampaignConfig,
    corpus: Corpus,
}

fn load_campaign(
    config_path: &Path,
    corpus_override: Option<PathBuf>,
    store_override: Option<PathBuf>,
    seed_override: Option<u64>,
    parallelism_override: Option<usize>,
) -> Result<LoadedCampaign, String> {
    let mut config = CampaignConfig::load(config_path).map_err(|e| e.to_string())?;
    if let Some(store) = store_override {
        config.store = store;
    }
    if let Some(seed) = seed_override {
        config.campaign_seed = seed;
    }
    if let Some(parallelism) = parallelism_override {
        config.parallelism = parallelism;
    }
    let corpus =
        load_corpus(corpus_override.as_deref(), Some(&config)).map_err(|e| e.to_string())?;
    config.validate(&corpus).map_err(|e| e.to_string())?;
    Ok(LoadedCampaign { config, corpus })
}

fn cmd_simulate(
    config_path: &Path,
    corpus_override: Option<PathBuf>,
    store_override: Option<PathBuf>,
    seed_override: Option<u64>,
    parallelism_override: Option<usize>,
    json: bool,
) -> i32 {
    let LoadedCampaign { config, corpus } = match load_campaign(
        config_path,
        corpus_override,
        store_override,
        seed_override,
        parallelism_override,
    ) {
        Ok(loaded) => loaded,
        Err(message) => return fail_usage(message),
    };

    let jobs = config.jobs();
    let done = match completed_simulations(&config.store) {
        Ok(done) => done,
        Err(err) => return fail_usage(err),
    };
    let mut store = match StoreWriter::with_secrets(&config.store, config.backend_secrets()) {
        Ok(store) => store,
        Err(err) => return fail_usage(err),
    };
    let provider = config.provider();
    let templates = PromptTemplates::default();
    let run = CampaignRun {
        corpus: &corpus,
        provider: &provider,
        templates: &templates,
        parallelism: config.parallelism,
        raw_log_dir: config.raw_log_dir.clone(),
    };

    // Per-cell progress on stderr: one line when a cell's pending work
    // finishes, one line per failure as it happens.
    let mut pending_per_cell: BTreeMap<String, usize> = BTreeMap::new();
    for job in &jobs {
        if !done.contains(&(job.cell.clone(), job.replicate)) {
            *pending_per_cell.entry(job.cell.clone()).or_insert(0) += 1;
        }
    }
    let secrets = config.backend_secrets();
    let mut finished_per_cell: BTreeMap<String, usize> = BTreeMap::new();
    let outcome = run_campaign(&jobs, &run, &mut store, &done, |sim, error| {
        if let Some(message) = error {
            eprintln!(
                "fail {} r{}: {}",
                sim.cell,
                sim.replicate,
                scrub(message, &secrets)
            );
        }
        let finished = finished_per_cell.entry(sim.cell.clone()).or_insert(0);
        *finished += 1;
        let pending = pending_per_cell.get(&sim.cell).copied().unwrap_or(0);
        if *finished == pending {
            eprintln!("cell {}: {finished} simulations done", sim.cell);
        }
    });
    let mut outcome = match outcome {
        Ok(outcome) => outcome,
        Err(err) => return fail_usage(err),
    };
    for failure in &mut outcome.failures {
        failure.error = scrub(&failure.error, &secrets);
    }

    eprintln!(
        "campaign complete: {} executed, {} skipped, {} failed -> {}",
        outcome.executed,
        outcome.skipped,
        outcome.failures.len(),
        config.store.display()
    );
    if json {
        let summary = json!({
            "command": "simulate",
            "campaign_seed": config.campaign_seed,
            "store": config.store,
            "executed": outcome.executed,
            "skipped": outcome.skipped,
            "failures": outcome.failures,
        });
        println!("{summary}");
    }
    if outcome.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn cmd_oneshot(
    config_path: &Path,
    corpus_override: Option<PathBuf>,
    store_override: Option<PathBuf>,
    repetitions_override: Option<u32>,
    json: bool,
) -> i32 {
    let LoadedCampaign { mut config, corpus } =
        match load_campaign(config_path, corpus_override, store_override, None, None) {
            Ok(loaded) => loaded,
            Err(message) => return fail_usage(message),
        };
    if let Some(repetitions) = repetitions_override {
        config.repetitions = repetitions;
    }
    if config.repetitions < 1 {
        return fail_usage("repetitions must be at least 1");
    }

    let done = match completed_probes(&config.store) {
        Ok(done) => done,
        Err(err) => return fail_usage(err),
    };
    let mut store = match StoreWriter::with_secrets(&config.store, config.backend_secrets()) {
        Ok(store) => store,
        Err(err) => return fail_usage(err),
    };

    let secrets = config.backend_secrets();
    let first_topic = config.topics.first().cloned().unwrap_or_default();
    let backend =
        match config
            .social_backend
            .probe_backend(config.campaign_seed, &corpus, &first_topic)
        {
            Ok(backend) => backend,
            Err(err) => return fail_usage(err),
        };
    let templates = PromptTemplates::default();
    let options = ProbeOptions {
        model_id: config.social_backend.model_id().to_string(),
        repetitions: config.repetitions,
        sampling: crate::backend::Sampling {
            temperature: config.social_temperature,
            max_tokens: config.max_tokens,
        },
    };

    let mut executed = 0usize;
    let mut skipped = 0usize;
    let mut failures: Vec<serde_json::Value> = Vec::new();
    for topic_id in &config.topics {
        let topic = corpus.topic(topic_id).expect("validated topic");
        for pole in &config.poles {
            let key = (
                options.model_id.clone(),
                topic_id.clone(),
                pole.slug().to_string(),
            );
            if done.contains(&key) {
                skipped += 1;
                continue;
            }
            match run_oneshot_probe(topic, *pole, backend.as_ref(), &templates, &options) {
                Ok(result) => {
                    eprintln!(
                        "probe {topic_id}/{pole}: deviation {:.2} over {} repetitions",
                        result.deviation_score, result.repetitions
                    );
                    if let Err(err) = store.append(&StoreRecord::Oneshot(result)) {
                        return fail_usage(err);
                    }
                    executed += 1;
                }
                Err(err) => {
                    let message = scrub(&err.to_string(), &secrets);
                    eprintln!("fail {topic_id}/{pole}: {message}");
                    failures.push(json!({
                        "topic": topic_id,
                        "pole": pole.slug(),
                        "error": message,
                    }));
                }
            }
        }
    }

    eprintln!(
        "one-shot complete: {executed} executed, {skipped} skipped, {} failed -> {}",
        failures.len(),
        config.store.display()
    );
    if json {
        let summary = json!({
            "command": "oneshot",
            "campaign_seed": config.campaign_seed,
            "store": config.store,
            "repetitions": config.repetitions,
            "executed": executed,
            "skipped": skipped,
            "failures": failures,
        });
        println!("{summary}");
    }
    if failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn cmd_analyze(
    store_path: &Path,
    out_dir: Option<PathBuf>,
    criterion: ChangeCriterion,
    include_degraded: bool,
    include_internal: bool,
    json: bool,
) -> i32 {
    let records = match read_store(store_path) {
        Ok(records) => records,
        Err(err) => return fail_usage(err),
    };
    let mut transcripts = Vec::new();
    let mut oneshots = Vec::new();
    for record in &records {
        match record {
            StoreRecord::Transcript(t) => transcripts.push(t),
            StoreRecord::Oneshot(o) => oneshots.push(o),
        }
    }
    let options = AnalysisOptions {
        criterion,
        include_degraded,
        include_internal,
    };
    let reports = render_reports(&transcripts, &oneshots, &options);

    let out_dir = out_dir.unwrap_or_else(|| {
        store_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    if let Err(err) = std::fs::create_dir_all(&out_dir) {
        return fail_usage(format!("cannot create {}: {err}", out_dir.display()));
    }
    let files = [
        ("fig1.csv", &reports.fig1_csv),
        ("fig2.csv", &reports.fig2_csv),
        ("fig3.csv", &reports.fig3_csv),
        ("fig4.csv", &reports.fig4_csv),
    ];
    for (name, content) in files {
        if let Err(err) = std::fs::write(out_dir.join(name), content) {
            return fail_usage(format!("cannot write {name}: {err}"));
        }
    }

    eprintln!(
        "analyzed {} transcripts and {} one-shot results -> {}",
        transcripts.len(),
        oneshots.len(),
        out_dir.display()
    );
    if json {
        let summary = json!({
            "command": "analyze",
            "store": store_path,
            "out_dir": out_dir,
            "criterion": criterion.as_str(),
            "include_degraded": include_degraded,
            "include_internal": include_internal,
            "transcripts": transcripts.len(),
            "oneshot_results": oneshots.len(),
        });
        println!("{summary}");
    }
    EXIT_OK
}

fn cmd_validate_corpus(path: &Path, json: bool) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) => return fail_usage(format!("cannot read {}: {err}", path.display())),
    };
    let topics = match Corpus::parse_topics(&text) {
        Ok(topics) => topics,
        Err(err) => return fail_usage(err),
    };
    let violations = validate_topics(&topics);
    if json {
        let summary = json!({
            "command": "validate-corpus",
            "path": path,
            "valid": violations.is_empty(),
            "violations": violations
                .iter()
                .map(|v| json!({"topic": v.topic_id, "message": v.message}))
                .collect::<Vec<_>>(),
        });
        println!("{summary}");
    }
    if violations.is_empty() {
        eprintln!("corpus ok: {} topics", topics.len());
        EXIT_OK
    } else {
        for violation in &violations {
            eprintln!("violation: {violation}");
        }
        EXIT_USAGE
    }
}
