//! Campaign execution: the cross product of (topic, pole, M) cells times
//! replicates, run concurrently against rate-limited backends.
//!
//! Results stream to the store as they complete, but are committed in job
//! order through a reorder buffer, so a finished store is byte-identical
//! across parallelism settings. Already-stored (cell, replicate) pairs are
//! skipped, which makes interrupted campaigns resumable.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendError, ChatRequest, CompletionResult};
use crate::chatroom::{run_simulation_with_templates, SimulationConfig, Transcript};
use crate::corpus::{Corpus, Topic};
use crate::prompt::PromptTemplates;
use crate::store::{StoreError, StoreRecord, StoreWriter};

/// Stable per-simulation seed derivation, so cells and replicates are
/// independent and campaigns resume reproducibly.
pub fn derive_seed(campaign_seed: u64, cell: &str, replicate: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"echoaudit/seed");
    hasher.update(campaign_seed.to_le_bytes());
    hasher.update(cell.as_bytes());
    hasher.update(replicate.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Instantiates the backends one simulation talks to. Mock providers hand
/// out a fresh deterministic instance per simulation; HTTP providers share
/// one rate-limited client.
pub trait BackendProvider: Send + Sync {
    fn social(
        &self,
        config: &SimulationConfig,
        topic: &Topic,
    ) -> Result<Arc<dyn Backend>, BackendError>;
    fn classifier(
        &self,
        config: &SimulationConfig,
        topic: &Topic,
    ) -> Result<Arc<dyn Backend>, BackendError>;
}

/// Wraps a backend and records every exchange, for sidecar logs and the
/// internal-message isolation checks.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    role: String,
    log: Mutex<Vec<RawExchange>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExchange {
    pub backend_role: String,
    pub request: ChatRequest,
    pub response: Result<String, String>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, role: impl Into<String>) -> Self {
        RecordingBackend {
            inner,
            role: role.into(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn take_log(&self) -> Vec<RawExchange> {
        std::mem::take(&mut self.log.lock().unwrap())
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<CompletionResult, BackendError> {
        let result = self.inner.complete(request);
        self.log.lock().unwrap().push(RawExchange {
            backend_role: self.role.clone(),
            request: request.clone(),
            response: result
                .as_ref()
                .map(|r| r.text.clone())
                .map_err(|e| e.to_string()),
        });
        result
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignFailure {
    pub cell: String,
    pub replicate: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CampaignOutcome {
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<CampaignFailure>,
}

pub struct CampaignRun<'a> {
    pub corpus: &'a Corpus,
    pub provider: &'a dyn BackendProvider,
    pub templates: &'a PromptTemplates,
    pub parallelism: usize,
    /// When set, every simulation writes its raw request/response log to
    /// `<dir>/<cell>-r<replicate>.jsonl`.
    pub raw_log_dir: Option<PathBuf>,
}

type JobResult = Result<(Box<Transcript>, Vec<RawExchange>), String>;

fn run_job(run: &CampaignRun<'_>, config: &SimulationConfig) -> JobResult {
    let topic = run
        .corpus
        .topic(&config.topic_id)
        .ok_or_else(|| format!("unknown topic `{}`", config.topic_id))?;
    let social = run
        .provider
        .social(config, topic)
        .map_err(|e| e.to_string())?;
    let classifier = run
        .provider
        .classifier(config, topic)
        .map_err(|e| e.to_string())?;

    if run.raw_log_dir.is_some() {
        let social = RecordingBackend::new(social, "social");
        let classifier = RecordingBackend::new(classifier, "classifier");
        let transcript =
            run_simulation_with_templates(config, run.corpus, &social, &classifier, run.templates)
                .map_err(|e| e.to_string())?;
        let mut log = social.take_log();
        log.extend(classifier.take_log());
        Ok((Box::new(transcript), log))
    } else {
        let transcript = run_simulation_with_templates(
            config,
            run.corpus,
            social.as_ref(),
            classifier.as_ref(),
            run.templates,
        )
        .map_err(|e| e.to_string())?;
        Ok((Box::new(transcript), Vec::new()))
    }
}

fn write_raw_log(dir: &std::path::Path, config: &SimulationConfig, log: &[RawExchange]) {
    let name = format!(
        "{}-r{}.jsonl",
        config.cell.replace(['|', '/'], "_"),
        config.replicate
    );
    if std::fs::create_dir_all(dir).is_err() {
        return;
    }
    let lines: String = log
        .iter()
        .map(|entry| serde_json::to_string(entry).expect("raw exchange serializes"))
        .collect::<Vec<_>>()
        .join("\n");
    let _ = std::fs::write(dir.join(name), lines + "\n");
}

/// Executes every job not already in `done`, appending transcripts to the
/// store in job order. Per-simulation failures are collected and the
/// campaign continues.
pub fn run_campaign(
    jobs: &[SimulationConfig],
    run: &CampaignRun<'_>,
    store: &mut StoreWriter,
    done: &HashSet<(String, u32)>,
    mut progress: impl FnMut(&SimulationConfig, Option<&str>),
) -> Result<CampaignOutcome, StoreError> {
    let mut outcome = CampaignOutcome::default();
    let pending: Vec<(usize, &SimulationConfig)> = jobs
        .iter()
        .enumerate()
        .filter(|(_, config)| {
            let key = (config.cell.clone(), config.replicate);
            if done.contains(&key) {
                outcome.skipped += 1;
                false
            } else {
                true
            }
        })
        .collect();

    if pending.is_empty() {
        return Ok(outcome);
    }
    let workers = run.parallelism.max(1).min(pending.len());

    let next_job = AtomicUsize::new(0);
    let (sender, receiver) = mpsc::channel::<(usize, JobResult)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let sender = sender.clone();
            let pending = &pending;
            let next_job = &next_job;
            scope.spawn(move || loop {
                let slot = next_job.fetch_add(1, Ordering::SeqCst);
                let Some((order, config)) = pending.get(slot) else {
                    break;
                };
                let result = run_job(run, config);
                if sender.send((*order, result)).is_err() {
                    break;
                }
            });
        }
        drop(sender);

        // Reorder buffer: commit results in job order.
        let mut buffer: BTreeMap<usize, JobResult> = BTreeMap::new();
        let mut commit_from = 0usize;
        let ordered: Vec<usize> = pending.iter().map(|(order, _)| *order).collect();
        let mut write_error: Option<StoreError> = None;

        for (order, result) in receiver {
            buffer.insert(order, result);
            while commit_from < ordered.len() {
                let next_order = ordered[commit_from];
                let Some(result) = buffer.remove(&next_order) else {
                    break;
                };
                let config = jobs[next_order].clone();
                match result {
                    Ok((transcript, raw_log)) => {
                        if write_error.is_none() {
                            if let Err(err) = store.append(&StoreRecord::Transcript(*transcript)) {
                                write_error = Some(err);
                            } else {
                                outcome.executed += 1;
                                progress(&config, None);
                                if let Some(dir) = &run.raw_log_dir {
                                    write_raw_log(dir, &config, &raw_log);
                                }
                            }
                        }
                    }
                    Err(message) => {
                        outcome.failures.push(CampaignFailure {
                            cell: config.cell.clone(),
                            replicate: config.replicate,
                            error: message.clone(),
                        });
                        progress(&config, Some(&message));
                    }
                }
                commit_from += 1;
            }
        }
        match write_error {
            Some(err) => Err(err),
            None => Ok(()),
        }
    })?;

    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::StanceMockBackend;
    use crate::level::{OpinionLevel, Pole};
    use crate::store::{completed_simulations, read_store};

    struct MockProvider {
        flip_probability: f64,
        flip_target: OpinionLevel,
    }

    impl BackendProvider for MockProvider {
        fn social(
            &self,
            config: &SimulationConfig,
            topic: &Topic,
        ) -> Result<Arc<dyn Backend>, BackendError> {
            let seed = derive_seed(config.seed, "backend:social", 0);
            Ok(Arc::new(
                StanceMockBackend::new(topic, self.flip_probability, self.flip_target, seed)
                    .with_public_budget(u64::from(config.n_messages)),
            ))
        }

        fn classifier(
            &self,
            config: &SimulationConfig,
            topic: &Topic,
        ) -> Result<Arc<dyn Backend>, BackendError> {
            let seed = derive_seed(config.seed, "backend:classifier", 0);
            Ok(Arc::new(StanceMockBackend::new(
                topic,
                0.0,
                self.flip_target,
                seed,
            )))
        }
    }

    fn jobs(topics: &[&str], sims: u32, m: u32, campaign_seed: u64) -> Vec<SimulationConfig> {
        let mut jobs = Vec::new();
        for topic in topics {
            for pole in [Pole::Liberal, Pole::Conservative] {
                for replicate in 0..sims {
                    let cell = format!("{topic}|{pole}|m{m}");
                    let mut config = SimulationConfig::new(
                        *topic,
                        pole,
                        2,
                        m,
                        derive_seed(campaign_seed, &cell, replicate),
                    );
                    config.replicate = replicate;
                    jobs.push(config);
                }
            }
        }
        jobs
    }

    fn run_to_file(
        path: &std::path::Path,
        jobs: &[SimulationConfig],
        parallelism: usize,
    ) -> CampaignOutcome {
        let corpus = Corpus::bundled();
        let provider = MockProvider {
            flip_probability: 0.3,
            flip_target: OpinionLevel::StronglyLiberal,
        };
        let templates = PromptTemplates::default();
        let run = CampaignRun {
            corpus: &corpus,
            provider: &provider,
            templates: &templates,
            parallelism,
            raw_log_dir: None,
        };
        let done = completed_simulations(path).unwrap();
        let mut store = StoreWriter::append_to(path).unwrap();
        run_campaign(jobs, &run, &mut store, &done, |_, _| {}).unwrap()
    }

    #[test]
    fn stores_are_byte_identical_across_parallelism() {
        let dir = tempfile::tempdir().unwrap();
        let jobs = jobs(&["healthcare", "abortion"], 4, 5, 99);

        let serial = dir.path().join("serial.jsonl");
        let outcome = run_to_file(&serial, &jobs, 1);
        assert_eq!(outcome.executed, 16);
        assert!(outcome.failures.is_empty());

        let parallel = dir.path().join("parallel.jsonl");
        run_to_file(&parallel, &jobs, 8);

        assert_eq!(
            std::fs::read(&serial).unwrap(),
            std::fs::read(&parallel).unwrap()
        );
    }

    #[test]
    fn finished_campaigns_resume_to_zero_new_work() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let jobs = jobs(&["gun_control"], 3, 4, 1);
        let first = run_to_file(&path, &jobs, 4);
        assert_eq!(first.executed, 6);
        let before = std::fs::read(&path).unwrap();

        let second = run_to_file(&path, &jobs, 4);
        assert_eq!(second.executed, 0);
        assert_eq!(second.skipped, 6);
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn partial_stores_resume_with_only_the_missing_replicates() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.jsonl");
        let partial = dir.path().join("partial.jsonl");
        let all_jobs = jobs(&["immigration"], 4, 3, 7);

        run_to_file(&full, &all_jobs, 2);
        // Seed the partial store with a strict subset (every other job).
        let records = read_store(&full).unwrap();
        {
            let mut writer = StoreWriter::append_to(&partial).unwrap();
            for record in records.iter().step_by(2) {
                writer.append(record).unwrap();
            }
        }
        let outcome = run_to_file(&partial, &all_jobs, 2);
        assert_eq!(outcome.skipped, 4);
        assert_eq!(outcome.executed, 4);
        // Same multiset of simulations, resumed order differs.
        let mut full_keys: Vec<_> = read_store(&full)
            .unwrap()
            .into_iter()
            .map(|r| match r {
                StoreRecord::Transcript(t) => (t.config.cell.clone(), t.config.replicate),
                _ => unreachable!(),
            })
            .collect();
        let mut partial_keys: Vec<_> = read_store(&partial)
            .unwrap()
            .into_iter()
            .map(|r| match r {
                StoreRecord::Transcript(t) => (t.config.cell.clone(), t.config.replicate),
                _ => unreachable!(),
            })
            .collect();
        full_keys.sort();
        partial_keys.sort();
        assert_eq!(full_keys, partial_keys);
    }

    #[test]
    fn failures_are_recorded_and_the_campaign_continues() {
        struct FailingProvider;
        impl BackendProvider for FailingProvider {
            fn social(
                &self,
                config: &SimulationConfig,
                topic: &Topic,
            ) -> Result<Arc<dyn Backend>, BackendError> {
                if config.replicate == 1 {
                    // An empty script exhausts on first use and aborts the sim.
                    Ok(Arc::new(crate::backend::ScriptedBackend::new(vec![])))
                } else {
                    let seed = derive_seed(config.seed, "backend:social", 0);
                    Ok(Arc::new(
                        StanceMockBackend::new(topic, 0.0, OpinionLevel::Neutral, seed)
                            .with_public_budget(u64::from(config.n_messages)),
                    ))
                }
            }
            fn classifier(
                &self,
                config: &SimulationConfig,
                topic: &Topic,
            ) -> Result<Arc<dyn Backend>, BackendError> {
                let seed = derive_seed(config.seed, "backend:classifier", 0);
                Ok(Arc::new(StanceMockBackend::new(
                    topic,
                    0.0,
                    OpinionLevel::Neutral,
                    seed,
                )))
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let corpus = Corpus::bundled();
        let templates = PromptTemplates::default();
        let run = CampaignRun {
            corpus: &corpus,
            provider: &FailingProvider,
            templates: &templates,
            parallelism: 2,
            raw_log_dir: None,
        };
        let jobs = jobs(&["abortion"], 3, 2, 5);
        let mut store = StoreWriter::append_to(&path).unwrap();
        let outcome = run_campaign(&jobs, &run, &mut store, &HashSet::new(), |_, _| {}).unwrap();
        assert_eq!(outcome.executed, 4);
        assert_eq!(outcome.failures.len(), 2);
        for failure in &outcome.failures {
            assert_eq!(failure.replicate, 1);
        }
        // Failed replicates are retried on resume.
        assert_eq!(completed_simulations(&path).unwrap().len(), 4);
    }

    #[test]
    fn raw_logs_capture_every_exchange_and_isolate_internal_messages() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::bundled();
        let provider = MockProvider {
            flip_probability: 0.2,
            flip_target: OpinionLevel::StronglyLiberal,
        };
        let templates = PromptTemplates::default();
        let raw_dir = dir.path().join("raw");
        let run = CampaignRun {
            corpus: &corpus,
            provider: &provider,
            templates: &templates,
            parallelism: 1,
            raw_log_dir: Some(raw_dir.clone()),
        };
        let jobs = jobs(&["climate_change"], 1, 6, 11);
        let path = dir.path().join("store.jsonl");
        let mut store = StoreWriter::append_to(&path).unwrap();
        run_campaign(&jobs, &run, &mut store, &HashSet::new(), |_, _| {}).unwrap();

        let records = read_store(&path).unwrap();
        for record in records {
            let StoreRecord::Transcript(transcript) = record else {
                panic!("expected transcripts only");
            };
            let log_name = format!(
                "{}-r{}.jsonl",
                transcript.config.cell.replace('|', "_"),
                transcript.config.replicate
            );
            let text = std::fs::read_to_string(raw_dir.join(log_name)).unwrap();
            let exchanges: Vec<RawExchange> = text
                .lines()
                .map(|line| serde_json::from_str(line).unwrap())
                .collect();
            // 6 public + 1 internal social calls.
            let social_calls = exchanges
                .iter()
                .filter(|e| e.backend_role == "social")
                .count();
            assert_eq!(social_calls, 7);
            // Internal message text never reaches another generation
            // request: it stays out of every agent's memory. (Its own
            // classification prompts quote it, by design.)
            let internal_texts: Vec<&str> = transcript
                .messages
                .iter()
                .filter(|m| m.kind == crate::chatroom::MessageKind::Internal)
                .map(|m| m.text.as_str())
                .collect();
            for exchange in exchanges.iter().filter(|e| e.backend_role == "social") {
                for message in &exchange.request.messages {
                    for internal in &internal_texts {
                        assert!(
                            !message.content.contains(internal),
                            "internal message leaked into a generation request"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn seed_derivation_is_stable_and_spread() {
        assert_eq!(
            derive_seed(1, "a|liberal|m5", 0),
            derive_seed(1, "a|liberal|m5", 0)
        );
        assert_ne!(
            derive_seed(1, "a|liberal|m5", 0),
            derive_seed(1, "a|liberal|m5", 1)
        );
        assert_ne!(
            derive_seed(1, "a|liberal|m5", 0),
            derive_seed(2, "a|liberal|m5", 0)
        );
        assert_ne!(
            derive_seed(1, "a|liberal|m5", 0),
            derive_seed(1, "b|liberal|m5", 0)
        );
    }
}
