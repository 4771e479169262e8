//! C ABI for the echoaudit harness.
//!
//! Conventions: functions return an [`EaStatus`] code and write results
//! through out-pointers. `EaCorpus` is an opaque handle freed with
//! [`ea_corpus_free`]; returned strings are NUL-terminated, owned by the
//! caller, and freed with [`ea_string_free`]. On any non-OK status,
//! [`ea_last_error_message`] returns a thread-local description valid
//! until the next call on the same thread.
//!
//! The generated header lives at `include/echoaudit.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use echoaudit::backend::StanceMockBackend;
use echoaudit::chatroom::{run_simulation, SimulationConfig};
use echoaudit::corpus::Corpus;
use echoaudit::level::{OpinionLevel, Pole};
use echoaudit::metrics::{render_reports, AnalysisOptions, ChangeCriterion};
use echoaudit::prompt::render_system_prompt;
use echoaudit::store::{read_store, StoreRecord};

/// Result codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input failed to parse (corpus, spec JSON, store line).
    ParseError = 3,
    /// Input parsed but violated an invariant.
    ValidationError = 4,
    IoError = 5,
    UnknownTopic = 6,
    SimulationError = 7,
    /// Index or enum value out of range.
    OutOfRange = 8,
}

/// The five-step opinion scale; values mirror the scale's signed codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaOpinionLevel {
    StronglyLiberal = -2,
    SlightlyLiberal = -1,
    Neutral = 0,
    SlightlyConservative = 1,
    StronglyConservative = 2,
}

impl EaOpinionLevel {
    fn to_level(self) -> OpinionLevel {
        match self {
            EaOpinionLevel::StronglyLiberal => OpinionLevel::StronglyLiberal,
            EaOpinionLevel::SlightlyLiberal => OpinionLevel::SlightlyLiberal,
            EaOpinionLevel::Neutral => OpinionLevel::Neutral,
            EaOpinionLevel::SlightlyConservative => OpinionLevel::SlightlyConservative,
            EaOpinionLevel::StronglyConservative => OpinionLevel::StronglyConservative,
        }
    }
}

/// Change criterion selector for analysis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaCriterion {
    AnyLevelChange = 0,
    PoleFlip = 1,
}

/// Opaque corpus handle.
pub struct EaCorpus {
    inner: Corpus,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

/// Message for the most recent failure on this thread; empty when the
/// last call succeeded. The pointer stays valid until the next
/// echoaudit call on the same thread.
#[no_mangle]
pub extern "C" fn ea_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `text` must be a pointer previously returned by an echoaudit function
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ea_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

unsafe fn read_str<'a>(pointer: *const c_char) -> Result<&'a str, EaStatus> {
    if pointer.is_null() {
        set_error("null string argument");
        return Err(EaStatus::NullArgument);
    }
    CStr::from_ptr(pointer).to_str().map_err(|err| {
        set_error(format!("invalid utf-8 in argument: {err}"));
        EaStatus::InvalidUtf8
    })
}

fn give_string(out: *mut *mut c_char, text: String) -> EaStatus {
    let c_text = match CString::new(text) {
        Ok(c_text) => c_text,
        Err(err) => {
            set_error(format!("string contains interior NUL: {err}"));
            return EaStatus::ValidationError;
        }
    };
    unsafe { *out = c_text.into_raw() };
    clear_error();
    EaStatus::Ok
}

fn give_corpus(out: *mut *mut EaCorpus, corpus: Corpus) -> EaStatus {
    let handle = Box::new(EaCorpus { inner: corpus });
    unsafe { *out = Box::into_raw(handle) };
    clear_error();
    EaStatus::Ok
}

/// Loads the corpus bundled with the library.
///
/// # Safety
/// `out` must be a valid pointer to an `EaCorpus*` slot.
#[no_mangle]
pub unsafe extern "C" fn ea_corpus_load_default(out: *mut *mut EaCorpus) -> EaStatus {
    if out.is_null() {
        set_error("null out pointer");
        return EaStatus::NullArgument;
    }
    give_corpus(out, Corpus::bundled())
}

/// Loads and validates a corpus file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid `EaCorpus*` slot.
#[no_mangle]
pub unsafe extern "C" fn ea_corpus_load_file(
    path: *const c_char,
    out: *mut *mut EaCorpus,
) -> EaStatus {
    if out.is_null() {
        set_error("null out pointer");
        return EaStatus::NullArgument;
    }
    let path = match read_str(path) {
        Ok(path) => path,
        Err(status) => return status,
    };
    match Corpus::load(path) {
        Ok(corpus) => give_corpus(out, corpus),
        Err(err) => {
            set_error(&err);
            match err {
                echoaudit::corpus::CorpusError::Io { .. } => EaStatus::IoError,
                echoaudit::corpus::CorpusError::Parse(_) => EaStatus::ParseError,
                echoaudit::corpus::CorpusError::Validation(_) => EaStatus::ValidationError,
            }
        }
    }
}

/// Frees a corpus handle. NULL is a no-op.
///
/// # Safety
/// `corpus` must come from a corpus-loading function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ea_corpus_free(corpus: *mut EaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of topics in the corpus; 0 for NULL.
///
/// # Safety
/// `corpus` must be a live corpus handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ea_corpus_topic_count(corpus: *const EaCorpus) -> usize {
    match corpus.as_ref() {
        Some(corpus) => corpus.inner.topics().len(),
        None => 0,
    }
}

/// Writes the id of the topic at `index` to `out`.
///
/// # Safety
/// `corpus` must be a live corpus handle; `out` a valid `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn ea_corpus_topic_id(
    corpus: *const EaCorpus,
    index: usize,
    out: *mut *mut c_char,
) -> EaStatus {
    let Some(corpus) = corpus.as_ref() else {
        set_error("null corpus handle");
        return EaStatus::NullArgument;
    };
    if out.is_null() {
        set_error("null out pointer");
        return EaStatus::NullArgument;
    }
    match corpus.inner.topics().get(index) {
        Some(topic) => give_string(out, topic.id.clone()),
        None => {
            set_error(format!(
                "topic index {index} out of range ({} topics)",
                corpus.inner.topics().len()
            ));
            EaStatus::OutOfRange
        }
    }
}

/// Renders the persona system prompt for (topic, level, agent name).
///
/// # Safety
/// `corpus` must be a live corpus handle; `topic_id` and `agent_name`
/// NUL-terminated strings; `out` a valid `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn ea_render_system_prompt(
    corpus: *const EaCorpus,
    topic_id: *const c_char,
    level: EaOpinionLevel,
    agent_name: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    let Some(corpus) = corpus.as_ref() else {
        set_error("null corpus handle");
        return EaStatus::NullArgument;
    };
    if out.is_null() {
        set_error("null out pointer");
        return EaStatus::NullArgument;
    }
    let topic_id = match read_str(topic_id) {
        Ok(text) => text,
        Err(status) => return status,
    };
    let agent_name = match read_str(agent_name) {
        Ok(text) => text,
        Err(status) => return status,
    };
    let Some(topic) = corpus.inner.topic(topic_id) else {
        set_error(format!("unknown topic `{topic_id}`"));
        return EaStatus::UnknownTopic;
    };
    give_string(
        out,
        render_system_prompt(topic, level.to_level(), agent_name),
    )
}

#[derive(serde::Deserialize)]
struct MockSimSpec {
    topic_id: String,
    pole: String,
    #[serde(default = "default_agents")]
    n_agents: u32,
    n_messages: u32,
    seed: u64,
    #[serde(default = "default_votes")]
    vote_count: u32,
    flip_probability: f64,
    #[serde(default)]
    flip_target: Option<String>,
}

fn default_agents() -> u32 {
    2
}
fn default_votes() -> u32 {
    10
}

/// Runs one simulation against the deterministic stance-mock backends and
/// writes the transcript as a JSON string to `out`.
///
/// `spec_json` example:
/// `{"topic_id":"healthcare","pole":"conservative","n_messages":20,
///   "seed":42,"flip_probability":0.05,"flip_target":"strongly_liberal"}`
///
/// # Safety
/// `corpus` must be a live corpus handle; `spec_json` a NUL-terminated
/// string; `out` a valid `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn ea_run_mock_simulation(
    corpus: *const EaCorpus,
    spec_json: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    let Some(corpus) = corpus.as_ref() else {
        set_error("null corpus handle");
        return EaStatus::NullArgument;
    };
    if out.is_null() {
        set_error("null out pointer");
        return EaStatus::NullArgument;
    }
    let spec_text = match read_str(spec_json) {
        Ok(text) => text,
        Err(status) => return status,
    };
    let spec: MockSimSpec = match serde_json::from_str(spec_text) {
        Ok(spec) => spec,
        Err(err) => {
            set_error(format!("spec json: {err}"));
            return EaStatus::ParseError;
        }
    };
    let Some(pole) = Pole::from_slug(&spec.pole) else {
        set_error(format!("unknown pole `{}`", spec.pole));
        return EaStatus::ParseError;
    };
    let flip_target = match spec.flip_target.as_deref() {
        None => OpinionLevel::StronglyLiberal,
        Some(slug) => match OpinionLevel::from_slug(slug) {
            Some(level) => level,
            None => {
                set_error(format!("unknown flip_target `{slug}`"));
                return EaStatus::ParseError;
            }
        },
    };
    if !(0.0..=1.0).contains(&spec.flip_probability) {
        set_error(format!(
            "flip_probability {} outside [0, 1]",
            spec.flip_probability
        ));
        return EaStatus::ValidationError;
    }
    let Some(topic) = corpus.inner.topic(&spec.topic_id) else {
        set_error(format!("unknown topic `{}`", spec.topic_id));
        return EaStatus::UnknownTopic;
    };

    let mut config = SimulationConfig::new(
        spec.topic_id.clone(),
        pole,
        spec.n_agents,
        spec.n_messages,
        spec.seed,
    );
    config.vote_count = spec.vote_count;
    let social = StanceMockBackend::new(
        topic,
        spec.flip_probability,
        flip_target,
        echoaudit::campaign::derive_seed(spec.seed, "backend:social", 0),
    )
    .with_public_budget(u64::from(spec.n_messages));
    let classifier = StanceMockBackend::new(
        topic,
        0.0,
        flip_target,
        echoaudit::campaign::derive_seed(spec.seed, "backend:classifier", 0),
    );
    match run_simulation(&config, &corpus.inner, &social, &classifier) {
        Ok(transcript) => {
            let json = serde_json::to_string(&transcript).expect("transcripts serialize");
            give_string(out, json)
        }
        Err(err) => {
            set_error(&err);
            match err {
                echoaudit::chatroom::SimulationError::InvalidConfig(_) => EaStatus::ValidationError,
                echoaudit::chatroom::SimulationError::UnknownTopic(_) => EaStatus::UnknownTopic,
                echoaudit::chatroom::SimulationError::Aborted { .. } => EaStatus::SimulationError,
            }
        }
    }
}

/// Reads a result store and writes the four CSV reports (fig1..fig4.csv)
/// into `out_dir`.
///
/// # Safety
/// `store_path` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ea_analyze_store(
    store_path: *const c_char,
    out_dir: *const c_char,
    criterion: EaCriterion,
    include_degraded: bool,
    include_internal: bool,
) -> EaStatus {
    let store_path = match read_str(store_path) {
        Ok(text) => text,
        Err(status) => return status,
    };
    let out_dir = match read_str(out_dir) {
        Ok(text) => PathBuf::from(text),
        Err(status) => return status,
    };
    let records = match read_store(store_path) {
        Ok(records) => records,
        Err(err) => {
            set_error(&err);
            return match err {
                echoaudit::store::StoreError::Io { .. } => EaStatus::IoError,
                _ => EaStatus::ParseError,
            };
        }
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
        criterion: match criterion {
            EaCriterion::AnyLevelChange => ChangeCriterion::AnyLevelChange,
            EaCriterion::PoleFlip => ChangeCriterion::PoleFlip,
        },
        include_degraded,
        include_internal,
    };
    let reports = render_reports(&transcripts, &oneshots, &options);
    if let Err(err) = std::fs::create_dir_all(&out_dir) {
        set_error(format!("cannot create {}: {err}", out_dir.display()));
        return EaStatus::IoError;
    }
    for (name, content) in [
        ("fig1.csv", &reports.fig1_csv),
        ("fig2.csv", &reports.fig2_csv),
        ("fig3.csv", &reports.fig3_csv),
        ("fig4.csv", &reports.fig4_csv),
    ] {
        if let Err(err) = std::fs::write(out_dir.join(name), content) {
            set_error(format!("cannot write {name}: {err}"));
            return EaStatus::IoError;
        }
    }
    clear_error();
    EaStatus::Ok
}
