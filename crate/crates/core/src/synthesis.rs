//! Context generation over a corpus into an append-only triplet file.
//!
//! Output is JSONL keyed by `pair_id`. Lines are appended as pairs finish,
//! in whatever order the workers complete them; readers sort by `pair_id`.
//! Re-running against an existing file skips pairs already present, so an
//! interrupted run resumes where it stopped.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QAPair};
use crate::gateway::{CompletionRequest, FinishReason, Gateway, GatewayError, SamplingParams};
use crate::metrics::{normalized_contains, tokenize};
use crate::prompt::{build_context_prompt, Exemplar, PromptMode, StylePreset};
use crate::report::{manifest_for, ExperimentManifest, GatewayFingerprint, ReportError, RunParams};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Real,
    SyntheticZero,
    SyntheticFew,
}

impl ContextKind {
    pub fn for_mode(mode: PromptMode) -> Self {
        match mode {
            PromptMode::ZeroShot => ContextKind::SyntheticZero,
            PromptMode::FewShot => ContextKind::SyntheticFew,
        }
    }

    pub fn is_synthetic(self) -> bool {
        self != ContextKind::Real
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::Real => "real",
            ContextKind::SyntheticZero => "synthetic_zero",
            ContextKind::SyntheticFew => "synthetic_few",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationFlags {
    pub empty: bool,
    pub too_short: bool,
    pub too_long: bool,
    pub contains_answer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthLimits {
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for LengthLimits {
    fn default() -> Self {
        LengthLimits {
            min_words: 20,
            max_words: 400,
        }
    }
}

/// How answer containment is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentMode {
    /// Normalized answer tokens appear contiguously in the normalized context.
    #[default]
    Normalized,
    /// Case-sensitive raw substring.
    RawSubstring,
}

pub fn contains_answer<S: AsRef<str>>(context: &str, answers: &[S], mode: ContainmentMode) -> bool {
    answers.iter().any(|a| match mode {
        ContainmentMode::Normalized => normalized_contains(context, a.as_ref()),
        ContainmentMode::RawSubstring => !a.as_ref().is_empty() && context.contains(a.as_ref()),
    })
}

/// Number of non-punctuation tokens.
pub fn word_count(text: &str) -> usize {
    tokenize(text).words().count()
}

pub fn validate_context<S: AsRef<str>>(
    context: &str,
    answers: &[S],
    limits: LengthLimits,
) -> ValidationFlags {
    validate_context_with(context, answers, limits, ContainmentMode::Normalized)
}

pub fn validate_context_with<S: AsRef<str>>(
    context: &str,
    answers: &[S],
    limits: LengthLimits,
    mode: ContainmentMode,
) -> ValidationFlags {
    let words = word_count(context);
    ValidationFlags {
        empty: context.trim().is_empty(),
        too_short: words < limits.min_words,
        too_long: words > limits.max_words,
        contains_answer: contains_answer(context, answers, mode),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub model_name: String,
    pub request_key: String,
    pub timestamp: String,
    pub prompt_snapshot_hash: String,
    pub finish_reason: FinishReason,
    /// Generation stopped at the token limit; the context may be cut off.
    #[serde(default)]
    pub length_limited: bool,
    pub flags: ValidationFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub pair_id: String,
    pub question: String,
    pub answer: String,
    pub context: String,
    pub context_kind: ContextKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_meta: Option<GenMeta>,
}

impl Triplet {
    pub fn check(&self) -> Result<(), String> {
        if self.context.trim().is_empty() {
            return Err(format!("{}: empty context", self.pair_id));
        }
        match (self.context_kind.is_synthetic(), self.gen_meta.is_some()) {
            (true, false) => Err(format!(
                "{}: synthetic triplet without gen_meta",
                self.pair_id
            )),
            (false, true) => Err(format!("{}: real triplet with gen_meta", self.pair_id)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("pairs without a real context: {0:?}")]
    MissingRealContext(Vec<String>),
    #[error("aborted: {failed} of {attempted} attempted pairs failed (threshold {threshold}); {summary}")]
    FailureRateExceeded {
        failed: usize,
        attempted: usize,
        threshold: f64,
        summary: String,
        run: Box<SynthesisRun>,
    },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Manifest(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthesisError + '_ {
    move |source| SynthesisError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPair {
    pub pair_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub manifest: ExperimentManifest,
    pub output_path: PathBuf,
    /// Pairs attempted in this invocation.
    pub attempted: usize,
    pub completed: usize,
    pub failed: Vec<FailedPair>,
    /// Pairs already present in the output before this invocation.
    pub resumed: usize,
    /// Pairs never attempted because the run was cancelled or aborted.
    pub not_attempted: usize,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub mode: PromptMode,
    pub model_name: String,
    pub params: SamplingParams,
    pub parallelism: usize,
    /// Abort once more than this fraction of attempted pairs has failed.
    pub failure_threshold: f64,
    /// Attempts required before the failure threshold is enforced mid-run.
    pub min_attempts_for_abort: usize,
    pub limits: LengthLimits,
    pub output_path: PathBuf,
    /// Set to stop handing out new pairs; in-flight pairs still finish.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl SynthesisOptions {
    pub fn new(output_path: impl Into<PathBuf>, mode: PromptMode) -> Self {
        SynthesisOptions {
            mode,
            model_name: "gpt-3.5-turbo".into(),
            params: SamplingParams::default(),
            parallelism: 4,
            failure_threshold: 0.10,
            min_attempts_for_abort: 10,
            limits: LengthLimits::default(),
            output_path: output_path.into(),
            cancel: None,
        }
    }
}

/// Drop a trailing partial line left by a crash, then return the pair ids
/// already present.
fn prepare_output(path: &Path) -> Result<HashSet<String>, SynthesisError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let keep_len = if text.is_empty() || text.ends_with('\n') {
        text.len()
    } else {
        let cut = text.rfind('\n').map_or(0, |i| i + 1);
        log::warn!("{}: dropping incomplete final line", path.display());
        cut
    };
    if keep_len != text.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        f.set_len(keep_len as u64).map_err(io_err(path))?;
    }
    let mut ids = HashSet::new();
    for (i, line) in text[..keep_len].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(line).map_err(|e| SynthesisError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ids.insert(t.pair_id);
    }
    Ok(ids)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn synthesize_one(
    pair: &QAPair,
    style: &StylePreset,
    exemplars: &[Exemplar],
    gateway: &Gateway,
    opts: &SynthesisOptions,
) -> Result<Triplet, FailedPair> {
    let fail = |kind: &str, message: String| FailedPair {
        pair_id: pair.id.clone(),
        kind: kind.to_string(),
        message,
    };
    let prompt = build_context_prompt(pair, style, exemplars, opts.mode)
        .map_err(|e| fail("prompt", e.to_string()))?;
    let snapshot_hash = prompt.snapshot_hash();
    let request = CompletionRequest::new(&opts.model_name, prompt, opts.params.clone())
        .map_err(|e| fail(e.kind(), e.to_string()))?;
    let response = gateway
        .complete(&request)
        .map_err(|e: GatewayError| fail(e.kind(), e.to_string()))?;
    let context = response.text.trim().to_string();
    if context.is_empty() {
        return Err(fail(
            "empty_context",
            format!("finish_reason {:?}", response.finish_reason),
        ));
    }
    if response.finish_reason == FinishReason::Error {
        return Err(fail("provider_error", "finish_reason error".into()));
    }
    let flags = validate_context(&context, &pair.answers, opts.limits);
    Ok(Triplet {
        pair_id: pair.id.clone(),
        question: pair.question.clone(),
        answer: pair.primary_answer().to_string(),
        context,
        context_kind: ContextKind::for_mode(opts.mode),
        gen_meta: Some(GenMeta {
            model_name: opts.model_name.clone(),
            request_key: request.request_key,
            timestamp: now_rfc3339(),
            prompt_snapshot_hash: snapshot_hash,
            finish_reason: response.finish_reason,
            length_limited: response.finish_reason == FinishReason::Length,
            flags,
        }),
    })
}

/// Generate one synthetic context per pair not yet present in the output.
pub fn synthesize(
    corpus: &Corpus,
    style: &StylePreset,
    exemplars: &[Exemplar],
    gateway: &Gateway,
    opts: &SynthesisOptions,
) -> Result<SynthesisRun, SynthesisError> {
    if corpus.is_empty() {
        return Err(SynthesisError::EmptyCorpus);
    }
    if opts.parallelism == 0 {
        return Err(SynthesisError::Argument(
            "parallelism must be positive".into(),
        ));
    }
    if opts.mode == PromptMode::FewShot && exemplars.is_empty() {
        return Err(SynthesisError::Argument(
            "few-shot synthesis needs exemplars".into(),
        ));
    }
    let path = opts.output_path.as_path();
    let done = prepare_output(path)?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;

    let todo: Vec<&QAPair> = corpus
        .pairs()
        .iter()
        .filter(|p| !done.contains(&p.id))
        .collect();
    let resumed = corpus.len() - todo.len();
    if resumed > 0 {
        log::info!("resuming: {resumed} pairs already in {}", path.display());
    }

    let next = AtomicUsize::new(0);
    let attempted = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let aborted = AtomicBool::new(false);
    let failed = Mutex::new(Vec::<FailedPair>::new());
    let writer = Mutex::new((file, None::<std::io::Error>));

    let cancelled = || {
        opts.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::SeqCst))
    };

    std::thread::scope(|s| {
        for _ in 0..opts.parallelism.min(todo.len().max(1)) {
            s.spawn(|| loop {
                if aborted.load(Ordering::SeqCst) || cancelled() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(pair) = todo.get(i) else { break };
                attempted.fetch_add(1, Ordering::SeqCst);
                match synthesize_one(pair, style, exemplars, gateway, opts) {
                    Ok(t) => {
                        let mut line = serde_json::to_string(&t).expect("triplet serializes");
                        line.push('\n');
                        let mut w = writer.lock().expect("writer poisoned");
                        let res = w.0.write_all(line.as_bytes()).and_then(|_| w.0.flush());
                        match res {
                            Ok(()) => {
                                completed.fetch_add(1, Ordering::SeqCst);
                            }
                            Err(e) => {
                                w.1.get_or_insert(e);
                                aborted.store(true, Ordering::SeqCst);
                                attempted.fetch_sub(1, Ordering::SeqCst);
                            }
                        }
                    }
                    Err(f) => {
                        log::warn!("pair {} failed ({}): {}", f.pair_id, f.kind, f.message);
                        let mut fl = failed.lock().expect("failures poisoned");
                        fl.push(f);
                        let a = attempted.load(Ordering::SeqCst);
                        if a >= opts.min_attempts_for_abort
                            && fl.len() as f64 > opts.failure_threshold * a as f64
                        {
                            aborted.store(true, Ordering::SeqCst);
                        }
                    }
                }
            });
        }
    });

    let (_, write_error) = writer.into_inner().expect("writer poisoned");
    if let Some(e) = write_error {
        return Err(io_err(path)(e));
    }
    let mut failed = failed.into_inner().expect("failures poisoned");
    failed.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let attempted = attempted.into_inner();
    let mut params = RunParams::new("synthesize")
        .output("triplets", path)
        .param("corpus_hash", corpus.content_hash())
        .param("parallelism", opts.parallelism)
        .param("failure_threshold", opts.failure_threshold)
        .param("limits", opts.limits)
        .param("exemplars", exemplars.len());
    let source = &corpus.provenance().path;
    if source.is_file() {
        params = params.input("corpus", source);
    }
    params.preset = Some(style.into());
    params.mode = Some(ContextKind::for_mode(opts.mode).as_str().to_string());
    params.subset_size = Some(corpus.len());
    params.gateway = Some(GatewayFingerprint::from_gateway(
        gateway,
        &opts.model_name,
        &opts.params,
    ));
    let run = SynthesisRun {
        manifest: manifest_for(&params)?,
        output_path: opts.output_path.clone(),
        attempted,
        completed: completed.into_inner(),
        not_attempted: todo.len() - attempted,
        failed,
        resumed,
    };
    let rate_exceeded =
        attempted > 0 && run.failed.len() as f64 > opts.failure_threshold * attempted as f64;
    if rate_exceeded
        && (aborted.into_inner()
            || attempted >= opts.min_attempts_for_abort
            || run.not_attempted == 0)
    {
        let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &run.failed {
            *kinds.entry(f.kind.as_str()).or_insert(0) += 1;
        }
        let summary = kinds
            .iter()
            .map(|(k, n)| format!("{k}={n}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(SynthesisError::FailureRateExceeded {
            failed: run.failed.len(),
            attempted,
            threshold: opts.failure_threshold,
            summary,
            run: Box::new(run),
        });
    }
    Ok(run)
}

/// Triplets using each pair's own context.
pub fn attach_real_contexts(corpus: &Corpus) -> Result<Vec<Triplet>, SynthesisError> {
    let missing: Vec<String> = corpus
        .pairs()
        .iter()
        .filter(|p| {
            p.real_context
                .as_deref()
                .is_none_or(|c| c.trim().is_empty())
        })
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(SynthesisError::MissingRealContext(missing));
    }
    Ok(corpus
        .pairs()
        .iter()
        .map(|p| Triplet {
            pair_id: p.id.clone(),
            question: p.question.clone(),
            answer: p.primary_answer().to_string(),
            context: p.real_context.clone().expect("checked above"),
            context_kind: ContextKind::Real,
            gen_meta: None,
        })
        .collect())
}

/// Read a triplet file in canonical (pair_id) order. A repeated pair_id
/// keeps its first occurrence.
pub fn read_triplets(path: &Path) -> Result<Vec<Triplet>, SynthesisError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut by_id: BTreeMap<String, Triplet> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| SynthesisError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let t: Triplet = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        t.check().map_err(corrupt)?;
        if by_id.contains_key(&t.pair_id) {
            log::warn!(
                "{}: duplicate pair_id {} ignored",
                path.display(),
                t.pair_id
            );
            continue;
        }
        by_id.insert(t.pair_id.clone(), t);
    }
    Ok(by_id.into_values().collect())
}

pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<(), SynthesisError> {
    crate::jsonl::write(path, triplets).map_err(|e| SynthesisError::Argument(e.to_string()))
}

/// Hash of the canonical triplet set: sorted by pair_id, timestamps blanked.
pub fn canonical_hash(triplets: &[Triplet]) -> String {
    let mut sorted: Vec<Triplet> = triplets.to_vec();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let mut buf = String::new();
    for mut t in sorted {
        if let Some(m) = t.gen_meta.as_mut() {
            m.timestamp.clear();
        }
        buf.push_str(&serde_json::to_string(&t).expect("triplet serializes"));
        buf.push('\n');
    }
    sha256_hex(buf)
}

pub fn canonical_file_hash(path: &Path) -> Result<String, SynthesisError> {
    Ok(canonical_hash(&read_triplets(path)?))
}

/// Rebuild the prompt for a synthetic triplet and check that its stored
/// snapshot hash and request key match.
pub fn verify_provenance(
    triplet: &Triplet,
    pair: &QAPair,
    style: &StylePreset,
    exemplars: &[Exemplar],
    params: &SamplingParams,
) -> Result<(), String> {
    let meta = triplet
        .gen_meta
        .as_ref()
        .ok_or_else(|| format!("{}: no gen_meta", triplet.pair_id))?;
    let mode = match triplet.context_kind {
        ContextKind::SyntheticZero => PromptMode::ZeroShot,
        ContextKind::SyntheticFew => PromptMode::FewShot,
        ContextKind::Real => {
            return Err(format!(
                "{}: real context has no provenance",
                triplet.pair_id
            ))
        }
    };
    let prompt = build_context_prompt(pair, style, exemplars, mode).map_err(|e| e.to_string())?;
    if prompt.snapshot_hash() != meta.prompt_snapshot_hash {
        return Err(format!("{}: prompt snapshot hash differs", triplet.pair_id));
    }
    let req = CompletionRequest::new(&meta.model_name, prompt, params.clone())
        .map_err(|e| e.to_string())?;
    if req.request_key != meta.request_key {
        return Err(format!("{}: request key differs", triplet.pair_id));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;
    use crate::gateway::{EndpointError, MockEndpoint};

    fn corpus(n: usize, with_context: bool) -> Corpus {
        let pairs = (0..n)
            .map(|i| QAPair {
                id: format!("id{i:03}"),
                question: format!("What is item {i}?"),
                answers: vec![format!("item {i}")],
                real_context: with_context.then(|| format!("Real context about item {i}.")),
                title: None,
                source: Source::Generic,
            })
            .collect();
        Corpus::new(pairs, "mem").unwrap()
    }

    /// Mock that answers each request with `ctx-<pair id>` (the id is
    /// recovered from the question text).
    fn id_echo() -> MockEndpoint {
        MockEndpoint::new().with_chat(|req| {
            let user = &req.messages.last().unwrap().content;
            let n: String = user
                .split("item ")
                .nth(1)
                .unwrap()
                .chars()
                .take_while(char::is_ascii_digit)
                .collect();
            Ok(crate::gateway::stop_response(format!(
                "ctx-id{:03}",
                n.parse::<usize>().unwrap()
            )))
        })
    }

    #[test]
    fn three_pairs_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthesisOptions::new(dir.path().join("out.jsonl"), PromptMode::ZeroShot);
        let gw = Gateway::mock(id_echo());
        let run = synthesize(
            &corpus(3, false),
            &StylePreset::squad_wiki(),
            &[],
            &gw,
            &opts,
        )
        .unwrap();
        assert_eq!((run.completed, run.failed.len(), run.attempted), (3, 0, 3));
        let ts = read_triplets(&opts.output_path).unwrap();
        assert_eq!(ts.len(), 3);
        for t in &ts {
            assert_eq!(t.context, format!("ctx-{}", t.pair_id));
            assert_eq!(t.context_kind, ContextKind::SyntheticZero);
            t.check().unwrap();
        }
    }

    #[test]
    fn few_shot_tags_and_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = SynthesisOptions::new(dir.path().join("few.jsonl"), PromptMode::FewShot);
        opts.parallelism = 2;
        let c = corpus(4, false);
        let ex = [crate::prompt::Exemplar::solar_energy()];
        let style = StylePreset::squad_wiki();
        synthesize(&c, &style, &ex, &Gateway::mock(MockEndpoint::new()), &opts).unwrap();
        let ts = read_triplets(&opts.output_path).unwrap();
        assert!(ts
            .iter()
            .all(|t| t.context_kind == ContextKind::SyntheticFew));
        for (t, p) in ts.iter().zip(c.pairs()) {
            verify_provenance(t, p, &style, &ex, &opts.params).unwrap();
            assert!(t.gen_meta.as_ref().unwrap().flags.contains_answer);
        }
        let mut other = opts.params.clone();
        other.temperature = 0.2;
        assert!(verify_provenance(&ts[0], &c.pairs()[0], &style, &ex, &other).is_err());
    }

    #[test]
    fn resume_after_cancel_makes_only_missing_calls() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(3, false);
        let cancel = Arc::new(AtomicBool::new(false));
        let mut opts = SynthesisOptions::new(dir.path().join("r.jsonl"), PromptMode::ZeroShot);
        opts.parallelism = 1;
        opts.cancel = Some(cancel.clone());
        let flag = cancel.clone();
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let mock = MockEndpoint::new().with_chat(move |_| {
            if counter.fetch_add(1, Ordering::SeqCst) + 1 == 2 {
                flag.store(true, Ordering::SeqCst);
            }
            Ok(crate::gateway::stop_response("some context".into()))
        });
        let run = synthesize(
            &c,
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(mock),
            &opts,
        )
        .unwrap();
        assert_eq!(run.completed, 2);
        assert_eq!(run.not_attempted, 1);

        opts.cancel = None;
        let gw = Gateway::mock(MockEndpoint::new());
        let run = synthesize(&c, &StylePreset::squad_wiki(), &[], &gw, &opts).unwrap();
        assert_eq!(gw.network_calls(), 1);
        assert_eq!((run.resumed, run.completed), (2, 1));
    }

    #[test]
    fn partial_trailing_line_is_dropped_on_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let opts = SynthesisOptions::new(&path, PromptMode::ZeroShot);
        let c = corpus(2, false);
        synthesize(
            &c,
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(MockEndpoint::new()),
            &opts,
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let first_line_len = text.find('\n').unwrap() + 1;
        fs::write(&path, &text[..first_line_len + 10]).unwrap();
        let gw = Gateway::mock(MockEndpoint::new());
        let run = synthesize(&c, &StylePreset::squad_wiki(), &[], &gw, &opts).unwrap();
        assert_eq!((run.resumed, run.completed), (1, 1));
        assert_eq!(read_triplets(&path).unwrap().len(), 2);
    }

    #[test]
    fn failures_are_recorded_then_threshold_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = SynthesisOptions::new(dir.path().join("f.jsonl"), PromptMode::ZeroShot);
        opts.parallelism = 1;
        opts.failure_threshold = 0.5;
        // One bad pair out of 20: recorded, run continues.
        let mock = MockEndpoint::new().with_chat(|req| {
            if req.messages.last().unwrap().content.contains("item 7?") {
                Err(EndpointError::Malformed("bad".into()))
            } else {
                Ok(crate::gateway::stop_response("context".into()))
            }
        });
        let run = synthesize(
            &corpus(20, false),
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(mock),
            &opts,
        )
        .unwrap();
        assert_eq!(run.completed, 19);
        assert_eq!(run.failed.len(), 1);
        assert_eq!(run.failed[0].kind, "malformed");
        assert_eq!(run.completed + run.failed.len(), run.attempted);

        let opts = SynthesisOptions::new(dir.path().join("g.jsonl"), PromptMode::ZeroShot);
        let mock = MockEndpoint::new().with_chat(|_| Err(EndpointError::Auth("401".into())));
        let err = synthesize(
            &corpus(50, false),
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(mock),
            &opts,
        )
        .unwrap_err();
        match err {
            SynthesisError::FailureRateExceeded {
                attempted,
                summary,
                run,
                ..
            } => {
                assert!(attempted < 50);
                assert!(summary.contains("auth="));
                assert_eq!(run.completed + run.failed.len(), run.attempted);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unwritable_output() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthesisOptions::new(
            dir.path().join("missing/dir/out.jsonl"),
            PromptMode::ZeroShot,
        );
        let err = synthesize(
            &corpus(1, false),
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(MockEndpoint::new()),
            &opts,
        );
        assert!(matches!(err, Err(SynthesisError::Io { .. })));
    }

    #[test]
    fn validation_flags() {
        let meiosis = "Meiosis is an important process of cell division that is vital for the production of gametes in sexually-reproducing species. It is a unique type of cell division as it results in the production of four haploid daughter cells, each with only one set of chromosomes.";
        let f = validate_context(meiosis, &["four haploid"], LengthLimits::default());
        assert!(f.contains_answer && !f.empty && !f.too_short && !f.too_long);
        let f = validate_context("xyz", &["abc"], LengthLimits::default());
        assert!(!f.contains_answer && f.too_short);
        assert!(
            validate_context(
                "...the photoelectric effect.",
                &["The Photoelectric Effect"],
                LengthLimits::default()
            )
            .contains_answer
        );
        assert!(
            !validate_context_with(
                "...the photoelectric effect.",
                &["The Photoelectric Effect"],
                LengthLimits::default(),
                ContainmentMode::RawSubstring
            )
            .contains_answer
        );
        let f = validate_context(
            " ",
            &["a"],
            LengthLimits {
                min_words: 0,
                max_words: 0,
            },
        );
        assert!(f.empty && !f.too_short && !f.too_long);
        assert!(
            validate_context(
                "one two three",
                &["x"],
                LengthLimits {
                    min_words: 0,
                    max_words: 2
                }
            )
            .too_long
        );
    }

    #[test]
    fn length_finish_reason_is_kept_and_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthesisOptions::new(dir.path().join("l.jsonl"), PromptMode::ZeroShot);
        let mock = MockEndpoint::new().with_chat(|_| {
            let mut r = crate::gateway::stop_response("cut off mid".into());
            r.finish_reason = FinishReason::Length;
            Ok(r)
        });
        synthesize(
            &corpus(1, false),
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(mock),
            &opts,
        )
        .unwrap();
        let t = &read_triplets(&opts.output_path).unwrap()[0];
        assert!(t.gen_meta.as_ref().unwrap().length_limited);
    }

    #[test]
    fn real_contexts() {
        let c = corpus(3, true);
        let ts = attach_real_contexts(&c).unwrap();
        assert_eq!(ts.len(), 3);
        for (t, p) in ts.iter().zip(c.pairs()) {
            assert_eq!(
                t.context.as_bytes(),
                p.real_context.as_ref().unwrap().as_bytes()
            );
            assert!(t.gen_meta.is_none());
            t.check().unwrap();
        }
        match attach_real_contexts(&corpus(2, false)) {
            Err(SynthesisError::MissingRealContext(ids)) => assert_eq!(ids, ["id000", "id001"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn canonical_hash_ignores_order_and_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(5, false);
        let a = SynthesisOptions::new(dir.path().join("a.jsonl"), PromptMode::ZeroShot);
        let mut b = SynthesisOptions::new(dir.path().join("b.jsonl"), PromptMode::ZeroShot);
        b.parallelism = 3;
        synthesize(
            &c,
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(MockEndpoint::new()),
            &a,
        )
        .unwrap();
        std::thread::sleep(std::time::Duration::from_millis(5));
        synthesize(
            &c,
            &StylePreset::squad_wiki(),
            &[],
            &Gateway::mock(MockEndpoint::new()),
            &b,
        )
        .unwrap();
        assert_eq!(
            canonical_file_hash(&a.output_path).unwrap(),
            canonical_file_hash(&b.output_path).unwrap()
        );
    }
}
