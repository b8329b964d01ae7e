//! Context-quality profiling: word counts, perplexity, answer containment,
//! extractive-QA probing and a manual-review worksheet.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::metrics::{perplexity, squad_em, squad_f1};
use crate::synthesis::{contains_answer, word_count, ContainmentMode, ContextKind, Triplet};
use crate::util::seeded_rng;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("no contexts to profile")]
    Empty,
    #[error("{0}")]
    Argument(String),
    #[error("{path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    /// `counts.len() + 1` edges; the last bin includes its upper edge.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Fixed-width histogram spanning `min..=max` of `values`.
pub fn histogram(label: &str, values: &[f64], bins: usize) -> Result<Histogram, QualityError> {
    if values.is_empty() {
        return Err(QualityError::Empty);
    }
    if bins == 0 {
        return Err(QualityError::Argument("bin count must be positive".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(QualityError::Argument(format!("non-finite value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let width = if max > min {
        (max - min) / bins as f64
    } else {
        1.0
    };
    let bin_edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in &sorted {
        let i = (((v - min) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram {
        label: label.to_string(),
        bin_edges,
        counts,
        n,
        mean,
        median,
        min,
        max,
    })
}

/// Word counts (punctuation excluded) over all contexts.
pub fn length_stats(triplets: &[Triplet], bins: usize) -> Result<Histogram, QualityError> {
    let counts: Vec<f64> = triplets
        .iter()
        .map(|t| word_count(&t.context) as f64)
        .collect();
    histogram("word_count", &counts, bins)
}

/// One word-count histogram per context kind present, labelled by kind.
pub fn length_series(triplets: &[Triplet], bins: usize) -> Result<Vec<Histogram>, QualityError> {
    if triplets.is_empty() {
        return Err(QualityError::Empty);
    }
    let mut by_kind: BTreeMap<ContextKind, Vec<f64>> = BTreeMap::new();
    for t in triplets {
        by_kind
            .entry(t.context_kind)
            .or_default()
            .push(word_count(&t.context) as f64);
    }
    by_kind
        .into_iter()
        .map(|(k, v)| histogram(&format!("word_count:{}", k.as_str()), &v, bins))
        .collect()
}

/// Apply `f` to every item on up to `parallelism` threads, keeping order.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    parallelism: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                out.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPerplexity {
    pub pair_id: String,
    pub context_kind: ContextKind,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub pair_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityStats {
    /// One histogram per context kind that has at least one scored context.
    pub series: Vec<Histogram>,
    pub values: Vec<ContextPerplexity>,
    pub errors: Vec<Skip>,
}

/// Per-context perplexity under `scorer_model`. Endpoint failures for a
/// context (overflow included) are recorded and skipped.
pub fn perplexity_stats(
    triplets: &[Triplet],
    gateway: &Gateway,
    scorer_model: &str,
    bins: usize,
    parallelism: usize,
) -> Result<PerplexityStats, QualityError> {
    if triplets.is_empty() {
        return Err(QualityError::Empty);
    }
    let results = par_map(triplets, parallelism, |t| {
        let lp = gateway
            .token_logprobs(&t.context, scorer_model)
            .map_err(|e| (e.kind().to_string(), e.to_string()))?;
        perplexity(&lp).map_err(|e| ("empty_logprobs".to_string(), e.to_string()))
    });
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for (t, r) in triplets.iter().zip(results) {
        match r {
            Ok(p) => values.push(ContextPerplexity {
                pair_id: t.pair_id.clone(),
                context_kind: t.context_kind,
                perplexity: p,
            }),
            Err((kind, message)) => errors.push(Skip {
                pair_id: t.pair_id.clone(),
                kind,
                message,
            }),
        }
    }
    let mut by_kind: BTreeMap<ContextKind, Vec<f64>> = BTreeMap::new();
    for v in &values {
        by_kind
            .entry(v.context_kind)
            .or_default()
            .push(v.perplexity);
    }
    let series = by_kind
        .into_iter()
        .map(|(k, v)| histogram(&format!("perplexity:{}", k.as_str()), &v, bins))
        .collect::<Result<_, _>>()?;
    Ok(PerplexityStats {
        series,
        values,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub rate: f64,
    pub hits: usize,
    pub n: usize,
    pub misses: Vec<String>,
}

pub fn containment_rate(
    triplets: &[Triplet],
    mode: ContainmentMode,
) -> Result<Containment, QualityError> {
    if triplets.is_empty() {
        return Err(QualityError::Empty);
    }
    let misses: Vec<String> = triplets
        .iter()
        .filter(|t| !contains_answer(&t.context, &[&t.answer], mode))
        .map(|t| t.pair_id.clone())
        .collect();
    let n = triplets.len();
    let hits = n - misses.len();
    Ok(Containment {
        rate: hits as f64 / n as f64,
        hits,
        n,
        misses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub pair_id: String,
    pub predicted: String,
    pub confidence: f64,
    pub em: u8,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAProbe {
    /// Rates over scored examples; skips are excluded.
    pub em_rate: f64,
    pub mean_f1: f64,
    pub per_example: Vec<ProbeExample>,
    pub skips: Vec<Skip>,
}

/// Ask the QA endpoint each triplet's question over its context and score the
/// extracted span against the gold answer.
pub fn qa_probe(
    triplets: &[Triplet],
    gateway: &Gateway,
    parallelism: usize,
) -> Result<QAProbe, QualityError> {
    if triplets.is_empty() {
        return Err(QualityError::Empty);
    }
    let results = par_map(triplets, parallelism, |t| {
        gateway.answer_question(&t.context, &t.question)
    });
    let mut per_example = Vec::new();
    let mut skips = Vec::new();
    for (t, r) in triplets.iter().zip(results) {
        match r {
            Ok(res) => {
                let golds = [t.answer.as_str()];
                per_example.push(ProbeExample {
                    pair_id: t.pair_id.clone(),
                    em: squad_em(&res.predicted_span, &golds),
                    f1: squad_f1(&res.predicted_span, &golds),
                    predicted: res.predicted_span,
                    confidence: res.confidence,
                });
            }
            Err(e) => skips.push(Skip {
                pair_id: t.pair_id.clone(),
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let n = per_example.len();
    let (em_rate, mean_f1) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            per_example.iter().map(|e| f64::from(e.em)).sum::<f64>() / n as f64,
            per_example.iter().map(|e| e.f1).sum::<f64>() / n as f64,
        )
    };
    Ok(QAProbe {
        em_rate,
        mean_f1,
        per_example,
        skips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCase {
    pub pair_id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub context: String,
    pub probe_answer: Option<String>,
}

/// Containment misses plus probe results without an exact match.
pub fn review_cases(
    triplets: &[Triplet],
    containment: &Containment,
    probe: Option<&QAProbe>,
) -> Vec<ReviewCase> {
    let mut probe_by_id: BTreeMap<&str, &ProbeExample> = BTreeMap::new();
    if let Some(p) = probe {
        for e in &p.per_example {
            probe_by_id.insert(&e.pair_id, e);
        }
    }
    triplets
        .iter()
        .filter(|t| {
            containment.misses.contains(&t.pair_id)
                || probe_by_id
                    .get(t.pair_id.as_str())
                    .is_some_and(|e| e.em == 0)
        })
        .map(|t| ReviewCase {
            pair_id: t.pair_id.clone(),
            question: t.question.clone(),
            answers: vec![t.answer.clone()],
            context: t.context.clone(),
            probe_answer: probe_by_id
                .get(t.pair_id.as_str())
                .map(|e| e.predicted.clone()),
        })
        .collect()
}

/// Seeded sample of at most `cap` cases, in input order.
pub fn sample_review(cases: &[ReviewCase], cap: usize, seed: u64) -> Vec<ReviewCase> {
    if cases.len() <= cap {
        return cases.to_vec();
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.partial_shuffle(&mut seeded_rng(seed, "review"), cap);
    let mut keep = order[..cap].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| cases[i].clone()).collect()
}

/// Write the review CSV (pair_id, question, answers, context, probe_answer).
/// Returns the number of rows written.
pub fn review_worksheet(
    cases: &[ReviewCase],
    cap: usize,
    seed: u64,
    path: &Path,
) -> Result<usize, QualityError> {
    let werr = |e: csv::Error| QualityError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let rows = sample_review(cases, cap, seed);
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(["pair_id", "question", "answers", "context", "probe_answer"])
        .map_err(werr)?;
    for c in &rows {
        w.write_record([
            c.pair_id.as_str(),
            c.question.as_str(),
            c.answers.join(" | ").as_str(),
            c.context.as_str(),
            c.probe_answer.as_deref().unwrap_or(""),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| werr(e.into()))?;
    Ok(rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub n: usize,
    pub containment_rate: f64,
    pub em_rate: Option<f64>,
    pub mean_f1: Option<f64>,
    pub skips: usize,
    pub perplexity_errors: usize,
}

impl QualitySummary {
    pub fn new(
        containment: &Containment,
        probe: Option<&QAProbe>,
        ppl: Option<&PerplexityStats>,
    ) -> Self {
        QualitySummary {
            n: containment.n,
            containment_rate: containment.rate,
            em_rate: probe.map(|p| p.em_rate),
            mean_f1: probe.map(|p| p.mean_f1),
            skips: probe.map_or(0, |p| p.skips.len()),
            perplexity_errors: ppl.map_or(0, |p| p.errors.len()),
        }
    }
}
