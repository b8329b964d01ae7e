//! Reference text-generation metrics and corpus-level reporting.
//!
//! Conventions: corpus BLEU pools n-gram counts across examples; ROUGE-L,
//! METEOR-lite, EM and F1 are macro-averaged over examples.

mod bleu;
mod meteor;
mod porter;
mod rouge;
mod squad;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu4, bleu_from_stats, bleu_stats, BleuStats, MAX_ORDER};
pub use meteor::{
    align, count_chunks, meteor_from_counts, meteor_lite, meteor_lite_detail, Alignment,
    MeteorDetail,
};
pub use porter::stem;
pub use rouge::{lcs_len, rouge_l, RougeScore};
pub use squad::{normalized_contains, normalized_tokens, squad_em, squad_f1, squad_normalize};
pub use tokenize::{is_punctuation, tokenize, TokenSeq};

use crate::gateway::TokenLogprobs;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("perplexity is undefined for an empty logprob sequence")]
    EmptyLogprobs,
    #[error("prediction/gold id mismatch: only in predictions {only_pred:?}, only in golds {only_gold:?}")]
    IdMismatch {
        only_pred: Vec<String>,
        only_gold: Vec<String>,
    },
    #[error("duplicate pair_id {0:?}")]
    DuplicateId(String),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

/// `exp(-mean(logprobs))`.
pub fn perplexity(lp: &TokenLogprobs) -> Result<f64, MetricsError> {
    if lp.logprobs.is_empty() {
        return Err(MetricsError::EmptyLogprobs);
    }
    let mean = lp.logprobs.iter().sum::<f64>() / lp.logprobs.len() as f64;
    Ok((-mean).exp())
}

/// A generated question, keyed by the pair it was generated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub text: String,
}

/// The reference question for a pair. Triplet files deserialize into this
/// directly since they carry the same two fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldQuestion {
    pub pair_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub pair_id: String,
    pub bleu4: f64,
    pub rouge_l_f: f64,
    pub meteor: f64,
    pub em: u8,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub em_rate: f64,
    pub mean_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_example: Vec<ExampleScores>,
    pub corpus: CorpusScores,
    pub n: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score predictions against gold questions. Per-example rows follow the
/// gold order.
pub fn score_corpus(
    predictions: &[Prediction],
    golds: &[GoldQuestion],
) -> Result<MetricReport, MetricsError> {
    let mut pred_by_id: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if pred_by_id.insert(&p.pair_id, &p.text).is_some() {
            return Err(MetricsError::DuplicateId(p.pair_id.clone()));
        }
    }
    let mut gold_ids = BTreeSet::new();
    for g in golds {
        if !gold_ids.insert(g.pair_id.as_str()) {
            return Err(MetricsError::DuplicateId(g.pair_id.clone()));
        }
    }
    let pred_ids: BTreeSet<&str> = pred_by_id.keys().copied().collect();
    if pred_ids != gold_ids {
        return Err(MetricsError::IdMismatch {
            only_pred: pred_ids
                .difference(&gold_ids)
                .map(|s| s.to_string())
                .collect(),
            only_gold: gold_ids
                .difference(&pred_ids)
                .map(|s| s.to_string())
                .collect(),
        });
    }

    let mut pooled = BleuStats::default();
    let mut per_example = Vec::with_capacity(golds.len());
    for g in golds {
        let text = pred_by_id[g.pair_id.as_str()];
        let cand = tokenize(text);
        let reference = tokenize(&g.question);
        let stats = bleu_stats(&cand, std::slice::from_ref(&reference));
        pooled += stats;
        per_example.push(ExampleScores {
            pair_id: g.pair_id.clone(),
            bleu4: bleu_from_stats(&stats),
            rouge_l_f: rouge_l(&cand, &reference).f,
            meteor: meteor_lite(&cand, &reference),
            em: squad_em(text, &[&g.question]),
            f1: squad_f1(text, &[&g.question]),
            external: None,
        });
    }
    let corpus = CorpusScores {
        bleu4: bleu_from_stats(&pooled),
        meteor: mean(per_example.iter().map(|e| e.meteor)),
        rouge_l: mean(per_example.iter().map(|e| e.rouge_l_f)),
        em_rate: mean(per_example.iter().map(|e| e.em as f64)),
        mean_f1: mean(per_example.iter().map(|e| e.f1)),
        external: None,
    };
    Ok(MetricReport {
        n: per_example.len(),
        per_example,
        corpus,
    })
}

impl MetricReport {
    /// Attach scores from an external scorer (e.g. a learned metric run
    /// elsewhere). Returns the ids in `scores` that matched no example.
    pub fn merge_external(&mut self, scores: &BTreeMap<String, f64>) -> Vec<String> {
        let known: BTreeSet<&str> = self
            .per_example
            .iter()
            .map(|e| e.pair_id.as_str())
            .collect();
        let unknown = scores
            .keys()
            .filter(|k| !known.contains(k.as_str()))
            .cloned()
            .collect();
        for e in &mut self.per_example {
            e.external = scores.get(&e.pair_id).copied();
        }
        let present: Vec<f64> = self.per_example.iter().filter_map(|e| e.external).collect();
        self.corpus.external = (!present.is_empty()).then(|| mean(present.into_iter()));
        unknown
    }

    pub fn summary_line(&self) -> String {
        let c = &self.corpus;
        let mut line = format!(
            "n={} bleu4={:.3} meteor={:.3} rouge_l={:.3} em={:.3} f1={:.3}",
            self.n, c.bleu4, c.meteor, c.rouge_l, c.em_rate, c.mean_f1
        );
        if let Some(x) = c.external {
            line.push_str(&format!(" external={x:.3}"));
        }
        line
    }

    /// One row per example plus a trailing `__corpus__` summary row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "pair_id",
            "bleu4",
            "rouge_l_f",
            "meteor",
            "em",
            "f1",
            "external",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.per_example {
            out.write_record([
                e.pair_id.clone(),
                e.bleu4.to_string(),
                e.rouge_l_f.to_string(),
                e.meteor.to_string(),
                e.em.to_string(),
                e.f1.to_string(),
                opt(e.external),
            ])?;
        }
        let c = &self.corpus;
        out.write_record([
            "__corpus__".to_string(),
            c.bleu4.to_string(),
            c.rouge_l.to_string(),
            c.meteor.to_string(),
            c.em_rate.to_string(),
            c.mean_f1.to_string(),
            opt(c.external),
        ])?;
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, body + "\n")?;
        Ok(())
    }
}
