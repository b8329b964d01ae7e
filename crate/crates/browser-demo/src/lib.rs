//! WebAssembly bindings for the static demo page in `www/`. Every export
//! takes plain values and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qgctx::metrics::{bleu4, meteor_lite, rouge_l, squad_em, squad_f1, tokenize};
use qgctx::mixer::{flip_mask, MixStrategy};
use qgctx::prompt::{build_context_prompt, Exemplar, PromptMode, StylePreset};
use qgctx::{QAPair, Source};

#[derive(Debug, Serialize)]
pub struct PairScores {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub em: u8,
    pub f1: f64,
}

pub fn score(candidate: &str, reference: &str) -> PairScores {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    PairScores {
        bleu4: bleu4(&c, std::slice::from_ref(&r)),
        meteor: meteor_lite(&c, &r),
        rouge_l: rouge_l(&c, &r).f,
        em: squad_em(candidate, &[reference]),
        f1: squad_f1(candidate, &[reference]),
    }
}

#[derive(Debug, Serialize)]
pub struct PromptView {
    pub messages: Vec<(String, String)>,
    pub snapshot_hash: String,
}

pub fn prompt(style: &str, mode: &str, question: &str, answer: &str) -> Result<PromptView, String> {
    let style = StylePreset::builtin(style).map_err(|e| e.to_string())?;
    let (mode, exemplars) = match mode {
        "zero" => (PromptMode::ZeroShot, vec![]),
        "few" => (PromptMode::FewShot, vec![Exemplar::solar_energy()]),
        other => return Err(format!("unknown mode {other:?} (expected zero or few)")),
    };
    let pair = QAPair {
        id: "demo".into(),
        question: question.into(),
        answers: vec![answer.into()],
        real_context: None,
        title: None,
        source: Source::Generic,
    };
    let p = build_context_prompt(&pair, &style, &exemplars, mode).map_err(|e| e.to_string())?;
    Ok(PromptView {
        snapshot_hash: p.snapshot_hash(),
        messages: p
            .messages
            .into_iter()
            .map(|m| (m.role.as_str().to_string(), m.content))
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct MixView {
    pub n: usize,
    pub synthetic_count: usize,
    pub mask: Vec<bool>,
}

pub fn preview(n: usize, fraction: f64, seed: u64, strategy: &str) -> Result<MixView, String> {
    let strategy = match strategy {
        "prefix" => MixStrategy::Prefix,
        "independent" => MixStrategy::Independent,
        other => return Err(format!("unknown strategy {other:?}")),
    };
    let mask = flip_mask(n, fraction, seed, strategy).map_err(|e| e.to_string())?;
    Ok(MixView {
        n,
        synthetic_count: mask.iter().filter(|&&b| b).count(),
        mask,
    })
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// BLEU-4, METEOR-lite, ROUGE-L F, EM and F1 of one candidate question.
#[wasm_bindgen]
pub fn score_pair(candidate: &str, reference: &str) -> Result<String, JsValue> {
    to_json(Ok(score(candidate, reference)))
}

/// Context-generation prompt for a question/answer pair.
#[wasm_bindgen]
pub fn build_prompt(
    style: &str,
    mode: &str,
    question: &str,
    answer: &str,
) -> Result<String, JsValue> {
    to_json(prompt(style, mode, question, answer))
}

/// Which of `n` pairs would take a synthetic context at `fraction`.
#[wasm_bindgen]
pub fn mix_preview(n: u32, fraction: f64, seed: u32, strategy: &str) -> Result<String, JsValue> {
    to_json(preview(n as usize, fraction, u64::from(seed), strategy))
}
