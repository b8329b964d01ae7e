//! Toolkit for training question-generation models from synthetic contexts.
//!
//! The pipeline runs in stages, each backed by a module:
//!
//! * [`corpus`] loads question/answer corpora and draws seeded splits and subsets.
//! * [`prompt`] renders context-generation and question-generation prompts.
//! * [`gateway`] talks to chat, logprob and extractive-QA endpoints with caching and retries.
//! * [`synthesis`] drives context generation over a corpus into resumable triplet files.
//! * [`mixer`] interpolates real and synthetic contexts and emits training sets.
//! * [`metrics`] implements BLEU-4, ROUGE-L, METEOR-lite, SQuAD EM/F1 and perplexity.
//! * [`quality`] profiles generated contexts (length, perplexity, answer containment, QA probe).
//! * [`report`] writes experiment manifests, comparison tables and curve data.

pub mod corpus;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod mixer;
pub mod prompt;
pub mod quality;
pub mod report;
pub mod synthesis;
pub mod util;

pub use corpus::{Corpus, QAPair, Source};
pub use gateway::{Gateway, GatewayConfig, GatewayError};
pub use metrics::{MetricReport, TokenSeq};
pub use prompt::{Exemplar, Prompt, PromptMode, StylePreset};
pub use report::ExperimentManifest;
pub use synthesis::{ContextKind, Triplet};

/// Version string recorded in every experiment manifest.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
