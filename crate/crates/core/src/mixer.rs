//! Real/synthetic interpolation, nested size sweeps and training-set emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::prompt::{render_training_input, PromptError, StylePreset};
use crate::synthesis::{ContextKind, Triplet};
use crate::util::{round_half_up, seeded_rng};

#[derive(Debug, thiserror::Error)]
pub enum MixError {
    #[error(
        "pair_id sets differ: only in real {only_real:?}, only in synthetic {only_synthetic:?}"
    )]
    IdMismatch {
        only_real: Vec<String>,
        only_synthetic: Vec<String>,
    },
    #[error("duplicate pair_id {0:?}")]
    DuplicateId(String),
    #[error("{list} list holds a {kind} triplet ({pair_id})")]
    WrongKind {
        list: &'static str,
        kind: &'static str,
        pair_id: String,
    },
    #[error("{0}")]
    Argument(String),
    #[error("{pair_id}: {source}")]
    Render {
        pair_id: String,
        #[source]
        source: PromptError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How the flipped pairs are chosen across fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    /// One seeded permutation per seed; fraction f flips its first round(f·n)
    /// ids, so flipped sets grow monotonically with f.
    #[default]
    Prefix,
    /// A fresh seeded draw per fraction; no nesting between fractions.
    Independent,
}

fn check_fraction(fraction: f64) -> Result<(), MixError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(MixError::Argument(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Which of `n` positions take the synthetic context.
pub fn flip_mask(
    n: usize,
    fraction: f64,
    seed: u64,
    strategy: MixStrategy,
) -> Result<Vec<bool>, MixError> {
    check_fraction(fraction)?;
    let k = round_half_up(fraction, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = match strategy {
        MixStrategy::Prefix => seeded_rng(seed, "mix"),
        MixStrategy::Independent => seeded_rng(
            seed,
            &format!("mix-independent:{:016x}", fraction.to_bits()),
        ),
    };
    order.shuffle(&mut rng);
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

fn keyed<'a>(
    list: &'a [Triplet],
    name: &'static str,
    synthetic: bool,
) -> Result<BTreeMap<&'a str, &'a Triplet>, MixError> {
    let mut map = BTreeMap::new();
    for t in list {
        if t.context_kind.is_synthetic() != synthetic {
            return Err(MixError::WrongKind {
                list: name,
                kind: t.context_kind.as_str(),
                pair_id: t.pair_id.clone(),
            });
        }
        if map.insert(t.pair_id.as_str(), t).is_some() {
            return Err(MixError::DuplicateId(t.pair_id.clone()));
        }
    }
    Ok(map)
}

/// One triplet per pair, in pair_id order: exactly `round(fraction · n)` pairs
/// take their synthetic context and the rest their real one.
pub fn mix(
    real: &[Triplet],
    synthetic: &[Triplet],
    fraction: f64,
    seed: u64,
    strategy: MixStrategy,
) -> Result<Vec<Triplet>, MixError> {
    check_fraction(fraction)?;
    let real = keyed(real, "real", false)?;
    let synthetic = keyed(synthetic, "synthetic", true)?;
    if !real.keys().eq(synthetic.keys()) {
        let r: BTreeSet<&str> = real.keys().copied().collect();
        let s: BTreeSet<&str> = synthetic.keys().copied().collect();
        return Err(MixError::IdMismatch {
            only_real: r.difference(&s).map(|x| x.to_string()).collect(),
            only_synthetic: s.difference(&r).map(|x| x.to_string()).collect(),
        });
    }
    let mask = flip_mask(real.len(), fraction, seed, strategy)?;
    Ok(real
        .values()
        .zip(synthetic.values())
        .zip(mask)
        .map(|((r, s), flip)| if flip { (*s).clone() } else { (*r).clone() })
        .collect())
}

/// Nested subsets: for one seed, the subset of each size contains every
/// smaller one. Subsets come back in pair_id order.
pub fn sweep_sizes(
    triplets: &[Triplet],
    sizes: &[usize],
    seed: u64,
) -> Result<BTreeMap<usize, Vec<Triplet>>, MixError> {
    let n = triplets.len();
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > n) {
        return Err(MixError::Argument(format!(
            "subset size {bad} outside 1..={n}"
        )));
    }
    let mut sorted: Vec<&Triplet> = triplets.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(MixError::DuplicateId(w[0].pair_id.clone()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, "sweep"));
    Ok(sizes
        .iter()
        .map(|&size| {
            let mut idx = order[..size].to_vec();
            idx.sort_unstable();
            (size, idx.into_iter().map(|i| sorted[i].clone()).collect())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitMeta {
    pub pair_id: String,
    pub context_kind: ContextKind,
}

/// One line of a training or test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitRecord {
    pub input: String,
    pub target: String,
    pub meta: EmitMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitReport {
    pub count: usize,
    pub truncated_count: usize,
}

fn word_len(s: &str) -> usize {
    s.split_whitespace().count()
}

/// First `n` whitespace-separated words of `s`, joined by single spaces.
fn first_words(s: &str, n: usize) -> String {
    s.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Render one record. When the input exceeds `max_input_tokens` whitespace
/// tokens, the context is cut at a word boundary (keeping at least one word)
/// and the flag is set.
pub fn render_record(
    triplet: &Triplet,
    style: &StylePreset,
    max_input_tokens: Option<usize>,
) -> Result<(EmitRecord, bool), MixError> {
    let render = |t: &Triplet| {
        render_training_input(t, style).map_err(|source| MixError::Render {
            pair_id: t.pair_id.clone(),
            source,
        })
    };
    let (mut input, target) = render(triplet)?;
    let mut truncated = false;
    if let Some(limit) = max_input_tokens {
        let total = word_len(&input);
        if total > limit {
            let ctx_words = word_len(&triplet.context);
            let overhead = total - ctx_words;
            let keep = limit.saturating_sub(overhead).max(1);
            if keep < ctx_words {
                let mut cut = triplet.clone();
                cut.context = first_words(&triplet.context, keep);
                input = render(&cut)?.0;
                truncated = true;
            }
        }
    }
    let record = EmitRecord {
        input,
        target,
        meta: EmitMeta {
            pair_id: triplet.pair_id.clone(),
            context_kind: triplet.context_kind,
        },
    };
    Ok((record, truncated))
}

/// Write the training set as JSONL `{input, target, meta}`, one line per triplet.
pub fn emit_trainset(
    triplets: &[Triplet],
    style: &StylePreset,
    path: &Path,
    max_input_tokens: Option<usize>,
) -> Result<EmitReport, MixError> {
    if max_input_tokens == Some(0) {
        return Err(MixError::Argument(
            "max_input_tokens must be positive".into(),
        ));
    }
    let io = |source| MixError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut records = Vec::with_capacity(triplets.len());
    let mut truncated_count = 0;
    for t in triplets {
        let (rec, cut) = render_record(t, style, max_input_tokens)?;
        truncated_count += usize::from(cut);
        records.push(rec);
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for rec in &records {
        serde_json::to_writer(&mut w, rec).expect("record serializes");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(EmitReport {
        count: records.len(),
        truncated_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FinishReason;
    use crate::synthesis::{GenMeta, ValidationFlags};

    fn triplet(id: &str, kind: ContextKind) -> Triplet {
        Triplet {
            pair_id: id.into(),
            question: format!("question {id}?"),
            answer: "answer".into(),
            context: format!("{} context for {id}", kind.as_str()),
            context_kind: kind,
            gen_meta: kind.is_synthetic().then(|| GenMeta {
                model_name: "m".into(),
                request_key: "k".into(),
                timestamp: String::new(),
                prompt_snapshot_hash: "h".into(),
                finish_reason: FinishReason::Stop,
                length_limited: false,
                flags: ValidationFlags::default(),
            }),
        }
    }

    fn lists(n: usize) -> (Vec<Triplet>, Vec<Triplet>) {
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:05}")).collect();
        (
            ids.iter().map(|i| triplet(i, ContextKind::Real)).collect(),
            ids.iter()
                .rev()
                .map(|i| triplet(i, ContextKind::SyntheticZero))
                .collect(),
        )
    }

    fn synthetic_ids(mixed: &[Triplet]) -> BTreeSet<String> {
        mixed
            .iter()
            .filter(|t| t.context_kind.is_synthetic())
            .map(|t| t.pair_id.clone())
            .collect()
    }

    #[test]
    fn endpoints_and_half() {
        let (r, s) = lists(10);
        assert!(mix(&r, &s, 0.0, 1, MixStrategy::Prefix)
            .unwrap()
            .iter()
            .all(|t| t.context_kind == ContextKind::Real));
        assert!(mix(&r, &s, 1.0, 1, MixStrategy::Prefix)
            .unwrap()
            .iter()
            .all(|t| t.context_kind.is_synthetic()));
        for seed in 0..20 {
            let m = mix(&r, &s, 0.5, seed, MixStrategy::Prefix).unwrap();
            assert_eq!(m.len(), 10);
            assert_eq!(synthetic_ids(&m).len(), 5);
        }
    }

    #[test]
    fn output_is_a_pairwise_selection() {
        let (r, s) = lists(50);
        let m = mix(&r, &s, 0.3, 9, MixStrategy::Independent).unwrap();
        for t in &m {
            let src = if t.context_kind.is_synthetic() {
                &s
            } else {
                &r
            };
            assert_eq!(src.iter().find(|x| x.pair_id == t.pair_id).unwrap(), t);
        }
        assert_eq!(m, mix(&r, &s, 0.3, 9, MixStrategy::Independent).unwrap());
    }

    #[test]
    fn prefix_flips_are_nested() {
        let (r, s) = lists(200);
        let mut prev = BTreeSet::new();
        for k in 0..=10 {
            let ids = synthetic_ids(&mix(&r, &s, k as f64 / 10.0, 3, MixStrategy::Prefix).unwrap());
            assert_eq!(ids.len(), k * 20);
            assert!(prev.is_subset(&ids));
            prev = ids;
        }
    }

    #[test]
    fn mismatch_reports_symmetric_difference() {
        let (mut r, mut s) = lists(4);
        r.retain(|t| t.pair_id != "p00001");
        s.retain(|t| t.pair_id != "p00003");
        match mix(&r, &s, 0.5, 0, MixStrategy::Prefix) {
            Err(MixError::IdMismatch {
                only_real,
                only_synthetic,
            }) => {
                assert_eq!(only_real, ["p00003"]);
                assert_eq!(only_synthetic, ["p00001"]);
            }
            other => panic!("{other:?}"),
        }
        let (r, s) = lists(3);
        assert!(matches!(
            mix(&s, &r, 0.5, 0, MixStrategy::Prefix),
            Err(MixError::WrongKind { .. })
        ));
        assert!(mix(&r, &s, 1.5, 0, MixStrategy::Prefix).is_err());
        assert!(mix(&r, &s, f64::NAN, 0, MixStrategy::Prefix).is_err());
    }

    #[test]
    fn sweeps_nest() {
        let (r, _) = lists(100);
        for seed in 0..10 {
            let sw = sweep_sizes(&r, &[10, 50, 100], seed).unwrap();
            let ids = |k| {
                sw[&k]
                    .iter()
                    .map(|t: &Triplet| t.pair_id.clone())
                    .collect::<BTreeSet<_>>()
            };
            assert_eq!(ids(10).len(), 10);
            assert!(ids(10).is_subset(&ids(50)));
            assert!(ids(50).is_subset(&ids(100)));
        }
        assert_eq!(sweep_sizes(&r, &[100], 0).unwrap()[&100], r);
        assert!(sweep_sizes(&r, &[101], 0).is_err());
        assert!(sweep_sizes(&r, &[0], 0).is_err());
    }

    #[test]
    fn emit_writes_records_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let (r, _) = lists(2);
        let rep = emit_trainset(&r, &StylePreset::squad_wiki(), &path, Some(512)).unwrap();
        assert_eq!(
            rep,
            EmitReport {
                count: 2,
                truncated_count: 0
            }
        );
        let recs: Vec<EmitRecord> = crate::jsonl::read(&path).unwrap();
        assert_eq!(recs.len(), 2);
        for (rec, t) in recs.iter().zip(&r) {
            assert_eq!(rec.target, t.question);
            assert!(rec.input.contains("Based on the context"));
            assert_eq!(rec.meta.pair_id, t.pair_id);
        }

        let mut long = r[0].clone();
        long.context = vec!["word"; 10_000].join(" ");
        let rep = emit_trainset(
            &[long, r[1].clone()],
            &StylePreset::squad_wiki(),
            &path,
            Some(512),
        )
        .unwrap();
        assert_eq!(rep.truncated_count, 1);
        let recs: Vec<EmitRecord> = crate::jsonl::read(&path).unwrap();
        assert!(word_len(&recs[0].input) <= 512);
        assert!(word_len(&recs[0].input) > 500);
    }
}
