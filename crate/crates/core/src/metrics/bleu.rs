use std::collections::HashMap;

use super::TokenSeq;

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram match counts for one or more candidate/reference pairs.
///
/// Counts add, so corpus BLEU is the score of the summed statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.candidate_len += rhs.candidate_len;
        self.reference_len += rhs.reference_len;
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `candidate_len`; ties go to the shorter one.
fn closest_ref_len(candidate_len: usize, references: &[TokenSeq]) -> usize {
    references
        .iter()
        .map(TokenSeq::len)
        .min_by_key(|&r| (r.abs_diff(candidate_len), r))
        .unwrap_or(0)
}

pub fn bleu_stats(candidate: &TokenSeq, references: &[TokenSeq]) -> BleuStats {
    let cand = candidate.tokens();
    let mut stats = BleuStats {
        candidate_len: cand.len() as u64,
        reference_len: closest_ref_len(cand.len(), references) as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let cand_counts = ngram_counts(cand, n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for r in references {
            for (gram, c) in ngram_counts(r.tokens(), n) {
                let e = max_ref.entry(gram).or_insert(0);
                *e = (*e).max(c);
            }
        }
        stats.matches[n - 1] = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        stats.totals[n - 1] = cand.len().saturating_sub(n - 1) as u64;
    }
    stats
}

/// BLEU-4 from accumulated statistics.
///
/// Orders 2..=4 with zero matches are add-one smoothed (`1 / (total + 1)`);
/// zero unigram matches or an empty candidate give 0.
pub fn bleu_from_stats(stats: &BleuStats) -> f64 {
    if stats.candidate_len == 0 || stats.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = (stats.matches[n], stats.totals[n]);
        let p = if n > 0 && m == 0 {
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
    }
    let c = stats.candidate_len as f64;
    let r = stats.reference_len as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / MAX_ORDER as f64).exp()
}

/// Sentence-level smoothed BLEU-4.
pub fn bleu4(candidate: &TokenSeq, references: &[TokenSeq]) -> f64 {
    bleu_from_stats(&bleu_stats(candidate, references))
}
