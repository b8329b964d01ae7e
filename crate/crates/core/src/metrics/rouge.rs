use serde::{Deserialize, Serialize};

use super::TokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with β = 1.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let l = lcs_len(candidate.tokens(), reference.tokens());
    if l == 0 {
        return RougeScore::default();
    }
    let precision = l as f64 / candidate.len() as f64;
    let recall = l as f64 / reference.len() as f64;
    RougeScore {
        precision,
        recall,
        f: 2.0 * precision * recall / (precision + recall),
    }
}
