//! METEOR-lite: exact and Porter-stem unigram alignment, no synonym stage.

use std::collections::BTreeMap;

use super::porter::stem;
use super::TokenSeq;

/// Upper bound on alignment combinations examined per stage before falling
/// back to group-by-group selection.
const MAX_COMBINATIONS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Pairs of (candidate index, reference index).
pub type Alignment = Vec<(usize, usize)>;

fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 < b.0 && a.1 > b.1) || (a.0 > b.0 && a.1 < b.1)
}

fn crossings_against(new: &[(usize, usize)], fixed: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for (i, &p) in new.iter().enumerate() {
        n += fixed.iter().filter(|&&q| crosses(p, q)).count();
        n += new[i + 1..].iter().filter(|&&q| crosses(p, q)).count();
    }
    n
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Candidate pairings for one equivalence class: every way of choosing which
/// occurrences on the longer side participate, each paired in order.
fn group_options(cand: &[usize], refs: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let k = cand.len().min(refs.len());
    let build = |cs: Vec<usize>, rs: Vec<usize>| cs.into_iter().zip(rs).collect::<Vec<_>>();
    if binomial(cand.len().max(refs.len()), k) > MAX_COMBINATIONS {
        return vec![build(cand[..k].to_vec(), refs[..k].to_vec())];
    }
    if cand.len() >= refs.len() {
        subsets(cand.len(), k)
            .into_iter()
            .map(|s| build(s.iter().map(|&i| cand[i]).collect(), refs.to_vec()))
            .collect()
    } else {
        subsets(refs.len(), k)
            .into_iter()
            .map(|s| build(cand.to_vec(), s.iter().map(|&i| refs[i]).collect()))
            .collect()
    }
}

fn align_stage<F>(cand: &[String], reference: &[String], fixed: &mut Alignment, key: F)
where
    F: Fn(&str) -> String,
{
    let used_c: Vec<bool> = (0..cand.len())
        .map(|i| fixed.iter().any(|p| p.0 == i))
        .collect();
    let used_r: Vec<bool> = (0..reference.len())
        .map(|j| fixed.iter().any(|p| p.1 == j))
        .collect();
    let mut groups: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, t) in cand.iter().enumerate().filter(|(i, _)| !used_c[*i]) {
        groups.entry(key(t)).or_default().0.push(i);
    }
    for (j, t) in reference.iter().enumerate().filter(|(j, _)| !used_r[*j]) {
        if let Some(g) = groups.get_mut(&key(t)) {
            g.1.push(j);
        }
    }
    let options: Vec<Vec<Vec<(usize, usize)>>> = groups
        .values()
        .filter(|(c, r)| !c.is_empty() && !r.is_empty())
        .map(|(c, r)| group_options(c, r))
        .collect();
    if options.is_empty() {
        return;
    }

    let total = options
        .iter()
        .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
        .unwrap_or(usize::MAX);

    if total <= MAX_COMBINATIONS {
        // Exhaustive: first minimum in odometer order wins ties.
        let mut idx = vec![0usize; options.len()];
        let mut best: Option<(usize, Vec<usize>)> = None;
        loop {
            let chosen: Vec<(usize, usize)> = idx
                .iter()
                .zip(&options)
                .flat_map(|(&i, o)| o[i].iter().copied())
                .collect();
            let x = crossings_against(&chosen, fixed);
            if best.as_ref().is_none_or(|(b, _)| x < *b) {
                best = Some((x, idx.clone()));
            }
            let mut pos = idx.len();
            let mut exhausted = false;
            loop {
                if pos == 0 {
                    exhausted = true;
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < options[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
            if exhausted {
                break;
            }
        }
        let (_, idx) = best.expect("at least one combination");
        for (i, o) in idx.iter().zip(&options) {
            fixed.extend(o[*i].iter().copied());
        }
    } else {
        for o in &options {
            let best = o
                .iter()
                .min_by_key(|pairs| crossings_against(pairs, fixed))
                .expect("non-empty options")
                .clone();
            fixed.extend(best);
        }
    }
}

/// Maximum-cardinality unigram alignment (exact stage, then stem stage on
/// leftovers), choosing the fewest crossings among maximal alignments.
pub fn align(candidate: &TokenSeq, reference: &TokenSeq) -> Alignment {
    let (c, r) = (candidate.tokens(), reference.tokens());
    let mut alignment = Vec::new();
    align_stage(c, r, &mut alignment, |t| t.to_string());
    align_stage(c, r, &mut alignment, stem);
    alignment.sort_unstable();
    alignment
}

/// Number of contiguous, identically ordered runs in an alignment sorted by
/// candidate index.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Score from alignment counts: `F_mean · (1 − 0.5·(chunks/m)³)`.
pub fn meteor_from_counts(
    matches: usize,
    chunks: usize,
    candidate_len: usize,
    reference_len: usize,
) -> MeteorDetail {
    if matches == 0 {
        return MeteorDetail {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            f_mean: 0.0,
            penalty: 0.0,
            score: 0.0,
        };
    }
    let m = matches as f64;
    let precision = m / candidate_len as f64;
    let recall = m / reference_len as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    MeteorDetail {
        matches,
        chunks,
        precision,
        recall,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
    }
}

pub fn meteor_lite_detail(candidate: &TokenSeq, reference: &TokenSeq) -> MeteorDetail {
    let alignment = align(candidate, reference);
    meteor_from_counts(
        alignment.len(),
        count_chunks(&alignment),
        candidate.len(),
        reference.len(),
    )
}

pub fn meteor_lite(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    meteor_lite_detail(candidate, reference).score
}
