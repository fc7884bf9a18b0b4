use std::collections::HashMap;

use crate::textmodel::words;

fn f1(overlap: usize, ref_len: usize, cand_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// Handles the empty cases: both empty is a perfect match, one empty scores 0.
fn degenerate(a: &[String], b: &[String]) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(1.0),
        (true, false) | (false, true) => Some(0.0),
        _ => None,
    }
}

/// Unigram-overlap F1 with clipped counts, no stemming.
pub fn rouge1(reference: &str, candidate: &str) -> f64 {
    let r = words(reference);
    let c = words(candidate);
    if let Some(v) = degenerate(&r, &c) {
        return v;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in &c {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    f1(overlap, r.len(), c.len())
}

/// Longest-common-subsequence F1, no stemming.
pub fn rouge_l(reference: &str, candidate: &str) -> f64 {
    let r = words(reference);
    let c = words(candidate);
    if let Some(v) = degenerate(&r, &c) {
        return v;
    }
    let mut prev = vec![0usize; c.len() + 1];
    let mut cur = vec![0usize; c.len() + 1];
    for a in &r {
        for (j, b) in c.iter().enumerate() {
            cur[j + 1] = if a == b {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    f1(prev[c.len()], r.len(), c.len())
}
