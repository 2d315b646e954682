//! Brute-force reference implementations shared by integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use clasr_core::num::Tensor;

/// Probability of `targets` under CTC, by enumerating all `V^T` frame labelings.
pub fn ctc_probability(log_probs: &Tensor, targets: &[usize]) -> f64 {
    let (t_len, v) = (log_probs.dim(0), log_probs.dim(1));
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    for code in 0..v.pow(t_len as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % v;
            c /= v;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != 0 {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == targets {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &s)| log_probs.get2(t, s))
                .sum::<f64>()
                .exp();
        }
    }
    total
}

/// Probability of `targets` under the transducer lattice, summing every
/// monotone path explicitly (no shared sub-results).
pub fn rnnt_probability(node_log_probs: &Tensor, targets: &[usize]) -> f64 {
    fn walk(lp: &Tensor, y: &[usize], t: usize, u: usize) -> f64 {
        let last_t = lp.dim(0) - 1;
        let mut p = 0.0;
        if u < y.len() {
            p += lp.get3(t, u, y[u]).exp() * walk(lp, y, t, u + 1);
        }
        let blank = lp.get3(t, u, 0).exp();
        if t < last_t {
            p += blank * walk(lp, y, t + 1, u);
        } else if u == y.len() {
            p += blank;
        }
        p
    }
    walk(node_log_probs, targets, 0, 0)
}

/// Levenshtein distance from its recursive definition, memoized on suffixes.
pub fn edit_distance_recursive(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = (go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
            .min(go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

/// All sequences over `1..=alphabet` of length at most `max_len`.
pub fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 1..=alphabet {
                let mut t: Vec<usize> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Number of adjacent increases in a series that should not increase.
pub fn inversions(series: &[f64]) -> usize {
    series.windows(2).filter(|w| w[1] > w[0]).count()
}
