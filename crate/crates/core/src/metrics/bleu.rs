use std::collections::HashMap;

use crate::text::tokenize;

const MAX_ORDER: usize = 4;
/// Stands in for a zero n-gram precision.
const ZERO_PRECISION: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU-4 with uniform weights and brevity penalty. Candidates
/// shorter than four tokens use the orders they have, equally weighted.
/// Empty candidate or reference scores 0.
pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let orders = MAX_ORDER.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let c = ngram_counts(&cand, n);
        let r = ngram_counts(&refr, n);
        let clipped: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
        let total = cand.len() + 1 - n;
        let p = if clipped == 0 { ZERO_PRECISION } else { clipped as f64 / total as f64 };
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        assert_eq!(bleu4("The driver should stop.", "the driver should STOP"), 1.0);
        assert_eq!(bleu4("stop", "stop"), 1.0);
    }

    #[test]
    fn disjoint_is_tiny() {
        assert!(bleu4("alpha beta gamma delta", "one two three four") <= 1e-6);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(bleu4("", "a b"), 0.0);
        assert_eq!(bleu4("a b", "  "), 0.0);
    }

    #[test]
    fn cat_on_mat() {
        // p1 = 5/6, p2 = 3/5, p3 = 1/4, p4 = eps; equal lengths.
        let want = (0.25 * ((5.0f64 / 6.0).ln() + 0.6f64.ln() + 0.25f64.ln() + 1e-9f64.ln())).exp();
        let got = bleu4("the cat sat on the mat", "the cat is on the mat");
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn short_candidate_renormalizes() {
        // two tokens: p1 = 1, p2 = 1, brevity penalty exp(1 - 4/2)
        let got = bleu4("the cat", "the cat sat down");
        assert!((got - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        // p1 = 2/7 (two "the" in the reference), p2.. = eps
        let got = bleu4("the the the the the the the", "the cat is on the mat ok");
        let want = (0.25 * ((2.0f64 / 7.0).ln() + 3.0 * 1e-9f64.ln())).exp();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn not_symmetric() {
        assert_ne!(bleu4("the cat", "the cat sat down"), bleu4("the cat sat down", "the cat"));
    }
}
