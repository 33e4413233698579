//! Trial-level (cluster) bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};
use crate::scenario::TrialRecord;

pub const DEFAULT_RESAMPLES: usize = 2000;

const TEST_STREAM: u64 = 1;
const CI_STREAM: u64 = 2;

/// `(successes, valid frames)` per trial, dropping trials with no valid frame.
fn clusters(trials: &[TrialRecord]) -> Vec<(usize, usize)> {
    trials
        .iter()
        .map(|t| t.valid_frames().fold((0, 0), |(s, n), f| (s + f.success as usize, n + 1)))
        .filter(|&(_, n)| n > 0)
        .collect()
}

fn resampled_rate(c: &[(usize, usize)], rng: &mut impl Rng) -> f64 {
    let (mut s, mut n) = (0, 0);
    for _ in 0..c.len() {
        let (ds, dn) = c[rng.random_range(0..c.len())];
        s += ds;
        n += dn;
    }
    s as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTest {
    /// ASR(adversarial) − ASR(benign) on the observed data.
    pub observed_difference: f64,
    pub p_value: f64,
    pub resamples: usize,
}

/// Two-sided bootstrap p-value for a nonzero ASR difference. Trials are
/// resampled with replacement within each arm; the p-value is twice the
/// smaller tail of the replicate differences around zero, with the +1
/// correction, capped at 1.
pub fn cluster_bootstrap_p(
    adversarial: &[TrialRecord],
    benign: &[TrialRecord],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapTest> {
    let (a, b) = (clusters(adversarial), clusters(benign));
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "bootstrap needs at least 2 trials with valid frames per arm, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    let rate = |c: &[(usize, usize)]| {
        let (s, n) = c.iter().fold((0, 0), |(s, n), &(ds, dn)| (s + ds, n + dn));
        s as f64 / n as f64
    };
    let observed = rate(&a) - rate(&b);
    let mut rng = RngStream::new(seed, 0).derive(&[tags::BOOTSTRAP, TEST_STREAM]).rng();
    let (mut le, mut ge) = (0usize, 0usize);
    for _ in 0..resamples {
        let d = resampled_rate(&a, &mut rng) - resampled_rate(&b, &mut rng);
        le += (d <= 0.0) as usize;
        ge += (d >= 0.0) as usize;
    }
    let p = (2.0 * (le.min(ge) + 1) as f64 / (resamples + 1) as f64).min(1.0);
    Ok(BootstrapTest { observed_difference: observed, p_value: p, resamples })
}

/// Percentile 95% interval of the pooled ASR under trial resampling.
pub fn bootstrap_ci(trials: &[TrialRecord], resamples: usize, seed: u64) -> Result<[f64; 2]> {
    let c = clusters(trials);
    if c.len() < 2 {
        return Err(Error::InsufficientData(format!("interval needs at least 2 trials with valid frames, got {}", c.len())));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    let arm = trials.first().map_or(0, |t| t.condition as u64);
    let mut rng = RngStream::new(seed, 0).derive(&[tags::BOOTSTRAP, CI_STREAM, arm]).rng();
    let mut reps: Vec<f64> = (0..resamples).map(|_| resampled_rate(&c, &mut rng)).collect();
    reps.sort_by(f64::total_cmp);
    let at = |q: f64| reps[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok([at(0.025), at(0.975)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testutil::*;
    use crate::scenario::Condition::*;

    #[test]
    fn identical_arms() {
        let arm: Vec<_> = (0..10).map(|i| trial(i, &bits(&[1, 0, i as u8 % 2, 1, 0, 1, 1, 0]), Adversarial)).collect();
        let t = cluster_bootstrap_p(&arm, &arm, DEFAULT_RESAMPLES, 7).unwrap();
        assert_eq!(t.observed_difference, 0.0);
        assert!(t.p_value >= 0.8, "{}", t.p_value);
    }

    #[test]
    fn separated_arms() {
        let a: Vec<_> = (0..10).map(|i| trial(i, &[true; 8], Adversarial)).collect();
        let b: Vec<_> = (0..10).map(|i| trial(i, &[false; 8], Benign)).collect();
        let t = cluster_bootstrap_p(&a, &b, DEFAULT_RESAMPLES, 7).unwrap();
        assert!(t.p_value <= 0.001, "{}", t.p_value);
        assert_eq!(t.p_value, 2.0 / 2001.0);
    }

    #[test]
    fn seeded() {
        let a: Vec<_> = (0..5).map(|i| trial(i, &bits(&[1, 0, 1, i as u8 % 2]), Adversarial)).collect();
        let b: Vec<_> = (0..5).map(|i| trial(i, &bits(&[0, 0, 1, 0, i as u8 % 2]), Benign)).collect();
        assert_eq!(cluster_bootstrap_p(&a, &b, 500, 3).unwrap(), cluster_bootstrap_p(&a, &b, 500, 3).unwrap());
        assert_eq!(bootstrap_ci(&a, 500, 3).unwrap(), bootstrap_ci(&a, 500, 3).unwrap());
    }

    #[test]
    fn too_few_trials() {
        let a = [trial(0, &[true], Adversarial)];
        let b: Vec<_> = (0..3).map(|i| trial(i, &[false], Benign)).collect();
        assert!(matches!(cluster_bootstrap_p(&a, &b, 100, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ci_brackets_rate() {
        let a: Vec<_> = (0..10).map(|i| trial(i, &bits(&[1, (i % 3 == 0) as u8, 1, 0]), Adversarial)).collect();
        let [lo, hi] = bootstrap_ci(&a, 2000, 1).unwrap();
        let r = crate::metrics::asr(&a).unwrap();
        assert!(lo <= r && r <= hi && lo < hi);
    }
}
