//! Library results checked against independent reimplementations and
//! brute-force enumerations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadpatch_core::metrics::{asr, asr_by_distance, bleu4, detection_degradation, persistence, DEFAULT_BIN_EDGES};
use roadpatch_core::objective::{cosine_similarity, semantic_loss, tv_norm};
use roadpatch_core::oracle::{hash_embed, HashEmbedder, OracleResponse, TextEmbedder};
use roadpatch_core::patch::Patch;
use roadpatch_core::scenario::{Condition, FrameRecord, TrialRecord};

// ---- independent hash embedder -------------------------------------------

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn ref_embed(s: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for w in words(s) {
        let h = fnv(&w);
        v[(h % dim as u64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn ref_cos(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>().sqrt(), b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
}

#[test]
fn hash_embed_matches_reference() {
    let a = "pedestrian crossing road";
    let b = "clear empty highway";
    let (ea, eb) = (hash_embed(a, 256).unwrap(), hash_embed(b, 256).unwrap());
    assert_eq!(ea.components(), &ref_embed(a, 256)[..]);
    assert_eq!(eb.components(), &ref_embed(b, 256)[..]);
    let got = cosine_similarity(&ea, &eb).unwrap();
    assert!((got - ref_cos(&ref_embed(a, 256), &ref_embed(b, 256))).abs() < 1e-15);
}

#[test]
fn semantic_loss_matches_reference() {
    let e = HashEmbedder::default();
    let g = "A pedestrian is crossing the road. The driver should stop.";
    let t = "The driver should accelerate and continue forward because the road is clear";
    let want = 1.0 - ref_cos(&ref_embed(g, 256), &ref_embed(t, 256));
    assert!((semantic_loss(g, t, &e).unwrap() - want).abs() < 1e-15);
    assert_eq!(semantic_loss("", t, &e).unwrap(), 1.0);
}

const VOCAB: &[&str] = &[
    "the", "driver", "should", "stop", "a", "pedestrian", "is", "crossing", "road", "clear", "turn", "right", "left",
    "barrier", "concrete", "wall", "maintain", "speed", "accelerate", "car", "ahead", "lane", "exit", "highway",
];

fn random_sentence(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

#[test]
fn hash_embed_matches_reference_on_random_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = HashEmbedder::new(64).unwrap();
    for _ in 0..500 {
        let s = random_sentence(&mut rng, 0, 12);
        let got = e.embed(&s).unwrap();
        let want = ref_embed(&s, 64);
        for (g, w) in got.components().iter().zip(&want) {
            assert!((g - w).abs() < 1e-15, "{s:?}");
        }
    }
}

// ---- independent BLEU ---------------------------------------------------------

fn ref_bleu(c: &str, r: &str) -> f64 {
    let (c, r) = (words(c), words(r));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let orders = c.len().min(4);
    let mut logs = 0.0;
    for n in 1..=orders {
        let cg: Vec<&[String]> = c.windows(n).collect();
        let mut rg: Vec<Option<&[String]>> = r.windows(n).map(Some).collect();
        // greedy matching consumes reference n-grams, equal to count clipping
        let mut hits = 0;
        for g in &cg {
            if let Some(slot) = rg.iter_mut().find(|s| s.is_some_and(|x| x == *g)) {
                *slot = None;
                hits += 1;
            }
        }
        let p = if hits == 0 { 1e-9 } else { hits as f64 / cg.len() as f64 };
        logs += p.ln() / orders as f64;
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    bp * logs.exp()
}

#[test]
fn bleu_matches_reference() {
    let fixed = bleu4("the cat sat on the mat", "the cat is on the mat");
    assert!((fixed - ref_bleu("the cat sat on the mat", "the cat is on the mat")).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let c = random_sentence(&mut rng, 0, 14);
        let r = random_sentence(&mut rng, 0, 14);
        let (got, want) = (bleu4(&c, &r), ref_bleu(&c, &r));
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300).max(1.0), "{c:?} | {r:?}: {got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
}

// ---- trial metrics by brute force ---------------------------------------------

fn trial(id: usize, flags: &[Option<bool>], distances: &[f64]) -> TrialRecord {
    let frames = flags
        .iter()
        .zip(distances)
        .enumerate()
        .map(|(i, (f, &d))| FrameRecord {
            index: i,
            distance: d,
            condition: Condition::Adversarial,
            response: f.map(|s| {
                OracleResponse::new(
                    if s { "turn right now" } else { "a pedestrian is crossing, stop" }.into(),
                    0.0,
                    String::new(),
                )
            }),
            error: f.is_none().then(|| "timeout".into()),
            success: f.unwrap_or(false),
            critical_detected: f == &Some(false),
        })
        .collect();
    TrialRecord { trial_id: id, scenario_name: "t".into(), condition: Condition::Adversarial, frames }
}

fn random_trials(rng: &mut impl Rng) -> Vec<TrialRecord> {
    let n = rng.random_range(1..=6);
    (0..n)
        .map(|id| {
            let f = rng.random_range(1..=12);
            let flags: Vec<Option<bool>> = (0..f)
                .map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_bool(0.5)) })
                .collect();
            let mut d: f64 = rng.random_range(10.0..60.0);
            let distances: Vec<f64> = (0..f)
                .map(|_| {
                    let here = d;
                    d = (d - rng.random_range(0.5..6.0)).max(0.0);
                    here
                })
                .collect();
            trial(id, &flags, &distances)
        })
        .collect()
}

fn brute_asr(trials: &[TrialRecord]) -> Option<(usize, usize)> {
    let mut s = 0;
    let mut n = 0;
    for t in trials {
        for f in &t.frames {
            if f.response.is_some() {
                n += 1;
                if f.success {
                    s += 1;
                }
            }
        }
    }
    (n > 0).then_some((s, n))
}

/// Longest all-success window over the valid frames, by enumerating every window.
fn brute_run(t: &TrialRecord) -> usize {
    let flags: Vec<bool> = t.frames.iter().filter(|f| f.response.is_some()).map(|f| f.success).collect();
    let mut best = 0;
    for i in 0..flags.len() {
        for j in i..=flags.len() {
            if flags[i..j].iter().all(|&b| b) {
                best = best.max(j - i);
            }
        }
    }
    best
}

#[test]
fn asr_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let t = random_trials(&mut rng);
        match brute_asr(&t) {
            Some((s, n)) => assert_eq!(asr(&t).unwrap(), s as f64 / n as f64),
            None => assert!(asr(&t).is_err()),
        }
    }
}

#[test]
fn persistence_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let t = random_trials(&mut rng);
        let (mean, runs) = persistence(&t).unwrap();
        let want: Vec<usize> = t.iter().map(brute_run).collect();
        assert_eq!(runs, want);
        assert_eq!(mean, want.iter().sum::<usize>() as f64 / want.len() as f64);
        let max_frames = t.iter().map(|x| x.frames.len()).max().unwrap();
        assert!(mean <= max_frames as f64);
    }
}

#[test]
fn bins_reproduce_overall_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let t = random_trials(&mut rng);
        let Ok(overall) = asr(&t) else { continue };
        let bins = asr_by_distance(&t, &DEFAULT_BIN_EDGES).unwrap();
        let frames: usize = bins.iter().map(|b| b.frames).sum();
        let weighted = bins.iter().map(|b| b.rate * b.frames as f64).sum::<f64>() / frames as f64;
        assert!((weighted - overall).abs() <= 1e-12);
    }
}

#[test]
fn degradation_of_identical_sets_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kw = vec!["pedestrian".to_string(), "crossing".to_string()];
    for _ in 0..200 {
        let t = random_trials(&mut rng);
        if brute_asr(&t).is_none() {
            continue;
        }
        let pp = detection_degradation(&t, &t, &kw).unwrap();
        assert_eq!(pp, 0.0);
    }
}

// ---- TV ---------------------------------------------------------------------------

#[test]
fn tv_hand_case_and_constants() {
    // [[0,1],[0,0]] in one channel, zeros elsewhere
    let mut v = vec![0.0; 12];
    v[3] = 255.0;
    let p = Patch::clipped(2, 2, v, 1.0, 1.0).unwrap();
    assert_eq!(tv_norm(&p), 2.0);
    for c in [0.0, 17.0, 255.0] {
        assert_eq!(tv_norm(&Patch::filled(9, 7, [c, 255.0 - c, 3.0], 1.0, 1.0).unwrap()), 0.0);
    }
}

#[test]
fn tv_reference_on_random_patches() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..8usize), rng.random_range(1..8usize));
        let v: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.0..255.0)).collect();
        let p = Patch::clipped(w as u32, h as u32, v.clone(), 1.0, 1.0).unwrap();
        let at = |x: usize, y: usize, c: usize| v[(y * w + x) * 3 + c] / 255.0;
        let mut want = 0.0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let dy = if y + 1 < h { at(x, y + 1, c) - at(x, y, c) } else { 0.0 };
                    let dx = if x + 1 < w { at(x + 1, y, c) - at(x, y, c) } else { 0.0 };
                    want += (dx * dx + dy * dy).sqrt();
                }
            }
        }
        assert!((tv_norm(&p) - want).abs() < 1e-9);
    }
}
