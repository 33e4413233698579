//! Attack objective: semantic loss on the oracle's reply, averaged over EoT
//! samples, plus a total-variation smoothness penalty on the patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::image::{ImageBuffer, PixelRect};
use crate::nes::{EvalIndex, Objective};
use crate::oracle::{DrivingOracle, EmbeddingVector, Query, SceneContext, TextEmbedder};
use crate::patch::{Patch, MAX_INTENSITY};
use crate::rng::{tags, RngStream};
use crate::transforms::{apply_transform, composite_patch, sample_transform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub target_response: String,
    #[serde(default = "defaults::lambda_tv")]
    pub lambda_tv: f64,
    #[serde(default = "defaults::k_eot")]
    pub k_eot: usize,
    #[serde(default = "defaults::embed_dim")]
    pub embed_dim: usize,
}

pub(crate) mod defaults {
    pub fn lambda_tv() -> f64 {
        0.001
    }
    pub fn k_eot() -> usize {
        5
    }
    pub fn embed_dim() -> usize {
        crate::oracle::DEFAULT_EMBED_DIM
    }
}

impl ObjectiveConfig {
    pub fn new(target_response: impl Into<String>) -> Self {
        Self {
            target_response: target_response.into(),
            lambda_tv: defaults::lambda_tv(),
            k_eot: defaults::k_eot(),
            embed_dim: defaults::embed_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0) || !self.lambda_tv.is_finite() {
            return Err(Error::config("objective.lambda_tv", "must be a finite value >= 0"));
        }
        if self.k_eot == 0 {
            return Err(Error::config("objective.k_eot", "must be >= 1"));
        }
        if self.embed_dim < 8 {
            return Err(Error::config("objective.embed_dim", "must be >= 8"));
        }
        Ok(())
    }
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`; 0 when either side is zero.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidArgument(format!("embedding dims differ: {} vs {}", u.dim(), v.dim())));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.components().iter().zip(v.components()).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 − cos(embed(generated), embed(target))`, in `[0, 2]`.
pub fn semantic_loss(generated: &str, target: &str, embedder: &dyn TextEmbedder) -> Result<f64, OracleError> {
    let g = embedder.embed(generated)?;
    let t = embedder.embed(target)?;
    loss_against(&g, &t)
}

fn loss_against(generated: &EmbeddingVector, target: &EmbeddingVector) -> Result<f64, OracleError> {
    let cos = cosine_similarity(generated, target).map_err(|e| OracleError::Protocol(e.to_string()))?;
    Ok(1.0 - cos)
}

/// Isotropic total variation on intensities normalized to `[0, 1]`: forward
/// differences down and right, zero past the last row/column, summed over
/// pixels and channels.
pub fn tv_norm(p: &Patch) -> f64 {
    let w = p.width() as usize;
    let h = p.height() as usize;
    let v = p.values();
    let scale = 1.0 / MAX_INTENSITY;
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * 3;
            for c in 0..3 {
                let here = v[o + c];
                let down = if y + 1 < h { v[o + w * 3 + c] - here } else { 0.0 };
                let right = if x + 1 < w { v[o + 3 + c] - here } else { 0.0 };
                total += ((down * scale).powi(2) + (right * scale).powi(2)).sqrt();
            }
        }
    }
    total
}

/// A rendered frame without the patch, where the patch goes, and what the
/// mock oracle needs to know about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub image: ImageBuffer,
    /// Unclipped projected patch rectangle.
    pub patch_rect: PixelRect,
    pub context: SceneContext,
    pub prompt: String,
}

/// Identifies one EoT query for error reporting and request ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryTag {
    pub iteration: usize,
    pub candidate: usize,
}

/// Mean semantic loss over `k_eot` transformed composites plus
/// `lambda_tv · tv_norm(p)`. Sample `k` uses `rng.derive(&[k])`, and frame
/// `k mod scenes.len()`.
#[allow(clippy::too_many_arguments)]
pub fn candidate_objective(
    p: &Patch,
    scenes: &[SceneFrame],
    cfg: &ObjectiveConfig,
    oracle: &dyn DrivingOracle,
    embedder: &dyn TextEmbedder,
    target: &EmbeddingVector,
    rng: &RngStream,
    tag: QueryTag,
) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("objective needs at least one scene frame".into()));
    }
    let wrap = |sample: usize, source: OracleError| Error::Objective {
        iteration: tag.iteration,
        candidate: tag.candidate,
        sample,
        source,
    };
    let composites: Vec<ImageBuffer> =
        scenes.iter().map(|s| composite_patch(&s.image, p, s.patch_rect).image).collect();
    let mut sum = 0.0;
    for k in 0..cfg.k_eot {
        let scene = &scenes[k % scenes.len()];
        let t = sample_transform(&rng.derive(&[k as u64]));
        let view = apply_transform(&composites[k % scenes.len()], &t);
        let query = Query {
            prompt: &scene.prompt,
            context: &scene.context,
            request_id: format!("it{}-c{}-k{}", tag.iteration, tag.candidate, k),
        };
        let resp = oracle.describe(&view, &query).map_err(|e| wrap(k, e))?;
        let generated = embedder.embed(&resp.raw_text).map_err(|e| wrap(k, e))?;
        sum += loss_against(&generated, target).map_err(|e| wrap(k, e))?;
    }
    let eot_mean = sum / cfg.k_eot as f64;
    Ok(eot_mean + cfg.lambda_tv * tv_norm(p))
}

/// [`candidate_objective`] packaged for the NES optimizer.
///
/// Both members of an antithetic pair see the same EoT draws (the stream is
/// keyed by iteration and direction, not by sign).
pub struct PatchObjective<'a> {
    pub scenes: Vec<SceneFrame>,
    pub cfg: ObjectiveConfig,
    pub oracle: &'a dyn DrivingOracle,
    pub embedder: &'a dyn TextEmbedder,
    target: EmbeddingVector,
    eot: RngStream,
}

impl<'a> PatchObjective<'a> {
    pub fn new(
        scenes: Vec<SceneFrame>,
        cfg: ObjectiveConfig,
        oracle: &'a dyn DrivingOracle,
        embedder: &'a dyn TextEmbedder,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if scenes.is_empty() {
            return Err(Error::InvalidArgument("objective needs at least one scene frame".into()));
        }
        let target = embedder.embed(&cfg.target_response)?;
        Ok(Self { scenes, cfg, oracle, embedder, target, eot: RngStream::new(seed, 0).derive(&[tags::EOT]) })
    }

    pub fn eot_stream(&self, iteration: usize, direction: usize) -> RngStream {
        self.eot.derive(&[iteration as u64, direction as u64])
    }

    pub fn evaluate_patch(&self, p: &Patch, iteration: usize, direction: usize) -> Result<f64> {
        candidate_objective(
            p,
            &self.scenes,
            &self.cfg,
            self.oracle,
            self.embedder,
            &self.target,
            &self.eot_stream(iteration, direction),
            QueryTag { iteration, candidate: direction },
        )
    }
}

impl Objective<Patch> for PatchObjective<'_> {
    fn evaluate(&self, point: &Patch, at: EvalIndex) -> Result<f64> {
        self.evaluate_patch(point, at.iteration, at.direction)
    }

    fn queries_per_eval(&self) -> u64 {
        self.cfg.k_eot as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{HashEmbedder, MockOracle, OracleResponse};
    use proptest::prelude::*;

    fn unit(c: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::normalized(c).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = unit(vec![1.0, 0.0, 0.0]);
        let v = unit(vec![0.0, 1.0, 0.0]);
        let neg = unit(vec![-1.0, 0.0, 0.0]);
        assert_eq!(cosine_similarity(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&u, &v).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&u, &neg).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&u, &EmbeddingVector::zero(3)).unwrap(), 0.0);
        assert!(matches!(cosine_similarity(&u, &EmbeddingVector::zero(2)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn semantic_loss_examples() {
        let e = HashEmbedder::default();
        let t = "The driver should turn right to exit the highway";
        assert_eq!(semantic_loss(t, t, &e).unwrap(), 0.0);
        assert_eq!(semantic_loss("", t, &e).unwrap(), 1.0);
        assert_eq!(semantic_loss(t, "", &e).unwrap(), 1.0);
    }

    #[test]
    fn tv_examples() {
        // single-channel [[0,1],[0,0]] in normalized units, other channels constant
        let vals = vec![0.0, 9.0, 9.0, 255.0, 9.0, 9.0, 0.0, 9.0, 9.0, 0.0, 9.0, 9.0];
        let p = Patch::clipped(2, 2, vals, 1.0, 1.0).unwrap();
        assert_eq!(tv_norm(&p), 2.0);
        let flat = Patch::filled(7, 5, [12.0, 200.0, 3.0], 1.0, 1.0).unwrap();
        assert_eq!(tv_norm(&flat), 0.0);
    }

    fn checkerboard(n: u32) -> Patch {
        let mut v = Vec::new();
        for y in 0..n {
            for x in 0..n {
                let c = if (x + y) % 2 == 0 { 255.0 } else { 0.0 };
                v.extend([c, c, c]);
            }
        }
        Patch::clipped(n, n, v, 1.0, 1.0).unwrap()
    }

    fn box_blur(p: &Patch) -> Patch {
        let (w, h) = (p.width() as i64, p.height() as i64);
        let mut out = Vec::with_capacity(p.values().len());
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w && yy < h {
                            s += p.value(xx as u32, yy as u32, c);
                            n += 1.0;
                        }
                    }
                    out.push(s / n);
                }
            }
        }
        p.with_values(out)
    }

    #[test]
    fn blur_reduces_checkerboard_tv() {
        let c = checkerboard(8);
        let b = box_blur(&c);
        assert!(tv_norm(&c) > tv_norm(&b));
        assert!(tv_norm(&b) > tv_norm(&box_blur(&b)));
    }

    fn scene(roi: PixelRect) -> SceneFrame {
        SceneFrame {
            image: ImageBuffer::filled(40, 30, [128, 128, 128]).unwrap(),
            patch_rect: roi,
            context: SceneContext {
                scenario: "test".into(),
                patch_roi: roi.clip_to(40, 30),
                critical_visible: true,
                critical_description: "A pedestrian is crossing the road. The driver should stop.".into(),
                target_response: "The driver should accelerate and continue forward because the road is clear".into(),
            },
            prompt: "What should the driver do?".into(),
        }
    }

    #[test]
    fn red_patch_objective_is_tv_only() {
        let cfg = ObjectiveConfig::new("The driver should accelerate and continue forward because the road is clear");
        let e = HashEmbedder::default();
        let red = Patch::filled(6, 6, [255.0, 0.0, 0.0], 1.0, 1.0).unwrap();
        let obj = PatchObjective::new(vec![scene(PixelRect::new(10, 8, 20, 14))], cfg.clone(), &MockOracle, &e, 3)
            .unwrap();
        let j = obj.evaluate_patch(&red, 0, 0).unwrap();
        assert_eq!(j, cfg.lambda_tv * tv_norm(&red));
        assert_eq!(j, 0.0);
        let noisy = crate::patch::new_random_patch(1, 6, 6, 1.0, 1.0).unwrap();
        let noisy_red = noisy.with_values(
            noisy.values().chunks(3).flat_map(|p| [255.0, p[1] * 0.1, p[2] * 0.1]).collect(),
        );
        let j = obj.evaluate_patch(&noisy_red, 0, 0).unwrap();
        assert_eq!(j, cfg.lambda_tv * tv_norm(&noisy_red));
        assert!(j > 0.0);
    }

    struct Echo(String);
    impl DrivingOracle for Echo {
        fn describe(&self, _: &ImageBuffer, q: &Query<'_>) -> Result<OracleResponse, OracleError> {
            Ok(OracleResponse::new(self.0.clone(), 0.0, q.request_id.clone()))
        }
    }

    struct Failing;
    impl DrivingOracle for Failing {
        fn describe(&self, _: &ImageBuffer, _: &Query<'_>) -> Result<OracleResponse, OracleError> {
            Err(OracleError::Retryable("down".into()))
        }
    }

    #[test]
    fn target_echo_without_tv_is_zero() {
        let mut cfg = ObjectiveConfig::new("The driver should turn right to exit the highway");
        cfg.lambda_tv = 0.0;
        let e = HashEmbedder::default();
        let oracle = Echo(cfg.target_response.clone());
        let p = crate::patch::new_random_patch(4, 8, 8, 1.0, 1.0).unwrap();
        let obj = PatchObjective::new(vec![scene(PixelRect::new(5, 5, 10, 10))], cfg, &oracle, &e, 0).unwrap();
        assert_eq!(obj.evaluate_patch(&p, 3, 1).unwrap(), 0.0);
    }

    #[test]
    fn gray_patch_objective_replays_exactly() {
        let cfg = ObjectiveConfig::new("The driver should accelerate and continue forward because the road is clear");
        let e = HashEmbedder::default();
        let gray = Patch::filled(6, 6, [128.0; 3], 1.0, 1.0).unwrap();
        let sc = scene(PixelRect::new(10, 8, 20, 14));
        let obj = PatchObjective::new(vec![sc.clone()], cfg.clone(), &MockOracle, &e, 9).unwrap();
        let a = obj.evaluate_patch(&gray, 2, 4).unwrap();
        let b = obj.evaluate_patch(&gray, 2, 4).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let expected = semantic_loss(&sc.context.critical_description, &cfg.target_response, &e).unwrap();
        assert_eq!(a, expected);
        assert!(a > 0.0 && a < 2.0);
    }

    #[test]
    fn oracle_failure_is_annotated() {
        let cfg = ObjectiveConfig::new("x y z");
        let e = HashEmbedder::default();
        let p = Patch::filled(2, 2, [0.0; 3], 1.0, 1.0).unwrap();
        let obj = PatchObjective::new(vec![scene(PixelRect::new(0, 0, 4, 4))], cfg, &Failing, &e, 0).unwrap();
        match obj.evaluate_patch(&p, 7, 3) {
            Err(Error::Objective { iteration: 7, candidate: 3, sample: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn objective_monotone_in_lambda() {
        let e = HashEmbedder::default();
        let p = crate::patch::new_random_patch(5, 6, 6, 1.0, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [1.0, 0.1, 0.001, 0.0] {
            let mut cfg = ObjectiveConfig::new("The driver should accelerate and continue forward because the road is clear");
            cfg.lambda_tv = lambda;
            let obj = PatchObjective::new(vec![scene(PixelRect::new(10, 8, 20, 14))], cfg, &MockOracle, &e, 9).unwrap();
            let j = obj.evaluate_patch(&p, 0, 0).unwrap();
            assert!(j <= last);
            last = j;
        }
    }

    proptest! {
        #[test]
        fn tv_zero_iff_constant_per_channel(vals in proptest::collection::vec(0.0f64..255.0, 3), w in 1u32..6, h in 1u32..6, bump in 1.0f64..50.0, at in 0usize..36) {
            let p = Patch::filled(w, h, [vals[0], vals[1], vals[2]], 1.0, 1.0).unwrap();
            prop_assert_eq!(tv_norm(&p), 0.0);
            let n = p.values().len();
            if n > 3 {
                let mut v = p.values().to_vec();
                let i = at % n;
                v[i] = if v[i] + bump <= 255.0 { v[i] + bump } else { v[i] - bump };
                prop_assert!(tv_norm(&p.with_values(v)) > 0.0);
            }
        }
    }
}
