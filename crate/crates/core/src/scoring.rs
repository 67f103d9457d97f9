//! Per-user scores used to rank RQ adjustments and to compare serving
//! policies.
//!
//! The FPS score is `max(0, 1 + log10(fps / fps_upper))`, capped at 1. With a
//! 120 FPS upper bound it reaches zero at 12 FPS, so playable frame rates
//! between 30 and 120 stay distinguishable.

use serde::{Deserialize, Serialize};

use crate::quality::{QpLevel, QualityError, QualityPredictor, RenderQuality};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("fps and fps_upper must be positive (got {fps}, {fps_upper})")]
    NonPositiveFps { fps: f64, fps_upper: f64 },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("visual quality {0} outside [0, 100]")]
    VqOutOfRange(f64),
    #[error("predictor has an empty normalization range (vq_max == vq_min)")]
    DegeneratePredictor,
    #[error("{from} -> {to} is not a single-level RQ change")]
    NotAdjacent { from: RenderQuality, to: RenderQuality },
    #[error("winning rate needs total > 0 and wins + draws <= total (got {wins}, {draws}, {total})")]
    InvalidTally { wins: u64, draws: u64, total: u64 },
    #[error(transparent)]
    Quality(#[from] QualityError),
}

/// Weight of the visual-quality term; `1 - alpha` goes to the FPS term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScoreWeights {
    alpha: f64,
}

impl ScoreWeights {
    pub fn new(alpha: f64) -> Result<ScoreWeights, ScoreError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ScoreError::AlphaOutOfRange(alpha));
        }
        Ok(ScoreWeights { alpha })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { alpha: 0.5 }
    }
}

impl TryFrom<f64> for ScoreWeights {
    type Error = ScoreError;

    fn try_from(alpha: f64) -> Result<Self, Self::Error> {
        ScoreWeights::new(alpha)
    }
}

impl From<ScoreWeights> for f64 {
    fn from(w: ScoreWeights) -> f64 {
        w.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub fps_score: f64,
    pub vq_score: f64,
    pub total: f64,
}

pub fn fps_score(fps: f64, fps_upper: f64) -> Result<f64, ScoreError> {
    if !(fps > 0.0 && fps_upper > 0.0) {
        return Err(ScoreError::NonPositiveFps { fps, fps_upper });
    }
    Ok((1.0 + (fps / fps_upper).log10()).clamp(0.0, 1.0))
}

/// Normalized magnitude of the predicted quality change from moving
/// `rq_current` to `rq_target` under `qp`.
pub fn vq_score(
    predictor: &QualityPredictor,
    rq_current: RenderQuality,
    rq_target: RenderQuality,
    qp: QpLevel,
) -> Result<f64, ScoreError> {
    if rq_current != rq_target && !rq_current.is_adjacent(rq_target) {
        return Err(ScoreError::NotAdjacent {
            from: rq_current,
            to: rq_target,
        });
    }
    let range = predictor.vq_max() - predictor.vq_min();
    if range.abs() <= f64::EPSILON {
        return Err(ScoreError::DegeneratePredictor);
    }
    if rq_current == rq_target {
        return Ok(0.0);
    }
    let delta = predictor.predict_vq(rq_target, qp)? - predictor.predict_vq(rq_current, qp)?;
    Ok((delta.abs() / range).clamp(0.0, 1.0))
}

#[allow(clippy::too_many_arguments)]
pub fn efficiency_score(
    weights: ScoreWeights,
    fps: f64,
    fps_upper: f64,
    predictor: &QualityPredictor,
    rq_current: RenderQuality,
    rq_target: RenderQuality,
    qp: QpLevel,
) -> Result<ScoreBreakdown, ScoreError> {
    let fps_score = fps_score(fps, fps_upper)?;
    let vq_score = vq_score(predictor, rq_current, rq_target, qp)?;
    let a = weights.alpha();
    Ok(ScoreBreakdown {
        fps_score,
        vq_score,
        total: a * vq_score + (1.0 - a) * fps_score,
    })
}

/// FPS score times predicted visual quality.
pub fn service_quality_score(fps: f64, fps_upper: f64, vq: f64) -> Result<f64, ScoreError> {
    if !(0.0..=100.0).contains(&vq) {
        return Err(ScoreError::VqOutOfRange(vq));
    }
    Ok(fps_score(fps, fps_upper)? * vq)
}

pub fn winning_rate(wins: u64, draws: u64, total: u64) -> Result<f64, ScoreError> {
    if total == 0 || wins + draws > total {
        return Err(ScoreError::InvalidTally { wins, draws, total });
    }
    Ok((wins as f64 + 0.5 * draws as f64) / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-5;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < TOL
    }

    #[test]
    fn fps_score_examples() {
        assert_eq!(fps_score(120.0, 120.0).unwrap(), 1.0);
        assert!(fps_score(12.0, 120.0).unwrap().abs() < 1e-15);
        assert!(close(fps_score(30.0, 120.0).unwrap(), 0.39794));
        assert_eq!(fps_score(150.0, 120.0).unwrap(), 1.0);
        assert_eq!(fps_score(5.0, 120.0).unwrap(), 0.0);
        assert!(fps_score(0.0, 120.0).is_err());
        assert!(fps_score(30.0, -1.0).is_err());
        assert!(fps_score(f64::NAN, 120.0).is_err());
    }

    #[test]
    fn vq_score_examples() {
        let p = QualityPredictor::default();
        use RenderQuality::*;
        // 14.41 / 64.73
        assert!(close(vq_score(&p, Medium, High, QpLevel::GOOD).unwrap(), 0.222617));
        assert!(close(vq_score(&p, VeryHigh, High, QpLevel::POOR).unwrap(), 0.03507));
        assert_eq!(vq_score(&p, High, High, QpLevel::FAIR).unwrap(), 0.0);
        assert!(matches!(
            vq_score(&p, Low, High, QpLevel::FAIR),
            Err(ScoreError::NotAdjacent { .. })
        ));
    }

    #[test]
    fn degenerate_predictor() {
        let flat = crate::quality::train_tree_predictor(
            &[crate::quality::QualitySample::new(RenderQuality::Low, QpLevel::GOOD, 50.0, "s", "l").unwrap()],
            2,
        )
        .unwrap();
        assert!(matches!(
            vq_score(&flat, RenderQuality::Low, RenderQuality::Low, QpLevel::GOOD),
            Err(ScoreError::DegeneratePredictor)
        ));
    }

    #[test]
    fn efficiency_examples() {
        let p = QualityPredictor::default();
        use RenderQuality::*;
        let half = ScoreWeights::new(0.5).unwrap();
        let b = efficiency_score(half, 120.0, 120.0, &p, Medium, High, QpLevel::GOOD).unwrap();
        assert!(close(b.total, 0.611309));

        let zero = ScoreWeights::new(0.0).unwrap();
        let b = efficiency_score(zero, 40.0, 120.0, &p, Medium, High, QpLevel::FAIR).unwrap();
        assert_eq!(b.total, b.fps_score);
        let one = ScoreWeights::new(1.0).unwrap();
        let b = efficiency_score(one, 40.0, 120.0, &p, Medium, High, QpLevel::FAIR).unwrap();
        assert_eq!(b.total, b.vq_score);

        assert!(ScoreWeights::new(1.5).is_err());
        assert!(ScoreWeights::new(-0.1).is_err());
    }

    #[test]
    fn service_quality_examples() {
        let s = service_quality_score(30.88, 120.0, 81.71).unwrap();
        // 0.410496 * 81.71
        assert!((s - 33.5416).abs() < 1e-3);
        assert!(close(service_quality_score(120.0, 120.0, 51.01).unwrap(), 51.01));
        assert_eq!(service_quality_score(12.0, 120.0, 99.0).unwrap(), 0.0);
        assert!(service_quality_score(60.0, 120.0, 101.0).is_err());
    }

    #[test]
    fn winning_rate_examples() {
        assert_eq!(winning_rate(30, 0, 30).unwrap(), 1.0);
        assert_eq!(winning_rate(10, 10, 30).unwrap(), 0.5);
        assert_eq!(winning_rate(0, 0, 30).unwrap(), 0.0);
        assert!(winning_rate(1, 0, 0).is_err());
        assert!(winning_rate(20, 11, 30).is_err());
    }

    fn arb_rq() -> impl Strategy<Value = RenderQuality> {
        (0usize..4).prop_map(|i| RenderQuality::from_ordinal(i).unwrap())
    }

    fn arb_qp() -> impl Strategy<Value = QpLevel> {
        prop::sample::select(QpLevel::PRESETS.to_vec())
    }

    proptest! {
        #[test]
        fn fps_score_monotone(a in 0.01f64..500.0, b in 0.01f64..500.0, upper in 1.0f64..240.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(fps_score(lo, upper).unwrap() <= fps_score(hi, upper).unwrap());
            if hi >= upper {
                prop_assert_eq!(fps_score(hi, upper).unwrap(), 1.0);
            }
            if lo <= upper / 10.0 {
                prop_assert_eq!(fps_score(lo, upper).unwrap(), 0.0);
            }
        }

        #[test]
        fn fps_score_scale_invariant(fps in 0.1f64..300.0, upper in 1.0f64..240.0, k in 0.01f64..100.0) {
            let a = fps_score(fps, upper).unwrap();
            let b = fps_score(k * fps, k * upper).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn vq_score_symmetric(r in 0usize..3, qp in arb_qp()) {
            let p = QualityPredictor::default();
            let a = RenderQuality::from_ordinal(r).unwrap();
            let b = a.next_up().unwrap();
            prop_assert_eq!(vq_score(&p, a, b, qp).unwrap(), vq_score(&p, b, a, qp).unwrap());
        }

        #[test]
        fn efficiency_total_in_unit_interval(
            alpha in 0.0f64..=1.0,
            fps in 0.1f64..400.0,
            cur in arb_rq(),
            up in any::<bool>(),
            qp in arb_qp(),
        ) {
            let p = QualityPredictor::default();
            let target = if up { cur.next_up() } else { cur.next_down() }.unwrap_or(cur);
            let b = efficiency_score(ScoreWeights::new(alpha).unwrap(), fps, 120.0, &p, cur, target, qp).unwrap();
            prop_assert!((0.0..=1.0).contains(&b.total));
            prop_assert!((b.total - (alpha * b.vq_score + (1.0 - alpha) * b.fps_score)).abs() < 1e-12);
        }
    }
}
