//! Serving policies compared by the harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::optimizer::{optimize_round, ClientTable, Direction, OptimizerConfig, OptimizerError, RqDecision};
use crate::quality::{QualityPredictor, RenderQuality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Adrenaline,
    HighestOnly,
    LowestOnly,
    Djay,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Adrenaline,
        PolicyKind::HighestOnly,
        PolicyKind::LowestOnly,
        PolicyKind::Djay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Adrenaline => "adrenaline",
            PolicyKind::HighestOnly => "highest_only",
            PolicyKind::LowestOnly => "lowest_only",
            PolicyKind::Djay => "djay",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown policy `{0}` (expected adrenaline, highest_only, lowest_only or djay)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == key)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Score-driven single-client adjustment with backoff.
    Adrenaline {
        config: OptimizerConfig,
        predictor: QualityPredictor,
    },
    /// Every client pinned at the highest RQ.
    HighestOnly,
    /// Every client pinned at the lowest RQ.
    LowestOnly,
    /// Adjusts every client independently each round from its FPS alone:
    /// one level down below the threshold, one level up at or above
    /// `threshold + fps_buffer`. No backoff, no network awareness.
    DjayLike { fps_buffer: f64 },
}

impl Policy {
    pub fn from_kind(kind: PolicyKind, config: &OptimizerConfig, predictor: &QualityPredictor) -> Policy {
        match kind {
            PolicyKind::Adrenaline => Policy::Adrenaline {
                config: config.clone(),
                predictor: predictor.clone(),
            },
            PolicyKind::HighestOnly => Policy::HighestOnly,
            PolicyKind::LowestOnly => Policy::LowestOnly,
            PolicyKind::Djay => Policy::DjayLike {
                fps_buffer: config.fps_buffer,
            },
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Adrenaline { .. } => PolicyKind::Adrenaline,
            Policy::HighestOnly => PolicyKind::HighestOnly,
            Policy::LowestOnly => PolicyKind::LowestOnly,
            Policy::DjayLike { .. } => PolicyKind::Djay,
        }
    }

    /// RQ a client starts at when it is admitted.
    pub fn initial_rq(&self) -> RenderQuality {
        match self {
            Policy::Adrenaline { config, .. } => config.initial_rq,
            Policy::HighestOnly => RenderQuality::MAX,
            Policy::LowestOnly | Policy::DjayLike { .. } => RenderQuality::MIN,
        }
    }

    /// Runs one round, applying every decision to `table` before returning it.
    pub fn on_round(&self, table: &mut ClientTable, round: u64) -> Result<Vec<RqDecision>, OptimizerError> {
        match self {
            Policy::Adrenaline { config, predictor } => {
                Ok(optimize_round(table, round, predictor, config)?.into_iter().collect())
            }
            Policy::HighestOnly | Policy::LowestOnly => Ok(Vec::new()),
            Policy::DjayLike { fps_buffer } => {
                let moves: Vec<_> = table
                    .iter()
                    .filter(|r| r.fps_reported)
                    .filter_map(|r| {
                        if r.fps_current < r.fps_thresh && r.rq_current > RenderQuality::MIN {
                            Some((r.client_id.clone(), Direction::Demote))
                        } else if r.fps_current >= r.fps_thresh + fps_buffer && r.rq_current < RenderQuality::MAX {
                            Some((r.client_id.clone(), Direction::Promote))
                        } else {
                            None
                        }
                    })
                    .collect();
                let mut out = Vec::with_capacity(moves.len());
                for (id, direction) in moves {
                    if let Some(adj) = table.adjust(&id, direction, round)? {
                        out.push(RqDecision {
                            client_id: id,
                            direction,
                            from_rq: adj.from_rq,
                            to_rq: adj.to_rq,
                            round,
                            score_snapshot: Vec::new(),
                        });
                    }
                }
                Ok(out)
            }
        }
    }
}
