//! Client table and the round-based RQ optimizer.
//!
//! Each round moves at most one client by one RQ level. If any client is
//! below its FPS threshold, the demote candidate with the lowest efficiency
//! score loses a level. Otherwise, unless some promote candidate sits within
//! `fps_buffer` of its threshold, the promote candidate with the highest score
//! gains a level. Oscillation between two levels arms an exponential backoff
//! that skips whole rounds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::quality::{QpLevel, QualityPredictor, RenderQuality};
use crate::scoring::{efficiency_score, ScoreBreakdown, ScoreError, ScoreWeights};

/// Number of past adjustments kept per client.
pub const HISTORY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> ClientId {
        ClientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        ClientId(s.to_string())
    }
}

impl From<String> for ClientId {
    fn from(s: String) -> Self {
        ClientId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Promote,
    Demote,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Promote => "promote",
            Direction::Demote => "demote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub round: u64,
    pub direction: Direction,
    pub from_rq: RenderQuality,
    pub to_rq: RenderQuality,
}

impl Adjustment {
    /// True when `self` undoes `prev`: opposite direction between the same two
    /// levels.
    pub fn reverses(&self, prev: &Adjustment) -> bool {
        self.direction != prev.direction && self.from_rq == prev.to_rq && self.to_rq == prev.from_rq
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackoffState {
    pub backoff_count: u32,
    /// Rounds strictly before this one are skipped; 0 means no pending backoff.
    pub backoff_until_round: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub alpha: ScoreWeights,
    pub fps_buffer: f64,
    pub backoff_base: u32,
    pub max_backoff_count: u32,
    /// Seconds between optimization rounds.
    pub round_interval_s: f64,
    pub initial_rq: RenderQuality,
    /// Rounds within which a reversal counts as oscillation.
    pub oscillation_window: u64,
    /// Disables oscillation detection and backoff entirely when false.
    pub backoff: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: ScoreWeights::default(),
            fps_buffer: 5.0,
            backoff_base: 2,
            max_backoff_count: 5,
            round_interval_s: 5.0,
            initial_rq: RenderQuality::MIN,
            oscillation_window: 3,
            backoff: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |what: &str| Err(OptimizerError::InvalidConfig(what.to_string()));
        if !(self.fps_buffer >= 0.0 && self.fps_buffer.is_finite()) {
            return bad("fps_buffer must be a finite value >= 0");
        }
        if self.backoff_base < 2 {
            return bad("backoff_base must be >= 2");
        }
        if self.max_backoff_count < 1 {
            return bad("max_backoff_count must be >= 1");
        }
        if !(self.round_interval_s > 0.0 && self.round_interval_s.is_finite()) {
            return bad("round_interval_s must be positive");
        }
        if self.oscillation_window < 1 {
            return bad("oscillation_window must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("client `{0}` is already registered")]
    DuplicateClient(ClientId),
    #[error("unknown client `{0}`")]
    UnknownClient(ClientId),
    #[error("fps_thresh ({thresh}) must be positive and below fps_upper ({upper})")]
    InvalidThresholds { thresh: f64, upper: f64 },
    #[error("fps must be finite and >= 0 (got {0})")]
    InvalidFps(f64),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: ClientId,
    pub game_id: String,
    pub rq_current: RenderQuality,
    pub fps_current: f64,
    /// False until the first FPS report arrives; such clients are ignored by
    /// the optimizer.
    pub fps_reported: bool,
    pub qp: QpLevel,
    pub fps_thresh: f64,
    pub fps_upper: f64,
    pub adjustment_history: Vec<Adjustment>,
    pub backoff: BackoffState,
}

impl ClientRecord {
    pub fn last_adjustment(&self) -> Option<&Adjustment> {
        self.adjustment_history.last()
    }

    fn push_adjustment(&mut self, adj: Adjustment) {
        if self.adjustment_history.len() == HISTORY_LEN {
            self.adjustment_history.remove(0);
        }
        self.rq_current = adj.to_rq;
        self.adjustment_history.push(adj);
    }
}

/// Serving state of every client, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientTable {
    records: Vec<ClientRecord>,
}

impl ClientTable {
    pub fn new() -> ClientTable {
        ClientTable::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClientRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &ClientId) -> Option<&ClientRecord> {
        self.records.iter().find(|r| &r.client_id == id)
    }

    fn get_mut(&mut self, id: &ClientId) -> Result<&mut ClientRecord, OptimizerError> {
        self.records
            .iter_mut()
            .find(|r| &r.client_id == id)
            .ok_or_else(|| OptimizerError::UnknownClient(id.clone()))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn register(
        &mut self,
        client_id: ClientId,
        game_id: impl Into<String>,
        qp: QpLevel,
        fps_thresh: f64,
        fps_upper: f64,
        initial_rq: RenderQuality,
    ) -> Result<&ClientRecord, OptimizerError> {
        if self.get(&client_id).is_some() {
            return Err(OptimizerError::DuplicateClient(client_id));
        }
        if !(fps_thresh > 0.0 && fps_thresh < fps_upper && fps_upper.is_finite()) {
            return Err(OptimizerError::InvalidThresholds {
                thresh: fps_thresh,
                upper: fps_upper,
            });
        }
        self.records.push(ClientRecord {
            client_id,
            game_id: game_id.into(),
            rq_current: initial_rq,
            fps_current: 0.0,
            fps_reported: false,
            qp,
            fps_thresh,
            fps_upper,
            adjustment_history: Vec::new(),
            backoff: BackoffState::default(),
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// Drops a client, e.g. when its connection goes away.
    pub fn remove(&mut self, id: &ClientId) -> Option<ClientRecord> {
        let at = self.records.iter().position(|r| &r.client_id == id)?;
        Some(self.records.remove(at))
    }

    pub fn report_fps(&mut self, id: &ClientId, fps: f64) -> Result<&ClientRecord, OptimizerError> {
        if !(fps >= 0.0 && fps.is_finite()) {
            return Err(OptimizerError::InvalidFps(fps));
        }
        let rec = self.get_mut(id)?;
        rec.fps_current = fps;
        rec.fps_reported = true;
        Ok(rec)
    }

    pub fn update_qp(&mut self, id: &ClientId, qp: QpLevel) -> Result<&ClientRecord, OptimizerError> {
        let rec = self.get_mut(id)?;
        rec.qp = qp;
        Ok(rec)
    }

    /// First round at which optimization may run again: the latest pending
    /// backoff over all clients.
    pub fn backoff_round(&self) -> u64 {
        self.records
            .iter()
            .map(|r| r.backoff.backoff_until_round)
            .max()
            .unwrap_or(0)
    }

    /// Moves `id` one level in `direction` and records it in its history.
    pub fn adjust(&mut self, id: &ClientId, direction: Direction, round: u64) -> Result<Option<Adjustment>, OptimizerError> {
        let rec = self.get_mut(id)?;
        let from_rq = rec.rq_current;
        let to_rq = match direction {
            Direction::Promote => from_rq.next_up(),
            Direction::Demote => from_rq.next_down(),
        };
        let Some(to_rq) = to_rq else {
            return Ok(None);
        };
        let adj = Adjustment {
            round,
            direction,
            from_rq,
            to_rq,
        };
        rec.push_adjustment(adj);
        Ok(Some(adj))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqDecision {
    pub client_id: ClientId,
    pub direction: Direction,
    pub from_rq: RenderQuality,
    pub to_rq: RenderQuality,
    pub round: u64,
    /// Scores of every candidate considered this round, in registration order.
    pub score_snapshot: Vec<(ClientId, ScoreBreakdown)>,
}

/// True iff the two most recent adjustments reverse each other and both fall
/// within the last `window` rounds.
pub fn detect_oscillation(history: &[Adjustment], round: u64, window: u64) -> bool {
    let [.., prev, last] = history else {
        return false;
    };
    last.reverses(prev) && round.saturating_sub(prev.round) <= window && last.round <= round
}

/// Bumps the backoff count (saturating at the configured maximum) and sets
/// the until-round to `round + base^count`.
pub fn get_backoff_round(round: u64, state: BackoffState, config: &OptimizerConfig) -> BackoffState {
    let count = (state.backoff_count + 1).min(config.max_backoff_count);
    let span = (config.backoff_base as u64).saturating_pow(count);
    BackoffState {
        backoff_count: count,
        backoff_until_round: round.saturating_add(span),
    }
}

pub fn collapse_backoff(_state: BackoffState) -> BackoffState {
    BackoffState::default()
}

/// One optimization round. Applies the chosen adjustment to `table` and
/// returns it, or `None` when the round is skipped or nothing qualifies.
pub fn optimize_round(
    table: &mut ClientTable,
    round: u64,
    predictor: &QualityPredictor,
    config: &OptimizerConfig,
) -> Result<Option<RqDecision>, OptimizerError> {
    if round < table.backoff_round() {
        return Ok(None);
    }

    let active: Vec<&ClientRecord> = table.iter().filter(|r| r.fps_reported).collect();
    let any_under = active.iter().any(|r| r.fps_current < r.fps_thresh);

    let (direction, candidates): (Direction, Vec<&ClientRecord>) = if any_under {
        let demote = active.iter().copied().filter(|r| r.rq_current > RenderQuality::MIN).collect();
        (Direction::Demote, demote)
    } else {
        let promote: Vec<&ClientRecord> = active
            .iter()
            .copied()
            .filter(|r| r.rq_current < RenderQuality::MAX)
            .collect();
        if promote.iter().any(|r| r.fps_current < r.fps_thresh + config.fps_buffer) {
            return Ok(None);
        }
        (Direction::Promote, promote)
    };

    let mut snapshot = Vec::with_capacity(candidates.len());
    let mut chosen: Option<(usize, f64)> = None;
    for (i, rec) in candidates.iter().enumerate() {
        let target = match direction {
            Direction::Promote => rec.rq_current.next_up(),
            Direction::Demote => rec.rq_current.next_down(),
        }
        .expect("candidate filters guarantee a neighbour");
        // a frozen client reports 0 FPS; score it as the lowest positive rate
        let fps = rec.fps_current.max(f64::MIN_POSITIVE);
        let score = efficiency_score(config.alpha, fps, rec.fps_upper, predictor, rec.rq_current, target, rec.qp)?;
        snapshot.push((rec.client_id.clone(), score));
        let better = match (chosen, direction) {
            (None, _) => true,
            (Some((_, best)), Direction::Demote) => score.total < best,
            (Some((_, best)), Direction::Promote) => score.total > best,
        };
        if better {
            chosen = Some((i, score.total));
        }
    }
    let Some((pick, _)) = chosen else {
        return Ok(None);
    };
    let client_id = candidates[pick].client_id.clone();
    drop(candidates);
    drop(active);

    let adj = table
        .adjust(&client_id, direction, round)?
        .expect("candidate has a neighbour in the chosen direction");

    if config.backoff {
        let rec = table.get_mut(&client_id)?;
        let history = &rec.adjustment_history;
        // Backoff is armed when a demotion undoes a recent promotion, so the
        // client always waits it out on the lower, feasible level.
        if adj.direction == Direction::Demote && detect_oscillation(history, round, config.oscillation_window) {
            rec.backoff = get_backoff_round(round, rec.backoff, config);
        } else if rec.backoff.backoff_count > 0 {
            let reversal = history.len() >= 2 && adj.reverses(&history[history.len() - 2]);
            if !reversal {
                rec.backoff = collapse_backoff(rec.backoff);
            }
        }
    }

    Ok(Some(RqDecision {
        client_id,
        direction,
        from_rq: adj.from_rq,
        to_rq: adj.to_rq,
        round,
        score_snapshot: snapshot,
    }))
}
