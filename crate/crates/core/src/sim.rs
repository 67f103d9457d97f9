//! Fixed-step simulation of one GPU shared by the game instances of a
//! scenario.
//!
//! Each step covers `[t, t + step)`. Arrivals at or before `t` are admitted,
//! the GPU is split with [`allocate_fps`], and one [`TraceSample`] per user is
//! stamped `t + step` and reported to the policy's client table. When
//! `t + step` reaches a round boundary the policy runs and its decisions take
//! effect from `t + step` on, opening an RQ-change overhead window.

use serde::{Deserialize, Serialize};

use crate::gpu::{allocate_fps, apply_rq_change, GameProfiles, GpuError, SimUser};
use crate::optimizer::{ClientId, ClientTable, OptimizerError, RqDecision};
use crate::policies::Policy;
use crate::quality::{QpLevel, RenderQuality};
use crate::scenario::ScenarioConfig;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(#[from] GpuError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_s: f64,
    pub client_id: ClientId,
    pub game: String,
    pub rq: RenderQuality,
    pub qp: QpLevel,
    pub fps: f64,
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDecision {
    pub time_s: f64,
    #[serde(flatten)]
    pub decision: RqDecision,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOutput {
    pub trace: Vec<TraceSample>,
    pub decisions: Vec<LoggedDecision>,
}

impl SimOutput {
    /// Samples of one client in time order.
    pub fn samples_of<'a>(&'a self, id: &'a ClientId) -> impl Iterator<Item = &'a TraceSample> + 'a {
        self.trace.iter().filter(move |s| &s.client_id == id)
    }

    pub fn final_rq(&self, id: &ClientId) -> Option<RenderQuality> {
        self.samples_of(id).last().map(|s| s.rq)
    }
}

struct Active {
    user: SimUser,
    qp: QpLevel,
    fps_thresh: f64,
}

pub fn run_simulation(scenario: &ScenarioConfig, profiles: &GameProfiles, policy: &Policy) -> Result<SimOutput, SimError> {
    // resolve every profile up front so a bad game id fails before running
    let mut pending = Vec::with_capacity(scenario.users.len());
    for spec in &scenario.users {
        pending.push((spec, profiles.get(&spec.game_id)?.clone()));
    }
    pending.sort_by(|a, b| a.0.join_time_s.total_cmp(&b.0.join_time_s));
    let mut pending = pending.into_iter().peekable();

    let gpu = &scenario.gpu;
    let step = scenario.step_s;
    let interval = scenario.optimizer.round_interval_s;
    let eps = 1e-9 * step;

    let mut table = ClientTable::new();
    let mut active: Vec<Active> = Vec::new();
    let mut out = SimOutput::default();
    let mut round: u64 = 0;

    let mut k: u64 = 0;
    loop {
        let now = k as f64 * step;
        let end = (k + 1) as f64 * step;
        if end > scenario.duration_s + eps {
            break;
        }
        while let Some((spec, _)) = pending.peek() {
            if spec.join_time_s > now + eps {
                break;
            }
            let (spec, profile) = pending.next().expect("peeked");
            let rq = policy.initial_rq();
            table.register(spec.client_id.clone(), &spec.game_id, spec.qp, spec.fps_thresh, spec.fps_upper, rq)?;
            active.push(Active {
                user: SimUser::new(spec.client_id.clone(), profile, rq, spec.fps_upper, spec.join_time_s),
                qp: spec.qp,
                fps_thresh: spec.fps_thresh,
            });
        }

        let users: Vec<SimUser> = active.iter().map(|a| a.user.clone()).collect();
        let fps = allocate_fps(&users, now, gpu);
        for a in &active {
            let f = fps[&a.user.client_id];
            out.trace.push(TraceSample {
                time_s: end,
                client_id: a.user.client_id.clone(),
                game: a.user.profile.game_id().to_string(),
                rq: a.user.rq,
                qp: a.qp,
                fps: f,
                above_threshold: f >= a.fps_thresh,
            });
            table.report_fps(&a.user.client_id, f)?;
        }

        while end + eps >= (round + 1) as f64 * interval {
            round += 1;
            for decision in policy.on_round(&mut table, round)? {
                let a = active
                    .iter_mut()
                    .find(|a| a.user.client_id == decision.client_id)
                    .expect("decisions only name admitted clients");
                a.user = apply_rq_change(&a.user, decision.to_rq, end, gpu)?;
                out.decisions.push(LoggedDecision { time_s: end, decision });
            }
        }
        k += 1;
    }
    Ok(out)
}
