//! GPU time-sharing model: per-game frame costs and the weighted max-min
//! fair split of one GPU among concurrently rendering game instances.
//!
//! Every user asks for `effective_cost * fps_upper` GPU-seconds per second.
//! When the sum fits, everyone renders at its upper bound. Otherwise capacity
//! is water-filled: users whose demand is below their fair share get their
//! demand, the rest split what remains in proportion to their weight. A
//! user's weight is `effective_cost^share_exponent`, so an exponent of 0 is
//! plain equal-time sharing and larger exponents let heavier frames hold the
//! GPU longer per turn, as a non-preemptive round-robin does.
//!
//! Co-runners also slow each other down. User `i`'s frame cost is inflated by
//! `contention_penalty * sum_j (c_j / c_i)^contention_exponent` over the other
//! users `j`. With identical users this is `contention_penalty * (n - 1)`; in
//! mixed loads light frames suffer more from heavy neighbours than the
//! reverse.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::ClientId;
use crate::quality::RenderQuality;

#[derive(Debug, thiserror::Error)]
pub enum GpuError {
    #[error("game `{game}`: frame costs must be positive and strictly increase with RQ")]
    InvalidProfile { game: String },
    #[error("unknown game profile `{0}`")]
    UnknownGame(String),
    #[error("{from} -> {to} is not a single-level RQ change")]
    NotAdjacent { from: RenderQuality, to: RenderQuality },
    #[error("invalid gpu model: {0}")]
    InvalidModel(String),
    #[error("profile file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Milliseconds of GPU time one frame takes at each RQ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCosts {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
    pub very_high: f64,
}

impl FrameCosts {
    pub fn get(&self, rq: RenderQuality) -> f64 {
        match rq {
            RenderQuality::Low => self.low,
            RenderQuality::Medium => self.medium,
            RenderQuality::High => self.high,
            RenderQuality::VeryHigh => self.very_high,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.low, self.medium, self.high, self.very_high]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameProfile {
    game_id: String,
    frame_cost_ms: FrameCosts,
}

impl GameProfile {
    pub fn new(game_id: impl Into<String>, frame_cost_ms: FrameCosts) -> Result<GameProfile, GpuError> {
        let game_id = game_id.into();
        let c = frame_cost_ms.as_array();
        let ok = c.iter().all(|v| v.is_finite() && *v > 0.0) && c.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(GpuError::InvalidProfile { game: game_id });
        }
        Ok(GameProfile { game_id, frame_cost_ms })
    }

    pub fn game_id(&self) -> &str {
        &self.game_id
    }

    pub fn frame_costs(&self) -> &FrameCosts {
        &self.frame_cost_ms
    }

    pub fn cost_ms(&self, rq: RenderQuality) -> f64 {
        self.frame_cost_ms.get(rq)
    }
}

/// Game profiles keyed by game id.
///
/// File format (TOML), costs in milliseconds per frame:
///
/// ```toml
/// [village_shooter]
/// low = 1.52
/// medium = 2.34
/// high = 3.58
/// very_high = 5.43
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GameProfiles {
    profiles: BTreeMap<String, GameProfile>,
}

pub const DEFAULT_PROFILES_TOML: &str = include_str!("../data/profiles.toml");

impl GameProfiles {
    pub fn from_toml(text: &str) -> Result<GameProfiles, GpuError> {
        let raw: BTreeMap<String, FrameCosts> = toml::from_str(text)?;
        let mut profiles = BTreeMap::new();
        for (game, costs) in raw {
            profiles.insert(game.clone(), GameProfile::new(game, costs)?);
        }
        Ok(GameProfiles { profiles })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GameProfiles, GpuError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, game_id: &str) -> Result<&GameProfile, GpuError> {
        self.profiles
            .get(game_id)
            .ok_or_else(|| GpuError::UnknownGame(game_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &GameProfile> {
        self.profiles.values()
    }
}

impl Default for GameProfiles {
    fn default() -> Self {
        GameProfiles::from_toml(DEFAULT_PROFILES_TOML).expect("bundled profiles are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpuModel {
    /// GPU-seconds available per second.
    pub capacity: f64,
    /// Frame-cost inflation while an RQ change is being applied.
    pub overhead_factor: f64,
    pub overhead_duration_s: f64,
    /// Frame-cost inflation per concurrently active user beyond the first,
    /// scaled by the co-runner's relative frame cost.
    pub contention_penalty: f64,
    /// Exponent on the co-runner cost ratio; 0 makes contention depend on the
    /// user count only.
    pub contention_exponent: f64,
    /// Exponent on the frame cost used as a user's fair-share weight.
    pub share_exponent: f64,
}

impl Default for GpuModel {
    fn default() -> Self {
        GpuModel {
            capacity: 1.0,
            overhead_factor: 0.30,
            overhead_duration_s: 1.0,
            contention_penalty: 0.02,
            contention_exponent: 0.0,
            share_exponent: 0.0,
        }
    }
}

impl GpuModel {
    /// Max-min sharing without switching or contention costs.
    pub fn pure() -> GpuModel {
        GpuModel {
            overhead_factor: 0.0,
            contention_penalty: 0.0,
            ..GpuModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), GpuError> {
        let bad = |m: &str| Err(GpuError::InvalidModel(m.into()));
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad("capacity must be positive");
        }
        if !(self.overhead_factor >= 0.0 && self.overhead_factor.is_finite()) {
            return bad("overhead_factor must be >= 0");
        }
        if !(self.overhead_duration_s >= 0.0 && self.overhead_duration_s.is_finite()) {
            return bad("overhead_duration_s must be >= 0");
        }
        if !(0.0..1.0).contains(&self.contention_penalty) {
            return bad("contention_penalty must be in [0, 1)");
        }
        // above 1 a user lowering its RQ could raise its own effective cost
        if !(0.0..=1.0).contains(&self.contention_exponent) {
            return bad("contention_exponent must be in [0, 1]");
        }
        if !(0.0..=4.0).contains(&self.share_exponent) {
            return bad("share_exponent must be in [0, 4]");
        }
        Ok(())
    }
}

/// One game instance resident on the simulated GPU.
#[derive(Debug, Clone, PartialEq)]
pub struct SimUser {
    pub client_id: ClientId,
    pub profile: GameProfile,
    pub rq: RenderQuality,
    pub fps_upper: f64,
    pub join_time_s: f64,
    /// End of the current RQ-change penalty window.
    pub overhead_until_s: f64,
}

impl SimUser {
    pub fn new(client_id: ClientId, profile: GameProfile, rq: RenderQuality, fps_upper: f64, join_time_s: f64) -> SimUser {
        SimUser {
            client_id,
            profile,
            rq,
            fps_upper,
            join_time_s,
            overhead_until_s: 0.0,
        }
    }

    pub fn in_overhead(&self, now_s: f64) -> bool {
        now_s < self.overhead_until_s
    }

    /// Frame cost in milliseconds at the current RQ, ignoring any overhead.
    pub fn base_cost_ms(&self) -> f64 {
        self.profile.cost_ms(self.rq)
    }

    /// Seconds of GPU time per frame at `now_s`, given the base costs (ms) of
    /// the other users sharing the GPU.
    pub fn effective_cost_s(&self, now_s: f64, co_runner_costs_ms: &[f64], gpu: &GpuModel) -> f64 {
        let own = self.base_cost_ms();
        let mut ms = own;
        if self.in_overhead(now_s) {
            ms *= 1.0 + gpu.overhead_factor;
        }
        let load: f64 = co_runner_costs_ms
            .iter()
            .map(|c| (c / own).powf(gpu.contention_exponent))
            .sum();
        ms *= 1.0 + gpu.contention_penalty * load;
        ms / 1000.0
    }
}

/// Moves `user` one RQ level and restarts its overhead window at `now_s`.
pub fn apply_rq_change(user: &SimUser, new_rq: RenderQuality, now_s: f64, gpu: &GpuModel) -> Result<SimUser, GpuError> {
    if !user.rq.is_adjacent(new_rq) {
        return Err(GpuError::NotAdjacent {
            from: user.rq,
            to: new_rq,
        });
    }
    Ok(SimUser {
        rq: new_rq,
        overhead_until_s: now_s + gpu.overhead_duration_s,
        ..user.clone()
    })
}

/// Weighted max-min fair split of `capacity` among `demands`.
///
/// Returns one share per demand, each `<= demand`. If the demands fit, each
/// gets its demand; otherwise the shares sum to `capacity`. Zero or negative
/// weights are treated as a tiny positive weight.
pub fn water_fill(demands: &[f64], weights: &[f64], capacity: f64) -> Vec<f64> {
    assert_eq!(demands.len(), weights.len());
    let n = demands.len();
    let w: Vec<f64> = weights.iter().map(|w| w.max(1e-12)).collect();
    // saturate users in order of demand per unit weight
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (demands[a] / w[a]).total_cmp(&(demands[b] / w[b])).then(a.cmp(&b)));

    let mut shares = vec![0.0; n];
    let mut remaining = capacity;
    let mut weight_left: f64 = w.iter().sum();
    for (k, &i) in order.iter().enumerate() {
        let level = remaining / weight_left;
        if demands[i] <= level * w[i] {
            shares[i] = demands[i].max(0.0);
            remaining -= shares[i];
            weight_left -= w[i];
        } else {
            for &j in &order[k..] {
                shares[j] = level * w[j];
            }
            break;
        }
    }
    shares
}

/// Per-user FPS at `now_s`. Independent of the order of `users`.
pub fn allocate_fps(users: &[SimUser], now_s: f64, gpu: &GpuModel) -> BTreeMap<ClientId, f64> {
    if users.is_empty() {
        return BTreeMap::new();
    }
    // canonical order keeps float summation identical for any input order
    let mut sorted: Vec<&SimUser> = users.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let base: Vec<f64> = sorted.iter().map(|u| u.base_cost_ms()).collect();
    let costs: Vec<f64> = sorted
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let others: Vec<f64> = base.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| *c).collect();
            u.effective_cost_s(now_s, &others, gpu)
        })
        .collect();
    let demands: Vec<f64> = sorted.iter().zip(&costs).map(|(u, c)| c * u.fps_upper).collect();
    let weights: Vec<f64> = costs.iter().map(|c| (c * 1000.0).powf(gpu.share_exponent)).collect();
    let shares = water_fill(&demands, &weights, gpu.capacity);
    sorted
        .iter()
        .zip(costs.iter().zip(&shares))
        .map(|(u, (c, s))| (u.client_id.clone(), (s / c).min(u.fps_upper)))
        .collect()
}
