//! Serving-state reports computed from a trace alone.
//!
//! A user is *stabilized* when its RQ does not change during the trailing
//! report window. Stabilized users are summarized by one level; the others by
//! the two levels they spent most samples at, and their service quality is
//! the mean over those two levels.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::ClientId;
use crate::quality::{QpLevel, QualityError, QualityPredictor, RenderQuality};
use crate::scoring::{fps_score, service_quality_score, ScoreError};
use crate::sim::{LoggedDecision, TraceSample};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace file: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Quality(#[from] QualityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelState {
    pub rq: RenderQuality,
    pub mean_fps: f64,
    pub vq: f64,
    pub service_quality: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserServingState {
    pub client_id: ClientId,
    pub game: String,
    pub qp: QpLevel,
    pub stabilized: bool,
    /// One entry when stabilized, otherwise the two oscillation levels in
    /// ascending RQ order.
    pub levels: Vec<LevelState>,
    pub final_rq: RenderQuality,
    pub mean_fps: f64,
    pub service_quality: f64,
    /// Every sample in the window met the threshold.
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingStateReport {
    pub window_s: f64,
    pub fps_upper: f64,
    pub end_time_s: f64,
    pub users: Vec<UserServingState>,
    pub mean_service_quality: f64,
    pub users_above_threshold: usize,
    /// Service quality of a Good-network user at High RQ and 30 FPS.
    pub reference_service_quality: f64,
}

impl ServingStateReport {
    pub fn user(&self, id: &str) -> Option<&UserServingState> {
        self.users.iter().find(|u| u.client_id.as_str() == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn level_state(rq: RenderQuality, qp: QpLevel, fps: &[f64], predictor: &QualityPredictor, fps_upper: f64) -> Result<LevelState, ReportError> {
    let mean_fps = fps.iter().sum::<f64>() / fps.len() as f64;
    let vq = predictor.predict_vq(rq, qp)?;
    let service_quality = if mean_fps > 0.0 {
        service_quality_score(mean_fps, fps_upper, vq)?
    } else {
        0.0
    };
    Ok(LevelState {
        rq,
        mean_fps,
        vq,
        service_quality,
        samples: fps.len(),
    })
}

/// Folds a trace into a report. Users appear in order of first sample.
pub fn serving_state_report(
    trace: &[TraceSample],
    predictor: &QualityPredictor,
    fps_upper: f64,
    window_s: f64,
) -> Result<ServingStateReport, ReportError> {
    let end = trace
        .iter()
        .map(|s| s.time_s)
        .max_by(f64::total_cmp)
        .ok_or(ReportError::EmptyTrace)?;
    let start = end - window_s;

    let mut order: Vec<&ClientId> = Vec::new();
    let mut per_user: BTreeMap<&ClientId, Vec<&TraceSample>> = BTreeMap::new();
    for s in trace {
        per_user
            .entry(&s.client_id)
            .or_insert_with(|| {
                order.push(&s.client_id);
                Vec::new()
            })
            .push(s);
    }

    let mut users = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = per_user[id].clone();
        rows.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        let mut window: Vec<&TraceSample> = rows.iter().copied().filter(|s| s.time_s > start + 1e-9).collect();
        if window.is_empty() {
            window.push(rows.last().expect("user has samples"));
        }
        let last = window.last().expect("non-empty");
        let stabilized = window.iter().all(|s| s.rq == last.rq);
        let above_threshold = window.iter().all(|s| s.above_threshold);

        let mut by_level: BTreeMap<RenderQuality, Vec<f64>> = BTreeMap::new();
        for s in &window {
            by_level.entry(s.rq).or_default().push(s.fps);
        }
        let mut ranked: Vec<(RenderQuality, Vec<f64>)> = by_level.into_iter().collect();
        // most samples first; ties favour the higher level
        ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(b.0.cmp(&a.0)));
        ranked.truncate(if stabilized { 1 } else { 2 });
        ranked.sort_by_key(|(rq, _)| *rq);

        let levels = ranked
            .iter()
            .map(|(rq, fps)| level_state(*rq, last.qp, fps, predictor, fps_upper))
            .collect::<Result<Vec<_>, _>>()?;
        let service_quality = levels.iter().map(|l| l.service_quality).sum::<f64>() / levels.len() as f64;
        let mean_fps = window.iter().map(|s| s.fps).sum::<f64>() / window.len() as f64;
        users.push(UserServingState {
            client_id: id.clone(),
            game: last.game.clone(),
            qp: last.qp,
            stabilized,
            levels,
            final_rq: last.rq,
            mean_fps,
            service_quality,
            above_threshold,
        });
    }

    let mean_service_quality = users.iter().map(|u| u.service_quality).sum::<f64>() / users.len() as f64;
    let users_above_threshold = users.iter().filter(|u| u.above_threshold).count();
    let reference = fps_score(30.0, fps_upper)? * predictor.predict_vq(RenderQuality::High, QpLevel::GOOD)?;
    Ok(ServingStateReport {
        window_s,
        fps_upper,
        end_time_s: end,
        users,
        mean_service_quality,
        users_above_threshold,
        reference_service_quality: reference,
    })
}

/// Writes the plot-ready trace CSV:
/// `time_s,client_id,game,rq,qp,fps,above_threshold`.
pub fn write_trace<W: Write>(trace: &[TraceSample], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in trace {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceSample>, ReportError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn save_trace(trace: &[TraceSample], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceSample>, ReportError> {
    read_trace(std::fs::File::open(path)?)
}

/// One JSON object per line, in decision order.
pub fn write_decisions<W: Write>(decisions: &[LoggedDecision], mut writer: W) -> Result<(), ReportError> {
    for d in decisions {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
