//! Runs scenarios end to end and compares policies on the same workload.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::policies::{Policy, PolicyKind};
use crate::report::{serving_state_report, write_decisions, ReportError, ServingStateReport};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{run_simulation, SimError, SimOutput};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("compare needs at least one policy")]
    NoPolicies,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub output: SimOutput,
    pub report: ServingStateReport,
}

/// Simulates `scenario` under `policy` and folds the trace into a report.
pub fn run_scenario(scenario: &ScenarioConfig, policy: PolicyKind) -> Result<RunResult, HarnessError> {
    let profiles = scenario.load_profiles()?;
    let predictor = scenario.load_predictor()?;
    let p = Policy::from_kind(policy, &scenario.optimizer, &predictor);
    let output = run_simulation(scenario, &profiles, &p)?;
    let fps_upper = scenario.users.first().map_or(120.0, |u| u.fps_upper);
    let report = serving_state_report(&output.trace, &predictor, fps_upper, scenario.report_window_s)?;
    Ok(RunResult { policy, output, report })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs one policy and writes `trace.csv`, `decisions.jsonl` and
/// `report.json` into `out_dir`.
pub fn run_and_report(scenario: &ScenarioConfig, policy: PolicyKind, out_dir: &Path) -> Result<RunResult, HarnessError> {
    let result = run_scenario(scenario, policy)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    crate::report::save_trace(&result.output.trace, out_dir.join("trace.csv"))?;
    let path = out_dir.join("decisions.jsonl");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    write_decisions(&result.output.decisions, std::io::BufWriter::new(file))?;
    let path = out_dir.join("report.json");
    std::fs::write(&path, result.report.to_json()).map_err(io_err(&path))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub policy: PolicyKind,
    pub mean_service_quality: f64,
    pub users_above_threshold: usize,
    /// Relative gain over the best of the other compared policies, in
    /// percent. Zero when the policy is compared only with itself.
    pub improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub users: usize,
    pub policies: Vec<PolicyScore>,
}

impl Comparison {
    pub fn get(&self, policy: PolicyKind) -> Option<&PolicyScore> {
        self.policies.iter().find(|p| p.policy == policy)
    }

    /// Percent gain of `a` over `b`.
    pub fn improvement(&self, a: PolicyKind, b: PolicyKind) -> Option<f64> {
        let (a, b) = (self.get(a)?, self.get(b)?);
        Some(percent_gain(a.mean_service_quality, b.mean_service_quality))
    }
}

fn percent_gain(subject: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if subject == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (subject / baseline - 1.0) * 100.0
    }
}

pub fn compare_results(scenario: &ScenarioConfig, results: &[RunResult]) -> Result<Comparison, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoPolicies);
    }
    let policies = results
        .iter()
        .map(|r| {
            let best_other = results
                .iter()
                .filter(|o| o.policy != r.policy)
                .map(|o| o.report.mean_service_quality)
                .max_by(f64::total_cmp);
            PolicyScore {
                policy: r.policy,
                mean_service_quality: r.report.mean_service_quality,
                users_above_threshold: r.report.users_above_threshold,
                improvement_pct: best_other.map_or(0.0, |b| percent_gain(r.report.mean_service_quality, b)),
            }
        })
        .collect();
    Ok(Comparison {
        scenario: scenario.name.clone(),
        users: scenario.users.len(),
        policies,
    })
}

/// Runs every policy on the same scenario. With `out_dir`, each run's
/// artifacts go to `out_dir/<policy>/` and the summary to
/// `out_dir/comparison.json`.
pub fn compare_policies(
    scenario: &ScenarioConfig,
    policies: &[PolicyKind],
    out_dir: Option<&Path>,
) -> Result<(Comparison, Vec<RunResult>), HarnessError> {
    let mut seen = Vec::new();
    for p in policies {
        if !seen.contains(p) {
            seen.push(*p);
        }
    }
    let results = seen
        .iter()
        .map(|&p| match out_dir {
            Some(dir) => run_and_report(scenario, p, &dir.join(p.as_str())),
            None => run_scenario(scenario, p),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let comparison = compare_results(scenario, &results)?;
    if let Some(dir) = out_dir {
        let path = dir.join("comparison.json");
        let text = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok((comparison, results))
}
