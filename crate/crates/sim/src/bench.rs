//! The benchmark matrix: prior type x resolution x planner, several seeds each.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mos3d_core::planner::{PlannerConfig, PlannerKind};
use mos3d_service::AgentConfig;

use crate::error::Result;
use crate::trial::{run_trial, PriorKind, TrialMetrics, TrialSpec};
use crate::world::{Placement, ScenarioConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub name: String,
    pub prior: PriorKind,
    pub octree_size: u32,
    pub res: f64,
    pub planner: PlannerKind,
}

impl Setting {
    pub fn new(prior: PriorKind, octree_size: u32, res: f64, planner: PlannerKind) -> Self {
        let voxel = res * res * res;
        Self { name: format!("{prior}@{voxel:.3}/{planner}"), prior, octree_size, res, planner }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub scenario: ScenarioConfig,
    pub agent: AgentConfig,
    pub planner: PlannerConfig,
    pub budget: f64,
    pub seeds: Vec<u64>,
    pub settings: Vec<Setting>,
}

/// The seven rows of the results table.
pub fn default_settings() -> Vec<Setting> {
    use PlannerKind::*;
    use PriorKind::*;
    vec![
        Setting::new(Uniform, 16, 0.2, Pouct),
        Setting::new(Occupancy, 16, 0.2, Pouct),
        Setting::new(Uniform, 32, 0.1, Pouct),
        Setting::new(Occupancy, 32, 0.1, Pouct),
        Setting::new(Groundtruth, 32, 0.1, Pouct),
        Setting::new(Occupancy, 32, 0.1, Random),
        Setting::new(Occupancy, 32, 0.1, Greedy),
    ]
}

/// Targets rest on surfaces, and moving is charged per metre at the same rate as a step.
impl Default for BenchConfig {
    fn default() -> Self {
        let mut agent = AgentConfig::default();
        agent.reward.distance_cost = 10.0;
        Self {
            scenario: ScenarioConfig { placement: Placement::Surface, ..ScenarioConfig::desk() },
            agent,
            planner: PlannerConfig::default(),
            budget: 180.0,
            seeds: (0..20).collect(),
            settings: default_settings(),
        }
    }
}

impl BenchConfig {
    pub fn spec(&self, setting: &Setting, seed: u64) -> TrialSpec {
        TrialSpec {
            scenario: self.scenario.clone(),
            agent: AgentConfig { octree_size: setting.octree_size, res: setting.res, ..self.agent.clone() },
            planner: PlannerConfig { kind: setting.planner, ..self.planner },
            prior: setting.prior,
            budget: self.budget,
            seed,
            ..TrialSpec::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SettingSummary {
    pub setting: Setting,
    pub trials: usize,
    pub mean_length: f64,
    pub mean_sim_time: f64,
    pub mean_steps: f64,
    pub success_rate: f64,
    pub mean_planning_time: f64,
    pub mean_total_time: f64,
}

impl SettingSummary {
    pub fn from_trials(setting: &Setting, trials: &[TrialMetrics]) -> Self {
        let n = trials.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| trials.iter().map(f).sum::<f64>() / n;
        Self {
            setting: setting.clone(),
            trials: trials.len(),
            mean_length: mean(&|t| t.length),
            mean_sim_time: mean(&|t| t.sim_time),
            mean_steps: mean(&|t| t.steps as f64),
            success_rate: mean(&|t| if t.success { 1.0 } else { 0.0 }),
            mean_planning_time: mean(&|t| t.planning_time),
            mean_total_time: mean(&|t| t.total_time),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub summaries: Vec<SettingSummary>,
    pub trials: Vec<Vec<(u64, TrialMetrics)>>,
}

impl BenchResult {
    pub fn summary(&self, name: &str) -> Option<&SettingSummary> {
        self.summaries.iter().find(|s| s.setting.name == name)
    }
}

/// Run every setting on every seed, in parallel across trials.
pub fn run_matrix(cfg: &BenchConfig) -> Result<BenchResult> {
    let jobs: Vec<(usize, u64)> =
        (0..cfg.settings.len()).flat_map(|s| cfg.seeds.iter().map(move |seed| (s, *seed))).collect();
    let results: Vec<Result<TrialMetrics>> =
        jobs.par_iter().map(|(s, seed)| run_trial(&cfg.spec(&cfg.settings[*s], *seed))).collect();
    let mut trials: Vec<Vec<(u64, TrialMetrics)>> = vec![Vec::new(); cfg.settings.len()];
    for ((s, seed), r) in jobs.into_iter().zip(results) {
        trials[s].push((seed, r?));
    }
    let summaries = cfg
        .settings
        .iter()
        .zip(&trials)
        .map(|(st, ts)| SettingSummary::from_trials(st, &ts.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>()))
        .collect();
    Ok(BenchResult { summaries, trials })
}

fn file_name(setting: &Setting) -> String {
    setting.name.replace(['@', '/', '.'], "_")
}

/// Deterministic columns only: everything here is a function of the seeds.
pub fn summary_csv(res: &BenchResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "prior", "octree_size", "res", "planner", "trials", "length", "sim_time", "steps", "success_rate"])?;
    for s in &res.summaries {
        let st = &s.setting;
        w.write_record([
            st.name.clone(),
            st.prior.to_string(),
            st.octree_size.to_string(),
            format!("{}", st.res),
            st.planner.to_string(),
            s.trials.to_string(),
            format!("{:.6}", s.mean_length),
            format!("{:.6}", s.mean_sim_time),
            format!("{:.3}", s.mean_steps),
            format!("{:.4}", s.success_rate),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

pub fn timing_csv(res: &BenchResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "planning_time", "total_time"])?;
    for s in &res.summaries {
        w.write_record([s.setting.name.clone(), format!("{:.4}", s.mean_planning_time), format!("{:.4}", s.mean_total_time)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

/// Human-readable results table.
pub fn report_table(res: &BenchResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>9} {:>10} {:>10} {:>10} {:>8}",
        "setting", "length", "planning", "sim time", "total", "success"
    );
    for s in &res.summaries {
        let _ = writeln!(
            out,
            "{:<28} {:>9.2} {:>10.2} {:>10.2} {:>10.2} {:>7.0}%",
            s.setting.name,
            s.mean_length,
            s.mean_planning_time,
            s.mean_sim_time,
            s.mean_total_time,
            100.0 * s.success_rate
        );
    }
    out
}

/// Write summary.csv, timing.csv, report.txt and one trace per trial under `out`.
pub fn write_outputs(res: &BenchResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("traces"))?;
    fs::write(out.join("summary.csv"), summary_csv(res)?)?;
    fs::write(out.join("timing.csv"), timing_csv(res)?)?;
    fs::write(out.join("report.txt"), report_table(res))?;
    for (s, trials) in res.summaries.iter().zip(&res.trials) {
        for (seed, m) in trials {
            write_trace(m, &out.join("traces").join(format!("{}_seed{seed}.csv", file_name(&s.setting))))?;
        }
    }
    Ok(())
}

pub fn write_trace(m: &TrialMetrics, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &m.trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.records().collect::<std::result::Result<Vec<_>, _>>()?)
}
