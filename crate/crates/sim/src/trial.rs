//! One search trial: the simulated world drives a session of the search service in-process.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mos3d_core::model::{Action, ObjectId};
use mos3d_core::planner::PlannerConfig;
use mos3d_core::spatial::Vec3;
use mos3d_service::config::PriorEntry;
use mos3d_service::{AgentConfig, SearchService, TargetConfig};

use crate::error::{Result, SimError};
use crate::world::{make_world, ScenarioConfig, SimWorld};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Uniform,
    Occupancy,
    Groundtruth,
}

impl FromStr for PriorKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "occupancy" => Ok(Self::Occupancy),
            "groundtruth" => Ok(Self::Groundtruth),
            _ => Err(SimError::Config(format!("unknown prior '{s}'"))),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Occupancy => "occupancy",
            Self::Groundtruth => "groundtruth",
        })
    }
}

/// Prior value given to the true location under the groundtruth prior.
pub const GROUNDTRUTH_VALUE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub scenario: ScenarioConfig,
    /// Template for the agent; region, targets, priors and seed are filled in per trial.
    pub agent: AgentConfig,
    pub planner: PlannerConfig,
    pub prior: PriorKind,
    /// Simulated seconds.
    pub budget: f64,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            agent: AgentConfig { octree_size: 32, res: 0.1, ..AgentConfig::default() },
            planner: PlannerConfig::default(),
            prior: PriorKind::Uniform,
            budget: 180.0,
            seed: 0,
            max_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub distance: f64,
    pub elapsed: f64,
    /// Simulated clock after the step.
    pub clock: f64,
    pub planning_time: f64,
    pub detections: usize,
    pub found: String,
    /// Per target `id:probability@x,y,z` of the most likely ground cell before acting.
    pub beliefs: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialMetrics {
    pub length: f64,
    pub planning_time: f64,
    pub sim_time: f64,
    pub total_time: f64,
    pub steps: usize,
    pub num_found: usize,
    pub success: bool,
    pub trace: Vec<StepRecord>,
}

/// Agent configuration for a trial in `world`.
pub fn agent_config(spec: &TrialSpec, world: &SimWorld) -> AgentConfig {
    let sc = &spec.scenario;
    let targets = world
        .objects
        .iter()
        .map(|o| {
            let template = spec.agent.targets.first().cloned().unwrap_or_else(|| TargetConfig::new(o.id));
            let prior = match spec.prior {
                PriorKind::Groundtruth => {
                    vec![PriorEntry { position: [o.center.x, o.center.y, o.center.z], level: 0, value: GROUNDTRUTH_VALUE }]
                }
                _ => vec![],
            };
            TargetConfig { id: o.id, prior, ..template }
        })
        .collect();
    AgentConfig {
        region_size: sc.region_size,
        center: sc.center,
        camera: sc.camera,
        targets,
        prior_from_occupancy: spec.prior == PriorKind::Occupancy,
        seed: spec.seed,
        num_sims: spec.planner.num_sims,
        ..spec.agent.clone()
    }
}

fn action_name(a: &Action) -> String {
    match a {
        Action::Move(i) => format!("move:{i}"),
        Action::Look { yaw, pitch } => format!("look:{yaw:.3}:{pitch:.3}"),
        Action::Find => "find".into(),
        Action::Stay => "stay".into(),
    }
}

fn belief_summary(service: &SearchService, id: &str) -> String {
    service
        .with_agent(id, |a| {
            a.beliefs
                .iter()
                .filter_map(|b| {
                    let c = b.max_cell().ok()?;
                    let p = a.region.center(c);
                    Some(format!("{}:{:.4}@{:.2},{:.2},{:.2}", b.object_id(), b.prob_ground(c), p.x, p.y, p.z))
                })
                .collect::<Vec<_>>()
                .join(";")
        })
        .unwrap_or_default()
}

/// Whether every target was declared within `tol` of its true position.
pub fn grounded(world: &SimWorld, found: &[(ObjectId, Vec3)], tol: f64) -> bool {
    world.objects.iter().all(|o| found.iter().any(|(id, p)| *id == o.id && (p - o.center).norm() <= tol))
}

/// Run the perception-action loop until every target is found or the simulated budget runs out.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut world = make_world(&spec.scenario, &mut rng)?;
    run_in_world(spec, &mut world, &mut rng)
}

pub fn run_in_world(spec: &TrialSpec, world: &mut SimWorld, rng: &mut ChaCha8Rng) -> Result<TrialMetrics> {
    let config = agent_config(spec, world);
    let service = SearchService::new();
    let id = service.create_agent("trial", config.clone())?;
    let mut metrics = TrialMetrics {
        length: 0.0,
        planning_time: 0.0,
        sim_time: 0.0,
        total_time: 0.0,
        steps: 0,
        num_found: 0,
        success: false,
        trace: Vec::new(),
    };
    if spec.budget <= 0.0 {
        return Ok(metrics);
    }
    service.update_search_region(&id, &world.cloud, Some(world.robot))?;
    service.create_planner(&id, spec.planner)?;
    let mut found: Vec<(ObjectId, Vec3)> = Vec::new();
    let mut clock = 0.0;
    let mut seq = 0;
    let mut detections = world.observe(rng);
    for step in 0..spec.max_steps {
        seq += 1;
        service.process_observation(&id, seq, world.robot, &detections, None)?;
        let beliefs = belief_summary(&service, &id);
        let outcome = service.plan_action(&id)?;
        metrics.planning_time += outcome.planning_time;
        let Some(action) = outcome.action else { break };
        let cost = world.step(&action, outcome.goal);
        clock += cost.elapsed;
        if clock > spec.budget {
            clock = spec.budget;
            break;
        }
        metrics.length += cost.distance;
        found.extend(outcome.found.iter().map(|r| (r.object_id, r.location)));
        detections = world.observe(rng);
        let p = world.robot.position;
        metrics.trace.push(StepRecord {
            step,
            action: action_name(&action),
            x: p.x,
            y: p.y,
            z: p.z,
            distance: cost.distance,
            elapsed: cost.elapsed,
            clock,
            planning_time: outcome.planning_time,
            detections: detections.len(),
            found: outcome.found.iter().map(|r| r.object_id.to_string()).collect::<Vec<_>>().join(";"),
            beliefs,
        });
        if outcome.terminal {
            break;
        }
    }
    metrics.steps = metrics.trace.len();
    metrics.sim_time = clock;
    metrics.total_time = clock + metrics.planning_time;
    metrics.num_found = found.len();
    metrics.success = grounded(world, &found, 2.0 * config.res);
    Ok(metrics)
}
