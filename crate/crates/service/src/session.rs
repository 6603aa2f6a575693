//! One search session: the agent it hosts and the lifecycle guarding it.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::broadcast;

use mos3d_core::belief::{InitParams, OctreeBelief, PriorValMap};
use mos3d_core::cloud::PointCloud;
use mos3d_core::model::{Action, ModelConfig, ObjectId, RobotState, VolumetricObservation};
use mos3d_core::occupancy::{CellMask, FeasibilityRule, OccupancyOctree, OccupancyParams};
use mos3d_core::planner::{plan, PlanContext, PlannerConfig};
use mos3d_core::spatial::{CameraPose, GridCell, RegionSpec, Vec3};
use mos3d_core::view_graph::ViewGraph;

use crate::config::{AgentConfig, SearchSpace};
use crate::error::ServiceError;
use crate::observation::{build_observation, DetectionMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lifecycle {
    AwaitingRegion,
    Ready,
    Planning,
    Executing,
}

impl Lifecycle {
    pub fn as_str(&self) -> &'static str {
        match self {
            Lifecycle::AwaitingRegion => "awaiting_region",
            Lifecycle::Ready => "ready",
            Lifecycle::Planning => "planning",
            Lifecycle::Executing => "executing",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoundReport {
    pub object_id: ObjectId,
    pub cell: GridCell,
    pub location: Vec3,
}

/// Events pushed to session listeners.
#[derive(Clone, Debug, PartialEq)]
pub enum ServerEvent {
    FoundObject(FoundReport),
    BeliefSnapshot { object_id: ObjectId, max_location: Vec3, max_prob: f64 },
    GraphUpdated(ViewGraph),
    LocalRegionRequest { local_session: String, center: Vec3, region_size: Vec3 },
    Heartbeat(u64),
}

/// The search agent hosted by a session.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub model: ModelConfig,
    pub region: RegionSpec,
    pub occupancy: OccupancyOctree,
    pub search_region: CellMask,
    pub beliefs: Vec<OctreeBelief>,
    pub graph: ViewGraph,
    pub robot: RobotState,
    pub last_observation: Option<VolumetricObservation>,
    pub found: BTreeMap<ObjectId, FoundReport>,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(config: &AgentConfig, cloud: &PointCloud, robot_pose: Option<CameraPose>) -> Result<Self, ServiceError> {
        let region = config.region()?;
        let params = OccupancyParams { min_points_per_cell: config.min_points_per_cell };
        let mut occupancy = OccupancyOctree::build(cloud, region, params);
        if occupancy.observed_bounds().is_none() {
            return Err(ServiceError::BadRequest("point cloud lies entirely outside the search region".into()));
        }
        if config.occupancy_fill_height {
            occupancy = occupancy.fill_below();
        }
        let search_region = match config.search_space {
            SearchSpace::RegionBox => {
                let b = config
                    .region_box()?
                    .ok_or_else(|| ServiceError::Validation(vec!["region_size: covers no octree cell".into()]))?;
                occupancy.region_cells(FeasibilityRule::Fixed(b))
            }
            SearchSpace::CloudBounds => occupancy.region_cells(FeasibilityRule::CloudBounds),
            SearchSpace::CloudBoundsFree => occupancy.region_cells(FeasibilityRule::CloudBoundsFree),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let occ_prior = if config.prior_from_occupancy {
            occupancy.occupancy_prior(config.prior_level, config.prior_weight)?
        } else {
            PriorValMap::new()
        };
        let init = InitParams { num_samples: config.init_samples, ..Default::default() };
        let mut beliefs = Vec::with_capacity(config.targets.len());
        for t in &config.targets {
            let mut prior: PriorValMap = occ_prior
                .iter()
                .filter(|(k, _)| k.ground_cells().any(|g| search_region.contains(g)))
                .map(|(k, v)| (*k, *v))
                .collect();
            for p in &t.prior {
                let cell = region.metric_to_cell(&Vec3::from(p.position), p.level)?;
                prior.insert(cell, p.value);
            }
            beliefs.push(OctreeBelief::init(t.id, config.octree_size, &search_region, &prior, &init, &mut rng)?);
        }
        let pose = robot_pose.unwrap_or_else(|| CameraPose::look_at(Vec3::from(config.center), &(Vec3::from(config.center) + Vec3::x())));
        let mut agent = Self {
            config: config.clone(),
            model: config.model_config(),
            region,
            occupancy,
            search_region,
            beliefs,
            graph: ViewGraph::default(),
            robot: RobotState { pose, found: Default::default() },
            last_observation: None,
            found: BTreeMap::new(),
            rng,
        };
        agent.resample_graph()?;
        Ok(agent)
    }

    pub fn target_ids(&self) -> Vec<ObjectId> {
        self.config.targets.iter().map(|t| t.id).collect()
    }

    pub fn belief(&self, id: ObjectId) -> Option<&OctreeBelief> {
        self.beliefs.iter().find(|b| b.object_id() == id)
    }

    fn unfound_beliefs(&self) -> Vec<&OctreeBelief> {
        self.beliefs.iter().filter(|b| !self.robot.found.contains(&b.object_id())).collect()
    }

    pub fn all_found(&self) -> bool {
        self.beliefs.iter().all(|b| self.robot.found.contains(&b.object_id()))
    }

    fn resample_graph(&mut self) -> Result<(), ServiceError> {
        let found = &self.robot.found;
        let unfound: Vec<&OctreeBelief> = self.beliefs.iter().filter(|b| !found.contains(&b.object_id())).collect();
        let mut params = self.config.graph_params();
        params.bounds = self.view_bounds();
        let g = ViewGraph::sample(&self.occupancy, &unfound, &params, &mut self.rng)?;
        self.graph = g;
        Ok(())
    }

    /// Metric box of the search region, narrowed horizontally to the mapped part of the octree.
    fn view_bounds(&self) -> Option<(Vec3, Vec3)> {
        let sb = self.search_region.bounding_box()?;
        let ob = self.occupancy.observed_bounds().unwrap_or(sb);
        let lo = GridCell::new(sb.min.x.max(ob.min.x), sb.min.y.max(ob.min.y), sb.min.z);
        let hi = GridCell::new(sb.max.x.min(ob.max.x), sb.max.y.min(ob.max.y), sb.max.z);
        if lo.x > hi.x || lo.y > hi.y || lo.z > hi.z {
            return None;
        }
        let r = &self.region;
        let to = |c: GridCell, d: f64| r.from_grid(&Vec3::new(c.x as f64 + d, c.y as f64 + d, c.z as f64 + d));
        Some((to(lo, 0.0), to(hi, 1.0)))
    }

    pub fn update_region(&mut self, cloud: &PointCloud) -> Result<(), ServiceError> {
        let mut occ = self.occupancy.update(cloud, &self.region)?;
        if self.config.occupancy_fill_height {
            occ = occ.fill_below();
        }
        self.occupancy = occ;
        self.resample_graph()
    }

    /// Apply one observation; returns whether the view graph was resampled.
    pub fn observe(
        &mut self,
        pose: CameraPose,
        detections: &[DetectionMessage],
        cloud: Option<&PointCloud>,
    ) -> Result<bool, ServiceError> {
        if let Some(c) = cloud {
            if !c.is_empty() {
                self.occupancy = self.occupancy.update(c, &self.region)?;
            }
        }
        let built = build_observation(&self.occupancy, &self.model, &pose, detections, &self.target_ids())?;
        for (id, obs) in &built.per_target {
            let t = self.config.targets.iter().find(|t| t.id == *id).expect("known target");
            let b = self.beliefs.iter_mut().find(|b| b.object_id() == *id).expect("belief per target");
            b.update(obs, t.alpha, t.beta)?;
        }
        self.robot.pose = pose;
        self.last_observation = Some(built.combined);
        let unfound = self.unfound_beliefs();
        if !unfound.is_empty() && self.graph.should_resample(&self.region, &unfound) {
            self.resample_graph()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Declare every unfound target detected in the latest observation as found, grounded at
    /// its belief's most likely cell.
    pub fn declare_found(&mut self) -> Result<Vec<FoundReport>, ServiceError> {
        let detected = self.last_observation.as_ref().map(|o| o.detected()).unwrap_or_default();
        let mut out = Vec::new();
        for b in &self.beliefs {
            let id = b.object_id();
            if self.robot.found.contains(&id) || !detected.contains(&id) {
                continue;
            }
            let cell = b.max_cell()?;
            out.push(FoundReport { object_id: id, cell, location: self.region.center(cell) });
        }
        for r in &out {
            self.robot.found.insert(r.object_id);
            self.found.insert(r.object_id, *r);
        }
        Ok(out)
    }

    pub fn plan(&mut self, cfg: &PlannerConfig) -> Result<mos3d_core::planner::PlanResult, ServiceError> {
        let ctx = PlanContext {
            beliefs: &self.beliefs,
            robot: &self.robot,
            graph: &self.graph,
            occupancy: &self.occupancy,
            model: &self.model,
            last_observation: self.last_observation.as_ref(),
        };
        Ok(plan(&ctx, cfg, &mut self.rng)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    /// `None` when every target has already been found.
    pub action: Option<Action>,
    pub goal: Option<CameraPose>,
    pub planning_time: f64,
    pub terminal: bool,
    pub found: Vec<FoundReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationReport {
    pub lifecycle: Lifecycle,
    pub duplicate: bool,
    pub found: Vec<ObjectId>,
    pub graph_resampled: bool,
}

pub struct Session {
    pub id: String,
    pub config: AgentConfig,
    lifecycle: Lifecycle,
    agent: Option<Agent>,
    planner: Option<PlannerConfig>,
    pending: Option<Action>,
    executing_since: Option<Instant>,
    last_seq: u64,
    events: broadcast::Sender<ServerEvent>,
}

impl Session {
    pub fn new(id: String, config: AgentConfig) -> Self {
        let (events, _) = broadcast::channel(1024);
        Self {
            id,
            config,
            lifecycle: Lifecycle::AwaitingRegion,
            agent: None,
            planner: None,
            pending: None,
            executing_since: None,
            last_seq: 0,
            events,
        }
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn agent(&self) -> Option<&Agent> {
        self.agent.as_ref()
    }

    pub fn agent_mut(&mut self) -> Option<&mut Agent> {
        self.agent.as_mut()
    }

    pub fn pending(&self) -> Option<Action> {
        self.pending
    }

    pub fn planner(&self) -> Option<&PlannerConfig> {
        self.planner.as_ref()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }

    pub fn publish(&self, ev: ServerEvent) {
        // no listeners is fine
        let _ = self.events.send(ev);
    }

    /// Abandon an executing action whose acknowledgment is overdue at `now`.
    pub fn expire(&mut self, now: Instant) {
        if self.lifecycle == Lifecycle::Executing {
            let limit = Duration::from_secs_f64(self.config.execution_timeout);
            if self.executing_since.is_some_and(|t| now.duration_since(t) >= limit) {
                log::warn!("session {}: pending action timed out", self.id);
                self.pending = None;
                self.executing_since = None;
                self.lifecycle = Lifecycle::Ready;
            }
        }
    }

    pub fn update_search_region(&mut self, cloud: &PointCloud, pose: Option<CameraPose>) -> Result<&Agent, ServiceError> {
        self.expire(Instant::now());
        match self.agent.as_mut() {
            None => {
                let agent = Agent::new(&self.config, cloud, pose)?;
                self.agent = Some(agent);
                self.lifecycle = Lifecycle::Ready;
            }
            Some(agent) => {
                agent.update_region(cloud)?;
                if let Some(p) = pose {
                    agent.robot.pose = p;
                }
            }
        }
        let agent = self.agent.as_ref().expect("agent present");
        self.publish(ServerEvent::GraphUpdated(agent.graph.clone()));
        Ok(agent)
    }

    pub fn process_observation(
        &mut self,
        seq: u64,
        pose: CameraPose,
        detections: &[DetectionMessage],
        cloud: Option<&PointCloud>,
    ) -> Result<ObservationReport, ServiceError> {
        self.expire(Instant::now());
        if seq != 0 && seq <= self.last_seq {
            return Ok(ObservationReport { lifecycle: self.lifecycle, duplicate: true, found: vec![], graph_resampled: false });
        }
        let Some(agent) = self.agent.as_mut() else {
            return Err(ServiceError::Precondition("no search region has been received".into()));
        };
        let resampled = agent.observe(pose, detections, cloud)?;
        let found: Vec<ObjectId> = agent.robot.found.iter().copied().collect();
        let snapshots: Vec<ServerEvent> = agent
            .beliefs
            .iter()
            .filter_map(|b| {
                let c = b.max_cell().ok()?;
                Some(ServerEvent::BeliefSnapshot { object_id: b.object_id(), max_location: agent.region.center(c), max_prob: b.prob_ground(c) })
            })
            .collect();
        let graph = resampled.then(|| agent.graph.clone());
        if seq != 0 {
            self.last_seq = seq;
        }
        self.pending = None;
        self.executing_since = None;
        self.lifecycle = Lifecycle::Ready;
        for ev in snapshots {
            self.publish(ev);
        }
        if let Some(g) = graph {
            self.publish(ServerEvent::GraphUpdated(g));
        }
        Ok(ObservationReport { lifecycle: self.lifecycle, duplicate: false, found, graph_resampled: resampled })
    }

    pub fn create_planner(&mut self, cfg: PlannerConfig) -> Result<(), ServiceError> {
        cfg.validate().map_err(|e| ServiceError::Validation(vec![e.to_string()]))?;
        self.planner = Some(cfg);
        Ok(())
    }

    pub fn plan_action(&mut self) -> Result<PlanOutcome, ServiceError> {
        self.expire(Instant::now());
        match self.lifecycle {
            Lifecycle::Ready => {}
            Lifecycle::Executing | Lifecycle::Planning => {
                return Err(ServiceError::Precondition("the last planned action has not been executed".into()))
            }
            Lifecycle::AwaitingRegion => return Err(ServiceError::Precondition("no search region has been received".into())),
        }
        let Some(cfg) = self.planner else {
            return Err(ServiceError::Precondition("no planner has been created".into()));
        };
        let agent = self.agent.as_mut().expect("ready sessions host an agent");
        if agent.all_found() {
            return Ok(PlanOutcome { action: None, goal: None, planning_time: 0.0, terminal: true, found: vec![] });
        }
        self.lifecycle = Lifecycle::Planning;
        let res = match agent.plan(&cfg) {
            Ok(r) => r,
            Err(e) => {
                self.lifecycle = Lifecycle::Ready;
                return Err(e);
            }
        };
        let found = if res.action == Action::Find { agent.declare_found()? } else { vec![] };
        let terminal = agent.all_found();
        for r in &found {
            self.publish(ServerEvent::FoundObject(*r));
        }
        self.pending = Some(res.action);
        self.executing_since = Some(Instant::now());
        self.lifecycle = Lifecycle::Executing;
        Ok(PlanOutcome { action: Some(res.action), goal: res.pose, planning_time: res.planning_time, terminal, found })
    }
}
