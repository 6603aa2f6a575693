//! Two-level search of a lobby: a 2D global planner that hands regions to local 3D agents.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mos3d_core::mcts::SearchParams;
use mos3d_core::model::{Action, ObjectId};
use mos3d_core::planner::PlannerConfig;
use mos3d_core::spatial::{CameraPose, Vec3};
use mos3d_service::hier::{
    detected_2d, fold_back, global_plan, project_fov_2d, spawn_local, Action2D, Cell2, GlobalBelief, Grid2D, HierParams, Pose2D,
    DIRECTIONS,
};
use mos3d_service::{AgentConfig, SearchService, TargetConfig};

use crate::error::{Result, SimError};
use crate::trial::grounded;
use crate::world::{make_world, ScenarioConfig, SimWorld};

#[derive(Clone, Debug)]
pub struct HierDemoConfig {
    pub scenario: ScenarioConfig,
    /// Coarse 3D session covering the whole lobby; only used to turn camera frames into observed columns.
    pub global: AgentConfig,
    /// Template for the local agents; its center is replaced by the robot's cell.
    pub local: AgentConfig,
    pub hier: HierParams,
    pub search: SearchParams,
    pub planner: PlannerConfig,
    /// Simulated seconds for the whole episode.
    pub budget: f64,
    /// Camera height while moving on the global grid.
    pub camera_height: f64,
    /// Camera pitch while moving on the global grid, radians (negative looks down).
    pub camera_pitch: f64,
    pub max_global_steps: usize,
}

impl Default for HierDemoConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig { true_positive: 1.0, ..ScenarioConfig::lobby() };
        let targets = (1..=scenario.num_targets as ObjectId).map(TargetConfig::new).collect::<Vec<_>>();
        let global = AgentConfig {
            octree_size: 32,
            res: 0.2,
            region_size: scenario.region_size,
            center: scenario.center,
            targets: targets.clone(),
            init_samples: 500,
            ..AgentConfig::default()
        };
        let local = AgentConfig {
            octree_size: 32,
            res: 0.1,
            region_size: [3.2, 3.2, scenario.region_size[2]],
            center: scenario.center,
            targets,
            ..AgentConfig::default()
        };
        Self {
            scenario,
            global,
            local,
            hier: HierParams::default(),
            search: SearchParams { num_sims: 300, max_depth: 20, ..SearchParams::default() },
            planner: PlannerConfig::default(),
            budget: 180.0,
            camera_height: 1.0,
            camera_pitch: 0.0,
            max_global_steps: 400,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HierResult {
    pub success: bool,
    pub sim_time: f64,
    pub length: f64,
    pub planning_time: f64,
    pub global_steps: usize,
    pub local_episodes: usize,
}

struct Episode<'a> {
    cfg: &'a HierDemoConfig,
    service: SearchService,
    global_id: String,
    world: SimWorld,
    grid: Grid2D,
    beliefs: Vec<GlobalBelief>,
    rng: ChaCha8Rng,
    clock: f64,
    seq: u64,
    found: Vec<(ObjectId, Vec3)>,
    result: HierResult,
}

fn heading_of(yaw: f64) -> usize {
    let q = (yaw / std::f64::consts::FRAC_PI_2).round() as i64;
    q.rem_euclid(4) as usize
}

impl Episode<'_> {
    fn over_budget(&self) -> bool {
        self.clock >= self.cfg.budget
    }

    fn fold(&mut self, session: &str) -> Result<()> {
        let (region, obs) = self.service.with_agent(session, |a| (a.region, a.last_observation.clone()))?;
        let Some(obs) = obs else { return Ok(()) };
        let observed = project_fov_2d(&self.grid, &region, &obs);
        let h = &self.cfg.hier;
        for gb in &mut self.beliefs {
            let detected = detected_2d(&self.grid, &region, &obs, gb.object_id);
            *gb = fold_back(gb, &self.grid, &observed, &detected, h.alpha, h.beta);
        }
        Ok(())
    }

    /// Take a frame from the current pose and fold it into the global belief.
    fn observe_global(&mut self) -> Result<()> {
        let dets = self.world.observe(&mut self.rng);
        self.seq += 1;
        self.service.process_observation(&self.global_id, self.seq, self.world.robot, &dets, None)?;
        self.fold(&self.global_id.clone())
    }

    fn pose2d(&self) -> Pose2D {
        let p = self.world.robot.position;
        let cell = self.grid.cell_of(p.x, p.y).and_then(|c| self.grid.nearest_free(c)).unwrap_or((0, 0));
        let f = self.world.robot.forward();
        Pose2D { cell, heading: heading_of(f.y.atan2(f.x)) }
    }

    fn move_to(&mut self, cell: Cell2, heading: usize) {
        let xy = self.grid.center(cell);
        let (dx, dy) = DIRECTIONS[heading];
        let yaw = (dy as f64).atan2(dx as f64);
        let goal = CameraPose::from_yaw_pitch(Vec3::new(xy[0], xy[1], self.cfg.camera_height), yaw, self.cfg.camera_pitch);
        let cost = self.world.step(&Action::Move(0), Some(goal));
        self.clock += cost.elapsed;
        self.result.length += cost.distance;
    }

    /// Hand control to a local 3D agent around the robot until it finishes or its budget runs out.
    fn local_episode(&mut self, center: Cell2) -> Result<bool> {
        self.result.local_episodes += 1;
        let spawn = spawn_local(&self.service, &self.global_id, &self.grid, &self.beliefs, center, &self.cfg.local)?;
        let id = spawn.session_id;
        self.service.update_search_region(&id, &self.world.cloud, Some(self.world.robot))?;
        self.service.create_planner(&id, self.cfg.planner)?;
        let deadline = (self.clock + self.cfg.hier.local_budget).min(self.cfg.budget);
        let mut seq = 0;
        let mut dets = self.world.observe(&mut self.rng);
        let mut done = false;
        while self.clock < deadline {
            seq += 1;
            self.service.process_observation(&id, seq, self.world.robot, &dets, None)?;
            self.fold(&id)?;
            let out = self.service.plan_action(&id)?;
            self.result.planning_time += out.planning_time;
            let Some(action) = out.action else { break };
            let cost = self.world.step(&action, out.goal);
            self.clock += cost.elapsed;
            if self.clock > self.cfg.budget {
                break;
            }
            self.result.length += cost.distance;
            self.found.extend(out.found.iter().map(|r| (r.object_id, r.location)));
            dets = self.world.observe(&mut self.rng);
            if out.terminal {
                done = true;
                break;
            }
        }
        self.service.close(&id)?;
        Ok(done)
    }
}

/// Run one hierarchical episode in a freshly generated lobby.
pub fn run_hier(cfg: &HierDemoConfig, seed: u64) -> Result<HierResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = make_world(&cfg.scenario, &mut rng)?;
    let start = world.robot.position;
    world.robot = CameraPose::from_yaw_pitch(Vec3::new(start.x, start.y, cfg.camera_height), cfg.scenario.start_yaw, cfg.camera_pitch);
    let service = SearchService::new();
    let global_id = service.create_agent("global", AgentConfig { seed, ..cfg.global.clone() })?;
    service.update_search_region(&global_id, &world.cloud, Some(world.robot))?;
    let occ = service.with_agent(&global_id, |a| a.occupancy.clone())?;
    let grid = Grid2D::from_occupancy(&occ, cfg.hier.cell_size, cfg.hier.obstacle_band)?;
    let beliefs = world.objects.iter().map(|o| GlobalBelief::uniform(o.id, &grid)).collect();
    let mut ep = Episode {
        cfg,
        service,
        global_id,
        world,
        grid,
        beliefs,
        rng,
        clock: 0.0,
        seq: 0,
        found: Vec::new(),
        result: HierResult::default(),
    };
    if cfg.budget > 0.0 {
        if ep.pose2d().cell == (0, 0) && ep.grid.is_obstacle((0, 0)) {
            return Err(SimError::Placement("robot starts outside free space".into()));
        }
        while !ep.over_budget() && ep.result.global_steps < cfg.max_global_steps {
            ep.observe_global()?;
            let pose = ep.pose2d();
            let t = std::time::Instant::now();
            let action = global_plan(&ep.grid, &ep.beliefs, pose, &cfg.hier, &cfg.search, &mut ep.rng)?;
            ep.result.planning_time += t.elapsed().as_secs_f64();
            ep.result.global_steps += 1;
            match action {
                Action2D::Move2D(d) => {
                    let to = (pose.cell.0 + DIRECTIONS[d].0, pose.cell.1 + DIRECTIONS[d].1);
                    let cell = if ep.grid.contains(to) && !ep.grid.is_obstacle(to) { to } else { pose.cell };
                    ep.move_to(cell, d);
                }
                Action2D::Stay | Action2D::Find2D => {
                    if ep.local_episode(pose.cell)? {
                        break;
                    }
                }
            }
        }
    }
    let tol = 2.0 * cfg.local.res;
    ep.result.sim_time = ep.clock.min(cfg.budget);
    ep.result.success = grounded(&ep.world, &ep.found, tol);
    Ok(ep.result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headings_snap_to_grid_axes() {
        assert_eq!(heading_of(0.1), 0);
        assert_eq!(heading_of(std::f64::consts::FRAC_PI_2), 1);
        assert_eq!(heading_of(-std::f64::consts::FRAC_PI_2), 3);
        assert_eq!(heading_of(3.1), 2);
    }

    #[test]
    fn zero_budget_does_nothing() {
        let cfg = HierDemoConfig { budget: 0.0, ..Default::default() };
        let r = run_hier(&cfg, 0).unwrap();
        assert!(!r.success);
        assert_eq!(r.global_steps, 0);
    }
}
