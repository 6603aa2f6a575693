//! Online action selection: POUCT over the search model, and the Random and Greedy baselines.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::UnitQuaternion;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::OctreeBelief;
use crate::error::{Error, Result};
use crate::mcts::{self, GenerativeModel, SearchParams};
use crate::model::{face_nearest, rollout_move, Action, ModelConfig, RobotState, VolumetricObservation};
use crate::occupancy::OccupancyOctree;
use crate::spatial::{yaw_pitch, CameraPose, GridCell, Vec3};
use crate::view_graph::ViewGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Pouct,
    Random,
    Greedy,
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pouct" => Ok(Self::Pouct),
            "random" => Ok(Self::Random),
            "greedy" => Ok(Self::Greedy),
            _ => Err(Error::Config(format!("unknown planner '{s}'"))),
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pouct => "pouct",
            Self::Random => "random",
            Self::Greedy => "greedy",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub num_sims: usize,
    pub max_depth: usize,
    pub exploration_const: f64,
    pub discount: f64,
    /// Parallel search trees merged at the root; 1 searches a single tree.
    pub workers: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { kind: PlannerKind::Pouct, num_sims: 500, max_depth: 10, exploration_const: 200.0, discount: 0.95, workers: 1 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sims == 0 || self.max_depth == 0 {
            return Err(Error::Config("planner needs num_sims >= 1 and max_depth >= 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        if !(self.exploration_const >= 0.0) {
            return Err(Error::Config("exploration constant must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Read-only inputs to one planning call.
#[derive(Clone, Copy)]
pub struct PlanContext<'a> {
    /// One belief per target object.
    pub beliefs: &'a [OctreeBelief],
    pub robot: &'a RobotState,
    pub graph: &'a ViewGraph,
    pub occupancy: &'a OccupancyOctree,
    pub model: &'a ModelConfig,
    /// The most recent environment observation, if any.
    pub last_observation: Option<&'a VolumetricObservation>,
}

impl PlanContext<'_> {
    fn unfound(&self) -> Vec<&OctreeBelief> {
        self.beliefs.iter().filter(|b| !self.robot.found.contains(&b.object_id())).collect()
    }

    /// Whether the latest observation labels a voxel with a target not yet found.
    pub fn detection_pending(&self) -> bool {
        self.last_observation
            .is_some_and(|o| o.detected().iter().any(|id| self.unfound().iter().any(|b| b.object_id() == *id)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub action: Action,
    /// Camera pose to execute for moves and looks.
    pub pose: Option<CameraPose>,
    pub planning_time: f64,
    /// Root actions considered, with visit counts and mean returns (POUCT only).
    pub actions: Vec<Action>,
    pub visits: Vec<u32>,
    pub values: Vec<f64>,
}

impl PlanResult {
    fn simple(action: Action, pose: Option<CameraPose>, start: Instant) -> Self {
        Self { action, pose, planning_time: start.elapsed().as_secs_f64(), actions: vec![], visits: vec![], values: vec![] }
    }
}

pub fn plan<R: Rng + ?Sized>(ctx: &PlanContext<'_>, cfg: &PlannerConfig, rng: &mut R) -> Result<PlanResult> {
    match cfg.kind {
        PlannerKind::Pouct => pouct_plan(ctx, cfg, rng),
        PlannerKind::Random => random_plan(ctx, rng),
        PlannerKind::Greedy => greedy_plan(ctx),
    }
}

#[derive(Clone)]
struct SimState {
    pose: CameraPose,
    /// Bit `i` set when target `i` has been found.
    found: u64,
    cells: Arc<[GridCell]>,
}

struct SearchModel<'a> {
    ctx: PlanContext<'a>,
    targets: Vec<&'a OctreeBelief>,
    actions: Vec<Action>,
    find_index: usize,
    all_mask: u64,
}

impl SearchModel<'_> {
    fn visible_mask(&self, pose: &CameraPose, cells: &[GridCell]) -> u64 {
        let mut mask = 0;
        for (i, c) in cells.iter().enumerate() {
            if self.ctx.model.visible(self.ctx.occupancy, pose, *c) {
                mask |= 1 << i;
            }
        }
        mask
    }

    fn unfound_centers(&self, s: &SimState) -> Vec<Vec3> {
        let region = self.ctx.occupancy.region();
        s.cells
            .iter()
            .enumerate()
            .filter(|(i, _)| s.found & (1 << i) == 0)
            .map(|(_, c)| region.center(*c))
            .collect()
    }
}

fn obs_key(mask: u64, cells: &[GridCell]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, c) in cells.iter().enumerate() {
        if mask & (1 << i) != 0 {
            for v in [i as i64, c.x as i64, c.y as i64, c.z as i64] {
                h ^= v as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

impl GenerativeModel for SearchModel<'_> {
    type State = SimState;

    fn num_actions(&self) -> usize {
        self.actions.len()
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng) -> Option<SimState> {
        let cells: Option<Vec<GridCell>> = self.targets.iter().map(|b| b.sample(rng).ok()).collect();
        Some(SimState { pose: self.ctx.robot.pose, found: 0, cells: cells?.into() })
    }

    fn step(&self, s: &SimState, action: usize, _rng: &mut ChaCha8Rng) -> (SimState, u64, f64, bool) {
        let cfg = self.ctx.model;
        let mut next = s.clone();
        let reward = match self.actions[action] {
            Action::Move(id) => {
                let p = self.ctx.graph.nodes()[id].position;
                next.pose.position = p;
                if let Some(q) = face_nearest(&p, self.unfound_centers(s)) {
                    next.pose.orientation = q;
                }
                -cfg.step_cost - cfg.distance_cost * (p - s.pose.position).norm()
            }
            Action::Look { yaw, pitch } => {
                next.pose.orientation = yaw_pitch(yaw, pitch);
                -cfg.step_cost
            }
            Action::Find => {
                let newly = self.visible_mask(&s.pose, &s.cells) & !s.found;
                next.found |= newly;
                if newly != 0 {
                    cfg.find_reward
                } else {
                    cfg.find_penalty
                }
            }
            Action::Stay => -cfg.step_cost,
        };
        let terminal = next.found == self.all_mask;
        let key = if terminal { 0 } else { obs_key(self.visible_mask(&next.pose, &next.cells), &next.cells) };
        (next, key, reward, terminal)
    }

    fn rollout_action(&self, s: &SimState, rng: &mut ChaCha8Rng) -> usize {
        if self.visible_mask(&s.pose, &s.cells) & !s.found != 0 {
            return self.find_index;
        }
        rollout_move(&s.pose.position, &self.unfound_centers(s), self.ctx.graph, rng).unwrap_or(self.find_index)
    }
}

/// Among the facings root simulations took after a move, the one that sees the most of their
/// unfound targets.
fn best_facing(model: &SearchModel<'_>, position: &Vec3, successors: &[SimState]) -> Option<UnitQuaternion<f64>> {
    const MAX_STATES: usize = 256;
    const MAX_CANDIDATES: usize = 48;
    let states = &successors[..successors.len().min(MAX_STATES)];
    let stride = (states.len() / MAX_CANDIDATES).max(1);
    let mut best: Option<(usize, UnitQuaternion<f64>)> = None;
    for cand in states.iter().step_by(stride) {
        let pose = CameraPose::new(*position, cand.pose.orientation);
        let seen = states.iter().filter(|s| model.visible_mask(&pose, &s.cells) & !s.found != 0).count();
        if best.map_or(true, |(b, _)| seen > b) {
            best = Some((seen, cand.pose.orientation));
        }
    }
    best.map(|(_, q)| q)
}

pub fn pouct_plan<R: Rng + ?Sized>(ctx: &PlanContext<'_>, cfg: &PlannerConfig, rng: &mut R) -> Result<PlanResult> {
    let start = Instant::now();
    cfg.validate()?;
    if ctx.graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let targets = ctx.unfound();
    if targets.is_empty() {
        return Err(Error::IllegalAction("every target has already been found".into()));
    }
    if targets.len() > 64 {
        return Err(Error::Config("at most 64 targets can be planned for".into()));
    }
    if targets.iter().any(|b| !(b.norm() > 0.0)) {
        return Err(Error::EmptyBelief);
    }
    let mut actions: Vec<Action> = (0..ctx.graph.len()).map(Action::Move).collect();
    if ctx.model.include_look {
        actions.extend(ctx.model.look_orientations().into_iter().map(|(yaw, pitch)| Action::Look { yaw, pitch }));
    }
    actions.push(Action::Find);
    let n = targets.len();
    let model = SearchModel {
        ctx: *ctx,
        targets,
        find_index: actions.len() - 1,
        actions,
        all_mask: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
    };
    let params = SearchParams {
        num_sims: cfg.num_sims,
        max_depth: cfg.max_depth,
        exploration: cfg.exploration_const,
        discount: cfg.discount,
        workers: cfg.workers,
    };
    let res = mcts::search(&model, &params, rng).ok_or(Error::EmptyBelief)?;
    let action = model.actions[res.best];
    let pose = match action {
        Action::Move(id) => {
            let p = ctx.graph.nodes()[id].position;
            let q = best_facing(&model, &p, &res.root_successors[res.best]).unwrap_or(ctx.robot.pose.orientation);
            Some(CameraPose::new(p, q))
        }
        Action::Look { yaw, pitch } => Some(CameraPose::new(ctx.robot.pose.position, yaw_pitch(yaw, pitch))),
        _ => None,
    };
    Ok(PlanResult {
        action,
        pose,
        planning_time: start.elapsed().as_secs_f64(),
        actions: model.actions.clone(),
        visits: res.visits,
        values: res.values,
    })
}

/// Move to a uniformly chosen node, facing the nearest object of a state drawn from the belief.
pub fn random_plan<R: Rng + ?Sized>(ctx: &PlanContext<'_>, rng: &mut R) -> Result<PlanResult> {
    let start = Instant::now();
    if ctx.graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if ctx.detection_pending() {
        return Ok(PlanResult::simple(Action::Find, None, start));
    }
    let id = rng.gen_range(0..ctx.graph.len());
    let p = ctx.graph.nodes()[id].position;
    let region = ctx.occupancy.region();
    let mut targets = Vec::new();
    for b in ctx.unfound() {
        targets.push(region.center(b.sample(rng)?));
    }
    let q = face_nearest(&p, targets).unwrap_or(ctx.robot.pose.orientation);
    Ok(PlanResult::simple(Action::Move(id), Some(CameraPose::new(p, q)), start))
}

/// Move to the node nearest the most likely location of any unfound target, facing it.
pub fn greedy_plan(ctx: &PlanContext<'_>) -> Result<PlanResult> {
    let start = Instant::now();
    if ctx.graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if ctx.detection_pending() {
        return Ok(PlanResult::simple(Action::Find, None, start));
    }
    let region = ctx.occupancy.region();
    let mut peaks = Vec::new();
    for b in ctx.unfound() {
        peaks.push(region.center(b.max_cell()?));
    }
    if peaks.is_empty() {
        return Err(Error::IllegalAction("every target has already been found".into()));
    }
    let mut best: Option<(f64, usize, Vec3)> = None;
    for n in ctx.graph.nodes() {
        for t in &peaks {
            let d = (n.position - t).norm();
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, n.id, *t));
            }
        }
    }
    let (_, id, t) = best.expect("graph and peaks nonempty");
    let p = ctx.graph.nodes()[id].position;
    Ok(PlanResult::simple(Action::Move(id), Some(CameraPose::look_at(p, &t)), start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;
    use crate::spatial::RegionSpec;
    use crate::view_graph::ViewNode;
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    fn region() -> RegionSpec {
        RegionSpec::new(Vec3::zeros(), 0.1, 16).unwrap()
    }

    fn point_mass(id: u32, c: GridCell) -> OctreeBelief {
        let mut vals = vec![0.0; 16 * 16 * 16];
        vals[((c.x * 16 + c.y) * 16 + c.z) as usize] = 1.0;
        OctreeBelief::from_dense(id, 16, &vals).unwrap()
    }

    fn graph(points: &[Vec3]) -> ViewGraph {
        ViewGraph::from_nodes(points.iter().enumerate().map(|(i, p)| ViewNode { id: i, position: *p, score: 0.0 }).collect(), vec![])
    }

    fn robot(pose: CameraPose) -> RobotState {
        RobotState { pose, found: BTreeSet::new() }
    }

    #[test]
    fn finds_point_mass_in_view() {
        let occ = OccupancyOctree::empty(region());
        let obj = GridCell::new(10, 8, 8);
        let cam = Vec3::new(0.35, 0.85, 0.85);
        let beliefs = [point_mass(1, obj)];
        let r = robot(CameraPose::look_at(cam, &region().center(obj)));
        let g = graph(&[cam, Vec3::new(0.05, 0.05, 0.05)]);
        let model = ModelConfig::default();
        let ctx = PlanContext { beliefs: &beliefs, robot: &r, graph: &g, occupancy: &occ, model: &model, last_observation: None };
        let cfg = PlannerConfig { num_sims: 200, ..Default::default() };
        let res = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(res.action, Action::Find);
        assert_eq!(res.visits.iter().sum::<u32>(), 200);
        let find = res.actions.iter().position(|a| *a == Action::Find).unwrap();
        assert!(res.values.iter().all(|v| *v <= res.values[find]));
    }

    #[test]
    fn moves_to_only_covering_node() {
        // a wall blocks the view from node 0; node 1 sees the object
        let r = region();
        let wall: Vec<GridCell> = (0..16).flat_map(|y| (0..16).map(move |z| GridCell::new(6, y, z))).collect();
        let occ = OccupancyOctree::from_cells(r, &wall);
        let obj = GridCell::new(12, 8, 8);
        let beliefs = [point_mass(1, obj)];
        let n0 = Vec3::new(0.25, 0.85, 0.85);
        let n1 = Vec3::new(0.95, 0.85, 0.85);
        let rb = robot(CameraPose::look_at(n0, &r.center(obj)));
        let g = graph(&[n0, n1]);
        let model = ModelConfig::default();
        let ctx = PlanContext { beliefs: &beliefs, robot: &rb, graph: &g, occupancy: &occ, model: &model, last_observation: None };
        let cfg = PlannerConfig { num_sims: 300, ..Default::default() };
        let res = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(res.action, Action::Move(1));
        let pose = res.pose.unwrap();
        assert!(model.visible(&occ, &pose, obj));
        // two-step value oracle: move(1) then find beats every alternative
        let move_find = -10.0 + 0.95 * 1000.0;
        assert!((res.values[1] - move_find).abs() < 50.0, "{:?}", res.values);
    }

    #[test]
    fn pouct_seeded() {
        let occ = OccupancyOctree::empty(region());
        let beliefs = [OctreeBelief::uniform(1, 16).unwrap(), OctreeBelief::uniform(2, 16).unwrap()];
        let rb = robot(CameraPose::look_at(Vec3::new(0.8, 0.8, 0.8), &Vec3::zeros()));
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.1 + 0.3 * i as f64, 0.5, 0.8)).collect();
        let g = graph(&pts);
        let model = ModelConfig::default();
        let ctx = PlanContext { beliefs: &beliefs, robot: &rb, graph: &g, occupancy: &occ, model: &model, last_observation: None };
        let cfg = PlannerConfig { num_sims: 100, ..Default::default() };
        let a = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!((a.action, a.pose, &a.visits), (b.action, b.pose, &b.visits));
        let cfg = PlannerConfig { workers: 3, ..cfg };
        let a = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = pouct_plan(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!((a.action, &a.visits), (b.action, &b.visits));
        assert_eq!(a.visits.iter().sum::<u32>(), 100);
    }

    #[test]
    fn empty_inputs_error() {
        let occ = OccupancyOctree::empty(region());
        let beliefs = [OctreeBelief::from_dense(1, 16, &vec![0.0; 4096]).unwrap()];
        let rb = robot(CameraPose::look_at(Vec3::zeros(), &Vec3::x()));
        let model = ModelConfig::default();
        let g = graph(&[Vec3::new(0.5, 0.5, 0.5)]);
        let ctx = PlanContext { beliefs: &beliefs, robot: &rb, graph: &g, occupancy: &occ, model: &model, last_observation: None };
        assert_eq!(pouct_plan(&ctx, &PlannerConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err(), Error::EmptyBelief);
        let empty = ViewGraph::default();
        let ctx = PlanContext { graph: &empty, ..ctx };
        assert_eq!(random_plan(&ctx, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err(), Error::EmptyGraph);
        assert_eq!(greedy_plan(&ctx).unwrap_err(), Error::EmptyGraph);
    }

    #[test]
    fn random_is_uniform_and_finds_on_detection() {
        let occ = OccupancyOctree::empty(region());
        let beliefs = [OctreeBelief::uniform(1, 16).unwrap()];
        let rb = robot(CameraPose::look_at(Vec3::zeros(), &Vec3::x()));
        let model = ModelConfig::default();
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.1 + 0.3 * i as f64, 0.5, 0.8)).collect();
        let g = graph(&pts);
        let ctx = PlanContext { beliefs: &beliefs, robot: &rb, graph: &g, occupancy: &occ, model: &model, last_observation: None };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            match random_plan(&ctx, &mut rng).unwrap().action {
                Action::Move(i) => counts[i] += 1,
                a => panic!("unexpected {a}"),
            }
        }
        let sd = (10_000.0f64 * 0.2 * 0.8).sqrt();
        assert!(counts.iter().all(|c| (*c as f64 - 2000.0).abs() < 3.0 * sd), "{counts:?}");

        let single = graph(&pts[..1]);
        let ctx1 = PlanContext { graph: &single, ..ctx };
        assert_eq!(random_plan(&ctx1, &mut rng).unwrap().action, Action::Move(0));

        let seen = VolumetricObservation::new(rb.pose, vec![(GridCell::new(3, 3, 3), Label::Object(1))]);
        let ctx2 = PlanContext { last_observation: Some(&seen), ..ctx };
        assert_eq!(random_plan(&ctx2, &mut rng).unwrap().action, Action::Find);
        assert_eq!(greedy_plan(&ctx2).unwrap().action, Action::Find);
        let other = VolumetricObservation::new(rb.pose, vec![(GridCell::new(3, 3, 3), Label::Object(9))]);
        let ctx3 = PlanContext { last_observation: Some(&other), ..ctx };
        assert_ne!(greedy_plan(&ctx3).unwrap().action, Action::Find);
    }

    #[test]
    fn greedy_matches_exhaustive_oracle() {
        let r = region();
        let occ = OccupancyOctree::empty(r);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = ModelConfig::default();
        let rb = robot(CameraPose::look_at(Vec3::zeros(), &Vec3::x()));
        for _ in 0..50 {
            let cells: Vec<GridCell> = (0..2).map(|_| GridCell::new(rng.gen_range(0..16), rng.gen_range(0..16), rng.gen_range(0..16))).collect();
            let beliefs = [point_mass(1, cells[0]), point_mass(2, cells[1])];
            let pts: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.gen_range(0.0..1.6), rng.gen_range(0.0..1.6), rng.gen_range(0.0..1.6))).collect();
            let g = graph(&pts);
            let ctx = PlanContext { beliefs: &beliefs, robot: &rb, graph: &g, occupancy: &occ, model: &model, last_observation: None };
            let mut best = (f64::INFINITY, 0);
            for (i, p) in pts.iter().enumerate() {
                for c in &cells {
                    let d = (p - r.center(*c)).norm();
                    if d < best.0 {
                        best = (d, i);
                    }
                }
            }
            assert_eq!(greedy_plan(&ctx).unwrap().action, Action::Move(best.1));
        }
    }
}
