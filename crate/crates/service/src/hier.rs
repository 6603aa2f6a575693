//! Two-level search: a coarse 2D global agent over the floor plan that hands control to a 3D
//! local agent through its stay action.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mos3d_core::belief::PriorValMap;
use mos3d_core::mcts::{search, GenerativeModel, SearchParams};
use mos3d_core::model::{Label, ObjectId, VolumetricObservation};
use mos3d_core::occupancy::OccupancyOctree;
use mos3d_core::spatial::{LevelCell, RegionSpec, Vec3};

use crate::config::{AgentConfig, PriorEntry, TargetConfig};
use crate::error::ServiceError;
use crate::service::SearchService;
use crate::session::ServerEvent;

pub type Cell2 = (i32, i32);

/// Unit steps of the four move directions; heading `k` faces `k * 90` degrees from +x.
pub const DIRECTIONS: [Cell2; 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Ground-plane grid with obstacle flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    origin: [f64; 2],
    cell_size: f64,
    width: i32,
    height: i32,
    obstacle: Vec<bool>,
}

impl Grid2D {
    pub fn new(origin: [f64; 2], cell_size: f64, width: i32, height: i32) -> Result<Self, ServiceError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) || width <= 0 || height <= 0 {
            return Err(ServiceError::BadRequest("grid needs a positive cell size and dimensions".into()));
        }
        Ok(Self { origin, cell_size, width, height, obstacle: vec![false; (width * height) as usize] })
    }

    /// Project occupancy onto the floor: the grid spans the observed bounds in x and y, and a
    /// cell is an obstacle when an occupied voxel centered in the height band `[z_lo, z_hi]`
    /// lies over it.
    pub fn from_occupancy(occ: &OccupancyOctree, cell_size: f64, band: [f64; 2]) -> Result<Self, ServiceError> {
        let region = occ.region();
        let bounds = occ
            .observed_bounds()
            .ok_or_else(|| ServiceError::Precondition("occupancy has no observed bounds".into()))?;
        let lo = region.from_grid(&Vec3::new(bounds.min.x as f64, bounds.min.y as f64, 0.0));
        let hi = region.from_grid(&Vec3::new(bounds.max.x as f64 + 1.0, bounds.max.y as f64 + 1.0, 0.0));
        let width = (((hi.x - lo.x) / cell_size) - 1e-9).ceil().max(1.0) as i32;
        let height = (((hi.y - lo.y) / cell_size) - 1e-9).ceil().max(1.0) as i32;
        let mut grid = Self::new([lo.x, lo.y], cell_size, width, height)?;
        for c in occ.occupied_cells() {
            let p = region.center(c);
            if p.z < band[0] || p.z > band[1] {
                continue;
            }
            if let Some(g) = grid.cell_of(p.x, p.y) {
                grid.set_obstacle(g, true);
            }
        }
        Ok(grid)
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.obstacle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacle.is_empty()
    }

    pub fn contains(&self, c: Cell2) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height
    }

    fn index(&self, c: Cell2) -> usize {
        (c.0 * self.height + c.1) as usize
    }

    fn cell_at(&self, i: usize) -> Cell2 {
        (i as i32 / self.height, i as i32 % self.height)
    }

    pub fn is_obstacle(&self, c: Cell2) -> bool {
        !self.contains(c) || self.obstacle[self.index(c)]
    }

    pub fn set_obstacle(&mut self, c: Cell2, v: bool) {
        if self.contains(c) {
            let i = self.index(c);
            self.obstacle[i] = v;
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell2> {
        let c = (((x - self.origin[0]) / self.cell_size).floor() as i32, ((y - self.origin[1]) / self.cell_size).floor() as i32);
        self.contains(c).then_some(c)
    }

    pub fn center(&self, c: Cell2) -> [f64; 2] {
        [self.origin[0] + (c.0 as f64 + 0.5) * self.cell_size, self.origin[1] + (c.1 as f64 + 0.5) * self.cell_size]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell2> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    /// The free cell nearest to `c` (itself when free).
    pub fn nearest_free(&self, c: Cell2) -> Option<Cell2> {
        self.cells().filter(|g| !self.is_obstacle(*g)).min_by_key(|g| ((g.0 - c.0).pow(2) + (g.1 - c.1).pow(2), *g))
    }
}

/// One target's distribution over the grid. Obstacle cells keep their mass, since objects rest
/// on furniture the robot cannot drive through.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalBelief {
    pub object_id: ObjectId,
    probs: Vec<f64>,
}

impl GlobalBelief {
    pub fn uniform(object_id: ObjectId, grid: &Grid2D) -> Self {
        let n = grid.len();
        Self { object_id, probs: vec![1.0 / n as f64; n] }
    }

    pub fn from_weights(object_id: ObjectId, grid: &Grid2D, weights: &[f64]) -> Result<Self, ServiceError> {
        if weights.len() != grid.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ServiceError::BadRequest("one finite nonnegative weight per grid cell is required".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ServiceError::Core(mos3d_core::Error::EmptyBelief));
        }
        Ok(Self { object_id, probs: weights.iter().map(|w| w / total).collect() })
    }

    pub fn prob(&self, grid: &Grid2D, c: Cell2) -> f64 {
        if grid.contains(c) {
            self.probs[grid.index(c)]
        } else {
            0.0
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Most likely cell; ties go to the first cell in grid order.
    pub fn argmax(&self, grid: &Grid2D) -> Cell2 {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        grid.cell_at(best)
    }

    pub fn sample<R: Rng + ?Sized>(&self, grid: &Grid2D, rng: &mut R) -> Cell2 {
        let mut u = rng.gen::<f64>() * self.total();
        for (i, p) in self.probs.iter().enumerate() {
            if u < *p {
                return grid.cell_at(i);
            }
            u -= p;
        }
        let last = self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        grid.cell_at(last)
    }
}

fn column_of(grid: &Grid2D, region: &RegionSpec, v: mos3d_core::spatial::GridCell) -> Option<Cell2> {
    let p = region.center(v);
    grid.cell_of(p.x, p.y)
}

/// Cells whose column holds at least one voxel labeled free or detected.
pub fn project_fov_2d(grid: &Grid2D, region: &RegionSpec, obs: &VolumetricObservation) -> BTreeSet<Cell2> {
    obs.voxels
        .iter()
        .filter(|(_, l)| *l != Label::Unknown)
        .filter_map(|(v, _)| column_of(grid, region, *v))
        .collect()
}

/// Cells whose column holds a voxel labeled as object `id`.
pub fn detected_2d(grid: &Grid2D, region: &RegionSpec, obs: &VolumetricObservation, id: ObjectId) -> BTreeSet<Cell2> {
    obs.voxels
        .iter()
        .filter(|(_, l)| *l == Label::Object(id))
        .filter_map(|(v, _)| column_of(grid, region, *v))
        .collect()
}

/// Weight detected cells by `alpha`, the other observed cells by `beta`, and renormalize.
pub fn fold_back(
    gb: &GlobalBelief,
    grid: &Grid2D,
    observed: &BTreeSet<Cell2>,
    detected: &BTreeSet<Cell2>,
    alpha: f64,
    beta: f64,
) -> GlobalBelief {
    if observed.is_empty() && detected.is_empty() {
        return gb.clone();
    }
    let mut probs = gb.probs.clone();
    for c in observed.iter().filter(|c| grid.contains(**c) && !detected.contains(c)) {
        probs[grid.index(*c)] *= beta;
    }
    for c in detected.iter().filter(|c| grid.contains(**c)) {
        probs[grid.index(*c)] *= alpha;
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return gb.clone();
    }
    probs.iter_mut().for_each(|p| *p /= total);
    GlobalBelief { object_id: gb.object_id, probs }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HierParams {
    /// Side of a global grid cell in meters.
    pub cell_size: f64,
    /// Occupied voxels centered in this height band make a grid cell impassable.
    pub obstacle_band: [f64; 2],
    pub fov_deg: f64,
    /// Reach of the 2D field of view in meters.
    pub range: f64,
    /// Half side of the square handed to a local agent, in meters.
    pub footprint: f64,
    pub step_cost: f64,
    pub find_reward: f64,
    pub find_penalty: f64,
    /// Reward of a stay whose local footprint holds no unfound object.
    pub stay_penalty: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Simulated seconds a local agent may run before control returns to the global level.
    pub local_budget: f64,
}

impl Default for HierParams {
    fn default() -> Self {
        Self {
            cell_size: 0.3,
            obstacle_band: [0.05, 1.0],
            fov_deg: 60.0,
            range: 2.0,
            footprint: 1.6,
            step_cost: 10.0,
            find_reward: 1000.0,
            find_penalty: -1000.0,
            stay_penalty: -1000.0,
            alpha: 1e5,
            beta: 0.3,
            local_budget: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pose2D {
    pub cell: Cell2,
    pub heading: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action2D {
    Move2D(usize),
    Stay,
    Find2D,
}

impl Action2D {
    fn from_index(i: usize) -> Self {
        match i {
            0..=3 => Action2D::Move2D(i),
            4 => Action2D::Stay,
            _ => Action2D::Find2D,
        }
    }
}

/// Cells inside the sector in front of the robot, excluding its own cell.
pub fn fov_2d(grid: &Grid2D, pose: &Pose2D, params: &HierParams) -> Vec<Cell2> {
    let reach = (params.range / grid.cell_size()).ceil() as i32;
    let (hx, hy) = DIRECTIONS[pose.heading % 4];
    let half = params.fov_deg.to_radians() / 2.0;
    let mut out = Vec::new();
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            let c = (pose.cell.0 + dx, pose.cell.1 + dy);
            if (dx == 0 && dy == 0) || !grid.contains(c) {
                continue;
            }
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if d * grid.cell_size() > params.range {
                continue;
            }
            let cos = (dx * hx + dy * hy) as f64 / d;
            if cos >= half.cos() - 1e-12 {
                out.push(c);
            }
        }
    }
    out
}

/// Whether `c` lies in the square a local agent centered at `center` would search.
pub fn in_footprint(grid: &Grid2D, center: Cell2, c: Cell2, params: &HierParams) -> bool {
    let a = grid.center(center);
    let b = grid.center(c);
    (a[0] - b[0]).abs() <= params.footprint && (a[1] - b[1]).abs() <= params.footprint
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub robot: Pose2D,
    pub objects: Vec<Cell2>,
    pub found: Vec<bool>,
}

/// The 2D search problem handed to the tree search. Actions 0..4 move, 4 stays, 5 finds.
pub struct GlobalModel<'a> {
    pub grid: &'a Grid2D,
    pub beliefs: &'a [GlobalBelief],
    pub robot: Pose2D,
    pub params: HierParams,
}

impl GlobalModel<'_> {
    fn hash_obs(items: &[(usize, Cell2)], tag: u8) -> u64 {
        let mut h = DefaultHasher::new();
        tag.hash(&mut h);
        items.hash(&mut h);
        h.finish()
    }
}

impl GenerativeModel for GlobalModel<'_> {
    type State = GlobalState;

    fn num_actions(&self) -> usize {
        6
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng) -> Option<GlobalState> {
        let objects: Vec<Cell2> = self.beliefs.iter().map(|b| b.sample(self.grid, rng)).collect();
        Some(GlobalState { robot: self.robot, found: vec![false; objects.len()], objects })
    }

    fn step(&self, s: &GlobalState, action: usize, _rng: &mut ChaCha8Rng) -> (GlobalState, u64, f64, bool) {
        let p = &self.params;
        let mut next = s.clone();
        let (reward, seen, tag) = match Action2D::from_index(action) {
            Action2D::Move2D(d) => {
                let (dx, dy) = DIRECTIONS[d];
                let to = (s.robot.cell.0 + dx, s.robot.cell.1 + dy);
                next.robot.heading = d;
                if !self.grid.is_obstacle(to) {
                    next.robot.cell = to;
                }
                let fov = fov_2d(self.grid, &next.robot, p);
                let seen: Vec<(usize, Cell2)> = (0..s.objects.len())
                    .filter(|&i| !s.found[i] && fov.contains(&s.objects[i]))
                    .map(|i| (i, s.objects[i]))
                    .collect();
                (-p.step_cost, seen, 0)
            }
            Action2D::Stay => {
                let hit: Vec<usize> = (0..s.objects.len())
                    .filter(|&i| !s.found[i] && in_footprint(self.grid, s.robot.cell, s.objects[i], p))
                    .collect();
                hit.iter().for_each(|&i| next.found[i] = true);
                let r = if hit.is_empty() { p.stay_penalty } else { p.find_reward };
                (r, hit.iter().map(|&i| (i, s.objects[i])).collect(), 1)
            }
            Action2D::Find2D => {
                let fov = fov_2d(self.grid, &s.robot, p);
                let hit: Vec<usize> = (0..s.objects.len()).filter(|&i| !s.found[i] && fov.contains(&s.objects[i])).collect();
                hit.iter().for_each(|&i| next.found[i] = true);
                let r = if hit.is_empty() { p.find_penalty } else { p.find_reward };
                (r, hit.iter().map(|&i| (i, s.objects[i])).collect(), 2)
            }
        };
        let done = next.found.iter().all(|f| *f);
        (next, Self::hash_obs(&seen, tag), reward, done)
    }

    /// Stay when an unfound object is within the local footprint, otherwise move uniformly
    /// among the steps that bring the robot strictly closer to the nearest unfound object.
    fn rollout_action(&self, s: &GlobalState, rng: &mut ChaCha8Rng) -> usize {
        let unfound: Vec<Cell2> = (0..s.objects.len()).filter(|&i| !s.found[i]).map(|i| s.objects[i]).collect();
        if unfound.iter().any(|c| in_footprint(self.grid, s.robot.cell, *c, &self.params)) {
            return 4;
        }
        let dist = |a: Cell2| unfound.iter().map(|c| (c.0 - a.0).abs() + (c.1 - a.1).abs()).min().unwrap_or(0);
        let here = dist(s.robot.cell);
        let closer: Vec<usize> = (0..4)
            .filter(|&d| {
                let to = (s.robot.cell.0 + DIRECTIONS[d].0, s.robot.cell.1 + DIRECTIONS[d].1);
                !self.grid.is_obstacle(to) && dist(to) < here
            })
            .collect();
        if closer.is_empty() {
            rng.gen_range(0..4)
        } else {
            closer[rng.gen_range(0..closer.len())]
        }
    }
}

/// Choose the next global action by tree search over the 2D model.
pub fn global_plan<R: Rng + ?Sized>(
    grid: &Grid2D,
    beliefs: &[GlobalBelief],
    robot: Pose2D,
    params: &HierParams,
    search_params: &SearchParams,
    rng: &mut R,
) -> Result<Action2D, ServiceError> {
    if beliefs.is_empty() {
        return Err(ServiceError::Core(mos3d_core::Error::EmptyBelief));
    }
    if beliefs.iter().any(|b| !(b.total() > 0.0)) {
        return Err(ServiceError::Core(mos3d_core::Error::EmptyBelief));
    }
    let model = GlobalModel { grid, beliefs, robot, params: *params };
    let res = search(&model, search_params, rng).ok_or_else(|| ServiceError::Precondition("global search produced no action".into()))?;
    Ok(Action2D::from_index(res.best))
}

/// Prior for a local octree: every level-`level` node overlapping the search box gets an equal
/// share of the global mass of the grid cell under its center column. Nodes over no grid cell
/// get zero.
pub fn local_prior(
    grid: &Grid2D,
    gb: &GlobalBelief,
    region: &RegionSpec,
    search_box: &mos3d_core::spatial::CellBox,
    level: u8,
) -> Result<PriorValMap, ServiceError> {
    if level > region.depth() {
        return Err(ServiceError::BadRequest(format!("prior level {level} exceeds the octree depth")));
    }
    let span = 1i32 << level;
    let lo = (search_box.min.x / span, search_box.min.y / span, search_box.min.z / span);
    let hi = (search_box.max.x / span, search_box.max.y / span, search_box.max.z / span);
    let mut keys: BTreeMap<LevelCell, Option<Cell2>> = BTreeMap::new();
    for x in lo.0..=hi.0 {
        for y in lo.1..=hi.1 {
            for z in lo.2..=hi.2 {
                let k = LevelCell { x, y, z, level };
                let p = region.cell_to_metric(k)?;
                keys.insert(k, grid.cell_of(p.x, p.y));
            }
        }
    }
    let mut counts: BTreeMap<Cell2, usize> = BTreeMap::new();
    for c in keys.values().flatten() {
        *counts.entry(*c).or_default() += 1;
    }
    Ok(keys
        .into_iter()
        .map(|(k, c)| (k, c.map_or(0.0, |c| gb.prob(grid, c) / counts[&c] as f64)))
        .collect())
}

/// Configuration of a local agent centered over `center`. Targets take their prior from the
/// global beliefs; detector parameters come from matching targets of `template`.
pub fn local_config(
    grid: &Grid2D,
    beliefs: &[GlobalBelief],
    center: Cell2,
    template: &AgentConfig,
) -> Result<(AgentConfig, Vec<(ObjectId, PriorValMap)>), ServiceError> {
    if !grid.contains(center) {
        return Err(ServiceError::BadRequest(format!("local center {center:?} lies outside the global grid")));
    }
    let xy = grid.center(center);
    let mut cfg = template.clone();
    cfg.center = [xy[0], xy[1], template.center[2]];
    cfg.prior_from_occupancy = false;
    let region = cfg.region()?;
    let search_box = cfg
        .region_box()?
        .ok_or_else(|| ServiceError::Validation(vec!["region_size: covers no octree cell".into()]))?;
    let mut priors = Vec::new();
    let mut targets = Vec::new();
    for gb in beliefs {
        let prior = local_prior(grid, gb, &region, &search_box, cfg.prior_level)?;
        let mut t = template
            .targets
            .iter()
            .find(|t| t.id == gb.object_id)
            .cloned()
            .unwrap_or_else(|| TargetConfig::new(gb.object_id));
        t.prior = prior
            .iter()
            .map(|(k, v)| {
                let p = region.cell_to_metric(*k).expect("prior keys lie in the region");
                PriorEntry { position: [p.x, p.y, p.z], level: k.level, value: *v }
            })
            .collect();
        targets.push(t);
        priors.push((gb.object_id, prior));
    }
    cfg.targets = targets;
    Ok((cfg, priors))
}

/// A local agent created for one stay action.
#[derive(Clone, Debug)]
pub struct LocalSpawn {
    pub session_id: String,
    pub config: AgentConfig,
    pub priors: Vec<(ObjectId, PriorValMap)>,
}

/// Create the local session and ask the parent's listeners for its search region.
pub fn spawn_local(
    service: &SearchService,
    parent: &str,
    grid: &Grid2D,
    beliefs: &[GlobalBelief],
    center: Cell2,
    template: &AgentConfig,
) -> Result<LocalSpawn, ServiceError> {
    let (config, priors) = local_config(grid, beliefs, center, template)?;
    let session_id = service.create_agent("", config.clone())?;
    service.publish(
        parent,
        ServerEvent::LocalRegionRequest {
            local_session: session_id.clone(),
            center: Vec3::from(config.center),
            region_size: Vec3::from(config.region_size),
        },
    )?;
    Ok(LocalSpawn { session_id, config, priors })
}
