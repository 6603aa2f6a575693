//! The multi-object search POMDP: states, actions, transitions, observations and rewards.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::OccupancyOctree;
use crate::spatial::{facing, frustum_cells, occluded, yaw_pitch, CameraPose, FrustumParams, GridCell, Vec3};
use crate::view_graph::ViewGraph;

pub type ObjectId = u32;

/// Label of one voxel in a volumetric observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Free,
    Unknown,
    Object(ObjectId),
}

/// Labeled voxels seen from one camera pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumetricObservation {
    pub pose: CameraPose,
    /// Voxels in lexicographic cell order, each at most once.
    pub voxels: Vec<(GridCell, Label)>,
}

impl VolumetricObservation {
    /// Sorts the voxels; when a cell appears more than once the last label wins.
    pub fn new(pose: CameraPose, mut voxels: Vec<(GridCell, Label)>) -> Self {
        voxels.reverse();
        voxels.sort_by_key(|(c, _)| *c);
        voxels.dedup_by_key(|(c, _)| *c);
        Self { pose, voxels }
    }

    pub fn label(&self, cell: GridCell) -> Option<Label> {
        self.voxels
            .binary_search_by_key(&cell, |(c, _)| *c)
            .ok()
            .map(|i| self.voxels[i].1)
    }

    /// Ids of all objects labeled somewhere in the observation.
    pub fn detected(&self) -> BTreeSet<ObjectId> {
        self.voxels
            .iter()
            .filter_map(|(_, l)| match l {
                Label::Object(id) => Some(*id),
                _ => None,
            })
            .collect()
    }

    /// Cells labeled with `id`.
    pub fn cells_of(&self, id: ObjectId) -> impl Iterator<Item = GridCell> + '_ {
        self.voxels
            .iter()
            .filter(move |(_, l)| *l == Label::Object(id))
            .map(|(c, _)| *c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Detections are 3D boxes; only the cells inside the box carry the label.
    #[default]
    Box3d,
    /// Detections carry only a label, which is applied to every visible voxel.
    LabelOnly,
}

/// Sensor reliability for one object class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorModel {
    /// Belief update factor for voxels labeled with the object.
    pub alpha: f64,
    /// Belief update factor for voxels seen free (or labeled with another object).
    pub beta: f64,
    /// Probability that a visible object is actually reported.
    pub true_positive: f64,
    /// Maximum detection distance; `None` means the frustum's far plane.
    pub range: Option<f64>,
    pub mode: DetectionMode,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { alpha: 1e5, beta: 0.3, true_positive: 1.0, range: None, mode: DetectionMode::Box3d }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > self.beta && self.beta > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "detector needs alpha > beta > 0 (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.true_positive) {
            return Err(Error::Config(format!("true positive rate {} outside [0, 1]", self.true_positive)));
        }
        if let Some(r) = self.range {
            if !(r > 0.0) {
                return Err(Error::Config(format!("detection range {r} must be positive")));
            }
        }
        Ok(())
    }

    pub fn range_for(&self, frustum: &FrustumParams) -> f64 {
        self.range.unwrap_or(frustum.far)
    }
}

/// Everything the planning model needs besides the world itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub frustum: FrustumParams,
    /// Detector used inside planning simulations.
    pub detector: DetectorModel,
    /// Whether occupied cells block the view.
    pub occlusion: bool,
    pub step_cost: f64,
    /// Extra cost per meter travelled by a move.
    pub distance_cost: f64,
    pub find_reward: f64,
    pub find_penalty: f64,
    /// Standalone look actions: yaw and pitch counts of the discretized orientation set.
    pub look_yaws: u32,
    pub look_pitches: u32,
    pub include_look: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frustum: FrustumParams::default(),
            detector: DetectorModel::default(),
            occlusion: true,
            step_cost: 10.0,
            distance_cost: 0.0,
            find_reward: 1000.0,
            find_penalty: -1000.0,
            look_yaws: 6,
            look_pitches: 2,
            include_look: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.frustum.validate()?;
        self.detector.validate()?;
        if self.step_cost < 0.0 || self.distance_cost < 0.0 {
            return Err(Error::Config("step costs must be nonnegative".into()));
        }
        Ok(())
    }

    /// The discretized orientations available to standalone look actions.
    pub fn look_orientations(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let pitches: Vec<f64> = match self.look_pitches {
            0 => vec![],
            1 => vec![0.0],
            n => (0..n).map(|i| -0.5 + i as f64 / (n - 1) as f64 * 0.5).collect(),
        };
        for i in 0..self.look_yaws {
            let yaw = std::f64::consts::TAU * i as f64 / self.look_yaws as f64;
            for &p in &pitches {
                out.push((yaw, p));
            }
        }
        out
    }

    /// Whether a camera at `pose` would see the object in `cell` under this model.
    pub fn visible(&self, occ: &OccupancyOctree, pose: &CameraPose, cell: GridCell) -> bool {
        let center = occ.region().center(cell);
        if !self.frustum.contains(pose, &center) {
            return false;
        }
        if (center - pose.position).norm() > self.detector.range_for(&self.frustum) {
            return false;
        }
        !(self.occlusion && occluded(occ, &pose.position, cell))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: CameraPose,
    pub found: BTreeSet<ObjectId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosState {
    pub robot: RobotState,
    /// Object cells ordered by id.
    pub objects: Vec<(ObjectId, GridCell)>,
}

impl MosState {
    pub fn unfound(&self) -> impl Iterator<Item = (ObjectId, GridCell)> + '_ {
        self.objects.iter().copied().filter(|(id, _)| !self.robot.found.contains(id))
    }

    pub fn all_found(&self) -> bool {
        self.unfound().next().is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Move to a view-graph node, implicitly facing the nearest unfound object.
    Move(usize),
    /// Rotate in place to the given yaw and pitch (radians).
    Look { yaw: f64, pitch: f64 },
    Find,
    /// Keep the current viewpoint; only meaningful for the 2D global agent.
    Stay,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Move(n) => write!(f, "move({n})"),
            Action::Look { yaw, pitch } => write!(f, "look({yaw:.3},{pitch:.3})"),
            Action::Find => write!(f, "find"),
            Action::Stay => write!(f, "stay"),
        }
    }
}

/// Orientation at `position` facing the nearest of `targets`, if there is one.
pub fn face_nearest(position: &Vec3, targets: impl IntoIterator<Item = Vec3>) -> Option<nalgebra::UnitQuaternion<f64>> {
    let mut best: Option<(f64, Vec3)> = None;
    for t in targets {
        let d = (t - position).norm_squared();
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, t));
        }
    }
    best.map(|(_, t)| facing(position, &t))
}

pub fn transition(
    s: &MosState,
    a: &Action,
    graph: &ViewGraph,
    occ: &OccupancyOctree,
    cfg: &ModelConfig,
) -> Result<MosState> {
    let mut next = s.clone();
    match *a {
        Action::Move(id) => {
            let node = graph.node(id).ok_or_else(|| Error::IllegalAction(format!("no view node {id}")))?;
            let pos = node.position;
            let region = occ.region();
            next.robot.pose.position = pos;
            if let Some(q) = face_nearest(&pos, s.unfound().map(|(_, c)| region.center(c))) {
                next.robot.pose.orientation = q;
            }
        }
        Action::Look { yaw, pitch } => {
            next.robot.pose.orientation = yaw_pitch(yaw, pitch);
        }
        Action::Find => {
            let pose = s.robot.pose;
            for (id, c) in s.unfound() {
                if cfg.visible(occ, &pose, c) {
                    next.robot.found.insert(id);
                }
            }
        }
        Action::Stay => return Err(Error::IllegalAction("stay is not available to the 3D agent".into())),
    }
    Ok(next)
}

/// Simulate what the camera reports from the current pose.
///
/// Every frustum cell is labeled: unknown when out of detection range or occluded, the object's id
/// when an unfound object occupies it and the detector fires, free otherwise.
pub fn simulate_observation<R: Rng + ?Sized>(
    s: &MosState,
    occ: &OccupancyOctree,
    frustum: &FrustumParams,
    det: &DetectorModel,
    occlusion: bool,
    rng: &mut R,
) -> VolumetricObservation {
    let region = occ.region();
    let pose = s.robot.pose;
    let range = det.range_for(frustum);
    let mut voxels = Vec::new();
    for c in frustum_cells(region, frustum, &pose) {
        let center = region.center(c);
        let label = if (center - pose.position).norm() > range || (occlusion && occluded(occ, &pose.position, c)) {
            Label::Unknown
        } else {
            match s.unfound().find(|(_, oc)| *oc == c) {
                Some((id, _)) if det.true_positive >= 1.0 || rng.gen::<f64>() < det.true_positive => Label::Object(id),
                _ => Label::Free,
            }
        };
        voxels.push((c, label));
    }
    VolumetricObservation { pose, voxels }
}

pub fn reward(s: &MosState, a: &Action, next: &MosState, cfg: &ModelConfig) -> f64 {
    match a {
        Action::Find => {
            if next.robot.found.len() > s.robot.found.len() {
                cfg.find_reward
            } else {
                cfg.find_penalty
            }
        }
        Action::Move(_) => {
            -cfg.step_cost - cfg.distance_cost * (next.robot.pose.position - s.robot.pose.position).norm()
        }
        Action::Look { .. } | Action::Stay => -cfg.step_cost,
    }
}

/// Choose a move among graph nodes: uniformly among those strictly closer to some target than
/// `position`, or uniformly among all nodes when none is.
pub fn rollout_move<R: Rng + ?Sized>(position: &Vec3, targets: &[Vec3], graph: &ViewGraph, rng: &mut R) -> Option<usize> {
    if graph.is_empty() {
        return None;
    }
    let closer: Vec<usize> = graph
        .nodes()
        .iter()
        .filter(|n| targets.iter().any(|t| (n.position - t).norm() < (position - t).norm()))
        .map(|n| n.id)
        .collect();
    Some(if closer.is_empty() {
        rng.gen_range(0..graph.len())
    } else {
        closer[rng.gen_range(0..closer.len())]
    })
}

/// Heuristic rollout action: find when an unfound target is in view, otherwise move toward one.
pub fn rollout_policy<R: Rng + ?Sized>(
    s: &MosState,
    graph: &ViewGraph,
    occ: &OccupancyOctree,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<Action> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if s.unfound().any(|(_, c)| cfg.visible(occ, &s.robot.pose, c)) {
        return Ok(Action::Find);
    }
    let region = occ.region();
    let targets: Vec<Vec3> = s.unfound().map(|(_, c)| region.center(c)).collect();
    Ok(Action::Move(rollout_move(&s.robot.pose.position, &targets, graph, rng).expect("graph nonempty")))
}
