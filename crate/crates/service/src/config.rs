//! Agent configuration, readable from TOML.

use serde::{Deserialize, Serialize};

use mos3d_core::model::{DetectionMode, DetectorModel, ModelConfig, ObjectId};
use mos3d_core::spatial::{CellBox, FrustumParams, RegionSpec, Vec3};
use mos3d_core::view_graph::ViewGraphParams;

use crate::error::ServiceError;

/// Prior mass placed on the octree node containing a metric position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub position: [f64; 3],
    #[serde(default)]
    pub level: u8,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub id: ObjectId,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub prior: Vec<PriorEntry>,
}

fn default_alpha() -> f64 {
    1e5
}

fn default_beta() -> f64 {
    0.3
}

impl TargetConfig {
    pub fn new(id: ObjectId) -> Self {
        Self { id, alpha: default_alpha(), beta: default_beta(), prior: vec![] }
    }
}

/// Which cells of the octree make up the searchable region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchSpace {
    /// The `region_size` box around `center`.
    #[default]
    RegionBox,
    /// The bounding box of the received point cloud.
    CloudBounds,
    /// The cloud bounding box without its occupied cells.
    CloudBoundsFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub step_cost: f64,
    pub distance_cost: f64,
    pub find_reward: f64,
    pub find_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { step_cost: m.step_cost, distance_cost: m.distance_cost, find_reward: m.find_reward, find_penalty: m.find_penalty }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub octree_size: u32,
    pub res: f64,
    pub region_size: [f64; 3],
    pub center: [f64; 3],
    pub prior_from_occupancy: bool,
    pub occupancy_fill_height: bool,
    pub num_nodes: usize,
    pub sep: f64,
    pub inflation: f64,
    pub num_sims: usize,

    pub targets: Vec<TargetConfig>,
    pub camera: FrustumParams,
    pub detection_mode: DetectionMode,
    /// Detection range in meters; defaults to the camera's far plane.
    pub detection_range: Option<f64>,
    pub occlusion: bool,
    pub reward: RewardConfig,
    pub discount: f64,
    pub seed: u64,
    pub search_space: SearchSpace,
    /// Samples drawn when initializing beliefs over the search region.
    pub init_samples: usize,
    /// Octree level and weight of the occupancy-based prior.
    pub prior_level: u8,
    pub prior_weight: f64,
    pub min_points_per_cell: u32,
    /// Seconds an executing action may stay unacknowledged before the session returns to ready.
    pub execution_timeout: f64,
    pub graph_degree: usize,
    pub resample_threshold: f64,
    pub view_min_z: Option<f64>,
    pub view_max_z: Option<f64>,
    /// Offer in-place rotations to the planner besides moves.
    pub look_actions: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            octree_size: 32,
            res: 0.1,
            region_size: [3.2, 3.2, 3.2],
            center: [0.0, 0.0, 1.6],
            prior_from_occupancy: false,
            occupancy_fill_height: false,
            num_nodes: 10,
            sep: 0.75,
            inflation: 0.1,
            num_sims: 500,
            targets: vec![TargetConfig::new(1)],
            camera: FrustumParams::default(),
            detection_mode: DetectionMode::Box3d,
            detection_range: None,
            occlusion: true,
            reward: RewardConfig::default(),
            discount: 0.95,
            seed: 0,
            search_space: SearchSpace::RegionBox,
            init_samples: 3000,
            prior_level: 2,
            prior_weight: 100.0,
            min_points_per_cell: 1,
            execution_timeout: 600.0,
            graph_degree: 3,
            resample_threshold: 0.4,
            view_min_z: None,
            view_max_z: None,
            look_actions: false,
        }
    }
}

impl AgentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Validation(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every field, reporting all offending ones at once.
    pub fn validate(&self) -> Result<(), ServiceError> {
        let mut bad = Vec::new();
        if self.octree_size < 2 || !self.octree_size.is_power_of_two() {
            bad.push(format!("octree_size: {} is not a power of two >= 2", self.octree_size));
        }
        if !(self.res > 0.0 && self.res.is_finite()) {
            bad.push(format!("res: {} must be positive", self.res));
        }
        if self.region_size.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            bad.push(format!("region_size: {:?} must be positive", self.region_size));
        }
        if self.center.iter().any(|v| !v.is_finite()) {
            bad.push("center: must be finite".into());
        }
        if self.num_nodes == 0 {
            bad.push("num_nodes: must be at least 1".into());
        }
        if !(self.sep >= 0.0) {
            bad.push(format!("sep: {} must be nonnegative", self.sep));
        }
        if !(self.inflation >= 0.0) {
            bad.push(format!("inflation: {} must be nonnegative", self.inflation));
        }
        if self.num_sims == 0 {
            bad.push("num_sims: must be at least 1".into());
        }
        if self.targets.is_empty() {
            bad.push("targets: at least one target is required".into());
        }
        let mut ids: Vec<ObjectId> = self.targets.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bad.push("targets: duplicate object id".into());
        }
        for t in &self.targets {
            if !(t.alpha > t.beta && t.beta > 0.0 && t.alpha.is_finite()) {
                bad.push(format!("targets[{}]: need alpha > beta > 0", t.id));
            }
            if t.prior.iter().any(|p| !(p.value >= 0.0 && p.value.is_finite())) {
                bad.push(format!("targets[{}].prior: values must be nonnegative", t.id));
            }
        }
        if let Err(e) = self.camera.validate() {
            bad.push(format!("camera: {e}"));
        }
        if let Some(r) = self.detection_range {
            if !(r > 0.0) {
                bad.push("detection_range: must be positive".into());
            }
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            bad.push(format!("discount: {} outside (0, 1]", self.discount));
        }
        if self.init_samples == 0 {
            bad.push("init_samples: must be at least 1".into());
        }
        if !(self.prior_weight >= 0.0) {
            bad.push("prior_weight: must be nonnegative".into());
        }
        if !(self.execution_timeout > 0.0) {
            bad.push("execution_timeout: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            bad.push("resample_threshold: must lie in [0, 1]".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ServiceError::Validation(bad))
        }
    }

    /// The octree frame, centered on `center`. The octree governs when `region_size` disagrees.
    pub fn region(&self) -> Result<RegionSpec, ServiceError> {
        let extent = self.octree_size as f64 * self.res;
        if self.region_size.iter().any(|s| *s > extent + 1e-9) {
            log::warn!("region_size {:?} exceeds the octree extent {extent} m; clipping", self.region_size);
        }
        RegionSpec::centered(Vec3::from(self.center), self.res, self.octree_size).map_err(ServiceError::from)
    }

    /// Cells whose centers fall inside the `region_size` box around `center`.
    pub fn region_box(&self) -> Result<Option<CellBox>, ServiceError> {
        let region = self.region()?;
        let half = Vec3::from(self.region_size) / 2.0;
        let c = Vec3::from(self.center);
        let lo = region.to_grid(&(c - half));
        let hi = region.to_grid(&(c + half));
        let m = self.octree_size as i32;
        let first = |v: f64| ((v - 0.5).ceil() as i32).clamp(0, m);
        let last = |v: f64| ((v - 0.5).floor() as i32).clamp(-1, m - 1);
        let min = mos3d_core::spatial::GridCell::new(first(lo.x), first(lo.y), first(lo.z));
        let max = mos3d_core::spatial::GridCell::new(last(hi.x), last(hi.y), last(hi.z));
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Ok(None);
        }
        Ok(Some(CellBox::new(min, max)))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frustum: self.camera,
            detector: DetectorModel {
                alpha: self.targets.first().map_or(1e5, |t| t.alpha),
                beta: self.targets.first().map_or(0.3, |t| t.beta),
                true_positive: 1.0,
                range: self.detection_range,
                mode: self.detection_mode,
            },
            occlusion: self.occlusion,
            step_cost: self.reward.step_cost,
            distance_cost: self.reward.distance_cost,
            find_reward: self.reward.find_reward,
            find_penalty: self.reward.find_penalty,
            include_look: self.look_actions,
            ..ModelConfig::default()
        }
    }

    pub fn graph_params(&self) -> ViewGraphParams {
        ViewGraphParams {
            num_nodes: self.num_nodes,
            sep: self.sep,
            inflation: self.inflation,
            degree_cap: self.graph_degree,
            resample_threshold: self.resample_threshold,
            min_z: self.view_min_z,
            max_z: self.view_max_z,
            score_level: self.prior_level,
            ..ViewGraphParams::default()
        }
    }
}
