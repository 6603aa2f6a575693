//! The simulated environment: scene, hidden targets, robot camera and detector.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use mos3d_core::cloud::PointCloud;
use mos3d_core::model::{Action, ObjectId};
use mos3d_core::occupancy::{OccupancyOctree, OccupancyParams};
use mos3d_core::spatial::{occluded_point, CameraPose, FrustumParams, GridCell, RegionSpec, Vec3};
use mos3d_service::DetectionMessage;

use crate::error::{Result, SimError};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Desk,
    Lobby,
    Empty,
}

/// How targets are hidden.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Centers uniform over the search box, outside solid geometry.
    #[default]
    Uniform,
    /// Resting on an upward-facing surface (floor, table top) below a uniformly drawn point.
    Surface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene: SceneKind,
    /// XYZ point cloud replacing the built-in scene.
    pub cloud_file: Option<PathBuf>,
    /// Box, in meters, in which targets are hidden and searched for.
    pub region_size: [f64; 3],
    pub center: [f64; 3],
    pub num_targets: usize,
    pub placement: Placement,
    /// Side of the cube-shaped targets, meters.
    pub object_size: f64,
    /// Resolution of the ground-truth occupancy used for visibility.
    pub world_res: f64,
    pub cloud_spacing: f64,
    pub camera: FrustumParams,
    /// m/s
    pub linear_velocity: f64,
    /// rad/s
    pub angular_velocity: f64,
    /// Seconds charged for every executed action on top of motion.
    pub action_overhead: f64,
    pub true_positive: f64,
    pub false_positive: f64,
    pub start: [f64; 3],
    pub start_yaw: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScenarioConfig {
    pub fn desk() -> Self {
        Self {
            scene: SceneKind::Desk,
            cloud_file: None,
            region_size: [3.2, 3.2, 2.4],
            center: [1.6, 1.6, 1.2],
            num_targets: 2,
            placement: Placement::Uniform,
            object_size: 0.126,
            world_res: 0.05,
            cloud_spacing: 0.05,
            camera: FrustumParams::default(),
            linear_velocity: 1.0,
            angular_velocity: 0.87,
            action_overhead: 1.0,
            true_positive: 0.9,
            false_positive: 0.0,
            start: [0.3, 0.3, 1.2],
            start_yaw: std::f64::consts::FRAC_PI_4,
        }
    }

    pub fn lobby() -> Self {
        Self {
            scene: SceneKind::Lobby,
            region_size: [5.0, 5.0, 1.5],
            center: [2.5, 2.5, 0.75],
            num_targets: 1,
            world_res: 0.1,
            start: [0.45, 0.45, 1.0],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !self.region_size.iter().all(|v| *v > 0.0 && v.is_finite()) {
            bad.push("region_size must be positive");
        }
        if self.num_targets == 0 {
            bad.push("num_targets must be at least 1");
        }
        if !(self.object_size > 0.0) {
            bad.push("object_size must be positive");
        }
        if !(self.world_res > 0.0) || !(self.cloud_spacing > 0.0) {
            bad.push("world_res and cloud_spacing must be positive");
        }
        if !(self.linear_velocity > 0.0 && self.angular_velocity > 0.0) {
            bad.push("velocities must be positive");
        }
        if !(self.action_overhead >= 0.0) {
            bad.push("action_overhead must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.true_positive) || !(0.0..=1.0).contains(&self.false_positive) {
            bad.push("detector rates must lie in [0, 1]");
        }
        if self.camera.validate().is_err() {
            bad.push("camera parameters are invalid");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(bad.join("; ")))
        }
    }

    pub fn search_box(&self) -> (Vec3, Vec3) {
        let c = Vec3::from(self.center);
        let h = Vec3::from(self.region_size) / 2.0;
        (c - h, c + h)
    }

    pub fn scene_cloud(&self) -> Result<PointCloud> {
        if let Some(path) = &self.cloud_file {
            let f = std::fs::File::open(path)?;
            return Ok(PointCloud::read_xyz(std::io::BufReader::new(f))?);
        }
        Ok(match self.scene {
            SceneKind::Desk => Scene::desk().cloud(self.cloud_spacing),
            SceneKind::Lobby => Scene::lobby().cloud(self.cloud_spacing),
            SceneKind::Empty => Scene::default().cloud(self.cloud_spacing),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimObject {
    pub id: ObjectId,
    pub center: Vec3,
    pub size: f64,
}

/// Time and distance spent executing one action.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepCost {
    pub distance: f64,
    pub rotation: f64,
    pub motion_time: f64,
    pub elapsed: f64,
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    pub config: ScenarioConfig,
    /// Fine grid holding the ground-truth occupancy.
    pub region: RegionSpec,
    pub occupancy: OccupancyOctree,
    pub cloud: PointCloud,
    pub objects: Vec<SimObject>,
    pub robot: CameraPose,
}

/// Build the scene and hide the targets uniformly at random in its free space.
pub fn make_world<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<SimWorld> {
    config.validate()?;
    let cloud = config.scene_cloud()?;
    let extent = config.region_size.iter().cloned().fold(0.0, f64::max);
    let size = ((extent / config.world_res) - 1e-9).ceil().max(1.0) as u32;
    let region = RegionSpec::centered(Vec3::from(config.center), config.world_res, size.next_power_of_two())?;
    let occupancy = OccupancyOctree::build(&cloud, region, OccupancyParams::default());
    let start = Vec3::from(config.start);
    let robot = CameraPose::from_yaw_pitch(start, config.start_yaw, 0.0);
    let mut world = SimWorld { config: config.clone(), region, occupancy, cloud, objects: Vec::new(), robot };
    world.place_objects(rng)?;
    Ok(world)
}

impl SimWorld {
    fn solid(&self, p: &Vec3) -> bool {
        self.region.ground_cell(p).is_some_and(|g| self.occupancy.is_occupied(g))
    }

    /// Top of the highest solid voxel at or below `p` in its column, if any.
    fn surface_below(&self, p: &Vec3) -> Option<f64> {
        let g = self.region.ground_cell(p)?;
        (0..=g.z).rev().map(|z| GridCell::new(g.x, g.y, z)).find(|c| self.occupancy.is_occupied(*c)).map(|c| {
            self.region.center(c).z + self.region.res / 2.0
        })
    }

    fn draw_center<R: Rng + ?Sized>(&self, rng: &mut R, lo: &Vec3, hi: &Vec3) -> Option<Vec3> {
        let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
        match self.config.placement {
            Placement::Uniform => Some(p),
            Placement::Surface => {
                let z = self.surface_below(&p)? + self.config.object_size / 2.0;
                (z < hi.z).then(|| Vec3::new(p.x, p.y, z))
            }
        }
    }

    fn place_objects<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (lo, hi) = self.config.search_box();
        let s = self.config.object_size;
        for id in 1..=self.config.num_targets as ObjectId {
            let mut placed = None;
            for _ in 0..10_000 {
                let Some(c) = self.draw_center(rng, &lo, &hi) else { continue };
                let apart = self.objects.iter().all(|o| (0..3).any(|i| (o.center[i] - c[i]).abs() >= s));
                if apart && !self.solid(&c) {
                    placed = Some(c);
                    break;
                }
            }
            let center = placed.ok_or_else(|| SimError::Placement("no free space left for another target".into()))?;
            self.objects.push(SimObject { id, center, size: s });
        }
        Ok(())
    }

    /// Whether the center of `obj` is in view and unobstructed.
    pub fn visible(&self, pose: &CameraPose, obj: &SimObject) -> bool {
        self.config.camera.contains(pose, &obj.center) && !occluded_point(&self.occupancy, &pose.position, &obj.center)
    }

    /// Detector output from the current robot pose.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DetectionMessage> {
        let pose = self.robot;
        let mut out = Vec::new();
        for o in &self.objects {
            let fire = if self.visible(&pose, o) {
                self.config.true_positive >= 1.0 || rng.gen::<f64>() < self.config.true_positive
            } else {
                false
            };
            if fire {
                out.push(DetectionMessage::boxed(o.id, o.center, Vec3::repeat(o.size)));
            } else if self.config.false_positive > 0.0 && rng.gen::<f64>() < self.config.false_positive {
                let f = &self.config.camera;
                let d = rng.gen_range(f.near..f.far);
                let local = Vec3::new(d, 0.0, 0.0);
                let at = pose.orientation * local + pose.position;
                out.push(DetectionMessage::boxed(o.id, at, Vec3::repeat(o.size)));
            }
        }
        out
    }

    /// Execute an action; moves and looks end at `goal`.
    pub fn step(&mut self, action: &Action, goal: Option<CameraPose>) -> StepCost {
        let cfg = &self.config;
        let (distance, rotation) = match (action, goal) {
            (Action::Move(_) | Action::Look { .. }, Some(g)) => {
                let d = (g.position - self.robot.position).norm();
                let r = self.robot.orientation.angle_to(&g.orientation);
                self.robot = g;
                (d, r)
            }
            _ => (0.0, 0.0),
        };
        let motion_time = distance / cfg.linear_velocity + rotation / cfg.angular_velocity;
        StepCost { distance, rotation, motion_time, elapsed: motion_time + cfg.action_overhead }
    }

    pub fn object(&self, id: ObjectId) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}
