//! Coordinate frames, grid cells, camera poses, the frustum sensor and voxel ray traversal.
//!
//! Grid coordinates are integers at ground resolution. A metric point `p` belongs to the ground
//! cell `floor((p - origin) / res)` on every axis, so cells are half-open boxes `[low, high)`.
//! A cell at level `l` spans `2^l` ground cells per axis.
//!
//! Cameras look down their local `+x` axis with `+z` up.

use std::fmt;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::OccupancyOctree;

pub type Vec3 = Vector3<f64>;

/// A cell at ground resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl GridCell {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// The ancestor of this cell at `level`.
    pub fn ancestor(self, level: u8) -> LevelCell {
        LevelCell::new(self.x >> level, self.y >> level, self.z >> level, level)
    }

    pub fn as_level(self) -> LevelCell {
        LevelCell::new(self.x, self.y, self.z, 0)
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// A cell at an arbitrary resolution level; level 0 is the ground resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelCell {
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub level: u8,
}

impl LevelCell {
    pub const fn new(x: i32, y: i32, z: i32, level: u8) -> Self {
        Self { x, y, z, level }
    }

    pub fn parent(self) -> LevelCell {
        LevelCell::new(self.x >> 1, self.y >> 1, self.z >> 1, self.level + 1)
    }

    /// Child by octant index `dx << 2 | dy << 1 | dz`.
    pub fn child(self, octant: usize) -> LevelCell {
        debug_assert!(self.level > 0);
        let (dx, dy, dz) = octant_offsets(octant);
        LevelCell::new(
            self.x * 2 + dx,
            self.y * 2 + dy,
            self.z * 2 + dz,
            self.level - 1,
        )
    }

    /// Number of ground cells per axis covered by this cell.
    pub fn span(self) -> i32 {
        1 << self.level
    }

    /// Minimum corner in ground coordinates.
    pub fn ground_min(self) -> GridCell {
        let s = self.level;
        GridCell::new(self.x << s, self.y << s, self.z << s)
    }

    pub fn contains(self, cell: GridCell) -> bool {
        cell.ancestor(self.level) == self
    }

    /// Octant index of this cell inside its parent.
    pub fn octant(self) -> usize {
        (((self.x & 1) << 2) | ((self.y & 1) << 1) | (self.z & 1)) as usize
    }

    /// Iterate the ground cells covered by this cell.
    pub fn ground_cells(self) -> impl Iterator<Item = GridCell> {
        let min = self.ground_min();
        let n = self.span();
        (0..n).flat_map(move |dx| {
            (0..n).flat_map(move |dy| (0..n).map(move |dz| GridCell::new(min.x + dx, min.y + dy, min.z + dz)))
        })
    }
}

impl fmt::Display for LevelCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})@{}", self.x, self.y, self.z, self.level)
    }
}

pub fn octant_offsets(octant: usize) -> (i32, i32, i32) {
    (
        ((octant >> 2) & 1) as i32,
        ((octant >> 1) & 1) as i32,
        (octant & 1) as i32,
    )
}

/// Axis-aligned inclusive box of ground cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub min: GridCell,
    pub max: GridCell,
}

impl CellBox {
    pub fn new(min: GridCell, max: GridCell) -> Self {
        Self { min, max }
    }

    pub fn of_cell(c: GridCell) -> Self {
        Self { min: c, max: c }
    }

    pub fn contains(&self, c: GridCell) -> bool {
        (self.min.x..=self.max.x).contains(&c.x)
            && (self.min.y..=self.max.y).contains(&c.y)
            && (self.min.z..=self.max.z).contains(&c.z)
    }

    pub fn extend(&mut self, c: GridCell) {
        self.min = GridCell::new(self.min.x.min(c.x), self.min.y.min(c.y), self.min.z.min(c.z));
        self.max = GridCell::new(self.max.x.max(c.x), self.max.y.max(c.y), self.max.z.max(c.z));
    }

    pub fn union(&self, other: &CellBox) -> CellBox {
        let mut b = *self;
        b.extend(other.min);
        b.extend(other.max);
        b
    }

    pub fn volume(&self) -> usize {
        ((self.max.x - self.min.x + 1) as usize)
            * ((self.max.y - self.min.y + 1) as usize)
            * ((self.max.z - self.min.z + 1) as usize)
    }

    pub fn cells(&self) -> impl Iterator<Item = GridCell> + '_ {
        let (min, max) = (self.min, self.max);
        (min.x..=max.x)
            .flat_map(move |x| (min.y..=max.y).flat_map(move |y| (min.z..=max.z).map(move |z| GridCell::new(x, y, z))))
    }
}

/// The metric frame of a cubic octree region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Metric position of the minimum corner of cell (0, 0, 0).
    pub origin: Vec3,
    /// Meters per ground cell.
    pub res: f64,
    /// Octree dimension; a power of two.
    pub size: u32,
}

impl RegionSpec {
    pub fn new(origin: Vec3, res: f64, size: u32) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::Config(format!("octree size {size} is not a power of two >= 2")));
        }
        if !(res > 0.0 && res.is_finite()) {
            return Err(Error::Config(format!("resolution {res} must be positive")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("region origin must be finite".into()));
        }
        Ok(Self { origin, res, size })
    }

    /// Region whose octree is centered on `center`.
    pub fn centered(center: Vec3, res: f64, size: u32) -> Result<Self> {
        let half = res * size as f64 / 2.0;
        Self::new(center - Vec3::repeat(half), res, size)
    }

    /// Number of resolution levels above ground; the root sits at this level.
    pub fn depth(&self) -> u8 {
        self.size.trailing_zeros() as u8
    }

    pub fn num_cells(&self) -> usize {
        (self.size as usize).pow(3)
    }

    /// Metric edge length of the whole region.
    pub fn extent(&self) -> f64 {
        self.res * self.size as f64
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin + Vec3::repeat(self.extent())
    }

    pub fn full_box(&self) -> CellBox {
        let m = self.size as i32 - 1;
        CellBox::new(GridCell::new(0, 0, 0), GridCell::new(m, m, m))
    }

    pub fn contains_cell(&self, c: GridCell) -> bool {
        let m = self.size as i32;
        (0..m).contains(&c.x) && (0..m).contains(&c.y) && (0..m).contains(&c.z)
    }

    pub fn contains_level_cell(&self, c: LevelCell) -> bool {
        if c.level > self.depth() {
            return false;
        }
        let m = (self.size >> c.level) as i32;
        (0..m).contains(&c.x) && (0..m).contains(&c.y) && (0..m).contains(&c.z)
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        let lo = self.origin;
        let hi = self.max_corner();
        (0..3).all(|i| p[i] >= lo[i] && p[i] < hi[i])
    }

    /// Continuous grid coordinates (units of ground cells) of a metric point.
    pub fn to_grid(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.res
    }

    pub fn from_grid(&self, g: &Vec3) -> Vec3 {
        self.origin + g * self.res
    }

    /// Metric center of a cell at any level.
    pub fn cell_to_metric(&self, cell: LevelCell) -> Result<Vec3> {
        if !self.contains_level_cell(cell) {
            return Err(Error::OutOfBounds(cell.to_string()));
        }
        let span = self.res * cell.span() as f64;
        Ok(self.origin + Vec3::new(cell.x as f64 + 0.5, cell.y as f64 + 0.5, cell.z as f64 + 0.5) * span)
    }

    /// Metric center of a ground cell; the cell is not bounds-checked.
    pub fn center(&self, cell: GridCell) -> Vec3 {
        self.origin + Vec3::new(cell.x as f64 + 0.5, cell.y as f64 + 0.5, cell.z as f64 + 0.5) * self.res
    }

    /// The level-`level` cell containing a metric point.
    pub fn metric_to_cell(&self, p: &Vec3, level: u8) -> Result<LevelCell> {
        let g = self.ground_cell(p).ok_or_else(|| Error::OutOfBounds(format!("{p:?}")))?;
        if level > self.depth() {
            return Err(Error::OutOfBounds(format!("level {level}")));
        }
        Ok(g.ancestor(level))
    }

    /// The ground cell containing a metric point, if inside the region.
    pub fn ground_cell(&self, p: &Vec3) -> Option<GridCell> {
        let g = self.to_grid(p);
        let c = GridCell::new(g.x.floor() as i32, g.y.floor() as i32, g.z.floor() as i32);
        if g.iter().all(|v| v.is_finite()) && self.contains_cell(c) {
            Some(c)
        } else {
            None
        }
    }
}

/// A 6D camera pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`, rejecting non-unit input.
    pub fn from_parts(position: Vec3, w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!("quaternion norm {n} is not 1")));
        }
        Ok(Self::new(position, UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_yaw_pitch(position: Vec3, yaw: f64, pitch: f64) -> Self {
        Self::new(position, yaw_pitch(yaw, pitch))
    }

    /// Pose at `position` whose optical axis points at `target`, with zero roll.
    pub fn look_at(position: Vec3, target: &Vec3) -> Self {
        Self::new(position, facing(&position, target))
    }

    /// Unit vector of the optical axis in the world frame.
    pub fn forward(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    /// Express a world point in the camera frame.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse() * (p - self.position)
    }
}

/// Orientation with the optical axis at `yaw` around +z and elevated by `pitch` (radians, up positive).
pub fn yaw_pitch(yaw: f64, pitch: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(0.0, -pitch, yaw)
}

/// Zero-roll orientation pointing from `from` toward `to`.
pub fn facing(from: &Vec3, to: &Vec3) -> UnitQuaternion<f64> {
    let d = to - from;
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    if horiz < 1e-12 && d.z.abs() < 1e-12 {
        return UnitQuaternion::identity();
    }
    let yaw = d.y.atan2(d.x);
    let pitch = d.z.atan2(horiz);
    yaw_pitch(yaw, pitch)
}

/// Pinhole frustum: a truncated pyramid along the camera's +x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrustumParams {
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    /// Horizontal over vertical extent.
    pub aspect: f64,
}

impl Default for FrustumParams {
    fn default() -> Self {
        Self { fov_deg: 60.0, near: 0.2, far: 2.0, aspect: 1.0 }
    }
}

impl FrustumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!("fov {} must be in (0, 180)", self.fov_deg)));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Config(format!("need 0 < near ({}) < far ({})", self.near, self.far)));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(Error::Config(format!("aspect {} must be positive", self.aspect)));
        }
        Ok(())
    }

    fn half_tan(&self) -> f64 {
        (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Whether a world point lies inside the frustum of a camera at `pose`.
    pub fn contains(&self, pose: &CameraPose, point: &Vec3) -> bool {
        self.contains_local(&pose.to_camera(point))
    }

    /// Same as [`contains`](Self::contains) for a point already in the camera frame.
    pub fn contains_local(&self, local: &Vec3) -> bool {
        let depth = local.x;
        if depth < self.near || depth > self.far {
            return false;
        }
        let t = self.half_tan();
        local.z.abs() <= depth * t && local.y.abs() <= depth * t * self.aspect
    }

    /// The eight world-frame corners of the frustum.
    pub fn corners(&self, pose: &CameraPose) -> [Vec3; 8] {
        let t = self.half_tan();
        let mut out = [Vec3::zeros(); 8];
        let mut i = 0;
        for d in [self.near, self.far] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let local = Vec3::new(d, sy * d * t * self.aspect, sz * d * t);
                    out[i] = pose.orientation * local + pose.position;
                    i += 1;
                }
            }
        }
        out
    }
}

/// Whether `point` lies in the frustum of a camera at `pose`.
pub fn in_frustum(params: &FrustumParams, pose: &CameraPose, point: &Vec3) -> bool {
    params.contains(pose, point)
}

/// All in-region ground cells whose centers lie inside the frustum, in lexicographic order.
pub fn frustum_cells(region: &RegionSpec, params: &FrustumParams, pose: &CameraPose) -> Vec<GridCell> {
    let corners = params.corners(pose);
    let mut lo = corners[0];
    let mut hi = corners[0];
    for c in &corners[1..] {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let glo = region.to_grid(&lo);
    let ghi = region.to_grid(&hi);
    let m = region.size as i32;
    let clamp = |v: f64| (v.floor() as i64).clamp(0, m as i64 - 1) as i32;
    let mut out = Vec::new();
    if (0..3).any(|i| ghi[i] < 0.0 || glo[i] >= m as f64) {
        return out;
    }
    for x in clamp(glo.x)..=clamp(ghi.x) {
        for y in clamp(glo.y)..=clamp(ghi.y) {
            for z in clamp(glo.z)..=clamp(ghi.z) {
                let c = GridCell::new(x, y, z);
                if params.contains(pose, &region.center(c)) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Incremental voxel traversal of a segment through a region grid.
///
/// Yields every ground cell the segment passes through, in order of entry, together with the
/// segment parameter `t ∈ [0, 1]` at which it is entered. Parts of the segment outside the region
/// are clipped away. When the segment crosses several cell faces at the same parameter the axis
/// order x, y, z decides which face is crossed first.
pub struct VoxelTraversal {
    cell: [i32; 3],
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t_end: f64,
    t_cur: f64,
    remaining: usize,
    size: i32,
}

impl VoxelTraversal {
    /// Traverse the segment between two points given in grid coordinates.
    pub fn new(from: Vec3, to: Vec3, size: u32) -> Self {
        let m = size as f64;
        let d = to - from;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for i in 0..3 {
            if d[i].abs() < 1e-300 {
                if from[i] < 0.0 || from[i] > m {
                    t1 = -1.0;
                }
            } else {
                let a = (0.0 - from[i]) / d[i];
                let b = (m - from[i]) / d[i];
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
        }
        let empty = VoxelTraversal {
            cell: [0; 3],
            step: [0; 3],
            t_max: [f64::INFINITY; 3],
            t_delta: [f64::INFINITY; 3],
            t_end: 0.0,
            t_cur: 0.0,
            remaining: 0,
            size: size as i32,
        };
        if t0 > t1 {
            return empty;
        }
        let start = from + d * t0;
        let end = from + d * t1;
        let top = size as i32 - 1;
        let mut cell = [0i32; 3];
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let mut count = 1usize;
        for i in 0..3 {
            let c = (start[i].floor() as i64).clamp(0, top as i64) as i32;
            let e = (end[i].floor() as i64).clamp(0, top as i64) as i32;
            cell[i] = c;
            count += (e - c).unsigned_abs() as usize;
            if d[i] > 0.0 {
                step[i] = 1;
                t_max[i] = ((c + 1) as f64 - from[i]) / d[i];
                t_delta[i] = 1.0 / d[i];
            } else if d[i] < 0.0 {
                step[i] = -1;
                t_max[i] = (c as f64 - from[i]) / d[i];
                t_delta[i] = -1.0 / d[i];
            }
        }
        VoxelTraversal {
            cell,
            step,
            t_max,
            t_delta,
            t_end: t1,
            t_cur: t0,
            remaining: count,
            size: size as i32,
        }
    }

    /// Traverse a metric segment through a region.
    pub fn metric(region: &RegionSpec, from: &Vec3, to: &Vec3) -> Self {
        Self::new(region.to_grid(from), region.to_grid(to), region.size)
    }
}

impl Iterator for VoxelTraversal {
    type Item = (GridCell, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = (GridCell::new(self.cell[0], self.cell[1], self.cell[2]), self.t_cur);
        // smallest boundary parameter; x before y before z on exact ties
        let mut axis = 0;
        if self.t_max[1] < self.t_max[axis] {
            axis = 1;
        }
        if self.t_max[2] < self.t_max[axis] {
            axis = 2;
        }
        let t_next = self.t_max[axis];
        if t_next > self.t_end || !t_next.is_finite() {
            self.remaining = 0;
        } else {
            self.cell[axis] += self.step[axis];
            self.t_cur = t_next;
            self.t_max[axis] += self.t_delta[axis];
            if self.cell[axis] < 0 || self.cell[axis] >= self.size {
                self.remaining = 0;
            }
        }
        Some(out)
    }
}

/// First occupied cell along the metric segment `from → to`, if any.
pub fn cast_ray(occ: &OccupancyOctree, from: &Vec3, to: &Vec3) -> Option<GridCell> {
    VoxelTraversal::metric(occ.region(), from, to)
        .map(|(c, _)| c)
        .find(|c| occ.is_occupied(*c))
}

/// Whether the line of sight from `eye` to the center of `target` is blocked.
///
/// Occluders are occupied cells strictly between the camera's own cell and the target cell; the
/// target cell itself never occludes (its surface is what the camera sees).
pub fn occluded(occ: &OccupancyOctree, eye: &Vec3, target: GridCell) -> bool {
    let region = occ.region();
    let eye_cell = region.ground_cell(eye);
    let to = region.center(target);
    VoxelTraversal::metric(region, eye, &to)
        .map(|(c, _)| c)
        .take_while(|c| *c != target)
        .any(|c| Some(c) != eye_cell && occ.is_occupied(c))
}

/// Whether the line of sight from `eye` to the metric point `target` is blocked.
pub fn occluded_point(occ: &OccupancyOctree, eye: &Vec3, target: &Vec3) -> bool {
    let region = occ.region();
    match region.ground_cell(target) {
        Some(c) => {
            let eye_cell = region.ground_cell(eye);
            VoxelTraversal::metric(region, eye, target)
                .map(|(c, _)| c)
                .take_while(|x| *x != c)
                .any(|x| Some(x) != eye_cell && occ.is_occupied(x))
        }
        None => false,
    }
}
