//! Occupancy octrees built from point clouds.
//!
//! The tree is stored as a pyramid of per-node occupied-descendant counts, one dense level per
//! octree level. A node "exists" exactly when its count is nonzero, so the structure behaves like
//! a pointer octree whose internal nodes are present only above occupied leaves, while lookups
//! stay O(1).

use serde::{Deserialize, Serialize};

use crate::belief::PriorValMap;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::{CellBox, GridCell, LevelCell, RegionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyParams {
    /// A ground cell is occupied when at least this many points fall inside it.
    pub min_points_per_cell: u32,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self { min_points_per_cell: 1 }
    }
}

/// How the feasible search region is derived from an occupancy octree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityRule {
    /// Every cell inside the bounding box of the observed points.
    #[default]
    CloudBounds,
    /// The cloud bounding box minus occupied cells.
    CloudBoundsFree,
    /// A fixed box of cells, independent of the observed cloud.
    Fixed(CellBox),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyOctree {
    region: RegionSpec,
    params: OccupancyParams,
    counts: Vec<Vec<u32>>,
    observed: Option<CellBox>,
}

fn index(size: u32, c: GridCell) -> usize {
    let n = size as usize;
    (c.x as usize * n + c.y as usize) * n + c.z as usize
}

impl OccupancyOctree {
    pub fn empty(region: RegionSpec) -> Self {
        Self::with_params(region, OccupancyParams::default())
    }

    pub fn with_params(region: RegionSpec, params: OccupancyParams) -> Self {
        let counts = (0..=region.depth())
            .map(|l| vec![0u32; ((region.size >> l) as usize).pow(3)])
            .collect();
        Self { region, params, counts, observed: None }
    }

    /// Octree whose occupied cells are exactly `cells` (out-of-bounds cells are ignored).
    pub fn from_cells(region: RegionSpec, cells: &[GridCell]) -> Self {
        let mut occ = Self::empty(region);
        for &c in cells {
            if region.contains_cell(c) {
                occ.set(c, true);
            }
        }
        occ
    }

    /// Convert a point cloud into an occupancy octree. Points outside the region are ignored.
    pub fn build(cloud: &PointCloud, region: RegionSpec, params: OccupancyParams) -> Self {
        let mut occ = Self::with_params(region, params);
        let (hist, bounds) = occ.histogram(cloud);
        for (i, &n) in hist.iter().enumerate() {
            if n >= params.min_points_per_cell.max(1) {
                occ.set(occ.cell_of_index(i), true);
            }
        }
        occ.observed = bounds;
        occ
    }

    fn histogram(&self, cloud: &PointCloud) -> (Vec<u32>, Option<CellBox>) {
        let mut hist = vec![0u32; self.region.num_cells()];
        let mut bounds: Option<CellBox> = None;
        for p in &cloud.points {
            if let Some(c) = self.region.ground_cell(p) {
                hist[index(self.region.size, c)] += 1;
                match bounds.as_mut() {
                    Some(b) => b.extend(c),
                    None => bounds = Some(CellBox::of_cell(c)),
                }
            }
        }
        (hist, bounds)
    }

    fn cell_of_index(&self, i: usize) -> GridCell {
        let n = self.region.size as usize;
        GridCell::new((i / (n * n)) as i32, ((i / n) % n) as i32, (i % n) as i32)
    }

    /// Replace-policy update: inside the bounding box of the new cloud's in-region points,
    /// occupancy is rebuilt from the new points alone; outside it the prior occupancy is kept.
    pub fn update(&self, cloud: &PointCloud, region: &RegionSpec) -> Result<Self> {
        if *region != self.region {
            return Err(Error::Config("point cloud update targets a different region".into()));
        }
        let (hist, bounds) = self.histogram(cloud);
        let Some(b) = bounds else {
            return Ok(self.clone());
        };
        let mut next = self.clone();
        for c in b.cells() {
            let n = hist[index(self.region.size, c)];
            next.set(c, n >= self.params.min_points_per_cell.max(1));
        }
        next.observed = Some(match self.observed {
            Some(o) => o.union(&b),
            None => b,
        });
        Ok(next)
    }

    /// Mark every cell below an occupied cell (down to the region floor) as occupied.
    pub fn fill_below(&self) -> Self {
        let mut next = self.clone();
        let m = self.region.size as i32;
        for x in 0..m {
            for y in 0..m {
                if let Some(top) = (0..m).rev().find(|&z| self.is_occupied(GridCell::new(x, y, z))) {
                    for z in 0..top {
                        next.set(GridCell::new(x, y, z), true);
                    }
                }
            }
        }
        next
    }

    pub fn region(&self) -> &RegionSpec {
        &self.region
    }

    pub fn params(&self) -> OccupancyParams {
        self.params
    }

    /// Bounding box of all in-region points observed so far.
    pub fn observed_bounds(&self) -> Option<CellBox> {
        self.observed
    }

    pub fn set_observed_bounds(&mut self, b: Option<CellBox>) {
        self.observed = b;
    }

    pub fn set(&mut self, c: GridCell, occupied: bool) {
        debug_assert!(self.region.contains_cell(c));
        let i = index(self.region.size, c);
        let was = self.counts[0][i] > 0;
        if was == occupied {
            return;
        }
        for l in 0..=self.region.depth() {
            let a = c.ancestor(l);
            let i = index(self.region.size >> l, GridCell::new(a.x, a.y, a.z));
            if occupied {
                self.counts[l as usize][i] += 1;
            } else {
                self.counts[l as usize][i] -= 1;
            }
        }
    }

    /// Whether a ground cell is occupied; out-of-region cells are free.
    #[inline]
    pub fn is_occupied(&self, c: GridCell) -> bool {
        self.region.contains_cell(c) && self.counts[0][index(self.region.size, c)] > 0
    }

    /// Whether any ground cell under a node at any level is occupied.
    pub fn is_occupied_at(&self, c: LevelCell) -> bool {
        self.region.contains_level_cell(c)
            && self.counts[c.level as usize][index(self.region.size >> c.level, GridCell::new(c.x, c.y, c.z))] > 0
    }

    /// Number of occupied ground cells under a node.
    pub fn occupied_count(&self, c: LevelCell) -> u32 {
        if !self.region.contains_level_cell(c) {
            return 0;
        }
        self.counts[c.level as usize][index(self.region.size >> c.level, GridCell::new(c.x, c.y, c.z))]
    }

    pub fn num_occupied(&self) -> usize {
        self.counts[self.region.depth() as usize][0] as usize
    }

    /// Occupied ground cells in lexicographic order.
    pub fn occupied_cells(&self) -> impl Iterator<Item = GridCell> + '_ {
        self.counts[0]
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(move |(i, _)| self.cell_of_index(i))
    }

    /// Existing nodes at `level` (those with an occupied descendant), lexicographic.
    pub fn nodes_at(&self, level: u8) -> impl Iterator<Item = LevelCell> + '_ {
        let n = (self.region.size >> level) as usize;
        self.counts[level as usize]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, _)| LevelCell::new((i / (n * n)) as i32, ((i / n) % n) as i32, (i % n) as i32, level))
    }

    /// The feasible search region under `rule`.
    pub fn region_cells(&self, rule: FeasibilityRule) -> CellMask {
        let mut mask = CellMask::new(self.region.size);
        let b = match rule {
            FeasibilityRule::Fixed(b) => Some(b),
            _ => self.observed,
        };
        if let Some(b) = b {
            let full = self.region.full_box();
            for c in b.cells().filter(|c| full.contains(*c)) {
                if rule == FeasibilityRule::CloudBoundsFree && self.is_occupied(c) {
                    continue;
                }
                mask.insert(c);
            }
        }
        mask
    }

    /// Prior values for every level-`level` node holding an occupied cell: `weight * 8^level`.
    pub fn occupancy_prior(&self, level: u8, weight: f64) -> Result<PriorValMap> {
        if level > self.region.depth() {
            return Err(Error::Parameter(format!("prior level {level} exceeds octree depth")));
        }
        let value = weight * 8f64.powi(level as i32);
        Ok(self.nodes_at(level).map(|c| (c, value)).collect())
    }
}

/// A set of ground cells over an `m^3` grid, e.g. the feasible search region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    size: u32,
    bits: Vec<bool>,
    len: usize,
}

impl CellMask {
    pub fn new(size: u32) -> Self {
        Self { size, bits: vec![false; (size as usize).pow(3)], len: 0 }
    }

    pub fn full(size: u32) -> Self {
        Self { size, bits: vec![true; (size as usize).pow(3)], len: (size as usize).pow(3) }
    }

    pub fn from_box(size: u32, b: &CellBox) -> Self {
        let mut m = Self::new(size);
        for c in b.cells() {
            m.insert(c);
        }
        m
    }

    pub fn from_cells(size: u32, cells: impl IntoIterator<Item = GridCell>) -> Self {
        let mut m = Self::new(size);
        for c in cells {
            m.insert(c);
        }
        m
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    fn in_bounds(&self, c: GridCell) -> bool {
        let m = self.size as i32;
        (0..m).contains(&c.x) && (0..m).contains(&c.y) && (0..m).contains(&c.z)
    }

    pub fn insert(&mut self, c: GridCell) {
        if !self.in_bounds(c) {
            return;
        }
        let i = index(self.size, c);
        if !self.bits[i] {
            self.bits[i] = true;
            self.len += 1;
        }
    }

    pub fn remove(&mut self, c: GridCell) {
        if !self.in_bounds(c) {
            return;
        }
        let i = index(self.size, c);
        if self.bits[i] {
            self.bits[i] = false;
            self.len -= 1;
        }
    }

    #[inline]
    pub fn contains(&self, c: GridCell) -> bool {
        self.in_bounds(c) && self.bits[index(self.size, c)]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Cells in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = GridCell> + '_ {
        let n = self.size as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| GridCell::new((i / (n * n)) as i32, ((i / n) % n) as i32, (i % n) as i32))
    }

    pub fn bounding_box(&self) -> Option<CellBox> {
        let mut it = self.iter();
        let first = it.next()?;
        let mut b = CellBox::of_cell(first);
        for c in it {
            b.extend(c);
        }
        Some(b)
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.iter().all(|c| other.contains(c))
    }
}
