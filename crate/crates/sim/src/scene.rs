//! Built-in scene geometry made of solid axis-aligned slabs.

use serde::{Deserialize, Serialize};

use mos3d_core::cloud::PointCloud;
use mos3d_core::spatial::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Slab {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Whether this slab overlaps the axis-aligned cube of side `size` centered at `c`.
    pub fn overlaps_cube(&self, c: &Vec3, size: f64) -> bool {
        (0..3).all(|i| c[i] + size / 2.0 > self.min[i] && c[i] - size / 2.0 < self.max[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub slabs: Vec<Slab>,
}

fn table(x: f64, y: f64, w: f64, d: f64, h: f64) -> Vec<Slab> {
    let leg = 0.05;
    let mut out = vec![Slab::new([x, y, h - 0.05], [x + w, y + d, h])];
    for (lx, ly) in [(x, y), (x + w - leg, y), (x, y + d - leg), (x + w - leg, y + d - leg)] {
        out.push(Slab::new([lx, ly, 0.05], [lx + leg, ly + leg, h - 0.05]));
    }
    out
}

impl Scene {
    /// A 3.2 m x 3.2 m room, 2.4 m tall: floor, two tables and a separation board.
    pub fn desk() -> Self {
        let mut slabs = vec![Slab::new([0.0, 0.0, 0.0], [3.2, 3.2, 0.05])];
        slabs.extend(table(0.4, 1.9, 1.0, 0.8, 0.75));
        slabs.extend(table(2.0, 0.4, 0.8, 0.8, 0.75));
        slabs.push(Slab::new([1.55, 0.2, 0.05], [1.6, 1.4, 1.6]));
        Self { slabs }
    }

    /// A 5 m x 5 m lobby, 1.5 m tall: walls, floor, two tables, a board and a shelf.
    pub fn lobby() -> Self {
        let (w, h, t) = (5.0, 1.5, 0.05);
        let mut slabs = vec![
            Slab::new([0.0, 0.0, 0.0], [w, w, t]),
            Slab::new([0.0, 0.0, t], [t, w, h]),
            Slab::new([w - t, 0.0, t], [w, w, h]),
            Slab::new([0.0, 0.0, t], [w, t, h]),
            Slab::new([0.0, w - t, t], [w, w, h]),
        ];
        slabs.extend(table(0.6, 3.4, 1.2, 0.8, 0.75));
        slabs.extend(table(3.2, 0.6, 0.9, 0.9, 0.75));
        slabs.push(Slab::new([2.4, 2.0, t], [2.45, 3.4, 1.3]));
        slabs.push(Slab::new([4.5, 3.0, t], [4.9, 4.4, 1.1]));
        Self { slabs }
    }

    pub fn occupied(&self, p: &Vec3) -> bool {
        self.slabs.iter().any(|s| s.contains(p))
    }

    /// Points filling every slab on a lattice of the given spacing.
    pub fn cloud(&self, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for s in &self.slabs {
            let n: Vec<usize> = (0..3).map(|i| (((s.max[i] - s.min[i]) / spacing).ceil() as usize).max(1)).collect();
            let step: Vec<f64> = (0..3).map(|i| (s.max[i] - s.min[i]) / n[i] as f64).collect();
            for a in 0..n[0] {
                for b in 0..n[1] {
                    for c in 0..n[2] {
                        pts.push(Vec3::new(
                            s.min[0] + (a as f64 + 0.5) * step[0],
                            s.min[1] + (b as f64 + 0.5) * step[1],
                            s.min[2] + (c as f64 + 0.5) * step[2],
                        ));
                    }
                }
            }
        }
        PointCloud { points: pts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_points_lie_in_slabs() {
        let s = Scene::desk();
        let c = s.cloud(0.05);
        assert!(c.len() > 4000);
        assert!(c.points.iter().all(|p| s.occupied(p)));
        assert!(!s.occupied(&Vec3::new(1.0, 1.0, 1.2)));
    }

    #[test]
    fn cube_overlap() {
        let s = Slab::new([0.0, 0.0, 0.0], [1.0, 1.0, 0.05]);
        assert!(s.overlaps_cube(&Vec3::new(0.5, 0.5, 0.1), 0.126));
        assert!(!s.overlaps_cube(&Vec3::new(0.5, 0.5, 0.2), 0.126));
    }
}
