//! Belief-dependent graph of collision-free view positions; its nodes define the move actions.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::OctreeBelief;
use crate::error::{Error, Result};
use crate::occupancy::OccupancyOctree;
use crate::spatial::{GridCell, LevelCell, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewGraphParams {
    /// Maximum number of nodes kept.
    pub num_nodes: usize,
    /// Minimum distance between any two nodes, meters.
    pub sep: f64,
    /// Obstacles are grown by this radius before sampling, meters.
    pub inflation: f64,
    pub degree_cap: usize,
    /// Octree level at which node scores and coverage are queried.
    pub score_level: u8,
    /// Candidates gathered before top-K selection, as a multiple of `num_nodes`.
    pub candidate_factor: usize,
    pub max_attempts: usize,
    /// Height band for node positions; `None` leaves that side unbounded.
    pub min_z: Option<f64>,
    pub max_z: Option<f64>,
    /// Metric box (min and max corner) node positions must fall in, besides the region itself.
    pub bounds: Option<(Vec3, Vec3)>,
    /// Resample when the belief mass covered by the graph drops below this.
    pub resample_threshold: f64,
}

impl Default for ViewGraphParams {
    fn default() -> Self {
        Self {
            num_nodes: 10,
            sep: 0.75,
            inflation: 0.1,
            degree_cap: 3,
            score_level: 2,
            candidate_factor: 10,
            max_attempts: 2000,
            min_z: None,
            max_z: None,
            bounds: None,
            resample_threshold: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewNode {
    pub id: usize,
    pub position: Vec3,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewGraph {
    nodes: Vec<ViewNode>,
    edges: Vec<(usize, usize)>,
    params: ViewGraphParams,
}

/// Grow every occupied cell to all cells whose centers lie within `radius` of its center.
pub fn inflate(occ: &OccupancyOctree, radius: f64) -> Result<OccupancyOctree> {
    if !(radius >= 0.0) {
        return Err(Error::Parameter(format!("inflation radius {radius} must be nonnegative")));
    }
    let region = *occ.region();
    let r = (radius / region.res + 1e-9).floor() as i32;
    if r == 0 {
        return Ok(occ.clone());
    }
    let lim = (radius / region.res).powi(2) + 1e-9;
    let mut offsets = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                if ((dx * dx + dy * dy + dz * dz) as f64) <= lim {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    let mut out = occ.clone();
    for c in occ.occupied_cells().collect::<Vec<_>>() {
        for &(dx, dy, dz) in &offsets {
            let n = GridCell::new(c.x + dx, c.y + dy, c.z + dz);
            if region.contains_cell(n) {
                out.set(n, true);
            }
        }
    }
    Ok(out)
}

fn score_cell(b: &OctreeBelief, g: GridCell, level: u8) -> LevelCell {
    g.ancestor(level.min(b.depth()))
}

impl ViewGraph {
    /// A graph from explicit nodes and edges; node ids must equal their positions in the list.
    pub fn from_nodes(nodes: Vec<ViewNode>, edges: Vec<(usize, usize)>) -> Self {
        Self { nodes, edges, params: ViewGraphParams::default() }
    }

    /// Sample a view graph from free space, scored by the belief of the given (unfound) objects.
    pub fn sample<R: Rng + ?Sized>(
        occ: &OccupancyOctree,
        beliefs: &[&OctreeBelief],
        params: &ViewGraphParams,
        rng: &mut R,
    ) -> Result<Self> {
        if params.num_nodes == 0 {
            return Err(Error::Config("view graph needs at least one node".into()));
        }
        let inflated = inflate(occ, params.inflation)?;
        let region = *occ.region();
        if inflated.num_occupied() == region.num_cells() {
            return Err(Error::EmptyGraph);
        }
        let (mut lo, mut hi) = (region.origin, region.max_corner());
        if let Some((blo, bhi)) = params.bounds {
            lo = lo.sup(&blo);
            hi = hi.inf(&bhi);
            if !(lo.x < hi.x && lo.y < hi.y) {
                return Err(Error::Config("view position bounds do not overlap the region".into()));
            }
        }
        let zlo = params.min_z.unwrap_or(lo.z).max(lo.z);
        let zhi = params.max_z.unwrap_or(hi.z).min(hi.z);
        if !(zlo < zhi) {
            return Err(Error::Config("empty height band for view positions".into()));
        }
        let want = params.num_nodes * params.candidate_factor.max(1);
        let mut cands: Vec<Vec3> = Vec::new();
        for _ in 0..params.max_attempts {
            if cands.len() >= want {
                break;
            }
            let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(zlo..zhi));
            let Some(g) = region.ground_cell(&p) else { continue };
            if inflated.is_occupied(g) {
                continue;
            }
            if cands.iter().any(|q| (q - p).norm() < params.sep) {
                continue;
            }
            cands.push(p);
        }
        if cands.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut scored: Vec<(f64, Vec3)> = cands.into_iter().map(|p| (Self::score_at(&region, beliefs, params, &p), p)).collect();
        // stable: equal scores keep sampling order
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(params.num_nodes);
        let nodes: Vec<ViewNode> = scored
            .into_iter()
            .enumerate()
            .map(|(id, (score, position))| ViewNode { id, position, score })
            .collect();
        let edges = connect(&nodes, params.degree_cap);
        Ok(Self { nodes, edges, params: *params })
    }

    /// Summed belief of the objects at the coarse cell containing `p`.
    pub fn score_at(region: &crate::spatial::RegionSpec, beliefs: &[&OctreeBelief], params: &ViewGraphParams, p: &Vec3) -> f64 {
        let Some(g) = region.ground_cell(p) else { return 0.0 };
        beliefs.iter().map(|b| b.prob(score_cell(b, g, params.score_level))).sum()
    }

    pub fn nodes(&self) -> &[ViewNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&ViewNode> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn params(&self) -> &ViewGraphParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self, id: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == id || *b == id).count()
    }

    /// Id of the node closest to `p`; ties go to the lower id.
    pub fn nearest(&self, p: &Vec3) -> Option<usize> {
        self.nodes
            .iter()
            .min_by(|a, b| (a.position - p).norm().total_cmp(&(b.position - p).norm()))
            .map(|n| n.id)
    }

    /// Mean over objects of the belief mass in the union of the nodes' coarse cells.
    pub fn coverage(&self, region: &crate::spatial::RegionSpec, beliefs: &[&OctreeBelief]) -> f64 {
        if beliefs.is_empty() {
            return 1.0;
        }
        let total: f64 = beliefs
            .iter()
            .map(|b| {
                let cells: BTreeSet<LevelCell> = self
                    .nodes
                    .iter()
                    .filter_map(|n| region.ground_cell(&n.position))
                    .map(|g| score_cell(b, g, self.params.score_level))
                    .collect();
                cells.into_iter().map(|c| b.prob(c)).sum::<f64>()
            })
            .sum();
        total / beliefs.len() as f64
    }

    pub fn should_resample(&self, region: &crate::spatial::RegionSpec, beliefs: &[&OctreeBelief]) -> bool {
        self.is_empty() || self.coverage(region, beliefs) < self.params.resample_threshold
    }

    /// Flat export: `node id x y z score` lines followed by `edge a b` lines.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        for n in &self.nodes {
            writeln!(w, "node {} {} {} {} {}", n.id, n.position.x, n.position.y, n.position.z, n.score)?;
        }
        for (a, b) in &self.edges {
            writeln!(w, "edge {a} {b}")?;
        }
        Ok(())
    }
}

/// Connect nodes shortest pair first while both endpoints have spare degree.
fn connect(nodes: &[ViewNode], cap: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            pairs.push(((nodes[i].position - nodes[j].position).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut deg = vec![0usize; nodes.len()];
    let mut edges = Vec::new();
    for (_, i, j) in pairs {
        if deg[i] < cap && deg[j] < cap {
            deg[i] += 1;
            deg[j] += 1;
            edges.push((i, j));
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::spatial::RegionSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn region() -> RegionSpec {
        RegionSpec::new(Vec3::zeros(), 0.1, 32).unwrap()
    }

    #[test]
    fn inflate_zero_is_identity() {
        let occ = OccupancyOctree::from_cells(region(), &[GridCell::new(5, 5, 5)]);
        assert_eq!(inflate(&occ, 0.0).unwrap(), occ);
        assert!(inflate(&occ, -1.0).is_err());
    }

    #[test]
    fn inflate_matches_distance_oracle() {
        let r = region();
        let c = GridCell::new(5, 5, 5);
        let occ = OccupancyOctree::from_cells(r, &[c]);
        for radius in [0.1, 0.15, 0.25] {
            let inf = inflate(&occ, radius).unwrap();
            for x in 0..12 {
                for y in 0..12 {
                    for z in 0..12 {
                        let g = GridCell::new(x, y, z);
                        let d = (r.center(g) - r.center(c)).norm();
                        assert_eq!(inf.is_occupied(g), d <= radius + 1e-9, "{g} r={radius}");
                    }
                }
            }
        }
        let inf = inflate(&occ, 0.1).unwrap();
        assert_eq!(inf.num_occupied(), 7);
    }

    #[test]
    fn inflation_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cells: Vec<GridCell> = (0..30).map(|_| GridCell::new(rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(0..32))).collect();
        let occ = OccupancyOctree::from_cells(region(), &cells);
        let mut prev = occ.clone();
        for r in [0.05, 0.1, 0.2, 0.3] {
            let cur = inflate(&occ, r).unwrap();
            assert!(prev.occupied_cells().all(|c| cur.is_occupied(c)));
            prev = cur;
        }
    }

    #[test]
    fn fully_occupied_is_empty_graph() {
        let r = RegionSpec::new(Vec3::zeros(), 0.1, 4).unwrap();
        let all: Vec<GridCell> = (0..4).flat_map(|x| (0..4).flat_map(move |y| (0..4).map(move |z| GridCell::new(x, y, z)))).collect();
        let occ = OccupancyOctree::from_cells(r, &all);
        let b = OctreeBelief::uniform(1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ViewGraph::sample(&occ, &[&b], &ViewGraphParams::default(), &mut rng), Err(Error::EmptyGraph));
    }

    #[test]
    fn point_mass_ranks_nearest_node_first() {
        let r = region();
        let occ = OccupancyOctree::empty(r);
        let target = GridCell::new(20, 9, 14);
        let mut vals = vec![0.0; 32 * 32 * 32];
        vals[(20 * 32 + 9) * 32 + 14] = 1.0;
        let b = OctreeBelief::from_dense(1, 32, &vals).unwrap();
        let params = ViewGraphParams { sep: 0.3, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let g = ViewGraph::sample(&occ, &[&b], &params, &mut rng).unwrap();
            let coarse = target.ancestor(2);
            let best = &g.nodes()[0];
            let in_cell = g.nodes().iter().any(|n| r.ground_cell(&n.position).unwrap().ancestor(2) == coarse);
            if in_cell {
                assert_eq!(r.ground_cell(&best.position).unwrap().ancestor(2), coarse);
                assert_eq!(best.score, 1.0);
            }
        }
    }

    #[test]
    fn nodes_respect_bounds() {
        let r = region();
        let occ = OccupancyOctree::empty(r);
        let b = OctreeBelief::uniform(1, 32).unwrap();
        let lo = r.origin + Vec3::new(0.5, 0.5, 0.0);
        let hi = lo + Vec3::new(1.5, 1.0, 10.0);
        let params = ViewGraphParams { sep: 0.3, bounds: Some((lo, hi)), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ViewGraph::sample(&occ, &[&b], &params, &mut rng).unwrap();
        assert_eq!(g.len(), 10);
        for n in g.nodes() {
            assert!((0..2).all(|i| n.position[i] >= lo[i] && n.position[i] < hi[i]), "{:?}", n.position);
        }
        let away = ViewGraphParams { bounds: Some((lo - Vec3::repeat(50.0), lo - Vec3::repeat(40.0))), ..params };
        assert!(ViewGraph::sample(&occ, &[&b], &away, &mut rng).is_err());
    }

    #[test]
    fn resample_rule() {
        let r = region();
        let occ = OccupancyOctree::empty(r);
        let b = OctreeBelief::uniform(1, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = ViewGraph::sample(&occ, &[&b], &ViewGraphParams::default(), &mut rng).unwrap();
        assert!(g.should_resample(&r, &[&b]));
        // all mass in one coarse cell that holds a node
        let node_cell = r.ground_cell(&g.nodes()[0].position).unwrap();
        let mut vals = vec![0.0; 32 * 32 * 32];
        for c in node_cell.ancestor(2).ground_cells() {
            vals[((c.x * 32 + c.y) * 32 + c.z) as usize] = 1.0;
        }
        let covered = OctreeBelief::from_dense(1, 32, &vals).unwrap();
        assert!(!g.should_resample(&r, &[&covered]));
        assert!((g.coverage(&r, &[&covered]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn records_export() {
        let g = ViewGraph::from_nodes(
            vec![ViewNode { id: 0, position: Vec3::new(1.0, 2.0, 3.0), score: 0.5 }, ViewNode { id: 1, position: Vec3::zeros(), score: 0.0 }],
            vec![(0, 1)],
        );
        let mut out = Vec::new();
        g.write_records(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "node 0 1 2 3 0.5\nnode 1 0 0 0 0\nedge 0 1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn graph_invariants(seed in 0u64..100_000, k in 1usize..15, sep in 0.1f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = region();
            let cells: Vec<GridCell> = (0..400).map(|_| GridCell::new(rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(0..32))).collect();
            let occ = OccupancyOctree::from_cells(r, &cells);
            let vals: Vec<f64> = (0..32 * 32 * 32).map(|_| rng.gen::<f64>()).collect();
            let b = OctreeBelief::from_dense(1, 32, &vals).unwrap();
            let params = ViewGraphParams { num_nodes: k, sep, ..Default::default() };
            let g = ViewGraph::sample(&occ, &[&b], &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let again = ViewGraph::sample(&occ, &[&b], &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&g, &again);
            prop_assert!(g.len() <= k && !g.is_empty());
            let inflated = inflate(&occ, params.inflation).unwrap();
            for (i, n) in g.nodes().iter().enumerate() {
                prop_assert_eq!(n.id, i);
                prop_assert!(!inflated.is_occupied(r.ground_cell(&n.position).unwrap()));
                prop_assert!(g.degree(i) <= params.degree_cap);
                prop_assert_eq!(n.score, ViewGraph::score_at(&r, &[&b], &params, &n.position));
                for m in &g.nodes()[i + 1..] {
                    prop_assert!((n.position - m.position).norm() >= sep);
                }
            }
            // coverage against a direct sum over distinct coarse cells
            let mut seen = BTreeSet::new();
            let mut direct = 0.0;
            for n in g.nodes() {
                let c = r.ground_cell(&n.position).unwrap().ancestor(2);
                if seen.insert(c) {
                    direct += c.ground_cells().map(|x| b.prob_ground(x)).sum::<f64>();
                }
            }
            prop_assert!((g.coverage(&r, &[&b]) - direct).abs() < 1e-9);
        }
    }
}
