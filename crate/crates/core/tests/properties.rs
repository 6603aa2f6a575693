use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mos3d_core::belief::OctreeBelief;
use mos3d_core::model::{Label, VolumetricObservation};
use mos3d_core::occupancy::OccupancyOctree;
use mos3d_core::spatial::{frustum_cells, CameraPose, FrustumParams, GridCell, RegionSpec, Vec3, VoxelTraversal};
use mos3d_core::view_graph::{inflate, ViewGraph, ViewGraphParams};

fn rand_cell(rng: &mut ChaCha8Rng, m: u32) -> GridCell {
    let m = m as i32;
    GridCell::new(rng.gen_range(0..m), rng.gen_range(0..m), rng.gen_range(0..m))
}

fn random_belief(rng: &mut ChaCha8Rng, m: u32, updates: usize) -> OctreeBelief {
    let mut b = OctreeBelief::uniform(1, m).unwrap();
    for _ in 0..updates {
        let labels = (0..rng.gen_range(1..60))
            .map(|_| (rand_cell(rng, m), if rng.gen_bool(0.1) { Label::Object(1) } else { Label::Free }))
            .collect();
        let pose = CameraPose::look_at(Vec3::zeros(), &Vec3::x());
        b.update(&VolumetricObservation::new(pose, labels), rng.gen_range(1.0..100.0), rng.gen_range(0.1..1.0)).unwrap();
    }
    b
}

fn random_occupancy(rng: &mut ChaCha8Rng, m: u32, n: usize) -> OccupancyOctree {
    let r = RegionSpec::new(Vec3::zeros(), 0.1, m).unwrap();
    let cells: Vec<GridCell> = (0..n).map(|_| rand_cell(rng, m)).collect();
    OccupancyOctree::from_cells(r, &cells)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn beliefs_stay_consistent(seed in 0u64..100_000, log_m in 1u32..5, updates in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 1 << log_m;
        let b = random_belief(&mut rng, m, updates);
        prop_assert!(b.check_invariants());
        let dense = b.to_dense();
        prop_assert!((dense.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // coarse queries are sums of the ground cells beneath them
        let c = rand_cell(&mut rng, m).ancestor(rng.gen_range(0..=log_m as u8));
        let sum: f64 = c.ground_cells().map(|g| b.prob_ground(g)).sum();
        prop_assert!((b.prob(c) - sum).abs() < 1e-12);
        let mut buf = Vec::new();
        b.write_records(&mut buf).unwrap();
        prop_assert_eq!(OctreeBelief::read_records(buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn fill_below_is_idempotent(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occ = random_occupancy(&mut rng, 8, 30);
        let filled = occ.fill_below();
        prop_assert_eq!(filled.fill_below(), filled.clone());
        for c in occ.occupied_cells() {
            for z in 0..=c.z {
                prop_assert!(filled.is_occupied(GridCell::new(c.x, c.y, z)));
            }
        }
        for c in filled.occupied_cells() {
            prop_assert!((c.z..8).any(|z| occ.is_occupied(GridCell::new(c.x, c.y, z))));
        }
    }

    #[test]
    fn graph_scores_and_coverage(seed in 0u64..100_000, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occ = random_occupancy(&mut rng, 16, 200);
        let beliefs = [random_belief(&mut rng, 16, 5), random_belief(&mut rng, 16, 5)];
        let refs: Vec<&OctreeBelief> = beliefs.iter().collect();
        let params = ViewGraphParams { num_nodes: k, sep: 0.2, ..ViewGraphParams::default() };
        let g = ViewGraph::sample(&occ, &refs, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&g, &ViewGraph::sample(&occ, &refs, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
        let r = *occ.region();
        let inflated = inflate(&occ, params.inflation).unwrap();
        for w in g.nodes().windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for n in g.nodes() {
            prop_assert_eq!(n.score, ViewGraph::score_at(&r, &refs, &params, &n.position));
            prop_assert!(!inflated.is_occupied(r.ground_cell(&n.position).unwrap()));
        }
        // coverage: mean over objects of the mass in the distinct coarse cells holding a node
        let coarse: BTreeSet<_> = g.nodes().iter().map(|n| r.ground_cell(&n.position).unwrap().ancestor(params.score_level)).collect();
        let mut expect = 0.0;
        for b in &beliefs {
            let dense = b.to_dense();
            for x in 0..16 { for y in 0..16 { for z in 0..16 {
                let c = GridCell::new(x, y, z);
                if coarse.contains(&c.ancestor(params.score_level)) {
                    expect += dense[((x * 16 + y) * 16 + z) as usize];
                }
            }}}
        }
        prop_assert!((g.coverage(&r, &refs) - expect / 2.0).abs() < 1e-9);
    }

    #[test]
    fn frustum_cells_match_brute_force(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = RegionSpec::new(Vec3::new(-0.4, 0.1, 0.0), 0.1, 16).unwrap();
        let eye = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0), rng.gen_range(-0.5..2.0));
        let pose = CameraPose::from_yaw_pitch(eye, rng.gen_range(-3.1..3.1), rng.gen_range(-1.5..1.5));
        let f = FrustumParams { far: rng.gen_range(0.5..2.5), aspect: rng.gen_range(0.5..2.0), ..FrustumParams::default() };
        let mut want = Vec::new();
        for x in 0..16 { for y in 0..16 { for z in 0..16 {
            let c = GridCell::new(x, y, z);
            if f.contains(&pose, &r.center(c)) { want.push(c); }
        }}}
        prop_assert_eq!(frustum_cells(&r, &f, &pose), want);
    }

    #[test]
    fn traversal_covers_dense_march(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = RegionSpec::new(Vec3::zeros(), 0.1, 16).unwrap();
        let mut pt = || Vec3::new(rng.gen_range(-0.3..1.9), rng.gen_range(-0.3..1.9), rng.gen_range(-0.3..1.9));
        let (a, b) = (pt(), pt());
        let visited: Vec<GridCell> = VoxelTraversal::metric(&r, &a, &b).map(|(c, _)| c).collect();
        let set: BTreeSet<GridCell> = visited.iter().copied().collect();
        prop_assert_eq!(set.len(), visited.len());
        let n = (((b - a).norm() / 0.01).ceil() as usize).max(1);
        for i in 0..=n {
            if let Some(c) = r.ground_cell(&(a + (b - a) * (i as f64 / n as f64))) {
                // sample points landing exactly on a face may be attributed to either neighbour
                let p = r.to_grid(&(a + (b - a) * (i as f64 / n as f64)));
                let on_face = (0..3).any(|k| (p[k] - p[k].round()).abs() < 1e-9);
                prop_assert!(on_face || set.contains(&c));
            }
        }
        for w in visited.windows(2) {
            let d = (w[0].x - w[1].x).abs() + (w[0].y - w[1].y).abs() + (w[0].z - w[1].z).abs();
            prop_assert_eq!(d, 1);
        }
    }
}
