use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mos3d_core::belief::{InitParams, OctreeBelief};
use mos3d_core::cloud::PointCloud;
use mos3d_core::model::{simulate_observation, Action, Label, ModelConfig, MosState, RobotState};
use mos3d_core::occupancy::{FeasibilityRule, OccupancyOctree, OccupancyParams};
use mos3d_core::planner::{plan, PlanContext, PlannerConfig, PlannerKind};
use mos3d_core::spatial::{CameraPose, GridCell, RegionSpec, Vec3};
use mos3d_core::view_graph::{ViewGraph, ViewGraphParams};

/// Floor at z = 0.05 and a table top at z = 0.65 over a 1.6 m square region.
fn scene() -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..16 {
        for j in 0..16 {
            let (x, y) = (0.05 + 0.1 * i as f64, 0.05 + 0.1 * j as f64);
            pts.push(Vec3::new(x, y, 0.05));
            if (0.8..1.2).contains(&x) && (0.4..1.2).contains(&y) {
                pts.push(Vec3::new(x, y, 0.65));
            }
        }
    }
    PointCloud::new(pts).unwrap()
}

#[test]
fn cloud_to_find() {
    let region = RegionSpec::new(Vec3::zeros(), 0.1, 16).unwrap();
    let occ = OccupancyOctree::build(&scene(), region, OccupancyParams::default());
    assert_eq!(occ.num_occupied(), 256 + 32);
    let search = occ.region_cells(FeasibilityRule::CloudBounds);
    assert_eq!(search.len(), 16 * 16 * 7);

    let prior = occ.occupancy_prior(2, 100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut belief = OctreeBelief::init(1, 16, &search, &prior, &InitParams::default(), &mut rng).unwrap();
    assert!(belief.check_invariants());
    // the occupancy prior puts most mass near surfaces
    let near_floor: f64 = search.iter().filter(|c| c.z < 4).map(|c| belief.prob_ground(c)).sum();
    assert!(near_floor > 0.5);

    let target = GridCell::new(3, 12, 1);
    assert!(!occ.is_occupied(target) && search.contains(target));
    let cfg = ModelConfig::default();
    let eye = Vec3::new(0.35, 0.35, 0.5);
    let pose = CameraPose::look_at(eye, &region.center(target));
    let state = MosState { robot: RobotState { pose, found: BTreeSet::new() }, objects: vec![(1, target)] };
    let obs = simulate_observation(&state, &occ, &cfg.frustum, &cfg.detector, cfg.occlusion, &mut rng);
    assert_eq!(obs.label(target), Some(Label::Object(1)));
    belief.update(&obs, cfg.detector.alpha, cfg.detector.beta).unwrap();
    assert_eq!(belief.max_cell().unwrap(), target);
    assert!(belief.prob_ground(target) > 0.99);

    let params = ViewGraphParams { num_nodes: 6, sep: 0.3, ..ViewGraphParams::default() };
    let graph = ViewGraph::sample(&occ, &[&belief], &params, &mut rng).unwrap();
    assert!(!graph.is_empty());

    let beliefs = [belief];
    let ctx = PlanContext {
        beliefs: &beliefs,
        robot: &state.robot,
        graph: &graph,
        occupancy: &occ,
        model: &cfg,
        last_observation: Some(&obs),
    };
    for kind in [PlannerKind::Pouct, PlannerKind::Random, PlannerKind::Greedy] {
        let out = plan(&ctx, &PlannerConfig { kind, num_sims: 200, ..PlannerConfig::default() }, &mut rng).unwrap();
        assert_eq!(out.action, Action::Find, "{kind}");
    }
}

#[test]
fn no_detection_means_move() {
    let region = RegionSpec::new(Vec3::zeros(), 0.1, 16).unwrap();
    let occ = OccupancyOctree::build(&scene(), region, OccupancyParams::default());
    let search = occ.region_cells(FeasibilityRule::CloudBounds);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let belief = OctreeBelief::init(1, 16, &search, &Default::default(), &InitParams::default(), &mut rng).unwrap();
    let graph = ViewGraph::sample(&occ, &[&belief], &ViewGraphParams { num_nodes: 5, sep: 0.3, ..Default::default() }, &mut rng).unwrap();
    let robot = RobotState { pose: CameraPose::from_yaw_pitch(Vec3::new(0.8, 0.8, 1.2), 0.0, -1.4), found: BTreeSet::new() };
    let cfg = ModelConfig::default();
    let beliefs = [belief];
    let ctx = PlanContext { beliefs: &beliefs, robot: &robot, graph: &graph, occupancy: &occ, model: &cfg, last_observation: None };
    for kind in [PlannerKind::Random, PlannerKind::Greedy] {
        let out = plan(&ctx, &PlannerConfig { kind, ..PlannerConfig::default() }, &mut rng).unwrap();
        assert!(matches!(out.action, Action::Move(n) if n < graph.len()), "{kind}");
        assert_eq!(out.pose.unwrap().position, graph.nodes()[match out.action { Action::Move(n) => n, _ => unreachable!() }].position);
    }
}
