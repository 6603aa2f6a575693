use std::time::{Duration, Instant};

use mos3d_core::cloud::PointCloud;
use mos3d_core::model::{Action, Label};
use mos3d_core::planner::{PlannerConfig, PlannerKind};
use mos3d_core::spatial::{frustum_cells, CameraPose, GridCell, Vec3};
use mos3d_service::{AgentConfig, DetectionMessage, Lifecycle, SearchService, ServerEvent, ServiceError};

/// Floor plus a table top inside the default 3.2 m region around (0, 0, 1.6).
fn room_cloud() -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..32 {
        for j in 0..32 {
            let (x, y) = (-1.55 + 0.1 * i as f64, -1.55 + 0.1 * j as f64);
            pts.push(Vec3::new(x, y, 0.05));
            if (0.5..1.0).contains(&x) && (-0.5..0.5).contains(&y) {
                pts.push(Vec3::new(x, y, 0.65));
            }
        }
    }
    PointCloud::new(pts).unwrap()
}

fn config() -> AgentConfig {
    AgentConfig { num_sims: 100, init_samples: 2000, ..AgentConfig::default() }
}

fn pouct(num_sims: usize) -> PlannerConfig {
    PlannerConfig { kind: PlannerKind::Pouct, num_sims, ..PlannerConfig::default() }
}

fn start_pose() -> CameraPose {
    CameraPose::look_at(Vec3::new(-1.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.7))
}

fn ready_session(svc: &SearchService, cfg: AgentConfig) -> String {
    let id = svc.create_agent("", cfg).unwrap();
    svc.update_search_region(&id, &room_cloud(), Some(start_pose())).unwrap();
    id
}

#[test]
fn create_agent_validates() {
    let svc = SearchService::new();
    let id = svc.create_agent("a", config()).unwrap();
    assert_eq!(svc.lifecycle(&id).unwrap(), Lifecycle::AwaitingRegion);
    assert!(matches!(svc.create_agent("a", config()), Err(ServiceError::SessionExists(_))));
    let bad = AgentConfig { octree_size: 33, res: -1.0, ..config() };
    match svc.create_agent("b", bad) {
        Err(ServiceError::Validation(fields)) => {
            assert!(fields.iter().any(|f| f.contains("octree_size")));
            assert!(fields.iter().any(|f| f.contains("res")));
        }
        r => panic!("expected validation error, got {r:?}"),
    }
}

#[test]
fn lifecycle_walkthrough() {
    let svc = SearchService::new();
    let id = svc.create_agent("", config()).unwrap();
    let pose = start_pose();
    assert!(matches!(svc.process_observation(&id, 1, pose, &[], None), Err(ServiceError::Precondition(_))));
    assert!(matches!(svc.plan_action(&id), Err(ServiceError::Precondition(_))));

    let far = PointCloud::new(vec![Vec3::new(50.0, 0.0, 0.0)]).unwrap();
    assert!(svc.update_search_region(&id, &far, None).is_err());
    let report = svc.update_search_region(&id, &room_cloud(), Some(pose)).unwrap();
    assert_eq!(report.lifecycle, Lifecycle::Ready);
    assert!(report.num_occupied > 0);
    assert_eq!(report.search_cells, 32 * 32 * 32);

    assert!(matches!(svc.plan_action(&id), Err(ServiceError::Precondition(_))));
    let zero = PlannerConfig { num_sims: 0, ..pouct(1) };
    assert!(matches!(svc.create_planner(&id, zero), Err(ServiceError::Validation(_))));
    svc.create_planner(&id, pouct(100)).unwrap();

    let out = svc.plan_action(&id).unwrap();
    assert_eq!(svc.lifecycle(&id).unwrap(), Lifecycle::Executing);
    if let Some(Action::Move(n)) = out.action {
        let len = svc.with_agent(&id, |a| a.graph.len()).unwrap();
        assert!(n < len);
    }
    assert!(matches!(svc.plan_action(&id), Err(ServiceError::Precondition(_))));

    let r = svc.process_observation(&id, 1, pose, &[], None).unwrap();
    assert_eq!(r.lifecycle, Lifecycle::Ready);
    assert!(!r.duplicate);

    // switching planners mid-session is allowed
    svc.create_planner(&id, PlannerConfig { kind: PlannerKind::Greedy, ..pouct(10) }).unwrap();
    svc.plan_action(&id).unwrap();
}

#[test]
fn duplicate_sequence_numbers_are_ignored() {
    let svc = SearchService::new();
    let id = ready_session(&svc, config());
    let pose = start_pose();
    svc.process_observation(&id, 5, pose, &[], None).unwrap();
    let before = svc.with_agent(&id, |a| a.beliefs[0].to_dense()).unwrap();
    let det = DetectionMessage::boxed(1, Vec3::new(0.75, 0.05, 0.75), Vec3::new(0.1, 0.1, 0.1));
    for seq in [5, 3] {
        let r = svc.process_observation(&id, seq, pose, &[det], None).unwrap();
        assert!(r.duplicate);
    }
    let after = svc.with_agent(&id, |a| a.beliefs[0].to_dense()).unwrap();
    assert_eq!(before, after);
    let r = svc.process_observation(&id, 6, pose, &[det], None).unwrap();
    assert!(!r.duplicate);
}

#[test]
fn detections_move_mass() {
    let svc = SearchService::new();
    let id = ready_session(&svc, config());
    let pose = start_pose();
    let target = Vec3::new(0.75, 0.05, 0.75);
    let cell = svc.with_agent(&id, |a| a.region.ground_cell(&target).unwrap()).unwrap();
    let p0 = svc.with_agent(&id, |a| a.beliefs[0].prob_ground(cell)).unwrap();
    let det = DetectionMessage::boxed(1, Vec3::new(0.75, 0.05, 0.75), Vec3::new(0.09, 0.09, 0.09));
    svc.process_observation(&id, 1, pose, &[det], None).unwrap();
    let p1 = svc.with_agent(&id, |a| a.beliefs[0].prob_ground(cell)).unwrap();
    assert!(p1 > p0);

    let id = ready_session(&svc, config());
    let visible: Vec<GridCell> = svc
        .with_agent(&id, |a| {
            let obs = mos3d_service::observation::base_labels(&a.occupancy, &a.model, &pose);
            obs.into_iter().filter(|(_, l)| *l == Label::Free).map(|(c, _)| c).collect()
        })
        .unwrap();
    assert!(!visible.is_empty());
    let mass = |svc: &SearchService| svc.with_agent(&id, |a| visible.iter().map(|c| a.beliefs[0].prob_ground(*c)).sum::<f64>()).unwrap();
    let m0 = mass(&svc);
    svc.process_observation(&id, 1, pose, &[], None).unwrap();
    assert!(mass(&svc) < m0);
}

#[test]
fn label_only_labels_every_visible_voxel() {
    let svc = SearchService::new();
    let id = ready_session(&svc, AgentConfig { targets: vec![mos3d_service::TargetConfig::new(1), mos3d_service::TargetConfig::new(2)], ..config() });
    let pose = start_pose();
    svc.process_observation(&id, 1, pose, &[DetectionMessage::label_only(2)], None).unwrap();
    svc.with_agent(&id, |a| {
        let obs = a.last_observation.as_ref().unwrap();
        let frustum = frustum_cells(&a.region, &a.model.frustum, &pose);
        let base = mos3d_service::observation::base_labels(&a.occupancy, &a.model, &pose);
        assert_eq!(obs.voxels.len(), frustum.len());
        for (c, l) in base {
            let want = if l == Label::Free { Label::Object(2) } else { Label::Unknown };
            assert_eq!(obs.label(c), Some(want), "{c:?}");
        }
    })
    .unwrap();
    assert!(svc.process_observation(&id, 2, pose, &[DetectionMessage::label_only(7)], None).is_err());
    let outside = CameraPose::look_at(Vec3::new(9.0, 9.0, 9.0), &Vec3::zeros());
    assert!(svc.process_observation(&id, 3, outside, &[], None).is_err());
}

#[test]
fn occupancy_prior_concentrates_mass() {
    let svc = SearchService::new();
    let id = ready_session(&svc, AgentConfig { prior_from_occupancy: true, ..config() });
    svc.with_agent(&id, |a| {
        let b = &a.beliefs[0];
        let baseline = 1.0 / a.search_region.len() as f64;
        let occupied: Vec<_> = a.occupancy.occupied_cells().collect();
        let mean_occ = occupied.iter().map(|c| b.prob_ground(*c)).sum::<f64>() / occupied.len() as f64;
        assert!(mean_occ > baseline, "{mean_occ} vs {baseline}");
        let table = a.region.ground_cell(&Vec3::new(0.75, 0.05, 0.65)).unwrap();
        assert!(b.prob_ground(table) > baseline);
        let air = a.region.ground_cell(&Vec3::new(-0.75, 0.05, 2.5)).unwrap();
        assert!(b.prob_ground(air) < baseline);
    })
    .unwrap();
}

#[test]
fn second_region_update_keeps_beliefs() {
    let svc = SearchService::new();
    let id = ready_session(&svc, config());
    svc.process_observation(&id, 1, start_pose(), &[], None).unwrap();
    let before = svc.with_agent(&id, |a| (a.beliefs[0].to_dense(), a.occupancy.num_occupied())).unwrap();
    let mut more = room_cloud();
    more.points.push(Vec3::new(-1.0, -1.0, 1.2));
    svc.update_search_region(&id, &more, None).unwrap();
    let after = svc.with_agent(&id, |a| (a.beliefs[0].to_dense(), a.occupancy.num_occupied())).unwrap();
    assert_eq!(before.0, after.0);
    assert_eq!(after.1, before.1 + 1);
}

#[test]
fn find_reports_and_terminates() {
    let svc = SearchService::new();
    let id = ready_session(&svc, config());
    let mut events = svc.subscribe(&id).unwrap();
    svc.create_planner(&id, pouct(300)).unwrap();
    let pose = start_pose();
    let target = Vec3::new(0.75, 0.05, 0.75);
    let det = DetectionMessage::boxed(1, target, Vec3::new(0.09, 0.09, 0.09));
    // a second sighting leaves no doubt about the location
    svc.process_observation(&id, 1, pose, &[det], None).unwrap();
    svc.process_observation(&id, 2, pose, &[det], None).unwrap();
    let out = svc.plan_action(&id).unwrap();
    assert_eq!(out.action, Some(Action::Find));
    assert!(out.terminal);
    assert_eq!(out.found.len(), 1);
    assert!((out.found[0].location - target).norm() < 0.1);
    let mut saw_found = false;
    while let Ok(ev) = events.try_recv() {
        if let ServerEvent::FoundObject(r) = ev {
            assert_eq!(r.object_id, 1);
            saw_found = true;
        }
    }
    assert!(saw_found);
    svc.process_observation(&id, 3, pose, &[], None).unwrap();
    let out = svc.plan_action(&id).unwrap();
    assert_eq!(out.action, None);
    assert!(out.terminal);
}

#[test]
fn overdue_actions_expire() {
    let svc = SearchService::new();
    let id = ready_session(&svc, AgentConfig { execution_timeout: 5.0, ..config() });
    svc.create_planner(&id, PlannerConfig { kind: PlannerKind::Random, ..pouct(1) }).unwrap();
    svc.plan_action(&id).unwrap();
    let now = Instant::now();
    assert_eq!(svc.expire_pending(&id, now).unwrap(), Lifecycle::Executing);
    assert_eq!(svc.expire_pending(&id, now + Duration::from_secs(6)).unwrap(), Lifecycle::Ready);
    svc.plan_action(&id).unwrap();
}

#[test]
fn sessions_are_independent() {
    let svc = std::sync::Arc::new(SearchService::new());
    let ids: Vec<String> = (0..4).map(|_| ready_session(&svc, config())).collect();
    std::thread::scope(|s| {
        for id in &ids {
            let svc = svc.clone();
            s.spawn(move || {
                svc.create_planner(id, pouct(50)).unwrap();
                for seq in 1..4 {
                    svc.plan_action(id).unwrap();
                    svc.process_observation(id, seq, start_pose(), &[], None).unwrap();
                }
            });
        }
    });
    svc.close(&ids[0]).unwrap();
    assert!(matches!(svc.lifecycle(&ids[0]), Err(ServiceError::UnknownSession(_))));
    assert_eq!(svc.lifecycle(&ids[1]).unwrap(), Lifecycle::Ready);
}

