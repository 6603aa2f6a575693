//! The multi-session search service. Every session is guarded by its own lock, so calls on one
//! session are serialized while different sessions proceed in parallel.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use tokio::sync::broadcast;

use mos3d_core::cloud::PointCloud;
use mos3d_core::planner::PlannerConfig;
use mos3d_core::spatial::CameraPose;

use crate::config::AgentConfig;
use crate::error::ServiceError;
use crate::observation::DetectionMessage;
use crate::session::{Agent, Lifecycle, ObservationReport, PlanOutcome, ServerEvent, Session};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionReport {
    pub lifecycle: Lifecycle,
    pub num_occupied: usize,
    pub search_cells: usize,
}

#[derive(Default)]
pub struct SearchService {
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SearchService {
    pub fn new() -> Self {
        Self::default()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Register a session; an empty id is replaced by a generated one.
    pub fn create_agent(&self, id: &str, config: AgentConfig) -> Result<String, ServiceError> {
        config.validate()?;
        let mut map = lock(&self.sessions);
        let id = if id.is_empty() {
            loop {
                let n = self.counter.fetch_add(1, Ordering::Relaxed);
                let cand = format!("session-{n}");
                if !map.contains_key(&cand) {
                    break cand;
                }
            }
        } else {
            id.to_string()
        };
        if map.contains_key(&id) {
            return Err(ServiceError::SessionExists(id));
        }
        map.insert(id.clone(), Arc::new(Mutex::new(Session::new(id.clone(), config))));
        Ok(id)
    }

    pub fn close(&self, id: &str) -> Result<(), ServiceError> {
        lock(&self.sessions).remove(id).map(|_| ()).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        lock(&self.sessions).keys().cloned().collect()
    }

    pub fn update_search_region(&self, id: &str, cloud: &PointCloud, pose: Option<CameraPose>) -> Result<RegionReport, ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        let agent = s.update_search_region(cloud, pose)?;
        let report = RegionReport {
            lifecycle: Lifecycle::Ready,
            num_occupied: agent.occupancy.num_occupied(),
            search_cells: agent.search_region.len(),
        };
        Ok(RegionReport { lifecycle: s.lifecycle(), ..report })
    }

    pub fn process_observation(
        &self,
        id: &str,
        seq: u64,
        pose: CameraPose,
        detections: &[DetectionMessage],
        cloud: Option<&PointCloud>,
    ) -> Result<ObservationReport, ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        s.process_observation(seq, pose, detections, cloud)
    }

    pub fn create_planner(&self, id: &str, cfg: PlannerConfig) -> Result<(), ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        s.create_planner(cfg)
    }

    pub fn plan_action(&self, id: &str) -> Result<PlanOutcome, ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        s.plan_action()
    }

    pub fn lifecycle(&self, id: &str) -> Result<Lifecycle, ServiceError> {
        let s = self.session(id)?;
        let l = lock(&s).lifecycle();
        Ok(l)
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<ServerEvent>, ServiceError> {
        let s = self.session(id)?;
        let r = lock(&s).subscribe();
        Ok(r)
    }

    pub fn publish(&self, id: &str, ev: ServerEvent) -> Result<(), ServiceError> {
        let s = self.session(id)?;
        lock(&s).publish(ev);
        Ok(())
    }

    /// Apply the execution timeout as if the clock read `now`.
    pub fn expire_pending(&self, id: &str, now: Instant) -> Result<Lifecycle, ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        s.expire(now);
        Ok(s.lifecycle())
    }

    /// Read the session's agent under its lock.
    pub fn with_agent<T>(&self, id: &str, f: impl FnOnce(&Agent) -> T) -> Result<T, ServiceError> {
        let s = self.session(id)?;
        let s = lock(&s);
        let agent = s.agent().ok_or_else(|| ServiceError::Precondition("no search region has been received".into()))?;
        Ok(f(agent))
    }

    /// Run `f` with exclusive access to the whole session.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, ServiceError> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        Ok(f(&mut s))
    }
}
