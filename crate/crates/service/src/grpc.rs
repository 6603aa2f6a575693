//! gRPC transport for [`SearchService`].

use std::pin::Pin;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{broadcast, mpsc};
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::Stream;
use tonic::{Request, Response, Status, Streaming};

use mos3d_core::cloud::PointCloud;
use mos3d_core::model::Action;
use mos3d_core::planner::{PlannerConfig, PlannerKind};
use mos3d_core::spatial::{CameraPose, Vec3};

use crate::config::{AgentConfig, TargetConfig};
use crate::error::ServiceError;
use crate::observation::{DetectionKind, DetectionMessage};
use crate::service::SearchService;
use crate::session::{FoundReport, ServerEvent};

pub mod pb {
    tonic::include_proto!("mos3d");
}

pub use pb::search_service_client::SearchServiceClient;
pub use pb::search_service_server::SearchServiceServer;

impl From<Vec3> for pb::Vec3 {
    fn from(v: Vec3) -> Self {
        Self { x: v.x, y: v.y, z: v.z }
    }
}

impl From<pb::Vec3> for Vec3 {
    fn from(v: pb::Vec3) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl From<CameraPose> for pb::Pose {
    fn from(p: CameraPose) -> Self {
        let q = p.orientation.quaternion();
        Self { position: Some(p.position.into()), orientation: Some(pb::Quaternion { w: q.w, x: q.i, y: q.j, z: q.k }) }
    }
}

pub fn pose_from_pb(p: &pb::Pose) -> Result<CameraPose, ServiceError> {
    let pos = p.position.ok_or_else(|| ServiceError::BadRequest("pose without position".into()))?;
    let q = p.orientation.ok_or_else(|| ServiceError::BadRequest("pose without orientation".into()))?;
    Ok(CameraPose::from_parts(pos.into(), q.w, q.x, q.y, q.z)?)
}

/// Build an agent configuration from its wire form.
pub fn config_from_pb(c: &pb::AgentConfig) -> Result<AgentConfig, ServiceError> {
    let mut cfg = if c.extra_toml.trim().is_empty() {
        AgentConfig::default()
    } else {
        toml::from_str(&c.extra_toml).map_err(|e| ServiceError::Validation(vec![format!("extra_toml: {e}")]))?
    };
    if c.octree_size != 0 {
        cfg.octree_size = c.octree_size;
    }
    if c.res != 0.0 {
        cfg.res = c.res;
    }
    if let Some(v) = c.region_size {
        cfg.region_size = [v.x, v.y, v.z];
    }
    if let Some(v) = c.center {
        cfg.center = [v.x, v.y, v.z];
    }
    cfg.prior_from_occupancy = c.prior_from_occupancy;
    cfg.occupancy_fill_height = c.occupancy_fill_height;
    if c.num_nodes != 0 {
        cfg.num_nodes = c.num_nodes as usize;
    }
    if c.sep != 0.0 {
        cfg.sep = c.sep;
    }
    if c.inflation != 0.0 {
        cfg.inflation = c.inflation;
    }
    if c.num_sims != 0 {
        cfg.num_sims = c.num_sims as usize;
    }
    if !c.targets.is_empty() {
        cfg.targets = c
            .targets
            .iter()
            .map(|t| {
                let mut tc = TargetConfig::new(t.id);
                if t.alpha != 0.0 {
                    tc.alpha = t.alpha;
                }
                if t.beta != 0.0 {
                    tc.beta = t.beta;
                }
                tc
            })
            .collect();
    }
    Ok(cfg)
}

pub fn config_to_pb(cfg: &AgentConfig) -> pb::AgentConfig {
    pb::AgentConfig {
        octree_size: cfg.octree_size,
        res: cfg.res,
        region_size: Some(Vec3::from(cfg.region_size).into()),
        center: Some(Vec3::from(cfg.center).into()),
        prior_from_occupancy: cfg.prior_from_occupancy,
        occupancy_fill_height: cfg.occupancy_fill_height,
        num_nodes: cfg.num_nodes as u32,
        sep: cfg.sep,
        inflation: cfg.inflation,
        num_sims: cfg.num_sims as u32,
        targets: cfg.targets.iter().map(|t| pb::TargetSpec { id: t.id, alpha: t.alpha, beta: t.beta }).collect(),
        extra_toml: cfg.to_toml(),
    }
}

pub fn detection_from_pb(d: &pb::Detection) -> Result<DetectionMessage, ServiceError> {
    let kind = match &d.kind {
        Some(pb::detection::Kind::Box(b)) => DetectionKind::Box3d {
            center: b.center.map(Vec3::from).ok_or_else(|| ServiceError::BadRequest("box without center".into()))?,
            extents: b.extents.map(Vec3::from).ok_or_else(|| ServiceError::BadRequest("box without extents".into()))?,
        },
        Some(pb::detection::Kind::LabelOnly(_)) => DetectionKind::LabelOnly,
        None => return Err(ServiceError::BadRequest("detection without kind".into())),
    };
    let camera_pose = d.camera_pose.as_ref().map(pose_from_pb).transpose()?;
    Ok(DetectionMessage { object_id: d.object_id, kind, camera_pose })
}

pub fn detection_to_pb(d: &DetectionMessage) -> pb::Detection {
    let kind = match d.kind {
        DetectionKind::Box3d { center, extents } => {
            pb::detection::Kind::Box(pb::Box3d { center: Some(center.into()), extents: Some(extents.into()) })
        }
        DetectionKind::LabelOnly => pb::detection::Kind::LabelOnly(pb::LabelOnly {}),
    };
    pb::Detection { object_id: d.object_id, kind: Some(kind), camera_pose: d.camera_pose.map(Into::into) }
}

fn found_to_pb(r: &FoundReport) -> pb::FoundObject {
    pb::FoundObject { object_id: r.object_id, location: Some(r.location.into()), x: r.cell.x, y: r.cell.y, z: r.cell.z }
}

pub fn event_to_pb(session_id: &str, ev: &ServerEvent) -> pb::ServerMessage {
    use pb::server_message::Event;
    let event = match ev {
        ServerEvent::FoundObject(r) => Event::Found(found_to_pb(r)),
        ServerEvent::BeliefSnapshot { object_id, max_location, max_prob } => {
            Event::Belief(pb::BeliefSnapshot { object_id: *object_id, max_location: Some((*max_location).into()), max_prob: *max_prob })
        }
        ServerEvent::GraphUpdated(g) => Event::Graph(pb::GraphUpdate {
            nodes: g.nodes().iter().map(|n| pb::GraphNode { id: n.id as u32, position: Some(n.position.into()), score: n.score }).collect(),
            edges: g.edges().iter().flat_map(|(a, b)| [*a as u32, *b as u32]).collect(),
        }),
        ServerEvent::LocalRegionRequest { local_session, center, region_size } => Event::LocalRegion(pb::LocalRegionRequest {
            local_session_id: local_session.clone(),
            center: Some((*center).into()),
            region_size: Some((*region_size).into()),
        }),
        ServerEvent::Heartbeat(n) => Event::Heartbeat(pb::Heartbeat { seq: *n }),
    };
    pb::ServerMessage { session_id: session_id.to_string(), event: Some(event) }
}

fn cloud_from_bytes(bytes: &[u8]) -> Result<PointCloud, ServiceError> {
    PointCloud::from_packed(bytes).map_err(ServiceError::from)
}

/// The gRPC front end. Blocking work runs on the blocking thread pool.
#[derive(Clone)]
pub struct GrpcService {
    inner: Arc<SearchService>,
    heartbeat: Duration,
}

impl GrpcService {
    pub fn new(inner: Arc<SearchService>, heartbeat: Duration) -> Self {
        Self { inner, heartbeat }
    }

    pub fn into_server(self) -> SearchServiceServer<Self> {
        SearchServiceServer::new(self)
    }

    async fn blocking<T, F>(&self, f: F) -> Result<T, Status>
    where
        T: Send + 'static,
        F: FnOnce(&SearchService) -> Result<T, ServiceError> + Send + 'static,
    {
        let inner = self.inner.clone();
        tokio::task::spawn_blocking(move || f(&inner))
            .await
            .map_err(|e| Status::internal(e.to_string()))?
            .map_err(Status::from)
    }
}

type EventStream = Pin<Box<dyn Stream<Item = Result<pb::ServerMessage, Status>> + Send>>;

#[tonic::async_trait]
impl pb::search_service_server::SearchService for GrpcService {
    async fn create_agent(&self, req: Request<pb::CreateAgentRequest>) -> Result<Response<pb::CreateAgentReply>, Status> {
        let req = req.into_inner();
        let cfg = config_from_pb(&req.config.unwrap_or_default())?;
        let id = self.blocking(move |s| s.create_agent(&req.session_id, cfg)).await?;
        Ok(Response::new(pb::CreateAgentReply { session_id: id, state: "awaiting_region".into() }))
    }

    async fn update_search_region(
        &self,
        req: Request<pb::UpdateSearchRegionRequest>,
    ) -> Result<Response<pb::UpdateSearchRegionReply>, Status> {
        let req = req.into_inner();
        let cloud = cloud_from_bytes(&req.cloud)?;
        let pose = req.robot_pose.as_ref().map(pose_from_pb).transpose()?;
        let r = self.blocking(move |s| s.update_search_region(&req.session_id, &cloud, pose)).await?;
        Ok(Response::new(pb::UpdateSearchRegionReply {
            state: r.lifecycle.as_str().into(),
            num_occupied: r.num_occupied as u64,
            search_cells: r.search_cells as u64,
        }))
    }

    async fn process_observation(
        &self,
        req: Request<pb::ProcessObservationRequest>,
    ) -> Result<Response<pb::ProcessObservationReply>, Status> {
        let req = req.into_inner();
        let pose = pose_from_pb(req.robot_pose.as_ref().ok_or_else(|| Status::invalid_argument("robot_pose is required"))?)?;
        let dets = req.detections.iter().map(detection_from_pb).collect::<Result<Vec<_>, _>>()?;
        let cloud = if req.cloud.is_empty() { None } else { Some(cloud_from_bytes(&req.cloud)?) };
        let r = self
            .blocking(move |s| s.process_observation(&req.session_id, req.seq, pose, &dets, cloud.as_ref()))
            .await?;
        Ok(Response::new(pb::ProcessObservationReply {
            state: r.lifecycle.as_str().into(),
            duplicate: r.duplicate,
            found: r.found,
            graph_resampled: r.graph_resampled,
        }))
    }

    async fn create_planner(&self, req: Request<pb::CreatePlannerRequest>) -> Result<Response<pb::CreatePlannerReply>, Status> {
        let req = req.into_inner();
        let d = PlannerConfig::default();
        let kind: PlannerKind = if req.kind.is_empty() { d.kind } else { req.kind.parse().map_err(ServiceError::from)? };
        let cfg = PlannerConfig {
            kind,
            num_sims: req.num_sims as usize,
            max_depth: if req.max_depth == 0 { d.max_depth } else { req.max_depth as usize },
            exploration_const: if req.exploration_const == 0.0 { d.exploration_const } else { req.exploration_const },
            discount: if req.discount == 0.0 { d.discount } else { req.discount },
            workers: req.workers.max(1) as usize,
        };
        let id = req.session_id.clone();
        let state = self
            .blocking(move |s| {
                s.create_planner(&id, cfg)?;
                s.lifecycle(&id)
            })
            .await?;
        Ok(Response::new(pb::CreatePlannerReply { state: state.as_str().into() }))
    }

    async fn plan_action(&self, req: Request<pb::PlanActionRequest>) -> Result<Response<pb::PlanActionReply>, Status> {
        let id = req.into_inner().session_id;
        let out = self.blocking(move |s| s.plan_action(&id)).await?;
        let (action_type, node_id) = match out.action {
            None => ("", 0),
            Some(Action::Move(n)) => ("move", n as u32),
            Some(Action::Look { .. }) => ("look", 0),
            Some(Action::Find) => ("find", 0),
            Some(Action::Stay) => ("stay", 0),
        };
        Ok(Response::new(pb::PlanActionReply {
            action_type: action_type.into(),
            node_id,
            goal: out.goal.map(Into::into),
            planning_time: out.planning_time,
            terminal: out.terminal,
            found: out.found.iter().map(found_to_pb).collect(),
        }))
    }

    type ListenServerStream = EventStream;

    async fn listen_server(&self, req: Request<Streaming<pb::ClientMessage>>) -> Result<Response<Self::ListenServerStream>, Status> {
        let mut inbound = req.into_inner();
        let first = inbound
            .message()
            .await?
            .ok_or_else(|| Status::invalid_argument("listen stream closed before naming a session"))?;
        let session_id = first.session_id;
        let mut events = self.inner.subscribe(&session_id)?;
        let (tx, rx) = mpsc::channel(256);
        let period = self.heartbeat;
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            let mut beat = 0u64;
            let mut client_open = true;
            loop {
                tokio::select! {
                    _ = ticker.tick() => {
                        beat += 1;
                        if tx.send(Ok(event_to_pb(&session_id, &ServerEvent::Heartbeat(beat)))).await.is_err() {
                            break;
                        }
                    }
                    ev = events.recv() => match ev {
                        Ok(ev) => {
                            if tx.send(Ok(event_to_pb(&session_id, &ev))).await.is_err() {
                                break;
                            }
                        }
                        Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("listener for {session_id} dropped {n} events"),
                        Err(broadcast::error::RecvError::Closed) => {
                            let _ = tx.send(Err(Status::not_found(format!("session '{session_id}' closed")))).await;
                            break;
                        }
                    },
                    msg = inbound.message(), if client_open => match msg {
                        Ok(Some(m)) => log::debug!("client ack on {session_id}: {}", m.ack),
                        _ => client_open = false,
                    },
                }
            }
        });
        Ok(Response::new(Box::pin(ReceiverStream::new(rx)) as EventStream))
    }
}

/// Serve on `addr` until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, inner: Arc<SearchService>, heartbeat: Duration) -> Result<(), tonic::transport::Error> {
    tonic::transport::Server::builder()
        .add_service(GrpcService::new(inner, heartbeat).into_server())
        .serve(addr)
        .await
}
