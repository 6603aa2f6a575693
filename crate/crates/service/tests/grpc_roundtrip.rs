use std::sync::Arc;
use std::time::Duration;

use tokio_stream::wrappers::TcpListenerStream;
use tokio_stream::StreamExt;
use tonic::transport::{Channel, Server};

use mos3d_core::cloud::PointCloud;
use mos3d_core::spatial::{CameraPose, Vec3};
use mos3d_service::grpc::pb::{self, server_message::Event};
use mos3d_service::grpc::{detection_to_pb, GrpcService, SearchServiceClient};
use mos3d_service::{DetectionMessage, SearchService};

async fn start() -> (SearchServiceClient<Channel>, Arc<SearchService>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let inner = Arc::new(SearchService::new());
    let svc = GrpcService::new(inner.clone(), Duration::from_millis(50)).into_server();
    tokio::spawn(Server::builder().add_service(svc).serve_with_incoming(TcpListenerStream::new(listener)));
    let client = SearchServiceClient::connect(format!("http://{addr}")).await.unwrap();
    (client, inner)
}

fn cloud() -> Vec<u8> {
    let mut pts = Vec::new();
    for i in 0..32 {
        for j in 0..32 {
            pts.push(Vec3::new(-1.55 + 0.1 * i as f64, -1.55 + 0.1 * j as f64, 0.05));
        }
    }
    PointCloud::new(pts).unwrap().to_packed()
}

fn pose() -> pb::Pose {
    CameraPose::look_at(Vec3::new(-1.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.7)).into()
}

fn agent_config() -> pb::AgentConfig {
    pb::AgentConfig {
        octree_size: 32,
        res: 0.1,
        num_sims: 100,
        targets: vec![pb::TargetSpec { id: 1, alpha: 1e5, beta: 0.3 }],
        ..Default::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rpc_lifecycle_and_events() {
    let (mut client, _) = start().await;
    let id = client
        .create_agent(pb::CreateAgentRequest { session_id: String::new(), config: Some(agent_config()) })
        .await
        .unwrap()
        .into_inner()
        .session_id;

    let bad = pb::AgentConfig { octree_size: 33, ..agent_config() };
    let err = client.create_agent(pb::CreateAgentRequest { session_id: "x".into(), config: Some(bad) }).await.unwrap_err();
    assert_eq!(err.code(), tonic::Code::InvalidArgument);
    assert!(err.message().contains("octree_size"));

    let (tx, rx) = tokio::sync::mpsc::channel(4);
    tx.send(pb::ClientMessage { session_id: id.clone(), ack: String::new() }).await.unwrap();
    let mut events = client.listen_server(tokio_stream::wrappers::ReceiverStream::new(rx)).await.unwrap().into_inner();

    let reply = client
        .update_search_region(pb::UpdateSearchRegionRequest { session_id: id.clone(), cloud: cloud(), robot_pose: Some(pose()) })
        .await
        .unwrap()
        .into_inner();
    assert_eq!(reply.state, "ready");

    let err = client.plan_action(pb::PlanActionRequest { session_id: id.clone() }).await.unwrap_err();
    assert_eq!(err.code(), tonic::Code::FailedPrecondition);
    client
        .create_planner(pb::CreatePlannerRequest { session_id: id.clone(), kind: "pouct".into(), num_sims: 200, ..Default::default() })
        .await
        .unwrap();

    let det = detection_to_pb(&DetectionMessage::boxed(1, Vec3::new(0.75, 0.05, 0.75), Vec3::new(0.09, 0.09, 0.09)));
    for seq in 1..=2 {
        let r = client
            .process_observation(pb::ProcessObservationRequest {
                session_id: id.clone(),
                seq,
                robot_pose: Some(pose()),
                detections: vec![det.clone()],
                cloud: vec![],
            })
            .await
            .unwrap()
            .into_inner();
        assert!(!r.duplicate);
    }
    let plan = client.plan_action(pb::PlanActionRequest { session_id: id.clone() }).await.unwrap().into_inner();
    assert_eq!(plan.action_type, "find");
    assert!(plan.terminal);
    let err = client.plan_action(pb::PlanActionRequest { session_id: id.clone() }).await.unwrap_err();
    assert_eq!(err.code(), tonic::Code::FailedPrecondition);

    let (mut graph, mut found, mut beats) = (false, false, 0);
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while !(graph && found && beats >= 2) && tokio::time::Instant::now() < deadline {
        let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(1), events.next()).await else { break };
        match msg.unwrap().event.unwrap() {
            Event::Graph(g) => graph |= !g.nodes.is_empty(),
            Event::Found(f) => {
                assert_eq!(f.object_id, 1);
                assert_eq!((f.x, f.y, f.z), (23, 16, 7));
                found = true;
            }
            Event::Heartbeat(_) => beats += 1,
            _ => {}
        }
    }
    assert!(graph && found && beats >= 2, "graph {graph} found {found} beats {beats}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn listening_on_missing_or_closed_session_fails() {
    let (mut client, inner) = start().await;
    let (tx, rx) = tokio::sync::mpsc::channel(1);
    tx.send(pb::ClientMessage { session_id: "nope".into(), ack: String::new() }).await.unwrap();
    let err = client.listen_server(tokio_stream::wrappers::ReceiverStream::new(rx)).await.unwrap_err();
    assert_eq!(err.code(), tonic::Code::NotFound);

    let id = client
        .create_agent(pb::CreateAgentRequest { session_id: "s".into(), config: Some(agent_config()) })
        .await
        .unwrap()
        .into_inner()
        .session_id;
    let (tx, rx) = tokio::sync::mpsc::channel(1);
    tx.send(pb::ClientMessage { session_id: id.clone(), ack: String::new() }).await.unwrap();
    let mut events = client.listen_server(tokio_stream::wrappers::ReceiverStream::new(rx)).await.unwrap().into_inner();
    inner.close(&id).unwrap();
    let mut ended_with_error = false;
    while let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(2), events.next()).await {
        if let Err(s) = msg {
            assert_eq!(s.code(), tonic::Code::NotFound);
            ended_with_error = true;
            break;
        }
    }
    assert!(ended_with_error);
}
