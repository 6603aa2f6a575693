use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;

use mos3d_service::grpc::serve;
use mos3d_service::SearchService;

/// Serve object-search sessions over gRPC.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:50051")]
    addr: SocketAddr,
    /// Seconds between heartbeat events on listener streams.
    #[arg(long, default_value_t = 5.0)]
    heartbeat: f64,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    log::info!("listening on {}", args.addr);
    serve(args.addr, Arc::new(SearchService::new()), Duration::from_secs_f64(args.heartbeat.max(0.01))).await?;
    Ok(())
}
