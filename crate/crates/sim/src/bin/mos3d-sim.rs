use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mos3d_core::planner::PlannerKind;
use mos3d_sim::bench::{self, BenchConfig};
use mos3d_sim::trial::{run_trial, PriorKind, TrialSpec};
use mos3d_sim::{hier_demo, report, Result, SimError};

#[derive(Parser)]
#[command(name = "mos3d-sim", about = "Simulated 3D multi-object search")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single trial and print its metrics.
    Run(RunArgs),
    /// Run the benchmark matrix.
    Bench(BenchArgs),
    /// Plot a benchmark output directory as SVG.
    Report {
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
    },
    /// Run the hierarchical search demo.
    Hier(HierArgs),
}

/// Agent keys that can be overridden from the command line.
#[derive(Args, Clone)]
struct AgentArgs {
    /// TOML file with `[scenario]`, `[agent]` and `[planner]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    octree_size: Option<u32>,
    #[arg(long)]
    res: Option<f64>,
    #[arg(long)]
    num_sims: Option<usize>,
    #[arg(long)]
    num_nodes: Option<usize>,
    #[arg(long)]
    sep: Option<f64>,
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long)]
    prior_from_occupancy: Option<bool>,
    #[arg(long)]
    occupancy_fill_height: Option<bool>,
    /// Detector true-positive rate.
    #[arg(long)]
    true_positive: Option<f64>,
    /// XYZ point cloud used as the scene.
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long, default_value_t = 180.0)]
    budget: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long, default_value = "pouct")]
    planner: PlannerKind,
    #[arg(long, default_value = "occupancy")]
    prior: PriorKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the step trace to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    /// Restrict to settings whose name contains this string.
    #[arg(long)]
    only: Option<String>,
}

#[derive(Args)]
struct HierArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 180.0)]
    budget: f64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long)]
    true_positive: Option<f64>,
    #[arg(long)]
    camera_height: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    camera_pitch: Option<f64>,
    /// Down-weighting of global cells seen empty.
    #[arg(long)]
    beta2d: Option<f64>,
    /// Simulated seconds per local episode.
    #[arg(long)]
    local_budget: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    stay_penalty: Option<f64>,
    /// Fixed seconds added to every executed action.
    #[arg(long)]
    action_overhead: Option<f64>,
    /// Simulations per global planning step.
    #[arg(long)]
    global_sims: Option<usize>,
    #[arg(long)]
    global_depth: Option<usize>,
}

fn load_base(a: &AgentArgs) -> Result<BenchConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        }
        None => BenchConfig::default(),
    };
    let ag = &mut cfg.agent;
    if let Some(v) = a.octree_size {
        ag.octree_size = v;
    }
    if let Some(v) = a.res {
        ag.res = v;
    }
    if let Some(v) = a.num_sims {
        cfg.planner.num_sims = v;
    }
    if let Some(v) = a.num_nodes {
        ag.num_nodes = v;
    }
    if let Some(v) = a.sep {
        ag.sep = v;
    }
    if let Some(v) = a.inflation {
        ag.inflation = v;
    }
    if let Some(v) = a.prior_from_occupancy {
        ag.prior_from_occupancy = v;
    }
    if let Some(v) = a.occupancy_fill_height {
        ag.occupancy_fill_height = v;
    }
    if let Some(v) = a.true_positive {
        cfg.scenario.true_positive = v;
    }
    if let Some(p) = &a.cloud {
        cfg.scenario.cloud_file = Some(p.clone());
    }
    cfg.budget = a.budget;
    cfg.scenario.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let base = load_base(&args.agent)?;
    let mut spec = TrialSpec {
        scenario: base.scenario,
        agent: base.agent,
        planner: base.planner,
        prior: args.prior,
        budget: base.budget,
        seed: args.seed,
        ..TrialSpec::default()
    };
    spec.planner.kind = args.planner;
    if args.prior != PriorKind::Occupancy {
        spec.agent.prior_from_occupancy = false;
    }
    let m = run_trial(&spec)?;
    println!(
        "success={} length={:.3} planning_time={:.3} sim_time={:.3} total_time={:.3} steps={} found={}",
        m.success, m.length, m.planning_time, m.sim_time, m.total_time, m.steps, m.num_found
    );
    if let Some(p) = args.out {
        bench::write_trace(&m, &p)?;
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let mut cfg = load_base(&args.agent)?;
    cfg.seeds = (args.seed..args.seed + args.trials).collect();
    if let Some(f) = &args.only {
        cfg.settings.retain(|s| s.name.contains(f.as_str()));
    }
    let res = bench::run_matrix(&cfg)?;
    bench::write_outputs(&res, &args.out)?;
    print!("{}", bench::report_table(&res));
    Ok(())
}

fn run_hier(args: HierArgs) -> Result<()> {
    let mut cfg = hier_demo::HierDemoConfig { budget: args.budget, ..Default::default() };
    if let Some(v) = args.true_positive {
        cfg.scenario.true_positive = v;
    }
    if let Some(v) = args.camera_height {
        cfg.camera_height = v;
    }
    if let Some(v) = args.camera_pitch {
        cfg.camera_pitch = v;
    }
    if let Some(v) = args.beta2d {
        cfg.hier.beta = v;
    }
    if let Some(v) = args.local_budget {
        cfg.hier.local_budget = v;
    }
    if let Some(v) = args.stay_penalty {
        cfg.hier.stay_penalty = v;
    }
    if let Some(v) = args.action_overhead {
        cfg.scenario.action_overhead = v;
    }
    if let Some(v) = args.global_sims {
        cfg.search.num_sims = v;
    }
    if let Some(v) = args.global_depth {
        cfg.search.max_depth = v;
    }
    let mut successes = 0;
    for seed in args.seed..args.seed + args.trials {
        let r = hier_demo::run_hier(&cfg, seed)?;
        println!(
            "seed={seed} success={} sim_time={:.2} length={:.2} local_episodes={} global_steps={}",
            r.success, r.sim_time, r.length, r.local_episodes, r.global_steps
        );
        successes += r.success as u64;
    }
    println!("success {successes}/{}", args.trials);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Report { out } => report::write_report(&out).map(|p| println!("wrote {}", p.display())),
        Cmd::Hier(a) => run_hier(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
