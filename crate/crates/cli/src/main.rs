//! `roadharness` command-line entry point.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use roadharness::agents::{AgentError, AgentRegistry};
use roadharness::harness::{
    run_scenario, HarnessConfig, HarnessError, LocalClient, RunResult, TerminatedBy, WorldClient,
    DEFAULT_MAX_FRAMES, DEFAULT_STEP_BUDGET_MS,
};
use roadharness::route::{interpolate_route, parse_route, to_geo, GeoOrigin, DEFAULT_SPACING_M};
use roadharness::sensors::SensorKind;
use roadharness::sim::{World, WorldMap};
use roadharness::wire::{self, RemoteClient, Role};

const EXIT_OK: u8 = 0;
const EXIT_INFRACTIONS: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "roadharness", version, about = "Deterministic scenario runner for autonomous driving agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drive one agent along a route and print the run summary
    Run(RunArgs),
    /// Check a route file and report its dense form
    ValidateRoute(ValidateArgs),
    /// Print every resolvable agent with its parameters and sensor rig
    ListAgents,
    /// Host a world for remote clients
    Serve(ServeArgs),
    /// Re-execute a run log and check it frame by frame
    Replay(ReplayArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Agent name, e.g. pp_fast, pp_safe_s3 or ext:host:port
    #[arg(long)]
    agent: String,
    /// Route file (XML keypoints)
    #[arg(long)]
    route: PathBuf,
    /// Map file (TOML); not needed with --connect
    #[arg(long, required_unless_present = "connect")]
    map: Option<PathBuf>,
    /// Where to write the per-frame run log
    #[arg(long)]
    out: Option<PathBuf>,
    /// World seed for the in-process world
    #[arg(long, env = "HARNESS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_FRAMES, value_parser = clap::value_parser!(u64).range(1..))]
    max_frames: u64,
    /// Wall-clock budget per agent step
    #[arg(long, default_value_t = DEFAULT_STEP_BUDGET_MS, value_parser = clap::value_parser!(u64).range(1..))]
    step_budget_ms: u64,
    /// Dense route spacing in meters
    #[arg(long, default_value_t = DEFAULT_SPACING_M, value_parser = positive_f64)]
    spacing: f64,
    /// Run against a world server at host:port instead of in-process
    #[arg(long)]
    connect: Option<String>,
    /// Human-readable summary instead of JSON
    #[arg(long)]
    pretty: bool,
}

#[derive(clap::Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    route: PathBuf,
    /// Map whose geographic origin anchors the reported bounds
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPACING_M, value_parser = positive_f64)]
    spacing: f64,
}

#[derive(clap::Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// 0 picks a free port
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, env = "HARNESS_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read_file(flag: &str, path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(EXIT_INPUT, format!("{flag} {}: {e}", path.display())))
}

fn load_map(path: &Path) -> Result<WorldMap, Failure> {
    WorldMap::parse(&read_file("--map", path)?).map_err(|e| fail(EXIT_INPUT, format!("--map {}: {e}", path.display())))
}

fn harness_failure(e: HarnessError, args: &RunArgs) -> Failure {
    let route = args.route.display();
    match e {
        HarnessError::Agent(AgentError::UnknownAgent(_) | AgentError::MalformedName(_)) => {
            fail(EXIT_USAGE, format!("--agent: {e}"))
        }
        HarnessError::RouteFile { .. } | HarnessError::Route(_) => fail(EXIT_INPUT, format!("--route {route}: {e}")),
        HarnessError::Map(_) | HarnessError::NoSpawnPoints => fail(EXIT_INPUT, format!("map: {e}")),
        HarnessError::InvalidConfig(_) => fail(EXIT_USAGE, e.to_string()),
        other => fail(EXIT_RUNTIME, other.to_string()),
    }
}

fn cmd_run(args: &RunArgs) -> Result<u8, Failure> {
    // fail on unreadable inputs before touching any world
    read_file("--route", &args.route)?;
    let client: Arc<dyn WorldClient> = match &args.connect {
        Some(endpoint) => {
            let (host, port) = wire::split_host_port(endpoint).map_err(|e| fail(EXIT_USAGE, format!("--connect: {e}")))?;
            let client = RemoteClient::connect(&host, port, Role::Authority)
                .map_err(|e| fail(EXIT_RUNTIME, format!("--connect {endpoint}: {e}")))?;
            if client.role() != Some(Role::Authority) {
                return Err(fail(EXIT_RUNTIME, format!("--connect {endpoint}: authority already taken")));
            }
            Arc::new(client)
        }
        None => {
            let map_path = args.map.as_deref().expect("clap requires --map without --connect");
            Arc::new(LocalClient::new(World::new(load_map(map_path)?, args.seed)))
        }
    };
    let config = HarnessConfig {
        max_frames: args.max_frames,
        step_budget_ms: args.step_budget_ms,
        spacing: args.spacing,
        log_path: args.out.clone(),
        ..HarnessConfig::new(&args.agent, &args.route)
    };
    let result = run_scenario(&config, client).map_err(|e| harness_failure(e, args))?;
    let summary = if args.pretty {
        pretty_summary(&result)
    } else {
        serde_json::to_string(&result).expect("result serializes")
    };
    println!("{summary}");
    let clean = result.terminated_by == TerminatedBy::Completed && result.infractions.is_empty();
    Ok(if clean { EXIT_OK } else { EXIT_INFRACTIONS })
}

fn pretty_summary(r: &RunResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "agent        {}", r.agent_name);
    let _ = writeln!(out, "route        {}", r.route_id);
    let _ = writeln!(out, "seed         {}", r.seed);
    let _ = writeln!(out, "frames       {}", r.frames_executed);
    let _ = writeln!(out, "completion   {:.4}", r.completion);
    let _ = writeln!(out, "terminated   {:?}", r.terminated_by);
    if let Some(p) = &r.log_path {
        let _ = writeln!(out, "log          {}", p.display());
    }
    let _ = write!(out, "infractions  {}", r.infractions.len());
    for i in &r.infractions {
        let _ = write!(out, "\n  frame {:>6}  {:<16} {}", i.frame, format!("{:?}", i.kind), i.detail);
    }
    out
}

fn cmd_validate_route(args: &ValidateArgs) -> Result<u8, Failure> {
    let text = read_file("--route", &args.route)?;
    let route_err = |e: &dyn std::fmt::Display| fail(EXIT_INPUT, format!("--route {}: {e}", args.route.display()));
    let route = parse_route(&text).map_err(|e| route_err(&e))?;
    let origin = match &args.map {
        Some(p) => load_map(p)?.geo_origin,
        None => GeoOrigin::default(),
    };
    let dense = interpolate_route(&route, args.spacing).map_err(|e| route_err(&e))?;
    let geo = to_geo(&dense, &origin).map_err(|e| route_err(&e))?;

    let positions = dense.positions();
    let gaps: Vec<f64> = positions
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let polyline: f64 = route.keypoints.windows(2).map(|w| w[0].distance_to(&w[1])).sum();
    let gaps_ok = max_gap <= args.spacing + 1e-9;
    let length_ok = (dense.total_length() - polyline).abs() <= 1e-9 * polyline.max(1.0);
    let lat = geo.geopoints.iter().map(|g| g.location.latitude);
    let lon = geo.geopoints.iter().map(|g| g.location.longitude);
    let report = json!({
        "route_id": route.route_id,
        "town": route.town,
        "keypoints": route.keypoints.len(),
        "waypoints": dense.len(),
        "total_length": dense.total_length(),
        "max_gap": max_gap,
        "geo_bounds": {
            "min_latitude": lat.clone().fold(f64::INFINITY, f64::min),
            "max_latitude": lat.fold(f64::NEG_INFINITY, f64::max),
            "min_longitude": lon.clone().fold(f64::INFINITY, f64::min),
            "max_longitude": lon.fold(f64::NEG_INFINITY, f64::max),
        },
        "valid": gaps_ok && length_ok,
    });
    println!("{report}");
    Ok(if gaps_ok && length_ok { EXIT_OK } else { EXIT_INFRACTIONS })
}

fn describe_kind(kind: &SensorKind) -> String {
    match kind {
        SensorKind::Gnss => "gnss".into(),
        SensorKind::Imu => "imu".into(),
        SensorKind::Speedometer => "speedometer".into(),
        SensorKind::BevOccupancy {
            cells_x,
            cells_y,
            meters_per_cell,
        } => format!("bev_occupancy({cells_x}x{cells_y}@{meters_per_cell})"),
    }
}

fn cmd_list_agents() -> Result<u8, Failure> {
    let registry = AgentRegistry::builtin();
    let mut out = String::new();
    for name in registry.names() {
        let f = registry.resolve(&name).map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
        let params: Vec<String> = f.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let rig: Vec<String> = f
            .sensors
            .iter()
            .map(|s| format!("{}:{}", s.sensor_id, describe_kind(&s.kind)))
            .collect();
        let _ = writeln!(
            out,
            "{name}\tfamily={}\tparams={}\trig={}",
            f.family,
            params.join(","),
            rig.join(",")
        );
    }
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(out.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    Ok(EXIT_OK)
}

fn cmd_serve(args: &ServeArgs) -> Result<u8, Failure> {
    let map = load_map(&args.map)?;
    let server = wire::serve(&args.bind, args.port, map, args.seed).map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    println!("listening on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    server.wait();
    Ok(EXIT_OK)
}

fn cmd_replay(args: &ReplayArgs) -> Result<u8, Failure> {
    match roadharness::harness::replay(&args.log) {
        Ok(result) => {
            println!("{}", serde_json::to_string(&result).expect("result serializes"));
            Ok(EXIT_OK)
        }
        Err(HarnessError::DeterminismViolation(frame)) => {
            Err(fail(EXIT_RUNTIME, format!("replay diverged at frame {frame}")))
        }
        Err(e @ HarnessError::LogCorrupt(_)) => Err(fail(EXIT_INPUT, format!("--log {}: {e}", args.log.display()))),
        Err(e) => Err(fail(EXIT_RUNTIME, e.to_string())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ValidateRoute(args) => cmd_validate_route(args),
        Command::ListAgents => cmd_list_agents(),
        Command::Serve(args) => cmd_serve(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
