//! Binds an agent, an ego vehicle, a route and a world client.
//!
//! [`Harness`] turns world snapshots into sensor frames, runs the agent
//! under a wall-clock budget and hands back an action for the caller to
//! apply. [`run_scenario`] drives the whole loop, scores the run and writes
//! a replayable log; [`replay`] re-executes such a log without the agent.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Agent, AgentError, AgentRegistry};
use crate::codec::encode_to_vec;
use crate::model::{ControlAction, Transform, VehicleState};
use crate::route::{
    interpolate_route, parse_route, to_geo, DenseRoute, GeoRoute, ProgressTracker, RouteError, RouteFile,
    RouteProgress, DEFAULT_SPACING_M,
};
use crate::sensors::{SensorError, SensorFrame, SensorRig, SensorSpec};
use crate::sim::{ActorBlueprint, ActorId, MapError, WeatherParams, World, WorldError, WorldMap, WorldState};
use crate::wire::WireError;

pub const DEFAULT_STEP_BUDGET_MS: u64 = 100;
pub const DEFAULT_COMPLETION_THRESHOLD: f64 = 0.99;
pub const DEFAULT_OFF_ROUTE_LIMIT_M: f64 = 15.0;
pub const DEFAULT_MAX_FRAMES: u64 = 2400;
const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    World(WorldError),
    #[error(transparent)]
    Wire(WireError),
}

impl From<WorldError> for ClientError {
    fn from(e: WorldError) -> Self {
        ClientError::World(e)
    }
}

impl From<WireError> for ClientError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::World(w) => ClientError::World(w),
            other => ClientError::Wire(other),
        }
    }
}

/// World operations a harness needs, in-process or over the wire.
pub trait WorldClient: Send + Sync {
    fn map(&self) -> Arc<WorldMap>;
    fn state(&self) -> Result<WorldState, ClientError>;
    fn spawn_actor(&self, blueprint: ActorBlueprint, at: Transform) -> Result<ActorId, ClientError>;
    fn apply_control(&self, actor: ActorId, action: ControlAction) -> Result<(), ClientError>;
    fn set_weather(&self, params: WeatherParams) -> Result<(), ClientError>;
    fn set_autopilot(&self, actor: ActorId, route: &DenseRoute, speed: f64) -> Result<(), ClientError>;
    /// Advances one frame and returns the new frame number.
    fn tick(&self) -> Result<u64, ClientError>;
}

/// In-process client sharing a world behind a mutex.
#[derive(Clone)]
pub struct LocalClient {
    world: Arc<Mutex<World>>,
    map: Arc<WorldMap>,
}

impl LocalClient {
    pub fn new(world: World) -> Self {
        Self::from_shared(Arc::new(Mutex::new(world)))
    }

    pub fn from_shared(world: Arc<Mutex<World>>) -> Self {
        let map = world.lock().unwrap_or_else(|p| p.into_inner()).shared_map();
        Self { world, map }
    }

    pub fn world(&self) -> Arc<Mutex<World>> {
        Arc::clone(&self.world)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, World> {
        self.world.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl WorldClient for LocalClient {
    fn map(&self) -> Arc<WorldMap> {
        Arc::clone(&self.map)
    }

    fn state(&self) -> Result<WorldState, ClientError> {
        Ok(self.lock().snapshot())
    }

    fn spawn_actor(&self, blueprint: ActorBlueprint, at: Transform) -> Result<ActorId, ClientError> {
        Ok(self.lock().spawn_actor(blueprint, at)?)
    }

    fn apply_control(&self, actor: ActorId, action: ControlAction) -> Result<(), ClientError> {
        Ok(self.lock().apply_control(actor, action)?)
    }

    fn set_weather(&self, params: WeatherParams) -> Result<(), ClientError> {
        Ok(self.lock().set_weather(params)?)
    }

    fn set_autopilot(&self, actor: ActorId, route: &DenseRoute, speed: f64) -> Result<(), ClientError> {
        Ok(self.lock().set_autopilot(actor, route.clone(), speed)?)
    }

    fn tick(&self) -> Result<u64, ClientError> {
        Ok(self.lock().tick().frame)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("cannot read route {path}: {reason}")]
    RouteFile { path: String, reason: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("no actor with id {0}")]
    NoSuchActor(ActorId),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("out of lockstep: expected frame {expected}, world is at {actual}")]
    OutOfLockstep { expected: u64, actual: u64 },
    #[error("map has no spawn points")]
    NoSpawnPoints,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot write log {path}: {reason}")]
    LogWrite { path: String, reason: String },
    #[error("corrupt log: {0}")]
    LogCorrupt(String),
    #[error("replay diverged at frame {0}")]
    DeterminismViolation(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    Collision,
    OffRoad,
    RouteDeviation,
    AgentTimeout,
    AgentError,
}

impl InfractionKind {
    /// Raised by the harness watchdog rather than read off the world.
    pub fn is_agent_fault(self) -> bool {
        matches!(self, InfractionKind::AgentTimeout | InfractionKind::AgentError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infraction {
    pub frame: u64,
    pub kind: InfractionKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Completed,
    MaxFrames,
    FatalInfraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub agent_name: String,
    pub route_id: String,
    pub seed: u64,
    pub frames_executed: u64,
    pub completion: f64,
    pub infractions: Vec<Infraction>,
    pub terminated_by: TerminatedBy,
    pub log_path: Option<PathBuf>,
}

impl RunResult {
    /// Hex sha256 over everything except `log_path`.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.log_path = None;
        let json = serde_json::to_vec(&canonical).expect("result serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn count(&self, kind: InfractionKind) -> usize {
        self.infractions.iter().filter(|i| i.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub agent_name: String,
    pub route_path: PathBuf,
    pub ego_blueprint: ActorBlueprint,
    pub step_budget_ms: u64,
    pub max_frames: u64,
    pub completion_threshold: f64,
    pub off_route_limit: f64,
    pub spacing: f64,
    pub log_path: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn new(agent_name: impl Into<String>, route_path: impl Into<PathBuf>) -> Self {
        Self {
            agent_name: agent_name.into(),
            route_path: route_path.into(),
            ego_blueprint: ActorBlueprint::vehicle(),
            step_budget_ms: DEFAULT_STEP_BUDGET_MS,
            max_frames: DEFAULT_MAX_FRAMES,
            completion_threshold: DEFAULT_COMPLETION_THRESHOLD,
            off_route_limit: DEFAULT_OFF_ROUTE_LIMIT_M,
            spacing: DEFAULT_SPACING_M,
            log_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_owned()));
        if self.step_budget_ms == 0 {
            return bad("step budget must be positive");
        }
        if self.max_frames == 0 {
            return bad("max frames must be positive");
        }
        if !(self.completion_threshold > 0.0 && self.completion_threshold <= 1.0) {
            return bad("completion threshold must lie in (0, 1]");
        }
        if !(self.off_route_limit > 0.0 && self.off_route_limit.is_finite()) {
            return bad("off-route limit must be positive");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive");
        }
        self.ego_blueprint
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn step_budget(&self) -> Duration {
        Duration::from_millis(self.step_budget_ms)
    }
}

#[derive(Clone)]
pub struct HarnessOptions {
    pub spacing: f64,
    pub step_budget: Duration,
    pub registry: AgentRegistry,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            spacing: DEFAULT_SPACING_M,
            step_budget: Duration::from_millis(DEFAULT_STEP_BUDGET_MS),
            registry: AgentRegistry::builtin(),
        }
    }
}

enum Job {
    Step(u64, SensorFrame),
    Stop,
}

enum StepOutcome {
    Action(ControlAction),
    Failed(String),
}

/// Runs the agent on its own thread so a stuck step can be abandoned.
struct AgentWorker {
    jobs: Sender<Job>,
    results: Receiver<(u64, StepOutcome)>,
}

impl AgentWorker {
    fn spawn(mut agent: Box<dyn Agent>) -> Self {
        let (jobs, job_rx) = mpsc::channel::<Job>();
        let (result_tx, results) = mpsc::channel();
        thread::Builder::new()
            .name("agent-step".into())
            .spawn(move || {
                while let Ok(mut job) = job_rx.recv() {
                    // jobs queued behind an overrun are already stale
                    while let Ok(next) = job_rx.try_recv() {
                        job = next;
                    }
                    let Job::Step(frame, sensors) = job else { break };
                    let outcome = match catch_unwind(AssertUnwindSafe(|| agent.run_step(&sensors))) {
                        Ok(Ok(action)) => StepOutcome::Action(action),
                        Ok(Err(e)) => StepOutcome::Failed(e.to_string()),
                        Err(panic) => StepOutcome::Failed(panic_message(&*panic)),
                    };
                    if result_tx.send((frame, outcome)).is_err() {
                        break;
                    }
                }
                agent.destroy();
            })
            .expect("spawn agent thread");
        Self { jobs, results }
    }

    /// `None` when the budget expires first.
    fn step(&self, frame: u64, sensors: SensorFrame, budget: Duration) -> Option<StepOutcome> {
        if self.jobs.send(Job::Step(frame, sensors)).is_err() {
            return Some(StepOutcome::Failed("agent thread exited".into()));
        }
        let deadline = Instant::now() + budget;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.results.recv_timeout(remaining) {
                Ok((f, outcome)) if f == frame => return Some(outcome),
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => return None,
                Err(RecvTimeoutError::Disconnected) => {
                    return Some(StepOutcome::Failed("agent thread exited".into()))
                }
            }
        }
    }
}

impl Drop for AgentWorker {
    fn drop(&mut self) {
        let _ = self.jobs.send(Job::Stop);
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    let text = panic
        .downcast_ref::<&str>()
        .map(|s| (*s).to_owned())
        .or_else(|| panic.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("agent panicked: {text}")
}

pub(crate) fn read_route_file(path: &Path) -> Result<(RouteFile, String), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::RouteFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok((parse_route(&text)?, text))
}

/// One agent driving one ego vehicle in lockstep with the world.
pub struct Harness {
    agent_name: String,
    ego: ActorId,
    client: Arc<dyn WorldClient>,
    map: Arc<WorldMap>,
    route: RouteFile,
    dense: DenseRoute,
    geo: GeoRoute,
    specs: Vec<SensorSpec>,
    rig: SensorRig,
    worker: AgentWorker,
    expected_frame: u64,
    budget: Duration,
    infractions: Vec<Infraction>,
    last_digest: Option<String>,
}

impl Harness {
    /// Resolves the agent, reads the route and readies everything at the
    /// world's current frame.
    pub fn create(
        agent_name: &str,
        ego: ActorId,
        route_path: &Path,
        client: Arc<dyn WorldClient>,
    ) -> Result<Self, HarnessError> {
        Self::create_with(agent_name, ego, route_path, client, &HarnessOptions::default())
    }

    pub fn create_with(
        agent_name: &str,
        ego: ActorId,
        route_path: &Path,
        client: Arc<dyn WorldClient>,
        options: &HarnessOptions,
    ) -> Result<Self, HarnessError> {
        let factory = options.registry.resolve(agent_name)?;
        let (route, _) = read_route_file(route_path)?;
        Self::assemble(factory, ego, route, client, options)
    }

    pub fn from_route(
        agent_name: &str,
        ego: ActorId,
        route: RouteFile,
        client: Arc<dyn WorldClient>,
        options: &HarnessOptions,
    ) -> Result<Self, HarnessError> {
        let factory = options.registry.resolve(agent_name)?;
        Self::assemble(factory, ego, route, client, options)
    }

    fn assemble(
        factory: crate::agents::AgentFactory,
        ego: ActorId,
        route: RouteFile,
        client: Arc<dyn WorldClient>,
        options: &HarnessOptions,
    ) -> Result<Self, HarnessError> {
        if options.step_budget.is_zero() {
            return Err(HarnessError::InvalidConfig("step budget must be positive".into()));
        }
        let state = client.state()?;
        if state.actor(ego).is_none() {
            return Err(HarnessError::NoSuchActor(ego));
        }
        let map = client.map();
        let dense = interpolate_route(&route, options.spacing)?;
        let geo = to_geo(&dense, &map.geo_origin)?;
        let rig = SensorRig::build(&factory.sensors, ego, state.seed)?;
        let mut agent = factory.instantiate()?;
        agent.setup(&factory.config(geo.clone(), dense.clone()))?;
        Ok(Self {
            agent_name: factory.name.clone(),
            ego,
            client,
            map,
            route,
            dense,
            geo,
            specs: factory.sensors,
            rig,
            worker: AgentWorker::spawn(agent),
            expected_frame: state.frame,
            budget: options.step_budget,
            infractions: Vec::new(),
            last_digest: None,
        })
    }

    /// Samples the rig, runs the agent and returns the action to apply.
    /// The world must sit exactly one tick past the previous call.
    pub fn get_action(&mut self) -> Result<ControlAction, HarnessError> {
        let state = self.client.state()?;
        if state.frame != self.expected_frame {
            return Err(HarnessError::OutOfLockstep {
                expected: self.expected_frame,
                actual: state.frame,
            });
        }
        let sensors = self.rig.sample(&state, &self.map)?;
        self.last_digest = Some(sensors.digest());
        let action = match self.worker.step(state.frame, sensors, self.budget) {
            Some(StepOutcome::Action(a)) => match a.validate() {
                Ok(a) => a,
                Err(e) => self.safe_stop(state.frame, InfractionKind::AgentError, e.to_string()),
            },
            Some(StepOutcome::Failed(reason)) => self.safe_stop(state.frame, InfractionKind::AgentError, reason),
            None => self.safe_stop(
                state.frame,
                InfractionKind::AgentTimeout,
                format!("no action within {} ms", self.budget.as_millis()),
            ),
        };
        self.expected_frame += 1;
        Ok(action)
    }

    fn safe_stop(&mut self, frame: u64, kind: InfractionKind, detail: String) -> ControlAction {
        log::warn!("frame {frame}: {detail}");
        self.infractions.push(Infraction { frame, kind, detail });
        ControlAction::safe_stop()
    }

    /// Agent faults recorded since the last call.
    pub fn take_infractions(&mut self) -> Vec<Infraction> {
        std::mem::take(&mut self.infractions)
    }

    pub fn agent_name(&self) -> &str {
        &self.agent_name
    }

    pub fn ego(&self) -> ActorId {
        self.ego
    }

    pub fn route(&self) -> &RouteFile {
        &self.route
    }

    pub fn dense_route(&self) -> &DenseRoute {
        &self.dense
    }

    pub fn geo_route(&self) -> &GeoRoute {
        &self.geo
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.specs
    }

    /// Frame the next `get_action` expects.
    pub fn expected_frame(&self) -> u64 {
        self.expected_frame
    }

    pub fn last_sensor_digest(&self) -> Option<&str> {
        self.last_digest.as_deref()
    }

    /// Destroys the agent. Dropping the harness does the same.
    pub fn close(self) {}
}

/// Scores world snapshots for one ego: progress plus world infractions.
struct Referee {
    ego: ActorId,
    tracker: ProgressTracker,
    off_route_limit: f64,
    off_road: bool,
    deviating: bool,
}

struct Verdict {
    progress: RouteProgress,
    infractions: Vec<Infraction>,
    fatal: bool,
    ego: VehicleState,
}

impl Referee {
    fn new(ego: ActorId, off_route_limit: f64) -> Self {
        Self {
            ego,
            tracker: ProgressTracker::new(),
            off_route_limit,
            off_road: false,
            deviating: false,
        }
    }

    fn observe(&mut self, route: &DenseRoute, state: &WorldState) -> Result<Verdict, HarnessError> {
        let ego = state.actor(self.ego).ok_or(HarnessError::NoSuchActor(self.ego))?.state;
        let progress = self.tracker.update(route, &ego.transform);
        let mut infractions = Vec::new();
        let mut fatal = false;
        for &(a, b) in &state.collisions_this_frame {
            if a == self.ego || b == self.ego {
                let other = if a == self.ego { b } else { a };
                infractions.push(Infraction {
                    frame: state.frame,
                    kind: InfractionKind::Collision,
                    detail: format!("collision with actor {other}"),
                });
                fatal = true;
            }
        }
        let off_road = state.off_road.contains(&self.ego);
        if off_road && !self.off_road {
            infractions.push(Infraction {
                frame: state.frame,
                kind: InfractionKind::OffRoad,
                detail: "left the road".into(),
            });
        }
        self.off_road = off_road;
        let deviating = progress.cross_track > self.off_route_limit;
        if deviating && !self.deviating {
            infractions.push(Infraction {
                frame: state.frame,
                kind: InfractionKind::RouteDeviation,
                detail: format!("cross-track error {:.2} m", progress.cross_track),
            });
        }
        self.deviating = deviating;
        Ok(Verdict {
            progress,
            infractions,
            fatal,
            ego,
        })
    }
}

fn termination(verdict: &Verdict, frames: u64, config: &HarnessConfig) -> Option<TerminatedBy> {
    if verdict.fatal {
        Some(TerminatedBy::FatalInfraction)
    } else if verdict.progress.completion >= config.completion_threshold {
        Some(TerminatedBy::Completed)
    } else if frames >= config.max_frames {
        Some(TerminatedBy::MaxFrames)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogHeader {
    log_version: u32,
    agent_name: String,
    route_id: String,
    seed: u64,
    fixed_delta: f64,
    ego: ActorId,
    config: HarnessConfig,
    rig: Vec<SensorSpec>,
    map: String,
    route: String,
    initial_state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    frame: u64,
    sim_time: f64,
    ego: VehicleState,
    control: ControlAction,
    sensor_digest: String,
    infractions: Vec<Infraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogRecord {
    Header(Box<LogHeader>),
    Frame(FrameRecord),
    Result(RunResult),
}

struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|e| Self::error(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            out: BufWriter::new(file),
        })
    }

    fn error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
        HarnessError::LogWrite {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    fn append(&mut self, record: &LogRecord) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Self::error(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| Self::error(&self.path, e))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.out.flush().map_err(|e| Self::error(&self.path, e))
    }
}

pub fn run_scenario(config: &HarnessConfig, client: Arc<dyn WorldClient>) -> Result<RunResult, HarnessError> {
    run_scenario_with(&AgentRegistry::builtin(), config, client)
}

/// Spawns the ego at the route start and drives it until completion, a
/// fatal infraction or `max_frames`.
pub fn run_scenario_with(
    registry: &AgentRegistry,
    config: &HarnessConfig,
    client: Arc<dyn WorldClient>,
) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let (route, route_text) = read_route_file(&config.route_path)?;
    let map = client.map();
    if map.spawn_points.is_empty() {
        return Err(HarnessError::NoSpawnPoints);
    }
    let ego = client.spawn_actor(config.ego_blueprint, route.keypoints[0])?;
    let options = HarnessOptions {
        spacing: config.spacing,
        step_budget: config.step_budget(),
        registry: registry.clone(),
    };
    let mut harness = Harness::from_route(&config.agent_name, ego, route.clone(), Arc::clone(&client), &options)?;
    let initial_state = client.state()?;
    let seed = initial_state.seed;

    let mut log = match &config.log_path {
        Some(path) => Some(LogWriter::create(path)?),
        None => None,
    };
    if let Some(log) = log.as_mut() {
        log.append(&LogRecord::Header(Box::new(LogHeader {
            log_version: LOG_VERSION,
            agent_name: harness.agent_name().to_owned(),
            route_id: route.route_id.clone(),
            seed,
            fixed_delta: initial_state.fixed_delta,
            ego,
            config: HarnessConfig {
                log_path: None,
                ..config.clone()
            },
            rig: harness.sensors().to_vec(),
            map: map.to_document(),
            route: route_text,
            initial_state: initial_state.clone(),
        })))?;
    }

    let mut referee = Referee::new(ego, config.off_route_limit);
    let mut infractions = Vec::new();
    let mut frames = 0u64;
    let (terminated_by, completion) = loop {
        let control = harness.get_action()?;
        client.apply_control(ego, control)?;
        client.tick()?;
        let state = client.state()?;
        let verdict = referee.observe(harness.dense_route(), &state)?;
        let mut step_infractions = harness.take_infractions();
        step_infractions.extend(verdict.infractions.iter().cloned());
        frames += 1;
        if let Some(log) = log.as_mut() {
            log.append(&LogRecord::Frame(FrameRecord {
                frame: state.frame,
                sim_time: state.sim_time(),
                ego: verdict.ego,
                control,
                sensor_digest: harness.last_sensor_digest().unwrap_or_default().to_owned(),
                infractions: step_infractions.clone(),
            }))?;
        }
        infractions.extend(step_infractions);
        if let Some(t) = termination(&verdict, frames, config) {
            break (t, verdict.progress.completion);
        }
    };
    let result = RunResult {
        agent_name: harness.agent_name().to_owned(),
        route_id: route.route_id.clone(),
        seed,
        frames_executed: frames,
        completion,
        infractions,
        terminated_by,
        log_path: config.log_path.clone(),
    };
    if let Some(mut log) = log {
        // the log never names its own location, so equal runs give equal bytes
        log.append(&LogRecord::Result(RunResult {
            log_path: None,
            ..result.clone()
        }))?;
        log.finish()?;
    }
    harness.close();
    Ok(result)
}

fn read_log(path: &Path) -> Result<(LogHeader, Vec<FrameRecord>, RunResult), HarnessError> {
    let corrupt = |m: String| HarnessError::LogCorrupt(m);
    let file = File::open(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let mut header = None;
    let mut frames = Vec::new();
    let mut result = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
        let record: LogRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
        match (record, header.is_some(), result.is_some()) {
            (_, _, true) => return Err(corrupt(format!("line {}: record after result", i + 1))),
            (LogRecord::Header(h), false, _) => header = Some(*h),
            (LogRecord::Header(_), true, _) => return Err(corrupt(format!("line {}: second header", i + 1))),
            (_, false, _) => return Err(corrupt("missing header".into())),
            (LogRecord::Frame(f), true, _) => frames.push(f),
            (LogRecord::Result(r), true, _) => result = Some(r),
        }
    }
    let header = header.ok_or_else(|| corrupt("empty log".into()))?;
    let result = result.ok_or_else(|| corrupt("truncated: no result record".into()))?;
    if header.log_version != LOG_VERSION {
        return Err(corrupt(format!("unsupported log version {}", header.log_version)));
    }
    if result.frames_executed != frames.len() as u64 {
        return Err(corrupt(format!(
            "result claims {} frames, log holds {}",
            result.frames_executed,
            frames.len()
        )));
    }
    Ok((header, frames, result))
}

/// Re-executes a log's control sequence on a fresh world and checks every
/// frame bit for bit.
pub fn replay(log_path: &Path) -> Result<RunResult, HarnessError> {
    let (header, records, logged) = read_log(log_path)?;
    let corrupt = |m: String| HarnessError::LogCorrupt(m);
    let map = WorldMap::parse(&header.map).map_err(|e| corrupt(format!("map: {e}")))?;
    let route = parse_route(&header.route).map_err(|e| corrupt(format!("route: {e}")))?;
    let dense = interpolate_route(&route, header.config.spacing).map_err(|e| corrupt(format!("route: {e}")))?;
    let mut rig = SensorRig::build(&header.rig, header.ego, header.seed).map_err(|e| corrupt(format!("rig: {e}")))?;
    if header.initial_state.actor(header.ego).is_none() {
        return Err(corrupt(format!("ego {} missing from initial state", header.ego)));
    }
    let mut world = World::from_state(map, &header.initial_state);
    let mut referee = Referee::new(header.ego, header.config.off_route_limit);
    let mut infractions = Vec::new();
    let mut outcome = None;

    for (i, record) in records.iter().enumerate() {
        let frame = header.initial_state.frame + i as u64 + 1;
        let diverged = HarnessError::DeterminismViolation(frame);
        if outcome.is_some() || record.frame != frame {
            return Err(diverged);
        }
        let before = world.snapshot();
        if rig.sample(&before, world.map())?.digest() != record.sensor_digest {
            return Err(diverged);
        }
        if world.apply_control(header.ego, record.control).is_err() {
            return Err(diverged);
        }
        let state = world.tick();
        let verdict = referee.observe(&dense, &state)?;
        if encode_to_vec(&verdict.ego) != encode_to_vec(&record.ego)
            || state.sim_time().to_bits() != record.sim_time.to_bits()
        {
            return Err(diverged);
        }
        let mut expected: Vec<Infraction> = record
            .infractions
            .iter()
            .filter(|inf| inf.kind.is_agent_fault())
            .cloned()
            .collect();
        expected.extend(verdict.infractions.iter().cloned());
        if expected != record.infractions {
            return Err(diverged);
        }
        infractions.extend(expected);
        outcome = termination(&verdict, i as u64 + 1, &header.config).map(|t| (t, verdict.progress.completion));
    }
    let last = header.initial_state.frame + records.len() as u64;
    let (terminated_by, completion) = outcome.ok_or(HarnessError::DeterminismViolation(last))?;
    let result = RunResult {
        agent_name: header.agent_name,
        route_id: header.route_id,
        seed: header.seed,
        frames_executed: records.len() as u64,
        completion,
        infractions,
        terminated_by,
        log_path: None,
    };
    if result != logged {
        return Err(HarnessError::DeterminismViolation(last));
    }
    Ok(RunResult {
        log_path: Some(log_path.to_owned()),
        ..result
    })
}
