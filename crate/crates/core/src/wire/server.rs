use std::collections::HashSet;
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::codec::{encode_to_vec, CodecError, Reader, Writer};
use crate::model::{ControlAction, Transform};
use crate::route::DenseRoute;
use crate::sensors::{SensorRig, SensorSpec};
use crate::sim::{ActorBlueprint, ActorId, WeatherParams, World, WorldMap};

use super::{msg, read_envelope, state_digest, write_envelope, Envelope, ErrorCode, HelloReply, Role, WireError, PROTOCOL_VERSION};

/// Running world server. Dropping it stops accepting new sessions.
pub struct Server {
    addr: SocketAddr,
    world: Arc<Mutex<World>>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Shared handle on the served world, for inspection.
    pub fn world(&self) -> Arc<Mutex<World>> {
        Arc::clone(&self.world)
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.shutdown();
        }
    }
}

/// Loads the map first, so a bad map never opens a socket.
pub fn serve_path(bind: &str, port: u16, map_path: &Path, seed: u64) -> Result<Server, WireError> {
    let text = std::fs::read_to_string(map_path).map_err(|e| WireError::MapFile {
        path: map_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let map = WorldMap::parse(&text)?;
    serve(bind, port, map, seed)
}

/// Binds `bind:port` (port 0 picks a free one) and serves a fresh world.
pub fn serve(bind: &str, port: u16, map: WorldMap, seed: u64) -> Result<Server, WireError> {
    let listener = TcpListener::bind((bind, port)).map_err(|e| WireError::BindFailure {
        addr: format!("{bind}:{port}"),
        reason: e.to_string(),
    })?;
    let addr = listener.local_addr()?;
    let world = Arc::new(Mutex::new(World::new(map, seed)));
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Shared {
        world: Arc::clone(&world),
        authority: Arc::new(Mutex::new(None)),
        next_session: Arc::new(AtomicU64::new(1)),
    };
    log::info!("serving world (seed {seed}) on {addr}");
    let accept = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let shared = shared.clone();
                        thread::spawn(move || run_session(stream, shared));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })
    };
    Ok(Server {
        addr,
        world,
        stop,
        accept: Some(accept),
    })
}

#[derive(Clone)]
struct Shared {
    world: Arc<Mutex<World>>,
    authority: Arc<Mutex<Option<u64>>>,
    next_session: Arc<AtomicU64>,
}

struct Session {
    id: u64,
    role: Option<Role>,
    seen: HashSet<u64>,
    rig: Option<(ActorId, Vec<SensorSpec>, SensorRig)>,
}

enum Failure {
    Code(ErrorCode, String),
    World(crate::sim::WorldError),
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        Failure::Code(ErrorCode::Malformed, e.to_string())
    }
}

impl From<crate::sim::WorldError> for Failure {
    fn from(e: crate::sim::WorldError) -> Self {
        Failure::World(e)
    }
}

fn run_session(stream: TcpStream, shared: Shared) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut session = Session {
        id: shared.next_session.fetch_add(1, Ordering::SeqCst),
        role: None,
        seen: HashSet::new(),
        rig: None,
    };
    log::info!("session {} opened from {peer}", session.id);
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            log::warn!("session {}: {e}", session.id);
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    loop {
        let env = match read_envelope(&mut reader) {
            Ok(Some(env)) => env,
            Ok(None) => break,
            Err(e) => {
                log::warn!("session {}: {e}", session.id);
                break;
            }
        };
        let reply = handle(&mut session, &shared, env);
        if let Err(e) = write_envelope(&mut writer, &reply) {
            log::warn!("session {}: {e}", session.id);
            break;
        }
    }
    let mut authority = shared.authority.lock().unwrap_or_else(|p| p.into_inner());
    if *authority == Some(session.id) {
        *authority = None;
    }
    log::info!("session {} closed ({:?})", session.id, session.role);
}

fn handle(session: &mut Session, shared: &Shared, env: Envelope) -> Envelope {
    let id = env.request_id;
    let result = if env.version != PROTOCOL_VERSION {
        Err(Failure::Code(
            ErrorCode::VersionMismatch,
            format!("server speaks version {PROTOCOL_VERSION}, request used {}", env.version),
        ))
    } else if !session.seen.insert(id) {
        Err(Failure::Code(ErrorCode::DuplicateRequest, format!("request id {id} already used")))
    } else {
        dispatch(session, shared, &env)
    };
    match result {
        Ok(payload) => Envelope::new(id, msg::response_to(env.msg_type), payload),
        Err(Failure::Code(code, message)) => {
            log::debug!("session {}: request {id} failed: {message}", session.id);
            Envelope::error(id, code, &message, None)
        }
        Err(Failure::World(e)) => Envelope::error(id, ErrorCode::World, &e.to_string(), Some(&e)),
    }
}

fn dispatch(session: &mut Session, shared: &Shared, env: &Envelope) -> Result<Vec<u8>, Failure> {
    if !msg::is_world_request(env.msg_type) {
        return Err(Failure::Code(
            ErrorCode::UnknownMessage,
            format!("unknown message type {:#04x}", env.msg_type),
        ));
    }
    let mut r = Reader::new(&env.payload);
    if env.msg_type == msg::HELLO {
        let requested: Role = r.get()?;
        r.finish()?;
        return hello(session, shared, requested);
    }
    let Some(role) = session.role else {
        return Err(Failure::Code(ErrorCode::HandshakeRequired, "send hello first".into()));
    };
    let forbid = |what: &str| {
        if role == Role::Observer {
            Err(Failure::Code(ErrorCode::Forbidden, format!("observers may not {what}")))
        } else {
            Ok(())
        }
    };
    let mut world = shared.world.lock().unwrap_or_else(|p| p.into_inner());
    let mut w = Writer::new();
    match env.msg_type {
        msg::GET_MAP => {
            r.finish()?;
            w.str(&world.map().to_document());
        }
        msg::GET_STATE => {
            r.finish()?;
            w.put(&world.snapshot());
        }
        msg::SPAWN_ACTOR => {
            let bp: ActorBlueprint = r.get()?;
            let at: Transform = r.get()?;
            r.finish()?;
            w.u32(world.spawn_actor(bp, at)?);
        }
        msg::APPLY_CONTROL => {
            let actor: ActorId = r.get()?;
            let action: ControlAction = r.get()?;
            r.finish()?;
            forbid("apply control")?;
            world.apply_control(actor, action)?;
        }
        msg::SET_WEATHER => {
            let params: WeatherParams = r.get()?;
            r.finish()?;
            forbid("change the weather")?;
            world.set_weather(params)?;
        }
        msg::TICK => {
            r.finish()?;
            forbid("tick")?;
            let state = world.tick();
            w.u64(state.frame);
            w.str(&state_digest(&state));
        }
        msg::SET_AUTOPILOT => {
            let actor: ActorId = r.get()?;
            let route: DenseRoute = r.get()?;
            let speed = r.f64()?;
            r.finish()?;
            world.set_autopilot(actor, route, speed)?;
        }
        msg::SAMPLE_SENSORS => {
            let ego: ActorId = r.get()?;
            let specs: Vec<SensorSpec> = r.get()?;
            r.finish()?;
            let state = world.snapshot();
            let stale = !matches!(&session.rig, Some((e, s, _)) if *e == ego && *s == specs);
            if stale {
                let rig = SensorRig::build(&specs, ego, state.seed)
                    .map_err(|e| Failure::Code(ErrorCode::Sensor, e.to_string()))?;
                session.rig = Some((ego, specs, rig));
            }
            let (_, _, rig) = session.rig.as_mut().expect("rig set above");
            let frame = rig
                .sample(&state, world.map())
                .map_err(|e| Failure::Code(ErrorCode::Sensor, e.to_string()))?;
            w.put(&frame);
        }
        _ => unreachable!("filtered by is_world_request"),
    }
    Ok(w.into_bytes())
}

fn hello(session: &mut Session, shared: &Shared, requested: Role) -> Result<Vec<u8>, Failure> {
    if session.role.is_some() {
        return Err(Failure::Code(ErrorCode::Malformed, "session already greeted".into()));
    }
    let granted = match requested {
        Role::Observer => Role::Observer,
        Role::Authority => {
            let mut authority = shared.authority.lock().unwrap_or_else(|p| p.into_inner());
            if authority.is_none() {
                *authority = Some(session.id);
                Role::Authority
            } else {
                Role::Observer
            }
        }
    };
    session.role = Some(granted);
    let world = shared.world.lock().unwrap_or_else(|p| p.into_inner());
    log::info!("session {} granted {:?}", session.id, granted);
    Ok(encode_to_vec(&HelloReply {
        role: granted,
        downgraded: granted != requested,
        seed: world.seed(),
        fixed_delta: world.fixed_delta(),
        frame: world.frame(),
    }))
}
