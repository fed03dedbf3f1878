use std::io::{BufReader, ErrorKind};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};

use crate::codec::{decode_exact, Decode, Reader, Writer};
use crate::harness::{ClientError, WorldClient};
use crate::model::{ControlAction, Transform};
use crate::route::DenseRoute;
use crate::sensors::{SensorFrame, SensorSpec};
use crate::sim::{ActorBlueprint, ActorId, WeatherParams, WorldMap, WorldState};

use super::{decode_error, msg, read_envelope, write_envelope, Envelope, HelloReply, Role, WireError, PROTOCOL_VERSION};

/// Blocking request/response handle on one session.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    version: u8,
    hello: Option<HelloReply>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickReply {
    pub frame: u64,
    pub state_digest: String,
}

/// Opens a TCP stream, reporting refusal distinctly from other failures.
pub(crate) fn open_stream(host: &str, port: u16) -> Result<TcpStream, WireError> {
    let endpoint = format!("{host}:{port}");
    let addrs: Vec<_> = (host, port)
        .to_socket_addrs()
        .map_err(|_| WireError::InvalidAddress(endpoint.clone()))?
        .collect();
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    match last {
        Some(e) if e.kind() == ErrorKind::ConnectionRefused => Err(WireError::ConnectionRefused(endpoint)),
        Some(e) => Err(e.into()),
        None => Err(WireError::InvalidAddress(endpoint)),
    }
}

pub fn connect(host: &str, port: u16, role: Role) -> Result<Connection, WireError> {
    connect_with_version(host, port, role, PROTOCOL_VERSION)
}

/// Like [`connect`] but announcing an arbitrary protocol version.
pub fn connect_with_version(host: &str, port: u16, role: Role, version: u8) -> Result<Connection, WireError> {
    let mut conn = Connection::open(host, port, version)?;
    let mut w = Writer::new();
    w.put(&role);
    let reply: HelloReply = decode_exact(&conn.call(msg::HELLO, w.into_bytes())?)?;
    conn.hello = Some(reply);
    Ok(conn)
}

impl Connection {
    /// Raw stream without a world handshake.
    pub fn open(host: &str, port: u16, version: u8) -> Result<Self, WireError> {
        let stream = open_stream(host, port)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            next_id: 1,
            version,
            hello: None,
        })
    }

    pub fn role(&self) -> Option<Role> {
        self.hello.map(|h| h.role)
    }

    /// True when authority was requested but already taken.
    pub fn downgraded(&self) -> bool {
        self.hello.is_some_and(|h| h.downgraded)
    }

    pub fn hello(&self) -> Option<&HelloReply> {
        self.hello.as_ref()
    }

    pub fn set_read_timeout(&self, timeout: Option<std::time::Duration>) -> Result<(), WireError> {
        Ok(self.writer.set_read_timeout(timeout)?)
    }

    /// Sends one envelope as given and returns whatever comes back.
    pub fn exchange(&mut self, env: &Envelope) -> Result<Envelope, WireError> {
        write_envelope(&mut self.writer, env)?;
        read_envelope(&mut self.reader)?.ok_or(WireError::Closed)
    }

    /// Sends a request with a fresh id and returns the response payload.
    pub fn call(&mut self, msg_type: u8, payload: Vec<u8>) -> Result<Vec<u8>, WireError> {
        let id = self.next_id;
        self.next_id += 1;
        let env = Envelope {
            version: self.version,
            request_id: id,
            msg_type,
            payload,
        };
        let reply = self.exchange(&env)?;
        if reply.msg_type == msg::ERROR && reply.request_id == id {
            return Err(decode_error(&reply));
        }
        if reply.request_id != id || reply.msg_type != msg::response_to(msg_type) {
            return Err(WireError::UnexpectedResponse {
                expected: msg::response_to(msg_type),
                request_id: id,
                got: reply.msg_type,
                got_id: reply.request_id,
            });
        }
        Ok(reply.payload)
    }

    fn call_decode<T: Decode>(&mut self, msg_type: u8, payload: Vec<u8>) -> Result<T, WireError> {
        Ok(decode_exact(&self.call(msg_type, payload)?)?)
    }

    pub fn get_map_document(&mut self) -> Result<String, WireError> {
        self.call_decode(msg::GET_MAP, Vec::new())
    }

    pub fn get_state(&mut self) -> Result<WorldState, WireError> {
        self.call_decode(msg::GET_STATE, Vec::new())
    }

    pub fn spawn_actor(&mut self, blueprint: ActorBlueprint, at: Transform) -> Result<ActorId, WireError> {
        let mut w = Writer::new();
        w.put(&blueprint);
        w.put(&at);
        self.call_decode(msg::SPAWN_ACTOR, w.into_bytes())
    }

    pub fn apply_control(&mut self, actor: ActorId, action: ControlAction) -> Result<(), WireError> {
        let mut w = Writer::new();
        w.u32(actor);
        w.put(&action);
        self.call_decode(msg::APPLY_CONTROL, w.into_bytes())
    }

    pub fn set_weather(&mut self, params: WeatherParams) -> Result<(), WireError> {
        let mut w = Writer::new();
        w.put(&params);
        self.call_decode(msg::SET_WEATHER, w.into_bytes())
    }

    pub fn tick(&mut self) -> Result<TickReply, WireError> {
        let payload = self.call(msg::TICK, Vec::new())?;
        let mut r = Reader::new(&payload);
        let reply = TickReply {
            frame: r.u64()?,
            state_digest: r.string()?,
        };
        r.finish()?;
        Ok(reply)
    }

    pub fn set_autopilot(&mut self, actor: ActorId, route: &DenseRoute, speed: f64) -> Result<(), WireError> {
        let mut w = Writer::new();
        w.u32(actor);
        w.put(route);
        w.f64(speed);
        self.call_decode(msg::SET_AUTOPILOT, w.into_bytes())
    }

    /// Samples a rig held by the server for this session.
    pub fn sample_sensors(&mut self, ego: ActorId, specs: &[SensorSpec]) -> Result<SensorFrame, WireError> {
        let mut w = Writer::new();
        w.u32(ego);
        w.put(specs);
        self.call_decode(msg::SAMPLE_SENSORS, w.into_bytes())
    }
}

/// [`WorldClient`] backed by a server session.
#[derive(Clone)]
pub struct RemoteClient {
    conn: Arc<Mutex<Connection>>,
    map: Arc<WorldMap>,
}

impl RemoteClient {
    /// Connects, handshakes and fetches the map.
    pub fn connect(host: &str, port: u16, role: Role) -> Result<Self, WireError> {
        let mut conn = connect(host, port, role)?;
        let map = WorldMap::parse(&conn.get_map_document()?)?;
        Ok(Self {
            conn: Arc::new(Mutex::new(conn)),
            map: Arc::new(map),
        })
    }

    pub fn role(&self) -> Option<Role> {
        self.lock().role()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl WorldClient for RemoteClient {
    fn map(&self) -> Arc<WorldMap> {
        Arc::clone(&self.map)
    }

    fn state(&self) -> Result<WorldState, ClientError> {
        Ok(self.lock().get_state()?)
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
        Ok(self.lock().set_autopilot(actor, route, speed)?)
    }

    fn tick(&self) -> Result<u64, ClientError> {
        Ok(self.lock().tick()?.frame)
    }
}
