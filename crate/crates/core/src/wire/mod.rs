//! Client/world split over TCP.
//!
//! Every message travels in one envelope:
//!
//! ```text
//! length u32 BE | version u8 | request_id u64 BE | msg_type u8 | payload
//! ```
//!
//! `length` counts every byte after itself. Payloads use the canonical
//! encoding from [`crate::codec`]. The message table lives in [`msg`] and is
//! frozen for protocol version 1.

use std::io::{self, Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{encode_to_vec, CodecError, Decode, Encode, Reader, Writer};
use crate::sim::{MapError, WorldError, WorldState};

mod client;
pub mod remote_agent;
mod server;

pub use client::{connect, connect_with_version, Connection, RemoteClient, TickReply};
pub use server::{serve, serve_path, Server};

pub const PROTOCOL_VERSION: u8 = 1;
/// Upper bound on `length`, guarding against garbage prefixes.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;
/// Bytes after the length prefix that precede the payload.
const HEADER_LEN: u32 = 1 + 8 + 1;

/// Message types. Responses set the high bit of the request type.
pub mod msg {
    pub const HELLO: u8 = 0x01;
    pub const GET_MAP: u8 = 0x02;
    pub const GET_STATE: u8 = 0x03;
    pub const SPAWN_ACTOR: u8 = 0x04;
    pub const APPLY_CONTROL: u8 = 0x05;
    pub const SET_WEATHER: u8 = 0x06;
    pub const TICK: u8 = 0x07;
    pub const SET_AUTOPILOT: u8 = 0x08;
    pub const SAMPLE_SENSORS: u8 = 0x09;

    /// Remote-agent range, spoken by `ext:` agent processes.
    pub const AGENT_HELLO: u8 = 0x40;
    pub const AGENT_SETUP: u8 = 0x41;
    pub const AGENT_RUN_STEP: u8 = 0x42;
    pub const AGENT_DESTROY: u8 = 0x43;
    pub const AGENT_RANGE: std::ops::RangeInclusive<u8> = 0x40..=0x4F;

    pub const RESPONSE: u8 = 0x80;
    pub const ERROR: u8 = 0xE0;

    pub const fn response_to(request: u8) -> u8 {
        request | RESPONSE
    }

    pub fn is_world_request(t: u8) -> bool {
        (HELLO..=SAMPLE_SENSORS).contains(&t)
    }

    pub fn is_agent_request(t: u8) -> bool {
        AGENT_RANGE.contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    VersionMismatch = 1,
    UnknownMessage = 2,
    Malformed = 3,
    Forbidden = 4,
    DuplicateRequest = 5,
    World = 6,
    Sensor = 7,
    HandshakeRequired = 8,
    Agent = 9,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        [VersionMismatch, UnknownMessage, Malformed, Forbidden, DuplicateRequest, World, Sensor, HandshakeRequired, Agent]
            .into_iter()
            .find(|c| *c as u16 == v)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("protocol version mismatch, server speaks {server_version}")]
    VersionMismatch { server_version: u8 },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("cannot read map {path}: {reason}")]
    MapFile { path: String, reason: String },
    #[error("payload: {0}")]
    Codec(#[from] CodecError),
    #[error("frame length {0} exceeds limit")]
    FrameTooLarge(u32),
    #[error("frame length {0} shorter than header")]
    FrameTooShort(u32),
    #[error("connection closed")]
    Closed,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("duplicate request id {0}")]
    DuplicateRequest(u64),
    #[error("unknown message type {0:#04x}")]
    UnknownMessage(u8),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("handshake required")]
    HandshakeRequired,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("sensor: {0}")]
    Sensor(String),
    #[error("agent: {0}")]
    Agent(String),
    #[error("expected response {expected:#04x} to request {request_id}, got {got:#04x} for {got_id}")]
    UnexpectedResponse { expected: u8, request_id: u64, got: u8, got_id: u64 },
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub request_id: u64,
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(request_id: u64, msg_type: u8, payload: Vec<u8>) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            request_id,
            msg_type,
            payload,
        }
    }

    /// Full frame including the length prefix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let len = HEADER_LEN as usize + self.payload.len();
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_be_bytes());
        out.push(self.version);
        out.extend_from_slice(&self.request_id.to_be_bytes());
        out.push(self.msg_type);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses exactly one frame.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut cursor = bytes;
        let env = read_envelope(&mut cursor)?.ok_or(WireError::Closed)?;
        if !cursor.is_empty() {
            return Err(CodecError::TrailingBytes(cursor.len()).into());
        }
        Ok(env)
    }

    pub fn error(request_id: u64, code: ErrorCode, message: &str, world: Option<&WorldError>) -> Self {
        let mut w = Writer::new();
        w.u16(code as u16);
        w.str(message);
        match world {
            Some(e) => {
                w.u8(1);
                e.encode(&mut w);
            }
            None => w.u8(0),
        }
        Self::new(request_id, msg::ERROR, w.into_bytes())
    }
}

pub fn write_envelope(out: &mut impl Write, env: &Envelope) -> io::Result<()> {
    out.write_all(&env.to_bytes())?;
    out.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_envelope(input: &mut impl Read) -> Result<Option<Envelope>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Closed),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    if len < HEADER_LEN {
        return Err(WireError::FrameTooShort(len));
    }
    let mut body = vec![0u8; len as usize];
    input.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Closed,
        _ => e.into(),
    })?;
    Ok(Some(Envelope {
        version: body[0],
        request_id: u64::from_be_bytes(body[1..9].try_into().expect("8 bytes")),
        msg_type: body[9],
        payload: body[10..].to_vec(),
    }))
}

/// Decodes an error payload into the matching [`WireError`].
pub fn decode_error(env: &Envelope) -> WireError {
    let mut r = Reader::new(&env.payload);
    let parsed = (|| -> Result<(u16, String, Option<WorldError>), CodecError> {
        let code = r.u16()?;
        let message = r.string()?;
        let world = r.get::<Option<WorldError>>()?;
        r.finish()?;
        Ok((code, message, world))
    })();
    let (code, message, world) = match parsed {
        Ok(p) => p,
        Err(e) => return WireError::Codec(e),
    };
    match ErrorCode::from_u16(code) {
        Some(ErrorCode::VersionMismatch) => WireError::VersionMismatch {
            server_version: env.version,
        },
        Some(ErrorCode::UnknownMessage) => WireError::UnknownMessage(
            message
                .rsplit(' ')
                .next()
                .and_then(|t| u8::from_str_radix(t.trim_start_matches("0x"), 16).ok())
                .unwrap_or(0),
        ),
        Some(ErrorCode::Forbidden) => WireError::Forbidden(message),
        Some(ErrorCode::DuplicateRequest) => WireError::DuplicateRequest(env.request_id),
        Some(ErrorCode::HandshakeRequired) => WireError::HandshakeRequired,
        Some(ErrorCode::World) => match world {
            Some(e) => WireError::World(e),
            None => WireError::Malformed(message),
        },
        Some(ErrorCode::Sensor) => WireError::Sensor(message),
        Some(ErrorCode::Agent) => WireError::Agent(message),
        Some(ErrorCode::Malformed) | None => WireError::Malformed(message),
    }
}

/// Hex sha256 of the canonical encoding of a snapshot.
pub fn state_digest(state: &WorldState) -> String {
    hex::encode(Sha256::digest(encode_to_vec(state)))
}

/// Splits `host:port`, accepting bracketed IPv6 hosts.
pub fn split_host_port(endpoint: &str) -> Result<(String, u16), WireError> {
    let bad = || WireError::InvalidAddress(endpoint.to_owned());
    let (host, port) = endpoint.rsplit_once(':').ok_or_else(bad)?;
    let host = host.trim_start_matches('[').trim_end_matches(']');
    if host.is_empty() {
        return Err(bad());
    }
    Ok((host.to_owned(), port.parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Authority,
    Observer,
}

impl Role {
    fn to_u8(self) -> u8 {
        match self {
            Role::Authority => 0,
            Role::Observer => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Self, CodecError> {
        match v {
            0 => Ok(Role::Authority),
            1 => Ok(Role::Observer),
            tag => Err(CodecError::InvalidTag { what: "role", tag }),
        }
    }
}

impl Encode for Role {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.to_u8());
    }
}

impl Decode for Role {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Role::from_u8(r.u8()?)
    }
}

/// Handshake answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelloReply {
    pub role: Role,
    pub downgraded: bool,
    pub seed: u64,
    pub fixed_delta: f64,
    pub frame: u64,
}

impl Encode for HelloReply {
    fn encode(&self, w: &mut Writer) {
        self.role.encode(w);
        w.bool(self.downgraded);
        w.u64(self.seed);
        w.f64(self.fixed_delta);
        w.u64(self.frame);
    }
}

impl Decode for HelloReply {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            role: r.get()?,
            downgraded: r.bool()?,
            seed: r.u64()?,
            fixed_delta: r.f64()?,
            frame: r.u64()?,
        })
    }
}

/// Field names `WorldError::OutOfRange` can carry across the wire.
const RANGE_FIELDS: [&str; 10] = [
    "throttle",
    "steer",
    "brake",
    "gear",
    "speed",
    "cloudiness",
    "precipitation",
    "fog_density",
    "sun_altitude",
    "value",
];

impl Encode for WorldError {
    fn encode(&self, w: &mut Writer) {
        match self {
            WorldError::NoSuchActor(id) => {
                w.u8(0);
                w.u32(*id);
            }
            WorldError::NotAVehicle(id) => {
                w.u8(1);
                w.u32(*id);
            }
            WorldError::SpawnCollision(id) => {
                w.u8(2);
                w.u32(*id);
            }
            WorldError::InvalidTransform => w.u8(3),
            WorldError::InvalidBlueprint(m) => {
                w.u8(4);
                w.str(m);
            }
            WorldError::OutOfRange { field, value } => {
                w.u8(5);
                w.str(field);
                w.f64(*value);
            }
            WorldError::InvalidAutopilot(m) => {
                w.u8(6);
                w.str(m);
            }
        }
    }
}

impl Decode for WorldError {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match r.u8()? {
            0 => WorldError::NoSuchActor(r.u32()?),
            1 => WorldError::NotAVehicle(r.u32()?),
            2 => WorldError::SpawnCollision(r.u32()?),
            3 => WorldError::InvalidTransform,
            4 => WorldError::InvalidBlueprint(r.string()?),
            5 => {
                let name = r.string()?;
                let field = RANGE_FIELDS.iter().find(|f| **f == name).copied().unwrap_or("value");
                WorldError::OutOfRange { field, value: r.f64()? }
            }
            6 => WorldError::InvalidAutopilot(r.string()?),
            tag => return Err(CodecError::InvalidTag { what: "world error", tag }),
        })
    }
}
