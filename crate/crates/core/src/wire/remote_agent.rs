//! Primary side of out-of-process agents (`ext:host:port`).
//!
//! The agent process speaks the remote-agent message range over the same
//! envelope as the world server:
//!
//! | request | payload | response payload |
//! |---|---|---|
//! | `AGENT_HELLO` 0x40 | empty | declared rig, `Vec<SensorSpec>` |
//! | `AGENT_SETUP` 0x41 | `AgentConfig` | empty |
//! | `AGENT_RUN_STEP` 0x42 | `SensorFrame` | `ControlAction` |
//! | `AGENT_DESTROY` 0x43 | empty | empty |
//!
//! Failures come back as `ERROR` envelopes with code `Agent`.

use crate::agents::{Agent, AgentConfig, AgentDescriptor, AgentError, AgentFactory, Parameters, EXTERNAL_PREFIX};
use crate::codec::{decode_exact, encode_to_vec};
use crate::model::ControlAction;
use crate::sensors::{SensorFrame, SensorSpec};

use super::{msg, split_host_port, Connection, WireError, PROTOCOL_VERSION};

fn agent_error(endpoint: &str, e: WireError) -> AgentError {
    match e {
        WireError::ConnectionRefused(_) => AgentError::ConnectionRefused(endpoint.to_owned()),
        WireError::Agent(m) => AgentError::Remote(m),
        other => AgentError::Remote(other.to_string()),
    }
}

/// Descriptor stored in configs sent to remote agents.
pub fn external_descriptor() -> AgentDescriptor {
    AgentDescriptor {
        family: "ext".into(),
        variant: None,
        seed: None,
    }
}

/// An agent living in another process.
pub struct ExternalAgent {
    endpoint: String,
    conn: Connection,
    rig: Vec<SensorSpec>,
}

impl ExternalAgent {
    /// Connects and asks the agent for its rig.
    pub fn connect(endpoint: &str) -> Result<Self, AgentError> {
        let (host, port) = split_host_port(endpoint).map_err(|_| AgentError::MalformedName(format!("{EXTERNAL_PREFIX}{endpoint}")))?;
        let mut conn = Connection::open(&host, port, PROTOCOL_VERSION).map_err(|e| agent_error(endpoint, e))?;
        let rig: Vec<SensorSpec> = conn
            .call(msg::AGENT_HELLO, Vec::new())
            .and_then(|p| Ok(decode_exact(&p)?))
            .map_err(|e| agent_error(endpoint, e))?;
        if rig.is_empty() {
            return Err(AgentError::Remote("agent declared an empty rig".into()));
        }
        Ok(Self {
            endpoint: endpoint.to_owned(),
            conn,
            rig,
        })
    }

    pub fn rig(&self) -> &[SensorSpec] {
        &self.rig
    }

    fn call(&mut self, msg_type: u8, payload: Vec<u8>) -> Result<Vec<u8>, AgentError> {
        self.conn.call(msg_type, payload).map_err(|e| agent_error(&self.endpoint, e))
    }
}

impl Agent for ExternalAgent {
    fn setup(&mut self, config: &AgentConfig) -> Result<(), AgentError> {
        if config.dense_route.is_empty() || config.geo_route.is_empty() {
            return Err(AgentError::RouteEmpty);
        }
        self.call(msg::AGENT_SETUP, encode_to_vec(config))?;
        Ok(())
    }

    fn run_step(&mut self, frame: &SensorFrame) -> Result<ControlAction, AgentError> {
        let payload = self.call(msg::AGENT_RUN_STEP, encode_to_vec(frame))?;
        let action: ControlAction = decode_exact(&payload).map_err(|e| AgentError::Remote(e.to_string()))?;
        action.validate().map_err(|e| AgentError::Remote(e.to_string()))
    }

    fn destroy(&mut self) {
        if let Err(e) = self.call(msg::AGENT_DESTROY, Vec::new()) {
            log::warn!("destroy on {}: {e}", self.endpoint);
        }
    }
}

/// Resolves `ext:host:port`. The endpoint must be reachable now.
pub fn resolve_external(endpoint: &str) -> Result<AgentFactory, AgentError> {
    let probe = ExternalAgent::connect(endpoint)?;
    let rig = probe.rig.clone();
    drop(probe);
    let target = endpoint.to_owned();
    Ok(AgentFactory::new(
        format!("{EXTERNAL_PREFIX}{endpoint}"),
        external_descriptor(),
        Parameters::new(),
        rig,
        move || Ok(Box::new(ExternalAgent::connect(&target)?)),
    ))
}
