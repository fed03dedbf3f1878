mod common;

use std::sync::Arc;

use common::*;
use roadharness::codec::{decode_exact, encode_to_vec};
use roadharness::harness::{run_scenario, HarnessConfig, LocalClient};
use roadharness::model::{ControlAction, Transform};
use roadharness::sensors::{SensorFrame, SensorRig};
use roadharness::sim::{ActorBlueprint, MapError, World, WorldMap};
use roadharness::wire::{
    self, connect, connect_with_version, msg, serve, serve_path, state_digest, Connection, Envelope, RemoteClient,
    Role, WireError, PROTOCOL_VERSION,
};

fn server(seed: u64) -> wire::Server {
    serve("127.0.0.1", 0, straight_map(), seed).unwrap()
}

fn authority(s: &wire::Server) -> Connection {
    connect("127.0.0.1", s.port(), Role::Authority).unwrap()
}

#[test]
fn ephemeral_port_is_reported() {
    let s = server(1);
    assert_ne!(s.port(), 0);
    assert!(authority(&s).role() == Some(Role::Authority));
}

#[test]
fn second_bind_fails() {
    let s = server(1);
    let err = serve("127.0.0.1", s.port(), straight_map(), 1).err().unwrap();
    assert!(matches!(err, WireError::BindFailure { .. }));
}

#[test]
fn bad_map_fails_before_binding() {
    let dir = tempfile::tempdir().unwrap();
    let bad = temp_file(&dir, "bad.toml", "town = \"x\"\n[[roads]]\nwidth = \"wide\"\n");
    // take a free port, release it, then ask for exactly that port
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = serve_path("127.0.0.1", port, &bad, 1).err().unwrap();
    assert!(matches!(err, WireError::Map(MapError::Parse { line: 3, .. })), "{err:?}");
    assert!(std::net::TcpStream::connect(("127.0.0.1", port)).is_err());
    let err = serve_path("127.0.0.1", 0, &dir.path().join("missing.toml"), 1).err().unwrap();
    assert!(matches!(err, WireError::MapFile { .. }));
}

#[test]
fn refused_connection_is_distinct() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    assert!(matches!(
        connect("127.0.0.1", port, Role::Observer),
        Err(WireError::ConnectionRefused(_))
    ));
}

#[test]
fn single_authority_with_downgrade() {
    let s = server(1);
    let first = authority(&s);
    assert_eq!(first.role(), Some(Role::Authority));
    assert!(!first.downgraded());
    let second = authority(&s);
    assert_eq!(second.role(), Some(Role::Observer));
    assert!(second.downgraded());
    let observer = connect("127.0.0.1", s.port(), Role::Observer).unwrap();
    assert!(!observer.downgraded());

    // the slot frees up when the authority leaves
    drop(first);
    let mut granted = false;
    for _ in 0..50 {
        if authority(&s).role() == Some(Role::Authority) {
            granted = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    assert!(granted);
}

#[test]
fn version_mismatch_is_explicit() {
    let s = server(1);
    let err = connect_with_version("127.0.0.1", s.port(), Role::Authority, 2).err().unwrap();
    assert!(matches!(err, WireError::VersionMismatch { server_version: PROTOCOL_VERSION }));
    // a rejected handshake does not take the authority slot
    assert_eq!(authority(&s).role(), Some(Role::Authority));
}

#[test]
fn requests_before_hello_are_refused() {
    let s = server(1);
    let mut raw = Connection::open("127.0.0.1", s.port(), PROTOCOL_VERSION).unwrap();
    assert!(matches!(raw.get_state(), Err(WireError::HandshakeRequired)));
}

#[test]
fn tick_advances_and_echoes_digest() {
    let s = server(1);
    let mut c = authority(&s);
    let reply = c.tick().unwrap();
    assert_eq!(reply.frame, 1);
    let state = c.get_state().unwrap();
    assert_eq!(state.frame, 1);
    assert_eq!(reply.state_digest, state_digest(&state));
}

#[test]
fn observers_cannot_tick_or_drive() {
    let s = server(1);
    let mut a = authority(&s);
    let ego = a.spawn_actor(ActorBlueprint::vehicle(), Transform::at(0.0, 0.0)).unwrap();
    let mut o = connect("127.0.0.1", s.port(), Role::Observer).unwrap();
    let before = o.get_state().unwrap();
    assert!(matches!(o.tick(), Err(WireError::Forbidden(_))));
    let drive = ControlAction { throttle: 1.0, gear: 1, ..ControlAction::neutral() };
    assert!(matches!(o.apply_control(ego, drive), Err(WireError::Forbidden(_))));
    assert!(matches!(o.set_weather(Default::default()), Err(WireError::Forbidden(_))));
    assert_eq!(o.get_state().unwrap(), before);
    // observers may still script NPCs
    let npc = o.spawn_actor(ActorBlueprint::pedestrian(), Transform::at(50.0, 3.0)).unwrap();
    assert_eq!(a.get_state().unwrap().actor(npc).unwrap().blueprint, ActorBlueprint::pedestrian());
}

#[test]
fn read_your_writes() {
    let s = server(1);
    let mut c = authority(&s);
    let id = c.spawn_actor(ActorBlueprint::vehicle(), Transform::at(10.0, 0.0)).unwrap();
    let state = c.get_state().unwrap();
    assert_eq!(state.actor(id).unwrap().state.transform, Transform::at(10.0, 0.0));
    assert!(matches!(
        c.apply_control(77, ControlAction::neutral()),
        Err(WireError::World(roadharness::sim::WorldError::NoSuchActor(77)))
    ));
    assert!(matches!(
        c.spawn_actor(ActorBlueprint::vehicle(), Transform::at(10.0, 0.5)),
        Err(WireError::World(roadharness::sim::WorldError::SpawnCollision(1)))
    ));
}

#[test]
fn duplicate_request_ids_are_rejected() {
    let s = server(1);
    let mut c = authority(&s);
    let tick = Envelope::new(1_000, msg::TICK, Vec::new());
    let first = c.exchange(&tick).unwrap();
    assert_eq!(first.msg_type, msg::response_to(msg::TICK));
    let second = c.exchange(&tick).unwrap();
    assert_eq!(second.msg_type, msg::ERROR);
    assert!(matches!(wire::decode_error(&second), WireError::DuplicateRequest(1_000)));
    assert_eq!(c.get_state().unwrap().frame, 1);
}

#[test]
fn unknown_and_malformed_messages_keep_the_session() {
    let s = server(1);
    let mut c = authority(&s);
    let before = c.get_state().unwrap();
    for (id, t) in [(500u64, 0x3Fu8), (501, msg::AGENT_RUN_STEP), (502, 0x00), (503, 0xFF)] {
        let reply = c.exchange(&Envelope::new(id, t, vec![1, 2, 3])).unwrap();
        assert_eq!(reply.request_id, id);
        assert!(matches!(wire::decode_error(&reply), WireError::UnknownMessage(x) if x == t));
    }
    let reply = c.exchange(&Envelope::new(600, msg::SPAWN_ACTOR, vec![9, 9])).unwrap();
    assert!(matches!(wire::decode_error(&reply), WireError::Malformed(_)));
    let reply = c.exchange(&Envelope::new(601, msg::TICK, vec![0])).unwrap();
    assert!(matches!(wire::decode_error(&reply), WireError::Malformed(_)));
    assert_eq!(c.get_state().unwrap(), before);
    assert_eq!(c.tick().unwrap().frame, 1);
}

#[test]
fn map_document_round_trips_exactly() {
    let s = server(1);
    let mut c = authority(&s);
    let map = WorldMap::parse(&c.get_map_document().unwrap()).unwrap();
    assert_eq!(map, straight_map());
}

#[test]
fn server_side_sampling_matches_local_sampling() {
    let s = server(8);
    let mut c = authority(&s);
    let ego = c.spawn_actor(ActorBlueprint::vehicle(), Transform::at(0.0, 0.0)).unwrap();
    let specs = roadharness::resolve_agent("pp_safe").unwrap().sensors;
    let mut rig = SensorRig::build(&specs, ego, 8).unwrap();
    let local_world = World::new(straight_map(), 8);
    for _ in 0..5 {
        let remote: SensorFrame = c.sample_sensors(ego, &specs).unwrap();
        let state = c.get_state().unwrap();
        let local = rig.sample(&state, local_world.map()).unwrap();
        assert_eq!(encode_to_vec(&remote), encode_to_vec(&local));
        c.apply_control(ego, ControlAction { throttle: 0.7, steer: 0.2, gear: 1, ..ControlAction::neutral() })
            .unwrap();
        c.tick().unwrap();
    }
    let frame: SensorFrame = decode_exact(&encode_to_vec(&c.sample_sensors(ego, &specs).unwrap())).unwrap();
    assert_eq!(frame.frame, 5);
}

fn controls_of(log: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["type"] == "frame")
        .map(|v| format!("{}|{}", v["control"], v["ego"]))
        .collect()
}

#[test]
fn remote_run_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let local_log = dir.path().join("local.ndjson");
    let remote_log = dir.path().join("remote.ndjson");
    for agent in ["pp_fast", "pp_safe_s3"] {
        let local = LocalClient::new(World::new(straight_map(), 21));
        let cfg = HarnessConfig { log_path: Some(local_log.clone()), ..HarnessConfig::new(agent, straight_route()) };
        let a = run_scenario(&cfg, Arc::new(local)).unwrap();

        let s = server(21);
        let remote = RemoteClient::connect("127.0.0.1", s.port(), Role::Authority).unwrap();
        let cfg = HarnessConfig { log_path: Some(remote_log.clone()), ..HarnessConfig::new(agent, straight_route()) };
        let b = run_scenario(&cfg, Arc::new(remote)).unwrap();

        assert_eq!(a.digest(), b.digest());
        assert_eq!(controls_of(&local_log), controls_of(&remote_log));
        assert_eq!(std::fs::read(&local_log).unwrap(), std::fs::read(&remote_log).unwrap());
    }
}

#[test]
fn observers_do_not_change_outcomes() {
    use std::sync::atomic::{AtomicBool, Ordering};
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for observers in [0usize, 3] {
        let s = server(33);
        let client = RemoteClient::connect("127.0.0.1", s.port(), Role::Authority).unwrap();
        assert_eq!(client.role(), Some(Role::Authority));
        let stop = Arc::new(AtomicBool::new(false));
        let handles: Vec<_> = (0..observers)
            .map(|_| {
                let port = s.port();
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || {
                    // asking for authority while it is held yields an observer
                    let mut o = connect("127.0.0.1", port, Role::Authority).unwrap();
                    assert!(o.downgraded());
                    let mut reads = 0;
                    while !stop.load(Ordering::SeqCst) || reads == 0 {
                        o.get_state().unwrap();
                        assert!(matches!(o.tick(), Err(WireError::Forbidden(_))));
                        reads += 1;
                    }
                    reads
                })
            })
            .collect();
        let log = dir.path().join(format!("obs{observers}.ndjson"));
        let cfg = HarnessConfig { log_path: Some(log.clone()), ..HarnessConfig::new("pp_fast", straight_route()) };
        let r = run_scenario(&cfg, Arc::new(client)).unwrap();
        stop.store(true, Ordering::SeqCst);
        for h in handles {
            assert!(h.join().unwrap() > 0);
        }
        logs.push((r.digest(), std::fs::read(&log).unwrap()));
    }
    assert_eq!(logs[0], logs[1]);
}
