#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use roadharness::harness::LocalClient;
use roadharness::sim::{World, WorldMap};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn straight_map() -> WorldMap {
    WorldMap::parse(&std::fs::read_to_string(data("straight200_map.toml")).unwrap()).unwrap()
}

pub fn straight_route() -> PathBuf {
    data("straight200_route.xml")
}

pub fn local(seed: u64) -> LocalClient {
    LocalClient::new(World::new(straight_map(), seed))
}

pub fn shared(client: &LocalClient) -> Arc<dyn roadharness::WorldClient> {
    Arc::new(client.clone())
}

/// Writes `text` to a fresh temporary file.
pub fn temp_file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}
