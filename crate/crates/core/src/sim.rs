//! Deterministic fixed-step world: map, actor registry, kinematic bicycle
//! dynamics, collision and off-road detection.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance_to_polyline, Obb};
use crate::model::{wrap_angle, ControlAction, ModelError, Transform, VehicleState};
use crate::route::{DenseRoute, GeoOrigin, RouteError};

/// 20 Hz, the fixed step used unless a world is built with another delta.
pub const DEFAULT_FIXED_DELTA: f64 = 0.05;

pub type ActorId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("map has no roads")]
    NoRoads,
    #[error("road {index}: {reason}")]
    InvalidRoad { index: usize, reason: String },
    #[error("spawn point {index} is not finite")]
    InvalidSpawnPoint { index: usize },
    #[error(transparent)]
    Origin(#[from] RouteError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("no actor with id {0}")]
    NoSuchActor(ActorId),
    #[error("actor {0} is not a vehicle")]
    NotAVehicle(ActorId),
    #[error("spawn overlaps existing actor {0}")]
    SpawnCollision(ActorId),
    #[error("transform is not finite")]
    InvalidTransform,
    #[error("invalid blueprint: {0}")]
    InvalidBlueprint(String),
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("invalid autopilot: {0}")]
    InvalidAutopilot(String),
}

impl From<ModelError> for WorldError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::OutOfRange { field, value } => WorldError::OutOfRange { field, value },
            ModelError::NonFinite => WorldError::InvalidTransform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub centerline: Vec<(f64, f64)>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub town: String,
    pub roads: Vec<Road>,
    pub spawn_points: Vec<Transform>,
    pub geo_origin: GeoOrigin,
}

// On-disk layout. Spawn yaw is in degrees.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDocument {
    town: String,
    geo_origin: GeoOriginDocument,
    roads: Vec<RoadDocument>,
    #[serde(default)]
    spawn_points: Vec<SpawnDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeoOriginDocument {
    latitude: f64,
    longitude: f64,
    altitude: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadDocument {
    width: f64,
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpawnDocument {
    x: f64,
    y: f64,
    yaw: f64,
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl WorldMap {
    /// Parses a TOML map document. Unknown fields are rejected.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let doc: MapDocument = toml::from_str(text).map_err(|e| MapError::Parse {
            line: e.span().map_or(1, |s| line_at(text, s.start)),
            reason: e.message().to_owned(),
        })?;
        let geo_origin = GeoOrigin::new(
            doc.geo_origin.latitude,
            doc.geo_origin.longitude,
            doc.geo_origin.altitude,
        )?;
        let roads = doc
            .roads
            .into_iter()
            .map(|r| Road {
                centerline: r.points.into_iter().map(|[x, y]| (x, y)).collect(),
                width: r.width,
            })
            .collect();
        let spawn_points = doc
            .spawn_points
            .into_iter()
            .map(|s| Transform::new(s.x, s.y, s.yaw.to_radians()))
            .collect();
        let map = WorldMap {
            town: doc.town,
            roads,
            spawn_points,
            geo_origin,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.roads.is_empty() {
            return Err(MapError::NoRoads);
        }
        for (index, road) in self.roads.iter().enumerate() {
            let invalid = |reason: &str| MapError::InvalidRoad {
                index,
                reason: reason.to_owned(),
            };
            if road.centerline.len() < 2 {
                return Err(invalid("centerline needs at least two points"));
            }
            if !(road.width.is_finite() && road.width > 0.0) {
                return Err(invalid("width must be positive"));
            }
            if road
                .centerline
                .iter()
                .any(|(x, y)| !x.is_finite() || !y.is_finite())
            {
                return Err(invalid("centerline point is not finite"));
            }
        }
        if let Some(index) = self.spawn_points.iter().position(|s| !s.is_finite()) {
            return Err(MapError::InvalidSpawnPoint { index });
        }
        self.geo_origin.validate()?;
        Ok(())
    }

    /// Canonical TOML rendering, accepted back by [`WorldMap::parse`].
    pub fn to_document(&self) -> String {
        let doc = MapDocument {
            town: self.town.clone(),
            geo_origin: GeoOriginDocument {
                latitude: self.geo_origin.ref_latitude,
                longitude: self.geo_origin.ref_longitude,
                altitude: self.geo_origin.ref_altitude,
            },
            roads: self
                .roads
                .iter()
                .map(|r| RoadDocument {
                    width: r.width,
                    points: r.centerline.iter().map(|&(x, y)| [x, y]).collect(),
                })
                .collect(),
            spawn_points: self
                .spawn_points
                .iter()
                .map(|s| SpawnDocument {
                    x: s.x,
                    y: s.y,
                    yaw: s.yaw.to_degrees(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("map document serializes")
    }

    /// Distance outside the nearest road envelope; zero on any road.
    pub fn off_road_distance(&self, x: f64, y: f64) -> f64 {
        self.roads
            .iter()
            .map(|r| distance_to_polyline((x, y), &r.centerline) - r.width / 2.0)
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }
}

pub fn load_map(text: &str) -> Result<WorldMap, MapError> {
    WorldMap::parse(text)
}

pub fn off_road_distance(map: &WorldMap, position: &Transform) -> f64 {
    map.off_road_distance(position.x, position.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    StaticProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorBlueprint {
    pub kind: ActorKind,
    pub length: f64,
    pub width: f64,
    pub max_wheel_angle: f64,
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake_decel: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
}

impl ActorBlueprint {
    /// Mid-size sedan.
    pub fn vehicle() -> Self {
        Self {
            kind: ActorKind::Vehicle,
            length: 4.6,
            width: 2.0,
            max_wheel_angle: 0.61,
            wheelbase: 2.9,
            max_accel: 3.0,
            max_brake_decel: 8.0,
            drag: 0.05,
        }
    }

    pub fn pedestrian() -> Self {
        Self {
            kind: ActorKind::Pedestrian,
            length: 0.6,
            width: 0.6,
            max_wheel_angle: 0.0,
            wheelbase: 0.0,
            max_accel: 0.0,
            max_brake_decel: 0.0,
            drag: 0.0,
        }
    }

    pub fn static_prop(length: f64, width: f64) -> Self {
        Self {
            kind: ActorKind::StaticProp,
            length,
            width,
            ..Self::pedestrian()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: &str| Err(WorldError::InvalidBlueprint(msg.to_owned()));
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()) {
            return bad("length and width must be positive");
        }
        if self.kind == ActorKind::Vehicle {
            if !(self.max_wheel_angle > 0.0 && self.max_wheel_angle < std::f64::consts::FRAC_PI_2) {
                return bad("max_wheel_angle must lie in (0, π/2)");
            }
            if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
                return bad("wheelbase must be positive");
            }
            if !(self.max_accel >= 0.0 && self.max_brake_decel >= 0.0 && self.drag >= 0.0) {
                return bad("acceleration, braking and drag must be non-negative");
            }
        }
        Ok(())
    }
}

/// Scripted motion along a route at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autopilot {
    pub route: DenseRoute,
    pub speed: f64,
    /// Distance already travelled along `route`.
    pub arc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub blueprint: ActorBlueprint,
    pub state: VehicleState,
    /// Control in effect; persists across ticks until replaced.
    pub control: ControlAction,
    pub pending_control: Option<ControlAction>,
    pub autopilot: Option<Autopilot>,
}

impl Actor {
    pub fn bounding_box(&self) -> Obb {
        Obb::new(self.state.transform, self.blueprint.length, self.blueprint.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeatherParams {
    pub cloudiness: f64,
    pub precipitation: f64,
    pub fog_density: f64,
    /// Degrees above the horizon.
    pub sun_altitude: f64,
}

impl WeatherParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (field, value) in [
            ("cloudiness", self.cloudiness),
            ("precipitation", self.precipitation),
            ("fog_density", self.fog_density),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(WorldError::OutOfRange { field, value });
            }
        }
        if !(-90.0..=90.0).contains(&self.sun_altitude) {
            return Err(WorldError::OutOfRange {
                field: "sun_altitude",
                value: self.sun_altitude,
            });
        }
        Ok(())
    }
}

/// Immutable snapshot of a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub frame: u64,
    pub fixed_delta: f64,
    /// Sorted by id.
    pub actors: Vec<Actor>,
    pub weather: WeatherParams,
    /// Overlapping actor pairs after the last tick, `(lower id, higher id)`,
    /// sorted.
    pub collisions_this_frame: Vec<(ActorId, ActorId)>,
    /// Vehicles whose origin lies outside every road envelope.
    pub off_road: Vec<ActorId>,
    pub seed: u64,
}

impl WorldState {
    pub fn sim_time(&self) -> f64 {
        self.frame as f64 * self.fixed_delta
    }

    pub fn actor(&self, id: ActorId) -> Option<&Actor> {
        self.actors
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.actors[i])
    }
}

/// One semi-implicit kinematic bicycle step: speed, then heading, then
/// position.
pub fn step_vehicle(
    state: &VehicleState,
    bp: &ActorBlueprint,
    control: &ControlAction,
    dt: f64,
) -> VehicleState {
    let speed = state.speed;
    let new_speed = if control.hand_brake {
        speed.signum() * (speed.abs() - bp.max_brake_decel * dt).max(0.0)
    } else {
        let dir = if control.reverse { -1.0 } else { 1.0 };
        let propulsion = dir * control.throttle * bp.max_accel;
        let braking = control.brake * bp.max_brake_decel;
        if speed == 0.0 {
            // brakes hold a stationary vehicle against propulsion
            propulsion.signum() * (propulsion.abs() - braking).max(0.0) * dt
        } else {
            let accel = propulsion - speed.signum() * braking - bp.drag * speed;
            let v = speed + accel * dt;
            // a single step never reverses the direction of travel
            if v != 0.0 && v.signum() != speed.signum() {
                0.0
            } else {
                v
            }
        }
    };
    let wheel_angle = control.steer * bp.max_wheel_angle;
    let yaw_rate = new_speed / bp.wheelbase * wheel_angle.tan();
    let yaw = wrap_angle(state.transform.yaw + yaw_rate * dt);
    let (s, c) = yaw.sin_cos();
    VehicleState {
        transform: Transform {
            x: state.transform.x + new_speed * c * dt,
            y: state.transform.y + new_speed * s * dt,
            yaw,
        },
        speed: new_speed,
        yaw_rate,
        frame: state.frame + 1,
        sim_time: (state.frame + 1) as f64 * dt,
    }
}

/// All overlapping pairs, ordered by `(lower id, higher id)`.
pub fn detect_collisions(actors: &[Actor]) -> Vec<(ActorId, ActorId)> {
    let mut sorted: Vec<&Actor> = actors.iter().collect();
    sorted.sort_by_key(|a| a.id);
    let boxes: Vec<Obb> = sorted.iter().map(|a| a.bounding_box()).collect();
    let mut pairs = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if boxes[i].overlaps(&boxes[j]) {
                pairs.push((sorted[i].id, sorted[j].id));
            }
        }
    }
    pairs
}

/// Single-owner world. Every mutation goes through `&mut self`.
#[derive(Debug, Clone)]
pub struct World {
    map: Arc<WorldMap>,
    fixed_delta: f64,
    frame: u64,
    seed: u64,
    actors: BTreeMap<ActorId, Actor>,
    next_id: ActorId,
    weather: WeatherParams,
    collisions: Vec<(ActorId, ActorId)>,
    off_road: Vec<ActorId>,
}

impl World {
    pub fn new(map: WorldMap, seed: u64) -> Self {
        Self::with_fixed_delta(map, seed, DEFAULT_FIXED_DELTA)
    }

    pub fn with_fixed_delta(map: WorldMap, seed: u64, fixed_delta: f64) -> Self {
        assert!(fixed_delta > 0.0, "fixed_delta must be positive");
        Self {
            map: Arc::new(map),
            fixed_delta,
            frame: 0,
            seed,
            actors: BTreeMap::new(),
            next_id: 1,
            weather: WeatherParams::default(),
            collisions: Vec::new(),
            off_road: Vec::new(),
        }
    }

    /// Rebuilds a world from a snapshot taken on the same map.
    pub fn from_state(map: WorldMap, state: &WorldState) -> Self {
        let actors: BTreeMap<_, _> = state.actors.iter().map(|a| (a.id, a.clone())).collect();
        let next_id = actors.keys().next_back().map_or(1, |id| id + 1);
        Self {
            map: Arc::new(map),
            fixed_delta: state.fixed_delta,
            frame: state.frame,
            seed: state.seed,
            actors,
            next_id,
            weather: state.weather,
            collisions: state.collisions_this_frame.clone(),
            off_road: state.off_road.clone(),
        }
    }

    pub fn map(&self) -> &WorldMap {
        &self.map
    }

    pub fn shared_map(&self) -> Arc<WorldMap> {
        Arc::clone(&self.map)
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn fixed_delta(&self) -> f64 {
        self.fixed_delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn actor(&self, id: ActorId) -> Option<&Actor> {
        self.actors.get(&id)
    }

    pub fn spawn_actor(&mut self, blueprint: ActorBlueprint, at: Transform) -> Result<ActorId, WorldError> {
        if !at.is_finite() {
            return Err(WorldError::InvalidTransform);
        }
        blueprint.validate()?;
        let at = Transform::new(at.x, at.y, at.yaw);
        let candidate = Obb::new(at, blueprint.length, blueprint.width);
        if let Some(existing) = self
            .actors
            .values()
            .find(|a| a.bounding_box().overlaps(&candidate))
        {
            return Err(WorldError::SpawnCollision(existing.id));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.actors.insert(
            id,
            Actor {
                id,
                blueprint,
                state: VehicleState::at_rest(at, self.frame, self.fixed_delta),
                control: ControlAction::neutral(),
                pending_control: None,
                autopilot: None,
            },
        );
        Ok(id)
    }

    /// Stores `action` for the next tick; a later call before the tick wins.
    pub fn apply_control(&mut self, id: ActorId, action: ControlAction) -> Result<(), WorldError> {
        let action = action.validate()?;
        let actor = self.actors.get_mut(&id).ok_or(WorldError::NoSuchActor(id))?;
        if actor.blueprint.kind != ActorKind::Vehicle {
            return Err(WorldError::NotAVehicle(id));
        }
        actor.pending_control = Some(action);
        Ok(())
    }

    pub fn set_weather(&mut self, params: WeatherParams) -> Result<(), WorldError> {
        params.validate()?;
        self.weather = params;
        Ok(())
    }

    /// Scripts an actor to follow `route` at constant `speed`, ignoring any
    /// vehicle control.
    pub fn set_autopilot(&mut self, id: ActorId, route: DenseRoute, speed: f64) -> Result<(), WorldError> {
        if route.len() < 2 {
            return Err(WorldError::InvalidAutopilot("route needs at least two waypoints".into()));
        }
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(WorldError::InvalidAutopilot(format!("speed must be non-negative, got {speed}")));
        }
        let actor = self.actors.get_mut(&id).ok_or(WorldError::NoSuchActor(id))?;
        actor.autopilot = Some(Autopilot { route, speed, arc: 0.0 });
        Ok(())
    }

    /// Overrides a vehicle's longitudinal speed, keeping its pose.
    pub fn set_speed(&mut self, id: ActorId, speed: f64) -> Result<(), WorldError> {
        if !speed.is_finite() {
            return Err(WorldError::OutOfRange { field: "speed", value: speed });
        }
        let actor = self.actors.get_mut(&id).ok_or(WorldError::NoSuchActor(id))?;
        if actor.blueprint.kind != ActorKind::Vehicle {
            return Err(WorldError::NotAVehicle(id));
        }
        actor.state.speed = speed;
        Ok(())
    }

    pub fn tick(&mut self) -> WorldState {
        let dt = self.fixed_delta;
        let next_frame = self.frame + 1;
        for actor in self.actors.values_mut() {
            if let Some(control) = actor.pending_control.take() {
                actor.control = control;
            }
            if let Some(pilot) = actor.autopilot.as_mut() {
                let total = pilot.route.total_length();
                pilot.arc = (pilot.arc + pilot.speed * dt).min(total);
                let pose = pilot.route.pose_at(pilot.arc);
                let old_yaw = actor.state.transform.yaw;
                actor.state.transform = pose;
                actor.state.speed = if pilot.arc < total { pilot.speed } else { 0.0 };
                actor.state.yaw_rate = wrap_angle(pose.yaw - old_yaw) / dt;
            } else if actor.blueprint.kind == ActorKind::Vehicle {
                actor.state = step_vehicle(&actor.state, &actor.blueprint, &actor.control, dt);
            }
            actor.state.frame = next_frame;
            actor.state.sim_time = next_frame as f64 * dt;
        }
        self.frame = next_frame;
        let actors: Vec<Actor> = self.actors.values().cloned().collect();
        self.collisions = detect_collisions(&actors);
        self.off_road = actors
            .iter()
            .filter(|a| a.blueprint.kind == ActorKind::Vehicle)
            .filter(|a| off_road_distance(&self.map, &a.state.transform) > 0.0)
            .map(|a| a.id)
            .collect();
        self.snapshot_with(actors)
    }

    pub fn snapshot(&self) -> WorldState {
        self.snapshot_with(self.actors.values().cloned().collect())
    }

    fn snapshot_with(&self, actors: Vec<Actor>) -> WorldState {
        WorldState {
            frame: self.frame,
            fixed_delta: self.fixed_delta,
            actors,
            weather: self.weather,
            collisions_this_frame: self.collisions.clone(),
            off_road: self.off_road.clone(),
            seed: self.seed,
        }
    }

    pub fn detect_collisions(&self) -> Vec<(ActorId, ActorId)> {
        let actors: Vec<Actor> = self.actors.values().cloned().collect();
        detect_collisions(&actors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route::{interpolate_route, RouteFile};
    use std::f64::consts::FRAC_PI_2;

    pub(crate) const STRAIGHT_MAP: &str = r#"
town = "Straight"

[geo_origin]
latitude = 0.0
longitude = 0.0
altitude = 0.0

[[roads]]
width = 7.0
points = [[0.0, 0.0], [300.0, 0.0]]

[[spawn_points]]
x = 0.0
y = 0.0
yaw = 0.0
"#;

    fn world() -> World {
        World::new(WorldMap::parse(STRAIGHT_MAP).unwrap(), 7)
    }

    #[test]
    fn loads_minimal_map() {
        let m = WorldMap::parse(STRAIGHT_MAP).unwrap();
        assert_eq!(m.town, "Straight");
        assert_eq!(m.roads.len(), 1);
        assert_eq!(m.roads[0].width, 7.0);
        assert_eq!(m.spawn_points, vec![Transform::at(0.0, 0.0)]);
    }

    #[test]
    fn map_without_roads_is_rejected() {
        let text = "town = \"x\"\nroads = []\n[geo_origin]\nlatitude = 0.0\nlongitude = 0.0\naltitude = 0.0\n";
        assert_eq!(WorldMap::parse(text), Err(MapError::NoRoads));
    }

    #[test]
    fn crossing_roads_are_kept_separate() {
        let text = format!(
            "{STRAIGHT_MAP}\n[[roads]]\nwidth = 5.0\npoints = [[150.0, -50.0], [150.0, 50.0]]\n"
        );
        let m = WorldMap::parse(&text).unwrap();
        assert_eq!(m.roads.len(), 2);
        assert_eq!(m.roads[1].centerline, vec![(150.0, -50.0), (150.0, 50.0)]);
    }

    #[test]
    fn unknown_fields_are_rejected_with_line() {
        let text = format!("{STRAIGHT_MAP}\n[[roads]]\nwidth = 5.0\nlanes = 2\npoints = [[0.0, 0.0], [1.0, 0.0]]\n");
        match WorldMap::parse(&text) {
            Err(MapError::Parse { line, reason }) => {
                assert_eq!(text.lines().nth(line - 1).unwrap().trim(), "lanes = 2");
                assert!(reason.contains("lanes"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_road_geometry_is_rejected() {
        let text = STRAIGHT_MAP.replace("width = 7.0", "width = 0.0");
        assert!(matches!(WorldMap::parse(&text), Err(MapError::InvalidRoad { index: 0, .. })));
        let text = STRAIGHT_MAP.replace("[[0.0, 0.0], [300.0, 0.0]]", "[[0.0, 0.0]]");
        assert!(matches!(WorldMap::parse(&text), Err(MapError::InvalidRoad { .. })));
    }

    #[test]
    fn map_document_round_trips() {
        let m = WorldMap::parse(STRAIGHT_MAP).unwrap();
        assert_eq!(WorldMap::parse(&m.to_document()).unwrap(), m);
    }

    #[test]
    fn off_road_distance_examples() {
        let m = WorldMap::parse(STRAIGHT_MAP).unwrap();
        assert_eq!(m.off_road_distance(100.0, 0.0), 0.0);
        assert_eq!(m.off_road_distance(100.0, 5.0), 1.5);
        assert_eq!(m.off_road_distance(100.0, -3.0), 0.0);
    }

    #[test]
    fn spawn_assigns_increasing_ids_and_rejects_overlap() {
        let mut w = world();
        let a = w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(10.0, 0.0)).unwrap();
        assert_eq!(a, 1);
        assert_eq!(
            w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(10.0, 0.0)),
            Err(WorldError::SpawnCollision(1))
        );
        let p = w.spawn_actor(ActorBlueprint::pedestrian(), Transform::at(5.0, 5.0)).unwrap();
        assert_eq!(p, 2);
        assert_eq!(w.actor(a).unwrap().state.speed, 0.0);
        assert_eq!(
            w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(f64::NAN, 0.0)),
            Err(WorldError::InvalidTransform)
        );
    }

    #[test]
    fn pedestrians_ignore_vehicle_dynamics() {
        let mut w = world();
        let p = w.spawn_actor(ActorBlueprint::pedestrian(), Transform::at(5.0, 5.0)).unwrap();
        assert_eq!(w.apply_control(p, ControlAction::neutral()), Err(WorldError::NotAVehicle(p)));
        for _ in 0..10 {
            w.tick();
        }
        assert_eq!(w.actor(p).unwrap().state.transform, Transform::at(5.0, 5.0));
    }

    #[test]
    fn scripted_actor_follows_route() {
        let mut w = world();
        let p = w.spawn_actor(ActorBlueprint::pedestrian(), Transform::at(20.0, -5.0)).unwrap();
        let route = RouteFile::new("walk", "Straight", vec![Transform::at(20.0, -5.0), Transform::at(20.0, 5.0)]).unwrap();
        w.set_autopilot(p, interpolate_route(&route, 1.0).unwrap(), 1.0).unwrap();
        for _ in 0..20 {
            w.tick();
        }
        let s = w.actor(p).unwrap().state;
        assert!((s.transform.y - -4.0).abs() < 1e-9);
        assert!((s.transform.yaw - FRAC_PI_2).abs() < 1e-12);
        for _ in 0..400 {
            w.tick();
        }
        let s = w.actor(p).unwrap().state;
        assert_eq!((s.transform.y, s.speed), (5.0, 0.0));
    }

    #[test]
    fn control_is_deferred_and_last_writer_wins() {
        let mut w = world();
        let ego = w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(0.0, 0.0)).unwrap();
        let full = ControlAction { throttle: 1.0, gear: 1, ..ControlAction::neutral() };
        w.apply_control(ego, ControlAction { throttle: 0.2, ..full }).unwrap();
        w.apply_control(ego, full).unwrap();
        assert_eq!(w.actor(ego).unwrap().state.speed, 0.0);
        w.tick();
        assert!((w.actor(ego).unwrap().state.speed - 0.15).abs() < 1e-12);
        assert_eq!(w.apply_control(999, full), Err(WorldError::NoSuchActor(999)));
        assert!(matches!(
            w.apply_control(ego, ControlAction { throttle: 2.0, ..full }),
            Err(WorldError::OutOfRange { field: "throttle", .. })
        ));
    }

    #[test]
    fn neutral_control_is_a_fixed_point() {
        let mut w = world();
        let ego = w.spawn_actor(ActorBlueprint::vehicle(), Transform::new(3.0, 1.0, 0.3)).unwrap();
        let start = w.actor(ego).unwrap().state.transform;
        for _ in 0..100 {
            w.apply_control(ego, ControlAction::neutral()).unwrap();
            w.tick();
        }
        assert_eq!(w.actor(ego).unwrap().state.transform, start);
        assert_eq!(w.frame(), 100);
    }

    #[test]
    fn one_step_from_rest_matches_hand_computation() {
        let bp = ActorBlueprint { drag: 0.0, max_accel: 3.0, ..ActorBlueprint::vehicle() };
        let s0 = VehicleState::at_rest(Transform::default(), 0, 0.05);
        let c = ControlAction { throttle: 1.0, ..ControlAction::neutral() };
        let s1 = step_vehicle(&s0, &bp, &c, 0.05);
        assert!((s1.speed - 0.15).abs() < 1e-15);
        assert!((s1.transform.x - 0.0075).abs() < 1e-15);
        assert_eq!(s1.transform.y, 0.0);
        assert_eq!(s1.frame, 1);
    }

    #[test]
    fn braking_stops_at_zero() {
        let bp = ActorBlueprint::vehicle();
        let mut s = VehicleState { speed: 0.3, ..Default::default() };
        let brake = ControlAction { brake: 1.0, ..ControlAction::neutral() };
        s = step_vehicle(&s, &bp, &brake, 0.05);
        assert_eq!(s.speed, 0.0);
        s = step_vehicle(&s, &bp, &brake, 0.05);
        assert_eq!(s.speed, 0.0);
        let held = ControlAction { throttle: 1.0, brake: 1.0, ..ControlAction::neutral() };
        assert_eq!(step_vehicle(&s, &bp, &held, 0.05).speed, 0.0);
    }

    #[test]
    fn reverse_and_hand_brake() {
        let bp = ActorBlueprint { drag: 0.0, ..ActorBlueprint::vehicle() };
        let s = VehicleState::default();
        let rev = ControlAction { throttle: 1.0, reverse: true, gear: -1, ..ControlAction::neutral() };
        let s = step_vehicle(&s, &bp, &rev, 0.05);
        assert!(s.speed < 0.0);
        assert!(s.transform.x < 0.0);
        let moving = VehicleState { speed: 5.0, ..Default::default() };
        let hb = ControlAction { throttle: 1.0, hand_brake: true, ..ControlAction::neutral() };
        let s = step_vehicle(&moving, &bp, &hb, 0.05);
        assert!((s.speed - 4.6).abs() < 1e-12);
    }

    #[test]
    fn coasting_never_gains_speed() {
        let bp = ActorBlueprint::vehicle();
        let mut s = VehicleState { speed: 12.0, ..Default::default() };
        let steer = ControlAction { steer: 0.4, ..ControlAction::neutral() };
        for _ in 0..500 {
            let next = step_vehicle(&s, &bp, &steer, 0.05);
            assert!(next.speed.abs() <= s.speed.abs());
            s = next;
        }
    }

    #[test]
    fn collisions_are_sorted_pairs() {
        let mut w = world();
        w.spawn_actor(ActorBlueprint::static_prop(4.0, 2.0), Transform::at(0.0, 10.0)).unwrap();
        w.spawn_actor(ActorBlueprint::static_prop(4.0, 2.0), Transform::at(10.0, 10.0)).unwrap();
        assert!(w.detect_collisions().is_empty());
        let ego = w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(-10.0, 10.0)).unwrap();
        w.set_speed(ego, 10.0).unwrap();
        let mut saw = Vec::new();
        for _ in 0..40 {
            saw.extend(w.tick().collisions_this_frame);
        }
        assert!(!saw.is_empty());
        assert!(saw.iter().all(|&(a, b)| a < b));
    }

    #[test]
    fn weather_round_trip_and_bounds() {
        let mut w = world();
        assert!(w.set_weather(WeatherParams::default()).is_ok());
        let bad = WeatherParams { precipitation: 1.5, ..Default::default() };
        assert_eq!(
            w.set_weather(bad),
            Err(WorldError::OutOfRange { field: "precipitation", value: 1.5 })
        );
        let p = WeatherParams { cloudiness: 0.3, precipitation: 0.1, fog_density: 0.0, sun_altitude: 45.0 };
        w.set_weather(p).unwrap();
        assert_eq!(w.tick().weather, p);
    }

    #[test]
    fn tick_advances_frame_and_time_exactly() {
        let mut w = world();
        for n in 1..=50u64 {
            let s = w.tick();
            assert_eq!(s.frame, n);
            assert_eq!(s.sim_time(), n as f64 * DEFAULT_FIXED_DELTA);
        }
    }

    #[test]
    fn off_road_vehicles_are_reported() {
        let mut w = world();
        let ego = w.spawn_actor(ActorBlueprint::vehicle(), Transform::at(10.0, 6.0)).unwrap();
        assert_eq!(w.tick().off_road, vec![ego]);
    }

    #[test]
    fn restored_world_continues_identically() {
        let mut a = world();
        let ego = a.spawn_actor(ActorBlueprint::vehicle(), Transform::at(0.0, 0.0)).unwrap();
        a.apply_control(ego, ControlAction { throttle: 0.7, steer: 0.1, ..ControlAction::neutral() }).unwrap();
        a.tick();
        let mut b = World::from_state(a.map().clone(), &a.snapshot());
        for _ in 0..30 {
            assert_eq!(a.tick(), b.tick());
        }
    }
}
