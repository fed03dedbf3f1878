//! Sensor rigs: declaration, mounting on a vehicle and per-frame sampling
//! against a world snapshot.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Obb;
use crate::model::{wrap_angle, GeoLocation, Transform};
use crate::route::RouteError;
use crate::sim::{ActorId, WorldMap, WorldState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("duplicate sensor id `{0}`")]
    DuplicateSensorId(String),
    #[error("rig has no sensors")]
    EmptyRig,
    #[error("invalid sensor `{id}`: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("no actor with id {0}")]
    NoSuchActor(ActorId),
    #[error(transparent)]
    Geo(#[from] RouteError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Gnss,
    Imu,
    Speedometer,
    /// Ego-centred bird's-eye grid. `cells_x` runs along the vehicle's
    /// heading, `cells_y` across it.
    BevOccupancy {
        cells_x: u32,
        cells_y: u32,
        meters_per_cell: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub kind: SensorKind,
    /// Pose relative to the vehicle origin.
    pub mount: Transform,
    /// Meters for GNSS, m/s² for IMU accelerations; 0 disables noise.
    pub noise_stddev: f64,
}

impl SensorSpec {
    pub fn new(sensor_id: impl Into<String>, kind: SensorKind) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            kind,
            mount: Transform::default(),
            noise_stddev: 0.0,
        }
    }

    pub fn gnss(id: impl Into<String>) -> Self {
        Self::new(id, SensorKind::Gnss)
    }

    pub fn imu(id: impl Into<String>) -> Self {
        Self::new(id, SensorKind::Imu)
    }

    pub fn speedometer(id: impl Into<String>) -> Self {
        Self::new(id, SensorKind::Speedometer)
    }

    pub fn bev(id: impl Into<String>, cells_x: u32, cells_y: u32, meters_per_cell: f64) -> Self {
        Self::new(
            id,
            SensorKind::BevOccupancy {
                cells_x,
                cells_y,
                meters_per_cell,
            },
        )
    }

    pub fn with_mount(mut self, mount: Transform) -> Self {
        self.mount = mount;
        self
    }

    pub fn with_noise(mut self, stddev: f64) -> Self {
        self.noise_stddev = stddev;
        self
    }

    fn validate(&self) -> Result<(), SensorError> {
        let invalid = |reason: &str| {
            Err(SensorError::InvalidSpec {
                id: self.sensor_id.clone(),
                reason: reason.to_owned(),
            })
        };
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return invalid("noise_stddev must be non-negative");
        }
        if !self.mount.is_finite() {
            return invalid("mount is not finite");
        }
        if let SensorKind::BevOccupancy {
            cells_x,
            cells_y,
            meters_per_cell,
        } = self.kind
        {
            if cells_x == 0 || cells_y == 0 || !(meters_per_cell > 0.0 && meters_per_cell.is_finite()) {
                return invalid("grid dimensions must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Free,
    Occupied,
    OffRoad,
    Ego,
}

impl CellState {
    pub fn symbol(self) -> char {
        match self {
            CellState::Free => '.',
            CellState::Occupied => '#',
            CellState::OffRoad => '~',
            CellState::Ego => 'E',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellState::Free),
            '#' => Some(CellState::Occupied),
            '~' => Some(CellState::OffRoad),
            'E' => Some(CellState::Ego),
            _ => None,
        }
    }
}

/// Row-major grid: row `ix` counts from the rearmost row forward, column
/// `iy` from the rightmost column leftward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub cells_x: u32,
    pub cells_y: u32,
    pub meters_per_cell: f64,
    pub cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn cell(&self, ix: u32, iy: u32) -> CellState {
        self.cells[(ix * self.cells_y + iy) as usize]
    }

    /// Cell centre in the ego frame (x forward, y left).
    pub fn cell_center(&self, ix: u32, iy: u32) -> (f64, f64) {
        cell_center(self.cells_x, self.cells_y, self.meters_per_cell, ix, iy)
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|c| **c == state).count()
    }

    /// One line per row, front row first.
    pub fn to_symbols(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() + self.cells_x as usize);
        for ix in (0..self.cells_x).rev() {
            for iy in (0..self.cells_y).rev() {
                out.push(self.cell(ix, iy).symbol());
            }
            out.push('\n');
        }
        out
    }
}

fn cell_center(cells_x: u32, cells_y: u32, mpc: f64, ix: u32, iy: u32) -> (f64, f64) {
    (
        (f64::from(ix) + 0.5 - f64::from(cells_x) / 2.0) * mpc,
        (f64::from(iy) + 0.5 - f64::from(cells_y) / 2.0) * mpc,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuReading {
    /// Vehicle-frame acceleration, forward.
    pub accel_x: f64,
    /// Vehicle-frame acceleration, left.
    pub accel_y: f64,
    pub yaw_rate: f64,
    /// Radians clockwise from north.
    pub compass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    Gnss(GeoLocation),
    Imu(ImuReading),
    Speed(f64),
    Occupancy(OccupancyGrid),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub frame: u64,
    pub sim_time: f64,
    pub readings: BTreeMap<String, Reading>,
}

impl SensorFrame {
    pub fn get(&self, sensor_id: &str) -> Option<&Reading> {
        self.readings.get(sensor_id)
    }

    /// SHA-256 over the canonical binary encoding, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = crate::codec::encode_to_vec(self);
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy)]
struct Kinematics {
    frame: u64,
    vx: f64,
    vy: f64,
    yaw: f64,
}

#[derive(Debug, Clone)]
struct SensorSlot {
    spec: SensorSpec,
    rng: ChaCha8Rng,
    last: Option<Kinematics>,
    last_reading: Option<ImuReading>,
}

/// Sensors mounted on one vehicle, each with its own seeded noise stream.
#[derive(Debug, Clone)]
pub struct SensorRig {
    ego: ActorId,
    slots: Vec<SensorSlot>,
}

/// Noise stream seed derived from the world seed and the sensor id.
pub fn sensor_seed(world_seed: u64, sensor_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(world_seed.to_be_bytes());
    h.update(sensor_id.as_bytes());
    h.finalize().into()
}

pub fn build_rig(specs: &[SensorSpec], ego: ActorId, world_seed: u64) -> Result<SensorRig, SensorError> {
    SensorRig::build(specs, ego, world_seed)
}

impl SensorRig {
    pub fn build(specs: &[SensorSpec], ego: ActorId, world_seed: u64) -> Result<Self, SensorError> {
        if specs.is_empty() {
            return Err(SensorError::EmptyRig);
        }
        let mut seen = HashSet::new();
        for spec in specs {
            if !seen.insert(spec.sensor_id.as_str()) {
                return Err(SensorError::DuplicateSensorId(spec.sensor_id.clone()));
            }
            spec.validate()?;
        }
        let slots = specs
            .iter()
            .map(|spec| SensorSlot {
                rng: ChaCha8Rng::from_seed(sensor_seed(world_seed, &spec.sensor_id)),
                spec: spec.clone(),
                last: None,
                last_reading: None,
            })
            .collect();
        Ok(Self { ego, slots })
    }

    pub fn ego(&self) -> ActorId {
        self.ego
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn specs(&self) -> impl Iterator<Item = &SensorSpec> {
        self.slots.iter().map(|s| &s.spec)
    }

    pub fn sample(&mut self, world: &WorldState, map: &WorldMap) -> Result<SensorFrame, SensorError> {
        let ego = world
            .actor(self.ego)
            .ok_or(SensorError::NoSuchActor(self.ego))?;
        let pose = ego.state.transform;
        let dt = world.fixed_delta;
        let mut readings = BTreeMap::new();

        for slot in &mut self.slots {
            let sd = slot.spec.noise_stddev;
            let reading = match slot.spec.kind {
                SensorKind::Gnss => {
                    let (mut x, mut y) = pose.apply(slot.spec.mount.x, slot.spec.mount.y);
                    if sd > 0.0 {
                        x += gaussian(&mut slot.rng, sd);
                        y += gaussian(&mut slot.rng, sd);
                    }
                    Reading::Gnss(map.geo_origin.to_geo(x, y)?)
                }
                SensorKind::Imu => {
                    let (vx, vy) = ego.state.velocity();
                    let now = Kinematics {
                        frame: world.frame,
                        vx,
                        vy,
                        yaw: pose.yaw,
                    };
                    let mut reading = match (slot.last, slot.last_reading) {
                        (Some(prev), Some(r)) if prev.frame == now.frame => r,
                        (Some(prev), _) if prev.frame < now.frame => {
                            let span = (now.frame - prev.frame) as f64 * dt;
                            let (ax, ay) = ((now.vx - prev.vx) / span, (now.vy - prev.vy) / span);
                            let (s, c) = pose.yaw.sin_cos();
                            ImuReading {
                                accel_x: c * ax + s * ay,
                                accel_y: -s * ax + c * ay,
                                yaw_rate: wrap_angle(now.yaw - prev.yaw) / span,
                                compass: 0.0,
                            }
                        }
                        _ => ImuReading {
                            accel_x: 0.0,
                            accel_y: 0.0,
                            yaw_rate: 0.0,
                            compass: 0.0,
                        },
                    };
                    if slot.last.is_none_or(|p| p.frame != now.frame) && sd > 0.0 {
                        reading.accel_x += gaussian(&mut slot.rng, sd);
                        reading.accel_y += gaussian(&mut slot.rng, sd);
                    }
                    reading.compass = wrap_angle(FRAC_PI_2 - pose.yaw);
                    slot.last = Some(now);
                    slot.last_reading = Some(reading);
                    Reading::Imu(reading)
                }
                SensorKind::Speedometer => Reading::Speed(ego.state.speed.abs()),
                SensorKind::BevOccupancy {
                    cells_x,
                    cells_y,
                    meters_per_cell,
                } => Reading::Occupancy(rasterize(world, map, self.ego, cells_x, cells_y, meters_per_cell)),
            };
            readings.insert(slot.spec.sensor_id.clone(), reading);
        }

        Ok(SensorFrame {
            frame: world.frame,
            sim_time: world.sim_time(),
            readings,
        })
    }
}

pub fn sample(rig: &mut SensorRig, world: &WorldState, map: &WorldMap) -> Result<SensorFrame, SensorError> {
    rig.sample(world, map)
}

fn gaussian(rng: &mut ChaCha8Rng, stddev: f64) -> f64 {
    Normal::new(0.0, stddev)
        .expect("stddev validated at rig build")
        .sample(rng)
}

fn rasterize(
    world: &WorldState,
    map: &WorldMap,
    ego_id: ActorId,
    cells_x: u32,
    cells_y: u32,
    mpc: f64,
) -> OccupancyGrid {
    let ego = world.actor(ego_id).expect("ego checked by caller");
    let pose = ego.state.transform;
    let ego_box = ego.bounding_box();
    let reach = (f64::from(cells_x).hypot(f64::from(cells_y)) * mpc) / 2.0;
    // only boxes that can touch the grid
    let others: Vec<(Obb, f64)> = world
        .actors
        .iter()
        .filter(|a| a.id != ego_id)
        .map(|a| {
            let b = a.bounding_box();
            (b, b.half_length.hypot(b.half_width))
        })
        .filter(|(b, r)| (b.center.0 - pose.x).hypot(b.center.1 - pose.y) <= reach + r)
        .collect();

    let mut cells = Vec::with_capacity((cells_x * cells_y) as usize);
    for ix in 0..cells_x {
        for iy in 0..cells_y {
            let (lx, ly) = cell_center(cells_x, cells_y, mpc, ix, iy);
            let p = pose.apply(lx, ly);
            let state = if ego_box.contains(p) {
                CellState::Ego
            } else if others.iter().any(|(b, _)| b.contains(p)) {
                CellState::Occupied
            } else if map.off_road_distance(p.0, p.1) > 0.0 {
                CellState::OffRoad
            } else {
                CellState::Free
            };
            cells.push(state);
        }
    }
    OccupancyGrid {
        cells_x,
        cells_y,
        meters_per_cell: mpc,
        cells,
    }
}

/// Sensor list declared by the named built-in agent.
pub fn required_rig_for(agent_name: &str) -> Result<Vec<SensorSpec>, crate::agents::AgentError> {
    crate::agents::AgentRegistry::builtin().required_rig_for(agent_name)
}
