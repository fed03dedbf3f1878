//! Agent naming, lifecycle and registry, plus the built-in reference
//! agents.
//!
//! Names follow `family[_variant][_sN]` with lowercase alphanumeric parts
//! and a seed index `N` in `1..=99`. A second part of the form `sN` is
//! always read as a seed, so no variant may look like one.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{wrap_angle, ControlAction};
use crate::route::{DenseRoute, GeoOrigin, GeoRoute, ProgressTracker};
use crate::sensors::{CellState, Reading, SensorFrame, SensorSpec};

pub const MAX_SEED: u8 = 99;
/// Prefix selecting an out-of-process agent: `ext:host:port`.
pub const EXTERNAL_PREFIX: &str = "ext:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("malformed agent name `{0}`")]
    MalformedName(String),
    #[error("agent route is empty")]
    RouteEmpty,
    #[error("sensor `{0}` missing from frame")]
    MissingSensor(String),
    #[error("agent is not initialized")]
    NotInitialized,
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("remote agent: {0}")]
    Remote(String),
    #[error("agent failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentDescriptor {
    pub family: String,
    pub variant: Option<String>,
    pub seed: Option<u8>,
}

fn is_part(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn parse_seed(s: &str) -> Option<u8> {
    let digits = s.strip_prefix('s')?;
    if digits.is_empty() || digits.len() > 2 || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok().filter(|n| (1..=MAX_SEED).contains(n))
}

fn looks_like_seed(s: &str) -> bool {
    s.len() > 1 && s.starts_with('s') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

impl AgentDescriptor {
    pub fn new(family: &str, variant: Option<&str>, seed: Option<u8>) -> Result<Self, AgentError> {
        let d = Self {
            family: family.to_owned(),
            variant: variant.map(str::to_owned),
            seed,
        };
        let name = d.render();
        if name.parse::<AgentDescriptor>().as_ref() != Ok(&d) {
            return Err(AgentError::MalformedName(name));
        }
        Ok(d)
    }

    pub fn render(&self) -> String {
        let mut out = self.family.clone();
        if let Some(v) = &self.variant {
            out.push('_');
            out.push_str(v);
        }
        if let Some(n) = self.seed {
            out.push_str(&format!("_s{n}"));
        }
        out
    }
}

impl fmt::Display for AgentDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for AgentDescriptor {
    type Err = AgentError;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        let malformed = || AgentError::MalformedName(name.to_owned());
        let parts: Vec<&str> = name.split('_').collect();
        if !parts.iter().all(|p| is_part(p)) {
            return Err(malformed());
        }
        let seed_of = |p: &str| parse_seed(p).ok_or_else(malformed);
        let (family, variant, seed) = match parts.as_slice() {
            [family] => (*family, None, None),
            [family, last] if looks_like_seed(last) => (*family, None, Some(seed_of(last)?)),
            [family, variant] => (*family, Some(*variant), None),
            [family, variant, last] if !looks_like_seed(variant) => {
                (*family, Some(*variant), Some(seed_of(last)?))
            }
            _ => return Err(malformed()),
        };
        Ok(Self {
            family: family.to_owned(),
            variant: variant.map(str::to_owned),
            seed,
        })
    }
}

pub type Parameters = BTreeMap<String, f64>;

/// Everything an agent receives at setup.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub descriptor: AgentDescriptor,
    pub geo_route: GeoRoute,
    pub dense_route: DenseRoute,
    pub parameters: Parameters,
}

/// Agent lifecycle. Agents see only sensor frames, never the world.
pub trait Agent: Send {
    fn setup(&mut self, config: &AgentConfig) -> Result<(), AgentError>;
    fn run_step(&mut self, frame: &SensorFrame) -> Result<ControlAction, AgentError>;
    /// Drops internal state. Idempotent.
    fn destroy(&mut self);
}

type MakeAgent = dyn Fn() -> Result<Box<dyn Agent>, AgentError> + Send + Sync;

/// A resolved agent name: its parameters, its rig and a constructor.
#[derive(Clone)]
pub struct AgentFactory {
    pub name: String,
    pub descriptor: AgentDescriptor,
    pub family: String,
    pub parameters: Parameters,
    pub sensors: Vec<SensorSpec>,
    make: Arc<MakeAgent>,
}

impl fmt::Debug for AgentFactory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentFactory")
            .field("name", &self.name)
            .field("parameters", &self.parameters)
            .field("sensors", &self.sensors)
            .finish_non_exhaustive()
    }
}

impl AgentFactory {
    pub fn new(
        name: impl Into<String>,
        descriptor: AgentDescriptor,
        parameters: Parameters,
        sensors: Vec<SensorSpec>,
        make: impl Fn() -> Result<Box<dyn Agent>, AgentError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            family: descriptor.family.clone(),
            descriptor,
            parameters,
            sensors,
            make: Arc::new(make),
        }
    }

    pub fn instantiate(&self) -> Result<Box<dyn Agent>, AgentError> {
        (self.make)()
    }

    pub fn config(&self, geo_route: GeoRoute, dense_route: DenseRoute) -> AgentConfig {
        AgentConfig {
            descriptor: self.descriptor.clone(),
            geo_route,
            dense_route,
            parameters: self.parameters.clone(),
        }
    }
}

/// A named group of agents sharing one implementation.
pub trait AgentFamily: Send + Sync {
    fn family(&self) -> &str;
    /// Every name this family resolves, for listings.
    fn names(&self) -> Vec<String>;
    fn resolve(&self, descriptor: &AgentDescriptor) -> Result<AgentFactory, AgentError>;
}

#[derive(Clone, Default)]
pub struct AgentRegistry {
    families: BTreeMap<String, Arc<dyn AgentFamily>>,
}

impl AgentRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with `noop` and the pure-pursuit `pp` family.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(NoopFamily);
        r.register(PurePursuitFamily);
        r
    }

    pub fn register(&mut self, family: impl AgentFamily + 'static) {
        self.families.insert(family.family().to_owned(), Arc::new(family));
    }

    pub fn resolve(&self, name: &str) -> Result<AgentFactory, AgentError> {
        if let Some(endpoint) = name.strip_prefix(EXTERNAL_PREFIX) {
            return crate::wire::remote_agent::resolve_external(endpoint);
        }
        let descriptor: AgentDescriptor = name.parse()?;
        self.families
            .get(&descriptor.family)
            .ok_or_else(|| AgentError::UnknownAgent(name.to_owned()))?
            .resolve(&descriptor)
    }

    pub fn required_rig_for(&self, name: &str) -> Result<Vec<SensorSpec>, AgentError> {
        Ok(self.resolve(name)?.sensors)
    }

    /// All resolvable names, sorted.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.families.values().flat_map(|f| f.names()).collect();
        names.sort();
        names
    }
}

pub fn resolve_agent(name: &str) -> Result<AgentFactory, AgentError> {
    AgentRegistry::builtin().resolve(name)
}

/// Always returns neutral controls.
#[derive(Debug, Default)]
pub struct NoopAgent {
    ready: bool,
}

impl Agent for NoopAgent {
    fn setup(&mut self, config: &AgentConfig) -> Result<(), AgentError> {
        if config.dense_route.is_empty() || config.geo_route.is_empty() {
            return Err(AgentError::RouteEmpty);
        }
        self.ready = true;
        Ok(())
    }

    fn run_step(&mut self, _frame: &SensorFrame) -> Result<ControlAction, AgentError> {
        if !self.ready {
            return Err(AgentError::NotInitialized);
        }
        Ok(ControlAction::neutral())
    }

    fn destroy(&mut self) {
        self.ready = false;
    }
}

struct NoopFamily;

impl AgentFamily for NoopFamily {
    fn family(&self) -> &str {
        "noop"
    }

    fn names(&self) -> Vec<String> {
        vec!["noop".into()]
    }

    fn resolve(&self, d: &AgentDescriptor) -> Result<AgentFactory, AgentError> {
        if d.variant.is_some() || d.seed.is_some() {
            return Err(AgentError::UnknownAgent(d.render()));
        }
        Ok(AgentFactory::new(
            d.render(),
            d.clone(),
            Parameters::new(),
            vec![SensorSpec::speedometer("speed")],
            || Ok(Box::new(NoopAgent::default())),
        ))
    }
}

/// Tuning of one pure-pursuit variant after seed perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurePursuitParams {
    pub target_speed: f64,
    pub lookahead: f64,
    /// Brake when an occupied cell ahead is this close; `None` disables.
    pub stop_distance: Option<f64>,
    pub k_p: f64,
    pub wheelbase: f64,
    pub max_wheel_angle: f64,
}

impl PurePursuitParams {
    pub const WHEELBASE: f64 = 2.9;
    pub const MAX_WHEEL_ANGLE: f64 = 0.61;
    pub const K_P: f64 = 0.5;

    pub fn for_variant(variant: &str, seed: Option<u8>) -> Option<Self> {
        let (target_speed, lookahead, stop_distance) = match variant {
            "fast" => (8.0, 6.0, None),
            "safe" => (5.0, 4.0, Some(8.0)),
            _ => return None,
        };
        let n = f64::from(seed.unwrap_or(0));
        Some(Self {
            target_speed: target_speed * (1.0 + 0.02 * n),
            lookahead: lookahead * (1.0 - 0.01 * n),
            stop_distance,
            k_p: Self::K_P,
            wheelbase: Self::WHEELBASE,
            max_wheel_angle: Self::MAX_WHEEL_ANGLE,
        })
    }

    pub fn to_parameters(&self) -> Parameters {
        let mut p = Parameters::new();
        p.insert("target_speed".into(), self.target_speed);
        p.insert("lookahead".into(), self.lookahead);
        p.insert("k_p".into(), self.k_p);
        p.insert("wheelbase".into(), self.wheelbase);
        p.insert("max_wheel_angle".into(), self.max_wheel_angle);
        if let Some(d) = self.stop_distance {
            p.insert("stop_distance".into(), d);
        }
        p
    }

    pub fn from_parameters(p: &Parameters) -> Result<Self, AgentError> {
        let get = |k: &str| {
            p.get(k)
                .copied()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| AgentError::Failed(format!("parameter `{k}` missing or not positive")))
        };
        Ok(Self {
            target_speed: get("target_speed")?,
            lookahead: get("lookahead")?,
            stop_distance: p.get("stop_distance").copied(),
            k_p: get("k_p")?,
            wheelbase: get("wheelbase")?,
            max_wheel_angle: get("max_wheel_angle")?,
        })
    }

    /// Normalized steering command toward a point at heading error `alpha`.
    pub fn steer_for(&self, alpha: f64) -> f64 {
        let wheel = (2.0 * self.wheelbase * alpha.sin()).atan2(self.lookahead);
        (wheel / self.max_wheel_angle).clamp(-1.0, 1.0)
    }

    /// Proportional speed law: returns `(throttle, brake)`.
    pub fn pedals_for(&self, speed: f64) -> (f64, f64) {
        let e = self.target_speed - speed;
        if e > 0.0 {
            ((self.k_p * e).min(1.0), 0.0)
        } else {
            (0.0, (-self.k_p * e).min(1.0))
        }
    }
}

pub const GNSS_ID: &str = "gps";
pub const SPEED_ID: &str = "speed";
pub const IMU_ID: &str = "imu";
pub const BEV_ID: &str = "bev";

#[derive(Debug, Clone, PartialEq)]
struct Tracking {
    route: DenseRoute,
    origin: GeoOrigin,
    tracker: ProgressTracker,
}

/// Geometric path follower with a proportional speed controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PurePursuitAgent {
    params: PurePursuitParams,
    tracking: Option<Tracking>,
}

impl PurePursuitAgent {
    pub fn new(params: PurePursuitParams) -> Self {
        Self {
            params,
            tracking: None,
        }
    }

    pub fn params(&self) -> &PurePursuitParams {
        &self.params
    }

    /// Arc length of the progress cursor, if set up.
    pub fn cursor(&self) -> Option<f64> {
        self.tracking.as_ref().map(|t| t.tracker.cursor_arc())
    }

    fn obstacle_ahead(&self, frame: &SensorFrame, stop: f64) -> Result<bool, AgentError> {
        let Some(Reading::Occupancy(grid)) = frame.get(BEV_ID) else {
            return Err(AgentError::MissingSensor(BEV_ID.into()));
        };
        for ix in 0..grid.cells_x {
            for iy in 0..grid.cells_y {
                if grid.cell(ix, iy) != CellState::Occupied {
                    continue;
                }
                let (lx, ly) = grid.cell_center(ix, iy);
                if lx > 0.0 && lx.hypot(ly) <= stop {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

impl Agent for PurePursuitAgent {
    fn setup(&mut self, config: &AgentConfig) -> Result<(), AgentError> {
        if config.dense_route.is_empty() || config.geo_route.is_empty() {
            return Err(AgentError::RouteEmpty);
        }
        self.tracking = Some(Tracking {
            route: config.dense_route.clone(),
            origin: config.geo_route.origin,
            tracker: ProgressTracker::new(),
        });
        Ok(())
    }

    fn run_step(&mut self, frame: &SensorFrame) -> Result<ControlAction, AgentError> {
        let p = self.params;
        let stop_check = match p.stop_distance {
            Some(d) => self.obstacle_ahead(frame, d)?,
            None => false,
        };
        let tracking = self.tracking.as_mut().ok_or(AgentError::NotInitialized)?;

        let Some(Reading::Gnss(fix)) = frame.get(GNSS_ID) else {
            return Err(AgentError::MissingSensor(GNSS_ID.into()));
        };
        let Some(Reading::Speed(speed)) = frame.get(SPEED_ID) else {
            return Err(AgentError::MissingSensor(SPEED_ID.into()));
        };
        let Some(Reading::Imu(imu)) = frame.get(IMU_ID) else {
            return Err(AgentError::MissingSensor(IMU_ID.into()));
        };

        let position = tracking
            .origin
            .from_geo(fix)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        let heading = wrap_angle(FRAC_PI_2 - imu.compass);
        tracking.tracker.update(&tracking.route, &position);
        let target = tracking.route.pose_at(tracking.tracker.cursor_arc() + p.lookahead);
        let (dx, dy) = (target.x - position.x, target.y - position.y);
        let alpha = if dx.hypot(dy) < 1e-9 {
            0.0
        } else {
            wrap_angle(dy.atan2(dx) - heading)
        };

        let (throttle, brake) = if stop_check { (0.0, 1.0) } else { p.pedals_for(*speed) };
        let action = ControlAction {
            throttle,
            steer: p.steer_for(alpha),
            brake,
            hand_brake: false,
            reverse: false,
            manual_gear_shift: false,
            gear: 1,
        };
        action
            .validate()
            .map_err(|e| AgentError::Failed(e.to_string()))
    }

    fn destroy(&mut self) {
        self.tracking = None;
    }
}

struct PurePursuitFamily;

impl PurePursuitFamily {
    const VARIANTS: [&'static str; 2] = ["fast", "safe"];

    fn sensors(variant: &str) -> Vec<SensorSpec> {
        let mut rig = vec![
            SensorSpec::gnss(GNSS_ID),
            SensorSpec::speedometer(SPEED_ID),
            SensorSpec::imu(IMU_ID),
        ];
        if variant == "safe" {
            rig.push(SensorSpec::bev(BEV_ID, 40, 40, 0.5));
        }
        rig
    }
}

impl AgentFamily for PurePursuitFamily {
    fn family(&self) -> &str {
        "pp"
    }

    fn names(&self) -> Vec<String> {
        Self::VARIANTS
            .iter()
            .flat_map(|v| {
                std::iter::once(format!("pp_{v}"))
                    .chain((1..=MAX_SEED).map(move |n| format!("pp_{v}_s{n}")))
            })
            .collect()
    }

    fn resolve(&self, d: &AgentDescriptor) -> Result<AgentFactory, AgentError> {
        let unknown = || AgentError::UnknownAgent(d.render());
        let variant = d.variant.as_deref().ok_or_else(unknown)?;
        let params = PurePursuitParams::for_variant(variant, d.seed).ok_or_else(unknown)?;
        Ok(AgentFactory::new(
            d.render(),
            d.clone(),
            params.to_parameters(),
            Self::sensors(variant),
            move || Ok(Box::new(PurePursuitAgent::new(params))),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeoLocation, Transform};
    use crate::route::{interpolate_route, to_geo, RouteFile};
    use crate::sensors::{ImuReading, OccupancyGrid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn straight_config(factory: &AgentFactory, length: f64) -> AgentConfig {
        let route = RouteFile::new("r", "t", vec![Transform::at(0.0, 0.0), Transform::at(length, 0.0)]).unwrap();
        let dense = interpolate_route(&route, 1.0).unwrap();
        let geo = to_geo(&dense, &GeoOrigin::default()).unwrap();
        factory.config(geo, dense)
    }

    fn frame_at(x: f64, y: f64, yaw: f64, speed: f64) -> SensorFrame {
        let origin = GeoOrigin::default();
        let mut readings = BTreeMap::new();
        readings.insert(GNSS_ID.into(), Reading::Gnss(origin.to_geo(x, y).unwrap()));
        readings.insert(SPEED_ID.into(), Reading::Speed(speed));
        readings.insert(
            IMU_ID.into(),
            Reading::Imu(ImuReading { accel_x: 0.0, accel_y: 0.0, yaw_rate: 0.0, compass: wrap_angle(FRAC_PI_2 - yaw) }),
        );
        SensorFrame { frame: 0, sim_time: 0.0, readings }
    }

    fn empty_grid() -> OccupancyGrid {
        OccupancyGrid { cells_x: 40, cells_y: 40, meters_per_cell: 0.5, cells: vec![CellState::Free; 1600] }
    }

    #[test]
    fn names_parse_and_render() {
        let d: AgentDescriptor = "pp_fast_s2".parse().unwrap();
        assert_eq!(d, AgentDescriptor { family: "pp".into(), variant: Some("fast".into()), seed: Some(2) });
        assert_eq!(d.render(), "pp_fast_s2");
        assert_eq!("noop".parse::<AgentDescriptor>().unwrap().variant, None);
        assert_eq!("neat_neat".parse::<AgentDescriptor>().unwrap().variant.as_deref(), Some("neat"));
        assert_eq!("pp_s3".parse::<AgentDescriptor>().unwrap().seed, Some(3));
        for bad in ["Neat Neat", "", "pp__fast", "pp_fast_s0", "pp_fast_s100", "pp_fast_s07", "a_b_c", "pp-fast", "pp_s1_s2", "_pp"] {
            assert_eq!(bad.parse::<AgentDescriptor>(), Err(AgentError::MalformedName(bad.into())), "{bad}");
        }
        assert!(AgentDescriptor::new("pp", Some("s4"), None).is_err());
    }

    #[test]
    fn registry_entries() {
        let f = resolve_agent("pp_fast").unwrap();
        assert_eq!(f.parameters["target_speed"], 8.0);
        assert_eq!(f.parameters["lookahead"], 6.0);
        let f = resolve_agent("pp_fast_s2").unwrap();
        assert!((f.parameters["target_speed"] - 8.0 * 1.04).abs() < 1e-12);
        assert!((f.parameters["lookahead"] - 6.0 * 0.98).abs() < 1e-12);
        assert!(matches!(resolve_agent("Neat Neat"), Err(AgentError::MalformedName(_))));
        assert_eq!(resolve_agent("bogus_x").unwrap_err(), AgentError::UnknownAgent("bogus_x".into()));
        assert_eq!(resolve_agent("pp_slow").unwrap_err(), AgentError::UnknownAgent("pp_slow".into()));
        assert_eq!(resolve_agent("noop_s1").unwrap_err(), AgentError::UnknownAgent("noop_s1".into()));
        assert_eq!(resolve_agent("pp").unwrap_err(), AgentError::UnknownAgent("pp".into()));
    }

    #[test]
    fn resolution_is_deterministic() {
        let a = resolve_agent("pp_safe_s7").unwrap();
        let b = resolve_agent("pp_safe_s7").unwrap();
        assert_eq!(a.parameters, b.parameters);
        assert_eq!(a.sensors, b.sensors);
    }

    #[test]
    fn rigs_by_family() {
        let reg = AgentRegistry::builtin();
        let fast = reg.required_rig_for("pp_fast").unwrap();
        let ids: Vec<_> = fast.iter().map(|s| s.sensor_id.as_str()).collect();
        assert_eq!(ids, ["gps", "speed", "imu"]);
        assert_eq!(fast[0].mount, Transform::default());
        let safe = reg.required_rig_for("pp_safe_s1").unwrap();
        assert_eq!(&safe[..3], &fast[..]);
        assert_eq!(safe[3], SensorSpec::bev("bev", 40, 40, 0.5));
        assert!(matches!(reg.required_rig_for("nonexistent_agent"), Err(AgentError::UnknownAgent(_))));
    }

    #[test]
    fn names_are_sorted_and_resolvable() {
        let reg = AgentRegistry::builtin();
        let names = reg.names();
        assert_eq!(names.len(), 1 + 2 * 100);
        assert!(names.windows(2).all(|w| w[0] < w[1]));
        for n in &names {
            assert!(reg.resolve(n).is_ok(), "{n}");
        }
    }

    #[test]
    fn setup_and_lifecycle() {
        let f = resolve_agent("pp_fast").unwrap();
        let cfg = straight_config(&f, 200.0);
        let mut a = PurePursuitAgent::new(PurePursuitParams::for_variant("fast", None).unwrap());
        a.setup(&cfg).unwrap();
        assert_eq!(a.cursor(), Some(0.0));
        let once = a.clone();
        a.setup(&cfg).unwrap();
        assert_eq!(a, once);
        a.run_step(&frame_at(30.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(a.cursor().unwrap() > 0.0);
        a.setup(&cfg).unwrap();
        assert_eq!(a, once);

        a.destroy();
        assert_eq!(a.run_step(&frame_at(0.0, 0.0, 0.0, 0.0)), Err(AgentError::NotInitialized));
        a.destroy();
        a.setup(&cfg).unwrap();
        assert!(a.run_step(&frame_at(0.0, 0.0, 0.0, 0.0)).is_ok());

        let mut empty = cfg.clone();
        empty.dense_route.waypoints.clear();
        assert_eq!(a.setup(&empty), Err(AgentError::RouteEmpty));
    }

    #[test]
    fn steers_straight_when_aligned() {
        let f = resolve_agent("pp_fast").unwrap();
        let mut a = f.instantiate().unwrap();
        a.setup(&straight_config(&f, 200.0)).unwrap();
        let c = a.run_step(&frame_at(10.0, 0.0, 0.0, 2.0)).unwrap();
        assert!(c.steer.abs() < 1e-9);
        // e = 6 m/s, k_p·e = 3 saturates
        assert_eq!(c.throttle, 1.0);
        assert_eq!(c.brake, 0.0);
    }

    #[test]
    fn lookahead_to_the_left_saturates() {
        let p = PurePursuitParams::for_variant("fast", None).unwrap();
        assert_eq!(p.steer_for(FRAC_PI_2), 1.0);
        assert_eq!(p.steer_for(-FRAC_PI_2), -1.0);
        // heading due south on an eastbound route: target lies to the left
        let f = resolve_agent("pp_fast").unwrap();
        let mut a = f.instantiate().unwrap();
        a.setup(&straight_config(&f, 200.0)).unwrap();
        let c = a.run_step(&frame_at(10.0, 0.0, -FRAC_PI_2, 8.0)).unwrap();
        assert_eq!(c.steer, 1.0);
    }

    #[test]
    fn speed_law() {
        let p = PurePursuitParams::for_variant("fast", None).unwrap();
        assert_eq!(p.pedals_for(8.0), (0.0, 0.0));
        assert_eq!(p.pedals_for(7.0), (0.5, 0.0));
        assert_eq!(p.pedals_for(9.0), (0.0, 0.5));
        assert_eq!(p.pedals_for(20.0), (0.0, 1.0));
    }

    #[test]
    fn missing_sensors_are_named() {
        let f = resolve_agent("pp_safe").unwrap();
        let mut a = f.instantiate().unwrap();
        a.setup(&straight_config(&f, 50.0)).unwrap();
        assert_eq!(a.run_step(&frame_at(0.0, 0.0, 0.0, 0.0)), Err(AgentError::MissingSensor("bev".into())));
        let mut fr = frame_at(0.0, 0.0, 0.0, 0.0);
        fr.readings.insert(BEV_ID.into(), Reading::Occupancy(empty_grid()));
        fr.readings.remove(SPEED_ID);
        assert_eq!(a.run_step(&fr), Err(AgentError::MissingSensor("speed".into())));
    }

    #[test]
    fn safe_variant_brakes_for_obstacles_ahead_only() {
        let f = resolve_agent("pp_safe").unwrap();
        let mut a = f.instantiate().unwrap();
        a.setup(&straight_config(&f, 100.0)).unwrap();
        let mut grid = empty_grid();
        // cell roughly 6 m ahead
        grid.cells[(32 * 40 + 20) as usize] = CellState::Occupied;
        let mut fr = frame_at(0.0, 0.0, 0.0, 3.0);
        fr.readings.insert(BEV_ID.into(), Reading::Occupancy(grid.clone()));
        let c = a.run_step(&fr).unwrap();
        assert_eq!((c.throttle, c.brake), (0.0, 1.0));

        let mut behind = empty_grid();
        behind.cells[(8 * 40 + 20) as usize] = CellState::Occupied;
        fr.readings.insert(BEV_ID.into(), Reading::Occupancy(behind));
        let c = a.run_step(&fr).unwrap();
        assert!(c.throttle > 0.0 && c.brake == 0.0);
    }

    #[test]
    fn gnss_outside_origin_range_is_agent_error() {
        let f = resolve_agent("pp_fast").unwrap();
        let mut a = f.instantiate().unwrap();
        let mut cfg = straight_config(&f, 50.0);
        cfg.geo_route.origin.ref_latitude = 90.0;
        a.setup(&cfg).unwrap();
        let mut fr = frame_at(0.0, 0.0, 0.0, 0.0);
        fr.readings.insert(GNSS_ID.into(), Reading::Gnss(GeoLocation::default()));
        assert!(matches!(a.run_step(&fr), Err(AgentError::Failed(_))));
    }

    proptest! {
        #[test]
        fn name_round_trip(family in "[a-z][a-z0-9]{0,6}", variant in proptest::option::of("[a-z][a-z0-9]{0,6}"), seed in proptest::option::of(1u8..=99)) {
            let d = AgentDescriptor { family, variant, seed };
            prop_assume!(d.variant.as_deref().is_none_or(|v| !looks_like_seed(v)));
            prop_assert_eq!(d.render().parse::<AgentDescriptor>().unwrap(), d.clone());
            prop_assert_eq!(d.render().parse::<AgentDescriptor>().unwrap().render(), d.render());
        }

        #[test]
        fn steer_sign_follows_alpha(alpha in -1.5f64..1.5) {
            let p = PurePursuitParams::for_variant("safe", Some(3)).unwrap();
            let s = p.steer_for(alpha);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(s.signum(), if alpha == 0.0 { s.signum() } else { alpha.signum() });
        }

        #[test]
        fn every_action_validates(x in -20.0f64..220.0, y in -15.0f64..15.0, yaw in -PI..PI, v in 0.0f64..30.0, name in prop::sample::select(vec!["pp_fast", "pp_safe", "pp_fast_s17", "pp_safe_s99", "noop"])) {
            let f = resolve_agent(name).unwrap();
            let mut a = f.instantiate().unwrap();
            a.setup(&straight_config(&f, 200.0)).unwrap();
            let mut fr = frame_at(x, y, yaw, v);
            fr.readings.insert(BEV_ID.into(), Reading::Occupancy(empty_grid()));
            let c = a.run_step(&fr).unwrap();
            prop_assert_eq!(c.validate(), Ok(c));
        }
    }
}
