//! Canonical binary encoding used by the wire protocol and for digests.
//!
//! Fields are written in declaration order. Integers are big-endian,
//! decimals are 8-byte IEEE-754 (big-endian bit pattern), booleans one byte
//! (0/1), strings and sequences a `u32` length followed by the items,
//! options a tag byte (0 = none, 1 = some) followed by the value, enums a
//! tag byte followed by the variant's fields.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agents::{AgentConfig, AgentDescriptor};
use crate::model::{ControlAction, GeoLocation, Transform, VehicleState};
use crate::route::{DenseRoute, GeoOrigin, GeoRoute, GeoWaypoint, RoadOption, RoutePoint};
use crate::sensors::{CellState, ImuReading, OccupancyGrid, Reading, SensorFrame, SensorKind, SensorSpec};
use crate::sim::{Actor, ActorBlueprint, ActorKind, Autopilot, WeatherParams, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of payload")]
    UnexpectedEof,
    #[error("invalid {what} tag {tag}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn i8(&mut self, v: i8) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("sequence longer than u32::MAX"));
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn put<T: Encode + ?Sized>(&mut self, v: &T) {
        v.encode(self);
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEof);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i8(&mut self) -> Result<i8, CodecError> {
        Ok(i8::from_be_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::InvalidTag { what: "bool", tag }),
        }
    }

    /// Sequence length, sanity-checked against the bytes left so a corrupt
    /// prefix cannot trigger a huge allocation.
    pub fn len(&mut self) -> Result<usize, CodecError> {
        let n = self.u32()? as usize;
        if n > self.remaining() {
            return Err(CodecError::UnexpectedEof);
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.len()?;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, CodecError> {
        T::decode(self)
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;
}

pub fn encode_to_vec<T: Encode + ?Sized>(v: &T) -> Vec<u8> {
    let mut w = Writer::new();
    v.encode(&mut w);
    w.into_bytes()
}

/// Decodes a complete payload, rejecting trailing bytes.
pub fn decode_exact<T: Decode>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut r = Reader::new(bytes);
    let v = T::decode(&mut r)?;
    r.finish()?;
    Ok(v)
}

macro_rules! primitive {
    ($ty:ty, $method:ident) => {
        impl Encode for $ty {
            fn encode(&self, w: &mut Writer) {
                w.$method(*self);
            }
        }
        impl Decode for $ty {
            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                r.$method()
            }
        }
    };
}

primitive!(u8, u8);
primitive!(u16, u16);
primitive!(u32, u32);
primitive!(u64, u64);
primitive!(i8, i8);
primitive!(f64, f64);
primitive!(bool, bool);

impl Encode for () {
    fn encode(&self, _w: &mut Writer) {}
}

impl Decode for () {
    fn decode(_r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(())
    }
}

impl Encode for str {
    fn encode(&self, w: &mut Writer) {
        w.str(self);
    }
}

impl Encode for String {
    fn encode(&self, w: &mut Writer) {
        w.str(self);
    }
}

impl Decode for String {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.string()
    }
}

impl<T: Encode> Encode for [T] {
    fn encode(&self, w: &mut Writer) {
        w.len(self.len());
        for item in self {
            item.encode(w);
        }
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode(&self, w: &mut Writer) {
        self.as_slice().encode(w);
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len()?;
        (0..n).map(|_| T::decode(r)).collect()
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, w: &mut Writer) {
        match self {
            None => w.u8(0),
            Some(v) => {
                w.u8(1);
                v.encode(w);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            tag => Err(CodecError::InvalidTag { what: "option", tag }),
        }
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode(&self, w: &mut Writer) {
        self.0.encode(w);
        self.1.encode(w);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?))
    }
}

impl<V: Encode> Encode for BTreeMap<String, V> {
    fn encode(&self, w: &mut Writer) {
        w.len(self.len());
        for (k, v) in self {
            w.str(k);
            v.encode(w);
        }
    }
}

impl<V: Decode> Decode for BTreeMap<String, V> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            let v = V::decode(r)?;
            out.insert(k, v);
        }
        Ok(out)
    }
}

/// Plain field-by-field records.
macro_rules! record {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Encode for $ty {
            fn encode(&self, w: &mut Writer) {
                $( self.$field.encode(w); )*
            }
        }
        impl Decode for $ty {
            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                Ok(Self { $( $field: r.get()?, )* })
            }
        }
    };
}

record!(Transform { x, y, yaw });
record!(VehicleState { transform, speed, yaw_rate, frame, sim_time });
record!(ControlAction { throttle, steer, brake, hand_brake, reverse, manual_gear_shift, gear });
record!(GeoLocation { latitude, longitude, altitude });
record!(GeoOrigin { ref_latitude, ref_longitude, ref_altitude });
record!(ActorBlueprint { kind, length, width, max_wheel_angle, wheelbase, max_accel, max_brake_decel, drag });
record!(RoutePoint { transform, arc_length, junction });
record!(DenseRoute { waypoints, spacing });
record!(Autopilot { route, speed, arc });
record!(Actor { id, blueprint, state, control, pending_control, autopilot });
record!(WeatherParams { cloudiness, precipitation, fog_density, sun_altitude });
record!(WorldState { frame, fixed_delta, actors, weather, collisions_this_frame, off_road, seed });
record!(SensorSpec { sensor_id, kind, mount, noise_stddev });
record!(ImuReading { accel_x, accel_y, yaw_rate, compass });
record!(SensorFrame { frame, sim_time, readings });
record!(GeoWaypoint { location, road_option });
record!(GeoRoute { origin, geopoints });
record!(AgentConfig { descriptor, geo_route, dense_route, parameters });

/// Fieldless enums encoded as a single tag byte.
macro_rules! tagged {
    ($ty:ident, $what:literal, { $($variant:ident = $tag:literal),* $(,)? }) => {
        impl Encode for $ty {
            fn encode(&self, w: &mut Writer) {
                w.u8(match self { $( $ty::$variant => $tag, )* });
            }
        }
        impl Decode for $ty {
            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                match r.u8()? {
                    $( $tag => Ok($ty::$variant), )*
                    tag => Err(CodecError::InvalidTag { what: $what, tag }),
                }
            }
        }
    };
}

tagged!(ActorKind, "actor kind", { Vehicle = 0, Pedestrian = 1, StaticProp = 2 });
tagged!(RoadOption, "road option", { LaneFollow = 0, Left = 1, Right = 2, Straight = 3 });

impl Encode for SensorKind {
    fn encode(&self, w: &mut Writer) {
        match *self {
            SensorKind::Gnss => w.u8(0),
            SensorKind::Imu => w.u8(1),
            SensorKind::Speedometer => w.u8(2),
            SensorKind::BevOccupancy {
                cells_x,
                cells_y,
                meters_per_cell,
            } => {
                w.u8(3);
                w.u32(cells_x);
                w.u32(cells_y);
                w.f64(meters_per_cell);
            }
        }
    }
}

impl Decode for SensorKind {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(SensorKind::Gnss),
            1 => Ok(SensorKind::Imu),
            2 => Ok(SensorKind::Speedometer),
            3 => Ok(SensorKind::BevOccupancy {
                cells_x: r.u32()?,
                cells_y: r.u32()?,
                meters_per_cell: r.f64()?,
            }),
            tag => Err(CodecError::InvalidTag { what: "sensor kind", tag }),
        }
    }
}

// Cells travel as one ASCII symbol each, row-major.
impl Encode for OccupancyGrid {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.cells_x);
        w.u32(self.cells_y);
        w.f64(self.meters_per_cell);
        let symbols: Vec<u8> = self.cells.iter().map(|c| c.symbol() as u8).collect();
        w.bytes(&symbols);
    }
}

impl Decode for OccupancyGrid {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let cells_x = r.u32()?;
        let cells_y = r.u32()?;
        let meters_per_cell = r.f64()?;
        let cells = r
            .bytes()?
            .iter()
            .map(|&b| CellState::from_symbol(b as char).ok_or(CodecError::InvalidTag { what: "cell", tag: b }))
            .collect::<Result<Vec<_>, _>>()?;
        if cells.len() as u64 != u64::from(cells_x) * u64::from(cells_y) {
            return Err(CodecError::Invalid("grid size does not match dimensions".into()));
        }
        Ok(Self {
            cells_x,
            cells_y,
            meters_per_cell,
            cells,
        })
    }
}

impl Encode for Reading {
    fn encode(&self, w: &mut Writer) {
        match self {
            Reading::Gnss(g) => {
                w.u8(0);
                g.encode(w);
            }
            Reading::Imu(i) => {
                w.u8(1);
                i.encode(w);
            }
            Reading::Speed(s) => {
                w.u8(2);
                w.f64(*s);
            }
            Reading::Occupancy(g) => {
                w.u8(3);
                g.encode(w);
            }
        }
    }
}

impl Decode for Reading {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(Reading::Gnss(r.get()?)),
            1 => Ok(Reading::Imu(r.get()?)),
            2 => Ok(Reading::Speed(r.f64()?)),
            3 => Ok(Reading::Occupancy(r.get()?)),
            tag => Err(CodecError::InvalidTag { what: "reading", tag }),
        }
    }
}

// Descriptors travel as their rendered name.
impl Encode for AgentDescriptor {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.render());
    }
}

impl Decode for AgentDescriptor {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let name = r.string()?;
        name.parse()
            .map_err(|e: crate::agents::AgentError| CodecError::Invalid(e.to_string()))
    }
}
