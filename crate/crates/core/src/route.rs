//! Route files, dense interpolation, geodetic conversion and progress
//! tracking.
//!
//! A route file is a small XML document:
//!
//! ```xml
//! <route id="straight200" town="Straight200">
//!   <waypoint x="0" y="0" yaw="0"/>
//!   <waypoint x="200" y="0" yaw="0"/>
//! </route>
//! ```
//!
//! Coordinates are meters in the map frame; `yaw` is in degrees in the file
//! and radians everywhere else.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::project_onto_segment;
use crate::model::{normalize_yaw, wrap_angle, GeoLocation, Transform};

/// Mean Earth radius used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_SPACING_M: f64 = 1.0;
/// Heading change separating LANE_FOLLOW/STRAIGHT from LEFT/RIGHT.
pub const TURN_THRESHOLD_RAD: f64 = 0.1;
const MIN_KEYPOINT_GAP_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("line {line}: {reason}")]
    Parse { line: u32, reason: String },
    #[error("route has fewer than two waypoints")]
    EmptyRoute,
    #[error("waypoint {index} coincides with the previous waypoint")]
    DuplicateConsecutivePoint { index: usize },
    #[error("spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("geo origin is degenerate (cos(latitude) < 1e-6)")]
    OriginDegenerate,
    #[error("invalid geo origin: {0}")]
    InvalidOrigin(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteFile {
    pub route_id: String,
    pub town: String,
    pub keypoints: Vec<Transform>,
}

impl RouteFile {
    pub fn new(
        route_id: impl Into<String>,
        town: impl Into<String>,
        keypoints: Vec<Transform>,
    ) -> Result<Self, RouteError> {
        check_keypoints(&keypoints)?;
        Ok(Self {
            route_id: route_id.into(),
            town: town.into(),
            keypoints,
        })
    }
}

fn check_keypoints(keypoints: &[Transform]) -> Result<(), RouteError> {
    if keypoints.len() < 2 {
        return Err(RouteError::EmptyRoute);
    }
    for (i, w) in keypoints.windows(2).enumerate() {
        if w[0].distance_to(&w[1]) <= MIN_KEYPOINT_GAP_M {
            return Err(RouteError::DuplicateConsecutivePoint { index: i + 1 });
        }
    }
    Ok(())
}

pub fn parse_route(text: &str) -> Result<RouteFile, RouteError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| RouteError::Parse {
        line: e.pos().row,
        reason: e.to_string(),
    })?;
    let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row;
    let parse_err = |node: roxmltree::Node, reason: String| RouteError::Parse {
        line: line_of(node),
        reason,
    };

    let root = doc.root_element();
    if root.tag_name().name() != "route" {
        return Err(parse_err(
            root,
            format!("expected root element <route>, found <{}>", root.tag_name().name()),
        ));
    }
    let attr = |node: roxmltree::Node, name: &str| {
        node.attribute(name)
            .map(str::to_owned)
            .ok_or_else(|| parse_err(node, format!("missing attribute `{name}`")))
    };
    let route_id = attr(root, "id")?;
    let town = attr(root, "town")?;

    let mut keypoints = Vec::new();
    for child in root.children().filter(|n| n.is_element()) {
        if child.tag_name().name() != "waypoint" {
            return Err(parse_err(
                child,
                format!("unexpected element <{}>", child.tag_name().name()),
            ));
        }
        let number = |name: &str| -> Result<f64, RouteError> {
            let raw = attr(child, name)?;
            match raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(child, format!("`{name}` is not a finite decimal: {raw:?}"))),
            }
        };
        let (x, y, yaw_deg) = (number("x")?, number("y")?, number("yaw")?);
        keypoints.push(Transform::new(x, y, yaw_deg.to_radians()));
    }
    if keypoints.is_empty() {
        return Err(RouteError::EmptyRoute);
    }
    check_keypoints(&keypoints)?;
    Ok(RouteFile {
        route_id,
        town,
        keypoints,
    })
}

fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('"', "&quot;")
}

pub fn serialize_route(route: &RouteFile) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<route id=\"{}\" town=\"{}\">",
        escape_attr(&route.route_id),
        escape_attr(&route.town)
    );
    for k in &route.keypoints {
        let _ = writeln!(
            out,
            "  <waypoint x=\"{:?}\" y=\"{:?}\" yaw=\"{:?}\"/>",
            k.x,
            k.y,
            k.yaw.to_degrees()
        );
    }
    out.push_str("</route>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub transform: Transform,
    /// Meters along the polyline from the first waypoint.
    pub arc_length: f64,
    /// True for interior source keypoints where two segments meet.
    pub junction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRoute {
    pub waypoints: Vec<RoutePoint>,
    pub spacing: f64,
}

impl DenseRoute {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.arc_length)
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.waypoints
            .iter()
            .map(|w| (w.transform.x, w.transform.y))
            .collect()
    }

    /// Pose at `arc` meters along the route, clamped to the route ends.
    pub fn pose_at(&self, arc: f64) -> Transform {
        let wps = &self.waypoints;
        match wps.len() {
            0 => return Transform::default(),
            1 => return wps[0].transform,
            _ => {}
        }
        if arc <= 0.0 {
            return wps[0].transform;
        }
        if arc >= self.total_length() {
            return wps[wps.len() - 1].transform;
        }
        // first index whose arc_length exceeds `arc`
        let hi = wps.partition_point(|w| w.arc_length <= arc);
        let (a, b) = (&wps[hi - 1], &wps[hi]);
        let t = (arc - a.arc_length) / (b.arc_length - a.arc_length);
        Transform {
            x: a.transform.x + t * (b.transform.x - a.transform.x),
            y: a.transform.y + t * (b.transform.y - a.transform.y),
            yaw: a.transform.yaw,
        }
    }
}

/// Piecewise-linear densification: each keypoint segment of length `d` is
/// split into `ceil(d / spacing)` equal parts.
pub fn interpolate_route(route: &RouteFile, spacing: f64) -> Result<DenseRoute, RouteError> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(RouteError::InvalidSpacing(spacing));
    }
    check_keypoints(&route.keypoints)?;

    let kps = &route.keypoints;
    let mut waypoints = Vec::new();
    let mut arc = 0.0;
    let mut heading = 0.0;
    for (seg, w) in kps.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let d = dx.hypot(dy);
        heading = dy.atan2(dx);
        let parts = (d / spacing).ceil().max(1.0) as usize;
        for k in 0..parts {
            let f = k as f64 / parts as f64;
            waypoints.push(RoutePoint {
                transform: Transform {
                    x: a.x + f * dx,
                    y: a.y + f * dy,
                    yaw: heading,
                },
                arc_length: arc + f * d,
                junction: k == 0 && seg > 0,
            });
        }
        arc += d;
    }
    let last = kps[kps.len() - 1];
    waypoints.push(RoutePoint {
        transform: Transform {
            x: last.x,
            y: last.y,
            yaw: heading,
        },
        arc_length: arc,
        junction: false,
    });
    Ok(DenseRoute { waypoints, spacing })
}

/// Geographic anchor of a map's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub ref_latitude: f64,
    pub ref_longitude: f64,
    pub ref_altitude: f64,
}

impl GeoOrigin {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, RouteError> {
        let origin = Self {
            ref_latitude: latitude,
            ref_longitude: longitude,
            ref_altitude: altitude,
        };
        origin.validate()?;
        Ok(origin)
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        if !(self.ref_latitude.abs() < 89.0) {
            return Err(RouteError::InvalidOrigin(format!(
                "|latitude| must be below 89°, got {}",
                self.ref_latitude
            )));
        }
        if !(self.ref_longitude.abs() <= 180.0) {
            return Err(RouteError::InvalidOrigin(format!(
                "|longitude| must be at most 180°, got {}",
                self.ref_longitude
            )));
        }
        if !self.ref_altitude.is_finite() {
            return Err(RouteError::InvalidOrigin("altitude is not finite".into()));
        }
        Ok(())
    }

    fn cos_lat(&self) -> Result<f64, RouteError> {
        let c = self.ref_latitude.to_radians().cos();
        if c < 1e-6 || !c.is_finite() {
            Err(RouteError::OriginDegenerate)
        } else {
            Ok(c)
        }
    }

    /// Map-frame point to latitude/longitude (equirectangular, spherical).
    pub fn to_geo(&self, x: f64, y: f64) -> Result<GeoLocation, RouteError> {
        let cos_lat = self.cos_lat()?;
        Ok(GeoLocation {
            latitude: self.ref_latitude + (y / EARTH_RADIUS_M).to_degrees(),
            longitude: wrap_degrees(
                self.ref_longitude + (x / (EARTH_RADIUS_M * cos_lat)).to_degrees(),
            ),
            altitude: self.ref_altitude,
        })
    }

    /// Inverse of [`GeoOrigin::to_geo`]; yaw of the result is zero.
    pub fn from_geo(&self, point: &GeoLocation) -> Result<Transform, RouteError> {
        let cos_lat = self.cos_lat()?;
        let dlon = wrap_degrees(point.longitude - self.ref_longitude);
        Ok(Transform {
            x: dlon.to_radians() * EARTH_RADIUS_M * cos_lat,
            y: (point.latitude - self.ref_latitude).to_radians() * EARTH_RADIUS_M,
            yaw: 0.0,
        })
    }
}

/// Wraps degrees into (-180, 180].
fn wrap_degrees(deg: f64) -> f64 {
    if deg > 180.0 {
        deg - 360.0
    } else if deg <= -180.0 {
        deg + 360.0
    } else {
        deg
    }
}

pub fn from_geo(point: &GeoLocation, origin: &GeoOrigin) -> Result<Transform, RouteError> {
    origin.from_geo(point)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoadOption {
    LaneFollow,
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoWaypoint {
    pub location: GeoLocation,
    pub road_option: RoadOption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRoute {
    pub origin: GeoOrigin,
    pub geopoints: Vec<GeoWaypoint>,
}

impl GeoRoute {
    pub fn len(&self) -> usize {
        self.geopoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geopoints.is_empty()
    }
}

pub fn to_geo(route: &DenseRoute, origin: &GeoOrigin) -> Result<GeoRoute, RouteError> {
    let mut geopoints = Vec::with_capacity(route.len());
    for (i, wp) in route.waypoints.iter().enumerate() {
        let location = origin.to_geo(wp.transform.x, wp.transform.y)?;
        let road_option = if i == 0 {
            RoadOption::LaneFollow
        } else {
            let turn = wrap_angle(wp.transform.yaw - route.waypoints[i - 1].transform.yaw);
            match (wp.junction, turn) {
                (_, t) if t >= TURN_THRESHOLD_RAD => RoadOption::Left,
                (_, t) if t <= -TURN_THRESHOLD_RAD => RoadOption::Right,
                (true, _) => RoadOption::Straight,
                (false, _) => RoadOption::LaneFollow,
            }
        };
        geopoints.push(GeoWaypoint {
            location,
            road_option,
        });
    }
    Ok(GeoRoute {
        origin: *origin,
        geopoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProgress {
    /// Fraction of the route length covered, in [0, 1].
    pub completion: f64,
    /// Unsigned distance to the route near the cursor.
    pub cross_track: f64,
}

/// Forward-only progress cursor along a dense route.
///
/// Each update projects the position onto the segments starting at the
/// cursor and extending `window` meters of arc beyond it. The cursor only
/// moves forward, so completion never decreases.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressTracker {
    segment: usize,
    arc: f64,
    window: f64,
}

impl ProgressTracker {
    pub const DEFAULT_WINDOW_M: f64 = 50.0;

    pub fn new() -> Self {
        Self::with_window(Self::DEFAULT_WINDOW_M)
    }

    pub fn with_window(window: f64) -> Self {
        Self {
            segment: 0,
            arc: 0.0,
            window,
        }
    }

    pub fn reset(&mut self) {
        self.segment = 0;
        self.arc = 0.0;
    }

    pub fn cursor_arc(&self) -> f64 {
        self.arc
    }

    pub fn update(&mut self, route: &DenseRoute, position: &Transform) -> RouteProgress {
        let wps = &route.waypoints;
        let total = route.total_length();
        if wps.len() < 2 || total <= 0.0 {
            let cross_track = wps
                .first()
                .map_or(0.0, |w| w.transform.distance_to(position));
            return RouteProgress {
                completion: 0.0,
                cross_track,
            };
        }
        let p = (position.x, position.y);
        let limit = self.arc + self.window;
        let mut best: Option<(usize, f64, f64)> = None;
        for i in self.segment..wps.len() - 1 {
            let (a, b) = (&wps[i], &wps[i + 1]);
            if i > self.segment && a.arc_length > limit {
                break;
            }
            let proj = project_onto_segment(
                p,
                (a.transform.x, a.transform.y),
                (b.transform.x, b.transform.y),
            );
            if best.is_none_or(|(_, d, _)| proj.distance < d) {
                let arc = a.arc_length + proj.t * (b.arc_length - a.arc_length);
                best = Some((i, proj.distance, arc));
            }
        }
        let (segment, cross_track, arc) = best.expect("at least one segment searched");
        if arc > self.arc {
            self.arc = arc;
            self.segment = segment;
        }
        RouteProgress {
            completion: (self.arc / total).clamp(0.0, 1.0),
            cross_track,
        }
    }
}

impl Default for ProgressTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Stateless progress query: projects onto the whole route.
pub fn route_progress(route: &DenseRoute, position: &Transform) -> RouteProgress {
    ProgressTracker::with_window(f64::INFINITY).update(route, position)
}

/// Heading of the segment from `a` to `b`.
pub fn bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1).atan2(b.0 - a.0)
}

/// Yaw-normalized heading difference, for callers with finite inputs.
pub fn heading_error(target: f64, current: f64) -> f64 {
    normalize_yaw(target - current).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn route(points: &[(f64, f64)]) -> RouteFile {
        RouteFile::new(
            "r",
            "T",
            points.iter().map(|&(x, y)| Transform::at(x, y)).collect(),
        )
        .unwrap()
    }

    const TWO_POINTS: &str = r#"<route id="r1" town="Town01">
  <waypoint x="0" y="0" yaw="0"/>
  <waypoint x="10" y="0" yaw="0"/>
</route>"#;

    #[test]
    fn parses_minimal_route() {
        let r = parse_route(TWO_POINTS).unwrap();
        assert_eq!(r.route_id, "r1");
        assert_eq!(r.town, "Town01");
        assert_eq!(r.keypoints, vec![Transform::at(0.0, 0.0), Transform::at(10.0, 0.0)]);
    }

    #[test]
    fn yaw_is_converted_from_degrees() {
        let r = parse_route(
            r#"<route id="a" town="b"><waypoint x="0" y="0" yaw="90"/><waypoint x="0" y="5" yaw="-180"/></route>"#,
        )
        .unwrap();
        assert!((r.keypoints[0].yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(r.keypoints[1].yaw, std::f64::consts::PI);
    }

    #[test]
    fn empty_route_is_rejected() {
        assert_eq!(
            parse_route(r#"<route id="a" town="b"></route>"#),
            Err(RouteError::EmptyRoute)
        );
        assert_eq!(
            parse_route(r#"<route id="a" town="b"><waypoint x="1" y="1" yaw="0"/></route>"#),
            Err(RouteError::EmptyRoute)
        );
    }

    #[test]
    fn duplicate_consecutive_point_names_index() {
        let text = r#"<route id="a" town="b">
  <waypoint x="0" y="0" yaw="0"/>
  <waypoint x="5" y="0" yaw="0"/>
  <waypoint x="5" y="0" yaw="0"/>
</route>"#;
        assert_eq!(
            parse_route(text),
            Err(RouteError::DuplicateConsecutivePoint { index: 2 })
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "<route id=\"a\" town=\"b\">\n  <waypoint x=\"0\" y=\"0\" yaw=\"0\"/>\n  <waypoint x=\"zz\" y=\"0\" yaw=\"0\"/>\n</route>";
        match parse_route(text) {
            Err(RouteError::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("`x`"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_route("<route id=\"a\" town=\"b\">\n</wrong>") {
            Err(RouteError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_route("<route id=\"a\" town=\"b\"><trigger/></route>"),
            Err(RouteError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_route("<routes/>"),
            Err(RouteError::Parse { .. })
        ));
        assert!(matches!(
            parse_route("<route town=\"b\"/>"),
            Err(RouteError::Parse { .. })
        ));
    }

    #[test]
    fn serializer_round_trips() {
        let r = RouteFile::new(
            "a&b",
            "T<1>",
            vec![Transform::new(0.5, -3.25, 1.0), Transform::new(100.125, 7.0, -2.5)],
        )
        .unwrap();
        let back = parse_route(&serialize_route(&r)).unwrap();
        assert_eq!(back.route_id, r.route_id);
        assert_eq!(back.town, r.town);
        for (a, b) in back.keypoints.iter().zip(&r.keypoints) {
            assert_eq!((a.x, a.y), (b.x, b.y));
            assert!((a.yaw - b.yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolates_ten_meter_line() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (10.0, 0.0)]), 1.0).unwrap();
        assert_eq!(d.len(), 11);
        for (i, w) in d.waypoints.iter().enumerate() {
            assert_eq!(w.transform.x, i as f64);
            assert_eq!(w.transform.y, 0.0);
            assert_eq!(w.transform.yaw, 0.0);
            assert_eq!(w.arc_length, i as f64);
        }
    }

    #[test]
    fn short_segment_is_not_subdivided() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (0.5, 0.0)]), 1.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.total_length(), 0.5);
    }

    #[test]
    fn interpolates_345_triangle() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (3.0, 4.0)]), 1.0).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.total_length(), 5.0);
        let yaw = 4f64.atan2(3.0);
        assert!(d.waypoints.iter().all(|w| w.transform.yaw == yaw));
        assert_eq!(
            (d.waypoints[5].transform.x, d.waypoints[5].transform.y),
            (3.0, 4.0)
        );
    }

    #[test]
    fn rejects_bad_spacing() {
        let r = route(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(interpolate_route(&r, 0.0), Err(RouteError::InvalidSpacing(0.0)));
        assert!(interpolate_route(&r, f64::NAN).is_err());
    }

    #[test]
    fn pose_at_interpolates() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]), 3.0).unwrap();
        let p = d.pose_at(12.5);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 2.5).abs() < 1e-12);
        assert_eq!(d.pose_at(-1.0).x, 0.0);
        assert_eq!(d.pose_at(1e9).y, 10.0);
    }

    #[test]
    fn geo_examples() {
        let origin = GeoOrigin::new(0.0, 0.0, 0.0).unwrap();
        let g = origin.to_geo(0.0, 0.0).unwrap();
        assert_eq!((g.latitude, g.longitude, g.altitude), (0.0, 0.0, 0.0));

        // one degree of arc on the sphere
        let one_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let g = origin.to_geo(0.0, one_deg).unwrap();
        assert!((g.latitude - 1.0).abs() < 1e-12);
        assert_eq!(g.longitude, 0.0);

        let o60 = GeoOrigin::new(60.0, 0.0, 0.0).unwrap();
        let g = o60.to_geo(one_deg, 0.0).unwrap();
        assert!((g.longitude - 2.0).abs() < 1e-9);
        assert_eq!(g.latitude, 60.0);

        let p = origin
            .from_geo(&GeoLocation {
                latitude: 1.0,
                longitude: 0.0,
                altitude: 0.0,
            })
            .unwrap();
        assert!(p.x.abs() < 1e-9 && (p.y - 111_194.93).abs() < 1e-2);
        assert!((p.y - one_deg).abs() < 1e-3);

        let p = origin.from_geo(&origin.to_geo(0.0, 0.0).unwrap()).unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn origin_validation() {
        assert!(GeoOrigin::new(89.5, 0.0, 0.0).is_err());
        assert!(GeoOrigin::new(0.0, 181.0, 0.0).is_err());
        let degenerate = GeoOrigin {
            ref_latitude: 90.0,
            ref_longitude: 0.0,
            ref_altitude: 0.0,
        };
        assert_eq!(degenerate.to_geo(0.0, 0.0), Err(RouteError::OriginDegenerate));
    }

    #[test]
    fn longitude_wraps_across_antimeridian() {
        let origin = GeoOrigin::new(10.0, 179.99, 0.0).unwrap();
        let g = origin.to_geo(5_000.0, 0.0).unwrap();
        assert!(g.longitude < -179.0);
        let back = origin.from_geo(&g).unwrap();
        assert!((back.x - 5_000.0).abs() < 1e-6);
    }

    #[test]
    fn road_options_follow_turns() {
        let d = interpolate_route(
            &route(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.01), (10.0, 10.0), (20.0, 10.0)]),
            1.0,
        )
        .unwrap();
        let g = to_geo(&d, &GeoOrigin::default()).unwrap();
        assert_eq!(g.len(), d.len());
        let opts: Vec<_> = g.geopoints.iter().map(|p| p.road_option).collect();
        let junctions: Vec<_> = d
            .waypoints
            .iter()
            .enumerate()
            .filter(|(_, w)| w.junction)
            .map(|(i, _)| opts[i])
            .collect();
        assert_eq!(
            junctions,
            vec![RoadOption::Straight, RoadOption::Left, RoadOption::Right]
        );
        let lane_follow = opts.iter().filter(|o| **o == RoadOption::LaneFollow).count();
        assert_eq!(lane_follow, opts.len() - 3);
    }

    #[test]
    fn progress_examples() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (10.0, 0.0)]), 1.0).unwrap();
        let p = route_progress(&d, &Transform::at(0.0, 0.0));
        assert_eq!((p.completion, p.cross_track), (0.0, 0.0));
        let p = route_progress(&d, &Transform::at(10.0, 0.0));
        assert_eq!((p.completion, p.cross_track), (1.0, 0.0));
        let p = route_progress(&d, &Transform::at(5.0, 2.0));
        assert_eq!((p.completion, p.cross_track), (0.5, 2.0));
    }

    #[test]
    fn tracker_never_moves_backwards() {
        let d = interpolate_route(&route(&[(0.0, 0.0), (100.0, 0.0)]), 1.0).unwrap();
        let mut t = ProgressTracker::new();
        assert_eq!(t.update(&d, &Transform::at(40.0, 0.0)).completion, 0.4);
        let back = t.update(&d, &Transform::at(20.0, 1.0));
        assert_eq!(back.completion, 0.4);
        // measured near the cursor, not against the part already driven
        assert!(back.cross_track > 19.0);
        t.reset();
        assert_eq!(t.cursor_arc(), 0.0);
    }

    #[test]
    fn tracker_window_ignores_distant_loop_back() {
        // route returns close to its own start after a long detour
        let d = interpolate_route(
            &route(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0), (0.0, 1.0)]),
            1.0,
        )
        .unwrap();
        let mut t = ProgressTracker::new();
        let p = t.update(&d, &Transform::at(0.5, 0.8));
        assert!(p.completion < 0.01);
    }

    fn arb_route() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 2..=20).prop_filter(
            "distinct consecutive points",
            |pts| pts.windows(2).all(|w| (w[0].0 - w[1].0).hypot(w[0].1 - w[1].1) > 1e-6),
        )
    }

    proptest! {
        #[test]
        fn interpolation_respects_spacing(pts in arb_route(), spacing in 0.1f64..20.0) {
            let d = interpolate_route(&route(&pts), spacing).unwrap();
            let exact: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
            prop_assert!((d.total_length() - exact).abs() <= 1e-9 * exact);
            prop_assert_eq!(d.waypoints[0].arc_length, 0.0);
            for w in d.waypoints.windows(2) {
                prop_assert!(w[1].arc_length > w[0].arc_length);
                prop_assert!(w[0].transform.distance_to(&w[1].transform) <= spacing + 1e-9);
            }
            let last = d.waypoints.last().unwrap().transform;
            prop_assert_eq!((last.x, last.y), *pts.last().unwrap());
        }

        #[test]
        fn progress_is_monotone_along_route(pts in arb_route()) {
            let d = interpolate_route(&route(&pts), 1.0).unwrap();
            let mut t = ProgressTracker::new();
            let mut prev = 0.0;
            for w in &d.waypoints {
                let p = t.update(&d, &w.transform);
                prop_assert!(p.completion >= prev);
                prev = p.completion;
            }
        }

        #[test]
        fn geo_round_trip(x in -10_000.0f64..10_000.0, y in -10_000.0f64..10_000.0,
                          lat in -88.9f64..88.9, lon in -180.0f64..=180.0) {
            let o = GeoOrigin::new(lat, lon, 12.0).unwrap();
            let back = o.from_geo(&o.to_geo(x, y).unwrap()).unwrap();
            prop_assert!((back.x - x).hypot(back.y - y) < 1e-6);
        }

        #[test]
        fn route_file_round_trip(pts in arb_route(), yaws in prop::collection::vec(-3.14f64..3.14, 20)) {
            let kps: Vec<_> = pts.iter().zip(&yaws).map(|(&(x, y), &yaw)| Transform::new(x, y, yaw)).collect();
            let r = RouteFile::new("id", "town", kps).unwrap();
            let back = parse_route(&serialize_route(&r)).unwrap();
            prop_assert_eq!(back.keypoints.len(), r.keypoints.len());
            for (a, b) in back.keypoints.iter().zip(&r.keypoints) {
                prop_assert_eq!((a.x, a.y), (b.x, b.y));
                prop_assert!((a.yaw - b.yaw).abs() < 1e-12);
            }
        }
    }
}
