//! Trip parsing, cleaning, simplification, and kinematic feature primitives.
//!
//! Trips are GPS polylines sampled on a fixed 15 s grid: point `k` of a trip
//! starting at `start_ts` carries the implicit timestamp `start_ts + 15 k`,
//! and a completed trip of `n` points lasted `15 (n - 1)` seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, GeoPoint};

/// Seconds between consecutive GPS updates.
pub const SAMPLE_INTERVAL_S: i64 = 15;

/// Suffix windows (meters) over which recent speed and acceleration are
/// computed.
pub const DEFAULT_SPEED_WINDOWS_M: [f64; 5] = [10.0, 20.0, 50.0, 100.0, 200.0];

/// Speed limits (km/h) used to flag trips with missing GPS updates.
pub const DEFAULT_SPEED_LIMITS_KMH: [f64; 4] = [100.0, 120.0, 140.0, 160.0];

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("malformed polyline: {0}")]
    PolylineParse(String),
    #[error("operation needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

/// How the trip was requested: A = dispatch central, B = stand, C = street.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallType {
    A,
    B,
    C,
}

/// Calendar classification from the source data: A = workday, B = holiday,
/// C = day before a holiday.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DayType {
    A,
    B,
    C,
}

impl std::str::FromStr for CallType {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(CallType::A),
            "B" => Ok(CallType::B),
            "C" => Ok(CallType::C),
            other => Err(TrajectoryError::PolylineParse(format!("bad call type {other:?}"))),
        }
    }
}

impl std::str::FromStr for DayType {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(DayType::A),
            "B" => Ok(DayType::B),
            "C" => Ok(DayType::C),
            other => Err(TrajectoryError::PolylineParse(format!("bad day type {other:?}"))),
        }
    }
}

/// One historical taxi journey with context fields and its polyline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawTrip {
    pub trip_id: String,
    pub call_type: CallType,
    pub origin_call: Option<u64>,
    pub origin_stand: Option<u64>,
    pub taxi_id: u64,
    pub start_ts: i64,
    pub day_type: DayType,
    /// Missing-data flag as ingested. Known to be unreliable in the source
    /// data; kept for reporting, never used to filter.
    pub missing_flag: bool,
    pub polyline: Vec<GeoPoint>,
}

impl RawTrip {
    /// Implicit timestamp of point `k` on the 15 s sampling grid.
    pub fn point_ts(&self, k: usize) -> i64 {
        self.start_ts + SAMPLE_INTERVAL_S * k as i64
    }

    /// Timestamp of the last point; equals `start_ts` for trips with < 2 points.
    pub fn end_ts(&self) -> i64 {
        self.start_ts + SAMPLE_INTERVAL_S * (self.polyline.len().saturating_sub(1)) as i64
    }

    /// Final destination, when the trip has any points.
    pub fn destination(&self) -> Option<GeoPoint> {
        self.polyline.last().copied()
    }
}

/// A trip truncated at a cut-off timestamp; the unit of prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialTrip {
    pub trip_id: String,
    pub call_type: CallType,
    pub origin_call: Option<u64>,
    pub origin_stand: Option<u64>,
    pub taxi_id: u64,
    pub start_ts: i64,
    pub day_type: DayType,
    /// Observed prefix of the full polyline.
    pub points: Vec<GeoPoint>,
    pub cutoff_ts: i64,
}

impl PartialTrip {
    /// Seconds between trip start and the cut-off. Nonnegative by
    /// construction in `truncate_at_cutoff`.
    pub fn elapsed_s(&self) -> i64 {
        self.cutoff_ts - self.start_ts
    }

    pub fn n_observed(&self) -> usize {
        self.points.len()
    }

    /// Seconds covered by the observed prefix on the sampling grid.
    pub fn observed_span_s(&self) -> i64 {
        SAMPLE_INTERVAL_S * (self.points.len().saturating_sub(1)) as i64
    }
}

/// Heading of the observed prefix relative to a fixed city-center point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    TowardCenter,
    AwayFromCenter,
}

/// Kinematic summary of an observed prefix.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Path length: sum of haversine over consecutive point pairs.
    pub traveled_km: f64,
    /// Straight-line haversine between first and last observed points.
    pub first_last_km: f64,
    /// traveled / first_last with a 1e-6 km floor on the denominator;
    /// defined as 1 for trips that have not moved.
    pub shape_complexity: f64,
    pub direction: Direction,
    /// (window meters, km/h) for each configured suffix window.
    pub speeds_last_d: Vec<(f64, f64)>,
    /// (window meters, km/h per second) for each configured suffix window.
    pub accel_last_d: Vec<(f64, f64)>,
    pub overall_speed_kmh: f64,
    pub n_points: usize,
    /// (speed limit km/h, any consecutive pair exceeded it).
    pub missing_by_vhat: Vec<(f64, bool)>,
}

/// Parses the source polyline field: a bracketed JSON array of
/// `[longitude, latitude]` pairs. Output preserves order and swaps into
/// (lat, lon).
pub fn parse_polyline(text: &str) -> Result<Vec<GeoPoint>, TrajectoryError> {
    let pairs: Vec<[f64; 2]> =
        serde_json::from_str(text).map_err(|e| TrajectoryError::PolylineParse(e.to_string()))?;
    pairs
        .iter()
        .map(|&[lon, lat]| {
            GeoPoint::new(lat, lon).map_err(|e| TrajectoryError::PolylineParse(e.to_string()))
        })
        .collect()
}

/// Serializes points back to the source format (`[[lon, lat], ...]`).
/// `parse_polyline` then `serialize_polyline` round-trips exactly.
pub fn serialize_polyline(points: &[GeoPoint]) -> String {
    let pairs: Vec<[f64; 2]> = points.iter().map(|p| [p.lon, p.lat]).collect();
    serde_json::to_string(&pairs).expect("serializing f64 pairs cannot fail")
}

/// True iff any consecutive pair implies a speed above `v_hat_kmh` on the
/// 15 s grid. Fewer than 2 points gives no evidence and returns false.
pub fn detect_missing_updates(points: &[GeoPoint], v_hat_kmh: f64) -> bool {
    const PAIRS_PER_HOUR: f64 = 3600.0 / SAMPLE_INTERVAL_S as f64;
    points
        .windows(2)
        .any(|w| haversine_km(w[0], w[1]) * PAIRS_PER_HOUR > v_hat_kmh)
}

/// Perpendicular distance from `p` to the line through `a` and `b`, all in
/// raw degree coordinates. Falls back to point distance when the chord is
/// degenerate.
fn perp_distance_deg(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let norm = (dx * dx + dy * dy).sqrt();
    if norm == 0.0 {
        let (ex, ey) = (p.lon - a.lon, p.lat - a.lat);
        return (ex * ex + ey * ey).sqrt();
    }
    ((p.lon - a.lon) * dy - (p.lat - a.lat) * dx).abs() / norm
}

/// Ramer-Douglas-Peucker simplification in raw degree space.
///
/// Keeps the first and last points; a point survives iff it is the farthest
/// point of some recursion chord and lies more than `epsilon_deg` from it.
/// Every removed point ends up within `epsilon_deg` of the chord between
/// its surrounding kept points. Inputs with < 3 points are returned as is.
pub fn rdp_simplify(points: &[GeoPoint], epsilon_deg: f64) -> Vec<GeoPoint> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut ranges = vec![(0_usize, points.len() - 1)];
    while let Some((lo, hi)) = ranges.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo + 1, -1.0_f64);
        for i in lo + 1..hi {
            let d = perp_distance_deg(points[i], points[lo], points[hi]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > epsilon_deg {
            keep[best] = true;
            ranges.push((lo, best));
            ranges.push((best, hi));
        }
    }
    points
        .iter()
        .zip(&keep)
        .filter_map(|(&p, &k)| k.then_some(p))
        .collect()
}

/// Start index of the minimal point suffix whose traveled length reaches
/// `d_meters`: the largest `j` such that the path from point `j` to the end
/// spans at least `d_meters` (0, the whole slice, when the trip is shorter
/// than that). `d_meters = 0` selects the single last point.
pub fn suffix_start_for_meters(points: &[GeoPoint], d_meters: f64) -> usize {
    if points.is_empty() {
        return 0;
    }
    let d_km = d_meters / 1000.0;
    let mut acc = 0.0;
    let mut j = points.len() - 1;
    loop {
        if acc >= d_km {
            return j;
        }
        if j == 0 {
            return 0;
        }
        acc += haversine_km(points[j - 1], points[j]);
        j -= 1;
    }
}

/// Kinematics over the observed prefix with explicit window sets.
pub fn compute_kinematics_with(
    pt: &PartialTrip,
    center: GeoPoint,
    speed_windows_m: &[f64],
    speed_limits_kmh: &[f64],
) -> Kinematics {
    let points = &pt.points;
    let n = points.len();
    let traveled_km: f64 = points.windows(2).map(|w| haversine_km(w[0], w[1])).sum();
    let (first_last_km, direction) = if n == 0 {
        (0.0, Direction::TowardCenter)
    } else {
        let (first, last) = (points[0], points[n - 1]);
        let dir = if haversine_km(center, last) <= haversine_km(center, first) {
            Direction::TowardCenter
        } else {
            Direction::AwayFromCenter
        };
        (haversine_km(first, last), dir)
    };
    let shape_complexity = if traveled_km == 0.0 {
        1.0
    } else {
        traveled_km / first_last_km.max(1e-6)
    };
    let overall_speed_kmh = if n >= 2 {
        traveled_km / (SAMPLE_INTERVAL_S as f64 * (n - 1) as f64 / 3600.0)
    } else {
        0.0
    };

    let mut speeds_last_d = Vec::with_capacity(speed_windows_m.len());
    let mut accel_last_d = Vec::with_capacity(speed_windows_m.len());
    for &d in speed_windows_m {
        let start = suffix_start_for_meters(points, d);
        let win = &points[start..];
        if win.len() < 2 {
            speeds_last_d.push((d, 0.0));
            accel_last_d.push((d, 0.0));
            continue;
        }
        let win_km: f64 = win.windows(2).map(|w| haversine_km(w[0], w[1])).sum();
        let win_s = SAMPLE_INTERVAL_S as f64 * (win.len() - 1) as f64;
        speeds_last_d.push((d, win_km / (win_s / 3600.0)));
        let seg_kmh = |a: GeoPoint, b: GeoPoint| haversine_km(a, b) / (SAMPLE_INTERVAL_S as f64 / 3600.0);
        let first_seg = seg_kmh(win[0], win[1]);
        let last_seg = seg_kmh(win[win.len() - 2], win[win.len() - 1]);
        accel_last_d.push((d, (last_seg - first_seg) / win_s));
    }

    let missing_by_vhat = speed_limits_kmh
        .iter()
        .map(|&v| (v, detect_missing_updates(points, v)))
        .collect();

    Kinematics {
        traveled_km,
        first_last_km,
        shape_complexity,
        direction,
        speeds_last_d,
        accel_last_d,
        overall_speed_kmh,
        n_points: n,
        missing_by_vhat,
    }
}

/// Kinematics with the default window sets.
pub fn compute_kinematics(pt: &PartialTrip, center: GeoPoint) -> Kinematics {
    compute_kinematics_with(pt, center, &DEFAULT_SPEED_WINDOWS_M, &DEFAULT_SPEED_LIMITS_KMH)
}

/// Truncates a trip at a cut-off timestamp.
///
/// Returns `Some` iff the trip is ongoing at the cut-off:
/// `start_ts <= cutoff_ts < start_ts + 15 (n - 1)`. The observed prefix
/// holds every point with implicit timestamp <= the cut-off, so it is
/// always nonempty and never the whole polyline, and the remaining time
/// `15 (n - 1) - 15 (k_obs - 1)` is strictly positive.
pub fn truncate_at_cutoff(trip: &RawTrip, cutoff_ts: i64) -> Option<PartialTrip> {
    if cutoff_ts < trip.start_ts || cutoff_ts >= trip.end_ts() {
        return None;
    }
    let k_max = ((cutoff_ts - trip.start_ts) / SAMPLE_INTERVAL_S) as usize;
    Some(PartialTrip {
        trip_id: trip.trip_id.clone(),
        call_type: trip.call_type,
        origin_call: trip.origin_call,
        origin_stand: trip.origin_stand,
        taxi_id: trip.taxi_id,
        start_ts: trip.start_ts,
        day_type: trip.day_type,
        points: trip.polyline[..=k_max].to_vec(),
        cutoff_ts,
    })
}

/// Total trip duration on the sampling grid: `15 (n - 1)` seconds.
pub fn total_travel_time_s(trip: &RawTrip) -> Result<i64, TrajectoryError> {
    let n = trip.polyline.len();
    if n < 2 {
        return Err(TrajectoryError::TooFewPoints { needed: 2, got: n });
    }
    Ok(SAMPLE_INTERVAL_S * (n as i64 - 1))
}

/// Weekday of a unix timestamp in UTC, 0 = Monday .. 6 = Sunday.
pub fn day_of_week_utc(ts: i64) -> u32 {
    use chrono::{DateTime, Datelike};
    DateTime::from_timestamp(ts, 0).map_or(0, |dt| dt.weekday().num_days_from_monday())
}

/// Hour of a unix timestamp in UTC, 0..=23.
pub fn hour_of_day_utc(ts: i64) -> u32 {
    use chrono::{DateTime, Timelike};
    DateTime::from_timestamp(ts, 0).map_or(0, |dt| dt.hour())
}
