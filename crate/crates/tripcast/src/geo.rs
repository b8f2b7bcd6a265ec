//! Geodesic distance, geohash encoding, and the approximate spatial index
//! used for candidate-trip retrieval.
//!
//! Geohash cells are represented by their base-32 code strings; the code
//! length is the cell precision. Bounding boxes are half-open (lower edges
//! inclusive) so every point maps to exactly one cell, with the global top
//! edges (lat 90, lon 180) folded into the topmost cells.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth radius in kilometers. Fixed; all great-circle math uses this value.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Geohash base-32 alphabet (digits plus lowercase letters minus a, i, l, o).
const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Largest supported geohash precision (characters).
pub const MAX_PRECISION: usize = 12;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("coordinate out of range or non-finite: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("geohash precision {0} outside [1, {MAX_PRECISION}]")]
    InvalidPrecision(usize),
    #[error("invalid geohash code {0:?}")]
    InvalidGeohash(String),
    #[error("query radius must be positive, got {0}")]
    InvalidRadius(f64),
}

/// A WGS-style latitude/longitude pair in degrees, validated on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting non-finite values and out-of-range degrees.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Great-circle distance in kilometers between two points.
///
/// Uses the haversine form `a = sin^2(dlat/2) + cos(lat1) cos(lat2) sin^2(dlon/2)`
/// with the two-argument arctangent `2 r atan2(sqrt(a), sqrt(1 - a))`, which
/// stays stable as `a -> 1` (near-antipodal pairs). Symmetric in its
/// arguments; the result lies in `[0, pi * EARTH_RADIUS_KM]`.
pub fn haversine_km(p1: GeoPoint, p2: GeoPoint) -> f64 {
    let phi1 = p1.lat.to_radians();
    let phi2 = p2.lat.to_radians();
    let dphi = (p2.lat - p1.lat).to_radians();
    let dlambda = (p2.lon - p1.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().atan2((1.0 - a).sqrt())
}

/// Axis-aligned geohash cell bounds. Half-open on the upper edges except at
/// the global maxima, which belong to the topmost cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub fn contains(&self, p: GeoPoint) -> bool {
        let lat_ok = p.lat >= self.lat_min && (p.lat < self.lat_max || (self.lat_max == 90.0 && p.lat == 90.0));
        let lon_ok = p.lon >= self.lon_min && (p.lon < self.lon_max || (self.lon_max == 180.0 && p.lon == 180.0));
        lat_ok && lon_ok
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.lat_min + self.lat_max) / 2.0,
            lon: (self.lon_min + self.lon_max) / 2.0,
        }
    }
}

/// Encodes a point into a geohash code of the given precision.
///
/// Standard bit interleaving starting with longitude; ties at a subdivision
/// midpoint go to the upper half, which makes cell boxes lower-edge
/// inclusive. Codes at precision k are prefixes of codes at precision k+1
/// for the same point.
pub fn geohash_encode(p: GeoPoint, precision: usize) -> Result<String, GeoError> {
    if precision == 0 || precision > MAX_PRECISION {
        return Err(GeoError::InvalidPrecision(precision));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0_f64, 90.0_f64);
    let (mut lon_lo, mut lon_hi) = (-180.0_f64, 180.0_f64);
    let mut code = String::with_capacity(precision);
    let mut ch = 0_usize;
    let mut bit = 0_usize;
    let mut even = true;
    while code.len() < precision {
        if even {
            let mid = (lon_lo + lon_hi) / 2.0;
            if p.lon >= mid {
                ch = (ch << 1) | 1;
                lon_lo = mid;
            } else {
                ch <<= 1;
                lon_hi = mid;
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if p.lat >= mid {
                ch = (ch << 1) | 1;
                lat_lo = mid;
            } else {
                ch <<= 1;
                lat_hi = mid;
            }
        }
        even = !even;
        bit += 1;
        if bit == 5 {
            code.push(BASE32[ch] as char);
            ch = 0;
            bit = 0;
        }
    }
    Ok(code)
}

/// Decodes a geohash code into its bounding box.
pub fn geohash_decode_box(code: &str) -> Result<GeoBox, GeoError> {
    if code.is_empty() || code.len() > MAX_PRECISION {
        return Err(GeoError::InvalidGeohash(code.to_string()));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0_f64, 90.0_f64);
    let (mut lon_lo, mut lon_hi) = (-180.0_f64, 180.0_f64);
    let mut even = true;
    for c in code.chars() {
        let v = BASE32
            .iter()
            .position(|&b| b as char == c)
            .ok_or_else(|| GeoError::InvalidGeohash(code.to_string()))?;
        for shift in (0..5).rev() {
            let bit = (v >> shift) & 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit == 1 {
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit == 1 {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Ok(GeoBox {
        lat_min: lat_lo,
        lat_max: lat_hi,
        lon_min: lon_lo,
        lon_max: lon_hi,
    })
}

fn wrap_lon(lon: f64) -> f64 {
    let mut x = (lon + 180.0) % 360.0;
    if x < 0.0 {
        x += 360.0;
    }
    x - 180.0
}

/// Returns the cell plus its adjacent cells at the same precision, sorted
/// and deduplicated.
///
/// Interior cells yield exactly 9 codes. Longitude wraps across the
/// antimeridian; latitude steps beyond the poles are dropped, so polar
/// cells yield fewer codes.
pub fn geohash_neighbors(code: &str) -> Result<Vec<String>, GeoError> {
    let b = geohash_decode_box(code)?;
    let center = b.center();
    let lat_step = b.lat_max - b.lat_min;
    let lon_step = b.lon_max - b.lon_min;
    let mut out = Vec::with_capacity(9);
    for dlat in [-1.0, 0.0, 1.0] {
        for dlon in [-1.0, 0.0, 1.0] {
            let lat = center.lat + dlat * lat_step;
            if !(-90.0..=90.0).contains(&lat) {
                continue;
            }
            let lon = wrap_lon(center.lon + dlon * lon_step);
            out.push(geohash_encode(GeoPoint { lat, lon }, code.len())?);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Geohash-cell to trip-index map supporting approximate range queries.
///
/// Immutable after build; concurrent read queries are safe. Trip references
/// are indices into the corpus the index was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialIndex {
    precision: usize,
    cells: HashMap<String, Vec<usize>>,
    skipped_empty: usize,
}

impl SpatialIndex {
    /// Default cell precision: 6 characters, roughly 1.22 km x 0.61 km per
    /// cell, the smallest precision whose 9-cell neighborhood covers a 1 km
    /// disc around the cell interior.
    pub const DEFAULT_PRECISION: usize = 6;

    /// Indexes each trip under the cell of every one of its points
    /// (deduplicated). Empty polylines are skipped and counted.
    pub fn build<'a, I>(polylines: I, precision: usize) -> Result<Self, GeoError>
    where
        I: IntoIterator<Item = &'a [GeoPoint]>,
    {
        if precision == 0 || precision > MAX_PRECISION {
            return Err(GeoError::InvalidPrecision(precision));
        }
        let mut cells: HashMap<String, Vec<usize>> = HashMap::new();
        let mut skipped_empty = 0;
        for (idx, line) in polylines.into_iter().enumerate() {
            if line.is_empty() {
                skipped_empty += 1;
                continue;
            }
            for &p in line {
                cells.entry(geohash_encode(p, precision)?).or_default().push(idx);
            }
        }
        for ids in cells.values_mut() {
            ids.sort_unstable();
            ids.dedup();
        }
        Ok(SpatialIndex {
            precision,
            cells,
            skipped_empty,
        })
    }

    pub fn precision(&self) -> usize {
        self.precision
    }

    /// Number of polylines skipped at build time because they were empty.
    pub fn skipped_empty(&self) -> usize {
        self.skipped_empty
    }

    /// Number of non-empty cells.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Trips with a point in the query point's own cell or one of its 8
    /// neighbors, sorted by trip index.
    ///
    /// Approximate by design: the lookup resolution is the cell block, not
    /// the radius. `radius_km` is validated (must be positive) and the
    /// 9-cell block at precision 6 covers at least a 0.61 km disc around
    /// the query cell interior, so callers wanting a guaranteed radius must
    /// pick a matching precision. Results can include trips farther than
    /// the radius and, for dispersed data, miss trips slightly beyond the
    /// block edge.
    pub fn range_query(&self, center: GeoPoint, radius_km: f64) -> Result<Vec<usize>, GeoError> {
        if !(radius_km > 0.0) {
            return Err(GeoError::InvalidRadius(radius_km));
        }
        let code = geohash_encode(center, self.precision)?;
        let mut out = Vec::new();
        for cell in geohash_neighbors(&code)? {
            if let Some(ids) = self.cells.get(&cell) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}
