//! Trip-to-trip distance metrics, k-nearest-neighbor retrieval, and
//! kernel-regression predictors (plain and contextual) for destination and
//! travel time.
//!
//! A query is an observed trip prefix; candidates are completed corpus
//! trips. Candidates with fewer points than the (possibly suffixed or
//! simplified) query are not comparable and are skipped rather than given
//! an infinite distance. All distances are kilometers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, GeoPoint, SpatialIndex};
use crate::trajectory::{
    day_of_week_utc, hour_of_day_utc, rdp_simplify, suffix_start_for_meters, PartialTrip, RawTrip,
    SAMPLE_INTERVAL_S,
};

/// Suffix window lengths (meters) enumerated by the default feature set.
pub const DEFAULT_SUFFIX_WINDOWS_M: [f64; 9] =
    [100.0, 200.0, 300.0, 400.0, 500.0, 700.0, 1000.0, 1200.0, 1500.0];

/// Simplification tolerances (degrees) enumerated by the default feature set.
pub const DEFAULT_SIMPLIFY_EPS_DEG: [f64; 3] = [1e-6, 5e-6, 5e-5];

/// Kernel bandwidths (kilometers) enumerated by the default feature set.
pub const DEFAULT_BANDWIDTHS_KM: [f64; 3] = [0.005, 0.05, 0.5];

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("query trip has no observed points")]
    EmptyQuery,
    #[error("no comparable candidates")]
    NoCandidates,
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
}

/// Which point sequences enter the distance computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistanceKind {
    /// Mean haversine between position-aligned points over the query length.
    AlignedPrefix,
    /// Minimum aligned-window mean over all placements of the query inside
    /// the candidate.
    BestMatch,
    /// Best-match applied to the minimal query suffix spanning at least
    /// this many meters.
    SuffixMeters(f64),
}

/// A trip distance metric: point-sequence selection plus optional
/// simplification of both trips before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripDistanceSpec {
    pub kind: DistanceKind,
    /// Simplify query and candidate with this tolerance (degrees) first.
    pub simplify_eps: Option<f64>,
}

impl TripDistanceSpec {
    pub fn aligned() -> Self {
        TripDistanceSpec { kind: DistanceKind::AlignedPrefix, simplify_eps: None }
    }

    pub fn best_match() -> Self {
        TripDistanceSpec { kind: DistanceKind::BestMatch, simplify_eps: None }
    }

    pub fn suffix(d_meters: f64) -> Self {
        TripDistanceSpec { kind: DistanceKind::SuffixMeters(d_meters), simplify_eps: None }
    }

    pub fn simplified(eps_deg: f64) -> Self {
        TripDistanceSpec { kind: DistanceKind::BestMatch, simplify_eps: Some(eps_deg) }
    }
}

/// Categorical attribute a candidate must share with the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextKey {
    None,
    CallId,
    TaxiId,
    DayOfWeek,
    HourOfDay,
    StandId,
}

impl ContextKey {
    /// True iff the candidate shares this attribute with the query.
    /// Weekday and hour compare trip start timestamps in UTC. A query
    /// missing the attribute (no caller id / no stand) matches nothing,
    /// which triggers the caller's fallback to unfiltered regression.
    pub fn matches(self, query: &PartialTrip, cand: &RawTrip) -> bool {
        match self {
            ContextKey::None => true,
            ContextKey::CallId => {
                query.origin_call.is_some() && cand.origin_call == query.origin_call
            }
            ContextKey::TaxiId => cand.taxi_id == query.taxi_id,
            ContextKey::DayOfWeek => {
                day_of_week_utc(cand.start_ts) == day_of_week_utc(query.start_ts)
            }
            ContextKey::HourOfDay => {
                hour_of_day_utc(cand.start_ts) == hour_of_day_utc(query.start_ts)
            }
            ContextKey::StandId => {
                query.origin_stand.is_some() && cand.origin_stand == query.origin_stand
            }
        }
    }
}

/// What a matcher predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    Destination,
    TravelTime,
}

/// A predicted or looked-up target value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetValue {
    Point(GeoPoint),
    Seconds(f64),
}

impl TargetValue {
    pub fn expect_point(self) -> GeoPoint {
        match self {
            TargetValue::Point(p) => p,
            TargetValue::Seconds(_) => panic!("expected a destination target"),
        }
    }

    pub fn expect_seconds(self) -> f64 {
        match self {
            TargetValue::Seconds(s) => s,
            TargetValue::Point(_) => panic!("expected a travel-time target"),
        }
    }
}

/// One kernel-regression feature: a bandwidth over a trip metric, with an
/// optional context restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRegressionSpec {
    /// Gaussian bandwidth in kilometers; weights are exp(-(d/h)^2).
    pub bandwidth: f64,
    pub distance: TripDistanceSpec,
    pub context: ContextKey,
    pub target: TargetKind,
}

/// Shared read-only state for matching queries against a corpus.
#[derive(Clone, Copy)]
pub struct MatchContext<'a> {
    pub corpus: &'a [RawTrip],
    pub index: &'a SpatialIndex,
    /// Radius handed to the spatial index (approximate; see `range_query`).
    pub radius_km: f64,
    /// Bypass the index and consider every corpus trip (oracle testing).
    pub exact_scan: bool,
    /// Trip id excluded from the candidate pool (leave-self-out).
    pub exclude_trip_id: Option<&'a str>,
}

impl<'a> MatchContext<'a> {
    pub fn new(corpus: &'a [RawTrip], index: &'a SpatialIndex) -> Self {
        MatchContext {
            corpus,
            index,
            radius_km: 1.0,
            exact_scan: false,
            exclude_trip_id: None,
        }
    }

    /// Candidate corpus indices for a query: trips near the query's first
    /// point (or the whole corpus under `exact_scan`), minus the excluded
    /// trip and trips too short to ever train on. Sorted ascending.
    pub fn candidates(&self, query: &PartialTrip) -> Result<Vec<usize>, MatchError> {
        let first = *query.points.first().ok_or(MatchError::EmptyQuery)?;
        let mut ids = if self.exact_scan {
            (0..self.corpus.len()).collect()
        } else {
            self.index.range_query(first, self.radius_km)?
        };
        ids.retain(|&i| {
            self.corpus[i].polyline.len() >= 2
                && self.exclude_trip_id != Some(self.corpus[i].trip_id.as_str())
        });
        Ok(ids)
    }
}

/// Mean haversine between position-aligned points, over the query length.
/// `None` when the candidate is shorter than the query (not comparable).
pub fn aligned_prefix_distance(a: &[GeoPoint], b: &[GeoPoint]) -> Option<f64> {
    if a.is_empty() || b.len() < a.len() {
        return None;
    }
    let sum: f64 = a.iter().zip(b).map(|(&p, &q)| haversine_km(p, q)).sum();
    Some(sum / a.len() as f64)
}

/// Minimum over all offsets `o` of the mean haversine between `a` and the
/// window `b[o .. o + |a|]`. Equals `aligned_prefix_distance` when the
/// lengths match; never exceeds it.
pub fn best_match_distance(a: &[GeoPoint], b: &[GeoPoint]) -> Option<f64> {
    if a.is_empty() || b.len() < a.len() {
        return None;
    }
    let mut best = f64::INFINITY;
    for o in 0..=b.len() - a.len() {
        let sum: f64 = a.iter().zip(&b[o..]).map(|(&p, &q)| haversine_km(p, q)).sum();
        best = best.min(sum / a.len() as f64);
    }
    Some(best)
}

/// Best-match distance of the minimal suffix of `a` spanning at least
/// `d_meters` (whole trip when shorter) against `b`.
pub fn suffix_distance(a: &[GeoPoint], b: &[GeoPoint], d_meters: f64) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    best_match_distance(&a[suffix_start_for_meters(a, d_meters)..], b)
}

/// Distance between a query prefix and one candidate polyline under a spec.
pub fn trip_distance(
    query: &[GeoPoint],
    candidate: &[GeoPoint],
    spec: &TripDistanceSpec,
) -> Option<f64> {
    let (q_owned, c_owned);
    let (q, c): (&[GeoPoint], &[GeoPoint]) = match spec.simplify_eps {
        Some(eps) => {
            q_owned = rdp_simplify(query, eps);
            c_owned = rdp_simplify(candidate, eps);
            (&q_owned, &c_owned)
        }
        None => (query, candidate),
    };
    match spec.kind {
        DistanceKind::AlignedPrefix => aligned_prefix_distance(q, c),
        DistanceKind::BestMatch => best_match_distance(q, c),
        DistanceKind::SuffixMeters(d) => suffix_distance(q, c, d),
    }
}

/// Distances from the query to every comparable candidate, in candidate
/// index order (deterministic regardless of pool order).
pub fn candidate_distances(
    query: &PartialTrip,
    spec: &TripDistanceSpec,
    candidate_ids: &[usize],
    corpus: &[RawTrip],
) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = candidate_ids.to_vec();
    ids.sort_unstable();
    ids.iter()
        .filter_map(|&i| {
            trip_distance(&query.points, &corpus[i].polyline, spec).map(|d| (i, d))
        })
        .collect()
}

/// The candidate's training target: final destination or total travel time.
pub fn candidate_target(cand: &RawTrip, target: TargetKind) -> TargetValue {
    match target {
        TargetKind::Destination => TargetValue::Point(
            cand.destination().expect("candidates have at least 2 points"),
        ),
        TargetKind::TravelTime => TargetValue::Seconds(
            (SAMPLE_INTERVAL_S * (cand.polyline.len() as i64 - 1)) as f64,
        ),
    }
}

/// One retrieved neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub corpus_idx: usize,
    pub trip_id: String,
    pub distance_km: f64,
    pub target: TargetValue,
}

/// Up to `k` nearest candidates under `spec`, ascending by distance with
/// ties broken by trip id. Empty when nothing is comparable.
pub fn knn_query(
    query: &PartialTrip,
    k: usize,
    spec: &TripDistanceSpec,
    target: TargetKind,
    ctx: &MatchContext,
) -> Result<Vec<Neighbor>, MatchError> {
    let ids = ctx.candidates(query)?;
    let mut scored: Vec<Neighbor> = candidate_distances(query, spec, &ids, ctx.corpus)
        .into_iter()
        .map(|(i, d)| Neighbor {
            corpus_idx: i,
            trip_id: ctx.corpus[i].trip_id.clone(),
            distance_km: d,
            target: candidate_target(&ctx.corpus[i], target),
        })
        .collect();
    scored.sort_by(|a, b| {
        a.distance_km
            .total_cmp(&b.distance_km)
            .then_with(|| a.trip_id.cmp(&b.trip_id))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Nadaraya-Watson estimate over (distance, candidate index) pairs.
/// Weights are exp(-(d/h)^2); when every weight underflows to zero the
/// nearest candidate's target is returned instead. `None` on empty input.
fn nadaraya_watson(
    dists: &[(usize, f64)],
    h: f64,
    target: TargetKind,
    corpus: &[RawTrip],
) -> Option<TargetValue> {
    if dists.is_empty() {
        return None;
    }
    // Accumulate in candidate index order so the result is bit-identical
    // regardless of how the caller ordered the list.
    let mut dists = dists.to_vec();
    dists.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut w_sum = 0.0;
    let mut acc = [0.0_f64; 2];
    for &(i, d) in &dists {
        let w = (-(d / h) * (d / h)).exp();
        w_sum += w;
        match candidate_target(&corpus[i], target) {
            TargetValue::Point(p) => {
                acc[0] += w * p.lat;
                acc[1] += w * p.lon;
            }
            TargetValue::Seconds(s) => acc[0] += w * s,
        }
    }
    if w_sum == 0.0 {
        let &(i, _) = dists
            .iter()
            .min_by(|(i, d), (j, e)| {
                d.total_cmp(e).then_with(|| corpus[*i].trip_id.cmp(&corpus[*j].trip_id))
            })
            .expect("nonempty");
        return Some(candidate_target(&corpus[i], target));
    }
    Some(match target {
        TargetKind::Destination => TargetValue::Point(GeoPoint {
            lat: acc[0] / w_sum,
            lon: acc[1] / w_sum,
        }),
        TargetKind::TravelTime => TargetValue::Seconds(acc[0] / w_sum),
    })
}

/// Kernel regression over a precomputed distance list, applying the spec's
/// context filter with fallback to the unfiltered list when the filter
/// empties it. This is the shared core of [`kernel_regress`]; callers that
/// evaluate many specs against one query reuse one distance list per metric.
pub fn kernel_regress_from_distances(
    query: &PartialTrip,
    spec: &KernelRegressionSpec,
    dists: &[(usize, f64)],
    corpus: &[RawTrip],
) -> Result<TargetValue, MatchError> {
    if spec.context != ContextKey::None {
        let filtered: Vec<(usize, f64)> = dists
            .iter()
            .filter(|&&(i, _)| spec.context.matches(query, &corpus[i]))
            .copied()
            .collect();
        if let Some(v) = nadaraya_watson(&filtered, spec.bandwidth, spec.target, corpus) {
            return Ok(v);
        }
    }
    nadaraya_watson(dists, spec.bandwidth, spec.target, corpus).ok_or(MatchError::NoCandidates)
}

/// Nadaraya-Watson kernel regression against the corpus.
///
/// Candidates come from the spatial index around the query's first point;
/// a context filter that matches nothing falls back to the unfiltered
/// pool. Errors with `NoCandidates` only when the unfiltered pool is empty.
pub fn kernel_regress(
    query: &PartialTrip,
    spec: &KernelRegressionSpec,
    ctx: &MatchContext,
) -> Result<TargetValue, MatchError> {
    let ids = ctx.candidates(query)?;
    let dists = candidate_distances(query, &spec.distance, &ids, ctx.corpus);
    kernel_regress_from_distances(query, spec, &dists, ctx.corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{CallType, DayType};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn trip(id: &str, polyline: Vec<GeoPoint>) -> RawTrip {
        RawTrip {
            trip_id: id.to_string(),
            call_type: CallType::C,
            origin_call: None,
            origin_stand: None,
            taxi_id: 20000001,
            start_ts: 1_400_000_000,
            day_type: DayType::A,
            missing_flag: false,
            polyline,
        }
    }

    fn partial(points: Vec<GeoPoint>) -> PartialTrip {
        PartialTrip {
            trip_id: "query".into(),
            call_type: CallType::C,
            origin_call: None,
            origin_stand: None,
            taxi_id: 20000001,
            start_ts: 1_400_000_000,
            day_type: DayType::A,
            points,
            cutoff_ts: 1_400_000_000,
        }
    }

    fn walk(rng: &mut StdRng, n: usize) -> Vec<GeoPoint> {
        let mut lat = rng.gen_range(41.10..41.20);
        let mut lon = rng.gen_range(-8.67..-8.57);
        (0..n)
            .map(|_| {
                let p = pt(lat, lon);
                lat += rng.gen_range(-2e-3..2e-3);
                lon += rng.gen_range(-2e-3..2e-3);
                p
            })
            .collect()
    }

    #[test]
    fn aligned_prefix_basics() {
        let mut rng = StdRng::seed_from_u64(61);
        let a = walk(&mut rng, 8);
        assert_eq!(aligned_prefix_distance(&a, &a), Some(0.0));
        let single = [a[0]];
        let mut b = a.clone();
        b.extend(walk(&mut rng, 3));
        assert_eq!(aligned_prefix_distance(&single, &b), Some(0.0));
        assert_eq!(aligned_prefix_distance(&a, &a[..4]), None);
        assert_eq!(aligned_prefix_distance(&[], &a), None);
    }

    #[test]
    fn aligned_prefix_constant_north_shift() {
        let mut rng = StdRng::seed_from_u64(67);
        let a = walk(&mut rng, 10);
        let b: Vec<GeoPoint> = a.iter().map(|p| pt(p.lat + 0.001, p.lon)).collect();
        let got = aligned_prefix_distance(&a, &b).unwrap();
        let oracle: f64 =
            a.iter().zip(&b).map(|(&p, &q)| haversine_km(p, q)).sum::<f64>() / a.len() as f64;
        assert_eq!(got, oracle);
        // A pure north shift gives every pair the same distance, so the
        // mean collapses to the single-pair value.
        assert!((got - haversine_km(a[0], b[0])).abs() < 1e-9);
    }

    #[test]
    fn best_match_finds_embedded_slice() {
        let mut rng = StdRng::seed_from_u64(71);
        let b = walk(&mut rng, 20);
        let a = b[7..13].to_vec();
        assert_eq!(best_match_distance(&a, &b), Some(0.0));
        assert!(aligned_prefix_distance(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn best_match_equals_aligned_at_equal_length_and_never_exceeds() {
        let mut rng = StdRng::seed_from_u64(73);
        for _ in 0..1000 {
            let na = rng.gen_range(1..12);
            let nb = rng.gen_range(na..16);
            let a = walk(&mut rng, na);
            let b = walk(&mut rng, nb);
            let best = best_match_distance(&a, &b).unwrap();
            let aligned = aligned_prefix_distance(&a, &b).unwrap();
            assert!(best <= aligned);
            // Brute-force offset enumeration oracle.
            let mut oracle = f64::INFINITY;
            for o in 0..=nb - na {
                let m: f64 = (0..na)
                    .map(|k| haversine_km(a[k], b[o + k]))
                    .sum::<f64>()
                    / na as f64;
                oracle = oracle.min(m);
            }
            assert_eq!(best, oracle);
            if na == nb {
                assert_eq!(best, aligned);
            }
        }
    }

    #[test]
    fn suffix_distance_degenerate_cases() {
        let mut rng = StdRng::seed_from_u64(79);
        let a = walk(&mut rng, 10);
        let b = walk(&mut rng, 12);
        // Window longer than the whole trip: plain best match.
        assert_eq!(suffix_distance(&a, &b, 1e9), best_match_distance(&a, &b));
        // Zero window: single last point against the closest point of b.
        let last = *a.last().unwrap();
        let oracle = b
            .iter()
            .map(|&q| haversine_km(last, q))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(suffix_distance(&a, &b, 0.0), Some(oracle));
    }

    #[test]
    fn suffix_distance_matches_shared_tail_despite_distinct_prefixes() {
        // Two approaches that merge for the final stretch (e.g. the airport
        // road): identical 550 m suffixes, prefixes on opposite sides.
        let step = 0.11 / 111.195; // ~110 m
        let tail: Vec<GeoPoint> = (0..6).map(|k| pt(41.20 + step * k as f64, -8.61)).collect();
        let mut a: Vec<GeoPoint> = (0..6).map(|k| pt(41.20 - step * (6 - k) as f64, -8.61)).collect();
        a.extend(&tail);
        let mut b: Vec<GeoPoint> = (0..6)
            .map(|k| pt(41.20, -8.61 - step * (6 - k) as f64 / 0.75))
            .collect();
        b.extend(&tail);
        let d = suffix_distance(&a, &b, 500.0).unwrap();
        assert_eq!(d, 0.0);
        assert!(aligned_prefix_distance(&a, &b).unwrap() > 0.1);
    }

    fn make_ctx<'a>(corpus: &'a [RawTrip], index: &'a SpatialIndex) -> MatchContext<'a> {
        let mut ctx = MatchContext::new(corpus, index);
        ctx.exact_scan = true;
        ctx
    }

    #[test]
    fn knn_own_trip_first_and_k_truncation() {
        let mut rng = StdRng::seed_from_u64(83);
        let full = walk(&mut rng, 12);
        let mut corpus: Vec<RawTrip> = (0..10).map(|i| trip(&format!("t{i}"), walk(&mut rng, 12))).collect();
        corpus.push(trip("self", full.clone()));
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let query = partial(full[..5].to_vec());
        let got = knn_query(&query, 3, &TripDistanceSpec::aligned(), TargetKind::Destination, &make_ctx(&corpus, &index)).unwrap();
        assert_eq!(got[0].trip_id, "self");
        assert_eq!(got[0].distance_km, 0.0);
        assert_eq!(got[0].target, TargetValue::Point(*full.last().unwrap()));
        assert_eq!(got.len(), 3);
        let all = knn_query(&query, 100, &TripDistanceSpec::aligned(), TargetKind::Destination, &make_ctx(&corpus, &index)).unwrap();
        assert_eq!(all.len(), 11);
    }

    #[test]
    fn knn_equals_linear_scan_oracle() {
        let mut rng = StdRng::seed_from_u64(89);
        let corpus: Vec<RawTrip> = (0..50)
            .map(|i| {
                let n = rng.gen_range(4..15);
                trip(&format!("t{i:02}"), walk(&mut rng, n))
            })
            .collect();
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        for _ in 0..20 {
            let query = partial(walk(&mut rng, 4));
            let got = knn_query(&query, 10, &TripDistanceSpec::aligned(), TargetKind::TravelTime, &ctx).unwrap();
            let mut oracle: Vec<(f64, String)> = corpus
                .iter()
                .filter_map(|t| {
                    aligned_prefix_distance(&query.points, &t.polyline)
                        .map(|d| (d, t.trip_id.clone()))
                })
                .collect();
            oracle.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
            oracle.truncate(10);
            let got_pairs: Vec<(f64, String)> =
                got.iter().map(|n| (n.distance_km, n.trip_id.clone())).collect();
            assert_eq!(got_pairs, oracle);
        }
    }

    #[test]
    fn kernel_regression_hand_computed_five_candidates() {
        // Frozen spreadsheet-style oracle: distances {10, 30, 55, 120, 200} m
        // from the query's single point, h = 0.05 km, targets below.
        let q = pt(41.152, -8.615);
        let bearings_deg: [f64; 5] = [0.0, 60.0, 135.0, 220.0, 300.0];
        let dists_km = [0.010, 0.030, 0.055, 0.120, 0.200];
        let times_s = [300.0, 480.0, 600.0, 540.0, 900.0];
        let dests = [
            pt(41.150, -8.610),
            pt(41.160, -8.620),
            pt(41.170, -8.630),
            pt(41.155, -8.640),
            pt(41.148, -8.605),
        ];
        // Candidate trips: enough identical points to force the travel time,
        // ending at the destination. The identical-point prefix pins the
        // best-match distance to haversine(query, prefix point).
        let deg_per_km = 360.0 / (2.0 * std::f64::consts::PI * crate::geo::EARTH_RADIUS_KM);
        let mut corpus = Vec::new();
        let mut exact_d = Vec::new();
        for i in 0..5 {
            let th = bearings_deg[i].to_radians();
            let anchor = pt(
                q.lat + dists_km[i] * deg_per_km * th.cos(),
                q.lon + dists_km[i] * deg_per_km * th.sin() / q.lat.to_radians().cos(),
            );
            exact_d.push(haversine_km(q, anchor));
            let n = (times_s[i] / 15.0) as usize + 1;
            let mut line = vec![anchor; n - 1];
            line.push(dests[i]);
            corpus.push(trip(&format!("c{i}"), line));
        }
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        let query = partial(vec![q]);
        // Oracle weighted means from the exact achieved distances.
        let h = 0.05;
        let w: Vec<f64> = exact_d.iter().map(|d| (-(d / h) * (d / h)).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let spec = KernelRegressionSpec {
            bandwidth: h,
            distance: TripDistanceSpec::best_match(),
            context: ContextKey::None,
            target: TargetKind::TravelTime,
        };
        let t = kernel_regress(&query, &spec, &ctx).unwrap().expect_seconds();
        let t_oracle: f64 = w.iter().zip(&times_s).map(|(wi, ti)| wi * ti).sum::<f64>() / wsum;
        assert!((t - t_oracle).abs() < 1e-9, "time {t} vs oracle {t_oracle}");
        // The placed distances approximate the nominal ones to < 0.1 m, so
        // the frozen hand computation (410.111 s) must agree closely.
        assert!((t - 410.1110754541365).abs() < 1.0, "time {t} drifted from hand value");
        let dspec = KernelRegressionSpec { target: TargetKind::Destination, ..spec };
        let p = kernel_regress(&query, &dspec, &ctx).unwrap().expect_point();
        let lat_oracle: f64 = w.iter().zip(&dests).map(|(wi, d)| wi * d.lat).sum::<f64>() / wsum;
        let lon_oracle: f64 = w.iter().zip(&dests).map(|(wi, d)| wi * d.lon).sum::<f64>() / wsum;
        assert!((p.lat - lat_oracle).abs() < 1e-12);
        assert!((p.lon - lon_oracle).abs() < 1e-12);
        assert!((p.lat - 41.15661106737949).abs() < 1e-4);
        assert!((p.lon - -8.616651263766263).abs() < 1e-4);
    }

    #[test]
    fn kernel_regression_single_candidate_and_limits() {
        let mut rng = StdRng::seed_from_u64(97);
        let corpus = vec![trip("only", walk(&mut rng, 10))];
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        let query = partial(walk(&mut rng, 3));
        let spec = KernelRegressionSpec {
            bandwidth: 0.05,
            distance: TripDistanceSpec::best_match(),
            context: ContextKey::None,
            target: TargetKind::TravelTime,
        };
        let got = kernel_regress(&query, &spec, &ctx).unwrap().expect_seconds();
        assert_eq!(got, 135.0); // 10 points: 15 * 9 seconds

        // Wide bandwidth: arithmetic mean of targets.
        let corpus: Vec<RawTrip> = (0..8)
            .map(|i| {
                let n = rng.gen_range(5..25);
                trip(&format!("t{i}"), walk(&mut rng, n))
            })
            .collect();
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        let query = partial(walk(&mut rng, 3));
        let wide = KernelRegressionSpec { bandwidth: 1e9, ..spec };
        let got = kernel_regress(&query, &wide, &ctx).unwrap().expect_seconds();
        let mean: f64 = corpus
            .iter()
            .map(|t| 15.0 * (t.polyline.len() as f64 - 1.0))
            .sum::<f64>()
            / corpus.len() as f64;
        assert!((got - mean).abs() / mean < 1e-9);

        // Vanishing bandwidth: nearest neighbor's target.
        let narrow = KernelRegressionSpec { bandwidth: 1e-9, ..spec };
        let got = kernel_regress(&query, &narrow, &ctx).unwrap().expect_seconds();
        let nn = knn_query(&query, 1, &spec.distance, TargetKind::TravelTime, &ctx).unwrap();
        assert_eq!(got, nn[0].target.expect_seconds());
    }

    #[test]
    fn kernel_regression_convex_hull_and_reorder_invariance() {
        let mut rng = StdRng::seed_from_u64(101);
        for _ in 0..100 {
            let n = rng.gen_range(1..12);
            let corpus: Vec<RawTrip> = (0..n)
                .map(|i| {
                    let len = rng.gen_range(3..10);
                    trip(&format!("t{i}"), walk(&mut rng, len))
                })
                .collect();
            let query = partial(walk(&mut rng, 2));
            let ids: Vec<usize> = (0..corpus.len()).collect();
            let dists = candidate_distances(&query, &TripDistanceSpec::best_match(), &ids, &corpus);
            if dists.is_empty() {
                continue;
            }
            let spec = KernelRegressionSpec {
                bandwidth: *[0.005, 0.05, 0.5].iter().nth(rng.gen_range(0..3)).unwrap(),
                distance: TripDistanceSpec::best_match(),
                context: ContextKey::None,
                target: TargetKind::Destination,
            };
            let p = kernel_regress_from_distances(&query, &spec, &dists, &corpus)
                .unwrap()
                .expect_point();
            let lats: Vec<f64> = dists.iter().map(|&(i, _)| corpus[i].destination().unwrap().lat).collect();
            let lons: Vec<f64> = dists.iter().map(|&(i, _)| corpus[i].destination().unwrap().lon).collect();
            let eps = 1e-12;
            assert!(p.lat >= lats.iter().cloned().fold(f64::INFINITY, f64::min) - eps);
            assert!(p.lat <= lats.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + eps);
            assert!(p.lon >= lons.iter().cloned().fold(f64::INFINITY, f64::min) - eps);
            assert!(p.lon <= lons.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + eps);
            // Reordering the precomputed list must not change the result:
            // the estimator re-sorts internally via candidate index order.
            let mut shuffled = dists.clone();
            shuffled.reverse();
            let spec2 = spec;
            let p2 = kernel_regress_from_distances(&query, &spec2, &shuffled, &corpus)
                .unwrap()
                .expect_point();
            assert_eq!(p.lat, p2.lat);
            assert_eq!(p.lon, p2.lon);
        }
    }

    #[test]
    fn contextual_filter_and_fallback() {
        let mut rng = StdRng::seed_from_u64(103);
        let mut corpus: Vec<RawTrip> = (0..6)
            .map(|i| {
                let mut t = trip(&format!("t{i}"), walk(&mut rng, 8));
                t.taxi_id = 30000000 + i as u64 % 2;
                t.origin_stand = Some(15);
                t
            })
            .collect();
        corpus[3].origin_stand = Some(40);
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        let mut query = partial(walk(&mut rng, 3));
        query.taxi_id = 30000000;
        query.origin_stand = Some(40);
        let base = KernelRegressionSpec {
            bandwidth: 0.5,
            distance: TripDistanceSpec::best_match(),
            context: ContextKey::None,
            target: TargetKind::TravelTime,
        };
        // Stand filter keeps only t3.
        let stand = KernelRegressionSpec { context: ContextKey::StandId, ..base };
        let got = kernel_regress(&query, &stand, &ctx).unwrap().expect_seconds();
        assert_eq!(got, 15.0 * (corpus[3].polyline.len() as f64 - 1.0));
        // Taxi filter keeps ids 0, 2, 4; differs from unfiltered.
        let taxi = KernelRegressionSpec { context: ContextKey::TaxiId, ..base };
        let got_taxi = kernel_regress(&query, &taxi, &ctx).unwrap().expect_seconds();
        let got_none = kernel_regress(&query, &base, &ctx).unwrap().expect_seconds();
        assert_ne!(got_taxi, got_none);
        // No candidate shares the query's call id: falls back to unfiltered.
        query.origin_call = Some(777);
        let call = KernelRegressionSpec { context: ContextKey::CallId, ..base };
        let got_call = kernel_regress(&query, &call, &ctx).unwrap().expect_seconds();
        assert_eq!(got_call, got_none);
        // A query with no call id matches nothing: same fallback.
        query.origin_call = None;
        let got_call = kernel_regress(&query, &call, &ctx).unwrap().expect_seconds();
        assert_eq!(got_call, got_none);
    }

    #[test]
    fn no_candidates_is_an_error() {
        let corpus: Vec<RawTrip> = Vec::new();
        let index = SpatialIndex::build(std::iter::empty(), 6).unwrap();
        let ctx = make_ctx(&corpus, &index);
        let query = partial(vec![pt(41.15, -8.61)]);
        let spec = KernelRegressionSpec {
            bandwidth: 0.05,
            distance: TripDistanceSpec::best_match(),
            context: ContextKey::None,
            target: TargetKind::TravelTime,
        };
        assert!(matches!(
            kernel_regress(&query, &spec, &ctx),
            Err(MatchError::NoCandidates)
        ));
    }

    #[test]
    fn underflow_returns_nearest_target() {
        let mut rng = StdRng::seed_from_u64(107);
        let corpus: Vec<RawTrip> = (0..4)
            .map(|i| trip(&format!("t{i}"), walk(&mut rng, 6 + i)))
            .collect();
        let query = partial(walk(&mut rng, 2));
        let ids: Vec<usize> = (0..corpus.len()).collect();
        let dists = candidate_distances(&query, &TripDistanceSpec::best_match(), &ids, &corpus);
        assert!(dists.iter().all(|&(_, d)| d > 0.0));
        let spec = KernelRegressionSpec {
            bandwidth: 1e-9,
            distance: TripDistanceSpec::best_match(),
            context: ContextKey::None,
            target: TargetKind::Destination,
        };
        let got = kernel_regress_from_distances(&query, &spec, &dists, &corpus)
            .unwrap()
            .expect_point();
        let nearest = dists
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|&(i, _)| corpus[i].destination().unwrap())
            .unwrap();
        assert_eq!(got, nearest);
    }

    #[test]
    fn exclude_trip_id_removes_self() {
        let mut rng = StdRng::seed_from_u64(109);
        let full = walk(&mut rng, 10);
        let corpus = vec![trip("self", full.clone()), trip("other", walk(&mut rng, 10))];
        let index = SpatialIndex::build(corpus.iter().map(|t| t.polyline.as_slice()), 6).unwrap();
        let mut ctx = make_ctx(&corpus, &index);
        ctx.exclude_trip_id = Some("self");
        let query = partial(full[..4].to_vec());
        let got = knn_query(&query, 10, &TripDistanceSpec::aligned(), TargetKind::Destination, &ctx).unwrap();
        assert!(got.iter().all(|n| n.trip_id != "self"));
    }
}
