//! Prediction of final destination and remaining travel time for ongoing
//! taxi trips, from partial GPS trajectories.
//!
//! The pipeline matches a partially observed trip against a corpus of
//! completed trips (geohash-indexed candidate retrieval, trip-to-trip
//! distances, k-NN and kernel regression), assembles fixed-width feature
//! vectors, and trains tree ensembles (random forests, extremely randomized
//! trees, gradient boosting) combined by stacked generalization.
//!
//! Modules mirror the pipeline stages:
//! - [`geo`]: haversine distance, geohash encoding, spatial index.
//! - [`trajectory`]: trip parsing, cleaning, simplification, kinematics.
//! - [`matching`]: trip distances, k-NN retrieval, kernel regression.
//! - [`features`]: feature-vector assembly and snapshot dataset building.
//! - [`models`]: regression trees, forests, boosting, stacking.
//! - [`eval`]: scoring metrics.
//! - [`io`], [`config`], [`cli`]: corpus ingestion, configuration, commands.

pub mod cli;
pub mod config;
pub mod eval;
pub mod features;
pub mod geo;
pub mod io;
pub mod matching;
pub mod models;
pub mod trajectory;
