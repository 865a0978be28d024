//! Interest networks (iNETs) for cities.
//!
//! Builds region co-visitation graphs from location-based social network
//! interactions, compares them across platforms and spatial granularities,
//! detects urban preference zones, and trains an explainable recommender of
//! high-interest regions.

pub mod geo;
pub mod hexgrid;
pub mod inet;
pub mod ingest;
pub mod metrics;
pub mod recsys;
pub mod service;
pub mod synth;
pub mod upzones;

pub use geo::{LatLon, Point, Polygon, Projection, Shape};
pub use hexgrid::{HexCell, HexGrid, Resolution};
pub use inet::{INet, NetStats, UserRegionCounts};
pub use ingest::{ContextProfile, Interaction, Level, Platform, Region, Venue};
