#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Map-based millimeter-wave channel simulation.
//!
//! The crate covers the whole chain from a digital site map to link-level
//! channel models:
//!
//! * [`geometry`]: walls, materials, blocker screens and ray queries.
//! * [`rt`]: image-method ray tracing with Fresnel/slab interactions.
//! * [`params`]: power delay profiles, spreads, clustering, PMFs, coverage.
//! * [`gscm`]: stochastic parameter fitting and spatially consistent generation.
//! * [`hybrid`]: deterministic/stochastic merging and calibration.
//! * [`snapshotdb`]: append-only snapshot database with nearest-snapshot picking.
//! * [`coeffgen`]: MIMO channel coefficients, beamforming, CDL/TDL export.
//! * [`scenario`]: scenario configuration and the end-to-end pipelines.

pub mod coeffgen;
pub mod geometry;
pub mod gscm;
pub mod hybrid;
pub mod params;
pub mod rt;
pub mod scenario;
pub mod seed;
pub mod snapshotdb;
pub mod units;
