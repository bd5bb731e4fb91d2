//! δ-discretized tools for restricted projections to lines in R³: fractal
//! sets, dyadic coverings, projection sweeps, slab incidences and small cap
//! decoupling on cones.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covering;
pub mod curve;
pub mod dyadic;
pub mod error;
pub mod fourier;
pub mod fractal;
pub mod incidence;
pub mod projection;
pub mod spacing;
pub mod vec3;

pub use curve::{Curve, DirectionNet};
pub use dyadic::Dyadic;
pub use error::{Error, Result};
pub use fractal::PointSet;
