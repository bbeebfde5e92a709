//! Functional calculus for sectorial matrices by contour integration.

pub mod contour;
pub mod dpgsum;
pub mod error;
pub mod families;
pub mod funcalc;
pub mod hyperbolic;
pub mod io;
pub mod linalg;
pub mod parabolic;
pub mod report;
pub mod sectorial;

pub use contour::{ContourSpec, DecayEnvelope, DecayKind, DiscretizedContour};
pub use error::{Error, Result};
pub use hyperbolic::HyperbolicProblem;
pub use linalg::{CMatrix, CVector};
pub use parabolic::GridFunction;
pub use report::{Num, Report, Table};
pub use sectorial::{CertificationReport, ParabolaRegion, Provenance, SectorialOperator};
pub use num_complex::Complex64;
