//! Numerical laboratory for bi-periodic bipartite dimer models: Kasteleyn
//! spectral data, inverse-Kasteleyn tables, determinantal correlations and
//! exact window sampling, and the scaling-limit amplitudes of pattern
//! density fluctuations.

pub mod clt;
pub mod correlations;
pub mod enumerate;
pub mod error;
pub mod faces;
pub mod graph;
pub mod green;
pub mod kernel;
pub mod laurent;
pub mod pattern;
pub mod sampler;
pub mod scaling;
pub mod special;
pub mod spectral;
pub mod testfn;

pub use error::{Error, Result};

/// Working real scalar.
pub type Real = f64;
/// Working complex scalar.
pub type C64 = num_complex::Complex<f64>;

pub use graph::{Color, EdgeSpec, GraphSpec, VertexRef};
pub use kernel::KernelTable;
pub use pattern::{Pattern, PatternEdge};
pub use spectral::{Phase, SpectralData};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
