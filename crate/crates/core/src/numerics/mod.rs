//! Special functions, quadrature, simplex optimisation and seeded sampling.

mod dist;
mod gamma;
mod normal;
mod quad;
mod rng;
mod simplex;

pub use dist::{sample, DistFamily, DistSpec, MvNormal};
pub use gamma::{gamma_cdf, gamma_pdf, gamma_quantile, gamma_quantile_upper, gamma_sf, ln_gamma, reg_gamma_p, reg_gamma_q};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf};
pub use quad::{integrate_1d, integrate_2d, Integral, QuadratureSpec};
pub use rng::RngStream;
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};
