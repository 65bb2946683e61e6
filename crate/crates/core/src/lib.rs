//! Removing unwanted variation from gene-expression style data using negative
//! control genes.
//!
//! The linear model is `Y = X β + Z α + E` with `X = [X1, X2]`, where `X2`
//! holds the covariates of interest and `Z` is unobserved. Control genes are
//! known to have zero effect, which makes `Z` estimable.
//!
//! - [`model`]: QR rotation into the `Y1`/`Y2`/`Y3` blocks and OLS.
//! - [`factor`]: truncated-SVD factor analysis and parallel analysis.
//! - [`estimators`]: RUV2, RUV3, RUV4/CATE and the original RUV2.
//! - [`ruvb`]: the Bayesian factor-analysis imputation and its summaries.
//! - [`calibration`]: control-gene, MAD, EBVM and maximum-likelihood variance
//!   calibration.
//! - [`method`]: method tags such as `ruv3-la-c` and the full pipeline.
//! - [`simulation`] and [`evaluation`]: synthetic data with known truth and
//!   scoring.
//! - [`io`] and [`cli`]: file formats and the command-line front end.
//!
//! ```
//! use nalgebra::DMatrix;
//! use ruvstar::{model, Design, ResponseMatrix};
//!
//! let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { (i % 2) as f64 });
//! let y = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
//! let d = Design::new(x, 1, vec![0, 1]).unwrap();
//! let rm = model::rotate(&ResponseMatrix::new(y).unwrap(), &d).unwrap();
//! let ols = model::ols_effects(&rm).unwrap();
//! assert_eq!(ols.columns, vec![2, 3]);
//! ```

pub mod calibration;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod factor;
pub mod io;
mod linalg;
pub mod method;
pub mod model;
pub mod ruvb;
pub mod simulation;

pub use error::{Result, RuvError};
pub use estimators::{ruv2, ruv2_old, ruv3, ruv4, Ruv4Mode, RuvFit};
pub use factor::{FactorAnalysis, TruncatedSvd};
pub use method::{fit_method, FitConfig, MethodSpec};
pub use model::{rotate, Design, EffectResult, ResponseMatrix, RotatedModel};
