//! Global simulation envelopes for regression residual plots.
//!
//! Fit a linear, Poisson or random-intercept Poisson model, then ask how far
//! its QQ-plot, PP-plot, residuals-vs-fits smoother or scale-location
//! smoother strays from what the fitted model itself produces. Replicate
//! diagnostics come from a parametric bootstrap (simulate, refit, recompute
//! residuals) and are summarized by a global envelope whose exceedance is a
//! Monte Carlo test of the model.

pub mod diagnostics;
pub mod envelope;
pub mod error;
pub mod fitters;
pub mod harness;

pub mod model;
pub mod residuals;
pub mod rng;
pub mod smoother;

pub use diagnostics::{loglik_gof_test, plot_envelope, DiagnosticResult, PlotKind};
pub use envelope::{EnvelopeMode, FunctionEnsemble, GlobalEnvelope};
pub use error::{Error, Result};
pub use fitters::{fit, FitControl};
pub use model::{Dataset, FittedModel, ModelCapability, ModelKind};
pub use residuals::ResidualKind;
