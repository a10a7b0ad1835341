//! Generic maximum-likelihood fit record shared by the model modules.

use serde::{Deserialize, Serialize};

/// Akaike information criterion −2·logL + 2·dim.
pub fn aic(loglik: f64, dim: usize) -> f64 {
    -2.0 * loglik + 2.0 * dim as f64
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub params: P,
    /// Names of the free parameters, in the order of `se`.
    pub param_names: Vec<String>,
    pub loglik: f64,
    pub aic: f64,
    /// Standard errors from the observed information; NaN when the Hessian
    /// is not positive definite.
    pub se: Vec<f64>,
    pub window: (f64, f64),
    pub n_events: usize,
    pub converged: bool,
    pub hessian_pd: bool,
    pub n_eval: usize,
}

impl<P> FitResult<P> {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    /// Standard error of the named parameter.
    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.se[i])
    }

    pub fn map<Q>(self, f: impl FnOnce(P) -> Q) -> FitResult<Q> {
        FitResult {
            params: f(self.params),
            param_names: self.param_names,
            loglik: self.loglik,
            aic: self.aic,
            se: self.se,
            window: self.window,
            n_events: self.n_events,
            converged: self.converged,
            hessian_pd: self.hessian_pd,
            n_eval: self.n_eval,
        }
    }
}

pub(crate) fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}
