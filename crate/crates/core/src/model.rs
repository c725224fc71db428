use crate::error::{Error, Result};
use crate::service::ServiceDistribution;

/// The queue model: Poisson arrivals at rate `lambda`, i.i.d. sizes from
/// `service`, and `k` permanent jobs that share the server but never leave.
///
/// Construction does not require stability: the load `rho` may be >= 1, and
/// each stationary computation gates on it individually (partial-sum
/// diagnostics are legitimately evaluated above capacity).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    lambda: f64,
    service: ServiceDistribution,
    k: u32,
    mean_size: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, service: ServiceDistribution, k: u32) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "arrival rate must be finite and nonnegative, got {lambda}"
            )));
        }
        let mean_size = service.mean();
        if !(mean_size.is_finite() && mean_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "service law must have a positive finite mean, got {mean_size}"
            )));
        }
        Ok(ModelParams { lambda, service, k, mean_size })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn service(&self) -> &ServiceDistribution {
        &self.service
    }

    /// Number of permanent jobs.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn mean_size(&self) -> f64 {
        self.mean_size
    }

    /// Offered load `lambda * mean size`.
    pub fn rho(&self) -> f64 {
        self.lambda * self.mean_size
    }

    /// Errors unless the queue is stable (`rho < 1`).
    pub fn require_stable(&self) -> Result<()> {
        let rho = self.rho();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::UnstableLoad { rho })
        }
    }

    /// Same arrival and service model with a different permanent-job count.
    pub fn with_k(&self, k: u32) -> Self {
        ModelParams { k, ..self.clone() }
    }
}
