use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Busy-period transform of the underlying M/G/1 queue.
///
/// The busy-period LST pi(r) is the smallest positive root of the functional
/// equation pi = beta(r + lambda - lambda*pi), where beta is the service-time
/// LST. Iterating from 0 walks up to that root monotonically, so no root
/// bracketing is needed.
#[derive(Debug, Clone)]
pub struct BusyPeriodSolver {
    params: ModelParams,
    tol: f64,
    max_iters: u64,
}

/// Fixed-point solution with convergence diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct BusyLst {
    pub value: f64,
    pub iterations: u64,
    pub residual: f64,
}

impl BusyPeriodSolver {
    /// Requires a stable queue; defaults: tolerance 1e-12, at most 10^6
    /// iterations (convergence slows geometrically as rho approaches 1).
    pub fn new(params: ModelParams) -> Result<Self> {
        params.require_stable()?;
        Ok(BusyPeriodSolver { params, tol: 1e-12, max_iters: 1_000_000 })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_max_iters(mut self, max_iters: u64) -> Self {
        self.max_iters = max_iters.max(1);
        self
    }

    /// E[e^{-r * busy period}] for r >= 0.
    pub fn busy_lst(&self, r: f64) -> Result<f64> {
        self.busy_lst_detailed(r).map(|s| s.value)
    }

    /// Same as `busy_lst` but reports the iteration count and the residual
    /// |pi - beta(r + lambda - lambda*pi)| at the returned point.
    pub fn busy_lst_detailed(&self, r: f64) -> Result<BusyLst> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "transform argument must be finite and nonnegative, got {r}"
            )));
        }
        let lambda = self.params.lambda();
        let beta = |pi: f64| self.params.service().lst(r + lambda * (1.0 - pi));
        let mut pi = 0.0f64;
        let mut iterations = 0u64;
        while iterations < self.max_iters {
            let next = beta(pi);
            iterations += 1;
            // The map is monotone for any service LST, so iterates from 0
            // climb toward the minimal root; a decrease means a logic error,
            // not a numerical corner.
            debug_assert!(next >= pi - 1e-12, "iterates must be nondecreasing");
            if (next - pi).abs() < self.tol {
                let residual = (next - beta(next)).abs();
                if residual < self.tol {
                    return Ok(BusyLst { value: next, iterations, residual });
                }
            }
            pi = next;
        }
        Err(Error::NotConverged {
            iterations,
            residual: (beta(pi) - pi).abs(),
        })
    }

    /// Mean busy-period length, mean size / (1 - rho).
    pub fn busy_mean(&self) -> f64 {
        self.params.mean_size() / (1.0 - self.params.rho())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

/// Stationary probability of n standard jobs in the system with K permanent
/// jobs present: (1-rho)^{K+1} * C(n+K, K) * rho^n.
///
/// For K = 0 this is the geometric law (1-rho) rho^n. The probability depends
/// on the service law only through its mean. Large n+K switches to log-domain
/// evaluation so the binomial coefficient cannot overflow.
pub fn qlen_pmf(params: &ModelParams, n: u64) -> Result<f64> {
    params.require_stable()?;
    let rho = params.rho();
    let k = params.k() as u64;
    if rho == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    if n + k <= 50 {
        let mut coeff = 1.0;
        for j in 1..=k {
            coeff *= (n + j) as f64 / j as f64;
        }
        Ok((1.0 - rho).powi(k as i32 + 1) * coeff * rho.powi(n as i32))
    } else {
        let mut log_p = (k as f64 + 1.0) * (1.0 - rho).ln() + n as f64 * rho.ln();
        for j in 1..=k {
            log_p += ((n + j) as f64).ln() - (j as f64).ln();
        }
        Ok(log_p.exp())
    }
}

/// Mean number of standard jobs: (K+1) * rho / (1 - rho).
pub fn qlen_mean(params: &ModelParams) -> Result<f64> {
    params.require_stable()?;
    Ok((params.k() as f64 + 1.0) * params.rho() / (1.0 - params.rho()))
}
