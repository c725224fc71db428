use crate::error::{Error, Result};
use crate::grid::{GriddedDf, GridFunction};
use crate::model::ModelParams;

/// Hard stop for the excess-ladder length; loads extremely close to 1 would
/// otherwise demand an unbounded number of convolutions.
const MAX_LADDER_TERMS: usize = 200_000;

/// Stop threshold for the sojourn LST series: quit adding once the next term
/// falls below this relative size.
const LST_TERM_REL: f64 = 1e-12;

/// Accuracy the dominated-tail bound must certify when the series is cut off
/// by the term budget instead.
const LST_TAIL_REL: f64 = 1e-9;

/// Result of evaluating the non-probability measure W(x)/(1-rho), which stays
/// finite for every positive load even though the series defining it loses
/// its probabilistic meaning at rho >= 1.
#[derive(Debug, Clone, Copy)]
pub struct WcircValue {
    pub value: f64,
    pub terms_used: usize,
    /// True when the value is a bare partial sum with no convergence
    /// certificate (always the case at rho >= 1).
    pub partial: bool,
}

/// Precomputed lattice kernels for one model and grid.
///
/// Construction builds, in one pass over the excess-law ladder F^{k*}:
/// the waiting-time CDF W (geometric mixture of the ladder), its n-fold
/// convolutions W^{n*} (negative-binomial mixtures of the same ladder), and
/// the sojourn kernels
/// `xi_n(u) = (1-rho)^{-n} * integral over [0,u] of (u-x)^n dW^{(n-1)*}(x)`.
/// Everything a caller may query must be requested up front via `max_order`;
/// afterwards the workspace is immutable.
#[derive(Debug, Clone)]
pub struct KernelWorkspace {
    params: ModelParams,
    step: f64,
    eps: f64,
    max_order: usize,
    w_powers: Vec<GriddedDf>,
    xi: Vec<GridFunction>,
    ladder_terms: usize,
}

impl KernelWorkspace {
    /// `step`/`horizon` fix the lattice, `eps` the series truncation mass,
    /// and `max_order` the largest kernel order n (and W power) cached.
    pub fn new(
        params: &ModelParams,
        step: f64,
        horizon: f64,
        eps: f64,
        max_order: usize,
    ) -> Result<Self> {
        params.require_stable()?;
        let nodes = grid_nodes(step, horizon)?;
        if !(eps.is_finite() && eps > 0.0 && eps < 0.1) {
            return Err(Error::InvalidConfig(format!(
                "truncation tolerance must lie in (0, 0.1), got {eps}"
            )));
        }
        if max_order < 1 {
            return Err(Error::InvalidConfig("max_order must be at least 1".into()));
        }
        let orders: Vec<usize> = (0..=max_order).collect();
        let (w_powers, terms) = accumulate_powers(params, step, nodes, eps, &orders)?;
        let rho = params.rho();
        let mut xi = Vec::with_capacity(max_order);
        for n in 1..=max_order {
            let mut f = w_powers[n - 1].convolve_fn(|x| x.powi(n as i32));
            f.scale((1.0 - rho).powi(-(n as i32)));
            xi.push(f);
        }
        Ok(KernelWorkspace {
            params: params.clone(),
            step,
            eps,
            max_order,
            w_powers,
            xi,
            ladder_terms: terms,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.w_powers[0].horizon()
    }

    pub fn nodes(&self) -> usize {
        self.w_powers[0].nodes()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of excess-ladder terms F^{k*} that were accumulated.
    pub fn ladder_terms(&self) -> usize {
        self.ladder_terms
    }

    /// The stationary waiting-time CDF W of the underlying FCFS queue.
    pub fn waiting_cdf(&self) -> &GriddedDf {
        &self.w_powers[1]
    }

    /// n-fold convolution W^{n*}, cached up to `max_order`.
    pub fn w_nfold(&self, n: usize) -> Result<&GriddedDf> {
        self.w_powers.get(n).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "W^{{{n}*}} not cached: workspace was built with max_order {}",
                self.max_order
            ))
        })
    }

    /// Sojourn kernel xi_n on the grid, 1 <= n <= max_order. xi_0 == 1 is
    /// implicit in every consumer.
    pub fn xi(&self, n: usize) -> Result<&GridFunction> {
        if n == 0 || n > self.max_order {
            return Err(Error::InvalidConfig(format!(
                "xi_{n} not cached: workspace was built with max_order {}",
                self.max_order
            )));
        }
        Ok(&self.xi[n - 1])
    }

    /// Index of the grid node carrying `u`; `u` must sit on the lattice.
    pub fn node_of(&self, u: f64) -> Result<usize> {
        if !(u.is_finite() && u >= 0.0) {
            return Err(Error::InvalidConfig(format!("u must be finite and nonnegative, got {u}")));
        }
        let m = (u / self.step).round();
        if (u - m * self.step).abs() > 1e-6 * self.step {
            return Err(Error::InvalidConfig(format!(
                "u = {u} does not lie on the grid (step {})",
                self.step
            )));
        }
        let m = m as usize;
        if m > self.nodes() {
            return Err(Error::HorizonExceeded { x: u, horizon: self.horizon() });
        }
        Ok(m)
    }

    /// Conditional sojourn-time LST E[e^{-r V(u)}] of the base queue (no
    /// permanent jobs), via the reciprocal power series
    /// `1/v(r,u) = sum_n r^n xi_n(u) / n!`.
    ///
    /// Terms are added until the next one drops below 1e-12 relative or the
    /// budget `terms` (capped by the cached order) runs out; in the latter
    /// case the dominated tail `sum_{n>N} (ru/(1-rho))^n / n!` must certify
    /// 1e-9 accuracy, otherwise the call fails with `NotConverged`.
    pub fn sojourn_lst(&self, r: f64, u: f64, terms: usize) -> Result<f64> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "transform argument must be finite and nonnegative, got {r}"
            )));
        }
        if terms < 1 {
            return Err(Error::InvalidConfig("need at least one series term".into()));
        }
        let m = self.node_of(u)?;
        if r == 0.0 {
            return Ok(1.0);
        }
        let cap = terms.min(self.max_order);
        let mut sum = 1.0;
        let mut coeff = 1.0;
        let mut used = 0;
        let mut settled = false;
        for n in 1..=cap {
            coeff *= r / n as f64;
            let term = coeff * self.xi[n - 1].at_node(m);
            sum += term;
            used = n;
            if term <= LST_TERM_REL * sum {
                settled = true;
                break;
            }
        }
        if !settled {
            let x = r * u / (1.0 - self.params.rho());
            let tail = exp_series_tail(x, used);
            let certified = tail <= LST_TAIL_REL * sum;
            if !certified {
                return Err(Error::NotConverged {
                    iterations: used as u64,
                    residual: tail / sum,
                });
            }
        }
        Ok(1.0 / sum)
    }

    /// Sojourn LST with `k` permanent jobs: the base transform raised to the
    /// (k+1)-th power (the sojourn splits into k+1 independent copies).
    pub fn sojourn_lst_k(&self, r: f64, u: f64, terms: usize, k: u32) -> Result<f64> {
        Ok(self.sojourn_lst(r, u, terms)?.powi(k as i32 + 1))
    }

    /// W(x)/(1-rho) from the cached (eps-certified) W; linear interpolation
    /// between nodes. For partial sums above capacity use `wcirc_series`.
    pub fn wcirc(&self, x: f64) -> Result<WcircValue> {
        let w = self.waiting_cdf().value_at(x)?;
        Ok(WcircValue {
            value: w / (1.0 - self.params.rho()),
            terms_used: self.ladder_terms,
            partial: false,
        })
    }
}

/// Stationary waiting-time CDF of the underlying M/G/1 FCFS queue on a
/// lattice: the geometric mixture `(1-rho) sum_k rho^k F^{k*}(x)` of excess-law
/// convolutions, truncated once the neglected mixture mass certifies `eps`.
/// The atom at 0 is exactly 1-rho.
pub fn waiting_cdf(params: &ModelParams, step: f64, horizon: f64, eps: f64) -> Result<GriddedDf> {
    params.require_stable()?;
    let nodes = grid_nodes(step, horizon)?;
    let (mut powers, _) = accumulate_powers(params, step, nodes, eps, &[1])?;
    Ok(powers.pop().unwrap())
}

/// Partial sums of `sum_n rho^n F^{n*}(x)`, which equal W(x)/(1-rho) under
/// stability and remain finite (per-x) for any positive load. Below capacity
/// the sum is cut off once the geometric tail drops under `eps` (certified);
/// at or above capacity exactly `max_terms` terms are reported and the result
/// is flagged partial.
pub fn wcirc_series(
    params: &ModelParams,
    step: f64,
    x: f64,
    max_terms: usize,
    eps: f64,
) -> Result<WcircValue> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::InvalidConfig(format!("x must be finite and nonnegative, got {x}")));
    }
    if max_terms < 1 {
        return Err(Error::InvalidConfig("need at least one series term".into()));
    }
    let rho = params.rho();
    let nodes = grid_nodes(step, x.max(step))?;
    let m = ((x / step).round() as usize).min(nodes);
    let excess = GriddedDf::from_cdf_fn(step, nodes, 0.0, |t| params.service().excess_cdf(t))?;
    let mut value = 1.0; // n = 0: F^{0*}(x) = 1 for x >= 0
    let mut weight = 1.0;
    let mut terms_used = 1;
    let mut partial = true;
    let mut cur: Option<GriddedDf> = None;
    while terms_used < max_terms {
        if rho < 1.0 {
            // Geometric tail of the remaining weights.
            let tail = weight * rho / (1.0 - rho);
            if tail < eps {
                partial = false;
                break;
            }
        }
        cur = Some(match cur {
            None => excess.clone(),
            Some(prev) => prev.convolve(&excess)?,
        });
        weight *= rho;
        value += weight * cur.as_ref().unwrap().at_node(m);
        terms_used += 1;
    }
    if rho < 1.0 && terms_used == max_terms {
        partial = weight * rho / (1.0 - rho) >= eps;
    }
    Ok(WcircValue { value, terms_used, partial })
}

fn grid_nodes(step: f64, horizon: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
    }
    if !(horizon.is_finite() && horizon >= step) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} must be at least one step {step}"
        )));
    }
    Ok((horizon / step + 1e-9).floor() as usize)
}

/// One accumulator per requested power n of W.
struct PowerSeries {
    n: usize,
    coeff: f64,
    mass: f64,
    done: bool,
    atom: f64,
    nodes: Vec<f64>,
    terms: usize,
}

/// Single pass over the excess ladder F^{k*}, accumulating every requested
/// W^{n*} as a negative-binomial mixture:
/// `W^{n*}(x) = sum_k (1-rho)^n C(k+n-1, n-1) rho^k F^{k*}(x)`.
///
/// Each series stops once its neglected mixture mass drops below
/// `eps * (1-rho)`; the ladder stops when every series is done, so memory
/// stays at one ladder rung plus one accumulator per order.
fn accumulate_powers(
    params: &ModelParams,
    step: f64,
    nodes: usize,
    eps: f64,
    orders: &[usize],
) -> Result<(Vec<GriddedDf>, usize)> {
    let rho = params.rho();
    let one_minus = 1.0 - rho;
    let target = eps * one_minus;
    let excess = GriddedDf::from_cdf_fn(step, nodes, 0.0, |x| params.service().excess_cdf(x))?;

    let mut series: Vec<PowerSeries> = orders
        .iter()
        .map(|&n| {
            // k = 0 term: coefficient (1-rho)^n times the unit step.
            let c0 = one_minus.powi(n as i32);
            PowerSeries {
                n,
                coeff: c0,
                mass: c0,
                done: n == 0 || rho == 0.0 || 1.0 - c0 < target,
                atom: c0,
                nodes: vec![c0; nodes + 1],
                terms: 1,
            }
        })
        .collect();
    // W^{0*} is the unit step exactly: its only term is k = 0.
    for s in series.iter_mut().filter(|s| s.n == 0) {
        s.coeff = 1.0;
        s.mass = 1.0;
        s.atom = 1.0;
        s.nodes = vec![1.0; nodes + 1];
    }

    let mut ladder_terms = 1;
    let mut cur: Option<GriddedDf> = None;
    let mut k = 0usize;
    while series.iter().any(|s| !s.done) {
        k += 1;
        if k > MAX_LADDER_TERMS {
            let worst = series
                .iter()
                .filter(|s| !s.done)
                .map(|s| 1.0 - s.mass)
                .fold(0.0f64, f64::max);
            return Err(Error::NotConverged { iterations: k as u64, residual: worst });
        }
        cur = Some(match cur {
            None => excess.clone(),
            Some(prev) => prev.convolve(&excess)?,
        });
        let fk = cur.as_ref().unwrap();
        ladder_terms += 1;
        for s in series.iter_mut().filter(|s| !s.done) {
            // c_{n,k} = c_{n,k-1} * rho * (k+n-1)/k
            s.coeff *= rho * (k + s.n - 1) as f64 / k as f64;
            for i in 1..=nodes {
                s.nodes[i] += s.coeff * fk.at_node(i);
            }
            s.mass += s.coeff;
            s.terms += 1;
            if 1.0 - s.mass < target {
                s.done = true;
            }
        }
    }

    let mut out = Vec::with_capacity(series.len());
    for s in &series {
        out.push(GriddedDf::new(step, s.atom, s.nodes[1..].to_vec())?);
    }
    Ok((out, ladder_terms))
}

/// Upper bound on `sum_{n > used} x^n / n!` via the ratio test: the first
/// omitted term times a geometric majorant. Infinite when the majorant does
/// not apply (x too large for the cutoff).
fn exp_series_tail(x: f64, used: usize) -> f64 {
    let mut first = 1.0f64;
    for i in 1..=used + 1 {
        first *= x / i as f64;
        if !first.is_finite() {
            return f64::INFINITY;
        }
    }
    let ratio = x / (used as f64 + 2.0);
    if ratio < 1.0 {
        first / (1.0 - ratio)
    } else {
        f64::INFINITY
    }
}
