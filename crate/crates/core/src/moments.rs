use crate::error::{Error, Result};
use crate::kernel::KernelWorkspace;
use crate::model::ModelParams;

/// Largest moment order the recursion accepts. The alternating sum needs
/// exact binomial coefficients, which integer arithmetic guarantees through
/// this order; beyond it, cancellation behavior is unvalidated.
pub const MAX_MOMENT_ORDER: usize = 30;

/// Conditional raw moments E[V_K(u)^n] tabulated over the workspace grid.
///
/// `row(n)[i]` holds the n-th moment at `u = i * step`. Tables are produced
/// for the base queue (K = 0) by `moments_upto` and lifted to K permanent
/// jobs by `k_moments`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    step: f64,
    order: usize,
    k: u32,
    rows: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Permanent-job count this table describes.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn last_node(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn u_grid(&self) -> Vec<f64> {
        (0..=self.last_node()).map(|i| i as f64 * self.step).collect()
    }

    /// n-th moment at grid node `i` (n = 1..=order).
    pub fn at_node(&self, n: usize, i: usize) -> f64 {
        self.rows[n - 1][i]
    }

    /// n-th moment at an arbitrary `u`, linearly interpolated between nodes
    /// (O(step) error off the lattice).
    pub fn value(&self, n: usize, u: f64) -> Result<f64> {
        if n == 0 {
            return Ok(1.0);
        }
        if n > self.order {
            return Err(Error::InvalidConfig(format!(
                "table holds moments up to order {}, asked for {n}",
                self.order
            )));
        }
        if !(u.is_finite() && u >= 0.0) {
            return Err(Error::InvalidConfig(format!("u must be finite and nonnegative, got {u}")));
        }
        let pos = u / self.step;
        let last = self.last_node();
        if pos > last as f64 + 1e-9 {
            return Err(Error::HorizonExceeded { x: u, horizon: last as f64 * self.step });
        }
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        let row = &self.rows[n - 1];
        Ok(row[i] + frac * (row[i + 1] - row[i]))
    }
}

/// E[V_K(u)]: the sojourn time of a size-u job among K permanent jobs,
/// (K+1) * u / (1 - rho). Exact, no grid involved.
pub fn conditional_mean(params: &ModelParams, u: f64) -> Result<f64> {
    params.require_stable()?;
    if !(u.is_finite() && u >= 0.0) {
        return Err(Error::InvalidConfig(format!("u must be finite and nonnegative, got {u}")));
    }
    Ok((params.k() as f64 + 1.0) * u / (1.0 - params.rho()))
}

/// Var[V_K(u)] by the integral route:
/// (K+1) * 2/(1-rho)^2 * integral_0^u (u-x)(1 - W(x)) dx,
/// with the integral taken as a trapezoid sum over the workspace grid.
pub fn conditional_variance(params: &ModelParams, u: f64, ws: &KernelWorkspace) -> Result<f64> {
    params.require_stable()?;
    if !(u.is_finite() && u >= 0.0) {
        return Err(Error::InvalidConfig(format!("u must be finite and nonnegative, got {u}")));
    }
    if u > ws.horizon() + 1e-9 * ws.step() {
        return Err(Error::HorizonExceeded { x: u, horizon: ws.horizon() });
    }
    let w = ws.waiting_cdf();
    let h = ws.step();
    let full = (u / h + 1e-9).floor() as usize;
    let g = |i: usize| (u - i as f64 * h) * (1.0 - w.at_node(i));
    let mut integral = 0.0;
    for i in 1..=full {
        integral += 0.5 * h * (g(i - 1) + g(i));
    }
    let rest = u - full as f64 * h;
    if rest > 1e-12 * h {
        // The integrand vanishes at x = u, so the stub is a half-triangle.
        integral += 0.5 * rest * g(full);
    }
    let scale = 2.0 / ((1.0 - params.rho()) * (1.0 - params.rho()));
    Ok((params.k() as f64 + 1.0) * scale * integral)
}

/// Leading small-u behavior of the conditional variance:
/// (K+1) * u^2 * rho / (1-rho)^2.
pub fn small_u_var_asymptote(params: &ModelParams, u: f64) -> Result<f64> {
    params.require_stable()?;
    if !(u.is_finite() && u >= 0.0) {
        return Err(Error::InvalidConfig(format!("u must be finite and nonnegative, got {u}")));
    }
    let om = 1.0 - params.rho();
    Ok((params.k() as f64 + 1.0) * u * u * params.rho() / (om * om))
}

/// Raw moments of the base queue (K = 0) up to `order`, per grid node, via
/// the alternating recursion
/// `v_n(u) = sum_{i=1..n} C(n,i) (-1)^{i+1} xi_i(u) v_{n-i}(u)`, seeded by
/// `v_0 = 1`.
pub fn moments_upto(params: &ModelParams, order: usize, ws: &KernelWorkspace) -> Result<MomentTable> {
    params.require_stable()?;
    if params.k() != 0 {
        return Err(Error::InvalidConfig(
            "base moment tables are computed for K = 0; lift with k_moments".into(),
        ));
    }
    if order < 1 {
        return Err(Error::InvalidConfig("moment order must be at least 1".into()));
    }
    if order > MAX_MOMENT_ORDER {
        return Err(Error::OrderTooLarge { order, max: MAX_MOMENT_ORDER });
    }
    if order > ws.max_order() {
        return Err(Error::InvalidConfig(format!(
            "workspace caches kernels up to order {}, asked for {order}; rebuild it larger",
            ws.max_order()
        )));
    }
    let binom = pascal(order);
    let nodes = ws.nodes();
    let xen: Vec<&[f64]> = (1..=order)
        .map(|n| Ok(ws.xi(n)?.values()))
        .collect::<Result<_>>()?;
    let mut rows = vec![vec![0.0f64; nodes + 1]; order];
    let mut v = vec![0.0f64; order + 1];
    for node in 0..=nodes {
        v[0] = 1.0;
        for n in 1..=order {
            let mut acc = 0.0;
            for i in 1..=n {
                let term = binom[n][i] * xen[i - 1][node] * v[n - i];
                if i % 2 == 1 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            v[n] = acc;
            rows[n - 1][node] = acc;
        }
    }
    Ok(MomentTable { step: ws.step(), order, k: 0, rows })
}

/// Lifts a K = 0 table to K permanent jobs. The sojourn with K permanent
/// jobs is a sum of K+1 independent copies of the base sojourn, so raw
/// moments compose by the binomial convolution
/// `m^{(j+1)}_n = sum_i C(n,i) m^{(j)}_{n-i} v_i`, applied K times.
pub fn k_moments(base: &MomentTable, k: u32) -> MomentTable {
    if base.k != 0 {
        // Composing onto an already-lifted table would double-count copies.
        panic!("k_moments expects a base table with K = 0, got K = {}", base.k);
    }
    if k == 0 {
        return base.clone();
    }
    let order = base.order;
    let binom = pascal(order);
    let nodes = base.rows[0].len() - 1;
    let mut rows = vec![vec![0.0f64; nodes + 1]; order];
    let mut cur = vec![0.0f64; order + 1];
    let mut next = vec![0.0f64; order + 1];
    for node in 0..=nodes {
        cur[0] = 1.0;
        for (c, row) in cur[1..].iter_mut().zip(&base.rows) {
            *c = row[node];
        }
        for _ in 0..k {
            next[0] = 1.0;
            for n in 1..=order {
                let mut acc = 0.0;
                for i in 0..=n {
                    let vi = if i == 0 { 1.0 } else { base.rows[i - 1][node] };
                    acc += binom[n][i] * cur[n - i] * vi;
                }
                next[n] = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (row, &c) in rows.iter_mut().zip(&cur[1..]) {
            row[node] = c;
        }
    }
    MomentTable { step: base.step, order, k, rows }
}

/// Pascal's triangle through `order`, computed in u64 and handed out as f64.
/// Exact for every order this module accepts.
fn pascal(order: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<u64>> = Vec::with_capacity(order + 1);
    rows.push(vec![1]);
    for n in 1..=order {
        let prev = &rows[n - 1];
        let mut row = vec![1u64; n + 1];
        for i in 1..n {
            row[i] = prev[i - 1] + prev[i];
        }
        rows.push(row);
    }
    rows.into_iter()
        .map(|r| r.into_iter().map(|c| c as f64).collect())
        .collect()
}
