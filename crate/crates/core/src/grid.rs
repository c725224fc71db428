use std::io::Write;

use crate::error::{Error, Result};
use crate::service::ServiceDistribution;

/// Relative tolerance for deciding that two grid steps are "the same".
const STEP_TOL: f64 = 1e-12;

/// A distribution function on a uniform lattice with an explicit atom at the
/// origin.
///
/// `values[i]` is the CDF at `(i+1)*step`; the value at 0 is `atom0`. Keeping
/// the origin mass separate lets convolutions treat it exactly instead of
/// smearing it over the first cell, which matters because the waiting-time
/// law carries a large atom `1 - rho` at 0.
#[derive(Debug, Clone)]
pub struct GriddedDf {
    step: f64,
    atom0: f64,
    values: Vec<f64>,
    /// Last node index up to which the values are trustworthy. Plain
    /// constructions cover the whole lattice; combining operands of different
    /// lengths shrinks it.
    valid_to: usize,
}

/// A real-valued function sampled on the same lattice, `values[i]` at
/// `i*step`. Carrier for integrands and for the sojourn kernels.
#[derive(Debug, Clone)]
pub struct GridFunction {
    step: f64,
    values: Vec<f64>,
    valid_to: usize,
}

impl GriddedDf {
    /// Builds a DF from raw CDF values at `step, 2*step, ...`, checking the
    /// distribution-function invariants. Rounding noise up to 1e-12 below
    /// the running maximum is scrubbed so stored values are exactly monotone.
    pub fn new(step: f64, atom0: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
        }
        if !(0.0..=1.0 + 1e-9).contains(&atom0) {
            return Err(Error::InvalidConfig(format!("atom at 0 must lie in [0,1], got {atom0}")));
        }
        if values.is_empty() {
            return Err(Error::InvalidConfig("gridded DF needs at least one node beyond 0".into()));
        }
        let mut scrubbed = values;
        let mut prev = atom0;
        for (i, v) in scrubbed.iter_mut().enumerate() {
            if !v.is_finite() || *v < prev - 1e-12 || *v > 1.0 + 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "CDF values must be nondecreasing in [0,1]: node {} has {v} after {prev}",
                    i + 1
                )));
            }
            *v = v.max(prev).min(1.0);
            prev = *v;
        }
        let valid_to = scrubbed.len();
        Ok(GriddedDf { step, atom0: atom0.min(1.0), values: scrubbed, valid_to })
    }

    /// The unit step at 0 (all mass in the atom): the 0-fold convolution
    /// identity.
    pub fn unit_step(step: f64, nodes: usize) -> Self {
        GriddedDf {
            step,
            atom0: 1.0,
            values: vec![1.0; nodes.max(1)],
            valid_to: nodes.max(1),
        }
    }

    /// Samples a closure CDF at the lattice nodes.
    pub fn from_cdf_fn(step: f64, nodes: usize, atom0: f64, cdf: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (1..=nodes.max(1)).map(|i| cdf(i as f64 * step)).collect();
        GriddedDf::new(step, atom0, values)
    }

    /// Lattice representation of a service law's CDF. Interior atoms must sit
    /// on grid nodes (within 1e-9 of the step) so jumps stay sharp.
    pub fn from_distribution(d: &ServiceDistribution, step: f64, horizon: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
        }
        if horizon < step {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} must be at least one step {step}"
            )));
        }
        check_atoms_on_grid(d, step)?;
        let nodes = (horizon / step + 1e-9).floor() as usize;
        GriddedDf::from_cdf_fn(step, nodes, 0.0, |x| d.cdf(x))
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn atom0(&self) -> f64 {
        self.atom0
    }

    /// Number of lattice nodes beyond the origin.
    pub fn nodes(&self) -> usize {
        self.values.len()
    }

    pub fn valid_to(&self) -> usize {
        self.valid_to
    }

    /// Largest represented abscissa.
    pub fn horizon(&self) -> f64 {
        self.values.len() as f64 * self.step
    }

    /// CDF value at node `i` (node 0 is the origin).
    pub fn at_node(&self, i: usize) -> f64 {
        if i == 0 {
            self.atom0
        } else {
            self.values[i - 1]
        }
    }

    pub fn last_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// CDF at an arbitrary point by linear interpolation between nodes.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        let pos = x / self.step;
        let i = pos.floor() as usize;
        if pos > self.values.len() as f64 + 1e-9 {
            return Err(Error::HorizonExceeded { x, horizon: self.horizon() });
        }
        let i = i.min(self.values.len() - 1);
        let frac = pos - i as f64;
        Ok(self.at_node(i) + frac * (self.at_node(i + 1) - self.at_node(i)))
    }

    /// Mass increments over the cells `((i-1)h, ih]`, i = 1..=N.
    fn increments(&self) -> Vec<f64> {
        let mut dg = Vec::with_capacity(self.values.len());
        let mut prev = self.atom0;
        for &v in &self.values {
            dg.push(v - prev);
            prev = v;
        }
        dg
    }

    /// Full node vector including the origin.
    fn node_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        out.push(self.atom0);
        out.extend_from_slice(&self.values);
        out
    }

    /// Stieltjes convolution of two distribution functions on the same grid.
    /// The result is again a DF; origin atoms multiply.
    pub fn convolve(&self, other: &GriddedDf) -> Result<GriddedDf> {
        check_steps(self.step, other.step)?;
        let base = self.node_values();
        let mids = interior_midpoints(&base);
        let out = convolve_core(&base, &mids, other.atom0, &other.increments());
        let mut df = GriddedDf::new(self.step, self.atom0 * other.atom0, out[1..].to_vec())?;
        df.valid_to = self.valid_to.min(other.valid_to);
        Ok(df)
    }

    /// n-fold self-convolution; n = 0 gives the unit step at 0.
    pub fn self_convolve(&self, n: usize) -> Result<GriddedDf> {
        match n {
            0 => Ok(GriddedDf::unit_step(self.step, self.values.len())),
            _ => {
                let mut acc = self.clone();
                for _ in 1..n {
                    acc = acc.convolve(self)?;
                }
                Ok(acc)
            }
        }
    }

    /// Convolves a closure `f` against this DF:
    /// `out(u) = integral over [0,u] of f(u-x) dG(x)`, with the origin atom
    /// contributing `f(u)*atom0` exactly and cell mass weighted by `f` at the
    /// cell midpoint.
    pub fn convolve_fn(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        let n = self.values.len();
        let base: Vec<f64> = (0..=n).map(|i| f(i as f64 * self.step)).collect();
        let mids: Vec<f64> = (0..n).map(|i| f((i as f64 + 0.5) * self.step)).collect();
        let out = convolve_core(&base, &mids, self.atom0, &self.increments());
        GridFunction { step: self.step, values: out, valid_to: self.valid_to }
    }

    /// Two-column CSV dump for debugging.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "x,value")?;
        writeln!(w, "0,{}", self.atom0)?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", (i + 1) as f64 * self.step, v)?;
        }
        Ok(())
    }
}

impl GridFunction {
    pub fn from_values(step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidConfig("grid function needs at least two nodes".into()));
        }
        let valid_to = values.len() - 1;
        Ok(GridFunction { step, values, valid_to })
    }

    pub fn from_fn(step: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        GridFunction::from_values(step, (0..=nodes).map(|i| f(i as f64 * step)).collect())
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Index of the last node (values run over nodes 0..=last).
    pub fn last_node(&self) -> usize {
        self.values.len() - 1
    }

    pub fn valid_to(&self) -> usize {
        self.valid_to
    }

    pub fn at_node(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multiplies every node value in place.
    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Linear interpolation between nodes; errors past the horizon.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::InvalidConfig(format!("evaluation point must be nonnegative, got {x}")));
        }
        let pos = x / self.step;
        let last = self.last_node() as f64;
        if pos > last + 1e-9 {
            return Err(Error::HorizonExceeded { x, horizon: last * self.step });
        }
        let i = (pos.floor() as usize).min(self.last_node() - 1);
        let frac = pos - i as f64;
        Ok(self.values[i] + frac * (self.values[i + 1] - self.values[i]))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", i as f64 * self.step, v)?;
        }
        Ok(())
    }
}

/// Stieltjes convolution `(f * g)(u) = integral over [0,u] of f(u-x) dg(x)`
/// of a grid function against a gridded DF, on their common lattice.
///
/// The atom of `g` at 0 contributes `f(u) * atom0` exactly; each interior
/// cell contributes its mass increment weighted by `f` at the cell midpoint
/// (linear interpolation of the stored nodes).
pub fn stieltjes_convolve(f: &GridFunction, g: &GriddedDf) -> Result<GridFunction> {
    check_steps(f.step, g.step)?;
    let n = f.last_node().min(g.nodes());
    let base = &f.values[..=n];
    let mids = interior_midpoints(base);
    let out = convolve_core(base, &mids, g.atom0, &g.increments());
    Ok(GridFunction {
        step: f.step,
        values: out,
        valid_to: f.valid_to.min(g.valid_to),
    })
}

fn check_steps(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > STEP_TOL * a.max(b) {
        Err(Error::StepMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

fn check_atoms_on_grid(d: &ServiceDistribution, step: f64) -> Result<()> {
    for a in d.atoms() {
        let k = (a / step).round();
        if (a - k * step).abs() > 1e-9 * step {
            return Err(Error::AtomOffGrid { location: a, step });
        }
    }
    Ok(())
}

/// Midpoint values of a node-sampled function: average of adjacent nodes.
fn interior_midpoints(nodes: &[f64]) -> Vec<f64> {
    nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Shared quadrature core. With `base[i] = f(i h)`, `mid[i] ~ f((i+1/2) h)`
/// and `dg[i]` the mass of cell i+1,
/// `out[m] = base[m]*atom + sum_{i=1..m} mid[m-i] * dg[i-1]`.
fn convolve_core(base: &[f64], mid: &[f64], atom: f64, dg: &[f64]) -> Vec<f64> {
    let n = base.len() - 1;
    debug_assert!(mid.len() >= n && dg.len() >= n);
    // Reverse the midpoint table once so each output node reads two forward
    // slices; this keeps the O(N^2) inner loop a plain dot product.
    let mid_rev: Vec<f64> = mid[..n].iter().rev().copied().collect();
    let mut out = Vec::with_capacity(n + 1);
    out.push(base[0] * atom);
    for m in 1..=n {
        out.push(base[m] * atom + dot(&dg[..m], &mid_rev[n - m..]));
    }
    out
}

/// Dot product with four independent accumulators. The fixed association
/// order keeps results bit-reproducible while letting the FPU pipeline.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        s += xa * xb;
    }
    s
}
