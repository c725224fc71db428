use rand::Rng;

use crate::error::{Error, Result};

/// Maximum number of phases accepted for a hyperexponential law. Purely a
/// sanity bound against typo'd spec strings.
const MAX_PHASES: usize = 64;

/// Service-time distribution of an arriving job.
///
/// Every supported law has all moments finite, a closed-form CDF and LST, and
/// an inverse-CDF sampler, which keeps the analytic and simulation paths in
/// exact agreement about the model. Sizes are strictly positive: B(0) = 0.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceDistribution {
    Exponential {
        rate: f64,
    },
    Deterministic {
        size: f64,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    HyperExponential {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    /// Base law thinned by `1 - probe_prob`, plus an atom of mass
    /// `probe_prob` at `probe_size`. The atom marks "probe" jobs whose
    /// sojourn times the simulator records, so conditional-on-size
    /// statistics can be measured without changing the traffic mix.
    ProbeMixture {
        base: Box<ServiceDistribution>,
        probe_size: f64,
        probe_prob: f64,
    },
    /// Piecewise-linear CDF through (0, 0), (step, cdf[0]), (2 step, cdf[1]),
    /// ... with the last value pinned to 1.
    Tabulated {
        step: f64,
        cdf: Vec<f64>,
    },
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

fn finite_positive(x: f64, what: &str) -> Result<()> {
    require(x.is_finite() && x > 0.0, || {
        format!("{what} must be finite and positive, got {x}")
    })
}

impl ServiceDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        finite_positive(rate, "exponential rate")?;
        Ok(ServiceDistribution::Exponential { rate })
    }

    pub fn deterministic(size: f64) -> Result<Self> {
        finite_positive(size, "deterministic size")?;
        Ok(ServiceDistribution::Deterministic { size })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        require(shape >= 1, || "Erlang shape must be at least 1".into())?;
        finite_positive(rate, "Erlang rate")?;
        Ok(ServiceDistribution::Erlang { shape, rate })
    }

    /// Weights must be positive and sum to 1 within 1e-9; they are
    /// renormalised exactly so that downstream identities (LST(0) = 1, total
    /// mass 1) hold to machine precision.
    pub fn hyper_exponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        require(!weights.is_empty(), || {
            "hyperexponential needs at least one phase".into()
        })?;
        require(weights.len() == rates.len(), || {
            format!(
                "hyperexponential weight/rate count mismatch: {} vs {}",
                weights.len(),
                rates.len()
            )
        })?;
        require(weights.len() <= MAX_PHASES, || {
            format!("hyperexponential limited to {MAX_PHASES} phases")
        })?;
        for &w in &weights {
            finite_positive(w, "hyperexponential weight")?;
        }
        for &r in &rates {
            finite_positive(r, "hyperexponential rate")?;
        }
        let total: f64 = weights.iter().sum();
        require((total - 1.0).abs() <= 1e-9, || {
            format!("hyperexponential weights must sum to 1, got {total}")
        })?;
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(ServiceDistribution::HyperExponential { weights, rates })
    }

    pub fn probe_mixture(
        base: ServiceDistribution,
        probe_size: f64,
        probe_prob: f64,
    ) -> Result<Self> {
        finite_positive(probe_size, "probe size")?;
        require(
            probe_prob.is_finite() && probe_prob > 0.0 && probe_prob < 1.0,
            || format!("probe probability must lie in (0, 1), got {probe_prob}"),
        )?;
        require(!matches!(base, ServiceDistribution::ProbeMixture { .. }), || {
            "probe mixtures cannot be nested".into()
        })?;
        // The simulator identifies probes by their exact size, so the base
        // law must not place an atom on the same point.
        require(!base.atoms().contains(&probe_size), || {
            format!("base law already has an atom at the probe size {probe_size}")
        })?;
        Ok(ServiceDistribution::ProbeMixture {
            base: Box::new(base),
            probe_size,
            probe_prob,
        })
    }

    pub fn tabulated(step: f64, mut cdf: Vec<f64>) -> Result<Self> {
        finite_positive(step, "table step")?;
        require(!cdf.is_empty(), || "table must have at least one row".into())?;
        let mut prev = 0.0;
        for (i, v) in cdf.iter_mut().enumerate() {
            require(v.is_finite() && *v >= -1e-12 && *v <= 1.0 + 1e-9, || {
                format!("table value {v} at row {i} outside [0, 1]")
            })?;
            require(*v >= prev - 1e-12, || {
                format!("table values must be nondecreasing (row {i})")
            })?;
            // Scrub rounding noise so the stored CDF is exactly monotone.
            *v = v.clamp(prev, 1.0);
            prev = *v;
        }
        let last = *cdf.last().unwrap();
        require((last - 1.0).abs() <= 1e-9, || {
            format!("table must reach 1 at its right end, got {last}")
        })?;
        *cdf.last_mut().unwrap() = 1.0;
        Ok(ServiceDistribution::Tabulated { step, cdf })
    }

    /// Parses the textual spec used on the command line:
    /// `exp:RATE`, `det:SIZE`, `erlang:SHAPE:RATE`,
    /// `hyperexp:w1:r1:w2:r2[:...]`, `mix:BASE_SPEC:PROBE_SIZE:PROBE_PROB`,
    /// `table:PATH`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("dist spec '{spec}': {msg}"));
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let fields = || -> Result<Vec<f64>> {
            if rest.is_empty() {
                return Err(bad("missing parameters".into()));
            }
            rest.split(':')
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| bad(format!("'{tok}' is not a number")))
                })
                .collect()
        };
        match kind {
            "exp" => {
                let f = fields()?;
                require(f.len() == 1, || format!("dist spec '{spec}': expected exp:RATE"))?;
                Self::exponential(f[0])
            }
            "det" => {
                let f = fields()?;
                require(f.len() == 1, || format!("dist spec '{spec}': expected det:SIZE"))?;
                Self::deterministic(f[0])
            }
            "erlang" => {
                let f = fields()?;
                require(f.len() == 2, || {
                    format!("dist spec '{spec}': expected erlang:SHAPE:RATE")
                })?;
                require(f[0].fract() == 0.0 && f[0] >= 1.0 && f[0] <= u32::MAX as f64, || {
                    format!("dist spec '{spec}': shape must be a positive integer")
                })?;
                Self::erlang(f[0] as u32, f[1])
            }
            "hyperexp" => {
                let f = fields()?;
                require(f.len() >= 2 && f.len() % 2 == 0, || {
                    format!("dist spec '{spec}': expected hyperexp:w1:r1[:w2:r2...]")
                })?;
                let weights = f.iter().step_by(2).copied().collect();
                let rates = f.iter().skip(1).step_by(2).copied().collect();
                Self::hyper_exponential(weights, rates)
            }
            "mix" => {
                // The base spec may itself contain colons, so split the last
                // two fields off the right.
                let mut it = rest.rsplitn(3, ':');
                let prob_tok = it.next().unwrap_or("");
                let size_tok = it.next().unwrap_or("");
                let base_spec = it.next().unwrap_or("");
                require(!base_spec.is_empty(), || {
                    format!("dist spec '{spec}': expected mix:BASE_SPEC:PROBE_SIZE:PROBE_PROB")
                })?;
                let probe_size = size_tok
                    .parse::<f64>()
                    .map_err(|_| bad(format!("probe size '{size_tok}' is not a number")))?;
                let probe_prob = prob_tok
                    .parse::<f64>()
                    .map_err(|_| bad(format!("probe probability '{prob_tok}' is not a number")))?;
                Self::probe_mixture(Self::from_spec(base_spec)?, probe_size, probe_prob)
            }
            "table" => {
                require(!rest.is_empty(), || {
                    format!("dist spec '{spec}': expected table:PATH")
                })?;
                let text = std::fs::read_to_string(rest).map_err(|e| {
                    Error::InvalidConfig(format!("cannot read table '{rest}': {e}"))
                })?;
                Self::from_table_text(&text)
                    .map_err(|e| Error::InvalidConfig(format!("table '{rest}': {e}")))
            }
            other => Err(bad(format!("unknown distribution kind '{other}'"))),
        }
    }

    /// Parses two-column `x,B(x)` text (comments `#` and a header line are
    /// tolerated). The x values must form a uniform grid; a leading `0,0` row
    /// is optional.
    pub fn from_table_text(text: &str) -> Result<Self> {
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (xa, va) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let parsed = (xa.parse::<f64>(), va.parse::<f64>());
            match parsed {
                (Ok(x), Ok(v)) => rows.push((x, v)),
                _ if rows.is_empty() => continue, // header line
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: expected 'x,value', got '{line}'",
                        lineno + 1
                    )))
                }
            }
        }
        if let Some(&(x0, v0)) = rows.first() {
            if x0 == 0.0 {
                require(v0 == 0.0, || "B(0) must be 0".into())?;
                rows.remove(0);
            }
        }
        require(!rows.is_empty(), || "table has no data rows".into())?;
        let step = rows[0].0;
        finite_positive(step, "table step")?;
        for (i, &(x, _)) in rows.iter().enumerate() {
            let expected = (i + 1) as f64 * step;
            require((x - expected).abs() <= 1e-6 * step, || {
                format!("x values must be uniformly spaced: row {} has x = {x}, expected {expected}", i + 1)
            })?;
        }
        Self::tabulated(step, rows.into_iter().map(|(_, v)| v).collect())
    }

    /// P(size <= x). Right-continuous; atoms are included at their location.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            ServiceDistribution::Exponential { rate } => -(-rate * x).exp_m1(),
            ServiceDistribution::Deterministic { size } => {
                if x >= *size {
                    1.0
                } else {
                    0.0
                }
            }
            ServiceDistribution::Erlang { shape, rate } => {
                // 1 - e^{-rate x} sum_{m<shape} (rate x)^m / m!
                let y = rate * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for m in 1..*shape {
                    term *= y / m as f64;
                    sum += term;
                }
                1.0 - (-y).exp() * sum
            }
            ServiceDistribution::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * -(-r * x).exp_m1())
                .sum(),
            ServiceDistribution::ProbeMixture {
                base,
                probe_size,
                probe_prob,
            } => {
                let atom = if x >= *probe_size { *probe_prob } else { 0.0 };
                (1.0 - probe_prob) * base.cdf(x) + atom
            }
            ServiceDistribution::Tabulated { step, cdf } => {
                let n = cdf.len();
                if x >= n as f64 * step {
                    return 1.0;
                }
                let pos = x / step;
                let i = pos.floor() as usize; // segment [i step, (i+1) step)
                let frac = pos - i as f64;
                let lo = if i == 0 { 0.0 } else { cdf[i - 1] };
                let hi = cdf[i.min(n - 1)];
                lo + frac * (hi - lo)
            }
        }
    }

    /// Raw moment E[size^order]; order 0 gives 1. Finite for every supported
    /// law.
    pub fn moment(&self, order: u32) -> f64 {
        if order == 0 {
            return 1.0;
        }
        match self {
            ServiceDistribution::Exponential { rate } => {
                let mut m = 1.0;
                for j in 1..=order {
                    m *= j as f64 / rate;
                }
                m
            }
            ServiceDistribution::Deterministic { size } => size.powi(order as i32),
            ServiceDistribution::Erlang { shape, rate } => {
                // shape (shape+1) ... (shape+order-1) / rate^order
                let mut m = 1.0;
                for j in 0..order {
                    m *= (*shape as f64 + j as f64) / rate;
                }
                m
            }
            ServiceDistribution::HyperExponential { weights, rates } => {
                let mut fact = 1.0;
                for j in 1..=order {
                    fact *= j as f64;
                }
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w * fact / r.powi(order as i32))
                    .sum()
            }
            ServiceDistribution::ProbeMixture {
                base,
                probe_size,
                probe_prob,
            } => {
                (1.0 - probe_prob) * base.moment(order)
                    + probe_prob * probe_size.powi(order as i32)
            }
            ServiceDistribution::Tabulated { step, cdf } => {
                // Midpoint Stieltjes sum, matching the lattice quadrature used
                // everywhere else; exact for the mean because segments are
                // linear.
                let mut sum = 0.0;
                let mut prev = 0.0;
                for (i, &v) in cdf.iter().enumerate() {
                    let mid = (i as f64 + 0.5) * step;
                    sum += (v - prev) * mid.powi(order as i32);
                    prev = v;
                }
                sum
            }
        }
    }

    /// Mean job size.
    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Laplace-Stieltjes transform E[e^{-s size}] for s >= 0.
    pub fn lst(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "LST evaluated at negative argument");
        match self {
            ServiceDistribution::Exponential { rate } => rate / (rate + s),
            ServiceDistribution::Deterministic { size } => (-s * size).exp(),
            ServiceDistribution::Erlang { shape, rate } => {
                (rate / (rate + s)).powi(*shape as i32)
            }
            ServiceDistribution::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * r / (r + s))
                .sum(),
            ServiceDistribution::ProbeMixture {
                base,
                probe_size,
                probe_prob,
            } => (1.0 - probe_prob) * base.lst(s) + probe_prob * (-s * probe_size).exp(),
            ServiceDistribution::Tabulated { step, cdf } => {
                let mut sum = 0.0;
                let mut prev = 0.0;
                for (i, &v) in cdf.iter().enumerate() {
                    let mid = (i as f64 + 0.5) * step;
                    sum += (v - prev) * (-s * mid).exp();
                    prev = v;
                }
                sum
            }
        }
    }

    /// Stationary-excess (equilibrium residual) CDF
    /// F(x) = (1/mean) * integral_0^x (1 - B(t)) dt.
    ///
    /// This is the increment law of the ladder underlying the waiting-time
    /// distribution; it is always continuous even when the service law has
    /// atoms.
    pub fn excess_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            ServiceDistribution::Exponential { rate } => -(-rate * x).exp_m1(),
            ServiceDistribution::Deterministic { size } => (x / size).min(1.0),
            ServiceDistribution::Erlang { shape, rate } => {
                // 1 - (e^{-rate x}/shape) sum_{j<shape} (shape-j) (rate x)^j / j!
                let k = *shape as f64;
                let y = rate * x;
                let mut term = 1.0;
                let mut sum = k;
                for j in 1..*shape {
                    term *= y / j as f64;
                    sum += (k - j as f64) * term;
                }
                1.0 - (-y).exp() * sum / k
            }
            ServiceDistribution::HyperExponential { weights, rates } => {
                // Excess of a hyperexponential is hyperexponential with
                // weights proportional to w_i / r_i.
                let mean: f64 = weights.iter().zip(rates).map(|(w, r)| w / r).sum();
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| (w / r) * -(-r * x).exp_m1())
                    .sum::<f64>()
                    / mean
            }
            ServiceDistribution::ProbeMixture {
                base,
                probe_size,
                probe_prob,
            } => {
                let base_mean = base.mean();
                let mean = (1.0 - probe_prob) * base_mean + probe_prob * probe_size;
                ((1.0 - probe_prob) * base_mean * base.excess_cdf(x)
                    + probe_prob * x.min(*probe_size))
                    / mean
            }
            ServiceDistribution::Tabulated { step, cdf } => {
                // B is piecewise linear, so integrate 1 - B segment by
                // segment in closed form.
                let n = cdf.len();
                let mut integral = 0.0;
                let mut prev = 0.0;
                let full = ((x / step).floor() as usize).min(n);
                for &v in cdf.iter().take(full) {
                    integral += step * (1.0 - 0.5 * (prev + v));
                    prev = v;
                }
                if full < n {
                    let x0 = full as f64 * step;
                    let dx = x - x0;
                    let slope = (cdf[full] - prev) / step;
                    // integral of (1 - prev - slope t) dt over [0, dx]
                    integral += dx * (1.0 - prev) - 0.5 * slope * dx * dx;
                }
                (integral / self.mean()).min(1.0)
            }
        }
    }

    /// Locations of point masses; empty for continuous laws.
    pub fn atoms(&self) -> Vec<f64> {
        match self {
            ServiceDistribution::Deterministic { size } => vec![*size],
            ServiceDistribution::ProbeMixture {
                base, probe_size, ..
            } => {
                let mut a = base.atoms();
                a.push(*probe_size);
                a
            }
            _ => Vec::new(),
        }
    }

    /// The probe atom location, if this law carries one.
    pub fn probe_size(&self) -> Option<f64> {
        match self {
            ServiceDistribution::ProbeMixture { probe_size, .. } => Some(*probe_size),
            _ => None,
        }
    }

    /// Draws one job size by CDF inversion. Probe draws return `probe_size`
    /// exactly (bit-for-bit), which is how the simulator recognises them.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceDistribution::Exponential { rate } => exp_draw(rng, *rate),
            ServiceDistribution::Deterministic { size } => *size,
            ServiceDistribution::Erlang { shape, rate } => {
                let mut total = 0.0;
                for _ in 0..*shape {
                    total += exp_draw(rng, *rate);
                }
                total
            }
            ServiceDistribution::HyperExponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, r) in weights.iter().zip(rates) {
                    acc += w;
                    if u < acc {
                        return exp_draw(rng, *r);
                    }
                }
                exp_draw(rng, *rates.last().unwrap())
            }
            ServiceDistribution::ProbeMixture {
                base,
                probe_size,
                probe_prob,
            } => {
                if rng.random::<f64>() < *probe_prob {
                    *probe_size
                } else {
                    base.sample(rng)
                }
            }
            ServiceDistribution::Tabulated { step, cdf } => {
                let u: f64 = rng.random();
                let i = cdf.partition_point(|&v| v < u);
                let i = i.min(cdf.len() - 1);
                let lo = if i == 0 { 0.0 } else { cdf[i - 1] };
                let hi = cdf[i];
                let frac = if hi > lo { (u - lo) / (hi - lo) } else { 1.0 };
                (i as f64 + frac) * step
            }
        }
    }
}

fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random(); // in [0, 1)
    -(-u).ln_1p() / rate // -ln(1 - u) / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Simpson integration, used as an independent quadrature oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let n = panels * 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn exponential_closed_forms() {
        let d = ServiceDistribution::exponential(2.0).unwrap();
        assert!((d.cdf(0.5) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((d.moment(1) - 0.5).abs() < 1e-15);
        assert!((d.moment(2) - 0.5).abs() < 1e-15);
        assert!((d.moment(3) - 0.75).abs() < 1e-15);
        assert!((d.lst(3.0) - 0.4).abs() < 1e-15);
        // Excess of an exponential is the same exponential.
        for x in [0.1, 1.0, 4.0] {
            assert!((d.excess_cdf(x) - d.cdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_closed_forms() {
        let d = ServiceDistribution::deterministic(2.0).unwrap();
        assert_eq!(d.cdf(1.999), 0.0);
        assert_eq!(d.cdf(2.0), 1.0);
        assert_eq!(d.moment(3), 8.0);
        assert!((d.lst(0.5) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((d.excess_cdf(0.5) - 0.25).abs() < 1e-15);
        assert_eq!(d.excess_cdf(3.0), 1.0);
        assert_eq!(d.atoms(), vec![2.0]);
    }

    #[test]
    fn erlang_matches_quadrature() {
        let d = ServiceDistribution::erlang(3, 1.5).unwrap();
        let density = |x: f64| 1.5 * (1.5 * x) * (1.5 * x) / 2.0 * (-1.5 * x).exp();
        for x in [0.4, 1.0, 2.0, 5.0] {
            let cdf = simpson(density, 0.0, x, 4000);
            assert!((d.cdf(x) - cdf).abs() < 1e-10, "cdf({x})");
            let excess = simpson(|t| (1.0 - d.cdf(t)) / 2.0, 0.0, x, 4000);
            assert!((d.excess_cdf(x) - excess).abs() < 1e-10, "excess({x})");
        }
        assert!((d.mean() - 2.0).abs() < 1e-15);
        assert!((d.moment(2) - 12.0 / 2.25).abs() < 1e-12);
        let lst = simpson(|x| (-0.7 * x).exp() * density(x), 0.0, 60.0, 60_000);
        assert!((d.lst(0.7) - lst).abs() < 1e-9);
    }

    #[test]
    fn hyperexponential_matches_quadrature() {
        let d =
            ServiceDistribution::hyper_exponential(vec![0.3, 0.7], vec![0.5, 2.0]).unwrap();
        assert!((d.mean() - (0.3 / 0.5 + 0.7 / 2.0)).abs() < 1e-15);
        for x in [0.3, 1.0, 3.0] {
            let excess = simpson(|t| (1.0 - d.cdf(t)) / d.mean(), 0.0, x, 4000);
            assert!((d.excess_cdf(x) - excess).abs() < 1e-10);
        }
        assert!((d.lst(1.0) - (0.3 * 0.5 / 1.5 + 0.7 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn probe_mixture_splits_mass() {
        let base = ServiceDistribution::exponential(1.0).unwrap();
        let d = ServiceDistribution::probe_mixture(base, 1.0, 0.1).unwrap();
        let below = 0.9 * (1.0 - (-1.0f64 + 1e-9).exp());
        assert!((d.cdf(1.0 - 1e-9) - below).abs() < 1e-12);
        assert!((d.cdf(1.0) - (0.9 * (1.0 - (-1.0f64).exp()) + 0.1)).abs() < 1e-12);
        assert!((d.mean() - 1.0).abs() < 1e-15);
        assert!((d.lst(0.5) - (0.9 / 1.5 + 0.1 * (-0.5f64).exp())).abs() < 1e-15);
        // Excess CDF from first principles.
        let excess = simpson(|t| 1.0 - d.cdf(t), 0.0, 0.8, 4000) / d.mean();
        assert!((d.excess_cdf(0.8) - excess).abs() < 1e-10);
        assert_eq!(d.probe_size(), Some(1.0));
    }

    #[test]
    fn tabulated_tracks_its_source() {
        let exp = ServiceDistribution::exponential(1.0).unwrap();
        let step = 1e-3;
        let n = 25_000; // horizon 25, tail mass ~1.4e-11
        let mut cdf: Vec<f64> = (1..=n).map(|i| exp.cdf(i as f64 * step)).collect();
        *cdf.last_mut().unwrap() = 1.0;
        let tab = ServiceDistribution::tabulated(step, cdf).unwrap();
        for x in [0.25, 1.0, 3.0] {
            assert!((tab.cdf(x) - exp.cdf(x)).abs() < 1e-6);
            assert!((tab.excess_cdf(x) - exp.excess_cdf(x)).abs() < 1e-6);
        }
        assert!((tab.mean() - 1.0).abs() < 1e-6);
        assert!((tab.moment(2) - 2.0).abs() < 1e-5);
        assert!((tab.lst(1.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn table_text_parses_and_validates() {
        let d = ServiceDistribution::from_table_text(
            "# demo\nx,cdf\n0,0\n0.5,0.25\n1.0,0.75\n1.5,1.0\n",
        )
        .unwrap();
        assert!((d.mean() - (0.25 * 0.25 + 0.5 * 0.75 + 0.25 * 1.25)).abs() < 1e-15);
        assert!(ServiceDistribution::from_table_text("0.5,0.2\n1.2,1.0\n").is_err());
        assert!(ServiceDistribution::from_table_text("0.5,0.2\n1.0,0.9\n").is_err());
        assert!(ServiceDistribution::from_table_text("0.5,0.9\n1.0,0.2\n").is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        let cases = [
            ("exp:2.0", ServiceDistribution::exponential(2.0).unwrap()),
            ("det:1.5", ServiceDistribution::deterministic(1.5).unwrap()),
            (
                "erlang:3:1.5",
                ServiceDistribution::erlang(3, 1.5).unwrap(),
            ),
            (
                "hyperexp:0.3:0.5:0.7:2.0",
                ServiceDistribution::hyper_exponential(vec![0.3, 0.7], vec![0.5, 2.0]).unwrap(),
            ),
            (
                "mix:exp:1.0:1.0:0.1",
                ServiceDistribution::probe_mixture(
                    ServiceDistribution::exponential(1.0).unwrap(),
                    1.0,
                    0.1,
                )
                .unwrap(),
            ),
            (
                "mix:erlang:2:4.0:0.5:0.2",
                ServiceDistribution::probe_mixture(
                    ServiceDistribution::erlang(2, 4.0).unwrap(),
                    0.5,
                    0.2,
                )
                .unwrap(),
            ),
        ];
        for (spec, want) in cases {
            assert_eq!(ServiceDistribution::from_spec(spec).unwrap(), want, "{spec}");
        }
        for bad in [
            "exp", "exp:-1", "exp:abc", "det:0", "erlang:0:1", "erlang:1.5:1",
            "hyperexp:0.5:1.0", "hyperexp:0.5:1.0:0.6:2.0", "mix:exp:1.0:1.0:1.5",
            "mix:exp:1.0:1.0", "pareto:2", "",
        ] {
            assert!(
                ServiceDistribution::from_spec(bad).is_err(),
                "spec '{bad}' should be rejected"
            );
        }
    }

    #[test]
    fn nested_probe_mixture_rejected() {
        let inner = ServiceDistribution::probe_mixture(
            ServiceDistribution::exponential(1.0).unwrap(),
            1.0,
            0.1,
        )
        .unwrap();
        assert!(ServiceDistribution::probe_mixture(inner, 2.0, 0.1).is_err());
        let det = ServiceDistribution::deterministic(1.0).unwrap();
        assert!(ServiceDistribution::probe_mixture(det, 1.0, 0.1).is_err());
    }

    #[test]
    fn sampling_agrees_with_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let laws = [
            ServiceDistribution::exponential(2.0).unwrap(),
            ServiceDistribution::erlang(3, 1.5).unwrap(),
            ServiceDistribution::hyper_exponential(vec![0.3, 0.7], vec![0.5, 2.0]).unwrap(),
            ServiceDistribution::from_spec("mix:exp:1.0:1.0:0.1").unwrap(),
        ];
        for d in &laws {
            let n = 200_000;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..n {
                let x = d.sample(&mut rng);
                assert!(x > 0.0);
                sum += x;
                sum2 += x * x;
            }
            let mean = sum / n as f64;
            let m2 = sum2 / n as f64;
            assert!(
                (mean - d.mean()).abs() < 0.02 * d.mean(),
                "{d:?}: sample mean {mean} vs {}",
                d.mean()
            );
            assert!(
                (m2 - d.moment(2)).abs() < 0.05 * d.moment(2),
                "{d:?}: sample second moment {m2} vs {}",
                d.moment(2)
            );
        }
    }

    #[test]
    fn probe_draws_are_bit_exact() {
        let d = ServiceDistribution::from_spec("mix:exp:1.0:1.0:0.1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let probes = (0..n)
            .filter(|_| d.sample(&mut rng).to_bits() == 1.0f64.to_bits())
            .count();
        let frac = probes as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.005, "probe fraction {frac}");
    }

    #[test]
    fn tabulated_sampler_inverts_the_cdf() {
        let exp = ServiceDistribution::exponential(1.0).unwrap();
        let cdf: Vec<f64> = (1..=2000).map(|i| exp.cdf(i as f64 * 0.01)).collect();
        let mut cdf = cdf;
        *cdf.last_mut().unwrap() = 1.0;
        let tab = ServiceDistribution::tabulated(0.01, cdf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| tab.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - tab.mean()).abs() < 0.02);
    }
}
