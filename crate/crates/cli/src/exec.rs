use psq_core::kernel::KernelWorkspace;
use psq_core::mg1::{qlen_mean, qlen_pmf, BusyPeriodSolver};
use psq_core::moments::{conditional_mean, conditional_variance, k_moments, moments_upto};
use psq_core::sim::{self, SimConfig};
use psq_core::Result;

use crate::args::{Command, Prepared, ResolvedGrid, SimArgs};
use crate::report::{Controls, Diagnostics, ModelInfo, Report, Row};

/// Runs the requested engine. Returns the report plus the process exit code
/// (nonzero only for a failed validation).
pub fn execute(p: &Prepared) -> Result<(Report, u8)> {
    let (name, controls, rows, diagnostics, code) = match &p.command {
        Command::Moments { u, order, .. } => run_moments(p, u, *order)?,
        Command::Variance { u, .. } => run_variance(p, u)?,
        Command::Lst { u, r, terms, .. } => run_lst(p, u, r, *terms)?,
        Command::Qlen { max_n, .. } => run_qlen(p, *max_n)?,
        Command::Busy { r, .. } => run_busy(p, r)?,
        Command::Wdist { max_x, stride, .. } => run_wdist(p, *max_x, *stride)?,
        Command::Simulate { sim, order, r, grid_step, .. } => {
            run_simulate(p, sim, *order, r, *grid_step)?
        }
        Command::Validate { sim, order, r, terms, .. } => {
            run_validate(p, sim, *order, r, *terms)?
        }
    };
    let report = Report {
        command: name.to_string(),
        model: ModelInfo {
            lambda: p.params.lambda(),
            dist: p.dist_spec.clone(),
            k: p.params.k(),
            rho: p.params.rho(),
        },
        controls,
        results: rows,
        diagnostics,
    };
    Ok((report, code))
}

type Outcome = (&'static str, Controls, Vec<Row>, Diagnostics, u8);

fn grid_of(p: &Prepared) -> ResolvedGrid {
    p.grid.expect("command carries grid controls")
}

fn workspace(p: &Prepared, g: ResolvedGrid, max_order: usize) -> Result<KernelWorkspace> {
    // The kernel is independent of K; moments for K > 0 are lifted later.
    let base = p.params.with_k(0);
    KernelWorkspace::new(&base, g.step, g.horizon, g.eps, max_order)
}

fn grid_diagnostics(ws: &KernelWorkspace) -> Diagnostics {
    Diagnostics {
        truncation_terms: Some(ws.ladder_terms() as u64),
        grid_step: Some(ws.step()),
        iterations: None,
    }
}

fn run_moments(p: &Prepared, u: &[f64], order: usize) -> Result<Outcome> {
    let g = grid_of(p);
    let ws = workspace(p, g, order)?;
    let base = moments_upto(ws.params(), order, &ws)?;
    let table = k_moments(&base, p.params.k());
    let mut rows = Vec::new();
    for &u in u {
        for n in 1..=order {
            rows.push(Row::new("moment", table.value(n, u)?).at_u(u).at_n(n as u64));
        }
    }
    let controls = Controls {
        grid_step: Some(g.step),
        horizon: Some(g.horizon),
        eps: Some(g.eps),
        order: Some(order),
        u: Some(u.to_vec()),
        ..Default::default()
    };
    let diag = grid_diagnostics(&ws);
    Ok(("moments", controls, rows, diag, 0))
}

fn run_variance(p: &Prepared, u: &[f64]) -> Result<Outcome> {
    let g = grid_of(p);
    let ws = workspace(p, g, 1)?;
    let mut rows = Vec::new();
    for &u in u {
        rows.push(Row::new("mean", conditional_mean(&p.params, u)?).at_u(u));
        rows.push(Row::new("variance", conditional_variance(&p.params, u, &ws)?).at_u(u));
    }
    let controls = Controls {
        grid_step: Some(g.step),
        horizon: Some(g.horizon),
        eps: Some(g.eps),
        u: Some(u.to_vec()),
        ..Default::default()
    };
    let diag = grid_diagnostics(&ws);
    Ok(("variance", controls, rows, diag, 0))
}

fn run_lst(p: &Prepared, u: &[f64], r: &[f64], terms: usize) -> Result<Outcome> {
    let g = grid_of(p);
    let ws = workspace(p, g, terms)?;
    let mut rows = Vec::new();
    for &u0 in u {
        // Transform evaluation reads the kernel at a lattice point, so u
        // snaps to the nearest node; rows report the snapped value.
        let node = ((u0 / g.step).round() as usize).min(ws.nodes());
        let u_snap = node as f64 * g.step;
        for &r in r {
            let v = ws.sojourn_lst_k(r, u_snap, terms, p.params.k())?;
            rows.push(Row::new("lst", v).at_u(u_snap).at_r(r));
        }
    }
    let controls = Controls {
        grid_step: Some(g.step),
        horizon: Some(g.horizon),
        eps: Some(g.eps),
        terms: Some(terms),
        u: Some(u.to_vec()),
        r: Some(r.to_vec()),
        ..Default::default()
    };
    let diag = grid_diagnostics(&ws);
    Ok(("lst", controls, rows, diag, 0))
}

fn run_qlen(p: &Prepared, max_n: u64) -> Result<Outcome> {
    let mut rows = Vec::new();
    for n in 0..=max_n {
        rows.push(Row::new("qlen_pmf", qlen_pmf(&p.params, n)?).at_n(n));
    }
    rows.push(Row::new("qlen_mean", qlen_mean(&p.params)?));
    let controls = Controls { max_n: Some(max_n), ..Default::default() };
    Ok(("qlen", controls, rows, Diagnostics::default(), 0))
}

fn run_busy(p: &Prepared, r: &[f64]) -> Result<Outcome> {
    let solver = BusyPeriodSolver::new(p.params.clone())?;
    let mut rows = Vec::new();
    let mut iterations = 0u64;
    for &r in r {
        let b = solver.busy_lst_detailed(r)?;
        iterations = iterations.max(b.iterations);
        rows.push(Row::new("busy_lst", b.value).at_r(r));
    }
    rows.push(Row::new("busy_mean", solver.busy_mean()));
    let controls = Controls { r: Some(r.to_vec()), ..Default::default() };
    let diag = Diagnostics { iterations: Some(iterations), ..Default::default() };
    Ok(("busy", controls, rows, diag, 0))
}

fn run_wdist(p: &Prepared, max_x: Option<f64>, stride: usize) -> Result<Outcome> {
    let g = grid_of(p);
    let ws = workspace(p, g, 1)?;
    let w = ws.waiting_cdf();
    let last = match max_x {
        Some(x) => ((x / g.step).floor() as usize).min(w.nodes()),
        None => w.nodes(),
    };
    let mut rows = Vec::new();
    let mut i = 0;
    while i <= last {
        rows.push(Row::new("waiting_cdf", w.at_node(i)).at_u(i as f64 * g.step));
        i += stride;
    }
    let controls = Controls {
        grid_step: Some(g.step),
        horizon: Some(g.horizon),
        eps: Some(g.eps),
        max_x,
        stride: Some(stride),
        ..Default::default()
    };
    let diag = grid_diagnostics(&ws);
    Ok(("wdist", controls, rows, diag, 0))
}

fn sim_config(p: &Prepared, sim: &SimArgs, order: usize) -> SimConfig {
    let mut cfg = SimConfig::new(p.params.clone());
    cfg.warmup_departures = sim.warmup;
    cfg.measured_departures = sim.departures;
    cfg.batches = sim.batches;
    cfg.seed = sim.seed;
    cfg.replications = sim.replications;
    cfg.probe_moment_order = order;
    cfg
}

fn sim_controls(sim: &SimArgs) -> Controls {
    Controls {
        departures: Some(sim.departures),
        warmup: Some(sim.warmup),
        batches: Some(sim.batches),
        replications: Some(sim.replications),
        seed: Some(sim.seed),
        ..Default::default()
    }
}

fn run_simulate(
    p: &Prepared,
    sim_args: &SimArgs,
    order: usize,
    r: &[f64],
    grid_step: Option<f64>,
) -> Result<Outcome> {
    let cfg = sim_config(p, sim_args, order);
    let res = if r.is_empty() { sim::run(&cfg)? } else { sim::estimate_lst(&cfg, r)? };
    let mut rows = Vec::new();
    if let Some(psz) = res.probe_size {
        rows.push(Row::new("probe_count", res.probe_count as f64));
        for m in &res.probe_moment_estimates {
            rows.push(
                Row::new("probe_moment", m.value)
                    .at_u(psz)
                    .at_n(m.order as u64)
                    .with_ci(m.ci_halfwidth),
            );
        }
        if let Some(v) = res.probe_variance {
            rows.push(Row::new("probe_variance", v.value).at_u(psz).with_ci(v.ci_halfwidth));
        }
        for l in &res.lst_estimates {
            rows.push(Row::new("lst", l.value).at_u(psz).at_r(l.r).with_ci(l.ci_halfwidth));
        }
    }
    for b in &res.qlen_histogram {
        rows.push(Row::new("qlen_pmf", b.probability).at_n(b.n as u64).with_ci(b.ci_halfwidth));
    }
    rows.push(Row::new("qlen_mean", res.qlen_mean.value).with_ci(res.qlen_mean.ci_halfwidth));
    for (n, &f) in res.arrival_seen_histogram.iter().enumerate() {
        rows.push(Row::new("arrival_seen", f).at_n(n as u64));
    }
    rows.push(Row::new("work_conservation_residual", res.work_conservation_residual));
    let mut controls = sim_controls(sim_args);
    controls.order = Some(order);
    controls.grid_step = grid_step;
    if !r.is_empty() {
        controls.r = Some(r.to_vec());
    }
    let diag = Diagnostics {
        truncation_terms: None,
        grid_step,
        iterations: Some(res.total_events),
    };
    Ok(("simulate", controls, rows, diag, 0))
}

fn zscore(analytic: f64, estimate: f64, halfwidth: f64) -> f64 {
    (analytic - estimate).abs() / halfwidth.max(1e-300)
}

fn run_validate(
    p: &Prepared,
    sim_args: &SimArgs,
    order: usize,
    r: &[f64],
    terms: usize,
) -> Result<Outcome> {
    let g = grid_of(p);
    let k = p.params.k();
    let u = p.params.service().probe_size().expect("validate requires a probe mixture");

    let max_order = if r.is_empty() { order } else { order.max(terms) };
    let ws = workspace(p, g, max_order)?;
    let table = k_moments(&moments_upto(ws.params(), order, &ws)?, k);

    let cfg = sim_config(p, sim_args, order);
    let res = sim::estimate_lst(&cfg, r)?;

    let mut rows = Vec::new();
    let mut pass = true;
    let mut check = |rows: &mut Vec<Row>, stem: [&'static str; 3], row: Row, analytic: f64| {
        let z = zscore(analytic, row.value, row.ci_halfwidth.unwrap_or(0.0));
        pass &= z <= 3.0;
        let mut a = Row::new(stem[0], analytic);
        let mut zr = Row::new(stem[2], z);
        (a.u, a.n, a.r) = (row.u, row.n, row.r);
        (zr.u, zr.n, zr.r) = (row.u, row.n, row.r);
        rows.push(a);
        rows.push(Row { name: stem[1], ..row });
        rows.push(zr);
    };

    for m in &res.probe_moment_estimates {
        let analytic = table.value(m.order, u)?;
        let row = Row::new("", m.value).at_u(u).at_n(m.order as u64).with_ci(m.ci_halfwidth);
        check(&mut rows, ["moment_analytic", "moment_estimate", "moment_z"], row, analytic);
    }
    if let Some(v) = res.probe_variance {
        let m1 = table.value(1, u)?;
        let analytic = table.value(2, u)? - m1 * m1;
        let row = Row::new("", v.value).at_u(u).with_ci(v.ci_halfwidth);
        check(&mut rows, ["variance_analytic", "variance_estimate", "variance_z"], row, analytic);
    }
    for l in &res.lst_estimates {
        let analytic = ws.sojourn_lst_k(l.r, u, terms, k)?;
        let row = Row::new("", l.value).at_u(u).at_r(l.r).with_ci(l.ci_halfwidth);
        check(&mut rows, ["lst_analytic", "lst_estimate", "lst_z"], row, analytic);
    }
    for b in &res.qlen_histogram {
        let analytic = qlen_pmf(&p.params, b.n as u64)?;
        if analytic < 1e-3 {
            continue;
        }
        let row = Row::new("", b.probability).at_n(b.n as u64).with_ci(b.ci_halfwidth);
        check(&mut rows, ["qlen_pmf_analytic", "qlen_pmf_estimate", "qlen_pmf_z"], row, analytic);
    }
    let analytic_mean = qlen_mean(&p.params)?;
    let row = Row::new("", res.qlen_mean.value).with_ci(res.qlen_mean.ci_halfwidth);
    check(&mut rows, ["qlen_mean_analytic", "qlen_mean_estimate", "qlen_mean_z"], row, analytic_mean);

    rows.push(Row::new("pass", if pass { 1.0 } else { 0.0 }));

    let mut controls = sim_controls(sim_args);
    controls.grid_step = Some(g.step);
    controls.horizon = Some(g.horizon);
    controls.eps = Some(g.eps);
    controls.order = Some(order);
    controls.u = Some(vec![u]);
    if !r.is_empty() {
        controls.r = Some(r.to_vec());
        controls.terms = Some(terms);
    }
    let diag = Diagnostics {
        truncation_terms: Some(ws.ladder_terms() as u64),
        grid_step: Some(g.step),
        iterations: Some(res.total_events),
    };
    Ok(("validate", controls, rows, diag, if pass { 0 } else { 1 }))
}
