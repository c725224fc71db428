use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Two-sided 99% normal quantile used for every confidence interval.
const Z99: f64 = 2.5758293035489004;

/// Simulation controls. Warmup and measurement are counted in departures,
/// not time, so the bias control does not depend on the load.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ModelParams,
    pub warmup_departures: u64,
    pub measured_departures: u64,
    /// Number of batch-means batches per replication.
    pub batches: u32,
    pub seed: u64,
    /// Independent replications on separate random streams; their batches
    /// pool into one CI.
    pub replications: u32,
    /// Highest raw moment E[V^n] estimated over probe jobs.
    pub probe_moment_order: usize,
}

impl SimConfig {
    pub fn new(params: ModelParams) -> Self {
        SimConfig {
            params,
            warmup_departures: 10_000,
            measured_departures: 100_000,
            batches: 20,
            seed: 1,
            replications: 1,
            probe_moment_order: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        self.params.require_stable()?;
        if self.params.lambda() <= 0.0 {
            return Err(Error::InvalidConfig(
                "simulation needs a positive arrival rate (nothing ever happens at lambda = 0)"
                    .into(),
            ));
        }
        if self.batches < 2 {
            return Err(Error::InvalidConfig("need at least 2 batches for a CI".into()));
        }
        if self.measured_departures < self.batches as u64 {
            return Err(Error::InvalidConfig(format!(
                "measured departures {} must cover the {} batches",
                self.measured_departures, self.batches
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        if self.probe_moment_order < 1 {
            return Err(Error::InvalidConfig("probe moment order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentEstimate {
    pub order: usize,
    pub value: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LstEstimate {
    pub r: f64,
    pub value: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QlenBin {
    pub n: usize,
    pub probability: f64,
    pub ci_halfwidth: f64,
}

/// Point estimates with 99% batch-means confidence half-widths.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Probe atom location when the service law is a probe mixture.
    pub probe_size: Option<f64>,
    /// Measured probe departures across all replications.
    pub probe_count: u64,
    pub probe_moment_estimates: Vec<MomentEstimate>,
    /// Var[V] estimated per batch (second moment minus squared mean).
    pub probe_variance: Option<Estimate>,
    /// E[e^{-r V}] per requested r (empty unless `estimate_lst` is used).
    pub lst_estimates: Vec<LstEstimate>,
    /// Time-weighted distribution of the number of standard jobs.
    pub qlen_histogram: Vec<QlenBin>,
    pub qlen_mean: Estimate,
    /// Queue length seen by arriving jobs (frequencies, diagnostics for the
    /// PASTA property).
    pub arrival_seen_histogram: Vec<f64>,
    pub replication_count: u32,
    /// Arrivals plus departures over all phases and replications.
    pub total_events: u64,
    /// Worst per-departure gap between integrated service and the departing
    /// job's size; a direct audit of work conservation.
    pub work_conservation_residual: f64,
}

/// Runs the simulation and reports moment and queue-length estimates.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    run_impl(config, &[])
}

/// Like `run`, additionally estimating E[e^{-r V}] over probe jobs for each
/// requested r >= 0.
pub fn estimate_lst(config: &SimConfig, r_values: &[f64]) -> Result<SimResult> {
    for &r in r_values {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "transform argument must be finite and nonnegative, got {r}"
            )));
        }
    }
    run_impl(config, r_values)
}

/// One standard job in flight. `target` is the attained-service level at
/// which the job completes; the heap orders by it, with the arrival sequence
/// number as a deterministic tiebreak.
#[derive(Debug, Clone, Copy)]
struct Job {
    target: f64,
    seq: u64,
    arrival: f64,
    size: f64,
}

impl PartialEq for Job {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Job {}
impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Job {
    fn cmp(&self, other: &Self) -> Ordering {
        self.target
            .total_cmp(&other.target)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Core processor-sharing state.
///
/// Rather than decrementing every job's remaining size each event, track one
/// virtual level `s`: the cumulative service a standard job present since
/// time zero of the level would have attained. A job admitted at level s0
/// with size x departs when the level reaches s0 + x, so departures pop off
/// a min-heap of target levels. The level advances at rate 1/(n+K) while
/// n >= 1 standard jobs are present and freezes at n = 0 (the permanent jobs
/// then absorb the whole server).
struct EpsState {
    kf: f64,
    s: f64,
    heap: BinaryHeap<std::cmp::Reverse<Job>>,
}

impl EpsState {
    fn new(k: u32) -> Self {
        EpsState { kf: k as f64, s: 0.0, heap: BinaryHeap::new() }
    }

    fn n(&self) -> usize {
        self.heap.len()
    }

    fn admit(&mut self, t: f64, size: f64, seq: u64) {
        self.heap.push(std::cmp::Reverse(Job {
            target: self.s + size,
            seq,
            arrival: t,
            size,
        }));
    }

    /// Absolute time of the next departure if no arrival intervenes.
    fn next_departure(&self, t: f64) -> Option<f64> {
        self.heap.peek().map(|std::cmp::Reverse(j)| {
            t + (j.target - self.s).max(0.0) * (self.n() as f64 + self.kf)
        })
    }

    /// Advances the shared level over an interval of length dt.
    fn serve(&mut self, dt: f64) {
        let n = self.n();
        if n > 0 {
            self.s += dt / (n as f64 + self.kf);
        }
    }

    /// Pops the departing job and returns it with the level discrepancy
    /// accumulated by floating-point drift (the work-conservation audit).
    /// The level is snapped to the exact target afterwards.
    fn complete(&mut self) -> (Job, f64) {
        let std::cmp::Reverse(job) = self.heap.pop().expect("departure from an empty system");
        let residual = (self.s - job.target).abs();
        self.s = job.target;
        (job, residual)
    }
}

/// Per-batch accumulators.
#[derive(Clone)]
struct BatchAcc {
    time: f64,
    occupancy: Vec<f64>,
    n_integral: f64,
    probe_count: u64,
    probe_pows: Vec<f64>,
    probe_exps: Vec<f64>,
}

impl BatchAcc {
    fn new(order: usize, r_count: usize) -> Self {
        BatchAcc {
            time: 0.0,
            occupancy: Vec::new(),
            n_integral: 0.0,
            probe_count: 0,
            probe_pows: vec![0.0; order],
            probe_exps: vec![0.0; r_count],
        }
    }
}

struct Pooled {
    batches: Vec<BatchAcc>,
    arrival_seen: Vec<u64>,
    total_events: u64,
    max_residual: f64,
}

fn exp_interarrival<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}

fn run_impl(config: &SimConfig, r_values: &[f64]) -> Result<SimResult> {
    config.validate()?;
    let mut pooled = Pooled {
        batches: Vec::with_capacity((config.batches * config.replications) as usize),
        arrival_seen: Vec::new(),
        total_events: 0,
        max_residual: 0.0,
    };
    for rep in 0..config.replications {
        run_replication(config, r_values, rep as u64, &mut pooled);
    }
    summarize(config, r_values, pooled)
}

fn run_replication(config: &SimConfig, r_values: &[f64], stream: u64, pooled: &mut Pooled) {
    let params = &config.params;
    let service = params.service();
    let probe_bits = service.probe_size().map(f64::to_bits);
    let lambda = params.lambda();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let mut state = EpsState::new(params.k());
    let mut t = 0.0f64;
    let mut seq = 0u64;
    let mut next_arrival = exp_interarrival(&mut rng, lambda);
    let mut departures = 0u64;
    let total_target = config.warmup_departures + config.measured_departures;
    let batch_count = config.batches as usize;
    let batch_size = config.measured_departures / config.batches as u64;
    let mut cur_batch = 0usize;
    let mut measuring = config.warmup_departures == 0;
    let mut batches = vec![BatchAcc::new(config.probe_moment_order, r_values.len()); batch_count];
    let mut events = 0u64;

    while departures < total_target {
        let n = state.n();
        let next_dep = state.next_departure(t);
        let depart_first = matches!(next_dep, Some(td) if td <= next_arrival);
        let next_t = if depart_first { next_dep.unwrap() } else { next_arrival };

        // Account the interval we are about to cross.
        let dt = next_t - t;
        if measuring {
            let b = &mut batches[cur_batch];
            b.time += dt;
            if b.occupancy.len() <= n {
                b.occupancy.resize(n + 1, 0.0);
            }
            b.occupancy[n] += dt;
            b.n_integral += n as f64 * dt;
        }
        state.serve(dt);
        t = next_t;
        events += 1;

        if depart_first {
            let (job, residual) = state.complete();
            pooled.max_residual = pooled.max_residual.max(residual);
            departures += 1;
            if measuring {
                if probe_bits == Some(job.size.to_bits()) {
                    let b = &mut batches[cur_batch];
                    b.probe_count += 1;
                    let sojourn = t - job.arrival;
                    let mut pw = 1.0;
                    for p in b.probe_pows.iter_mut() {
                        pw *= sojourn;
                        *p += pw;
                    }
                    for (e, &r) in b.probe_exps.iter_mut().zip(r_values) {
                        *e += (-r * sojourn).exp();
                    }
                }
                let filled = (departures - config.warmup_departures) / batch_size;
                cur_batch = (filled as usize).min(batch_count - 1);
            } else if departures >= config.warmup_departures {
                measuring = true;
            }
        } else {
            if measuring {
                if pooled.arrival_seen.len() <= n {
                    pooled.arrival_seen.resize(n + 1, 0);
                }
                pooled.arrival_seen[n] += 1;
            }
            state.admit(t, service.sample(&mut rng), seq);
            seq += 1;
            next_arrival = t + exp_interarrival(&mut rng, lambda);
        }
    }
    pooled.total_events += events;
    pooled.batches.append(&mut batches);
}

/// Mean of batch statistics with a normal-quantile CI over the batches.
fn batch_ci(values: &[f64]) -> Estimate {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1.0);
    Estimate { value: mean, ci_halfwidth: Z99 * (var / b).sqrt() }
}

fn summarize(config: &SimConfig, r_values: &[f64], pooled: Pooled) -> Result<SimResult> {
    let batches = &pooled.batches;
    let probe_size = config.params.service().probe_size();
    let probe_count: u64 = batches.iter().map(|b| b.probe_count).sum();

    let mut probe_moment_estimates = Vec::new();
    let mut probe_variance = None;
    let mut lst_estimates = Vec::new();
    if probe_size.is_some() {
        let with_probes: Vec<&BatchAcc> = batches.iter().filter(|b| b.probe_count > 0).collect();
        if with_probes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "only {} batch(es) saw a probe job; increase departures or the probe probability",
                with_probes.len()
            )));
        }
        for j in 1..=config.probe_moment_order {
            let per_batch: Vec<f64> = with_probes
                .iter()
                .map(|b| b.probe_pows[j - 1] / b.probe_count as f64)
                .collect();
            let e = batch_ci(&per_batch);
            probe_moment_estimates.push(MomentEstimate {
                order: j,
                value: e.value,
                ci_halfwidth: e.ci_halfwidth,
            });
        }
        if config.probe_moment_order >= 2 {
            let per_batch: Vec<f64> = with_probes
                .iter()
                .map(|b| {
                    let c = b.probe_count as f64;
                    let m1 = b.probe_pows[0] / c;
                    b.probe_pows[1] / c - m1 * m1
                })
                .collect();
            probe_variance = Some(batch_ci(&per_batch));
        }
        for (idx, &r) in r_values.iter().enumerate() {
            let per_batch: Vec<f64> = with_probes
                .iter()
                .map(|b| b.probe_exps[idx] / b.probe_count as f64)
                .collect();
            let e = batch_ci(&per_batch);
            lst_estimates.push(LstEstimate { r, value: e.value, ci_halfwidth: e.ci_halfwidth });
        }
    }

    let max_state = batches.iter().map(|b| b.occupancy.len()).max().unwrap_or(0);
    let mut qlen_histogram = Vec::with_capacity(max_state);
    for n in 0..max_state {
        let per_batch: Vec<f64> = batches
            .iter()
            .map(|b| b.occupancy.get(n).copied().unwrap_or(0.0) / b.time)
            .collect();
        let e = batch_ci(&per_batch);
        qlen_histogram.push(QlenBin { n, probability: e.value, ci_halfwidth: e.ci_halfwidth });
    }
    let qlen_mean = batch_ci(
        &batches.iter().map(|b| b.n_integral / b.time).collect::<Vec<f64>>(),
    );

    let seen_total: u64 = pooled.arrival_seen.iter().sum();
    let arrival_seen_histogram = pooled
        .arrival_seen
        .iter()
        .map(|&c| c as f64 / seen_total.max(1) as f64)
        .collect();

    Ok(SimResult {
        probe_size,
        probe_count,
        probe_moment_estimates,
        probe_variance,
        lst_estimates,
        qlen_histogram,
        qlen_mean,
        arrival_seen_histogram,
        replication_count: config.replications,
        total_events: pooled.total_events,
        work_conservation_residual: pooled.max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mg1::qlen_pmf;
    use crate::service::ServiceDistribution;

    fn mixture_params(k: u32) -> ModelParams {
        let service = ServiceDistribution::from_spec("mix:exp:1.0:1.0:0.1").unwrap();
        ModelParams::new(0.5, service, k).unwrap()
    }

    #[test]
    fn solitary_job_among_permanent_jobs_takes_k_plus_one_times_its_size() {
        // No competing arrivals: a size-u job sharing with 2 permanent jobs
        // is served at constant rate 1/3, so it leaves at exactly 3u.
        let mut state = EpsState::new(2);
        state.admit(0.0, 0.7, 0);
        let dep = state.next_departure(0.0).unwrap();
        assert_eq!(dep, 3.0 * 0.7);
        state.serve(dep);
        let (job, residual) = state.complete();
        assert_eq!(job.size, 0.7);
        assert!(residual < 1e-15);
    }

    #[test]
    fn two_jobs_share_the_server_equally() {
        // Sizes 1.0 and 0.5 both present from t=0 with K=0: the small job
        // leaves at t=1 (rate 1/2), the big one at t=1.5.
        let mut state = EpsState::new(0);
        state.admit(0.0, 1.0, 0);
        state.admit(0.0, 0.5, 1);
        let first = state.next_departure(0.0).unwrap();
        assert_eq!(first, 1.0);
        state.serve(first);
        let (job, _) = state.complete();
        assert_eq!(job.size, 0.5);
        let second = state.next_departure(first).unwrap();
        assert_eq!(second, 1.5);
        state.serve(second - first);
        let (job, _) = state.complete();
        assert_eq!(job.size, 1.0);
    }

    fn quick_config(params: ModelParams) -> SimConfig {
        let mut cfg = SimConfig::new(params);
        cfg.warmup_departures = 20_000;
        cfg.measured_departures = 200_000;
        cfg.seed = 42;
        cfg
    }

    #[test]
    fn identical_configs_give_bit_identical_results() {
        let cfg = quick_config(mixture_params(0));
        let a = estimate_lst(&cfg, &[0.25, 0.5]).unwrap();
        let b = estimate_lst(&cfg, &[0.25, 0.5]).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
        let mut other = cfg.clone();
        other.seed = 43;
        let c = run(&other).unwrap();
        assert_ne!(ja, serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn queue_length_histogram_tracks_the_geometric_law() {
        let params =
            ModelParams::new(0.5, ServiceDistribution::exponential(1.0).unwrap(), 0).unwrap();
        let out = run(&quick_config(params.clone())).unwrap();
        let mut tv = 0.0;
        let mut analytic_mass = 0.0;
        for bin in &out.qlen_histogram {
            let p = qlen_pmf(&params, bin.n as u64).unwrap();
            analytic_mass += p;
            tv += (bin.probability - p).abs();
        }
        tv = 0.5 * (tv + (1.0 - analytic_mass));
        assert!(tv < 0.01, "TV distance {tv}");
        // Mean number in system is rho/(1-rho) = 1.
        assert!(
            (out.qlen_mean.value - 1.0).abs() < 3.0 * out.qlen_mean.ci_halfwidth,
            "qlen mean {} +- {}",
            out.qlen_mean.value,
            out.qlen_mean.ci_halfwidth
        );
        let total: f64 = out.qlen_histogram.iter().map(|b| b.probability).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(out.work_conservation_residual < 1e-9);
    }

    #[test]
    fn permanent_jobs_shift_the_queue_law_to_negative_binomial() {
        let params =
            ModelParams::new(0.5, ServiceDistribution::exponential(1.0).unwrap(), 1).unwrap();
        let out = run(&quick_config(params.clone())).unwrap();
        let mut tv = 0.0;
        let mut analytic_mass = 0.0;
        for bin in &out.qlen_histogram {
            let p = qlen_pmf(&params, bin.n as u64).unwrap();
            analytic_mass += p;
            tv += (bin.probability - p).abs();
        }
        tv = 0.5 * (tv + (1.0 - analytic_mass));
        assert!(tv < 0.01, "TV distance {tv}");
    }

    #[test]
    fn arrivals_see_time_averages() {
        let out = run(&quick_config(mixture_params(0))).unwrap();
        for bin in &out.qlen_histogram {
            let seen = out.arrival_seen_histogram.get(bin.n).copied().unwrap_or(0.0);
            assert!(
                (seen - bin.probability).abs() < 0.01 + 5.0 * bin.ci_halfwidth,
                "state {}: arrival-seen {seen} vs time-average {}",
                bin.n,
                bin.probability
            );
        }
    }

    #[test]
    fn probe_mean_covers_the_analytic_sojourn() {
        // Probe jobs of size 1 at rho=0.5: E[V(1)] = 1/(1-rho) = 2.
        let out = run(&quick_config(mixture_params(0))).unwrap();
        assert!(out.probe_count > 10_000);
        let mean = &out.probe_moment_estimates[0];
        assert!(mean.ci_halfwidth > 0.0);
        assert!(
            (mean.value - 2.0).abs() < 3.0 * mean.ci_halfwidth,
            "probe mean {} +- {}",
            mean.value,
            mean.ci_halfwidth
        );
    }

    #[test]
    fn lst_at_zero_is_exactly_one() {
        let out = estimate_lst(&quick_config(mixture_params(0)), &[0.0, 0.5]).unwrap();
        assert_eq!(out.lst_estimates[0].value, 1.0);
        assert!(out.lst_estimates[1].value < 1.0);
    }

    #[test]
    fn replications_pool_their_batches() {
        let mut cfg = quick_config(mixture_params(0));
        cfg.measured_departures = 50_000;
        cfg.warmup_departures = 5_000;
        cfg.replications = 3;
        let out = run(&cfg).unwrap();
        assert_eq!(out.replication_count, 3);
        // 3 replications of 20 batches each tighten the CI roughly sqrt(3)x
        // relative to one replication.
        let mut single = cfg.clone();
        single.replications = 1;
        let one = run(&single).unwrap();
        assert!(out.qlen_mean.ci_halfwidth < one.qlen_mean.ci_halfwidth);
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let stable = mixture_params(0);
        let mut cfg = SimConfig::new(stable.clone());
        cfg.batches = 1;
        assert!(run(&cfg).is_err());
        let mut cfg = SimConfig::new(stable.clone());
        cfg.measured_departures = 5;
        cfg.batches = 10;
        assert!(run(&cfg).is_err());
        let unstable =
            ModelParams::new(2.0, ServiceDistribution::exponential(1.0).unwrap(), 0).unwrap();
        assert!(matches!(run(&SimConfig::new(unstable)), Err(Error::UnstableLoad { .. })));
        let zero =
            ModelParams::new(0.0, ServiceDistribution::exponential(1.0).unwrap(), 0).unwrap();
        assert!(run(&SimConfig::new(zero)).is_err());
        assert!(estimate_lst(&SimConfig::new(stable), &[-1.0]).is_err());
    }
}
