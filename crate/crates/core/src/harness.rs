//! Experiment orchestration: variants, runs over seeds, regret and
//! communication accounting.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{transition_depth, ClientReport, ConfParams, SmoothParams};
use crate::objectives::{BaseObjective, ObjectiveKind, ObjectiveSuite, OracleBudget};
use crate::partition::{cell, BoxDomain, NodeId, PartitionSpec};
use crate::pfpne::{ClientState, CommRound, Event, Protocol, PullRecord, ServerDepthRecord, ServerState, Stage, Transcript};
use crate::rng::{substream, Purpose};

/// Environment variable capping the worker threads of [`run_many`].
pub const THREADS_ENV: &str = "FEDELIM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "pfpne")]
    Pfpne,
    #[serde(rename = "global-only")]
    GlobalOnly,
    #[serde(rename = "local-only")]
    LocalOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Pfpne, Variant::GlobalOnly, Variant::LocalOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pfpne => "pfpne",
            Variant::GlobalOnly => "global-only",
            Variant::LocalOnly => "local-only",
        }
    }

    /// The last collaborative depth this variant uses, given the natural
    /// transition depth and the depth cap.
    pub fn schedule(self, natural_h0: u32, depth_cap: u32) -> u32 {
        match self {
            Variant::Pfpne => natural_h0,
            Variant::GlobalOnly => depth_cap,
            Variant::LocalOnly => 0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}` (expected pfpne, global-only or local-only)")))
    }
}

/// Everything that defines an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    /// Overrides the objective's default domain.
    pub domain: Option<BoxDomain>,
    pub clients: usize,
    pub horizon: u64,
    /// Per-dimension shift standard deviation; `None` means 5% of the widest
    /// domain side.
    pub shift_std: Option<f64>,
    /// Half-width of the uniform reward noise.
    pub noise: f64,
    pub nu1: f64,
    pub rho: f64,
    pub c: f64,
    pub c1: f64,
    /// Confidence level; `None` means `1/M`.
    pub delta_conf: Option<f64>,
    pub delta_gap: f64,
    pub arity: u32,
    pub depth_cap: u32,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub checkpoint_stride: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Garland,
            domain: None,
            clients: 10,
            horizon: 5000,
            shift_std: None,
            noise: 0.1,
            nu1: 1.0,
            rho: 0.5,
            c: 0.1,
            c1: 1.0,
            delta_conf: None,
            delta_gap: 0.01,
            arity: 2,
            depth_cap: 40,
            variants: vec![Variant::Pfpne],
            seeds: (0..10).collect(),
            checkpoint_stride: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn domain(&self) -> BoxDomain {
        self.domain.clone().unwrap_or_else(|| self.objective.default_domain())
    }

    pub fn resolved_shift_std(&self) -> f64 {
        self.shift_std.unwrap_or_else(|| 0.05 * self.domain().max_width())
    }

    pub fn resolved_delta_conf(&self) -> f64 {
        self.delta_conf.unwrap_or(1.0 / self.clients as f64)
    }

    pub fn conf_params(&self) -> Result<ConfParams> {
        ConfParams::new(self.c, self.c1, self.resolved_delta_conf(), self.horizon)
    }

    pub fn smooth_params(&self) -> Result<SmoothParams> {
        SmoothParams::new(self.nu1, self.rho, self.delta_gap)
    }

    pub fn partition(&self) -> Result<PartitionSpec> {
        PartitionSpec::new(self.arity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        if self.clients > u32::MAX as usize {
            return Err(Error::config("too many clients"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::config("checkpoint_stride must be >= 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("at least one variant is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if let Some(s) = self.shift_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config(format!("shift_std must be >= 0, got {s}")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if let Some(d) = &self.domain {
            BaseObjective::check_domain(self.objective, d)?;
        }
        self.conf_params()?;
        self.smooth_params()?;
        let spec = self.partition()?;
        if self.depth_cap > spec.max_addressable_depth() {
            return Err(Error::config(format!(
                "depth_cap {} exceeds the deepest addressable depth {} for arity {}",
                self.depth_cap,
                spec.max_addressable_depth(),
                self.arity
            )));
        }
        Ok(())
    }

    /// Protocol wiring of `variant` under this configuration.
    pub fn protocol(&self, variant: Variant) -> Result<Protocol> {
        self.validate()?;
        let smooth = self.smooth_params()?;
        Ok(Protocol {
            conf: self.conf_params()?,
            smooth,
            partition: self.partition()?,
            clients: self.clients,
            transition_depth: variant.schedule(transition_depth(&smooth), self.depth_cap),
            depth_cap: self.depth_cap,
        })
    }

    /// The seed's objective suite with certified optima.
    pub fn suite(&self, seed: u64) -> Result<ObjectiveSuite> {
        self.validate()?;
        let base = match &self.domain {
            Some(d) => BaseObjective::with_domain(self.objective, d.clone())?,
            None => BaseObjective::new(self.objective)?,
        };
        ObjectiveSuite::with_budget(
            base,
            self.clients,
            self.resolved_shift_std(),
            self.noise,
            seed,
            &OracleBudget::default(),
        )
    }

    /// Checkpoints `stride, 2·stride, …` plus `T`.
    pub fn checkpoints(&self) -> Vec<u64> {
        let mut v: Vec<u64> = (1..=self.horizon / self.checkpoint_stride).map(|k| k * self.checkpoint_stride).collect();
        if v.last() != Some(&self.horizon) {
            v.push(self.horizon);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub checkpoints: Vec<u64>,
    /// `(1/M)·Σ_m R_m(t)` at each checkpoint.
    pub avg_cum_regret: Vec<f64>,
    pub client_final_regret: Vec<f64>,
    pub comm: Vec<CommRound>,
    /// Per-client clock at which PE started; `None` if it never did.
    pub transition_t: Option<u64>,
}

impl RunMetrics {
    pub fn comm_rounds(&self) -> usize {
        self.comm.len()
    }

    pub fn final_regret(&self) -> f64 {
        *self.avg_cum_regret.last().expect("at least one checkpoint")
    }

    /// Running total of up+down scalars after each round.
    pub fn cumulative_scalars(&self) -> Vec<u64> {
        self.comm
            .iter()
            .scan(0u64, |acc, r| {
                *acc += r.scalars_up + r.scalars_down;
                Some(*acc)
            })
            .collect()
    }
}

/// Full record of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub protocol: Protocol,
    pub suite: ObjectiveSuite,
    /// Pull records per client.
    pub pulls: Vec<Vec<PullRecord>>,
    pub transcript: Transcript,
    pub server_history: Vec<ServerDepthRecord>,
}

pub fn run(config: &ExperimentConfig, variant: Variant, seed: u64) -> Result<RunOutcome> {
    let suite = config.suite(seed)?;
    run_with_suite(config, &suite, variant, seed)
}

/// Runs `variant` on a prebuilt suite (the suite only depends on the seed).
pub fn run_with_suite(config: &ExperimentConfig, suite: &ObjectiveSuite, variant: Variant, seed: u64) -> Result<RunOutcome> {
    let proto = config.protocol(variant)?;
    if suite.clients() != config.clients {
        return Err(Error::config("suite and configuration disagree on the number of clients"));
    }
    let mut clients: Vec<ClientState> = (0..config.clients)
        .map(|m| ClientState::new(m, config.horizon, substream(seed, Purpose::Noise, m as u32), &proto))
        .collect();
    let mut server = ServerState::new();
    let mut transcript = Transcript::default();

    while clients.iter().any(|c| c.stage() == Stage::Stage1) {
        if !clients.iter().all(|c| c.stage() == Stage::Stage1) {
            return Err(Error::protocol("clients left stage 1 at different times"));
        }
        if clients.iter().any(|c| c.global_depth() != server.depth() || c.global_active() != server.active()) {
            return Err(Error::protocol(format!("client and server disagree on K^{}", server.depth())));
        }
        let quota = proto.quota(server.depth());
        let reports: Vec<ClientReport> =
            clients.iter_mut().map(|c| c.stage1_sample(quota, suite, &proto)).collect::<Result<_>>()?;
        transcript.events.extend(reports.iter().cloned().map(Event::Report));
        let exhausted = clients.iter().filter(|c| c.stage() == Stage::Exhausted).count();
        if exhausted > 0 {
            if exhausted != clients.len() {
                return Err(Error::protocol("only some clients ran out of budget in a synchronous phase"));
            }
            break;
        }
        let bcast = server.step(&reports, &proto)?;
        for c in &mut clients {
            c.absorb_broadcast(&bcast, &proto)?;
        }
        transcript.push(Event::Broadcast(bcast));
    }

    let transition_t = match clients[0].stage() {
        Stage::Pe => Some(clients[0].clock()),
        _ => None,
    };

    for c in &mut clients {
        loop {
            match c.stage() {
                Stage::Pe if c.budget_remaining() > 0 => {
                    let step = c.pe_depth_step(suite, &proto)?;
                    transcript.push(Event::PeStep(step));
                }
                Stage::Fallback if c.budget_remaining() > 0 => {
                    let f = c.max_depth_fallback(suite, &proto)?;
                    transcript.push(Event::Fallback(f));
                }
                _ => break,
            }
        }
        if c.clock() != config.horizon {
            return Err(Error::protocol(format!("client {} stopped at t = {}", c.client(), c.clock())));
        }
    }

    let pulls: Vec<Vec<PullRecord>> = clients.into_iter().map(ClientState::into_records).collect();
    let checkpoints = config.checkpoints();
    let avg_cum_regret = average_regret_trace(&pulls, &checkpoints);
    let client_final_regret = pulls.iter().map(|r| cumulative_regret(r).last().copied().unwrap_or(0.0)).collect();
    let metrics = RunMetrics {
        variant,
        seed,
        checkpoints,
        avg_cum_regret,
        client_final_regret,
        comm: server.rounds().to_vec(),
        transition_t,
    };
    Ok(RunOutcome {
        metrics,
        protocol: proto,
        suite: suite.clone(),
        pulls,
        transcript,
        server_history: server.history().to_vec(),
    })
}

/// `R_m(t)` for `t = 1..=len`.
pub fn cumulative_regret(records: &[PullRecord]) -> Vec<f64> {
    records
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.instant_regret;
            Some(*acc)
        })
        .collect()
}

/// `(1/M)·Σ_m R_m(t)` at each checkpoint `t` (1-based clocks).
pub fn average_regret_trace(pulls: &[Vec<PullRecord>], checkpoints: &[u64]) -> Vec<f64> {
    let cums: Vec<Vec<f64>> = pulls.iter().map(|r| cumulative_regret(r)).collect();
    let m = pulls.len() as f64;
    checkpoints
        .iter()
        .map(|&t| cums.iter().map(|c| c[(t - 1) as usize]).sum::<f64>() / m)
        .collect()
}

/// An elimination of a cell holding an optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyViolation {
    /// `None` for the server, `Some(m)` for client `m`.
    pub client: Option<usize>,
    pub depth: u32,
    pub eliminated: Vec<NodeId>,
}

/// Whether the closed cell of `node` holds `x`, with a small slack for the
/// oracle's resolution.
fn cell_holds(domain: &BoxDomain, node: NodeId, spec: PartitionSpec, x: &[f64]) -> bool {
    let c = cell(domain, node, spec);
    let slack = 1e-9 * domain.max_width();
    x.iter().enumerate().all(|(j, v)| *v >= c.lower()[j] - slack && *v <= c.upper()[j] + slack)
}

fn depth_violation(
    domain: &BoxDomain,
    spec: PartitionSpec,
    x: &[f64],
    considered: &BTreeSet<NodeId>,
    eliminated: &BTreeSet<NodeId>,
) -> Option<Vec<NodeId>> {
    let holders: Vec<NodeId> = considered.iter().copied().filter(|n| cell_holds(domain, *n, spec, x)).collect();
    if !holders.is_empty() && holders.iter().all(|n| eliminated.contains(n)) {
        Some(holders)
    } else {
        None
    }
}

/// Checks that no depth eliminates every cell holding the global optimizer
/// (server) or a client's local optimizer (PE). Also reports a depth at which
/// no considered cell holds the optimizer any more.
pub fn optimum_safety_violations(outcome: &RunOutcome) -> Vec<SafetyViolation> {
    let domain = outcome.suite.domain();
    let spec = outcome.protocol.partition;
    let mut out = Vec::new();
    let global = &outcome.suite.global_optimum().point;
    for rec in &outcome.server_history {
        if let Some(nodes) = depth_violation(domain, spec, global, &rec.candidates, &rec.eliminated) {
            out.push(SafetyViolation { client: None, depth: rec.depth, eliminated: nodes });
        }
    }
    for step in outcome.transcript.pe_steps() {
        let local = &outcome.suite.local_optimum(step.client).point;
        if let Some(nodes) = depth_violation(domain, spec, local, &step.active, &step.eliminated) {
            out.push(SafetyViolation { client: Some(step.client), depth: step.depth, eliminated: nodes });
        }
    }
    out
}

/// Mean and sample standard deviation per checkpoint over the runs of one
/// variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub variant: Variant,
    pub runs: usize,
    pub checkpoints: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub comm_rounds_mean: f64,
    /// Mean over the runs that reached PE.
    pub transition_t_mean: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AggregateMetrics {
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::config("cannot aggregate zero runs"))?;
        if runs.iter().any(|r| r.variant != first.variant || r.checkpoints != first.checkpoints) {
            return Err(Error::config("aggregated runs must share variant and checkpoints"));
        }
        let (mean, std): (Vec<f64>, Vec<f64>) = (0..first.checkpoints.len())
            .map(|k| {
                let xs: Vec<f64> = runs.iter().map(|r| r.avg_cum_regret[k]).collect();
                mean_std(&xs)
            })
            .unzip();
        let rounds: Vec<f64> = runs.iter().map(|r| r.comm_rounds() as f64).collect();
        let transitions: Vec<f64> = runs.iter().filter_map(|r| r.transition_t).map(|t| t as f64).collect();
        Ok(Self {
            variant: first.variant,
            runs: runs.len(),
            checkpoints: first.checkpoints.clone(),
            final_mean: *mean.last().unwrap(),
            final_std: *std.last().unwrap(),
            mean,
            std,
            comm_rounds_mean: mean_std(&rounds).0,
            transition_t_mean: (!transitions.is_empty()).then(|| mean_std(&transitions).0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    /// Grouped by variant in configuration order, seeds in configuration
    /// order within a variant.
    pub runs: Vec<RunMetrics>,
    pub aggregates: Vec<AggregateMetrics>,
}

impl ExperimentResults {
    pub fn aggregate(&self, variant: Variant) -> Option<&AggregateMetrics> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunMetrics> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }
}

/// Worker count from [`THREADS_ENV`]; `None` when unset.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Every configured variant on every seed. Seeds run in parallel; the result
/// does not depend on the number of threads.
pub fn run_many(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let mut variants: Vec<Variant> = Vec::new();
    for v in &config.variants {
        if !variants.contains(v) {
            variants.push(*v);
        }
    }
    let work = || -> Result<Vec<Vec<RunMetrics>>> {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let suite = config.suite(seed).map_err(|e| e.context(format!("seed {seed}")))?;
                variants
                    .iter()
                    .map(|&v| {
                        run_with_suite(config, &suite, v, seed)
                            .map(|o| o.metrics)
                            .map_err(|e| e.context(format!("seed {seed}, variant {v}")))
                    })
                    .collect()
            })
            .collect()
    };
    let per_seed = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} worker threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut runs = Vec::with_capacity(per_seed.len() * variants.len());
    let mut aggregates = Vec::with_capacity(variants.len());
    for k in 0..variants.len() {
        let of_variant: Vec<RunMetrics> = per_seed.iter().map(|s| s[k].clone()).collect();
        aggregates.push(AggregateMetrics::from_runs(&of_variant)?);
        runs.extend(of_variant);
    }
    Ok(ExperimentResults { runs, aggregates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ExperimentConfig {
        ExperimentConfig { clients: 3, horizon: 600, variants: vec![variant], seeds: vec![1], ..Default::default() }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("fed-pne".parse::<Variant>().is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(Variant::Pfpne.schedule(7, 40), 7);
        assert_eq!(Variant::GlobalOnly.schedule(7, 40), 40);
        assert_eq!(Variant::LocalOnly.schedule(7, 40), 0);
    }

    #[test]
    fn checkpoints_end_at_horizon() {
        let c = ExperimentConfig { horizon: 25, checkpoint_stride: 10, ..Default::default() };
        assert_eq!(c.checkpoints(), vec![10, 20, 25]);
        let c = ExperimentConfig { horizon: 20, checkpoint_stride: 10, ..Default::default() };
        assert_eq!(c.checkpoints(), vec![10, 20]);
    }

    #[test]
    fn defaults_resolve() {
        let c = ExperimentConfig::default();
        assert_eq!(c.resolved_shift_std(), 0.05);
        assert_eq!(c.resolved_delta_conf(), 0.1);
        let c = ExperimentConfig { objective: ObjectiveKind::Himmelblau, ..Default::default() };
        assert_eq!(c.resolved_shift_std(), 0.5);
    }

    #[test]
    fn validation_rejects_bad_values() {
        for bad in [
            ExperimentConfig { clients: 0, ..Default::default() },
            ExperimentConfig { horizon: 0, ..Default::default() },
            ExperimentConfig { rho: 1.0, ..Default::default() },
            ExperimentConfig { arity: 1, ..Default::default() },
            ExperimentConfig { depth_cap: 200, ..Default::default() },
            ExperimentConfig { seeds: vec![], ..Default::default() },
            ExperimentConfig { noise: -0.1, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn local_only_never_communicates() {
        let out = run(&ExperimentConfig { clients: 1, ..small(Variant::LocalOnly) }, Variant::LocalOnly, 1).unwrap();
        assert_eq!(out.metrics.comm_rounds(), 0);
        assert_eq!(out.metrics.transition_t, Some(0));
    }

    #[test]
    fn budgets_are_spent_exactly() {
        for v in Variant::ALL {
            let out = run(&small(v), v, 1).unwrap();
            for (m, recs) in out.pulls.iter().enumerate() {
                assert_eq!(recs.len(), 600);
                assert!(recs.iter().enumerate().all(|(k, r)| r.t == k as u64 + 1 && r.client == m));
            }
        }
    }

    #[test]
    fn regret_trace_matches_records() {
        let out = run(&small(Variant::Pfpne), Variant::Pfpne, 1).unwrap();
        let m = &out.metrics;
        assert_eq!(m.checkpoints.len(), 60);
        for (k, t) in m.checkpoints.iter().enumerate() {
            let direct: f64 = out
                .pulls
                .iter()
                .map(|r| r[..*t as usize].iter().fold(0.0, |a, p| a + p.instant_regret))
                .sum::<f64>()
                / 3.0;
            assert_eq!(m.avg_cum_regret[k], direct);
        }
    }

    #[test]
    fn single_seed_aggregate_has_zero_std() {
        let r = run_many(&small(Variant::Pfpne)).unwrap();
        let a = r.aggregate(Variant::Pfpne).unwrap();
        assert_eq!(a.runs, 1);
        assert_eq!(a.mean, r.runs[0].avg_cum_regret);
        assert!(a.std.iter().all(|s| *s == 0.0));
    }
}
