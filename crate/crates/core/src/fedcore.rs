//! Statistics and message vocabulary shared by the server and the clients.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::NodeId;

/// Confidence parameters of `b(n) = c·√(log(c₁T/δ)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfParams {
    c: f64,
    c1: f64,
    delta: f64,
    horizon: u64,
}

impl ConfParams {
    /// Requires `c, c₁ > 0`, `δ ∈ (0, 1]`, `T ≥ 1` and `log(c₁T/δ) ≥ 1`.
    pub fn new(c: f64, c1: f64, delta: f64, horizon: u64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("c must be > 0, got {c}")));
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::config(format!("c1 must be > 0, got {c1}")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::config(format!("delta_conf must lie in (0, 1], got {delta}")));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        let p = Self { c, c1, delta, horizon };
        if p.log_term() < 1.0 {
            return Err(Error::config(format!(
                "log(c1*T/delta) = {} < 1; increase c1 or T, or decrease delta_conf",
                p.log_term()
            )));
        }
        Ok(p)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `log(c₁T/δ)`.
    pub fn log_term(&self) -> f64 {
        (self.c1 * self.horizon as f64 / self.delta).ln()
    }
}

/// Smoothness `(ν₁, ρ)` of the partition and the optimality-gap bound `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothParams {
    nu1: f64,
    rho: f64,
    delta_gap: f64,
}

impl SmoothParams {
    pub fn new(nu1: f64, rho: f64, delta_gap: f64) -> Result<Self> {
        if !(nu1 > 0.0 && nu1.is_finite()) {
            return Err(Error::config(format!("nu1 must be > 0, got {nu1}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::config(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(delta_gap > 0.0 && delta_gap <= 1.0) {
            return Err(Error::config(format!("delta_gap must lie in (0, 1], got {delta_gap}")));
        }
        Ok(Self { nu1, rho, delta_gap })
    }

    pub fn nu1(&self) -> f64 {
        self.nu1
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta_gap(&self) -> f64 {
        self.delta_gap
    }

    /// Resolution `ν₁ρ^h` of depth `h`.
    pub fn resolution(&self, h: u32) -> f64 {
        self.nu1 * self.rho.powi(h as i32)
    }
}

pub fn confidence_bound(pulls: u64, conf: &ConfParams) -> Result<f64> {
    if pulls == 0 {
        return Err(Error::Domain("confidence bound needs at least one pull".into()));
    }
    Ok(conf.c * (conf.log_term() / pulls as f64).sqrt())
}

/// Sampling threshold `τ_h = ⌈c²·log(c₁T/δ)/ν₁² · ρ^{−2h}⌉`, saturating at
/// `u128::MAX`.
pub fn tau(h: u32, conf: &ConfParams, smooth: &SmoothParams) -> u128 {
    let raw = conf.c * conf.c * conf.log_term() / (smooth.nu1 * smooth.nu1) * smooth.rho.powi(-2 * h as i32);
    // `as` saturates for out-of-range floats.
    raw.ceil().max(1.0) as u128
}

/// Per-client share `⌈τ_h / M⌉`.
pub fn quota(tau_h: u128, clients: usize) -> u128 {
    assert!(tau_h >= 1 && clients >= 1, "quota needs tau >= 1 and M >= 1");
    tau_h.div_ceil(clients as u128)
}

/// Smallest `h ≥ 0` with `ν₁ρ^h ≤ Δ`.
pub fn transition_depth(smooth: &SmoothParams) -> u32 {
    if smooth.nu1 <= smooth.delta_gap {
        return 0;
    }
    let estimate = ((smooth.nu1 / smooth.delta_gap).ln() / (1.0 / smooth.rho).ln()).ceil().max(0.0) as u32;
    // Correct a possible off-by-one from rounding in the logarithms.
    let mut h = estimate.saturating_sub(1);
    while smooth.resolution(h) > smooth.delta_gap {
        h += 1;
    }
    h
}

/// Where a node's `(mean, bound)` pair comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Local,
    GlobalSubstituted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub pulls: u64,
    pub reward_sum: f64,
    pub mean: f64,
    pub bound: f64,
    pub provenance: Provenance,
}

impl NodeStats {
    pub fn empty() -> Self {
        Self { pulls: 0, reward_sum: 0.0, mean: 0.0, bound: f64::INFINITY, provenance: Provenance::Local }
    }

    /// Statistics given directly (e.g. for tests or broadcasts).
    pub fn with_mean(mean: f64, bound: f64) -> Self {
        Self { pulls: 0, reward_sum: 0.0, mean, bound, provenance: Provenance::Local }
    }

    /// Adds one local reward and refreshes mean and bound. Rewards added to
    /// a global-substituted node only accumulate in the local counters.
    pub fn record(&mut self, reward: f64, conf: &ConfParams) {
        self.pulls += 1;
        self.reward_sum += reward;
        if self.provenance == Provenance::Local {
            self.mean = self.reward_sum / self.pulls as f64;
            self.bound = confidence_bound(self.pulls, conf).expect("pulls >= 1");
        }
    }

    pub fn substitute_global(&mut self, mean: f64, bound: f64) {
        self.mean = mean;
        self.bound = bound;
        self.provenance = Provenance::GlobalSubstituted;
    }
}

/// A client's depth-`h` upload: mean and pull count per sampled node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client: usize,
    pub depth: u32,
    pub entries: BTreeMap<NodeId, ReportEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub mean: f64,
    pub pulls: u64,
}

/// The server's answer: surviving nodes with global mean and bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerBroadcast {
    pub depth: u32,
    pub stats: BTreeMap<NodeId, GlobalStat>,
}

impl ServerBroadcast {
    pub fn survivors(&self) -> BTreeSet<NodeId> {
        self.stats.keys().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalStat {
    pub mean: f64,
    pub bound: f64,
    pub pulls: u64,
}

/// Decimal with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl ClientReport {
    /// Canonical text form: a header line, then one line per node in index
    /// order.
    pub fn canonical(&self) -> String {
        let mut s = format!("report client={} depth={} nodes={}\n", self.client, self.depth, self.entries.len());
        for (id, e) in &self.entries {
            let _ = writeln!(s, "  {} {} mean={} pulls={}", id.depth, id.index, fmt_real(e.mean), e.pulls);
        }
        s
    }
}

impl ServerBroadcast {
    pub fn canonical(&self) -> String {
        let mut s = format!("broadcast depth={} survivors={}\n", self.depth, self.stats.len());
        for (id, g) in &self.stats {
            let _ = writeln!(
                s,
                "  {} {} mean={} bound={} pulls={}",
                id.depth,
                id.index,
                fmt_real(g.mean),
                fmt_real(g.bound),
                g.pulls
            );
        }
        s
    }
}

/// Unweighted average of the client means per node, with total pulls and the
/// bound of the total.
pub fn merge_global(reports: &[ClientReport], conf: &ConfParams) -> Result<BTreeMap<NodeId, GlobalStat>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::protocol("merge needs at least one report"))?;
    for r in reports {
        if r.depth != first.depth {
            return Err(Error::protocol(format!(
                "report from client {} is for depth {}, expected {}",
                r.client, r.depth, first.depth
            )));
        }
        if r.entries.len() != first.entries.len() || !r.entries.keys().eq(first.entries.keys()) {
            return Err(Error::protocol(format!(
                "report from client {} covers different nodes than client {}",
                r.client, first.client
            )));
        }
    }
    let m = reports.len() as f64;
    first
        .entries
        .keys()
        .map(|id| {
            let sum: f64 = reports.iter().map(|r| r.entries[id].mean).sum();
            let pulls: u64 = reports.iter().map(|r| r.entries[id].pulls).sum();
            let bound = confidence_bound(pulls, conf)
                .map_err(|_| Error::protocol(format!("node {id} was reported with zero pulls")))?;
            Ok((*id, GlobalStat { mean: sum / m, bound, pulls }))
        })
        .collect()
}

/// Node with the largest mean; ties go to the smallest node id.
pub fn select_best<'a, I>(stats: I) -> Result<NodeId>
where
    I: IntoIterator<Item = (&'a NodeId, &'a NodeStats)>,
{
    let mut best: Option<(NodeId, f64)> = None;
    for (id, s) in stats {
        let better = match best {
            None => true,
            Some((bid, bmean)) => s.mean > bmean || (s.mean == bmean && *id < bid),
        };
        if better {
            best = Some((*id, s.mean));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::protocol("argmax over an empty node set"))
}

/// Candidates whose optimistic value `mean + bound + ν₁ρ^h` is strictly below
/// the pessimistic value `mean − bound` of `best`.
pub fn eliminate(
    stats: &BTreeMap<NodeId, NodeStats>,
    candidates: &BTreeSet<NodeId>,
    best: NodeId,
    h: u32,
    smooth: &SmoothParams,
) -> Result<BTreeSet<NodeId>> {
    let b = stats
        .get(&best)
        .ok_or_else(|| Error::protocol(format!("best node {best} has no statistics")))?;
    let floor = b.mean - b.bound;
    let slack = smooth.resolution(h);
    candidates
        .iter()
        .filter_map(|id| match stats.get(id) {
            None => Some(Err(Error::protocol(format!("candidate {id} has no statistics")))),
            Some(s) if s.mean + s.bound + slack < floor => Some(Ok(*id)),
            Some(_) => None,
        })
        .collect()
}
