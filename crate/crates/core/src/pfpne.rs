//! Server and client state machines of the two-stage protocol.
//!
//! Stage 1 (depths `0..=H₀`): every client pulls each globally active node
//! `⌈τ_h/M⌉` times and uploads its means; the server averages them,
//! eliminates nodes that are clearly worse than the best one and broadcasts
//! the survivors with their global statistics. Clients freeze the survivors
//! as a protected set and overwrite their local statistics with the global
//! ones.
//!
//! Stage 2 is a personalized elimination (PE) that restarts from the root.
//! At each depth the client tops up every unprotected active node to `τ_h`
//! local pulls, picks the best node among all active ones (protected nodes
//! compete with their global statistics) and eliminates unprotected nodes.
//! No communication happens in stage 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{
    self, eliminate, fmt_real, merge_global, select_best, ClientReport, ConfParams, NodeStats, ReportEntry,
    ServerBroadcast, SmoothParams,
};
use crate::objectives::ObjectiveSuite;
use crate::partition::{children, representative, NodeId, PartitionSpec};
use crate::rng::StreamRng;

/// Instant regret below this is treated as an oracle certificate failure.
pub const REGRET_TOLERANCE: f64 = 1e-9;

/// Parameters shared by all parties of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub conf: ConfParams,
    pub smooth: SmoothParams,
    pub partition: PartitionSpec,
    pub clients: usize,
    /// Last collaborative depth. `0` means no collaboration at all.
    pub transition_depth: u32,
    /// Deepest depth that is ever sampled.
    pub depth_cap: u32,
}

impl Protocol {
    pub fn tau(&self, h: u32) -> u128 {
        fedcore::tau(h, &self.conf, &self.smooth)
    }

    pub fn quota(&self, h: u32) -> u128 {
        fedcore::quota(self.tau(h), self.clients)
    }

    /// Whether the run starts with the collaborative stage.
    pub fn collaborates(&self) -> bool {
        self.transition_depth > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Pe,
    /// Depth cap reached; remaining budget goes to one node.
    Fallback,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullRecord {
    pub client: usize,
    /// 1-based per-client clock.
    pub t: u64,
    pub node: NodeId,
    pub point: Vec<f64>,
    pub reward: f64,
    pub instant_regret: f64,
}

/// Outcome of one PE depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeStepRecord {
    pub client: usize,
    pub depth: u32,
    /// `K_m^h` at the start of the step.
    pub active: BTreeSet<NodeId>,
    pub pulls: u64,
    /// `None` when the budget ran out before the depth was complete.
    pub best: Option<NodeId>,
    pub eliminated: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackRecord {
    pub client: usize,
    pub node: NodeId,
    pub pulls: u64,
}

/// Counted messages of one communication round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRound {
    pub round_index: u32,
    pub depth: u32,
    /// Two scalars (mean, pulls) per uploaded node, summed over clients.
    pub scalars_up: u64,
    /// Three scalars (id, mean, bound) per broadcast survivor.
    pub scalars_down: u64,
}

/// What the server decided at one depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerDepthRecord {
    pub depth: u32,
    pub candidates: BTreeSet<NodeId>,
    pub best: NodeId,
    pub eliminated: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    depth: u32,
    active: BTreeSet<NodeId>,
    history: Vec<ServerDepthRecord>,
    rounds: Vec<CommRound>,
}

impl Default for ServerState {
    fn default() -> Self {
        Self::new()
    }
}

impl ServerState {
    pub fn new() -> Self {
        Self { depth: 0, active: [NodeId::ROOT].into(), history: Vec::new(), rounds: Vec::new() }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `K^h` for the current depth.
    pub fn active(&self) -> &BTreeSet<NodeId> {
        &self.active
    }

    pub fn history(&self) -> &[ServerDepthRecord] {
        &self.history
    }

    pub fn rounds(&self) -> &[CommRound] {
        &self.rounds
    }

    /// Merges the reports, eliminates, broadcasts the survivors and expands
    /// `K^{h+1}`.
    pub fn step(&mut self, reports: &[ClientReport], proto: &Protocol) -> Result<ServerBroadcast> {
        if let Some(r) = reports.iter().find(|r| r.depth != self.depth) {
            return Err(Error::protocol(format!(
                "client {} reported depth {} while the server is at depth {}",
                r.client, r.depth, self.depth
            )));
        }
        if reports.iter().any(|r| !r.entries.keys().eq(self.active.iter())) {
            return Err(Error::protocol(format!("reports do not cover K^{} exactly", self.depth)));
        }
        let global = merge_global(reports, &proto.conf)?;
        let view: BTreeMap<NodeId, NodeStats> = global
            .iter()
            .map(|(id, g)| {
                let mut s = NodeStats::with_mean(g.mean, g.bound);
                s.pulls = g.pulls;
                (*id, s)
            })
            .collect();
        let best = select_best(&view)?;
        let eliminated = eliminate(&view, &self.active, best, self.depth, &proto.smooth)?;
        let stats: BTreeMap<_, _> = global.into_iter().filter(|(id, _)| !eliminated.contains(id)).collect();
        let bcast = ServerBroadcast { depth: self.depth, stats };

        self.rounds.push(CommRound {
            round_index: self.rounds.len() as u32,
            depth: self.depth,
            scalars_up: 2 * reports.iter().map(|r| r.entries.len() as u64).sum::<u64>(),
            scalars_down: 3 * bcast.stats.len() as u64,
        });
        self.history.push(ServerDepthRecord {
            depth: self.depth,
            candidates: std::mem::take(&mut self.active),
            best,
            eliminated,
        });
        self.active = bcast.stats.keys().flat_map(|id| children(*id, proto.partition)).collect();
        self.depth += 1;
        Ok(bcast)
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    client: usize,
    horizon: u64,
    clock: u64,
    stage: Stage,
    stats: BTreeMap<NodeId, NodeStats>,
    /// Stage-1 depth and its `K^h`.
    global_depth: u32,
    global_active: BTreeSet<NodeId>,
    /// Frozen survivor sets `K^h`, indexed by depth.
    protected: Vec<BTreeSet<NodeId>>,
    pe_depth: u32,
    local_active: BTreeSet<NodeId>,
    /// Survivors of the last processed depth; the fallback picks among them.
    last_survivors: BTreeSet<NodeId>,
    records: Vec<PullRecord>,
    rng: StreamRng,
}

impl ClientState {
    /// A client with budget `horizon`. Collaborating runs start in stage 1,
    /// others go straight to PE.
    pub fn new(client: usize, horizon: u64, rng: StreamRng, proto: &Protocol) -> Self {
        let mut state = Self {
            client,
            horizon,
            clock: 0,
            stage: Stage::Stage1,
            stats: BTreeMap::new(),
            global_depth: 0,
            global_active: [NodeId::ROOT].into(),
            protected: Vec::new(),
            pe_depth: 0,
            local_active: BTreeSet::new(),
            last_survivors: BTreeSet::new(),
            records: Vec::with_capacity(horizon.min(1 << 20) as usize),
            rng,
        };
        if !proto.collaborates() {
            state.enter_pe();
        }
        state
    }

    pub fn client(&self) -> usize {
        self.client
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn budget_remaining(&self) -> u64 {
        self.horizon - self.clock
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn stats(&self) -> &BTreeMap<NodeId, NodeStats> {
        &self.stats
    }

    pub fn protected(&self) -> &[BTreeSet<NodeId>] {
        &self.protected
    }

    pub fn protected_at(&self, h: u32) -> Option<&BTreeSet<NodeId>> {
        self.protected.get(h as usize)
    }

    pub fn pe_depth(&self) -> u32 {
        self.pe_depth
    }

    pub fn global_depth(&self) -> u32 {
        self.global_depth
    }

    pub fn global_active(&self) -> &BTreeSet<NodeId> {
        &self.global_active
    }

    pub fn local_active(&self) -> &BTreeSet<NodeId> {
        &self.local_active
    }

    pub fn records(&self) -> &[PullRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PullRecord> {
        self.records
    }

    /// One pull of `node` at `point`. Returns `false` (and marks the client
    /// exhausted) when no budget is left.
    fn pull(&mut self, node: NodeId, point: &[f64], suite: &ObjectiveSuite, proto: &Protocol) -> Result<bool> {
        if self.clock >= self.horizon {
            self.stage = Stage::Exhausted;
            return Ok(false);
        }
        let value = suite.eval_local(self.client, point)?;
        let reward = value + suite.noise().draw(&mut self.rng);
        let instant_regret = suite.local_optimum(self.client).value - value;
        if instant_regret < -REGRET_TOLERANCE {
            return Err(Error::Oracle(format!(
                "client {} found f = {value} above the certified optimum {}",
                self.client,
                suite.local_optimum(self.client).value
            )));
        }
        self.clock += 1;
        self.stats.entry(node).or_insert_with(NodeStats::empty).record(reward, &proto.conf);
        self.records.push(PullRecord {
            client: self.client,
            t: self.clock,
            node,
            point: point.to_vec(),
            reward,
            instant_regret,
        });
        Ok(true)
    }

    /// Stage-1 sampling of the current `K^h`: `quota` pulls per node in index
    /// order. If the budget runs out the report covers the nodes that
    /// received at least one pull.
    pub fn stage1_sample(&mut self, quota: u128, suite: &ObjectiveSuite, proto: &Protocol) -> Result<ClientReport> {
        if self.stage != Stage::Stage1 {
            return Err(Error::protocol(format!("client {} is not in stage 1", self.client)));
        }
        let domain = suite.domain().clone();
        let active: Vec<NodeId> = self.global_active.iter().copied().collect();
        let mut entries = BTreeMap::new();
        'nodes: for node in active {
            let point = representative(&domain, node, proto.partition);
            let mut pulled = 0u64;
            for _ in 0..quota {
                if !self.pull(node, &point, suite, proto)? {
                    if pulled > 0 {
                        entries.insert(node, self.entry_since(node, pulled));
                    }
                    break 'nodes;
                }
                pulled += 1;
            }
            entries.insert(node, self.entry_since(node, pulled));
        }
        Ok(ClientReport { client: self.client, depth: self.global_depth, entries })
    }

    /// Each node is sampled at exactly one stage-1 depth, so its local
    /// statistics are the depth's statistics.
    fn entry_since(&self, node: NodeId, pulled: u64) -> ReportEntry {
        let s = &self.stats[&node];
        debug_assert_eq!(s.pulls, pulled);
        ReportEntry { mean: s.mean, pulls: s.pulls }
    }

    /// Takes in the server's survivors: freezes them as `protected[h]`,
    /// substitutes their global statistics and advances the depth (or moves
    /// to PE / fallback).
    pub fn absorb_broadcast(&mut self, bcast: &ServerBroadcast, proto: &Protocol) -> Result<()> {
        if self.stage != Stage::Stage1 {
            return Err(Error::protocol(format!("client {} is not in stage 1", self.client)));
        }
        if bcast.depth != self.global_depth {
            return Err(Error::protocol(format!(
                "broadcast for depth {} reached client {} at depth {}",
                bcast.depth, self.client, self.global_depth
            )));
        }
        for (id, g) in &bcast.stats {
            if !self.global_active.contains(id) {
                return Err(Error::protocol(format!("broadcast names unknown node {id}")));
            }
            self.stats.get_mut(id).ok_or_else(|| Error::protocol(format!("node {id} was never sampled")))?
                .substitute_global(g.mean, g.bound);
        }
        let survivors = bcast.survivors();
        debug_assert_eq!(self.protected.len(), self.global_depth as usize);
        self.protected.push(survivors.clone());
        self.global_active = survivors.iter().flat_map(|id| children(*id, proto.partition)).collect();
        self.last_survivors = survivors;
        let next = self.global_depth + 1;
        if next > proto.depth_cap {
            self.stage = Stage::Fallback;
        } else if next > proto.transition_depth {
            self.enter_pe();
        } else {
            self.global_depth = next;
        }
        Ok(())
    }

    /// Restart from the root in PE. Protected sets and all local statistics
    /// are kept; depths beyond the transition have no protected nodes.
    pub fn enter_pe(&mut self) {
        self.stage = Stage::Pe;
        self.pe_depth = 0;
        self.local_active = [NodeId::ROOT].into();
    }

    /// One PE depth: top up unprotected nodes to `τ_h`, select the best over
    /// all active nodes, eliminate unprotected ones and expand.
    pub fn pe_depth_step(&mut self, suite: &ObjectiveSuite, proto: &Protocol) -> Result<PeStepRecord> {
        if self.stage != Stage::Pe {
            return Err(Error::protocol(format!("client {} is not in PE", self.client)));
        }
        let h = self.pe_depth;
        let tau = proto.tau(h);
        let empty = BTreeSet::new();
        let protected = self.protected.get(h as usize).unwrap_or(&empty).clone();
        let unprotected: Vec<NodeId> = self.local_active.difference(&protected).copied().collect();
        let domain = suite.domain().clone();
        let start = self.clock;
        for &node in &unprotected {
            let point = representative(&domain, node, proto.partition);
            while u128::from(self.stats.get(&node).map_or(0, |s| s.pulls)) < tau {
                if !self.pull(node, &point, suite, proto)? {
                    return Ok(PeStepRecord {
                        client: self.client,
                        depth: h,
                        active: self.local_active.clone(),
                        pulls: self.clock - start,
                        best: None,
                        eliminated: BTreeSet::new(),
                    });
                }
            }
        }

        let view: BTreeMap<NodeId, NodeStats> = self
            .local_active
            .iter()
            .map(|id| {
                self.stats
                    .get(id)
                    .map(|s| (*id, s.clone()))
                    .ok_or_else(|| Error::protocol(format!("active node {id} has no statistics")))
            })
            .collect::<Result<_>>()?;
        let best = select_best(&view)?;
        let candidates: BTreeSet<NodeId> = unprotected.iter().copied().collect();
        let eliminated = eliminate(&view, &candidates, best, h, &proto.smooth)?;
        if !eliminated.is_disjoint(&protected) {
            return Err(Error::protocol(format!("client {} eliminated a protected node at depth {h}", self.client)));
        }
        let survivors: BTreeSet<NodeId> = self.local_active.difference(&eliminated).copied().collect();
        let active = std::mem::take(&mut self.local_active);
        if h >= proto.depth_cap {
            self.stage = Stage::Fallback;
            self.local_active = survivors.clone();
        } else {
            self.local_active = survivors.iter().flat_map(|id| children(*id, proto.partition)).collect();
            self.pe_depth += 1;
        }
        self.last_survivors = survivors;
        Ok(PeStepRecord { client: self.client, depth: h, active, pulls: self.clock - start, best: Some(best), eliminated })
    }

    /// At the depth cap: spend everything left on the best surviving node.
    pub fn max_depth_fallback(&mut self, suite: &ObjectiveSuite, proto: &Protocol) -> Result<FallbackRecord> {
        if self.stage != Stage::Fallback {
            return Err(Error::protocol(format!("client {} has not reached the depth cap", self.client)));
        }
        let view: BTreeMap<NodeId, NodeStats> = self
            .last_survivors
            .iter()
            .filter_map(|id| self.stats.get(id).map(|s| (*id, s.clone())))
            .collect();
        let node = select_best(&view)?;
        let point = representative(suite.domain(), node, proto.partition);
        let mut pulls = 0;
        while self.pull(node, &point, suite, proto)? {
            pulls += 1;
        }
        Ok(FallbackRecord { client: self.client, node, pulls })
    }
}

/// Protocol messages and decisions in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Report(ClientReport),
    Broadcast(ServerBroadcast),
    PeStep(PeStepRecord),
    Fallback(FallbackRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn pe_steps(&self) -> impl Iterator<Item = &PeStepRecord> {
        self.events.iter().filter_map(|e| match e {
            Event::PeStep(p) => Some(p),
            _ => None,
        })
    }

    pub fn broadcasts(&self) -> impl Iterator<Item = &ServerBroadcast> {
        self.events.iter().filter_map(|e| match e {
            Event::Broadcast(b) => Some(b),
            _ => None,
        })
    }

    /// Deterministic text rendering used for golden files.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            match e {
                Event::Report(r) => s.push_str(&r.canonical()),
                Event::Broadcast(b) => s.push_str(&b.canonical()),
                Event::PeStep(p) => {
                    let _ = write!(s, "pe client={} depth={} pulls={}", p.client, p.depth, p.pulls);
                    match p.best {
                        Some(b) => {
                            let _ = write!(s, " best={} {}", b.depth, b.index);
                        }
                        None => s.push_str(" best=none"),
                    }
                    let _ = write!(s, " eliminated={}", p.eliminated.len());
                    for id in &p.eliminated {
                        let _ = write!(s, " {}", id.index);
                    }
                    s.push('\n');
                }
                Event::Fallback(f) => {
                    let _ = writeln!(
                        s,
                        "fallback client={} node={} {} pulls={}",
                        f.client, f.node.depth, f.node.index, f.pulls
                    );
                }
            }
        }
        s
    }
}

/// Canonical text of a pull record, for transcript comparisons.
pub fn canonical_pull(p: &PullRecord) -> String {
    let pt: Vec<String> = p.point.iter().map(|v| fmt_real(*v)).collect();
    format!(
        "pull client={} t={} node={} {} x=[{}] reward={} regret={}",
        p.client,
        p.t,
        p.node.depth,
        p.node.index,
        pt.join(","),
        fmt_real(p.reward),
        fmt_real(p.instant_regret)
    )
}
