//! Synthetic objective suites.
//!
//! A suite holds `M` client objectives `f_m(x) = base(clip(x − s_m))`, each a
//! randomly shifted copy of a `[0, 1]`-valued base function, plus their
//! average `f̄`. Optimal values are certified by a brute-force oracle.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::BoxDomain;
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Garland,
    DoubleSine,
    Himmelblau,
    Rastrigin,
    Ackley,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Garland,
        ObjectiveKind::DoubleSine,
        ObjectiveKind::Himmelblau,
        ObjectiveKind::Rastrigin,
        ObjectiveKind::Ackley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Garland => "garland",
            ObjectiveKind::DoubleSine => "doublesine",
            ObjectiveKind::Himmelblau => "himmelblau",
            ObjectiveKind::Rastrigin => "rastrigin",
            ObjectiveKind::Ackley => "ackley",
        }
    }

    pub fn default_domain(self) -> BoxDomain {
        let (lo, hi, dim) = match self {
            ObjectiveKind::Garland | ObjectiveKind::DoubleSine => (0.0, 1.0, 1),
            ObjectiveKind::Himmelblau => (-5.0, 5.0, 2),
            ObjectiveKind::Rastrigin => (-1.0, 1.0, 10),
            ObjectiveKind::Ackley => (-1.0, 1.0, 2),
        };
        BoxDomain::cube(lo, hi, dim).expect("static domain is valid")
    }

    /// Peak forms are normalized as `raw / max`; basin forms (minimization
    /// benchmarks with minimum 0) as `1 − raw / max`.
    fn is_peak(self) -> bool {
        matches!(self, ObjectiveKind::Garland | ObjectiveKind::DoubleSine)
    }

    fn required_dim(self) -> Option<usize> {
        match self {
            ObjectiveKind::Garland | ObjectiveKind::DoubleSine => Some(1),
            ObjectiveKind::Himmelblau => Some(2),
            ObjectiveKind::Rastrigin | ObjectiveKind::Ackley => None,
        }
    }

    fn raw(self, x: &[f64]) -> f64 {
        use std::f64::consts::{E, PI};
        match self {
            ObjectiveKind::Garland => {
                let x = x[0];
                4.0 * x * (1.0 - x) * (0.75 + 0.25 * (1.0 - (60.0 * x).sin().abs().sqrt()))
            }
            ObjectiveKind::DoubleSine => {
                let x = x[0];
                ((13.0 * x).sin() * (27.0 * x).sin() + 1.0) / 2.0
            }
            ObjectiveKind::Himmelblau => {
                let (a, b) = (x[0], x[1]);
                (a * a + b - 11.0).powi(2) + (a + b * b - 7.0).powi(2)
            }
            ObjectiveKind::Rastrigin => x.iter().map(|&v| rastrigin_term(v)).sum(),
            ObjectiveKind::Ackley => {
                let n = x.len() as f64;
                let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
                let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
            }
        }
    }

    /// Location of the raw minimum for basin forms whose optimizer is known
    /// in closed form in any dimension.
    fn known_optimizer(self, dim: usize) -> Option<Vec<f64>> {
        match self {
            ObjectiveKind::Rastrigin | ObjectiveKind::Ackley => Some(vec![0.0; dim]),
            ObjectiveKind::Himmelblau => Some(vec![3.0, 2.0]),
            _ => None,
        }
    }
}

fn rastrigin_term(v: f64) -> f64 {
    v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos() + 10.0
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown objective `{s}` (expected one of garland, doublesine, himmelblau, rastrigin, ackley)"
                ))
            })
    }
}

/// A named base function on a box, normalized into `[0, 1]` with maximum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseObjective {
    kind: ObjectiveKind,
    domain: BoxDomain,
    normalization_max: f64,
}

impl BaseObjective {
    /// The base function on its standard domain. The normalization constant
    /// is certified once per process.
    pub fn new(kind: ObjectiveKind) -> Result<Self> {
        static CACHE: [OnceLock<f64>; 5] = [const { OnceLock::new() }; 5];
        let slot = &CACHE[ObjectiveKind::ALL.iter().position(|k| *k == kind).unwrap()];
        let domain = kind.default_domain();
        let normalization_max = match slot.get() {
            Some(v) => *v,
            None => {
                let v = certify_raw_max(kind, &domain, &OracleBudget::default())?;
                *slot.get_or_init(|| v)
            }
        };
        Ok(Self { kind, domain, normalization_max })
    }

    pub fn with_domain(kind: ObjectiveKind, domain: BoxDomain) -> Result<Self> {
        Self::check_domain(kind, &domain)?;
        if domain == kind.default_domain() {
            return Self::new(kind);
        }
        let normalization_max = certify_raw_max(kind, &domain, &OracleBudget::default())?;
        Ok(Self { kind, domain, normalization_max })
    }

    /// Whether `kind` is defined on a domain of this dimension.
    pub fn check_domain(kind: ObjectiveKind, domain: &BoxDomain) -> Result<()> {
        match kind.required_dim() {
            Some(d) if domain.dim() != d => Err(Error::config(format!(
                "{kind} is defined in {d} dimension(s), domain has {}",
                domain.dim()
            ))),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn normalization_max(&self) -> f64 {
        self.normalization_max
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the {} domain", self.kind)));
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation; `x` must lie in the domain.
    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        let raw = self.kind.raw(x);
        if self.kind.is_peak() {
            raw / self.normalization_max
        } else {
            (1.0 - raw / self.normalization_max).max(0.0)
        }
    }
}

fn certify_raw_max(kind: ObjectiveKind, domain: &BoxDomain, budget: &OracleBudget) -> Result<f64> {
    if kind == ObjectiveKind::Rastrigin {
        // Separable: the maximum of the sum is the sum of per-axis maxima.
        let mut total = 0.0;
        for j in 0..domain.dim() {
            let axis = BoxDomain::new(vec![domain.lower()[j]], vec![domain.upper()[j]])?;
            total += oracle_optimum(&|x: &[f64]| rastrigin_term(x[0]), &axis, budget)?.value;
        }
        return Ok(total);
    }
    let cert = oracle_optimum(&|x: &[f64]| kind.raw(x), domain, budget)?;
    if cert.value <= 0.0 {
        return Err(Error::Oracle(format!("{kind} has a non-positive raw maximum")));
    }
    Ok(cert.value)
}

// ---------------------------------------------------------------------------
// Optimum oracle
// ---------------------------------------------------------------------------

/// Resolution budget of the optimum oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Points per dimension of the exhaustive grid (dimension ≤ 2).
    pub grid_per_dim: usize,
    /// Points per dimension of each zoom grid.
    pub zoom_points: usize,
    pub max_rounds: usize,
    /// Window shrink factor between zoom rounds.
    pub shrink: f64,
    /// How many grid local maxima are refined.
    pub candidates: usize,
    /// Uniform samples for dimension > 2 without a structural shortcut.
    pub random_samples: usize,
    /// Zooming stops once every window half-width is below this fraction of
    /// the domain width.
    pub resolution: f64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            grid_per_dim: 4096,
            zoom_points: 41,
            max_rounds: 80,
            shrink: 10.0,
            candidates: 16,
            random_samples: 1_000_000,
            resolution: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Grid,
    Separable,
    Analytic,
    RandomSearch,
}

/// A certified maximizer: `value` is at least every probed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub point: Vec<f64>,
    pub value: f64,
    pub method: OracleMethod,
    pub evaluations: u64,
    pub zoom_rounds: usize,
}

/// Bounded list of the best candidates seen, sorted by value descending.
#[derive(Debug, Clone)]
struct TopK {
    cap: usize,
    items: Vec<(f64, Vec<f64>)>,
}

impl TopK {
    fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), items: Vec::new() }
    }

    fn admits(&self, v: f64) -> bool {
        self.items.len() < self.cap || v > self.items.last().map_or(f64::NEG_INFINITY, |c| c.0)
    }

    fn push(&mut self, v: f64, x: Vec<f64>) {
        if !self.admits(v) {
            return;
        }
        let pos = self.items.partition_point(|c| c.0 >= v);
        self.items.insert(pos, (v, x));
        self.items.truncate(self.cap);
    }

    fn merge(mut self, other: TopK) -> TopK {
        for (v, x) in other.items {
            self.push(v, x);
        }
        self
    }
}

fn grid_coord(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / (n - 1) as f64)
    }
}

/// Exhaustive grid over a 1- or 2-dimensional box for several objectives at
/// once. Returns, per objective, the best grid local maxima (a point is a
/// local maximum when it is ≥ all of its grid neighbours).
fn grid_sweep<E>(domain: &BoxDomain, n: usize, n_obj: usize, keep: usize, eval_all: &E) -> Vec<TopK>
where
    E: Fn(&[f64], &mut [f64]) + Sync,
{
    let d = domain.dim();
    debug_assert!(d == 1 || d == 2);
    let nx = n;
    let ny = if d == 2 { n } else { 1 };
    let xs: Vec<f64> = (0..nx).map(|i| grid_coord(domain.lower()[0], domain.upper()[0], nx, i)).collect();
    let ys: Vec<f64> = if d == 2 {
        (0..ny).map(|i| grid_coord(domain.lower()[1], domain.upper()[1], ny, i)).collect()
    } else {
        vec![0.0]
    };
    let point = |c: usize, r: usize| -> Vec<f64> {
        if d == 2 {
            vec![xs[c], ys[r]]
        } else {
            vec![xs[c]]
        }
    };

    const BLOCK: usize = 32;
    let blocks: Vec<usize> = (0..ny).step_by(BLOCK).collect();
    blocks
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + BLOCK).min(ny);
            let first = r0.saturating_sub(1);
            let last = (r1 + 1).min(ny);
            let rows = last - first;
            let mut vals = vec![0.0; rows * nx * n_obj];
            for r in first..last {
                for c in 0..nx {
                    let off = ((r - first) * nx + c) * n_obj;
                    eval_all(&point(c, r), &mut vals[off..off + n_obj]);
                }
            }
            let at = |r: usize, c: usize, o: usize| vals[((r - first) * nx + c) * n_obj + o];
            let mut tops: Vec<TopK> = (0..n_obj).map(|_| TopK::new(keep)).collect();
            for r in r0..r1 {
                for c in 0..nx {
                    for (o, top) in tops.iter_mut().enumerate() {
                        let v = at(r, c, o);
                        if !top.admits(v) {
                            continue;
                        }
                        let mut is_max = true;
                        'nb: for dr in -1i64..=1 {
                            for dc in -1i64..=1 {
                                if dr == 0 && dc == 0 {
                                    continue;
                                }
                                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                                if rr < 0 || cc < 0 || rr >= ny as i64 || cc >= nx as i64 {
                                    continue;
                                }
                                if at(rr as usize, cc as usize, o) > v {
                                    is_max = false;
                                    break 'nb;
                                }
                            }
                        }
                        if is_max {
                            top.push(v, point(c, r));
                        }
                    }
                }
            }
            tops
        })
        .reduce(
            || (0..n_obj).map(|_| TopK::new(keep)).collect(),
            |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
        )
}

/// Repeated grid zoom around an incumbent. Each round evaluates a grid over
/// `[x − w, x + w] ∩ domain`, moves to the best point and shrinks `w`. In
/// more than two dimensions the grid is replaced by per-axis line grids.
fn zoom<F>(
    f: &F,
    domain: &BoxDomain,
    start: (Vec<f64>, f64),
    mut half_width: Vec<f64>,
    budget: &OracleBudget,
) -> Result<(Vec<f64>, f64, usize, u64)>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let d = domain.dim();
    let z = budget.zoom_points.max(3);
    let (mut best_x, mut best_v) = start;
    let mut evals = 0u64;
    for round in 1..=budget.max_rounds {
        let axis = |j: usize, x: &[f64], w: &[f64]| -> Vec<f64> {
            let lo = (x[j] - w[j]).max(domain.lower()[j]);
            let hi = (x[j] + w[j]).min(domain.upper()[j]);
            (0..z).map(|i| grid_coord(lo, hi, z, i)).collect()
        };
        if d <= 2 {
            let ax: Vec<Vec<f64>> = (0..d).map(|j| axis(j, &best_x, &half_width)).collect();
            let center = best_x.clone();
            let mut p = center.clone();
            let total = z.pow(d as u32);
            for flat in 0..total {
                let mut rem = flat;
                for (j, coords) in ax.iter().enumerate() {
                    p[j] = coords[rem % z];
                    rem /= z;
                }
                let v = f(&p);
                evals += 1;
                if v > best_v {
                    best_v = v;
                    best_x.clone_from(&p);
                }
            }
        } else {
            for j in 0..d {
                let coords = axis(j, &best_x, &half_width);
                let mut p = best_x.clone();
                for c in coords {
                    p[j] = c;
                    let v = f(&p);
                    evals += 1;
                    if v > best_v {
                        best_v = v;
                        best_x.clone_from(&p);
                    }
                }
            }
        }
        for w in half_width.iter_mut() {
            *w /= budget.shrink;
        }
        if half_width.iter().enumerate().all(|(j, w)| *w <= budget.resolution * domain.width(j)) {
            return Ok((best_x, best_v, round, evals));
        }
    }
    Err(Error::Oracle(format!(
        "zoom did not converge within {} rounds (incumbent {best_v})",
        budget.max_rounds
    )))
}

fn refine_candidates<F>(f: &F, domain: &BoxDomain, top: TopK, step: Vec<f64>, budget: &OracleBudget, method: OracleMethod, base_evals: u64) -> Result<Certificate>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut best: Option<Certificate> = None;
    let mut evals = base_evals;
    for (v, x) in top.items {
        let (px, pv, rounds, e) = zoom(f, domain, (x, v), step.clone(), budget)?;
        evals += e;
        if best.as_ref().is_none_or(|b| pv > b.value) {
            best = Some(Certificate { point: px, value: pv, method, evaluations: 0, zoom_rounds: rounds });
        }
    }
    let mut cert = best.ok_or_else(|| Error::Oracle("no candidates to refine".into()))?;
    cert.evaluations = evals;
    Ok(cert)
}

fn grid_steps(domain: &BoxDomain, n: usize) -> Vec<f64> {
    (0..domain.dim()).map(|j| domain.width(j) / (n.max(2) - 1) as f64).collect()
}

/// Certified maximum of `f` over `domain`.
///
/// Dimension ≤ 2: exhaustive grid, then zoom refinement of the best grid
/// local maxima. Higher dimensions: uniform random search followed by zoom.
pub fn oracle_optimum<F>(f: &F, domain: &BoxDomain, budget: &OracleBudget) -> Result<Certificate>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if domain.dim() <= 2 {
        let n = budget.grid_per_dim.max(2);
        let keep = if domain.dim() == 1 { budget.candidates * 4 } else { budget.candidates };
        let mut tops = grid_sweep(domain, n, 1, keep, &|x: &[f64], out: &mut [f64]| out[0] = f(x));
        let evals = (n as u64).pow(domain.dim() as u32);
        refine_candidates(f, domain, tops.remove(0), grid_steps(domain, n), budget, OracleMethod::Grid, evals)
    } else {
        random_search(f, domain, budget, 0)
    }
}

fn random_search<F>(f: &F, domain: &BoxDomain, budget: &OracleBudget, seed: u64) -> Result<Certificate>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    const CHUNK: usize = 1 << 14;
    let samples = budget.random_samples.max(1);
    let chunks = samples.div_ceil(CHUNK);
    let top = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, Purpose::Oracle, c as u32);
            let mut top = TopK::new(budget.candidates);
            let mut p = vec![0.0; domain.dim()];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                for (j, v) in p.iter_mut().enumerate() {
                    *v = rng.random_range(domain.lower()[j]..=domain.upper()[j]);
                }
                let v = f(&p);
                if top.admits(v) {
                    top.push(v, p.clone());
                }
            }
            top
        })
        .reduce(|| TopK::new(budget.candidates), TopK::merge);
    // Typical spacing of the random cloud per axis.
    let spacing = (samples as f64).powf(-1.0 / domain.dim() as f64);
    let step: Vec<f64> = (0..domain.dim()).map(|j| domain.width(j) * spacing).collect();
    refine_candidates(f, domain, top, step, budget, OracleMethod::RandomSearch, samples as u64)
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// Symmetric bounded noise `ε ~ Uniform[−σ, σ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub halfwidth: f64,
}

impl NoiseModel {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.halfwidth * (2.0 * u - 1.0)
    }
}

/// `M` shifted client objectives over a shared base and their average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSuite {
    base: BaseObjective,
    shifts: Vec<Vec<f64>>,
    shift_std: f64,
    noise: NoiseModel,
    local_optima: Vec<Certificate>,
    global_optimum: Certificate,
}

impl ObjectiveSuite {
    /// Draws shifts `s_{m,j} ~ N(0, shift_std²)` from the seed's shift
    /// substreams and certifies every local optimum and the global one.
    pub fn new(base: BaseObjective, clients: usize, shift_std: f64, noise_halfwidth: f64, seed: u64) -> Result<Self> {
        Self::with_budget(base, clients, shift_std, noise_halfwidth, seed, &OracleBudget::default())
    }

    pub fn with_budget(
        base: BaseObjective,
        clients: usize,
        shift_std: f64,
        noise_halfwidth: f64,
        seed: u64,
        budget: &OracleBudget,
    ) -> Result<Self> {
        if clients == 0 {
            return Err(Error::config("a suite needs at least one client"));
        }
        if !(shift_std >= 0.0 && shift_std.is_finite()) {
            return Err(Error::config(format!("shift_std must be >= 0, got {shift_std}")));
        }
        if !(noise_halfwidth >= 0.0 && noise_halfwidth.is_finite()) {
            return Err(Error::config(format!("noise must be >= 0, got {noise_halfwidth}")));
        }
        let dim = base.dim();
        let shifts: Vec<Vec<f64>> = (0..clients)
            .map(|m| {
                if shift_std == 0.0 {
                    return vec![0.0; dim];
                }
                let mut rng = substream(seed, Purpose::Shift, m as u32);
                (0..dim)
                    .map(|_| shift_std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::from_shifts(base, shifts, shift_std, noise_halfwidth, budget)
    }

    /// Suite with explicit shift vectors.
    pub fn from_shifts(
        base: BaseObjective,
        shifts: Vec<Vec<f64>>,
        shift_std: f64,
        noise_halfwidth: f64,
        budget: &OracleBudget,
    ) -> Result<Self> {
        if shifts.is_empty() || shifts.iter().any(|s| s.len() != base.dim()) {
            return Err(Error::config("need one shift vector of the domain's dimension per client"));
        }
        let mut suite = Self {
            base,
            shifts,
            shift_std,
            noise: NoiseModel { halfwidth: noise_halfwidth },
            local_optima: Vec::new(),
            global_optimum: Certificate {
                point: Vec::new(),
                value: f64::NAN,
                method: OracleMethod::Grid,
                evaluations: 0,
                zoom_rounds: 0,
            },
        };
        let (locals, global) = suite.certify(budget)?;
        suite.local_optima = locals;
        suite.global_optimum = global;
        Ok(suite)
    }

    pub fn base(&self) -> &BaseObjective {
        &self.base
    }

    pub fn domain(&self) -> &BoxDomain {
        self.base.domain()
    }

    pub fn clients(&self) -> usize {
        self.shifts.len()
    }

    pub fn shifts(&self) -> &[Vec<f64>] {
        &self.shifts
    }

    pub fn shift_std(&self) -> f64 {
        self.shift_std
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn local_optimum(&self, m: usize) -> &Certificate {
        &self.local_optima[m]
    }

    pub fn local_optima(&self) -> &[Certificate] {
        &self.local_optima
    }

    pub fn global_optimum(&self) -> &Certificate {
        &self.global_optimum
    }

    fn check(&self, m: usize, x: &[f64]) -> Result<()> {
        if m >= self.clients() {
            return Err(Error::Domain(format!("client {m} out of range (M = {})", self.clients())));
        }
        if !self.domain().contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the domain")));
        }
        Ok(())
    }

    /// `f_m(x)` for the 0-based client index `m`.
    pub fn eval_local(&self, m: usize, x: &[f64]) -> Result<f64> {
        self.check(m, x)?;
        Ok(self.local_value(m, x))
    }

    pub fn eval_global(&self, x: &[f64]) -> Result<f64> {
        if !self.domain().contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the domain")));
        }
        Ok(self.global_value(x))
    }

    /// Noisy reward `f_m(x) + ε`; not clipped.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, x: &[f64], rng: &mut R) -> Result<f64> {
        let f = self.eval_local(m, x)?;
        Ok(f + self.noise.draw(rng))
    }

    pub(crate) fn local_value(&self, m: usize, x: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(&self.shifts[m]).map(|(v, s)| v - s).collect();
        self.base.value(&self.domain().clip(&shifted))
    }

    pub(crate) fn global_value(&self, x: &[f64]) -> f64 {
        let sum: f64 = (0..self.clients()).map(|m| self.local_value(m, x)).sum();
        sum / self.clients() as f64
    }

    fn certify(&self, budget: &OracleBudget) -> Result<(Vec<Certificate>, Certificate)> {
        let m_count = self.clients();
        let domain = self.domain().clone();
        if domain.dim() <= 2 {
            let n = budget.grid_per_dim.max(2);
            let keep = if domain.dim() == 1 { budget.candidates * 4 } else { budget.candidates };
            let tops = grid_sweep(&domain, n, m_count + 1, keep, &|x: &[f64], out: &mut [f64]| {
                for (m, o) in out.iter_mut().take(m_count).enumerate() {
                    *o = self.local_value(m, x);
                }
                // Same summation order as `global_value`.
                let sum: f64 = out[..m_count].iter().sum();
                out[m_count] = sum / m_count as f64;
            });
            let evals = (n as u64).pow(domain.dim() as u32);
            let step = grid_steps(&domain, n);
            let mut tops = tops.into_iter();
            let locals = (0..m_count)
                .map(|m| {
                    let top = tops.next().unwrap();
                    refine_candidates(&|x: &[f64]| self.local_value(m, x), &domain, top, step.clone(), budget, OracleMethod::Grid, evals)
                })
                .collect::<Result<Vec<_>>>()?;
            let global = refine_candidates(
                &|x: &[f64]| self.global_value(x),
                &domain,
                tops.next().unwrap(),
                step,
                budget,
                OracleMethod::Grid,
                evals,
            )?;
            return Ok((locals, global));
        }

        let locals = (0..m_count)
            .map(|m| self.certify_local_high_dim(m, budget))
            .collect::<Result<Vec<_>>>()?;
        let global = if self.base.kind() == ObjectiveKind::Rastrigin {
            self.certify_separable(None, budget)?
        } else {
            random_search(&|x: &[f64]| self.global_value(x), &domain, budget, 0)?
        };
        Ok((locals, global))
    }

    fn certify_local_high_dim(&self, m: usize, budget: &OracleBudget) -> Result<Certificate> {
        let domain = self.domain();
        if let Some(opt) = self.base.kind.known_optimizer(domain.dim()) {
            let x: Vec<f64> = opt.iter().zip(&self.shifts[m]).map(|(o, s)| o + s).collect();
            let interior = x
                .iter()
                .zip(domain.lower().iter().zip(domain.upper()))
                .all(|(v, (lo, hi))| lo < v && v < hi);
            if interior && self.base.domain().contains(&opt) {
                let value = self.local_value(m, &x);
                return Ok(Certificate { point: x, value, method: OracleMethod::Analytic, evaluations: 1, zoom_rounds: 0 });
            }
        }
        if self.base.kind() == ObjectiveKind::Rastrigin {
            return self.certify_separable(Some(m), budget);
        }
        random_search(&|x: &[f64]| self.local_value(m, x), domain, budget, m as u64 + 1)
    }

    /// Rastrigin suites are sums of per-axis terms (clipping acts per axis),
    /// so `f_m` and `f̄` are maximized one axis at a time.
    fn certify_separable(&self, client: Option<usize>, budget: &OracleBudget) -> Result<Certificate> {
        let domain = self.domain();
        let members: Vec<usize> = match client {
            Some(m) => vec![m],
            None => (0..self.clients()).collect(),
        };
        let mut point = Vec::with_capacity(domain.dim());
        let mut evals = 0u64;
        let mut rounds = 0usize;
        for j in 0..domain.dim() {
            let (lo, hi) = (domain.lower()[j], domain.upper()[j]);
            let axis = BoxDomain::new(vec![lo], vec![hi])?;
            let neg_term = |x: &[f64]| {
                let s: f64 = members
                    .iter()
                    .map(|&m| rastrigin_term((x[0] - self.shifts[m][j]).clamp(lo, hi)))
                    .sum();
                -s / members.len() as f64
            };
            let cert = oracle_optimum(&neg_term, &axis, budget)?;
            evals += cert.evaluations;
            rounds = rounds.max(cert.zoom_rounds);
            point.push(cert.point[0]);
        }
        let value = match client {
            Some(m) => self.local_value(m, &point),
            None => self.global_value(&point),
        };
        Ok(Certificate { point, value, method: OracleMethod::Separable, evaluations: evals, zoom_rounds: rounds })
    }
}

// ---------------------------------------------------------------------------
// Near-optimality profile
// ---------------------------------------------------------------------------

/// Largest grid the profiler will enumerate.
pub const MAX_PROFILE_CELLS: u64 = 1 << 32;

fn profile_grid(domain: &BoxDomain, grid_step: f64) -> Result<(Vec<u64>, u64)> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::config(format!("grid_step must be positive, got {grid_step}")));
    }
    let counts: Vec<u64> = (0..domain.dim())
        .map(|j| ((domain.width(j) / grid_step) - 1e-9).ceil().max(1.0) as u64)
        .collect();
    let total = counts
        .iter()
        .try_fold(1u64, |acc, &n| acc.checked_mul(n))
        .filter(|&t| t <= MAX_PROFILE_CELLS)
        .ok_or_else(|| Error::config(format!("profile grid with step {grid_step} has too many cells")))?;
    Ok((counts, total))
}

fn cell_center(domain: &BoxDomain, counts: &[u64], mut flat: u64, out: &mut [f64]) {
    for (j, &n) in counts.iter().enumerate() {
        let i = flat % n;
        flat /= n;
        out[j] = domain.lower()[j] + domain.width(j) * ((i as f64 + 0.5) / n as f64);
    }
}

/// Number of cells of a uniform grid (step `grid_step` per axis) whose
/// center value is at least `f_star − eps`: an empirical proxy for the
/// covering number of the `eps`-optimal set.
pub fn near_optimality_profile<F>(f: &F, domain: &BoxDomain, f_star: f64, eps: f64, grid_step: f64) -> Result<u64>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("eps must be positive, got {eps}")));
    }
    let (counts, total) = profile_grid(domain, grid_step)?;
    let threshold = f_star - eps;
    Ok((0..total)
        .into_par_iter()
        .map_init(
            || vec![0.0; domain.dim()],
            |p, flat| {
                cell_center(domain, &counts, flat, p);
                u64::from(f(p) >= threshold)
            },
        )
        .sum())
}

/// Cells that are `eps_local`-optimal for a client objective but not
/// `eps_global`-optimal for the global one.
#[allow(clippy::too_many_arguments)]
pub fn difference_profile<F, G>(
    local: &F,
    local_star: f64,
    global: &G,
    global_star: f64,
    eps_local: f64,
    eps_global: f64,
    domain: &BoxDomain,
    grid_step: f64,
) -> Result<u64>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
    G: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if !(eps_local > 0.0 && eps_global > 0.0) {
        return Err(Error::config("eps must be positive"));
    }
    let (counts, total) = profile_grid(domain, grid_step)?;
    Ok((0..total)
        .into_par_iter()
        .map_init(
            || vec![0.0; domain.dim()],
            |p, flat| {
                cell_center(domain, &counts, flat, p);
                let near_local = local(p) >= local_star - eps_local;
                let near_global = global(p) >= global_star - eps_global;
                u64::from(near_local && !near_global)
            },
        )
        .sum())
}

impl ObjectiveSuite {
    /// Definition-style difference count for client `m` at depth `h`:
    /// `12ν₁ρ^h`-optimal cells of `f_m` that are not `6ν₁ρ^h`-optimal for `f̄`.
    pub fn difference_profile(&self, m: usize, nu1: f64, rho: f64, h: u32, grid_step: f64) -> Result<u64> {
        if m >= self.clients() {
            return Err(Error::Domain(format!("client {m} out of range")));
        }
        let scale = nu1 * rho.powi(h as i32);
        difference_profile(
            &|x: &[f64]| self.local_value(m, x),
            self.local_optima[m].value,
            &|x: &[f64]| self.global_value(x),
            self.global_optimum.value,
            12.0 * scale,
            6.0 * scale,
            self.domain(),
            grid_step,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_budget() -> OracleBudget {
        OracleBudget { grid_per_dim: 512, ..OracleBudget::default() }
    }

    #[test]
    fn base_examples() {
        let garland = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        assert_eq!(garland.eval(&[0.0]).unwrap(), 0.0);
        let himmelblau = BaseObjective::new(ObjectiveKind::Himmelblau).unwrap();
        assert_eq!(himmelblau.eval(&[3.0, 2.0]).unwrap(), 1.0);
        assert_eq!(himmelblau.eval(&[5.0, 5.0]).unwrap(), 0.0);
        let rastrigin = BaseObjective::new(ObjectiveKind::Rastrigin).unwrap();
        assert_eq!(rastrigin.eval(&[0.0; 10]).unwrap(), 1.0);
        assert!(garland.eval(&[1.5]).is_err());
    }

    #[test]
    fn himmelblau_raw_maximum_is_the_corner() {
        // Independent coarse enumeration of the raw polynomial.
        let mut best = (f64::MIN, 0.0, 0.0);
        for i in 0..=200 {
            for j in 0..=200 {
                let (x, y) = (-5.0 + i as f64 * 0.05, -5.0 + j as f64 * 0.05);
                let raw = (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2);
                if raw > best.0 {
                    best = (raw, x, y);
                }
            }
        }
        assert_eq!(best, (890.0, 5.0, 5.0));
        let h = BaseObjective::new(ObjectiveKind::Himmelblau).unwrap();
        assert_eq!(h.normalization_max(), 890.0);
    }

    #[test]
    fn normalized_peaks_equal_one() {
        for kind in [ObjectiveKind::Garland, ObjectiveKind::DoubleSine, ObjectiveKind::Ackley] {
            let base = BaseObjective::new(kind).unwrap();
            let cert = oracle_optimum(&|x: &[f64]| base.value(x), base.domain(), &OracleBudget::default()).unwrap();
            assert!((cert.value - 1.0).abs() < 1e-12, "{kind}: {}", cert.value);
        }
    }

    #[test]
    fn garland_peak_sits_on_a_cusp() {
        let x = std::f64::consts::PI / 6.0;
        let raw = 4.0 * x * (1.0 - x) * (0.75 + 0.25 * (1.0 - (60.0 * x).sin().abs().sqrt()));
        let base = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        assert!((base.normalization_max() - raw).abs() < 1e-7, "{} vs {raw}", base.normalization_max());
        assert!(base.eval(&[x]).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn parse_names() {
        assert_eq!("Garland".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::Garland);
        assert!("sphere".parse::<ObjectiveKind>().is_err());
    }

    #[test]
    fn domain_dimension_must_match_kind() {
        let bad = BoxDomain::cube(0.0, 1.0, 2).unwrap();
        assert!(BaseObjective::with_domain(ObjectiveKind::Garland, bad).is_err());
        let r3 = BoxDomain::cube(-1.0, 1.0, 3).unwrap();
        let r = BaseObjective::with_domain(ObjectiveKind::Rastrigin, r3).unwrap();
        assert_eq!(r.eval(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn zero_shift_collapses_to_base() {
        let base = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        let suite = ObjectiveSuite::new(base.clone(), 3, 0.0, 0.1, 4).unwrap();
        for m in 0..3 {
            assert_eq!(suite.shifts()[m], vec![0.0]);
            assert_eq!(suite.eval_local(m, &[0.37]).unwrap(), base.eval(&[0.37]).unwrap());
            assert!((suite.local_optimum(m).value - 1.0).abs() < 1e-12);
            assert_eq!(suite.local_optimum(m).value, suite.global_optimum().value);
        }
    }

    #[test]
    fn single_client_global_is_local() {
        let base = BaseObjective::new(ObjectiveKind::DoubleSine).unwrap();
        let suite = ObjectiveSuite::new(base, 1, 0.05, 0.1, 11).unwrap();
        for x in [0.0, 0.13, 0.5, 0.99] {
            assert_eq!(suite.eval_global(&[x]).unwrap(), suite.eval_local(0, &[x]).unwrap());
        }
        assert_eq!(suite.global_optimum().value, suite.local_optimum(0).value);
    }

    #[test]
    fn eval_local_substitutes_and_clips() {
        let base = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        let budget = small_budget();
        let s = ObjectiveSuite::from_shifts(base.clone(), vec![vec![0.1], vec![0.5]], 0.0, 0.0, &budget).unwrap();
        assert_eq!(s.eval_local(0, &[0.3]).unwrap(), base.eval(&[0.3 - 0.1]).unwrap());
        assert_eq!(s.eval_local(1, &[0.2]).unwrap(), 0.0);
        assert!(s.eval_local(2, &[0.2]).is_err());
        assert!(s.eval_local(0, &[-0.2]).is_err());
    }

    #[test]
    fn noiseless_sample_is_exact_and_noise_is_bounded() {
        let base = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        let budget = small_budget();
        let quiet = ObjectiveSuite::from_shifts(base.clone(), vec![vec![0.0]], 0.0, 0.0, &budget).unwrap();
        let noisy = ObjectiveSuite::from_shifts(base, vec![vec![0.0]], 0.0, 0.1, &budget).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = quiet.eval_local(0, &[0.4]).unwrap();
        assert_eq!(quiet.sample(0, &[0.4], &mut rng).unwrap(), f);
        for _ in 0..10_000 {
            let r = noisy.sample(0, &[0.4], &mut rng).unwrap();
            assert!(r >= f - 0.1 && r <= f + 0.1);
        }
    }

    #[test]
    fn profile_examples() {
        let unit = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        let c = near_optimality_profile(&|_: &[f64]| 0.5, &unit, 0.5, 0.01, 0.1).unwrap();
        assert_eq!(c, 10);
        let sq = BoxDomain::cube(-5.0, 5.0, 2).unwrap();
        let h = BaseObjective::new(ObjectiveKind::Himmelblau).unwrap();
        assert_eq!(near_optimality_profile(&|x: &[f64]| h.value(x), &sq, 1.0, 1.0, 0.5).unwrap(), 400);
        assert!(near_optimality_profile(&|_: &[f64]| 0.5, &unit, 0.5, 0.0, 0.1).is_err());
        assert!(near_optimality_profile(&|_: &[f64]| 0.5, &unit, 0.5, 0.1, -1.0).is_err());
    }

    #[test]
    fn garland_profile_matches_direct_enumeration() {
        let g = BaseObjective::new(ObjectiveKind::Garland).unwrap();
        let unit = g.domain().clone();
        for step_exp in [4, 10] {
            let n = 1usize << step_exp;
            let brute = (0..n)
                .filter(|&i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    let raw = 4.0 * x * (1.0 - x) * (0.75 + 0.25 * (1.0 - (60.0 * x).sin().abs().sqrt()));
                    raw / g.normalization_max() >= 0.9
                })
                .count() as u64;
            let got = near_optimality_profile(&|x: &[f64]| g.value(x), &unit, 1.0, 0.1, 2f64.powi(-step_exp)).unwrap();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn oracle_on_constant_function() {
        let sq = BoxDomain::cube(0.0, 1.0, 2).unwrap();
        let cert = oracle_optimum(&|_: &[f64]| 0.5, &sq, &small_budget()).unwrap();
        assert_eq!(cert.value, 0.5);
    }

    #[test]
    fn random_search_handles_high_dimension() {
        let cube = BoxDomain::cube(-1.0, 1.0, 4).unwrap();
        let budget = OracleBudget { random_samples: 20_000, ..OracleBudget::default() };
        let cert = oracle_optimum(&|x: &[f64]| 1.0 - x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>(), &cube, &budget).unwrap();
        assert!((cert.value - 1.0).abs() < 1e-9, "{}", cert.value);
        assert_eq!(cert.method, OracleMethod::RandomSearch);
    }

    #[test]
    fn rastrigin_suite_uses_structural_certificates() {
        let base = BaseObjective::new(ObjectiveKind::Rastrigin).unwrap();
        let suite = ObjectiveSuite::new(base, 4, 0.1, 0.1, 3).unwrap();
        for m in 0..4 {
            let c = suite.local_optimum(m);
            assert_eq!(c.method, OracleMethod::Analytic);
            assert_eq!(c.value, 1.0);
            assert_eq!(c.point, suite.shifts()[m]);
        }
        let g = suite.global_optimum();
        assert_eq!(g.method, OracleMethod::Separable);
        assert!(g.value <= 1.0);
        assert!(g.value >= suite.eval_global(&[0.0; 10]).unwrap());
    }
}
