//! Deterministic k-nary hierarchical partition of a box domain.
//!
//! Node `(h, i)` is the `i`-th cell (1-based) at depth `h`. The children of
//! `(h, i)` are `(h + 1, k·i − j)` for `j = k−1, …, 0`. Geometrically, the
//! step from depth `l` to `l + 1` splits dimension `l mod d` into `k` equal
//! slabs, so every dimension is refined in turn.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::config("domain needs at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::config(format!(
                "domain bounds have {} lower and {} upper entries",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "domain dimension {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Per-dimension projection onto the box.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).fold(0.0, f64::max)
    }
}

/// Address of a partition cell: depth `h` and 1-based index `i ≤ k^h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub depth: u32,
    pub index: u128,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { depth: 0, index: 1 };

    pub fn new(depth: u32, index: u128) -> Self {
        Self { depth, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.depth, self.index)
    }
}

/// Arity of the partition tree. Fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    arity: u32,
}

impl PartitionSpec {
    pub fn new(arity: u32) -> Result<Self> {
        if arity < 2 {
            return Err(Error::config(format!("partition arity must be >= 2, got {arity}")));
        }
        Ok(Self { arity })
    }

    pub fn binary() -> Self {
        Self { arity: 2 }
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    /// Number of cells at `depth`, or `None` when it does not fit in `u128`.
    pub fn cells_at(&self, depth: u32) -> Option<u128> {
        u128::from(self.arity).checked_pow(depth)
    }

    /// Deepest depth whose indices fit in `u128`.
    pub fn max_addressable_depth(&self) -> u32 {
        let mut depth = 0;
        while self.cells_at(depth + 1).is_some() {
            depth += 1;
        }
        depth
    }

    pub fn is_valid(&self, node: NodeId) -> bool {
        match self.cells_at(node.depth) {
            Some(n) => node.index >= 1 && node.index <= n,
            None => false,
        }
    }
}

/// Children of `node`, sorted by index.
///
/// # Panics
///
/// Panics if the child indices overflow `u128`; configurations validate the
/// depth cap against [`PartitionSpec::max_addressable_depth`].
pub fn children(node: NodeId, spec: PartitionSpec) -> Vec<NodeId> {
    let k = u128::from(spec.arity);
    let last = node
        .index
        .checked_mul(k)
        .expect("child index overflows u128");
    (0..k)
        .rev()
        .map(|j| NodeId::new(node.depth + 1, last - j))
        .collect()
}

pub fn parent(node: NodeId, spec: PartitionSpec) -> Result<NodeId> {
    if node.depth == 0 {
        return Err(Error::Domain("the root has no parent".into()));
    }
    let k = u128::from(spec.arity);
    Ok(NodeId::new(node.depth - 1, node.index.div_ceil(k)))
}

/// Per-dimension integer address of a cell: for dimension `j`, the cell is
/// slab `offset[j]` out of `k^splits[j]`.
struct SlabAddress {
    splits: Vec<u32>,
    offset: Vec<u128>,
}

fn slab_address(domain_dim: usize, node: NodeId, spec: PartitionSpec) -> SlabAddress {
    let k = u128::from(spec.arity);
    // Child ordinals from the root downwards.
    let mut ordinals = Vec::with_capacity(node.depth as usize);
    let mut index = node.index;
    for _ in 0..node.depth {
        ordinals.push((index - 1) % k);
        index = (index - 1) / k + 1;
    }
    ordinals.reverse();

    let mut splits = vec![0u32; domain_dim];
    let mut offset = vec![0u128; domain_dim];
    for (level, ord) in ordinals.into_iter().enumerate() {
        let j = level % domain_dim;
        splits[j] += 1;
        offset[j] = offset[j] * k + ord;
    }
    SlabAddress { splits, offset }
}

/// The sub-box of `domain` addressed by `node`.
pub fn cell(domain: &BoxDomain, node: NodeId, spec: PartitionSpec) -> BoxDomain {
    let addr = slab_address(domain.dim(), node, spec);
    let k = f64::from(spec.arity);
    let mut lower = Vec::with_capacity(domain.dim());
    let mut upper = Vec::with_capacity(domain.dim());
    for j in 0..domain.dim() {
        let (lo, hi) = (domain.lower[j], domain.upper[j]);
        let slabs = k.powi(addr.splits[j] as i32);
        let off = addr.offset[j] as f64;
        let a = lo + (hi - lo) * (off / slabs);
        let b = if off + 1.0 >= slabs {
            hi
        } else {
            lo + (hi - lo) * ((off + 1.0) / slabs)
        };
        lower.push(a);
        upper.push(b);
    }
    BoxDomain { lower, upper }
}

/// Fixed evaluation point of a cell: its center.
pub fn representative(domain: &BoxDomain, node: NodeId, spec: PartitionSpec) -> Vec<f64> {
    cell(domain, node, spec).center()
}

/// The depth-`depth` node whose cell contains `x`. Cells are treated as
/// half-open `[a, b)` except at the domain's upper boundary.
pub fn locate(domain: &BoxDomain, x: &[f64], depth: u32, spec: PartitionSpec) -> Result<NodeId> {
    if !domain.contains(x) {
        return Err(Error::Domain(format!("point {x:?} is outside the domain")));
    }
    let mut node = NodeId::ROOT;
    for _ in 0..depth {
        let kids = children(node, spec);
        let j = node.depth as usize % domain.dim();
        let v = x[j];
        node = *kids
            .iter()
            .find(|c| v < cell(domain, **c, spec).upper[j])
            .unwrap_or_else(|| kids.last().expect("k >= 2 children"));
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(h: u32, i: u128) -> NodeId {
        NodeId::new(h, i)
    }

    #[test]
    fn children_examples() {
        let k2 = PartitionSpec::binary();
        let k3 = PartitionSpec::new(3).unwrap();
        assert_eq!(children(n(0, 1), k2), vec![n(1, 1), n(1, 2)]);
        assert_eq!(children(n(1, 2), k2), vec![n(2, 3), n(2, 4)]);
        assert_eq!(children(n(1, 2), k3), vec![n(2, 4), n(2, 5), n(2, 6)]);
    }

    #[test]
    fn parent_examples() {
        let k2 = PartitionSpec::binary();
        let k3 = PartitionSpec::new(3).unwrap();
        assert_eq!(parent(n(2, 3), k2).unwrap(), n(1, 2));
        assert_eq!(parent(n(5, 1), k2).unwrap(), n(4, 1));
        assert_eq!(parent(n(2, 6), k3).unwrap(), n(1, 2));
        assert!(parent(NodeId::ROOT, k2).is_err());
    }

    #[test]
    fn cell_examples() {
        let k2 = PartitionSpec::binary();
        let unit = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        assert_eq!(cell(&unit, n(1, 1), k2), BoxDomain::cube(0.0, 0.5, 1).unwrap());
        assert_eq!(cell(&unit, n(2, 4), k2), BoxDomain::cube(0.75, 1.0, 1).unwrap());
        let sq = BoxDomain::cube(-5.0, 5.0, 2).unwrap();
        assert_eq!(
            cell(&sq, n(1, 2), k2),
            BoxDomain::new(vec![0.0, -5.0], vec![5.0, 5.0]).unwrap()
        );
    }

    #[test]
    fn representative_examples() {
        let k2 = PartitionSpec::binary();
        let unit = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        assert_eq!(representative(&unit, NodeId::ROOT, k2), vec![0.5]);
        assert_eq!(representative(&unit, n(1, 2), k2), vec![0.75]);
        let sq = BoxDomain::cube(-5.0, 5.0, 2).unwrap();
        assert_eq!(representative(&sq, NodeId::ROOT, k2), vec![0.0, 0.0]);
    }

    #[test]
    fn second_split_uses_next_dimension() {
        let k2 = PartitionSpec::binary();
        let sq = BoxDomain::cube(-5.0, 5.0, 2).unwrap();
        // (1,2) = right half in x; its children split y.
        assert_eq!(
            cell(&sq, n(2, 3), k2),
            BoxDomain::new(vec![0.0, -5.0], vec![5.0, 0.0]).unwrap()
        );
        // Depth 3 returns to x.
        assert_eq!(
            cell(&sq, n(3, 8), k2),
            BoxDomain::new(vec![2.5, 0.0], vec![5.0, 5.0]).unwrap()
        );
    }

    #[test]
    fn domain_validation() {
        assert!(BoxDomain::new(vec![], vec![]).is_err());
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(PartitionSpec::new(1).is_err());
    }

    #[test]
    fn deep_indices_do_not_overflow() {
        let k2 = PartitionSpec::binary();
        let unit = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        let last = n(40, 1u128 << 40);
        let c = cell(&unit, last, k2);
        assert_eq!(c.upper()[0], 1.0);
        assert!((c.lower()[0] - (1.0 - 2f64.powi(-40))).abs() < 1e-15);
        assert_eq!(PartitionSpec::binary().max_addressable_depth(), 127);
    }

    #[test]
    fn locate_finds_containing_cell() {
        let k2 = PartitionSpec::binary();
        let unit = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        assert_eq!(locate(&unit, &[0.3], 2, k2).unwrap(), n(2, 2));
        assert_eq!(locate(&unit, &[1.0], 3, k2).unwrap(), n(3, 8));
        assert_eq!(locate(&unit, &[0.5], 1, k2).unwrap(), n(1, 2));
        assert!(locate(&unit, &[1.5], 1, k2).is_err());
    }
}
