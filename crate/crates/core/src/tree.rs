//! Rooted-tree substrate: addresses, ancestry, geodesics and the unweighted
//! graph metric `|x - y|`.
//!
//! Vertices are identified by their address: the sequence of child indices on
//! the unique path from the root.  Trees are never materialized; enumeration
//! is generated on demand from the branching rule.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

pub type Digit = u16;

/// A vertex address: child indices from the root.  The empty address is the
/// root.  Prefix order is the ancestor order: `x <= y` iff `x` is a prefix of
/// `y`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VertexId {
    digits: Vec<Digit>,
}

impl VertexId {
    pub fn root() -> Self {
        VertexId { digits: Vec::new() }
    }

    pub fn from_digits(digits: Vec<Digit>) -> Self {
        VertexId { digits }
    }

    pub fn digits(&self) -> &[Digit] {
        &self.digits
    }

    /// Level = distance from the root = address length.
    pub fn level(&self) -> usize {
        self.digits.len()
    }

    pub fn is_root(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn parent(&self) -> Result<VertexId> {
        if self.is_root() {
            return Err(Error::NoParent);
        }
        Ok(VertexId {
            digits: self.digits[..self.digits.len() - 1].to_vec(),
        })
    }

    pub fn child(&self, d: Digit) -> VertexId {
        let mut digits = Vec::with_capacity(self.digits.len() + 1);
        digits.extend_from_slice(&self.digits);
        digits.push(d);
        VertexId { digits }
    }

    /// Ancestor at the given level (a prefix of this address).
    pub fn ancestor_at(&self, level: usize) -> VertexId {
        assert!(level <= self.level());
        VertexId {
            digits: self.digits[..level].to_vec(),
        }
    }

    /// Prefix (ancestor) order: true iff `self` lies on the root geodesic of
    /// `other`.
    pub fn is_ancestor_of(&self, other: &VertexId) -> bool {
        other.digits.len() >= self.digits.len()
            && other.digits[..self.digits.len()] == self.digits[..]
    }

    /// Longest-common-prefix length of two addresses.
    pub fn common_prefix_len(&self, other: &VertexId) -> usize {
        self.digits
            .iter()
            .zip(other.digits.iter())
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Serialize: root is "ROOT"; digits are concatenated without separator
    /// when every digit is a single decimal digit (base <= 10), otherwise
    /// comma-separated.
    pub fn serialize(&self, base: usize) -> String {
        if self.is_root() {
            return "ROOT".to_string();
        }
        if base <= 10 {
            self.digits.iter().map(|d| d.to_string()).collect()
        } else {
            self.digits
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
    }

    pub fn parse(s: &str, base: usize) -> Result<VertexId> {
        if s == "ROOT" {
            return Ok(VertexId::root());
        }
        let digits: Vec<Digit> = if base <= 10 {
            s.chars()
                .map(|c| {
                    c.to_digit(10)
                        .map(|d| d as Digit)
                        .ok_or_else(|| Error::InvalidVertex {
                            address: s.to_string(),
                            reason: format!("invalid digit '{c}'"),
                        })
                })
                .collect::<Result<_>>()?
        } else {
            s.split(',')
                .map(|part| {
                    part.parse::<Digit>().map_err(|_| Error::InvalidVertex {
                        address: s.to_string(),
                        reason: format!("invalid component '{part}'"),
                    })
                })
                .collect::<Result<_>>()?
        };
        Ok(VertexId { digits })
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V[{}]", self.serialize(10))
    }
}

/// Branching rule of a tree: uniform `K`-ary, or a deterministic per-vertex
/// child-count rule (a pure function of the address) bounded by `k_max`.
#[derive(Clone)]
pub enum Branching {
    Uniform(usize),
    Rule {
        rule: Arc<dyn Fn(&VertexId) -> usize + Send + Sync>,
        k_max: usize,
    },
}

impl fmt::Debug for Branching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branching::Uniform(k) => write!(f, "Uniform({k})"),
            Branching::Rule { k_max, .. } => write!(f, "Rule(k_max={k_max})"),
        }
    }
}

/// A rooted tree truncated at depth `N`.
#[derive(Clone, Debug)]
pub struct TreeSpec {
    branching: Branching,
    depth: usize,
}

impl TreeSpec {
    /// Regular `K`-ary tree truncated at depth `n`.
    pub fn regular(k: usize, depth: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Parameter(format!("branching K = {k} must be >= 1")));
        }
        if depth < 1 {
            return Err(Error::Parameter(format!("depth N = {depth} must be >= 1")));
        }
        Ok(TreeSpec {
            branching: Branching::Uniform(k),
            depth,
        })
    }

    /// Tree with a deterministic child-count rule.  Every vertex above depth
    /// `N` must get between 1 and `k_max` children from the rule.
    pub fn with_rule<F>(rule: F, k_max: usize, depth: usize) -> Result<Self>
    where
        F: Fn(&VertexId) -> usize + Send + Sync + 'static,
    {
        if k_max < 1 || depth < 1 {
            return Err(Error::Parameter(
                "k_max and depth must both be >= 1".to_string(),
            ));
        }
        Ok(TreeSpec {
            branching: Branching::Rule {
                rule: Arc::new(rule),
                k_max,
            },
            depth,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// The uniform branching factor, if the tree is regular.
    pub fn uniform_k(&self) -> Option<usize> {
        match self.branching {
            Branching::Uniform(k) => Some(k),
            Branching::Rule { .. } => None,
        }
    }

    pub fn is_regular(&self) -> bool {
        self.uniform_k().is_some()
    }

    /// Require regularity; error otherwise.
    pub fn require_regular(&self, what: &str) -> Result<usize> {
        self.uniform_k()
            .ok_or_else(|| Error::NonRegular(what.to_string()))
    }

    pub fn k_max(&self) -> usize {
        match &self.branching {
            Branching::Uniform(k) => *k,
            Branching::Rule { k_max, .. } => *k_max,
        }
    }

    pub fn child_count(&self, v: &VertexId) -> usize {
        match &self.branching {
            Branching::Uniform(k) => *k,
            Branching::Rule { rule, .. } => rule(v),
        }
    }

    /// Validate that a vertex exists in the truncated tree.
    pub fn validate(&self, v: &VertexId) -> Result<()> {
        if v.level() > self.depth {
            return Err(Error::InvalidVertex {
                address: v.serialize(self.k_max().max(2)),
                reason: format!("level {} exceeds truncation depth {}", v.level(), self.depth),
            });
        }
        let mut cur = VertexId::root();
        for &d in v.digits() {
            let c = self.child_count(&cur);
            if (d as usize) >= c {
                return Err(Error::InvalidVertex {
                    address: v.serialize(self.k_max().max(2)),
                    reason: format!("digit {d} out of range for {c} children"),
                });
            }
            cur = cur.child(d);
        }
        Ok(())
    }

    pub fn children(&self, v: &VertexId) -> Vec<VertexId> {
        let c = self.child_count(v);
        (0..c).map(|d| v.child(d as Digit)).collect()
    }

    /// All vertices at a fixed level, in address (lexicographic) order.
    pub fn vertices_at_level(&self, n: usize) -> Vec<VertexId> {
        assert!(n <= self.depth, "level beyond truncation depth");
        let mut out = vec![VertexId::root()];
        for _ in 0..n {
            let mut next = Vec::with_capacity(out.len() * self.k_max());
            for v in &out {
                let c = self.child_count(v);
                for d in 0..c {
                    next.push(v.child(d as Digit));
                }
            }
            out = next;
        }
        out
    }

    /// All vertices with level <= n, in BFS / address order.
    pub fn vertices_to_depth(&self, n: usize) -> Vec<VertexId> {
        assert!(n <= self.depth);
        let mut out = Vec::new();
        let mut level = vec![VertexId::root()];
        out.extend(level.iter().cloned());
        for _ in 0..n {
            let mut next = Vec::new();
            for v in &level {
                for d in 0..self.child_count(v) {
                    next.push(v.child(d as Digit));
                }
            }
            out.extend(next.iter().cloned());
            level = next;
        }
        out
    }

    /// All level-`m` descendants of `x` (the discrete cylinder under `x`),
    /// in address order.
    pub fn subtree_cells(&self, x: &VertexId, m: usize) -> Result<Vec<VertexId>> {
        if x.level() > m || m > self.depth {
            return Err(Error::Parameter(format!(
                "subtree_cells requires |x| <= m <= N, got |x|={}, m={}, N={}",
                x.level(),
                m,
                self.depth
            )));
        }
        let mut out = vec![x.clone()];
        for _ in x.level()..m {
            let mut next = Vec::with_capacity(out.len() * self.k_max());
            for v in &out {
                for d in 0..self.child_count(v) {
                    next.push(v.child(d as Digit));
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Number of depth-`N` cells (boundary cells).
    pub fn cell_count(&self) -> usize {
        match self.branching {
            Branching::Uniform(k) => k.pow(self.depth as u32),
            Branching::Rule { .. } => self.vertices_at_level(self.depth).len(),
        }
    }
}

/// Deepest common ancestor = longest common address prefix.
pub fn lca(x: &VertexId, y: &VertexId) -> VertexId {
    let n = x.common_prefix_len(y);
    VertexId::from_digits(x.digits()[..n].to_vec())
}

/// Unweighted graph metric `|x - y| = |x| + |y| - 2 |lca(x,y)|`.
pub fn comb_distance(x: &VertexId, y: &VertexId) -> usize {
    let n = x.common_prefix_len(y);
    x.level() + y.level() - 2 * n
}

/// The unique simple path from `a` to `b`: ascend to the lca, descend to `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeodesicPath {
    pub vertices: Vec<VertexId>,
}

impl GeodesicPath {
    pub fn len_edges(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.vertices.contains(v)
    }
}

pub fn geodesic(a: &VertexId, b: &VertexId) -> GeodesicPath {
    let meet = a.common_prefix_len(b);
    let mut vertices = Vec::with_capacity(a.level() + b.level() - 2 * meet + 1);
    for lvl in (meet..=a.level()).rev() {
        vertices.push(a.ancestor_at(lvl));
    }
    for lvl in meet + 1..=b.level() {
        vertices.push(b.ancestor_at(lvl));
    }
    GeodesicPath { vertices }
}
