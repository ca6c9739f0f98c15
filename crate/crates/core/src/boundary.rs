//! The Cantor-type boundary at truncation depth `N`: visual metric,
//! ultrametric structure, uniform measure and Ahlfors regularity.
//!
//! A boundary point is a depth-`N` cylinder cell, identified with the
//! depth-`N` vertex address.  Two distinct cells splitting at level `k` are at
//! visual distance `(2/eps) e^(-eps k)`.

use crate::error::{Error, Result};
use crate::metric::MetricWeights;
use crate::tree::{TreeSpec, VertexId};

/// A depth-`N` cylinder cell; the address has length exactly `N`.
pub type BoundaryAddress = VertexId;

/// Validate a boundary address against a tree.
pub fn validate_boundary(tree: &TreeSpec, a: &BoundaryAddress) -> Result<()> {
    if a.level() != tree.depth() {
        return Err(Error::InvalidVertex {
            address: a.serialize(tree.k_max().max(2)),
            reason: format!(
                "boundary address must have length N = {}, got {}",
                tree.depth(),
                a.level()
            ),
        });
    }
    tree.validate(a)
}

/// Split level of two distinct cells: the length of their common prefix.
pub fn split_level(a: &BoundaryAddress, b: &BoundaryAddress) -> Result<usize> {
    if a == b {
        return Err(Error::SameCell { depth: a.level() });
    }
    Ok(a.common_prefix_len(b))
}

/// Visual distance `(2/eps) e^(-eps k)` with `k` the split level.
pub fn visual_distance(w: &MetricWeights, a: &BoundaryAddress, b: &BoundaryAddress) -> Result<f64> {
    let k = split_level(a, b)?;
    Ok(distance_at_split(w, k))
}

/// Distance between any two cells splitting at level `k`.
pub fn distance_at_split(w: &MetricWeights, k: usize) -> f64 {
    (2.0 / w.epsilon) * (-w.epsilon * k as f64).exp()
}

/// Diameter of the boundary: `2/eps` (split at the root).
pub fn boundary_diameter(w: &MetricWeights) -> f64 {
    2.0 / w.epsilon
}

/// The unique `k` with `(2/eps) e^(-eps k) < r <= (2/eps) e^(-eps (k-1))`,
/// i.e. `k(r) = floor(1 + (1/eps) log(2/(eps r)))`.  Radii above
/// `e^eps * diam` clamp to `k = 0`, non-positive radii are parameter errors;
/// the flag reports clamping.
pub fn level_for_radius(w: &MetricWeights, r: f64) -> Result<(usize, bool)> {
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius r = {r} must be > 0")));
    }
    // Tiny slack keeps band-top radii (where the bracket is an equality)
    // in the correct band despite rounding.
    let raw = 1.0 + (2.0 / (w.epsilon * r)).ln() / w.epsilon;
    let k = (raw + 1e-12).floor();
    if k < 0.0 {
        return Ok((0, true));
    }
    Ok((k as usize, false))
}

/// Uniform boundary measure of a cell at depth `k`: `K^(-k)`.
pub fn cell_measure(tree: &TreeSpec, k: usize) -> Result<f64> {
    let kk = tree.require_regular("cell_measure needs a uniform branching factor")?;
    Ok((kk as f64).powi(-(k as i32)))
}

/// `nu(B(zeta, r)) = K^(-k(r))`.
pub fn nu_ball(tree: &TreeSpec, w: &MetricWeights, r: f64) -> Result<f64> {
    let (k, _) = level_for_radius(w, r)?;
    cell_measure(tree, k)
}

/// All depth-`N` cells sharing the level-`k(r)` prefix with `zeta`.
pub fn ball_cells(
    tree: &TreeSpec,
    w: &MetricWeights,
    zeta: &BoundaryAddress,
    r: f64,
) -> Result<Vec<BoundaryAddress>> {
    validate_boundary(tree, zeta)?;
    let (k, _) = level_for_radius(w, r)?;
    let k = k.min(tree.depth());
    tree.subtree_cells(&zeta.ancestor_at(k), tree.depth())
}

/// Hausdorff dimension `Q = (log K)/eps` of the boundary.
pub fn hausdorff_dimension(tree: &TreeSpec, w: &MetricWeights) -> Result<f64> {
    let k = tree.require_regular("hausdorff_dimension needs a regular tree")?;
    Ok((k as f64).ln() / w.epsilon)
}

#[derive(Clone, Debug)]
pub struct AhlforsRow {
    pub center: BoundaryAddress,
    pub radius: f64,
    pub k: usize,
    pub nu_ball: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct AhlforsReport {
    pub q: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub rows: Vec<AhlforsRow>,
}

/// Sweep `nu(B(zeta, r)) / r^Q` over a (center, radius) grid.
pub fn ahlfors_regularity_report(
    tree: &TreeSpec,
    w: &MetricWeights,
    centers: &[BoundaryAddress],
    radii: &[f64],
) -> Result<AhlforsReport> {
    let q = hausdorff_dimension(tree, w)?;
    let mut rows = Vec::with_capacity(centers.len() * radii.len());
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for c in centers {
        validate_boundary(tree, c)?;
        for &r in radii {
            let (k, _) = level_for_radius(w, r)?;
            let nu = cell_measure(tree, k)?;
            let ratio = nu / r.powf(q);
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
            rows.push(AhlforsRow {
                center: c.clone(),
                radius: r,
                k,
                nu_ball: nu,
                ratio,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("ahlfors sweep grid".into()));
    }
    Ok(AhlforsReport {
        q,
        min_ratio,
        max_ratio,
        rows,
    })
}
