//! Quasisymmetries between tree boundaries, rough quasiisometries between
//! trees, the constructive conversions in both directions, energy pullback,
//! Besov pushforward, and the rigidity checker.

use crate::error::{Error, Result};
use crate::functions::{
    besov_seminorm_sum, digits_to_index, index_to_digits, minimal_upper_gradient,
    BesovParams, BoundaryFunction, EdgeGradient, TreeFunction,
};
use crate::metric::MetricWeights;
use crate::trace::{extend as extend_boundary, trace};
use crate::tree::{comb_distance, geodesic, lca, Digit, TreeSpec, VertexId};
use rayon::prelude::*;
use std::collections::HashMap;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Distortion profile.

/// Two-branch power distortion profile: `eta(t) = A t^alpha1` for `t <= 1`
/// and `A t^alpha2` for `t >= 1`.
#[derive(Clone, Copy, Debug)]
pub struct EtaProfile {
    pub alpha1: f64,
    pub alpha2: f64,
    pub a: f64,
}

impl EtaProfile {
    pub fn new(alpha1: f64, alpha2: f64, a: f64) -> Result<Self> {
        if !(alpha1 > 0.0 && alpha2 > 0.0 && a > 0.0) {
            return Err(Error::Parameter(format!(
                "eta profile needs positive parameters, got ({alpha1}, {alpha2}, {a})"
            )));
        }
        Ok(EtaProfile { alpha1, alpha2, a })
    }

    pub fn identity() -> Self {
        EtaProfile {
            alpha1: 1.0,
            alpha2: 1.0,
            a: 1.0,
        }
    }

    /// Single-exponent form with `alpha <= 1`: exponents `alpha` and `1/alpha`.
    pub fn single(alpha: f64, a: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha = {alpha} must be in (0, 1]")));
        }
        EtaProfile::new(alpha, 1.0 / alpha, a)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 1.0 {
            self.a * t.powf(self.alpha1)
        } else {
            self.a * t.powf(self.alpha2)
        }
    }

    /// The affine vertex-distance constants of the extension this profile
    /// guarantees: `(L1, L2, L, Lambda)`.
    pub fn rqi_constants(&self, eps_x: f64, eps_y: f64) -> (f64, f64, f64, f64) {
        let l1 = self.alpha1 * eps_x / eps_y;
        let l2 = self.alpha2 * eps_x / eps_y;
        let l = (1.0 / l1).max(l2);
        let lambda = 2.0 * self.a.ln() / eps_y;
        (l1, l2, l, lambda.max(0.0))
    }
}

// ---------------------------------------------------------------------------
// Boundary maps.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapProvenance {
    Explicit,
    Snowflake,
    InducedFromRqi,
}

/// A map between truncated tree boundaries: each depth-`n_x` domain cell is
/// assigned a codomain address (of possibly varying length for induced maps).
#[derive(Clone, Debug)]
pub struct BoundaryMap {
    pub k_x: usize,
    pub n_x: usize,
    pub eps_x: f64,
    pub k_y: usize,
    pub eps_y: f64,
    images: Vec<VertexId>,
    stabilized: Vec<bool>,
    pub profile: Option<EtaProfile>,
    pub provenance: MapProvenance,
}

impl BoundaryMap {
    pub fn from_images(
        k_x: usize,
        n_x: usize,
        eps_x: f64,
        k_y: usize,
        eps_y: f64,
        images: Vec<VertexId>,
    ) -> Result<Self> {
        let cells = k_x.pow(n_x as u32);
        if images.len() != cells {
            return Err(Error::Parameter(format!(
                "expected {cells} cell images, got {}",
                images.len()
            )));
        }
        let stabilized = vec![true; cells];
        Ok(BoundaryMap {
            k_x,
            n_x,
            eps_x,
            k_y,
            eps_y,
            images,
            stabilized,
            profile: None,
            provenance: MapProvenance::Explicit,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.images.len()
    }

    pub fn cell(&self, i: usize) -> VertexId {
        let mut digits = vec![0 as Digit; self.n_x];
        index_to_digits(i, self.k_x, &mut digits);
        VertexId::from_digits(digits)
    }

    pub fn image(&self, i: usize) -> &VertexId {
        &self.images[i]
    }

    pub fn images(&self) -> &[VertexId] {
        &self.images
    }

    pub fn is_stabilized(&self, i: usize) -> bool {
        self.stabilized[i]
    }

    pub fn unstabilized_fraction(&self) -> f64 {
        let bad = self.stabilized.iter().filter(|s| !**s).count();
        bad as f64 / self.stabilized.len() as f64
    }

    /// Visual distance between two domain cells.
    pub fn domain_distance(&self, i: usize, j: usize) -> f64 {
        let si = split_of_indices(i, j, self.k_x, self.n_x);
        (2.0 / self.eps_x) * (-self.eps_x * si as f64).exp()
    }

    /// Visual distance between two image cells; `None` when the images
    /// coincide at the available resolution.
    pub fn image_distance(&self, i: usize, j: usize) -> Option<f64> {
        let a = &self.images[i];
        let b = &self.images[j];
        if a == b {
            return None;
        }
        let s = a.common_prefix_len(b);
        Some((2.0 / self.eps_y) * (-self.eps_y * s as f64).exp())
    }

    /// The identity map on a regular boundary.
    pub fn identity(k: usize, n: usize, eps: f64) -> Self {
        let cells = k.pow(n as u32);
        let mut images = Vec::with_capacity(cells);
        let mut digits = vec![0 as Digit; n];
        for i in 0..cells {
            index_to_digits(i, k, &mut digits);
            images.push(VertexId::from_digits(digits.clone()));
        }
        let mut m = BoundaryMap::from_images(k, n, eps, k, eps, images).unwrap();
        m.profile = Some(EtaProfile::identity());
        m
    }
}

/// Split level of two depth-`n` cell indices in a regular `k`-ary boundary.
fn split_of_indices(i: usize, j: usize, k: usize, n: usize) -> usize {
    let mut a = vec![0 as Digit; n];
    let mut b = vec![0 as Digit; n];
    index_to_digits(i, k, &mut a);
    index_to_digits(j, k, &mut b);
    a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count()
}

/// Address-identity map between boundaries of two trees with the same
/// branching but different metric exponents (a snowflake of the metric).
pub fn snowflake_map(k: usize, n: usize, eps_x: f64, eps_y: f64) -> Result<BoundaryMap> {
    if !(eps_x > 0.0 && eps_y > 0.0) {
        return Err(Error::Parameter("exponents must be positive".into()));
    }
    let mut m = BoundaryMap::identity(k, n, eps_x);
    m.eps_y = eps_y;
    let sigma = eps_y / eps_x;
    m.profile = Some(EtaProfile::new(sigma, sigma, 1.0)?);
    m.provenance = MapProvenance::Snowflake;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Triple sweeps: quasisymmetry verification and profile fitting.

#[derive(Clone, Debug)]
pub enum TripleSet {
    /// All ordered triples of distinct-first/third cells; only allowed for
    /// small cell counts.
    Exhaustive,
    /// Seeded uniform triples.
    Sampled { seed: u64, count: usize },
    /// Triples along the all-`0` and all-`(K-1)` spines realizing every
    /// split-level combination (captures the extremal distortions of
    /// staircase maps).
    Structured,
    Explicit(Vec<(usize, usize, usize)>),
}

const EXHAUSTIVE_CELL_LIMIT: usize = 512;

fn structured_triples(map: &BoundaryMap) -> Vec<(usize, usize, usize)> {
    let k = map.k_x;
    let n = map.n_x;
    let mut out = Vec::new();
    // Spine cell with constant digit `d`, flipped to a different digit at
    // position `s` (so the spine cell and the flip share exactly `s` digits).
    let cell_index = |digits: &[Digit]| digits_to_index(digits, k);
    for &d in &[0 as Digit, (k - 1) as Digit] {
        let spine: Vec<Digit> = vec![d; n];
        let flip = |s: usize| -> Vec<Digit> {
            let mut v = spine.clone();
            v[s] = if d == 0 { 1 } else { 0 };
            v
        };
        let zeta = cell_index(&spine);
        for s1 in 0..n {
            for s2 in 0..n {
                if s1 == s2 {
                    continue;
                }
                out.push((zeta, cell_index(&flip(s1)), cell_index(&flip(s2))));
            }
        }
    }
    out
}

fn sampled_triples(cells: usize, seed: u64, count: usize) -> Vec<(usize, usize, usize)> {
    let mut h = splitmix64(seed ^ 0x7157_1E5A);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        h = splitmix64(h);
        let a = (h % cells as u64) as usize;
        h = splitmix64(h);
        let b = (h % cells as u64) as usize;
        h = splitmix64(h);
        let c = (h % cells as u64) as usize;
        out.push((a, b, c));
    }
    out
}

#[derive(Clone, Debug)]
pub struct QsReport {
    /// Max over triples of distortion / eta(ratio); <= 1 passes.
    pub max_statistic: f64,
    pub worst_triple: Option<(VertexId, VertexId, VertexId)>,
    pub evaluated: usize,
    pub skipped: usize,
    pub pass: bool,
}

/// Checks the three-point distortion inequality
/// `d_Y(f z, f xi) / d_Y(f z, f chi) <= eta(d_X(z, xi) / d_X(z, chi))`
/// over a triple family; degenerate triples (third point in the same cell as
/// the first, or images unresolved) are skipped and counted.
pub fn qs_check(map: &BoundaryMap, eta: &EtaProfile, triples: &TripleSet) -> Result<QsReport> {
    let eval = |acc: &mut QsAcc, (a, b, c): (usize, usize, usize)| {
        if a == c {
            acc.skipped += 1;
            return;
        }
        let dxz = map.domain_distance(a, c);
        let dy_ac = match map.image_distance(a, c) {
            Some(d) => d,
            None => {
                acc.skipped += 1;
                return;
            }
        };
        let (dxy, dy_ab) = if a == b {
            (0.0, 0.0)
        } else {
            match map.image_distance(a, b) {
                Some(d) => (map.domain_distance(a, b), d),
                // Images coincide at resolution: numerator 0.
                None => (map.domain_distance(a, b), 0.0),
            }
        };
        acc.evaluated += 1;
        let stat = if dy_ab == 0.0 {
            0.0
        } else {
            (dy_ab / dy_ac) / eta.eval(dxy / dxz)
        };
        if stat > acc.max {
            acc.max = stat;
            acc.worst = Some((a, b, c));
        }
    };

    let acc = sweep_triples(map, triples, eval)?;
    Ok(QsReport {
        max_statistic: acc.max,
        worst_triple: acc
            .worst
            .map(|(a, b, c)| (map.cell(a), map.cell(b), map.cell(c))),
        evaluated: acc.evaluated,
        skipped: acc.skipped,
        pass: acc.max <= 1.0 + 1e-12,
    })
}

#[derive(Clone)]
struct QsAcc {
    max: f64,
    worst: Option<(usize, usize, usize)>,
    evaluated: usize,
    skipped: usize,
}

impl QsAcc {
    fn new() -> Self {
        QsAcc {
            max: 0.0,
            worst: None,
            evaluated: 0,
            skipped: 0,
        }
    }
    fn merge(mut self, o: QsAcc) -> QsAcc {
        if o.max > self.max {
            self.max = o.max;
            self.worst = o.worst;
        }
        self.evaluated += o.evaluated;
        self.skipped += o.skipped;
        self
    }
}

fn sweep_triples(
    map: &BoundaryMap,
    triples: &TripleSet,
    eval: impl Fn(&mut QsAcc, (usize, usize, usize)) + Sync,
) -> Result<QsAcc> {
    let n = map.cell_count();
    match triples {
        TripleSet::Exhaustive => {
            if n > EXHAUSTIVE_CELL_LIMIT {
                return Err(Error::Parameter(format!(
                    "exhaustive triples limited to {EXHAUSTIVE_CELL_LIMIT} cells, got {n}"
                )));
            }
            Ok((0..n)
                .into_par_iter()
                .map(|a| {
                    let mut acc = QsAcc::new();
                    for b in 0..n {
                        for c in 0..n {
                            eval(&mut acc, (a, b, c));
                        }
                    }
                    acc
                })
                .reduce(QsAcc::new, QsAcc::merge))
        }
        TripleSet::Sampled { seed, count } => {
            let ts = sampled_triples(n, *seed, *count);
            Ok(ts
                .par_chunks(4096)
                .map(|chunk| {
                    let mut acc = QsAcc::new();
                    for &t in chunk {
                        eval(&mut acc, t);
                    }
                    acc
                })
                .reduce(QsAcc::new, QsAcc::merge))
        }
        TripleSet::Structured => {
            let ts = structured_triples(map);
            let mut acc = QsAcc::new();
            for t in ts {
                eval(&mut acc, t);
            }
            Ok(acc)
        }
        TripleSet::Explicit(ts) => {
            let mut acc = QsAcc::new();
            for &t in ts {
                eval(&mut acc, t);
            }
            Ok(acc)
        }
    }
}

/// Fits a two-branch power profile to the observed three-point distortions:
/// ratios are bucketed by their (discrete) split-level difference, the max
/// distortion per bucket is regressed in log-log form on each branch, and
/// `A` is raised until the profile dominates every observation.
pub fn fit_eta(map: &BoundaryMap, triples: &TripleSet) -> Result<EtaProfile> {
    // Bucket key: split(a,b) - split(a,c) so that t = e^(-eps_x * key).
    let mut buckets: HashMap<i64, f64> = HashMap::new();
    let mut usable = 0usize;
    let collect = |buckets: &mut HashMap<i64, f64>, usable: &mut usize, t: (usize, usize, usize)| {
        let (a, b, c) = t;
        if a == c || a == b {
            return;
        }
        let (Some(dy_ab), Some(dy_ac)) = (map.image_distance(a, b), map.image_distance(a, c))
        else {
            return;
        };
        let s_ab = split_of_indices(a, b, map.k_x, map.n_x) as i64;
        let s_ac = split_of_indices(a, c, map.k_x, map.n_x) as i64;
        let d = dy_ab / dy_ac;
        *usable += 1;
        buckets
            .entry(s_ab - s_ac)
            .and_modify(|m| *m = m.max(d))
            .or_insert(d);
    };
    // Reuse the sweep machinery sequentially: bucket maps merge poorly in a
    // parallel reduce for the sizes used here.
    let list: Vec<(usize, usize, usize)> = match triples {
        TripleSet::Exhaustive => {
            let n = map.cell_count();
            if n > EXHAUSTIVE_CELL_LIMIT {
                return Err(Error::Parameter(format!(
                    "exhaustive triples limited to {EXHAUSTIVE_CELL_LIMIT} cells, got {n}"
                )));
            }
            let mut v = Vec::with_capacity(n * n * n);
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        v.push((a, b, c));
                    }
                }
            }
            v
        }
        TripleSet::Sampled { seed, count } => sampled_triples(map.cell_count(), *seed, *count),
        TripleSet::Structured => structured_triples(map),
        TripleSet::Explicit(ts) => ts.clone(),
    };
    for t in list {
        collect(&mut buckets, &mut usable, t);
    }
    if usable < 100 {
        return Err(Error::TooFewSamples {
            need: 100,
            got: usable,
        });
    }
    // Branch fits: key >= 0 <=> t <= 1.
    let fit_branch = |keys: Vec<(f64, f64)>| -> Option<(f64, f64)> {
        if keys.len() < 2 {
            return None;
        }
        let n = keys.len() as f64;
        let mx = keys.iter().map(|(x, _)| x).sum::<f64>() / n;
        let my = keys.iter().map(|(_, y)| y).sum::<f64>() / n;
        let sxx: f64 = keys.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let sxy: f64 = keys.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        Some((slope, my - slope * mx))
    };
    let branch = |neg: bool| -> Vec<(f64, f64)> {
        buckets
            .iter()
            .filter(|(k, _)| if neg { **k <= 0 } else { **k >= 0 })
            .map(|(k, d)| ((-map.eps_x * *k as f64), d.ln()))
            .collect()
    };
    let (a1, i1) = fit_branch(branch(false)).ok_or_else(|| Error::TooFewSamples {
        need: 2,
        got: 0,
    })?;
    let (a2, i2) = fit_branch(branch(true)).ok_or_else(|| Error::TooFewSamples {
        need: 2,
        got: 0,
    })?;
    let mut a = i1.max(i2).exp();
    let alpha1 = a1.max(1e-9);
    let alpha2 = a2.max(1e-9);
    // Raise A so the profile dominates every observed bucket maximum.
    for (k, d) in &buckets {
        let t = (-map.eps_x * *k as f64).exp();
        let base = if t <= 1.0 {
            t.powf(alpha1)
        } else {
            t.powf(alpha2)
        };
        a = a.max(d / base);
    }
    EtaProfile::new(alpha1, alpha2, a)
}

// ---------------------------------------------------------------------------
// Vertex maps between trees.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexProvenance {
    Explicit,
    ExtendedFromQs,
}

#[derive(Clone, Copy, Debug)]
pub struct RqiConstants {
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
}

impl RqiConstants {
    pub fn l(&self) -> f64 {
        (1.0 / self.l1).max(self.l2)
    }
}

/// A total map from domain vertices (to a fixed depth) to codomain vertices.
#[derive(Clone)]
pub struct VertexMap {
    pub domain: TreeSpec,
    pub codomain: TreeSpec,
    pub depth: usize,
    table: HashMap<VertexId, VertexId>,
    pub provenance: VertexProvenance,
    pub theoretical: Option<RqiConstants>,
}

impl VertexMap {
    pub fn from_fn(
        domain: TreeSpec,
        codomain: TreeSpec,
        depth: usize,
        f: impl Fn(&VertexId) -> VertexId,
    ) -> Self {
        let mut table = HashMap::new();
        for v in domain.vertices_to_depth(depth) {
            table.insert(v.clone(), f(&v));
        }
        VertexMap {
            domain,
            codomain,
            depth,
            table,
            provenance: VertexProvenance::Explicit,
            theoretical: None,
        }
    }

    pub fn value(&self, v: &VertexId) -> &VertexId {
        &self.table[v]
    }

    pub fn vertices(&self) -> Vec<VertexId> {
        self.domain.vertices_to_depth(self.depth)
    }

    pub fn max_image_level(&self) -> usize {
        self.table.values().map(|v| v.level()).max().unwrap_or(0)
    }
}

/// Extends a boundary map to a vertex map: `F(x)` is the largest common
/// ancestor of the images of all domain cells below `x`. Root maps to root
/// and the extension is order-preserving by construction.
pub fn extend_qs_to_tree(map: &BoundaryMap) -> VertexMap {
    let k = map.k_x;
    let n = map.n_x;
    // Bottom-up iterated lca over contiguous cell-index ranges.
    let mut level: Vec<VertexId> = map.images.to_vec();
    let mut table = HashMap::new();
    for lvl in (0..=n).rev() {
        let width = k.pow((n - lvl) as u32);
        debug_assert_eq!(level.len() * width, map.cell_count());
        let mut digits = vec![0 as Digit; lvl];
        for (i, img) in level.iter().enumerate() {
            index_to_digits(i, k, &mut digits);
            table.insert(VertexId::from_digits(digits.clone()), img.clone());
        }
        if lvl > 0 {
            level = level.chunks(k).map(|c| iterated_lca(c)).collect();
        }
    }
    let theoretical = map
        .profile
        .as_ref()
        .map(|p| {
            let (l1, l2, _, lambda) = p.rqi_constants(map.eps_x, map.eps_y);
            RqiConstants { l1, l2, lambda }
        });
    let max_level = table.values().map(|v| v.level()).max().unwrap_or(0);
    VertexMap {
        domain: TreeSpec::regular(k, n).expect("regular domain"),
        codomain: TreeSpec::regular(map.k_y, max_level.max(1)).expect("regular codomain"),
        depth: n,
        table,
        provenance: VertexProvenance::ExtendedFromQs,
        theoretical,
    }
}

fn iterated_lca(vs: &[VertexId]) -> VertexId {
    let mut acc = vs[0].clone();
    for v in &vs[1..] {
        acc = lca(&acc, v);
    }
    acc
}

// ---------------------------------------------------------------------------
// Rough quasiisometry verification.

#[derive(Clone, Debug)]
pub struct RqiReport {
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
    pub density_radius: usize,
    pub pairs_checked: usize,
    pub sampled: bool,
    pub theoretical: Option<RqiConstants>,
    /// Violations of the theoretical envelope (must be 0 for QS extensions).
    pub theoretical_violations: usize,
}

const EXHAUSTIVE_PAIR_VERTEX_LIMIT: usize = 3300;
const SAMPLED_PAIR_COUNT: usize = 1_000_000;

fn pair_list(vs: &[VertexId], seed: u64) -> (Vec<(usize, usize)>, bool) {
    let n = vs.len();
    if n <= EXHAUSTIVE_PAIR_VERTEX_LIMIT {
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push((i, j));
            }
        }
        (out, false)
    } else {
        let mut h = splitmix64(seed ^ 0x9A1C_5EED);
        let mut out = Vec::with_capacity(SAMPLED_PAIR_COUNT);
        for _ in 0..SAMPLED_PAIR_COUNT {
            h = splitmix64(h);
            let i = (h % n as u64) as usize;
            h = splitmix64(h);
            let j = (h % n as u64) as usize;
            if i != j {
                out.push((i, j));
            }
        }
        (out, true)
    }
}

/// Measures the affine distance envelope of a vertex map and its image
/// density, and verifies the theoretical envelope when one is attached.
pub fn rqi_check(f: &VertexMap, seed: u64) -> RqiReport {
    let vs = f.vertices();
    let (pairs, sampled) = pair_list(&vs, seed);
    let dists: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dx = comb_distance(&vs[i], &vs[j]) as f64;
            let dy = comb_distance(f.value(&vs[i]), f.value(&vs[j])) as f64;
            (dx, dy)
        })
        .collect();
    let dx_max = dists.iter().map(|(x, _)| *x).fold(0.0, f64::max);
    let (l1, l2) = if let Some(t) = &f.theoretical {
        (t.l1, t.l2)
    } else {
        // Slopes from well-separated pairs; offsets absorb the rest.
        let far: Vec<&(f64, f64)> = dists.iter().filter(|(x, _)| *x >= dx_max / 2.0).collect();
        let l2 = far.iter().map(|(x, y)| y / x).fold(0.0, f64::max);
        let l1 = far.iter().map(|(x, y)| y / x).fold(f64::INFINITY, f64::min);
        (l1, l2)
    };
    let lambda = dists
        .par_iter()
        .map(|&(dx, dy)| (l1 * dx - dy).max(dy - l2 * dx).max(0.0))
        .reduce(|| 0.0, f64::max);
    let theoretical_violations = if let Some(t) = &f.theoretical {
        dists
            .par_iter()
            .filter(|&&(dx, dy)| {
                dy < t.l1 * dx - t.lambda - 1e-9 || dy > t.l2 * dx + t.lambda + 1e-9
            })
            .count()
    } else {
        0
    };
    // Density: deepest codomain scan level N * min-slope.
    let scan_depth = ((f.depth as f64 * l1.min(1.0)).floor() as usize)
        .min(f.codomain.depth())
        .min(f.max_image_level());
    let image: Vec<&VertexId> = f.table.values().collect();
    let density_radius = f
        .codomain
        .vertices_to_depth(scan_depth)
        .par_iter()
        .map(|v| {
            image
                .iter()
                .map(|w| comb_distance(v, w))
                .min()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    RqiReport {
        l1,
        l2,
        lambda,
        density_radius,
        pairs_checked: dists.len(),
        sampled,
        theoretical: f.theoretical,
        theoretical_violations,
    }
}

/// Counts violations of a fixed affine envelope
/// `l1 |x-y| - lambda_lo <= |F(x)-F(y)| <= l2 |x-y| + lambda_hi`
/// over all vertex pairs; returns the count and a witness.
pub fn envelope_violations(
    f: &VertexMap,
    l1: f64,
    lambda_lo: f64,
    l2: f64,
    lambda_hi: f64,
) -> (usize, Option<(VertexId, VertexId)>) {
    let vs = f.vertices();
    let n = vs.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut count = 0usize;
            let mut witness = None;
            for j in (i + 1)..n {
                let dx = comb_distance(&vs[i], &vs[j]) as f64;
                let dy = comb_distance(f.value(&vs[i]), f.value(&vs[j])) as f64;
                if dy < l1 * dx - lambda_lo - 1e-9 || dy > l2 * dx + lambda_hi + 1e-9 {
                    count += 1;
                    witness.get_or_insert((vs[i].clone(), vs[j].clone()));
                }
            }
            (count, witness)
        })
        .reduce(
            || (0, None),
            |(c1, w1), (c2, w2)| (c1 + c2, w1.or(w2)),
        )
}

// ---------------------------------------------------------------------------
// Induced boundary map of a rough quasiisometry.

/// Derived proof-scale constants of the boundary-map construction.
#[derive(Clone, Copy, Debug)]
pub struct MapConstants {
    pub tau: f64,
    pub tau_prime: f64,
    pub c: f64,
    pub s0: f64,
    pub t0: f64,
    pub t1: f64,
}

impl MapConstants {
    pub fn new(l: f64, lambda: f64, eps_x: f64) -> Self {
        let tau_prime = l + lambda + 1.0;
        let tau = (l + lambda) * (2.0 * l * l + 3.0 * lambda * l + 1.0) + 1.0;
        let c = l * l * (2.0 * tau_prime + lambda) + lambda + tau_prime;
        let s0 = l * (3.0 * c + 2.0 * lambda + l);
        let t0 = (-eps_x * s0).exp();
        MapConstants {
            tau,
            tau_prime,
            c,
            s0,
            t0,
            t1: 1.0 / t0,
        }
    }
}

/// Builds the induced boundary map of a rough quasiisometry: the image of a
/// depth-`N` cell is the common ancestor of the images of the tail of its
/// root geodesic. The stabilization window is the proof-scale value capped
/// at half the available depth; cells whose window had to be truncated are
/// flagged, and an excessive flagged fraction is an error.
pub fn boundary_map_from_rqi(
    f: &VertexMap,
    eps_x: f64,
    eps_y: f64,
    rqi: &RqiConstants,
    max_unstabilized: f64,
) -> Result<BoundaryMap> {
    let k = f.domain.require_regular("induced boundary map")?;
    let n = f.depth;
    let l = rqi.l();
    let w_full = (l * (l + 2.0 * rqi.lambda + 1.0)).ceil() as usize;
    let w = w_full.max(1).min((n / 2).max(1));
    let truncated_window = w < w_full;
    let cells = k.pow(n as u32);
    let results: Vec<(VertexId, bool)> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let mut digits = vec![0 as Digit; n];
            index_to_digits(i, k, &mut digits);
            let leaf = VertexId::from_digits(digits);
            let mut acc = f.value(&leaf).clone();
            for lvl in (n - w)..n {
                acc = lca(&acc, f.value(&leaf.ancestor_at(lvl)));
            }
            (acc, !truncated_window)
        })
        .collect();
    let mut images = Vec::with_capacity(cells);
    let mut stabilized = Vec::with_capacity(cells);
    for (img, st) in results {
        stabilized.push(st && !img.is_root());
        images.push(img);
    }
    let bad = stabilized.iter().filter(|s| !**s).count() as f64 / cells as f64;
    if bad > max_unstabilized {
        return Err(Error::ResolutionInsufficient(format!(
            "{:.1}% of cells have unstabilized image tails (window {w} of {w_full})",
            100.0 * bad
        )));
    }
    let k_y = f.codomain.require_regular("induced boundary map")?;
    let mut out = BoundaryMap::from_images(k, n, eps_x, k_y, eps_y, images)?;
    out.stabilized = stabilized;
    out.provenance = MapProvenance::InducedFromRqi;
    Ok(out)
}

/// The distortion profile guaranteed for the induced boundary map of a rough
/// quasiisometry, with an explicit constant `A` assembled from the
/// proof-scale case analysis and the fitted two-sided power envelope.
#[allow(clippy::too_many_arguments)]
pub fn eta_from_rqi(
    rqi: &RqiConstants,
    eps_x: f64,
    eps_y: f64,
    bi: &BiHolderReport,
    diam_x: f64,
    diam_y: f64,
) -> Result<EtaProfile> {
    let l = rqi.l();
    let mc = MapConstants::new(l, rqi.lambda, eps_x);
    let alpha1 = rqi.l1 * eps_y / eps_x;
    let alpha2 = rqi.l2 * eps_y / eps_x;
    // Interior scales: the bounded-ancestor-deviation constant covers cases
    // where both distances are small; the middle case additionally pays for
    // ratios pinned near 1.
    let a_mid = (eps_y * (rqi.l2 * mc.s0 + rqi.l1 * mc.s0 + rqi.lambda + 2.0 * mc.c)).exp();
    // Boundary scales via the fitted power envelope c1 d^b <= d_f <= c2 d^a.
    let r0 = (bi.c1 / bi.c2 * (diam_x / 3.0).powf(bi.b)).powf(1.0 / bi.a);
    let r0 = r0.min(diam_x);
    let a_case1 = bi.c2 * diam_x.powf(alpha1) / (bi.c1 * r0.powf(alpha2));
    let a_case2 = diam_y / (bi.c1 * r0.powf(alpha2));
    let a_case3 =
        diam_y / (bi.c1 * r0.powf(alpha2)) * (diam_x / r0).powf(alpha1.max(alpha2));
    let a = a_mid.max(a_case1).max(a_case2).max(a_case3);
    EtaProfile::new(alpha1, alpha2, a)
}

// ---------------------------------------------------------------------------
// Two-sided power envelope of a boundary map.

#[derive(Clone, Debug)]
pub struct BiHolderReport {
    /// Upper envelope exponent: `d_f <= c2 * d^a`.
    pub a: f64,
    /// Lower envelope exponent: `d_f >= c1 * d^b`.
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    /// `(L1 eps_Y / eps_X, L2 eps_Y / eps_X)` when constants are attached.
    pub theoretical: Option<(f64, f64)>,
}

/// Fits the tightest two-sided power envelope `c1 d^b <= d_f <= c2 d^a` over
/// cell pairs, aggregated by split level.
pub fn bi_holder_check(map: &BoundaryMap, rqi: Option<&RqiConstants>) -> Result<BiHolderReport> {
    let n = map.cell_count();
    // Per-domain-split extremes of the image distance.
    let mut lo: HashMap<usize, f64> = HashMap::new();
    let mut hi: HashMap<usize, f64> = HashMap::new();
    // Pairs along all spines plus seeded extras cover every split level with
    // extremal values for staircase maps; for small maps sweep everything.
    let pairs: Vec<(usize, usize)> = if n <= 4096 {
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                v.push((i, j));
            }
        }
        v
    } else {
        let mut v = Vec::new();
        for t in structured_triples(map) {
            v.push((t.0, t.1));
            v.push((t.0, t.2));
        }
        let mut h = splitmix64(0xB1B0);
        for _ in 0..200_000 {
            h = splitmix64(h);
            let i = (h % n as u64) as usize;
            h = splitmix64(h);
            let j = (h % n as u64) as usize;
            if i != j {
                v.push((i, j));
            }
        }
        v
    };
    let mut usable = 0usize;
    for (i, j) in pairs {
        let Some(dy) = map.image_distance(i, j) else {
            continue;
        };
        let s = split_of_indices(i, j, map.k_x, map.n_x);
        usable += 1;
        lo.entry(s).and_modify(|m| *m = m.min(dy)).or_insert(dy);
        hi.entry(s).and_modify(|m| *m = m.max(dy)).or_insert(dy);
    }
    if usable < 2 {
        return Err(Error::TooFewSamples { need: 2, got: usable });
    }
    let fit = |m: &HashMap<usize, f64>| -> (f64, f64) {
        let pts: Vec<(f64, f64)> = m
            .iter()
            .map(|(s, d)| {
                let dx = (2.0 / map.eps_x) * (-map.eps_x * *s as f64).exp();
                (dx.ln(), d.ln())
            })
            .collect();
        if pts.len() == 1 {
            return (1.0, (pts[0].1 - pts[0].0).exp());
        }
        let nn = pts.len() as f64;
        let mx = pts.iter().map(|(x, _)| x).sum::<f64>() / nn;
        let my = pts.iter().map(|(_, y)| y).sum::<f64>() / nn;
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        (slope, (my - slope * mx).exp())
    };
    let (a, mut c2) = fit(&hi);
    let (b, mut c1) = fit(&lo);
    // Push the constants out until the envelope is valid on every bucket.
    for (s, d) in &hi {
        let dx = (2.0 / map.eps_x) * (-map.eps_x * *s as f64).exp();
        c2 = c2.max(d / dx.powf(a));
    }
    for (s, d) in &lo {
        let dx = (2.0 / map.eps_x) * (-map.eps_x * *s as f64).exp();
        c1 = c1.min(d / dx.powf(b));
    }
    let theoretical = rqi.map(|r| (r.l1 * map.eps_y / map.eps_x, r.l2 * map.eps_y / map.eps_x));
    Ok(BiHolderReport {
        a,
        b,
        c1,
        c2,
        theoretical,
    })
}

// ---------------------------------------------------------------------------
// Energy pullback along a vertex map.

#[derive(Clone, Debug)]
pub struct PullbackReport {
    pub gradient: EdgeGradient,
    /// `||g_X||_p / ||g_Y||_p`; NaN flagged for constant input.
    pub ratio: f64,
    pub constant_input: bool,
    /// Max of the weight-condition left side over vertices.
    pub c0: f64,
    /// Per-edge upper-gradient inequality violations (must be 0).
    pub upper_gradient_violations: usize,
}

/// Pulls an edge gradient on the codomain back along a vertex map, with the
/// explicit constant `A = (L + Lambda) e^(eps_Y (L + Lambda) + eps_X)`, after
/// verifying the weight-growth condition
/// `(p eps_X - beta_X)|x| + (beta_Y - p eps_Y)|F(x)| <= C0`.
pub fn pullback_energy(
    u_y: &TreeFunction,
    f: &VertexMap,
    w_x: &MetricWeights,
    w_y: &MetricWeights,
    rqi: &RqiConstants,
    p: f64,
) -> Result<PullbackReport> {
    let k_x = f.domain.require_regular("energy pullback")?;
    let n = f.depth;
    // Weight condition: per-level max of the left side; a run of strict
    // growth over the deepest third signals an unbounded left side.
    let mut level_max = vec![f64::NEG_INFINITY; n + 1];
    let mut worst: Option<(VertexId, f64)> = None;
    for v in f.vertices() {
        let val = (p * w_x.epsilon - w_x.beta) * v.level() as f64
            + (w_y.beta - p * w_y.epsilon) * f.value(&v).level() as f64;
        if val > level_max[v.level()] {
            level_max[v.level()] = val;
        }
        if worst.as_ref().map(|(_, m)| val > *m).unwrap_or(true) {
            worst = Some((v.clone(), val));
        }
    }
    let c0 = worst.as_ref().map(|(_, m)| *m).unwrap_or(0.0);
    let tail = n / 3;
    if n >= 6 {
        let growing = (n - tail..n).all(|i| level_max[i + 1] > level_max[i] + 1e-9);
        if growing && level_max[n] > level_max[0] + 1.0 {
            let (v, val) = worst.unwrap();
            return Err(Error::ConditionFailure {
                vertex: v.serialize(10),
                value: val,
            });
        }
    }
    let l = rqi.l();
    let a = (l + rqi.lambda) * (w_y.epsilon * (l + rqi.lambda) + w_x.epsilon).exp();
    let g_y = minimal_upper_gradient(u_y, w_y);
    let g_x = EdgeGradient::from_fn(k_x, n, |v| {
        let parent = v.parent().unwrap();
        let fy = f.value(v);
        let fp = f.value(&parent);
        if fy == fp {
            return 0.0;
        }
        let path = geodesic(fp, fy);
        let min_level = path.vertices.iter().map(|y| y.level()).min().unwrap();
        let g_bar = path
            .vertices
            .windows(2)
            .map(|e| {
                let child = if e[0].level() > e[1].level() { &e[0] } else { &e[1] };
                g_y.value(child)
            })
            .fold(0.0, f64::max);
        a * (w_x.epsilon * parent.level() as f64 - w_y.epsilon * min_level as f64).exp() * g_bar
    });
    // Direct endpoint check of the upper-gradient inequality on each edge.
    let v_fn = TreeFunction::from_fn(k_x, n, |v| u_y.value(f.value(v)));
    let mut violations = 0usize;
    for v in f.vertices() {
        if v.is_root() {
            continue;
        }
        let m = (v.level() - 1) as f64;
        let d_edge = w_x.band_integral_metric(m, m + 1.0);
        let dv = (v_fn.value(&v) - v_fn.value(&v.parent().unwrap())).abs();
        if g_x.value(&v) * d_edge < dv - 1e-9 * (1.0 + dv) {
            violations += 1;
        }
    }
    let num = crate::functions::newtonian_energy(&g_x, w_x, p)?.powf(1.0 / p);
    let den = crate::functions::newtonian_energy(&g_y, w_y, p)?.powf(1.0 / p);
    let constant = num == 0.0 && den == 0.0;
    Ok(PullbackReport {
        gradient: g_x,
        ratio: if constant { f64::NAN } else { num / den },
        constant_input: constant,
        c0,
        upper_gradient_violations: violations,
    })
}

// ---------------------------------------------------------------------------
// Besov pushforward along a boundary map.

#[derive(Clone, Debug)]
pub struct PushforwardReport {
    pub result: BoundaryFunction,
    /// `||result||_{B^theta_X} / ||u||_{B^theta_Y}`; NaN flagged 0/0.
    pub ratio: f64,
    pub constant_input: bool,
    /// Cells where the pipeline output disagrees with the direct composition
    /// `u o f` (resolvable cells only).
    pub composition_mismatches: usize,
    pub unresolved_cells: usize,
}

/// Admissibility of the smoothness pair for the pushforward: the target
/// exponent must satisfy the two-case bound against the profile.
pub fn pushforward_theta_bound(
    profile: &EtaProfile,
    q_x: f64,
    q_y: f64,
    p: f64,
    theta_y: f64,
) -> f64 {
    if theta_y >= q_y / p {
        q_x / p + profile.alpha1 * (theta_y - q_y / p)
    } else {
        q_x / p + profile.alpha2 * (theta_y - q_y / p)
    }
}

/// Pushes a Besov function on the codomain boundary back along the map via
/// the extend / compose-with-vertex-map / trace pipeline, with the measure
/// weights that make the respective exponents sharp.
pub fn besov_pushforward(
    u: &BoundaryFunction,
    map: &BoundaryMap,
    p: f64,
    theta_x: f64,
    theta_y: f64,
) -> Result<PushforwardReport> {
    let profile = map
        .profile
        .ok_or_else(|| Error::Parameter("boundary map carries no distortion profile".into()))?;
    let q_x = (map.k_x as f64).ln() / map.eps_x;
    let q_y = (map.k_y as f64).ln() / map.eps_y;
    let bound = pushforward_theta_bound(&profile, q_x, q_y, p, theta_y);
    if theta_x > bound + 1e-12 {
        return Err(Error::Regime {
            what: "theta_X".into(),
            value: theta_x,
            lo: 0.0,
            hi: bound,
            closed: "]",
        });
    }
    let beta_x = (map.k_x as f64).ln() + p * map.eps_x * (1.0 - theta_x);
    let beta_y = (map.k_y as f64).ln() + p * map.eps_y * (1.0 - theta_y);
    let w_x = MetricWeights::new(map.eps_x, beta_x)?;
    let w_y = MetricWeights::new(map.eps_y, beta_y)?;
    let f_tree = extend_qs_to_tree(map);
    let depth_y = f_tree.max_image_level().max(u.resolution());
    let (u_tree, _) = extend_boundary(u, &w_y, depth_y)?;
    let v = TreeFunction::from_fn(map.k_x, map.n_x, |x| u_tree.value(f_tree.value(x)));
    let result = trace(&v);
    // Direct composition check on resolvable cells.
    let mut mismatches = 0usize;
    let mut unresolved = 0usize;
    for i in 0..map.cell_count() {
        let img = map.image(i);
        if img.level() < u.resolution() {
            unresolved += 1;
            continue;
        }
        let direct = u.value_at(img)?;
        if (result.values()[i] - direct).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let num = besov_seminorm_sum(&result, &w_x, &BesovParams::new(p, theta_x)?)?.seminorm;
    let den = besov_seminorm_sum(u, &w_y, &BesovParams::new(p, theta_y)?)?.seminorm;
    let constant = num == 0.0 && den == 0.0;
    Ok(PushforwardReport {
        result,
        ratio: if constant { f64::NAN } else { num / den },
        constant_input: constant,
        composition_mismatches: mismatches,
        unresolved_cells: unresolved,
    })
}

// ---------------------------------------------------------------------------
// The binary-to-ternary example pair.

/// Emits the ternary digits of the collapsing binary-to-ternary map: a `0`
/// emits one digit immediately; a `1` defers, and the next input selects
/// between the two remaining digits.
pub fn collapse_output(digits: &[Digit]) -> Vec<Digit> {
    let mut out = Vec::with_capacity(digits.len());
    let mut pending = false;
    for &d in digits {
        if !pending {
            if d == 0 {
                out.push(0);
            } else {
                pending = true;
            }
        } else {
            out.push(if d == 0 { 1 } else { 2 });
            pending = false;
        }
    }
    out
}

/// Inverse digit coding: the smallest binary preimage of a ternary address.
pub fn collapse_smallest_preimage(digits: &[Digit]) -> Vec<Digit> {
    let mut out = Vec::with_capacity(2 * digits.len());
    for &d in digits {
        match d {
            0 => out.push(0),
            1 => {
                out.push(1);
                out.push(0);
            }
            _ => {
                out.push(1);
                out.push(1);
            }
        }
    }
    out
}

/// The surjective, non-injective vertex map from the binary tree (depth
/// `depth_x`) onto the ternary tree, together with its one-sided inverse `H`
/// (defined on the ternary tree to depth `depth_x / 2`).
pub fn example_binary_ternary(depth_x: usize) -> (VertexMap, VertexMap) {
    let x = TreeSpec::regular(2, depth_x).unwrap();
    let y = TreeSpec::regular(3, depth_x).unwrap();
    let mut g = VertexMap::from_fn(x.clone(), y.clone(), depth_x, |v| {
        VertexId::from_digits(collapse_output(v.digits()))
    });
    g.theoretical = Some(RqiConstants {
        l1: 0.5,
        l2: 1.0,
        lambda: 2.0,
    });
    let depth_y = depth_x / 2;
    let y_dom = TreeSpec::regular(3, depth_y).unwrap();
    let h = VertexMap::from_fn(y_dom, x, depth_y, |v| {
        VertexId::from_digits(collapse_smallest_preimage(v.digits()))
    });
    (g, h)
}

/// The boundary identification induced by the collapsing map, built directly
/// from the digit coding at the requested domain depth.
pub fn example_boundary_map(
    depth_x: usize,
    eps_x: f64,
    eps_y: f64,
) -> Result<BoundaryMap> {
    let cells = 1usize << depth_x;
    let mut images = Vec::with_capacity(cells);
    let mut digits = vec![0 as Digit; depth_x];
    for i in 0..cells {
        index_to_digits(i, 2, &mut digits);
        images.push(VertexId::from_digits(collapse_output(&digits)));
    }
    let mut m = BoundaryMap::from_images(2, depth_x, eps_x, 3, eps_y, images)?;
    m.profile = Some(EtaProfile::new(
        eps_y / (2.0 * eps_x),
        eps_y / eps_x,
        // The constant is not pinned by theory here; the offset Lambda = 2
        // gives e^(2 eps_Y) per split level on each side.
        (4.0 * eps_y).exp(),
    )?);
    Ok(m)
}

// ---------------------------------------------------------------------------
// Rigidity.

#[derive(Clone, Debug)]
pub enum RigidityVerdict {
    Isometry,
    NotInjective {
        witness: (VertexId, VertexId),
    },
    GeodesicViolation {
        /// Endpoints whose geodesic image fails to lie on a common path, and
        /// the off-path image vertex.
        endpoints: (VertexId, VertexId),
        witness: VertexId,
    },
    NotDense {
        /// Codomain vertex with no image strictly below it.
        witness: VertexId,
    },
    RootCondition,
    DistanceMismatch {
        witness: (VertexId, VertexId),
    },
}

#[derive(Clone, Debug)]
pub struct RigidityReport {
    pub verdict: RigidityVerdict,
    pub pairs_verified: usize,
}

/// Whether a vertex set lies on a single geodesic path: take a pair at
/// maximum distance and require every point to be metrically between them.
pub fn on_common_geodesic(points: &[VertexId]) -> Option<VertexId> {
    if points.len() <= 2 {
        return None;
    }
    let (mut ia, mut ib, mut dmax) = (0, 0, 0usize);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = comb_distance(&points[i], &points[j]);
            if d > dmax {
                dmax = d;
                ia = i;
                ib = j;
            }
        }
    }
    for (i, z) in points.iter().enumerate() {
        if i == ia || i == ib {
            continue;
        }
        if comb_distance(&points[ia], z) + comb_distance(z, &points[ib]) != dmax {
            return Some(z.clone());
        }
    }
    None
}

/// Checks the four isometry-rigidity hypotheses (injectivity, geodesics into
/// geodesics, image density, root condition) and, when they all hold,
/// verifies distance preservation exhaustively.
pub fn rigidity_check(g: &VertexMap, geodesic_depth: usize, density_margin: usize) -> Result<RigidityReport> {
    // Precondition: at least two children everywhere in the examined range.
    for v in g.domain.vertices_to_depth(g.depth.saturating_sub(1)) {
        if g.domain.child_count(&v) < 2 {
            return Err(Error::Parameter(format!(
                "domain vertex {} has fewer than two children",
                v.serialize(10)
            )));
        }
    }
    let vs = g.vertices();
    // Injectivity.
    let mut seen: HashMap<&VertexId, &VertexId> = HashMap::new();
    for v in &vs {
        if let Some(prev) = seen.insert(g.value(v), v) {
            return Ok(RigidityReport {
                verdict: RigidityVerdict::NotInjective {
                    witness: (prev.clone(), v.clone()),
                },
                pairs_verified: 0,
            });
        }
    }
    // Geodesics into geodesics over deepest-level endpoint pairs.
    let d = geodesic_depth.min(g.depth);
    let leaves = g.domain.vertices_at_level(d);
    for i in 0..leaves.len() {
        for j in (i + 1)..leaves.len() {
            let path = geodesic(&leaves[i], &leaves[j]);
            let images: Vec<VertexId> =
                path.vertices.iter().map(|v| g.value(v).clone()).collect();
            if let Some(witness) = on_common_geodesic(&images) {
                return Ok(RigidityReport {
                    verdict: RigidityVerdict::GeodesicViolation {
                        endpoints: (leaves[i].clone(), leaves[j].clone()),
                        witness,
                    },
                    pairs_verified: 0,
                });
            }
        }
    }
    // Density: every codomain vertex in range has an image strictly below.
    let max_img = g.max_image_level();
    let scan = max_img.saturating_sub(density_margin);
    let image: Vec<&VertexId> = vs.iter().map(|v| g.value(v)).collect();
    for y in g.codomain.vertices_to_depth(scan.min(g.codomain.depth())) {
        let ok = image
            .iter()
            .any(|w| y.is_ancestor_of(w) && w.level() > y.level());
        if !ok {
            return Ok(RigidityReport {
                verdict: RigidityVerdict::NotDense { witness: y },
                pairs_verified: 0,
            });
        }
    }
    // Root condition.
    let root_ok = g.value(&VertexId::root()).is_root()
        || g.codomain.child_count(&VertexId::root()) >= 3;
    if !root_ok {
        return Ok(RigidityReport {
            verdict: RigidityVerdict::RootCondition,
            pairs_verified: 0,
        });
    }
    // All hypotheses hold: distances must be preserved.
    let n = vs.len();
    let mismatch = (0..n)
        .into_par_iter()
        .find_map_any(|i| {
            for j in (i + 1)..n {
                if comb_distance(&vs[i], &vs[j])
                    != comb_distance(g.value(&vs[i]), g.value(&vs[j]))
                {
                    return Some((vs[i].clone(), vs[j].clone()));
                }
            }
            None
        });
    if let Some(w) = mismatch {
        return Ok(RigidityReport {
            verdict: RigidityVerdict::DistanceMismatch { witness: w },
            pairs_verified: 0,
        });
    }
    Ok(RigidityReport {
        verdict: RigidityVerdict::Isometry,
        pairs_verified: n * (n - 1) / 2,
    })
}

// ---------------------------------------------------------------------------
// Geodesic tracking and projection.

#[derive(Clone, Debug)]
pub struct MorseReport {
    pub max_deviation: usize,
    pub tau: f64,
    pub pass: bool,
}

/// Deviation of the image of a root geodesic from the geodesic between the
/// images of its endpoints, checked against the tube radius `tau`.
pub fn morse_tracking_check(
    f: &VertexMap,
    leaf: &VertexId,
    constants: &MapConstants,
) -> MorseReport {
    let target = geodesic(f.value(&VertexId::root()), f.value(leaf));
    let mut max_dev = 0usize;
    for lvl in 0..=leaf.level() {
        let img = f.value(&leaf.ancestor_at(lvl));
        let dev = target
            .vertices
            .iter()
            .map(|y| comb_distance(img, y))
            .min()
            .unwrap();
        max_dev = max_dev.max(dev);
    }
    MorseReport {
        max_deviation: max_dev,
        tau: constants.tau,
        pass: (max_dev as f64) <= constants.tau,
    }
}

/// Nearest-point projection onto a nonempty vertex set; for path-connected
/// targets the minimizer is unique.
pub fn nearest_point_projection(target: &[VertexId], x: &VertexId) -> Result<VertexId> {
    if target.is_empty() {
        return Err(Error::Empty("projection target".into()));
    }
    let best = target
        .iter()
        .min_by_key(|v| (comb_distance(x, v), (*v).clone()))
        .unwrap();
    Ok(best.clone())
}
