//! Uniformizing metric, weighted measure, exact ball / half-ball measures,
//! doubling, the dimension condition and Poincaré-inequality verification.
//!
//! The metric has density `e^(-eps * level)` along edges, so a full edge
//! between levels `n` and `n+1` has length `e^(-eps n)(1 - e^(-eps))/eps` and
//! the whole tree has diameter `2/eps`.  The measure has density
//! `e^(-beta * level)` and is finite iff `beta > log K`.

use crate::error::{Error, Result};
use crate::functions::{EdgeGradient, TreeFunction};
use crate::tree::{TreeSpec, VertexId};
use std::sync::OnceLock;

/// Metric and measure exponents `(eps, beta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricWeights {
    pub epsilon: f64,
    pub beta: f64,
}

impl MetricWeights {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon = {epsilon} must be > 0")));
        }
        if !beta.is_finite() {
            return Err(Error::Parameter(format!("beta = {beta} must be finite")));
        }
        Ok(MetricWeights { epsilon, beta })
    }

    /// Requires the finite-measure regime `beta > log K`.
    pub fn require_finite_measure(&self, k: usize) -> Result<()> {
        if self.beta <= (k as f64).ln() {
            return Err(Error::Parameter(format!(
                "beta = {} must exceed log K = {} for a finite measure",
                self.beta,
                (k as f64).ln()
            )));
        }
        Ok(())
    }

    /// Dimension exponent `s = max(1, beta/eps)`.
    pub fn s(&self) -> f64 {
        (self.beta / self.epsilon).max(1.0)
    }

    /// `diam X = 2/eps` (root with >= 2 children).
    pub fn diameter(&self) -> f64 {
        2.0 / self.epsilon
    }

    /// Distance from the root to a point at the given level coordinate.
    pub fn dist_from_root(&self, level: f64) -> f64 {
        (-(-self.epsilon * level).exp_m1()) / self.epsilon
    }

    /// Integral of the measure density over levels `[a, b]` on a single edge.
    pub fn band_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if self.beta == 0.0 {
            return b - a;
        }
        ((-self.beta * a).exp() - (-self.beta * b).exp()) / self.beta
    }
}

/// A point of the tree seen as a length space: a position on the edge from
/// `parent(vertex)` to `vertex`, at `fraction` in `[0, 1]` of the unit edge
/// measured from the parent.  The root is the point with `vertex = root`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreePoint {
    pub vertex: VertexId,
    pub fraction: f64,
}

impl TreePoint {
    pub fn at_vertex(v: &VertexId) -> Self {
        TreePoint {
            vertex: v.clone(),
            fraction: 1.0,
        }
    }

    pub fn on_edge(v: &VertexId, fraction: f64) -> Result<Self> {
        if v.is_root() {
            return Err(Error::Parameter(
                "on_edge requires a non-root lower endpoint".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Parameter(format!(
                "fraction {fraction} outside [0, 1]"
            )));
        }
        Ok(TreePoint {
            vertex: v.clone(),
            fraction,
        })
    }

    /// Level coordinate `|p| = |vertex| - 1 + fraction` (0 for the root).
    pub fn level_coord(&self) -> f64 {
        if self.vertex.is_root() {
            0.0
        } else {
            (self.vertex.level() - 1) as f64 + self.fraction
        }
    }

    /// The anchor vertex below (or at) the point.
    pub fn anchor(&self) -> &VertexId {
        &self.vertex
    }
}

/// Uniformizing distance between two tree points: the integral of
/// `e^(-eps level)` along the unique geodesic.
pub fn metric_distance(w: &MetricWeights, a: &TreePoint, b: &TreePoint) -> f64 {
    let la = a.level_coord();
    let lb = b.level_coord();
    let va = &a.vertex;
    let vb = &b.vertex;
    // Deepest common point of the two root geodesics, as a level coordinate.
    let meet_level = if va == vb {
        la.min(lb)
    } else if va.is_ancestor_of(vb) {
        // b's root path contains a's whole edge, hence contains a itself.
        la
    } else if vb.is_ancestor_of(va) {
        lb
    } else {
        va.common_prefix_len(vb) as f64
    };
    let dr = |l: f64| w.dist_from_root(l);
    dr(la) + dr(lb) - 2.0 * dr(meet_level)
}

/// How the part of the tree beyond the truncation depth is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailMode {
    /// The infinite tree: measure beyond depth `N` added analytically
    /// (geometric series) for regular trees; interval bracket for rule trees.
    Analytic,
    /// Hard truncation at the tree's depth `N`.
    Truncate,
}

/// Exact measure of a bundle of descending subtrees for a uniform `K`-ary
/// tree: `first_count` edges leave level `from_level`, each vertex below has
/// `K` children; reachable depth below is limited by `budget` (metric length)
/// and optionally by `max_bands` (truncation).
fn downward_measure_uniform(
    k: usize,
    w: &MetricWeights,
    from_level: f64,
    first_count: usize,
    budget: f64,
    max_bands: Option<usize>,
) -> f64 {
    if budget <= 0.0 || first_count == 0 {
        return 0.0;
    }
    let eps = w.epsilon;
    let beta = w.beta;
    let kf = k as f64;
    // Depth reach rho solves eps * budget * e^(eps from_level) = 1 - e^(-eps rho).
    let x = eps * budget * (eps * from_level).exp();
    let rho = if x >= 1.0 {
        f64::INFINITY
    } else {
        -(1.0 - x).ln() / eps
    };
    let q = kf * (-beta).exp();
    // Band-0 bundle weight; band j carries first_count * K^j edges.
    let c0 = first_count as f64 * w.band_integral(from_level, from_level + 1.0);
    let full_bands = |n: usize| -> f64 {
        if n == 0 {
            0.0
        } else if (q - 1.0).abs() < 1e-15 {
            c0 * n as f64
        } else {
            c0 * (1.0 - q.powi(n as i32)) / (1.0 - q)
        }
    };
    match (rho.is_infinite(), max_bands) {
        (true, None) => {
            // Whole infinite bundle; requires q < 1.
            debug_assert!(q < 1.0, "infinite tail requires beta > log K");
            c0 / (1.0 - q)
        }
        (true, Some(m)) => full_bands(m),
        (false, lim) => {
            let lim_f = lim.map(|m| m as f64).unwrap_or(f64::INFINITY);
            if rho >= lim_f {
                full_bands(lim.unwrap())
            } else {
                let jfull = rho.floor() as usize;
                let mut total = full_bands(jfull);
                let frac = rho - jfull as f64;
                if frac > 0.0 {
                    let lo = from_level + jfull as f64;
                    let edges = first_count as f64 * kf.powi(jfull as i32);
                    total += edges * w.band_integral(lo, lo + frac);
                }
                total
            }
        }
    }
}

/// Half-ball report: measure of `F(z, r) = { y >= z : d(z, y) < r }` on the
/// infinite regular tree, using the level-count convention with multiplicity
/// `K^j` in band `j` below `z`, together with the comparability midpoint
/// `e^((eps - beta)|z|) r`.
#[derive(Clone, Debug)]
pub struct HalfBallReport {
    pub measure: f64,
    pub comparison: f64,
    pub ratio: f64,
}

/// Exact `mu(F(z, r))` for the infinite regular `K`-ary tree: piecewise sum
/// over integer level bands `j` with multiplicity `K^j` and weight
/// `int e^(-beta t) dt`, cut at depth `rho` with
/// `(1/eps) e^(-eps |z|)(1 - e^(-eps rho)) = r`.
pub fn half_ball_measure(
    k: usize,
    w: &MetricWeights,
    z: &VertexId,
    r: f64,
) -> Result<HalfBallReport> {
    w.require_finite_measure(k)?;
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius r = {r} must be > 0")));
    }
    let eps = w.epsilon;
    let beta = w.beta;
    let lz = z.level() as f64;
    let kf = k as f64;
    let q = kf * (-beta).exp();
    let x = eps * r * (eps * lz).exp();
    let c0 = w.band_integral(lz, lz + 1.0); // one-branch band-0 weight
    let measure = if x >= 1.0 {
        // rho = infinity: the whole half-space below z.
        c0 / (1.0 - q)
    } else {
        let rho = -(1.0 - x).ln() / eps;
        let jfull = rho.floor() as usize;
        let full = if (q - 1.0).abs() < 1e-15 {
            c0 * jfull as f64
        } else {
            c0 * (1.0 - q.powi(jfull as i32)) / (1.0 - q)
        };
        let frac = rho - jfull as f64;
        let partial = if frac > 0.0 {
            let lo = lz + jfull as f64;
            kf.powi(jfull as i32) * w.band_integral(lo, lo + frac)
        } else {
            0.0
        };
        full + partial
    };
    let comparison = ((eps - beta) * lz).exp() * r;
    Ok(HalfBallReport {
        measure,
        comparison,
        ratio: measure / comparison,
    })
}

/// Brute-force band loop for the same quantity (oracle for tests).
pub fn half_ball_measure_band_sum(
    k: usize,
    w: &MetricWeights,
    z: &VertexId,
    r: f64,
    bands: usize,
) -> f64 {
    let eps = w.epsilon;
    let lz = z.level() as f64;
    let x = eps * r * (eps * lz).exp();
    let rho = if x >= 1.0 {
        f64::INFINITY
    } else {
        -(1.0 - x).ln() / eps
    };
    let kf = k as f64;
    let mut total = 0.0;
    for j in 0..bands {
        let jf = j as f64;
        if jf >= rho {
            break;
        }
        let hi = (jf + 1.0).min(rho);
        // K^j e^(-beta(lz+j)) in log space so deep bands underflow to zero
        // instead of producing inf * 0.
        let scale = (jf * kf.ln() - w.beta * (lz + jf)).exp();
        total += scale * (1.0 - (-w.beta * (hi - jf)).exp()) / w.beta;
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadiusRegime {
    /// `r <= R0 = e^(-eps |x|)/eps`: comparison value `e^((eps-beta)|x|) r`.
    Small,
    /// `r >= R0`: comparison value `r^(beta/eps)`.
    Large,
}

/// One contribution to a ball's measure.
#[derive(Clone, Debug)]
pub enum BallPart {
    /// A sub-interval of the geodesic through the center, in level coords.
    Segment { lo_level: f64, hi_level: f64, measure: f64 },
    /// A bundle of descending subtrees entered at `from_level` through
    /// `first_count` edges with metric budget `budget`.
    SubtreeBundle {
        from_level: f64,
        first_count: usize,
        budget: f64,
        measure: f64,
    },
}

impl BallPart {
    pub fn measure(&self) -> f64 {
        match self {
            BallPart::Segment { measure, .. } => *measure,
            BallPart::SubtreeBundle { measure, .. } => *measure,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BallReport {
    pub center_level: f64,
    pub radius: f64,
    pub clamped: bool,
    pub measure: f64,
    /// Bracket for rule trees with analytic tails (1-ary vs K_max-ary tail).
    pub interval: Option<(f64, f64)>,
    pub regime: RadiusRegime,
    pub r0: f64,
    pub comparison: f64,
    pub parts: Vec<BallPart>,
}

/// Exact `mu(B(x, r))` by bidirectional traversal: up toward the root with
/// branching side-subtrees, down into descendants; each edge contributes a
/// closed-form segment integral.  Radii above `2 diam X` are clamped with a
/// flag.
pub fn ball_measure(
    tree: &TreeSpec,
    w: &MetricWeights,
    x: &TreePoint,
    r: f64,
    tail: TailMode,
) -> Result<BallReport> {
    // Truncated sums are finite for every beta; only analytic tails need the
    // geometric series to converge.
    if tail == TailMode::Analytic {
        w.require_finite_measure(tree.k_max())?;
    }
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius r = {r} must be > 0")));
    }
    let mut clamped = false;
    let mut r = r;
    let rmax = 2.0 * w.diameter();
    if r > rmax {
        r = rmax;
        clamped = true;
    }
    let eps = w.epsilon;
    let lam = x.level_coord();
    let r0 = (-eps * lam).exp() / eps;
    let (regime, comparison) = if r <= r0 {
        (RadiusRegime::Small, ((eps - w.beta) * lam).exp() * r)
    } else {
        (RadiusRegime::Large, r.powf(w.beta / eps))
    };

    let mut parts: Vec<BallPart> = Vec::new();
    let mut lower_extra = 0.0; // tail-bracket adjustments for rule trees
    let mut upper_extra = 0.0;

    let bundle = |from_level: f64,
                  root_of_bundle: &VertexId,
                  first_children: &[VertexId],
                  budget: f64,
                  parts: &mut Vec<BallPart>,
                  lower_extra: &mut f64,
                  upper_extra: &mut f64| {
        let _ = root_of_bundle;
        if budget <= 0.0 || first_children.is_empty() {
            return;
        }
        if let Some(k) = tree.uniform_k() {
            let max_bands = match tail {
                TailMode::Analytic => None,
                TailMode::Truncate => {
                    let lvl = from_level.round() as usize;
                    Some(tree.depth().saturating_sub(lvl))
                }
            };
            let m = downward_measure_uniform(
                k,
                w,
                from_level,
                first_children.len(),
                budget,
                max_bands,
            );
            parts.push(BallPart::SubtreeBundle {
                from_level,
                first_count: first_children.len(),
                budget,
                measure: m,
            });
        } else {
            let (m, lo, hi) = downward_measure_rule(
                tree,
                w,
                from_level.round() as usize,
                first_children,
                budget,
                tail,
            );
            parts.push(BallPart::SubtreeBundle {
                from_level,
                first_count: first_children.len(),
                budget,
                measure: m,
            });
            *lower_extra += lo;
            *upper_extra += hi;
        }
    };

    // Downward part: through/below x.
    if x.vertex.is_root() {
        bundle(
            0.0,
            &x.vertex,
            &tree.children(&x.vertex),
            r,
            &mut parts,
            &mut lower_extra,
            &mut upper_extra,
        );
    } else {
        let va = &x.vertex;
        let lv = va.level() as f64;
        let d_to_va = w.band_integral_metric(lam, lv);
        if d_to_va < r {
            if lv > lam {
                let m = w.band_integral(lam, lv);
                parts.push(BallPart::Segment {
                    lo_level: lam,
                    hi_level: lv,
                    measure: m,
                });
            }
            bundle(
                lv,
                va,
                &tree.children(va),
                r - d_to_va,
                &mut parts,
                &mut lower_extra,
                &mut upper_extra,
            );
        } else {
            // Cut inside the edge below x.
            let cut = -((-eps * lam).exp() - eps * r).ln() / eps;
            let m = w.band_integral(lam, cut);
            parts.push(BallPart::Segment {
                lo_level: lam,
                hi_level: cut,
                measure: m,
            });
        }
    }

    // Upward part: climb ancestors, branching into side subtrees.
    if !x.vertex.is_root() {
        let va = &x.vertex;
        let mut prev_level = lam;
        for m_lvl in (0..va.level()).rev() {
            let a = va.ancestor_at(m_lvl);
            let m_f = m_lvl as f64;
            let d_a = ((-eps * m_f).exp() - (-eps * lam).exp()) / eps;
            if d_a >= r {
                // Partial climb: cut strictly inside the edge above prev_level.
                let s_cut = -((-eps * lam).exp() + eps * r).ln() / eps;
                let m = w.band_integral(s_cut, prev_level);
                parts.push(BallPart::Segment {
                    lo_level: s_cut,
                    hi_level: prev_level,
                    measure: m,
                });
                break;
            }
            let m = w.band_integral(m_f, prev_level);
            parts.push(BallPart::Segment {
                lo_level: m_f,
                hi_level: prev_level,
                measure: m,
            });
            // Side subtrees at `a`, excluding the child toward x.
            let came_from = va.ancestor_at(m_lvl + 1);
            let side: Vec<VertexId> = tree
                .children(&a)
                .into_iter()
                .filter(|c| *c != came_from)
                .collect();
            bundle(
                m_f,
                &a,
                &side,
                r - d_a,
                &mut parts,
                &mut lower_extra,
                &mut upper_extra,
            );
            prev_level = m_f;
        }
    }

    let measure: f64 = parts.iter().map(|p| p.measure()).sum();
    let interval = if lower_extra != 0.0 || upper_extra != 0.0 {
        Some((measure + lower_extra, measure + upper_extra))
    } else {
        None
    };
    Ok(BallReport {
        center_level: lam,
        radius: r,
        clamped,
        measure: if let Some((lo, hi)) = interval {
            0.5 * (lo + hi)
        } else {
            measure
        },
        interval,
        regime,
        r0,
        comparison,
        parts,
    })
}

impl MetricWeights {
    /// Metric length of the level interval `[a, b]` along one edge chain.
    pub fn band_integral_metric(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        ((-self.epsilon * a).exp() - (-self.epsilon * b).exp()) / self.epsilon
    }
}

/// Recursive downward measure for rule trees.  Exact within the truncated
/// tree; with analytic tails, returns the point value plus the bracket
/// deltas (1-ary tail, K_max-ary tail) accumulated at depth-N frontier
/// vertices with leftover budget.
fn downward_measure_rule(
    tree: &TreeSpec,
    w: &MetricWeights,
    from_level: usize,
    first_children: &[VertexId],
    budget: f64,
    tail: TailMode,
) -> (f64, f64, f64) {
    let eps = w.epsilon;
    let mut total = 0.0;
    let mut lo_extra = 0.0;
    let mut hi_extra = 0.0;
    let mut stack: Vec<(VertexId, f64)> = first_children
        .iter()
        .map(|c| (c.clone(), budget))
        .collect();
    while let Some((v, bud)) = stack.pop() {
        // Edge from level |v|-1 to |v|, entered from the top with budget `bud`.
        let m = (v.level() - 1) as f64;
        if v.level() > tree.depth() {
            // Beyond truncation: whole continuation is tail.
            if tail == TailMode::Analytic {
                lo_extra += downward_measure_uniform(1, w, m, 1, bud, None);
                hi_extra += downward_measure_uniform(tree.k_max(), w, m, 1, bud, None);
            }
            continue;
        }
        let edge_len = w.band_integral_metric(m, m + 1.0);
        if bud >= edge_len {
            total += w.band_integral(m, m + 1.0);
            let left = bud - edge_len;
            if left > 0.0 {
                if v.level() < tree.depth() {
                    for c in tree.children(&v) {
                        stack.push((c, left));
                    }
                } else if tail == TailMode::Analytic {
                    // Frontier tails: bracket between 1-ary and K_max-ary.
                    let one = downward_measure_uniform(1, w, m + 1.0, 1, left, None);
                    let kmax = tree.k_max();
                    let km =
                        downward_measure_uniform(kmax, w, m + 1.0, kmax, left, None);
                    lo_extra += one;
                    hi_extra += km;
                }
            }
        } else {
            let cut = -((-eps * m).exp() - eps * bud).ln() / eps;
            total += w.band_integral(m, cut);
        }
    }
    let _ = from_level;
    (total, lo_extra, hi_extra)
}

/// `mu(B(x, 2r)) / mu(B(x, r))`.
pub fn doubling_ratio(
    tree: &TreeSpec,
    w: &MetricWeights,
    x: &TreePoint,
    r: f64,
    tail: TailMode,
) -> Result<f64> {
    let b2 = ball_measure(tree, w, x, 2.0 * r, tail)?;
    let b1 = ball_measure(tree, w, x, r, tail)?;
    Ok(b2.measure / b1.measure)
}

/// A nested ball pair for the dimension condition.
#[derive(Clone, Debug)]
pub struct NestedBallPair {
    pub outer_center: TreePoint,
    pub outer_radius: f64,
    pub inner_center: TreePoint,
    pub inner_radius: f64,
}

#[derive(Clone, Debug)]
pub struct DimensionReport {
    pub s: f64,
    pub inf_at_s: f64,
    pub s_prime: f64,
    pub inf_at_s_prime: f64,
    pub samples: usize,
}

/// Dimension condition: `mu(B')/mu(B) >= C (r'/r)^s` with
/// `s = max(1, beta/eps)`; reports the infimum of the normalized statistic at
/// `s` and at a user-supplied `s' < s` (sharpness probe).
pub fn dimension_condition_check(
    tree: &TreeSpec,
    w: &MetricWeights,
    pairs: &[NestedBallPair],
    s_prime: f64,
    tail: TailMode,
) -> Result<DimensionReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("dimension_condition_check sample set".into()));
    }
    let s = w.s();
    let mut inf_s = f64::INFINITY;
    let mut inf_sp = f64::INFINITY;
    for pair in pairs {
        let d = metric_distance(w, &pair.outer_center, &pair.inner_center);
        if d >= pair.outer_radius || pair.inner_radius > pair.outer_radius {
            return Err(Error::Parameter(
                "dimension pair not nested: need x' in B(x,r) and r' <= r".into(),
            ));
        }
        let outer = ball_measure(tree, w, &pair.outer_center, pair.outer_radius, tail)?;
        let inner = ball_measure(tree, w, &pair.inner_center, pair.inner_radius, tail)?;
        let rr = pair.inner_radius / pair.outer_radius;
        let base = inner.measure / outer.measure;
        inf_s = inf_s.min(base / rr.powf(s));
        inf_sp = inf_sp.min(base / rr.powf(s_prime));
    }
    Ok(DimensionReport {
        s,
        inf_at_s: inf_s,
        s_prime,
        inf_at_s_prime: inf_sp,
        samples: pairs.len(),
    })
}

/// Included sub-interval (in level coordinates) of the edge ending at
/// `vertex`, for a metric ball.
#[derive(Clone, Debug)]
pub struct EdgeSegment {
    pub vertex: VertexId,
    pub lo_level: f64,
    pub hi_level: f64,
}

/// Enumerate the portions of every edge of the truncated tree inside
/// `B(x, r)`.  Used by the Poincaré checker and the Riemann oracle.
pub fn ball_edge_segments(
    tree: &TreeSpec,
    w: &MetricWeights,
    x: &TreePoint,
    r: f64,
) -> Vec<EdgeSegment> {
    let eps = w.epsilon;
    let mut segs = Vec::new();
    let mut level: Vec<(VertexId, f64)> = vec![(VertexId::root(), metric_dist_to_vertex(w, x, &VertexId::root()))];
    for _ in 0..tree.depth() {
        let mut next = Vec::with_capacity(level.len() * tree.k_max());
        for (v, d_v) in &level {
            for c in tree.children(v) {
                let d_c = metric_dist_to_vertex(w, x, &c);
                let m = (c.level() - 1) as f64;
                let on_this_edge = x.vertex == c && x.fraction < 1.0 && x.fraction > 0.0;
                if on_this_edge {
                    let lam = x.level_coord();
                    // Down from x toward c and up toward v, within the edge.
                    let down_cut = {
                        let e = (-eps * lam).exp() - eps * r;
                        if e <= (-eps * (m + 1.0)).exp() {
                            m + 1.0
                        } else {
                            -e.ln() / eps
                        }
                    };
                    let up_cut = {
                        let e = (-eps * lam).exp() + eps * r;
                        if e >= (-eps * m).exp() {
                            m
                        } else {
                            -e.ln() / eps
                        }
                    };
                    if down_cut > up_cut {
                        segs.push(EdgeSegment {
                            vertex: c.clone(),
                            lo_level: up_cut,
                            hi_level: down_cut,
                        });
                    }
                } else if *d_v <= d_c {
                    // Entered from the top endpoint v.
                    if *d_v < r {
                        let slack = r - d_v;
                        let e = (-eps * m).exp() - eps * slack;
                        let cut = if e <= (-eps * (m + 1.0)).exp() {
                            m + 1.0
                        } else {
                            -e.ln() / eps
                        };
                        if cut > m {
                            segs.push(EdgeSegment {
                                vertex: c.clone(),
                                lo_level: m,
                                hi_level: cut,
                            });
                        }
                    }
                } else {
                    // Entered from the bottom endpoint c.
                    if d_c < r {
                        let slack = r - d_c;
                        let e = (-eps * (m + 1.0)).exp() + eps * slack;
                        let cut = if e >= (-eps * m).exp() {
                            m
                        } else {
                            -e.ln() / eps
                        };
                        if m + 1.0 > cut {
                            segs.push(EdgeSegment {
                                vertex: c.clone(),
                                lo_level: cut,
                                hi_level: m + 1.0,
                            });
                        }
                    }
                }
                next.push((c, d_c));
            }
        }
        level = next;
    }
    segs
}

/// Distance from a tree point to a vertex.
pub fn metric_dist_to_vertex(w: &MetricWeights, x: &TreePoint, v: &VertexId) -> f64 {
    metric_distance(w, x, &TreePoint::at_vertex(v))
}

/// 16-point Gauss-Legendre nodes and weights on [-1, 1], computed once by
/// Newton iteration on the Legendre polynomial.
pub fn gauss_legendre_16() -> &'static [(f64, f64); 16] {
    static TABLE: OnceLock<[(f64, f64); 16]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 16usize;
        let mut out = [(0.0f64, 0.0f64); 16];
        for i in 0..n {
            // Initial guess (roots ordered decreasing in cos argument).
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                // Evaluate P_n and P_n' by recurrence.
                let (mut p0, mut p1) = (1.0f64, t);
                for j in 2..=n {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * t * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                let dt = p1 / dp;
                t -= dt;
                if dt.abs() < 1e-16 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0f64, t);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * t * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let wgt = 2.0 / ((1.0 - t * t) * dp * dp);
            out[i] = (t, wgt);
        }
        out
    })
}

/// Integrate `f(level) * e^(-beta * level)` over `[a, b]` with 16-point Gauss.
pub fn gauss_weighted<F: Fn(f64) -> f64>(w: &MetricWeights, a: f64, b: f64, f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut total = 0.0;
    for &(t, wt) in gauss_legendre_16() {
        let lvl = mid + half * t;
        total += wt * f(lvl) * (-w.beta * lvl).exp();
    }
    total * half
}

#[derive(Clone, Debug)]
pub struct PoincareReport {
    pub constant: f64,
    pub ball_measure: f64,
    pub lhs_mean_osc: f64,
    pub rhs_mean_gradient: f64,
}

/// Smallest `C` with
/// `avg_B |u - u_B|^p  <=  (C r)^p avg_B g^p`
/// on the ball `B(center, r)` (p = 1 gives the 1-Poincaré inequality form).
pub fn poincare_check(
    tree: &TreeSpec,
    w: &MetricWeights,
    u: &TreeFunction,
    g: &EdgeGradient,
    center: &TreePoint,
    r: f64,
    p: f64,
) -> Result<PoincareReport> {
    w.require_finite_measure(tree.k_max())?;
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p = {p} must be >= 1")));
    }
    let segs = ball_edge_segments(tree, w, center, r);
    if segs.is_empty() {
        return Err(Error::Empty("ball contains no edge segment".into()));
    }
    let mut mu_b = 0.0;
    let mut int_u = 0.0;
    for seg in &segs {
        mu_b += w.band_integral(seg.lo_level, seg.hi_level);
        int_u += gauss_weighted(w, seg.lo_level, seg.hi_level, |lvl| {
            u.eval_on_edge(w, &seg.vertex, lvl)
        });
    }
    let u_b = int_u / mu_b;
    let mut int_osc = 0.0;
    let mut int_gp = 0.0;
    for seg in &segs {
        int_osc += gauss_weighted(w, seg.lo_level, seg.hi_level, |lvl| {
            (u.eval_on_edge(w, &seg.vertex, lvl) - u_b).abs().powf(p)
        });
        let ge = g.value(&seg.vertex);
        int_gp += ge.powf(p) * w.band_integral(seg.lo_level, seg.hi_level);
    }
    let lhs = (int_osc / mu_b).powf(1.0 / p);
    let rhs = (int_gp / mu_b).powf(1.0 / p);
    if rhs == 0.0 {
        if lhs <= 1e-12 * (1.0 + u_b.abs()) {
            return Ok(PoincareReport {
                constant: 0.0,
                ball_measure: mu_b,
                lhs_mean_osc: lhs,
                rhs_mean_gradient: rhs,
            });
        }
        return Err(Error::NotAnUpperGradient(format!(
            "g vanishes on the ball but u oscillates (mean osc {lhs})"
        )));
    }
    Ok(PoincareReport {
        constant: lhs / (r * rhs),
        ball_measure: mu_b,
        lhs_mean_osc: lhs,
        rhs_mean_gradient: rhs,
    })
}

/// The 1-Poincaré constants of many function/gradient pairs on one ball,
/// with the ball geometry computed once.  Functions are affine in the metric
/// coordinate on each edge, so every integral has a closed form:
/// `u(t) - c = A + B e^(-eps t)` on an edge, and
/// `int |A + B e^(-eps t)| e^(-beta t) dt` splits at the sign change.
pub fn poincare_sweep(
    tree: &TreeSpec,
    w: &MetricWeights,
    funcs: &[(TreeFunction, EdgeGradient)],
    center: &TreePoint,
    r: f64,
) -> Result<Vec<PoincareReport>> {
    w.require_finite_measure(tree.k_max())?;
    let segs = ball_edge_segments(tree, w, center, r);
    if segs.is_empty() {
        return Err(Error::Empty("ball contains no edge segment".into()));
    }
    let eps = w.epsilon;
    let beta = w.beta;
    // Function-independent per-segment integrals.
    let exp_int = |rate: f64, lo: f64, hi: f64| ((-rate * lo).exp() - (-rate * hi).exp()) / rate;
    let geom: Vec<(f64, f64, f64)> = segs
        .iter()
        .map(|s| {
            let m = (s.vertex.level() - 1) as f64;
            (
                w.band_integral(s.lo_level, s.hi_level),
                exp_int(beta + eps, s.lo_level, s.hi_level),
                w.band_integral_metric(m, m + 1.0),
            )
        })
        .collect();
    let mu_b: f64 = geom.iter().map(|(i0, _, _)| i0).sum();
    let mut out = Vec::with_capacity(funcs.len());
    for (u, g) in funcs {
        // Edge coefficients u(t) = A0 + B0 e^(-eps t).
        let coeffs: Vec<(f64, f64)> = segs
            .iter()
            .zip(geom.iter())
            .map(|(s, &(_, _, d_edge))| {
                let m = (s.vertex.level() - 1) as f64;
                let u_c = u.value(&s.vertex);
                let u_p = u.value(&s.vertex.parent().expect("non-root segment vertex"));
                let slope = (u_c - u_p) / (eps * d_edge);
                (u_p + slope * (-eps * m).exp(), -slope)
            })
            .collect();
        let int_u: f64 = coeffs
            .iter()
            .zip(geom.iter())
            .map(|(&(a0, b0), &(i0, i1, _))| a0 * i0 + b0 * i1)
            .sum();
        let u_b = int_u / mu_b;
        let mut int_osc = 0.0;
        let mut int_g = 0.0;
        for ((s, &(a0, b0)), &(i0, _, _)) in segs.iter().zip(&coeffs).zip(&geom) {
            let (a, b) = (a0 - u_b, b0);
            let piece = |lo: f64, hi: f64| {
                (a * w.band_integral(lo, hi) + b * exp_int(beta + eps, lo, hi)).abs()
            };
            let cross = if b != 0.0 && -a / b > 0.0 {
                let t = -(-a / b).ln() / eps;
                (t > s.lo_level && t < s.hi_level).then_some(t)
            } else {
                None
            };
            int_osc += match cross {
                Some(t) => piece(s.lo_level, t) + piece(t, s.hi_level),
                None => piece(s.lo_level, s.hi_level),
            };
            int_g += g.value(&s.vertex) * i0;
        }
        let lhs = int_osc / mu_b;
        let rhs = int_g / mu_b;
        if rhs == 0.0 {
            if lhs > 1e-12 * (1.0 + u_b.abs()) {
                return Err(Error::NotAnUpperGradient(format!(
                    "g vanishes on the ball but u oscillates (mean osc {lhs})"
                )));
            }
            out.push(PoincareReport {
                constant: 0.0,
                ball_measure: mu_b,
                lhs_mean_osc: lhs,
                rhs_mean_gradient: rhs,
            });
            continue;
        }
        out.push(PoincareReport {
            constant: lhs / (r * rhs),
            ball_measure: mu_b,
            lhs_mean_osc: lhs,
            rhs_mean_gradient: rhs,
        });
    }
    Ok(out)
}

/// Envelope `min(1, sigma) t <= 1 - (1-t)^sigma <= max(1, sigma) t` for
/// `sigma > 0`, `t` in `[0, 1]`.
pub fn algebraic_envelope(sigma: f64, t: f64) -> Result<(f64, f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma = {sigma} must be > 0")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("t = {t} outside [0, 1]")));
    }
    let value = 1.0 - (1.0 - t).powf(sigma);
    Ok((sigma.min(1.0) * t, value, sigma.max(1.0) * t))
}

/// Total mass of the infinite regular tree (actual edge counts:
/// `K^(j+1)` edges in band `[j, j+1]`).
pub fn total_measure_regular(k: usize, w: &MetricWeights) -> Result<f64> {
    w.require_finite_measure(k)?;
    let q = k as f64 * (-w.beta).exp();
    Ok(k as f64 * w.band_integral(0.0, 1.0) / (1.0 - q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeSpec;
    use approx::assert_relative_eq;

    fn v(s: &str) -> VertexId {
        VertexId::parse(s, 10).unwrap()
    }

    #[test]
    fn distance_root_to_level_n() {
        let w = MetricWeights::new(0.7, 1.0).unwrap();
        let p = TreePoint::at_vertex(&v("0101"));
        let d = metric_distance(&w, &TreePoint::at_vertex(&VertexId::root()), &p);
        assert_relative_eq!(d, (1.0 - (-0.7f64 * 4.0).exp()) / 0.7, epsilon = 1e-14);
    }

    #[test]
    fn distance_unit_eps_level_one() {
        let w = MetricWeights::new(1.0, 1.0).unwrap();
        let d = metric_distance(
            &w,
            &TreePoint::at_vertex(&VertexId::root()),
            &TreePoint::at_vertex(&v("0")),
        );
        assert_relative_eq!(d, 0.632_120_558_828_557_7, epsilon = 1e-7);
    }

    #[test]
    fn distance_is_metric_small_depth() {
        let w = MetricWeights::new(std::f64::consts::LN_2, 1.0).unwrap();
        let t = TreeSpec::regular(2, 6).unwrap();
        let pts: Vec<TreePoint> = t
            .vertices_to_depth(6)
            .into_iter()
            .map(|x| TreePoint::at_vertex(&x))
            .collect();
        for a in pts.iter().step_by(5) {
            for b in pts.iter().step_by(3) {
                let dab = metric_distance(&w, a, b);
                assert_relative_eq!(dab, metric_distance(&w, b, a), epsilon = 1e-14);
                assert!(dab >= 0.0);
                for c in pts.iter().step_by(7) {
                    let dac = metric_distance(&w, a, c);
                    let dcb = metric_distance(&w, c, b);
                    assert!(dab <= dac + dcb + 1e-12);
                }
            }
        }
    }

    #[test]
    fn distance_mid_edge_points() {
        let w = MetricWeights::new(0.9, 1.0).unwrap();
        // Same edge.
        let a = TreePoint::on_edge(&v("01"), 0.25).unwrap();
        let b = TreePoint::on_edge(&v("01"), 0.75).unwrap();
        let d = metric_distance(&w, &a, &b);
        assert_relative_eq!(d, w.band_integral_metric(1.25, 1.75), epsilon = 1e-14);
        // Point above vs point below on sibling branches.
        let c = TreePoint::on_edge(&v("00"), 0.5).unwrap();
        let d2 = metric_distance(&w, &b, &c);
        // Path: 1.75 -> 1 (lca is vertex "0") -> 1.5.
        let expected =
            w.band_integral_metric(1.0, 1.75) + w.band_integral_metric(1.0, 1.5);
        assert_relative_eq!(d2, expected, epsilon = 1e-14);
        // Representation consistency: fraction 0 equals the parent vertex.
        let p0 = TreePoint::on_edge(&v("01"), 0.0).unwrap();
        let pv = TreePoint::at_vertex(&v("0"));
        assert_relative_eq!(
            metric_distance(&w, &p0, &c),
            metric_distance(&w, &pv, &c),
            epsilon = 1e-14
        );
    }

    #[test]
    fn half_ball_whole_tree_value() {
        // K = 2, beta = log 4: mu(X) = 3/(2 log 4) under the band-count
        // convention with multiplicity K^j.
        let beta = 4.0f64.ln();
        let w = MetricWeights::new(0.83, beta).unwrap();
        let rep = half_ball_measure(2, &w, &VertexId::root(), 1.0 / w.epsilon).unwrap();
        assert_relative_eq!(rep.measure, 3.0 / (2.0 * beta), epsilon = 1e-12);
        // And the same through the band-sum oracle.
        let oracle = half_ball_measure_band_sum(2, &w, &VertexId::root(), 1.0 / w.epsilon, 200);
        assert_relative_eq!(rep.measure, oracle, epsilon = 1e-12);
    }

    #[test]
    fn half_ball_small_r_vanishes_and_brackets() {
        let w = MetricWeights::new(0.7, 1.3).unwrap();
        let z = v("010");
        let mut last = f64::INFINITY;
        for i in 1..30 {
            let r = 1e-1f64 * 0.5f64.powi(i);
            let m = half_ball_measure(2, &w, &z, r).unwrap().measure;
            assert!(m < last);
            last = m;
        }
        assert!(last < 1e-10);
        // Ratio to the comparison midpoint stays in a bracket over |z|, r.
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for depth in 0..=15 {
            let z = VertexId::from_digits(vec![0; depth]);
            for j in 0..8 {
                let r = (-w.epsilon * depth as f64).exp() / w.epsilon * 0.9f64.powi(j);
                let rep = half_ball_measure(2, &w, &z, r).unwrap();
                lo = lo.min(rep.ratio);
                hi = hi.max(rep.ratio);
            }
        }
        assert!(lo > 0.0 && hi.is_finite());
        assert!(hi / lo < 10.0, "comparability bracket blew up: {lo} {hi}");
    }

    #[test]
    fn half_ball_full_subtree_matches_band_sum() {
        let w = MetricWeights::new(0.6, 1.2).unwrap();
        for depth in [0usize, 3, 7] {
            let z = VertexId::from_digits(vec![1; depth]);
            let r = (-w.epsilon * depth as f64).exp() / w.epsilon;
            let rep = half_ball_measure(3, &w, &z, r).unwrap();
            let oracle = half_ball_measure_band_sum(3, &w, &z, r, 2000);
            assert_relative_eq!(rep.measure, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn ball_whole_space() {
        let w = MetricWeights::new(std::f64::consts::LN_2, 2.0 * std::f64::consts::LN_2)
            .unwrap();
        let t = TreeSpec::regular(2, 10).unwrap();
        let root = TreePoint::at_vertex(&VertexId::root());
        let b = ball_measure(&t, &w, &root, 1.0 / w.epsilon, TailMode::Analytic).unwrap();
        let total = total_measure_regular(2, &w).unwrap();
        assert_relative_eq!(b.measure, total, epsilon = 1e-12);
        // Larger radii do not add mass.
        let b2 = ball_measure(&t, &w, &root, 3.0 / w.epsilon, TailMode::Analytic).unwrap();
        assert_relative_eq!(b2.measure, total, epsilon = 1e-12);
    }

    #[test]
    fn ball_monotone_in_radius() {
        let w = MetricWeights::new(0.8, 1.1).unwrap();
        let t = TreeSpec::regular(2, 10).unwrap();
        let x = TreePoint::at_vertex(&v("0110"));
        let mut last = 0.0;
        for i in 1..=40 {
            let r = i as f64 * 0.05;
            let b = ball_measure(&t, &w, &x, r, TailMode::Analytic).unwrap();
            assert!(b.measure >= last - 1e-15);
            last = b.measure;
        }
    }

    /// Riemann oracle: per included edge sub-interval, midpoint sum with 2^10
    /// subdivisions of the measure density.
    fn riemann_ball(tree: &TreeSpec, w: &MetricWeights, x: &TreePoint, r: f64) -> f64 {
        let segs = ball_edge_segments(tree, w, x, r);
        let mut total = 0.0;
        for s in &segs {
            let n = 1024;
            let h = (s.hi_level - s.lo_level) / n as f64;
            for i in 0..n {
                let mid = s.lo_level + (i as f64 + 0.5) * h;
                total += (-w.beta * mid).exp() * h;
            }
        }
        total
    }

    #[test]
    fn ball_measure_vs_riemann_small() {
        let w = MetricWeights::new(0.9, 1.2).unwrap();
        let t = TreeSpec::regular(2, 6).unwrap();
        for (addr, frac, r) in [
            ("0101", 1.0, 0.3),
            ("0", 0.4, 0.8),
            ("110101", 1.0, 1.7),
            ("10", 0.9, 0.05),
        ] {
            let x = if frac == 1.0 {
                TreePoint::at_vertex(&v(addr))
            } else {
                TreePoint::on_edge(&v(addr), frac).unwrap()
            };
            let exact = ball_measure(&t, &w, &x, r, TailMode::Truncate).unwrap();
            let oracle = riemann_ball(&t, &w, &x, r);
            assert_relative_eq!(exact.measure, oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn ball_decomposition_sums() {
        let w = MetricWeights::new(0.9, 1.2).unwrap();
        let t = TreeSpec::regular(3, 8).unwrap();
        let x = TreePoint::at_vertex(&v("2101")).clone();
        let b = ball_measure(&t, &w, &x, 0.7, TailMode::Analytic).unwrap();
        let sum: f64 = b.parts.iter().map(|p| p.measure()).sum();
        assert_relative_eq!(b.measure, sum, epsilon = 1e-14);
    }

    #[test]
    fn nonregular_bracketed_by_extremes() {
        let w = MetricWeights::new(0.8, 1.5).unwrap();
        // Alternating 1/2-child rule.
        let rule_tree =
            TreeSpec::with_rule(|x| if x.level() % 2 == 0 { 2 } else { 1 }, 2, 6).unwrap();
        let one = TreeSpec::regular(1, 6).unwrap();
        let two = TreeSpec::regular(2, 6).unwrap();
        let x = TreePoint::at_vertex(&VertexId::root());
        for r in [0.2, 0.7, 1.4, 2.4] {
            let m = ball_measure(&rule_tree, &w, &x, r, TailMode::Truncate)
                .unwrap()
                .measure;
            let lo = ball_measure(&one, &w, &x, r, TailMode::Truncate).unwrap().measure;
            let hi = ball_measure(&two, &w, &x, r, TailMode::Truncate).unwrap().measure;
            assert!(lo - 1e-12 <= m && m <= hi + 1e-12, "r={r}: {lo} {m} {hi}");
        }
    }

    #[test]
    fn clamped_radius_flag() {
        let w = MetricWeights::new(1.0, 1.0).unwrap();
        let t = TreeSpec::regular(2, 5).unwrap();
        let x = TreePoint::at_vertex(&VertexId::root());
        let b = ball_measure(&t, &w, &x, 100.0, TailMode::Analytic).unwrap();
        assert!(b.clamped);
        assert_relative_eq!(b.radius, 2.0 * w.diameter(), epsilon = 1e-14);
    }

    #[test]
    fn algebraic_envelope_examples() {
        assert_eq!(algebraic_envelope(2.0, 0.0).unwrap(), (0.0, 0.0, 0.0));
        let (lo, val, hi) = algebraic_envelope(1.0, 0.37).unwrap();
        assert_relative_eq!(lo, 0.37);
        assert_relative_eq!(val, 0.37, epsilon = 1e-14);
        assert_relative_eq!(hi, 0.37);
        let (lo, val, hi) = algebraic_envelope(2.0, 0.5).unwrap();
        assert_relative_eq!(lo, 0.5);
        assert_relative_eq!(val, 0.75);
        assert_relative_eq!(hi, 1.0);
        // Grid check.
        for i in 1..=100 {
            for j in 0..=100 {
                let sigma = i as f64 * 0.07;
                let t = j as f64 / 100.0;
                let (lo, val, hi) = algebraic_envelope(sigma, t).unwrap();
                assert!(lo <= val + 1e-12 && val <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn doubling_monotone() {
        let w = MetricWeights::new(std::f64::consts::LN_2, 1.5 * std::f64::consts::LN_2).unwrap();
        let t = TreeSpec::regular(2, 12).unwrap();
        let x = TreePoint::at_vertex(&v("010101"));
        for j in 0..10 {
            let r = w.diameter() * 0.6f64.powi(j);
            let ratio = doubling_ratio(&t, &w, &x, r, TailMode::Analytic).unwrap();
            assert!(ratio >= 1.0);
            assert!(ratio.is_finite());
        }
    }

    #[test]
    fn poincare_sweep_matches_single_checks() {
        use crate::functions::{minimal_upper_gradient, random_lipschitz_tree_function};
        let w = MetricWeights::new(std::f64::consts::LN_2, 1.5 * std::f64::consts::LN_2).unwrap();
        let t = TreeSpec::regular(2, 8).unwrap();
        let funcs: Vec<_> = (0..4)
            .map(|s| {
                let u = random_lipschitz_tree_function(2, 8, &w, 70 + s);
                let g = minimal_upper_gradient(&u, &w);
                (u, g)
            })
            .collect();
        for (center, r) in [
            (TreePoint::at_vertex(&v("01")), 0.4 * w.diameter()),
            (TreePoint::on_edge(&v("0110"), 0.3).unwrap(), 0.15 * w.diameter()),
        ] {
            let swept = poincare_sweep(&t, &w, &funcs, &center, r).unwrap();
            for ((u, g), rep) in funcs.iter().zip(&swept) {
                let single = poincare_check(&t, &w, u, g, &center, r, 1.0).unwrap();
                // The sweep integrates the oscillation exactly; the single
                // check uses quadrature with kinks, hence the loose bound.
                assert_relative_eq!(rep.ball_measure, single.ball_measure, epsilon = 1e-12);
                assert_relative_eq!(
                    rep.rhs_mean_gradient,
                    single.rhs_mean_gradient,
                    max_relative = 1e-10
                );
                assert_relative_eq!(rep.constant, single.constant, max_relative = 2e-2);
            }
        }
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        // Degree-31 exactness sanity: integrate x^20 over [0,1] against beta=0.
        let w = MetricWeights::new(1.0, 0.0).unwrap();
        let val = gauss_weighted(&w, 0.0, 1.0, |x| x.powi(20));
        assert_relative_eq!(val, 1.0 / 21.0, epsilon = 1e-13);
    }
}
