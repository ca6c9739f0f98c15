//! Besov seminorms on the boundary, Newtonian energy on the tree, upper
//! gradients, and the named test-function generators.

use crate::boundary::{self, BoundaryAddress};
use crate::error::{Error, Result};
use crate::metric::{gauss_weighted, MetricWeights};
use crate::tree::{Digit, VertexId};
use rayon::prelude::*;

/// Block size above which general-`p` pair sums switch from the exact
/// quadratic loop to seeded pair subsampling (`p = 1, 2` are always exact).
const EXACT_PAIR_LIMIT: usize = 4096;
const SAMPLED_PAIRS_PER_BLOCK: usize = 1 << 17;

// ---------------------------------------------------------------------------
// Deterministic address-keyed randomness (splitmix64).

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Uniform [0,1) value keyed by a seed and an address.
pub fn address_uniform(seed: u64, digits: &[Digit]) -> f64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for &d in digits {
        h = splitmix64(h ^ (d as u64 + 1));
    }
    // One more scramble so sibling addresses decorrelate fully.
    (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64
}

// ---------------------------------------------------------------------------
// Boundary functions.

/// A function constant on each depth-`m` cell of a regular `K`-ary boundary;
/// values stored in address (lexicographic) order.
#[derive(Clone, Debug)]
pub struct BoundaryFunction {
    k: usize,
    resolution: usize,
    values: Vec<f64>,
}

impl BoundaryFunction {
    pub fn from_values(k: usize, resolution: usize, values: Vec<f64>) -> Result<Self> {
        let expect = k.checked_pow(resolution as u32).ok_or_else(|| {
            Error::Parameter(format!("K^m overflows for K={k}, m={resolution}"))
        })?;
        if values.len() != expect {
            return Err(Error::Parameter(format!(
                "expected {expect} cell values, got {}",
                values.len()
            )));
        }
        Ok(BoundaryFunction {
            k,
            resolution,
            values,
        })
    }

    pub fn from_fn(k: usize, resolution: usize, f: impl Fn(&[Digit]) -> f64) -> Self {
        let n = k.pow(resolution as u32);
        let mut digits = vec![0 as Digit; resolution];
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            index_to_digits(i, k, &mut digits);
            values.push(f(&digits));
        }
        BoundaryFunction {
            k,
            resolution,
            values,
        }
    }

    pub fn constant(k: usize, resolution: usize, c: f64) -> Self {
        BoundaryFunction {
            k,
            resolution,
            values: vec![c; k.pow(resolution as u32)],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on the cell containing the given address (address length must be
    /// at least the resolution).
    pub fn value_at(&self, address: &VertexId) -> Result<f64> {
        if address.level() < self.resolution {
            return Err(Error::Parameter(format!(
                "address of length {} cannot resolve a depth-{} cell",
                address.level(),
                self.resolution
            )));
        }
        Ok(self.values[digits_to_index(&address.digits()[..self.resolution], self.k)])
    }

    /// Replicate values down to a finer resolution.
    pub fn refine(&self, m: usize) -> Result<BoundaryFunction> {
        if m < self.resolution {
            return Err(Error::Parameter(format!(
                "refine target {m} below resolution {}",
                self.resolution
            )));
        }
        let rep = self.k.pow((m - self.resolution) as u32);
        let mut values = Vec::with_capacity(self.values.len() * rep);
        for &v in &self.values {
            values.extend(std::iter::repeat(v).take(rep));
        }
        Ok(BoundaryFunction {
            k: self.k,
            resolution: m,
            values,
        })
    }

    /// Pointwise difference (resolutions are aligned by refinement).
    pub fn sub(&self, other: &BoundaryFunction) -> Result<BoundaryFunction> {
        if self.k != other.k {
            return Err(Error::Parameter("mismatched branching factors".into()));
        }
        let m = self.resolution.max(other.resolution);
        let a = self.refine(m)?;
        let b = other.refine(m)?;
        let values = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| x - y)
            .collect();
        Ok(BoundaryFunction {
            k: self.k,
            resolution: m,
            values,
        })
    }
}

pub fn index_to_digits(mut i: usize, k: usize, out: &mut [Digit]) {
    for slot in out.iter_mut().rev() {
        *slot = (i % k) as Digit;
        i /= k;
    }
}

pub fn digits_to_index(digits: &[Digit], k: usize) -> usize {
    digits.iter().fold(0usize, |acc, &d| acc * k + d as usize)
}

// ---------------------------------------------------------------------------
// Pair power sums: the aggregation engine behind E_p and the Besov forms.

/// Sum over all ordered pairs `(i, j)` inside each block of `K^(m-k)`
/// consecutive cells (cells sharing a level-`k` prefix) of `|f_i - f_j|^p`.
///
/// Exact via moment algebra for `p = 2`, via sorting for `p = 1`, via the
/// quadratic loop for small blocks; large blocks with general `p` use
/// deterministic seeded pair subsampling (flagged by the `sampled` result).
pub fn pair_power_sum_at_level(f: &BoundaryFunction, k_prefix: usize, p: f64) -> (f64, bool) {
    let m = f.resolution;
    assert!(k_prefix <= m);
    let block = f.k.pow((m - k_prefix) as u32);
    let n_blocks = f.values.len() / block;
    let p1 = (p - 1.0).abs() < 1e-14;
    let p2 = (p - 2.0).abs() < 1e-14;
    let sampled = !p1 && !p2 && block > EXACT_PAIR_LIMIT;
    let total: f64 = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let xs = &f.values[b * block..(b + 1) * block];
            if p2 {
                // Center first to avoid cancellation when the spread is tiny
                // relative to the mean.
                let mean: f64 = xs.iter().sum::<f64>() / block as f64;
                let s: f64 = xs.iter().map(|x| x - mean).sum();
                let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
                2.0 * (block as f64 * ss - s * s)
            } else if p1 {
                let mut sorted = xs.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                sorted
                    .iter()
                    .enumerate()
                    .map(|(i, x)| 2.0 * x * (2.0 * i as f64 - (block as f64 - 1.0)))
                    .sum()
            } else if block <= EXACT_PAIR_LIMIT {
                let mut acc = 0.0;
                for i in 0..block {
                    for j in (i + 1)..block {
                        acc += (xs[i] - xs[j]).abs().powf(p);
                    }
                }
                2.0 * acc
            } else {
                // Seeded estimate: mean over sampled ordered pairs times n^2.
                let mut h = splitmix64(0xC0FF_EE00_u64 ^ (b as u64) ^ ((k_prefix as u64) << 32));
                let mut acc = 0.0;
                for _ in 0..SAMPLED_PAIRS_PER_BLOCK {
                    h = splitmix64(h);
                    let i = (h % block as u64) as usize;
                    h = splitmix64(h);
                    let j = (h % block as u64) as usize;
                    acc += (xs[i] - xs[j]).abs().powf(p);
                }
                acc / SAMPLED_PAIRS_PER_BLOCK as f64 * (block as f64) * (block as f64)
            }
        })
        .sum();
    (total.max(0.0), sampled)
}

/// `E_p(f, t)`: the `L^p(nu x nu)` mean oscillation over visual balls of
/// radius `t` (balls are exactly prefix classes), computed by per-prefix
/// aggregation.
pub fn ep_modulus(f: &BoundaryFunction, w: &MetricWeights, t: f64, p: f64) -> Result<f64> {
    Ok(ep_modulus_report(f, w, t, p)?.value)
}

#[derive(Clone, Debug)]
pub struct EpReport {
    pub value: f64,
    pub prefix_level: usize,
    pub sampled: bool,
}

pub fn ep_modulus_report(
    f: &BoundaryFunction,
    w: &MetricWeights,
    t: f64,
    p: f64,
) -> Result<EpReport> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p = {p} must be >= 1")));
    }
    let (k, _) = boundary::level_for_radius(w, t)?;
    let m = f.resolution;
    if k >= m {
        // The ball sits inside a single cell where f is constant.
        return Ok(EpReport {
            value: 0.0,
            prefix_level: k,
            sampled: false,
        });
    }
    let (pair_sum, sampled) = pair_power_sum_at_level(f, k, p);
    let kf = f.k as f64;
    // E^p = K^(k - 2m) * pair_sum.
    let ep_p = kf.powi(k as i32 - 2 * m as i32) * pair_sum;
    Ok(EpReport {
        value: ep_p.powf(1.0 / p),
        prefix_level: k,
        sampled,
    })
}

// ---------------------------------------------------------------------------
// Besov seminorms.

#[derive(Clone, Copy, Debug)]
pub struct BesovParams {
    pub p: f64,
    pub theta: f64,
    /// Number of scales `n = 0..=range` in the sum form (defaults to the
    /// function's resolution).
    pub range: Option<usize>,
}

impl BesovParams {
    pub fn new(p: f64, theta: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Parameter(format!("p = {p} must be >= 1")));
        }
        if !(theta > 0.0) {
            return Err(Error::Parameter(format!("theta = {theta} must be > 0")));
        }
        Ok(BesovParams {
            p,
            theta,
            range: None,
        })
    }

    pub fn with_range(mut self, range: usize) -> Self {
        self.range = Some(range);
        self
    }
}

#[derive(Clone, Debug)]
pub struct BesovTerm {
    pub n: usize,
    pub t_n: f64,
    pub ep: f64,
    pub term: f64,
}

#[derive(Clone, Debug)]
pub struct BesovSumReport {
    /// The seminorm: (sum of terms)^(1/p).
    pub seminorm: f64,
    pub terms: Vec<BesovTerm>,
    pub sampled: bool,
}

impl BesovSumReport {
    /// Partial sums of the term sequence (for divergence evidence).
    pub fn partial_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.terms
            .iter()
            .map(|t| {
                acc += t.term;
                acc
            })
            .collect()
    }
}

/// Scale used at index `n`: `t_n = (2/eps) e^((1-n) eps)`, for which the
/// prefix level is exactly `n`.
pub fn besov_scale(w: &MetricWeights, n: usize) -> f64 {
    (2.0 / w.epsilon) * ((1.0 - n as f64) * w.epsilon).exp()
}

/// Sum-form Besov seminorm
/// `( sum_n (E_p(f, t_n) / t_n^theta)^p )^(1/p)` over `n = 0..=range`.
pub fn besov_seminorm_sum(
    f: &BoundaryFunction,
    w: &MetricWeights,
    params: &BesovParams,
) -> Result<BesovSumReport> {
    let range = params.range.unwrap_or(f.resolution);
    let mut terms = Vec::with_capacity(range + 1);
    let mut total = 0.0;
    let mut sampled = false;
    for n in 0..=range {
        let t_n = besov_scale(w, n);
        let rep = ep_modulus_report(f, w, t_n, params.p)?;
        sampled |= rep.sampled;
        let term = (rep.value / t_n.powf(params.theta)).powf(params.p);
        total += term;
        terms.push(BesovTerm {
            n,
            t_n,
            ep: rep.value,
            term,
        });
    }
    Ok(BesovSumReport {
        seminorm: total.powf(1.0 / params.p),
        terms,
        sampled,
    })
}

/// Double-integral-form Besov seminorm
/// `( sum over cell pairs |f_i - f_j|^p / (d^(theta p) nu(B(zeta_i, d))) dnu dnu )^(1/p)`,
/// aggregated by split level.
pub fn besov_seminorm_double_integral(
    f: &BoundaryFunction,
    w: &MetricWeights,
    params: &BesovParams,
) -> Result<f64> {
    let m = f.resolution;
    let kf = f.k as f64;
    // Pair sums at consecutive prefix levels; split-exactly-s sums by
    // differencing.
    let mut level_sums = Vec::with_capacity(m + 1);
    for s in 0..=m {
        level_sums.push(pair_power_sum_at_level(f, s, params.p).0);
    }
    let mut total = 0.0;
    for s in 0..m {
        let exact_split = level_sums[s] - level_sums[s + 1];
        if exact_split <= 0.0 {
            continue;
        }
        let d = boundary::distance_at_split(w, s);
        // nu(B(zeta, d)) at distance d = split-s scale is K^(-s); each cell
        // carries mass K^(-m).
        let weight = d.powf(-params.theta * params.p) * kf.powi(s as i32) * kf.powi(-2 * m as i32);
        total += weight * exact_split;
    }
    Ok(total.powf(1.0 / params.p))
}

/// Cellwise mean over depth-`n` cells.
pub fn layer_average(f: &BoundaryFunction, n: usize) -> Result<BoundaryFunction> {
    if n > f.resolution {
        return Err(Error::Parameter(format!(
            "layer {n} exceeds resolution {}",
            f.resolution
        )));
    }
    let block = f.k.pow((f.resolution - n) as u32);
    let values: Vec<f64> = f
        .values
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect();
    BoundaryFunction::from_values(f.k, n, values)
}

/// Resolution-limited Hölder seminorm: max over distinct cell pairs of
/// `|f_i - f_j| / d^alpha`, aggregated by split level.
pub fn holder_seminorm(f: &BoundaryFunction, w: &MetricWeights, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha = {alpha} must be > 0")));
    }
    let m = f.resolution;
    let k = f.k;
    let mut maxv = f.values.clone();
    let mut minv = f.values.clone();
    let mut best = 0.0f64;
    for s in (0..m).rev() {
        let nodes = k.pow(s as u32);
        let mut nmax = Vec::with_capacity(nodes);
        let mut nmin = Vec::with_capacity(nodes);
        let mut cross_max = 0.0f64;
        for node in 0..nodes {
            let ms = &maxv[node * k..(node + 1) * k];
            let mn = &minv[node * k..(node + 1) * k];
            // Max over child pairs c != c' of ms[c] - mn[c'].
            let (mut i_max, mut i_min) = (0usize, 0usize);
            for c in 1..k {
                if ms[c] > ms[i_max] {
                    i_max = c;
                }
                if mn[c] < mn[i_min] {
                    i_min = c;
                }
            }
            let cross = if i_max != i_min {
                ms[i_max] - mn[i_min]
            } else {
                let mut second_max = f64::NEG_INFINITY;
                let mut second_min = f64::INFINITY;
                for c in 0..k {
                    if c != i_max && ms[c] > second_max {
                        second_max = ms[c];
                    }
                    if c != i_min && mn[c] < second_min {
                        second_min = mn[c];
                    }
                }
                (ms[i_max] - second_min).max(second_max - mn[i_min])
            };
            cross_max = cross_max.max(cross);
            nmax.push(ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            nmin.push(mn.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        let d = boundary::distance_at_split(w, s);
        best = best.max(cross_max / d.powf(alpha));
        maxv = nmax;
        minv = nmin;
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Tree functions and gradients.

fn level_offsets(k: usize, depth: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(depth + 2);
    let mut acc = 0usize;
    let mut width = 1usize;
    for _ in 0..=depth + 1 {
        offsets.push(acc);
        acc += width;
        width *= k;
    }
    offsets
}

/// A real value per vertex of a regular tree up to depth `N`; linear on each
/// edge with respect to the uniformizing metric.
#[derive(Clone, Debug)]
pub struct TreeFunction {
    k: usize,
    depth: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl TreeFunction {
    pub fn from_fn(k: usize, depth: usize, f: impl Fn(&VertexId) -> f64) -> Self {
        let offsets = level_offsets(k, depth);
        let total = offsets[depth + 1];
        let mut values = Vec::with_capacity(total);
        let mut level = vec![VertexId::root()];
        for lvl in 0..=depth {
            for v in &level {
                values.push(f(v));
            }
            if lvl < depth {
                let mut next = Vec::with_capacity(level.len() * k);
                for v in &level {
                    for d in 0..k {
                        next.push(v.child(d as Digit));
                    }
                }
                level = next;
            }
        }
        TreeFunction {
            k,
            depth,
            offsets,
            values,
        }
    }

    pub fn constant(k: usize, depth: usize, c: f64) -> Self {
        Self::from_fn(k, depth, |_| c)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn index(&self, v: &VertexId) -> usize {
        self.offsets[v.level()] + digits_to_index(v.digits(), self.k)
    }

    pub fn value(&self, v: &VertexId) -> f64 {
        self.values[self.index(v)]
    }

    pub fn set_value(&mut self, v: &VertexId, x: f64) {
        let i = self.index(v);
        self.values[i] = x;
    }

    /// Evaluate on the edge ending at vertex `v` (level >= 1) at level
    /// coordinate `lvl` in `[|v|-1, |v|]`, linearly in the metric.
    pub fn eval_on_edge(&self, w: &MetricWeights, v: &VertexId, lvl: f64) -> f64 {
        let m = (v.level() - 1) as f64;
        let u_par = self.value(&v.parent().expect("edge vertex has a parent"));
        let u_v = self.value(v);
        let num = w.band_integral_metric(m, lvl);
        let den = w.band_integral_metric(m, m + 1.0);
        u_par + (u_v - u_par) * (num / den)
    }
}

/// A nonnegative constant per edge, indexed by the edge's lower endpoint
/// (levels 1..=N).
#[derive(Clone, Debug)]
pub struct EdgeGradient {
    k: usize,
    depth: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl EdgeGradient {
    pub fn from_fn(k: usize, depth: usize, f: impl Fn(&VertexId) -> f64) -> Self {
        let offsets = level_offsets(k, depth);
        let total = offsets[depth + 1];
        let mut values = Vec::with_capacity(total);
        let mut level = vec![VertexId::root()];
        for lvl in 0..=depth {
            for v in &level {
                values.push(if lvl == 0 { 0.0 } else { f(v) });
            }
            if lvl < depth {
                let mut next = Vec::with_capacity(level.len() * k);
                for v in &level {
                    for d in 0..k {
                        next.push(v.child(d as Digit));
                    }
                }
                level = next;
            }
        }
        EdgeGradient {
            k,
            depth,
            offsets,
            values,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Value on the edge ending at `v` (level >= 1).
    pub fn value(&self, v: &VertexId) -> f64 {
        self.values[self.offsets[v.level()] + digits_to_index(v.digits(), self.k)]
    }
}

/// Minimal upper gradient of a tree function: on the edge `[x, y]`,
/// `g = |u(x) - u(y)| / d_X(x, y)`.
pub fn minimal_upper_gradient(u: &TreeFunction, w: &MetricWeights) -> EdgeGradient {
    EdgeGradient::from_fn(u.k, u.depth, |v| {
        let m = (v.level() - 1) as f64;
        let d = w.band_integral_metric(m, m + 1.0);
        (u.value(v) - u.value(&v.parent().unwrap())).abs() / d
    })
}

/// `sum over edges of g^p int e^(-beta t) dt` (exact per-edge integral).
pub fn newtonian_energy(g: &EdgeGradient, w: &MetricWeights, p: f64) -> Result<f64> {
    w.require_finite_measure(g.k)?;
    let mut total = 0.0;
    let mut level = vec![VertexId::root()];
    for lvl in 0..g.depth {
        let mut next = Vec::with_capacity(level.len() * g.k);
        for v in &level {
            for d in 0..g.k {
                next.push(v.child(d as Digit));
            }
        }
        let band = w.band_integral(lvl as f64, lvl as f64 + 1.0);
        for c in &next {
            let gv = g.value(c);
            if gv != 0.0 {
                total += gv.powf(p) * band;
            }
        }
        level = next;
    }
    Ok(total)
}

/// `L^p(mu)` norm of a tree function (16-point Gauss per edge).
pub fn newtonian_lp_norm(u: &TreeFunction, w: &MetricWeights, p: f64) -> Result<f64> {
    w.require_finite_measure(u.k)?;
    let mut total = 0.0;
    let mut level = vec![VertexId::root()];
    for lvl in 0..u.depth {
        let mut next = Vec::with_capacity(level.len() * u.k);
        for v in &level {
            for d in 0..u.k {
                next.push(v.child(d as Digit));
            }
        }
        for c in &next {
            total += gauss_weighted(w, lvl as f64, lvl as f64 + 1.0, |t| {
                u.eval_on_edge(w, c, t).abs().powf(p)
            });
        }
        level = next;
    }
    Ok(total.powf(1.0 / p))
}

/// Newtonian norm `(||u||_p^p + energy(g_u))^(1/p)` with the minimal upper
/// gradient.
pub fn newtonian_norm(u: &TreeFunction, w: &MetricWeights, p: f64) -> Result<f64> {
    let g = minimal_upper_gradient(u, w);
    let lp = newtonian_lp_norm(u, w, p)?;
    let en = newtonian_energy(&g, w, p)?;
    Ok((lp.powf(p) + en).powf(1.0 / p))
}

// ---------------------------------------------------------------------------
// Named generators.

/// Boundary power function `f(xi) = d(xi, zeta0)^alpha`; within the cell of
/// `zeta0` the below-resolution distance is set to the cell scale
/// `(2/eps) e^(-eps m)`.
pub fn power_function(
    k: usize,
    resolution: usize,
    w: &MetricWeights,
    zeta0: &BoundaryAddress,
    alpha: f64,
    p: f64,
) -> Result<BoundaryFunction> {
    let q = (k as f64).ln() / w.epsilon;
    if !(alpha > -q / p) {
        return Err(Error::Regime {
            what: "alpha".into(),
            value: alpha,
            lo: -q / p,
            hi: f64::INFINITY,
            closed: ")",
        });
    }
    if zeta0.level() < resolution {
        return Err(Error::Parameter(
            "zeta0 must be at least as deep as the resolution".into(),
        ));
    }
    let z = &zeta0.digits()[..resolution];
    Ok(BoundaryFunction::from_fn(k, resolution, |digits| {
        let split = digits.iter().zip(z.iter()).take_while(|(a, b)| a == b).count();
        let d = if split == resolution {
            boundary::distance_at_split(w, resolution)
        } else {
            boundary::distance_at_split(w, split)
        };
        d.powf(alpha)
    }))
}

/// Tree function `f(x) = log(|x| + 1)` with a per-edge constant upper
/// gradient dominating the pointwise bound `e^(eps t)/(t+1)` on each edge.
pub fn log_function(k: usize, depth: usize, w: &MetricWeights) -> (TreeFunction, EdgeGradient) {
    let u = TreeFunction::from_fn(k, depth, |v| ((v.level() + 1) as f64).ln());
    let eps = w.epsilon;
    let g = EdgeGradient::from_fn(k, depth, |v| {
        let m = (v.level() - 1) as f64;
        // e^(eps t)/(t+1) is evaluated at both edge ends; it is monotone on
        // the edge, so the endpoint max dominates.
        ((eps * m).exp() / (m + 1.0)).max((eps * (m + 1.0)).exp() / (m + 2.0))
    });
    (u, g)
}

/// Per-band energy terms of the analytic log-function gradient
/// `g(t) = e^(eps t)/(t+1)` over the full tree (`K^(j+1)` edges in band `j`):
/// partial sums at the requested depths.
pub fn log_energy_partial_sums(
    k: usize,
    w: &MetricWeights,
    p: f64,
    depths: &[usize],
) -> Vec<f64> {
    let max_d = depths.iter().copied().max().unwrap_or(0);
    let eps = w.epsilon;
    let kf = k as f64;
    let mut acc = 0.0;
    let mut partial = vec![0.0; max_d + 1];
    for j in 0..max_d {
        let term = kf.powi(j as i32 + 1)
            * gauss_weighted(w, j as f64, j as f64 + 1.0, |t| {
                ((eps * t).exp() / (t + 1.0)).powf(p)
            });
        acc += term;
        partial[j + 1] = acc;
    }
    depths.iter().map(|&d| partial[d]).collect()
}

/// Closed-form geometric bound for the energy beyond `from_depth`; infinite
/// when the geometric ratio `K e^(p eps - beta)` is >= 1.
pub fn log_energy_tail_bound(k: usize, w: &MetricWeights, p: f64, from_depth: usize) -> f64 {
    let ratio = k as f64 * (p * w.epsilon - w.beta).exp();
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    let d = from_depth as f64;
    let c = (p * w.epsilon - w.beta).exp().max(1.0);
    // term_j <= K^(j+1) e^((p eps - beta) j) c / (j+1)^p  for j >= from_depth.
    k as f64 * c * ratio.powf(d) / (d + 1.0).powf(p) / (1.0 - ratio)
}

/// Admissible interval for the recursive sharpness function's exponent:
/// `gamma in (max(eps (1 - theta), 0), min(eps, (beta - log K)/p))`.
pub fn recursive_gamma_interval(
    k: usize,
    w: &MetricWeights,
    p: f64,
    theta: f64,
) -> (f64, f64) {
    let lo = (w.epsilon * (1.0 - theta)).max(0.0);
    let hi = w.epsilon.min((w.beta - (k as f64).ln()) / p);
    (lo, hi)
}

/// The recursive sharpness function: `f(root) = 0`,
/// `f(child0(x)) = f(x) + e^((gamma - eps)|x|)`, other children copy the
/// parent value; its upper gradient is `eps e^(gamma |x|)/(1 - e^(-eps))` on
/// the chosen edges and 0 elsewhere.
pub fn recursive_gamma_function(
    k: usize,
    depth: usize,
    w: &MetricWeights,
    gamma: f64,
) -> Result<(TreeFunction, EdgeGradient)> {
    if !(gamma > 0.0 && gamma < w.epsilon) {
        return Err(Error::Regime {
            what: "gamma".into(),
            value: gamma,
            lo: 0.0,
            hi: w.epsilon,
            closed: ")",
        });
    }
    let eps = w.epsilon;
    let u = TreeFunction::from_fn(k, depth, |v| {
        v.digits()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(lvl, _)| ((gamma - eps) * lvl as f64).exp())
            .sum()
    });
    let g = EdgeGradient::from_fn(k, depth, |v| {
        if *v.digits().last().unwrap() == 0 {
            let parent_level = (v.level() - 1) as f64;
            eps * (gamma * parent_level).exp() / (1.0 - (-eps).exp())
        } else {
            0.0
        }
    });
    Ok((u, g))
}

/// Boundary function with i.i.d. uniform `[-1, 1]` cell values keyed by the
/// seed and cell address.
pub fn random_boundary_function(k: usize, resolution: usize, seed: u64) -> BoundaryFunction {
    BoundaryFunction::from_fn(k, resolution, |digits| {
        2.0 * address_uniform(seed, digits) - 1.0
    })
}

/// Random tree function with per-edge slopes i.i.d. uniform `[-1, 1]`
/// (so the minimal upper gradient is bounded by 1 and the function has a
/// depth-stable profile).
pub fn random_lipschitz_tree_function(
    k: usize,
    depth: usize,
    w: &MetricWeights,
    seed: u64,
) -> TreeFunction {
    TreeFunction::from_fn(k, depth, |v| {
        let mut acc = 0.0;
        let mut prefix: Vec<Digit> = Vec::with_capacity(v.level());
        for (lvl, &d) in v.digits().iter().enumerate() {
            prefix.push(d);
            let slope = 2.0 * address_uniform(seed, &prefix) - 1.0;
            acc += slope * w.band_integral_metric(lvl as f64, lvl as f64 + 1.0);
        }
        acc
    })
}

/// Divergence verdict from the last five increments of a positive series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Convergent,
    Divergent,
    Borderline,
}

/// Applies the declared numerical rule: geometric factor of the last five
/// increments `< 0.9` => convergent, `>= 0.99` => divergent, else borderline.
pub fn divergence_verdict(increments: &[f64]) -> Verdict {
    let tail: Vec<f64> = increments
        .iter()
        .copied()
        .filter(|x| *x > 0.0)
        .collect();
    if tail.len() < 2 {
        return Verdict::Convergent;
    }
    let use_n = tail.len().min(6);
    let last = &tail[tail.len() - use_n..];
    let factor = (last[last.len() - 1] / last[0]).powf(1.0 / (last.len() - 1) as f64);
    if factor < 0.9 {
        Verdict::Convergent
    } else if factor >= 0.99 {
        Verdict::Divergent
    } else {
        Verdict::Borderline
    }
}
