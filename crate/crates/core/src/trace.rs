//! Trace and extension operators between Newtonian functions on a regular
//! tree and Besov functions on its boundary, with the sharp smoothness
//! exponent and its probes.

use crate::error::{Error, Result};
use crate::functions::{
    besov_seminorm_sum, besov_scale, divergence_verdict, ep_modulus, holder_seminorm,
    layer_average, minimal_upper_gradient, newtonian_energy, recursive_gamma_function,
    BesovParams, BesovTerm, BoundaryFunction, EdgeGradient, TreeFunction, Verdict,
};
use crate::metric::MetricWeights;
use crate::tree::{Digit, VertexId};

/// Sharp smoothness exponent `theta = 1 - (beta - log K)/(p eps)`.
pub fn sharp_theta(k: usize, w: &MetricWeights, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p = {p} must be >= 1")));
    }
    w.require_finite_measure(k)?;
    Ok(1.0 - (w.beta - (k as f64).ln()) / (p * w.epsilon))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaClass {
    /// `0 < theta <= sharp`: the trace operator is bounded.
    TraceAdmissible,
    /// `theta >= sharp` and `theta > 0`: the extension operator is bounded.
    ExtensionAdmissible,
    /// Both of the above: `theta` equals the sharp value.
    Sharp,
    /// `theta <= 0`: no trace space.
    NoTraceSpace,
}

pub fn classify_theta(k: usize, w: &MetricWeights, p: f64, theta: f64) -> Result<ThetaClass> {
    let sharp = sharp_theta(k, w, p)?;
    Ok(if theta <= 0.0 {
        ThetaClass::NoTraceSpace
    } else if (theta - sharp).abs() < 1e-12 {
        ThetaClass::Sharp
    } else if theta < sharp {
        ThetaClass::TraceAdmissible
    } else {
        ThetaClass::ExtensionAdmissible
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TraceParams {
    pub p: f64,
    pub theta: f64,
    pub sharp: f64,
}

impl TraceParams {
    /// Parameters at the sharp exponent.
    pub fn sharp(k: usize, w: &MetricWeights, p: f64) -> Result<Self> {
        let sharp = sharp_theta(k, w, p)?;
        if sharp <= 0.0 {
            return Err(Error::Regime {
                what: "sharp theta".into(),
                value: sharp,
                lo: 0.0,
                hi: 1.0,
                closed: "]",
            });
        }
        Ok(TraceParams {
            p,
            theta: sharp,
            sharp,
        })
    }

    pub fn with_theta(k: usize, w: &MetricWeights, p: f64, theta: f64) -> Result<Self> {
        let sharp = sharp_theta(k, w, p)?;
        Ok(TraceParams { p, theta, sharp })
    }

    pub fn require_trace_admissible(&self) -> Result<()> {
        if self.theta > 0.0 && self.theta <= self.sharp + 1e-12 {
            Ok(())
        } else {
            Err(Error::Regime {
                what: "theta (trace)".into(),
                value: self.theta,
                lo: 0.0,
                hi: self.sharp,
                closed: "]",
            })
        }
    }

    pub fn require_extension_admissible(&self) -> Result<()> {
        if self.theta > 0.0 && self.theta >= self.sharp - 1e-12 {
            Ok(())
        } else {
            Err(Error::Regime {
                what: "theta (extension)".into(),
                value: self.theta,
                lo: self.sharp.max(0.0),
                hi: f64::INFINITY,
                closed: ")",
            })
        }
    }
}

/// Trace of a tree function: value on a depth-`N` boundary cell is the value
/// at that cell's level-`N` vertex.
pub fn trace(u: &TreeFunction) -> BoundaryFunction {
    BoundaryFunction::from_fn(u.k(), u.depth(), |digits| {
        u.value(&VertexId::from_digits(digits.to_vec()))
    })
}

/// Extension of a boundary function: vertex value is the exact mean of `f`
/// over the cylinder below the vertex; the returned gradient is the minimal
/// upper gradient of the edge-linear interpolant.
pub fn extend(
    f: &BoundaryFunction,
    w: &MetricWeights,
    depth: usize,
) -> Result<(TreeFunction, EdgeGradient)> {
    if f.resolution() > depth {
        return Err(Error::Parameter(format!(
            "resolution {} exceeds tree depth {depth}",
            f.resolution()
        )));
    }
    let k = f.k();
    let m = f.resolution();
    // Cell means at every level 0..=m by bottom-up averaging.
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    levels.push(f.values().to_vec());
    for _ in 0..m {
        let prev = levels.last().unwrap();
        let next: Vec<f64> = prev
            .chunks(k)
            .map(|c| c.iter().sum::<f64>() / k as f64)
            .collect();
        levels.push(next);
    }
    levels.reverse(); // levels[l] = means at level l, for l <= m
    let u = TreeFunction::from_fn(k, depth, |v| {
        let l = v.level().min(m);
        levels[l][digits_index(&v.digits()[..l], k)]
    });
    let g = minimal_upper_gradient(&u, w);
    Ok((u, g))
}

fn digits_index(digits: &[Digit], k: usize) -> usize {
    digits.iter().fold(0usize, |acc, &d| acc * k + d as usize)
}

#[derive(Clone, Copy, Debug)]
pub struct NormRatio {
    /// Numerator / denominator; `NaN` when both vanish.
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// True when the input is constant, i.e. the ratio is the flagged 0/0.
    pub constant_input: bool,
}

/// `||Tr u||_{B^theta_{p,p}} / ||g_u||_{L^p}`.
pub fn trace_norm_ratio(
    u: &TreeFunction,
    w: &MetricWeights,
    params: &TraceParams,
) -> Result<NormRatio> {
    params.require_trace_admissible()?;
    let f = trace(u);
    let besov = BesovParams::new(params.p, params.theta)?;
    let num = besov_seminorm_sum(&f, w, &besov)?.seminorm;
    let g = minimal_upper_gradient(u, w);
    let den = newtonian_energy(&g, w, params.p)?.powf(1.0 / params.p);
    Ok(make_ratio(num, den))
}

/// `||g_{Ext f}||_{L^p} / ||f||_{B^theta_{p,p}}`.
pub fn extension_norm_ratio(
    f: &BoundaryFunction,
    w: &MetricWeights,
    params: &TraceParams,
    depth: usize,
) -> Result<NormRatio> {
    params.require_extension_admissible()?;
    let (_, g) = extend(f, w, depth)?;
    let num = newtonian_energy(&g, w, params.p)?.powf(1.0 / params.p);
    let besov = BesovParams::new(params.p, params.theta)?;
    let den = besov_seminorm_sum(f, w, &besov)?.seminorm;
    Ok(make_ratio(num, den))
}

fn make_ratio(num: f64, den: f64) -> NormRatio {
    let constant = num == 0.0 && den == 0.0;
    NormRatio {
        ratio: if constant { f64::NAN } else { num / den },
        numerator: num,
        denominator: den,
        constant_input: constant,
    }
}

/// Per-level weight `e^((eps p - beta) n) r_n^(theta p - Q)` with
/// `r_n = e^(-n eps)` from the extension norm estimate; at the sharp
/// exponent the sequence is constant.
pub fn extension_weight_sequence(
    k: usize,
    w: &MetricWeights,
    p: f64,
    theta: f64,
    levels: usize,
) -> Vec<f64> {
    let q = (k as f64).ln() / w.epsilon;
    (0..levels)
        .map(|n| {
            let n = n as f64;
            ((w.epsilon * p - w.beta) * n).exp() * (-n * w.epsilon * (theta * p - q)).exp()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SharpnessReport {
    pub gamma: f64,
    pub theta: f64,
    /// Boundary from the self-similar recursive function at the probe depth.
    pub depth: usize,
    /// Besov terms per scale index.
    pub terms: Vec<BesovTerm>,
    pub partial_sums: Vec<f64>,
    /// Fitted slope of `log E_p(f, t)` against `log t`.
    pub slope: f64,
    /// Expected slope `(eps - gamma)/eps`.
    pub expected_slope: f64,
    pub fit_residual: f64,
    pub verdict: Verdict,
}

/// Probes the sharpness of the trace exponent with the self-similar
/// recursive function of exponent `gamma`: fits the decay law of
/// `E_p(f, t)` and classifies the Besov partial sums at `theta`.
pub fn sharpness_probe_trace2(
    k: usize,
    depth: usize,
    w: &MetricWeights,
    p: f64,
    theta: f64,
    gamma: f64,
) -> Result<SharpnessReport> {
    let (u, _) = recursive_gamma_function(k, depth, w, gamma)?;
    let f = trace(&u);
    let besov = BesovParams::new(p, theta)?.with_range(depth.saturating_sub(1));
    let report = besov_seminorm_sum(&f, w, &besov)?;
    let partial_sums = report.partial_sums();
    // Slope fit over interior scales (skip n = 0 where the whole boundary is
    // one ball, and the last scales where resolution truncation bites).
    let lo = 1usize;
    let hi = depth.saturating_sub(3).max(lo + 2);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in lo..hi {
        let t = besov_scale(w, n);
        let e = ep_modulus(&f, w, t, p)?;
        if e > 0.0 {
            xs.push(t.ln());
            ys.push(e.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            got: xs.len(),
        });
    }
    let (slope, residual) = least_squares_slope(&xs, &ys);
    // Judge convergence on interior scales only: the deepest scales are
    // damped by resolution truncation and would bias the verdict.
    let increments: Vec<f64> = report.terms[1..hi].iter().map(|t| t.term).collect();
    Ok(SharpnessReport {
        gamma,
        theta,
        depth,
        terms: report.terms,
        partial_sums,
        slope,
        expected_slope: (w.epsilon - gamma) / w.epsilon,
        fit_residual: residual,
        verdict: divergence_verdict(&increments),
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    (slope, (rss / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HolderCase {
    /// `Q < 1`, `theta >= (Q-1)/p + 1`, `alpha = 1 - 1/p`.
    SubunitDimension,
    /// `Q/p < theta <= (Q-1)/p + 1`, `theta < 1`, `alpha = theta - Q/p`.
    Intermediate,
    /// `Q >= 1`, `theta >= 1`, any `0 < alpha < 1 - Q/p` (needs `p > Q`).
    HighSmoothness,
    NotApplicable,
}

#[derive(Clone, Debug)]
pub struct HolderReport {
    pub case: HolderCase,
    pub alpha: f64,
    /// Hölder seminorm of the boundary function at its resolution.
    pub seminorm: f64,
    /// Seminorms of the layer averages at coarser resolutions (stability).
    pub seminorm_by_level: Vec<(usize, f64)>,
    pub besov_seminorm: f64,
    pub ratio: f64,
}

/// Classifies `(p, theta)` against the three Hölder embedding cases and
/// measures the Hölder seminorm of the finite-resolution representative.
pub fn holder_embedding_check(
    f: &BoundaryFunction,
    w: &MetricWeights,
    p: f64,
    theta: f64,
) -> Result<HolderReport> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p = {p} must be > 1")));
    }
    let k = f.k();
    let q = (k as f64).ln() / w.epsilon;
    let (case, alpha) = if q < 1.0 && theta >= (q - 1.0) / p + 1.0 {
        (HolderCase::SubunitDimension, 1.0 - 1.0 / p)
    } else if theta > q / p && theta <= (q - 1.0) / p + 1.0 && theta < 1.0 {
        (HolderCase::Intermediate, theta - q / p)
    } else if q >= 1.0 && theta >= 1.0 && p > q {
        (HolderCase::HighSmoothness, 0.5 * (1.0 - q / p))
    } else {
        (HolderCase::NotApplicable, f64::NAN)
    };
    if case == HolderCase::NotApplicable {
        return Ok(HolderReport {
            case,
            alpha,
            seminorm: f64::NAN,
            seminorm_by_level: Vec::new(),
            besov_seminorm: f64::NAN,
            ratio: f64::NAN,
        });
    }
    let seminorm = holder_seminorm(f, w, alpha)?;
    let mut seminorm_by_level = Vec::new();
    let m = f.resolution();
    for n in (1..=m).step_by(((m / 6).max(1)).max(1)) {
        let fn_ = layer_average(f, n)?;
        seminorm_by_level.push((n, holder_seminorm(&fn_, w, alpha)?));
    }
    let besov = besov_seminorm_sum(f, w, &BesovParams::new(p, theta)?)?.seminorm;
    let ratio = if besov == 0.0 && seminorm == 0.0 {
        f64::NAN
    } else {
        seminorm / besov
    };
    Ok(HolderReport {
        case,
        alpha,
        seminorm,
        seminorm_by_level,
        besov_seminorm: besov,
        ratio,
    })
}
