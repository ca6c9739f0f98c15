//! Batch driver for the tree-geometry experiments: each subcommand loads a
//! flat JSON config, runs a deterministic sweep, and writes CSV tables whose
//! rows carry the config hash.  Exit codes: 0 success, 2 validation error,
//! 3 assertion failure (a verified property was violated by the run).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cantor_trees::boundary::ahlfors_regularity_report;
use cantor_trees::functions::{
    besov_seminorm_sum, minimal_upper_gradient, random_boundary_function,
    random_lipschitz_tree_function, BesovParams,
};
use cantor_trees::maps::{
    envelope_violations, example_binary_ternary, example_boundary_map, extend_qs_to_tree, fit_eta,
    qs_check, rigidity_check, rqi_check, snowflake_map, RigidityVerdict, TripleSet, VertexMap,
};
use cantor_trees::metric::{
    ball_measure, doubling_ratio, poincare_sweep, MetricWeights, TailMode, TreePoint,
};
use cantor_trees::trace::{extension_norm_ratio, trace_norm_ratio, TraceParams};
use cantor_trees::tree::{Digit, TreeSpec, VertexId};

#[derive(Parser)]
#[command(name = "cantor-trees", version, about = "Experiment driver for weighted-tree geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Worker thread count (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ball measures, doubling ratios, and the Ahlfors regularity sweep.
    Measure(RunArgs),
    /// Fitted 1-Poincaré constants over seeded functions and balls.
    Poincare(RunArgs),
    /// Smoothness seminorm scale decomposition of a seeded function.
    Besov(RunArgs),
    /// Trace/extension norm ratios against depth at a fixed exponent.
    Trace(RunArgs),
    /// Boundary-map distortion fits and the induced tree-map envelope.
    Maps(RunArgs),
    /// Isometry rigidity verdict for a named vertex map.
    Rigidity(RunArgs),
    /// Field-wise relative differences between two runs of one experiment.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
    },
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    experiment: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    depth: Option<usize>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    samples: Option<usize>,
    /// Map family for `maps` / `rigidity`:
    /// snowflake | collapse | identity | rerooted | collapse-inverse.
    #[serde(default)]
    map: Option<String>,
    #[serde(default)]
    epsilon_y: Option<f64>,
}

enum Failure {
    Validation(String),
    Assertion(String),
    Io(String),
}

type RunResult<T> = Result<T, Failure>;

impl From<cantor_trees::Error> for Failure {
    fn from(e: cantor_trees::Error) -> Self {
        match e {
            cantor_trees::Error::NotAnUpperGradient(m) => Failure::Assertion(m),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Measure(a) => run_experiment(a, "measure", measure),
        Command::Poincare(a) => run_experiment(a, "poincare", poincare),
        Command::Besov(a) => run_experiment(a, "besov", besov),
        Command::Trace(a) => run_experiment(a, "trace", trace_ratios),
        Command::Maps(a) => run_experiment(a, "maps", maps),
        Command::Rigidity(a) => run_experiment(a, "rigidity", rigidity),
        Command::Compare { run_a, run_b } => compare(&run_a, &run_b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg, code) = match f {
                Failure::Validation(m) => ("validation", m, 2),
                Failure::Assertion(m) => ("assertion", m, 3),
                Failure::Io(m) => ("io", m, 2),
            };
            eprintln!("{{\"error\":\"{kind}\",\"message\":{:?}}}", msg);
            ExitCode::from(code)
        }
    }
}

fn run_experiment(
    args: RunArgs,
    name: &str,
    body: fn(&Config, &Ctx) -> RunResult<()>,
) -> RunResult<()> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    let raw = std::fs::read_to_string(&args.config)?;
    let mut cfg: Config = serde_json::from_str(&raw)
        .map_err(|e| Failure::Validation(format!("bad config: {e}")))?;
    if cfg.experiment != name {
        return Err(Failure::Validation(format!(
            "config is for experiment '{}', subcommand is '{name}'",
            cfg.experiment
        )));
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = args.depth {
        cfg.depth = Some(d);
    }
    std::fs::create_dir_all(&args.out)?;
    let canonical = serde_json::to_string(&cfg).expect("config serializes");
    let ctx = Ctx {
        out: args.out,
        hash: config_hash(&canonical),
        experiment: name.to_string(),
    };
    body(&cfg, &ctx)
}

struct Ctx {
    out: PathBuf,
    hash: String,
    experiment: String,
}

impl Ctx {
    fn write_csv(&self, file: &str, header: &str, rows: &[Vec<String>]) -> RunResult<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment={} config={}", self.experiment, self.hash);
        let _ = writeln!(s, "config_hash,{header}");
        for row in rows {
            let _ = writeln!(s, "{},{}", self.hash, row.join(","));
        }
        std::fs::write(self.out.join(file), s)?;
        Ok(())
    }
}

fn config_hash(canonical: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// 17 significant digits, deterministic.
fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn need<T: Copy>(v: Option<T>, what: &str) -> RunResult<T> {
    v.ok_or_else(|| Failure::Validation(format!("missing config field '{what}'")))
}

fn need_seed(cfg: &Config) -> RunResult<u64> {
    cfg.seed
        .ok_or_else(|| Failure::Validation("sampled experiment requires a seed".into()))
}

fn need_samples(cfg: &Config) -> RunResult<usize> {
    match cfg.samples {
        Some(0) | None => Err(Failure::Validation(
            "sample count must be a positive integer".into(),
        )),
        Some(n) => Ok(n),
    }
}

// ---------------------------------------------------------------------------

fn measure(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let k = need(cfg.k, "k")?;
    let n = need(cfg.depth, "depth")?;
    let eps = need(cfg.epsilon, "epsilon")?;
    let beta = need(cfg.beta, "beta")?;
    let w = MetricWeights::new(eps, beta)?;
    let tree = TreeSpec::regular(k, n)?;

    let mut rows = Vec::new();
    for lvl in 0..=n {
        let x = TreePoint::at_vertex(&VertexId::from_digits(vec![0; lvl]));
        let r0 = (-eps * lvl as f64).exp() / eps;
        let mut radii: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|t| t * r0).collect();
        radii.extend([0.1, 0.5, 0.99].iter().map(|t| t * w.diameter()));
        for r in radii {
            if 2.0 * r > 2.0 * w.diameter() {
                continue;
            }
            let b = ball_measure(&tree, &w, &x, r, TailMode::Truncate)?;
            let q = doubling_ratio(&tree, &w, &x, r, TailMode::Truncate)?;
            rows.push(vec![
                lvl.to_string(),
                f17(r),
                f17(b.measure),
                f17(q),
            ]);
        }
    }
    ctx.write_csv(
        "measure_doubling.csv",
        "level,radius,ball_measure,doubling_ratio",
        &rows,
    )?;

    let centers = vec![VertexId::from_digits(vec![0; n])];
    let mut radii = Vec::new();
    for band in 1..n.min(11) {
        for f in [0.01, 0.25, 0.5, 0.75, 0.99] {
            radii.push((2.0 / eps) * (-eps * (band as f64 + f)).exp());
        }
    }
    let rep = ahlfors_regularity_report(&tree, &w, &centers, &radii)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                f17(r.radius),
                r.k.to_string(),
                f17(r.nu_ball),
                f17(r.ratio),
            ]
        })
        .collect();
    ctx.write_csv(
        "measure_ahlfors.csv",
        "radius,level,cell_measure,ratio",
        &rows,
    )
}

// ---------------------------------------------------------------------------

fn poincare(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let k = need(cfg.k, "k")?;
    let n = need(cfg.depth, "depth")?;
    let w = MetricWeights::new(need(cfg.epsilon, "epsilon")?, need(cfg.beta, "beta")?)?;
    let seed = need_seed(cfg)?;
    let count = need_samples(cfg)?;
    let tree = TreeSpec::regular(k, n)?;

    let funcs: Vec<_> = (0..count as u64)
        .map(|s| {
            let u = random_lipschitz_tree_function(k, n, &w, seed ^ splitmix64(s));
            let g = minimal_upper_gradient(&u, &w);
            (u, g)
        })
        .collect();
    let mut rng = splitmix64(seed ^ 0xBA11);
    let mut rows = Vec::new();
    for ball in 0..count {
        rng = splitmix64(rng);
        let lvl = 1 + (rng % (n as u64 - 1).max(1)) as usize;
        rng = splitmix64(rng);
        let digits: Vec<Digit> = (0..lvl)
            .map(|i| ((splitmix64(rng ^ i as u64)) % k as u64) as Digit)
            .collect();
        rng = splitmix64(rng);
        let frac = 0.1 + 0.8 * ((rng >> 11) as f64 / (1u64 << 53) as f64);
        rng = splitmix64(rng);
        let r = w.diameter() * (0.05 + 0.45 * ((rng >> 11) as f64 / (1u64 << 53) as f64));
        let x = TreePoint::on_edge(&VertexId::from_digits(digits), frac)?;
        let reps = poincare_sweep(&tree, &w, &funcs, &x, r)?;
        for (fi, rep) in reps.iter().enumerate() {
            rows.push(vec![
                ball.to_string(),
                fi.to_string(),
                f17(r),
                f17(rep.constant),
            ]);
        }
    }
    ctx.write_csv(
        "poincare.csv",
        "ball,function,radius,constant",
        &rows,
    )
}

// ---------------------------------------------------------------------------

fn besov(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let k = need(cfg.k, "k")?;
    let n = need(cfg.depth, "depth")?;
    let w = MetricWeights::new(need(cfg.epsilon, "epsilon")?, need(cfg.beta, "beta")?)?;
    let p = need(cfg.p, "p")?;
    let theta = need(cfg.theta, "theta")?;
    let seed = need_seed(cfg)?;
    let f = random_boundary_function(k, n, seed);
    let params = BesovParams::new(p, theta)?;
    let rep = besov_seminorm_sum(&f, &w, &params)?;
    let sums = rep.partial_sums();
    let rows: Vec<Vec<String>> = rep
        .terms
        .iter()
        .zip(&sums)
        .map(|(t, s)| {
            vec![
                t.n.to_string(),
                f17(t.t_n),
                f17(t.ep),
                f17(t.term),
                f17(*s),
            ]
        })
        .collect();
    ctx.write_csv("besov.csv", "scale,t,modulus,term,partial_sum", &rows)
}

// ---------------------------------------------------------------------------

fn trace_ratios(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let k = need(cfg.k, "k")?;
    let n_max = need(cfg.depth, "depth")?;
    let w = MetricWeights::new(need(cfg.epsilon, "epsilon")?, need(cfg.beta, "beta")?)?;
    let p = need(cfg.p, "p")?;
    let seed = need_seed(cfg)?;
    let count = need_samples(cfg)? as u64;
    let params = match cfg.theta {
        Some(t) => TraceParams::with_theta(k, &w, p, t)?,
        None => TraceParams::sharp(k, &w, p)?,
    };
    let n_min = 6.min(n_max);
    let mut rows = Vec::new();
    for n in (n_min..=n_max).step_by(2) {
        let mut ext_max: f64 = 0.0;
        let mut tr_max: f64 = 0.0;
        for s in 0..count {
            let f = random_boundary_function(k, n_min, seed ^ splitmix64(s));
            ext_max = ext_max.max(extension_norm_ratio(&f, &w, &params, n)?.ratio);
            let u = random_lipschitz_tree_function(k, n, &w, seed ^ splitmix64(s + count));
            tr_max = tr_max.max(trace_norm_ratio(&u, &w, &params)?.ratio);
        }
        rows.push(vec![n.to_string(), f17(ext_max), f17(tr_max)]);
    }
    ctx.write_csv(
        "trace.csv",
        "depth,max_extension_ratio,max_trace_ratio",
        &rows,
    )
}

// ---------------------------------------------------------------------------

fn maps(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let n = need(cfg.depth, "depth")?;
    let eps_x = need(cfg.epsilon, "epsilon")?;
    let eps_y = need(cfg.epsilon_y, "epsilon_y")?;
    let seed = need_seed(cfg)?;
    let count = need_samples(cfg)?;
    let family = cfg.map.as_deref().unwrap_or("snowflake");
    let map = match family {
        "snowflake" => snowflake_map(2, n, eps_x, eps_y)?,
        "collapse" => example_boundary_map(n, eps_x, eps_y)?,
        other => {
            return Err(Failure::Validation(format!(
                "unknown map family '{other}' (expected snowflake or collapse)"
            )))
        }
    };
    let eta = fit_eta(&map, &TripleSet::Structured)?;
    let qs = qs_check(&map, &eta, &TripleSet::Sampled { seed, count })?;
    let f = extend_qs_to_tree(&map);
    let rqi = rqi_check(&f, seed);
    let mut rows = vec![
        vec!["alpha1".into(), f17(eta.alpha1)],
        vec!["alpha2".into(), f17(eta.alpha2)],
        vec!["profile_constant".into(), f17(eta.a)],
        vec!["qs_max_statistic".into(), f17(qs.max_statistic)],
        vec!["qs_evaluated".into(), qs.evaluated.to_string()],
        vec!["rqi_l1".into(), f17(rqi.l1)],
        vec!["rqi_l2".into(), f17(rqi.l2)],
        vec!["rqi_lambda".into(), f17(rqi.lambda)],
        vec!["density_radius".into(), rqi.density_radius.to_string()],
    ];
    if let Some(t) = &f.theoretical {
        let (viol, _) = envelope_violations(&f, t.l1, t.lambda, t.l2, t.lambda);
        rows.push(vec!["envelope_violations".into(), viol.to_string()]);
        if viol > 0 {
            ctx.write_csv("maps.csv", "quantity,value", &rows)?;
            return Err(Failure::Assertion(format!(
                "{viol} violations of the guaranteed distance envelope"
            )));
        }
    }
    ctx.write_csv("maps.csv", "quantity,value", &rows)?;
    if !qs.pass {
        return Err(Failure::Assertion(format!(
            "fitted distortion profile violated: statistic {}",
            qs.max_statistic
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn rigidity(cfg: &Config, ctx: &Ctx) -> RunResult<()> {
    let n = need(cfg.depth, "depth")?;
    let family = cfg.map.as_deref().unwrap_or("identity");
    let g = match family {
        "identity" => {
            let k = cfg.k.unwrap_or(2);
            let t = TreeSpec::regular(k, n)?;
            VertexMap::from_fn(t.clone(), t, n, |v| v.clone())
        }
        "collapse" => example_binary_ternary(n).0,
        "collapse-inverse" => example_binary_ternary(n).1,
        "rerooted" => rerooted_ternary(n)?,
        other => {
            return Err(Failure::Validation(format!(
                "unknown map family '{other}'"
            )))
        }
    };
    let rep = rigidity_check(&g, 4.min(n), 3)?;
    let (verdict, witness) = match rep.verdict {
        RigidityVerdict::Isometry => ("isometry".to_string(), String::new()),
        RigidityVerdict::NotInjective { witness: (a, b) } => (
            "not-injective".into(),
            format!("{}|{}", a.serialize(10), b.serialize(10)),
        ),
        RigidityVerdict::GeodesicViolation { endpoints, witness } => (
            "geodesic-violation".into(),
            format!(
                "{}..{} off-path {}",
                endpoints.0.serialize(10),
                endpoints.1.serialize(10),
                witness.serialize(10)
            ),
        ),
        RigidityVerdict::NotDense { witness } => ("not-dense".into(), witness.serialize(10)),
        RigidityVerdict::RootCondition => ("root-condition".into(), String::new()),
        RigidityVerdict::DistanceMismatch { witness: (a, b) } => (
            "distance-mismatch".into(),
            format!("{}|{}", a.serialize(10), b.serialize(10)),
        ),
    };
    let rows = vec![vec![
        family.to_string(),
        verdict,
        rep.pairs_verified.to_string(),
        witness,
    ]];
    ctx.write_csv(
        "rigidity.csv",
        "map,verdict,pairs_verified,witness",
        &rows,
    )
}

/// The ternary tree viewed from a child of its root, mapped back onto the
/// original tree (an isometry that moves the root).
fn rerooted_ternary(depth: usize) -> RunResult<VertexMap> {
    let domain = TreeSpec::with_rule(
        |v: &VertexId| {
            if v.is_root() {
                4
            } else if v.digits().iter().all(|&d| d == 3) {
                2
            } else {
                3
            }
        },
        4,
        depth,
    )?;
    let codomain = TreeSpec::regular(3, depth + 1)?;
    Ok(VertexMap::from_fn(domain, codomain, depth, |v| {
        let d = v.digits();
        let back = d.iter().take_while(|&&x| x == 3).count();
        if back == 0 {
            let mut digits = Vec::with_capacity(d.len() + 1);
            digits.push(0);
            digits.extend_from_slice(d);
            VertexId::from_digits(digits)
        } else if back == d.len() {
            VertexId::root()
        } else {
            let mut digits = Vec::with_capacity(d.len() - 1);
            digits.push(d[1] + 1);
            digits.extend_from_slice(&d[2..]);
            VertexId::from_digits(digits)
        }
    }))
}

// ---------------------------------------------------------------------------

fn compare(a: &Path, b: &Path) -> RunResult<()> {
    let ra = std::fs::read_to_string(a)?;
    let rb = std::fs::read_to_string(b)?;
    let (meta_a, header_a, rows_a) = parse_csv(&ra)?;
    let (meta_b, header_b, rows_b) = parse_csv(&rb)?;
    let exp = |m: &str| {
        m.split_whitespace()
            .find_map(|t| t.strip_prefix("experiment=").map(str::to_string))
    };
    if exp(&meta_a) != exp(&meta_b) {
        return Err(Failure::Validation(format!(
            "experiment mismatch: {:?} vs {:?}",
            exp(&meta_a),
            exp(&meta_b)
        )));
    }
    if header_a != header_b {
        return Err(Failure::Validation("schema mismatch: headers differ".into()));
    }
    let cols: Vec<&str> = header_a.split(',').collect();
    println!("row,column,a,b,rel_diff");
    let mut max_rel: f64 = 0.0;
    for (i, (ra, rb)) in rows_a.iter().zip(&rows_b).enumerate() {
        for (c, (va, vb)) in ra.iter().zip(rb).enumerate() {
            if cols[c] == "config_hash" {
                continue;
            }
            match (va.parse::<f64>(), vb.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    let denom = x.abs().max(y.abs());
                    let rel = if denom == 0.0 { 0.0 } else { (x - y).abs() / denom };
                    if rel > 0.0 {
                        println!("{i},{},{va},{vb},{}", cols[c], f17(rel));
                    }
                    max_rel = max_rel.max(rel);
                }
                _ => {
                    if va != vb {
                        println!("{i},{},{va},{vb},text", cols[c]);
                        max_rel = f64::INFINITY;
                    }
                }
            }
        }
    }
    if rows_a.len() != rows_b.len() {
        println!(
            "# rows_only_in_one={}",
            rows_a.len().abs_diff(rows_b.len())
        );
    }
    println!("# max_rel_diff={}", f17(max_rel));
    Ok(())
}

#[allow(clippy::type_complexity)]
fn parse_csv(s: &str) -> RunResult<(String, String, Vec<Vec<String>>)> {
    let mut lines = s.lines();
    let meta = lines
        .next()
        .filter(|l| l.starts_with('#'))
        .ok_or_else(|| Failure::Validation("missing metadata line".into()))?
        .to_string();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Validation("missing header line".into()))?
        .to_string();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((meta, header, rows))
}
