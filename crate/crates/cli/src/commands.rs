use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use genfrac_core::gronwall::{check_instance, random_instance_sweep, GronwallInstance, GronwallReport};
use genfrac_core::kernel::{AssumptionCheck, InversionIdentityReport};
use genfrac_core::mc::{self, McConfig, McEstimate, Sampler};
use genfrac_core::phi_exp::{self, auto_k_max, convolution_powers, eigen_residual, phi_exp_laplace, EigenResidual, Route};
use genfrac_core::special::{gamma, mittag_leffler};
use genfrac_core::volterra::{
    fixed_point_residual, picard_solve, solve_global, verify_holder, BuiltinRhs, HolderEstimate, IvpProblem, PicardOptions, PicardState,
    ProblemSpec,
};
use genfrac_core::{BernsteinFunction, Grid, GridFunction, InversionConfig, KernelTable, PhiKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir, RunManifest};

/// Parse `--phi`: a catalog spec string or the path of a TOML catalog file.
pub fn parse_phi(spec: &str) -> CliResult<BernsteinFunction> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return Ok(BernsteinFunction::from_config_str(&text)?);
    }
    Ok(spec.parse()?)
}

fn parse_inversion(spec: &str) -> CliResult<InversionConfig> {
    Ok(spec.parse()?)
}

fn grid(t_end: f64, n: usize) -> CliResult<Grid> {
    Ok(Grid::new(t_end, n)?)
}

pub fn catalog(phi: Option<&str>) -> CliResult<()> {
    match phi {
        None => {
            println!("{:<10} {:<28} {:<26} {:<10} C (kernel envelope u(t) <= C t^(beta-1) on (0, t0])", "kind", "parameters", "Phi(lambda)", "beta");
            println!("{:<10} {:<28} {:<26} {:<10} 1/Gamma(alpha)", "stable", "alpha in (0,1)", "lambda^alpha", "alpha");
            println!(
                "{:<10} {:<28} {:<26} {:<10} e/((1+theta t0)^alpha - (theta t0)^alpha)",
                "tempered", "alpha in (0,1), theta > 0", "(lambda+theta)^a-theta^a", "alpha"
            );
            println!("{:<10} {:<28} {:<26} {:<10} e/w_i at the largest alpha_i", "mixture", "w_i > 0, alpha_i in (0,1)", "sum w_i lambda^alpha_i", "max alpha_i");
        }
        Some(spec) => {
            let phi = parse_phi(spec)?;
            println!("label      {}", phi.label());
            println!("beta       {}", phi.beta);
            println!("c_assump   {}", phi.c_assump);
            println!("t0         {}", phi.t0);
            println!(
                "flags      special={} infinite_levy_mass={} levy_density={}",
                phi.flags.is_special, phi.flags.levy_mass_infinite, phi.flags.levy_abs_continuous
            );
            let kernels = match phi.kind() {
                PhiKind::Stable { .. } => "closed form (u, U and Levy tail)",
                _ => "Levy tail closed form; potential by numerical inversion",
            };
            println!("kernels    {kernels}");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    #[arg(long)]
    pub phi: String,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long = "N", default_value_t = 1024)]
    pub n: usize,
    /// Laplace inversion: `gs:<order>` or `talbot:<nodes>`.
    #[arg(long = "ilt", default_value = "gs:16")]
    pub ilt: String,
}

#[derive(Debug, Serialize)]
struct KernelReport<'a> {
    config: &'a KernelArgs,
    label: String,
    beta: f64,
    c_fit: f64,
    c_u_fit: f64,
    monotone_repair: f64,
    assumption: AssumptionCheck,
    /// For `f(t) = 1 + t²`.
    inversion_identity: InversionIdentityReport,
}

pub fn kernels(args: &KernelArgs, out: &OutDir) -> CliResult<()> {
    let phi = parse_phi(&args.phi)?;
    let kt = KernelTable::build(&phi, grid(args.t_end, args.n)?, &parse_inversion(&args.ilt)?)?;
    let file = fs::File::create(out.path("kernels.csv"))?;
    kt.write_csv(std::io::BufWriter::new(file))?;
    let f = GridFunction::from_fn(*kt.grid(), |t| 1.0 + t * t);
    out.write_json(
        "kernels_report.json",
        &KernelReport {
            config: args,
            label: kt.label.clone(),
            beta: kt.beta,
            c_fit: kt.c_fit,
            c_u_fit: kt.c_u_fit,
            monotone_repair: kt.monotone_repair,
            assumption: kt.assumption_check(),
            inversion_identity: kt.check_inversion_identity(&f)?,
        },
    )?;
    out.write_manifest(&RunManifest::new("kernels", args, &args.phi, Some((args.t_end, args.n)), None)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Series,
    Laplace,
    Mc,
    Picard,
    /// Series, Laplace and Monte Carlo.
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EigenArgs {
    #[arg(long)]
    pub phi: String,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long = "N", default_value_t = 1024)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = EigenMethod::All)]
    pub method: EigenMethod,
    #[arg(long = "ilt", default_value = "gs:16")]
    pub ilt: String,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Monte Carlo paths for the `mc` method.
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    method: String,
    /// Largest relative deviation from the reference over nodes with
    /// `t ≥ T/8`.
    max_rel_dev: Option<f64>,
    /// Same over all nodes `t > 0`.
    max_rel_dev_all: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EigenReport<'a> {
    config: &'a EigenArgs,
    reference: Option<String>,
    k_max: Option<usize>,
    series_nodes: Option<usize>,
    laplace_fallback_nodes: Option<usize>,
    residual: Option<EigenResidual>,
    picard: Option<PicardState>,
    mc_skipped: Option<String>,
    methods: Vec<MethodSummary>,
}

pub fn eigen(args: &EigenArgs, out: &OutDir) -> CliResult<()> {
    let phi = parse_phi(&args.phi)?;
    let cfg = parse_inversion(&args.ilt)?;
    let kt = KernelTable::build(&phi, grid(args.t_end, args.n)?, &cfg)?;
    let g = *kt.grid();
    let lambda = args.lambda;
    let want = |m: EigenMethod| args.method == m || (args.method == EigenMethod::All && m != EigenMethod::Picard);
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut report = EigenReport {
        config: args,
        reference: None,
        k_max: None,
        series_nodes: None,
        laplace_fallback_nodes: None,
        residual: None,
        picard: None,
        mc_skipped: None,
        methods: Vec::new(),
    };

    if want(EigenMethod::Series) {
        let k = auto_k_max(&kt, lambda);
        let cp = convolution_powers(&kt, k)?;
        let mut vals = Vec::with_capacity(g.len());
        let mut fallback = 0;
        for i in 0..g.len() {
            let (v, route) = phi_exp::phi_exp(&phi, &cp, lambda, i, &cfg)?;
            if route == Route::Laplace {
                fallback += 1;
            }
            vals.push(v);
        }
        report.k_max = Some(k);
        report.series_nodes = Some(g.len() - fallback);
        report.laplace_fallback_nodes = Some(fallback);
        report.residual = Some(eigen_residual(&kt, lambda, &GridFunction::scalar(g, vals.clone())?)?);
        columns.push(("series".into(), vals));
    }
    let mut laplace_vals = None;
    if want(EigenMethod::Laplace) || want(EigenMethod::Picard) {
        let vals: Vec<f64> = (0..g.len())
            .map(|i| {
                if i == 0 {
                    Ok(1.0)
                } else {
                    phi_exp_laplace(&phi, lambda, g.node(i), &cfg).map(|v| v.value)
                }
            })
            .collect::<genfrac_core::Result<_>>()?;
        laplace_vals = Some(vals);
    }
    if want(EigenMethod::Laplace) {
        columns.push(("laplace".into(), laplace_vals.clone().expect("computed above")));
    }
    if want(EigenMethod::Mc) {
        match Sampler::from_phi(&phi) {
            Ok(sampler) => {
                let cfg = McConfig::new(sampler, args.paths, args.dt, args.t_end, args.seed)?;
                columns.push(("mc".into(), mc_eigen_curve(&cfg, &g.nodes(), lambda)?));
            }
            Err(e) if args.method == EigenMethod::All => report.mc_skipped = Some(e.to_string()),
            Err(e) => return Err(CliError::Usage(e.to_string())),
        }
    }
    if want(EigenMethod::Picard) {
        let lv = laplace_vals.as_ref().expect("computed above");
        let spread = lv.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        let radius = 2.0 * spread.max(1.0);
        let problem = IvpProblem::from_builtin(BuiltinRhs::Linear { matrix: vec![vec![lambda]] }, vec![1.0], args.t_end)?;
        let opts = PicardOptions::new(radius).horizon_cells(args.n).tol(args.tol).max_iter(args.max_iter);
        let (f, state) = picard_solve(&problem, &kt, &opts)?;
        report.picard = Some(state);
        columns.push(("picard".into(), f.into_values()));
    }
    // Keep the oracle column after the method columns.
    let reference: Option<Vec<f64>> = match phi.stable_alpha() {
        Some(alpha) => {
            report.reference = Some("mittag_leffler".into());
            let vals = (0..g.len())
                .map(|i| mittag_leffler(alpha, lambda * g.node(i).powf(alpha)))
                .collect::<genfrac_core::Result<Vec<f64>>>()?;
            columns.push(("mittag_leffler".into(), vals.clone()));
            Some(vals)
        }
        None => laplace_vals.map(|v| {
            report.reference = Some("laplace".into());
            v
        }),
    };
    if let Some(r) = &reference {
        let first = (g.cells() + 7) / 8;
        for (name, vals) in &columns {
            if name == "mittag_leffler" || Some(name.as_str()) == report.reference.as_deref() {
                continue;
            }
            let dev = |from: usize| (from..g.len()).map(|i| ((vals[i] - r[i]) / r[i]).abs()).fold(0.0, f64::max);
            report.methods.push(MethodSummary {
                method: name.clone(),
                max_rel_dev: Some(dev(first.max(1))),
                max_rel_dev_all: Some(dev(1)),
            });
        }
    }
    let methods = columns.iter().filter(|c| c.0 != "mittag_leffler").count();
    let mut deltas = Vec::new();
    for a in 0..methods {
        for b in a + 1..methods {
            let vals: Vec<f64> = columns[a].1.iter().zip(&columns[b].1).map(|(x, y)| x - y).collect();
            deltas.push((format!("{}-{}", columns[a].0, columns[b].0), vals));
        }
    }
    columns.extend(deltas);
    let header: Vec<String> = std::iter::once("t".to_string()).chain(columns.iter().map(|c| c.0.clone())).collect();
    out.write_csv(
        "eigen.csv",
        &header,
        (0..g.len()).map(|i| std::iter::once(num(g.node(i))).chain(columns.iter().map(|c| num(c.1[i]))).collect()),
    )?;
    out.write_json("eigen_report.json", &report)?;
    out.write_manifest(&RunManifest::new("eigen", args, &args.phi, Some((args.t_end, args.n)), None)?)?;
    Ok(())
}

/// `E[e^{λ L(t)}]` at every query time from one set of paths.
fn mc_eigen_curve(cfg: &McConfig, times: &[f64], lambda: f64) -> CliResult<Vec<f64>> {
    let mut sums = vec![0.0; times.len()];
    for p in 0..cfg.n_paths {
        for (s, l) in sums.iter_mut().zip(mc::path_passages(cfg, p, times)?) {
            *s += (lambda * l).exp();
        }
    }
    Ok(sums.into_iter().map(|s| s / cfg.n_paths as f64).collect())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub phi: String,
    /// TOML problem file with `T`, `R`, `f0` and an `[rhs]` table.
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long = "N", default_value_t = 1024)]
    pub n: usize,
    #[arg(long = "ilt", default_value = "gs:16")]
    pub ilt: String,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Continue past the first horizon `T′` up to `T`.
    #[arg(long)]
    pub global: bool,
}

#[derive(Debug, Serialize)]
struct SolveConfig<'a> {
    args: &'a SolveArgs,
    problem_text: String,
}

#[derive(Debug, Serialize)]
struct SolveReport<'a> {
    config: &'a SolveArgs,
    rhs: String,
    radius: f64,
    f0: Vec<f64>,
    t_end_solved: f64,
    segments: Vec<PicardState>,
    fixed_point_residual: f64,
    holder: HolderEstimate,
}

pub fn solve(args: &SolveArgs, out: &OutDir) -> CliResult<()> {
    let phi = parse_phi(&args.phi)?;
    let text = fs::read_to_string(&args.problem)?;
    let spec = ProblemSpec::parse(&text)?;
    let problem = spec.problem()?;
    let kt = KernelTable::build(&phi, grid(spec.t_end, args.n)?, &parse_inversion(&args.ilt)?)?;
    let opts = PicardOptions::new(spec.radius).tol(args.tol).max_iter(args.max_iter);
    let (f, states) = if args.global {
        solve_global(&problem, &kt, &opts)?
    } else {
        let (f, s) = picard_solve(&problem, &kt, &opts)?;
        (f, vec![s])
    };
    let residual = if args.global { f64::NAN } else { fixed_point_residual(&problem, &kt, &f)? };
    let d = problem.dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..d).map(|c| format!("y{c}"))).collect();
    out.write_csv(
        "solution.csv",
        &header,
        (0..f.len()).map(|i| std::iter::once(num(f.grid().node(i))).chain(f.at(i).iter().map(|&v| num(v))).collect()),
    )?;
    out.write_json(
        "solve_report.json",
        &SolveReport {
            config: args,
            rhs: problem.label.clone(),
            radius: spec.radius,
            f0: spec.f0.clone(),
            t_end_solved: f.grid().t_end(),
            segments: states,
            fixed_point_residual: residual,
            holder: verify_holder(&f, kt.beta),
        },
    )?;
    let config = SolveConfig {
        args,
        problem_text: text,
    };
    out.write_manifest(&RunManifest::new("solve", &config, &args.phi, Some((spec.t_end, args.n)), None)?)?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GronwallArgs {
    #[arg(long)]
    pub phi: String,
    /// TOML instance file with `T` and node values `x`, `a`, `g`.
    #[arg(long, conflicts_with = "random")]
    pub instance: Option<PathBuf>,
    /// Random instances, as `seeds=<count>`.
    #[arg(long)]
    pub random: Option<String>,
    /// Master seed for random instances.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_end: f64,
    /// Grid size for random instances.
    #[arg(long = "N", default_value_t = 256)]
    pub n: usize,
    #[arg(long = "ilt", default_value = "gs:16")]
    pub ilt: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(rename = "T")]
    t_end: f64,
    x: Vec<f64>,
    a: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RandomRow {
    seed: u64,
    pass: bool,
    min_margin_series: f64,
    min_margin_ml: f64,
    min_margin_monotone: Option<f64>,
    slack: f64,
}

#[derive(Debug, Serialize)]
struct GronwallSummary<'a> {
    config: &'a GronwallArgs,
    all_pass: bool,
    count: usize,
    failures: Vec<u64>,
    instances: Vec<RandomRow>,
}

#[derive(Debug, Serialize)]
struct InstanceSummary<'a> {
    config: &'a GronwallArgs,
    all_pass: bool,
    certificate_gap: f64,
    series_terms: usize,
    series_tail_bound: f64,
    slack: f64,
    min_margin_series: f64,
    min_margin_ml: f64,
    min_margin_monotone: Option<f64>,
}

fn parse_seed_count(spec: &str) -> CliResult<usize> {
    spec.strip_prefix("seeds=")
        .and_then(|n| n.parse().ok())
        .filter(|&n: &usize| n > 0)
        .ok_or_else(|| CliError::Usage(format!("--random expects seeds=<count>, got {spec:?}")))
}

pub fn gronwall(args: &GronwallArgs, out: &OutDir) -> CliResult<()> {
    let phi = parse_phi(&args.phi)?;
    let cfg = parse_inversion(&args.ilt)?;
    let manifest_grid;
    let pass = match (&args.instance, &args.random) {
        (Some(path), None) => {
            let file: InstanceFile = toml::from_str(&fs::read_to_string(path)?).map_err(|e| CliError::Usage(format!("instance file: {e}")))?;
            let n = file.x.len().saturating_sub(1);
            let g = grid(file.t_end, n)?;
            manifest_grid = Some((file.t_end, n));
            let kt = KernelTable::build(&phi, g, &cfg)?;
            let inst = GronwallInstance::new(GridFunction::scalar(g, file.x)?, GridFunction::scalar(g, file.a)?, GridFunction::scalar(g, file.g)?)?;
            let gap = inst.certificate_gap(&kt)?;
            let cp = convolution_powers(&kt, auto_k_max(&kt, inst.g.value(n)))?;
            let rep: GronwallReport = check_instance(&inst, &kt, &cp)?;
            let header: Vec<String> = ["t", "x", "margin_series", "margin_ml", "margin_monotone"].map(String::from).to_vec();
            out.write_csv(
                "gronwall.csv",
                &header,
                (0..=n).map(|i| {
                    vec![
                        num(g.node(i)),
                        num(inst.x.value(i)),
                        num(rep.margin_series[i]),
                        num(rep.margin_ml[i]),
                        rep.margin_monotone.as_ref().map(|m| num(m[i])).unwrap_or_default(),
                    ]
                }),
            )?;
            let ok = rep.all_pass() && gap <= genfrac_core::gronwall::CERTIFICATE_SLACK;
            out.write_json(
                "gronwall_report.json",
                &InstanceSummary {
                    config: args,
                    all_pass: ok,
                    certificate_gap: gap,
                    series_terms: rep.series_terms,
                    series_tail_bound: rep.series_tail_bound,
                    slack: rep.slack,
                    min_margin_series: rep.min_margin_series,
                    min_margin_ml: rep.min_margin_ml,
                    min_margin_monotone: rep.min_margin_monotone,
                },
            )?;
            ok
        }
        (None, Some(spec)) => {
            let count = parse_seed_count(spec)?;
            manifest_grid = Some((args.t_end, args.n));
            let kt = KernelTable::build(&phi, grid(args.t_end, args.n)?, &cfg)?;
            // Random instances have g ≤ 2.
            let cp = convolution_powers(&kt, auto_k_max(&kt, 2.0))?;
            let reps = random_instance_sweep(&kt, &cp, args.seed, count)?;
            let rows: Vec<RandomRow> = reps
                .iter()
                .map(|(s, r)| RandomRow {
                    seed: *s,
                    pass: r.all_pass(),
                    min_margin_series: r.min_margin_series,
                    min_margin_ml: r.min_margin_ml,
                    min_margin_monotone: r.min_margin_monotone,
                    slack: r.slack,
                })
                .collect();
            let header: Vec<String> = ["seed", "pass", "min_margin_series", "min_margin_ml", "min_margin_monotone", "slack"].map(String::from).to_vec();
            out.write_csv(
                "gronwall.csv",
                &header,
                rows.iter().map(|r| {
                    vec![
                        r.seed.to_string(),
                        r.pass.to_string(),
                        num(r.min_margin_series),
                        num(r.min_margin_ml),
                        r.min_margin_monotone.map(num).unwrap_or_default(),
                        num(r.slack),
                    ]
                }),
            )?;
            let failures: Vec<u64> = rows.iter().filter(|r| !r.pass).map(|r| r.seed).collect();
            let ok = failures.is_empty();
            out.write_json(
                "gronwall_report.json",
                &GronwallSummary {
                    config: args,
                    all_pass: ok,
                    count,
                    failures,
                    instances: rows,
                },
            )?;
            ok
        }
        _ => return Err(CliError::Usage("give exactly one of --instance FILE or --random seeds=<count>".into())),
    };
    out.write_manifest(&RunManifest::new("gronwall", args, &args.phi, manifest_grid, Some(args.seed))?)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Verdict("Grönwall bound violated beyond slack; see gronwall_report.json".into()))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McArgs {
    #[arg(long)]
    pub phi: String,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Calendar time of the estimates.
    #[arg(long = "t", default_value_t = 1.0)]
    pub t: f64,
    /// `U`, `phiexp:<λ>`, `moments:<k>` or `tail:<s>`; repeatable.
    #[arg(long, default_value = "U", allow_hyphen_values = true)]
    pub estimate: Vec<String>,
}

#[derive(Debug, Serialize)]
struct McRow {
    quantity: String,
    value: f64,
    std_error: f64,
    target: Option<f64>,
    warning: Option<String>,
}

#[derive(Debug, Serialize)]
struct McReport<'a> {
    config: &'a McArgs,
    t_max: f64,
    rows: &'a [McRow],
}

enum Estimate {
    Potential,
    PhiExp(f64),
    Moments(usize),
    Tail(f64),
}

fn parse_estimate(spec: &str) -> CliResult<Estimate> {
    let bad = || CliError::Usage(format!("unknown estimate {spec:?}; use U, phiexp:<λ>, moments:<k> or tail:<s>"));
    if spec == "U" {
        return Ok(Estimate::Potential);
    }
    let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
    match kind {
        "phiexp" => arg.parse().map(Estimate::PhiExp).map_err(|_| bad()),
        "moments" => arg.parse().map(Estimate::Moments).map_err(|_| bad()),
        "tail" => arg.parse().map(Estimate::Tail).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn row(quantity: String, e: &McEstimate, target: Option<f64>) -> McRow {
    McRow {
        quantity,
        value: e.value,
        std_error: e.std_error,
        target,
        warning: e.warning.clone(),
    }
}

pub fn mc(args: &McArgs, out: &OutDir) -> CliResult<()> {
    let phi = parse_phi(&args.phi)?;
    let sampler = Sampler::from_phi(&phi).map_err(|e| CliError::Usage(e.to_string()))?;
    let estimates: Vec<Estimate> = args.estimate.iter().map(|s| parse_estimate(s)).collect::<CliResult<_>>()?;
    let cfg = McConfig::new(sampler, args.paths, args.dt, args.t, args.seed)?;
    let passages = mc::passage_samples(&cfg, args.t)?;
    let stable = phi.stable_alpha();
    let mut rows = Vec::new();
    for e in estimates {
        match e {
            Estimate::Potential => {
                let est = McEstimate::from_samples(&passages)?;
                rows.push(row("U".into(), &est, stable.map(|a| args.t.powf(a) / gamma(a + 1.0))));
            }
            Estimate::PhiExp(lambda) => {
                let est = mc::phi_exp_from_passages(&passages, lambda)?;
                let target = stable.and_then(|a| mittag_leffler(a, lambda * args.t.powf(a)).ok());
                rows.push(row(format!("phiexp:{lambda}"), &est, target));
            }
            Estimate::Moments(k) => {
                if k > 6 {
                    return Err(CliError::Usage(format!("moments above order 6 are not estimated (got {k})")));
                }
                for (j, est) in mc::moments_from_passages(&passages, k)?.iter().enumerate() {
                    let target = stable.map(|a| args.t.powf(j as f64 * a) / gamma(j as f64 * a + 1.0));
                    rows.push(row(format!("scaled_moment:{j}"), est, target));
                }
            }
            Estimate::Tail(s) => {
                let est = &mc::tail_from_passages(&passages, &[s])[0];
                rows.push(row(format!("tail:{s}"), est, None));
            }
        }
    }
    let header: Vec<String> = ["quantity", "value", "std_error", "target"].map(String::from).to_vec();
    out.write_csv(
        "mc.csv",
        &header,
        rows.iter().map(|r| vec![r.quantity.clone(), num(r.value), num(r.std_error), r.target.map(num).unwrap_or_default()]),
    )?;
    out.write_json(
        "mc_report.json",
        &McReport {
            config: args,
            t_max: args.t,
            rows: &rows,
        },
    )?;
    out.write_manifest(&RunManifest::new("mc", args, &args.phi, None, Some(args.seed))?)?;
    Ok(())
}
