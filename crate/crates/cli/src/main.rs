use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use res_core::analysis::{
    check_nfe, convergence_csv, default_param, defects_csv, estimate_order, eta_csv, eta_sweep,
    measure_defects, psi_check, trace_csv, MixtureProblem, SinProblem,
};
use res_core::denoiser::{manufactured_g, mixture_denoiser, FnDenoiser, GaussianMixture};
use res_core::param::{schedule, NoiseLevel, Parametrization, ScheduleKind};
use res_core::stepper::{solve, Method, SolveOptions};
use res_core::tableau::{SchemeId, TableauSpec};
use res_core::{Error, Result};

#[derive(Parser)]
#[command(name = "res", version, about = "Exponential-integrator samplers for diffusion ODEs on toy oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the order conditions of exponential tableaus.
    PsiCheck(PsiArgs),
    /// Empirical convergence orders on a manufactured problem.
    Convergence(ConvergenceArgs),
    /// Numerical defects against an RK4 reference on a mixture oracle.
    Defects(DefectsArgs),
    /// Run one solve and write its trajectory.
    Sample(SampleArgs),
    /// Defect and terminal NLL against the churn parameter at a fixed NFE.
    EtaSweep(EtaArgs),
}

#[derive(Args)]
struct Common {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    c3: Option<f64>,
    /// Coordinates to integrate in; defaults to logsnr for exponential schemes and edm otherwise.
    #[arg(long, value_enum)]
    param: Option<ParamArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, value_enum, default_value_t = ScheduleArg::Edm)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 7.0)]
    rho: f64,
}

#[derive(Args)]
struct PsiArgs {
    /// Schemes to audit (repeatable or comma separated); all exponential schemes by default.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    #[arg(long, value_enum, default_value_t = SinKind::Sin)]
    problem: SinKind,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128])]
    steps: Vec<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DefectsArgs {
    #[arg(long, value_delimiter = ',', default_values_t = ["res2".to_string(), "dpmpp2".to_string()])]
    scheme: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 50])]
    nfe: Vec<usize>,
    /// Mixture in key=value form; the seeded toy mixture when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "res2")]
    scheme: String,
    #[arg(long, value_enum, default_value_t = SampleProblem::Mixture)]
    problem: SampleProblem,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of steps; overrides --nfe.
    #[arg(long)]
    steps: Option<usize>,
    /// NFE budget, converted to whole steps.
    #[arg(long)]
    nfe: Option<usize>,
    /// Constant churn applied at every step.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long)]
    final_denoise: bool,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Initial state, comma separated; drawn from N(0, σ_max² I) when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Constant denoiser output for `--problem const`.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    kappa: f64,
    /// Scale of the centred Gaussian for `--problem gaussian`.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EtaArgs {
    #[arg(long, default_value = "res2")]
    scheme: String,
    #[arg(long, default_value_t = 32)]
    nfe: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2, 0.4, 0.8])]
    eta: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Edm,
    Logsnr,
    Neglogsnr,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ScheduleArg {
    Edm,
    UniformSigma,
    UniformLambda,
}

#[derive(Clone, Copy, ValueEnum)]
enum SinKind {
    Sin,
    SinRandom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleProblem {
    Mixture,
    Gaussian,
    Const,
    Sin,
}

impl From<ParamArg> for Parametrization {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Edm => Parametrization::Edm,
            ParamArg::Logsnr => Parametrization::LogSnr,
            ParamArg::Neglogsnr => Parametrization::NegLogSnr,
        }
    }
}

impl ScheduleArgs {
    fn kind(&self) -> Result<ScheduleKind> {
        match self.schedule {
            ScheduleArg::Edm if !(self.rho.is_finite() && self.rho > 0.0) => {
                Err(Error::Usage(format!("--rho must be positive, got {}", self.rho)))
            }
            ScheduleArg::Edm => Ok(ScheduleKind::EdmRho(self.rho)),
            ScheduleArg::UniformSigma => Ok(ScheduleKind::UniformSigma),
            ScheduleArg::UniformLambda => Ok(ScheduleKind::UniformLambda),
        }
    }
}

impl Common {
    fn method(&self, name: &str) -> Result<Method> {
        Method::parse(name, self.c2, self.c3)
    }

    fn param_for(&self, method: &Method) -> Parametrization {
        self.param.map(Parametrization::from).unwrap_or_else(|| default_param(method))
    }

    fn emit(&self, body: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::Usage(format!("cannot write output: {e}"));
        match &self.out {
            Some(path) => fs::write(path, body).map_err(io),
            None => std::io::stdout().write_all(body.as_bytes()).map_err(io),
        }
    }
}

fn load_mixture(path: Option<&PathBuf>, seed: u64) -> Result<MixtureProblem> {
    let mut problem = MixtureProblem::toy(seed);
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        problem.mixture = GaussianMixture::from_config(&text)?;
    }
    Ok(problem)
}

fn run_psi(args: PsiArgs) -> Result<()> {
    let specs = if args.scheme.is_empty() {
        SchemeId::ALL
            .into_iter()
            .filter(|s| s.is_exponential())
            .map(TableauSpec::default_for)
            .collect()
    } else {
        let mut specs = Vec::new();
        for name in &args.scheme {
            match args.common.method(name)? {
                Method::SingleStep(spec) if spec.is_exponential() => specs.push(spec),
                other => {
                    return Err(Error::Usage(format!("{other} has no exponential tableau to audit")))
                }
            }
        }
        specs
    };
    let (_, csv) = psi_check(&specs)?;
    args.common.emit(&csv)
}

fn run_convergence(args: ConvergenceArgs) -> Result<()> {
    let problem = match args.problem {
        SinKind::Sin => SinProblem::standard(args.dim),
        SinKind::SinRandom => SinProblem::random(args.dim, args.common.seed),
    };
    let names: Vec<String> = if args.scheme.is_empty() {
        ["expeuler", "res2", "res2m", "dpmpp2", "heun", "res3"].map(String::from).to_vec()
    } else {
        args.scheme.clone()
    };
    let mut estimates = Vec::with_capacity(names.len());
    for name in &names {
        let method = args.common.method(name)?;
        let param = args.common.param_for(&method);
        let est = estimate_order(&problem, &method, param, &args.steps)?;
        if !est.monotone {
            eprintln!("warning: {} errors are not strictly decreasing", est.method);
        }
        estimates.push(est);
    }
    args.common.emit(&convergence_csv(&estimates))
}

fn run_defects(args: DefectsArgs) -> Result<()> {
    let problem = load_mixture(args.config.as_ref(), args.common.seed)?;
    let mut methods = Vec::with_capacity(args.scheme.len());
    for name in &args.scheme {
        let method = args.common.method(name)?;
        let param = args.common.param_for(&method);
        methods.push((method, param));
    }
    let reports = measure_defects(&problem, &methods, &args.nfe, args.schedule.kind()?)?;
    args.common.emit(&defects_csv(&reports))
}

fn run_sample(args: SampleArgs) -> Result<()> {
    let method = args.common.method(&args.scheme)?;
    let param = args.common.param_for(&method);
    let steps = match (args.steps, args.nfe) {
        (Some(0), _) => return Err(Error::Usage("--steps must be at least 1".into())),
        (Some(s), _) => s,
        (None, Some(n)) => method.steps_for_nfe(n.saturating_sub(usize::from(args.final_denoise))),
        (None, None) => 32,
    };
    let (lo, hi) = match args.problem {
        SampleProblem::Sin => {
            let p = SinProblem::standard(args.dim);
            (p.sigma_end(), p.sigma_start())
        }
        _ => (0.002, 80.0),
    };
    let lo = args.sigma_min.unwrap_or(lo);
    let hi = args.sigma_max.unwrap_or(hi);
    let grid = schedule(args.schedule.kind()?, NoiseLevel::new(lo)?, NoiseLevel::new(hi)?, steps + 1)?;
    let opts = SolveOptions {
        x0: args.x0.clone(),
        etas: if args.eta == 0.0 { Vec::new() } else { vec![args.eta; steps] },
        final_denoise: args.final_denoise,
        seed: args.common.seed,
    };
    let run = match args.problem {
        SampleProblem::Mixture => {
            let problem = load_mixture(args.config.as_ref(), args.common.seed)?;
            solve(&grid, &method, param, &mixture_denoiser(problem.mixture), &opts)?
        }
        SampleProblem::Gaussian => {
            let m = GaussianMixture::single(vec![0.0; args.dim], args.scale)?;
            solve(&grid, &method, param, &mixture_denoiser(m), &opts)?
        }
        SampleProblem::Const => {
            let kappa = args.kappa;
            let d = FnDenoiser::new(args.dim, move |_: &[f64], _| vec![kappa; args.dim]);
            solve(&grid, &method, param, &d, &opts)?
        }
        SampleProblem::Sin => {
            let p = SinProblem::standard(args.dim);
            let d = manufactured_g(p.trajectory.clone(), p.stiffness);
            let opts = SolveOptions { x0: opts.x0.clone().or_else(|| Some(p.exact_start())), ..opts };
            solve(&grid, &method, param, &d, &opts)?
        }
    };
    check_nfe(&method, steps, args.final_denoise, run.nfe)?;
    eprintln!("nfe={} steps={steps} clamped={}", run.nfe, run.clamped_steps.len());
    args.common.emit(&trace_csv(&run))
}

fn run_eta(args: EtaArgs) -> Result<()> {
    let problem = load_mixture(args.config.as_ref(), args.common.seed)?;
    let method = args.common.method(&args.scheme)?;
    let param = args.common.param_for(&method);
    let points = eta_sweep(&problem, &method, param, args.nfe, &args.eta, args.schedule.kind()?)?;
    args.common.emit(&eta_csv(method.name(), &points))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PsiCheck(a) => run_psi(a),
        Command::Convergence(a) => run_convergence(a),
        Command::Defects(a) => run_defects(a),
        Command::Sample(a) => run_sample(a),
        Command::EtaSweep(a) => run_eta(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

