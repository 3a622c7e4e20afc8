//! Experiment harness: defects against reference solutions, empirical
//! convergence orders, churn sweeps and their CSV encodings.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{
    manufactured_g, mixture_denoiser, GaussianMixture, SinTrajectory, Trajectory,
};
use crate::error::{Error, Result};
use crate::param::{schedule, uniform_lambda_schedule, NoiseLevel, Parametrization, ScheduleKind};
use crate::stepper::{rk4_reference, solve, Method, SolveOptions};
use crate::tableau::{audit_order, AuditReport, TableauSpec};

/// Steps used for the RK4 reference.
pub const REFERENCE_STEPS: usize = 10_000;
/// Relative tolerance of the reference's half-resolution self-check.
pub const REFERENCE_TOL: f64 = 1e-8;

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Compare an observed evaluation count with the method's NFE formula.
pub fn check_nfe(method: &Method, steps: usize, final_denoise: bool, observed: u64) -> Result<()> {
    let expected = method.nfe(steps, final_denoise);
    if observed != expected {
        return Err(Error::NfeMismatch { expected, got: observed });
    }
    Ok(())
}

/// Default parametrization for a method: logSNR for exponential schemes,
/// EDM σ-time for classical ones.
pub fn default_param(method: &Method) -> Parametrization {
    if method.is_exponential() {
        Parametrization::LogSnr
    } else {
        Parametrization::Edm
    }
}

/// Manufactured problem `dx/dλ = -x + g(x, λ)` on `[λ_start, λ_start + span]`
/// with a sinusoidal exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SinProblem {
    pub name: String,
    pub trajectory: SinTrajectory,
    pub stiffness: f64,
    pub lambda_start: f64,
    pub span: f64,
}

impl SinProblem {
    /// `x̂_k(λ) = sin(λ + kπ/4)`, `L = 0.5`, `λ ∈ [0, 4]`.
    pub fn standard(dim: usize) -> Self {
        let phase = (0..dim).map(|k| k as f64 * std::f64::consts::FRAC_PI_4).collect();
        Self {
            name: "sin".into(),
            trajectory: SinTrajectory { amplitude: vec![1.0; dim], frequency: vec![1.0; dim], phase },
            stiffness: 0.5,
            lambda_start: 0.0,
            span: 4.0,
        }
    }

    /// Seeded random amplitudes/frequencies/phases with `L ∈ [0, 1)`, the
    /// range of a denoiser Jacobian `Cov[x₀|x]/σ²` for Gaussian data.
    pub fn random(dim: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        Self {
            name: format!("sin-{seed}"),
            trajectory: SinTrajectory::random(dim, seed),
            stiffness: rng.random_range(0.0..1.0),
            lambda_start: 0.0,
            span: 4.0,
        }
    }

    pub fn sigma_start(&self) -> f64 {
        (-self.lambda_start).exp()
    }

    pub fn sigma_end(&self) -> f64 {
        (-(self.lambda_start + self.span)).exp()
    }

    pub fn exact_start(&self) -> Vec<f64> {
        self.trajectory.value(self.lambda_start)
    }

    pub fn exact_end(&self) -> Vec<f64> {
        self.trajectory.value(self.lambda_start + self.span)
    }

    /// L1 error of `method` with `n_steps` uniform-λ steps.
    pub fn error(&self, method: &Method, param: Parametrization, n_steps: usize) -> Result<f64> {
        Ok(l1(&diff(&self.solve_end(method, param, n_steps)?, &self.exact_end())))
    }

    pub fn solve_end(&self, method: &Method, param: Parametrization, n_steps: usize) -> Result<Vec<f64>> {
        let d = manufactured_g(self.trajectory.clone(), self.stiffness);
        let grid = uniform_lambda_schedule(
            NoiseLevel::new(self.sigma_end())?,
            NoiseLevel::new(self.sigma_start())?,
            n_steps + 1,
        )?;
        let x0 = self.trajectory.value(self.lambda_start);
        Ok(solve(&grid, method, param, &d, &SolveOptions::from_x0(x0))?.x_final)
    }
}

/// Fitted convergence order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    pub method: String,
    pub problem: String,
    /// Every measured `(n_steps, error)` pair, including excluded ones.
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub r2: f64,
    /// False when the errors did not decrease strictly with `n_steps`.
    pub monotone: bool,
}

/// Least-squares fit of `(x, y)`; returns `(slope, r²)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Slope of `log(error)` against `log(1/n_steps)`.
pub fn estimate_order(
    problem: &SinProblem,
    method: &Method,
    param: Parametrization,
    n_steps: &[usize],
) -> Result<OrderEstimate> {
    let floor = 1e2 * f64::EPSILON;
    let mut points = Vec::with_capacity(n_steps.len());
    for &n in n_steps {
        points.push((n, problem.error(method, param, n)?));
    }
    let kept: Vec<&(usize, f64)> = points.iter().filter(|(_, e)| *e >= floor).collect();
    if kept.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable points above the rounding floor, need 4",
            kept.len()
        )));
    }
    let xs: Vec<f64> = kept.iter().map(|(n, _)| -(*n as f64).ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|(_, e)| e.ln()).collect();
    let (slope, r2) = fit_line(&xs, &ys);
    let mut sorted = points.clone();
    sorted.sort_by_key(|(n, _)| *n);
    let monotone = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(OrderEstimate {
        method: method.name().into(),
        problem: problem.name.clone(),
        points,
        slope,
        r2,
        monotone,
    })
}

pub const CONVERGENCE_HEADER: &str = "method,problem,n_steps,error,slope,r2";

pub fn convergence_csv(estimates: &[OrderEstimate]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CONVERGENCE_HEADER}");
    for e in estimates {
        for (n, err) in &e.points {
            let _ = writeln!(out, "{},{},{},{:e},{:e},{:e}", e.method, e.problem, n, err, e.slope, e.r2);
        }
    }
    out
}

/// Sampling problem on a Gaussian mixture with a batch of shared initial
/// noises.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureProblem {
    pub mixture: GaussianMixture,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub batch: usize,
    pub seed: u64,
}

impl MixtureProblem {
    /// `d = 8`, four components, `σ ∈ [0.002, 80]`.
    pub fn toy(seed: u64) -> Self {
        Self {
            mixture: GaussianMixture::toy(8, 4, seed),
            sigma_min: 0.002,
            sigma_max: 80.0,
            batch: 4,
            seed,
        }
    }

    /// Initial states `N(0, σ_max² I)`, one per batch element.
    pub fn initial_noise(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        (0..self.batch)
            .map(|_| {
                (0..self.mixture.dim())
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        self.sigma_max * e
                    })
                    .collect()
            })
            .collect()
    }

    /// RK4 references `x(σ_min)` for every initial state, each checked
    /// against a half-resolution solve.
    pub fn references(&self) -> Result<Vec<Vec<f64>>> {
        let inits = self.initial_noise();
        let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
            let handles: Vec<_> = inits
                .iter()
                .map(|x0| {
                    s.spawn(move || {
                        let d = mixture_denoiser(self.mixture.clone());
                        let fine = rk4_reference(&d, x0, self.sigma_max, self.sigma_min, REFERENCE_STEPS)?;
                        let coarse =
                            rk4_reference(&d, x0, self.sigma_max, self.sigma_min, REFERENCE_STEPS / 2)?;
                        let scale = 1.0 + fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        let gap = diff(&fine, &coarse).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        if gap > REFERENCE_TOL * scale {
                            return Err(Error::ReferenceQuality(gap / scale));
                        }
                        Ok(fine)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("reference thread panicked")).collect()
        });
        results.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectReport {
    pub method: String,
    pub param: Parametrization,
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub nfe: u64,
    /// Mean over the batch of `‖x_N - x_ref‖₁`.
    pub defect_l1: f64,
    pub defect_l2: f64,
    pub reference_steps: usize,
    pub reference_nfe: u64,
}

/// Defect of each `(method, parametrization)` at each NFE budget.
///
/// A budget of `nfe` buys `max(1, nfe / evals_per_step)` steps; the reported
/// `nfe` is what was actually spent.
pub fn measure_defects(
    problem: &MixtureProblem,
    methods: &[(Method, Parametrization)],
    nfes: &[usize],
    kind: ScheduleKind,
) -> Result<Vec<DefectReport>> {
    let refs = problem.references()?;
    measure_defects_against(problem, &refs, methods, nfes, kind)
}

/// [`measure_defects`] with precomputed references.
pub fn measure_defects_against(
    problem: &MixtureProblem,
    refs: &[Vec<f64>],
    methods: &[(Method, Parametrization)],
    nfes: &[usize],
    kind: ScheduleKind,
) -> Result<Vec<DefectReport>> {
    let inits = problem.initial_noise();
    let mut reports = Vec::with_capacity(methods.len() * nfes.len());
    for (method, param) in methods {
        for &nfe in nfes {
            let steps = method.steps_for_nfe(nfe);
            let grid = schedule(
                kind,
                NoiseLevel::new(problem.sigma_min)?,
                NoiseLevel::new(problem.sigma_max)?,
                steps + 1,
            )?;
            let d = mixture_denoiser(problem.mixture.clone());
            let (mut sum1, mut sum2) = (0.0, 0.0);
            for (x0, reference) in inits.iter().zip(refs) {
                let run = solve(&grid, method, *param, &d, &SolveOptions::from_x0(x0.clone()))?;
                check_nfe(method, steps, false, run.nfe)?;
                let e = diff(&run.x_final, reference);
                sum1 += l1(&e);
                sum2 += l2(&e);
            }
            let b = inits.len() as f64;
            reports.push(DefectReport {
                method: method.name().into(),
                param: *param,
                schedule: kind,
                steps,
                nfe: method.nfe(steps, false),
                defect_l1: sum1 / b,
                defect_l2: sum2 / b,
                reference_steps: REFERENCE_STEPS,
                reference_nfe: 4 * REFERENCE_STEPS as u64,
            });
        }
    }
    Ok(reports)
}

pub const DEFECTS_HEADER: &str = "method,schedule,rho,nfe,defect_l1,defect_l2";

pub fn defects_csv(reports: &[DefectReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DEFECTS_HEADER}");
    for r in reports {
        let rho = r.schedule.rho().map(|v| format!("{v}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{:e},{:e}",
            r.method,
            r.schedule.name(),
            rho,
            r.nfe,
            r.defect_l1,
            r.defect_l2
        );
    }
    out
}

/// One row of a churn sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaPoint {
    pub eta: f64,
    pub nfe: u64,
    /// Mean L1 distance from the deterministic ODE reference.
    pub defect_l1: f64,
    /// Mean negative log-likelihood of the samples under the clean mixture.
    pub terminal_nll: f64,
}

/// Sweep a constant churn `η` at a fixed NFE budget.
pub fn eta_sweep(
    problem: &MixtureProblem,
    method: &Method,
    param: Parametrization,
    nfe: usize,
    etas: &[f64],
    kind: ScheduleKind,
) -> Result<Vec<EtaPoint>> {
    let refs = problem.references()?;
    let inits = problem.initial_noise();
    let steps = method.steps_for_nfe(nfe);
    let grid = schedule(
        kind,
        NoiseLevel::new(problem.sigma_min)?,
        NoiseLevel::new(problem.sigma_max)?,
        steps + 1,
    )?;
    let mut out = Vec::with_capacity(etas.len());
    for &eta in etas {
        let d = mixture_denoiser(problem.mixture.clone());
        let (mut defect, mut nll) = (0.0, 0.0);
        for (b, (x0, reference)) in inits.iter().zip(&refs).enumerate() {
            let opts = SolveOptions {
                x0: Some(x0.clone()),
                etas: vec![eta; steps],
                final_denoise: false,
                seed: problem.seed.wrapping_add(b as u64 + 1),
            };
            let run = solve(&grid, method, param, &d, &opts)?;
            check_nfe(method, steps, false, run.nfe)?;
            defect += l1(&diff(&run.x_final, reference));
            nll -= problem.mixture.log_density(&run.x_final, 0.0);
        }
        let n = inits.len() as f64;
        out.push(EtaPoint {
            eta,
            nfe: method.nfe(steps, false),
            defect_l1: defect / n,
            terminal_nll: nll / n,
        });
    }
    Ok(out)
}

pub const ETA_HEADER: &str = "method,eta,nfe,defect_l1,terminal_nll";

pub fn eta_csv(method: &str, points: &[EtaPoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ETA_HEADER}");
    for p in points {
        let _ = writeln!(out, "{method},{},{},{:e},{:e}", p.eta, p.nfe, p.defect_l1, p.terminal_nll);
    }
    out
}

pub const PSI_HEADER: &str = "scheme,c2,c3,gamma,condition,max_abs,tolerance,status";

/// Audit a list of specs; returns the reports and their CSV rows.
pub fn psi_check(specs: &[TableauSpec]) -> Result<(Vec<AuditReport>, String)> {
    let mut out = String::new();
    let _ = writeln!(out, "{PSI_HEADER}");
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let rep = audit_order(spec)?;
        let nodes = spec.nodes();
        let c2 = nodes.get(1).map(|v| format!("{v}")).unwrap_or_default();
        let c3 = nodes.get(2).map(|v| format!("{v}")).unwrap_or_default();
        let gamma = spec.gamma().map(|v| format!("{v}")).unwrap_or_default();
        for c in &rep.checks {
            let _ = writeln!(
                out,
                "{},{c2},{c3},{gamma},{},{:e},{:e},{}",
                spec.scheme(),
                c.condition,
                c.max_abs,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        reports.push(rep);
    }
    Ok((reports, out))
}

/// `step,sigma,x0,...` rows of a trajectory.
pub fn trace_csv(run: &crate::stepper::SolveRun) -> String {
    let dim = run.x_final.len();
    let mut out = String::from("step,sigma");
    for k in 0..dim {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for (i, (sigma, x)) in run.trace.iter().enumerate() {
        let _ = write!(out, "{i},{sigma:e}");
        for v in x {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    if run.final_denoised {
        let _ = write!(out, "final,0");
        for v in &run.x_final {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

/// Median of the relative reductions `(b - a) / b` over paired errors.
pub fn median_relative_reduction(pairs: &[(f64, f64)]) -> f64 {
    let mut r: Vec<f64> = pairs.iter().map(|(a, b)| (b - a) / b).collect();
    r.sort_by(|x, y| x.total_cmp(y));
    let n = r.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        r[n / 2]
    } else {
        0.5 * (r[n / 2 - 1] + r[n / 2])
    }
}
