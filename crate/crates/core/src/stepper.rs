//! Solvers for the probability-flow ODE.
//!
//! Exponential schemes run in one of the two semilinear coordinate systems
//! (logSNR with the denoiser, negative logSNR with noise prediction) and treat
//! the `-x` term exactly. Classical schemes (Heun, RK4) integrate the velocity
//! of any parametrization as a black box.
//!
//! Function-evaluation accounting (`N` = schedule steps):
//!
//! | method                    | NFE        |
//! |---------------------------|------------|
//! | exponential, `s` stages   | `s·N`      |
//! | second-order multistep    | `N`        |
//! | Heun                      | `2N`       |
//! | RK4                       | `4N`       |
//!
//! plus one when the final denoising step is enabled. Stage 1 of a
//! single-step scheme is evaluated fresh every step; only the multistep update
//! reuses the previous step's evaluation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::Denoiser;
use crate::error::{domain, Error, Result};
use crate::param::{
    uniform_lambda_schedule, NoiseLevel, Parametrization, Schedule, StateVector,
};
use crate::tableau::{concretize_signed, ConcreteTableau, SchemeId, TableauSpec, MAX_STAGES};

/// A sampler: single-step tableau, second-order multistep, or classical.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Single-step scheme; exponential or classical depending on the spec.
    SingleStep(TableauSpec),
    /// Second-order RES multistep update, bootstrapped by exponential Euler.
    Multistep2,
}

impl Method {
    pub fn scheme(scheme: SchemeId) -> Self {
        Method::SingleStep(TableauSpec::default_for(scheme))
    }

    /// Parse a method name (`expeuler`, `res2`, `res3`, `dpmpp2`, `dpmpp3`,
    /// `heun`, `rk4`, `res2m`) with optional node overrides.
    pub fn parse(name: &str, c2: Option<f64>, c3: Option<f64>) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        if lower == "res2m" || lower == "res2-multistep" {
            return Ok(Method::Multistep2);
        }
        let scheme = SchemeId::parse(&lower)
            .ok_or_else(|| Error::Usage(format!("unknown scheme `{name}`")))?;
        Ok(Method::SingleStep(TableauSpec::with_nodes(scheme, c2, c3)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::SingleStep(spec) => spec.scheme().name(),
            Method::Multistep2 => "res2m",
        }
    }

    pub fn is_exponential(&self) -> bool {
        match self {
            Method::SingleStep(spec) => spec.is_exponential(),
            Method::Multistep2 => true,
        }
    }

    /// Denoiser evaluations per step.
    pub fn evals_per_step(&self) -> usize {
        match self {
            Method::SingleStep(spec) => spec.stages(),
            Method::Multistep2 => 1,
        }
    }

    /// Total NFE for `steps` steps.
    pub fn nfe(&self, steps: usize, final_denoise: bool) -> u64 {
        (self.evals_per_step() * steps) as u64 + u64::from(final_denoise)
    }

    /// Steps affordable within an NFE budget (at least one).
    pub fn steps_for_nfe(&self, nfe: usize) -> usize {
        (nfe / self.evals_per_step()).max(1)
    }

    fn check_param(&self, param: Parametrization) -> Result<()> {
        if self.is_exponential() && !param.is_semilinear() {
            return Err(Error::Usage(format!(
                "{} needs a semilinear parametrization (logsnr or neglogsnr), got {param}",
                self.name()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Semilinear nonlinearity `g(state, t)` in the coordinates of `param`.
fn nonlinearity<D: Denoiser + ?Sized>(
    param: Parametrization,
    denoiser: &D,
    state: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    match param {
        Parametrization::LogSnr => denoiser.denoise(state, (-t).exp()),
        Parametrization::NegLogSnr => {
            let sigma = t.exp();
            let x: Vec<f64> = state.iter().map(|y| y * sigma).collect();
            let d = denoiser.denoise(&x, sigma)?;
            Ok(x.iter().zip(&d).map(|(x, d)| (x - d) / sigma).collect())
        }
        Parametrization::Edm => Err(Error::Usage("EDM coordinates are not semilinear".into())),
    }
}

/// Full right-hand side `f(state, t)` in the coordinates of `param`.
fn rhs<D: Denoiser + ?Sized>(
    param: Parametrization,
    denoiser: &D,
    state: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    match param {
        Parametrization::Edm => {
            let d = denoiser.denoise(state, t)?;
            Ok(state.iter().zip(&d).map(|(x, d)| (x - d) / t).collect())
        }
        _ => {
            let g = nonlinearity(param, denoiser, state, t)?;
            Ok(state.iter().zip(&g).map(|(s, g)| g - s).collect())
        }
    }
}

/// One exponential step in flavor coordinates. Returns the new state and
/// the stage-1 evaluation `g(state, t)`.
fn exponential_step<D: Denoiser + ?Sized>(
    param: Parametrization,
    denoiser: &D,
    state: &[f64],
    t: f64,
    tab: &ConcreteTableau,
    first: Option<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = tab.h();
    let s = tab.stages();
    let c = tab.c();
    let mut evals: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut stage = vec![0.0; state.len()];
    for i in 0..s {
        let g = if i == 0 {
            match &first {
                Some(g) => g.clone(),
                None => nonlinearity(param, denoiser, state, t)?,
            }
        } else {
            let decay = (-c[i] * h).exp();
            for (k, v) in stage.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, g) in evals.iter().enumerate() {
                    acc += tab.a(i, j) * g[k];
                }
                *v = decay * state[k] + h * acc;
            }
            nonlinearity(param, denoiser, &stage, t + c[i] * h)?
        };
        evals.push(g);
    }
    let decay = (-h).exp();
    let b = tab.b();
    let next = (0..state.len())
        .map(|k| {
            let acc: f64 = evals.iter().zip(b).map(|(g, bi)| bi * g[k]).sum();
            decay * state[k] + h * acc
        })
        .collect();
    Ok((next, evals.swap_remove(0)))
}

/// One classical explicit RK step of size `dt` on `f(state, t)`.
fn classical_step<D: Denoiser + ?Sized>(
    param: Parametrization,
    denoiser: &D,
    state: &[f64],
    t: f64,
    dt: f64,
    tab: &ConcreteTableau,
) -> Result<Vec<f64>> {
    let s = tab.stages();
    let c = tab.c();
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(MAX_STAGES);
    let mut stage = vec![0.0; state.len()];
    for i in 0..s {
        let k = if i == 0 {
            rhs(param, denoiser, state, t)?
        } else {
            for (m, v) in stage.iter_mut().enumerate() {
                let acc: f64 = ks.iter().enumerate().map(|(j, k)| tab.a(i, j) * k[m]).sum();
                *v = state[m] + dt * acc;
            }
            rhs(param, denoiser, &stage, t + c[i] * dt)?
        };
        ks.push(k);
    }
    let b = tab.b();
    Ok((0..state.len())
        .map(|m| state[m] + dt * ks.iter().zip(b).map(|(k, bi)| bi * k[m]).sum::<f64>())
        .collect())
}

/// Inputs for one step from `sigma_from` down to `sigma_to`.
#[derive(Debug, Clone)]
pub struct StepContext {
    /// Current state in x-space.
    pub x: StateVector,
    pub sigma_from: NoiseLevel,
    pub sigma_to: NoiseLevel,
    pub param: Parametrization,
    pub spec: TableauSpec,
    /// Previous `(t, g)` pairs in the parametrization's time coordinate,
    /// newest last. Used by [`multistep_step`].
    pub history: Vec<(f64, Vec<f64>)>,
}

impl StepContext {
    pub fn new(
        x: Vec<f64>,
        sigma_from: f64,
        sigma_to: f64,
        param: Parametrization,
        spec: TableauSpec,
    ) -> Result<Self> {
        Ok(Self {
            x: StateVector::x(x),
            sigma_from: NoiseLevel::new(sigma_from)?,
            sigma_to: NoiseLevel::new(sigma_to)?,
            param,
            spec,
            history: Vec::new(),
        })
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.x.space != crate::param::Space::X {
            return Err(Error::Usage("step context state must be in x-space".into()));
        }
        if self.x.values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.x.values.len() });
        }
        if self.sigma_to.get() > self.sigma_from.get() {
            return Err(domain("steps must move toward lower noise"));
        }
        Ok(())
    }
}

/// Result of one step plus what a multistep successor needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x: StateVector,
    /// `(t_n, g(x_n, t_n))` evaluated at the start of the step, if the scheme
    /// produced one.
    pub first_eval: Option<(f64, Vec<f64>)>,
}

/// One single-step update (exponential per the tableau, or classical).
///
/// ```
/// use res_core::denoiser::FnDenoiser;
/// use res_core::param::Parametrization;
/// use res_core::stepper::{single_step, StepContext};
/// use res_core::tableau::TableauSpec;
///
/// // constant nonlinearity: exponential Euler is exact
/// let kappa = FnDenoiser::new(1, |_: &[f64], _| vec![3.0]);
/// let ctx = StepContext::new(vec![1.0], 1.0, (-0.5f64).exp(), Parametrization::LogSnr,
///     TableauSpec::exp_euler()).unwrap();
/// let x = single_step(&ctx, &kappa).unwrap();
/// let h = 0.5f64;
/// let exact = (-h).exp() * 1.0 + (1.0 - (-h).exp()) * 3.0;
/// assert!((x.values[0] - exact).abs() < 1e-14);
/// ```
pub fn single_step<D: Denoiser + ?Sized>(ctx: &StepContext, denoiser: &D) -> Result<StateVector> {
    Ok(single_step_with(ctx, denoiser, None)?.x)
}

/// [`single_step`] with an optional cached stage-1 evaluation at
/// `(x_n, σ_from)`, in the parametrization's coordinates.
pub fn single_step_with<D: Denoiser + ?Sized>(
    ctx: &StepContext,
    denoiser: &D,
    cached_first: Option<Vec<f64>>,
) -> Result<StepOutput> {
    ctx.check(denoiser.dim())?;
    let param = ctx.param;
    let (sf, st) = (ctx.sigma_from.get(), ctx.sigma_to.get());
    let t0 = param.time_of(sf);
    let t1 = param.time_of(st);
    let h = t1 - t0;
    if h == 0.0 {
        return Ok(StepOutput { x: ctx.x.clone(), first_eval: None });
    }
    let tab = concretize_signed(&ctx.spec, h)?;
    let state = param.encode(&ctx.x.values, sf);
    if ctx.spec.is_exponential() {
        Method::SingleStep(ctx.spec.clone()).check_param(param)?;
        let (next, g1) = exponential_step(param, denoiser, &state, t0, &tab, cached_first)?;
        Ok(StepOutput {
            x: StateVector::x(param.decode(&next, st)),
            first_eval: Some((t0, g1)),
        })
    } else {
        let next = classical_step(param, denoiser, &state, t0, h, &tab)?;
        Ok(StepOutput { x: StateVector::x(param.decode(&next, st)), first_eval: None })
    }
}

/// Second-order multistep update reusing the newest history entry
/// `(t_{n-1}, g(x_{n-1}, t_{n-1}))`. Exactly one new evaluation.
///
/// With `c_2 = (t_{n-1} - t_n)/h < 0` the weights are
/// `b_1 = φ_1(-h) - φ_2(-h)/c_2`, `b_2 = φ_2(-h)/c_2`.
pub fn multistep_step<D: Denoiser + ?Sized>(ctx: &StepContext, denoiser: &D) -> Result<StepOutput> {
    ctx.check(denoiser.dim())?;
    let param = ctx.param;
    if !param.is_semilinear() {
        return Err(Error::Usage("multistep update needs a semilinear parametrization".into()));
    }
    let (t_prev, g_prev) = ctx.history.last().ok_or(Error::BootstrapRequired)?;
    let (sf, st) = (ctx.sigma_from.get(), ctx.sigma_to.get());
    let t0 = param.time_of(sf);
    let h = param.time_of(st) - t0;
    if h == 0.0 {
        return Ok(StepOutput { x: ctx.x.clone(), first_eval: None });
    }
    let c2 = (t_prev - t0) / h;
    let tab = concretize_signed(&TableauSpec::res2_multistep(c2)?, h)?;
    let state = param.encode(&ctx.x.values, sf);
    let g_now = nonlinearity(param, denoiser, &state, t0)?;
    let (b1, b2) = (tab.b()[0], tab.b()[1]);
    let decay = (-h).exp();
    let next: Vec<f64> = (0..state.len())
        .map(|k| decay * state[k] + h * (b1 * g_now[k] + b2 * g_prev[k]))
        .collect();
    Ok(StepOutput {
        x: StateVector::x(param.decode(&next, st)),
        first_eval: Some((t0, g_now)),
    })
}

/// Outcome of one churned step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnOutput {
    pub x: Vec<f64>,
    /// The raised noise level `σ̄` the deterministic step started from.
    pub sigma_hat: f64,
    /// True when `(1+η)σ` exceeded `sigma_cap` and was clamped.
    pub clamped: bool,
}

/// Raise the noise from `σ_i` to `σ̄ = (1+η)σ_i` (capped at `sigma_cap`) with
/// fresh Gaussian noise, then take one deterministic step from `σ̄` to
/// `σ_{i+1}`. With `η = 0` no noise is drawn.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_step<D: Denoiser + ?Sized, R: rand::Rng>(
    x: &[f64],
    sigma: f64,
    sigma_next: f64,
    eta: f64,
    sigma_cap: f64,
    rng: &mut R,
    spec: &TableauSpec,
    param: Parametrization,
    denoiser: &D,
) -> Result<ChurnOutput> {
    let (xbar, sigma_hat, clamped) = churn(x, sigma, eta, sigma_cap, rng)?;
    let ctx = StepContext::new(xbar, sigma_hat, sigma_next, param, spec.clone())?;
    let out = single_step(&ctx, denoiser)?;
    Ok(ChurnOutput { x: out.values, sigma_hat, clamped })
}

/// The noise-injection half of [`stochastic_step`].
pub fn churn<R: rand::Rng>(
    x: &[f64],
    sigma: f64,
    eta: f64,
    sigma_cap: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, bool)> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(domain(format!("eta must be non-negative, got {eta}")));
    }
    if eta == 0.0 {
        return Ok((x.to_vec(), sigma, false));
    }
    let raised = sigma + eta * sigma;
    let (sigma_hat, clamped) = if raised > sigma_cap {
        (sigma_cap.max(sigma), true)
    } else {
        (raised, false)
    };
    let amp = (sigma_hat * sigma_hat - sigma * sigma).max(0.0).sqrt();
    let xbar = x
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + amp * e
        })
        .collect();
    Ok((xbar, sigma_hat, clamped))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveOptions {
    /// Initial state at `σ_0`; drawn from `N(0, σ_0² I)` when absent.
    pub x0: Option<Vec<f64>>,
    /// Per-step churn `η_i`; empty means deterministic.
    pub etas: Vec<f64>,
    /// Finish with `x ← D(x, σ_N)`.
    pub final_denoise: bool,
    pub seed: u64,
}

impl SolveOptions {
    pub fn from_x0(x0: Vec<f64>) -> Self {
        Self { x0: Some(x0), ..Self::default() }
    }
}

/// A finished trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRun {
    pub schedule: Schedule,
    pub method: String,
    pub param: Parametrization,
    /// Terminal sample (after the final denoising step if enabled).
    pub x_final: Vec<f64>,
    /// `(σ_i, x_i)` for every grid point of the schedule.
    pub trace: Vec<(f64, Vec<f64>)>,
    /// Evaluations observed on the denoiser's counter during the solve.
    pub nfe: u64,
    pub seed: u64,
    /// Steps whose churned noise level was clamped to `σ_0`.
    pub clamped_steps: Vec<usize>,
    pub final_denoised: bool,
}

impl SolveRun {
    /// State at `σ_N` before any final denoising.
    pub fn x_at_sigma_min(&self) -> &[f64] {
        &self.trace.last().expect("trace is never empty").1
    }
}

/// Run `method` over `schedule`.
pub fn solve<D: Denoiser + ?Sized>(
    schedule: &Schedule,
    method: &Method,
    param: Parametrization,
    denoiser: &D,
    options: &SolveOptions,
) -> Result<SolveRun> {
    if schedule.is_empty() {
        return Err(domain("empty schedule"));
    }
    method.check_param(param)?;
    let steps = schedule.steps();
    let etas = if options.etas.is_empty() {
        vec![0.0; steps]
    } else if options.etas.len() == steps {
        options.etas.clone()
    } else {
        return Err(Error::Usage(format!(
            "expected {steps} eta values, got {}",
            options.etas.len()
        )));
    };
    if let Some(bad) = etas.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(domain(format!("eta must be non-negative, got {bad}")));
    }
    let stochastic = etas.iter().any(|e| *e > 0.0);
    if stochastic && matches!(method, Method::Multistep2) {
        return Err(Error::Usage("churn is only defined for single-step methods".into()));
    }

    let dim = denoiser.dim();
    let sigmas = schedule.sigmas();
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut x = match &options.x0 {
        Some(x0) if x0.len() != dim => {
            return Err(Error::DimensionMismatch { expected: dim, got: x0.len() })
        }
        Some(x0) => x0.clone(),
        None => (0..dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                sigmas[0] * e
            })
            .collect(),
    };

    let start = denoiser.evaluations();
    let mut trace = Vec::with_capacity(sigmas.len());
    trace.push((sigmas[0], x.clone()));
    let mut history: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut clamped_steps = Vec::new();
    let bootstrap = TableauSpec::exp_euler();

    for i in 0..steps {
        let (s_now, s_next) = (sigmas[i], sigmas[i + 1]);
        let (xbar, s_from, clamped) = churn(&x, s_now, etas[i], sigmas[0], &mut rng)?;
        if clamped {
            clamped_steps.push(i);
        }
        x = match method {
            Method::SingleStep(spec) => {
                let ctx = StepContext::new(xbar, s_from, s_next, param, spec.clone())?;
                single_step_with(&ctx, denoiser, None)?.x.values
            }
            Method::Multistep2 => {
                let mut ctx = StepContext::new(xbar, s_from, s_next, param, bootstrap.clone())?;
                let out = if history.is_empty() {
                    single_step_with(&ctx, denoiser, None)?
                } else {
                    ctx.history = std::mem::take(&mut history);
                    multistep_step(&ctx, denoiser)?
                };
                if let Some(entry) = out.first_eval {
                    history = vec![entry];
                }
                out.x.values
            }
        };
        trace.push((s_next, x.clone()));
    }

    let mut x_final = x;
    if options.final_denoise {
        x_final = denoiser.denoise(&x_final, schedule.sigma_min())?;
    }
    Ok(SolveRun {
        schedule: schedule.clone(),
        method: method.name().to_string(),
        param,
        x_final,
        trace,
        nfe: denoiser.evaluations() - start,
        seed: options.seed,
        clamped_steps,
        final_denoised: options.final_denoise,
    })
}

/// Heun's method over `schedule` in `param`'s coordinates.
pub fn heun_solve<D: Denoiser + ?Sized>(
    schedule: &Schedule,
    param: Parametrization,
    denoiser: &D,
    options: &SolveOptions,
) -> Result<SolveRun> {
    solve(schedule, &Method::SingleStep(TableauSpec::heun()), param, denoiser, options)
}

/// Classical RK4 over `schedule` in `param`'s coordinates.
pub fn rk4_solve<D: Denoiser + ?Sized>(
    schedule: &Schedule,
    param: Parametrization,
    denoiser: &D,
    options: &SolveOptions,
) -> Result<SolveRun> {
    solve(schedule, &Method::SingleStep(TableauSpec::rk4()), param, denoiser, options)
}

/// RK4 on a uniform-λ grid of `steps` steps in logSNR coordinates, the
/// ground-truth reference for `x(σ_to)` starting from `x0` at `σ_from`.
pub fn rk4_reference<D: Denoiser + ?Sized>(
    denoiser: &D,
    x0: &[f64],
    sigma_from: f64,
    sigma_to: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let grid = uniform_lambda_schedule(
        NoiseLevel::new(sigma_to)?,
        NoiseLevel::new(sigma_from)?,
        steps + 1,
    )?;
    let run = rk4_solve(&grid, Parametrization::LogSnr, denoiser, &SolveOptions::from_x0(x0.to_vec()))?;
    Ok(run.x_final)
}
