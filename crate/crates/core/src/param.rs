//! Coordinates for the probability-flow ODE and the σ-schedules that
//! discretize it.
//!
//! | parametrization   | state        | time           | right-hand side            |
//! |-------------------|--------------|----------------|----------------------------|
//! | EDM               | `x`          | `σ`            | `(x - D(x, σ)) / σ`        |
//! | logSNR            | `x`          | `λ = -log σ`   | `-x + D(x, e^{-λ})`        |
//! | negative logSNR   | `y = x / σ`  | `λ = log σ`    | `-y + ε(e^{λ} y, e^{λ})`   |
//!
//! The last two are semilinear and are what the exponential schemes integrate.

use std::fmt;
use std::io::{BufRead, Write};

use crate::denoiser::{Denoiser, NoisePredictor};
use crate::error::{domain, Error, Result};

/// Standard deviation of the added Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self(sigma))
        } else {
            Err(domain(format!("noise level must be positive and finite, got {sigma}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogSnrFlavor {
    /// `λ_D = -log σ`, paired with the data-prediction denoiser.
    Data,
    /// `λ_ε = log σ`, paired with noise prediction.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSnrTime {
    pub lambda: f64,
    pub flavor: LogSnrFlavor,
}

pub fn sigma_to_lambda(sigma: NoiseLevel, flavor: LogSnrFlavor) -> LogSnrTime {
    let l = sigma.get().ln();
    let lambda = match flavor {
        LogSnrFlavor::Data => -l,
        LogSnrFlavor::Noise => l,
    };
    LogSnrTime { lambda, flavor }
}

pub fn lambda_to_sigma(t: LogSnrTime) -> Result<NoiseLevel> {
    let sigma = match t.flavor {
        LogSnrFlavor::Data => (-t.lambda).exp(),
        LogSnrFlavor::Noise => t.lambda.exp(),
    };
    NoiseLevel::new(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    X,
    Y,
}

/// A sample-space point tagged with the coordinates it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub space: Space,
}

impl StateVector {
    pub fn x(values: Vec<f64>) -> Self {
        Self { values, space: Space::X }
    }

    pub fn y(values: Vec<f64>) -> Self {
        Self { values, space: Space::Y }
    }
}

pub fn to_y_space(x: &StateVector, sigma: NoiseLevel) -> Result<StateVector> {
    if x.space != Space::X {
        return Err(Error::Usage("to_y_space expects an x-space vector".into()));
    }
    let s = sigma.get();
    Ok(StateVector::y(x.values.iter().map(|v| v / s).collect()))
}

pub fn from_y_space(y: &StateVector, sigma: NoiseLevel) -> Result<StateVector> {
    if y.space != Space::Y {
        return Err(Error::Usage("from_y_space expects a y-space vector".into()));
    }
    let s = sigma.get();
    Ok(StateVector::x(y.values.iter().map(|v| v * s).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parametrization {
    Edm,
    LogSnr,
    NegLogSnr,
}

impl Parametrization {
    pub fn is_semilinear(self) -> bool {
        !matches!(self, Parametrization::Edm)
    }

    pub fn flavor(self) -> Option<LogSnrFlavor> {
        match self {
            Parametrization::Edm => None,
            Parametrization::LogSnr => Some(LogSnrFlavor::Data),
            Parametrization::NegLogSnr => Some(LogSnrFlavor::Noise),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parametrization::Edm => "edm",
            Parametrization::LogSnr => "logsnr",
            Parametrization::NegLogSnr => "neglogsnr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Edm, Self::LogSnr, Self::NegLogSnr]
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
    }

    /// Space the ODE state lives in.
    pub fn space(self) -> Space {
        match self {
            Parametrization::NegLogSnr => Space::Y,
            _ => Space::X,
        }
    }

    /// Time coordinate of a noise level.
    pub fn time_of(self, sigma: f64) -> f64 {
        match self {
            Parametrization::Edm => sigma,
            Parametrization::LogSnr => -sigma.ln(),
            Parametrization::NegLogSnr => sigma.ln(),
        }
    }

    pub fn sigma_of(self, t: f64) -> f64 {
        match self {
            Parametrization::Edm => t,
            Parametrization::LogSnr => (-t).exp(),
            Parametrization::NegLogSnr => t.exp(),
        }
    }

    /// Map an x-space point into this parametrization's state.
    pub fn encode(self, x: &[f64], sigma: f64) -> Vec<f64> {
        match self {
            Parametrization::NegLogSnr => x.iter().map(|v| v / sigma).collect(),
            _ => x.to_vec(),
        }
    }

    pub fn decode(self, state: &[f64], sigma: f64) -> Vec<f64> {
        match self {
            Parametrization::NegLogSnr => state.iter().map(|v| v * sigma).collect(),
            _ => state.to_vec(),
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// ODE right-hand side in the coordinates of `param`.
///
/// `state` must be in [`Parametrization::space`]: x-space for EDM and logSNR,
/// y-space for negative logSNR.
pub fn velocity<D: Denoiser + ?Sized>(
    param: Parametrization,
    state: &StateVector,
    sigma: NoiseLevel,
    denoiser: &D,
) -> Result<Vec<f64>> {
    if state.space != param.space() {
        return Err(Error::Usage(format!(
            "{param} velocity expects a {:?}-space state",
            param.space()
        )));
    }
    let s = sigma.get();
    match param {
        Parametrization::Edm => {
            let d = denoiser.denoise(&state.values, s)?;
            Ok(state.values.iter().zip(&d).map(|(x, d)| (x - d) / s).collect())
        }
        Parametrization::LogSnr => {
            let d = denoiser.denoise(&state.values, s)?;
            Ok(state.values.iter().zip(&d).map(|(x, d)| d - x).collect())
        }
        Parametrization::NegLogSnr => {
            let x: Vec<f64> = state.values.iter().map(|y| y * s).collect();
            let eps = NoisePredictor::new(denoiser).predict(&x, s)?;
            Ok(state.values.iter().zip(&eps).map(|(y, e)| e - y).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    EdmRho(f64),
    UniformSigma,
    UniformLambda,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::EdmRho(_) => "edm",
            ScheduleKind::UniformSigma => "uniform-sigma",
            ScheduleKind::UniformLambda => "uniform-lambda",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            ScheduleKind::EdmRho(r) => Some(*r),
            _ => None,
        }
    }
}

/// A strictly decreasing list of noise levels `σ_0 > … > σ_N > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    sigmas: Vec<f64>,
    kind: ScheduleKind,
}

impl Schedule {
    /// Validate an explicit σ list.
    pub fn from_sigmas(sigmas: Vec<f64>, kind: ScheduleKind) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(domain("schedule must not be empty"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(domain("schedule entries must be positive and finite"));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(domain("schedule must be strictly decreasing"));
        }
        Ok(Self { sigmas, kind })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// `λ_D = -log σ` at every grid point.
    pub fn lambdas(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| -s.ln()).collect()
    }

    /// Write a single `sigma` column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sigma")?;
        for s in &self.sigmas {
            writeln!(out, "{s:e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, kind: ScheduleKind) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "sigma" => {}
            _ => return Err(Error::Config("expected a `sigma` header".into())),
        }
        let mut sigmas = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            sigmas.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad sigma `{line}`: {e}")))?,
            );
        }
        Self::from_sigmas(sigmas, kind)
    }
}

fn check_range(sigma_min: NoiseLevel, sigma_max: NoiseLevel, n: usize) -> Result<()> {
    if n < 2 {
        return Err(domain(format!("schedule needs at least 2 grid points, got {n}")));
    }
    if sigma_min.get() >= sigma_max.get() {
        return Err(domain("sigma_min must be below sigma_max"));
    }
    Ok(())
}

/// `σ_i = (σ_max^{1/ρ} + i/(N-1) (σ_min^{1/ρ} - σ_max^{1/ρ}))^ρ` for
/// `i = 0..N`, with the endpoints pinned exactly.
///
/// ```
/// use res_core::param::{edm_schedule, NoiseLevel};
/// let s = edm_schedule(NoiseLevel::new(0.002).unwrap(), NoiseLevel::new(80.0).unwrap(), 3, 1.0).unwrap();
/// assert_eq!(s.sigmas()[0], 80.0);
/// assert!((s.sigmas()[1] - 40.001).abs() < 1e-12);
/// assert_eq!(s.sigmas()[2], 0.002);
/// ```
pub fn edm_schedule(
    sigma_min: NoiseLevel,
    sigma_max: NoiseLevel,
    n: usize,
    rho: f64,
) -> Result<Schedule> {
    check_range(sigma_min, sigma_max, n)?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(domain(format!("rho must be positive, got {rho}")));
    }
    let (lo, hi) = (sigma_min.get(), sigma_max.get());
    let a = hi.powf(1.0 / rho);
    let b = lo.powf(1.0 / rho);
    let last = n - 1;
    let sigmas = (0..n)
        .map(|i| match i {
            0 => hi,
            i if i == last => lo,
            i => (a + i as f64 / last as f64 * (b - a)).powf(rho),
        })
        .collect();
    Schedule::from_sigmas(sigmas, ScheduleKind::EdmRho(rho))
}

pub fn uniform_sigma_schedule(
    sigma_min: NoiseLevel,
    sigma_max: NoiseLevel,
    n: usize,
) -> Result<Schedule> {
    check_range(sigma_min, sigma_max, n)?;
    let (lo, hi) = (sigma_min.get(), sigma_max.get());
    let last = n - 1;
    let sigmas = (0..n)
        .map(|i| match i {
            0 => hi,
            i if i == last => lo,
            i => hi + i as f64 / last as f64 * (lo - hi),
        })
        .collect();
    Schedule::from_sigmas(sigmas, ScheduleKind::UniformSigma)
}

/// Geometric spacing in σ, i.e. uniform in `λ = -log σ`.
pub fn uniform_lambda_schedule(
    sigma_min: NoiseLevel,
    sigma_max: NoiseLevel,
    n: usize,
) -> Result<Schedule> {
    check_range(sigma_min, sigma_max, n)?;
    let (lo, hi) = (sigma_min.get(), sigma_max.get());
    let (la, lb) = (-hi.ln(), -lo.ln());
    let last = n - 1;
    let sigmas = (0..n)
        .map(|i| match i {
            0 => hi,
            i if i == last => lo,
            i => (-(la + i as f64 / last as f64 * (lb - la))).exp(),
        })
        .collect();
    Schedule::from_sigmas(sigmas, ScheduleKind::UniformLambda)
}

/// Build a schedule of `kind` with `n` grid points.
pub fn schedule(
    kind: ScheduleKind,
    sigma_min: NoiseLevel,
    sigma_max: NoiseLevel,
    n: usize,
) -> Result<Schedule> {
    match kind {
        ScheduleKind::EdmRho(rho) => edm_schedule(sigma_min, sigma_max, n, rho),
        ScheduleKind::UniformSigma => uniform_sigma_schedule(sigma_min, sigma_max, n),
        ScheduleKind::UniformLambda => uniform_lambda_schedule(sigma_min, sigma_max, n),
    }
}
