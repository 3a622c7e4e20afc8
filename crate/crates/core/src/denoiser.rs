//! Evaluable denoisers: the nonlinearity of the semilinear flow ODE.
//!
//! Every concrete model owns an [`EvalCounter`]; one call to
//! [`Denoiser::denoise`] is one function evaluation (NFE). Wrappers such as
//! [`NoisePredictor`] and [`ClassifierGuided`] forward to the inner counter, and
//! [`CfgDenoiser`] reports the sum of both branches.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{domain, Error, Result};

/// Atomic evaluation counter. Totals are exact once concurrent callers finish.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// A posterior-mean estimator `D(x, σ)` of clean data.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    /// Evaluate `D(x, σ)`; counts as one function evaluation.
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>>;

    /// Evaluations performed so far.
    fn evaluations(&self) -> u64;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma)
    }
    fn evaluations(&self) -> u64 {
        (**self).evaluations()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma)
    }
    fn evaluations(&self) -> u64 {
        (**self).evaluations()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma)
    }
    fn evaluations(&self) -> u64 {
        (**self).evaluations()
    }
}

fn check_input(dim: usize, x: &[f64], sigma: f64) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(domain(format!("denoiser needs sigma > 0, got {sigma}")));
    }
    Ok(())
}

/// Denoiser backed by a closure.
pub struct FnDenoiser<F> {
    dim: usize,
    f: F,
    counter: EvalCounter,
}

impl<F> FnDenoiser<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, counter: EvalCounter::new() }
    }
}

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_input(self.dim, x, sigma)?;
        self.counter.tick();
        let out = (self.f)(x, sigma);
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: out.len() });
        }
        Ok(out)
    }

    fn evaluations(&self) -> u64 {
        self.counter.get()
    }
}

/// Isotropic Gaussian mixture `Σ w_i N(μ_i, s_i² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(Error::Config(
                "mixture needs matching, non-empty weights/means/scales".into(),
            ));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::Config("all means must share a positive dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("scales must be positive".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("means must be finite".into()));
        }
        Ok(Self { weights, means, scales })
    }

    pub fn single(mean: Vec<f64>, scale: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![scale])
    }

    /// Seeded random mixture: means in `[-2, 2]^d`, scales in `[0.2, 0.6]`.
    pub fn toy(dim: usize, components: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // absorb rounding so the sum is exactly representable as 1
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        let means = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let scales = (0..components).map(|_| rng.random_range(0.2..0.6)).collect();
        Self::new(weights, means, scales).expect("toy mixture is valid")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    fn component_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((w, mu), s)| {
                let var = s * s + sigma * sigma;
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * d * (2.0 * PI * var).ln() - 0.5 * sq / var
            })
            .collect()
    }

    /// `log p(x; σ)` of the noised mixture; `σ = 0` gives the data density.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> f64 {
        log_sum_exp(&self.component_log_terms(x, sigma))
    }

    /// Posterior component probabilities `r_i(x, σ)`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let terms = self.component_log_terms(x, sigma);
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    /// Tweedie posterior mean `Σ r_i (s_i² x + σ² μ_i) / (s_i² + σ²)`.
    pub fn posterior_mean(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let r = self.responsibilities(x, sigma);
        let s2 = sigma * sigma;
        let mut out = vec![0.0; x.len()];
        for ((ri, mu), s) in r.iter().zip(&self.means).zip(&self.scales) {
            let v = s * s;
            let den = v + s2;
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu) {
                *o += ri * (v * xi + s2 * mi) / den;
            }
        }
        out
    }

    /// `∇_x log r_i(x, σ)`: the classifier gradient for component `i`.
    pub fn class_log_grad(&self, i: usize, x: &[f64], sigma: f64) -> Vec<f64> {
        let r = self.responsibilities(x, sigma);
        let s2 = sigma * sigma;
        let grad_k = |k: usize| -> Vec<f64> {
            let var = self.scales[k] * self.scales[k] + s2;
            x.iter().zip(&self.means[k]).map(|(a, m)| -(a - m) / var).collect()
        };
        let mut out = grad_k(i);
        for (k, rk) in r.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(grad_k(k)) {
                *o -= rk * g;
            }
        }
        out
    }

    /// Parse the plain-text `key = value` format:
    ///
    /// ```text
    /// # comment
    /// weights = 0.5, 0.5
    /// scales  = 0.3, 0.3
    /// mean.0  = 1.0, 0.0
    /// mean.1  = -1.0, 0.0
    /// ```
    pub fn from_config(text: &str) -> Result<Self> {
        let mut weights = None;
        let mut scales = None;
        let mut means: Vec<(usize, Vec<f64>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let nums = parse_list(value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            match key {
                "weights" => weights = Some(nums),
                "scales" => scales = Some(nums),
                k if k.starts_with("mean.") => {
                    let idx: usize = k[5..]
                        .parse()
                        .map_err(|_| Error::Config(format!("bad mean index in `{k}`")))?;
                    means.push((idx, nums));
                }
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        let weights = weights.ok_or_else(|| Error::Config("missing `weights`".into()))?;
        let scales = scales.ok_or_else(|| Error::Config("missing `scales`".into()))?;
        means.sort_by_key(|(i, _)| *i);
        if means.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return Err(Error::Config("mean indices must be 0..k without gaps".into()));
        }
        Self::new(weights, means.into_iter().map(|(_, m)| m).collect(), scales)
    }

    pub fn to_config(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "weights = {}", join(&self.weights));
        let _ = writeln!(s, "scales = {}", join(&self.scales));
        for (i, m) in self.means.iter().enumerate() {
            let _ = writeln!(s, "mean.{i} = {}", join(m));
        }
        s
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", t.trim())))
        .collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Exact posterior-mean denoiser of a [`GaussianMixture`].
pub struct MixtureDenoiser {
    mixture: GaussianMixture,
    counter: EvalCounter,
}

impl MixtureDenoiser {
    pub fn new(mixture: GaussianMixture) -> Result<Self> {
        Ok(Self { mixture, counter: EvalCounter::new() })
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }
}

/// Shorthand for [`MixtureDenoiser::new`].
pub fn mixture_denoiser(m: GaussianMixture) -> MixtureDenoiser {
    MixtureDenoiser { mixture: m, counter: EvalCounter::new() }
}

impl Denoiser for MixtureDenoiser {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_input(self.dim(), x, sigma)?;
        self.counter.tick();
        Ok(self.mixture.posterior_mean(x, sigma))
    }

    fn evaluations(&self) -> u64 {
        self.counter.get()
    }
}

/// Noise prediction `ε(x, σ) = (x - D(x, σ)) / σ`, sharing the denoiser's
/// counter.
pub struct NoisePredictor<D> {
    inner: D,
}

impl<D: Denoiser> NoisePredictor<D> {
    pub fn new(inner: D) -> Self {
        Self { inner }
    }

    pub fn predict(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let d = self.inner.denoise(x, sigma)?;
        Ok(x.iter().zip(&d).map(|(xi, di)| (xi - di) / sigma).collect())
    }

    pub fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

pub fn eps_from_denoiser<D: Denoiser>(d: D) -> NoisePredictor<D> {
    NoisePredictor::new(d)
}

/// Classifier-free guidance `D_∅ + ω (D_c - D_∅)`.
pub struct CfgDenoiser<C, U> {
    cond: C,
    uncond: U,
    omega: f64,
}

pub fn cfg_combine<C: Denoiser, U: Denoiser>(cond: C, uncond: U, omega: f64) -> Result<CfgDenoiser<C, U>> {
    if cond.dim() != uncond.dim() {
        return Err(Error::DimensionMismatch { expected: cond.dim(), got: uncond.dim() });
    }
    if !omega.is_finite() {
        return Err(domain("guidance weight must be finite"));
    }
    Ok(CfgDenoiser { cond, uncond, omega })
}

impl<C: Denoiser, U: Denoiser> Denoiser for CfgDenoiser<C, U> {
    fn dim(&self) -> usize {
        self.cond.dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let c = self.cond.denoise(x, sigma)?;
        let u = self.uncond.denoise(x, sigma)?;
        Ok(c.iter().zip(&u).map(|(c, u)| u + self.omega * (c - u)).collect())
    }

    fn evaluations(&self) -> u64 {
        self.cond.evaluations() + self.uncond.evaluations()
    }
}

/// Classifier guidance `D + ω σ² ∇_x log p(c | x; σ)`.
pub struct ClassifierGuided<D, G> {
    inner: D,
    grad: G,
    omega: f64,
}

pub fn classifier_guided<D, G>(inner: D, grad: G, omega: f64) -> ClassifierGuided<D, G>
where
    D: Denoiser,
    G: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    ClassifierGuided { inner, grad, omega }
}

impl<D, G> Denoiser for ClassifierGuided<D, G>
where
    D: Denoiser,
    G: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let mut d = self.inner.denoise(x, sigma)?;
        let g = (self.grad)(x, sigma);
        if g.len() != d.len() {
            return Err(Error::DimensionMismatch { expected: d.len(), got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(domain("classifier gradient is not finite"));
        }
        let scale = self.omega * sigma * sigma;
        for (di, gi) in d.iter_mut().zip(&g) {
            *di += scale * gi;
        }
        Ok(d)
    }

    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }
}

/// A smooth exact trajectory `x̂(λ)` for manufactured problems.
pub trait Trajectory: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, lambda: f64) -> Vec<f64>;
    fn derivative(&self, lambda: f64) -> Vec<f64>;
}

/// Componentwise `a_k sin(ω_k λ + φ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinTrajectory {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SinTrajectory {
    /// `sin λ` in every component.
    pub fn unit(dim: usize) -> Self {
        Self { amplitude: vec![1.0; dim], frequency: vec![1.0; dim], phase: vec![0.0; dim] }
    }

    /// Seeded random amplitudes in `[0.5, 2]`, frequencies in `[0.5, 1.5]`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let amplitude = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
        let frequency = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
        let phase = (0..dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self { amplitude, frequency, phase }
    }
}

impl Trajectory for SinTrajectory {
    fn dim(&self) -> usize {
        self.amplitude.len()
    }

    fn value(&self, lambda: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.amplitude[k] * (self.frequency[k] * lambda + self.phase[k]).sin())
            .collect()
    }

    fn derivative(&self, lambda: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                self.amplitude[k]
                    * self.frequency[k]
                    * (self.frequency[k] * lambda + self.phase[k]).cos()
            })
            .collect()
    }
}

/// `e^{-λ} v`, the free decay of the linear part.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrajectory(pub Vec<f64>);

impl Trajectory for DecayTrajectory {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn value(&self, lambda: f64) -> Vec<f64> {
        self.0.iter().map(|v| (-lambda).exp() * v).collect()
    }

    fn derivative(&self, lambda: f64) -> Vec<f64> {
        self.0.iter().map(|v| -(-lambda).exp() * v).collect()
    }
}

/// Denoiser whose logSNR nonlinearity
/// `g(x, λ) = x̂'(λ) + x̂(λ) + L (x - x̂(λ))` makes `x̂` the exact solution
/// of `dx/dλ = -x + g(x, λ)`; evaluated at `λ = -log σ`.
pub struct ManufacturedDenoiser<T> {
    trajectory: T,
    stiffness: f64,
    counter: EvalCounter,
}

pub fn manufactured_g<T: Trajectory>(trajectory: T, stiffness: f64) -> ManufacturedDenoiser<T> {
    ManufacturedDenoiser { trajectory, stiffness, counter: EvalCounter::new() }
}

impl<T: Trajectory> ManufacturedDenoiser<T> {
    pub fn trajectory(&self) -> &T {
        &self.trajectory
    }

    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    /// `g(x, λ)` without touching the counter.
    pub fn g(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let v = self.trajectory.value(lambda);
        let dv = self.trajectory.derivative(lambda);
        (0..x.len())
            .map(|k| dv[k] + v[k] + self.stiffness * (x[k] - v[k]))
            .collect()
    }
}

impl<T: Trajectory> Denoiser for ManufacturedDenoiser<T> {
    fn dim(&self) -> usize {
        self.trajectory.dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_input(self.dim(), x, sigma)?;
        self.counter.tick();
        Ok(self.g(x, -sigma.ln()))
    }

    fn evaluations(&self) -> u64 {
        self.counter.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fd_score(m: &GaussianMixture, x: &[f64], sigma: f64, step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[k] += step;
                q[k] -= step;
                (m.log_density(&p, sigma) - m.log_density(&q, sigma)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn single_gaussian_closed_form() {
        let mu = vec![1.0, -2.0, 0.5];
        let s = 0.7;
        let d = mixture_denoiser(GaussianMixture::single(mu.clone(), s).unwrap());
        let x = vec![3.0, 1.0, -1.0];
        for sigma in [0.01, 0.5, 3.0, 80.0] {
            let got = d.denoise(&x, sigma).unwrap();
            for k in 0..3 {
                let expect = (s * s * x[k] + sigma * sigma * mu[k]) / (s * s + sigma * sigma);
                assert!((got[k] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(d.evaluations(), 4);
    }

    #[test]
    fn small_sigma_is_identity() {
        let d = mixture_denoiser(GaussianMixture::toy(4, 3, 1));
        let x = vec![0.1, 0.2, -0.4, 1.0];
        let out = d.denoise(&x, 1e-7).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_mixture_maps_origin_to_origin() {
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![1.5, -0.5], vec![-1.5, 0.5]],
            vec![0.4, 0.4],
        )
        .unwrap();
        let d = mixture_denoiser(m);
        for sigma in [0.1, 1.0, 10.0] {
            let out = d.denoise(&[0.0, 0.0], sigma).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn stable_at_large_noise_and_far_points() {
        let d = mixture_denoiser(GaussianMixture::toy(8, 4, 3));
        let x = vec![400.0; 8];
        let out = d.denoise(&x, 80.0).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let out = d.denoise(&x, 0.002).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tweedie_consistency() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for trial in 0..100 {
            let dim = 1 + trial % 8;
            let m = GaussianMixture::toy(dim, 1 + trial % 4, trial as u64);
            let sigma = 10f64.powf(rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d = m.posterior_mean(&x, sigma);
            let score = fd_score(&m, &x, sigma, 1e-4);
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let resid: f64 = (0..dim)
                .map(|k| (d[k] - x[k] - sigma * sigma * score[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-5 * (1.0 + norm_x), "trial {trial}: {resid}");
        }
    }

    #[test]
    fn eps_relations() {
        let ident = FnDenoiser::new(2, |x: &[f64], _| x.to_vec());
        let eps = eps_from_denoiser(&ident);
        assert_eq!(eps.predict(&[1.0, 2.0], 0.5).unwrap(), vec![0.0, 0.0]);
        let zero = FnDenoiser::new(2, |_: &[f64], _| vec![0.0, 0.0]);
        let eps = NoisePredictor::new(&zero);
        assert_eq!(eps.predict(&[1.0, 2.0], 0.5).unwrap(), vec![2.0, 4.0]);
        assert_eq!(eps.evaluations(), 1);
        assert!(matches!(eps.predict(&[1.0, 2.0], 0.0), Err(Error::Domain(_))));

        // ε = -σ ∇ log p for the mixture
        let m = GaussianMixture::toy(3, 2, 8);
        let md = mixture_denoiser(m.clone());
        let eps = NoisePredictor::new(&md);
        let x = vec![0.5, -1.0, 0.2];
        let sigma = 0.8;
        let e = eps.predict(&x, sigma).unwrap();
        let score = fd_score(&m, &x, sigma, 1e-5);
        for k in 0..3 {
            assert!((e[k] + sigma * score[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn cfg_examples() {
        let cond = FnDenoiser::new(2, |x: &[f64], _| x.iter().map(|v| 3.0 * v).collect());
        let uncond = FnDenoiser::new(2, |x: &[f64], _| x.iter().map(|v| 0.5 * v).collect());
        let x = [1.0, -2.0];
        let g = cfg_combine(&cond, &uncond, 1.0).unwrap();
        assert_eq!(g.denoise(&x, 1.0).unwrap(), cond.denoise(&x, 1.0).unwrap());
        let g = cfg_combine(&cond, &uncond, 0.0).unwrap();
        assert_eq!(g.denoise(&x, 1.0).unwrap(), uncond.denoise(&x, 1.0).unwrap());
        let g = cfg_combine(&cond, &uncond, 2.0).unwrap();
        let before = g.evaluations();
        assert_eq!(g.denoise(&x, 1.0).unwrap(), vec![5.5, -11.0]);
        assert_eq!(g.evaluations() - before, 2);

        let wide = FnDenoiser::new(3, |x: &[f64], _| x.to_vec());
        assert!(matches!(cfg_combine(&cond, &wide, 1.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn classifier_guidance() {
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let base = mixture_denoiser(m.clone());
        let x = [0.0, 0.3];
        let sigma = 1.2;
        let d = base.denoise(&x, sigma).unwrap();

        let mm = m.clone();
        let unguided = classifier_guided(&base, move |x: &[f64], s| mm.class_log_grad(0, x, s), 0.0);
        assert_eq!(unguided.denoise(&x, sigma).unwrap(), d);

        let mm = m.clone();
        let guided = classifier_guided(&base, move |x: &[f64], s| mm.class_log_grad(0, x, s), 2.0);
        let dg = guided.denoise(&x, sigma).unwrap();
        let pull: f64 = (0..2).map(|k| (dg[k] - d[k]) * (m.means()[0][k] - m.means()[1][k])).sum();
        assert!(pull > 0.0);

        // analytic gradient against finite differences of log r_0
        let fd: Vec<f64> = (0..2)
            .map(|k| {
                let step = 1e-5;
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[k] += step;
                q[k] -= step;
                (m.responsibilities(&p, sigma)[0].ln() - m.responsibilities(&q, sigma)[0].ln())
                    / (2.0 * step)
            })
            .collect();
        let an = m.class_log_grad(0, &x, sigma);
        for k in 0..2 {
            assert!((fd[k] - an[k]).abs() < 1e-7);
        }

        let single = GaussianMixture::single(vec![1.0, 1.0], 0.5).unwrap();
        assert!(single.class_log_grad(0, &x, sigma).iter().all(|v| v.abs() < 1e-15));

        let bad = classifier_guided(&base, |_: &[f64], _| vec![f64::NAN, 0.0], 1.0);
        assert!(matches!(bad.denoise(&x, sigma), Err(Error::Domain(_))));
    }

    #[test]
    fn manufactured_examples() {
        let decay = manufactured_g(DecayTrajectory(vec![1.0, -2.0]), 0.0);
        for lam in [-1.0, 0.0, 2.5] {
            assert!(decay.g(&[0.3, 0.1], lam).iter().all(|v| v.abs() < 1e-15));
        }
        let sin = manufactured_g(SinTrajectory::unit(1), 0.0);
        for lam in [0.0, 0.7, 3.0] {
            let g = sin.g(&[123.0], lam)[0];
            assert!((g - (lam.cos() + lam.sin())).abs() < 1e-15);
        }
        let d = manufactured_g(SinTrajectory::unit(1), 0.0);
        let via_sigma = d.denoise(&[0.0], (-0.7f64).exp()).unwrap()[0];
        assert!((via_sigma - (0.7f64.cos() + 0.7f64.sin())).abs() < 1e-14);
        assert_eq!(d.evaluations(), 1);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let m = GaussianMixture::toy(3, 2, 4);
        let back = GaussianMixture::from_config(&m.to_config()).unwrap();
        assert_eq!(back, m);
        let text = "# two blobs\nweights = 0.25, 0.75\nscales = 0.3, 0.4\nmean.1 = 0, 1\nmean.0 = 1, 0\n";
        let parsed = GaussianMixture::from_config(text).unwrap();
        assert_eq!(parsed.means()[0], vec![1.0, 0.0]);
        assert!(GaussianMixture::from_config("weights = 0.5\nscales = 1\nmean.0 = 0\n").is_err());
        assert!(GaussianMixture::from_config("weights = 1\nscales = 1\nmean.0 = x\n").is_err());
        assert!(GaussianMixture::from_config("nonsense\n").is_err());
        assert!(GaussianMixture::from_config("weights = 1\nscales = 1\nmean.1 = 0\n").is_err());
    }

    #[test]
    fn counter_is_exact_under_concurrency() {
        let d = Arc::new(mixture_denoiser(GaussianMixture::toy(2, 2, 0)));
        std::thread::scope(|s| {
            for t in 0..8 {
                let d = Arc::clone(&d);
                s.spawn(move || {
                    for i in 0..250 {
                        d.denoise(&[t as f64, i as f64], 1.0).unwrap();
                    }
                });
            }
        });
        assert_eq!(d.evaluations(), 2000);
    }

    proptest! {
        #[test]
        fn eps_denoiser_duality(
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            sigma in 1e-2f64..50.0,
        ) {
            let md = mixture_denoiser(GaussianMixture::toy(3, 3, 17));
            let d = md.denoise(&x, sigma).unwrap();
            let e = NoisePredictor::new(&md).predict(&x, sigma).unwrap();
            for k in 0..3 {
                prop_assert!((sigma * e[k] + d[k] - x[k]).abs() <= 1e-12 * (1.0 + x[k].abs()));
            }
        }
    }
}
