//! Butcher tableaus for exponential and classical explicit Runge–Kutta schemes.
//!
//! Exponential schemes advance the semilinear problem `x' = -x + g(x, λ)` by
//!
//! ```text
//! x_{n,i}  = e^{-c_i h} x_n + h Σ_{j<i} a_ij(-h) g(x_{n,j}, λ_n + c_j h)
//! x_{n+1}  = e^{-h}     x_n + h Σ_i   b_i(-h)  g(x_{n,i}, λ_n + c_i h)
//! ```
//!
//! so their coefficients depend on the step `h` and are rebuilt per step by
//! [`concretize`]. The ψ-coefficients of [`psi_report`] are the Taylor
//! coefficients of the local defects; a scheme has order `q` when the
//! relevant ψ's vanish.

use std::fmt;

use crate::error::{Error, Result};
use crate::phi::{factorial, phi_table};

/// Maximum stage count of any supported scheme.
pub const MAX_STAGES: usize = 4;

const GAMMA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    ExpEuler,
    Res2,
    Res3,
    DpmPp2,
    DpmPp3,
    Heun,
    Rk4,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] = [
        SchemeId::ExpEuler,
        SchemeId::Res2,
        SchemeId::Res3,
        SchemeId::DpmPp2,
        SchemeId::DpmPp3,
        SchemeId::Heun,
        SchemeId::Rk4,
    ];

    pub fn is_exponential(self) -> bool {
        !matches!(self, SchemeId::Heun | SchemeId::Rk4)
    }

    pub fn stages(self) -> usize {
        match self {
            SchemeId::ExpEuler => 1,
            SchemeId::Res2 | SchemeId::DpmPp2 | SchemeId::Heun => 2,
            SchemeId::Res3 | SchemeId::DpmPp3 => 3,
            SchemeId::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::ExpEuler => "expeuler",
            SchemeId::Res2 => "res2",
            SchemeId::Res3 => "res3",
            SchemeId::DpmPp2 => "dpmpp2",
            SchemeId::DpmPp3 => "dpmpp3",
            SchemeId::Heun => "heun",
            SchemeId::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s.to_ascii_lowercase())
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scheme together with its free node parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TableauSpec {
    scheme: SchemeId,
    c: [f64; MAX_STAGES],
    gamma: Option<f64>,
    reuses_history: bool,
}

impl TableauSpec {
    pub fn exp_euler() -> Self {
        Self::raw(SchemeId::ExpEuler, &[0.0], None)
    }

    pub fn res2(c2: f64) -> Result<Self> {
        check_single_step_node(c2, "c2")?;
        Ok(Self::raw(SchemeId::Res2, &[0.0, c2], None))
    }

    pub fn dpmpp2(c2: f64) -> Result<Self> {
        check_single_step_node(c2, "c2")?;
        Ok(Self::raw(SchemeId::DpmPp2, &[0.0, c2], None))
    }

    /// Third-order RES with `γ` chosen by [`gamma_for`].
    pub fn res3(c2: f64, c3: f64) -> Result<Self> {
        check_single_step_node(c2, "c2")?;
        check_single_step_node(c3, "c3")?;
        let gamma = gamma_for(c2, c3)?;
        Self::res3_with_gamma(c2, c3, gamma)
    }

    pub fn res3_with_gamma(c2: f64, c3: f64, gamma: f64) -> Result<Self> {
        check_single_step_node(c2, "c2")?;
        check_single_step_node(c3, "c3")?;
        if (c2 - 2.0 / 3.0).abs() < GAMMA_EPS {
            return Err(Error::DegenerateTableau("RES3 requires c2 != 2/3".into()));
        }
        if (gamma * c2 + c3).abs() < GAMMA_EPS {
            return Err(Error::DegenerateTableau("RES3 requires gamma*c2 + c3 != 0".into()));
        }
        Ok(Self::raw(SchemeId::Res3, &[0.0, c2, c3], Some(gamma)))
    }

    pub fn dpmpp3(c2: f64, c3: f64) -> Result<Self> {
        check_single_step_node(c2, "c2")?;
        check_single_step_node(c3, "c3")?;
        Ok(Self::raw(SchemeId::DpmPp3, &[0.0, c2, c3], None))
    }

    /// Second-order RES weights with a backward node `c2 < 0`, as used by the
    /// multistep update where stage 2 is the previous step's evaluation.
    pub fn res2_multistep(c2: f64) -> Result<Self> {
        if !(c2.is_finite() && c2 < 0.0) {
            return Err(Error::Domain(format!("multistep node must be negative, got {c2}")));
        }
        let mut spec = Self::raw(SchemeId::Res2, &[0.0, c2], None);
        spec.reuses_history = true;
        Ok(spec)
    }

    pub fn heun() -> Self {
        Self::raw(SchemeId::Heun, &[0.0, 1.0], None)
    }

    pub fn rk4() -> Self {
        Self::raw(SchemeId::Rk4, &[0.0, 0.5, 0.5, 1.0], None)
    }

    /// Default nodes: `c2 = 0.5` for two-stage schemes, `(0.5, 0.75)` with
    /// `γ = 0.75` for RES3.
    pub fn default_for(scheme: SchemeId) -> Self {
        let built = match scheme {
            SchemeId::ExpEuler => Ok(Self::exp_euler()),
            SchemeId::Res2 => Self::res2(0.5),
            SchemeId::DpmPp2 => Self::dpmpp2(0.5),
            SchemeId::Res3 => Self::res3(0.5, 0.75),
            SchemeId::DpmPp3 => Self::dpmpp3(0.5, 0.75),
            SchemeId::Heun => Ok(Self::heun()),
            SchemeId::Rk4 => Ok(Self::rk4()),
        };
        built.expect("default nodes are valid")
    }

    /// Build a spec from optional node overrides, falling back to defaults.
    pub fn with_nodes(scheme: SchemeId, c2: Option<f64>, c3: Option<f64>) -> Result<Self> {
        let c2d = 0.5;
        let c3d = 0.75;
        match scheme {
            SchemeId::Res2 => Self::res2(c2.unwrap_or(c2d)),
            SchemeId::DpmPp2 => Self::dpmpp2(c2.unwrap_or(c2d)),
            SchemeId::Res3 => Self::res3(c2.unwrap_or(c2d), c3.unwrap_or(c3d)),
            SchemeId::DpmPp3 => Self::dpmpp3(c2.unwrap_or(c2d), c3.unwrap_or(c3d)),
            other => Ok(Self::default_for(other)),
        }
    }

    fn raw(scheme: SchemeId, c: &[f64], gamma: Option<f64>) -> Self {
        let mut nodes = [0.0; MAX_STAGES];
        nodes[..c.len()].copy_from_slice(c);
        Self { scheme, c: nodes, gamma, reuses_history: false }
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn stages(&self) -> usize {
        self.scheme.stages()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.c[..self.stages()]
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// True for the multistep variant whose second node lies behind the step.
    pub fn reuses_history(&self) -> bool {
        self.reuses_history
    }

    pub fn is_exponential(&self) -> bool {
        self.scheme.is_exponential()
    }

    /// RES3 with `γ = 0` and DPM-Solver++(3) both carry `b_2 = 0`.
    pub fn is_degenerate(&self) -> bool {
        match self.scheme {
            SchemeId::DpmPp3 => true,
            SchemeId::Res3 => self.gamma == Some(0.0),
            _ => false,
        }
    }
}

fn check_single_step_node(c: f64, name: &str) -> Result<()> {
    if c.is_finite() && c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1], got {c}")))
    }
}

/// The root `γ` of `2(γ c2 + c3) = 3(γ c2² + c3²)`.
///
/// With the RES3 weights this is exactly `ψ_3(0) = 0`.
pub fn gamma_for(c2: f64, c3: f64) -> Result<f64> {
    let den = 3.0 * c2 * c2 - 2.0 * c2;
    if !den.is_finite() || den.abs() < GAMMA_EPS {
        return Err(Error::DegenerateTableau(format!(
            "gamma condition has no solution for c2 = {c2}"
        )));
    }
    Ok((2.0 * c3 - 3.0 * c3 * c3) / den)
}

/// Numeric coefficients of a tableau at one step length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteTableau {
    s: usize,
    c: [f64; MAX_STAGES],
    a: [[f64; MAX_STAGES]; MAX_STAGES],
    b: [f64; MAX_STAGES],
    h: f64,
    exponential: bool,
}

impl ConcreteTableau {
    pub fn stages(&self) -> usize {
        self.s
    }

    pub fn c(&self) -> &[f64] {
        &self.c[..self.s]
    }

    /// `a_ij` for `j < i` (zero otherwise).
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b[..self.s]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_exponential(&self) -> bool {
        self.exponential
    }
}

/// Coefficients of `spec` at step `h > 0`.
///
/// ```
/// use res_core::tableau::{concretize, TableauSpec};
/// let tab = concretize(&TableauSpec::exp_euler(), 1.0).unwrap();
/// assert!((tab.b()[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
/// ```
pub fn concretize(spec: &TableauSpec, h: f64) -> Result<ConcreteTableau> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step length must be positive, got {h}")));
    }
    concretize_signed(spec, h)
}

/// Like [`concretize`] but accepts a negative step, which is what the
/// noise-prediction coordinates produce when σ decreases.
pub fn concretize_signed(spec: &TableauSpec, h: f64) -> Result<ConcreteTableau> {
    if !(h.is_finite() && h != 0.0) {
        return Err(Error::Domain(format!("step length must be finite and nonzero, got {h}")));
    }
    let s = spec.stages();
    let mut tab = ConcreteTableau {
        s,
        c: spec.c,
        a: [[0.0; MAX_STAGES]; MAX_STAGES],
        b: [0.0; MAX_STAGES],
        h,
        exponential: spec.is_exponential(),
    };
    let c = &spec.c;
    match spec.scheme {
        SchemeId::Heun => {
            tab.a[1][0] = 1.0;
            tab.b[..2].copy_from_slice(&[0.5, 0.5]);
        }
        SchemeId::Rk4 => {
            tab.a[1][0] = 0.5;
            tab.a[2][1] = 0.5;
            tab.a[3][2] = 1.0;
            tab.b = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        }
        SchemeId::ExpEuler => {
            tab.b[0] = phi_table(1, -h)?.get(1);
        }
        SchemeId::Res2 | SchemeId::DpmPp2 => {
            let full = phi_table(2, -h)?;
            let stage = phi_table(1, -c[1] * h)?;
            tab.a[1][0] = c[1] * stage.get(1);
            let b2 = if spec.scheme == SchemeId::Res2 {
                full.get(2) / c[1]
            } else {
                full.get(1) / (2.0 * c[1])
            };
            tab.b[1] = b2;
            tab.b[0] = full.get(1) - b2;
        }
        SchemeId::Res3 | SchemeId::DpmPp3 => {
            let full = phi_table(2, -h)?;
            let p2 = phi_table(2, -c[1] * h)?;
            let p3 = phi_table(2, -c[2] * h)?;
            tab.a[1][0] = c[1] * p2.get(1);
            let mut a32 = c[2] * c[2] / c[1] * p3.get(2);
            let (b2, b3) = if spec.scheme == SchemeId::Res3 {
                let gamma = spec.gamma.expect("RES3 carries gamma");
                a32 += gamma * c[1] * p2.get(2);
                let den = gamma * c[1] + c[2];
                (gamma * full.get(2) / den, full.get(2) / den)
            } else {
                (0.0, full.get(2) / c[2])
            };
            tab.a[2][1] = a32;
            tab.a[2][0] = c[2] * p3.get(1) - a32;
            tab.b[1] = b2;
            tab.b[2] = b3;
            tab.b[0] = full.get(1) - b2 - b3;
        }
    }
    Ok(tab)
}

/// ψ-coefficients of a concrete exponential tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiReport {
    pub h: f64,
    /// `psi[j-1] = ψ_j(-h)` for `j = 1..=q`.
    pub psi: Vec<f64>,
    /// `psi_stage[j-1][i] = ψ_{j,i+1}(-h)`.
    pub psi_stage: Vec<Vec<f64>>,
    /// `b_2 ψ_{2,2} + b_3 ψ_{2,3}` (zero for fewer than three stages).
    pub weighted_second: f64,
}

impl PsiReport {
    pub fn psi(&self, j: usize) -> f64 {
        self.psi[j - 1]
    }

    /// `ψ_{j,i}` with one-based stage index `i`.
    pub fn psi_stage(&self, j: usize, i: usize) -> f64 {
        self.psi_stage[j - 1][i - 1]
    }
}

pub const MAX_PSI_ORDER: usize = 4;

/// Order-condition defect coefficients
///
/// ```text
/// ψ_j     = φ_j(-h) - Σ_k b_k c_k^{j-1}/(j-1)!
/// ψ_{j,i} = φ_j(-c_i h) c_i^j - Σ_{k<i} a_ik c_k^{j-1}/(j-1)!
/// ```
///
/// with the convention `c^0 = 1`.
pub fn psi_report(tab: &ConcreteTableau, q: usize) -> Result<PsiReport> {
    if !tab.exponential {
        return Err(Error::NotApplicable("psi coefficients need an exponential tableau".into()));
    }
    if q == 0 || q > MAX_PSI_ORDER {
        return Err(Error::UnsupportedOrder { order: q, ceiling: MAX_PSI_ORDER });
    }
    let h = tab.h;
    let s = tab.s;
    let full = phi_table(q, -h)?;
    let pow = |c: f64, e: usize| if e == 0 { 1.0 } else { c.powi(e as i32) };

    let mut psi = Vec::with_capacity(q);
    let mut psi_stage = Vec::with_capacity(q);
    for j in 1..=q {
        let fj = factorial(j - 1);
        let quad: f64 = (0..s).map(|k| tab.b[k] * pow(tab.c[k], j - 1) / fj).sum();
        psi.push(full.get(j) - quad);

        let mut row = Vec::with_capacity(s);
        for i in 0..s {
            let ci = tab.c[i];
            let exact = phi_table(j, -ci * h)?.get(j) * pow(ci, j);
            let quad: f64 = (0..i).map(|k| tab.a[i][k] * pow(tab.c[k], j - 1) / fj).sum();
            row.push(exact - quad);
        }
        psi_stage.push(row);
    }
    let weighted_second = if s >= 3 && q >= 2 {
        tab.b[1] * psi_stage[1][1] + tab.b[2] * psi_stage[1][2]
    } else {
        0.0
    };
    Ok(PsiReport { h, psi, psi_stage, weighted_second })
}

/// One audited order condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub condition: OrderCondition,
    /// Largest magnitude seen over the audit grid.
    pub max_abs: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderCondition {
    Psi1,
    Psi2,
    Psi12,
    Psi13,
    /// `ψ_3` at vanishing step.
    Psi3AtZero,
    /// `b_2 ψ_{2,2} + b_3 ψ_{2,3}`.
    WeightedSecond,
}

impl OrderCondition {
    pub fn name(self) -> &'static str {
        match self {
            OrderCondition::Psi1 => "psi1",
            OrderCondition::Psi2 => "psi2",
            OrderCondition::Psi12 => "psi12",
            OrderCondition::Psi13 => "psi13",
            OrderCondition::Psi3AtZero => "psi3_at_0",
            OrderCondition::WeightedSecond => "weighted2",
        }
    }

    /// Conditions a scheme needs for the order it is built for.
    pub fn claimed_by(scheme: SchemeId) -> &'static [OrderCondition] {
        use OrderCondition::*;
        match scheme {
            SchemeId::ExpEuler => &[Psi1],
            SchemeId::Res2 | SchemeId::DpmPp2 => &[Psi1, Psi2, Psi12],
            SchemeId::Res3 | SchemeId::DpmPp3 => {
                &[Psi1, Psi2, Psi12, Psi13, WeightedSecond, Psi3AtZero]
            }
            SchemeId::Heun | SchemeId::Rk4 => &[],
        }
    }
}

impl fmt::Display for OrderCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub spec: TableauSpec,
    pub passed: bool,
    pub checks: Vec<ConditionCheck>,
}

impl AuditReport {
    pub fn failed_conditions(&self) -> Vec<OrderCondition> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.condition).collect()
    }

    pub fn check(&self, condition: OrderCondition) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.condition == condition)
    }
}

pub const AUDIT_H_MIN: f64 = 1e-3;
pub const AUDIT_H_MAX: f64 = 5.0;
pub const AUDIT_POINTS: usize = 40;
pub const AUDIT_TOL: f64 = 1e-10;
pub const AUDIT_PSI3_H: f64 = 1e-8;
pub const AUDIT_PSI3_TOL: f64 = 1e-6;

/// `n` log-spaced points covering `[lo, hi]` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Sweep `h` over the audit grid and check every condition the scheme claims.
pub fn audit_order(spec: &TableauSpec) -> Result<AuditReport> {
    if !spec.is_exponential() {
        return Err(Error::NotApplicable(format!("{} is a classical scheme", spec.scheme())));
    }
    let claimed = OrderCondition::claimed_by(spec.scheme());
    let mut worst = vec![0.0f64; claimed.len()];
    for h in log_grid(AUDIT_H_MIN, AUDIT_H_MAX, AUDIT_POINTS) {
        let rep = psi_report(&concretize(spec, h)?, 3)?;
        for (slot, cond) in worst.iter_mut().zip(claimed) {
            let v = match cond {
                OrderCondition::Psi1 => rep.psi(1),
                OrderCondition::Psi2 => rep.psi(2),
                OrderCondition::Psi12 => rep.psi_stage(1, 2),
                OrderCondition::Psi13 => rep.psi_stage(1, 3),
                OrderCondition::WeightedSecond => rep.weighted_second,
                OrderCondition::Psi3AtZero => continue,
            };
            *slot = slot.max(v.abs());
        }
    }
    let mut checks = Vec::with_capacity(claimed.len());
    for (cond, max_abs) in claimed.iter().zip(worst) {
        let (max_abs, tolerance) = if *cond == OrderCondition::Psi3AtZero {
            let rep = psi_report(&concretize(spec, AUDIT_PSI3_H)?, 3)?;
            (rep.psi(3).abs(), AUDIT_PSI3_TOL)
        } else {
            (max_abs, AUDIT_TOL)
        };
        checks.push(ConditionCheck {
            condition: *cond,
            max_abs,
            tolerance,
            passed: max_abs <= tolerance,
        });
    }
    Ok(AuditReport {
        spec: spec.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::phi;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn classical_limits() {
        for spec in [TableauSpec::res2(0.5).unwrap(), TableauSpec::dpmpp2(0.5).unwrap()] {
            let t = concretize(&spec, 1e-12).unwrap();
            assert!(close(t.b()[0], 0.0, 1e-10), "{:?}", t.b());
            assert!(close(t.b()[1], 1.0, 1e-10));
            assert!(close(t.a(1, 0), 0.5, 1e-10));
        }
        let heun = concretize(&TableauSpec::heun(), 3.7).unwrap();
        assert_eq!(heun.c(), &[0.0, 1.0]);
        assert_eq!(heun.a(1, 0), 1.0);
        assert_eq!(heun.b(), &[0.5, 0.5]);
        assert!(!heun.is_exponential());
    }

    #[test]
    fn exp_euler_weight() {
        let t = concretize(&TableauSpec::exp_euler(), 1.0).unwrap();
        assert!(close(t.b()[0], 0.632_120_558_828_557_7, 1e-15));
    }

    #[test]
    fn gamma_examples() {
        assert!(close(gamma_for(0.5, 0.75).unwrap(), 0.75, 1e-15));
        assert!(close(gamma_for(1.0 / 3.0, 2.0 / 3.0).unwrap(), 0.0, 1e-15));
        assert!(matches!(gamma_for(2.0 / 3.0, 0.5), Err(Error::DegenerateTableau(_))));
        assert!(TableauSpec::res3(1.0 / 3.0, 2.0 / 3.0).unwrap().is_degenerate());
    }

    #[test]
    fn gamma_root_kills_psi3_at_zero() {
        for (c2, c3) in [(0.5, 0.75), (0.4, 0.9), (0.25, 1.0), (0.8, 0.3)] {
            let spec = TableauSpec::res3(c2, c3).unwrap();
            let rep = psi_report(&concretize(&spec, 1e-8).unwrap(), 3).unwrap();
            assert!(rep.psi(3).abs() < 1e-6, "c2={c2} c3={c3} psi3={}", rep.psi(3));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(concretize(&TableauSpec::exp_euler(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(concretize(&TableauSpec::exp_euler(), -1.0), Err(Error::Domain(_))));
        assert!(matches!(
            TableauSpec::res3(2.0 / 3.0, 0.5),
            Err(Error::DegenerateTableau(_))
        ));
        assert!(matches!(
            TableauSpec::res3_with_gamma(0.5, 0.5, -1.0),
            Err(Error::DegenerateTableau(_))
        ));
        assert!(TableauSpec::res2(0.0).is_err());
        assert!(TableauSpec::res2(1.5).is_err());
        assert!(TableauSpec::res2_multistep(0.5).is_err());
        assert!(TableauSpec::res2_multistep(-1.0).unwrap().reuses_history());
    }

    #[test]
    fn psi_examples() {
        // DPM-Solver++(2): ψ_2(-1) = φ_2(-1) - φ_1(-1)/2
        let t = concretize(&TableauSpec::dpmpp2(0.5).unwrap(), 1.0).unwrap();
        let rep = psi_report(&t, 2).unwrap();
        let e1 = (-1.0f64).exp();
        assert!(close(rep.psi(2), e1 - (1.0 - e1) / 2.0, 1e-15));
        assert!(close(rep.psi(2), 0.05182, 1e-5));

        for h in [0.01, 0.3, 1.0, 4.0] {
            let t = concretize(&TableauSpec::exp_euler(), h).unwrap();
            assert!(psi_report(&t, 1).unwrap().psi(1).abs() < 1e-15);
        }

        let classical = concretize(&TableauSpec::rk4(), 1.0).unwrap();
        assert!(matches!(psi_report(&classical, 2), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn res3_stage_identity() {
        let spec = TableauSpec::res3(0.5, 0.75).unwrap();
        for h in log_grid(1e-3, 5.0, 17) {
            let rep = psi_report(&concretize(&spec, h).unwrap(), 3).unwrap();
            let expect = -0.75 * 0.25 * phi(2, -0.5 * h).unwrap();
            assert!(close(rep.psi_stage(2, 3), expect, 1e-12));
        }
    }

    #[test]
    fn dpmpp3_stage_two_defect_vanishes() {
        // a_32 = (c3²/c2) φ_2(-c3 h) cancels ψ_{2,3} exactly, so the weighted
        // condition holds; the node choice c3 = 0.75 breaks ψ_3(0) instead.
        let spec = TableauSpec::dpmpp3(0.5, 0.75).unwrap();
        let rep = psi_report(&concretize(&spec, 1.0).unwrap(), 3).unwrap();
        assert!(rep.psi_stage(2, 3).abs() < 1e-15);
        assert!(rep.weighted_second.abs() < 1e-15);
        let rep0 = psi_report(&concretize(&spec, 1e-8).unwrap(), 3).unwrap();
        assert!(close(rep0.psi(3), 1.0 / 6.0 - 0.75 / 4.0, 1e-8));
    }

    #[test]
    fn audits() {
        for c2 in [0.25, 0.5, 1.0] {
            assert!(audit_order(&TableauSpec::res2(c2).unwrap()).unwrap().passed);
        }
        let res3 = audit_order(&TableauSpec::res3_with_gamma(0.5, 0.75, 0.75).unwrap()).unwrap();
        assert!(res3.passed, "{res3:?}");
        let dpm2 = audit_order(&TableauSpec::dpmpp2(0.5).unwrap()).unwrap();
        assert_eq!(dpm2.failed_conditions(), vec![OrderCondition::Psi2]);
        let dpm3 = audit_order(&TableauSpec::dpmpp3(0.5, 0.75).unwrap()).unwrap();
        assert!(!dpm3.passed);
        assert!(audit_order(&TableauSpec::exp_euler()).unwrap().passed);
        assert!(audit_order(&TableauSpec::heun()).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(1e-3, 5.0, 40);
        assert_eq!(g.len(), 40);
        assert!(close(g[0], 1e-3, 1e-18));
        assert!(close(g[39], 5.0, 1e-14));
    }

    fn exponential_specs() -> Vec<TableauSpec> {
        vec![
            TableauSpec::exp_euler(),
            TableauSpec::res2(0.5).unwrap(),
            TableauSpec::res2(1.0).unwrap(),
            TableauSpec::dpmpp2(0.5).unwrap(),
            TableauSpec::res3(0.5, 0.75).unwrap(),
            TableauSpec::res3(0.4, 0.9).unwrap(),
            TableauSpec::dpmpp3(0.5, 0.75).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn weights_sum_to_phi1(h in 1e-4f64..8.0) {
            for spec in exponential_specs() {
                let t = concretize(&spec, h).unwrap();
                let sum: f64 = t.b().iter().sum();
                prop_assert!((sum - phi(1, -h).unwrap()).abs() <= 1e-12);
            }
        }

        #[test]
        fn rows_sum_to_scaled_phi1(h in 1e-4f64..8.0) {
            for spec in exponential_specs() {
                let t = concretize(&spec, h).unwrap();
                for i in 1..t.stages() {
                    let row: f64 = (0..i).map(|j| t.a(i, j)).sum();
                    let ci = t.c()[i];
                    prop_assert!((row - ci * phi(1, -ci * h).unwrap()).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn res2_second_order_conditions(c2 in 0.05f64..=1.0, h in 0.01f64..4.0) {
            let t = concretize(&TableauSpec::res2(c2).unwrap(), h).unwrap();
            let rep = psi_report(&t, 2).unwrap();
            prop_assert!(rep.psi(1).abs() <= 1e-12);
            prop_assert!(rep.psi(2).abs() <= 1e-12);
            prop_assert!(rep.psi_stage(1, 2).abs() <= 1e-12);
        }
    }

    #[test]
    fn classical_limit_of_every_exponential_tableau() {
        for spec in exponential_specs() {
            let t = concretize(&spec, 1e-10).unwrap();
            let sum: f64 = t.b().iter().sum();
            assert!(close(sum, 1.0, 1e-8));
            for i in 1..t.stages() {
                let row: f64 = (0..i).map(|j| t.a(i, j)).sum();
                assert!(close(row, t.c()[i], 1e-8));
            }
        }
    }
}
