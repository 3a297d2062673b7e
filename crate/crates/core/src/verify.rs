//! Deterministic identity and inequality suite behind `chaoswave verify`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::Result;
use crate::hilbert::{max_principle_scan, parseval_suite};
use crate::kernels::{self, AlphaValue};
use crate::model::{fourier_green, i_beta_w, l2_norm_fg, CovarianceModel, PowerMeasure, SpectralSpec, TailTerm};
use crate::quad::{adaptive_points, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// |value − reference| ≤ tolerance·max(1, |reference|) (absolute when `absolute`).
    Equal,
    /// value ≤ reference·(1 + tolerance).
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub group: &'static str,
    pub relation: Relation,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub absolute: bool,
    /// "closed-form" when the reference is exact, otherwise the numerical route.
    pub method: &'static str,
    pub passed: bool,
}

impl Check {
    pub fn equal(group: &'static str, name: impl Into<String>, value: f64, reference: f64, tolerance: f64, absolute: bool, method: &'static str) -> Self {
        let gap = (value - reference).abs();
        let scale = if absolute { 1.0 } else { reference.abs().max(f64::MIN_POSITIVE) };
        let passed = value.is_finite() && gap <= tolerance * scale;
        Self { name: name.into(), group, relation: Relation::Equal, value, reference, tolerance, absolute, method, passed }
    }

    pub fn at_most(group: &'static str, name: impl Into<String>, value: f64, reference: f64, tolerance: f64, method: &'static str) -> Self {
        let passed = value.is_finite() && value <= reference * (1.0 + tolerance);
        Self { name: name.into(), group, relation: Relation::AtMost, value, reference, tolerance, absolute: false, method, passed }
    }

    /// |value − reference| / |reference|.
    pub fn rel_gap(&self) -> f64 {
        (self.value - self.reference).abs() / self.reference.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub hurst: f64,
    pub riesz_alpha: f64,
    pub spatial_mode: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn group(&self, g: &str) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.group == g).collect()
    }
}

/// ψ(t) = t²/4 against the grid integral.
pub fn psi_checks() -> Vec<Check> {
    [0.5, 1.0, 2.0]
        .iter()
        .map(|&t| Check::equal("psi", format!("psi(t={t})"), kernels::psi_grid(t, 64), kernels::psi(t), 1e-12, true, "closed-form"))
        .collect()
}

/// ∫|FG(s)(ξ)|²dξ = πs by spectral quadrature.
pub fn fg_norm_checks() -> Result<Vec<Check>> {
    let lebesgue = PowerMeasure { coef: 1.0, kappa: 0.0 };
    [0.3, 1.0, 2.0]
        .iter()
        .map(|&s| {
            let f = |xi: f64| fourier_green(s, xi).powi(2);
            let tail = [
                TailTerm { coef: 0.5, omega: 0.0, phase: 0.0, power: 2.0 },
                TailTerm { coef: -0.5, omega: 2.0 * s, phase: 0.0, power: 2.0 },
            ];
            let spec = SpectralSpec { cutoff: 60.0 / s, panel: PI / (2.0 * s), tail_pos: &tail, tail_neg: &tail, even: true, ..SpectralSpec::default() };
            let q = lebesgue.integrate(&f, &spec)?.value;
            Ok(Check::equal("fg_norm", format!("l2_fg(s={s})"), q, l2_norm_fg(s), 1e-5, false, "closed-form"))
        })
        .collect()
}

/// I_β^w(ξ) against direct quadrature in t on a 5×5 (β, ξ) grid.
pub fn i_beta_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &beta in &[0.5, 1.0, 2.0, 4.0, 8.0] {
        for &xi in &[0.0, 0.5, 1.0, 3.0, 10.0] {
            let f = |t: f64| (-beta * t).exp() * fourier_green(t, xi).powi(2);
            let end = 80.0 / beta;
            let panels = if xi > 0.0 { ((end * xi / PI).ceil() as usize).clamp(1, 4000) } else { 16 };
            let pts: Vec<f64> = (0..=panels).map(|k| end * k as f64 / panels as f64).collect();
            let q = adaptive_points(&f, &pts, Tolerance::new(1e-15, 1e-12))?.value;
            out.push(Check::equal("i_beta", format!("I_beta(beta={beta}, xi={xi})"), q, i_beta_w(beta, xi), 1e-8, false, "closed-form"));
        }
    }
    Ok(out)
}

/// Direct vs spectral energies (relative gap ≤ 1e−5).
pub fn parseval_checks(model: &CovarianceModel) -> Result<Vec<Check>> {
    Ok(parseval_suite(model, true)?
        .into_iter()
        .map(|e| {
            let mut c = Check::equal("parseval", e.name, e.report.spectral_value, e.report.direct_value, 1e-5, false, e.kind);
            c.passed = e.report.rel_gap() <= 1e-5;
            c
        })
        .collect())
}

/// m(η) ≤ m(0)(1 + 1e−7).
pub fn max_principle_checks(model: &CovarianceModel) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &t in &[0.5, 1.0] {
        let vals = max_principle_scan(model, t, &[0.0, 0.5, 1.0, 2.0, 5.0])?;
        for (eta, v) in [0.5, 1.0, 2.0, 5.0].iter().zip(&vals[1..]) {
            out.push(Check::at_most("max_principle", format!("m(eta={eta}) at t={t}"), *v, vals[0], 1e-7, "spectral"));
        }
    }
    Ok(out)
}

/// α_n(t) ≤ e^{Mt}n!(2Γ_tK_M/M)^n, φ ≤ Γ_tψ₀, ψ₀ ≤ c₀t and ψ₀ spectral = closed form.
pub fn bound_chain_checks(model: &CovarianceModel, max_order: usize) -> Result<(Vec<Check>, Vec<AlphaValue>)> {
    let mut out = Vec::new();
    let mut alphas = Vec::new();
    for &t in &[0.5, 1.0] {
        for n in 1..=max_order {
            let a = kernels::alpha_n(model, n, t)?;
            for &m in &[2.0, 5.0, 10.0, 20.0] {
                let b = kernels::alpha_bound(model, n, t, m)?;
                out.push(Check::at_most("alpha_bound", format!("alpha_{n}(t={t}) M={m}"), a.value, b, 0.0, "rqmc/spectral"));
            }
            alphas.push(a);
        }
    }
    let c0 = model.c0()?;
    for k in 1..=9 {
        let t = k as f64 / 10.0;
        let phi = kernels::phi(model, t)?;
        let p0 = kernels::psi0(model, t)?;
        let closed = kernels::psi0_closed(model, t);
        out.push(Check::at_most("phi_bound", format!("phi(t={t}) <= Gamma_t psi0"), phi, model.big_gamma(t) * closed, 0.0, "direct"));
        out.push(Check::at_most("psi0_bound", format!("psi0(t={t}) <= c0 t"), closed, c0 * t, 0.0, "closed-form"));
        out.push(Check::equal("psi0", format!("psi0(t={t}) spectral"), p0, closed, 1e-7, false, "closed-form"));
    }
    Ok((out, alphas))
}

/// The full deterministic suite.
pub fn identity_suite(model: &CovarianceModel, max_order: usize) -> Result<VerifyReport> {
    let mut checks = psi_checks();
    checks.extend(fg_norm_checks()?);
    checks.extend(i_beta_checks()?);
    checks.extend(parseval_checks(model)?);
    checks.extend(max_principle_checks(model)?);
    checks.extend(bound_chain_checks(model, max_order)?.0);
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { hurst: model.hurst, riesz_alpha: model.riesz_alpha, spatial_mode: model.spatial_mode.to_string(), checks, passed })
}
