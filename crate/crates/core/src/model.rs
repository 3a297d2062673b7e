//! Noise law: covariance kernels, spectral densities and the scalar
//! primitives (Γ_t, K_M, c₀, I_β^w) shared by every other module.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad::{adaptive_points, cos_power_tail, power_weight, Estimate, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialMode {
    Riesz,
    White,
}

impl std::fmt::Display for SpatialMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpatialMode::Riesz => write!(f, "riesz"),
            SpatialMode::White => write!(f, "white"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceModel {
    pub hurst: f64,
    pub riesz_alpha: f64,
    pub spatial_mode: SpatialMode,
    /// c_α with g(ξ) = c_α|ξ|^{-α}; 1 in white mode.
    pub riesz_constant: f64,
    /// c_H with h(τ) = c_H|τ|^{1−2H}, the Fourier pair of γ.
    pub temporal_constant: f64,
}

/// Analytic Fourier-pair constant of the Riesz kernel |x|^{α-1}.
pub fn riesz_constant_formula(alpha: f64) -> f64 {
    2f64.powf(alpha) * PI.sqrt() * gamma(alpha / 2.0) / gamma((1.0 - alpha) / 2.0)
}

/// Parseval calibration of c_α on the standard Gaussian density:
/// returns (formula value, value implied by direct = spectral).
pub fn riesz_constant_oracle(alpha: f64) -> Result<(f64, f64)> {
    let tol = Tolerance::tight();
    // direct: ∫ |u|^{α-1} (φ*φ)(u) du, φ*φ = N(0,2) density
    let conv = |u: f64| (-u * u / 4.0).exp() / (4.0 * PI).sqrt();
    let direct = 2.0 * power_weight(&conv, alpha - 1.0, 40.0, tol)?.value;
    // spectral per unit c: (2π)^{-1} ∫ |ξ|^{-α} e^{-ξ²} dξ
    let spec_unit = 2.0 * power_weight(&|x: f64| (-x * x).exp(), -alpha, 12.0, tol)?.value / (2.0 * PI);
    Ok((riesz_constant_formula(alpha), direct / spec_unit))
}

impl CovarianceModel {
    pub fn new(hurst: f64, riesz_alpha: f64, spatial_mode: SpatialMode) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::InvalidParameter(format!("hurst must lie in (1/2, 1), got {hurst}")));
        }
        if !(riesz_alpha > 0.0 && riesz_alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("riesz_alpha must lie in (0, 1), got {riesz_alpha}")));
        }
        let temporal_constant = {
            let beta = 2.0 * hurst - 1.0;
            let (formula, oracle) = riesz_constant_oracle(beta)?;
            let gap = (formula - oracle).abs() / oracle;
            if gap > 1e-6 {
                return Err(Error::InvalidParameter(format!(
                    "c_H formula {formula} disagrees with Parseval oracle {oracle} (relative gap {gap:e})"
                )));
            }
            hurst * beta * formula
        };
        let riesz_constant = match spatial_mode {
            SpatialMode::White => 1.0,
            SpatialMode::Riesz => {
                let (formula, oracle) = riesz_constant_oracle(riesz_alpha)?;
                let gap = (formula - oracle).abs() / oracle;
                if gap > 1e-6 {
                    return Err(Error::InvalidParameter(format!(
                        "c_alpha formula {formula} disagrees with Parseval oracle {oracle} (relative gap {gap:e})"
                    )));
                }
                formula
            }
        };
        let model = Self { hurst, riesz_alpha, spatial_mode, riesz_constant, temporal_constant };
        let d = model.dalang_integral()?;
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::InvalidParameter("Dalang integral is not finite".into()));
        }
        if model.assumption_a_order().is_none() {
            return Err(Error::InvalidParameter("tempered-growth integral diverges for every k <= 4".into()));
        }
        Ok(model)
    }

    pub fn riesz(hurst: f64, alpha: f64) -> Result<Self> {
        Self::new(hurst, alpha, SpatialMode::Riesz)
    }

    pub fn white(hurst: f64) -> Result<Self> {
        Self::new(hurst, 0.5, SpatialMode::White)
    }

    pub fn is_white(&self) -> bool {
        self.spatial_mode == SpatialMode::White
    }

    /// γ(t) = H(2H−1)|t|^{2H−2}.
    pub fn gamma_eval(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Err(Error::KernelSingularity(0.0));
        }
        Ok(self.gamma_unchecked(t))
    }

    #[inline]
    pub fn gamma_unchecked(&self, t: f64) -> f64 {
        let h = self.hurst;
        h * (2.0 * h - 1.0) * t.abs().powf(2.0 * h - 2.0)
    }

    /// f(x) = |x|^{α−1} (riesz mode only).
    pub fn f_eval(&self, x: f64) -> Result<f64> {
        if self.is_white() {
            return Err(Error::NotAFunction);
        }
        if x == 0.0 {
            return Err(Error::KernelSingularity(0.0));
        }
        Ok(x.abs().powf(self.riesz_alpha - 1.0))
    }

    /// (h(τ), g(ξ)) with h(τ) = c_H|τ|^{1−2H} = Γ(2H+1)sin(πH)|τ|^{1−2H}.
    pub fn spectral_densities(&self, tau: f64, xi: f64) -> Result<(f64, f64)> {
        if tau == 0.0 {
            return Err(Error::DensitySingularity);
        }
        let h = self.temporal_constant * tau.abs().powf(1.0 - 2.0 * self.hurst);
        let g = match self.spatial_mode {
            SpatialMode::White => 1.0,
            SpatialMode::Riesz => {
                if xi == 0.0 {
                    return Err(Error::DensitySingularity);
                }
                self.riesz_constant * xi.abs().powf(-self.riesz_alpha)
            }
        };
        Ok((h, g))
    }

    /// μ(dξ) = (2π)^{-1} g(ξ) dξ.
    pub fn mu(&self) -> PowerMeasure {
        match self.spatial_mode {
            SpatialMode::White => PowerMeasure { coef: 1.0 / (2.0 * PI), kappa: 0.0 },
            SpatialMode::Riesz => PowerMeasure { coef: self.riesz_constant / (2.0 * PI), kappa: self.riesz_alpha },
        }
    }

    /// ν(dτ) = (2π)^{-1} h(τ) dτ.
    pub fn nu(&self) -> PowerMeasure {
        PowerMeasure { coef: self.temporal_constant / (2.0 * PI), kappa: 2.0 * self.hurst - 1.0 }
    }

    /// Γ_t = 2∫₀^t γ = 2H t^{2H−1}.
    pub fn big_gamma(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        2.0 * self.hurst * t.powf(2.0 * self.hurst - 1.0)
    }

    /// K_M = ∫ (M²+4ξ²)^{-1} μ(dξ).
    pub fn k_m(&self, m: f64) -> Result<f64> {
        if !(m > 0.0) {
            return Err(Error::InvalidParameter(format!("M must be positive, got {m}")));
        }
        let f = |x: f64| 1.0 / (m * m + 4.0 * x * x);
        let cut = 64.0 * m.max(1.0);
        let tail = resolvent_tail(m * m, 4.0);
        let spec = SpectralSpec { cutoff: cut, tail_pos: &tail, tail_neg: &tail, even: true, ..SpectralSpec::default() };
        Ok(self.mu().integrate(&f, &spec)?.value)
    }

    /// Second scheme for K_M: ξ = (M/2)·tan θ, which maps the line onto (0, π/2).
    pub fn k_m_angular(&self, m: f64) -> Result<f64> {
        let mu = self.mu();
        // ∫_ℝ (M²+4ξ²)^{-1} c|ξ|^{-κ} dξ = (2/(2M)) c (M/2)^{-κ} ∫_0^{π/2} tan^{-κ}θ dθ
        let f = |th: f64| {
            let s = th.sin();
            let c = th.cos();
            // tan^{-κ} = sin^{-κ} cos^{κ}; pull sin^{-κ} ~ θ^{-κ} into the weight
            let ratio = if th < 1e-300 { 1.0 } else { (s / th).powf(-mu.kappa) };
            ratio * c.powf(mu.kappa)
        };
        let head = power_weight(&f, -mu.kappa, PI / 2.0, Tolerance::tight())?.value;
        Ok(mu.coef * (m / 2.0).powf(-mu.kappa) * head / m)
    }

    /// ∫ (1+ξ²)^{-1} μ(dξ).
    pub fn dalang_integral(&self) -> Result<f64> {
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let tail = resolvent_tail(1.0, 1.0);
        let spec = SpectralSpec { cutoff: 64.0, tail_pos: &tail, tail_neg: &tail, even: true, ..SpectralSpec::default() };
        Ok(self.mu().integrate(&f, &spec)?.value)
    }

    /// c₀ = (4/3) ∫ (1+ξ²)^{-1} μ(dξ).
    pub fn c0(&self) -> Result<f64> {
        Ok(4.0 / 3.0 * self.dalang_integral()?)
    }

    /// Smallest k ≤ 4 for which ∫ (1+τ²+ξ²)^{-k} /(h g) dτ dξ is finite. 1/(hg)
    /// grows like |τ|^{2H−1}|ξ|^{κ'} (κ' = α riesz, 0 white), so in polar
    /// coordinates the condition is 2k > 2H + κ' + 1.
    pub fn assumption_a_order(&self) -> Option<u32> {
        let growth = match self.spatial_mode {
            SpatialMode::Riesz => self.riesz_alpha,
            SpatialMode::White => 0.0,
        };
        (1..=4u32).find(|&k| 2.0 * k as f64 > 2.0 * self.hurst + growth + 1.0)
    }

    /// V(u) = ½|u|^{2H}: ∂_s∂_{s'}[−V(s−s')] = γ(s−s').
    #[inline]
    pub fn time_primitive(&self, u: f64) -> f64 {
        0.5 * u.abs().powf(2.0 * self.hurst)
    }

    /// P(u) = |u|^{α+1}/(α(α+1)).
    #[inline]
    pub fn space_primitive(&self, u: f64) -> f64 {
        let a = self.riesz_alpha;
        u.abs().powf(a + 1.0) / (a * (a + 1.0))
    }

    /// ∫_a^b ∫_c^d γ(s−s') ds ds'.
    pub fn time_box(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let v = |u| self.time_primitive(u);
        v(b - c) + v(a - d) - v(b - d) - v(a - c)
    }

    /// ∫_a^b ∫_c^d f(x−y) dx dy (overlap length in white mode).
    pub fn space_box(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        match self.spatial_mode {
            SpatialMode::White => (b.min(d) - a.max(c)).max(0.0),
            SpatialMode::Riesz => {
                let p = |u| self.space_primitive(u);
                p(b - c) + p(a - d) - p(b - d) - p(a - c)
            }
        }
    }

    /// ∫_{d−c}^{d+c} f(u) du (indicator of |d| < c in white mode, meant as a density in d).
    pub fn space_window(&self, d: f64, c: f64) -> f64 {
        match self.spatial_mode {
            SpatialMode::White => {
                if d.abs() < c {
                    1.0
                } else {
                    0.0
                }
            }
            SpatialMode::Riesz => {
                let a = self.riesz_alpha;
                let prim = |u: f64| u.signum() * u.abs().powf(a) / a;
                prim(d + c) - prim(d - c)
            }
        }
    }

    /// ⟨G(a,·), G(b,·)⟩₀ by the double-primitive closed form.
    pub fn green_inner0(&self, a: f64, b: f64) -> f64 {
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        0.25 * self.space_box(-a, a, -b, b)
    }

    /// ⟨G(a,·), G(b,·)⟩₀ = ∫ FG(a)FG(b) μ(dξ) by spectral quadrature.
    pub fn green_inner0_spectral(&self, a: f64, b: f64) -> Result<f64> {
        if a <= 0.0 || b <= 0.0 {
            return Ok(0.0);
        }
        let f = |x: f64| fourier_green(a, x) * fourier_green(b, x);
        let tail = [
            TailTerm { coef: 0.5, omega: a - b, phase: 0.0, power: 2.0 },
            TailTerm { coef: -0.5, omega: a + b, phase: 0.0, power: 2.0 },
        ];
        let cutoff = 40.0 / a.min(b).max(0.05);
        let spec = SpectralSpec {
            cutoff,
            panel: PI / (2.0 * (a + b)),
            tail_pos: &tail,
            tail_neg: &tail,
            even: true,
            tol: Tolerance::new(1e-12, 1e-10),
            ..SpectralSpec::default()
        };
        Ok(self.mu().integrate(&f, &spec)?.value)
    }
}

/// I_β^w(ξ) = ∫₀^∞ e^{−βt} sin²(t|ξ|)/|ξ|² dt = (2/β)/(β²+4ξ²).
pub fn i_beta_w(beta: f64, xi: f64) -> f64 {
    (2.0 / beta) / (beta * beta + 4.0 * xi * xi)
}

/// ∫ |FG(s,·)(ξ)|² dξ = πs.
pub fn l2_norm_fg(s: f64) -> f64 {
    PI * s.max(0.0)
}

/// G(t,x) = ½·1{|x| < t}.
#[inline]
pub fn green(t: f64, x: f64) -> f64 {
    if x.abs() < t {
        0.5
    } else {
        0.0
    }
}

/// FG(t,ξ) = sin(t|ξ|)/|ξ|, FG(t,0) = t.
#[inline]
pub fn fourier_green(t: f64, xi: f64) -> f64 {
    let ax = xi.abs();
    if ax * t.abs() < 1e-7 {
        t * (1.0 - (t * ax).powi(2) / 6.0)
    } else {
        (t * ax).sin() / ax
    }
}

/// Density coef·|ξ|^{−κ} on ℝ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMeasure {
    pub coef: f64,
    pub kappa: f64,
}

/// One term coef·cos(ω|ξ|+phase)·|ξ|^{−power} of an integrand's large-|ξ| expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailTerm {
    pub coef: f64,
    pub omega: f64,
    pub phase: f64,
    pub power: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralSpec<'a> {
    /// Interior kinks/peaks (either sign).
    pub breakpoints: &'a [f64],
    pub cutoff: f64,
    /// Longest initial panel.
    pub panel: f64,
    pub tail_pos: &'a [TailTerm],
    pub tail_neg: &'a [TailTerm],
    /// Integrand even: integrate one side and double.
    pub even: bool,
    pub tol: Tolerance,
}

impl Default for SpectralSpec<'_> {
    fn default() -> Self {
        Self {
            breakpoints: &[],
            cutoff: 100.0,
            panel: 1.0,
            tail_pos: &[],
            tail_neg: &[],
            even: false,
            tol: Tolerance::new(1e-12, 1e-10),
        }
    }
}

/// (1/(a2 + b2 ξ²)) = Σ_k (−a2)^k b2^{−k−1} ξ^{−2k−2}, enough terms for |ξ| ≥ 8√(a2/b2).
pub fn resolvent_tail(a2: f64, b2: f64) -> Vec<TailTerm> {
    (0..8)
        .map(|k| TailTerm {
            coef: (-a2).powi(k) / b2.powi(k + 1),
            omega: 0.0,
            phase: 0.0,
            power: 2.0 * k as f64 + 2.0,
        })
        .collect()
}

impl PowerMeasure {
    #[inline]
    pub fn density(&self, xi: f64) -> f64 {
        if self.kappa == 0.0 {
            self.coef
        } else {
            self.coef * xi.abs().powf(-self.kappa)
        }
    }

    fn half_line<F: Fn(f64) -> f64>(&self, f: &F, spec: &SpectralSpec, sign: f64, tail: &[TailTerm]) -> Result<Estimate> {
        let a = spec.cutoff;
        let mut pts: Vec<f64> = spec
            .breakpoints
            .iter()
            .map(|&b| b * sign)
            .filter(|&b| b > 0.0 && b < a)
            .collect();
        let panel = spec.panel.max(a / 4096.0);
        let mut x = 0.0;
        while x < a {
            x = (x + panel).min(a);
            pts.push(x);
        }
        pts.push(0.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let first = pts[1];
        let g = |v: f64| f(sign * v);
        // singular weight on the first panel
        let head = power_weight(&g, -self.kappa, first, spec.tol)?;
        let dens = |v: f64| g(v) * self.density(v);
        let body = adaptive_points(&dens, &pts[1..], spec.tol)?;
        let mut value = self.coef * head.value + body.value;
        for t in tail {
            value += self.coef * t.coef * cos_power_tail(t.omega, t.phase, t.power + self.kappa, a);
        }
        Ok(Estimate { value, error: self.coef * head.error + body.error, evals: head.evals + body.evals })
    }

    /// ∫_ℝ F(ξ) coef|ξ|^{−κ} dξ: panels on [−A, A], algebraic weight handled
    /// analytically at 0, asymptotic tails added in closed form.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, spec: &SpectralSpec) -> Result<Estimate> {
        let pos = self.half_line(f, spec, 1.0, spec.tail_pos)?;
        if spec.even {
            return Ok(Estimate { value: 2.0 * pos.value, error: 2.0 * pos.error, evals: pos.evals });
        }
        let neg = self.half_line(f, spec, -1.0, spec.tail_neg)?;
        Ok(Estimate { value: pos.value + neg.value, error: pos.error + neg.error, evals: pos.evals + neg.evals })
    }
}

/// Derived scalars used by every bound.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConstantsTable {
    pub t_horizon: f64,
    pub big_gamma_t: f64,
    /// (M, K_M) pairs.
    pub k_m: Vec<(f64, f64)>,
    pub c0: f64,
    pub m_t: f64,
    pub m_t_prime: f64,
    pub c_t: f64,
    pub c_t_prime: f64,
    pub c_t_dprime: f64,
    /// Filled by the solver layer; None until then.
    pub c_t_star: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> CovarianceModel {
        CovarianceModel::riesz(0.75, 0.5).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let m = defaults();
        assert_relative_eq!(m.gamma_eval(2.0).unwrap(), 0.375 * 2f64.powf(-0.5), max_relative = 1e-14);
        assert_eq!(m.gamma_eval(-2.0).unwrap(), m.gamma_eval(2.0).unwrap());
        assert!(matches!(m.gamma_eval(0.0), Err(Error::KernelSingularity(_))));
    }

    #[test]
    fn gamma_is_second_derivative_of_fbm_covariance() {
        let m = CovarianceModel::riesz(0.6, 0.5).unwrap();
        let h = 0.6;
        let r = |s: f64, t: f64| 0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (s - t).abs().powf(2.0 * h));
        let (s, t, e) = (1.3, 0.8, 1e-4);
        let fd = (r(s + e, t + e) - r(s + e, t - e) - r(s - e, t + e) + r(s - e, t - e)) / (4.0 * e * e);
        assert_relative_eq!(fd, m.gamma_eval(0.5).unwrap(), max_relative = 1e-5);
    }

    #[test]
    fn f_examples() {
        let m = defaults();
        assert_relative_eq!(m.f_eval(4.0).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(m.f_eval(-4.0).unwrap(), 0.5, max_relative = 1e-15);
        let m9 = CovarianceModel::riesz(0.75, 0.9).unwrap();
        assert_relative_eq!(m9.f_eval(0.1).unwrap(), 1.258_925_411_794_167, max_relative = 1e-12);
        let w = CovarianceModel::white(0.75).unwrap();
        assert_eq!(w.f_eval(1.0), Err(Error::NotAFunction));
    }

    #[test]
    fn spectral_density_examples() {
        let m = defaults();
        let (h, g) = m.spectral_densities(2.0, 1.0).unwrap();
        // c_{3/4} = Γ(5/2) sin(3π/4)
        let c_h = 0.75 * PI.sqrt() * (0.75 * PI).sin();
        assert_relative_eq!(m.temporal_constant, c_h, max_relative = 1e-13);
        assert_relative_eq!(h, c_h / 2f64.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(g, m.riesz_constant, max_relative = 1e-15);
        let w = CovarianceModel::white(0.75).unwrap();
        assert_eq!(w.spectral_densities(1.0, 3.7).unwrap().1, 1.0);
        assert_eq!(m.spectral_densities(1.0, 0.0), Err(Error::DensitySingularity));
    }

    #[test]
    fn riesz_constant_matches_parseval_oracle() {
        for &a in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let (formula, oracle) = riesz_constant_oracle(a).unwrap();
            assert_relative_eq!(formula, oracle, max_relative = 1e-9);
        }
        // frozen: c_{1/2} = sqrt(2π)
        assert_relative_eq!(riesz_constant_formula(0.5), (2.0 * PI).sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(CovarianceModel::riesz(0.4, 0.5), Err(Error::InvalidParameter(_))));
        assert!(matches!(CovarianceModel::riesz(0.75, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(CovarianceModel::riesz(1.0, 0.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn big_gamma_examples() {
        let m = defaults();
        assert_relative_eq!(m.big_gamma(1.0), 1.5, max_relative = 1e-15);
        assert_eq!(m.big_gamma(0.0), 0.0);
        let m6 = CovarianceModel::riesz(0.6, 0.5).unwrap();
        let q = 2.0 * power_weight(&|_| 0.6 * 0.2, -0.8, 2.0, Tolerance::tight()).unwrap().value;
        assert_relative_eq!(m6.big_gamma(2.0), 1.2 * 2f64.powf(0.2), max_relative = 1e-14);
        assert!((m6.big_gamma(2.0) - q).abs() < 1e-10);
    }

    #[test]
    fn k_m_white_and_dual_schemes() {
        let w = CovarianceModel::white(0.75).unwrap();
        assert_relative_eq!(w.k_m(2.0).unwrap(), 1.0 / 8.0, max_relative = 1e-10);
        let m = defaults();
        for &mm in &[0.5, 1.0, 2.0, 7.0, 40.0] {
            let a = m.k_m(mm).unwrap();
            let b = m.k_m_angular(mm).unwrap();
            assert!((a - b).abs() <= 1e-8 * b.max(1.0), "M={mm}: {a} vs {b}");
        }
        let k1 = m.k_m(1.0).unwrap();
        let closed = m.riesz_constant / (2.0 * PI) * 2.0 * 0.5f64.powf(0.5) * (PI / (2.0 * (PI / 4.0).cos()));
        assert_relative_eq!(k1, closed, max_relative = 1e-9);
        assert_relative_eq!(k1, 1.253_314_137_315_500_3, max_relative = 1e-9);
        assert!(m.k_m(4.0).unwrap() < m.k_m(2.0).unwrap());
    }

    #[test]
    fn c0_values() {
        let w = CovarianceModel::white(0.75).unwrap();
        assert_relative_eq!(w.c0().unwrap(), 2.0 / 3.0, max_relative = 1e-10);
        let m = defaults();
        let c0 = m.c0().unwrap();
        // ∫ (1+ξ²)^{-1} μ(dξ) = 4 K_2
        let alt = 4.0 / 3.0 * 4.0 * m.k_m_angular(2.0).unwrap();
        assert_relative_eq!(c0, alt, max_relative = 1e-8);
        assert!(c0 >= 4.0 / 3.0 * m.k_m(1.0).unwrap());
        assert_relative_eq!(c0, 2.363_271_801_207_355, max_relative = 1e-9);
    }

    #[test]
    fn i_beta_w_examples() {
        assert_relative_eq!(i_beta_w(2.0, 1.0), 0.125, max_relative = 1e-15);
        assert_relative_eq!(i_beta_w(2.0, 0.0), 0.25, max_relative = 1e-15);
    }

    #[test]
    fn wave_kernel_basics() {
        assert_eq!(green(1.0, 0.5), 0.5);
        assert_eq!(green(1.0, 1.5), 0.0);
        assert_eq!(fourier_green(0.7, 0.0), 0.7);
        assert_relative_eq!(fourier_green(0.7, 2.0), (1.4f64).sin() / 2.0, max_relative = 1e-15);
        assert_relative_eq!(fourier_green(0.7, -2.0), fourier_green(0.7, 2.0), max_relative = 1e-15);
        assert_relative_eq!(l2_norm_fg(2.0), 2.0 * PI, max_relative = 1e-15);
    }

    #[test]
    fn boxes_match_known_values() {
        let m = defaults();
        assert_relative_eq!(m.time_box(0.0, 1.0, 1.0, 2.0), 0.5 * (2f64.powf(1.5) - 2.0), max_relative = 1e-14);
        assert_relative_eq!(m.time_box(0.0, 1.0, 0.0, 1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(m.space_box(0.0, 1.0, 0.0, 1.0), 8.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn green_inner_product_closed_form_matches_spectral() {
        for m in [defaults(), CovarianceModel::white(0.75).unwrap(), CovarianceModel::riesz(0.6, 0.2).unwrap()] {
            for &(a, b) in &[(1.0, 1.0), (0.3, 0.9), (2.0, 0.05)] {
                let d = m.green_inner0(a, b);
                let s = m.green_inner0_spectral(a, b).unwrap();
                assert!((d - s).abs() <= 1e-8 * d.max(1e-3), "{:?} a={a} b={b}: {d} vs {s}", m.spatial_mode);
            }
        }
    }

    #[test]
    fn assumption_a_order_for_defaults() {
        assert_eq!(defaults().assumption_a_order(), Some(2));
        assert_eq!(CovarianceModel::riesz(0.51, 0.99).unwrap().assumption_a_order(), Some(2));
        assert_eq!(CovarianceModel::white(0.6).unwrap().assumption_a_order(), Some(2));
    }
}
