//! Inner products of ℋ, |ℋ| and 𝒫₀, each evaluated twice: as a physical
//! double integral against the covariance kernel and as a spectral integral
//! against the tempered measure.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::{fourier_green, CovarianceModel, PowerMeasure, SpatialMode, SpectralSpec, TailTerm};
use crate::quad::{adaptive, adaptive_points, power_weight, GaussLegendre, Tolerance};

pub type Eval = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// Stationary kernel k(x−y) on ℝ together with its spectral measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel1D {
    /// coef·|u|^exponent, exponent ∈ (−1, 0).
    Power { coef: f64, exponent: f64, spectral: PowerMeasure },
    /// δ₀, spectral measure (2π)^{-1}dξ.
    Dirac,
}

impl Kernel1D {
    pub fn space(model: &CovarianceModel) -> Self {
        match model.spatial_mode {
            SpatialMode::White => Kernel1D::Dirac,
            SpatialMode::Riesz => Kernel1D::Power { coef: 1.0, exponent: model.riesz_alpha - 1.0, spectral: model.mu() },
        }
    }

    pub fn time(model: &CovarianceModel) -> Self {
        let h = model.hurst;
        Kernel1D::Power { coef: h * (2.0 * h - 1.0), exponent: 2.0 * h - 2.0, spectral: model.nu() }
    }

    pub fn measure(&self) -> PowerMeasure {
        match *self {
            Kernel1D::Power { spectral, .. } => spectral,
            Kernel1D::Dirac => PowerMeasure { coef: 1.0 / (2.0 * PI), kappa: 0.0 },
        }
    }

    /// ∫_a^b ∫_c^d k(x−y) dx dy.
    pub fn box_integral(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        match *self {
            Kernel1D::Dirac => (b.min(d) - a.max(c)).max(0.0),
            Kernel1D::Power { coef, exponent, .. } => {
                let e = exponent;
                let p = |u: f64| coef * u.abs().powf(e + 2.0) / ((e + 1.0) * (e + 2.0));
                p(b - c) + p(a - d) - p(b - d) - p(a - c)
            }
        }
    }
}

/// A jump of φ and φ' at one point: φ(x+)−φ(x−) and φ'(x+)−φ'(x−).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub at: f64,
    pub value: C64,
    pub slope: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Tags {
    pub is_l1: bool,
    pub finite_energy: bool,
}

/// Test function on ℝ (a time or a space factor).
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub eval: Eval,
    pub support: (f64, f64),
    /// Points where φ or φ' is discontinuous.
    pub breakpoints: Vec<f64>,
    /// Jump data used for the large-frequency expansion of Fφ.
    pub jumps: Vec<Jump>,
    pub fourier: Option<Eval>,
    /// Piecewise-constant representation (a, b, value).
    pub steps: Option<Vec<(f64, f64, f64)>>,
    /// |Fφ| is below 1e-9·max beyond this frequency (jump-free functions).
    pub freq_cutoff: Option<f64>,
    /// Frequencies where |Fφ| peaks.
    pub spectral_peaks: Vec<f64>,
    pub real: bool,
    pub tags: Tags,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("support", &self.support).finish()
    }
}

const FINITE: Tags = Tags { is_l1: true, finite_energy: true };

impl TestFunction {
    pub fn at(&self, x: f64) -> C64 {
        (self.eval)(x)
    }

    /// Fφ(ξ) = ∫ e^{−iξx} φ(x) dx (closed form when known, else Gauss–Legendre panels).
    pub fn fourier_at(&self, xi: f64) -> C64 {
        if let Some(f) = &self.fourier {
            return f(xi);
        }
        numeric_fourier(self, xi)
    }

    /// Normal density with mean m and standard deviation s.
    pub fn gaussian(m: f64, s: f64) -> Self {
        let norm = 1.0 / (s * (2.0 * PI).sqrt());
        TestFunction {
            name: format!("gaussian({m},{s})"),
            eval: Arc::new(move |x| C64::new(norm * (-(x - m) * (x - m) / (2.0 * s * s)).exp(), 0.0)),
            support: (m - 9.0 * s, m + 9.0 * s),
            breakpoints: vec![],
            jumps: vec![],
            fourier: Some(Arc::new(move |xi| C64::from_polar((-(xi * s).powi(2) / 2.0).exp(), -xi * m))),
            steps: None,
            freq_cutoff: Some(7.0 / s),
            spectral_peaks: vec![0.0],
            real: true,
            tags: FINITE,
        }
    }

    /// d/dx of the normal density.
    pub fn gaussian_derivative(s: f64) -> Self {
        let norm = 1.0 / (s * (2.0 * PI).sqrt());
        TestFunction {
            name: format!("gaussian_derivative({s})"),
            eval: Arc::new(move |x| C64::new(-x / (s * s) * norm * (-x * x / (2.0 * s * s)).exp(), 0.0)),
            support: (-10.0 * s, 10.0 * s),
            breakpoints: vec![],
            jumps: vec![],
            fourier: Some(Arc::new(move |xi| C64::new(0.0, xi) * (-(xi * s).powi(2) / 2.0).exp())),
            steps: None,
            freq_cutoff: Some(8.0 / s),
            spectral_peaks: vec![-1.0 / s, 1.0 / s],
            real: true,
            tags: FINITE,
        }
    }

    /// e^{−ixη} times the normal density.
    pub fn modulated_gaussian(m: f64, s: f64, eta: f64) -> Self {
        let base = Self::gaussian(m, s);
        let f0 = base.eval.clone();
        let g0 = base.fourier.clone().expect("closed form");
        TestFunction {
            name: format!("modulated_gaussian({m},{s},{eta})"),
            eval: Arc::new(move |x| f0(x) * C64::from_polar(1.0, -x * eta)),
            fourier: Some(Arc::new(move |xi| g0(xi + eta))),
            freq_cutoff: Some(7.0 / s + eta.abs()),
            spectral_peaks: vec![-eta],
            real: false,
            ..base
        }
    }

    /// Step function Σ v·1_{[a,b)}.
    pub fn steps(name: &str, steps: Vec<(f64, f64, f64)>) -> Self {
        let lo = steps.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = steps.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let mut jumps: Vec<Jump> = Vec::new();
        for &(a, b, v) in &steps {
            for (x, dv) in [(a, v), (b, -v)] {
                match jumps.iter_mut().find(|j| j.at == x) {
                    Some(j) => j.value += dv,
                    None => jumps.push(Jump { at: x, value: C64::new(dv, 0.0), slope: C64::new(0.0, 0.0) }),
                }
            }
        }
        jumps.retain(|j| j.value.norm() > 0.0);
        jumps.sort_by(|p, q| p.at.total_cmp(&q.at));
        let st = steps.clone();
        let st2 = steps.clone();
        TestFunction {
            name: name.to_string(),
            eval: Arc::new(move |x| C64::new(st.iter().filter(|s| x >= s.0 && x < s.1).map(|s| s.2).sum(), 0.0)),
            support: (lo, hi),
            breakpoints: jumps.iter().map(|j| j.at).collect(),
            fourier: Some(Arc::new(move |xi| {
                st2.iter()
                    .map(|&(a, b, v)| {
                        if xi == 0.0 {
                            C64::new(v * (b - a), 0.0)
                        } else {
                            // ∫_a^b e^{−iξx} dx = (e^{−iξa} − e^{−iξb})/(iξ)
                            (C64::from_polar(1.0, -xi * a) - C64::from_polar(1.0, -xi * b)) / C64::new(0.0, xi) * v
                        }
                    })
                    .sum()
            })),
            jumps,
            steps: Some(steps),
            freq_cutoff: None,
            spectral_peaks: vec![0.0],
            real: true,
            tags: FINITE,
        }
    }

    pub fn indicator(a: f64, b: f64) -> Self {
        Self::steps(&format!("indicator[{a},{b}]"), vec![(a, b, 1.0)])
    }

    /// G(t,·) = ½·1_{(−t,t)}.
    pub fn green(t: f64) -> Self {
        let mut g = Self::steps(&format!("green({t})"), vec![(-t, t, 0.5)]);
        g.fourier = Some(Arc::new(move |xi| C64::new(fourier_green(t, xi), 0.0)));
        g
    }

    /// G_η(t,x) = e^{−ixη}G(t,x).
    pub fn modulated_green(t: f64, eta: f64) -> Self {
        let e = move |x: f64| C64::from_polar(0.5, -x * eta);
        let slope = move |x: f64| C64::new(0.0, -eta) * e(x);
        TestFunction {
            name: format!("modulated_green({t},{eta})"),
            eval: Arc::new(move |x| if x.abs() < t { e(x) } else { C64::new(0.0, 0.0) }),
            support: (-t, t),
            breakpoints: vec![-t, t],
            jumps: vec![
                Jump { at: -t, value: e(-t), slope: slope(-t) },
                Jump { at: t, value: -e(t), slope: -slope(t) },
            ],
            fourier: Some(Arc::new(move |xi| C64::new(fourier_green(t, xi + eta), 0.0))),
            steps: None,
            freq_cutoff: None,
            spectral_peaks: vec![-eta],
            real: false,
            tags: FINITE,
        }
    }

    /// e^{−x⁴}: smooth, rapidly decaying, no closed-form transform.
    pub fn quartic_bump() -> Self {
        TestFunction {
            name: "quartic_bump".into(),
            eval: Arc::new(|x| C64::new((-x.powi(4)).exp(), 0.0)),
            support: (-4.0, 4.0),
            breakpoints: vec![],
            jumps: vec![],
            fourier: None,
            steps: None,
            freq_cutoff: Some(30.0),
            spectral_peaks: vec![0.0],
            real: true,
            tags: FINITE,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let f = self.eval.clone();
        let mut out = self.clone();
        out.name = format!("{}*{lambda}", self.name);
        out.eval = Arc::new(move |x| f(x) * lambda);
        if let Some(g) = self.fourier.clone() {
            out.fourier = Some(Arc::new(move |xi| g(xi) * lambda));
        }
        out.steps = self.steps.as_ref().map(|s| s.iter().map(|&(a, b, v)| (a, b, v * lambda)).collect());
        for j in &mut out.jumps {
            j.value *= lambda;
            j.slope *= lambda;
        }
        out
    }

    pub fn shifted(&self, h: f64) -> Self {
        let f = self.eval.clone();
        let mut out = self.clone();
        out.name = format!("{}>>{h}", self.name);
        out.eval = Arc::new(move |x| f(x - h));
        out.support = (self.support.0 + h, self.support.1 + h);
        out.breakpoints = self.breakpoints.iter().map(|b| b + h).collect();
        if let Some(g) = self.fourier.clone() {
            out.fourier = Some(Arc::new(move |xi| g(xi) * C64::from_polar(1.0, -xi * h)));
        }
        out.steps = self.steps.as_ref().map(|s| s.iter().map(|&(a, b, v)| (a + h, b + h, v)).collect());
        for j in &mut out.jumps {
            j.at += h;
        }
        out
    }

    /// |φ|: only the physical side is meaningful (no transform, no tail data).
    pub fn abs(&self) -> Self {
        let f = self.eval.clone();
        let mut out = self.clone();
        out.name = format!("|{}|", self.name);
        out.eval = Arc::new(move |x| C64::new(f(x).norm(), 0.0));
        out.fourier = None;
        out.steps = self.steps.as_ref().map(|s| {
            // overlapping steps are merged by the evaluator; only disjoint steps keep the fast path
            s.iter().map(|&(a, b, v)| (a, b, v.abs())).collect()
        });
        if let Some(s) = &out.steps {
            let disjoint = s.iter().enumerate().all(|(i, p)| s.iter().skip(i + 1).all(|q| p.1 <= q.0 || q.1 <= p.0));
            if !disjoint {
                out.steps = None;
            }
        }
        // zeros of a smooth real function become kinks
        if self.name.starts_with("gaussian_derivative") {
            out.breakpoints.push(0.0);
        }
        out.real = true;
        out
    }
}

fn numeric_fourier(phi: &TestFunction, xi: f64) -> C64 {
    let gl = GaussLegendre::cached(24);
    let mut pts = vec![phi.support.0, phi.support.1];
    pts.extend(phi.breakpoints.iter().copied().filter(|b| *b > phi.support.0 && *b < phi.support.1));
    pts.sort_by(f64::total_cmp);
    let mut acc = C64::new(0.0, 0.0);
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        let panels = ((len * xi.abs() / 6.0).ceil() as usize).max((len / 0.5).ceil() as usize).max(1);
        let h = len / panels as f64;
        for p in 0..panels {
            let a = w[0] + p as f64 * h;
            for (x, wt) in gl.on(a, a + h) {
                acc += (phi.eval)(x) * C64::from_polar(wt, -xi * x);
            }
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub direct_value: f64,
    pub spectral_value: f64,
    pub abs_gap: f64,
    /// Imaginary parts (complex pairs only; zero otherwise).
    pub direct_imag: f64,
    pub spectral_imag: f64,
}

impl EnergyReport {
    pub fn new(direct: C64, spectral: C64) -> Self {
        Self {
            direct_value: direct.re,
            spectral_value: spectral.re,
            abs_gap: (direct - spectral).norm(),
            direct_imag: direct.im,
            spectral_imag: spectral.im,
        }
    }

    pub fn rel_gap(&self) -> f64 {
        self.abs_gap / (1.0 + C64::new(self.direct_value, self.direct_imag).norm())
    }
}

fn direct_tol() -> Tolerance {
    Tolerance::new(1e-12, 1e-10)
}

/// ∫∫ k(x−y) φ(x) conj ψ(y) dx dy.
pub fn direct_pair(kernel: &Kernel1D, phi: &TestFunction, psi: &TestFunction) -> Result<C64> {
    if let (Some(sp), Some(sq)) = (&phi.steps, &psi.steps) {
        let mut acc = 0.0;
        for &(a, b, v) in sp {
            for &(c, d, w) in sq {
                acc += v * w * kernel.box_integral(a, b, c, d);
            }
        }
        return Ok(C64::new(acc, 0.0));
    }
    match *kernel {
        Kernel1D::Dirac => {
            let lo = phi.support.0.max(psi.support.0);
            let hi = phi.support.1.min(psi.support.1);
            if hi <= lo {
                return Ok(C64::new(0.0, 0.0));
            }
            let mut pts = vec![lo, hi];
            pts.extend(phi.breakpoints.iter().chain(&psi.breakpoints).copied().filter(|b| *b > lo && *b < hi));
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let re = adaptive_points(&|x| (phi.at(x) * psi.at(x).conj()).re, &pts, direct_tol())?;
            let im = adaptive_points(&|x| (phi.at(x) * psi.at(x).conj()).im, &pts, direct_tol())?;
            Ok(C64::new(re.value, im.value))
        }
        Kernel1D::Power { coef, exponent, .. } => {
            let ulo = phi.support.0 - psi.support.1;
            let uhi = phi.support.1 - psi.support.0;
            let mut kinks: Vec<f64> = Vec::new();
            let bp = |f: &TestFunction| {
                let mut v = f.breakpoints.clone();
                v.push(f.support.0);
                v.push(f.support.1);
                v
            };
            for a in bp(phi) {
                for b in bp(psi) {
                    kinks.push(a - b);
                }
            }
            let corr = |u: f64| cross_correlation(phi, psi, u);
            let mut total = C64::new(0.0, 0.0);
            for part in 0..2 {
                let pick = |c: C64| if part == 0 { c.re } else { c.im };
                if part == 1 && phi.real && psi.real {
                    break;
                }
                let mut acc = 0.0;
                for (sign, end) in [(1.0, uhi), (-1.0, -ulo)] {
                    if end <= 0.0 {
                        continue;
                    }
                    let mut pts: Vec<f64> =
                        kinks.iter().map(|k| k * sign).filter(|&k| k > 0.0 && k < end).collect();
                    pts.push(end);
                    pts.sort_by(f64::total_cmp);
                    pts.dedup();
                    let first = pts[0];
                    let g = |v: f64| pick(corr(sign * v));
                    acc += power_weight(&g, exponent, first, direct_tol())?.value;
                    if pts.len() > 1 {
                        let h = |v: f64| g(v) * v.powf(exponent);
                        acc += adaptive_points(&h, &pts, direct_tol())?.value;
                    }
                }
                if part == 0 {
                    total.re = coef * acc;
                } else {
                    total.im = coef * acc;
                }
            }
            Ok(total)
        }
    }
}

/// C(u) = ∫ φ(y+u) conj ψ(y) dy by Gauss–Legendre panels split at breakpoints.
fn cross_correlation(phi: &TestFunction, psi: &TestFunction, u: f64) -> C64 {
    let lo = psi.support.0.max(phi.support.0 - u);
    let hi = psi.support.1.min(phi.support.1 - u);
    if hi <= lo {
        return C64::new(0.0, 0.0);
    }
    let mut pts = vec![lo, hi];
    pts.extend(psi.breakpoints.iter().copied().chain(phi.breakpoints.iter().map(|b| b - u)).filter(|b| *b > lo && *b < hi));
    pts.sort_by(f64::total_cmp);
    let gl = GaussLegendre::cached(20);
    let mut acc = C64::new(0.0, 0.0);
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let panels = (len / 0.75).ceil().max(1.0) as usize;
        let h = len / panels as f64;
        for p in 0..panels {
            let a = w[0] + p as f64 * h;
            for (y, wt) in gl.on(a, a + h) {
                acc += phi.at(y + u) * psi.at(y).conj() * wt;
            }
        }
    }
    acc
}

/// Large-|ξ| expansion of Fφ·conj Fψ on the side ξ = s·v, v → ∞, split into
/// (real, imaginary) tail terms.
fn product_tail(phi: &TestFunction, psi: &TestFunction, s: f64) -> (Vec<TailTerm>, Vec<TailTerm>) {
    let i = C64::new(0.0, 1.0);
    let mut re = Vec::new();
    let mut im = Vec::new();
    for jp in &phi.jumps {
        for jq in &psi.jumps {
            let d = jp.at - jq.at;
            for (n, a) in [(1, jp.value), (2, jp.slope)] {
                for (m, b) in [(1, jq.value), (2, jq.slope)] {
                    if n + m > 3 {
                        continue;
                    }
                    let z = a * b.conj() * (i * s).powi(-n) * (-i * s).powi(-m);
                    if z.norm() == 0.0 {
                        continue;
                    }
                    let (r, arg) = z.to_polar();
                    // z e^{−i s v d} = r e^{i(arg − s d v)}
                    re.push(normalize(TailTerm { coef: r, omega: s * d, phase: -arg, power: (n + m) as f64 }));
                    im.push(normalize(TailTerm { coef: r, omega: s * d, phase: -arg + PI / 2.0, power: (n + m) as f64 }));
                }
            }
        }
    }
    (re, im)
}

fn normalize(t: TailTerm) -> TailTerm {
    if t.omega < 0.0 {
        TailTerm { omega: -t.omega, phase: -t.phase, ..t }
    } else {
        t
    }
}

/// ∫ Fφ conj Fψ dm for the kernel's spectral measure m.
pub fn spectral_pair(kernel: &Kernel1D, phi: &TestFunction, psi: &TestFunction) -> Result<C64> {
    let measure = kernel.measure();
    let smooth_cut = match (phi.jumps.is_empty(), psi.jumps.is_empty()) {
        (true, _) => phi.freq_cutoff,
        (_, true) => psi.freq_cutoff,
        _ => None,
    };
    let smooth_cut = match (phi.jumps.is_empty(), psi.jumps.is_empty(), phi.freq_cutoff, psi.freq_cutoff) {
        (true, true, Some(a), Some(b)) => Some(a.min(b)),
        _ => smooth_cut,
    };
    let mut peaks: Vec<f64> = phi.spectral_peaks.iter().chain(&psi.spectral_peaks).copied().collect();
    peaks.retain(|p| *p != 0.0);
    let (cutoff, tails) = match smooth_cut {
        Some(c) => (c + peaks.iter().fold(0.0f64, |m, p| m.max(p.abs())), None),
        None => (200.0 + peaks.iter().fold(0.0f64, |m, p| m.max(p.abs())), Some((product_tail(phi, psi, 1.0), product_tail(phi, psi, -1.0)))),
    };
    let spread = [phi.support.0, phi.support.1, psi.support.0, psi.support.1]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let panel = (PI / (4.0 * spread.max(0.25))).min(1.0);
    let both_real = phi.real && psi.real;
    let empty: Vec<TailTerm> = vec![];
    let (tre_pos, tim_pos, tre_neg, tim_neg) = match &tails {
        Some(((rp, ip), (rn, inn))) => (rp, ip, rn, inn),
        None => (&empty, &empty, &empty, &empty),
    };
    let tol = Tolerance::new(1e-13, 1e-11);
    let prod = |x: f64| phi.fourier_at(x) * psi.fourier_at(x).conj();
    let spec_re = SpectralSpec {
        breakpoints: &peaks,
        cutoff,
        panel,
        tail_pos: tre_pos,
        tail_neg: tre_neg,
        even: both_real,
        tol,
    };
    let re = measure.integrate(&|x| prod(x).re, &spec_re)?.value;
    let im = if both_real {
        0.0
    } else {
        let spec_im = SpectralSpec { tail_pos: tim_pos, tail_neg: tim_neg, even: false, ..spec_re.clone() };
        measure.integrate(&|x| prod(x).im, &spec_im)?.value
    };
    Ok(C64::new(re, im))
}

/// ℰ_f(φ) = ∫∫ f(x−y)φ(x)φ(y) vs (2π)^{-1}∫|Fφ|²g.
pub fn energy_f(model: &CovarianceModel, phi: &TestFunction) -> Result<EnergyReport> {
    energy_pair(model, phi, phi, !phi.real)
}

/// ℰ_f(φ,ψ) with conj on ψ when `complex` is set.
pub fn energy_pair(model: &CovarianceModel, phi: &TestFunction, psi: &TestFunction, complex: bool) -> Result<EnergyReport> {
    if !complex && (!phi.real || !psi.real) {
        return Err(Error::InvalidParameter("complex-valued function passed to the real energy".into()));
    }
    if !phi.tags.finite_energy || !psi.tags.finite_energy {
        return Err(Error::EnergyDivergence(format!("{} / {}", phi.name, psi.name)));
    }
    let k = Kernel1D::space(model);
    Ok(EnergyReport::new(direct_pair(&k, phi, psi)?, spectral_pair(&k, phi, psi)?))
}

/// ⟨φ,ψ⟩₀.
pub fn inner_p0(model: &CovarianceModel, phi: &TestFunction, psi: &TestFunction) -> Result<EnergyReport> {
    energy_pair(model, phi, psi, !(phi.real && psi.real))
}

/// Cauchy–Schwarz data: (|ℰ(φ,ψ)|, ℰ(|φ|)^{1/2}ℰ(|ψ|)^{1/2}), physical side.
pub fn cauchy_schwarz(model: &CovarianceModel, phi: &TestFunction, psi: &TestFunction) -> Result<(f64, f64)> {
    let k = Kernel1D::space(model);
    let lhs = direct_pair(&k, phi, psi)?.norm();
    let a = direct_pair(&k, &phi.abs(), &phi.abs())?.re;
    let b = direct_pair(&k, &psi.abs(), &psi.abs())?.re;
    Ok((lhs, (a * b).sqrt()))
}

/// Space-time function Σ c_i a_i(t) b_i(x) + c_slab·G(t₀−s, ·)1_{[0,t₀]}(s).
#[derive(Clone, Debug)]
pub struct SpaceTimeFunction {
    pub name: String,
    pub terms: Vec<(f64, TestFunction, TestFunction)>,
    /// (coefficient, t₀).
    pub slab: Option<(f64, f64)>,
}

impl SpaceTimeFunction {
    pub fn product(c: f64, time: TestFunction, space: TestFunction) -> Self {
        Self { name: format!("{}x{}", time.name, space.name), terms: vec![(c, time, space)], slab: None }
    }

    /// φ(s,y) = G(t−s, x−y)1_{[0,t]}(s).
    pub fn wave_slab(t: f64) -> Self {
        Self { name: format!("wave_slab({t})"), terms: vec![], slab: Some((1.0, t)) }
    }

    pub fn eval(&self, s: f64, y: f64) -> f64 {
        let mut v: f64 = self.terms.iter().map(|(c, a, b)| c * (a.at(s) * b.at(y)).re).sum();
        if let Some((c, t)) = self.slab {
            if (0.0..t).contains(&s) {
                v += c * crate::model::green(t - s, y);
            }
        }
        v
    }
}

/// ⟨φ₁, φ₂⟩_ℋ.
pub fn inner_h(model: &CovarianceModel, f1: &SpaceTimeFunction, f2: &SpaceTimeFunction) -> Result<EnergyReport> {
    let kt = Kernel1D::time(model);
    let kx = Kernel1D::space(model);
    let mut direct = 0.0;
    let mut spectral = 0.0;
    for (c1, a1, b1) in &f1.terms {
        for (c2, a2, b2) in &f2.terms {
            let dt = direct_pair(&kt, a1, a2)?;
            let dx = direct_pair(&kx, b1, b2)?;
            let st = spectral_pair(&kt, a1, a2)?;
            let sx = spectral_pair(&kx, b1, b2)?;
            direct += c1 * c2 * (dt * dx).re;
            spectral += c1 * c2 * (st * sx).re;
        }
    }
    match (f1.slab, f2.slab) {
        (None, None) => {}
        (Some((c1, t1)), Some((c2, t2))) if t1 == t2 && f1.terms.is_empty() && f2.terms.is_empty() => {
            direct += c1 * c2 * slab_direct(model, t1)?;
            spectral += c1 * c2 * slab_spectral(model, t1)?;
        }
        _ => return Err(Error::Unsupported("slab paired with a product term".into())),
    }
    Ok(EnergyReport::new(C64::new(direct, 0.0), C64::new(spectral, 0.0)))
}

/// |ℋ| norm squared on the physical side (single products and slabs only).
pub fn abs_norm_h(model: &CovarianceModel, f: &SpaceTimeFunction) -> Result<f64> {
    let kt = Kernel1D::time(model);
    let kx = Kernel1D::space(model);
    match (&f.terms[..], f.slab) {
        ([(c, a, b)], None) => Ok(c * c * direct_pair(&kt, &a.abs(), &a.abs())?.re * direct_pair(&kx, &b.abs(), &b.abs())?.re),
        ([], Some((c, t))) => Ok(c * c * slab_direct(model, t)?),
        _ => Err(Error::Unsupported("|H| norm of a sum".into())),
    }
}

/// ∫₀^t∫₀^t γ(a−b)⟨G(a),G(b)⟩₀ da db, singular diagonal by power-weight substitution.
pub fn slab_direct(model: &CovarianceModel, t: f64) -> Result<f64> {
    let e = 2.0 * model.hurst - 2.0;
    let c = model.hurst * (2.0 * model.hurst - 1.0);
    let tol = Tolerance::new(1e-13, 1e-11);
    let inner = |a: f64| {
        power_weight(&|v: f64| model.green_inner0(a, a - v), e, a, tol).map(|r| r.value).unwrap_or(f64::NAN)
    };
    let r = adaptive(&inner, 0.0, t, Tolerance::new(1e-12, 1e-10))?;
    if !r.value.is_finite() {
        return Err(Error::Quadrature("slab inner integral".into()));
    }
    Ok(2.0 * c * r.value)
}

/// E(w) = ∫₀^t e^{−iws} ds.
fn e_fn(w: f64, t: f64) -> C64 {
    let z = w * t;
    if z.abs() < 1e-4 {
        C64::new(t * (1.0 - z * z / 6.0), -t * z / 2.0)
    } else {
        (C64::new(1.0, 0.0) - C64::from_polar(1.0, -z)) / C64::new(0.0, w)
    }
}

/// |∫₀^t e^{−iτs} sin((t−s)k)/k ds|².
fn slab_fourier_sq(t: f64, tau: f64, k: f64) -> f64 {
    let k = k.abs();
    let tau = tau.abs();
    if ((tau * tau - k * k) * t * t).abs() >= 0.25 {
        // −[iτ sin(tk)/k − cos(tk) + e^{−iτt}]/(τ²−k²)
        let z = C64::new(-(t * k).cos(), tau * fourier_green(t, k)) + C64::from_polar(1.0, -tau * t);
        return (z / (tau * tau - k * k)).norm_sqr();
    }
    if k * t < 4.0 {
        let gl = GaussLegendre::cached(32);
        let mut acc = C64::new(0.0, 0.0);
        for (s, w) in gl.on(0.0, t) {
            acc += C64::from_polar(w * fourier_green(t - s, k), -tau * s);
        }
        return acc.norm_sqr();
    }
    let a = C64::from_polar(1.0, t * k) * e_fn(tau + k, t);
    let b = C64::from_polar(1.0, -t * k) * e_fn(tau - k, t);
    ((a - b) / C64::new(0.0, 2.0 * k)).norm_sqr()
}

/// ∫ |F_s slab(τ,k)|² ν(dτ) with exact large-τ expansion.
fn slab_time_energy(model: &CovarianceModel, t: f64, k: f64) -> Result<f64> {
    let nu = model.nu();
    let k = k.abs();
    let fg = fourier_green(t, k);
    let c = (t * k).cos();
    let mut tail = Vec::new();
    for m in 0..10 {
        let f = (m + 1) as f64 * k.powi(2 * m);
        let p = 2.0 * m as f64;
        tail.push(TailTerm { coef: f * fg * fg, omega: 0.0, phase: 0.0, power: 2.0 + p });
        tail.push(TailTerm { coef: -2.0 * fg * f, omega: t, phase: -PI / 2.0, power: 3.0 + p });
        tail.push(TailTerm { coef: f * (1.0 + c * c), omega: 0.0, phase: 0.0, power: 4.0 + p });
        tail.push(TailTerm { coef: -2.0 * c * f, omega: t, phase: 0.0, power: 4.0 + p });
    }
    let cutoff = (8.0 * k).max(80.0 / t);
    let bps = [k];
    let spec = SpectralSpec {
        breakpoints: &bps,
        cutoff,
        panel: PI / (2.0 * t),
        tail_pos: &tail,
        tail_neg: &tail,
        even: true,
        tol: Tolerance::new(1e-14, 1e-10),
    };
    Ok(nu.integrate(&|tau| slab_fourier_sq(t, tau, k), &spec)?.value)
}

/// ∫∫ |F slab|² ν(dτ) μ(dξ).
pub fn slab_spectral(model: &CovarianceModel, t: f64) -> Result<f64> {
    let h = model.hurst;
    let g2h = gamma(2.0 * h);
    let tail = [
        TailTerm { coef: t * model.temporal_constant / 2.0, omega: 0.0, phase: 0.0, power: 1.0 + 2.0 * h },
        TailTerm { coef: -g2h * (PI * h).cos() * h * (2.0 * h - 0.5), omega: 0.0, phase: 0.0, power: 2.0 + 2.0 * h },
        TailTerm { coef: -0.5 * h * g2h, omega: 2.0 * t, phase: -PI * h, power: 2.0 + 2.0 * h },
    ];
    let spec = SpectralSpec {
        breakpoints: &[],
        cutoff: 80.0 / t,
        panel: PI / (4.0 * t),
        tail_pos: &tail,
        tail_neg: &tail,
        even: true,
        tol: Tolerance::new(1e-11, 1e-9),
    };
    let err = std::sync::Mutex::new(None);
    let f = |k: f64| match slab_time_energy(model, t, k) {
        Ok(v) => v,
        Err(e) => {
            *err.lock().expect("lock") = Some(e);
            0.0
        }
    };
    let v = model.mu().integrate(&f, &spec)?.value;
    if let Some(e) = err.into_inner().expect("lock") {
        return Err(e);
    }
    Ok(v)
}

/// m(η) = ∫ |FG(t)(ξ+η)|² μ(dξ) on each grid point, in grid order.
pub fn max_principle_scan(model: &CovarianceModel, t: f64, eta_grid: &[f64]) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    let kx = Kernel1D::space(model);
    eta_grid
        .par_iter()
        .map(|&eta| {
            let g = TestFunction::modulated_green(t, eta);
            spectral_pair(&kx, &g, &g).map(|z| z.re)
        })
        .collect()
}

/// Max over frequencies of |S(−k) − conj S(k)| for the 2-D DFT of a real grid
/// (row-major, `rows × cols`).
pub fn hermiticity_check(values: &[f64], rows: usize, cols: usize) -> f64 {
    let spec = dft2(values, rows, cols);
    let mut dev: f64 = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let a = spec[r * cols + c];
            let b = spec[((rows - r) % rows) * cols + (cols - c) % cols];
            dev = dev.max((a - b.conj()).norm());
        }
    }
    dev
}

/// 2-D DFT via row and column FFTs.
pub fn dft2(values: &[f64], rows: usize, cols: usize) -> Vec<C64> {
    use rustfft::FftPlanner;
    assert_eq!(values.len(), rows * cols);
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(cols);
    for row in data.chunks_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut col = vec![C64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
    data
}

/// One named suite member with its report.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub kind: &'static str,
    pub report: EnergyReport,
}

/// Parseval suite: 1-D energies (real and complex) and space-time ℋ products.
pub fn parseval_suite(model: &CovarianceModel, include_slab: bool) -> Result<Vec<SuiteEntry>> {
    let white = CovarianceModel::white(model.hurst)?;
    let riesz9 = CovarianceModel::riesz(model.hurst, 0.9)?;
    let g = TestFunction::gaussian(0.0, 1.0);
    type Job = Box<dyn Fn() -> Result<SuiteEntry> + Send + Sync>;
    let m = *model;
    let e = |name: &str, kind: &'static str, r: EnergyReport| SuiteEntry { name: name.into(), kind, report: r };
    let mut jobs: Vec<Job> = Vec::new();
    {
        let g = g.clone();
        jobs.push(Box::new(move || Ok(e("gaussian", "energy_f", energy_f(&m, &g)?))));
    }
    jobs.push(Box::new(move || {
        Ok(e("indicator_white", "energy_f", energy_f(&white, &TestFunction::indicator(0.0, 1.0))?))
    }));
    jobs.push(Box::new(move || {
        Ok(e(
            "indicator_pair",
            "energy_pair",
            energy_pair(&m, &TestFunction::indicator(0.0, 1.0), &TestFunction::indicator(0.5, 2.0), false)?,
        ))
    }));
    jobs.push(Box::new(move || Ok(e("green_1", "inner_p0", inner_p0(&m, &TestFunction::green(1.0), &TestFunction::green(1.0))?))));
    jobs.push(Box::new(move || {
        Ok(e("green_half_vs_1", "inner_p0", inner_p0(&m, &TestFunction::green(0.5), &TestFunction::green(1.0))?))
    }));
    {
        let g = g.clone();
        jobs.push(Box::new(move || Ok(e("gaussian_shifted", "energy_pair", energy_pair(&m, &g, &g.shifted(1.5), false)?))));
    }
    jobs.push(Box::new(move || {
        let f = TestFunction::modulated_green(1.0, 1.0);
        Ok(e("modulated_green", "energy_pair_complex", energy_pair(&m, &f, &f, true)?))
    }));
    jobs.push(Box::new(move || {
        let f = TestFunction::modulated_gaussian(0.0, 1.0, 1.0);
        let h = TestFunction::modulated_gaussian(0.5, 0.8, -0.7);
        Ok(e("modulated_gaussians", "energy_pair_complex", energy_pair(&m, &f, &h, true)?))
    }));
    jobs.push(Box::new(move || {
        Ok(e("gaussian_derivative", "energy_f", energy_f(&m, &TestFunction::gaussian_derivative(0.7))?))
    }));
    {
        let g = g.clone();
        jobs.push(Box::new(move || Ok(e("gaussian_alpha09", "energy_f", energy_f(&riesz9, &g)?))));
    }
    jobs.push(Box::new(move || Ok(e("quartic_bump", "energy_f", energy_f(&m, &TestFunction::quartic_bump())?))));
    {
        let g = g.clone();
        jobs.push(Box::new(move || Ok(e("green_vs_gaussian", "inner_p0", inner_p0(&m, &TestFunction::green(1.0), &g)?))));
    }
    jobs.push(Box::new(move || {
        let f = SpaceTimeFunction::product(1.0, TestFunction::gaussian(2.0, 0.3), TestFunction::gaussian(0.0, 1.0));
        Ok(e("product_gaussian", "inner_h", inner_h(&m, &f, &f)?))
    }));
    jobs.push(Box::new(move || {
        let f = SpaceTimeFunction::product(1.0, TestFunction::gaussian(2.0, 0.3), TestFunction::gaussian(0.0, 1.0));
        Ok(e("product_gaussian_white", "inner_h", inner_h(&white, &f, &f)?))
    }));
    jobs.push(Box::new(move || {
        let f = SpaceTimeFunction::product(1.0, TestFunction::gaussian(2.0, 0.3), TestFunction::gaussian(0.0, 1.0));
        let h = SpaceTimeFunction::product(1.0, TestFunction::gaussian(3.0, 0.3), TestFunction::gaussian(0.4, 1.0));
        Ok(e("product_time_shift", "inner_h", inner_h(&m, &f, &h)?))
    }));
    jobs.push(Box::new(move || {
        let f = SpaceTimeFunction::product(1.0, TestFunction::indicator(0.5, 1.5), TestFunction::green(1.0));
        Ok(e("product_steps", "inner_h", inner_h(&m, &f, &f)?))
    }));
    if include_slab {
        jobs.push(Box::new(move || {
            let f = SpaceTimeFunction::wave_slab(1.0);
            Ok(e("wave_slab", "inner_h", inner_h(&m, &f, &f)?))
        }));
    }
    jobs.par_iter().map(|j| j()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> CovarianceModel {
        CovarianceModel::riesz(0.75, 0.5).unwrap()
    }

    #[test]
    fn gaussian_energy_dual_and_golden() {
        let m = defaults();
        let r = energy_f(&m, &TestFunction::gaussian(0.0, 1.0)).unwrap();
        assert!(r.abs_gap < 1e-6 * r.direct_value, "{r:?}");
        // E|Z|^{-1/2} for Z ~ N(0,2) equals Γ(1/4)/√(2π)
        assert_relative_eq!(r.direct_value, gamma(0.25) / (2.0 * PI).sqrt(), max_relative = 1e-9);
        assert_relative_eq!(r.direct_value, 1.446_409_085_155_575, max_relative = 1e-9);
    }

    #[test]
    fn white_indicator_is_plancherel() {
        let w = CovarianceModel::white(0.75).unwrap();
        let r = energy_f(&w, &TestFunction::indicator(0.0, 1.0)).unwrap();
        assert_relative_eq!(r.direct_value, 1.0, max_relative = 1e-14);
        assert!((r.spectral_value - 1.0).abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn energy_is_quadratic() {
        let m = defaults();
        let g = TestFunction::gaussian(0.0, 1.0);
        let a = energy_f(&m, &g).unwrap();
        let b = energy_f(&m, &g.scaled(3.0)).unwrap();
        assert_relative_eq!(b.direct_value, 9.0 * a.direct_value, max_relative = 1e-9);
        assert_relative_eq!(b.spectral_value, 9.0 * a.spectral_value, max_relative = 1e-9);
    }

    #[test]
    fn green_p0_examples() {
        let m = defaults();
        let r = inner_p0(&m, &TestFunction::green(1.0), &TestFunction::green(1.0)).unwrap();
        assert!(r.abs_gap < 1e-6 * r.direct_value, "{r:?}");
        assert_relative_eq!(r.direct_value, m.green_inner0(1.0, 1.0), max_relative = 1e-12);
        let w = CovarianceModel::white(0.75).unwrap();
        let r = inner_p0(&w, &TestFunction::green(1.0), &TestFunction::green(1.0)).unwrap();
        assert_relative_eq!(r.direct_value, 0.5, max_relative = 1e-14);
        // disjoint supports, riesz: strictly positive
        let r = inner_p0(&m, &TestFunction::indicator(0.0, 1.0), &TestFunction::indicator(3.0, 4.0)).unwrap();
        assert!(r.direct_value > 0.0 && r.spectral_value > 0.0);
    }

    #[test]
    fn modulated_green_matches_shifted_spectrum() {
        let m = defaults();
        let eta = 1.0;
        let t: f64 = 1.0;
        let f = TestFunction::modulated_green(t, eta);
        let r = energy_pair(&m, &f, &f, true).unwrap();
        // physical side: ½∫₀^{2t} u^{α−1} cos(uη)(2t−u) du
        let direct = 0.5
            * power_weight(&|u: f64| (u * eta).cos() * (2.0 * t - u), -0.5, 2.0 * t, Tolerance::tight()).unwrap().value;
        assert_relative_eq!(r.direct_value, direct, max_relative = 1e-9);
        assert!(r.abs_gap < 1e-6 * direct, "{r:?}");
        assert!(r.direct_imag.abs() < 1e-12);
        let scan = max_principle_scan(&m, t, &[eta]).unwrap();
        assert_relative_eq!(scan[0], r.spectral_value, max_relative = 1e-9);
    }

    #[test]
    fn max_principle_scan_symmetric_and_bounded() {
        let m = defaults();
        let grid = [0.0, 0.5, -0.5, 1.0, 2.0, 5.0];
        let s = max_principle_scan(&m, 1.0, &grid).unwrap();
        assert_relative_eq!(s[1], s[2], max_relative = 1e-8);
        for v in &s[1..] {
            assert!(*v <= s[0] * (1.0 + 1e-7));
        }
        let g = TestFunction::green(1.0);
        let p0 = spectral_pair(&Kernel1D::space(&m), &g, &g).unwrap().re;
        assert_relative_eq!(s[0], p0, max_relative = 1e-9);
    }

    #[test]
    fn numeric_fourier_matches_closed_forms() {
        for f in [TestFunction::gaussian(0.3, 0.8), TestFunction::modulated_green(1.0, 0.7), TestFunction::indicator(0.0, 1.0)] {
            let mut bare = f.clone();
            bare.fourier = None;
            for &xi in &[-7.0, -1.0, 0.0, 0.4, 3.0, 20.0] {
                assert!((f.fourier_at(xi) - bare.fourier_at(xi)).norm() < 1e-6, "{} at {xi}", f.name);
            }
        }
    }

    #[test]
    fn parseval_suite_within_tolerance() {
        let m = defaults();
        let t0 = std::time::Instant::now();
        let suite = parseval_suite(&m, true).unwrap();
        assert!(suite.len() >= 12);
        for e in &suite {
            eprintln!("{:24} direct {:.12e} spectral {:.12e} rel {:.2e}", e.name, e.report.direct_value, e.report.spectral_value, e.report.rel_gap());
        }
        eprintln!("elapsed {:?}", t0.elapsed());
        for e in &suite {
            assert!(e.report.rel_gap() <= 1e-5, "{}: {:?}", e.name, e.report);
        }
    }

    #[test]
    fn time_kernel_box_matches_fbm_rectangle() {
        let m = defaults();
        let k = Kernel1D::time(&m);
        assert_relative_eq!(k.box_integral(0.0, 1.0, 1.0, 2.0), m.time_box(0.0, 1.0, 1.0, 2.0), max_relative = 1e-14);
    }

    #[test]
    fn hermitian_symmetry_of_real_fields() {
        let (r, c) = (64usize, 64usize);
        let mut state = 12345u64;
        let vals: Vec<f64> = (0..r * c)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        assert!(hermiticity_check(&vals, r, c) < 1e-10);
        // direct DFT oracle on a small grid
        let (r2, c2) = (6usize, 5usize);
        let small: Vec<f64> = (0..r2 * c2).map(|i| ((i * 7 % 11) as f64).sin()).collect();
        let fast = dft2(&small, r2, c2);
        for p in 0..r2 {
            for q in 0..c2 {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..r2 {
                    for b in 0..c2 {
                        let ang = -2.0 * PI * ((p * a) as f64 / r2 as f64 + (q * b) as f64 / c2 as f64);
                        acc += C64::from_polar(small[a * c2 + b], ang);
                    }
                }
                assert!((acc - fast[p * c2 + q]).norm() < 1e-10);
            }
        }
        // even real function: real transform
        let even: Vec<f64> = (0..r * c)
            .map(|i| {
                let (a, b) = ((i / c) as f64, (i % c) as f64);
                (2.0 * PI * a / r as f64).cos() * (2.0 * PI * 3.0 * b / c as f64).cos() + 1.0
            })
            .collect();
        assert!(dft2(&even, r, c).iter().all(|z| z.im.abs() < 1e-10));
    }
}
