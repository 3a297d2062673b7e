//! Chaos kernels f_n, their Malliavin decompositions, the norms α_n(t) and the
//! explicit bound constants built from Γ_t and K_M.

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{slab_direct, slab_spectral};
use crate::model::{green, CovarianceModel, ConstantsTable, SpectralSpec, TailTerm};
use crate::quad::{clustered_nodes, clustered_panels, pairwise_sum, panel_points, GaussLegendre, Tolerance};

/// Doubling scan used for every M selection.
pub const M_SCAN_MAX: f64 = 1_048_576.0;

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// f_n(t₁,x₁,…,t_n,x_n,t,x) = Π G(t_{k+1}−t_k, x_{k+1}−x_k)·1{0<t₁<…<t_n<t}.
pub fn f_n_eval(n: usize, args: &[(f64, f64)], t: f64, x: f64) -> f64 {
    assert!(n >= 1 && args.len() == n, "f_n needs exactly n arguments");
    if !(args[0].0 > 0.0) {
        return 0.0;
    }
    let mut v = 1.0;
    for k in 0..n {
        let (tk, xk) = args[k];
        let (tn, xn) = if k + 1 < n { args[k + 1] } else { (t, x) };
        if !(tk < tn) {
            return 0.0;
        }
        v *= green(tn - tk, xn - xk);
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// Evaluators for f_n, f̃_n and the derivative kernels at a fixed target (t, x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosKernelSet {
    pub order: usize,
    pub t: f64,
    pub x: f64,
}

impl ChaosKernelSet {
    pub fn new(order: usize, t: f64, x: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("chaos order must be at least 1".into()));
        }
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
        }
        Ok(Self { order, t, x })
    }

    pub fn f(&self, args: &[(f64, f64)]) -> f64 {
        f_n_eval(self.order, args, self.t, self.x)
    }

    /// f̃_n: average of f_n over all argument permutations.
    pub fn f_tilde(&self, args: &[(f64, f64)]) -> f64 {
        let n = self.order;
        let mut buf = vec![(0.0, 0.0); n];
        let mut acc = 0.0;
        for_each_permutation(n, |p| {
            for (k, &i) in p.iter().enumerate() {
                buf[k] = args[i];
            }
            acc += self.f(&buf);
        });
        acc / factorial(n)
    }

    /// f_j^{(n)}: f_n with (r, z) in position `j` (1-based) and `others` filling the rest in order.
    pub fn f_j(&self, j: usize, others: &[(f64, f64)], r: f64, z: f64) -> f64 {
        let n = self.order;
        assert!(j >= 1 && j <= n && others.len() + 1 == n);
        let mut args = Vec::with_capacity(n);
        args.extend_from_slice(&others[..j - 1]);
        args.push((r, z));
        args.extend_from_slice(&others[j - 1..]);
        self.f(&args)
    }

    /// h_j^{(n)}: f_j^{(n)} symmetrized over the n−1 free arguments.
    pub fn h_j(&self, j: usize, others: &[(f64, f64)], r: f64, z: f64) -> f64 {
        let m = self.order - 1;
        let mut buf = vec![(0.0, 0.0); m];
        let mut acc = 0.0;
        for_each_permutation(m, |p| {
            for (k, &i) in p.iter().enumerate() {
                buf[k] = others[i];
            }
            acc += self.f_j(j, &buf, r, z);
        });
        acc / factorial(m)
    }

    /// f̃_n(·, r, z): the symmetric kernel with one argument pinned to (r, z).
    pub fn f_tilde_at(&self, others: &[(f64, f64)], r: f64, z: f64) -> f64 {
        let mut args = others.to_vec();
        args.push((r, z));
        self.f_tilde(&args)
    }

    /// (1/n) Σ_j h_j^{(n)}.
    pub fn h_average(&self, others: &[(f64, f64)], r: f64, z: f64) -> f64 {
        let n = self.order;
        (1..=n).map(|j| self.h_j(j, others, r, z)).sum::<f64>() / n as f64
    }
}

/// Length of (−a, a) ∩ (v−b, v+b).
#[inline]
pub fn overlap(a: f64, b: f64, v: f64) -> f64 {
    (a.min(v + b) - (-a).max(v - b)).max(0.0)
}

/// ψ(t) = ∫₀^t∫ G²(t−r, x−z) dz dr = t²/4.
pub fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        0.25 * t * t
    }
}

/// Grid version of ψ: midpoint rule in r, exact cell overlap in z on a grid of
/// `cells` spatial cells of [−t, t].
pub fn psi_grid(t: f64, cells: usize) -> f64 {
    if t <= 0.0 || cells == 0 {
        return 0.0;
    }
    let dz = 2.0 * t / cells as f64;
    let dr = t / cells as f64;
    let mut rows = Vec::with_capacity(cells);
    for i in 0..cells {
        let r = (i as f64 + 0.5) * dr;
        let half = t - r;
        let mut row = 0.0;
        for k in 0..cells {
            let lo = -t + k as f64 * dz;
            let len = (half.min(lo + dz) - (-half).max(lo)).max(0.0);
            row += 0.25 * len;
        }
        rows.push(row * dr);
    }
    pairwise_sum(&rows)
}

/// ψ₀(t) = ∫₀^t ∫ |FG(r)(ξ)|² μ(dξ) dr by spectral quadrature.
pub fn psi0(model: &CovarianceModel, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    // ∫₀^t sin²(rξ)/ξ² dr = t/(2ξ²) − sin(2tξ)/(4ξ³)
    let f = |xi: f64| {
        let k = xi.abs();
        if k * t < 1e-3 {
            t.powi(3) / 3.0 - t.powi(5) * k * k / 15.0
        } else {
            t / (2.0 * k * k) - (2.0 * t * k).sin() / (4.0 * k.powi(3))
        }
    };
    let tail = [
        TailTerm { coef: t / 2.0, omega: 0.0, phase: 0.0, power: 2.0 },
        TailTerm { coef: -0.25, omega: 2.0 * t, phase: -PI / 2.0, power: 3.0 },
    ];
    let spec = SpectralSpec {
        cutoff: 40.0 / t,
        panel: PI / (2.0 * t),
        tail_pos: &tail,
        tail_neg: &tail,
        even: true,
        tol: Tolerance::new(1e-13, 1e-11),
        ..SpectralSpec::default()
    };
    Ok(model.mu().integrate(&f, &spec)?.value)
}

/// ψ₀(t) from the double primitive: ∫₀^t ⟨G(r),G(r)⟩₀ dr.
pub fn psi0_closed(model: &CovarianceModel, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if model.is_white() {
        return 0.25 * t * t;
    }
    let a = model.riesz_alpha;
    2f64.powf(a) * t.powf(a + 2.0) / (a * (a + 1.0) * (a + 2.0))
}

/// φ(t) = ∫₀^t∫₀^t γ(s−s')⟨G(s),G(s')⟩₀ ds ds'.
pub fn phi(model: &CovarianceModel, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    slab_direct(model, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMethod {
    /// α₁ through the space-time spectral measure.
    Spectral,
    /// Nested deterministic quadrature over the time pairs with the reduced spatial integral.
    NestedQuadrature,
    /// Randomized quasi-Monte Carlo; `std_error` from independent scrambles.
    Rqmc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaValue {
    pub n: usize,
    pub t: f64,
    pub value: f64,
    pub std_error: f64,
    pub method: AlphaMethod,
}

/// Default RQMC budget for α₃: 2¹⁴ points split over 16 scrambles.
pub const ALPHA3_LOG2_POINTS: u32 = 14;
pub const RQMC_REPLICATES: u32 = 16;
/// α₂ budget: 32 scrambles of 2¹⁶ points.
pub const ALPHA2_LOG2_POINTS: u32 = 16;
pub const ALPHA2_REPLICATES: u32 = 32;
/// Gauss–Legendre order per panel of the deterministic α₂ route.
pub const ALPHA2_NESTED_ORDER: usize = 10;
pub const RQMC_SEED: u32 = 0x5eed_0003;

/// α_n(t) for n ∈ {1, 2, 3}: spectral for n = 1, randomized QMC otherwise
/// (see [`alpha2_nested`] for the deterministic n = 2 route).
pub fn alpha_n(model: &CovarianceModel, n: usize, t: f64) -> Result<AlphaValue> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    match n {
        1 => Ok(AlphaValue { n, t, value: slab_spectral(model, t)?, std_error: 0.0, method: AlphaMethod::Spectral }),
        2 => alpha_rqmc(model, 2, t, ALPHA2_LOG2_POINTS, ALPHA2_REPLICATES, RQMC_SEED),
        3 => alpha_rqmc(model, 3, t, ALPHA3_LOG2_POINTS, RQMC_REPLICATES, RQMC_SEED),
        _ => Err(Error::Unsupported(format!("alpha_n for n = {n}"))),
    }
}

/// Chain of a time vector: labels sorted by time and the widths
/// c_k = τ_{k+1} − τ_k with τ_{n+1} = t.
fn chain(t: f64, times: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap_or(std::cmp::Ordering::Equal));
    let widths = (0..n)
        .map(|k| {
            let next = if k + 1 < n { times[order[k + 1]] } else { t };
            (next - times[order[k]]).max(0.0)
        })
        .collect();
    (order, widths)
}

/// Endpoint clustering exponent that smooths |u|^{α−1} and |u|^α factors.
fn cluster_k(model: &CovarianceModel) -> f64 {
    if model.is_white() {
        1.0
    } else {
        (1.0 / model.riesz_alpha).clamp(1.0, 8.0)
    }
}

/// ψ₂(𝐭,𝐬) = ⟨g_𝐭, g_𝐬⟩ over 𝒫₀^{⊗2}, reduced to one spatial integral.
pub fn psi2(model: &CovarianceModel, t: f64, tt: [f64; 2], ss: [f64; 2], gl: &GaussLegendre) -> f64 {
    let (ox, cx) = chain(t, &tt);
    let (oy, cy) = chain(t, &ss);
    let (a, a_root) = (cx[0], cx[1]);
    let (b, b_root) = (cy[0], cy[1]);
    if a_root <= 0.0 || b_root <= 0.0 || a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let k = cluster_k(model);
    let end = a_root + b_root;
    let lam = |v: f64| overlap(a_root, b_root, v);
    if ox[0] == oy[0] {
        // leaf labels agree: ∫ f(D)·W_{a,b}(D)·Λ(D) dD
        if model.is_white() {
            return model.space_box(-a, a, -b, b) * lam(0.0) / 16.0;
        }
        let fe = |d: f64| d.abs().powf(model.riesz_alpha - 1.0);
        let g = |d: f64| fe(d) * model.space_box(d - a, d + a, -b, b) * lam(d);
        let pts = panel_points(0.0, end, &[(a_root - b_root).abs(), a + b, (a - b).abs()]);
        2.0 * clustered_panels(&g, &pts, k, gl) / 16.0
    } else {
        // crossed leaves: ∫ w_a(e)·w_b(e)·Λ(e) de
        let hi = if model.is_white() { end.min(a).min(b) } else { end };
        let g = |e: f64| model.space_window(e, a) * model.space_window(e, b) * lam(e);
        let pts = panel_points(0.0, hi, &[(a_root - b_root).abs(), a, b]);
        2.0 * clustered_panels(&g, &pts, k, gl) / 16.0
    }
}

/// Endpoint clustering for the time levels; the z-ranges carry fractional powers of the outer times.
const TIME_CLUSTER: f64 = 2.0;

fn time_nodes(pts: &[f64], gl: &GaussLegendre) -> Vec<(f64, f64)> {
    clustered_nodes(pts, TIME_CLUSTER, gl)
}

/// Nodes for ∫ γ(τ−s) F(s) ds over s ∈ [0, t], with s = τ ± z^p, p = 1/(2H−1);
/// the weight H·dz then carries γ exactly. `kinks` are s-values where F is not smooth.
pub fn gamma_nodes(model: &CovarianceModel, t: f64, tau: f64, kinks: &[f64], gl: &GaussLegendre) -> Vec<(f64, f64)> {
    let p = 1.0 / (2.0 * model.hurst - 1.0);
    let mut out = Vec::new();
    for sign in [1.0f64, -1.0] {
        let room = if sign > 0.0 { t - tau } else { tau };
        if room <= 0.0 {
            continue;
        }
        let zmax = room.powf(1.0 / p);
        let zk: Vec<f64> = kinks
            .iter()
            .filter(|&&s| (s - tau) * sign > 0.0)
            .map(|&s| ((s - tau) * sign).powf(1.0 / p))
            .collect();
        for (z, wt) in clustered_nodes(&panel_points(0.0, zmax, &zk), 1.0, gl) {
            out.push((tau + sign * z.powf(p), model.hurst * wt));
        }
    }
    out
}

/// α₁ through the same nested time rule as α₂ (consistency check of the substitution).
pub fn alpha1_nested(model: &CovarianceModel, t: f64, order: usize) -> Result<f64> {
    let gl = GaussLegendre::cached(order);
    let mut rows = Vec::new();
    for (t1, w1) in time_nodes(&[0.0, t], gl) {
        let mut acc = 0.0;
        for (s1, ws) in gamma_nodes(model, t, t1, &[], gl) {
            acc += ws * model.green_inner0(t - t1, t - s1);
        }
        rows.push(w1 * acc);
    }
    Ok(pairwise_sum(&rows))
}

/// Values of s₂ where two breakpoints of the reduced ψ₂ integral collide
/// (or one hits 0); ψ₂ is smooth in s₂ between them.
pub fn psi2_kinks(t: f64, t1: f64, t2: f64, s1: f64) -> Vec<f64> {
    let (_, cx) = chain(t, &[t1, t2]);
    let (a, big_a) = (cx[0], cx[1]);
    let mut out = vec![s1];
    for (lo, hi) in [(0.0, s1), (s1, t)] {
        if hi - lo <= 0.0 {
            continue;
        }
        let q = |s2: f64| {
            let (_, cy) = chain(t, &[s1, s2]);
            let (b, big_b) = (cy[0], cy[1]);
            [big_a - big_b, big_a + big_b, a + b, a - b, a, b, big_a, big_b]
        };
        let (p0, p1) = (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo));
        let (v0, v1) = (q(p0), q(p1));
        let lin: Vec<(f64, f64)> = v0
            .iter()
            .zip(v1.iter())
            .map(|(&x, &y)| {
                let slope = (y - x) / (p1 - p0);
                (x - slope * p0, slope)
            })
            .collect();
        let mut push = |c0: f64, c1: f64| {
            if c1.abs() > 1e-12 {
                let r = -c0 / c1;
                if r > lo && r < hi {
                    out.push(r);
                }
            }
        };
        for i in 0..lin.len() {
            push(lin[i].0, lin[i].1);
            for j in i + 1..lin.len() {
                push(lin[i].0 - lin[j].0, lin[i].1 - lin[j].1);
                push(lin[i].0 + lin[j].0, lin[i].1 + lin[j].1);
            }
        }
    }
    out
}

/// α₂(t) by nested Gauss–Legendre over (t₁, s₁, t₂, s₂) with all ordering kinks
/// placed on panel boundaries and ψ₂ from [`psi2`].
pub fn alpha2_nested(model: &CovarianceModel, t: f64, order: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    let gl = GaussLegendre::cached(order);
    let inner_gl = GaussLegendre::cached(order);
    let mut rows = Vec::new();
    for (t1, w1) in time_nodes(&[0.0, t], gl) {
        let mut acc1 = 0.0;
        for (s1, ws1) in gamma_nodes(model, t, t1, &[], gl) {
            let mut acc2 = 0.0;
            {
                for (t2, w2) in time_nodes(&panel_points(0.0, t, &[t1]), gl) {
                    let kinks = psi2_kinks(t, t1, t2, s1);
                    let mut acc3 = 0.0;
                    for (s2, ws2) in gamma_nodes(model, t, t2, &kinks, gl) {
                        acc3 += ws2 * psi2(model, t, [t1, t2], [s1, s2], inner_gl);
                    }
                    acc2 += w2 * acc3;
                }
            }
            acc1 += ws1 * acc2;
        }
        rows.push(w1 * acc1);
    }
    let v = pairwise_sum(&rows);
    if !v.is_finite() {
        return Err(Error::Quadrature("alpha_2 nested quadrature".into()));
    }
    Ok(v)
}

/// Draws (t_j, s_j) from the normalized measure γ(t_j−s_j)dt_j ds_j / t^{2H} on [0,t]².
/// The gap |t_j−s_j|/t is Beta(2H−1, 2) = U₀^{1/(2H−1)}·U₁^{1/(2H)}.
#[inline]
fn pair_from_uniforms(h: f64, t: f64, u: [f64; 3]) -> (f64, f64) {
    let a = 2.0 * h - 1.0;
    let v = t * u[0].powf(1.0 / a) * u[1].powf(1.0 / (a + 1.0));
    let (lo, flip) = if u[2] < 0.5 { ((t - v) * 2.0 * u[2], false) } else { ((t - v) * (2.0 * u[2] - 1.0), true) };
    if flip {
        (lo + v, lo)
    } else {
        (lo, lo + v)
    }
}

/// Unbiased, bounded estimator of ψ_n(𝐭,𝐬) for n ≥ 2 from `2(n−1)` uniforms.
///
/// x-positions follow the x-chain (root p integrated exactly), y = x − d with
/// d_i drawn ∝ |d|^{α−1} on [−2t, 2t] except at the y-leaf label, whose d is
/// integrated exactly against its chain constraint.
pub fn psi_estimator(model: &CovarianceModel, t: f64, tt: &[f64], ss: &[f64], u: &[f64]) -> f64 {
    let n = tt.len();
    debug_assert!(n >= 2 && ss.len() == n && u.len() >= 2 * (n - 1));
    let (ox, cx) = chain(t, tt);
    let (oy, cy) = chain(t, ss);
    if cx.iter().chain(cy.iter()).any(|&c| c <= 0.0) {
        return 0.0;
    }
    let white = model.is_white();
    let alpha = model.riesz_alpha;
    let big_r = 2.0 * t;
    // x offsets relative to the root position p
    let mut off = vec![0.0; n];
    let mut weight = 4f64.powi(-(n as i32));
    for k in (0..n - 1).rev() {
        off[ox[k]] = off[ox[k + 1]] + cx[k] * (2.0 * u[k] - 1.0);
        weight *= 2.0 * cx[k];
    }
    let mut yoff = off.clone();
    let leaf = oy[0];
    let mut di = 0;
    for (i, y) in yoff.iter_mut().enumerate().take(n) {
        if i == leaf {
            continue;
        }
        if !white {
            let w = 2.0 * u[n - 1 + di] - 1.0;
            let d = w.signum() * big_r * w.abs().powf(1.0 / alpha);
            *y -= d;
            weight *= 2.0 * big_r.powf(alpha) / alpha;
        }
        di += 1;
    }
    for k in 1..n - 1 {
        if (yoff[oy[k]] - yoff[oy[k + 1]]).abs() >= cy[k] {
            return 0.0;
        }
    }
    let window = model.space_window(off[leaf] - yoff[oy[1]], cy[0]);
    let root = oy[n - 1];
    let lp = overlap(cx[n - 1], cy[n - 1], -yoff[root]);
    weight * window * lp
}

/// α_n(t) by randomized QMC: `replicates` independent Owen scrambles of 2^`log2_points`
/// Sobol points each; the reported error is the standard error across scrambles.
pub fn alpha_rqmc(model: &CovarianceModel, n: usize, t: f64, log2_points: u32, replicates: u32, seed: u32) -> Result<AlphaValue> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    if n < 2 || 5 * n > 256 {
        return Err(Error::Unsupported(format!("rqmc alpha for n = {n}")));
    }
    if log2_points > 16 || replicates < 2 {
        return Err(Error::Budget("rqmc needs at most 2^16 points and at least 2 scrambles".into()));
    }
    let npts = 1u32 << log2_points;
    let h = model.hurst;
    let mass = t.powf(2.0 * h * n as f64);
    let mut means = Vec::with_capacity(replicates as usize);
    let mut tt = vec![0.0; n];
    let mut ss = vec![0.0; n];
    let mut u = vec![0.0; 2 * (n - 1)];
    for rep in 0..replicates {
        let s = seed.wrapping_mul(0x9e37_79b9).wrapping_add(rep.wrapping_mul(0x85eb_ca6b));
        let mut vals = Vec::with_capacity(npts as usize);
        for i in 0..npts {
            let q = |d: u32| sobol_burley::sample(i, d, s) as f64 + 0.5 / 16_777_216.0;
            for j in 0..n {
                let d0 = 3 * j as u32;
                let (a, b) = pair_from_uniforms(h, t, [q(d0), q(d0 + 1), q(d0 + 2)]);
                tt[j] = a;
                ss[j] = b;
            }
            for (k, uk) in u.iter_mut().enumerate() {
                *uk = q(3 * n as u32 + k as u32);
            }
            vals.push(psi_estimator(model, t, &tt, &ss, &u));
        }
        means.push(mass * pairwise_sum(&vals) / npts as f64);
    }
    let r = means.len() as f64;
    let mean = means.iter().sum::<f64>() / r;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(AlphaValue { n, t, value: mean, std_error: (var / r).sqrt(), method: AlphaMethod::Rqmc })
}

/// e^{Mt}·n!·(2Γ_t K_M/M)^n.
pub fn alpha_bound(model: &CovarianceModel, n: usize, t: f64, m: f64) -> Result<f64> {
    let q = 2.0 * model.big_gamma(t) * model.k_m(m)? / m;
    Ok((m * t).exp() * factorial(n) * q.powi(n as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEntry {
    pub n: usize,
    pub m: f64,
    pub alpha: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaReport {
    pub t: f64,
    pub values: Vec<AlphaValue>,
    pub bounds: Vec<BoundEntry>,
    /// 1 + Σ_{k≤n} α_k/k! for n = 0, 1, …
    pub partial_sums: Vec<f64>,
    pub tail_bound: Option<f64>,
    pub best_m: Option<f64>,
}

impl AlphaReport {
    pub fn violations(&self) -> Vec<&BoundEntry> {
        self.bounds.iter().filter(|b| !b.holds).collect()
    }

    /// Tightest (smallest) bound for order n.
    pub fn tightest(&self, n: usize) -> Option<&BoundEntry> {
        self.bounds.iter().filter(|b| b.n == n).min_by(|a, b| a.bound.total_cmp(&b.bound))
    }
}

/// Checks α_n(t) ≤ e^{Mt}n!(2Γ_tK_M/M)^n for each M of the scan.
pub fn alpha_bound_check(model: &CovarianceModel, values: &[AlphaValue], m_scan: &[f64]) -> Result<AlphaReport> {
    let t = values.first().map(|v| v.t).unwrap_or(0.0);
    let mut bounds = Vec::new();
    for v in values {
        for &m in m_scan {
            let bound = alpha_bound(model, v.n, v.t, m)?;
            bounds.push(BoundEntry { n: v.n, m, alpha: v.value, bound, holds: v.value <= bound });
        }
    }
    Ok(AlphaReport { t, values: values.to_vec(), bounds, partial_sums: partial_sums(values), tail_bound: None, best_m: None })
}

fn partial_sums(values: &[AlphaValue]) -> Vec<f64> {
    let mut sums = vec![1.0];
    let mut acc = 1.0;
    let mut sorted: Vec<&AlphaValue> = values.iter().collect();
    sorted.sort_by_key(|v| v.n);
    for v in sorted {
        acc += v.value / factorial(v.n);
        sums.push(acc);
    }
    sums
}

/// Σ_{n>N} e^{Mt}q^n with q = 2Γ_tK_M/M, minimized over the doubling scan.
pub fn chaos_tail_bound(model: &CovarianceModel, t: f64, n_max: usize) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut m = 1.0;
    while m <= 4096.0 {
        let q = 2.0 * model.big_gamma(t) * model.k_m(m)? / m;
        if q < 1.0 {
            let tail = (m * t).exp() * q.powi(n_max as i32 + 1) / (1.0 - q);
            if best.is_none_or(|(b, _)| tail < b) {
                best = Some((tail, m));
            }
        }
        m *= 2.0;
    }
    best.ok_or(Error::NoAdmissibleM(4096.0))
}

/// E|u_N(t,x)|² partial sum Σ_{n≤N} α_n/n! with the geometric tail bound.
pub fn second_moment_series(model: &CovarianceModel, t: f64, n_max: usize) -> Result<AlphaReport> {
    if n_max > 3 {
        return Err(Error::Unsupported(format!("second moment series up to N = {n_max}")));
    }
    let values = if t > 0.0 { (1..=n_max).map(|n| alpha_n(model, n, t)).collect::<Result<Vec<_>>>()? } else { Vec::new() };
    let (tail, m) = if t > 0.0 { chaos_tail_bound(model, t, n_max)? } else { (0.0, 1.0) };
    Ok(AlphaReport { t, partial_sums: partial_sums(&values), values, bounds: Vec::new(), tail_bound: Some(tail), best_m: Some(m) })
}

/// Smallest M = 2^k ≥ 2 with e^{power}·Γ_T·(2/M)·K_M < 1/2.
pub fn select_m(model: &CovarianceModel, t_horizon: f64, power: f64) -> Result<(f64, f64)> {
    let g = model.big_gamma(t_horizon);
    let mut m = 2.0;
    while m <= M_SCAN_MAX {
        let ratio = power.exp() * g * (2.0 / m) * model.k_m(m)?;
        if ratio < 0.5 {
            return Ok((m, ratio));
        }
        m *= 2.0;
    }
    Err(Error::NoAdmissibleM(M_SCAN_MAX))
}

/// One order of ∫E|nI_{n−1}(f̃_n(·,r,z,t,x))|²dz against its bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderContribution {
    pub n: usize,
    pub r: f64,
    pub value: f64,
    /// H_j^{(n)}, j = 1..n.
    pub h_j: Vec<f64>,
    /// e^{2Mt}(2/M)^{n−1}K_M^{n−1}, the j-free bound on H_j^{(n)}.
    pub h_bound: f64,
    /// πt·n·Γ_t^{n−1}·Σ_j H_j^{(n)}.
    pub estimate_rhs: f64,
    /// πt·n²·Γ_t^{n−1}·e^{2Mt}(2/M)^{n−1}K_M^{n−1}.
    pub moment_rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstDerivativeBound {
    pub m_t: f64,
    pub ratio: f64,
    pub c_t: f64,
    pub orders: Vec<OrderContribution>,
}

/// ∫∫|2f̃₂(θ,w,r,z,t,x)|²dwdz: closed form, box quadrature and its bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderCheck {
    pub theta: f64,
    pub r: f64,
    pub closed_form: f64,
    pub quadrature: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondDerivativeBound {
    pub m_t_prime: f64,
    pub ratio: f64,
    pub c_t_prime: f64,
    pub c_t_dprime: f64,
    pub checks: Vec<SecondOrderCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalliavinBoundReport {
    pub t_horizon: f64,
    pub big_gamma: f64,
    pub first: FirstDerivativeBound,
    pub second: Option<SecondDerivativeBound>,
}

/// ∫⟨A_z(s), B_z(s')⟩₀ dz-type kernel of ‖2f̃₂(·,r,z)‖² integrated in z.
fn d2_space_kernel(model: &CovarianceModel, t: f64, r: f64, s: f64, sp: f64, gl: &GaussLegendre) -> f64 {
    let k = cluster_k(model);
    let rest = t - r;
    // piece with (r,z) first: ½1{|y−z|<a}·½1{|y|<A}; with (r,z) second: ½1{|y−z|<b}·½1{|z|<t−r}
    let cross = |a: f64, big_a: f64, b: f64| {
        if a <= 0.0 || b <= 0.0 || big_a <= 0.0 {
            return 0.0;
        }
        let hi = if model.is_white() { a.min(b) } else { a };
        let g = |e: f64| model.space_window(e, b) * overlap(big_a, rest, e);
        let pts = panel_points(0.0, hi, &[b, (big_a - rest).abs(), big_a + rest]);
        2.0 * clustered_panels(&g, &pts, k, gl) / 16.0
    };
    match (s > r, sp > r) {
        (true, true) => {
            let (a, ap, big_a, big_ap) = (s - r, sp - r, t - s, t - sp);
            if a <= 0.0 || ap <= 0.0 || big_a <= 0.0 || big_ap <= 0.0 {
                return 0.0;
            }
            if model.is_white() {
                return overlap(a, ap, 0.0) * overlap(big_a, big_ap, 0.0) / 16.0;
            }
            let fe = |d: f64| d.abs().powf(model.riesz_alpha - 1.0);
            let g = |d: f64| fe(d) * overlap(a, ap, d) * overlap(big_a, big_ap, d);
            let hi = (a + ap).min(big_a + big_ap);
            let pts = panel_points(0.0, hi, &[(a - ap).abs(), (big_a - big_ap).abs()]);
            2.0 * clustered_panels(&g, &pts, k, gl) / 16.0
        }
        (false, false) => {
            let (b, bp) = (r - s, r - sp);
            2.0 * rest * model.space_box(-b, b, -bp, bp) / 16.0
        }
        (true, false) => cross(s - r, t - s, r - sp),
        (false, true) => cross(sp - r, t - sp, r - s),
    }
}

/// ∫_ℝ E|2I₁(f̃₂(·,r,z,t,x))|² dz = ∫∫γ(s−s')∫⟨2f̃₂(s,·;r,z), 2f̃₂(s',·;r,z)⟩₀dz ds ds'.
pub fn d_order2_value(model: &CovarianceModel, t: f64, r: f64, order: usize) -> Result<f64> {
    if !(t > 0.0 && r >= 0.0 && r <= t) {
        return Err(Error::InvalidParameter(format!("need 0 ≤ r ≤ t, got r = {r}, t = {t}")));
    }
    let gl = GaussLegendre::cached(order);
    let mut rows = Vec::new();
    {
        for (s, w) in time_nodes(&panel_points(0.0, t, &[r]), gl) {
            let mut acc = 0.0;
            for (sp, ws) in gamma_nodes(model, t, s, &[r, 2.0 * r - s, 2.0 * r - s + (t - r)], gl) {
                acc += ws * d2_space_kernel(model, t, r, s, sp, gl);
            }
            rows.push(w * acc);
        }
    }
    let v = pairwise_sum(&rows);
    if !v.is_finite() {
        return Err(Error::Quadrature("first-derivative order-2 integral".into()));
    }
    Ok(v)
}

/// d_norm_constant: M_T, C_T and the n ≤ 2 contributions at the given r values.
pub fn d_norm_constant(model: &CovarianceModel, t_horizon: f64, r_values: &[f64]) -> Result<MalliavinBoundReport> {
    if !(t_horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t_horizon}")));
    }
    let t = t_horizon;
    let (m_t, ratio) = select_m(model, t, 2.0)?;
    let c_t = 2.0 * PI * t * (2.0 * m_t * t).exp() * E * E;
    let g = model.big_gamma(t);
    let k_m = model.k_m(m_t)?;
    let mut orders = Vec::new();
    for &r in r_values {
        if !(r >= 0.0 && r <= t) {
            return Err(Error::InvalidParameter(format!("r = {r} outside [0, T]")));
        }
        for n in 1..=2usize {
            let value = if n == 1 { 0.5 * (t - r) } else { d_order2_value(model, t, r, 16)? };
            let h_j = if n == 1 { vec![1.0] } else { vec![psi0_closed(model, t - r), psi0_closed(model, r)] };
            let nm1 = (n - 1) as i32;
            let h_bound = (2.0 * m_t * t).exp() * (2.0 / m_t * k_m).powi(nm1);
            let estimate_rhs = PI * t * n as f64 * g.powi(nm1) * h_j.iter().sum::<f64>();
            let moment_rhs = PI * t * (n * n) as f64 * g.powi(nm1) * h_bound;
            let holds = value <= estimate_rhs * (1.0 + 1e-9) && estimate_rhs <= moment_rhs * (1.0 + 1e-9) && h_j.iter().all(|&h| h <= h_bound);
            orders.push(OrderContribution { n, r, value, h_j, h_bound, estimate_rhs, moment_rhs, holds });
        }
    }
    Ok(MalliavinBoundReport { t_horizon: t, big_gamma: g, first: FirstDerivativeBound { m_t, ratio, c_t, orders }, second: None })
}

/// ∫∫|2f̃₂(θ,w,r,z,t,x)|²dwdz in closed form.
pub fn d2_order2_closed(t: f64, theta: f64, r: f64) -> f64 {
    let (lo, hi) = if theta < r { (theta, r) } else { (r, theta) };
    if lo < 0.0 || hi >= t || lo == hi {
        return 0.0;
    }
    (hi - lo) * (t - hi) / 4.0
}

/// Same integral by Gauss–Legendre over the indicator boxes (exact on each panel).
pub fn d2_order2_quadrature(t: f64, theta: f64, r: f64) -> f64 {
    let ks = ChaosKernelSet { order: 2, t, x: 0.0 };
    let gl = GaussLegendre::cached(4);
    let (lo, hi) = if theta < r { (theta, r) } else { (r, theta) };
    let (a, b) = (hi - lo, t - hi);
    let outer = panel_points(-t, t, &[-b, b]);
    let mut total = 0.0;
    for po in outer.windows(2) {
        for (zh, wz) in gl.on(po[0], po[1]) {
            let inner = panel_points(-2.0 * t, 2.0 * t, &[zh - a, zh + a]);
            for pi in inner.windows(2) {
                for (wl, ww) in gl.on(pi[0], pi[1]) {
                    // (θ,w) and (r,z) pinned; zh is the later point's space variable
                    let (later, earlier) = ((hi, zh), (lo, wl));
                    let v = 2.0 * ks.f_tilde(&[earlier, later]);
                    total += wz * ww * v * v;
                }
            }
        }
    }
    total
}

/// d2_norm_constant: M_T′, C_T″ = 2πT e^{2M_T′T}e³ and C_T′ from the series
/// (πT)²e^{3MT}Σ_{n≥2}[n(n−1)]²(Γ_T(2/M)K_M)^{n−2}, plus the n = 2 checks.
pub fn d2_norm_constant(model: &CovarianceModel, t_horizon: f64, pairs: &[(f64, f64)], r_values: &[f64]) -> Result<MalliavinBoundReport> {
    let mut report = d_norm_constant(model, t_horizon, r_values)?;
    let t = t_horizon;
    let (m, ratio) = select_m(model, t, 3.0)?;
    let c_t_dprime = 2.0 * PI * t * (2.0 * m * t).exp() * E.powi(3);
    let q = model.big_gamma(t) * (2.0 / m) * model.k_m(m)?;
    let mut series = 0.0;
    for n in 2..10_000usize {
        let term = ((n * (n - 1)) as f64).powi(2) * q.powi(n as i32 - 2);
        series += term;
        if term < 1e-17 * series {
            break;
        }
    }
    let c_t_prime = (PI * t).powi(2) * (3.0 * m * t).exp() * series;
    let rhs = 4.0 * (PI * t).powi(2) * (3.0 * m * t).exp();
    let checks = pairs
        .iter()
        .map(|&(theta, r)| {
            let closed_form = d2_order2_closed(t, theta, r);
            let quadrature = d2_order2_quadrature(t, theta, r);
            SecondOrderCheck { theta, r, closed_form, quadrature, rhs, holds: closed_form <= rhs && quadrature <= rhs }
        })
        .collect();
    report.second = Some(SecondDerivativeBound { m_t_prime: m, ratio, c_t_prime, c_t_dprime, checks });
    Ok(report)
}

/// Γ_T, K_M table, c₀, M_T, M_T′, C_T, C_T′, C_T″ and optionally C_T* = sup E u².
pub fn constants_table(model: &CovarianceModel, t_horizon: f64, c_t_star: Option<f64>) -> Result<ConstantsTable> {
    let rep = d2_norm_constant(model, t_horizon, &[], &[])?;
    let second = rep.second.expect("second-derivative constants");
    let mut ms = vec![1.0, 2.0, 5.0, 10.0, 20.0, rep.first.m_t, second.m_t_prime];
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    let k_m = ms.iter().map(|&m| Ok((m, model.k_m(m)?))).collect::<Result<Vec<_>>>()?;
    Ok(ConstantsTable {
        t_horizon,
        big_gamma_t: rep.big_gamma,
        k_m,
        c0: model.c0()?,
        m_t: rep.first.m_t,
        m_t_prime: second.m_t_prime,
        c_t: rep.first.c_t,
        c_t_prime: second.c_t_prime,
        c_t_dprime: second.c_t_dprime,
        c_t_star,
    })
}

/// C_t* bound: E u(s,y)² ≤ Σ_{n≤3} α_n(t)/n! + tail, uniformly in s ≤ t (α_n is increasing in t).
pub fn c_t_star(model: &CovarianceModel, t: f64) -> Result<f64> {
    let rep = second_moment_series(model, t, 3)?;
    let last = *rep.partial_sums.last().expect("nonempty");
    let se: f64 = rep.values.iter().map(|v| 3.0 * v.std_error / factorial(v.n)).sum();
    Ok(last + se + rep.tail_bound.unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> CovarianceModel {
        CovarianceModel::riesz(0.75, 0.5).unwrap()
    }

    #[test]
    fn f_n_examples() {
        assert_eq!(f_n_eval(1, &[(0.5, 0.0)], 1.0, 0.0), 0.5);
        assert_eq!(f_n_eval(2, &[(0.6, 0.0), (0.4, 0.0)], 1.0, 0.0), 0.0);
        assert_eq!(f_n_eval(2, &[(0.2, 0.1), (0.4, 0.0)], 1.0, 0.0), 0.25);
    }

    fn independent_f3(a: &[(f64, f64)], t: f64, x: f64) -> f64 {
        // product formula written out, compared against the loop evaluator
        let ind = |c: bool| if c { 1.0 } else { 0.0 };
        let g = |dt: f64, dx: f64| 0.5 * ind(dx.abs() < dt);
        ind(0.0 < a[0].0 && a[0].0 < a[1].0 && a[1].0 < a[2].0 && a[2].0 < t)
            * g(a[1].0 - a[0].0, a[1].1 - a[0].1)
            * g(a[2].0 - a[1].0, a[2].1 - a[1].1)
            * g(t - a[2].0, x - a[2].1)
    }

    #[test]
    fn f3_matches_independent_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut nonzero = 0;
        for _ in 0..2000 {
            let mut ts: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            ts.sort_by(f64::total_cmp);
            let a: Vec<(f64, f64)> = ts.iter().map(|&s| (s, rng.random_range(-0.4..0.4))).collect();
            let v = f_n_eval(3, &a, 1.0, 0.0);
            assert_eq!(v, independent_f3(&a, 1.0, 0.0));
            assert!((0.0..=0.125).contains(&v));
            if v > 0.0 {
                nonzero += 1;
            }
        }
        assert!(nonzero > 50);
    }

    #[test]
    fn symmetrization_identity_at_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4usize {
            let ks = ChaosKernelSet::new(n, 1.0, 0.0).unwrap();
            let mut hits = 0;
            for _ in 0..100 {
                let others: Vec<(f64, f64)> = (0..n - 1).map(|_| (rng.random::<f64>(), rng.random_range(-0.3..0.3))).collect();
                let (r, z) = (rng.random::<f64>(), rng.random_range(-0.3..0.3));
                let lhs = ks.f_tilde_at(&others, r, z);
                let rhs = ks.h_average(&others, r, z);
                assert!((lhs - rhs).abs() <= 1e-12, "n={n}: {lhs} vs {rhs}");
                if lhs > 0.0 {
                    hits += 1;
                }
            }
            assert!(hits > 0, "no admissible tuple for n={n}");
        }
    }

    #[test]
    fn psi_closed_form_and_grid() {
        assert_eq!(psi(1.0), 0.25);
        assert_eq!(psi(0.0), 0.0);
        for &t in &[0.5, 1.0, 2.0] {
            assert!((psi_grid(t, 64) - psi(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn psi0_spectral_matches_closed_form() {
        let m = defaults();
        for &t in &[0.1, 0.5, 0.9] {
            assert_relative_eq!(psi0(&m, t).unwrap(), psi0_closed(&m, t), max_relative = 1e-8);
            assert!(psi0_closed(&m, t) <= m.c0().unwrap() * t);
        }
        let w = CovarianceModel::white(0.75).unwrap();
        assert_relative_eq!(psi0(&w, 0.7).unwrap(), 0.49 / 4.0, max_relative = 1e-8);
        assert!(psi0_closed(&m, 1e-3) <= m.c0().unwrap() * 1e-3);
    }

    #[test]
    fn phi_equals_alpha1_and_gamma_psi0_bound() {
        let m = defaults();
        let p = phi(&m, 1.0).unwrap();
        let a1 = alpha_n(&m, 1, 1.0).unwrap().value;
        assert_relative_eq!(p, a1, max_relative = 1e-6);
        assert_relative_eq!(alpha1_nested(&m, 1.0, 16).unwrap(), p, max_relative = 1e-6);
        let mut prev = 0.0;
        for k in 1..=9 {
            let t = k as f64 / 10.0;
            let v = phi(&m, t).unwrap();
            assert!(v > prev);
            assert!(v <= m.big_gamma(t) * psi0_closed(&m, t));
            prev = v;
        }
        let w = CovarianceModel::white(0.75).unwrap();
        assert!(phi(&w, 0.2).unwrap() <= w.big_gamma(0.2) * psi(0.2));
    }

    #[test]
    fn psi2_reduction_matches_spatial_estimator() {
        // fixed times, plain Monte Carlo over the spatial estimator vs the 1-D reduction
        let m = defaults();
        let gl = GaussLegendre::cached(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(tt, ss) in &[([0.2, 0.6], [0.3, 0.7]), ([0.2, 0.6], [0.7, 0.1]), ([0.5, 0.1], [0.45, 0.3])] {
            let exact = psi2(&m, 1.0, tt, ss, gl);
            let n = 400_000;
            let vals: Vec<f64> = (0..n).map(|_| psi_estimator(&m, 1.0, &tt, &ss, &[rng.random(), rng.random()])).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((mean - exact).abs() < 4.0 * se, "{tt:?} {ss:?}: {mean} ± {se} vs {exact}");
        }
    }

    #[test]
    fn psi2_converges_in_panel_order() {
        let m = defaults();
        let a = psi2(&m, 1.0, [0.2, 0.6], [0.7, 0.1], GaussLegendre::cached(24));
        let b = psi2(&m, 1.0, [0.2, 0.6], [0.7, 0.1], GaussLegendre::cached(40));
        assert_relative_eq!(a, b, max_relative = 1e-9);
    }

    #[test]
    fn permutation_count() {
        let mut c = 0;
        for_each_permutation(4, |_| c += 1);
        assert_eq!(c, 24);
    }

    #[test]
    fn d2_closed_form_and_quadrature_agree() {
        for &(th, r) in &[(0.2, 0.5), (0.7, 0.3), (0.1, 0.9)] {
            let c = d2_order2_closed(1.0, th, r);
            let q = d2_order2_quadrature(1.0, th, r);
            assert_relative_eq!(c, q, max_relative = 1e-12);
        }
    }

    #[test]
    fn nested_routes_agree_in_white_mode() {
        let w = CovarianceModel::white(0.75).unwrap();
        assert_relative_eq!(alpha1_nested(&w, 1.0, 16).unwrap(), phi(&w, 1.0).unwrap(), max_relative = 1e-6);
        let a = alpha2_nested(&w, 1.0, ALPHA2_NESTED_ORDER).unwrap();
        let b = alpha_rqmc(&w, 2, 1.0, ALPHA2_LOG2_POINTS, ALPHA2_REPLICATES, RQMC_SEED).unwrap();
        assert!((a - b.value).abs() < 1e-3 * a, "{a} vs {b:?}");
    }

    #[test]
    fn rqmc_is_exactly_homogeneous_in_t() {
        let m = defaults();
        let e = 2.0 * m.hurst + 1.0 + m.riesz_alpha;
        let one = alpha_rqmc(&m, 3, 1.0, 8, 4, 2).unwrap();
        let half = alpha_rqmc(&m, 3, 0.5, 8, 4, 2).unwrap();
        assert_relative_eq!(half.value, 0.5f64.powf(3.0 * e) * one.value, max_relative = 1e-9);
    }

    #[test]
    fn alpha3_standard_error_below_one_percent() {
        let a = alpha_n(&defaults(), 3, 1.0).unwrap();
        assert!(a.value > 0.0 && a.std_error < 0.01 * a.value, "{a:?}");
    }

    #[test]
    fn bound_chain_holds_for_low_orders() {
        let m = defaults();
        let vals: Vec<AlphaValue> = (1..=3).map(|n| alpha_n(&m, n, 0.5).unwrap()).collect();
        let rep = alpha_bound_check(&m, &vals, &[2.0, 5.0, 10.0, 20.0]).unwrap();
        assert!(rep.violations().is_empty());
        assert_eq!(rep.bounds.len(), 12);
        assert!(rep.tightest(1).is_some());
        assert_eq!(rep.partial_sums.len(), 4);
    }

    #[test]
    fn series_tail_is_small() {
        let m = defaults();
        let (tail, mm) = chaos_tail_bound(&m, 1.0, 3).unwrap();
        assert!(tail < 1e-2 && mm >= 2.0, "{tail} at M={mm}");
    }

    #[test]
    fn m_selection_for_defaults() {
        let m = defaults();
        let (mt, ratio) = select_m(&m, 1.0, 2.0).unwrap();
        assert_eq!(mt, 8.0);
        assert!(ratio < 0.5);
        let (mtp, _) = select_m(&m, 1.0, 3.0).unwrap();
        assert!(mtp >= mt);
    }

    #[test]
    fn first_derivative_orders_respect_bounds() {
        let m = defaults();
        let rep = d_norm_constant(&m, 1.0, &[0.25, 0.5, 0.75]).unwrap();
        assert_eq!(rep.first.orders.len(), 6);
        for o in &rep.first.orders {
            assert!(o.value >= 0.0 && o.holds, "{o:?}");
        }
        let v = rep.first.orders.iter().find(|o| o.n == 2 && o.r == 0.5).unwrap();
        assert!(v.value > 0.0);
        assert_relative_eq!(rep.first.c_t, 2.0 * PI * (16.0f64).exp() * E * E, max_relative = 1e-12);
    }

    #[test]
    fn d_order2_converges() {
        let m = defaults();
        let a = d_order2_value(&m, 1.0, 0.4, 12).unwrap();
        let b = d_order2_value(&m, 1.0, 0.4, 24).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-4);
    }

    #[test]
    fn second_derivative_constants() {
        let m = defaults();
        let rep = d2_norm_constant(&m, 1.0, &[(0.2, 0.5), (0.6, 0.3)], &[]).unwrap();
        let s = rep.second.unwrap();
        assert!(s.checks.iter().all(|c| c.holds));
        assert_eq!(s.checks[1].closed_form, d2_order2_closed(1.0, 0.3, 0.6));
        assert!(s.c_t_prime > 4.0 * PI * PI * (3.0 * s.m_t_prime).exp());
        assert!(s.c_t_dprime > 0.0);
        let table = constants_table(&m, 1.0, None).unwrap();
        assert_eq!(table.m_t, 8.0);
        assert!(table.k_m.iter().any(|&(mm, _)| mm == 8.0));
    }

    #[test]
    fn kernel_set_rejects_bad_input() {
        assert!(ChaosKernelSet::new(0, 1.0, 0.0).is_err());
        assert!(ChaosKernelSet::new(2, 0.0, 0.0).is_err());
        assert!(alpha_n(&defaults(), 4, 1.0).is_err());
        assert!(alpha_n(&defaults(), 1, 0.0).is_err());
    }
}
