//! One-dimensional quadrature: adaptive Gauss–Kronrod, fixed Gauss–Legendre,
//! algebraic endpoint weights and closed-form oscillatory power tails.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_evals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-9, rel: 1e-8, max_evals: 1_000_000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, ..Self::default() }
    }

    pub fn tight() -> Self {
        Self { abs: 1e-13, rel: 1e-11, max_evals: 2_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_846_701,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// 21-point Kronrod rule with embedded 10-point Gauss rule; returns (value, |K-G|).
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[10] * fc;
    let mut g = 0.0;
    for j in 0..10 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Global adaptive Gauss–Kronrod over `[a, b]`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    adaptive_points(f, &[a, b], tol)
}

/// Global adaptive Gauss–Kronrod over consecutive segments of `points`
/// (sorted; duplicates are skipped). Breakpoints should sit on kinks and jumps.
pub fn adaptive_points<F: Fn(f64) -> f64>(f: &F, points: &[f64], tol: Tolerance) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    let mut evals = 0usize;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let (value, error) = gk21(f, a, b);
        evals += 21;
        heap.push(Segment { a, b, value, error });
    }
    loop {
        let (mut total, mut err) = (frozen_value, frozen_error);
        for s in heap.iter() {
            total += s.value;
            err += s.error;
        }
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        let target = tol.abs.max(tol.rel * total.abs());
        if err <= target || heap.is_empty() {
            return Ok(Estimate { value: total, error: err, evals });
        }
        if evals + 42 > tol.max_evals {
            return Err(Error::Quadrature(format!(
                "budget of {} evaluations exhausted (estimate {total:e}, error {err:e})",
                tol.max_evals
            )));
        }
        let worst = heap.pop().expect("nonempty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b || (worst.b - worst.a) < 1e-15 * worst.a.abs().max(worst.b.abs()) {
            frozen_value += worst.value;
            frozen_error += worst.error;
            if heap.is_empty() || frozen_error > target {
                return Ok(Estimate { value: frozen_value + heap.iter().map(|s| s.value).sum::<f64>(), error: err, evals });
            }
            continue;
        }
        let (v1, e1) = gk21(f, worst.a, m);
        let (v2, e2) = gk21(f, m, worst.b);
        evals += 42;
        heap.push(Segment { a: worst.a, b: m, value: v1, error: e1 });
        heap.push(Segment { a: m, b: worst.b, value: v2, error: e2 });
    }
}

/// `∫_0^len u^beta F(u) du` for `beta > -1`, through `u = len·w^{1/(beta+1)}`,
/// which turns the algebraic endpoint weight into a constant.
pub fn power_weight<F: Fn(f64) -> f64>(f: &F, beta: f64, len: f64, tol: Tolerance) -> Result<Estimate> {
    if len <= 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0, evals: 0 });
    }
    let p = 1.0 / (beta + 1.0);
    let scale = len.powf(beta + 1.0) / (beta + 1.0);
    let g = |w: f64| f(len * w.powf(p));
    let mut est = adaptive(&g, 0.0, 1.0, Tolerance { abs: tol.abs / scale.max(1e-300), ..tol })?;
    est.value *= scale;
    est.error *= scale;
    Ok(est)
}

/// Fixed-rule version of [`power_weight`].
pub fn power_weight_gl<F: Fn(f64) -> f64>(gl: &GaussLegendre, f: &F, beta: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let p = 1.0 / (beta + 1.0);
    let scale = len.powf(beta + 1.0) / (beta + 1.0);
    scale * gl.integrate(&|w: f64| f(len * w.powf(p)), 0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = nf * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Cached rule for `n ≤ 64`.
    pub fn cached(n: usize) -> &'static GaussLegendre {
        static CACHE: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
        let all = CACHE.get_or_init(|| (1..=64).map(GaussLegendre::new).collect());
        &all[n - 1]
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    /// Mapped nodes and weights on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, w * h))
    }
}

/// `∫_a^∞ cos(ω v + θ) v^{-q} dv` for `a > 0`, `q > 1`.
pub fn cos_power_tail(omega: f64, phase: f64, q: f64, a: f64) -> f64 {
    assert!(a > 0.0 && q > 1.0);
    let (w, th) = if omega < 0.0 { (-omega, -phase) } else { (omega, phase) };
    if w == 0.0 {
        return th.cos() * a.powf(1.0 - q) / (q - 1.0);
    }
    const SWITCH: f64 = 40.0;
    if w * a >= SWITCH {
        return asymptotic_tail(w, th, q, a);
    }
    let b = SWITCH / w;
    // geometric panels, each refined to ~1/8 period
    let mut pts = vec![a];
    let mut x = a;
    let step = std::f64::consts::PI / (4.0 * w);
    while x < b {
        x = (x + step).max(x * 1.25).min(b);
        pts.push(x);
    }
    let f = |v: f64| (w * v + th).cos() * v.powf(-q);
    let head = adaptive_points(&f, &pts, Tolerance { abs: 1e-16, rel: 1e-13, max_evals: 400_000 })
        .map(|e| e.value)
        .unwrap_or_else(|_| pts.windows(2).map(|p| GaussLegendre::cached(30).integrate(&f, p[0], p[1])).sum());
    head + asymptotic_tail(w, th, q, b)
}

fn asymptotic_tail(w: f64, th: f64, q: f64, a: f64) -> f64 {
    // J = -e^{iωa} a^{-q}/(iω) Σ_k (q)_k (iωa)^{-k}
    let z = w * a;
    let (mut re, mut im) = (1.0, 0.0);
    let (mut tr, mut ti) = (1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 0..200 {
        // term *= (q+k)/(i z) = -(q+k) i / z
        let s = (q + k as f64) / z;
        let (nr, ni) = (ti * s, -tr * s);
        let mag = nr.hypot(ni);
        if mag >= last || mag < 1e-18 {
            break;
        }
        last = mag;
        tr = nr;
        ti = ni;
        re += tr;
        im += ti;
    }
    // prefactor -e^{i(ωa+θ)} a^{-q} / (iω) = i e^{i(ωa+θ)} a^{-q}/ω
    let ang = z + th;
    let (c, s) = (ang.cos(), ang.sin());
    let amp = a.powf(-q) / w;
    // i (c + i s) = -s + i c
    let (pr, pi) = (-s * amp, c * amp);
    pr * re - pi * im
}

/// Fixed-rule integral over consecutive panels `[pts[i], pts[i+1]]`, each mapped
/// by `u = p + (q−p)·w^k/(w^k+(1−w)^k)`. With `k = 1/α` an endpoint factor
/// `|u−p|^{α−1}` or `|u−p|^α` becomes smooth in `w`.
pub fn clustered_panels<F: Fn(f64) -> f64>(f: &F, pts: &[f64], k: f64, gl: &GaussLegendre) -> f64 {
    clustered_nodes(pts, k, gl).into_iter().map(|(x, w)| w * f(x)).sum()
}

/// Nodes and weights of [`clustered_panels`].
pub fn clustered_nodes(pts: &[f64], k: f64, gl: &GaussLegendre) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(pts.len().saturating_sub(1) * gl.nodes.len());
    for win in pts.windows(2) {
        let (p, q) = (win[0], win[1]);
        let len = q - p;
        if !(len > 0.0) {
            continue;
        }
        for (x, w) in gl.on(0.0, 1.0) {
            if k == 1.0 {
                out.push((p + len * x, w * len));
            } else {
                let a = x.powf(k);
                let b = (1.0 - x).powf(k);
                let den = a + b;
                let jac = k * (x * (1.0 - x)).powf(k - 1.0) / (den * den);
                out.push((p + len * a / den, w * jac * len));
            }
        }
    }
    out
}

/// Sorted, deduplicated breakpoints of `[lo, hi]` including both ends.
pub fn panel_points(lo: f64, hi: f64, interior: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = interior.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inner.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let scale = (hi - lo).abs().max(f64::MIN_POSITIVE);
    for x in inner {
        if x - *pts.last().expect("nonempty") > 1e-13 * scale {
            pts.push(x);
        }
    }
    if hi - *pts.last().expect("nonempty") > 1e-13 * scale {
        pts.push(hi);
    } else if pts.len() > 1 {
        *pts.last_mut().expect("nonempty") = hi;
    } else {
        pts.push(hi);
    }
    pts
}

/// Pairwise (cascade) summation; result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        let gl = GaussLegendre::new(7);
        let v = gl.integrate(&|x: f64| x.powi(12) - 3.0 * x.powi(5) + 1.0, -1.0, 2.0);
        let exact = (2f64.powi(13) + 1.0) / 13.0 - 3.0 * (64.0 - 1.0) / 6.0 + 3.0;
        assert_relative_eq!(v, exact, max_relative = 1e-13);
        assert_relative_eq!(gl.weights.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks_and_peaks() {
        let f = |x: f64| (x - 0.3).abs() + 1.0 / (1.0 + 1e4 * (x - 0.7).powi(2));
        let est = adaptive_points(&f, &[0.0, 0.3, 1.0], Tolerance::tight()).unwrap();
        let exact = 0.5 * 0.09 + 0.5 * 0.49 + ((100.0 * 0.3f64).atan() + (100.0 * 0.7f64).atan()) / 100.0;
        assert_relative_eq!(est.value, exact, max_relative = 1e-11);
    }

    #[test]
    fn power_weight_removes_endpoint_singularity() {
        let est = power_weight(&|u: f64| (-u).exp(), -0.5, 3.0, Tolerance::tight()).unwrap();
        // ∫_0^3 u^{-1/2} e^{-u} du = Γ(1/2) P(1/2, 3)
        let exact = std::f64::consts::PI.sqrt() * statrs::function::gamma::gamma_lr(0.5, 3.0);
        assert_relative_eq!(est.value, exact, max_relative = 1e-11);
    }

    #[test]
    fn cos_power_tail_matches_direct_integration() {
        for &(w, th, q, a) in &[(0.0, 0.3, 2.5, 1.0), (3.0, 0.2, 2.0, 50.0), (0.05, -1.0, 2.5, 2.0), (-1.3, 0.7, 1.5, 5.0)] {
            let tail = cos_power_tail(w, th, q, a);
            // direct: integrate to a large cutoff plus the non-oscillatory remainder estimate
            let big: f64 = 4.0e4;
            let f = |v: f64| (w * v + th).cos() * v.powf(-q);
            let mut pts = vec![a];
            let mut x = a;
            while x < big {
                x = (x + 0.5).max(x * 1.02).min(big);
                pts.push(x);
            }
            let head = adaptive_points(&f, &pts, Tolerance { abs: 1e-15, rel: 1e-13, max_evals: 5_000_000 }).unwrap().value;
            let rest = if w == 0.0 { th.cos() * big.powf(1.0 - q) / (q - 1.0) } else { asymptotic_tail(w.abs(), if w < 0.0 { -th } else { th }, q, big) };
            assert_relative_eq!(tail, head + rest, max_relative = 1e-9, epsilon = 1e-13);
        }
    }

    #[test]
    fn pairwise_sum_agrees_with_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
