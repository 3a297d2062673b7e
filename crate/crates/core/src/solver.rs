//! Truncated chaos solution u_N on a grid.
//!
//! Kernels are cell averages of f_n computed on q×q sub-nodes per cell with a
//! discrete Green function, mapped to normal coordinates through the noise
//! factors, and contracted as diagonal-free Wick sums.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels;
use crate::model::CovarianceModel;
use crate::noise::{self, CellCovariance, GridSpec};
use crate::quad::pairwise_sum;

/// Sub-nodes per cell axis.
pub const DEFAULT_SUBNODES: usize = 1;
/// Highest chaos order.
pub const MAX_ORDER: usize = 3;
/// Order-3 tensors are limited to this many cells.
pub const MAX_CELLS_ORDER3: usize = 144;
/// Numerical zero for Q.
pub const Q_EPSILON: f64 = 1e-8;

/// G with value ¼ on the light cone |ξ| = τ (mean of the one-sided limits).
#[inline]
pub fn green_discrete(tau: f64, xi: f64, eps: f64) -> f64 {
    if tau <= eps {
        return 0.0;
    }
    let d = xi.abs() - tau;
    if d < -eps {
        0.5
    } else if d <= eps {
        0.25
    } else {
        0.0
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Grid, factorized noise covariance and sub-node layout shared by every target.
#[derive(Debug)]
pub struct SolverGrid {
    pub model: CovarianceModel,
    pub grid: GridSpec,
    pub cov: CellCovariance,
    pub sub: usize,
    nodes: Vec<(f64, f64)>,
    eps: f64,
    a1_nodes: OnceLock<Vec<f64>>,
    a2_nodes: OnceLock<Vec<f64>>,
}

impl SolverGrid {
    pub fn new(model: &CovarianceModel, grid: &GridSpec, sub: usize) -> Result<Self> {
        if sub == 0 {
            return Err(Error::InvalidParameter("need at least one sub-node per axis".into()));
        }
        let cov = noise::factorize(CellCovariance::assemble(model, grid))?;
        let (dt, dx) = (grid.dt(), grid.dx());
        let mut nodes = Vec::with_capacity(grid.cells() * sub * sub);
        for i in 0..grid.nt {
            for k in 0..grid.nx {
                for a in 0..sub {
                    for b in 0..sub {
                        let s = (i as f64 + (a as f64 + 0.5) / sub as f64) * dt;
                        let y = -grid.half_width + (k as f64 + (b as f64 + 0.5) / sub as f64) * dx;
                        nodes.push((s, y));
                    }
                }
            }
        }
        let eps = 1e-9 * dt.min(dx);
        Ok(Self { model: *model, grid: *grid, cov, sub, nodes, eps, a1_nodes: OnceLock::new(), a2_nodes: OnceLock::new() })
    }

    /// Number of cells m = nt·nx.
    pub fn m(&self) -> usize {
        self.grid.cells()
    }

    fn per_cell(&self) -> usize {
        self.sub * self.sub
    }

    #[inline]
    fn g(&self, from: (f64, f64), to: (f64, f64)) -> f64 {
        green_discrete(to.0 - from.0, to.1 - from.1, self.eps)
    }

    fn cell_nodes(&self, c: usize) -> &[(f64, f64)] {
        let q = self.per_cell();
        &self.nodes[c * q..(c + 1) * q]
    }

    /// a₁(target)[c]: sub-node mean of G(target − z) over cell c.
    pub fn first_order_at(&self, target: (f64, f64)) -> Vec<f64> {
        let w = 1.0 / self.per_cell() as f64;
        (0..self.m()).map(|c| w * self.cell_nodes(c).iter().map(|&z| self.g(z, target)).sum::<f64>()).collect()
    }

    fn a1_nodes(&self) -> &[f64] {
        self.a1_nodes.get_or_init(|| self.nodes.iter().flat_map(|&z| self.first_order_at(z)).collect())
    }

    /// a₂ at every sub-node (only needed for order 3).
    fn a2_nodes(&self) -> &[f64] {
        self.a2_nodes.get_or_init(|| self.nodes.iter().flat_map(|&z| self.raw_next(z, 2, self.a1_nodes())).collect())
    }

    /// One smoothing step: a_n(target)[c₁..c_n] = mean_{z∈c_n} G(target−z)·a_{n−1}(z)[c₁..c_{n−1}],
    /// with `prev` holding a_{n−1} at every sub-node.
    fn raw_next(&self, target: (f64, f64), n: usize, prev: &[f64]) -> Vec<f64> {
        let m = self.m();
        let inner = m.pow(n as u32 - 1);
        let q = self.per_cell();
        let w = 1.0 / q as f64;
        let mut out = vec![0.0; inner * m];
        for c in 0..m {
            for (j, &z) in self.cell_nodes(c).iter().enumerate() {
                let gz = self.g(z, target);
                if gz == 0.0 {
                    continue;
                }
                let node = c * q + j;
                let src = &prev[node * inner..(node + 1) * inner];
                for (p, &v) in src.iter().enumerate() {
                    out[p * m + c] += w * gz * v;
                }
            }
        }
        out
    }

    fn check_order(&self, n: usize) -> Result<()> {
        if n > MAX_ORDER {
            return Err(Error::Unsupported(format!("chaos order {n} > {MAX_ORDER}")));
        }
        if n == 3 && self.m() > MAX_CELLS_ORDER3 {
            return Err(Error::Budget(format!("order-3 tensors need nt·nx ≤ {MAX_CELLS_ORDER3}, got {}", self.m())));
        }
        Ok(())
    }

    /// Ordered (unsymmetrized) cell kernel a_n(target) by the Picard recursion.
    pub fn raw_kernel(&self, target: (f64, f64), n: usize) -> Result<Vec<f64>> {
        self.check_order(n)?;
        Ok(match n {
            0 => vec![1.0],
            1 => self.first_order_at(target),
            2 => self.raw_next(target, 2, self.a1_nodes()),
            _ => self.raw_next(target, 3, self.a2_nodes()),
        })
    }

    /// Same kernel from the product formula over sub-node chains.
    pub fn raw_kernel_direct(&self, target: (f64, f64), n: usize) -> Result<Vec<f64>> {
        self.check_order(n)?;
        let m = self.m();
        let w = 1.0 / self.per_cell() as f64;
        let mut out = vec![0.0; m.pow(n as u32)];
        if n == 0 {
            return Ok(vec![1.0]);
        }
        let mut idx = vec![0usize; n];
        // odometer over cell tuples, innermost loops over sub-node chains
        loop {
            let mut acc = 0.0;
            self.chain_sum(&idx, 0, None, 1.0, target, &mut acc);
            let flat = idx.iter().fold(0, |f, &c| f * m + c);
            out[flat] = acc * w.powi(n as i32);
            let mut p = n;
            loop {
                if p == 0 {
                    return Ok(out);
                }
                p -= 1;
                idx[p] += 1;
                if idx[p] < m {
                    break;
                }
                idx[p] = 0;
            }
        }
    }

    fn chain_sum(&self, cells: &[usize], k: usize, prev: Option<(f64, f64)>, prod: f64, target: (f64, f64), acc: &mut f64) {
        if k == cells.len() {
            *acc += prod * self.g(prev.expect("n ≥ 1"), target);
            return;
        }
        for &z in self.cell_nodes(cells[k]) {
            let f = match prev {
                None => 1.0,
                Some(p) => self.g(p, z),
            };
            if f != 0.0 {
                self.chain_sum(cells, k + 1, Some(z), prod * f, target, acc);
            }
        }
    }

    /// y = Lᵀ v for one tensor mode: L_timeᵀ·V·L_space on the nt×nx reshaping.
    fn apply_lt(&self, v: &[f64]) -> Vec<f64> {
        let (lt, ls) = self.cov.factors().expect("factorized at construction");
        let mat = DMatrix::from_row_slice(self.grid.nt, self.grid.nx, v);
        let y = lt.matrix.transpose() * mat * &ls.matrix;
        row_major(&y)
    }

    /// Cell values from a coordinate gradient: (Lᵀ)⁻¹g.
    pub fn cell_field(&self, g: &[f64]) -> DMatrix<f64> {
        let (lt, ls) = self.cov.factors().expect("factorized at construction");
        let mat = DMatrix::from_row_slice(self.grid.nt, self.grid.nx, g);
        &lt.inv_transpose * mat * ls.inv_transpose.transpose()
    }

    /// Coefficient tensors of u_N(t, x) for orders 1..=N.
    pub fn project_kernels(&self, t: f64, x: f64, order: usize) -> Result<ChaosCoefficients> {
        if !(t >= 0.0 && t <= self.grid.t_horizon + 1e-12 && x.abs() <= self.grid.half_width) {
            return Err(Error::InvalidParameter(format!("target ({t}, {x}) outside the grid")));
        }
        self.check_order(order)?;
        let m = self.m();
        let mut raw = Vec::with_capacity(order);
        let mut tensors = Vec::with_capacity(order);
        for n in 1..=order {
            let a = symmetrize(&self.raw_kernel((t, x), n)?, n, m);
            let mut tt = a.clone();
            for mode in 0..n {
                transform_mode(&mut tt, n, m, mode, |v| self.apply_lt(v));
            }
            zero_diagonals(&mut tt, n, m);
            raw.push(a);
            tensors.push(tt);
        }
        Ok(ChaosCoefficients { t, x, order, m, raw, tensors })
    }
}

fn row_major(y: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    for i in 0..y.nrows() {
        for k in 0..y.ncols() {
            out.push(y[(i, k)]);
        }
    }
    out
}

/// Average over index permutations of an order-n tensor (n ≤ 3).
pub fn symmetrize(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    match n {
        0 | 1 => a.to_vec(),
        2 => {
            let mut out = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] = 0.5 * (a[i * m + j] + a[j * m + i]);
                }
            }
            out
        }
        _ => {
            let mut out = vec![0.0; m * m * m];
            let at = |i: usize, j: usize, k: usize| a[(i * m + j) * m + k];
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        out[(i * m + j) * m + k] =
                            (at(i, j, k) + at(i, k, j) + at(j, i, k) + at(j, k, i) + at(k, i, j) + at(k, j, i)) / 6.0;
                    }
                }
            }
            out
        }
    }
}

/// Applies `op` along one mode of a flattened m^n tensor.
fn transform_mode<F: Fn(&[f64]) -> Vec<f64>>(t: &mut [f64], n: usize, m: usize, mode: usize, op: F) {
    let stride = m.pow((n - 1 - mode) as u32);
    let outer = m.pow(mode as u32);
    let mut fiber = vec![0.0; m];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * m * stride + s;
            for (c, f) in fiber.iter_mut().enumerate() {
                *f = t[base + c * stride];
            }
            let y = op(&fiber);
            for (c, v) in y.into_iter().enumerate() {
                t[base + c * stride] = v;
            }
        }
    }
}

fn zero_diagonals(t: &mut [f64], n: usize, m: usize) {
    match n {
        2 => (0..m).for_each(|j| t[j * m + j] = 0.0),
        3 => {
            for i in 0..m {
                for j in 0..m {
                    t[(i * m + i) * m + j] = 0.0;
                    t[(i * m + j) * m + i] = 0.0;
                    t[(j * m + i) * m + i] = 0.0;
                }
            }
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosCoefficients {
    pub t: f64,
    pub x: f64,
    pub order: usize,
    pub m: usize,
    /// Symmetrized cell averages of f_n, order 1..=N.
    pub raw: Vec<Vec<f64>>,
    /// Diagonal-free tensors in normal coordinates, order 1..=N.
    pub tensors: Vec<Vec<f64>>,
}

impl ChaosCoefficients {
    pub fn tensor(&self, n: usize) -> &[f64] {
        &self.tensors[n - 1]
    }

    pub fn norm2(&self, n: usize) -> f64 {
        self.tensor(n).iter().map(|v| v * v).sum()
    }

    /// Var(I_n) = n!‖T_n‖².
    pub fn variance(&self, n: usize) -> f64 {
        factorial(n) * self.norm2(n)
    }

    /// Discrete α_n = (n!)²‖T_n‖².
    pub fn discrete_alpha(&self, n: usize) -> f64 {
        factorial(n) * self.variance(n)
    }

    /// E u_N² = 1 + Σ n!‖T_n‖².
    pub fn second_moment(&self) -> f64 {
        1.0 + (1..=self.order).map(|n| self.variance(n)).sum::<f64>()
    }

    /// Wick contraction I_n(ζ) (diagonal entries are zero).
    pub fn wick(&self, n: usize, z: &[f64]) -> f64 {
        let t = self.tensor(n);
        let m = self.m;
        match n {
            1 => dot(t, z),
            2 => (0..m).map(|j| z[j] * dot(&t[j * m..(j + 1) * m], z)).sum(),
            _ => (0..m)
                .map(|j| {
                    z[j] * (0..m).map(|k| z[k] * dot(&t[(j * m + k) * m..(j * m + k + 1) * m], z)).sum::<f64>()
                })
                .sum(),
        }
    }

    /// ∂u_N/∂ζ.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut g = vec![0.0; m];
        if self.order >= 1 {
            g.copy_from_slice(self.tensor(1));
        }
        if self.order >= 2 {
            let t = self.tensor(2);
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += 2.0 * dot(&t[j * m..(j + 1) * m], z);
            }
        }
        if self.order >= 3 {
            let t = self.tensor(3);
            for (j, gj) in g.iter_mut().enumerate() {
                let s: f64 = (0..m).map(|k| z[k] * dot(&t[(j * m + k) * m..(j * m + k + 1) * m], z)).sum();
                *gj += 3.0 * s;
            }
        }
        g
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSample {
    pub value: f64,
    /// I_n for n = 1..=N.
    pub contributions: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

/// u_N = 1 + Σ I_n for the given normal coordinates.
pub fn sample_solution(coeffs: &ChaosCoefficients, zeta: &[f64]) -> (f64, Vec<f64>) {
    let parts: Vec<f64> = (1..=coeffs.order).map(|n| coeffs.wick(n, zeta)).collect();
    (1.0 + parts.iter().sum::<f64>(), parts)
}

/// Samples `count` solutions with per-sample streams of `seed`.
pub fn sample_many(coeffs: &ChaosCoefficients, seed: u64, count: usize) -> Vec<SolutionSample> {
    (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let z = noise::normals(seed, index, coeffs.m);
            let (value, contributions) = sample_solution(coeffs, &z);
            SolutionSample { value, contributions, seed, index }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalliavinSample {
    pub gradient: Vec<f64>,
    /// D_{r,z}u_N as cell values (nt×nx, row-major).
    pub field: Vec<f64>,
    /// Σ |D|²ΔtΔx.
    pub q: f64,
}

pub fn malliavin_sample(sg: &SolverGrid, coeffs: &ChaosCoefficients, zeta: &[f64]) -> MalliavinSample {
    let gradient = coeffs.gradient(zeta);
    let d = sg.cell_field(&gradient);
    let area = sg.grid.dt() * sg.grid.dx();
    let q = d.iter().map(|v| v * v).sum::<f64>() * area;
    MalliavinSample { gradient, field: row_major(&d), q }
}

/// ∫|D_{r,z}u|²dz for r in time row `i` of a Malliavin field.
pub fn row_energy(sg: &SolverGrid, field: &[f64], i: usize) -> f64 {
    let nx = sg.grid.nx;
    field[i * nx..(i + 1) * nx].iter().map(|v| v * v).sum::<f64>() * sg.grid.dx()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    /// Max relative defect per order 1..=N.
    pub defects: Vec<f64>,
    pub max_defect: f64,
}

/// Recursion vs product formula for the cell kernels at (t, x).
pub fn picard_consistency(sg: &SolverGrid, t: f64, x: f64, order: usize) -> Result<PicardReport> {
    let mut defects = Vec::new();
    for n in 1..=order {
        let rec = sg.raw_kernel((t, x), n)?;
        let dir = sg.raw_kernel_direct((t, x), n)?;
        let scale = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = rec.iter().zip(&dir).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        defects.push(if scale > 0.0 { diff / scale } else { diff });
    }
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    Ok(PicardReport { defects, max_defect })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub order: usize,
    pub nsamples: usize,
    pub mean_square: f64,
    pub std_error: f64,
    /// 1 + Σ n!‖T_n‖².
    pub discrete_exact: f64,
    /// 1 + Σ α_n(t)/n!.
    pub continuum: f64,
    pub continuum_tail: f64,
    /// Sample variances of I_n with standard errors.
    pub order_variances: Vec<(f64, f64)>,
    pub tensor_variances: Vec<f64>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo E[u_N²] against the discrete and continuum values.
pub fn mc_second_moment(sg: &SolverGrid, t: f64, x: f64, order: usize, nsamples: usize, seed: u64) -> Result<MomentReport> {
    if order == 0 {
        return Ok(MomentReport {
            order,
            nsamples,
            mean_square: 1.0,
            std_error: 0.0,
            discrete_exact: 1.0,
            continuum: 1.0,
            continuum_tail: 0.0,
            order_variances: Vec::new(),
            tensor_variances: Vec::new(),
        });
    }
    let coeffs = sg.project_kernels(t, x, order)?;
    let samples = sample_many(&coeffs, seed, nsamples);
    let sq: Vec<f64> = samples.iter().map(|s| s.value * s.value).collect();
    let (mean_square, std_error) = mean_se(&sq);
    let order_variances = (0..order)
        .map(|n| {
            let v: Vec<f64> = samples.iter().map(|s| s.contributions[n].powi(2)).collect();
            mean_se(&v)
        })
        .collect();
    let series = kernels::second_moment_series(&sg.model, t, order)?;
    Ok(MomentReport {
        order,
        nsamples,
        mean_square,
        std_error,
        discrete_exact: coeffs.second_moment(),
        continuum: *series.partial_sums.last().expect("nonempty"),
        continuum_tail: series.tail_bound.unwrap_or(0.0),
        order_variances,
        tensor_variances: (1..=order).map(|n| coeffs.variance(n)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub nsamples: usize,
    pub bandwidth: f64,
    /// (x, density) on ℝ∖(−h, h).
    pub kde: Vec<(f64, f64)>,
    pub atom_width: f64,
    pub atom_max_mass: f64,
    pub atom_location: f64,
    pub atom_flagged: bool,
    /// (m, P̂(|u| ≤ 1/m)).
    pub truncation_masses: Vec<(usize, f64)>,
    /// (left edge, mass) of a histogram over the sample range; masses sum to 1.
    pub histogram: Vec<(f64, f64)>,
    pub ks: Option<KsResult>,
}

pub const ATOM_WIDTH: f64 = 1e-3;
pub const ATOM_THRESHOLD: f64 = 0.01;
pub const MIN_DENSITY_SAMPLES: usize = 10_000;

/// KDE, atom scan, truncation ladder and (optionally) a KS test against N(mean, var).
pub fn density_report(samples: &[f64], bandwidth: f64, m_max: usize, exact: Option<(f64, f64)>) -> Result<DensityReport> {
    let n = samples.len();
    if n < MIN_DENSITY_SAMPLES {
        return Err(Error::InvalidParameter(format!("density report needs ≥ {MIN_DENSITY_SAMPLES} samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, _) = mean_se(samples);
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let h = if bandwidth > 0.0 {
        bandwidth
    } else if sd > 0.0 {
        1.06 * sd * (n as f64).powf(-0.2)
    } else {
        ATOM_WIDTH
    };
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let kde = {
        let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
        let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        (0..=200)
            .map(|i| a + (b - a) * i as f64 / 200.0)
            .filter(|x| x.abs() >= h)
            .map(|x| {
                let lo_i = sorted.partition_point(|&v| v < x - 8.0 * h);
                let hi_i = sorted.partition_point(|&v| v <= x + 8.0 * h);
                let s: f64 = sorted[lo_i..hi_i].iter().map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
                (x, s * norm)
            })
            .collect()
    };
    // atom scan on |u| ≥ h
    let mut best = (0usize, f64::NAN);
    let mut j = 0;
    for i in 0..n {
        if sorted[i].abs() < h {
            continue;
        }
        j = j.max(i);
        while j + 1 < n && sorted[j + 1] <= sorted[i] + ATOM_WIDTH {
            j += 1;
        }
        let count = (i..=j).filter(|&k| sorted[k].abs() >= h).count();
        if count > best.0 {
            best = (count, sorted[i]);
        }
    }
    let atom_max_mass = best.0 as f64 / n as f64;
    let truncation_masses = (1..=m_max)
        .map(|m| {
            let r = 1.0 / m as f64;
            let c = sorted.partition_point(|&v| v <= r) - sorted.partition_point(|&v| v < -r);
            (m, c as f64 / n as f64)
        })
        .collect();
    let bins = 50usize;
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let histogram = counts.iter().enumerate().map(|(b, &c)| (lo + b as f64 * width, c as f64 / n as f64)).collect();
    let ks = match exact {
        Some((mu, var)) if var > 0.0 => {
            let law = Normal::new(mu, var.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut d = 0.0f64;
            for (i, &v) in sorted.iter().enumerate() {
                let f = law.cdf(v);
                d = d.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
            }
            let critical = 1.36 / (n as f64).sqrt();
            Some(KsResult { statistic: d, critical, passes: d <= critical })
        }
        _ => None,
    };
    Ok(DensityReport {
        nsamples: n,
        bandwidth: h,
        kde,
        atom_width: ATOM_WIDTH,
        atom_max_mass,
        atom_location: best.1,
        atom_flagged: atom_max_mass > ATOM_THRESHOLD,
        truncation_masses,
        histogram,
        ks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    pub delta: f64,
    /// sup over the neighbourhood of the MC root-mean-square increment.
    pub g: f64,
    pub std_error: f64,
    /// Same supremum from the exact discrete second moments.
    pub g_exact: f64,
    pub argmax: (f64, f64),
    pub neighbours: usize,
}

/// Stencil of (s, y) with |t−s| < δ, |x−y| < δ, s ≤ t.
fn neighbourhood(t: f64, x: f64, delta: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in 0..4 {
        for k in -3i32..=3 {
            if j == 0 && k == 0 {
                continue;
            }
            out.push((t - delta * j as f64 / 4.0, x + delta * k as f64 / 4.0));
        }
    }
    out
}

/// g_{t,x}(δ) = sup (E|u_N(t,x) − u_N(s,y)|²)^{1/2} over the δ-stencil.
pub fn modulus_g(sg: &SolverGrid, t: f64, x: f64, delta: f64, order: usize, nsamples: usize, seed: u64) -> Result<ModulusReport> {
    if delta == 0.0 {
        return Ok(ModulusReport { delta, g: 0.0, std_error: 0.0, g_exact: 0.0, argmax: (t, x), neighbours: 0 });
    }
    if !(delta > 0.0 && delta < t.min(sg.grid.half_width - x.abs())) {
        return Err(Error::InvalidParameter(format!("δ = {delta} must lie in (0, min(t, L−|x|))")));
    }
    let base = sg.project_kernels(t, x, order)?;
    let zetas: Vec<Vec<f64>> = (0..nsamples as u64).map(|i| noise::normals(seed, i, sg.m())).collect();
    let mut best = ModulusReport { delta, g: 0.0, std_error: 0.0, g_exact: 0.0, argmax: (t, x), neighbours: 0 };
    for (s, y) in neighbourhood(t, x, delta) {
        let other = sg.project_kernels(s, y, order)?;
        let diff = ChaosCoefficients {
            t,
            x,
            order,
            m: base.m,
            raw: Vec::new(),
            tensors: base.tensors.iter().zip(&other.tensors).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect(),
        };
        let exact = (diff.second_moment() - 1.0).max(0.0).sqrt();
        let sq: Vec<f64> = zetas
            .par_iter()
            .map(|z| {
                let v = (1..=order).map(|n| diff.wick(n, z)).sum::<f64>();
                v * v
            })
            .collect();
        let (ms, se) = mean_se(&sq);
        let g = ms.max(0.0).sqrt();
        best.neighbours += 1;
        best.g_exact = best.g_exact.max(exact);
        if g > best.g {
            best.g = g;
            best.std_error = if g > 0.0 { se / (2.0 * g) } else { 0.0 };
            best.argmax = (s, y);
        }
    }
    Ok(best)
}

/// Constants entering RHS(δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SixConstants {
    pub c0: f64,
    pub c_t: f64,
    pub c_t_dprime: f64,
    pub c_t_star: f64,
}

impl SixConstants {
    pub fn from_model(model: &CovarianceModel, t: f64) -> Result<Self> {
        let rep = kernels::d2_norm_constant(model, t, &[], &[])?;
        let second = rep.second.expect("second-derivative constants");
        Ok(Self { c0: model.c0()?, c_t: rep.first.c_t, c_t_dprime: second.c_t_dprime, c_t_star: kernels::c_t_star(model, t)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SixRow {
    pub delta: f64,
    pub big_gamma_delta: f64,
    pub g: f64,
    pub g_std_error: f64,
    pub g_exact: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SixReport {
    pub m: usize,
    pub t: f64,
    pub x: f64,
    pub constants: SixConstants,
    pub rows: Vec<SixRow>,
    pub nonincreasing: bool,
    pub strictly_decreasing: bool,
    pub epsilon: f64,
    pub nsamples: usize,
    /// P̂({Q < ε} ∩ {|u| > 1/m}).
    pub p_hat: f64,
    pub omega_mass: f64,
}

/// RHS(δ) = 8m²(c₀(C_t + C_t″)Γ_δ + ¼C_t*·g(δ)) over a δ-grid plus the empirical
/// probability of a vanishing Malliavin norm on Ω_m.
#[allow(clippy::too_many_arguments)]
pub fn delta_scan(
    sg: &SolverGrid,
    t: f64,
    x: f64,
    m: usize,
    deltas: &[f64],
    order: usize,
    nsamples: usize,
    seed: u64,
    constants: SixConstants,
) -> Result<SixReport> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be positive".into()));
    }
    let mut ds = deltas.to_vec();
    ds.sort_by(|a, b| b.total_cmp(a));
    let mf = m as f64;
    let mut rows = Vec::new();
    for &d in &ds {
        let gm = modulus_g(sg, t, x, d, order, nsamples, seed)?;
        let big_gamma_delta = sg.model.big_gamma(d);
        let rhs = 8.0 * mf * mf * (constants.c0 * (constants.c_t + constants.c_t_dprime) * big_gamma_delta + 0.25 * constants.c_t_star * gm.g);
        rows.push(SixRow { delta: d, big_gamma_delta, g: gm.g, g_std_error: gm.std_error, g_exact: gm.g_exact, rhs });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].rhs <= w[0].rhs);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].rhs < w[0].rhs);
    let coeffs = sg.project_kernels(t, x, order)?;
    let hits: Vec<(bool, bool)> = (0..nsamples as u64)
        .into_par_iter()
        .map(|i| {
            let z = noise::normals(seed ^ 0x51c5, i, sg.m());
            let (u, _) = sample_solution(&coeffs, &z);
            let omega = u.abs() > 1.0 / mf;
            let ms = malliavin_sample(sg, &coeffs, &z);
            (omega, omega && ms.q < Q_EPSILON)
        })
        .collect();
    let n = nsamples.max(1) as f64;
    Ok(SixReport {
        m,
        t,
        x,
        constants,
        rows,
        nonincreasing,
        strictly_decreasing,
        epsilon: Q_EPSILON,
        nsamples,
        p_hat: hits.iter().filter(|h| h.1).count() as f64 / n,
        omega_mass: hits.iter().filter(|h| h.0).count() as f64 / n,
    })
}

/// Samples of u_N on the (fine+1)² lattice s = aT/fine, y = −L + 2bL/fine; one row-major field per sample.
pub fn field_samples(sg: &SolverGrid, order: usize, fine: usize, nsamples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (t_h, l) = (sg.grid.t_horizon, sg.grid.half_width);
    let zetas: Vec<Vec<f64>> = (0..nsamples as u64).map(|i| noise::normals(seed, i, sg.m())).collect();
    let side = fine + 1;
    let mut fields = vec![vec![0.0; side * side]; nsamples];
    for a in 0..side {
        let s = t_h * a as f64 / fine as f64;
        let row: Vec<Vec<f64>> = (0..side)
            .into_par_iter()
            .map(|b| {
                let y = -l + 2.0 * l * b as f64 / fine as f64;
                let c = sg.project_kernels(s, y, order)?;
                Ok(zetas.iter().map(|z| sample_solution(&c, z).0).collect())
            })
            .collect::<Result<_>>()?;
        for (b, vals) in row.into_iter().enumerate() {
            for (f, v) in fields.iter_mut().zip(vals) {
                f[a * side + b] = v;
            }
        }
    }
    Ok(fields)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximantReport {
    pub level: u32,
    pub threshold: f64,
    pub exceedance: f64,
}

/// X_m: the field frozen at the lower-left anchor of each dyadic cell of level m.
/// `field` is a (fine+1)² lattice with fine a multiple of 2^m.
pub fn partition_approximant(field: &[f64], fine: usize, level: u32) -> Result<Vec<f64>> {
    let side = fine + 1;
    if field.len() != side * side {
        return Err(Error::InvalidParameter("field does not match the lattice".into()));
    }
    let cells = 1usize << level;
    if !fine.is_multiple_of(cells) {
        return Err(Error::InvalidParameter(format!("lattice {fine} is not a multiple of 2^{level}")));
    }
    let step = fine / cells;
    let anchor = |a: usize| (a / step).min(cells - 1) * step;
    Ok((0..side * side).map(|p| field[anchor(p / side) * side + anchor(p % side)]).collect())
}

/// P̂(|X_m − X| > 2^{−m}) over lattice points and samples.
pub fn approximant_exceedance(fields: &[Vec<f64>], fine: usize, level: u32) -> Result<ApproximantReport> {
    let threshold = 0.5f64.powi(level as i32);
    let mut over = 0usize;
    let mut total = 0usize;
    for f in fields {
        let xm = partition_approximant(f, fine, level)?;
        over += xm.iter().zip(f).filter(|(a, b)| (*a - *b).abs() > threshold).count();
        total += f.len();
    }
    Ok(ApproximantReport { level, threshold, exceedance: if total > 0 { over as f64 / total as f64 } else { 0.0 } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> CovarianceModel {
        CovarianceModel::riesz(0.75, 0.5).unwrap()
    }

    fn sgrid(n: usize) -> SolverGrid {
        SolverGrid::new(&defaults(), &GridSpec::square(n).unwrap(), DEFAULT_SUBNODES).unwrap()
    }

    #[test]
    fn discrete_green_values() {
        assert_eq!(green_discrete(1.0, 0.5, 1e-12), 0.5);
        assert_eq!(green_discrete(1.0, -1.0, 1e-12), 0.25);
        assert_eq!(green_discrete(0.0, 0.0, 1e-12), 0.0);
        assert_eq!(green_discrete(1.0, 1.5, 1e-12), 0.0);
    }

    #[test]
    fn picard_defect_tiny() {
        let sg = SolverGrid::new(&defaults(), &GridSpec::square(4).unwrap(), 2).unwrap();
        let rep = picard_consistency(&sg, 1.0, 0.0, 3).unwrap();
        assert!(rep.max_defect <= 1e-10, "{rep:?}");
        let a1 = sg.raw_kernel((1.0, 0.0), 1).unwrap();
        assert!(a1.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn tensors_symmetric_and_diagonal_free() {
        let sg = sgrid(3);
        let c = sg.project_kernels(1.0, 0.0, 3).unwrap();
        let m = c.m;
        let t2 = c.tensor(2);
        let t3 = c.tensor(3);
        for i in 0..m {
            assert_eq!(t2[i * m + i], 0.0);
            for j in 0..m {
                assert_relative_eq!(t2[i * m + j], t2[j * m + i], epsilon = 1e-15);
                for k in 0..m {
                    let v = t3[(i * m + j) * m + k];
                    assert_relative_eq!(v, t3[(k * m + i) * m + j], epsilon = 1e-15);
                    if i == j || j == k || i == k {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_noise_gives_one_and_first_order_field() {
        let sg = sgrid(4);
        let c = sg.project_kernels(1.0, 0.0, 2).unwrap();
        let z = vec![0.0; c.m];
        assert_eq!(sample_solution(&c, &z).0, 1.0);
        let ms = malliavin_sample(&sg, &c, &z);
        for (a, b) in ms.field.iter().zip(&c.raw[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sg = sgrid(3);
        let c = sg.project_kernels(1.0, 0.0, 3).unwrap();
        for idx in 0..20u64 {
            let z = noise::normals(99, idx, c.m);
            let g = c.gradient(&z);
            let j = (idx as usize * 7) % c.m;
            let h = 1e-5;
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let fd = (sample_solution(&c, &zp).0 - sample_solution(&c, &zm).0) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn first_order_q_approaches_psi() {
        let sg = sgrid(16);
        let c = sg.project_kernels(1.0, 0.0, 1).unwrap();
        let q = malliavin_sample(&sg, &c, &vec![0.0; c.m]).q;
        assert!((q - 0.25).abs() < 0.05 * 0.25, "{q}");
    }

    #[test]
    fn density_report_basics() {
        let constant = vec![1.0; MIN_DENSITY_SAMPLES];
        let r = density_report(&constant, 0.0, 10, None).unwrap();
        assert_eq!(r.atom_max_mass, 1.0);
        assert!(r.atom_flagged);
        let total: f64 = r.histogram.iter().map(|h| h.1).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert!(density_report(&constant[..10], 0.0, 10, None).is_err());
        let normal = noise::normals(3, 0, 20_000);
        let r = density_report(&normal, 0.0, 10, Some((0.0, 1.0))).unwrap();
        assert!(r.ks.unwrap().passes);
        assert!(!r.atom_flagged);
        assert!(r.kde.iter().all(|p| p.0.abs() >= r.bandwidth));
        assert!(r.truncation_masses.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn approximant_of_constant_and_lattice_level() {
        let f = vec![2.0; 17 * 17];
        let xm = partition_approximant(&f, 16, 2).unwrap();
        assert_eq!(xm, f);
        let rep = approximant_exceedance(&[f], 16, 2).unwrap();
        assert_eq!(rep.exceedance, 0.0);
        let ramp: Vec<f64> = (0..17 * 17).map(|p| (p / 17) as f64 * 0.01).collect();
        assert_eq!(approximant_exceedance(std::slice::from_ref(&ramp), 16, 4).unwrap().exceedance, 0.0);
        assert!(partition_approximant(&ramp, 16, 5).is_err());
    }

    #[test]
    fn modulus_zero_and_bad_delta() {
        let sg = sgrid(4);
        assert_eq!(modulus_g(&sg, 1.0, 0.0, 0.0, 1, 10, 1).unwrap().g, 0.0);
        assert!(modulus_g(&sg, 0.5, 0.0, 0.6, 1, 10, 1).is_err());
    }

    #[test]
    fn order3_budget_guard() {
        let sg = sgrid(16);
        assert!(matches!(sg.project_kernels(1.0, 0.0, 3), Err(Error::Budget(_))));
        assert!(sg.project_kernels(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn white_first_order_scan_never_degenerates() {
        let m = CovarianceModel::white(0.75).unwrap();
        let sg = SolverGrid::new(&m, &GridSpec::square(8).unwrap(), DEFAULT_SUBNODES).unwrap();
        let constants = SixConstants::from_model(&m, 1.0).unwrap();
        let rep = delta_scan(&sg, 1.0, 0.0, 10, &[0.4, 0.2, 0.1, 0.05], 1, 500, 5, constants).unwrap();
        assert_eq!(rep.p_hat, 0.0);
        assert!(rep.nonincreasing);
        assert!(rep.rows.last().unwrap().rhs < rep.rows[0].rhs);
        // N = 1: the Malliavin field does not depend on the noise
        let c = sg.project_kernels(1.0, 0.0, 1).unwrap();
        let q0 = malliavin_sample(&sg, &c, &vec![0.0; c.m]).q;
        let q1 = malliavin_sample(&sg, &c, &noise::normals(1, 0, c.m)).q;
        assert_eq!(q0, q1);
        assert!(q0 > 0.0);
    }
}
