//! Cell-integrated Gaussian noise on a space-time grid.
//!
//! The increment covariance factorizes as C_time ⊗ C_space, so a sample is
//! ΔW = L_time · Z · L_spaceᵀ for a matrix Z of i.i.d. standard normals.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovarianceModel;

/// Largest admissible nt·nx.
pub const MAX_CELLS: usize = 100_000;
/// Relative eigenvalue clipping tolerance.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_horizon: f64,
    pub half_width: f64,
    pub nt: usize,
    pub nx: usize,
}

impl GridSpec {
    pub fn new(t_horizon: f64, half_width: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(t_horizon > 0.0 && t_horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("T must be positive, got {t_horizon}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be positive, got {half_width}")));
        }
        if nt == 0 || nx == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell per axis".into()));
        }
        if nt.saturating_mul(nx) > MAX_CELLS {
            return Err(Error::Budget(format!("nt·nx = {} exceeds {MAX_CELLS}", nt * nx)));
        }
        Ok(Self { t_horizon, half_width, nt, nx })
    }

    /// Unit-horizon square grid with Δx = 2Δt.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn dt(&self) -> f64 {
        self.t_horizon / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    pub fn cells(&self) -> usize {
        self.nt * self.nx
    }

    /// Time interval of cell row `i`.
    pub fn time_cell(&self, i: usize) -> (f64, f64) {
        let dt = self.dt();
        (i as f64 * dt, (i + 1) as f64 * dt)
    }

    /// Space interval of cell column `k`.
    pub fn space_cell(&self, k: usize) -> (f64, f64) {
        let dx = self.dx();
        let lo = -self.half_width + k as f64 * dx;
        (lo, lo + dx)
    }
}

fn toeplitz(n: usize, lag: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let col: Vec<f64> = (0..n).map(lag).collect();
    DMatrix::from_fn(n, n, |i, j| col[i.abs_diff(j)])
}

/// C_time[i][j] = ∫∫ γ over the cell pair, from second differences of ½|u|^{2H}.
pub fn temporal_cell_cov(model: &CovarianceModel, grid: &GridSpec) -> DMatrix<f64> {
    let dt = grid.dt();
    toeplitz(grid.nt, |k| {
        let a = k as f64 * dt;
        model.time_box(0.0, dt, a, a + dt)
    })
}

/// C_space[k][l] = ∫∫ f(x−y) over the cell pair (Δx·δ_kl in white mode).
pub fn spatial_cell_cov(model: &CovarianceModel, grid: &GridSpec) -> DMatrix<f64> {
    let dx = grid.dx();
    toeplitz(grid.nx, |k| {
        let a = k as f64 * dx;
        model.space_box(0.0, dx, a, a + dx)
    })
}

/// Square-root factor F with F Fᵀ = C (Cholesky when possible, clipped eigen-root otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub matrix: DMatrix<f64>,
    /// (Fᵀ)⁺, used to map coordinate gradients back to cell values.
    pub inv_transpose: DMatrix<f64>,
    pub triangular: bool,
    /// Magnitude of the most negative clipped eigenvalue (0 for Cholesky).
    pub slack: f64,
}

/// Factorizes a symmetric PSD matrix.
pub fn factor_psd(c: &DMatrix<f64>) -> Result<Factor> {
    if !c.is_square() {
        return Err(Error::InvalidParameter("covariance must be square".into()));
    }
    let n = c.nrows();
    if let Some(ch) = c.clone().cholesky() {
        let l = ch.l();
        let inv = l.clone().try_inverse().ok_or(Error::NotPsd { min_eig: 0.0, slack: 0.0 })?;
        return Ok(Factor { inv_transpose: inv.transpose(), matrix: l, triangular: true, slack: 0.0 });
    }
    let trace = c.trace().abs();
    let eig = c.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let allowed = PSD_TOL * trace;
    if min_eig < -allowed {
        return Err(Error::NotPsd { min_eig, slack: allowed });
    }
    let floor = allowed.max(f64::MIN_POSITIVE);
    let mut f = eig.eigenvectors.clone();
    let mut g = eig.eigenvectors.clone();
    for j in 0..n {
        let lam = eig.eigenvalues[j];
        let (s, si) = if lam > floor { (lam.sqrt(), 1.0 / lam.sqrt()) } else { (lam.max(0.0).sqrt(), 0.0) };
        f.column_mut(j).scale_mut(s);
        g.column_mut(j).scale_mut(si);
    }
    Ok(Factor { matrix: f, inv_transpose: g, triangular: false, slack: (-min_eig).max(0.0) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellCovariance {
    pub c_time: DMatrix<f64>,
    pub c_space: DMatrix<f64>,
    pub l_time: Option<Factor>,
    pub l_space: Option<Factor>,
}

impl CellCovariance {
    pub fn assemble(model: &CovarianceModel, grid: &GridSpec) -> Self {
        Self { c_time: temporal_cell_cov(model, grid), c_space: spatial_cell_cov(model, grid), l_time: None, l_space: None }
    }

    pub fn psd_slack(&self) -> f64 {
        let s = |f: &Option<Factor>| f.as_ref().map_or(0.0, |f| f.slack);
        s(&self.l_time).max(s(&self.l_space))
    }

    pub fn factors(&self) -> Result<(&Factor, &Factor)> {
        match (&self.l_time, &self.l_space) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Unsupported("covariance not factorized".into())),
        }
    }

    /// Full increment covariance entry Cov(ΔW[i][k], ΔW[j][l]).
    pub fn entry(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        self.c_time[(i, j)] * self.c_space[(k, l)]
    }
}

/// Computes both square-root factors.
pub fn factorize(mut cov: CellCovariance) -> Result<CellCovariance> {
    cov.l_time = Some(factor_psd(&cov.c_time)?);
    cov.l_space = Some(factor_psd(&cov.c_space)?);
    Ok(cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    /// nt×nx i.i.d. standard normals.
    pub zeta: DMatrix<f64>,
    /// ΔW = L_time·Z·L_spaceᵀ.
    pub increments: DMatrix<f64>,
    pub seed: u64,
    pub index: u64,
}

/// Independent generator for sample `index` of stream `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The normal coordinates of sample `index`, row-major nt×nx.
pub fn normals(seed: u64, index: u64, len: usize) -> Vec<f64> {
    let mut rng = sample_rng(seed, index);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Applies the Kronecker factor: L_time·Z·L_spaceᵀ.
pub fn apply_factors(cov: &CellCovariance, zeta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (lt, ls) = cov.factors()?;
    Ok(&lt.matrix * zeta * ls.matrix.transpose())
}

/// `count` samples starting at index 0; deterministic in `seed`.
pub fn sample(grid: &GridSpec, cov: &CellCovariance, seed: u64, count: usize) -> Result<Vec<NoiseSample>> {
    cov.factors()?;
    (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let z = normals(seed, index, grid.cells());
            let zeta = DMatrix::from_row_slice(grid.nt, grid.nx, &z);
            let increments = apply_factors(cov, &zeta)?;
            Ok(NoiseSample { zeta, increments, seed, index })
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"CWNS";
const VERSION: u32 = 1;

/// Writes increments as little-endian f64, row-major, after a 32-byte header
/// (magic, version u32, nt u64, nx u64, count u64).
pub fn write_samples<W: Write>(mut out: W, grid: &GridSpec, samples: &[NoiseSample]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(grid.nt as u64).to_le_bytes())?;
    out.write_all(&(grid.nx as u64).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        for i in 0..grid.nt {
            for k in 0..grid.nx {
                out.write_all(&s.increments[(i, k)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a dump written by [`write_samples`]: (nt, nx, increments per sample).
pub fn read_samples<R: Read>(mut inp: R) -> Result<(usize, usize, Vec<DMatrix<f64>>)> {
    let mut head = [0u8; 32];
    inp.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Io("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Io(format!("unsupported version {version}")));
    }
    let word = |a: usize| u64::from_le_bytes(head[a..a + 8].try_into().expect("8 bytes")) as usize;
    let (nt, nx, count) = (word(8), word(16), word(24));
    if nt.saturating_mul(nx) > MAX_CELLS {
        return Err(Error::Io("grid too large".into()));
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 8];
    for _ in 0..count {
        let mut m = DMatrix::zeros(nt, nx);
        for i in 0..nt {
            for k in 0..nx {
                inp.read_exact(&mut buf)?;
                m[(i, k)] = f64::from_le_bytes(buf);
            }
        }
        out.push(m);
    }
    Ok((nt, nx, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;
    use approx::assert_relative_eq;

    fn defaults() -> CovarianceModel {
        CovarianceModel::riesz(0.75, 0.5).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 1.0, 400, 400).is_err());
        assert!(GridSpec::new(0.0, 1.0, 4, 4).is_err());
        let g = GridSpec::square(8).unwrap();
        assert_eq!(g.dx(), 2.0 * g.dt());
        assert_eq!(g.space_cell(4).0, 0.0);
    }

    #[test]
    fn temporal_examples() {
        let m = defaults();
        let g = GridSpec::new(4.0, 1.0, 4, 2).unwrap();
        let c = temporal_cell_cov(&m, &g);
        assert_relative_eq!(c[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(c[(0, 1)], 0.5 * (2f64.powf(1.5) - 2.0), epsilon = 1e-14);
        assert!((0..4).all(|i| c[(i, i)] == c[(0, 0)]));
        // far cells against Gauss–Legendre on the smooth box
        let gl = GaussLegendre::cached(20);
        let direct = gl.integrate(&|s| gl.integrate(&|u| m.gamma_unchecked(s - u), 0.0, 1.0), 10.0, 11.0);
        assert_relative_eq!(m.time_box(0.0, 1.0, 10.0, 11.0), direct, max_relative = 1e-6);
    }

    #[test]
    fn spatial_examples() {
        let w = CovarianceModel::white(0.75).unwrap();
        let g = GridSpec::new(1.0, 1.0, 2, 8).unwrap();
        let c = spatial_cell_cov(&w, &g);
        assert_eq!(c[(3, 3)], 0.25);
        assert_eq!(c[(3, 4)], 0.0);
        let m = defaults();
        let unit = GridSpec::new(1.0, 2.0, 1, 4).unwrap();
        let c = spatial_cell_cov(&m, &unit);
        // ∫₀¹∫₀¹|x−y|^{−1/2} = 2∫₀¹(1−u)u^{−1/2}du = 8/3
        assert_relative_eq!(c[(0, 0)], 8.0 / 3.0, epsilon = 1e-12);
        for k in 0..3 {
            assert_eq!(c[(k, k + 1)], c[(k + 1, k)]);
            assert_eq!(c[(0, 1)], c[(k, k + 1)]);
        }
    }

    #[test]
    fn factor_reconstruction() {
        let m = defaults();
        let g = GridSpec::square(16).unwrap();
        let cov = factorize(CellCovariance::assemble(&m, &g)).unwrap();
        let (lt, ls) = cov.factors().unwrap();
        let err = (&lt.matrix * lt.matrix.transpose() - &cov.c_time).abs().max();
        assert!(err <= 1e-10 * cov.c_time.trace(), "{err}");
        let err = (&ls.matrix * ls.matrix.transpose() - &cov.c_space).abs().max();
        assert!(err <= 1e-10 * cov.c_space.trace());
        let id = DMatrix::<f64>::identity(5, 5);
        assert_eq!(factor_psd(&id).unwrap().matrix, id);
    }

    #[test]
    fn eigen_clip_and_rejection() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = factor_psd(&c).unwrap();
        assert!(!f.triangular);
        assert!((&f.matrix * f.matrix.transpose() - &c).abs().max() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factor_psd(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn sampling_is_deterministic_and_dump_round_trips() {
        let m = defaults();
        let g = GridSpec::square(4).unwrap();
        let cov = factorize(CellCovariance::assemble(&m, &g)).unwrap();
        let a = sample(&g, &cov, 42, 2).unwrap();
        let b = sample(&g, &cov, 42, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].zeta, a[1].zeta);
        let mut buf = Vec::new();
        write_samples(&mut buf, &g, &a).unwrap();
        assert_eq!(buf.len(), 32 + 2 * 16 * 8);
        let (nt, nx, back) = read_samples(&buf[..]).unwrap();
        assert_eq!((nt, nx), (4, 4));
        assert_eq!(back[1], a[1].increments);
        assert!(read_samples(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn empirical_covariance_matches() {
        let m = CovarianceModel::white(0.75).unwrap();
        let g = GridSpec::square(3).unwrap();
        let cov = factorize(CellCovariance::assemble(&m, &g)).unwrap();
        let n = 20_000;
        let s = sample(&g, &cov, 7, n).unwrap();
        for (i, k, j, l) in [(0, 0, 0, 0), (0, 1, 1, 1), (2, 0, 1, 0), (1, 0, 1, 2)] {
            let prods: Vec<f64> = s.iter().map(|x| x.increments[(i, k)] * x.increments[(j, l)]).collect();
            let mean = prods.iter().sum::<f64>() / n as f64;
            let sd = (prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((mean - cov.entry(i, k, j, l)).abs() < 4.0 * sd / (n as f64).sqrt());
        }
    }
}
