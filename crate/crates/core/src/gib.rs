//! Closed-form Gaussian information bottleneck.
//!
//! For a jointly Gaussian pair `(x, y)` the optimal bottleneck encoder is a noisy
//! linear projection `z = A x + ξ`. The rows of `A` are scaled left eigenvectors of
//! `Σ_{X|Y} Σ_X⁻¹`, switched on one at a time as the trade-off parameter `β` crosses
//! the critical values `1 / (1 − λ_i)`.
//!
//! The noise `ξ` is unit-variance white noise on every active row. The eigenproblem is
//! solved on the symmetric whitened matrix `L⁻¹ Σ_{X|Y} L⁻ᵀ` (with `Σ_X = L Lᵀ`) and the
//! left eigenvectors are recovered as `v = L⁻ᵀ u`, which makes `r_i = v_iᵀ Σ_X v_i = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MIN_MARGINAL_EIGENVALUE: f64 = 1e-10;
const JOINT_PSD_TOL: f64 = -1e-8;
const MAX_CONDITION: f64 = 1e12;
/// Width of the band outside `[0, 1]` in which eigenvalues are clamped instead of rejected.
const LAMBDA_BAND: f64 = 1e-8;
/// Eigenvalues at or above `1 − UNINFORMATIVE_TOL` carry no information about `y`.
pub const UNINFORMATIVE_TOL: f64 = 1e-10;
/// Lower floor for `λ` in the α and complexity formulas (a deterministic component has `λ = 0`).
const LAMBDA_FLOOR: f64 = 1e-12;
/// A component is active only when `β (1 − λ) − 1` exceeds this; at exactly `β = β^c` its row is zero.
const ACTIVATION_TOL: f64 = 1e-12;
const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Zero-mean jointly Gaussian source `(x, y)` describing one device's inference task.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSource {
    cov_x: DMatrix<f64>,
    cov_y: DMatrix<f64>,
    cov_xy: DMatrix<f64>,
}

impl GaussianSource {
    pub fn new(cov_x: DMatrix<f64>, cov_y: DMatrix<f64>, cov_xy: DMatrix<f64>) -> Result<Self> {
        let (d_x, d_y) = (cov_x.nrows(), cov_y.nrows());
        if d_x == 0 || d_y == 0 {
            return Err(Error::InvalidSource("dimensions must be positive".into()));
        }
        if !cov_x.is_square() || !cov_y.is_square() {
            return Err(Error::InvalidSource("marginal covariances must be square".into()));
        }
        if cov_xy.shape() != (d_x, d_y) {
            return Err(Error::InvalidSource(format!(
                "cross-covariance is {}x{}, expected {d_x}x{d_y}",
                cov_xy.nrows(),
                cov_xy.ncols()
            )));
        }
        if [&cov_x, &cov_y, &cov_xy].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidSource("covariances must be finite".into()));
        }
        check_symmetric(&cov_x, "cov_x")?;
        check_symmetric(&cov_y, "cov_y")?;
        for (m, name) in [(&cov_x, "cov_x"), (&cov_y, "cov_y")] {
            let min = symmetric_eigenvalues(m).min();
            if min <= MIN_MARGINAL_EIGENVALUE {
                return Err(Error::InvalidSource(format!(
                    "{name} is not positive definite (min eigenvalue {min:.3e})"
                )));
            }
        }

        let mut joint = DMatrix::zeros(d_x + d_y, d_x + d_y);
        joint.view_mut((0, 0), (d_x, d_x)).copy_from(&cov_x);
        joint.view_mut((d_x, d_x), (d_y, d_y)).copy_from(&cov_y);
        joint.view_mut((0, d_x), (d_x, d_y)).copy_from(&cov_xy);
        joint
            .view_mut((d_x, 0), (d_y, d_x))
            .copy_from(&cov_xy.transpose());
        let joint = symmetrize(&joint);
        let min = symmetric_eigenvalues(&joint).min();
        if min < JOINT_PSD_TOL {
            return Err(Error::InvalidSource(format!(
                "joint covariance is not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }

        Ok(Self {
            cov_x: symmetrize(&cov_x),
            cov_y: symmetrize(&cov_y),
            cov_xy,
        })
    }

    /// Builds a source from row-major nested lists.
    pub fn from_rows(cov_x: &[Vec<f64>], cov_y: &[Vec<f64>], cov_xy: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            matrix_from_rows(cov_x, "cov_x")?,
            matrix_from_rows(cov_y, "cov_y")?,
            matrix_from_rows(cov_xy, "cov_xy")?,
        )
    }

    /// One-dimensional source with variances `var_x`, `var_y` and covariance `cov`.
    pub fn scalar(var_x: f64, var_y: f64, cov: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, var_x),
            DMatrix::from_element(1, 1, var_y),
            DMatrix::from_element(1, 1, cov),
        )
    }

    /// Latent-observation source: `y ~ N(0, I)` and `x = s·H y + √(1 − s²)·n`, with
    /// `H` drawn i.i.d. `N(0, 1/d_y)` from `seed` and `s = strength ∈ (0, 1)`.
    pub fn synthetic(d_x: usize, d_y: usize, seed: u64, strength: f64) -> Result<Self> {
        if d_x == 0 || d_y == 0 {
            return Err(Error::InvalidSource("dimensions must be positive".into()));
        }
        if !(strength > 0.0 && strength < 1.0) {
            return Err(Error::InvalidSource(format!(
                "correlation strength must lie in (0, 1), got {strength}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (1.0 / d_y as f64).sqrt();
        let h = DMatrix::from_fn(d_x, d_y, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        let s2 = strength * strength;
        let cov_x = &h * h.transpose() * s2 + DMatrix::identity(d_x, d_x) * (1.0 - s2);
        Self::new(cov_x, DMatrix::identity(d_y, d_y), h * strength)
    }

    pub fn dim_x(&self) -> usize {
        self.cov_x.nrows()
    }

    pub fn dim_y(&self) -> usize {
        self.cov_y.nrows()
    }

    pub fn d_min(&self) -> usize {
        self.dim_x().min(self.dim_y())
    }

    pub fn cov_x(&self) -> &DMatrix<f64> {
        &self.cov_x
    }

    pub fn cov_y(&self) -> &DMatrix<f64> {
        &self.cov_y
    }

    pub fn cov_xy(&self) -> &DMatrix<f64> {
        &self.cov_xy
    }

    /// `I(x; y) = ½ log₂ det Σ_X − ½ log₂ det Σ_{X|Y}` in bits.
    pub fn mutual_information_bits(&self) -> Result<f64> {
        let cond = conditional_covariance(self)?;
        let ldx = log2_det_spd(&self.cov_x)?;
        match log2_det_spd(&cond) {
            Ok(ldc) => Ok(0.5 * (ldx - ldc)),
            Err(_) => Ok(f64::INFINITY),
        }
    }
}

/// Eigen-decomposition of `Σ_{X|Y} Σ_X⁻¹`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GibSpectrum {
    pub eigenvalues: Vec<f64>,
    pub left_eigenvectors: Vec<DVector<f64>>,
    pub r: Vec<f64>,
    pub critical_betas: Vec<f64>,
    pub d_min: usize,
}

impl GibSpectrum {
    /// Components with `λ < 1 − tol`, capped at `d_min`.
    pub fn usable_components(&self) -> usize {
        self.eigenvalues
            .iter()
            .take(self.d_min)
            .take_while(|&&l| l < 1.0 - UNINFORMATIVE_TOL)
            .count()
    }

    /// Number of nonzero encoder rows at trade-off `beta`.
    pub fn active_components(&self, beta: f64) -> usize {
        self.eigenvalues
            .iter()
            .take(self.d_min)
            .take_while(|&&l| beta * (1.0 - l) - 1.0 > ACTIVATION_TOL)
            .count()
    }
}

/// Noisy linear encoder `z = A x + ξ` at a given `β`; `ξ ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibProjection {
    pub beta: f64,
    pub n_beta: usize,
    /// `d_min × d_x`, rows beyond `n_beta` are zero.
    pub matrix_a: DMatrix<f64>,
    pub alphas: Vec<f64>,
}

impl GibProjection {
    pub fn noise_cov(&self) -> DMatrix<f64> {
        let d = self.matrix_a.nrows();
        DMatrix::identity(d, d)
    }

    fn active_rows(&self) -> DMatrix<f64> {
        self.matrix_a.rows(0, self.n_beta).into_owned()
    }
}

/// One point of the relevance–complexity frontier together with its transmit cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibRatePoint {
    pub beta: f64,
    pub n_active: usize,
    pub i_xz_bits: f64,
    pub i_zy_bits: f64,
    pub nmse: f64,
    pub entropy_bits: f64,
}

/// `Σ_{X|Y} = Σ_X − Σ_XY Σ_Y⁻¹ Σ_XYᵀ`.
pub fn conditional_covariance(source: &GaussianSource) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigenvalues(&source.cov_y);
    let cond = eig.max() / eig.min();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { what: "cov_y", cond });
    }
    let chol = source
        .cov_y
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization of cov_y failed".into()))?;
    let gain = chol.solve(&source.cov_xy.transpose());
    Ok(symmetrize(&(&source.cov_x - &source.cov_xy * gain)))
}

pub fn compute_spectrum(source: &GaussianSource) -> Result<GibSpectrum> {
    let cond = conditional_covariance(source)?;
    let chol = source
        .cov_x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization of cov_x failed".into()))?;
    let l = chol.l();
    let d_x = source.dim_x();

    // M = L⁻¹ Σ_{X|Y} L⁻ᵀ
    let left = l
        .solve_lower_triangular(&cond)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let whitened = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let whitened = symmetrize(&whitened);

    let eig = SymmetricEigen::try_new(whitened.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numerical(format!(
            "symmetric eigensolver did not converge in {EIGEN_MAX_ITER} iterations \
             (d_x = {d_x}, Frobenius norm {:.3e})",
            whitened.norm()
        ))
    })?;

    let mut order: Vec<usize> = (0..d_x).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lt = l.transpose();
    let mut eigenvalues = Vec::with_capacity(d_x);
    let mut left_eigenvectors = Vec::with_capacity(d_x);
    let mut r = Vec::with_capacity(d_x);
    for idx in order {
        let lambda = clamp_lambda(eig.eigenvalues[idx])?;
        let u = eig.eigenvectors.column(idx).into_owned();
        let mut v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        r.push((v.transpose() * &source.cov_x * &v)[(0, 0)]);
        eigenvalues.push(lambda);
        left_eigenvectors.push(v);
    }
    let critical_betas = eigenvalues.iter().copied().map(critical_beta).collect();

    Ok(GibSpectrum {
        eigenvalues,
        left_eigenvectors,
        r,
        critical_betas,
        d_min: source.d_min(),
    })
}

fn clamp_lambda(lambda: f64) -> Result<f64> {
    if (-LAMBDA_BAND..0.0).contains(&lambda) {
        Ok(0.0)
    } else if lambda > 1.0 && lambda <= 1.0 + LAMBDA_BAND {
        Ok(1.0)
    } else if (0.0..=1.0).contains(&lambda) {
        Ok(lambda)
    } else {
        Err(Error::Numerical(format!(
            "eigenvalue {lambda:.6e} of Σ_X|Y Σ_X⁻¹ is outside [0, 1]"
        )))
    }
}

/// `1 / (1 − λ)`, or `+∞` for an uninformative component.
pub fn critical_beta(lambda: f64) -> f64 {
    if lambda >= 1.0 - UNINFORMATIVE_TOL {
        f64::INFINITY
    } else {
        1.0 / (1.0 - lambda)
    }
}

pub fn critical_betas(spectrum: &GibSpectrum) -> Vec<f64> {
    spectrum.eigenvalues.iter().copied().map(critical_beta).collect()
}

/// Candidate trade-off values: the last `β` before each new row switches on, plus
/// `10·β^c` of the last usable component. Every value activates at least one row.
pub fn beta_grid(spectrum: &GibSpectrum) -> Result<Vec<f64>> {
    let usable = spectrum.usable_components();
    if usable == 0 {
        return Err(Error::EmptyGrid);
    }
    let mut grid: Vec<f64> = spectrum.critical_betas[1..usable].to_vec();
    grid.push(10.0 * spectrum.critical_betas[usable - 1]);
    Ok(grid)
}

pub fn projection(spectrum: &GibSpectrum, source: &GaussianSource, beta: f64) -> GibProjection {
    let d_x = source.dim_x();
    let d_min = spectrum.d_min;
    let n_beta = spectrum.active_components(beta);
    let mut matrix_a = DMatrix::zeros(d_min, d_x);
    let mut alphas = Vec::with_capacity(n_beta);
    for i in 0..n_beta {
        let lambda = spectrum.eigenvalues[i].max(LAMBDA_FLOOR);
        let alpha = ((beta * (1.0 - lambda) - 1.0) / (lambda * spectrum.r[i])).sqrt();
        matrix_a
            .row_mut(i)
            .copy_from(&(spectrum.left_eigenvectors[i].transpose() * alpha));
        alphas.push(alpha);
    }
    GibProjection {
        beta,
        n_beta,
        matrix_a,
        alphas,
    }
}

/// `(I(x; z), I(z; y))` in bits.
pub fn mutual_informations(spectrum: &GibSpectrum, beta: f64) -> (f64, f64) {
    let n = spectrum.active_components(beta);
    let mut i_xz = 0.0;
    let mut gap = 0.0;
    for &lambda in &spectrum.eigenvalues[..n] {
        let lambda = lambda.max(LAMBDA_FLOOR);
        i_xz += 0.5 * ((beta - 1.0) * (1.0 - lambda) / lambda).log2();
        gap += 0.5 * (beta * (1.0 - lambda)).log2();
    }
    (i_xz, (i_xz - gap).max(0.0))
}

/// LMMSE decoder `M = Σ_YZ Σ_Z⁻¹` (`d_y × d_min`, zero columns beyond `n_beta`) and the
/// normalized reconstruction error `1 − tr(M Σ_YZᵀ) / tr(Σ_Y)`.
pub fn decoder_and_nmse(source: &GaussianSource, proj: &GibProjection) -> Result<(DMatrix<f64>, f64)> {
    let d_y = source.dim_y();
    let mut decoder = DMatrix::zeros(d_y, proj.matrix_a.nrows());
    if proj.n_beta == 0 {
        return Ok((decoder, 1.0));
    }
    let a = proj.active_rows();
    let sigma_z = latent_covariance(source, &a);
    let eig = symmetric_eigenvalues(&sigma_z);
    let cond = eig.max() / eig.min();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { what: "Σ_Z", cond });
    }
    let chol = sigma_z
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization of Σ_Z failed".into()))?;
    let sigma_yz = source.cov_xy.transpose() * a.transpose();
    let m = chol.solve(&sigma_yz.transpose()).transpose();
    let explained = (&m * sigma_yz.transpose()).trace();
    let nmse = (1.0 - explained / source.cov_y.trace()).clamp(0.0, 1.0);
    decoder.columns_mut(0, proj.n_beta).copy_from(&m);
    Ok((decoder, nmse))
}

/// Transmit size of `z` in bits: differential entropy floored at one bit per active row.
pub fn z_entropy_bits(source: &GaussianSource, proj: &GibProjection) -> Result<f64> {
    let n = proj.n_beta;
    if n == 0 {
        return Ok(0.0);
    }
    floored_entropy_bits(&latent_covariance(source, &proj.active_rows()))
}

/// `max(½ log₂((2πe)ⁿ det Σ), n)` for an `n`-dimensional Gaussian; 0 when `n = 0`.
pub fn floored_entropy_bits(cov: &DMatrix<f64>) -> Result<f64> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let log2_det = log2_det_spd(cov)?;
    let h = 0.5 * (n as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2() + log2_det);
    Ok(h.max(n as f64))
}

/// All per-β quantities for one trade-off value.
pub fn rate_point(source: &GaussianSource, spectrum: &GibSpectrum, beta: f64) -> Result<GibRatePoint> {
    let proj = projection(spectrum, source, beta);
    let (i_xz_bits, i_zy_bits) = mutual_informations(spectrum, beta);
    let (_, nmse) = decoder_and_nmse(source, &proj)?;
    let entropy_bits = z_entropy_bits(source, &proj)?;
    Ok(GibRatePoint {
        beta,
        n_active: proj.n_beta,
        i_xz_bits,
        i_zy_bits,
        nmse,
        entropy_bits,
    })
}

pub fn frontier(source: &GaussianSource, betas: &[f64]) -> Result<Vec<GibRatePoint>> {
    let spectrum = compute_spectrum(source)?;
    betas.iter().map(|&b| rate_point(source, &spectrum, b)).collect()
}

/// Rate points of a device's candidate `β` set, computed once per static source.
#[derive(Debug, Clone, PartialEq)]
pub struct GibTable {
    pub d_x: usize,
    pub d_y: usize,
    pub d_min: usize,
    pub nmse_floor: f64,
    pub points: Vec<GibRatePoint>,
}

impl GibTable {
    pub fn build(source: &GaussianSource) -> Result<Self> {
        let spectrum = compute_spectrum(source)?;
        let grid = beta_grid(&spectrum)?;
        let points = grid
            .iter()
            .map(|&b| rate_point(source, &spectrum, b))
            .collect::<Result<Vec<_>>>()?;
        let nmse_floor = points.iter().map(|p| p.nmse).fold(1.0, f64::min);
        Ok(Self {
            d_x: source.dim_x(),
            d_y: source.dim_y(),
            d_min: source.d_min(),
            nmse_floor,
            points,
        })
    }

    /// Encoder operations `d_x · n_β`.
    pub fn device_ops(&self, point: &GibRatePoint) -> f64 {
        (self.d_x * point.n_active) as f64
    }

    /// Decoder operations at the server `d_y · n_β`.
    pub fn server_ops(&self, point: &GibRatePoint) -> f64 {
        (self.d_y * point.n_active) as f64
    }

    /// Upper bound `d_y · d_min` on the server operations.
    pub fn server_ops_max(&self) -> f64 {
        (self.d_y * self.d_min) as f64
    }
}

fn latent_covariance(source: &GaussianSource, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    symmetrize(&(a * &source.cov_x * a.transpose() + DMatrix::identity(n, n)))
}

fn log2_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(chol.l().diagonal().iter().map(|d| 2.0 * d.log2()).sum())
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidSource(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidSource(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidSource(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
