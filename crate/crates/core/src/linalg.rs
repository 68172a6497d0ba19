//! Dense numerical primitives: symmetric eigendecomposition, matrix powers,
//! pseudoinverse, sample statistics, Mahalanobis whitening, chi-square
//! quantiles and least squares.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Relative tolerance used for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Orthogonal eigenvector matrix, one eigenvector per column.
    pub u: DMatrix<f64>,
    /// Eigenvalues, sorted descending.
    pub d: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.apply(|l| l)
    }

    fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.d[j]);
        }
        scaled * self.u.transpose()
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn spectral_decompose(a: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::NotSymmetric("matrix"));
    }
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let d = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralDecomposition { u, d })
}

/// `A^a = U diag(D^a) Uᵀ` for a symmetric positive (semi)definite `A`.
///
/// Integer exponents accept any symmetric input; fractional exponents need
/// PSD and negative exponents need PD.
pub fn matrix_power(a: &DMatrix<f64>, exponent: f64) -> Result<DMatrix<f64>> {
    let sd = spectral_decompose(a)?;
    let scale = sd.d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = RANK_TOL * scale.max(f64::MIN_POSITIVE);
    let integer = exponent.fract() == 0.0;
    let min = sd.d.iter().copied().fold(f64::INFINITY, f64::min);
    if exponent < 0.0 && min <= tol {
        return Err(Error::NotPositiveDefinite("matrix"));
    }
    if !integer && min < -tol {
        return Err(Error::NotPositiveDefinite("matrix"));
    }
    Ok(sd.apply(|l| {
        if integer {
            l.powi(exponent as i32)
        } else {
            l.max(0.0).powf(exponent)
        }
    }))
}

/// Positive singular values above `RANK_TOL · σ_max` with their vectors,
/// from the symmetric eigenproblem of `[[0, A], [Aᵀ, 0]]` (eigenvalues
/// `±σ_i`, eigenvectors `[u_i; v_i]/√2`). nalgebra's bidiagonal SVD can
/// return factors that do not reproduce `A` when singular values cluster.
fn singular_triplets(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (r, c) = a.shape();
    if a.is_empty() {
        return (DMatrix::zeros(r, 0), Vec::new(), DMatrix::zeros(c, 0));
    }
    let mut aug = DMatrix::zeros(r + c, r + c);
    aug.view_mut((0, r), (r, c)).copy_from(a);
    aug.view_mut((r, 0), (c, r)).copy_from(&a.transpose());
    let eig = aug.symmetric_eigen();
    let smax = eig.eigenvalues.max();
    let mut keep: Vec<usize> = (0..r + c)
        .filter(|&i| smax > 0.0 && eig.eigenvalues[i] > RANK_TOL * smax)
        .collect();
    keep.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let scale = std::f64::consts::SQRT_2;
    let u = DMatrix::from_fn(r, keep.len(), |row, k| eig.eigenvectors[(row, keep[k])] * scale);
    let v = DMatrix::from_fn(c, keep.len(), |row, k| eig.eigenvectors[(r + row, keep[k])] * scale);
    let sigma = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    (u, sigma, v)
}

/// Moore–Penrose pseudoinverse with singular values below
/// `1e-10 · σ_max` treated as zero.
pub fn generalized_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, sigma, v) = singular_triplets(a);
    let mut v_scaled = v;
    for (k, s) in sigma.iter().enumerate() {
        v_scaled.column_mut(k).unscale_mut(*s);
    }
    v_scaled * u.transpose()
}

pub fn rank(a: &DMatrix<f64>) -> usize {
    singular_triplets(a).1.len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance, `(1/(N−1)) Σ (x−x̄)(x−x̄)ᵀ`.
pub fn sample_stats(samples: &[DVector<f64>]) -> Result<SampleStats> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample statistics need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::Dimension {
            what: "sample",
            expected: n,
            found: bad.len(),
        });
    }
    let count = samples.len() as f64;
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= count;
    let mut cov = DMatrix::zeros(n, n);
    let mut centered = DVector::zeros(n);
    for s in samples {
        centered.copy_from(s);
        centered -= &mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= count - 1.0;
    symmetrize(&mut cov);
    Ok(SampleStats { mean, cov })
}

/// Precomputed `Σ^{-1/2}` for repeated Mahalanobis transforms.
#[derive(Clone, Debug)]
pub struct Whitener {
    mean: DVector<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl Whitener {
    pub fn new(stats: &SampleStats) -> Result<Self> {
        let sd = spectral_decompose(&stats.cov)?;
        let max = sd.d.iter().copied().fold(0.0_f64, f64::max);
        let min = sd.d.iter().copied().fold(f64::INFINITY, f64::min);
        if max.is_nan() || max <= 0.0 || min <= RANK_TOL * max {
            return Err(Error::NotPositiveDefinite("covariance"));
        }
        Ok(Self {
            mean: stats.mean.clone(),
            inv_sqrt: sd.apply(|l| l.powf(-0.5)),
        })
    }

    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.mean.len() {
            return Err(Error::Dimension {
                what: "observation",
                expected: self.mean.len(),
                found: y.len(),
            });
        }
        Ok(&self.inv_sqrt * (y - &self.mean))
    }
}

/// `z = Σ^{-1/2}(y − μ)`.
pub fn mahalanobis_transform(y: &DVector<f64>, stats: &SampleStats) -> Result<DVector<f64>> {
    Whitener::new(stats)?.apply(y)
}

/// `√((x−μ)ᵀ Σ⁻¹ (x−μ))`, via a Cholesky solve.
pub fn mahalanobis_distance(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mu.len() || sigma.nrows() != x.len() || sigma.ncols() != x.len() {
        return Err(Error::Dimension {
            what: "mahalanobis distance",
            expected: x.len(),
            found: sigma.nrows(),
        });
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("covariance"))?;
    let mut z = x - mu;
    chol.l_dirty().solve_lower_triangular_mut(&mut z);
    Ok(z.norm())
}

pub fn chi_square_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

pub fn chi_square_sf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

fn chi_square_pdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(k)).exp() / 2.0
}

/// Quantile `q` with `P(χ²_dof ≤ q) = prob`.
///
/// Newton iteration on the CDF (or the survival function in the upper
/// half, which keeps precision for `prob` near 1) inside a bisection
/// bracket.
pub fn chi_square_quantile(dof: usize, prob: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-square dof must be ≥ 1".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {prob} outside (0, 1)")));
    }
    let upper = prob > 0.5;
    let target = if upper { 1.0 - prob } else { prob };
    // g is increasing in x either way.
    let g = |x: f64| {
        if upper {
            target - chi_square_sf(dof, x)
        } else {
            chi_square_cdf(dof, x) - target
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = (dof as f64).max(1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi_square_pdf(dof, x);
        let newton = if pdf > 0.0 { x - gx / pdf } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() || hi - lo <= f64::EPSILON * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Least-squares solution of `H x ≈ y` via QR. Fails when `H` does not
/// have full column rank.
pub fn lstsq(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (d, p) = h.shape();
    if y.len() != d {
        return Err(Error::Dimension {
            what: "least-squares right-hand side",
            expected: d,
            found: y.len(),
        });
    }
    if d < p {
        return Err(Error::RankDeficient {
            what: "least-squares system",
            rank: d,
            required: p,
        });
    }
    let qr = h.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).fold(0.0_f64, |m, i| m.max(r[(i, i)].abs()));
    let cutoff = RANK_TOL * diag_max;
    let rank = (0..p).filter(|&i| r[(i, i)].abs() > cutoff).count();
    if diag_max == 0.0 || rank < p {
        return Err(Error::RankDeficient {
            what: "least-squares system",
            rank,
            required: p,
        });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let mut x = qty.rows(0, p).into_owned();
    if !r.solve_upper_triangular_mut(&mut x) {
        return Err(Error::RankDeficient {
            what: "least-squares system",
            rank,
            required: p,
        });
    }
    Ok(x)
}

/// Solves the square system `a · x = b` in place by Gaussian elimination
/// with partial pivoting. `a` is row-major `p×p`; on success `b` holds `x`.
/// Returns `false` when a pivot falls below `1e-10` times the largest
/// absolute entry.
pub fn solve_square_in_place(a: &mut [f64], b: &mut [f64], p: usize) -> bool {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return false;
    }
    let tol = RANK_TOL * scale;
    for col in 0..p {
        let mut piv = col;
        let mut best = a[col * p + col].abs();
        for r in (col + 1)..p {
            let v = a[r * p + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= tol {
            return false;
        }
        if piv != col {
            for c in 0..p {
                a.swap(col * p + c, piv * p + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * p + col];
        for r in (col + 1)..p {
            let f = a[r * p + col] / d;
            if f != 0.0 {
                for c in col..p {
                    a[r * p + c] -= f * a[col * p + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..p).rev() {
        let mut s = b[col];
        for c in (col + 1)..p {
            s -= a[col * p + c] * b[c];
        }
        b[col] = s / a[col * p + col];
    }
    true
}

/// Rows of `m` at `rows`, in the given order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn spectral_diag_and_pair() {
        let sd = spectral_decompose(&dmatrix![3.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(sd.d.as_slice(), &[3.0, 1.0]);
        assert!(close(sd.u[(0, 0)].abs(), 1.0, 1e-12));

        // Roots of λ² − 4λ + 3.
        let sd = spectral_decompose(&dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        assert!(close(sd.d[0], 3.0, 1e-12) && close(sd.d[1], 1.0, 1e-12));

        let sd = spectral_decompose(&DMatrix::identity(4, 4)).unwrap();
        assert!(sd.d.iter().all(|&l| close(l, 1.0, 1e-14)));
    }

    #[test]
    fn spectral_rejects_asymmetric() {
        assert!(matches!(
            spectral_decompose(&dmatrix![1.0, 2.0; 0.0, 1.0]),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn matrix_power_examples() {
        let r = matrix_power(&dmatrix![4.0, 0.0; 0.0, 9.0], 0.5).unwrap();
        assert!((r - dmatrix![2.0, 0.0; 0.0, 3.0]).amax() < 1e-12);
        let r = matrix_power(&dmatrix![2.0, 0.0; 0.0, 5.0], -1.0).unwrap();
        assert!((r - dmatrix![0.5, 0.0; 0.0, 0.2]).amax() < 1e-12);
        let a = dmatrix![2.0, 1.0; 1.0, 2.0];
        let h = matrix_power(&a, 0.5).unwrap();
        assert!((&h * &h - a).amax() < 1e-10);
    }

    #[test]
    fn matrix_power_rejects_indefinite() {
        let a = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(matrix_power(&a, 0.5).is_err());
        assert!(matrix_power(&a, -1.0).is_err());
        assert!(matrix_power(&a, 2.0).is_ok());
        let singular = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert!(matrix_power(&singular, -1.0).is_err());
        assert!(matrix_power(&singular, 0.5).is_ok());
    }

    #[test]
    fn pinv_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((generalized_inverse(&i3) - &i3).amax() < 1e-14);
        let g = generalized_inverse(&dmatrix![2.0, 0.0; 0.0, 0.0]);
        assert!((g - dmatrix![0.5, 0.0; 0.0, 0.0]).amax() < 1e-14);
        let z = generalized_inverse(&DMatrix::zeros(2, 3));
        assert_eq!(z.shape(), (3, 2));
    }

    #[test]
    fn pinv_on_clustered_spectrum() {
        use rand::{Rng, SeedableRng};
        // Column subsets of `C C⁺ − I` have most singular values at 1.
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = DMatrix::from_fn(12, 3, |_, _| rng.random::<f64>() - 0.5);
            let b = &c * generalized_inverse(&c) - DMatrix::<f64>::identity(12, 12);
            let cols: Vec<usize> = (0..12).filter(|_| rng.random_bool(0.8)).collect();
            let sub = DMatrix::from_fn(12, cols.len(), |r, j| b[(r, cols[j])]);
            let g = generalized_inverse(&sub);
            assert!((&sub * &g * &sub - &sub).amax() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn sample_stats_two_points() {
        let s = sample_stats(&[dvector![0.0, 0.0], dvector![2.0, 2.0]]).unwrap();
        assert_eq!(s.mean, dvector![1.0, 1.0]);
        assert_eq!(s.cov, dmatrix![2.0, 2.0; 2.0, 2.0]);
        let same = sample_stats(&vec![dvector![1.0, 5.0]; 4]).unwrap();
        assert_eq!(same.cov, DMatrix::zeros(2, 2));
        assert!(sample_stats(&[dvector![1.0]]).is_err());
        assert!(sample_stats(&[dvector![1.0], dvector![1.0, 2.0]]).is_err());
    }

    #[test]
    fn mahalanobis_examples() {
        let stats = SampleStats {
            mean: dvector![1.0],
            cov: dmatrix![4.0],
        };
        let z = mahalanobis_transform(&dvector![3.0], &stats).unwrap();
        assert!(close(z[0], 1.0, 1e-14));
        let z = mahalanobis_transform(&dvector![1.0], &stats).unwrap();
        assert_eq!(z[0], 0.0);

        let i2 = DMatrix::identity(2, 2);
        let d = mahalanobis_distance(&dvector![3.0, 4.0], &dvector![0.0, 0.0], &i2).unwrap();
        assert_eq!(d, 5.0);
        let d = mahalanobis_distance(&dvector![2.0, 1.0], &dvector![0.0, 0.0], &dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert!(close(d, 2f64.sqrt(), 1e-14));
        let d = mahalanobis_distance(&dvector![2.0, 1.0], &dvector![2.0, 1.0], &i2).unwrap();
        assert_eq!(d, 0.0);
        assert!(mahalanobis_distance(&dvector![1.0, 1.0], &dvector![0.0, 0.0], &dmatrix![1.0, 1.0; 1.0, 1.0]).is_err());
    }

    #[test]
    fn chi_square_closed_forms() {
        // dof 2 is exponential with mean 2: q = −2 ln(1 − p).
        for &p in &[0.01, 0.5, 0.95, 0.995, 1.0 - 1e-9] {
            let q = chi_square_quantile(2, p).unwrap();
            let exact = -2.0 * (1.0 - p).ln();
            assert!((q - exact).abs() <= 1e-9 * exact.max(1.0), "{p}: {q} vs {exact}");
        }
        assert!(close(chi_square_quantile(2, 0.95).unwrap(), 5.99146, 1e-5));
        assert!(close(chi_square_quantile(2, 0.995).unwrap(), 10.5966, 1e-4));
    }

    #[test]
    fn chi_square_dof_one_matches_normal() {
        // χ²(1) quantile is the square of the two-sided normal quantile.
        for &p in &[0.1, 0.5, 0.95, 0.995] {
            let z = std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(p);
            let q = chi_square_quantile(1, p).unwrap();
            assert!((q - z * z).abs() < 1e-9, "{p}: {q} vs {}", z * z);
        }
        assert!(close(chi_square_quantile(1, 0.95).unwrap(), 3.84146, 1e-5));
    }

    #[test]
    fn chi_square_cdf_inverts() {
        for dof in [1, 3, 10, 25, 35, 150] {
            for &p in &[0.005, 0.3, 0.95, 0.995] {
                let q = chi_square_quantile(dof, p).unwrap();
                assert!((chi_square_cdf(dof, q) - p).abs() < 1e-8);
            }
        }
        assert!(chi_square_quantile(3, 0.0).is_err());
        assert!(chi_square_quantile(3, 1.0).is_err());
        assert!(chi_square_quantile(0, 0.5).is_err());
    }

    #[test]
    fn lstsq_examples() {
        let x = lstsq(&dmatrix![1.0; 1.0], &dvector![1.0, 3.0]).unwrap();
        assert!(close(x[0], 2.0, 1e-14));
        let y = dvector![3.0, -1.0, 2.0];
        let x = lstsq(&DMatrix::identity(3, 3), &y).unwrap();
        assert!((x - y).amax() < 1e-14);
        assert!(matches!(
            lstsq(&dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0], &dvector![1.0, 2.0, 3.0]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn square_solve() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let mut b = vec![4.0, 3.0];
        assert!(solve_square_in_place(&mut a, &mut b, 2));
        assert!(close(b[0], 1.0, 1e-14) && close(b[1], 2.0, 1e-14));
        let mut s = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 1.0];
        assert!(!solve_square_in_place(&mut s, &mut b, 2));
    }
}
