//! Dense complex-Hermitian linear algebra.
//!
//! The whole solver works over the real vector space of n×n Hermitian
//! matrices with the inner product ⟨Y,X⟩ = Re Tr(Y†X). This module holds the
//! matrix type, the isometric real vectorizations (`hvec`/`hmat`/`cvec`),
//! spectral decompositions, the matrix logarithm and its Fréchet derivative
//! via first divided differences.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used everywhere.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense real matrix.
pub type RMat = DMatrix<f64>;
/// Dense real vector.
pub type RVec = DVector<f64>;

/// Relative tolerance for accepting nearly-Hermitian input at construction.
pub const HERMITICITY_TOL: f64 = 1e-14;


/// An n×n complex Hermitian matrix.
///
/// Hermiticity is checked at ingestion (within `1e-14·maxAbsEntry`) and then
/// enforced exactly by symmetrization, so downstream code can rely on
/// `H[i][j] == conj(H[j][i])` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    mat: CMat,
}

impl HermitianMatrix {
    /// Validates Hermiticity and finiteness, then symmetrizes exactly.
    pub fn new(mat: CMat) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mut max_abs = 0.0f64;
        for v in mat.iter() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite("Hermitian ingestion".into()));
            }
            max_abs = max_abs.max(v.norm());
        }
        let mut max_asym = 0.0f64;
        for i in 0..mat.nrows() {
            for j in i..mat.ncols() {
                max_asym = max_asym.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
            }
        }
        if max_asym > HERMITICITY_TOL * max_abs.max(1.0) {
            return Err(Error::NotHermitian(format!(
                "asymmetry {:.3e} exceeds {:.3e}",
                max_asym,
                HERMITICITY_TOL * max_abs.max(1.0)
            )));
        }
        Ok(Self::symmetrize(mat))
    }

    /// Exact symmetrization (M+M†)/2. Used after every arithmetic composite
    /// to stop Hermiticity drift.
    pub fn symmetrize(mat: CMat) -> Self {
        let n = mat.nrows();
        let mut out = mat;
        for i in 0..n {
            out[(i, i)] = C64::new(out[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = avg;
                out[(j, i)] = avg.conj();
            }
        }
        Self { mat: out }
    }

    pub fn zeros(n: usize) -> Self {
        Self { mat: CMat::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { mat: CMat::identity(n, n) }
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(d: &RVec) -> Self {
        let n = d.len();
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(d[i], 0.0);
        }
        Self { mat: m }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    /// Re Tr(H); the imaginary part is identically zero by the invariant.
    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).sum()
    }

    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Entrywise sum; Hermiticity is exact under addition.
    pub fn add(&self, other: &Self) -> Self {
        Self { mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { mat: &self.mat - &other.mat }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { mat: &self.mat * C64::new(s, 0.0) }
    }

    /// V† H V for a (generally rectangular) complex matrix V.
    pub fn conjugate_by(&self, v: &CMat) -> Result<Self> {
        if v.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "conjugation: V has {} rows, H is {}x{}",
                v.nrows(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(Self::symmetrize(v.adjoint() * &self.mat * v))
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let d = eigh(self)?;
        Ok(d.eigenvalues[d.eigenvalues.len() - 1])
    }
}

/// Spectral decomposition H = U Λ U† with λ sorted descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub unitary: CMat,
    pub eigenvalues: RVec,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.unitary.nrows()
    }

    /// U diag(g(λ)) U†.
    pub fn apply_spectral_fn<F: Fn(f64) -> f64>(&self, g: F) -> HermitianMatrix {
        let n = self.dim();
        let mut scaled = self.unitary.clone();
        for j in 0..n {
            let gj = C64::new(g(self.eigenvalues[j]), 0.0);
            for i in 0..n {
                scaled[(i, j)] *= gj;
            }
        }
        HermitianMatrix::symmetrize(scaled * self.unitary.adjoint())
    }

    pub fn reconstruct(&self) -> HermitianMatrix {
        self.apply_spectral_fn(|x| x)
    }
}

/// Rank-revealing factor H ≈ V D V† with V†V = I_r and D ≻ 0.
#[derive(Debug, Clone)]
pub struct CompactFactor {
    pub basis: CMat,
    pub core: HermitianMatrix,
    pub rank: usize,
}

/// ⟨Y,X⟩ = Re Tr(Y†X), the real inner product on complex matrices.
pub fn real_inner(x: &CMat, y: &CMat) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "inner product: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(x.iter().zip(y.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum())
}

/// Inner product of Hermitian matrices; real and symmetric by construction.
pub fn inner_h(a: &HermitianMatrix, b: &HermitianMatrix) -> f64 {
    real_inner(a.as_matrix(), b.as_matrix()).expect("hermitian dims checked at construction")
}

/// Isometric vectorization of a Hermitian matrix:
/// (diag(H); √2·Re(strict upper, columnwise); √2·Im(strict upper, columnwise)).
pub fn hvec(h: &HermitianMatrix) -> RVec {
    let n = h.dim();
    let m = h.as_matrix();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = RVec::zeros(n * n);
    for i in 0..n {
        out[i] = m[(i, i)].re;
    }
    let mut idx = n;
    let off = (n * n - n) / 2;
    for j in 0..n {
        for i in 0..j {
            out[idx] = sqrt2 * m[(i, j)].re;
            out[idx + off] = sqrt2 * m[(i, j)].im;
            idx += 1;
        }
    }
    out
}

/// Inverse (and adjoint) of [`hvec`].
pub fn hmat(v: &RVec) -> Result<HermitianMatrix> {
    let len = v.len();
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(Error::DimensionMismatch(format!(
            "hmat: length {} is not a perfect square",
            len
        )));
    }
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    let mut idx = n;
    let off = (n * n - n) / 2;
    for j in 0..n {
        for i in 0..j {
            let val = C64::new(v[idx] * inv_sqrt2, v[idx + off] * inv_sqrt2);
            m[(i, j)] = val;
            m[(j, i)] = val.conj();
            idx += 1;
        }
    }
    Ok(HermitianMatrix { mat: m })
}

/// Real vectorization of a complex matrix: (vec(Re M); vec(Im M)), columnwise.
pub fn cvec(m: &CMat) -> RVec {
    let (r, c) = m.shape();
    let mut out = RVec::zeros(2 * r * c);
    let half = r * c;
    let mut idx = 0;
    for j in 0..c {
        for i in 0..r {
            out[idx] = m[(i, j)].re;
            out[idx + half] = m[(i, j)].im;
            idx += 1;
        }
    }
    out
}

/// Hermitian eigendecomposition with eigenvalues sorted descending.
///
/// Householder tridiagonalization followed by implicit-shift QL with
/// accumulated rotations (the classic htridi/tql2 pipeline), which stays
/// robust on the highly degenerate block matrices facial reduction feeds
/// it.
pub fn eigh(h: &HermitianMatrix) -> Result<SpectralDecomposition> {
    let n = h.dim();
    if n == 0 {
        return Ok(SpectralDecomposition { unitary: CMat::zeros(0, 0), eigenvalues: RVec::zeros(0) });
    }
    let (mut d, mut e, mut q) = tridiagonalize(h.as_matrix());
    ql_implicit(&mut d, &mut e, &mut q)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut unitary = CMat::zeros(n, n);
    let mut eigenvalues = RVec::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = d[src];
        unitary.set_column(dst, &q.column(src));
    }
    Ok(SpectralDecomposition { unitary, eigenvalues })
}

/// Unitary reduction A = Q T Q† to real symmetric tridiagonal form:
/// returns (diagonal, subdiagonal, Q). Subdiagonal phases are absorbed
/// into Q so T is real.
fn tridiagonalize(a: &CMat) -> (Vec<f64>, Vec<f64>, CMat) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut q = CMat::identity(n, n);
    let mut sub = vec![C64::new(0.0, 0.0); n.saturating_sub(1)];

    for k in 0..n.saturating_sub(2) {
        let len = n - k - 1;
        let mut x = CMat::zeros(len, 1);
        for i in 0..len {
            x[(i, 0)] = m[(k + 1 + i, k)];
        }
        let sigma = x.norm();
        if sigma == 0.0 || !sigma.is_normal() {
            // Zero (or underflowed) column: already in tridiagonal position.
            sub[k] = x[(0, 0)];
            continue;
        }
        let x0 = x[(0, 0)];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * sigma;
        // Build the reflector from the unit-scaled column so ‖v‖² ∈ [1, 4]
        // regardless of the column's magnitude.
        let mut v = x * C64::new(1.0 / sigma, 0.0);
        v[(0, 0)] += phase;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 <= f64::EPSILON {
            sub[k] = alpha;
            continue;
        }
        let tau = 2.0 / vnorm2;

        // Similarity update of the trailing block: A ← (I−τvv†)A(I−τvv†).
        let block = m.view((k + 1, k + 1), (len, len)).into_owned();
        let p = &block * &v * C64::new(tau, 0.0);
        let kappa = {
            let vp: C64 = (0..len).map(|i| v[(i, 0)].conj() * p[(i, 0)]).sum();
            vp * C64::new(0.5 * tau, 0.0)
        };
        let w = &p - &v * kappa;
        for i in 0..len {
            for j in 0..len {
                let upd = v[(i, 0)] * w[(j, 0)].conj() + w[(i, 0)] * v[(j, 0)].conj();
                m[(k + 1 + i, k + 1 + j)] -= upd;
            }
        }
        sub[k] = alpha;
        for i in 1..len {
            m[(k + 1 + i, k)] = C64::new(0.0, 0.0);
        }
        // Accumulate the reflector into Q (trailing columns only).
        for row in 0..n {
            let mut t = C64::new(0.0, 0.0);
            for j in 0..len {
                t += q[(row, k + 1 + j)] * v[(j, 0)];
            }
            t *= C64::new(tau, 0.0);
            for j in 0..len {
                q[(row, k + 1 + j)] -= t * v[(j, 0)].conj();
            }
        }
    }
    if n >= 2 {
        sub[n - 2] = m[(n - 1, n - 2)];
    }

    // Absorb subdiagonal phases: T ← D†TD with |D| = 1 makes T real.
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    for i in 0..n {
        d[i] = m[(i, i)].re;
    }
    let mut c = C64::new(1.0, 0.0);
    for i in 0..n.saturating_sub(1) {
        let s = sub[i];
        let mag = s.norm();
        e[i] = mag;
        let phi = if mag > 0.0 { s / mag } else { C64::new(1.0, 0.0) };
        c *= phi;
        for row in 0..n {
            q[(row, i + 1)] *= c;
        }
    }
    (d, e, q)
}

/// Implicit-shift QL sweeps on the tridiagonal (d, e) with rotation
/// accumulation into the complex column basis.
fn ql_implicit(d: &mut [f64], e: &mut [f64], q: &mut CMat) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    let eps = f64::EPSILON;
    // Similarity transforms preserve the norm, so one scale suffices. The
    // deflation test mixes the relative criterion with this scale to keep
    // terminating on blocks whose diagonal is at underflow level; the
    // induced perturbation stays O(eps·‖T‖).
    let anorm = (0..n).fold(0.0f64, |m, i| {
        let row = d[i].abs()
            + if i > 0 { e[i - 1].abs() } else { 0.0 }
            + if i + 1 < n { e[i].abs() } else { 0.0 };
        m.max(row)
    });
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * (dd + anorm) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::EigenFailure);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // Rotate the (complex) eigenvector columns i and i+1.
                for row in 0..q.nrows() {
                    f = q[(row, i + 1)].re;
                    let fi = q[(row, i + 1)].im;
                    let qr = q[(row, i)];
                    q[(row, i + 1)] = C64::new(s * qr.re + c * f, s * qr.im + c * fi);
                    q[(row, i)] = C64::new(c * qr.re - s * f, c * qr.im - s * fi);
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Compact spectral factor of a PSD matrix: keeps eigenpairs with
/// λ > rank_tol·max(1, λ_max) and rejects significantly indefinite input.
pub fn compact_decomp(h: &HermitianMatrix, rank_tol: f64) -> Result<CompactFactor> {
    let d = eigh(h)?;
    let n = d.dim();
    let lam_max = if n > 0 { d.eigenvalues[0].max(0.0) } else { 0.0 };
    let thr = rank_tol * lam_max.max(1.0);
    if n > 0 && d.eigenvalues[n - 1] < -thr {
        return Err(Error::Indefinite(format!(
            "min eigenvalue {:.3e} below -{:.3e}",
            d.eigenvalues[n - 1],
            thr
        )));
    }
    let rank = d.eigenvalues.iter().filter(|&&x| x > thr).count();
    let basis = CMat::from_fn(n, rank, |i, j| d.unitary[(i, j)]);
    let core = HermitianMatrix::from_diagonal(&RVec::from_fn(rank, |i, _| d.eigenvalues[i]));
    Ok(CompactFactor { basis, core, rank })
}

/// Matrix logarithm of a positive definite Hermitian matrix.
pub fn mat_log(h: &HermitianMatrix) -> Result<HermitianMatrix> {
    let d = eigh(h)?;
    let n = d.dim();
    if n > 0 && d.eigenvalues[n - 1] <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "matrix log needs λ_min > 0, got {:.3e}",
            d.eigenvalues[n - 1]
        )));
    }
    Ok(d.apply_spectral_fn(f64::ln))
}

/// First divided differences of ln at the eigenvalues:
/// entry (i,j) = (ln λᵢ − ln λⱼ)/(λᵢ − λⱼ), with the derivative branch
/// 2/(λᵢ+λⱼ) once |λᵢ−λⱼ| ≤ 1e-12·max(λᵢ,λⱼ) to avoid cancellation.
pub fn divided_difference_matrix(lambda: &RVec) -> Result<RMat> {
    let n = lambda.len();
    for &l in lambda.iter() {
        if l <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "divided differences need positive eigenvalues, got {:.3e}",
                l
            )));
        }
    }
    let mut out = RMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (li, lj) = (lambda[i], lambda[j]);
            let d = li - lj;
            let v = if d.abs() <= 1e-12 * li.max(lj) {
                2.0 / (li + lj)
            } else {
                let r = d / lj;
                if r.abs() < 0.5 {
                    r.ln_1p() / d
                } else {
                    (li.ln() - lj.ln()) / d
                }
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Fréchet derivative of the matrix log at H ≻ 0 in direction Δ:
/// U (h⁽¹⁾(Λ) ∘ (U†ΔU)) U†.
pub fn log_frechet(h: &HermitianMatrix, delta: &HermitianMatrix) -> Result<HermitianMatrix> {
    let d = eigh(h)?;
    log_frechet_with(&d, delta)
}

/// Same as [`log_frechet`] but reuses a cached spectral decomposition of H.
pub fn log_frechet_with(
    spec: &SpectralDecomposition,
    delta: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    if spec.dim() != delta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "log_frechet: H is {}x{}, Δ is {}x{}",
            spec.dim(),
            spec.dim(),
            delta.dim(),
            delta.dim()
        )));
    }
    let dd = divided_difference_matrix(&spec.eigenvalues)?;
    let mut inner = spec.unitary.adjoint() * delta.as_matrix() * &spec.unitary;
    for i in 0..spec.dim() {
        for j in 0..spec.dim() {
            inner[(i, j)] *= C64::new(dd[(i, j)], 0.0);
        }
    }
    Ok(HermitianMatrix::symmetrize(
        &spec.unitary * inner * spec.unitary.adjoint(),
    ))
}

/// Cholesky factor L (lower triangular, H = LL†) of a Hermitian positive
/// definite matrix; `None` when any pivot fails to be strictly positive.
pub fn cholesky_factor(h: &HermitianMatrix) -> Option<CMat> {
    let n = h.dim();
    let m = h.as_matrix();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = C64::new(dj, 0.0);
        let inv = C64::new(1.0 / dj, 0.0);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s * inv;
        }
    }
    Some(l)
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Partial trace over the second factor of a matrix on ℂ^{na}⊗ℂ^{nb}.
pub fn partial_trace_b(m: &CMat, na: usize, nb: usize) -> Result<CMat> {
    if m.nrows() != na * nb || m.ncols() != na * nb {
        return Err(Error::DimensionMismatch(format!(
            "partial trace: matrix {}x{} vs {}·{}",
            m.nrows(),
            m.ncols(),
            na,
            nb
        )));
    }
    let mut out = CMat::zeros(na, na);
    for i in 0..na {
        for j in 0..na {
            let mut s = C64::new(0.0, 0.0);
            for b in 0..nb {
                s += m[(i * nb + b, j * nb + b)];
            }
            out[(i, j)] = s;
        }
    }
    Ok(out)
}
