//! Completely positive maps in Kraus form, pinching maps, compositions and
//! their adjoints, plus the left/right multiplication adjoints used by the
//! Gauss-Newton system.

use crate::error::{Error, Result};
use crate::hermitian::{hmat, hvec, CMat, HermitianMatrix, RMat, RVec, C64};

/// Validation tolerance for the trace-non-increasing check Σ K†K ⪯ I.
pub const KRAUS_TOL: f64 = 1e-10;
/// Validation tolerance for the pinching projector algebra.
pub const PINCHING_TOL: f64 = 1e-12;

/// CP map X ↦ Σⱼ KⱼXKⱼ† with Σⱼ Kⱼ†Kⱼ ⪯ I.
#[derive(Debug, Clone)]
pub struct KrausMap {
    in_dim: usize,
    out_dim: usize,
    factors: Vec<CMat>,
}

impl KrausMap {
    /// Validates shapes and the trace-non-increasing certificate.
    pub fn new(factors: Vec<CMat>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidMap("Kraus map needs at least one factor".into()));
        }
        let (out_dim, in_dim) = factors[0].shape();
        for (j, k) in factors.iter().enumerate() {
            if k.shape() != (out_dim, in_dim) {
                return Err(Error::InvalidMap(format!(
                    "Kraus factor {} has shape {:?}, expected {:?}",
                    j,
                    k.shape(),
                    (out_dim, in_dim)
                )));
            }
            if k.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite(format!("Kraus factor {}", j)));
            }
        }
        let mut gram = CMat::zeros(in_dim, in_dim);
        for k in &factors {
            gram += k.adjoint() * k;
        }
        let gram = HermitianMatrix::symmetrize(gram);
        let lam_max = crate::hermitian::eigh(&gram)?.eigenvalues[0];
        if lam_max > 1.0 + KRAUS_TOL {
            return Err(Error::InvalidMap(format!(
                "map is trace-increasing: λ_max(ΣK†K) = {:.12}",
                lam_max
            )));
        }
        Ok(Self { in_dim, out_dim, factors })
    }

    pub fn identity(n: usize) -> Self {
        Self { in_dim: n, out_dim: n, factors: vec![CMat::identity(n, n)] }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn factors(&self) -> &[CMat] {
        &self.factors
    }

    /// Σⱼ KⱼXKⱼ†.
    pub fn apply(&self, x: &HermitianMatrix) -> Result<HermitianMatrix> {
        if x.dim() != self.in_dim {
            return Err(Error::DimensionMismatch(format!(
                "apply: X is {}x{}, map takes {}",
                x.dim(),
                x.dim(),
                self.in_dim
            )));
        }
        let mut out = CMat::zeros(self.out_dim, self.out_dim);
        for k in &self.factors {
            out += k * x.as_matrix() * k.adjoint();
        }
        Ok(HermitianMatrix::symmetrize(out))
    }

    /// Adjoint Σⱼ Kⱼ†YKⱼ.
    pub fn adjoint_apply(&self, y: &HermitianMatrix) -> Result<HermitianMatrix> {
        if y.dim() != self.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "adjoint_apply: Y is {}x{}, map outputs {}",
                y.dim(),
                y.dim(),
                self.out_dim
            )));
        }
        let mut out = CMat::zeros(self.in_dim, self.in_dim);
        for k in &self.factors {
            out += k.adjoint() * y.as_matrix() * k;
        }
        Ok(HermitianMatrix::symmetrize(out))
    }

    /// Conjugates the input side: X ↦ map(V X V†), factors become KⱼV.
    pub fn conjugate_input(&self, v: &CMat) -> Result<Self> {
        if v.nrows() != self.in_dim {
            return Err(Error::DimensionMismatch(format!(
                "conjugate_input: V has {} rows, map takes {}",
                v.nrows(),
                self.in_dim
            )));
        }
        Ok(Self {
            in_dim: v.ncols(),
            out_dim: self.out_dim,
            factors: self.factors.iter().map(|k| k * v).collect(),
        })
    }

    /// Conjugates the output side: X ↦ V† map(X) V, factors become V†Kⱼ.
    pub fn conjugate_output(&self, v: &CMat) -> Result<Self> {
        if v.nrows() != self.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "conjugate_output: V has {} rows, map outputs {}",
                v.nrows(),
                self.out_dim
            )));
        }
        Ok(Self {
            in_dim: self.in_dim,
            out_dim: v.ncols(),
            factors: self.factors.iter().map(|k| v.adjoint() * k).collect(),
        })
    }
}

/// Pinching map X ↦ Σⱼ ZⱼXZⱼ from a spectral resolution of the identity.
#[derive(Debug, Clone)]
pub struct PinchingMap {
    dim: usize,
    projectors: Vec<CMat>,
}

impl PinchingMap {
    /// Validates Zⱼ² = Zⱼ = Zⱼ†, ΣZⱼ = I and mutual orthogonality ZᵢZⱼ = 0.
    pub fn new(projectors: Vec<CMat>) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::InvalidMap("pinching map needs at least one projector".into()));
        }
        let dim = projectors[0].nrows();
        let mut sum = CMat::zeros(dim, dim);
        for (j, z) in projectors.iter().enumerate() {
            if z.shape() != (dim, dim) {
                return Err(Error::InvalidMap(format!(
                    "projector {} has shape {:?}, expected {}x{}",
                    j,
                    z.shape(),
                    dim,
                    dim
                )));
            }
            if (z - z.adjoint()).norm() > PINCHING_TOL {
                return Err(Error::InvalidMap(format!("projector {} is not Hermitian", j)));
            }
            if (z * z - z).norm() > PINCHING_TOL {
                return Err(Error::InvalidMap(format!("projector {} is not idempotent", j)));
            }
            sum += z;
        }
        if (&sum - CMat::identity(dim, dim)).norm() > PINCHING_TOL {
            return Err(Error::InvalidMap("projectors do not sum to the identity".into()));
        }
        for i in 0..projectors.len() {
            for j in (i + 1)..projectors.len() {
                if (&projectors[i] * &projectors[j]).norm() > PINCHING_TOL {
                    return Err(Error::InvalidMap(format!(
                        "projectors {} and {} are not mutually orthogonal",
                        i, j
                    )));
                }
            }
        }
        Ok(Self { dim, projectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projectors(&self) -> &[CMat] {
        &self.projectors
    }

    /// Σⱼ ZⱼXZⱼ; an orthogonal projection on Hermitian space, so it is its
    /// own adjoint.
    pub fn pinch(&self, x: &HermitianMatrix) -> Result<HermitianMatrix> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "pinch: X is {}x{}, map takes {}",
                x.dim(),
                x.dim(),
                self.dim
            )));
        }
        let mut out = CMat::zeros(self.dim, self.dim);
        for z in &self.projectors {
            out += z * x.as_matrix() * z;
        }
        Ok(HermitianMatrix::symmetrize(out))
    }

    /// View as a Kraus map (the projectors are self-adjoint Kraus factors).
    pub fn as_kraus(&self) -> KrausMap {
        KrausMap {
            in_dim: self.dim,
            out_dim: self.dim,
            factors: self.projectors.clone(),
        }
    }
}

/// A PSD-preserving linear map with an adjoint. Compositions keep the
/// ordered pair so adjoints compose in reverse without expanding the
/// product of Kraus factor lists.
#[derive(Debug, Clone)]
pub enum CpMap {
    Kraus(KrausMap),
    Pinching(PinchingMap),
    Composed { outer: Box<CpMap>, inner: Box<CpMap> },
}

impl CpMap {
    pub fn in_dim(&self) -> usize {
        match self {
            CpMap::Kraus(k) => k.in_dim(),
            CpMap::Pinching(p) => p.dim(),
            CpMap::Composed { inner, .. } => inner.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CpMap::Kraus(k) => k.out_dim(),
            CpMap::Pinching(p) => p.dim(),
            CpMap::Composed { outer, .. } => outer.out_dim(),
        }
    }

    pub fn apply(&self, x: &HermitianMatrix) -> Result<HermitianMatrix> {
        match self {
            CpMap::Kraus(k) => k.apply(x),
            CpMap::Pinching(p) => p.pinch(x),
            CpMap::Composed { outer, inner } => outer.apply(&inner.apply(x)?),
        }
    }

    pub fn adjoint_apply(&self, y: &HermitianMatrix) -> Result<HermitianMatrix> {
        match self {
            CpMap::Kraus(k) => k.adjoint_apply(y),
            CpMap::Pinching(p) => p.pinch(y),
            CpMap::Composed { outer, inner } => inner.adjoint_apply(&outer.adjoint_apply(y)?),
        }
    }

    /// outer ∘ inner.
    pub fn compose(outer: CpMap, inner: CpMap) -> Result<CpMap> {
        if inner.out_dim() != outer.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "compose: inner outputs {}, outer takes {}",
                inner.out_dim(),
                outer.in_dim()
            )));
        }
        Ok(CpMap::Composed { outer: Box::new(outer), inner: Box::new(inner) })
    }
}

/// Matrix representation of a CP map acting on hvec coordinates.
#[derive(Debug, Clone)]
pub struct MapMatrixRep {
    pub matrix: RMat,
}

/// Builds the (out_dim²)×(in_dim²) representation column by column over the
/// canonical hvec basis. Executed once per solve, so basis application wins
/// over Kronecker closed forms on simplicity.
pub fn matrix_rep(map: &CpMap) -> Result<MapMatrixRep> {
    let n2 = map.in_dim() * map.in_dim();
    let k2 = map.out_dim() * map.out_dim();
    let mut matrix = RMat::zeros(k2, n2);
    let mut e = RVec::zeros(n2);
    for i in 0..n2 {
        e[i] = 1.0;
        let col = hvec(&map.apply(&hmat(&e)?)?);
        matrix.set_column(i, &col);
        e[i] = 0.0;
    }
    Ok(MapMatrixRep { matrix })
}

/// Hermitian part (M+M†)/2.
pub fn sym(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Skew-Hermitian part (M−M†)/2.
pub fn sksym(m: &CMat) -> CMat {
    (m - m.adjoint()) * C64::new(0.5, 0.0)
}

fn re_part(m: &CMat) -> CMat {
    m.map(|v| C64::new(v.re, 0.0))
}

fn im_part(m: &CMat) -> CMat {
    m.map(|v| C64::new(v.im, 0.0))
}

/// Adjoint of the left multiplication X ↦ WX restricted to Hermitian X:
/// sym[Re(W)Re(M) − Im(W)Im(M)] + i·sksym[Im(W)Re(M) + Re(W)Im(M)].
pub fn left_mult_adjoint(w: &HermitianMatrix, m: &CMat) -> Result<HermitianMatrix> {
    let n = w.dim();
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "left_mult_adjoint: W is {}x{}, M is {:?}",
            n,
            n,
            m.shape()
        )));
    }
    let (wr, wi) = (re_part(w.as_matrix()), im_part(w.as_matrix()));
    let (mr, mi) = (re_part(m), im_part(m));
    let real = sym(&(&wr * &mr - &wi * &mi));
    let imag = sksym(&(&wi * &mr + &wr * &mi));
    Ok(HermitianMatrix::symmetrize(real + imag * C64::new(0.0, 1.0)))
}

/// Adjoint of the right multiplication X ↦ Xρ restricted to Hermitian X:
/// sym[Re(M)Re(ρ) − Im(M)Im(ρ)] + i·sksym[Re(M)Im(ρ) + Im(M)Re(ρ)].
pub fn right_mult_adjoint(rho: &HermitianMatrix, m: &CMat) -> Result<HermitianMatrix> {
    let n = rho.dim();
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "right_mult_adjoint: ρ is {}x{}, M is {:?}",
            n,
            n,
            m.shape()
        )));
    }
    let (rr, ri) = (re_part(rho.as_matrix()), im_part(rho.as_matrix()));
    let (mr, mi) = (re_part(m), im_part(m));
    let real = sym(&(&mr * &rr - &mi * &ri));
    let imag = sksym(&(&mr * &ri + &mi * &rr));
    Ok(HermitianMatrix::symmetrize(real + imag * C64::new(0.0, 1.0)))
}

/// Verifies the hvec-coordinate representation against direct application.
pub fn check_matrix_rep(map: &CpMap, rep: &MapMatrixRep, x: &HermitianMatrix) -> Result<f64> {
    let via_rep = &rep.matrix * hvec(x);
    let direct = hvec(&map.apply(x)?);
    Ok((via_rep - direct).norm())
}
