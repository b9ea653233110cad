//! Facial reduction: regularizes the key-rate problem so that every matrix
//! logarithm downstream acts on a positive definite argument.
//!
//! Three stages:
//! 1. explicit reduction of the reduced-density-operator constraint from the
//!    spectral decomposition of ρ_A (exposing vector W⊗I_B, transfer V_ρ),
//! 2. minimal-face extraction for the images of the rotated maps via the
//!    rank of map(I),
//! 3. rotation of the equality constraints onto those faces plus removal of
//!    the constraints made redundant by stage 1.
//!
//! The output model minimizes Tr(Ĝ(ρ)log Ĝ(ρ)) − Tr(Ẑ(ρ)log Ẑ(ρ)) over the
//! reduced spectrahedron {ρ ⪰ 0 : Γ_V(ρ) = γ_V}, where ρ ≻ 0 now implies
//! Ĝ(ρ) ≻ 0 and Ẑ(ρ) ≻ 0.

use crate::error::{Error, Result};
use crate::hermitian::{
    compact_decomp, eigh, hvec, kron, CMat, HermitianMatrix, RMat, RVec, C64,
};
use crate::maps::{CpMap, KrausMap, PinchingMap};

/// Default relative rank tolerance shared by every compact decomposition in
/// the pipeline. Sits between eigensolver accuracy (~1e-14) and the rank
/// gaps facial reduction has to resolve.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Known reduced density operator ρ_A with ρ = ρ_A ⊗ (n_b-dimensional rest).
#[derive(Debug, Clone)]
pub struct ReducedDensity {
    pub rho_a: HermitianMatrix,
    pub n_b: usize,
}

/// Original model data: observables (Γᵢ, γᵢ) with Γ₁ = I first, the CP map
/// G, the pinching Z, and optionally the reduced density operator block.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub n: usize,
    pub constraints: Vec<(HermitianMatrix, f64)>,
    pub g_map: KrausMap,
    pub z_map: PinchingMap,
    pub reduced_density: Option<ReducedDensity>,
    pub label: String,
}

impl ProblemInstance {
    pub fn new(
        constraints: Vec<(HermitianMatrix, f64)>,
        g_map: KrausMap,
        z_map: PinchingMap,
        reduced_density: Option<ReducedDensity>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = g_map.in_dim();
        if constraints.is_empty() {
            return Err(Error::InvalidInstance("no constraints".into()));
        }
        let (first, gamma1) = &constraints[0];
        if (first.as_matrix() - CMat::identity(n, n)).norm() > 1e-12 || (gamma1 - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidInstance(
                "first constraint must be the unit-trace row Γ₁ = I, γ₁ = 1".into(),
            ));
        }
        for (i, (op, v)) in constraints.iter().enumerate() {
            if op.dim() != n {
                return Err(Error::InvalidInstance(format!(
                    "constraint {} has dimension {}, state dimension is {}",
                    i,
                    op.dim(),
                    n
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInstance(format!("constraint {} value not finite", i)));
            }
        }
        if z_map.dim() != g_map.out_dim() {
            return Err(Error::InvalidInstance(format!(
                "pinching dimension {} does not match map output {}",
                z_map.dim(),
                g_map.out_dim()
            )));
        }
        if let Some(rd) = &reduced_density {
            let n_a = rd.rho_a.dim();
            if n_a * rd.n_b != n {
                return Err(Error::InvalidInstance(format!(
                    "reduced density: {}·{} ≠ {}",
                    n_a, rd.n_b, n
                )));
            }
            let ev = eigh(&rd.rho_a)?.eigenvalues;
            if ev[n_a - 1] < -1e-12 {
                return Err(Error::InvalidInstance(format!(
                    "ρ_A has negative eigenvalue {:.3e}",
                    ev[n_a - 1]
                )));
            }
            if (rd.rho_a.trace() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInstance(format!(
                    "ρ_A trace {:.15} ≠ 1",
                    rd.rho_a.trace()
                )));
            }
        }
        Ok(Self { n, constraints, g_map, z_map, reduced_density, label: label.into() })
    }

    pub fn k(&self) -> usize {
        self.g_map.out_dim()
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    /// γ as a vector.
    pub fn gamma(&self) -> RVec {
        RVec::from_fn(self.m(), |i, _| self.constraints[i].1)
    }
}

/// Post-FR model: rotated maps, conjugated constraints, transfer matrices
/// and the bookkeeping needed for lifting and certifying.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub n_rho: usize,
    pub gamma_ops: Vec<HermitianMatrix>,
    pub gamma_v: RVec,
    pub g_hat: KrausMap,
    pub z_hat: CpMap,
    pub v_rho: CMat,
    pub v_delta: CMat,
    pub v_sigma: CMat,
    pub kept_constraints: Vec<usize>,
    pub dropped_constraints: Vec<usize>,
    /// Exposing vector W = QQ† on the A-system (zero when ρ_A is full rank
    /// or absent).
    pub exposing_vector: Option<HermitianMatrix>,
    /// hvec rows of the kept constraint operators, m_V × n_ρ².
    pub constraint_rows: RMat,
}

impl ReducedModel {
    pub fn m_v(&self) -> usize {
        self.gamma_ops.len()
    }

    pub fn k_delta(&self) -> usize {
        self.v_delta.ncols()
    }

    pub fn k_sigma(&self) -> usize {
        self.v_sigma.ncols()
    }

    /// Γ_V(ρ) over the kept constraints.
    pub fn apply_constraints(&self, rho: &HermitianMatrix) -> RVec {
        &self.constraint_rows * hvec(rho)
    }

    /// Γ_V†(y) = Σ yᵢ Γ_V,i.
    pub fn constraints_adjoint(&self, y: &RVec) -> HermitianMatrix {
        let mut acc = CMat::zeros(self.n_rho, self.n_rho);
        for (op, &yi) in self.gamma_ops.iter().zip(y.iter()) {
            acc += op.as_matrix() * C64::new(yi, 0.0);
        }
        HermitianMatrix::symmetrize(acc)
    }

    /// V_ρ R V_ρ† back to the original space.
    pub fn lift(&self, r: &HermitianMatrix) -> Result<HermitianMatrix> {
        lift(&self.v_rho, r)
    }
}

/// V R V† for a transfer matrix with orthonormal columns.
pub fn lift(v: &CMat, r: &HermitianMatrix) -> Result<HermitianMatrix> {
    if v.ncols() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "lift: V has {} columns, R is {}x{}",
            v.ncols(),
            r.dim(),
            r.dim()
        )));
    }
    Ok(HermitianMatrix::symmetrize(v * r.as_matrix() * v.adjoint()))
}

/// Stage 1: explicit facial reduction of the reduced-density constraint.
///
/// Returns V_ρ = P⊗I_B built from an orthonormal basis P of range(ρ_A) and
/// the exposing vector W = QQ† (Q spanning nul(ρ_A)); every feasible state
/// satisfies ⟨W⊗I_B, ρ⟩ = 0 and lives on the face ρ = V_ρ R V_ρ†.
pub fn fr_reduced_density(
    rho_a: &HermitianMatrix,
    n_b: usize,
    rank_tol: f64,
) -> Result<(CMat, HermitianMatrix)> {
    let n_a = rho_a.dim();
    let d = eigh(rho_a)?;
    let lam_max = d.eigenvalues[0].max(0.0);
    let thr = rank_tol * lam_max.max(1.0);
    if d.eigenvalues[n_a - 1] < -thr {
        return Err(Error::Indefinite(format!(
            "ρ_A min eigenvalue {:.3e}",
            d.eigenvalues[n_a - 1]
        )));
    }
    let r = d.eigenvalues.iter().filter(|&&x| x > thr).count();
    let p = CMat::from_fn(n_a, r, |i, j| d.unitary[(i, j)]);
    let q = CMat::from_fn(n_a, n_a - r, |i, j| d.unitary[(i, r + j)]);
    let w = HermitianMatrix::symmetrize(&q * q.adjoint());
    let v_rho = kron(&p, &CMat::identity(n_b, n_b));
    Ok((v_rho, w))
}

/// Stage 2: minimal face of the image of a PSD-preserving map over a set
/// with interior; range(V) = range(map(I)).
pub fn minimal_face_of_image(map: &CpMap, rank_tol: f64) -> Result<CMat> {
    let image_of_identity = map.apply(&HermitianMatrix::identity(map.in_dim()))?;
    let f = compact_decomp(&image_of_identity, rank_tol)
        .map_err(|e| Error::FacialReduction(format!("image of identity: {e}")))?;
    if f.rank == 0 {
        return Err(Error::FacialReduction("map image is zero".into()));
    }
    Ok(f.basis)
}

/// Residual of the range condition range(v) ⊇ range(map(I)), relative.
fn range_residual(map: &KrausMap, v: &CMat) -> Result<f64> {
    let img = map.apply(&HermitianMatrix::identity(map.in_dim()))?;
    let proj = v * v.adjoint();
    let k = img.dim();
    let compl = CMat::identity(k, k) - proj;
    let res = (&compl * img.as_matrix() * &compl).norm();
    Ok(res / img.norm().max(1.0))
}

fn rotate_map(map: &KrausMap, v_out: &CMat, rank_tol: f64) -> Result<KrausMap> {
    let res = range_residual(map, v_out)?;
    if res > rank_tol.max(1e-12) * 1e2 {
        return Err(Error::FacialReduction(format!(
            "range condition violated: residual {:.3e}",
            res
        )));
    }
    map.conjugate_output(v_out)
}

/// Stage 3a: rotate G_V onto the face of its image, Ĝ = V_δ† G_V(·) V_δ.
/// Equivalence: V_δ Ĝ(R) V_δ† = G_V(R) for every R on the reduced domain.
pub fn rotate_g(g_v: &KrausMap, v_delta: &CMat, rank_tol: f64) -> Result<KrausMap> {
    rotate_map(g_v, v_delta, rank_tol)
}

/// Stage 3b: rotate Z_V, stored as a generic CP map — the rotated map is no
/// longer a pinching.
pub fn rotate_z(z_v: &KrausMap, v_sigma: &CMat, rank_tol: f64) -> Result<KrausMap> {
    rotate_map(z_v, v_sigma, rank_tol)
}

/// Removes linearly dependent constraint rows in hvec coordinates.
///
/// The first row (unit trace by convention) is kept with priority so the
/// identity stays in span(Γ_V†). Each dropped row must be consistent with
/// the kept ones: the least-squares reconstruction of its γ value has to
/// agree within 1e-9, otherwise the instance data is corrupted.
pub fn remove_redundant_constraints(
    ops: &[HermitianMatrix],
    gamma: &RVec,
    tol: f64,
) -> Result<(Vec<usize>, Vec<usize>, RVec)> {
    let m = ops.len();
    if m == 0 {
        return Ok((vec![], vec![], RVec::zeros(0)));
    }
    if gamma.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} operators vs {} values",
            m,
            gamma.len()
        )));
    }
    let d = ops[0].dim() * ops[0].dim();
    let rows: Vec<RVec> = ops.iter().map(hvec).collect();
    let max_norm = rows.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    let thr = tol * max_norm;

    // Greedy column-pivoted Gram-Schmidt over the rows, with twice-through
    // reorthogonalization; row 0 is forced into the basis first.
    let mut basis: Vec<RVec> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut residual: Vec<RVec> = rows.clone();
    let mut alive: Vec<bool> = vec![true; m];

    let pick = |idx: usize,
                    basis: &mut Vec<RVec>,
                    kept: &mut Vec<usize>,
                    residual: &mut Vec<RVec>,
                    alive: &mut Vec<bool>| {
        let mut q = residual[idx].clone();
        for b in basis.iter() {
            let c = b.dot(&q);
            q -= b * c;
        }
        let nq = q.norm();
        q /= nq;
        for r in residual.iter_mut() {
            let c = q.dot(r);
            *r -= &q * c;
        }
        basis.push(q);
        kept.push(idx);
        alive[idx] = false;
    };

    if rows[0].norm() > thr.max(f64::MIN_POSITIVE) {
        pick(0, &mut basis, &mut kept, &mut residual, &mut alive);
    }
    loop {
        let mut best = None;
        let mut best_norm = thr;
        for i in 0..m {
            if alive[i] {
                let nrm = residual[i].norm();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = Some(i);
                }
            }
        }
        match best {
            Some(i) => pick(i, &mut basis, &mut kept, &mut residual, &mut alive),
            None => break,
        }
        if kept.len() == d {
            break;
        }
    }
    kept.sort_unstable();
    let dropped: Vec<usize> = (0..m).filter(|i| !kept.contains(i)).collect();

    // Consistency of the dropped values against the kept system.
    if !dropped.is_empty() {
        let mv = kept.len();
        let stack = RMat::from_fn(d, mv, |i, j| rows[kept[j]][i]);
        let qr = stack.clone().qr();
        let q = qr.q();
        let r = qr.r();
        for &i in &dropped {
            let qtb = q.transpose() * &rows[i];
            let coeff = r.clone().solve_upper_triangular(&qtb).ok_or_else(|| {
                Error::Numerical("rank-deficient kept stack in redundancy check".into())
            })?;
            let gamma_hat: f64 = (0..mv).map(|j| coeff[j] * gamma[kept[j]]).sum();
            if (gamma_hat - gamma[i]).abs() > 1e-9 {
                return Err(Error::InvalidInstance(format!(
                    "constraint {} is linearly dependent but its value is inconsistent: \
                     {:.12e} vs reconstructed {:.12e}",
                    i, gamma[i], gamma_hat
                )));
            }
        }
    }

    let gamma_v = RVec::from_fn(kept.len(), |j, _| gamma[kept[j]]);
    Ok((kept, dropped, gamma_v))
}

/// Verifies V†V = I within 1e-12·(number of columns).
fn check_orthonormal(v: &CMat, name: &str) -> Result<()> {
    let r = v.ncols();
    let res = (v.adjoint() * v - CMat::identity(r, r)).norm();
    if res > 1e-12 * (r.max(1) as f64) {
        return Err(Error::FacialReduction(format!(
            "{name} columns not orthonormal: residual {res:.3e}"
        )));
    }
    Ok(())
}

/// Full pipeline: reduced-density FR, constraint conjugation and redundancy
/// removal, image FR for both maps, constraint rotation, final model
/// assembly.
pub fn build_reduced_model(instance: &ProblemInstance, rank_tol: f64) -> Result<ReducedModel> {
    let n = instance.n;

    // Stage 1: face of the reduced-density constraint.
    let (v_rho, exposing_vector) = match &instance.reduced_density {
        Some(rd) => {
            let (v, w) = fr_reduced_density(&rd.rho_a, rd.n_b, rank_tol)?;
            (v, Some(w))
        }
        None => (CMat::identity(n, n), None),
    };
    check_orthonormal(&v_rho, "V_ρ")?;
    let n_rho = v_rho.ncols();

    // Conjugate the constraints onto the face and discard redundant rows.
    let reduced_ops: Vec<HermitianMatrix> = instance
        .constraints
        .iter()
        .map(|(op, _)| op.conjugate_by(&v_rho))
        .collect::<Result<_>>()?;
    let gamma = instance.gamma();
    let (kept, dropped, gamma_v) = remove_redundant_constraints(&reduced_ops, &gamma, rank_tol)?;
    let gamma_ops: Vec<HermitianMatrix> = kept.iter().map(|&i| reduced_ops[i].clone()).collect();
    let m_v = gamma_ops.len();

    let constraint_rows = {
        let mut a = RMat::zeros(m_v, n_rho * n_rho);
        for (j, op) in gamma_ops.iter().enumerate() {
            a.set_row(j, &hvec(op).transpose());
        }
        a
    };
    // Retained rows must be solidly independent.
    {
        let svd = constraint_rows.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax {
            return Err(Error::FacialReduction(format!(
                "kept constraints nearly dependent: σ_min/σ_max = {:.3e}",
                smin / smax
            )));
        }
    }

    // Stage 2+3 on the G side.
    let g_v = instance.g_map.conjugate_input(&v_rho)?;
    let v_delta = minimal_face_of_image(&CpMap::Kraus(g_v.clone()), rank_tol)?;
    check_orthonormal(&v_delta, "V_δ")?;
    let g_hat = rotate_g(&g_v, &v_delta, rank_tol)?;

    // Stage 2+3 on the Z side, seen from the δ-face.
    let z_v = instance.z_map.as_kraus().conjugate_input(&v_delta)?;
    let v_sigma = minimal_face_of_image(&CpMap::Kraus(z_v.clone()), rank_tol)?;
    check_orthonormal(&v_sigma, "V_σ")?;
    let z_uv = rotate_z(&z_v, &v_sigma, rank_tol)?;

    let k = instance.k();
    let (k_delta, k_sigma) = (v_delta.ncols(), v_sigma.ncols());
    if !(k_delta <= k_sigma && k_sigma <= k) {
        return Err(Error::FacialReduction(format!(
            "face dimensions out of order: k_δ={k_delta}, k_σ={k_sigma}, k={k}"
        )));
    }

    let z_hat = CpMap::compose(CpMap::Kraus(z_uv), CpMap::Kraus(g_hat.clone()))?;

    Ok(ReducedModel {
        n_rho,
        gamma_ops,
        gamma_v,
        g_hat,
        z_hat,
        v_rho,
        v_delta,
        v_sigma,
        kept_constraints: kept,
        dropped_constraints: dropped,
        exposing_vector,
        constraint_rows,
    })
}
