//! The regularized quantum-relative-entropy objective
//! f(ρ) = Tr(Ĝ(ρ) log Ĝ(ρ)) − Tr(Ẑ(ρ) log Ẑ(ρ)),
//! its gradient, Hessian action and dense Hessian matrix.
//!
//! Everything here assumes the facially reduced maps, so both images are
//! positive definite on positive definite input and the matrix logarithms
//! are analytic. Entropies are eigenvalue sums, never Tr(A·log A) products.

use crate::error::{Error, Result};
use crate::fr::{ProblemInstance, ReducedModel};
use crate::hermitian::{
    divided_difference_matrix, eigh, hmat, hvec, log_frechet_with, HermitianMatrix, RMat, RVec,
    SpectralDecomposition, C64,
};
use crate::maps::CpMap;

/// Images whose smallest eigenvalue falls below this relative floor trigger
/// a conditioning warning; at or below zero evaluation is a hard error since
/// facial reduction should make that unreachable.
const IMAGE_FLOOR_RELATIVE: f64 = 1e-14;

/// Objective value, gradient and the cached image spectra for Hessian reuse
/// within the same iterate.
#[derive(Debug, Clone)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: HermitianMatrix,
    pub g_image: SpectralDecomposition,
    pub z_image: SpectralDecomposition,
    /// Set when an image eigenvalue sits in (0, 1e-14·λ_max].
    pub conditioning_warning: bool,
}

/// Dense Hessian in hvec coordinates; symmetric and PSD up to roundoff by
/// joint convexity of the relative entropy.
#[derive(Debug, Clone)]
pub struct HessianRep {
    pub matrix: RMat,
}

/// The two regularized maps of a model-like pair (Ĝ, Ẑ).
pub trait EntropyMaps {
    fn g(&self) -> CpMap;
    fn z(&self) -> CpMap;
}

impl EntropyMaps for ReducedModel {
    fn g(&self) -> CpMap {
        CpMap::Kraus(self.g_hat.clone())
    }
    fn z(&self) -> CpMap {
        self.z_hat.clone()
    }
}

fn checked_spectrum(
    image: &HermitianMatrix,
    side: &str,
) -> Result<(SpectralDecomposition, bool)> {
    let d = eigh(image)?;
    let k = d.dim();
    let lam_min = d.eigenvalues[k - 1];
    let lam_max = d.eigenvalues[0];
    if lam_min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "{side} image has λ_min = {lam_min:.3e}; facial reduction is broken for this input"
        )));
    }
    Ok((d, lam_min <= IMAGE_FLOOR_RELATIVE * lam_max))
}

fn entropy_sum(lambda: &RVec) -> f64 {
    lambda.iter().map(|&l| l * l.ln()).sum()
}

/// Evaluates f and ∇f at ρ ≻ 0 for the map pair, caching both image
/// spectra. The gradient keeps the Ĝ†(I) − Ẑ†(I) terms verbatim.
pub fn evaluate(g: &CpMap, z: &CpMap, rho: &HermitianMatrix) -> Result<ObjectiveEvaluation> {
    let g_img = g.apply(rho)?;
    let z_img = z.apply(rho)?;
    let (g_spec, warn_g) = checked_spectrum(&g_img, "G")?;
    let (z_spec, warn_z) = checked_spectrum(&z_img, "Z")?;

    let value = entropy_sum(&g_spec.eigenvalues) - entropy_sum(&z_spec.eigenvalues);

    let log_g = g_spec.apply_spectral_fn(f64::ln);
    let log_z = z_spec.apply_spectral_fn(f64::ln);
    let idg = HermitianMatrix::identity(g.out_dim());
    let idz = HermitianMatrix::identity(z.out_dim());
    let gradient = g
        .adjoint_apply(&log_g)?
        .add(&g.adjoint_apply(&idg)?)
        .sub(&z.adjoint_apply(&log_z)?)
        .sub(&z.adjoint_apply(&idz)?);

    Ok(ObjectiveEvaluation {
        value,
        gradient,
        g_image: g_spec,
        z_image: z_spec,
        conditioning_warning: warn_g || warn_z,
    })
}

/// f(ρ) only.
pub fn eval_f(model: &ReducedModel, rho: &HermitianMatrix) -> Result<f64> {
    Ok(evaluate(&model.g(), &model.z(), rho)?.value)
}

/// ∇f(ρ) = Ĝ†(log Ĝ(ρ)) + Ĝ†(I) − Ẑ†(log Ẑ(ρ)) − Ẑ†(I).
pub fn grad_f(model: &ReducedModel, rho: &HermitianMatrix) -> Result<HermitianMatrix> {
    Ok(evaluate(&model.g(), &model.z(), rho)?.gradient)
}

/// Boundary-safe entropy evaluation for PSD (not necessarily PD) states:
/// image eigenvalues at or below the relative floor are truncated, using the
/// 0·log 0 = 0 extension. Valid post-FR where image supports cannot escape
/// the reduced faces.
pub fn eval_f_boundary_safe(g: &CpMap, z: &CpMap, rho: &HermitianMatrix) -> Result<f64> {
    let truncated = |img: &HermitianMatrix| -> Result<f64> {
        let d = eigh(img)?;
        let lam_max = d.eigenvalues[0].max(0.0);
        let floor = IMAGE_FLOOR_RELATIVE * lam_max;
        Ok(d.eigenvalues.iter().filter(|&&l| l > floor).map(|&l| l * l.ln()).sum())
    };
    Ok(truncated(&g.apply(rho)?)? - truncated(&z.apply(rho)?)?)
}

/// Hessian action using cached spectra:
/// ∇²f(ρ)(Δ) = Ĝ†(log′[Ĝ(ρ)](Ĝ(Δ))) − Ẑ†(log′[Ẑ(ρ)](Ẑ(Δ))).
pub fn hess_apply_cached(
    g: &CpMap,
    z: &CpMap,
    eval: &ObjectiveEvaluation,
    delta: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    let g_term = g.adjoint_apply(&log_frechet_with(&eval.g_image, &g.apply(delta)?)?)?;
    let z_term = z.adjoint_apply(&log_frechet_with(&eval.z_image, &z.apply(delta)?)?)?;
    Ok(g_term.sub(&z_term))
}

/// Hessian action at ρ ≻ 0 (fresh evaluation).
pub fn hess_apply_f(
    model: &ReducedModel,
    rho: &HermitianMatrix,
    delta: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    let (g, z) = (model.g(), model.z());
    let eval = evaluate(&g, &z, rho)?;
    hess_apply_cached(&g, &z, &eval, delta)
}

/// Dense Hessian matrix in hvec coordinates, one column per basis element.
pub fn hess_matrix_f(model: &ReducedModel, rho: &HermitianMatrix) -> Result<HessianRep> {
    let (g, z) = (model.g(), model.z());
    let eval = evaluate(&g, &z, rho)?;
    let n2 = model.n_rho * model.n_rho;
    let mut matrix = RMat::zeros(n2, n2);
    let mut e = RVec::zeros(n2);
    for i in 0..n2 {
        e[i] = 1.0;
        let col = hvec(&hess_apply_cached(&g, &z, &eval, &hmat(&e)?)?);
        matrix.set_column(i, &col);
        e[i] = 0.0;
    }
    Ok(HessianRep { matrix })
}

/// Positive-definiteness-preserving regularization of a map pair on the
/// full (unreduced) space: Ĝ = V_δ†G(·)V_δ with range(V_δ) = range(G(I)),
/// and Ẑ = V_σ†Z(G(·))V_σ with range(V_σ) = range(Z(G(I))). The entropies of
/// the regularized pair agree with the originals on ρ ≻ 0.
#[derive(Debug, Clone)]
pub struct UnreducedObjective {
    g_reg: CpMap,
    z_reg: CpMap,
}

impl UnreducedObjective {
    pub fn new(instance: &ProblemInstance, rank_tol: f64) -> Result<Self> {
        let g = &instance.g_map;
        let v_delta =
            crate::fr::minimal_face_of_image(&CpMap::Kraus(g.clone()), rank_tol)?;
        let g_reg = crate::fr::rotate_g(g, &v_delta, rank_tol)?;
        let z_v = instance.z_map.as_kraus().conjugate_input(&v_delta)?;
        let v_sigma = crate::fr::minimal_face_of_image(&CpMap::Kraus(z_v.clone()), rank_tol)?;
        let z_uv = crate::fr::rotate_z(&z_v, &v_sigma, rank_tol)?;
        let z_reg = CpMap::compose(CpMap::Kraus(z_uv), CpMap::Kraus(g_reg.clone()))?;
        Ok(Self { g_reg: CpMap::Kraus(g_reg), z_reg })
    }

    /// Original-objective value and gradient at ρ_full ≻ 0, computed with
    /// positive definite matrix-log arguments only.
    pub fn eval(&self, rho_full: &HermitianMatrix) -> Result<(f64, HermitianMatrix)> {
        let e = evaluate(&self.g_reg, &self.z_reg, rho_full)?;
        Ok((e.value, e.gradient))
    }
}

/// Original-space objective value/gradient (Cor. of the FR construction:
/// forms PD-preserving maps without reducing the feasible set).
pub fn eval_unreduced(
    instance: &ProblemInstance,
    rho_full: &HermitianMatrix,
    rank_tol: f64,
) -> Result<(f64, HermitianMatrix)> {
    UnreducedObjective::new(instance, rank_tol)?.eval(rho_full)
}

/// Matrix-form Hessian of one CP-map entropy term,
/// A†(Ū⊗U)Diag(vec h⁽¹⁾)(Ū⊗U)†A, assembled for cross-checking the action
/// path. Kept test-friendly rather than production-fast.
pub fn entropy_term_hessian_matrix(map: &CpMap, rho: &HermitianMatrix) -> Result<RMat> {
    let img = map.apply(rho)?;
    let d = eigh(&img)?;
    if d.eigenvalues[d.dim() - 1] <= 0.0 {
        return Err(Error::NotPositiveDefinite("entropy term image".into()));
    }
    let dd = divided_difference_matrix(&d.eigenvalues)?;
    let n2 = map.in_dim() * map.in_dim();
    let mut out = RMat::zeros(n2, n2);
    let mut e = RVec::zeros(n2);
    for i in 0..n2 {
        e[i] = 1.0;
        let x = map.apply(&hmat(&e)?)?;
        let mut inner = d.unitary.adjoint() * x.as_matrix() * &d.unitary;
        for r in 0..d.dim() {
            for c in 0..d.dim() {
                inner[(r, c)] *= C64::new(dd[(r, c)], 0.0);
            }
        }
        let back = HermitianMatrix::symmetrize(&d.unitary * inner * d.unitary.adjoint());
        out.set_column(i, &hvec(&map.adjoint_apply(&back)?));
        e[i] = 0.0;
    }
    Ok(out)
}
