//! Projected Gauss-Newton primal-dual interior-point method.
//!
//! The perturbed optimality conditions
//!
//! ```text
//! F_d = ∇f(ρ) + Γ_V†(y) − Z          (Hermitian)
//! F_p = 𝒩†(v) + ρ̂ − ρ                (Hermitian, nullspace representation)
//! F_c = Zρ − μI                       (general complex — overdetermined)
//! ```
//!
//! are attacked by least squares on the second projected system: after
//! eliminating Δρ and ΔZ through the two linear blocks, the unknown
//! (Δv, Δy) of size n_ρ² solves
//!
//! ```text
//! Z𝒩†(Δv) + ∇²f(ρ)[𝒩†(Δv)]ρ + Γ_V†(Δy)ρ
//!     = −F_c − Z F_p − (F_d + ∇²f(ρ)[F_p]) ρ
//! ```
//!
//! in the least-squares sense, assembled column by column in Cvec
//! coordinates, diagonally preconditioned, and solved by dense QR. Unit
//! primal steps hand over exact linear feasibility for the rest of the run.

use serde::Serialize;

use crate::bounds::{self, BoundsCertificate, ConstraintProjector};
use crate::error::{Error, Result};
use crate::fr::ReducedModel;
use crate::hermitian::{
    cvec, eigh, hmat, hvec, CMat, HermitianMatrix, RMat, RVec, C64,
};
use crate::maps::CpMap;
use crate::objective::{self, ObjectiveEvaluation};

/// Solver knobs. Defaults follow the reference configuration: ε = 1e-12,
/// 80 iterations, η = 0.5, fraction-to-boundary τ = 0.99, μ₀ = 1.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub eta: f64,
    pub tau: f64,
    pub mu0: f64,
    pub rank_tol: f64,
    pub verbosity: u8,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-12,
            max_iters: 80,
            eta: 0.5,
            tau: 0.99,
            mu0: 1.0,
            rank_tol: 1e-10,
            verbosity: 0,
        }
    }
}

/// Affine parametrization of {ρ : Γ_V(ρ) = γ_V}: ρ = ρ̂ + Σᵢ vᵢNᵢ with the
/// Nᵢ a basis of nul(Γ_V) built from a column-pivoted [B E] split of the
/// constraint matrix, and ρ̂ the least-norm particular solution.
#[derive(Debug, Clone)]
pub struct NullspaceRep {
    pub basis: Vec<HermitianMatrix>,
    pub particular: HermitianMatrix,
    pub column_permutation: Vec<usize>,
    /// hvec images of the basis elements, one column per element.
    basis_cols: RMat,
}

impl NullspaceRep {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// 𝒩†(w) = Σᵢ wᵢ Nᵢ.
    pub fn expand(&self, w: &RVec) -> Result<HermitianMatrix> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "nullspace expand: {} coords vs dim {}",
                w.len(),
                self.dim()
            )));
        }
        hmat(&(&self.basis_cols * w))
    }

    /// 𝒩(X): coordinates of the projection pairing, ⟨Nᵢ, X⟩.
    pub fn contract(&self, x: &HermitianMatrix) -> RVec {
        self.basis_cols.transpose() * hvec(x)
    }
}

/// Builds the nullspace representation for a reduced model.
///
/// The constraint matrix M (m_V × n_ρ²) is split as M·P = [B E] with a
/// column permutation chosen by pivoted elimination so B is well
/// conditioned; the basis vectors are the columns of P·[B⁻¹E; −I] mapped
/// back through hmat.
pub fn build_nullspace(model: &ReducedModel) -> Result<NullspaceRep> {
    let m_v = model.m_v();
    let n2 = model.n_rho * model.n_rho;
    let m = &model.constraint_rows;

    let piv = m.clone().col_piv_qr();
    // Read the pivot order off an index vector: entry `pos` ends up holding
    // the original column index placed at position `pos`.
    let mut index_row = nalgebra::RowDVector::<usize>::from_fn(n2, |_, j| j);
    piv.p().permute_columns(&mut index_row);
    let column_permutation: Vec<usize> = index_row.iter().copied().collect();

    let b = gather_columns(m, &column_permutation[..m_v]);
    let e = gather_columns(m, &column_permutation[m_v..]);
    let b_qr = b.clone().qr();
    for i in 0..m_v {
        if b_qr.r()[(i, i)].abs() < 1e-12 {
            return Err(Error::FacialReduction(
                "constraint matrix rank-deficient in nullspace construction".into(),
            ));
        }
    }
    // X = B⁻¹E, column by column.
    let qt_e = b_qr.q().transpose() * &e;
    let mut x = RMat::zeros(m_v, n2 - m_v);
    for j in 0..(n2 - m_v) {
        let col = qt_e.column(j).into_owned();
        let sol = b_qr
            .r()
            .solve_upper_triangular(&col)
            .ok_or_else(|| Error::Numerical("singular B block".into()))?;
        x.set_column(j, &sol);
    }

    let mut basis_cols = RMat::zeros(n2, n2 - m_v);
    for j in 0..(n2 - m_v) {
        let mut w = RVec::zeros(n2);
        for i in 0..m_v {
            w[column_permutation[i]] = x[(i, j)];
        }
        w[column_permutation[m_v + j]] = -1.0;
        basis_cols.set_column(j, &w);
    }
    let basis: Vec<HermitianMatrix> = (0..(n2 - m_v))
        .map(|j| hmat(&basis_cols.column(j).into_owned()))
        .collect::<Result<_>>()?;

    // Least-norm particular solution with one round of refinement.
    let projector = ConstraintProjector::new(model)?;
    let mut part = projector.least_norm_hvec(&model.gamma_v)?;
    part = projector.refine(model, &part, &model.gamma_v)?;
    let particular = hmat(&part)?;

    // Basis elements must annihilate the constraints.
    for n_i in &basis {
        let res = model.apply_constraints(n_i).amax();
        if res > 1e-11 {
            return Err(Error::Numerical(format!(
                "nullspace basis violates constraints: {res:.3e}"
            )));
        }
    }
    let res = (model.apply_constraints(&particular) - &model.gamma_v).amax();
    if res > 1e-12 {
        return Err(Error::Numerical(format!(
            "particular solution infeasible: {res:.3e}"
        )));
    }

    Ok(NullspaceRep { basis, particular, column_permutation, basis_cols })
}

fn gather_columns(m: &RMat, idx: &[usize]) -> RMat {
    let mut out = RMat::zeros(m.nrows(), idx.len());
    for (j, &c) in idx.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}

/// Residuals of the perturbed optimality conditions at a state.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub dual: HermitianMatrix,
    pub primal: HermitianMatrix,
    pub complementarity: CMat,
}

/// Interior-point state. ρ and Z stay strictly positive definite at every
/// accepted iterate.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub rho: HermitianMatrix,
    pub v: RVec,
    pub y: RVec,
    pub z: HermitianMatrix,
    pub mu: f64,
    pub iteration: usize,
    pub unit_step_taken: bool,
}

/// Per-iteration trace record.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    pub norm_fd: f64,
    pub norm_fp: f64,
    pub norm_fc: f64,
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub best_ub: Option<f64>,
    pub best_lb: Option<f64>,
    pub relstopgap: f64,
    /// ‖Γ_V(ρ) − γ_V‖∞ at the iterate (exactness certificate for unit steps).
    pub primal_infeas: f64,
    pub unit_step_taken: bool,
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GapMet,
    MaxIters,
    NumericalFailure,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminationReason::GapMet => write!(f, "gap_met"),
            TerminationReason::MaxIters => write!(f, "max_iters"),
            TerminationReason::NumericalFailure => write!(f, "numerical_failure"),
        }
    }
}

/// Solve outcome: certified bounds, the states achieving them, trace.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub best_upper: f64,
    pub best_lower: f64,
    pub lower_valid: bool,
    /// Feasible (projected) state achieving `best_upper`.
    pub rho_opt: HermitianMatrix,
    /// Dual multipliers certifying `best_lower` (post identity-shift).
    pub y_opt: RVec,
    /// Certified dual slack matrix.
    pub z_opt: HermitianMatrix,
    pub iterations: usize,
    pub termination: TerminationReason,
    pub relstopgap: f64,
    pub history: Vec<IterationRecord>,
    pub diagnostic: Option<String>,
}

impl SolveResult {
    pub fn rel_gap(&self) -> f64 {
        if self.lower_valid && self.best_upper.is_finite() {
            bounds::rel_gap(self.best_upper, self.best_lower)
        } else {
            f64::INFINITY
        }
    }
}

/// Residuals at the current state (gradient supplied by the caller's cached
/// evaluation).
pub fn residuals(
    model: &ReducedModel,
    nullrep: &NullspaceRep,
    state: &SolverState,
    gradient: &HermitianMatrix,
) -> Result<Residuals> {
    let dual = gradient.add(&model.constraints_adjoint(&state.y)).sub(&state.z);
    let primal = nullrep.expand(&state.v)?.add(&nullrep.particular).sub(&state.rho);
    let mut compl = state.z.as_matrix() * state.rho.as_matrix();
    for i in 0..model.n_rho {
        compl[(i, i)] -= C64::new(state.mu, 0.0);
    }
    Ok(Residuals { dual, primal, complementarity: compl })
}

/// Assembles the projected GN least-squares system (coefficients and RHS)
/// in Cvec coordinates: 2n_ρ² rows, n_ρ² unknowns (Δv then Δy).
pub fn build_gn_system(
    model: &ReducedModel,
    nullrep: &NullspaceRep,
    state: &SolverState,
    eval: &ObjectiveEvaluation,
    res: &Residuals,
) -> Result<(RMat, RVec)> {
    let n = model.n_rho;
    let n2 = n * n;
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let mut cols = RMat::zeros(2 * n2, n2);

    for (j, n_j) in nullrep.basis.iter().enumerate() {
        let hess = objective::hess_apply_cached(&g, &z_map, eval, n_j)?;
        let term = state.z.as_matrix() * n_j.as_matrix()
            + hess.as_matrix() * state.rho.as_matrix();
        cols.set_column(j, &cvec(&term));
    }
    for (j, gamma_j) in model.gamma_ops.iter().enumerate() {
        let term = gamma_j.as_matrix() * state.rho.as_matrix();
        cols.set_column(nullrep.dim() + j, &cvec(&term));
    }

    let hess_fp = objective::hess_apply_cached(&g, &z_map, eval, &res.primal)?;
    let rhs_mat = &res.complementarity
        + state.z.as_matrix() * res.primal.as_matrix()
        + (res.dual.as_matrix() + hess_fp.as_matrix()) * state.rho.as_matrix();
    let rhs = -cvec(&rhs_mat);
    Ok((cols, rhs))
}

/// Diagonal (column-norm) preconditioning followed by a dense QR
/// least-squares solve; falls back to an SVD minimum-norm solution when the
/// scaled system is numerically rank deficient.
pub fn precondition_and_solve(cols: &RMat, rhs: &RVec) -> Result<(RVec, bool)> {
    let n = cols.ncols();
    let mut d = RVec::zeros(n);
    for j in 0..n {
        d[j] = cols.column(j).norm();
    }
    let active: Vec<usize> = (0..n).filter(|&j| d[j] > 0.0).collect();
    let mut scaled = RMat::zeros(cols.nrows(), active.len());
    for (jj, &j) in active.iter().enumerate() {
        scaled.set_column(jj, &(cols.column(j) / d[j]));
    }

    let qr = scaled.clone().qr();
    let qtb = qr.q().transpose() * rhs;
    let r = qr.r();
    let mut degenerate = false;
    let mut rmin = f64::INFINITY;
    let mut rmax: f64 = 0.0;
    for i in 0..active.len() {
        rmin = rmin.min(r[(i, i)].abs());
        rmax = rmax.max(r[(i, i)].abs());
    }
    let sol_active = if rmin > 1e-13 * rmax.max(1.0) {
        r.solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?
    } else {
        degenerate = true;
        let svd = scaled.svd(true, true);
        svd.solve(rhs, 1e-13 * rmax.max(1.0))
            .map_err(|e| Error::Numerical(format!("svd least squares: {e}")))?
    };

    let mut sol = RVec::zeros(n);
    for (jj, &j) in active.iter().enumerate() {
        sol[j] = sol_active[jj] / d[j];
    }
    Ok((sol, degenerate))
}

/// Recovers (Δρ, ΔZ) from the reduced direction (Δv, Δy):
/// Δρ = F_p + 𝒩†(Δv) and ΔZ = F_d + ∇²f(ρ)[Δρ] + Γ_V†(Δy).
pub fn back_substitute(
    model: &ReducedModel,
    nullrep: &NullspaceRep,
    eval: &ObjectiveEvaluation,
    res: &Residuals,
    dv: &RVec,
    dy: &RVec,
) -> Result<(HermitianMatrix, HermitianMatrix)> {
    let d_rho = res.primal.add(&nullrep.expand(dv)?);
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let hess = objective::hess_apply_cached(&g, &z_map, eval, &d_rho)?;
    let d_z = res.dual.add(&hess).add(&model.constraints_adjoint(dy));
    Ok((d_rho, d_z))
}

/// Largest step keeping M + αΔ positive definite (∞ when Δ pushes inward
/// everywhere), via the Cholesky-whitened pencil.
fn step_to_boundary(m: &HermitianMatrix, delta: &HermitianMatrix) -> Result<f64> {
    let l = crate::hermitian::cholesky_factor(m)
        .ok_or_else(|| Error::NotPositiveDefinite("state left the cone".into()))?;
    let y1 = l
        .clone()
        .solve_lower_triangular(delta.as_matrix())
        .ok_or_else(|| Error::Numerical("triangular solve in step length".into()))?;
    let y2 = l
        .solve_lower_triangular(&y1.adjoint())
        .ok_or_else(|| Error::Numerical("triangular solve in step length".into()))?;
    let w = HermitianMatrix::symmetrize(y2);
    let lam_min = eigh(&w)?.eigenvalues[w.dim() - 1];
    if lam_min >= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-1.0 / lam_min)
    }
}

fn is_pd(m: &HermitianMatrix) -> bool {
    crate::hermitian::cholesky_factor(m).is_some()
}

/// Step-length policy, per variable: a unit step whenever it keeps the
/// cone (always the first candidate — Newton steps drive the dual residual
/// quadratically and hand over exact primal feasibility), otherwise the
/// quadratic-model minimizer α* = −⟨∇f,Δρ⟩/⟨Δρ,∇²f Δρ⟩ clamped to the
/// fraction-to-boundary cap, with plain 0.8-backtracking as the safety net.
/// Under this candidate order a step above one is never selected: whenever
/// the boundary would permit one, the unit step already qualified.
pub fn step_length(
    state: &SolverState,
    d_rho: &HermitianMatrix,
    d_z: &HermitianMatrix,
    eval: &ObjectiveEvaluation,
    model: &ReducedModel,
    tau: f64,
) -> Result<(f64, f64)> {
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let curvature = crate::hermitian::inner_h(
        d_rho,
        &objective::hess_apply_cached(&g, &z_map, eval, d_rho)?,
    );
    let slope = crate::hermitian::inner_h(&eval.gradient, d_rho);
    // The quadratic model of f only caps the step when it actually has an
    // interior minimizer along the direction; the GN direction may properly
    // increase f while reducing the optimality residual.
    let alpha_quad =
        if curvature > 1e-14 && slope < 0.0 { -slope / curvature } else { f64::INFINITY };

    let min_step = 1e-12;
    let mut alpha_p = if is_pd(&state.rho.add(d_rho)) {
        1.0
    } else {
        let theta_p = tau * step_to_boundary(&state.rho, d_rho)?;
        let mut a = alpha_quad.min(theta_p).min(1.0);
        while a > min_step && !is_pd(&state.rho.add(&d_rho.scale(a))) {
            a *= 0.8;
        }
        a
    };
    let mut alpha_d = if is_pd(&state.z.add(d_z)) {
        1.0
    } else {
        let theta_d = tau * step_to_boundary(&state.z, d_z)?;
        let mut a = theta_d.min(1.0);
        while a > min_step && !is_pd(&state.z.add(&d_z.scale(a))) {
            a *= 0.8;
        }
        a
    };
    if alpha_p <= min_step || alpha_d <= min_step {
        return Err(Error::Numerical("no positive step length keeps the iterates interior".into()));
    }
    // Keep the pair together when both were boundary-limited; a large
    // mismatch leaves a persistent (α_p−α_d)·∇²f(Δρ) term in the new dual
    // residual.
    if alpha_p < 1.0 && alpha_d < 1.0 {
        let a = alpha_p.min(alpha_d);
        alpha_p = a;
        alpha_d = a;
    }
    Ok((alpha_p, alpha_d))
}

fn pd_inverse(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    let d = eigh(m)?;
    if d.eigenvalues[m.dim() - 1] <= 0.0 {
        return Err(Error::NotPositiveDefinite("inverse of non-PD matrix".into()));
    }
    Ok(d.apply_spectral_fn(|x| 1.0 / x))
}

/// Initial interior point: the particular solution clamped to the PD cone
/// and re-fit to the affine manifold (a few alternating rounds); if the
/// refits keep leaving the cone, blend toward I/n_ρ by bisection on the
/// smallest eigenvalue margin. Feasibility of the start is not required —
/// this is an infeasible-start method.
fn initial_state(
    model: &ReducedModel,
    nullrep: &NullspaceRep,
    projector: &ConstraintProjector,
    cfg: &SolverConfig,
) -> Result<SolverState> {
    let n = model.n_rho;
    let part = &nullrep.particular;
    let scale = part.trace().abs().max(1.0) / n as f64;
    let floor = 1e-3 * scale;
    let lam_min = |h: &HermitianMatrix| -> Result<f64> {
        Ok(eigh(h)?.eigenvalues[n - 1])
    };

    let mut cand = part.clone();
    let mut rho0 = None;
    for _ in 0..5 {
        let d = eigh(&cand)?;
        let clamped = d.apply_spectral_fn(|x| x.max(floor));
        let f_p = model.apply_constraints(&clamped) - &model.gamma_v;
        let refit = clamped.sub(&hmat(&projector.least_norm_hvec(&f_p)?)?);
        if lam_min(&refit)? >= 0.5 * floor {
            rho0 = Some(refit);
            break;
        }
        cand = refit;
    }
    let rho0 = match rho0 {
        Some(r) => r,
        None => {
            // The refits keep leaving the cone, which happens when feasible
            // states carry eigenvalues far below the clamp floor. Blend
            // toward the scaled identity; the blend weight is floored well
            // above the bare positive-definiteness threshold because start
            // infeasibility is recovered exactly by the first unit step,
            // while a start hugging the cone boundary seeds Z₀ = μ₀ρ₀⁻¹
            // with huge norm and jams the fraction-to-boundary rule.
            let id = HermitianMatrix::identity(n).scale(scale);
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let blend = part.scale(1.0 - mid).add(&id.scale(mid));
                if lam_min(&blend)? >= 0.5 * floor {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t = hi.max(0.25);
            let blend = part.scale(1.0 - t).add(&id.scale(t));
            if lam_min(&blend)? <= 0.0 {
                return Err(Error::Numerical("no positive definite starting point found".into()));
            }
            blend
        }
    };

    let z0 = pd_inverse(&rho0)?.scale(cfg.mu0);
    // Warm-start the multipliers by least squares against the initial dual
    // residual; with y = 0 the first Gauss-Newton system has to absorb
    // ‖∇f(ρ₀) − Z₀‖ in one step, which can jam the fraction-to-boundary
    // rule on badly scaled instances.
    let g = CpMap::Kraus(model.g_hat.clone());
    let eval0 = objective::evaluate(&g, &model.z_hat, &rho0)?;
    let target = -hvec(&eval0.gradient.sub(&z0));
    let y0 = projector.fit_multipliers(&target)?;
    Ok(SolverState {
        rho: rho0,
        v: RVec::zeros(nullrep.dim()),
        y: y0,
        z: z0,
        mu: cfg.mu0,
        iteration: 0,
        unit_step_taken: false,
    })
}

fn stopgap_denominator(state: &SolverState, best_ub: Option<f64>, best_lb: Option<f64>) -> f64 {
    let norms = state.rho.norm() + state.z.norm();
    let bounds_term = match (best_ub, best_lb) {
        (Some(u), Some(l)) => u.abs() + l.abs(),
        _ => f64::INFINITY,
    };
    1.0 + 0.5 * norms.min(bounds_term)
}

/// Runs the interior-point loop on a reduced model.
pub fn solve(model: &ReducedModel, cfg: &SolverConfig) -> Result<SolveResult> {
    let nullrep = build_nullspace(model)?;
    let projector = ConstraintProjector::new(model)?;
    let mut state = initial_state(model, &nullrep, &projector, cfg)?;

    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();

    let mut best_ub: Option<f64> = None;
    let mut best_lb: Option<f64> = None;
    let mut rho_opt = state.rho.clone();
    let mut best_cert: Option<BoundsCertificate> = None;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut relstopgap = f64::INFINITY;
    let mut termination = TerminationReason::MaxIters;
    let mut diagnostic = None;

    while state.iteration < cfg.max_iters {
        let eval = match objective::evaluate(&g, &z_map, &state.rho) {
            Ok(e) => e,
            Err(e) => {
                termination = TerminationReason::NumericalFailure;
                diagnostic = Some(format!("objective evaluation failed: {e}"));
                break;
            }
        };
        let res = residuals(model, &nullrep, &state, &eval.gradient)?;

        // Bounds from the current iterate.
        if let Some((ub, rho_feas)) = bounds::upper_bound_detailed(model, &state.rho, &projector)? {
            if best_ub.is_none_or(|b| ub < b) {
                best_ub = Some(ub);
                rho_opt = rho_feas;
            }
        }
        let cert = bounds::lower_bound_fr_with_grad(
            model,
            &state.rho,
            &eval.gradient,
            &state.y,
            best_ub.unwrap_or(f64::INFINITY),
        )?;
        if cert.lower_valid && best_lb.is_none_or(|b| cert.lower > b) {
            best_lb = Some(cert.lower);
            best_cert = Some(cert);
        }

        // Assemble the projected GN system; its RHS norm enters the
        // stopping measure.
        let (cols, rhs) = build_gn_system(model, &nullrep, &state, &eval, &res)?;
        let denom = stopgap_denominator(&state, best_ub, best_lb);
        let gap = match (best_ub, best_lb) {
            (Some(u), Some(l)) => u - l,
            _ => f64::INFINITY,
        };
        relstopgap = gap.max(rhs.norm()) / denom;
        let gap_small = gap / denom < cfg.epsilon;

        let primal_infeas = (model.apply_constraints(&state.rho) - &model.gamma_v).amax();
        if cfg.verbosity > 0 {
            eprintln!(
                "it {:3}  mu {:9.3e}  |Fd| {:9.3e}  |Fp| {:9.3e}  |Fc| {:9.3e}  ub {:?}  lb {:?}  relstopgap {:9.3e}",
                state.iteration,
                state.mu,
                res.dual.norm(),
                res.primal.norm(),
                res.complementarity.norm(),
                best_ub,
                best_lb,
                relstopgap
            );
        }

        if relstopgap < cfg.epsilon || gap_small {
            history.push(IterationRecord {
                iteration: state.iteration,
                mu: state.mu,
                norm_fd: res.dual.norm(),
                norm_fp: res.primal.norm(),
                norm_fc: res.complementarity.norm(),
                alpha_p: 0.0,
                alpha_d: 0.0,
                best_ub,
                best_lb,
                relstopgap,
                primal_infeas,
                unit_step_taken: state.unit_step_taken,
            });
            termination = TerminationReason::GapMet;
            break;
        }

        // Direction.
        let (sol, _degenerate) = precondition_and_solve(&cols, &rhs)?;
        let dv = RVec::from_fn(nullrep.dim(), |i, _| sol[i]);
        let dy = RVec::from_fn(model.m_v(), |i, _| sol[nullrep.dim() + i]);
        let (d_rho, d_z) = back_substitute(model, &nullrep, &eval, &res, &dv, &dy)?;

        let (alpha_p, alpha_d) = match step_length(&state, &d_rho, &d_z, &eval, model, cfg.tau) {
            Ok(a) => a,
            Err(e) => {
                termination = TerminationReason::NumericalFailure;
                diagnostic = Some(e.to_string());
                break;
            }
        };

        history.push(IterationRecord {
            iteration: state.iteration,
            mu: state.mu,
            norm_fd: res.dual.norm(),
            norm_fp: res.primal.norm(),
            norm_fc: res.complementarity.norm(),
            alpha_p,
            alpha_d,
            best_ub,
            best_lb,
            relstopgap,
            primal_infeas,
            unit_step_taken: state.unit_step_taken,
        });

        // Update. The residual part of Δρ = F_p + 𝒩†(Δv) is never weighted
        // beyond one: overshooting it would flip and amplify the primal
        // residual by (1−α), while in exact arithmetic F_p = 0 after the
        // first unit step and the two updates coincide.
        let null_part = nullrep.expand(&dv)?;
        state.rho = state
            .rho
            .add(&res.primal.scale(alpha_p.min(1.0)))
            .add(&null_part.scale(alpha_p));
        state.v += &dv * alpha_p;
        state.y += &dy * alpha_d;
        state.z = state.z.add(&d_z.scale(alpha_d));
        if alpha_p >= 1.0 {
            state.unit_step_taken = true;
        }
        state.mu = cfg.eta * crate::hermitian::inner_h(&state.rho, &state.z)
            / model.n_rho as f64;
        if state.mu <= 0.0 || !state.mu.is_finite() {
            termination = TerminationReason::NumericalFailure;
            diagnostic = Some(format!("barrier parameter left (0,∞): {}", state.mu));
            break;
        }
        state.iteration += 1;
    }

    let (y_opt, z_opt) = match &best_cert {
        Some(c) => (c.y_certified.clone(), c.z_bar.clone()),
        None => (state.y.clone(), state.z.clone()),
    };
    Ok(SolveResult {
        best_upper: best_ub.unwrap_or(f64::INFINITY),
        best_lower: best_lb.unwrap_or(f64::NEG_INFINITY),
        lower_valid: best_lb.is_some(),
        rho_opt,
        y_opt,
        z_opt,
        iterations: state.iteration,
        termination,
        relstopgap,
        history,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fr::{build_reduced_model, ProblemInstance};
    use crate::maps::{KrausMap, PinchingMap};

    /// n_ρ = 1 model with f(x) = x·ln 2 over {x = 1}.
    fn toy_1d() -> ReducedModel {
        let h = (0.5f64).sqrt();
        let k = CMat::from_row_slice(2, 1, &[C64::new(h, 0.0), C64::new(h, 0.0)]);
        let g = KrausMap::new(vec![k]).unwrap();
        let mut z1 = CMat::zeros(2, 2);
        let mut z2 = CMat::zeros(2, 2);
        z1[(0, 0)] = C64::new(1.0, 0.0);
        z2[(1, 1)] = C64::new(1.0, 0.0);
        let z = PinchingMap::new(vec![z1, z2]).unwrap();
        let inst = ProblemInstance::new(
            vec![(HermitianMatrix::identity(1), 1.0)],
            g,
            z,
            None,
            "toy-1d",
        )
        .unwrap();
        build_reduced_model(&inst, 1e-10).unwrap()
    }

    /// 2-dim state, BB84-flavoured: the key register pinching genuinely
    /// cuts across the two basis blocks, so f > 0 away from degeneracy.
    fn toy_2d() -> ReducedModel {
        let s = C64::new((0.5f64).sqrt(), 0.0);
        let h = C64::new(0.5, 0.0);
        // k-space layout (key r, basis c): index = 2r + c.
        let mut k1 = CMat::zeros(4, 2); // Z basis, key = measured bit
        k1[(0, 0)] = s;
        k1[(2, 1)] = s;
        let mut k2 = CMat::zeros(4, 2); // X basis
        k2[(1, 0)] = h;
        k2[(1, 1)] = h;
        k2[(3, 0)] = h;
        k2[(3, 1)] = -h;
        let g = KrausMap::new(vec![k1, k2]).unwrap();
        let mut z1 = CMat::zeros(4, 4);
        let mut z2 = CMat::zeros(4, 4);
        for c in 0..2 {
            z1[(c, c)] = C64::new(1.0, 0.0);
            z2[(c + 2, c + 2)] = C64::new(1.0, 0.0);
        }
        let z = PinchingMap::new(vec![z1, z2]).unwrap();
        // Second observable pushes the optimum away from the analytic
        // center so the solver has real work to do.
        let sx = HermitianMatrix::new(CMat::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ))
        .unwrap();
        let inst = ProblemInstance::new(
            vec![(HermitianMatrix::identity(2), 1.0), (sx, 0.3)],
            g,
            z,
            None,
            "toy-2d",
        )
        .unwrap();
        build_reduced_model(&inst, 1e-10).unwrap()
    }

    /// toy_2d without the second observable: a single trace constraint.
    fn toy_2d_trace_only() -> ReducedModel {
        let s = C64::new((0.5f64).sqrt(), 0.0);
        let h = C64::new(0.5, 0.0);
        let mut k1 = CMat::zeros(4, 2);
        k1[(0, 0)] = s;
        k1[(2, 1)] = s;
        let mut k2 = CMat::zeros(4, 2);
        k2[(1, 0)] = h;
        k2[(1, 1)] = h;
        k2[(3, 0)] = h;
        k2[(3, 1)] = -h;
        let g = KrausMap::new(vec![k1, k2]).unwrap();
        let mut z1 = CMat::zeros(4, 4);
        let mut z2 = CMat::zeros(4, 4);
        for c in 0..2 {
            z1[(c, c)] = C64::new(1.0, 0.0);
            z2[(c + 2, c + 2)] = C64::new(1.0, 0.0);
        }
        let z = PinchingMap::new(vec![z1, z2]).unwrap();
        let inst = ProblemInstance::new(
            vec![(HermitianMatrix::identity(2), 1.0)],
            g,
            z,
            None,
            "toy-2d-trace",
        )
        .unwrap();
        build_reduced_model(&inst, 1e-10).unwrap()
    }

    #[test]
    fn nullspace_single_trace_constraint() {
        let model = toy_2d_trace_only();
        let nullrep = build_nullspace(&model).unwrap();
        // n_ρ² − m_V = 4 − 1 = 3; least-norm particular solution is I/2.
        assert_eq!(nullrep.dim(), 3);
        let expected = HermitianMatrix::identity(2).scale(0.5);
        assert!((nullrep.particular.as_matrix() - expected.as_matrix()).norm() < 1e-12);

        // Affine parametrization stays on the manifold.
        let mut rng_state = 0x12345u64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state as f64 / u64::MAX as f64) - 0.5
        };
        for _ in 0..20 {
            let w = RVec::from_fn(3, |_, _| next());
            let rho = nullrep.particular.add(&nullrep.expand(&w).unwrap());
            let res = (model.apply_constraints(&rho) - &model.gamma_v).amax();
            assert!(res <= 1e-11);
        }
    }

    #[test]
    fn toy_1d_solves_to_ln2() {
        let model = toy_1d();
        let result = solve(&model, &SolverConfig::default()).unwrap();
        assert_eq!(result.termination, TerminationReason::GapMet);
        assert!((result.best_upper - std::f64::consts::LN_2).abs() < 1e-10);
        assert!(result.lower_valid);
        assert!((result.best_lower - std::f64::consts::LN_2).abs() < 1e-10);
        assert!(result.rel_gap() < 1e-9);
    }

    #[test]
    fn toy_2d_converges_with_interior_iterates() {
        let model = toy_2d();
        let cfg = SolverConfig::default();
        let result = solve(&model, &cfg).unwrap();
        assert_eq!(result.termination, TerminationReason::GapMet);
        assert!(result.rel_gap() < 1e-9, "gap {}", result.rel_gap());
        // Bound soundness across the whole run.
        for rec in &result.history {
            if let (Some(u), Some(l)) = (rec.best_ub, rec.best_lb) {
                assert!(l <= u + 1e-12 * (1.0 + u.abs()));
            }
        }
        // μ strictly decreases after the first iteration.
        for w in result.history.windows(2) {
            if w[1].iteration > 1 && w[1].alpha_p > 0.0 {
                assert!(w[1].mu < w[0].mu);
            }
        }
    }

    #[test]
    fn exact_primal_feasibility_after_unit_step() {
        let model = toy_2d();
        let result = solve(&model, &SolverConfig::default()).unwrap();
        let first_unit = result.history.iter().find(|r| r.unit_step_taken).map(|r| r.iteration);
        let first_unit = first_unit.expect("unit step never taken");
        for rec in &result.history {
            if rec.iteration > first_unit {
                assert!(
                    rec.primal_infeas <= 1e-12,
                    "iteration {}: primal infeasibility {:.3e}",
                    rec.iteration,
                    rec.primal_infeas
                );
            }
        }
    }

    #[test]
    fn determinism_bitwise() {
        let model = toy_2d();
        let a = solve(&model, &SolverConfig::default()).unwrap();
        let b = solve(&model, &SolverConfig::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.best_upper.to_bits(), b.best_upper.to_bits());
        assert_eq!(a.best_lower.to_bits(), b.best_lower.to_bits());
        for (ra, rb) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(ra.mu.to_bits(), rb.mu.to_bits());
            assert_eq!(ra.norm_fc.to_bits(), rb.norm_fc.to_bits());
        }
    }

    #[test]
    fn preconditioned_solve_handles_orthonormal_and_zero_columns() {
        // Orthonormal columns: preconditioning is a no-op up to scaling.
        let q = RMat::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.77).sin())
            .qr()
            .q();
        let rhs = RVec::from_fn(6, |i, _| (i as f64 * 0.3).cos());
        let (sol, degen) = precondition_and_solve(&q, &rhs).unwrap();
        assert!(!degen);
        let direct = q.transpose() * &rhs;
        assert!((sol - direct).norm() < 1e-12);

        // A zero column fixes its coordinate to zero.
        let mut with_zero = RMat::zeros(6, 4);
        with_zero.view_mut((0, 0), (6, 3)).copy_from(&q);
        let (sol, _) = precondition_and_solve(&with_zero, &rhs).unwrap();
        assert_eq!(sol[3], 0.0);
    }

    #[test]
    fn residuals_at_central_point_vanish() {
        // 1-d toy: the μ-center solves Z = μ/x with x = 1 feasible, and
        // F_d = 0 fixes y = −(∇f − Z).
        let model = toy_1d();
        let nullrep = build_nullspace(&model).unwrap();
        let mu = 0.37;
        let grad_at_one = std::f64::consts::LN_2;
        let state = SolverState {
            rho: HermitianMatrix::identity(1),
            v: RVec::zeros(0),
            y: RVec::from_vec(vec![mu - grad_at_one]),
            z: HermitianMatrix::identity(1).scale(mu),
            mu,
            iteration: 0,
            unit_step_taken: false,
        };
        let eval = objective::evaluate(
            &CpMap::Kraus(model.g_hat.clone()),
            &model.z_hat,
            &state.rho,
        )
        .unwrap();
        let res = residuals(&model, &nullrep, &state, &eval.gradient).unwrap();
        assert!(res.dual.norm() < 1e-12);
        assert!(res.primal.norm() < 1e-12);
        assert!(res.complementarity.norm() < 1e-12);
    }

    #[test]
    fn back_substitution_of_zero_direction_reflects_residuals() {
        // Δv = Δy = 0 at a residual-free state gives Δρ = ΔZ = 0.
        let model = toy_1d();
        let nullrep = build_nullspace(&model).unwrap();
        let mu = 0.25;
        let state = SolverState {
            rho: HermitianMatrix::identity(1),
            v: RVec::zeros(0),
            y: RVec::from_vec(vec![mu - std::f64::consts::LN_2]),
            z: HermitianMatrix::identity(1).scale(mu),
            mu,
            iteration: 0,
            unit_step_taken: false,
        };
        let eval = objective::evaluate(
            &CpMap::Kraus(model.g_hat.clone()),
            &model.z_hat,
            &state.rho,
        )
        .unwrap();
        let res = residuals(&model, &nullrep, &state, &eval.gradient).unwrap();
        let (d_rho, d_z) = back_substitute(
            &model,
            &nullrep,
            &eval,
            &res,
            &RVec::zeros(0),
            &RVec::zeros(1),
        )
        .unwrap();
        assert!(d_rho.norm() < 1e-12);
        assert!(d_z.norm() < 1e-12);
    }

    #[test]
    fn quadratic_model_minimizer_is_exact() {
        // On the quadratic model q(α) = f + α⟨∇f,Δ⟩ + ½α²⟨Δ,∇²fΔ⟩ the
        // closed-form step −slope/curvature beats every grid point.
        let model = toy_2d();
        let rho = HermitianMatrix::from_diagonal(&RVec::from_vec(vec![0.75, 0.25]));
        let eval = objective::evaluate(
            &CpMap::Kraus(model.g_hat.clone()),
            &model.z_hat,
            &rho,
        )
        .unwrap();
        let dir = grad_descent_direction(&eval);
        let slope = crate::hermitian::inner_h(&eval.gradient, &dir);
        let curv = crate::hermitian::inner_h(
            &dir,
            &objective::hess_apply_cached(
                &CpMap::Kraus(model.g_hat.clone()),
                &model.z_hat,
                &eval,
                &dir,
            )
            .unwrap(),
        );
        assert!(slope < 0.0 && curv > 0.0);
        let alpha_star = -slope / curv;
        let q = |a: f64| eval.value + a * slope + 0.5 * a * a * curv;
        for k in 0..200 {
            let a = alpha_star * (0.5 + k as f64 / 100.0);
            assert!(q(alpha_star) <= q(a) + 1e-14 * q(a).abs().max(1.0));
        }
    }

    fn grad_descent_direction(eval: &objective::ObjectiveEvaluation) -> HermitianMatrix {
        eval.gradient.scale(-1.0 / eval.gradient.norm())
    }

    #[test]
    fn step_length_examples() {
        let model = toy_2d();
        let nullrep = build_nullspace(&model).unwrap();
        let state = SolverState {
            rho: HermitianMatrix::identity(2).scale(0.5),
            v: RVec::zeros(nullrep.dim()),
            y: RVec::zeros(1),
            z: HermitianMatrix::identity(2),
            mu: 1.0,
            iteration: 0,
            unit_step_taken: false,
        };
        let eval = objective::evaluate(
            &CpMap::Kraus(model.g_hat.clone()),
            &model.z_hat,
            &state.rho,
        )
        .unwrap();

        // Δρ = 0: primal step 1.
        let zero = HermitianMatrix::zeros(2);
        let (ap, _) = step_length(&state, &zero, &zero, &eval, &model, 0.99).unwrap();
        assert_eq!(ap, 1.0);

        // ρ = I/2, Δρ = −I: boundary at α = 1/2, fraction-to-boundary 0.99.
        let neg = HermitianMatrix::identity(2).scale(-1.0);
        let (ap, _) = step_length(&state, &neg, &zero, &eval, &model, 0.99).unwrap();
        assert!(ap <= 0.495 + 1e-12, "α_p = {ap}");
    }
}
