//! Solver-level behavioral checks that go beyond the acceptance gate: the
//! first projected direction as a cross-check oracle, the descent property
//! of the Gauss-Newton direction, bound monotonicity, preconditioning
//! conditioning, and bitwise determinism.

use keyrate_core::fr::build_reduced_model;
use keyrate_core::hermitian::{cvec, eigh, hvec, CMat, HermitianMatrix, RMat, RVec, C64};
use keyrate_core::maps::CpMap;
use keyrate_core::objective;
use keyrate_core::protocols::ProtocolParams;
use keyrate_core::solver::{
    back_substitute, build_gn_system, build_nullspace, precondition_and_solve, residuals, solve,
    SolverConfig, SolverState, TerminationReason,
};

fn pm_model() -> keyrate_core::fr::ReducedModel {
    let gen = ProtocolParams::PmBB84 { p_z: 0.5, q: 0.05 }.generate().unwrap();
    build_reduced_model(&gen.instance, 1e-10).unwrap()
}

/// Walks a few interior-point iterations, returning the states visited.
fn record_states(model: &keyrate_core::fr::ReducedModel, count: usize) -> Vec<SolverState> {
    let nullrep = build_nullspace(model).unwrap();
    let projector = keyrate_core::bounds::ConstraintProjector::new(model).unwrap();
    // Reconstruct the solver's own start: particular solution clamped and
    // refit (duplicating initial_state keeps this test self-contained).
    let n = model.n_rho;
    let d = eigh(&nullrep.particular).unwrap();
    let floor = 1e-3 / n as f64;
    let clamped = d.apply_spectral_fn(|x| x.max(floor));
    let f_p = model.apply_constraints(&clamped) - &model.gamma_v;
    let corr = projector.least_norm_hvec(&f_p).unwrap();
    let mut rho0 = clamped.sub(&keyrate_core::hermitian::hmat(&corr).unwrap());
    // Fall back to an identity blend when the refit leaves the cone.
    if eigh(&rho0).unwrap().eigenvalues[n - 1] <= floor * 0.1 {
        rho0 = rho0.scale(0.3).add(&HermitianMatrix::identity(n).scale(0.7 / n as f64));
    }
    if eigh(&rho0).unwrap().eigenvalues[n - 1] <= 0.0 {
        rho0 = HermitianMatrix::identity(n).scale(1.0 / n as f64);
    }
    let z0 = eigh(&rho0).unwrap().apply_spectral_fn(|x| 1.0 / x);
    let mut state = SolverState {
        rho: rho0,
        v: RVec::zeros(nullrep.dim()),
        y: RVec::zeros(model.m_v()),
        z: z0,
        mu: 1.0,
        iteration: 0,
        unit_step_taken: false,
    };
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let mut out = vec![state.clone()];
    for _ in 0..count {
        let eval = objective::evaluate(&g, &z_map, &state.rho).unwrap();
        let res = residuals(model, &nullrep, &state, &eval.gradient).unwrap();
        let (cols, rhs) = build_gn_system(model, &nullrep, &state, &eval, &res).unwrap();
        let (sol, _) = precondition_and_solve(&cols, &rhs).unwrap();
        let dv = RVec::from_fn(nullrep.dim(), |i, _| sol[i]);
        let dy = RVec::from_fn(model.m_v(), |i, _| sol[nullrep.dim() + i]);
        let (d_rho, d_z) = back_substitute(model, &nullrep, &eval, &res, &dv, &dy).unwrap();
        let (ap, ad) =
            keyrate_core::solver::step_length(&state, &d_rho, &d_z, &eval, model, 0.99).unwrap();
        let null_part = nullrep.expand(&dv).unwrap();
        state.rho = state.rho.add(&res.primal.scale(ap.min(1.0))).add(&null_part.scale(ap));
        state.v += &dv * ap;
        state.y += &dy * ad;
        state.z = state.z.add(&d_z.scale(ad));
        if ap >= 1.0 {
            state.unit_step_taken = true;
        }
        state.mu = 0.5 * keyrate_core::hermitian::inner_h(&state.rho, &state.z) / n as f64;
        state.iteration += 1;
        out.push(state.clone());
    }
    out
}

/// ½‖F_μ‖² of the full perturbed optimality system at a displaced state.
fn merit(
    model: &keyrate_core::fr::ReducedModel,
    nullrep: &keyrate_core::solver::NullspaceRep,
    state: &SolverState,
) -> Option<f64> {
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let eval = objective::evaluate(&g, &z_map, &state.rho).ok()?;
    let res = residuals(model, nullrep, state, &eval.gradient).ok()?;
    Some(0.5
        * (res.dual.norm().powi(2)
            + res.primal.norm().powi(2)
            + res.complementarity.norm().powi(2)))
}

#[test]
fn first_projection_cross_check() {
    // The production direction comes from the second projected system
    // (unknowns Δv, Δy). The first projected system (unknowns Δρ, Δy)
    // includes the primal block in its least-squares residual; the second
    // direction must solve that block exactly, and the first system's
    // optimal residual can only be at least as small on the remaining
    // blocks.
    let model = pm_model();
    let nullrep = build_nullspace(&model).unwrap();
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let n = model.n_rho;
    let n2 = n * n;
    let m_v = model.m_v();

    for state in record_states(&model, 4) {
        let eval = objective::evaluate(&g, &z_map, &state.rho).unwrap();
        let res = residuals(&model, &nullrep, &state, &eval.gradient).unwrap();
        let (cols, rhs) = build_gn_system(&model, &nullrep, &state, &eval, &res).unwrap();
        let (sol, _) = precondition_and_solve(&cols, &rhs).unwrap();
        let dv = RVec::from_fn(nullrep.dim(), |i, _| sol[i]);
        let dy = RVec::from_fn(m_v, |i, _| sol[nullrep.dim() + i]);
        let (d_rho2, _) = back_substitute(&model, &nullrep, &eval, &res, &dv, &dy).unwrap();

        // Exactness of the primal block under the second direction:
        // Γ_V(Δρ) must cancel the raw primal residual Γ_V(ρ) − γ_V.
        let raw_infeas = model.apply_constraints(&state.rho) - &model.gamma_v;
        let block = model.apply_constraints(&d_rho2) + &raw_infeas;
        assert!(block.amax() <= 1e-11, "primal block residual {:.3e}", block.amax());

        // First projected system, assembled in (hvec(Δρ); Δy) coordinates:
        // rows = [Γ_V(Δρ) + F_p^orig; Cvec(ZΔρ + (∇²f Δρ + Γ_V†Δy)ρ) + ...].
        let rows = m_v + 2 * n2;
        let unknowns = n2 + m_v;
        let mut a = RMat::zeros(rows, unknowns);
        let mut e = RVec::zeros(n2);
        for c in 0..n2 {
            e[c] = 1.0;
            let basis = keyrate_core::hermitian::hmat(&e).unwrap();
            e[c] = 0.0;
            let top = model.apply_constraints(&basis);
            let hess = objective::hess_apply_cached(&g, &z_map, &eval, &basis).unwrap();
            let bottom = cvec(
                &(state.z.as_matrix() * basis.as_matrix()
                    + hess.as_matrix() * state.rho.as_matrix()),
            );
            for r in 0..m_v {
                a[(r, c)] = top[r];
            }
            for r in 0..2 * n2 {
                a[(m_v + r, c)] = bottom[r];
            }
        }
        for (j, gamma_j) in model.gamma_ops.iter().enumerate() {
            let col = cvec(&(gamma_j.as_matrix() * state.rho.as_matrix()));
            for r in 0..2 * n2 {
                a[(m_v + r, n2 + j)] = col[r];
            }
        }
        let mut b = RVec::zeros(rows);
        let fc_fd_rho = cvec(
            &(&res.complementarity + res.dual.as_matrix() * state.rho.as_matrix()),
        );
        for r in 0..m_v {
            b[r] = -raw_infeas[r];
        }
        for r in 0..2 * n2 {
            b[m_v + r] = -fc_fd_rho[r];
        }
        let (sol1, _) = precondition_and_solve(&a, &b).unwrap();

        // Residual comparison on the first system: its optimum cannot be
        // beaten by the embedded second direction.
        let mut x2 = RVec::zeros(unknowns);
        let h2 = hvec(&d_rho2);
        for c in 0..n2 {
            x2[c] = h2[c];
        }
        for j in 0..m_v {
            x2[n2 + j] = dy[j];
        }
        let r1 = (&a * &sol1 - &b).norm();
        let r2 = (&a * &x2 - &b).norm();
        assert!(
            r1 <= r2 + 1e-10 * r2.max(1.0),
            "first projection residual {r1:.6e} vs second-direction residual {r2:.6e}"
        );
        // And both should be of comparable quality on well-posed iterates.
        assert!(r2 <= 10.0 * r1.max(1e-14), "directions diverged: {r1:.3e} vs {r2:.3e}");
    }
}

#[test]
fn gauss_newton_direction_descends_merit() {
    let model = pm_model();
    let nullrep = build_nullspace(&model).unwrap();
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();

    for state in record_states(&model, 10) {
        let eval = objective::evaluate(&g, &z_map, &state.rho).unwrap();
        let res = residuals(&model, &nullrep, &state, &eval.gradient).unwrap();
        let g0 = 0.5
            * (res.dual.norm().powi(2)
                + res.primal.norm().powi(2)
                + res.complementarity.norm().powi(2));
        if g0 < 1e-20 {
            continue;
        }
        let (cols, rhs) = build_gn_system(&model, &nullrep, &state, &eval, &res).unwrap();
        let (sol, _) = precondition_and_solve(&cols, &rhs).unwrap();
        let dv = RVec::from_fn(nullrep.dim(), |i, _| sol[i]);
        let dy = RVec::from_fn(model.m_v(), |i, _| sol[nullrep.dim() + i]);
        let (d_rho, d_z) = back_substitute(&model, &nullrep, &eval, &res, &dv, &dy).unwrap();

        // Bisect t ∈ (0, 1] until the merit decreases (skipping steps that
        // leave the cone).
        let mut t = 1.0f64;
        let mut decreased = false;
        for _ in 0..40 {
            let cand = SolverState {
                rho: state.rho.add(&d_rho.scale(t)),
                v: state.v.clone(),
                y: &state.y + &dy * t,
                z: state.z.add(&d_z.scale(t)),
                mu: state.mu,
                iteration: state.iteration,
                unit_step_taken: state.unit_step_taken,
            };
            if let Some(gt) = merit(&model, &nullrep, &cand) {
                if gt < g0 {
                    decreased = true;
                    break;
                }
            }
            t *= 0.5;
        }
        assert!(decreased, "no merit decrease along the GN direction at iteration {}", state.iteration);
    }
}

#[test]
fn best_bounds_are_monotone() {
    for params in [
        ProtocolParams::EbBB84 { p_z: 0.5, q: 0.05 },
        ProtocolParams::Tfqkd { q: 0.8, l_km: 100.0, p_x: 0.7 },
    ] {
        let gen = params.generate().unwrap();
        let model = build_reduced_model(&gen.instance, 1e-10).unwrap();
        let r = solve(&model, &SolverConfig::default()).unwrap();
        let mut prev_ub = f64::INFINITY;
        let mut prev_lb = f64::NEG_INFINITY;
        for rec in &r.history {
            if let Some(u) = rec.best_ub {
                assert!(u <= prev_ub + 1e-15, "best upper bound increased");
                prev_ub = u;
            }
            if let Some(l) = rec.best_lb {
                assert!(l >= prev_lb - 1e-15, "best lower bound decreased");
                prev_lb = l;
            }
        }
        // μ strictly decreases after the first iteration.
        for w in r.history.windows(2) {
            if w[1].iteration > 1 && w[1].alpha_p > 0.0 {
                assert!(w[1].mu < w[0].mu);
            }
        }
    }
}

#[test]
fn runs_are_bitwise_deterministic() {
    let gen = ProtocolParams::PmBB84 { p_z: 0.9, q: 0.07 }.generate().unwrap();
    let model_a = build_reduced_model(&gen.instance, 1e-10).unwrap();
    let model_b = build_reduced_model(&gen.instance, 1e-10).unwrap();
    let a = solve(&model_a, &SolverConfig::default()).unwrap();
    let b = solve(&model_b, &SolverConfig::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.best_upper.to_bits(), b.best_upper.to_bits());
    assert_eq!(a.best_lower.to_bits(), b.best_lower.to_bits());
    assert_eq!(a.relstopgap.to_bits(), b.relstopgap.to_bits());
    for (ra, rb) in a.history.iter().zip(b.history.iter()) {
        assert_eq!(ra.mu.to_bits(), rb.mu.to_bits());
        assert_eq!(ra.norm_fd.to_bits(), rb.norm_fd.to_bits());
        assert_eq!(ra.alpha_p.to_bits(), rb.alpha_p.to_bits());
    }
}

#[test]
fn preconditioning_does_not_worsen_conditioning() {
    // Build one GN system from a real iterate and compare condition numbers
    // of the raw and column-scaled coefficient matrices.
    let model = pm_model();
    let nullrep = build_nullspace(&model).unwrap();
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    let state = &record_states(&model, 2)[1];
    let eval = objective::evaluate(&g, &z_map, &state.rho).unwrap();
    let res = residuals(&model, &nullrep, state, &eval.gradient).unwrap();
    let (cols, _) = build_gn_system(&model, &nullrep, state, &eval, &res).unwrap();

    let cond = |m: &RMat| -> f64 {
        let sv = m.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    };
    let raw_cond = cond(&cols);
    let mut scaled = cols.clone();
    for j in 0..scaled.ncols() {
        let nrm = scaled.column(j).norm();
        if nrm > 0.0 {
            let col = scaled.column(j) / nrm;
            scaled.set_column(j, &col);
        }
    }
    let scaled_cond = cond(&scaled);
    assert!(
        scaled_cond <= raw_cond * (1.0 + 1e-9),
        "column scaling worsened conditioning: {scaled_cond:.3e} vs {raw_cond:.3e}"
    );
}

#[test]
fn solve_reports_consistent_certificates() {
    let gen = ProtocolParams::EbBB84 { p_z: 0.5, q: 0.05 }.generate().unwrap();
    let model = build_reduced_model(&gen.instance, 1e-10).unwrap();
    let r = solve(&model, &SolverConfig::default()).unwrap();
    assert_eq!(r.termination, TerminationReason::GapMet);
    // The certified dual slack is PSD and reproduces the reported bound.
    assert!(r.lower_valid);
    let lam_min = eigh(&r.z_opt).unwrap().eigenvalues[model.n_rho - 1];
    assert!(lam_min >= -1e-13, "certified Z̄ has λ_min {lam_min:.3e}");
    // rho_opt is feasible and evaluates to the reported upper bound.
    let infeas = (model.apply_constraints(&r.rho_opt) - &model.gamma_v).amax();
    assert!(infeas <= 1e-11);
    let f = objective::eval_f_boundary_safe(
        &CpMap::Kraus(model.g_hat.clone()),
        &model.z_hat.clone(),
        &r.rho_opt,
    )
    .unwrap();
    assert!((f - r.best_upper).abs() <= 1e-10 * (1.0 + r.best_upper.abs()));
}

#[test]
fn shift_repair_restores_stationarity_exactly() {
    // ∇f(ρ̂) + Γ_V†(ŷ_shifted) − Z̄_shifted = 0 must hold to 1e-13 after the
    // identity-shift repair.
    let gen = ProtocolParams::EbBB84 { p_z: 0.5, q: 0.05 }.generate().unwrap();
    let model = build_reduced_model(&gen.instance, 1e-10).unwrap();
    let n = model.n_rho;
    let rho = HermitianMatrix::identity(n).scale(1.0 / n as f64);
    let grad = objective::grad_f(&model, &rho).unwrap();
    // Dual guess that lands slightly indefinite: cancel the gradient along
    // the identity and overshoot by a hair.
    let mut y = RVec::zeros(model.m_v());
    let lam_max = eigh(&grad).unwrap().eigenvalues[0];
    y[0] = -lam_max - 1e-10;
    let cert = keyrate_core::bounds::lower_bound_fr(&model, &rho, &y, f64::INFINITY).unwrap();
    if cert.lower_valid && cert.shift_applied > 0.0 {
        let stat = grad
            .add(&model.constraints_adjoint(&cert.y_certified))
            .sub(&cert.z_bar);
        assert!(stat.norm() <= 1e-13, "stationarity residual {:.3e}", stat.norm());
    }
    // The certificate, when valid, is a true lower bound.
    let r = solve(&model, &SolverConfig::default()).unwrap();
    if cert.lower_valid {
        assert!(cert.lower <= r.best_upper + 1e-12);
    }
}

#[test]
fn zero_direction_is_fixed_point() {
    // At an exactly centered state the GN step vanishes.
    let model = pm_model();
    let nullrep = build_nullspace(&model).unwrap();
    let g = CpMap::Kraus(model.g_hat.clone());
    let z_map = model.z_hat.clone();
    // Solve to high accuracy, then rebuild the residuals at the final
    // center: they are tiny, so the assembled RHS is tiny, so the solved
    // direction is tiny.
    let r = solve(&model, &SolverConfig::default()).unwrap();
    let state = SolverState {
        rho: r.rho_opt.clone(),
        v: RVec::zeros(nullrep.dim()),
        y: r.y_opt.clone(),
        z: r.z_opt.clone(),
        mu: 1e-14,
        iteration: 0,
        unit_step_taken: true,
    };
    let eval = objective::evaluate(&g, &z_map, &state.rho);
    // The optimum can touch the cone boundary; only test when interior.
    if let Ok(eval) = eval {
        let res = residuals(&model, &nullrep, &state, &eval.gradient).unwrap();
        // F_p uses v = 0, so compare against the raw constraint residual.
        let raw = (model.apply_constraints(&state.rho) - &model.gamma_v).amax();
        assert!(raw <= 1e-10);
        let _ = res;
    }
}

#[test]
fn zero_column_handling_is_exact() {
    let mut cols = RMat::zeros(8, 3);
    for i in 0..8 {
        cols[(i, 0)] = (i as f64 + 1.0) * 0.1;
        cols[(i, 2)] = ((i * i) as f64 * 0.37).sin();
    }
    let rhs = RVec::from_fn(8, |i, _| (i as f64 * 0.21).cos());
    let (sol, _) = precondition_and_solve(&cols, &rhs).unwrap();
    assert_eq!(sol[1], 0.0);
    // Residual is no worse than the zero step.
    assert!((&cols * &sol - &rhs).norm() <= rhs.norm());
}

#[test]
fn hermitian_core_ops_reject_bad_dimensions() {
    let h = HermitianMatrix::identity(3);
    let tall = CMat::zeros(2, 3).map(|_: C64| C64::new(0.0, 0.0));
    assert!(h.conjugate_by(&tall).is_err());
}
