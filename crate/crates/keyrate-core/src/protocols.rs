//! Problem-instance generators for the four built-in protocols:
//! entanglement-based BB84, prepare-and-measure BB84 (source replacement),
//! measurement-device-independent BB84, and single-photon twin-field QKD.
//!
//! Each generator builds the observables Γ, the key maps (G, Z) and the
//! simulated state on one code path; γ is always read off the simulation
//! state, so the data cannot drift from the operators.
//!
//! Layout conventions: the post-measurement space of G is
//! key-register ⊗ input ⊗ basis-announcement (the announcement factor is
//! dropped when the instance already carries one), and Z pinches on the key
//! register.

use crate::error::{Error, Result};
use crate::fr::{ProblemInstance, ReducedDensity};
use crate::hermitian::{kron, partial_trace_b, CMat, HermitianMatrix, C64};
use crate::maps::{KrausMap, PinchingMap};

/// Detector efficiency of the twin-field intermediate station.
pub const TFQKD_DETECTOR_EFFICIENCY: f64 = 0.145;
/// Dark count probability per detector and round.
pub const TFQKD_DARK_COUNT: f64 = 1e-8;

/// Parameters of the built-in protocol generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolParams {
    /// Entanglement-based BB84: Z-basis probability and error rate.
    EbBB84 { p_z: f64, q: f64 },
    /// Prepare-and-measure BB84 (source replacement): same parameters.
    PmBB84 { p_z: f64, q: f64 },
    /// Measurement-device-independent BB84: Z probability and depolarizing
    /// probability per leg.
    MdiBB84 { p_z: f64, p: f64 },
    /// Twin-field QKD: amplitude parameter, distance in km, X probability.
    Tfqkd { q: f64, l_km: f64, p_x: f64 },
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} = {v} outside [0,1]")))
            }
        };
        match *self {
            ProtocolParams::EbBB84 { p_z, q } | ProtocolParams::PmBB84 { p_z, q } => {
                prob(p_z, "p_z")?;
                if !(0.0..0.5).contains(&q) {
                    return Err(Error::InvalidParams(format!("Q = {q} outside [0, 0.5)")));
                }
                Ok(())
            }
            ProtocolParams::MdiBB84 { p_z, p } => {
                prob(p_z, "p_z")?;
                prob(p, "p")
            }
            ProtocolParams::Tfqkd { q, l_km, p_x } => {
                prob(q, "q")?;
                prob(p_x, "p_x")?;
                if l_km < 0.0 {
                    return Err(Error::InvalidParams(format!("L = {l_km} km negative")));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ProtocolParams::EbBB84 { p_z, q } => format!("ebBB84({p_z:.2},{q:.2})"),
            ProtocolParams::PmBB84 { p_z, q } => format!("pmBB84({p_z:.2},{q:.2})"),
            ProtocolParams::MdiBB84 { p_z, p } => format!("mdiBB84({p_z:.2},{p:.2})"),
            ProtocolParams::Tfqkd { q, l_km, p_x } => {
                format!("TFQKD({q:.2},{l_km:.2},{p_x:.2})")
            }
        }
    }

    pub fn generate(&self) -> Result<GeneratedInstance> {
        self.validate()?;
        match *self {
            ProtocolParams::EbBB84 { p_z, q } => gen_ebbb84(p_z, q),
            ProtocolParams::PmBB84 { p_z, q } => gen_pmbb84(p_z, q),
            ProtocolParams::MdiBB84 { p_z, p } => gen_mdibb84(p_z, p),
            ProtocolParams::Tfqkd { q, l_km, p_x } => gen_tfqkd(q, l_km, p_x),
        }
    }
}

/// A generated instance together with the simulation state the data γ was
/// read from (the state is feasible by construction).
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    pub simulation_state: HermitianMatrix,
}

// ---------------------------------------------------------------------
// small constructors

fn ket(dim: usize, i: usize) -> CMat {
    let mut v = CMat::zeros(dim, 1);
    v[(i, 0)] = C64::new(1.0, 0.0);
    v
}

fn plus() -> CMat {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_row_slice(2, 1, &[s, s])
}

fn minus() -> CMat {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_row_slice(2, 1, &[s, -s])
}

fn proj(v: &CMat) -> CMat {
    v * v.adjoint()
}

fn herm(m: CMat) -> HermitianMatrix {
    HermitianMatrix::symmetrize(m)
}

/// Orthonormal Hermitian basis of H^d under ⟨·,·⟩ = Re Tr(·†·): diagonal
/// units first, then √½-scaled real and imaginary pair matrices columnwise.
pub fn hermitian_basis(d: usize) -> Vec<HermitianMatrix> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        let mut m = CMat::zeros(d, d);
        m[(i, i)] = C64::new(1.0, 0.0);
        out.push(herm(m));
    }
    for j in 0..d {
        for i in 0..j {
            let mut m = CMat::zeros(d, d);
            m[(i, j)] = C64::new(s, 0.0);
            m[(j, i)] = C64::new(s, 0.0);
            out.push(herm(m));
        }
    }
    for j in 0..d {
        for i in 0..j {
            let mut m = CMat::zeros(d, d);
            m[(i, j)] = C64::new(0.0, -s);
            m[(j, i)] = C64::new(0.0, s);
            out.push(herm(m));
        }
    }
    out
}

/// Reorders the tensor factors of a column vector. `dims` are the current
/// factor dimensions, `order[k]` names which old factor sits at new slot k.
fn permute_factors(v: &CMat, dims: &[usize], order: &[usize]) -> CMat {
    let total: usize = dims.iter().product();
    assert_eq!(v.nrows(), total);
    let n_f = dims.len();
    let mut strides_old = vec![1usize; n_f];
    for i in (0..n_f - 1).rev() {
        strides_old[i] = strides_old[i + 1] * dims[i + 1];
    }
    let new_dims: Vec<usize> = order.iter().map(|&o| dims[o]).collect();
    let mut strides_new = vec![1usize; n_f];
    for i in (0..n_f - 1).rev() {
        strides_new[i] = strides_new[i + 1] * new_dims[i + 1];
    }
    let mut out = CMat::zeros(total, 1);
    for idx in 0..total {
        let mut rem = idx;
        let mut digits = vec![0usize; n_f];
        for k in 0..n_f {
            digits[k] = rem / strides_old[k];
            rem %= strides_old[k];
        }
        let mut new_idx = 0;
        for k in 0..n_f {
            new_idx += digits[order[k]] * strides_new[k];
        }
        out[(new_idx, 0)] = v[(idx, 0)];
    }
    out
}

/// ρ_out = Tr₂[(I ⊗ M) σ] for σ on ℂ^{na}⊗ℂ^{nb} and a POVM element M.
fn measure_second_factor(sigma: &CMat, na: usize, nb: usize, m: &CMat) -> CMat {
    let mut out = CMat::zeros(na, na);
    for i in 0..na {
        for j in 0..na {
            let mut acc = C64::new(0.0, 0.0);
            for s in 0..nb {
                for u in 0..nb {
                    acc += m[(s, u)] * sigma[(i * nb + u, j * nb + s)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Assembles constraints with γ read from the simulation state; the unit
/// trace row goes first.
fn constraints_from_state(
    ops: Vec<HermitianMatrix>,
    rho_sim: &HermitianMatrix,
) -> Vec<(HermitianMatrix, f64)> {
    let n = rho_sim.dim();
    let mut list = Vec::with_capacity(ops.len() + 1);
    list.push((HermitianMatrix::identity(n), rho_sim.trace()));
    for op in ops {
        let v = crate::hermitian::inner_h(&op, rho_sim);
        list.push((op, v));
    }
    list
}

fn key_pinching(total: usize) -> Result<PinchingMap> {
    let half = total / 2;
    let id = CMat::identity(half, half);
    let z0 = kron(&proj(&ket(2, 0)), &id);
    let z1 = kron(&proj(&ket(2, 1)), &id);
    PinchingMap::new(vec![z0, z1])
}

// ---------------------------------------------------------------------
// entanglement-based BB84

/// ebBB84(p_z, Q): two qubits, k = 16, five constraints (unit trace, both
/// error rates, two coarse-grained mismatched-basis rows). The simulated
/// state is the isotropically depolarized maximally entangled pair
/// calibrated to e_z = e_x = Q.
pub fn gen_ebbb84(p_z: f64, q: f64) -> Result<GeneratedInstance> {
    let id2 = CMat::identity(2, 2);
    let p0 = proj(&ket(2, 0));
    let p1 = proj(&ket(2, 1));
    let pp = proj(&plus());
    let pm = proj(&minus());

    // Simulation state: (1−2Q)|Φ+⟩⟨Φ+| + 2Q·I/4.
    let phi = {
        let mut v = CMat::zeros(4, 1);
        v[(0, 0)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        v[(3, 0)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        v
    };
    let rho_sim = herm(proj(&phi) * C64::new(1.0 - 2.0 * q, 0.0)
        + CMat::identity(4, 4) * C64::new(2.0 * q / 4.0, 0.0));

    let weight = |w: f64, m: CMat| herm(m * C64::new(w, 0.0));
    let ops = vec![
        weight(p_z * p_z, kron(&p0, &p1) + kron(&p1, &p0)),
        weight((1.0 - p_z) * (1.0 - p_z), kron(&pp, &pm) + kron(&pm, &pp)),
        weight(p_z * (1.0 - p_z), kron(&p0, &pm) + kron(&p1, &pp)),
        weight((1.0 - p_z) * p_z, kron(&pp, &p1) + kron(&pm, &p0)),
    ];
    let constraints = constraints_from_state(ops, &rho_sim);

    // Key maps: key register ⊗ (A⊗B) ⊗ basis announcement.
    let k_z = (kron(&kron(&ket(2, 0), &kron(&p0, &id2)), &ket(2, 0))
        + kron(&kron(&ket(2, 1), &kron(&p1, &id2)), &ket(2, 0)))
        * C64::new(p_z, 0.0);
    let k_x = (kron(&kron(&ket(2, 0), &kron(&pp, &id2)), &ket(2, 1))
        + kron(&kron(&ket(2, 1), &kron(&pm, &id2)), &ket(2, 1)))
        * C64::new(1.0 - p_z, 0.0);
    let g_map = KrausMap::new(vec![k_z, k_x])?;
    let z_map = key_pinching(16)?;

    let instance = ProblemInstance::new(
        constraints,
        g_map,
        z_map,
        None,
        ProtocolParams::EbBB84 { p_z, q }.label(),
    )?;
    Ok(GeneratedInstance { instance, simulation_state: rho_sim })
}

// ---------------------------------------------------------------------
// prepare-and-measure BB84

/// Source-replacement data shared by the prepare-and-measure generators:
/// |ψ⟩ = Σᵢ √pᵢ |i⟩⊗|φᵢ⟩ for the four BB84 signal states.
fn bb84_source(p_z: f64) -> (CMat, Vec<CMat>, Vec<f64>) {
    let states = vec![ket(2, 0), ket(2, 1), plus(), minus()];
    let probs = vec![p_z / 2.0, p_z / 2.0, (1.0 - p_z) / 2.0, (1.0 - p_z) / 2.0];
    let mut psi = CMat::zeros(8, 1);
    for (i, (st, pr)) in states.iter().zip(probs.iter()).enumerate() {
        let amp = C64::new(pr.sqrt(), 0.0);
        for b in 0..2 {
            psi[(i * 2 + b, 0)] += amp * st[(b, 0)];
        }
    }
    (psi, states, probs)
}

/// pmBB84(p_z, Q): Alice's four-dimensional source register tensor Bob's
/// qubit, n = 8, k = 32, m = 21 (unit trace, 16 reduced-density rows, four
/// coarse-grained observables). Bob's qubit passes a depolarizing channel
/// calibrated to e_z = e_x = Q.
pub fn gen_pmbb84(p_z: f64, q: f64) -> Result<GeneratedInstance> {
    let (psi, _states, _probs) = bb84_source(p_z);
    let rho_pure = proj(&psi);
    let rho_a = herm(partial_trace_b(&rho_pure, 4, 2)?);
    let w = 2.0 * q;
    let rho_sim = herm(
        &rho_pure * C64::new(1.0 - w, 0.0)
            + kron(rho_a.as_matrix(), &(CMat::identity(2, 2) * C64::new(0.5, 0.0)))
                * C64::new(w, 0.0),
    );

    let p_a: Vec<CMat> = (0..4).map(|i| proj(&ket(4, i))).collect();
    let p0 = proj(&ket(2, 0));
    let p1 = proj(&ket(2, 1));
    let pp = proj(&plus());
    let pm = proj(&minus());

    let mut ops: Vec<HermitianMatrix> = hermitian_basis(4)
        .iter()
        .map(|t| herm(kron(t.as_matrix(), &CMat::identity(2, 2))))
        .collect();
    let weight = |w: f64, m: CMat| herm(m * C64::new(w, 0.0));
    ops.push(weight(p_z, kron(&p_a[0], &p1) + kron(&p_a[1], &p0)));
    ops.push(weight(1.0 - p_z, kron(&p_a[2], &pm) + kron(&p_a[3], &pp)));
    ops.push(weight(1.0 - p_z, kron(&p_a[0], &pm) + kron(&p_a[1], &pp)));
    ops.push(weight(p_z, kron(&p_a[2], &p1) + kron(&p_a[3], &p0)));
    let constraints = constraints_from_state(ops, &rho_sim);

    let id2 = CMat::identity(2, 2);
    let k_z = (kron(&kron(&ket(2, 0), &kron(&p_a[0], &id2)), &ket(2, 0))
        + kron(&kron(&ket(2, 1), &kron(&p_a[1], &id2)), &ket(2, 0)))
        * C64::new(p_z.sqrt(), 0.0);
    let k_x = (kron(&kron(&ket(2, 0), &kron(&p_a[2], &id2)), &ket(2, 1))
        + kron(&kron(&ket(2, 1), &kron(&p_a[3], &id2)), &ket(2, 1)))
        * C64::new((1.0 - p_z).sqrt(), 0.0);
    let g_map = KrausMap::new(vec![k_z, k_x])?;
    let z_map = key_pinching(32)?;

    let instance = ProblemInstance::new(
        constraints,
        g_map,
        z_map,
        Some(ReducedDensity { rho_a, n_b: 2 }),
        ProtocolParams::PmBB84 { p_z, q }.label(),
    )?;
    Ok(GeneratedInstance { instance, simulation_state: rho_sim })
}

// ---------------------------------------------------------------------
// measurement-device-independent BB84

/// Applies the single-qubit depolarizing channel (probability p) to the two
/// trailing qubit factors of a state on ℂ^{16}⊗ℂ²⊗ℂ².
fn depolarize_two_legs(sigma: &CMat, p: f64) -> CMat {
    let paulis = [
        CMat::identity(2, 2),
        CMat::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ),
        CMat::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        ),
        CMat::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)],
        ),
    ];
    let mut coeff = [1.0 - 3.0 * p / 4.0, p / 4.0, p / 4.0, p / 4.0];
    for c in coeff.iter_mut() {
        *c = c.max(0.0).sqrt();
    }
    let id16 = CMat::identity(16, 16);
    let mut out = CMat::zeros(64, 64);
    for (mu, pm) in paulis.iter().enumerate() {
        for (nu, pn) in paulis.iter().enumerate() {
            let k = kron(&id16, &kron(pm, pn)) * C64::new(coeff[mu] * coeff[nu], 0.0);
            out += &k * sigma * k.adjoint();
        }
    }
    out
}

/// mdiBB84(p_z, p): registers A⊗B⊗C with dims 4·4·3 (n = 48, k = 96,
/// m = 305). Alice's and Bob's source-replacement registers jointly play
/// the reduced-density role; the announcement register C stores Charlie's
/// partial Bell-state measurement outcome (ψ⁻, ψ⁺, failure). Each signal
/// leg passes an independent depolarizing channel with probability p.
pub fn gen_mdibb84(p_z: f64, p: f64) -> Result<GeneratedInstance> {
    let (psi_a, _, _) = bb84_source(p_z);
    let joint = kron(&psi_a, &psi_a); // A ⊗ A' ⊗ B ⊗ B'
    let reordered = permute_factors(&joint, &[4, 2, 4, 2], &[0, 2, 1, 3]); // A ⊗ B ⊗ A' ⊗ B'
    let sigma = depolarize_two_legs(&proj(&reordered), p);

    // Partial Bell-state measurement: ψ± distinguished, rest is failure.
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let psi_minus = {
        let mut v = CMat::zeros(4, 1);
        v[(1, 0)] = s;
        v[(2, 0)] = -s;
        v
    };
    let psi_plus = {
        let mut v = CMat::zeros(4, 1);
        v[(1, 0)] = s;
        v[(2, 0)] = s;
        v
    };
    let bsm = [
        proj(&psi_minus),
        proj(&psi_plus),
        CMat::identity(4, 4) - proj(&psi_minus) - proj(&psi_plus),
    ];

    let mut rho_sim_m = CMat::zeros(48, 48);
    let mut rho_ab = CMat::zeros(16, 16);
    for (c, m) in bsm.iter().enumerate() {
        let block = measure_second_factor(&sigma, 16, 4, m);
        rho_ab += &block;
        rho_sim_m += kron(&block, &proj(&ket(3, c)));
    }
    let rho_sim = herm(rho_sim_m);
    let rho_ab = herm(rho_ab);

    let mut ops: Vec<HermitianMatrix> = hermitian_basis(16)
        .iter()
        .map(|t| herm(kron(t.as_matrix(), &CMat::identity(3, 3))))
        .collect();
    for i in 0..4 {
        for j in 0..4 {
            for c in 0..3 {
                ops.push(herm(kron(
                    &kron(&proj(&ket(4, i)), &proj(&ket(4, j))),
                    &proj(&ket(3, c)),
                )));
            }
        }
    }
    let constraints = constraints_from_state(ops, &rho_sim);

    // Key from both-Z rounds with a successful announcement.
    let pi_z_b = proj(&ket(4, 0)) + proj(&ket(4, 1));
    let pi_succ = proj(&ket(3, 0)) + proj(&ket(3, 1));
    let mut k_op = CMat::zeros(96, 48);
    for a in 0..2 {
        k_op += kron(&ket(2, a), &kron(&kron(&proj(&ket(4, a)), &pi_z_b), &pi_succ));
    }
    let g_map = KrausMap::new(vec![k_op])?;
    let z_map = key_pinching(96)?;

    let instance = ProblemInstance::new(
        constraints,
        g_map,
        z_map,
        Some(ReducedDensity { rho_a: rho_ab, n_b: 3 }),
        ProtocolParams::MdiBB84 { p_z, p }.label(),
    )?;
    Ok(GeneratedInstance { instance, simulation_state: rho_sim })
}

// ---------------------------------------------------------------------
// twin-field QKD

/// Detector response weights for a two-detector threshold measurement with
/// dark count probability p_d: `click(n)` is the click probability given n
/// photons arrive, `silent(n)` the complement.
fn click(n: usize, p_d: f64) -> f64 {
    if n > 0 {
        1.0
    } else {
        p_d
    }
}

fn silent(n: usize, p_d: f64) -> f64 {
    if n > 0 {
        0.0
    } else {
        1.0 - p_d
    }
}

/// Announcement POVM on the two-mode (≤1 photon per arm) space spanned by
/// |n_a n_b⟩ ∈ {00, 01, 10, 11}: beamsplitter interference with per-arm
/// transmittance τ (detector efficiency folded in) and independent dark
/// counts. Outcomes: 0 = only D0 clicked, 1 = only D1, 2 = failure.
pub fn tfqkd_mode_povm(tau: f64, p_d: f64) -> Vec<CMat> {
    // E(n_c, n_d) per outcome.
    let e = |outcome: usize, nc: usize, nd: usize| -> f64 {
        match outcome {
            0 => click(nc, p_d) * silent(nd, p_d),
            1 => silent(nc, p_d) * click(nd, p_d),
            _ => click(nc, p_d) * click(nd, p_d) + silent(nc, p_d) * silent(nd, p_d),
        }
    };
    (0..3)
        .map(|c| {
            let mut f = CMat::zeros(4, 4);
            f[(0, 0)] = C64::new(e(c, 0, 0), 0.0);
            let single = 0.5 * tau * (e(c, 1, 0) + e(c, 0, 1)) + (1.0 - tau) * e(c, 0, 0);
            f[(1, 1)] = C64::new(single, 0.0);
            f[(2, 2)] = C64::new(single, 0.0);
            // Interference term: the two one-photon inputs reach D0 in phase
            // and D1 with opposite signs.
            let cross = 0.5 * tau * (e(c, 1, 0) - e(c, 0, 1));
            f[(1, 2)] = C64::new(cross, 0.0);
            f[(2, 1)] = C64::new(cross, 0.0);
            let double = 0.5 * tau * tau * (e(c, 2, 0) + e(c, 0, 2))
                + tau * (1.0 - tau) * (e(c, 1, 0) + e(c, 0, 1))
                + (1.0 - tau) * (1.0 - tau) * e(c, 0, 0);
            f[(3, 3)] = C64::new(double, 0.0);
            f
        })
        .collect()
}

/// TFQKD(q, L, p_x): qubits A, B plus a three-outcome announcement register
/// (n = 12, k = 24). Symmetric station placement; each arm sees
/// transmittance η_d·10^(−0.02·L/2); keys come from both-X rounds with a
/// single-detector click.
pub fn gen_tfqkd(q: f64, l_km: f64, p_x: f64) -> Result<GeneratedInstance> {
    let tau = TFQKD_DETECTOR_EFFICIENCY * 10f64.powf(-0.02 * l_km / 2.0);
    let povm = tfqkd_mode_povm(tau, TFQKD_DARK_COUNT);

    // |φ_q⟩_{Aa} ⊗ |φ_q⟩_{Bb}, reordered to (A⊗B) ⊗ (a⊗b).
    let phi = {
        let mut v = CMat::zeros(4, 1);
        v[(0, 0)] = C64::new(q.sqrt(), 0.0);
        v[(3, 0)] = C64::new((1.0 - q).sqrt(), 0.0);
        v
    };
    let joint = kron(&phi, &phi); // A ⊗ a ⊗ B ⊗ b
    let reordered = permute_factors(&joint, &[2, 2, 2, 2], &[0, 2, 1, 3]);
    let sigma = proj(&reordered);

    let mut rho_sim_m = CMat::zeros(12, 12);
    let mut rho_ab = CMat::zeros(4, 4);
    for (c, m) in povm.iter().enumerate() {
        let block = measure_second_factor(&sigma, 4, 4, m);
        rho_ab += &block;
        rho_sim_m += kron(&block, &proj(&ket(3, c)));
    }
    let rho_sim = herm(rho_sim_m);
    let rho_ab = herm(rho_ab);

    let mut ops: Vec<HermitianMatrix> = hermitian_basis(4)
        .iter()
        .map(|t| herm(kron(t.as_matrix(), &CMat::identity(3, 3))))
        .collect();
    let locals = [
        (proj(&ket(2, 0)), 1.0 - p_x),
        (proj(&ket(2, 1)), 1.0 - p_x),
        (proj(&plus()), p_x),
        (proj(&minus()), p_x),
    ];
    for (pa, wa) in &locals {
        for (pb, wb) in &locals {
            for c in 0..3 {
                ops.push(herm(
                    kron(&kron(pa, pb), &proj(&ket(3, c))) * C64::new(wa * wb, 0.0),
                ));
            }
        }
    }
    let constraints = constraints_from_state(ops, &rho_sim);

    // Key map: Alice's X outcome on single-click rounds.
    let pi_succ = proj(&ket(3, 0)) + proj(&ket(3, 1));
    let id2 = CMat::identity(2, 2);
    let xs = [plus(), minus()];
    let mut k_op = CMat::zeros(24, 12);
    for (a, x) in xs.iter().enumerate() {
        k_op += kron(&ket(2, a), &kron(&kron(&proj(x), &id2), &pi_succ));
    }
    let g_map = KrausMap::new(vec![k_op * C64::new(p_x, 0.0)])?;
    let z_map = key_pinching(24)?;

    let instance = ProblemInstance::new(
        constraints,
        g_map,
        z_map,
        Some(ReducedDensity { rho_a: rho_ab, n_b: 3 }),
        ProtocolParams::Tfqkd { q, l_km, p_x }.label(),
    )?;
    Ok(GeneratedInstance { instance, simulation_state: rho_sim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{eigh, inner_h};

    fn check_gamma_consistency(g: &GeneratedInstance) {
        for (i, (op, v)) in g.instance.constraints.iter().enumerate() {
            let expect = inner_h(op, &g.simulation_state);
            assert!(
                (expect - v).abs() <= 1e-14 * v.abs().max(1.0),
                "constraint {i}: ⟨Γ,ρ_sim⟩ = {expect:.16e} vs γ = {v:.16e}"
            );
        }
    }

    fn check_state_psd(g: &GeneratedInstance) {
        let ev = eigh(&g.simulation_state).unwrap().eigenvalues;
        assert!(ev[ev.len() - 1] >= -1e-12, "λ_min = {:.3e}", ev[ev.len() - 1]);
        assert!((g.simulation_state.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ebbb84_shape_and_consistency() {
        let g = gen_ebbb84(0.5, 0.05).unwrap();
        assert_eq!(g.instance.n, 4);
        assert_eq!(g.instance.k(), 16);
        assert_eq!(g.instance.m(), 5);
        check_gamma_consistency(&g);
        check_state_psd(&g);
    }

    #[test]
    fn ebbb84_zero_error_collapses_to_pure_state() {
        let p_z = 0.5;
        let g = gen_ebbb84(p_z, 0.0).unwrap();
        // Simulation state is the pure maximally entangled state.
        let ev = eigh(&g.simulation_state).unwrap().eigenvalues;
        assert!((ev[0] - 1.0).abs() < 1e-14);
        for i in 1..4 {
            assert!(ev[i].abs() < 1e-14);
        }

        // The feasible set collapses to that single state: from the rank-one
        // feasible point, every constraint-nullspace direction exits the PSD
        // cone immediately, so no feasible segment leaves it.
        let rows: Vec<crate::RVec> =
            g.instance.constraints.iter().map(|(op, _)| crate::hermitian::hvec(op)).collect();
        let mut seed = 0x5DEECE66Du64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed as f64 / u64::MAX as f64) - 0.5
        };
        for _ in 0..200 {
            // Random direction projected onto the nullspace of the rows.
            let mut d = crate::RVec::from_fn(16, |_, _| next());
            for _ in 0..3 {
                for r in &rows {
                    let rn = r.norm();
                    let c = r.dot(&d) / (rn * rn);
                    d -= r * c;
                }
            }
            let dir = crate::hermitian::hmat(&d).unwrap();
            let cand = g.simulation_state.add(&dir.scale(1e-4 / dir.norm()));
            let lam_min = eigh(&cand).unwrap().eigenvalues[3];
            assert!(lam_min < -1e-10, "feasible direction escaped: λ_min = {lam_min:.3e}");
        }

        // At the unique feasible state the objective equals the sifted key
        // randomness (p_z² + (1−p_z)²)·ln 2 — Eve holds no side information,
        // so the conditional entropy of the key is maximal.
        let g_map = crate::maps::CpMap::Kraus(g.instance.g_map.clone());
        let z_of_g = crate::maps::CpMap::compose(
            crate::maps::CpMap::Pinching(g.instance.z_map.clone()),
            g_map.clone(),
        )
        .unwrap();
        let f = crate::objective::eval_f_boundary_safe(&g_map, &z_of_g, &g.simulation_state)
            .unwrap();
        let expect = (p_z * p_z + (1.0 - p_z) * (1.0 - p_z)) * std::f64::consts::LN_2;
        assert!((f - expect).abs() < 1e-12, "objective {f:.12} vs closed form {expect:.12}");
    }

    #[test]
    fn pmbb84_shape_and_consistency() {
        let g = gen_pmbb84(0.5, 0.05).unwrap();
        assert_eq!(g.instance.n, 8);
        assert_eq!(g.instance.k(), 32);
        assert_eq!(g.instance.m(), 21);
        let rd = g.instance.reduced_density.as_ref().unwrap();
        assert_eq!(rd.rho_a.dim(), 4);
        assert_eq!(rd.n_b, 2);
        // ρ_A has rank 2: the四 signal states span a qubit.
        let ev = eigh(&rd.rho_a).unwrap().eigenvalues;
        assert!(ev[1] > 1e-3);
        assert!(ev[2].abs() < 1e-14);
        check_gamma_consistency(&g);
        check_state_psd(&g);
        // Marginal consistency: Tr_B(ρ_sim) = ρ_A.
        let tr_b = crate::hermitian::partial_trace_b(g.simulation_state.as_matrix(), 4, 2).unwrap();
        assert!((tr_b - rd.rho_a.as_matrix()).norm() < 1e-13);
    }

    #[test]
    fn mdibb84_shape_and_consistency() {
        let g = gen_mdibb84(0.5, 0.05).unwrap();
        assert_eq!(g.instance.n, 48);
        assert_eq!(g.instance.k(), 96);
        assert_eq!(g.instance.m(), 305);
        let rd = g.instance.reduced_density.as_ref().unwrap();
        assert_eq!(rd.rho_a.dim(), 16);
        assert_eq!(rd.n_b, 3);
        // ρ_AB = ρ_A ⊗ ρ_B with both factors rank 2.
        let ev = eigh(&rd.rho_a).unwrap().eigenvalues;
        assert!(ev[3] > 1e-4);
        assert!(ev[4].abs() < 1e-13);
        check_gamma_consistency(&g);
        check_state_psd(&g);
    }

    #[test]
    fn tfqkd_shape_and_consistency() {
        let g = gen_tfqkd(0.8, 100.0, 0.7).unwrap();
        assert_eq!(g.instance.n, 12);
        assert_eq!(g.instance.k(), 24);
        assert_eq!(g.instance.m(), 65);
        check_gamma_consistency(&g);
        check_state_psd(&g);
    }

    #[test]
    fn tfqkd_povm_is_complete_and_matches_fock_oracle() {
        // Brute-force two-mode Fock-space simulation of loss + 50/50
        // beamsplitter + threshold detectors, on ≤2 total photons.
        fn fock_povm(tau: f64, p_d: f64) -> Vec<CMat> {
            // Output occupation basis over (c, d, ea, eb) with ≤2 photons.
            let mut basis: Vec<[usize; 4]> = Vec::new();
            for nc in 0..3 {
                for nd in 0..3 {
                    for na in 0..3 {
                        for nb in 0..3 {
                            if nc + nd + na + nb <= 2 {
                                basis.push([nc, nd, na, nb]);
                            }
                        }
                    }
                }
            }
            let index =
                |v: &[usize; 4]| basis.iter().position(|b| b == v).expect("basis element");

            // Single-photon images: a† → √(τ/2)c† + √(τ/2)d† + √(1−τ)ea†.
            let amp_a = [
                ((tau / 2.0).sqrt(), [1usize, 0, 0, 0]),
                ((tau / 2.0).sqrt(), [0, 1, 0, 0]),
                ((1.0 - tau).sqrt(), [0, 0, 1, 0]),
            ];
            let amp_b = [
                ((tau / 2.0).sqrt(), [1usize, 0, 0, 0]),
                (-(tau / 2.0).sqrt(), [0, 1, 0, 0]),
                ((1.0 - tau).sqrt(), [0, 0, 0, 1]),
            ];

            // Images of the four ≤1-photon-per-arm inputs.
            let mut images = vec![vec![0.0f64; basis.len()]; 4];
            images[0][index(&[0, 0, 0, 0])] = 1.0;
            for (amp, occ) in &amp_a {
                images[2][index(occ)] += amp; // |10⟩: photon in arm a
            }
            for (amp, occ) in &amp_b {
                images[1][index(occ)] += amp; // |01⟩
            }
            // |11⟩ = a†b†|vac⟩: product of the two linear forms; doubly
            // occupied modes pick up the bosonic √2.
            for (aa, occ_a) in &amp_a {
                for (ab, occ_b) in &amp_b {
                    let mut occ = [0usize; 4];
                    let mut boson = 1.0;
                    for k in 0..4 {
                        occ[k] = occ_a[k] + occ_b[k];
                        if occ[k] == 2 {
                            boson *= std::f64::consts::SQRT_2;
                        }
                    }
                    images[3][index(&occ)] += aa * ab * boson;
                }
            }

            (0..3)
                .map(|outcome| {
                    let mut f = CMat::zeros(4, 4);
                    for (i, bi) in basis.iter().enumerate() {
                        let e = match outcome {
                            0 => click(bi[0], p_d) * silent(bi[1], p_d),
                            1 => silent(bi[0], p_d) * click(bi[1], p_d),
                            _ => {
                                click(bi[0], p_d) * click(bi[1], p_d)
                                    + silent(bi[0], p_d) * silent(bi[1], p_d)
                            }
                        };
                        for x in 0..4 {
                            for y in 0..4 {
                                f[(x, y)] +=
                                    C64::new(e * images[x][i] * images[y][i], 0.0);
                            }
                        }
                    }
                    f
                })
                .collect()
        }

        for &(tau, p_d) in
            &[(1.0, 0.0), (0.0145, 1e-8), (0.4, 1e-8), (0.145, 0.0)]
        {
            let analytic = tfqkd_mode_povm(tau, p_d);
            let oracle = fock_povm(tau, p_d);
            let mut total = CMat::zeros(4, 4);
            for (f, o) in analytic.iter().zip(oracle.iter()) {
                assert!((f - o).norm() < 1e-13, "τ={tau}, p_d={p_d}");
                total += f;
            }
            assert!((total - CMat::identity(4, 4)).norm() < 1e-13);
        }

        // Lossless limit: both photons bunch, so one detector sees both;
        // coincidence clicks never happen without dark counts.
        let lossless = tfqkd_mode_povm(1.0, 0.0);
        let f_fail = &lossless[2];
        assert!((f_fail[(3, 3)].re - 0.0).abs() < 1e-14 + 1.0);
        // |11⟩ always gives a single-detector (bunched) click: failure POVM
        // has no |11⟩ weight beyond the no-click branch, which is zero here.
        assert!(f_fail[(3, 3)].re.abs() < 1e-14);
        assert!((lossless[0][(3, 3)].re - 0.5).abs() < 1e-14);
        assert!((lossless[1][(3, 3)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn parameter_validation() {
        assert!(ProtocolParams::EbBB84 { p_z: 1.2, q: 0.05 }.validate().is_err());
        assert!(ProtocolParams::EbBB84 { p_z: 0.5, q: 0.5 }.validate().is_err());
        assert!(ProtocolParams::Tfqkd { q: 0.8, l_km: -3.0, p_x: 0.7 }.validate().is_err());
        assert!(ProtocolParams::MdiBB84 { p_z: 0.5, p: 0.05 }.validate().is_ok());
    }

    #[test]
    fn labels_match_reporting_format() {
        assert_eq!(ProtocolParams::EbBB84 { p_z: 0.5, q: 0.05 }.label(), "ebBB84(0.50,0.05)");
        assert_eq!(
            ProtocolParams::Tfqkd { q: 0.8, l_km: 100.0, p_x: 0.7 }.label(),
            "TFQKD(0.80,100.00,0.70)"
        );
    }
}
