//! First-order network sensitivities around a solved operating point.
//!
//! Three families, all relative to active-power injections at non-slack
//! nodes:
//!
//! * **Voltage derivatives** ∂V_i/∂P_k. At a solved state the injection
//!   relation S_i* = V_i* Σ_j Y_ij V_j differentiates to
//!   `1{i=k} = (∂V_i/∂P_k)* Σ_j Y_ij V_j + V_i* Σ_j Y_ij ∂V_j/∂P_k`,
//!   which is linear over the reals in the rectangular parts of ∂V/∂P_k.
//!   One 2N×2N real factorization serves every k (the right-hand sides
//!   differ only in the indicator), and magnitude sensitivities follow as
//!   ∂|V_i|/∂P_k = Re(V_i* ∂V_i/∂P_k)/|V_i|.
//! * **Injection shift factors** Ψ = B̃ A B⁻¹ (susceptance-only DC form) and
//!   the per-trade transfer factors Φ^ij = Ψ^i − Ψ^j. On a radial network
//!   every entry is −1, 0, or +1: a transfer moves over the unique tree path.
//! * **Loss sensitivities** ∂P_loss/∂P_k = 2 Re(V^H G ∂V/∂P_k) and the
//!   bilateral exchange coefficient BEC^ij = ∂P_loss/∂P_i − ∂P_loss/∂P_j,
//!   the marginal loss burden of moving one unit of power from i to j.
//!
//! Voltage and loss coefficients are valid only at the operating point they
//! were computed for; [`SensitivityBundle`] carries a fingerprint of the
//! injections and refuses predictions against a different state.

use crate::error::{Error, Result};
use crate::net::{Network, NetworkMatrices, OperatingPoint};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Hash of the non-slack injections identifying an operating point. The
/// slack entry is excluded: it is derived, and callers may not have filled
/// it in yet.
pub fn fingerprint(injections: &[Complex64]) -> u64 {
    let mut h = Sha256::new();
    h.update((injections.len() as u64).to_le_bytes());
    for s in &injections[1..] {
        h.update(s.re.to_le_bytes());
        h.update(s.im.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Solve the derivative system at `op` for all non-slack injection buses at
/// once. Returns an N×N complex matrix with entry (i−1, k−1) = ∂V_i/∂P_k.
pub fn voltage_derivatives(
    net: &Network,
    mats: &NetworkMatrices,
    op: &OperatingPoint,
) -> Result<DMatrix<Complex64>> {
    let n = net.n_nodes() - 1;
    let v = &op.voltages;

    // W_i = Σ_j Y_ij V_j over all nodes (the slack term stays).
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..=n {
            w[i] += mats.y[(i + 1, j)] * v[j];
        }
    }

    // Unknown layout x = [Re ∂V_1.., Im ∂V_1..]; row layout mirrors it with
    // the real part of equation i at row i and the imaginary part at n+i.
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let c = v[i + 1].conj() * mats.y[(i + 1, j + 1)];
            m[(i, j)] += c.re;
            m[(i, n + j)] += -c.im;
            m[(n + i, j)] += c.im;
            m[(n + i, n + j)] += c.re;
        }
        m[(i, i)] += w[i].re;
        m[(i, n + i)] += w[i].im;
        m[(n + i, i)] += w[i].im;
        m[(n + i, n + i)] += -w[i].re;
    }

    let lu = m.lu();
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    for k in 0..n {
        rhs[(k, k)] = 1.0;
    }
    let x = lu.solve(&rhs).ok_or_else(|| {
        Error::Singular(format!(
            "voltage-derivative system at this operating point (min |V| = {:.3e})",
            v.iter().skip(1).map(|c| c.norm()).fold(f64::MAX, f64::min)
        ))
    })?;

    Ok(DMatrix::from_fn(n, n, |i, k| {
        Complex64::new(x[(i, k)], x[(n + i, k)])
    }))
}

/// Magnitude sensitivities ∂|V_i|/∂P_k = Re(V_i* ∂V_i/∂P_k)/|V_i| for
/// non-slack i, k.
pub fn vsc_magnitude(dv_dp: &DMatrix<Complex64>, op: &OperatingPoint) -> Result<DMatrix<f64>> {
    let n = dv_dp.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let vi = op.voltages[i + 1];
        let mag = vi.norm();
        if mag < 1e-9 {
            return Err(Error::DegenerateVoltage(i + 1));
        }
        for k in 0..n {
            out[(i, k)] = (vi.conj() * dv_dp[(i, k)]).re / mag;
        }
    }
    Ok(out)
}

/// Loss sensitivities ∂P_loss/∂P_k = 2 Re(V^H G ∂V/∂P_k) for non-slack k.
/// The sum runs over all nodes with ∂V_0/∂P_k = 0.
pub fn loss_sensitivities(
    mats: &NetworkMatrices,
    op: &OperatingPoint,
    dv_dp: &DMatrix<Complex64>,
) -> DVector<f64> {
    let n = dv_dp.nrows();
    // q_j = Σ_i V_i* G_ij, for the non-slack columns j.
    let mut q = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..=n {
            q[j] += op.voltages[i].conj() * mats.g[(i, j + 1)];
        }
    }
    DVector::from_fn(n, |k, _| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += q[j] * dv_dp[(j, k)];
        }
        2.0 * acc.re
    })
}

/// Injection shift factors: flow response of every line to a 1 pu injection
/// at a node (absorbed at the slack), positive in the child → parent
/// direction of the line.
#[derive(Debug, Clone)]
pub struct ShiftFactors {
    /// lines × non-slack nodes.
    psi: DMatrix<f64>,
}

impl ShiftFactors {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// Ψ for (line, node id); the slack column is identically zero.
    pub fn value(&self, line: usize, node: usize) -> f64 {
        if node == 0 {
            0.0
        } else {
            self.psi[(line, node - 1)]
        }
    }

    /// Transfer factors Φ^ij per line for an injection at i withdrawn at j.
    pub fn ptdf(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.psi.nrows())
            .map(|l| self.value(l, i) - self.value(l, j))
            .collect()
    }
}

/// Ψ = B̃ A B⁻¹ from an explicit incidence (lines × all nodes, slack in
/// column 0) and per-line susceptance. Works for meshed incidences too.
pub fn isf_from_incidence(
    incidence: &DMatrix<f64>,
    susceptance: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = incidence.ncols() - 1;
    let a_red = incidence.columns(1, n).into_owned();
    let b = a_red.transpose() * DMatrix::from_diagonal(susceptance) * &a_red;
    let b_inv = b
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Topology("reduced susceptance matrix is singular".into()))?;
    Ok(DMatrix::from_diagonal(susceptance) * a_red * b_inv)
}

pub fn injection_shift_factors(mats: &NetworkMatrices) -> Result<ShiftFactors> {
    Ok(ShiftFactors {
        psi: isf_from_incidence(&mats.incidence, &mats.branch_susceptance)?,
    })
}

/// Per-node voltage-magnitude outlook for a candidate transfer.
#[derive(Debug, Clone)]
pub struct VoltagePrediction {
    /// Δ|V| per node (slack entry 0).
    pub delta: Vec<f64>,
    /// |V| + Δ|V| per node.
    pub magnitudes: Vec<f64>,
}

/// All sensitivities of one operating point, plus the topology shift
/// factors, stamped with the operating point's injection fingerprint.
#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    n_nodes: usize,
    dv_dp: DMatrix<Complex64>,
    dvmag_dp: DMatrix<f64>,
    isf: Arc<ShiftFactors>,
    dploss_dp: DVector<f64>,
    fingerprint: u64,
}

impl SensitivityBundle {
    pub fn compute(net: &Network, mats: &NetworkMatrices, op: &OperatingPoint) -> Result<Self> {
        let isf = Arc::new(injection_shift_factors(mats)?);
        Self::compute_with_shift_factors(net, mats, op, isf)
    }

    /// Like [`Self::compute`], but reusing shift factors computed earlier.
    /// They depend only on the topology, so callers that refresh the bundle
    /// after every committed trade should compute them once and share them
    /// instead of paying for a dense inverse per refresh.
    pub fn compute_with_shift_factors(
        net: &Network,
        mats: &NetworkMatrices,
        op: &OperatingPoint,
        isf: Arc<ShiftFactors>,
    ) -> Result<Self> {
        let dv_dp = voltage_derivatives(net, mats, op)?;
        let dvmag_dp = vsc_magnitude(&dv_dp, op)?;
        let dploss_dp = loss_sensitivities(mats, op, &dv_dp);
        Ok(SensitivityBundle {
            n_nodes: net.n_nodes(),
            dv_dp,
            dvmag_dp,
            isf,
            dploss_dp,
            fingerprint: fingerprint(&op.injections),
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, op: &OperatingPoint) -> bool {
        fingerprint(&op.injections) == self.fingerprint
    }

    pub fn derivatives(&self) -> &DMatrix<Complex64> {
        &self.dv_dp
    }

    pub fn vsc(&self) -> &DMatrix<f64> {
        &self.dvmag_dp
    }

    pub fn shift_factors(&self) -> &ShiftFactors {
        &self.isf
    }

    pub fn loss_vector(&self) -> &DVector<f64> {
        &self.dploss_dp
    }

    /// ∂|V_m|/∂P_k by node ids; zero whenever either index is the slack.
    pub fn dvmag(&self, m: usize, k: usize) -> f64 {
        if m == 0 || k == 0 {
            0.0
        } else {
            self.dvmag_dp[(m - 1, k - 1)]
        }
    }

    /// ∂P_loss/∂P_k by node id; zero for the slack.
    pub fn dploss(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.dploss_dp[k - 1]
        }
    }

    /// Bilateral exchange coefficient: marginal losses of a transfer
    /// injected at i and withdrawn at j.
    pub fn bec(&self, i: usize, j: usize) -> f64 {
        self.dploss(i) - self.dploss(j)
    }

    /// First-order voltage-magnitude profile after moving `dp` (pu, ≥ 0)
    /// from seller bus i to buyer bus j. Fails if `op` is not the state this
    /// bundle was computed for.
    pub fn predict_voltage_change(
        &self,
        op: &OperatingPoint,
        i: usize,
        j: usize,
        dp: f64,
    ) -> Result<VoltagePrediction> {
        if !self.matches(op) {
            return Err(Error::StaleSensitivity);
        }
        Ok(self.predict_voltage_change_unchecked(op, i, j, dp))
    }

    /// Same as [`Self::predict_voltage_change`] without the staleness guard;
    /// the caller asserts that `op` is the bundle's operating point.
    pub fn predict_voltage_change_unchecked(
        &self,
        op: &OperatingPoint,
        i: usize,
        j: usize,
        dp: f64,
    ) -> VoltagePrediction {
        let mut delta = vec![0.0; self.n_nodes];
        let mut magnitudes = Vec::with_capacity(self.n_nodes);
        for m in 0..self.n_nodes {
            delta[m] = dp * (self.dvmag(m, i) - self.dvmag(m, j));
            magnitudes.push(op.voltages[m].norm() + delta[m]);
        }
        VoltagePrediction { delta, magnitudes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_matrices, solve_power_flow, Line};
    use approx::assert_relative_eq;

    fn two_bus(z: Complex64) -> Network {
        Network::radial(
            vec![Line {
                from: 1,
                to: 0,
                impedance: z,
                capacity: 1.0,
            }],
            Complex64::new(1.0, 0.0),
        )
        .unwrap()
    }

    fn five_node() -> Network {
        let z = Complex64::new(0.02, 0.04);
        let mk = |from, to| Line {
            from,
            to,
            impedance: z,
            capacity: 1.0,
        };
        Network::radial(
            vec![mk(1, 0), mk(2, 1), mk(3, 2), mk(4, 1)],
            Complex64::new(1.0, 0.0),
        )
        .unwrap()
    }

    fn loaded_injections() -> Vec<Complex64> {
        vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.04, -0.008),
            Complex64::new(0.06, 0.0),
            Complex64::new(-0.05, -0.01),
            Complex64::new(0.03, 0.0),
        ]
    }

    /// Central finite difference of |V| and P_loss over the full AC power
    /// flow: the independent oracle for the analytic coefficients.
    fn fd_oracle(net: &Network, injections: &[Complex64], h: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mats = build_matrices(net).unwrap();
        let n = net.n_nodes() - 1;
        let mut dvmag = DMatrix::<f64>::zeros(n, n);
        let mut dploss = DVector::<f64>::zeros(n);
        for k in 0..n {
            let mut plus = injections.to_vec();
            plus[k + 1] += Complex64::new(h, 0.0);
            let mut minus = injections.to_vec();
            minus[k + 1] -= Complex64::new(h, 0.0);
            let op_p = solve_power_flow(net, &mats, &plus).unwrap();
            let op_m = solve_power_flow(net, &mats, &minus).unwrap();
            for i in 0..n {
                dvmag[(i, k)] =
                    (op_p.voltages[i + 1].norm() - op_m.voltages[i + 1].norm()) / (2.0 * h);
            }
            dploss[k] = (op_p.p_loss - op_m.p_loss) / (2.0 * h);
        }
        (dvmag, dploss)
    }

    #[test]
    fn derivative_system_residual_is_tiny() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let op = solve_power_flow(&net, &mats, &loaded_injections()).unwrap();
        let dv = voltage_derivatives(&net, &mats, &op).unwrap();
        let n = net.n_nodes() - 1;
        let mut worst = 0.0f64;
        for k in 0..n {
            for i in 0..n {
                let mut w = Complex64::new(0.0, 0.0);
                for j in 0..=n {
                    w += mats.y[(i + 1, j)] * op.voltages[j];
                }
                let mut ydv = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    ydv += mats.y[(i + 1, j + 1)] * dv[(j, k)];
                }
                let lhs = dv[(i, k)].conj() * w + op.voltages[i + 1].conj() * ydv;
                let rhs = if i == k { 1.0 } else { 0.0 };
                worst = worst.max((lhs - Complex64::new(rhs, 0.0)).norm());
            }
        }
        assert!(worst <= 1e-10, "defining-equation residual {worst:.3e}");
    }

    #[test]
    fn lossless_two_bus_no_load_has_zero_magnitude_sensitivity() {
        // |V1| is even in P at no load on a purely reactive line, so the
        // derivative must vanish.
        let net = two_bus(Complex64::new(0.0, 0.05));
        let mats = build_matrices(&net).unwrap();
        let op = solve_power_flow(&net, &mats, &[Complex64::ZERO, Complex64::ZERO]).unwrap();
        let dv = voltage_derivatives(&net, &mats, &op).unwrap();
        let vsc = vsc_magnitude(&dv, &op).unwrap();
        assert!(vsc[(0, 0)].abs() < 1e-12, "got {}", vsc[(0, 0)]);
    }

    #[test]
    fn magnitude_sensitivity_matches_finite_difference() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = loaded_injections();
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let dv = voltage_derivatives(&net, &mats, &op).unwrap();
        let vsc = vsc_magnitude(&dv, &op).unwrap();
        let (fd, _) = fd_oracle(&net, &inj, 1e-5);
        for i in 0..4 {
            for k in 0..4 {
                assert_relative_eq!(vsc[(i, k)], fd[(i, k)], max_relative = 1e-3, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn loss_sensitivity_matches_finite_difference() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = loaded_injections();
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let dv = voltage_derivatives(&net, &mats, &op).unwrap();
        let lsf = loss_sensitivities(&mats, &op, &dv);
        let (_, fd) = fd_oracle(&net, &inj, 1e-5);
        for k in 0..4 {
            assert_relative_eq!(lsf[k], fd[k], max_relative = 1e-3, epsilon = 1e-9);
        }
    }

    #[test]
    fn loss_sensitivity_is_zero_at_no_load() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let op = solve_power_flow(&net, &mats, &[Complex64::ZERO; 5]).unwrap();
        let dv = voltage_derivatives(&net, &mats, &op).unwrap();
        let lsf = loss_sensitivities(&mats, &op, &dv);
        for k in 0..4 {
            assert!(lsf[k].abs() < 1e-12, "entry {k} = {}", lsf[k]);
        }
    }

    #[test]
    fn radial_isf_entries_are_signed_indicators() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let isf = injection_shift_factors(&mats).unwrap();
        for node in 1..5 {
            let path: Vec<usize> = net.root_path(node);
            for line in 0..4 {
                let expect = if path.contains(&line) { 1.0 } else { 0.0 };
                assert_relative_eq!(isf.value(line, node), expect, epsilon = 1e-9);
            }
        }
        // Everything injected anywhere reaches the slack over line 0.
        for node in 1..5 {
            assert_relative_eq!(isf.value(0, node), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn meshed_loop_splits_injection_by_path_susceptance() {
        // Triangle 0-1-2 with equal reactances: an injection at node 1
        // returns to the slack 2/3 over the direct line and 1/3 over the
        // two-hop path.
        let mut incidence = DMatrix::<f64>::zeros(3, 3);
        // line 0: 1 -> 0, line 1: 2 -> 1, line 2: 2 -> 0.
        incidence[(0, 1)] = 1.0;
        incidence[(0, 0)] = -1.0;
        incidence[(1, 2)] = 1.0;
        incidence[(1, 1)] = -1.0;
        incidence[(2, 2)] = 1.0;
        incidence[(2, 0)] = -1.0;
        let b = DVector::from_element(3, 1.0);
        let psi = isf_from_incidence(&incidence, &b).unwrap();
        assert_relative_eq!(psi[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(psi[(1, 0)], -1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(psi[(2, 0)], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ptdf_of_leaf_to_leaf_trade_covers_exactly_the_tree_path() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let isf = injection_shift_factors(&mats).unwrap();
        // Trade 3 -> 4: up (3,2) and (2,1), down (4,1); slack line unused.
        let phi = isf.ptdf(3, 4);
        assert_relative_eq!(phi[2], 1.0, epsilon = 1e-9);
        assert_relative_eq!(phi[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(phi[3], -1.0, epsilon = 1e-9);
        assert_relative_eq!(phi[0], 0.0, epsilon = 1e-9);

        // Antisymmetry and the self-trade.
        let rev = isf.ptdf(4, 3);
        for l in 0..4 {
            assert_relative_eq!(phi[l], -rev[l], epsilon = 1e-12);
        }
        assert!(isf.ptdf(2, 2).iter().all(|&x| x == 0.0));

        // PTDF against the generic tree-path predicate, any pair.
        for i in 1..5 {
            for j in 1..5 {
                let phi = isf.ptdf(i, j);
                let path = net.path_between(i, j);
                for (l, value) in phi.iter().enumerate() {
                    let expect = path
                        .iter()
                        .find(|(idx, _)| *idx == l)
                        .map(|(_, sign)| *sign)
                        .unwrap_or(0.0);
                    assert_relative_eq!(*value, expect, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn bec_matches_bilateral_finite_difference() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = loaded_injections();
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let bundle = SensitivityBundle::compute(&net, &mats, &op).unwrap();

        let h = 1e-3;
        let transfer_loss = |tau: f64| {
            let mut moved = inj.clone();
            moved[3] += Complex64::new(tau, 0.0);
            moved[4] -= Complex64::new(tau, 0.0);
            solve_power_flow(&net, &mats, &moved).unwrap().p_loss
        };
        let fd = (transfer_loss(h) - transfer_loss(-h)) / (2.0 * h);
        assert_relative_eq!(bundle.bec(3, 4), fd, max_relative = 1e-2);
        assert_relative_eq!(bundle.bec(3, 4), -bundle.bec(4, 3), epsilon = 1e-15);
        assert_eq!(bundle.bec(2, 2), 0.0);
    }

    #[test]
    fn voltage_prediction_tracks_resolved_power_flow() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = loaded_injections();
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let bundle = SensitivityBundle::compute(&net, &mats, &op).unwrap();

        let dp = 0.02;
        let pred = bundle.predict_voltage_change(&op, 3, 4, dp).unwrap();
        let mut moved = inj.clone();
        moved[3] += Complex64::new(dp, 0.0);
        moved[4] -= Complex64::new(dp, 0.0);
        let op2 = solve_power_flow(&net, &mats, &moved).unwrap();
        for m in 0..5 {
            assert!(
                (pred.magnitudes[m] - op2.voltages[m].norm()).abs() < 5e-4,
                "node {m}: predicted {} vs solved {}",
                pred.magnitudes[m],
                op2.voltages[m].norm()
            );
        }

        // Exact linearity in ΔP and the self-trade identity.
        let pred2 = bundle.predict_voltage_change(&op, 3, 4, 2.0 * dp).unwrap();
        for m in 0..5 {
            assert_eq!(pred2.delta[m], 2.0 * pred.delta[m]);
        }
        let self_trade = bundle.predict_voltage_change(&op, 3, 3, dp).unwrap();
        assert!(self_trade.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn stale_bundle_is_rejected() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = loaded_injections();
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let bundle = SensitivityBundle::compute(&net, &mats, &op).unwrap();

        let mut other_inj = inj.clone();
        other_inj[2] += Complex64::new(0.01, 0.0);
        let op2 = solve_power_flow(&net, &mats, &other_inj).unwrap();
        let err = bundle.predict_voltage_change(&op2, 3, 4, 0.01).unwrap_err();
        assert!(matches!(err, Error::StaleSensitivity));
        // The explicit override still answers.
        let _ = bundle.predict_voltage_change_unchecked(&op2, 3, 4, 0.01);
    }

    #[test]
    fn slack_indexed_coefficients_are_zero() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let op = solve_power_flow(&net, &mats, &loaded_injections()).unwrap();
        let bundle = SensitivityBundle::compute(&net, &mats, &op).unwrap();
        for m in 0..5 {
            assert_eq!(bundle.dvmag(m, 0), 0.0);
            assert_eq!(bundle.dvmag(0, m), 0.0);
        }
        assert_eq!(bundle.dploss(0), 0.0);
        assert_eq!(bundle.bec(0, 0), 0.0);
    }
}
