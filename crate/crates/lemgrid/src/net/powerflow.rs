//! Fixed-point AC power flow for radial feeders.
//!
//! The solver iterates V_L ← Y_LL⁻¹ (conj(S_L / V_L) − Y_L0 V_0) from a flat
//! start, with Y_LL factorized once. On LV trees this contracts quickly and,
//! unlike Newton variants, has no step-size or initialization knobs that
//! could make runs non-deterministic.

use super::{Network, NetworkMatrices};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Convergence threshold on max |S_i − V_i (Σ_j Y_ij V_j)*| (pu).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// One solved network state.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    /// Complex voltage per node (pu); index 0 is the slack.
    pub voltages: Vec<Complex64>,
    /// Net complex injection per node (pu, generation positive); the slack
    /// entry is filled in by the solver.
    pub injections: Vec<Complex64>,
    /// Sending-end flow S_ij per line, measured at the child node and
    /// positive toward the root.
    pub line_flows: Vec<Complex64>,
    /// Total real losses (pu).
    pub p_loss: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl OperatingPoint {
    pub fn voltage_magnitudes(&self) -> Vec<f64> {
        self.voltages.iter().map(|v| v.norm()).collect()
    }
}

/// Per-line flow summary for a solved state.
#[derive(Debug, Clone)]
pub struct LineFlowReport {
    /// Child-end flow toward the parent.
    pub sending: Vec<Complex64>,
    /// Parent-end flow toward the child (so sending + receiving = loss).
    pub receiving: Vec<Complex64>,
    pub losses: Vec<f64>,
    /// max(|S| at either end) / capacity.
    pub loadings: Vec<f64>,
}

/// Power-flow solver with the slack-reduced admittance factorized once, for
/// repeated solves on the same network.
pub struct PowerFlowSolver {
    y: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    y_l0: DVector<Complex64>,
    v0: Complex64,
    n_nodes: usize,
    options: SolverOptions,
}

impl PowerFlowSolver {
    pub fn new(net: &Network, mats: &NetworkMatrices) -> Result<Self> {
        Self::with_options(net, mats, SolverOptions::default())
    }

    pub fn with_options(
        net: &Network,
        mats: &NetworkMatrices,
        options: SolverOptions,
    ) -> Result<Self> {
        let n = net.n_nodes();
        let y_ll = mats.y.view((1, 1), (n - 1, n - 1)).into_owned();
        let lu = y_ll.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("slack-reduced admittance matrix".into()));
        }
        let y_l0 = mats.y.view((1, 0), (n - 1, 1)).column(0).into_owned();
        Ok(PowerFlowSolver {
            y: mats.y.clone(),
            lu,
            y_l0,
            v0: net.slack_voltage(),
            n_nodes: n,
            options,
        })
    }

    /// Solve for the given injections (pu, generation positive). The slice
    /// covers every node; entry 0 is ignored and replaced by the computed
    /// slack injection.
    pub fn solve(&self, injections: &[Complex64]) -> Result<OperatingPoint> {
        let start = DVector::from_element(self.n_nodes - 1, self.v0);
        self.iterate(injections, start)
    }

    /// Like [`Self::solve`] but starting the fixed point from `start`
    /// (full-length voltages, slack included), typically the previous
    /// operating point when re-solving after a small injection change.
    /// Converges to the same state as a flat start, just in fewer sweeps.
    pub fn solve_from(
        &self,
        injections: &[Complex64],
        start: &[Complex64],
    ) -> Result<OperatingPoint> {
        assert_eq!(start.len(), self.n_nodes, "one starting voltage per node");
        let v = DVector::from_fn(self.n_nodes - 1, |i, _| start[i + 1]);
        self.iterate(injections, v)
    }

    fn iterate(
        &self,
        injections: &[Complex64],
        mut v: DVector<Complex64>,
    ) -> Result<OperatingPoint> {
        let n = self.n_nodes;
        assert_eq!(injections.len(), n, "one injection per node expected");
        let s_l = DVector::from_fn(n - 1, |i, _| injections[i + 1]);

        let mut iterations = 0;
        loop {
            // Σ_j Y_ij V_j for the non-slack rows.
            let w = self.y_ll_times(&v) + &self.y_l0 * self.v0;
            let mut residual = 0.0f64;
            for i in 0..n - 1 {
                let mismatch = (s_l[i] - v[i] * w[i].conj()).norm();
                residual = residual.max(mismatch);
            }
            if residual <= self.options.tolerance {
                return Ok(self.finish(injections, v, iterations, residual));
            }
            if iterations >= self.options.max_iterations {
                return Err(Error::Diverged {
                    iterations,
                    residual,
                });
            }
            for i in 0..n - 1 {
                if v[i].norm() < 1e-6 {
                    return Err(Error::Diverged {
                        iterations,
                        residual,
                    });
                }
            }
            let rhs = DVector::from_fn(n - 1, |i, _| {
                (s_l[i] / v[i]).conj() - self.y_l0[i] * self.v0
            });
            v = self
                .lu
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("slack-reduced admittance matrix".into()))?;
            iterations += 1;
        }
    }

    fn y_ll_times(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let n = self.n_nodes;
        DVector::from_fn(n - 1, |i, _| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n - 1 {
                acc += self.y[(i + 1, j + 1)] * v[j];
            }
            acc
        })
    }

    fn finish(
        &self,
        injections: &[Complex64],
        v: DVector<Complex64>,
        iterations: usize,
        residual: f64,
    ) -> OperatingPoint {
        let n = self.n_nodes;
        let mut voltages = Vec::with_capacity(n);
        voltages.push(self.v0);
        voltages.extend(v.iter().copied());

        let mut w0 = Complex64::new(0.0, 0.0);
        for j in 0..n {
            w0 += self.y[(0, j)] * voltages[j];
        }
        let mut full_inj = injections.to_vec();
        full_inj[0] = self.v0 * w0.conj();

        OperatingPoint {
            line_flows: Vec::new(),
            voltages,
            injections: full_inj,
            p_loss: 0.0,
            iterations,
            residual,
        }
    }
}

/// Solve power flow on `net`, building and discarding the matrices. Use
/// [`PowerFlowSolver`] directly when solving the same network repeatedly.
pub fn solve_power_flow(
    net: &Network,
    mats: &NetworkMatrices,
    injections: &[Complex64],
) -> Result<OperatingPoint> {
    let solver = PowerFlowSolver::new(net, mats)?;
    let mut op = solver.solve(injections)?;
    let report = line_flows(net, &op.voltages);
    op.p_loss = report.losses.iter().sum();
    op.line_flows = report.sending;
    Ok(op)
}

/// Compute per-line flows from solved voltages.
pub fn line_flows(net: &Network, voltages: &[Complex64]) -> LineFlowReport {
    let mut sending = Vec::with_capacity(net.lines().len());
    let mut receiving = Vec::with_capacity(net.lines().len());
    let mut losses = Vec::with_capacity(net.lines().len());
    let mut loadings = Vec::with_capacity(net.lines().len());
    for l in net.lines() {
        let current = (voltages[l.from] - voltages[l.to]) / l.impedance;
        let s_f = voltages[l.from] * current.conj();
        let s_r = -voltages[l.to] * current.conj();
        losses.push((s_f + s_r).re);
        loadings.push(s_f.norm().max(s_r.norm()) / l.capacity);
        sending.push(s_f);
        receiving.push(s_r);
    }
    LineFlowReport {
        sending,
        receiving,
        losses,
        loadings,
    }
}

/// max(|S| at either end)/capacity per line for a solved operating point.
pub fn line_loadings(net: &Network, op: &OperatingPoint) -> Vec<f64> {
    line_flows(net, &op.voltages).loadings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_matrices, Line};
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

    /// Exact complex bus-1 voltage of a 2-bus network: from
    /// Z S₁* = |V₁|² − V₁* V₀, the squared magnitude u = |V₁|² solves
    /// u v₀² = (u − α)² + β² with α = Re(Z S₁*), β = Im(Z S₁*);
    /// the physical (high-voltage) root then gives V₁ = conj(u − Z S₁*)/V₀.
    fn two_bus_exact(z: Complex64, s1: Complex64, v0: f64) -> Complex64 {
        let zs = z * s1.conj();
        let (alpha, beta) = (zs.re, zs.im);
        let b = 2.0 * alpha + v0 * v0;
        let disc = b * b - 4.0 * (alpha * alpha + beta * beta);
        assert!(disc >= 0.0, "no real solution: load beyond loadability");
        let u = (b + disc.sqrt()) / 2.0;
        (Complex64::new(u, 0.0) - zs).conj() / v0
    }

    #[test]
    fn no_load_gives_flat_profile() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = vec![Complex64::new(0.0, 0.0); net.n_nodes()];
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        for v in &op.voltages {
            assert_eq!(*v, Complex64::new(1.0, 0.0));
        }
        assert_eq!(op.iterations, 0);
        assert!(op.p_loss.abs() < 1e-12);
        for f in &op.line_flows {
            assert!(f.norm() < 1e-12);
        }
    }

    #[test]
    fn two_bus_load_matches_closed_form() {
        let z = Complex64::new(0.01, 0.01);
        let net = two_bus(z);
        let mats = build_matrices(&net).unwrap();
        let s1 = Complex64::new(-0.1, -0.02);
        let op = solve_power_flow(&net, &mats, &[Complex64::new(0.0, 0.0), s1]).unwrap();
        let exact = two_bus_exact(z, s1, 1.0);
        assert_relative_eq!(op.voltages[1].norm(), exact.norm(), epsilon = 1e-6);
        assert_relative_eq!(op.voltages[1].re, exact.re, epsilon = 1e-6);
        assert_relative_eq!(op.voltages[1].im, exact.im, epsilon = 1e-6);
        // Loss equals |I|² R.
        let i = (op.voltages[1] - op.voltages[0]) / z;
        assert_relative_eq!(op.p_loss, i.norm_sqr() * z.re, epsilon = 1e-9);
    }

    #[test]
    fn two_bus_generation_raises_voltage() {
        let z = Complex64::new(0.01, 0.01);
        let net = two_bus(z);
        let mats = build_matrices(&net).unwrap();
        let s1 = Complex64::new(0.2, 0.0);
        let op = solve_power_flow(&net, &mats, &[Complex64::new(0.0, 0.0), s1]).unwrap();
        let exact = two_bus_exact(z, s1, 1.0);
        assert!(op.voltages[1].norm() > 1.0);
        assert_relative_eq!(op.voltages[1].norm(), exact.norm(), epsilon = 1e-6);
    }

    #[test]
    fn injections_balance_losses() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.05, -0.01),
            Complex64::new(0.08, 0.0),
            Complex64::new(-0.03, 0.0),
            Complex64::new(0.02, 0.005),
        ];
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let total_p: f64 = op.injections.iter().map(|s| s.re).sum();
        assert_relative_eq!(total_p, op.p_loss, epsilon = 1e-8);
        assert_eq!(op.voltages[0], net.slack_voltage());
    }

    #[test]
    fn single_leaf_load_flows_only_on_root_path() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let mut inj = vec![Complex64::new(0.0, 0.0); 5];
        inj[3] = Complex64::new(-0.1, 0.0);
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        // Root path of node 3 is lines 2, 1, 0; line 3 (4-1) stays dark.
        for idx in [2usize, 1, 0] {
            assert!(op.line_flows[idx].re.abs() > 0.09);
        }
        assert!(op.line_flows[3].norm() < 1e-9);
        // Each path line carries the load plus downstream losses, so
        // magnitudes grow toward the root (flow at child end is negative:
        // power moves from parent to child here).
        let report = line_flows(&net, &op.voltages);
        assert!(report.receiving[0].re > -report.sending[0].re);
    }

    #[test]
    fn per_line_losses_sum_to_total() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.04, 0.0),
            Complex64::new(0.06, 0.0),
            Complex64::new(-0.05, -0.01),
            Complex64::new(0.03, 0.0),
        ];
        let op = solve_power_flow(&net, &mats, &inj).unwrap();
        let report = line_flows(&net, &op.voltages);
        let sum: f64 = report.losses.iter().sum();
        assert_relative_eq!(sum, op.p_loss, epsilon = 1e-9);
        for loss in &report.losses {
            assert!(*loss >= 0.0);
        }
    }

    #[test]
    fn unsolvable_load_reports_divergence() {
        let net = two_bus(Complex64::new(0.01, 0.01));
        let mats = build_matrices(&net).unwrap();
        let err = solve_power_flow(
            &net,
            &mats,
            &[Complex64::new(0.0, 0.0), Complex64::new(-100.0, 0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn identical_inputs_give_bit_identical_states() {
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let inj = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.037, -0.004),
            Complex64::new(0.051, 0.0),
            Complex64::new(-0.012, 0.0),
            Complex64::new(0.02, 0.001),
        ];
        let a = solve_power_flow(&net, &mats, &inj).unwrap();
        let b = solve_power_flow(&net, &mats, &inj).unwrap();
        assert_eq!(a.voltages, b.voltages);
        assert_eq!(a.line_flows, b.line_flows);
        assert_eq!(a.p_loss.to_bits(), b.p_loss.to_bits());
    }
}
