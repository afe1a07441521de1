//! Network permission layer between the market and the feeder.
//!
//! Every provisional trade is screened before it clears: the expected
//! voltage profile (via the magnitude sensitivities) and line flows (via the
//! shift factors) after the bilateral transfer must stay inside guarded
//! limits. Approved transfers are committed to the running network state,
//! the power flow is re-solved, and sensitivities are refreshed so the next
//! screening starts from reality, not from a drifting linearization.
//! Approved trades are charged for the losses and congestion they cause;
//! prosumers whose smallest possible export would already violate a limit
//! are handed a blocking signal so they stop shouting asks.

use crate::error::{Error, Result};
use crate::market::{GateDecision, ProvisionalTrade, TradeGate, TraderId};
use crate::net::{
    build_matrices, line_flows, Network, NetworkMatrices, OperatingPoint, PowerFlowSolver,
};
use crate::sensitivity::{injection_shift_factors, SensitivityBundle, ShiftFactors};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Operating limits and pricing knobs of the permission layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermissionConfig {
    /// Statutory voltage band, pu.
    pub v_min: f64,
    pub v_max: f64,
    /// Margin subtracted from both voltage limits when screening
    /// predictions, absorbing linearization error (pu).
    pub voltage_guard: f64,
    /// Fractional margin kept free on every line capacity.
    pub capacity_guard: f64,
    /// Congestion price γ (currency per kWh per unit of summed |shift
    /// factor|); 0 turns congestion into a pure feasibility check.
    pub congestion_price: f64,
    /// Probe size behind the blocking signal: the smallest ask a prosumer
    /// could submit (kWh).
    pub min_order_kwh: f64,
    /// Fraction of network charges borne by the buyer.
    pub buyer_share: f64,
}

impl Default for PermissionConfig {
    fn default() -> Self {
        Self {
            v_min: 0.94,
            v_max: 1.10,
            voltage_guard: 0.005,
            capacity_guard: 0.02,
            congestion_price: 0.0,
            min_order_kwh: 0.05,
            buyer_share: 0.5,
        }
    }
}

/// Network charges of one approved transfer.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostAllocation {
    /// Extra losses the transfer causes (kWh); negative when it relieves
    /// the feeder.
    pub loss_energy_kwh: f64,
    pub loss_charge: f64,
    pub congestion_charge: f64,
    pub buyer_share: f64,
}

impl CostAllocation {
    pub fn zero(buyer_share: f64) -> Self {
        Self {
            loss_energy_kwh: 0.0,
            loss_charge: 0.0,
            congestion_charge: 0.0,
            buyer_share,
        }
    }

    pub fn total(&self) -> f64 {
        self.loss_charge + self.congestion_charge
    }

    pub fn buyer_part(&self) -> f64 {
        self.total() * self.buyer_share
    }

    pub fn seller_part(&self) -> f64 {
        self.total() - self.buyer_part()
    }
}

/// Screening outcome of one bilateral transfer.
#[derive(Debug, Clone)]
pub enum TransferVerdict {
    Approved {
        costs: CostAllocation,
        /// Largest predicted |Δ|V|| across nodes (pu).
        predicted_dv: f64,
        /// Largest re-solved |Δ|V|| after the commit (pu).
        actual_dv: f64,
    },
    Rejected {
        reason: String,
    },
}

/// Audit record of one screening decision.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictRecord {
    pub seq: usize,
    pub slot: usize,
    pub time: f64,
    pub seller_node: usize,
    pub buyer_node: usize,
    pub kwh: f64,
    pub approved: bool,
    /// Binding constraint on rejection.
    pub constraint: Option<String>,
    pub predicted_dv: f64,
    pub actual_dv: Option<f64>,
    pub loss_charge: f64,
    pub congestion_charge: f64,
}

/// One transition of a household blocking flag.
#[derive(Debug, Clone, Serialize)]
pub struct BlockingEvent {
    pub slot: usize,
    pub time: f64,
    pub node: usize,
    pub blocked: bool,
}

/// Running totals of collected network charges.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CostLedger {
    pub loss: f64,
    pub congestion: f64,
}

impl CostLedger {
    pub fn total(&self) -> f64 {
        self.loss + self.congestion
    }
}

/// A residual quantity settled with the retailer after the window closes.
#[derive(Debug, Clone)]
pub struct ResidualOrder {
    pub household: String,
    pub node: usize,
    pub kwh: f64,
}

/// Cash flow of one settled residual.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualOutcome {
    pub household: String,
    pub node: usize,
    pub kwh: f64,
    /// Positive = money received by the household.
    pub cash: f64,
    pub spilled: bool,
}

/// Retailer settlement of one slot's leftovers.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Settlement {
    pub imports: Vec<ResidualOutcome>,
    pub exports: Vec<ResidualOutcome>,
    pub import_cost: f64,
    pub export_income: f64,
    pub spilled_kwh: f64,
}

/// Live network state between the market and the feeder: committed
/// injections, the matching operating point and sensitivities, blocking
/// flags, and the audit trail.
pub struct PermissionState {
    net: Network,
    solver: PowerFlowSolver,
    mats: NetworkMatrices,
    config: PermissionConfig,
    slot_hours: f64,
    /// Committed injections (pu, full length; slack entry derived).
    injections: Vec<Complex64>,
    op: OperatingPoint,
    /// Topology shift factors, shared into every refreshed bundle.
    isf: Arc<ShiftFactors>,
    bundle: SensitivityBundle,
    slot: usize,
    /// Price of one kWh of losses this slot (defaults to the ToU rate).
    loss_price: f64,
    trader_nodes: Vec<usize>,
    blocked: Vec<bool>,
    verdicts: Vec<VerdictRecord>,
    blocking_log: Vec<BlockingEvent>,
    ledger: CostLedger,
    next_seq: usize,
}

impl PermissionState {
    pub fn new(net: &Network, config: PermissionConfig, slot_hours: f64) -> Result<Self> {
        if !(slot_hours > 0.0) {
            return Err(Error::Invalid("slot length must be positive".into()));
        }
        if !(config.v_min < config.v_max)
            || config.voltage_guard < 0.0
            || !(0.0..1.0).contains(&config.capacity_guard)
            || !(0.0..=1.0).contains(&config.buyer_share)
        {
            return Err(Error::Invalid(format!(
                "permission config out of range: {config:?}"
            )));
        }
        let mats = build_matrices(net)?;
        let solver = PowerFlowSolver::new(net, &mats)?;
        let injections = vec![Complex64::new(0.0, 0.0); net.n_nodes()];
        let mut op = solver.solve(&injections)?;
        let report = line_flows(net, &op.voltages);
        op.p_loss = report.losses.iter().sum();
        op.line_flows = report.sending;
        let isf = Arc::new(injection_shift_factors(&mats)?);
        let bundle =
            SensitivityBundle::compute_with_shift_factors(net, &mats, &op, Arc::clone(&isf))?;
        let n = net.n_nodes();
        Ok(Self {
            net: net.clone(),
            solver,
            mats,
            config,
            slot_hours,
            injections,
            op,
            isf,
            bundle,
            slot: 0,
            loss_price: 0.0,
            trader_nodes: Vec::new(),
            blocked: vec![false; n],
            verdicts: Vec::new(),
            blocking_log: Vec::new(),
            ledger: CostLedger::default(),
            next_seq: 0,
        })
    }

    /// Re-solve the power flow at the committed injections and refresh the
    /// sensitivity bundle. Starts from the previous voltages — after one
    /// committed trade the state barely moves — and reuses the topology
    /// shift factors.
    fn refresh(&mut self) -> Result<()> {
        let mut op = self
            .solver
            .solve_from(&self.injections, &self.op.voltages)?;
        let report = line_flows(&self.net, &op.voltages);
        op.p_loss = report.losses.iter().sum();
        op.line_flows = report.sending;
        self.bundle = SensitivityBundle::compute_with_shift_factors(
            &self.net,
            &self.mats,
            &op,
            Arc::clone(&self.isf),
        )?;
        self.op = op;
        Ok(())
    }

    /// Open a new slot on top of the given committed base injections
    /// (pu, one entry per node; the slack entry is ignored).
    pub fn begin_slot(
        &mut self,
        slot: usize,
        time: f64,
        loss_price: f64,
        base_injections: &[Complex64],
    ) -> Result<()> {
        if base_injections.len() != self.net.n_nodes() {
            return Err(Error::Invalid(format!(
                "expected {} base injections, got {}",
                self.net.n_nodes(),
                base_injections.len()
            )));
        }
        self.slot = slot;
        self.loss_price = loss_price;
        self.injections.copy_from_slice(base_injections);
        self.refresh()?;
        self.update_blocking(time);
        Ok(())
    }

    /// Map market trader ids to network nodes for the coming window.
    pub fn bind_traders(&mut self, nodes: Vec<usize>) {
        self.trader_nodes = nodes;
    }

    /// Average-power equivalent (pu) of an energy block over one slot.
    pub fn kwh_to_dp(&self, kwh: f64) -> f64 {
        self.net.kw_to_pu(kwh / self.slot_hours)
    }

    fn guarded_band(&self) -> (f64, f64) {
        (
            self.config.v_min + self.config.voltage_guard,
            self.config.v_max - self.config.voltage_guard,
        )
    }

    /// Distance outside the guarded band (zero when inside).
    fn band_excess(x: f64, lo: f64, hi: f64) -> f64 {
        (x - hi).max(lo - x).max(0.0)
    }

    /// Screen a transfer of `dp` pu injected at `i` and withdrawn at `j`
    /// against the predicted voltages and line flows. Returns the binding
    /// constraint, or None when the transfer is admissible. A node or line
    /// already outside its guarded limit in the base state only rejects the
    /// transfer if the prediction makes it strictly worse.
    fn screen(&self, i: usize, j: usize, dp: f64) -> Result<Option<String>> {
        let predicted = self.bundle.predict_voltage_change(&self.op, i, j, dp)?;
        let base = self.op.voltage_magnitudes();
        let (lo, hi) = self.guarded_band();
        for m in 1..self.net.n_nodes() {
            let after = Self::band_excess(predicted.magnitudes[m], lo, hi);
            if after > 0.0 && after >= Self::band_excess(base[m], lo, hi) - 1e-12 {
                return Ok(Some(format!(
                    "voltage at node {m}: predicted {:.5} pu outside [{lo:.4}, {hi:.4}]",
                    predicted.magnitudes[m]
                )));
            }
        }
        let isf = self.bundle.shift_factors();
        for (l, line) in self.net.lines().iter().enumerate() {
            let phi = isf.value(l, i) - isf.value(l, j);
            let before = self.op.line_flows[l].re;
            let after = before + phi * dp;
            let cap = line.capacity * (1.0 - self.config.capacity_guard);
            if after.abs() > cap && after.abs() >= before.abs() - 1e-12 {
                return Ok(Some(format!(
                    "flow on line {l} ({}->{}): predicted {:.4} pu exceeds {:.4}",
                    line.from,
                    line.to,
                    after.abs(),
                    cap
                )));
            }
        }
        Ok(None)
    }

    /// Loss and congestion charges of a transfer of `kwh` from node `i` to
    /// node `j` at the current operating point.
    pub fn allocate_costs(&self, i: usize, j: usize, kwh: f64) -> CostAllocation {
        let loss_energy_kwh = self.bundle.bec(i, j) * kwh;
        let isf = self.bundle.shift_factors();
        let phi_sum: f64 = (0..self.net.lines().len())
            .map(|l| (isf.value(l, i) - isf.value(l, j)).abs())
            .sum();
        CostAllocation {
            loss_energy_kwh,
            loss_charge: loss_energy_kwh * self.loss_price,
            congestion_charge: self.config.congestion_price * kwh * phi_sum,
            buyer_share: self.config.buyer_share,
        }
    }

    fn record(&mut self, mut rec: VerdictRecord) {
        rec.seq = self.next_seq;
        self.next_seq += 1;
        self.verdicts.push(rec);
    }

    /// Validate and, if admissible, commit a transfer of `kwh` injected at
    /// node `i` and consumed at node `j` (0 = the feeder head).
    pub fn validate_transfer(
        &mut self,
        i: usize,
        j: usize,
        kwh: f64,
        time: f64,
    ) -> Result<TransferVerdict> {
        if !(kwh > 0.0) {
            return Err(Error::Invalid(format!("transfer of {kwh} kWh")));
        }
        let slot = self.slot;
        if i == j {
            // Same-bus transfer never touches the network.
            let costs = CostAllocation::zero(self.config.buyer_share);
            self.record(VerdictRecord {
                seq: 0,
                slot,
                time,
                seller_node: i,
                buyer_node: j,
                kwh,
                approved: true,
                constraint: None,
                predicted_dv: 0.0,
                actual_dv: Some(0.0),
                loss_charge: 0.0,
                congestion_charge: 0.0,
            });
            return Ok(TransferVerdict::Approved {
                costs,
                predicted_dv: 0.0,
                actual_dv: 0.0,
            });
        }

        let dp = self.kwh_to_dp(kwh);
        let predicted = self.bundle.predict_voltage_change(&self.op, i, j, dp)?;
        let predicted_dv = predicted.delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if let Some(constraint) = self.screen(i, j, dp)? {
            self.record(VerdictRecord {
                seq: 0,
                slot,
                time,
                seller_node: i,
                buyer_node: j,
                kwh,
                approved: false,
                constraint: Some(constraint.clone()),
                predicted_dv,
                actual_dv: None,
                loss_charge: 0.0,
                congestion_charge: 0.0,
            });
            return Ok(TransferVerdict::Rejected { reason: constraint });
        }

        // Price at the pre-commit operating point, then commit and re-solve.
        let costs = self.allocate_costs(i, j, kwh);
        let before = self.op.voltage_magnitudes();
        if i > 0 {
            self.injections[i].re += dp;
        }
        if j > 0 {
            self.injections[j].re -= dp;
        }
        if let Err(e) = self.refresh() {
            // Roll back; the linearized screen saw no violation but the AC
            // solve failed, so void the trade.
            if i > 0 {
                self.injections[i].re -= dp;
            }
            if j > 0 {
                self.injections[j].re += dp;
            }
            self.refresh()?;
            let reason = format!("network fault after commit: {e}");
            self.record(VerdictRecord {
                seq: 0,
                slot,
                time,
                seller_node: i,
                buyer_node: j,
                kwh,
                approved: false,
                constraint: Some(reason.clone()),
                predicted_dv,
                actual_dv: None,
                loss_charge: 0.0,
                congestion_charge: 0.0,
            });
            return Ok(TransferVerdict::Rejected { reason });
        }

        let after = self.op.voltage_magnitudes();
        let actual_dv = before
            .iter()
            .zip(&after)
            .fold(0.0f64, |a, (b, x)| a.max((x - b).abs()));
        self.ledger.loss += costs.loss_charge;
        self.ledger.congestion += costs.congestion_charge;
        self.record(VerdictRecord {
            seq: 0,
            slot,
            time,
            seller_node: i,
            buyer_node: j,
            kwh,
            approved: true,
            constraint: None,
            predicted_dv,
            actual_dv: Some(actual_dv),
            loss_charge: costs.loss_charge,
            congestion_charge: costs.congestion_charge,
        });
        self.update_blocking(time);
        Ok(TransferVerdict::Approved {
            costs,
            predicted_dv,
            actual_dv,
        })
    }

    /// Recompute the per-node blocking flags: a node is blocked when even a
    /// minimum-size export probe (withdrawn at the feeder head) would
    /// violate a limit. Transitions are appended to the blocking log.
    pub fn update_blocking(&mut self, time: f64) {
        let probe = self.kwh_to_dp(self.config.min_order_kwh);
        for node in 1..self.net.n_nodes() {
            let blocked = matches!(self.screen(node, 0, probe), Ok(Some(_)));
            if blocked != self.blocked[node] {
                self.blocking_log.push(BlockingEvent {
                    slot: self.slot,
                    time,
                    node,
                    blocked,
                });
                self.blocked[node] = blocked;
            }
        }
    }

    pub fn node_blocked(&self, node: usize) -> bool {
        self.blocked[node]
    }

    /// Settle the window's leftovers with the retailer: residual demand is
    /// imported at the ToU rate unconditionally (consumption is never
    /// gated), then residual surplus is exported at the FiT rate subject to
    /// the same screening as a trade with the feeder head; blocked or
    /// rejected surplus is spilled.
    pub fn settle_retailer_residuals(
        &mut self,
        buys: &[ResidualOrder],
        sells: &[ResidualOrder],
        tou: f64,
        fit: f64,
        time: f64,
    ) -> Result<Settlement> {
        // Retail flows are priced by the tariffs alone; screening them must
        // not accrue market network charges.
        let saved = (self.loss_price, self.config.congestion_price);
        self.loss_price = 0.0;
        self.config.congestion_price = 0.0;
        let out = self.settle_inner(buys, sells, tou, fit, time);
        self.loss_price = saved.0;
        self.config.congestion_price = saved.1;
        out
    }

    fn settle_inner(
        &mut self,
        buys: &[ResidualOrder],
        sells: &[ResidualOrder],
        tou: f64,
        fit: f64,
        time: f64,
    ) -> Result<Settlement> {
        let mut out = Settlement::default();
        for b in buys {
            if !(b.kwh > 0.0) {
                continue;
            }
            let dp = self.kwh_to_dp(b.kwh);
            self.injections[b.node].re -= dp;
            out.import_cost += b.kwh * tou;
            out.imports.push(ResidualOutcome {
                household: b.household.clone(),
                node: b.node,
                kwh: b.kwh,
                cash: -b.kwh * tou,
                spilled: false,
            });
        }
        if !out.imports.is_empty() {
            self.refresh()?;
            self.update_blocking(time);
        }

        for s in sells {
            if !(s.kwh > 0.0) {
                continue;
            }
            let approved = !self.blocked[s.node]
                && matches!(
                    self.validate_transfer(s.node, 0, s.kwh, time)?,
                    TransferVerdict::Approved { .. }
                );
            if approved {
                out.export_income += s.kwh * fit;
            } else {
                out.spilled_kwh += s.kwh;
            }
            out.exports.push(ResidualOutcome {
                household: s.household.clone(),
                node: s.node,
                kwh: s.kwh,
                cash: if approved { s.kwh * fit } else { 0.0 },
                spilled: !approved,
            });
        }
        Ok(out)
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.op
    }

    pub fn bundle(&self) -> &SensitivityBundle {
        &self.bundle
    }

    pub fn committed_injections(&self) -> &[Complex64] {
        &self.injections
    }

    pub fn config(&self) -> &PermissionConfig {
        &self.config
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger
    }

    pub fn verdicts(&self) -> &[VerdictRecord] {
        &self.verdicts
    }

    pub fn blocking_log(&self) -> &[BlockingEvent] {
        &self.blocking_log
    }
}

impl TradeGate for PermissionState {
    fn validate(&mut self, trade: &ProvisionalTrade) -> GateDecision {
        let i = self.trader_nodes[trade.seller];
        let j = self.trader_nodes[trade.buyer];
        match self.validate_transfer(i, j, trade.quantity, trade.time) {
            Ok(TransferVerdict::Approved { costs, .. }) => GateDecision::Approve {
                loss_charge: costs.loss_charge,
                congestion_charge: costs.congestion_charge,
            },
            Ok(TransferVerdict::Rejected { reason }) => GateDecision::Reject { reason },
            Err(e) => GateDecision::Reject {
                reason: format!("screening failed: {e}"),
            },
        }
    }

    fn seller_blocked(&self, trader: TraderId) -> bool {
        self.blocked[self.trader_nodes[trader]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{solve_power_flow, Line};
    use approx::assert_relative_eq;

    fn feeder(lines: &[(usize, usize, f64)]) -> Network {
        let z = Complex64::new(0.02, 0.04);
        Network::radial(
            lines
                .iter()
                .map(|&(from, to, capacity)| Line {
                    from,
                    to,
                    impedance: z,
                    capacity,
                })
                .collect(),
            Complex64::new(1.0, 0.0),
        )
        .unwrap()
    }

    /// Feeder head -> 1 -> 2 -> 3, with 4 hanging off 1.
    fn five_node() -> Network {
        feeder(&[(1, 0, 1.0), (2, 1, 1.0), (3, 2, 1.0), (4, 1, 1.0)])
    }

    fn config(v_max: f64) -> PermissionConfig {
        PermissionConfig {
            v_max,
            ..PermissionConfig::default()
        }
    }

    fn state(v_max: f64) -> PermissionState {
        let net = five_node();
        let mut st = PermissionState::new(&net, config(v_max), 1.0).unwrap();
        st.begin_slot(0, 0.0, 28.0, &[Complex64::new(0.0, 0.0); 5])
            .unwrap();
        st
    }

    #[test]
    fn same_bus_transfer_approves_with_zero_charges() {
        let mut st = state(1.10);
        match st.validate_transfer(2, 2, 1.0, 0.5).unwrap() {
            TransferVerdict::Approved {
                costs,
                predicted_dv,
                actual_dv,
            } => {
                assert_eq!(costs.total(), 0.0);
                assert_eq!(costs.loss_energy_kwh, 0.0);
                assert_eq!(predicted_dv, 0.0);
                assert_eq!(actual_dv, 0.0);
            }
            v => panic!("expected approval, got {v:?}"),
        }
        assert_eq!(st.verdicts().len(), 1);
        assert!(st.verdicts()[0].approved);
    }

    #[test]
    fn voltage_threshold_matches_ac_bisection() {
        // Bisect the raw AC solve for the export at node 3 that lifts
        // |V_3| exactly to the guarded limit, then check the gate flips
        // around that threshold.
        let net = five_node();
        let mats = build_matrices(&net).unwrap();
        let cfg = config(1.02);
        let limit = cfg.v_max - cfg.voltage_guard;
        let v3 = |dp: f64| {
            let mut inj = vec![Complex64::new(0.0, 0.0); 5];
            inj[3] = Complex64::new(dp, 0.0);
            solve_power_flow(&net, &mats, &inj).unwrap().voltages[3].norm()
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        assert!(v3(hi) > limit);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if v3(mid) > limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let threshold_kwh = lo * net.s_base_kva(); // Δτ = 1 h, so kWh = kW

        let mut st = state(1.02);
        match st
            .validate_transfer(3, 0, threshold_kwh * 1.05, 0.0)
            .unwrap()
        {
            TransferVerdict::Rejected { reason } => assert!(reason.contains("voltage")),
            v => panic!("expected voltage rejection, got {v:?}"),
        }
        let mut st = state(1.02);
        assert!(matches!(
            st.validate_transfer(3, 0, threshold_kwh * 0.95, 0.0)
                .unwrap(),
            TransferVerdict::Approved { .. }
        ));
    }

    #[test]
    fn small_transfer_prediction_tracks_the_resolve() {
        let mut st = state(1.10);
        let before = st.operating_point().voltage_magnitudes();
        let predicted = st
            .bundle()
            .predict_voltage_change(st.operating_point(), 3, 4, st.kwh_to_dp(1.0))
            .unwrap();
        match st.validate_transfer(3, 4, 1.0, 0.0).unwrap() {
            TransferVerdict::Approved {
                predicted_dv,
                actual_dv,
                ..
            } => {
                assert!((predicted_dv - actual_dv).abs() < 1e-4);
                let after = st.operating_point().voltage_magnitudes();
                for m in 0..5 {
                    assert!(
                        (after[m] - predicted.magnitudes[m]).abs() < 1e-4,
                        "node {m}: {} vs predicted {}",
                        after[m],
                        predicted.magnitudes[m]
                    );
                }
                let _ = before;
            }
            v => panic!("expected approval, got {v:?}"),
        }
    }

    #[test]
    fn rejected_transfer_leaves_state_untouched() {
        let mut st = state(1.02);
        let inj_before = st.committed_injections().to_vec();
        let v_before = st.operating_point().voltage_magnitudes();
        match st.validate_transfer(3, 0, 100.0, 0.0).unwrap() {
            TransferVerdict::Rejected { .. } => {}
            v => panic!("expected rejection, got {v:?}"),
        }
        assert_eq!(st.committed_injections(), &inj_before[..]);
        assert_eq!(st.operating_point().voltage_magnitudes(), v_before);
        // The state still accepts reasonable trades.
        assert!(matches!(
            st.validate_transfer(3, 4, 0.5, 0.0).unwrap(),
            TransferVerdict::Approved { .. }
        ));
    }

    #[test]
    fn congestion_screen_and_charge_follow_shift_factors() {
        // Tight 0.05 pu capacity on the head line.
        let net = feeder(&[(1, 0, 0.05), (2, 1, 1.0)]);
        let cfg = PermissionConfig {
            congestion_price: 2.0,
            capacity_guard: 0.0,
            ..PermissionConfig::default()
        };
        let mut st = PermissionState::new(&net, cfg, 1.0).unwrap();
        st.begin_slot(0, 0.0, 28.0, &[Complex64::new(0.0, 0.0); 3])
            .unwrap();

        // 2 -> slack crosses both lines; 0.05 pu is 5 kW at the 100 kVA base.
        match st.validate_transfer(2, 0, 10.0, 0.0).unwrap() {
            TransferVerdict::Rejected { reason } => assert!(reason.contains("flow")),
            v => panic!("expected congestion rejection, got {v:?}"),
        }
        match st.validate_transfer(2, 0, 3.0, 0.0).unwrap() {
            TransferVerdict::Approved { costs, .. } => {
                // |Φ| = 1 on both lines of the path.
                assert_relative_eq!(costs.congestion_charge, 2.0 * 3.0 * 2.0, epsilon = 1e-12);
            }
            v => panic!("expected approval, got {v:?}"),
        }
    }

    #[test]
    fn no_load_generous_limits_blocks_nobody() {
        let st = state(1.10);
        for node in 1..5 {
            assert!(!st.node_blocked(node));
        }
        assert!(st.blocking_log().is_empty());
    }

    #[test]
    fn saturated_node_blocks_and_demand_clears_it() {
        let net = five_node();
        let mut st = PermissionState::new(&net, config(1.02), 1.0).unwrap();
        // Committed exports lift node 3 close to the guarded limit.
        let mut base = vec![Complex64::new(0.0, 0.0); 5];
        base[3] = Complex64::new(0.28, 0.0);
        st.begin_slot(0, 0.0, 28.0, &base).unwrap();
        assert!(st.node_blocked(3), "deep node saturated");
        assert!(st.blocking_log().iter().any(|e| e.node == 3 && e.blocked));

        // New demand next door pulls voltages down and frees the node.
        base[2] = Complex64::new(-0.2, 0.0);
        st.begin_slot(1, 60.0, 28.0, &base).unwrap();
        assert!(!st.node_blocked(3));
        assert!(st
            .blocking_log()
            .iter()
            .any(|e| e.node == 3 && !e.blocked && e.slot == 1));
    }

    #[test]
    fn ledger_totals_match_the_verdict_log() {
        let mut st = state(1.10);
        let mut base = vec![Complex64::new(0.0, 0.0); 5];
        base[2] = Complex64::new(-0.1, 0.0);
        base[4] = Complex64::new(-0.05, 0.0);
        st.begin_slot(0, 0.0, 28.0, &base).unwrap();
        for (i, j, q) in [(3usize, 2usize, 2.0), (3, 4, 1.5), (4, 2, 0.7)] {
            st.validate_transfer(i, j, q, 0.0).unwrap();
        }
        let from_log: f64 = st
            .verdicts()
            .iter()
            .map(|v| v.loss_charge + v.congestion_charge)
            .sum();
        assert_relative_eq!(st.ledger().total(), from_log, epsilon = 1e-12);
        // Loss charge prices the marginal loss energy at the slot rate.
        let v = &st.verdicts()[0];
        assert!(v.loss_charge.abs() > 0.0);
    }

    #[test]
    fn gate_trait_maps_traders_to_their_nodes() {
        let mut st = state(1.10);
        st.bind_traders(vec![3, 2]);
        let trade = ProvisionalTrade {
            buyer: 1,
            seller: 0,
            buyer_order: 10,
            seller_order: 11,
            price: 12.0,
            quantity: 1.0,
            slot: 0,
            time: 0.3,
        };
        match st.validate(&trade) {
            GateDecision::Approve { loss_charge, .. } => {
                assert_relative_eq!(loss_charge, st.ledger().loss, epsilon = 1e-12)
            }
            GateDecision::Reject { reason } => panic!("unexpected rejection: {reason}"),
        }
        assert!(!st.seller_blocked(0));
        assert_eq!(st.verdicts()[0].seller_node, 3);
        assert_eq!(st.verdicts()[0].buyer_node, 2);
    }

    #[test]
    fn settlement_imports_unconditionally_and_screens_exports() {
        let mut st = state(1.02);
        let buys = vec![ResidualOrder {
            household: "h001".into(),
            node: 2,
            kwh: 0.2,
        }];
        // First export fits; the second alone would breach the limit.
        let sells = vec![
            ResidualOrder {
                household: "h002".into(),
                node: 4,
                kwh: 1.0,
            },
            ResidualOrder {
                household: "h003".into(),
                node: 3,
                kwh: 40.0,
            },
        ];
        let s = st
            .settle_retailer_residuals(&buys, &sells, 28.0, 6.0, 0.0)
            .unwrap();
        assert_relative_eq!(s.import_cost, 5.6, epsilon = 1e-12);
        assert_relative_eq!(s.imports[0].cash, -5.6, epsilon = 1e-12);
        assert_relative_eq!(s.export_income, 6.0, epsilon = 1e-12);
        assert!(!s.exports[0].spilled);
        assert!(s.exports[1].spilled);
        assert_eq!(s.exports[1].cash, 0.0);
        assert_relative_eq!(s.spilled_kwh, 40.0, epsilon = 1e-12);
        // Imports are committed: node 2 carries the demand.
        assert!(st.committed_injections()[2].re < 0.0);
    }

    #[test]
    fn blocked_node_spills_without_screening() {
        let net = five_node();
        let mut st = PermissionState::new(&net, config(1.02), 1.0).unwrap();
        let mut base = vec![Complex64::new(0.0, 0.0); 5];
        base[3] = Complex64::new(0.28, 0.0);
        st.begin_slot(0, 0.0, 28.0, &base).unwrap();
        assert!(st.node_blocked(3));
        let verdicts_before = st.verdicts().len();
        let s = st
            .settle_retailer_residuals(
                &[],
                &[ResidualOrder {
                    household: "h009".into(),
                    node: 3,
                    kwh: 0.8,
                }],
                28.0,
                6.0,
                0.0,
            )
            .unwrap();
        assert!(s.exports[0].spilled);
        assert_eq!(st.verdicts().len(), verdicts_before, "no screening ran");
    }
}
