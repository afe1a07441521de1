//! Curtailment benchmarks the market is compared against.
//!
//! All three run without an auction: demand buys at the ToU rate, surplus
//! exports at the FiT rate, and an inverter-side rule decides how much of
//! the surplus actually reaches the feeder — a fixed export cap, tripping
//! the worst inverter on over-voltage, or a voltage droop that sheds power
//! gradually between a critical voltage and the limit.

use super::pipeline::{finish_totals, observe_state};
use super::{
    plan_day, HouseholdKind, HouseholdLedger, HouseholdPlan, ScenarioConfig, ScenarioReport,
    Scheme, SlotMetrics, VoltageHistogram, HISTOGRAM_BIN_PU,
};
use crate::error::{Error, Result};
use crate::net::{build_matrices, line_flows, OperatingPoint, PowerFlowSolver};
use crate::sensitivity::SensitivityBundle;
use num_complex::Complex64;

struct Frame {
    solver: PowerFlowSolver,
}

impl Frame {
    fn solve(&self, config: &ScenarioConfig, injections: &[Complex64]) -> Result<OperatingPoint> {
        let mut op = self.solver.solve(injections)?;
        let report = line_flows(&config.network, &op.voltages);
        op.p_loss = report.losses.iter().sum();
        op.line_flows = report.sending;
        Ok(op)
    }
}

/// All committed withdrawals of slot `t` (pu), before any export.
fn demand_injections(config: &ScenarioConfig, plans: &[HouseholdPlan], t: usize) -> Vec<Complex64> {
    let mut inj = vec![Complex64::new(0.0, 0.0); config.network.n_nodes()];
    for plan in plans {
        if plan.import[t] > 0.0 {
            inj[plan.node].re -= config.network.kw_to_pu(plan.import[t] / config.slot_hours);
        }
    }
    inj
}

fn add_exports(
    config: &ScenarioConfig,
    plans: &[HouseholdPlan],
    base: &[Complex64],
    exports_kwh: &[f64],
) -> Vec<Complex64> {
    let mut inj = base.to_vec();
    for (plan, &e) in plans.iter().zip(exports_kwh) {
        if e > 0.0 {
            inj[plan.node].re += config.network.kw_to_pu(e / config.slot_hours);
        }
    }
    inj
}

/// Per-slot exports under a fixed per-prosumer cap.
fn redcap_exports(config: &ScenarioConfig, plans: &[HouseholdPlan], t: usize) -> Vec<f64> {
    let cap_kwh = config.redcap.export_limit_kw * config.slot_hours;
    plans.iter().map(|p| p.surplus[t].min(cap_kwh)).collect()
}

/// Exports after tripping: everyone starts at full surplus; while some node
/// exceeds the upper limit, the exporting inverter at the highest voltage
/// shuts down for the rest of the slot (self-consumption is retained).
fn tripping_exports(
    config: &ScenarioConfig,
    frame: &Frame,
    plans: &[HouseholdPlan],
    base: &[Complex64],
    t: usize,
) -> Result<Vec<f64>> {
    let mut exports: Vec<f64> = plans.iter().map(|p| p.surplus[t]).collect();
    loop {
        let op = frame.solve(config, &add_exports(config, plans, base, &exports))?;
        let mags = op.voltage_magnitudes();
        let worst = (0..plans.len())
            .filter(|&h| exports[h] > 0.0 && mags[plans[h].node] > config.permission.v_max)
            .max_by(|&a, &b| {
                mags[plans[a].node]
                    .partial_cmp(&mags[plans[b].node])
                    .unwrap()
                    .then(exports[a].partial_cmp(&exports[b]).unwrap())
            });
        match worst {
            Some(h) => exports[h] = 0.0,
            None => return Ok(exports),
        }
    }
}

/// Exports after droop curtailment: each inverter sheds a fraction of its
/// surplus that ramps from 0 at `v_cri` to 1 at the voltage limit, with
/// per-household slopes scaled inversely to their own-node voltage
/// sensitivity so electrically remote prosumers are not curtailed first.
/// The coupled voltages/exports are relaxed to a fixed point.
fn droop_exports(
    config: &ScenarioConfig,
    frame: &Frame,
    plans: &[HouseholdPlan],
    base: &[Complex64],
    slopes: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    let surplus: Vec<f64> = plans.iter().map(|p| p.surplus[t]).collect();
    let mut exports = surplus.clone();
    let v_cri = config.droop.v_cri;
    let span = config.permission.v_max - v_cri;
    if span <= 0.0 {
        return Err(Error::Invalid(format!(
            "droop needs v_cri below the voltage limit, got {v_cri}"
        )));
    }
    let alpha = config.droop.relaxation;
    for _ in 0..config.droop.max_iterations {
        let op = frame.solve(config, &add_exports(config, plans, base, &exports))?;
        let mags = op.voltage_magnitudes();
        let mut shift = 0.0f64;
        for h in 0..plans.len() {
            if surplus[h] <= 0.0 {
                continue;
            }
            let f = ((mags[plans[h].node] - v_cri) / span).clamp(0.0, 1.0);
            let target = surplus[h] * (1.0 - (slopes[h] * f).min(1.0));
            let next = (1.0 - alpha) * exports[h] + alpha * target;
            shift = shift.max((next - exports[h]).abs());
            exports[h] = next;
        }
        if shift < 1e-9 {
            break;
        }
    }
    Ok(exports)
}

/// Droop slopes ∝ 1 / (∂|V_h|/∂P_h) at no load, normalized to mean 1 over
/// the prosumers, so each inverter gives up a comparable share.
fn droop_slopes(config: &ScenarioConfig, plans: &[HouseholdPlan]) -> Result<Vec<f64>> {
    let mats = build_matrices(&config.network)?;
    let solver = PowerFlowSolver::new(&config.network, &mats)?;
    let op = solver.solve(&vec![Complex64::new(0.0, 0.0); config.network.n_nodes()])?;
    let bundle = SensitivityBundle::compute(&config.network, &mats, &op)?;
    let raw: Vec<f64> = plans
        .iter()
        .map(|p| {
            let s = bundle.dvmag(p.node, p.node);
            if s > 1e-12 {
                1.0 / s
            } else {
                0.0
            }
        })
        .collect();
    let sellers: Vec<usize> = plans
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p.kind, HouseholdKind::Prosumer1 | HouseholdKind::Prosumer2))
        .map(|(h, _)| h)
        .collect();
    let mean: f64 = sellers.iter().map(|&h| raw[h]).sum::<f64>() / sellers.len().max(1) as f64;
    Ok(raw
        .iter()
        .map(|&r| if mean > 0.0 { r / mean } else { 1.0 })
        .collect())
}

/// Run one curtailment benchmark over the day.
pub fn run_benchmark(config: &ScenarioConfig, scheme: Scheme) -> Result<ScenarioReport> {
    if scheme == Scheme::P2P {
        return Err(Error::Invalid(
            "the market scheme runs through the trading pipeline".into(),
        ));
    }
    let plans = plan_day(config)?;
    let mats = build_matrices(&config.network)?;
    let frame = Frame {
        solver: PowerFlowSolver::new(&config.network, &mats)?,
    };
    let slopes = if scheme == Scheme::ApcOlp {
        droop_slopes(config, &plans)?
    } else {
        Vec::new()
    };

    let mut ledgers: Vec<HouseholdLedger> = plans
        .iter()
        .map(|p| HouseholdLedger::new(&p.id, p.node, p.kind))
        .collect();
    let mut slot_metrics = Vec::with_capacity(config.slots);
    let mut histogram = VoltageHistogram::new(HISTOGRAM_BIN_PU);
    let mut end_states = Vec::with_capacity(config.slots);

    for t in 0..config.slots {
        let (tou, fit) = (config.tariffs.import[t], config.tariffs.export[t]);
        let base = demand_injections(config, &plans, t);
        let exports = match scheme {
            Scheme::RedCap => redcap_exports(config, &plans, t),
            Scheme::Tripping => tripping_exports(config, &frame, &plans, &base, t)?,
            Scheme::ApcOlp => droop_exports(config, &frame, &plans, &base, &slopes, t)?,
            Scheme::P2P => unreachable!(),
        };
        let op = frame.solve(config, &add_exports(config, &plans, &base, &exports))?;

        let mut import_kwh = 0.0;
        let mut export_kwh = 0.0;
        let mut spilled_kwh = 0.0;
        for (h, plan) in plans.iter().enumerate() {
            if plan.import[t] > 0.0 {
                ledgers[h].expenses += plan.import[t] * tou;
                ledgers[h].retail_bought_kwh += plan.import[t];
                import_kwh += plan.import[t];
            }
            let e = exports[h];
            if e > 0.0 {
                ledgers[h].incomes += e * fit;
                ledgers[h].exported_kwh += e;
                export_kwh += e;
            }
            let spill = plan.surplus[t] - e;
            if spill > 0.0 {
                ledgers[h].spilled_kwh += spill;
                spilled_kwh += spill;
            }
        }

        let (v_min, v_max, max_line_loading) = observe_state(config, &op, &mut histogram);
        end_states.push(op.injections.clone());
        slot_metrics.push(SlotMetrics {
            slot: t,
            atp: None,
            p2p_kwh: 0.0,
            retail_import_kwh: import_kwh,
            export_kwh,
            spilled_kwh,
            network_charges: 0.0,
            rejected: 0,
            v_min,
            v_max,
            max_line_loading,
        });
    }

    let totals = finish_totals(&ledgers, &slot_metrics);
    Ok(ScenarioReport {
        scheme,
        kind: config.kind,
        seed: config.seed,
        slots: slot_metrics,
        households: ledgers,
        totals,
        histogram,
        baseline: None,
        market_benefit: None,
        trades: Vec::new(),
        verdicts: Vec::new(),
        blocking: Vec::new(),
        end_states,
    })
}
