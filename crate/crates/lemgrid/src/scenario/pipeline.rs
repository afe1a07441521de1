//! The peer-to-peer day loop and the no-market baseline.
//!
//! Both runners share the same precomputed household plans and the same
//! permission layer; the baseline simply skips the auction and settles
//! everything at the retail tariffs, which is exactly the reference the
//! market benefit is measured against.

use super::{
    average_transaction_price, plan_day, BaselineSummary, HouseholdKind, HouseholdLedger,
    HouseholdPlan, ScenarioConfig, ScenarioKind, ScenarioReport, Scheme, SlotMetrics, Totals,
    TradeRecord, VoltageHistogram, HISTOGRAM_BIN_PU,
};
use crate::agents::ces_policy;
use crate::error::Result;
use crate::market::{run_trading_window, Side, WindowParams, ZipTrader};
use crate::net::line_loadings;
use crate::permission::{PermissionState, ResidualOrder};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Ledger index of the CES pseudo-household (after all real households).
const CES: &str = "ces";

fn base_injections(
    config: &ScenarioConfig,
    plans: &[HouseholdPlan],
    t: usize,
    include_consumer_demand: bool,
) -> Vec<Complex64> {
    let mut base = vec![Complex64::new(0.0, 0.0); config.network.n_nodes()];
    for plan in plans {
        let counts = include_consumer_demand || plan.kind != HouseholdKind::Consumer;
        if counts && plan.import[t] > 0.0 {
            let kw = plan.import[t] / config.slot_hours;
            base[plan.node].re -= config.network.kw_to_pu(kw);
        }
    }
    base
}

/// Record the committed state's voltages into the histogram and return
/// (min |V|, max |V|) over non-slack nodes plus the worst line loading.
pub(super) fn observe_state(
    config: &ScenarioConfig,
    op: &crate::net::OperatingPoint,
    histogram: &mut VoltageHistogram,
) -> (f64, f64, f64) {
    let mags = op.voltage_magnitudes();
    for &m in &mags {
        histogram.add(m);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &m in &mags[1..] {
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let loading = line_loadings(&config.network, op)
        .into_iter()
        .fold(0.0f64, f64::max);
    (lo, hi, loading)
}

pub(super) fn finish_totals(households: &[HouseholdLedger], slots: &[SlotMetrics]) -> Totals {
    let mut t = Totals::default();
    for h in households.iter().filter(|h| h.kind != HouseholdKind::Ces) {
        t.expenses += h.expenses;
        t.incomes += h.incomes;
    }
    for s in slots {
        t.p2p_kwh += s.p2p_kwh;
        t.retail_import_kwh += s.retail_import_kwh;
        t.export_kwh += s.export_kwh;
        t.spilled_kwh += s.spilled_kwh;
        t.network_charges += s.network_charges;
    }
    t
}

/// Run the peer-to-peer scheme: one trading window per slot, every match
/// screened by the permission layer, leftovers settled with the retailer.
pub fn run_p2p(config: &ScenarioConfig) -> Result<ScenarioReport> {
    let plans = plan_day(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut permission =
        PermissionState::new(&config.network, config.permission, config.slot_hours)?;

    let mut ledgers: Vec<HouseholdLedger> = plans
        .iter()
        .map(|p| HouseholdLedger::new(&p.id, p.node, p.kind))
        .collect();
    let ces_ledger = config.ces.as_ref().map(|_| ledgers.len());
    if let Some(c) = &config.ces {
        ledgers.push(HouseholdLedger::new(CES, c.node, HouseholdKind::Ces));
    }
    let mut ces_soc = config.ces.as_ref().map(|c| c.battery.initial_soc_kwh);

    let mut slot_metrics = Vec::with_capacity(config.slots);
    let mut histogram = VoltageHistogram::new(HISTOGRAM_BIN_PU);
    let mut trade_log = Vec::new();
    let mut end_states = Vec::with_capacity(config.slots);

    for t in 0..config.slots {
        let t_start = t as f64 * config.market.window_duration;
        let (tou, fit) = (config.tariffs.import[t], config.tariffs.export[t]);

        // Market participants: consumer demand bids, prosumer surplus asks,
        // and the CES intent for this slot. Owner k maps trader -> ledger.
        let mut traders: Vec<ZipTrader> = Vec::new();
        let mut owners: Vec<usize> = Vec::new();
        // Surplus kept out of the auction by the Scenario-I supply cap; it
        // goes straight to the retailer settlement below.
        let mut curtailed: Vec<(usize, f64)> = Vec::new();

        let ces_bid_kwh = match (&config.ces, ces_soc) {
            (Some(c), Some(soc)) => match ces_policy(c, t, soc, config.slot_hours) {
                Some((Side::Bid, q)) => q,
                _ => 0.0,
            },
            _ => 0.0,
        };
        // Scenario I: aggregate accepted supply may not exceed aggregate
        // demand (including the CES's); excess is curtailed up front in
        // household order.
        let mut supply_budget = if config.kind == ScenarioKind::I {
            let demand: f64 = plans
                .iter()
                .filter(|p| p.kind == HouseholdKind::Consumer)
                .map(|p| p.import[t])
                .sum();
            Some(demand + ces_bid_kwh)
        } else {
            None
        };

        for (h, plan) in plans.iter().enumerate() {
            match plan.kind {
                HouseholdKind::Consumer => {
                    if plan.import[t] > 0.0 {
                        traders.push(ZipTrader::new(
                            &plan.id,
                            plan.node,
                            Side::Bid,
                            tou,
                            (fit, tou),
                            plan.import[t],
                            &mut rng,
                        ));
                        owners.push(h);
                    }
                }
                HouseholdKind::Prosumer1 | HouseholdKind::Prosumer2 => {
                    let mut w = plan.surplus[t];
                    if let Some(budget) = supply_budget.as_mut() {
                        let grant = w.min(*budget);
                        *budget -= grant;
                        if w > grant {
                            curtailed.push((h, w - grant));
                        }
                        w = grant;
                    }
                    if w > 0.0 {
                        traders.push(ZipTrader::new(
                            &plan.id,
                            plan.node,
                            Side::Ask,
                            fit,
                            (fit, tou),
                            w,
                            &mut rng,
                        ));
                        owners.push(h);
                    }
                }
                HouseholdKind::Ces => {}
            }
        }
        if let (Some(c), Some(soc), Some(ces_h)) = (&config.ces, ces_soc, ces_ledger) {
            if let Some((side, qty)) = ces_policy(c, t, soc, config.slot_hours) {
                let limit = match side {
                    Side::Bid => tou,
                    Side::Ask => fit,
                };
                traders.push(ZipTrader::new(
                    CES,
                    c.node,
                    side,
                    limit,
                    (fit, tou),
                    qty,
                    &mut rng,
                ));
                owners.push(ces_h);
            }
        }

        // Everything that is not bid on the market starts as committed
        // withdrawal: prosumer deficits and battery imports.
        let base = base_injections(config, &plans, t, false);
        permission.begin_slot(t, t_start, tou, &base)?;
        permission.bind_traders(traders.iter().map(|tr| tr.node).collect());

        let params = WindowParams {
            slot: t,
            t_start,
            duration: config.market.window_duration,
            arrival_rate: config.market.activations_per_trader * traders.len() as f64
                / config.market.window_duration,
        };
        let outcome = run_trading_window(&mut traders, &mut permission, &params, &mut rng);

        // Cash and energy from cleared trades; network charges split
        // between the two parties.
        let mut charges = 0.0;
        for tr in &outcome.trades {
            let split = config.permission.buyer_share;
            let fee = tr.loss_charge + tr.congestion_charge;
            charges += fee;
            let buyer = owners[tr.buyer];
            let seller = owners[tr.seller];
            ledgers[buyer].expenses += tr.price * tr.quantity + fee * split;
            ledgers[buyer].p2p_bought_kwh += tr.quantity;
            ledgers[seller].incomes += tr.price * tr.quantity - fee * (1.0 - split);
            ledgers[seller].p2p_sold_kwh += tr.quantity;
            trade_log.push(TradeRecord {
                slot: t,
                time: tr.time,
                buyer: ledgers[buyer].id.clone(),
                seller: ledgers[seller].id.clone(),
                price: tr.price,
                kwh: tr.quantity,
                loss_charge: tr.loss_charge,
                congestion_charge: tr.congestion_charge,
            });
        }
        let p2p_kwh: f64 = outcome.trades.iter().map(|tr| tr.quantity).sum();

        if let (Some(c), Some(soc)) = (&config.ces, ces_soc.as_mut()) {
            let ces_h = ces_ledger.expect("set with config.ces");
            let bought: f64 = outcome
                .trades
                .iter()
                .filter(|tr| owners[tr.buyer] == ces_h)
                .map(|tr| tr.quantity)
                .sum();
            let sold: f64 = outcome
                .trades
                .iter()
                .filter(|tr| owners[tr.seller] == ces_h)
                .map(|tr| tr.quantity)
                .sum();
            *soc = (*soc + c.battery.efficiency * bought - sold).clamp(0.0, c.battery.capacity_kwh);
        }

        // Retail settlement of what the market left over: residual demand
        // imports unconditionally, residual surplus exports under the same
        // screening (or spills). Unfilled CES intents simply expire.
        let mut buys = Vec::new();
        let mut sells = Vec::new();
        for (k, trader) in traders.iter().enumerate() {
            if trader.remaining <= 0.0 || ledgers[owners[k]].kind == HouseholdKind::Ces {
                continue;
            }
            let order = ResidualOrder {
                household: ledgers[owners[k]].id.clone(),
                node: trader.node,
                kwh: trader.remaining,
            };
            match trader.side {
                Side::Bid => buys.push((owners[k], order)),
                Side::Ask => sells.push((owners[k], order)),
            }
        }
        // The cap only keeps supply out of the auction; like any unsold
        // surplus it still tries the grid at the feed-in rate.
        for &(h, extra) in &curtailed {
            match sells.iter_mut().find(|(owner, _)| *owner == h) {
                Some((_, order)) => order.kwh += extra,
                None => sells.push((
                    h,
                    ResidualOrder {
                        household: plans[h].id.clone(),
                        node: plans[h].node,
                        kwh: extra,
                    },
                )),
            }
        }
        let t_close = t_start + config.market.window_duration;
        let settlement = permission.settle_retailer_residuals(
            &buys.iter().map(|(_, o)| o.clone()).collect::<Vec<_>>(),
            &sells.iter().map(|(_, o)| o.clone()).collect::<Vec<_>>(),
            tou,
            fit,
            t_close,
        )?;
        for ((h, _), outcome) in buys.iter().zip(&settlement.imports) {
            ledgers[*h].expenses += -outcome.cash;
            ledgers[*h].retail_bought_kwh += outcome.kwh;
        }
        for ((h, _), outcome) in sells.iter().zip(&settlement.exports) {
            if outcome.spilled {
                ledgers[*h].spilled_kwh += outcome.kwh;
            } else {
                ledgers[*h].incomes += outcome.cash;
                ledgers[*h].exported_kwh += outcome.kwh;
            }
        }

        // Deficits and battery imports committed in the base state are
        // regular retail purchases.
        let mut base_import_kwh = 0.0;
        for (h, plan) in plans.iter().enumerate() {
            if plan.kind != HouseholdKind::Consumer && plan.import[t] > 0.0 {
                ledgers[h].expenses += plan.import[t] * tou;
                ledgers[h].retail_bought_kwh += plan.import[t];
                base_import_kwh += plan.import[t];
            }
        }

        let (v_min, v_max, max_line_loading) =
            observe_state(config, permission.operating_point(), &mut histogram);
        end_states.push(permission.operating_point().injections.clone());
        slot_metrics.push(SlotMetrics {
            slot: t,
            atp: average_transaction_price(&outcome.trades),
            p2p_kwh,
            retail_import_kwh: settlement.imports.iter().map(|o| o.kwh).sum::<f64>()
                + base_import_kwh,
            export_kwh: settlement
                .exports
                .iter()
                .filter(|o| !o.spilled)
                .map(|o| o.kwh)
                .sum(),
            spilled_kwh: settlement.spilled_kwh,
            network_charges: charges,
            rejected: outcome.rejections.len(),
            v_min,
            v_max,
            max_line_loading,
        });
    }

    let totals = finish_totals(&ledgers, &slot_metrics);
    Ok(ScenarioReport {
        scheme: Scheme::P2P,
        kind: config.kind,
        seed: config.seed,
        slots: slot_metrics,
        households: ledgers,
        totals,
        histogram,
        baseline: None,
        market_benefit: None,
        trades: trade_log,
        verdicts: permission.verdicts().to_vec(),
        blocking: permission.blocking_log().to_vec(),
        end_states,
    })
}

/// Run the no-market reference: all demand buys at the ToU rate, every
/// surplus tries to export at the FiT rate under the same screening.
pub fn run_baseline(config: &ScenarioConfig) -> Result<BaselineSummary> {
    let plans = plan_day(config)?;
    let mut permission =
        PermissionState::new(&config.network, config.permission, config.slot_hours)?;
    let mut ledgers: Vec<HouseholdLedger> = plans
        .iter()
        .map(|p| HouseholdLedger::new(&p.id, p.node, p.kind))
        .collect();
    let mut slot_metrics = Vec::with_capacity(config.slots);
    let mut histogram = VoltageHistogram::new(HISTOGRAM_BIN_PU);

    for t in 0..config.slots {
        let t_start = t as f64 * config.market.window_duration;
        let (tou, fit) = (config.tariffs.import[t], config.tariffs.export[t]);
        let base = base_injections(config, &plans, t, true);
        permission.begin_slot(t, t_start, tou, &base)?;

        let mut import_kwh = 0.0;
        for (h, plan) in plans.iter().enumerate() {
            if plan.import[t] > 0.0 {
                ledgers[h].expenses += plan.import[t] * tou;
                ledgers[h].retail_bought_kwh += plan.import[t];
                import_kwh += plan.import[t];
            }
        }
        let sells: Vec<(usize, ResidualOrder)> = plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.surplus[t] > 0.0)
            .map(|(h, p)| {
                (
                    h,
                    ResidualOrder {
                        household: p.id.clone(),
                        node: p.node,
                        kwh: p.surplus[t],
                    },
                )
            })
            .collect();
        let settlement = permission.settle_retailer_residuals(
            &[],
            &sells.iter().map(|(_, o)| o.clone()).collect::<Vec<_>>(),
            tou,
            fit,
            t_start,
        )?;
        for ((h, _), outcome) in sells.iter().zip(&settlement.exports) {
            if outcome.spilled {
                ledgers[*h].spilled_kwh += outcome.kwh;
            } else {
                ledgers[*h].incomes += outcome.cash;
                ledgers[*h].exported_kwh += outcome.kwh;
            }
        }

        let (v_min, v_max, max_line_loading) =
            observe_state(config, permission.operating_point(), &mut histogram);
        slot_metrics.push(SlotMetrics {
            slot: t,
            atp: None,
            p2p_kwh: 0.0,
            retail_import_kwh: import_kwh,
            export_kwh: settlement
                .exports
                .iter()
                .filter(|o| !o.spilled)
                .map(|o| o.kwh)
                .sum(),
            spilled_kwh: settlement.spilled_kwh,
            network_charges: 0.0,
            rejected: 0,
            v_min,
            v_max,
            max_line_loading,
        });
    }

    Ok(BaselineSummary {
        totals: finish_totals(&ledgers, &slot_metrics),
        histogram,
    })
}
