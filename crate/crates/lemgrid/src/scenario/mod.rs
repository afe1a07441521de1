//! Full-day simulation runs and their reported metrics.
//!
//! A run walks the day slot by slot: home energy-management schedules are
//! fixed up front, each slot opens a trading window against the permission
//! layer, leftovers settle with the retailer, and the committed network
//! state is recorded. The peer-to-peer scheme can be compared against three
//! curtailment benchmarks (fixed export cap, over-voltage tripping, and
//! droop-based curtailment) driven by identical inputs, and against a
//! no-market baseline that prices everything at the retail tariffs.

mod benchmarks;
mod pipeline;

pub use benchmarks::run_benchmark;
pub use pipeline::{run_baseline, run_p2p};

use crate::agents::{
    hems_schedule, BatterySpec, CesSpec, HouseholdKind, HouseholdProfile, TariffSchedule,
};
use crate::error::{Error, Result};
use crate::market::Trade;
use crate::net::Network;
use crate::permission::{BlockingEvent, PermissionConfig, VerdictRecord};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Operating scheme compared in the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Local market with permission-validated trades.
    P2P,
    /// Fixed per-prosumer export cap.
    RedCap,
    /// Inverter over-voltage tripping.
    Tripping,
    /// Droop-based active power curtailment.
    ApcOlp,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::P2P => "p2p",
            Scheme::RedCap => "redcap",
            Scheme::Tripping => "tripping",
            Scheme::ApcOlp => "apcolp",
        }
    }
}

/// Study variant: I adds the local-balance rule (aggregate accepted supply
/// capped at aggregate demand); II trades unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    I,
    II,
}

/// Continuous double-auction window parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketOptions {
    /// Window length in logical time units (one window per slot).
    pub window_duration: f64,
    /// Expected activations per trader per window (sets the Poisson rate).
    pub activations_per_trader: f64,
}

impl Default for MarketOptions {
    fn default() -> Self {
        Self {
            window_duration: 900.0,
            activations_per_trader: 10.0,
        }
    }
}

/// Fixed export cap of the RedCap benchmark.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedCapOptions {
    pub export_limit_kw: f64,
}

impl Default for RedCapOptions {
    fn default() -> Self {
        Self {
            export_limit_kw: 3.0,
        }
    }
}

/// Droop curtailment (APC-OLP) parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopOptions {
    /// Curtailment starts above this voltage (pu) and reaches 100 % at the
    /// upper voltage limit.
    pub v_cri: f64,
    /// Under-relaxation factor of the fixed-point iteration.
    pub relaxation: f64,
    pub max_iterations: usize,
}

impl Default for DroopOptions {
    fn default() -> Self {
        Self {
            v_cri: 1.06,
            relaxation: 0.5,
            max_iterations: 50,
        }
    }
}

/// Everything one simulated day needs.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub network: Network,
    pub households: Vec<HouseholdProfile>,
    pub tariffs: TariffSchedule,
    pub slots: usize,
    pub slot_hours: f64,
    pub seed: u64,
    pub kind: ScenarioKind,
    /// Battery applied to every Type-2 prosumer.
    pub battery: Option<BatterySpec>,
    pub ces: Option<CesSpec>,
    pub permission: PermissionConfig,
    pub market: MarketOptions,
    pub soc_step_kwh: f64,
    pub redcap: RedCapOptions,
    pub droop: DroopOptions,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || !(self.slot_hours > 0.0) {
            return Err(Error::Invalid("horizon must be non-empty".into()));
        }
        if self.tariffs.slots() != self.slots {
            return Err(Error::Invalid(format!(
                "tariff covers {} slots, horizon has {}",
                self.tariffs.slots(),
                self.slots
            )));
        }
        self.tariffs.validate()?;
        let n = self.network.n_nodes();
        for p in &self.households {
            p.validate(self.slots)?;
            match p.node {
                None => {
                    return Err(Error::Invalid(format!(
                        "household {} is not bound to a network node",
                        p.id
                    )))
                }
                Some(0) => {
                    return Err(Error::Invalid(format!(
                        "household {} bound to the slack node",
                        p.id
                    )))
                }
                Some(x) if x >= n => {
                    return Err(Error::Invalid(format!(
                        "household {} bound to unknown node {x}",
                        p.id
                    )))
                }
                _ => {}
            }
            if p.kind == HouseholdKind::Prosumer2 && self.battery.is_none() {
                return Err(Error::Invalid(format!(
                    "household {} needs a battery spec",
                    p.id
                )));
            }
        }
        if let Some(b) = &self.battery {
            b.validate()?;
        }
        if let Some(ces) = &self.ces {
            ces.battery.validate()?;
            if ces.node == 0 || ces.node >= n {
                return Err(Error::Invalid(format!(
                    "CES bound to bad node {}",
                    ces.node
                )));
            }
        }
        if !(self.soc_step_kwh > 0.0) {
            return Err(Error::Invalid("SoC step must be positive".into()));
        }
        Ok(())
    }
}

/// One household's precomputed day: per-slot retail/bid demand and
/// exportable surplus (kWh), after any battery scheduling.
#[derive(Debug, Clone)]
pub(crate) struct HouseholdPlan {
    pub id: String,
    pub node: usize,
    pub kind: HouseholdKind,
    pub import: Vec<f64>,
    pub surplus: Vec<f64>,
}

/// Run the HEMS for every Type-2 prosumer and reduce each household to its
/// per-slot import/surplus series.
pub(crate) fn plan_day(config: &ScenarioConfig) -> Result<Vec<HouseholdPlan>> {
    config.validate()?;
    let mut plans = Vec::with_capacity(config.households.len());
    for p in &config.households {
        let node = p.node.expect("validated");
        let (import, surplus) = match p.kind {
            HouseholdKind::Consumer => (p.demand.clone(), vec![0.0; config.slots]),
            HouseholdKind::Prosumer1 => (0..config.slots)
                .map(|t| {
                    let net = p.demand[t] - p.pv[t];
                    (net.max(0.0), (-net).max(0.0))
                })
                .unzip(),
            HouseholdKind::Prosumer2 => {
                let battery = config.battery.as_ref().expect("validated");
                let d = hems_schedule(
                    p,
                    battery,
                    &config.tariffs,
                    config.slot_hours,
                    config.soc_step_kwh,
                )?;
                (0..config.slots)
                    .map(|t| (d.import(t), d.export(t)))
                    .unzip()
            }
            HouseholdKind::Ces => (vec![0.0; config.slots], vec![0.0; config.slots]),
        };
        plans.push(HouseholdPlan {
            id: p.id.clone(),
            node,
            kind: p.kind,
            import,
            surplus,
        });
    }
    Ok(plans)
}

/// Day-level market benefit: what households saved on purchases plus what
/// they gained on sales, relative to the no-market reference.
pub fn market_benefit(
    expenses_without: f64,
    incomes_without: f64,
    expenses_with: f64,
    incomes_with: f64,
) -> f64 {
    (expenses_without - expenses_with) + (incomes_with - incomes_without)
}

/// Quantity-weighted mean clearing price; None when nothing traded.
pub fn average_transaction_price(trades: &[Trade]) -> Option<f64> {
    let qty: f64 = trades.iter().map(|t| t.quantity).sum();
    if qty > 0.0 {
        Some(trades.iter().map(|t| t.price * t.quantity).sum::<f64>() / qty)
    } else {
        None
    }
}

/// Fixed-width voltage histogram keyed by bin index (lower edge =
/// index · bin width), covering every observation exactly once.
#[derive(Debug, Clone, Serialize)]
pub struct VoltageHistogram {
    pub bin_width: f64,
    pub counts: BTreeMap<i64, u64>,
}

impl VoltageHistogram {
    pub fn new(bin_width: f64) -> Self {
        Self {
            bin_width,
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, v: f64) {
        // Snap values sitting on a bin edge (up to fp noise in the division)
        // into the upper bin, keeping the bins half-open [edge, edge + w).
        let x = v / self.bin_width;
        let snapped = x.round();
        let idx = if (x - snapped).abs() < 1e-9 {
            snapped
        } else {
            x.floor()
        } as i64;
        *self.counts.entry(idx).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// (lower edge, count) pairs in ascending voltage order.
    pub fn bins(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts
            .iter()
            .map(|(&i, &c)| (i as f64 * self.bin_width, c))
    }
}

/// Default histogram bin width (pu).
pub const HISTOGRAM_BIN_PU: f64 = 0.005;

/// Per-slot aggregates of one run.
#[derive(Debug, Clone, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    /// Quantity-weighted mean clearing price; absent when nothing traded.
    pub atp: Option<f64>,
    pub p2p_kwh: f64,
    pub retail_import_kwh: f64,
    pub export_kwh: f64,
    pub spilled_kwh: f64,
    pub network_charges: f64,
    /// Trades voided by the permission layer.
    pub rejected: usize,
    /// True AC voltage extremes of the committed end-of-slot state (pu),
    /// over non-slack nodes.
    pub v_min: f64,
    pub v_max: f64,
    pub max_line_loading: f64,
}

/// Per-household cash and energy ledger for the day.
#[derive(Debug, Clone, Serialize)]
pub struct HouseholdLedger {
    pub id: String,
    pub node: usize,
    pub kind: HouseholdKind,
    pub expenses: f64,
    pub incomes: f64,
    pub p2p_bought_kwh: f64,
    pub p2p_sold_kwh: f64,
    pub retail_bought_kwh: f64,
    pub exported_kwh: f64,
    pub spilled_kwh: f64,
}

impl HouseholdLedger {
    pub(crate) fn new(id: &str, node: usize, kind: HouseholdKind) -> Self {
        Self {
            id: id.to_string(),
            node,
            kind,
            expenses: 0.0,
            incomes: 0.0,
            p2p_bought_kwh: 0.0,
            p2p_sold_kwh: 0.0,
            retail_bought_kwh: 0.0,
            exported_kwh: 0.0,
            spilled_kwh: 0.0,
        }
    }
}

/// Day totals over the households (the retailer-side CES is excluded).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Totals {
    pub expenses: f64,
    pub incomes: f64,
    pub p2p_kwh: f64,
    pub retail_import_kwh: f64,
    pub export_kwh: f64,
    pub spilled_kwh: f64,
    pub network_charges: f64,
}

/// No-market reference run priced purely at the retail tariffs.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub totals: Totals,
    pub histogram: VoltageHistogram,
}

/// One cleared trade with resolved participant names.
#[derive(Debug, Clone, Serialize)]
pub struct TradeRecord {
    pub slot: usize,
    pub time: f64,
    pub buyer: String,
    pub seller: String,
    pub price: f64,
    pub kwh: f64,
    pub loss_charge: f64,
    pub congestion_charge: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scheme: Scheme,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub slots: Vec<SlotMetrics>,
    pub households: Vec<HouseholdLedger>,
    pub totals: Totals,
    pub histogram: VoltageHistogram,
    pub baseline: Option<BaselineSummary>,
    /// (baseline expenses − expenses) + (incomes − baseline incomes).
    pub market_benefit: Option<f64>,
    pub trades: Vec<TradeRecord>,
    pub verdicts: Vec<VerdictRecord>,
    pub blocking: Vec<BlockingEvent>,
    /// Committed complex injections (pu, slack filled) at each slot close,
    /// kept for post-run audits; not part of the serialized report.
    #[serde(skip)]
    pub end_states: Vec<Vec<Complex64>>,
}

impl ScenarioReport {
    /// Attach the baseline comparison and derive the market benefit.
    pub fn with_baseline(mut self, baseline: BaselineSummary) -> Self {
        self.market_benefit = Some(market_benefit(
            baseline.totals.expenses,
            baseline.totals.incomes,
            self.totals.expenses,
            self.totals.incomes,
        ));
        self.baseline = Some(baseline);
        self
    }
}

/// Run one scheme. The peer-to-peer scheme also runs the no-market baseline
/// so the report carries the market benefit.
pub fn run_scenario(config: &ScenarioConfig, scheme: Scheme) -> Result<ScenarioReport> {
    match scheme {
        Scheme::P2P => {
            let report = run_p2p(config)?;
            let baseline = run_baseline(config)?;
            Ok(report.with_baseline(baseline))
        }
        other => run_benchmark(config, other),
    }
}

/// Run every scheme on identical inputs (the Scenario-II comparison).
pub fn run_all_schemes(config: &ScenarioConfig) -> Result<Vec<ScenarioReport>> {
    [
        Scheme::P2P,
        Scheme::RedCap,
        Scheme::Tripping,
        Scheme::ApcOlp,
    ]
    .iter()
    .map(|&s| run_scenario(config, s))
    .collect()
}

#[cfg(test)]
pub(crate) mod testfix {
    //! Small hand-built day fixtures shared by the run tests.
    use super::*;
    use crate::net::Line;
    use num_complex::Complex64;

    /// Chain feeder 0-1-...-n with identical segments and generous thermal
    /// capacity. Node 0 is the slack.
    pub fn chain(segments: usize, r: f64, x: f64) -> Network {
        let z = Complex64::new(r, x);
        let lines = (0..segments)
            .map(|k| Line {
                from: k,
                to: k + 1,
                impedance: z,
                capacity: 10.0,
            })
            .collect();
        Network::radial(lines, Complex64::new(1.0, 0.0)).unwrap()
    }

    pub fn flat_tariffs(slots: usize, tou: f64, fit: f64) -> TariffSchedule {
        TariffSchedule {
            import: vec![tou; slots],
            export: vec![fit; slots],
        }
    }

    /// Consumer with the same demand every slot.
    pub fn consumer(id: &str, node: usize, kwh: f64, slots: usize) -> HouseholdProfile {
        HouseholdProfile {
            id: id.into(),
            kind: HouseholdKind::Consumer,
            node: Some(node),
            demand: vec![kwh; slots],
            pv: vec![0.0; slots],
        }
    }

    /// Battery-less prosumer with the same surplus every slot (pure PV).
    pub fn prosumer(id: &str, node: usize, kwh: f64, slots: usize) -> HouseholdProfile {
        HouseholdProfile {
            id: id.into(),
            kind: HouseholdKind::Prosumer1,
            node: Some(node),
            demand: vec![0.0; slots],
            pv: vec![kwh; slots],
        }
    }

    /// Scenario-II day on the given feeder with flat 28/6 tariffs and
    /// hourly slots, everything else at defaults.
    pub fn day(
        network: Network,
        households: Vec<HouseholdProfile>,
        slots: usize,
    ) -> ScenarioConfig {
        ScenarioConfig {
            network,
            households,
            tariffs: flat_tariffs(slots, 28.0, 6.0),
            slots,
            slot_hours: 1.0,
            seed: 7,
            kind: ScenarioKind::II,
            battery: None,
            ces: None,
            permission: PermissionConfig::default(),
            market: MarketOptions::default(),
            soc_step_kwh: crate::agents::DEFAULT_SOC_STEP_KWH,
            redcap: RedCapOptions::default(),
            droop: DroopOptions::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trade(price: f64, quantity: f64) -> Trade {
        Trade {
            buyer: 0,
            seller: 1,
            buyer_order: 0,
            seller_order: 1,
            price,
            quantity,
            slot: 0,
            time: 0.0,
            loss_charge: 0.0,
            congestion_charge: 0.0,
        }
    }

    #[test]
    fn atp_is_quantity_weighted() {
        assert_eq!(average_transaction_price(&[trade(15.0, 2.0)]), Some(15.0));
        let two = [trade(10.0, 1.0), trade(20.0, 3.0)];
        assert_eq!(average_transaction_price(&two), Some(17.5));
        assert_eq!(average_transaction_price(&[]), None);
    }

    #[test]
    fn histogram_counts_every_observation_once() {
        let mut h = VoltageHistogram::new(HISTOGRAM_BIN_PU);
        for v in [0.998, 0.999, 1.0, 1.0049, 1.005, 1.021] {
            h.add(v);
        }
        assert_eq!(h.total(), 6);
        let bins: Vec<_> = h.bins().collect();
        // 1.0 and 1.0049 share the [1.000, 1.005) bin.
        assert!(bins
            .iter()
            .any(|&(edge, c)| (edge - 1.0).abs() < 1e-9 && c == 2));
        // Bin edges are multiples of the width.
        for (edge, _) in bins {
            let r = edge / HISTOGRAM_BIN_PU;
            assert!((r - r.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn benefit_identity_matches_reference_arithmetic() {
        let without = Totals {
            expenses: 241.98,
            incomes: 32.37,
            ..Totals::default()
        };
        let with = Totals {
            expenses: 198.50,
            incomes: 64.81,
            ..Totals::default()
        };
        let benefit = (without.expenses - with.expenses) + (with.incomes - without.incomes);
        assert!((benefit - 75.92).abs() < 1e-9);
    }
}
