//! Household models: consumers, PV-only prosumers, PV+battery prosumers
//! with a home energy-management system, and the retailer-operated community
//! energy storage (CES).
//!
//! The HEMS schedules its battery against the tariff by an exact dynamic
//! program over a discretized state-of-charge grid — deterministic and
//! solver-free. Per-slot outcomes are then mapped to market participants:
//! consumers bid their demand with the import tariff as the price ceiling,
//! prosumers ask their surplus with the export tariff as the floor.

use crate::error::{Error, Result};
use crate::market::{Side, ZipTrader};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HouseholdKind {
    Consumer,
    /// PV only.
    Prosumer1,
    /// PV + battery + HEMS.
    Prosumer2,
    /// Community energy storage.
    Ces,
}

/// One household's day: per-slot demand and PV energy (kWh).
#[derive(Debug, Clone)]
pub struct HouseholdProfile {
    pub id: String,
    pub kind: HouseholdKind,
    /// Network bus, filled in from the network's bind records.
    pub node: Option<usize>,
    pub demand: Vec<f64>,
    pub pv: Vec<f64>,
}

impl HouseholdProfile {
    pub fn validate(&self, slots: usize) -> Result<()> {
        if self.demand.len() != slots || self.pv.len() != slots {
            return Err(Error::Invalid(format!(
                "household {}: profile covers {} demand / {} pv slots, horizon needs {}",
                self.id,
                self.demand.len(),
                self.pv.len(),
                slots
            )));
        }
        for t in 0..slots {
            if self.demand[t] < 0.0 || self.pv[t] < 0.0 {
                return Err(Error::Invalid(format!(
                    "household {}: negative energy at slot {t}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Import (ToU) and export (FiT) prices per slot, currency/kWh.
#[derive(Debug, Clone)]
pub struct TariffSchedule {
    pub import: Vec<f64>,
    pub export: Vec<f64>,
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.import.len() != self.export.len() {
            return Err(Error::Invalid(
                "tariff import/export series differ in length".into(),
            ));
        }
        for t in 0..self.import.len() {
            // Export above import would make retailer arbitrage unbounded.
            if !(self.import[t] >= self.export[t] && self.export[t] >= 0.0) {
                return Err(Error::Invalid(format!(
                    "tariff slot {t}: need import ≥ export ≥ 0, got {} / {}",
                    self.import[t], self.export[t]
                )));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.import.len()
    }

    /// Market budget bounds for slot t: [FiT, ToU].
    pub fn bounds(&self, t: usize) -> (f64, f64) {
        (self.export[t], self.import[t])
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub power_kw: f64,
    pub capacity_kwh: f64,
    /// Round-trip efficiency in (0, 1], applied on the way in: storing c AC
    /// kWh adds η·c to the state of charge; discharge is lossless.
    pub efficiency: f64,
    pub initial_soc_kwh: f64,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_kw >= 0.0)
            || !(self.capacity_kwh >= 0.0)
            || !(self.efficiency > 0.0 && self.efficiency <= 1.0)
            || !(self.initial_soc_kwh >= 0.0 && self.initial_soc_kwh <= self.capacity_kwh)
        {
            return Err(Error::Invalid(format!(
                "battery spec out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Result of a HEMS run: per-slot AC-side battery energy and the resulting
/// net load (kWh; positive = import x⁺, negative = export x⁻).
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    /// State of charge after each slot (kWh).
    pub soc: Vec<f64>,
    pub net_load: Vec<f64>,
    /// Σ s⁺x⁺ − s⁻x⁻ of the schedule.
    pub cost: f64,
}

impl Dispatch {
    pub fn import(&self, t: usize) -> f64 {
        self.net_load[t].max(0.0)
    }

    pub fn export(&self, t: usize) -> f64 {
        (-self.net_load[t]).max(0.0)
    }
}

/// Default SoC discretization of the HEMS dynamic program (kWh).
pub const DEFAULT_SOC_STEP_KWH: f64 = 0.1;

/// Minimize Σ (s⁺ x⁺ − s⁻ x⁻) over battery schedules by exact dynamic
/// programming on a SoC grid of `soc_step` kWh resolution.
pub fn hems_schedule(
    profile: &HouseholdProfile,
    battery: &BatterySpec,
    tariffs: &TariffSchedule,
    slot_hours: f64,
    soc_step: f64,
) -> Result<Dispatch> {
    battery.validate()?;
    let slots = tariffs.slots();
    profile.validate(slots)?;
    if !(slot_hours > 0.0) || !(soc_step > 0.0) {
        return Err(Error::Invalid(
            "slot length and SoC step must be positive".into(),
        ));
    }

    let levels = if battery.capacity_kwh > 0.0 {
        (battery.capacity_kwh / soc_step).round().max(1.0) as usize
    } else {
        0
    };
    // Snap the step so the grid hits 0 and the full capacity exactly.
    let step = if levels > 0 {
        battery.capacity_kwh / levels as f64
    } else {
        0.0
    };
    let throughput = battery.power_kw * slot_hours;
    let max_up = if levels > 0 {
        ((throughput * battery.efficiency) / step + 1e-9).floor() as i64
    } else {
        0
    };
    let max_down = if levels > 0 {
        (throughput / step + 1e-9).floor() as i64
    } else {
        0
    };
    let start_level = if levels > 0 {
        (battery.initial_soc_kwh / step).round() as i64
    } else {
        0
    };

    // Level change k per slot: charge k·step/η AC in (k > 0) or discharge
    // −k·step out (k < 0), capped by the inverter throughput.
    let slot_cost = |t: usize, k: i64| -> f64 {
        let (c, d) = if k > 0 {
            (k as f64 * step / battery.efficiency, 0.0)
        } else {
            (0.0, -k as f64 * step)
        };
        let net = profile.demand[t] - profile.pv[t] + c - d;
        tariffs.import[t] * net.max(0.0) - tariffs.export[t] * (-net).max(0.0)
    };

    // Backward value table; candidate moves are visited idle-first so ties
    // resolve to the least battery activity.
    let n_states = levels + 1;
    let mut value = vec![0.0f64; n_states];
    let mut choice = vec![vec![0i64; n_states]; slots];
    let moves: Vec<i64> = {
        let mut m = vec![0i64];
        for k in 1..=max_up.max(max_down) {
            if k <= max_up {
                m.push(k);
            }
            if k <= max_down {
                m.push(-k);
            }
        }
        m
    };
    for t in (0..slots).rev() {
        let mut next = vec![f64::INFINITY; n_states];
        for l in 0..n_states as i64 {
            for &k in &moves {
                let l2 = l + k;
                if l2 < 0 || l2 > levels as i64 {
                    continue;
                }
                let cost = slot_cost(t, k) + value[l2 as usize];
                if cost < next[l as usize] {
                    next[l as usize] = cost;
                    choice[t][l as usize] = k;
                }
            }
        }
        value = next;
    }

    let mut dispatch = Dispatch {
        charge: vec![0.0; slots],
        discharge: vec![0.0; slots],
        soc: vec![0.0; slots],
        net_load: vec![0.0; slots],
        cost: 0.0,
    };
    let mut level = start_level;
    for t in 0..slots {
        let k = if levels > 0 {
            choice[t][level as usize]
        } else {
            0
        };
        if k > 0 {
            dispatch.charge[t] = k as f64 * step / battery.efficiency;
        } else {
            dispatch.discharge[t] = -k as f64 * step;
        }
        level += k;
        dispatch.soc[t] = level as f64 * step;
        dispatch.net_load[t] =
            profile.demand[t] - profile.pv[t] + dispatch.charge[t] - dispatch.discharge[t];
        dispatch.cost += tariffs.import[t] * dispatch.net_load[t].max(0.0)
            - tariffs.export[t] * (-dispatch.net_load[t]).max(0.0);
    }
    Ok(dispatch)
}

/// Per-slot surplus w_t = max(0, generation + discharge − demand − charge),
/// i.e. the exportable side of the net load.
pub fn surplus(profile: &HouseholdProfile, dispatch: Option<&Dispatch>, t: usize) -> f64 {
    match dispatch {
        Some(d) => d.export(t),
        None => (profile.pv[t] - profile.demand[t]).max(0.0),
    }
}

/// Market intent of a household for one slot: consumers bid their demand,
/// prosumers with surplus ask it. Returns None when the household has
/// nothing to trade (zero demand, or a prosumer at/below balance — deficits
/// settle with the retailer).
pub fn make_trader(
    profile: &HouseholdProfile,
    dispatch: Option<&Dispatch>,
    tariffs: &TariffSchedule,
    t: usize,
    rng: &mut impl Rng,
) -> Option<ZipTrader> {
    let node = profile.node?;
    let bounds = tariffs.bounds(t);
    match profile.kind {
        HouseholdKind::Consumer => {
            let d = profile.demand[t];
            (d > 0.0)
                .then(|| ZipTrader::new(&profile.id, node, Side::Bid, bounds.1, bounds, d, rng))
        }
        HouseholdKind::Prosumer1 | HouseholdKind::Prosumer2 => {
            let w = surplus(profile, dispatch, t);
            (w > 0.0)
                .then(|| ZipTrader::new(&profile.id, node, Side::Ask, bounds.0, bounds, w, rng))
        }
        HouseholdKind::Ces => None,
    }
}

/// Community energy storage: placement, battery, and its trading windows in
/// slot indices (half-open).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CesSpec {
    pub node: usize,
    pub battery: BatterySpec,
    pub buy_slots: (usize, usize),
    pub sell_slots: (usize, usize),
}

/// CES order intent for one slot given its current state of charge: buy up
/// to the inverter throughput inside the buy window, sell inside the sell
/// window, idle otherwise.
pub fn ces_policy(ces: &CesSpec, t: usize, soc_kwh: f64, slot_hours: f64) -> Option<(Side, f64)> {
    let throughput = ces.battery.power_kw * slot_hours;
    if t >= ces.buy_slots.0 && t < ces.buy_slots.1 {
        let headroom = (ces.battery.capacity_kwh - soc_kwh).max(0.0);
        let qty = throughput.min(headroom);
        return (qty > 0.0).then_some((Side::Bid, qty));
    }
    if t >= ces.sell_slots.0 && t < ces.sell_slots.1 {
        let qty = throughput.min(soc_kwh.max(0.0));
        return (qty > 0.0).then_some((Side::Ask, qty));
    }
    None
}

/// Population mix for the synthetic profile generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Census {
    pub consumers: usize,
    pub prosumers1: usize,
    pub prosumers2: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.consumers + self.prosumers1 + self.prosumers2
    }
}

/// Seeded synthetic day profiles: a diurnal demand shape (morning and
/// evening peaks) and a clear-sky PV bell, both with mild per-household and
/// per-slot noise. A stand-in for measured data, not a load model.
pub fn generate_profiles(
    census: &Census,
    slots: usize,
    slot_hours: f64,
    pv_kwp: f64,
    seed: u64,
) -> Vec<HouseholdProfile> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(census.total());
    let kinds = std::iter::empty()
        .chain(std::iter::repeat_n(
            HouseholdKind::Consumer,
            census.consumers,
        ))
        .chain(std::iter::repeat_n(
            HouseholdKind::Prosumer1,
            census.prosumers1,
        ))
        .chain(std::iter::repeat_n(
            HouseholdKind::Prosumer2,
            census.prosumers2,
        ));

    for (i, kind) in kinds.enumerate() {
        let scale = rng.random_range(0.7..1.3);
        let mut demand = Vec::with_capacity(slots);
        let mut pv = Vec::with_capacity(slots);
        for t in 0..slots {
            let h = (t as f64 + 0.5) * slot_hours;
            let bell =
                |center: f64, width: f64, amp: f64| amp * (-((h - center) / width).powi(2)).exp();
            // ~0.35 kW base with morning and evening peaks.
            let kw = 0.35 + bell(8.0, 1.5, 0.5) + bell(18.5, 2.2, 1.1);
            let jitter = rng.random_range(0.85..1.15);
            demand.push(kw * scale * jitter * slot_hours);

            let sun = {
                let (rise, set) = (6.0, 20.0);
                if h > rise && h < set {
                    (std::f64::consts::PI * (h - rise) / (set - rise))
                        .sin()
                        .powf(1.5)
                } else {
                    0.0
                }
            };
            let has_pv = matches!(kind, HouseholdKind::Prosumer1 | HouseholdKind::Prosumer2);
            let pv_jitter = rng.random_range(0.9..1.1);
            pv.push(if has_pv {
                pv_kwp * sun * pv_jitter * slot_hours
            } else {
                0.0
            });
        }
        out.push(HouseholdProfile {
            id: format!("h{:03}", i + 1),
            kind,
            node: None,
            demand,
            pv,
        });
    }
    out
}
