//! Zero-intelligence-plus traders.
//!
//! Each trader owns a limit price (the buyer's maximum willingness / the
//! seller's marginal cost), keeps a current shout price inside the market
//! budget bounds [L_min, L_max], and adapts it by a Widrow-Hoff rule with
//! momentum toward a perturbed target after every market event. The profit
//! margin μ is the derived quantity shout = limit·(1+μ): μ ≤ 0 for buyers,
//! μ ≥ 0 for sellers, and the no-loss clamp keeps it that way.

use super::{OrderInput, Side, TraderId};
use rand::Rng;

/// Adaptive trader for one slot.
#[derive(Debug, Clone)]
pub struct ZipTrader {
    /// Household/storage identifier, carried through to logs.
    pub name: String,
    /// Network bus the energy physically enters or leaves at.
    pub node: usize,
    pub side: Side,
    /// No-loss boundary: max willingness for buyers, marginal cost for
    /// sellers.
    pub limit: f64,
    /// Market floor (feed-in rate).
    pub price_min: f64,
    /// Market cap (time-of-use rate).
    pub price_max: f64,
    /// Current shout price.
    pub price: f64,
    /// Learning rate β.
    pub beta: f64,
    /// Momentum coefficient γ.
    pub gamma: f64,
    /// Widrow-Hoff accumulator.
    momentum: f64,
    /// kWh still wanted/offered in this slot.
    pub remaining: f64,
    /// Permission blocking signal φ: a blocked seller submits no asks.
    pub blocked: bool,
}

impl ZipTrader {
    /// Draws the initial shout uniformly inside the budget bounds (clamped
    /// to the no-loss region) and β ~ U[0.1, 0.5], γ ~ U[0, 0.1].
    pub fn new(
        name: impl Into<String>,
        node: usize,
        side: Side,
        limit: f64,
        (price_min, price_max): (f64, f64),
        quantity: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let shout = rng.random_range(price_min..=price_max);
        let beta = rng.random_range(0.1..0.5);
        let gamma = rng.random_range(0.0..0.1);
        let mut t = ZipTrader {
            name: name.into(),
            node,
            side,
            limit,
            price_min,
            price_max,
            price: shout,
            beta,
            gamma,
            momentum: 0.0,
            remaining: quantity,
            blocked: false,
        };
        t.price = t.clamp(shout);
        t
    }

    /// Profit margin μ with shout = limit·(1+μ); 0 when the limit is 0.
    pub fn margin(&self) -> f64 {
        if self.limit != 0.0 {
            self.price / self.limit - 1.0
        } else {
            0.0
        }
    }

    pub fn active(&self) -> bool {
        self.remaining > 0.0
    }

    /// Budget bounds tightened by the no-loss constraint.
    fn clamp(&self, price: f64) -> f64 {
        let (lo, hi) = match self.side {
            Side::Bid => (self.price_min, self.price_max.min(self.limit)),
            Side::Ask => (self.price_min.max(self.limit), self.price_max),
        };
        price.clamp(lo, hi.max(lo))
    }

    /// Shout an order over the full remaining quantity. Earlier shouts are
    /// not cancelled; the book's fill cap keeps total fills within
    /// `remaining`.
    pub fn order_input(&self, trader: TraderId, time: f64, slot: usize) -> OrderInput {
        OrderInput {
            trader,
            side: self.side,
            price: self.price,
            quantity: self.remaining,
            time,
            slot,
            bounds: Some((self.price_min, self.price_max)),
        }
    }

    /// Widrow-Hoff step toward `target` with momentum, then re-clamp.
    fn adapt(&mut self, target: f64) {
        let delta = self.beta * (target - self.price);
        self.momentum = self.gamma * self.momentum + (1.0 - self.gamma) * delta;
        self.price = self.clamp(self.price + self.momentum);
    }

    fn raise_margin(&mut self, reference: f64, rng: &mut impl Rng) {
        // Raising the margin moves the shout away from the trade: down for
        // buyers, up for sellers.
        let target = match self.side {
            Side::Bid => perturb_down(reference, rng),
            Side::Ask => perturb_up(reference, rng),
        };
        self.adapt(target);
    }

    fn lower_margin(&mut self, reference: f64, rng: &mut impl Rng) {
        let target = match self.side {
            Side::Bid => perturb_up(reference, rng),
            Side::Ask => perturb_down(reference, rng),
        };
        self.adapt(target);
    }
}

fn perturb_up(price: f64, rng: &mut impl Rng) -> f64 {
    price * rng.random_range(1.0..1.05) + rng.random_range(0.0..0.05)
}

fn perturb_down(price: f64, rng: &mut impl Rng) -> f64 {
    price * rng.random_range(0.95..1.0) - rng.random_range(0.0..0.05)
}

/// The observable outcome of the last order: who shouted, the reference
/// price (clearing price if matched, else the shout itself), and whether it
/// matched.
#[derive(Debug, Clone, Copy)]
pub struct MarketEvent {
    pub side: Side,
    pub price: f64,
    pub matched: bool,
}

/// Apply the four margin-update rules to every trader.
///
/// Matched events: every buyer whose shout ≥ the clearing price raises its
/// margin, every seller whose shout ≤ it likewise; traders on the same side
/// as the shouter that were undercut (active ones only) lower theirs.
/// Unmatched events: active same-side traders priced worse than the failed
/// shout lower their margins. Traders are visited in slice order; each
/// update consumes randomness from `rng`, so iteration order is part of the
/// deterministic contract.
pub fn zip_update_all(traders: &mut [ZipTrader], event: &MarketEvent, rng: &mut impl Rng) {
    for t in traders.iter_mut() {
        match t.side {
            Side::Bid => {
                if event.matched {
                    if t.price >= event.price {
                        t.raise_margin(event.price, rng);
                    } else if event.side == Side::Ask && t.active() && t.price <= event.price {
                        t.lower_margin(event.price, rng);
                    }
                } else if event.side == Side::Bid && t.active() && t.price <= event.price {
                    t.lower_margin(event.price, rng);
                }
            }
            Side::Ask => {
                if event.matched {
                    if t.price <= event.price {
                        t.raise_margin(event.price, rng);
                    } else if event.side == Side::Bid && t.active() && t.price >= event.price {
                        t.lower_margin(event.price, rng);
                    }
                } else if event.side == Side::Ask && t.active() && t.price >= event.price {
                    t.lower_margin(event.price, rng);
                }
            }
        }
    }
}
