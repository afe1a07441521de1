//! Continuous double auction for one time slot.
//!
//! Orders queue in a price-time order book; a new order that crosses the
//! opposite best is matched repeatedly until no cross remains or it is
//! exhausted, clearing each step at the standing (earlier) order's price.
//! Every provisional match is passed to a [`TradeGate`] before it becomes a
//! trade — the network operator sits behind that trait. A rejected match
//! ends the incoming order's matching; the residual rests in the book, so a
//! crossed book can persist at rest only under a rejecting gate.
//!
//! Traders re-shout on every activation without cancelling earlier orders,
//! so one trader may have several orders resting. [`OrderBook::submit_capped`]
//! keeps that sound: fills are capped by the owner's remaining energy and a
//! standing order whose owner is exhausted is evicted the moment matching
//! touches it.

mod window;
mod zip;

pub use window::{
    default_arrival_rate, run_trading_window, EventKind, OrderEvent, WindowOutcome, WindowParams,
};
pub use zip::{zip_update_all, MarketEvent, ZipTrader};

use crate::error::{Error, Result};
use serde::Serialize;

/// Index of a trader within the slot's trader set.
pub type TraderId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

/// A resting order. `quantity` is what is still open; partial fills keep the
/// original arrival time (and therefore queue position).
#[derive(Debug, Clone, Serialize)]
pub struct Order {
    pub id: u64,
    pub trader: TraderId,
    pub side: Side,
    /// currency per kWh.
    pub price: f64,
    /// Remaining kWh, > 0.
    pub quantity: f64,
    /// kWh at submission.
    pub submitted: f64,
    /// Arrival time within the trading window.
    pub time: f64,
    pub slot: usize,
    seq: u64,
}

/// What a trader hands to [`OrderBook::submit`].
#[derive(Debug, Clone)]
pub struct OrderInput {
    pub trader: TraderId,
    pub side: Side,
    pub price: f64,
    pub quantity: f64,
    pub time: f64,
    pub slot: usize,
    /// Budget bounds to enforce at the door, when the caller has them.
    pub bounds: Option<(f64, f64)>,
}

/// A match awaiting the gate's verdict.
#[derive(Debug, Clone, Serialize)]
pub struct ProvisionalTrade {
    pub buyer: TraderId,
    pub seller: TraderId,
    pub buyer_order: u64,
    pub seller_order: u64,
    /// Standing-order price.
    pub price: f64,
    pub quantity: f64,
    pub slot: usize,
    pub time: f64,
}

/// A cleared, gate-approved transaction with its allocated network costs.
#[derive(Debug, Clone, Serialize)]
pub struct Trade {
    pub buyer: TraderId,
    pub seller: TraderId,
    pub buyer_order: u64,
    pub seller_order: u64,
    pub price: f64,
    pub quantity: f64,
    pub slot: usize,
    pub time: f64,
    pub loss_charge: f64,
    pub congestion_charge: f64,
}

/// Gate verdict for one provisional trade.
#[derive(Debug, Clone)]
pub enum GateDecision {
    Approve {
        loss_charge: f64,
        congestion_charge: f64,
    },
    Reject {
        reason: String,
    },
}

/// Decides whether a provisional trade may clear, and prices its network
/// costs. Implementations may mutate internal state on approval (committing
/// the exchange).
pub trait TradeGate {
    fn validate(&mut self, trade: &ProvisionalTrade) -> GateDecision;

    /// Whether this trader currently may not submit asks.
    fn seller_blocked(&self, _trader: TraderId) -> bool {
        false
    }
}

/// Gate that approves everything at zero network cost.
pub struct AlwaysApprove;

impl TradeGate for AlwaysApprove {
    fn validate(&mut self, _trade: &ProvisionalTrade) -> GateDecision {
        GateDecision::Approve {
            loss_charge: 0.0,
            congestion_charge: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub trade: ProvisionalTrade,
    pub reason: String,
}

/// Result of one submission.
#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    pub order_id: u64,
    pub trades: Vec<Trade>,
    /// At most one entry: a rejection ends the matching loop.
    pub rejections: Vec<Rejection>,
    /// Quantity left resting in the book (0 if fully filled).
    pub rested: f64,
}

/// Price-time priority book for a single slot.
#[derive(Debug)]
pub struct OrderBook {
    slot: usize,
    /// Best first: price descending, then time/seq ascending.
    bids: Vec<Order>,
    /// Best first: price ascending, then time/seq ascending.
    asks: Vec<Order>,
    next_id: u64,
    next_seq: u64,
    closed: bool,
}

impl OrderBook {
    pub fn new(slot: usize) -> Self {
        OrderBook {
            slot,
            bids: Vec::new(),
            asks: Vec::new(),
            next_id: 1,
            next_seq: 1,
            closed: false,
        }
    }

    pub fn best_bid(&self) -> Option<&Order> {
        self.bids.first()
    }

    pub fn best_ask(&self) -> Option<&Order> {
        self.asks.first()
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Submit an order, match it as far as the gate allows, and rest any
    /// residual. Fills are bounded by order quantities only; use
    /// [`Self::submit_capped`] when traders can re-shout.
    pub fn submit(&mut self, input: OrderInput, gate: &mut dyn TradeGate) -> Result<MatchOutcome> {
        self.submit_inner(input, None, gate)
    }

    /// Like [`Self::submit`], but additionally caps every fill by the
    /// involved traders' remaining energy (`remaining` is indexed by trader
    /// id and decremented on execution) and evicts standing orders whose
    /// owner has nothing left.
    pub fn submit_capped(
        &mut self,
        input: OrderInput,
        remaining: &mut [f64],
        gate: &mut dyn TradeGate,
    ) -> Result<MatchOutcome> {
        self.submit_inner(input, Some(remaining), gate)
    }

    fn submit_inner(
        &mut self,
        input: OrderInput,
        mut remaining: Option<&mut [f64]>,
        gate: &mut dyn TradeGate,
    ) -> Result<MatchOutcome> {
        if self.closed || input.slot != self.slot {
            return Err(Error::MarketClosed {
                order_slot: input.slot,
                book_slot: self.slot,
            });
        }
        if !(input.quantity > 0.0) || !input.quantity.is_finite() {
            return Err(Error::BadOrder(format!(
                "quantity must be positive, got {}",
                input.quantity
            )));
        }
        if !input.price.is_finite() {
            return Err(Error::BadOrder(format!(
                "price must be finite, got {}",
                input.price
            )));
        }
        if let Some((lo, hi)) = input.bounds {
            if input.price < lo || input.price > hi {
                return Err(Error::BadOrder(format!(
                    "price {} outside budget bounds [{lo}, {hi}]",
                    input.price
                )));
            }
        }
        if input.side == Side::Ask && gate.seller_blocked(input.trader) {
            return Err(Error::BadOrder(format!(
                "trader {} is blocked from submitting asks",
                input.trader
            )));
        }

        let mut order = Order {
            id: self.next_id,
            trader: input.trader,
            side: input.side,
            price: input.price,
            quantity: input.quantity,
            submitted: input.quantity,
            time: input.time,
            slot: self.slot,
            seq: self.next_seq,
        };
        self.next_id += 1;
        self.next_seq += 1;

        let mut outcome = MatchOutcome {
            order_id: order.id,
            ..Default::default()
        };

        loop {
            if order.quantity <= 0.0 {
                break;
            }
            if let Some(rem) = remaining.as_deref() {
                if rem[order.trader] <= 0.0 {
                    break;
                }
            }
            let opposite = match order.side {
                Side::Bid => &mut self.asks,
                Side::Ask => &mut self.bids,
            };
            let Some(best) = opposite.first_mut() else {
                break;
            };
            // A standing order whose owner has re-shouted its energy away
            // (or the incoming trader's own earlier shout) is stale: drop it
            // and look at the next one.
            let stale = best.trader == order.trader
                || remaining
                    .as_deref()
                    .is_some_and(|rem| rem[best.trader] <= 0.0);
            if stale {
                opposite.remove(0);
                continue;
            }
            let crosses = match order.side {
                Side::Bid => order.price >= best.price,
                Side::Ask => order.price <= best.price,
            };
            if !crosses {
                break;
            }
            let mut quantity = order.quantity.min(best.quantity);
            if let Some(rem) = remaining.as_deref() {
                quantity = quantity.min(rem[order.trader]).min(rem[best.trader]);
            }
            let (buyer_o, seller_o) = match order.side {
                Side::Bid => (&order, &*best),
                Side::Ask => (&*best, &order),
            };
            let provisional = ProvisionalTrade {
                buyer: buyer_o.trader,
                seller: seller_o.trader,
                buyer_order: buyer_o.id,
                seller_order: seller_o.id,
                price: best.price,
                quantity,
                slot: self.slot,
                time: order.time,
            };
            match gate.validate(&provisional) {
                GateDecision::Approve {
                    loss_charge,
                    congestion_charge,
                } => {
                    outcome.trades.push(Trade {
                        buyer: provisional.buyer,
                        seller: provisional.seller,
                        buyer_order: provisional.buyer_order,
                        seller_order: provisional.seller_order,
                        price: provisional.price,
                        quantity,
                        slot: self.slot,
                        time: order.time,
                        loss_charge,
                        congestion_charge,
                    });
                    best.quantity -= quantity;
                    order.quantity -= quantity;
                    if let Some(rem) = remaining.as_deref_mut() {
                        rem[provisional.buyer] -= quantity;
                        rem[provisional.seller] -= quantity;
                    }
                    let best_done = best.quantity <= 0.0
                        || remaining
                            .as_deref()
                            .is_some_and(|rem| rem[best.trader] <= 0.0);
                    if best_done {
                        opposite.remove(0);
                    }
                }
                GateDecision::Reject { reason } => {
                    outcome.rejections.push(Rejection {
                        trade: provisional,
                        reason,
                    });
                    // The match is off; both residuals stay/rest.
                    break;
                }
            }
        }

        if let Some(rem) = remaining.as_deref() {
            order.quantity = order.quantity.min(rem[order.trader]);
        }
        if order.quantity > 0.0 {
            outcome.rested = order.quantity;
            self.rest(order);
        }
        Ok(outcome)
    }

    fn rest(&mut self, order: Order) {
        let queue = match order.side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        let side = order.side;
        let pos = queue.partition_point(|resting| {
            let price_first = match side {
                Side::Bid => resting.price > order.price,
                Side::Ask => resting.price < order.price,
            };
            price_first
                || (resting.price == order.price
                    && (resting.time, resting.seq) <= (order.time, order.seq))
        });
        queue.insert(pos, order);
    }

    /// Close the book and take every residual order (best first, bids then
    /// asks).
    pub fn drain(&mut self) -> Vec<Order> {
        self.closed = true;
        let mut out = std::mem::take(&mut self.bids);
        out.append(&mut self.asks);
        out
    }
}
