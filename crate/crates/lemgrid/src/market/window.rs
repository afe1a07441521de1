//! One slot's trading window: Poisson-timed activations of random traders.

use super::{
    zip_update_all, MarketEvent, Order, OrderBook, Rejection, Side, Trade, TradeGate, ZipTrader,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub struct WindowParams {
    pub slot: usize,
    /// Window opening time t_d^st (logical time units).
    pub t_start: f64,
    /// Window length t_d; the market closes at t_d^st + t_d.
    pub duration: f64,
    /// Total order arrival rate λ (events per logical time unit).
    pub arrival_rate: f64,
}

/// Default λ: an expected 10 activations per trader over the window.
pub fn default_arrival_rate(n_traders: usize, duration: f64) -> f64 {
    if duration > 0.0 {
        10.0 * n_traders as f64 / duration
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// An order was shouted into the book.
    Shout,
    /// Activated with nothing left to trade.
    Idle,
    /// Activated seller currently blocked by the permission signal.
    Blocked,
}

/// Audit record of one activation.
#[derive(Debug, Clone, Serialize)]
pub struct OrderEvent {
    pub time: f64,
    pub trader: String,
    pub side: Side,
    pub kind: EventKind,
    /// Shout price (the trader's current price even for idle events).
    pub price: f64,
    /// Shouted quantity (0 for idle/blocked events).
    pub quantity: f64,
    pub order_id: Option<u64>,
}

#[derive(Debug, Default)]
pub struct WindowOutcome {
    pub trades: Vec<Trade>,
    pub rejections: Vec<Rejection>,
    pub events: Vec<OrderEvent>,
    /// Residual orders at close, in book order.
    pub expired: Vec<Order>,
}

/// Run one slot's auction. Arrival times are exponential with rate
/// `params.arrival_rate`; each event activates a uniformly random trader who
/// shouts one order over its full remaining quantity (re-shouting at its
/// adapted price is how ZIP price pressure reaches the book). All randomness
/// comes from `rng`, so identical inputs and seed give a bit-identical
/// outcome.
pub fn run_trading_window(
    traders: &mut [ZipTrader],
    gate: &mut dyn TradeGate,
    params: &WindowParams,
    rng: &mut ChaCha8Rng,
) -> WindowOutcome {
    let mut outcome = WindowOutcome::default();
    let mut book = OrderBook::new(params.slot);
    let t_end = params.t_start + params.duration;

    if traders.is_empty() || params.arrival_rate <= 0.0 {
        return outcome;
    }

    let mut remaining: Vec<f64> = traders.iter().map(|t| t.remaining).collect();
    let mut t = params.t_start;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / params.arrival_rate;
        if t >= t_end {
            break;
        }
        let idx = rng.random_range(0..traders.len());

        if traders[idx].side == Side::Ask && traders[idx].blocked {
            outcome.events.push(OrderEvent {
                time: t,
                trader: traders[idx].name.clone(),
                side: traders[idx].side,
                kind: EventKind::Blocked,
                price: traders[idx].price,
                quantity: 0.0,
                order_id: None,
            });
            continue;
        }
        if traders[idx].remaining <= 0.0 {
            outcome.events.push(OrderEvent {
                time: t,
                trader: traders[idx].name.clone(),
                side: traders[idx].side,
                kind: EventKind::Idle,
                price: traders[idx].price,
                quantity: 0.0,
                order_id: None,
            });
            continue;
        }

        let input = traders[idx].order_input(idx, t, params.slot);
        let shout_side = input.side;
        let shout_price = input.price;
        let shout_qty = input.quantity;
        let matched = book
            .submit_capped(input, &mut remaining, gate)
            .expect("window submits only well-formed orders");

        outcome.events.push(OrderEvent {
            time: t,
            trader: traders[idx].name.clone(),
            side: shout_side,
            kind: EventKind::Shout,
            price: shout_price,
            quantity: shout_qty,
            order_id: Some(matched.order_id),
        });

        for trade in &matched.trades {
            traders[trade.buyer].remaining -= trade.quantity;
            traders[trade.seller].remaining -= trade.quantity;
        }

        // Margin adaptation: one event per cleared trade, or one unmatched
        // event for a fruitless shout (a gate rejection counts as no match).
        if matched.trades.is_empty() {
            zip_update_all(
                traders,
                &MarketEvent {
                    side: shout_side,
                    price: shout_price,
                    matched: false,
                },
                rng,
            );
        } else {
            for trade in &matched.trades {
                zip_update_all(
                    traders,
                    &MarketEvent {
                        side: shout_side,
                        price: trade.price,
                        matched: true,
                    },
                    rng,
                );
            }
        }
        outcome.trades.extend(matched.trades);
        outcome.rejections.extend(matched.rejections);
    }

    outcome.expired = book.drain();
    outcome
}
