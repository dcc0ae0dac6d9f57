//! Zero-intelligence order-flow simulator.
//!
//! Limit submissions, market orders and cancellations arrive as mutually
//! independent Poisson processes. Buy limits land uniformly on the `L`
//! lattice points `[a - L, a - 1]` below the best ask (sells mirror this
//! above the bid), so they never cross. Market orders walk the opposite
//! queue in priority order and each resting order is cancelled at rate
//! `cancel_rate`. The next event is chosen by exponential competition
//! among all processes (Gillespie).
//!
//! Randomness comes from four ChaCha8 streams split off one seed:
//! stream 0 drives waiting times and process selection, stream 1 limit
//! price placement, stream 2 cancellation targets, stream 3 order sizes.

use std::collections::HashMap;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::book::{BookEvent, BookState, OrderId, Side};
use crate::ingest::{LobsterMessage, MessageType, Step};
use crate::time::{Nanos, NANOS_PER_SEC};

/// Starting book: `levels` occupied prices per side, `orders_per_level`
/// orders of `order_size` each, best bid at `best_bid` and the ask
/// `spread` ticks above.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialBook {
    pub best_bid: i64,
    pub spread: i64,
    pub levels: u32,
    pub orders_per_level: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZiConfig {
    /// Limit arrivals per second, per price level, per side.
    pub limit_rate: f64,
    /// Number of lattice points where limit orders may land.
    pub levels: u32,
    /// Market orders per second, per side.
    pub market_rate: f64,
    /// Cancellations per second, per resting order.
    pub cancel_rate: f64,
    /// Shares per lot.
    pub order_size: u64,
    /// Order sizes are uniform on `1..=max_lots` lots (1 gives fixed sizes).
    pub max_lots: u64,
    /// Raw price units (dollars x 10000) per tick.
    pub tick_size: i64,
    pub start: Nanos,
    pub horizon_secs: f64,
    /// Optional cap on dynamic (post-initial-book) messages.
    pub max_events: Option<u64>,
    pub seed: u64,
    pub initial_book: InitialBook,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("all rates are zero but {0} events were demanded")]
    DegenerateConfig(u64),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?} (expected large-tick or small-tick)")]
    UnknownPreset(String),
}

/// Number of events generated by each process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessCounts {
    pub limit_buy: u64,
    pub limit_sell: u64,
    pub market_buy: u64,
    pub market_sell: u64,
    pub cancel: u64,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub messages: Vec<LobsterMessage>,
    /// Best quotes after each message.
    pub truth: Vec<Step>,
    pub counts: ProcessCounts,
    /// Simulated time actually covered (seconds).
    pub elapsed_secs: f64,
    /// Set when a side emptied and the run stopped early.
    pub side_depleted: bool,
}

impl ZiConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        for (name, r) in [
            ("limit_rate", self.limit_rate),
            ("market_rate", self.market_rate),
            ("cancel_rate", self.cancel_rate),
        ] {
            if !(r.is_finite() && r >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.levels < 1 {
            return bad("levels must be at least 1");
        }
        if !(self.horizon_secs.is_finite() && self.horizon_secs > 0.0) {
            return bad("horizon must be positive");
        }
        if self.order_size == 0 || self.max_lots == 0 || self.tick_size < 1 {
            return bad("order size and tick size must be positive");
        }
        let ib = self.initial_book;
        if ib.levels == 0 || ib.orders_per_level == 0 || ib.spread < 1 || ib.best_bid < ib.levels as i64 {
            return bad("initial book must occupy both sides on valid prices");
        }
        Ok(())
    }

    fn all_rates_zero(&self) -> bool {
        self.limit_rate == 0.0 && self.market_rate == 0.0 && self.cancel_rate == 0.0
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Calibrated regimes. `large-tick`: spread pinned near one tick and long
/// best queues. `small-tick`: wide spreads and short queues.
pub fn regime_preset(name: &str) -> Result<ZiConfig, SimError> {
    let day = |(limit_rate, levels, market_rate, cancel_rate, max_lots), initial_book| ZiConfig {
        limit_rate,
        levels,
        market_rate,
        cancel_rate,
        order_size: 100,
        max_lots,
        tick_size: 100,
        start: Nanos::from_secs(34_200),
        horizon_secs: 23_400.0,
        max_events: None,
        seed: 0,
        initial_book,
    };
    match name {
        "large-tick" => Ok(day(
            LARGE_TICK,
            InitialBook {
                best_bid: 2_000,
                spread: 1,
                levels: 4,
                orders_per_level: 100,
            },
        )),
        "small-tick" => Ok(day(
            SMALL_TICK,
            InitialBook {
                best_bid: 40_000,
                spread: 8,
                levels: 30,
                orders_per_level: 2,
            },
        )),
        other => Err(SimError::UnknownPreset(other.to_string())),
    }
}

// (limit_rate, levels, market_rate, cancel_rate, max_lots)
const LARGE_TICK: (f64, u32, f64, f64, u64) = (0.5, 2, 0.5, 1.0 / 800.0, 1);
const SMALL_TICK: (f64, u32, f64, f64, u64) = (0.01, 40, 0.12, 0.005, 5);

struct Resting {
    ids: Vec<OrderId>,
    pos: HashMap<OrderId, usize>,
}

impl Resting {
    fn insert(&mut self, id: OrderId) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
    }

    fn remove(&mut self, id: OrderId) {
        let i = self.pos.remove(&id).expect("resting id");
        self.ids.swap_remove(i);
        if let Some(&moved) = self.ids.get(i) {
            self.pos.insert(moved, i);
        }
    }
}

struct Run<'a> {
    cfg: &'a ZiConfig,
    book: BookState,
    resting: Resting,
    out: SimOutput,
    next_id: OrderId,
    seq: u64,
    sizes: ChaCha8Rng,
}

impl Run<'_> {
    fn record(&mut self, msg: LobsterMessage, ev: BookEvent) {
        let applied = self.book.apply_event(&ev).expect("simulator emits valid events");
        self.out.messages.push(msg);
        self.out.truth.push(Step::from_book(&self.book, applied.changed));
    }

    fn draw_size(&mut self) -> u64 {
        match self.cfg.max_lots {
            1 => self.cfg.order_size,
            m => self.cfg.order_size * self.sizes.random_range(1..=m),
        }
    }

    fn submit(&mut self, time: Nanos, side: Side, price: i64) {
        self.next_id += 1;
        self.seq += 1;
        let id = self.next_id;
        let size = self.draw_size();
        let msg = LobsterMessage {
            time,
            kind: MessageType::Submit,
            order_id: id,
            size,
            price: price * self.cfg.tick_size,
            side,
        };
        self.record(msg, BookEvent::submit(time, self.seq, id, side, price, size));
        self.resting.insert(id);
    }

    /// Aggressor `side` consumes the opposite queue.
    fn market(&mut self, time: Nanos, side: Side) {
        let passive = side.opposite();
        let mut remaining = self.draw_size();
        while remaining > 0 {
            let best = match passive {
                Side::Sell => self.book.best_ask(),
                Side::Buy => self.book.best_bid(),
            };
            let Some((price, _)) = best else { break };
            let head = *self.book.queue_at(passive, price).next().expect("occupied level");
            let fill = remaining.min(head.size);
            self.seq += 1;
            let msg = LobsterMessage {
                time,
                kind: MessageType::Execute,
                order_id: head.id,
                size: fill,
                price: price * self.cfg.tick_size,
                side: passive,
            };
            self.record(msg, BookEvent::execute(time, self.seq, head.id, fill));
            if fill == head.size {
                self.resting.remove(head.id);
            }
            remaining -= fill;
        }
    }

    fn cancel(&mut self, time: Nanos, id: OrderId) {
        let o = *self.book.order(id).expect("resting order");
        self.seq += 1;
        let msg = LobsterMessage {
            time,
            kind: MessageType::Delete,
            order_id: id,
            size: o.size,
            price: o.price * self.cfg.tick_size,
            side: o.side,
        };
        self.record(msg, BookEvent::delete(time, self.seq, id));
        self.resting.remove(id);
    }
}

fn exp_wait(u: f64, rate: f64) -> f64 {
    // u in [0, 1): 1 - u in (0, 1]
    -libm::log(1.0 - u) / rate
}

pub fn simulate(cfg: &ZiConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let mut out = SimOutput {
        messages: Vec::new(),
        truth: Vec::new(),
        counts: ProcessCounts::default(),
        elapsed_secs: 0.0,
        side_depleted: false,
    };
    if cfg.all_rates_zero() {
        return match cfg.max_events {
            Some(n) if n > 0 => Err(SimError::DegenerateConfig(n)),
            _ => Ok(out),
        };
    }
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = |k: u64| {
        let mut r = base.clone();
        r.set_stream(k);
        r
    };
    let (mut clock, mut place, mut pick) = (split(0), split(1), split(2));
    let sizes = split(3);

    out.messages.reserve(1 << 16);
    let mut run = Run {
        cfg,
        book: BookState::new(cfg.tick_size, cfg.order_size),
        resting: Resting {
            ids: Vec::new(),
            pos: HashMap::new(),
        },
        out,
        next_id: 0,
        seq: 0,
        sizes,
    };

    let ib = cfg.initial_book;
    for lvl in 0..ib.levels as i64 {
        for _ in 0..ib.orders_per_level {
            run.submit(cfg.start, Side::Buy, ib.best_bid - lvl);
            run.submit(cfg.start, Side::Sell, ib.best_bid + ib.spread + lvl);
        }
    }

    let horizon_ns = (cfg.horizon_secs * NANOS_PER_SEC as f64) as u64;
    let mut elapsed = 0.0f64;
    let mut dynamic = 0u64;
    loop {
        if cfg.max_events.is_some_and(|cap| dynamic >= cap) {
            break;
        }
        let (Some((bid, _)), Some((ask, _))) = (run.book.best_bid(), run.book.best_ask()) else {
            run.out.side_depleted = true;
            break;
        };
        let buy_levels = (cfg.levels as i64).min(ask - 1).max(0);
        let sell_levels = cfg.levels as i64;
        let rates = [
            cfg.limit_rate * buy_levels as f64,
            cfg.limit_rate * sell_levels as f64,
            cfg.market_rate,
            cfg.market_rate,
            cfg.cancel_rate * run.resting.ids.len() as f64,
        ];
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            break;
        }
        elapsed += exp_wait(clock.random::<f64>(), total);
        let offset_ns = (elapsed * NANOS_PER_SEC as f64) as u64;
        if elapsed >= cfg.horizon_secs || offset_ns >= horizon_ns {
            elapsed = cfg.horizon_secs;
            break;
        }
        let time = Nanos(cfg.start.0 + offset_ns);
        let mut u = clock.random::<f64>() * total;
        let mut which = rates.len() - 1;
        for (k, r) in rates.iter().enumerate() {
            if u < *r {
                which = k;
                break;
            }
            u -= r;
        }
        match which {
            0 => {
                let k = place.random_range(1..=buy_levels);
                run.submit(time, Side::Buy, ask - k);
                run.out.counts.limit_buy += 1;
            }
            1 => {
                let k = place.random_range(1..=sell_levels);
                run.submit(time, Side::Sell, bid + k);
                run.out.counts.limit_sell += 1;
            }
            2 => {
                run.market(time, Side::Buy);
                run.out.counts.market_buy += 1;
            }
            3 => {
                run.market(time, Side::Sell);
                run.out.counts.market_sell += 1;
            }
            _ => {
                let n = run.resting.ids.len();
                if n == 0 {
                    continue;
                }
                let id = run.resting.ids[pick.random_range(0..n)];
                run.cancel(time, id);
                run.out.counts.cancel += 1;
            }
        }
        dynamic += 1;
    }
    run.out.elapsed_secs = elapsed;
    Ok(run.out)
}
