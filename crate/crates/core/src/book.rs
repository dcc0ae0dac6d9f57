//! Event-sourced limit order book on an integer price lattice.
//!
//! The book is a pure resting-order automaton: it never matches. Crossing
//! submissions must be decomposed upstream into executions plus a residual
//! submit (see [`crate::ingest`] and [`crate::simulator`]). Prices are tick
//! counts; the mid price is carried as an integer number of half ticks.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::time::Nanos;

pub type OrderId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// LOBSTER direction code: +1 buy, -1 sell.
    pub fn direction(self) -> i8 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    /// Price in ticks.
    pub price: i64,
    /// Size in shares.
    pub size: u64,
    /// Priority key within a price level.
    pub entry_seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Submit(Order),
    Reduce { id: OrderId, delta: u64 },
    Delete { id: OrderId },
    Execute { id: OrderId, delta: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookEvent {
    pub time: Nanos,
    pub seq: u64,
    pub kind: EventKind,
}

impl BookEvent {
    /// A submission whose priority key is the event sequence number.
    pub fn submit(time: Nanos, seq: u64, id: OrderId, side: Side, price: i64, size: u64) -> Self {
        BookEvent {
            time,
            seq,
            kind: EventKind::Submit(Order {
                id,
                side,
                price,
                size,
                entry_seq: seq,
            }),
        }
    }

    pub fn reduce(time: Nanos, seq: u64, id: OrderId, delta: u64) -> Self {
        BookEvent {
            time,
            seq,
            kind: EventKind::Reduce { id, delta },
        }
    }

    pub fn delete(time: Nanos, seq: u64, id: OrderId) -> Self {
        BookEvent {
            time,
            seq,
            kind: EventKind::Delete { id },
        }
    }

    pub fn execute(time: Nanos, seq: u64, id: OrderId, delta: u64) -> Self {
        BookEvent {
            time,
            seq,
            kind: EventKind::Execute { id, delta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BookError {
    #[error("unknown order id {0}")]
    UnknownOrderId(OrderId),
    #[error("order id {0} is already resting")]
    DuplicateOrderId(OrderId),
    #[error("order {id}: delta {delta} exceeds resting size {resting}")]
    OverReduce { id: OrderId, delta: u64, resting: u64 },
    #[error("{side:?} submit at {price} crosses opposite best {opposite}")]
    CrossedSubmit { side: Side, price: i64, opposite: i64 },
    #[error("invalid order {id}: price {price}, size {size}")]
    InvalidOrder { id: OrderId, price: i64, size: u64 },
    #[error("zero delta for order {0}")]
    ZeroDelta(OrderId),
    #[error("event seq {seq} does not follow {last}")]
    NonMonotoneSeq { seq: u64, last: u64 },
    #[error("event time {time} precedes {last}")]
    NonMonotoneTime { time: Nanos, last: Nanos },
    #[error("one or both sides of the book are empty")]
    EmptySide,
}

/// Best quotes at an instant. `bid < ask` always holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuoteSnapshot {
    pub time: Nanos,
    pub bid: i64,
    pub ask: i64,
    pub bid_size: u64,
    pub ask_size: u64,
}

impl QuoteSnapshot {
    pub fn spread_ticks(&self) -> i64 {
        self.ask - self.bid
    }

    /// Mid price in half ticks, `a + b`.
    pub fn mid_half_ticks(&self) -> i64 {
        self.ask + self.bid
    }

    pub fn mid_ticks(&self) -> f64 {
        self.mid_half_ticks() as f64 / 2.0
    }

    /// The (b, a, n^b, n^a) tuple used for change detection.
    pub fn quotes(&self) -> (i64, i64, u64, u64) {
        (self.bid, self.ask, self.bid_size, self.ask_size)
    }

    pub fn imbalance(&self) -> Result<f64, ImbalanceError> {
        queue_imbalance(self.bid_size, self.ask_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("both best queues are empty")]
pub struct ImbalanceError;

/// `(nb - na) / (nb + na)`.
pub fn queue_imbalance(bid_size: u64, ask_size: u64) -> Result<f64, ImbalanceError> {
    let total = bid_size + ask_size;
    if total == 0 {
        return Err(ImbalanceError);
    }
    Ok((bid_size as f64 - ask_size as f64) / total as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Level {
    total: u64,
    // entry_seq -> order id, FIFO by key
    queue: BTreeMap<u64, OrderId>,
}

/// Outcome of [`BookState::apply_event`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Applied {
    pub snapshot: Option<QuoteSnapshot>,
    pub changed: bool,
}

type BestPair = (Option<(i64, u64)>, Option<(i64, u64)>);

#[derive(Clone, Debug)]
pub struct BookState {
    /// Raw price units per tick (LOBSTER prices are dollars x 10000).
    pub tick_size: i64,
    pub lot_size: u64,
    bids: BTreeMap<i64, Level>,
    asks: BTreeMap<i64, Level>,
    orders: HashMap<OrderId, Order>,
    last_seq: Option<u64>,
    time: Nanos,
}

impl Default for BookState {
    fn default() -> Self {
        BookState::new(1, 1)
    }
}

impl BookState {
    pub fn new(tick_size: i64, lot_size: u64) -> Self {
        BookState {
            tick_size,
            lot_size,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            orders: HashMap::new(),
            last_seq: None,
            time: Nanos(0),
        }
    }

    pub fn time(&self) -> Nanos {
        self.time
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn order_count(&self) -> usize {
        self.orders.len()
    }

    pub fn best_bid(&self) -> Option<(i64, u64)> {
        self.bids.iter().next_back().map(|(p, l)| (*p, l.total))
    }

    pub fn best_ask(&self) -> Option<(i64, u64)> {
        self.asks.iter().next().map(|(p, l)| (*p, l.total))
    }

    fn best_pair(&self) -> BestPair {
        (self.best_bid(), self.best_ask())
    }

    fn side_map(&self, side: Side) -> &BTreeMap<i64, Level> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_map_mut(&mut self, side: Side) -> &mut BTreeMap<i64, Level> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub fn is_empty(&self, side: Side) -> bool {
        self.side_map(side).is_empty()
    }

    /// Total resting shares at `price` on `side`.
    pub fn depth_at(&self, side: Side, price: i64) -> u64 {
        self.side_map(side).get(&price).map_or(0, |l| l.total)
    }

    /// Occupied price levels of one side, best first, with their totals.
    pub fn levels(&self, side: Side) -> Box<dyn Iterator<Item = (i64, u64)> + '_> {
        match side {
            Side::Buy => Box::new(self.bids.iter().rev().map(|(p, l)| (*p, l.total))),
            Side::Sell => Box::new(self.asks.iter().map(|(p, l)| (*p, l.total))),
        }
    }

    /// Orders resting at one price in priority order.
    pub fn queue_at(&self, side: Side, price: i64) -> impl Iterator<Item = &Order> + '_ {
        self.side_map(side)
            .get(&price)
            .into_iter()
            .flat_map(|l| l.queue.values())
            .map(move |id| &self.orders[id])
    }

    /// Orders on one side in full price-time priority.
    pub fn priority_orders(&self, side: Side) -> Vec<&Order> {
        self.levels(side)
            .flat_map(|(price, _)| self.queue_at(side, price))
            .collect()
    }

    /// Best quotes, or `EmptySide` when either side has no orders.
    pub fn quote(&self) -> Result<QuoteSnapshot, BookError> {
        match self.best_pair() {
            (Some((bid, bid_size)), Some((ask, ask_size))) => Ok(QuoteSnapshot {
                time: self.time,
                bid,
                ask,
                bid_size,
                ask_size,
            }),
            _ => Err(BookError::EmptySide),
        }
    }

    /// Checks `ev` against the current state without mutating it.
    pub fn validate(&self, ev: &BookEvent) -> Result<(), BookError> {
        if let Some(last) = self.last_seq {
            if ev.seq <= last {
                return Err(BookError::NonMonotoneSeq { seq: ev.seq, last });
            }
            if ev.time < self.time {
                return Err(BookError::NonMonotoneTime {
                    time: ev.time,
                    last: self.time,
                });
            }
        }
        match ev.kind {
            EventKind::Submit(o) => {
                if o.price < 1 || o.size == 0 {
                    return Err(BookError::InvalidOrder {
                        id: o.id,
                        price: o.price,
                        size: o.size,
                    });
                }
                if self.orders.contains_key(&o.id) {
                    return Err(BookError::DuplicateOrderId(o.id));
                }
                let crossing = match o.side {
                    Side::Buy => self.best_ask().filter(|(a, _)| o.price >= *a),
                    Side::Sell => self.best_bid().filter(|(b, _)| o.price <= *b),
                };
                if let Some((opposite, _)) = crossing {
                    return Err(BookError::CrossedSubmit {
                        side: o.side,
                        price: o.price,
                        opposite,
                    });
                }
            }
            EventKind::Reduce { id, delta } | EventKind::Execute { id, delta } => {
                let o = self.orders.get(&id).ok_or(BookError::UnknownOrderId(id))?;
                if delta == 0 {
                    return Err(BookError::ZeroDelta(id));
                }
                if delta > o.size {
                    return Err(BookError::OverReduce {
                        id,
                        delta,
                        resting: o.size,
                    });
                }
            }
            EventKind::Delete { id } => {
                if !self.orders.contains_key(&id) {
                    return Err(BookError::UnknownOrderId(id));
                }
            }
        }
        Ok(())
    }

    /// Applies one event. On error the book is left untouched.
    pub fn apply_event(&mut self, ev: &BookEvent) -> Result<Applied, BookError> {
        self.validate(ev)?;
        let before = self.best_pair();
        match ev.kind {
            EventKind::Submit(o) => {
                let level = self.side_map_mut(o.side).entry(o.price).or_default();
                level.total += o.size;
                level.queue.insert(o.entry_seq, o.id);
                self.orders.insert(o.id, o);
            }
            EventKind::Reduce { id, delta } | EventKind::Execute { id, delta } => {
                self.shrink(id, delta);
            }
            EventKind::Delete { id } => {
                let size = self.orders[&id].size;
                self.shrink(id, size);
            }
        }
        self.last_seq = Some(ev.seq);
        self.time = ev.time;
        let after = self.best_pair();
        Ok(Applied {
            snapshot: self.quote().ok(),
            changed: before != after,
        })
    }

    fn shrink(&mut self, id: OrderId, delta: u64) {
        let order = self.orders.get_mut(&id).expect("validated");
        order.size -= delta;
        let Order {
            side,
            price,
            size,
            entry_seq,
            ..
        } = *order;
        if size == 0 {
            self.orders.remove(&id);
        }
        let book = self.side_map_mut(side);
        let level = book.get_mut(&price).expect("resting order has a level");
        level.total -= delta;
        if size == 0 {
            level.queue.remove(&entry_seq);
            if level.queue.is_empty() {
                book.remove(&price);
            }
        }
    }

    /// Canonical serialized form: both sides in priority order.
    pub fn to_canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            tick_size: i64,
            lot_size: u64,
            time: Nanos,
            last_seq: Option<u64>,
            bids: Vec<&'a Order>,
            asks: Vec<&'a Order>,
        }
        serde_json::to_string(&View {
            tick_size: self.tick_size,
            lot_size: self.lot_size,
            time: self.time,
            last_seq: self.last_seq,
            bids: self.priority_orders(Side::Buy),
            asks: self.priority_orders(Side::Sell),
        })
        .expect("book view serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: u64) -> Nanos {
        Nanos::from_secs(s)
    }

    fn book_with(events: &[BookEvent]) -> BookState {
        let mut b = BookState::new(1, 1);
        for e in events {
            b.apply_event(e).unwrap();
        }
        b
    }

    #[test]
    fn quote_sums_queue_at_best() {
        let b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 5),
            BookEvent::submit(t(1), 2, 2, Side::Buy, 100, 10),
            BookEvent::submit(t(1), 3, 3, Side::Sell, 101, 7),
        ]);
        let q = b.quote().unwrap();
        assert_eq!(q.quotes(), (100, 101, 15, 7));
        assert_eq!(q.spread_ticks(), 1);
        assert_eq!(q.mid_ticks(), 100.5);
    }

    #[test]
    fn minimum_spread_is_one_tick() {
        let b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 41, 1),
            BookEvent::submit(t(1), 2, 2, Side::Sell, 42, 1),
        ]);
        assert_eq!(b.quote().unwrap().spread_ticks(), 1);
    }

    #[test]
    fn empty_side_has_no_quote() {
        let b = book_with(&[BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 5)]);
        assert_eq!(b.quote(), Err(BookError::EmptySide));
    }

    #[test]
    fn inside_spread_submit_raises_bid() {
        // lattice in half-cent ticks: 200 = $1.00, 202 = $1.01, 201 sits inside
        let mut b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 200, 50),
            BookEvent::submit(t(1), 2, 2, Side::Sell, 202, 20),
        ]);
        let out = b
            .apply_event(&BookEvent::submit(t(2), 3, 3, Side::Buy, 201, 10))
            .unwrap();
        assert!(out.changed);
        let q = out.snapshot.unwrap();
        assert_eq!((q.bid, q.bid_size), (201, 10));
    }

    #[test]
    fn depleting_best_bid_falls_back_a_level() {
        let mut b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 30),
            BookEvent::submit(t(1), 2, 2, Side::Buy, 99, 70),
            BookEvent::submit(t(1), 3, 3, Side::Sell, 101, 5),
        ]);
        let out = b.apply_event(&BookEvent::execute(t(2), 4, 1, 30)).unwrap();
        assert!(out.changed);
        let q = out.snapshot.unwrap();
        assert_eq!((q.bid, q.bid_size), (99, 70));
        assert!(b.order(1).is_none());
    }

    #[test]
    fn partial_reduce_keeps_prices() {
        let mut b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 20),
            BookEvent::submit(t(1), 2, 2, Side::Sell, 101, 5),
        ]);
        let out = b.apply_event(&BookEvent::reduce(t(2), 3, 1, 5)).unwrap();
        assert!(out.changed);
        assert_eq!(out.snapshot.unwrap().quotes(), (100, 101, 15, 5));
        assert_eq!(b.order(1).unwrap().size, 15);
    }

    #[test]
    fn deep_change_is_not_a_quote_change() {
        let mut b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 20),
            BookEvent::submit(t(1), 2, 2, Side::Sell, 101, 5),
        ]);
        let out = b.apply_event(&BookEvent::submit(t(2), 3, 3, Side::Buy, 90, 5)).unwrap();
        assert!(!out.changed);
    }

    #[test]
    fn errors_leave_book_untouched() {
        let mut b = book_with(&[
            BookEvent::submit(t(1), 1, 1, Side::Buy, 100, 20),
            BookEvent::submit(t(1), 2, 2, Side::Sell, 101, 5),
        ]);
        let before = b.to_canonical_json();
        assert_eq!(
            b.apply_event(&BookEvent::reduce(t(2), 3, 9, 1)),
            Err(BookError::UnknownOrderId(9))
        );
        assert_eq!(
            b.apply_event(&BookEvent::execute(t(2), 3, 2, 6)),
            Err(BookError::OverReduce {
                id: 2,
                delta: 6,
                resting: 5
            })
        );
        assert_eq!(
            b.apply_event(&BookEvent::submit(t(2), 3, 4, Side::Buy, 101, 1)),
            Err(BookError::CrossedSubmit {
                side: Side::Buy,
                price: 101,
                opposite: 101
            })
        );
        assert!(matches!(
            b.apply_event(&BookEvent::submit(t(2), 2, 4, Side::Buy, 99, 1)),
            Err(BookError::NonMonotoneSeq { .. })
        ));
        assert!(matches!(
            b.apply_event(&BookEvent::submit(t(0), 3, 4, Side::Buy, 99, 1)),
            Err(BookError::NonMonotoneTime { .. })
        ));
        assert_eq!(b.to_canonical_json(), before);
    }

    #[test]
    fn fifo_within_level() {
        let b = book_with(&[
            BookEvent::submit(t(1), 5, 50, Side::Sell, 101, 1),
            BookEvent::submit(t(1), 6, 60, Side::Sell, 101, 1),
            BookEvent::submit(t(1), 7, 70, Side::Sell, 100, 1),
        ]);
        let ids: Vec<_> = b.priority_orders(Side::Sell).iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![70, 50, 60]);
    }

    #[test]
    fn imbalance_values() {
        assert_eq!(queue_imbalance(200, 100).unwrap(), 1.0 / 3.0);
        assert_eq!(queue_imbalance(100, 200).unwrap(), -1.0 / 3.0);
        for k in [1, 7, 1000] {
            assert_eq!(queue_imbalance(k, k).unwrap(), 0.0);
        }
        assert_eq!(queue_imbalance(0, 0), Err(ImbalanceError));
    }
}
