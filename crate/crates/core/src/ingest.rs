//! LOBSTER message ingestion.
//!
//! A message file is one row per book event:
//! `time,type,order_id,size,price,direction` with time in decimal seconds
//! after midnight and price in dollars x 10000. The level-1 orderbook file
//! aligned to it carries `ask_price,ask_size,bid_price,bid_size` per row.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::book::{BookError, BookEvent, BookState, EventKind, QuoteSnapshot, Side};
use crate::time::Nanos;

/// LOBSTER sentinel prices for an empty side in orderbook files.
pub const EMPTY_ASK_PRICE: i64 = 9_999_999_999;
pub const EMPTY_BID_PRICE: i64 = -9_999_999_999;

/// Raw LOBSTER prices are dollars x 10000.
pub const PRICE_SCALE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    Submit = 1,
    Cancel = 2,
    Delete = 3,
    Execute = 4,
    ExecuteHidden = 5,
    Cross = 6,
    Halt = 7,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => MessageType::Submit,
            2 => MessageType::Cancel,
            3 => MessageType::Delete,
            4 => MessageType::Execute,
            5 => MessageType::ExecuteHidden,
            6 => MessageType::Cross,
            7 => MessageType::Halt,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobsterMessage {
    pub time: Nanos,
    pub kind: MessageType,
    pub order_id: u64,
    pub size: u64,
    /// Dollars x 10000.
    pub price: i64,
    pub side: Side,
}

impl LobsterMessage {
    pub fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time,
            self.kind.code(),
            self.order_id,
            self.size,
            self.price,
            self.side.direction()
        )
    }

    /// Trade value in currency units.
    pub fn notional(&self) -> f64 {
        self.size as f64 * self.price as f64 / PRICE_SCALE
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: malformed row ({reason})")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: time goes backwards")]
    NonMonotoneTime { line: usize },
    #[error("line {line}: unknown message type code {code}")]
    UnknownTypeCode { line: usize, code: String },
    #[error("message {index}: price {price} is not a multiple of the tick {tick}")]
    OffTickPrice { index: usize, price: i64, tick: i64 },
    #[error("message {index}: {source}")]
    Book { index: usize, source: BookError },
    #[error("reconstructed {reconstructed} quotes but snapshot file has {snapshots} rows")]
    LengthMismatch { reconstructed: usize, snapshots: usize },
    #[error("no data to summarize")]
    NoData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

/// Parses one message row. `line` is 1-based and only used for errors.
pub fn parse_message_row(row: &str, line: usize) -> Result<LobsterMessage, IngestError> {
    let fields: Vec<&str> = row.trim_end_matches(['\r', '\n']).split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(malformed(line, format!("expected 6 fields, found {}", fields.len())));
    }
    let time: Nanos = fields[0].parse().map_err(|e| malformed(line, format!("{e}")))?;
    let code: u8 = fields[1].parse().map_err(|_| IngestError::UnknownTypeCode {
        line,
        code: fields[1].to_string(),
    })?;
    let kind = MessageType::from_code(code).ok_or_else(|| IngestError::UnknownTypeCode {
        line,
        code: fields[1].to_string(),
    })?;
    let order_id: u64 = fields[2].parse().map_err(|_| malformed(line, "order id"))?;
    let size: u64 = fields[3].parse().map_err(|_| malformed(line, "size"))?;
    let price: i64 = fields[4].parse().map_err(|_| malformed(line, "price"))?;
    let side = match fields[5] {
        "1" => Side::Buy,
        "-1" => Side::Sell,
        other => return Err(malformed(line, format!("direction {other}"))),
    };
    Ok(LobsterMessage {
        time,
        kind,
        order_id,
        size,
        price,
        side,
    })
}

/// Parses a whole message file, checking that time never decreases.
pub fn parse_message_file<R: BufRead>(reader: R) -> Result<Vec<LobsterMessage>, IngestError> {
    let mut out = Vec::new();
    let mut last = Nanos(0);
    for (i, row) in reader.lines().enumerate() {
        let row = row?;
        if row.trim().is_empty() {
            continue;
        }
        let msg = parse_message_row(&row, i + 1)?;
        if msg.time < last {
            return Err(IngestError::NonMonotoneTime { line: i + 1 });
        }
        last = msg.time;
        out.push(msg);
    }
    Ok(out)
}

pub fn write_message_file(msgs: &[LobsterMessage]) -> String {
    let mut s = String::with_capacity(msgs.len() * 48);
    for m in msgs {
        s.push_str(&m.to_row());
        s.push('\n');
    }
    s
}

/// One row of a level-1 orderbook file, raw LOBSTER units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level1Row {
    pub ask_price: i64,
    pub ask_size: u64,
    pub bid_price: i64,
    pub bid_size: u64,
}

impl Level1Row {
    pub fn to_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.ask_price, self.ask_size, self.bid_price, self.bid_size
        )
    }
}

/// Reads the first four columns of a LOBSTER orderbook file.
pub fn parse_orderbook_file<R: BufRead>(reader: R) -> Result<Vec<Level1Row>, IngestError> {
    let mut out = Vec::new();
    for (i, row) in reader.lines().enumerate() {
        let row = row?;
        if row.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() < 4 || !f.len().is_multiple_of(4) {
            return Err(malformed(i + 1, format!("orderbook row has {} fields", f.len())));
        }
        let int = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| malformed(i + 1, format!("bad number {s:?}")))
        };
        let uint = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| malformed(i + 1, format!("bad size {s:?}")))
        };
        out.push(Level1Row {
            ask_price: int(f[0])?,
            ask_size: uint(f[1])?,
            bid_price: int(f[2])?,
            bid_size: uint(f[3])?,
        });
    }
    Ok(out)
}

pub fn write_orderbook_file(rows: &[Level1Row]) -> String {
    let mut s = String::with_capacity(rows.len() * 40);
    for r in rows {
        let _ = writeln!(s, "{}", r.to_row());
    }
    s
}

/// Book events derived from a message stream.
#[derive(Clone, Debug, Default)]
pub struct Conversion {
    pub events: Vec<BookEvent>,
    /// Index of the originating message for each event.
    pub origin: Vec<usize>,
    pub hidden_executions: usize,
    pub hidden_volume: u64,
    pub ignored_auction: usize,
    pub ignored_halt: usize,
    pub decomposed_submits: usize,
}

fn to_ticks(price: i64, tick: i64, index: usize) -> Result<i64, IngestError> {
    if price % tick != 0 {
        return Err(IngestError::OffTickPrice { index, price, tick });
    }
    Ok(price / tick)
}

/// Normalizes messages into book events.
///
/// A shadow book is maintained so that crossing submissions can be split
/// into executions against the opposite queue in priority order plus a
/// resting residual.
pub fn messages_to_events(msgs: &[LobsterMessage], tick_size: i64) -> Result<Conversion, IngestError> {
    let mut book = BookState::new(tick_size, 1);
    let mut conv = Conversion {
        events: Vec::with_capacity(msgs.len()),
        ..Default::default()
    };
    let mut seq = 0u64;
    let push = |book: &mut BookState, conv: &mut Conversion, ev: BookEvent, index: usize| {
        book.apply_event(&ev)
            .map_err(|source| IngestError::Book { index, source })?;
        conv.events.push(ev);
        conv.origin.push(index);
        Ok::<_, IngestError>(())
    };
    for (index, m) in msgs.iter().enumerate() {
        match m.kind {
            MessageType::Submit => {
                let price = to_ticks(m.price, tick_size, index)?;
                let mut remaining = m.size;
                let opposite = m.side.opposite();
                let mut crossed = false;
                while remaining > 0 {
                    let best = match m.side {
                        Side::Buy => book.best_ask().filter(|(a, _)| price >= *a),
                        Side::Sell => book.best_bid().filter(|(b, _)| price <= *b),
                    };
                    let Some((level, _)) = best else { break };
                    let head = *book.queue_at(opposite, level).next().expect("occupied level");
                    let fill = remaining.min(head.size);
                    seq += 1;
                    push(
                        &mut book,
                        &mut conv,
                        BookEvent::execute(m.time, seq, head.id, fill),
                        index,
                    )?;
                    remaining -= fill;
                    crossed = true;
                }
                if crossed {
                    conv.decomposed_submits += 1;
                }
                if remaining > 0 {
                    seq += 1;
                    let ev = BookEvent::submit(m.time, seq, m.order_id, m.side, price, remaining);
                    push(&mut book, &mut conv, ev, index)?;
                }
            }
            MessageType::Cancel => {
                seq += 1;
                push(
                    &mut book,
                    &mut conv,
                    BookEvent::reduce(m.time, seq, m.order_id, m.size),
                    index,
                )?;
            }
            MessageType::Delete => {
                seq += 1;
                push(&mut book, &mut conv, BookEvent::delete(m.time, seq, m.order_id), index)?;
            }
            MessageType::Execute => {
                seq += 1;
                push(
                    &mut book,
                    &mut conv,
                    BookEvent::execute(m.time, seq, m.order_id, m.size),
                    index,
                )?;
            }
            MessageType::ExecuteHidden => {
                conv.hidden_executions += 1;
                conv.hidden_volume += m.size;
                log::debug!("message {index}: hidden execution of {} shares", m.size);
            }
            MessageType::Cross => {
                conv.ignored_auction += 1;
                log::warn!("message {index}: auction cross ignored for book state");
            }
            MessageType::Halt => {
                conv.ignored_halt += 1;
                log::warn!("message {index}: trading halt indicator ignored for book state");
            }
        }
    }
    Ok(conv)
}

/// Best quotes after one event; either side may be empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub time: Nanos,
    /// (price in ticks, shares)
    pub bid: Option<(i64, u64)>,
    pub ask: Option<(i64, u64)>,
    pub changed: bool,
}

impl Step {
    pub fn from_book(book: &BookState, changed: bool) -> Self {
        Step {
            time: book.time(),
            bid: book.best_bid(),
            ask: book.best_ask(),
            changed,
        }
    }

    pub fn snapshot(&self) -> Option<QuoteSnapshot> {
        let ((bid, bid_size), (ask, ask_size)) = (self.bid?, self.ask?);
        Some(QuoteSnapshot {
            time: self.time,
            bid,
            ask,
            bid_size,
            ask_size,
        })
    }

    pub fn level1(&self, tick_size: i64) -> Level1Row {
        let (bid_price, bid_size) = self.bid.map_or((EMPTY_BID_PRICE, 0), |(p, n)| (p * tick_size, n));
        let (ask_price, ask_size) = self.ask.map_or((EMPTY_ASK_PRICE, 0), |(p, n)| (p * tick_size, n));
        Level1Row {
            ask_price,
            ask_size,
            bid_price,
            bid_size,
        }
    }
}

/// Replays events into a fresh book and records the best quotes after each.
pub fn replay(events: &[BookEvent], tick_size: i64) -> Result<Vec<Step>, IngestError> {
    let mut book = BookState::new(tick_size, 1);
    events
        .iter()
        .enumerate()
        .map(|(index, ev)| {
            let a = book
                .apply_event(ev)
                .map_err(|source| IngestError::Book { index, source })?;
            Ok(Step::from_book(&book, a.changed))
        })
        .collect()
}

/// Book state after each message, for alignment with a LOBSTER orderbook
/// file. Messages that emit no event (hidden executions, auction and halt
/// markers) repeat the previous state; split submissions report the state
/// after their last piece.
pub fn steps_per_message(conv: &Conversion, steps: &[Step], msgs: &[LobsterMessage]) -> Vec<Step> {
    let mut out = Vec::with_capacity(msgs.len());
    let mut k = 0;
    let mut current = Step {
        time: Nanos(0),
        bid: None,
        ask: None,
        changed: false,
    };
    for (index, m) in msgs.iter().enumerate() {
        let mut changed = false;
        while k < conv.origin.len() && conv.origin[k] == index {
            changed |= steps[k].changed;
            current = steps[k];
            k += 1;
        }
        out.push(Step {
            time: m.time,
            changed,
            ..current
        });
    }
    out
}

/// Continuous-trading window eligible for sampling, `[open, close)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub open: Nanos,
    pub close: Nanos,
}

impl Default for SessionWindow {
    /// 10:00 to 15:30.
    fn default() -> Self {
        SessionWindow {
            open: Nanos::from_secs(36_000),
            close: Nanos::from_secs(55_800),
        }
    }
}

impl SessionWindow {
    pub fn new(open: Nanos, close: Nanos) -> Option<Self> {
        (open < close).then_some(SessionWindow { open, close })
    }

    pub fn contains(&self, t: Nanos) -> bool {
        self.open <= t && t < self.close
    }

    /// Splits time-ordered items into (pre-open, in-session) index bounds:
    /// `[0, a)` warm up the book, `[a, b)` are eligible for sampling.
    pub fn bounds<T>(&self, items: &[T], time_of: impl Fn(&T) -> Nanos) -> (usize, usize) {
        let a = items.partition_point(|x| time_of(x) < self.open);
        let b = items.partition_point(|x| time_of(x) < self.close);
        (a, b)
    }
}

/// Events of one day split at the session boundaries.
#[derive(Clone, Copy, Debug)]
pub struct SessionSlice<'a> {
    pub warmup: &'a [BookEvent],
    pub session: &'a [BookEvent],
}

pub fn session_filter(events: &[BookEvent], window: SessionWindow) -> SessionSlice<'_> {
    let (a, b) = window.bounds(events, |e| e.time);
    SessionSlice {
        warmup: &events[..a],
        session: &events[a..b],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub expected: Level1Row,
    pub reconstructed: Level1Row,
}

/// Compares reconstructed best quotes to a level-1 orderbook file.
/// An empty result means every row agrees.
pub fn verify_against_snapshots(
    steps: &[Step],
    rows: &[Level1Row],
    tick_size: i64,
) -> Result<Vec<Mismatch>, IngestError> {
    if steps.len() != rows.len() {
        return Err(IngestError::LengthMismatch {
            reconstructed: steps.len(),
            snapshots: rows.len(),
        });
    }
    Ok(steps
        .iter()
        .zip(rows)
        .enumerate()
        .filter_map(|(index, (step, row))| {
            let rec = step.level1(tick_size);
            (rec != *row).then_some(Mismatch {
                index,
                expected: *row,
                reconstructed: rec,
            })
        })
        .collect())
}

/// Per-day accumulators behind the trading-activity summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayActivity {
    pub executed_value: f64,
    pub executed_shares: u64,
    pub limit_at_best_value: f64,
    pub min_trade_price: Option<f64>,
    pub max_trade_price: Option<f64>,
    /// Integrals over two-sided session time, in share-ns and tick-ns.
    pub bid_queue_area: u128,
    pub ask_queue_area: u128,
    pub spread_area: u128,
    pub covered_ns: u128,
    pub tick_size: i64,
}

/// Accumulates one day's activity inside `window`.
///
/// Trade volume counts visible and hidden executions; limit volume counts
/// submissions that join or improve the best quote on their side. Queue and
/// spread averages are time-weighted over the session, with the state at
/// the open inherited from pre-open events.
pub fn day_activity(
    msgs: &[LobsterMessage],
    conv: &Conversion,
    steps: &[Step],
    window: SessionWindow,
    tick_size: i64,
) -> DayActivity {
    let mut act = DayActivity {
        tick_size,
        ..Default::default()
    };
    let trade = |shares: u64, price: i64, act: &mut DayActivity| {
        let p = price as f64 / PRICE_SCALE;
        act.executed_value += shares as f64 * p;
        act.executed_shares += shares;
        act.min_trade_price = Some(act.min_trade_price.map_or(p, |x| x.min(p)));
        act.max_trade_price = Some(act.max_trade_price.map_or(p, |x| x.max(p)));
    };
    for m in msgs.iter().filter(|m| window.contains(m.time)) {
        if matches!(m.kind, MessageType::ExecuteHidden) {
            trade(m.size, m.price, &mut act);
        }
    }
    // resting price of every order, so split submissions trade at the
    // passive price
    let mut resting_price = HashMap::new();
    for (k, ev) in conv.events.iter().enumerate() {
        if let EventKind::Submit(o) = ev.kind {
            resting_price.insert(o.id, o.price);
        }
        if !window.contains(ev.time) {
            continue;
        }
        match ev.kind {
            EventKind::Execute { id, delta } => {
                let price = resting_price
                    .get(&id)
                    .map_or(msgs[conv.origin[k]].price, |p| p * tick_size);
                trade(delta, price, &mut act);
            }
            EventKind::Submit(o) => {
                let prior = if k == 0 { None } else { steps[k - 1].snapshot() };
                let at_best = match (prior, o.side) {
                    (Some(q), Side::Buy) => o.price >= q.bid,
                    (Some(q), Side::Sell) => o.price <= q.ask,
                    (None, _) => true,
                };
                if at_best {
                    act.limit_at_best_value += o.size as f64 * (o.price * tick_size) as f64 / PRICE_SCALE;
                }
            }
            _ => {}
        }
    }
    let (a, b) = window.bounds(steps, |s| s.time);
    let mut current = if a == 0 { None } else { steps[a - 1].snapshot() };
    let mut since = window.open;
    let accrue = |q: Option<QuoteSnapshot>, from: Nanos, to: Nanos, act: &mut DayActivity| {
        if let Some(q) = q {
            let dt = u128::from(to.0 - from.0);
            act.bid_queue_area += u128::from(q.bid_size) * dt;
            act.ask_queue_area += u128::from(q.ask_size) * dt;
            act.spread_area += q.spread_ticks() as u128 * dt;
            act.covered_ns += dt;
        }
    };
    for s in &steps[a..b] {
        accrue(current, since, s.time, &mut act);
        current = s.snapshot();
        since = s.time;
    }
    accrue(current, since, window.close, &mut act);
    act
}

/// Trading-activity summary for one instrument over its days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub days: usize,
    /// Executed value in currency.
    pub market_order_value: f64,
    /// Value of limit orders arriving at the best quotes, in currency.
    pub limit_order_value: f64,
    pub min_trade_price: Option<f64>,
    pub max_trade_price: Option<f64>,
    /// Time-weighted mean best-queue sizes in shares.
    pub mean_bid_queue: f64,
    pub mean_ask_queue: f64,
    /// Time-weighted mean spread in currency.
    pub mean_spread: f64,
}

pub fn summary_stats(days: &[DayActivity]) -> Result<SummaryStats, IngestError> {
    let covered: u128 = days.iter().map(|d| d.covered_ns).sum();
    if days.is_empty() || covered == 0 {
        return Err(IngestError::NoData);
    }
    let fold_opt = |f: fn(f64, f64) -> f64, get: fn(&DayActivity) -> Option<f64>| {
        days.iter()
            .filter_map(get)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| f(a, x))))
    };
    let spread_currency: f64 = days
        .iter()
        .map(|d| d.spread_area as f64 * d.tick_size as f64 / PRICE_SCALE)
        .sum();
    Ok(SummaryStats {
        days: days.len(),
        market_order_value: days.iter().map(|d| d.executed_value).sum(),
        limit_order_value: days.iter().map(|d| d.limit_at_best_value).sum(),
        min_trade_price: fold_opt(f64::min, |d| d.min_trade_price),
        max_trade_price: fold_opt(f64::max, |d| d.max_trade_price),
        mean_bid_queue: days.iter().map(|d| d.bid_queue_area).sum::<u128>() as f64 / covered as f64,
        mean_ask_queue: days.iter().map(|d| d.ask_queue_area).sum::<u128>() as f64 / covered as f64,
        mean_spread: spread_currency / covered as f64,
    })
}
