use std::io::Cursor;

use lobqi::book::{BookState, EventKind, Side};
use lobqi::ingest::*;
use lobqi::simulator::{regime_preset, simulate, ZiConfig};
use lobqi::time::Nanos;
use proptest::prelude::*;

fn message() -> impl Strategy<Value = (u64, u8, u64, u64, i64, bool)> {
    (
        0u64..5_000_000_000,
        1u8..=7,
        1u64..1u64 << 40,
        0u64..100_000,
        1i64..100_000_000,
        any::<bool>(),
    )
}

fn short_day(seed: u64) -> (ZiConfig, Vec<LobsterMessage>, Vec<Step>) {
    let cfg = ZiConfig {
        horizon_secs: 3_600.0,
        ..regime_preset("large-tick").unwrap()
    }
    .with_seed(seed);
    let out = simulate(&cfg).unwrap();
    (cfg, out.messages, out.truth)
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_identity(rows in prop::collection::vec(message(), 1..60)) {
        let mut t = 34_200_000_000_000u64;
        let text: String = rows
            .iter()
            .map(|&(dt, code, id, size, price, buy)| {
                t += dt;
                format!("{},{code},{id},{size},{price},{}\n", Nanos(t), if buy { 1 } else { -1 })
            })
            .collect();
        let first = parse_message_file(Cursor::new(text.as_bytes())).unwrap();
        let written = write_message_file(&first);
        let second = parse_message_file(Cursor::new(written.as_bytes())).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(write_message_file(&second), written);
    }

    #[test]
    fn short_decimal_times_survive(secs in 0u64..86_400, frac in 0u32..1_000_000) {
        let row = format!("{secs}.{frac:06},3,42,100,1000000,-1");
        let m = parse_message_row(&row, 1).unwrap();
        prop_assert_eq!(m.time, Nanos(secs * 1_000_000_000 + u64::from(frac) * 1_000));
        prop_assert_eq!(parse_message_row(&m.to_row(), 1).unwrap(), m);
    }
}

#[test]
fn simulated_stream_reconstructs_exactly() {
    let (cfg, msgs, truth) = short_day(3);
    let text = write_message_file(&msgs);
    let parsed = parse_message_file(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(parsed, msgs);
    let book_text = write_orderbook_file(&truth.iter().map(|s| s.level1(cfg.tick_size)).collect::<Vec<_>>());
    let rows = parse_orderbook_file(Cursor::new(book_text.as_bytes())).unwrap();
    let conv = messages_to_events(&parsed, cfg.tick_size).unwrap();
    let steps = replay(&conv.events, cfg.tick_size).unwrap();
    let per_msg = steps_per_message(&conv, &steps, &parsed);
    assert!(verify_against_snapshots(&per_msg, &rows, cfg.tick_size)
        .unwrap()
        .is_empty());
    assert!(verify_against_snapshots(&per_msg[1..], &rows, cfg.tick_size).is_err());
}

#[test]
fn execute_volume_matches_traded_volume() {
    let (cfg, msgs, _) = short_day(5);
    let conv = messages_to_events(&msgs, cfg.tick_size).unwrap();
    let mut book = BookState::new(cfg.tick_size, 1);
    let mut executed = [0u64; 2];
    for ev in &conv.events {
        if let EventKind::Execute { id, delta } = ev.kind {
            let side = book.order(id).unwrap().side;
            executed[usize::from(side == Side::Sell)] += delta;
        }
        book.apply_event(ev).unwrap();
    }
    let mut traded = [0u64; 2];
    for m in msgs.iter().filter(|m| m.kind == MessageType::Execute) {
        traded[usize::from(m.side == Side::Sell)] += m.size;
    }
    assert_eq!(executed, traded);
    assert!(traded[0] > 0 && traded[1] > 0);
}

#[test]
fn crossing_submissions_keep_volume_balanced() {
    // resting asks 7 and 5 at 100.00; a 15-share buy at 100.01 takes both
    // and rests 3 at its limit
    let rows = "1.0,1,1,50,999900,1\n1.0,1,2,7,1000000,-1\n1.1,1,3,5,1000000,-1\n2.0,1,4,15,1000100,1\n";
    let msgs = parse_message_file(Cursor::new(rows.as_bytes())).unwrap();
    let conv = messages_to_events(&msgs, 100).unwrap();
    let executed: u64 = conv
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Execute { delta, .. } => Some(delta),
            _ => None,
        })
        .sum();
    assert_eq!(executed, 12);
    let steps = replay(&conv.events, 100).unwrap();
    assert_eq!(steps.last().unwrap().bid, Some((10_001, 3)));
}

#[test]
fn session_filter_does_not_alter_evolution() {
    let (cfg, msgs, _) = short_day(9);
    let conv = messages_to_events(&msgs, cfg.tick_size).unwrap();
    let window = SessionWindow::new(Nanos::from_secs(35_000), Nanos::from_secs(37_000)).unwrap();
    let slice = session_filter(&conv.events, window);
    assert!(!slice.warmup.is_empty() && !slice.session.is_empty());
    assert!(slice.session.iter().all(|e| window.contains(e.time)));
    let mut piecewise = BookState::new(cfg.tick_size, 1);
    for ev in slice.warmup.iter().chain(slice.session) {
        piecewise.apply_event(ev).unwrap();
    }
    let n = slice.warmup.len() + slice.session.len();
    let mut whole = BookState::new(cfg.tick_size, 1);
    for ev in &conv.events[..n] {
        whole.apply_event(ev).unwrap();
    }
    assert_eq!(piecewise.to_canonical_json(), whole.to_canonical_json());
}

/// Single pass over per-message best quotes and trades.
fn activity_oracle(msgs: &[LobsterMessage], truth: &[Step], window: SessionWindow) -> (f64, f64, f64, f64) {
    let mut value = 0.0;
    for m in msgs {
        if window.contains(m.time) && matches!(m.kind, MessageType::Execute | MessageType::ExecuteHidden) {
            value += m.size as f64 * m.price as f64 / 10_000.0;
        }
    }
    let (mut bid_area, mut ask_area, mut spread_area, mut covered) = (0.0, 0.0, 0.0, 0.0);
    let mut state: Option<Step> = None;
    let mut since = window.open.0;
    for s in truth {
        if s.time.0 >= window.close.0 {
            break;
        }
        if s.time.0 >= window.open.0 {
            if let Some(q) = state.and_then(|q| q.snapshot()) {
                let dt = (s.time.0 - since) as f64;
                bid_area += q.bid_size as f64 * dt;
                ask_area += q.ask_size as f64 * dt;
                spread_area += q.spread_ticks() as f64 * dt;
                covered += dt;
            }
            since = s.time.0;
        }
        state = Some(*s);
    }
    if let Some(q) = state.and_then(|q| q.snapshot()) {
        let dt = (window.close.0 - since) as f64;
        bid_area += q.bid_size as f64 * dt;
        ask_area += q.ask_size as f64 * dt;
        spread_area += q.spread_ticks() as f64 * dt;
        covered += dt;
    }
    (value, bid_area / covered, ask_area / covered, spread_area / covered)
}

#[test]
fn summary_matches_single_pass_oracle() {
    let (cfg, msgs, truth) = short_day(21);
    let window = SessionWindow::new(Nanos::from_secs(34_500), Nanos::from_secs(37_000)).unwrap();
    let conv = messages_to_events(&msgs, cfg.tick_size).unwrap();
    let steps = replay(&conv.events, cfg.tick_size).unwrap();
    let act = day_activity(&msgs, &conv, &steps, window, cfg.tick_size);
    let s = summary_stats(&[act]).unwrap();
    let (value, nb, na, spread_ticks) = activity_oracle(&msgs, &truth, window);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    assert!(rel(s.market_order_value, value) < 1e-12);
    assert!(rel(s.mean_bid_queue, nb) < 1e-12);
    assert!(rel(s.mean_ask_queue, na) < 1e-12);
    assert!(rel(s.mean_spread, spread_ticks * cfg.tick_size as f64 / 10_000.0) < 1e-12);
}

#[test]
fn constant_book_has_constant_spread() {
    let rows = "100.0,1,1,10,999900,1\n100.0,1,2,10,1000300,-1\n";
    let msgs = parse_message_file(Cursor::new(rows.as_bytes())).unwrap();
    let conv = messages_to_events(&msgs, 100).unwrap();
    let steps = replay(&conv.events, 100).unwrap();
    let w = SessionWindow::new(Nanos::from_secs(200), Nanos::from_secs(300)).unwrap();
    let s = summary_stats(&[day_activity(&msgs, &conv, &steps, w, 100)]).unwrap();
    assert!((s.mean_spread - 0.04).abs() < 1e-15);
    assert_eq!(s.market_order_value, 0.0);
}
