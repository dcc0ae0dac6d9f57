use std::collections::HashMap;

use lobqi::book::{BookState, Side};
use lobqi::ingest::{messages_to_events, MessageType, Step};
use lobqi::simulator::{regime_preset, simulate, ZiConfig};

/// Compensator of the cancellation process: `cancel_rate * integral of the
/// resting order count`, in seconds.
fn resting_order_seconds(cfg: &ZiConfig, msgs: &[lobqi::ingest::LobsterMessage], end_secs: f64) -> f64 {
    let mut sizes: HashMap<u64, u64> = HashMap::new();
    let mut area = 0.0;
    let start = cfg.start.as_secs_f64();
    let mut last = start;
    for m in msgs {
        let t = m.time.as_secs_f64();
        area += sizes.len() as f64 * (t - last);
        last = t;
        match m.kind {
            MessageType::Submit => {
                sizes.insert(m.order_id, m.size);
            }
            MessageType::Delete => {
                sizes.remove(&m.order_id);
            }
            MessageType::Execute => {
                let s = sizes.get_mut(&m.order_id).unwrap();
                *s -= m.size;
                if *s == 0 {
                    sizes.remove(&m.order_id);
                }
            }
            _ => unreachable!("simulator emits types 1, 3 and 4 only"),
        }
    }
    area + sizes.len() as f64 * (start + end_secs - last)
}

fn within_4_sigma(observed: u64, mean: f64) -> bool {
    (observed as f64 - mean).abs() <= 4.0 * mean.sqrt()
}

#[test]
fn process_counts_match_poisson_means() {
    let cfg = ZiConfig {
        horizon_secs: 7_200.0,
        ..regime_preset("large-tick").unwrap()
    }
    .with_seed(17);
    let out = simulate(&cfg).unwrap();
    assert!(!out.side_depleted);
    let t = out.elapsed_secs;
    // the ask sits far above the placement window, so both limit rates are
    // constant
    let limit_mean = cfg.limit_rate * f64::from(cfg.levels) * t;
    let c = out.counts;
    assert!(
        within_4_sigma(c.limit_buy, limit_mean),
        "{} vs {limit_mean}",
        c.limit_buy
    );
    assert!(
        within_4_sigma(c.limit_sell, limit_mean),
        "{} vs {limit_mean}",
        c.limit_sell
    );
    assert!(within_4_sigma(c.market_buy, cfg.market_rate * t));
    assert!(within_4_sigma(c.market_sell, cfg.market_rate * t));
    let cancel_mean = cfg.cancel_rate * resting_order_seconds(&cfg, &out.messages, t);
    assert!(within_4_sigma(c.cancel, cancel_mean), "{} vs {cancel_mean}", c.cancel);
}

#[test]
fn limit_only_mid_moves_come_from_inside_spread() {
    let cfg = ZiConfig {
        market_rate: 0.0,
        cancel_rate: 0.0,
        horizon_secs: 600.0,
        ..regime_preset("small-tick").unwrap()
    }
    .with_seed(4);
    let out = simulate(&cfg).unwrap();
    let mut prev: Option<Step> = None;
    for (m, s) in out.messages.iter().zip(&out.truth) {
        let mid = |s: &Step| s.snapshot().map(|q| q.mid_half_ticks());
        if let Some(p) = prev {
            if mid(&p) != mid(s) && mid(&p).is_some() {
                let q = p.snapshot().unwrap();
                let price = m.price / cfg.tick_size;
                assert_eq!(m.kind, MessageType::Submit);
                assert!(q.bid < price && price < q.ask);
            }
        }
        prev = Some(*s);
    }
}

struct Regime {
    spread_ticks: f64,
    best_orders: f64,
}

/// Time-weighted spread and best-queue order count over a capped run.
fn measure(name: &str, seed: u64) -> Regime {
    let cfg = ZiConfig {
        horizon_secs: 1e7,
        max_events: Some(1_000_000),
        ..regime_preset(name).unwrap()
    }
    .with_seed(seed);
    let out = simulate(&cfg).unwrap();
    assert!(!out.side_depleted);
    let conv = messages_to_events(&out.messages, cfg.tick_size).unwrap();
    let mut book = BookState::new(cfg.tick_size, 1);
    let (mut spread, mut orders, mut covered) = (0.0, 0.0, 0.0);
    let mut last: Option<(f64, i64, usize)> = None;
    for ev in &conv.events {
        let t = ev.time.as_secs_f64();
        if let Some((t0, s, n)) = last {
            spread += s as f64 * (t - t0);
            orders += n as f64 * (t - t0);
            covered += t - t0;
        }
        book.apply_event(ev).unwrap();
        last = book.quote().ok().map(|q| {
            let n = book.queue_at(Side::Buy, q.bid).count() + book.queue_at(Side::Sell, q.ask).count();
            (t, q.spread_ticks(), n)
        });
    }
    Regime {
        spread_ticks: spread / covered,
        best_orders: orders / covered / 2.0,
    }
}

#[test]
fn large_tick_preset_pins_the_spread() {
    let r = measure("large-tick", 1);
    assert!((1.0..=1.5).contains(&r.spread_ticks), "{}", r.spread_ticks);
    assert!(r.best_orders >= 50.0, "{}", r.best_orders);
}

#[test]
fn small_tick_preset_has_wide_spreads() {
    let r = measure("small-tick", 1);
    assert!(r.spread_ticks >= 5.0, "{}", r.spread_ticks);
    assert!(r.best_orders <= 10.0, "{}", r.best_orders);
}
