//! Construction of the (imbalance, direction) dataset.
//!
//! For each day the session's mid-price change times `t_1 < ... < t_N` are
//! found by exact half-tick comparison. Each change gets a label (1 for an
//! upward move) and one imbalance observation drawn from the preceding
//! interval `(t_{i-1}, t_i)`, where `t_0` is the first session event. Days
//! are then subsampled to a fixed size, pooled, and split into training and
//! testing sets.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::book::QuoteSnapshot;
use crate::ingest::{SessionWindow, Step};
use crate::rng::Rng;
use crate::time::Nanos;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub instrument: String,
    pub day: String,
    pub t_sample: Nanos,
    pub t_change: Nanos,
    /// Queue imbalance, stored at 12 significant digits.
    pub imbalance: f64,
    /// 1 when the mid moved up at `t_change`.
    pub y: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Sampling time uniform on the open interval between changes.
    #[default]
    Uniform,
    /// Sampling time uniform over best-queue updates inside the interval.
    EventTime,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(SamplingMode::Uniform),
            "event" | "event-time" => Ok(SamplingMode::EventTime),
            other => Err(format!("unknown sampling mode {other:?}")),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::EventTime => "event",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("book is one-sided at the sampling instant")]
    OneSidedBook,
    #[error("interval ({0}, {1}) has no interior nanosecond")]
    EmptyInterval(Nanos, Nanos),
    #[error("need at least 5 points to split, got {0}")]
    TooFewPoints(usize),
}

/// Rounds to 12 significant digits so that the CSV form is exact.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Decimal rendering with 12 significant digits, e.g. `0.333333333333`.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if exp < 0 {
        format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            format!("{sign}{digits}{}", "0".repeat(int_len - digits.len()))
        } else {
            format!("{sign}{}.{}", &digits[..int_len], &digits[int_len..])
        }
    }
}

/// Best-quote states at distinct instants. Events sharing a timestamp are
/// collapsed to the state after the last of them.
#[derive(Clone, Debug, Default)]
pub struct Timeline {
    pub states: Vec<Step>,
}

impl Timeline {
    pub fn from_steps(steps: &[Step]) -> Self {
        let mut states: Vec<Step> = Vec::with_capacity(steps.len());
        for s in steps {
            match states.last_mut() {
                Some(last) if last.time == s.time => *last = *s,
                _ => states.push(*s),
            }
        }
        Timeline { states }
    }

    /// State prevailing at `t` (last state stamped at or before it).
    pub fn state_at(&self, t: Nanos) -> Option<&Step> {
        let k = self.states.partition_point(|s| s.time <= t);
        k.checked_sub(1).map(|i| &self.states[i])
    }

    fn range(&self, lo: Nanos, hi: Nanos) -> std::ops::Range<usize> {
        // strictly inside (lo, hi)
        let a = self.states.partition_point(|s| s.time <= lo);
        let b = self.states.partition_point(|s| s.time < hi);
        a..b.max(a)
    }
}

/// A mid-price change: time and label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MidChange {
    pub time: Nanos,
    pub y: u8,
}

/// Mid-price change times and directions over a time-ordered state
/// sequence. The first state plays the role of `t_0`. One-sided states
/// carry no mid and are skipped.
pub fn mid_change_times(states: &[Step]) -> Vec<MidChange> {
    let mut out = Vec::new();
    let mut last_mid: Option<i64> = None;
    for s in states {
        let Some(q) = s.snapshot() else { continue };
        let mid = q.mid_half_ticks();
        if let Some(prev) = last_mid {
            if mid != prev {
                out.push(MidChange {
                    time: s.time,
                    y: u8::from(mid > prev),
                });
            }
        }
        last_mid = Some(mid);
    }
    out
}

fn imbalance_of(step: &Step) -> Result<(QuoteSnapshot, f64), SampleError> {
    let q = step.snapshot().ok_or(SampleError::OneSidedBook)?;
    let i = q.imbalance().map_err(|_| SampleError::OneSidedBook)?;
    Ok((q, quantize(i)))
}

/// Imbalance reading at a sampling instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub time: Nanos,
    pub imbalance: f64,
    pub bid_size: u64,
    pub ask_size: u64,
    /// Event-time draw fell back to the state just after `lo`.
    pub fallback: bool,
}

/// Uniform sampling instant on the open interval `(lo, hi)` at nanosecond
/// resolution, and the imbalance prevailing there.
pub fn sample_uniform_time(lo: Nanos, hi: Nanos, timeline: &Timeline, rng: &mut Rng) -> Result<Draw, SampleError> {
    if hi.0 <= lo.0 + 1 {
        return Err(SampleError::EmptyInterval(lo, hi));
    }
    let t = Nanos(rng.random_range(lo.0 + 1..hi.0));
    let step = timeline.state_at(t).ok_or(SampleError::OneSidedBook)?;
    let (q, imbalance) = imbalance_of(step)?;
    Ok(Draw {
        time: t,
        imbalance,
        bid_size: q.bid_size,
        ask_size: q.ask_size,
        fallback: false,
    })
}

/// Sampling instant drawn uniformly from the best-queue update times inside
/// `(lo, hi)`; the imbalance is read just after that update. With no update
/// in the interval the state just after `lo` is used and flagged.
pub fn sample_event_time(lo: Nanos, hi: Nanos, timeline: &Timeline, rng: &mut Rng) -> Result<Draw, SampleError> {
    let range = timeline.range(lo, hi);
    let updates: Vec<usize> = range
        .filter(|&k| {
            k > 0
                && timeline.states[k].snapshot().map(|q| q.quotes())
                    != timeline.states[k - 1].snapshot().map(|q| q.quotes())
        })
        .collect();
    if updates.is_empty() {
        let step = timeline.state_at(lo).ok_or(SampleError::OneSidedBook)?;
        let (q, imbalance) = imbalance_of(step)?;
        return Ok(Draw {
            time: lo,
            imbalance,
            bid_size: q.bid_size,
            ask_size: q.ask_size,
            fallback: true,
        });
    }
    let step = &timeline.states[updates[rng.random_range(0..updates.len())]];
    let (q, imbalance) = imbalance_of(step)?;
    Ok(Draw {
        time: step.time,
        imbalance,
        bid_size: q.bid_size,
        ask_size: q.ask_size,
        fallback: false,
    })
}

/// One day's observations before subsampling.
#[derive(Clone, Debug, Default)]
pub struct DaySample {
    pub points: Vec<SamplePoint>,
    /// Best-queue sizes (n^b, n^a) at each point's sampling instant.
    pub queues: Vec<(u64, u64)>,
    pub stats: DayStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayStats {
    pub mid_changes: usize,
    pub one_sided_skipped: usize,
    pub empty_intervals: usize,
    pub event_fallbacks: usize,
    /// Intervals cut by the session close (at most one per day).
    pub trailing_dropped: usize,
    /// Day had fewer points than the subsample size.
    pub short_day: bool,
}

/// Builds all (I, y) observations of one day from per-event book states.
pub fn sample_day(
    instrument: &str,
    day: &str,
    steps: &[Step],
    window: SessionWindow,
    mode: SamplingMode,
    rng: &mut Rng,
) -> DaySample {
    let (a, b) = window.bounds(steps, |s| s.time);
    let mut out = DaySample::default();
    if a == b {
        return out;
    }
    let timeline = Timeline::from_steps(&steps[..b]);
    let first = timeline.states.partition_point(|s| s.time < steps[a].time);
    let session = &timeline.states[first..];
    let t0 = session[0].time;
    let changes = mid_change_times(session);
    out.stats.mid_changes = changes.len();

    let last_mid = session
        .iter()
        .rev()
        .find_map(|s| s.snapshot())
        .map(|q| q.mid_half_ticks());
    let after_close = Timeline::from_steps(&steps[b..]);
    if mid_change_times_from(last_mid, &after_close.states) {
        out.stats.trailing_dropped = 1;
    }

    let mut lo = t0;
    for c in changes {
        let draw = match mode {
            SamplingMode::Uniform => sample_uniform_time(lo, c.time, &timeline, rng),
            SamplingMode::EventTime => sample_event_time(lo, c.time, &timeline, rng),
        };
        match draw {
            Ok(d) => {
                out.stats.event_fallbacks += usize::from(d.fallback);
                out.points.push(SamplePoint {
                    instrument: instrument.to_string(),
                    day: day.to_string(),
                    t_sample: d.time,
                    t_change: c.time,
                    imbalance: d.imbalance,
                    y: c.y,
                });
                out.queues.push((d.bid_size, d.ask_size));
            }
            Err(SampleError::OneSidedBook) => out.stats.one_sided_skipped += 1,
            Err(_) => out.stats.empty_intervals += 1,
        }
        lo = c.time;
    }
    out
}

fn mid_change_times_from(start: Option<i64>, states: &[Step]) -> bool {
    let Some(mut prev) = start else { return false };
    for s in states {
        if let Some(q) = s.snapshot() {
            if q.mid_half_ticks() != prev {
                return true;
            }
            prev = q.mid_half_ticks();
        }
    }
    false
}

/// Keeps `n` points chosen uniformly without replacement, in time order.
/// Days with fewer than `n` points are kept whole and flagged.
pub fn subsample_day(day: DaySample, n: usize, rng: &mut Rng) -> DaySample {
    let total = day.points.len();
    if total <= n {
        let short = total < n;
        return DaySample {
            stats: DayStats {
                short_day: short,
                ..day.stats
            },
            ..day
        };
    }
    let mut keep = index::sample(rng, total, n).into_vec();
    keep.sort_unstable();
    DaySample {
        points: keep.iter().map(|&i| day.points[i].clone()).collect(),
        queues: keep.iter().map(|&i| day.queues[i]).collect(),
        stats: day.stats,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<SamplePoint>,
    pub test: Vec<SamplePoint>,
    pub seed: u64,
}

/// Uniform random partition with `floor(frac * N)` training points.
pub fn train_test_split(
    points: &[SamplePoint],
    frac: f64,
    seed: u64,
    rng: &mut Rng,
) -> Result<SplitDataset, SampleError> {
    if points.len() < 5 {
        return Err(SampleError::TooFewPoints(points.len()));
    }
    let n_train = (frac * points.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let (tr, te) = order.split_at(n_train);
    let mut tr = tr.to_vec();
    let mut te = te.to_vec();
    tr.sort_unstable();
    te.sort_unstable();
    Ok(SplitDataset {
        train: tr.iter().map(|&i| points[i].clone()).collect(),
        test: te.iter().map(|&i| points[i].clone()).collect(),
        seed,
    })
}

pub const CSV_HEADER: &str = "instrument,day,t_sample_ns,t_change_ns,imbalance,y";

impl SamplePoint {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.instrument,
            self.day,
            self.t_sample.0,
            self.t_change.0,
            format_sig12(self.imbalance),
            self.y
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, String> {
        let f: Vec<&str> = row.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(format!("expected 6 fields in {row:?}"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
        let imbalance: f64 = f[4].parse().map_err(|e| format!("{:?}: {e}", f[4]))?;
        let y = match f[5] {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("label {other:?}")),
        };
        if !imbalance.is_finite() {
            return Err(format!("imbalance {imbalance}"));
        }
        Ok(SamplePoint {
            instrument: f[0].to_string(),
            day: f[1].to_string(),
            t_sample: Nanos(num(f[2])?),
            t_change: Nanos(num(f[3])?),
            imbalance,
            y,
        })
    }
}

pub fn write_samples_csv(points: &[SamplePoint]) -> String {
    let mut s = String::with_capacity(64 * (points.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&p.to_csv_row());
        s.push('\n');
    }
    s
}

pub fn read_samples_csv(text: &str) -> Result<Vec<SamplePoint>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(SamplePoint::from_csv_row)
        .collect()
}
