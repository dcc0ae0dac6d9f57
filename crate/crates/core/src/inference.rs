//! Logistic and local logistic regression of direction on imbalance.
//!
//! The global model is `P(y = 1 | I) = 1 / (1 + exp(-(x0 + x1 I)))`, fit by
//! Newton-Raphson (IRLS) with step halving. Standard errors come from the
//! inverse Fisher information at the optimum. The local model refits an
//! intercept-and-slope logistic at each grid point with tricube weights over
//! a nearest-neighbour window.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};
use crate::rng::Rng;
use crate::stats::TestResult;

pub const LOGLIK_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100;
pub const SEPARATION_SLOPE: f64 = 30.0;
pub const FITTED_CLAMP: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 401;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all labels are {0}; both classes are required")]
    AllOneLabel(u8),
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite regressor at index {0}")]
    NonFinite(usize),
    #[error("fit did not converge or is separated")]
    NotConverged,
    #[error("nested model log-likelihood {nested} exceeds full model {full}")]
    NotNested { full: f64, nested: f64 },
    #[error("bandwidth {0} is outside (0, 1] or leaves fewer than 10 neighbours")]
    InvalidBandwidth(f64),
    #[error("query {0} is outside [-1, 1]")]
    OutOfDomain(f64),
    #[error("grid must be non-empty and strictly increasing")]
    BadGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub x0: f64,
    pub x1: f64,
    /// `None` when separated, or for a coefficient held fixed.
    pub se0: Option<f64>,
    pub se1: Option<f64>,
    pub loglik: f64,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

pub fn predict_logistic(fit: &LogisticFit, imbalance: f64) -> f64 {
    sigmoid(fit.x0 + fit.x1 * imbalance)
}

/// Bernoulli log-likelihood of `(x0, x1)`.
pub fn log_likelihood(x0: f64, x1: f64, xs: &[f64], ys: &[u8]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let eta = x0 + x1 * x;
            f64::from(y) * eta - softplus(eta)
        })
        .sum()
}

/// Gradient of [`log_likelihood`].
pub fn score(x0: f64, x1: f64, xs: &[f64], ys: &[u8]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (&x, &y) in xs.iter().zip(ys) {
        let r = f64::from(y) - sigmoid(x0 + x1 * x);
        g[0] += r;
        g[1] += r * x;
    }
    g
}

/// Fisher information (negative Hessian of the log-likelihood).
pub fn information(x0: f64, x1: f64, xs: &[f64]) -> [[f64; 2]; 2] {
    let mut h = [[0.0; 2]; 2];
    for &x in xs {
        let p = sigmoid(x0 + x1 * x);
        let v = p * (1.0 - p);
        h[0][0] += v;
        h[0][1] += v * x;
        h[1][1] += v * x * x;
    }
    h[1][0] = h[0][1];
    h
}

fn invert(h: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let scale = h[0][0].abs().max(h[1][1].abs());
    if !det.is_finite() || det <= scale * scale * 1e-14 || det <= f64::MIN_POSITIVE {
        return None;
    }
    Some([[h[1][1] / det, -h[0][1] / det], [-h[1][0] / det, h[0][0] / det]])
}

/// Weighted logistic model `b0 + b1 (x - center)`.
struct Irls<'a> {
    xs: &'a [f64],
    ys: &'a [u8],
    ws: Option<&'a [f64]>,
    center: f64,
}

struct IrlsOutcome {
    b: [f64; 2],
    loglik: f64,
    info: [[f64; 2]; 2],
    iterations: usize,
    converged: bool,
    separated: bool,
}

impl Irls<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.ws.map_or(1.0, |w| w[i])
    }

    fn loglik(&self, b: [f64; 2]) -> f64 {
        let mut ll = 0.0;
        for (i, (&x, &y)) in self.xs.iter().zip(self.ys).enumerate() {
            let eta = b[0] + b[1] * (x - self.center);
            ll += self.weight(i) * (f64::from(y) * eta - softplus(eta));
        }
        ll
    }

    fn derivatives(&self, b: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (i, (&x, &y)) in self.xs.iter().zip(self.ys).enumerate() {
            let z = x - self.center;
            let w = self.weight(i);
            let p = sigmoid(b[0] + b[1] * z);
            let r = w * (f64::from(y) - p);
            g[0] += r;
            g[1] += r * z;
            let v = w * p * (1.0 - p);
            h[0][0] += v;
            h[0][1] += v * z;
            h[1][1] += v * z * z;
        }
        h[1][0] = h[0][1];
        (g, h)
    }

    fn newton_step(&self, b: [f64; 2]) -> Option<[f64; 2]> {
        let (g, h) = self.derivatives(b);
        let inv = invert(h)?;
        Some([inv[0][0] * g[0] + inv[0][1] * g[1], inv[1][0] * g[0] + inv[1][1] * g[1]])
    }

    /// Tries `b + step`, halving on log-likelihood decrease.
    fn line_search(&self, b: [f64; 2], step: [f64; 2], ll: f64) -> Option<([f64; 2], f64)> {
        let mut t = 1.0;
        for _ in 0..40 {
            let cand = [b[0] + t * step[0], b[1] + t * step[1]];
            let ll_new = self.loglik(cand);
            if ll_new >= ll - 1e-12 * ll.abs().max(1.0) {
                return Some((cand, ll_new));
            }
            t *= 0.5;
        }
        None
    }

    fn run(&self) -> IrlsOutcome {
        let mut b = [0.0, 0.0];
        let mut ll = self.loglik(b);
        let mut iterations = 0;
        let mut converged = false;
        let mut separated = false;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let Some(step) = self.newton_step(b) else {
                separated = true;
                break;
            };
            let Some((next, ll_next)) = self.line_search(b, step, ll) else {
                // no ascent direction left: already at the optimum
                converged = true;
                break;
            };
            let delta = ll_next - ll;
            b = next;
            ll = ll_next;
            if b[1].abs() > SEPARATION_SLOPE || !b[0].is_finite() {
                separated = true;
                break;
            }
            if delta.abs() < LOGLIK_TOL {
                converged = true;
                break;
            }
        }
        if converged {
            // one polishing step; quadratic convergence drives the score to
            // rounding level
            if let Some(step) = self.newton_step(b) {
                let cand = [b[0] + step[0], b[1] + step[1]];
                let ll_cand = self.loglik(cand);
                if ll_cand >= ll {
                    b = cand;
                    ll = ll_cand;
                }
            }
        }
        let (_, info) = self.derivatives(b);
        IrlsOutcome {
            b,
            loglik: ll,
            info,
            iterations,
            converged,
            separated,
        }
    }
}

fn check_inputs(xs: &[f64], ys: &[u8], min_n: usize) -> Result<(), FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < min_n {
        return Err(FitError::TooFewPoints {
            needed: min_n,
            got: xs.len(),
        });
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(FitError::NonFinite(i));
    }
    let ones = ys.iter().filter(|&&y| y == 1).count();
    if ones == 0 {
        return Err(FitError::AllOneLabel(0));
    }
    if ones == ys.len() {
        return Err(FitError::AllOneLabel(1));
    }
    Ok(())
}

/// Maximum-likelihood logistic regression of `ys` on `xs`.
///
/// Separated data is not an error: the fit stops once `|x1|` exceeds 30 (or
/// the information matrix becomes singular) and comes back flagged with its
/// standard errors suppressed.
pub fn fit_logistic(xs: &[f64], ys: &[u8]) -> Result<LogisticFit, FitError> {
    check_inputs(xs, ys, 10)?;
    let out = Irls {
        xs,
        ys,
        ws: None,
        center: 0.0,
    }
    .run();
    let cov = if out.separated { None } else { invert(out.info) };
    let se = |k: usize| cov.map(|c| c[k][k].sqrt()).filter(|s| s.is_finite() && *s > 0.0);
    let (se0, se1) = (se(0), se(1));
    let separated = out.separated || se0.is_none() || se1.is_none();
    Ok(LogisticFit {
        x0: out.b[0],
        x1: out.b[1],
        se0: if separated { None } else { se0 },
        se1: if separated { None } else { se1 },
        loglik: out.loglik,
        n: xs.len(),
        iterations: out.iterations,
        converged: out.converged && !separated,
        separated,
    })
}

/// The nested model with `x1 = 0`; its MLE is the logit of the up fraction.
pub fn fit_intercept_only(ys: &[u8]) -> Result<LogisticFit, FitError> {
    let n = ys.len();
    if n == 0 {
        return Err(FitError::TooFewPoints { needed: 1, got: 0 });
    }
    let k = ys.iter().filter(|&&y| y == 1).count();
    if k == 0 || k == n {
        return Err(FitError::AllOneLabel(u8::from(k == n)));
    }
    let p = k as f64 / n as f64;
    let x0 = (p / (1.0 - p)).ln();
    let loglik = k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
    Ok(LogisticFit {
        x0,
        x1: 0.0,
        se0: Some((1.0 / (n as f64 * p * (1.0 - p))).sqrt()),
        se1: None,
        loglik,
        n,
        iterations: 0,
        converged: true,
        separated: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coefficient {
    Intercept,
    Slope,
}

/// Wald test of one coefficient against zero.
pub fn wald_test(fit: &LogisticFit, which: Coefficient) -> Result<TestResult, FitError> {
    if !fit.converged || fit.separated {
        return Err(FitError::NotConverged);
    }
    let (est, se) = match which {
        Coefficient::Intercept => (fit.x0, fit.se0),
        Coefficient::Slope => (fit.x1, fit.se1),
    };
    let se = se.ok_or(FitError::NotConverged)?;
    Ok(TestResult::chi2_1((est / se).powi(2)))
}

/// Likelihood-ratio test of `full` against the nested intercept-only fit.
pub fn lr_test(full: &LogisticFit, nested: &LogisticFit) -> Result<TestResult, FitError> {
    if full.n != nested.n {
        return Err(FitError::LengthMismatch(full.n, nested.n));
    }
    let diff = full.loglik - nested.loglik;
    if diff < -1e-8 {
        return Err(FitError::NotNested {
            full: full.loglik,
            nested: nested.loglik,
        });
    }
    Ok(TestResult::chi2_1(2.0 * diff.max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Kernel radius reaches the `ceil(alpha n)`-th nearest observation.
    NearestNeighbor(f64),
    /// Every observation gets weight one (reduces to the global fit).
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLogisticFit {
    pub grid: Vec<f64>,
    pub fitted: Vec<f64>,
    pub bandwidth: Bandwidth,
    /// Grid points whose neighbourhood had a single label or separated.
    pub degenerate: Vec<usize>,
    pub train_ref: String,
}

/// `n` equally spaced points on [-1, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

pub fn tricube(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u.abs().powi(3);
        t * t * t
    }
}

fn neighbours(alpha: f64, n: usize) -> Result<usize, FitError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FitError::InvalidBandwidth(alpha));
    }
    let k = (alpha * n as f64).ceil() as usize;
    if k < 10 {
        return Err(FitError::InvalidBandwidth(alpha));
    }
    Ok(k.min(n))
}

/// Tricube weights around `at` with radius set by the `k`-th nearest point.
pub fn tricube_weights(xs: &[f64], at: f64, k: usize) -> Vec<f64> {
    let d: Vec<f64> = xs.iter().map(|x| (x - at).abs()).collect();
    let mut scratch = d.clone();
    let h = *scratch.select_nth_unstable_by(k - 1, f64::total_cmp).1;
    d.into_iter()
        .map(|di| {
            if h > 0.0 {
                tricube(di / h)
            } else if di == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Local fit at a single point. Returns the fitted probability and whether
/// the neighbourhood was degenerate.
fn local_point(xs: &[f64], ys: &[u8], at: f64, bandwidth: Bandwidth, k: usize) -> (f64, bool) {
    let (sx, sy, sw): (Vec<f64>, Vec<u8>, Vec<f64>) = match bandwidth {
        Bandwidth::Unbounded => (xs.to_vec(), ys.to_vec(), vec![1.0; xs.len()]),
        Bandwidth::NearestNeighbor(_) => {
            let w = tricube_weights(xs, at, k);
            let mut out = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
            for i in 0..xs.len() {
                if w[i] > 0.0 {
                    out.0.push(xs[i]);
                    out.1.push(ys[i]);
                    out.2.push(w[i]);
                }
            }
            out
        }
    };
    let ones = sy.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == sy.len() {
        let p: f64 = if ones == 0 { 0.0 } else { 1.0 };
        return (p.clamp(FITTED_CLAMP, 1.0 - FITTED_CLAMP), true);
    }
    let out = Irls {
        xs: &sx,
        ys: &sy,
        ws: Some(&sw),
        center: at,
    }
    .run();
    let p = sigmoid(out.b[0]);
    if out.separated {
        (p.clamp(FITTED_CLAMP, 1.0 - FITTED_CLAMP), true)
    } else {
        (p, false)
    }
}

/// Local logistic regression evaluated at every grid point.
pub fn fit_local_logistic(
    xs: &[f64],
    ys: &[u8],
    bandwidth: Bandwidth,
    grid: &[f64],
    exec: Exec,
) -> Result<LocalLogisticFit, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch(xs.len(), ys.len()));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(FitError::NonFinite(i));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FitError::BadGrid);
    }
    let k = match bandwidth {
        Bandwidth::NearestNeighbor(alpha) => neighbours(alpha, xs.len())?,
        Bandwidth::Unbounded => {
            if xs.is_empty() {
                return Err(FitError::TooFewPoints { needed: 1, got: 0 });
            }
            xs.len()
        }
    };
    let cells = par::map_slice(exec, grid, |&at| local_point(xs, ys, at, bandwidth, k));
    let degenerate = cells.iter().enumerate().filter(|(_, c)| c.1).map(|(i, _)| i).collect();
    Ok(LocalLogisticFit {
        grid: grid.to_vec(),
        fitted: cells.into_iter().map(|c| c.0).collect(),
        bandwidth,
        degenerate,
        train_ref: String::new(),
    })
}

/// Linear interpolation on the fitted grid.
pub fn predict_local(fit: &LocalLogisticFit, x: f64) -> Result<f64, FitError> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(FitError::OutOfDomain(x));
    }
    let g = &fit.grid;
    let (first, last) = (g[0], g[g.len() - 1]);
    if x <= first {
        return Ok(fit.fitted[0]);
    }
    if x >= last {
        return Ok(fit.fitted[g.len() - 1]);
    }
    let j = g.partition_point(|&v| v <= x);
    let (lo, hi) = (j - 1, j);
    if g[lo] == x {
        return Ok(fit.fitted[lo]);
    }
    let t = (x - g[lo]) / (g[hi] - g[lo]);
    Ok(fit.fitted[lo] + t * (fit.fitted[hi] - fit.fitted[lo]))
}

/// Fold index of each observation: a random permutation dealt round-robin.
pub fn cv_folds(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub selected: f64,
    /// (alpha, cross-validated mean squared residual) per candidate.
    pub curve: Vec<(f64, f64)>,
    pub folds: usize,
}

/// Squared residuals of the held-out fold `f` under bandwidth `alpha`.
pub fn cv_cell(xs: &[f64], ys: &[u8], folds: &[usize], f: usize, alpha: f64, grid: &[f64]) -> Result<f64, FitError> {
    let (mut tx, mut ty) = (Vec::new(), Vec::new());
    for i in 0..xs.len() {
        if folds[i] != f {
            tx.push(xs[i]);
            ty.push(ys[i]);
        }
    }
    let fit = fit_local_logistic(&tx, &ty, Bandwidth::NearestNeighbor(alpha), grid, Exec::Sequential)?;
    let mut sse = 0.0;
    for i in (0..xs.len()).filter(|&i| folds[i] == f) {
        let r = predict_local(&fit, xs[i])? - f64::from(ys[i]);
        sse += r * r;
    }
    Ok(sse)
}

/// k-fold cross-validated choice of the nearest-neighbour fraction,
/// minimizing the held-out mean squared residual. Ties go to the larger
/// (smoother) candidate.
pub fn cv_bandwidth(
    xs: &[f64],
    ys: &[u8],
    candidates: &[f64],
    k: usize,
    grid: &[f64],
    rng: &mut Rng,
    exec: Exec,
) -> Result<CvResult, FitError> {
    if candidates.is_empty() || k < 2 || xs.len() < k {
        return Err(FitError::TooFewPoints {
            needed: k.max(2),
            got: xs.len(),
        });
    }
    let folds = cv_folds(xs.len(), k, rng);
    let cells: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let sse = par::map_slice(exec, &cells, |&(c, f)| cv_cell(xs, ys, &folds, f, candidates[c], grid));
    let mut curve = Vec::with_capacity(candidates.len());
    for (c, &alpha) in candidates.iter().enumerate() {
        let mut total = 0.0;
        for f in 0..k {
            total += sse[c * k + f].clone()?;
        }
        curve.push((alpha, total / xs.len() as f64));
    }
    let selected = curve
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 < best.1 || (cur.1 == best.1 && cur.0 > best.0) {
                cur
            } else {
                best
            }
        })
        .map(|c| c.0)
        .expect("non-empty candidates");
    Ok(CvResult {
        selected,
        curve,
        folds: k,
    })
}
