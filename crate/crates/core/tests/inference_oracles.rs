use lobqi::inference::*;
use lobqi::par::Exec;
use lobqi::rng::{stream, Purpose};
use lobqi::stats::{chi2_1_sf, TestResult};
use rand::Rng as _;

fn draw(n: usize, x0: f64, x1: f64, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = stream(seed, Purpose::Synthetic, 0);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys = xs
        .iter()
        .map(|&x| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(x0 + x1 * x)).exp())))
        .collect();
    (xs, ys)
}

/// Weighted Bernoulli log-likelihood of `sigma(a + b (x - c))`, written out
/// directly.
fn weighted_ll(a: f64, b: f64, c: f64, xs: &[f64], ys: &[u8], ws: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..xs.len() {
        let p = 1.0 / (1.0 + (-(a + b * (xs[i] - c))).exp());
        ll += ws[i] * if ys[i] == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    ll
}

/// Coarse grid followed by two shrinking refinement passes.
fn grid_argmax(f: impl Fn(f64, f64) -> f64, a: (f64, f64), b: (f64, f64), step: f64) -> (f64, f64) {
    let scan = |a: (f64, f64), b: (f64, f64), step: f64| {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let na = ((a.1 - a.0) / step).round() as usize;
        let nb = ((b.1 - b.0) / step).round() as usize;
        for i in 0..=na {
            let u = a.0 + i as f64 * step;
            for j in 0..=nb {
                let v = b.0 + j as f64 * step;
                let l = f(u, v);
                if l > best.0 {
                    best = (l, u, v);
                }
            }
        }
        (best.1, best.2)
    };
    let (mut u, mut v) = scan(a, b, step);
    let mut s = step;
    for _ in 0..2 {
        let r = 2.0 * s;
        s /= 20.0;
        (u, v) = scan((u - r, u + r), (v - r, v + r), s);
    }
    (u, v)
}

#[test]
fn mle_matches_grid_search() {
    let (xs, ys) = draw(200, 0.0, 2.5, 1);
    let fit = fit_logistic(&xs, &ys).unwrap();
    let (a, b) = grid_argmax(
        |a, b| weighted_ll(a, b, 0.0, &xs, &ys, &vec![1.0; xs.len()]),
        (-1.0, 1.0),
        (0.0, 5.0),
        0.01,
    );
    assert!((fit.x0 - a).abs() < 1e-3, "{} vs {a}", fit.x0);
    assert!((fit.x1 - b).abs() < 1e-3, "{} vs {b}", fit.x1);
    assert!(fit.converged && !fit.separated);
}

#[test]
fn score_vanishes_and_matches_finite_differences() {
    let (xs, ys) = draw(500, -0.3, 1.7, 2);
    let fit = fit_logistic(&xs, &ys).unwrap();
    let g = score(fit.x0, fit.x1, &xs, &ys);
    assert!(g[0].hypot(g[1]) < 1e-8, "{g:?}");

    let mut rng = stream(2, Purpose::Synthetic, 1);
    let h = 1e-5;
    for _ in 0..10 {
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-3.0..5.0));
        let g = score(a, b, &xs, &ys);
        let da = (log_likelihood(a + h, b, &xs, &ys) - log_likelihood(a - h, b, &xs, &ys)) / (2.0 * h);
        let db = (log_likelihood(a, b + h, &xs, &ys) - log_likelihood(a, b - h, &xs, &ys)) / (2.0 * h);
        assert!((g[0] - da).abs() < 1e-6 * g[0].abs().max(1.0), "{} vs {da}", g[0]);
        assert!((g[1] - db).abs() < 1e-6 * g[1].abs().max(1.0), "{} vs {db}", g[1]);
    }
}

#[test]
fn standard_errors_match_numerical_hessian() {
    let (xs, ys) = draw(800, 0.2, 2.0, 3);
    let fit = fit_logistic(&xs, &ys).unwrap();
    let (a, b) = (fit.x0, fit.x1);
    let h = 1e-4;
    let ga = |d: f64| score(a + d, b, &xs, &ys);
    let gb = |d: f64| score(a, b + d, &xs, &ys);
    let haa = (ga(h)[0] - ga(-h)[0]) / (2.0 * h);
    let hab = (gb(h)[0] - gb(-h)[0]) / (2.0 * h);
    let hbb = (gb(h)[1] - gb(-h)[1]) / (2.0 * h);
    let det = haa * hbb - hab * hab;
    let se0 = (-hbb / det).sqrt();
    let se1 = (-haa / det).sqrt();
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    assert!(rel(fit.se0.unwrap(), se0) < 1e-4);
    assert!(rel(fit.se1.unwrap(), se1) < 1e-4);
}

/// 1 - erf(z) from the Maclaurin series of erf.
fn erfc_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    for n in 1..60 {
        term *= -z * z / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn chi_square_tail_matches_series() {
    for w in [0.1, 0.5, 1.0, 2.0, 3.84, 6.63, 10.0] {
        let want = erfc_series((w / 2.0_f64).sqrt());
        assert!((chi2_1_sf(w) - want).abs() < 1e-12, "w = {w}");
    }
    assert!((TestResult::chi2_1(1.0).p_value - 0.3173).abs() < 1e-4);
    let r = TestResult::chi2_1(3.84);
    assert!((r.p_value - 0.05).abs() < 1e-3 && r.significant_95 && !r.significant_99);
    assert!(TestResult::chi2_1(2_000.0).p_value > 0.0);
}

#[test]
fn likelihood_ratio_is_chi_square_under_the_null() {
    let mut stats: Vec<f64> = (0..1000)
        .map(|s| {
            let (xs, ys) = draw(300, 0.1, 0.0, 1_000 + s);
            let full = fit_logistic(&xs, &ys).unwrap();
            let null = fit_intercept_only(&ys).unwrap();
            lr_test(&full, &null).unwrap().statistic
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let median = (stats[499] + stats[500]) / 2.0;
    let q95 = stats[949];
    assert!((median - 0.455).abs() < 0.15, "median {median}");
    assert!((3.4..=4.3).contains(&q95), "q95 {q95}");
}

#[test]
fn wald_and_lr_agree_in_large_samples() {
    // the gap widens with the effect size: about 7% at slope 1, 32% at 2.5
    let (xs, ys) = draw(20_160, 0.0, 1.0, 4);
    let full = fit_logistic(&xs, &ys).unwrap();
    let null = fit_intercept_only(&ys).unwrap();
    let lr = lr_test(&full, &null).unwrap();
    let wald = wald_test(&full, Coefficient::Slope).unwrap();
    assert!(lr.statistic > 6.63 && lr.significant_99);
    assert!(
        (wald.statistic - lr.statistic).abs() / lr.statistic < 0.15,
        "{} vs {}",
        wald.statistic,
        lr.statistic
    );
    let w0 = wald_test(&full, Coefficient::Intercept).unwrap();
    assert!((w0.statistic - (full.x0 / full.se0.unwrap()).powi(2)).abs() < 1e-9 * w0.statistic.max(1.0));
}

#[test]
fn positive_slope_gives_monotone_predictions() {
    let (xs, ys) = draw(1_000, 0.0, 2.0, 5);
    let fit = fit_logistic(&xs, &ys).unwrap();
    let ps: Vec<f64> = uniform_grid(41).iter().map(|&x| predict_logistic(&fit, x)).collect();
    assert!(ps.windows(2).all(|w| w[0] < w[1]));
    assert!(ps.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn local_fit_matches_weighted_grid_search() {
    let (xs, ys) = draw(400, 0.0, 2.5, 6);
    let alpha = 0.5;
    let k = (alpha * xs.len() as f64).ceil() as usize;
    let grid = uniform_grid(12);
    let fit = fit_local_logistic(&xs, &ys, Bandwidth::NearestNeighbor(alpha), &grid, Exec::Sequential).unwrap();
    assert!(fit.degenerate.is_empty());
    for (j, &c) in grid.iter().enumerate() {
        let mut d: Vec<f64> = xs.iter().map(|x| (x - c).abs()).collect();
        let ws: Vec<f64> = {
            let dist = d.clone();
            d.sort_by(f64::total_cmp);
            let h = d[k - 1];
            dist.iter()
                .map(|&di| if di < h { (1.0 - (di / h).powi(3)).powi(3) } else { 0.0 })
                .collect()
        };
        let (a, _) = grid_argmax(
            |a, b| weighted_ll(a, b, c, &xs, &ys, &ws),
            (-4.0, 4.0),
            (-6.0, 12.0),
            0.05,
        );
        let p = 1.0 / (1.0 + (-a).exp());
        assert!((fit.fitted[j] - p).abs() < 1e-3, "grid {c}: {} vs {p}", fit.fitted[j]);
    }
}

#[test]
fn unbounded_local_fit_is_the_global_fit() {
    let (xs, ys) = draw(300, 0.3, 1.5, 7);
    let global = fit_logistic(&xs, &ys).unwrap();
    let grid = uniform_grid(21);
    let local = fit_local_logistic(&xs, &ys, Bandwidth::Unbounded, &grid, Exec::Sequential).unwrap();
    for (&x, &p) in grid.iter().zip(&local.fitted) {
        assert!((p - predict_logistic(&global, x)).abs() < 1e-8);
    }
}

#[test]
fn cross_validation_recomputes_by_hand() {
    let (xs, ys) = draw(600, 0.0, 2.5, 8);
    let candidates = [0.5, 0.65, 0.8];
    let grid = uniform_grid(101);
    let got = cv_bandwidth(
        &xs,
        &ys,
        &candidates,
        5,
        &grid,
        &mut stream(9, Purpose::CrossValidation, 0),
        Exec::default(),
    )
    .unwrap();
    let folds = cv_folds(xs.len(), 5, &mut stream(9, Purpose::CrossValidation, 0));
    let mut sizes = [0usize; 5];
    folds.iter().for_each(|&f| sizes[f] += 1);
    assert!(sizes.iter().all(|&s| s == 120));

    let mut curve = Vec::new();
    for &alpha in &candidates {
        let mut sse = 0.0;
        for f in 0..5 {
            let train: Vec<usize> = (0..xs.len()).filter(|&i| folds[i] != f).collect();
            let tx: Vec<f64> = train.iter().map(|&i| xs[i]).collect();
            let ty: Vec<u8> = train.iter().map(|&i| ys[i]).collect();
            let fit = fit_local_logistic(&tx, &ty, Bandwidth::NearestNeighbor(alpha), &grid, Exec::Sequential).unwrap();
            for i in (0..xs.len()).filter(|&i| folds[i] == f) {
                // linear interpolation between neighbouring grid points
                let pos = (xs[i] + 1.0) / 2.0 * 100.0;
                let lo = (pos.floor() as usize).min(99);
                let t = pos - lo as f64;
                let p = fit.fitted[lo] * (1.0 - t) + fit.fitted[lo + 1] * t;
                sse += (p - f64::from(ys[i])).powi(2);
            }
        }
        curve.push((alpha, sse / xs.len() as f64));
    }
    for (g, w) in got.curve.iter().zip(&curve) {
        assert_eq!(g.0, w.0);
        assert!((g.1 - w.1).abs() < 1e-12, "{} vs {}", g.1, w.1);
    }
    let best = curve.iter().fold(
        curve[0],
        |b, &c| if c.1 < b.1 || (c.1 == b.1 && c.0 > b.0) { c } else { b },
    );
    assert_eq!(got.selected, best.0);
    assert!((0.5..=0.8).contains(&got.selected));
}

#[test]
fn tiny_bandwidths_are_rejected() {
    let (xs, ys) = draw(30, 0.0, 1.0, 10);
    let grid = uniform_grid(5);
    assert!(matches!(
        fit_local_logistic(&xs, &ys, Bandwidth::NearestNeighbor(0.2), &grid, Exec::Sequential),
        Err(FitError::InvalidBandwidth(_))
    ));
    assert!(fit_local_logistic(&xs, &ys, Bandwidth::NearestNeighbor(0.34), &grid, Exec::Sequential).is_ok());
}
