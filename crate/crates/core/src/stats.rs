//! Chi-square(1) tail probabilities and critical values.

use serde::{Deserialize, Serialize};

pub const CHI2_1_CRIT_95: f64 = 3.84;
pub const CHI2_1_CRIT_99: f64 = 6.63;

/// Upper tail of chi-square with one degree of freedom:
/// `P(X > w) = 2 (1 - Phi(sqrt w)) = erfc(sqrt(w / 2))`.
///
/// `erfc` is the musl/FreeBSD implementation shipped by the `libm` crate
/// (rational minimax approximations, error below 1 ulp), which avoids the
/// cancellation in `1 - erf` for large arguments.
pub fn chi2_1_sf(w: f64) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    libm::erfc((w / 2.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub significant_95: bool,
    pub significant_99: bool,
}

impl TestResult {
    pub fn chi2_1(statistic: f64) -> Self {
        let statistic = statistic.max(0.0);
        TestResult {
            statistic,
            df: 1,
            // keep p inside (0, 1] even when erfc underflows
            p_value: chi2_1_sf(statistic).max(f64::MIN_POSITIVE),
            significant_95: statistic >= CHI2_1_CRIT_95,
            significant_99: statistic >= CHI2_1_CRIT_99,
        }
    }

    /// `**` at the 99% level, `*` at 95%.
    pub fn stars(&self) -> &'static str {
        if self.significant_99 {
            "**"
        } else if self.significant_95 {
            "*"
        } else {
            ""
        }
    }
}
