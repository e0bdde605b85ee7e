//! Robust residual losses and trimmed aggregation.
//!
//! Residuals are `r = y - yhat`. [`ResidualLoss`] is the per-instance loss
//! with every parameter resolved; [`LossSpec`] is what a run is configured
//! with (adaptive Huber thresholds and trimming are resolved per epoch).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::network::GradientSet;

/// Tukey biweight constant giving 95% efficiency under Gaussian errors.
pub const TUKEY_K: f64 = 4.685;

/// Lower bound for the adaptive Huber threshold.
pub const HUBER_DELTA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HuberDelta {
    /// Median absolute residual of the current epoch.
    AdaptiveMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    Squared,
    Huber(HuberDelta),
    Tukey { k: f64 },
    TrimmedSquared { alpha: f64 },
}

impl LossSpec {
    pub const fn huber() -> Self {
        LossSpec::Huber(HuberDelta::AdaptiveMedian)
    }

    pub const fn tukey() -> Self {
        LossSpec::Tukey { k: TUKEY_K }
    }

    pub const fn trimmed(alpha: f64) -> Self {
        LossSpec::TrimmedSquared { alpha }
    }

    /// The six losses of the simulation grid in reporting order.
    pub fn study_losses() -> [LossSpec; 6] {
        [
            LossSpec::Squared,
            LossSpec::huber(),
            LossSpec::tukey(),
            LossSpec::trimmed(0.1),
            LossSpec::trimmed(0.25),
            LossSpec::trimmed(0.5),
        ]
    }

    /// Per-instance loss for the given current residuals.
    pub fn resolve(&self, residuals: &[f64]) -> ResidualLoss {
        match *self {
            LossSpec::Squared | LossSpec::TrimmedSquared { .. } => ResidualLoss::Squared,
            LossSpec::Huber(HuberDelta::Fixed(delta)) => ResidualLoss::Huber { delta },
            LossSpec::Huber(HuberDelta::AdaptiveMedian) => {
                ResidualLoss::Huber { delta: adaptive_huber_delta(residuals) }
            }
            LossSpec::Tukey { k } => ResidualLoss::Tukey { k },
        }
    }

    pub fn trim_alpha(&self) -> Option<f64> {
        match *self {
            LossSpec::TrimmedSquared { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Short label used in CSV files and charts.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::Squared => "Squared".into(),
            LossSpec::Huber(HuberDelta::AdaptiveMedian) => "Huber".into(),
            LossSpec::Huber(HuberDelta::Fixed(d)) => format!("Huber({d})"),
            LossSpec::Tukey { k } if k == TUKEY_K => "Tukey".into(),
            LossSpec::Tukey { k } => format!("Tukey({k})"),
            LossSpec::TrimmedSquared { alpha } => format!("Trim{}", format_percent(alpha)),
        }
    }

    /// Identifier accepted by [`LossSpec::from_str`].
    pub fn key(&self) -> String {
        match *self {
            LossSpec::Squared => "squared".into(),
            LossSpec::Huber(HuberDelta::AdaptiveMedian) => "huber".into(),
            LossSpec::Huber(HuberDelta::Fixed(d)) => format!("huber:{d}"),
            LossSpec::Tukey { k } if k == TUKEY_K => "tukey".into(),
            LossSpec::Tukey { k } => format!("tukey:{k}"),
            LossSpec::TrimmedSquared { alpha } => format!("trim{}", format_percent(alpha)),
        }
    }

    /// Position in the reporting order (unknown variants sort last).
    pub fn report_rank(&self) -> usize {
        LossSpec::study_losses().iter().position(|l| l == self).unwrap_or(usize::MAX)
    }
}

fn format_percent(alpha: f64) -> String {
    let pct = alpha * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for LossSpec {
    type Err = String;

    /// Accepts `squared`, `huber`, `huber:<delta>`, `tukey`, `tukey:<k>` and
    /// `trim<percent>` (e.g. `trim25`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        let positive = |v: &str| -> Result<f64, String> {
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
                _ => Err(format!("loss parameter must be a positive number, got '{v}'")),
            }
        };
        match lower.as_str() {
            "squared" => Ok(LossSpec::Squared),
            "huber" => Ok(LossSpec::huber()),
            "tukey" => Ok(LossSpec::tukey()),
            _ => {
                if let Some(d) = lower.strip_prefix("huber:") {
                    Ok(LossSpec::Huber(HuberDelta::Fixed(positive(d)?)))
                } else if let Some(k) = lower.strip_prefix("tukey:") {
                    Ok(LossSpec::Tukey { k: positive(k)? })
                } else if let Some(pct) = lower.strip_prefix("trim") {
                    let alpha = positive(pct)? / 100.0;
                    if alpha >= 1.0 {
                        return Err(format!("trimming rate must be below 100%, got '{pct}'"));
                    }
                    Ok(LossSpec::TrimmedSquared { alpha })
                } else {
                    Err(format!("unknown loss '{s}'"))
                }
            }
        }
    }
}

/// Fully resolved per-instance loss of a residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualLoss {
    Squared,
    Huber { delta: f64 },
    Tukey { k: f64 },
}

impl ResidualLoss {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            ResidualLoss::Squared => r * r,
            ResidualLoss::Huber { delta } => {
                let a = r.abs();
                if a <= delta {
                    r * r / 2.0
                } else {
                    delta * a - delta * delta / 2.0
                }
            }
            ResidualLoss::Tukey { k } => {
                if r.abs() <= k {
                    let u = 1.0 - (r / k).powi(2);
                    1.0 - u * u * u
                } else {
                    1.0
                }
            }
        }
    }

    /// `dL/dr`.
    pub fn gradient(&self, r: f64) -> f64 {
        match *self {
            ResidualLoss::Squared => 2.0 * r,
            ResidualLoss::Huber { delta } => {
                if r.abs() <= delta {
                    r
                } else {
                    delta * r.signum()
                }
            }
            ResidualLoss::Tukey { k } => {
                if r.abs() <= k {
                    let u = 1.0 - (r / k).powi(2);
                    6.0 * r / (k * k) * u * u
                } else {
                    0.0
                }
            }
        }
    }

    /// `dL/dyhat` for `r = y - yhat`.
    #[inline]
    pub fn prediction_gradient(&self, y: f64, prediction: f64) -> f64 {
        -self.gradient(y - prediction)
    }
}

/// Median absolute residual, floored at [`HUBER_DELTA_FLOOR`].
pub fn adaptive_huber_delta(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let m = median_in_place(&mut abs);
    if m.is_nan() {
        return m;
    }
    m.max(HUBER_DELTA_FLOOR)
}

/// Median (average of the two middle order statistics for even length).
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return HUBER_DELTA_FLOOR;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower_max + upper) / 2.0
    }
}

/// `ceil(fraction * n)` robust to the representation error of decimal
/// fractions such as 0.1 (so `0.1 * 150` counts as exactly 15).
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Size of the kept subset, `ceil((1 - alpha) n)` clamped to `1..=n`.
pub fn trimmed_size(n: usize, alpha: f64) -> usize {
    ceil_count(1.0 - alpha, n).clamp(1.min(n), n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimResult {
    /// Indices of the `h` smallest keys in increasing index order.
    pub kept_indices: Vec<usize>,
    pub h: usize,
    /// Mean of the kept keys.
    pub aggregate: f64,
}

/// Keeps the `ceil((1 - alpha) n)` smallest keys, ties broken by index.
pub fn trimmed_select(keys: &[f64], alpha: f64) -> TrimResult {
    let n = keys.len();
    let h = trimmed_size(n, alpha);
    let mut order: Vec<usize> = (0..n).collect();
    if h < n {
        order.select_nth_unstable_by(h, |&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    }
    let mut kept = order[..h].to_vec();
    kept.sort_unstable();
    let aggregate = if h == 0 { 0.0 } else { kept.iter().map(|&i| keys[i]).sum::<f64>() / h as f64 };
    TrimResult { kept_indices: kept, h, aggregate }
}

/// Mean gradient over all instances, or over the kept subset for trimmed losses.
pub fn aggregate_gradients(per_instance: &[GradientSet], losses: &[f64], spec: &LossSpec) -> GradientSet {
    assert!(!per_instance.is_empty(), "cannot aggregate an empty gradient list");
    assert_eq!(per_instance.len(), losses.len(), "gradients and losses must be parallel");
    let indices: Vec<usize> = match spec.trim_alpha() {
        Some(alpha) => trimmed_select(losses, alpha).kept_indices,
        None => (0..per_instance.len()).collect(),
    };
    let mut agg = per_instance[0].clone();
    agg.fill(0.0);
    for &i in &indices {
        agg.add_assign(&per_instance[i]);
    }
    agg.scale(1.0 / indices.len() as f64);
    agg
}
