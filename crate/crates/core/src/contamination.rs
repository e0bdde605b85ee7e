//! Replacement-outlier generators for training data.
//!
//! Every generator returns a fresh copy; the input dataset is never touched.
//! Counts follow `ceil(r n)` for responses and predictor rows and
//! `ceil(r n (p + 1))` for cells of the augmented matrix `(X | Y)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::losses::ceil_count;
use crate::optimizer::ResponseHook;

/// Smallest offset the iterative attacker places above a prediction.
pub const ATTACK_OFFSET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContaminationKind {
    None,
    YConvex,
    XCasewise,
    XyCellwise,
    YIterative,
}

impl ContaminationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContaminationKind::None => "none",
            ContaminationKind::YConvex => "y-convex",
            ContaminationKind::XCasewise => "x-casewise",
            ContaminationKind::XyCellwise => "xy-cellwise",
            ContaminationKind::YIterative => "y-iterative",
        }
    }
}

impl fmt::Display for ContaminationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContaminationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ContaminationKind::None),
            "y-convex" | "y" => Ok(ContaminationKind::YConvex),
            "x-casewise" | "x" => Ok(ContaminationKind::XCasewise),
            "xy-cellwise" | "xy" => Ok(ContaminationKind::XyCellwise),
            "y-iterative" => Ok(ContaminationKind::YIterative),
            other => Err(format!("unknown contamination kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    /// Contamination radius in `[0, 1]`.
    pub r: f64,
    pub mu_out: f64,
    pub out_sd: f64,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        ContaminationSpec { kind: ContaminationKind::None, r: 0.0, mu_out: 0.0, out_sd: 1.0 }
    }

    pub fn new(kind: ContaminationKind, r: f64, mu_out: f64) -> Self {
        ContaminationSpec { kind, r, mu_out, out_sd: 1.0 }
    }

    fn outlier_dist(&self) -> Normal<f64> {
        Normal::new(self.mu_out, self.out_sd).expect("outlier standard deviation must be finite")
    }
}

/// Applies the static generator selected by `spec.kind`. The iterative
/// attacker acts during training instead, so it leaves the data unchanged here.
pub fn contaminate<R: Rng + ?Sized>(data: &Dataset, spec: &ContaminationSpec, rng: &mut R) -> Dataset {
    match spec.kind {
        ContaminationKind::None | ContaminationKind::YIterative => data.clone(),
        ContaminationKind::YConvex => contaminate_y(data, spec, rng),
        ContaminationKind::XCasewise => contaminate_x_casewise(data, spec, rng),
        ContaminationKind::XyCellwise => contaminate_cellwise(data, spec, rng),
    }
}

/// Replaces `ceil(r n)` responses by `N(mu_out, out_sd^2)` draws.
pub fn contaminate_y<R: Rng + ?Sized>(data: &Dataset, spec: &ContaminationSpec, rng: &mut R) -> Dataset {
    let mut out = data.clone();
    let n = data.len();
    let count = ceil_count(spec.r, n).min(n);
    let dist = spec.outlier_dist();
    for i in sample(rng, n, count).into_iter() {
        out.y[i] = dist.sample(rng);
    }
    out
}

/// Replaces `ceil(r n)` whole predictor rows by `N_p(mu_out 1_p, I_p)` draws.
pub fn contaminate_x_casewise<R: Rng + ?Sized>(data: &Dataset, spec: &ContaminationSpec, rng: &mut R) -> Dataset {
    let mut out = data.clone();
    let n = data.len();
    let count = ceil_count(spec.r, n).min(n);
    let dist = spec.outlier_dist();
    for i in sample(rng, n, count).into_iter() {
        for v in out.row_mut(i) {
            *v = dist.sample(rng);
        }
    }
    out
}

/// Replaces `ceil(r n (p+1))` cells of `(X | Y)` by `N(mu_out, out_sd^2)` draws.
pub fn contaminate_cellwise<R: Rng + ?Sized>(data: &Dataset, spec: &ContaminationSpec, rng: &mut R) -> Dataset {
    let mut out = data.clone();
    let n = data.len();
    let width = data.p + 1;
    let cells = n * width;
    let count = ceil_count(spec.r, cells).min(cells);
    let dist = spec.outlier_dist();
    for c in sample(rng, cells, count).into_iter() {
        let (i, j) = (c / width, c % width);
        let value = dist.sample(rng);
        if j == data.p {
            out.y[i] = value;
        } else {
            out.row_mut(i)[j] = value;
        }
    }
    out
}

/// Responses for the attacked instances: just above the current prediction,
/// with a squared loss strictly below the `(m+1)`-th smallest current loss,
/// where `m` is the number of attacked instances (`n/2 + 1` for `m = n/2`).
pub fn iterative_attacker_step(
    predictions: &[f64],
    current_losses: &[f64],
    attacked_indices: &[usize],
    eps: f64,
) -> Vec<f64> {
    let mut sorted = current_losses.to_vec();
    let rank = attacked_indices.len().min(sorted.len().saturating_sub(1));
    let threshold = if sorted.is_empty() { 0.0 } else { *sorted.select_nth_unstable_by(rank, f64::total_cmp).1 };
    let bound = 0.99 * threshold.max(0.0).sqrt();
    let offset = eps.min(bound).max(ATTACK_OFFSET_FLOOR);
    attacked_indices.iter().map(|&i| predictions[i] + offset).collect()
}

/// Training-time attacker that rewrites a fixed set of responses every epoch.
#[derive(Debug, Clone)]
pub struct IterativeAttacker {
    pub attacked: Vec<usize>,
    pub eps: f64,
}

impl IterativeAttacker {
    /// Attacks `ceil(r n)` instances chosen uniformly without replacement.
    pub fn random<R: Rng + ?Sized>(n: usize, r: f64, eps: f64, rng: &mut R) -> Self {
        let count = ceil_count(r, n).min(n);
        let mut attacked = sample(rng, n, count).into_vec();
        attacked.sort_unstable();
        IterativeAttacker { attacked, eps }
    }
}

impl ResponseHook for IterativeAttacker {
    fn adjust(&mut self, predictions: &[f64], losses: &[f64], y: &mut [f64]) {
        let new = iterative_attacker_step(predictions, losses, &self.attacked, self.eps);
        for (&i, v) in self.attacked.iter().zip(new) {
            y[i] = v;
        }
    }
}
