//! Sign-based full-batch training: Rprop+ and plain sign gradient descent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::losses::{trimmed_select, LossSpec};
use crate::network::{ForwardTrace, GradientSet, Network};

/// Default divergence proxy for the weight norm.
pub const DEFAULT_DIVERGE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    RpropPlus,
    SignGd,
}

impl FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rprop-plus" | "rprop+" => Ok(UpdateRule::RpropPlus),
            "sign-gd" => Ok(UpdateRule::SignGd),
            other => Err(format!("unknown update rule '{other}'")),
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateRule::RpropPlus => "rprop-plus",
            UpdateRule::SignGd => "sign-gd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub rule: UpdateRule,
    /// Fixed step of [`UpdateRule::SignGd`].
    pub eta: f64,
    pub delta0: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub stepmax: usize,
    pub grad_threshold: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            rule: UpdateRule::RpropPlus,
            eta: 0.1,
            delta0: 0.0125,
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_min: 1e-6,
            delta_max: 50.0,
            stepmax: 100_000,
            grad_threshold: 0.01,
        }
    }
}

impl OptimizerSpec {
    pub fn sign_gd(eta: f64) -> Self {
        OptimizerSpec { rule: UpdateRule::SignGd, eta, ..Default::default() }
    }

    pub fn with_stepmax(mut self, stepmax: usize) -> Self {
        self.stepmax = stepmax;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err("eta must be positive".into());
        }
        if !(0.0 < self.eta_minus && self.eta_minus < 1.0 && 1.0 < self.eta_plus) {
            return Err("require 0 < eta_minus < 1 < eta_plus".into());
        }
        if !(0.0 < self.delta_min && self.delta_min <= self.delta0 && self.delta0 <= self.delta_max) {
            return Err("require 0 < delta_min <= delta0 <= delta_max".into());
        }
        if self.stepmax == 0 {
            return Err("stepmax must be positive".into());
        }
        if self.grad_threshold.is_nan() || self.grad_threshold <= 0.0 {
            return Err("grad_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Per-parameter Rprop+ state.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub step_sizes: Vec<f64>,
    pub prev_grad_signs: Vec<i8>,
    prev_updates: Vec<f64>,
}

impl RpropState {
    pub fn new(num_params: usize, delta0: f64) -> Self {
        RpropState {
            step_sizes: vec![delta0; num_params],
            prev_grad_signs: vec![0; num_params],
            prev_updates: vec![0.0; num_params],
        }
    }
}

#[inline]
fn sign(g: f64) -> i8 {
    if g > 0.0 {
        1
    } else if g < 0.0 {
        -1
    } else {
        0
    }
}

/// One parameter update driven only by the signs of `agg`.
pub fn step(spec: &OptimizerSpec, state: &mut RpropState, net: &mut Network, agg: &GradientSet) {
    let params = net.params_mut();
    let grads = agg.as_slice();
    assert_eq!(params.len(), grads.len(), "gradient shape does not match network");
    match spec.rule {
        UpdateRule::SignGd => {
            for (w, g) in params.iter_mut().zip(grads) {
                let s = sign(*g);
                if s != 0 {
                    *w -= spec.eta * f64::from(s);
                }
            }
        }
        UpdateRule::RpropPlus => {
            for i in 0..params.len() {
                let s = sign(grads[i]);
                let change = s * state.prev_grad_signs[i];
                if change > 0 {
                    let delta = (state.step_sizes[i] * spec.eta_plus).min(spec.delta_max);
                    state.step_sizes[i] = delta;
                    let update = -f64::from(s) * delta;
                    params[i] += update;
                    state.prev_updates[i] = update;
                    state.prev_grad_signs[i] = s;
                } else if change < 0 {
                    state.step_sizes[i] = (state.step_sizes[i] * spec.eta_minus).max(spec.delta_min);
                    params[i] -= state.prev_updates[i];
                    state.prev_updates[i] = 0.0;
                    state.prev_grad_signs[i] = 0;
                } else {
                    let update = -f64::from(s) * state.step_sizes[i];
                    if s != 0 {
                        params[i] += update;
                    }
                    state.prev_updates[i] = update;
                    state.prev_grad_signs[i] = s;
                }
            }
        }
    }
}

/// True iff every partial derivative is strictly below `threshold` in magnitude.
pub fn check_convergence(agg: &GradientSet, threshold: f64) -> bool {
    agg.as_slice().iter().all(|g| g.abs() < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Converged,
    StepLimit,
    Diverged,
}

impl TrainStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainStatus::Converged => "converged",
            TrainStatus::StepLimit => "step-limit",
            TrainStatus::Diverged => "diverged",
        }
    }
}

impl FromStr for TrainStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converged" => Ok(TrainStatus::Converged),
            "step-limit" => Ok(TrainStatus::StepLimit),
            "diverged" => Ok(TrainStatus::Diverged),
            other => Err(format!("unknown status '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub status: TrainStatus,
    pub epochs_used: usize,
    pub final_net: Network,
    /// Running maximum of the flattened parameter norm, initial network included.
    pub sup_weight_norm: f64,
    pub initial_norm: f64,
    pub breakdown: bool,
    /// Per-epoch norms (index 0 is the initial network) when recording was requested.
    pub norm_trace: Option<Vec<f64>>,
}

/// Adapts responses between the forward pass and the loss evaluation of an
/// epoch, e.g. an adaptive attacker.
pub trait ResponseHook {
    /// `losses` are the per-instance losses under the responses currently in `y`.
    fn adjust(&mut self, predictions: &[f64], losses: &[f64], y: &mut [f64]);
}

/// Full-batch training state. [`train`] drives it to completion; tests and
/// diagnostics can drive it epoch by epoch.
pub struct Trainer {
    net: Network,
    data: Dataset,
    loss: LossSpec,
    spec: OptimizerSpec,
    state: RpropState,
    traces: Vec<ForwardTrace>,
    predictions: Vec<f64>,
    residuals: Vec<f64>,
    losses: Vec<f64>,
    kept: Vec<usize>,
    agg: GradientSet,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    objective: f64,
}

impl Trainer {
    pub fn new(net: Network, data: Dataset, loss: LossSpec, spec: OptimizerSpec) -> Self {
        assert!(!data.is_empty(), "training data must not be empty");
        assert_eq!(data.p, net.architecture().input_dim, "data width does not match network input");
        let n = data.len();
        let traces = vec![ForwardTrace::for_network(&net); n];
        let agg = GradientSet::zeros_like(&net);
        let state = RpropState::new(net.num_params(), spec.delta0);
        Trainer {
            net,
            data,
            loss,
            spec,
            state,
            traces,
            predictions: vec![0.0; n],
            residuals: vec![0.0; n],
            losses: vec![0.0; n],
            kept: Vec::with_capacity(n),
            agg,
            delta: Vec::new(),
            delta_prev: Vec::new(),
            objective: 0.0,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn state(&self) -> &RpropState {
        &self.state
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Instances that entered the last aggregated gradient.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Mean loss over the kept instances of the last epoch.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn gradient(&self) -> &GradientSet {
        &self.agg
    }

    pub fn gradient_mut(&mut self) -> &mut GradientSet {
        &mut self.agg
    }

    /// Forward pass, loss resolution and aggregated gradient for the
    /// current parameters.
    pub fn compute_gradient<'h>(&mut self, hook: Option<&mut (dyn ResponseHook + 'h)>) -> &GradientSet {
        let n = self.data.len();
        for i in 0..n {
            self.net.forward_into(self.data.row(i), &mut self.traces[i]);
            self.predictions[i] = self.traces[i].prediction;
            self.residuals[i] = self.data.y[i] - self.predictions[i];
        }
        if let Some(hook) = hook {
            let current = self.loss.resolve(&self.residuals);
            for i in 0..n {
                self.losses[i] = current.value(self.residuals[i]);
            }
            hook.adjust(&self.predictions, &self.losses, &mut self.data.y);
            for i in 0..n {
                self.residuals[i] = self.data.y[i] - self.predictions[i];
            }
        }
        let resolved = self.loss.resolve(&self.residuals);
        for i in 0..n {
            self.losses[i] = resolved.value(self.residuals[i]);
        }

        self.kept.clear();
        match self.loss.trim_alpha() {
            Some(alpha) => self.kept.extend(trimmed_select(&self.losses, alpha).kept_indices),
            None => self.kept.extend(0..n),
        }

        self.agg.fill(0.0);
        let mut total = 0.0;
        for &i in &self.kept {
            total += self.losses[i];
            let g = resolved.prediction_gradient(self.data.y[i], self.predictions[i]);
            self.net.accumulate_gradient(&self.traces[i], g, 1.0, &mut self.agg, &mut self.delta, &mut self.delta_prev);
        }
        let m = self.kept.len() as f64;
        self.agg.scale(1.0 / m);
        self.objective = total / m;
        &self.agg
    }

    pub fn apply_step(&mut self) {
        step(&self.spec, &mut self.state, &mut self.net, &self.agg);
    }

    pub fn converged(&self) -> bool {
        check_convergence(&self.agg, self.spec.grad_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Norm at or above which the run counts as broken down and stops.
    pub diverge_norm: f64,
    pub record_norms: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { diverge_norm: DEFAULT_DIVERGE_NORM, record_norms: false }
    }
}

pub fn train(net: Network, data: &Dataset, loss: LossSpec, spec: &OptimizerSpec, diverge_norm: f64) -> TrainOutcome {
    train_with(net, data, loss, spec, TrainOptions { diverge_norm, record_norms: false }, None)
}

/// Epoch loop: forward, (hook), losses, aggregation, convergence check, step.
///
/// Stops when converged, after `stepmax` epochs, or when the parameters or
/// the training objective become non-finite or the parameter norm reaches
/// `diverge_norm` (both reported as [`TrainStatus::Diverged`]).
pub fn train_with(
    net: Network,
    data: &Dataset,
    loss: LossSpec,
    spec: &OptimizerSpec,
    opts: TrainOptions,
    mut hook: Option<&mut dyn ResponseHook>,
) -> TrainOutcome {
    let initial_norm = net.weight_vec_norm();
    let mut sup = initial_norm;
    let mut trace = opts.record_norms.then(|| vec![initial_norm]);
    let mut trainer = Trainer::new(net, data.clone(), loss, *spec);

    let mut status = TrainStatus::StepLimit;
    let mut epochs_used = spec.stepmax;
    for epoch in 1..=spec.stepmax {
        trainer.compute_gradient(hook.as_deref_mut());
        if !trainer.objective().is_finite() || trainer.gradient().max_abs().is_nan() {
            status = TrainStatus::Diverged;
            epochs_used = epoch;
            break;
        }
        if trainer.converged() {
            status = TrainStatus::Converged;
            epochs_used = epoch;
            break;
        }
        trainer.apply_step();
        let norm = trainer.network().weight_vec_norm();
        if let Some(t) = trace.as_mut() {
            t.push(norm);
        }
        if norm > sup || norm.is_nan() {
            sup = norm;
        }
        if !norm.is_finite() || norm >= opts.diverge_norm {
            status = TrainStatus::Diverged;
            epochs_used = epoch;
            break;
        }
    }

    let breakdown = status == TrainStatus::Diverged || sup >= opts.diverge_norm;
    TrainOutcome {
        status,
        epochs_used,
        final_net: trainer.into_network(),
        sup_weight_norm: sup,
        initial_norm,
        breakdown,
        norm_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::network::Architecture;
    use crate::seed::rng_from;

    fn tiny_net(seed: u64) -> Network {
        Network::init_weights(Architecture::regression(2, vec![3], ActivationKind::Logistic), &mut rng_from(seed))
            .unwrap()
    }

    fn grad_with(net: &Network, values: &[f64]) -> GradientSet {
        let mut g = GradientSet::zeros_like(net);
        g.as_mut_slice().copy_from_slice(values);
        g
    }

    #[test]
    fn sign_gd_single_step() {
        let mut net = Network::zeros(Architecture::regression(1, vec![1], ActivationKind::Logistic)).unwrap();
        net.weights_mut(1)[0] = 1.0;
        let spec = OptimizerSpec::sign_gd(0.1);
        let mut state = RpropState::new(net.num_params(), spec.delta0);
        let g = grad_with(&net, &[0.3, 0.0, 0.0, 0.0]);
        step(&spec, &mut state, &mut net, &g);
        assert!((net.weights(1)[0] - 0.9).abs() < 1e-15);
        assert_eq!(&net.params()[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        for rule in [UpdateRule::SignGd, UpdateRule::RpropPlus] {
            let spec = OptimizerSpec { rule, ..Default::default() };
            let mut net = tiny_net(1);
            let before = net.clone();
            let mut state = RpropState::new(net.num_params(), spec.delta0);
            let state_before = state.clone();
            let g = GradientSet::zeros_like(&net);
            step(&spec, &mut state, &mut net, &g);
            assert_eq!(net, before);
            assert_eq!(state, state_before);
        }
    }

    #[test]
    fn rprop_grows_shrinks_and_backtracks() {
        let spec = OptimizerSpec::default();
        let mut net = Network::zeros(Architecture::regression(1, vec![1], ActivationKind::Logistic)).unwrap();
        let mut state = RpropState::new(4, spec.delta0);
        let pos = grad_with(&net, &[1.0, 1.0, 1.0, 1.0]);
        let neg = grad_with(&net, &[-1.0, -1.0, -1.0, -1.0]);

        step(&spec, &mut state, &mut net, &pos);
        assert_eq!(net.params()[0], -0.0125);
        step(&spec, &mut state, &mut net, &pos);
        assert!((state.step_sizes[0] - 0.015).abs() < 1e-15);
        assert!((net.params()[0] + 0.0275).abs() < 1e-15);

        // sign flip: shrink, undo the last update, forget the sign
        step(&spec, &mut state, &mut net, &neg);
        assert!((state.step_sizes[0] - 0.0075).abs() < 1e-15);
        assert!((net.params()[0] + 0.0125).abs() < 1e-15);
        assert_eq!(state.prev_grad_signs[0], 0);

        // after backtracking the next step uses the reduced size without adapting it
        step(&spec, &mut state, &mut net, &neg);
        assert!((state.step_sizes[0] - 0.0075).abs() < 1e-15);
        assert!((net.params()[0] + 0.005).abs() < 1e-15);
    }

    #[test]
    fn rprop_step_sizes_are_clamped() {
        let spec = OptimizerSpec::default();
        let mut net = tiny_net(3);
        let mut state = RpropState::new(net.num_params(), spec.delta0);
        let pos = grad_with(&net, &vec![1.0; net.num_params()]);
        for _ in 0..200 {
            step(&spec, &mut state, &mut net, &pos);
        }
        assert!(state.step_sizes.iter().all(|&d| d == spec.delta_max));
        let mut flip = 1.0;
        for _ in 0..200 {
            flip = -flip;
            let g = grad_with(&net, &vec![flip; net.num_params()]);
            step(&spec, &mut state, &mut net, &g);
        }
        assert!(state.step_sizes.iter().all(|&d| d >= spec.delta_min && d <= spec.delta_max));
    }

    #[test]
    fn convergence_is_strict() {
        let net = tiny_net(0);
        let g = GradientSet::zeros_like(&net);
        assert!(check_convergence(&g, 0.01));
        let mut vals = vec![0.0; net.num_params()];
        vals[3] = 0.011;
        assert!(!check_convergence(&grad_with(&net, &vals), 0.01));
        vals[3] = 0.01;
        assert!(!check_convergence(&grad_with(&net, &vals), 0.01));
        vals[3] = f64::NAN;
        assert!(!check_convergence(&grad_with(&net, &vals), 0.01));
    }

    #[test]
    fn spec_validation() {
        assert!(OptimizerSpec::default().validate().is_ok());
        assert!(OptimizerSpec { eta_plus: 0.9, ..Default::default() }.validate().is_err());
        assert!(OptimizerSpec { delta0: 100.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerSpec { stepmax: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_residual_data_converges_immediately() {
        let net = tiny_net(8);
        let x = vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0];
        let y: Vec<f64> = x.chunks(2).map(|r| net.predict(r)).collect();
        let data = Dataset::new(x, y, 2).unwrap();
        let out = train(net.clone(), &data, LossSpec::Squared, &OptimizerSpec::default(), DEFAULT_DIVERGE_NORM);
        assert_eq!(out.status, TrainStatus::Converged);
        assert_eq!(out.epochs_used, 1);
        assert_eq!(out.final_net, net);
        assert!(!out.breakdown);
    }

    #[test]
    fn step_limit_is_respected() {
        let net = tiny_net(8);
        let x = vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0];
        let data = Dataset::new(x, vec![50.0, -20.0, 7.0], 2).unwrap();
        let spec = OptimizerSpec::default().with_stepmax(5);
        let out = train(net, &data, LossSpec::Squared, &spec, DEFAULT_DIVERGE_NORM);
        assert_eq!(out.status, TrainStatus::StepLimit);
        assert_eq!(out.epochs_used, 5);
    }

    #[test]
    fn non_finite_parameters_are_diverged() {
        let mut net = tiny_net(8);
        net.params_mut()[0] = f64::INFINITY;
        let data = Dataset::new(vec![1.0, 1.0], vec![0.5], 2).unwrap();
        let out = train(net, &data, LossSpec::Squared, &OptimizerSpec::default(), DEFAULT_DIVERGE_NORM);
        assert_eq!(out.status, TrainStatus::Diverged);
        assert!(out.breakdown);
        assert_eq!(out.epochs_used, 1);
    }
}
