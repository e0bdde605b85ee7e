//! Factorial simulation runner and per-cell aggregation.
//!
//! A single run draws a clean train/test pair, contaminates the training
//! part only, optionally min-max standardizes the responses with a transform
//! fitted on the contaminated training responses, trains a network and, if
//! training converged, records the mean squared test loss.
//!
//! All random streams of a run derive from a seed that depends only on the
//! base seed, the data-generation settings and the replication index, so the
//! same replication sees the same clean data under every loss and
//! contamination scenario, and results never depend on scheduling.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::contamination::{contaminate, ContaminationKind, ContaminationSpec, IterativeAttacker};
use crate::datagen::{generate_dataset, DataGenSpec, Dataset, Standardizer};
use crate::losses::LossSpec;
use crate::network::{Architecture, Network};

use crate::optimizer::{
    train_with, OptimizerSpec, ResponseHook, TrainOptions, TrainOutcome, TrainStatus, DEFAULT_DIVERGE_NORM,
};
use crate::seed::{rng_from, substream, Fnv1a};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    /// Two hidden layers of ten nodes.
    Shallow,
    /// Ten hidden layers of five nodes.
    Deep,
}

impl Depth {
    pub fn hidden_sizes(self) -> Vec<usize> {
        match self {
            Depth::Shallow => vec![10, 10],
            Depth::Deep => vec![5; 10],
        }
    }

    pub fn default_stepmax(self) -> usize {
        match self {
            Depth::Shallow => 100_000,
            Depth::Deep => 250_000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Shallow => "shallow",
            Depth::Deep => "deep",
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shallow" => Ok(Depth::Shallow),
            "deep" => Ok(Depth::Deep),
            other => Err(format!("unknown depth '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub config_id: usize,
    pub data: DataGenSpec,
    pub contamination: ContaminationSpec,
    pub activation: ActivationKind,
    pub loss: LossSpec,
    pub standardize: bool,
    pub depth: Depth,
    pub replications: usize,
    pub base_seed: u64,
    pub optimizer: OptimizerSpec,
    pub diverge_norm: f64,
}

impl ExperimentConfig {
    /// Configuration with the default optimizer for `depth`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: DataGenSpec,
        contamination: ContaminationSpec,
        activation: ActivationKind,
        loss: LossSpec,
        standardize: bool,
        depth: Depth,
        replications: usize,
        base_seed: u64,
    ) -> Self {
        ExperimentConfig {
            config_id: 0,
            data,
            contamination,
            activation,
            loss,
            standardize,
            depth,
            replications,
            base_seed,
            optimizer: OptimizerSpec::default().with_stepmax(depth.default_stepmax()),
            diverge_norm: DEFAULT_DIVERGE_NORM,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::regression(self.data.p, self.depth.hidden_sizes(), self.activation)
    }

    /// Seed shared by every configuration with the same data settings.
    pub fn run_seed(&self, rep: usize) -> u64 {
        let d = &self.data;
        let mut h = Fnv1a::new();
        h.write_u64(self.base_seed);
        h.write_u64(d.p as u64);
        h.write_u64(d.n_train as u64);
        h.write_u64(d.n_test as u64);
        h.write_f64(d.mu);
        h.write_f64(d.snr);
        h.write_str(d.structure.as_str());
        h.write_u64(rep as u64);
        h.finish()
    }

    fn contamination_tag(&self) -> String {
        let c = &self.contamination;
        format!("contamination|{}|{:e}|{:e}|{:e}", c.kind, c.r, c.mu_out, c.out_sd)
    }

    fn init_tag(&self) -> String {
        format!("init|{}|{}", self.activation, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: usize,
    pub rep: usize,
    pub seed: u64,
    pub converged: bool,
    /// `None` only for runs that failed before training.
    pub status: Option<TrainStatus>,
    pub epochs: usize,
    /// Present only for converged runs; may be infinite.
    pub test_loss: Option<f64>,
    pub sup_weight_norm: f64,
    pub breakdown: bool,
    /// Fingerprint of the evaluation test set before standardization.
    pub test_fingerprint: u64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn test_loss_finite(&self) -> bool {
        self.test_loss.is_some_and(f64::is_finite)
    }

    pub fn status_label(&self) -> &'static str {
        match self.status {
            Some(s) => s.as_str(),
            None => "error",
        }
    }
}

/// Clean train/test pair for replication `rep` of `cfg`.
pub fn clean_data(cfg: &ExperimentConfig, rep: usize) -> (Dataset, Dataset) {
    let seed = cfg.run_seed(rep);
    generate_dataset(&cfg.data, &mut rng_from(substream(seed, "data")))
}

/// Contaminated training set and clean test set, both on the original scale.
pub fn contaminated_data(cfg: &ExperimentConfig, rep: usize) -> (Dataset, Dataset) {
    let (clean_train, test) = clean_data(cfg, rep);
    let mut cont_rng = rng_from(substream(cfg.run_seed(rep), &cfg.contamination_tag()));
    (contaminate(&clean_train, &cfg.contamination, &mut cont_rng), test)
}

struct PreparedRun {
    train: Dataset,
    test: Dataset,
    test_y: Vec<f64>,
    attacker: Option<IterativeAttacker>,
    net: Network,
}

fn prepare(cfg: &ExperimentConfig, rep: usize) -> crate::Result<PreparedRun> {
    let seed = cfg.run_seed(rep);
    let (clean_train, test) = clean_data(cfg, rep);
    let mut cont_rng = rng_from(substream(seed, &cfg.contamination_tag()));
    let mut train = contaminate(&clean_train, &cfg.contamination, &mut cont_rng);
    let attacker = (cfg.contamination.kind == ContaminationKind::YIterative)
        .then(|| IterativeAttacker::random(train.len(), cfg.contamination.r, cfg.contamination.mu_out, &mut cont_rng));
    let mut test_y = test.y.clone();
    if cfg.standardize {
        let t = Standardizer::fit(&train.y)?;
        train.y = t.apply(&train.y);
        test_y = t.apply(&test_y);
    }
    let net = Network::init_weights(cfg.architecture(), &mut rng_from(substream(seed, &cfg.init_tag())))?;
    Ok(PreparedRun { train, test, test_y, attacker, net })
}

fn train_prepared(cfg: &ExperimentConfig, run: &mut PreparedRun, record_norms: bool) -> TrainOutcome {
    let opts = TrainOptions { diverge_norm: cfg.diverge_norm, record_norms };
    let hook = run.attacker.as_mut().map(|a| a as &mut dyn ResponseHook);
    train_with(run.net.clone(), &run.train, cfg.loss, &cfg.optimizer, opts, hook)
}

/// Trains replication `rep` of `cfg` while recording the parameter norm after
/// every epoch.
pub fn probe_run(cfg: &ExperimentConfig, rep: usize) -> crate::Result<TrainOutcome> {
    let mut run = prepare(cfg, rep)?;
    Ok(train_prepared(cfg, &mut run, true))
}

pub fn run_single(cfg: &ExperimentConfig, rep: usize) -> RunRecord {
    let (_, test) = clean_data(cfg, rep);
    let mut record = RunRecord {
        config_id: cfg.config_id,
        rep,
        seed: cfg.run_seed(rep),
        converged: false,
        status: None,
        epochs: 0,
        test_loss: None,
        sup_weight_norm: f64::NAN,
        breakdown: false,
        test_fingerprint: test.fingerprint(),
        error: None,
    };
    let mut run = match prepare(cfg, rep) {
        Ok(run) => run,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let outcome = train_prepared(cfg, &mut run, false);

    record.status = Some(outcome.status);
    record.converged = outcome.status == TrainStatus::Converged;
    record.epochs = outcome.epochs_used;
    record.sup_weight_norm = outcome.sup_weight_norm;
    record.breakdown = outcome.breakdown;
    if record.converged {
        let predictions = outcome.final_net.predict_all(&run.test);
        let sse: f64 = predictions.iter().zip(&run.test_y).map(|(p, y)| (p - y).powi(2)).sum();
        let loss = sse / run.test_y.len() as f64;
        record.test_loss = Some(if loss.is_nan() { f64::INFINITY } else { loss });
    }
    debug_assert_eq!(run.test.fingerprint(), record.test_fingerprint);
    record
}

/// Every `(config, replication)` pair, sorted by `(config_id, rep)`.
pub fn run_sweep(cfgs: &[ExperimentConfig], parallelism: usize) -> Vec<RunRecord> {
    let jobs: Vec<(&ExperimentConfig, usize)> =
        cfgs.iter().flat_map(|c| (0..c.replications).map(move |rep| (c, rep))).collect();
    let run = |&(cfg, rep): &(&ExperimentConfig, usize)| {
        catch_unwind(AssertUnwindSafe(|| run_single(cfg, rep))).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "run panicked".into());
            RunRecord {
                config_id: cfg.config_id,
                rep,
                seed: cfg.run_seed(rep),
                converged: false,
                status: None,
                epochs: 0,
                test_loss: None,
                sup_weight_norm: f64::NAN,
                breakdown: false,
                test_fingerprint: 0,
                error: Some(msg),
            }
        })
    };
    let mut records: Vec<RunRecord> = if parallelism <= 1 {
        jobs.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| jobs.par_iter().map(run).collect()),
            Err(_) => jobs.iter().map(run).collect(),
        }
    };
    records.sort_by_key(|r| (r.config_id, r.rep));
    records
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub config_id: usize,
    pub replications: usize,
    pub n_converged: usize,
    pub n_inf_losses: usize,
    /// Mean over converged runs with a finite test loss.
    pub mean_finite_test_loss: Option<f64>,
    pub median_finite_test_loss: Option<f64>,
    pub mean_epochs_converged: Option<f64>,
    /// Fraction of runs that did not converge.
    pub breakdown_rate_surrogate: f64,
}

/// One summary per config id, in increasing id order.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.config_id, r.rep));
    sorted.chunk_by(|a, b| a.config_id == b.config_id).map(summarize_cell).collect()
}

fn summarize_cell(cell: &[&RunRecord]) -> CellSummary {
    let v = cell.len();
    let converged: Vec<&&RunRecord> = cell.iter().filter(|r| r.converged).collect();
    let mut finite: Vec<f64> = converged.iter().filter_map(|r| r.test_loss).filter(|l| l.is_finite()).collect();
    let n_inf = converged.iter().filter(|r| r.test_loss.is_some_and(|l| !l.is_finite())).count();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mean_loss = mean(&finite);
    finite.sort_by(f64::total_cmp);
    let median = median_sorted(&finite);
    let epochs: Vec<f64> = converged.iter().map(|r| r.epochs as f64).collect();
    CellSummary {
        config_id: cell[0].config_id,
        replications: v,
        n_converged: converged.len(),
        n_inf_losses: n_inf,
        mean_finite_test_loss: mean_loss,
        median_finite_test_loss: median,
        mean_epochs_converged: mean(&epochs),
        breakdown_rate_surrogate: (v - converged.len()) as f64 / v as f64,
    }
}

fn median_sorted(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(xs[n / 2]),
        _ => Some((xs[n / 2 - 1] + xs[n / 2]) / 2.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Structure;

    fn record(config_id: usize, rep: usize, converged: bool, loss: Option<f64>, epochs: usize) -> RunRecord {
        RunRecord {
            config_id,
            rep,
            seed: 0,
            converged,
            status: Some(if converged { TrainStatus::Converged } else { TrainStatus::StepLimit }),
            epochs,
            test_loss: loss,
            sup_weight_norm: 1.0,
            breakdown: false,
            test_fingerprint: 0,
            error: None,
        }
    }

    #[test]
    fn summary_all_equal() {
        let recs: Vec<RunRecord> = (0..5).map(|i| record(0, i, true, Some(0.25), 10)).collect();
        let s = &summarize(&recs)[0];
        assert_eq!(s.mean_finite_test_loss, Some(0.25));
        assert_eq!(s.breakdown_rate_surrogate, 0.0);
        assert_eq!(s.mean_epochs_converged, Some(10.0));
    }

    #[test]
    fn summary_mixed_case() {
        let recs = vec![
            record(3, 0, true, Some(1.0), 10),
            record(3, 1, true, Some(3.0), 30),
            record(3, 2, true, Some(f64::INFINITY), 50),
            record(3, 3, false, None, 100),
        ];
        let s = &summarize(&recs)[0];
        assert_eq!(s.mean_finite_test_loss, Some(2.0));
        assert_eq!(s.n_inf_losses, 1);
        assert_eq!(s.n_converged, 3);
        assert_eq!(s.breakdown_rate_surrogate, 0.25);
        assert_eq!(s.mean_epochs_converged, Some(30.0));
    }

    #[test]
    fn summary_none_converged() {
        let recs: Vec<RunRecord> = (0..3).map(|i| record(1, i, false, None, 7)).collect();
        let s = &summarize(&recs)[0];
        assert_eq!(s.mean_finite_test_loss, None);
        assert_eq!(s.mean_epochs_converged, None);
        assert_eq!(s.n_converged, 0);
        assert_eq!(s.breakdown_rate_surrogate, 1.0);
    }

    #[test]
    fn summary_is_order_independent() {
        let mut recs = vec![
            record(1, 0, true, Some(0.1), 1),
            record(0, 1, true, Some(0.7), 2),
            record(1, 1, true, Some(0.3), 3),
            record(0, 0, false, None, 4),
        ];
        let a = summarize(&recs);
        recs.reverse();
        assert_eq!(a, summarize(&recs));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn seeds_shared_across_losses_and_contamination() {
        let data = DataGenSpec { p: 5, n_train: 20, n_test: 5, mu: 0.0, snr: 2.0, structure: Structure::Lin };
        let a = ExperimentConfig::new(
            data,
            ContaminationSpec::none(),
            ActivationKind::Logistic,
            LossSpec::Squared,
            true,
            Depth::Shallow,
            2,
            9,
        );
        let mut b = a.clone();
        b.loss = LossSpec::tukey();
        b.contamination = ContaminationSpec::new(ContaminationKind::YConvex, 0.1, 10.0);
        b.config_id = 17;
        assert_eq!(a.run_seed(1), b.run_seed(1));
        assert_ne!(a.run_seed(0), a.run_seed(1));
        let mut c = a.clone();
        c.base_seed = 10;
        assert_ne!(a.run_seed(0), c.run_seed(0));
    }

    #[test]
    fn depth_settings() {
        assert_eq!(Depth::Shallow.hidden_sizes(), vec![10, 10]);
        assert_eq!(Depth::Deep.hidden_sizes(), vec![5; 10]);
        assert_eq!(Depth::Deep.default_stepmax(), 250_000);
    }
}
