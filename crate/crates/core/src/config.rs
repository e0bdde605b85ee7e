//! JSON sweep configuration.
//!
//! A configuration document describes a factorial design; every list-valued
//! key is expanded into the Cartesian product. Scalars are accepted wherever a
//! list is. Example:
//!
//! ```json
//! {
//!   "data": {"p": 5, "n_train": 150, "n_test": 50, "snr": 2, "mu": 0},
//!   "structure": ["lin", "trig"],
//!   "contamination": {"kind": "y-convex", "r": [0.1, 0.25], "mu_out": 100},
//!   "activation": "logistic",
//!   "depth": "shallow",
//!   "standardize": true,
//!   "losses": ["squared", "huber", "tukey", "trim10", "trim25", "trim50"],
//!   "replications": 20,
//!   "base_seed": 1,
//!   "optimizer": {"stepmax": 20000}
//! }
//! ```
//!
//! `optimizer` is optional and may set `rule` (`rprop-plus` or `sign-gd`),
//! `eta`, `delta0`, `eta_plus`, `eta_minus`, `delta_min`, `delta_max`,
//! `stepmax`, `grad_threshold` and `diverge_norm`. Without `stepmax`, shallow
//! networks get 100000 epochs and deep networks 250000.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::activation::ActivationKind;
use crate::contamination::{ContaminationKind, ContaminationSpec};
use crate::datagen::{DataGenSpec, Structure};
use crate::error::{Error, Result};
use crate::experiment::{Depth, ExperimentConfig};
use crate::losses::LossSpec;
use crate::optimizer::{OptimizerSpec, UpdateRule, DEFAULT_DIVERGE_NORM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSize {
    pub p: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub snr: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OptimizerOverrides {
    pub rule: Option<UpdateRule>,
    pub eta: Option<f64>,
    pub delta0: Option<f64>,
    pub eta_plus: Option<f64>,
    pub eta_minus: Option<f64>,
    pub delta_min: Option<f64>,
    pub delta_max: Option<f64>,
    pub stepmax: Option<usize>,
    pub grad_threshold: Option<f64>,
    pub diverge_norm: Option<f64>,
}

impl OptimizerOverrides {
    fn apply(&self, depth: Depth) -> OptimizerSpec {
        let d = OptimizerSpec::default();
        OptimizerSpec {
            rule: self.rule.unwrap_or(d.rule),
            eta: self.eta.unwrap_or(d.eta),
            delta0: self.delta0.unwrap_or(d.delta0),
            eta_plus: self.eta_plus.unwrap_or(d.eta_plus),
            eta_minus: self.eta_minus.unwrap_or(d.eta_minus),
            delta_min: self.delta_min.unwrap_or(d.delta_min),
            delta_max: self.delta_max.unwrap_or(d.delta_max),
            stepmax: self.stepmax.unwrap_or(depth.default_stepmax()),
            grad_threshold: self.grad_threshold.unwrap_or(d.grad_threshold),
        }
    }

    fn is_empty(&self) -> bool {
        *self == OptimizerOverrides::default()
    }
}

/// Unexpanded factorial design as written in the configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub data: Vec<DataSize>,
    pub structures: Vec<Structure>,
    pub kinds: Vec<ContaminationKind>,
    pub radii: Vec<f64>,
    pub mu_outs: Vec<f64>,
    pub out_sd: f64,
    pub activations: Vec<ActivationKind>,
    pub depths: Vec<Depth>,
    pub standardize: Vec<bool>,
    pub losses: Vec<LossSpec>,
    pub replications: usize,
    pub base_seed: u64,
    pub optimizer: OptimizerOverrides,
}

impl SweepConfig {
    /// The complete simulation grid (15552 configurations).
    pub fn full_study(replications: usize, base_seed: u64) -> Self {
        SweepConfig {
            data: [(5, 150, 50), (20, 500, 200), (50, 1000, 500)]
                .into_iter()
                .map(|(p, n_train, n_test)| DataSize { p, n_train, n_test, snr: 2.0, mu: 0.0 })
                .collect(),
            structures: vec![Structure::Lin, Structure::Poly, Structure::Trig],
            kinds: vec![
                ContaminationKind::None,
                ContaminationKind::YConvex,
                ContaminationKind::XCasewise,
                ContaminationKind::XyCellwise,
            ],
            radii: vec![0.1, 0.25, 0.4],
            mu_outs: vec![10.0, 100.0, 1000.0],
            out_sd: 1.0,
            activations: vec![ActivationKind::Logistic, ActivationKind::Softplus],
            depths: vec![Depth::Shallow, Depth::Deep],
            standardize: vec![true, false],
            losses: LossSpec::study_losses().to_vec(),
            replications,
            base_seed,
            optimizer: OptimizerOverrides::default(),
        }
    }

    pub fn num_configs(&self) -> usize {
        self.data.len()
            * self.structures.len()
            * self.kinds.len()
            * self.radii.len()
            * self.mu_outs.len()
            * self.activations.len()
            * self.depths.len()
            * self.standardize.len()
            * self.losses.len()
    }

    /// Cartesian product with losses varying fastest, so the losses of one
    /// scenario cell get consecutive ids.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::with_capacity(self.num_configs());
        for d in &self.data {
            for &structure in &self.structures {
                for &standardize in &self.standardize {
                    for &depth in &self.depths {
                        for &activation in &self.activations {
                            for &kind in &self.kinds {
                                for &r in &self.radii {
                                    for &mu_out in &self.mu_outs {
                                        for &loss in &self.losses {
                                            let data = DataGenSpec {
                                                p: d.p,
                                                n_train: d.n_train,
                                                n_test: d.n_test,
                                                mu: d.mu,
                                                snr: d.snr,
                                                structure,
                                            };
                                            let contamination =
                                                ContaminationSpec { kind, r, mu_out, out_sd: self.out_sd };
                                            let mut cfg = ExperimentConfig::new(
                                                data,
                                                contamination,
                                                activation,
                                                loss,
                                                standardize,
                                                depth,
                                                self.replications,
                                                self.base_seed,
                                            );
                                            cfg.config_id = out.len();
                                            cfg.optimizer = self.optimizer.apply(depth);
                                            cfg.diverge_norm =
                                                self.optimizer.diverge_norm.unwrap_or(DEFAULT_DIVERGE_NORM);
                                            out.push(cfg);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let data: Vec<Value> = self
            .data
            .iter()
            .map(|d| json!({"p": d.p, "n_train": d.n_train, "n_test": d.n_test, "snr": d.snr, "mu": d.mu}))
            .collect();
        let mut doc = json!({
            "data": data,
            "structure": self.structures.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            "contamination": {
                "kind": self.kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
                "r": self.radii,
                "mu_out": self.mu_outs,
                "out_sd": self.out_sd,
            },
            "activation": self.activations.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
            "depth": self.depths.iter().map(|d| d.as_str()).collect::<Vec<_>>(),
            "standardize": self.standardize,
            "losses": self.losses.iter().map(|l| l.key()).collect::<Vec<_>>(),
            "replications": self.replications,
            "base_seed": self.base_seed,
        });
        if !self.optimizer.is_empty() {
            let o = &self.optimizer;
            let mut m = Map::new();
            if let Some(rule) = o.rule {
                m.insert("rule".into(), json!(rule.to_string()));
            }
            for (key, v) in [
                ("eta", o.eta),
                ("delta0", o.delta0),
                ("eta_plus", o.eta_plus),
                ("eta_minus", o.eta_minus),
                ("delta_min", o.delta_min),
                ("delta_max", o.delta_max),
                ("grad_threshold", o.grad_threshold),
                ("diverge_norm", o.diverge_norm),
            ] {
                if let Some(v) = v {
                    m.insert(key.into(), json!(v));
                }
            }
            if let Some(s) = o.stepmax {
                m.insert("stepmax".into(), json!(s));
            }
            doc["optimizer"] = Value::Object(m);
        }
        doc
    }
}

pub fn parse_config(path: &Path) -> Result<Vec<ExperimentConfig>> {
    Ok(read_sweep_config(path)?.expand())
}

pub fn read_sweep_config(path: &Path) -> Result<SweepConfig> {
    parse_sweep_config(&std::fs::read_to_string(path)?)
}

pub fn parse_config_str(text: &str) -> Result<Vec<ExperimentConfig>> {
    Ok(parse_sweep_config(text)?.expand())
}

pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let root = as_object(&doc, "<document>")?;
    check_keys(
        root,
        "",
        &[
            "data",
            "structure",
            "contamination",
            "activation",
            "depth",
            "standardize",
            "losses",
            "replications",
            "base_seed",
            "optimizer",
        ],
    )?;

    let data = list_of(required(root, "", "data")?, "data", parse_data_size)?;
    let structures = list_of(required(root, "", "structure")?, "structure", parse_from_str)?;

    let cont = as_object(required(root, "", "contamination")?, "contamination")?;
    check_keys(cont, "contamination.", &["kind", "r", "mu_out", "out_sd"])?;
    let kinds: Vec<ContaminationKind> =
        list_of(required(cont, "contamination.", "kind")?, "contamination.kind", parse_from_str)?;
    let all_clean = kinds.iter().all(|k| *k == ContaminationKind::None);
    let radii = match cont.get("r") {
        Some(v) => list_of(v, "contamination.r", |v, k| {
            let r = number(v, k)?;
            if (0.0..=1.0).contains(&r) {
                Ok(r)
            } else {
                Err(Error::config(k, format!("must lie in [0, 1], got {r}")))
            }
        })?,
        None if all_clean => vec![0.0],
        None => return Err(Error::config("contamination.r", "missing required key")),
    };
    let mu_outs = match cont.get("mu_out") {
        Some(v) => list_of(v, "contamination.mu_out", number)?,
        None if all_clean => vec![0.0],
        None => return Err(Error::config("contamination.mu_out", "missing required key")),
    };
    let out_sd = match cont.get("out_sd") {
        Some(v) => positive(v, "contamination.out_sd")?,
        None => 1.0,
    };

    let activations: Vec<ActivationKind> = list_of(required(root, "", "activation")?, "activation", parse_from_str)?;
    let depths = list_of(required(root, "", "depth")?, "depth", parse_from_str)?;
    let standardize = list_of(required(root, "", "standardize")?, "standardize", |v, k| {
        v.as_bool().ok_or_else(|| Error::config(k, "expected true or false"))
    })?;
    let losses = list_of(required(root, "", "losses")?, "losses", parse_from_str)?;
    let replications = positive_integer(required(root, "", "replications")?, "replications")?;
    let base_seed = required(root, "", "base_seed")?
        .as_u64()
        .ok_or_else(|| Error::config("base_seed", "expected a non-negative integer"))?;
    let optimizer = match root.get("optimizer") {
        Some(v) => parse_optimizer(v)?,
        None => OptimizerOverrides::default(),
    };
    for depth in &depths {
        optimizer.apply(*depth).validate().map_err(|m| Error::config("optimizer", m))?;
    }

    Ok(SweepConfig {
        data,
        structures,
        kinds,
        radii,
        mu_outs,
        out_sd,
        activations,
        depths,
        standardize,
        losses,
        replications,
        base_seed,
        optimizer,
    })
}

fn parse_data_size(v: &Value, key: &str) -> Result<DataSize> {
    let m = as_object(v, key)?;
    let prefix = format!("{key}.");
    check_keys(m, &prefix, &["p", "n_train", "n_test", "snr", "mu"])?;
    let p = positive_integer(required(m, &prefix, "p")?, &format!("{prefix}p"))?;
    let n_train = positive_integer(required(m, &prefix, "n_train")?, &format!("{prefix}n_train"))?;
    let n_test = positive_integer(required(m, &prefix, "n_test")?, &format!("{prefix}n_test"))?;
    let snr = positive(required(m, &prefix, "snr")?, &format!("{prefix}snr"))?;
    let mu = number(required(m, &prefix, "mu")?, &format!("{prefix}mu"))?;
    Ok(DataSize { p, n_train, n_test, snr, mu })
}

fn parse_optimizer(v: &Value) -> Result<OptimizerOverrides> {
    let m = as_object(v, "optimizer")?;
    check_keys(
        m,
        "optimizer.",
        &[
            "rule",
            "eta",
            "delta0",
            "eta_plus",
            "eta_minus",
            "delta_min",
            "delta_max",
            "stepmax",
            "grad_threshold",
            "diverge_norm",
        ],
    )?;
    let opt_pos =
        |key: &str| -> Result<Option<f64>> { m.get(key).map(|v| positive(v, &format!("optimizer.{key}"))).transpose() };
    Ok(OptimizerOverrides {
        rule: m.get("rule").map(|v| parse_from_str(v, "optimizer.rule")).transpose()?,
        eta: opt_pos("eta")?,
        delta0: opt_pos("delta0")?,
        eta_plus: opt_pos("eta_plus")?,
        eta_minus: opt_pos("eta_minus")?,
        delta_min: opt_pos("delta_min")?,
        delta_max: opt_pos("delta_max")?,
        stepmax: m.get("stepmax").map(|v| positive_integer(v, "optimizer.stepmax")).transpose()?,
        grad_threshold: opt_pos("grad_threshold")?,
        diverge_norm: opt_pos("diverge_norm")?,
    })
}

fn as_object<'a>(v: &'a Value, key: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::config(key, "expected an object"))
}

fn required<'a>(m: &'a Map<String, Value>, prefix: &str, key: &str) -> Result<&'a Value> {
    m.get(key).ok_or_else(|| Error::config(format!("{prefix}{key}"), "missing required key"))
}

fn check_keys(m: &Map<String, Value>, prefix: &str, allowed: &[&str]) -> Result<()> {
    match m.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{prefix}{k}"), "unknown key")),
        None => Ok(()),
    }
}

/// Scalar or non-empty list; list elements are reported as `key[i]`.
fn list_of<T>(v: &Value, key: &str, parse: impl Fn(&Value, &str) -> Result<T>) -> Result<Vec<T>> {
    match v {
        Value::Array(items) => {
            if items.is_empty() {
                return Err(Error::config(key, "list must not be empty"));
            }
            items.iter().enumerate().map(|(i, item)| parse(item, &format!("{key}[{i}]"))).collect()
        }
        other => Ok(vec![parse(other, key)?]),
    }
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(v: &Value, key: &str) -> Result<T> {
    let s = v.as_str().ok_or_else(|| Error::config(key, "expected a string"))?;
    s.parse().map_err(|m: String| Error::config(key, m))
}

fn number(v: &Value, key: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(Error::config(key, "expected a finite number")),
    }
}

fn positive(v: &Value, key: &str) -> Result<f64> {
    let x = number(v, key)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

fn positive_integer(v: &Value, key: &str) -> Result<usize> {
    match v.as_u64() {
        Some(n) if n > 0 => Ok(n as usize),
        _ => Err(Error::config(key, "expected a positive integer")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "data": {"p": 5, "n_train": 150, "n_test": 50, "snr": 2, "mu": 0},
        "structure": "lin",
        "contamination": {"kind": "y-convex", "r": [0.1, 0.25], "mu_out": 100},
        "activation": "logistic",
        "depth": "shallow",
        "standardize": true,
        "losses": ["squared", "huber"],
        "replications": 3,
        "base_seed": 7
    }"#;

    fn key_of(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn product_expansion() {
        let cfgs = parse_config_str(BASE).unwrap();
        assert_eq!(cfgs.len(), 4);
        assert!(cfgs.iter().enumerate().all(|(i, c)| c.config_id == i));
        assert_eq!(cfgs[0].loss, LossSpec::Squared);
        assert_eq!(cfgs[1].loss, LossSpec::huber());
        assert_eq!(cfgs[2].contamination.r, 0.25);
        assert_eq!(cfgs[0].optimizer.stepmax, 100_000);
        assert_eq!(cfgs[0].replications, 3);
    }

    #[test]
    fn out_of_range_radius() {
        let text = BASE.replace("[0.1, 0.25]", "1.5");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "contamination.r");
    }

    #[test]
    fn unknown_and_missing_keys() {
        let text = BASE.replace("\"base_seed\": 7", "\"base_seed\": 7, \"colour\": 1");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "colour");
        let text = BASE.replace("\"replications\": 3,", "");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "replications");
        let text = BASE.replace("\"snr\": 2, ", "");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "data.snr");
        let text = BASE.replace("\"squared\"", "\"lms\"");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "losses[0]");
        assert_eq!(key_of(parse_config_str("[1]").unwrap_err()), "<document>");
    }

    #[test]
    fn optimizer_overrides() {
        let text = BASE.replace(
            "\"base_seed\": 7",
            "\"base_seed\": 7, \"optimizer\": {\"rule\": \"sign-gd\", \"stepmax\": 50, \"diverge_norm\": 1e4}",
        );
        let cfgs = parse_config_str(&text).unwrap();
        assert_eq!(cfgs[0].optimizer.rule, UpdateRule::SignGd);
        assert_eq!(cfgs[0].optimizer.stepmax, 50);
        assert_eq!(cfgs[0].diverge_norm, 1e4);
        let bad = BASE.replace("\"base_seed\": 7", "\"base_seed\": 7, \"optimizer\": {\"eta_plus\": 0.5}");
        assert_eq!(key_of(parse_config_str(&bad).unwrap_err()), "optimizer");
    }

    #[test]
    fn clean_only_needs_no_radius() {
        let text =
            BASE.replace("{\"kind\": \"y-convex\", \"r\": [0.1, 0.25], \"mu_out\": 100}", "{\"kind\": \"none\"}");
        let cfgs = parse_config_str(&text).unwrap();
        assert_eq!(cfgs.len(), 2);
    }

    #[test]
    fn full_grid_size() {
        let full = SweepConfig::full_study(100, 1);
        assert_eq!(full.num_configs(), 15552);
        let reparsed = parse_sweep_config(&full.to_json().to_string()).unwrap();
        assert_eq!(reparsed, full);
        assert_eq!(reparsed.expand().len(), 15552);
    }
}
