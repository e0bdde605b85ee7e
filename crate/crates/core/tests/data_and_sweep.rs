use proptest::prelude::*;
use robustnn::config::{parse_sweep_config, SweepConfig};
use robustnn::contamination::contaminate;
use robustnn::datagen::{generate_dataset, generate_dataset_with, NoiseScale};
use robustnn::experiment::{clean_data, contaminated_data, run_single, run_sweep, summarize};
use robustnn::seed::rng_from;
use robustnn::{
    ActivationKind, ContaminationKind, ContaminationSpec, DataGenSpec, Depth, ExperimentConfig, LossSpec, Standardizer,
    Structure,
};

fn signal_oracle(structure: Structure, t: f64) -> f64 {
    match structure {
        Structure::Lin => t,
        Structure::Poly => t.abs().max(1e-12).powf(-2.0 / 3.0),
        Structure::Trig if t == 0.0 => 1.0,
        Structure::Trig => t.abs().sin() / t.abs(),
    }
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn snr_calibration() {
    for structure in [Structure::Lin, Structure::Poly, Structure::Trig] {
        for (seed, spec) in DataGenSpec::study_grid(structure).iter().enumerate() {
            let (tr, te) = generate_dataset(spec, &mut rng_from(seed as u64));
            // Same stream with unit noise: the standard normal draws coincide.
            let (tr1, te1) = generate_dataset_with(spec, NoiseScale::Sd(1.0), &mut rng_from(seed as u64));
            let rows: Vec<&[f64]> = (0..tr.len()).map(|i| tr.row(i)).chain((0..te.len()).map(|i| te.row(i))).collect();
            let f: Vec<f64> = rows
                .iter()
                .map(|r| signal_oracle(structure, r.iter().zip(&tr.beta).map(|(a, b)| a * b).sum()))
                .collect();
            let y: Vec<f64> = tr.y.iter().chain(&te.y).copied().collect();
            let y1: Vec<f64> = tr1.y.iter().chain(&te1.y).copied().collect();
            let (num, den) =
                y.iter().zip(&y1).zip(&f).fold((0.0, 0.0), |(a, b), ((yi, y1i), fi)| {
                    (a + (yi - fi) * (y1i - fi), b + (y1i - fi) * (y1i - fi))
                });
            let sigma = num / den;
            let ratio = variance(&f) / (sigma * sigma);
            assert!((ratio - 2.0).abs() <= 1e-9, "{structure} p={}: ratio {ratio}", spec.p);
        }
    }
}

fn tiny_cfg(kind: ContaminationKind, loss: LossSpec, reps: usize) -> ExperimentConfig {
    let data = DataGenSpec { p: 3, n_train: 40, n_test: 15, mu: 0.0, snr: 2.0, structure: Structure::Lin };
    let mut cfg = ExperimentConfig::new(
        data,
        ContaminationSpec::new(kind, 0.25, 10.0),
        ActivationKind::Logistic,
        loss,
        true,
        Depth::Shallow,
        reps,
        42,
    );
    cfg.optimizer.stepmax = 300;
    cfg
}

#[test]
fn run_single_is_deterministic() {
    for kind in [ContaminationKind::YConvex, ContaminationKind::XyCellwise, ContaminationKind::YIterative] {
        let cfg = tiny_cfg(kind, LossSpec::trimmed(0.25), 2);
        assert_eq!(run_single(&cfg, 1), run_single(&cfg, 1));
        assert_eq!(contaminated_data(&cfg, 0), contaminated_data(&cfg, 0));
    }
}

#[test]
fn non_converged_runs_have_no_test_loss() {
    let mut cfg = tiny_cfg(ContaminationKind::YConvex, LossSpec::Squared, 3);
    cfg.optimizer.stepmax = 2;
    cfg.optimizer.grad_threshold = 1e-300;
    for rec in run_sweep(&[cfg], 1) {
        assert!(!rec.converged);
        assert_eq!(rec.test_loss, None);
        assert!(!rec.test_loss_finite());
        assert_eq!(rec.status_label(), "step-limit");
        assert!(rec.epochs <= 2);
    }
}

#[test]
fn sweep_shape_and_parallel_independence() {
    let mut a = tiny_cfg(ContaminationKind::YConvex, LossSpec::huber(), 3);
    let mut b = tiny_cfg(ContaminationKind::XCasewise, LossSpec::tukey(), 3);
    a.config_id = 0;
    b.config_id = 1;
    let cfgs = [a, b];
    let serial = run_sweep(&cfgs, 1);
    assert_eq!(serial.len(), 6);
    assert_eq!(
        serial.iter().map(|r| (r.config_id, r.rep)).collect::<Vec<_>>(),
        [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    );
    let parallel = run_sweep(&cfgs, 8);
    assert_eq!(serial, parallel);
    assert_eq!(summarize(&serial), summarize(&parallel));
    for rec in &serial {
        assert!(rec.epochs <= cfgs[rec.config_id].optimizer.stepmax);
    }
}

#[test]
fn test_set_shared_and_untouched() {
    let cfgs: Vec<ExperimentConfig> =
        [ContaminationKind::None, ContaminationKind::XyCellwise, ContaminationKind::YIterative]
            .into_iter()
            .zip(LossSpec::study_losses())
            .enumerate()
            .map(|(i, (k, l))| {
                let mut c = tiny_cfg(k, l, 2);
                c.config_id = i;
                c
            })
            .collect();
    for rec in run_sweep(&cfgs, 1) {
        let (_, test) = clean_data(&cfgs[rec.config_id], rec.rep);
        let (_, regenerated) = generate_dataset(
            &cfgs[0].data,
            &mut rng_from(robustnn::seed::substream(cfgs[0].run_seed(rec.rep), "data")),
        );
        assert_eq!(rec.test_fingerprint, test.fingerprint());
        assert_eq!(rec.test_fingerprint, regenerated.fingerprint());
    }
}

#[test]
fn contamination_is_seed_deterministic() {
    let spec = DataGenSpec { p: 4, n_train: 60, n_test: 5, mu: 1.0, snr: 2.0, structure: Structure::Poly };
    let (train, _) = generate_dataset(&spec, &mut rng_from(5));
    for kind in [ContaminationKind::YConvex, ContaminationKind::XCasewise, ContaminationKind::XyCellwise] {
        let c = ContaminationSpec::new(kind, 0.4, 100.0);
        assert_eq!(contaminate(&train, &c, &mut rng_from(8)), contaminate(&train, &c, &mut rng_from(8)));
        assert_ne!(contaminate(&train, &c, &mut rng_from(8)), contaminate(&train, &c, &mut rng_from(9)));
    }
}

fn arb_sweep() -> impl Strategy<Value = SweepConfig> {
    let data = (1usize..60, 1usize..500, 1usize..200, 0.1f64..10.0, -5.0f64..5.0)
        .prop_map(|(p, n_train, n_test, snr, mu)| robustnn::config::DataSize { p, n_train, n_test, snr, mu });
    (
        prop::collection::vec(data, 1..3),
        prop::sample::subsequence(vec![Structure::Lin, Structure::Poly, Structure::Trig], 1..=3),
        prop::sample::subsequence(
            vec![
                ContaminationKind::YConvex,
                ContaminationKind::XCasewise,
                ContaminationKind::XyCellwise,
                ContaminationKind::YIterative,
            ],
            1..=4,
        ),
        prop::collection::vec(0.0f64..=1.0, 1..4),
        prop::collection::vec(-1e4f64..1e4, 1..4),
        prop::sample::subsequence(LossSpec::study_losses().to_vec(), 1..=6),
        (1usize..200, any::<u64>(), prop::option::of(1usize..1_000_000), prop::option::of(1e-3f64..1.0)),
        (
            prop::sample::subsequence(vec![true, false], 1..=2),
            prop::sample::subsequence(vec![Depth::Shallow, Depth::Deep], 1..=2),
        ),
    )
        .prop_map(
            |(
                data,
                structures,
                kinds,
                radii,
                mu_outs,
                losses,
                (replications, base_seed, stepmax, eta),
                (standardize, depths),
            )| {
                let mut s = SweepConfig::full_study(replications, base_seed);
                s.data = data;
                s.structures = structures;
                s.kinds = kinds;
                s.radii = radii;
                s.mu_outs = mu_outs;
                s.losses = losses;
                s.standardize = standardize;
                s.depths = depths;
                s.activations = vec![ActivationKind::Softplus];
                s.optimizer.stepmax = stepmax;
                s.optimizer.eta = eta;
                s
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_emit_parse_roundtrip(sweep in arb_sweep()) {
        let text = serde_json::to_string_pretty(&sweep.to_json()).unwrap();
        let parsed = parse_sweep_config(&text).unwrap();
        prop_assert_eq!(&parsed, &sweep);
        prop_assert_eq!(parsed.expand(), sweep.expand());
    }

    #[test]
    fn standardizer_roundtrip(y in prop::collection::vec(-1e6f64..1e6, 2..50)) {
        prop_assume!(y.iter().any(|v| *v != y[0]));
        let t = Standardizer::fit(&y).unwrap();
        let s = t.apply(&y);
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        for (a, b) in t.invert(&s).iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9 * (t.y_max - t.y_min));
        }
    }
}
