//! Seeded Monte-Carlo checks on synthetic data and end-to-end grid behaviour.

use std::path::{Path, PathBuf};

use databias::data::{make_synthetic, SplitFractions, SyntheticSpec, PROXY_COLUMN};
use databias::detect::{build_profile, ProfileConfig};
use databias::experiment::{
    run_experiment, BiasAxis, DatasetRef, ExperimentConfig, MetricName, Protocol, RunOptions,
};
use databias::inject::{drop_strongest_proxy_columns, flip_labels};
use databias::model::TrainConfig;

fn spec(n: usize, proxy_corr: f64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        prevalence_a: 0.5,
        base_rate_a: 0.5,
        base_rate_d: 0.5,
        proxy_corr,
        noise_dim: 2,
    }
}

fn grid(spec: SyntheticSpec, axis: BiasAxis, levels: &[f64], metrics: &[MetricName], reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetRef::Synthetic { spec, seed: 0 },
        sensitive_name: "s".into(),
        model: TrainConfig::default(),
        bias_axis: axis,
        levels: levels.to_vec(),
        second_axis: None,
        second_levels: Vec::new(),
        protocol: Protocol::Fairness,
        repetitions: reps,
        base_seed: 0,
        split_fractions: SplitFractions::EIGHTY_TEN_TEN,
        metrics: metrics.to_vec(),
        threshold: 0.5,
        base_dir: PathBuf::from("."),
    }
}

#[test]
fn balanced_synthetic_data_has_no_representation_gap() {
    // sd(RD) = 0.01 at n = 10000, so ±0.03 is a 3-sigma band per draw
    let outside: Vec<f64> = (0..20)
        .map(|seed| {
            let ds = make_synthetic(&spec(10_000, 0.5), seed).unwrap();
            databias::detect::representation_difference(ds.s())
        })
        .filter(|rd| rd.abs() > 0.03)
        .collect();
    assert!(outside.len() <= 1, "{outside:?}");
}

#[test]
fn unbiased_synthetic_profile_is_neutral() {
    let mut saucs = Vec::new();
    for seed in 0..5 {
        let ds = make_synthetic(&spec(4000, 0.0), seed).unwrap();
        let p = build_profile(&ds, "neutral", &ProfileConfig::default(), seed).unwrap();
        assert!(p.rd.abs() <= 0.05, "rd {}", p.rd);
        assert!(p.sd.abs() <= 0.05, "sd {}", p.sd);
        saucs.push(p.sauc);
    }
    let mean = saucs.iter().sum::<f64>() / saucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "sauc {saucs:?}");
}

#[test]
fn strong_injected_proxy_is_dropped_first() {
    let mut hits = 0;
    for seed in 0..100 {
        let ds = make_synthetic(&spec(500, 0.9), seed).unwrap();
        let (_, report) = drop_strongest_proxy_columns(&ds, 1).unwrap();
        hits += usize::from(report.columns_dropped == [PROXY_COLUMN]);
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn label_flips_raise_separation_difference() {
    let mut rises = 0;
    for seed in 0..10 {
        let ds = make_synthetic(&spec(3000, 0.5), seed).unwrap();
        let all = ds.all_indices();
        let (flipped, _) = flip_labels(&ds, &all, 0.8, seed).unwrap();
        let config = ProfileConfig::default();
        let clean = build_profile(&ds, "clean", &config, seed).unwrap();
        let biased = build_profile(&flipped, "flipped", &config, seed).unwrap();
        rises += usize::from(biased.sd > clean.sd);
    }
    assert!(rises >= 9, "{rises}/10");
}

#[test]
fn joint_grid_with_one_second_level_matches_single_axis() {
    let s = SyntheticSpec {
        base_rate_a: 0.6,
        base_rate_d: 0.4,
        ..spec(1500, 0.5)
    };
    let ds = make_synthetic(&s, 0).unwrap();
    let metrics = [MetricName::Eo, MetricName::Ba];
    let single = grid(s.clone(), BiasAxis::Underrepresentation, &[0.0, 0.5], &metrics, 3);
    let mut joint = single.clone();
    joint.second_axis = Some(BiasAxis::LabelFlip);
    joint.second_levels = vec![0.0];
    let a = run_experiment(&single, &ds, RunOptions::default()).unwrap();
    let b = run_experiment(&joint, &ds, RunOptions::default()).unwrap();
    for u in [0.0, 0.5] {
        for m in metrics {
            assert_eq!(a.cell(&[u], m).unwrap().values, b.cell(&[u, 0.0], m).unwrap().values);
        }
    }
}

#[test]
fn dropping_the_proxy_flattens_the_flip_slope() {
    // Without its proxy the model cannot tell the groups apart, so label
    // flips in group d leak into both groups and EO moves less.
    let s = SyntheticSpec {
        base_rate_a: 0.6,
        base_rate_d: 0.6,
        ..spec(4000, 0.95)
    };
    let ds = make_synthetic(&s, 0).unwrap();
    let mut c = grid(s, BiasAxis::ProxyDrop, &[0.0, 1.0], &[MetricName::Eo], 4);
    c.second_axis = Some(BiasAxis::LabelFlip);
    c.second_levels = vec![0.0, 0.8];
    let r = run_experiment(&c, &ds, RunOptions::default()).unwrap();
    let slope = |k: f64| r.mean(&[k, 0.8], MetricName::Eo).unwrap() - r.mean(&[k, 0.0], MetricName::Eo).unwrap();
    assert!(slope(1.0) < slope(0.0), "kept {} dropped {}", slope(0.0), slope(1.0));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            config.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 4);
}

