//! Seeded simulations of the arm-effect regressions.

use fecund_core::stats::{length_residual_check, ols, treatment_table, DataTable, RegressionSpec, AI_SELECTED};
use fecund_core::synth::{experiment_fixture, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn spec1(table: &DataTable) -> fecund_core::stats::RegressionFit {
    treatment_table(table, false).columns[0].fit.clone().expect("spec 1 estimates")
}

#[test]
fn zero_effect_is_rarely_significant() {
    let cfg = ExperimentConfig { rate_multiplier: 1.0, ..Default::default() };
    let rejections = (0..500u64)
        .filter(|&s| spec1(&experiment_fixture(&cfg, s).unwrap().table).coef(AI_SELECTED).unwrap().t_stat.abs() >= 1.96)
        .count();
    assert!(rejections <= 50, "{rejections} of 500 null runs significant");
}

#[test]
fn planted_effect_is_covered() {
    let cfg = ExperimentConfig::default();
    let covered = (0..200u64)
        .filter(|&s| {
            let f = experiment_fixture(&cfg, s).unwrap();
            let (lo, hi) = spec1(&f.table).confidence_interval(AI_SELECTED, 0.95).unwrap();
            lo <= f.planted_effect && f.planted_effect <= hi
        })
        .count();
    assert!(covered >= 186, "planted effect covered in {covered} of 200 runs");
}

#[test]
fn normal_noise_effect_within_own_interval() {
    // True effect 1.3, noise sd 1.4, 48 observations.
    let mut hits = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.4).unwrap();
        let arm: Vec<f64> = (0..48).map(|i| (i >= 14) as u8 as f64).collect();
        let y: Vec<f64> = arm.iter().map(|a| 1.382 + 1.3 * a + noise.sample(&mut rng)).collect();
        let data = DataTable::new().with_column("fecundity", y).unwrap().with_column(AI_SELECTED, arm).unwrap();
        let fit = ols(&data, &RegressionSpec::new("(1)", "fecundity", &[AI_SELECTED])).unwrap();
        let (lo, hi) = fit.confidence_interval(AI_SELECTED, 0.95).unwrap();
        hits += (lo <= 1.3 && 1.3 <= hi) as usize;
    }
    assert!(hits >= 180, "{hits} of 200");
}

#[test]
fn order_controls_barely_move_the_effect() {
    let mut diffs = Vec::new();
    for seed in 0..100u64 {
        let t = treatment_table(&experiment_fixture(&ExperimentConfig::default(), seed).unwrap().table, false);
        let a = t.columns[0].fit.as_ref().unwrap().coef(AI_SELECTED).unwrap().estimate;
        let b = t.columns[2].fit.as_ref().unwrap().coef(AI_SELECTED).unwrap().estimate;
        diffs.push((a - b).abs());
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let within = diffs.iter().filter(|d| **d <= 0.2).count();
    assert!(mean <= 0.2, "mean shift {mean}");
    assert!(within >= 60, "{within} of 100 within 0.2");
}

#[test]
fn independent_density_leaves_stage_two_like_spec_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let ai: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let round: Vec<f64> = (0..n).map(|i| (i % 5 != 0) as u8 as f64).collect();
    let index: Vec<f64> = (0..n).map(|_| rng.random_range(1..60) as f64).collect();
    let length: Vec<f64> = (0..n).map(|_| rng.random_range(500.0..6000.0)).collect();
    let density: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    let y: Vec<f64> = ai.iter().map(|a| 1.4 + 1.3 * a + noise.sample(&mut rng)).collect();
    let data = [
        ("fecundity", y),
        (AI_SELECTED, ai),
        ("round", round),
        ("index", index),
        ("length", length),
        ("ai_density", density),
        ("overlap", vec![0.0; n]),
        ("old_random", vec![0.0; n]),
    ]
    .into_iter()
    .try_fold(DataTable::new(), |t, (k, v)| t.with_column(k, v))
    .unwrap();
    let check = length_residual_check(&data, false).unwrap();
    assert!(check.stage1.r2 < 0.02, "stage-1 R2 {}", check.stage1.r2);
    let spec5 = treatment_table(&data, false).columns[4].fit.clone().unwrap();
    let a = spec5.coef(AI_SELECTED).unwrap().estimate;
    let b = check.stage2.coef(AI_SELECTED).unwrap().estimate;
    assert!((a - b).abs() < 0.05, "{a} vs {b}");
}
