mod oracles;

use ndarray::{array, Array2};
use oracles::{enumerate_linear, random_gamma, random_points, random_simplex};
use proptest::prelude::*;
use rand::Rng;
use retarget_core::nuisance::oracle_nuisance;
use retarget_core::policy::FnPolicy;
use retarget_core::policyopt::TIE_TOLERANCE;
use retarget_core::scores::{
    apply_retargeting, build_scores, estimate_value, normalize, retargeting_multipliers, Padding, RetargetMode,
    ScoreMatrix, ScoreMethod,
};
use retarget_core::seed::{stream, Stream};
use retarget_core::simulate::{draw_test, draw_training, mean_and_se, DgpConfig};
use retarget_core::{LinearPolicy, NuisanceModel, NuisanceTable, ObservationSet};

fn fixed_policy() -> LinearPolicy {
    LinearPolicy::new(vec![0.0, 0.1], array![[0.0, 0.0], [0.8, -0.5]]).unwrap()
}

/// True value of `policy` on the stationary test distribution, with its Monte Carlo SE.
fn true_value(policy: &LinearPolicy, size: usize, seed: u64) -> (f64, f64) {
    let test = draw_test(1.0, 1.0, size, seed).unwrap();
    let vals: Vec<f64> = test
        .covariates
        .outer_iter()
        .zip(test.outcome_mean.outer_iter())
        .map(|(x, mu)| mu[policy.action(x.as_slice().unwrap())])
        .collect();
    mean_and_se(&vals)
}

/// Estimates of `policy`'s value from `reps` oracle-nuisance training draws of size `n`.
fn replicate_estimates(policy: &LinearPolicy, method: ScoreMethod, reps: usize, n: usize, beta: f64) -> Vec<f64> {
    (0..reps as u64)
        .map(|r| {
            let dgp = DgpConfig::new(1.0, 1.0, beta, n, 1000 + r).unwrap();
            let data = draw_training(&dgp).unwrap();
            let table = oracle_nuisance(&dgp).tabulate(data.covariates()).unwrap();
            let s = build_scores(&data, &table, method).unwrap();
            estimate_value(&s, policy, &data).unwrap()
        })
        .collect()
}

#[test]
fn dr_estimate_is_unbiased_with_true_nuisances() {
    let policy = fixed_policy();
    let (truth, truth_se) = true_value(&policy, 100_000, 1);
    let (mean, se) = mean_and_se(&replicate_estimates(&policy, ScoreMethod::Dr, 1000, 500, 1.0));
    let z = (mean - truth) / (se * se + truth_se * truth_se).sqrt();
    assert!(z.abs() < 3.0, "mean {mean}, truth {truth}, z {z}");
}

#[test]
fn ipw_dr_and_direct_agree_on_average() {
    let policy = fixed_policy();
    let reps = 2000;
    let ipw = mean_and_se(&replicate_estimates(&policy, ScoreMethod::Ipw, reps, 200, 1.0));
    let dr = mean_and_se(&replicate_estimates(&policy, ScoreMethod::Dr, reps, 200, 1.0));
    let dm = mean_and_se(&replicate_estimates(&policy, ScoreMethod::Direct, reps, 200, 1.0));
    for (name, (m, s)) in [("ipw", ipw), ("dr", dr)] {
        let z = (m - dm.0) / (s * s + dm.1 * dm.1).sqrt();
        assert!(z.abs() < 3.0, "{name}: {m} vs direct {}, z {z}", dm.0);
    }
}

#[test]
fn ipw_value_of_the_logged_actions() {
    let dgp = DgpConfig::new(1.0, 1.0, 2.0, 300, 5).unwrap();
    let data = draw_training(&dgp).unwrap();
    let table = oracle_nuisance(&dgp).tabulate(data.covariates()).unwrap();
    let s = build_scores(&data, &table, ScoreMethod::Ipw).unwrap();
    let xs = data.covariates().clone();
    let acts = data.actions().to_vec();
    let logged = FnPolicy::new(2, move |x: &[f64], out: &mut [f64]| {
        let i = xs.outer_iter().position(|r| r[0] == x[0] && r[1] == x[1]).unwrap();
        out.fill(0.0);
        out[acts[i]] = 1.0;
    });
    let expected: f64 = (0..data.len())
        .map(|i| data.rewards()[i] / table.propensity()[[i, data.actions()[i]]])
        .sum::<f64>()
        / data.len() as f64;
    assert!((estimate_value(&s, &logged, &data).unwrap() - expected).abs() < 1e-12);
}

fn random_binary_table(rng: &mut Stream, n: usize) -> NuisanceTable {
    let mut phi = Array2::zeros((n, 2));
    for i in 0..n {
        let p = random_simplex(rng, 2, 0.01);
        phi[[i, 0]] = p[0];
        phi[[i, 1]] = p[1];
    }
    NuisanceTable::homoskedastic(phi, Array2::zeros((n, 2))).unwrap()
}

#[test]
fn multi_homoskedastic_is_proportional_to_binary_for_two_actions() {
    let mut rng = stream(6);
    let table = random_binary_table(&mut rng, 100);
    let bin = retargeting_multipliers(&table, RetargetMode::BinaryHomoskedastic).unwrap();
    let multi = retargeting_multipliers(&table, RetargetMode::MultiHomoskedastic).unwrap();
    for (b, m) in bin.iter().zip(&multi) {
        assert!((b / m - 4.0).abs() < 1e-12);
    }
}

#[test]
fn padding_runs_from_none_to_full() {
    let mut rng = stream(7);
    let table = random_binary_table(&mut rng, 50);
    let none = retargeting_multipliers(&table, RetargetMode::BiasRegularized(Padding::C(0.0))).unwrap();
    assert!(none.iter().all(|&w| w == 1.0));
    let full = retargeting_multipliers(&table, RetargetMode::BinaryHomoskedastic).unwrap();
    let c = 1e9;
    let big = retargeting_multipliers(&table, RetargetMode::BiasRegularized(Padding::C(c))).unwrap();
    for (b, f) in big.iter().zip(&full) {
        assert!((b * c / f - 1.0).abs() < 1e-8);
    }
}

#[test]
fn balanced_propensity_leaves_normalized_scores_unchanged() {
    let mut rng = stream(8);
    let n = 40;
    let xs = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let data = ObservationSet::new(xs, actions, rewards, 2).unwrap();
    let table = NuisanceTable::homoskedastic(Array2::from_elem((n, 2), 0.5), Array2::zeros((n, 2))).unwrap();
    for method in [ScoreMethod::Ipw, ScoreMethod::Dr] {
        let plain = normalize(&build_scores(&data, &table, method).unwrap()).unwrap();
        let rt = apply_retargeting(
            &build_scores(&data, &table, method).unwrap(),
            &table,
            RetargetMode::BinaryHomoskedastic,
        )
        .unwrap();
        let rt = normalize(&rt).unwrap();
        for (a, b) in plain.gamma().iter().zip(rt.gamma()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

fn argmax_sets(gamma: &Array2<f64>, xs: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let range: f64 = gamma
        .outer_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    let mut sets = enumerate_linear(gamma, xs, TIE_TOLERANCE * range).argmax;
    sets.sort();
    sets
}

#[test]
fn normalization_and_centering_keep_the_argmax_set() {
    let mut rng = stream(9);
    for _ in 0..20 {
        let (n, m) = (7, rng.random_range(2..4));
        let xs = random_points(&mut rng, n, 2);
        let gamma = random_gamma(&mut rng, n, m);
        let base = argmax_sets(&gamma, &xs);
        let scaled = normalize(&ScoreMatrix::from_gamma(gamma.clone(), ScoreMethod::Direct).unwrap()).unwrap();
        assert_eq!(argmax_sets(scaled.gamma(), &xs), base);
        let mut centered = gamma.clone();
        for mut row in centered.outer_iter_mut() {
            let shift = rng.random_range(-5.0..5.0);
            row.mapv_inplace(|v| v + shift);
        }
        assert_eq!(argmax_sets(&centered, &xs), base);
    }
}

proptest! {
    #[test]
    fn retargeting_scales_whole_rows(seed in 0u64..10_000, n in 1usize..30, m in 2usize..5) {
        let mut rng = stream(seed);
        let gamma = random_gamma(&mut rng, n, m);
        let mut phi = Array2::zeros((n, m));
        for i in 0..n {
            for (a, p) in random_simplex(&mut rng, m, 0.01).into_iter().enumerate() {
                phi[[i, a]] = p;
            }
        }
        let table = NuisanceTable::homoskedastic(phi, Array2::zeros((n, m))).unwrap();
        let s = ScoreMatrix::from_gamma(gamma.clone(), ScoreMethod::Dr).unwrap();
        let rt = apply_retargeting(&s, &table, RetargetMode::MultiHomoskedastic).unwrap();
        let w = retargeting_multipliers(&table, RetargetMode::MultiHomoskedastic).unwrap();
        prop_assert_eq!(rt.multipliers(), w.as_slice());
        prop_assert!(rt.retargeted());
        for i in 0..n {
            for a in 0..m {
                prop_assert_eq!(rt.gamma()[[i, a]], gamma[[i, a]] * w[i]);
            }
        }
    }
}
