//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured quantities (run with `-- --nocapture` to see them all).
//!
//! Run as `cargo test --test acceptance`.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pairlab::condmodel::{
    grad_loss, hessian_loss, xent_loss, ModelParams, OptionTrait, Polarity, Scenario,
};
use pairlab::datagen::{build_paired_dataset, GenConfig};
use pairlab::evalkit::{self, GoldSets};
use pairlab::harness::{
    run_bounds, run_customize, run_dataset_size, run_pair_vs_single, run_taylor, Experiment,
    ExperimentConfig, RunOutcome,
};
use pairlab::prefspace::{
    embed_descriptor, greedy_eps_net, hoeffding_bound, hoeffding_violation_mc, make_pair,
    pair_segment_radius, PreferenceDescriptor,
};

fn report(criterion: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(passed, "{criterion}: {detail}");
}

fn default_outcome(experiment: Experiment, dir: &tempfile::TempDir) -> RunOutcome {
    let cfg = ExperimentConfig::for_experiment(experiment, dir.path().to_path_buf());
    pairlab::harness::run_experiment(&cfg).expect("experiment runs")
}

fn random_instance(seed: u64, m: usize) -> (ModelParams, Scenario, Vec<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let w = Array2::from_shape_vec((m, m), draw(m * m)).unwrap();
    let n_opts = 2 + (seed as usize % 4);
    let options = (0..n_opts)
        .map(|i| {
            OptionTrait::new(
                draw(m),
                if i % 2 == 0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            )
            .unwrap()
        })
        .collect();
    let x = Scenario::new(seed, 0, options).unwrap();
    let p = draw(m);
    let y = rng.gen_range(0..n_opts);
    (ModelParams::new(w).unwrap(), x, p, y)
}

/// Criterion 1 — analytic gradient and Hessian match finite differences on
/// 100 random instances, within 1e-6 / 1e-5 relative, in under 10 s.
#[test]
fn a01_gradient_and_hessian_match_finite_differences() {
    let start = Instant::now();
    let m = 8;
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    for seed in 0..100u64 {
        let (model, x, p, y) = random_instance(seed, m);

        let grad = grad_loss(&model, &x, &p, y).unwrap();
        let mut fd = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let mut hi = model.clone();
                hi.w[[i, j]] += h;
                let mut lo = model.clone();
                lo.w[[i, j]] -= h;
                fd[[i, j]] = (xent_loss(&hi, &x, &p, y).unwrap()
                    - xent_loss(&lo, &x, &p, y).unwrap())
                    / (2.0 * h);
            }
        }
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (&grad - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(diff / gnorm.max(1.0));

        let hess = hessian_loss(&model, &x, &p, y).unwrap();
        let dim = m * m;
        let hnorm = hess.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut hd = 0.0f64;
        for k in 0..dim {
            let (i, j) = (k / m, k % m);
            let mut hi = model.clone();
            hi.w[[i, j]] += h;
            let mut lo = model.clone();
            lo.w[[i, j]] -= h;
            let ghi = grad_loss(&hi, &x, &p, y).unwrap();
            let glo = grad_loss(&lo, &x, &p, y).unwrap();
            let mut col_sq = 0.0;
            for a in 0..dim {
                let fd_entry = (ghi[[a / m, a % m]] - glo[[a / m, a % m]]) / (2.0 * h);
                let d = hess[[a, k]] - fd_entry;
                col_sq += d * d;
            }
            hd += col_sq;
        }
        worst_hess = worst_hess.max(hd.sqrt() / hnorm.max(1.0));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 1 gradient/hessian finite differences",
        worst_grad <= 1e-6 && worst_hess <= 1e-5 && elapsed < 10.0,
        &format!(
            "worst grad rel err {worst_grad:.2e} (limit 1e-6), worst hessian rel err {worst_hess:.2e} (limit 1e-5), {elapsed:.2}s (limit 10s)"
        ),
    );
}

/// Criterion 2 — the async-vs-sync residual decays as O(η³): log-log slope
/// ≥ 2.9 on at least 9 of 10 seeds, in under 30 s.
#[test]
fn a02_update_rule_residual_is_third_order() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::for_experiment(Experiment::Taylor, dir.path().to_path_buf());
    assert_eq!(cfg.seeds.len(), 10);
    assert_eq!(cfg.taylor.etas, vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3]);
    let outcome = run_taylor(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let check = &outcome.checks[0];
    report(
        "criterion 2 second-order coupling residual",
        check.passed && elapsed < 30.0,
        &format!("{} in {elapsed:.2}s (limit 30s)", check.detail),
    );
}

/// Criterion 3 — Monte-Carlo one-sided violation frequencies stay below
/// exp(-2nt²) + 3·sqrt(exp(-2nt²)/trials) on the full (n, t) grid, under 60 s.
#[test]
fn a03_hoeffding_violation_grid() {
    let start = Instant::now();
    let trials = 100_000;
    let mut all_ok = true;
    let mut lines = Vec::new();
    for (i, &n) in [20usize, 100, 500].iter().enumerate() {
        for (j, &t) in [0.05f64, 0.1, 0.2].iter().enumerate() {
            let bound = hoeffding_bound(n, t).unwrap();
            let freq = hoeffding_violation_mc(n, t, trials, 0.5, 97 + (i * 3 + j) as u64).unwrap();
            let tol = bound + 3.0 * (bound / trials as f64).sqrt();
            all_ok &= freq <= tol;
            lines.push(format!("n={n} t={t}: freq {freq:.2e} <= {tol:.2e}"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 3 hoeffding violation grid",
        all_ok && elapsed < 60.0,
        &format!("{}; {elapsed:.2}s (limit 60s)", lines.join("; ")),
    );
}

/// Criterion 4 — the anchored uniform risk bound dominates the sampled
/// supremum of the exact population risk in at least 90 of 100 repetitions
/// (d=2, K=8, m=8, n=200, δ=0.1), in under 2 minutes.
#[test]
fn a04_uniform_risk_bound_end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::for_experiment(Experiment::Bounds, dir.path().to_path_buf());
    assert_eq!(cfg.gen.num_pairs * 2, 8);
    assert_eq!(cfg.gen.d, 2);
    assert_eq!(cfg.gen.m, 8);
    assert_eq!(cfg.bounds.n, 200);
    assert_eq!(cfg.bounds.delta, 0.1);
    assert_eq!(cfg.bounds.repetitions, 100);
    assert_eq!(cfg.bounds.num_test_points, 200);
    let outcome = run_bounds(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let holds = &outcome.checks[0];
    let sums = &outcome.checks[1];
    report(
        "criterion 4 uniform risk bound end-to-end",
        holds.passed && sums.passed && elapsed < 120.0,
        &format!(
            "{}; {}; {elapsed:.2}s (limit 120s)",
            holds.detail, sums.detail
        ),
    );
}

/// Criterion 5 — segment geometry: the worst-case distance from a conflict
/// segment to its endpoints never exceeds half the separation, and
/// endpoint-pair anchor sets cover their segments at ε = half the max
/// separation while equally sized independent anchor sets fail.
#[test]
fn a05_pair_segment_geometry_and_coverage() {
    // Exact radius assertion over 100 random pairs.
    for pid in 0..100u32 {
        let pos = PreferenceDescriptor::new(format!("g{pid}_pos"), pid, Polarity::Positive);
        let neg = PreferenceDescriptor::new(format!("g{pid}_neg"), pid, Polarity::Negative);
        let radius = 0.05 + 0.01 * pid as f64;
        let pair = make_pair(&pos, &neg, 1234 + pid as u64, 8, radius).unwrap();
        let sr = pair_segment_radius(&pair, 101).unwrap();
        assert!(
            sr.radius <= 0.5 * pair.separation() + sr.grid_slack,
            "pair {pid}: radius {} vs half separation {}",
            sr.radius,
            0.5 * pair.separation()
        );
    }

    // Coverage comparison, 100 trials of 4 pairs in R^8.
    let m = 8;
    let num_pairs = 4;
    let segment_grid = 101;
    let mut combined = 0usize;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + trial);
        let seed = 90_000 + trial;
        let mut pairs = Vec::new();
        for pid in 0..num_pairs {
            let pos = PreferenceDescriptor::new(format!("t{pid}_pos"), pid, Polarity::Positive);
            let neg = PreferenceDescriptor::new(format!("t{pid}_neg"), pid, Polarity::Negative);
            let radius = rng.gen_range(0.3..0.5);
            pairs.push(make_pair(&pos, &neg, seed, m, radius).unwrap());
        }
        let max_sep = pairs
            .iter()
            .map(|p| p.separation())
            .fold(f64::NEG_INFINITY, f64::max);
        let eps = 0.5 * max_sep;

        let endpoint_cloud: Vec<Vec<f64>> = pairs
            .iter()
            .flat_map(|p| [p.pos.vector.clone(), p.neg.vector.clone()])
            .collect();
        let pair_net = greedy_eps_net(&endpoint_cloud, eps).unwrap();

        // Independent anchors with the same budget: one isolated embedding
        // per extra pair id, no antipodal partner among the anchors.
        let singles: Vec<Vec<f64>> = (0..endpoint_cloud.len() as u32)
            .map(|k| {
                let d = PreferenceDescriptor::new(format!("s{k}"), 100 + k, Polarity::Positive);
                embed_descriptor(&d, seed, m).unwrap().vector
            })
            .collect();
        let single_net = greedy_eps_net(&singles, eps).unwrap();

        let covers = |net: &pairlab::prefspace::EpsNet| -> bool {
            pairs.iter().all(|pair| {
                (0..segment_grid).all(|i| {
                    let t = i as f64 / (segment_grid - 1) as f64;
                    let q: Vec<f64> = pair
                        .neg
                        .vector
                        .iter()
                        .zip(&pair.pos.vector)
                        .map(|(a, b)| a + t * (b - a))
                        .collect();
                    net.nearest_distance(&q) <= eps
                })
            })
        };
        if covers(&pair_net) && !covers(&single_net) {
            combined += 1;
        }
    }
    report(
        "criterion 5 pair segment geometry and coverage",
        combined >= 80,
        &format!(
            "radius bound exact on 100 pairs; pair net covered while single net failed in {combined}/100 trials (need 80)"
        ),
    );
}

/// Criterion 6 — paired training beats the better single-side model by at
/// least 0.05 mean Acc-One while conceding at most 0.05 on each side's own
/// specialty, on 1000 training pairs and 5 seeds, in under 3 minutes.
#[test]
fn a06_pair_vs_single_trend() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::for_experiment(Experiment::PairVsSingle, dir.path().to_path_buf());
    assert_eq!(cfg.gen.num_scenarios * 8 / 10, 1000);
    assert_eq!(cfg.seeds.len(), 5);
    let outcome = run_pair_vs_single(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let passed = outcome.all_passed() && elapsed < 180.0;
    let details: Vec<String> = outcome
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} ({})",
                c.detail,
                if c.passed { "ok" } else { "violated" }
            )
        })
        .collect();
    report(
        "criterion 6 pair-vs-single trend",
        passed,
        &format!("{}; {elapsed:.2}s (limit 180s)", details.join("; ")),
    );
}

/// Criterion 7 — the balanced (1,1) weight cell attains the best mean
/// select-all accuracy within one pooled standard deviation, and zeroing a
/// side costs that side at least 0.1 pick-the-best accuracy.
#[test]
fn a07_lambda_grid_trend() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = default_outcome(Experiment::LambdaGrid, &dir);
    let details: Vec<String> = outcome
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} ({})",
                c.detail,
                if c.passed { "ok" } else { "violated" }
            )
        })
        .collect();
    report(
        "criterion 7 lambda grid trend",
        outcome.all_passed(),
        &details.join("; "),
    );
}

/// Criterion 8 — accuracy is non-decreasing (within 0.02) from 200 to 1000
/// training examples and the 1000→2000 gain does not exceed the 200→1000 gain.
#[test]
fn a08_dataset_size_trend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::for_experiment(Experiment::DatasetSize, dir.path().to_path_buf());
    assert_eq!(cfg.sizes, vec![100, 200, 400, 650, 1000, 2000]);
    let outcome = run_dataset_size(&cfg).unwrap();
    let details: Vec<String> = outcome
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} ({})",
                c.detail,
                if c.passed { "ok" } else { "violated" }
            )
        })
        .collect();
    report(
        "criterion 8 dataset size trend",
        outcome.all_passed(),
        &details.join("; "),
    );
}

/// Criterion 9 — Acc-One and Acc-All agree exactly with independent
/// brute-force recomputation on 10⁴ scenarios, with all three per-scenario
/// subset-score cases represented.
#[test]
fn a09_metric_oracle_equivalence() {
    let gen = GenConfig {
        num_scenarios: 10_000,
        num_pairs: 2,
        seed: 4242,
        ..GenConfig::default()
    };
    let ds = build_paired_dataset(&gen).unwrap();
    let examples: Vec<_> = ds.all().cloned().collect();
    let scenarios: Vec<Scenario> = examples.iter().map(|ex| ex.x.clone()).collect();
    let gold = GoldSets::from_scenarios(scenarios.iter());

    // A weakly trained model produces a mix of sharp and flat predictions,
    // which exercises every subset-score case.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = Array2::from_shape_vec(
        (gen.m, gen.m),
        (0..gen.m * gen.m)
            .map(|_| 0.35 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .unwrap();
    let model = ModelParams::new(w).unwrap();

    let mut ones = Vec::with_capacity(scenarios.len());
    let mut alls = Vec::with_capacity(scenarios.len());
    for ex in &examples {
        ones.push(evalkit::predict_one(&model, &ex.x, &ex.p_pos.vector).unwrap());
        alls.push(evalkit::predict_all(&model, &ex.x, &ex.p_pos.vector).unwrap());
    }
    let acc_one = evalkit::acc_one(&ones, &gold, Polarity::Positive).unwrap();
    let acc_all = evalkit::acc_all(&alls, &gold, Polarity::Positive).unwrap();

    // Brute-force recomputation straight from the option labels.
    let mut one_hits = 0usize;
    let mut all_sum = 0.0f64;
    let mut case_counts = [0usize; 3];
    for (s, ex) in examples.iter().enumerate() {
        let is_pos: Vec<bool> =
            ex.x.options
                .iter()
                .map(|o| o.label_side == Polarity::Positive)
                .collect();
        if is_pos[ones[s]] {
            one_hits += 1;
        }
        let mut sel = vec![false; is_pos.len()];
        for &i in &alls[s] {
            sel[i] = true;
        }
        let exact = sel.iter().zip(&is_pos).all(|(a, b)| a == b);
        let wrong_overlap = sel.iter().zip(&is_pos).any(|(a, b)| *a && !b);
        let a_s = if exact {
            case_counts[0] += 1;
            1.0
        } else if wrong_overlap {
            case_counts[1] += 1;
            0.0
        } else {
            case_counts[2] += 1;
            let inter = sel.iter().zip(&is_pos).filter(|(a, b)| **a && **b).count();
            let gold_size = is_pos.iter().filter(|b| **b).count();
            inter as f64 / gold_size as f64
        };
        all_sum += a_s;
        // Per-scenario exact agreement, via a single-scenario gold view.
        let single_gold = GoldSets {
            per_scenario: vec![gold.per_scenario[s].clone()],
        };
        let single =
            evalkit::acc_all(&[alls[s].clone()], &single_gold, Polarity::Positive).unwrap();
        assert_eq!(single, a_s, "scenario {s}: per-scenario subset score differs");
        assert!(a_s == 0.0 || (a_s > 0.0 && a_s <= 1.0));
    }
    let bf_one = one_hits as f64 / examples.len() as f64;
    let bf_all = all_sum / examples.len() as f64;

    let exact_match = acc_one == bf_one && acc_all == bf_all;
    let all_cases = case_counts.iter().all(|c| *c > 0);
    report(
        "criterion 9 metric oracle equivalence",
        exact_match && all_cases,
        &format!(
            "acc_one {acc_one} == {bf_one}, acc_all {acc_all} == {bf_all}, case counts {case_counts:?} over {} scenarios",
            examples.len()
        ),
    );
}

/// Criterion 10 — three-event histories recover the user's preference sign on
/// at least 90% of 500 users, and conditioning on the inferred preference
/// beats the center baseline by at least 0.1 mean Acc-One.
#[test]
fn a10_rapid_customization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::for_experiment(Experiment::Customize, dir.path().to_path_buf());
    assert_eq!(cfg.customize.k, 3);
    assert_eq!(cfg.customize.num_users, 500);
    assert_eq!(cfg.customize.min_abs_z, 0.5);
    assert_eq!(cfg.gen.d, 1);
    let outcome = run_customize(&cfg).unwrap();
    let details: Vec<String> = outcome
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} ({})",
                c.detail,
                if c.passed { "ok" } else { "violated" }
            )
        })
        .collect();
    report(
        "criterion 10 rapid customization",
        outcome.all_passed(),
        &details.join("; "),
    );
}

/// Criterion 11 — rerunning an experiment with an identical config reproduces
/// byte-identical outputs (digest match across independent runs).
#[test]
fn a11_reruns_reproduce_digests() {
    let mut all_ok = true;
    let mut details = Vec::new();
    for experiment in [
        Experiment::Taylor,
        Experiment::Customize,
        Experiment::PairVsSingle,
    ] {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = ExperimentConfig::for_experiment(experiment, dir_a.path().to_path_buf());
        let mut cfg_b = ExperimentConfig::for_experiment(experiment, dir_b.path().to_path_buf());
        if experiment == Experiment::PairVsSingle {
            // Small but nontrivial rerun.
            cfg_a.gen.num_scenarios = 120;
            cfg_b.gen.num_scenarios = 120;
            cfg_a.seeds = vec![1, 2];
            cfg_b.seeds = vec![1, 2];
        }
        let out_a = pairlab::harness::run_experiment(&cfg_a).unwrap();
        let out_b = pairlab::harness::run_experiment(&cfg_b).unwrap();
        let digests_match = out_a.outputs == out_b.outputs;
        // Byte-level comparison of every listed output.
        let bytes_match = out_a.outputs.iter().all(|o| {
            std::fs::read(dir_a.path().join(&o.path)).unwrap()
                == std::fs::read(dir_b.path().join(&o.path)).unwrap()
        });
        all_ok &= digests_match && bytes_match;
        details.push(format!(
            "{}: digests {} bytes {}",
            cfg_a.experiment.name(),
            if digests_match { "match" } else { "differ" },
            if bytes_match { "match" } else { "differ" }
        ));
    }
    report(
        "criterion 11 rerun determinism",
        all_ok,
        &details.join("; "),
    );
}
