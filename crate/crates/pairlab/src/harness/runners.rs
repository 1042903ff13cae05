//! The individual experiment runners.
//!
//! Each runner generates data, trains whatever models its study needs,
//! evaluates them, writes plot-ready CSV/JSON outputs plus a digest manifest,
//! and reports its trend checks as [`CheckResult`]s.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::condmodel::{ModelParams, Polarity, Scenario};
use crate::customize::{infer_z, UserHistory};
use crate::datagen::{argmax_projection, build_paired_dataset, gen_scenario, GenConfig};
use crate::error::{Error, Result};
use crate::evalkit::{self, GoldSets, MetricReport};
use crate::jsonfmt::{self, fmt_f64};
use crate::prefspace::{
    estimate_lipschitz, greedy_eps_net, manifold_point, uniform_risk_bound, PreferenceManifold,
};
use crate::trainer::{self, train, PairedExample, TrainConfig, TrainMode};
use crate::vecmath::substream_seed;

use super::manifest::OutputWriter;
use super::{CheckResult, Experiment, ExperimentConfig, RunOutcome};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sample_std(a), sample_std(b));
    ((sa * sa + sb * sb) / 2.0).sqrt()
}

fn gen_for_seed(cfg: &ExperimentConfig, seed: u64) -> GenConfig {
    GenConfig {
        seed,
        ..cfg.gen.clone()
    }
}

fn train_cfg(cfg: &ExperimentConfig, seed: u64, mode: TrainMode) -> TrainConfig {
    TrainConfig {
        seed,
        mode,
        ..cfg.train.clone()
    }
}

/// Pooled metrics over examples, each conditioned on its own pair embeddings.
fn eval_examples(model: &ModelParams, examples: &[PairedExample]) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation examples"));
    }
    let gold = GoldSets::from_scenarios(examples.iter().map(|ex| &ex.x));
    let mut ones_pos = Vec::with_capacity(examples.len());
    let mut ones_neg = Vec::with_capacity(examples.len());
    let mut alls_pos = Vec::with_capacity(examples.len());
    let mut alls_neg = Vec::with_capacity(examples.len());
    for ex in examples {
        ones_pos.push(evalkit::predict_one(model, &ex.x, &ex.p_pos.vector)?);
        ones_neg.push(evalkit::predict_one(model, &ex.x, &ex.p_neg.vector)?);
        alls_pos.push(evalkit::predict_all(model, &ex.x, &ex.p_pos.vector)?);
        alls_neg.push(evalkit::predict_all(model, &ex.x, &ex.p_neg.vector)?);
    }
    let acc_one_pos = evalkit::acc_one(&ones_pos, &gold, Polarity::Positive)?;
    let acc_one_neg = evalkit::acc_one(&ones_neg, &gold, Polarity::Negative)?;
    let acc_all_pos = evalkit::acc_all(&alls_pos, &gold, Polarity::Positive)?;
    let acc_all_neg = evalkit::acc_all(&alls_neg, &gold, Polarity::Negative)?;
    Ok(MetricReport {
        acc_one_pos,
        acc_one_neg,
        acc_one_avg: (acc_one_pos + acc_one_neg) / 2.0,
        acc_all_pos,
        acc_all_neg,
        acc_all_avg: (acc_all_pos + acc_all_neg) / 2.0,
        n_scenarios: examples.len(),
    })
}

/// Per-column means over a group of reports; `n` is taken from the first.
fn mean_report(reps: &[MetricReport]) -> MetricReport {
    let pick = |f: fn(&MetricReport) -> f64| -> f64 {
        mean(&reps.iter().map(f).collect::<Vec<f64>>())
    };
    MetricReport {
        acc_one_pos: pick(|r| r.acc_one_pos),
        acc_one_neg: pick(|r| r.acc_one_neg),
        acc_one_avg: pick(|r| r.acc_one_avg),
        acc_all_pos: pick(|r| r.acc_all_pos),
        acc_all_neg: pick(|r| r.acc_all_neg),
        acc_all_avg: pick(|r| r.acc_all_avg),
        n_scenarios: reps[0].n_scenarios,
    }
}

fn metric_cells(rep: &MetricReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        fmt_f64(rep.acc_one_pos),
        fmt_f64(rep.acc_one_neg),
        fmt_f64(rep.acc_one_avg),
        fmt_f64(rep.acc_all_pos),
        fmt_f64(rep.acc_all_neg),
        fmt_f64(rep.acc_all_avg),
        rep.n_scenarios
    )
}

/// Compare the three training regimes on identical data, seed by seed.
pub fn run_pair_vs_single(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    const MODELS: [(&str, TrainMode); 3] = [
        ("single_pos", TrainMode::SinglePos),
        ("single_neg", TrainMode::SingleNeg),
        ("pair_sync", TrainMode::Synchronous),
    ];
    let mut csv = String::from(
        "model,seed,acc_one_pos,acc_one_neg,acc_one_avg,acc_all_pos,acc_all_neg,acc_all_avg,n,acc_one_avg_std,acc_all_avg_std\n",
    );
    let mut per_model: Vec<Vec<MetricReport>> = vec![Vec::new(); MODELS.len()];
    for &seed in &cfg.seeds {
        let gen = gen_for_seed(cfg, seed);
        let ds = build_paired_dataset(&gen)?;
        let init = ModelParams::zeros(gen.m);
        for (slot, (name, mode)) in MODELS.iter().enumerate() {
            let tcfg = train_cfg(cfg, seed, *mode);
            let trace = train(&init, &ds.train, &tcfg)?;
            let rep = eval_examples(&trace.final_model, &ds.test)?;
            csv.push_str(&format!(
                "{name},{seed},{},{},{}\n",
                metric_cells(&rep),
                fmt_f64(0.0),
                fmt_f64(0.0)
            ));
            per_model[slot].push(rep);
        }
    }
    // One aggregate row per model: metric cells are means, std columns carry
    // the across-seed standard deviations of the two headline averages.
    let mut agg: Vec<MetricReport> = Vec::new();
    for (slot, (name, _)) in MODELS.iter().enumerate() {
        let reps = &per_model[slot];
        let pick = |f: fn(&MetricReport) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
        let summary = mean_report(reps);
        csv.push_str(&format!(
            "{name},mean,{},{},{}\n",
            metric_cells(&summary),
            fmt_f64(sample_std(&pick(|r| r.acc_one_avg))),
            fmt_f64(sample_std(&pick(|r| r.acc_all_avg)))
        ));
        agg.push(summary);
    }

    let (sp, sn, pair) = (&agg[0], &agg[1], &agg[2]);
    let best_single = sp.acc_one_avg.max(sn.acc_one_avg);
    let mut checks = vec![
        CheckResult::new(
            "pair_beats_best_single_by_margin",
            pair.acc_one_avg >= best_single + 0.05,
            format!(
                "pair acc_one_avg {:.4} vs best single {:.4} (margin 0.05)",
                pair.acc_one_avg, best_single
            ),
        ),
        CheckResult::new(
            "single_pos_own_side_edge_small",
            sp.acc_one_pos - pair.acc_one_pos <= 0.05,
            format!(
                "single_pos own-side edge {:.4} (limit 0.05)",
                sp.acc_one_pos - pair.acc_one_pos
            ),
        ),
        CheckResult::new(
            "single_neg_own_side_edge_small",
            sn.acc_one_neg - pair.acc_one_neg <= 0.05,
            format!(
                "single_neg own-side edge {:.4} (limit 0.05)",
                sn.acc_one_neg - pair.acc_one_neg
            ),
        ),
    ];
    let expected_rows = MODELS.len() * cfg.seeds.len() + MODELS.len();
    let actual_rows = csv.lines().count() - 1;
    checks.push(CheckResult::new(
        "row_count_layout",
        actual_rows == expected_rows,
        format!("{actual_rows} data rows, expected {expected_rows}"),
    ));

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("pair_vs_single.csv", csv.as_bytes())?;
    let (manifest_path, outputs) = writer.finalize("pair_vs_single", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::PairVsSingle,
        outputs,
        manifest_path,
        checks,
    })
}

/// Sweep the loss-weight grid {0, 0.25, 0.5, 1.0}².
pub fn run_lambda_grid(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    const GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];
    // Datasets are shared across cells: one per seed.
    let mut datasets = Vec::new();
    for &seed in &cfg.seeds {
        datasets.push((seed, build_paired_dataset(&gen_for_seed(cfg, seed))?));
    }
    let init = ModelParams::zeros(cfg.gen.m);
    let mut csv = String::from(
        "lambda_pos,lambda_neg,seed,acc_one_pos,acc_one_neg,acc_one_avg,acc_all_pos,acc_all_neg,acc_all_avg,n\n",
    );
    let mut cells: Vec<Vec<Vec<MetricReport>>> = vec![vec![Vec::new(); GRID.len()]; GRID.len()];
    let mut baseline_match = true;
    for (i, &lp) in GRID.iter().enumerate() {
        for (j, &ln_) in GRID.iter().enumerate() {
            for (seed, ds) in &datasets {
                let model = if lp + ln_ == 0.0 {
                    // Zero weights never update the parameters.
                    init.clone()
                } else {
                    let tcfg = TrainConfig {
                        lambda_pos: lp,
                        lambda_neg: ln_,
                        ..train_cfg(cfg, *seed, TrainMode::Synchronous)
                    };
                    train(&init, &ds.train, &tcfg)?.final_model
                };
                let rep = eval_examples(&model, &ds.test)?;
                if lp + ln_ == 0.0 {
                    let untrained = eval_examples(&init, &ds.test)?;
                    baseline_match &= rep == untrained;
                }
                csv.push_str(&format!(
                    "{},{},{seed},{}\n",
                    fmt_f64(lp),
                    fmt_f64(ln_),
                    metric_cells(&rep)
                ));
                cells[i][j].push(rep);
            }
        }
    }

    let cell_mean = |i: usize, j: usize, f: fn(&MetricReport) -> f64| -> f64 {
        mean(&cells[i][j].iter().map(f).collect::<Vec<f64>>())
    };
    let cell_vals = |i: usize, j: usize, f: fn(&MetricReport) -> f64| -> Vec<f64> {
        cells[i][j].iter().map(f).collect()
    };
    let center = (GRID.len() - 1, GRID.len() - 1);
    let center_all = cell_vals(center.0, center.1, |r| r.acc_all_avg);
    let mut center_is_max = true;
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..GRID.len() {
        for j in 0..GRID.len() {
            if (i, j) == center {
                continue;
            }
            let rival = cell_vals(i, j, |r| r.acc_all_avg);
            let tol = pooled_std(&center_all, &rival);
            let gap = mean(&rival) - mean(&center_all);
            worst_gap = worst_gap.max(gap - tol);
            if mean(&center_all) < mean(&rival) - tol {
                center_is_max = false;
            }
        }
    }
    let center_one_pos = cell_mean(center.0, center.1, |r| r.acc_one_pos);
    let center_one_neg = cell_mean(center.0, center.1, |r| r.acc_one_neg);
    let mut zeroed_penalty = true;
    let mut min_pos_gap = f64::INFINITY;
    let mut min_neg_gap = f64::INFINITY;
    for (k, _) in GRID.iter().enumerate() {
        let pos_gap = center_one_pos - cell_mean(0, k, |r| r.acc_one_pos);
        let neg_gap = center_one_neg - cell_mean(k, 0, |r| r.acc_one_neg);
        min_pos_gap = min_pos_gap.min(pos_gap);
        min_neg_gap = min_neg_gap.min(neg_gap);
        zeroed_penalty &= pos_gap >= 0.1 && neg_gap >= 0.1;
    }

    let checks = vec![
        CheckResult::new(
            "balanced_cell_attains_max_acc_all",
            center_is_max,
            format!("worst rival-minus-center gap beyond pooled std: {worst_gap:.4}"),
        ),
        CheckResult::new(
            "zeroed_side_loses_at_least_point1",
            zeroed_penalty,
            format!("min zeroed-side gaps: pos {min_pos_gap:.4}, neg {min_neg_gap:.4}"),
        ),
        CheckResult::new(
            "zero_cell_equals_untrained_baseline",
            baseline_match,
            "cell (0,0) metrics equal the untrained model's".to_string(),
        ),
        CheckResult::new(
            "row_count_layout",
            csv.lines().count() - 1 == GRID.len() * GRID.len() * cfg.seeds.len(),
            format!(
                "{} data rows, expected {}",
                csv.lines().count() - 1,
                GRID.len() * GRID.len() * cfg.seeds.len()
            ),
        ),
    ];

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("lambda_grid.csv", csv.as_bytes())?;
    let (manifest_path, outputs) = writer.finalize("lambda_grid", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::LambdaGrid,
        outputs,
        manifest_path,
        checks,
    })
}

/// Accuracy as a function of the training-set size, on a shared test split.
pub fn run_dataset_size(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let max_size = *cfg.sizes.last().expect("validated nonempty");
    // Nested prefixes of one train split, evaluated on the shared test split.
    let needed = max_size.div_ceil(8) * 10;
    let mut csv = String::from(
        "size,seed,acc_one_pos,acc_one_neg,acc_one_avg,acc_all_pos,acc_all_neg,acc_all_avg,n\n",
    );
    let mut by_size: Vec<Vec<MetricReport>> = vec![Vec::new(); cfg.sizes.len()];
    for &seed in &cfg.seeds {
        let mut gen = gen_for_seed(cfg, seed);
        gen.num_scenarios = gen.num_scenarios.max(needed);
        let ds = build_paired_dataset(&gen)?;
        let init = ModelParams::zeros(gen.m);
        for (si, &size) in cfg.sizes.iter().enumerate() {
            let tcfg = train_cfg(cfg, seed, TrainMode::Synchronous);
            let trace = train(&init, &ds.train[..size], &tcfg)?;
            let rep = eval_examples(&trace.final_model, &ds.test)?;
            csv.push_str(&format!("{size},{seed},{}\n", metric_cells(&rep)));
            by_size[si].push(rep);
        }
    }
    for (si, &size) in cfg.sizes.iter().enumerate() {
        csv.push_str(&format!(
            "{size},mean,{}\n",
            metric_cells(&mean_report(&by_size[si]))
        ));
    }
    let means: Vec<f64> = by_size
        .iter()
        .map(|reps| mean(&reps.iter().map(|r| r.acc_one_avg).collect::<Vec<f64>>()))
        .collect();

    let idx_of = |target: usize| cfg.sizes.iter().position(|s| *s == target);
    let mut checks = Vec::new();
    match (idx_of(200), idx_of(1000)) {
        (Some(lo), Some(hi)) => {
            let mut ok = true;
            let mut worst = 0.0f64;
            for w in lo..hi {
                let drop = means[w] - means[w + 1];
                worst = worst.max(drop);
                ok &= drop <= 0.02;
            }
            checks.push(CheckResult::new(
                "non_decreasing_within_noise_200_to_1000",
                ok,
                format!("worst adjacent drop {worst:.4} (limit 0.02)"),
            ));
        }
        _ => checks.push(CheckResult::new(
            "non_decreasing_within_noise_200_to_1000",
            false,
            "sizes 200 and 1000 must both be present".to_string(),
        )),
    }
    match (idx_of(200), idx_of(1000), idx_of(2000)) {
        (Some(a), Some(b), Some(c)) => {
            let early_gain = means[b] - means[a];
            let late_gain = means[c] - means[b];
            checks.push(CheckResult::new(
                "late_gain_no_larger_than_early_gain",
                late_gain <= early_gain,
                format!("gain 1000→2000 {late_gain:.4} vs 200→1000 {early_gain:.4}"),
            ));
        }
        _ => checks.push(CheckResult::new(
            "late_gain_no_larger_than_early_gain",
            false,
            "sizes 200, 1000 and 2000 must all be present".to_string(),
        )),
    }

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("dataset_size.csv", csv.as_bytes())?;
    let (manifest_path, outputs) = writer.finalize("dataset_size", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::DatasetSize,
        outputs,
        manifest_path,
        checks,
    })
}

/// Per-pair specialists vs mixed multi-pair training at matched budgets.
pub fn run_multi_pair(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let num_pairs = cfg.gen.num_pairs;
    if num_pairs < 2 {
        return Err(Error::Config("multi_pair needs gen.num_pairs >= 2".into()));
    }
    let budget = cfg.multi_pair.budget;
    let large = cfg.multi_pair.large_budget;
    let mut csv = String::from(
        "model,seed,eval_pair,acc_one_pos,acc_one_neg,acc_one_avg,acc_all_pos,acc_all_neg,acc_all_avg,n\n",
    );
    // accs[model][eval_pair] across seeds, models ordered singles then mixed.
    let num_models = num_pairs + 2;
    let mut accs: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); num_pairs]; num_models];
    let mut budget_ok = true;
    for &seed in &cfg.seeds {
        let gen = gen_for_seed(cfg, seed);
        let ds = build_paired_dataset(&gen)?;
        let init = ModelParams::zeros(gen.m);
        if ds.train.len() < large {
            return Err(Error::Config(format!(
                "train split has {} examples, need at least {large}; raise gen.num_scenarios",
                ds.train.len()
            )));
        }
        let mut model_sets: Vec<(String, Vec<PairedExample>)> = Vec::new();
        for pid in 0..num_pairs {
            let own: Vec<PairedExample> = ds
                .train
                .iter()
                .filter(|ex| ex.x.pair_id == pid as u32)
                .take(budget)
                .cloned()
                .collect();
            if own.len() < budget {
                return Err(Error::Config(format!(
                    "pair {pid} has only {} train examples, need {budget}",
                    own.len()
                )));
            }
            model_sets.push((format!("single_pair_{pid}"), own));
        }
        model_sets.push((format!("multi_{budget}"), ds.train[..budget].to_vec()));
        model_sets.push((format!("multi_{large}"), ds.train[..large].to_vec()));
        budget_ok &=
            model_sets[num_pairs].1.len() == budget && model_sets[num_pairs + 1].1.len() == large;

        for (slot, (name, train_set)) in model_sets.iter().enumerate() {
            let tcfg = train_cfg(cfg, seed, TrainMode::Synchronous);
            let model = train(&init, train_set, &tcfg)?.final_model;
            let mut pair_reps = Vec::with_capacity(num_pairs);
            for (pid, acc_cell) in accs[slot].iter_mut().enumerate() {
                let eval_set: Vec<PairedExample> = ds
                    .test
                    .iter()
                    .filter(|ex| ex.x.pair_id == pid as u32)
                    .cloned()
                    .collect();
                let rep = eval_examples(&model, &eval_set)?;
                csv.push_str(&format!("{name},{seed},{pid},{}\n", metric_cells(&rep)));
                acc_cell.push(rep.acc_one_avg);
                pair_reps.push(rep);
            }
            csv.push_str(&format!(
                "{name},{seed},avg,{}\n",
                metric_cells(&mean_report(&pair_reps))
            ));
        }
    }

    // Per-model mean accuracy per eval pair, and cross-pair balance.
    let model_pair_mean = |slot: usize, pid: usize| mean(&accs[slot][pid]);
    let cross_pair_std = |slot: usize| -> f64 {
        let per_pair: Vec<f64> = (0..num_pairs)
            .map(|pid| model_pair_mean(slot, pid))
            .collect();
        sample_std(&per_pair)
    };
    let mut own_dominates = true;
    let mut worst_own_gap = f64::INFINITY;
    for pid in 0..num_pairs {
        let own = model_pair_mean(pid, pid);
        for other in 0..num_pairs {
            if other == pid {
                continue;
            }
            worst_own_gap = worst_own_gap.min(own - model_pair_mean(pid, other));
            own_dominates &= own >= model_pair_mean(pid, other);
        }
    }
    let single_stds: Vec<f64> = (0..num_pairs).map(cross_pair_std).collect();
    let mean_single_std = mean(&single_stds);
    let std_small = cross_pair_std(num_pairs);
    let std_large = cross_pair_std(num_pairs + 1);

    let checks = vec![
        CheckResult::new(
            "specialist_best_on_own_pair",
            own_dominates,
            format!("smallest own-minus-other gap {worst_own_gap:.4}"),
        ),
        CheckResult::new(
            "mixed_training_is_more_balanced",
            std_small <= mean_single_std && std_large <= mean_single_std,
            format!(
                "cross-pair std: multi_{budget} {std_small:.4}, multi_{large} {std_large:.4}, singles mean {mean_single_std:.4}"
            ),
        ),
        CheckResult::new(
            "mixed_budget_exact",
            budget_ok,
            format!("mixed models trained on exactly {budget} and {large} examples"),
        ),
    ];

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("multi_pair.csv", csv.as_bytes())?;
    let (manifest_path, outputs) = writer.finalize("multi_pair", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::MultiPair,
        outputs,
        manifest_path,
        checks,
    })
}

/// Worst-case risk over the manifold versus the anchored bound, repeated with
/// fresh empirical draws.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let master_seed = cfg.seeds[0];
    let gen = cfg.gen.clone();
    let ds = build_paired_dataset(&gen)?;
    let tcfg = train_cfg(cfg, master_seed, TrainMode::Synchronous);
    let model = train(&ModelParams::zeros(gen.m), &ds.train, &tcfg)?.final_model;
    let man = PreferenceManifold::from_registry(&gen.registry(), gen.seed, gen.m, gen.d)?;

    // Shared scenario distribution: uniform over the held-out scenarios. The
    // label under a preference p is the projection argmax, the same rule that
    // produced the demonstrations.
    let support: Vec<Scenario> = ds.test.iter().map(|ex| ex.x.clone()).collect();
    if support.is_empty() {
        return Err(Error::Config("bounds needs a nonempty test split".into()));
    }
    let weight = 1.0 / support.len() as f64;
    let pop_risk = |p: &[f64]| -> Result<f64> {
        let atoms: Vec<(Scenario, usize, f64)> = support
            .iter()
            .map(|x| (x.clone(), argmax_projection(x, p), weight))
            .collect();
        crate::condmodel::population_risk(&model, &atoms, p)
    };

    // Loss sensitivity probes reuse the demonstrations from both sides.
    let lip_source: Vec<(Scenario, usize)> = ds
        .test
        .iter()
        .flat_map(|ex| [(ex.x.clone(), ex.y_pos), (ex.x.clone(), ex.y_neg)])
        .collect();
    let lip = estimate_lipschitz(
        &model,
        &man,
        &lip_source,
        cfg.bounds.num_probes,
        substream_seed(master_seed, 0x4c50),
    )?;

    // Anchor the manifold on a regular intrinsic grid, then add the covering
    // slack that extends grid coverage to the whole box: any z is within
    // (h/2)·√d of a grid point, and ‖B·U‖_F bounds the z→p stretch.
    let g = cfg.bounds.grid_per_dim;
    if g < 2 {
        return Err(Error::Config(
            "bounds.grid_per_dim must be at least 2".into(),
        ));
    }
    let mut grid_points = Vec::with_capacity(g.pow(gen.d as u32));
    let mut idx = vec![0usize; gen.d];
    for flat in 0..g.pow(gen.d as u32) {
        let mut rem = flat;
        for dcol in (0..gen.d).rev() {
            idx[dcol] = rem % g;
            rem /= g;
        }
        let z: Vec<f64> = idx
            .iter()
            .map(|&i| -1.0 + 2.0 * i as f64 / (g - 1) as f64)
            .collect();
        grid_points.push(manifold_point(&man, &z)?);
    }
    let net = greedy_eps_net(&grid_points, cfg.bounds.epsilon)?;
    let net_sound = grid_points
        .iter()
        .all(|p| net.nearest_distance(p) <= cfg.bounds.epsilon);
    let h = 2.0 / (g - 1) as f64;
    let coverage_slack = man.bu_frobenius() * (h / 2.0) * (gen.d as f64).sqrt();
    let eps_eff = cfg.bounds.epsilon + coverage_slack;

    let mut csv = String::from(
        "rep,max_emp_risk,L_p,epsilon,M,n,delta,lipschitz_term,concentration_term,bound,sup_risk,holds\n",
    );
    let mut holds_count = 0usize;
    let mut sums_exact = true;
    let mut first_report = None;
    let mut sup_risk_max = 0.0f64;
    for rep_idx in 0..cfg.bounds.repetitions {
        let mut rng =
            ChaCha8Rng::seed_from_u64(substream_seed(master_seed, 10_000 + rep_idx as u64));
        let mut max_emp = 0.0f64;
        for anchor in &net.anchors {
            let samples: Vec<(Scenario, usize)> = (0..cfg.bounds.n)
                .map(|_| {
                    let x = &support[rng.gen_range(0..support.len())];
                    (x.clone(), argmax_projection(x, anchor))
                })
                .collect();
            let emp = crate::condmodel::empirical_risk(&model, &samples, anchor)?;
            max_emp = max_emp.max(emp);
        }
        let report = uniform_risk_bound(
            max_emp,
            lip.l_p,
            eps_eff,
            net.m,
            cfg.bounds.n,
            cfg.bounds.delta,
        )?;
        sums_exact &=
            report.bound == report.max_emp_risk + report.lipschitz_term + report.concentration_term;
        let mut sup_risk = 0.0f64;
        for _ in 0..cfg.bounds.num_test_points {
            let z = man.sample_z(&mut rng);
            let p = manifold_point(&man, &z)?;
            sup_risk = sup_risk.max(pop_risk(&p)?);
        }
        sup_risk_max = sup_risk_max.max(sup_risk);
        let holds = sup_risk <= report.bound;
        holds_count += holds as usize;
        csv.push_str(&format!(
            "{rep_idx},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(report.max_emp_risk),
            fmt_f64(report.l_p),
            fmt_f64(report.epsilon),
            report.m,
            report.n,
            fmt_f64(report.delta),
            fmt_f64(report.lipschitz_term),
            fmt_f64(report.concentration_term),
            fmt_f64(report.bound),
            fmt_f64(sup_risk),
            holds as u8
        ));
        if first_report.is_none() {
            first_report = Some(report);
        }
    }
    let first_report = first_report.expect("at least one repetition");

    #[derive(serde::Serialize)]
    struct BoundsSummary {
        repetitions: usize,
        holds_count: usize,
        epsilon_greedy: f64,
        coverage_slack: f64,
        epsilon_effective: f64,
        l_p: f64,
        num_probe_pairs: usize,
        anchors: usize,
        sup_risk_max: f64,
    }
    let summary = BoundsSummary {
        repetitions: cfg.bounds.repetitions,
        holds_count,
        epsilon_greedy: cfg.bounds.epsilon,
        coverage_slack,
        epsilon_effective: eps_eff,
        l_p: lip.l_p,
        num_probe_pairs: lip.num_probe_pairs,
        anchors: net.m,
        sup_risk_max,
    };

    let hold_rate = holds_count as f64 / cfg.bounds.repetitions as f64;
    let checks = vec![
        CheckResult::new(
            "bound_holds_at_least_90pct",
            hold_rate >= 0.90,
            format!(
                "held in {holds_count}/{} repetitions",
                cfg.bounds.repetitions
            ),
        ),
        CheckResult::new(
            "bound_equals_sum_of_terms",
            sums_exact,
            "bound column equals the sum of its term columns".to_string(),
        ),
        CheckResult::new(
            "net_covers_construction_grid",
            net_sound,
            format!("{} anchors cover {} grid points", net.m, grid_points.len()),
        ),
    ];

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("bounds.csv", csv.as_bytes())?;
    writer.write("eps_net.json", net.to_json()?.as_bytes())?;
    writer.write("risk_bound.json", first_report.to_json()?.as_bytes())?;
    writer.write(
        "bounds_summary.json",
        jsonfmt::to_json_string(&summary)?.as_bytes(),
    )?;
    let (manifest_path, outputs) = writer.finalize("bounds", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::Bounds,
        outputs,
        manifest_path,
        checks,
    })
}

/// Measure the cubic decay of the async-vs-sync residual across step sizes.
pub fn run_taylor(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut csv = String::from("seed,eta,gap_norm,predicted_norm,residual_norm\n");
    let mut slopes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut gen = gen_for_seed(cfg, seed);
        gen.num_scenarios = 5;
        let ds = build_paired_dataset(&gen)?;
        let ex = &ds.train[0];
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, 0x5459));
        let w = Array2::from_shape_vec(
            (gen.m, gen.m),
            (0..gen.m * gen.m)
                .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .expect("shape matches");
        let model = ModelParams::new(w)?;
        let pts = trainer::taylor_gap(
            &model,
            ex,
            cfg.train.lambda_pos,
            cfg.train.lambda_neg,
            &cfg.taylor.etas,
        )?;
        for p in &pts {
            csv.push_str(&format!(
                "{seed},{},{},{},{}\n",
                fmt_f64(p.eta),
                fmt_f64(p.gap_norm),
                fmt_f64(p.predicted_norm),
                fmt_f64(p.residual_norm)
            ));
        }
        slopes.push((seed, trainer::fit_log_log_slope(&pts)));
    }
    let passing = slopes
        .iter()
        .filter(|(_, s)| *s >= cfg.taylor.min_slope)
        .count();

    #[derive(serde::Serialize)]
    struct TaylorSummary {
        min_slope: f64,
        passing: usize,
        total: usize,
        per_seed: Vec<SeedSlope>,
    }
    #[derive(serde::Serialize)]
    struct SeedSlope {
        seed: u64,
        slope: f64,
    }
    let summary = TaylorSummary {
        min_slope: cfg.taylor.min_slope,
        passing,
        total: slopes.len(),
        per_seed: slopes
            .iter()
            .map(|(seed, slope)| SeedSlope {
                seed: *seed,
                slope: *slope,
            })
            .collect(),
    };

    // At least 90% of seeds must fit a cubic-order residual.
    let checks = vec![CheckResult::new(
        "residual_slope_at_least_min",
        passing * 10 >= slopes.len() * 9,
        format!(
            "slope >= {} on {passing}/{} seeds",
            cfg.taylor.min_slope,
            slopes.len()
        ),
    )];

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("taylor.csv", csv.as_bytes())?;
    writer.write(
        "taylor_summary.json",
        jsonfmt::to_json_string(&summary)?.as_bytes(),
    )?;
    let (manifest_path, outputs) = writer.finalize("taylor", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::Taylor,
        outputs,
        manifest_path,
        checks,
    })
}

/// Few-shot user inference: sign recovery and accuracy against an
/// unconditioned baseline.
pub fn run_customize(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.gen.d != 1 {
        return Err(Error::Config(
            "customize runs on a d = 1 manifold; set gen.d = 1".into(),
        ));
    }
    let master_seed = cfg.seeds[0];
    let gen = cfg.gen.clone();
    let ds = build_paired_dataset(&gen)?;
    let tcfg = train_cfg(cfg, master_seed, TrainMode::Synchronous);
    let model = train(&ModelParams::zeros(gen.m), &ds.train, &tcfg)?.final_model;

    // One intrinsic coordinate along the first pair's conflict direction:
    // z = +1 points toward the positive side, z = -1 toward the negative.
    let k_total = 2 * gen.num_pairs;
    let mut u = Array2::<f64>::zeros((k_total, 1));
    u[[0, 0]] = std::f64::consts::FRAC_1_SQRT_2;
    u[[1, 0]] = -std::f64::consts::FRAC_1_SQRT_2;
    let man = PreferenceManifold::from_registry_with_u(&gen.registry(), gen.seed, gen.m, u)?;
    let pair = ds.pairs[0].clone();
    let baseline_p = pair.center.clone();

    let mut csv = String::from("user,z_true,z_hat,sign_recovered,acc_customized,acc_baseline\n");
    let mut recovered = 0usize;
    let mut acc_cust_sum = 0.0;
    let mut acc_base_sum = 0.0;
    for user in 0..cfg.customize.num_users {
        let mut rng =
            ChaCha8Rng::seed_from_u64(substream_seed(master_seed, 3_000_000 + user as u64));
        let magnitude = rng.gen_range(cfg.customize.min_abs_z..=1.0);
        let z_true = if rng.gen::<bool>() {
            magnitude
        } else {
            -magnitude
        };
        let p_user = manifold_point(&man, &[z_true])?;
        let side = if z_true > 0.0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        };

        let events: Vec<(Scenario, usize)> = (0..cfg.customize.k)
            .map(|i| {
                let x = gen_scenario(&gen, &pair, &mut rng, (user * 1000 + i) as u64)?;
                let choice = argmax_projection(&x, &p_user);
                Ok((x, choice))
            })
            .collect::<Result<_>>()?;
        let history = UserHistory::new(events)?;
        let inferred = infer_z(&model, &man, &history, cfg.customize.grid_per_dim)?;
        let sign_ok = (inferred.z_hat[0] > 0.0) == (z_true > 0.0) && inferred.z_hat[0] != 0.0;
        recovered += sign_ok as usize;

        let mut hits_cust = 0usize;
        let mut hits_base = 0usize;
        for i in 0..cfg.customize.test_scenarios_per_user {
            let x = gen_scenario(&gen, &pair, &mut rng, (user * 1000 + 500 + i) as u64)?;
            let pick_cust = evalkit::predict_one(&model, &x, &inferred.p_hat)?;
            let pick_base = evalkit::predict_one(&model, &x, &baseline_p)?;
            hits_cust += (x.options[pick_cust].label_side == side) as usize;
            hits_base += (x.options[pick_base].label_side == side) as usize;
        }
        let acc_cust = hits_cust as f64 / cfg.customize.test_scenarios_per_user as f64;
        let acc_base = hits_base as f64 / cfg.customize.test_scenarios_per_user as f64;
        acc_cust_sum += acc_cust;
        acc_base_sum += acc_base;
        csv.push_str(&format!(
            "{user},{},{},{},{},{}\n",
            fmt_f64(z_true),
            fmt_f64(inferred.z_hat[0]),
            sign_ok as u8,
            fmt_f64(acc_cust),
            fmt_f64(acc_base)
        ));
    }
    let n_users = cfg.customize.num_users as f64;
    let sign_rate = recovered as f64 / n_users;
    let acc_cust = acc_cust_sum / n_users;
    let acc_base = acc_base_sum / n_users;
    let improvement = acc_cust - acc_base;

    #[derive(serde::Serialize)]
    struct CustomizeSummary {
        num_users: usize,
        k: usize,
        grid_per_dim: usize,
        sign_recovery_rate: f64,
        mean_acc_customized: f64,
        mean_acc_baseline: f64,
        improvement_over_baseline: f64,
    }
    let summary = CustomizeSummary {
        num_users: cfg.customize.num_users,
        k: cfg.customize.k,
        grid_per_dim: cfg.customize.grid_per_dim,
        sign_recovery_rate: sign_rate,
        mean_acc_customized: acc_cust,
        mean_acc_baseline: acc_base,
        improvement_over_baseline: improvement,
    };

    let checks = vec![
        CheckResult::new(
            "sign_recovery_at_least_90pct",
            sign_rate >= 0.90,
            format!(
                "recovered {recovered}/{} user signs",
                cfg.customize.num_users
            ),
        ),
        CheckResult::new(
            "customized_beats_baseline_by_point1",
            improvement >= 0.1,
            format!("acc {acc_cust:.4} vs baseline {acc_base:.4}"),
        ),
        CheckResult::new(
            "rates_in_unit_interval",
            (0.0..=1.0).contains(&sign_rate)
                && (0.0..=1.0).contains(&acc_cust)
                && (0.0..=1.0).contains(&acc_base),
            "all reported rates are fractions".to_string(),
        ),
    ];

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("customize.csv", csv.as_bytes())?;
    writer.write(
        "customize_summary.json",
        jsonfmt::to_json_string(&summary)?.as_bytes(),
    )?;
    let (manifest_path, outputs) = writer.finalize("customize", &cfg.seeds, cfg)?;
    Ok(RunOutcome {
        experiment: Experiment::Customize,
        outputs,
        manifest_path,
        checks,
    })
}
