//! Paired-objective training: the weighted two-sided loss, synchronous and
//! asynchronous update rules, single-side baselines, and numerical
//! verification of the second-order gap between the two update orders.
//!
//! Update rules for one paired example with weights (λ₊, λ₋) and step η:
//!
//! - synchronous: `θ' = θ − η·(λ₊ g₊(θ) + λ₋ g₋(θ))`
//! - asynchronous: `θ′ = θ − η λ₊ g₊(θ)`, then `θ'' = θ′ − η λ₋ g₋(θ′)`
//!
//! Expanding the asynchronous rule around θ shows the two differ by
//! `η² λ₊ λ₋ H₋(θ) g₊(θ) + O(η³)`, a coupling term between the two sides.
//! [`taylor_gap`] measures that residual directly; the cubic decay of
//! `‖gap − predicted‖` in η is what the slope fit certifies. The Hessian is
//! evaluated at the base point θ, matching the expansion (not at the
//! intermediate point the sequential rule visits).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condmodel::{self, ModelParams, Scenario};
use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::prefspace::PreferenceEmbedding;
use crate::vecmath::substream_seed;

/// One demonstration pair: the same scenario labeled under both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub x: Scenario,
    pub p_pos: PreferenceEmbedding,
    pub p_neg: PreferenceEmbedding,
    pub y_pos: usize,
    pub y_neg: usize,
}

/// Which update rule drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Synchronous,
    Asynchronous,
    SinglePos,
    SingleNeg,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synchronous" => Ok(TrainMode::Synchronous),
            "asynchronous" => Ok(TrainMode::Asynchronous),
            "single_pos" => Ok(TrainMode::SinglePos),
            "single_neg" => Ok(TrainMode::SingleNeg),
            other => Err(Error::Config(format!("unknown train mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda_pos: f64,
    pub lambda_neg: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Run the asynchronous rule negative-side first, to probe order dependence.
    #[serde(default)]
    pub async_neg_first: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            lambda_pos: 1.0,
            lambda_neg: 1.0,
            epochs: 12,
            seed: 11,
            mode: TrainMode::Synchronous,
            async_neg_first: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.lambda_pos < 0.0 || self.lambda_neg < 0.0 {
            return Err(Error::InvalidParameter(
                "loss weights must be nonnegative".into(),
            ));
        }
        let paired = matches!(self.mode, TrainMode::Synchronous | TrainMode::Asynchronous);
        if paired && self.lambda_pos + self.lambda_neg <= 0.0 {
            return Err(Error::InvalidParameter(
                "paired training needs lambda_pos + lambda_neg > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub param_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    pub final_model: ModelParams,
}

impl TrainTrace {
    /// CSV with columns `epoch,loss_total,loss_pos,loss_neg,param_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_total,loss_pos,loss_neg,param_norm\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                jsonfmt::fmt_f64(e.loss_total),
                jsonfmt::fmt_f64(e.loss_pos),
                jsonfmt::fmt_f64(e.loss_neg),
                jsonfmt::fmt_f64(e.param_norm)
            ));
        }
        out
    }
}

/// Weighted two-sided loss `λ₊·ℓ(x,p⁺,y⁺) + λ₋·ℓ(x,p⁻,y⁻)` (raw cross-entropy).
pub fn paired_loss(
    model: &ModelParams,
    ex: &PairedExample,
    lambda_pos: f64,
    lambda_neg: f64,
) -> Result<f64> {
    if lambda_pos < 0.0 || lambda_neg < 0.0 {
        return Err(Error::InvalidParameter(
            "loss weights must be nonnegative".into(),
        ));
    }
    let lp = condmodel::xent_loss(model, &ex.x, &ex.p_pos.vector, ex.y_pos)?;
    let ln = condmodel::xent_loss(model, &ex.x, &ex.p_neg.vector, ex.y_neg)?;
    Ok(lambda_pos * lp + lambda_neg * ln)
}

fn side_grads(model: &ModelParams, ex: &PairedExample) -> Result<(Array2<f64>, Array2<f64>)> {
    let gp = condmodel::grad_loss(model, &ex.x, &ex.p_pos.vector, ex.y_pos)?;
    let gn = condmodel::grad_loss(model, &ex.x, &ex.p_neg.vector, ex.y_neg)?;
    Ok((gp, gn))
}

/// One combined step on `λ₊ g₊(θ) + λ₋ g₋(θ)`.
pub fn sync_step(
    model: &ModelParams,
    ex: &PairedExample,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let (gp, gn) = side_grads(model, ex)?;
    let w = &model.w - &(cfg.eta * (cfg.lambda_pos * &gp + cfg.lambda_neg * &gn));
    ModelParams::new(w)
}

/// Two sequential steps, one per side, the second gradient evaluated at the
/// intermediate point. Positive side first unless `cfg.async_neg_first`.
pub fn async_step(
    model: &ModelParams,
    ex: &PairedExample,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let (first_p, first_lambda, first_y, second_p, second_lambda, second_y) = if cfg.async_neg_first
    {
        (
            &ex.p_neg.vector,
            cfg.lambda_neg,
            ex.y_neg,
            &ex.p_pos.vector,
            cfg.lambda_pos,
            ex.y_pos,
        )
    } else {
        (
            &ex.p_pos.vector,
            cfg.lambda_pos,
            ex.y_pos,
            &ex.p_neg.vector,
            cfg.lambda_neg,
            ex.y_neg,
        )
    };
    let g1 = condmodel::grad_loss(model, &ex.x, first_p, first_y)?;
    let mid = ModelParams::new(&model.w - &(cfg.eta * first_lambda * &g1))?;
    let g2 = condmodel::grad_loss(&mid, &ex.x, second_p, second_y)?;
    ModelParams::new(&mid.w - &(cfg.eta * second_lambda * &g2))
}

/// One step on a single side's `(x, p, y)` triple with weight λ.
fn single_side_step(
    model: &ModelParams,
    x: &Scenario,
    p: &[f64],
    y: usize,
    eta: f64,
    lambda: f64,
) -> Result<ModelParams> {
    let g = condmodel::grad_loss(model, x, p, y)?;
    ModelParams::new(&model.w - &(eta * lambda * &g))
}

/// Measured vs predicted second-order gap between the two update rules at one
/// step size.
#[derive(Debug, Clone, Copy)]
pub struct TaylorGapPoint {
    pub eta: f64,
    pub gap_norm: f64,
    pub predicted_norm: f64,
    pub residual_norm: f64,
}

/// For each η: run one synchronous and one asynchronous step from the same
/// parameters, compare their difference against the second-order prediction
/// `η² λ₊ λ₋ H₋(θ)·vec(g₊(θ))`, and report all three norms. The residual
/// shrinks as O(η³); fit its log-log slope with [`fit_log_log_slope`].
pub fn taylor_gap(
    model: &ModelParams,
    ex: &PairedExample,
    lambda_pos: f64,
    lambda_neg: f64,
    eta_list: &[f64],
) -> Result<Vec<TaylorGapPoint>> {
    if eta_list.is_empty() {
        return Err(Error::EmptyInput("eta list"));
    }
    if eta_list.iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidParameter("etas must be positive".into()));
    }
    if eta_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "eta list must be strictly decreasing".into(),
        ));
    }
    let gp = condmodel::grad_loss(model, &ex.x, &ex.p_pos.vector, ex.y_pos)?;
    let hn = condmodel::hessian_loss(model, &ex.x, &ex.p_neg.vector, ex.y_neg)?;
    let gp_flat: Vec<f64> = gp.iter().copied().collect();
    let dim = gp_flat.len();
    // H₋ · vec(g₊), row-major vectorization throughout.
    let mut hg = vec![0.0; dim];
    for a in 0..dim {
        let mut acc = 0.0;
        for b in 0..dim {
            acc += hn[[a, b]] * gp_flat[b];
        }
        hg[a] = acc;
    }
    let mut points = Vec::with_capacity(eta_list.len());
    for &eta in eta_list {
        let cfg = TrainConfig {
            eta,
            lambda_pos,
            lambda_neg,
            epochs: 1,
            seed: 0,
            mode: TrainMode::Synchronous,
            async_neg_first: false,
        };
        let sync = sync_step(model, ex, &cfg)?;
        let async_ = async_step(model, ex, &cfg)?;
        let gap: Vec<f64> = async_
            .w
            .iter()
            .zip(sync.w.iter())
            .map(|(a, s)| a - s)
            .collect();
        let coeff = eta * eta * lambda_pos * lambda_neg;
        let gap_norm = gap.iter().map(|v| v * v).sum::<f64>().sqrt();
        let predicted_norm = coeff * hg.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual_norm = gap
            .iter()
            .zip(&hg)
            .map(|(g, h)| {
                let r = g - coeff * h;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        points.push(TaylorGapPoint {
            eta,
            gap_norm,
            predicted_norm,
            residual_norm,
        });
    }
    Ok(points)
}

/// Least-squares slope of `ln residual` against `ln η`.
pub fn fit_log_log_slope(points: &[TaylorGapPoint]) -> f64 {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.residual_norm > 0.0)
        .map(|p| (p.eta.ln(), p.residual_norm.ln()))
        .collect();
    if data.len() < 2 {
        return f64::NAN;
    }
    let n = data.len() as f64;
    let mean_x = data.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = data.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &data {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Per-example gradient descent in seeded shuffled order, for `cfg.epochs`
/// epochs. The single-side modes update on only that side's triples and never
/// read the other side's labels. The trace records post-epoch mean losses.
pub fn train(
    model0: &ModelParams,
    dataset: &[PairedExample],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    let mut model = model0.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        for &idx in &order {
            let ex = &dataset[idx];
            model = match cfg.mode {
                TrainMode::Synchronous => sync_step(&model, ex, cfg)?,
                TrainMode::Asynchronous => async_step(&model, ex, cfg)?,
                TrainMode::SinglePos => single_side_step(
                    &model,
                    &ex.x,
                    &ex.p_pos.vector,
                    ex.y_pos,
                    cfg.eta,
                    cfg.lambda_pos,
                )?,
                TrainMode::SingleNeg => single_side_step(
                    &model,
                    &ex.x,
                    &ex.p_neg.vector,
                    ex.y_neg,
                    cfg.eta,
                    cfg.lambda_neg,
                )?,
            };
        }
        epochs.push(epoch_stats(&model, dataset, cfg, epoch)?);
    }
    Ok(TrainTrace {
        epochs,
        final_model: model,
    })
}

/// Full-batch variant: each epoch takes one step on the dataset-mean gradient.
/// Kept separate from [`train`] for the monotone-descent and expansion checks,
/// where per-example noise would obscure the effect under study.
pub fn train_full_batch(
    model0: &ModelParams,
    dataset: &[PairedExample],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if !matches!(cfg.mode, TrainMode::Synchronous) {
        return Err(Error::InvalidParameter(
            "full-batch training supports the synchronous mode only".into(),
        ));
    }
    let mut model = model0.clone();
    let m = model.m;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut grad = Array2::<f64>::zeros((m, m));
        for ex in dataset {
            let (gp, gn) = side_grads(&model, ex)?;
            grad = grad + cfg.lambda_pos * &gp + cfg.lambda_neg * &gn;
        }
        grad.mapv_inplace(|v| v / dataset.len() as f64);
        model = ModelParams::new(&model.w - &(cfg.eta * &grad))?;
        epochs.push(epoch_stats(&model, dataset, cfg, epoch)?);
    }
    Ok(TrainTrace {
        epochs,
        final_model: model,
    })
}

fn epoch_stats(
    model: &ModelParams,
    dataset: &[PairedExample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let n = dataset.len() as f64;
    let (mut pos, mut neg) = (0.0, 0.0);
    match cfg.mode {
        TrainMode::SinglePos => {
            for ex in dataset {
                pos += condmodel::xent_loss(model, &ex.x, &ex.p_pos.vector, ex.y_pos)?;
            }
        }
        TrainMode::SingleNeg => {
            for ex in dataset {
                neg += condmodel::xent_loss(model, &ex.x, &ex.p_neg.vector, ex.y_neg)?;
            }
        }
        _ => {
            for ex in dataset {
                pos += condmodel::xent_loss(model, &ex.x, &ex.p_pos.vector, ex.y_pos)?;
                neg += condmodel::xent_loss(model, &ex.x, &ex.p_neg.vector, ex.y_neg)?;
            }
        }
    }
    pos /= n;
    neg /= n;
    // Unused sides stay at 0.0 so single-side traces are independent of the
    // other side's labels.
    let total = match cfg.mode {
        TrainMode::SinglePos => cfg.lambda_pos * pos,
        TrainMode::SingleNeg => cfg.lambda_neg * neg,
        _ => cfg.lambda_pos * pos + cfg.lambda_neg * neg,
    };
    Ok(EpochStats {
        epoch,
        loss_total: total,
        loss_pos: pos,
        loss_neg: neg,
        param_norm: model.frobenius_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condmodel::{OptionTrait, Polarity};
    use crate::prefspace::{make_pair, PreferenceDescriptor};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn example(seed: u64, m: usize) -> PairedExample {
        let pos = PreferenceDescriptor::new("t_pos", 0, Polarity::Positive);
        let neg = PreferenceDescriptor::new("t_neg", 0, Polarity::Negative);
        let pair = make_pair(&pos, &neg, seed, m, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
        let mut opts = Vec::new();
        for j in 0..3 {
            let t: Vec<f64> = (0..m)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            opts.push(
                OptionTrait::new(
                    t,
                    if j == 0 {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                )
                .unwrap(),
            );
        }
        let x = Scenario::new(seed, 0, opts).unwrap();
        PairedExample {
            x,
            p_pos: pair.pos,
            p_neg: pair.neg,
            y_pos: 0,
            y_neg: 1,
        }
    }

    fn random_model(seed: u64, m: usize, scale: f64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_vec(
            (m, m),
            (0..m * m)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap();
        ModelParams::new(w).unwrap()
    }

    #[test]
    fn paired_loss_is_weighted_sum() {
        let ex = example(1, 4);
        let model = random_model(2, 4, 0.5);
        let lp = condmodel::xent_loss(&model, &ex.x, &ex.p_pos.vector, ex.y_pos).unwrap();
        let ln = condmodel::xent_loss(&model, &ex.x, &ex.p_neg.vector, ex.y_neg).unwrap();
        assert_relative_eq!(
            paired_loss(&model, &ex, 1.0, 1.0).unwrap(),
            lp + ln,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            paired_loss(&model, &ex, 0.5, 1.0).unwrap(),
            0.5 * lp + ln,
            epsilon = 1e-15
        );
        // Zero weight reduces to the single-side loss exactly.
        assert_eq!(paired_loss(&model, &ex, 0.0, 1.0).unwrap(), ln);
        assert!(paired_loss(&model, &ex, -0.1, 1.0).is_err());
    }

    #[test]
    fn sync_step_obeys_update_equation() {
        let ex = example(3, 4);
        let model = random_model(4, 4, 0.5);
        let cfg = TrainConfig {
            eta: 0.07,
            lambda_pos: 0.8,
            lambda_neg: 1.3,
            ..TrainConfig::default()
        };
        let stepped = sync_step(&model, &ex, &cfg).unwrap();
        let gp = condmodel::grad_loss(&model, &ex.x, &ex.p_pos.vector, ex.y_pos).unwrap();
        let gn = condmodel::grad_loss(&model, &ex.x, &ex.p_neg.vector, ex.y_neg).unwrap();
        let expect = &model.w - &(cfg.eta * (cfg.lambda_pos * &gp + cfg.lambda_neg * &gn));
        assert_eq!(stepped.w, expect);
    }

    #[test]
    fn sync_step_cancellation_and_reduction() {
        // λ₋ = 0: identical to a plain step on the positive side.
        let ex = example(5, 4);
        let model = random_model(6, 4, 0.5);
        let cfg = TrainConfig {
            eta: 0.05,
            lambda_pos: 1.0,
            lambda_neg: 0.0,
            ..TrainConfig::default()
        };
        let stepped = sync_step(&model, &ex, &cfg).unwrap();
        let plain = single_side_step(&model, &ex.x, &ex.p_pos.vector, ex.y_pos, 0.05, 1.0).unwrap();
        assert_eq!(stepped.w, plain.w);

        // The shift is exactly -η·λ₊·g₊ here.
        let shift = &model.w - &stepped.w;
        let gp = condmodel::grad_loss(&model, &ex.x, &ex.p_pos.vector, ex.y_pos).unwrap();
        assert_relative_eq!(
            shift.iter().map(|v| v * v).sum::<f64>().sqrt(),
            (0.05 * &gp).iter().map(|v| v * v).sum::<f64>().sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn async_degenerate_first_step_equals_sync() {
        let ex = example(7, 4);
        let model = random_model(8, 4, 0.5);
        let cfg = TrainConfig {
            eta: 0.05,
            lambda_pos: 0.0,
            lambda_neg: 1.0,
            ..TrainConfig::default()
        };
        let a = async_step(&model, &ex, &cfg).unwrap();
        let s = sync_step(&model, &ex, &cfg).unwrap();
        assert_eq!(a.w, s.w);
    }

    #[test]
    fn async_and_sync_converge_as_eta_shrinks() {
        let ex = example(9, 4);
        let model = random_model(10, 4, 0.5);
        let mut prev = f64::INFINITY;
        for eta in [1e-1, 1e-2, 1e-3, 1e-4] {
            let cfg = TrainConfig {
                eta,
                ..TrainConfig::default()
            };
            let a = async_step(&model, &ex, &cfg).unwrap();
            let s = sync_step(&model, &ex, &cfg).unwrap();
            let gap = (&a.w - &s.w).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(gap < prev);
            prev = gap;
        }
        // The gap is second order in eta, so 1e-4 leaves at most ~1e-7.
        assert!(prev < 1e-6);
    }

    #[test]
    fn async_order_matters_in_general() {
        let ex = example(11, 4);
        let model = random_model(12, 4, 0.8);
        let cfg = TrainConfig {
            eta: 0.3,
            ..TrainConfig::default()
        };
        let fwd = async_step(&model, &ex, &cfg).unwrap();
        let swapped = async_step(
            &model,
            &ex,
            &TrainConfig {
                async_neg_first: true,
                ..cfg
            },
        )
        .unwrap();
        let gap = (&fwd.w - &swapped.w)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(gap > 1e-9, "order swap had no effect");
    }

    #[test]
    fn taylor_gap_zero_without_coupling() {
        let ex = example(13, 4);
        let model = random_model(14, 4, 0.5);
        let pts = taylor_gap(&model, &ex, 0.0, 1.0, &[1e-1, 1e-2]).unwrap();
        for p in pts {
            assert_eq!(p.gap_norm, 0.0);
            assert_eq!(p.predicted_norm, 0.0);
            assert_eq!(p.residual_norm, 0.0);
        }
    }

    /// On a quadratic loss the expansion is exact: gap == predicted to
    /// machine precision. Built by hand on a 2-parameter surrogate.
    #[test]
    fn quadratic_surrogate_expansion_is_exact() {
        // Quadratic sides: ℓ±(θ) = ½ θᵀ A± θ + b±ᵀ θ, constant Hessians A±.
        let a_pos = [[2.0, 0.3], [0.3, 1.0]];
        let a_neg = [[1.5, -0.4], [-0.4, 0.9]];
        let b_pos = [0.2, -1.0];
        let b_neg = [-0.7, 0.4];
        let grad = |a: &[[f64; 2]; 2], b: &[f64; 2], th: &[f64; 2]| -> [f64; 2] {
            [
                a[0][0] * th[0] + a[0][1] * th[1] + b[0],
                a[1][0] * th[0] + a[1][1] * th[1] + b[1],
            ]
        };
        let theta = [0.5, -0.3];
        let (lp, ln) = (0.9, 1.1);
        for eta in [0.1, 0.01] {
            let gp = grad(&a_pos, &b_pos, &theta);
            let gn = grad(&a_neg, &b_neg, &theta);
            // Synchronous.
            let sync = [
                theta[0] - eta * (lp * gp[0] + ln * gn[0]),
                theta[1] - eta * (lp * gp[1] + ln * gn[1]),
            ];
            // Asynchronous.
            let mid = [theta[0] - eta * lp * gp[0], theta[1] - eta * lp * gp[1]];
            let gn_mid = grad(&a_neg, &b_neg, &mid);
            let asyn = [mid[0] - eta * ln * gn_mid[0], mid[1] - eta * ln * gn_mid[1]];
            // Predicted second-order coupling: η² λ₊ λ₋ A₋ g₊.
            let hg = [
                a_neg[0][0] * gp[0] + a_neg[0][1] * gp[1],
                a_neg[1][0] * gp[0] + a_neg[1][1] * gp[1],
            ];
            for i in 0..2 {
                let gap = asyn[i] - sync[i];
                let predicted = eta * eta * lp * ln * hg[i];
                assert_relative_eq!(gap, predicted, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn taylor_slope_is_cubic() {
        let etas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let mut passing = 0;
        for seed in 0..10 {
            let ex = example(200 + seed, 6);
            let model = random_model(300 + seed, 6, 0.6);
            let pts = taylor_gap(&model, &ex, 1.0, 1.0, &etas).unwrap();
            let slope = fit_log_log_slope(&pts);
            if slope >= 2.9 {
                passing += 1;
            }
        }
        assert!(passing >= 9, "slope >= 2.9 on only {passing}/10 seeds");
    }

    #[test]
    fn taylor_eta_list_validated() {
        let ex = example(15, 4);
        let model = random_model(16, 4, 0.5);
        assert!(taylor_gap(&model, &ex, 1.0, 1.0, &[0.1, 0.2]).is_err());
        assert!(taylor_gap(&model, &ex, 1.0, 1.0, &[]).is_err());
        assert!(taylor_gap(&model, &ex, 1.0, 1.0, &[0.1, -0.2]).is_err());
    }

    fn small_dataset(seed: u64, n: usize, m: usize) -> Vec<PairedExample> {
        (0..n as u64)
            .map(|i| example(seed.wrapping_add(i), m))
            .collect()
    }

    #[test]
    fn train_is_deterministic() {
        let data = small_dataset(40, 12, 4);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let m0 = ModelParams::zeros(4);
        let t1 = train(&m0, &data, &cfg).unwrap();
        let t2 = train(&m0, &data, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.epochs.len(), cfg.epochs);
    }

    #[test]
    fn single_pos_ignores_negative_labels() {
        let data = small_dataset(50, 10, 4);
        let mut flipped = data.clone();
        for ex in &mut flipped {
            ex.y_neg = (ex.y_neg + 1) % ex.x.num_options();
        }
        let cfg = TrainConfig {
            epochs: 4,
            mode: TrainMode::SinglePos,
            ..TrainConfig::default()
        };
        let m0 = ModelParams::zeros(4);
        let a = train(&m0, &data, &cfg).unwrap();
        let b = train(&m0, &flipped, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn asynchronous_training_runs_and_differs_from_synchronous() {
        let gen = crate::datagen::GenConfig {
            num_scenarios: 30,
            ..crate::datagen::GenConfig::default()
        };
        let data = crate::datagen::build_paired_dataset(&gen).unwrap().train;
        let m0 = ModelParams::zeros(gen.m);
        let sync_cfg = TrainConfig {
            eta: 0.3,
            epochs: 3,
            ..TrainConfig::default()
        };
        let async_cfg = TrainConfig {
            mode: TrainMode::Asynchronous,
            ..sync_cfg.clone()
        };
        let a = train(&m0, &data, &async_cfg).unwrap();
        let b = train(&m0, &data, &async_cfg).unwrap();
        assert_eq!(a, b);
        let s = train(&m0, &data, &sync_cfg).unwrap();
        let gap = (&a.final_model.w - &s.final_model.w)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(gap > 1e-9, "update order left no trace at eta 0.3");
    }

    #[test]
    fn rejects_bad_configs_and_empty_data() {
        let data = small_dataset(60, 3, 4);
        let m0 = ModelParams::zeros(4);
        let bad_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&m0, &data, &bad_epochs).is_err());
        let bad_lambda = TrainConfig {
            lambda_pos: 0.0,
            lambda_neg: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&m0, &data, &bad_lambda).is_err());
        assert!(train(&m0, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn synchronous_training_drives_loss_down() {
        // Separable synthetic set (consistent labels): loss falls well below
        // its start within 200 epochs.
        let gen = crate::datagen::GenConfig {
            num_scenarios: 40,
            ..crate::datagen::GenConfig::default()
        };
        let data = crate::datagen::build_paired_dataset(&gen).unwrap().train;
        let cfg = TrainConfig {
            eta: 0.1,
            epochs: 200,
            ..TrainConfig::default()
        };
        let m0 = ModelParams::zeros(gen.m);
        let trace = train(&m0, &data, &cfg).unwrap();
        let last = trace.epochs.last().unwrap().loss_total;
        let initial = data
            .iter()
            .map(|ex| paired_loss(&m0, ex, 1.0, 1.0).unwrap())
            .sum::<f64>()
            / data.len() as f64;
        assert!(
            last < 0.1 * initial,
            "loss {last} did not fall below 0.1 × {initial}"
        );
    }

    #[test]
    fn full_batch_small_step_is_monotone() {
        // Soft property: report the non-increase rate over 100 seeded runs.
        let mut monotone = 0;
        let total = 100;
        for seed in 0..total {
            let data = small_dataset(1000 + seed, 8, 4);
            let cfg = TrainConfig {
                eta: 0.01,
                epochs: 25,
                ..TrainConfig::default()
            };
            let m0 = random_model(2000 + seed, 4, 0.2);
            let trace = train_full_batch(&m0, &data, &cfg).unwrap();
            let losses: Vec<f64> = trace.epochs.iter().map(|e| e.loss_total).collect();
            if losses.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
                monotone += 1;
            }
        }
        println!("full-batch monotone descent on {monotone}/{total} runs");
        assert!(monotone as f64 / total as f64 >= 0.95);
    }

    #[test]
    fn trace_csv_layout() {
        let data = small_dataset(80, 3, 4);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let trace = train(&ModelParams::zeros(4), &data, &cfg).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss_total,loss_pos,loss_neg,param_norm"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn opposed_gradients_cancel() {
        // The gradient is linear in p, so embeddings antipodal about zero
        // with the same label give g₋ = -g₊ and the combined step vanishes.
        let t0 = vec![1.0, 0.0];
        let t1 = vec![-1.0, 0.0];
        let x = Scenario::new(
            0,
            0,
            vec![
                OptionTrait::new(t0, Polarity::Positive).unwrap(),
                OptionTrait::new(t1, Polarity::Negative).unwrap(),
            ],
        )
        .unwrap();
        let desc = PreferenceDescriptor::new("z_pos", 0, Polarity::Positive);
        let e_pos = PreferenceEmbedding {
            vector: vec![0.7, 0.1],
            source: desc.clone(),
        };
        let e_neg = PreferenceEmbedding {
            vector: vec![-0.7, -0.1],
            source: PreferenceDescriptor::new("z_neg", 0, Polarity::Negative),
        };
        // y indices chosen so the two sides are exact mirrors: g₋ = -g₊.
        let ex = PairedExample {
            x,
            p_pos: e_pos,
            p_neg: e_neg,
            y_pos: 0,
            y_neg: 0,
        };
        let model = ModelParams::zeros(2);
        let cfg = TrainConfig {
            eta: 0.2,
            ..TrainConfig::default()
        };
        let stepped = sync_step(&model, &ex, &cfg).unwrap();
        let shift = (&stepped.w - &model.w)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(shift < 1e-15, "opposed gradients did not cancel: {shift}");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "synchronous".parse::<TrainMode>().unwrap(),
            TrainMode::Synchronous
        );
        assert!("sgd".parse::<TrainMode>().is_err());
    }
}
