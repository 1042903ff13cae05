//! Preference-conditioned probabilistic model over a scenario's options.
//!
//! The model scores each candidate option `c` of a scenario as the bilinear
//! form `score(c) = trait_cᵀ · W · p`, where `p` is a preference embedding,
//! and turns scores into a distribution with a softmax. The bilinear scorer
//! is the smallest model that is genuinely preference-conditioned while
//! admitting exact gradients and Hessians in `W`, which the update-dynamics
//! checks in [`crate::trainer`] rely on.
//!
//! Two loss views coexist:
//! - [`xent_loss`]: raw cross-entropy, used by training.
//! - [`normalized_loss`]: cross-entropy divided by `ln(#options)` and clamped
//!   to `[0, 1]`, used only by the risk-bound machinery in
//!   [`crate::prefspace`] which needs a `[0,1]`-bounded loss.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::vecmath::dot;

/// Hard cap on `m` for dense `m² × m²` Hessians (65 536 entries at the cap).
pub const HESSIAN_DIM_CAP: usize = 16;

/// Which side of a value conflict an option or descriptor expresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One candidate option: a latent behavioral trait vector plus its gold side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionTrait {
    #[serde(rename = "trait")]
    pub trait_vec: Vec<f64>,
    #[serde(rename = "side")]
    pub label_side: Polarity,
}

impl OptionTrait {
    pub fn new(trait_vec: Vec<f64>, label_side: Polarity) -> Result<Self> {
        if !trait_vec.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(
                "option trait entries must be finite".into(),
            ));
        }
        Ok(Self {
            trait_vec,
            label_side,
        })
    }
}

/// A decision scenario: 2–5 candidate options probing one conflict pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub pair_id: u32,
    pub options: Vec<OptionTrait>,
}

impl Scenario {
    pub fn new(id: u64, pair_id: u32, options: Vec<OptionTrait>) -> Result<Self> {
        if options.len() < 2 || options.len() > 5 {
            return Err(Error::InvalidParameter(format!(
                "scenario {id} must have 2..=5 options, got {}",
                options.len()
            )));
        }
        let pos = options
            .iter()
            .filter(|o| o.label_side == Polarity::Positive)
            .count();
        if pos == 0 || pos == options.len() {
            return Err(Error::InvalidParameter(format!(
                "scenario {id} must have at least one option per side"
            )));
        }
        Ok(Self {
            id,
            pair_id,
            options,
        })
    }

    pub fn num_options(&self) -> usize {
        self.options.len()
    }
}

/// Trainable parameters: the bilinear scoring matrix `W` (m×m).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w: Array2<f64>,
    pub m: usize,
}

/// JSON image of [`ModelParams`]: row-major `W`.
#[derive(Serialize, Deserialize)]
struct ModelParamsJson {
    m: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(m: usize) -> Self {
        Self {
            w: Array2::zeros((m, m)),
            m,
        }
    }

    pub fn new(w: Array2<f64>) -> Result<Self> {
        let (r, c) = w.dim();
        if r != c {
            return Err(Error::ShapeMismatch {
                expected: r,
                got: c,
            });
        }
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(
                "model matrix entries must be finite".into(),
            ));
        }
        Ok(Self { w, m: r })
    }

    /// Row-major flattening of `W`, the vectorization used by Hessians.
    pub fn flat(&self) -> Vec<f64> {
        self.w.iter().copied().collect()
    }

    pub fn from_flat(m: usize, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != m * m {
            return Err(Error::LengthMismatch {
                what: "W",
                expected: m * m,
                got: flat.len(),
            });
        }
        let w = Array2::from_shape_vec((m, m), flat).expect("length checked");
        Self::new(w)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        jsonfmt::to_json_string(&ModelParamsJson {
            m: self.m,
            w: self.flat(),
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let img: ModelParamsJson = serde_json::from_str(json)?;
        Self::from_flat(img.m, img.w)
    }
}

/// Softmax distribution over a scenario's options.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDist {
    pub probs: Vec<f64>,
}

fn scores(model: &ModelParams, x: &Scenario, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != model.m {
        return Err(Error::ShapeMismatch {
            expected: model.m,
            got: p.len(),
        });
    }
    // W·p once, then one dot per option.
    let wp: Array1<f64> = model.w.dot(&ndarray::aview1(p));
    let wp = wp.as_slice().expect("contiguous");
    Ok(x.options.iter().map(|o| dot(&o.trait_vec, wp)).collect())
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Conditional distribution over options given scenario `x` and preference `p`.
pub fn predict_dist(model: &ModelParams, x: &Scenario, p: &[f64]) -> Result<PredictionDist> {
    let s = scores(model, x, p)?;
    Ok(PredictionDist { probs: softmax(&s) })
}

/// Cross-entropy loss `-ln probs[y]` of option `y`.
pub fn xent_loss(model: &ModelParams, x: &Scenario, p: &[f64], y: usize) -> Result<f64> {
    let dist = predict_dist(model, x, p)?;
    let prob = *dist.probs.get(y).ok_or(Error::InvalidIndex {
        index: y,
        len: dist.probs.len(),
    })?;
    Ok(-prob.ln())
}

/// Cross-entropy normalized by `ln(#options)` and clamped to `[0, 1]`.
///
/// A uniform prediction maps to exactly 1, a perfect one to 0. This is the
/// bounded loss consumed by the risk-bound machinery; training always uses
/// the raw [`xent_loss`].
pub fn normalized_loss(model: &ModelParams, x: &Scenario, p: &[f64], y: usize) -> Result<f64> {
    let raw = xent_loss(model, x, p, y)?;
    let denom = (x.num_options() as f64).ln();
    Ok((raw / denom).min(1.0))
}

/// Closed-form gradient of [`xent_loss`] with respect to `W`:
/// `Σ_c (probs[c] − 1[c=y]) · trait_c · pᵀ`.
pub fn grad_loss(model: &ModelParams, x: &Scenario, p: &[f64], y: usize) -> Result<Array2<f64>> {
    let dist = predict_dist(model, x, p)?;
    if y >= dist.probs.len() {
        return Err(Error::InvalidIndex {
            index: y,
            len: dist.probs.len(),
        });
    }
    let m = model.m;
    let mut grad = Array2::<f64>::zeros((m, m));
    for (c, opt) in x.options.iter().enumerate() {
        let coeff = dist.probs[c] - if c == y { 1.0 } else { 0.0 };
        for i in 0..m {
            let ti = coeff * opt.trait_vec[i];
            for (j, pj) in p.iter().enumerate() {
                grad[[i, j]] += ti * pj;
            }
        }
    }
    Ok(grad)
}

/// Closed-form Hessian of [`xent_loss`] with respect to the row-major
/// vectorization of `W`.
///
/// With `v_c = vec(trait_c · pᵀ)` the Hessian is the softmax covariance
/// `Σ_c probs[c]·v_c v_cᵀ − (Σ_c probs[c]·v_c)(Σ_c probs[c]·v_c)ᵀ`,
/// symmetric positive semidefinite by construction. Dense `m²×m²` storage is
/// capped at `m ≤ 16`.
pub fn hessian_loss(model: &ModelParams, x: &Scenario, p: &[f64], y: usize) -> Result<Array2<f64>> {
    if model.m > HESSIAN_DIM_CAP {
        return Err(Error::CapacityExceeded {
            m: model.m,
            max: HESSIAN_DIM_CAP,
        });
    }
    let dist = predict_dist(model, x, p)?;
    if y >= dist.probs.len() {
        return Err(Error::InvalidIndex {
            index: y,
            len: dist.probs.len(),
        });
    }
    let m = model.m;
    let dim = m * m;
    // v_c = vec(trait_c pᵀ) in row-major order: v_c[i*m + j] = trait_c[i] * p[j].
    let vs: Vec<Vec<f64>> = x
        .options
        .iter()
        .map(|o| {
            let mut v = Vec::with_capacity(dim);
            for i in 0..m {
                for pj in p {
                    v.push(o.trait_vec[i] * pj);
                }
            }
            v
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for (c, v) in vs.iter().enumerate() {
        for (mk, vk) in mean.iter_mut().zip(v) {
            *mk += dist.probs[c] * vk;
        }
    }
    let mut hess = Array2::<f64>::zeros((dim, dim));
    for (c, v) in vs.iter().enumerate() {
        let pc = dist.probs[c];
        for a in 0..dim {
            let pa = pc * v[a];
            for b in 0..dim {
                hess[[a, b]] += pa * v[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..dim {
            hess[[a, b]] -= mean[a] * mean[b];
        }
    }
    Ok(hess)
}

/// Exact weighted expectation of [`normalized_loss`] over a finite support.
pub fn population_risk(
    model: &ModelParams,
    support: &[(Scenario, usize, f64)],
    p: &[f64],
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::EmptyInput("population support"));
    }
    let total: f64 = support.iter().map(|(_, _, w)| *w).sum();
    if support.iter().any(|(_, _, w)| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "support weights must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    let mut acc = 0.0;
    for (x, y, w) in support {
        acc += w * normalized_loss(model, x, p, *y)?;
    }
    Ok(acc)
}

/// Mean of [`normalized_loss`] over drawn samples.
pub fn empirical_risk(
    model: &ModelParams,
    samples: &[(Scenario, usize)],
    p: &[f64],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empirical risk samples"));
    }
    let mut acc = 0.0;
    for (x, y) in samples {
        acc += normalized_loss(model, x, p, *y)?;
    }
    Ok(acc / samples.len() as f64)
}
