//! Few-shot preference inference: recover a user's intrinsic coordinate from
//! a short choice history and condition predictions on it.
//!
//! Inference is maximum likelihood over a uniform grid on the manifold's
//! intrinsic box (the grid *is* the search space, so the argmax is exact and
//! deterministic; ties go to the lexicographically smallest grid point). A
//! gradient-ascent refinement from the grid argmax is available for callers
//! that want sub-grid resolution.

use crate::condmodel::{self, ModelParams, Scenario};
use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::prefspace::{manifold_point, PreferenceManifold};
use crate::vecmath::dot;

/// Hard cap on the grid dimension; the grid has `grid_per_dim^d` points.
pub const MAX_GRID_DIM: usize = 3;

/// Observed user choices: `(scenario, chosen option index)` events.
#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub events: Vec<(Scenario, usize)>,
}

impl UserHistory {
    pub fn new(events: Vec<(Scenario, usize)>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyInput("user history"));
        }
        for (x, y) in &events {
            if *y >= x.num_options() {
                return Err(Error::InvalidIndex {
                    index: *y,
                    len: x.num_options(),
                });
            }
        }
        Ok(Self { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Result of grid maximum-likelihood inference.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredPreference {
    pub z_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub log_likelihood: f64,
}

impl InferredPreference {
    /// JSON: `{"z_hat": [...], "log_likelihood": float, "k": int, "grid_per_dim": int}`.
    pub fn to_json(&self, k: usize, grid_per_dim: usize) -> Result<String> {
        #[derive(serde::Serialize)]
        struct Image<'a> {
            z_hat: &'a [f64],
            log_likelihood: f64,
            k: usize,
            grid_per_dim: usize,
        }
        jsonfmt::to_json_string(&Image {
            z_hat: &self.z_hat,
            log_likelihood: self.log_likelihood,
            k,
            grid_per_dim,
        })
    }
}

fn history_log_likelihood(model: &ModelParams, history: &UserHistory, p: &[f64]) -> Result<f64> {
    let mut ll = 0.0;
    for (x, y) in &history.events {
        let dist = condmodel::predict_dist(model, x, p)?;
        ll += dist.probs[*y].ln();
    }
    Ok(ll)
}

/// Grid coordinates along one box dimension.
fn grid_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Maximum-likelihood intrinsic coordinate over a uniform grid on the box.
///
/// Every grid point is scored; the strictly-greater argmax update means ties
/// keep the lexicographically smallest point (grid order is lexicographic
/// with the first coordinate slowest).
pub fn infer_z(
    model: &ModelParams,
    man: &PreferenceManifold,
    history: &UserHistory,
    grid_per_dim: usize,
) -> Result<InferredPreference> {
    if grid_per_dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "grid_per_dim must be at least 3, got {grid_per_dim}"
        )));
    }
    if man.d > MAX_GRID_DIM {
        return Err(Error::CapacityExceeded {
            m: man.d,
            max: MAX_GRID_DIM,
        });
    }
    let axes: Vec<Vec<f64>> = man
        .z_box
        .iter()
        .map(|[lo, hi]| grid_axis(*lo, *hi, grid_per_dim))
        .collect();
    let mut best_z: Option<Vec<f64>> = None;
    let mut best_ll = f64::NEG_INFINITY;
    let total: usize = grid_per_dim.pow(man.d as u32);
    let mut idx = vec![0usize; man.d];
    for flat in 0..total {
        // Decode lexicographic index: first coordinate slowest.
        let mut rem = flat;
        for d in (0..man.d).rev() {
            idx[d] = rem % grid_per_dim;
            rem /= grid_per_dim;
        }
        let z: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
        let p = manifold_point(man, &z)?;
        let ll = history_log_likelihood(model, history, &p)?;
        if ll > best_ll {
            best_ll = ll;
            best_z = Some(z);
        }
    }
    let z_hat = best_z.expect("grid is nonempty");
    let p_hat = manifold_point(man, &z_hat)?;
    Ok(InferredPreference {
        z_hat,
        p_hat,
        log_likelihood: best_ll,
    })
}

/// Projected gradient ascent on the history log-likelihood, starting from a
/// grid argmax. Analytic gradient in `z`; iterates are clipped to the box.
/// Never returns a point with lower likelihood than the start.
pub fn refine_z(
    model: &ModelParams,
    man: &PreferenceManifold,
    history: &UserHistory,
    z0: &[f64],
    steps: usize,
    step_size: f64,
) -> Result<InferredPreference> {
    if !man.contains(z0) {
        return Err(Error::InvalidParameter(
            "refinement start must lie in the intrinsic box".into(),
        ));
    }
    let bu = man.b.dot(&man.u); // m×d
    let mut z = z0.to_vec();
    let mut best_z = z.clone();
    let mut best_ll = history_log_likelihood(model, history, &manifold_point(man, &z)?)?;
    for _ in 0..steps {
        let p = manifold_point(man, &z)?;
        // ∇_z log π(y|x, p(z)) = (B·U)ᵀ Wᵀ Σ_c (1[c=y] − probs_c) trait_c.
        let mut grad = vec![0.0; man.d];
        for (x, y) in &history.events {
            let dist = condmodel::predict_dist(model, x, &p)?;
            let m = model.m;
            let mut resid = vec![0.0; m];
            for (c, opt) in x.options.iter().enumerate() {
                let coeff = if c == *y { 1.0 } else { 0.0 } - dist.probs[c];
                for (r, t) in resid.iter_mut().zip(&opt.trait_vec) {
                    *r += coeff * t;
                }
            }
            // Wᵀ resid, then project through B·U.
            let wt_resid: Vec<f64> = (0..m)
                .map(|j| (0..m).map(|i| model.w[[i, j]] * resid[i]).sum())
                .collect();
            for dcol in 0..man.d {
                let col: Vec<f64> = (0..m).map(|i| bu[[i, dcol]]).collect();
                grad[dcol] += dot(&col, &wt_resid);
            }
        }
        for (d, g) in grad.iter().enumerate() {
            z[d] = (z[d] + step_size * g).clamp(man.z_box[d][0], man.z_box[d][1]);
        }
        let ll = history_log_likelihood(model, history, &manifold_point(man, &z)?)?;
        if ll > best_ll {
            best_ll = ll;
            best_z = z.clone();
        }
    }
    let p_hat = manifold_point(man, &best_z)?;
    Ok(InferredPreference {
        z_hat: best_z,
        p_hat,
        log_likelihood: best_ll,
    })
}

/// Single-pick prediction conditioned on the preference inferred from history.
pub fn customized_predict(
    model: &ModelParams,
    man: &PreferenceManifold,
    history: &UserHistory,
    x_new: &Scenario,
    grid_per_dim: usize,
) -> Result<usize> {
    let inferred = infer_z(model, man, history, grid_per_dim)?;
    crate::evalkit::predict_one(model, x_new, &inferred.p_hat)
}
