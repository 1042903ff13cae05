//! Preference descriptors, embeddings, conflict pairs, the low-dimensional
//! user manifold, ε-nets, Lipschitz estimates, and risk-bound calculators.
//!
//! Geometry conventions:
//! - each conflict pair gets a deterministic center direction (norm
//!   [`CENTER_NORM`]) and a unit axis, both derived from `(seed, pair_id)`;
//! - the two sides embed antipodally, `center ± radius · axis`, so the pair
//!   spans a segment of length `2·radius`;
//! - a user manifold is the linear image `p(z) = B·U·z` of a compact box
//!   `z_box = [-1, 1]^d`, with `B` stacking the registry embeddings and `U`
//!   holding orthonormal columns.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condmodel::{self, ModelParams, Polarity, Scenario};
use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::vecmath::{axpy, dist2, dot, norm2, scale, substream_seed};

/// Norm of the pair-specific center direction.
pub const CENTER_NORM: f64 = 1.0;
/// Radius used when a descriptor is embedded without an explicit radius.
pub const DEFAULT_RADIUS: f64 = 0.5;

const PAIR_GEOMETRY_TAG: u64 = 0x7061_6972; // "pair"
const MANIFOLD_TAG: u64 = 0x6d61_6e69; // "mani"

/// A named side of a value conflict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceDescriptor {
    pub name: String,
    pub pair_id: u32,
    pub polarity: Polarity,
}

impl PreferenceDescriptor {
    pub fn new(name: impl Into<String>, pair_id: u32, polarity: Polarity) -> Self {
        Self {
            name: name.into(),
            pair_id,
            polarity,
        }
    }
}

/// Vector embedding of one preference descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceEmbedding {
    pub vector: Vec<f64>,
    pub source: PreferenceDescriptor,
}

/// Two antipodal embeddings expressing conflicting values.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub pos: PreferenceEmbedding,
    pub neg: PreferenceEmbedding,
    pub center: Vec<f64>,
    pub axis: Vec<f64>,
}

impl PreferencePair {
    pub fn pair_id(&self) -> u32 {
        self.pos.source.pair_id
    }

    pub fn separation(&self) -> f64 {
        dist2(&self.pos.vector, &self.neg.vector)
    }
}

fn draw_unit_vector(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm2(&v);
        if n > 1e-9 {
            return scale(&v, 1.0 / n);
        }
    }
}

/// Deterministic (center, axis) geometry for one pair: unit-normalized random
/// directions derived from `(seed, pair_id)`.
fn pair_geometry(pair_id: u32, seed: u64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
        seed,
        PAIR_GEOMETRY_TAG.wrapping_add(pair_id as u64),
    ));
    let center = scale(&draw_unit_vector(&mut rng, m), CENTER_NORM);
    let axis = draw_unit_vector(&mut rng, m);
    (center, axis)
}

/// Embed one descriptor with the default radius.
///
/// Deterministic in `(descriptor, seed, m)`; the two descriptors of a pair
/// land antipodally about the pair's center (see [`make_pair`]).
pub fn embed_descriptor(
    desc: &PreferenceDescriptor,
    seed: u64,
    m: usize,
) -> Result<PreferenceEmbedding> {
    if m < 2 {
        return Err(Error::InvalidDimension { m });
    }
    let (center, axis) = pair_geometry(desc.pair_id, seed, m);
    let vector = axpy(&center, desc.polarity.sign() * DEFAULT_RADIUS, &axis);
    debug_assert!(norm2(&vector) > 0.0);
    Ok(PreferenceEmbedding {
        vector,
        source: desc.clone(),
    })
}

/// Build the antipodal pair `center ± radius·axis` for two descriptors that
/// share a `pair_id` and have opposite polarities.
pub fn make_pair(
    pos: &PreferenceDescriptor,
    neg: &PreferenceDescriptor,
    seed: u64,
    m: usize,
    radius: f64,
) -> Result<PreferencePair> {
    if m < 2 {
        return Err(Error::InvalidDimension { m });
    }
    if pos.pair_id != neg.pair_id {
        return Err(Error::PairMismatch {
            reason: format!("pair_id mismatch: {} vs {}", pos.pair_id, neg.pair_id),
        });
    }
    if pos.polarity != Polarity::Positive || neg.polarity != Polarity::Negative {
        return Err(Error::PairMismatch {
            reason: "descriptors must have positive and negative polarity respectively".into(),
        });
    }
    if radius <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "pair radius must be positive, got {radius}"
        )));
    }
    let (center, axis) = pair_geometry(pos.pair_id, seed, m);
    let pos_emb = PreferenceEmbedding {
        vector: axpy(&center, radius, &axis),
        source: pos.clone(),
    };
    let neg_emb = PreferenceEmbedding {
        vector: axpy(&center, -radius, &axis),
        source: neg.clone(),
    };
    Ok(PreferencePair {
        pos: pos_emb,
        neg: neg_emb,
        center,
        axis,
    })
}

/// Validated collection of descriptors: unique names, every `pair_id` owned
/// by exactly one positive and one negative descriptor.
#[derive(Debug, Clone)]
pub struct PreferenceRegistry {
    descriptors: Vec<PreferenceDescriptor>,
}

impl PreferenceRegistry {
    pub fn new(descriptors: Vec<PreferenceDescriptor>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::EmptyInput("preference registry"));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &descriptors {
            if !names.insert(d.name.clone()) {
                return Err(Error::PairMismatch {
                    reason: format!("duplicate descriptor name {}", d.name),
                });
            }
        }
        let mut by_pair: std::collections::BTreeMap<u32, Vec<Polarity>> =
            std::collections::BTreeMap::new();
        for d in &descriptors {
            by_pair.entry(d.pair_id).or_default().push(d.polarity);
        }
        for (pid, sides) in &by_pair {
            if sides.len() != 2 || sides[0] == sides[1] {
                return Err(Error::PairMismatch {
                    reason: format!("pair {pid} must have exactly one descriptor per polarity"),
                });
            }
        }
        Ok(Self { descriptors })
    }

    /// Registry of `num_pairs` conflict pairs with value-conflict names for
    /// the first four pairs and generated names after that.
    pub fn with_pairs(num_pairs: usize) -> Self {
        const NAMED: [(&str, &str); 4] = [
            ("risk_taking", "risk_averse"),
            ("competitive", "collaborative"),
            ("immediate_gratification", "delayed_gratification"),
            ("intuitive", "analytical"),
        ];
        let mut descriptors = Vec::with_capacity(2 * num_pairs);
        for pid in 0..num_pairs {
            let (pos, neg) = match NAMED.get(pid) {
                Some((p, n)) => (p.to_string(), n.to_string()),
                None => (format!("pair{pid}_pos"), format!("pair{pid}_neg")),
            };
            descriptors.push(PreferenceDescriptor::new(
                pos,
                pid as u32,
                Polarity::Positive,
            ));
            descriptors.push(PreferenceDescriptor::new(
                neg,
                pid as u32,
                Polarity::Negative,
            ));
        }
        Self::new(descriptors).expect("generated registry is valid")
    }

    pub fn descriptors(&self) -> &[PreferenceDescriptor] {
        &self.descriptors
    }

    pub fn num_pairs(&self) -> usize {
        self.descriptors.len() / 2
    }

    /// All pairs, ordered by `pair_id`.
    pub fn pairs(&self, seed: u64, m: usize, radius: f64) -> Result<Vec<PreferencePair>> {
        let mut pair_ids: Vec<u32> = self.descriptors.iter().map(|d| d.pair_id).collect();
        pair_ids.sort_unstable();
        pair_ids.dedup();
        pair_ids
            .into_iter()
            .map(|pid| {
                let pos = self
                    .descriptors
                    .iter()
                    .find(|d| d.pair_id == pid && d.polarity == Polarity::Positive)
                    .expect("validated");
                let neg = self
                    .descriptors
                    .iter()
                    .find(|d| d.pair_id == pid && d.polarity == Polarity::Negative)
                    .expect("validated");
                make_pair(pos, neg, seed, m, radius)
            })
            .collect()
    }

    /// Embeddings in registry order (the columns of `B`).
    pub fn embeddings(&self, seed: u64, m: usize) -> Result<Vec<PreferenceEmbedding>> {
        self.descriptors
            .iter()
            .map(|d| embed_descriptor(d, seed, m))
            .collect()
    }
}

/// The linear user manifold `p(z) = B·U·z`, `z` in a compact box.
#[derive(Debug, Clone)]
pub struct PreferenceManifold {
    /// m×K matrix of all registry embeddings, in registry order.
    pub b: Array2<f64>,
    /// K×d projection with orthonormal columns.
    pub u: Array2<f64>,
    pub d: usize,
    /// Per-coordinate `[lo, hi]` bounds of the intrinsic domain.
    pub z_box: Vec<[f64; 2]>,
    /// Cached m×d product B·U.
    bu: Array2<f64>,
}

impl PreferenceManifold {
    pub fn new(b: Array2<f64>, u: Array2<f64>, z_box: Vec<[f64; 2]>) -> Result<Self> {
        let (m, k) = b.dim();
        let (ku, d) = u.dim();
        if ku != k {
            return Err(Error::ShapeMismatch {
                expected: k,
                got: ku,
            });
        }
        if d < 1 || d > k {
            return Err(Error::InvalidParameter(format!(
                "intrinsic dimension d={d} must satisfy 1 <= d <= K={k}"
            )));
        }
        if z_box.len() != d {
            return Err(Error::LengthMismatch {
                what: "z_box",
                expected: d,
                got: z_box.len(),
            });
        }
        // Orthonormal columns keep coverage-slack accounting honest.
        for a in 0..d {
            for bcol in a..d {
                let ip: f64 = (0..k).map(|i| u[[i, a]] * u[[i, bcol]]).sum();
                let target = if a == bcol { 1.0 } else { 0.0 };
                if (ip - target).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "U columns must be orthonormal".into(),
                    ));
                }
            }
        }
        if m < 1 {
            return Err(Error::InvalidDimension { m });
        }
        if !b.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(
                "embedding matrix entries must be finite".into(),
            ));
        }
        let bu = b.dot(&u);
        Ok(Self { b, u, d, z_box, bu })
    }

    /// Manifold over a registry: `B` from the registry embeddings, `U` with
    /// random orthonormal columns (Gram–Schmidt on a seeded Gaussian draw).
    pub fn from_registry(
        registry: &PreferenceRegistry,
        seed: u64,
        m: usize,
        d: usize,
    ) -> Result<Self> {
        let embeddings = registry.embeddings(seed, m)?;
        let k = embeddings.len();
        let mut b = Array2::<f64>::zeros((m, k));
        for (j, e) in embeddings.iter().enumerate() {
            for i in 0..m {
                b[[i, j]] = e.vector[i];
            }
        }
        let u = random_orthonormal(k, d, substream_seed(seed, MANIFOLD_TAG))?;
        Self::new(b, u, vec![[-1.0, 1.0]; d])
    }

    /// Manifold with an explicit `U` (columns must be orthonormal).
    pub fn from_registry_with_u(
        registry: &PreferenceRegistry,
        seed: u64,
        m: usize,
        u: Array2<f64>,
    ) -> Result<Self> {
        let embeddings = registry.embeddings(seed, m)?;
        let k = embeddings.len();
        let mut b = Array2::<f64>::zeros((m, k));
        for (j, e) in embeddings.iter().enumerate() {
            for i in 0..m {
                b[[i, j]] = e.vector[i];
            }
        }
        let d = u.dim().1;
        Self::new(b, u, vec![[-1.0, 1.0]; d])
    }

    pub fn ambient_dim(&self) -> usize {
        self.b.dim().0
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.d
            && z.iter()
                .zip(&self.z_box)
                .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    /// Frobenius norm of B·U; upper-bounds the z→p Lipschitz constant.
    pub fn bu_frobenius(&self) -> f64 {
        self.bu.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Uniform sample from the intrinsic box.
    pub fn sample_z(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.z_box
            .iter()
            .map(|[lo, hi]| rng.gen_range(*lo..=*hi))
            .collect()
    }
}

fn random_orthonormal(k: usize, d: usize, seed: u64) -> Result<Array2<f64>> {
    if d < 1 || d > k {
        return Err(Error::InvalidParameter(format!(
            "cannot build {k}x{d} orthonormal columns"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..k)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // Modified Gram–Schmidt against accepted columns.
        for c in &cols {
            let ip = dot(&v, c);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= ip * ci;
            }
        }
        let n = norm2(&v);
        if n > 1e-6 {
            cols.push(scale(&v, 1.0 / n));
        }
    }
    let mut u = Array2::<f64>::zeros((k, d));
    for (j, c) in cols.iter().enumerate() {
        for i in 0..k {
            u[[i, j]] = c[i];
        }
    }
    Ok(u)
}

/// Evaluate `p(z) = B·U·z`; `z` must lie inside the box.
pub fn manifold_point(man: &PreferenceManifold, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != man.d {
        return Err(Error::LengthMismatch {
            what: "z",
            expected: man.d,
            got: z.len(),
        });
    }
    for (i, (v, [lo, hi])) in z.iter().zip(&man.z_box).enumerate() {
        if *v < *lo || *v > *hi {
            return Err(Error::OutOfDomain {
                index: i,
                value: *v,
                lo: *lo,
                hi: *hi,
            });
        }
    }
    let p: Array1<f64> = man.bu.dot(&ndarray::aview1(z));
    Ok(p.to_vec())
}

/// Finite anchor set covering a point cloud within radius ε.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsNet {
    pub anchors: Vec<Vec<f64>>,
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl EpsNet {
    pub fn to_json(&self) -> Result<String> {
        jsonfmt::to_json_string(self)
    }

    /// Distance from `p` to the nearest anchor.
    pub fn nearest_distance(&self, p: &[f64]) -> f64 {
        self.anchors
            .iter()
            .map(|a| dist2(a, p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Greedy sequential covering: scan the points in order and promote a point
/// to anchor iff no existing anchor is within ε of it. Every input point ends
/// up within ε of some anchor.
pub fn greedy_eps_net(points: &[Vec<f64>], epsilon: f64) -> Result<EpsNet> {
    if points.is_empty() {
        return Err(Error::EmptyInput("eps-net points"));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut anchors: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let covered = anchors.iter().any(|a| dist2(a, p) <= epsilon);
        if !covered {
            anchors.push(p.clone());
        }
    }
    let m = anchors.len();
    Ok(EpsNet {
        anchors,
        epsilon,
        m,
    })
}

/// Empirical preference-Lipschitz estimate.
#[derive(Debug, Clone)]
pub struct LipschitzEstimate {
    pub l_p: f64,
    pub num_probe_pairs: usize,
    /// The probe pair of embeddings achieving the max ratio.
    pub max_ratio_witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Estimate the loss's sensitivity to the preference embedding: the max of
/// `|ℓ̄(x,p,y) − ℓ̄(x,p′,y)| / ‖p−p′‖₂` over probe pairs sampled from the
/// manifold, with a shared `(x, y)` drawn per probe. Uses the bounded loss.
pub fn estimate_lipschitz(
    model: &ModelParams,
    man: &PreferenceManifold,
    data_source: &[(Scenario, usize)],
    num_probes: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if num_probes < 1 {
        return Err(Error::InvalidParameter(
            "num_probes must be at least 1".into(),
        ));
    }
    if data_source.is_empty() {
        return Err(Error::EmptyInput("lipschitz scenario sampler"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, 0x4c69_7073));
    let mut best = 0.0_f64;
    let mut witness = None;
    let mut used = 0usize;
    for _ in 0..num_probes {
        let p = manifold_point(man, &man.sample_z(&mut rng))?;
        let q = manifold_point(man, &man.sample_z(&mut rng))?;
        let sep = dist2(&p, &q);
        if sep <= 1e-12 {
            // Coincident probes carry no slope information.
            continue;
        }
        let (x, y) = &data_source[rng.gen_range(0..data_source.len())];
        let lp = condmodel::normalized_loss(model, x, &p, *y)?;
        let lq = condmodel::normalized_loss(model, x, &q, *y)?;
        let ratio = (lp - lq).abs() / sep;
        used += 1;
        if ratio > best {
            best = ratio;
            witness = Some((p, q));
        }
    }
    Ok(LipschitzEstimate {
        l_p: best,
        num_probe_pairs: used,
        max_ratio_witness: witness,
    })
}

/// Grid estimate of the worst-case distance from the segment `[p⁻, p⁺]` to
/// its own endpoints, with the discretization slack reported alongside.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRadius {
    pub radius: f64,
    pub grid_slack: f64,
}

/// Max over segment grid points of the distance to the nearer endpoint.
/// Bounded by half the pair separation (plus grid slack).
pub fn pair_segment_radius(pair: &PreferencePair, num_grid: usize) -> Result<SegmentRadius> {
    if num_grid < 3 {
        return Err(Error::InvalidParameter(format!(
            "num_grid must be at least 3, got {num_grid}"
        )));
    }
    let sep = pair.separation();
    let mut radius = 0.0_f64;
    for i in 0..num_grid {
        let t = i as f64 / (num_grid - 1) as f64;
        let p: Vec<f64> = pair
            .neg
            .vector
            .iter()
            .zip(&pair.pos.vector)
            .map(|(n, q)| n + t * (q - n))
            .collect();
        let d = dist2(&p, &pair.pos.vector).min(dist2(&p, &pair.neg.vector));
        radius = radius.max(d);
    }
    Ok(SegmentRadius {
        radius,
        grid_slack: sep / (num_grid - 1) as f64,
    })
}

/// All terms of the uniform risk bound
/// `max_emp_risk + L_p·ε + sqrt(log(2M/δ) / (2n))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskBoundReport {
    pub max_emp_risk: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    pub delta: f64,
    pub lipschitz_term: f64,
    pub concentration_term: f64,
    pub bound: f64,
}

impl RiskBoundReport {
    pub fn to_json(&self) -> Result<String> {
        jsonfmt::to_json_string(self)
    }
}

/// Assemble the uniform risk bound over an ε-net of M anchors with n samples
/// per anchor at confidence 1−δ. Uses the two-sided `log(2M/δ)` constant.
pub fn uniform_risk_bound(
    max_emp_risk: f64,
    l_p: f64,
    epsilon: f64,
    m: usize,
    n: usize,
    delta: f64,
) -> Result<RiskBoundReport> {
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    if n < 1 || m < 1 {
        return Err(Error::InvalidParameter(
            "need at least one anchor and one sample".into(),
        ));
    }
    if !(0.0..=1.0).contains(&max_emp_risk) {
        return Err(Error::InvalidParameter(format!(
            "max_emp_risk must be in [0, 1], got {max_emp_risk}"
        )));
    }
    if l_p < 0.0 || epsilon < 0.0 {
        return Err(Error::InvalidParameter(
            "L_p and epsilon must be nonnegative".into(),
        ));
    }
    let lipschitz_term = l_p * epsilon;
    let concentration_term = ((2.0 * m as f64 / delta).ln() / (2.0 * n as f64)).sqrt();
    Ok(RiskBoundReport {
        max_emp_risk,
        l_p,
        epsilon,
        m,
        n,
        delta,
        lipschitz_term,
        concentration_term,
        bound: max_emp_risk + lipschitz_term + concentration_term,
    })
}

/// One-sided tail bound `exp(-2·n·t²)` for means of `[0,1]` variables.
pub fn hoeffding_bound(n: usize, t: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if t <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "t must be positive, got {t}"
        )));
    }
    Ok((-2.0 * n as f64 * t * t).exp())
}

/// Monte-Carlo frequency of the one-sided deviation `mean − X̄ ≥ t` for
/// Bernoulli(`mean`) samples. Each trial runs on its own deterministic
/// substream of `seed`, so the result is reproducible and trial-parallel safe.
pub fn hoeffding_violation_mc(
    n: usize,
    t: f64,
    trials: usize,
    mean: f64,
    seed: u64,
) -> Result<f64> {
    if trials < 1 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::InvalidParameter(format!(
            "mean must be in [0, 1], got {mean}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut violations = 0usize;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, trial as u64));
        let mut hits = 0usize;
        for _ in 0..n {
            if rng.gen::<f64>() < mean {
                hits += 1;
            }
        }
        let sample_mean = hits as f64 / n as f64;
        if mean - sample_mean >= t {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}
