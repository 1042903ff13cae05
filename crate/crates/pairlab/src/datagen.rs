//! Synthetic value-conflict dataset generation with exact ground truth.
//!
//! Scenarios are numeric stand-ins for value-conflict dilemmas: each option
//! carries a latent trait vector, and its gold side is the sign of the
//! trait's projection onto the pair's conflict axis. Demonstrations label the
//! same scenario twice, once per side, which is what the paired trainer
//! consumes.
//!
//! Trait vectors are isotropic Gaussian draws with the pair-center component
//! projected out. Keeping traits orthogonal to the center makes
//! `⟨trait, p±⟩ = ±radius·⟨trait, axis⟩` exactly, so the demonstrated choice
//! `argmax_c ⟨trait_c, p±⟩` provably lands on the labeled side.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condmodel::{OptionTrait, Polarity, Scenario};
use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::prefspace::{PreferenceManifold, PreferencePair, PreferenceRegistry, DEFAULT_RADIUS};
use crate::trainer::PairedExample;
use crate::vecmath::{dot, norm2, substream_seed};

const SPLIT_TAG: u64 = 0x7370_6c69; // "spli"
const GEN_TAG: u64 = 0x6765_6e00; // "gen"
const MAX_RESAMPLES: usize = 1000;
/// Axis projections smaller than this are treated as ties and redrawn.
const TIE_EPS: f64 = 1e-9;

/// Distribution over the number of options per scenario (2, 3, 4, or 5).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptionCountDist {
    /// Probabilities for 2, 3, 4 and 5 options, in that order.
    pub probs: [f64; 4],
}

impl Default for OptionCountDist {
    fn default() -> Self {
        Self { probs: [0.25; 4] }
    }
}

impl OptionCountDist {
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "option-count probabilities must be nonnegative".into(),
            ));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "option-count probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 2;
            }
        }
        5
    }
}

/// A synthetic user: an intrinsic coordinate and its manifold image.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub z: Vec<f64>,
    pub effective_p: Vec<f64>,
}

impl UserProfile {
    pub fn new(man: &PreferenceManifold, z: Vec<f64>) -> Result<Self> {
        let effective_p = crate::prefspace::manifold_point(man, &z)?;
        Ok(Self { z, effective_p })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenConfig {
    pub num_scenarios: usize,
    #[serde(default)]
    pub options_per_scenario: OptionCountDist,
    pub num_pairs: usize,
    pub m: usize,
    pub d: usize,
    pub trait_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_scenarios: 1250,
            options_per_scenario: OptionCountDist::default(),
            num_pairs: 1,
            m: 8,
            d: 1,
            trait_scale: 1.0,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenarios < 1 {
            return Err(Error::InvalidParameter(
                "num_scenarios must be at least 1".into(),
            ));
        }
        if self.num_pairs < 1 {
            return Err(Error::InvalidParameter(
                "num_pairs must be at least 1".into(),
            ));
        }
        if self.m < 2 {
            return Err(Error::InvalidDimension { m: self.m });
        }
        if self.d < 1 || self.d > 2 * self.num_pairs {
            return Err(Error::InvalidParameter(format!(
                "d={} must satisfy 1 <= d <= K={}",
                self.d,
                2 * self.num_pairs
            )));
        }
        if self.trait_scale <= 0.0 {
            return Err(Error::InvalidParameter(
                "trait_scale must be positive".into(),
            ));
        }
        self.options_per_scenario.validate()
    }

    pub fn registry(&self) -> PreferenceRegistry {
        PreferenceRegistry::with_pairs(self.num_pairs)
    }

    pub fn pairs(&self) -> Result<Vec<PreferencePair>> {
        self.registry().pairs(self.seed, self.m, DEFAULT_RADIUS)
    }
}

/// Draw one scenario for `pair`: trait vectors with both projection signs
/// present, labels from the sign of the axis projection.
pub fn gen_scenario(
    cfg: &GenConfig,
    pair: &PreferencePair,
    rng: &mut ChaCha8Rng,
    id: u64,
) -> Result<Scenario> {
    let m = cfg.m;
    let center_dir: Vec<f64> = {
        let n = norm2(&pair.center);
        pair.center.iter().map(|c| c / n).collect()
    };
    for _attempt in 0..MAX_RESAMPLES {
        let count = cfg.options_per_scenario.sample(rng);
        let mut options = Vec::with_capacity(count);
        for _ in 0..count {
            let trait_vec = loop {
                let mut t: Vec<f64> = (0..m)
                    .map(|_| cfg.trait_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                // Remove the center component; ties on the axis are redrawn.
                let c_comp = dot(&t, &center_dir);
                for (ti, ci) in t.iter_mut().zip(&center_dir) {
                    *ti -= c_comp * ci;
                }
                if dot(&t, &pair.axis).abs() > TIE_EPS {
                    break t;
                }
            };
            let side = if dot(&trait_vec, &pair.axis) > 0.0 {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            options.push(OptionTrait::new(trait_vec, side)?);
        }
        let pos = options
            .iter()
            .filter(|o| o.label_side == Polarity::Positive)
            .count();
        if pos > 0 && pos < options.len() {
            return Scenario::new(id, pair.pair_id(), options);
        }
    }
    Err(Error::Generation(format!(
        "could not draw a scenario with both sides present after {MAX_RESAMPLES} attempts"
    )))
}

/// Generated dataset: train/test split plus the pairs that produced it.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub train: Vec<PairedExample>,
    pub test: Vec<PairedExample>,
    pub pairs: Vec<PreferencePair>,
}

impl PairedDataset {
    pub fn all(&self) -> impl Iterator<Item = &PairedExample> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Index of the option with the largest trait projection onto `p`; ties go
/// to the lowest index.
pub(crate) fn argmax_projection(x: &Scenario, p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, opt) in x.options.iter().enumerate() {
        let s = dot(&opt.trait_vec, p);
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

/// Generate the full paired dataset: scenarios round-robin across pairs, the
/// demonstrated choice per side is the argmax projection onto that side's
/// embedding (ties broken toward the lowest index), then an 80/20 train/test
/// split by seeded shuffle.
pub fn build_paired_dataset(cfg: &GenConfig) -> Result<PairedDataset> {
    cfg.validate()?;
    let pairs = cfg.pairs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, GEN_TAG));
    let mut examples = Vec::with_capacity(cfg.num_scenarios);
    for i in 0..cfg.num_scenarios {
        let pair = &pairs[i % pairs.len()];
        let x = gen_scenario(cfg, pair, &mut rng, i as u64)?;
        let y_pos = argmax_projection(&x, &pair.pos.vector);
        let y_neg = argmax_projection(&x, &pair.neg.vector);
        examples.push(PairedExample {
            x,
            p_pos: pair.pos.clone(),
            p_neg: pair.neg.clone(),
            y_pos,
            y_neg,
        });
    }
    // Shuffling index ranks keeps the split disjoint and exhaustive.
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, SPLIT_TAG));
    use rand::seq::SliceRandom;
    order.shuffle(&mut split_rng);
    let n_train = examples.len() * 8 / 10;
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(examples.len() - n_train);
    for (rank, &idx) in order.iter().enumerate() {
        if rank < n_train {
            train.push(examples[idx].clone());
        } else {
            test.push(examples[idx].clone());
        }
    }
    Ok(PairedDataset { train, test, pairs })
}

/// On-disk image of one paired example. Embeddings are not stored; they are
/// reconstructed from the pair registry on read.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    id: u64,
    pair_id: u32,
    options: Vec<OptionTrait>,
    y_pos: usize,
    y_neg: usize,
}

/// JSONL bytes for a dataset: one JSON object per line, floats at 17
/// significant digits.
pub fn to_jsonl_bytes(dataset: &[PairedExample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for ex in dataset {
        let rec = DatasetRecord {
            id: ex.x.id,
            pair_id: ex.x.pair_id,
            options: ex.x.options.clone(),
            y_pos: ex.y_pos,
            y_neg: ex.y_neg,
        };
        buf.extend_from_slice(jsonfmt::to_json_string(&rec)?.as_bytes());
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Write one JSON object per line, floats at 17 significant digits.
pub fn write_jsonl(dataset: &[PairedExample], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_jsonl_bytes(dataset)?)?;
    Ok(())
}

/// Read a JSONL dataset back, reattaching embeddings from `pairs`.
/// Malformed lines are reported with their 1-based line number.
pub fn read_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<Vec<PairedExample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let pair = pairs
            .iter()
            .find(|p| p.pair_id() == rec.pair_id)
            .ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("unknown pair_id {}", rec.pair_id),
            })?;
        let x = Scenario::new(rec.id, rec.pair_id, rec.options).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        for (y, side) in [
            (rec.y_pos, Polarity::Positive),
            (rec.y_neg, Polarity::Negative),
        ] {
            if y >= x.num_options() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!(
                        "choice index {y} out of range for {} options",
                        x.num_options()
                    ),
                });
            }
            if x.options[y].label_side != side {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("demonstrated choice {y} is not on the {side:?} side"),
                });
            }
        }
        out.push(PairedExample {
            x,
            p_pos: pair.pos.clone(),
            p_neg: pair.neg.clone(),
            y_pos: rec.y_pos,
            y_neg: rec.y_neg,
        });
    }
    Ok(out)
}
