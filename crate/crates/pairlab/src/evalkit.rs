//! Multiple-choice evaluation protocols with per-side reports.
//!
//! Two protocols are scored against per-side gold sets:
//!
//! - pick-the-best: the model selects exactly one option (argmax, ties to the
//!   lowest index); correct iff the pick lies in the target side's gold set.
//! - select-all-that-apply: the model selects every option whose probability
//!   is at least the uniform level `1/#options`. A scenario scores 1 on an
//!   exact match with the gold set, 0 if the selection touches the opposite
//!   side's set, and partial credit `|Ŝ∩S|/|S|` otherwise — the exact-match
//!   case is checked first.
//!
//! Accuracies are reported as fractions in `[0, 1]`; any ×100 rendering is
//! left to callers.

use crate::condmodel::{self, ModelParams, Polarity, Scenario};
use crate::error::{Error, Result};
use crate::jsonfmt;

/// Per-scenario gold option-index sets, one per side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideSets {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

/// Gold sets for a list of scenarios, in scenario order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSets {
    pub per_scenario: Vec<SideSets>,
}

impl GoldSets {
    /// Derive gold sets from the scenarios' stored option labels.
    pub fn from_scenarios<'a>(scenarios: impl IntoIterator<Item = &'a Scenario>) -> Self {
        let per_scenario = scenarios
            .into_iter()
            .map(|x| {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for (i, opt) in x.options.iter().enumerate() {
                    match opt.label_side {
                        Polarity::Positive => pos.push(i),
                        Polarity::Negative => neg.push(i),
                    }
                }
                SideSets { pos, neg }
            })
            .collect();
        Self { per_scenario }
    }

    pub fn len(&self) -> usize {
        self.per_scenario.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_scenario.is_empty()
    }

    fn side(&self, idx: usize, side: Polarity) -> &[usize] {
        match side {
            Polarity::Positive => &self.per_scenario[idx].pos,
            Polarity::Negative => &self.per_scenario[idx].neg,
        }
    }
}

/// Argmax prediction; ties resolve to the lowest option index.
pub fn predict_one(model: &ModelParams, x: &Scenario, p: &[f64]) -> Result<usize> {
    let dist = condmodel::predict_dist(model, x, p)?;
    let mut best = 0;
    let mut best_prob = dist.probs[0];
    for (i, q) in dist.probs.iter().enumerate().skip(1) {
        if *q > best_prob {
            best_prob = *q;
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of scenarios whose single pick lands in the target gold set.
pub fn acc_one(predictions: &[usize], gold: &GoldSets, side: Polarity) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: gold.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let hits = predictions
        .iter()
        .enumerate()
        .filter(|(s, y)| gold.side(*s, side).contains(y))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Subset prediction: all options at or above the uniform probability level.
/// Never empty, since the max probability is at least the mean.
pub fn predict_all(model: &ModelParams, x: &Scenario, p: &[f64]) -> Result<Vec<usize>> {
    let dist = condmodel::predict_dist(model, x, p)?;
    let threshold = 1.0 / x.num_options() as f64;
    Ok(dist
        .probs
        .iter()
        .enumerate()
        .filter(|(_, q)| **q >= threshold)
        .map(|(i, _)| i)
        .collect())
}

/// Per-scenario subset score: exact match first, then wrong-side overlap,
/// then partial credit.
fn subset_score(pred: &[usize], gold: &[usize], wrong: &[usize]) -> f64 {
    let pred_set: Vec<usize> = {
        let mut v = pred.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut gold_sorted = gold.to_vec();
    gold_sorted.sort_unstable();
    if pred_set == gold_sorted {
        return 1.0;
    }
    if pred_set.iter().any(|i| wrong.contains(i)) {
        return 0.0;
    }
    let inter = pred_set.iter().filter(|i| gold_sorted.contains(i)).count();
    inter as f64 / gold_sorted.len() as f64
}

/// Mean subset score over scenarios for one target side.
pub fn acc_all(pred_sets: &[Vec<usize>], gold: &GoldSets, side: Polarity) -> Result<f64> {
    if pred_sets.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "prediction sets",
            expected: gold.len(),
            got: pred_sets.len(),
        });
    }
    if pred_sets.is_empty() {
        return Err(Error::EmptyInput("prediction sets"));
    }
    let mut acc = 0.0;
    for (s, pred) in pred_sets.iter().enumerate() {
        acc += subset_score(pred, gold.side(s, side), gold.side(s, side.flipped()));
    }
    Ok(acc / pred_sets.len() as f64)
}

/// Accuracies of both protocols under both conditioning sides.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub acc_one_pos: f64,
    pub acc_one_neg: f64,
    pub acc_one_avg: f64,
    pub acc_all_pos: f64,
    pub acc_all_neg: f64,
    pub acc_all_avg: f64,
    pub n_scenarios: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "pair_id,acc_one_pos,acc_one_neg,acc_one_avg,acc_all_pos,acc_all_neg,acc_all_avg,n";

    pub fn csv_row(&self, pair_id: u32) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            pair_id,
            jsonfmt::fmt_f64(self.acc_one_pos),
            jsonfmt::fmt_f64(self.acc_one_neg),
            jsonfmt::fmt_f64(self.acc_one_avg),
            jsonfmt::fmt_f64(self.acc_all_pos),
            jsonfmt::fmt_f64(self.acc_all_neg),
            jsonfmt::fmt_f64(self.acc_all_avg),
            self.n_scenarios
        )
    }
}

/// Evaluate both protocols conditioned on `p⁺` and on `p⁻` over a test split.
pub fn per_preference_report(
    model: &ModelParams,
    scenarios: &[Scenario],
    p_pos: &[f64],
    p_neg: &[f64],
) -> Result<MetricReport> {
    if scenarios.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let gold = GoldSets::from_scenarios(scenarios.iter());
    let mut ones_pos = Vec::with_capacity(scenarios.len());
    let mut ones_neg = Vec::with_capacity(scenarios.len());
    let mut alls_pos = Vec::with_capacity(scenarios.len());
    let mut alls_neg = Vec::with_capacity(scenarios.len());
    for x in scenarios {
        ones_pos.push(predict_one(model, x, p_pos)?);
        ones_neg.push(predict_one(model, x, p_neg)?);
        alls_pos.push(predict_all(model, x, p_pos)?);
        alls_neg.push(predict_all(model, x, p_neg)?);
    }
    let acc_one_pos = acc_one(&ones_pos, &gold, Polarity::Positive)?;
    let acc_one_neg = acc_one(&ones_neg, &gold, Polarity::Negative)?;
    let acc_all_pos = acc_all(&alls_pos, &gold, Polarity::Positive)?;
    let acc_all_neg = acc_all(&alls_neg, &gold, Polarity::Negative)?;
    Ok(MetricReport {
        acc_one_pos,
        acc_one_neg,
        acc_one_avg: (acc_one_pos + acc_one_neg) / 2.0,
        acc_all_pos,
        acc_all_neg,
        acc_all_avg: (acc_all_pos + acc_all_neg) / 2.0,
        n_scenarios: scenarios.len(),
    })
}
