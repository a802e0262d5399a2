//! Logistic regression with speaker-disjoint stratified cross-validation and
//! ROC-AUC scoring.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{standardize, SegmentFeatures};
use crate::signal::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("both classes are required, found only {0}")]
    SingleClass(&'static str),
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: model has {expected} weights, row has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} speakers per class for {needed}-fold CV, have {positive} positive and {negative} negative")]
    TooFewSpeakers {
        needed: usize,
        positive: usize,
        negative: usize,
    },
    #[error("need k >= 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("speaker {0} carries both labels")]
    ConflictingLabels(String),
    #[error("segment {0} has no label")]
    Unlabeled(String),
    #[error("speaker {0} is not covered by the CV plan")]
    UnknownSpeaker(String),
    #[error("fold {fold}: speaker {speaker} is in both train and test")]
    SpeakerLeak { fold: usize, speaker: String },
    #[error("every fold was degenerate")]
    AllFoldsDegenerate,
    #[error("non-finite score")]
    NonFiniteScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

impl LogisticModel {
    /// Affine decision values `w.x + b`.
    pub fn decision(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, ClassifyError> {
        x.iter()
            .map(|row| {
                if row.len() != self.weights.len() {
                    return Err(ClassifyError::DimensionMismatch {
                        expected: self.weights.len(),
                        found: row.len(),
                    });
                }
                Ok(dot(&self.weights, row) + self.bias)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2`; the bias is not penalized.
pub fn logistic_loss(m: &LogisticModel, x: &[Vec<f64>], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let ce: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = dot(&m.weights, row) + m.bias;
            // log(1 + e^z) - t z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - if t { z } else { 0.0 }
        })
        .sum();
    ce / n + 0.5 * m.l2 * m.weights.iter().map(|w| w * w).sum::<f64>()
}

fn check_classes(y: &[bool]) -> Result<(), ClassifyError> {
    if y.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if y.iter().all(|&t| t) {
        return Err(ClassifyError::SingleClass("positive"));
    }
    if y.iter().all(|&t| !t) {
        return Err(ClassifyError::SingleClass("negative"));
    }
    Ok(())
}

/// Full-batch gradient descent from zero weights.
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
    epochs: usize,
    lr: f64,
) -> Result<LogisticModel, ClassifyError> {
    fit_logistic_traced(x, y, l2, epochs, lr).map(|(m, _)| m)
}

/// As [`fit_logistic`], also returning the loss before each epoch and after
/// the last one.
pub fn fit_logistic_traced(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
    epochs: usize,
    lr: f64,
) -> Result<(LogisticModel, Vec<f64>), ClassifyError> {
    check_classes(y)?;
    assert_eq!(x.len(), y.len(), "one label per row");
    let dim = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != dim) {
        return Err(ClassifyError::DimensionMismatch {
            expected: dim,
            found: row.len(),
        });
    }
    let n = x.len() as f64;
    let mut m = LogisticModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        l2,
    };
    let mut trace = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        trace.push(logistic_loss(&m, x, y));
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(y) {
            let err = sigmoid(dot(&m.weights, row) + m.bias) - if t { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(row) {
                *g += err * v;
            }
            gb += err;
        }
        for (w, g) in m.weights.iter_mut().zip(&gw) {
            *w -= lr * (g / n + l2 * *w);
        }
        m.bias -= lr * gb / n;
    }
    trace.push(logistic_loss(&m, x, y));
    Ok((m, trace))
}

/// Probabilities of the positive class, kept strictly inside (0, 1).
pub fn predict_scores(m: &LogisticModel, x: &[Vec<f64>]) -> Result<Vec<f64>, ClassifyError> {
    Ok(m.decision(x)?
        .into_iter()
        .map(|z| sigmoid(z.clamp(-36.0, 36.0)))
        .collect())
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, ClassifyError> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    check_classes(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ClassifyError::NonFiniteScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, kept integral
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    let n_pos = labels.iter().filter(|&&t| t).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

/// Stratified k-fold over speakers: each class is shuffled and dealt
/// round-robin, so every speaker lands in exactly one test fold.
pub fn make_cv_plan(speakers: &[(String, Label)], k: usize, seed: u64) -> Result<CvPlan, ClassifyError> {
    if k < 2 {
        return Err(ClassifyError::InvalidFolds(k));
    }
    let mut by_speaker: BTreeMap<&str, Label> = BTreeMap::new();
    for (id, label) in speakers {
        if let Some(prev) = by_speaker.insert(id, *label) {
            if prev != *label {
                return Err(ClassifyError::ConflictingLabels(id.clone()));
            }
        }
    }
    let mut pos: Vec<&str> = by_speaker.iter().filter(|(_, l)| l.is_positive()).map(|(s, _)| *s).collect();
    let mut neg: Vec<&str> = by_speaker.iter().filter(|(_, l)| !l.is_positive()).map(|(s, _)| *s).collect();
    if pos.len() < k || neg.len() < k {
        return Err(ClassifyError::TooFewSpeakers {
            needed: k,
            positive: pos.len(),
            negative: neg.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut tests: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    for (i, s) in pos.iter().enumerate() {
        tests[i % k].insert(s.to_string());
    }
    // continue dealing where the positives stopped to even out fold sizes
    let offset = pos.len() % k;
    for (i, s) in neg.iter().enumerate() {
        tests[(i + offset) % k].insert(s.to_string());
    }
    let all: BTreeSet<String> = by_speaker.keys().map(|s| s.to_string()).collect();
    let folds = tests
        .into_iter()
        .map(|test| Fold {
            train: all.difference(&test).cloned().collect(),
            test,
        })
        .collect();
    Ok(CvPlan { folds, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Number of speaker-disjoint folds.
    pub folds: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            epochs: 500,
            lr: 0.5,
            folds: 3,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.epochs == 0 {
            return Err("epochs must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be > 0, got {}", self.lr));
        }
        if self.folds < 2 {
            return Err(format!("folds must be >= 2, got {}", self.folds));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// `None` for a degenerate fold (one class in train or test).
    pub auc: Option<f64>,
    pub n_train_segments: usize,
    pub n_test_segments: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean_auc: f64,
    /// Population standard deviation over the non-degenerate folds.
    pub std_auc: f64,
    pub config: ClassifierConfig,
}

/// Speaker ids with their labels, in first-seen order.
pub fn speaker_labels(features: &[SegmentFeatures]) -> Result<Vec<(String, Label)>, ClassifyError> {
    let mut seen: BTreeMap<&str, Label> = BTreeMap::new();
    let mut out = Vec::new();
    for f in features {
        let label = f.label.ok_or_else(|| ClassifyError::Unlabeled(f.segment_id.clone()))?;
        match seen.insert(&f.speaker_id, label) {
            None => out.push((f.speaker_id.clone(), label)),
            Some(prev) if prev != label => return Err(ClassifyError::ConflictingLabels(f.speaker_id.clone())),
            Some(_) => {}
        }
    }
    Ok(out)
}

/// Check that no fold shares a speaker between its train and test sets.
pub fn assert_speaker_disjoint(plan: &CvPlan) -> Result<(), ClassifyError> {
    for (i, fold) in plan.folds.iter().enumerate() {
        if let Some(s) = fold.train.intersection(&fold.test).next() {
            return Err(ClassifyError::SpeakerLeak {
                fold: i,
                speaker: s.clone(),
            });
        }
    }
    Ok(())
}

/// Cross-validated AUC: per fold, standardize on train, fit, score test.
pub fn evaluate(
    features: &[SegmentFeatures],
    plan: &CvPlan,
    cfg: &ClassifierConfig,
) -> Result<EvalReport, ClassifyError> {
    if features.is_empty() {
        return Err(ClassifyError::Empty);
    }
    assert_speaker_disjoint(plan)?;
    let labels = speaker_labels(features)?;
    let covered: BTreeSet<&String> = plan.folds.iter().flat_map(|f| f.test.iter()).collect();
    if let Some((s, _)) = labels.iter().find(|(s, _)| !covered.contains(s)) {
        return Err(ClassifyError::UnknownSpeaker(s.clone()));
    }

    let folds: Vec<(FoldReport, Option<f64>)> = plan
        .folds
        .par_iter()
        .map(|fold| run_fold(features, fold, cfg))
        .collect::<Result<_, _>>()?;
    let aucs: Vec<f64> = folds.iter().filter_map(|(_, a)| *a).collect();
    if aucs.is_empty() {
        return Err(ClassifyError::AllFoldsDegenerate);
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let std = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aucs.len() as f64).sqrt();
    Ok(EvalReport {
        folds: folds.into_iter().map(|(r, _)| r).collect(),
        mean_auc: mean,
        std_auc: std,
        config: *cfg,
    })
}

fn run_fold(
    features: &[SegmentFeatures],
    fold: &Fold,
    cfg: &ClassifierConfig,
) -> Result<(FoldReport, Option<f64>), ClassifyError> {
    let train: Vec<SegmentFeatures> = features.iter().filter(|f| fold.train.contains(&f.speaker_id)).cloned().collect();
    let test: Vec<SegmentFeatures> = features.iter().filter(|f| fold.test.contains(&f.speaker_id)).cloned().collect();
    let y_train: Vec<bool> = train.iter().map(|f| f.label.is_some_and(Label::is_positive)).collect();
    let y_test: Vec<bool> = test.iter().map(|f| f.label.is_some_and(Label::is_positive)).collect();
    let mut report = FoldReport {
        auc: None,
        n_train_segments: train.len(),
        n_test_segments: test.len(),
        degenerate: true,
    };
    if check_classes(&y_train).is_err() || check_classes(&y_test).is_err() {
        return Ok((report, None));
    }
    let (x_train, x_test, _) = standardize(&train, &test);
    let model = fit_logistic(&x_train, &y_train, cfg.l2, cfg.epochs, cfg.lr)?;
    // rank on decision values so saturated probabilities do not tie
    let auc = roc_auc(&model.decision(&x_test)?, &y_test)?;
    report.auc = Some(auc);
    report.degenerate = false;
    Ok((report, Some(auc)))
}

/// Reassign speaker labels by a seeded permutation, keeping each speaker's
/// segments consistent.
pub fn shuffle_speaker_labels(features: &[SegmentFeatures], seed: u64) -> Result<Vec<SegmentFeatures>, ClassifyError> {
    let speakers = speaker_labels(features)?;
    let mut labels: Vec<Label> = speakers.iter().map(|(_, l)| *l).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let map: BTreeMap<&str, Label> = speakers.iter().map(|(s, _)| s.as_str()).zip(labels).collect();
    Ok(features
        .iter()
        .map(|f| SegmentFeatures {
            label: Some(map[f.speaker_id.as_str()]),
            ..f.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Vowel;
    use rand::Rng;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1;
                    twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auc_examples() {
        let y = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &y).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.4, 0.6, 0.1], &y).unwrap(), 0.75);
        assert_eq!(brute_auc(&[0.9, 0.4, 0.6, 0.1], &y), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(ClassifyError::SingleClass("positive")));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = rng.gen_range(2..30);
            let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            y[0] = true;
            y[1] = false;
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            assert_eq!(roc_auc(&s, &y).unwrap(), brute_auc(&s, &y));
        }
    }

    #[test]
    fn logistic_two_points() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = [false, true];
        let m = fit_logistic(&x, &y, 0.0, 200, 0.5).unwrap();
        assert!(m.weights[0] > 0.0);
        let s = predict_scores(&m, &x).unwrap();
        assert!(s[0] < 0.5 && s[1] > 0.5);
        assert_eq!(fit_logistic(&x, &[true, true], 0.0, 10, 0.1), Err(ClassifyError::SingleClass("positive")));
    }

    #[test]
    fn loss_decreases_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.5 * r[1] > 0.0).collect();
        let (_, trace) = fit_logistic_traced(&x, &y, 0.0, 300, 0.05).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn score_limits() {
        let zero = LogisticModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            l2: 0.0,
        };
        assert_eq!(predict_scores(&zero, &[vec![3.0, -1.0]]).unwrap(), vec![0.5]);
        let big = LogisticModel {
            bias: 50.0,
            ..zero.clone()
        };
        let s = predict_scores(&big, &[vec![1e3, 1e3]]).unwrap()[0];
        assert!(s > 0.99 && s < 1.0);
        let small = LogisticModel {
            weights: vec![-1e6, 0.0],
            ..zero.clone()
        };
        let s = predict_scores(&small, &[vec![1e3, 0.0]]).unwrap()[0];
        assert!(s > 0.0 && s < 0.01);
        assert!(matches!(predict_scores(&zero, &[vec![1.0]]), Err(ClassifyError::DimensionMismatch { .. })));
    }

    #[test]
    fn weights_shrink_with_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] - r[1] + rng.gen_range(-0.5..0.5) > 0.0).collect();
        let norms: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&l2| {
                let m = fit_logistic(&x, &y, l2, 2000, 0.2).unwrap();
                m.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    fn speakers(p: usize, n: usize) -> Vec<(String, Label)> {
        (0..p)
            .map(|i| (format!("p{i}"), Label::Positive))
            .chain((0..n).map(|i| (format!("n{i}"), Label::Negative)))
            .collect()
    }

    #[test]
    fn plan_for_nineteen_speakers() {
        let plan = make_cv_plan(&speakers(9, 10), 3, 42).unwrap();
        assert_eq!(plan.folds.len(), 3);
        let mut seen = BTreeSet::new();
        for f in &plan.folds {
            let pos = f.test.iter().filter(|s| s.starts_with('p')).count();
            let neg = f.test.len() - pos;
            assert_eq!(pos, 3);
            assert!((3..=4).contains(&neg));
            assert!(f.train.is_disjoint(&f.test));
            assert_eq!(f.train.len() + f.test.len(), 19);
            for s in &f.test {
                assert!(seen.insert(s.clone()), "{s} in two test folds");
            }
        }
        assert_eq!(seen.len(), 19);
        assert_eq!(make_cv_plan(&speakers(9, 10), 3, 42).unwrap(), plan);
        assert_ne!(make_cv_plan(&speakers(9, 10), 3, 43).unwrap(), plan);
    }

    #[test]
    fn plan_errors() {
        assert_eq!(make_cv_plan(&speakers(9, 10), 1, 0), Err(ClassifyError::InvalidFolds(1)));
        assert!(matches!(make_cv_plan(&speakers(2, 10), 3, 0), Err(ClassifyError::TooFewSpeakers { .. })));
        let mut s = speakers(3, 3);
        s.push(("p0".into(), Label::Negative));
        assert_eq!(make_cv_plan(&s, 3, 0), Err(ClassifyError::ConflictingLabels("p0".into())));
    }

    fn feature(spk: &str, label: Label, seg: usize, alpha: f64) -> SegmentFeatures {
        SegmentFeatures {
            segment_id: format!("{spk}-{seg}"),
            speaker_id: spk.into(),
            vowel: Vowel::A,
            label: Some(label),
            alpha,
            beta: 0.3 + 0.01 * seg as f64,
            delta: 0.0,
            res_energy: 1.0 + (seg % 3) as f64,
            res_mean_abs: 0.1,
            res_max_abs: 0.5,
            converged: true,
        }
    }

    #[test]
    fn separable_features_score_one() {
        let mut feats = Vec::new();
        for (spk, label) in speakers(6, 6) {
            for seg in 0..5 {
                let a = if label.is_positive() { 0.6 + 0.01 * seg as f64 } else { 0.1 + 0.01 * seg as f64 };
                feats.push(feature(&spk, label, seg, a));
            }
        }
        let plan = make_cv_plan(&speaker_labels(&feats).unwrap(), 3, 1).unwrap();
        let report = evaluate(&feats, &plan, &ClassifierConfig::default()).unwrap();
        assert_eq!(report.mean_auc, 1.0);
        assert_eq!(report.std_auc, 0.0);
        assert!(report.folds.iter().all(|f| !f.degenerate && f.n_test_segments == 20));
        assert_eq!(evaluate(&feats, &plan, &ClassifierConfig::default()).unwrap(), report);
    }

    #[test]
    fn leak_and_coverage_are_checked() {
        let feats: Vec<_> = speakers(3, 3).iter().map(|(s, l)| feature(s, *l, 0, 0.1)).collect();
        let mut plan = make_cv_plan(&speaker_labels(&feats).unwrap(), 3, 1).unwrap();
        let leaked = plan.folds[0].test.iter().next().unwrap().clone();
        plan.folds[0].train.insert(leaked.clone());
        assert_eq!(
            evaluate(&feats, &plan, &ClassifierConfig::default()),
            Err(ClassifyError::SpeakerLeak { fold: 0, speaker: leaked })
        );
        let plan = make_cv_plan(&speaker_labels(&feats[..]).unwrap(), 3, 1).unwrap();
        let mut extra = feats.clone();
        extra.push(feature("stranger", Label::Positive, 0, 0.1));
        assert_eq!(
            evaluate(&extra, &plan, &ClassifierConfig::default()),
            Err(ClassifyError::UnknownSpeaker("stranger".into()))
        );
    }

    #[test]
    fn degenerate_fold_is_flagged() {
        // p2 and n2 contribute no segments, so the fold testing them is empty
        let feats: Vec<_> = ["p0", "p1", "n0", "n1"]
            .iter()
            .map(|s| feature(s, if s.starts_with('p') { Label::Positive } else { Label::Negative }, 0, if s.starts_with('p') { 1.0 } else { 0.0 }))
            .collect();
        let plan = CvPlan {
            folds: vec![
                Fold {
                    train: ["p1", "n1", "p2", "n2"].iter().map(|s| s.to_string()).collect(),
                    test: ["p0", "n0"].iter().map(|s| s.to_string()).collect(),
                },
                Fold {
                    train: ["p0", "n0", "p2", "n2"].iter().map(|s| s.to_string()).collect(),
                    test: ["p1", "n1"].iter().map(|s| s.to_string()).collect(),
                },
                Fold {
                    train: ["p0", "n0", "p1", "n1"].iter().map(|s| s.to_string()).collect(),
                    test: ["p2", "n2"].iter().map(|s| s.to_string()).collect(),
                },
            ],
            seed: 0,
        };
        let r = evaluate(&feats, &plan, &ClassifierConfig::default()).unwrap();
        assert!(r.folds[2].degenerate && r.folds[2].auc.is_none());
        assert_eq!(r.mean_auc, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..25).prop_flat_map(|n| {
                (
                    prop::collection::vec(-100.0f64..100.0, n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, y)| y.iter().any(|&t| t) && y.iter().any(|&t| !t))
        }

        proptest! {
            #[test]
            fn auc_invariant_under_monotone_maps((s, y) in instance()) {
                let base = roc_auc(&s, &y).unwrap();
                let mapped: Vec<f64> = s.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
                prop_assert_eq!(roc_auc(&mapped, &y).unwrap(), base);
            }

            #[test]
            fn auc_complements_under_label_flip((s, y) in instance()) {
                let mut sorted = s.clone();
                sorted.sort_by(f64::total_cmp);
                prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
                let flipped: Vec<bool> = y.iter().map(|t| !t).collect();
                let sum = roc_auc(&s, &y).unwrap() + roc_auc(&s, &flipped).unwrap();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
