//! Detection metrics (log-average miss rate over visibility subsets) and
//! feature-space diagnostics.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::completion::{disc_batch, Generator, DISC_HIDDEN};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, OcclusionMask};
use crate::ndnum::{streams, Direction, Rng};
use crate::par::Exec;
use crate::synth::{Label, Proposal};

/// Visibility subset of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    /// Reasonable: visibility in `[0.65, 1]`.
    R,
    /// Heavy occlusion: visibility in `[0.20, 0.65)`.
    HO,
    /// Union: visibility in `[0.20, 1]`.
    RHO,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::R, Subset::HO, Subset::RHO];

    pub fn contains(self, visibility: f64) -> bool {
        match self {
            Subset::R => (0.65..=1.0).contains(&visibility),
            Subset::HO => (0.20..0.65).contains(&visibility),
            Subset::RHO => (0.20..=1.0).contains(&visibility),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::R => "R",
            Subset::HO => "HO",
            Subset::RHO => "R+HO",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Subsets a ground truth of this visibility belongs to.
pub fn subset_of(visibility: f64) -> Vec<Subset> {
    Subset::ALL.into_iter().filter(|s| s.contains(visibility)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// False-positives-per-image sample points, strictly increasing.
    pub fppi_points: Vec<f64>,
    pub iou_match_threshold: f64,
    /// Miss rates are clamped to at least this before the logarithm.
    pub miss_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fppi_points: (0..9).map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 8.0)).collect(),
            iou_match_threshold: 0.5,
            miss_floor: 1e-4,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.fppi_points;
        if p.is_empty() || p.windows(2).any(|w| w[0] >= w[1]) || p[0] <= 0.0 {
            return Err(Error::Config(
                "fppi points must be positive and strictly increasing".into(),
            ));
        }
        if !(self.miss_floor > 0.0 && self.miss_floor <= 1.0) {
            return Err(Error::Config("miss floor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One scored detection; `target` names the ground truth it covers, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub image: u64,
    pub score: f64,
    pub target: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub image: u64,
    pub visibility: f64,
}

/// A scored benchmark: detections, ground truths and the image count.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub detections: Vec<DetectionRecord>,
    pub ground_truths: Vec<GroundTruth>,
    pub images: usize,
}

impl Benchmark {
    /// Every proposal is a detection with the given score; every pedestrian
    /// proposal is also the ground truth it detects.
    pub fn from_proposals(proposals: &[Proposal], scores: &[f64]) -> Result<Self> {
        if proposals.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                context: "scores per proposal",
                expected: proposals.len(),
                found: scores.len(),
            });
        }
        let images: HashSet<u64> = proposals.iter().map(Proposal::image_id).collect();
        let mut detections = Vec::with_capacity(proposals.len());
        let mut ground_truths = Vec::new();
        for (p, &score) in proposals.iter().zip(scores) {
            let pedestrian = p.label == Label::Pedestrian;
            if pedestrian {
                ground_truths.push(GroundTruth {
                    id: p.id,
                    image: p.image_id(),
                    visibility: p.visibility,
                });
            }
            detections.push(DetectionRecord {
                image: p.image_id(),
                score,
                target: pedestrian.then_some(p.id),
            });
        }
        Ok(Self {
            detections,
            ground_truths,
            images: images.len(),
        })
    }

    pub fn miss_rate(&self, config: &EvalConfig, subset: Subset) -> Result<f64> {
        log_avg_miss_rate(&self.detections, &self.ground_truths, self.images, config, subset)
    }
}

/// Log-average miss rate of `detections` against the ground truths in
/// `subset`.
///
/// Detections are matched greedily by descending score, each ground truth at
/// most once. Ground truths outside the subset are ignored, as are the
/// detections matched to them; unmatched detections are false positives. At
/// each FPPI sample point the lowest miss rate reachable without exceeding it
/// is taken; the result is the geometric mean of the clamped miss rates.
pub fn log_avg_miss_rate(
    detections: &[DetectionRecord],
    ground_truths: &[GroundTruth],
    images: usize,
    config: &EvalConfig,
    subset: Subset,
) -> Result<f64> {
    config.validate()?;
    if let Some(i) = detections.iter().position(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let in_subset: HashMap<u64, bool> = ground_truths
        .iter()
        .map(|g| (g.id, subset.contains(g.visibility)))
        .collect();
    let total = in_subset.values().filter(|&&v| v).count();
    if total == 0 {
        return Err(Error::EmptySubset(subset.name().into()));
    }
    if images == 0 {
        return Err(Error::precondition("image count must be positive"));
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));

    // Curve points (false positives, true positives) after each group of
    // tied scores, starting from the empty detection set.
    let mut curve = vec![(0usize, 0usize)];
    let mut matched = HashSet::new();
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = detections[order[i]].score;
        while i < order.len() && detections[order[i]].score == score {
            let d = &detections[order[i]];
            match d.target.and_then(|t| in_subset.get(&t).map(|&keep| (t, keep))) {
                Some((t, keep)) if matched.insert(t) => {
                    if keep {
                        tp += 1;
                    }
                }
                _ => fp += 1,
            }
            i += 1;
        }
        curve.push((fp, tp));
    }
    Ok(average_from_counts(&curve, total, images, config))
}

/// Geometric mean over the FPPI sample points of the clamped miss rate, from
/// `(false positives, true positives)` operating points.
fn average_from_counts(curve: &[(usize, usize)], total: usize, images: usize, config: &EvalConfig) -> f64 {
    let mut sum = 0.0;
    for &r in &config.fppi_points {
        let best_tp = curve
            .iter()
            .filter(|&&(fp, _)| fp as f64 / images as f64 <= r)
            .map(|&(_, tp)| tp)
            .max()
            .unwrap_or(0);
        let miss = (total - best_tp) as f64 / total as f64;
        sum += miss.max(config.miss_floor).ln();
    }
    (sum / config.fppi_points.len() as f64).exp()
}

fn mean_sq_dist(set: &[FeatureMap], centroid: &[f64]) -> f64 {
    let total: f64 = set
        .iter()
        .map(|f| {
            f.data()
                .iter()
                .zip(centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    total / set.len() as f64
}

/// Mean squared distance of `completed` to the visible centroid divided by
/// that of `raw`.
pub fn compactness_ratio(raw: &[FeatureMap], completed: &[FeatureMap], visible: &[FeatureMap]) -> Result<f64> {
    if raw.is_empty() || completed.is_empty() || visible.is_empty() {
        return Err(Error::precondition("compactness needs non-empty sets"));
    }
    let first = &visible[0];
    for f in raw.iter().chain(completed).chain(visible) {
        first.ensure_same_shape(f)?;
    }
    let mut centroid = vec![0.0; first.data().len()];
    for f in visible {
        centroid.iter_mut().zip(f.data()).for_each(|(c, v)| *c += v);
    }
    centroid.iter_mut().for_each(|c| *c /= visible.len() as f64);
    let denominator = mean_sq_dist(raw, &centroid);
    if denominator == 0.0 {
        return Err(Error::precondition("raw features coincide with the visible centroid"));
    }
    Ok(mean_sq_dist(completed, &centroid) / denominator)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub rate: f64,
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 32,
            rate: 0.01,
            train_fraction: 0.7,
        }
    }
}

/// Smallest set size accepted by [`probe_accuracy`].
pub const MIN_PROBE_SAMPLES: usize = 40;

/// Held-out accuracy of a freshly trained discriminator separating `a`
/// from `b`.
pub fn probe_accuracy(a: &[FeatureMap], b: &[FeatureMap], seed: u64) -> Result<f64> {
    probe_accuracy_with(a, b, seed, &ProbeConfig::default(), Exec::auto())
}

pub fn probe_accuracy_with(
    a: &[FeatureMap],
    b: &[FeatureMap],
    seed: u64,
    config: &ProbeConfig,
    exec: Exec,
) -> Result<f64> {
    if a.len() < MIN_PROBE_SAMPLES || b.len() < MIN_PROBE_SAMPLES {
        return Err(Error::precondition(format!(
            "probe needs at least {MIN_PROBE_SAMPLES} samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let first = &a[0];
    for f in a.iter().chain(b) {
        first.ensure_same_shape(f)?;
    }
    let root = Rng::new(seed).split(streams::PROBE);
    // `b` plays the real class, `a` the generated one.
    let (a_train, a_test) = split_set(a, &root.split(1), config.train_fraction);
    let (b_train, b_test) = split_set(b, &root.split(2), config.train_fraction);
    let mut rng = root.split(3);
    let (c, x, y) = first.dims();
    let identity = Generator::identity(c);
    let mut disc = crate::completion::Discriminator::new(c * x * y, DISC_HIDDEN, &mut rng);
    let m = config.batch.min(a_train.len()).min(b_train.len());
    let steps = a_train.len().max(b_train.len()).div_ceil(m);
    for _ in 0..config.epochs {
        for _ in 0..steps {
            let ia = rng.sample_indices(a_train.len(), m);
            let ib = rng.sample_indices(b_train.len(), m);
            let fa: Vec<&FeatureMap> = ia.iter().map(|&i| a_train[i]).collect();
            let fb: Vec<&FeatureMap> = ib.iter().map(|&i| b_train[i]).collect();
            let batch = disc_batch(&identity, &disc, &fa, &fb, exec)?;
            disc.step(&batch.grads, config.rate, Direction::Ascend)?;
        }
    }
    let mut hits = 0.0;
    for f in &a_test {
        let p = disc.probability(f)?;
        hits += if p < 0.5 {
            1.0
        } else if p == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    for f in &b_test {
        let p = disc.probability(f)?;
        hits += if p > 0.5 {
            1.0
        } else if p == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    Ok(hits / (a_test.len() + b_test.len()) as f64)
}

/// Shuffled train / test halves of `set`.
fn split_set<'a>(set: &'a [FeatureMap], rng: &Rng, train_fraction: f64) -> (Vec<&'a FeatureMap>, Vec<&'a FeatureMap>) {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    rng.clone().shuffle(&mut idx);
    let cut = ((set.len() as f64 * train_fraction).round() as usize).clamp(1, set.len() - 1);
    let (train, test) = idx.split_at(cut);
    (
        train.iter().map(|&i| &set[i]).collect(),
        test.iter().map(|&i| &set[i]).collect(),
    )
}

/// `|P ∩ T| / |P ∪ T|`, one when both are empty.
pub fn mask_iou(predicted: &OcclusionMask, truth: &OcclusionMask) -> Result<f64> {
    predicted.ensure_same_shape(truth)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in predicted.cells().iter().zip(truth.cells()) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
