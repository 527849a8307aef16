//! Correlation between a proposal and a prototype, occluded-cell detection
//! and the occluded / not-occluded decision.

use crate::error::{Error, Result};
use crate::feature::{CellGrid, FeatureMap, OcclusionMask};
use crate::ndnum::Rng;
use crate::synth::{gen_occluded, gen_pedestrian, gen_world, sample_mask, MaskPattern, Occluder, WorldConfig};

/// How per-channel correlations combine into one value per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaMode {
    /// Same below-the-mean rule used to find occluded cells.
    DynamicMean,
    /// Cells below the fixed `beta` are completed.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    /// Occluded-cell fraction above which a proposal counts as occluded.
    pub alpha: f64,
    pub beta_mode: BetaMode,
    pub beta: f64,
    /// Relative margin below the map mean: a cell is flagged when
    /// `c < mean - mean_margin * |mean|`. Zero gives the plain mean rule.
    pub mean_margin: f64,
    pub aggregation: Aggregation,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.30,
            beta_mode: BetaMode::DynamicMean,
            beta: 0.0,
            mean_margin: 0.1,
            aggregation: Aggregation::Mean,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        if !(self.mean_margin >= 0.0 && self.mean_margin < 1.0) {
            return Err(Error::Config(format!(
                "mean_margin must lie in [0, 1), got {}",
                self.mean_margin
            )));
        }
        Ok(())
    }

    /// Occluded cells of a correlation map under this configuration.
    pub fn occluded_cells(&self, map: &CorrelationMap) -> OcclusionMask {
        occluded_cells_with_margin(map, self.mean_margin)
    }
}

/// `X × Y` correlation values plus the ids of the two compared maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub grid: CellGrid,
    pub sources: (u64, u64),
}

impl CorrelationMap {
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn mean(&self) -> f64 {
        self.grid.mean()
    }

    pub fn with_sources(mut self, a: u64, b: u64) -> Self {
        self.sources = (a, b);
        self
    }
}

/// `a·b / (1 + |a − b|)`.
#[inline]
pub fn correlate(a: f64, b: f64) -> f64 {
    a * b / (1.0 + (a - b).abs())
}

fn wrap(width: usize, height: usize, values: Vec<f64>) -> Result<CorrelationMap> {
    Ok(CorrelationMap {
        grid: CellGrid::new(width, height, values)?,
        sources: (0, 0),
    })
}

/// Per-cell correlation of one channel.
pub fn channel_correlation(fa: &FeatureMap, fb: &FeatureMap, channel: usize) -> Result<CorrelationMap> {
    fa.ensure_same_shape(fb)?;
    if channel >= fa.channels() {
        return Err(Error::DimensionMismatch {
            context: "channel index",
            expected: fa.channels(),
            found: channel,
        });
    }
    let n = fa.cells();
    let range = channel * n..(channel + 1) * n;
    let values = fa.data()[range.clone()]
        .iter()
        .zip(&fb.data()[range])
        .map(|(&a, &b)| correlate(a, b))
        .collect();
    wrap(fa.width(), fa.height(), values)
}

/// Channel correlations aggregated per cell.
pub fn correlation_map_with(fa: &FeatureMap, fb: &FeatureMap, aggregation: Aggregation) -> Result<CorrelationMap> {
    fa.ensure_same_shape(fb)?;
    let n = fa.cells();
    let channels = fa.channels();
    let (da, db) = (fa.data(), fb.data());
    let mut values = match aggregation {
        Aggregation::Mean => vec![0.0; n],
        Aggregation::Max => vec![f64::NEG_INFINITY; n],
    };
    for c in 0..channels {
        for (i, v) in values.iter_mut().enumerate() {
            let r = correlate(da[c * n + i], db[c * n + i]);
            match aggregation {
                Aggregation::Mean => *v += r,
                Aggregation::Max => *v = v.max(r),
            }
        }
    }
    if aggregation == Aggregation::Mean {
        values.iter_mut().for_each(|v| *v /= channels as f64);
    }
    wrap(fa.width(), fa.height(), values)
}

/// Mean over channels of the per-channel correlation.
pub fn correlation_map(fa: &FeatureMap, fb: &FeatureMap) -> Result<CorrelationMap> {
    correlation_map_with(fa, fb, Aggregation::Mean)
}

/// Cells strictly below the map mean.
pub fn occluded_cells(map: &CorrelationMap) -> OcclusionMask {
    occluded_cells_with_margin(map, 0.0)
}

/// Cells below `mean − margin·|mean|`. A constant map flags nothing.
pub fn occluded_cells_with_margin(map: &CorrelationMap, margin: f64) -> OcclusionMask {
    let values = map.values();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        return OcclusionMask::empty(map.width(), map.height());
    }
    let mean = map.mean();
    let threshold = mean - margin * mean.abs();
    let cells = values.iter().map(|&v| v < threshold).collect();
    OcclusionMask::from_cells(map.width(), map.height(), cells).expect("mask matches map grid")
}

/// True when the occluded fraction exceeds `alpha`.
pub fn is_occluded(mask: &OcclusionMask, config: &OcclusionConfig) -> bool {
    mask.fraction() > config.alpha
}

/// Cells to fill from the prototype.
pub fn completion_mask(map: &CorrelationMap, config: &OcclusionConfig) -> OcclusionMask {
    match config.beta_mode {
        BetaMode::DynamicMean => config.occluded_cells(map),
        BetaMode::Fixed => {
            let cells = map.values().iter().map(|&v| v < config.beta).collect();
            OcclusionMask::from_cells(map.width(), map.height(), cells).expect("mask matches map grid")
        }
    }
}

/// Everything the pipeline needs to know about one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub map: CorrelationMap,
    /// Cells flagged by the below-the-mean rule.
    pub occluded: OcclusionMask,
    pub is_occluded: bool,
    /// Cells to complete.
    pub completion: OcclusionMask,
}

pub fn assess(features: &FeatureMap, prototype: &FeatureMap, config: &OcclusionConfig) -> Result<Assessment> {
    let map = correlation_map_with(features, prototype, config.aggregation)?;
    let occluded = config.occluded_cells(&map);
    let completion = completion_mask(&map, config);
    Ok(Assessment {
        is_occluded: is_occluded(&occluded, config),
        map,
        occluded,
        completion,
    })
}

/// Toy reproduction of the colour-matching picture: a noiseless person is
/// compared with itself after part of it is covered by a clutter object.
/// Cells with positive correlation that the mean rule keeps must be exactly
/// the uncovered cells, for an empty, a full and `trials` random masks.
pub fn xor_toy_check(seed: u64, trials: usize) -> bool {
    let config = WorldConfig {
        identity_noise: 0.0,
        seed,
        ..WorldConfig::default()
    };
    let Ok(world) = gen_world(&config) else {
        return false;
    };
    let mut rng = Rng::new(seed).split(crate::ndnum::streams::PROBE);
    let Ok(person) = gen_pedestrian(&world, 181.0, &mut rng) else {
        return false;
    };
    let occ = OcclusionConfig::default();
    let (w, h) = (config.width, config.height);
    let mut masks = vec![OcclusionMask::empty(w, h), OcclusionMask::full(w, h)];
    for t in 0..trials {
        let pattern = MaskPattern::ALL[t % MaskPattern::ALL.len()];
        masks.push(sample_mask(&world, pattern, &mut rng));
    }
    masks.iter().all(|mask| {
        let Ok(covered) = gen_occluded(&world, &person, mask, Occluder::Object, &mut rng) else {
            return false;
        };
        let Ok(map) = correlation_map(&covered.features, &person.features) else {
            return false;
        };
        let flagged = occ.occluded_cells(&map);
        map.values()
            .iter()
            .zip(flagged.cells())
            .zip(mask.cells())
            .all(|((&c, &f), &m)| (c > 0.0 && !f) == !m)
    })
}
