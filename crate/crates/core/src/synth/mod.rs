//! Synthetic part-structured feature world.
//!
//! Every grid cell belongs to one body part. Each part owns a template
//! channel vector; a pedestrian of scale `s` carries `s/181 · (template +
//! noise)` at every cell. Occluded pedestrians have some cells overwritten by
//! an occluder, and background proposals hold templates at misaligned cells.
//! The last quarter of the channels is reserved for clutter: body templates
//! are silent there while object occluders live only there.

mod dataset;

pub use dataset::{gen_benchmark, gen_training_split, read_dataset, write_dataset, BenchmarkSpec, SplitSpec};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, OcclusionMask};
use crate::ndnum::Rng;

/// Scales are normalized by this many pixels (the third scale-cluster mean).
pub const SCALE_NORM: f64 = 181.0;
/// Smallest scale drawn from the mixture; draws below are rejected.
pub const MIN_SCALE: f64 = 16.0;
/// Maximum cosine similarity allowed between two part templates.
pub const MAX_TEMPLATE_COSINE: f64 = 0.9;
/// Bounds on the occluded fraction of a sampled mask.
pub const MASK_FRACTION_RANGE: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleComponent {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Part id per cell, indexed `x * height + y`.
    pub layout: Vec<usize>,
    pub parts: usize,
    pub identity_noise: f64,
    pub scale_mixture: Vec<ScaleComponent>,
    /// Magnitude of object occluder templates relative to body templates.
    pub occluder_gain: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let (width, height) = (7, 7);
        Self {
            channels: 16,
            width,
            height,
            layout: default_layout(width, height),
            parts: 6,
            identity_noise: 0.05,
            scale_mixture: [(64.0, 9.44), (105.0, 19.33), (181.0, 36.62), (340.0, 131.33)]
                .into_iter()
                .map(|(mean, std)| ScaleComponent { mean, std, weight: 1.0 })
                .collect(),
            occluder_gain: 2.0,
            seed: 0,
        }
    }
}

/// Six body regions on an `X × Y` grid (`x` horizontal, `y` vertical):
/// head across the top rows, left arm / torso / right arm in the middle band
/// and left / right leg at the bottom.
pub fn default_layout(width: usize, height: usize) -> Vec<usize> {
    const HEAD: usize = 0;
    const TORSO: usize = 1;
    const LEFT_ARM: usize = 2;
    const RIGHT_ARM: usize = 3;
    const LEFT_LEG: usize = 4;
    const RIGHT_LEG: usize = 5;
    let frac = |n: usize, num: usize| (n * num + 3) / 7;
    let head_end = frac(height, 2);
    let torso_end = frac(height, 5);
    let arm_left = frac(width, 2);
    let arm_right = frac(width, 5);
    let leg_split = frac(width, 4);
    let mut layout = Vec::with_capacity(width * height);
    for x in 0..width {
        for y in 0..height {
            let part = if y < head_end {
                HEAD
            } else if y < torso_end {
                if x < arm_left {
                    LEFT_ARM
                } else if x < arm_right {
                    TORSO
                } else {
                    RIGHT_ARM
                }
            } else if x < leg_split {
                LEFT_LEG
            } else {
                RIGHT_LEG
            };
            layout.push(part);
        }
    }
    layout
}

impl WorldConfig {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Number of trailing clutter channels.
    pub fn clutter_channels(&self) -> usize {
        self.channels / 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid dimensions must be positive".into());
        }
        if self.parts == 0 {
            return bad("at least one part is required".into());
        }
        if self.layout.len() != self.cells() {
            return bad(format!(
                "layout assigns {} cells, grid has {}",
                self.layout.len(),
                self.cells()
            ));
        }
        if let Some(p) = self.layout.iter().find(|&&p| p >= self.parts) {
            return bad(format!("layout uses part {p} but only {} parts exist", self.parts));
        }
        if self.channels - self.clutter_channels() < self.parts {
            return bad(format!(
                "{} channels leave fewer body channels than the {} parts",
                self.channels, self.parts
            ));
        }
        if !(self.identity_noise >= 0.0 && self.identity_noise.is_finite()) {
            return bad("identity noise must be non-negative".into());
        }
        if !(self.occluder_gain > 0.0 && self.occluder_gain.is_finite()) {
            return bad("occluder gain must be positive".into());
        }
        if self.scale_mixture.is_empty() {
            return bad("scale mixture needs at least one component".into());
        }
        for c in &self.scale_mixture {
            if !(c.mean > 0.0 && c.std >= 0.0 && c.weight > 0.0)
                || !(c.mean.is_finite() && c.std.is_finite() && c.weight.is_finite())
            {
                return bad(format!("invalid scale component {c:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Background,
    Pedestrian,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Background => 0,
            Label::Pedestrian => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Pedestrian),
            _ => None,
        }
    }
}

/// A detection candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: u64,
    pub label: Label,
    pub scale: f64,
    pub features: FeatureMap,
    pub score: f64,
    pub true_mask: Option<OcclusionMask>,
    pub visibility: f64,
}

impl Proposal {
    /// Benchmark image holding this proposal: the upper 32 bits of the id.
    pub fn image_id(&self) -> u64 {
        self.id >> 32
    }

    pub fn is_fully_visible_pedestrian(&self) -> bool {
        self.label == Label::Pedestrian && self.visibility >= 0.99
    }
}

/// Builds a proposal id from an image index and a slot within that image.
pub fn proposal_id(image: u32, slot: u32) -> u64 {
    (u64::from(image) << 32) | u64::from(slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPattern {
    LeftHalf,
    RightHalf,
    Bottom,
    Rect,
    PersonShape,
}

impl MaskPattern {
    pub const ALL: [MaskPattern; 5] = [
        MaskPattern::LeftHalf,
        MaskPattern::RightHalf,
        MaskPattern::Bottom,
        MaskPattern::Rect,
        MaskPattern::PersonShape,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occluder {
    Object,
    Pedestrian,
}

/// Immutable world: configuration plus one template per part.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub templates: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(f64::MIN_POSITIVE)
}

/// Rescales `v` so that its mean square is `target²`.
fn normalize_rms(v: &mut [f64], target: f64) {
    let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    if ms > 0.0 {
        let k = target / ms.sqrt();
        v.iter_mut().for_each(|x| *x *= k);
    }
}

/// Draws the part templates. Each part dominates its own block of body
/// channels, carries weak activations on the other body channels and is
/// silent on clutter channels; templates are normalized to unit mean square.
pub fn gen_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = Rng::new(config.seed).split(crate::ndnum::streams::WORLD);
    let body = config.channels - config.clutter_channels();
    let block = body / config.parts;
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(config.parts);
    for p in 0..config.parts {
        let mut attempts = 0;
        let t = loop {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Config(format!(
                    "could not draw a template for part {p} with cosine <= {MAX_TEMPLATE_COSINE}"
                )));
            }
            let mut t = vec![0.0; config.channels];
            for (c, v) in t.iter_mut().enumerate().take(body) {
                *v = if c / block == p {
                    rng.range(0.9, 1.1)
                } else {
                    rng.range(0.0, 0.15)
                };
            }
            normalize_rms(&mut t, 1.0);
            if templates.iter().all(|o| cosine(o, &t) <= MAX_TEMPLATE_COSINE) {
                break t;
            }
        };
        templates.push(t);
    }
    Ok(World {
        config: config.clone(),
        templates,
    })
}

impl World {
    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn cells(&self) -> usize {
        self.config.cells()
    }

    pub fn part_of(&self, cell: usize) -> usize {
        self.config.layout[cell]
    }

    /// Scale drawn from the mixture (component by weight, then Gaussian,
    /// rejecting draws below [`MIN_SCALE`]).
    pub fn sample_scale(&self, rng: &mut Rng) -> f64 {
        let mix = &self.config.scale_mixture;
        let total: f64 = mix.iter().map(|c| c.weight).sum();
        loop {
            let mut u = rng.uniform() * total;
            let mut comp = mix[mix.len() - 1];
            for c in mix {
                if u < c.weight {
                    comp = *c;
                    break;
                }
                u -= c.weight;
            }
            let s = comp.mean + comp.std * rng.normal();
            if s >= MIN_SCALE {
                return s;
            }
        }
    }

    /// Features of a body whose cell `i` shows part `parts[i]`.
    fn render(&self, parts: &[usize], scale: f64, noise: f64, rng: &mut Rng) -> FeatureMap {
        let cfg = &self.config;
        let s = scale / SCALE_NORM;
        let cells: Vec<Vec<f64>> = parts
            .iter()
            .map(|&p| {
                self.templates[p]
                    .iter()
                    .map(|&t| s * (t + noise * rng.normal()))
                    .collect()
            })
            .collect();
        FeatureMap::from_cells(cfg.channels, cfg.width, cfg.height, &cells)
            .expect("rendered cells match the world grid")
    }

    /// Random clutter template: active on clutter channels only (all channels
    /// when the world has none), scaled by the occluder gain.
    pub fn object_template(&self, rng: &mut Rng) -> Vec<f64> {
        let c = self.channels();
        let clutter = self.config.clutter_channels();
        let start = if clutter == 0 { 0 } else { c - clutter };
        let mut o = vec![0.0; c];
        for v in &mut o[start..] {
            *v = rng.range(0.5, 1.5);
        }
        normalize_rms(&mut o, self.config.occluder_gain);
        o
    }
}

/// Fully visible pedestrian at `scale` (pixels).
pub fn gen_pedestrian(world: &World, scale: f64, rng: &mut Rng) -> Result<Proposal> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::precondition(format!("scale must be positive, got {scale}")));
    }
    let features = world.render(&world.config.layout, scale, world.config.identity_noise, rng);
    Ok(Proposal {
        id: 0,
        label: Label::Pedestrian,
        scale,
        features,
        score: 0.5,
        true_mask: None,
        visibility: 1.0,
    })
}

fn fraction_ok(mask: &OcclusionMask) -> bool {
    let f = mask.fraction();
    f >= MASK_FRACTION_RANGE.0 && f <= MASK_FRACTION_RANGE.1
}

/// Random occlusion mask of the given pattern whose occluded fraction lies in
/// `[0.2, 0.8]`.
pub fn sample_mask(world: &World, pattern: MaskPattern, rng: &mut Rng) -> OcclusionMask {
    let (w, h) = (world.config.width, world.config.height);
    for _ in 0..1000 {
        let mut m = OcclusionMask::empty(w, h);
        match pattern {
            MaskPattern::LeftHalf | MaskPattern::RightHalf => {
                let cols = w / 2 + rng.below(2);
                for x in 0..cols.min(w) {
                    let x = if pattern == MaskPattern::LeftHalf { x } else { w - 1 - x };
                    (0..h).for_each(|y| m.set(x, y, true));
                }
            }
            MaskPattern::Bottom => {
                let lo = ((MASK_FRACTION_RANGE.0 * h as f64).ceil() as usize).max(1);
                let hi = ((MASK_FRACTION_RANGE.1 * h as f64).floor() as usize).max(lo);
                let rows = lo + rng.below(hi - lo + 1);
                for y in h.saturating_sub(rows)..h {
                    (0..w).for_each(|x| m.set(x, y, true));
                }
            }
            MaskPattern::Rect => {
                let rw = 1 + rng.below(w);
                let rh = 1 + rng.below(h);
                let x0 = rng.below(w - rw + 1);
                let y0 = rng.below(h - rh + 1);
                for x in x0..x0 + rw {
                    (y0..y0 + rh).for_each(|y| m.set(x, y, true));
                }
            }
            MaskPattern::PersonShape => {
                // A few body regions of another person, shifted.
                let dx = rng.below(2 * w + 1) as isize - w as isize;
                let dy = rng.below(2 * h + 1) as isize - h as isize;
                let chosen: Vec<bool> = (0..world.config.parts).map(|_| rng.coin()).collect();
                for x in 0..w {
                    for y in 0..h {
                        let (sx, sy) = (x as isize - dx, y as isize - dy);
                        if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                            continue;
                        }
                        let part = world.part_of(sx as usize * h + sy as usize);
                        if chosen[part] {
                            m.set(x, y, true);
                        }
                    }
                }
            }
        }
        if fraction_ok(&m) {
            return m;
        }
    }
    // Tiny grids where no draw fits the range: fall back to the closest
    // half-grid mask.
    let mut m = OcclusionMask::empty(w, h);
    let target = ((w * h) as f64 * 0.5).round() as usize;
    for i in 0..target {
        m.set(i / h, i % h, true);
    }
    m
}

/// Overwrites the masked cells of a fully visible pedestrian with occluder
/// features.
///
/// Object occluders use one fresh clutter template; pedestrian occluders use
/// another identity whose body is displaced by a random shift, so masked
/// cells mostly show a different part than the base body.
pub fn gen_occluded(
    world: &World,
    base: &Proposal,
    mask: &OcclusionMask,
    occluder: Occluder,
    rng: &mut Rng,
) -> Result<Proposal> {
    if base.label != Label::Pedestrian || base.true_mask.is_some() || base.visibility < 1.0 {
        return Err(Error::precondition("base proposal must be a fully visible pedestrian"));
    }
    let cfg = &world.config;
    if (mask.width(), mask.height()) != (cfg.width, cfg.height) {
        return Err(Error::ShapeMismatch {
            left: vec![cfg.width, cfg.height],
            right: vec![mask.width(), mask.height()],
        });
    }
    let s = base.scale / SCALE_NORM;
    let noise = cfg.identity_noise;
    let (w, h) = (cfg.width, cfg.height);
    let object = world.object_template(rng);
    let dx = (2 + rng.below(2)) as isize * if rng.coin() { 1 } else { -1 };
    let dy = rng.below(5) as isize - 2;
    let mut cells: Vec<Vec<f64>> = (0..world.cells()).map(|i| base.features.cell(i)).collect();
    for (i, cell) in cells.iter_mut().enumerate() {
        if !mask.cells()[i] {
            continue;
        }
        let template = match occluder {
            Occluder::Object => &object,
            Occluder::Pedestrian => {
                let (x, y) = ((i / h) as isize, (i % h) as isize);
                let sx = (x + dx).rem_euclid(w as isize) as usize;
                let sy = (y + dy).rem_euclid(h as isize) as usize;
                &world.templates[world.part_of(sx * h + sy)]
            }
        };
        for (v, &t) in cell.iter_mut().zip(template) {
            *v = s * (t + noise * rng.normal());
        }
    }
    Ok(Proposal {
        id: base.id,
        label: Label::Pedestrian,
        scale: base.scale,
        features: FeatureMap::from_cells(cfg.channels, w, h, &cells)?,
        score: base.score,
        visibility: 1.0 - mask.count() as f64 / mask.len() as f64,
        true_mask: Some(mask.clone()),
    })
}

/// Background clutter: templates at randomly permuted cells, with every cell
/// that would land on its own part redrawn to a different part, plus noise
/// at three times the identity noise.
pub fn gen_background(world: &World, rng: &mut Rng) -> Proposal {
    let scale = world.sample_scale(rng);
    let layout = &world.config.layout;
    let parts = world.config.parts;
    let mut source = layout.clone();
    rng.shuffle(&mut source);
    for (i, p) in source.iter_mut().enumerate() {
        if *p == layout[i] && parts > 1 {
            *p = (layout[i] + 1 + rng.below(parts - 1)) % parts;
        }
    }
    let features = world.render(&source, scale, 3.0 * world.config.identity_noise, rng);
    Proposal {
        id: 0,
        label: Label::Background,
        scale,
        features,
        score: 0.5,
        true_mask: None,
        visibility: 0.0,
    }
}

/// Occluded pedestrian with a uniformly chosen mask pattern and occluder.
pub fn gen_random_occluded(world: &World, rng: &mut Rng) -> Result<Proposal> {
    let scale = world.sample_scale(rng);
    let base = gen_pedestrian(world, scale, rng)?;
    let pattern = MaskPattern::ALL[rng.below(MaskPattern::ALL.len())];
    let mask = sample_mask(world, pattern, rng);
    let occluder = if rng.coin() {
        Occluder::Object
    } else {
        Occluder::Pedestrian
    };
    gen_occluded(world, &base, &mask, occluder, rng)
}
