use super::networks::{Discriminator, DiscriminatorGrads, Generator, GeneratorGrads, DISC_HIDDEN};
use super::{copy_paste, MaskLibrary};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::ndnum::{streams, Direction, Rng, PROB_EPS};
use crate::occlusion::{assess, OcclusionConfig};
use crate::par::{self, Exec};
use crate::prototypes::{LookupMode, PrototypeBank};
use crate::synth::Proposal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Visible samples occluded by library masks.
    Synthetic,
    /// Real occluded samples.
    Real,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Synthetic => 1,
            Stage::Real => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Stage::Synthetic),
            2 => Some(Stage::Real),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Discriminator steps per iteration.
    pub disc_steps: usize,
    /// Minibatch size `m`.
    pub batch: usize,
    /// Learning rate `γ`.
    pub rate: f64,
    pub stage: Stage,
    /// Skip generator updates (discriminator-only runs).
    pub freeze_generator: bool,
}

impl TrainConfig {
    pub fn stage_one() -> Self {
        Self {
            iterations: 2000,
            disc_steps: 1,
            batch: 32,
            rate: 2e-3,
            stage: Stage::Synthetic,
            freeze_generator: false,
        }
    }

    pub fn stage_two() -> Self {
        Self {
            rate: 2e-4,
            stage: Stage::Real,
            ..Self::stage_one()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.disc_steps == 0 {
            return Err(Error::Config("disc_steps must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("rate must be positive, got {}", self.rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfigs {
    pub stage_one: TrainConfig,
    pub stage_two: TrainConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        Self {
            stage_one: TrainConfig::stage_one(),
            stage_two: TrainConfig::stage_two(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Visible minibatch drawn independently of the occluded one.
    Independent,
    /// Visible minibatch uses the occluded minibatch's indices.
    SameIndex,
}

/// Generator inputs and real visible features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePools {
    pub occluded: Vec<FeatureMap>,
    pub visible: Vec<FeatureMap>,
    pub pairing: Pairing,
}

impl FeaturePools {
    pub fn new(occluded: Vec<FeatureMap>, visible: Vec<FeatureMap>, pairing: Pairing) -> Result<Self> {
        if occluded.is_empty() || visible.is_empty() {
            return Err(Error::precondition("both feature pools must be non-empty"));
        }
        let first = &visible[0];
        for f in occluded.iter().chain(&visible) {
            first.ensure_same_shape(f)?;
        }
        if pairing == Pairing::SameIndex && occluded.len() != visible.len() {
            return Err(Error::precondition("paired pools must have equal sizes"));
        }
        Ok(Self {
            occluded,
            visible,
            pairing,
        })
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub disc_objective: f64,
    pub gen_objective: f64,
    /// Discriminator accuracy on the last discriminator minibatch (a
    /// probability of exactly one half scores half a hit).
    pub probe_accuracy: f64,
}

/// Samples per partial gradient. Fixed so that the reduction order, and hence
/// the result, does not depend on the execution strategy.
const CHUNK: usize = 8;

fn hit(p: f64, real: bool) -> f64 {
    if p == 0.5 {
        0.5
    } else if (p > 0.5) == real {
        1.0
    } else {
        0.0
    }
}

/// Derivative of `log clamp(σ(z))` with respect to `z`.
fn dlog_p(p_raw: f64) -> f64 {
    if p_raw > PROB_EPS && p_raw < 1.0 - PROB_EPS {
        1.0 - p_raw
    } else {
        0.0
    }
}

/// Derivative of `log(1 − clamp(σ(z)))` with respect to `z`.
fn dlog_one_minus_p(p_raw: f64) -> f64 {
    if p_raw > PROB_EPS && p_raw < 1.0 - PROB_EPS {
        -p_raw
    } else {
        0.0
    }
}

/// Discriminator objective on one minibatch with its gradient.
#[derive(Debug, Clone)]
pub struct DiscBatch {
    /// Mean of `log D(v) + log(1 − D(G(o)))`.
    pub disc_objective: f64,
    /// Mean of `log(1 − D(G(o)))`.
    pub gen_objective: f64,
    pub accuracy: f64,
    pub grads: DiscriminatorGrads,
}

/// Objective and discriminator gradient over paired minibatches.
pub fn disc_batch(
    gen: &Generator,
    disc: &Discriminator,
    occluded: &[&FeatureMap],
    visible: &[&FeatureMap],
    exec: Exec,
) -> Result<DiscBatch> {
    let m = occluded.len();
    if m == 0 || visible.len() != m {
        return Err(Error::precondition("minibatches must be non-empty and of equal size"));
    }
    let chunks = m.div_ceil(CHUNK);
    let parts = par::map_range(exec, chunks, |k| -> Result<(f64, f64, f64, DiscriminatorGrads)> {
        let mut grads = DiscriminatorGrads::zeros(disc);
        let (mut jd, mut jg, mut acc) = (0.0, 0.0, 0.0);
        for i in k * CHUNK..((k + 1) * CHUNK).min(m) {
            let tv = disc.forward_traced(visible[i].data())?;
            let g = gen.generate(occluded[i])?;
            let tg = disc.forward_traced(g.data())?;
            let (pv, pg) = (tv.probability(), tg.probability());
            jd += pv.ln() + (1.0 - pg).ln();
            jg += (1.0 - pg).ln();
            acc += hit(pv, true) + hit(pg, false);
            disc.backward(&tv, dlog_p(tv.raw_probability()), Some(&mut grads))?;
            disc.backward(&tg, dlog_one_minus_p(tg.raw_probability()), Some(&mut grads))?;
        }
        Ok((jd, jg, acc, grads))
    });
    let mut grads = DiscriminatorGrads::zeros(disc);
    let (mut jd, mut jg, mut acc) = (0.0, 0.0, 0.0);
    for part in parts {
        let (a, b, c, g) = part?;
        jd += a;
        jg += b;
        acc += c;
        grads.add(&g);
    }
    grads.scale(1.0 / m as f64);
    Ok(DiscBatch {
        disc_objective: jd / m as f64,
        gen_objective: jg / m as f64,
        accuracy: acc / (2 * m) as f64,
        grads,
    })
}

/// Generator objective `mean log(1 − D(G(o)))` and its generator gradient.
pub fn gen_batch(
    gen: &Generator,
    disc: &Discriminator,
    occluded: &[&FeatureMap],
    exec: Exec,
) -> Result<(f64, GeneratorGrads)> {
    let m = occluded.len();
    if m == 0 {
        return Err(Error::precondition("minibatch must be non-empty"));
    }
    let chunks = m.div_ceil(CHUNK);
    let parts = par::map_range(exec, chunks, |k| -> Result<(f64, GeneratorGrads)> {
        let mut grads = GeneratorGrads::zeros(gen);
        let mut jg = 0.0;
        for f in &occluded[k * CHUNK..((k + 1) * CHUNK).min(m)] {
            let (g, gtrace) = gen.forward_traced(f)?;
            let t = disc.forward_traced(g.data())?;
            jg += (1.0 - t.probability()).ln();
            let d = dlog_one_minus_p(t.raw_probability());
            if d != 0.0 {
                let dx = disc.backward(&t, d, None)?;
                gen.backward(&gtrace, &dx, &mut grads)?;
            }
        }
        Ok((jg, grads))
    });
    let mut grads = GeneratorGrads::zeros(gen);
    let mut jg = 0.0;
    for part in parts {
        let (a, g) = part?;
        jg += a;
        grads.add(&g);
    }
    grads.scale(1.0 / m as f64);
    Ok((jg / m as f64, grads))
}

/// Point in the training loop reported to an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    /// Start of iteration `t` (1-based), before any update.
    IterationStart(usize),
    /// After discriminator step `k` (1-based) of iteration `t`.
    Discriminator(usize, usize),
    /// After the generator step of iteration `t`.
    Generator(usize),
}

/// Adversarial training: every iteration takes `disc_steps` ascent steps on
/// the discriminator objective, then one descent step on the generator
/// objective. Minibatches are drawn without replacement.
pub fn train_adversarial(
    pools: &FeaturePools,
    gen: Generator,
    disc: Discriminator,
    config: &TrainConfig,
    rng: &mut Rng,
    exec: Exec,
) -> Result<(Generator, Discriminator, Vec<HistoryRow>)> {
    train_adversarial_observed(pools, gen, disc, config, rng, exec, |_, _, _| {})
}

/// [`train_adversarial`] that reports every update to `observe`.
pub fn train_adversarial_observed(
    pools: &FeaturePools,
    mut gen: Generator,
    mut disc: Discriminator,
    config: &TrainConfig,
    rng: &mut Rng,
    exec: Exec,
    mut observe: impl FnMut(StepEvent, &Generator, &Discriminator),
) -> Result<(Generator, Discriminator, Vec<HistoryRow>)> {
    config.validate()?;
    let m = config.batch;
    let (n_occ, n_vis) = (pools.occluded.len(), pools.visible.len());
    if m > n_occ || m > n_vis {
        return Err(Error::precondition(format!(
            "minibatch of {m} exceeds pool sizes ({n_occ} occluded, {n_vis} visible)"
        )));
    }
    let mut history = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        observe(StepEvent::IterationStart(t), &gen, &disc);
        let mut last = None;
        for k in 1..=config.disc_steps {
            let io = rng.sample_indices(n_occ, m);
            let iv = match pools.pairing {
                Pairing::SameIndex => io.clone(),
                Pairing::Independent => rng.sample_indices(n_vis, m),
            };
            let occ: Vec<&FeatureMap> = io.iter().map(|&i| &pools.occluded[i]).collect();
            let vis: Vec<&FeatureMap> = iv.iter().map(|&i| &pools.visible[i]).collect();
            let batch = disc_batch(&gen, &disc, &occ, &vis, exec)?;
            disc.step(&batch.grads, config.rate, Direction::Ascend)?;
            observe(StepEvent::Discriminator(t, k), &gen, &disc);
            last = Some(batch);
        }
        let last = last.expect("at least one discriminator step");
        let io = rng.sample_indices(n_occ, m);
        let occ: Vec<&FeatureMap> = io.iter().map(|&i| &pools.occluded[i]).collect();
        let (jg, grads) = gen_batch(&gen, &disc, &occ, exec)?;
        if !config.freeze_generator {
            gen.step(&grads, config.rate, Direction::Descend)?;
        }
        observe(StepEvent::Generator(t), &gen, &disc);
        history.push(HistoryRow {
            iteration: t,
            disc_objective: last.disc_objective,
            gen_objective: jg,
            probe_accuracy: last.accuracy,
        });
    }
    Ok((gen, disc, history))
}

/// Trained networks and the history of both stages.
#[derive(Debug, Clone)]
pub struct Progress {
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Stage-one rows followed by stage-two rows, numbered consecutively.
    pub history: Vec<HistoryRow>,
}

/// Visible samples occluded by library masks and completed by copy-paste,
/// paired with themselves. Sample `i` draws its mask from stream `i`.
pub fn stage_one_pools(
    visible: &[Proposal],
    bank: &PrototypeBank,
    library: &MaskLibrary,
    lookup: LookupMode,
    rng: &Rng,
    exec: Exec,
) -> Result<FeaturePools> {
    if library.is_empty() {
        return Err(Error::EmptyMaskLibrary);
    }
    let pasted: Result<Vec<FeatureMap>> = par::map_range(exec, visible.len(), |i| {
        let v = &visible[i];
        let mut r = rng.split(i as u64);
        let mask = library.sample(&mut r)?;
        let proto = bank.lookup(&v.features, v.scale, lookup);
        copy_paste(&v.features, &proto.center, mask)
    })
    .into_iter()
    .collect();
    let originals = visible.iter().map(|p| p.features.clone()).collect();
    FeaturePools::new(pasted?, originals, Pairing::SameIndex)
}

/// Real occluded samples completed by copy-paste at their detected masks,
/// against independently drawn visible samples.
pub fn stage_two_pools(
    visible: &[Proposal],
    occluded: &[Proposal],
    bank: &PrototypeBank,
    occlusion: &OcclusionConfig,
    lookup: LookupMode,
    exec: Exec,
) -> Result<FeaturePools> {
    let pasted: Result<Vec<FeatureMap>> = par::map(exec, occluded, |p| {
        let proto = bank.lookup(&p.features, p.scale, lookup);
        let a = assess(&p.features, &proto.center, occlusion)?;
        copy_paste(&p.features, &proto.center, &a.completion)
    })
    .into_iter()
    .collect();
    let originals = visible.iter().map(|p| p.features.clone()).collect();
    FeaturePools::new(pasted?, originals, Pairing::Independent)
}

/// Two-stage schedule: synthetic occlusions of visible samples first, then
/// real occluded samples. Both networks carry over between stages.
#[allow(clippy::too_many_arguments)]
pub fn progressive_train(
    visible: &[Proposal],
    occluded: &[Proposal],
    bank: &PrototypeBank,
    occlusion: &OcclusionConfig,
    library: &MaskLibrary,
    stages: &StageConfigs,
    lookup: LookupMode,
    rng: &Rng,
    exec: Exec,
) -> Result<Progress> {
    stages.stage_one.validate()?;
    stages.stage_two.validate()?;
    if library.is_empty() {
        return Err(Error::EmptyMaskLibrary);
    }
    let first = visible
        .first()
        .ok_or_else(|| Error::precondition("visible pool is empty"))?;
    let (c, x, y) = first.features.dims();
    let mut init = rng.split(streams::INIT);
    let gen = Generator::new(c, &mut init);
    let disc = Discriminator::new(c * x * y, DISC_HIDDEN, &mut init);

    let mut history = Vec::new();
    let (gen, disc) = if stages.stage_one.iterations > 0 {
        let pools = stage_one_pools(
            visible,
            bank,
            library,
            lookup,
            &rng.split(streams::STAGE_ONE ^ 0x100),
            exec,
        )?;
        let mut r = rng.split(streams::STAGE_ONE);
        let (g, d, h) = train_adversarial(&pools, gen, disc, &stages.stage_one, &mut r, exec)?;
        history.extend(h);
        (g, d)
    } else {
        (gen, disc)
    };
    let (gen, disc) = if stages.stage_two.iterations > 0 {
        let pools = stage_two_pools(visible, occluded, bank, occlusion, lookup, exec)?;
        let mut r = rng.split(streams::STAGE_TWO);
        let (g, d, h) = train_adversarial(&pools, gen, disc, &stages.stage_two, &mut r, exec)?;
        let offset = history.len();
        history.extend(h.into_iter().map(|row| HistoryRow {
            iteration: row.iteration + offset,
            ..row
        }));
        (g, d)
    } else {
        (gen, disc)
    };
    Ok(Progress {
        generator: gen,
        discriminator: disc,
        history,
    })
}
