//! Feature completion: copy-paste from the nearest prototype, a residual
//! generator refined adversarially against a discriminator, a two-stage
//! training schedule and rescoring of occluded proposals.

mod check;
mod io;
mod networks;
mod train;


pub use check::chain_gradient_error;
pub use io::{decode_model, encode_model, read_model, write_history_csv, write_model, Model};
pub use networks::{
    Discriminator, DiscriminatorGrads, DiscriminatorTrace, Generator, GeneratorGrads, GeneratorTrace, HeadConfig,
    ScoringHead, DISC_HIDDEN,
};
pub use train::{
    disc_batch, gen_batch, progressive_train, stage_one_pools, stage_two_pools, train_adversarial,
    train_adversarial_observed, DiscBatch, FeaturePools, HistoryRow, Pairing, Progress, Stage, StageConfigs, StepEvent,
    TrainConfig,
};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, OcclusionMask};
use crate::ndnum::{clamp_prob, Rng};
use crate::occlusion::{assess, Assessment, OcclusionConfig};
use crate::prototypes::{LookupMode, PrototypeBank};
use crate::synth::{sample_mask, MaskPattern, Proposal, World};

/// Prototype values at masked cells (all channels), original values elsewhere.
pub fn copy_paste(f_occ: &FeatureMap, prototype: &FeatureMap, mask: &OcclusionMask) -> Result<FeatureMap> {
    f_occ.ensure_same_shape(prototype)?;
    if (mask.width(), mask.height()) != (f_occ.width(), f_occ.height()) {
        return Err(Error::ShapeMismatch {
            left: vec![f_occ.width(), f_occ.height()],
            right: vec![mask.width(), mask.height()],
        });
    }
    let n = f_occ.cells();
    let mut data = f_occ.data().to_vec();
    let src = prototype.data();
    for (i, _) in mask.cells().iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..f_occ.channels() {
            data[c * n + i] = src[c * n + i];
        }
    }
    FeatureMap::new(f_occ.channels(), f_occ.width(), f_occ.height(), data)
}

/// `(log d_vis + log(1 − d_gen), log(1 − d_gen))` after clamping both
/// probabilities.
pub fn adversarial_losses(d_vis: f64, d_gen: f64) -> (f64, f64) {
    let (v, g) = (clamp_prob(d_vis), clamp_prob(d_gen));
    let gen = (1.0 - g).ln();
    (v.ln() + gen, gen)
}

/// Occlusion masks used to synthesize occlusions of visible samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskLibrary {
    pub masks: Vec<OcclusionMask>,
}

/// Library size below which pattern masks are added.
pub const MIN_LIBRARY: usize = 50;

impl MaskLibrary {
    /// Completion masks of the given occluded proposals that the occlusion
    /// rule classifies as occluded.
    pub fn harvest(
        occluded: &[Proposal],
        bank: &PrototypeBank,
        config: &OcclusionConfig,
        lookup: LookupMode,
    ) -> Result<Self> {
        let mut masks = Vec::new();
        for p in occluded {
            let proto = bank.lookup(&p.features, p.scale, lookup);
            let a = assess(&p.features, &proto.center, config)?;
            if a.is_occluded && a.completion.count() > 0 {
                masks.push(a.completion);
            }
        }
        Ok(Self { masks })
    }

    /// Tops the library up to `min` masks with sampled patterns.
    pub fn fill_from_patterns(&mut self, world: &World, min: usize, rng: &mut Rng) {
        let mut k = 0;
        while self.masks.len() < min {
            let pattern = MaskPattern::ALL[k % MaskPattern::ALL.len()];
            self.masks.push(sample_mask(world, pattern, rng));
            k += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<&OcclusionMask> {
        if self.masks.is_empty() {
            return Err(Error::EmptyMaskLibrary);
        }
        Ok(&self.masks[rng.below(self.masks.len())])
    }
}

/// Inference-time completion of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub assessment: Assessment,
    pub prototype_id: usize,
    pub pasted: FeatureMap,
    pub completed: FeatureMap,
}

/// Prototype bank, occlusion rule and generator bundled for inference.
#[derive(Debug, Clone, Copy)]
pub struct Completer<'a> {
    pub bank: &'a PrototypeBank,
    pub occlusion: &'a OcclusionConfig,
    pub generator: &'a Generator,
    pub lookup: LookupMode,
}

impl Completer<'_> {
    pub fn complete(&self, features: &FeatureMap, scale: f64) -> Result<Completion> {
        let proto = self.bank.lookup(features, scale, self.lookup);
        let assessment = assess(features, &proto.center, self.occlusion)?;
        let pasted = copy_paste(features, &proto.center, &assessment.completion)?;
        let completed = self.generator.generate(&pasted)?;
        Ok(Completion {
            assessment,
            prototype_id: proto.id,
            pasted,
            completed,
        })
    }
}

/// New score of a proposal: the head's probability on the completed features
/// when the proposal is occluded, its current score otherwise.
pub fn rescore(proposal: &Proposal, completed: &FeatureMap, occluded: bool, head: &ScoringHead) -> Result<f64> {
    if !head.is_trained() {
        return Err(Error::UntrainedHead);
    }
    if occluded {
        head.score(completed)
    } else {
        Ok(proposal.score)
    }
}
