//! End-to-end commands behind the CLI. Each writes its outputs plus a copy of
//! the run configuration into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::completion::{
    progressive_train, write_history_csv, write_model, Completer, MaskLibrary, Model, Progress, ScoringHead,
    MIN_LIBRARY,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{compactness_ratio, mask_iou, probe_accuracy_with, Benchmark, ProbeConfig, Subset};
use crate::feature::{FeatureMap, OcclusionMask};
use crate::ndnum::{streams, Rng};
use crate::occlusion::{assess, channel_correlation, CorrelationMap};
use crate::par::{self, Exec};
use crate::prototypes::{build_pool, kmeans, write_bank, PrototypeBank};
use crate::synth::{gen_benchmark, gen_training_split, gen_world, write_dataset, Label, Proposal};

pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_FILE: &str = "train.fcds";
pub const EVAL_FILE: &str = "eval.fcds";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BANK_FILE: &str = "bank.fcpb";
pub const MODEL_FILE: &str = "model.fcgd";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn prepare(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), config.serialize())?;
    Ok(())
}

fn exec(config: &RunConfig) -> Exec {
    Exec::for_threads(config.threads)
}

/// Proposal counts by kind and visibility subset.
pub fn manifest(name: &str, proposals: &[Proposal]) -> String {
    let visible = proposals.iter().filter(|p| p.is_fully_visible_pedestrian()).count();
    let occluded = proposals.iter().filter(|p| p.true_mask.is_some()).count();
    let background = proposals.iter().filter(|p| p.label == Label::Background).count();
    let mut s = String::new();
    let mut put = |k: String, v: usize| writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
    put(format!("{name}.total"), proposals.len());
    put(format!("{name}.visible"), visible);
    put(format!("{name}.occluded"), occluded);
    put(format!("{name}.background"), background);
    for subset in Subset::ALL {
        let n = proposals
            .iter()
            .filter(|p| p.label == Label::Pedestrian && subset.contains(p.visibility))
            .count();
        put(format!("{name}.{}", subset.name()), n);
    }
    s
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Vec<Proposal>,
    pub eval: Vec<Proposal>,
    pub manifest: String,
}

/// Generates the training split and the evaluation benchmark.
pub fn synthesize(config: &RunConfig) -> Result<(Vec<Proposal>, Vec<Proposal>)> {
    let world = gen_world(&config.world)?;
    let root = Rng::new(config.seed);
    let train = gen_training_split(
        &world,
        config.train_split,
        &root.split(streams::TRAIN_SPLIT),
        exec(config),
    )?;
    let eval = gen_benchmark(&world, config.benchmark, &root.split(streams::EVAL_SPLIT), exec(config))?;
    Ok((train, eval))
}

/// Writes `train.fcds`, `eval.fcds` and `manifest.txt`.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<SynthOutput> {
    prepare(config, out)?;
    let (train, eval) = synthesize(config)?;
    write_dataset(&train, &out.join(TRAIN_FILE))?;
    write_dataset(&eval, &out.join(EVAL_FILE))?;
    let manifest = manifest("train", &train) + &manifest("eval", &eval);
    fs::write(out.join(MANIFEST_FILE), &manifest)?;
    info!("wrote {} training and {} evaluation proposals", train.len(), eval.len());
    Ok(SynthOutput { train, eval, manifest })
}

pub fn build_prototypes(config: &RunConfig, train: &[Proposal]) -> Result<PrototypeBank> {
    kmeans(&build_pool(train)?, &config.kmeans())
}

/// Clusters the fully visible training pedestrians into `bank.fcpb`.
pub fn cmd_build_prototypes(config: &RunConfig, dataset: &Path, out: &Path) -> Result<PrototypeBank> {
    let train = crate::synth::read_dataset(dataset)?;
    prepare(config, out)?;
    let bank = build_prototypes(config, &train)?;
    write_bank(&bank, &out.join(BANK_FILE))?;
    Ok(bank)
}

/// Training proposals grouped by kind.
pub struct Groups<'a> {
    pub visible: Vec<&'a Proposal>,
    pub occluded: Vec<&'a Proposal>,
    pub background: Vec<&'a Proposal>,
}

pub fn group(proposals: &[Proposal]) -> Groups<'_> {
    Groups {
        visible: proposals.iter().filter(|p| p.is_fully_visible_pedestrian()).collect(),
        occluded: proposals.iter().filter(|p| p.true_mask.is_some()).collect(),
        background: proposals.iter().filter(|p| p.label == Label::Background).collect(),
    }
}

fn owned(ps: &[&Proposal]) -> Vec<Proposal> {
    ps.iter().map(|&p| p.clone()).collect()
}

fn features(ps: &[&Proposal]) -> Vec<FeatureMap> {
    ps.iter().map(|p| p.features.clone()).collect()
}

/// Scoring head, mask library and both training stages.
pub fn train_model(config: &RunConfig, train: &[Proposal], bank: &PrototypeBank) -> Result<(Model, Progress)> {
    config.validate()?;
    let g = group(train);
    let head = ScoringHead::train(&features(&g.visible), &features(&g.background), &config.head)?;
    let visible = owned(&g.visible);
    let occluded = owned(&g.occluded);
    let mut library = MaskLibrary::harvest(&occluded, bank, &config.occlusion, config.lookup)?;
    info!("mask library: {} harvested masks", library.len());
    if library.len() < MIN_LIBRARY {
        let world = gen_world(&config.world)?;
        let mut rng = Rng::new(config.seed).split(streams::STAGE_ONE ^ 0x200);
        library.fill_from_patterns(&world, MIN_LIBRARY, &mut rng);
    }
    let rng = Rng::new(config.seed);
    let progress = progressive_train(
        &visible,
        &occluded,
        bank,
        &config.occlusion,
        &library,
        &config.stages,
        config.lookup,
        &rng,
        exec(config),
    )?;
    let model = Model {
        generator: progress.generator.clone(),
        discriminator: progress.discriminator.clone(),
        head,
        stages: config.stages,
    };
    Ok((model, progress))
}

/// Writes `model.fcgd` and `history.csv`.
pub fn cmd_train(config: &RunConfig, dataset: &Path, bank: &Path, out: &Path) -> Result<Model> {
    let train = crate::synth::read_dataset(dataset)?;
    let bank = crate::prototypes::read_bank(bank)?;
    prepare(config, out)?;
    let (model, progress) = train_model(config, &train, &bank)?;
    write_model(&model, &out.join(MODEL_FILE))?;
    write_history_csv(&progress.history, &out.join(HISTORY_FILE))?;
    Ok(model)
}

/// Per-proposal inference results.
#[derive(Debug, Clone)]
pub struct Scored {
    pub baseline: f64,
    pub rescored: f64,
    pub occluded: bool,
    pub completed: FeatureMap,
    pub completion_mask: OcclusionMask,
}

pub fn score_proposals(
    config: &RunConfig,
    proposals: &[Proposal],
    bank: &PrototypeBank,
    model: &Model,
) -> Result<Vec<Scored>> {
    let completer = Completer {
        bank,
        occlusion: &config.occlusion,
        generator: &model.generator,
        lookup: config.lookup,
    };
    par::map(exec(config), proposals, |p| {
        let baseline = model.head.score(&p.features)?;
        let c = completer.complete(&p.features, p.scale)?;
        let occluded = c.assessment.is_occluded;
        let base = Proposal {
            score: baseline,
            ..p.clone()
        };
        let rescored = crate::completion::rescore(&base, &c.completed, occluded, &model.head)?;
        Ok(Scored {
            baseline,
            rescored,
            occluded,
            completed: c.completed,
            completion_mask: c.assessment.completion,
        })
    })
    .into_iter()
    .collect()
}

/// One metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetReport {
    pub subset: Subset,
    pub mr_baseline: f64,
    pub mr_completed: f64,
    pub compactness_ratio: f64,
    pub probe_raw: f64,
    pub probe_completed: f64,
    pub mask_iou: f64,
    pub ground_truths: usize,
    pub occluded_samples: usize,
}

impl SubsetReport {
    /// Baseline minus completed miss rate; positive is an improvement.
    pub fn delta_mr(&self) -> f64 {
        self.mr_baseline - self.mr_completed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<SubsetReport>,
}

impl EvalReport {
    pub fn row(&self, subset: Subset) -> &SubsetReport {
        self.rows
            .iter()
            .find(|r| r.subset == subset)
            .expect("every subset is reported")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "subset,mr_baseline,mr_completed,delta_mr,compactness_ratio,probe_raw,probe_completed,mask_iou,ground_truths,occluded_samples\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.subset,
                r.mr_baseline,
                r.mr_completed,
                r.delta_mr(),
                r.compactness_ratio,
                r.probe_raw,
                r.probe_completed,
                r.mask_iou,
                r.ground_truths,
                r.occluded_samples
            )
            .expect("writing to a String cannot fail");
        }
        s
    }
}

/// Miss rates with and without completion plus feature diagnostics of the
/// occluded pedestrians in each subset.
pub fn evaluate(config: &RunConfig, proposals: &[Proposal], bank: &PrototypeBank, model: &Model) -> Result<EvalReport> {
    let scored = score_proposals(config, proposals, bank, model)?;
    let baseline = Benchmark::from_proposals(proposals, &scored.iter().map(|s| s.baseline).collect::<Vec<_>>())?;
    let completed = Benchmark::from_proposals(proposals, &scored.iter().map(|s| s.rescored).collect::<Vec<_>>())?;
    let visible: Vec<FeatureMap> = proposals
        .iter()
        .filter(|p| p.is_fully_visible_pedestrian())
        .map(|p| p.features.clone())
        .collect();
    let probe = ProbeConfig {
        epochs: config.probe_epochs,
        ..ProbeConfig::default()
    };
    let mut rows = Vec::new();
    for subset in Subset::ALL {
        let ground_truths = proposals
            .iter()
            .filter(|p| p.label == Label::Pedestrian && subset.contains(p.visibility))
            .count();
        let occ: Vec<usize> = (0..proposals.len())
            .filter(|&i| proposals[i].true_mask.is_some() && subset.contains(proposals[i].visibility))
            .collect();
        let raw: Vec<FeatureMap> = occ.iter().map(|&i| proposals[i].features.clone()).collect();
        let done: Vec<FeatureMap> = occ.iter().map(|&i| scored[i].completed.clone()).collect();
        let (compactness, probe_raw, probe_completed) = if raw.is_empty() || visible.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let c = compactness_ratio(&raw, &done, &visible)?;
            let probe_at = |set: &[FeatureMap]| {
                probe_accuracy_with(set, &visible, config.seed, &probe, exec(config)).unwrap_or(f64::NAN)
            };
            (c, probe_at(&raw), probe_at(&done))
        };
        let mut iou = 0.0;
        for &i in &occ {
            let truth = proposals[i].true_mask.as_ref().expect("occluded proposals carry masks");
            iou += mask_iou(&scored[i].completion_mask, truth)?;
        }
        let mask_iou = if occ.is_empty() {
            f64::NAN
        } else {
            iou / occ.len() as f64
        };
        rows.push(SubsetReport {
            subset,
            mr_baseline: baseline.miss_rate(&config.eval, subset)?,
            mr_completed: completed.miss_rate(&config.eval, subset)?,
            compactness_ratio: compactness,
            probe_raw,
            probe_completed,
            mask_iou,
            ground_truths,
            occluded_samples: occ.len(),
        });
    }
    Ok(EvalReport { rows })
}

/// Writes `metrics.csv`.
pub fn cmd_eval(config: &RunConfig, dataset: &Path, bank: &Path, model: &Path, out: &Path) -> Result<EvalReport> {
    let proposals = crate::synth::read_dataset(dataset)?;
    let bank = crate::prototypes::read_bank(bank)?;
    let model = crate::completion::read_model(model)?;
    prepare(config, out)?;
    let report = evaluate(config, &proposals, &bank, &model)?;
    fs::write(out.join(METRICS_FILE), report.to_csv())?;
    Ok(report)
}

/// 8-bit binary PGM, min-max scaled; `x` runs along rows.
pub fn pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for x in 0..width {
            let v = values[x * height + y];
            let level = if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round()
            } else {
                0.0
            };
            out.push(level as u8);
        }
    }
    out
}

/// Grid as CSV: one line per `y`, one column per `x`.
pub fn grid_csv(width: usize, height: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for y in 0..height {
        let row: Vec<String> = (0..width).map(|x| format!("{}", values[x * height + y])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub map: CorrelationMap,
    pub mask: OcclusionMask,
    pub prototype_id: usize,
    /// Overlap with the generator's mask when the proposal has one.
    pub iou: Option<f64>,
    pub files: Vec<PathBuf>,
}

/// Correlation map and occlusion mask of one proposal against its nearest
/// prototype, as PGM images and CSV grids (one per channel as well).
pub fn cmd_inspect(config: &RunConfig, dataset: &Path, bank: &Path, id: u64, out: &Path) -> Result<InspectReport> {
    let proposals = crate::synth::read_dataset(dataset)?;
    let bank = crate::prototypes::read_bank(bank)?;
    let p = proposals
        .iter()
        .find(|p| p.id == id)
        .ok_or(Error::UnknownProposal(id))?;
    prepare(config, out)?;
    let proto = bank.lookup(&p.features, p.scale, config.lookup);
    let a = assess(&p.features, &proto.center, &config.occlusion)?;
    let map = a.map.with_sources(p.id, proto.id as u64);
    let (w, h) = (map.width(), map.height());
    let mask_values: Vec<f64> = a.occluded.cells().iter().map(|&m| m as u8 as f64).collect();
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    emit(format!("{id}_correlation.pgm"), pgm(w, h, map.values()))?;
    emit(format!("{id}_mask.pgm"), pgm(w, h, &mask_values))?;
    emit(
        format!("{id}_correlation.csv"),
        grid_csv(w, h, map.values()).into_bytes(),
    )?;
    emit(format!("{id}_mask.csv"), grid_csv(w, h, &mask_values).into_bytes())?;
    for c in 0..p.features.channels() {
        let ch = channel_correlation(&p.features, &proto.center, c)?;
        emit(
            format!("{id}_channel_{c:02}.csv"),
            grid_csv(w, h, ch.values()).into_bytes(),
        )?;
    }
    let iou = match &p.true_mask {
        Some(t) => Some(mask_iou(&a.occluded, t)?),
        None => None,
    };
    Ok(InspectReport {
        map,
        mask: a.occluded,
        prototype_id: proto.id,
        iou,
        files,
    })
}
