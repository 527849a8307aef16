//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::completion::{HeadConfig, StageConfigs, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::occlusion::{Aggregation, BetaMode, OcclusionConfig};
use crate::prototypes::LookupMode;
use crate::synth::{default_layout, BenchmarkSpec, ScaleComponent, SplitSpec, WorldConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub world: WorldConfig,
    pub train_split: SplitSpec,
    pub benchmark: BenchmarkSpec,
    pub k_proto: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub lookup: LookupMode,
    pub occlusion: OcclusionConfig,
    pub head: HeadConfig,
    pub stages: StageConfigs,
    pub eval: EvalConfig,
    pub probe_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            threads: 1,
            world: WorldConfig::default(),
            train_split: SplitSpec {
                visible: 1000,
                occluded: 1000,
                background: 1000,
            },
            benchmark: BenchmarkSpec {
                images: 200,
                visible_per_image: 1,
                occluded_per_image: 3,
                background_per_image: 10,
            },
            k_proto: 5,
            restarts: 5,
            max_iters: 100,
            lookup: LookupMode::Scale,
            occlusion: OcclusionConfig::default(),
            head: HeadConfig::default(),
            stages: StageConfigs::default(),
            eval: EvalConfig::default(),
            probe_epochs: crate::eval::ProbeConfig::default().epochs,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn stage_mut<'a>(cfg: &'a mut RunConfig, section: &str) -> Option<&'a mut TrainConfig> {
    match section {
        "stage1" => Some(&mut cfg.stages.stage_one),
        "stage2" => Some(&mut cfg.stages.stage_two),
        _ => None,
    }
}

impl RunConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.world.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.occlusion.validate()?;
        self.stages.stage_one.validate()?;
        self.stages.stage_two.validate()?;
        self.eval.validate()?;
        if self.k_proto == 0 {
            return Err(Error::Config("proto.K must be at least 1".into()));
        }
        if self.world.seed != self.seed {
            return Err(Error::Config("world seed must equal the run seed".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (section, name) = key.split_once('.').unwrap_or(("", key));
        match (section, name) {
            ("", "seed") => {
                self.seed = parse(key, v)?;
                self.world.seed = self.seed;
            }
            ("", "out") => self.out = PathBuf::from(v),
            ("", "threads") => self.threads = parse(key, v)?,
            ("world", "C") => self.world.channels = parse(key, v)?,
            ("world", "X") => {
                self.world.width = parse(key, v)?;
                self.world.layout = default_layout(self.world.width, self.world.height);
            }
            ("world", "Y") => {
                self.world.height = parse(key, v)?;
                self.world.layout = default_layout(self.world.width, self.world.height);
            }
            ("world", "sigma_id") => self.world.identity_noise = parse(key, v)?,
            ("world", "occluder_gain") => self.world.occluder_gain = parse(key, v)?,
            ("world", "scale_means" | "scale_stds" | "scale_weights") => {
                let values = parse_list(key, v)?;
                let mix = &mut self.world.scale_mixture;
                if values.len() != mix.len() {
                    mix.resize(
                        values.len(),
                        ScaleComponent {
                            mean: 181.0,
                            std: 0.0,
                            weight: 1.0,
                        },
                    );
                }
                for (c, x) in mix.iter_mut().zip(values) {
                    match name {
                        "scale_means" => c.mean = x,
                        "scale_stds" => c.std = x,
                        _ => c.weight = x,
                    }
                }
            }
            ("data", "train_visible") => self.train_split.visible = parse(key, v)?,
            ("data", "train_occluded") => self.train_split.occluded = parse(key, v)?,
            ("data", "train_background") => self.train_split.background = parse(key, v)?,
            ("data", "eval_images") => self.benchmark.images = parse(key, v)?,
            ("data", "eval_visible") => self.benchmark.visible_per_image = parse(key, v)?,
            ("data", "eval_occluded") => self.benchmark.occluded_per_image = parse(key, v)?,
            ("data", "eval_background") => self.benchmark.background_per_image = parse(key, v)?,
            ("proto", "K") => self.k_proto = parse(key, v)?,
            ("proto", "restarts") => self.restarts = parse(key, v)?,
            ("proto", "max_iters") => self.max_iters = parse(key, v)?,
            ("proto", "lookup") => {
                self.lookup = match v {
                    "scale" => LookupMode::Scale,
                    "features" => LookupMode::Features,
                    _ => return Err(Error::Config(format!("invalid value for {key}: {v:?}"))),
                }
            }
            ("occlusion", "alpha") => self.occlusion.alpha = parse(key, v)?,
            ("occlusion", "beta") => self.occlusion.beta = parse(key, v)?,
            ("occlusion", "mean_margin") => self.occlusion.mean_margin = parse(key, v)?,
            ("occlusion", "beta_mode") => {
                self.occlusion.beta_mode = match v {
                    "dynamic-mean" => BetaMode::DynamicMean,
                    "fixed" => BetaMode::Fixed,
                    _ => return Err(Error::Config(format!("invalid value for {key}: {v:?}"))),
                }
            }
            ("occlusion", "aggregation") => {
                self.occlusion.aggregation = match v {
                    "mean" => Aggregation::Mean,
                    "max" => Aggregation::Max,
                    _ => return Err(Error::Config(format!("invalid value for {key}: {v:?}"))),
                }
            }
            ("head", "epochs") => self.head.epochs = parse(key, v)?,
            ("head", "rate") => self.head.rate = parse(key, v)?,
            ("head", "weight_decay") => self.head.weight_decay = parse(key, v)?,
            ("stage1" | "stage2", field) => {
                let stage = stage_mut(self, section).expect("matched stage section");
                match field {
                    "T" => stage.iterations = parse(key, v)?,
                    "K_disc" => stage.disc_steps = parse(key, v)?,
                    "m" => stage.batch = parse(key, v)?,
                    "gamma" => stage.rate = parse(key, v)?,
                    "freeze_generator" => stage.freeze_generator = parse(key, v)?,
                    _ => return Err(Error::Config(format!("unknown key {key}"))),
                }
            }
            ("eval", "fppi") => self.eval.fppi_points = parse_list(key, v)?,
            ("eval", "iou_match_threshold") => self.eval.iou_match_threshold = parse(key, v)?,
            ("eval", "miss_floor") => self.eval.miss_floor = parse(key, v)?,
            ("eval", "probe_epochs") => self.probe_epochs = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Every key, one per line, in a fixed order. Parsing the result gives
    /// back an equal config.
    pub fn serialize(&self) -> String {
        let w = &self.world;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
        };
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("threads", self.threads.to_string());
        put("world.C", w.channels.to_string());
        put("world.X", w.width.to_string());
        put("world.Y", w.height.to_string());
        put("world.sigma_id", w.identity_noise.to_string());
        put("world.occluder_gain", w.occluder_gain.to_string());
        put("world.scale_means", join(w.scale_mixture.iter().map(|c| c.mean)));
        put("world.scale_stds", join(w.scale_mixture.iter().map(|c| c.std)));
        put("world.scale_weights", join(w.scale_mixture.iter().map(|c| c.weight)));
        put("data.train_visible", self.train_split.visible.to_string());
        put("data.train_occluded", self.train_split.occluded.to_string());
        put("data.train_background", self.train_split.background.to_string());
        put("data.eval_images", self.benchmark.images.to_string());
        put("data.eval_visible", self.benchmark.visible_per_image.to_string());
        put("data.eval_occluded", self.benchmark.occluded_per_image.to_string());
        put("data.eval_background", self.benchmark.background_per_image.to_string());
        put("proto.K", self.k_proto.to_string());
        put("proto.restarts", self.restarts.to_string());
        put("proto.max_iters", self.max_iters.to_string());
        put(
            "proto.lookup",
            match self.lookup {
                LookupMode::Scale => "scale",
                LookupMode::Features => "features",
            }
            .into(),
        );
        let o = &self.occlusion;
        put("occlusion.alpha", o.alpha.to_string());
        put(
            "occlusion.beta_mode",
            match o.beta_mode {
                BetaMode::DynamicMean => "dynamic-mean",
                BetaMode::Fixed => "fixed",
            }
            .into(),
        );
        put("occlusion.beta", o.beta.to_string());
        put("occlusion.mean_margin", o.mean_margin.to_string());
        put(
            "occlusion.aggregation",
            match o.aggregation {
                Aggregation::Mean => "mean",
                Aggregation::Max => "max",
            }
            .into(),
        );
        put("head.epochs", self.head.epochs.to_string());
        put("head.rate", self.head.rate.to_string());
        put("head.weight_decay", self.head.weight_decay.to_string());
        for (name, st) in [("stage1", &self.stages.stage_one), ("stage2", &self.stages.stage_two)] {
            put(&format!("{name}.T"), st.iterations.to_string());
            put(&format!("{name}.K_disc"), st.disc_steps.to_string());
            put(&format!("{name}.m"), st.batch.to_string());
            put(&format!("{name}.gamma"), st.rate.to_string());
            put(&format!("{name}.freeze_generator"), st.freeze_generator.to_string());
        }
        put("eval.fppi", join(self.eval.fppi_points.iter().copied()));
        put("eval.iou_match_threshold", self.eval.iou_match_threshold.to_string());
        put("eval.miss_floor", self.eval.miss_floor.to_string());
        put("eval.probe_epochs", self.probe_epochs.to_string());
        s
    }

    pub fn kmeans(&self) -> crate::prototypes::KMeansConfig {
        crate::prototypes::KMeansConfig {
            k: self.k_proto,
            restarts: self.restarts,
            max_iters: self.max_iters,
            seed: self.seed,
            exec: crate::par::Exec::for_threads(self.threads),
        }
    }
}
