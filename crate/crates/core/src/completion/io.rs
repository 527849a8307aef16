use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::networks::{Discriminator, Generator, ScoringHead};
use super::train::{HistoryRow, Stage, StageConfigs, TrainConfig};
use crate::container::{Decoder, Encoder};
use crate::error::Result;
use crate::ndnum::{Activation, DenseLayer};

const MODEL_MAGIC: &[u8; 4] = b"FCGD";
const MODEL_VERSION: u32 = 1;

/// Everything `train` produces: the networks, the frozen scoring head and
/// the stage configurations used.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub head: ScoringHead,
    pub stages: StageConfigs,
}

fn put_layer(e: &mut Encoder, layer: &DenseLayer) -> Result<()> {
    e.len_u32(layer.inputs())?;
    e.len_u32(layer.outputs())?;
    e.u8(layer.activation().code());
    e.f64s(layer.weights());
    e.f64s(layer.bias());
    Ok(())
}

fn get_layer(d: &mut Decoder) -> Result<DenseLayer> {
    let inputs = d.usize32()?;
    let outputs = d.usize32()?;
    let code = d.u8()?;
    let activation = Activation::from_code(code).ok_or_else(|| d.malformed(format!("unknown activation {code}")))?;
    if inputs == 0 || outputs == 0 {
        return Err(d.malformed("layer with zero dimension"));
    }
    let weights = d.f64s(inputs * outputs)?;
    let bias = d.f64s(outputs)?;
    DenseLayer::from_parts(inputs, outputs, weights, bias, activation)
}

fn put_config(e: &mut Encoder, c: &TrainConfig) {
    e.u64(c.iterations as u64);
    e.u64(c.disc_steps as u64);
    e.u64(c.batch as u64);
    e.f64(c.rate);
    e.u8(c.stage.code());
    e.u8(c.freeze_generator as u8);
}

fn get_config(d: &mut Decoder) -> Result<TrainConfig> {
    let iterations = d.u64()? as usize;
    let disc_steps = d.u64()? as usize;
    let batch = d.u64()? as usize;
    let rate = d.f64()?;
    let code = d.u8()?;
    let stage = Stage::from_code(code).ok_or_else(|| d.malformed(format!("unknown stage {code}")))?;
    let freeze_generator = d.u8()? != 0;
    Ok(TrainConfig {
        iterations,
        disc_steps,
        batch,
        rate,
        stage,
        freeze_generator,
    })
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let mut e = Encoder::new(MODEL_MAGIC, MODEL_VERSION);
    put_layer(&mut e, &model.generator.mix)?;
    put_layer(&mut e, &model.generator.out)?;
    put_layer(&mut e, &model.discriminator.hidden)?;
    put_layer(&mut e, &model.discriminator.out)?;
    e.u8(model.head.is_trained() as u8);
    put_layer(&mut e, model.head.layer())?;
    put_config(&mut e, &model.stages.stage_one);
    put_config(&mut e, &model.stages.stage_two);
    Ok(e.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let (mut d, version) = Decoder::open(bytes, MODEL_MAGIC)?;
    if version != MODEL_VERSION {
        return Err(d.malformed(format!("unsupported model version {version}")));
    }
    let at = d.offset();
    let generator =
        Generator::from_layers(get_layer(&mut d)?, get_layer(&mut d)?).map_err(|e| crate::Error::Malformed {
            offset: at,
            reason: e.to_string(),
        })?;
    let at = d.offset();
    let discriminator =
        Discriminator::from_layers(get_layer(&mut d)?, get_layer(&mut d)?).map_err(|e| crate::Error::Malformed {
            offset: at,
            reason: e.to_string(),
        })?;
    let trained = d.u8()? != 0;
    let at = d.offset();
    let layer = get_layer(&mut d)?;
    let head = if trained {
        ScoringHead::from_layer(layer).map_err(|e| crate::Error::Malformed {
            offset: at,
            reason: e.to_string(),
        })?
    } else {
        ScoringHead::untrained(layer.inputs())
    };
    let stages = StageConfigs {
        stage_one: get_config(&mut d)?,
        stage_two: get_config(&mut d)?,
    };
    d.finish()?;
    Ok(Model {
        generator,
        discriminator,
        head,
        stages,
    })
}

pub fn write_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

/// `iteration,disc_objective,gen_objective,probe_accuracy` rows.
pub fn write_history_csv(history: &[HistoryRow], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,disc_objective,gen_objective,probe_accuracy\n");
    for r in history {
        writeln!(
            s,
            "{},{:.17e},{:.17e},{:.17e}",
            r.iteration, r.disc_objective, r.gen_objective, r.probe_accuracy
        )
        .expect("writing to a String cannot fail");
    }
    fs::write(path, s)?;
    Ok(())
}
