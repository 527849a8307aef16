use std::fs;
use std::path::Path;

use super::{gen_background, gen_pedestrian, gen_random_occluded, proposal_id, Label, Proposal, World};
use crate::container::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, OcclusionMask};
use crate::ndnum::Rng;
use crate::par::{self, Exec};

const DATASET_MAGIC: &[u8; 4] = b"FCDS";
const DATASET_VERSION: u32 = 1;

/// Proposal counts for a training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub visible: usize,
    pub occluded: usize,
    pub background: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.visible + self.occluded + self.background
    }
}

/// Per-image proposal counts for the detection benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkSpec {
    pub images: usize,
    pub visible_per_image: usize,
    pub occluded_per_image: usize,
    pub background_per_image: usize,
}

impl BenchmarkSpec {
    pub fn per_image(&self) -> usize {
        self.visible_per_image + self.occluded_per_image + self.background_per_image
    }
}

fn kind_for_slot(slot: usize, visible: usize, occluded: usize) -> u8 {
    if slot < visible {
        0
    } else if slot < visible + occluded {
        1
    } else {
        2
    }
}

fn generate(world: &World, kind: u8, rng: &mut Rng) -> Result<Proposal> {
    match kind {
        0 => {
            let scale = world.sample_scale(rng);
            gen_pedestrian(world, scale, rng)
        }
        1 => gen_random_occluded(world, rng),
        _ => Ok(gen_background(world, rng)),
    }
}

/// Visible pedestrians, then occluded pedestrians, then backgrounds, all in
/// image 0. Proposal `i` draws from stream `i` of `rng`.
pub fn gen_training_split(world: &World, spec: SplitSpec, rng: &Rng, exec: Exec) -> Result<Vec<Proposal>> {
    par::map_range(exec, spec.total(), |i| {
        let mut r = rng.split(i as u64);
        let mut p = generate(world, kind_for_slot(i, spec.visible, spec.occluded), &mut r)?;
        p.id = i as u64;
        Ok(p)
    })
    .into_iter()
    .collect()
}

/// Benchmark images; slot `k` of image `j` gets id `proposal_id(j, k)`.
pub fn gen_benchmark(world: &World, spec: BenchmarkSpec, rng: &Rng, exec: Exec) -> Result<Vec<Proposal>> {
    let per = spec.per_image();
    par::map_range(exec, spec.images * per, |i| {
        let (image, slot) = (i / per, i % per);
        let mut r = rng.split(i as u64);
        let kind = kind_for_slot(slot, spec.visible_per_image, spec.occluded_per_image);
        let mut p = generate(world, kind, &mut r)?;
        p.id = proposal_id(image as u32, slot as u32);
        Ok(p)
    })
    .into_iter()
    .collect()
}

/// Serializes proposals. All proposals must share one feature shape; an
/// empty list is written with zero dimensions.
pub fn encode_dataset(proposals: &[Proposal]) -> Result<Vec<u8>> {
    let (c, x, y) = proposals.first().map_or((0, 0, 0), |p| p.features.dims());
    let mut e = Encoder::new(DATASET_MAGIC, DATASET_VERSION);
    e.len_u32(proposals.len())?;
    for d in [c, x, y] {
        e.len_u32(d)?;
    }
    for p in proposals {
        if p.features.dims() != (c, x, y) {
            let (pc, px, py) = p.features.dims();
            return Err(Error::ShapeMismatch {
                left: vec![c, x, y],
                right: vec![pc, px, py],
            });
        }
        e.u64(p.id);
        e.u8(p.label.code());
        e.f64(p.scale);
        e.f64(p.score);
        e.f64(p.visibility);
        match &p.true_mask {
            Some(m) => {
                e.u8(1);
                for &cell in m.cells() {
                    e.u8(u8::from(cell));
                }
            }
            None => e.u8(0),
        }
        e.f64s(p.features.data());
    }
    Ok(e.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Proposal>> {
    let (mut d, version) = Decoder::open(bytes, DATASET_MAGIC)?;
    if version != DATASET_VERSION {
        return Err(d.malformed(format!("unsupported dataset version {version}")));
    }
    let count = d.usize32()?;
    let (c, x, y) = (d.usize32()?, d.usize32()?, d.usize32()?);
    if count > 0 && (c == 0 || x == 0 || y == 0) {
        return Err(d.malformed("zero feature dimension"));
    }
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = d.u64()?;
        let label = {
            let code = d.u8()?;
            Label::from_code(code).ok_or_else(|| d.malformed(format!("bad label {code}")))?
        };
        let scale = d.f64()?;
        let score = d.f64()?;
        let visibility = d.f64()?;
        let true_mask = match d.u8()? {
            0 => None,
            1 => {
                let mut cells = Vec::with_capacity(x * y);
                for _ in 0..x * y {
                    cells.push(match d.u8()? {
                        0 => false,
                        1 => true,
                        b => return Err(d.malformed(format!("bad mask byte {b}"))),
                    });
                }
                Some(OcclusionMask::from_cells(x, y, cells)?)
            }
            b => return Err(d.malformed(format!("bad mask flag {b}"))),
        };
        let features = FeatureMap::new(c, x, y, d.f64s(c * x * y)?)?;
        out.push(Proposal {
            id,
            label,
            scale,
            features,
            score,
            true_mask,
            visibility,
        });
    }
    d.finish()?;
    Ok(out)
}

pub fn write_dataset(proposals: &[Proposal], path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(proposals)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Proposal>> {
    decode_dataset(&fs::read(path)?)
}
