use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DataSpec;
use crate::detect::{filter_gt_boxes, BBox, Detection};
use crate::error::{invalid, Result};
use crate::events::{encode_voxel_cube, generate_with, GroundTruth, SynthConfig, VoxelCube};
use crate::par;

/// Minimum side and diagonal of a kept ground-truth box, pixels.
pub const MIN_BOX_SIDE: f64 = 10.0;
pub const MIN_BOX_DIAG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cube: VoxelCube,
    pub label: u32,
    pub boxes: Vec<(u32, BBox)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Seed of sample `i` in a split; splits never share a stream.
pub fn sample_seed(seed: u64, split: Split, i: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x5eed_0001,
        Split::Test => 0x5eed_0002,
    };
    ChaCha8Rng::seed_from_u64(seed ^ (tag << 32)).gen::<u64>() ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Ground-truth boxes of the last annotation window, size-filtered and
/// clipped to the sensor.
pub fn final_boxes(gt: &GroundTruth, width: f64, height: f64) -> Vec<(u32, BBox)> {
    let GroundTruth::Boxes(all) = gt else {
        return Vec::new();
    };
    let Some(last) = all.iter().map(|b| b.t_end).max() else {
        return Vec::new();
    };
    let dets: Vec<Detection> = all
        .iter()
        .filter(|b| b.t_end == last)
        .map(|b| Detection {
            class: b.class,
            score: 1.0,
            bbox: BBox::new(b.x, b.y, b.w, b.h).clipped(width, height),
        })
        .collect();
    filter_gt_boxes(&dets, MIN_BOX_SIDE, MIN_BOX_DIAG)
        .into_iter()
        .map(|d| (d.class, d.bbox))
        .collect()
}

pub fn synth_config(spec: &DataSpec, seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::new(spec.scenario, seed, spec.duration, spec.width, spec.height, spec.rate);
    cfg.noise = spec.noise;
    cfg
}

/// Generate and encode one split. Classification splits alternate classes.
pub fn build_dataset(spec: &DataSpec, seed: u64, split: Split, count: usize) -> Result<Dataset> {
    if count == 0 {
        return invalid("dataset needs at least one sample");
    }
    let detection = spec.scenario.is_detection();
    let samples = par::map_range(count, |i| {
        let mut cfg = synth_config(spec, sample_seed(seed, split, i));
        if !detection {
            cfg.class = Some((i % 2) as u32);
        }
        let (stream, gt) = generate_with(&cfg)?;
        let cube = encode_voxel_cube(&stream, 0, spec.duration, spec.t_bins, spec.micro_bins)?;
        let label = match gt {
            GroundTruth::Class(c) => c,
            _ => 0,
        };
        Ok(Sample {
            cube,
            label,
            boxes: final_boxes(&gt, spec.width as f64, spec.height as f64),
        })
    });
    Ok(Dataset {
        samples: samples.into_iter().collect::<Result<_>>()?,
    })
}

/// Mirror a sample and its boxes along the width axis.
pub fn flip_sample(s: &Sample) -> Sample {
    let w = s.cube.width as f64;
    Sample {
        cube: s.cube.mirrored(),
        label: s.label,
        boxes: s
            .boxes
            .iter()
            .map(|&(c, b)| (c, BBox::new(w - b.x - b.w, b.y, b.w, b.h)))
            .collect(),
    }
}
