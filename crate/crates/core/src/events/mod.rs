//! Events, streams, augmentation and voxel-cube encoding.

mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub use io::{parse_gt, read_event_file, read_events, read_gt_file, write_event_file, write_events, write_gt, write_gt_file};
pub use synth::{generate_synthetic_stream, generate_with, Scenario, SynthConfig};

/// One sensor event. `t` in microseconds, polarity `p` in {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: u8,
}

/// Time-ordered events of one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: u16,
    pub height: u16,
    pub duration: u64,
}

impl EventStream {
    /// Validating constructor.
    pub fn new(events: Vec<Event>, width: u16, height: u16, duration: u64) -> Result<Self> {
        let s = Self {
            events,
            width,
            height,
            duration,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(width: u16, height: u16, duration: u64) -> Self {
        Self {
            events: Vec::new(),
            width,
            height,
            duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return invalid("zero-area sensor");
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height || e.p > 1 || e.t >= self.duration {
                return Err(Error::EventOutOfBounds {
                    index: i,
                    detail: format!(
                        "{e:?} outside {}x{} sensor, duration {}",
                        self.width, self.height, self.duration
                    ),
                });
            }
            if i > 0 && self.events[i - 1].t > e.t {
                return Err(Error::UnsortedTimestamps { index: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Event counts binned to `[T, 2n, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelCube {
    pub data: Vec<u32>,
    pub t_bins: usize,
    pub n: usize,
    pub height: usize,
    pub width: usize,
}

impl VoxelCube {
    pub fn zeros(t_bins: usize, n: usize, height: usize, width: usize) -> Self {
        Self {
            data: vec![0; t_bins * 2 * n * height * width],
            t_bins,
            n,
            height,
            width,
        }
    }

    pub fn channels(&self) -> usize {
        2 * self.n
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t_bins, self.channels(), self.height, self.width]
    }

    pub fn index(&self, tau: usize, c: usize, y: usize, x: usize) -> usize {
        ((tau * self.channels() + c) * self.height + y) * self.width + x
    }

    pub fn get(&self, tau: usize, c: usize, y: usize, x: usize) -> u32 {
        self.data[self.index(tau, c, y, x)]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Tensor::from_vec(&self.shape(), data).expect("cube shape")
    }

    /// Mirror along the width axis.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        let w = self.width;
        for (src, dst) in self.data.chunks(w).zip(out.data.chunks_mut(w)) {
            for x in 0..w {
                dst[x] = src[w - 1 - x];
            }
        }
        out
    }
}

/// Stack cubes into a time-major batch `[T*N, 2n, H, W]`, row `t*N + i`.
pub fn stack_time_major(cubes: &[&VoxelCube]) -> Result<Tensor> {
    let Some(first) = cubes.first() else {
        return invalid("cannot stack zero cubes");
    };
    let shape = first.shape();
    if cubes.iter().any(|c| c.shape() != shape) {
        return invalid("cubes in a batch must share one shape");
    }
    let plane: usize = shape[1..].iter().product();
    let n = cubes.len();
    let mut data = vec![0.0; shape[0] * n * plane];
    for t in 0..shape[0] {
        for (i, c) in cubes.iter().enumerate() {
            let dst = &mut data[(t * n + i) * plane..(t * n + i + 1) * plane];
            let src = &c.data[t * plane..(t + 1) * plane];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s as f64);
        }
    }
    Tensor::from_vec(&[shape[0] * n, shape[1], shape[2], shape[3]], data)
}

/// Bin events in `[t_a, t_b)` into a cube with `t_bins` time bins, each split
/// into `n` micro bins.
///
/// With `k = floor((t - t_a) * T * n / (t_b - t_a))`, the time bin is `k / n`
/// and the channel is `p * n + k % n`.
pub fn encode_voxel_cube(stream: &EventStream, t_a: u64, t_b: u64, t_bins: usize, n: usize) -> Result<VoxelCube> {
    if t_a >= t_b {
        return invalid(format!("empty window [{t_a}, {t_b})"));
    }
    if t_bins == 0 || n == 0 {
        return invalid("time bins and micro bins must be positive");
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut cube = VoxelCube::zeros(t_bins, n, h, w);
    let span = (t_b - t_a) as u128;
    let scale = (t_bins * n) as u128;
    for e in stream.events.iter().filter(|e| e.t >= t_a && e.t < t_b) {
        let k = ((e.t - t_a) as u128 * scale / span) as usize;
        let (tau, micro) = (k / n, k % n);
        let c = e.p as usize * n + micro;
        let i = cube.index(tau, c, e.y as usize, e.x as usize);
        cube.data[i] += 1;
    }
    Ok(cube)
}

pub fn horizontal_flip(stream: &EventStream) -> EventStream {
    let w = stream.width;
    EventStream {
        events: stream
            .events
            .iter()
            .map(|e| Event { x: w - 1 - e.x, ..*e })
            .collect(),
        ..stream.clone()
    }
}

/// Nearest-neighbour rescale of event coordinates: `x' = floor(x * out_w / w)`.
pub fn resize_stream_nearest(stream: &EventStream, out_w: u16, out_h: u16) -> Result<EventStream> {
    if out_w == 0 || out_h == 0 {
        return invalid("resize target must be positive");
    }
    let (w, h) = (stream.width as u32, stream.height as u32);
    let events = stream
        .events
        .iter()
        .map(|e| Event {
            x: (e.x as u32 * out_w as u32 / w) as u16,
            y: (e.y as u32 * out_h as u32 / h) as u16,
            ..*e
        })
        .collect();
    Ok(EventStream {
        events,
        width: out_w,
        height: out_h,
        duration: stream.duration,
    })
}

/// Events with `t` in `[t_start, t_start + length)`, re-based to zero.
pub fn window_slice(stream: &EventStream, t_start: u64, length: u64) -> Result<EventStream> {
    if length == 0 {
        return invalid("window length must be positive");
    }
    let end = t_start.saturating_add(length);
    let lo = stream.events.partition_point(|e| e.t < t_start);
    let hi = stream.events.partition_point(|e| e.t < end);
    Ok(EventStream {
        events: stream.events[lo..hi]
            .iter()
            .map(|e| Event { t: e.t - t_start, ..*e })
            .collect(),
        width: stream.width,
        height: stream.height,
        duration: length,
    })
}

/// Ground-truth box in pixels, top-left anchored, valid over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub t_start: u64,
    pub t_end: u64,
    pub class: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Class(u32),
    Boxes(Vec<GtBox>),
}
