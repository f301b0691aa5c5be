//! Synthetic event streams from bright rectangles moving over a dark
//! background. Leading edges emit ON events, trailing edges OFF events.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, EventStream, GroundTruth, GtBox};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// One bar crossing the sensor. Class 0 is a vertical bar moving
    /// horizontally, class 1 a horizontal bar moving vertically.
    MovingBar,
    /// One or two bouncing squares of class 0.
    MovingSquare,
    /// Uniform noise only.
    StaticNoise,
    /// Bouncing squares (class 0) and 2:1 rectangles (class 1).
    MultiObject,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::MovingBar,
        Scenario::MovingSquare,
        Scenario::StaticNoise,
        Scenario::MultiObject,
    ];

    pub fn is_detection(self) -> bool {
        !matches!(self, Scenario::MovingBar)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::MovingBar => "moving-bar",
            Scenario::MovingSquare => "moving-square",
            Scenario::StaticNoise => "static-noise",
            Scenario::MultiObject => "multi-object",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Microseconds.
    pub duration: u64,
    pub width: u16,
    pub height: u16,
    /// Events per microsecond.
    pub rate: f64,
    /// Share of events drawn uniformly over the sensor.
    pub noise: f64,
    /// Forced class for classification scenarios.
    pub class: Option<u32>,
    /// Length of each ground-truth annotation window, microseconds.
    pub annotation_period: u64,
}

impl SynthConfig {
    pub fn new(scenario: Scenario, seed: u64, duration: u64, width: u16, height: u16, rate: f64) -> Self {
        Self {
            scenario,
            seed,
            duration,
            width,
            height,
            rate,
            noise: 0.0,
            class: None,
            annotation_period: duration,
        }
    }
}

/// Axis-aligned rectangle with constant velocity, reflecting off the sensor
/// borders when `bounce` is set.
#[derive(Debug, Clone, Copy)]
struct Mover {
    class: u32,
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    bounce: bool,
}

/// Fold `p` into `[0, len]` as a triangle wave; returns position and the
/// sign of motion.
fn reflect(p: f64, len: f64) -> (f64, f64) {
    if len <= 0.0 {
        return (0.0, 1.0);
    }
    let period = 2.0 * len;
    let m = p.rem_euclid(period);
    if m <= len {
        (m, 1.0)
    } else {
        (period - m, -1.0)
    }
}

impl Mover {
    /// Top-left corner and velocity at time `t`.
    fn state(&self, t: f64, sw: f64, sh: f64) -> (f64, f64, f64, f64) {
        let px = self.x0 + self.vx * t;
        let py = self.y0 + self.vy * t;
        if !self.bounce {
            return (px, py, self.vx, self.vy);
        }
        let (x, sx) = reflect(px, sw - self.w);
        let (y, sy) = reflect(py, sh - self.h);
        (x, y, self.vx * sx, self.vy * sy)
    }

    fn edge_event<R: Rng>(&self, t: f64, sw: f64, sh: f64, rng: &mut R) -> Option<(f64, f64, u8)> {
        let (x, y, vx, vy) = self.state(t, sw, sh);
        // left, right, top, bottom: (outward normal . v, length)
        let edges = [(-vx, self.h), (vx, self.h), (-vy, self.w), (vy, self.w)];
        let weights: Vec<f64> = edges.iter().map(|(d, l)| d.abs() * l).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut edge = 3;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                edge = i;
                break;
            }
            pick -= w;
        }
        let u = rng.gen::<f64>();
        let jitter = rng.gen::<f64>() - 0.5;
        let (ex, ey) = match edge {
            0 => (x + jitter, y + u * self.h),
            1 => (x + self.w + jitter, y + u * self.h),
            2 => (x + u * self.w, y + jitter),
            _ => (x + u * self.w, y + self.h + jitter),
        };
        Some((ex, ey, u8::from(edges[edge].0 > 0.0)))
    }
}

fn pixel(v: f64, size: u16) -> u16 {
    v.floor().clamp(0.0, size as f64 - 1.0) as u16
}

fn bar<R: Rng>(class: u32, sw: f64, sh: f64, duration: f64, rng: &mut R) -> Mover {
    let thick = rng.gen_range(3.0..6.0);
    let horizontal = class == 1;
    let span = if horizontal { sh } else { sw };
    let travel = rng.gen_range(0.3..0.6) * (span - thick);
    let speed = travel / duration;
    let forward = rng.gen_bool(0.5);
    let start = rng.gen_range(0.0..=(span - thick - travel));
    let (p0, v) = if forward { (start, speed) } else { (start + travel, -speed) };
    if horizontal {
        Mover { class, x0: 0.0, y0: p0, w: sw, h: thick, vx: 0.0, vy: v, bounce: false }
    } else {
        Mover { class, x0: p0, y0: 0.0, w: thick, h: sh, vx: v, vy: 0.0, bounce: false }
    }
}

fn rect<R: Rng>(class: u32, sw: f64, sh: f64, duration: f64, rng: &mut R) -> Mover {
    let side = rng.gen_range(22.0..30.0f64).min(sw.min(sh) * 0.6);
    let (w, h) = if class == 1 {
        let long = (side * 1.5).min(sw * 0.7);
        if rng.gen_bool(0.5) {
            (long, long / 2.0)
        } else {
            (long / 2.0, long)
        }
    } else {
        (side, side)
    };
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.3..0.6) * sw.min(sh) / duration;
    Mover {
        class,
        x0: rng.gen_range(0.0..=(sw - w)),
        y0: rng.gen_range(0.0..=(sh - h)),
        w,
        h,
        vx: speed * angle.cos(),
        vy: speed * angle.sin(),
        bounce: true,
    }
}

pub fn generate_synthetic_stream(
    scenario: Scenario,
    seed: u64,
    duration: u64,
    width: u16,
    height: u16,
    rate: f64,
) -> Result<(EventStream, GroundTruth)> {
    generate_with(&SynthConfig::new(scenario, seed, duration, width, height, rate))
}

pub fn generate_with(cfg: &SynthConfig) -> Result<(EventStream, GroundTruth)> {
    if cfg.width == 0 || cfg.height == 0 {
        return invalid("zero-area sensor");
    }
    if cfg.duration == 0 {
        return invalid("duration must be positive");
    }
    if !(cfg.rate >= 0.0 && cfg.rate.is_finite()) || !(0.0..=1.0).contains(&cfg.noise) {
        return invalid("rate must be non-negative and noise within [0, 1]");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (sw, sh, dur) = (cfg.width as f64, cfg.height as f64, cfg.duration as f64);
    let movers: Vec<Mover> = match cfg.scenario {
        Scenario::MovingBar => {
            let class = cfg.class.unwrap_or_else(|| rng.gen_range(0..2));
            vec![bar(class, sw, sh, dur, &mut rng)]
        }
        Scenario::MovingSquare => {
            let k = rng.gen_range(1..=2);
            (0..k).map(|_| rect(0, sw, sh, dur, &mut rng)).collect()
        }
        Scenario::StaticNoise => vec![],
        Scenario::MultiObject => {
            let k = rng.gen_range(2..=3);
            (0..k).map(|i| rect((i % 2) as u32, sw, sh, dur, &mut rng)).collect()
        }
    };
    let count = (cfg.rate * dur).round() as usize;
    let mut times: Vec<u64> = (0..count).map(|_| rng.gen_range(0..cfg.duration)).collect();
    times.sort_unstable();
    let noise = if movers.is_empty() { 1.0 } else { cfg.noise };
    let mut events = Vec::with_capacity(count);
    for t in times {
        let ev = if rng.gen::<f64>() < noise {
            Some((rng.gen::<f64>() * sw, rng.gen::<f64>() * sh, rng.gen_range(0..2u8)))
        } else {
            let m = &movers[rng.gen_range(0..movers.len())];
            m.edge_event(t as f64, sw, sh, &mut rng)
        };
        if let Some((x, y, p)) = ev {
            if x >= -0.5 && y >= -0.5 && x < sw + 0.5 && y < sh + 0.5 {
                events.push(Event {
                    t,
                    x: pixel(x, cfg.width),
                    y: pixel(y, cfg.height),
                    p,
                });
            }
        }
    }
    let stream = EventStream::new(events, cfg.width, cfg.height, cfg.duration)?;
    let gt = match cfg.scenario {
        Scenario::MovingBar => GroundTruth::Class(movers[0].class),
        _ => {
            let period = cfg.annotation_period.clamp(1, cfg.duration);
            let mut boxes = Vec::new();
            let mut t0 = 0;
            while t0 < cfg.duration {
                let t1 = (t0 + period).min(cfg.duration);
                for m in &movers {
                    let (x, y, _, _) = m.state(t1 as f64, sw, sh);
                    boxes.push(GtBox {
                        t_start: t0,
                        t_end: t1,
                        class: m.class,
                        x,
                        y,
                        w: m.w,
                        h: m.h,
                    });
                }
                t0 = t1;
            }
            GroundTruth::Boxes(boxes)
        }
    };
    Ok((stream, gt))
}
