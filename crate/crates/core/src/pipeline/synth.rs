use crate::error::{MtrError, Result};
use crate::numerics::{Rng, Tensor};
use crate::skeleton::{Node, Skeleton, SkeletonTrack, BONES, NUM_NODES};

/// Motion controls for the synthetic walker.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionParams {
    /// Largest per-frame displacement of any joint, in pixels.
    pub max_step: u16,
    /// Mean walking speed, in pixels per frame.
    pub speed: f64,
    /// Gait phase advance per frame, in radians.
    pub stride_rate: f64,
    /// Chance that a joint is reported invisible in a frame.
    pub dropout: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams { max_step: 7, speed: 0.6, stride_rate: 0.6, dropout: 0.0 }
    }
}

/// One synthetic clip: frames in `[-1, 1]` and the exact joint positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Tensor>,
    pub track: SkeletonTrack,
}

// Standing pose in body units: x right from the spine, y down from the top of
// the head, total height 1. Node order is nose, neck, right arm, left arm,
// right leg, left leg, eyes, ears.
const POSE: [(f64, f64); NUM_NODES] = [
    (0.0, 0.10),
    (0.0, 0.20),
    (-0.10, 0.22),
    (-0.13, 0.38),
    (-0.14, 0.52),
    (0.10, 0.22),
    (0.13, 0.38),
    (0.14, 0.52),
    (-0.06, 0.55),
    (-0.07, 0.75),
    (-0.07, 0.95),
    (0.06, 0.55),
    (0.07, 0.75),
    (0.07, 0.95),
    (-0.03, 0.08),
    (0.03, 0.08),
    (-0.05, 0.10),
    (0.05, 0.10),
];

// Horizontal swing of each joint with the gait phase; legs and arms move in
// opposition.
const SWING: [f64; NUM_NODES] = [
    0.0, 0.0, 0.0, -0.06, -0.12, 0.0, 0.06, 0.12, 0.0, 0.08, 0.16, 0.0, -0.08, -0.16, 0.0, 0.0, 0.0, 0.0,
];

struct Walker {
    x: f64,
    dir: f64,
    speed: f64,
    phase: f64,
    height: f64,
    top: f64,
    brightness: f32,
}

impl Walker {
    fn joints(&self) -> [(f64, f64); NUM_NODES] {
        let s = libm::sin(self.phase);
        let bob = 0.02 * libm::fabs(libm::cos(self.phase));
        std::array::from_fn(|i| {
            let (bx, by) = POSE[i];
            (self.x + (bx + SWING[i] * s * self.dir) * self.height, self.top + (by - bob) * self.height)
        })
    }
}

/// Static background: a few low-frequency gratings.
fn background(h: usize, w: usize, rng: &mut Rng) -> Vec<f32> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.uniform_range(0.5, 3.0) * std::f64::consts::TAU / w as f64;
            let fy = rng.uniform_range(0.5, 3.0) * std::f64::consts::TAU / h as f64;
            (fx, fy, rng.uniform_range(0.0, std::f64::consts::TAU), rng.uniform_range(0.05, 0.15))
        })
        .collect();
    let base = rng.uniform_range(-0.6, -0.3);
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * libm::sin(fx * x as f64 + fy * y as f64 + ph)).sum();
            out[y * w + x] = (base + v) as f32;
        }
    }
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    libm::sqrt((p.0 - cx).powi(2) + (p.1 - cy).powi(2))
}

fn render(bg: &[f32], h: usize, w: usize, joints: &[(f64, f64); NUM_NODES], figure_height: f64, brightness: f32) -> Tensor {
    let limb = (figure_height / 16.0).max(0.5);
    let head = (figure_height * 0.08).max(0.8);
    let mut data = bg.to_vec();
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = BONES
                .iter()
                .map(|&(a, b)| segment_distance(p, joints[a], joints[b]) - limb)
                .fold(f64::INFINITY, f64::min);
            d = d.min(segment_distance(p, joints[0], joints[0]) - head);
            // One-pixel soft edge.
            let cover = (0.5 - d).clamp(0.0, 1.0) as f32;
            let v = &mut data[y * w + x];
            *v = *v * (1.0 - cover) + brightness * cover;
        }
    }
    Tensor::new(vec![1, h, w], data).unwrap()
}

fn to_pixel(v: f64, limit: usize) -> i32 {
    (libm::floor(v) as i32).clamp(0, limit as i32 - 1)
}

/// Render `count` clips of a stick figure walking over a textured background.
pub fn synth_dataset(seed: u64, count: usize, height: usize, width: usize, frames: usize, motion: &MotionParams) -> Result<Vec<Sequence>> {
    if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
        return Err(MtrError::config(format!("synth: frame size {height}×{width} must be non-zero multiples of 4")));
    }
    if height > u16::MAX as usize || width > u16::MAX as usize {
        return Err(MtrError::config("synth: frame size must fit in 16 bits"));
    }
    if motion.max_step == 0 || !(0.0..=1.0).contains(&motion.dropout) {
        return Err(MtrError::config("synth: max_step must be positive and dropout in [0, 1]"));
    }
    let root = Rng::new(seed);
    (0..count)
        .map(|k| {
            let mut rng = root.split(k as u64);
            let bg = background(height, width, &mut rng);
            let figure_height = height as f64 * rng.uniform_range(0.7, 0.85);
            let mut walker = Walker {
                x: rng.uniform_range(0.3, 0.7) * width as f64,
                dir: if rng.below(2) == 0 { -1.0 } else { 1.0 },
                speed: motion.speed * rng.uniform_range(0.5, 1.5),
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
                height: figure_height,
                top: (height as f64 - figure_height) * rng.uniform_range(0.2, 0.8),
                brightness: rng.uniform_range(0.5, 0.9) as f32,
            };
            let margin = 0.2 * figure_height;
            let mut out_frames = Vec::with_capacity(frames);
            let mut track: SkeletonTrack = Vec::with_capacity(frames);
            let mut last: Option<[(i32, i32); NUM_NODES]> = None;
            for _ in 0..frames {
                let joints = walker.joints();
                let step = motion.max_step as i32;
                let pos: [(i32, i32); NUM_NODES] = std::array::from_fn(|i| {
                    let (x, y) = (to_pixel(joints[i].0, width), to_pixel(joints[i].1, height));
                    match last {
                        Some(prev) => (
                            prev[i].0 + (x - prev[i].0).clamp(-step, step),
                            prev[i].1 + (y - prev[i].1).clamp(-step, step),
                        ),
                        None => (x, y),
                    }
                });
                last = Some(pos);
                let nodes: [Node; NUM_NODES] = std::array::from_fn(|i| {
                    if motion.dropout > 0.0 && rng.uniform_open() < motion.dropout {
                        Node::hidden()
                    } else {
                        Node::at(pos[i].0 as u16, pos[i].1 as u16)
                    }
                });
                track.push(Skeleton::new(nodes));
                out_frames.push(render(&bg, height, width, &joints, figure_height, walker.brightness));

                walker.phase += motion.stride_rate;
                walker.x += walker.dir * walker.speed;
                if walker.x < margin || walker.x > width as f64 - margin {
                    walker.dir = -walker.dir;
                    walker.x = walker.x.clamp(margin, width as f64 - margin);
                }
            }
            Ok(Sequence { frames: out_frames, track })
        })
        .collect()
}
