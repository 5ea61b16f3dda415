//! Per-frame skeleton clues: lossless predictive coding, the plain-text track
//! format and rasterization into heatmaps.

use std::fmt::Write as _;

use crate::coder::{AdaptiveModel, SymbolDecoder, SymbolEncoder};
use crate::error::{MtrError, Result};
use crate::numerics::Tensor;

pub const NUM_NODES: usize = 18;
/// Residuals in `[-RESIDUAL_BOUND, RESIDUAL_BOUND]` are coded directly.
pub const RESIDUAL_BOUND: i32 = 31;

/// Bones of the 18-node body layout (nose, neck, right arm, left arm, right
/// leg, left leg, eyes, ears).
pub const BONES: [(usize, usize); 17] = [
    (1, 0),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (0, 14),
    (0, 15),
    (14, 16),
    (15, 17),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Node {
    pub x: u16,
    pub y: u16,
    pub visible: bool,
}

impl Node {
    pub fn at(x: u16, y: u16) -> Self {
        Node { x, y, visible: true }
    }

    pub fn hidden() -> Self {
        Node::default()
    }

    /// Invisible nodes carry no coordinates.
    fn canonical(self) -> Self {
        if self.visible {
            self
        } else {
            Node::hidden()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Skeleton {
    pub nodes: [Node; NUM_NODES],
}

impl Skeleton {
    pub fn new(nodes: [Node; NUM_NODES]) -> Self {
        Skeleton { nodes: nodes.map(Node::canonical) }
    }

    /// Every node invisible; also the predictor for the first frame.
    pub fn empty() -> Self {
        Skeleton::default()
    }

    /// Check visible nodes fall inside a `width`×`height` frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.visible && (n.x as usize >= width || n.y as usize >= height) {
                return Err(MtrError::contract(format!(
                    "node {i} at ({}, {}) lies outside a {width}×{height} frame",
                    n.x, n.y
                )));
            }
        }
        Ok(())
    }
}

/// Skeletons of one group of pictures, in frame order.
pub type SkeletonTrack = Vec<Skeleton>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeResidual {
    pub dx: i32,
    pub dy: i32,
    pub visible: bool,
}

/// Coordinate residual of every node of `cur` against `prev`. Invisible
/// nodes give a zero residual.
pub fn predict_residual(cur: &Skeleton, prev: &Skeleton) -> [NodeResidual; NUM_NODES] {
    std::array::from_fn(|i| {
        let (c, p) = (cur.nodes[i].canonical(), prev.nodes[i].canonical());
        if c.visible {
            NodeResidual { dx: c.x as i32 - p.x as i32, dy: c.y as i32 - p.y as i32, visible: true }
        } else {
            NodeResidual { dx: 0, dy: 0, visible: false }
        }
    })
}

struct TrackModels {
    flags: AdaptiveModel,
    dx: AdaptiveModel,
    dy: AdaptiveModel,
}

impl TrackModels {
    fn new() -> Self {
        TrackModels {
            flags: AdaptiveModel::binary(),
            dx: AdaptiveModel::residual(RESIDUAL_BOUND),
            dy: AdaptiveModel::residual(RESIDUAL_BOUND),
        }
    }
}

/// Losslessly code a track: per node a visibility flag, then (if visible)
/// the x and y residuals against the previous frame.
pub fn encode_track(track: &[Skeleton]) -> Result<Vec<u8>> {
    let mut enc = SymbolEncoder::new();
    let mut models = TrackModels::new();
    let mut prev = Skeleton::empty();
    for s in track {
        for r in predict_residual(s, &prev) {
            enc.encode_adaptive(r.visible as i32, &mut models.flags)?;
            if r.visible {
                enc.encode_adaptive(r.dx, &mut models.dx)?;
                enc.encode_adaptive(r.dy, &mut models.dy)?;
            }
        }
        prev = Skeleton::new(s.nodes);
    }
    Ok(enc.finish())
}

pub fn decode_track(bytes: &[u8], frames: usize) -> Result<SkeletonTrack> {
    let mut dec = SymbolDecoder::new(bytes)?;
    let mut models = TrackModels::new();
    let mut prev = Skeleton::empty();
    let mut track = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut nodes = [Node::hidden(); NUM_NODES];
        for (i, node) in nodes.iter_mut().enumerate() {
            if dec.decode_adaptive(&mut models.flags)? == 1 {
                let x = prev.nodes[i].x as i32 + dec.decode_adaptive(&mut models.dx)?;
                let y = prev.nodes[i].y as i32 + dec.decode_adaptive(&mut models.dy)?;
                let (x, y) = (
                    u16::try_from(x).map_err(|_| MtrError::decode(format!("decoded x {x} out of range")))?,
                    u16::try_from(y).map_err(|_| MtrError::decode(format!("decoded y {y} out of range")))?,
                );
                *node = Node::at(x, y);
            }
        }
        prev = Skeleton { nodes };
        track.push(prev);
    }
    Ok(track)
}

/// Bits needed to store a track as raw 16-bit coordinates.
pub fn absolute_bits(frames: usize) -> usize {
    frames * NUM_NODES * 2 * 16
}

/// Heatmap with one channel per node: `exp(-d²/(2σ²))` around the cell
/// `(⌊x/factor⌋, ⌊y/factor⌋)` of an `height`×`width` grid. Invisible nodes
/// leave their channel at zero.
pub fn rasterize(s: &Skeleton, height: usize, width: usize, factor: usize, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) || factor == 0 {
        return Err(MtrError::contract(format!("rasterize: need sigma > 0 and factor >= 1, got {sigma}, {factor}")));
    }
    let mut data = vec![0f32; NUM_NODES * height * width];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, n) in s.nodes.iter().enumerate() {
        if !n.visible {
            continue;
        }
        let (cx, cy) = ((n.x as usize / factor) as f64, (n.y as usize / factor) as f64);
        let plane = &mut data[i * height * width..(i + 1) * height * width];
        for gy in 0..height {
            for gx in 0..width {
                let d2 = (gx as f64 - cx).powi(2) + (gy as f64 - cy).powi(2);
                plane[gy * width + gx] = libm::exp(-d2 * inv) as f32;
            }
        }
    }
    Tensor::new(vec![NUM_NODES, height, width], data)
}

/// Parse the text track format: one line per frame, 18 triples `x y v`.
pub fn parse_track(text: &str) -> Result<SkeletonTrack> {
    let mut track = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| MtrError::decode(format!("skeleton line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != NUM_NODES * 3 {
            return Err(err(format!("expected {} values, found {}", NUM_NODES * 3, fields.len())));
        }
        let mut nodes = [Node::hidden(); NUM_NODES];
        for (i, node) in nodes.iter_mut().enumerate() {
            let x: u16 = fields[3 * i].parse().map_err(|_| err(format!("bad x for node {i}: {:?}", fields[3 * i])))?;
            let y: u16 =
                fields[3 * i + 1].parse().map_err(|_| err(format!("bad y for node {i}: {:?}", fields[3 * i + 1])))?;
            let visible = match fields[3 * i + 2] {
                "1" => true,
                "0" => false,
                other => return Err(err(format!("visibility for node {i} must be 0 or 1, got {other:?}"))),
            };
            *node = Node { x, y, visible }.canonical();
        }
        track.push(Skeleton { nodes });
    }
    Ok(track)
}

pub fn format_track(track: &[Skeleton]) -> String {
    let mut out = String::new();
    for s in track {
        let line: Vec<String> =
            s.nodes.iter().map(|n| format!("{} {} {}", n.x, n.y, n.visible as u8)).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_skeleton(rng: &mut Rng, w: u16, h: u16) -> Skeleton {
        Skeleton::new(std::array::from_fn(|_| Node::at(rng.below(w as u64) as u16, rng.below(h as u64) as u16)))
    }

    fn walk(rng: &mut Rng, frames: usize, step: i32) -> SkeletonTrack {
        let mut s = random_skeleton(rng, 200, 200);
        let mut track = vec![s];
        for _ in 1..frames {
            for n in &mut s.nodes {
                let dx = rng.below((2 * step + 1) as u64) as i32 - step;
                let dy = rng.below((2 * step + 1) as u64) as i32 - step;
                n.x = (n.x as i32 + dx).clamp(0, 199) as u16;
                n.y = (n.y as i32 + dy).clamp(0, 199) as u16;
            }
            track.push(s);
        }
        track
    }

    #[test]
    fn residual_examples() {
        let mut rng = Rng::new(1);
        let a = random_skeleton(&mut rng, 100, 100);
        assert!(predict_residual(&a, &a).iter().all(|r| r.dx == 0 && r.dy == 0 && r.visible));

        let mut b = a;
        b.nodes[5].x += 3;
        b.nodes[5].y -= 2;
        let r = predict_residual(&b, &a);
        assert_eq!((r[5].dx, r[5].dy), (3, -2));

        let mut first = Skeleton::empty();
        first.nodes[0] = Node::at(100, 50);
        let r = predict_residual(&first, &Skeleton::empty());
        assert_eq!((r[0].dx, r[0].dy, r[0].visible), (100, 50, true));
        assert!(!r[1].visible && r[1].dx == 0);
    }

    #[test]
    fn static_track_beats_absolute_coding() {
        let mut rng = Rng::new(2);
        let s = random_skeleton(&mut rng, 160, 120);
        let track = vec![s; 10];
        let bytes = encode_track(&track).unwrap();
        assert!(bytes.len() * 8 < absolute_bits(10));
        assert_eq!(decode_track(&bytes, 10).unwrap(), track);
    }

    #[test]
    fn random_walks_round_trip() {
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let track = walk(&mut rng, 10, 3);
            let bytes = encode_track(&track).unwrap();
            assert_eq!(decode_track(&bytes, 10).unwrap(), track, "seed {seed}");
        }
    }

    #[test]
    fn bounded_motion_compresses() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let track = walk(&mut rng, 10, 3);
            let bits = encode_track(&track).unwrap().len() * 8;
            assert!(bits as f64 <= 0.4 * absolute_bits(10) as f64, "seed {seed}: {bits}");
        }
    }

    #[test]
    fn all_invisible_track() {
        let track = vec![Skeleton::empty(); 10];
        let bytes = encode_track(&track).unwrap();
        assert_eq!(decode_track(&bytes, 10).unwrap(), track);
    }

    #[test]
    fn corrupt_stream_is_error_not_panic() {
        let mut rng = Rng::new(5);
        let track = walk(&mut rng, 10, 3);
        let bytes = encode_track(&track).unwrap();
        assert!(decode_track(&bytes[..bytes.len() / 2], 10).is_err());
        for i in 0..50 {
            let mut b = bytes.clone();
            let k = 1 + (i * 7) % (b.len() - 1);
            b[k] ^= 0x5a;
            let _ = decode_track(&b, 10);
        }
    }

    #[test]
    fn rasterize_contract() {
        let mut s = Skeleton::empty();
        s.nodes[3] = Node::at(9, 14);
        let heat = rasterize(&s, 8, 8, 4, 1.0).unwrap();
        assert_eq!(heat.shape(), &[18, 8, 8]);
        assert!(heat.channel(0).iter().all(|&v| v == 0.0));
        let ch = heat.channel(3);
        let argmax = (0..64).max_by(|&a, &b| ch[a].partial_cmp(&ch[b]).unwrap()).unwrap();
        assert_eq!((argmax % 8, argmax / 8), (9 / 4, 14 / 4));
        assert_eq!(ch[argmax], 1.0);

        let mut shifted = s;
        shifted.nodes[3].x += 4;
        let ch2 = rasterize(&shifted, 8, 8, 4, 1.0).unwrap();
        let ch2 = ch2.channel(3);
        let argmax2 = (0..64).max_by(|&a, &b| ch2[a].partial_cmp(&ch2[b]).unwrap()).unwrap();
        assert_eq!(argmax2, argmax + 1);
        assert!(rasterize(&s, 8, 8, 4, 0.0).is_err());
    }

    #[test]
    fn text_format_round_trip_and_errors() {
        let mut rng = Rng::new(8);
        let mut track = walk(&mut rng, 3, 2);
        track[1].nodes[4] = Node::hidden();
        let text = format_track(&track);
        assert_eq!(parse_track(&text).unwrap(), track);

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1].pop();
        lines[1].push('7');
        let err = parse_track(&lines.join("\n")).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_track("1 2 1\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
