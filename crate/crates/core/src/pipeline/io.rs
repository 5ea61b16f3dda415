//! On-disk layout: one binary PGM per frame (`frame_0000.pgm`, ...) and a
//! `skeletons.txt` track per sequence directory; datasets hold `seq_0000/`,
//! `seq_0001/`, ... directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MtrError, Result};
use crate::numerics::Tensor;
use crate::skeleton::{format_track, parse_track};

use super::metrics::{from_u8, to_u8};
use super::synth::Sequence;

pub const SKELETON_FILE: &str = "skeletons.txt";

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.pgm")
}

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:04}")
}

pub fn encode_pgm(frame: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = frame.chw()?;
    if c != 1 {
        return Err(MtrError::contract(format!("pgm: expected one channel, got {c}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.data().iter().map(|&v| to_u8(v)));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MtrError::decode("pgm: truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(MtrError::decode(format!("pgm: unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| MtrError::decode(format!("pgm: bad {what} {s:?}")));
    let (w, h, max) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if max != 255 {
        return Err(MtrError::decode(format!("pgm: only 8-bit images are supported (maxval {max})")));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h {
        return Err(MtrError::decode(format!("pgm: expected {} pixels, found {}", w * h, raster.len())));
    }
    Tensor::new(vec![1, h, w], raster.iter().map(|&v| from_u8(v)).collect())
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, f) in seq.frames.iter().enumerate() {
        fs::write(dir.join(frame_name(t)), encode_pgm(f)?)?;
    }
    fs::write(dir.join(SKELETON_FILE), format_track(&seq.track))?;
    Ok(())
}

/// Frames `frame_*.pgm` of a directory in index order.
pub fn read_frames(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            decode_pgm(&fs::read(p)?).map_err(|e| MtrError::decode(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn write_frames(dir: &Path, frames: &[Tensor]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, f) in frames.iter().enumerate() {
        fs::write(dir.join(frame_name(t)), encode_pgm(f)?)?;
    }
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let frames = read_frames(dir)?;
    let track = parse_track(&fs::read_to_string(dir.join(SKELETON_FILE))?)?;
    if frames.len() != track.len() {
        return Err(MtrError::decode(format!(
            "{}: {} frames but {} skeleton lines",
            dir.display(),
            frames.len(),
            track.len()
        )));
    }
    Ok(Sequence { frames, track })
}

pub fn write_dataset(dir: &Path, data: &[Sequence]) -> Result<()> {
    for (k, seq) in data.iter().enumerate() {
        write_sequence(&dir.join(sequence_name(k)), seq)?;
    }
    Ok(())
}

/// Every `seq_*` subdirectory, or the directory itself when it holds frames.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    if dir.join(SKELETON_FILE).exists() {
        return Ok(vec![read_sequence(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seq_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(MtrError::decode(format!("{}: no sequences found", dir.display())));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, MotionParams};

    #[test]
    fn pgm_round_trip_is_exact_on_levels() {
        let data: Vec<f32> = (0..12u8).map(|v| from_u8(v * 20)).collect();
        let t = Tensor::new(vec![1, 3, 4], data).unwrap();
        let bytes = encode_pgm(&t).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), t);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5 # comment\n2 1\n255\n".to_vec();
        bytes.extend([0, 255]);
        assert_eq!(decode_pgm(&bytes).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(2, 2, 8, 8, 3, &MotionParams::default()).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.track, b.track);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                let qa: Vec<u8> = fa.data().iter().map(|&v| to_u8(v)).collect();
                let qb: Vec<u8> = fb.data().iter().map(|&v| to_u8(v)).collect();
                assert_eq!(qa, qb);
            }
        }
    }
}
