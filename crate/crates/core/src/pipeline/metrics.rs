use crate::error::{MtrError, Result};
use crate::numerics::Tensor;

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 99.0;
/// Frame rate assumed when converting bits to a bitrate.
pub const FRAMES_PER_SECOND: f64 = 25.0;

/// Map `[-1, 1]` to 8-bit levels.
pub fn to_u8(v: f32) -> u8 {
    libm::round(((v as f64 + 1.0) * 127.5).clamp(0.0, 255.0)) as u8
}

pub fn from_u8(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

/// PSNR on the 8-bit scale.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(MtrError::contract(format!("psnr: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(MtrError::contract("psnr: empty frame"));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = to_u8(x) as f64 - to_u8(y) as f64;
            d * d
        })
        .sum();
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * libm::log10(255.0 * 255.0 / mse)).min(PSNR_CAP))
}

/// Mean of per-frame PSNR.
pub fn psnr_sequence(reference: &[Tensor], reconstructed: &[Tensor]) -> Result<f64> {
    if reference.len() != reconstructed.len() || reference.is_empty() {
        return Err(MtrError::contract(format!(
            "psnr_sequence: {} reference vs {} reconstructed frames",
            reference.len(),
            reconstructed.len()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in reference.iter().zip(reconstructed) {
        sum += psnr(a, b)?;
    }
    Ok(sum / reference.len() as f64)
}

/// Kilobits per second at 25 frames per second.
pub fn bitrate_kbps(bits: u64, frames: usize) -> f64 {
    bits as f64 * FRAMES_PER_SECOND / frames as f64 / 1000.0
}
