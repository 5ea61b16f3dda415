use crate::coder::{
    build_logistic_cdf, build_memory_cdf, BitstreamContainer, CdfTable, ContainerHeader, SymbolDecoder, SymbolEncoder,
    ALPHABET_BOUND, CONTAINER_VERSION,
};
use crate::entropy::{hard_quantize, hyper_decode, hyper_encode, rate_bits, FactorizedDensity, QuantizedGrid, RateEstimate};
use crate::error::{MtrError, Result};
use crate::genadv::generate;
use crate::memorizer::{embed_frame, memorize};
use crate::numerics::Tensor;
use crate::recaller::joint_feature;
use crate::skeleton::{decode_track, encode_track, rasterize, Skeleton, SkeletonTrack};

use super::model::{ModelConfig, ModelWeights, Variant, MEMORY_FACTOR};

/// Continuous memory for a group of frames under the configured variant.
pub fn compute_memory(w: &ModelWeights, frames: &[Tensor]) -> Result<Tensor> {
    match w.config.variant {
        Variant::NoMemorize => {
            let first = frames.first().ok_or_else(|| MtrError::contract("compute_memory: empty group"))?;
            embed_frame(first, &w.embed)
        }
        _ => memorize(&w.lstm, &w.embed, frames),
    }
}

/// Heatmap on the memory grid, as the recaller sees it.
pub fn grid_heatmap(config: &ModelConfig, s: &Skeleton) -> Result<Tensor> {
    let [_, h, w] = config.memory_shape();
    rasterize(s, h, w, MEMORY_FACTOR, config.heat_sigma)
}

/// Heatmap at frame resolution, as the critics see it.
pub fn frame_heatmap(config: &ModelConfig, s: &Skeleton) -> Result<Tensor> {
    rasterize(s, config.height, config.width, 1, config.heat_sigma * MEMORY_FACTOR as f64)
}

/// One reconstructed frame from a memory and a skeleton.
pub fn synthesize_frame(w: &ModelWeights, memory: &Tensor, s: &Skeleton) -> Result<Tensor> {
    let heat = grid_heatmap(&w.config, s)?;
    let feature = joint_feature(w.config.variant.attention(), memory, &heat, &w.attn)?;
    generate(&feature, &w.gen)
}

/// Encoder output together with the quantized latents it coded.
#[derive(Clone, Debug)]
pub struct EncodedGop {
    pub container: BitstreamContainer,
    pub hyper_latent: QuantizedGrid,
    pub memory: QuantizedGrid,
    /// Model estimate of the memory and hyper payload sizes.
    pub estimate: RateEstimate,
}

#[derive(Clone, Debug)]
pub struct DecodedGop {
    pub frames: Vec<Tensor>,
    pub hyper_latent: QuantizedGrid,
    pub memory: QuantizedGrid,
    pub track: SkeletonTrack,
}

fn check_group(config: &ModelConfig, frames: &[Tensor], track: &[Skeleton]) -> Result<()> {
    if frames.len() != config.gop {
        return Err(MtrError::config(format!("expected {} frames per group, got {}", config.gop, frames.len())));
    }
    if track.len() != frames.len() {
        return Err(MtrError::config(format!("{} frames but {} skeletons", frames.len(), track.len())));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.shape() != [1, config.height, config.width] {
            return Err(MtrError::config(format!(
                "frame {t} has shape {:?}, model expects [1, {}, {}]",
                f.shape(),
                config.height,
                config.width
            )));
        }
    }
    for (t, s) in track.iter().enumerate() {
        s.validate(config.width, config.height).map_err(|e| MtrError::config(format!("skeleton {t}: {e}")))?;
    }
    Ok(())
}

fn hyper_tables(d: &FactorizedDensity) -> Result<Vec<CdfTable>> {
    (0..d.channels()).map(|c| build_logistic_cdf(d.location(c), d.scale(c), ALPHABET_BOUND)).collect()
}

fn memory_tables(sigma: &Tensor) -> Result<Vec<CdfTable>> {
    sigma.data().iter().map(|&s| build_memory_cdf(s as f64, ALPHABET_BOUND)).collect()
}

fn hyper_grid_shape(w: &ModelWeights) -> Result<Vec<usize>> {
    let [cm, h, wd] = w.config.memory_shape();
    let probe = hyper_encode(&Tensor::zeros(&[cm, h, wd]), &w.hyper)?;
    Ok(probe.shape().to_vec())
}

/// Compress one group of pictures.
pub fn encode_gop(frames: &[Tensor], track: &[Skeleton], w: &ModelWeights) -> Result<EncodedGop> {
    let config = &w.config;
    check_group(config, frames, track)?;
    let m = compute_memory(w, frames)?;
    let z_hat = hard_quantize(&hyper_encode(&m, &w.hyper)?);
    let sigma = hyper_decode(&z_hat, &w.hyper)?;
    let m_hat = hard_quantize(&m);

    let plane = z_hat.shape[1..].iter().product::<usize>();
    let tables = hyper_tables(&w.density)?;
    let mut enc = SymbolEncoder::new();
    for (i, &v) in z_hat.values.iter().enumerate() {
        enc.encode_static(v, &tables[i / plane])?;
    }
    let hyper = enc.finish();

    let tables = memory_tables(&sigma)?;
    let mut enc = SymbolEncoder::new();
    for (&v, table) in m_hat.values.iter().zip(&tables) {
        enc.encode_static(v, table)?;
    }
    let memory = enc.finish();

    let estimate = rate_bits(&m_hat.to_tensor(), &z_hat.to_tensor(), &sigma, &w.density)?;
    let container = BitstreamContainer {
        header: ContainerHeader {
            version: CONTAINER_VERSION,
            width: config.width as u16,
            height: config.height as u16,
            gop_size: config.gop as u8,
            weights_hash: w.content_hash(),
        },
        hyper,
        memory,
        skeleton: encode_track(track)?,
    };
    Ok(EncodedGop { container, hyper_latent: z_hat, memory: m_hat, estimate })
}

/// Reconstruct every frame of a group.
pub fn decode_gop(b: &BitstreamContainer, w: &ModelWeights) -> Result<DecodedGop> {
    let config = &w.config;
    let hash = w.content_hash();
    if b.header.weights_hash != hash {
        return Err(MtrError::config(format!(
            "stream was produced with weights {:016x}, decoder has {:016x}",
            b.header.weights_hash, hash
        )));
    }
    if b.header.width as usize != config.width
        || b.header.height as usize != config.height
        || b.header.gop_size as usize != config.gop
    {
        return Err(MtrError::config(format!(
            "stream geometry {}×{}×{} does not match the model ({}×{}×{})",
            b.header.width, b.header.height, b.header.gop_size, config.width, config.height, config.gop
        )));
    }

    let z_shape = hyper_grid_shape(w)?;
    let plane = z_shape[1..].iter().product::<usize>();
    let count = z_shape.iter().product::<usize>();
    let tables = hyper_tables(&w.density)?;
    let mut dec = SymbolDecoder::new(&b.hyper)?;
    let values = (0..count).map(|i| dec.decode_static(&tables[i / plane])).collect::<Result<Vec<_>>>()?;
    let z_hat = QuantizedGrid { shape: z_shape, values };
    let sigma = hyper_decode(&z_hat, &w.hyper)?;

    let tables = memory_tables(&sigma)?;
    let mut dec = SymbolDecoder::new(&b.memory)?;
    let values = tables.iter().map(|t| dec.decode_static(t)).collect::<Result<Vec<_>>>()?;
    let m_hat = QuantizedGrid { shape: sigma.shape().to_vec(), values };

    let track = decode_track(&b.skeleton, config.gop)?;
    for (t, s) in track.iter().enumerate() {
        s.validate(config.width, config.height).map_err(|e| MtrError::decode(format!("decoded skeleton {t}: {e}")))?;
    }
    let memory = m_hat.to_tensor();
    let frames = track.iter().map(|s| synthesize_frame(w, &memory, s)).collect::<Result<Vec<_>>>()?;
    Ok(DecodedGop { frames, hyper_latent: z_hat, memory: m_hat, track })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, MotionParams};

    fn sample(config: &ModelConfig, seed: u64) -> (Vec<Tensor>, SkeletonTrack) {
        let s = synth_dataset(seed, 1, config.height, config.width, config.gop, &MotionParams::default())
            .unwrap()
            .remove(0);
        (s.frames, s.track)
    }

    #[test]
    fn round_trip_recovers_latents_and_track() {
        let config = ModelConfig::toy();
        let w = ModelWeights::init(&config, 3).unwrap();
        let (frames, track) = sample(&config, 4);
        let enc = encode_gop(&frames, &track, &w).unwrap();
        let bytes = enc.container.pack().unwrap();
        let dec = decode_gop(&BitstreamContainer::unpack(&bytes).unwrap(), &w).unwrap();
        assert_eq!(dec.memory, enc.memory);
        assert_eq!(dec.hyper_latent, enc.hyper_latent);
        assert_eq!(dec.track, track);
        assert_eq!(dec.frames.len(), config.gop);
        assert_eq!(enc.container.total_bits(), 8 * bytes.len() as u64);
    }

    #[test]
    fn encoding_is_deterministic() {
        let config = ModelConfig::toy();
        let w = ModelWeights::init(&config, 9).unwrap();
        let (frames, track) = sample(&config, 1);
        let a = encode_gop(&frames, &track, &w).unwrap().container.pack().unwrap();
        let b = encode_gop(&frames, &track, &w).unwrap().container.pack().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_give_zero_latents() {
        let config = ModelConfig::toy();
        let w = ModelWeights::zeros(&config).unwrap();
        let (frames, track) = sample(&config, 2);
        let enc = encode_gop(&frames, &track, &w).unwrap();
        assert!(enc.memory.values.iter().all(|&v| v == 0));
        assert!(enc.hyper_latent.values.iter().all(|&v| v == 0));
        // Unit scales everywhere: the payload is the flush plus about half a
        // bit per element.
        let bound = 5 + (enc.estimate.memory / 8.0).ceil() as usize + 1;
        assert!(enc.container.memory.len() <= bound, "{} > {bound}", enc.container.memory.len());
    }

    #[test]
    fn hash_mismatch_is_refused() {
        let config = ModelConfig::toy();
        let w = ModelWeights::init(&config, 3).unwrap();
        let other = ModelWeights::init(&config, 4).unwrap();
        let (frames, track) = sample(&config, 4);
        let enc = encode_gop(&frames, &track, &w).unwrap();
        let err = decode_gop(&enc.container, &other).unwrap_err();
        assert!(matches!(err, MtrError::Config(_)), "{err}");
    }

    #[test]
    fn wrong_frame_count_is_config_error() {
        let config = ModelConfig::toy();
        let w = ModelWeights::init(&config, 3).unwrap();
        let (frames, track) = sample(&config, 4);
        let err = encode_gop(&frames[1..], &track[1..], &w).unwrap_err();
        assert!(matches!(err, MtrError::Config(_)));
    }

    #[test]
    fn corrupt_memory_payload_does_not_panic() {
        let config = ModelConfig::toy();
        let w = ModelWeights::init(&config, 3).unwrap();
        let (frames, track) = sample(&config, 4);
        let mut c = encode_gop(&frames, &track, &w).unwrap().container;
        c.memory = vec![0, 0xff, 0x13, 0x77, 0x01, 0x02];
        let _ = decode_gop(&c, &w);
        c.memory.truncate(2);
        assert!(decode_gop(&c, &w).is_err());
    }
}
