//! Recalling attention: skeleton heatmaps query the quantized memory.
//!
//! Tokens are spatial positions. With `Q` from the clue, `K` and `V` from the
//! memory, the joint feature per token is `[W·V + Q, V]` with `W = Q·Kᵀ`.

use crate::error::{MtrError, Result};
use crate::numerics::{add, matmul, softmax_rows, transpose, Conv, Rng, Tensor};
use crate::skeleton::NUM_NODES;

/// How memory and clues are joined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    /// Clues attend on memory (the default).
    CluesOnMemory,
    /// Memory attends on clues.
    MemoryOnClues,
    /// Plain channel concatenation of the projections, no attention.
    Concat,
}

/// 1×1 projections for query, key and value.
///
/// Input channel counts follow the kind: for [`AttentionKind::MemoryOnClues`]
/// the query reads the memory and key/value read the heatmap; otherwise the
/// query reads the heatmap and key/value read the memory.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    /// Row-softmax on `W` before it weights `V`.
    pub normalize: bool,
}

impl AttentionParams {
    fn channel_plan(kind: AttentionKind, mem_channels: usize) -> (usize, usize) {
        match kind {
            AttentionKind::MemoryOnClues => (mem_channels, NUM_NODES),
            _ => (NUM_NODES, mem_channels),
        }
    }

    pub fn zeros(kind: AttentionKind, mem_channels: usize, dim: usize) -> Self {
        let (q_in, kv_in) = Self::channel_plan(kind, mem_channels);
        AttentionParams {
            query: Conv::zeros(dim, q_in, 1),
            key: Conv::zeros(dim, kv_in, 1),
            value: Conv::zeros(dim, kv_in, 1),
            normalize: false,
        }
    }

    pub fn random(kind: AttentionKind, mem_channels: usize, dim: usize, rng: &mut Rng) -> Self {
        let (q_in, kv_in) = Self::channel_plan(kind, mem_channels);
        AttentionParams {
            query: Conv::random(dim, q_in, 1, 1.0, rng),
            key: Conv::random(dim, kv_in, 1, 1.0, rng),
            value: Conv::random(dim, kv_in, 1, 1.0, rng),
            normalize: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.out_channels()
    }
}

fn check_inputs(memory: &Tensor, heat: &Tensor) -> Result<(usize, usize)> {
    let (_, mh, mw) = memory.chw()?;
    let (hc, hh, hw) = heat.chw()?;
    if (mh, mw) != (hh, hw) || hc != NUM_NODES {
        return Err(MtrError::contract(format!(
            "recall: memory {:?} and heatmap {:?} are incompatible",
            memory.shape(),
            heat.shape()
        )));
    }
    Ok((mh, mw))
}

/// Project a C×h×w map to N×d token rows.
fn tokens(proj: &Conv, x: &Tensor) -> Result<Tensor> {
    let y = proj.forward(x, 1, 0)?;
    let (d, h, w) = y.chw()?;
    transpose(&y.reshape(&[d, h * w])?)
}

/// `[W·V + Q, V]` back in channel-major layout, 2d×h×w.
fn attend(q: &Tensor, k: &Tensor, v: &Tensor, normalize: bool, h: usize, w: usize) -> Result<Tensor> {
    let d = q.shape()[1];
    if k.shape()[1] != d || v.shape()[1] != d {
        return Err(MtrError::contract(format!(
            "recall: query {:?}, key {:?} and value {:?} dimensions disagree",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut weights = matmul(q, &transpose(k)?)?;
    if normalize {
        weights = softmax_rows(&weights)?;
    }
    let first = add(&matmul(&weights, v)?, q)?;
    join(&first, v, h, w)
}

fn join(first: &Tensor, second: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let mut data = transpose(first)?.into_data();
    data.extend(transpose(second)?.into_data());
    let channels = first.shape()[1] + second.shape()[1];
    Tensor::new(vec![channels, h, w], data)
}

/// Clues attend on memory.
pub fn recall(memory: &Tensor, heat: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let (h, w) = check_inputs(memory, heat)?;
    let q = tokens(&p.query, heat)?;
    let k = tokens(&p.key, memory)?;
    let v = tokens(&p.value, memory)?;
    attend(&q, &k, &v, p.normalize, h, w)
}

/// Memory attends on clues: query from the memory, key and value from the heatmap.
pub fn recall_monc(memory: &Tensor, heat: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let (h, w) = check_inputs(memory, heat)?;
    let q = tokens(&p.query, memory)?;
    let k = tokens(&p.key, heat)?;
    let v = tokens(&p.value, heat)?;
    attend(&q, &k, &v, p.normalize, h, w)
}

/// No attention: `[Q, V]` with `Q` the projected heatmap and `V` the projected memory.
pub fn concat_baseline(memory: &Tensor, heat: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let (h, w) = check_inputs(memory, heat)?;
    let q = tokens(&p.query, heat)?;
    let v = tokens(&p.value, memory)?;
    join(&q, &v, h, w)
}

/// Dispatch on `kind`.
pub fn joint_feature(kind: AttentionKind, memory: &Tensor, heat: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    match kind {
        AttentionKind::CluesOnMemory => recall(memory, heat, p),
        AttentionKind::MemoryOnClues => recall_monc(memory, heat, p),
        AttentionKind::Concat => concat_baseline(memory, heat, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single-token attention where every projection picks one channel.
    fn unit_params(kind: AttentionKind, mem_channels: usize) -> AttentionParams {
        let mut p = AttentionParams::zeros(kind, mem_channels, 1);
        p.query.weight.data_mut()[0] = 1.0;
        p.key.weight.data_mut()[0] = 1.0;
        p.value.weight.data_mut()[0] = 1.0;
        p
    }

    fn heat_with(v: f32) -> Tensor {
        let mut h = Tensor::zeros(&[NUM_NODES, 1, 1]);
        h.data_mut()[0] = v;
        h
    }

    #[test]
    fn single_token_hand_example() {
        // q = 2 from the heatmap, k = 3 and v = 5 from the memory.
        let mut p = unit_params(AttentionKind::CluesOnMemory, 2);
        p.value.weight = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let memory = Tensor::new(vec![2, 1, 1], vec![3.0, 5.0]).unwrap();
        let out = recall(&memory, &heat_with(2.0), &p).unwrap();
        assert_eq!(out.shape(), &[2, 1, 1]);
        assert_eq!(out.data(), &[32.0, 5.0]);
    }

    #[test]
    fn monc_hand_example() {
        // Roles swapped: q = 3 from memory, k = 2 and v = 5 from the heatmap.
        let mut p = unit_params(AttentionKind::MemoryOnClues, 1);
        p.value.weight.data_mut()[0] = 0.0;
        p.value.weight.data_mut()[1] = 1.0;
        let mut heat = heat_with(2.0);
        heat.data_mut()[1] = 5.0;
        let out = recall_monc(&Tensor::full(&[1, 1, 1], 3.0), &heat, &p).unwrap();
        assert_eq!(out.data(), &[3.0 * 2.0 * 5.0 + 3.0, 5.0]);
    }

    #[test]
    fn zero_query_returns_value() {
        let mut rng = Rng::new(1);
        let mut p = AttentionParams::random(AttentionKind::CluesOnMemory, 3, 4, &mut rng);
        p.query.bias = Tensor::zeros(&[4]);
        let memory = rng.normal_tensor(&[3, 2, 2], 1.0);
        let out = recall(&memory, &Tensor::zeros(&[NUM_NODES, 2, 2]), &p).unwrap();
        let v = p.value.forward(&memory, 1, 0).unwrap();
        assert!(out.data()[..16].iter().all(|&x| x == 0.0));
        assert_eq!(&out.data()[16..], v.data());
    }

    #[test]
    fn orthogonal_keys_leave_query() {
        // d = 2: query uses channel 0 only, key channel 1 only.
        let mut p = AttentionParams::zeros(AttentionKind::CluesOnMemory, 2, 2);
        p.query.weight = Tensor::new(vec![2, NUM_NODES, 1, 1], {
            let mut w = vec![0.0; 2 * NUM_NODES];
            w[0] = 1.0;
            w
        })
        .unwrap();
        p.key.weight = Tensor::new(vec![2, 2, 1, 1], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        p.value.weight = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = Rng::new(2);
        let memory = rng.normal_tensor(&[2, 2, 2], 1.0);
        let heat = rng.normal_tensor(&[NUM_NODES, 2, 2], 1.0);
        let out = recall(&memory, &heat, &p).unwrap();
        let q = p.query.forward(&heat, 1, 0).unwrap();
        assert_eq!(&out.data()[..8], q.data());
        assert_eq!(&out.data()[8..], memory.data());
    }

    #[test]
    fn monc_differs_from_conm() {
        let mut rng = Rng::new(3);
        let conm = AttentionParams::random(AttentionKind::CluesOnMemory, 4, 4, &mut rng);
        let monc = AttentionParams::random(AttentionKind::MemoryOnClues, 4, 4, &mut rng);
        let memory = rng.normal_tensor(&[4, 2, 2], 1.0);
        let heat = rng.normal_tensor(&[NUM_NODES, 2, 2], 1.0);
        let a = recall(&memory, &heat, &conm).unwrap();
        let b = recall_monc(&memory, &heat, &monc).unwrap();
        assert_eq!(a.shape(), b.shape());
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn zero_heat_monc_has_zero_value_half() {
        let mut rng = Rng::new(4);
        let p = AttentionParams::random(AttentionKind::MemoryOnClues, 3, 2, &mut rng);
        let memory = rng.normal_tensor(&[3, 2, 2], 1.0);
        let out = recall_monc(&memory, &Tensor::zeros(&[NUM_NODES, 2, 2]), &p).unwrap();
        let q = p.query.forward(&memory, 1, 0).unwrap();
        assert_eq!(&out.data()[..8], q.data());
        assert!(out.data()[8..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concat_baseline_is_recall_without_keys() {
        let mut rng = Rng::new(5);
        let mut p = AttentionParams::random(AttentionKind::CluesOnMemory, 3, 4, &mut rng);
        let memory = rng.normal_tensor(&[3, 2, 3], 1.0);
        let heat = rng.normal_tensor(&[NUM_NODES, 2, 3], 1.0);
        p.key = Conv::zeros(4, 3, 1);
        let a = recall(&memory, &heat, &p).unwrap();
        let b = concat_baseline(&memory, &heat, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.shape(), &[8, 2, 3]);
        let zero = concat_baseline(&Tensor::zeros(&[3, 2, 3]), &Tensor::zeros(&[NUM_NODES, 2, 3]), &AttentionParams::zeros(AttentionKind::Concat, 3, 4)).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_in_value() {
        let mut rng = Rng::new(6);
        let p = AttentionParams::random(AttentionKind::CluesOnMemory, 3, 4, &mut rng);
        let memory = rng.normal_tensor(&[3, 2, 2], 1.0);
        let heat = rng.normal_tensor(&[NUM_NODES, 2, 2], 1.0);
        let base = recall(&memory, &heat, &p).unwrap();
        let q = p.query.forward(&heat, 1, 0).unwrap();
        let mut scaled = p.clone();
        let a = 2.5f32;
        scaled.value.weight = scaled.value.weight.map(|v| v * a);
        scaled.value.bias = scaled.value.bias.map(|v| v * a);
        let out = recall(&memory, &heat, &scaled).unwrap();
        for i in 0..16 {
            let wv = base.data()[i] - q.data()[i];
            let wv_scaled = out.data()[i] - q.data()[i];
            assert!((wv_scaled - a * wv).abs() <= 1e-5 * (a * wv).abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let p = AttentionParams::zeros(AttentionKind::CluesOnMemory, 2, 2);
        let r = recall(&Tensor::zeros(&[2, 2, 2]), &Tensor::zeros(&[NUM_NODES, 3, 2]), &p);
        assert!(matches!(r, Err(MtrError::Contract(_))));
    }

    #[test]
    fn normalize_changes_output() {
        let mut rng = Rng::new(7);
        let mut p = AttentionParams::random(AttentionKind::CluesOnMemory, 3, 2, &mut rng);
        let memory = rng.normal_tensor(&[3, 2, 2], 1.0);
        let heat = rng.normal_tensor(&[NUM_NODES, 2, 2], 1.0);
        let a = recall(&memory, &heat, &p).unwrap();
        p.normalize = true;
        let b = recall(&memory, &heat, &p).unwrap();
        assert_ne!(a, b);
        assert_eq!(&a.data()[8..], &b.data()[8..]);
    }
}
