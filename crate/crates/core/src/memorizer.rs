//! Encoder transform: a strided frame embedder feeding a ConvLSTM whose final
//! cell state is the memory of the whole group of pictures.

use crate::error::{MtrError, Result};
use crate::numerics::{add, hadamard, sigmoid, tanh, Conv, Rng, Tensor};

/// Two stride-2 3×3 convolutions, 1×H×W to Cm×H/4×W/4.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl EmbedParams {
    pub fn zeros(channels: usize) -> Self {
        EmbedParams { conv1: Conv::zeros(channels, 1, 3), conv2: Conv::zeros(channels, channels, 3) }
    }

    pub fn random(channels: usize, rng: &mut Rng) -> Self {
        EmbedParams {
            conv1: Conv::random(channels, 1, 3, 1.0, rng),
            conv2: Conv::random(channels, channels, 3, 1.0, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv2.out_channels()
    }
}

/// Gate convolutions (3×3, stride 1, pad 1), peephole weights and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams {
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl ConvLstmParams {
    /// All-zero parameters for `channels` input/state channels and a
    /// `height`×`width` cell.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let k = || Tensor::zeros(&[channels, channels, 3, 3]);
        let peep = || Tensor::zeros(&[channels, height, width]);
        let b = || Tensor::zeros(&[channels]);
        ConvLstmParams {
            w_xi: k(),
            w_hi: k(),
            w_xf: k(),
            w_hf: k(),
            w_xc: k(),
            w_hc: k(),
            w_xo: k(),
            w_ho: k(),
            w_ci: peep(),
            w_cf: peep(),
            w_co: peep(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    pub fn random(channels: usize, height: usize, width: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(channels, height, width);
        let std = 1.0 / ((channels * 9) as f64).sqrt();
        for w in [
            &mut p.w_xi, &mut p.w_hi, &mut p.w_xf, &mut p.w_hf, &mut p.w_xc, &mut p.w_hc,
            &mut p.w_xo, &mut p.w_ho,
        ] {
            *w = rng.normal_tensor(&[channels, channels, 3, 3], std);
        }
        for w in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co] {
            *w = rng.normal_tensor(&[channels, height, width], 0.1);
        }
        // Start with the forget gate leaning open.
        p.b_f = Tensor::full(&[channels], 1.0);
        p
    }

    pub fn channels(&self) -> usize {
        self.b_i.len()
    }

    /// Shape of the cell and hidden state.
    pub fn state_shape(&self) -> &[usize] {
        self.w_ci.shape()
    }

    /// Named tensors in field order.
    pub fn tensors(&self) -> [(&'static str, &Tensor); 15] {
        [
            ("w_xi", &self.w_xi),
            ("w_hi", &self.w_hi),
            ("w_xf", &self.w_xf),
            ("w_hf", &self.w_hf),
            ("w_xc", &self.w_xc),
            ("w_hc", &self.w_hc),
            ("w_xo", &self.w_xo),
            ("w_ho", &self.w_ho),
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 15] {
        [
            ("w_xi", &mut self.w_xi),
            ("w_hi", &mut self.w_hi),
            ("w_xf", &mut self.w_xf),
            ("w_hf", &mut self.w_hf),
            ("w_xc", &mut self.w_xc),
            ("w_hc", &mut self.w_hc),
            ("w_xo", &mut self.w_xo),
            ("w_ho", &mut self.w_ho),
            ("w_ci", &mut self.w_ci),
            ("w_cf", &mut self.w_cf),
            ("w_co", &mut self.w_co),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_c", &mut self.b_c),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// ConvLSTM cell (`c`) and hidden (`h`) state.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub c: Tensor,
    pub h: Tensor,
}

impl CellState {
    pub fn zeros(shape: &[usize]) -> Self {
        CellState { c: Tensor::zeros(shape), h: Tensor::zeros(shape) }
    }
}

/// Embed one frame: conv(stride 2) → tanh → conv(stride 2) → tanh.
pub fn embed_frame(frame: &Tensor, p: &EmbedParams) -> Result<Tensor> {
    let (c, h, w) = frame.chw()?;
    if c != 1 {
        return Err(MtrError::contract(format!("embed_frame: expected 1×H×W frame, got {:?}", frame.shape())));
    }
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(MtrError::config(format!("frame size {h}×{w} is not divisible by 4")));
    }
    let x = tanh(&p.conv1.forward(frame, 2, 1)?);
    Ok(tanh(&p.conv2.forward(&x, 2, 1)?))
}

fn gate_conv(x: &Tensor, h: &Tensor, wx: &Tensor, wh: &Tensor, b: &Tensor) -> Result<Tensor> {
    add(
        &crate::numerics::conv2d(x, wx, Some(b), 1, 1)?,
        &crate::numerics::conv2d(h, wh, None, 1, 1)?,
    )
}

/// One ConvLSTM step with peephole connections, gates evaluated in the
/// order input, forget, cell, output, hidden.
pub fn cell_step(p: &ConvLstmParams, x_feat: &Tensor, prev: &CellState) -> Result<CellState> {
    let shape = p.state_shape();
    if prev.c.shape() != shape || prev.h.shape() != shape {
        return Err(MtrError::contract(format!(
            "cell_step: state {:?}/{:?} does not match parameters {:?}",
            prev.c.shape(),
            prev.h.shape(),
            shape
        )));
    }
    if x_feat.shape() != shape {
        return Err(MtrError::contract(format!(
            "cell_step: input {:?} does not match state {:?}",
            x_feat.shape(),
            shape
        )));
    }
    let (x, h, c) = (x_feat, &prev.h, &prev.c);
    let i = sigmoid(&add(&gate_conv(x, h, &p.w_xi, &p.w_hi, &p.b_i)?, &hadamard(&p.w_ci, c)?)?);
    let f = sigmoid(&add(&gate_conv(x, h, &p.w_xf, &p.w_hf, &p.b_f)?, &hadamard(&p.w_cf, c)?)?);
    let g = tanh(&gate_conv(x, h, &p.w_xc, &p.w_hc, &p.b_c)?);
    let c_t = add(&hadamard(&f, c)?, &hadamard(&i, &g)?)?;
    let o = sigmoid(&add(&gate_conv(x, h, &p.w_xo, &p.w_ho, &p.b_o)?, &hadamard(&p.w_co, &c_t)?)?);
    let h_t = hadamard(&o, &tanh(&c_t))?;
    Ok(CellState { c: c_t, h: h_t })
}

/// Final ConvLSTM state after feeding every embedded frame from a zero state.
pub fn memorize_state(p: &ConvLstmParams, e: &EmbedParams, gop: &[Tensor]) -> Result<CellState> {
    if gop.is_empty() {
        return Err(MtrError::contract("memorize: empty group of pictures"));
    }
    let first = gop[0].shape();
    let mut state = CellState::zeros(p.state_shape());
    for frame in gop {
        if frame.shape() != first {
            return Err(MtrError::contract(format!(
                "memorize: frame {:?} differs from first frame {:?}",
                frame.shape(),
                first
            )));
        }
        let x = embed_frame(frame, e)?;
        state = cell_step(p, &x, &state)?;
    }
    Ok(state)
}

/// Memory `M`: the cell state after the last frame.
pub fn memorize(p: &ConvLstmParams, e: &EmbedParams, gop: &[Tensor]) -> Result<Tensor> {
    Ok(memorize_state(p, e, gop)?.c)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar (1×1×1) re-implementation of the gate equations in f64.
    fn scalar_step(p: &ConvLstmParams, x: f64, h: f64, c: f64) -> (f64, f64) {
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let centre = |t: &Tensor| t.data()[4] as f64;
        let v = |t: &Tensor| t.data()[0] as f64;
        let i = s(centre(&p.w_xi) * x + centre(&p.w_hi) * h + v(&p.w_ci) * c + v(&p.b_i));
        let f = s(centre(&p.w_xf) * x + centre(&p.w_hf) * h + v(&p.w_cf) * c + v(&p.b_f));
        let c_t = f * c + i * (centre(&p.w_xc) * x + centre(&p.w_hc) * h + v(&p.b_c)).tanh();
        let o = s(centre(&p.w_xo) * x + centre(&p.w_ho) * h + v(&p.w_co) * c_t + v(&p.b_o));
        (c_t, o * c_t.tanh())
    }

    #[test]
    fn zero_params_zero_state() {
        let p = ConvLstmParams::zeros(2, 3, 3);
        let s = cell_step(&p, &Tensor::full(&[2, 3, 3], 0.7), &CellState::zeros(&[2, 3, 3])).unwrap();
        assert!(s.c.data().iter().all(|&v| v == 0.0));
        assert!(s.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn retention_with_saturated_gates() {
        let mut p = ConvLstmParams::zeros(1, 1, 1);
        p.b_f = Tensor::scalar(20.0);
        p.b_i = Tensor::scalar(-20.0);
        let prev = CellState { c: Tensor::full(&[1, 1, 1], 0.7), h: Tensor::zeros(&[1, 1, 1]) };
        let s = cell_step(&p, &Tensor::zeros(&[1, 1, 1]), &prev).unwrap();
        assert!((s.c.data()[0] as f64 - 0.7).abs() <= 1e-6);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let p = ConvLstmParams::random(1, 1, 1, &mut rng);
            let x = rng.normal() as f32;
            let (h, c) = (rng.uniform_range(-1.0, 1.0) as f32, rng.normal() as f32);
            let prev = CellState { c: Tensor::full(&[1, 1, 1], c), h: Tensor::full(&[1, 1, 1], h) };
            let s = cell_step(&p, &Tensor::full(&[1, 1, 1], x), &prev).unwrap();
            let (oc, oh) = scalar_step(&p, x as f64, h as f64, c as f64);
            assert!((s.c.data()[0] as f64 - oc).abs() <= 1e-6);
            assert!((s.h.data()[0] as f64 - oh).abs() <= 1e-6);
        }
    }

    #[test]
    fn embed_zero_and_bias() {
        let e = EmbedParams::zeros(2);
        let y = embed_frame(&Tensor::zeros(&[1, 8, 8]), &e).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut e = EmbedParams::zeros(2);
        e.conv1.bias = Tensor::full(&[2], 0.5);
        e.conv2.bias = Tensor::full(&[2], 0.3);
        let y = embed_frame(&Tensor::full(&[1, 8, 8], 0.9), &e).unwrap();
        let expect = libm::tanhf(0.3);
        assert!(y.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn embed_rejects_bad_sizes() {
        let e = EmbedParams::zeros(2);
        assert!(matches!(embed_frame(&Tensor::zeros(&[1, 6, 8]), &e), Err(MtrError::Config(_))));
    }

    #[test]
    fn memorize_single_frame_is_one_step() {
        let mut rng = Rng::new(2);
        let e = EmbedParams::random(2, &mut rng);
        let p = ConvLstmParams::random(2, 2, 2, &mut rng);
        let frame = rng.normal_tensor(&[1, 8, 8], 0.5);
        let m = memorize(&p, &e, std::slice::from_ref(&frame)).unwrap();
        let s = cell_step(&p, &embed_frame(&frame, &e).unwrap(), &CellState::zeros(&[2, 2, 2])).unwrap();
        assert_eq!(m, s.c);
    }

    #[test]
    fn memorize_unrolls_three_steps() {
        let mut rng = Rng::new(3);
        let e = EmbedParams::random(2, &mut rng);
        let p = ConvLstmParams::random(2, 2, 2, &mut rng);
        let gop: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let mut s = CellState::zeros(&[2, 2, 2]);
        for f in &gop {
            s = cell_step(&p, &embed_frame(f, &e).unwrap(), &s).unwrap();
        }
        assert_eq!(memorize(&p, &e, &gop).unwrap(), s.c);
    }

    #[test]
    fn zero_params_zero_memory() {
        let gop = vec![Tensor::full(&[1, 8, 8], 0.3); 4];
        let m = memorize(&ConvLstmParams::zeros(2, 2, 2), &EmbedParams::zeros(2), &gop).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_gop_rejected() {
        let r = memorize(&ConvLstmParams::zeros(2, 2, 2), &EmbedParams::zeros(2), &[]);
        assert!(matches!(r, Err(MtrError::Contract(_))));
    }

    #[test]
    fn frame_order_matters() {
        let mut rng = Rng::new(4);
        let e = EmbedParams::random(2, &mut rng);
        let p = ConvLstmParams::random(2, 2, 2, &mut rng);
        let gop: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let rev: Vec<Tensor> = gop.iter().rev().cloned().collect();
        let a = memorize(&p, &e, &gop).unwrap();
        let b = memorize(&p, &e, &rev).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff > 1e-6);
    }
}
