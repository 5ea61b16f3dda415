use std::fmt;

use crate::error::{MtrError, Result};

use super::Rng;

/// Row-major `f32` tensor of rank 1 to 4.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(MtrError::contract(format!("tensor rank {} outside 1..=4", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(MtrError::contract(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(MtrError::contract(format!("expected C×H×W tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(MtrError::contract(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Channel `c` of a C×H×W tensor as a slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(MtrError::contract(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is Cin×H×W, `weights` Cout×Cin×k×k with k odd. Each output sum
/// is accumulated in `f64` over the window in row-major (ci, ky, kx) order and
/// rounded to `f32` once.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (cin, h, w) = input.chw()?;
    let (cout, wcin, kh, kw) = match weights.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(MtrError::contract(format!(
                "conv2d: weights must be Cout×Cin×k×k, got {:?} for input {:?}",
                weights.shape, input.shape
            )))
        }
    };
    if wcin != cin || kh != kw || kh % 2 == 0 {
        return Err(MtrError::contract(format!(
            "conv2d: weights {:?} incompatible with input {:?}",
            weights.shape, input.shape
        )));
    }
    if let Some(b) = bias {
        if b.shape[..] != [cout] {
            return Err(MtrError::contract(format!(
                "conv2d: bias {:?} does not match weights {:?}",
                b.shape, weights.shape
            )));
        }
    }
    if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(MtrError::contract(format!(
            "conv2d: empty output for input {:?}, weights {:?}, stride {stride}, pad {pad}",
            input.shape, weights.shape
        )));
    }
    let k = kh;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0f32; cout * oh * ow];
    let x = &input.data;
    let wt = &weights.data;
    for co in 0..cout {
        let b = bias.map_or(0.0, |b| b.data[co] as f64);
        let wco = &wt[co * cin * k * k..(co + 1) * cin * k * k];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0f64;
                for ci in 0..cin {
                    let plane = &x[ci * h * w..(ci + 1) * h * w];
                    let wk = &wco[ci * k * k..(ci + 1) * k * k];
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wk[ky * k + kx] as f64 * row[ix as usize] as f64;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = (acc + b) as f32;
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out)
}

/// Convolution weights plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        Conv { weight: Tensor::zeros(&[cout, cin, k, k]), bias: Tensor::zeros(&[cout]) }
    }

    /// He-style normal init scaled by `gain / sqrt(fan_in)`, zero bias.
    pub fn random(cout: usize, cin: usize, k: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain / ((cin * k * k) as f64).sqrt();
        Conv { weight: rng.normal_tensor(&[cout, cin, k, k], std), bias: Tensor::zeros(&[cout]) }
    }

    pub fn forward(&self, input: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        conv2d(input, &self.weight, Some(&self.bias), stride, pad)
    }

    /// Stride-1 convolution with "same" padding.
    pub fn same(&self, input: &Tensor) -> Result<Tensor> {
        let k = self.weight.shape[2];
        self.forward(input, 1, k / 2)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + libm::expf(-v)))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(libm::tanhf)
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn scale(x: &Tensor, s: f32) -> Tensor {
    x.map(|v| v * s)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("hadamard", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Stack two C×H×W tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(MtrError::contract(format!(
            "concat_channels: spatial mismatch {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::new(vec![ca + cb, ha, wa], data)
}

/// `a` (N×d) times `b` (d×m), accumulated in `f64`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d, d2, m) = match (&a.shape[..], &b.shape[..]) {
        ([n, d], [d2, m]) => (*n, *d, *d2, *m),
        _ => {
            return Err(MtrError::contract(format!(
                "matmul: expected matrices, got {:?} and {:?}",
                a.shape, b.shape
            )))
        }
    };
    if d != d2 {
        return Err(MtrError::contract(format!(
            "matmul: inner dimensions differ, {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0f32; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0f64;
            for k in 0..d {
                acc += a.data[i * d + k] as f64 * b.data[k * m + j] as f64;
            }
            out[i * m + j] = acc as f32;
        }
    }
    Tensor::new(vec![n, m], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = match a.shape[..] {
        [r, c] => (r, c),
        _ => return Err(MtrError::contract(format!("transpose: expected matrix, got {:?}", a.shape))),
    };
    let mut out = vec![0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Numerically stable softmax over each row of a matrix.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let (r, c) = match a.shape[..] {
        [r, c] => (r, c),
        _ => return Err(MtrError::contract(format!("softmax_rows: expected matrix, got {:?}", a.shape))),
    };
    let mut out = a.data.clone();
    for row in out.chunks_mut(c).take(r) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f64;
        for v in row.iter_mut() {
            *v = libm::expf(*v - max);
            sum += *v as f64;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / sum) as f32;
        }
    }
    Tensor::new(a.shape.clone(), out)
}

/// Nearest-neighbour upsampling of a C×H×W tensor by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x.data[(ch * h + oy / factor) * w + ox / factor];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Mean absolute elementwise difference.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mean_abs_diff", a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(sum / a.len() as f64)
}
