//! Layers built from differentiable tensor primitives.

use candle_core::{DType, Device, Tensor, D};

use super::params::{Init, ParamPath};
use crate::{Error, Result};

/// 2-D convolution as an explicit patch matrix times the weight matrix; both
/// passes then run through batched matmul.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: bool,
}

impl ConvSpec {
    pub fn same(k: usize) -> Self {
        Self {
            kernel: (k, k),
            stride: (1, 1),
            padding: (k / 2, k / 2),
            bias: true,
        }
    }

    pub fn down(k: usize) -> Self {
        Self {
            stride: (2, 2),
            ..Self::same(k)
        }
    }
}

fn strided(x: &Tensor, dim: usize, len: usize, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let ids: Vec<u32> = (0..len).map(|i| (i * stride) as u32).collect();
    Ok(x.contiguous()?.index_select(&Tensor::new(ids, x.device())?, dim)?)
}

impl Conv2d {
    pub fn new(p: &ParamPath, cin: usize, cout: usize, spec: ConvSpec) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        let fan_in = cin * kh * kw;
        let weight = p.get("weight", &[cout, cin, kh, kw], Init::FanIn(fan_in))?;
        let bias = if spec.bias {
            Some(p.get("bias", &[cout], Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            cin,
            cout,
        })
    }

    /// Same, with an explicit bias initialisation.
    pub fn with_bias_init(p: &ParamPath, cin: usize, cout: usize, spec: ConvSpec, weight: Init, bias: Init) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        Ok(Self {
            weight: p.get("weight", &[cout, cin, kh, kw], weight)?,
            bias: Some(p.get("bias", &[cout], bias)?),
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            cin,
            cout,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        debug_assert_eq!(c, self.cin);
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let ho = (h + 2 * ph - kh) / sh + 1;
        let wo = (w + 2 * pw - kw) / sw + 1;
        let out = if kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0 {
            let col = x.reshape((b, c, h * w))?;
            self.matmul(&col, b)?
        } else {
            let xp = x.pad_with_zeros(2, ph, ph)?.pad_with_zeros(3, pw, pw)?;
            let mut taps = Vec::with_capacity(kh * kw);
            for i in 0..kh {
                let rows = strided(&xp.narrow(2, i, (ho - 1) * sh + 1)?, 2, ho, sh)?;
                for j in 0..kw {
                    taps.push(strided(&rows.narrow(3, j, (wo - 1) * sw + 1)?, 3, wo, sw)?);
                }
            }
            let col = Tensor::stack(&taps, 2)?.reshape((b, c * kh * kw, ho * wo))?;
            self.matmul(&col, b)?
        };
        let out = out.reshape((b, self.cout, ho, wo))?;
        match &self.bias {
            Some(bias) => Ok(out.broadcast_add(&bias.reshape((1, self.cout, 1, 1))?)?),
            None => Ok(out),
        }
    }

    /// Overwrite every bias entry with `value`.
    pub fn set_bias(&self, value: f64) -> Result<()> {
        if let Some(b) = &self.bias {
            let filled = (b.zeros_like()? + value)?;
            // Parameters are Var-backed; writing through the storage updates
            // every holder of the tensor.
            b.slice_set(&filled, 0, 0)?;
        }
        Ok(())
    }

    fn matmul(&self, col: &Tensor, b: usize) -> Result<Tensor> {
        let k = col.dim(1)?;
        // Batched matmul against a broadcast operand needs a contiguous copy
        // on the CPU backend.
        let w = self.weight.reshape((self.cout, k))?.broadcast_left(b)?.contiguous()?;
        Ok(w.matmul(&col.contiguous()?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(p: &ParamPath, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[dout, din], Init::FanIn(din))?,
            bias: Some(p.get("bias", &[dout], Init::FanIn(din))?),
        })
    }

    pub fn no_bias(p: &ParamPath, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[dout, din], Init::FanIn(din))?,
            bias: None,
        })
    }

    /// Applies to the last axis of a 2-D or 3-D input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&wt)?,
            3 => {
                let (b, n, d) = x.dims3()?;
                x.reshape((b * n, d))?.matmul(&wt)?.reshape((b, n, ()))?
            }
            r => return Err(Error::shape("Linear", "rank 2 or 3", r)),
        };
        match &self.bias {
            Some(bias) => Ok(y.broadcast_add(bias)?),
            None => Ok(y),
        }
    }
}

/// Group normalisation over `(B, C, ...)` inputs.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

/// Largest group count not above `max` that divides `channels`.
pub fn group_count(channels: usize, max: usize) -> usize {
    (1..=max.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

impl GroupNorm {
    pub fn new(p: &ParamPath, channels: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.get("weight", &[channels], Init::Ones)?,
            beta: p.get("bias", &[channels], Init::Zeros)?,
            groups: group_count(channels, groups),
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (b, c) = (dims[0], dims[1]);
        let g = x.reshape((b, self.groups, ()))?;
        let mean = g.mean_keepdim(2)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape(dims.as_slice())?;
        let mut shape = vec![1, c];
        shape.resize(dims.len(), 1);
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape.as_slice())?)?
            .broadcast_add(&self.beta.reshape(shape.as_slice())?)?)
    }
}

/// Layer normalisation over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &ParamPath, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.get("weight", &[dim], Init::Ones)?,
            beta: p.get("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// `log(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Per-channel PReLU over axis 1.
#[derive(Debug, Clone)]
pub struct PRelu {
    alpha: Tensor,
}

impl PRelu {
    pub fn new(p: &ParamPath, channels: usize) -> Result<Self> {
        Ok(Self {
            alpha: p.get("alpha", &[channels], Init::Const(0.25))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut shape = vec![1; x.rank()];
        shape[1] = self.alpha.dim(0)?;
        let neg = x.neg()?.relu()?.neg()?;
        Ok((x.relu()? + neg.broadcast_mul(&self.alpha.reshape(shape.as_slice())?)?)?)
    }
}

/// Multi-head attention; keys and values come from `context` (self-attention
/// when it is `x` itself).
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(p: &ParamPath, dim: usize, context_dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::no_bias(&p.sub("to_q"), dim, dim)?,
            k: Linear::no_bias(&p.sub("to_k"), context_dim, dim)?,
            v: Linear::no_bias(&p.sub("to_v"), context_dim, dim)?,
            out: Linear::new(&p.sub("to_out"), dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `x`: `(B, N, dim)`; `context`: `(B, M, context_dim)`.
    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(context)?)?;
        let v = self.split(&self.v.forward(context)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        let attn = softmax_last(&scores)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        self.out.forward(&y)
    }
}

/// Nearest-neighbour resize of the two trailing axes.
pub fn resize_nearest(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, hi, wi) = x.dims4()?;
    let idx = |n_out: usize, n_in: usize| -> Result<Tensor> {
        let ids: Vec<u32> = (0..n_out).map(|i| (i * n_in / n_out) as u32).collect();
        Ok(Tensor::new(ids, x.device())?)
    };
    let mut y = x.clone();
    if h != hi {
        y = y.contiguous()?.index_select(&idx(h, hi)?, 2)?;
    }
    if w != wi {
        y = y.contiguous()?.index_select(&idx(w, wi)?, 3)?;
    }
    Ok(y)
}

/// Depthwise 1-D convolution over `(N, C, L)` with same padding.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new(p: &ParamPath, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[channels, kernel], Init::FanIn(kernel))?,
            bias: p.get("bias", &[channels], Init::FanIn(kernel))?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, l) = x.dims3()?;
        let half = self.kernel / 2;
        let xp = x.pad_with_zeros(2, half, self.kernel - 1 - half)?;
        let mut acc = self.bias.reshape((1, c, 1))?.broadcast_as(x.shape())?.contiguous()?;
        for j in 0..self.kernel {
            let w = self.weight.narrow(1, j, 1)?.reshape((1, c, 1))?;
            acc = (acc + xp.narrow(2, j, l)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }
}

/// Sinusoidal embedding of integer timesteps, `(B, dim)`.
pub fn timestep_embedding(t: &[usize], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let s = step as f64;
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| s * f).collect();
        data.extend(args.iter().map(|a| a.cos()));
        data.extend(args.iter().map(|a| a.sin()));
        data.extend(std::iter::repeat_n(0.0, dim - 2 * half));
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), device)?.to_dtype(dtype)?)
}
