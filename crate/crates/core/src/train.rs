//! Forward and backward passes, MSE loss and SGD with momentum.
//!
//! One implementation serves three backends: plaintext floats, plaintext
//! fixed point (ring arithmetic with rounded truncation) and private
//! two-party shares. Running the same code on each makes the fixed-point
//! backend an exact oracle for the private one, up to truncation noise.

use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::beaver::{beaver_many, beaver_op, fold, BilinearOp, ConvGeom, Elem};
use crate::codec::{put_uint, Reader};
use crate::error::{Error, Result};
use crate::nn::{maxpool_plan, maxpool_with_mask, relu_plan, relu_with_mask};
use crate::ring::{mask, to_signed, RingTensor};
use crate::runtime::{
    run_pair, Dealer, PrepItem, PrepPlan, PrepSource, PrepStore, RoundLedger, Session,
};
use crate::sharing::{encode, scale, AdditiveShare};

/// Dense real tensor used by the float backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl FloatTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(vec![data.len()], shape));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            data: vec![0.0; n],
            shape,
        }
    }

    pub fn to_fixed(&self, bits: u32, precision: u32) -> Result<RingTensor> {
        encode(&self.data, self.shape.clone(), bits, precision)
    }

    pub fn from_fixed(t: &RingTensor, precision: u32) -> Self {
        Self {
            data: crate::sharing::decode(t, precision),
            shape: t.shape().to_vec(),
        }
    }
}

/// Arithmetic a model needs from its tensors. Methods taking `&mut self`
/// may talk to a peer; the others are local.
pub trait Backend {
    type Tensor: Clone + std::fmt::Debug;

    fn shape<'t>(&self, t: &'t Self::Tensor) -> &'t [usize];
    fn reshape(&self, t: &Self::Tensor, shape: Vec<usize>) -> Result<Self::Tensor>;
    fn add(&self, a: &Self::Tensor, b: &Self::Tensor) -> Result<Self::Tensor>;
    fn sub(&self, a: &Self::Tensor, b: &Self::Tensor) -> Result<Self::Tensor>;
    fn mul_int(&self, a: &Self::Tensor, k: i64) -> Self::Tensor;
    fn div_int(&self, a: &Self::Tensor, d: u64) -> Self::Tensor;
    /// Product with a public real constant.
    fn scale(&self, a: &Self::Tensor, c: f64) -> Result<Self::Tensor>;
    fn transpose(&self, a: &Self::Tensor) -> Result<Self::Tensor>;
    /// Adds `b[c]` to every element of channel `c` (axis 1) of `y`.
    fn add_channels(&self, y: &Self::Tensor, b: &Self::Tensor) -> Result<Self::Tensor>;
    /// Sums over every axis except 1.
    fn sum_channels(&self, g: &Self::Tensor) -> Result<Self::Tensor>;
    fn gather_rows(&self, t: &Self::Tensor, rows: &[usize]) -> Result<Self::Tensor>;

    /// Evaluates bilinear maps, rescaling each result back to the working
    /// precision. All items share one round.
    fn bilinear(
        &mut self,
        items: &[(BilinearOp, &Self::Tensor, &Self::Tensor)],
    ) -> Result<Vec<Self::Tensor>>;
    /// `ReLU(x)` and the 0/1 mask `1[x >= 0]`.
    fn relu(&mut self, x: &Self::Tensor) -> Result<(Self::Tensor, Self::Tensor)>;
    /// Elementwise product with a 0/1 mask, no rescaling.
    fn gate(&mut self, mask: &Self::Tensor, g: &Self::Tensor) -> Result<Self::Tensor>;
    /// Max pooling of `[B, C, H, W]`; returns the output and the one-hot
    /// selector of shape `[windows, kernel^2]`.
    fn maxpool(
        &mut self,
        x: &Self::Tensor,
        kernel: usize,
        stride: usize,
    ) -> Result<(Self::Tensor, Self::Tensor)>;
    /// Routes pooled gradients back to the selected window positions.
    fn unpool(
        &mut self,
        hot: &Self::Tensor,
        g: &Self::Tensor,
        input: &[usize],
        kernel: usize,
        stride: usize,
    ) -> Result<Self::Tensor>;
    /// Mean squared error of `y` against `t`. Private backends reveal only
    /// this scalar.
    fn mse(&mut self, y: &Self::Tensor, t: &Self::Tensor) -> Result<f64>;
}

fn pool_geom(input: &[usize], kernel: usize, stride: usize) -> Result<ConvGeom> {
    if input.len() != 4 {
        return Err(Error::Geometry(format!(
            "pooling expects [B, C, H, W], got {input:?}"
        )));
    }
    let g = ConvGeom {
        batch: input[0] * input[1],
        in_ch: 1,
        height: input[2],
        width: input[3],
        out_ch: 1,
        kernel_h: kernel,
        kernel_w: kernel,
        stride,
        padding: 0,
    };
    g.validate()?;
    Ok(g)
}

fn channel_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Geometry(format!(
            "expected a batch and channel axis, got {shape:?}"
        )));
    }
    Ok((shape[1], shape[2..].iter().product()))
}

fn add_channels_raw<E: Elem>(y: &[E], shape: &[usize], b: &[E]) -> Result<Vec<E>> {
    let (c, inner) = channel_dims(shape)?;
    if b.len() != c {
        return Err(Error::ShapeMismatch(shape.to_vec(), vec![b.len()]));
    }
    Ok(y.iter()
        .enumerate()
        .map(|(i, &v)| v.add(b[(i / inner) % c]))
        .collect())
}

fn sum_channels_raw<E: Elem>(g: &[E], shape: &[usize]) -> Result<Vec<E>> {
    let (c, inner) = channel_dims(shape)?;
    let mut out = vec![E::default(); c];
    for (i, &v) in g.iter().enumerate() {
        let ch = (i / inner) % c;
        out[ch] = out[ch].add(v);
    }
    Ok(out)
}

fn transpose_raw<E: Copy>(a: &[E], shape: &[usize]) -> Result<(Vec<E>, Vec<usize>)> {
    let [r, c] = shape else {
        return Err(Error::ShapeMismatch(shape.to_vec(), vec![0, 0]));
    };
    let (r, c) = (*r, *c);
    let mut out = Vec::with_capacity(a.len());
    for j in 0..c {
        for i in 0..r {
            out.push(a[i * c + j]);
        }
    }
    Ok((out, vec![c, r]))
}

fn gather_raw<E: Copy>(a: &[E], shape: &[usize], rows: &[usize]) -> Result<(Vec<E>, Vec<usize>)> {
    let n = *shape
        .first()
        .ok_or_else(|| Error::Geometry("empty shape".into()))?;
    let row: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(rows.len() * row);
    for &i in rows {
        if i >= n {
            return Err(Error::InvalidArgument(format!("row {i} out of {n}")));
        }
        out.extend_from_slice(&a[i * row..(i + 1) * row]);
    }
    let mut s = shape.to_vec();
    s[0] = rows.len();
    Ok((out, s))
}

/// Spreads each pooled gradient over its window's `k^2` slots.
fn spread<E: Copy>(g: &[E], kk: usize) -> Vec<E> {
    g.iter()
        .flat_map(|&v| std::iter::repeat_n(v, kk))
        .collect()
}

/// Index of the last maximum in each window, matching the private
/// tie-break that keys entries by position.
fn window_onehot<T: PartialOrd + Copy>(win: &[T], kk: usize) -> Vec<bool> {
    let mut out = vec![false; win.len()];
    for (r, w) in win.chunks(kk).enumerate() {
        let mut best = 0;
        for j in 1..kk {
            if w[j] >= w[best] {
                best = j;
            }
        }
        out[r * kk + best] = true;
    }
    out
}

/// Plaintext reals.
#[derive(Debug, Clone, Copy, Default)]
pub struct Float;

impl Backend for Float {
    type Tensor = FloatTensor;

    fn shape<'t>(&self, t: &'t FloatTensor) -> &'t [usize] {
        &t.shape
    }

    fn reshape(&self, t: &FloatTensor, shape: Vec<usize>) -> Result<FloatTensor> {
        FloatTensor::new(t.data.clone(), shape)
    }

    fn add(&self, a: &FloatTensor, b: &FloatTensor) -> Result<FloatTensor> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch(a.shape.clone(), b.shape.clone()));
        }
        FloatTensor::new(
            a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
            a.shape.clone(),
        )
    }

    fn sub(&self, a: &FloatTensor, b: &FloatTensor) -> Result<FloatTensor> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch(a.shape.clone(), b.shape.clone()));
        }
        FloatTensor::new(
            a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
            a.shape.clone(),
        )
    }

    fn mul_int(&self, a: &FloatTensor, k: i64) -> FloatTensor {
        FloatTensor {
            data: a.data.iter().map(|x| x * k as f64).collect(),
            shape: a.shape.clone(),
        }
    }

    fn div_int(&self, a: &FloatTensor, d: u64) -> FloatTensor {
        FloatTensor {
            data: a.data.iter().map(|x| x / d as f64).collect(),
            shape: a.shape.clone(),
        }
    }

    fn scale(&self, a: &FloatTensor, c: f64) -> Result<FloatTensor> {
        Ok(FloatTensor {
            data: a.data.iter().map(|x| x * c).collect(),
            shape: a.shape.clone(),
        })
    }

    fn transpose(&self, a: &FloatTensor) -> Result<FloatTensor> {
        let (d, s) = transpose_raw(&a.data, &a.shape)?;
        FloatTensor::new(d, s)
    }

    fn add_channels(&self, y: &FloatTensor, b: &FloatTensor) -> Result<FloatTensor> {
        FloatTensor::new(
            add_channels_raw(&y.data, &y.shape, &b.data)?,
            y.shape.clone(),
        )
    }

    fn sum_channels(&self, g: &FloatTensor) -> Result<FloatTensor> {
        let d = sum_channels_raw(&g.data, &g.shape)?;
        let n = d.len();
        FloatTensor::new(d, vec![n])
    }

    fn gather_rows(&self, t: &FloatTensor, rows: &[usize]) -> Result<FloatTensor> {
        let (d, s) = gather_raw(&t.data, &t.shape, rows)?;
        FloatTensor::new(d, s)
    }

    fn bilinear(
        &mut self,
        items: &[(BilinearOp, &FloatTensor, &FloatTensor)],
    ) -> Result<Vec<FloatTensor>> {
        items
            .iter()
            .map(|(op, a, b)| {
                let (d, s) = op.apply_f64(&a.data, &a.shape, &b.data, &b.shape)?;
                FloatTensor::new(d, s)
            })
            .collect()
    }

    fn relu(&mut self, x: &FloatTensor) -> Result<(FloatTensor, FloatTensor)> {
        let m: Vec<f64> = x
            .data
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { 0.0 })
            .collect();
        let y = x.data.iter().map(|&v| v.max(0.0)).collect();
        Ok((
            FloatTensor::new(y, x.shape.clone())?,
            FloatTensor::new(m, x.shape.clone())?,
        ))
    }

    fn gate(&mut self, mask: &FloatTensor, g: &FloatTensor) -> Result<FloatTensor> {
        if mask.data.len() != g.data.len() {
            return Err(Error::ShapeMismatch(mask.shape.clone(), g.shape.clone()));
        }
        FloatTensor::new(
            mask.data.iter().zip(&g.data).map(|(m, v)| m * v).collect(),
            g.shape.clone(),
        )
    }

    fn maxpool(
        &mut self,
        x: &FloatTensor,
        kernel: usize,
        stride: usize,
    ) -> Result<(FloatTensor, FloatTensor)> {
        let g = pool_geom(&x.shape, kernel, stride)?;
        let kk = kernel * kernel;
        let win = crate::beaver::unroll(&x.data, &g);
        let hot = window_onehot(&win, kk);
        let y = win
            .chunks(kk)
            .map(|w| w.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let rows = win.len() / kk;
        Ok((
            FloatTensor::new(y, vec![x.shape[0], x.shape[1], g.out_h(), g.out_w()])?,
            FloatTensor::new(
                hot.iter().map(|&h| h as u8 as f64).collect(),
                vec![rows, kk],
            )?,
        ))
    }

    fn unpool(
        &mut self,
        hot: &FloatTensor,
        g: &FloatTensor,
        input: &[usize],
        kernel: usize,
        stride: usize,
    ) -> Result<FloatTensor> {
        let geom = pool_geom(input, kernel, stride)?;
        let s = spread(&g.data, kernel * kernel);
        let cols: Vec<f64> = hot.data.iter().zip(&s).map(|(h, v)| h * v).collect();
        FloatTensor::new(fold(&cols, &geom), input.to_vec())
    }

    fn mse(&mut self, y: &FloatTensor, t: &FloatTensor) -> Result<f64> {
        let d = self.sub(y, t)?;
        Ok(d.data.iter().map(|v| v * v).sum::<f64>() / d.data.len() as f64)
    }
}

/// Plaintext fixed point in `Z_2^bits` with `precision` decimals. Products
/// are divided back down with rounding to nearest. Floor division would
/// drift: the private truncation is unbiased on average, and SGD sums
/// thousands of truncated updates.
#[derive(Debug, Clone, Copy)]
pub struct Fixed {
    pub bits: u32,
    pub precision: u32,
}

impl Fixed {
    fn ring(&self, data: Vec<u64>, shape: Vec<usize>) -> Result<RingTensor> {
        let m = mask(self.bits);
        RingTensor::new(data.into_iter().map(|v| v & m).collect(), shape, self.bits)
    }

    fn round_div(&self, t: &RingTensor, d: u64) -> RingTensor {
        let bits = self.bits;
        let d = d as i64;
        t.map_indexed(|_, v| {
            (to_signed(v, bits).wrapping_add(d / 2).div_euclid(d) as u64) & mask(bits)
        })
    }
}

impl Backend for Fixed {
    type Tensor = RingTensor;

    fn shape<'t>(&self, t: &'t RingTensor) -> &'t [usize] {
        t.shape()
    }

    fn reshape(&self, t: &RingTensor, shape: Vec<usize>) -> Result<RingTensor> {
        t.clone().reshape(shape)
    }

    fn add(&self, a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
        a.add(b)
    }

    fn sub(&self, a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
        a.sub(b)
    }

    fn mul_int(&self, a: &RingTensor, k: i64) -> RingTensor {
        a.scale(k as u64)
    }

    fn div_int(&self, a: &RingTensor, d: u64) -> RingTensor {
        self.round_div(a, d)
    }

    fn scale(&self, a: &RingTensor, c: f64) -> Result<RingTensor> {
        let c = encode(&[c], vec![1], self.bits, self.precision)?.data()[0];
        Ok(self.round_div(&a.scale(c), scale(self.precision)))
    }

    fn transpose(&self, a: &RingTensor) -> Result<RingTensor> {
        let (d, s) = transpose_raw(a.data(), a.shape())?;
        self.ring(d, s)
    }

    fn add_channels(&self, y: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
        self.ring(
            add_channels_raw(y.data(), y.shape(), b.data())?,
            y.shape().to_vec(),
        )
    }

    fn sum_channels(&self, g: &RingTensor) -> Result<RingTensor> {
        let d = sum_channels_raw(g.data(), g.shape())?;
        let n = d.len();
        self.ring(d, vec![n])
    }

    fn gather_rows(&self, t: &RingTensor, rows: &[usize]) -> Result<RingTensor> {
        let (d, s) = gather_raw(t.data(), t.shape(), rows)?;
        self.ring(d, s)
    }

    fn bilinear(
        &mut self,
        items: &[(BilinearOp, &RingTensor, &RingTensor)],
    ) -> Result<Vec<RingTensor>> {
        let d = scale(self.precision);
        items
            .iter()
            .map(|(op, a, b)| Ok(self.round_div(&op.apply(a, b)?, d)))
            .collect()
    }

    fn relu(&mut self, x: &RingTensor) -> Result<(RingTensor, RingTensor)> {
        let bits = self.bits;
        let m = x.map_indexed(|_, v| (to_signed(v, bits) >= 0) as u64);
        let y = x.map_indexed(|_, v| if to_signed(v, bits) >= 0 { v } else { 0 });
        Ok((y, m))
    }

    fn gate(&mut self, mask: &RingTensor, g: &RingTensor) -> Result<RingTensor> {
        self.ring(
            mask.data()
                .iter()
                .zip(g.data())
                .map(|(&m, &v)| m.wrapping_mul(v))
                .collect(),
            g.shape().to_vec(),
        )
    }

    fn maxpool(
        &mut self,
        x: &RingTensor,
        kernel: usize,
        stride: usize,
    ) -> Result<(RingTensor, RingTensor)> {
        let g = pool_geom(x.shape(), kernel, stride)?;
        let kk = kernel * kernel;
        let signed: Vec<i64> = x.signed_values();
        let win = crate::beaver::unroll(x.data(), &g);
        let swin: Vec<i64> =
            crate::beaver::unroll(&signed.iter().map(|&v| v as u64).collect::<Vec<_>>(), &g)
                .into_iter()
                .map(|v| v as i64)
                .collect();
        let hot = window_onehot(&swin, kk);
        let y: Vec<u64> = win
            .chunks(kk)
            .zip(hot.chunks(kk))
            .map(|(w, h)| w[h.iter().position(|&b| b).unwrap_or(0)])
            .collect();
        let rows = win.len() / kk;
        Ok((
            self.ring(y, vec![x.shape()[0], x.shape()[1], g.out_h(), g.out_w()])?,
            self.ring(hot.iter().map(|&h| h as u64).collect(), vec![rows, kk])?,
        ))
    }

    fn unpool(
        &mut self,
        hot: &RingTensor,
        g: &RingTensor,
        input: &[usize],
        kernel: usize,
        stride: usize,
    ) -> Result<RingTensor> {
        let geom = pool_geom(input, kernel, stride)?;
        let s = spread(g.data(), kernel * kernel);
        let cols: Vec<u64> = hot
            .data()
            .iter()
            .zip(&s)
            .map(|(h, v)| h.wrapping_mul(*v))
            .collect();
        self.ring(fold(&cols, &geom), input.to_vec())
    }

    fn mse(&mut self, y: &RingTensor, t: &RingTensor) -> Result<f64> {
        let d = y.sub(t)?;
        let s = scale(self.precision) as f64;
        Ok(d.signed_values()
            .iter()
            .map(|&v| (v as f64 / s).powi(2))
            .sum::<f64>()
            / d.len() as f64)
    }
}

/// Secret shares held by one party of a live session. `k` is the
/// comparison domain width used by ReLU and pooling.
pub struct Private<'s> {
    pub sess: &'s mut Session,
    pub k: u32,
}

impl<'s> Private<'s> {
    pub fn new(sess: &'s mut Session, k: u32) -> Self {
        Self { sess, k }
    }

    fn share(
        &self,
        like: &AdditiveShare,
        data: Vec<u64>,
        shape: Vec<usize>,
    ) -> Result<AdditiveShare> {
        let m = mask(like.bits());
        let t = RingTensor::new(
            data.into_iter().map(|v| v & m).collect(),
            shape,
            like.bits(),
        )?;
        AdditiveShare::new(like.party, t, like.precision)
    }
}

fn op_tag(op: &BilinearOp) -> &'static str {
    match op {
        BilinearOp::Elementwise { .. } => "mul",
        BilinearOp::MatMul { .. } => "matmul",
        _ => "conv",
    }
}

impl Backend for Private<'_> {
    type Tensor = AdditiveShare;

    fn shape<'t>(&self, t: &'t AdditiveShare) -> &'t [usize] {
        t.shape()
    }

    fn reshape(&self, t: &AdditiveShare, shape: Vec<usize>) -> Result<AdditiveShare> {
        t.reshape(shape)
    }

    fn add(&self, a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
        a.add(b)
    }

    fn sub(&self, a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
        a.sub(b)
    }

    fn mul_int(&self, a: &AdditiveShare, k: i64) -> AdditiveShare {
        a.scale_int(k)
    }

    fn div_int(&self, a: &AdditiveShare, d: u64) -> AdditiveShare {
        a.div_public(d)
    }

    fn scale(&self, a: &AdditiveShare, c: f64) -> Result<AdditiveShare> {
        let p = a.precision;
        let c = encode(&[c], vec![1], a.bits(), p)?.data()[0];
        a.scale_int(c as i64).with_precision(2 * p).truncate(p)
    }

    fn transpose(&self, a: &AdditiveShare) -> Result<AdditiveShare> {
        let (d, s) = transpose_raw(a.value.data(), a.shape())?;
        self.share(a, d, s)
    }

    fn add_channels(&self, y: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
        if y.precision != b.precision {
            return Err(Error::PrecisionMismatch(y.precision, b.precision));
        }
        self.share(
            y,
            add_channels_raw(y.value.data(), y.shape(), b.value.data())?,
            y.shape().to_vec(),
        )
    }

    fn sum_channels(&self, g: &AdditiveShare) -> Result<AdditiveShare> {
        let d = sum_channels_raw(g.value.data(), g.shape())?;
        let n = d.len();
        self.share(g, d, vec![n])
    }

    fn gather_rows(&self, t: &AdditiveShare, rows: &[usize]) -> Result<AdditiveShare> {
        let (d, s) = gather_raw(t.value.data(), t.shape(), rows)?;
        self.share(t, d, s)
    }

    fn bilinear(
        &mut self,
        items: &[(BilinearOp, &AdditiveShare, &AdditiveShare)],
    ) -> Result<Vec<AdditiveShare>> {
        let tag = items.first().map(|(op, _, _)| op_tag(op)).unwrap_or("mul");
        let out = self.sess.scope(tag, |s| beaver_many(s, items))?;
        out.iter()
            .zip(items)
            .map(|(z, (_, x, y))| z.truncate(x.precision.min(y.precision)))
            .collect()
    }

    fn relu(&mut self, x: &AdditiveShare) -> Result<(AdditiveShare, AdditiveShare)> {
        let shape = x.shape().to_vec();
        let (y, m) = relu_with_mask(self.sess, &x.reshape(vec![x.len()])?, self.k)?;
        Ok((y.reshape(shape.clone())?, m.reshape(shape)?))
    }

    fn gate(&mut self, mask: &AdditiveShare, g: &AdditiveShare) -> Result<AdditiveShare> {
        let shape = g.shape().to_vec();
        let op = BilinearOp::Elementwise {
            shape: vec![g.len()],
        };
        let (m, v) = (mask.reshape(vec![mask.len()])?, g.reshape(vec![g.len()])?);
        self.sess
            .scope("mul", |s| beaver_op(s, &op, &m, &v))?
            .reshape(shape)
    }

    fn maxpool(
        &mut self,
        x: &AdditiveShare,
        kernel: usize,
        stride: usize,
    ) -> Result<(AdditiveShare, AdditiveShare)> {
        maxpool_with_mask(self.sess, x, kernel, stride, self.k)
    }

    fn unpool(
        &mut self,
        hot: &AdditiveShare,
        g: &AdditiveShare,
        input: &[usize],
        kernel: usize,
        stride: usize,
    ) -> Result<AdditiveShare> {
        let geom = pool_geom(input, kernel, stride)?;
        let s = self.share(
            g,
            spread(g.value.data(), kernel * kernel),
            hot.shape().to_vec(),
        )?;
        let cols = self.gate(hot, &s)?;
        self.share(g, fold(cols.value.data(), &geom), input.to_vec())
    }

    fn mse(&mut self, y: &AdditiveShare, t: &AdditiveShare) -> Result<f64> {
        let d = y.sub(t)?;
        let d = d.reshape(vec![d.len()])?;
        let op = BilinearOp::Elementwise {
            shape: vec![d.len()],
        };
        let sq = self.sess.scope("loss", |s| beaver_op(s, &op, &d, &d))?;
        let total = sq.value.data().iter().fold(0u64, |a, &v| a.wrapping_add(v));
        let total = self.share(&sq, vec![total], vec![1])?;
        let opened = self.sess.scope("loss", |s| s.reveal(&total))?;
        let v = to_signed(opened.data()[0], opened.bits()) as f64 / scale(sq.precision) as f64;
        Ok(v / d.len() as f64)
    }
}

/// One layer of a sequential model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// `[B, inputs] -> [B, outputs]`, weight `[inputs, outputs]`.
    Linear {
        inputs: usize,
        outputs: usize,
    },
    /// `[B, C, H, W] -> [B, O, Ho, Wo]`, weight `[O, C, k, k]`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// `[B, ...] -> [B, product]`.
    Flatten,
}

impl LayerSpec {
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => Some((vec![out_ch, in_ch, kernel, kernel], vec![out_ch])),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Linear { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => (in_ch * kernel * kernel, out_ch * kernel * kernel),
            _ => (0, 0),
        }
    }

    fn conv_geom(&self, x: &[usize]) -> Result<ConvGeom> {
        let LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } = *self
        else {
            return Err(Error::InvalidArgument("not a convolution".into()));
        };
        if x.len() != 4 || x[1] != in_ch {
            return Err(Error::Geometry(format!(
                "convolution over {in_ch} channels got {x:?}"
            )));
        }
        let g = ConvGeom {
            batch: x[0],
            in_ch,
            height: x[2],
            width: x[3],
            out_ch,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Architecture of a sequential model. `input` is the per-sample shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Fully connected network with ReLU between layers and none after the
    /// last one.
    pub fn mlp(sizes: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Linear {
                inputs: w[0],
                outputs: w[1],
            });
        }
        Self {
            input: vec![sizes[0]],
            layers,
        }
    }

    /// Shape after each layer for a batch of `batch` samples.
    pub fn shapes(&self, batch: usize) -> Result<Vec<Vec<usize>>> {
        let mut s = vec![batch];
        s.extend_from_slice(&self.input);
        let mut out = vec![s.clone()];
        for l in &self.layers {
            s = match *l {
                LayerSpec::Linear { inputs, outputs } => {
                    if s.len() != 2 || s[1] != inputs {
                        return Err(Error::Geometry(format!(
                            "linear layer over {inputs} inputs got {s:?}"
                        )));
                    }
                    vec![batch, outputs]
                }
                LayerSpec::Conv2d { .. } => l.conv_geom(&s)?.output_shape(),
                LayerSpec::Relu => s,
                LayerSpec::MaxPool { kernel, stride } => {
                    let g = pool_geom(&s, kernel, stride)?;
                    vec![s[0], s[1], g.out_h(), g.out_w()]
                }
                LayerSpec::Flatten => vec![batch, s[1..].iter().product()],
            };
            out.push(s.clone());
        }
        Ok(out)
    }

    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(&self, seed: u64) -> Result<Model<FloatTensor>> {
        self.shapes(1)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = self
            .layers
            .iter()
            .map(|l| {
                l.param_shapes().map(|(ws, bs)| {
                    let (fi, fo) = l.fans();
                    let limit = (6.0 / (fi + fo) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit);
                    let n = ws.iter().product();
                    let w = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    Params {
                        w: FloatTensor { data: w, shape: ws },
                        b: FloatTensor::zeros(bs),
                    }
                })
            })
            .collect();
        Ok(Model::new(self.clone(), params))
    }

    /// Preprocessing consumed by one forward pass, in consumption order.
    pub fn forward_plan(&self, batch: usize, bits: u32, k: u32) -> Result<PrepPlan> {
        let shapes = self.shapes(batch)?;
        let mut plan = PrepPlan::new();
        for (l, s) in self.layers.iter().zip(&shapes) {
            let len: usize = s.iter().product();
            match *l {
                LayerSpec::Linear { inputs, outputs } => plan.push(PrepItem::Triple {
                    op: BilinearOp::MatMul {
                        m: batch,
                        k: inputs,
                        n: outputs,
                    },
                    bits,
                }),
                LayerSpec::Conv2d { .. } => plan.push(PrepItem::Triple {
                    op: BilinearOp::Conv2d(l.conv_geom(s)?),
                    bits,
                }),
                LayerSpec::Relu => plan.extend(relu_plan(len, bits, k)?),
                LayerSpec::MaxPool { kernel, stride } => {
                    let g = pool_geom(s, kernel, stride)?;
                    plan.extend(maxpool_plan(g.batch * g.positions(), kernel, bits, k)?)
                }
                LayerSpec::Flatten => {}
            }
        }
        Ok(plan)
    }

    /// Preprocessing consumed by one backward pass.
    pub fn backward_plan(&self, batch: usize, bits: u32) -> Result<PrepPlan> {
        let shapes = self.shapes(batch)?;
        let mut plan = PrepPlan::new();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let s = &shapes[i];
            let out_len: usize = shapes[i + 1].iter().product();
            let needs_gx = self.layers[..i].iter().any(|l| l.param_shapes().is_some());
            match *l {
                LayerSpec::Linear { inputs, outputs } => {
                    plan.push(PrepItem::Triple {
                        op: BilinearOp::MatMul {
                            m: inputs,
                            k: batch,
                            n: outputs,
                        },
                        bits,
                    });
                    if needs_gx {
                        plan.push(PrepItem::Triple {
                            op: BilinearOp::MatMul {
                                m: batch,
                                k: outputs,
                                n: inputs,
                            },
                            bits,
                        });
                    }
                }
                LayerSpec::Conv2d { .. } => {
                    let g = l.conv_geom(s)?;
                    plan.push(PrepItem::Triple {
                        op: BilinearOp::ConvGradWeight(g),
                        bits,
                    });
                    if needs_gx {
                        plan.push(PrepItem::Triple {
                            op: BilinearOp::ConvGradInput(g),
                            bits,
                        });
                    }
                }
                LayerSpec::Relu if needs_gx => plan.push(PrepItem::Triple {
                    op: BilinearOp::Elementwise {
                        shape: vec![out_len],
                    },
                    bits,
                }),
                LayerSpec::MaxPool { kernel, .. } if needs_gx => plan.push(PrepItem::Triple {
                    op: BilinearOp::Elementwise {
                        shape: vec![out_len * kernel * kernel],
                    },
                    bits,
                }),
                _ => {}
            }
        }
        Ok(plan)
    }

    /// Preprocessing for one training step on a batch, including the loss
    /// reveal when `with_loss` is set.
    pub fn train_step_plan(
        &self,
        batch: usize,
        bits: u32,
        k: u32,
        with_loss: bool,
    ) -> Result<PrepPlan> {
        let mut plan = self.forward_plan(batch, bits, k)?;
        if with_loss {
            let out: usize = self
                .shapes(batch)?
                .last()
                .map(|s| s.iter().product())
                .unwrap_or(0);
            plan.push(PrepItem::Triple {
                op: BilinearOp::Elementwise { shape: vec![out] },
                bits,
            });
        }
        plan.extend(self.backward_plan(batch, bits)?);
        Ok(plan)
    }
}

/// Weight and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w: T,
    pub b: T,
}

/// A sequential model with its gradient and momentum slots.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: Vec<Option<Params<T>>>,
    pub grads: Vec<Option<Params<T>>>,
    pub velocity: Vec<Option<Params<T>>>,
    generation: u64,
}

impl<T> Model<T> {
    pub fn new(spec: ModelSpec, params: Vec<Option<Params<T>>>) -> Self {
        let n = params.len();
        Self {
            spec,
            params,
            grads: (0..n).map(|_| None).collect(),
            velocity: (0..n).map(|_| None).collect(),
            generation: 0,
        }
    }

    /// Converts every parameter, dropping gradients and momentum.
    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<Model<U>> {
        let params = self
            .params
            .iter()
            .map(|p| {
                p.as_ref()
                    .map(|p| {
                        Ok(Params {
                            w: f(&p.w)?,
                            b: f(&p.b)?,
                        })
                    })
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(Model::new(self.spec.clone(), params))
    }

    pub fn layer_params(&self) -> impl Iterator<Item = &Params<T>> {
        self.params.iter().flatten()
    }
}

impl Model<FloatTensor> {
    pub fn to_fixed(&self, bits: u32, precision: u32) -> Result<Model<RingTensor>> {
        self.try_map(|t| t.to_fixed(bits, precision))
    }
}

impl Model<RingTensor> {
    pub fn to_float(&self, precision: u32) -> Result<Model<FloatTensor>> {
        self.try_map(|t| Ok(FloatTensor::from_fixed(t, precision)))
    }

    /// Splits the model into one additively shared copy per party.
    pub fn share<R: rand::Rng + ?Sized>(
        &self,
        precision: u32,
        rng: &mut R,
    ) -> Result<[Model<AdditiveShare>; 2]> {
        let pairs = self.try_map(|t| Ok(AdditiveShare::share_ring(t, precision, rng)))?;
        Ok([
            pairs.try_map(|p| Ok(p[0].clone()))?,
            pairs.try_map(|p| Ok(p[1].clone()))?,
        ])
    }
}

/// Rebuilds the plaintext fixed-point model from both parties' copies.
pub fn reconstruct_model(
    a: &Model<AdditiveShare>,
    b: &Model<AdditiveShare>,
) -> Result<Model<RingTensor>> {
    let mut flat = b.layer_params().flat_map(|p| [&p.w, &p.b]);
    a.try_map(|x| {
        let y = flat
            .next()
            .ok_or_else(|| Error::InvalidArgument("models differ".into()))?;
        AdditiveShare::reconstruct_ring(x, y)
    })
}

#[derive(Debug, Clone)]
enum Saved<T> {
    Input(T),
    Mask(T),
    Pool { hot: T, input: Vec<usize> },
    Shape(Vec<usize>),
}

/// Forward intermediates needed by one backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    saved: Vec<Saved<T>>,
    generation: u64,
}

/// Runs the model on a batch `x` of shape `[B, ...input]`.
pub fn forward<B: Backend>(
    be: &mut B,
    model: &Model<B::Tensor>,
    x: &B::Tensor,
) -> Result<(B::Tensor, Tape<B::Tensor>)> {
    let mut h = x.clone();
    let mut saved = Vec::with_capacity(model.spec.layers.len());
    for (l, p) in model.spec.layers.iter().zip(&model.params) {
        let s = be.shape(&h).to_vec();
        match (l, p) {
            (LayerSpec::Linear { inputs, outputs }, Some(p)) => {
                if s.len() != 2 || s[1] != *inputs {
                    return Err(Error::Geometry(format!(
                        "linear layer over {inputs} inputs got {s:?}"
                    )));
                }
                let op = BilinearOp::MatMul {
                    m: s[0],
                    k: *inputs,
                    n: *outputs,
                };
                let y = be.bilinear(&[(op, &h, &p.w)])?.remove(0);
                let y = be.add_channels(&y, &p.b)?;
                saved.push(Saved::Input(std::mem::replace(&mut h, y)));
            }
            (LayerSpec::Conv2d { .. }, Some(p)) => {
                let op = BilinearOp::Conv2d(l.conv_geom(&s)?);
                let y = be.bilinear(&[(op, &h, &p.w)])?.remove(0);
                let y = be.add_channels(&y, &p.b)?;
                saved.push(Saved::Input(std::mem::replace(&mut h, y)));
            }
            (LayerSpec::Relu, None) => {
                let (y, m) = be.relu(&h)?;
                saved.push(Saved::Mask(m));
                h = y;
            }
            (LayerSpec::MaxPool { kernel, stride }, None) => {
                let (y, hot) = be.maxpool(&h, *kernel, *stride)?;
                saved.push(Saved::Pool { hot, input: s });
                h = y;
            }
            (LayerSpec::Flatten, None) => {
                h = be.reshape(&h, vec![s[0], s[1..].iter().product()])?;
                saved.push(Saved::Shape(s));
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "parameters do not match layer {l:?}"
                )))
            }
        }
    }
    Ok((
        h,
        Tape {
            saved,
            generation: model.generation,
        },
    ))
}

/// Inference only.
pub fn predict<B: Backend>(
    be: &mut B,
    model: &Model<B::Tensor>,
    x: &B::Tensor,
) -> Result<B::Tensor> {
    Ok(forward(be, model, x)?.0)
}

/// Gradient of the mean squared error with respect to `y`:
/// `2 (y - t) / len`, computed locally.
pub fn mse_grad<B: Backend>(be: &B, y: &B::Tensor, t: &B::Tensor) -> Result<B::Tensor> {
    let len: usize = be.shape(y).iter().product();
    Ok(be.div_int(&be.mul_int(&be.sub(y, t)?, 2), len as u64))
}

/// Fills the model's gradient slots from the output gradient. Consumes
/// the tape; a tape recorded before the last [`sgd_step`] is rejected.
pub fn backward<B: Backend>(
    be: &mut B,
    model: &mut Model<B::Tensor>,
    tape: Tape<B::Tensor>,
    grad: &B::Tensor,
) -> Result<()> {
    if tape.generation != model.generation {
        return Err(Error::InvalidArgument(
            "stale tape: parameters changed since the forward pass".into(),
        ));
    }
    if tape.saved.len() != model.spec.layers.len() {
        return Err(Error::InvalidArgument(
            "tape does not match the model".into(),
        ));
    }
    let mut g = grad.clone();
    for (i, saved) in tape.saved.into_iter().enumerate().rev() {
        let needs_gx = model.params[..i].iter().any(|p| p.is_some());
        let layer = model.spec.layers[i].clone();
        match (saved, &layer) {
            (Saved::Input(x), LayerSpec::Linear { inputs, outputs }) => {
                let p = model.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing weights".into()))?;
                let batch = be.shape(&x)[0];
                let xt = be.transpose(&x)?;
                let gw_op = BilinearOp::MatMul {
                    m: *inputs,
                    k: batch,
                    n: *outputs,
                };
                let gb = be.sum_channels(&g)?;
                let mut out = if needs_gx {
                    let wt = be.transpose(&p.w)?;
                    let gx_op = BilinearOp::MatMul {
                        m: batch,
                        k: *outputs,
                        n: *inputs,
                    };
                    be.bilinear(&[(gw_op, &xt, &g), (gx_op, &g, &wt)])?
                } else {
                    be.bilinear(&[(gw_op, &xt, &g)])?
                };
                if needs_gx {
                    g = out.pop().expect("input gradient");
                }
                model.grads[i] = Some(Params {
                    w: out.remove(0),
                    b: gb,
                });
            }
            (Saved::Input(x), LayerSpec::Conv2d { .. }) => {
                let p = model.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing weights".into()))?;
                let geom = layer.conv_geom(be.shape(&x))?;
                let gb = be.sum_channels(&g)?;
                let mut out = if needs_gx {
                    be.bilinear(&[
                        (BilinearOp::ConvGradWeight(geom), &g, &x),
                        (BilinearOp::ConvGradInput(geom), &g, &p.w),
                    ])?
                } else {
                    be.bilinear(&[(BilinearOp::ConvGradWeight(geom), &g, &x)])?
                };
                if needs_gx {
                    g = out.pop().expect("input gradient");
                }
                model.grads[i] = Some(Params {
                    w: out.remove(0),
                    b: gb,
                });
            }
            (Saved::Mask(m), LayerSpec::Relu) => {
                if needs_gx {
                    g = be.gate(&m, &g)?;
                }
            }
            (Saved::Pool { hot, input }, LayerSpec::MaxPool { kernel, stride }) => {
                if needs_gx {
                    g = be.unpool(&hot, &g, &input, *kernel, *stride)?;
                }
            }
            (Saved::Shape(s), LayerSpec::Flatten) => {
                g = be.reshape(&g, s)?;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "tape does not match the model".into(),
                ))
            }
        }
    }
    Ok(())
}

/// `v <- momentum * v + g; w <- w - lr * v`. Local only.
pub fn sgd_step<B: Backend>(
    be: &B,
    model: &mut Model<B::Tensor>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    for i in 0..model.params.len() {
        let Some(p) = model.params[i].as_mut() else {
            continue;
        };
        let g = model.grads[i]
            .take()
            .ok_or_else(|| Error::InvalidArgument("gradients not populated".into()))?;
        let v = match model.velocity[i].take() {
            Some(v) if momentum != 0.0 => Params {
                w: be.add(&be.scale(&v.w, momentum)?, &g.w)?,
                b: be.add(&be.scale(&v.b, momentum)?, &g.b)?,
            },
            _ => g,
        };
        p.w = be.sub(&p.w, &be.scale(&v.w, lr)?)?;
        p.b = be.sub(&p.b, &be.scale(&v.b, lr)?)?;
        if momentum != 0.0 {
            model.velocity[i] = Some(v);
        }
    }
    model.generation += 1;
    Ok(())
}

/// Training hyperparameters. Batches are drawn in an order fixed by
/// `shuffle_seed`, which is public.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
    /// Reveal the mean loss once per epoch. Off by default.
    pub allow_loss_reveal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr: 0.1,
            momentum: 0.0,
            shuffle_seed: 0,
            allow_loss_reveal: false,
        }
    }
}

impl TrainConfig {
    /// Row indices of every batch, epoch by epoch.
    pub fn schedule(&self, n: usize) -> Vec<Vec<Vec<usize>>> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.shuffle_seed);
        let bs = self.batch_size.max(1);
        (0..self.epochs)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                idx.chunks(bs).map(|c| c.to_vec()).collect()
            })
            .collect()
    }

    /// Preprocessing for the whole run, batch by batch.
    pub fn plan_batches(
        &self,
        spec: &ModelSpec,
        n: usize,
        bits: u32,
        k: u32,
    ) -> Result<Vec<PrepPlan>> {
        let mut out = Vec::new();
        for epoch in self.schedule(n) {
            let last = epoch.len().saturating_sub(1);
            for (j, b) in epoch.iter().enumerate() {
                out.push(spec.train_step_plan(
                    b.len(),
                    bits,
                    k,
                    self.allow_loss_reveal && j == last,
                )?);
            }
        }
        Ok(out)
    }
}

/// Trains on `x` `[N, ...]` against targets `y` `[N, out]`. Returns the
/// loss of the last batch of each epoch if the configuration allows
/// revealing it, otherwise an empty vector.
pub fn train<B: Backend>(
    be: &mut B,
    model: &mut Model<B::Tensor>,
    x: &B::Tensor,
    y: &B::Tensor,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let n = be.shape(x)[0];
    if be.shape(y)[0] != n {
        return Err(Error::ShapeMismatch(
            be.shape(x).to_vec(),
            be.shape(y).to_vec(),
        ));
    }
    let mut losses = Vec::new();
    for epoch in cfg.schedule(n) {
        let last = epoch.len().saturating_sub(1);
        for (j, rows) in epoch.iter().enumerate() {
            let xb = be.gather_rows(x, rows)?;
            let yb = be.gather_rows(y, rows)?;
            let (pred, tape) = forward(be, model, &xb)?;
            if cfg.allow_loss_reveal && j == last {
                losses.push(be.mse(&pred, &yb)?);
            }
            let g = mse_grad(be, &pred, &yb)?;
            backward(be, model, tape, &g)?;
            sgd_step(be, model, cfg.lr, cfg.momentum)?;
        }
    }
    Ok(losses)
}

/// Settings of a private run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivateConfig {
    pub bits: u32,
    pub precision: u32,
    /// Comparison domain width.
    pub k: u32,
    pub dealer_seed: u64,
    pub share_seed: u64,
}

impl Default for PrivateConfig {
    fn default() -> Self {
        Self {
            bits: 64,
            precision: 3,
            k: 32,
            dealer_seed: 1,
            share_seed: 2,
        }
    }
}

/// Result of a private training run.
#[derive(Debug)]
pub struct PrivateRun {
    pub model: Model<RingTensor>,
    pub losses: Vec<f64>,
    pub ledgers: [RoundLedger; 2],
}

/// Result of training on shares that stay shared.
#[derive(Debug)]
pub struct SharedRun {
    pub models: [Model<AdditiveShare>; 2],
    pub losses: Vec<f64>,
    pub ledgers: [RoundLedger; 2],
}

/// Trains already-shared models on shared data with two in-process
/// parties. A dealer thread streams each batch's preprocessing ahead of
/// the parties through a bounded queue. Nothing is reconstructed.
pub fn train_shared(
    models: [Model<AdditiveShare>; 2],
    xs: &[AdditiveShare; 2],
    ys: &[AdditiveShare; 2],
    cfg: &TrainConfig,
    pc: &PrivateConfig,
) -> Result<SharedRun> {
    let plans = cfg.plan_batches(&models[0].spec, xs[0].shape()[0], pc.bits, pc.k)?;
    let (tx0, rx0) = sync_channel(2);
    let (tx1, rx1) = sync_channel(2);
    let seed = pc.dealer_seed;
    let dealer = std::thread::spawn(move || -> Result<()> {
        let mut d = Dealer::new(seed);
        for plan in &plans {
            let [b0, b1] = d.deal(plan)?;
            if tx0.send(b0).is_err() || tx1.send(b1).is_err() {
                break;
            }
        }
        Ok(())
    });
    let timeout = crate::runtime::timeout_from_env();
    let stores = [
        PrepStore::new(0, PrepSource::Stream(rx0, timeout)),
        PrepStore::new(1, PrepSource::Stream(rx1, timeout)),
    ];
    let mut sessions = Session::local_pair_from(stores, timeout)?;
    let [m0, m1] = models;
    let slots = [Mutex::new(Some(m0)), Mutex::new(Some(m1))];
    let result = run_pair(&mut sessions, |sess| {
        let p = sess.party();
        let mut m = slots[p].lock().expect("model lock").take().expect("model");
        let mut be = Private::new(sess, pc.k);
        let losses = train(&mut be, &mut m, &xs[p], &ys[p], cfg)?;
        Ok((m, losses))
    });
    let dealer_result = dealer
        .join()
        .map_err(|_| Error::Transport("dealer thread panicked".into()))?;
    let ((m0, losses), (m1, _)) = result?;
    dealer_result?;
    let ledgers = [sessions[0].ledger().clone(), sessions[1].ledger().clone()];
    Ok(SharedRun {
        models: [m0, m1],
        losses,
        ledgers,
    })
}

/// Shares model and data, trains privately and reconstructs the result.
pub fn train_private(
    model: &Model<RingTensor>,
    x: &RingTensor,
    y: &RingTensor,
    cfg: &TrainConfig,
    pc: &PrivateConfig,
) -> Result<PrivateRun> {
    let mut rng = ChaCha20Rng::seed_from_u64(pc.share_seed);
    let models = model.share(pc.precision, &mut rng)?;
    let xs = AdditiveShare::share_ring(x, pc.precision, &mut rng);
    let ys = AdditiveShare::share_ring(y, pc.precision, &mut rng);
    let run = train_shared(models, &xs, &ys, cfg, pc)?;
    let [m0, m1] = &run.models;
    Ok(PrivateRun {
        model: reconstruct_model(m0, m1)?,
        losses: run.losses,
        ledgers: run.ledgers,
    })
}

/// Evaluates a fixed-point model privately on `x` and returns the
/// reconstructed outputs together with party 0's ledger.
pub fn predict_private(
    model: &Model<RingTensor>,
    x: &RingTensor,
    pc: &PrivateConfig,
) -> Result<(RingTensor, RoundLedger)> {
    let mut rng = ChaCha20Rng::seed_from_u64(pc.share_seed);
    let models = model.share(pc.precision, &mut rng)?;
    let xs = AdditiveShare::share_ring(x, pc.precision, &mut rng);
    let plan = model.spec.forward_plan(x.shape()[0], pc.bits, pc.k)?;
    let [b0, b1] = Dealer::new(pc.dealer_seed).deal(&plan)?;
    let stores = [PrepStore::preloaded(0, b0), PrepStore::preloaded(1, b1)];
    let mut sessions = Session::local_pair_from(stores, crate::runtime::timeout_from_env())?;
    let (y0, y1) = run_pair(&mut sessions, |sess| {
        let p = sess.party();
        let mut be = Private::new(sess, pc.k);
        predict(&mut be, &models[p], &xs[p])
    })?;
    Ok((
        AdditiveShare::reconstruct_ring(&y0, &y1)?,
        sessions[0].ledger().clone(),
    ))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ARNC";
const CHECKPOINT_VERSION: u8 = 1;

/// Serializes one party's model copy: magic, version, party, ring width,
/// precision, spec as length-prefixed JSON, then every parameter tensor
/// as little-endian ring elements.
pub fn checkpoint_bytes(model: &Model<AdditiveShare>) -> Result<Vec<u8>> {
    let first = model
        .layer_params()
        .next()
        .ok_or_else(|| Error::InvalidArgument("model has no parameters".into()))?;
    let (party, bits, precision) = (first.w.party, first.w.bits(), first.w.precision);
    let spec = serde_json::to_vec(&model.spec).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&[CHECKPOINT_VERSION, party as u8, bits as u8, precision as u8]);
    put_uint(&mut buf, spec.len() as u64, 4);
    buf.extend_from_slice(&spec);
    for p in model.layer_params() {
        for t in [&p.w, &p.b] {
            if t.party != party || t.bits() != bits || t.precision != precision {
                return Err(Error::InvalidArgument(
                    "parameters disagree on party, width or precision".into(),
                ));
            }
            for &v in t.value.data() {
                put_uint(&mut buf, v, 8);
            }
        }
    }
    Ok(buf)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model<AdditiveShare>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let head = r.take(4)?;
    if head[0] != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            head[0]
        )));
    }
    let (party, bits, precision) = (head[1] as usize, head[2] as u32, head[3] as u32);
    let len = r.uint(4)? as usize;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
    spec.shapes(1)?;
    let mut params = Vec::new();
    for l in &spec.layers {
        params.push(match l.param_shapes() {
            Some((ws, bs)) => {
                let mut read = |shape: Vec<usize>| -> Result<AdditiveShare> {
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| r.masked(8, bits))
                        .collect::<Result<Vec<_>>>()?;
                    AdditiveShare::new(party, RingTensor::new(data, shape, bits)?, precision)
                };
                Some(Params {
                    w: read(ws)?,
                    b: read(bs)?,
                })
            }
            None => None,
        });
    }
    r.finish()?;
    Ok(Model::new(spec, params))
}

pub fn save_checkpoint(path: &Path, model: &Model<AdditiveShare>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<AdditiveShare>> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Predicted class per row: argmax for several outputs, `y > 0.5` for one.
pub fn classes(y: &[f64], outputs: usize) -> Vec<usize> {
    if outputs == 1 {
        return y.iter().map(|&v| (v > 0.5) as usize).collect();
    }
    y.chunks(outputs)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > r[best] { j } else { best })
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}
