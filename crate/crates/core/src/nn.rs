//! Private layer protocols built from comparison, equality and Beaver
//! multiplication.
//!
//! Every function takes the comparison domain width `k` separately from
//! the arithmetic ring width of its input: comparisons mask into `Z_2^k`
//! and return shares in the input's ring.

use rand::Rng;

use crate::beaver::{beaver_many, beaver_op, unroll, BilinearOp, ConvGeom};
use crate::error::{Error, Result};
use crate::fss::{eq_protocol, sign_protocol, FssParams};
use crate::ring::{mask, RingTensor};
use crate::runtime::{PrepItem, PrepPlan, Session};
use crate::sharing::AdditiveShare;

/// Resolution of the public threshold used to break ties.
pub const TIE_RESOLUTION: u64 = 1 << 12;

fn flat(x: &AdditiveShare) -> Result<AdditiveShare> {
    x.reshape(vec![x.len()])
}

fn bit_share(party: usize, t: RingTensor) -> Result<AdditiveShare> {
    AdditiveShare::new(party, t, 0)
}

/// Shares of `1[x <= 0]` at precision 0.
pub fn sign(sess: &mut Session, x: &AdditiveShare, k: u32) -> Result<AdditiveShare> {
    let s = sess.scope("comparison", |s| sign_protocol(s, &x.value, k))?;
    bit_share(x.party, s)
}

/// Elementwise product of a 0/1 share with a value share. No truncation is
/// needed since the selector has precision 0.
fn select(sess: &mut Session, bits: &AdditiveShare, x: &AdditiveShare) -> Result<AdditiveShare> {
    let shape = x.shape().to_vec();
    let op = BilinearOp::Elementwise {
        shape: vec![x.len()],
    };
    beaver_op(sess, &op, &flat(bits)?, &flat(x)?)?.reshape(shape)
}

/// ReLU with its derivative mask. Two rounds: one comparison round giving
/// `b = 1 - 1[x <= -1]` (so `ReLU(0) = 0`), one multiplication `b * x`.
pub fn relu_with_mask(
    sess: &mut Session,
    x: &AdditiveShare,
    k: u32,
) -> Result<(AdditiveShare, AdditiveShare)> {
    sess.scope("relu", |sess| {
        let neg = sign(sess, &x.add_scalar(1), k)?;
        let b = neg.neg().add_scalar(1);
        let y = select(sess, &b, x)?;
        Ok((y, b))
    })
}

pub fn relu(sess: &mut Session, x: &AdditiveShare, k: u32) -> Result<AdditiveShare> {
    Ok(relu_with_mask(sess, x, k)?.0)
}

/// Preprocessing for a ReLU on `len` elements of `Z_2^n_bits`.
pub fn relu_plan(len: usize, n_bits: u32, k: u32) -> Result<PrepPlan> {
    Ok(PrepPlan {
        items: vec![
            PrepItem::Cmp {
                params: FssParams::new(k, n_bits)?,
                count: len,
            },
            PrepItem::Triple {
                op: BilinearOp::Elementwise { shape: vec![len] },
                bits: n_bits,
            },
        ],
    })
}

fn rows_cols(x: &AdditiveShare) -> Result<(usize, usize)> {
    match x.shape() {
        [m] => Ok((1, *m)),
        [r, m] => Ok((*r, *m)),
        s => Err(Error::ShapeMismatch(s.to_vec(), vec![0, 0])),
    }
}

/// Multi-hot indicator of the row maxima of `[rows, m]` (or `[m]`) logits.
/// Tied maxima are all flagged. Two rounds: all `m(m-1)` pairwise
/// comparisons per row in one message, then `m` equality tests per row.
pub fn argmax(sess: &mut Session, x: &AdditiveShare, k: u32) -> Result<AdditiveShare> {
    let (rows, m) = rows_cols(x)?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "argmax needs at least 2 entries, got {m}"
        )));
    }
    sess.scope("argmax", |sess| {
        let bits = x.bits();
        let mk = mask(bits);
        let d = x.value.data();
        // diffs[r][j][i'] = x_i - x_j for i != j
        let mut diffs = Vec::with_capacity(rows * m * (m - 1));
        for r in 0..rows {
            let row = &d[r * m..(r + 1) * m];
            for j in 0..m {
                for i in (0..m).filter(|&i| i != j) {
                    diffs.push(row[i].wrapping_sub(row[j]) & mk);
                }
            }
        }
        let diffs = AdditiveShare::new(
            x.party,
            RingTensor::new(diffs, vec![rows * m * (m - 1)], bits)?,
            x.precision,
        )?;
        let c = sign(sess, &diffs, k)?;
        let target = (m - 1) as u64;
        let counts: Vec<u64> = c
            .value
            .data()
            .chunks(m - 1)
            .map(|ch| {
                let s = ch.iter().fold(0u64, |a, &v| a.wrapping_add(v));
                if x.party == 0 {
                    s.wrapping_sub(target) & mk
                } else {
                    s
                }
            })
            .collect();
        let counts = RingTensor::new(counts, vec![rows * m], bits)?;
        let hot = sess.scope("equality", |s| eq_protocol(s, &counts, k))?;
        bit_share(x.party, hot.reshape(x.shape().to_vec())?)
    })
}

pub fn argmax_plan(rows: usize, m: usize, n_bits: u32, k: u32) -> Result<PrepPlan> {
    let params = FssParams::new(k, n_bits)?;
    Ok(PrepPlan {
        items: vec![
            PrepItem::Cmp {
                params,
                count: rows * m * (m - 1),
            },
            PrepItem::Eq {
                params,
                count: rows * m,
            },
        ],
    })
}

/// Reduces each row of a 0/1 share to a single 1 chosen uniformly among
/// the flagged positions. One comparison round.
///
/// A public coin `u` in `[0, S)` per row sets the threshold `u * total / S`;
/// position `i` is kept when its prefix count first exceeds it. The
/// comparison `cumsum_i * S - u * total <= 0` is linear in the shares. Rows
/// with no flagged entry come out all zero.
pub fn break_ties(sess: &mut Session, delta: &AdditiveShare, k: u32) -> Result<AdditiveShare> {
    let (rows, m) = rows_cols(delta)?;
    sess.scope("break_ties", |sess| {
        let bits = delta.bits();
        let mk = mask(bits);
        let coins = sess.take_coins(rows, TIE_RESOLUTION)?;
        let d = delta.value.data();
        let mut lin = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let row = &d[r * m..(r + 1) * m];
            let total = row.iter().fold(0u64, |a, &v| a.wrapping_add(v));
            let mut acc = 0u64;
            for &v in row {
                acc = acc.wrapping_add(v);
                lin.push(
                    acc.wrapping_mul(TIE_RESOLUTION)
                        .wrapping_sub(coins[r].wrapping_mul(total))
                        & mk,
                );
            }
        }
        let lin = AdditiveShare::new(delta.party, RingTensor::new(lin, vec![rows * m], bits)?, 0)?;
        let le = sign(sess, &lin, k)?;
        // c_i = 1 - le_i, out_i = c_i - c_{i-1}
        let c = le.neg().add_scalar(1);
        let cv = c.value.data();
        let out: Vec<u64> = (0..rows * m)
            .map(|i| {
                if i % m == 0 {
                    cv[i]
                } else {
                    cv[i].wrapping_sub(cv[i - 1]) & mk
                }
            })
            .collect();
        bit_share(
            delta.party,
            RingTensor::new(out, delta.shape().to_vec(), bits)?,
        )
    })
}

pub fn break_ties_plan(rows: usize, m: usize, n_bits: u32, k: u32) -> Result<PrepPlan> {
    Ok(PrepPlan {
        items: vec![
            PrepItem::Coins {
                count: rows,
                bound: TIE_RESOLUTION,
            },
            PrepItem::Cmp {
                params: FssParams::new(k, n_bits)?,
                count: rows * m,
            },
        ],
    })
}

/// Plaintext tie breaking with the same threshold rule.
pub fn break_ties_plain<R: Rng + ?Sized>(delta: &[u64], rng: &mut R) -> Result<Vec<u64>> {
    let total: u64 = delta.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no candidate to select".into()));
    }
    if delta.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("entries must be 0 or 1".into()));
    }
    let u = rng.gen_range(0..TIE_RESOLUTION);
    let mut acc = 0u64;
    let mut prev = 0u64;
    Ok(delta
        .iter()
        .map(|&v| {
            acc += v;
            let c = (acc * TIE_RESOLUTION > u * total) as u64;
            let o = c - prev;
            prev = c;
            o
        })
        .collect())
}

/// Pooling windows of `[B, C, H, W]` as rows of `[B * C * P, k * k]`.
fn windows(
    x: &AdditiveShare,
    kernel: usize,
    stride: usize,
) -> Result<(AdditiveShare, ConvGeom, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Geometry(format!(
            "pooling expects [B, C, H, W], got {s:?}"
        )));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
        return Err(Error::Geometry(format!(
            "kernel {kernel} stride {stride} on {h}x{w}"
        )));
    }
    let g = ConvGeom {
        batch: b * c,
        in_ch: 1,
        height: h,
        width: w,
        out_ch: 1,
        kernel_h: kernel,
        kernel_w: kernel,
        stride,
        padding: 0,
    };
    let rows = b * c * g.positions();
    let win = RingTensor::new(
        unroll(x.value.data(), &g),
        vec![rows, kernel * kernel],
        x.bits(),
    )?;
    let out_shape = vec![b, c, g.out_h(), g.out_w()];
    Ok((AdditiveShare::new(x.party, win, x.precision)?, g, out_shape))
}

/// Max pooling via per-window argmax. Three rounds.
///
/// Each window entry is scaled by `k^2` and offset by its index before the
/// argmax, which makes every window's maximum unique without changing the
/// pooled value; the one-hot result then selects from the original window.
/// Returns the pooled share and the one-hot selector `[windows, k^2]`.
pub fn maxpool_with_mask(
    sess: &mut Session,
    x: &AdditiveShare,
    kernel: usize,
    stride: usize,
    k: u32,
) -> Result<(AdditiveShare, AdditiveShare)> {
    let (win, _, out_shape) = windows(x, kernel, stride)?;
    let kk = kernel * kernel;
    sess.scope("maxpool", |sess| {
        let mk = mask(x.bits());
        let keyed = win.scale_int(kk as i64);
        let keyed = if x.party == 0 {
            keyed
                .value
                .map_indexed(|i, v| v.wrapping_add((i % kk) as u64) & mk)
        } else {
            keyed.value
        };
        let keyed = AdditiveShare::new(x.party, keyed, x.precision)?;
        let hot = argmax(sess, &keyed, k)?;
        let picked = select(sess, &hot, &win)?;
        let sums: Vec<u64> = picked
            .value
            .data()
            .chunks(kk)
            .map(|ch| ch.iter().fold(0u64, |a, &v| a.wrapping_add(v)) & mk)
            .collect();
        let y = AdditiveShare::new(
            x.party,
            RingTensor::new(sums, out_shape, x.bits())?,
            x.precision,
        )?;
        Ok((y, hot))
    })
}

pub fn maxpool(
    sess: &mut Session,
    x: &AdditiveShare,
    kernel: usize,
    stride: usize,
    k: u32,
) -> Result<AdditiveShare> {
    Ok(maxpool_with_mask(sess, x, kernel, stride, k)?.0)
}

pub fn maxpool_plan(windows: usize, kernel: usize, n_bits: u32, k: u32) -> Result<PrepPlan> {
    let kk = kernel * kernel;
    let mut plan = argmax_plan(windows, kk, n_bits, k)?;
    plan.push(PrepItem::Triple {
        op: BilinearOp::Elementwise {
            shape: vec![windows * kk],
        },
        bits: n_bits,
    });
    Ok(plan)
}

fn column(x: &AdditiveShare, cols: usize, j: usize) -> Result<AdditiveShare> {
    let d = x.value.data();
    let rows = d.len() / cols;
    let v: Vec<u64> = (0..rows).map(|r| d[r * cols + j]).collect();
    AdditiveShare::new(
        x.party,
        RingTensor::new(v, vec![rows], x.bits())?,
        x.precision,
    )
}

fn concat(parts: &[AdditiveShare]) -> Result<AdditiveShare> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let data: Vec<u64> = parts.iter().flat_map(|p| p.value.data().to_vec()).collect();
    let len = data.len();
    AdditiveShare::new(
        first.party,
        RingTensor::new(data, vec![len], first.bits())?,
        first.precision,
    )
}

fn split(x: &AdditiveShare, parts: usize) -> Result<Vec<AdditiveShare>> {
    let n = x.len() / parts;
    (0..parts)
        .map(|i| {
            let v = x.value.data()[i * n..(i + 1) * n].to_vec();
            AdditiveShare::new(x.party, RingTensor::new(v, vec![n], x.bits())?, x.precision)
        })
        .collect()
}

/// 2x2 max pooling by a two-level tournament, `max(a, b) = b + ReLU(a - b)`.
/// Four rounds and three comparisons per window.
pub fn maxpool_k2(
    sess: &mut Session,
    x: &AdditiveShare,
    stride: usize,
    k: u32,
) -> Result<AdditiveShare> {
    let (win, _, out_shape) = windows(x, 2, stride)?;
    sess.scope("maxpool_k2", |sess| {
        let c: Vec<AdditiveShare> = (0..4).map(|j| column(&win, 4, j)).collect::<Result<_>>()?;
        // level 1: both pairs in one ReLU call
        let a = concat(&[c[0].clone(), c[2].clone()])?;
        let b = concat(&[c[1].clone(), c[3].clone()])?;
        let m1 = b.add(&relu(sess, &a.sub(&b)?, k)?)?;
        let halves = split(&m1, 2)?;
        let top = halves[1].add(&relu(sess, &halves[0].sub(&halves[1])?, k)?)?;
        top.reshape(out_shape)
    })
}

/// Plaintext max pooling over `[B, C, H, W]` signed values.
pub fn maxpool_plain(
    x: &[i64],
    shape: &[usize],
    kernel: usize,
    stride: usize,
) -> (Vec<i64>, Vec<usize>) {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for bc in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = i64::MIN;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        m = m.max(x[(bc * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, vec![b, c, oh, ow])
}

/// Iteration schedule for the inverse square root used by batch norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonPolicy {
    pub cold_iters: usize,
    pub warm_iters: usize,
    pub first_layer_iters: usize,
    pub last_layer_iters: usize,
    pub c: u64,
    /// Cold-start guess; needs `v * theta0^2 < C + 1` to converge.
    pub theta0: f64,
}

impl Default for NewtonPolicy {
    fn default() -> Self {
        Self {
            cold_iters: 50,
            warm_iters: 3,
            first_layer_iters: 60,
            last_layer_iters: 10,
            c: 6,
            theta0: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPosition {
    First,
    Middle,
    Last,
}

impl NewtonPolicy {
    /// Iterations for a layer, depending on whether a warm start exists.
    pub fn iters(&self, position: LayerPosition, warm: bool) -> usize {
        match (position, warm) {
            (_, true) => self.warm_iters,
            (LayerPosition::First, false) => self.first_layer_iters,
            (LayerPosition::Last, false) => self.last_layer_iters,
            (LayerPosition::Middle, false) => self.cold_iters,
        }
    }
}

/// Newton iteration for `1 / sqrt(v)`:
/// `theta' = (theta * (C + 1) - v * theta^3) / C`.
///
/// Each iteration multiplies `v * theta` and `theta^2` in one round and
/// their product in a second, so it costs two rounds and three products.
pub fn inv_sqrt_newton(
    sess: &mut Session,
    v: &AdditiveShare,
    theta0: &AdditiveShare,
    iters: usize,
    c: u64,
) -> Result<AdditiveShare> {
    if iters == 0 || c == 0 {
        return Err(Error::InvalidArgument(
            "Newton needs iters >= 1 and C >= 1".into(),
        ));
    }
    if v.shape() != theta0.shape() || v.precision != theta0.precision {
        return Err(Error::ShapeMismatch(
            v.shape().to_vec(),
            theta0.shape().to_vec(),
        ));
    }
    let p = v.precision;
    let op = BilinearOp::Elementwise {
        shape: vec![v.len()],
    };
    let vf = flat(v)?;
    sess.scope("inv_sqrt", |sess| {
        let mut theta = flat(theta0)?;
        for _ in 0..iters {
            let r = beaver_many(
                sess,
                &[(op.clone(), &vf, &theta), (op.clone(), &theta, &theta)],
            )?;
            let vt = r[0].truncate(p)?;
            let t2 = r[1].truncate(p)?;
            let vt3 = beaver_op(sess, &op, &vt, &t2)?.truncate(p)?;
            theta = theta.scale_int(c as i64 + 1).sub(&vt3)?.div_public(c);
        }
        theta.reshape(v.shape().to_vec())
    })
}

/// Running state of one batch-norm layer: the last `theta` for warm starts.
#[derive(Debug, Clone, Default)]
pub struct BatchNormState {
    pub theta: Option<AdditiveShare>,
}

/// Per-channel statistics axis: `[B, F]` normalizes each feature,
/// `[B, C, H, W]` each channel over batch and space.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, f] => Ok((*b, *f, 1)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        s => Err(Error::ShapeMismatch(s.to_vec(), vec![0, 0])),
    }
}

/// Batch normalization `gamma * theta * (x - mu) + beta` with
/// `theta ~ 1 / sqrt(var + eps)` from Newton's method.
///
/// The mean and the variance's division by the element count are local
/// divisions by a public integer; the variance square is one round, the
/// Newton schedule two rounds per iteration, then two more rounds apply
/// `theta` and `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    sess: &mut Session,
    x: &AdditiveShare,
    gamma: &AdditiveShare,
    beta: &AdditiveShare,
    eps: f64,
    policy: &NewtonPolicy,
    position: LayerPosition,
    state: &mut BatchNormState,
) -> Result<AdditiveShare> {
    let (b, ch, sp) = channel_layout(x.shape())?;
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if gamma.len() != ch || beta.len() != ch {
        return Err(Error::ShapeMismatch(vec![ch], gamma.shape().to_vec()));
    }
    let p = x.precision;
    let bits = x.bits();
    let mk = mask(bits);
    let count = (b * sp) as u64;
    let chan = |i: usize| (i / sp) % ch;
    sess.scope("batchnorm", |sess| {
        let d = x.value.data();
        let mut sums = vec![0u64; ch];
        for (i, &v) in d.iter().enumerate() {
            sums[chan(i)] = sums[chan(i)].wrapping_add(v);
        }
        let mu = AdditiveShare::new(x.party, RingTensor::new(sums, vec![ch], bits)?, p)?
            .div_public(count);
        let mu_b = broadcast(&mu, x.shape(), sp)?;
        let centered = x.sub(&mu_b)?;
        let op = BilinearOp::Elementwise {
            shape: vec![x.len()],
        };
        let cf = flat(&centered)?;
        let sq = beaver_op(sess, &op, &cf, &cf)?.truncate(p)?;
        let mut vs = vec![0u64; ch];
        for (i, &v) in sq.value.data().iter().enumerate() {
            vs[chan(i)] = vs[chan(i)].wrapping_add(v);
        }
        let var =
            AdditiveShare::new(x.party, RingTensor::new(vs, vec![ch], bits)?, p)?.div_public(count);
        let eps_enc = ((eps * 10f64.powi(p as i32)).round() as i64).max(1);
        let v = var.add_scalar(eps_enc);

        let warm = state.theta.as_ref().filter(|t| t.shape() == [ch]).cloned();
        let iters = policy.iters(position, warm.is_some());
        let theta0 = match warm {
            Some(t) => t,
            None => {
                let t0 = RingTensor::new(
                    vec![((policy.theta0 * 10f64.powi(p as i32)).round() as i64 as u64) & mk; ch],
                    vec![ch],
                    bits,
                )?;
                AdditiveShare::from_public(x.party, &t0, p)?
            }
        };
        let theta = inv_sqrt_newton(sess, &v, &theta0, iters, policy.c)?;
        state.theta = Some(theta.clone());

        let theta_b = flat(&broadcast(&theta, x.shape(), sp)?)?;
        let normed = beaver_op(sess, &op, &cf, &theta_b)?.truncate(p)?;
        let gamma_b = flat(&broadcast(gamma, x.shape(), sp)?)?;
        let scaled = beaver_op(sess, &op, &normed, &gamma_b)?.truncate(p)?;
        let beta_b = flat(&broadcast(beta, x.shape(), sp)?)?;
        scaled.add(&beta_b)?.reshape(x.shape().to_vec())
    })
}

fn broadcast(per_channel: &AdditiveShare, shape: &[usize], sp: usize) -> Result<AdditiveShare> {
    let ch = per_channel.len();
    let len: usize = shape.iter().product();
    let d = per_channel.value.data();
    let v: Vec<u64> = (0..len).map(|i| d[(i / sp) % ch]).collect();
    AdditiveShare::new(
        per_channel.party,
        RingTensor::new(v, shape.to_vec(), per_channel.bits())?,
        per_channel.precision,
    )
}
