//! Beaver-triple multiplication for any bilinear map over `Z_2^n`.
//!
//! For a bilinear `f` and a triple `c = f(a, b)`, parties open
//! `delta = x - a` and `eps = y - b` in one round, then set
//! `z_j = c_j + f(delta, b_j) + f(a_j, eps)` with party 0 also adding
//! `f(delta, eps)`. Elementwise products, matrix products, 2-D
//! convolutions and the two convolution gradients all share this path.

use rand::Rng;

use crate::codec::{put_uint, width, Reader};
use crate::error::{Error, Result};
use crate::fss::{KeyBatch, KeyKind};
use crate::ring::{mask, RingTensor};
use crate::runtime::{Session, Tag};
use crate::sharing::{share_tensor, AdditiveShare};

/// Geometry of a 2-D convolution over `[batch, channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn validate(&self) -> Result<()> {
        let ok = self.stride > 0
            && self.kernel_h > 0
            && self.kernel_w > 0
            && self.height + 2 * self.padding >= self.kernel_h
            && self.width + 2 * self.padding >= self.kernel_w;
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "invalid convolution geometry {self:?}"
            )))
        }
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Output positions per image.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Entries of one unrolled patch.
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel_h * self.kernel_w
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_ch, self.height, self.width]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, self.kernel_h, self.kernel_w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h(), self.out_w()]
    }
}

/// Scalar type the bilinear kernels run on: ring words with wrapping
/// arithmetic, or `f64` for plaintext reference models.
pub trait Elem: Copy + Default + Send + Sync {
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
}

impl Elem for u64 {
    #[inline]
    fn add(self, o: Self) -> Self {
        self.wrapping_add(o)
    }
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.wrapping_mul(o)
    }
}

impl Elem for f64 {
    #[inline]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline]
    fn mul(self, o: Self) -> Self {
        self * o
    }
}

/// Unrolls `[batch, in_ch, h, w]` into patches `[batch, positions, patch]`,
/// zero-filling padding.
pub fn unroll<E: Elem>(x: &[E], g: &ConvGeom) -> Vec<E> {
    let (p, q) = (g.positions(), g.patch());
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![E::default(); g.batch * p * q];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * p + oy * ow + ox) * q;
                for c in 0..g.in_ch {
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            let src = ((b * g.in_ch + c) * g.height + iy as usize) * g.width
                                + ix as usize;
                            out[row + (c * g.kernel_h + ky) * g.kernel_w + kx] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`unroll`]: scatters patches back, summing overlaps.
pub fn fold<E: Elem>(cols: &[E], g: &ConvGeom) -> Vec<E> {
    let (p, q) = (g.positions(), g.patch());
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![E::default(); g.batch * g.in_ch * g.height * g.width];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * p + oy * ow + ox) * q;
                for c in 0..g.in_ch {
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            let dst = ((b * g.in_ch + c) * g.height + iy as usize) * g.width
                                + ix as usize;
                            out[dst] =
                                out[dst].add(cols[row + (c * g.kernel_h + ky) * g.kernel_w + kx]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn matmul_raw<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::default(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            let brow = &b[t * n..(t + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = o.add(av.mul(bv));
            }
        }
    }
    out
}

/// A bilinear map with fixed operand shapes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BilinearOp {
    /// `[..] x [..] -> [..]`, same shape.
    Elementwise { shape: Vec<usize> },
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul { m: usize, k: usize, n: usize },
    /// input `[B, C, H, W]` x weight `[O, C, kh, kw]` -> `[B, O, Ho, Wo]`.
    Conv2d(ConvGeom),
    /// output grad `[B, O, Ho, Wo]` x input `[B, C, H, W]` -> `[O, C, kh, kw]`.
    ConvGradWeight(ConvGeom),
    /// output grad `[B, O, Ho, Wo]` x weight `[O, C, kh, kw]` -> `[B, C, H, W]`.
    ConvGradInput(ConvGeom),
}

impl BilinearOp {
    pub fn shapes(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        match self {
            BilinearOp::Elementwise { shape } => (shape.clone(), shape.clone(), shape.clone()),
            BilinearOp::MatMul { m, k, n } => (vec![*m, *k], vec![*k, *n], vec![*m, *n]),
            BilinearOp::Conv2d(g) => (g.input_shape(), g.weight_shape(), g.output_shape()),
            BilinearOp::ConvGradWeight(g) => (g.output_shape(), g.input_shape(), g.weight_shape()),
            BilinearOp::ConvGradInput(g) => (g.output_shape(), g.weight_shape(), g.input_shape()),
        }
    }

    fn geom(&self) -> Option<&ConvGeom> {
        match self {
            BilinearOp::Conv2d(g)
            | BilinearOp::ConvGradWeight(g)
            | BilinearOp::ConvGradInput(g) => Some(g),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.geom() {
            g.validate()?;
        }
        Ok(())
    }

    /// Number of elements in `f(a, b)`.
    pub fn output_len(&self) -> usize {
        self.shapes().2.iter().product()
    }

    fn check_shapes(&self, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let (sa, sb, so) = self.shapes();
        if a != sa.as_slice() || b != sb.as_slice() {
            return Err(Error::Geometry(format!(
                "{self:?} expects {sa:?} x {sb:?}, got {a:?} x {b:?}"
            )));
        }
        Ok(so)
    }

    /// Evaluates the map on plaintext ring tensors.
    pub fn apply(&self, a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
        let so = self.check_shapes(a.shape(), b.shape())?;
        if a.bits() != b.bits() {
            return Err(Error::BitsMismatch(a.bits(), b.bits()));
        }
        let m = mask(a.bits());
        let data = self.eval(a.data(), b.data());
        RingTensor::new(data.into_iter().map(|v| v & m).collect(), so, a.bits())
    }

    /// Evaluates the map on real-valued operands with the given shapes.
    pub fn apply_f64(
        &self,
        a: &[f64],
        a_shape: &[usize],
        b: &[f64],
        b_shape: &[usize],
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        let so = self.check_shapes(a_shape, b_shape)?;
        Ok((self.eval(a, b), so))
    }

    fn eval<E: Elem>(&self, a: &[E], b: &[E]) -> Vec<E> {
        match self {
            BilinearOp::Elementwise { .. } => a.iter().zip(b).map(|(&x, &y)| x.mul(y)).collect(),
            BilinearOp::MatMul { m, k, n } => matmul_raw(a, b, *m, *k, *n),
            BilinearOp::Conv2d(g) => {
                let (p, q) = (g.positions(), g.patch());
                let u = unroll(a, g);
                let mut out = vec![E::default(); g.batch * g.out_ch * p];
                for bi in 0..g.batch {
                    let patches = &u[bi * p * q..(bi + 1) * p * q];
                    for o in 0..g.out_ch {
                        let w = &b[o * q..(o + 1) * q];
                        for pos in 0..p {
                            let patch = &patches[pos * q..(pos + 1) * q];
                            let s = w
                                .iter()
                                .zip(patch)
                                .fold(E::default(), |acc, (&x, &y)| acc.add(x.mul(y)));
                            out[(bi * g.out_ch + o) * p + pos] = s;
                        }
                    }
                }
                out
            }
            BilinearOp::ConvGradWeight(g) => {
                let (p, q) = (g.positions(), g.patch());
                let u = unroll(b, g);
                let mut out = vec![E::default(); g.out_ch * q];
                for bi in 0..g.batch {
                    let gb = &a[bi * g.out_ch * p..(bi + 1) * g.out_ch * p];
                    let patches = &u[bi * p * q..(bi + 1) * p * q];
                    let part = matmul_raw(gb, patches, g.out_ch, p, q);
                    for (o, v) in out.iter_mut().zip(part) {
                        *o = o.add(v);
                    }
                }
                out
            }
            BilinearOp::ConvGradInput(g) => {
                let (p, q) = (g.positions(), g.patch());
                let mut cols = vec![E::default(); g.batch * p * q];
                for bi in 0..g.batch {
                    let gb = &a[bi * g.out_ch * p..(bi + 1) * g.out_ch * p];
                    // patch gradients [p, q] = g^T [p, O] x W [O, q]
                    let mut gt = vec![E::default(); p * g.out_ch];
                    for o in 0..g.out_ch {
                        for pos in 0..p {
                            gt[pos * g.out_ch + o] = gb[o * p + pos];
                        }
                    }
                    let part = matmul_raw(&gt, b, p, g.out_ch, q);
                    cols[bi * p * q..(bi + 1) * p * q].copy_from_slice(&part);
                }
                fold(&cols, g)
            }
        }
    }

    fn encode(&self, buf: &mut Vec<u8>) {
        let dims: Vec<usize> = match self {
            BilinearOp::Elementwise { shape } => {
                buf.push(0);
                buf.push(shape.len() as u8);
                shape.clone()
            }
            BilinearOp::MatMul { m, k, n } => {
                buf.push(1);
                vec![*m, *k, *n]
            }
            BilinearOp::Conv2d(g)
            | BilinearOp::ConvGradWeight(g)
            | BilinearOp::ConvGradInput(g) => {
                buf.push(match self {
                    BilinearOp::Conv2d(_) => 2,
                    BilinearOp::ConvGradWeight(_) => 3,
                    _ => 4,
                });
                vec![
                    g.batch, g.in_ch, g.height, g.width, g.out_ch, g.kernel_h, g.kernel_w,
                    g.stride, g.padding,
                ]
            }
        };
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        fn dims(r: &mut Reader<'_>, n: usize) -> Result<Vec<usize>> {
            (0..n).map(|_| r.uint(4).map(|v| v as usize)).collect()
        }
        fn conv(d: Vec<usize>) -> ConvGeom {
            ConvGeom {
                batch: d[0],
                in_ch: d[1],
                height: d[2],
                width: d[3],
                out_ch: d[4],
                kernel_h: d[5],
                kernel_w: d[6],
                stride: d[7],
                padding: d[8],
            }
        }
        let op = match r.uint(1)? {
            0 => {
                let rank = r.uint(1)? as usize;
                BilinearOp::Elementwise {
                    shape: dims(r, rank)?,
                }
            }
            1 => {
                let d = dims(r, 3)?;
                BilinearOp::MatMul {
                    m: d[0],
                    k: d[1],
                    n: d[2],
                }
            }
            2 => BilinearOp::Conv2d(conv(dims(r, 9)?)),
            3 => BilinearOp::ConvGradWeight(conv(dims(r, 9)?)),
            4 => BilinearOp::ConvGradInput(conv(dims(r, 9)?)),
            other => return Err(Error::Format(format!("unknown bilinear op code {other}"))),
        };
        op.validate()?;
        Ok(op)
    }
}

/// One party's share of a triple `c = f(a, b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleShare {
    pub id: u64,
    pub op: BilinearOp,
    pub a: RingTensor,
    pub b: RingTensor,
    pub c: RingTensor,
}

/// Samples a fresh triple for `op` and shares it.
pub fn gen_triple<R: Rng + ?Sized>(
    op: &BilinearOp,
    bits: u32,
    id: u64,
    rng: &mut R,
) -> Result<[TripleShare; 2]> {
    let (sa, sb, _) = op.shapes();
    let m = mask(bits);
    let a = RingTensor::zeros(sa, bits)?.map_indexed(|_, _| rng.gen::<u64>() & m);
    let b = RingTensor::zeros(sb, bits)?.map_indexed(|_, _| rng.gen::<u64>() & m);
    let c = op.apply(&a, &b)?;
    let [a0, a1] = share_tensor(&a, rng);
    let [b0, b1] = share_tensor(&b, rng);
    let [c0, c1] = share_tensor(&c, rng);
    Ok([
        TripleShare {
            id,
            op: op.clone(),
            a: a0,
            b: b0,
            c: c0,
        },
        TripleShare {
            id,
            op: op.clone(),
            a: a1,
            b: b1,
            c: c1,
        },
    ])
}

/// Packs one party's triples into a key-file container.
pub fn triples_to_batch(party: usize, triples: &[TripleShare]) -> Result<KeyBatch> {
    let first = triples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no triples".into()))?;
    let bits = first.a.bits();
    let w = width(bits);
    let mut buf = Vec::new();
    for (i, t) in triples.iter().enumerate() {
        if t.id != first.id + i as u64 || t.a.bits() != bits {
            return Err(Error::InvalidArgument(
                "triples must have consecutive ids and one width".into(),
            ));
        }
        t.op.encode(&mut buf);
        for tensor in [&t.a, &t.b, &t.c] {
            for &v in tensor.data() {
                put_uint(&mut buf, v, w);
            }
        }
    }
    let mut payloads = [None, None];
    payloads[party] = Some(buf);
    Ok(KeyBatch {
        kind: KeyKind::Triple,
        n_bits: bits,
        out_bits: bits,
        count: triples.len(),
        first_id: first.id,
        payloads,
    })
}

/// Unpacks one party's triples from a key-file container.
pub fn triples_from_batch(kb: &KeyBatch, party: usize) -> Result<Vec<TripleShare>> {
    if kb.kind != KeyKind::Triple {
        return Err(Error::Format(format!(
            "expected triples, file holds {:?}",
            kb.kind
        )));
    }
    crate::ring::check_bits(kb.n_bits)?;
    let bytes = kb.payloads[party]
        .as_deref()
        .ok_or_else(|| Error::Format(format!("no payload for party {party}")))?;
    let bits = kb.n_bits;
    let w = width(bits);
    let mut r = Reader::new(bytes);
    let mut out = Vec::with_capacity(kb.count);
    for i in 0..kb.count {
        let op = BilinearOp::decode(&mut r)?;
        let (sa, sb, so) = op.shapes();
        let mut read = |shape: Vec<usize>| -> Result<RingTensor> {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.masked(w, bits))
                .collect::<Result<Vec<_>>>()?;
            RingTensor::new(data, shape, bits)
        };
        let a = read(sa)?;
        let b = read(sb)?;
        let c = read(so)?;
        out.push(TripleShare {
            id: kb.first_id + i as u64,
            op,
            a,
            b,
            c,
        });
    }
    r.finish()?;
    Ok(out)
}

/// Secure evaluation of `f(x, y)` on shares. One round. The result has
/// precision `px + py` and is not truncated.
pub fn beaver_op(
    sess: &mut Session,
    op: &BilinearOp,
    x: &AdditiveShare,
    y: &AdditiveShare,
) -> Result<AdditiveShare> {
    let (sa, sb, _) = op.shapes();
    if x.shape() != sa.as_slice() || y.shape() != sb.as_slice() {
        return Err(Error::Geometry(format!(
            "{op:?} expects {sa:?} x {sb:?}, got {:?} x {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.bits() != y.bits() {
        return Err(Error::BitsMismatch(x.bits(), y.bits()));
    }
    let t = sess.take_triple(op, x.bits())?;
    let d = x.value.sub(&t.a)?;
    let e = y.value.sub(&t.b)?;
    let opened = sess.open(Tag::TripleDelta, &[&d, &e])?;
    let (delta, eps) = (&opened[0], &opened[1]);
    let mut z =
        t.c.add(&op.apply(delta, &t.b)?)?
            .add(&op.apply(&t.a, eps)?)?;
    if sess.party() == 0 {
        z = z.add(&op.apply(delta, eps)?)?;
    }
    AdditiveShare::new(sess.party(), z, x.precision + y.precision)
}

/// Runs several independent bilinear evaluations in a single round.
pub fn beaver_many(
    sess: &mut Session,
    items: &[(BilinearOp, &AdditiveShare, &AdditiveShare)],
) -> Result<Vec<AdditiveShare>> {
    let mut triples = Vec::with_capacity(items.len());
    let mut masked = Vec::with_capacity(2 * items.len());
    for (op, x, y) in items {
        let (sa, sb, _) = op.shapes();
        if x.shape() != sa.as_slice() || y.shape() != sb.as_slice() {
            return Err(Error::Geometry(format!(
                "{op:?} operand shapes {:?} x {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let t = sess.take_triple(op, x.bits())?;
        masked.push(x.value.sub(&t.a)?);
        masked.push(y.value.sub(&t.b)?);
        triples.push(t);
    }
    let refs: Vec<&RingTensor> = masked.iter().collect();
    let opened = sess.open(Tag::TripleDelta, &refs)?;
    let mut out = Vec::with_capacity(items.len());
    for (i, ((op, x, y), t)) in items.iter().zip(&triples).enumerate() {
        let (delta, eps) = (&opened[2 * i], &opened[2 * i + 1]);
        let mut z =
            t.c.add(&op.apply(delta, &t.b)?)?
                .add(&op.apply(&t.a, eps)?)?;
        if sess.party() == 0 {
            z = z.add(&op.apply(delta, eps)?)?;
        }
        out.push(AdditiveShare::new(
            sess.party(),
            z,
            x.precision + y.precision,
        )?);
    }
    Ok(out)
}

/// Bilinear evaluation followed by truncation back to the larger of the two
/// input precisions.
pub fn beaver_op_trunc(
    sess: &mut Session,
    op: &BilinearOp,
    x: &AdditiveShare,
    y: &AdditiveShare,
) -> Result<AdditiveShare> {
    let z = beaver_op(sess, op, x, y)?;
    z.truncate(x.precision.min(y.precision))
}

/// Elementwise product with truncation.
pub fn mul(sess: &mut Session, x: &AdditiveShare, y: &AdditiveShare) -> Result<AdditiveShare> {
    let op = BilinearOp::Elementwise {
        shape: x.shape().to_vec(),
    };
    beaver_op_trunc(sess, &op, x, y)
}

/// Matrix product `[m, k] x [k, n]` with truncation.
pub fn matmul(sess: &mut Session, x: &AdditiveShare, y: &AdditiveShare) -> Result<AdditiveShare> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[0] {
        return Err(Error::ShapeMismatch(xs.to_vec(), ys.to_vec()));
    }
    let op = BilinearOp::MatMul {
        m: xs[0],
        k: xs[1],
        n: ys[1],
    };
    beaver_op_trunc(sess, &op, x, y)
}

/// 2-D convolution with truncation.
pub fn conv2d(
    sess: &mut Session,
    geom: &ConvGeom,
    x: &AdditiveShare,
    w: &AdditiveShare,
) -> Result<AdditiveShare> {
    beaver_op_trunc(sess, &BilinearOp::Conv2d(*geom), x, w)
}

/// Transposes a 2-D share locally.
pub fn transpose(x: &AdditiveShare) -> Result<AdditiveShare> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch(s.to_vec(), vec![0, 0]));
    }
    let (r, c) = (s[0], s[1]);
    let d = x.value.data();
    let data = (0..c * r).map(|i| d[(i % r) * c + i / r]).collect();
    AdditiveShare::new(
        x.party,
        RingTensor::new(data, vec![c, r], x.bits())?,
        x.precision,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rand_tensor(shape: Vec<usize>, bits: u32, rng: &mut ChaCha20Rng) -> RingTensor {
        RingTensor::zeros(shape, bits)
            .unwrap()
            .map_indexed(|_, _| rng.gen())
    }

    /// Direct convolution with explicit index arithmetic.
    fn naive_conv(x: &RingTensor, w: &RingTensor, g: &ConvGeom) -> Vec<u64> {
        let mut out = vec![0u64; g.batch * g.out_ch * g.positions()];
        for b in 0..g.batch {
            for o in 0..g.out_ch {
                for oy in 0..g.out_h() {
                    for ox in 0..g.out_w() {
                        let mut s = 0u64;
                        for c in 0..g.in_ch {
                            for ky in 0..g.kernel_h {
                                for kx in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.height as isize
                                        || ix >= g.width as isize
                                    {
                                        continue;
                                    }
                                    let xv = x.data()[((b * g.in_ch + c) * g.height + iy as usize)
                                        * g.width
                                        + ix as usize];
                                    let wv = w.data()
                                        [((o * g.in_ch + c) * g.kernel_h + ky) * g.kernel_w + kx];
                                    s = s.wrapping_add(xv.wrapping_mul(wv));
                                }
                            }
                        }
                        out[((b * g.out_ch + o) * g.out_h() + oy) * g.out_w() + ox] =
                            s & mask(x.bits());
                    }
                }
            }
        }
        out
    }

    fn geom() -> ConvGeom {
        ConvGeom {
            batch: 2,
            in_ch: 2,
            height: 5,
            width: 4,
            out_ch: 3,
            kernel_h: 3,
            kernel_w: 2,
            stride: 2,
            padding: 1,
        }
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = geom();
        let x = rand_tensor(g.input_shape(), 32, &mut rng);
        let w = rand_tensor(g.weight_shape(), 32, &mut rng);
        let y = BilinearOp::Conv2d(g).apply(&x, &w).unwrap();
        assert_eq!(y.shape(), g.output_shape().as_slice());
        assert_eq!(y.data(), naive_conv(&x, &w, &g).as_slice());
    }

    #[test]
    fn conv_gradients_are_adjoints() {
        // <G, conv(x, w)> = <grad_w(G, x), w> = <grad_x(G, w), x>
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let g = geom();
        let x = rand_tensor(g.input_shape(), 64, &mut rng);
        let w = rand_tensor(g.weight_shape(), 64, &mut rng);
        let gr = rand_tensor(g.output_shape(), 64, &mut rng);
        let dot = |a: &RingTensor, b: &RingTensor| {
            a.data()
                .iter()
                .zip(b.data())
                .fold(0u64, |s, (&p, &q)| s.wrapping_add(p.wrapping_mul(q)))
        };
        let y = BilinearOp::Conv2d(g).apply(&x, &w).unwrap();
        let gw = BilinearOp::ConvGradWeight(g).apply(&gr, &x).unwrap();
        let gx = BilinearOp::ConvGradInput(g).apply(&gr, &w).unwrap();
        assert_eq!(dot(&gr, &y), dot(&gw, &w));
        assert_eq!(dot(&gr, &y), dot(&gx, &x));
    }

    #[test]
    fn matmul_example() {
        let a = RingTensor::new(vec![1, 2, 3, 4], vec![2, 2], 16).unwrap();
        let b = RingTensor::new(vec![5, 6, 7, 8], vec![2, 2], 16).unwrap();
        let c = BilinearOp::MatMul { m: 2, k: 2, n: 2 }
            .apply(&a, &b)
            .unwrap();
        assert_eq!(c.data(), &[19, 22, 43, 50]);
        assert!(matches!(
            BilinearOp::MatMul { m: 2, k: 3, n: 2 }.apply(&a, &b),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn triples_are_correct_and_serialize() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ops = [
            BilinearOp::Elementwise { shape: vec![3, 2] },
            BilinearOp::MatMul { m: 2, k: 3, n: 4 },
            BilinearOp::Conv2d(geom()),
            BilinearOp::ConvGradWeight(geom()),
            BilinearOp::ConvGradInput(geom()),
        ];
        let mut p0 = Vec::new();
        let mut p1 = Vec::new();
        for (i, op) in ops.iter().enumerate() {
            let [t0, t1] = gen_triple(op, 32, 10 + i as u64, &mut rng).unwrap();
            let a = t0.a.add(&t1.a).unwrap();
            let b = t0.b.add(&t1.b).unwrap();
            assert_eq!(t0.c.add(&t1.c).unwrap(), op.apply(&a, &b).unwrap());
            p0.push(t0);
            p1.push(t1);
        }
        for (party, ts) in [(0, &p0), (1, &p1)] {
            let kb = triples_to_batch(party, ts).unwrap();
            let back = KeyBatch::from_bytes(&kb.to_bytes().unwrap()).unwrap();
            assert_eq!(&triples_from_batch(&back, party).unwrap(), ts);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let t = RingTensor::new((0..6).collect(), vec![2, 3], 16).unwrap();
        let s = AdditiveShare::new(0, t.clone(), 0).unwrap();
        let tt = transpose(&s).unwrap();
        assert_eq!(tt.value.data(), &[0, 3, 1, 4, 2, 5]);
        assert_eq!(transpose(&tt).unwrap().value, t);
    }
}
