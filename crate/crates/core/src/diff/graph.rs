//! Eager reverse-mode tape.
//!
//! Values are computed as operations are recorded, so a graph can be inspected
//! mid-construction (the renderer relies on this to pick which samples get a
//! color evaluation). `backward` replays the tape in reverse and only visits
//! nodes that depend on a gradient-tracked leaf.

use std::borrow::Cow;
use std::collections::HashMap;

use super::kernels::{self, ConvDims};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Spread {
    /// `[c] -> [n, c]`
    Rows(usize),
    /// `[n] -> [n, c]`
    Cols(usize),
    /// `[c] -> [c, h, w]`
    Channels(usize),
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    MatMul(Var, Var),
    Conv2d(Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Sin(Var),
    Sum(Var),
    RowNorm(Var),
    NormalizeRows(Var),
    Interp { src: Var, idx: Vec<u32>, wts: Vec<T>, taps: usize, channels: usize },
    ChannelMean(Var),
    ChannelStd(Var),
    Spread(Var, Spread),
    Gather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentExclCumsum(Var, Vec<usize>),
    Concat(Var, Var),
    Clamp { x: Var, lo: Vec<T>, hi: Vec<T> },
    Floor(Var, T),
    Reshape(Var),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients of a scalar loss with respect to the tracked leaves.
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a tracked leaf, `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// One gradient per parameter, in parameter order. Unreachable and frozen
    /// parameters get exact zeros.
    pub fn for_params(&self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        params
            .ids()
            .map(|id| {
                self.params
                    .get(&id)
                    .and_then(|node| self.leaves.get(node))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
            })
            .collect()
    }
}

#[derive(Default)]
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn dims2(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match *s {
        [n] => Ok((n, 1)),
        [n, c] => Ok((n, c)),
        _ => Err(Error::shape(op, format!("expected rank 1 or 2, got {s:?}"))),
    }
}

fn dims3(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [c, h, w], got {s:?}"))),
    }
}

fn check_offsets(op: &'static str, offsets: &[usize], n: usize) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != n || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::shape(op, format!("segment offsets do not partition {n} rows")));
    }
    Ok(())
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), false, None)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), false, None)
    }

    /// Gradient-tracked input that is not part of a parameter set.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), true, None)
    }

    /// Parameter leaf; tracked only when the parameter is trainable.
    pub fn param(&mut self, params: &'a ParamSet<T>, id: ParamId) -> Var {
        let trainable = params.is_trainable(id);
        self.leaf(Cow::Borrowed(params.get(id)), trainable, Some(id))
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, op: Op<T>, inputs: &[Var], shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Cow::Owned(Tensor::from_parts(shape, data)), op, requires_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn d(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self.d(a).iter().zip(self.d(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, op, &[a, b], shape, data)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let data = self.d(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, op, &[x], shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift` with constant scalars.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        self.unary("affine", x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.affine(x, s, T::zero())
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, scalar::softplus, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, scalar::sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary("sin", x, |v| v.sin(), Op::Sin(x))
    }

    /// `max(x, floor)` elementwise; gradient passes only above the floor.
    pub fn floor_at(&mut self, x: Var, floor: T) -> Result<Var> {
        self.unary("floor_at", x, |v| v.max(floor), Op::Floor(x, floor))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Op::Sum(x), &[x], vec![1], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// `[m,k] · [k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let data = kernels::matmul(self.d(a), self.d(b), m, k, n);
        self.push("matmul", Op::MatMul(a, b), &[a, b], vec![m, n], data)
    }

    /// Stride-1 zero-padded convolution of `x: [cin,h,w]` with `w: [cout,cin,k,k]`, k odd.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let d = self.conv_dims(x, w)?;
        let data = kernels::conv2d(self.d(x), self.d(w), d);
        self.push("conv2d", Op::Conv2d(x, w), &[x, w], vec![d.cout, d.h, d.w], data)
    }

    fn conv_dims(&self, x: Var, w: Var) -> Result<ConvDims> {
        let (cin, h, wd) = dims3("conv2d", self.shape(x))?;
        match *self.shape(w) {
            [cout, ci, k, k2] if ci == cin && k == k2 && k % 2 == 1 => Ok(ConvDims { cin, cout, h, w: wd, k }),
            ref s => Err(Error::shape("conv2d", format!("input {:?} with kernel {s:?}", self.shape(x)))),
        }
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3("avg_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("odd extents {h}x{w}")));
        }
        let data = kernels::avg_pool2(self.d(x), c, h, w);
        self.push("avg_pool2", Op::AvgPool2(x), &[x], vec![c, h / 2, w / 2], data)
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3("upsample2", self.shape(x))?;
        let data = kernels::upsample2(self.d(x), c, h, w);
        self.push("upsample2", Op::Upsample2(x), &[x], vec![c, 2 * h, 2 * w], data)
    }

    /// Euclidean norm of each row: `[n,c] -> [n]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2("row_norm", self.shape(x))?;
        let xs = self.d(x);
        let data = (0..n).map(|i| xs[i * c..(i + 1) * c].iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        self.push("row_norm", Op::RowNorm(x), &[x], vec![n], data)
    }

    /// Scales each row of `[n,c]` to unit length. Zero rows are rejected.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2("normalize_rows", self.shape(x))?;
        let xs = self.d(x);
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            let row = &xs[i * c..(i + 1) * c];
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(Error::NonFinite { op: "normalize_rows" });
            }
            data.extend(row.iter().map(|&v| v / norm));
        }
        let shape = self.shape(x).to_vec();
        self.push("normalize_rows", Op::NormalizeRows(x), &[x], shape, data)
    }

    /// Weighted gather over the rows of `src` viewed as `[len / channels, channels]`.
    /// Each output row mixes `taps` source rows.
    pub fn interp(&mut self, src: Var, channels: usize, taps: usize, idx: Vec<u32>, wts: Vec<T>) -> Result<Var> {
        let len = self.value(src).len();
        if channels == 0 || len % channels != 0 || idx.len() != wts.len() || taps == 0 || idx.len() % taps != 0 {
            return Err(Error::shape("interp", "tap layout does not match source"));
        }
        let rows = len / channels;
        if idx.iter().any(|&i| i as usize >= rows) {
            return Err(Error::shape("interp", "tap index out of range"));
        }
        let n = idx.len() / taps;
        let data = kernels::interp(self.d(src), &idx, &wts, taps, channels);
        self.push("interp", Op::Interp { src, idx, wts, taps, channels }, &[src], vec![n, channels], data)
    }

    /// Trilinear interpolation of `grid: [nx,ny,nz,c]` at continuous node coordinates
    /// (`[n,3]` values in `[0, n_axis - 1]`, clamped).
    pub fn trilinear(&mut self, grid: Var, coords: &[[T; 3]]) -> Result<Var> {
        let (dims, c) = match *self.shape(grid) {
            [nx, ny, nz, c] => ([nx, ny, nz], c),
            ref s => return Err(Error::shape("trilinear", format!("grid must be [nx,ny,nz,c], got {s:?}"))),
        };
        let mut idx = Vec::with_capacity(coords.len() * 8);
        let mut wts = Vec::with_capacity(coords.len() * 8);
        for p in coords {
            let (i, w) = trilinear_taps(dims, *p);
            idx.extend_from_slice(&i);
            wts.extend_from_slice(&w);
        }
        self.interp(grid, c, 8, idx, wts)
    }

    /// Bilinear interpolation on a stack of images `[layers,h,w,c]`, edge-clamped.
    /// Queries are `(layer, x, y)` with texel centres at integer coordinates.
    pub fn bilinear(&mut self, images: Var, queries: &[(usize, T, T)]) -> Result<Var> {
        let (layers, h, w, c) = match *self.shape(images) {
            [l, h, w, c] => (l, h, w, c),
            ref s => return Err(Error::shape("bilinear", format!("images must be [l,h,w,c], got {s:?}"))),
        };
        let mut idx = Vec::with_capacity(queries.len() * 4);
        let mut wts = Vec::with_capacity(queries.len() * 4);
        for &(layer, x, y) in queries {
            if layer >= layers {
                return Err(Error::shape("bilinear", format!("layer {layer} of {layers}")));
            }
            let (i, wv) = bilinear_taps(h, w, x, y);
            idx.extend(i.iter().map(|&t| (layer * h * w) as u32 + t));
            wts.extend_from_slice(&wv);
        }
        self.interp(images, c, 4, idx, wts)
    }

    /// Per-channel mean of `[c, ...]` → `[c]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (c, m) = self.channel_layout("channel_mean", x)?;
        let xs = self.d(x);
        let inv = T::one() / T::of(m as f64);
        let data = (0..c).map(|ch| xs[ch * m..(ch + 1) * m].iter().copied().sum::<T>() * inv).collect();
        self.push("channel_mean", Op::ChannelMean(x), &[x], vec![c], data)
    }

    /// Per-channel population standard deviation of `[c, ...]` → `[c]`.
    pub fn channel_std(&mut self, x: Var) -> Result<Var> {
        let (c, m) = self.channel_layout("channel_std", x)?;
        let xs = self.d(x);
        let data = (0..c).map(|ch| population_std(&xs[ch * m..(ch + 1) * m])).collect();
        self.push("channel_std", Op::ChannelStd(x), &[x], vec![c], data)
    }

    fn channel_layout(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(Error::shape(op, format!("need a channel axis and at least one more, got {s:?}")));
        }
        Ok((s[0], s[1..].iter().product()))
    }

    /// `[c] -> [n, c]`
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let c = self.vector_len("broadcast_rows", v)?;
        let vs = self.d(v);
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(vs);
        }
        self.push("broadcast_rows", Op::Spread(v, Spread::Rows(n)), &[v], vec![n, c], data)
    }

    /// `[n] -> [n, c]`
    pub fn broadcast_cols(&mut self, v: Var, c: usize) -> Result<Var> {
        let n = self.vector_len("broadcast_cols", v)?;
        let data = self.d(v).iter().flat_map(|&x| std::iter::repeat(x).take(c)).collect();
        self.push("broadcast_cols", Op::Spread(v, Spread::Cols(c)), &[v], vec![n, c], data)
    }

    /// Broadcast by channel: `[c] -> [c, h, w]`
    pub fn broadcast_channels(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let c = self.vector_len("broadcast_channels", v)?;
        let data = self.d(v).iter().flat_map(|&x| std::iter::repeat(x).take(h * w)).collect();
        self.push("broadcast_channels", Op::Spread(v, Spread::Channels(h * w)), &[v], vec![c, h, w], data)
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match *self.shape(v) {
            [n] | [n, 1] => Ok(n),
            ref s => Err(Error::shape(op, format!("expected a vector, got {s:?}"))),
        }
    }

    /// Flat gather: `out[j] = x[idx[j]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let len = self.value(x).len();
        if shape.iter().product::<usize>() != idx.len() || idx.iter().any(|&i| i >= len) {
            return Err(Error::shape("gather", format!("{} indices into {len} values as {shape:?}", idx.len())));
        }
        let xs = self.d(x);
        let data = idx.iter().map(|&i| xs[i]).collect();
        self.push("gather", Op::Gather(x, idx), &[x], shape, data)
    }

    /// Selects whole rows of a `[n, c]` (or `[n]`) tensor.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (_, c) = dims2("gather_rows", &shape)?;
        let idx = rows.iter().flat_map(|&r| (0..c).map(move |j| r * c + j)).collect();
        let out = if shape.len() == 1 { vec![rows.len()] } else { vec![rows.len(), c] };
        self.gather(x, idx, out)
    }

    /// Sums contiguous row segments `[offsets[r], offsets[r+1])` of `[n, c]` into `[r, c]`.
    pub fn segment_sum(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c) = dims2("segment_sum", &shape)?;
        check_offsets("segment_sum", &offsets, n)?;
        let xs = self.d(x);
        let r = offsets.len() - 1;
        let mut data = vec![T::zero(); r * c];
        for s in 0..r {
            for i in offsets[s]..offsets[s + 1] {
                for j in 0..c {
                    data[s * c + j] += xs[i * c + j];
                }
            }
        }
        let out = if shape.len() == 1 { vec![r] } else { vec![r, c] };
        self.push("segment_sum", Op::SegmentSum(x, offsets), &[x], out, data)
    }

    /// Exclusive running sum within each segment of a vector.
    pub fn segment_excl_cumsum(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let n = self.vector_len("segment_excl_cumsum", x)?;
        check_offsets("segment_excl_cumsum", &offsets, n)?;
        let xs = self.d(x);
        let mut data = vec![T::zero(); n];
        for s in offsets.windows(2) {
            let mut acc = T::zero();
            for i in s[0]..s[1] {
                data[i] = acc;
                acc += xs[i];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("segment_excl_cumsum", Op::SegmentExclCumsum(x, offsets), &[x], shape, data)
    }

    /// Column concatenation `[n,a] ++ [n,b] -> [n,a+b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = dims2("concat_cols", self.shape(a))?;
        let (nb, cb) = dims2("concat_cols", self.shape(b))?;
        if n != nb {
            return Err(Error::shape("concat_cols", format!("{n} rows vs {nb} rows")));
        }
        let (xa, xb) = (self.d(a), self.d(b));
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&xa[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&xb[i * cb..(i + 1) * cb]);
        }
        self.push("concat_cols", Op::Concat(a, b), &[a, b], vec![n, ca + cb], data)
    }

    /// Per-column clamp of `[n, c]`.
    pub fn clamp_cols(&mut self, x: Var, lo: Vec<T>, hi: Vec<T>) -> Result<Var> {
        let (_, c) = dims2("clamp_cols", self.shape(x))?;
        if lo.len() != c || hi.len() != c {
            return Err(Error::shape("clamp_cols", format!("{c} columns, bounds {}/{}", lo.len(), hi.len())));
        }
        let data = self.d(x).iter().enumerate().map(|(i, &v)| v.max(lo[i % c]).min(hi[i % c])).collect();
        let shape = self.shape(x).to_vec();
        self.push("clamp_cols", Op::Clamp { x, lo, hi }, &[x], shape, data)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let data = self.d(x).to_vec();
        self.push("reshape", Op::Reshape(x), &[x], shape, data)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves = HashMap::new();
        let mut params = HashMap::new();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if let Some(p) = node.param {
                    params.insert(p, i);
                }
                leaves.insert(i, Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { leaves, params })
    }

    /// Convenience: gradients of `loss` for every parameter of `params`.
    pub fn backward_params(&self, loss: Var, params: &ParamSet<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.backward(loss)?.for_params(params))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let zip_map = |xs: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> { xs.iter().zip(g).map(|(&x, &gi)| f(x, gi)).collect() };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, zip_map(self.d(*b), &|y, gi| y * gi));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, zip_map(self.d(*a), &|x, gi| x * gi));
                }
            }
            Op::Div(a, b) => {
                let bs = self.d(*b);
                if self.wants(*a) {
                    self.accumulate(grads, *a, zip_map(bs, &|y, gi| gi / y));
                }
                if self.wants(*b) {
                    let db = out.iter().zip(bs).zip(g).map(|((&q, &y), &gi)| -gi * q / y).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Affine(x, s) => self.accumulate(grads, *x, g.iter().map(|&v| v * *s).collect()),
            Op::Relu(x) => {
                self.accumulate(grads, *x, zip_map(self.d(*x), &|v, gi| if v > T::zero() { gi } else { T::zero() }))
            }
            Op::Softplus(x) => self.accumulate(grads, *x, zip_map(self.d(*x), &|v, gi| gi * scalar::sigmoid(v))),
            Op::Sigmoid(x) => self.accumulate(grads, *x, zip_map(out, &|y, gi| gi * y * (T::one() - y))),
            Op::Exp(x) => self.accumulate(grads, *x, zip_map(out, &|y, gi| gi * y)),
            Op::Sin(x) => self.accumulate(grads, *x, zip_map(self.d(*x), &|v, gi| gi * v.cos())),
            Op::Floor(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, zip_map(self.d(*x), &|v, gi| if v > f { gi } else { T::zero() }))
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    self.accumulate(grads, *a, kernels::matmul_grad_a(g, self.d(*b), m, k, n));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, kernels::matmul_grad_b(self.d(*a), g, m, k, n));
                }
            }
            Op::Conv2d(x, w) => {
                let d = self.conv_dims(*x, *w).expect("validated at record time");
                if self.wants(*x) {
                    self.accumulate(grads, *x, kernels::conv2d_grad_input(g, self.d(*w), d));
                }
                if self.wants(*w) {
                    self.accumulate(grads, *w, kernels::conv2d_grad_weight(g, self.d(*x), d));
                }
            }
            Op::AvgPool2(x) => {
                let s = self.shape(*x);
                self.accumulate(grads, *x, kernels::avg_pool2_grad(g, s[0], s[1], s[2]));
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                self.accumulate(grads, *x, kernels::upsample2_grad(g, s[0], s[1], s[2]));
            }
            Op::RowNorm(x) => {
                let xs = self.d(*x);
                let c = xs.len() / out.len();
                let mut dx = vec![T::zero(); xs.len()];
                for (r, (&nrm, &gi)) in out.iter().zip(g).enumerate() {
                    if nrm > T::zero() {
                        for j in 0..c {
                            dx[r * c + j] = gi * xs[r * c + j] / nrm;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::NormalizeRows(x) => {
                let xs = self.d(*x);
                let c = *self.shape(*x).last().unwrap();
                let c = if self.shape(*x).len() == 1 { 1 } else { c };
                let mut dx = vec![T::zero(); xs.len()];
                for r in 0..xs.len() / c {
                    let row = &xs[r * c..(r + 1) * c];
                    let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let y = &out[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let yg: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = (gr[j] - y[j] * yg) / nrm;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Interp { src, idx, wts, taps, channels } => {
                let len = self.value(*src).len();
                self.accumulate(grads, *src, kernels::interp_grad(g, idx, wts, *taps, *channels, len));
            }
            Op::ChannelMean(x) => {
                let xs = self.d(*x);
                let m = xs.len() / out.len();
                let inv = T::one() / T::of(m as f64);
                let dx = (0..xs.len()).map(|j| g[j / m] * inv).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelStd(x) => {
                let xs = self.d(*x);
                let m = xs.len() / out.len();
                let inv = T::one() / T::of(m as f64);
                let mut dx = vec![T::zero(); xs.len()];
                for (ch, (&sd, &gi)) in out.iter().zip(g).enumerate() {
                    if sd > T::zero() {
                        let seg = &xs[ch * m..(ch + 1) * m];
                        let mu = seg.iter().copied().sum::<T>() * inv;
                        for (j, &v) in seg.iter().enumerate() {
                            dx[ch * m + j] = gi * (v - mu) * inv / sd;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Spread(v, mode) => {
                let n = self.value(*v).len();
                let mut dv = vec![T::zero(); n];
                match *mode {
                    Spread::Rows(rows) => {
                        for r in 0..rows {
                            for j in 0..n {
                                dv[j] += g[r * n + j];
                            }
                        }
                    }
                    Spread::Cols(c) | Spread::Channels(c) => {
                        for (j, d) in dv.iter_mut().enumerate() {
                            *d = g[j * c..(j + 1) * c].iter().copied().sum();
                        }
                    }
                }
                self.accumulate(grads, *v, dv);
            }
            Op::Gather(x, idx) => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&j, &gi) in idx.iter().zip(g) {
                    dx[j] += gi;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentSum(x, offsets) => {
                let n = self.value(*x).len();
                let rows = offsets[offsets.len() - 1];
                let c = n / rows.max(1);
                let mut dx = vec![T::zero(); n];
                for s in 0..offsets.len() - 1 {
                    for i in offsets[s]..offsets[s + 1] {
                        dx[i * c..(i + 1) * c].copy_from_slice(&g[s * c..(s + 1) * c]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentExclCumsum(x, offsets) => {
                // d x_i = Σ_{j > i in segment} g_j
                let mut dx = vec![T::zero(); g.len()];
                for s in offsets.windows(2) {
                    let mut acc = T::zero();
                    for i in (s[0]..s[1]).rev() {
                        dx[i] = acc;
                        acc += g[i];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).len(), self.value(*b).len());
                let n = self.shape(*a)[0];
                let (wa, wb) = (ca / n, cb / n);
                let mut da = Vec::with_capacity(ca);
                let mut db = Vec::with_capacity(cb);
                for r in 0..n {
                    let row = &g[r * (wa + wb)..(r + 1) * (wa + wb)];
                    da.extend_from_slice(&row[..wa]);
                    db.extend_from_slice(&row[wa..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Clamp { x, lo, hi } => {
                let c = lo.len();
                let dx = self
                    .d(*x)
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(j, (&v, &gi))| if v >= lo[j % c] && v <= hi[j % c] { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
        }
    }
}

/// Population standard deviation (divides by the count).
/// Values are shifted by the first element first, so a constant input gives exactly 0.
pub fn population_std<T: Scalar>(xs: &[T]) -> T {
    let inv = T::one() / T::of(xs.len() as f64);
    let x0 = xs[0];
    let mu = xs.iter().map(|&v| v - x0).sum::<T>() * inv;
    let var = xs.iter().map(|&v| (v - x0 - mu) * (v - x0 - mu)).sum::<T>() * inv;
    var.sqrt()
}

/// Corner indices (flattened `x*ny*nz + y*nz + z`) and weights for trilinear
/// interpolation at continuous node coordinates, clamped to the grid.
pub fn trilinear_taps<T: Scalar>(dims: [usize; 3], p: [T; 3]) -> ([u32; 8], [T; 8]) {
    let mut base = [0usize; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let hi = T::of((dims[a] - 1) as f64);
        let c = p[a].max(T::zero()).min(hi);
        let mut i = c.floor().to_usize().unwrap_or(0);
        if i >= dims[a] - 1 {
            i = dims[a].saturating_sub(2);
        }
        base[a] = i;
        frac[a] = c - T::of(i as f64);
    }
    let [_, ny, nz] = dims;
    let mut idx = [0u32; 8];
    let mut wts = [T::zero(); 8];
    for corner in 0..8 {
        let (dx, dy, dz) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
        let wx = if dx == 1 { frac[0] } else { T::one() - frac[0] };
        let wy = if dy == 1 { frac[1] } else { T::one() - frac[1] };
        let wz = if dz == 1 { frac[2] } else { T::one() - frac[2] };
        idx[corner] = (((base[0] + dx) * ny + base[1] + dy) * nz + base[2] + dz) as u32;
        wts[corner] = wx * wy * wz;
    }
    (idx, wts)
}

/// Texel indices (`y*w + x`) and weights for edge-clamped bilinear lookup.
pub fn bilinear_taps<T: Scalar>(h: usize, w: usize, x: T, y: T) -> ([u32; 4], [T; 4]) {
    let axis = |v: T, n: usize| -> (usize, usize, T) {
        if n == 1 {
            return (0, 0, T::zero());
        }
        let c = v.max(T::zero()).min(T::of((n - 1) as f64));
        let i = c.floor().to_usize().unwrap_or(0).min(n - 2);
        (i, i + 1, c - T::of(i as f64))
    };
    let (x0, x1, fx) = axis(x, w);
    let (y0, y1, fy) = axis(y, h);
    let one = T::one();
    (
        [(y0 * w + x0) as u32, (y0 * w + x1) as u32, (y1 * w + x0) as u32, (y1 * w + x1) as u32],
        [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[0.0]));
        let y = g.softplus(x).unwrap();
        assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sigmoid_sum_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::<f64>::zeros([4]));
        let s = g.sigmoid(x).unwrap();
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::<f64>::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([2]));
        let b = g.constant(Tensor::zeros([3]));
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("`add`"));
        let m = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(m, m).unwrap_err();
        assert!(err.to_string().contains("`matmul`"));
    }

    #[test]
    fn trilinear_cell_center_spreads_eighths() {
        let mut g = Graph::new();
        let grid = g.variable(Tensor::from_fn([2, 2, 2, 1], |i| (i % 2) as f64));
        let y = g.trilinear(grid, &[[0.5, 0.5, 0.5]]).unwrap();
        assert!((g.value(y).item() - 0.5).abs() < 1e-15);
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(grid).unwrap().data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn segment_ops() {
        let mut g = Graph::new();
        let x = g.variable(t(&[5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let c = g.segment_excl_cumsum(x, vec![0, 2, 5]).unwrap();
        assert_eq!(g.value(c).data(), &[0.0, 1.0, 0.0, 3.0, 7.0]);
        let s = g.segment_sum(x, vec![0, 2, 5]).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 12.0]);
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_channel_std_is_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::full([2, 3, 3], 0.7));
        let s = g.channel_std(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.0, 0.0]);
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut params = ParamSet::new();
        let a = params.insert("a", t(&[2], &[1.0, 2.0]), true).unwrap();
        let b = params.insert("b", t(&[3], &[1.0, 2.0, 3.0]), true).unwrap();
        let mut g = Graph::new();
        let va = g.param(&params, a);
        let l = g.sum(va).unwrap();
        let grads = g.backward_params(l, &params).unwrap();
        assert_eq!(grads[a.index()].data(), &[1.0, 1.0]);
        assert_eq!(grads[b.index()].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn frozen_param_gets_zeros() {
        let mut params = ParamSet::new();
        let a = params.insert("a", t(&[2], &[1.0, 2.0]), false).unwrap();
        let mut g = Graph::new();
        let va = g.param(&params, a);
        let sq = g.mul(va, va).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward_params(l, &params).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
    }
}
