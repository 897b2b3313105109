//! The differentiable op set: elementwise maps, limited broadcasting, channel
//! plumbing, strided subsampling and reductions.

use super::{kink, strides, Backward, Element, Tensor};
use crate::error::{Error, Result};

// ── elementwise unary ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sigmoid,
    Sqrt,
    Relu,
}

struct UnaryOp(UnaryFn);

impl<T: Element> Backward<T> for UnaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            UnaryFn::Sigmoid => "sigmoid",
            UnaryFn::Sqrt => "sqrt",
            UnaryFn::Relu => "relu",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let half = T::from_f64(0.5);
        let g: Vec<T> = match self.0 {
            UnaryFn::Sigmoid => out
                .iter()
                .zip(grad)
                .map(|(&y, &g)| g * y * (T::one() - y))
                .collect(),
            UnaryFn::Sqrt => out.iter().zip(grad).map(|(&y, &g)| g * half / y).collect(),
            UnaryFn::Relu => inputs[0]
                .data()
                .iter()
                .zip(grad)
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect(),
        };
        vec![Some(g)]
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn unary<T: Element>(x: &Tensor<T>, f: UnaryFn) -> Result<Tensor<T>> {
    if f == UnaryFn::Relu && kink::active() {
        if x.requires_grad() {
            kink::note(x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64().abs())));
        }
        kink::record_signs(x.data().iter().map(|v| v.as_f64()));
    }
    let data: Vec<T> = match f {
        UnaryFn::Sigmoid => x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        UnaryFn::Relu => x.data().iter().map(|&v| v.max(T::zero())).collect(),
        UnaryFn::Sqrt => {
            if let Some(i) = x.data().iter().position(|v| !(*v >= T::zero())) {
                return Err(Error::Domain {
                    op: "sqrt",
                    index: i,
                    value: x.data()[i].as_f64(),
                });
            }
            x.data().iter().map(|v| v.sqrt()).collect()
        }
    };
    Ok(Tensor::from_op(
        data,
        x.shape().to_vec(),
        vec![x.clone()],
        UnaryOp(f),
    ))
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, UnaryFn::Sigmoid).expect("sigmoid is total")
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, UnaryFn::Relu).expect("relu is total")
}

pub fn sqrt<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, UnaryFn::Sqrt)
}

struct ScaleOp<T>(T);

impl<T: Element> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.iter().map(|&g| g * self.0).collect())]
    }
}

/// `x * c` for a constant `c`.
pub fn scale<T: Element>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * c).collect();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], ScaleOp(c))
}

// ── elementwise binary with one-sided broadcast ──────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFn {
    Add,
    Sub,
    Mul,
}

/// For each flat index of `a`, the flat index of `b` it pairs with. `b` must
/// have `a`'s rank with every extent either equal to `a`'s or 1.
fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    let compatible =
        a.len() == b.len() && a.iter().zip(b).all(|(&da, &db)| db == da || db == 1);
    if !compatible {
        return Err(Error::shape(
            "elementwise_binary",
            format!("incompatible shapes {a:?} and {b:?}"),
        ));
    }
    if a == b {
        return Ok(None);
    }
    let sb = strides(b);
    let bstr: Vec<usize> = b
        .iter()
        .zip(&sb)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let n: usize = a.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&bstr).map(|(i, s)| i * s).sum());
        for ax in (0..a.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < a[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Some(map))
}

struct BinaryOp {
    f: BinaryFn,
    map: Option<Vec<usize>>,
}

impl<T: Element> Backward<T> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.f {
            BinaryFn::Add => "add",
            BinaryFn::Sub => "sub",
            BinaryFn::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let bi = |i: usize| self.map.as_ref().map_or(i, |m| m[i]);
        let ga = a.requires_grad().then(|| match self.f {
            BinaryFn::Add | BinaryFn::Sub => grad.to_vec(),
            BinaryFn::Mul => {
                let bd = b.data();
                grad.iter().enumerate().map(|(i, &g)| g * bd[bi(i)]).collect()
            }
        });
        let gb = b.requires_grad().then(|| {
            let mut gb = vec![T::zero(); b.numel()];
            let ad = a.data();
            for (i, &g) in grad.iter().enumerate() {
                gb[bi(i)] += match self.f {
                    BinaryFn::Add => g,
                    BinaryFn::Sub => -g,
                    BinaryFn::Mul => g * ad[i],
                };
            }
            gb
        });
        vec![ga, gb]
    }
}

/// Elementwise `a (op) b`, broadcasting `b` over any axis where its extent is 1
/// (e.g. `[B,C,1,1]` over space or `[B,1,H,W]` over channels).
pub fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: BinaryFn) -> Result<Tensor<T>> {
    let map = broadcast_map(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let bi = |i: usize| map.as_ref().map_or(i, |m| m[i]);
    let data = (0..ad.len())
        .map(|i| {
            let (x, y) = (ad[i], bd[bi(i)]);
            match f {
                BinaryFn::Add => x + y,
                BinaryFn::Sub => x - y,
                BinaryFn::Mul => x * y,
            }
        })
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        BinaryOp { f, map },
    ))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinaryFn::Add)
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinaryFn::Sub)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, BinaryFn::Mul)
}

// ── full reductions ──────────────────────────────────────────────────

struct SumAllOp<T>(T);

impl<T: Element> Backward<T> for SumAllOp<T> {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![grad[0] * self.0; inputs[0].numel()])]
    }
}

/// Neumaier-compensated sum, so full reductions of long buffers do not add
/// rounding noise proportional to the buffer length.
fn compensated_sum<T: Element>(xs: &[T]) -> T {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in xs {
        let v = v.as_f64();
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    T::from_f64(s + c)
}

pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = compensated_sum(x.data());
    Tensor::from_op(vec![s], vec![1], vec![x.clone()], SumAllOp(T::one()))
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = T::from_f64(x.numel() as f64);
    let s = compensated_sum(x.data());
    Tensor::from_op(
        vec![s / n],
        vec![1],
        vec![x.clone()],
        SumAllOp(T::one() / n),
    )
}

/// Mean squared error between equally shaped tensors.
pub fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "mse",
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    let d = sub(a, b)?;
    Ok(mean_all(&mul(&d, &d)?))
}

// ── reshape ──────────────────────────────────────────────────────────

struct ReshapeOp;

impl<T: Element> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

pub fn reshape<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
        return Err(Error::shape(
            "reshape",
            format!("cannot view {:?} as {shape:?}", x.shape()),
        ));
    }
    Ok(Tensor::from_op(
        x.to_vec(),
        shape.to_vec(),
        vec![x.clone()],
        ReshapeOp,
    ))
}

// ── channel plumbing ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelCombine {
    Concat,
    Interleave,
}

/// Source of each output channel: `(input index, input channel)`.
struct ChannelGatherOp {
    sources: Vec<(usize, usize)>,
}

impl<T: Element> Backward<T> for ChannelGatherOp {
    fn name(&self) -> &'static str {
        "channel_combine"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, _, h, w] = *inputs[0].shape() else {
            unreachable!()
        };
        let plane = h * w;
        let c_out = self.sources.len();
        let mut grads: Vec<Option<Vec<T>>> = inputs
            .iter()
            .map(|t| t.requires_grad().then(|| vec![T::zero(); t.numel()]))
            .collect();
        for bi in 0..b {
            for (oc, &(src, sc)) in self.sources.iter().enumerate() {
                let Some(g) = grads[src].as_mut() else { continue };
                let c_src = inputs[src].shape()[1];
                let dst = &mut g[(bi * c_src + sc) * plane..][..plane];
                let from = &grad[(bi * c_out + oc) * plane..][..plane];
                dst.iter_mut().zip(from).for_each(|(d, &s)| *d += s);
            }
        }
        grads
    }
}

fn gather_channels<T: Element>(
    op: &'static str,
    xs: &[Tensor<T>],
    sources: Vec<(usize, usize)>,
) -> Result<Tensor<T>> {
    let [b, _, h, w] = xs[0].dims4(op)?;
    for x in xs {
        let [bb, _, hh, ww] = x.dims4(op)?;
        if (bb, hh, ww) != (b, h, w) {
            return Err(Error::shape(
                op,
                format!(
                    "inputs disagree on B,H,W: {:?} vs {:?}",
                    xs[0].shape(),
                    x.shape()
                ),
            ));
        }
    }
    let plane = h * w;
    let c_out = sources.len();
    let mut data = Vec::with_capacity(b * c_out * plane);
    for bi in 0..b {
        for &(src, sc) in &sources {
            let c_src = xs[src].shape()[1];
            data.extend_from_slice(&xs[src].data()[(bi * c_src + sc) * plane..][..plane]);
        }
    }
    Ok(Tensor::from_op(
        data,
        vec![b, c_out, h, w],
        xs.to_vec(),
        ChannelGatherOp { sources },
    ))
}

pub fn channel_combine<T: Element>(xs: &[Tensor<T>], mode: ChannelCombine) -> Result<Tensor<T>> {
    if xs.is_empty() {
        return Err(Error::shape("channel_combine", "no inputs"));
    }
    match mode {
        ChannelCombine::Concat => {
            let mut sources = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                let c = x.dims4("concat")?[1];
                sources.extend((0..c).map(|ch| (i, ch)));
            }
            gather_channels("concat", xs, sources)
        }
        ChannelCombine::Interleave => {
            if xs.len() != 2 {
                return Err(Error::shape(
                    "interleave",
                    format!("needs exactly two inputs, got {}", xs.len()),
                ));
            }
            let (ca, cb) = (xs[0].dims4("interleave")?[1], xs[1].dims4("interleave")?[1]);
            if ca != cb {
                return Err(Error::shape(
                    "interleave",
                    format!("channel counts differ: {ca} vs {cb}"),
                ));
            }
            let sources = (0..ca).flat_map(|c| [(0, c), (1, c)]).collect();
            gather_channels("interleave", xs, sources)
        }
    }
}

pub fn concat_channels<T: Element>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    channel_combine(xs, ChannelCombine::Concat)
}

/// `[a_1, b_1, a_2, b_2, ...]`.
pub fn interleave_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    channel_combine(&[a.clone(), b.clone()], ChannelCombine::Interleave)
}

/// Channels `start..start + len`.
pub fn narrow_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let c = x.dims4("narrow_channels")?[1];
    if len == 0 || start + len > c {
        return Err(Error::shape(
            "narrow_channels",
            format!("range {start}..{} out of {c} channels", start + len),
        ));
    }
    gather_channels(
        "narrow_channels",
        std::slice::from_ref(x),
        (start..start + len).map(|ch| (0, ch)).collect(),
    )
}

// ── strided subsampling / depth-to-space ─────────────────────────────

struct SubsampleOp {
    row_phase: usize,
    col_phase: usize,
}

impl<T: Element> Backward<T> for SubsampleOp {
    fn name(&self) -> &'static str {
        "strided_subsample"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, c, h, w] = *inputs[0].shape() else {
            unreachable!()
        };
        let (ho, wo) = (h / 2, w / 2);
        let mut gx = vec![T::zero(); b * c * h * w];
        for bc in 0..b * c {
            for i in 0..ho {
                for j in 0..wo {
                    gx[bc * h * w + (2 * i + self.row_phase) * w + 2 * j + self.col_phase] =
                        grad[bc * ho * wo + i * wo + j];
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Rows `row_phase, row_phase+2, ...` and columns `col_phase, col_phase+2, ...`.
pub fn strided_subsample<T: Element>(
    x: &Tensor<T>,
    row_phase: usize,
    col_phase: usize,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("strided_subsample")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "strided_subsample",
            format!("spatial extent {h}x{w} must be even"),
        ));
    }
    if row_phase > 1 || col_phase > 1 {
        return Err(Error::shape(
            "strided_subsample",
            format!("phase ({row_phase},{col_phase}) outside {{0,1}}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut data = Vec::with_capacity(b * c * ho * wo);
    for bc in 0..b * c {
        for i in 0..ho {
            let row = &xd[bc * h * w + (2 * i + row_phase) * w..][..w];
            data.extend(row.iter().skip(col_phase).step_by(2));
        }
    }
    Ok(Tensor::from_op(
        data,
        vec![b, c, ho, wo],
        vec![x.clone()],
        SubsampleOp {
            row_phase,
            col_phase,
        },
    ))
}

struct DepthToSpaceOp;

impl<T: Element> Backward<T> for DepthToSpaceOp {
    fn name(&self) -> &'static str {
        "depth_to_space"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, c4, h, w] = *inputs[0].shape() else {
            unreachable!()
        };
        let mut g = vec![T::zero(); b * c4 * h * w];
        d2s_index(b, c4 / 4, h, w, |src, dst| g[src] = grad[dst]);
        vec![Some(g)]
    }
}

/// Calls `f(src, dst)` for every element moved by depth-to-space on
/// `[b, 4c, h, w] -> [b, c, 2h, 2w]`. Input channel block `k = 2*dy + dx`
/// lands at phase `(dy, dx)`.
fn d2s_index(b: usize, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    let (h2, w2) = (2 * h, 2 * w);
    for bi in 0..b {
        for k in 0..4 {
            let (dy, dx) = (k / 2, k % 2);
            for ch in 0..c {
                let src_base = ((bi * 4 + k) * c + ch) * h * w;
                let dst_base = (bi * c + ch) * h2 * w2;
                for i in 0..h {
                    for j in 0..w {
                        f(
                            src_base + i * w + j,
                            dst_base + (2 * i + dy) * w2 + 2 * j + dx,
                        );
                    }
                }
            }
        }
    }
}

/// Inverse of space-to-depth: folds channel blocks `(0,0),(0,1),(1,0),(1,1)`
/// of `[B,4C,h,w]` back into 2×2 spatial phases of `[B,C,2h,2w]`.
pub fn depth_to_space<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c4, h, w] = x.dims4("depth_to_space")?;
    if c4 % 4 != 0 {
        return Err(Error::shape(
            "depth_to_space",
            format!("channel count {c4} not divisible by 4"),
        ));
    }
    let xd = x.data();
    let mut data = vec![T::zero(); xd.len()];
    d2s_index(b, c4 / 4, h, w, |src, dst| data[dst] = xd[src]);
    Ok(Tensor::from_op(
        data,
        vec![b, c4 / 4, 2 * h, 2 * w],
        vec![x.clone()],
        DepthToSpaceOp,
    ))
}

// ── axis reductions ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    MeanOverChannels,
    MaxOverChannels,
    GlobalAvg,
    GlobalMax,
}

struct ReduceOp {
    kind: Reduction,
    /// Flat input index of the selected element, for max reductions.
    argmax: Vec<usize>,
}

impl<T: Element> Backward<T> for ReduceOp {
    fn name(&self) -> &'static str {
        match self.kind {
            Reduction::MeanOverChannels => "mean_over_channels",
            Reduction::MaxOverChannels => "max_over_channels",
            Reduction::GlobalAvg => "global_avg",
            Reduction::GlobalMax => "global_max",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [b, c, h, w] = *inputs[0].shape() else {
            unreachable!()
        };
        let plane = h * w;
        let mut g = vec![T::zero(); b * c * plane];
        match self.kind {
            Reduction::MaxOverChannels | Reduction::GlobalMax => {
                for (&src, &gv) in self.argmax.iter().zip(grad) {
                    g[src] += gv;
                }
            }
            Reduction::MeanOverChannels => {
                let inv = T::one() / T::from_f64(c as f64);
                for bi in 0..b {
                    for ch in 0..c {
                        for p in 0..plane {
                            g[(bi * c + ch) * plane + p] = grad[bi * plane + p] * inv;
                        }
                    }
                }
            }
            Reduction::GlobalAvg => {
                let inv = T::one() / T::from_f64(plane as f64);
                for bc in 0..b * c {
                    g[bc * plane..][..plane].fill(grad[bc] * inv);
                }
            }
        }
        vec![Some(g)]
    }
}

/// Channel reductions give `[B,1,H,W]`; global reductions give `[B,C,1,1]`.
/// Max reductions route gradient to the first maximal element.
pub fn reduce<T: Element>(x: &Tensor<T>, kind: Reduction) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("reduce")?;
    let plane = h * w;
    let xd = x.data();
    let watch = x.requires_grad() && kink::active();
    let mut argmax = Vec::new();
    let (data, shape) = match kind {
        Reduction::MeanOverChannels | Reduction::MaxOverChannels => {
            let mut out = Vec::with_capacity(b * plane);
            for bi in 0..b {
                for p in 0..plane {
                    let at = |ch: usize| (bi * c + ch) * plane + p;
                    if kind == Reduction::MeanOverChannels {
                        let s: T = (0..c).map(|ch| xd[at(ch)]).sum();
                        out.push(s / T::from_f64(c as f64));
                    } else {
                        if watch {
                            kink::note(kink::top_gap((0..c).map(|ch| xd[at(ch)].as_f64())));
                        }
                        let mut best = at(0);
                        for ch in 1..c {
                            if xd[at(ch)] > xd[best] {
                                best = at(ch);
                            }
                        }
                        argmax.push(best);
                        out.push(xd[best]);
                    }
                }
            }
            (out, vec![b, 1, h, w])
        }
        Reduction::GlobalAvg | Reduction::GlobalMax => {
            let mut out = Vec::with_capacity(b * c);
            for bc in 0..b * c {
                let base = bc * plane;
                let row = &xd[base..base + plane];
                if kind == Reduction::GlobalAvg {
                    out.push(row.iter().copied().sum::<T>() / T::from_f64(plane as f64));
                } else {
                    if watch {
                        kink::note(kink::top_gap(row.iter().map(|v| v.as_f64())));
                    }
                    let mut best = 0;
                    for (p, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = p;
                        }
                    }
                    argmax.push(base + best);
                    out.push(row[best]);
                }
            }
            (out, vec![b, c, 1, 1])
        }
    };
    if kink::active() {
        kink::record(argmax.iter().map(|&i| i as u64));
    }
    Ok(Tensor::from_op(
        data,
        shape,
        vec![x.clone()],
        ReduceOp { kind, argmax },
    ))
}
