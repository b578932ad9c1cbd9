//! Dense-tensor reverse-mode differentiation on an explicit tape.
//!
//! The operation set is exactly what the gate and loss math need: elementwise
//! arithmetic, a few activations, axis reductions, a first-max reduction,
//! channel mixing (1x1x1 convolution), instance normalization, and the two
//! broadcast shapes used to expand per-channel parameters. Everything runs
//! sequentially with fixed reduction order, so forward values and gradients
//! are bit-identical across runs.

use thiserror::Error;

use crate::scalar::Real;
use crate::volume::Volume;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("tensor data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("tensor shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite tensor value at index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("instance_norm needs eps > 0, got {0}")]
    NonpositiveEps(f64),
    #[error("expected a scalar node, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("clamp bounds are inverted: lo {lo} > hi {hi}")]
    BadClamp { lo: f64, hi: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Dense N-dimensional value array, row-major. Scalars have rank 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(AutodiffError::ZeroExtent(shape));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(AutodiffError::DataLength {
                shape,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    /// Volume samples as a rank-3 tensor shaped `[depth, height, width]`
    /// (x-fastest volume order is row-major in that shape, so no copy
    /// reordering happens).
    pub fn from_volume<S: Real>(volume: &Volume<S>) -> Self {
        let [w, h, d] = volume.dims();
        Self {
            shape: vec![d, h, w],
            data: volume
                .data()
                .iter()
                .map(|&v| T::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Deliberately wrong backward rules, used as negative controls to prove the
/// finite-difference checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    /// d/dx exp(x) becomes -exp(x).
    ExpSignFlip,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ScalarMul(Var, T),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Abs(Var),
    LeakyRelu(Var, T),
    Clamp(Var, T, T),
    SumAxes(Var, Vec<usize>),
    SumAll(Var),
    MaxOverAxis {
        x: Var,
        axis: usize,
        /// First maximal index along `axis` for each output element.
        argmax: Vec<usize>,
    },
    RepeatAxis0(Var, usize),
    BroadcastSpatial(Var, Vec<usize>),
    ChannelAffine {
        x: Var,
        w: Var,
        b: Var,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of primitive applications; nodes are evaluated eagerly and
/// never mutated, so replaying the same construction reproduces every value
/// bit-exactly.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<BackwardFault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Arm a deliberate backward-rule fault (negative-control testing only).
    pub fn inject_backward_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, v: T) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    fn binary_check(&self, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch(sa.to_vec(), sb.to_vec()));
        }
        Ok(())
    }

    fn map2(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let data = self
            .value(a)
            .data
            .iter()
            .zip(self.value(b).data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::from_parts(shape, data), op)
    }

    fn map1(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.value(a).data.iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_check(a, b)?;
        Ok(self.map2(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_check(a, b)?;
        Ok(self.map2(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_check(a, b)?;
        Ok(self.map2(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_check(a, b)?;
        Ok(self.map2(a, b, |x, y| x / y, Op::Div(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, c: T) -> Var {
        self.map1(a, |x| c * x, Op::ScalarMul(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map1(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map1(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map1(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map1(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map1(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map1(
            a,
            |x| if x > T::zero() { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var, AutodiffError> {
        if lo > hi {
            return Err(AutodiffError::BadClamp {
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        Ok(self.map1(
            a,
            |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            Op::Clamp(a, lo, hi),
        ))
    }

    /// Sum over the given axes; the summed axes are removed from the shape.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var, AutodiffError> {
        let in_shape = self.value(a).shape.clone();
        let rank = in_shape.len();
        for &axis in axes {
            if axis >= rank {
                return Err(AutodiffError::BadAxis { axis, rank });
            }
        }
        let mut axes: Vec<usize> = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let out_shape: Vec<usize> = (0..rank)
            .filter(|a| !axes.contains(a))
            .map(|a| in_shape[a])
            .collect();
        let mut out = Tensor::zeros(&out_shape);
        let strides_out = row_major_strides(&out_shape);
        for (i, &v) in self.value(a).data.iter().enumerate() {
            let oi = drop_axes_index(i, &in_shape, &axes, &strides_out);
            out.data[oi] += v;
        }
        Ok(self.push(out, Op::SumAxes(a, axes)))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &v in &self.value(a).data {
            acc += v;
        }
        self.push(Tensor::scalar(acc), Op::SumAll(a))
    }

    /// Arithmetic mean of all elements as a rank-0 scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_f64_lossy(self.value(a).numel() as f64);
        let s = self.sum_all(a);
        self.scalar_mul(s, T::one() / n)
    }

    /// Elementwise maximum along `axis` (removed from the shape); the
    /// gradient flows to the first maximal index along the axis.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let in_shape = self.value(a).shape.clone();
        let rank = in_shape.len();
        if axis >= rank {
            return Err(AutodiffError::BadAxis { axis, rank });
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|&d| d != axis)
            .map(|d| in_shape[d])
            .collect();
        let out_numel: usize = out_shape.iter().product();
        let mut out = vec![T::neg_infinity(); out_numel];
        let mut argmax = vec![0usize; out_numel];
        let strides_out = row_major_strides(&out_shape);
        let in_strides = row_major_strides(&in_shape);
        let data = &self.value(a).data;
        for oi in 0..out_numel {
            // Rebuild the input index with `axis` inserted.
            let mut rem = oi;
            let mut base = 0usize;
            let mut od = 0usize;
            for d in 0..rank {
                if d == axis {
                    continue;
                }
                let coord = rem / strides_out[od];
                rem %= strides_out[od];
                base += coord * in_strides[d];
                od += 1;
            }
            for k in 0..in_shape[axis] {
                let v = data[base + k * in_strides[axis]];
                if v > out[oi] {
                    out[oi] = v;
                    argmax[oi] = k;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MaxOverAxis { x: a, axis, argmax },
        ))
    }

    /// Stack `m` copies of `a` along a new leading axis.
    pub fn repeat_axis0(&mut self, a: Var, m: usize) -> Result<Var, AutodiffError> {
        if m == 0 {
            return Err(AutodiffError::Invalid("repeat count must be >= 1".into()));
        }
        let src = self.value(a);
        let mut shape = Vec::with_capacity(src.shape.len() + 1);
        shape.push(m);
        shape.extend_from_slice(&src.shape);
        let mut data = Vec::with_capacity(src.data.len() * m);
        for _ in 0..m {
            data.extend_from_slice(&src.data);
        }
        Ok(self.push(Tensor::from_parts(shape, data), Op::RepeatAxis0(a, m)))
    }

    /// Append trailing spatial axes, repeating each element over them.
    pub fn broadcast_spatial(&mut self, a: Var, spatial: &[usize]) -> Result<Var, AutodiffError> {
        if spatial.iter().any(|&e| e == 0) {
            return Err(AutodiffError::ZeroExtent(spatial.to_vec()));
        }
        let src = self.value(a);
        let reps: usize = spatial.iter().product();
        let mut shape = src.shape.clone();
        shape.extend_from_slice(spatial);
        let mut data = Vec::with_capacity(src.data.len() * reps);
        for &v in &src.data {
            data.extend(std::iter::repeat(v).take(reps));
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::BroadcastSpatial(a, spatial.to_vec()),
        ))
    }

    /// Per-voxel channel mixing: `y[o, s] = sum_c w[o, c] x[c, s] + b[o]`.
    /// This is a 1x1x1 convolution over however many trailing spatial axes
    /// `x` carries.
    pub fn channel_affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape.clone();
        let ws = self.value(w).shape.clone();
        let bs = self.value(b).shape.clone();
        if xs.is_empty() || ws.len() != 2 || bs.len() != 1 {
            return Err(AutodiffError::Invalid(format!(
                "channel_affine wants x [C_in, ...], w [C_out, C_in], b [C_out]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        let (c_out, c_in) = (ws[0], ws[1]);
        if xs[0] != c_in || bs[0] != c_out {
            return Err(AutodiffError::ShapeMismatch(ws, xs));
        }
        let spatial: usize = xs[1..].iter().product();
        let xd = &self.value(x).data;
        let wd = &self.value(w).data;
        let bd = &self.value(b).data;
        let mut out = vec![T::zero(); c_out * spatial];
        for o in 0..c_out {
            for s in 0..spatial {
                let mut acc = bd[o];
                for c in 0..c_in {
                    acc += wd[o * c_in + c] * xd[c * spatial + s];
                }
                out[o * spatial + s] = acc;
            }
        }
        let mut out_shape = vec![c_out];
        out_shape.extend_from_slice(&xs[1..]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::ChannelAffine { x, w, b },
        ))
    }

    /// Instance normalization over the spatial axes of `x: [C, ...]`, with a
    /// learnable per-channel gain and shift. Differentiates through the mean
    /// and the (population) variance.
    pub fn instance_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: T,
    ) -> Result<Var, AutodiffError> {
        if eps <= T::zero() {
            return Err(AutodiffError::NonpositiveEps(eps.to_f64_lossy()));
        }
        let xs = self.value(x).shape.clone();
        if xs.len() < 2 {
            return Err(AutodiffError::Invalid(
                "instance_norm wants x [C, ...spatial]".into(),
            ));
        }
        let c = xs[0];
        if self.value(gain).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(AutodiffError::ShapeMismatch(
                vec![c],
                self.value(gain).shape.clone(),
            ));
        }
        let spatial: usize = xs[1..].iter().product();
        let n = T::from_f64_lossy(spatial as f64);
        let xd = &self.value(x).data;
        let gd = &self.value(gain).data;
        let sd = &self.value(shift).data;
        let mut out = vec![T::zero(); xd.len()];
        let mut means = vec![T::zero(); c];
        let mut inv_stds = vec![T::zero(); c];
        for ch in 0..c {
            let slice = &xd[ch * spatial..(ch + 1) * spatial];
            let mut mean = T::zero();
            for &v in slice {
                mean += v;
            }
            mean /= n;
            let mut var = T::zero();
            for &v in slice {
                let d = v - mean;
                var += d * d;
            }
            var /= n;
            let inv_std = T::one() / (var + eps).sqrt();
            means[ch] = mean;
            inv_stds[ch] = inv_std;
            for (i, &v) in slice.iter().enumerate() {
                out[ch * spatial + i] = gd[ch] * ((v - mean) * inv_std) + sd[ch];
            }
        }
        Ok(self.push(
            Tensor::from_parts(xs, out),
            Op::InstanceNorm {
                x,
                gain,
                shift,
                mean: means,
                inv_std: inv_stds,
            },
        ))
    }

    /// Reverse pass from a scalar output; returns one gradient slot per node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AutodiffError> {
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(AutodiffError::NonScalarOutput(out_value.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(&out_value.shape, T::one()));

        for id in (0..=output.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
            grads,
        })
    }

    fn accumulate_parents(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let mut acc = |var: Var, contribution: Vec<T>| {
            let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.value(var).shape()));
            for (dst, src) in slot.data.iter_mut().zip(contribution) {
                *dst += src;
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.data.clone());
                acc(*b, g.data.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.data.clone());
                acc(*b, g.data.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                acc(*a, g.data.iter().zip(bv).map(|(&gv, &y)| gv * y).collect());
                acc(*b, g.data.iter().zip(av).map(|(&gv, &x)| gv * x).collect());
            }
            Op::Div(a, b) => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                acc(*a, g.data.iter().zip(bv).map(|(&gv, &y)| gv / y).collect());
                acc(
                    *b,
                    g.data
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(&gv, (&x, &y))| -gv * x / (y * y))
                        .collect(),
                );
            }
            Op::ScalarMul(a, c) => {
                acc(*a, g.data.iter().map(|&gv| *c * gv).collect());
            }
            Op::Square(a) => {
                let two = T::from_f64_lossy(2.0);
                let av = &self.value(*a).data;
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(av)
                        .map(|(&gv, &x)| two * x * gv)
                        .collect(),
                );
            }
            Op::Exp(a) => {
                let yv = &node.value.data;
                let sign = if self.fault == Some(BackwardFault::ExpSignFlip) {
                    -T::one()
                } else {
                    T::one()
                };
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(yv)
                        .map(|(&gv, &y)| sign * y * gv)
                        .collect(),
                );
            }
            Op::Ln(a) => {
                let av = &self.value(*a).data;
                acc(*a, g.data.iter().zip(av).map(|(&gv, &x)| gv / x).collect());
            }
            Op::Tanh(a) => {
                let yv = &node.value.data;
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(yv)
                        .map(|(&gv, &y)| gv * (T::one() - y * y))
                        .collect(),
                );
            }
            Op::Abs(a) => {
                // Subgradient 0 at exactly 0.
                let av = &self.value(*a).data;
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(av)
                        .map(|(&gv, &x)| {
                            if x > T::zero() {
                                gv
                            } else if x < T::zero() {
                                -gv
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                );
            }
            Op::LeakyRelu(a, slope) => {
                let av = &self.value(*a).data;
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(av)
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { *slope * gv })
                        .collect(),
                );
            }
            Op::Clamp(a, lo, hi) => {
                let av = &self.value(*a).data;
                acc(
                    *a,
                    g.data
                        .iter()
                        .zip(av)
                        .map(|(&gv, &x)| if x > *lo && x < *hi { gv } else { T::zero() })
                        .collect(),
                );
            }
            Op::SumAxes(a, axes) => {
                let in_shape = &self.value(*a).shape;
                let out_shape = &node.value.shape;
                let strides_out = row_major_strides(out_shape);
                let mut contribution = vec![T::zero(); self.value(*a).numel()];
                for (i, dst) in contribution.iter_mut().enumerate() {
                    *dst = g.data[drop_axes_index(i, in_shape, axes, &strides_out)];
                }
                acc(*a, contribution);
            }
            Op::SumAll(a) => {
                let gv = g.data[0];
                acc(*a, vec![gv; self.value(*a).numel()]);
            }
            Op::MaxOverAxis { x, axis, argmax } => {
                let in_shape = &self.value(*x).shape;
                let in_strides = row_major_strides(in_shape);
                let out_shape = &node.value.shape;
                let strides_out = row_major_strides(out_shape);
                let rank = in_shape.len();
                let mut contribution = vec![T::zero(); self.value(*x).numel()];
                for (oi, &gv) in g.data.iter().enumerate() {
                    let mut rem = oi;
                    let mut base = 0usize;
                    let mut od = 0usize;
                    for d in 0..rank {
                        if d == *axis {
                            continue;
                        }
                        let coord = rem / strides_out[od];
                        rem %= strides_out[od];
                        base += coord * in_strides[d];
                        od += 1;
                    }
                    contribution[base + argmax[oi] * in_strides[*axis]] += gv;
                }
                acc(*x, contribution);
            }
            Op::RepeatAxis0(a, m) => {
                let n = self.value(*a).numel();
                let mut contribution = vec![T::zero(); n];
                for rep in 0..*m {
                    for i in 0..n {
                        contribution[i] += g.data[rep * n + i];
                    }
                }
                acc(*a, contribution);
            }
            Op::BroadcastSpatial(a, spatial) => {
                let reps: usize = spatial.iter().product();
                let n = self.value(*a).numel();
                let mut contribution = vec![T::zero(); n];
                for (i, dst) in contribution.iter_mut().enumerate() {
                    let mut s = T::zero();
                    for k in 0..reps {
                        s += g.data[i * reps + k];
                    }
                    *dst = s;
                }
                acc(*a, contribution);
            }
            Op::ChannelAffine { x, w, b } => {
                let xs = &self.value(*x).shape;
                let (c_out, c_in) = {
                    let ws = &self.value(*w).shape;
                    (ws[0], ws[1])
                };
                let spatial: usize = xs[1..].iter().product();
                let xd = &self.value(*x).data;
                let wd = &self.value(*w).data;
                let mut gx = vec![T::zero(); xd.len()];
                let mut gw = vec![T::zero(); wd.len()];
                let mut gb = vec![T::zero(); c_out];
                for o in 0..c_out {
                    for s in 0..spatial {
                        let gv = g.data[o * spatial + s];
                        gb[o] += gv;
                        for c in 0..c_in {
                            gx[c * spatial + s] += wd[o * c_in + c] * gv;
                            gw[o * c_in + c] += gv * xd[c * spatial + s];
                        }
                    }
                }
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::InstanceNorm {
                x,
                gain,
                shift,
                mean,
                inv_std,
            } => {
                let xs = &self.value(*x).shape;
                let c = xs[0];
                let spatial: usize = xs[1..].iter().product();
                let n = T::from_f64_lossy(spatial as f64);
                let xd = &self.value(*x).data;
                let gd = &self.value(*gain).data;
                let mut gx = vec![T::zero(); xd.len()];
                let mut ggain = vec![T::zero(); c];
                let mut gshift = vec![T::zero(); c];
                for ch in 0..c {
                    let off = ch * spatial;
                    let mut sum_g = T::zero();
                    let mut sum_gxhat = T::zero();
                    for i in 0..spatial {
                        let xhat = (xd[off + i] - mean[ch]) * inv_std[ch];
                        let gv = g.data[off + i];
                        sum_g += gv;
                        sum_gxhat += gv * xhat;
                        ggain[ch] += gv * xhat;
                        gshift[ch] += gv;
                    }
                    let mean_g = sum_g / n;
                    let mean_gxhat = sum_gxhat / n;
                    for i in 0..spatial {
                        let xhat = (xd[off + i] - mean[ch]) * inv_std[ch];
                        gx[off + i] =
                            gd[ch] * inv_std[ch] * (g.data[off + i] - mean_g - xhat * mean_gxhat);
                    }
                }
                acc(*x, gx);
                acc(*gain, ggain);
                acc(*shift, gshift);
            }
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; zeros if the node is not on a path to the output.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Map a row-major index of `in_shape` to the index of the shape obtained by
/// dropping `axes` (sorted). `strides_out` are the output strides.
fn drop_axes_index(i: usize, in_shape: &[usize], axes: &[usize], strides_out: &[usize]) -> usize {
    let in_strides = row_major_strides(in_shape);
    let mut rem = i;
    let mut oi = 0usize;
    let mut od = 0usize;
    for d in 0..in_shape.len() {
        let coord = rem / in_strides[d];
        rem %= in_strides[d];
        if !axes.contains(&d) {
            oi += coord * strides_out[od];
            od += 1;
        }
    }
    oi
}

/// Max relative error between analytic gradients and central finite
/// differences with step `h`, over all coordinates of all inputs.
///
/// Callers are expected to supply points nudged away from max ties and
/// activation kinks (pre-activation magnitudes above ~10h), as usual for
/// finite-difference validation of piecewise-smooth functions.
pub fn grad_check_multi<T: Real, F>(
    f: F,
    points: &[Tensor<T>],
    h: T,
) -> Result<T, AutodiffError>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarOutput(v.shape.clone()));
        }
        Ok(v.item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(AutodiffError::NonScalarOutput(
            tape.value(out).shape.clone(),
        ));
    }
    let grads = tape.backward(out)?;

    let mut max_err = T::zero();
    for (k, point) in points.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..point.numel() {
            let mut plus = points.to_vec();
            plus[k].data[i] += h;
            let mut minus = points.to_vec();
            minus[k].data[i] -= h;
            let fd = (eval(&plus)? - eval(&minus)?) / (h + h);
            let denom = T::one().max(fd.abs());
            let err = (analytic.data[i] - fd).abs() / denom;
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Single-input convenience wrapper around [`grad_check_multi`].
pub fn grad_check<T: Real, F>(f: F, point: &Tensor<T>, h: T) -> Result<T, AutodiffError>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var, AutodiffError>,
{
    grad_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), h)
}
