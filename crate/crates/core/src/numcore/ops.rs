//! Differentiable operations.
//!
//! Subgradient conventions: `relu'(0) = 0`, `abs'(0) = 0`, and `maximum` /
//! `minimum` route the whole gradient to the left operand on ties. `log`
//! evaluates `ln(max(x, 1e-12))`; the clamp has zero gradient below the floor.

use std::sync::Arc;

use super::conv;
use super::tensor::{BinaryKind, Op, Tensor, UnaryKind};
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// NaN passes through every op so divergence cannot be clamped away.
fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Square => x * x,
        UnaryKind::Log => x.max(LOG_FLOOR).ln(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Scale(c) => c * x,
        UnaryKind::Offset(c) => x + c,
        UnaryKind::Clamp(lo, hi) => x.max(lo).min(hi),
    }
}

/// d(out)/d(in) given input `x` and output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Square => 2.0 * x,
        UnaryKind::Log => {
            if x >= LOG_FLOOR {
                1.0 / x
            } else {
                0.0
            }
        }
        UnaryKind::Cos => -x.sin(),
        UnaryKind::Sin => x.cos(),
        UnaryKind::Scale(c) => c,
        UnaryKind::Offset(_) => 1.0,
        UnaryKind::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Tensor {
    fn unary(&self, kind: UnaryKind) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| unary_forward(kind, x))
            .collect();
        Tensor::op_result(
            self.shape().to_vec(),
            data,
            Op::Unary {
                input: self.clone(),
                kind,
            },
        )
    }

    fn binary(&self, other: &Tensor, kind: BinaryKind, name: &'static str) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                name,
                format!(
                    "operand shapes {:?} and {:?} differ",
                    self.shape(),
                    other.shape()
                ),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| match kind {
                BinaryKind::Add => a + b,
                BinaryKind::Sub => a - b,
                BinaryKind::Mul => a * b,
                BinaryKind::Div => a / b,
                // `a` wins when NaN; a NaN `b` fails the comparison and wins too.
                BinaryKind::Max => {
                    if a >= b || a.is_nan() {
                        a
                    } else {
                        b
                    }
                }
                BinaryKind::Min => {
                    if a <= b || a.is_nan() {
                        a
                    } else {
                        b
                    }
                }
            })
            .collect();
        Ok(Tensor::op_result(
            self.shape().to_vec(),
            data,
            Op::Binary {
                lhs: self.clone(),
                rhs: other.clone(),
                kind,
            },
        ))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(UnaryKind::Relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(UnaryKind::Tanh)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(UnaryKind::Abs)
    }

    pub fn square(&self) -> Tensor {
        self.unary(UnaryKind::Square)
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log(&self) -> Tensor {
        self.unary(UnaryKind::Log)
    }

    pub fn cos(&self) -> Tensor {
        self.unary(UnaryKind::Cos)
    }

    pub fn sin(&self) -> Tensor {
        self.unary(UnaryKind::Sin)
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(UnaryKind::Scale(c))
    }

    /// Add a constant.
    pub fn offset(&self, c: f64) -> Tensor {
        self.unary(UnaryKind::Offset(c))
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside or on the bounds.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(UnaryKind::Clamp(lo, hi))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div, "div")
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Max, "maximum")
    }

    /// Elementwise minimum; ties send the gradient to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Min, "minimum")
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::op_result(vec![1], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let m = s / self.numel() as f64;
        Tensor::op_result(vec![1], vec![m], Op::Mean(self.clone()))
    }

    /// Pick flat elements into a 1-D tensor. Indices may repeat.
    pub fn gather(&self, index: Arc<Vec<usize>>) -> Result<Tensor> {
        if index.is_empty() {
            return Err(Error::dim("gather", "empty index list"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= self.numel()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {} elements", self.numel()),
            ));
        }
        let data = index.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::op_result(
            vec![index.len()],
            data,
            Op::Gather {
                input: self.clone(),
                index,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::op_result(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Flatten and join tensors end to end into a 1-D tensor.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no operands"));
        }
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::numel).sum());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let n = data.len();
        Ok(Tensor::op_result(vec![n], data, Op::Concat(parts.to_vec())))
    }

    /// 2-D cross-correlation with bias on `B x C x H x W` input.
    ///
    /// Output spatial size is `floor((H + 2p - k) / stride) + 1`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let geom =
            conv::ConvGeometry::new(self.shape(), weight.shape(), bias.shape(), stride, padding)?;
        let data = conv::forward(&geom, self.data(), weight.data(), bias.data());
        Ok(Tensor::op_result(
            geom.output_shape(),
            data,
            Op::Conv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.clone(),
                stride,
                padding,
            },
        ))
    }
}

/// Vector-Jacobian products for one node: `(parent, d loss / d parent)`.
pub(crate) fn backward_op(t: &Tensor, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
    match &t.node.op {
        Op::Leaf => Vec::new(),
        Op::Unary { input, kind } => {
            let gi = input
                .data()
                .iter()
                .zip(t.data())
                .zip(g)
                .map(|((&x, &y), &gy)| gy * unary_derivative(*kind, x, y))
                .collect();
            vec![(input.clone(), gi)]
        }
        Op::Binary { lhs, rhs, kind } => {
            let a = lhs.data();
            let b = rhs.data();
            let n = g.len();
            let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                BinaryKind::Add => (g.to_vec(), g.to_vec()),
                BinaryKind::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                BinaryKind::Mul => (
                    (0..n).map(|i| g[i] * b[i]).collect(),
                    (0..n).map(|i| g[i] * a[i]).collect(),
                ),
                BinaryKind::Div => (
                    (0..n).map(|i| g[i] / b[i]).collect(),
                    (0..n).map(|i| -g[i] * a[i] / (b[i] * b[i])).collect(),
                ),
                BinaryKind::Max => (
                    (0..n)
                        .map(|i| if a[i] >= b[i] { g[i] } else { 0.0 })
                        .collect(),
                    (0..n)
                        .map(|i| if a[i] >= b[i] { 0.0 } else { g[i] })
                        .collect(),
                ),
                BinaryKind::Min => (
                    (0..n)
                        .map(|i| if a[i] <= b[i] { g[i] } else { 0.0 })
                        .collect(),
                    (0..n)
                        .map(|i| if a[i] <= b[i] { 0.0 } else { g[i] })
                        .collect(),
                ),
            };
            vec![(lhs.clone(), ga), (rhs.clone(), gb)]
        }
        Op::Sum(input) => vec![(input.clone(), vec![g[0]; input.numel()])],
        Op::Mean(input) => {
            let n = input.numel();
            vec![(input.clone(), vec![g[0] / n as f64; n])]
        }
        Op::Gather { input, index } => {
            let mut gi = vec![0.0; input.numel()];
            for (&i, &gv) in index.iter().zip(g) {
                gi[i] += gv;
            }
            vec![(input.clone(), gi)]
        }
        Op::Reshape(input) => vec![(input.clone(), g.to_vec())],
        Op::Concat(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|p| {
                    let n = p.numel();
                    let slice = g[offset..offset + n].to_vec();
                    offset += n;
                    (p.clone(), slice)
                })
                .collect()
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            let geom = conv::ConvGeometry::new(
                input.shape(),
                weight.shape(),
                bias.shape(),
                *stride,
                *padding,
            )
            .expect("geometry validated in forward");
            let grads = conv::backward(
                &geom,
                input.data(),
                weight.data(),
                g,
                input.requires_grad(),
                weight.requires_grad() || bias.requires_grad(),
            );
            let mut out = Vec::with_capacity(3);
            if let Some(gx) = grads.input {
                out.push((input.clone(), gx));
            }
            if let Some(gw) = grads.weight {
                out.push((weight.clone(), gw));
            }
            if let Some(gb) = grads.bias {
                out.push((bias.clone(), gb));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Tensor {
        Tensor::parameter(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn nan_survives_relu_clamp_and_log() {
        let t = Tensor::new(&[1], vec![f64::NAN]).unwrap();
        assert!(t.relu().data()[0].is_nan());
        assert!(t.clamp(0.0, 1.0).data()[0].is_nan());
        assert!(t.log().data()[0].is_nan());
    }

    #[test]
    fn relu_values_and_subgradient() {
        let t = param(&[-1.0, 0.0, 2.0, -0.5, 0.5]);
        let y = t.relu();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0, 0.5]);
        y.sum().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_is_identity_on_positive_input() {
        let t = Tensor::new(&[3], vec![0.1, 2.0, 7.5]).unwrap();
        assert_eq!(t.relu().data(), t.data());
    }

    #[test]
    fn sigmoid_midpoint_saturation_and_slope() {
        let t = param(&[0.0, -800.0, 800.0]);
        let y = t.sigmoid();
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-300 && !y.data()[1].is_nan());
        assert_eq!(y.data()[2], 1.0);
        t.gather(Arc::new(vec![0]))
            .unwrap()
            .sigmoid()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(t.grad().unwrap()[0], 0.25);
    }

    #[test]
    fn tanh_bounds_and_slope() {
        let t = param(&[0.0, 3.0, -3.0]);
        let y = t.tanh();
        assert_eq!(y.data()[0], 0.0);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
        y.gather(Arc::new(vec![0]))
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(t.grad().unwrap()[0], 1.0);
    }

    #[test]
    fn add_values() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_is_loud() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = a.mul(&b).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "mul", .. }), "{err}");
    }

    #[test]
    fn max_tie_routes_to_first_operand() {
        let a = param(&[1.0, 2.0]);
        let m = a.maximum(&a).unwrap();
        assert_eq!(m.data(), a.data());
        // Same tensor on both sides: first-operand routing gives 1 per element.
        m.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        a.zero_grad();
        let b = Tensor::parameter(&[2], vec![1.0, 5.0]).unwrap();
        let mx = a.maximum(&b).unwrap();
        mx.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 1.0]);
        let c = param(&[3.0]);
        let d = param(&[3.0]);
        c.minimum(&d).unwrap().sum().backward().unwrap();
        assert_eq!(c.grad().unwrap(), vec![1.0]);
        assert_eq!(d.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn abs_kink_has_zero_gradient() {
        let a = param(&[-2.0, 0.0, 3.0]);
        a.abs().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn log_clamps_small_arguments() {
        let a = param(&[0.0, 1.0]);
        let y = a.log();
        assert_eq!(y.data()[0], LOG_FLOOR.ln());
        assert_eq!(y.data()[1], 0.0);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn square_of_three_has_gradient_six() {
        let w = param(&[3.0]);
        w.square().sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn disjoint_paths_accumulate() {
        let w = param(&[2.0]);
        let loss = w.scale(3.0).add(&w.square()).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0 + 4.0]);
    }

    #[test]
    fn second_backward_accumulates() {
        let w = param(&[3.0]);
        let loss = w.square().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = param(&[1.0, 2.0]);
        assert!(matches!(w.square().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_scatters_repeated_indices() {
        let w = param(&[1.0, 2.0, 3.0]);
        let g = w.gather(Arc::new(vec![2, 0, 2])).unwrap();
        assert_eq!(g.data(), &[3.0, 1.0, 3.0]);
        g.sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 0.0, 2.0]);
        assert!(w.gather(Arc::new(vec![3])).is_err());
    }

    #[test]
    fn constants_build_no_graph() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let y = a.square().sum();
        assert!(!y.requires_grad());
        y.backward().unwrap();
        assert!(a.grad().is_none());
    }
}
