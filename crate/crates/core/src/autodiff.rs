//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to run the backward kernel. `backward` walks the tape once in
//! reverse; a tape cannot be replayed, so each training step records a fresh
//! one.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{Gradients, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Reshape(Var),
    L2Normalize {
        x: Var,
        eps: T,
    },
    /// Scalar-valued function whose local gradients were computed eagerly.
    External {
        inputs: Vec<Var>,
        local_grads: Vec<Vec<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked; read it back with [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a named parameter from `store`. Repeated calls with the same
    /// name return the same variable, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?
            .clone();
        let trainable = store.is_trainable(name);
        let var = self.push(value, Op::Leaf, trainable);
        self.params.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(y, Op::Dense { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(x), self.value(k), stride, padding)?;
        let rg = self.needs(&[x, k]);
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                k,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (y, argmax) = ops::maxpool2d(self.value(x), window)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::MaxPool { x, argmax }, rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
            .expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.map(x, |a| if a > T::zero() { a } else { T::zero() });
        let rg = self.needs(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.map(x, |a| {
            let a = a.as_f64();
            T::from_f64(if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            })
        });
        let rg = self.needs(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.map(x, |a| a * c);
        let rg = self.needs(&[x]);
        self.push(y, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum_f64() / v.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), rg)
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 1 {
                return Err(Error::Dimension(format!(
                    "concat expects 1-D parts, got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks same-shape tensors along a new leading axis.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Dimension("stack of zero tensors".into()));
        };
        let inner = self.value(first).shape().to_vec();
        let mut data = Vec::with_capacity(rows.len() * self.value(first).len());
        for &r in rows {
            if self.value(r).shape() != inner.as_slice() {
                return Err(Error::Dimension(format!(
                    "stack: shape {:?} differs from {inner:?}",
                    self.value(r).shape()
                )));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let mut shape = vec![rows.len()];
        shape.extend(inner);
        let rg = self.needs(rows);
        Ok(self.push(Tensor::new(shape, data)?, Op::Stack(rows.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// Scales each row (last axis) to unit Euclidean norm; rows with norm
    /// below `eps` are divided by `eps` instead.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let v = self.value(x);
        let d = *v.shape().last().expect("nonempty shape");
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let norm = row.iter().map(|a| a.as_f64().powi(2)).sum::<f64>().sqrt();
            let denom = norm.max(eps.as_f64());
            out.extend(row.iter().map(|a| T::from_f64(a.as_f64() / denom)));
        }
        let y = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(y, Op::L2Normalize { x, eps }, rg)
    }

    /// Records a scalar `value` that depends on `inputs` through the given
    /// local gradients `d value / d input`.
    pub fn external(
        &mut self,
        inputs: &[Var],
        value: f64,
        local_grads: Vec<Vec<T>>,
    ) -> Result<Var> {
        if inputs.len() != local_grads.len() {
            return Err(Error::Contract(format!(
                "external op: {} inputs but {} gradients",
                inputs.len(),
                local_grads.len()
            )));
        }
        for (&v, g) in inputs.iter().zip(&local_grads) {
            if self.value(v).len() != g.len() {
                return Err(Error::Dimension(format!(
                    "external op: gradient of length {} for input of shape {:?}",
                    g.len(),
                    self.value(v).shape()
                )));
            }
        }
        let rg = self.needs(inputs);
        Ok(self.push(
            Tensor::scalar(T::from_f64(value)),
            Op::External {
                inputs: inputs.to_vec(),
                local_grads,
            },
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar `loss`. Fills the gradient
    /// buffer of every node that requires one. A tape supports exactly one
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..n).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &gy, &mut grads);
            self.nodes[idx].value.set_grad(gy)?;
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::Dense { x, w, b } => {
                let g = ops::dense_backward(self.value(x), self.value(w), gy);
                self.accumulate(grads, x, g.x);
                self.accumulate(grads, w, g.w);
                self.accumulate(grads, b, g.b);
            }
            &Op::Conv2d {
                x,
                k,
                stride,
                padding,
            } => {
                let need_x = self.nodes[x.0].requires_grad;
                let g =
                    ops::conv2d_backward(self.value(x), self.value(k), gy, stride, padding, need_x);
                if let Some(gx) = g.x {
                    self.accumulate(grads, x, gx);
                }
                self.accumulate(grads, k, g.kernels);
            }
            Op::MaxPool { x, argmax } => {
                let gx = ops::maxpool2d_backward(self.value(*x).len(), argmax, gy);
                self.accumulate(grads, *x, gx);
            }
            &Op::Relu(x) => {
                let gx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, x, gx);
            }
            &Op::Sigmoid(x) => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, x, gx);
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, gy.to_vec());
                self.accumulate(grads, b, gy.to_vec());
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let ga = vb.iter().zip(gy).map(|(&y, &g)| g * y).collect();
                let gb = va.iter().zip(gy).map(|(&x, &g)| g * x).collect();
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Scale(x, c) => {
                self.accumulate(grads, x, gy.iter().map(|&g| g * c).collect());
            }
            &Op::Sum(x) => {
                self.accumulate(grads, x, vec![gy[0]; self.value(x).len()]);
            }
            &Op::Mean(x) => {
                let n = self.value(x).len();
                let g = T::from_f64(gy[0].as_f64() / n as f64);
                self.accumulate(grads, x, vec![g; n]);
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, gy[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            &Op::Reshape(x) => self.accumulate(grads, x, gy.to_vec()),
            &Op::L2Normalize { x, eps } => {
                let xv = self.value(x);
                let d = *xv.shape().last().expect("nonempty shape");
                let mut gx = Vec::with_capacity(xv.len());
                for (row, grow) in xv.data().chunks(d).zip(gy.chunks(d)) {
                    let norm = row.iter().map(|a| a.as_f64().powi(2)).sum::<f64>().sqrt();
                    if norm > eps.as_f64() {
                        // d(x/|x|) = (g - y (y.g)) / |x|
                        let dot: f64 = row
                            .iter()
                            .zip(grow)
                            .map(|(a, g)| a.as_f64() * g.as_f64())
                            .sum::<f64>()
                            / norm;
                        gx.extend(row.iter().zip(grow).map(|(a, g)| {
                            T::from_f64((g.as_f64() - a.as_f64() / norm * dot) / norm)
                        }));
                    } else {
                        let e = eps.as_f64();
                        gx.extend(grow.iter().map(|g| T::from_f64(g.as_f64() / e)));
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::External {
                inputs,
                local_grads,
            } => {
                for (&v, lg) in inputs.iter().zip(local_grads) {
                    self.accumulate(grads, v, lg.iter().map(|&l| l * gy[0]).collect());
                }
            }
        }
    }

    /// Gradients of every registered parameter that received one.
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::new();
        for (name, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                let t = Tensor::new(self.value(v).shape().to_vec(), g.to_vec())
                    .expect("gradient matches parameter shape");
                out.insert(name.clone(), t);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn half_squared_norm_gives_x() {
        let mut tape = Tape::<f64>::new();
        let data = vec![0.3, -1.2, 2.5];
        let x = tape.leaf(Tensor::vector(data.clone()));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), data.as_slice());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::vector(vec![2.0]), true);
        let mut tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grads()["w"].data(), &[4.0]);
    }
}
