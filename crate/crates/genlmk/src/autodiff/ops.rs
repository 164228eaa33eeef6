//! Elementwise operations, reductions, dense algebra and normalization.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Ix2, Ix4, IxDyn};

impl<F: Scalar> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let data = &*self.data() + &*other.data();
        Tensor::from_op(
            data,
            vec![self.clone(), other.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                node.parent(0).accum_grad(&g);
                node.parent(1).accum_grad(&g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let data = &*self.data() - &*other.data();
        Tensor::from_op(
            data,
            vec![self.clone(), other.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                node.parent(0).accum_grad(&g);
                node.parent(1).accum_grad(&g.mapv(|v| -v));
            }),
        )
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let data = &*self.data() * &*other.data();
        Tensor::from_op(
            data,
            vec![self.clone(), other.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                let a = node.parent(0).data().clone();
                let b = node.parent(1).data().clone();
                node.parent(0).accum_grad(&(&g * &b));
                node.parent(1).accum_grad(&(&g * &a));
            }),
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        let data = self.data().mapv(|v| v + c);
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(|node| node.parent(0).accum_grad(&node.out_grad())),
        )
    }

    pub fn mul_scalar(&self, c: F) -> Tensor<F> {
        let data = self.data().mapv(|v| v * c);
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(move |node| {
                node.parent(0).accum_grad(&node.out_grad().mapv(|g| g * c));
            }),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        self.mul_scalar(-F::one())
    }

    pub fn sqr(&self) -> Tensor<F> {
        let data = self.data().mapv(|v| v * v);
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                let x = node.parent(0).data().clone();
                let two = F::from_f64(2.0);
                node.parent(0).accum_grad(&(&g * &x.mapv(|v| two * v)));
            }),
        )
    }

    pub fn abs(&self) -> Tensor<F> {
        let data = self.data().mapv(|v| v.abs());
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                let x = node.parent(0).data().clone();
                let sign = x.mapv(|v| {
                    if v > F::zero() {
                        F::one()
                    } else if v < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    }
                });
                node.parent(0).accum_grad(&(&g * &sign));
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<F> {
        let data = self.data().mapv(|v| v.tanh());
        let y = data.clone();
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(move |node| {
                let g = node.out_grad();
                let dy = &g * &y.mapv(|v| F::one() - v * v);
                node.parent(0).accum_grad(&dy);
            }),
        )
    }

    pub fn leaky_relu(&self, slope: F) -> Tensor<F> {
        let data = self.data().mapv(|v| if v > F::zero() { v } else { v * slope });
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(move |node| {
                let g = node.out_grad();
                let x = node.parent(0).data().clone();
                let dx = ndarray::Zip::from(&g)
                    .and(&x)
                    .map_collect(|&g, &x| if x > F::zero() { g } else { g * slope });
                node.parent(0).accum_grad(&dx);
            }),
        )
    }

    pub fn relu(&self) -> Tensor<F> {
        self.leaky_relu(F::zero())
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(&self) -> Tensor<F> {
        let data = self
            .data()
            .mapv(|v| v.max(F::zero()) + (-v.abs()).exp().ln_1p());
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                let x = node.parent(0).data().clone();
                let dx = ndarray::Zip::from(&g)
                    .and(&x)
                    .map_collect(|&g, &x| g * (F::one() / (F::one() + (-x).exp())));
                node.parent(0).accum_grad(&dx);
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(
            ArrayD::from_elem(IxDyn(&[]), s),
            vec![self.clone()],
            Box::new(|node| {
                let g = *node.out_grad().iter().next().unwrap();
                let shape = node.parent(0).data().raw_dim();
                node.parent(0).accum_grad(&ArrayD::from_elem(shape, g));
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_f64(self.len() as f64);
        self.sum_all().mul_scalar(F::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let data = self
            .data()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible size");
        Tensor::from_op(
            data,
            vec![self.clone()],
            Box::new(|node| {
                let g = node.out_grad();
                let shape = node.parent(0).data().raw_dim();
                let g = g.into_shape_with_order(shape).unwrap();
                node.parent(0).accum_grad(&g);
            }),
        )
    }

    /// Dense product of 2-d tensors: `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        let a = self.data().clone().into_dimensionality::<Ix2>().unwrap();
        let b = other.data().clone().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(a.ncols(), b.nrows(), "matmul: inner dims differ");
        let y = a.dot(&b).into_dyn();
        Tensor::from_op(
            y,
            vec![self.clone(), other.clone()],
            Box::new(|node| {
                let g = node
                    .out_grad()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let a = node
                    .parent(0)
                    .data()
                    .clone()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let b = node
                    .parent(1)
                    .data()
                    .clone()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                node.parent(0).accum_grad(&g.dot(&b.t()).into_dyn());
                node.parent(1).accum_grad(&a.t().dot(&g).into_dyn());
            }),
        )
    }

    /// Adds a `[features]` bias to each row of a `[batch, features]` tensor.
    pub fn add_row_bias(&self, bias: &Tensor<F>) -> Tensor<F> {
        let x = self.data().clone().into_dimensionality::<Ix2>().unwrap();
        let b = self.shape();
        assert_eq!(bias.len(), b[1], "bias length must match features");
        let bias_arr = bias.data().clone();
        let bias1 = bias_arr.view().into_shape_with_order((1, bias.len())).unwrap().to_owned();
        let y = (&x + &bias1).into_dyn();
        Tensor::from_op(
            y,
            vec![self.clone(), bias.clone()],
            Box::new(|node| {
                let g = node.out_grad().into_dimensionality::<Ix2>().unwrap();
                node.parent(0).accum_grad(&g.clone().into_dyn());
                let db = g.sum_axis(Axis(0));
                let shape = node.parent(1).data().raw_dim();
                node.parent(1)
                    .accum_grad(&db.into_dyn().into_shape_with_order(shape).unwrap());
            }),
        )
    }

    /// Adds a `[channels]` bias over the channel axis of `[b, c, h, w]`.
    pub fn add_channel_bias(&self, bias: &Tensor<F>) -> Tensor<F> {
        let x = self.data().clone().into_dimensionality::<Ix4>().unwrap();
        let (_, c, _, _) = x.dim();
        assert_eq!(bias.len(), c, "bias length must match channels");
        let bv = bias.data().clone();
        let mut y = x;
        for (ci, mut ch) in y.axis_iter_mut(Axis(1)).enumerate() {
            ch += bv[[ci]];
        }
        Tensor::from_op(
            y.into_dyn(),
            vec![self.clone(), bias.clone()],
            Box::new(|node| {
                let g = node.out_grad().into_dimensionality::<Ix4>().unwrap();
                node.parent(0).accum_grad(&g.clone().into_dyn());
                let c = g.dim().1;
                let mut db = ArrayD::zeros(IxDyn(&[c]));
                for (ci, ch) in g.axis_iter(Axis(1)).enumerate() {
                    db[[ci]] = ch.iter().copied().sum();
                }
                node.parent(1).accum_grad(&db);
            }),
        )
    }

    /// Per-sample, per-channel normalization of `[b, c, h, w]` (no affine).
    pub fn instance_norm(&self, eps: F) -> Tensor<F> {
        let x = self.data().clone().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = x.dim();
        let n = F::from_f64((h * w) as f64);
        let mut y = x.clone();
        let mut inv_std = ndarray::Array2::<F>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let mut slice = y.slice_mut(ndarray::s![bi, ci, .., ..]);
                let mean = slice.iter().copied().sum::<F>() / n;
                let var = slice
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<F>()
                    / n;
                let is = F::one() / (var + eps).sqrt();
                inv_std[[bi, ci]] = is;
                slice.mapv_inplace(|v| (v - mean) * is);
            }
        }
        let y_saved = y.clone();
        Tensor::from_op(
            y.into_dyn(),
            vec![self.clone()],
            Box::new(move |node| {
                let g = node.out_grad().into_dimensionality::<Ix4>().unwrap();
                let mut dx = g.clone();
                for bi in 0..b {
                    for ci in 0..c {
                        let gs = g.slice(ndarray::s![bi, ci, .., ..]);
                        let ys = y_saved.slice(ndarray::s![bi, ci, .., ..]);
                        let mean_g = gs.iter().copied().sum::<F>() / n;
                        let mean_gy = gs
                            .iter()
                            .zip(ys.iter())
                            .map(|(&g, &y)| g * y)
                            .sum::<F>()
                            / n;
                        let is = inv_std[[bi, ci]];
                        let mut ds = dx.slice_mut(ndarray::s![bi, ci, .., ..]);
                        ndarray::Zip::from(&mut ds).and(&ys).for_each(|d, &y| {
                            *d = is * (*d - mean_g - y * mean_gy);
                        });
                    }
                }
                node.parent(0).accum_grad(&dx.into_dyn());
            }),
        )
    }
}
