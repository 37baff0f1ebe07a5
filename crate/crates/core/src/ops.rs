//! Forward and backward kernels for the layers the networks are built from.
//!
//! These are plain functions over [`Tensor`]s; the tape in
//! [`crate::autodiff`] records which kernel produced each node and calls the
//! matching backward kernel.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Leading batch size and feature width of a dense-layer input.
fn dense_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match *x.shape() {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        ref s => Err(Error::Dimension(format!(
            "dense input x must be 1-D or 2-D, got shape {s:?}"
        ))),
    }
}

fn dense_check<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (batch, n_in) = dense_dims(x)?;
    let [n_out, w_in] = *w.shape() else {
        return Err(Error::Dimension(format!(
            "dense weight w must be 2-D, got shape {:?}",
            w.shape()
        )));
    };
    if w_in != n_in {
        return Err(Error::Dimension(format!(
            "dense: x has {n_in} features but w expects {w_in} (w shape {:?})",
            w.shape()
        )));
    }
    if b.shape() != [n_out] {
        return Err(Error::Dimension(format!(
            "dense: bias b has shape {:?}, expected [{n_out}]",
            b.shape()
        )));
    }
    Ok((batch, n_in, n_out))
}

/// `y[o] = b[o] + sum_i w[o,i] * x[i]`, applied row-wise for a 2-D `x`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, n_in, n_out) = dense_check(x, w, b)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(batch * n_out);
    for r in 0..batch {
        let xr = &xd[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let wr = &wd[o * n_in..(o + 1) * n_in];
            let mut acc = bd[o].as_f64();
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi.as_f64() * xi.as_f64();
            }
            out.push(T::from_f64(acc));
        }
    }
    let shape = if x.shape().len() == 1 {
        vec![n_out]
    } else {
        vec![batch, n_out]
    };
    Tensor::new(shape, out)
}

pub struct DenseGrads<T> {
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gy: &[T]) -> DenseGrads<T> {
    let (batch, n_in) = dense_dims(x).expect("checked in forward");
    let n_out = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0f64; batch * n_in];
    let mut gw = vec![0.0f64; n_out * n_in];
    let mut gb = vec![0.0f64; n_out];
    for r in 0..batch {
        let xr = &xd[r * n_in..(r + 1) * n_in];
        let gxr = &mut gx[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let g = gy[r * n_out + o].as_f64();
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wr = &wd[o * n_in..(o + 1) * n_in];
            let gwr = &mut gw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                gxr[i] += g * wr[i].as_f64();
                gwr[i] += g * xr[i].as_f64();
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
    DenseGrads {
        x: cast(gx),
        w: cast(gw),
        b: cast(gb),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        x_shape: &[usize],
        k_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [channels, height, width] = *x_shape else {
            return Err(Error::Dimension(format!(
                "conv2d input x must be C×H×W, got {x_shape:?}"
            )));
        };
        let [filters, kc, kh, kw] = *k_shape else {
            return Err(Error::Dimension(format!(
                "conv2d kernels must be F×C×kh×kw, got {k_shape:?}"
            )));
        };
        if kc != channels {
            return Err(Error::Dimension(format!(
                "conv2d: x has {channels} channels, kernels expect {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be positive".into()));
        }
        if kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            padding,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kw) / stride + 1,
        })
    }

    /// Output coordinate that input row `i` reaches through kernel row `k`.
    #[inline]
    fn out_index(&self, i: usize, k: usize, out_len: usize) -> Option<usize> {
        let num = (i + self.padding).checked_sub(k)?;
        if num % self.stride != 0 {
            return None;
        }
        let o = num / self.stride;
        (o < out_len).then_some(o)
    }

    /// For every input cell, the list of `(kernel offset, output offset)`
    /// pairs it contributes to, within one channel/filter plane.
    fn taps(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let mut taps = Vec::with_capacity(self.kh * self.kw);
        for ki in 0..self.kh {
            let Some(oi) = self.out_index(i, ki, self.out_h) else {
                continue;
            };
            for kj in 0..self.kw {
                let Some(oj) = self.out_index(j, kj, self.out_w) else {
                    continue;
                };
                taps.push((ki * self.kw + kj, oi * self.out_w + oj));
            }
        }
        taps
    }
}

/// Nonzero input cells as `(channel, taps, value)`; zero cells contribute
/// nothing to the output or to the kernel gradient.
fn nonzero_cells<T: Scalar>(geo: &ConvGeometry, x: &[T]) -> Vec<(usize, usize, f64)> {
    let plane = geo.height * geo.width;
    x.iter()
        .enumerate()
        .filter(|(_, v)| !v.is_zero())
        .map(|(idx, v)| (idx / plane, idx % plane, v.as_f64()))
        .collect()
}

/// Cross-correlation of a C×H×W input with F kernels of C×kh×kw.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(x.shape(), kernels.shape(), stride, padding)?;
    let taps: Vec<Vec<(usize, usize)>> = (0..geo.height * geo.width)
        .map(|p| geo.taps(p / geo.width, p % geo.width))
        .collect();
    let cells = nonzero_cells(&geo, x.data());
    let ksize = geo.kh * geo.kw;
    let out_plane = geo.out_h * geo.out_w;
    let kd = kernels.data();
    let mut out = vec![0.0f64; geo.filters * out_plane];
    for f in 0..geo.filters {
        let o = &mut out[f * out_plane..(f + 1) * out_plane];
        for &(c, pos, v) in &cells {
            let kbase = (f * geo.channels + c) * ksize;
            for &(kk, oo) in &taps[pos] {
                o[oo] += kd[kbase + kk].as_f64() * v;
            }
        }
    }
    Tensor::new(
        vec![geo.filters, geo.out_h, geo.out_w],
        out.into_iter().map(T::from_f64).collect(),
    )
}

pub struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub kernels: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    gy: &[T],
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let geo =
        ConvGeometry::new(x.shape(), kernels.shape(), stride, padding).expect("checked in forward");
    let taps: Vec<Vec<(usize, usize)>> = (0..geo.height * geo.width)
        .map(|p| geo.taps(p / geo.width, p % geo.width))
        .collect();
    let ksize = geo.kh * geo.kw;
    let out_plane = geo.out_h * geo.out_w;
    let kd = kernels.data();

    let cells = nonzero_cells(&geo, x.data());
    let mut gk = vec![0.0f64; kd.len()];
    for f in 0..geo.filters {
        let g = &gy[f * out_plane..(f + 1) * out_plane];
        for &(c, pos, v) in &cells {
            let kbase = (f * geo.channels + c) * ksize;
            for &(kk, oo) in &taps[pos] {
                gk[kbase + kk] += g[oo].as_f64() * v;
            }
        }
    }

    let gx = need_input_grad.then(|| {
        let plane = geo.height * geo.width;
        let mut gx = vec![0.0f64; geo.channels * plane];
        for c in 0..geo.channels {
            for (pos, t) in taps.iter().enumerate() {
                let mut acc = 0.0f64;
                for f in 0..geo.filters {
                    let kbase = (f * geo.channels + c) * ksize;
                    let g = &gy[f * out_plane..(f + 1) * out_plane];
                    for &(kk, oo) in t {
                        acc += kd[kbase + kk].as_f64() * g[oo].as_f64();
                    }
                }
                gx[c * plane + pos] = acc;
            }
        }
        gx.into_iter().map(T::from_f64).collect()
    });

    ConvGrads {
        x: gx,
        kernels: gk.into_iter().map(T::from_f64).collect(),
    }
}

/// Non-overlapping max pooling with stride equal to the window. Border
/// windows are truncated, so the output is `ceil(H/window) × ceil(W/window)`.
/// Returns the pooled tensor and, per output cell, the flat input index of
/// the first maximum in row-major scan order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [channels, height, width] = *x.shape() else {
        return Err(Error::Dimension(format!(
            "maxpool2d input must be C×H×W, got {:?}",
            x.shape()
        )));
    };
    if window == 0 {
        return Err(Error::Dimension("maxpool2d window must be positive".into()));
    }
    let out_h = height.div_ceil(window);
    let out_w = width.div_ceil(window);
    let xd = x.data();
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        for oi in 0..out_h {
            for oj in 0..out_w {
                let mut best_idx = usize::MAX;
                let mut best = T::neg_infinity();
                for i in oi * window..((oi + 1) * window).min(height) {
                    for j in oj * window..((oj + 1) * window).min(width) {
                        let idx = (c * height + i) * width + j;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![channels, out_h, out_w], out)?, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], gy: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(gy) {
        gx[idx] = gx[idx] + g;
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn dense_identity_and_forced() {
        let x = Tensor::<f32>::vector(vec![1.0, 2.0]);
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[1.0, 2.0]);

        let x = Tensor::<f32>::vector(vec![1.0, 1.0]);
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![-2.0]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn dense_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let b = random(&[3], &mut rng);
        let y = dense_forward(&x.cast::<f32>(), &w.cast::<f32>(), &b.cast::<f32>()).unwrap();
        for o in 0..3 {
            let mut expected = b.data()[o];
            for i in 0..4 {
                expected += w.data()[o * 4 + i] * x.data()[i];
            }
            assert!((y.data()[o] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_shape_mismatch_names_operands() {
        let x = Tensor::<f32>::vector(vec![1.0, 2.0, 3.0]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        let err = dense_forward(&x, &w, &b).unwrap_err().to_string();
        assert!(err.contains("x") && err.contains("w"), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 4, 5], &mut rng);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::<f32>::full(&[1, 2, 2], 1.0);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &k, 1, 0),
            Err(Error::Dimension(_))
        ));
        assert!(conv2d_forward(&x, &k, 1, 1).is_ok());
    }

    #[test]
    fn conv_strided_output_size() {
        let x = Tensor::<f32>::full(&[1, 5, 5], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        // corner sees a 2x2 patch of ones, centre a full 3x3
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[4], 9.0);
    }

    #[test]
    fn maxpool_cases() {
        let x = Tensor::<f32>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let x = Tensor::<f32>::full(&[2, 5, 3], 0.25);
        let (y, _) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }
}
