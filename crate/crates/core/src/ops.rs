//! Convolutions built from `index_select` + `matmul` (im2col).
//!
//! The backward passes of these primitives are exact, which the library
//! convolution kernels are not for every stride/dilation combination.

use candle_core::{Result, Tensor};

/// 1-D convolution. `x`: `[B, C, L]`, `w`: `[O, C/groups, K]`, symmetric zero padding.
pub(crate) fn conv1d(
    x: &Tensor,
    w: &Tensor,
    padding: usize,
    stride: usize,
    dilation: usize,
    groups: usize,
) -> Result<Tensor> {
    let x = if padding > 0 { x.pad_with_zeros(2, padding, padding)? } else { x.clone() };
    if groups > 1 {
        let (_, c, _) = x.dims3()?;
        let o = w.dim(0)?;
        let (cg, og) = (c / groups, o / groups);
        let parts = (0..groups)
            .map(|g| conv1d(&x.narrow(1, g * cg, cg)?, &w.narrow(0, g * og, og)?, 0, stride, dilation, 1))
            .collect::<Result<Vec<_>>>()?;
        return Tensor::cat(&parts, 1);
    }
    let (b, c, l) = x.dims3()?;
    let (o, _, k) = w.dims3()?;
    let span = dilation * (k - 1) + 1;
    if l < span {
        candle_core::bail!("conv1d input of length {l} is shorter than the receptive field {span}");
    }
    let l_out = (l - span) / stride + 1;
    let w2 = w.reshape((o, c * k))?;
    let cols = if k == 1 && stride == 1 {
        x
    } else {
        let idx: Vec<u32> = (0..k).flat_map(|j| (0..l_out).map(move |t| (t * stride + j * dilation) as u32)).collect();
        let idx = Tensor::from_vec(idx, k * l_out, x.device())?;
        x.contiguous()?.index_select(&idx, 2)?.reshape((b, c * k, l_out))?
    };
    w2.broadcast_matmul(&cols)
}

/// 2-D convolution with equal stride and padding on both axes. `x`: `[B, C, H, W]`, `w`: `[O, C, KH, KW]`.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let x = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?
    } else {
        x.clone()
    };
    let (b, c, h, wd) = x.dims4()?;
    let (o, _, kh, kw) = w.dims4()?;
    if h < kh || wd < kw {
        candle_core::bail!("conv2d input {h}x{wd} is smaller than the kernel {kh}x{kw}");
    }
    let (ho, wo) = ((h - kh) / stride + 1, (wd - kw) / stride + 1);
    let mut idx = Vec::with_capacity(kh * kw * ho * wo);
    for i in 0..kh {
        for j in 0..kw {
            for r in 0..ho {
                for s in 0..wo {
                    idx.push(((r * stride + i) * wd + s * stride + j) as u32);
                }
            }
        }
    }
    let idx = Tensor::from_vec(idx, kh * kw * ho * wo, x.device())?;
    let cols = x.contiguous()?.reshape((b, c, h * wd))?.index_select(&idx, 2)?.reshape((b, c * kh * kw, ho * wo))?;
    w.reshape((o, c * kh * kw))?.broadcast_matmul(&cols)?.reshape((b, o, ho, wo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    /// Direct-sum reference.
    fn reference1d(
        x: &[f64],
        w: &[f64],
        (b, c, l): (usize, usize, usize),
        (o, k): (usize, usize),
        stride: usize,
        dil: usize,
    ) -> Vec<f64> {
        let l_out = (l - dil * (k - 1) - 1) / stride + 1;
        let mut y = vec![0.0; b * o * l_out];
        for bi in 0..b {
            for oi in 0..o {
                for t in 0..l_out {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for j in 0..k {
                            s += w[(oi * c + ci) * k + j] * x[(bi * c + ci) * l + t * stride + j * dil];
                        }
                    }
                    y[(bi * o + oi) * l_out + t] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let d = Device::Cpu;
        for (stride, dil, k) in [(1, 1, 1), (1, 3, 7), (4, 1, 8), (5, 1, 10)] {
            let (b, c, l, o) = (2, 3, 41, 4);
            let x: Vec<f64> = (0..b * c * l).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let w: Vec<f64> = (0..o * c * k).map(|i| ((i * 13 % 7) as f64 - 3.0) / 2.0).collect();
            let xt = Tensor::from_vec(x.clone(), (b, c, l), &d).unwrap();
            let wt = Tensor::from_vec(w.clone(), (o, c, k), &d).unwrap();
            let got: Vec<f64> = conv1d(&xt, &wt, 0, stride, dil, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = reference1d(&x, &w, (b, c, l), (o, k), stride, dil);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grouped_conv1d_is_blockwise() {
        let d = Device::Cpu;
        let x = Tensor::randn(0f64, 1.0, (1, 4, 20), &d).unwrap();
        let w = Tensor::randn(0f64, 1.0, (6, 2, 3), &d).unwrap();
        let y = conv1d(&x, &w, 1, 2, 1, 2).unwrap();
        let y1 = conv1d(&x.narrow(1, 2, 2).unwrap(), &w.narrow(0, 3, 3).unwrap(), 1, 2, 1, 1).unwrap();
        let diff =
            (y.narrow(1, 3, 3).unwrap() - y1).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let d = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (1, 2, 6, 9), &d).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 2, 3, 3), &d).unwrap()).unwrap();
        let r = Tensor::randn(0f64, 1.0, (1, 3, 3, 5), &d).unwrap();
        let f = |x: &Tensor, w: &Tensor| conv2d(x, w, 1, 2).unwrap().mul(&r).unwrap().sum_all().unwrap();
        let g = f(x.as_tensor(), w.as_tensor()).backward().unwrap();
        let gw: Vec<f64> = g.get(w.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = w.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut m = base.clone();
            m[i] -= 1e-6;
            let lp = f(x.as_tensor(), &Tensor::from_vec(p, w.dims(), &d).unwrap()).to_scalar::<f64>().unwrap();
            let lm = f(x.as_tensor(), &Tensor::from_vec(m, w.dims(), &d).unwrap()).to_scalar::<f64>().unwrap();
            assert!(((lp - lm) / 2e-6 - gw[i]).abs() < 1e-6, "coordinate {i}");
        }
    }
}
