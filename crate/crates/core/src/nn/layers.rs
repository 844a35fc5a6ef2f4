//! Batched layer kernels for the fixed encoder architectures.
//!
//! Activations are stored per sample as flat row-major vectors; each layer
//! knows its per-sample input and output lengths.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Dense { input: usize, output: usize },
    Relu { len: usize },
    /// 3×3 kernel, stride 1, zero "same" padding.
    Conv3x3 { in_c: usize, out_c: usize, h: usize, w: usize },
    /// 2×2 window, stride 2; odd trailing rows/columns are dropped.
    MaxPool2 { c: usize, h: usize, w: usize },
    Flatten { len: usize },
    Dropout { p: f64, len: usize },
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Vec<f64>),
    Mask(Vec<bool>),
    Argmax(Vec<usize>),
    Scale(Vec<f64>),
    Nothing,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu { .. } => "relu",
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::MaxPool2 { .. } => "maxpool2x2",
            Layer::Flatten { .. } => "flatten",
            Layer::Dropout { .. } => "dropout",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output } => output * input + output,
            Layer::Conv3x3 { in_c, out_c, .. } => out_c * in_c * 9 + out_c,
            _ => 0,
        }
    }

    /// Number of weights (the bias follows them in the parameter slice).
    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output } => output * input,
            Layer::Conv3x3 { in_c, out_c, .. } => out_c * in_c * 9,
            _ => 0,
        }
    }

    /// Fan-in used for He initialisation.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Conv3x3 { in_c, .. } => in_c * 9,
            _ => 0,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Relu { len } | Layer::Flatten { len } | Layer::Dropout { len, .. } => len,
            Layer::Conv3x3 { out_c, h, w, .. } => out_c * h * w,
            Layer::MaxPool2 { c, h, w } => c * (h / 2) * (w / 2),
        }
    }

    pub fn forward(
        &self,
        params: &[f64],
        x: Vec<f64>,
        batch: usize,
        train: bool,
        rng: Option<&mut StreamRng>,
    ) -> Result<(Vec<f64>, Cache)> {
        let out_len = self.out_len();
        let (y, cache) = match *self {
            Layer::Dense { input, output } => {
                let (wts, bias) = params.split_at(output * input);
                let mut y = vec![0.0; batch * output];
                for (xb, yb) in x.chunks_exact(input).zip(y.chunks_exact_mut(output)) {
                    for (o, yo) in yb.iter_mut().enumerate() {
                        let row = &wts[o * input..(o + 1) * input];
                        *yo = bias[o] + row.iter().zip(xb).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                (y, Cache::Input(x))
            }
            Layer::Relu { .. } => {
                let mask: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                let y = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                (y, Cache::Mask(mask))
            }
            Layer::Conv3x3 { in_c, out_c, h, w } => {
                let (wts, bias) = params.split_at(out_c * in_c * 9);
                let mut y = vec![0.0; batch * out_len];
                let plane = h * w;
                for (xb, yb) in x.chunks_exact(in_c * plane).zip(y.chunks_exact_mut(out_len)) {
                    for co in 0..out_c {
                        let out = &mut yb[co * plane..(co + 1) * plane];
                        out.iter_mut().for_each(|v| *v = bias[co]);
                        for ci in 0..in_c {
                            let inp = &xb[ci * plane..(ci + 1) * plane];
                            let k = &wts[(co * in_c + ci) * 9..(co * in_c + ci + 1) * 9];
                            conv_accumulate(out, inp, k, h, w);
                        }
                    }
                }
                (y, Cache::Input(x))
            }
            Layer::MaxPool2 { c, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                let mut y = Vec::with_capacity(batch * out_len);
                let mut arg = Vec::with_capacity(batch * out_len);
                for xb in x.chunks_exact(c * h * w) {
                    for ch in 0..c {
                        let base = ch * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = base + 2 * oy * w + 2 * ox;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                                    if xb[idx] > xb[best] {
                                        best = idx;
                                    }
                                }
                                y.push(xb[best]);
                                arg.push(best);
                            }
                        }
                    }
                }
                (y, Cache::Argmax(arg))
            }
            Layer::Flatten { .. } => (x, Cache::Nothing),
            Layer::Dropout { p, .. } => {
                if train && p > 0.0 {
                    let rng = rng.ok_or_else(|| {
                        Error::usage("dropout in training mode needs an rng stream")
                    })?;
                    let keep = 1.0 - p;
                    let scale: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let y = x.iter().zip(&scale).map(|(a, s)| a * s).collect();
                    (y, Cache::Scale(scale))
                } else {
                    (x, Cache::Nothing)
                }
            }
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("{} layer", self.name()),
                "non-finite activation",
            ));
        }
        Ok((y, cache))
    }

    /// Propagates `grad_out` back through the layer, accumulating parameter
    /// gradients into `grad_params` and returning the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &Cache,
        grad_out: Vec<f64>,
        batch: usize,
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        match (self, cache) {
            (&Layer::Dense { input, output }, Cache::Input(x)) => {
                let wts = &params[..output * input];
                let (gw, gb) = grad_params.split_at_mut(output * input);
                let mut gx = vec![0.0; batch * input];
                for ((xb, gyb), gxb) in x
                    .chunks_exact(input)
                    .zip(grad_out.chunks_exact(output))
                    .zip(gx.chunks_exact_mut(input))
                {
                    for (o, &g) in gyb.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let row = &wts[o * input..(o + 1) * input];
                        let grow = &mut gw[o * input..(o + 1) * input];
                        for i in 0..input {
                            grow[i] += g * xb[i];
                            gxb[i] += g * row[i];
                        }
                    }
                }
                gx
            }
            (Layer::Relu { .. }, Cache::Mask(mask)) => grad_out
                .iter()
                .zip(mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect(),
            (&Layer::Conv3x3 { in_c, out_c, h, w }, Cache::Input(x)) => {
                let plane = h * w;
                let out_len = out_c * plane;
                let wts = &params[..out_c * in_c * 9];
                let (gw, gb) = grad_params.split_at_mut(out_c * in_c * 9);
                let mut gx = vec![0.0; batch * in_c * plane];
                for ((xb, gyb), gxb) in x
                    .chunks_exact(in_c * plane)
                    .zip(grad_out.chunks_exact(out_len))
                    .zip(gx.chunks_exact_mut(in_c * plane))
                {
                    for co in 0..out_c {
                        let gy = &gyb[co * plane..(co + 1) * plane];
                        gb[co] += gy.iter().sum::<f64>();
                        for ci in 0..in_c {
                            let kidx = (co * in_c + ci) * 9;
                            let inp = &xb[ci * plane..(ci + 1) * plane];
                            conv_weight_grad(&mut gw[kidx..kidx + 9], inp, gy, h, w);
                            let gin = &mut gxb[ci * plane..(ci + 1) * plane];
                            conv_input_grad(gin, &wts[kidx..kidx + 9], gy, h, w);
                        }
                    }
                }
                gx
            }
            (&Layer::MaxPool2 { c, h, w }, Cache::Argmax(arg)) => {
                let in_len = c * h * w;
                let out_len = self.out_len();
                let mut gx = vec![0.0; batch * in_len];
                for ((gyb, argb), gxb) in grad_out
                    .chunks_exact(out_len)
                    .zip(arg.chunks_exact(out_len))
                    .zip(gx.chunks_exact_mut(in_len))
                {
                    for (&g, &a) in gyb.iter().zip(argb) {
                        gxb[a] += g;
                    }
                }
                gx
            }
            (Layer::Dropout { .. }, Cache::Scale(scale)) => {
                grad_out.iter().zip(scale).map(|(g, s)| g * s).collect()
            }
            (Layer::Flatten { .. } | Layer::Dropout { .. }, Cache::Nothing) => grad_out,
            _ => unreachable!("cache variant does not match layer {}", self.name()),
        }
    }
}

/// Valid output range along one axis for kernel offset `k` in {0,1,2}.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

fn conv_accumulate(out: &mut [f64], inp: &[f64], k: &[f64], h: usize, w: usize) {
    for ky in 0..3 {
        let (y0, y1) = valid_range(ky, h);
        for kx in 0..3 {
            let wt = k[ky * 3 + kx];
            let (x0, x1) = valid_range(kx, w);
            for oy in y0..y1 {
                let iy = oy + ky - 1;
                let orow = &mut out[oy * w + x0..oy * w + x1];
                let irow = &inp[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                for (o, i) in orow.iter_mut().zip(irow) {
                    *o += wt * i;
                }
            }
        }
    }
}

fn conv_weight_grad(gk: &mut [f64], inp: &[f64], gy: &[f64], h: usize, w: usize) {
    for ky in 0..3 {
        let (y0, y1) = valid_range(ky, h);
        for kx in 0..3 {
            let (x0, x1) = valid_range(kx, w);
            let mut acc = 0.0;
            for oy in y0..y1 {
                let iy = oy + ky - 1;
                let grow = &gy[oy * w + x0..oy * w + x1];
                let irow = &inp[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
            }
            gk[ky * 3 + kx] += acc;
        }
    }
}

fn conv_input_grad(gin: &mut [f64], k: &[f64], gy: &[f64], h: usize, w: usize) {
    for ky in 0..3 {
        let (y0, y1) = valid_range(ky, h);
        for kx in 0..3 {
            let wt = k[ky * 3 + kx];
            let (x0, x1) = valid_range(kx, w);
            for oy in y0..y1 {
                let iy = oy + ky - 1;
                let grow = &gy[oy * w + x0..oy * w + x1];
                let irow = &mut gin[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                for (i, g) in irow.iter_mut().zip(grow) {
                    *i += wt * g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_naive_loop() {
        let (in_c, out_c, h, w) = (2, 3, 4, 5);
        let layer = Layer::Conv3x3 { in_c, out_c, h, w };
        let params: Vec<f64> = (0..layer.param_count()).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
        let x: Vec<f64> = (0..in_c * h * w).map(|i| ((i * 5) % 13) as f64 * 0.2 - 1.0).collect();
        let (y, _) = layer.forward(&params, x.clone(), 1, false, None).unwrap();
        for co in 0..out_c {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = params[out_c * in_c * 9 + co];
                    for ci in 0..in_c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += params[((co * in_c + ci) * 3 + ky) * 3 + kx]
                                    * x[ci * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    let got = y[co * h * w + oy * w + ox];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_window_maximum_and_routes_gradient() {
        let layer = Layer::MaxPool2 { c: 1, h: 2, w: 2 };
        let (y, cache) = layer.forward(&[], vec![1.0, 4.0, 3.0, 2.0], 1, false, None).unwrap();
        assert_eq!(y, vec![4.0]);
        let gx = layer.backward(&[], &cache, vec![1.5], 1, &mut []);
        assert_eq!(gx, vec![0.0, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let layer = Layer::Dropout { p: 0.5, len: 3 };
        let (y, _) = layer.forward(&[], vec![1.0, 2.0, 3.0], 1, false, None).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_in_training_requires_rng() {
        let layer = Layer::Dropout { p: 0.5, len: 3 };
        assert!(matches!(
            layer.forward(&[], vec![1.0, 2.0, 3.0], 1, true, None),
            Err(Error::Usage(_))
        ));
    }
}
