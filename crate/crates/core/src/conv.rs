//! Convolution and pooling kernels for the 4-D `[B, C, H, W]` layout.

use crate::tensor::{Op, Tape, Tensor, TensorError, TensorId, TensorResult};

impl Tape {
    /// Cross-correlation of x[B,C,H,W] with w[Cout,C,k,k].
    /// Output spatial size is `floor((H + 2p - k) / stride) + 1`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        stride: usize,
        padding: usize,
    ) -> TensorResult<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                message: format!("expected x[B,C,H,W], w[Cout,C,k,k]; got {xs:?}, {ws:?}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                message: "stride must be >= 1".into(),
            });
        }
        let (b, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cin != c || kh != kw {
            return Err(TensorError::ShapeMismatch { op: "conv2d", left: xs, right: ws });
        }
        let k = kh;
        if k > h + 2 * padding || k > wd + 2 * padding {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                message: format!("kernel {k} larger than padded input {}x{}", h + 2 * padding, wd + 2 * padding),
            });
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (wd + 2 * padding - k) / stride + 1;
        let xv = self.data(x);
        let wv = self.data(w);
        let mut out = vec![0.0; b * cout * ho * wo];
        for bi in 0..b {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            let xbase = ((bi * c + ci) * h) * wd;
                            let wbase = ((co * c + ci) * k) * k;
                            for dy in 0..k {
                                let iy = (oh * stride + dy) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dx in 0..k {
                                    let ix = (ow * stride + dx) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += xv[xbase + iy as usize * wd + ix as usize]
                                        * wv[wbase + dy * k + dx];
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor { shape: vec![b, cout, ho, wo], data: out, requires_grad: false, grad: None },
            Op::Conv2d { x, w, stride, padding },
        ))
    }

    /// 2x2 average pooling with stride 2. Requires even spatial sizes.
    pub fn avg_pool2(&mut self, x: TensorId) -> TensorResult<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "avg_pool2",
                message: format!("expected 4-D input, got {xs:?}"),
            });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "avg_pool2",
                message: format!("spatial size {h}x{w} is not even"),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.data(x);
        let mut out = vec![0.0; b * c * ho * wo];
        for bc in 0..b * c {
            let src = &xv[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for oh in 0..ho {
                for ow in 0..wo {
                    let y0 = 2 * oh * w + 2 * ow;
                    dst[oh * wo + ow] =
                        0.25 * (src[y0] + src[y0 + 1] + src[y0 + w] + src[y0 + w + 1]);
                }
            }
        }
        Ok(self.push(
            Tensor { shape: vec![b, c, ho, wo], data: out, requires_grad: false, grad: None },
            Op::AvgPool2 { x },
        ))
    }

    /// Spatial mean: [B,C,H,W] -> [B,C].
    pub fn global_avg_pool(&mut self, x: TensorId) -> TensorResult<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "global_avg_pool",
                message: format!("expected 4-D input, got {xs:?}"),
            });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = (h * w) as f64;
        let xv = self.data(x);
        let mut out = vec![0.0; b * c];
        for bc in 0..b * c {
            out[bc] = xv[bc * h * w..(bc + 1) * h * w].iter().sum::<f64>() / hw;
        }
        Ok(self.push(
            Tensor { shape: vec![b, c], data: out, requires_grad: false, grad: None },
            Op::GlobalAvgPool { x },
        ))
    }

    /// Concatenate an equal block of zeros along the channel axis:
    /// [B,C,H,W] -> [B,2C,H,W].
    pub fn pad_channels(&mut self, x: TensorId) -> TensorResult<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "pad_channels",
                message: format!("expected 4-D input, got {xs:?}"),
            });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let plane = c * h * w;
        let xv = self.data(x);
        let mut out = vec![0.0; 2 * b * plane];
        for bi in 0..b {
            out[bi * 2 * plane..bi * 2 * plane + plane]
                .copy_from_slice(&xv[bi * plane..(bi + 1) * plane]);
        }
        Ok(self.push(
            Tensor { shape: vec![b, 2 * c, h, w], data: out, requires_grad: false, grad: None },
            Op::PadChannels { x },
        ))
    }
}

pub(crate) fn conv2d_backward(
    tape: &Tape,
    x: TensorId,
    w: TensorId,
    stride: usize,
    padding: usize,
    g: &[f64],
    adj: &mut Vec<Option<Vec<f64>>>,
) {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    let (b, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, _, k, _) = (ws[0], ws[1], ws[2], ws[3]);
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (wd + 2 * padding - k) / stride + 1;
    let xv = tape.data(x).to_vec();
    let wv = tape.data(w).to_vec();

    let want_dx = tape.needs_grad_through(x);
    {
        let gw = Tape::accumulate_pub(adj, w, cout * c * k * k);
        for bi in 0..b {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let gv = g[((bi * cout + co) * ho + oh) * wo + ow];
                        if gv == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            let xbase = ((bi * c + ci) * h) * wd;
                            let wbase = ((co * c + ci) * k) * k;
                            for dy in 0..k {
                                let iy = (oh * stride + dy) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dx in 0..k {
                                    let ix = (ow * stride + dx) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    gw[wbase + dy * k + dx] +=
                                        gv * xv[xbase + iy as usize * wd + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if want_dx {
        let gx = Tape::accumulate_pub(adj, x, b * c * h * wd);
        for bi in 0..b {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let gv = g[((bi * cout + co) * ho + oh) * wo + ow];
                        if gv == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            let xbase = ((bi * c + ci) * h) * wd;
                            let wbase = ((co * c + ci) * k) * k;
                            for dy in 0..k {
                                let iy = (oh * stride + dy) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dx in 0..k {
                                    let ix = (ow * stride + dx) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    gx[xbase + iy as usize * wd + ix as usize] +=
                                        gv * wv[wbase + dy * k + dx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_pool2_backward(
    tape: &Tape,
    x: TensorId,
    g: &[f64],
    adj: &mut Vec<Option<Vec<f64>>>,
) {
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (h / 2, w / 2);
    let gx = Tape::accumulate_pub(adj, x, b * c * h * w);
    for bc in 0..b * c {
        let src = &g[bc * ho * wo..(bc + 1) * ho * wo];
        let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let gv = 0.25 * src[oh * wo + ow];
                let y0 = 2 * oh * w + 2 * ow;
                dst[y0] += gv;
                dst[y0 + 1] += gv;
                dst[y0 + w] += gv;
                dst[y0 + w + 1] += gv;
            }
        }
    }
}

pub(crate) fn global_avg_pool_backward(
    tape: &Tape,
    x: TensorId,
    g: &[f64],
    adj: &mut Vec<Option<Vec<f64>>>,
) {
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = (h * w) as f64;
    let gx = Tape::accumulate_pub(adj, x, b * c * h * w);
    for bc in 0..b * c {
        let gv = g[bc] / hw;
        for v in gx[bc * h * w..(bc + 1) * h * w].iter_mut() {
            *v += gv;
        }
    }
}

pub(crate) fn pad_channels_backward(
    tape: &Tape,
    x: TensorId,
    g: &[f64],
    adj: &mut Vec<Option<Vec<f64>>>,
) {
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let plane = c * h * w;
    let gx = Tape::accumulate_pub(adj, x, b * plane);
    for bi in 0..b {
        let src = &g[bi * 2 * plane..bi * 2 * plane + plane];
        for (d, s) in gx[bi * plane..(bi + 1) * plane].iter_mut().zip(src) {
            *d += s;
        }
    }
}
