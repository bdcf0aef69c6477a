//! im2col convolution kernels (cross-correlation, zero padding).

use crate::error::{PanError, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input.dims4("conv2d")?;
        let [f, kc, kh, kw] = kernel.dims4("conv2d")?;
        if stride == 0 {
            return Err(PanError::Parameter {
                op: "conv2d",
                detail: "stride must be at least 1".into(),
            });
        }
        if kc != c {
            return Err(PanError::dim("conv2d", format!("input has {c} channels but kernel expects {kc}")));
        }
        if bias.shape() != [f] {
            return Err(PanError::dim(
                "conv2d",
                format!("bias shape {:?} does not match {f} filters", bias.shape()),
            ));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(PanError::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let dst = &mut cols[row..row + p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, o) in out.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *o = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let src = &cols[row..row + p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, g: &ConvGeom) -> Tensor {
    let (k, p) = (g.k(), g.p());
    let in_per = g.c * g.h * g.w;
    let out_per = g.f * p;
    let mut out = vec![0.0; g.n * out_per];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..g.n {
        let x = &input.data()[n * in_per..(n + 1) * in_per];
        let y = &mut out[n * out_per..(n + 1) * out_per];
        for (f, row) in y.chunks_mut(p).enumerate() {
            row.fill(bias.data()[f]);
        }
        let cols_ref: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut cols);
            &cols
        };
        gemm(g.f, k, p, kernel.data(), false, cols_ref, false, 1.0, y);
    }
    Tensor::new(&[g.n, g.f, g.ho, g.wo], out).expect("conv output shape")
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub(crate) fn backward(input: &Tensor, kernel: &Tensor, g: &ConvGeom, dy: &Tensor, need: [bool; 3]) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    let in_per = g.c * g.h * g.w;
    let out_per = g.f * p;
    let mut dx = need[0].then(|| vec![0.0; g.n * in_per]);
    let mut dw = need[1].then(|| vec![0.0; g.f * k]);
    let mut db = need[2].then(|| vec![0.0; g.f]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    let mut dcols = if need[0] { vec![0.0; k * p] } else { Vec::new() };
    for n in 0..g.n {
        let gy = &dy.data()[n * out_per..(n + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (f, row) in gy.chunks(p).enumerate() {
                db[f] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[n * in_per..(n + 1) * in_per];
            let cols_ref: &[f64] = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut cols);
                &cols
            };
            // dW[F,K] += dY[F,P] * cols[K,P]^T
            gemm(g.f, p, k, gy, false, cols_ref, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_per..(n + 1) * in_per];
            if g.is_pointwise() {
                // dX[C,P] += W[F,C]^T * dY[F,P]
                gemm(k, g.f, p, kernel.data(), true, gy, false, 1.0, dxn);
            } else {
                gemm(k, g.f, p, kernel.data(), true, gy, false, 0.0, &mut dcols);
                col2im_add(&dcols, g, dxn);
            }
        }
    }
    ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape(), d).expect("dx shape")),
        kernel: dw.map(|d| Tensor::new(kernel.shape(), d).expect("dw shape")),
        bias: db.map(|d| Tensor::new(&[g.f], d).expect("db shape")),
    }
}
