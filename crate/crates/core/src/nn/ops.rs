//! Dense kernels for the denoiser. Activations are channel-major
//! `[channels][frames][height][width]` so each convolution is one GEMM over
//! all frames at once.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Geom {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn positions(&self) -> usize {
        self.frames * self.plane()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConvKind {
    /// 3×3 spatial kernel, zero padding 1, applied per frame.
    Spatial,
    /// Width-3 kernel along the frame axis, zero padding 1, per pixel.
    Temporal,
}

impl ConvKind {
    pub fn taps(self) -> usize {
        match self {
            ConvKind::Spatial => 9,
            ConvKind::Temporal => 3,
        }
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of shape `m × k` and `op(b)`
/// of shape `k × n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides address exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` (`cin × positions`) into `(cin · taps) × positions`.
pub(crate) fn im2col(kind: ConvKind, x: &[f64], cin: usize, g: Geom) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; cin * kind.taps() * p];
    match kind {
        ConvKind::Spatial => {
            let (h, w) = (g.height as isize, g.width as isize);
            for ci in 0..cin {
                let src = &x[ci * p..(ci + 1) * p];
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let row = &mut cols[((ci * 9) + (ky * 3 + kx) as usize) * p..][..p];
                        let (dy, dx) = (ky - 1, kx - 1);
                        let (x0, x1) = ((-dx).max(0), (w - dx).min(w));
                        for f in 0..g.frames {
                            let base = f * g.plane();
                            for y in 0..h {
                                let sy = y + dy;
                                if sy < 0 || sy >= h {
                                    continue;
                                }
                                let dst = base + (y * w) as usize;
                                let srow = base + (sy * w) as usize;
                                for xx in x0..x1 {
                                    row[dst + xx as usize] = src[srow + (xx + dx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        ConvKind::Temporal => {
            let plane = g.plane();
            for ci in 0..cin {
                let src = &x[ci * p..(ci + 1) * p];
                for k in 0..3isize {
                    let row = &mut cols[(ci * 3 + k as usize) * p..][..p];
                    for f in 0..g.frames as isize {
                        let sf = f + k - 1;
                        if sf < 0 || sf >= g.frames as isize {
                            continue;
                        }
                        row[f as usize * plane..][..plane].copy_from_slice(&src[sf as usize * plane..][..plane]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input.
pub(crate) fn col2im(kind: ConvKind, cols: &[f64], cin: usize, g: Geom) -> Vec<f64> {
    let p = g.positions();
    let mut x = vec![0.0; cin * p];
    match kind {
        ConvKind::Spatial => {
            let (h, w) = (g.height as isize, g.width as isize);
            for ci in 0..cin {
                let dst = &mut x[ci * p..(ci + 1) * p];
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let row = &cols[((ci * 9) + (ky * 3 + kx) as usize) * p..][..p];
                        let (dy, dx) = (ky - 1, kx - 1);
                        let (x0, x1) = ((-dx).max(0), (w - dx).min(w));
                        for f in 0..g.frames {
                            let base = f * g.plane();
                            for y in 0..h {
                                let sy = y + dy;
                                if sy < 0 || sy >= h {
                                    continue;
                                }
                                let src = base + (y * w) as usize;
                                let drow = base + (sy * w) as usize;
                                for xx in x0..x1 {
                                    dst[drow + (xx + dx) as usize] += row[src + xx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        ConvKind::Temporal => {
            let plane = g.plane();
            for ci in 0..cin {
                let dst = &mut x[ci * p..(ci + 1) * p];
                for k in 0..3isize {
                    let row = &cols[(ci * 3 + k as usize) * p..][..p];
                    for f in 0..g.frames as isize {
                        let sf = f + k - 1;
                        if sf < 0 || sf >= g.frames as isize {
                            continue;
                        }
                        for (d, s) in dst[sf as usize * plane..][..plane]
                            .iter_mut()
                            .zip(&row[f as usize * plane..][..plane])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output (`cout × positions`) and the unfolded input for backward.
pub(crate) fn conv_forward(
    kind: ConvKind,
    x: &[f64],
    cin: usize,
    cout: usize,
    g: Geom,
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let k = cin * kind.taps();
    let cols = im2col(kind, x, cin, g);
    let mut y = vec![0.0; cout * p];
    for (co, row) in y.chunks_exact_mut(p).enumerate() {
        row.fill(bias[co]);
    }
    gemm(cout, k, p, weight, false, &cols, false, 1.0, &mut y);
    (y, cols)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    kind: ConvKind,
    dy: &[f64],
    cols: &[f64],
    cin: usize,
    cout: usize,
    g: Geom,
    weight: &[f64],
    need_dx: bool,
) -> ConvGrads {
    let p = g.positions();
    let k = cin * kind.taps();
    let mut dw = vec![0.0; cout * k];
    gemm(cout, p, k, dy, false, cols, true, 0.0, &mut dw);
    let db = dy.chunks_exact(p).map(|r| r.iter().sum()).collect();
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; k * p];
        gemm(k, cout, p, weight, true, dy, false, 0.0, &mut dcols);
        col2im(kind, &dcols, cin, g)
    });
    ConvGrads { dx, dw, db }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
