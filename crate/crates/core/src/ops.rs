//! Forward kernels and their vector-Jacobian products on plain tensors.
//!
//! Everything here is a pure function of its inputs. The autodiff graph in
//! [`crate::graph`] records which kernel produced a node and calls the
//! matching `*_backward` routine during reverse traversal. Accumulation
//! order is fixed (row-major, sequential) so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{split_at_axis, Real, Tensor};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::dim(
            op,
            "rank",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if let Some(axis) = (0..a.rank()).find(|&i| a.shape()[i] != b.shape()[i]) {
        return Err(Error::dim(
            op,
            axis,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::dim(
            op,
            axis,
            format!("axis out of range for rank {}", shape.len()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// conv3d

/// Resolved extents for one 3-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    /// Input (s, h, w).
    pub input: [usize; 3],
    /// Kernel (kt, kh, kw).
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Output (s', h', w').
    pub output: [usize; 3],
}

const AXIS_NAMES: [&str; 3] = ["s", "h", "w"];

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::dim("conv3d", "rank", format!("input must be (c,s,h,w), got {input:?}")));
        }
        if kernel.len() != 5 {
            return Err(Error::dim(
                "conv3d",
                "rank",
                format!("kernel must be (c_out,c_in,kt,kh,kw), got {kernel:?}"),
            ));
        }
        if kernel[1] != input[0] {
            return Err(Error::dim(
                "conv3d",
                "c",
                format!("kernel expects {} input channels, input has {}", kernel[1], input[0]),
            ));
        }
        let mut output = [0; 3];
        for i in 0..3 {
            if stride[i] == 0 {
                return Err(Error::dim("conv3d", AXIS_NAMES[i], "stride must be >= 1"));
            }
            let padded = input[i + 1] + 2 * padding[i];
            if kernel[i + 2] > padded {
                return Err(Error::dim(
                    "conv3d",
                    AXIS_NAMES[i],
                    format!("kernel extent {} exceeds padded input extent {padded}", kernel[i + 2]),
                ));
            }
            output[i] = (padded - kernel[i + 2]) / stride[i] + 1;
        }
        Ok(ConvGeometry {
            c_in: input[0],
            c_out: kernel[0],
            input: [input[1], input[2], input[3]],
            kernel: [kernel[2], kernel[3], kernel[4]],
            stride,
            padding,
            output,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    /// Output index range along `axis` whose input coordinate
    /// `o * stride + k - pad` falls inside the input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let (n_in, n_out) = (self.input[axis] as isize, self.output[axis] as isize);
        let (s, p) = (self.stride[axis] as isize, self.padding[axis] as isize);
        let k = k as isize;
        // o*s + k - p >= 0  and  o*s + k - p <= n_in - 1
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi_num = n_in - 1 + p - k;
        let hi = if hi_num < 0 { 0 } else { (hi_num / s + 1).min(n_out) };
        (lo as usize, hi.max(lo as isize) as usize)
    }

    #[inline]
    fn input_coord(&self, axis: usize, o: usize, k: usize) -> usize {
        o * self.stride[axis] + k - self.padding[axis]
    }
}

/// Walks every (output row, input row) pair touched by kernel tap
/// `(kt, kh, kw)`, yielding flat row offsets plus the output/input column
/// spans. Shared by the forward and both backward passes.
#[inline]
fn for_each_row_pair(
    g: &ConvGeometry,
    kt: usize,
    kh: usize,
    kw: usize,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let [_, h_in, w_in] = g.input;
    let [_, h_out, w_out] = g.output;
    let (t_lo, t_hi) = g.valid_range(0, kt);
    let (h_lo, h_hi) = g.valid_range(1, kh);
    let (w_lo, w_hi) = g.valid_range(2, kw);
    if w_lo >= w_hi {
        return;
    }
    let wi0 = g.input_coord(2, w_lo, kw);
    for to in t_lo..t_hi {
        let ti = g.input_coord(0, to, kt);
        for ho in h_lo..h_hi {
            let hi = g.input_coord(1, ho, kh);
            let out_row = (to * h_out + ho) * w_out;
            let in_row = (ti * h_in + hi) * w_in;
            f(out_row + w_lo, in_row + wi0, w_hi - w_lo, g.stride[2]);
        }
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], w: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

/// `dst[j] += sum_t w[t] * src[off[t] + j]` in one pass over `dst`.
#[inline]
fn axpy_taps<T: Real, const N: usize>(dst: &mut [T], src: &[T], off: [usize; N], w: [T; N]) {
    let n = dst.len();
    let srcs: [&[T]; N] = std::array::from_fn(|t| &src[off[t]..off[t] + n]);
    let blocks = n / 8;
    for b in 0..blocks {
        let d = &mut dst[b * 8..b * 8 + 8];
        for t in 0..N {
            let s = &srcs[t][b * 8..b * 8 + 8];
            for l in 0..8 {
                d[l] += w[t] * s[l];
            }
        }
    }
    for j in blocks * 8..n {
        for t in 0..N {
            dst[j] += w[t] * srcs[t][j];
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Frames embedded in a zero border of `(ph, pw)`, so that for unit spatial
/// stride each kernel tap is a single contiguous shift of a whole frame.
struct PaddedFrames {
    hp: usize,
    wp: usize,
    /// Flat length covering every valid output position of a frame.
    run: usize,
}

impl PaddedFrames {
    fn new(g: &ConvGeometry) -> Self {
        let hp = g.input[1] + 2 * g.padding[1];
        let wp = g.input[2] + 2 * g.padding[2];
        PaddedFrames {
            hp,
            wp,
            run: (g.output[1] - 1) * wp + g.output[2],
        }
    }

    fn frame(&self) -> usize {
        self.hp * self.wp
    }

    fn tap_offset(&self, kh: usize, kw: usize) -> usize {
        kh * self.wp + kw
    }

    /// Copies `frames` frames of `h x w` into the padded layout.
    fn pad<T: Real>(&self, src: &[T], frames: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<T> {
        let mut out = vec![T::zero(); frames * self.frame()];
        for f in 0..frames {
            for r in 0..h {
                let s = (f * h + r) * w;
                let d = f * self.frame() + (r + ph) * self.wp + pw;
                out[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
        out
    }

    /// Inverse of [`PaddedFrames::pad`] at offset `(ph, pw)`.
    fn unpad<T: Real>(&self, src: &[T], frames: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(frames * h * w);
        for f in 0..frames {
            for r in 0..h {
                let s = f * self.frame() + (r + ph) * self.wp + pw;
                out.extend_from_slice(&src[s..s + w]);
            }
        }
        out
    }
}

fn unit_spatial_stride(g: &ConvGeometry) -> bool {
    g.stride[1] == 1 && g.stride[2] == 1
}

/// Applies the `kh x kw` spatial taps of one temporal kernel slice,
/// fusing the common 3x3 and 1x1 cases into a single pass.
#[inline]
fn spatial_taps<T: Real>(dst: &mut [T], src: &[T], offs: &[usize], w: &[T]) {
    match offs.len() {
        9 => axpy_taps::<T, 9>(dst, src, offs.try_into().unwrap(), w.try_into().unwrap()),
        1 => axpy(dst, w[0], &src[offs[0]..offs[0] + dst.len()]),
        _ => {
            for (&o, &wt) in offs.iter().zip(w) {
                let n = dst.len();
                axpy(dst, wt, &src[o..o + n]);
            }
        }
    }
}

fn conv3d_padded<T: Real>(g: &ConvGeometry, x: &[T], k: &[T], bias: Option<&[T]>) -> Vec<T> {
    let pf = PaddedFrames::new(g);
    let [s_in, h_in, w_in] = g.input;
    let [s_out, h_out, w_out] = g.output;
    let [kt_n, kh_n, kw_n] = g.kernel;
    let plane = kh_n * kw_n;
    let taps = kt_n * plane;
    let offs: Vec<usize> = (0..plane).map(|i| pf.tap_offset(i / kw_n, i % kw_n)).collect();
    let xp = pf.pad(x, g.c_in * s_in, h_in, w_in, g.padding[1], g.padding[2]);
    let fr = pf.frame();
    let mut yp = vec![T::zero(); g.c_out * s_out * fr];
    for co in 0..g.c_out {
        for to in 0..s_out {
            let dst = &mut yp[(co * s_out + to) * fr..][..pf.run];
            if let Some(b) = bias {
                dst.fill(b[co]);
            }
            for ci in 0..g.c_in {
                for kt in 0..kt_n {
                    let ti = (to * g.stride[0] + kt) as isize - g.padding[0] as isize;
                    if ti < 0 || ti >= s_in as isize {
                        continue;
                    }
                    let src = &xp[(ci * s_in + ti as usize) * fr..][..fr];
                    let base = (co * g.c_in + ci) * taps + kt * plane;
                    spatial_taps(dst, src, &offs, &k[base..base + plane]);
                }
            }
        }
    }
    pf.unpad(&yp, g.c_out * s_out, h_out, w_out, 0, 0)
}

fn conv3d_backward_padded<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    k: &[T],
    gy: &[T],
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let pf = PaddedFrames::new(g);
    let [s_in, h_in, w_in] = g.input;
    let [s_out, h_out, w_out] = g.output;
    let [kt_n, kh_n, kw_n] = g.kernel;
    let plane = kh_n * kw_n;
    let taps = kt_n * plane;
    let fr = pf.frame();
    let offs: Vec<usize> = (0..plane).map(|i| pf.tap_offset(i / kw_n, i % kw_n)).collect();
    // Input-gradient gather offsets into the margined output gradient.
    let margin = offs[plane - 1];
    let back: Vec<usize> = offs.iter().map(|&o| margin - o).collect();
    // Only positions holding real input need a gradient.
    let lo = g.padding[1] * pf.wp + g.padding[2];
    let span = (h_in - 1) * pf.wp + w_in;
    let xp = pf.pad(x, g.c_in * s_in, h_in, w_in, g.padding[1], g.padding[2]);
    // Output gradient on the padded grid behind `margin` zeros. Positions
    // outside the valid output window stay zero, and every frame ends in
    // at least `margin` of them, so a gather never reads a neighbour frame.
    let mut gyp = vec![T::zero(); margin];
    gyp.extend(pf.pad(gy, g.c_out * s_out, h_out, w_out, 0, 0));
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); g.c_out];
    let mut gxp = if need_input {
        Some(vec![T::zero(); g.c_in * s_in * fr])
    } else {
        None
    };
    for co in 0..g.c_out {
        gb[co] = gy[co * s_out * h_out * w_out..(co + 1) * s_out * h_out * w_out]
            .iter()
            .fold(T::zero(), |a, &v| a + v);
        for to in 0..s_out {
            let start = (co * s_out + to) * fr;
            let grow = &gyp[margin + start..][..pf.run];
            let gather = &gyp[start..start + margin + fr];
            for ci in 0..g.c_in {
                for kt in 0..kt_n {
                    let ti = (to * g.stride[0] + kt) as isize - g.padding[0] as isize;
                    if ti < 0 || ti >= s_in as isize {
                        continue;
                    }
                    let frame = (ci * s_in + ti as usize) * fr;
                    let src = &xp[frame..frame + fr];
                    let base = (co * g.c_in + ci) * taps + kt * plane;
                    let gk_slice = &mut gk[base..base + plane];
                    for (t, &o) in offs.iter().enumerate() {
                        gk_slice[t] += dot(grow, &src[o..o + pf.run]);
                    }
                    if let Some(gxp) = gxp.as_mut() {
                        let dst = &mut gxp[frame + lo..frame + lo + span];
                        spatial_taps(dst, &gather[lo..], &back, &k[base..base + plane]);
                    }
                }
            }
        }
    }
    let gx = gxp.map(|d| pf.unpad(&d, g.c_in * s_in, h_in, w_in, g.padding[1], g.padding[2]));
    (gx, gk, gb)
}

/// 3-D cross-correlation of a `(c_in, s, h, w)` input with a
/// `(c_out, c_in, kt, kh, kw)` kernel.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.c_out] {
            return Err(Error::dim(
                "conv3d",
                "c_out",
                format!("bias shape {:?}, expected [{}]", b.shape(), g.c_out),
            ));
        }
    }
    if unit_spatial_stride(&g) {
        let out = conv3d_padded(&g, input.data(), kernel.data(), bias.map(|b| b.data()));
        return Tensor::new(&g.output_shape(), out);
    }
    let out_plane: usize = g.output.iter().product();
    let in_plane: usize = g.input.iter().product();
    let taps: usize = g.kernel.iter().product();
    let [kt_n, kh_n, kw_n] = g.kernel;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); g.c_out * out_plane];

    for co in 0..g.c_out {
        let plane = &mut out[co * out_plane..(co + 1) * out_plane];
        if let Some(b) = bias {
            plane.fill(b.data()[co]);
        }
        for ci in 0..g.c_in {
            let src = &x[ci * in_plane..(ci + 1) * in_plane];
            let taps_base = (co * g.c_in + ci) * taps;
            for kt in 0..kt_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let w = k[taps_base + (kt * kh_n + kh) * kw_n + kw];
                        for_each_row_pair(&g, kt, kh, kw, |o, i, n, sw| {
                            if sw == 1 {
                                for (d, &s) in plane[o..o + n].iter_mut().zip(&src[i..i + n]) {
                                    *d += w * s;
                                }
                            } else {
                                for j in 0..n {
                                    plane[o + j] += w * src[i + j * sw];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    Tensor::new(&g.output_shape(), out)
}

/// Gradients of [`conv3d`] w.r.t. input (only if `need_input`), kernel and bias.
pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::dim("conv3d_backward", "*", "gradient shape differs from output"));
    }
    if unit_spatial_stride(&g) {
        let (gx, gk, gb) =
            conv3d_backward_padded(&g, input.data(), kernel.data(), grad_out.data(), need_input);
        return Ok((
            gx.map(|d| Tensor::new(input.shape(), d)).transpose()?,
            Tensor::new(kernel.shape(), gk)?,
            Tensor::new(&[g.c_out], gb)?,
        ));
    }
    let out_plane: usize = g.output.iter().product();
    let in_plane: usize = g.input.iter().product();
    let taps: usize = g.kernel.iter().product();
    let [kt_n, kh_n, kw_n] = g.kernel;
    let x = input.data();
    let k = kernel.data();
    let gy = grad_out.data();

    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); g.c_out];
    let mut gx = if need_input {
        Some(vec![T::zero(); input.len()])
    } else {
        None
    };

    for co in 0..g.c_out {
        let gplane = &gy[co * out_plane..(co + 1) * out_plane];
        gb[co] = gplane.iter().fold(T::zero(), |a, &v| a + v);
        for ci in 0..g.c_in {
            let src = &x[ci * in_plane..(ci + 1) * in_plane];
            let taps_base = (co * g.c_in + ci) * taps;
            for kt in 0..kt_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let tap = taps_base + (kt * kh_n + kh) * kw_n + kw;
                        let mut acc = T::zero();
                        for_each_row_pair(&g, kt, kh, kw, |o, i, n, sw| {
                            for j in 0..n {
                                acc += gplane[o + j] * src[i + j * sw];
                            }
                        });
                        gk[tap] = acc;
                        if let Some(gx) = gx.as_mut() {
                            let w = k[tap];
                            let dst = &mut gx[ci * in_plane..(ci + 1) * in_plane];
                            for_each_row_pair(&g, kt, kh, kw, |o, i, n, sw| {
                                if sw == 1 {
                                    for (d, &s) in dst[i..i + n].iter_mut().zip(&gplane[o..o + n]) {
                                        *d += w * s;
                                    }
                                } else {
                                    for j in 0..n {
                                        dst[i + j * sw] += w * gplane[o + j];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
    Ok((
        gx.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        Tensor::new(kernel.shape(), gk)?,
        Tensor::new(&[g.c_out], gb)?,
    ))
}

// ---------------------------------------------------------------------------
// elementwise

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp<T> {
    Abs,
    Sigmoid,
    AddScalar(T),
    MulScalar(T),
    /// `max(x, 0) + slope * min(x, 0)`.
    LeakyRelu(T),
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn binary<T: Real>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
    };
    same_shape(name, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        })
        .collect();
    Tensor::new(a.shape(), data)
}

pub fn unary<T: Real>(op: UnaryOp<T>, a: &Tensor<T>) -> Tensor<T> {
    match op {
        UnaryOp::Abs => a.map(|x| x.abs()),
        UnaryOp::Sigmoid => a.map(sigmoid),
        UnaryOp::AddScalar(c) => a.map(|x| x + c),
        UnaryOp::MulScalar(c) => a.map(|x| x * c),
        UnaryOp::LeakyRelu(slope) => a.map(|x| if x >= T::zero() { x } else { slope * x }),
    }
}

/// Local derivative of a unary op at input `x` with output `y`.
#[inline]
pub fn unary_derivative<T: Real>(op: UnaryOp<T>, x: T, y: T) -> T {
    match op {
        // sign(0) = 0: the subgradient that keeps singleton clips inert.
        UnaryOp::Abs => {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        UnaryOp::Sigmoid => y * (T::one() - y),
        UnaryOp::AddScalar(_) => T::one(),
        UnaryOp::MulScalar(c) => c,
        UnaryOp::LeakyRelu(slope) => {
            if x >= T::zero() {
                T::one()
            } else {
                slope
            }
        }
    }
}

// ---------------------------------------------------------------------------
// reductions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Mean,
    Max,
}

/// Reduces `axis` away. For `Max` the flat input offsets of the winners
/// (first occurrence on ties) are returned for the backward rule.
pub fn reduce<T: Real>(
    op: ReduceOp,
    input: &Tensor<T>,
    axis: usize,
) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
    check_axis("reduce", input.shape(), axis)?;
    let (outer, extent, inner) = split_at_axis(input.shape(), axis);
    if extent == 0 {
        return Err(Error::Domain("reduce over an empty axis".into()));
    }
    let x = input.data();
    let mut out = vec![T::zero(); outer * inner];
    let mut arg = match op {
        ReduceOp::Max => Some(vec![0usize; outer * inner]),
        ReduceOp::Mean => None,
    };
    let denom = T::from_f64(extent as f64);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            match op {
                ReduceOp::Mean => {
                    let mut acc = T::zero();
                    for a in 0..extent {
                        acc += x[base + a * inner];
                    }
                    out[o * inner + i] = acc / denom;
                }
                ReduceOp::Max => {
                    let mut best = base;
                    for a in 1..extent {
                        let j = base + a * inner;
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                    out[o * inner + i] = x[best];
                    arg.as_mut().unwrap()[o * inner + i] = best;
                }
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape.remove(axis);
    Ok((Tensor::new(&shape, out)?, arg))
}

// ---------------------------------------------------------------------------
// shape manipulation

/// Rows `[start, start + len)` of `axis`.
pub fn slice_axis<T: Real>(input: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis("slice", input.shape(), axis)?;
    let (outer, extent, inner) = split_at_axis(input.shape(), axis);
    if len == 0 || start + len > extent {
        return Err(Error::dim(
            "slice",
            axis,
            format!("range {start}..{} outside extent {extent}", start + len),
        ));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

/// Stacks `parts` along `axis`; every other extent must agree.
pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    check_axis("concat", first.shape(), axis)?;
    for p in &parts[1..] {
        if p.rank() != first.rank() {
            return Err(Error::dim("concat", "rank", format!("{:?} vs {:?}", first.shape(), p.shape())));
        }
        if let Some(ax) = (0..first.rank()).find(|&i| i != axis && p.shape()[i] != first.shape()[i]) {
            return Err(Error::dim(
                "concat",
                ax,
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

fn height_axis<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<usize> {
    if t.rank() < 4 {
        return Err(Error::dim(op, "rank", format!("expected (c,s,h,w), got {:?}", t.shape())));
    }
    Ok(t.rank() - 2)
}

/// Splits the height axis into `n` equal horizontal strips, top to bottom.
pub fn split_h<T: Real>(input: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    let axis = height_axis("split_h", input)?;
    let h = input.shape()[axis];
    if n == 0 || h % n != 0 {
        return Err(Error::Config(format!("{n} parts do not divide height {h}")));
    }
    let rows = h / n;
    (0..n).map(|k| slice_axis(input, axis, k * rows, rows)).collect()
}

pub fn concat_h<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_h of zero tensors".into()))?;
    let axis = height_axis("concat_h", first)?;
    concat(parts, axis)
}

/// Inserts a new axis at `axis` holding `count` copies of the input.
pub fn repeat_axis<T: Real>(input: &Tensor<T>, axis: usize, count: usize) -> Result<Tensor<T>> {
    if axis > input.rank() {
        return Err(Error::dim("repeat", axis, "insertion point beyond rank"));
    }
    if count == 0 {
        return Err(Error::dim("repeat", axis, "count must be positive"));
    }
    let outer: usize = input.shape()[..axis].iter().product();
    let inner: usize = input.shape()[axis..].iter().product();
    let x = input.data();
    let mut out = Vec::with_capacity(outer * count * inner);
    for o in 0..outer {
        for _ in 0..count {
            out.extend_from_slice(&x[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = input.shape().to_vec();
    shape.insert(axis, count);
    Tensor::new(&shape, out)
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Real>(input: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = input.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", "*", format!("{perm:?} is not a permutation of rank {rank}")));
    }
    let in_strides = input.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| input.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = input.len();
    let x = input.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(x[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Spatial max pooling with window and stride `(1, k, k)` over `(c, s, h, w)`.
/// Trailing rows/columns that do not fill a window are dropped.
pub fn max_pool_hw<T: Real>(input: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.rank() != 4 {
        return Err(Error::dim("max_pool", "rank", format!("expected (c,s,h,w), got {:?}", input.shape())));
    }
    let [c, s, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let (ho, wo) = (h / k, w / k);
    if k == 0 || ho == 0 || wo == 0 {
        return Err(Error::dim("max_pool", "h", format!("window {k} larger than {h}x{w}")));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * s * ho * wo);
    let mut arg = Vec::with_capacity(c * s * ho * wo);
    for plane in 0..c * s {
        let base = plane * h * w;
        if k == 2 {
            for oy in 0..ho {
                let r0 = base + 2 * oy * w;
                let (top, bot) = (&x[r0..r0 + w], &x[r0 + w..r0 + 2 * w]);
                for ox in 0..wo {
                    let j = 2 * ox;
                    let cand = [(top[j], r0 + j), (top[j + 1], r0 + j + 1), (bot[j], r0 + w + j), (bot[j + 1], r0 + w + j + 1)];
                    let mut best = cand[0];
                    for &cv in &cand[1..] {
                        if cv.0 > best.0 {
                            best = cv;
                        }
                    }
                    out.push(best.0);
                    arg.push(best.1);
                }
            }
            continue;
        }
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * k * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let j = base + (oy * k + dy) * w + ox * k + dx;
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, s, ho, wo], out)?, arg))
}

// ---------------------------------------------------------------------------
// dense algebra

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::dim("matmul", "rank", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != k {
        return Err(Error::dim("matmul", 1, format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![T::zero(); m * p];
    matmul_into(a.data(), b.data(), &mut out, m, k, p);
    Tensor::new(&[m, p], out)
}

/// `out[m,p] += a[m,k] * b[k,p]`.
fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = a[i * k + kk];
            for (o, &bv) in row.iter_mut().zip(&b[kk * p..(kk + 1) * p]) {
                *o += av * bv;
            }
        }
    }
}

/// Per-strip linear map: `x (n, strips, c_in) · w (strips, c_in, c_out)`.
/// Each strip owns its weight matrix.
pub fn strip_matmul<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || w.rank() != 3 {
        return Err(Error::dim("strip_matmul", "rank", format!("{:?} x {:?}", x.shape(), w.shape())));
    }
    let (n, s, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if w.shape()[0] != s {
        return Err(Error::dim("strip_matmul", "strip", format!("{:?} x {:?}", x.shape(), w.shape())));
    }
    if w.shape()[1] != ci {
        return Err(Error::dim("strip_matmul", "c_in", format!("{:?} x {:?}", x.shape(), w.shape())));
    }
    let co = w.shape()[2];
    let mut out = vec![T::zero(); n * s * co];
    for b in 0..n {
        for k in 0..s {
            let xi = &x.data()[(b * s + k) * ci..(b * s + k + 1) * ci];
            let wk = &w.data()[k * ci * co..(k + 1) * ci * co];
            matmul_into(xi, wk, &mut out[(b * s + k) * co..(b * s + k + 1) * co], 1, ci, co);
        }
    }
    Tensor::new(&[n, s, co], out)
}

/// Gradients of [`strip_matmul`] w.r.t. `x` and `w`.
pub fn strip_matmul_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, s, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = w.shape()[2];
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for b in 0..n {
        for k in 0..s {
            let row = (b * s + k) * co;
            let gy = &grad.data()[row..row + co];
            for i in 0..ci {
                let xv = x.data()[(b * s + k) * ci + i];
                let wrow = &w.data()[(k * ci + i) * co..(k * ci + i + 1) * co];
                let gwrow = &mut gw[(k * ci + i) * co..(k * ci + i + 1) * co];
                let mut acc = T::zero();
                for j in 0..co {
                    acc += gy[j] * wrow[j];
                    gwrow[j] += xv * gy[j];
                }
                gx[(b * s + k) * ci + i] = acc;
            }
        }
    }
    (
        Tensor::new(x.shape(), gx).expect("shape"),
        Tensor::new(w.shape(), gw).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// GeM pooling

/// Generalized-mean pooling over the last (width) axis:
/// `(mean_w (max(x,0) + eps)^p)^(1/p)`.
///
/// Evaluated relative to the per-row maximum so that large `p` neither
/// underflows nor overflows.
pub fn gem_pool<T: Real>(input: &Tensor<T>, p: T, eps: T) -> Result<Tensor<T>> {
    if !(p > T::zero()) {
        return Err(Error::Config(format!("GeM exponent must be positive, got {p}")));
    }
    if input.rank() < 1 {
        return Err(Error::dim("gem_pool", "rank", "needs at least one axis"));
    }
    let w = *input.shape().last().unwrap();
    let rows = input.len() / w;
    let x = input.data();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let (y, _, _) = gem_row(&x[r * w..(r + 1) * w], p, eps);
        out.push(y);
    }
    let shape = &input.shape()[..input.rank() - 1];
    Tensor::new(shape, out)
}

/// Returns (y, zmax, S) where S = mean((z/zmax)^p).
#[inline]
fn gem_row<T: Real>(row: &[T], p: T, eps: T) -> (T, T, T) {
    let z = |v: T| v.max(T::zero()) + eps;
    let zmax = row.iter().fold(T::zero(), |m, &v| m.max(z(v)));
    let mut s = T::zero();
    for &v in row {
        s += (z(v) / zmax).powf(p);
    }
    s = s / T::from_f64(row.len() as f64);
    (zmax * s.powf(T::one() / p), zmax, s)
}

/// Gradients of [`gem_pool`] w.r.t. the input and the exponent.
pub fn gem_pool_backward<T: Real>(input: &Tensor<T>, p: T, eps: T, grad: &Tensor<T>) -> (Tensor<T>, T) {
    let w = *input.shape().last().unwrap();
    let rows = input.len() / w;
    let x = input.data();
    let wn = T::from_f64(w as f64);
    let mut gx = vec![T::zero(); input.len()];
    let mut gp = T::zero();
    for r in 0..rows {
        let row = &x[r * w..(r + 1) * w];
        let gy = grad.data()[r];
        let (y, zmax, s) = gem_row(row, p, eps);
        let mut weighted_log = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let z = v.max(T::zero()) + eps;
            let ratio = z / zmax;
            let rp = ratio.powf(p);
            weighted_log += rp * ratio.ln();
            if v > T::zero() {
                // dy/dz = (z/y)^(p-1) / W
                gx[r * w + j] = gy * (z / y).powf(p - T::one()) / wn;
            }
        }
        weighted_log = weighted_log / wn;
        let dy_dp = y / p * (weighted_log / s - s.ln() / p);
        gp += gy * dy_dp;
    }
    (Tensor::new(input.shape(), gx).expect("shape"), gp)
}

// ---------------------------------------------------------------------------
// batch norm / cross-entropy

/// Output of a batch-norm forward pass plus what its backward rule needs.
#[derive(Clone, Debug)]
pub struct BatchNormForward<T> {
    pub output: Tensor<T>,
    /// Normalized input before scale/shift.
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased variance (training mode only).
    pub batch_mean: Option<Vec<T>>,
    pub batch_var: Option<Vec<T>>,
}

/// Normalize-scale-shift over `(batch, d)`. In training mode the batch
/// statistics are used; otherwise the supplied running statistics.
pub fn batchnorm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    training: bool,
) -> Result<BatchNormForward<T>> {
    if input.rank() != 2 {
        return Err(Error::dim("batchnorm", "rank", format!("expected (batch, d), got {:?}", input.shape())));
    }
    let (n, d) = (input.shape()[0], input.shape()[1]);
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running_mean", running_mean.len()),
        ("running_var", running_var.len()),
    ] {
        if len != d {
            return Err(Error::dim("batchnorm", 1, format!("{name} has {len} entries, expected {d}")));
        }
    }
    let x = input.data();
    let (mean, var) = if training {
        let nf = T::from_f64(n as f64);
        let mut mean = vec![T::zero(); d];
        for b in 0..n {
            for j in 0..d {
                mean[j] += x[b * d + j];
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        let mut var = vec![T::zero(); d];
        for b in 0..n {
            for j in 0..d {
                let c = x[b * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / nf);
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); n * d];
    let mut out = vec![T::zero(); n * d];
    for b in 0..n {
        for j in 0..d {
            let h = (x[b * d + j] - mean[j]) * inv_std[j];
            x_hat[b * d + j] = h;
            out[b * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(BatchNormForward {
        output: Tensor::new(input.shape(), out)?,
        x_hat: Tensor::new(input.shape(), x_hat)?,
        inv_std,
        batch_mean: training.then(|| mean.clone()),
        batch_var: training.then(|| var.clone()),
    })
}

/// Gradients of [`batchnorm`] w.r.t. input, gamma and beta.
pub fn batchnorm_backward<T: Real>(
    fwd: &BatchNormForward<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
    training: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (grad.shape()[0], grad.shape()[1]);
    let gy = grad.data();
    let xh = fwd.x_hat.data();
    let mut gg = vec![T::zero(); d];
    let mut gb = vec![T::zero(); d];
    for b in 0..n {
        for j in 0..d {
            gb[j] += gy[b * d + j];
            gg[j] += gy[b * d + j] * xh[b * d + j];
        }
    }
    let mut gx = vec![T::zero(); n * d];
    let nf = T::from_f64(n as f64);
    for b in 0..n {
        for j in 0..d {
            let scale = gamma.data()[j] * fwd.inv_std[j];
            gx[b * d + j] = if training {
                scale * (gy[b * d + j] - gb[j] / nf - xh[b * d + j] * gg[j] / nf)
            } else {
                scale * gy[b * d + j]
            };
        }
    }
    (
        Tensor::new(grad.shape(), gx).expect("shape"),
        Tensor::new(&[d], gg).expect("shape"),
        Tensor::new(&[d], gb).expect("shape"),
    )
}

/// Mean over rows of `-log softmax(logits)[label]`. Also returns the
/// softmax probabilities for the backward rule.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::dim("cross_entropy", "rank", format!("expected (batch, classes), got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::dim("cross_entropy", 0, format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!("class label {bad} out of range for {k} classes")));
    }
    let x = logits.data();
    let mut probs = vec![T::zero(); n * k];
    let mut loss = T::zero();
    for b in 0..n {
        let row = &x[b * k..(b + 1) * k];
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut z = T::zero();
        for &v in row {
            z += (v - m).exp();
        }
        let log_z = z.ln() + m;
        for j in 0..k {
            probs[b * k + j] = (row[j] - log_z).exp();
        }
        loss += log_z - row[labels[b]];
    }
    Ok((loss / T::from_f64(n as f64), Tensor::new(logits.shape(), probs)?))
}
