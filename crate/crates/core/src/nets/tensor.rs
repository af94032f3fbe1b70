//! Scalar trait, activation storage and the im2col/GEMM kernels the layers
//! are built on.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point type the networks run in. `f32` for training, `f64` for
/// finite-difference checks.
pub trait Real:
    Float + Debug + Default + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C ← α A B + β C` on strided matrices.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must lie inside the
    /// allocations the pointers come from.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided view of a matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `out ← α a b + β out` where `out` is a strided region of `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    c_offset: usize,
    rsc: usize,
    csc: usize,
) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, n, k) = (a.rows, b.cols, a.cols);
    if m == 0 || n == 0 {
        return;
    }
    let last = c_offset + (m - 1) * rsc + (n - 1) * csc;
    assert!(last < c.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = &mut c[c_offset + i * rsc + j * csc];
                *p *= beta;
            }
        }
        return;
    }
    // SAFETY: the three views were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            rsc as isize,
            csc as isize,
        )
    }
}

/// Activations stored channel-major across the batch: `[C][N][H][W]`.
/// Per-channel statistics and per-sample convolutions both see contiguous
/// memory in this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    /// Offset of `(channel, sample)`'s plane.
    #[inline]
    pub fn plane(&self, ch: usize, sample: usize) -> usize {
        (ch * self.n + sample) * self.spatial()
    }

    /// Builds a one-channel batch from per-sample `[H][W]` planes.
    pub fn from_samples(h: usize, w: usize, samples: &[Vec<T>]) -> Self {
        let mut data = Vec::with_capacity(samples.len() * h * w);
        for s in samples {
            assert_eq!(s.len(), h * w, "sample size");
            data.extend_from_slice(s);
        }
        Self {
            c: 1,
            n: samples.len(),
            h,
            w,
            data,
        }
    }

    /// Per-sample planes of a one-channel batch.
    pub fn to_samples(&self) -> Vec<Vec<T>> {
        assert_eq!(self.c, 1);
        self.data.chunks(self.spatial()).map(|s| s.to_vec()).collect()
    }

    /// `[C][N][S]` → `[C·S][N]` feature matrix (features of a sample are
    /// channel-major).
    pub fn flatten(&self) -> Act<T> {
        let s = self.spatial();
        let f = self.c * s;
        let mut out = Act::zeros(f, self.n, 1, 1);
        for ch in 0..self.c {
            for n in 0..self.n {
                let src = self.plane(ch, n);
                for k in 0..s {
                    out.data[(ch * s + k) * self.n + n] = self.data[src + k];
                }
            }
        }
        out
    }

    /// Inverse of [`Act::flatten`].
    pub fn unflatten(&self, c: usize, h: usize, w: usize) -> Act<T> {
        let s = h * w;
        assert_eq!(self.c * self.spatial(), c * s, "unflatten size");
        let mut out = Act::zeros(c, self.n, h, w);
        for ch in 0..c {
            for n in 0..self.n {
                let dst = out.plane(ch, n);
                for k in 0..s {
                    out.data[dst + k] = self.data[(ch * s + k) * self.n + n];
                }
            }
        }
        out
    }
}

/// Geometry of a strided, zero-padded 2-D correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geom {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Geom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }
    pub fn patch(&self) -> usize {
        self.kh * self.kw
    }
}

/// Unfolds `channels` planes (plane `i` at `base + i·stride`) into
/// `[C·kh·kw][out_h·out_w]`.
pub fn im2col<T: Real>(
    src: &[T],
    base: usize,
    stride: usize,
    channels: usize,
    g: &Geom,
    cols: &mut [T],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncol = oh * ow;
    debug_assert_eq!(cols.len(), channels * g.patch() * ncol);
    for ci in 0..channels {
        let plane = &src[base + ci * stride..base + ci * stride + g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into the planes.
pub fn col2im<T: Real>(
    cols: &[T],
    channels: usize,
    g: &Geom,
    dst: &mut [T],
    base: usize,
    stride: usize,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncol = oh * ow;
    for ci in 0..channels {
        let plane = &mut dst[base + ci * stride..base + ci * stride + g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_views() {
        // a = [[1,2,3],[4,5,6]], b = a^T
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = [0.0f64; 4];
        let av = MatRef::dense(&a, 2, 3);
        gemm(1.0, av, av.t(), 0.0, &mut c, 0, 2, 1);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let g = Geom { h: 5, w: 6, kh: 3, kw: 3, sh: 2, sw: 2, ph: 1, pw: 1 };
        let c = 2;
        let x: Vec<f64> = (0..c * 30).map(|i| (i as f64 * 0.37).sin()).collect();
        let ncols = c * 9 * g.out_h() * g.out_w();
        let y: Vec<f64> = (0..ncols).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; ncols];
        im2col(&x, 0, 30, c, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, &g, &mut back, 0, 30);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trip() {
        let mut a = Act::<f64>::zeros(3, 2, 2, 2);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let f = a.flatten();
        assert_eq!(f.shape(), [12, 2, 1, 1]);
        assert_eq!(f.unflatten(3, 2, 2), a);
    }
}
