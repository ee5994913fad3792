//! 3×3, padding 1 convolution via im2col and GEMM.

use crate::scalar::Real;

/// Geometry of one convolution on square `side × side` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub side: usize,
}

impl ConvShape {
    pub fn out_side(&self) -> usize {
        (self.side - 1) / self.stride + 1
    }

    /// Rows of the im2col matrix (`cin · 9`).
    pub fn k(&self) -> usize {
        self.cin * 9
    }

    /// Output pixels per channel.
    pub fn p(&self) -> usize {
        self.out_side() * self.out_side()
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.side * self.side
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.p()
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.k()
    }
}

pub fn im2col<T: Real>(s: &ConvShape, x: &[T], cols: &mut Vec<T>) {
    let (side, os, st) = (s.side as isize, s.out_side(), s.stride as isize);
    cols.clear();
    cols.resize(s.k() * s.p(), T::zero());
    for c in 0..s.cin {
        let plane = &x[c * s.side * s.side..(c + 1) * s.side * s.side];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (c * 9 + (ky * 3 + kx) as usize) * s.p();
                for oy in 0..os {
                    let iy = oy as isize * st + ky - 1;
                    if iy < 0 || iy >= side {
                        continue;
                    }
                    let dst = &mut cols[row + oy * os..row + (oy + 1) * os];
                    let src = &plane[(iy * side) as usize..((iy + 1) * side) as usize];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * st + kx - 1;
                        if ix >= 0 && ix < side {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<T: Real>(s: &ConvShape, cols: &[T], dx: &mut [T]) {
    let (side, os, st) = (s.side as isize, s.out_side(), s.stride as isize);
    dx.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..s.cin {
        let plane = &mut dx[c * s.side * s.side..(c + 1) * s.side * s.side];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (c * 9 + (ky * 3 + kx) as usize) * s.p();
                for oy in 0..os {
                    let iy = oy as isize * st + ky - 1;
                    if iy < 0 || iy >= side {
                        continue;
                    }
                    let src = &cols[row + oy * os..row + (oy + 1) * os];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = ox as isize * st + kx - 1;
                        if ix >= 0 && ix < side {
                            plane[(iy * side + ix) as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `y = W·cols + b`; `cols` must come from [`im2col`].
pub fn forward<T: Real>(s: &ConvShape, w: &[T], b: &[T], cols: &[T], y: &mut Vec<T>) {
    let p = s.p();
    y.clear();
    y.reserve(s.out_len());
    for &bias in b {
        y.extend(std::iter::repeat_n(bias, p));
    }
    T::gemm(s.cout, s.k(), p, w, false, cols, false, T::one(), y);
}

/// Accumulates `dW`, `db` and returns the input gradient in `dx`.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    s: &ConvShape,
    w: &[T],
    cols: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dcols: &mut Vec<T>,
    dx: Option<&mut [T]>,
) {
    let p = s.p();
    T::gemm(s.cout, p, s.k(), dy, false, cols, true, T::one(), dw);
    for (g, row) in db.iter_mut().zip(dy.chunks_exact(p)) {
        *g += row.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        dcols.clear();
        dcols.resize(s.k() * p, T::zero());
        T::gemm(s.k(), s.cout, p, w, true, dy, false, T::zero(), dcols);
        col2im(s, dcols, dx);
    }
}
