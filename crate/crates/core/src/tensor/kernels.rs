//! Raw loops behind the tape's convolution and pooling ops.

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1, stride-1, unpadded convolution reads its input as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source index along one axis, or `None` inside the zero padding.
    #[inline]
    fn src(out: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (out * stride + k).checked_sub(pad).filter(|&i| i < len)
    }
}

/// Unfolds one `[C, H, W]` image into a `[C·kh·kw, ho·wo]` matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let l = g.cols();
    for ci in 0..g.c {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad, g.h) else {
                        out_row.fill(T::zero());
                        continue;
                    };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        // Valid ox satisfy 0 <= ox + kx - pad < w.
                        let lo = g.pad.saturating_sub(kx).min(g.wo);
                        let hi = (g.w + g.pad).saturating_sub(kx).clamp(lo, g.wo);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let start = lo + kx - g.pad;
                        out_row[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            *v = match ConvGeom::src(ox, kx, g.stride, g.pad, g.w) {
                                Some(ix) => src_row[ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto `[C, H, W]`, accumulating overlaps.
pub(crate) fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], out: &mut [T]) {
    let l = g.cols();
    for ci in 0..g.c {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad, g.h) else { continue };
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src_row = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in src_row.iter().enumerate() {
                        if let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad, g.w) {
                            dst_row[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 / stride-2 max pooling over `[planes, H, W]`. Returns flat argmax
/// indices into `input`; ties go to the first element in row-major order.
pub(crate) fn maxpool2<T: Real>(planes: usize, h: usize, w: usize, input: &[T], out: &mut [T]) -> Vec<u32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut argmax = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
    argmax
}
