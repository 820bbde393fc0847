//! Patch extraction for NHWC convolutions with TensorFlow-style SAME padding.

use super::Float;

/// Output spatial size of a SAME-padded convolution: `ceil(input / stride)`.
pub fn same_output_size(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Leading (top/left) padding of a SAME-padded convolution. The remainder of
/// the total padding goes to the bottom/right edge.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> usize {
    let out = same_output_size(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Geometry of one convolution between an NHWC "image" tensor and its
/// SAME-padded output grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(batch: usize, in_h: usize, in_w: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        ConvGeom {
            batch,
            in_h,
            in_w,
            channels,
            kernel,
            stride,
            out_h: same_output_size(in_h, stride),
            out_w: same_output_size(in_w, stride),
            pad_top: same_padding(in_h, kernel, stride),
            pad_left: same_padding(in_w, kernel, stride),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Input row/column for output coordinate `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Gathers `[rows, patch_len]` patches; out-of-bounds taps read zero.
    pub fn im2col<T: Float>(&self, input: &[T]) -> Vec<T> {
        let c = self.channels;
        let k = self.kernel;
        let patch = self.patch_len();
        let mut cols = vec![T::zero(); self.rows() * patch];
        for n in 0..self.batch {
            let img = &input[n * self.in_h * self.in_w * c..(n + 1) * self.in_h * self.in_w * c];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (n * self.out_h + oy) * self.out_w + ox;
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for ky in 0..k {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let s = (iy * self.in_w + ix) * c;
                            let d = (ky * k + kx) * c;
                            dst[d..d + c].copy_from_slice(&img[s..s + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds patches back into an
    /// NHWC buffer.
    pub fn col2im<T: Float>(&self, cols: &[T]) -> Vec<T> {
        let c = self.channels;
        let k = self.kernel;
        let patch = self.patch_len();
        let mut out = vec![T::zero(); self.batch * self.in_h * self.in_w * c];
        for n in 0..self.batch {
            let base = n * self.in_h * self.in_w * c;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (n * self.out_h + oy) * self.out_w + ox;
                    let src = &cols[row * patch..(row + 1) * patch];
                    for ky in 0..k {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let d = base + (iy * self.in_w + ix) * c;
                            let s = (ky * k + kx) * c;
                            for (o, v) in out[d..d + c].iter_mut().zip(&src[s..s + c]) {
                                *o += *v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
