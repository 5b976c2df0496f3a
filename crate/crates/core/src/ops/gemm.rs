//! Standard (groups = 1) convolution as a blocked matrix product.
//!
//! For each tile of output rows the input is unfolded into a panel
//! `[in_c·k·k, pixels]` whose row index follows input channel, kernel row,
//! kernel column. Padding becomes explicit zeros; adding a zero product to a
//! running sum that started at +0.0 never changes it, so the result matches
//! the reference kernel bit for bit. Pointwise stride-1 layers read the input
//! planes in place without unfolding.

use alloc::vec;
use alloc::vec::Vec;

use super::parallel::map_indices;
use super::{Epilogue, Geometry};

/// Reduction depth processed per pass over a channel tile.
const K_CHUNK: usize = 256;

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv(
    input: &[f32],
    weight: &[f32],
    g: &Geometry,
    epi: &Epilogue,
    out: &mut [f32],
    row_tile: usize,
    channel_tile: usize,
    vectorize: bool,
) {
    debug_assert_eq!(g.groups, 1);
    let kdim = g.in_c * g.k * g.k;
    let row_tile = row_tile.clamp(1, g.oh);
    let tiles = g.oh.div_ceil(row_tile);
    let in_place = g.k == 1 && g.stride == 1 && g.pad == 0;

    let blocks = map_indices(tiles, |t| {
        let oy0 = t * row_tile;
        let oy1 = (oy0 + row_tile).min(g.oh);
        let npix = (oy1 - oy0) * g.ow;
        let owned;
        let b = if in_place {
            Panel {
                data: input,
                stride: g.h * g.w,
                offset: oy0 * g.w,
            }
        } else {
            owned = unfold(input, g, oy0, oy1);
            Panel {
                data: &owned,
                stride: npix,
                offset: 0,
            }
        };
        let mut c = vec![0.0f32; g.out_c * npix];
        let a = Weights { data: weight, kdim };
        if vectorize {
            gemm_blocked(&a, &b, &mut c, g.out_c, npix, channel_tile);
        } else {
            gemm_scalar(&a, &b, &mut c, g.out_c, npix, channel_tile);
        }
        for (oc, row) in c.chunks_exact_mut(npix).enumerate() {
            epi.apply_slice(oc, row);
        }
        c
    });

    let plane = g.oh * g.ow;
    for (t, c) in blocks.iter().enumerate() {
        let oy0 = t * row_tile;
        let npix = c.len() / g.out_c;
        for (oc, row) in c.chunks_exact(npix).enumerate() {
            let start = oc * plane + oy0 * g.ow;
            out[start..start + npix].copy_from_slice(row);
        }
    }
}

/// im2col for output rows `[oy0, oy1)`.
fn unfold(input: &[f32], g: &Geometry, oy0: usize, oy1: usize) -> Vec<f32> {
    let npix = (oy1 - oy0) * g.ow;
    let k = g.k;
    let mut panel = vec![0.0f32; g.in_c * k * k * npix];
    for ic in 0..g.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let dst = &mut panel[row * npix..(row + 1) * npix];
                let (lo, hi) = g.valid_cols(kx);
                for oy in oy0..oy1 {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let src = &input[(ic * g.h + iy) * g.w..(ic * g.h + iy + 1) * g.w];
                    let d = &mut dst[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    for ox in lo..hi {
                        d[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    panel
}

struct Weights<'a> {
    data: &'a [f32],
    kdim: usize,
}

/// Row-major `[kdim, pixels]` view with an arbitrary row stride.
struct Panel<'a> {
    data: &'a [f32],
    stride: usize,
    offset: usize,
}

impl Panel<'_> {
    #[inline(always)]
    fn row(&self, k: usize) -> &[f32] {
        &self.data[self.offset + k * self.stride..]
    }
}

fn gemm_scalar(a: &Weights, b: &Panel, c: &mut [f32], m: usize, n: usize, channel_tile: usize) {
    let tile = channel_tile.clamp(1, m);
    for m0 in (0..m).step_by(tile) {
        for r in m0..(m0 + tile).min(m) {
            let w = &a.data[r * a.kdim..(r + 1) * a.kdim];
            for p in 0..n {
                let mut acc = c[r * n + p];
                for (kk, &wv) in w.iter().enumerate() {
                    acc += wv * b.row(kk)[p];
                }
                c[r * n + p] = acc;
            }
        }
    }
}

fn gemm_blocked(a: &Weights, b: &Panel, c: &mut [f32], m: usize, n: usize, channel_tile: usize) {
    let tile = channel_tile.clamp(1, m);
    for m0 in (0..m).step_by(tile) {
        let m1 = (m0 + tile).min(m);
        for k0 in (0..a.kdim).step_by(K_CHUNK) {
            let k1 = (k0 + K_CHUNK).min(a.kdim);
            let mut r = m0;
            while r + 6 <= m1 {
                rows::<6>(a, b, c, n, r, k0, k1);
                r += 6;
            }
            while r + 4 <= m1 {
                rows::<4>(a, b, c, n, r, k0, k1);
                r += 4;
            }
            while r < m1 {
                rows::<1>(a, b, c, n, r, k0, k1);
                r += 1;
            }
        }
    }
}

#[inline(always)]
fn rows<const R: usize>(a: &Weights, b: &Panel, c: &mut [f32], n: usize, r: usize, k0: usize, k1: usize) {
    let mut p = 0;
    while p + 16 <= n {
        micro::<R, 16>(a, b, c, n, r, p, k0, k1);
        p += 16;
    }
    while p + 8 <= n {
        micro::<R, 8>(a, b, c, n, r, p, k0, k1);
        p += 8;
    }
    while p < n {
        micro::<R, 1>(a, b, c, n, r, p, k0, k1);
        p += 1;
    }
}

/// `R × P` register block: accumulates `k0..k1` into `c[r..r+R][p..p+P]`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn micro<const R: usize, const P: usize>(
    a: &Weights,
    b: &Panel,
    c: &mut [f32],
    n: usize,
    r: usize,
    p: usize,
    k0: usize,
    k1: usize,
) {
    let mut acc = [[0.0f32; P]; R];
    for (i, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(r + i) * n + p..(r + i) * n + p + P]);
    }
    let w: [&[f32]; R] = core::array::from_fn(|i| &a.data[(r + i) * a.kdim + k0..(r + i) * a.kdim + k1]);
    for kk in 0..k1 - k0 {
        let brow: &[f32; P] = b.row(k0 + kk)[p..p + P].try_into().unwrap();
        for i in 0..R {
            let wv = w[i][kk];
            for j in 0..P {
                acc[i][j] += wv * brow[j];
            }
        }
    }
    for (i, row) in acc.iter().enumerate() {
        c[(r + i) * n + p..(r + i) * n + p + P].copy_from_slice(row);
    }
}
