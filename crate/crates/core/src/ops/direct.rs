//! Direct convolution, one output row at a time. The innermost loop runs
//! over output columns, so for stride 1 it is a contiguous multiply-add the
//! compiler vectorizes.

use super::parallel::for_each_plane;
use super::{Epilogue, Geometry};

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_rows(
    input: &[f32],
    weight: &[f32],
    g: &Geometry,
    epi: &Epilogue,
    out: &mut [f32],
    channel_block: usize,
    row_tile: usize,
    vectorize: bool,
) {
    let plane = g.oh * g.ow;
    let channel_block = channel_block.clamp(1, g.out_c);
    let row_tile = row_tile.clamp(1, g.oh);
    let (ipg, opg, k) = (g.in_per_group(), g.out_per_group(), g.k);
    for_each_plane(out, channel_block * plane, |block, planes| {
        let oc0 = block * channel_block;
        let count = planes.len() / plane;
        for oy0 in (0..g.oh).step_by(row_tile) {
            let oy1 = (oy0 + row_tile).min(g.oh);
            for j in 0..count {
                let oc = oc0 + j;
                let group = oc / opg;
                for oy in oy0..oy1 {
                    let acc = &mut planes[j * plane + oy * g.ow..j * plane + (oy + 1) * g.ow];
                    acc.fill(0.0);
                    for icg in 0..ipg {
                        let ic = group * ipg + icg;
                        for ky in 0..k {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let row = &input[(ic * g.h + iy) * g.w..(ic * g.h + iy + 1) * g.w];
                            let taps = &weight[((oc * ipg + icg) * k + ky) * k..][..k];
                            for (kx, &wv) in taps.iter().enumerate() {
                                let (lo, hi) = g.valid_cols(kx);
                                if lo >= hi {
                                    continue;
                                }
                                let start = lo * g.stride + kx - g.pad;
                                accumulate(&mut acc[lo..hi], row, start, g.stride, wv, vectorize);
                            }
                        }
                    }
                    epi.apply_slice(oc, acc);
                }
            }
        }
    });
}

#[inline(always)]
fn accumulate(acc: &mut [f32], row: &[f32], start: usize, stride: usize, wv: f32, vectorize: bool) {
    if vectorize && stride == 1 {
        let src = &row[start..start + acc.len()];
        for (a, &x) in acc.iter_mut().zip(src) {
            *a += wv * x;
        }
    } else if vectorize {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += wv * row[start + i * stride];
        }
    } else {
        let mut i = 0;
        while i < acc.len() {
            acc[i] += wv * row[start + i * stride];
            i += 1;
        }
    }
}
