//! Scalar reference kernels: one output element at a time, seven nested
//! loops in a fixed order. These are the oracle the tuned kernels must match.

use super::{ConvSpec, Epilogue, Geometry};
use super::parallel::for_each_plane;

pub(crate) fn conv(input: &[f32], weight: &[f32], g: &Geometry, epi: &Epilogue, out: &mut [f32]) {
    let (ipg, opg, k) = (g.in_per_group(), g.out_per_group(), g.k);
    for_each_plane(out, g.oh * g.ow, |oc, plane| {
        let group = oc / opg;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = 0.0f32;
                for icg in 0..ipg {
                    let ic = group * ipg + icg;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let wv = weight[((oc * ipg + icg) * k + ky) * k + kx];
                            let xv = input[(ic * g.h + iy as usize) * g.w + ix as usize];
                            acc += wv * xv;
                        }
                    }
                }
                plane[oy * g.ow + ox] = epi.apply(oc, acc);
            }
        }
    });
}

/// Transposed convolution gathered directly from the undilated input.
///
/// Visits taps in the order of the flipped kernel over the zero-inserted
/// input, which is the order the dense formulation uses, skipping the
/// inserted zeros.
#[allow(clippy::too_many_arguments)]
pub(crate) fn transpose_conv(
    input: &[f32],
    weight: &[f32],
    spec: &ConvSpec,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    epi: &Epilogue,
    out: &mut [f32],
) {
    let (k, s) = (spec.kernel, spec.stride);
    let q = (k - 1 - spec.padding) as isize;
    let in_c = spec.in_c;
    for_each_plane(out, oh * ow, |oc, plane| {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ic in 0..in_c {
                    for a in 0..k {
                        let uy = oy as isize - q + a as isize;
                        if uy < 0 || uy % s as isize != 0 || (uy as usize / s) >= h {
                            continue;
                        }
                        for b in 0..k {
                            let ux = ox as isize - q + b as isize;
                            if ux < 0 || ux % s as isize != 0 || (ux as usize / s) >= w {
                                continue;
                            }
                            let wv = weight[((oc * in_c + ic) * k + (k - 1 - a)) * k + (k - 1 - b)];
                            let xv = input[(ic * h + uy as usize / s) * w + ux as usize / s];
                            acc += wv * xv;
                        }
                    }
                }
                plane[oy * ow + ox] = epi.apply(oc, acc);
            }
        }
    });
}
