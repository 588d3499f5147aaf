//! Simultaneous sine and cosine for the activation hot loop.
//!
//! Three-part Cody-Waite reduction by π/2 followed by the fdlibm minimax
//! kernels on [-π/4, π/4]. Accurate to a few ulps for |x| < 2²⁰; larger or
//! non-finite arguments fall back to the standard library.

#![allow(clippy::excessive_precision)]

use std::f64::consts::FRAC_2_PI;

const PIO2_1: f64 = 1.57079632673412561417e+00;
const PIO2_2: f64 = 6.07710050630396597660e-11;
const PIO2_3: f64 = 2.02226624871116645580e-21;
const LIMIT: f64 = 1_048_576.0;
/// Adding and subtracting 1.5·2⁵² rounds to the nearest integer without a
/// libm call on targets lacking a rounding instruction.
const ROUNDER: f64 = 6_755_399_441_055_744.0;

const S1: f64 = -1.66666666666666324348e-01;
const S2: f64 = 8.33333333332248946124e-03;
const S3: f64 = -1.98412698298579493134e-04;
const S4: f64 = 2.75573137070700676789e-06;
const S5: f64 = -2.50507602534068634195e-08;
const S6: f64 = 1.58969099521155010221e-10;

const C1: f64 = 4.16666666666666019037e-02;
const C2: f64 = -1.38888888888741095749e-03;
const C3: f64 = 2.48015872894767294178e-05;
const C4: f64 = -2.75573143513906633035e-07;
const C5: f64 = 2.08757232129817482790e-09;
const C6: f64 = -1.13596475577881948265e-11;

#[inline(always)]
fn kernel(r: f64) -> (f64, f64) {
    let z = r * r;
    let sp = S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)));
    let s = r + r * z * (S1 + z * sp);
    let cp = z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let c = w + (((1.0 - w) - hz) + z * cp);
    (s, c)
}

#[inline(always)]
fn reduced(x: f64) -> (f64, f64) {
    let q = (x * FRAC_2_PI + ROUNDER) - ROUNDER;
    let r = ((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3;
    let (s, c) = kernel(r);
    let k = q as i32;
    let odd = k & 1 != 0;
    let (s, c) = (if odd { c } else { s }, if odd { -s } else { c });
    let flip = if k & 2 != 0 { -1.0 } else { 1.0 };
    (flip * s, flip * c)
}

pub fn sin_cos(x: f64) -> (f64, f64) {
    if !(x.abs() < LIMIT) {
        return x.sin_cos();
    }
    reduced(x)
}

/// `sin[i], dcos[i] = sin(w·x[i]), w·cos(w·x[i])`.
pub fn sin_slice(x: &[f64], w: f64, sin: &mut [f64], dcos: &mut [f64]) {
    let in_range = x.iter().fold(true, |ok, &v| ok & ((w * v).abs() < LIMIT));
    if in_range {
        for ((&v, s), d) in x.iter().zip(sin.iter_mut()).zip(dcos.iter_mut()) {
            let (a, b) = reduced(w * v);
            *s = a;
            *d = w * b;
        }
    } else {
        for ((&v, s), d) in x.iter().zip(sin.iter_mut()).zip(dcos.iter_mut()) {
            let (a, b) = sin_cos(w * v);
            *s = a;
            *d = w * b;
        }
    }
}
