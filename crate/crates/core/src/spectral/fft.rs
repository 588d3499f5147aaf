//! One-dimensional transform kernels.
//!
//! Power-of-two lengths go through an iterative radix-2 Cooley-Tukey
//! butterfly; every other length uses the direct O(n²) sum. Both operate on
//! split real/imaginary buffers and leave normalization to the caller.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub(crate) enum Kernel {
    Radix2 {
        n: usize,
        bits: u32,
        // exp(-2πik/n) for k in 0..n/2
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
    Direct {
        n: usize,
        // exp(-2πim/n) for m in 0..n
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
}

impl Kernel {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n > 0, "transform length must be positive");
        if n.is_power_of_two() {
            let half = n / 2;
            let (cos, sin) = (0..half)
                .map(|k| {
                    let a = -2.0 * PI * k as f64 / n as f64;
                    (a.cos(), a.sin())
                })
                .unzip();
            Kernel::Radix2 {
                n,
                bits: n.trailing_zeros(),
                cos,
                sin,
            }
        } else {
            let (cos, sin) = (0..n)
                .map(|m| {
                    let a = -2.0 * PI * m as f64 / n as f64;
                    (a.cos(), a.sin())
                })
                .unzip();
            Kernel::Direct { n, cos, sin }
        }
    }

    pub(crate) fn len(&self) -> usize {
        match self {
            Kernel::Radix2 { n, .. } | Kernel::Direct { n, .. } => *n,
        }
    }

    /// Unnormalized transform in place. `inverse` flips the exponent sign.
    pub(crate) fn run(&self, re: &mut [f64], im: &mut [f64], scratch: &mut Vec<f64>, inverse: bool) {
        debug_assert_eq!(re.len(), self.len());
        debug_assert_eq!(im.len(), self.len());
        match self {
            Kernel::Radix2 { n, bits, cos, sin } => radix2(re, im, *n, *bits, cos, sin, inverse),
            Kernel::Direct { n, cos, sin } => direct(re, im, *n, cos, sin, scratch, inverse),
        }
    }
}

fn radix2(re: &mut [f64], im: &mut [f64], n: usize, bits: u32, cos: &[f64], sin: &[f64], inverse: bool) {
    if n == 1 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = cos[k * stride];
                let wi = sign * sin[k * stride];
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn direct(
    re: &mut [f64],
    im: &mut [f64],
    n: usize,
    cos: &[f64],
    sin: &[f64],
    scratch: &mut Vec<f64>,
    inverse: bool,
) {
    let sign = if inverse { -1.0 } else { 1.0 };
    scratch.clear();
    scratch.extend_from_slice(re);
    scratch.extend_from_slice(im);
    let (xr, xi) = scratch.split_at(n);
    for k in 0..n {
        let mut sr = 0.0;
        let mut si = 0.0;
        for m in 0..n {
            let idx = (k * m) % n;
            let wr = cos[idx];
            let wi = sign * sin[idx];
            sr += xr[m] * wr - xi[m] * wi;
            si += xr[m] * wi + xi[m] * wr;
        }
        re[k] = sr;
        im[k] = si;
    }
}
