//! Iterative radix-2 FFT.
//!
//! `rustfft` needs `std`, so the core carries its own power-of-two
//! transform. Only lengths 256 and 512 (and the FIR design grid) are used on
//! hot paths. Real inputs are transformed two at a time by packing them into
//! the real and imaginary parts of one complex buffer.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    /// Twiddles of every stage from size 8 up, stored contiguously in
    /// split real/imaginary form.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
    bitrev: Vec<u32>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("FFT length {n} is not a power of two")));
        }
        let (mut tw_re, mut tw_im) = (Vec::new(), Vec::new());
        let mut size = 8;
        while size <= n {
            for k in 0..size / 2 {
                let a = -2.0 * PI * k as f64 / size as f64;
                tw_re.push(libm::cos(a));
                tw_im.push(libm::sin(a));
            }
            size *= 2;
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Ok(Self { n, tw_re, tw_im, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform of a split-format buffer.
    pub fn forward_split(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n, "buffer length does not match plan");
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        if n >= 4 {
            // Sizes 2 and 4 at once; their twiddles are 1 and -i.
            for (r, m) in re.chunks_exact_mut(4).zip(im.chunks_exact_mut(4)) {
                let (a0r, a0i) = (r[0] + r[1], m[0] + m[1]);
                let (a1r, a1i) = (r[0] - r[1], m[0] - m[1]);
                let (b0r, b0i) = (r[2] + r[3], m[2] + m[3]);
                let (b1r, b1i) = (r[2] - r[3], m[2] - m[3]);
                r[0] = a0r + b0r;
                m[0] = a0i + b0i;
                r[2] = a0r - b0r;
                m[2] = a0i - b0i;
                r[1] = a1r + b1i;
                m[1] = a1i - b1r;
                r[3] = a1r - b1i;
                m[3] = a1i + b1r;
            }
        } else if n == 2 {
            let (a, b) = (re[0], re[1]);
            re[0] = a + b;
            re[1] = a - b;
            let (a, b) = (im[0], im[1]);
            im[0] = a + b;
            im[1] = a - b;
        }
        let mut size = 8;
        let mut offset = 0;
        while size <= n {
            let half = size / 2;
            let wr = &self.tw_re[offset..offset + half];
            let wi = &self.tw_im[offset..offset + half];
            for (br, bi) in re.chunks_exact_mut(size).zip(im.chunks_exact_mut(size)) {
                let (lr, hr) = br.split_at_mut(half);
                let (li, hi) = bi.split_at_mut(half);
                let (lr, hr, li, hi) = (&mut lr[..half], &mut hr[..half], &mut li[..half], &mut hi[..half]);
                let (wr, wi) = (&wr[..half], &wi[..half]);
                for k in 0..half {
                    let tr = wr[k] * hr[k] - wi[k] * hi[k];
                    let ti = wr[k] * hi[k] + wi[k] * hr[k];
                    hr[k] = lr[k] - tr;
                    hi[k] = li[k] - ti;
                    lr[k] += tr;
                    li[k] += ti;
                }
            }
            offset += half;
            size *= 2;
        }
    }

    /// In-place inverse transform of a split-format buffer, scaled by `1/N`.
    pub fn inverse_split(&self, re: &mut [f64], im: &mut [f64]) {
        // conj(FFT(conj(x))) / N, with the conjugations folded into a swap
        // of the real and imaginary parts.
        self.forward_split(im, re);
        let scale = 1.0 / self.n as f64;
        re.iter_mut().for_each(|v| *v *= scale);
        im.iter_mut().for_each(|v| *v *= scale);
    }

    /// In-place forward transform, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        let mut re: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let mut im: Vec<f64> = buf.iter().map(|c| c.im).collect();
        self.forward_split(&mut re, &mut im);
        for ((c, r), i) in buf.iter_mut().zip(re).zip(im) {
            *c = Complex64::new(r, i);
        }
    }

    /// In-place inverse transform, normalized by `1/N`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        let mut re: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let mut im: Vec<f64> = buf.iter().map(|c| c.im).collect();
        self.inverse_split(&mut re, &mut im);
        for ((c, r), i) in buf.iter_mut().zip(re).zip(im) {
            *c = Complex64::new(r, i);
        }
    }

    /// Squared magnitudes of bins `0..=N/2` for two real sequences at once,
    /// packed as real and imaginary parts of one transform. `re` and `im`
    /// are scratch buffers of length `N`, and must hold the two sequences on
    /// entry (`im` all zero for a single sequence).
    pub fn power_pair_split(&self, re: &mut [f64], im: &mut [f64], out_a: &mut [f64], out_b: &mut [f64]) {
        let n = self.n;
        self.forward_split(re, im);
        for k in 0..=n / 2 {
            let j = (n - k) % n;
            // A = (Z[k] + conj Z[n-k]) / 2, B = (Z[k] - conj Z[n-k]) / 2i.
            let (ar, ai) = (0.5 * (re[k] + re[j]), 0.5 * (im[k] - im[j]));
            let (br, bi) = (0.5 * (im[k] + im[j]), -0.5 * (re[k] - re[j]));
            out_a[k] = ar * ar + ai * ai;
            out_b[k] = br * br + bi * bi;
        }
    }
}
