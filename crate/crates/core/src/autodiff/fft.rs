//! Real-input amplitude spectrum used for period selection.
//!
//! The transform zero-pads each channel to the next power of two and runs an
//! iterative radix-2 FFT. Amplitudes are then sampled back onto the
//! unpadded length's frequency grid (bin `k` of `T` maps to the nearest padded
//! bin `k·N/T`). Only the argmax matters downstream, so the interpolation
//! error of that mapping is acceptable.

use super::Tensor;
use crate::error::{Error, Result};

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    fft_rows(re, im, 1, &twiddles(re.len()));
}

/// Twiddles of the last stage of a length-`n` transform; stage `len` uses
/// every (n / len)-th one.
fn twiddles(n: usize) -> Vec<(f64, f64)> {
    let ang = -2.0 * std::f64::consts::PI / n as f64;
    (0..n / 2).map(|k| (ang * k as f64).sin_cos()).collect()
}

/// Transform `d` interleaved signals at once: sample `k` of every signal
/// is row `k` of `re`/`im`.
fn fft_rows(re: &mut [f64], im: &mut [f64], d: usize, twiddles: &[(f64, f64)]) {
    let n = re.len() / d;
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(re.len(), im.len());
    if n <= 1 {
        return;
    }
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            swap_rows(re, i, j, d);
            swap_rows(im, i, j, d);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = twiddles[k * stride];
                let (a, b) = ((start + k) * d, (start + k + half) * d);
                let (re_a, re_b) = re.split_at_mut(b);
                let (im_a, im_b) = im.split_at_mut(b);
                let rows = re_a[a..a + d].iter_mut().zip(&mut re_b[..d]);
                for ((ra, rb), (ia, ib)) in rows.zip(im_a[a..a + d].iter_mut().zip(&mut im_b[..d])) {
                    let tr = *rb * c - *ib * s;
                    let ti = *rb * s + *ib * c;
                    *rb = *ra - tr;
                    *ib = *ia - ti;
                    *ra += tr;
                    *ia += ti;
                }
            }
        }
        len <<= 1;
    }
}

fn swap_rows(v: &mut [f64], i: usize, j: usize, d: usize) {
    let (lo, hi) = v.split_at_mut(j * d);
    lo[i * d..(i + 1) * d].swap_with_slice(&mut hi[..d]);
}

/// Per-channel magnitude spectrum of `x[T×d]`, shape `[⌊T/2⌋+1 × d]`.
///
/// Not differentiable; operates on plain values.
pub fn rfft_amplitude(x: &Tensor) -> Result<Tensor> {
    let (t, d) = match x.shape() {
        [t] => (*t, 1),
        [t, d] => (*t, *d),
        s => return Err(Error::shape("rfft_amplitude", format!("{s:?}"))),
    };
    if t < 2 {
        return Err(Error::Input(format!(
            "rfft_amplitude needs at least 2 samples, got {t}"
        )));
    }
    let n = t.next_power_of_two();
    let bins = t / 2 + 1;
    let mut out = vec![0.0; bins * d];
    let mut re = x.data().to_vec();
    re.resize(n * d, 0.0);
    let mut im = vec![0.0; n * d];
    fft_rows(&mut re, &mut im, d, &twiddles(n));
    for k in 0..bins {
        let pb = ((k as f64) * n as f64 / t as f64).round() as usize;
        let pb = pb.min(n / 2);
        for c in 0..d {
            out[k * d + c] = re[pb * d + c].hypot(im[pb * d + c]);
        }
    }
    Tensor::new(vec![bins, d], out)
}
