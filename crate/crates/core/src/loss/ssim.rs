//! SSIM with an 11×11 Gaussian window (σ = 1.5), renormalized where the
//! window leaves the image.

use crate::image::Image;
use crate::Real;

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn taps() -> [f64; 2 * RADIUS + 1] {
    std::array::from_fn(|i| {
        let d = i as f64 - RADIUS as f64;
        (-d * d / (2.0 * SIGMA * SIGMA)).exp()
    })
}

/// Separable normalized blur of a single-channel `h × w` plane.
struct Blur<T> {
    w: usize,
    h: usize,
    kernel: [T; 2 * RADIUS + 1],
    inv_row: Vec<T>,
    inv_col: Vec<T>,
}

impl<T: Real> Blur<T> {
    fn new(w: usize, h: usize) -> Self {
        let k = taps();
        let norm = |n: usize| -> Vec<T> {
            (0..n)
                .map(|i| {
                    let s: f64 = (0..=2 * RADIUS)
                        .filter(|&t| {
                            let j = i as isize + t as isize - RADIUS as isize;
                            j >= 0 && (j as usize) < n
                        })
                        .map(|t| k[t])
                        .sum();
                    T::lit(1.0 / s)
                })
                .collect()
        };
        Blur { w, h, kernel: k.map(T::lit), inv_row: norm(w), inv_col: norm(h) }
    }

    fn pass(&self, src: &[T], along_x: bool, transpose: bool) -> Vec<T> {
        let (w, h) = (self.w, self.h);
        let n = if along_x { w } else { h };
        let inv = if along_x { &self.inv_row } else { &self.inv_col };
        let mut out = vec![T::zero(); w * h];
        for y in 0..h {
            for x in 0..w {
                let i = if along_x { x } else { y };
                let lo = i.saturating_sub(RADIUS);
                let hi = (i + RADIUS).min(n - 1);
                let mut acc = T::zero();
                for j in lo..=hi {
                    let t = j + RADIUS - i;
                    let idx = if along_x { y * w + j } else { j * w + x };
                    // row i of the normalized matrix has weights k[t]·inv[i]; its
                    // transpose reads column i, normalized by the row it came from
                    let scale = if transpose { inv[j] } else { inv[i] };
                    acc += self.kernel[t] * scale * src[idx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    fn apply(&self, src: &[T]) -> Vec<T> {
        self.pass(&self.pass(src, true, false), false, false)
    }

    fn apply_transpose(&self, src: &[T]) -> Vec<T> {
        self.pass(&self.pass(src, false, true), true, true)
    }
}

fn channel<T: Real>(img: &Image<T>, c: usize) -> Vec<T> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels, and optionally its gradient with
/// respect to `b`.
pub(crate) fn ssim_impl<T: Real>(a: &Image<T>, b: &Image<T>, want_grad: bool) -> (T, Option<Image<T>>) {
    assert!(a.same_shape(b), "ssim: image shapes differ");
    let (w, h) = (a.width, a.height);
    let blur = Blur::<T>::new(w, h);
    let (c1, c2) = (T::lit(C1), T::lit(C2));
    let two = T::lit(2.0);
    let n = w * h;
    let norm = T::one() / T::lit((3 * n) as f64);
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Image::zeros(w, h));
    for c in 0..3 {
        let pa = channel(a, c);
        let pb = channel(b, c);
        let sq = |p: &[T], q: &[T]| -> Vec<T> { p.iter().zip(q).map(|(x, y)| *x * *y).collect() };
        let mu_a = blur.apply(&pa);
        let mu_b = blur.apply(&pb);
        let e_aa = blur.apply(&sq(&pa, &pa));
        let e_bb = blur.apply(&sq(&pb, &pb));
        let e_ab = blur.apply(&sq(&pa, &pb));
        let mut g_mu = vec![T::zero(); n];
        let mut g_bb = vec![T::zero(); n];
        let mut g_ab = vec![T::zero(); n];
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let a1 = two * ma * mb + c1;
            let a2 = two * cov + c2;
            let b1 = ma * ma + mb * mb + c1;
            let b2 = var_a + var_b + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d = b1 * b2;
                g_mu[i] = norm * ((two * ma * a2 - two * ma * a1) / d - s * (two * mb / b1 - two * mb / b2));
                g_ab[i] = norm * two * a1 / d;
                g_bb[i] = -norm * s / b2;
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur.apply_transpose(&g_mu);
            let t_bb = blur.apply_transpose(&g_bb);
            let t_ab = blur.apply_transpose(&g_ab);
            for i in 0..n {
                g.data[3 * i + c] = t_mu[i] + two * pb[i] * t_bb[i] + pa[i] * t_ab[i];
            }
        }
    }
    (total * norm, grad)
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> T {
    ssim_impl(a, b, false).0
}
