//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

pub const MU0: f64 = 4e-7 * PI;

/// Complete elliptic integrals K(m), E(m) of parameter m = k² via the AGM.
pub fn elliptic_ke(m: f64) -> (f64, f64) {
    let (mut a, mut b) = (1.0f64, (1.0 - m).sqrt());
    let mut c = m.sqrt();
    let mut sum = 0.5 * c * c;
    let mut pow = 0.5;
    while c.abs() > 1e-16 {
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        pow *= 2.0;
        sum += pow * c * c;
        a = an;
        b = bn;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// Mutual inductance of coaxial circular filaments (Maxwell).
pub fn maxwell_coaxial(r1: f64, r2: f64, d: f64) -> f64 {
    let m = 4.0 * r1 * r2 / ((r1 + r2).powi(2) + d * d);
    let k = m.sqrt();
    let (kk, ee) = elliptic_ke(m);
    MU0 * (r1 * r2).sqrt() * ((2.0 / k - k) * kk - 2.0 / k * ee)
}

/// Textbook thin-wire circular loop inductance.
pub fn loop_self_inductance(r: f64, a: f64) -> f64 {
    MU0 * r * ((8.0 * r / a).ln() - 2.0)
}

/// Polygonal circle with `n` vertices in the plane z = `z`.
pub fn circle(r: f64, n: usize, z: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Dense grid search for the argmax of `f` on [lo, hi].
pub fn grid_argmax(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .map(|x| (x, f(x)))
        .fold((lo, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
        .0
}

/// Ordinary least squares y = a + b x through the normal equations.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    ((sy - b * sx) / n, b)
}

/// Standard normal upper tail via the complementary error function series.
pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, relative error below 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
