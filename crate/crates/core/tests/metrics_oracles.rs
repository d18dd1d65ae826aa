// Oracles index weights by explicit coordinates on purpose.
#![allow(clippy::needless_range_loop)]

use dasr_core::image::Plane;
use dasr_core::metrics::{dataset_score, psnr, ssim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Direct windowed SSIM: 2-D Gaussian taps, centred moments per window.
fn ssim_brute(a: &Plane, b: &Plane) -> f64 {
    let sigma = 1.5f64;
    let mut g = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for (y, row) in g.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (-(((x as f64 - 5.0).powi(2) + (y as f64 - 5.0).powi(2)) / (2.0 * sigma * sigma))).exp();
            s += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (w, h) = a.dims();
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let at = |p: &Plane, x: usize, y: usize| f64::from(p.get(x0 + x, y0 + y));
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    ma += g[y][x] / s * at(a, x, y);
                    mb += g[y][x] / s * at(b, x, y);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    let (da, db) = (at(a, x, y) - ma, at(b, x, y) - mb);
                    va += g[y][x] / s * da * da;
                    vb += g[y][x] / s * db * db;
                    cov += g[y][x] / s * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn natural(w: usize, h: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, ph): (f32, f32, f32) = (
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
        rng.random_range(0.0..6.0),
    );
    Plane::from_fn(w, h, |x, y| {
        let (x, y) = (x as f32, y as f32);
        128.0 + 60.0 * (fx * x + ph).sin() * (fy * y).cos() + 20.0 * ((x + y) * 0.11).sin()
    })
}

fn noisy(p: &Plane, sigma: f32, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, sigma).unwrap();
    Plane::from_fn(p.width(), p.height(), |x, y| p.get(x, y) + n.sample(&mut rng))
}

#[test]
fn ssim_matches_direct_windowed_formula() {
    for seed in 0..6 {
        let a = natural(23 + seed as usize, 19, seed);
        let b = noisy(&a, 8.0 + seed as f32 * 4.0, seed + 100);
        let got = ssim(&a, &b, 0).unwrap();
        let want = ssim_brute(&a, &b);
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn psnr_closed_form() {
    let a = Plane::filled(10, 10, 100.0);
    let b = Plane::filled(10, 10, 110.0);
    let want = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
    assert!((psnr(&a, &b, 0).unwrap() - want).abs() < 1e-12);
    assert!((psnr(&a, &b, 2).unwrap() - want).abs() < 1e-12);
}

#[test]
fn metrics_are_symmetric() {
    for seed in 0..5 {
        let a = natural(32, 24, seed);
        let b = noisy(&a, 10.0, seed);
        assert!((psnr(&a, &b, 0).unwrap() - psnr(&b, &a, 0).unwrap()).abs() < 1e-9);
        assert!((ssim(&a, &b, 3).unwrap() - ssim(&b, &a, 3).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn noise_ladder_is_monotone() {
    let a = natural(64, 64, 7);
    let mut last = f64::INFINITY;
    for (i, sigma) in [1.0f32, 2.0, 4.0, 8.0, 16.0, 32.0].into_iter().enumerate() {
        // Same unit noise field at growing amplitude.
        let unit = noisy(&Plane::filled(64, 64, 0.0), 1.0, 42);
        let b = Plane::from_fn(64, 64, |x, y| a.get(x, y) + sigma * unit.get(x, y));
        let p = psnr(&a, &b, 0).unwrap();
        assert!(p < last, "step {i}: {p} !< {last}");
        last = p;
    }
}

#[test]
fn small_luminance_shift_keeps_ssim_high() {
    for seed in 0..5 {
        let a = natural(48, 48, seed);
        let b = a.map(|v| v + 3.0);
        let s = ssim(&a, &b, 0).unwrap();
        assert!(s > 0.99, "seed {seed}: {s}");
    }
}

#[test]
fn identical_pair_dataset_caps_psnr() {
    let a = natural(20, 20, 1);
    let s = dataset_score(&[(a.clone(), a)], 0).unwrap();
    assert_eq!(s.psnr_db, 100.0);
    assert!((s.ssim - 1.0).abs() < 1e-12);
}
