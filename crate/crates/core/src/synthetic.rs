//! Seeded procedural images and patch sets for tests, demos and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::difficulty::LabeledPatch;
use crate::image::Plane;
use crate::patching::{PatchPair, PATCH_SIZE};

/// Uniform white noise in [0, 255], rounded.
pub fn noise_plane(w: usize, h: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(w, h, |_, _| rng.random_range(0..=255u8) as f32)
}

/// Two-class patch set: flat patches at random levels (class 1) and white
/// noise (class 5), alternating. HR planes are flat/noise as well.
pub fn flat_vs_noise(n: usize, scale: usize, seed: u64) -> Vec<LabeledPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (lr, hr, class) = if i % 2 == 0 {
                let level = rng.random_range(16..=235u8) as f32;
                (
                    Plane::filled(PATCH_SIZE, PATCH_SIZE, level),
                    Plane::filled(PATCH_SIZE * scale, PATCH_SIZE * scale, level),
                    1,
                )
            } else {
                let s = rng.random();
                (
                    noise_plane(PATCH_SIZE, PATCH_SIZE, s),
                    noise_plane(PATCH_SIZE * scale, PATCH_SIZE * scale, s ^ 1),
                    5,
                )
            };
            LabeledPatch {
                pair: PatchPair {
                    lr,
                    hr,
                    source: format!("synthetic-{i}"),
                    row: 0,
                    col: 0,
                },
                class,
            }
        })
        .collect()
}

/// A piecewise scene of large cells: flat areas, smooth ramps, sharp
/// oriented edges, stripes and blocky shapes, so patches span the difficulty
/// range and the hard ones carry learnable structure. Cells grow with
/// `scale` so a ×s HR patch still fits inside a flat region now and then.
pub fn scene(w: usize, h: usize, scale: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = rng.random_range(55..95usize) * scale.max(1);
    let cols = w.div_ceil(cell);
    let rows = h.div_ceil(cell);
    let cells: Vec<Cell> = (0..rows * cols).map(|_| Cell::random(&mut rng)).collect();
    Plane::from_fn(w, h, |x, y| {
        let c = &cells[(y / cell) * cols + x / cell];
        let (lx, ly) = ((x % cell) as f32, (y % cell) as f32);
        c.value(
            lx / scale.max(1) as f32 * 2.0,
            ly / scale.max(1) as f32 * 2.0,
            cell as f32 / scale.max(1) as f32 * 2.0,
        )
        .clamp(0.0, 255.0)
        .round()
    })
}

struct Cell {
    kind: u8,
    base: f32,
    contrast: f32,
    angle: f32,
    period: f32,
    rects: Vec<(f32, f32, f32, f32, f32)>,
}

impl Cell {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let kind = rng.random_range(0..5u8);
        let rects = (0..rng.random_range(3..8))
            .map(|_| {
                (
                    rng.random_range(0.0..150.0),
                    rng.random_range(0.0..150.0),
                    rng.random_range(6.0..50.0),
                    rng.random_range(3.0..40.0),
                    rng.random_range(-90.0..90.0),
                )
            })
            .collect();
        Cell {
            kind,
            base: rng.random_range(50.0..200.0),
            contrast: rng.random_range(40.0..110.0),
            angle: rng.random_range(0.0..std::f32::consts::PI),
            period: rng.random_range(7.0..24.0),
            rects,
        }
    }

    fn value(&self, x: f32, y: f32, size: f32) -> f32 {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let t = (x - size / 2.0) * c + (y - size / 2.0) * s;
        match self.kind {
            0 => self.base,
            1 => self.base + 0.25 * t,
            2 => {
                self.base
                    + if t > 0.0 {
                        self.contrast / 2.0
                    } else {
                        -self.contrast / 2.0
                    }
            }
            3 => {
                self.base
                    + self.contrast / 2.0
                        * if (t * std::f32::consts::TAU / self.period).sin() > 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
            }
            _ => {
                let mut v = self.base;
                for &(rx, ry, rw, rh, d) in &self.rects {
                    if x >= rx && x < rx + rw && y >= ry && y < ry + rh {
                        v += d;
                    }
                }
                v
            }
        }
    }
}
