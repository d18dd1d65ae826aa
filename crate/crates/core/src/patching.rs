//! Non-overlapping tiling of LR planes, reassembly of SR patches, and the
//! eight-way dihedral augmentation used during training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;

pub const PATCH_SIZE: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub row: u32,
    pub col: u32,
    pub x0: usize,
    pub y0: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub source_w: usize,
    pub source_h: usize,
    pub patch_size: usize,
    pub padded_w: usize,
    pub padded_h: usize,
    /// Extra LR context on every side of each patch (0 = plain tiling).
    pub margin: usize,
    pub cells: Vec<Cell>,
}

impl PatchGrid {
    pub fn new(source_w: usize, source_h: usize, patch_size: usize, margin: usize) -> Result<Self> {
        if source_w == 0 || source_h == 0 || patch_size == 0 {
            return Err(Error::dim(format!(
                "cannot tile a {source_w}×{source_h} image into {patch_size}-pixel patches"
            )));
        }
        let cols = source_w.div_ceil(patch_size);
        let rows = source_h.div_ceil(patch_size);
        let cells = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| Cell {
                    row: r as u32,
                    col: c as u32,
                    x0: c * patch_size,
                    y0: r * patch_size,
                })
            })
            .collect();
        Ok(PatchGrid {
            source_w,
            source_h,
            patch_size,
            padded_w: cols * patch_size,
            padded_h: rows * patch_size,
            margin,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.padded_h / self.patch_size
    }

    pub fn cols(&self) -> usize {
        self.padded_w / self.patch_size
    }
}

/// Mirror reflection that does not repeat the edge sample, for any integer index.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Reads a `w`×`h` window whose top-left may lie outside the plane; outside
/// samples are reflected.
pub fn reflect_window(plane: &Plane, x0: isize, y0: isize, w: usize, h: usize) -> Plane {
    Plane::from_fn(w, h, |x, y| {
        plane.get(
            reflect_index(x0 + x as isize, plane.width()),
            reflect_index(y0 + y as isize, plane.height()),
        )
    })
}

/// Reflection-pads bottom and right up to `w`×`h`.
pub fn reflect_pad(plane: &Plane, w: usize, h: usize) -> Plane {
    if plane.dims() == (w, h) {
        return plane.clone();
    }
    reflect_window(plane, 0, 0, w, h)
}

/// Cuts `lr` row-major into `patch_size` squares after reflection padding.
pub fn tile(lr: &Plane, patch_size: usize) -> Result<(Vec<Plane>, PatchGrid)> {
    tile_with_margin(lr, patch_size, 0)
}

/// Like [`tile`], but every patch carries `margin` extra LR pixels of context on each side.
pub fn tile_with_margin(lr: &Plane, patch_size: usize, margin: usize) -> Result<(Vec<Plane>, PatchGrid)> {
    let grid = PatchGrid::new(lr.width(), lr.height(), patch_size, margin)?;
    let padded = reflect_pad(lr, grid.padded_w, grid.padded_h);
    let side = patch_size + 2 * margin;
    let patches = grid
        .cells
        .iter()
        .map(|c| {
            if margin == 0 {
                padded.crop(c.x0, c.y0, side, side)
            } else {
                Ok(reflect_window(
                    &padded,
                    c.x0 as isize - margin as isize,
                    c.y0 as isize - margin as isize,
                    side,
                    side,
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((patches, grid))
}

/// Places SR patches at their scaled origins and crops to the scaled source size.
pub fn stitch(patches: &[Plane], grid: &PatchGrid, scale: usize) -> Result<Plane> {
    if patches.len() != grid.cells.len() {
        return Err(Error::dim(format!(
            "stitch got {} patches for {} grid cells",
            patches.len(),
            grid.cells.len()
        )));
    }
    let side = grid.patch_size * scale;
    let full = (grid.patch_size + 2 * grid.margin) * scale;
    let mut canvas = Plane::filled(grid.padded_w * scale, grid.padded_h * scale, 0.0);
    for (p, c) in patches.iter().zip(&grid.cells) {
        if p.dims() != (full, full) {
            return Err(Error::dim(format!(
                "stitch expected {full}×{full} patches, got {:?}",
                p.dims()
            )));
        }
        let core = if grid.margin == 0 {
            p.clone()
        } else {
            p.crop(grid.margin * scale, grid.margin * scale, side, side)?
        };
        canvas.paste(&core, c.x0 * scale, c.y0 * scale);
    }
    canvas.crop(0, 0, grid.source_w * scale, grid.source_h * scale)
}

/// An LR patch with its matching HR patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Plane,
    pub hr: Plane,
    pub source: String,
    pub row: u32,
    pub col: u32,
}

impl PatchPair {
    pub fn scale(&self) -> Result<usize> {
        let (lw, lh) = self.lr.dims();
        let (hw, hh) = self.hr.dims();
        if lw == 0 || hw % lw != 0 || hw / lw != hh / lh.max(1) || hh % lh.max(1) != 0 || lw != lh {
            return Err(Error::dim(format!(
                "HR patch {hw}×{hh} is not an integer multiple of LR {lw}×{lh}"
            )));
        }
        Ok(hw / lw)
    }
}

/// LR/HR patch pairs for every grid cell that lies fully inside the LR plane.
/// Partial cells at the right and bottom are dropped.
pub fn aligned_pairs(lr: &Plane, hr: &Plane, scale: usize, patch_size: usize, source: &str) -> Result<Vec<PatchPair>> {
    if hr.width() < lr.width() * scale || hr.height() < lr.height() * scale {
        return Err(Error::dim(format!(
            "HR {:?} is smaller than LR {:?} × {scale}",
            hr.dims(),
            lr.dims()
        )));
    }
    let mut out = Vec::new();
    for r in 0..lr.height() / patch_size {
        for c in 0..lr.width() / patch_size {
            let (x0, y0) = (c * patch_size, r * patch_size);
            out.push(PatchPair {
                lr: lr.crop(x0, y0, patch_size, patch_size)?,
                hr: hr.crop(x0 * scale, y0 * scale, patch_size * scale, patch_size * scale)?,
                source: source.to_string(),
                row: r as u32,
                col: c as u32,
            });
        }
    }
    Ok(out)
}

/// One of the eight symmetries of the square: `quarter_turns` counter-clockwise
/// rotations followed by an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        quarter_turns: 0,
        flip: false,
    };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(|k| Dihedral {
            quarter_turns: k % 4,
            flip: k >= 4,
        })
    }

    pub fn random(rng: &mut impl Rng) -> Dihedral {
        let k: u8 = rng.random_range(0..8);
        Dihedral {
            quarter_turns: k % 4,
            flip: k >= 4,
        }
    }

    pub fn apply(&self, p: &Plane) -> Plane {
        let mut out = p.clone();
        for _ in 0..self.quarter_turns % 4 {
            out = rotate_ccw(&out);
        }
        if self.flip {
            out = flip_horizontal(&out);
        }
        out
    }
}

pub fn rotate_ccw(p: &Plane) -> Plane {
    let (w, _) = p.dims();
    Plane::from_fn(p.height(), w, |x, y| p.get(w - 1 - y, x))
}

pub fn flip_horizontal(p: &Plane) -> Plane {
    let w = p.width();
    Plane::from_fn(w, p.height(), |x, y| p.get(w - 1 - x, y))
}

/// Applies one uniformly drawn symmetry to both halves of the pair.
pub fn augment(pair: &PatchPair, rng: &mut impl Rng) -> PatchPair {
    let t = Dihedral::random(rng);
    augment_with(pair, t)
}

pub fn augment_with(pair: &PatchPair, t: Dihedral) -> PatchPair {
    PatchPair {
        lr: t.apply(&pair.lr),
        hr: t.apply(&pair.hr),
        ..pair.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |x, y| (y * w + x) as f32)
    }

    #[test]
    fn tile_counts() {
        let (p, g) = tile(&numbered(96, 96), 48).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!((g.rows(), g.cols()), (2, 2));
        let (p, g) = tile(&numbered(50, 50), 48).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!((g.padded_w, g.padded_h), (96, 96));
        assert_eq!((g.source_w, g.source_h), (50, 50));
    }

    #[test]
    fn reflection_skips_edge() {
        let p = Plane::from_fn(3, 1, |x, _| x as f32);
        let padded = reflect_pad(&p, 7, 1);
        assert_eq!(padded.data(), &[0., 1., 2., 1., 0., 1., 2.]);
        assert_eq!(reflect_index(-1, 3), 1);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn mosaic_of_constants() {
        let g = PatchGrid::new(4, 4, 2, 0).unwrap();
        let patches: Vec<Plane> = (0..4).map(|i| Plane::filled(2, 2, i as f32)).collect();
        let out = stitch(&patches, &g, 1).unwrap();
        assert_eq!(
            out.data(),
            &[0., 0., 1., 1., 0., 0., 1., 1., 2., 2., 3., 3., 2., 2., 3., 3.]
        );
    }

    #[test]
    fn stitch_validates() {
        let g = PatchGrid::new(4, 4, 2, 0).unwrap();
        assert!(stitch(&[Plane::filled(2, 2, 0.0)], &g, 1).is_err());
        let wrong: Vec<Plane> = (0..4).map(|_| Plane::filled(3, 3, 0.0)).collect();
        assert!(stitch(&wrong, &g, 1).is_err());
    }

    #[test]
    fn margin_round_trip() {
        let img = numbered(70, 53);
        let (p, g) = tile_with_margin(&img, 48, 4).unwrap();
        assert_eq!(p[0].dims(), (56, 56));
        assert_eq!(stitch(&p, &g, 1).unwrap(), img);
    }

    #[test]
    fn dihedral_group() {
        let p = numbered(5, 3);
        assert_eq!(Dihedral::IDENTITY.apply(&p), p);
        let half = Dihedral {
            quarter_turns: 2,
            flip: false,
        };
        assert_eq!(half.apply(&half.apply(&p)), p);
        let quarter = Dihedral {
            quarter_turns: 1,
            flip: false,
        };
        assert_eq!(quarter.apply(&p).dims(), (3, 5));
        let all: Vec<Plane> = Dihedral::all().map(|t| t.apply(&numbered(4, 4))).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn aligned_pairs_drop_partial_cells() {
        let lr = numbered(100, 50);
        let hr = numbered(200, 100);
        let pairs = aligned_pairs(&lr, &hr, 2, 48, "x").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].hr.get(0, 0), hr.get(96, 0));
        assert_eq!(pairs[1].scale().unwrap(), 2);
    }
}
