//! Keys bicubic resampling with MATLAB `imresize` geometry.
//!
//! Output sample `i` maps to source coordinate `(i + 0.5)/scale − 0.5`. When
//! shrinking with antialiasing the kernel is widened by `1/scale`. Taps that
//! fall outside the source are folded back by the configured border rule and
//! the weights of every output sample are normalised to sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{PlanarImage, Plane};

pub const DEFAULT_CUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    /// Replicate the edge sample.
    #[default]
    Replicate,
    /// Mirror including the edge sample (MATLAB's `symmetric`).
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub a: f64,
    pub antialias: bool,
    pub border: Border,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            a: DEFAULT_CUBIC_A,
            antialias: true,
            border: Border::Replicate,
        }
    }
}

impl KernelSpec {
    pub const SUPPORT: f64 = 2.0;
}

/// Keys cubic convolution kernel.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    } else if ax < 2.0 {
        a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    } else {
        0.0
    }
}

/// Maps any integer index into `0..len` using the border rule.
pub fn fold_index(i: isize, len: usize, border: Border) -> usize {
    let n = len as isize;
    match border {
        Border::Replicate => i.clamp(0, n - 1) as usize,
        Border::Symmetric => {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - 1 - m }) as usize
        }
    }
}

/// Precomputed 1-D resampling taps for one axis.
#[derive(Clone, Debug)]
pub struct Contributions {
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f32>,
}

impl Contributions {
    pub fn new(in_len: usize, out_len: usize, spec: &KernelSpec) -> Self {
        let shrink = out_len < in_len && spec.antialias;
        // Distances are kept as exact rationals over `denom` until the kernel is evaluated.
        let (il, ol) = (in_len as i64, out_len as i64);
        let width = if shrink {
            4.0 * in_len as f64 / out_len as f64
        } else {
            4.0
        };
        let taps = width.ceil() as usize + 2;
        let mut index = Vec::with_capacity(out_len * taps);
        let mut weight = Vec::with_capacity(out_len * taps);
        let mut w64 = vec![0.0f64; taps];
        for i in 0..ol {
            // u = ((2i+1)·in − out) / (2·out)
            let num = (2 * i + 1) * il - ol;
            let u = num as f64 / (2 * ol) as f64;
            let left = (u - width / 2.0).floor() as i64;
            let mut sum = 0.0;
            for (k, w) in w64.iter_mut().enumerate() {
                let j = left + k as i64;
                let d_num = num - 2 * ol * j;
                *w = if shrink {
                    cubic_kernel(d_num as f64 / (2 * il) as f64, spec.a)
                } else {
                    cubic_kernel(d_num as f64 / (2 * ol) as f64, spec.a)
                };
                sum += *w;
            }
            for (k, w) in w64.iter().enumerate() {
                index.push(fold_index((left + k as i64) as isize, in_len, spec.border));
                weight.push((w / sum) as f32);
            }
        }
        Contributions { taps, index, weight }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn out_len(&self) -> usize {
        self.index.len() / self.taps.max(1)
    }

    /// Source indices and normalised weights for output sample `i`.
    pub fn sample(&self, i: usize) -> (&[usize], &[f32]) {
        let r = i * self.taps..(i + 1) * self.taps;
        (&self.index[r.clone()], &self.weight[r])
    }

    fn apply<'a>(&'a self, src: &'a [f32], stride: usize, offset: usize) -> impl Iterator<Item = f32> + 'a {
        let src = &src[offset..];
        (0..self.out_len()).map(move |i| {
            let (idx, w) = self.sample(i);
            idx.iter()
                .zip(w)
                .map(|(j, w)| f64::from(src[j * stride]) * f64::from(*w))
                .sum::<f64>() as f32
        })
    }
}

/// Separable bicubic resize: rows (width) first, then columns (height).
/// The result is not clamped.
pub fn bicubic_resize(plane: &Plane, out_w: usize, out_h: usize, spec: &KernelSpec) -> Result<Plane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "output size {out_w}×{out_h} has a zero dimension"
        )));
    }
    let (w, h) = plane.dims();
    let horiz = Contributions::new(w, out_w, spec);
    let vert = Contributions::new(h, out_h, spec);
    let mut rows = Vec::with_capacity(out_w * h);
    for y in 0..h {
        rows.extend(horiz.apply(&plane.data()[y * w..(y + 1) * w], 1, 0));
    }
    let mut out = vec![0.0f32; out_w * out_h];
    for x in 0..out_w {
        for (y, v) in vert.apply(&rows, out_w, x).enumerate() {
            out[y * out_w + x] = v;
        }
    }
    Plane::new(out_w, out_h, out)
}

/// Same as [`bicubic_resize`] with the column pass first; used to check separability.
pub fn bicubic_resize_columns_first(plane: &Plane, out_w: usize, out_h: usize, spec: &KernelSpec) -> Result<Plane> {
    let t = transpose(plane);
    let r = bicubic_resize(&t, out_h, out_w, spec)?;
    Ok(transpose(&r))
}

pub(crate) fn transpose(p: &Plane) -> Plane {
    Plane::from_fn(p.height(), p.width(), |x, y| p.get(y, x))
}

pub fn check_scale(scale: usize) -> Result<()> {
    if (2..=4).contains(&scale) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("scale must be 2, 3 or 4, got {scale}")))
    }
}

/// Bicubic downsample of every plane by `1/scale`, antialiased unless
/// `spec.antialias` is off. Dimensions must already be multiples of `scale`.
pub fn degrade(hr: &PlanarImage, scale: usize, spec: &KernelSpec) -> Result<PlanarImage> {
    check_scale(scale)?;
    let (w, h) = (hr.width(), hr.height());
    if w % scale != 0 || h % scale != 0 {
        return Err(Error::dim(format!(
            "HR size {w}×{h} is not a multiple of scale {scale}; crop first"
        )));
    }
    hr.try_map_planes(|p| bicubic_resize(p, w / scale, h / scale, spec))
}

pub fn degrade_plane(hr: &Plane, scale: usize, spec: &KernelSpec) -> Result<Plane> {
    Ok(degrade(&PlanarImage::luma(hr.clone()), scale, spec)?.y)
}

/// Plain-branch upscale: bicubic enlargement by `scale`.
pub fn pb_upscale(lr: &Plane, scale: usize, spec: &KernelSpec) -> Result<Plane> {
    check_scale(scale)?;
    bicubic_resize(lr, lr.width() * scale, lr.height() * scale, spec)
}

/// Crops to the largest multiple of `scale`, anchored top-left.
pub fn crop_to_multiple(img: &PlanarImage, scale: usize) -> Result<PlanarImage> {
    let (w, h) = ((img.width() / scale) * scale, (img.height() / scale) * scale);
    if w == 0 || h == 0 {
        return Err(Error::dim(format!(
            "image {}×{} is smaller than scale {scale}",
            img.width(),
            img.height()
        )));
    }
    img.try_map_planes(|p| p.crop(0, 0, w, h))
}
