//! PNG I/O, BT.601 studio-swing colour conversion and floating-point planes.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// A single floating-point image channel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "plane {width}×{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::dim(format!(
                "crop {width}×{height}+{x0}+{y0} exceeds plane {}×{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Plane { width, height, data })
    }

    /// Writes `src` into this plane with its top-left corner at (x0, y0),
    /// dropping whatever falls outside.
    pub fn paste(&mut self, src: &Plane, x0: usize, y0: usize) {
        let w = src.width.min(self.width.saturating_sub(x0));
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            let dst = (y0 + y) * self.width + x0;
            self.data[dst..dst + w].copy_from_slice(&src.data[y * src.width..y * src.width + w]);
        }
    }

    /// Rounds to the nearest integer and clamps to [0, 255], as storing to 8 bits would.
    pub fn quantized(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| quantize(*v) as f32).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Clamp to [0, 255] and round half away from zero.
#[inline]
pub fn quantize(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "RGB image {width}×{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// A grey image with R = G = B taken from a quantized plane.
    pub fn from_gray(plane: &Plane) -> Self {
        let data = plane.data().iter().flat_map(|v| [quantize(*v); 3]).collect();
        RgbImage {
            width: plane.width(),
            height: plane.height(),
            data,
        }
    }
}

/// Luma plus optional chroma planes, all the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    pub y: Plane,
    pub cb: Option<Plane>,
    pub cr: Option<Plane>,
}

impl PlanarImage {
    pub fn luma(y: Plane) -> Self {
        PlanarImage { y, cb: None, cr: None }
    }

    pub fn with_chroma(y: Plane, cb: Plane, cr: Plane) -> Result<Self> {
        if cb.dims() != y.dims() || cr.dims() != y.dims() {
            return Err(Error::dim("chroma planes must match the luma plane size"));
        }
        Ok(PlanarImage {
            y,
            cb: Some(cb),
            cr: Some(cr),
        })
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }

    pub fn planes(&self) -> impl Iterator<Item = &Plane> {
        std::iter::once(&self.y).chain(self.cb.iter()).chain(self.cr.iter())
    }

    /// Applies `f` to every present plane.
    pub fn try_map_planes(&self, mut f: impl FnMut(&Plane) -> Result<Plane>) -> Result<PlanarImage> {
        Ok(PlanarImage {
            y: f(&self.y)?,
            cb: self.cb.as_ref().map(&mut f).transpose()?,
            cr: self.cr.as_ref().map(&mut f).transpose()?,
        })
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut cursor = Cursor::new(bytes);
    let decoded = decode_from(&mut cursor);
    decoded.map_err(|e| match e {
        Error::Decode { message, .. } => Error::Decode {
            offset: cursor.position(),
            message,
        },
        other => other,
    })
}

fn decode_from(cursor: &mut Cursor<&[u8]>) -> Result<RgbImage> {
    let fail = |message: String| Error::Decode { offset: 0, message };
    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fail(e.to_string()))?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(fail("16-bit PNGs are not supported".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let buf = &buf[..frame.buffer_size()];
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(fail("palette was not expanded".into())),
    };
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(fail(format!("unsupported bit depth {:?}", frame.bit_depth)));
    }
    let stride = frame.line_size;
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * channels].chunks(channels) {
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0]; 3]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    RgbImage::new(w, h, data)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
        writer
            .write_image_data(&img.data)
            .map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

// BT.601 studio swing on R, G, B scaled to [0, 1].
const Y_ROW: [f64; 3] = [65.481, 128.553, 24.966];
const CB_ROW: [f64; 3] = [-37.797, -74.203, 112.0];
const CR_ROW: [f64; 3] = [112.0, -93.786, -18.214];

#[inline]
fn to_ycbcr(px: [u8; 3]) -> [f32; 3] {
    let [r, g, b] = px.map(|c| f64::from(c) / 255.0);
    let dot = |row: [f64; 3]| row[0] * r + row[1] * g + row[2] * b;
    [
        (16.0 + dot(Y_ROW)) as f32,
        (128.0 + dot(CB_ROW)) as f32,
        (128.0 + dot(CR_ROW)) as f32,
    ]
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> PlanarImage {
    let n = img.width * img.height;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [a, b, c] = to_ycbcr([px[0], px[1], px[2]]);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    let (w, h) = (img.width, img.height);
    PlanarImage {
        y: Plane {
            width: w,
            height: h,
            data: y,
        },
        cb: Some(Plane {
            width: w,
            height: h,
            data: cb,
        }),
        cr: Some(Plane {
            width: w,
            height: h,
            data: cr,
        }),
    }
}

/// Inverse of the studio-swing transform in 8-bit RGB.
pub fn ycbcr_to_rgb(img: &PlanarImage) -> Result<RgbImage> {
    let (Some(cb), Some(cr)) = (&img.cb, &img.cr) else {
        return Err(Error::InvalidArgument("YCbCr → RGB needs both chroma planes".into()));
    };
    // Inverse of the forward matrix (rows Y, Cb, Cr), premultiplied by 255.
    let inv = invert3([Y_ROW, CB_ROW, CR_ROW]);
    let mut data = Vec::with_capacity(img.width() * img.height() * 3);
    for ((y, cb), cr) in img.y.data().iter().zip(cb.data()).zip(cr.data()) {
        let v = [f64::from(*y) - 16.0, f64::from(*cb) - 128.0, f64::from(*cr) - 128.0];
        for row in inv {
            let c = 255.0 * (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]);
            data.push(quantize(c as f32));
        }
    }
    RgbImage::new(img.width(), img.height(), data)
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of (j, i) gives the adjugate transpose.
            let r = [(j + 1) % 3, (j + 2) % 3];
            let c = [(i + 1) % 3, (i + 2) % 3];
            *v = (m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]]) / det;
        }
    }
    out
}

/// Only the luma plane.
pub fn extract_y(img: &PlanarImage) -> PlanarImage {
    PlanarImage::luma(img.y.clone())
}
