//! Conversions between 8-bit sRGB, CIELAB (D65) and HSV, plus the split of a
//! LAB image into its luminance plane and chroma map.
//!
//! LAB planes are kept in `f64`; quantization back to 8 bits only happens in
//! [`lab_to_rgb`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

pub const L_MIN: f64 = 0.0;
pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// Packed 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        RgbImage {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            pixels,
        }
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

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// Raw interleaved bytes, `r g b r g b ...`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        RgbImage::new(width, height, pixels)
    }
}

/// CIELAB planes. L in `[0, 100]`, A and B in `[-128, 127]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabImage {
    l: Plane,
    a: Plane,
    b: Plane,
}

impl LabImage {
    pub fn new(l: Plane, a: Plane, b: Plane) -> Result<Self> {
        l.ensure_same_dims(&a, "L and A planes")?;
        l.ensure_same_dims(&b, "L and B planes")?;
        check_range(&l, L_MIN, L_MAX, "L")?;
        check_range(&a, AB_MIN, AB_MAX, "A")?;
        check_range(&b, AB_MIN, AB_MAX, "B")?;
        Ok(LabImage { l, a, b })
    }

    pub fn width(&self) -> usize {
        self.l.width()
    }

    pub fn height(&self) -> usize {
        self.l.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.l.dims()
    }

    pub fn l(&self) -> &Plane {
        &self.l
    }

    pub fn a(&self) -> &Plane {
        &self.a
    }

    pub fn b(&self) -> &Plane {
        &self.b
    }
}

/// The predicted (or ground-truth) A and B planes of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromaMap {
    a: Plane,
    b: Plane,
}

impl ChromaMap {
    pub fn new(a: Plane, b: Plane) -> Result<Self> {
        a.ensure_same_dims(&b, "A and B planes")?;
        check_range(&a, AB_MIN, AB_MAX, "A")?;
        check_range(&b, AB_MIN, AB_MAX, "B")?;
        Ok(ChromaMap { a, b })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ChromaMap {
            a: Plane::filled(width, height, 0.0),
            b: Plane::filled(width, height, 0.0),
        }
    }

    /// Builds a map from unchecked planes, clamping into the chroma range.
    pub(crate) fn clamped(a: Plane, b: Plane) -> Self {
        debug_assert_eq!(a.dims(), b.dims());
        let clamp = |v: f64| v.clamp(AB_MIN, AB_MAX);
        ChromaMap {
            a: a.map(clamp),
            b: b.map(clamp),
        }
    }

    pub fn width(&self) -> usize {
        self.a.width()
    }

    pub fn height(&self) -> usize {
        self.a.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.a.dims()
    }

    pub fn a(&self) -> &Plane {
        &self.a
    }

    pub fn b(&self) -> &Plane {
        &self.b
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        (self.a.get(x, y), self.b.get(x, y))
    }

    pub fn into_planes(self) -> (Plane, Plane) {
        (self.a, self.b)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<ChromaMap> {
        Ok(ChromaMap {
            a: self.a.crop(x0, y0, width, height)?,
            b: self.b.crop(x0, y0, width, height)?,
        })
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

fn check_range(p: &Plane, lo: f64, hi: f64, name: &str) -> Result<()> {
    if let Some(v) = p.as_slice().iter().find(|v| !(lo..=hi).contains(*v)) {
        return Err(Error::Range(format!(
            "{name} value {v} outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white as the image of linear RGB (1, 1, 1), so neutral inputs
/// land exactly on the achromatic axis.
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row[0] + row[1] + row[2])
}

fn xyz_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_XYZ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, out) in row.iter_mut().enumerate() {
            // cofactor of (j, i)
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *out = sign * minor / det;
        }
    }
    inv
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Converts one sRGB pixel to `(L, A, B)`.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let w = white();
    let xyz: Vec<f64> = RGB_TO_XYZ
        .iter()
        .zip(w)
        .map(|(row, wn)| (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / wn)
        .collect();
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    [
        (116.0 * fy - 16.0).clamp(L_MIN, L_MAX),
        (500.0 * (fx - fy)).clamp(AB_MIN, AB_MAX),
        (200.0 * (fy - fz)).clamp(AB_MIN, AB_MAX),
    ]
}

/// Converts `(L, A, B)` to sRGB, clamping out-of-gamut channels.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white();
    let xyz = [
        lab_f_inv(fx) * w[0],
        lab_f_inv(fy) * w[1],
        lab_f_inv(fz) * w[2],
    ];
    let m = xyz_to_rgb_matrix();
    let mut out = [0u8; 3];
    for (o, row) in out.iter_mut().zip(m) {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        let enc = linear_to_srgb(lin.clamp(0.0, 1.0));
        *o = (enc * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = img.dims();
    let n = w * h;
    let (mut l, mut a, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for &px in img.pixels() {
        let [pl, pa, pb] = rgb_pixel_to_lab(px);
        l.push(pl);
        a.push(pa);
        b.push(pb);
    }
    LabImage {
        l: Plane::new(w, h, l).expect("dims checked"),
        a: Plane::new(w, h, a).expect("dims checked"),
        b: Plane::new(w, h, b).expect("dims checked"),
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let (l, a, b) = (img.l.as_slice(), img.a.as_slice(), img.b.as_slice());
    let pixels = (0..l.len())
        .map(|i| lab_pixel_to_rgb([l[i], a[i], b[i]]))
        .collect();
    RgbImage {
        width: img.width(),
        height: img.height(),
        pixels,
    }
}

/// Hexcone HSV of one pixel. Achromatic pixels get hue 0 and saturation 0.
pub fn rgb_pixel_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == min {
        return [0.0, 0.0, v];
    }
    let delta = (max - min) as f64;
    let s = delta / max as f64;
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let sector = if max as f64 == r {
        (g - b) / delta
    } else if max as f64 == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    [h, s, v]
}

pub fn rgb_to_hsv(img: &RgbImage) -> HsvImage {
    let n = img.pixels.len();
    let mut out = HsvImage {
        width: img.width,
        height: img.height,
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for &px in &img.pixels {
        let [h, s, v] = rgb_pixel_to_hsv(px);
        out.h.push(h);
        out.s.push(s);
        out.v.push(v);
    }
    out
}

/// Splits a LAB image into its luminance plane and chroma map.
pub fn split_l_ab(img: &LabImage) -> (Plane, ChromaMap) {
    (
        img.l.clone(),
        ChromaMap {
            a: img.a.clone(),
            b: img.b.clone(),
        },
    )
}

pub fn merge_l_ab(l: &Plane, ab: &ChromaMap) -> Result<LabImage> {
    if l.dims() != ab.dims() {
        return Err(Error::Shape(format!(
            "L plane {}x{} vs chroma {}x{}",
            l.width(),
            l.height(),
            ab.width(),
            ab.height()
        )));
    }
    check_range(l, L_MIN, L_MAX, "L")?;
    Ok(LabImage {
        l: l.clone(),
        a: ab.a.clone(),
        b: ab.b.clone(),
    })
}

/// Replicates an L plane into a neutral RGB image.
pub fn gray_from_l(l: &Plane) -> RgbImage {
    let pixels = l
        .as_slice()
        .iter()
        .map(|&v| lab_pixel_to_rgb([v.clamp(L_MIN, L_MAX), 0.0, 0.0]))
        .collect();
    RgbImage {
        width: l.width(),
        height: l.height(),
        pixels,
    }
}
