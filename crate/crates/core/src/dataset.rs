//! Image ingestion, resizing, train/test splitting and `(L, AB)` sample
//! streaming.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{rgb_to_lab, split_l_ab, ChromaMap, RgbImage};
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Resize target used by the training protocol.
pub const DEFAULT_RESIZE: (usize, usize) = (300, 300);
pub const DEFAULT_SPLIT_RATIO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            other => Err(Error::Argument(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, Role)>,
    /// `(width, height)`.
    pub resize: (usize, usize),
    pub ratio: f64,
    pub seed: u64,
}

/// One training pair: the network input and its chroma target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub l: Plane,
    pub ab: ChromaMap,
    pub source_id: String,
}

fn to_image_buffer(img: &RgbImage) -> image::RgbImage {
    image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_bytes())
        .expect("buffer length matches dimensions")
}

fn from_image_buffer(buf: &image::RgbImage) -> RgbImage {
    RgbImage::from_bytes(buf.width() as usize, buf.height() as usize, buf.as_raw())
        .expect("buffer length matches dimensions")
}

/// Bilinear resize; returns an identical copy when the size already matches.
pub fn resize_rgb(img: &RgbImage, (width, height): (usize, usize)) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "resize target {width}x{height} has a zero dimension"
        )));
    }
    if img.dims() == (width, height) {
        return Ok(img.clone());
    }
    let resized = image::imageops::resize(
        &to_image_buffer(img),
        width as u32,
        height as u32,
        FilterType::Triangle,
    );
    Ok(from_image_buffer(&resized))
}

/// Decodes an 8-bit PNG, JPEG or TIFF. Single-channel sources are replicated
/// into `r = g = b`.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::Shape(format!("{} has no pixels", path.display())));
    }
    Ok(from_image_buffer(&rgb))
}

pub fn load_and_resize(path: &Path, target: (usize, usize)) -> Result<RgbImage> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Argument(format!(
            "resize target {}x{} has a zero dimension",
            target.0, target.1
        )));
    }
    resize_rgb(&load_rgb(path)?, target)
}

/// Encodes as PNG.
pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    to_image_buffer(img)
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit grayscale image as raw byte values.
pub fn load_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub fn save_gray8(width: usize, height: usize, data: Vec<u8>, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::Shape("gray buffer length".into()))?;
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Shuffles `paths` with a seeded RNG and assigns the first
/// `round(ratio * N)` to the training role.
pub fn make_split(paths: &[PathBuf], ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if paths.is_empty() {
        return Err(Error::Argument("no images to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = paths.iter().find(|p| !seen.insert(*p)) {
        return Err(Error::Argument(format!("duplicate path {}", dup.display())));
    }
    let mut order: Vec<&PathBuf> = paths.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * paths.len() as f64).round() as usize;
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            (
                p.clone(),
                if i < n_train { Role::Train } else { Role::Test },
            )
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        resize: DEFAULT_RESIZE,
        ratio,
        seed,
    })
}

/// Sorted list of image files (png/jpg/jpeg/tif/tiff) directly under `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(
            ext.as_deref(),
            Some("png" | "jpg" | "jpeg" | "tif" | "tiff")
        ) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

impl DatasetManifest {
    pub fn with_resize(mut self, resize: (usize, usize)) -> Self {
        self.resize = resize;
        self
    }

    pub fn paths(&self, role: Role) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |(_, r)| *r == role)
            .map(|(p, _)| p.as_path())
    }

    pub fn count(&self, role: Role) -> usize {
        self.paths(role).count()
    }

    /// Line-oriented text: `#`-prefixed metadata, then one `path<TAB>role`
    /// line per entry.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# resize={}x{}\n# ratio={}\n# seed={}\n",
            self.resize.0, self.resize.1, self.ratio, self.seed
        );
        for (p, r) in &self.entries {
            s.push_str(&format!("{}\t{}\n", p.display(), r));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = DatasetManifest {
            entries: Vec::new(),
            resize: DEFAULT_RESIZE,
            ratio: DEFAULT_SPLIT_RATIO,
            seed: 0,
        };
        let bad = |line: &str| Error::Argument(format!("malformed manifest line {line:?}"));
        let mut seen = HashSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                match key.trim() {
                    "resize" => {
                        let (w, h) = value.trim().split_once('x').ok_or_else(|| bad(line))?;
                        m.resize = (
                            w.parse().map_err(|_| bad(line))?,
                            h.parse().map_err(|_| bad(line))?,
                        );
                    }
                    "ratio" => m.ratio = value.trim().parse().map_err(|_| bad(line))?,
                    "seed" => m.seed = value.trim().parse().map_err(|_| bad(line))?,
                    _ => {}
                }
                continue;
            }
            let (path, role) = line.rsplit_once('\t').ok_or_else(|| bad(line))?;
            let path = PathBuf::from(path);
            if !seen.insert(path.clone()) {
                return Err(Error::Argument(format!(
                    "duplicate path {}",
                    path.display()
                )));
            }
            m.entries.push((path, role.trim().parse()?));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Streams the samples of one role in manifest order.
    pub fn samples(&self, role: Role) -> impl Iterator<Item = Result<Sample>> + '_ {
        let resize = self.resize;
        self.paths(role).map(move |p| {
            let source_id = p.display().to_string();
            load_and_resize(p, resize)
                .map(|img| sample_from_rgb(&img, source_id.clone()))
                .map_err(|e| Error::Sample {
                    source_id,
                    source: Box::new(e),
                })
        })
    }
}

/// Converts an image into an `(L, AB)` pair without resizing.
pub fn sample_from_rgb(img: &RgbImage, source_id: String) -> Sample {
    let (l, ab) = split_l_ab(&rgb_to_lab(img));
    Sample { l, ab, source_id }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(n: usize) -> Vec<PathBuf> {
        (0..n)
            .map(|i| PathBuf::from(format!("img_{i:04}.png")))
            .collect()
    }

    #[test]
    fn split_counts() {
        let m = make_split(&paths(1000), 0.9, 1).unwrap();
        assert_eq!((m.count(Role::Train), m.count(Role::Test)), (900, 100));
        let m = make_split(&paths(10), 0.9, 1).unwrap();
        assert_eq!((m.count(Role::Train), m.count(Role::Test)), (9, 1));
    }

    #[test]
    fn split_errors() {
        assert!(make_split(&[], 0.9, 1).is_err());
        assert!(make_split(&paths(3), 1.0, 1).is_err());
        let mut dup = paths(3);
        dup.push(dup[0].clone());
        assert!(make_split(&dup, 0.5, 1).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = make_split(&paths(7), 0.5, 42)
            .unwrap()
            .with_resize((64, 32));
        let back = DatasetManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn zero_target_rejected() {
        let img = RgbImage::filled(4, 4, [1, 2, 3]);
        assert!(matches!(resize_rgb(&img, (0, 4)), Err(Error::Argument(_))));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = RgbImage::from_fn(9, 7, |x, y| [(x * 20) as u8, (y * 30) as u8, 99]);
        assert_eq!(resize_rgb(&img, (9, 7)).unwrap(), img);
    }
}
