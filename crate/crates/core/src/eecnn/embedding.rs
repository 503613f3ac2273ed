use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{gray_from_l, RgbImage};
use crate::dataset::resize_rgb;
use crate::error::{Error, Result};
use crate::plane::Plane;

/// A frozen image classifier used as a global semantic feature extractor.
///
/// Implementations must be deterministic and return `dim()` finite values.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Native input resolution as `(width, height)`, if the provider has one.
    fn input_size(&self) -> Option<(usize, usize)> {
        None
    }

    fn embed(&self, image: &RgbImage) -> Vec<f64>;
}

/// Runs `provider` on a luminance plane: the plane is replicated into a
/// neutral RGB image and resized to the provider's native size.
pub fn embed_luminance(provider: &dyn EmbeddingProvider, l: &Plane) -> Result<Vec<f64>> {
    let mut rgb = gray_from_l(l);
    if let Some(size) = provider.input_size() {
        rgb = resize_rgb(&rgb, size)?;
    }
    let v = provider.embed(&rgb);
    if v.len() != provider.dim() {
        return Err(Error::Shape(format!(
            "provider {} returned {} values, declared {}",
            provider.name(),
            v.len(),
            provider.dim()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Range(format!(
            "provider {} returned a non-finite embedding",
            provider.name()
        )));
    }
    Ok(v)
}

/// Hermetic stand-in for a pretrained classifier: a fixed random projection
/// of the per-channel image means, squashed with `tanh`.
#[derive(Debug, Clone)]
pub struct ConstantEmbedder {
    name: String,
    rows: Vec<[f64; 4]>,
}

pub fn constant_embedder(dim: usize, seed: u64) -> Result<ConstantEmbedder> {
    if dim == 0 {
        return Err(Error::Argument("embedding dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..dim)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(ConstantEmbedder {
        name: format!("constant-projection(seed={seed})"),
        rows,
    })
}

impl EmbeddingProvider for ConstantEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn embed(&self, image: &RgbImage) -> Vec<f64> {
        let mut sums = [0.0f64; 3];
        for px in image.pixels() {
            for (s, &c) in sums.iter_mut().zip(px) {
                *s += c as f64;
            }
        }
        let n = image.pixels().len() as f64 * 255.0;
        let means = sums.map(|s| s / n);
        self.rows
            .iter()
            .map(|r| (r[0] * means[0] + r[1] * means[1] + r[2] * means[2] + r[3]).tanh())
            .collect()
    }
}
