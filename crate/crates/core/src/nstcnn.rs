//! Reference-guided colorization: fit the colorization network on the
//! `L → AB` mapping of one colorful reference, then run the fitted weights on
//! a grayscale content plane.
//!
//! A single image is a very small training set, and a convolutional network
//! fitted on it readily memorizes *where* each color sits instead of *which
//! luminance* carries it. The fit therefore sees the reference under random
//! torus shifts by multiples of the encoder stride and random mirror flips,
//! applied identically to `L` and `AB`. Each view keeps every pixel's own
//! `(L, AB)` pair, so the target mapping is unchanged while absolute position
//! stops being informative.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint_for, save_checkpoint};
use crate::colorspace::{rgb_to_lab, split_l_ab, ChromaMap, LabImage, RgbImage};
use crate::eecnn::{EeCnn, EeCnnConfig, EmbeddingProvider, ModelWeights, REDUCTION};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::prepost::{enforce_same_l_same_ab_with, Aggregator, RegionMask};
use crate::trainer::{Fitter, TrainingPair};

pub const DEFAULT_FIT_BUDGET: usize = 2000;
/// Squared AB units.
pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const DEFAULT_BIN_WIDTH: f64 = 1.0;

/// A colorful reference and the content pixels it is responsible for.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    image: LabImage,
    /// Non-zero labels mark covered content pixels.
    mask: Option<RegionMask>,
}

impl ReferenceSpec {
    pub fn from_rgb(img: &RgbImage) -> Self {
        ReferenceSpec {
            image: rgb_to_lab(img),
            mask: None,
        }
    }

    pub fn from_lab(image: LabImage) -> Self {
        ReferenceSpec { image, mask: None }
    }

    pub fn with_mask(mut self, mask: RegionMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn image(&self) -> &LabImage {
        &self.image
    }

    pub fn mask(&self) -> Option<&RegionMask> {
        self.mask.as_ref()
    }
}

/// Optimization settings for one reference fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Maximum number of optimizer steps; must be at least 1.
    pub budget: usize,
    /// Stop once a step's loss (AB² units) falls below this.
    pub threshold: f64,
    pub learning_rate: f64,
    /// Seeds both weight initialization and augmentation.
    pub seed: u64,
    /// Shift/flip augmentation of the reference during fitting.
    pub augment: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            budget: DEFAULT_FIT_BUDGET,
            threshold: DEFAULT_THRESHOLD,
            learning_rate: 1e-4,
            seed: 0,
            augment: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Argument("fit budget must be at least 1 step".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.threshold.is_nan() {
            return Err(Error::Argument("threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedReference {
    pub weights: ModelWeights,
    /// Loss of the fitted weights on the un-augmented reference, AB² units.
    pub final_loss: f64,
    /// Optimizer steps taken; 0 when loaded from a cache.
    pub steps: usize,
}

/// Mirrors then rotates `p` on the torus by `(dx, dy)`.
fn torus_view(p: &Plane, dx: usize, dy: usize, flip_x: bool, flip_y: bool) -> Plane {
    let (w, h) = p.dims();
    Plane::from_fn(w, h, |x, y| {
        let x = if flip_x { w - 1 - x } else { x };
        let y = if flip_y { h - 1 - y } else { y };
        p.get((x + dx) % w, (y + dy) % h)
    })
}

fn pad_chroma(ab: &ChromaMap) -> ChromaMap {
    let (w, h) = ab.dims();
    let pad = |n: usize| n.div_ceil(REDUCTION) * REDUCTION - n;
    let (pw, ph) = (pad(w), pad(h));
    ChromaMap::new(ab.a().pad_reflect(pw, ph), ab.b().pad_reflect(pw, ph))
        .expect("reflection keeps values in range")
}

/// Fits a freshly initialized network on the reference's own `(L, AB)` pair.
pub fn fit_reference(
    reference: &ReferenceSpec,
    config: &EeCnnConfig,
    options: &FitOptions,
    provider: &dyn EmbeddingProvider,
) -> Result<FittedReference> {
    options.validate()?;
    let net = EeCnn::new(config.clone())?;
    let (l, ab) = split_l_ab(&reference.image);
    let embedding = net.embedding_for(&l, provider)?;
    // Padding the pair, not the L plane alone, keeps shifted views consistent.
    let l_pad = EeCnn::pad_input(&l);
    let ab_pad = pad_chroma(&ab);
    let (w, h) = l_pad.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0xa6_a6a6);
    let mut fitter = Fitter::new(&net, net.init_weights(options.seed), options.learning_rate)?;
    let mut steps = 0;
    for _ in 0..options.budget {
        let pair = if options.augment {
            let dx = rng.gen_range(0..w / REDUCTION) * REDUCTION;
            let dy = rng.gen_range(0..h / REDUCTION) * REDUCTION;
            let (fx, fy) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            let view = |p: &Plane| torus_view(p, dx, dy, fx, fy);
            TrainingPair {
                l: view(&l_pad),
                target: ChromaMap::new(view(ab_pad.a()), view(ab_pad.b()))
                    .expect("views permute in-range values"),
                embedding: embedding.clone(),
            }
        } else {
            TrainingPair {
                l: l_pad.clone(),
                target: ab_pad.clone(),
                embedding: embedding.clone(),
            }
        };
        let loss = fitter.step(&[&pair])?;
        steps += 1;
        if loss < options.threshold {
            break;
        }
    }
    let final_loss = fitter.evaluate(&[TrainingPair {
        l,
        target: ab,
        embedding,
    }])?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: steps,
            loss: final_loss,
        });
    }
    Ok(FittedReference {
        weights: fitter.into_weights(),
        final_loss,
        steps,
    })
}

/// Hex SHA-256 over the reference pixels, the architecture fingerprint and
/// the fit options; identifies a fit for caching.
pub fn reference_key(
    reference: &ReferenceSpec,
    config: &EeCnnConfig,
    options: &FitOptions,
) -> String {
    let mut hasher = Sha256::new();
    let (w, h) = reference.image.dims();
    hasher.update((w as u64).to_le_bytes());
    hasher.update((h as u64).to_le_bytes());
    for p in [
        reference.image.l(),
        reference.image.a(),
        reference.image.b(),
    ] {
        for v in p.as_slice() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.update(config.fingerprint().as_bytes());
    hasher.update(
        format!(
            "{}|{}|{}|{}|{}",
            options.budget, options.threshold, options.learning_rate, options.seed, options.augment
        )
        .as_bytes(),
    );
    hex::encode(hasher.finalize())
}

/// As [`fit_reference`], reusing `<dir>/<key>.ckpt` when present and writing
/// it otherwise.
pub fn fit_reference_cached(
    reference: &ReferenceSpec,
    config: &EeCnnConfig,
    options: &FitOptions,
    provider: &dyn EmbeddingProvider,
    dir: &Path,
) -> Result<FittedReference> {
    let path = dir.join(format!(
        "{}.ckpt",
        reference_key(reference, config, options)
    ));
    if path.exists() {
        let weights = load_checkpoint_for(&path, config)?;
        let net = EeCnn::new(config.clone())?;
        let (l, ab) = split_l_ab(&reference.image);
        let embedding = net.embedding_for(&l, provider)?;
        let final_loss = Fitter::new(&net, weights.clone(), options.learning_rate)?.evaluate(&[
            TrainingPair {
                l,
                target: ab,
                embedding,
            },
        ])?;
        return Ok(FittedReference {
            weights,
            final_loss,
            steps: 0,
        });
    }
    let fitted = fit_reference(reference, config, options, provider)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&fitted.weights, &path)?;
    Ok(fitted)
}

/// A content plane and the references that color it.
#[derive(Debug, Clone)]
pub struct TransferJob {
    pub content_l: Plane,
    pub references: Vec<ReferenceSpec>,
    pub fit: FitOptions,
    /// Luminance bin width of the post-process; `None` skips it.
    pub bin_width: Option<f64>,
    pub aggregator: Aggregator,
    pub cache_dir: Option<PathBuf>,
}

impl TransferJob {
    pub fn new(content_l: Plane, references: Vec<ReferenceSpec>) -> Self {
        TransferJob {
            content_l,
            references,
            fit: FitOptions::default(),
            bin_width: Some(DEFAULT_BIN_WIDTH),
            aggregator: Aggregator::Mean,
            cache_dir: None,
        }
    }

    /// Label of the reference coloring each content pixel. Pixels outside a
    /// lone reference's mask get the extra label `1` and stay achromatic.
    pub fn assignment(&self) -> Result<RegionMask> {
        let (w, h) = self.content_l.dims();
        let n = self.references.len();
        if n == 0 {
            return Err(Error::Argument(
                "transfer needs at least one reference".into(),
            ));
        }
        for (i, r) in self.references.iter().enumerate() {
            match &r.mask {
                Some(m) if m.dims() != (w, h) => {
                    return Err(Error::Shape(format!(
                        "mask of reference {i} is {:?}, content is {:?}",
                        m.dims(),
                        (w, h)
                    )))
                }
                None if n > 1 => {
                    return Err(Error::Argument(format!(
                    "reference {i} has no mask; every reference needs one when several are given"
                )))
                }
                _ => {}
            }
        }
        if n == 1 {
            return match &self.references[0].mask {
                None => Ok(RegionMask::single(w, h)),
                Some(m) => {
                    let labels: Vec<u32> = m.coverage().iter().map(|&c| u32::from(!c)).collect();
                    let count = labels.iter().max().map_or(1, |&m| m as usize + 1);
                    RegionMask::new(w, h, labels, count)
                }
            };
        }
        let mut owner = vec![u32::MAX; w * h];
        let mut overlaps = 0;
        for (i, r) in self.references.iter().enumerate() {
            let cover = r.mask.as_ref().expect("checked above").coverage();
            for (o, c) in owner.iter_mut().zip(cover) {
                if !c {
                    continue;
                }
                if *o == u32::MAX {
                    *o = i as u32;
                } else {
                    overlaps += 1;
                }
            }
        }
        if overlaps > 0 {
            return Err(Error::Mask {
                pixels: overlaps,
                problem: "covered by more than one reference mask",
            });
        }
        let gaps = owner.iter().filter(|&&o| o == u32::MAX).count();
        if gaps > 0 {
            return Err(Error::Mask {
                pixels: gaps,
                problem: "covered by no reference mask",
            });
        }
        RegionMask::new(w, h, owner, n)
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    /// Final chroma after compositing and the post-process.
    pub chroma: ChromaMap,
    /// Composited chroma before the post-process.
    pub raw: ChromaMap,
    pub assignment: RegionMask,
    pub fits: Vec<FittedReference>,
}

/// Fits every reference, composites their predictions on the content plane by
/// mask, then applies the same-luminance-same-chroma post-process per region.
pub fn transfer(
    job: &TransferJob,
    config: &EeCnnConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<TransferResult> {
    job.fit.validate()?;
    let assignment = job.assignment()?;
    let net = EeCnn::new(config.clone())?;
    let (w, h) = job.content_l.dims();
    let embedding = net.embedding_for(&job.content_l, provider)?;
    let mut a = Plane::filled(w, h, 0.0);
    let mut b = Plane::filled(w, h, 0.0);
    let mut fits = Vec::with_capacity(job.references.len());
    for (i, reference) in job.references.iter().enumerate() {
        let fitted = match &job.cache_dir {
            Some(dir) => fit_reference_cached(reference, config, &job.fit, provider, dir)?,
            None => fit_reference(reference, config, &job.fit, provider)?,
        };
        let pred = net.forward_with_embedding(&job.content_l, &embedding, &fitted.weights)?;
        for (k, &label) in assignment.labels().iter().enumerate() {
            if label as usize == i {
                a.as_mut_slice()[k] = pred.a().as_slice()[k];
                b.as_mut_slice()[k] = pred.b().as_slice()[k];
            }
        }
        fits.push(fitted);
    }
    let raw = ChromaMap::new(a, b)?;
    let chroma = match job.bin_width {
        Some(bw) => enforce_same_l_same_ab_with(
            &job.content_l,
            &raw,
            bw,
            Some(&assignment),
            job.aggregator,
        )?,
        None => raw.clone(),
    };
    Ok(TransferResult {
        chroma,
        raw,
        assignment,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eecnn::constant_embedder;

    fn lab(w: usize, h: usize, l: f64, a: f64) -> LabImage {
        LabImage::new(
            Plane::filled(w, h, l),
            Plane::filled(w, h, a),
            Plane::filled(w, h, 0.0),
        )
        .unwrap()
    }

    fn options(budget: usize) -> FitOptions {
        FitOptions {
            budget,
            threshold: 0.0,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_budget_rejected() {
        let cfg = EeCnnConfig::miniature();
        let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
        let r = ReferenceSpec::from_lab(lab(8, 8, 50.0, 0.0));
        let e = fit_reference(&r, &cfg, &options(0), &p).unwrap_err();
        assert_eq!(e.kind(), "argument");
    }

    #[test]
    fn torus_view_is_a_permutation() {
        let p = Plane::from_fn(16, 8, |x, y| (y * 16 + x) as f64);
        let v = torus_view(&p, 8, 0, true, false);
        let mut got = v.into_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, p.into_vec());
    }

    #[test]
    fn fit_is_deterministic_and_handles_odd_sizes() {
        let cfg = EeCnnConfig::miniature();
        let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
        let r = ReferenceSpec::from_lab(lab(11, 9, 40.0, 12.0));
        let f1 = fit_reference(&r, &cfg, &options(5), &p).unwrap();
        let f2 = fit_reference(&r, &cfg, &options(5), &p).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.steps, 5);
    }

    #[test]
    fn mask_gap_and_overlap_reported() {
        let content = Plane::filled(4, 1, 50.0);
        let refs = |m0: Vec<u32>, m1: Vec<u32>| {
            vec![
                ReferenceSpec::from_lab(lab(8, 8, 50.0, 0.0))
                    .with_mask(RegionMask::new(4, 1, m0, 2).unwrap()),
                ReferenceSpec::from_lab(lab(8, 8, 50.0, 0.0))
                    .with_mask(RegionMask::new(4, 1, m1, 2).unwrap()),
            ]
        };
        let job = TransferJob::new(content.clone(), refs(vec![1, 1, 0, 0], vec![0, 1, 1, 0]));
        match job.assignment() {
            Err(Error::Mask { pixels: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let job = TransferJob::new(content.clone(), refs(vec![1, 0, 0, 0], vec![0, 1, 0, 0]));
        match job.assignment() {
            Err(Error::Mask { pixels: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let job = TransferJob::new(content, refs(vec![1, 1, 0, 0], vec![0, 0, 1, 1]));
        assert_eq!(job.assignment().unwrap().labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn output_matches_content_dims() {
        let cfg = EeCnnConfig::miniature();
        let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
        let mut job = TransferJob::new(
            Plane::from_fn(13, 6, |x, _| x as f64 * 5.0),
            vec![ReferenceSpec::from_lab(lab(24, 16, 50.0, 20.0))],
        );
        job.fit = options(3);
        let out = transfer(&job, &cfg, &p).unwrap();
        assert_eq!(out.chroma.dims(), (13, 6));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EeCnnConfig::miniature();
        let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
        let r = ReferenceSpec::from_lab(lab(8, 8, 30.0, -5.0));
        let first = fit_reference_cached(&r, &cfg, &options(4), &p, dir.path()).unwrap();
        let second = fit_reference_cached(&r, &cfg, &options(4), &p, dir.path()).unwrap();
        assert_eq!(first.weights, second.weights);
        assert_eq!(second.steps, 0);
        assert!((first.final_loss - second.final_loss).abs() < 1e-12);
    }
}
