//! Region extraction before colorization and chroma regularization after it.
//!
//! Pre-processing: an [`EdgeDetector`] produces an [`EdgeMap`], which
//! [`label_regions`] turns into a [`RegionMask`]; [`adaptive_threshold`] splits
//! foreground from background for multi-reference transfer.
//!
//! Post-processing: [`uniform_fill`] paints each region with its mean chroma,
//! and [`enforce_same_l_same_ab`] gives every pixel in the same luminance bin
//! the same chroma.

use std::collections::{HashMap, VecDeque};

use crate::colorspace::ChromaMap;
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Per-pixel edge strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    strength: Plane,
}

impl EdgeMap {
    pub fn new(strength: Plane) -> Result<Self> {
        if let Some(v) = strength
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Range(format!("edge strength {v} outside [0, 1]")));
        }
        Ok(EdgeMap { strength })
    }

    pub fn strength(&self) -> &Plane {
        &self.strength
    }

    pub fn dims(&self) -> (usize, usize) {
        self.strength.dims()
    }

    /// Reads an 8-bit map where 255 is full strength.
    pub fn from_gray8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        let plane = Plane::new(
            width,
            height,
            data.iter().map(|&v| v as f64 / 255.0).collect(),
        )?;
        EdgeMap::new(plane)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.strength
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }
}

/// Anything that can turn a luminance plane into edge strengths.
pub trait EdgeDetector {
    fn detect(&self, l: &Plane) -> EdgeMap;
}

/// Central-difference gradient magnitude, divided by its maximum.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientMagnitude;

impl EdgeDetector for GradientMagnitude {
    fn detect(&self, l: &Plane) -> EdgeMap {
        let (w, h) = l.dims();
        let at = |x: isize, y: isize| {
            l.get(
                x.clamp(0, w as isize - 1) as usize,
                y.clamp(0, h as isize - 1) as usize,
            )
        };
        let mag = Plane::from_fn(w, h, |x, y| {
            let (x, y) = (x as isize, y as isize);
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            gx.hypot(gy)
        });
        let (_, max) = mag.min_max();
        let strength = if max > 0.0 {
            mag.map(|v| (v / max).min(1.0))
        } else {
            mag
        };
        EdgeMap { strength }
    }
}

/// An externally computed edge map (for example from a learned detector).
#[derive(Debug, Clone)]
pub struct PrecomputedEdges(pub EdgeMap);

impl EdgeDetector for PrecomputedEdges {
    fn detect(&self, _l: &Plane) -> EdgeMap {
        self.0.clone()
    }
}

pub fn detect_edges(l: &Plane, detector: &dyn EdgeDetector) -> Result<EdgeMap> {
    let edges = detector.detect(l);
    if edges.dims() != l.dims() {
        return Err(Error::Shape(format!(
            "edge map {:?} vs image {:?}",
            edges.dims(),
            l.dims()
        )));
    }
    Ok(edges)
}

/// Integer region labels over pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, labels: Vec<u32>, region_count: usize) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {width}x{height} with {} labels",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= region_count) {
            return Err(Error::Range(format!(
                "label {l} not below region count {region_count}"
            )));
        }
        Ok(RegionMask {
            width,
            height,
            labels,
            region_count,
        })
    }

    /// Every pixel in region 0.
    pub fn single(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            labels: vec![0; width * height],
            region_count: 1,
        }
    }

    /// Raw 8-bit label image; the region count is `max + 1`.
    pub fn from_gray8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        let count = data.iter().copied().max().map_or(0, |m| m as usize + 1);
        RegionMask::new(
            width,
            height,
            data.iter().map(|&v| v as u32).collect(),
            count,
        )
    }

    pub fn to_gray8(&self) -> Result<Vec<u8>> {
        if self.region_count > 256 {
            return Err(Error::Range(format!(
                "{} regions do not fit in 8 bits",
                self.region_count
            )));
        }
        Ok(self.labels.iter().map(|&l| l as u8).collect())
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixels whose label is non-zero.
    pub fn coverage(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    /// Swaps labels 0 and 1 of a binary mask.
    pub fn complement(&self) -> Result<RegionMask> {
        if self.region_count > 2 {
            return Err(Error::Argument(format!(
                "complement needs a binary mask, got {} regions",
                self.region_count
            )));
        }
        Ok(RegionMask {
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
            region_count: 2,
            ..self.clone()
        })
    }
}

/// Binarizes `edges` at `threshold`, flood-fills the non-edge pixels into
/// 4-connected regions labelled in raster order, then absorbs edge pixels
/// into the neighbouring region with which they share the most sides (ties go
/// to the lower label).
pub fn label_regions(edges: &EdgeMap, threshold: f64) -> Result<RegionMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!(
            "edge threshold {threshold} outside (0, 1)"
        )));
    }
    let (w, h) = edges.dims();
    let is_edge: Vec<bool> = edges
        .strength
        .as_slice()
        .iter()
        .map(|&s| s >= threshold)
        .collect();
    const UNSET: u32 = u32::MAX;
    let mut labels = vec![UNSET; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if is_edge[start] || labels[start] != UNSET {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbours4(i, w, h) {
                if !is_edge[j] && labels[j] == UNSET {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    if next == 0 {
        return Ok(RegionMask::single(w, h));
    }
    loop {
        let snapshot = labels.clone();
        let mut changed = false;
        for i in 0..w * h {
            if snapshot[i] != UNSET {
                continue;
            }
            let mut counts: Vec<(u32, usize)> = Vec::with_capacity(4);
            for j in neighbours4(i, w, h) {
                let l = snapshot[j];
                if l == UNSET {
                    continue;
                }
                match counts.iter_mut().find(|(k, _)| *k == l) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((l, 1)),
                }
            }
            if let Some(&(best, _)) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != UNSET));
    RegionMask::new(w, h, labels, next as usize)
}

fn neighbours4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (y > 0).then(|| i - w),
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// How a group of chroma values collapses to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregator {
    #[default]
    Mean,
    Median,
}

/// Replaces every value with the aggregate of its group. The result of a
/// group is clamped to the group's own range, and a group whose values are
/// all identical keeps that exact value.
fn aggregate_groups(keys: &[usize], values: &[f64], agg: Aggregator) -> Vec<f64> {
    let mut groups: HashMap<usize, Vec<f64>> = HashMap::new();
    for (&k, &v) in keys.iter().zip(values) {
        groups.entry(k).or_default().push(v);
    }
    let summary: HashMap<usize, f64> = groups
        .into_iter()
        .map(|(k, mut vs)| {
            let (lo, hi) = vs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let value = if lo == hi {
                lo
            } else {
                match agg {
                    Aggregator::Mean => vs.iter().sum::<f64>() / vs.len() as f64,
                    Aggregator::Median => {
                        vs.sort_by(f64::total_cmp);
                        let n = vs.len();
                        if n % 2 == 1 {
                            vs[n / 2]
                        } else {
                            (vs[n / 2 - 1] + vs[n / 2]) / 2.0
                        }
                    }
                }
                .clamp(lo, hi)
            };
            (k, value)
        })
        .collect();
    keys.iter().map(|k| summary[k]).collect()
}

fn aggregate_chroma(ab: &ChromaMap, keys: &[usize], agg: Aggregator) -> ChromaMap {
    let (w, h) = ab.dims();
    let a = aggregate_groups(keys, ab.a().as_slice(), agg);
    let b = aggregate_groups(keys, ab.b().as_slice(), agg);
    ChromaMap::new(
        Plane::new(w, h, a).expect("dims preserved"),
        Plane::new(w, h, b).expect("dims preserved"),
    )
    .expect("aggregates stay inside the input range")
}

/// Paints every region with its mean chroma.
pub fn uniform_fill(ab: &ChromaMap, regions: &RegionMask) -> Result<ChromaMap> {
    if ab.dims() != regions.dims() {
        return Err(Error::Shape(format!(
            "chroma {:?} vs mask {:?}",
            ab.dims(),
            regions.dims()
        )));
    }
    let keys: Vec<usize> = regions.labels.iter().map(|&l| l as usize).collect();
    Ok(aggregate_chroma(ab, &keys, Aggregator::Mean))
}

/// Binary mask: 1 where `L` exceeds the mean of its `window × window`
/// neighbourhood (edge-replicated) minus `offset`.
pub fn adaptive_threshold(l: &Plane, window: usize, offset: f64) -> Result<RegionMask> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "window {window} must be odd and at least 3"
        )));
    }
    let (w, h) = l.dims();
    let r = window / 2;
    // Summed-area table over the edge-replicated, r-padded plane.
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut sat = vec![0.0f64; (pw + 1) * (ph + 1)];
    for y in 0..ph {
        let sy = (y as isize - r as isize).clamp(0, h as isize - 1) as usize;
        let mut row = 0.0;
        for x in 0..pw {
            let sx = (x as isize - r as isize).clamp(0, w as isize - 1) as usize;
            row += l.get(sx, sy);
            sat[(y + 1) * (pw + 1) + x + 1] = sat[y * (pw + 1) + x + 1] + row;
        }
    }
    let area = (window * window) as f64;
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // window rows y..y+window, cols x..x+window in padded coordinates
            let (x0, y0, x1, y1) = (x, y, x + window, y + window);
            let s = sat[y1 * (pw + 1) + x1] - sat[y0 * (pw + 1) + x1] - sat[y1 * (pw + 1) + x0]
                + sat[y0 * (pw + 1) + x0];
            let mean = s / area;
            labels.push(u32::from(l.get(x, y) > mean - offset));
        }
    }
    RegionMask::new(w, h, labels, 2)
}

/// Gives every pixel in the same luminance bin `floor(L / bin_width)` the
/// mean chroma of that bin.
pub fn enforce_same_l_same_ab(l: &Plane, ab: &ChromaMap, bin_width: f64) -> Result<ChromaMap> {
    enforce_same_l_same_ab_with(l, ab, bin_width, None, Aggregator::Mean)
}

/// As [`enforce_same_l_same_ab`], optionally grouping per region as well.
pub fn enforce_same_l_same_ab_with(
    l: &Plane,
    ab: &ChromaMap,
    bin_width: f64,
    regions: Option<&RegionMask>,
    agg: Aggregator,
) -> Result<ChromaMap> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Argument(format!(
            "bin width {bin_width} must be positive"
        )));
    }
    if l.dims() != ab.dims() {
        return Err(Error::Shape(format!(
            "L plane {:?} vs chroma {:?}",
            l.dims(),
            ab.dims()
        )));
    }
    if let Some(m) = regions {
        if m.dims() != l.dims() {
            return Err(Error::Shape(format!(
                "mask {:?} vs L plane {:?}",
                m.dims(),
                l.dims()
            )));
        }
    }
    let bins = (100.0 / bin_width).floor() as usize + 1;
    let keys: Vec<usize> = l
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let bin = (v / bin_width).floor().max(0.0) as usize;
            let region = regions.map_or(0, |m| m.labels[i] as usize);
            region * bins + bin
        })
        .collect();
    Ok(aggregate_chroma(ab, &keys, agg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chroma(a: Vec<f64>, b: Vec<f64>, w: usize, h: usize) -> ChromaMap {
        ChromaMap::new(Plane::new(w, h, a).unwrap(), Plane::new(w, h, b).unwrap()).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = GradientMagnitude.detect(&Plane::filled(6, 5, 42.0));
        assert!(e.strength().as_slice().iter().all(|&v| v == 0.0));
        let mask = label_regions(&e, 0.5).unwrap();
        assert_eq!(mask.region_count(), 1);
    }

    #[test]
    fn step_edge_lights_two_columns() {
        let c = 5;
        let l = Plane::from_fn(12, 4, |x, _| if x < c { 10.0 } else { 60.0 });
        let e = GradientMagnitude.detect(&l);
        for y in 0..4 {
            for x in 0..12 {
                let expected = if x == c - 1 || x == c { 1.0 } else { 0.0 };
                assert_eq!(e.strength().get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn all_edge_image_is_one_region() {
        let e = EdgeMap::new(Plane::filled(3, 3, 1.0)).unwrap();
        let m = label_regions(&e, 0.5).unwrap();
        assert_eq!(m.region_count(), 1);
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn edge_pixels_join_majority_neighbour() {
        // column 2 is an edge between region 0 (cols 0-1) and region 1 (cols 3-4)
        let s = Plane::from_fn(5, 3, |x, _| if x == 2 { 1.0 } else { 0.0 });
        let m = label_regions(&EdgeMap::new(s).unwrap(), 0.5).unwrap();
        assert_eq!(m.region_count(), 2);
        // one left and one right neighbour each: tie goes to the lower label
        assert!((0..3).all(|y| m.label(2, y) == 0));
        assert!((0..3).all(|y| m.label(4, y) == 1));
    }

    #[test]
    fn threshold_validation() {
        let e = EdgeMap::new(Plane::filled(2, 2, 0.0)).unwrap();
        assert!(label_regions(&e, 0.0).is_err());
        assert!(label_regions(&e, 1.0).is_err());
    }

    #[test]
    fn uniform_fill_means() {
        let ab = chroma(vec![0.0, 0.0, 10.0, 10.0], vec![0.0, 0.0, 10.0, 10.0], 2, 2);
        let out = uniform_fill(&ab, &RegionMask::single(2, 2)).unwrap();
        assert!(out.a().as_slice().iter().all(|&v| v == 5.0));
        assert!(out.b().as_slice().iter().all(|&v| v == 5.0));
        assert!(uniform_fill(&ab, &RegionMask::single(3, 2)).is_err());
    }

    #[test]
    fn same_l_pixels_share_mean() {
        let l = Plane::new(2, 1, vec![40.0, 40.0]).unwrap();
        let ab = chroma(vec![10.0, 20.0], vec![10.0, 20.0], 2, 1);
        let out = enforce_same_l_same_ab(&l, &ab, 1.0).unwrap();
        assert_eq!(out.a().as_slice(), &[15.0, 15.0]);
        assert_eq!(out.b().as_slice(), &[15.0, 15.0]);
    }

    #[test]
    fn distinct_bins_untouched() {
        let l = Plane::new(3, 1, vec![10.0, 20.5, 99.9]).unwrap();
        let ab = chroma(vec![1.0, -2.0, 3.5], vec![0.25, 7.0, -9.0], 3, 1);
        assert_eq!(enforce_same_l_same_ab(&l, &ab, 1.0).unwrap(), ab);
    }

    #[test]
    fn median_aggregator() {
        let l = Plane::filled(3, 1, 50.0);
        let ab = chroma(vec![1.0, 2.0, 30.0], vec![0.0; 3], 3, 1);
        let out = enforce_same_l_same_ab_with(&l, &ab, 1.0, None, Aggregator::Median).unwrap();
        assert_eq!(out.a().as_slice(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn per_region_grouping_separates_regions() {
        let l = Plane::filled(2, 1, 50.0);
        let ab = chroma(vec![10.0, 20.0], vec![0.0, 0.0], 2, 1);
        let m = RegionMask::new(2, 1, vec![0, 1], 2).unwrap();
        let out = enforce_same_l_same_ab_with(&l, &ab, 1.0, Some(&m), Aggregator::Mean).unwrap();
        assert_eq!(out, ab);
    }

    #[test]
    fn adaptive_threshold_errors_and_constant() {
        let l = Plane::filled(5, 5, 30.0);
        assert!(adaptive_threshold(&l, 4, 1.0).is_err());
        assert!(adaptive_threshold(&l, 1, 1.0).is_err());
        let m = adaptive_threshold(&l, 3, 2.0).unwrap();
        assert!(m.labels().iter().all(|&v| v == 1));
    }

    #[test]
    fn mask_gray8_round_trip() {
        let m = RegionMask::new(3, 1, vec![0, 2, 1], 3).unwrap();
        assert_eq!(
            RegionMask::from_gray8(3, 1, &m.to_gray8().unwrap()).unwrap(),
            m
        );
        let c = RegionMask::new(2, 1, vec![0, 1], 2)
            .unwrap()
            .complement()
            .unwrap();
        assert_eq!(c.labels(), &[1, 0]);
    }
}
