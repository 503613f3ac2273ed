//! HSV inspection of colorized outputs and the real-versus-predicted survey
//! metric.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{rgb_to_hsv, RgbImage};
use crate::error::{Error, Result};

/// Images per class in a survey.
pub const SURVEY_CLASS_SIZE: usize = 16;

/// Block-averaged HSV saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationSurface {
    /// `ceil(width / block)`.
    pub width: usize,
    /// `ceil(height / block)`.
    pub height: usize,
    pub block: usize,
    /// Row-major, values in `[0, 1]`.
    pub values: Vec<f64>,
}

impl SaturationSurface {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// One comma-separated row per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Renders each cell as a `block × block` square on a blue (0) to red (1)
    /// ramp, cropped to `(width, height)` pixels.
    pub fn heatmap(&self, width: usize, height: usize) -> RgbImage {
        RgbImage::from_fn(width, height, |x, y| {
            let s = self.get(
                (x / self.block).min(self.width - 1),
                (y / self.block).min(self.height - 1),
            );
            let r = (255.0 * s).round() as u8;
            let b = (255.0 * (1.0 - s)).round() as u8;
            let g = (255.0 * (1.0 - (2.0 * s - 1.0).abs())).round() as u8;
            [r, g, b]
        })
    }
}

/// Mean HSV saturation over `block × block` tiles; edge tiles average only
/// the pixels they contain. Saturation follows the hexcone model, so black
/// and every gray level score 0; a black background reads as the minimum,
/// never as a saturated value.
pub fn saturation_surface(img: &RgbImage, block: usize) -> Result<SaturationSurface> {
    if block == 0 {
        return Err(Error::Argument("block size must be at least 1".into()));
    }
    let hsv = rgb_to_hsv(img);
    let (w, h) = img.dims();
    let (gw, gh) = (w.div_ceil(block), h.div_ceil(block));
    let mut sums = vec![0.0; gw * gh];
    let mut counts = vec![0usize; gw * gh];
    for y in 0..h {
        for x in 0..w {
            let cell = (y / block) * gw + x / block;
            sums[cell] += hsv.s[y * w + x];
            counts[cell] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect();
    Ok(SaturationSurface {
        width: gw,
        height: gh,
        block,
        values,
    })
}

/// Counts of hue over `[0, 360)` in `bins` equal bins, ignoring pixels with
/// zero saturation (their hue is undefined).
pub fn hue_histogram(img: &RgbImage, bins: usize) -> Result<Vec<u64>> {
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    let hsv = rgb_to_hsv(img);
    let mut counts = vec![0u64; bins];
    for (&hue, &sat) in hsv.h.iter().zip(&hsv.s) {
        if sat > 0.0 {
            let bin = ((hue / 360.0 * bins as f64).floor() as usize).min(bins - 1);
            counts[bin] += 1;
        }
    }
    Ok(counts)
}

/// Which shown ids are model predictions. Kept apart from the presentation
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyKey {
    pub seed: u64,
    pub real: Vec<String>,
    pub predicted: Vec<String>,
}

impl SurveyKey {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("key serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Argument(format!("survey key: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Survey {
    /// Presentation order of all 32 ids.
    pub order: Vec<String>,
    pub key: SurveyKey,
}

/// Mixes 16 real and 16 predicted ids in a seeded order.
pub fn build_survey(real: &[String], predicted: &[String], seed: u64) -> Result<Survey> {
    for (name, ids) in [("real", real), ("predicted", predicted)] {
        if ids.len() != SURVEY_CLASS_SIZE {
            return Err(Error::Argument(format!(
                "need {SURVEY_CLASS_SIZE} {name} ids, got {}",
                ids.len()
            )));
        }
    }
    let mut seen = HashSet::new();
    if let Some(dup) = real.iter().chain(predicted).find(|id| !seen.insert(*id)) {
        return Err(Error::Argument(format!(
            "id {dup:?} appears more than once"
        )));
    }
    let mut order: Vec<String> = real.iter().chain(predicted).cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Survey {
        order,
        key: SurveyKey {
            seed,
            real: real.to_vec(),
            predicted: predicted.to_vec(),
        },
    })
}

/// One participant's answer sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub participant_id: String,
    pub shown: Vec<String>,
    /// The ids the participant judged to be model predictions.
    pub selected: Vec<String>,
}

/// Parses one JSON record per non-blank line.
pub fn parse_records(text: &str) -> Result<Vec<SurveyRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Survey {
                participant: format!("<line {}>", i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn records_to_jsonl(records: &[SurveyRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyScore {
    /// `(participant, accuracy)` in record order.
    pub participants: Vec<(String, f64)>,
    pub mean: f64,
}

fn validate_record(record: &SurveyRecord, key: &SurveyKey) -> Result<()> {
    let fail = |reason: String| {
        Err(Error::Survey {
            participant: record.participant_id.clone(),
            reason,
        })
    };
    let expected: HashSet<&String> = key.real.iter().chain(&key.predicted).collect();
    let shown: HashSet<&String> = record.shown.iter().collect();
    if record.shown.len() != 2 * SURVEY_CLASS_SIZE || shown.len() != record.shown.len() {
        return fail(format!(
            "shown must list {} distinct ids, got {} entries",
            2 * SURVEY_CLASS_SIZE,
            record.shown.len()
        ));
    }
    if shown != expected {
        return fail("shown ids differ from the survey key".into());
    }
    let selected: HashSet<&String> = record.selected.iter().collect();
    if record.selected.len() != SURVEY_CLASS_SIZE || selected.len() != record.selected.len() {
        return fail(format!(
            "selected must list {SURVEY_CLASS_SIZE} distinct ids, got {} entries",
            record.selected.len()
        ));
    }
    if let Some(id) = record.selected.iter().find(|id| !shown.contains(id)) {
        return fail(format!("selected id {id:?} was not shown"));
    }
    Ok(())
}

/// Fraction of each participant's selections that are true predictions, and
/// the mean over participants. Chance level is 0.5.
pub fn score_survey(records: &[SurveyRecord], key: &SurveyKey) -> Result<SurveyScore> {
    if records.is_empty() {
        return Err(Error::Argument("no survey records".into()));
    }
    let predicted: HashSet<&String> = key.predicted.iter().collect();
    let mut participants = Vec::with_capacity(records.len());
    for r in records {
        validate_record(r, key)?;
        let hits = r
            .selected
            .iter()
            .filter(|id| predicted.contains(id))
            .count();
        participants.push((
            r.participant_id.clone(),
            hits as f64 / SURVEY_CLASS_SIZE as f64,
        ));
    }
    let mean = participants.iter().map(|(_, a)| a).sum::<f64>() / participants.len() as f64;
    Ok(SurveyScore { participants, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str) -> Vec<String> {
        (0..16).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn gray_surface_is_zero_and_red_is_one() {
        let gray = RgbImage::filled(5, 3, [90, 90, 90]);
        let s = saturation_surface(&gray, 2).unwrap();
        assert_eq!((s.width, s.height), (3, 2));
        assert!(s.values.iter().all(|&v| v == 0.0));
        let red = RgbImage::filled(4, 4, [255, 0, 0]);
        assert!(saturation_surface(&red, 3)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn half_red_half_gray_averages_to_half() {
        let img = RgbImage::from_fn(4, 2, |x, _| if x < 2 { [255, 0, 0] } else { [40, 40, 40] });
        let s = saturation_surface(&img, 4).unwrap();
        assert_eq!(s.values, vec![0.5]);
    }

    #[test]
    fn hue_histogram_counts() {
        let img = RgbImage::from_fn(4, 1, |x, _| if x < 2 { [255, 0, 0] } else { [0, 255, 0] });
        let h = hue_histogram(&img, 12).unwrap();
        assert_eq!((h[0], h[4], h.iter().sum::<u64>()), (2, 2, 4));
        let gray = RgbImage::filled(3, 3, [7, 7, 7]);
        assert_eq!(hue_histogram(&gray, 6).unwrap().iter().sum::<u64>(), 0);
        assert!(hue_histogram(&gray, 0).is_err());
    }

    #[test]
    fn survey_shuffle_is_deterministic_permutation() {
        let a = build_survey(&ids("r"), &ids("p"), 3).unwrap();
        let b = build_survey(&ids("r"), &ids("p"), 3).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.order.clone();
        sorted.sort();
        let mut all: Vec<String> = ids("r").into_iter().chain(ids("p")).collect();
        all.sort();
        assert_eq!(sorted, all);
        assert!(build_survey(&ids("r")[..15], &ids("p"), 3).is_err());
    }

    #[test]
    fn perfect_and_inverted_selectors() {
        let s = build_survey(&ids("r"), &ids("p"), 1).unwrap();
        let rec = |sel: Vec<String>| SurveyRecord {
            participant_id: "x".into(),
            shown: s.order.clone(),
            selected: sel,
        };
        let score = score_survey(&[rec(ids("p")), rec(ids("r"))], &s.key).unwrap();
        assert_eq!(score.participants[0].1, 1.0);
        assert_eq!(score.participants[1].1, 0.0);
        assert_eq!(score.mean, 0.5);
    }

    #[test]
    fn malformed_record_names_participant() {
        let s = build_survey(&ids("r"), &ids("p"), 1).unwrap();
        let bad = SurveyRecord {
            participant_id: "alice".into(),
            shown: s.order.clone(),
            selected: ids("p")[..15].to_vec(),
        };
        match score_survey(&[bad], &s.key) {
            Err(Error::Survey { participant, .. }) => assert_eq!(participant, "alice"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let r = SurveyRecord {
            participant_id: "p1".into(),
            shown: ids("a"),
            selected: ids("b"),
        };
        let text = records_to_jsonl(&[r.clone(), r.clone()]);
        assert_eq!(parse_records(&text).unwrap(), vec![r.clone(), r]);
        assert_eq!(parse_records("{oops").unwrap_err().kind(), "survey");
    }
}
