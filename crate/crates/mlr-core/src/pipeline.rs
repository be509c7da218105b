//! Word-aligned multimodal matrix assembly and the two-stage normalization.
//!
//! A raw utterance arrives as one frame track per modality plus the word
//! timing; it leaves as a fixed-length `N x M` matrix. Scalers are fitted on
//! the training split only and applied everywhere else — the fit split is
//! recorded in the stats so downstream artifacts can declare it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Time-stamped feature frames of one modality.
#[derive(Debug, Clone)]
pub struct RawModalityTrack {
    frames: Vec<Frame>,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub start: f64,
    pub end: f64,
    pub features: Vec<f64>,
}

impl RawModalityTrack {
    /// Frames must be time-ordered, non-overlapping and of constant width.
    pub fn new(frames: Vec<Frame>, width: usize) -> Result<Self> {
        let mut prev_end = f64::NEG_INFINITY;
        for (i, f) in frames.iter().enumerate() {
            if f.features.len() != width {
                return Err(CoreError::data(format!(
                    "frame {i} has width {}, track declares {width}",
                    f.features.len()
                )));
            }
            if !(f.start < f.end) {
                return Err(CoreError::data(format!(
                    "frame {i} has empty interval [{}, {}]",
                    f.start, f.end
                )));
            }
            if f.start < prev_end {
                return Err(CoreError::data(format!(
                    "frame {i} starts at {} before previous frame ended at {prev_end}",
                    f.start
                )));
            }
            prev_end = f.end;
        }
        Ok(RawModalityTrack { frames, width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-word time intervals, time-ordered.
#[derive(Debug, Clone)]
pub struct WordIntervals {
    intervals: Vec<(f64, f64)>,
}

impl WordIntervals {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let mut prev_start = f64::NEG_INFINITY;
        for (i, &(s, e)) in intervals.iter().enumerate() {
            if !(s < e) {
                return Err(CoreError::data(format!(
                    "word {i} has empty interval [{s}, {e}]"
                )));
            }
            if s < prev_start {
                return Err(CoreError::data(format!(
                    "word {i} starts at {s}, before word {}",
                    i.saturating_sub(1)
                )));
            }
            prev_start = s;
        }
        Ok(WordIntervals { intervals })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Task labels carried by an utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    /// Signed sentiment score; positive/negative is decided downstream.
    pub sentiment: Option<f64>,
    /// Presence flags for the four emotion tasks.
    pub emotions: Option<[bool; 4]>,
}

/// One utterance: the fixed-length multimodal matrix plus labels.
#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub x: Tensor,
    pub block_widths: (usize, usize, usize),
    pub labels: Labels,
    pub id: String,
    pub source_dataset: String,
}

impl UtteranceRecord {
    pub fn new(
        x: Tensor,
        block_widths: (usize, usize, usize),
        labels: Labels,
        id: String,
        source_dataset: String,
    ) -> Result<Self> {
        let (_, m) = x.dims2("utterance_record")?;
        let sum = block_widths.0 + block_widths.1 + block_widths.2;
        if sum != m {
            return Err(CoreError::shape(
                "utterance_record",
                format!("block widths {block_widths:?} sum to {sum}, matrix has {m} columns"),
            ));
        }
        Ok(UtteranceRecord {
            x,
            block_widths,
            labels,
            id,
            source_dataset,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.x.dims()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.x.dims()[1]
    }
}

/// The three modality blocks of the assembled matrix, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Audio,
    Vision,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Vision, Modality::Text];

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Vision => "vision",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Modality> {
        match s {
            "audio" => Ok(Modality::Audio),
            "vision" | "visual" => Ok(Modality::Vision),
            "text" => Ok(Modality::Text),
            other => Err(CoreError::data(format!("unknown modality '{other}'"))),
        }
    }
}

/// Duration-weighted mean of frame features over each word interval.
///
/// A word overlapping no frames yields a zero row; an empty track yields an
/// all-zero matrix and sets the warning flag.
pub fn word_align(track: &RawModalityTrack, words: &WordIntervals) -> Result<(Tensor, bool)> {
    if words.is_empty() {
        return Err(CoreError::data("word_align: no word intervals"));
    }
    let m = track.width;
    let n = words.len();
    let mut out = Tensor::zeros(&[n, m]);
    if track.is_empty() {
        return Ok((out, true));
    }
    for (wi, &(ws, we)) in words.intervals.iter().enumerate() {
        let mut weight = 0.0;
        let row = &mut out.data_mut()[wi * m..(wi + 1) * m];
        for f in &track.frames {
            let lo = f.start.max(ws);
            let hi = f.end.min(we);
            if hi <= lo {
                continue;
            }
            let dur = hi - lo;
            weight += dur;
            for (acc, &v) in row.iter_mut().zip(&f.features) {
                *acc += dur * v;
            }
        }
        if weight > 0.0 {
            for v in row.iter_mut() {
                *v /= weight;
            }
        }
    }
    Ok((out, false))
}

/// Column-wise concatenation of named blocks sharing a row count.
pub fn concat_blocks(blocks: &[(&str, &Tensor)]) -> Result<Tensor> {
    let op = "assemble_multimodal";
    if blocks.is_empty() {
        return Err(CoreError::data("no blocks to assemble"));
    }
    let (rows, _) = blocks[0].1.dims2(op)?;
    for &(name, t) in blocks {
        let (r, _) = t.dims2(op)?;
        if r != rows {
            return Err(CoreError::data(format!(
                "alignment error: block '{}' has {rows} rows but '{name}' has {r}",
                blocks[0].0
            )));
        }
    }
    let total: usize = blocks.iter().map(|(_, t)| t.dims()[1]).sum();
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        let dst = &mut out.data_mut()[r * total..(r + 1) * total];
        let mut off = 0;
        for &(_, t) in blocks {
            let w = t.dims()[1];
            dst[off..off + w].copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    Ok(out)
}

/// Audio | vision | text concatenation in the canonical column order.
pub fn assemble_multimodal(audio: &Tensor, vision: &Tensor, text: &Tensor) -> Result<Tensor> {
    concat_blocks(&[("audio", audio), ("vision", vision), ("text", text)])
}

/// Clamp the word axis to exactly `n` rows: keep the last `n` when longer,
/// prepend zero rows when shorter.
pub fn fix_length(x: &Tensor, n: usize) -> Result<Tensor> {
    let (rows, m) = x.dims2("fix_length")?;
    if rows == n {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[n, m]);
    if rows > n {
        let skip = (rows - n) * m;
        out.data_mut().copy_from_slice(&x.data()[skip..]);
    } else {
        let pad = (n - rows) * m;
        out.data_mut()[pad..].copy_from_slice(x.data());
    }
    Ok(out)
}

/// Column slice of `x` keeping only the requested modalities, with the
/// resulting block widths.
pub fn slice_modalities(
    x: &Tensor,
    widths: (usize, usize, usize),
    subset: &[Modality],
) -> Result<(Tensor, (usize, usize, usize))> {
    let (rows, m) = x.dims2("slice_modalities")?;
    if widths.0 + widths.1 + widths.2 != m {
        return Err(CoreError::shape(
            "slice_modalities",
            format!("widths {widths:?} do not sum to column count {m}"),
        ));
    }
    if subset.is_empty() {
        return Err(CoreError::data("modality subset is empty"));
    }
    let ranges = [
        (Modality::Audio, 0..widths.0),
        (Modality::Vision, widths.0..widths.0 + widths.1),
        (Modality::Text, widths.0 + widths.1..m),
    ];
    let keep: Vec<_> = ranges
        .iter()
        .filter(|(mo, _)| subset.contains(mo))
        .cloned()
        .collect();
    let new_m: usize = keep.iter().map(|(_, r)| r.len()).sum();
    let mut out = Tensor::zeros(&[rows, new_m]);
    for r in 0..rows {
        let src = &x.data()[r * m..(r + 1) * m];
        let dst = &mut out.data_mut()[r * new_m..(r + 1) * new_m];
        let mut off = 0;
        for (_, range) in &keep {
            dst[off..off + range.len()].copy_from_slice(&src[range.clone()]);
            off += range.len();
        }
    }
    let pick = |mo: Modality, w: usize| if subset.contains(&mo) { w } else { 0 };
    let new_widths = (
        pick(Modality::Audio, widths.0),
        pick(Modality::Vision, widths.1),
        pick(Modality::Text, widths.2),
    );
    Ok((out, new_widths))
}

/// Per-feature standardization followed by min-max scaling, fitted on train.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Min/max of the standardized training values.
    pub post_min: Vec<f64>,
    pub post_max: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub fitted_on: String,
}

impl NormalizationStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// First stage only: `z = (x - mean) / std`.
    pub fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, m) = x.dims2("apply_scalers")?;
        if m != self.width() {
            return Err(CoreError::shape(
                "apply_scalers",
                format!("input width {m} vs fitted width {}", self.width()),
            ));
        }
        let mut out = x.clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * m..(r + 1) * m];
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    /// Second stage: min-max onto `[0,1]` with clipping; degenerate or
    /// zero-range features map to 0.5.
    pub fn minmax(&self, z: &Tensor) -> Result<Tensor> {
        let (rows, m) = z.dims2("apply_scalers")?;
        if m != self.width() {
            return Err(CoreError::shape(
                "apply_scalers",
                format!("input width {m} vs fitted width {}", self.width()),
            ));
        }
        let mut out = z.clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * m..(r + 1) * m];
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.post_max[j] - self.post_min[j];
                *v = if self.degenerate[j] || range <= 0.0 {
                    0.5
                } else {
                    ((*v - self.post_min[j]) / range).clamp(0.0, 1.0)
                };
            }
        }
        Ok(out)
    }
}

/// Population mean/std per feature over every `(utterance, timestep)` row of
/// the training split, then min/max of the standardized values.
pub fn fit_scalers(train: &[UtteranceRecord], fitted_on: &str) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| CoreError::data("fit_scalers: empty training split"))?;
    let m = first.feature_width();
    for r in train {
        if r.feature_width() != m {
            return Err(CoreError::shape(
                "fit_scalers",
                format!(
                    "utterance '{}' has width {}, expected {m}",
                    r.id,
                    r.feature_width()
                ),
            ));
        }
    }
    let total_rows: usize = train.iter().map(|r| r.timesteps()).sum();
    let nf = total_rows as f64;

    let mut mean = vec![0.0; m];
    for r in train {
        for row in r.x.data().chunks(m) {
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= nf;
    }

    let mut var = vec![0.0; m];
    for r in train {
        for row in r.x.data().chunks(m) {
            for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
    }
    let mut std = vec![0.0; m];
    let mut degenerate = vec![false; m];
    for j in 0..m {
        let s = libm::sqrt(var[j] / nf);
        // constant features: the variance is zero up to summation noise
        if s <= 1e-12 * mean[j].abs().max(1.0) {
            std[j] = 1.0;
            degenerate[j] = true;
        } else {
            std[j] = s;
        }
    }

    let mut post_min = vec![f64::INFINITY; m];
    let mut post_max = vec![f64::NEG_INFINITY; m];
    for r in train {
        for row in r.x.data().chunks(m) {
            for j in 0..m {
                let z = (row[j] - mean[j]) / std[j];
                post_min[j] = post_min[j].min(z);
                post_max[j] = post_max[j].max(z);
            }
        }
    }

    let stats = NormalizationStats {
        mean,
        std,
        post_min,
        post_max,
        degenerate,
        fitted_on: String::from(fitted_on),
    };
    for j in 0..m {
        if !(stats.mean[j].is_finite() && stats.std[j].is_finite()) {
            return Err(CoreError::non_finite(format!(
                "fitted statistics of feature {j}"
            )));
        }
    }
    Ok(stats)
}

/// Full normalization: standardize, then min-max onto `[0,1]`.
pub fn apply_scalers(x: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
    stats.minmax(&stats.standardize(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(start: f64, end: f64, features: &[f64]) -> Frame {
        Frame {
            start,
            end,
            features: features.to_vec(),
        }
    }

    fn record(x: Tensor, widths: (usize, usize, usize)) -> UtteranceRecord {
        UtteranceRecord::new(
            x,
            widths,
            Labels::default(),
            String::from("u"),
            String::from("t"),
        )
        .unwrap()
    }

    #[test]
    fn constant_track_aligns_to_constant_rows() {
        let track = RawModalityTrack::new(
            vec![frame(0.0, 0.5, &[2.5, 2.5]), frame(0.5, 1.2, &[2.5, 2.5])],
            2,
        )
        .unwrap();
        let words = WordIntervals::new(vec![(0.0, 0.4), (0.4, 1.0)]).unwrap();
        let (out, warn) = word_align(&track, &words).unwrap();
        assert!(!warn);
        assert!(out.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn equal_duration_frames_average() {
        let track =
            RawModalityTrack::new(vec![frame(0.0, 0.5, &[0.0]), frame(0.5, 1.0, &[2.0])], 1)
                .unwrap();
        let words = WordIntervals::new(vec![(0.0, 1.0)]).unwrap();
        let (out, _) = word_align(&track, &words).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_word_gets_zero_row() {
        let track = RawModalityTrack::new(vec![frame(0.0, 1.0, &[3.0])], 1).unwrap();
        let words = WordIntervals::new(vec![(2.0, 3.0)]).unwrap();
        let (out, warn) = word_align(&track, &words).unwrap();
        assert!(!warn);
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn empty_track_warns_and_zeroes() {
        let track = RawModalityTrack::new(vec![], 3).unwrap();
        let words = WordIntervals::new(vec![(0.0, 1.0)]).unwrap();
        let (out, warn) = word_align(&track, &words).unwrap();
        assert!(warn);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_split_invariance() {
        let track =
            RawModalityTrack::new(vec![frame(0.0, 1.0, &[4.0]), frame(1.0, 2.0, &[-2.0])], 1)
                .unwrap();
        let split = RawModalityTrack::new(
            vec![
                frame(0.0, 0.3, &[4.0]),
                frame(0.3, 1.0, &[4.0]),
                frame(1.0, 2.0, &[-2.0]),
            ],
            1,
        )
        .unwrap();
        let words = WordIntervals::new(vec![(0.1, 0.9), (0.9, 1.7)]).unwrap();
        let (a, _) = word_align(&track, &words).unwrap();
        let (b, _) = word_align(&split, &words).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn reference_widths_concatenate_to_409() {
        let audio = Tensor::zeros(&[3, 74]);
        let vision = Tensor::zeros(&[3, 35]);
        let text = Tensor::zeros(&[3, 300]);
        let x = assemble_multimodal(&audio, &vision, &text).unwrap();
        assert_eq!(x.dims(), &[3, 409]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_mismatch_names_modalities() {
        let audio = Tensor::zeros(&[3, 4]);
        let vision = Tensor::zeros(&[2, 4]);
        let text = Tensor::zeros(&[3, 4]);
        let err = assemble_multimodal(&audio, &vision, &text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("audio") && msg.contains("vision"), "{msg}");
    }

    #[test]
    fn concat_preserves_column_order() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let c = Tensor::new(vec![1, 2], vec![4.0, 5.0]).unwrap();
        let x = assemble_multimodal(&a, &b, &c).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn fix_length_identity_truncate_pad() {
        let x20 = Tensor::new(vec![20, 2], (0..40).map(|v| v as f64).collect()).unwrap();
        assert_eq!(fix_length(&x20, 20).unwrap().data(), x20.data());

        let x25 = Tensor::new(vec![25, 1], (1..=25).map(|v| v as f64).collect()).unwrap();
        let t = fix_length(&x25, 20).unwrap();
        assert_eq!(t.data()[0], 6.0);
        assert_eq!(t.data()[19], 25.0);

        let x3 = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let p = fix_length(&x3, 20).unwrap();
        assert!(p.data()[..17].iter().all(|&v| v == 0.0));
        assert_eq!(&p.data()[17..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let x = Tensor::new(vec![2, 2], vec![5.0, 1.0, 5.0, 3.0]).unwrap();
        let stats = fit_scalers(&[record(x.clone(), (2, 0, 0))], "train").unwrap();
        assert_eq!(stats.mean[0], 5.0);
        assert!(stats.degenerate[0]);
        assert!(!stats.degenerate[1]);
        let z = stats.standardize(&x).unwrap();
        assert_eq!(z.data()[0], 0.0);
        assert_eq!(z.data()[2], 0.0);
        // degenerate features land on 0.5 after min-max
        let out = apply_scalers(&x, &stats).unwrap();
        assert_eq!(out.data()[0], 0.5);
    }

    #[test]
    fn two_level_feature_hand_computation() {
        let x = Tensor::new(vec![4, 1], vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        let stats = fit_scalers(&[record(x.clone(), (1, 0, 0))], "train").unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.std[0], 1.0); // population std of {0,2}
        let z = stats.standardize(&x).unwrap();
        assert_eq!(z.data(), &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(stats.post_min[0], -1.0);
        assert_eq!(stats.post_max[0], 1.0);
        let out = apply_scalers(&x, &stats).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn stats_vectors_have_feature_width() {
        let x = Tensor::zeros(&[5, 7]);
        let stats = fit_scalers(&[record(x, (7, 0, 0))], "train").unwrap();
        assert_eq!(stats.mean.len(), 7);
        assert_eq!(stats.std.len(), 7);
        assert_eq!(stats.post_min.len(), 7);
        assert_eq!(stats.post_max.len(), 7);
        assert_eq!(stats.degenerate.len(), 7);
    }

    #[test]
    fn train_split_spans_unit_interval() {
        let x = Tensor::new(vec![3, 2], vec![1.0, -4.0, 3.0, 0.0, 2.0, 8.0]).unwrap();
        let stats = fit_scalers(&[record(x.clone(), (2, 0, 0))], "train").unwrap();
        let out = apply_scalers(&x, &stats).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|r| out.data()[r * 2 + j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((lo - 0.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_values_clip() {
        let x = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        let stats = fit_scalers(&[record(x, (1, 0, 0))], "train").unwrap();
        let probe = Tensor::new(vec![2, 1], vec![-100.0, 100.0]).unwrap();
        let out = apply_scalers(&probe, &stats).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0]);
    }

    #[test]
    fn composition_matches_two_step_hand_computation() {
        let x = Tensor::new(vec![2, 1], vec![3.0, 7.0]).unwrap();
        let stats = fit_scalers(&[record(x.clone(), (1, 0, 0))], "train").unwrap();
        // mean 5, population std 2 -> z in {-1, +1} -> minmax {0, 1}
        let direct = apply_scalers(&x, &stats).unwrap();
        let hand: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| {
                let z = (v - 5.0) / 2.0;
                (z - (-1.0)) / 2.0
            })
            .collect();
        assert_eq!(direct.data(), hand.as_slice());
    }

    #[test]
    fn modality_slicing_keeps_requested_columns() {
        let x = Tensor::new(vec![1, 6], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let (t, w) = slice_modalities(&x, (2, 1, 3), &[Modality::Audio, Modality::Text]).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 3.0, 4.0, 5.0]);
        assert_eq!(w, (2, 0, 3));
        let (v, w2) = slice_modalities(&x, (2, 1, 3), &[Modality::Vision]).unwrap();
        assert_eq!(v.data(), &[2.0]);
        assert_eq!(w2, (0, 1, 0));
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let x = Tensor::zeros(&[2, 3]);
        let stats = fit_scalers(&[record(Tensor::zeros(&[2, 2]), (2, 0, 0))], "t").unwrap();
        assert!(apply_scalers(&x, &stats).is_err());
    }
}
