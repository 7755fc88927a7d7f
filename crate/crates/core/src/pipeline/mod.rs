//! Streaming detection over numbered frame files.
//!
//! Frames are subsampled to the analysis rate, cropped to the track ROI,
//! embedded once, and scored against every benchmark in the gallery. The
//! lowest score wins: a frame is normal if it resembles any good-track
//! benchmark. Anomalous records close together in time merge into events
//! for human review.

mod report;

use std::fs;
use std::path::Path;

use crate::corpus::{crop_resize_roi, read_pgm_any, Image, Roi};
use crate::error::{Error, Result};
use crate::siamese::{distance, score, Embedding, SiameseModel};

pub use report::{format_float, parse_report, render_report, write_report, ReportLine};

pub const DEFAULT_INPUT_FPS: f64 = 30.0;
pub const DEFAULT_ANALYZE_FPS: f64 = 10.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Benchmark images with their embeddings under one model.
#[derive(Debug, Clone)]
pub struct BenchmarkGallery {
    images: Vec<Image>,
    embeddings: Vec<Embedding>,
}

impl BenchmarkGallery {
    pub fn new(model: &SiameseModel, images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("benchmark gallery must not be empty"));
        }
        let embeddings = images.iter().map(|img| model.embed(img)).collect::<Result<_>>()?;
        Ok(BenchmarkGallery { images, embeddings })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    input_fps: f64,
    analyze_fps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            input_fps: DEFAULT_INPUT_FPS,
            analyze_fps: DEFAULT_ANALYZE_FPS,
        }
    }
}

impl SamplerConfig {
    pub fn new(input_fps: f64, analyze_fps: f64) -> Result<Self> {
        if !(analyze_fps > 0.0 && input_fps >= analyze_fps && input_fps.is_finite()) {
            return Err(Error::invalid(format!(
                "need input_fps >= analyze_fps > 0, got {input_fps} and {analyze_fps}"
            )));
        }
        Ok(SamplerConfig { input_fps, analyze_fps })
    }

    pub fn input_fps(&self) -> f64 {
        self.input_fps
    }

    pub fn analyze_fps(&self) -> f64 {
        self.analyze_fps
    }

    pub fn stride(&self) -> usize {
        ((self.input_fps / self.analyze_fps).round() as usize).max(1)
    }
}

/// `0, stride, 2*stride, ...` below `frame_count`.
pub fn sample_indices(frame_count: usize, cfg: &SamplerConfig) -> Vec<usize> {
    (0..frame_count).step_by(cfg.stride()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyRecord {
    pub frame_index: usize,
    pub timestamp_s: f64,
    pub score: f64,
    pub anomalous: bool,
    pub nearest_benchmark: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEvent {
    pub first_frame: usize,
    pub last_frame: usize,
    pub peak_score: f64,
    pub record_count: usize,
}

/// Minimum score over the gallery, the benchmark that attains it, and the
/// verdict at `threshold`. The nearest benchmark is the one at the smallest
/// distance, lowest index on ties.
pub fn score_embedding(
    model: &SiameseModel,
    gallery: &BenchmarkGallery,
    embedding: &Embedding,
) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, bench) in gallery.embeddings.iter().enumerate() {
        let d = distance(embedding, bench)?;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (d, i) = best.ok_or_else(|| Error::invalid("benchmark gallery must not be empty"))?;
    Ok((score(d, model.margin()), i))
}

pub fn score_frame(
    model: &SiameseModel,
    gallery: &BenchmarkGallery,
    frame: &Image,
    roi: Option<Roi>,
    threshold: f64,
) -> Result<AnomalyRecord> {
    score_frame_at(model, gallery, frame, roi, threshold, 0, DEFAULT_INPUT_FPS)
}

fn score_frame_at(
    model: &SiameseModel,
    gallery: &BenchmarkGallery,
    frame: &Image,
    roi: Option<Roi>,
    threshold: f64,
    frame_index: usize,
    input_fps: f64,
) -> Result<AnomalyRecord> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let crop = crop_resize_roi(frame, roi.unwrap_or_else(|| Roi::full(frame)))?;
    let embedding = model.embed(&crop)?;
    let (s, nearest) = score_embedding(model, gallery, &embedding)?;
    Ok(AnomalyRecord {
        frame_index,
        timestamp_s: frame_index as f64 / input_fps,
        score: s,
        anomalous: s >= threshold,
        nearest_benchmark: nearest,
    })
}

/// Groups anomalous records whose frame indices are at most `max_gap` apart.
pub fn merge_events(records: &[AnomalyRecord], max_gap: usize) -> Vec<AnomalyEvent> {
    let mut events: Vec<AnomalyEvent> = Vec::new();
    for r in records.iter().filter(|r| r.anomalous) {
        match events.last_mut() {
            Some(ev) if r.frame_index - ev.last_frame <= max_gap => {
                ev.last_frame = r.frame_index;
                ev.peak_score = ev.peak_score.max(r.score);
                ev.record_count += 1;
            }
            _ => events.push(AnomalyEvent {
                first_frame: r.frame_index,
                last_frame: r.frame_index,
                peak_score: r.score,
                record_count: 1,
            }),
        }
    }
    events
}

/// Scores the sampled subset of `frame_count` frames pulled from `load` in
/// ascending order and merges anomalies with a gap of `2 * stride`.
pub fn detect(
    model: &SiameseModel,
    gallery: &BenchmarkGallery,
    frame_count: usize,
    mut load: impl FnMut(usize) -> Result<Image>,
    cfg: &SamplerConfig,
    roi: Option<Roi>,
    threshold: f64,
) -> Result<(Vec<AnomalyRecord>, Vec<AnomalyEvent>)> {
    let records = sample_indices(frame_count, cfg)
        .into_iter()
        .map(|i| {
            let frame = load(i)?;
            score_frame_at(model, gallery, &frame, roi, threshold, i, cfg.input_fps)
        })
        .collect::<Result<Vec<_>>>()?;
    let events = merge_events(&records, 2 * cfg.stride());
    Ok((records, events))
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

/// Number of frames in `dir`, which must be `frame_000000.pgm` onwards with
/// no gaps. Other files are ignored.
pub fn count_frames(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_index) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    for (expected, &found) in indices.iter().enumerate() {
        if found != expected {
            return Err(Error::Frame {
                index: expected,
                reason: format!(
                    "frame numbering is not contiguous from 0 (next file is {})",
                    frame_file_name(found)
                ),
            });
        }
    }
    Ok(indices.len())
}

/// [`detect`] over a directory of `frame_%06d.pgm` files.
pub fn detect_stream(
    model: &SiameseModel,
    gallery: &BenchmarkGallery,
    frames_dir: &Path,
    cfg: &SamplerConfig,
    roi: Option<Roi>,
    threshold: f64,
) -> Result<(Vec<AnomalyRecord>, Vec<AnomalyEvent>)> {
    let count = count_frames(frames_dir)?;
    let load = |i: usize| {
        read_pgm_any(&frames_dir.join(frame_file_name(i))).map_err(|e| Error::Frame {
            index: i,
            reason: e.to_string(),
        })
    };
    detect(model, gallery, count, load, cfg, roi, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, write_pgm, SceneKind, SceneParams};
    use crate::numerics::Rng;

    fn record(frame_index: usize, score: f64, anomalous: bool) -> AnomalyRecord {
        AnomalyRecord {
            frame_index,
            timestamp_s: frame_index as f64 / 30.0,
            score,
            anomalous,
            nearest_benchmark: 0,
        }
    }

    #[test]
    fn stride_and_indices() {
        let cfg = SamplerConfig::default();
        assert_eq!(cfg.stride(), 3);
        assert_eq!(sample_indices(10, &cfg), vec![0, 3, 6, 9]);
        let same = SamplerConfig::new(30.0, 30.0).unwrap();
        assert_eq!(sample_indices(5, &same), vec![0, 1, 2, 3, 4]);
        assert!(sample_indices(0, &cfg).is_empty());
        assert_eq!(SamplerConfig::new(30.0, 5.0).unwrap().stride(), 6);
        assert_eq!(SamplerConfig::new(30.0, 7.0).unwrap().stride(), 4);
    }

    #[test]
    fn sampler_rejects_bad_rates() {
        assert!(SamplerConfig::new(10.0, 30.0).is_err());
        assert!(SamplerConfig::new(30.0, 0.0).is_err());
        assert!(SamplerConfig::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn events_split_on_large_gaps() {
        let records: Vec<_> = [(27, false), (30, true), (33, true), (36, false), (90, true)]
            .iter()
            .map(|&(i, a)| record(i, if a { 0.8 } else { 0.1 }, a))
            .collect();
        let events = merge_events(&records, 6);
        assert_eq!(
            events,
            vec![
                AnomalyEvent { first_frame: 30, last_frame: 33, peak_score: 0.8, record_count: 2 },
                AnomalyEvent { first_frame: 90, last_frame: 90, peak_score: 0.8, record_count: 1 },
            ]
        );
    }

    #[test]
    fn one_missed_frame_does_not_split() {
        let records = vec![record(0, 0.6, true), record(3, 0.2, false), record(6, 0.9, true)];
        let events = merge_events(&records, 6);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].peak_score, 0.9);
        assert_eq!(events[0].record_count, 2);
        assert!(merge_events(&[record(0, 0.1, false)], 6).is_empty());
    }

    fn setup() -> (SiameseModel, BenchmarkGallery) {
        let model = SiameseModel::he_initialized(&mut Rng::new(8), 1.0).unwrap();
        let imgs: Vec<_> = (0..3)
            .map(|s| generate(&SceneParams::new(SceneKind::Track, s)).unwrap())
            .collect();
        let gallery = BenchmarkGallery::new(&model, imgs).unwrap();
        (model, gallery)
    }

    #[test]
    fn benchmark_frame_scores_zero() {
        let (model, gallery) = setup();
        let rec = score_frame(&model, &gallery, &gallery.images()[1].clone(), None, 1e-9).unwrap();
        assert_eq!(rec.score, 0.0);
        assert!(!rec.anomalous);
        assert_eq!(rec.nearest_benchmark, 1);
    }

    #[test]
    fn single_benchmark_gallery_is_pairwise_score() {
        let (model, gallery) = setup();
        let one = BenchmarkGallery::new(&model, vec![gallery.images()[0].clone()]).unwrap();
        let frame = generate(&SceneParams::new(SceneKind::Negative, 4)).unwrap();
        let rec = score_frame(&model, &one, &frame, None, 0.5).unwrap();
        let d = distance(&model.embed(&frame).unwrap(), &one.embeddings()[0]).unwrap();
        assert_eq!(rec.score, score(d, 1.0));
    }

    #[test]
    fn larger_gallery_never_raises_score() {
        let (model, gallery) = setup();
        let frame = generate(&SceneParams::new(SceneKind::Switch, 11)).unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..=gallery.len() {
            let sub = BenchmarkGallery::new(&model, gallery.images()[..n].to_vec()).unwrap();
            let s = score_frame(&model, &sub, &frame, None, 0.5).unwrap().score;
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn empty_gallery_rejected() {
        let (model, _) = setup();
        assert!(BenchmarkGallery::new(&model, vec![]).is_err());
    }

    #[test]
    fn frame_directory_contract() {
        let (model, gallery) = setup();
        let dir = tempfile::tempdir().unwrap();
        for i in 0..7 {
            let img = generate(&SceneParams::new(SceneKind::Track, 50 + i as u64)).unwrap();
            write_pgm(&img, &dir.path().join(frame_file_name(i))).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let (records, _) =
            detect_stream(&model, &gallery, dir.path(), &SamplerConfig::default(), None, 0.5).unwrap();
        assert_eq!(records.iter().map(|r| r.frame_index).collect::<Vec<_>>(), vec![0, 3, 6]);
        assert_eq!(records[2].timestamp_s, 6.0 / 30.0);

        std::fs::write(dir.path().join(frame_file_name(3)), b"P5\n64 64\n255\n").unwrap();
        match detect_stream(&model, &gallery, dir.path(), &SamplerConfig::default(), None, 0.5) {
            Err(Error::Frame { index: 3, .. }) => {}
            other => panic!("{other:?}"),
        }

        std::fs::remove_file(dir.path().join(frame_file_name(2))).unwrap();
        match count_frames(dir.path()) {
            Err(Error::Frame { index: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frame_name_parsing() {
        assert_eq!(parse_frame_index("frame_000042.pgm"), Some(42));
        assert_eq!(parse_frame_index("frame_42.pgm"), None);
        assert_eq!(parse_frame_index("frame_0000420.pgm"), None);
        assert_eq!(parse_frame_index("img_000042.pgm"), None);
    }
}
