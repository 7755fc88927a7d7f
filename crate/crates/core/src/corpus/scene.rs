//! Procedural stand-in for forward-facing locomotive footage.
//!
//! Three scene kinds share one background model (ballast at a base intensity
//! with uniform per-pixel noise):
//!
//! * `Track`: sleeper bands plus two bright rails following a bounded random
//!   walk of the track centreline.
//! * `Negative`: no rails and no sleepers, only diagonal streaks and blobs.
//! * `Switch`: a track scene with a second rail pair peeling off to the right
//!   below a branch row.

use std::fmt;
use std::str::FromStr;

use super::{clamp_unit, Image, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::Rng;

const CENTER_START: i64 = 32;
const CENTER_MIN: i64 = 24;
const CENTER_MAX: i64 = 40;
const SLEEPER_ROWS: usize = 2;
const BRANCH_ROW_MIN: usize = 16;
const BRANCH_ROW_MAX: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Track,
    Negative,
    Switch,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "track" => Ok(SceneKind::Track),
            "negative" => Ok(SceneKind::Negative),
            "switch" => Ok(SceneKind::Switch),
            other => Err(Error::invalid(format!(
                "unknown scene kind {other:?} (expected track, negative or switch)"
            ))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Track => "track",
            SceneKind::Negative => "negative",
            SceneKind::Switch => "switch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub kind: SceneKind,
    pub seed: u64,
    pub base_intensity: f64,
    pub ballast_noise_amplitude: f64,
    pub rail_intensity: f64,
    pub rail_width_px: usize,
    pub gauge_px: usize,
    pub sleeper_period_rows: usize,
    pub sleeper_intensity_boost: f64,
    /// Row where a switch branch leaves the main line. `None` draws it from
    /// the seed in `[16, 40]`. Ignored for other kinds.
    pub switch_branch_row: Option<usize>,
    /// Rows per pixel of lateral branch divergence.
    pub branch_rows_per_px: usize,
}

impl SceneParams {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        SceneParams {
            kind,
            seed,
            base_intensity: 0.25,
            ballast_noise_amplitude: 0.1,
            rail_intensity: 0.9,
            rail_width_px: 2,
            gauge_px: 20,
            sleeper_period_rows: 8,
            sleeper_intensity_boost: 0.15,
            switch_branch_row: None,
            branch_rows_per_px: 2,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneParams { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("base_intensity", self.base_intensity)?;
        unit("ballast_noise_amplitude", self.ballast_noise_amplitude)?;
        unit("rail_intensity", self.rail_intensity)?;
        unit("sleeper_intensity_boost", self.sleeper_intensity_boost)?;
        if self.rail_width_px == 0 {
            return Err(Error::invalid("rail_width_px must be at least 1"));
        }
        if self.gauge_px + 2 * self.rail_width_px >= IMAGE_SIZE {
            return Err(Error::invalid("gauge plus both rails must be narrower than the image"));
        }
        // Rails must stay inside the frame at both extremes of the centreline walk.
        let half = (self.gauge_px / 2) as i64;
        if CENTER_MIN - half < 0 || CENTER_MAX + half + self.rail_width_px as i64 > IMAGE_SIZE as i64 {
            return Err(Error::invalid(format!("gauge {} does not fit the frame", self.gauge_px)));
        }
        if self.gauge_px / 2 < self.rail_width_px {
            return Err(Error::invalid("rails overlap at this gauge"));
        }
        if self.sleeper_period_rows < SLEEPER_ROWS + 1 {
            return Err(Error::invalid("sleeper_period_rows must be at least 3"));
        }
        if self.branch_rows_per_px == 0 {
            return Err(Error::invalid("branch_rows_per_px must be at least 1"));
        }
        if let Some(r) = self.switch_branch_row {
            if !(BRANCH_ROW_MIN..=BRANCH_ROW_MAX).contains(&r) {
                return Err(Error::invalid(format!("switch_branch_row {r} outside [16, 40]")));
            }
        }
        Ok(())
    }
}

/// Ground truth the generator records alongside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    /// Track centreline column per row; empty for negatives.
    pub centerline: Vec<usize>,
    /// Row-major mask of main-line rail pixels.
    pub rail_mask: Vec<bool>,
    /// Row-major mask of branch rail pixels (switch scenes only).
    pub branch_mask: Vec<bool>,
    pub branch_row: Option<usize>,
}

impl SceneTruth {
    fn empty() -> Self {
        SceneTruth {
            centerline: Vec::new(),
            rail_mask: vec![false; IMAGE_SIZE * IMAGE_SIZE],
            branch_mask: vec![false; IMAGE_SIZE * IMAGE_SIZE],
            branch_row: None,
        }
    }

    /// Distinct rails present in `row`, counted as runs of masked pixels.
    pub fn rails_in_row(&self, row: usize) -> usize {
        let mask = &self.rail_mask[row * IMAGE_SIZE..(row + 1) * IMAGE_SIZE];
        mask.iter()
            .enumerate()
            .filter(|&(c, &m)| m && (c == 0 || !mask[c - 1]))
            .count()
    }
}

pub fn generate(params: &SceneParams) -> Result<Image> {
    generate_with_truth(params).map(|(img, _)| img)
}

pub fn generate_with_truth(params: &SceneParams) -> Result<(Image, SceneTruth)> {
    params.validate()?;
    let mut rng = Rng::new(params.seed);
    let mut buf = background(params, &mut rng)?;
    let mut truth = SceneTruth::empty();
    match params.kind {
        SceneKind::Track => draw_track(params, &mut rng, &mut buf, &mut truth),
        SceneKind::Switch => {
            draw_track(params, &mut rng, &mut buf, &mut truth);
            draw_branch(params, &mut rng, &mut buf, &mut truth);
        }
        SceneKind::Negative => draw_clutter(&mut rng, &mut buf)?,
    }
    let pixels = buf.into_iter().map(clamp_unit).collect();
    Ok((Image::new(IMAGE_SIZE, IMAGE_SIZE, pixels)?, truth))
}

/// `count` images of one kind; image `i` uses seed `base.seed + i`.
pub fn generate_corpus(base: &SceneParams, count: usize) -> Result<Vec<Image>> {
    if count < 1 {
        return Err(Error::invalid("corpus count must be at least 1"));
    }
    (0..count as u64)
        .map(|i| generate(&base.with_seed(base.seed.wrapping_add(i))))
        .collect()
}

fn background(params: &SceneParams, rng: &mut Rng) -> Result<Vec<f64>> {
    let amp = params.ballast_noise_amplitude;
    (0..IMAGE_SIZE * IMAGE_SIZE)
        .map(|_| {
            if amp > 0.0 {
                Ok(params.base_intensity + rng.uniform(-amp, amp)?)
            } else {
                Ok(params.base_intensity)
            }
        })
        .collect()
}

fn draw_track(params: &SceneParams, rng: &mut Rng, buf: &mut [f64], truth: &mut SceneTruth) {
    let period = params.sleeper_period_rows;
    let phase = rng.below(period as u64) as usize;
    for row in 0..IMAGE_SIZE {
        if (row + period - phase) % period < SLEEPER_ROWS {
            for v in &mut buf[row * IMAGE_SIZE..(row + 1) * IMAGE_SIZE] {
                *v += params.sleeper_intensity_boost;
            }
        }
    }

    let mut center = CENTER_START;
    let half = params.gauge_px / 2;
    for row in 0..IMAGE_SIZE {
        if row > 0 {
            let step = rng.below(3) as i64 - 1;
            center = (center + step).clamp(CENTER_MIN, CENTER_MAX);
        }
        let c = center as usize;
        truth.centerline.push(c);
        for start in [c - half, c + half] {
            for col in start..start + params.rail_width_px {
                buf[row * IMAGE_SIZE + col] = params.rail_intensity;
                truth.rail_mask[row * IMAGE_SIZE + col] = true;
            }
        }
    }
}

fn draw_branch(params: &SceneParams, rng: &mut Rng, buf: &mut [f64], truth: &mut SceneTruth) {
    let span = (BRANCH_ROW_MAX - BRANCH_ROW_MIN + 1) as u64;
    let drawn = BRANCH_ROW_MIN + rng.below(span) as usize;
    let branch_row = params.switch_branch_row.unwrap_or(drawn);
    truth.branch_row = Some(branch_row);
    let half = params.gauge_px / 2;
    for row in branch_row..IMAGE_SIZE {
        let offset = (row - branch_row) / params.branch_rows_per_px;
        let c = truth.centerline[row];
        for start in [c - half + offset, c + half + offset] {
            for col in start..(start + params.rail_width_px).min(IMAGE_SIZE) {
                buf[row * IMAGE_SIZE + col] = params.rail_intensity;
                truth.branch_mask[row * IMAGE_SIZE + col] = true;
            }
        }
    }
}

/// Paired diagonal streaks and filled blobs: bright line structure with no
/// vertical rail or sleeper pattern.
fn draw_clutter(rng: &mut Rng, buf: &mut [f64]) -> Result<()> {
    const STREAK_WIDTH: usize = 2;
    let size = IMAGE_SIZE as f64;
    let streaks = 4 + rng.below(5);
    for _ in 0..streaks {
        let x0 = rng.uniform(0.0, size)?;
        let y0 = rng.uniform(0.0, size)?;
        // 55..80 degrees off horizontal, either leaning direction.
        let mut angle = rng.uniform(55f64.to_radians(), 80f64.to_radians())?;
        if rng.below(2) == 1 {
            angle = std::f64::consts::PI - angle;
        }
        let length = rng.uniform(40.0, 80.0)?;
        let intensity = rng.uniform(0.85, 0.95)?;
        let spacing = rng.uniform(16.0, 24.0)?;
        let (dx, dy) = (angle.cos(), angle.sin());
        let columns = (0..STREAK_WIDTH).flat_map(|k| [k as f64, spacing + k as f64]);
        let columns: Vec<f64> = columns.collect();
        for s in 0..(length * 2.0) as usize {
            let t = s as f64 * 0.5;
            let (x, y) = (x0 + t * dx, y0 + t * dy);
            for shift in &columns {
                let (xi, yi) = ((x + shift).floor(), y.floor());
                if xi >= 0.0 && yi >= 0.0 && xi < size && yi < size {
                    buf[yi as usize * IMAGE_SIZE + xi as usize] = intensity;
                }
            }
        }
    }

    let blobs = 1 + rng.below(2);
    for _ in 0..blobs {
        let cx = rng.uniform(0.0, size)?;
        let cy = rng.uniform(0.0, size)?;
        let radius = rng.uniform(2.0, 5.0)?;
        let intensity = rng.uniform(0.4, 0.8)?;
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                let (ddx, ddy) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
                if ddx * ddx + ddy * ddy <= radius * radius {
                    buf[row * IMAGE_SIZE + col] = intensity;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_mean(img: &Image, col: usize) -> f64 {
        (0..IMAGE_SIZE).map(|r| img.get(r, col)).sum::<f64>() / IMAGE_SIZE as f64
    }

    #[test]
    fn track_has_two_rails_per_row() {
        for seed in 0..20 {
            let (img, truth) = generate_with_truth(&SceneParams::new(SceneKind::Track, seed)).unwrap();
            assert_eq!(truth.centerline.len(), IMAGE_SIZE);
            for row in 0..IMAGE_SIZE {
                assert_eq!(truth.rails_in_row(row), 2, "seed {seed} row {row}");
                let c = truth.centerline[row];
                assert!((24..=40).contains(&c));
                assert!(img.get(row, c + 10) >= 0.8);
                assert!(img.get(row, c - 10) >= 0.8);
            }
            for w in truth.centerline.windows(2) {
                assert!(w[0].abs_diff(w[1]) <= 1);
            }
        }
    }

    #[test]
    fn rails_stand_out_from_background() {
        for seed in 0..20 {
            let (img, truth) = generate_with_truth(&SceneParams::new(SceneKind::Track, seed)).unwrap();
            let (mut rail, mut nr, mut bg, mut nb) = (0.0, 0, 0.0, 0);
            for (p, &m) in img.pixels().iter().zip(&truth.rail_mask) {
                if m {
                    rail += p;
                    nr += 1;
                } else {
                    bg += p;
                    nb += 1;
                }
            }
            assert!(rail / nr as f64 - bg / nb as f64 >= 0.3);
        }
    }

    #[test]
    fn negatives_have_no_rail_pair() {
        for seed in 0..200 {
            let params = SceneParams::new(SceneKind::Negative, seed);
            let img = generate(&params).unwrap();
            for col in 0..IMAGE_SIZE - params.gauge_px {
                let pair = column_mean(&img, col) >= 0.8 && column_mean(&img, col + params.gauge_px) >= 0.8;
                assert!(!pair, "seed {seed} column {col}");
            }
        }
    }

    #[test]
    fn switch_adds_diverging_branch() {
        let mut params = SceneParams::new(SceneKind::Switch, 5);
        params.switch_branch_row = Some(20);
        let (img, truth) = generate_with_truth(&params).unwrap();
        assert_eq!(truth.branch_row, Some(20));
        let c = truth.centerline[63];
        let offset = (63 - 20) / 2;
        assert!(img.get(63, c - 10 + offset) >= 0.8);
        assert!(truth.branch_mask[63 * IMAGE_SIZE + c - 10 + offset]);
        assert!(truth.branch_mask[..20 * IMAGE_SIZE].iter().all(|&m| !m));

        let drawn = generate_with_truth(&SceneParams::new(SceneKind::Switch, 9)).unwrap().1;
        assert!((16..=40).contains(&drawn.branch_row.unwrap()));
    }

    #[test]
    fn switch_shares_track_layout() {
        let (_, t) = generate_with_truth(&SceneParams::new(SceneKind::Track, 3)).unwrap();
        let (_, s) = generate_with_truth(&SceneParams::new(SceneKind::Switch, 3)).unwrap();
        assert_eq!(t.centerline, s.centerline);
        assert_eq!(t.rail_mask, s.rail_mask);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [SceneKind::Track, SceneKind::Negative, SceneKind::Switch] {
            let p = SceneParams::new(kind, 77);
            assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
            assert_ne!(generate(&p).unwrap(), generate(&p.with_seed(78)).unwrap());
        }
    }

    #[test]
    fn pixels_always_in_unit_range() {
        let mut p = SceneParams::new(SceneKind::Switch, 0);
        p.base_intensity = 0.95;
        p.ballast_noise_amplitude = 0.2;
        for kind in [SceneKind::Track, SceneKind::Negative, SceneKind::Switch] {
            p.kind = kind;
            let img = generate(&p).unwrap();
            assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn corpus_seeds_are_consecutive() {
        let base = SceneParams::new(SceneKind::Track, 100);
        let c = generate_corpus(&base, 3).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c[0], generate(&base).unwrap());
        assert_eq!(c[2], generate(&base.with_seed(102)).unwrap());
        assert_eq!(generate_corpus(&base, 1).unwrap(), vec![generate(&base).unwrap()]);
        assert!(generate_corpus(&base, 0).is_err());
    }

    #[test]
    fn five_hundred_positives_are_distinct() {
        let c = generate_corpus(&SceneParams::new(SceneKind::Track, 0), 500).unwrap();
        assert_eq!(c.len(), 500);
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert_ne!(c[i], c[j]);
            }
        }
        assert_eq!(c, generate_corpus(&SceneParams::new(SceneKind::Track, 0), 500).unwrap());
    }

    #[test]
    fn narrow_gauge_region() {
        let mut p = SceneParams::new(SceneKind::Track, 1000);
        p.base_intensity = 0.35;
        p.gauge_px = 16;
        let (img, truth) = generate_with_truth(&p).unwrap();
        for row in 0..IMAGE_SIZE {
            assert!(img.get(row, truth.centerline[row] + 8) >= 0.8);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SceneParams::new(SceneKind::Track, 0);
        p.gauge_px = 60;
        assert!(generate(&p).is_err());
        let mut p = SceneParams::new(SceneKind::Switch, 0);
        p.switch_branch_row = Some(50);
        assert!(generate(&p).is_err());
        let mut p = SceneParams::new(SceneKind::Track, 0);
        p.rail_intensity = 1.5;
        assert!(generate(&p).is_err());
    }
}
