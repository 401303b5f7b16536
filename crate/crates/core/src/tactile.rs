//! Tactile vector-field analytics.
//!
//! Each frame is a grid of 2-D marker displacements. Four field patterns are
//! told apart by magnitude-normalised scores taken about the grid centre:
//! a radial score (sourcing / sinking), a tangential score (twisting) and a
//! coherence score (uniform flow). Per-frame statuses are smoothed and cut
//! into segments whose start times are the key timestamps of a demonstration.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skill_model::ObjectStatus;

pub const DEFAULT_GRID: usize = 11;
pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum TactileError {
    #[error("empty tactile sequence")]
    EmptySequence,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frames are not time-ordered at index {0}")]
    Unordered(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One grid of displacement vectors (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub rows: usize,
    pub cols: usize,
    /// Row-major displacement vectors.
    pub vectors: Vec<[f64; 2]>,
    /// Cell centres, normalised so the grid spans [-1, 1]² about the origin.
    pub coords: Vec<[f64; 2]>,
    pub timestamp: f64,
}

/// Normalised cell centres of a `rows` x `cols` grid, row-major.
pub fn grid_coords(rows: usize, cols: usize) -> Vec<[f64; 2]> {
    let axis = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
    (0..rows).flat_map(|r| (0..cols).map(move |c| [axis(c, cols), axis(r, rows)])).collect()
}

impl TactileFrame {
    pub fn new(rows: usize, cols: usize, vectors: Vec<[f64; 2]>, timestamp: f64) -> Result<Self, TactileError> {
        let frame = Self { rows, cols, coords: grid_coords(rows, cols), vectors, timestamp };
        frame.validate()?;
        Ok(frame)
    }

    /// Build a frame by evaluating `field` at every cell centre.
    pub fn from_fn(rows: usize, cols: usize, timestamp: f64, field: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let coords = grid_coords(rows, cols);
        let vectors = coords.iter().map(|&p| field(p)).collect();
        Self { rows, cols, vectors, coords, timestamp }
    }

    pub fn validate(&self) -> Result<(), TactileError> {
        if self.rows < 3 || self.cols < 3 {
            return Err(TactileError::InvalidFrame(format!("grid {}x{} is smaller than 3x3", self.rows, self.cols)));
        }
        let n = self.rows * self.cols;
        if self.vectors.len() != n || self.coords.len() != n {
            return Err(TactileError::InvalidFrame(format!("expected {n} vectors, found {}", self.vectors.len())));
        }
        if self.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(TactileError::InvalidFrame("non-finite vector component".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vectors {
            v[0] *= alpha;
            v[1] *= alpha;
        }
        out
    }

    /// Rotate both the vectors and the cell positions about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rot = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        Self {
            vectors: self.vectors.iter().copied().map(rot).collect(),
            coords: self.coords.iter().copied().map(rot).collect(),
            ..self.clone()
        }
    }
}

/// Time-ordered frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TactileSequence {
    pub frames: Vec<TactileFrame>,
}

impl TactileSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Median spacing between consecutive timestamps.
    pub fn frame_period(&self) -> f64 {
        let mut dts: Vec<f64> = self.frames.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
        if dts.is_empty() {
            return 1.0 / DEFAULT_FPS;
        }
        dts.sort_by(f64::total_cmp);
        dts[dts.len() / 2]
    }

    pub fn extend(&mut self, other: TactileSequence) {
        self.frames.extend(other.frames);
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> io::Result<()> {
        for f in &self.frames {
            let line = FrameLine { timestamp: f.timestamp, h: f.rows, w: f.cols, vectors: f.vectors.iter().flatten().copied().collect() };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TactileError> {
        let mut frames = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fmt_err = |message: String| TactileError::Format { line: i + 1, message };
            let fl: FrameLine = serde_json::from_str(&line).map_err(|e| fmt_err(e.to_string()))?;
            if fl.vectors.len() != 2 * fl.h * fl.w {
                return Err(fmt_err(format!("expected {} numbers, found {}", 2 * fl.h * fl.w, fl.vectors.len())));
            }
            let vectors = fl.vectors.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            let frame = TactileFrame::new(fl.h, fl.w, vectors, fl.timestamp).map_err(|e| fmt_err(e.to_string()))?;
            frames.push(frame);
        }
        Ok(Self { frames })
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)
    }

    pub fn load(path: &Path) -> Result<Self, TactileError> {
        Self::read_jsonl(io::BufReader::new(fs::File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    timestamp: f64,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    vectors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldFeatures {
    /// Mean vector magnitude (mm).
    pub mean_magnitude: f64,
    /// Mean outward component over the mean magnitude, in [-1, 1].
    pub radial: f64,
    /// Mean counter-clockwise component over the mean magnitude, in [-1, 1].
    pub tangential: f64,
    /// Norm of the mean vector over the mean magnitude, in [0, 1].
    pub coherence: f64,
}

/// Field features about the grid centre. The cell at the centre has no
/// radial direction and is left out of every statistic.
pub fn features(frame: &TactileFrame) -> FieldFeatures {
    let mut n = 0usize;
    let (mut mag, mut rad, mut tan, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (v, p) in frame.vectors.iter().zip(&frame.coords) {
        let r = p[0].hypot(p[1]);
        if r < 1e-12 {
            continue;
        }
        let rh = [p[0] / r, p[1] / r];
        let th = [-rh[1], rh[0]];
        n += 1;
        mag += v[0].hypot(v[1]);
        rad += v[0] * rh[0] + v[1] * rh[1];
        tan += v[0] * th[0] + v[1] * th[1];
        sx += v[0];
        sy += v[1];
    }
    if n == 0 {
        return FieldFeatures::default();
    }
    let nf = n as f64;
    let m = mag / nf;
    if m <= f64::MIN_POSITIVE {
        return FieldFeatures::default();
    }
    FieldFeatures {
        mean_magnitude: m,
        radial: (rad / nf / m).clamp(-1.0, 1.0),
        tangential: (tan / nf / m).clamp(-1.0, 1.0),
        coherence: ((sx / nf).hypot(sy / nf) / m).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// Below this mean magnitude (mm) the sensor is idle.
    pub idle: f64,
    pub coherence: f64,
    pub tangential: f64,
    pub radial: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self { idle: 0.05, coherence: 0.8, tangential: 0.5, radial: 0.5 }
    }
}

pub fn classify_features(f: &FieldFeatures, p: &ClassifierParams) -> ObjectStatus {
    if f.mean_magnitude < p.idle {
        ObjectStatus::Idle
    } else if f.coherence >= p.coherence {
        ObjectStatus::LinearForce
    } else if f.tangential.abs() >= p.tangential && f.tangential.abs() > f.radial.abs() {
        ObjectStatus::Torque
    } else if f.radial >= p.radial {
        ObjectStatus::Grasped
    } else if f.radial <= -p.radial {
        ObjectStatus::Released
    } else {
        ObjectStatus::Ambiguous
    }
}

pub fn classify(frame: &TactileFrame, params: &ClassifierParams) -> ObjectStatus {
    classify_features(&features(frame), params)
}

/// A maximal run of one status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub status: ObjectStatus,
    pub t_start: f64,
    pub t_end: f64,
    pub key_timestamp: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub classifier: ClassifierParams,
    /// Majority-vote window in frames.
    pub window: usize,
    /// Runs shorter than this (seconds) are merged into a neighbour.
    pub min_duration: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { classifier: ClassifierParams::default(), window: 5, min_duration: 0.3 }
    }
}

fn majority_vote(labels: &[ObjectStatus], window: usize) -> Vec<ObjectStatus> {
    let half = window / 2;
    (0..labels.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(labels.len());
            let mut counts = [0usize; 5];
            for l in &labels[lo..hi] {
                if let Some(k) = ObjectStatus::DEFINITE.iter().position(|s| s == l) {
                    counts[k] += 1;
                }
            }
            let best = *counts.iter().max().unwrap();
            if best == 0 {
                return ObjectStatus::Ambiguous;
            }
            let own = ObjectStatus::DEFINITE.iter().position(|s| *s == labels[i]);
            match own {
                Some(k) if counts[k] == best => labels[i],
                _ => ObjectStatus::DEFINITE[counts.iter().position(|&c| c == best).unwrap()],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Run {
    status: ObjectStatus,
    start: usize,
    end: usize,
}

fn runs_of(labels: &[ObjectStatus]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (i, &s) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.status == s => r.end = i + 1,
            _ => runs.push(Run { status: s, start: i, end: i + 1 }),
        }
    }
    runs
}

fn coalesce(runs: Vec<Run>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs {
        match out.last_mut() {
            Some(last) if last.status == r.status => last.end = r.end,
            _ => out.push(r),
        }
    }
    out
}

/// Per-frame classification, majority smoothing, hysteresis on ambiguous
/// frames and a minimum-duration merge.
pub fn segment_sequence(seq: &TactileSequence, params: &SegmentParams) -> Result<Vec<Segment>, TactileError> {
    if seq.is_empty() {
        return Err(TactileError::EmptySequence);
    }
    if let Some(i) = seq.frames.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(TactileError::Unordered(i + 1));
    }
    let raw: Vec<ObjectStatus> = seq.frames.iter().map(|f| classify(f, &params.classifier)).collect();
    let mut labels = majority_vote(&raw, params.window.max(1));

    let first_definite = labels.iter().copied().find(|s| *s != ObjectStatus::Ambiguous).unwrap_or(ObjectStatus::Idle);
    let mut prev = first_definite;
    for l in &mut labels {
        if *l == ObjectStatus::Ambiguous {
            *l = prev;
        } else {
            prev = *l;
        }
    }

    let period = seq.frame_period();
    let time_at = |i: usize| {
        if i < seq.len() {
            seq.frames[i].timestamp
        } else {
            seq.frames[seq.len() - 1].timestamp + period
        }
    };
    let duration = |r: &Run| time_at(r.end) - time_at(r.start);

    let mut runs = runs_of(&labels);
    while runs.len() > 1 {
        let Some((idx, _)) = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| duration(r) < params.min_duration - 1e-9)
            .min_by(|a, b| duration(a.1).total_cmp(&duration(b.1)))
        else {
            break;
        };
        let left = idx.checked_sub(1).map(|i| runs[i]);
        let right = runs.get(idx + 1).copied();
        let target = match (left, right) {
            (Some(l), Some(r)) if l.status == r.status => l.status,
            (Some(l), Some(r)) => {
                if duration(&r) > duration(&l) {
                    r.status
                } else {
                    l.status
                }
            }
            (Some(l), None) => l.status,
            (None, Some(r)) => r.status,
            (None, None) => break,
        };
        runs[idx].status = target;
        runs = coalesce(runs);
    }

    Ok(runs
        .iter()
        .map(|r| Segment { status: r.status, t_start: time_at(r.start), t_end: time_at(r.end), key_timestamp: time_at(r.start) })
        .collect())
}

/// Default pattern amplitude: mean displacement magnitude in mm.
pub const PATTERN_AMPLITUDE: f64 = 1.0;

/// Noise-free field for a status, scaled to a mean magnitude of `amplitude`
/// over the off-centre cells. `direction` is the uniform-flow heading.
pub fn pattern_field(status: ObjectStatus, rows: usize, cols: usize, amplitude: f64, direction: f64) -> Vec<[f64; 2]> {
    let coords = grid_coords(rows, cols);
    let raw: Vec<[f64; 2]> = coords
        .iter()
        .map(|&[x, y]| match status {
            ObjectStatus::Grasped => [x, y],
            ObjectStatus::Released => [-x, -y],
            ObjectStatus::Torque => [-y, x],
            ObjectStatus::LinearForce => [direction.cos(), direction.sin()],
            ObjectStatus::Idle | ObjectStatus::Ambiguous => [0.0, 0.0],
        })
        .collect();
    let (sum, n) = raw
        .iter()
        .zip(&coords)
        .filter(|(_, p)| p[0].hypot(p[1]) >= 1e-12)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v[0].hypot(v[1]), n + 1));
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    if mean == 0.0 {
        return raw;
    }
    raw.into_iter().map(|v| [v[0] * amplitude / mean, v[1] * amplitude / mean]).collect()
}

fn noisy_frames(status: ObjectStatus, t0: f64, n: usize, fps: f64, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<TactileFrame> {
    let direction = rng.random_range(0.0..std::f64::consts::TAU);
    let base = pattern_field(status, DEFAULT_GRID, DEFAULT_GRID, PATTERN_AMPLITUDE, direction);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    (0..n)
        .map(|k| {
            let vectors =
                base.iter().map(|v| if noise_sigma > 0.0 { [v[0] + noise.sample(rng), v[1] + noise.sample(rng)] } else { *v }).collect();
            TactileFrame {
                rows: DEFAULT_GRID,
                cols: DEFAULT_GRID,
                vectors,
                coords: grid_coords(DEFAULT_GRID, DEFAULT_GRID),
                timestamp: t0 + k as f64 / fps,
            }
        })
        .collect()
}

/// Synthetic sequence of one pattern with additive Gaussian noise (mm).
pub fn synthesize_pattern(status: ObjectStatus, duration: f64, fps: f64, noise_sigma: f64, seed: u64) -> TactileSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration * fps).round().max(1.0) as usize;
    TactileSequence { frames: noisy_frames(status, 0.0, n, fps, noise_sigma, &mut rng) }
}

/// Concatenated patterns for a `(status, duration)` schedule; frame `k` sits
/// at `k / fps` throughout.
pub fn synthesize_schedule(schedule: &[(ObjectStatus, f64)], fps: f64, noise_sigma: f64, seed: u64) -> TactileSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    let mut elapsed = 0.0;
    for &(status, duration) in schedule {
        let start = frames.len();
        elapsed += duration;
        let end = (elapsed * fps).round() as usize;
        let n = end.saturating_sub(start);
        frames.extend(noisy_frames(status, start as f64 / fps, n, fps, noise_sigma, &mut rng));
    }
    TactileSequence { frames }
}
