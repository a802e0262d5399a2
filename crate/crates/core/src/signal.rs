//! Audio ingest, manifest parsing, segmentation and the voicing gate.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("{path}: expected a single channel, found {channels}")]
    MultiChannel { path: String, channels: u16 },
    #[error("{path}: audio has no samples")]
    Empty { path: String },
    #[error("{path}: unsupported sample format ({reason})")]
    UnsupportedFormat { path: String, reason: String },
    #[error("clip of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("invalid segmentation: {0}")]
    InvalidWindow(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "1" | "true" => Ok(Label::Positive),
            "negative" | "neg" | "0" | "false" => Ok(Label::Negative),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vowel {
    A,
    I,
    U,
    Other,
}

impl Vowel {
    pub fn as_str(self) -> &'static str {
        match self {
            Vowel::A => "a",
            Vowel::I => "i",
            Vowel::U => "u",
            Vowel::Other => "other",
        }
    }
}

impl fmt::Display for Vowel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Vowel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().trim_matches('/').to_ascii_lowercase().as_str() {
            "a" => Ok(Vowel::A),
            "i" => Ok(Vowel::I),
            "u" => Ok(Vowel::U),
            "" | "other" => Ok(Vowel::Other),
            other => Err(format!("unknown vowel '{other}'")),
        }
    }
}

/// A recording, amplitude-normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub label: Option<Label>,
    pub vowel: Vowel,
    /// Display name, usually the file stem.
    pub name: String,
    /// Set when the clip was converted to the requested rate on load.
    pub resampled: bool,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            speaker_id: String::new(),
            label: None,
            vowel: Vowel::Other,
            name: String::new(),
            resampled: false,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

/// Clip-level facts every segment carries along.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceInfo {
    pub name: String,
    pub speaker_id: String,
    pub label: Option<Label>,
    pub vowel: Vowel,
    pub sample_rate: u32,
    pub clip_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    /// Offset of the first sample in the source clip.
    pub start_index: usize,
    pub duration_s: f64,
    pub index: usize,
    pub source: Arc<SourceInfo>,
}

impl Segment {
    pub fn sample_rate(&self) -> u32 {
        self.source.sample_rate
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Fraction of adjacent sample pairs whose signs differ.
pub fn zero_crossing_rate(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (x.len() - 1) as f64
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = from_rate as f64 / to_rate as f64;
    let out_len = ((samples.len() as f64) / ratio).round().max(1.0) as usize;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= last {
                return samples[last];
            }
            let frac = pos - i as f64;
            samples[i] + frac * (samples[i + 1] - samples[i])
        })
        .collect()
}

/// Load a single-channel PCM WAV, scaling to [-1, 1] and resampling to
/// `expected_rate` when needed. Metadata defaults to the file stem.
pub fn load_clip(path: &Path, expected_rate: u32) -> Result<AudioClip, SignalError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|e| SignalError::Unreadable {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::MultiChannel {
            path: display,
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(SignalError::UnsupportedFormat {
            path: display,
            reason: "floating-point samples".into(),
        });
    }
    let full_scale = match spec.bits_per_sample {
        8 => 128.0,
        16 => 32768.0,
        bits => {
            return Err(SignalError::UnsupportedFormat {
                path: display,
                reason: format!("{bits}-bit PCM"),
            })
        }
    };
    let samples = reader
        .samples::<i32>()
        .map(|s| s.map(|v| v as f64 / full_scale))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| SignalError::Unreadable {
            path: display.clone(),
            reason: e.to_string(),
        })?;
    if samples.is_empty() {
        return Err(SignalError::Empty { path: display });
    }

    let resampled = spec.sample_rate != expected_rate;
    let samples = if resampled {
        resample_linear(&samples, spec.sample_rate, expected_rate)
    } else {
        samples
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut clip = AudioClip::new(samples, expected_rate);
    clip.speaker_id = stem.clone();
    clip.name = stem;
    clip.resampled = resampled;
    Ok(clip)
}

/// Write mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), SignalError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| SignalError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(err)?;
    }
    w.finalize().map_err(err)
}

/// One row of the clip manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker_id: String,
    pub label: Option<Label>,
    pub vowel: Vowel,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    speaker_id: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    vowel: String,
}

/// Parse a `path,speaker_id,label,vowel` manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, SignalError> {
    let display = path.display().to_string();
    let bad = |reason: String| SignalError::Manifest {
        path: display.clone(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let label = if row.label.is_empty() {
            None
        } else {
            Some(row.label.parse().map_err(|e| bad(format!("row {}: {e}", line + 1)))?)
        };
        let vowel = row.vowel.parse().map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        if row.speaker_id.is_empty() {
            return Err(bad(format!("row {}: empty speaker_id", line + 1)));
        }
        let p = PathBuf::from(&row.path);
        entries.push(ManifestEntry {
            path: if p.is_absolute() { p } else { base.join(p) },
            speaker_id: row.speaker_id,
            label,
            vowel,
        });
    }
    Ok(entries)
}

/// Load the clip named by a manifest row and attach its metadata.
pub fn load_entry(entry: &ManifestEntry, expected_rate: u32) -> Result<AudioClip, SignalError> {
    let mut clip = load_clip(&entry.path, expected_rate)?;
    clip.speaker_id = entry.speaker_id.clone();
    clip.label = entry.label;
    clip.vowel = entry.vowel;
    Ok(clip)
}

/// Window and hop in samples for the given durations.
pub fn window_lengths(sample_rate: u32, win_s: f64, hop_s: f64) -> Result<(usize, usize), SignalError> {
    if !(hop_s > 0.0 && win_s > hop_s) {
        return Err(SignalError::InvalidWindow(format!(
            "need win_s > hop_s > 0, got win {win_s} hop {hop_s}"
        )));
    }
    let win = (win_s * sample_rate as f64).round() as usize;
    let hop = (hop_s * sample_rate as f64).round() as usize;
    if hop == 0 || win <= hop {
        return Err(SignalError::InvalidWindow(format!(
            "window {win} / hop {hop} samples at {sample_rate} Hz"
        )));
    }
    Ok((win, hop))
}

/// Cut a clip into full windows of `win_s` at stride `hop_s`. A trailing
/// partial window is dropped.
pub fn segment_clip(clip: &AudioClip, win_s: f64, hop_s: f64) -> Result<Vec<Segment>, SignalError> {
    let (win, hop) = window_lengths(clip.sample_rate, win_s, hop_s)?;
    let n = clip.samples.len();
    if n < win {
        return Err(SignalError::TooShort { len: n, window: win });
    }
    let source = Arc::new(SourceInfo {
        name: clip.name.clone(),
        speaker_id: clip.speaker_id.clone(),
        label: clip.label,
        vowel: clip.vowel,
        sample_rate: clip.sample_rate,
        clip_rms: clip.rms(),
    });
    let count = (n - win) / hop + 1;
    let duration_s = win as f64 / clip.sample_rate as f64;
    Ok((0..count)
        .map(|k| {
            let start = k * hop;
            Segment {
                samples: clip.samples[start..start + win].to_vec(),
                start_index: start,
                duration_s,
                index: k,
                source: Arc::clone(&source),
            }
        })
        .collect())
}

/// Energy and zero-crossing gate against silence, breath and noise.
pub fn is_voiced(seg: &Segment, energy_floor: f64, zcr_ceiling: f64) -> bool {
    let e = rms(&seg.samples);
    e > 0.0 && e >= energy_floor * seg.source.clip_rms && zero_crossing_rate(&seg.samples) <= zcr_ceiling
}
