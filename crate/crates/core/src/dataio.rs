//! Recordings, the CSV formats they live in, sliding-window segmentation and
//! trial-level train/test splitting with cross-validation folds.
//!
//! Recording CSV: header `t,ch01,...,ch24`, `t` in seconds at 0.1 s steps.
//! Manifest CSV: header `file,subject,trial,class`, `file` relative to the
//! manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seeding;

pub const N_CHANNELS: usize = 24;
pub const SAMPLE_RATE_HZ: f64 = 10.0;
pub const WINDOW_LEN: usize = 300;
pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const MANIFEST_FILE: &str = "manifest.csv";

const MANIFEST_HEADER: [&str; 4] = ["file", "subject", "trial", "class"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stimulus {
    Cold,
    Heat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Intensity {
    /// Threshold test.
    Low,
    /// Tolerance test.
    High,
}

/// The four labels, with stable integer codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PainClass {
    LowCold = 0,
    LowHeat = 1,
    HighCold = 2,
    HighHeat = 3,
}

impl PainClass {
    pub const ALL: [PainClass; 4] = [
        PainClass::LowCold,
        PainClass::LowHeat,
        PainClass::HighCold,
        PainClass::HighHeat,
    ];
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL.get(code).copied().ok_or(Error::ClassOutOfRange(code))
    }

    pub fn from_parts(intensity: Intensity, stimulus: Stimulus) -> Self {
        match (intensity, stimulus) {
            (Intensity::Low, Stimulus::Cold) => PainClass::LowCold,
            (Intensity::Low, Stimulus::Heat) => PainClass::LowHeat,
            (Intensity::High, Stimulus::Cold) => PainClass::HighCold,
            (Intensity::High, Stimulus::Heat) => PainClass::HighHeat,
        }
    }

    pub fn intensity(self) -> Intensity {
        match self {
            PainClass::LowCold | PainClass::LowHeat => Intensity::Low,
            PainClass::HighCold | PainClass::HighHeat => Intensity::High,
        }
    }

    pub fn stimulus(self) -> Stimulus {
        match self {
            PainClass::LowCold | PainClass::HighCold => Stimulus::Cold,
            PainClass::LowHeat | PainClass::HighHeat => Stimulus::Heat,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PainClass::LowCold => "low_cold",
            PainClass::LowHeat => "low_heat",
            PainClass::HighCold => "high_cold",
            PainClass::HighHeat => "high_heat",
        }
    }
}

impl fmt::Display for PainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PainClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

/// One trial's HbO time series, `T × 24`, sampled at 10 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub trial_id: String,
    pub channels: Tensor,
    pub sample_rate: f64,
    pub label: PainClass,
}

impl Recording {
    pub fn new(subject_id: impl Into<String>, trial_id: impl Into<String>, channels: Tensor, label: PainClass) -> Result<Self> {
        if channels.ndim() != 2 || channels.shape()[1] != N_CHANNELS {
            return Err(Error::ShapeMismatch {
                op: "recording channels",
                left: channels.shape().to_vec(),
                right: vec![0, N_CHANNELS],
            });
        }
        Ok(Self {
            subject_id: subject_id.into(),
            trial_id: trial_id.into(),
            channels,
            sample_rate: SAMPLE_RATE_HZ,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub subject: String,
    pub trial: String,
    pub class: PainClass,
}

fn recording_header() -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=N_CHANNELS).map(|c| format!("ch{c:02}")))
        .collect()
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        column,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, 0, e.to_string())
}

/// Reads a recording CSV into a `T × 24` tensor, validating the header, the
/// column count of every row, numeric cells, and a monotone 10 Hz time column.
pub fn read_recording_csv(path: &Path) -> Result<Tensor> {
    let mut reader = open_csv(path)?;
    let expected = recording_header();
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut prev_t: Option<f64> = None;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(path, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(parse_err(
                path,
                line,
                record.len().min(expected.len()) + 1,
                format!(
                    "expected {} columns (t + {N_CHANNELS} channels), found {}",
                    expected.len(),
                    record.len()
                ),
            ));
        }
        if first {
            first = false;
            for (col, (got, want)) in record.iter().zip(&expected).enumerate() {
                if got.trim() != want {
                    return Err(parse_err(path, line, col + 1, format!("header `{got}`, expected `{want}`")));
                }
            }
            continue;
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, col + 1, format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, col + 1, format!("non-finite cell `{cell}`")));
            }
            if col == 0 {
                if let Some(p) = prev_t {
                    let dt = v - p;
                    if dt <= 0.0 {
                        return Err(parse_err(path, line, 1, "time column is not increasing"));
                    }
                    if (dt - 1.0 / SAMPLE_RATE_HZ).abs() > 1e-6 {
                        return Err(parse_err(path, line, 1, format!("time step {dt} s, expected 0.1 s")));
                    }
                }
                prev_t = Some(v);
            } else {
                values.push(v);
            }
        }
        rows += 1;
    }
    if first {
        return Err(parse_err(path, 1, 1, "missing header"));
    }
    if rows == 0 {
        return Err(Error::Empty("recording"));
    }
    Tensor::new(vec![rows, N_CHANNELS], values)
}

/// Writes a `T × 24` tensor as a recording CSV. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_recording_csv(path: &Path, channels: &Tensor) -> Result<()> {
    let mut out = String::with_capacity(channels.len() * 20);
    out.push_str(&recording_header().join(","));
    out.push('\n');
    for (i, row) in channels.data().chunks_exact(N_CHANNELS).enumerate() {
        out.push_str(&format!("{:.1}", i as f64 / SAMPLE_RATE_HZ));
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = open_csv(path)?;
    let mut entries = Vec::new();
    let mut header_seen = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(path, line, rec.len() + 1, format!("expected 4 columns, found {}", rec.len())));
        }
        if !header_seen {
            header_seen = true;
            for (col, (got, want)) in rec.iter().zip(MANIFEST_HEADER).enumerate() {
                if got.trim() != want {
                    return Err(parse_err(path, line, col + 1, format!("header `{got}`, expected `{want}`")));
                }
            }
            continue;
        }
        let class = rec[3]
            .parse()
            .map_err(|_| parse_err(path, line, 4, format!("unknown class `{}`", &rec[3])))?;
        entries.push(ManifestEntry {
            file: rec[0].trim().to_string(),
            subject: rec[1].trim().to_string(),
            trial: rec[2].trim().to_string(),
            class,
        });
    }
    if !header_seen {
        return Err(parse_err(path, 1, 1, "missing header"));
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for e in entries {
        out.push_str(&format!("{},{},{},{}\n", e.file, e.subject, e.trial, e.class));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads every recording listed in a manifest. `manifest_path` may also be a
/// directory containing `manifest.csv`.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Recording>> {
    let manifest_path = resolve_manifest(manifest_path);
    let entries = read_manifest(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let path = base.join(&e.file);
            let channels = read_recording_csv(&path)?;
            Recording::new(e.subject.clone(), e.trial.clone(), channels, e.class)
        })
        .collect()
}

pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Writes recordings as `<subject>_<trial>.csv` plus `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, recordings: &[Recording]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let file = format!("{}_{}.csv", rec.subject_id, rec.trial_id);
        write_recording_csv(&dir.join(&file), &rec.channels)?;
        entries.push(ManifestEntry {
            file,
            subject: rec.subject_id.clone(),
            trial: rec.trial_id.clone(),
            class: rec.label,
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Z-scores every channel of a recording in place. Off by default; the
/// models are meant to see raw HbO.
pub fn standardize_channels(rec: &mut Recording) {
    let t = rec.len();
    let data = rec.channels.data_mut();
    for ch in 0..N_CHANNELS {
        let mean = (0..t).map(|i| data[i * N_CHANNELS + ch]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (data[i * N_CHANNELS + ch] - mean).powi(2)).sum::<f64>() / t as f64;
        let sd = var.sqrt();
        for i in 0..t {
            let v = &mut data[i * N_CHANNELS + ch];
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
}

/// Window stride for a given overlap: `round(window · (1 − overlap))`.
pub fn stride_for(window: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if window == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    Ok(((window as f64 * (1.0 - overlap)).round() as usize).max(1))
}

/// Number of windows a recording of `len` samples yields.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub data: Tensor,
    pub label: PainClass,
    pub start: usize,
}

/// Cuts a recording into fixed-length windows. Trailing samples that do not
/// fill a window are dropped.
pub fn window_segments(rec: &Recording, window: usize, overlap: f64) -> Result<Vec<Window>> {
    let stride = stride_for(window, overlap)?;
    let len = rec.len();
    if len < window {
        return Err(Error::RecordingTooShort { len, window });
    }
    let width = rec.channels.row_len();
    Ok((0..window_count(len, window, stride))
        .map(|k| {
            let start = k * stride;
            let data = rec.channels.data()[start * width..(start + window) * width].to_vec();
            Window {
                data: Tensor::new(vec![window, width], data).expect("window slice shape"),
                label: rec.label,
                start,
            }
        })
        .collect())
}

/// Reverses the row (time) order of a window; channels keep their order.
pub fn reverse_time(window: &Tensor) -> Tensor {
    let rows = window.rows();
    let mut out = Vec::with_capacity(window.len());
    for i in (0..rows).rev() {
        out.extend_from_slice(window.row(i));
    }
    Tensor::new(window.shape().to_vec(), out).expect("same shape")
}

/// Row-major flattening of a `T × C` window into a `T·C` vector.
pub fn to_mlp_matrix(window: &Tensor) -> Tensor {
    Tensor::vector(window.data().to_vec()).expect("nonempty window")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct WindowOrigin {
    pub subject_id: String,
    pub trial_id: String,
    pub start: usize,
}

impl WindowOrigin {
    pub fn trial_key(&self) -> (&str, &str) {
        (&self.subject_id, &self.trial_id)
    }
}

#[derive(Clone, Debug)]
pub struct LabeledWindow {
    pub data: Tensor,
    pub label: PainClass,
    pub origin: WindowOrigin,
}

/// Segments every recording with the same window and overlap.
pub fn segment_all(recordings: &[Recording], window: usize, overlap: f64) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for rec in recordings {
        for w in window_segments(rec, window, overlap)? {
            out.push(LabeledWindow {
                data: w.data,
                label: w.label,
                origin: WindowOrigin {
                    subject_id: rec.subject_id.clone(),
                    trial_id: rec.trial_id.clone(),
                    start: w.start,
                },
            });
        }
    }
    Ok(out)
}

/// Windows with their train/test tags and cross-validation folds.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub windows: Vec<Tensor>,
    pub labels: Vec<PainClass>,
    pub origins: Vec<WindowOrigin>,
    pub split: Vec<SplitTag>,
    /// Fold of each train window; `None` for test windows.
    pub fold: Vec<Option<usize>>,
    pub n_folds: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_where(|i| self.split[i] == SplitTag::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_where(|i| self.split[i] == SplitTag::Test)
    }

    pub fn fold_indices(&self, k: usize) -> Vec<usize> {
        self.indices_where(|i| self.fold[i] == Some(k))
    }

    /// Training and validation indices for cross-validation fold `k`.
    pub fn cv_split(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self.indices_where(|i| matches!(self.fold[i], Some(f) if f != k));
        (train, self.fold_indices(k))
    }

    fn indices_where(&self, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(i)).collect()
    }
}

/// Assigns whole trials to train or test and deals the train trials into
/// folds.
///
/// Trials are sorted by (subject, trial), shuffled with the seeded stream,
/// and the shuffled prefix whose window share is closest to `train_fraction`
/// becomes the training portion. Train trials are then dealt round-robin
/// into `n_folds` folds.
pub fn split_and_fold(windows: Vec<LabeledWindow>, train_fraction: f64, n_folds: usize, seed: u64) -> Result<WindowSet> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1], got {train_fraction}")));
    }
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if windows.is_empty() {
        return Err(Error::Empty("window list"));
    }
    let mut by_trial: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_trial
            .entry((w.origin.subject_id.clone(), w.origin.trial_id.clone()))
            .or_default()
            .push(i);
    }
    let mut trials: Vec<Vec<usize>> = by_trial.into_values().collect();
    trials.shuffle(&mut seeding::stream(seed, &[seeding::TAG_SPLIT]));

    let total = windows.len() as f64;
    let mut best_k = 0;
    let mut best_gap = f64::INFINITY;
    let mut cum = 0usize;
    for k in 0..=trials.len() {
        let gap = (cum as f64 / total - train_fraction).abs();
        if gap < best_gap {
            best_gap = gap;
            best_k = k;
        }
        if k < trials.len() {
            cum += trials[k].len();
        }
    }
    if best_k < n_folds {
        return Err(Error::TooFewTrials {
            available: best_k,
            required: n_folds,
        });
    }

    let n = windows.len();
    let mut split = vec![SplitTag::Test; n];
    let mut fold = vec![None; n];
    for (pos, members) in trials.iter().enumerate().take(best_k) {
        for &i in members {
            split[i] = SplitTag::Train;
            fold[i] = Some(pos % n_folds);
        }
    }

    let mut set = WindowSet {
        windows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        origins: Vec::with_capacity(n),
        split,
        fold,
        n_folds,
    };
    for w in windows {
        set.windows.push(w.data);
        set.labels.push(w.label);
        set.origins.push(w.origin);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ramp_recording(subject: &str, trial: &str, t: usize, label: PainClass) -> Recording {
        let data = (0..t * N_CHANNELS).map(|i| i as f64 * 0.01).collect();
        Recording::new(subject, trial, Tensor::new(vec![t, N_CHANNELS], data).unwrap(), label).unwrap()
    }

    #[test]
    fn class_codes_are_stable() {
        let codes: Vec<usize> = PainClass::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3]);
        assert_eq!("high_heat".parse::<PainClass>().unwrap(), PainClass::HighHeat);
        assert!(matches!("medium".parse::<PainClass>(), Err(Error::UnknownClass(_))));
        for c in PainClass::ALL {
            assert_eq!(PainClass::from_parts(c.intensity(), c.stimulus()), c);
        }
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let rec = ramp_recording("s", "t", 300, PainClass::LowCold);
        let w = window_segments(&rec, 300, 0.5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start, 0);
        assert_eq!(w[0].data.shape(), &[300, 24]);
    }

    #[test]
    fn three_thousand_samples_give_nineteen_windows() {
        let rec = ramp_recording("s", "t", 3000, PainClass::HighHeat);
        let w = window_segments(&rec, 300, 0.5).unwrap();
        let starts: Vec<usize> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, (0..19).map(|k| k * 150).collect::<Vec<_>>());
        assert!(w.iter().all(|w| w.label == PainClass::HighHeat));
        assert_eq!(w[3].data.row(0), rec.channels.row(450));
    }

    #[test]
    fn short_recording_is_rejected() {
        let rec = ramp_recording("s", "t", 299, PainClass::LowCold);
        assert!(matches!(
            window_segments(&rec, 300, 0.5),
            Err(Error::RecordingTooShort { len: 299, window: 300 })
        ));
        assert!(window_segments(&ramp_recording("s", "t", 400, PainClass::LowCold), 300, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 1usize..2000, window in 1usize..400, overlap in 0.0f64..0.95) {
            prop_assume!(t >= window);
            let rec = ramp_recording("s", "t", t, PainClass::LowCold);
            let stride = stride_for(window, overlap).unwrap();
            let w = window_segments(&rec, window, overlap).unwrap();
            prop_assert_eq!(w.len(), (t - window) / stride + 1);
            prop_assert!(w.iter().all(|w| w.start + window <= t));
        }

        #[test]
        fn reverse_time_is_an_involution(rows in 1usize..20, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * 3).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64).collect();
            let w = Tensor::new(vec![rows, 3], data).unwrap();
            let r = reverse_time(&w);
            prop_assert_eq!(reverse_time(&r), w.clone());
            let mut a: Vec<Vec<u64>> = (0..rows).map(|i| w.row(i).iter().map(|v| v.to_bits()).collect()).collect();
            let mut b: Vec<Vec<u64>> = (0..rows).map(|i| r.row(i).iter().map(|v| v.to_bits()).collect()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn reverse_time_examples() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let r = reverse_time(&w);
        assert_eq!(r.data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        let flat = Tensor::from_rows(&[vec![7.0, 8.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(reverse_time(&flat), flat);
    }

    #[test]
    fn mlp_flattening_is_row_major() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let flat = to_mlp_matrix(&w);
        assert_eq!(flat.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flat.clone().reshape(vec![2, 2]).unwrap(), w);
        let big = Tensor::zeros(&[WINDOW_LEN, N_CHANNELS]);
        assert_eq!(to_mlp_matrix(&big).len(), 7200);
    }

    fn windows_for(n_trials: usize, per_trial: usize) -> Vec<LabeledWindow> {
        (0..n_trials)
            .flat_map(|t| {
                (0..per_trial).map(move |k| LabeledWindow {
                    data: Tensor::zeros(&[2, 2]),
                    label: PainClass::ALL[t % 4],
                    origin: WindowOrigin {
                        subject_id: format!("s{:02}", t / 4),
                        trial_id: format!("t{:02}", t % 4),
                        start: k,
                    },
                })
            })
            .collect()
    }

    #[test]
    fn seventy_percent_of_ten_trials() {
        let set = split_and_fold(windows_for(10, 5), 0.7, 7, 1).unwrap();
        let train_trials: BTreeSet<_> = set
            .train_indices()
            .iter()
            .map(|&i| set.origins[i].trial_key())
            .collect();
        let test_trials: BTreeSet<_> = set.test_indices().iter().map(|&i| set.origins[i].trial_key()).collect();
        assert_eq!(train_trials.len(), 7);
        assert_eq!(test_trials.len(), 3);
    }

    #[test]
    fn too_few_trials_for_folds() {
        assert!(matches!(
            split_and_fold(windows_for(10, 5), 0.7, 10, 1),
            Err(Error::TooFewTrials { available: 7, required: 10 })
        ));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = split_and_fold(windows_for(40, 3), 0.7, 5, 9).unwrap();
        let b = split_and_fold(windows_for(40, 3), 0.7, 5, 9).unwrap();
        let c = split_and_fold(windows_for(40, 3), 0.7, 5, 10).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a.fold, b.fold);
        assert!(a.split != c.split || a.fold != c.fold);
    }

    #[test]
    fn synthetic_sized_split_is_balanced() {
        // 216 trials of 19 windows each, the default synthetic dataset shape
        let set = split_and_fold(windows_for(216, 19), 0.7, 10, 7).unwrap();
        let share = set.train_indices().len() as f64 / set.len() as f64;
        assert!((share - 0.7).abs() < 0.05, "{share}");
        for k in 0..10 {
            assert!(!set.fold_indices(k).is_empty());
        }
    }

    proptest! {
        #[test]
        fn split_invariants(n_trials in 12usize..60, per_trial in 1usize..6, seed in any::<u64>(), folds in 2usize..6) {
            let set = split_and_fold(windows_for(n_trials, per_trial), 0.7, folds, seed).unwrap();
            let train: BTreeSet<_> = set.train_indices().iter().map(|&i| set.origins[i].trial_key()).collect();
            let test: BTreeSet<_> = set.test_indices().iter().map(|&i| set.origins[i].trial_key()).collect();
            prop_assert!(train.is_disjoint(&test));
            let mut union: Vec<usize> = (0..folds).flat_map(|k| set.fold_indices(k)).collect();
            union.sort();
            prop_assert_eq!(union, set.train_indices());
            for k in 0..folds {
                prop_assert!(!set.fold_indices(k).is_empty());
                let (tr, va) = set.cv_split(k);
                prop_assert_eq!(tr.len() + va.len(), set.train_indices().len());
            }
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            ramp_recording("s01", "t01", 12, PainClass::LowCold),
            ramp_recording("s02", "t05", 12, PainClass::HighHeat),
        ];
        let manifest = write_dataset(dir.path(), &recs).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].label.code(), 0);
        assert_eq!(loaded[1].label.code(), 3);
        assert_eq!(loaded, recs);
        assert_eq!(load_dataset(dir.path()).unwrap().len(), 2);

        // 23 data columns
        let short = dir.path().join("short.csv");
        let mut text = String::from("t");
        for c in 1..=23 {
            text.push_str(&format!(",ch{c:02}"));
        }
        text.push('\n');
        fs::write(&short, text).unwrap();
        let err = read_recording_csv(&short).unwrap_err();
        assert!(err.to_string().contains("columns"), "{err}");

        // missing file named in the error
        fs::write(
            dir.path().join("m2.csv"),
            "file,subject,trial,class\nabsent.csv,s1,t1,low_cold\n",
        )
        .unwrap();
        let err = load_dataset(&dir.path().join("m2.csv")).unwrap_err();
        assert!(matches!(&err, Error::MissingFile(p) if p.ends_with("absent.csv")), "{err}");

        // unknown class
        fs::write(
            dir.path().join("m3.csv"),
            "file,subject,trial,class\ns01_t01.csv,s1,t1,lukewarm\n",
        )
        .unwrap();
        let err = load_dataset(&dir.path().join("m3.csv")).unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 2, column: 4, .. }), "{err}");

        // non-numeric cell with location
        let good = fs::read_to_string(dir.path().join("s01_t01.csv")).unwrap();
        let mut bad: Vec<String> = good.lines().map(String::from).collect();
        let mut cells: Vec<&str> = bad[2].split(',').collect();
        cells[3] = "abc";
        bad[2] = cells.join(",");
        fs::write(dir.path().join("bad.csv"), bad.join("\n")).unwrap();
        let err = read_recording_csv(&dir.path().join("bad.csv")).unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 3, column: 4, .. }), "{err}");

        // time column going backwards
        let mut lines: Vec<&str> = good.lines().collect();
        lines.swap(2, 3);
        fs::write(dir.path().join("back.csv"), lines.join("\n")).unwrap();
        assert!(read_recording_csv(&dir.path().join("back.csv")).is_err());
    }

    #[test]
    fn standardization_zero_mean_unit_variance() {
        let mut rec = ramp_recording("s", "t", 50, PainClass::LowCold);
        standardize_channels(&mut rec);
        let col: Vec<f64> = (0..50).map(|i| rec.channels.row(i)[5]).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
