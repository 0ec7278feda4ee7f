//! Synthetic 24-channel HbO recordings that follow the thermal QST session
//! timeline: an initial rest, the threshold (low pain) test, a two-minute
//! break, then the tolerance (high pain) test. Each test runs its cold and
//! heat blocks in a seeded random order, each block being consecutive trials
//! separated by 60 s rests.
//!
//! A trial's clean signal is the stimulus boxcar convolved with a
//! double-gamma haemodynamic response, scaled by the class amplitude, the
//! channel gain, and (for heat) a hemispheric gain on channels 1–12. Pink
//! noise, Mayer/respiratory/cardiac oscillations and a linear drift are added
//! on top.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{self, Entry};
use crate::dataio::{Intensity, ManifestEntry, PainClass, Recording, Stimulus, N_CHANNELS, SAMPLE_RATE_HZ, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seeding;

pub const INITIAL_REST_S: f64 = 60.0;
pub const INTER_TRIAL_REST_S: f64 = 60.0;
pub const INTER_TEST_REST_S: f64 = 120.0;

pub const MAYER_HZ: f64 = 0.1;
pub const RESPIRATION_HZ: f64 = 0.3;
pub const CARDIAC_HZ: f64 = 1.2;

/// Gamma shapes of the response peak and undershoot, and their ratio.
const HRF_PEAK_SHAPE: i32 = 6;
const HRF_UNDERSHOOT_SHAPE: i32 = 16;
const HRF_UNDERSHOOT_RATIO: f64 = 1.0 / 6.0;
const HRF_LENGTH_S: f64 = 32.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub pink_sd: f64,
    pub mayer_amp: f64,
    pub resp_amp: f64,
    pub cardiac_amp: f64,
    /// Per-channel drift slopes are drawn from `±drift_slope` (units per second).
    pub drift_slope: f64,
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            pink_sd: 0.0,
            mayer_amp: 0.0,
            resp_amp: 0.0,
            cardiac_amp: 0.0,
            drift_slope: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pink_sd: 0.3,
            mayer_amp: 0.1,
            resp_amp: 0.05,
            cardiac_amp: 0.05,
            drift_slope: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_class: usize,
    pub trial_seconds: usize,
    /// Peak response per class, indexed by class code.
    pub response_amplitudes: [f64; 4],
    /// Extra gain on channels 1–12 for heat stimuli.
    pub heat_spatial_gain: f64,
    pub noise: NoiseConfig,
    pub channel_gains: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 18,
            trials_per_class: 3,
            trial_seconds: 300,
            response_amplitudes: [0.5, 0.5, 1.0, 1.0],
            heat_spatial_gain: 1.3,
            noise: NoiseConfig::default(),
            channel_gains: vec![1.0; N_CHANNELS],
            seed: 7,
        }
    }
}

/// Configuration keys accepted by [`SynthConfig::set`], with descriptions.
pub const SYNTH_KEYS: &[(&str, &str)] = &[
    ("n_subjects", "number of simulated subjects"),
    ("trials_per_class", "consecutive trials per stimulus block"),
    ("trial_seconds", "duration of one trial (and one recording) in seconds"),
    ("amp_low_cold", "peak HbO response for low_cold"),
    ("amp_low_heat", "peak HbO response for low_heat"),
    ("amp_high_cold", "peak HbO response for high_cold"),
    ("amp_high_heat", "peak HbO response for high_heat"),
    ("heat_spatial_gain", "gain on channels 1-12 for heat stimuli"),
    ("pink_sd", "standard deviation of per-channel 1/f noise"),
    ("mayer_amp", "amplitude of the 0.1 Hz Mayer wave"),
    ("resp_amp", "amplitude of the 0.3 Hz respiratory oscillation"),
    ("cardiac_amp", "amplitude of the 1.2 Hz cardiac oscillation"),
    ("drift_slope", "maximum per-channel linear drift per second"),
    ("channel_gains", "24 comma-separated gains, or one value for all channels"),
    ("seed", "random seed"),
];

impl SynthConfig {
    pub fn samples_per_trial(&self) -> usize {
        (self.trial_seconds as f64 * SAMPLE_RATE_HZ) as usize
    }

    pub fn amplitude(&self, class: PainClass) -> f64 {
        self.response_amplitudes[class.code()]
    }

    pub fn n_recordings(&self) -> usize {
        self.n_subjects * self.trials_per_class * PainClass::COUNT
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.trials_per_class == 0 {
            return bad("n_subjects and trials_per_class must be positive".into());
        }
        if self.samples_per_trial() < WINDOW_LEN {
            return bad(format!(
                "trial_seconds = {} gives fewer than {WINDOW_LEN} samples",
                self.trial_seconds
            ));
        }
        if self.response_amplitudes.iter().any(|a| !a.is_finite()) {
            return bad("response amplitudes must be finite".into());
        }
        if self.amplitude(PainClass::HighCold) <= self.amplitude(PainClass::LowCold)
            || self.amplitude(PainClass::HighHeat) <= self.amplitude(PainClass::LowHeat)
        {
            return bad("high-pain amplitudes must exceed the matching low-pain amplitudes".into());
        }
        let n = &self.noise;
        if [n.pink_sd, n.mayer_amp, n.resp_amp, n.cardiac_amp, n.drift_slope]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("noise amplitudes must be finite and nonnegative".into());
        }
        if !(self.heat_spatial_gain.is_finite() && self.heat_spatial_gain > 0.0) {
            return bad("heat_spatial_gain must be positive".into());
        }
        if self.channel_gains.len() != N_CHANNELS || self.channel_gains.iter().any(|g| !g.is_finite()) {
            return bad(format!("channel_gains must hold {N_CHANNELS} finite values"));
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "n_subjects" => self.n_subjects = config::value(key, raw)?,
            "trials_per_class" => self.trials_per_class = config::value(key, raw)?,
            "trial_seconds" => self.trial_seconds = config::value(key, raw)?,
            "amp_low_cold" => self.response_amplitudes[0] = config::value(key, raw)?,
            "amp_low_heat" => self.response_amplitudes[1] = config::value(key, raw)?,
            "amp_high_cold" => self.response_amplitudes[2] = config::value(key, raw)?,
            "amp_high_heat" => self.response_amplitudes[3] = config::value(key, raw)?,
            "heat_spatial_gain" => self.heat_spatial_gain = config::value(key, raw)?,
            "pink_sd" => self.noise.pink_sd = config::value(key, raw)?,
            "mayer_amp" => self.noise.mayer_amp = config::value(key, raw)?,
            "resp_amp" => self.noise.resp_amp = config::value(key, raw)?,
            "cardiac_amp" => self.noise.cardiac_amp = config::value(key, raw)?,
            "drift_slope" => self.noise.drift_slope = config::value(key, raw)?,
            "channel_gains" => {
                let gains: Vec<f64> = config::list_value(key, raw)?;
                self.channel_gains = match gains.len() {
                    1 => vec![gains[0]; N_CHANNELS],
                    N_CHANNELS => gains,
                    n => {
                        return Err(Error::Config(format!(
                            "channel_gains needs 1 or {N_CHANNELS} values, got {n}"
                        )))
                    }
                };
            }
            "seed" => self.seed = config::value(key, raw)?,
            other => return Err(Error::Config(format!("unknown synthesis key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of a key, formatted as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "n_subjects" => self.n_subjects.to_string(),
            "trials_per_class" => self.trials_per_class.to_string(),
            "trial_seconds" => self.trial_seconds.to_string(),
            "amp_low_cold" => self.response_amplitudes[0].to_string(),
            "amp_low_heat" => self.response_amplitudes[1].to_string(),
            "amp_high_cold" => self.response_amplitudes[2].to_string(),
            "amp_high_heat" => self.response_amplitudes[3].to_string(),
            "heat_spatial_gain" => self.heat_spatial_gain.to_string(),
            "pink_sd" => self.noise.pink_sd.to_string(),
            "mayer_amp" => self.noise.mayer_amp.to_string(),
            "resp_amp" => self.noise.resp_amp.to_string(),
            "cardiac_amp" => self.noise.cardiac_amp.to_string(),
            "drift_slope" => self.noise.drift_slope.to_string(),
            "channel_gains" => {
                if self.channel_gains.windows(2).all(|w| w[0] == w[1]) {
                    self.channel_gains[0].to_string()
                } else {
                    self.channel_gains.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
                }
            }
            "seed" => self.seed.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Builds a config from parsed entries, rejecting unknown keys.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = Self::default();
        for e in entries {
            cfg.set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusEvent {
    pub onset: f64,
    pub duration: f64,
    pub stimulus: Stimulus,
    pub intensity: Intensity,
}

impl StimulusEvent {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn class(&self) -> PainClass {
        PainClass::from_parts(self.intensity, self.stimulus)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolTimeline {
    pub events: Vec<StimulusEvent>,
    pub total_duration: f64,
}

impl ProtocolTimeline {
    /// Checks ordering, non-overlap and the initial rest.
    pub fn validate(&self) -> Result<()> {
        let first = self.events.first().ok_or(Error::Empty("timeline"))?;
        if first.onset < INITIAL_REST_S {
            return Err(Error::Config(format!("first onset {} s precedes the initial rest", first.onset)));
        }
        for pair in self.events.windows(2) {
            if pair[1].onset < pair[0].end() {
                return Err(Error::Config(format!("events at {} s and {} s overlap", pair[0].onset, pair[1].onset)));
            }
        }
        if self.total_duration < self.events.last().map_or(0.0, StimulusEvent::end) {
            return Err(Error::Config("total duration shorter than the events".into()));
        }
        Ok(())
    }
}

/// Lays out one subject's session. The cold/heat order of each test is drawn
/// from `rng`.
pub fn build_timeline(cfg: &SynthConfig, rng: &mut impl Rng) -> ProtocolTimeline {
    let duration = cfg.trial_seconds as f64;
    let mut events = Vec::with_capacity(cfg.trials_per_class * PainClass::COUNT);
    let mut t = INITIAL_REST_S;
    for (test_idx, intensity) in [Intensity::Low, Intensity::High].into_iter().enumerate() {
        if test_idx > 0 {
            t += INTER_TEST_REST_S;
        }
        let order = if rng.random_bool(0.5) {
            [Stimulus::Cold, Stimulus::Heat]
        } else {
            [Stimulus::Heat, Stimulus::Cold]
        };
        for (k, stimulus) in order
            .into_iter()
            .flat_map(|s| std::iter::repeat_n(s, cfg.trials_per_class))
            .enumerate()
        {
            if k > 0 {
                t += INTER_TRIAL_REST_S;
            }
            events.push(StimulusEvent {
                onset: t,
                duration,
                stimulus,
                intensity,
            });
            t += duration;
        }
    }
    ProtocolTimeline {
        events,
        total_duration: t,
    }
}

fn gamma_pdf(t: f64, shape: i32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let norm: f64 = (1..shape).map(f64::from).product();
    t.powi(shape - 1) * (-t).exp() / norm
}

/// Double-gamma haemodynamic response sampled at 10 Hz over 32 s.
pub fn hrf_kernel() -> Vec<f64> {
    let n = (HRF_LENGTH_S * SAMPLE_RATE_HZ) as usize;
    (0..=n)
        .map(|j| {
            let t = j as f64 / SAMPLE_RATE_HZ;
            gamma_pdf(t, HRF_PEAK_SHAPE) - HRF_UNDERSHOOT_RATIO * gamma_pdf(t, HRF_UNDERSHOOT_SHAPE)
        })
        .collect()
}

/// Causal convolution truncated to the signal length.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..signal.len())
        .map(|n| {
            (0..=n.min(kernel.len() - 1))
                .map(|j| kernel[j] * signal[n - j])
                .sum()
        })
        .collect()
}

/// Response of `n` samples to a boxcar covering `[on, on + len)`, scaled to
/// a peak of 1.
pub fn boxcar_response(n: usize, on: usize, len: usize) -> Vec<f64> {
    let boxcar: Vec<f64> = (0..n).map(|i| if i >= on && i < on + len { 1.0 } else { 0.0 }).collect();
    let mut r = convolve(&boxcar, &hrf_kernel());
    let peak = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        for v in &mut r {
            *v /= peak;
        }
    }
    r
}

/// Unit-variance noise with power spectral density proportional to 1/f.
pub fn pink_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let freq_bin = k.min(n - k) as f64;
        *v /= freq_bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in &mut out {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
    out
}

/// Spatial gain of a channel for a class.
pub fn spatial_gain(cfg: &SynthConfig, class: PainClass, channel: usize) -> f64 {
    let hemi = if class.stimulus() == Stimulus::Heat && channel < N_CHANNELS / 2 {
        cfg.heat_spatial_gain
    } else {
        1.0
    };
    cfg.channel_gains[channel] * hemi
}

/// Samples one trial's recording. The stimulus covers the whole trial.
pub fn generate_trial(cfg: &SynthConfig, event: &StimulusEvent, rng: &mut ChaCha8Rng) -> Tensor {
    let n = cfg.samples_per_trial();
    let class = event.class();
    let stim_len = (event.duration * SAMPLE_RATE_HZ).round() as usize;
    let response = boxcar_response(n, 0, stim_len.min(n));
    let amp = cfg.amplitude(class);
    let noise = &cfg.noise;

    let tau = std::f64::consts::TAU;
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..tau));
    let slopes: Vec<f64> = (0..N_CHANNELS)
        .map(|_| noise.drift_slope * rng.random_range(-1.0..1.0))
        .collect();
    let systemic: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ;
            noise.mayer_amp * (tau * MAYER_HZ * t + phases[0]).sin()
                + noise.resp_amp * (tau * RESPIRATION_HZ * t + phases[1]).sin()
                + noise.cardiac_amp * (tau * CARDIAC_HZ * t + phases[2]).sin()
        })
        .collect();

    let mut data = vec![0.0; n * N_CHANNELS];
    for ch in 0..N_CHANNELS {
        let gain = amp * spatial_gain(cfg, class, ch);
        let pink = if noise.pink_sd > 0.0 {
            pink_noise(n, rng)
        } else {
            vec![0.0; n]
        };
        for i in 0..n {
            let t = i as f64 / SAMPLE_RATE_HZ;
            data[i * N_CHANNELS + ch] =
                gain * response[i] + noise.pink_sd * pink[i] + systemic[i] + slopes[ch] * t;
        }
    }
    Tensor::new(vec![n, N_CHANNELS], data).expect("trial shape")
}

pub fn subject_id(subject: usize) -> String {
    format!("s{:02}", subject + 1)
}

pub fn trial_id(trial: usize) -> String {
    format!("t{:02}", trial + 1)
}

/// Generates every subject's session. Output is a pure function of `cfg`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Vec<Recording>, Vec<ManifestEntry>)> {
    cfg.validate()?;
    let timelines: Vec<ProtocolTimeline> = (0..cfg.n_subjects)
        .map(|s| build_timeline(cfg, &mut seeding::stream(cfg.seed, &[seeding::TAG_SUBJECT, s as u64])))
        .collect();
    let jobs: Vec<(usize, usize, &StimulusEvent)> = timelines
        .iter()
        .enumerate()
        .flat_map(|(s, tl)| tl.events.iter().enumerate().map(move |(k, e)| (s, k, e)))
        .collect();
    let recordings = jobs
        .par_iter()
        .map(|&(s, k, event)| {
            let mut rng = seeding::stream(cfg.seed, &[seeding::TAG_TRIAL, s as u64, k as u64]);
            let channels = generate_trial(cfg, event, &mut rng);
            Recording::new(subject_id(s), trial_id(k), channels, event.class())
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = recordings
        .iter()
        .map(|r| ManifestEntry {
            file: format!("{}_{}.csv", r.subject_id, r.trial_id),
            subject: r.subject_id.clone(),
            trial: r.trial_id.clone(),
            class: r.label,
        })
        .collect();
    Ok((recordings, manifest))
}
