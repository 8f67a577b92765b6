//! Synthetic complex-baseband GNSS records with one of six interference types.
//!
//! A record is `r = s + j + w`: a BPSK chip stream `s` well below the unit
//! power noise floor `w`, plus a jammer `j` scaled to a drawn jammer-to-signal
//! ratio. Every record is generated from its own random stream, so a dataset
//! can be produced in any order (or in parallel) with identical output.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::par::{try_map_range, Execution};
use crate::{derive_seed, seeded_stream};

const RECORD_DOMAIN: u64 = 0x7265_636f_7264;
const RECORD_MAGIC: &[u8; 4] = b"FRCB";
pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "record_id\tclass_index\tclass_name\tjsr_db\tfile";
const NARROWBAND_TAPS: usize = 1025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JammerClass {
    Am,
    Chirp,
    Fm,
    PulseDme,
    Narrowband,
    NoJam,
}

impl JammerClass {
    pub const ALL: [JammerClass; 6] = [
        JammerClass::Am,
        JammerClass::Chirp,
        JammerClass::Fm,
        JammerClass::PulseDme,
        JammerClass::Narrowband,
        JammerClass::NoJam,
    ];
    pub const COUNT: usize = 6;

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JammerClass::Am => "AM",
            JammerClass::Chirp => "Chirp",
            JammerClass::Fm => "FM",
            JammerClass::PulseDme => "PulseDME",
            JammerClass::Narrowband => "Narrowband",
            JammerClass::NoJam => "NoJam",
        }
    }
}

impl fmt::Display for JammerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JammerClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown jammer class {s:?}")))
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && (!positive || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{name} range [{}, {}] is invalid",
                self.lo, self.hi
            )))
        }
    }
}

/// Per-class waveform parameter ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    /// Carrier offsets are drawn from `±offset_fraction · sample_rate`.
    pub offset_fraction: f64,
    pub am_depth: Range,
    pub am_rate_hz: Range,
    pub chirp_bandwidth_hz: Range,
    pub chirp_period_s: Range,
    pub fm_deviation_hz: Range,
    pub fm_rate_hz: Range,
    pub dme_pair_rate_hz: Range,
    /// Half-power width of each Gaussian pulse.
    pub dme_pulse_width_s: f64,
    pub dme_pair_spacing_s: f64,
    pub narrowband_bandwidth_hz: Range,
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            offset_fraction: 0.02,
            am_depth: Range::new(0.1, 0.4),
            am_rate_hz: Range::new(1e3, 10e3),
            chirp_bandwidth_hz: Range::new(2e6, 8e6),
            chirp_period_s: Range::new(50e-6, 500e-6),
            fm_deviation_hz: Range::new(50e3, 500e3),
            fm_rate_hz: Range::new(5e3, 50e3),
            dme_pair_rate_hz: Range::new(1e3, 5e3),
            dme_pulse_width_s: 3.5e-6,
            dme_pair_spacing_s: 12e-6,
            narrowband_bandwidth_hz: Range::new(10e3, 100e3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalParams {
    pub sample_rate: f64,
    pub duration_samples: usize,
    pub snr_db: f64,
    pub jsr_db: Range,
    pub chip_rate: f64,
    pub class_params: ClassParams,
    pub seed: u64,
}

/// Samples needed for a 512-frame spectrogram with window 1024 and hop 256.
pub const DEFAULT_DURATION: usize = 512 * 256 + 1024;

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            sample_rate: 10e6,
            duration_samples: DEFAULT_DURATION,
            snr_db: -20.0,
            jsr_db: Range::new(10.0, 50.0),
            chip_rate: 1.023e6,
            class_params: ClassParams::default(),
            seed: 0,
        }
    }
}

impl SignalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample_rate {} must be positive", self.sample_rate)));
        }
        if self.duration_samples < 1024 {
            return Err(Error::Config(format!(
                "duration_samples {} must be at least 1024",
                self.duration_samples
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        self.jsr_db.check("jsr_db", true)?;
        if !(self.chip_rate > 0.0 && self.chip_rate.is_finite()) {
            return Err(Error::Config(format!("chip_rate {} must be positive", self.chip_rate)));
        }
        let p = &self.class_params;
        if !(0.0..0.5).contains(&p.offset_fraction) {
            return Err(Error::Config(format!(
                "offset_fraction {} must lie in [0, 0.5)",
                p.offset_fraction
            )));
        }
        p.am_depth.check("am_depth", false)?;
        if p.am_depth.lo < 0.0 || p.am_depth.hi > 1.0 {
            return Err(Error::Config("am_depth must lie within [0, 1]".into()));
        }
        p.am_rate_hz.check("am_rate_hz", true)?;
        p.chirp_bandwidth_hz.check("chirp_bandwidth_hz", true)?;
        if p.chirp_bandwidth_hz.hi >= self.sample_rate {
            return Err(Error::Config("chirp bandwidth must stay below the sample rate".into()));
        }
        p.chirp_period_s.check("chirp_period_s", true)?;
        p.fm_deviation_hz.check("fm_deviation_hz", true)?;
        p.fm_rate_hz.check("fm_rate_hz", true)?;
        p.dme_pair_rate_hz.check("dme_pair_rate_hz", true)?;
        p.narrowband_bandwidth_hz.check("narrowband_bandwidth_hz", true)?;
        if !(p.dme_pulse_width_s > 0.0 && p.dme_pair_spacing_s >= 0.0) {
            return Err(Error::Config("DME pulse width and spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Realized jammer parameters of one record.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Am { offset_hz: f64, depth: f64, rate_hz: f64, phase: f64 },
    /// Sawtooth up-sweep from `center - bandwidth/2` to `center + bandwidth/2`;
    /// at time `t` the sweep is `(t + start_s) mod period_s` into its period.
    Chirp { center_hz: f64, bandwidth_hz: f64, period_s: f64, start_s: f64 },
    Fm { offset_hz: f64, deviation_hz: f64, rate_hz: f64, phase: f64 },
    PulseDme { offset_hz: f64, pair_rate_hz: f64, first_pair_s: f64, sigma_s: f64, spacing_s: f64 },
    Narrowband { offset_hz: f64, bandwidth_hz: f64 },
    None,
}

/// Draws the waveform parameters of `class`.
pub fn draw_waveform(class: JammerClass, params: &SignalParams, rng: &mut ChaCha8Rng) -> Waveform {
    let fs = params.sample_rate;
    let p = &params.class_params;
    let max_offset = p.offset_fraction * fs;
    let offset = |rng: &mut ChaCha8Rng, limit: f64| {
        if limit > 0.0 {
            rng.random_range(-limit..limit)
        } else {
            0.0
        }
    };
    match class {
        JammerClass::Am => Waveform::Am {
            offset_hz: offset(rng, max_offset),
            depth: p.am_depth.sample(rng),
            rate_hz: p.am_rate_hz.sample(rng),
            phase: rng.random_range(0.0..TAU),
        },
        JammerClass::Chirp => {
            let bandwidth_hz = p.chirp_bandwidth_hz.sample(rng);
            let period_s = p.chirp_period_s.sample(rng);
            let room = (fs / 2.0 - bandwidth_hz / 2.0) * 0.9;
            Waveform::Chirp {
                center_hz: offset(rng, max_offset.min(room)),
                bandwidth_hz,
                period_s,
                start_s: rng.random_range(0.0..period_s),
            }
        }
        JammerClass::Fm => Waveform::Fm {
            offset_hz: offset(rng, max_offset),
            deviation_hz: p.fm_deviation_hz.sample(rng),
            rate_hz: p.fm_rate_hz.sample(rng),
            phase: rng.random_range(0.0..TAU),
        },
        JammerClass::PulseDme => {
            let pair_rate_hz = p.dme_pair_rate_hz.sample(rng);
            // Records shorter than one pair period still get a pair.
            let first_window = (1.0 / pair_rate_hz).min(params.duration_samples as f64 / fs);
            Waveform::PulseDme {
                offset_hz: offset(rng, max_offset),
                pair_rate_hz,
                first_pair_s: rng.random_range(0.0..first_window),
                sigma_s: p.dme_pulse_width_s / (2.0 * 2f64.ln().sqrt()),
                spacing_s: p.dme_pair_spacing_s,
            }
        }
        JammerClass::Narrowband => Waveform::Narrowband {
            offset_hz: offset(rng, max_offset),
            bandwidth_hz: p.narrowband_bandwidth_hz.sample(rng),
        },
        JammerClass::NoJam => Waveform::None,
    }
}

fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64
}

fn complex_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect()
}

/// Complex white noise band-limited to `bandwidth_hz` (two-sided) by a
/// Hamming-windowed sinc, applied as a circular convolution in the FFT domain.
fn narrowband_noise(len: usize, bandwidth_hz: f64, fs: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let mut signal = complex_noise(len, rng);
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    let taps = NARROWBAND_TAPS.min(len - (1 - len % 2));
    let half = (taps / 2) as isize;
    let cutoff = bandwidth_hz / fs;
    for k in -half..=half {
        let x = cutoff * k as f64;
        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let window = 0.54 + 0.46 * (PI * k as f64 / half.max(1) as f64).cos();
        kernel[k.rem_euclid(len as isize) as usize] = Complex64::new(sinc * window, 0.0);
    }
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    forward.process(&mut signal);
    forward.process(&mut kernel);
    for (s, h) in signal.iter_mut().zip(&kernel) {
        *s *= h;
    }
    inverse.process(&mut signal);
    signal
}

/// Unit-average-power jammer waveform (all zeros for [`Waveform::None`]).
/// `rng` is only consumed by waveforms with a random component.
pub fn jammer_waveform(waveform: &Waveform, length: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Complex64>> {
    if length == 0 {
        return Err(Error::Input("waveform length must be at least 1".into()));
    }
    let fs = sample_rate;
    let time = |i: usize| i as f64 / fs;
    let carrier = |f: f64, i: usize| Complex64::from_polar(1.0, TAU * ((f * time(i)) % 1.0));
    let mut out: Vec<Complex64> = match *waveform {
        Waveform::None => return Ok(vec![Complex64::new(0.0, 0.0); length]),
        Waveform::Am { offset_hz, depth, rate_hz, phase } => (0..length)
            .map(|i| carrier(offset_hz, i) * (1.0 + depth * (TAU * rate_hz * time(i) + phase).cos()))
            .collect(),
        Waveform::Chirp { center_hz, bandwidth_hz, period_s, start_s } => {
            let mut phase = 0.0f64;
            (0..length)
                .map(|i| {
                    let into = ((time(i) + start_s) % period_s) / period_s;
                    let freq = center_hz - bandwidth_hz / 2.0 + bandwidth_hz * into;
                    let z = Complex64::from_polar(1.0, phase);
                    phase = (phase + TAU * freq / fs) % TAU;
                    z
                })
                .collect()
        }
        Waveform::Fm { offset_hz, deviation_hz, rate_hz, phase } => (0..length)
            .map(|i| {
                let t = time(i);
                let swing = deviation_hz / rate_hz * (TAU * rate_hz * t + phase).sin();
                carrier(offset_hz, i) * Complex64::from_polar(1.0, swing)
            })
            .collect(),
        Waveform::PulseDme { offset_hz, pair_rate_hz, first_pair_s, sigma_s, spacing_s } => {
            let mut envelope = vec![0.0f64; length];
            let reach = 5.0 * sigma_s;
            let period = 1.0 / pair_rate_hz;
            let end = time(length);
            let mut pair = first_pair_s - period;
            while pair <= end + reach {
                for centre in [pair, pair + spacing_s] {
                    let lo = ((centre - reach) * fs).floor().max(0.0) as usize;
                    let hi = (((centre + reach) * fs).ceil().max(0.0) as usize).min(length);
                    for (i, e) in envelope.iter_mut().enumerate().take(hi).skip(lo) {
                        let d = (time(i) - centre) / sigma_s;
                        *e += (-0.5 * d * d).exp();
                    }
                }
                pair += period;
            }
            envelope
                .iter()
                .enumerate()
                .map(|(i, &e)| carrier(offset_hz, i) * e)
                .collect()
        }
        Waveform::Narrowband { offset_hz, bandwidth_hz } => {
            let mut band = narrowband_noise(length, bandwidth_hz, fs, rng);
            for (i, z) in band.iter_mut().enumerate() {
                *z *= carrier(offset_hz, i);
            }
            band
        }
    };
    let power = mean_power(&out);
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Numeric(format!("jammer waveform has power {power}")));
    }
    let gain = power.sqrt().recip();
    out.iter_mut().for_each(|z| *z *= gain);
    Ok(out)
}

/// Draws used to build a record.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedParams {
    pub waveform: Waveform,
    /// `None` for records without a jammer.
    pub jsr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasebandRecord {
    pub samples: Vec<Complex64>,
    pub label: JammerClass,
    pub params_used: RealizedParams,
}

/// Individual components of a record, for calibration checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordComponents {
    pub gnss: Vec<Complex64>,
    pub jammer: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub params_used: RealizedParams,
}

impl RecordComponents {
    pub fn compose(&self) -> Vec<Complex64> {
        self.gnss
            .iter()
            .zip(&self.jammer)
            .zip(&self.noise)
            .map(|((s, j), w)| s + j + w)
            .collect()
    }
}

/// BPSK chips held for `sample_rate / chip_rate` samples each, unit power.
fn gnss_chips(length: usize, sample_rate: f64, chip_rate: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let ratio = chip_rate / sample_rate;
    let mut current = 0usize;
    let mut value = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (0..length)
        .map(|i| {
            let chip = (i as f64 * ratio) as usize;
            while current < chip {
                value = if rng.random::<bool>() { 1.0 } else { -1.0 };
                current += 1;
            }
            Complex64::new(value, 0.0)
        })
        .collect()
}

pub fn synthesize_components(class: JammerClass, params: &SignalParams, rng: &mut ChaCha8Rng) -> Result<RecordComponents> {
    params.validate()?;
    let n = params.duration_samples;
    let noise = complex_noise(n, rng);
    let gain = 10f64.powf(params.snr_db / 20.0);
    let mut gnss = gnss_chips(n, params.sample_rate, params.chip_rate, rng);
    gnss.iter_mut().for_each(|z| *z *= gain);

    let waveform = draw_waveform(class, params, rng);
    let mut jammer = jammer_waveform(&waveform, n, params.sample_rate, rng)?;
    let jsr_db = if class == JammerClass::NoJam {
        None
    } else {
        let jsr = params.jsr_db.sample(rng);
        let target = 10f64.powf(jsr / 10.0) * mean_power(&gnss);
        let scale = (target / mean_power(&jammer)).sqrt();
        jammer.iter_mut().for_each(|z| *z *= scale);
        Some(jsr)
    };
    Ok(RecordComponents {
        gnss,
        jammer,
        noise,
        params_used: RealizedParams { waveform, jsr_db },
    })
}

pub fn synthesize_sample(class: JammerClass, params: &SignalParams, rng: &mut ChaCha8Rng) -> Result<BasebandRecord> {
    let parts = synthesize_components(class, params, rng)?;
    let samples = parts.compose();
    if samples.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Numeric("synthesized record is not finite".into()));
    }
    Ok(BasebandRecord {
        samples,
        label: class,
        params_used: parts.params_used,
    })
}

/// A dataset addressed by record index: labels are label-major
/// (`per_class` records of class 0, then class 1, ...) and each record has
/// its own random stream, so any record can be regenerated on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub params: SignalParams,
    pub per_class: usize,
}

impl DatasetSpec {
    pub fn new(params: SignalParams, per_class: usize) -> Result<Self> {
        params.validate()?;
        if per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        Ok(Self { params, per_class })
    }

    pub fn len(&self) -> usize {
        self.per_class * JammerClass::COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, index: usize) -> JammerClass {
        JammerClass::ALL[index / self.per_class]
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i).label()).collect()
    }

    pub fn record(&self, index: usize) -> Result<BasebandRecord> {
        if index >= self.len() {
            return Err(Error::Input(format!("record {index} out of range 0..{}", self.len())));
        }
        let mut rng = seeded_stream(derive_seed(self.params.seed, RECORD_DOMAIN), index as u64);
        synthesize_sample(self.label(index), &self.params, &mut rng)
    }
}

/// Generates all `6 · n_per_class` records in memory.
pub fn generate_dataset(n_per_class: usize, params: &SignalParams, exec: Execution) -> Result<Vec<BasebandRecord>> {
    let spec = DatasetSpec::new(params.clone(), n_per_class)?;
    try_map_range(exec, spec.len(), |i| spec.record(i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record_id: usize,
    pub label: JammerClass,
    pub jsr_db: Option<f64>,
    pub file: String,
}

fn record_file_name(index: usize) -> String {
    format!("record_{index:06}.frcb")
}

pub fn encode_record(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * samples.len());
    out.extend_from_slice(RECORD_MAGIC);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for z in samples {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_record(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if bytes.len() < 8 || &bytes[..4] != RECORD_MAGIC {
        return Err(Error::format("record file", "missing FRCB header"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * len {
        return Err(Error::format(
            "record file",
            format!("header says {len} samples but body has {} bytes", bytes.len() - 8),
        ));
    }
    Ok(bytes[8..]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn read_record_file(path: &Path) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_record(&bytes)
}

/// Generates `spec` into `dir` (record files plus manifest), a batch at a time.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, exec: Execution) -> Result<Vec<ManifestEntry>> {
    const BATCH: usize = 64;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(spec.len());
    for start in (0..spec.len()).step_by(BATCH) {
        let count = BATCH.min(spec.len() - start);
        let batch = try_map_range(exec, count, |k| spec.record(start + k))?;
        for (k, record) in batch.into_iter().enumerate() {
            let index = start + k;
            let file = record_file_name(index);
            let path = dir.join(&file);
            fs::write(&path, encode_record(&record.samples)).map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestEntry {
                record_id: index,
                label: record.label,
                jsr_db: record.params_used.jsr_db,
                file,
            });
        }
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(&path, e);
    writeln!(out, "{MANIFEST_HEADER}").map_err(io)?;
    for e in entries {
        let jsr = e.jsr_db.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.record_id, e.label.label(), e.label.name(), jsr, e.file).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(MANIFEST_HEADER) {
        return Err(Error::format("manifest", "missing or wrong header line"));
    }
    let mut entries = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format("manifest", format!("line {}: {what}", n + 2));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        let record_id = cols[0].parse().map_err(|_| bad("bad record_id"))?;
        let label = cols[1]
            .parse::<usize>()
            .ok()
            .and_then(JammerClass::from_label)
            .ok_or_else(|| bad("bad class_index"))?;
        if !label.name().eq_ignore_ascii_case(cols[2]) {
            return Err(bad("class_name does not match class_index"));
        }
        let jsr_db = match cols[3] {
            "NA" => None,
            v => Some(v.parse().map_err(|_| bad("bad jsr_db"))?),
        };
        entries.push(ManifestEntry {
            record_id,
            label,
            jsr_db,
            file: cols[4].to_string(),
        });
    }
    Ok(entries)
}

/// Path of a manifest entry's record file.
pub fn entry_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn short_params() -> SignalParams {
        SignalParams {
            duration_samples: 16_384,
            ..SignalParams::default()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        seeded_stream(seed, 0)
    }

    #[test]
    fn labels_and_names_roundtrip() {
        for (i, c) in JammerClass::ALL.into_iter().enumerate() {
            assert_eq!(c.label(), i);
            assert_eq!(JammerClass::from_label(i), Some(c));
            assert_eq!(c.name().parse::<JammerClass>().unwrap(), c);
        }
        assert_eq!(JammerClass::from_label(6), None);
    }

    #[test]
    fn nojam_is_zero_and_record_is_signal_plus_noise() {
        let z = jammer_waveform(&Waveform::None, 100, 10e6, &mut rng(1)).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
        let parts = synthesize_components(JammerClass::NoJam, &short_params(), &mut rng(2)).unwrap();
        let rec = synthesize_sample(JammerClass::NoJam, &short_params(), &mut rng(2)).unwrap();
        for ((r, s), w) in rec.samples.iter().zip(&parts.gnss).zip(&parts.noise) {
            assert_eq!(*r, s + w);
        }
        assert_eq!(rec.params_used.jsr_db, None);
    }

    #[test]
    fn am_tone_peaks_at_nearest_bin() {
        let n = 4096;
        let fs = 10e6;
        let offset = 1_234_567.0;
        let w = Waveform::Am { offset_hz: offset, depth: 0.3, rate_hz: 2e3, phase: 0.0 };
        let mut x = jammer_waveform(&w, n, fs, &mut rng(3)).unwrap();
        FftPlanner::new().plan_fft_forward(n).process(&mut x);
        let peak = (0..n).max_by(|&a, &b| x[a].norm().total_cmp(&x[b].norm())).unwrap();
        let expected = (offset / fs * n as f64).round() as usize;
        assert_eq!(peak, expected);
    }

    #[test]
    fn waveforms_have_unit_power() {
        let params = short_params();
        for class in JammerClass::ALL.into_iter().filter(|c| *c != JammerClass::NoJam) {
            let mut r = rng(class.label() as u64);
            let w = draw_waveform(class, &params, &mut r);
            let x = jammer_waveform(&w, params.duration_samples, params.sample_rate, &mut r).unwrap();
            assert!((mean_power(&x) - 1.0).abs() < 1e-12, "{class}");
        }
    }

    #[test]
    fn calibration_of_components() {
        let params = SignalParams::default();
        for class in JammerClass::ALL {
            let parts = synthesize_components(class, &params, &mut rng(10 + class.label() as u64)).unwrap();
            let pw = mean_power(&parts.noise);
            assert!((pw - 1.0).abs() < 0.05, "noise power {pw}");
            let ps = mean_power(&parts.gnss);
            assert!((10.0 * ps.log10() + 20.0).abs() < 1e-9);
            if let Some(target) = parts.params_used.jsr_db {
                let measured = 10.0 * (mean_power(&parts.jammer) / ps).log10();
                assert!((measured - target).abs() < 0.5, "{class}: {measured} vs {target}");
                assert!((10.0..50.0).contains(&target));
            }
        }
    }

    #[test]
    fn chips_hold_for_chip_duration() {
        let chips = gnss_chips(1000, 10e6, 1.023e6, &mut rng(4));
        assert!(chips.iter().all(|z| z.re.abs() == 1.0 && z.im == 0.0));
        let changes = chips.windows(2).filter(|w| w[0] != w[1]).count();
        // 1000 samples span ~102 chips; about half of the boundaries flip sign.
        assert!(changes <= 102 && changes > 20, "{changes}");
    }

    #[test]
    fn dme_envelope_has_pulse_pairs() {
        // 1.75 µs falls on the sample grid at 20 MHz.
        let fs = 20e6;
        let w = Waveform::PulseDme {
            offset_hz: 0.0,
            pair_rate_hz: 2e3,
            first_pair_s: 100e-6,
            sigma_s: 3.5e-6 / (2.0 * 2f64.ln().sqrt()),
            spacing_s: 12e-6,
        };
        let x = jammer_waveform(&w, 20_000, fs, &mut rng(0)).unwrap();
        let at = |t: f64| x[(t * fs).round() as usize].norm();
        assert!(at(100e-6) > 10.0 * at(106e-6));
        assert!((at(100e-6) - at(112e-6)).abs() < 1e-9 * at(100e-6));
        assert!((at(100e-6) - at(600e-6)).abs() < 1e-9 * at(100e-6));
        // Half power at ±1.75 µs from the pulse centre.
        let ratio = (at(100e-6 + 1.75e-6) / at(100e-6)).powi(2);
        assert!((ratio - 0.5).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn narrowband_energy_stays_in_band() {
        let fs = 10e6;
        let n = 16_384;
        let w = Waveform::Narrowband { offset_hz: 1e6, bandwidth_hz: 100e3 };
        let mut x = jammer_waveform(&w, n, fs, &mut rng(5)).unwrap();
        FftPlanner::new().plan_fft_forward(n).process(&mut x);
        let total: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let bin = |f: f64| (f / fs * n as f64).round() as usize;
        let inside: f64 = x[bin(0.9e6)..bin(1.1e6)].iter().map(|z| z.norm_sqr()).sum();
        assert!(inside / total > 0.99, "{}", inside / total);
    }

    #[test]
    fn validation_catches_bad_params() {
        let bad = [
            SignalParams { sample_rate: 0.0, ..SignalParams::default() },
            SignalParams { duration_samples: 100, ..SignalParams::default() },
            SignalParams { jsr_db: Range::new(0.0, 10.0), ..SignalParams::default() },
            SignalParams { jsr_db: Range::new(20.0, 10.0), ..SignalParams::default() },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(Error::Config(_))), "{p:?}");
        }
    }

    #[test]
    fn dataset_is_label_major_and_deterministic() {
        let params = SignalParams { seed: 77, ..short_params() };
        let a = generate_dataset(3, &params, Execution::Parallel).unwrap();
        let b = generate_dataset(3, &params, Execution::Sequential).unwrap();
        assert_eq!(a.len(), 18);
        let labels: Vec<usize> = a.iter().map(|r| r.label.label()).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5]);
        assert_eq!(a, b);
        let spec = DatasetSpec::new(params, 3).unwrap();
        assert_eq!(spec.record(7).unwrap(), a[7]);
        assert!(spec.record(18).is_err());
    }

    #[test]
    fn record_bytes_roundtrip() {
        let rec = synthesize_sample(JammerClass::Fm, &short_params(), &mut rng(6)).unwrap();
        let bytes = encode_record(&rec.samples);
        assert_eq!(&bytes[..4], b"FRCB");
        let back = decode_record(&bytes).unwrap();
        for (a, b) in back.iter().zip(&rec.samples) {
            assert_eq!(a.re, b.re as f32 as f64);
            assert_eq!(a.im, b.im as f32 as f64);
        }
        assert!(decode_record(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(SignalParams { seed: 3, ..short_params() }, 2).unwrap();
        let written = write_dataset(dir.path(), &spec, Execution::Parallel).unwrap();
        let read = read_manifest(dir.path()).unwrap();
        assert_eq!(read.len(), 12);
        for (w, r) in written.iter().zip(&read) {
            assert_eq!((w.record_id, w.label, &w.file), (r.record_id, r.label, &r.file));
            assert_eq!(w.jsr_db.is_some(), r.jsr_db.is_some());
        }
        assert_eq!(read[11].jsr_db, None);
        let samples = read_record_file(&entry_path(dir.path(), &read[4])).unwrap();
        assert_eq!(samples.len(), 16_384);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn records_are_finite_and_calibrated(seed in any::<u64>(), label in 0usize..6) {
            let class = JammerClass::from_label(label).unwrap();
            let params = SignalParams { duration_samples: 8192, ..SignalParams::default() };
            let parts = synthesize_components(class, &params, &mut rng(seed)).unwrap();
            prop_assert!(parts.compose().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
            if let Some(target) = parts.params_used.jsr_db {
                let measured = 10.0 * (mean_power(&parts.jammer) / mean_power(&parts.gnss)).log10();
                prop_assert!((measured - target).abs() < 0.5);
            }
        }
    }
}
