//! NFC-A listening-mode physical layer at complex baseband: load-modulation
//! waveforms, the reader-side channel, the receiver chain and BER sweeps.
//!
//! The carrier sits at 0 Hz, so the tag subcarrier appears at ±fc/16. The
//! default sample rate fc/2 gives 8 samples per subcarrier cycle and an
//! integer number of samples per bit for every NFC-A rate.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::circuit::{
    bridge_first_order, bridge_output, inverting_amplifier_output, reflected_impedance, BridgeConfig, InductiveLink,
    ModState, Resonator, SensorCircuit, CARRIER_HZ,
};
use crate::error::{invalid, Error, Result};

/// Tag subcarrier, fc/16.
pub const SUBCARRIER_HZ: f64 = CARRIER_HZ / 16.0;
/// Default baseband sample rate, fc/2.
pub const DEFAULT_SAMPLE_RATE: f64 = CARRIER_HZ / 2.0;
/// Seed of the synchronization preamble pattern.
pub const PREAMBLE_SEED: u16 = 0x1d2b;
/// Default PRBS15 payload seed (all ones).
pub const DEFAULT_PRBS_SEED: u16 = 0x7fff;

const PRBS15_PERIOD: usize = 32767;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Bitrate {
    R106,
    R212,
    R424,
    R848,
}

impl Bitrate {
    pub const ALL: [Bitrate; 4] = [Bitrate::R106, Bitrate::R212, Bitrate::R424, Bitrate::R848];

    pub fn kbps(self) -> u32 {
        match self {
            Bitrate::R106 => 106,
            Bitrate::R212 => 212,
            Bitrate::R424 => 424,
            Bitrate::R848 => 848,
        }
    }

    /// Carrier cycles per bit (fc/128 … fc/16).
    pub fn carrier_cycles_per_bit(self) -> u32 {
        match self {
            Bitrate::R106 => 128,
            Bitrate::R212 => 64,
            Bitrate::R424 => 32,
            Bitrate::R848 => 16,
        }
    }

    pub fn bits_per_second(self) -> f64 {
        CARRIER_HZ / f64::from(self.carrier_cycles_per_bit())
    }
}

impl TryFrom<u32> for Bitrate {
    type Error = Error;

    fn try_from(kbps: u32) -> Result<Self> {
        match kbps {
            106 => Ok(Bitrate::R106),
            212 => Ok(Bitrate::R212),
            424 => Ok(Bitrate::R424),
            848 => Ok(Bitrate::R848),
            other => Err(Error::UnsupportedRate(format!("{other} kbps"))),
        }
    }
}

impl From<Bitrate> for u32 {
    fn from(b: Bitrate) -> u32 {
        b.kbps()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keying {
    Ook,
    Bpsk,
}

/// NFC-A listening-mode coding: Manchester OOK at 106 kbps, NRZ-L BPSK above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationScheme {
    pub bitrate: Bitrate,
    pub keying: Keying,
    pub subcarrier_hz: f64,
}

impl ModulationScheme {
    pub fn new(bitrate: Bitrate) -> Self {
        let keying = match bitrate {
            Bitrate::R106 => Keying::Ook,
            _ => Keying::Bpsk,
        };
        Self {
            bitrate,
            keying,
            subcarrier_hz: SUBCARRIER_HZ,
        }
    }

    pub fn from_kbps(kbps: u32) -> Result<Self> {
        Ok(Self::new(Bitrate::try_from(kbps)?))
    }

    pub fn all() -> [Self; 4] {
        Bitrate::ALL.map(Self::new)
    }

    pub fn validate(&self) -> Result<()> {
        if *self != Self::new(self.bitrate) {
            return Err(Error::UnsupportedRate(format!(
                "{} kbps with {:?} keying at {} Hz subcarrier",
                self.bitrate.kbps(),
                self.keying,
                self.subcarrier_hz
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let k = match self.keying {
            Keying::Ook => "ook",
            Keying::Bpsk => "bpsk",
        };
        format!("{}k-{k}", self.bitrate.kbps())
    }

    /// Rate of the receiver's decision symbols: Manchester chips for OOK, bits for BPSK.
    pub fn symbol_rate(&self) -> f64 {
        match self.keying {
            Keying::Ook => 2.0 * self.bitrate.bits_per_second(),
            Keying::Bpsk => self.bitrate.bits_per_second(),
        }
    }

    fn symbols_per_bit(&self) -> usize {
        match self.keying {
            Keying::Ook => 2,
            Keying::Bpsk => 1,
        }
    }

    /// (samples per subcarrier cycle, samples per bit) at `sample_rate`.
    pub fn sample_layout(&self, sample_rate: f64) -> Result<(usize, usize)> {
        self.validate()?;
        let per_cycle = sample_rate / self.subcarrier_hz;
        let per_bit = sample_rate / self.bitrate.bits_per_second();
        let is_int = |x: f64| (x - x.round()).abs() < 1e-9 && x.round() >= 1.0;
        if !(is_int(per_cycle) && is_int(per_bit)) || per_cycle.round() as usize % 2 != 0 {
            return Err(Error::UnsupportedRate(format!(
                "sample rate {sample_rate} Hz does not give whole subcarrier half-cycles and bits"
            )));
        }
        Ok((per_cycle.round() as usize, per_bit.round() as usize))
    }
}

/// Sampled complex baseband signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub epoch: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IqSidecar {
    sample_rate: f64,
    epoch: i64,
    n_samples: usize,
    format: String,
}

impl Waveform {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate >= 4.0 * SUBCARRIER_HZ) {
            return Err(invalid("sample rate must be at least four times the subcarrier"));
        }
        if self.samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(invalid("waveform has non-finite samples"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes interleaved little-endian float32 I/Q to `path` and a JSON
    /// sidecar next to it. Returns the sidecar path.
    pub fn write_iq(&self, path: &Path) -> Result<PathBuf> {
        let mut buf = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            buf.extend_from_slice(&(s.re as f32).to_le_bytes());
            buf.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        let sidecar = path.with_extension("json");
        let meta = IqSidecar {
            sample_rate: self.sample_rate,
            epoch: self.epoch,
            n_samples: self.samples.len(),
            format: "cf32_le".into(),
        };
        fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
        Ok(sidecar)
    }

    pub fn read_iq(path: &Path) -> Result<Self> {
        let meta: IqSidecar = serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
        let raw = fs::read(path)?;
        if raw.len() != meta.n_samples * 8 {
            return Err(Error::Parse(format!(
                "{}: expected {} samples, found {} bytes",
                path.display(),
                meta.n_samples,
                raw.len()
            )));
        }
        let f = |b: &[u8]| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let samples = raw
            .chunks_exact(8)
            .map(|c| Complex64::new(f(&c[..4]), f(&c[4..])))
            .collect();
        Ok(Self {
            samples,
            sample_rate: meta.sample_rate,
            epoch: meta.epoch,
        })
    }
}

/// PRBS15 from the LFSR x¹⁵ + x¹⁴ + 1. `seed` is the 15-bit initial state.
pub fn prbs15(seed: u16, n_bits: usize) -> Result<Vec<bool>> {
    if seed & 0x7fff == 0 || seed > 0x7fff {
        return Err(invalid("PRBS15 seed must be a nonzero 15-bit state"));
    }
    if n_bits == 0 {
        return Err(invalid("n_bits must be > 0"));
    }
    let mut s = seed;
    Ok((0..n_bits)
        .map(|_| {
            let bit = ((s >> 14) ^ (s >> 13)) & 1;
            s = ((s << 1) | bit) & 0x7fff;
            bit == 1
        })
        .collect())
}

/// Tag load-state waveform (0 = load in circuit, 1 = modulation switch closed).
pub fn modulate(bits: &[bool], scheme: &ModulationScheme, sample_rate: f64) -> Result<Waveform> {
    let (per_cycle, per_bit) = scheme.sample_layout(sample_rate)?;
    let half = per_cycle / 2;
    let mut samples = Vec::with_capacity(bits.len() * per_bit);
    for (b, &bit) in bits.iter().enumerate() {
        for i in 0..per_bit {
            let n = b * per_bit + i;
            let sub = n % per_cycle < half;
            let on = match scheme.keying {
                Keying::Bpsk => sub == bit,
                Keying::Ook => {
                    let first_half = i < per_bit / 2;
                    sub && (first_half == bit)
                }
            };
            samples.push(Complex64::new(if on { 1.0 } else { 0.0 }, 0.0));
        }
    }
    Ok(Waveform {
        samples,
        sample_rate,
        epoch: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Reader-side voltage swing between the two tag load states.
    pub link_gain: Complex64,
    /// Residual carrier at the readout with the tag idle.
    pub carrier_leak: Complex64,
    /// One-sided noise density, V²/Hz.
    pub noise_density: f64,
    pub seed: u64,
    #[serde(default)]
    pub delay_samples: usize,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_density >= 0.0) {
            return Err(invalid("noise_density must be >= 0"));
        }
        let finite = |c: Complex64| c.re.is_finite() && c.im.is_finite();
        if !(finite(self.link_gain) && finite(self.carrier_leak)) {
            return Err(invalid("link gain and carrier leak must be finite"));
        }
        Ok(())
    }

    /// Per-sample complex noise variance at `sample_rate`.
    pub fn noise_variance(&self, sample_rate: f64) -> f64 {
        self.noise_density * sample_rate
    }
}

/// `out = link_gain·tag + carrier_leak + AWGN`, with an optional integer delay.
pub fn apply_channel(tag: &Waveform, cfg: &ChannelConfig) -> Result<Waveform> {
    cfg.validate()?;
    let sigma = (cfg.noise_variance(tag.sample_rate) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = tag.samples.len() + cfg.delay_samples;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let s = if i >= cfg.delay_samples {
            tag.samples[i - cfg.delay_samples]
        } else {
            Complex64::new(0.0, 0.0)
        };
        let mut v = cfg.link_gain * s + cfg.carrier_leak;
        if sigma > 0.0 {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            v += Complex64::new(re * sigma, im * sigma);
        }
        samples.push(v);
    }
    Ok(Waveform {
        samples,
        sample_rate: tag.sample_rate,
        epoch: tag.epoch,
    })
}

/// First-order readout swing `R_amp·V_in·ΔZ/Z²` as a channel gain magnitude.
pub fn link_gain_first_order(cfg: &BridgeConfig<f64>, z: Complex64, dz: Complex64) -> f64 {
    bridge_first_order(cfg, z, dz).norm()
}

/// Reader readout topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontEnd {
    /// Twin meander coils in a balanced bridge.
    TwinBridge,
    /// One coil into an inverting amplifier.
    SingleCoil,
}

/// Readout response per volt of drive: (swing between load states, idle output).
pub fn front_end_response(
    front: FrontEnd,
    bridge: &BridgeConfig<f64>,
    z_reader: Complex64,
    z_reference: Complex64,
    link: &InductiveLink<f64>,
    sensor: &SensorCircuit<f64>,
) -> Result<(Complex64, Complex64)> {
    let unit = BridgeConfig {
        v_in: 1.0,
        ..*bridge
    };
    let f = link.f;
    let z_open = z_reader + reflected_impedance(link, sensor.with_state(ModState::Open).impedance(f))?;
    let z_short = z_reader + reflected_impedance(link, sensor.with_state(ModState::Shorted).impedance(f))?;
    let out = |z| match front {
        FrontEnd::TwinBridge => bridge_output(&unit, z, z_reference),
        FrontEnd::SingleCoil => inverting_amplifier_output(&unit, z),
    };
    let idle = out(z_open)?;
    Ok((out(z_short)? - idle, idle))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RxFilter {
    /// IIR Butterworth lowpass with cutoff `cutoff_factor × symbol rate`.
    Butterworth { order: usize, cutoff_factor: f64 },
    /// Integrate-and-dump over each symbol.
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualizerConfig {
    pub taps: usize,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub filter: RxFilter,
    pub equalizer: Option<EqualizerConfig>,
    pub preamble_bits: usize,
    /// Minimum preamble correlation, in units of its noise-only spread.
    pub sync_threshold: f64,
    pub max_delay_samples: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            filter: RxFilter::Butterworth {
                order: 5,
                cutoff_factor: 1.5,
            },
            equalizer: Some(EqualizerConfig { taps: 9, step: 0.01 }),
            preamble_bits: 48,
            sync_threshold: 5.0,
            max_delay_samples: 16,
        }
    }
}

impl ReceiverConfig {
    /// Matched-filter receiver without equalization.
    pub fn matched_filter() -> Self {
        Self {
            filter: RxFilter::Matched,
            equalizer: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let RxFilter::Butterworth { order, cutoff_factor } = self.filter {
            if !(1..=12).contains(&order) {
                errs.push("receiver.filter.order must be in 1..=12".to_string());
            }
            if !(cutoff_factor > 0.0) {
                errs.push("receiver.filter.cutoff_factor must be > 0".to_string());
            }
        }
        if let Some(eq) = self.equalizer {
            if eq.taps == 0 || eq.taps % 2 == 0 {
                errs.push("receiver.equalizer.taps must be odd".to_string());
            }
            if !(eq.step > 0.0 && eq.step < 1.0) {
                errs.push("receiver.equalizer.step must be in (0, 1)".to_string());
            }
        }
        if self.preamble_bits < 8 {
            errs.push("receiver.preamble_bits must be >= 8".to_string());
        }
        if !(self.sync_threshold >= 0.0) {
            errs.push("receiver.sync_threshold must be >= 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// The fixed synchronization preamble.
pub fn preamble(n_bits: usize) -> Vec<bool> {
    prbs15(PREAMBLE_SEED, n_bits.max(1)).expect("valid preamble seed")
}

/// Second-order sections of a digital Butterworth lowpass (bilinear transform).
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    /// `[b0, b1, b2, a1, a2]` per section, `a0 = 1`.
    sections: Vec<[f64; 5]>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        if order == 0 || !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
            return Err(invalid("Butterworth cutoff must lie in (0, fs/2) with order >= 1"));
        }
        let k = 2.0 * sample_rate;
        let wa = k * (std::f64::consts::PI * cutoff_hz / sample_rate).tan();
        let n = order as f64;
        let mut sections = Vec::new();
        for i in 0..order / 2 {
            let a1 = 2.0 * wa * ((2 * i + 1) as f64 * std::f64::consts::PI / (2.0 * n)).sin();
            let a0 = wa * wa;
            let d0 = k * k + a1 * k + a0;
            sections.push([
                a0 / d0,
                2.0 * a0 / d0,
                a0 / d0,
                (2.0 * a0 - 2.0 * k * k) / d0,
                (k * k - a1 * k + a0) / d0,
            ]);
        }
        if order % 2 == 1 {
            let d0 = k + wa;
            sections.push([wa / d0, wa / d0, 0.0, (wa - k) / d0, 0.0]);
        }
        Ok(Self { sections })
    }

    /// Complex response at `f`.
    pub fn response(&self, f: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -std::f64::consts::TAU * f / sample_rate);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[3] * z1 + s[4] * z2))
            .product()
    }

    pub fn filter(&self, x: &mut [Complex64]) {
        for s in &self.sections {
            let (mut w1, mut w2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for v in x.iter_mut() {
                let y = *v * s[0] + w1;
                w1 = *v * s[1] - y * s[3] + w2;
                w2 = *v * s[2] - y * s[4];
                *v = y;
            }
        }
    }
}

/// Demodulated payload with the acquired timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub bits: Vec<bool>,
    pub delay_samples: usize,
    pub correlation: f64,
}

/// Known symbol targets (±1) of the preamble: bits for BPSK, chips for OOK.
fn preamble_symbols(pre: &[bool], keying: Keying) -> Vec<f64> {
    let pm = |b: bool| if b { 1.0 } else { -1.0 };
    match keying {
        Keying::Bpsk => pre.iter().map(|&b| pm(b)).collect(),
        Keying::Ook => pre.iter().flat_map(|&b| [pm(b), -pm(b)]).collect(),
    }
}

/// Per-bit soft decision values (positive means bit 1) from symbol values.
fn bit_soft(symbols: &[Complex64], keying: Keying) -> Vec<Complex64> {
    match keying {
        Keying::Bpsk => symbols.to_vec(),
        Keying::Ook => symbols.chunks_exact(2).map(|c| c[0] - c[1]).collect(),
    }
}

/// Normalized correlation of soft bit values against ±1 targets and the LS
/// channel estimate.
fn correlate(soft: &[Complex64], targets: &[f64]) -> (f64, Complex64) {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut energy = 0.0;
    for (z, &d) in soft.iter().zip(targets) {
        acc += z * d;
        energy += z.norm_sqr();
    }
    let n = targets.len() as f64;
    let rho = if energy > 0.0 { acc.norm() / (energy * n).sqrt() } else { 0.0 };
    (rho, acc / n)
}

struct Layout {
    per_cycle: usize,
    per_symbol: usize,
}

fn mixer_ref(n: usize, per_cycle: usize) -> f64 {
    if n % per_cycle < per_cycle / 2 {
        1.0
    } else {
        -1.0
    }
}

/// Integrate-and-dump symbol values after mixing, starting at `delay`.
fn integrate_symbols(rx: &[Complex64], lay: &Layout, delay: usize, n_symbols: usize) -> Vec<Complex64> {
    (0..n_symbols)
        .map(|k| {
            let start = k * lay.per_symbol;
            (start..start + lay.per_symbol)
                .map(|n| rx[n + delay] * mixer_ref(n, lay.per_cycle))
                .sum()
        })
        .collect()
}

/// Magnitude of the correlation coefficient between `rx` and a real template.
fn preamble_fit(rx: &[Complex64], template: &[Complex64]) -> f64 {
    let n = template.len() as f64;
    let mt = template.iter().map(|t| t.re).sum::<f64>() / n;
    let mr = rx.iter().sum::<Complex64>() / n;
    let mut cov = Complex64::new(0.0, 0.0);
    let (mut vt, mut vr) = (0.0, 0.0);
    for (r, t) in rx.iter().zip(template) {
        let dt = t.re - mt;
        cov += (r - mr) * dt;
        vt += dt * dt;
        vr += (r - mr).norm_sqr();
    }
    if vt > 0.0 && vr > 0.0 {
        cov.norm() / (vt * vr).sqrt()
    } else {
        0.0
    }
}

/// Recovers the payload bits of one frame (preamble followed by payload).
pub fn demodulate(rx: &Waveform, scheme: &ModulationScheme, cfg: &ReceiverConfig) -> Result<Demodulated> {
    cfg.validate()?;
    rx.validate()?;
    let (per_cycle, per_bit) = scheme.sample_layout(rx.sample_rate)?;
    let spb = scheme.symbols_per_bit();
    let lay = Layout {
        per_cycle,
        per_symbol: per_bit / spb,
    };
    let pre = preamble(cfg.preamble_bits);
    let targets = preamble_symbols(&pre, Keying::Bpsk);
    if rx.len() < (cfg.preamble_bits + 1) * per_bit {
        return Err(invalid("waveform is shorter than the preamble"));
    }
    let max_delay = cfg
        .max_delay_samples
        .min(rx.len() - (cfg.preamble_bits + 1) * per_bit);

    // Timing acquisition: least-squares fit of the known preamble load
    // waveform plus a constant at each candidate delay.
    let n_pre_sym = cfg.preamble_bits * spb;
    let template = modulate(&pre, scheme, rx.sample_rate)?;
    let (mut best_rho, mut best_delay) = (-1.0, 0);
    for d in 0..=max_delay {
        let rho = preamble_fit(&rx.samples[d..d + template.len()], &template.samples);
        if rho > best_rho {
            best_rho = rho;
            best_delay = d;
        }
    }
    // Detection statistic: correlation scaled to unit noise-only spread.
    best_rho *= (template.len() as f64).sqrt();
    if best_rho < cfg.sync_threshold {
        return Err(Error::SyncFailure {
            correlation: best_rho,
            threshold: cfg.sync_threshold,
        });
    }
    let delay = best_delay;
    let frame_bits = (rx.len() - delay) / per_bit;
    let n_payload = frame_bits - cfg.preamble_bits;
    let n_sym = frame_bits * spb;

    let symbols = match cfg.filter {
        RxFilter::Matched => {
            let sym = integrate_symbols(&rx.samples, &lay, delay, n_sym);
            let (_, h) = correlate(&bit_soft(&sym[..n_pre_sym], scheme.keying), &targets);
            sym.into_iter().map(|z| z / h).collect::<Vec<_>>()
        }
        RxFilter::Butterworth { order, cutoff_factor } => {
            let lp = Butterworth::lowpass(order, cutoff_factor * scheme.symbol_rate(), rx.sample_rate)?;
            let mut y: Vec<Complex64> = rx.samples[delay..]
                .iter()
                .enumerate()
                .map(|(n, &v)| v * mixer_ref(n, per_cycle))
                .collect();
            // Room for the filter delay after the last symbol.
            y.resize(y.len() + 2 * lay.per_symbol, Complex64::new(0.0, 0.0));
            lp.filter(&mut y);
            butterworth_symbols(&y, &lay, scheme.keying, n_sym, &pre)?
        }
    };
    let symbols = match cfg.equalizer {
        Some(eq) => equalize(&symbols, scheme.keying, &pre, eq),
        None => symbols,
    };
    let soft = bit_soft(&symbols, scheme.keying);
    let bits = soft[cfg.preamble_bits..cfg.preamble_bits + n_payload]
        .iter()
        .map(|z| z.re > 0.0)
        .collect();
    Ok(Demodulated {
        bits,
        delay_samples: delay,
        correlation: best_rho,
    })
}

/// Samples the filtered signal once per symbol at the phase that best matches
/// the preamble, then removes offset and channel by least squares so the
/// symbols are close to ±1.
fn butterworth_symbols(
    y: &[Complex64],
    lay: &Layout,
    keying: Keying,
    n_sym: usize,
    pre: &[bool],
) -> Result<Vec<Complex64>> {
    let targets = preamble_symbols(pre, keying);
    let n_pre = targets.len();
    let max_phase = (2 * lay.per_symbol).min(y.len().saturating_sub((n_sym - 1) * lay.per_symbol + 1));
    let sample = |phase: usize| -> Vec<Complex64> {
        (0..n_sym)
            .map(|k| {
                let i = k * lay.per_symbol + phase;
                y[i.min(y.len() - 1)]
            })
            .collect()
    };
    let fit = |s: &[Complex64]| -> (f64, Complex64, Complex64) {
        // Least squares s ≈ h·d + c over the preamble.
        let n = n_pre as f64;
        let md: f64 = targets.iter().sum::<f64>() / n;
        let ms: Complex64 = s[..n_pre].iter().sum::<Complex64>() / n;
        let mut sdd = 0.0;
        let mut sds = Complex64::new(0.0, 0.0);
        let mut sss = 0.0;
        for (z, &d) in s[..n_pre].iter().zip(&targets) {
            sdd += (d - md) * (d - md);
            sds += (z - ms) * (d - md);
            sss += (z - ms).norm_sqr();
        }
        let h = sds / sdd;
        let rho = if sss > 0.0 { sds.norm() / (sss * sdd).sqrt() } else { 0.0 };
        (rho, h, ms - h * md)
    };
    let mut best = (-1.0, Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), 0);
    for phase in 0..max_phase.max(1) {
        let (rho, h, c) = fit(&sample(phase));
        if rho > best.0 {
            best = (rho, h, c, phase);
        }
    }
    let (_, h, c, phase) = best;
    if !(h.norm() > 0.0) {
        return Err(Error::SyncFailure {
            correlation: 0.0,
            threshold: 0.0,
        });
    }
    Ok(sample(phase).into_iter().map(|z| (z - c) / h).collect())
}

/// Decision-directed LMS on ±1 symbols, trained on the preamble.
fn equalize(x: &[Complex64], keying: Keying, pre: &[bool], cfg: EqualizerConfig) -> Vec<Complex64> {
    let targets = preamble_symbols(pre, keying);
    let taps = cfg.taps;
    let c = taps / 2;
    let mut w = vec![Complex64::new(0.0, 0.0); taps];
    w[c] = Complex64::new(1.0, 0.0);
    let power = x[..targets.len()].iter().map(|z| z.norm_sqr()).sum::<f64>() / targets.len() as f64;
    let mu = cfg.step / power.max(1.0);
    let tap_input = |k: usize| -> Vec<Complex64> {
        (0..taps)
            .map(|j| {
                let idx = k as isize + j as isize - c as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    };
    let output = |w: &[Complex64], u: &[Complex64]| -> Complex64 { w.iter().zip(u).map(|(a, b)| a * b).sum() };
    let adapt = |w: &mut [Complex64], u: &[Complex64], e: Complex64| {
        for (wj, uj) in w.iter_mut().zip(u) {
            *wj += e * uj.conj() * mu;
        }
    };
    let mut out = Vec::with_capacity(x.len());
    let step = match keying {
        Keying::Bpsk => 1,
        Keying::Ook => 2,
    };
    let mut k = 0;
    while k + step <= x.len() {
        let inputs: Vec<Vec<Complex64>> = (k..k + step).map(tap_input).collect();
        let ys: Vec<Complex64> = inputs.iter().map(|u| output(&w, u)).collect();
        let decided: Vec<f64> = if k < targets.len() {
            targets[k..k + step].to_vec()
        } else {
            match keying {
                Keying::Bpsk => vec![if ys[0].re > 0.0 { 1.0 } else { -1.0 }],
                Keying::Ook => {
                    let one = (ys[0] - ys[1]).re > 0.0;
                    if one {
                        vec![1.0, -1.0]
                    } else {
                        vec![-1.0, 1.0]
                    }
                }
            }
        };
        for ((u, y), d) in inputs.iter().zip(&ys).zip(&decided) {
            adapt(&mut w, u, Complex64::new(*d, 0.0) - y);
        }
        out.extend(ys);
        k += step;
    }
    out
}

/// `Eb/N0` for a load-state swing `|link_gain|` at the given noise density.
pub fn eb_n0(scheme: &ModulationScheme, link_gain: f64, noise_density: f64, sample_rate: f64) -> Result<f64> {
    let (_, per_bit) = scheme.sample_layout(sample_rate)?;
    Ok(link_gain * link_gain / 4.0 * per_bit as f64 / (noise_density * sample_rate))
}

/// Noise density giving `eb_n0` (linear) for a unit load-state swing.
pub fn noise_density_for(scheme: &ModulationScheme, eb_n0: f64, sample_rate: f64) -> Result<f64> {
    let (_, per_bit) = scheme.sample_layout(sample_rate)?;
    Ok(0.25 * per_bit as f64 / (eb_n0 * sample_rate))
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] for `p` in (0, 1).
pub fn q_inverse(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Coherent BPSK bit error probability `Q(√(2Eb/N0))`.
pub fn bpsk_theory_ber(eb_n0: f64) -> f64 {
    q_function((2.0 * eb_n0).sqrt())
}

/// `Eb/N0` (linear) at which coherent BPSK reaches `ber`.
pub fn bpsk_required_eb_n0(ber: f64) -> f64 {
    let q = q_inverse(ber);
    q * q / 2.0
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    1e-3 * from_db(p_dbm)
}

/// Derives an independent stream seed from a base seed and indices (SplitMix64 finalizer).
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    indices.iter().fold(mix(base), |acc, &i| mix(acc ^ mix(i)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub p_in_dbm: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub sync_failures: u64,
}

impl BerPoint {
    pub fn new(p_in_dbm: f64, bits_sent: u64, bit_errors: u64, sync_failures: u64) -> Self {
        Self {
            p_in_dbm,
            bits_sent,
            bit_errors,
            ber: if bits_sent > 0 { bit_errors as f64 / bits_sent as f64 } else { 0.0 },
            sync_failures,
        }
    }
}

/// Reader-side channel as a function of drive power. The receiver gain is
/// ranged once so the output peak at `ranging_p_dbm` reaches `full_scale`;
/// noise is referred to the ranged output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerChannel {
    /// Swing between load states per volt of drive.
    pub link_gain_per_volt: Complex64,
    /// Idle readout per volt of drive.
    pub leak_per_volt: Complex64,
    pub source_resistance: f64,
    pub full_scale: f64,
    pub ranging_p_dbm: f64,
    pub noise_density: f64,
    pub seed: u64,
    pub prbs_seed: u16,
    pub bits_per_point: u64,
    pub payload_bits_per_frame: usize,
    pub sample_rate: f64,
    pub receiver: ReceiverConfig,
}

impl BerChannel {
    pub fn new(link_gain_per_volt: Complex64, leak_per_volt: Complex64, noise_density: f64, seed: u64) -> Self {
        Self {
            link_gain_per_volt,
            leak_per_volt,
            source_resistance: 50.0,
            full_scale: 1.0,
            ranging_p_dbm: 10.0,
            noise_density,
            seed,
            prbs_seed: DEFAULT_PRBS_SEED,
            bits_per_point: 100_000,
            payload_bits_per_frame: 1024,
            sample_rate: DEFAULT_SAMPLE_RATE,
            receiver: ReceiverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.link_gain_per_volt.norm() > 0.0) {
            errs.push("channel.link_gain_per_volt must be nonzero".to_string());
        }
        if !(self.source_resistance > 0.0 && self.full_scale > 0.0) {
            errs.push("channel.source_resistance and full_scale must be > 0".to_string());
        }
        if !(self.noise_density >= 0.0) {
            errs.push("channel.noise_density must be >= 0".to_string());
        }
        if self.bits_per_point == 0 || self.payload_bits_per_frame == 0 {
            errs.push("channel.bits_per_point and payload_bits_per_frame must be > 0".to_string());
        }
        if self.prbs_seed == 0 || self.prbs_seed > 0x7fff {
            errs.push("channel.prbs_seed must be a nonzero 15-bit value".to_string());
        }
        if let Err(Error::Validation(mut e)) = self.receiver.validate() {
            errs.append(&mut e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn drive_volts(&self, p_dbm: f64) -> f64 {
        (2.0 * dbm_to_watts(p_dbm) * self.source_resistance).sqrt()
    }

    /// Receiver gain from the ranging step.
    pub fn receiver_gain(&self) -> f64 {
        let peak = self
            .leak_per_volt
            .norm()
            .max((self.leak_per_volt + self.link_gain_per_volt).norm());
        self.full_scale / (peak * self.drive_volts(self.ranging_p_dbm))
    }

    /// Channel seen at drive power `p_dbm`, with the given noise seed.
    pub fn channel_at(&self, p_dbm: f64, seed: u64) -> ChannelConfig {
        let g = self.receiver_gain() * self.drive_volts(p_dbm);
        ChannelConfig {
            link_gain: self.link_gain_per_volt * g,
            carrier_leak: self.leak_per_volt * g,
            noise_density: self.noise_density,
            seed,
            delay_samples: 0,
        }
    }

    pub fn eb_n0_at(&self, scheme: &ModulationScheme, p_dbm: f64) -> Result<f64> {
        let ch = self.channel_at(p_dbm, 0);
        eb_n0(scheme, ch.link_gain.norm(), self.noise_density, self.sample_rate)
    }

    pub fn with_noise_density(&self, noise_density: f64) -> Self {
        Self {
            noise_density,
            ..*self
        }
    }
}

/// Simulates `bits` payload bits over `channel` in frames run in parallel.
/// Returns (bits, errors, sync failures). A frame that fails to synchronize
/// is scored at chance: half its payload bits count as errors.
pub fn simulate_frames(
    scheme: &ModulationScheme,
    channel: &ChannelConfig,
    receiver: &ReceiverConfig,
    sample_rate: f64,
    prbs_seed: u16,
    bits: u64,
    payload_per_frame: usize,
) -> Result<(u64, u64, u64)> {
    let stream = prbs15(prbs_seed, PRBS15_PERIOD)?;
    let pre = preamble(receiver.preamble_bits);
    let n_frames = bits.div_ceil(payload_per_frame as u64);
    let results: Vec<Result<(u64, u64, u64)>> = (0..n_frames)
        .into_par_iter()
        .map(|f| {
            let offset = (f * payload_per_frame as u64) as usize;
            let n = payload_per_frame.min((bits - f * payload_per_frame as u64) as usize);
            let payload: Vec<bool> = (0..n).map(|i| stream[(offset + i) % PRBS15_PERIOD]).collect();
            let frame: Vec<bool> = pre.iter().chain(payload.iter()).copied().collect();
            let tag = modulate(&frame, scheme, sample_rate)?;
            let cfg = ChannelConfig {
                seed: derive_seed(channel.seed, &[f]),
                ..*channel
            };
            let rx = apply_channel(&tag, &cfg)?;
            match demodulate(&rx, scheme, receiver) {
                Ok(d) => {
                    let errors = d.bits.iter().zip(&payload).filter(|(a, b)| a != b).count()
                        + payload.len().saturating_sub(d.bits.len());
                    Ok((n as u64, errors as u64, 0))
                }
                Err(Error::SyncFailure { .. }) => Ok((n as u64, n.div_ceil(2) as u64, 1)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut total = (0, 0, 0);
    for r in results {
        let (b, e, s) = r?;
        total.0 += b;
        total.1 += e;
        total.2 += s;
    }
    Ok(total)
}

/// BER at one drive level; the noise stream depends only on the channel seed
/// and `point_index`.
pub fn ber_point(scheme: &ModulationScheme, template: &BerChannel, p_dbm: f64, point_index: u64) -> Result<BerPoint> {
    let ch = template.channel_at(p_dbm, derive_seed(template.seed, &[point_index]));
    let (bits, errors, sync) = simulate_frames(
        scheme,
        &ch,
        &template.receiver,
        template.sample_rate,
        template.prbs_seed,
        template.bits_per_point,
        template.payload_bits_per_frame,
    )?;
    Ok(BerPoint::new(p_dbm, bits, errors, sync))
}

/// Default drive grid, −30…+10 dBm in 2 dB steps.
pub fn default_power_grid() -> Vec<f64> {
    (0..21).map(|i| -30.0 + 2.0 * f64::from(i)).collect()
}

pub fn ber_sweep(scheme: &ModulationScheme, template: &BerChannel, p_in_dbm: &[f64]) -> Result<Vec<BerPoint>> {
    template.validate()?;
    scheme.validate()?;
    if p_in_dbm.is_empty() || p_in_dbm.iter().any(|p| !p.is_finite()) {
        return Err(invalid("power grid must be non-empty and finite"));
    }
    p_in_dbm
        .iter()
        .enumerate()
        .map(|(i, &p)| ber_point(scheme, template, p, i as u64))
        .collect()
}

/// Drive level where BER first falls to `target`, interpolated in log BER.
pub fn ber_crossing(points: &[BerPoint], target: f64) -> Option<f64> {
    let lg = |b: f64| b.max(1e-12).log10();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.ber > target && b.ber <= target {
            let t = (lg(a.ber) - lg(target)) / (lg(a.ber) - lg(b.ber));
            return Some(a.p_in_dbm + t * (b.p_in_dbm - a.p_in_dbm));
        }
    }
    points.first().filter(|p| p.ber <= target).map(|p| p.p_in_dbm)
}

/// Finds the noise density at which `scheme` reaches `target_ber` at drive
/// `p_dbm`, bisecting on log density with common random numbers.
pub fn calibrate_noise_density(
    scheme: &ModulationScheme,
    template: &BerChannel,
    p_dbm: f64,
    target_ber: f64,
    bits: u64,
) -> Result<f64> {
    let ber_at = |log_n0: f64| -> Result<f64> {
        let t = BerChannel {
            bits_per_point: bits,
            ..template.with_noise_density(10f64.powf(log_n0))
        };
        Ok(ber_point(scheme, &t, p_dbm, 0)?.ber)
    };
    // Start from the matched-filter estimate and bracket outward.
    let swing = template.channel_at(p_dbm, 0).link_gain.norm();
    let guess = swing * swing / 4.0 * scheme.sample_layout(template.sample_rate)?.1 as f64
        / (bpsk_required_eb_n0(target_ber) * template.sample_rate);
    let (mut lo, mut hi) = (guess.log10() - 1.0, guess.log10() + 1.0);
    for _ in 0..8 {
        if ber_at(lo)? <= target_ber {
            break;
        }
        lo -= 1.0;
    }
    for _ in 0..8 {
        if ber_at(hi)? >= target_ber {
            break;
        }
        hi += 1.0;
    }
    if !(ber_at(lo)? <= target_ber && ber_at(hi)? >= target_ber) {
        return Err(Error::Calibration("could not bracket the target BER".into()));
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ber_at(mid)? > target_ber {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-3 {
            break;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

pub fn ber_csv(points: &[BerPoint], scheme: &ModulationScheme, config_hash: &str) -> String {
    let mut s = String::from("P_in_dBm,bits,errors,ber,scheme,config_hash\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{:e},{},{}\n",
            p.p_in_dbm,
            p.bits_sent,
            p.bit_errors,
            p.ber,
            scheme.label(),
            config_hash
        ));
    }
    s
}
