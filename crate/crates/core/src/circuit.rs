//! Lumped resonator models, reflected impedance, impedance balance and the
//! balanced-bridge readout.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::num::Real;

/// NFC carrier frequency, Hz.
pub const CARRIER_HZ: f64 = 13.56e6;

/// Balanced-band threshold on the impedance difference ratio.
pub const BALANCE_THRESHOLD: f64 = 0.10;

fn omega<T: Real>(f: T) -> T {
    T::TAU() * f
}

/// Anything with a terminal impedance, a series inductance and a loss resistance.
pub trait Resonator<T: Real> {
    fn impedance(&self, f: T) -> Complex<T>;
    fn inductance(&self) -> T;
    fn resistance(&self) -> T;

    fn q_factor(&self, f: T) -> T {
        q_factor(self.inductance(), self.resistance(), f)
    }
}

/// `Q = 2πfL/R`.
pub fn q_factor<T: Real>(l: T, r: T, f: T) -> T {
    omega(f) * l / r
}

/// Terminal impedance of any resonator at `f`.
pub fn impedance<T: Real, C: Resonator<T> + ?Sized>(c: &C, f: T) -> Complex<T> {
    c.impedance(f)
}

/// Body-scale reader coil: series R–L with `n_caps` equal distributed
/// capacitors and an optional stray shunt across the terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ReaderCircuit<T> {
    pub r: T,
    pub l: T,
    pub n_caps: usize,
    pub c_each: T,
    #[serde(default)]
    pub parasitic_c: T,
}

impl<T: Real> ReaderCircuit<T> {
    /// Reader tuned to `f0` by [`tune_distributed_caps`].
    pub fn tuned(r: T, l: T, n_caps: usize, f0: T) -> Result<Self> {
        let c = Self {
            r,
            l,
            n_caps,
            c_each: tune_distributed_caps(l, f0, n_caps)?,
            parasitic_c: T::zero(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > T::zero() && self.l > T::zero() && self.c_each > T::zero()) {
            return Err(invalid("reader R, L and C_each must be positive"));
        }
        if self.n_caps == 0 {
            return Err(invalid("reader needs at least one capacitor"));
        }
        if !(self.parasitic_c >= T::zero()) {
            return Err(invalid("parasitic_c must be >= 0"));
        }
        Ok(())
    }

    pub fn series_capacitance(&self) -> T {
        self.c_each / T::from_usize(self.n_caps).unwrap()
    }

    pub fn resonant_frequency(&self) -> T {
        T::one() / (T::TAU() * (self.l * self.series_capacitance()).sqrt())
    }

    /// Impedance of the series string alone, without the stray shunt.
    pub fn series_impedance(&self, f: T) -> Complex<T> {
        let w = omega(f);
        let x = w * self.l - T::one() / (w * self.series_capacitance());
        Complex::new(self.r, x)
    }
}

impl<T: Real> Resonator<T> for ReaderCircuit<T> {
    fn impedance(&self, f: T) -> Complex<T> {
        let zs = self.series_impedance(f);
        if self.parasitic_c == T::zero() {
            return zs;
        }
        let shunt = Complex::new(T::zero(), omega(f) * self.parasitic_c);
        zs / (Complex::new(T::one(), T::zero()) + shunt * zs)
    }

    fn inductance(&self) -> T {
        self.l
    }

    fn resistance(&self) -> T {
        self.r
    }
}

/// Relative component deviations of a nominally identical twin reader.
/// `cap_rel` applies to a single one of the distributed capacitors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"), default)]
pub struct ComponentMismatch<T> {
    pub r_rel: T,
    pub l_rel: T,
    pub cap_rel: T,
}

impl<T: Real> ComponentMismatch<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: T| x.is_finite() && x > -T::one();
        if !(ok(self.r_rel) && ok(self.l_rel) && ok(self.cap_rel)) {
            return Err(invalid("mismatch fractions must be finite and > -1"));
        }
        Ok(())
    }
}

impl<T: Real> ReaderCircuit<T> {
    /// Terminal impedance of a twin whose components deviate by `m`.
    pub fn impedance_with_mismatch(&self, m: &ComponentMismatch<T>, f: T) -> Complex<T> {
        if *m == ComponentMismatch::default() {
            return self.impedance(f);
        }
        let w = omega(f);
        let n = T::from_usize(self.n_caps).unwrap();
        let xc = T::one() / (w * self.c_each);
        let x = w * self.l * (T::one() + m.l_rel) - xc * (n - T::one()) - xc / (T::one() + m.cap_rel);
        let zs = Complex::new(self.r * (T::one() + m.r_rel), x);
        if self.parasitic_c == T::zero() {
            return zs;
        }
        let shunt = Complex::new(T::zero(), w * self.parasitic_c);
        zs / (Complex::new(T::one(), T::zero()) + shunt * zs)
    }
}

/// State of the tag's load-modulation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModState {
    /// Switch open: the load is in circuit.
    #[default]
    Open,
    /// Switch closed: the load is bypassed.
    Shorted,
}

/// Sensor tag resonator with a load (chip surrogate or power load).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SensorCircuit<T> {
    pub r_s: T,
    pub l_s: T,
    pub c_s: T,
    pub load: Complex<T>,
    #[serde(default)]
    pub mod_state: ModState,
}

impl<T: Real> SensorCircuit<T> {
    /// Tag tuned to `f0` whose unloaded quality factor at `f0` is `q`.
    pub fn with_q(l_s: T, q: T, f0: T, load: Complex<T>) -> Result<Self> {
        let w = omega(f0);
        let c = Self {
            r_s: w * l_s / q,
            l_s,
            c_s: T::one() / (w * w * l_s),
            load,
            mod_state: ModState::Open,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_s > T::zero() && self.l_s > T::zero() && self.c_s > T::zero()) {
            return Err(invalid("sensor R_s, L_s and C_s must be positive"));
        }
        if !(self.load.re >= T::zero()) {
            return Err(invalid("sensor load must be passive"));
        }
        Ok(())
    }

    pub fn resonant_frequency(&self) -> T {
        T::one() / (T::TAU() * (self.l_s * self.c_s).sqrt())
    }

    /// Unloaded coil impedance `R_s + jωL_s + 1/(jωC_s)`.
    pub fn coil_impedance(&self, f: T) -> Complex<T> {
        let w = omega(f);
        Complex::new(self.r_s, w * self.l_s - T::one() / (w * self.c_s))
    }

    pub fn with_state(&self, state: ModState) -> Self {
        Self {
            mod_state: state,
            ..*self
        }
    }

    pub fn with_load(&self, load: Complex<T>) -> Self {
        Self { load, ..*self }
    }
}

impl<T: Real> Resonator<T> for SensorCircuit<T> {
    fn impedance(&self, f: T) -> Complex<T> {
        match self.mod_state {
            ModState::Open => self.coil_impedance(f) + self.load,
            ModState::Shorted => self.coil_impedance(f),
        }
    }

    fn inductance(&self) -> T {
        self.l_s
    }

    fn resistance(&self) -> T {
        self.r_s
    }
}

/// Magnetic coupling between a reader and a tag at frequency `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct InductiveLink<T> {
    pub m: T,
    pub k: T,
    pub f: T,
}

impl<T: Real> InductiveLink<T> {
    pub fn from_k(k: T, l_reader: T, l_sensor: T, f: T) -> Result<Self> {
        if !(k.abs() <= T::one()) {
            return Err(invalid("|k| must not exceed 1"));
        }
        Ok(Self {
            m: k * (l_reader * l_sensor).sqrt(),
            k,
            f,
        })
    }

    pub fn from_mutual(m: T, l_reader: T, l_sensor: T, f: T) -> Result<Self> {
        Self::from_k(m / (l_reader * l_sensor).sqrt(), l_reader, l_sensor, f)
    }

    /// `ωM`, the transimpedance of the coupling.
    pub fn coupling_reactance(&self) -> T {
        omega(self.f) * self.m
    }
}

/// Per-capacitor value that tunes `n_caps` equal series capacitors with `l` to `f0`.
pub fn tune_distributed_caps<T: Real>(l: T, f0: T, n_caps: usize) -> Result<T> {
    if n_caps == 0 {
        return Err(invalid("n_caps must be >= 1"));
    }
    if !(l > T::zero() && f0 > T::zero()) {
        return Err(invalid("L and f0 must be positive"));
    }
    let w = omega(f0);
    Ok(T::from_usize(n_caps).unwrap() / (w * w * l))
}

/// `ΔZ = (2πfM)² / Z_sensor`.
pub fn reflected_impedance<T: Real>(link: &InductiveLink<T>, z_sensor: Complex<T>) -> Result<Complex<T>> {
    if !(z_sensor.norm() > T::zero()) {
        return Err(Error::DegenerateImpedance("sensor impedance is zero"));
    }
    let wm = link.coupling_reactance();
    Ok(Complex::new(wm * wm, T::zero()) / z_sensor)
}

/// `Z_in = Z_reader + ΔZ`.
pub fn input_impedance<T: Real>(z_reader: Complex<T>, dz: Complex<T>) -> Complex<T> {
    z_reader + dz
}

/// One tag loading a reader coil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagLoad<T> {
    pub link: InductiveLink<T>,
    pub z_sensor: Complex<T>,
}

/// Solves `A·x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear<T: Real>(mut a: Vec<Vec<Complex<T>>>, mut b: Vec<Complex<T>>) -> Result<Vec<Complex<T>>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(invalid("mesh matrix must be square and match the source vector"));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap())
            .unwrap();
        if !(a[pivot][col].norm() > T::zero()) {
            return Err(Error::DegenerateImpedance("singular mesh matrix"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == Complex::new(T::zero(), T::zero()) {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - factor * v;
            }
            let v = b[col];
            b[row] = b[row] - factor * v;
        }
    }
    let mut x = vec![Complex::new(T::zero(), T::zero()); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Reader input impedance with several tags from the full mesh equations.
/// `tag_mutual[i][j]` is the tag–tag mutual inductance (diagonal ignored).
pub fn input_impedance_mesh<T: Real>(
    z_reader: Complex<T>,
    tags: &[TagLoad<T>],
    tag_mutual: &[Vec<T>],
    f: T,
) -> Result<Complex<T>> {
    let n = tags.len() + 1;
    let zero = Complex::new(T::zero(), T::zero());
    let jw = |m: T| Complex::new(T::zero(), omega(f) * m);
    let mut a = vec![vec![zero; n]; n];
    a[0][0] = z_reader;
    for (i, t) in tags.iter().enumerate() {
        a[0][i + 1] = jw(t.link.m);
        a[i + 1][0] = jw(t.link.m);
        a[i + 1][i + 1] = t.z_sensor;
        for j in 0..tags.len() {
            if j != i {
                let m = tag_mutual.get(i).and_then(|r| r.get(j)).copied().unwrap_or(T::zero());
                a[i + 1][j + 1] = jw(m);
            }
        }
    }
    let mut b = vec![zero; n];
    b[0] = Complex::new(T::one(), T::zero());
    let i = solve_linear(a, b)?;
    if !(i[0].norm() > T::zero()) {
        return Err(Error::DegenerateImpedance("reader current vanished"));
    }
    Ok(Complex::new(T::one(), T::zero()) / i[0])
}

/// Tag–tag coupling above which superposition is replaced by the mesh solve.
pub const WEAK_TAG_COUPLING: f64 = 0.01;

/// Reader input impedance with several tags. Uses superposition of
/// reflected impedances unless some tag pair couples with `|k| > 0.01`.
pub fn input_impedance_multi<T: Real>(
    z_reader: Complex<T>,
    tags: &[TagLoad<T>],
    tag_k: &[Vec<T>],
    tag_inductance: &[T],
    f: T,
) -> Result<Complex<T>> {
    let strong = tag_k.iter().enumerate().any(|(i, row)| {
        row.iter()
            .enumerate()
            .any(|(j, &k)| i != j && k.abs() > T::lit(WEAK_TAG_COUPLING))
    });
    if strong {
        let m: Vec<Vec<T>> = tag_k
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &k)| k * (tag_inductance[i] * tag_inductance[j]).sqrt())
                    .collect()
            })
            .collect();
        return input_impedance_mesh(z_reader, tags, &m, f);
    }
    let mut z = z_reader;
    for t in tags {
        z = z + reflected_impedance(&t.link, t.z_sensor)?;
    }
    Ok(z)
}

/// Contiguous frequency interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Band<T> {
    pub low_hz: T,
    pub high_hz: T,
}

impl<T: Real> Band<T> {
    pub fn width(&self) -> T {
        self.high_hz - self.low_hz
    }

    pub fn contains(&self, low: T, high: T) -> bool {
        self.low_hz <= low && self.high_hz >= high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct RatioCurve<T> {
    pub freqs: Vec<T>,
    pub ratio: Vec<T>,
    /// Widest run of grid points with ratio below the threshold; zero width if none.
    pub balanced_band: Band<T>,
}

/// `|z1 − z2| / |z1|` over a shared frequency grid, and the widest balanced band.
pub fn impedance_difference_ratio<T: Real>(freqs: &[T], z1: &[Complex<T>], z2: &[Complex<T>]) -> Result<RatioCurve<T>> {
    if freqs.len() != z1.len() || freqs.len() != z2.len() || freqs.is_empty() {
        return Err(invalid("impedance curves must share a non-empty frequency grid"));
    }
    if freqs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("frequency grid must be strictly increasing"));
    }
    let ratio: Vec<T> = z1
        .iter()
        .zip(z2)
        .map(|(a, b)| (a - b).norm() / a.norm())
        .collect();
    let threshold = T::lit(BALANCE_THRESHOLD);
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for i in 0..=ratio.len() {
        let inside = i < ratio.len() && ratio[i] < threshold;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let width = freqs[i - 1] - freqs[s];
                if best.is_none_or(|(bs, be)| width > freqs[be] - freqs[bs]) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    let balanced_band = match best {
        Some((s, e)) => Band {
            low_hz: freqs[s],
            high_hz: freqs[e],
        },
        None => Band {
            low_hz: T::zero(),
            high_hz: T::zero(),
        },
    };
    Ok(RatioCurve {
        freqs: freqs.to_vec(),
        ratio,
        balanced_band,
    })
}

/// Uniform grid of `n` points over `[low, high]`.
pub fn linear_grid<T: Real>(low: T, high: T, n: usize) -> Vec<T> {
    let steps = T::from_usize(n.max(2) - 1).unwrap();
    (0..n.max(2))
        .map(|i| low + (high - low) * T::from_usize(i).unwrap() / steps)
        .collect()
}

/// Chip-element reference fitted to a coil at `f0`: same inductance,
/// resistance and reactance equal to the coil's terminal values at `f0`,
/// no stray shunt.
pub fn matched_chip_elements<T: Real>(coil: &ReaderCircuit<T>, f0: T) -> Result<ReaderCircuit<T>> {
    let z = coil.impedance(f0);
    let w = omega(f0);
    let xc = w * coil.l - z.im;
    if !(xc > T::zero()) {
        return Err(invalid("coil is above its self-resonance; no series fit exists"));
    }
    let fit = ReaderCircuit {
        r: z.re,
        l: coil.l,
        n_caps: 1,
        c_each: T::one() / (w * xc),
        parasitic_c: T::zero(),
    };
    fit.validate()?;
    Ok(fit)
}

/// Balanced band between `coil` and its fitted chip reference over `freqs`.
pub fn chip_balance_band<T: Real>(coil: &ReaderCircuit<T>, f0: T, freqs: &[T]) -> Result<Band<T>> {
    let chip = matched_chip_elements(coil, f0)?;
    let z1: Vec<_> = freqs.iter().map(|&f| coil.impedance(f)).collect();
    let z2: Vec<_> = freqs.iter().map(|&f| chip.impedance(f)).collect();
    Ok(impedance_difference_ratio(freqs, &z1, &z2)?.balanced_band)
}

/// Finds the stray shunt capacitance that narrows the coil-vs-chip balanced
/// band to `target_width` Hz. Bisects on `log(C_p)` within `[c_min, c_max]`.
pub fn calibrate_stray_shunt<T: Real>(
    coil: &ReaderCircuit<T>,
    f0: T,
    freqs: &[T],
    target_width: T,
    (c_min, c_max): (T, T),
) -> Result<T> {
    let width = |cp: T| -> Result<T> {
        let c = ReaderCircuit {
            parasitic_c: cp,
            ..*coil
        };
        Ok(chip_balance_band(&c, f0, freqs)?.width())
    };
    let (mut lo, mut hi) = (c_min.ln(), c_max.ln());
    let w_lo = width(c_min)?;
    let w_hi = width(c_max)?;
    if !(w_lo >= target_width && w_hi <= target_width) {
        return Err(Error::Calibration(format!(
            "balanced band {w_lo}..{w_hi} Hz over the shunt range does not bracket {target_width} Hz"
        )));
    }
    for _ in 0..80 {
        let mid = (lo + hi) * T::lit(0.5);
        if width(mid.exp())? > target_width {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(((lo + hi) * T::lit(0.5)).exp())
}

/// Balanced-bridge readout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct BridgeConfig<T> {
    pub r_amp: T,
    pub v_in: T,
}

impl<T: Real> Default for BridgeConfig<T> {
    fn default() -> Self {
        Self {
            r_amp: T::lit(1000.0),
            v_in: T::one(),
        }
    }
}

impl<T: Real> BridgeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_amp > T::zero() && self.v_in > T::zero()) {
            return Err(invalid("bridge R_amp and V_in must be positive"));
        }
        Ok(())
    }
}

/// `V_out = −R_amp·(V_in/Z_in1 − V_in/Z_in2)`.
pub fn bridge_output<T: Real>(cfg: &BridgeConfig<T>, z_in_1: Complex<T>, z_in_2: Complex<T>) -> Result<Complex<T>> {
    if !(z_in_1.norm() > T::zero() && z_in_2.norm() > T::zero()) {
        return Err(Error::DegenerateImpedance("bridge branch impedance is zero"));
    }
    let v = Complex::new(cfg.v_in, T::zero());
    let current = v / z_in_1 - v / z_in_2;
    Ok(current * (-cfg.r_amp))
}

/// First-order bridge response `R_amp·ΔZ/Z²·V_in` to a perturbation `dz` of branch 1.
pub fn bridge_first_order<T: Real>(cfg: &BridgeConfig<T>, z: Complex<T>, dz: Complex<T>) -> Complex<T> {
    dz / (z * z) * (cfg.r_amp * cfg.v_in)
}

/// Output of a plain inverting amplifier on a single reader coil,
/// `V_out = −R_amp·V_in/Z_in`.
pub fn inverting_amplifier_output<T: Real>(cfg: &BridgeConfig<T>, z_in: Complex<T>) -> Result<Complex<T>> {
    if !(z_in.norm() > T::zero()) {
        return Err(Error::DegenerateImpedance("reader impedance is zero"));
    }
    Ok(Complex::new(cfg.v_in, T::zero()) / z_in * (-cfg.r_amp))
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    fn tops() -> ReaderCircuit<f64> {
        ReaderCircuit {
            r: 18.0,
            l: 2.2e-6,
            n_caps: 4,
            c_each: 250e-12,
            parasitic_c: 0.0,
        }
    }

    #[test]
    fn q_factor_of_garment_coils() {
        assert!((q_factor(2.2e-6, 18.0, CARRIER_HZ) - 10.41).abs() < 0.05);
        assert!((q_factor(3.0e-6, 23.0, CARRIER_HZ) - 11.12).abs() < 0.05);
        assert!(q_factor(2.2e-6, 1e9, CARRIER_HZ) < 1e-6);
    }

    #[test]
    fn tops_reader_is_near_resonant_at_carrier() {
        let z = tops().impedance(CARRIER_HZ);
        assert!(z.im.abs() < 0.05 * z.norm(), "{z}");
    }

    #[test]
    fn impedance_is_real_at_resonance_and_inductive_above() {
        let c = ReaderCircuit::tuned(18.0, 2.2e-6, 4, CARRIER_HZ).unwrap();
        let f0 = c.resonant_frequency();
        let z = c.impedance(f0);
        assert!((z.re - 18.0).abs() < 1e-9 && z.im.abs() < 1e-9);
        assert!(c.impedance(2.0 * f0).im > 0.0);
        assert!(c.impedance(0.5 * f0).im < 0.0);
    }

    #[test]
    fn distributed_caps_match_garment_values() {
        let tops = tune_distributed_caps(2.2e-6, CARRIER_HZ, 4).unwrap();
        assert!((tops / 250e-12 - 1.0).abs() < 0.02, "{tops}");
        let bottoms = tune_distributed_caps(3.0e-6, CARRIER_HZ, 5).unwrap();
        assert!((bottoms / 230e-12 - 1.0).abs() < 0.02, "{bottoms}");
        let one = tune_distributed_caps(2.2e-6, CARRIER_HZ, 1).unwrap();
        assert!((one - tops / 4.0).abs() < 1e-24);
        assert!(tune_distributed_caps(2.2e-6, CARRIER_HZ, 0).is_err());
    }

    #[test]
    fn reflected_impedance_cases() {
        let zero = InductiveLink::from_k(0.0, 2.2e-6, 2e-6, CARRIER_HZ).unwrap();
        assert_eq!(reflected_impedance(&zero, C::new(5.0, 0.0)).unwrap(), C::new(0.0, 0.0));
        assert!(reflected_impedance(&zero, C::new(0.0, 0.0)).is_err());
        assert!(InductiveLink::from_k(1.5, 1e-6, 1e-6, CARRIER_HZ).is_err());
        // Passive sensor reflects a passive load.
        let link = InductiveLink::from_k(0.3, 2.2e-6, 2e-6, CARRIER_HZ).unwrap();
        for z in [C::new(1.0, 50.0), C::new(3.0, -40.0), C::new(0.0, 7.0)] {
            assert!(reflected_impedance(&link, z).unwrap().re >= 0.0);
        }
    }

    #[test]
    fn input_impedance_adds() {
        let z = C::new(18.0, 0.0);
        assert_eq!(input_impedance(z, C::new(0.0, 0.0)), z);
        let zin = input_impedance(z, C::new(1.0, 0.0));
        assert_eq!(zin, C::new(19.0, 0.0));
        assert!(((zin.norm() - z.norm()) / z.norm() - 0.0556).abs() < 1e-3);
    }

    #[test]
    fn superposition_matches_mesh_for_weakly_coupled_tags() {
        let f = CARRIER_HZ;
        let zr = C::new(18.0, 0.0);
        let tag = SensorCircuit::with_q(2e-6, 34.0, f, C::new(47.0, 0.0)).unwrap();
        let l1 = InductiveLink::from_k(0.03, 2.2e-6, 2e-6, f).unwrap();
        let l2 = InductiveLink::from_k(0.02, 2.2e-6, 2e-6, f).unwrap();
        let tags = [
            TagLoad { link: l1, z_sensor: tag.impedance(f) },
            TagLoad { link: l2, z_sensor: tag.impedance(f) },
        ];
        let none = vec![vec![0.0; 2]; 2];
        let mesh = input_impedance_mesh(zr, &tags, &none, f).unwrap();
        let sum = input_impedance_multi(zr, &tags, &none, &[2e-6, 2e-6], f).unwrap();
        assert!((mesh - sum).norm() < 1e-9);
        // Strong tag-tag coupling takes the mesh path.
        let strong = vec![vec![0.0, 0.2], vec![0.2, 0.0]];
        let m = vec![vec![0.0, 0.2 * 2e-6], vec![0.2 * 2e-6, 0.0]];
        let auto = input_impedance_multi(zr, &tags, &strong, &[2e-6, 2e-6], f).unwrap();
        let exact = input_impedance_mesh(zr, &tags, &m, f).unwrap();
        assert!((auto - exact).norm() < 1e-12);
        assert!((auto - sum).norm() > 1e-3);
    }

    #[test]
    fn ratio_of_identical_curves_spans_the_grid() {
        let freqs = linear_grid(11e6, 15e6, 401);
        let z: Vec<_> = freqs.iter().map(|&f| tops().impedance(f)).collect();
        let r = impedance_difference_ratio(&freqs, &z, &z).unwrap();
        assert!(r.ratio.iter().all(|&x| x == 0.0));
        assert_eq!(r.balanced_band.low_hz, 11e6);
        assert_eq!(r.balanced_band.high_hz, 15e6);
    }

    #[test]
    fn ratio_without_balance_is_empty() {
        let freqs = linear_grid(11e6, 15e6, 11);
        let z1: Vec<_> = freqs.iter().map(|_| C::new(1.0, 0.0)).collect();
        let z2: Vec<_> = freqs.iter().map(|_| C::new(2.0, 0.0)).collect();
        let r = impedance_difference_ratio(&freqs, &z1, &z2).unwrap();
        assert_eq!(r.balanced_band.width(), 0.0);
        assert!(impedance_difference_ratio(&freqs[..3], &z1, &z2).is_err());
    }

    #[test]
    fn bridge_cases() {
        let cfg = BridgeConfig::default();
        let z = C::new(18.0, 3.0);
        assert_eq!(bridge_output(&cfg, z, z).unwrap(), C::new(0.0, 0.0));
        let v = bridge_output(&cfg, C::new(19.0, 0.0), C::new(18.0, 0.0)).unwrap();
        assert!((v.re - 2.924).abs() < 1e-3 && v.im == 0.0);
        assert!(bridge_output(&cfg, C::new(0.0, 0.0), z).is_err());
        let dz = C::new(1.0, 0.0);
        let on1 = bridge_output(&cfg, z + dz, z).unwrap();
        let on2 = bridge_output(&cfg, z, z + dz).unwrap();
        assert_eq!(on1, -on2);
        let lin = bridge_first_order(&cfg, z, dz);
        assert!((on1 - lin).norm() / lin.norm() < 0.1);
    }

    #[test]
    fn stray_shunt_narrows_chip_balance() {
        let freqs = linear_grid(11e6, 15e6, 4001);
        let coil = ReaderCircuit::tuned(18.0, 2.2e-6, 4, CARRIER_HZ).unwrap();
        let wide = chip_balance_band(&coil, CARRIER_HZ, &freqs).unwrap();
        assert_eq!(wide.width(), 4e6);
        let cp = calibrate_stray_shunt(&coil, CARRIER_HZ, &freqs, 0.2e6, (1e-12, 1e-9)).unwrap();
        let narrow = chip_balance_band(
            &ReaderCircuit { parasitic_c: cp, ..coil },
            CARRIER_HZ,
            &freqs,
        )
        .unwrap();
        assert!((narrow.width() - 0.2e6).abs() <= 2e3, "{narrow:?}");
    }
    #[test]
    fn twin_with_one_percent_mismatch_covers_subcarrier_band() {
        let coil = ReaderCircuit::tuned(18.0, 2.2e-6, 4, CARRIER_HZ).unwrap();
        let freqs = linear_grid(11e6, 15e6, 4001);
        let z1: Vec<_> = freqs.iter().map(|&f| coil.impedance(f)).collect();
        let lo = CARRIER_HZ - 848e3;
        let hi = CARRIER_HZ + 848e3;
        for m in [
            ComponentMismatch { r_rel: 0.01, ..Default::default() },
            ComponentMismatch { cap_rel: 0.01, ..Default::default() },
        ] {
            let z2: Vec<_> = freqs.iter().map(|&f| coil.impedance_with_mismatch(&m, f)).collect();
            let band = impedance_difference_ratio(&freqs, &z1, &z2).unwrap().balanced_band;
            assert!(band.contains(lo, hi), "{m:?}: {band:?}");
        }
        let zero = ComponentMismatch::default();
        assert_eq!(coil.impedance_with_mismatch(&zero, CARRIER_HZ), coil.impedance(CARRIER_HZ));
    }
}
