//! Declarative experiments: scenario configs, validation, canonical hashing,
//! garment calibration and the pipelines that write result tables.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::circuit::{
    calibrate_stray_shunt, chip_balance_band, impedance_difference_ratio, linear_grid, matched_chip_elements,
    tune_distributed_caps, BridgeConfig, ComponentMismatch, InductiveLink, ReaderCircuit, Resonator, SensorCircuit,
    CARRIER_HZ,
};
use crate::error::{Error, Result};
use crate::geometry::{
    discretize, make_circular_coil, make_helical_body_coil, make_meander, make_twin_meander, place, CoilPath,
    FilamentSet, MeanderSpec, MotionMode, MotionPerturbation, Placement, TwinMeanderSpec,
};
use crate::magnetics::{field_at, field_map, self_inductance, GridSpec};
use crate::num::Vec3;
use crate::phy::{
    ber_crossing, ber_sweep, calibrate_noise_density, derive_seed, front_end_response, BerChannel,
    FrontEnd, ModulationScheme, ReceiverConfig,
};
use crate::power::{max_powered_tags, optimal_load, output_power, LinkTemplate, MotionCase, PreparedLink};
use crate::protocol::{
    calibrate_slot_duration, run_session, FrameConfig, LinearCalibration, OutageInterval, SensorKind, SensorSignal,
    SessionSpec, TagDescriptor,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_frequency() -> f64 {
    CARRIER_HZ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelicalSpec {
    pub circumference: f64,
    pub turns: usize,
    pub pitch: f64,
    pub wire_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReaderGeometry {
    Meander(MeanderSpec<f64>),
    TwinMeander(TwinMeanderSpec<f64>),
    Helical(HelicalSpec),
    /// Explicit polyline in SI units.
    Path(CoilPath<f64>),
}

impl ReaderGeometry {
    /// Path of the (first) reader coil and, for twins, its congruent partner.
    pub fn build(&self) -> Result<(CoilPath<f64>, Option<CoilPath<f64>>)> {
        match self {
            ReaderGeometry::Meander(m) => Ok((make_meander(m)?, None)),
            ReaderGeometry::TwinMeander(t) => {
                let (a, b) = make_twin_meander(t)?;
                Ok((a, Some(b)))
            }
            ReaderGeometry::Helical(h) => Ok((
                make_helical_body_coil(h.circumference, h.turns, h.pitch, h.wire_radius)?,
                None,
            )),
            ReaderGeometry::Path(p) => Ok((p.clone(), None)),
        }
    }

    pub fn default_max_segment(&self) -> f64 {
        match self {
            ReaderGeometry::Meander(m) => m.default_max_segment(),
            ReaderGeometry::TwinMeander(t) => t.half.default_max_segment(),
            ReaderGeometry::Helical(h) => (h.circumference / 128.0).min(5e-3),
            ReaderGeometry::Path(p) => (p.length() / 256.0).clamp(1e-4, 5e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderCircuitSpec {
    pub r: f64,
    /// Inductance; the geometric value is used when absent.
    #[serde(default)]
    pub l: Option<f64>,
    pub n_caps: usize,
    /// Per-capacitor value; tuned to the scenario frequency when absent.
    #[serde(default)]
    pub c_each: Option<f64>,
    #[serde(default)]
    pub parasitic_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderSpec {
    pub geometry: ReaderGeometry,
    #[serde(default)]
    pub max_segment: Option<f64>,
    pub circuit: ReaderCircuitSpec,
    #[serde(default)]
    pub bridge: BridgeConfig<f64>,
    #[serde(default)]
    pub twin_mismatch: ComponentMismatch<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagCoilSpec {
    pub diameter: f64,
    pub turns: usize,
    pub pitch: f64,
    pub wire_radius: f64,
}

impl Default for TagCoilSpec {
    fn default() -> Self {
        Self {
            diameter: 0.03,
            turns: 6,
            pitch: 6e-4,
            wire_radius: 2e-4,
        }
    }
}

fn default_tag_segment() -> f64 {
    1e-3
}

fn default_load() -> Complex64 {
    Complex64::new(47.0, 0.0)
}

fn default_calibration() -> LinearCalibration {
    LinearCalibration {
        slope: 100.0,
        intercept: 30.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub uid: u64,
    #[serde(default = "default_kind")]
    pub sensor_kind: SensorKind,
    #[serde(default)]
    pub coil: TagCoilSpec,
    #[serde(default = "default_tag_segment")]
    pub max_segment: f64,
    /// Rotation applied in the tag frame, then translation to the tag base.
    pub placement: Placement<f64>,
    pub q: f64,
    /// Chip surrogate load with the modulation switch open.
    #[serde(default = "default_load")]
    pub load_ohms: Complex64,
    #[serde(default = "default_calibration")]
    pub calibration: LinearCalibration,
    #[serde(default = "SensorSignal::textile_temperature")]
    pub signal: SensorSignal,
}

fn default_kind() -> SensorKind {
    SensorKind::Temperature
}

impl TagSpec {
    pub fn reference(uid: u64, position: Vec3<f64>) -> Self {
        Self {
            uid,
            sensor_kind: SensorKind::Temperature,
            coil: TagCoilSpec::default(),
            max_segment: default_tag_segment(),
            placement: Placement::translation(position),
            q: 34.0,
            load_ohms: default_load(),
            calibration: default_calibration(),
            signal: SensorSignal::textile_temperature(),
        }
    }

    /// Tag path in the reader frame's orientation, base at the origin.
    pub fn local_path(&self) -> Result<CoilPath<f64>> {
        let c = &self.coil;
        let path = make_circular_coil(c.diameter, c.turns, c.pitch, c.wire_radius)?;
        Ok(place(
            &path,
            &Placement {
                translation: Vec3::zero(),
                rotation: self.placement.rotation,
            },
        ))
    }

    pub fn descriptor(&self) -> TagDescriptor {
        TagDescriptor {
            uid: self.uid,
            sensor_kind: self.sensor_kind,
            position: self.placement,
            calibration: self.calibration,
            signal: self.signal,
        }
    }
}

/// Inclusive arithmetic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn validate(&self) -> Result<()> {
        let n = (self.stop - self.start) / self.step;
        if !(self.start.is_finite() && self.stop.is_finite() && self.step > 0.0 && n >= -1e-9 && n < 1e6) {
            return Err(Error::InvalidSpec(
                "range needs finite start <= stop and a positive step".into(),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMapSweep {
    pub grid: GridSpec<f64>,
    pub current: f64,
    /// Depths above the reader surface for the confinement profile.
    #[serde(default)]
    pub depths: Vec<f64>,
    /// Turns of the equal-wire-length helical baseline in the profile.
    #[serde(default = "default_helical_turns")]
    pub helical_turns: usize,
}

fn default_helical_turns() -> usize {
    7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceSweep {
    pub f_start: f64,
    pub f_stop: f64,
    pub points: usize,
    /// When set, the stray shunt is calibrated so the coil-vs-chip balanced
    /// band has this width (Hz).
    #[serde(default)]
    pub chip_band_target_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSweep {
    pub p_in_w: f64,
    #[serde(default)]
    pub tag: usize,
    #[serde(default)]
    pub offsets: Option<Range>,
    #[serde(default)]
    pub heights: Option<Range>,
    #[serde(default)]
    pub motions: Vec<MotionCase<f64>>,
    #[serde(default = "default_led")]
    pub led_threshold_w: f64,
    #[serde(default = "default_max_tags")]
    pub max_tags: usize,
}

fn default_led() -> f64 {
    crate::power::LED_THRESHOLD_W
}

fn default_max_tags() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    Fixed {
        noise_density: f64,
    },
    /// One-point calibration: `scheme_kbps` on the twin bridge reaches
    /// `target_ber` at `p_in_dbm`.
    Calibrate {
        scheme_kbps: u32,
        p_in_dbm: f64,
        target_ber: f64,
        bits: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerSweep {
    pub schemes_kbps: Vec<u32>,
    pub front_ends: Vec<FrontEnd>,
    pub p_in_dbm: Range,
    pub bits_per_point: u64,
    #[serde(default = "default_payload")]
    pub payload_bits_per_frame: usize,
    #[serde(default)]
    pub tag: usize,
    #[serde(default)]
    pub receiver: ReceiverConfig,
    pub noise: NoiseSpec,
}

fn default_payload() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSweep {
    pub duration_s: f64,
    /// Tag counts to run; extra tags beyond the configured ones are
    /// synthesized temperature tags.
    pub tag_counts: Vec<usize>,
    /// Calibrates the slot duration so `calibration_tags` tags each reach this rate.
    #[serde(default)]
    pub target_rate_hz: Option<f64>,
    #[serde(default = "default_calibration_tags")]
    pub calibration_tags: usize,
    #[serde(default)]
    pub link_ber: f64,
    #[serde(default)]
    pub outage: Option<OutageInterval>,
}

fn default_calibration_tags() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweeps {
    #[serde(default)]
    pub field_map: Option<FieldMapSweep>,
    #[serde(default)]
    pub impedance: Option<ImpedanceSweep>,
    #[serde(default)]
    pub power: Option<PowerSweep>,
    #[serde(default)]
    pub ber: Option<BerSweep>,
    #[serde(default)]
    pub protocol: Option<ProtocolSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    pub reader: ReaderSpec,
    #[serde(default)]
    pub tags: Vec<TagSpec>,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub sweeps: Sweeps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    FieldMap,
    Impedance,
    Power,
    Ber,
    Protocol,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::FieldMap,
        Pipeline::Impedance,
        Pipeline::Power,
        Pipeline::Ber,
        Pipeline::Protocol,
    ];
}

fn collect(errs: &mut Vec<String>, path: &str, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Validation(list)) => errs.extend(list.into_iter().map(|e| format!("{path}: {e}"))),
        Err(e) => errs.push(format!("{path}: {e}")),
    }
}

fn check(errs: &mut Vec<String>, ok: bool, msg: &str) {
    if !ok {
        errs.push(msg.to_string());
    }
}

impl ScenarioConfig {
    /// Sweeps that are configured, in execution order.
    pub fn pipelines(&self) -> Vec<Pipeline> {
        let s = &self.sweeps;
        let present = [
            s.field_map.is_some(),
            s.impedance.is_some(),
            s.power.is_some(),
            s.ber.is_some(),
            s.protocol.is_some(),
        ];
        Pipeline::ALL
            .into_iter()
            .zip(present)
            .filter_map(|(p, on)| on.then_some(p))
            .collect()
    }

    /// Checks every component and returns all problems with their field paths.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        check(&mut e, self.frequency_hz > 0.0, "frequency_hz: must be > 0");
        let r = &self.reader;
        collect(
            &mut e,
            "reader.geometry",
            match &r.geometry {
                ReaderGeometry::Meander(m) => m.validate(),
                ReaderGeometry::TwinMeander(t) => make_twin_meander(t).map(|_| ()),
                ReaderGeometry::Helical(h) => {
                    make_helical_body_coil(h.circumference, h.turns, h.pitch, h.wire_radius).map(|_| ())
                }
                ReaderGeometry::Path(_) => Ok(()),
            },
        );
        if let Some(s) = r.max_segment {
            check(&mut e, s > 0.0, "reader.max_segment: must be > 0");
        }
        let c = &r.circuit;
        check(&mut e, c.r > 0.0, "reader.circuit.r: must be > 0");
        check(&mut e, c.n_caps >= 1, "reader.circuit.n_caps: must be >= 1");
        check(&mut e, c.l.is_none_or(|l| l > 0.0), "reader.circuit.l: must be > 0");
        check(&mut e, c.c_each.is_none_or(|x| x > 0.0), "reader.circuit.c_each: must be > 0");
        check(&mut e, c.parasitic_c >= 0.0, "reader.circuit.parasitic_c: must be >= 0");
        collect(&mut e, "reader.bridge", r.bridge.validate());
        collect(&mut e, "reader.twin_mismatch", r.twin_mismatch.validate());

        let mut uids = BTreeSet::new();
        for (i, t) in self.tags.iter().enumerate() {
            let p = format!("tags[{i}]");
            check(&mut e, uids.insert(t.uid), &format!("{p}.uid: duplicate uid {}", t.uid));
            collect(&mut e, &format!("{p}.coil"), t.local_path().map(|_| ()));
            check(&mut e, t.max_segment > 0.0, &format!("{p}.max_segment: must be > 0"));
            collect(&mut e, &format!("{p}.placement"), t.placement.validate());
            check(&mut e, t.q > 0.0, &format!("{p}.q: must be > 0"));
            check(&mut e, t.load_ohms.re >= 0.0, &format!("{p}.load_ohms: must be passive"));
            collect(&mut e, &format!("{p}.calibration"), t.calibration.validate());
        }
        collect(&mut e, "frame", self.frame.validate());

        let s = &self.sweeps;
        let tag_ref = |e: &mut Vec<String>, path: &str, idx: usize| {
            check(e, idx < self.tags.len(), &format!("{path}: refers to a missing tag"));
        };
        if let Some(f) = &s.field_map {
            collect(&mut e, "sweeps.field_map.grid", f.grid.validate());
            check(&mut e, f.current.is_finite(), "sweeps.field_map.current: must be finite");
            check(&mut e, f.depths.iter().all(|d| *d > 0.0), "sweeps.field_map.depths: must be > 0");
            check(&mut e, f.helical_turns >= 1, "sweeps.field_map.helical_turns: must be >= 1");
        }
        if let Some(z) = &s.impedance {
            check(
                &mut e,
                z.f_start > 0.0 && z.f_stop > z.f_start && z.points >= 2,
                "sweeps.impedance: needs 0 < f_start < f_stop and points >= 2",
            );
            check(
                &mut e,
                z.chip_band_target_hz.is_none_or(|b| b > 0.0),
                "sweeps.impedance.chip_band_target_hz: must be > 0",
            );
        }
        if let Some(p) = &s.power {
            check(&mut e, p.p_in_w >= 0.0, "sweeps.power.p_in_w: must be >= 0");
            tag_ref(&mut e, "sweeps.power.tag", p.tag);
            if let Some(o) = &p.offsets {
                collect(&mut e, "sweeps.power.offsets", o.validate());
            }
            if let Some(h) = &p.heights {
                collect(&mut e, "sweeps.power.heights", h.validate());
            }
            for (i, m) in p.motions.iter().enumerate() {
                if let Some(pert) = &m.perturbation {
                    collect(&mut e, &format!("sweeps.power.motions[{i}]"), pert.validate());
                }
            }
        }
        if let Some(b) = &s.ber {
            check(&mut e, !b.schemes_kbps.is_empty(), "sweeps.ber.schemes_kbps: must not be empty");
            for k in &b.schemes_kbps {
                collect(&mut e, "sweeps.ber.schemes_kbps", ModulationScheme::from_kbps(*k).map(|_| ()));
            }
            check(&mut e, !b.front_ends.is_empty(), "sweeps.ber.front_ends: must not be empty");
            collect(&mut e, "sweeps.ber.p_in_dbm", b.p_in_dbm.validate());
            check(&mut e, b.bits_per_point > 0, "sweeps.ber.bits_per_point: must be > 0");
            check(&mut e, b.payload_bits_per_frame > 0, "sweeps.ber.payload_bits_per_frame: must be > 0");
            tag_ref(&mut e, "sweeps.ber.tag", b.tag);
            collect(&mut e, "sweeps.ber.receiver", b.receiver.validate());
            match b.noise {
                NoiseSpec::Fixed { noise_density } => {
                    check(&mut e, noise_density >= 0.0, "sweeps.ber.noise.noise_density: must be >= 0")
                }
                NoiseSpec::Calibrate {
                    scheme_kbps,
                    target_ber,
                    bits,
                    ..
                } => {
                    collect(
                        &mut e,
                        "sweeps.ber.noise.scheme_kbps",
                        ModulationScheme::from_kbps(scheme_kbps).map(|_| ()),
                    );
                    check(
                        &mut e,
                        target_ber > 0.0 && target_ber < 0.5,
                        "sweeps.ber.noise.target_ber: must be in (0, 0.5)",
                    );
                    check(&mut e, bits > 0, "sweeps.ber.noise.bits: must be > 0");
                }
            }
        }
        if let Some(p) = &s.protocol {
            check(&mut e, p.duration_s > 0.0, "sweeps.protocol.duration_s: must be > 0");
            check(&mut e, !p.tag_counts.is_empty(), "sweeps.protocol.tag_counts: must not be empty");
            check(&mut e, (0.0..=0.5).contains(&p.link_ber), "sweeps.protocol.link_ber: must be in [0, 0.5]");
            check(
                &mut e,
                p.target_rate_hz.is_none_or(|r| r > 0.0),
                "sweeps.protocol.target_rate_hz: must be > 0",
            );
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(e))
        }
    }

    /// Hex SHA-256 of the sorted-key JSON serialization.
    pub fn canonical_hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses and validates JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::Validation(vec![e.inner().to_string()])
            } else {
                Error::Validation(vec![format!("{path}: {}", e.inner())])
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One reader and one tag, no sweeps.
    pub fn minimal() -> Self {
        Self {
            name: "minimal".into(),
            seed: 1,
            frequency_hz: CARRIER_HZ,
            reader: ReaderSpec {
                geometry: ReaderGeometry::Meander(tops_meander()),
                max_segment: None,
                circuit: ReaderCircuitSpec {
                    r: 18.0,
                    l: None,
                    n_caps: 4,
                    c_each: None,
                    parasitic_c: 0.0,
                },
                bridge: BridgeConfig::default(),
                twin_mismatch: ComponentMismatch::default(),
            },
            tags: vec![TagSpec::reference(1, Vec3::new(0.0, 0.0, REFERENCE_TAG_HEIGHT))],
            frame: FrameConfig::default(),
            sweeps: Sweeps::default(),
        }
    }

    /// Desk-scale reproduction of the garment study: field maps, impedance
    /// balance, power sweeps, BER sweeps and a multi-tag session.
    pub fn paper_repro() -> Self {
        let mut c = Self::minimal();
        c.name = "paper-repro".into();
        c.seed = 2024;
        c.reader.twin_mismatch = ComponentMismatch {
            cap_rel: 0.01,
            ..Default::default()
        };
        let m = tops_meander();
        c.sweeps = Sweeps {
            field_map: Some(FieldMapSweep {
                grid: GridSpec {
                    origin: Vec3::new(-0.3, -0.3, 0.01),
                    axis_u: Vec3::unit_x(),
                    axis_v: Vec3::unit_y(),
                    nx: 61,
                    ny: 61,
                    spacing: 0.01,
                },
                current: 1.0,
                depths: vec![0.01, 0.02, 0.03, 0.05, 0.1],
                helical_turns: default_helical_turns(),
            }),
            impedance: Some(ImpedanceSweep {
                f_start: 11e6,
                f_stop: 15e6,
                points: 4001,
                chip_band_target_hz: Some(0.2e6),
            }),
            power: Some(PowerSweep {
                p_in_w: 0.1,
                tag: 0,
                offsets: Some(Range {
                    start: -0.03,
                    stop: 0.03,
                    step: 0.005,
                }),
                heights: Some(Range {
                    start: 0.005,
                    stop: 0.1,
                    step: 0.005,
                }),
                motions: standard_motions(m.wire_spacing),
                led_threshold_w: default_led(),
                max_tags: default_max_tags(),
            }),
            ber: Some(BerSweep {
                schemes_kbps: vec![106, 212, 424, 848],
                front_ends: vec![FrontEnd::TwinBridge, FrontEnd::SingleCoil],
                p_in_dbm: Range {
                    start: -30.0,
                    stop: 10.0,
                    step: 2.0,
                },
                bits_per_point: 100_000,
                payload_bits_per_frame: default_payload(),
                tag: 0,
                receiver: ReceiverConfig::default(),
                noise: NoiseSpec::Calibrate {
                    scheme_kbps: 848,
                    p_in_dbm: BER_CALIBRATION_DBM,
                    target_ber: 1e-3,
                    bits: 200_000,
                },
            }),
            protocol: Some(ProtocolSweep {
                duration_s: 120.0,
                tag_counts: vec![1, 4, 8],
                target_rate_hz: Some(1.5),
                calibration_tags: 4,
                link_ber: 0.0,
                outage: None,
            }),
        };
        c
    }
}

/// Drive level at which the worst NFC-A rate is calibrated to BER 1e-3,
/// one dB below the −10 dBm operating point.
pub const BER_CALIBRATION_DBM: f64 = -11.0;

/// Reference tag base height above the reader centerline, m.
pub const REFERENCE_TAG_HEIGHT: f64 = 0.006;

/// Tops-panel meander reaching 2.2 µH.
pub fn tops_meander() -> MeanderSpec<f64> {
    MeanderSpec {
        panel_width: 0.5,
        panel_height: 0.48,
        wire_spacing: 0.04,
        wire_radius: 0.005,
        n_runs: 12,
    }
}

/// Standing, stretch, bend, random-smooth and a legs-crossed outage.
pub fn standard_motions(wavelength: f64) -> Vec<MotionCase<f64>> {
    let case = |label: &str, mode, amplitude, spatial_wavelength| MotionCase {
        label: label.into(),
        perturbation: Some(MotionPerturbation {
            mode,
            amplitude,
            spatial_wavelength,
            seed: 7,
        }),
        outage: false,
    };
    vec![
        MotionCase {
            label: "standing".into(),
            perturbation: None,
            outage: false,
        },
        case("stretch-5pct", MotionMode::Stretch, 0.05, wavelength),
        case("torso-bend", MotionMode::Bend, 1.0, 0.15),
        case("walking", MotionMode::RandomSmooth, 0.003, 0.3),
        MotionCase {
            label: "legs-crossed".into(),
            perturbation: None,
            outage: true,
        },
    ]
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_scenario(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_json_pretty())?;
    Ok(())
}

/// Targets for sizing a garment meander.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarmentTargets {
    pub l: f64,
    pub r: f64,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub k_at_reference_tag: Option<f64>,
}

/// Search space: run spacing, wire radius and panel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarmentBounds {
    pub panel_width: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub wire_spacing: f64,
    pub wire_radius: f64,
    pub n_caps: usize,
}

impl Default for GarmentBounds {
    fn default() -> Self {
        Self {
            panel_width: 0.5,
            min_height: 0.2,
            max_height: 0.6,
            wire_spacing: 0.04,
            wire_radius: 0.005,
            n_caps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentCalibration {
    pub meander: MeanderSpec<f64>,
    pub circuit: ReaderCircuit<f64>,
    pub achieved_l: f64,
    pub achieved_q: f64,
    pub target_q: Option<f64>,
    pub l_residual: f64,
    pub achieved_k: Option<f64>,
    pub target_k: Option<f64>,
}

fn meander_l(spec: &MeanderSpec<f64>) -> Result<f64> {
    self_inductance(&discretize(&make_meander(spec)?, spec.default_max_segment())?)
}

/// Sizes a meander for the target inductance: the fewest runs whose height
/// range brackets `L`, then bisection on panel height. `R` is set directly.
pub fn calibrate_garment(targets: &GarmentTargets, bounds: &GarmentBounds, f: f64) -> Result<GarmentCalibration> {
    if !(targets.l > 0.0 && targets.r > 0.0) || targets.q.is_some_and(|q| q <= 0.0) {
        return Err(Error::InvalidSpec("garment targets must be positive".into()));
    }
    let spec = |n_runs, h| MeanderSpec {
        panel_width: bounds.panel_width,
        panel_height: h,
        wire_spacing: bounds.wire_spacing,
        wire_radius: bounds.wire_radius,
        n_runs,
    };
    let max_runs = (bounds.panel_width / bounds.wire_spacing).floor() as usize + 1;
    let mut best: Option<(f64, MeanderSpec<f64>, f64)> = None;
    let mut chosen = None;
    for n in 2..=max_runs {
        let lo = spec(n, bounds.min_height);
        let hi = spec(n, bounds.max_height);
        if lo.validate().is_err() {
            continue;
        }
        let (l_lo, l_hi) = (meander_l(&lo)?, meander_l(&hi)?);
        for (l, s) in [(l_lo, lo), (l_hi, hi)] {
            let res = (l - targets.l).abs() / targets.l;
            if best.is_none_or(|b| res < b.0) {
                best = Some((res, s, l));
            }
        }
        if l_lo <= targets.l && targets.l <= l_hi {
            chosen = Some(n);
            break;
        }
    }
    let Some(n) = chosen else {
        let (res, s, l) = best.ok_or_else(|| Error::Calibration("no admissible meander in bounds".into()))?;
        if res <= 0.10 {
            return finish_calibration(targets, bounds, s, l, f);
        }
        return Err(Error::Calibration(format!(
            "target L {:.3e} H unreachable; best {:.3e} H ({} runs, {:.3} m), residual {:.1}%",
            targets.l,
            l,
            s.n_runs,
            s.panel_height,
            res * 100.0
        )));
    };
    let (mut lo, mut hi) = (bounds.min_height, bounds.max_height);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if meander_l(&spec(n, mid))? < targets.l {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-5 {
            break;
        }
    }
    let s = spec(n, 0.5 * (lo + hi));
    let l = meander_l(&s)?;
    finish_calibration(targets, bounds, s, l, f)
}

fn finish_calibration(
    targets: &GarmentTargets,
    bounds: &GarmentBounds,
    meander: MeanderSpec<f64>,
    l: f64,
    f: f64,
) -> Result<GarmentCalibration> {
    let bounds_caps = bounds.n_caps;
    let circuit = ReaderCircuit {
        r: targets.r,
        l,
        n_caps: bounds_caps,
        c_each: tune_distributed_caps(l, f, bounds_caps)?,
        parasitic_c: 0.0,
    };
    let achieved_k = match targets.k_at_reference_tag {
        Some(_) => {
            let tag = TagSpec::reference(0, Vec3::new(0.0, 0.0, REFERENCE_TAG_HEIGHT));
            let reader = discretize(&make_meander(&meander)?, meander.default_max_segment())?;
            let t = discretize(
                &tag.local_path()?.translated(tag.placement.translation),
                tag.max_segment,
            )?;
            Some(crate::magnetics::coupling_coefficient(&reader, &t)?)
        }
        None => None,
    };
    Ok(GarmentCalibration {
        meander,
        circuit,
        achieved_l: l,
        achieved_q: circuit.q_factor(f),
        target_q: targets.q,
        l_residual: (l - targets.l) / targets.l,
        achieved_k,
        target_k: targets.k_at_reference_tag,
    })
}

/// Result table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(csv_cell).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Value {
        json!({ "columns": self.columns, "rows": self.rows })
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) if s.contains(',') || s.contains('"') => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(format!("{x}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactBody {
    Table(Table),
    Json(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub body: ArtifactBody,
}

impl Artifact {
    fn table(name: &str, t: Table) -> Self {
        Self {
            name: name.into(),
            body: ArtifactBody::Table(t),
        }
    }

    fn json(name: &str, v: Value) -> Self {
        Self {
            name: name.into(),
            body: ArtifactBody::Json(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Identifies the config, code and seed behind an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ScenarioConfig) -> Self {
        Self {
            config_hash: cfg.canonical_hash(),
            code_version: CODE_VERSION.into(),
            seed: cfg.seed,
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# bodynfc {}\n# config_hash {}\n# seed {}\n",
            self.code_version, self.config_hash, self.seed
        )
    }
}

/// Writes artifacts into `dir`. Tables become CSV with a commented
/// provenance header, or JSON; JSON artifacts are always JSON.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact], prov: &Provenance, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for a in artifacts {
        let (path, text) = match (&a.body, format) {
            (ArtifactBody::Table(t), OutputFormat::Csv) => {
                (dir.join(format!("{}.csv", a.name)), prov.csv_header() + &t.to_csv())
            }
            (ArtifactBody::Table(t), OutputFormat::Json) => {
                let v = json!({ "provenance": prov, "columns": t.columns, "rows": t.rows });
                (dir.join(format!("{}.json", a.name)), serde_json::to_string_pretty(&v)? + "\n")
            }
            (ArtifactBody::Json(v), _) => {
                let v = json!({ "provenance": prov, "data": v });
                (dir.join(format!("{}.json", a.name)), serde_json::to_string_pretty(&v)? + "\n")
            }
        };
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Geometry and circuits derived from a config, shared by the pipelines.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub reader_path: CoilPath<f64>,
    pub twin_path: Option<CoilPath<f64>>,
    pub reader_filaments: FilamentSet<f64>,
    pub reader_l_geom: f64,
    pub reader: ReaderCircuit<f64>,
}

impl Prepared {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (reader_path, twin_path) = config.reader.geometry.build()?;
        let seg = config
            .reader
            .max_segment
            .unwrap_or_else(|| config.reader.geometry.default_max_segment());
        let reader_filaments = discretize(&reader_path, seg)?;
        let reader_l_geom = self_inductance(&reader_filaments)?;
        let c = &config.reader.circuit;
        let l = c.l.unwrap_or(reader_l_geom);
        let reader = ReaderCircuit {
            r: c.r,
            l,
            n_caps: c.n_caps,
            c_each: match c.c_each {
                Some(x) => x,
                None => tune_distributed_caps(l, config.frequency_hz, c.n_caps)?,
            },
            parasitic_c: c.parasitic_c,
        };
        reader.validate()?;
        Ok(Self {
            config: config.clone(),
            reader_path,
            twin_path,
            reader_filaments,
            reader_l_geom,
            reader,
        })
    }

    fn max_segment(&self) -> f64 {
        self.config
            .reader
            .max_segment
            .unwrap_or_else(|| self.config.reader.geometry.default_max_segment())
    }

    pub fn sensor(&self, tag: &TagSpec) -> Result<(SensorCircuit<f64>, f64)> {
        let path = tag.local_path()?;
        let l = self_inductance(&discretize(&path, tag.max_segment)?)?;
        Ok((
            SensorCircuit::with_q(l, tag.q, self.config.frequency_hz, tag.load_ohms)?,
            l,
        ))
    }

    pub fn link_template(&self, tag_index: usize, p_in: f64) -> Result<LinkTemplate<f64>> {
        let tag = self
            .config
            .tags
            .get(tag_index)
            .ok_or_else(|| Error::InvalidSpec(format!("tag {tag_index} does not exist")))?;
        let (sensor, _) = self.sensor(tag)?;
        Ok(LinkTemplate {
            reader_path: self.reader_path.clone(),
            reader_max_segment: self.max_segment(),
            reader: self.reader,
            tag_path: tag.local_path()?,
            tag_max_segment: tag.max_segment,
            sensor,
            nominal: tag.placement.translation,
            frequency: self.config.frequency_hz,
            p_in,
        })
    }

    pub fn prepared_link(&self, tag_index: usize, p_in: f64) -> Result<PreparedLink<f64>> {
        PreparedLink::new(self.link_template(tag_index, p_in)?)
    }

    /// Circuit of the twin reference coil (the second meander half when the
    /// geometry is a twin, otherwise a copy) with the configured mismatch.
    pub fn twin_impedance(&self, f: f64) -> Result<Complex64> {
        let base = match &self.twin_path {
            Some(p) => {
                let l2 = self_inductance(&discretize(p, self.max_segment())?)?;
                ReaderCircuit {
                    l: self.reader.l * l2 / self.reader_l_geom,
                    ..self.reader
                }
            }
            None => self.reader,
        };
        Ok(base.impedance_with_mismatch(&self.config.reader.twin_mismatch, f))
    }

    pub fn run(&self, pipeline: Pipeline) -> Result<Vec<Artifact>> {
        let s = &self.config.sweeps;
        let missing = || Error::InvalidSpec(format!("scenario has no {pipeline:?} sweep"));
        match pipeline {
            Pipeline::FieldMap => self.field_map_pipeline(s.field_map.as_ref().ok_or_else(missing)?),
            Pipeline::Impedance => self.impedance_pipeline(s.impedance.as_ref().ok_or_else(missing)?),
            Pipeline::Power => self.power_pipeline(s.power.as_ref().ok_or_else(missing)?),
            Pipeline::Ber => self.ber_pipeline(s.ber.as_ref().ok_or_else(missing)?),
            Pipeline::Protocol => self.protocol_pipeline(s.protocol.as_ref().ok_or_else(missing)?),
        }
    }

    fn field_map_pipeline(&self, sweep: &FieldMapSweep) -> Result<Vec<Artifact>> {
        let grid = field_map(&self.reader_filaments, sweep.current, &sweep.grid)?;
        let mut t = Table::new(&["x", "y", "z", "Bx", "By", "Bz", "|B|"]);
        for s in &grid.samples {
            let p = s.position;
            let row = if s.masked {
                vec![num(p.x), num(p.y), num(p.z), Value::Null, Value::Null, Value::Null, Value::Null]
            } else {
                vec![num(p.x), num(p.y), num(p.z), num(s.b.x), num(s.b.y), num(s.b.z), num(s.magnitude)]
            };
            t.push(row);
        }
        let mut out = vec![
            Artifact::table("field_map", t),
            Artifact::json("field_map_meta", grid.metadata_json()),
        ];
        if !sweep.depths.is_empty() {
            if let ReaderGeometry::Meander(m) = &self.config.reader.geometry {
                let profile = confinement_profile(m, &self.reader_filaments, sweep.helical_turns, &sweep.depths)?;
                let mut t = Table::new(&["depth_m", "B_meander_T", "B_helical_T"]);
                for (d, a, b) in profile {
                    t.push(vec![num(d), num(a * sweep.current), num(b * sweep.current)]);
                }
                out.push(Artifact::table("field_depth_profile", t));
            }
        }
        Ok(out)
    }

    fn impedance_pipeline(&self, sweep: &ImpedanceSweep) -> Result<Vec<Artifact>> {
        let f0 = self.config.frequency_hz;
        let freqs = linear_grid(sweep.f_start, sweep.f_stop, sweep.points);
        let mut reader = self.reader;
        let calibrated_cp = match sweep.chip_band_target_hz {
            Some(target) => {
                let cp = calibrate_stray_shunt(&reader, f0, &freqs, target, (1e-13, 1e-8))?;
                Some(cp)
            }
            None => None,
        };
        let z1: Vec<Complex64> = freqs.par_iter().map(|&f| reader.impedance(f)).collect();
        let z2: Vec<Complex64> = freqs
            .iter()
            .map(|&f| self.twin_impedance(f))
            .collect::<Result<_>>()?;
        let twin = impedance_difference_ratio(&freqs, &z1, &z2)?;
        if let Some(cp) = calibrated_cp {
            reader.parasitic_c = cp;
        }
        let chip = matched_chip_elements(&reader, f0)?;
        let zc: Vec<Complex64> = freqs.iter().map(|&f| reader.impedance(f)).collect();
        let zchip: Vec<Complex64> = freqs.iter().map(|&f| chip.impedance(f)).collect();
        let chip_ratio = impedance_difference_ratio(&freqs, &zc, &zchip)?;
        let chip_band = chip_balance_band(&reader, f0, &freqs)?;

        let mut zt = Table::new(&["f_Hz", "Re", "Im"]);
        let mut rt = Table::new(&["f_Hz", "ratio_twin", "ratio_chip"]);
        for i in 0..freqs.len() {
            zt.push(vec![num(freqs[i]), num(z1[i].re), num(z1[i].im)]);
            rt.push(vec![num(freqs[i]), num(twin.ratio[i]), num(chip_ratio.ratio[i])]);
        }
        let summary = json!({
            "reader_l_H": self.reader.l,
            "reader_geometric_l_H": self.reader_l_geom,
            "reader_c_each_F": self.reader.c_each,
            "reader_q": self.reader.q_factor(f0),
            "twin_band_Hz": [twin.balanced_band.low_hz, twin.balanced_band.high_hz],
            "twin_band_width_Hz": twin.balanced_band.width(),
            "chip_band_Hz": [chip_band.low_hz, chip_band.high_hz],
            "chip_band_width_Hz": chip_band.width(),
            "stray_shunt_F": reader.parasitic_c,
        });
        Ok(vec![
            Artifact::table("impedance", zt),
            Artifact::table("impedance_ratio", rt),
            Artifact::json("impedance_balance", summary),
        ])
    }

    fn power_pipeline(&self, sweep: &PowerSweep) -> Result<Vec<Artifact>> {
        let link = self.prepared_link(sweep.tag, sweep.p_in_w)?;
        let mut out = Vec::new();
        let sweep_table = |name: &str, col: &str, xs: &[f64], f: &(dyn Fn(f64) -> Result<crate::power::SweepPoint<f64>> + Sync)| {
            let rows: Vec<_> = xs.par_iter().map(|&x| (x, f(x))).collect();
            let mut t = Table::new(&[col, "k", "efficiency", "P_out_W", "error"]);
            for (x, r) in rows {
                match r {
                    Ok(p) => t.push(vec![num(x), num(p.k), num(p.result.efficiency), num(p.result.p_out), Value::Null]),
                    Err(e) => t.push(vec![num(x), Value::Null, Value::Null, Value::Null, json!(e.to_string())]),
                }
            }
            Artifact::table(name, t)
        };
        if let Some(r) = &sweep.offsets {
            out.push(sweep_table("power_misalignment", "offset_m", &r.values(), &|o| link.misalignment_point(o)));
        }
        if let Some(r) = &sweep.heights {
            out.push(sweep_table("power_distance", "height_m", &r.values(), &|h| link.distance_point(h)));
        }
        if !sweep.motions.is_empty() {
            let rows: Vec<_> = sweep.motions.par_iter().map(|m| (m, link.motion_point(m))).collect();
            let mut t = Table::new(&["motion", "k", "efficiency", "P_out_W", "outage", "error"]);
            for (m, r) in rows {
                match r {
                    Ok(p) => t.push(vec![
                        json!(p.label),
                        num(p.k),
                        num(p.result.efficiency),
                        num(p.result.p_out),
                        json!(p.outage),
                        Value::Null,
                    ]),
                    Err(e) => t.push(vec![
                        json!(m.label),
                        Value::Null,
                        Value::Null,
                        Value::Null,
                        json!(m.outage),
                        json!(e.to_string()),
                    ]),
                }
            }
            out.push(Artifact::table("power_motion", t));
        }
        let (k, nominal) = link.link_at(link.template.nominal)?;
        let z_opt = optimal_load(&nominal);
        let standing = output_power(&nominal, z_opt)?;
        let n_max = max_powered_tags(&nominal, z_opt, sweep.led_threshold_w, sweep.max_tags)?;
        out.push(Artifact::json(
            "power_summary",
            json!({
                "k": k,
                "figure_of_merit": nominal.figure_of_merit(),
                "optimal_load_ohm": [z_opt.re, z_opt.im],
                "efficiency": standing.efficiency,
                "p_in_W": sweep.p_in_w,
                "p_out_W": standing.p_out,
                "reader_q": nominal.reader.q_factor(nominal.link.f),
                "sensor_q": nominal.sensor.q_factor(nominal.link.f),
                "led_threshold_W": sweep.led_threshold_w,
                "max_powered_tags": n_max,
            }),
        ));
        Ok(out)
    }

    /// Readout response per volt for one front end at the nominal tag position.
    pub fn front_end(&self, front: FrontEnd, tag_index: usize) -> Result<(Complex64, Complex64)> {
        let link = self.prepared_link(tag_index, 0.0)?;
        let (_, pl) = link.link_at(link.template.nominal)?;
        let f = self.config.frequency_hz;
        let il = InductiveLink::from_k(pl.link.k, self.reader.l, pl.sensor.l_s, f)?;
        front_end_response(
            front,
            &self.config.reader.bridge,
            self.reader.impedance(f),
            self.twin_impedance(f)?,
            &il,
            &pl.sensor,
        )
    }

    /// BER channel template for `front`, with the noise resolved.
    pub fn ber_channel(&self, sweep: &BerSweep, front: FrontEnd) -> Result<(BerChannel, f64)> {
        let template = |front| -> Result<BerChannel> {
            let (g, l) = self.front_end(front, sweep.tag)?;
            let mut ch = BerChannel::new(g, l, 0.0, derive_seed(self.config.seed, &[front as u64]));
            ch.bits_per_point = sweep.bits_per_point;
            ch.payload_bits_per_frame = sweep.payload_bits_per_frame;
            ch.receiver = sweep.receiver;
            ch.ranging_p_dbm = sweep.p_in_dbm.values().last().copied().unwrap_or(10.0);
            Ok(ch)
        };
        let n0 = match sweep.noise {
            NoiseSpec::Fixed { noise_density } => noise_density,
            NoiseSpec::Calibrate {
                scheme_kbps,
                p_in_dbm,
                target_ber,
                bits,
            } => {
                let twin = template(FrontEnd::TwinBridge)?;
                let cal = BerChannel {
                    seed: derive_seed(self.config.seed, &[0xca1]),
                    ..twin
                };
                calibrate_noise_density(&ModulationScheme::from_kbps(scheme_kbps)?, &cal, p_in_dbm, target_ber, bits)?
            }
        };
        Ok((template(front)?.with_noise_density(n0), n0))
    }

    fn ber_pipeline(&self, sweep: &BerSweep) -> Result<Vec<Artifact>> {
        let grid = sweep.p_in_dbm.values();
        let hash = self.config.canonical_hash();
        let mut out = Vec::new();
        let mut summary = Vec::new();
        let mut noise = None;
        for &front in &sweep.front_ends {
            let (ch, n0) = self.ber_channel(sweep, front)?;
            noise = Some(n0);
            for &kbps in &sweep.schemes_kbps {
                let scheme = ModulationScheme::from_kbps(kbps)?;
                let pts = ber_sweep(&scheme, &ch, &grid)?;
                let name = format!("ber_{}_{}", front_label(front), scheme.label());
                let mut t = Table::new(&["P_in_dBm", "bits", "errors", "ber", "scheme", "config_hash"]);
                for p in &pts {
                    t.push(vec![
                        num(p.p_in_dbm),
                        json!(p.bits_sent),
                        json!(p.bit_errors),
                        num(p.ber),
                        json!(scheme.label()),
                        json!(hash),
                    ]);
                }
                summary.push(json!({
                    "front_end": front_label(front),
                    "scheme": scheme.label(),
                    "crossing_1e-3_dBm": ber_crossing(&pts, 1e-3),
                    "sync_failures": pts.iter().map(|p| p.sync_failures).sum::<u64>(),
                }));
                out.push(Artifact::table(&name, t));
            }
        }
        out.push(Artifact::json(
            "ber_summary",
            json!({ "noise_density_V2_per_Hz": noise, "curves": summary }),
        ));
        Ok(out)
    }

    fn protocol_pipeline(&self, sweep: &ProtocolSweep) -> Result<Vec<Artifact>> {
        let mut frame = self.config.frame;
        if let Some(rate) = sweep.target_rate_hz {
            frame.slot_duration = calibrate_slot_duration(sweep.calibration_tags, &frame, sweep.link_ber, rate)?;
        }
        let mut out = Vec::new();
        let mut summaries = Vec::new();
        for (i, &n) in sweep.tag_counts.iter().enumerate() {
            let tags = session_tags(&self.config.tags, n);
            let spec = SessionSpec {
                link_ber: vec![sweep.link_ber; tags.len()],
                tags,
                frame,
                duration_s: sweep.duration_s,
                seed: derive_seed(self.config.seed, &[0x5e55, i as u64]),
                outage: sweep.outage,
            };
            let r = run_session(&spec)?;
            for t in &r.tags {
                let mut table = Table::new(&["t_s", "value", "status"]);
                for rd in &t.readings {
                    table.push(vec![
                        num(rd.t_s),
                        rd.value.map(num).unwrap_or(Value::Null),
                        serde_json::to_value(rd.status)?,
                    ]);
                }
                out.push(Artifact::table(&format!("session_{n}tags_uid{}", t.uid), table));
            }
            summaries.push(json!({
                "n_tags": n,
                "mean_rate_hz": r.mean_rate_hz(),
                "mean_loss": r.mean_loss(),
                "session": r.summary_json(),
            }));
        }
        out.push(Artifact::json(
            "session_summary",
            json!({ "slot_duration_s": frame.slot_duration, "slots_per_round": frame.slots_per_round, "sessions": summaries }),
        ));
        Ok(out)
    }
}

fn front_label(f: FrontEnd) -> &'static str {
    match f {
        FrontEnd::TwinBridge => "twin-bridge",
        FrontEnd::SingleCoil => "single-coil",
    }
}

/// Configured tags first, then synthesized temperature tags up to `n`.
pub fn session_tags(configured: &[TagSpec], n: usize) -> Vec<TagDescriptor> {
    (0..n)
        .map(|i| match configured.get(i) {
            Some(t) => t.descriptor(),
            None => TagDescriptor::temperature(1000 + i as u64),
        })
        .collect()
}

/// Helical body coil with the same wire length as `meander`.
pub fn equal_length_helix(meander: &MeanderSpec<f64>, turns: usize) -> Result<CoilPath<f64>> {
    let len = meander.wire_length();
    make_helical_body_coil(len / turns as f64, turns, 0.06, meander.wire_radius)
}

/// Mean |B| per unit current at each depth above the meander surface and
/// outside the equal-length helix surface, averaged over the coil footprint.
pub fn confinement_profile(
    meander: &MeanderSpec<f64>,
    meander_filaments: &FilamentSet<f64>,
    helical_turns: usize,
    depths: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let helix = equal_length_helix(meander, helical_turns)?;
    let hf = discretize(&helix, 5e-3)?;
    let radius = meander.wire_length() / helical_turns as f64 / std::f64::consts::TAU;
    let hz_mid = 0.5 * 0.06 * helical_turns as f64;
    let n = 41;
    depths
        .par_iter()
        .map(|&d| {
            let mean = |pts: Vec<Vec3<f64>>, f: &FilamentSet<f64>| {
                pts.iter().map(|&p| field_at(f, p).norm()).sum::<f64>() / pts.len() as f64
            };
            let half = 0.5 * meander.span();
            let hh = 0.25 * meander.panel_height;
            let mp: Vec<_> = (0..n)
                .flat_map(|i| {
                    let x = -half + 2.0 * half * i as f64 / (n - 1) as f64;
                    [-hh, 0.0, hh].map(|y| Vec3::new(x, y, d))
                })
                .collect();
            let hp: Vec<_> = (0..n)
                .flat_map(|i| {
                    let phi = std::f64::consts::TAU * i as f64 / n as f64;
                    let r = radius + d;
                    [-0.25, 0.0, 0.25].map(|dz| Vec3::new(r * phi.cos(), r * phi.sin(), hz_mid * (1.0 + dz)))
                })
                .collect();
            Ok((d, mean(mp, meander_filaments), mean(hp, &hf)))
        })
        .collect()
}

/// Runs every configured pipeline and writes the artifacts.
pub fn run(config: &ScenarioConfig, out_dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let prepared = Prepared::new(config)?;
    let prov = Provenance::of(config);
    let mut written = Vec::new();
    for p in config.pipelines() {
        let artifacts = prepared.run(p)?;
        written.extend(write_artifacts(out_dir, &artifacts, &prov, format)?);
    }
    Ok(written)
}
