//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows without `--nocapture`.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use bodynfc::circuit::{
    bridge_first_order, bridge_output, calibrate_stray_shunt, chip_balance_band, impedance_difference_ratio,
    linear_grid, q_factor, tune_distributed_caps, BridgeConfig, ComponentMismatch, ReaderCircuit, Resonator,
    SensorCircuit, CARRIER_HZ,
};
use bodynfc::geometry::{discretize, make_meander, make_twin_meander, CoilPath, TwinMeanderSpec};
use bodynfc::magnetics::{mutual_inductance, self_inductance};
use bodynfc::phy::{
    ber_crossing, ber_sweep, noise_density_for, simulate_frames, Bitrate, ChannelConfig, FrontEnd, ModulationScheme,
    ReceiverConfig, DEFAULT_SAMPLE_RATE, SUBCARRIER_HZ,
};
use bodynfc::power::{max_efficiency, optimal_load, transfer_efficiency, PowerLink};
use bodynfc::protocol::{calibrate_slot_duration, run_session, simulate_throughput, FrameConfig, SessionSpec};
use bodynfc::scenario::{confinement_profile, run, session_tags, tops_meander, OutputFormat, Prepared, ScenarioConfig};
use bodynfc::Vec3;
use num_complex::Complex64 as C;

const Q_TOL: f64 = 0.05;
const CAP_REL_TOL: f64 = 0.02;
const MAXWELL_REL_TOL: f64 = 0.01;
const BALANCE_LIMIT: f64 = 0.10;
const CHIP_BAND_HZ: f64 = 0.2e6;
const CHIP_BAND_FACTOR: f64 = 2.0;
const MESH_REL_TOL: f64 = 1e-9;
const THEORY_DB_TOL: f64 = 0.5;
const THEORY_BITS: u64 = 10_000_000;
const BER_TARGET: f64 = 1e-3;
const SHIFT_DB: f64 = 13.0;
const SHIFT_TOL_DB: f64 = 5.0;
const ALOHA_TOL: f64 = 0.01;
const ALOHA_ROUNDS: usize = 100_000;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_q_factor() -> Outcome {
    let tops = q_factor(2.2e-6, 18.0, CARRIER_HZ);
    let bottoms = q_factor(3.0e-6, 23.0, CARRIER_HZ);
    check(
        (tops - 10.4).abs() <= Q_TOL && (bottoms - 11.1).abs() <= Q_TOL,
        format!("Q tops {tops:.3}, bottoms {bottoms:.3}"),
    )
}

fn c2_distributed_caps() -> Outcome {
    let c4 = tune_distributed_caps(2.2e-6, CARRIER_HZ, 4).map_err(|e| e.to_string())?;
    let c5 = tune_distributed_caps(3.0e-6, CARRIER_HZ, 5).map_err(|e| e.to_string())?;
    let e4 = (c4 - 250e-12).abs() / 250e-12;
    let e5 = (c5 - 230e-12).abs() / 230e-12;
    check(
        e4 <= CAP_REL_TOL && e5 <= CAP_REL_TOL,
        format!("C_each {:.1} pF (n=4), {:.1} pF (n=5)", c4 * 1e12, c5 * 1e12),
    )
}

fn loop_set(r: f64, z: f64) -> bodynfc::FilamentSet {
    let pts = common::circle(r, 256, z).into_iter().map(Vec3::from).collect();
    discretize(&CoilPath::new(pts, true, 1e-4).unwrap(), 1.0).unwrap()
}

fn c3_maxwell() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [0.005, 0.01, 0.02, 0.05] {
        let m = mutual_inductance(&loop_set(0.015, 0.0), &loop_set(0.015, d)).map_err(|e| e.to_string())?;
        let oracle = common::maxwell_coaxial(0.015, 0.015, d);
        worst = worst.max((m - oracle).abs() / oracle);
    }
    check(worst < MAXWELL_REL_TOL, format!("worst relative error {worst:.2e}"))
}

fn c4_confinement() -> Outcome {
    let m = tops_meander();
    let f = discretize(&make_meander(&m).unwrap(), m.default_max_segment()).unwrap();
    let p = confinement_profile(&m, &f, 7, &[0.01, 0.05]).map_err(|e| e.to_string())?;
    let meander = p[1].1 / p[0].1;
    let helix = p[1].2 / p[0].2;
    check(
        meander < helix,
        format!("B(5cm)/B(1cm) meander {meander:.3}, helix {helix:.3}"),
    )
}

fn c5_impedance_balance() -> Outcome {
    let m = tops_meander();
    let (a, b) = make_twin_meander(&TwinMeanderSpec {
        half: m,
        separation: 0.05,
    })
    .map_err(|e| e.to_string())?;
    let seg = m.default_max_segment();
    let l1 = self_inductance(&discretize(&a, seg).unwrap()).unwrap();
    let l2 = self_inductance(&discretize(&b, seg).unwrap()).unwrap();
    let c1 = ReaderCircuit::tuned(18.0, l1, 4, CARRIER_HZ).unwrap();
    let c2 = ReaderCircuit { l: l2, ..c1 };
    let mismatch = ComponentMismatch {
        cap_rel: 0.01,
        ..Default::default()
    };
    let freqs = linear_grid(12e6, 15e6, 3001);
    let z1: Vec<C> = freqs.iter().map(|&f| c1.impedance(f)).collect();
    let z2: Vec<C> = freqs.iter().map(|&f| c2.impedance_with_mismatch(&mismatch, f)).collect();
    let curve = impedance_difference_ratio(&freqs, &z1, &z2).map_err(|e| e.to_string())?;
    let (lo, hi) = (CARRIER_HZ - SUBCARRIER_HZ, CARRIER_HZ + SUBCARRIER_HZ);
    let worst = freqs
        .iter()
        .zip(&curve.ratio)
        .filter(|(f, _)| (lo..=hi).contains(*f))
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    let grid = linear_grid(11e6, 15e6, 4001);
    let cp = calibrate_stray_shunt(&c1, CARRIER_HZ, &grid, CHIP_BAND_HZ, (1e-13, 1e-8)).map_err(|e| e.to_string())?;
    let band = chip_balance_band(&ReaderCircuit { parasitic_c: cp, ..c1 }, CARRIER_HZ, &grid).unwrap();
    let w = band.width();
    check(
        worst < BALANCE_LIMIT && w >= CHIP_BAND_HZ / CHIP_BAND_FACTOR && w <= CHIP_BAND_HZ * CHIP_BAND_FACTOR,
        format!(
            "twin max ratio {:.2}% over 13.56±0.848 MHz; chip band {:.3} MHz",
            worst * 100.0,
            w / 1e6
        ),
    )
}

fn c6_bridge() -> Outcome {
    let cfg = BridgeConfig::default();
    let mut worst: f64 = 0.0;
    for z in [C::new(18.0, 0.0), C::new(18.0, 5.0), C::new(5.0, -40.0), C::new(100.0, 60.0)] {
        if bridge_output(&cfg, z, z).unwrap() != C::new(0.0, 0.0) {
            return Err(format!("balanced inputs at {z} give nonzero output"));
        }
        for rel in [1e-3, 1e-2, 0.05, 0.1] {
            for k in 0..12 {
                let dz = C::from_polar(rel * z.norm(), k as f64 * std::f64::consts::TAU / 12.0);
                let exact = bridge_output(&cfg, z + dz, z).unwrap();
                let lin = bridge_first_order(&cfg, z, dz);
                worst = worst.max((exact - lin).norm() / lin.norm() / (2.0 * rel));
            }
        }
    }
    check(
        worst <= 1.0,
        format!("max deviation {:.3} of the 2·ΔZ/Z bound; balanced output exactly 0", worst),
    )
}

fn c7_power() -> Outcome {
    let w = std::f64::consts::TAU * CARRIER_HZ;
    let mut worst: f64 = 0.0;
    for k in [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2] {
        for q in [5.0, 10.0, 20.0, 35.0, 50.0] {
            let reader = ReaderCircuit::tuned(w * 2.2e-6 / q, 2.2e-6, 4, CARRIER_HZ).unwrap();
            let sensor = SensorCircuit::with_q(2e-6, q, CARRIER_HZ, C::new(1.0, 0.0)).unwrap();
            let l = PowerLink::new(reader, sensor, k, CARRIER_HZ, 0.1).unwrap();
            let mesh = transfer_efficiency(&l, optimal_load(&l)).unwrap();
            let closed = max_efficiency(l.figure_of_merit());
            worst = worst.max((mesh - closed).abs() / closed);
        }
    }
    let prepared = Prepared::new(&ScenarioConfig::paper_repro()).map_err(|e| e.to_string())?;
    let l100 = prepared.prepared_link(0, 0.1).map_err(|e| e.to_string())?;
    let p100 = l100.distance_point(l100.template.nominal.z).unwrap().result.p_out;
    let l200 = prepared.prepared_link(0, 0.2).map_err(|e| e.to_string())?;
    let p200_min = (-4..=4)
        .map(|i| l200.misalignment_point(i as f64 * 0.0025).unwrap().result.p_out)
        .fold(f64::INFINITY, f64::min);
    check(
        worst <= MESH_REL_TOL && p100 > 2e-3 && p200_min >= 1e-3,
        format!(
            "mesh vs closed form {:.1e}; P_out {:.2} mW at 100 mW; min {:.2} mW within ±1 cm at 200 mW",
            worst,
            p100 * 1e3,
            p200_min * 1e3
        ),
    )
}

/// Eb/N0 (dB) the oracle needs for `ber`, by bisection on Q(√(2x)).
fn oracle_required_db(ber: f64) -> f64 {
    let (mut lo, mut hi) = (-5.0f64, 20.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if common::q((2.0 * 10f64.powf(mid / 10.0)).sqrt()) > ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c8_theory_anchor() -> Outcome {
    let s = ModulationScheme::new(Bitrate::R212);
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, target) in [1e-3, 1e-4].into_iter().enumerate() {
        let ebn0_db = oracle_required_db(target);
        let ch = ChannelConfig {
            link_gain: C::new(1.0, 0.0),
            carrier_leak: C::new(0.0, 0.0),
            noise_density: noise_density_for(&s, 10f64.powf(ebn0_db / 10.0), DEFAULT_SAMPLE_RATE).unwrap(),
            seed: 1000 + i as u64,
            delay_samples: 0,
        };
        let (bits, errors, _) = simulate_frames(
            &s,
            &ch,
            &ReceiverConfig::matched_filter(),
            DEFAULT_SAMPLE_RATE,
            0x7fff,
            THEORY_BITS,
            4096,
        )
        .map_err(|e| e.to_string())?;
        let ber = errors as f64 / bits as f64;
        let gap = oracle_required_db(ber) - ebn0_db;
        ok &= gap.abs() <= THEORY_DB_TOL;
        parts.push(format!("BER {ber:.2e} at {ebn0_db:.2} dB (gap {gap:+.2} dB, {bits} bits)"));
    }
    check(ok, parts.join("; "))
}

fn c9_ber_behavior() -> Outcome {
    let cfg = ScenarioConfig::paper_repro();
    let sweep = cfg.sweeps.ber.clone().unwrap();
    let prepared = Prepared::new(&cfg).map_err(|e| e.to_string())?;
    let grid = sweep.p_in_dbm.values();
    let (twin, _) = prepared.ber_channel(&sweep, FrontEnd::TwinBridge).map_err(|e| e.to_string())?;
    let (single, _) = prepared.ber_channel(&sweep, FrontEnd::SingleCoil).map_err(|e| e.to_string())?;
    let curves: Vec<_> = ModulationScheme::all()
        .iter()
        .map(|s| ber_sweep(s, &twin, &grid).map(|p| (*s, p)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    let a_ok = curves
        .iter()
        .all(|(_, pts)| pts.iter().filter(|p| p.p_in_dbm >= -10.0).all(|p| p.ber <= BER_TARGET));
    let crossings: Vec<(String, f64)> = curves
        .iter()
        .map(|(s, pts)| (s.label(), ber_crossing(pts, BER_TARGET).unwrap_or(f64::NAN)))
        .collect();
    let best = crossings.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    // Pointwise ordering where the competing BERs are resolved (≥ 100 errors).
    let idx212 = curves.iter().position(|(s, _)| s.bitrate == Bitrate::R212).unwrap();
    let pointwise = (0..grid.len()).all(|i| {
        let mine = curves[idx212].1[i].ber;
        let other = curves
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx212)
            .map(|(_, c)| c.1[i].ber)
            .fold(f64::INFINITY, f64::min);
        other < 100.0 / sweep.bits_per_point as f64 || mine <= other
    });
    let b_ok = best.0 == "212k-bpsk" && pointwise;
    let s212 = ModulationScheme::new(Bitrate::R212);
    let base = ber_sweep(&s212, &single, &grid).map_err(|e| e.to_string())?;
    let shift = ber_crossing(&base, BER_TARGET).unwrap_or(f64::NAN) - crossings[idx212].1;
    let c_ok = (shift - SHIFT_DB).abs() <= SHIFT_TOL_DB;
    let listing: Vec<String> = crossings.iter().map(|(l, c)| format!("{l} {c:.1}")).collect();
    check(
        a_ok && b_ok && c_ok,
        format!(
            "(a) {} (b) {} [1e-3 crossings dBm: {}] (c) {} shift {:.1} dB",
            if a_ok { "ok" } else { "FAIL" },
            if b_ok { "ok" } else { "FAIL" },
            listing.join(", "),
            if c_ok { "ok" } else { "FAIL" },
            shift
        ),
    )
}

fn c10_aloha() -> Outcome {
    let s1 = simulate_throughput(1.0, 16, ALOHA_ROUNDS, 77).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
    let sims: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| simulate_throughput(g, 16, ALOHA_ROUNDS, 1000 + i as u64).unwrap())
        .collect();
    let peak = grid[sims.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    check(
        (s1 - (-1.0f64).exp()).abs() <= ALOHA_TOL && (peak - 1.0).abs() < 1e-9,
        format!("S(G=1) {s1:.4}; simulated peak at G={peak:.1}"),
    )
}

fn c11_sessions() -> Outcome {
    let mut frame = FrameConfig::default();
    frame.slot_duration = calibrate_slot_duration(4, &frame, 0.0, 1.5).map_err(|e| e.to_string())?;
    let session = |n: usize| {
        run_session(&SessionSpec {
            tags: session_tags(&[], n),
            frame,
            link_ber: vec![0.0; n],
            duration_s: 120.0,
            seed: 11,
            outage: None,
        })
    };
    let four = session(4).map_err(|e| e.to_string())?;
    let eight = session(8).map_err(|e| e.to_string())?;
    let four_ok = four.tags.iter().all(|t| (1.0..=2.0).contains(&t.rate_hz));
    check(
        four_ok && eight.mean_rate_hz() < four.mean_rate_hz() && eight.mean_loss() > four.mean_loss(),
        format!(
            "slot {:.1} ms; 4 tags {:.2} Hz (loss {:.2}); 8 tags {:.2} Hz (loss {:.2})",
            frame.slot_duration * 1e3,
            four.mean_rate_hz(),
            four.mean_loss(),
            eight.mean_rate_hz(),
            eight.mean_loss()
        ),
    )
}

fn data_rows(p: &Path) -> Vec<u8> {
    let text = fs::read_to_string(p).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.bytes().chain(std::iter::once(b'\n')))
        .collect()
}

fn c12_determinism() -> Outcome {
    let cfg = ScenarioConfig::paper_repro();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = run(&cfg, a.path(), OutputFormat::Csv).map_err(|e| e.to_string())?;
    let fb = run(&cfg, b.path(), OutputFormat::Csv).map_err(|e| e.to_string())?;
    let names = |v: &[std::path::PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err("runs produced different file sets".into());
    }
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| data_rows(x) != data_rows(y))
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    check(
        differing.is_empty(),
        format!("{} files from the paper-repro preset compared; differing: {:?}", fa.len(), differing),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("1 Q-factor reproduction", c1_q_factor),
        ("2 distributed-capacitance tuning", c2_distributed_caps),
        ("3 mutual-inductance oracle", c3_maxwell),
        ("4 field confinement", c4_confinement),
        ("5 impedance balance", c5_impedance_balance),
        ("6 bridge equation", c6_bridge),
        ("7 power transfer", c7_power),
        ("8 PHY theory anchor", c8_theory_anchor),
        ("9 BER behavior", c9_ber_behavior),
        ("10 Aloha throughput", c10_aloha),
        ("11 session capacity", c11_sessions),
        ("12 determinism suite", c12_determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("PASS  {name}: {d} [{secs:.1}s]\n"),
            Err(d) => format!("FAIL  {name}: {d} [{secs:.1}s]\n"),
        };
        err.write_all(line.as_bytes()).unwrap();
        if outcome.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
