mod common;

use bodynfc::phy::{
    apply_channel, ber_point, ber_sweep, demodulate, from_db, modulate, noise_density_for, prbs15, preamble,
    simulate_frames, BerChannel, Bitrate, ChannelConfig, FrontEnd, ModulationScheme, ReceiverConfig,
    DEFAULT_SAMPLE_RATE,
};
use bodynfc::scenario::{Prepared, ScenarioConfig};
use num_complex::Complex64 as C;
use proptest::prelude::*;
use std::sync::OnceLock;

/// Twin-bridge channel of the preset with a fixed noise density near the
/// calibrated value.
fn twin_channel(front: FrontEnd) -> BerChannel {
    static P: OnceLock<Prepared> = OnceLock::new();
    let p = P.get_or_init(|| Prepared::new(&ScenarioConfig::paper_repro()).unwrap());
    let (g, l) = p.front_end(front, 0).unwrap();
    let mut ch = BerChannel::new(g, l, 1.4e-10, 99);
    ch.bits_per_point = 40_000;
    ch
}

#[test]
fn matched_filter_bpsk_tracks_theory_at_low_ber() {
    let s = ModulationScheme::new(Bitrate::R212);
    let ebn0 = from_db(9.6);
    let ch = ChannelConfig {
        link_gain: C::new(1.0, 0.0),
        carrier_leak: C::new(0.0, 0.0),
        noise_density: noise_density_for(&s, ebn0, DEFAULT_SAMPLE_RATE).unwrap(),
        seed: 21,
        delay_samples: 0,
    };
    let (bits, errors, _) =
        simulate_frames(&s, &ch, &ReceiverConfig::matched_filter(), DEFAULT_SAMPLE_RATE, 0x7fff, 10_000_000, 4096)
            .unwrap();
    let ber = errors as f64 / bits as f64;
    let theory = common::q((2.0 * ebn0).sqrt());
    assert!(ber > theory / 3.0 && ber < theory * 3.0, "{ber} vs {theory}");
}

#[test]
fn ook_is_worse_than_212k_bpsk_at_equal_power() {
    let ch = twin_channel(FrontEnd::TwinBridge);
    let ook = ber_point(&ModulationScheme::new(Bitrate::R106), &ch, -18.0, 0).unwrap();
    let bpsk = ber_point(&ModulationScheme::new(Bitrate::R212), &ch, -18.0, 0).unwrap();
    assert!(ook.ber > bpsk.ber, "{} vs {}", ook.ber, bpsk.ber);
}

#[test]
fn ber_is_nonincreasing_in_power_within_noise() {
    let ch = twin_channel(FrontEnd::TwinBridge);
    let grid: Vec<f64> = (0..8).map(|i| -24.0 + 2.0 * i as f64).collect();
    let pts = ber_sweep(&ModulationScheme::new(Bitrate::R424), &ch, &grid).unwrap();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sigma = (a.ber.max(1.0 / a.bits_sent as f64) * (1.0 - a.ber) / a.bits_sent as f64).sqrt()
            + (b.ber.max(1.0 / b.bits_sent as f64) * (1.0 - b.ber) / b.bits_sent as f64).sqrt();
        assert!(b.ber <= a.ber + 3.0 * sigma, "{:?} then {:?}", a, b);
    }
}

#[test]
fn ber_points_are_seed_deterministic() {
    let ch = twin_channel(FrontEnd::SingleCoil);
    let s = ModulationScheme::new(Bitrate::R848);
    assert_eq!(ber_point(&s, &ch, 0.0, 3).unwrap(), ber_point(&s, &ch, 0.0, 3).unwrap());
    let other = BerChannel { seed: 100, ..ch };
    assert_ne!(ber_point(&s, &ch, 0.0, 3).unwrap(), ber_point(&s, &other, 0.0, 3).unwrap());
}

#[test]
fn prbs_balance_and_period() {
    let bits = prbs15(0x7fff, 2 * 32767).unwrap();
    assert_eq!(bits[..32767].iter().filter(|&&b| b).count(), 16384);
    assert_eq!(bits[..32767], bits[32767..]);
    assert!((1..32767).all(|p| bits[..64] != bits[p..p + 64]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_loopback_recovers_random_bits(seed in 1u16..0x7fff, scheme in 0usize..4, delay in 0usize..12) {
        let s = ModulationScheme::all()[scheme];
        let payload = prbs15(seed, 600).unwrap();
        let frame: Vec<bool> = preamble(48).into_iter().chain(payload.iter().copied()).collect();
        let tag = modulate(&frame, &s, DEFAULT_SAMPLE_RATE).unwrap();
        let rx = apply_channel(&tag, &ChannelConfig {
            link_gain: C::from_polar(0.3, 1.1),
            carrier_leak: C::new(0.0, 0.0),
            noise_density: 0.0,
            seed: 0,
            delay_samples: delay,
        }).unwrap();
        let d = demodulate(&rx, &s, &ReceiverConfig::default()).unwrap();
        prop_assert_eq!(d.delay_samples, delay);
        prop_assert_eq!(&d.bits[..payload.len()], &payload[..]);
    }
}
