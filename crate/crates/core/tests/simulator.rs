//! Statistical properties of the trace generator.

use csitrack::model::{apply_distortion, PilotSet};
use csitrack::sim::{draw_distortion, draw_initial_channel, simulate, RngStreams, SimConfig, Stream, TraceGenerator};
use csitrack::Cx;

fn one_link() -> SimConfig {
    SimConfig {
        n_tx: 1,
        n_rx: 1,
        ..SimConfig::default()
    }
}

#[test]
fn initial_channel_has_unit_mean_power() {
    let cfg = one_link();
    let mut rng = RngStreams::new(17, 0).stream(Stream::Channel);
    let n = 100_000;
    let mut total = 0.0;
    for _ in 0..n {
        let ch = draw_initial_channel::<f64, _>(&cfg, &mut rng).unwrap();
        total += ch.taps.norm_squared();
    }
    let mean = total / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean power {mean}");
}

#[test]
fn slope_draws_are_centered() {
    let cfg = SimConfig::default();
    let mut rng = RngStreams::new(18, 0).stream(Stream::Distortion);
    let n = 100_000;
    let (mut slope, mut max_slope, mut max_offset) = (0.0, 0.0f64, 0.0f64);
    for _ in 0..n {
        let d = draw_distortion::<f64, _>(&cfg, &mut rng);
        slope += d.slope;
        max_slope = max_slope.max(d.slope.abs());
        max_offset = max_offset.max(d.offset.abs());
    }
    assert!((slope / n as f64).abs() < 0.005);
    assert!(max_slope <= 0.2 && max_offset <= std::f64::consts::PI);
}

#[test]
fn correlation_halves_after_a_thousand_packets() {
    let cfg = SimConfig {
        n_packets: 1001,
        seed: 19,
        ..one_link()
    };
    let gen = TraceGenerator::<f64>::new(cfg).unwrap();
    let (mut cross, mut p0, mut p1) = (0.0, 0.0, 0.0);
    for t in 0..1000 {
        let tr = gen.trial(t).unwrap();
        let a = &tr.true_channels[0].taps;
        let b = &tr.true_channels[1000].taps;
        cross += a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        p0 += a.norm_squared();
        p1 += b.norm_squared();
    }
    let rho = cross / (p0 * p1).sqrt();
    assert!((rho - 0.5).abs() < 0.05, "correlation {rho}");
}

#[test]
fn tap_powers_are_stationary() {
    let cfg = SimConfig {
        seed: 20,
        ..SimConfig::default()
    };
    let prof = cfg.tap_profile();
    let gen = TraceGenerator::<f64>::new(cfg.clone()).unwrap();
    let trials = 1000;
    let mut power = vec![vec![0.0; prof.len()]; cfg.n_packets];
    for t in 0..trials {
        let tr = gen.trial(t).unwrap();
        for (k, ch) in tr.true_channels.iter().enumerate() {
            for (l, row) in ch.taps.row_iter().enumerate() {
                power[k][l] += row.norm_squared() / (trials as f64 * cfg.n_channels() as f64);
            }
        }
    }
    for row in &power {
        for (l, &p) in row.iter().enumerate() {
            assert!((p / prof[l] - 1.0).abs() < 0.05, "tap {l}: {p} vs {}", prof[l]);
        }
    }
}

#[test]
fn observation_noise_is_white_with_the_stated_power() {
    let cfg = SimConfig {
        n_packets: 2,
        seed: 21,
        snr_db: 10.0,
        ..one_link()
    };
    let gen = TraceGenerator::<f64>::new(cfg.clone()).unwrap();
    let pilots = PilotSet::<f64>::from_spec(cfg.pilots.clone()).unwrap();
    let (mut cross, mut e0, mut e1) = (Cx::new(0.0, 0.0), 0.0, 0.0);
    let mut count = 0usize;
    for t in 0..10_000 {
        let tr = gen.trial(t).unwrap();
        let noise: Vec<_> = (0..2)
            .map(|k| {
                let clean = pilots.dft() * &tr.true_channels[k].taps;
                &tr.observations[k].csi - apply_distortion(&clean, &tr.true_distortions[k], &pilots).unwrap()
            })
            .collect();
        for (a, b) in noise[0].iter().zip(noise[1].iter()) {
            cross += a.conj() * b;
            e0 += a.norm_sqr();
            e1 += b.norm_sqr();
        }
        count += noise[0].len();
    }
    assert!(cross.norm() / (e0 * e1).sqrt() < 0.02);
    let power = e0 / count as f64;
    assert!((power / cfg.noise_var() - 1.0).abs() < 0.03, "noise power {power}");
}

#[test]
fn same_seed_same_trace() {
    let cfg = SimConfig {
        n_packets: 30,
        seed: 22,
        ..SimConfig::default()
    };
    let a = simulate::<f64>(&cfg).unwrap();
    let b = simulate::<f64>(&cfg).unwrap();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.true_distortions, b.true_distortions);
    assert!(a.true_channels.iter().zip(&b.true_channels).all(|(x, y)| x.taps == y.taps));
    assert_eq!(a.true_channels.len(), 30);
    assert_eq!(a.true_distortions.len(), 30);
    let c = simulate::<f64>(&SimConfig { seed: 23, ..cfg }).unwrap();
    assert_ne!(a.observations, c.observations);
}

#[test]
fn streams_can_be_varied_independently() {
    // changing the trial changes every stream, but the distortion stream of a
    // trial does not depend on the SNR
    let base = SimConfig {
        n_packets: 10,
        seed: 24,
        ..SimConfig::default()
    };
    let a = simulate::<f64>(&base).unwrap();
    let b = simulate::<f64>(&SimConfig { snr_db: 5.0, ..base.clone() }).unwrap();
    assert_eq!(a.true_distortions, b.true_distortions);
    assert!(a.true_channels.iter().zip(&b.true_channels).all(|(x, y)| x.taps == y.taps));
    assert_ne!(a.observations, b.observations);
}
