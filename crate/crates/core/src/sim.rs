//! Synthetic CSI traces: AR(1) tapped-delay-line channels, i.i.d. per-packet
//! phase distortions and circularly-symmetric Gaussian observation noise.
//!
//! Randomness comes from labeled ChaCha sub-streams of one root seed, so any
//! single source (say the distortion draws) can be held fixed while another
//! is varied.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ar1_step, exponential_profile, observe, ChannelState, Interval, Observation,
    PhaseDistortion, PilotSet, PilotSpec, PriorSupport,
};
use crate::scalar::{lit, Cx, Real};

/// `α` such that channel correlation halves after 1000 packets.
pub fn default_alpha() -> f64 {
    0.5f64.powf(1e-3)
}

/// Noise variance for a given SNR with unit channel power.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub pilots: PilotSpec,
    pub n_tx: usize,
    pub n_rx: usize,
    pub alpha: f64,
    pub snr_db: f64,
    pub n_packets: usize,
    pub slope_support: Interval<f64>,
    pub offset_support: Interval<f64>,
    pub seed: u64,
    /// Decay constant of the exponential delay profile `e^{-l / decay}`.
    pub profile_decay: f64,
    /// Scale on the stationary process noise `(1 - α²) σ²_l`.
    pub process_noise_scale: f64,
    /// First packet carries no distortion and fixes the phase reference.
    pub reference_packet: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let s = PriorSupport::<f64>::wifi_default();
        SimConfig {
            pilots: PilotSpec::default(),
            n_tx: 3,
            n_rx: 3,
            alpha: default_alpha(),
            snr_db: 20.0,
            n_packets: 100,
            slope_support: s.slope,
            offset_support: s.offset,
            seed: 0,
            profile_decay: 2.0,
            process_noise_scale: 1.0,
            reference_packet: true,
        }
    }
}

impl SimConfig {
    pub fn n_channels(&self) -> usize {
        self.n_tx * self.n_rx
    }

    pub fn noise_var(&self) -> f64 {
        noise_var_from_snr_db(self.snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_packets == 0 {
            return Err(Error::InvalidInput("n_packets must be at least 1".into()));
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::InvalidInput("antenna counts must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidInput("snr_db must be finite".into()));
        }
        if !(self.profile_decay > 0.0) || !(self.process_noise_scale >= 0.0) {
            return Err(Error::InvalidInput("profile decay and noise scale must be positive".into()));
        }
        for iv in [self.slope_support, self.offset_support] {
            Interval::new(iv.lo, iv.hi)?;
        }
        // e^{jΩd q} is 2π/g-periodic in Ωd for integer pilots with gcd g
        let g = self.pilots.pilot_indices.iter().fold(0i64, |a, &q| gcd(a, q.abs()));
        if g > 0 {
            let bound = std::f64::consts::PI / g as f64;
            if self.slope_support.lo < -bound || self.slope_support.hi > bound {
                return Err(Error::InvalidInput(format!(
                    "slope support [{}, {}] aliases: must lie within ±π/{g}",
                    self.slope_support.lo, self.slope_support.hi
                )));
            }
        }
        PilotSet::<f64>::from_spec(self.pilots.clone())?;
        Ok(())
    }

    /// Per-tap power profile shared by all channels.
    pub fn tap_profile(&self) -> Vec<f64> {
        exponential_profile(self.pilots.channel_length, self.profile_decay)
    }

    pub fn support(&self) -> PriorSupport<f64> {
        PriorSupport {
            slope: self.slope_support,
            offset: self.offset_support,
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Labels of the independent random sub-streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Channel = 1,
    ProcessNoise = 2,
    Distortion = 3,
    ObservationNoise = 4,
}

/// Root of the per-trial random sub-streams.
#[derive(Clone, Copy, Debug)]
pub struct RngStreams {
    key: [u8; 32],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64, trial: u64) -> Self {
        let mut state = seed;
        let mixed = splitmix64(&mut state) ^ trial.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut state = mixed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStreams { key }
    }

    pub fn stream(&self, label: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(label as u64);
        rng
    }
}

/// `CN(0, var)` sample: independent real and imaginary parts with variance `var / 2`.
pub fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Cx<T> {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Cx::new(lit(re * s), lit(im * s))
}

fn sample_interval<R: Rng + ?Sized>(rng: &mut R, iv: Interval<f64>) -> f64 {
    if iv.lo == iv.hi {
        iv.lo
    } else {
        Uniform::new_inclusive(iv.lo, iv.hi).sample(rng)
    }
}

/// Ground truth and observations of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace<T: Real> {
    pub true_channels: Vec<ChannelState<T>>,
    pub true_distortions: Vec<PhaseDistortion<T>>,
    pub observations: Vec<Observation<T>>,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl<T: Real> SimTrace<T> {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Column of channel `(tx, rx)`.
    pub fn channel_column(&self, tx: usize, rx: usize) -> usize {
        tx * self.n_rx + rx
    }

    /// Restricts the trace to the first `n_tx` transmit and `n_rx` receive antennas.
    pub fn subsystem(&self, n_tx: usize, n_rx: usize) -> Result<Self> {
        if n_tx == 0 || n_rx == 0 || n_tx > self.n_tx || n_rx > self.n_rx {
            return Err(Error::InvalidInput(format!(
                "setup {n_tx}x{n_rx} does not fit in the {}x{} trace",
                self.n_tx, self.n_rx
            )));
        }
        let cols: Vec<usize> = (0..n_tx)
            .flat_map(|t| (0..n_rx).map(move |r| (t, r)))
            .map(|(t, r)| self.channel_column(t, r))
            .collect();
        Ok(SimTrace {
            true_channels: self.true_channels.iter().map(|c| c.select_channels(&cols)).collect(),
            true_distortions: self.true_distortions.clone(),
            observations: self.observations.iter().map(|o| o.select_channels(&cols)).collect(),
            n_tx,
            n_rx,
        })
    }
}

/// Initial channel with tap `(l, i)` drawn from `CN(0, σ²_{i,l})`.
pub fn draw_initial_channel<T: Real, R: Rng + ?Sized>(
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<ChannelState<T>> {
    let n = cfg.n_channels();
    let prof = cfg.tap_profile();
    draw_channel_with_profile(cfg.alpha, cfg.process_noise_scale, &prof, n, rng)
}

pub(crate) fn draw_channel_with_profile<T: Real, R: Rng + ?Sized>(
    alpha: f64,
    noise_scale: f64,
    prof: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<ChannelState<T>> {
    let l = prof.len();
    let mut taps = DMatrix::from_element(l, n, Cx::new(T::zero(), T::zero()));
    for i in 0..n {
        for (tap, &p) in prof.iter().enumerate() {
            // zero-variance taps stay exactly zero but still consume draws
            let z = complex_normal::<T, _>(rng, p);
            taps[(tap, i)] = if p == 0.0 { Cx::new(T::zero(), T::zero()) } else { z };
        }
    }
    let profile = DMatrix::from_fn(l, n, |r, _| lit::<T>(prof[r]));
    let q = DMatrix::from_fn(l, n, |r, _| lit::<T>((1.0 - alpha * alpha) * noise_scale * prof[r]));
    ChannelState::new(taps, lit(alpha), q, profile)
}

pub fn draw_distortion<T: Real, R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> PhaseDistortion<T> {
    let slope = sample_interval(rng, cfg.slope_support);
    let offset = sample_interval(rng, cfg.offset_support);
    PhaseDistortion::new(lit(slope), lit(offset))
}

fn draw_matrix<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    var: impl Fn(usize, usize) -> f64,
) -> DMatrix<Cx<T>> {
    let mut m = DMatrix::from_element(rows, cols, Cx::new(T::zero(), T::zero()));
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_normal(rng, var(r, c));
        }
    }
    m
}

/// Reusable trace generator; caches the pilot matrices across trials.
#[derive(Clone, Debug)]
pub struct TraceGenerator<T: Real> {
    cfg: SimConfig,
    pilots: PilotSet<T>,
}

impl<T: Real> TraceGenerator<T> {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let pilots = PilotSet::from_spec(cfg.pilots.clone())?;
        Ok(TraceGenerator { cfg, pilots })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn pilots(&self) -> &PilotSet<T> {
        &self.pilots
    }

    /// Trace of Monte Carlo trial `trial`. Packets are numbered from 1.
    pub fn trial(&self, trial: u64) -> Result<SimTrace<T>> {
        let cfg = &self.cfg;
        let streams = RngStreams::new(cfg.seed, trial);
        let mut chan_rng = streams.stream(Stream::Channel);
        let mut proc_rng = streams.stream(Stream::ProcessNoise);
        let mut dist_rng = streams.stream(Stream::Distortion);
        let mut obs_rng = streams.stream(Stream::ObservationNoise);

        let noise_var = cfg.noise_var();
        let q = self.pilots.n_pilots();
        let l = self.pilots.channel_length();
        let n = cfg.n_channels();

        let mut channel: ChannelState<T> = draw_initial_channel(cfg, &mut chan_rng)?;
        let mut channels = Vec::with_capacity(cfg.n_packets);
        let mut distortions = Vec::with_capacity(cfg.n_packets);
        let mut observations = Vec::with_capacity(cfg.n_packets);
        for k in 1..=cfg.n_packets {
            if k > 1 {
                let pn = channel.process_noise.clone();
                let v = draw_matrix::<T, _>(&mut proc_rng, l, n, |r, c| crate::scalar::to_f64(pn[(r, c)]));
                channel = ar1_step(&channel, Some(&v))?;
            }
            let drawn = draw_distortion::<T, _>(cfg, &mut dist_rng);
            let d = if k == 1 && cfg.reference_packet {
                PhaseDistortion::zero()
            } else {
                drawn
            };
            let w = draw_matrix::<T, _>(&mut obs_rng, q, n, |_, _| noise_var);
            let mut obs = observe(&channel, &d, lit(noise_var), &self.pilots, Some(&w))?;
            obs.packet_index = k;
            channels.push(channel.clone());
            distortions.push(d);
            observations.push(obs);
        }
        Ok(SimTrace {
            true_channels: channels,
            true_distortions: distortions,
            observations,
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
        })
    }
}

/// Trial 0 of `cfg`.
pub fn simulate<T: Real>(cfg: &SimConfig) -> Result<SimTrace<T>> {
    TraceGenerator::new(cfg.clone())?.trial(0)
}
