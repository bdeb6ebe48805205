//! Offline processing of CSI recordings and the synthetic rotating-reflector
//! recording used in place of hardware captures.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::experiment::SolverSettings;
use super::io::{ingest_csi, CsiFormat};
use crate::error::{Error, Result};
use crate::estimator::KalmanMap;
use crate::model::{
    exponential_profile, observe, ChannelState, Interval, Observation, PhaseDistortion, PilotSet, PilotSpec,
    PriorSupport,
};
use crate::scalar::Cx;
use crate::sim::{complex_normal, noise_var_from_snr_db, RngStreams, SimTrace, Stream};

/// Filter statistics for recorded data, where nothing is known about the
/// channel beyond a rough innovation level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordingConfig {
    /// Pilot layout of the recording.
    pub pilots: PilotSpec,
    pub alpha: f64,
    /// Per-tap process-noise variance, the same for every channel.
    pub process_noise_var: f64,
    pub noise_var: f64,
    pub slope_support: Interval<f64>,
    pub offset_support: Interval<f64>,
    pub solver: SolverSettings,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        let s = PriorSupport::<f64>::wifi_default();
        RecordingConfig {
            pilots: PilotSpec::default(),
            alpha: 1.0,
            process_noise_var: 1e-3,
            noise_var: noise_var_from_snr_db(30.0),
            slope_support: s.slope,
            offset_support: s.offset,
            solver: SolverSettings::default(),
        }
    }
}

/// Filter output for one packet.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingPacket {
    pub packet_index: usize,
    pub distortion: PhaseDistortion<f64>,
    pub degenerate: bool,
    /// Observed CSI, `Q × N`.
    pub raw: DMatrix<Cx<f64>>,
    /// `C Ĥ_{k|k}`, `Q × N`.
    pub recovered: DMatrix<Cx<f64>>,
}

pub fn process_observations(
    observations: &[Observation<f64>],
    cfg: &RecordingConfig,
    pilots: &PilotSet<f64>,
) -> Result<Vec<RecordingPacket>> {
    let Some(first) = observations.first() else {
        return Ok(Vec::new());
    };
    let n = first.n_channels();
    let l = pilots.channel_length();
    let support = PriorSupport {
        slope: cfg.slope_support,
        offset: cfg.offset_support,
    };
    let ecfg = cfg.solver.build(
        cfg.alpha,
        DMatrix::from_element(l, n, cfg.process_noise_var),
        cfg.noise_var,
        support,
        pilots,
    );
    let mut kf = KalmanMap::new(ecfg, pilots.clone())?;
    observations
        .iter()
        .map(|obs| {
            if obs.n_channels() != n {
                return Err(Error::dim("recording channels", n, obs.n_channels()));
            }
            let sol = kf.step(obs)?;
            Ok(RecordingPacket {
                packet_index: obs.packet_index,
                distortion: sol.distortion,
                degenerate: sol.degenerate,
                raw: obs.csi.clone(),
                recovered: pilots.dft() * &kf.state().estimate,
            })
        })
        .collect()
}

/// Ingests a CSI dump and runs the filter over it.
pub fn process_recording(
    path: &Path,
    format: CsiFormat,
    cfg: &RecordingConfig,
    pilots: &PilotSet<f64>,
) -> Result<(Vec<RecordingPacket>, usize)> {
    let ing = ingest_csi(path, format, pilots, cfg.noise_var)?;
    Ok((process_observations(&ing.observations, cfg, pilots)?, ing.n_rx.max(1)))
}

/// One row per packet, antenna pair and pilot.
pub fn write_recording_csv<W: Write>(
    out: W,
    packets: &[RecordingPacket],
    n_rx: usize,
    pilots: &PilotSet<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
    w.write_record([
        "packet", "tx", "rx", "pilot_index", "omega_d", "omega_0", "raw_mag", "raw_phase", "rec_mag", "rec_phase",
    ])
    .map_err(csv_err)?;
    for p in packets {
        for c in 0..p.raw.ncols() {
            for (m, q) in pilots.pilot_indices().iter().enumerate() {
                let (raw, rec) = (p.raw[(m, c)], p.recovered[(m, c)]);
                w.write_record([
                    p.packet_index.to_string(),
                    (c / n_rx).to_string(),
                    (c % n_rx).to_string(),
                    q.to_string(),
                    p.distortion.slope.to_string(),
                    p.distortion.offset.to_string(),
                    raw.norm().to_string(),
                    raw.arg().to_string(),
                    rec.norm().to_string(),
                    rec.arg().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv write: {e}")))
}

pub fn export_recording(path: &Path, packets: &[RecordingPacket], n_rx: usize, pilots: &PilotSet<f64>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_recording_csv(BufWriter::new(f), packets, n_rx, pilots)
}

/// A static direct path plus a reflector whose phase turns once per `period`
/// packets, seen through per-packet random phase distortion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectorFixture {
    pub pilots: PilotSpec,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_packets: usize,
    /// Rotation period in packets.
    pub period: f64,
    pub reflector_gain: f64,
    pub direct_tap: usize,
    pub reflector_tap: usize,
    pub snr_db: f64,
    /// Draw per-packet distortions; `false` gives a distortion-free recording.
    pub distorted: bool,
    pub slope_support: Interval<f64>,
    pub offset_support: Interval<f64>,
    pub seed: u64,
}

impl Default for ReflectorFixture {
    fn default() -> Self {
        let s = PriorSupport::<f64>::wifi_default();
        ReflectorFixture {
            pilots: PilotSpec::default(),
            n_tx: 3,
            n_rx: 3,
            n_packets: 200,
            period: 40.0,
            reflector_gain: 0.4,
            direct_tap: 0,
            reflector_tap: 2,
            snr_db: 30.0,
            distorted: true,
            slope_support: s.slope,
            offset_support: s.offset,
            seed: 7,
        }
    }
}

impl ReflectorFixture {
    pub fn generate(&self) -> Result<SimTrace<f64>> {
        let pilots = PilotSet::<f64>::from_spec(self.pilots.clone())?;
        let l = pilots.channel_length();
        if self.direct_tap >= l || self.reflector_tap >= l || self.direct_tap == self.reflector_tap {
            return Err(Error::InvalidInput("fixture taps must be distinct and below the channel length".into()));
        }
        if self.n_packets == 0 || self.n_tx == 0 || self.n_rx == 0 || !(self.period > 0.0) {
            return Err(Error::InvalidInput("fixture sizes and period must be positive".into()));
        }
        let n = self.n_tx * self.n_rx;
        let noise_var = noise_var_from_snr_db(self.snr_db);
        let streams = RngStreams::new(self.seed, 0);
        let mut chan_rng = streams.stream(Stream::Channel);
        let mut dist_rng = streams.stream(Stream::Distortion);
        let mut obs_rng = streams.stream(Stream::ObservationNoise);
        let direct: Vec<Cx<f64>> = (0..n).map(|_| complex_normal(&mut chan_rng, 1.0)).collect();
        let reflect: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut chan_rng, -PI..PI)).collect();

        let prof = exponential_profile::<f64>(l, 2.0);
        let profile = DMatrix::from_fn(l, n, |r, _| prof[r]);
        let mut out = SimTrace {
            true_channels: Vec::with_capacity(self.n_packets),
            true_distortions: Vec::with_capacity(self.n_packets),
            observations: Vec::with_capacity(self.n_packets),
            n_tx: self.n_tx,
            n_rx: self.n_rx,
        };
        let slope = rand_distr::Uniform::new_inclusive(self.slope_support.lo, self.slope_support.hi);
        let offset = rand_distr::Uniform::new_inclusive(self.offset_support.lo, self.offset_support.hi);
        for k in 1..=self.n_packets {
            let turn = 2.0 * PI * (k - 1) as f64 / self.period;
            let mut taps = DMatrix::from_element(l, n, Cx::new(0.0, 0.0));
            for i in 0..n {
                taps[(self.direct_tap, i)] = direct[i];
                taps[(self.reflector_tap, i)] = Cx::from_polar(self.reflector_gain * direct[i].norm(), reflect[i] + turn);
            }
            let state = ChannelState::new(taps, 1.0, DMatrix::zeros(l, n), profile.clone())?;
            let d = if self.distorted && k > 1 {
                use rand_distr::Distribution;
                PhaseDistortion::new(slope.sample(&mut dist_rng), offset.sample(&mut dist_rng))
            } else {
                PhaseDistortion::zero()
            };
            let w = DMatrix::from_fn(pilots.n_pilots(), n, |_, _| complex_normal::<f64, _>(&mut obs_rng, noise_var));
            let mut obs = observe(&state, &d, noise_var, &pilots, Some(&w))?;
            obs.packet_index = k;
            out.true_channels.push(state);
            out.true_distortions.push(d);
            out.observations.push(obs);
        }
        Ok(out)
    }
}
