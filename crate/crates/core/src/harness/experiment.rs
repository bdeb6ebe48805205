//! Monte Carlo experiments over SNR, antenna setups and estimation methods.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::linreg_sanitize;
use crate::crlb::{crlb_filter_trace, crlb_phase, PhaseCrlbInput};
use crate::error::{Error, Result};
use crate::estimator::{default_interval_count, EstimatorConfig, KalmanMap};
use crate::model::{Interval, PhaseDistortion, PilotSet, PriorSupport};
use crate::scalar::wrap_angle;
use crate::sim::{SimConfig, SimTrace, TraceGenerator};

/// Trials processed per parallel batch before merging into the accumulators.
const BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Joint MAP distortion estimate plus Kalman tracking.
    KalmanMap,
    /// Per-packet phase linear regression.
    Linreg,
    /// Kalman filter fed the true distortion.
    OracleKf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::KalmanMap, Method::Linreg, Method::OracleKf];

    pub fn name(self) -> &'static str {
        match self {
            Method::KalmanMap => "kalman_map",
            Method::Linreg => "linreg",
            Method::OracleKf => "oracle_kf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaSetup {
    pub n_tx: usize,
    pub n_rx: usize,
}

impl AntennaSetup {
    pub fn new(n_tx: usize, n_rx: usize) -> Self {
        AntennaSetup { n_tx, n_rx }
    }

    pub fn n_channels(&self) -> usize {
        self.n_tx * self.n_rx
    }
}

impl fmt::Display for AntennaSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_tx, self.n_rx)
    }
}

impl FromStr for AntennaSetup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("antenna setup `{s}` is not of the form TxR"));
        let (t, r) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(AntennaSetup {
            n_tx: t.trim().parse().map_err(|_| bad())?,
            n_rx: r.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Worker count: `"auto"` or a positive integer in JSON.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Auto,
    Threads(usize),
}

impl FromStr for Parallelism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Parallelism::Auto);
        }
        match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Parallelism::Threads(n)),
            _ => Err(Error::InvalidInput(format!("parallelism `{s}` must be `auto` or a positive integer"))),
        }
    }
}

impl Serialize for Parallelism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Parallelism::Auto => s.serialize_str("auto"),
            Parallelism::Threads(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Parallelism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(n) => Parallelism::from_str(&n.to_string()),
            Repr::Name(s) => Parallelism::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Estimator settings that do not depend on the channel count or SNR; the
/// statistics (`α`, process and observation noise) come from the simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// MAP prior supports; `None` uses the simulator's distortion supports.
    pub slope_support: Option<Interval<f64>>,
    pub offset_support: Option<Interval<f64>>,
    pub newton_max_iters: usize,
    pub newton_tol: f64,
    /// `None` picks the default count for the slope support and pilot layout.
    pub n_intervals: Option<usize>,
    pub probes_per_interval: usize,
    pub refine_candidates: usize,
    pub diagonal_weight: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            slope_support: None,
            offset_support: None,
            newton_max_iters: 50,
            newton_tol: 1e-9,
            n_intervals: None,
            probes_per_interval: 2,
            refine_candidates: 3,
            diagonal_weight: false,
        }
    }
}

impl SolverSettings {
    /// Full estimator configuration for the given statistics.
    pub fn build(
        &self,
        alpha: f64,
        process_noise: DMatrix<f64>,
        noise_var: f64,
        fallback: PriorSupport<f64>,
        pilots: &PilotSet<f64>,
    ) -> EstimatorConfig<f64> {
        let support = PriorSupport {
            slope: self.slope_support.unwrap_or(fallback.slope),
            offset: self.offset_support.unwrap_or(fallback.offset),
        };
        let mut cfg = EstimatorConfig::new(alpha, process_noise, noise_var, support, pilots);
        cfg.newton_max_iters = self.newton_max_iters;
        cfg.newton_tol = self.newton_tol;
        cfg.n_intervals = self
            .n_intervals
            .unwrap_or_else(|| default_interval_count(&support.slope, pilots.max_abs_index()));
        cfg.probes_per_interval = self.probes_per_interval;
        cfg.refine_candidates = self.refine_candidates;
        cfg.diagonal_weight = self.diagonal_weight;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub estimator: SolverSettings,
    pub n_trials: usize,
    pub snr_sweep_db: Vec<f64>,
    pub antenna_setups: Vec<AntennaSetup>,
    pub methods: Vec<Method>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Parallelism,
}

impl Default for ExperimentSpec {
    /// The simulation study at desk scale: 200 trials, 100 packets, SNR 10/20/30 dB.
    fn default() -> Self {
        ExperimentSpec {
            sim: SimConfig {
                process_noise_scale: 0.0,
                ..SimConfig::default()
            },
            estimator: SolverSettings::default(),
            n_trials: 200,
            snr_sweep_db: vec![10.0, 20.0, 30.0],
            antenna_setups: vec![AntennaSetup::new(3, 3)],
            methods: Method::ALL.to_vec(),
            output_dir: None,
            parallelism: Parallelism::Auto,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidInput("n_trials must be at least 1".into()));
        }
        if self.snr_sweep_db.is_empty() || self.antenna_setups.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidInput("SNR sweep, antenna setups and methods must be non-empty".into()));
        }
        if let Parallelism::Threads(0) = self.parallelism {
            return Err(Error::InvalidInput("parallelism must be positive".into()));
        }
        for s in &self.antenna_setups {
            if s.n_channels() == 0 || s.n_tx > self.sim.n_tx || s.n_rx > self.sim.n_rx {
                return Err(Error::InvalidInput(format!(
                    "antenna setup {s} does not fit in the simulated {}x{} system",
                    self.sim.n_tx, self.sim.n_rx
                )));
            }
        }
        for &snr in &self.snr_sweep_db {
            SimConfig {
                snr_db: snr,
                ..self.sim.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

/// One row per (method, SNR, setup, packet).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub snr_db: f64,
    pub setup: String,
    pub packet_index: usize,
    /// `E‖Ĥ − H‖²_F` summed over channels; absent for linreg.
    pub mse_channel: Option<f64>,
    pub se_channel: Option<f64>,
    /// `E[(Ω̂d − Ωd)² + wrap(Ω̂0 − Ω0)²]`; absent for oracle_kf.
    pub mse_omega: Option<f64>,
    pub se_omega: Option<f64>,
    /// Mean of `mse_omega` over packets `1..=packet_index`.
    pub cum_mse_omega: Option<f64>,
    pub crlb_channel: Option<f64>,
    pub crlb_omega: Option<f64>,
    /// Fraction of trials whose estimate sits on the prior-support boundary.
    pub boundary_fraction: Option<f64>,
    pub n_trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn find(&self, method: Method, snr_db: f64, setup: &str, packet: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.snr_db == snr_db && r.setup == setup && r.packet_index == packet
        })
    }

    /// All rows of one curve, in packet order.
    pub fn series(&self, method: Method, snr_db: f64, setup: &str) -> Vec<&MetricRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.snr_db == snr_db && r.setup == setup)
            .collect()
    }
}

/// Per-packet squared errors of one trial, one method, one setup.
#[derive(Clone, Debug)]
struct TrialErrors {
    channel: Option<Vec<f64>>,
    omega: Option<Vec<f64>>,
    boundary: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        }
    }

    fn add(&mut self, xs: &[f64]) {
        for (k, &x) in xs.iter().enumerate() {
            self.sum[k] += x;
            self.sum_sq[k] += x * x;
        }
    }

    fn mean_se(&self, k: usize, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let mean = self.sum[k] / nf;
        if n < 2 {
            return (mean, 0.0);
        }
        let var = ((self.sum_sq[k] - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

#[derive(Clone, Debug)]
struct Accumulator {
    channel: Option<Moments>,
    omega: Option<Moments>,
    boundary: Option<Vec<usize>>,
}

impl Accumulator {
    fn new(method: Method, n_packets: usize) -> Self {
        Accumulator {
            channel: (method != Method::Linreg).then(|| Moments::new(n_packets)),
            omega: (method != Method::OracleKf).then(|| Moments::new(n_packets)),
            boundary: (method == Method::KalmanMap).then(|| vec![0; n_packets]),
        }
    }

    fn add(&mut self, e: &TrialErrors) {
        if let (Some(m), Some(x)) = (self.channel.as_mut(), e.channel.as_ref()) {
            m.add(x);
        }
        if let (Some(m), Some(x)) = (self.omega.as_mut(), e.omega.as_ref()) {
            m.add(x);
        }
        if let (Some(c), Some(b)) = (self.boundary.as_mut(), e.boundary.as_ref()) {
            for (k, &hit) in b.iter().enumerate() {
                c[k] += usize::from(hit);
            }
        }
    }
}

fn omega_error(est: &PhaseDistortion<f64>, truth: &PhaseDistortion<f64>) -> f64 {
    (est.slope - truth.slope).powi(2) + wrap_angle(est.offset - truth.offset).powi(2)
}

fn on_boundary(d: &PhaseDistortion<f64>, support: &PriorSupport<f64>) -> bool {
    let tol = 1e-9 * support.slope.width().max(1.0);
    let slope_edge = (d.slope - support.slope.lo).abs() <= tol || (support.slope.hi - d.slope).abs() <= tol;
    let offset_edge = !support.offset_is_full_circle()
        && ((d.offset - support.offset.lo).abs() <= tol || (support.offset.hi - d.offset).abs() <= tol);
    slope_edge || offset_edge
}

/// Everything about one (SNR, setup) cell that is shared by its trials.
struct Cell {
    setup: AntennaSetup,
    cfg: EstimatorConfig<f64>,
}

fn run_trial(
    trace: &SimTrace<f64>,
    cells: &[Cell],
    methods: &[Method],
    pilots: &PilotSet<f64>,
) -> Result<Vec<Vec<TrialErrors>>> {
    let np = trace.len();
    cells
        .iter()
        .map(|cell| {
            let sub = trace.subsystem(cell.setup.n_tx, cell.setup.n_rx)?;
            methods
                .iter()
                .map(|&m| match m {
                    Method::KalmanMap => {
                        let mut kf = KalmanMap::new(cell.cfg.clone(), pilots.clone())?;
                        let mut ch = Vec::with_capacity(np);
                        let mut om = Vec::with_capacity(np);
                        let mut bd = Vec::with_capacity(np);
                        for k in 0..np {
                            let sol = kf.step(&sub.observations[k])?;
                            ch.push((&kf.state().estimate - &sub.true_channels[k].taps).norm_squared());
                            om.push(omega_error(&sol.distortion, &sub.true_distortions[k]));
                            bd.push(!sol.degenerate && on_boundary(&sol.distortion, &cell.cfg.support));
                        }
                        Ok(TrialErrors {
                            channel: Some(ch),
                            omega: Some(om),
                            boundary: Some(bd),
                        })
                    }
                    Method::Linreg => {
                        let om = (0..np)
                            .map(|k| {
                                let r = linreg_sanitize(&sub.observations[k], pilots)?;
                                Ok(omega_error(&r.as_distortion(), &sub.true_distortions[k]))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(TrialErrors {
                            channel: None,
                            omega: Some(om),
                            boundary: None,
                        })
                    }
                    Method::OracleKf => {
                        let mut kf = KalmanMap::new(cell.cfg.clone(), pilots.clone())?;
                        let mut ch = Vec::with_capacity(np);
                        for k in 0..np {
                            kf.step_known(&sub.observations[k], &sub.true_distortions[k])?;
                            ch.push((&kf.state().estimate - &sub.true_channels[k].taps).norm_squared());
                        }
                        Ok(TrialErrors {
                            channel: Some(ch),
                            omega: None,
                            boundary: None,
                        })
                    }
                })
                .collect()
        })
        .collect()
}

/// Column indices of the first `n_tx × n_rx` antennas inside an `n_rx`-wide trace.
fn setup_columns(setup: AntennaSetup, trace_rx: usize) -> Vec<usize> {
    (0..setup.n_tx)
        .flat_map(|t| (0..setup.n_rx).map(move |r| t * trace_rx + r))
        .collect()
}

/// Runs the Monte Carlo study. Trials are independent; they are evaluated in
/// parallel batches and merged in trial order, so the table does not depend
/// on the worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricTable> {
    spec.validate()?;
    let pool = {
        let b = rayon::ThreadPoolBuilder::new();
        let b = match spec.parallelism {
            Parallelism::Auto => b,
            Parallelism::Threads(n) => b.num_threads(n),
        };
        b.build().map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?
    };
    let np = spec.sim.n_packets;
    let mut table = MetricTable::default();

    for &snr in &spec.snr_sweep_db {
        let sim = SimConfig {
            snr_db: snr,
            ..spec.sim.clone()
        };
        let gen = TraceGenerator::<f64>::new(sim.clone())?;
        let pilots = gen.pilots().clone();
        let noise_var = sim.noise_var();
        let prof = sim.tap_profile();
        let l = prof.len();
        let full_noise =
            DMatrix::from_fn(l, sim.n_channels(), |r, _| (1.0 - sim.alpha * sim.alpha) * sim.process_noise_scale * prof[r]);

        let cells: Vec<Cell> = spec
            .antenna_setups
            .iter()
            .map(|&setup| {
                let q = full_noise.select_columns(&setup_columns(setup, sim.n_rx));
                Cell {
                    setup,
                    cfg: spec.estimator.build(sim.alpha, q, noise_var, sim.support(), &pilots),
                }
            })
            .collect();
        for c in &cells {
            c.cfg.validate(&pilots, c.setup.n_channels())?;
        }

        let mut acc: Vec<Vec<Accumulator>> = cells
            .iter()
            .map(|_| spec.methods.iter().map(|&m| Accumulator::new(m, np)).collect())
            .collect();

        let mut start = 0;
        while start < spec.n_trials {
            let end = (start + BATCH).min(spec.n_trials);
            let batch: Vec<Result<Vec<Vec<TrialErrors>>>> = pool.install(|| {
                (start..end)
                    .into_par_iter()
                    .map(|t| {
                        let trace = gen.trial(t as u64)?;
                        run_trial(&trace, &cells, &spec.methods, &pilots)
                    })
                    .collect()
            });
            for res in batch {
                let res = res?;
                for (ci, per_method) in res.iter().enumerate() {
                    for (mi, e) in per_method.iter().enumerate() {
                        acc[ci][mi].add(e);
                    }
                }
            }
            start = end;
        }

        for (ci, cell) in cells.iter().enumerate() {
            let n = cell.setup.n_channels();
            let crlb_h = crlb_filter_trace(
                &pilots,
                sim.alpha,
                &cell.cfg.process_noise,
                noise_var,
                &vec![PhaseDistortion::zero(); np],
                np,
            )?
            .scalar_bound_per_packet;
            let prof_mat = DMatrix::from_fn(l, n, |r, _| prof[r]);
            let crlb_o = crlb_phase(&PhaseCrlbInput::from_profile(&pilots, &prof_mat, noise_var))?;

            for (mi, &method) in spec.methods.iter().enumerate() {
                let a = &acc[ci][mi];
                let mut cum = 0.0;
                for k in 0..np {
                    let (mse_channel, se_channel) = match &a.channel {
                        Some(m) => {
                            let (v, s) = m.mean_se(k, spec.n_trials);
                            (Some(v), Some(s))
                        }
                        None => (None, None),
                    };
                    let (mse_omega, se_omega, cum_mse_omega) = match &a.omega {
                        Some(m) => {
                            let (v, s) = m.mean_se(k, spec.n_trials);
                            cum += v;
                            (Some(v), Some(s), Some(cum / (k + 1) as f64))
                        }
                        None => (None, None, None),
                    };
                    table.rows.push(MetricRow {
                        method,
                        snr_db: snr,
                        setup: cell.setup.to_string(),
                        packet_index: k + 1,
                        mse_channel,
                        se_channel,
                        mse_omega,
                        se_omega,
                        cum_mse_omega,
                        crlb_channel: mse_channel.map(|_| crlb_h[k]),
                        crlb_omega: mse_omega.map(|_| crlb_o),
                        boundary_fraction: a.boundary.as_ref().map(|b| b[k] as f64 / spec.n_trials as f64),
                        n_trials: spec.n_trials,
                    });
                }
            }
        }
    }
    Ok(table)
}
