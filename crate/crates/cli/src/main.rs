use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csitrack::crlb::{crlb_filter_trace, crlb_phase, PhaseCrlbInput};
use csitrack::harness::{
    export_csi, export_experiment, export_recording, process_recording, run_experiment, AntennaSetup, CsiFormat,
    ExperimentSpec, Method, MetricTable, Parallelism, RecordingConfig, ReflectorFixture,
};
use csitrack::model::{PhaseDistortion, PilotSet};
use csitrack::sim::{SimConfig, TraceGenerator};
use csitrack::Error;

#[derive(Parser)]
#[command(name = "csitrack", version, about = "Phase-distortion-robust CSI tracking experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trial and write it as a CSI dump plus a JSON truth file.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo experiment and export plot-ready tables.
    Run(RunArgs),
    /// Print the channel and phase bounds for a configuration.
    Crlb(CrlbArgs),
    /// Ingest a CSI dump and run the tracker over it.
    Process(ProcessArgs),
    /// Write the synthetic rotating-reflector recordings.
    ExportFixture(FixtureArgs),
}

/// Simulation overrides shared by several subcommands.
#[derive(Args, Clone, Default)]
struct SimOverrides {
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    n_packets: Option<usize>,
    #[arg(long)]
    n_tx: Option<usize>,
    #[arg(long)]
    n_rx: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    process_noise_scale: Option<f64>,
}

impl SimOverrides {
    fn apply(&self, cfg: &mut SimConfig) {
        if let Some(v) = self.snr_db {
            cfg.snr_db = v;
        }
        if let Some(v) = self.n_packets {
            cfg.n_packets = v;
        }
        if let Some(v) = self.n_tx {
            cfg.n_tx = v;
        }
        if let Some(v) = self.n_rx {
            cfg.n_rx = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.process_noise_scale {
            cfg.process_noise_scale = v;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    #[command(flatten)]
    sim: SimOverrides,
    /// CSI dump output.
    #[arg(long)]
    out: PathBuf,
    /// Ground truth (distortions and taps) as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n_trials: Option<usize>,
    /// Comma-separated list, e.g. `10,20,30`.
    #[arg(long, value_delimiter = ',')]
    snr_sweep_db: Option<Vec<f64>>,
    /// Comma-separated list, e.g. `3x3,2x2,1x3`.
    #[arg(long, value_delimiter = ',')]
    antenna_setups: Option<Vec<AntennaSetup>>,
    /// Comma-separated subset of kalman_map, linreg, oracle_kf.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// `auto` or a worker count.
    #[arg(long)]
    parallelism: Option<Parallelism>,
    #[command(flatten)]
    sim: SimOverrides,
}

#[derive(Args)]
struct CrlbArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sim: SimOverrides,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: CsiFormat,
    /// JSON recording config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    process_noise_var: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
    /// Output table, one row per packet, antenna pair and pilot.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_packets: Option<usize>,
    #[arg(long)]
    period: Option<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut cfg: SimConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    a.sim.apply(&mut cfg);
    let gen = TraceGenerator::<f64>::new(cfg.clone())?;
    let trace = gen.trial(a.trial)?;
    export_csi(&a.out, &trace.observations, trace.n_rx, gen.pilots())?;
    if let Some(p) = &a.truth {
        let packets: Vec<serde_json::Value> = trace
            .true_distortions
            .iter()
            .zip(&trace.true_channels)
            .enumerate()
            .map(|(k, (d, ch))| {
                let taps: Vec<Vec<[f64; 2]>> = ch
                    .taps
                    .column_iter()
                    .map(|c| c.iter().map(|v| [v.re, v.im]).collect())
                    .collect();
                serde_json::json!({
                    "packet": k + 1,
                    "omega_d": d.slope,
                    "omega_0": d.offset,
                    "taps": taps,
                })
            })
            .collect();
        write_json(p, &serde_json::json!({ "config": cfg, "trial": a.trial, "packets": packets }))?;
    }
    log::info!("wrote {} packets to {}", trace.len(), a.out.display());
    Ok(())
}

fn print_summary(spec: &ExperimentSpec, table: &MetricTable) {
    let k = spec.sim.n_packets;
    println!("method,snr_db,setup,packet,mse_channel,crlb_channel,mse_omega,crlb_omega");
    let f = |x: Option<f64>| x.map(|v| format!("{v:.4e}")).unwrap_or_default();
    for r in table.rows.iter().filter(|r| r.packet_index == k) {
        println!(
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.snr_db,
            r.setup,
            r.packet_index,
            f(r.mse_channel),
            f(r.crlb_channel),
            f(r.mse_omega),
            f(r.crlb_omega)
        );
    }
}

fn run(a: RunArgs) -> Result<(), Error> {
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => ExperimentSpec::default(),
    };
    spec.sim.seed = a.seed;
    a.sim.apply(&mut spec.sim);
    if let Some(v) = a.n_trials {
        spec.n_trials = v;
    }
    if let Some(v) = a.snr_sweep_db {
        spec.snr_sweep_db = v;
    }
    if let Some(v) = a.antenna_setups {
        spec.antenna_setups = v;
    }
    if let Some(v) = a.methods {
        spec.methods = v;
    }
    if let Some(v) = a.output_dir {
        spec.output_dir = Some(v);
    }
    if let Some(v) = a.parallelism {
        spec.parallelism = v;
    }
    let table = run_experiment(&spec)?;
    if let Some(dir) = &spec.output_dir {
        export_experiment(dir, &spec, &table)?;
        log::info!("wrote results to {}", dir.display());
    }
    print_summary(&spec, &table);
    Ok(())
}

fn crlb(a: CrlbArgs) -> Result<(), Error> {
    let mut cfg: SimConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimConfig::default(),
    };
    a.sim.apply(&mut cfg);
    cfg.validate()?;
    let pilots = PilotSet::<f64>::from_spec(cfg.pilots.clone())?;
    let prof = cfg.tap_profile();
    let l = prof.len();
    let n = cfg.n_channels();
    let scale = (1.0 - cfg.alpha * cfg.alpha) * cfg.process_noise_scale;
    let q = nalgebra::DMatrix::from_fn(l, n, |r, _| scale * prof[r]);
    let profile = nalgebra::DMatrix::from_fn(l, n, |r, _| prof[r]);
    let omega = crlb_phase(&PhaseCrlbInput::from_profile(&pilots, &profile, cfg.noise_var()))?;
    let trace = crlb_filter_trace(
        &pilots,
        cfg.alpha,
        &q,
        cfg.noise_var(),
        &vec![PhaseDistortion::zero(); cfg.n_packets],
        cfg.n_packets,
    )?;
    println!("# crlb_omega = {omega:.6e} ({:.2} dB)", 10.0 * omega.log10());
    println!("packet,crlb_channel,crlb_channel_db");
    for (k, v) in trace.scalar_bound_per_packet.iter().enumerate() {
        println!("{},{v:.6e},{:.3}", k + 1, 10.0 * v.log10());
    }
    Ok(())
}

fn process(a: ProcessArgs) -> Result<(), Error> {
    let mut cfg: RecordingConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RecordingConfig::default(),
    };
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.process_noise_var {
        cfg.process_noise_var = v;
    }
    if let Some(v) = a.noise_var {
        cfg.noise_var = v;
    }
    let pilots = PilotSet::<f64>::from_spec(cfg.pilots.clone())?;
    let (packets, n_rx) = process_recording(&a.input, a.format, &cfg, &pilots)?;
    export_recording(&a.out, &packets, n_rx, &pilots)?;
    log::info!("processed {} packets", packets.len());
    Ok(())
}

fn export_fixture(a: FixtureArgs) -> Result<(), Error> {
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut fx = ReflectorFixture::default();
    if let Some(v) = a.seed {
        fx.seed = v;
    }
    if let Some(v) = a.n_packets {
        fx.n_packets = v;
    }
    if let Some(v) = a.period {
        fx.period = v;
    }
    let pilots = PilotSet::<f64>::from_spec(fx.pilots.clone())?;
    let variants = [
        ("reflector", fx.clone()),
        (
            "static",
            ReflectorFixture {
                reflector_gain: 0.0,
                distorted: false,
                ..fx.clone()
            },
        ),
    ];
    for (name, v) in variants {
        let tr = v.generate()?;
        export_csi(&a.out_dir.join(format!("{name}.csv")), &tr.observations, tr.n_rx, &pilots)?;
        let truth: Vec<serde_json::Value> = tr
            .true_distortions
            .iter()
            .enumerate()
            .map(|(k, d)| serde_json::json!({ "packet": k + 1, "omega_d": d.slope, "omega_0": d.offset }))
            .collect();
        write_json(
            &a.out_dir.join(format!("{name}.json")),
            &serde_json::json!({ "fixture": v, "packets": truth }),
        )?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Unidentifiable(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Run(a) => run(a),
        Cmd::Crlb(a) => crlb(a),
        Cmd::Process(a) => process(a),
        Cmd::ExportFixture(a) => export_fixture(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
