//! CSI dump ingestion and CSV / JSON result export.
//!
//! The CSI format is one row per `(packet, tx, rx, subcarrier)`:
//! `packet,tx,rx,pilot_index,re,im`, with a mandatory header row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use super::experiment::{ExperimentSpec, MetricRow, MetricTable};
use crate::error::{Error, Result};
use crate::model::{Observation, PilotSet};
use crate::scalar::Cx;

pub const CSI_HEADER: [&str; 6] = ["packet", "tx", "rx", "pilot_index", "re", "im"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsiFormat {
    Csv,
}

impl FromStr for CsiFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(CsiFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown CSI format `{other}`"))),
        }
    }
}

/// Writes observations in the CSI dump format. Channel column `c` is antenna
/// pair `(c / n_rx, c % n_rx)`.
pub fn write_csi_csv<W: Write>(
    out: W,
    observations: &[Observation<f64>],
    n_rx: usize,
    pilots: &PilotSet<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
    w.write_record(CSI_HEADER).map_err(csv_err)?;
    for obs in observations {
        if obs.csi.nrows() != pilots.n_pilots() {
            return Err(Error::dim("observation rows", pilots.n_pilots(), obs.csi.nrows()));
        }
        if n_rx == 0 || obs.csi.ncols() % n_rx != 0 {
            return Err(Error::InvalidInput(format!("{} channels do not split into rows of {n_rx}", obs.csi.ncols())));
        }
        for c in 0..obs.csi.ncols() {
            for (m, &q) in pilots.pilot_indices().iter().enumerate() {
                let v = obs.csi[(m, c)];
                w.write_record([
                    obs.packet_index.to_string(),
                    (c / n_rx).to_string(),
                    (c % n_rx).to_string(),
                    q.to_string(),
                    v.re.to_string(),
                    v.im.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv write: {e}")))
}

pub fn export_csi(
    path: &Path,
    observations: &[Observation<f64>],
    n_rx: usize,
    pilots: &PilotSet<f64>,
) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csi_csv(BufWriter::new(f), observations, n_rx, pilots)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectedPacket {
    pub packet_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedCsi {
    /// Complete packets, in file order (packet index increasing).
    pub observations: Vec<Observation<f64>>,
    pub n_tx: usize,
    pub n_rx: usize,
    pub rejected: Vec<RejectedPacket>,
}

struct PendingPacket {
    index: usize,
    first_line: u64,
    values: BTreeMap<(usize, usize, usize), Cx<f64>>,
}

/// Parses a CSI dump. `noise_var` is attached to every observation.
///
/// Malformed rows, unknown pilot indices, duplicate entries, decreasing
/// packet indices and antenna indices outside the first packet's array are
/// parse errors carrying the line number. A packet with missing entries is
/// dropped with a warning.
pub fn read_csi<R: Read>(
    input: R,
    source: &Path,
    pilots: &PilotSet<f64>,
    noise_var: f64,
) -> Result<IngestedCsi> {
    let perr = |line: u64, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = rdr.records();
    let mut out = IngestedCsi {
        observations: Vec::new(),
        n_tx: 0,
        n_rx: 0,
        rejected: Vec::new(),
    };

    match records.next() {
        None => {
            log::warn!("{}: empty CSI file", source.display());
            return Ok(out);
        }
        Some(Err(e)) => return Err(perr(1, e.to_string())),
        Some(Ok(h)) => {
            let fields: Vec<&str> = h.iter().collect();
            if fields != CSI_HEADER {
                return Err(perr(1, format!("expected header `{}`", CSI_HEADER.join(","))));
            }
        }
    }

    let mut antennas: Option<(usize, usize)> = None;
    let mut current: Option<PendingPacket> = None;
    let mut finished = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 6 {
            return Err(perr(line, format!("expected 6 fields, found {}", rec.len())));
        }
        fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> std::result::Result<T, String> {
            rec[i]
                .parse()
                .map_err(|_| format!("cannot parse {} `{}`", CSI_HEADER[i], &rec[i]))
        }
        let parsed = (|| -> std::result::Result<_, String> {
            Ok((
                field::<usize>(&rec, 0)?,
                field::<usize>(&rec, 1)?,
                field::<usize>(&rec, 2)?,
                field::<i64>(&rec, 3)?,
                field::<f64>(&rec, 4)?,
                field::<f64>(&rec, 5)?,
            ))
        })();
        let (packet, tx, rx, q, re, im) = parsed.map_err(|m| perr(line, m))?;
        if !re.is_finite() || !im.is_finite() {
            return Err(perr(line, "non-finite CSI value".into()));
        }
        let m = pilots
            .position(q)
            .ok_or_else(|| perr(line, format!("subcarrier {q} is not a configured pilot")))?;

        match &current {
            Some(p) if packet < p.index => {
                return Err(perr(line, format!("packet index {packet} after {}", p.index)));
            }
            Some(p) if packet == p.index => {}
            _ => {
                if let Some(p) = current.take() {
                    if antennas.is_none() {
                        antennas = Some(array_shape(&p));
                    }
                    finished.push(p);
                }
                current = Some(PendingPacket {
                    index: packet,
                    first_line: line,
                    values: BTreeMap::new(),
                });
            }
        }
        if let Some((nt, nr)) = antennas {
            if tx >= nt || rx >= nr {
                return Err(perr(line, format!("antenna ({tx}, {rx}) outside the {nt}x{nr} array")));
            }
        }
        let p = current.as_mut().expect("packet opened above");
        if p.values.insert((tx, rx, m), Cx::new(re, im)).is_some() {
            return Err(perr(line, format!("duplicate entry for packet {packet}, antenna ({tx}, {rx}), subcarrier {q}")));
        }
    }
    if let Some(p) = current.take() {
        if antennas.is_none() {
            antennas = Some(array_shape(&p));
        }
        finished.push(p);
    }
    let Some((nt, nr)) = antennas else {
        log::warn!("{}: CSI file has a header but no rows", source.display());
        return Ok(out);
    };
    // the antenna array is fixed by the first packet, later ones must fit in it
    out.n_tx = nt;
    out.n_rx = nr;
    let qn = pilots.n_pilots();
    for p in finished {
        if let Some(&(tx, rx, _)) = p.values.keys().find(|&&(t, r, _)| t >= nt || r >= nr) {
            return Err(perr(p.first_line, format!("antenna ({tx}, {rx}) outside the {nt}x{nr} array")));
        }
        let expected = nt * nr * qn;
        if p.values.len() != expected {
            let reason = format!("{} of {expected} subcarrier entries present", p.values.len());
            log::warn!("{}: rejecting packet {}: {reason}", source.display(), p.index);
            out.rejected.push(RejectedPacket {
                packet_index: p.index,
                reason,
            });
            continue;
        }
        let mut csi = DMatrix::from_element(qn, nt * nr, Cx::new(0.0, 0.0));
        for (&(tx, rx, m), &v) in &p.values {
            csi[(m, tx * nr + rx)] = v;
        }
        out.observations.push(Observation::new(csi, noise_var, p.index, pilots)?);
    }
    Ok(out)
}

fn array_shape(p: &PendingPacket) -> (usize, usize) {
    let nt = p.values.keys().map(|k| k.0).max().map_or(0, |t| t + 1);
    let nr = p.values.keys().map(|k| k.1).max().map_or(0, |r| r + 1);
    (nt, nr)
}

pub fn ingest_csi(path: &Path, format: CsiFormat, pilots: &PilotSet<f64>, noise_var: f64) -> Result<IngestedCsi> {
    match format {
        CsiFormat::Csv => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            read_csi(std::io::BufReader::new(f), path, pilots, noise_var)
        }
    }
}

fn db(x: Option<f64>) -> Option<f64> {
    x.filter(|v| *v > 0.0).map(|v| 10.0 * v.log10())
}

pub fn write_metric_csv<'a, W: Write>(out: W, rows: impl IntoIterator<Item = &'a MetricRow>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
    // serde(flatten) rules out automatic headers in the csv crate
    w.write_record([
        "method",
        "snr_db",
        "setup",
        "packet_index",
        "mse_channel",
        "se_channel",
        "mse_omega",
        "se_omega",
        "cum_mse_omega",
        "crlb_channel",
        "crlb_omega",
        "boundary_fraction",
        "n_trials",
        "mse_channel_db",
        "mse_omega_db",
        "crlb_channel_db",
        "crlb_omega_db",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.method.to_string(),
            r.snr_db.to_string(),
            r.setup.clone(),
            r.packet_index.to_string(),
            opt(r.mse_channel),
            opt(r.se_channel),
            opt(r.mse_omega),
            opt(r.se_omega),
            opt(r.cum_mse_omega),
            opt(r.crlb_channel),
            opt(r.crlb_omega),
            opt(r.boundary_fraction),
            r.n_trials.to_string(),
            opt(db(r.mse_channel)),
            opt(db(r.mse_omega)),
            opt(db(r.crlb_channel)),
            opt(db(r.crlb_omega)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv write: {e}")))
}

fn write_metric_file<'a>(path: &Path, rows: impl IntoIterator<Item = &'a MetricRow>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_metric_csv(BufWriter::new(f), rows)
}

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'a str,
    spec: &'a ExperimentSpec,
    seed: u64,
    n_rows: usize,
    files: Vec<&'a str>,
}

/// Writes `metrics.csv`, the per-figure subsets and `manifest.json` into `dir`.
///
/// * `fig1a.csv`: every packet, first antenna setup.
/// * `fig1b.csv`: packets 10 and the last packet, first setup, all SNRs.
/// * `fig1c.csv`: packets 10 and the last packet, every setup.
pub fn export_experiment(dir: &Path, spec: &ExperimentSpec, table: &MetricTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = spec.antenna_setups.first().map(|s| s.to_string()).unwrap_or_default();
    let last = spec.sim.n_packets;
    let snapshot = |r: &&MetricRow| r.packet_index == 10.min(last) || r.packet_index == last;

    write_metric_file(&dir.join("metrics.csv"), &table.rows)?;
    write_metric_file(&dir.join("fig1a.csv"), table.rows.iter().filter(|r| r.setup == first))?;
    write_metric_file(
        &dir.join("fig1b.csv"),
        table.rows.iter().filter(|r| r.setup == first).filter(snapshot),
    )?;
    write_metric_file(&dir.join("fig1c.csv"), table.rows.iter().filter(snapshot))?;

    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        spec,
        seed: spec.sim.seed,
        n_rows: table.rows.len(),
        files: vec!["metrics.csv", "fig1a.csv", "fig1b.csv", "fig1c.csv"],
    };
    let path = dir.join("manifest.json");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
