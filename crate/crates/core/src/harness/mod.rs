//! Monte Carlo experiment runner, CSI dump ingestion and result export.

mod experiment;
mod io;
mod recording;

pub use experiment::{
    run_experiment, AntennaSetup, ExperimentSpec, Method, MetricRow, MetricTable, Parallelism, SolverSettings,
};
pub use io::{
    export_csi, export_experiment, ingest_csi, read_csi, write_csi_csv, write_metric_csv, CsiFormat, IngestedCsi,
    RejectedPacket, CSI_HEADER,
};
pub use recording::{
    export_recording, process_observations, process_recording, write_recording_csv, RecordingConfig,
    RecordingPacket, ReflectorFixture,
};
