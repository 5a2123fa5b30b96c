//! Experiment orchestration: configuration, full-batch training runs with
//! per-epoch metrics, CSV/SVG output and resumable sweeps.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, MiEndpoint};
pub use output::{csv_string, emit_csv, emit_svg_infoplane, read_csv, svg_infoplane, CSV_HEADER};
pub use run::{capture_activations, mi_nodes, run_experiment, run_on, RunState, Trajectory, TrajectoryRecord};
pub use sweep::{read_manifest, sweep, sweep_on, ManifestEntry, SweepGrid, SweepReport, MANIFEST};
