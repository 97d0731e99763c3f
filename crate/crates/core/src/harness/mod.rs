//! Experiment engine: configuration, environments, the game loop, the
//! oracle equivalence suite and the complexity sweep.

pub mod complexity;
pub mod config;
pub mod env;
pub mod run;
pub mod verify;

pub use complexity::Family;
pub use complexity::{complexity_sweep, ComplexityReport, SweepOptions};
pub use config::{parse_continuum, parse_track, Config, EnvKind, EtaSetting, Format, Mode, StepSpec, SCHEMA_VERSION};
pub use env::{replica_streams, Environment};
pub use run::{run, RegretReport, RoundRecord, RunReport, RunSummary, CSV_HEADER};
pub use verify::{verify, verify_automaton, verify_continuum, Check, Outcome, VerifyOptions, VerifyReport};
