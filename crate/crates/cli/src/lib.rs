//! IO and file-format companion to `spm-core`: PNG codecs, dataset
//! directories with manifests, checkpoint and bank-snapshot files, metrics
//! CSVs, and the JSON run configuration. The `spm` binary wires these into
//! subcommands.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod metrics;
pub mod pngio;
