//! File formats and dataset plumbing: PGM/PPM codec, PNG decoding, stem-based
//! image/mask pairing, binary checkpoints, run configuration and weight-stats
//! export.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pnm;
pub mod stats;

pub use checkpoint::{load_checkpoint, peek_config, save_checkpoint, RngState};
pub use config::{parse_config, read_config_file, EXAMPLE};
pub use dataset::{load_image, load_image_resized, load_mask_native, load_pairs, load_sample, PairListing, RawImage};
pub use pnm::{read_pnm, write_pgm, write_ppm, PnmImage};
pub use stats::{write_csv, write_json, StatsCollector, WeightStat, STATS_SCHEMA};
