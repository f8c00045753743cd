//! Session ingestion, preprocessing, temporal splits and synthetic data.

mod prepare;
mod session;
pub mod synthetic;

pub use prepare::{
    dedupe_trailing, kind_stats, preprocess, remove_overlap, stats_table, temporal_split, truncate,
    truncate_pad, KindStats, Padded, PreparedDataset, DEFAULT_MAX_LEN, DEFAULT_TRAIN_FRAC,
    DEFAULT_VAL_FRAC,
};
pub use session::{parse_sessions, read_sessions, write_sessions, Session, SessionKind, PAD};
pub use synthetic::{generate_synthetic, MarkovOrder, SyntheticConfig, SyntheticOracle};
