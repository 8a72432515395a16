//! Synthetic manipulation-like episodes and the chunk datasets built from
//! them.

pub mod anchors;
pub mod chunk;
pub mod dataset;
pub mod episode;

pub use anchors::{anchor_spec_for, build_anchor_spec, AnchorSpec, AnchorTarget, TargetMode};
pub use chunk::{chunk_episode, ChunkLayout, ChunkSample, ExtendedActionChunk, ACTION_DIM, DELTA_DIM, EXT_DIM};
pub use dataset::{
    generate_dataset, read_dataset, read_records, round_sig9, write_dataset, write_records, DataConfig, Record,
};
pub use episode::{gen_episode, min_jerk, trajectory_for, Episode, Family, GeneratorConfig, TaskContext};
