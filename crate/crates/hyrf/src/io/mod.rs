//! Dataset ingestion, image IO, point clouds, and the checkpoint container.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod ply;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{load_dataset, Dataset, DatasetFormat, Split};
