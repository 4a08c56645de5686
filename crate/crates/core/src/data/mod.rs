//! Datasets: synthetic mixtures with planted structure, IDX and CSV ingestion,
//! label noise, and deterministic splitting.

mod csv_io;
mod dataset;
mod idx;
mod ops;
mod synth;

pub use csv_io::{read_dataset_csv, read_dataset_csv_path, write_dataset_csv, write_dataset_csv_path};
pub use dataset::{DatasetSplit, LabeledDataset, Planted};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, write_idx, IdxImages};
pub use ops::{inject_label_noise, split, subset_by_rank};
pub use synth::{generate_mixture, GenConfig, SubmodeConfig};
