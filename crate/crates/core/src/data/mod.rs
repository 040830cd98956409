//! Dataset ingestion, binary embedding exchange and the synthetic benchmark.

pub mod embeddings;
pub mod features;
pub mod synthetic;
pub mod trec;

pub use embeddings::{
    read_embeddings, read_embeddings_from, write_embeddings, write_embeddings_to, EmbeddingReader, EmbeddingRecord,
    EmbeddingTable,
};
pub use features::{read_features, write_features};
pub use synthetic::{generate_synthetic, generate_token_dataset, Splits, SyntheticDataset, SyntheticSpec, TokenDataset, TokenSpec};
pub use trec::{read_qrels, read_run, write_qrels, write_run, RunEntry};
