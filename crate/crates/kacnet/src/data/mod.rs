//! Corpus ingestion, vocabulary, embeddings, checkpoints and the synthetic
//! benchmark generator.

mod checkpoint;
mod corpus;
mod embeddings;
mod synth;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{
    load_grounding_corpus, load_tags, save_images, save_queries, Corpus, LoadOptions, Proposal,
    ProposalSet, Query, FORMAT_VERSION, IMAGES_FORMAT, QUERIES_FORMAT,
};
pub use embeddings::{
    load_class_names, load_embeddings, load_lexicon, save_embeddings, save_lines, EmbeddingTable,
};
pub use synth::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
pub use vocab::{Vocabulary, BOS_ID, BOS_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
