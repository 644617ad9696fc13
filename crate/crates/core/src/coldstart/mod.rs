//! Vectors for items the trainer never saw: ads with no clicks (from their
//! creative text) and tail queries (through elastic matching to head
//! queries).

mod ads;
mod queries;

pub use ads::{
    anchor_phrases_vector, build_content_vectors, content_vector_set, extract_ngrams, read_catalog,
    resolve_anchor, write_provenance, AdCreative, ColdStartReport, ContentVector, DEFAULT_TAU_C,
    MAX_NGRAM,
};
pub use queries::{
    build_query_documents, inherit, query_texts, resolve_tail, Inherited, InvertedIndex,
    QueryDocument, BM25_B, BM25_K1, DEFAULT_ELASTIC_K,
};
