//! Corpus ingestion, overlap categories, statistics and synthetic corpora.

mod corpus;
mod overlap;
mod synth;

pub use corpus::{
    align_record, corpus_from_records, load_corpus, locate, parse_records, read_records,
    records_to_jsonl, save_records, Corpus, GoldTriple, LoadOptions, Record, RelationSet, Sentence,
    Triple, UnknownRelation,
};
pub use overlap::{
    bucket_by_count, bucket_by_triple_count, categorize_overlap, corpus_stats, Buckets,
    CorpusStats, CountBucket, OverlapFlags,
};
pub use synth::{
    generate_synthetic, relation_inventory, Category, OverlapMix, SynthConfig, SynthCorpus,
};
