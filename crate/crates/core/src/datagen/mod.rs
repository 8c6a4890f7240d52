//! Locally scaled multi-digit datasets: IDX ingestion, glyph composition
//! with independent per-digit scales, warped variants and on-disk records.

mod compose;
mod glyphs;
mod idx;
mod io;

pub use compose::{
    compose_sample, generate_sample, generate_split, make_variants, ComposeConfig, ComposedSample, DigitSource,
    GlyphBox, SourceKind, Split,
};
pub use glyphs::{crop, ink_box, resize, seven_segment};
pub use idx::{idx_bytes, parse_idx, read_idx, IdxData, IMAGES_MAGIC, LABELS_MAGIC};
pub use io::{
    parse_records, read_dataset, read_manifest, records_bytes, sha256_hex, write_dataset, DatasetManifest, SplitEntry,
    PLACEMENT_POLICY,
};
