//! From waveforms or precomputed files to the stacked `d × t` embedding matrix.

mod audio;
mod emb;
mod frontend;

pub use audio::{
    chunk_waveform, chunk_waveform_with_stride, normalize_length, read_wav, PadMode, MAX_SECONDS,
    SAMPLE_RATE, TARGET_SAMPLES,
};
pub use emb::{decode_embedding, encode_embedding, read_embedding_file, write_embedding_file, EmbeddingMatrix};
pub use frontend::{build_matrix, synthetic_frontend, ChunkEmbedder, FrontendSpec, SyntheticFrontend};

/// Chunk durations evaluated in the window sweep, in milliseconds.
pub const STANDARD_WINDOWS_MS: [u32; 4] = [50, 100, 200, 300];
