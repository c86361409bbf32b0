//! Procedural miniature corpora: beat-driven speech-to-motion clips and
//! template-driven text-to-motion clips sharing one 24-channel layout.

pub mod clip;
pub mod corpus;
pub mod speech;
pub mod text;
pub mod vocab;

pub use clip::{
    AudioTrack, BodyPart, MotionClip, PartLabels, PartLayout, TranscriptToken, AUDIO_RAW_CHANNELS, CHANNELS, CLIP_FRAMES,
    FPS, VALUE_BOUND,
};
pub use corpus::{build_corpus, load_corpus, save_corpus, Clip, ClipFile, ClipKind, Corpus, CorpusConfig};
pub use speech::{gen_speech_clip, SpeechConfig};
pub use text::{gen_text_clip, walk_template, TextConfig};
pub use vocab::{PromptTokens, Template, VOCAB_SIZE};
