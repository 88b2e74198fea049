//! Parallel preprocessing engine that converts raw in-the-wild audio into
//! filtered, segmented and transcribed speech corpora.
//!
//! Stages, in order: standardization, source separation, speaker
//! diarization, VAD-based segmentation, transcription and filtering. The
//! model-dependent stages sit behind [`backend::Backend`]; everything else is
//! deterministic and lives here.

pub mod audio;
pub mod backend;
pub mod exec;
pub mod filter;
pub mod fixtures;
pub mod manifest;
pub mod pipeline;
pub mod segment;
