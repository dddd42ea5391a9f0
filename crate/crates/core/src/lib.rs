//! Toolkit for turning address-event (AER) recordings into time-collapsed
//! static frames and probing how separable those frames are.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`aer`]: 5-byte event records and stream validation.
//! * [`events`]: polarity filters, time windows and saccade selection.
//! * [`collapse`]: per-pixel accumulation, per-pattern normalization,
//!   quantization, resizing and channel conversion.
//! * [`imageio`]: 8-bit BMP and PGM files.
//! * [`dataset`]: corpus scanning and stratified, seeded train/val splits.
//! * [`frames`]: loading a split's frames as classifier inputs.
//! * [`probe`]: the MLP classifier with batch norm, dropout and Adam.
//! * [`synth`]: planted-count event streams and synthetic corpora.

pub mod aer;
pub mod collapse;
pub mod dataset;
pub mod events;
pub mod frames;
pub mod imageio;
pub mod probe;
pub mod synth;

pub use aer::{Event, EventStream, Polarity};
pub use collapse::{CollapseMode, CollapsedImage, PixelGrid8, SpikeCountFrame};
