//! Scene change detection for fixed-camera image pairs.
//!
//! The crate covers the whole pipeline:
//!
//! 1. **types / dataset** – image pairs, binary change masks and the on-disk
//!    dataset layout (`manifest.json` + PNG files).
//! 2. **synthlab** – training-data synthesis: object pasting with OR-ed change
//!    labels, mask-preserving shadow augmentation, photometric jitter and a
//!    procedural scene generator.
//! 3. **net** – two convolutional feature extractors whose feature maps are
//!    concatenated and decoded by an upsampling CNN into a change probability map.
//! 4. **objective** – binary cross-entropy and offset Dice losses with analytic
//!    gradients, plus the poly learning-rate schedule.
//! 5. **trainer** – Adam training loop, ablation harness.
//! 6. **evalkit** – binarization, connected components, region matching and
//!    object-level precision / recall / F1.
//! 7. **cli** – the `scenediff` command-line front end.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod net;
pub mod objective;
pub mod seed;
pub mod synthlab;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Branch, ChangeMask, Image, ImagePair, LabeledSample, ProbabilityMask, Provenance, Split,
};
