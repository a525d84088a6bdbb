//! Referential-comprehension instruction data from box annotations.
//!
//! The pipeline turns scene-graph and detection annotations into
//! single-turn instruction dialogues whose regions are written as text
//! coordinates (`[x_min,y_min,x_max,y_max]`, normalized, three decimals):
//!
//! 1. [`ingest`] parses corpora into [`model::ImageBundle`]s.
//! 2. [`bootstrap`] asks a multimodal model to describe large objects and
//!    keeps a description only if the model can ground it back to the
//!    original box.
//! 3. [`taskgen`] instantiates instruction templates for each task.
//! 4. [`assembler`] mixes sources by weight and writes the corpus.
//! 5. [`eval`] scores model predictions.
//!
//! ```
//! use rc_instruct::geometry::{iou, parse_coords};
//!
//! let boxes = parse_coords("the cup at [0.1,0.2,0.3,0.4] and [0.2,0.2,0.4,0.4]");
//! assert_eq!(boxes.len(), 2);
//! assert!((iou(&boxes[0], &boxes[1]) - 1.0 / 3.0).abs() < 1e-9);
//! ```

pub mod assembler;
pub mod bootstrap;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod model;
pub mod seed;
pub mod taskgen;
pub mod templates;

pub use geometry::{CoordText, NormBox};
pub use model::{DialogueSample, ImageBundle, Task};
pub use templates::TemplateBank;
