//! An adversarial-robustness laboratory on a small CPU autodiff engine.
//!
//! The lab trains image classifiers with complement-entropy-style
//! objectives, attacks them with six white-box methods, hardens them
//! with PGD min-max adversarial training, and grid-samples loss sheets
//! over the 3-class probability simplex. Everything is 64-bit, seeded,
//! and bitwise reproducible; every gradient path is validated against
//! central finite differences.
//!
//! The guide under `book/` walks through the concepts chapter by
//! chapter; its code snippets compile and run as doctests of this crate.
//!
//! ```
//! use gce_lab::losses::{guided_complement_entropy, BatchPrediction, GceConfig};
//! use gce_lab::tensor::Tensor;
//!
//! // Logits -> probabilities -> guided complement entropy, end to end
//! // differentiable.
//! let logits = Tensor::leaf(vec![2, 4], vec![2.0, -1.0, 0.3, 0.0,
//!                                            0.1, 1.4, -0.7, 0.9])?;
//! let probs = logits.softmax()?;
//! let batch = BatchPrediction::new(probs, &[0, 1])?;
//! let loss = guided_complement_entropy(&batch, &GceConfig::default())?;
//! loss.backward()?;
//! assert!(logits.grad().is_some());
//! # Ok::<(), gce_lab::Error>(())
//! ```

pub mod attacks;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod landscape;
pub mod losses;
pub mod models;
pub mod report;
pub mod seeding;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{RawTensor, Tensor};

// The book's code blocks double as tests: rustdoc compiles and runs
// every `rust` snippet in these chapters against the public API.
#[doc = include_str!("../../../book/src/introduction.md")]
#[cfg(doctest)]
pub struct BookIntroduction;

#[doc = include_str!("../../../book/src/tensors.md")]
#[cfg(doctest)]
pub struct BookTensors;

#[doc = include_str!("../../../book/src/losses.md")]
#[cfg(doctest)]
pub struct BookLosses;

#[doc = include_str!("../../../book/src/landscape.md")]
#[cfg(doctest)]
pub struct BookLandscape;

#[doc = include_str!("../../../book/src/models-and-data.md")]
#[cfg(doctest)]
pub struct BookModelsAndData;

#[doc = include_str!("../../../book/src/attacks.md")]
#[cfg(doctest)]
pub struct BookAttacks;

#[doc = include_str!("../../../book/src/training.md")]
#[cfg(doctest)]
pub struct BookTraining;

#[doc = include_str!("../../../book/src/cli.md")]
#[cfg(doctest)]
pub struct BookCli;

#[doc = include_str!("../../../book/src/file-formats.md")]
#[cfg(doctest)]
pub struct BookFileFormats;

#[doc = include_str!("../../../README.md")]
#[cfg(doctest)]
pub struct ReadmeDoctests;
