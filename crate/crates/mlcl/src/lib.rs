//! Multi-label continual learning at desk scale.
//!
//! The engine trains a small graph-augmented multi-label classifier over a
//! stream of class-incremental tasks. Label relationships among all seen
//! classes live in an augmented correlation matrix built from streaming
//! hard-label statistics and, where old annotations are missing, from a
//! frozen expert's soft labels. Two distillation terms tie the current model
//! to the expert to limit class- and relationship-level forgetting.
//!
//! Modules, bottom up:
//!
//! * [`matrix`], [`autodiff`], [`optim`] — dense matrices, reverse-mode
//!   differentiation, Adam, gradient checking.
//! * [`stream`] — synthetic multi-label data, task splitting, label
//!   projection, dataset files.
//! * [`acm`] — co-occurrence counters, block assembly, augmentation,
//!   propagation normalization, oracle comparison.
//! * [`model`] — backbone, partial label encoder, graph layers, prediction
//!   fusion, expert snapshots, class expansion.
//! * [`losses`] — classification, distillation, relationship preservation.
//! * [`metrics`] — mAP, per-class/overall precision-recall-F1, forgetting.
//! * [`trainer`] — the per-task loop and the reference modes.
//! * [`config`], [`report`] — experiment files in and result files out.
//!
//! The `book/` directory of the repository walks through the concepts with
//! runnable snippets; those snippets compile as doc-tests of this crate.

pub mod acm;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Doc-tests for the guide: every Rust snippet in the book must compile and
/// run against the current crate.
#[cfg(doctest)]
mod book {
    macro_rules! book_chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(unused)]
            mod $name {}
        };
    }

    book_chapter!(introduction, "../../../book/src/introduction.md");
    book_chapter!(scenarios, "../../../book/src/scenarios.md");
    book_chapter!(streams, "../../../book/src/streams.md");
    book_chapter!(correlation, "../../../book/src/correlation.md");
    book_chapter!(model, "../../../book/src/model.md");
    book_chapter!(objective, "../../../book/src/objective.md");
    book_chapter!(training, "../../../book/src/training.md");
    book_chapter!(evaluation, "../../../book/src/evaluation.md");
    book_chapter!(autodiff, "../../../book/src/autodiff.md");
    book_chapter!(cli, "../../../book/src/cli.md");
}
