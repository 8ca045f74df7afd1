//! Synthetic arithmetic corpus and its exact-arithmetic ground truth.

mod eval;
mod family;
mod generate;

pub use eval::{evaluate, render, tokenize, Token};
pub use family::{Group, ProblemFamily};
pub use generate::{family_counts, generate_corpus, sample_family, validate, Draw, Draws, Expression, ReplayDraws};
