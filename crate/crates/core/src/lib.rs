//! Desk-scale toolkit for gender-domain adaptation of a CTC/attention
//! Transformer speech recogniser.
//!
//! The crate covers the whole loop: synthesising a gender-tagged toy
//! corpus, log-mel/MFCC extraction, a small encoder-decoder Transformer with
//! optional x-vector fusion, CTC and attention losses on a hand-written
//! reverse-mode tape, Noam/Adadelta/Adam optimisation with resumable
//! checkpoints, fine-tuning recipes, and WER reports grouped by gender.

pub mod numerics;
pub mod features;
pub mod ctc;
pub mod model;
pub mod data;
pub mod eval;
pub mod optim;
pub mod verify;
