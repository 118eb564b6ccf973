//! The three prediction paths: a linear model on encoded features, a linear
//! model on frozen LM embeddings, and an adapter-tuned LM answering yes/no.

mod linear;
mod lm;

pub use linear::{predict_linear, train_linear, ClassWeight, LinearFit, LinearModel, LinearOptions};
pub use lm::{
    embed_dataset, finetune_lm_classifier, gold_token, predict_yes_no, restricted_argmax, standardize, AdapterConfig,
    FineTuneOutcome,
};
