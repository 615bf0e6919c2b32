//! Losses, the balance criterion, surrogate densities and training.

mod losses;
mod surrogate;
mod train;

pub use losses::{
    balance_binary, balance_multiclass, balance_tape, classifier_from_density, density_logits,
    nre_c_loss, nre_c_loss_value, nre_loss, nre_loss_value, npe_loss, regularized_loss,
    regularized_tape,
};
pub use surrogate::{
    AnalyticSurrogate, FlowSurrogate, PriorSurrogate, RatioSurrogate, Surrogate, TrainedSurrogate,
};
pub use train::{train, Algorithm, EpochRecord, TrainConfig, TrainLog};
