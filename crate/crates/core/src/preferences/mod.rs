//! Landing-location preference proxy: a multinomial logit over locations,
//! preference rankings with random tie-breaks, and top-phi acceptable sets.

mod mnl;
mod ranking;

pub use mnl::{fit_mnl, CoarseEncoder, Convergence, MnlConfig, MultinomialLogitModel, DEFAULT_COARSE_FEATURES};
pub use ranking::{
    acceptable_set, rank_by_scores, rank_dataset, rank_locations, ranking_seed, write_preference_report, AcceptableSet,
    Phi, PreferenceRanking,
};
