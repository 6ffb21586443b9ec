//! The marginalized two-stage rater model: parameters, priors, category
//! probabilities and the log-posterior with its gradient.

pub mod gradcheck;
pub mod params;
pub mod pmf;
pub mod posterior;
pub mod prior;

pub use params::{natural_names, ModelDims, NaturalParams, ParamLayout};
pub use pmf::{effective_rater_params, marginal_rating_pmf, stage1_pmf, stage2_pmf, Cuts, Pmf};
pub use posterior::{applicability_loglik, grad_log_posterior, log_posterior, LikelihoodMode, Model};
pub use prior::{NormalPrior, PriorConfig};
