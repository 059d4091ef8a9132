//! Concrete Z-models: sample mean, linear regression (least squares and
//! pseudo-Huber), logistic regression, inverse propensity weighting and
//! two-stage least squares.

mod ipw;
mod linear;
mod logistic;
mod mean;
mod tsls;

pub use ipw::{IpwModel, IpwRecord};
pub use linear::{LinearModel, LinearRecord, Score};
pub use logistic::{logistic, logistic_derivative, LogisticModel};
pub use mean::MeanModel;
pub use tsls::{IvRecord, TslsModel, GRAM_RCOND_FLOOR};
