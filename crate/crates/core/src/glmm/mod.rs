//! Generalized linear mixed models η = Xβ + Zb with b ~ N(0, Σ): Laplace
//! maximum likelihood for Bernoulli-logit responses, REML for Gaussian ones.

mod design;
mod engine;
mod fit;
mod optim;
mod spec;
mod system;

pub use design::{build_design, Atom, ColumnSpec, DesignBundle, DesignLayout, RandomBlock};
pub use fit::{
    blups, fit, inverse_logit, logit, loglik, loglik_agq, loglik_gradient, loglik_theta, predict, theta_from_covariances,
    BlupTable, CoefficientRow, Convergence, FitOptions, FittedModel, Scale, StartValues, VarianceComponent,
    VarianceParams, VcovMethod,
};
pub use spec::{Factor, Family, FixedTerm, Grouping, ModelSpec, RandomEffect, RandomTerm, Response, Variable};
