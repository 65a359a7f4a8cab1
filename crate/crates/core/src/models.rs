//! The three analysis models: swing, contact and exit velocity.

use crate::glmm::{Factor, Family, FixedTerm, Grouping, ModelSpec, RandomEffect, RandomTerm, Response, Variable};

fn continuous(variable: Variable) -> FixedTerm {
    FixedTerm::Continuous { variable }
}

fn indicator(variable: Variable) -> FixedTerm {
    FixedTerm::Indicator { variable }
}

const BANG_SLOPE: RandomEffect = RandomEffect::Slope { variable: Variable::Bang };

/// Swing ~ CSP + fastball + pitch count (ref 0-0) + bang, with a random bang
/// slope by batter.
pub fn spec_swing() -> ModelSpec {
    ModelSpec {
        name: "swing".into(),
        response: Response::Swing,
        family: Family::BernoulliLogit,
        fixed: vec![
            FixedTerm::Intercept,
            continuous(Variable::Csp),
            indicator(Variable::Fastball),
            FixedTerm::Factor { factor: Factor::PitchCount, reference: "0-0".into() },
            indicator(Variable::Bang),
        ],
        random: vec![RandomTerm { group: Grouping::Batter, effects: vec![BANG_SLOPE], correlated: true }],
    }
}

/// Swing model with a correlated batter intercept next to the bang slope.
pub fn spec_swing_with_intercept() -> ModelSpec {
    let mut s = spec_swing();
    s.name = "swing_intercept_slope".into();
    s.random[0].effects = vec![RandomEffect::Intercept, BANG_SLOPE];
    s
}

/// Contact ~ CSP + fastball + bang + fastball:bang, with a batter intercept
/// and bang slope (correlated) and a pitcher intercept.
pub fn spec_contact() -> ModelSpec {
    ModelSpec {
        name: "contact".into(),
        response: Response::Contact,
        family: Family::BernoulliLogit,
        fixed: vec![
            FixedTerm::Intercept,
            continuous(Variable::Csp),
            indicator(Variable::Fastball),
            indicator(Variable::Bang),
            FixedTerm::Interaction { terms: vec![indicator(Variable::Fastball), indicator(Variable::Bang)] },
        ],
        random: vec![
            RandomTerm { group: Grouping::Batter, effects: vec![RandomEffect::Intercept, BANG_SLOPE], correlated: true },
            RandomTerm { group: Grouping::Pitcher, effects: vec![RandomEffect::Intercept], correlated: true },
        ],
    }
}

/// Contact model with independent batter intercept and bang slope.
pub fn spec_contact_uncorrelated() -> ModelSpec {
    let mut s = spec_contact();
    s.name = "contact_uncorrelated".into();
    s.random[0].correlated = false;
    s
}

/// Exit velocity ~ CSP + fastball + bang, Gaussian, with batter and pitcher
/// intercepts.
pub fn spec_ev() -> ModelSpec {
    ModelSpec {
        name: "ev".into(),
        response: Response::ExitVelocity,
        family: Family::GaussianIdentity,
        fixed: vec![
            FixedTerm::Intercept,
            continuous(Variable::Csp),
            indicator(Variable::Fastball),
            indicator(Variable::Bang),
        ],
        random: vec![
            RandomTerm { group: Grouping::Batter, effects: vec![RandomEffect::Intercept], correlated: true },
            RandomTerm { group: Grouping::Pitcher, effects: vec![RandomEffect::Intercept], correlated: true },
        ],
    }
}
