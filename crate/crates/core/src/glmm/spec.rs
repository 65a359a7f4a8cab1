use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{PitchEvent, PitchGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Swing,
    Contact,
    ExitVelocity,
}

impl Response {
    pub fn value(self, e: &PitchEvent) -> Option<f64> {
        match self {
            Response::Swing => Some(f64::from(u8::from(e.swing))),
            Response::Contact => e.contact.map(|c| f64::from(u8::from(c))),
            Response::ExitVelocity => e.exit_velocity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Response::Swing => "swing",
            Response::Contact => "contact",
            Response::ExitVelocity => "exit_velocity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BernoulliLogit,
    GaussianIdentity,
}

/// Numeric per-pitch quantities usable as covariates, indicators and random slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Csp,
    Bang,
    Fastball,
    Balls,
    Strikes,
}

impl Variable {
    pub fn value(self, e: &PitchEvent) -> f64 {
        let ind = |b: bool| f64::from(u8::from(b));
        match self {
            Variable::Csp => e.csp,
            Variable::Bang => ind(e.bang),
            Variable::Fastball => ind(e.pitch_group.is_fastball()),
            Variable::Balls => f64::from(e.balls),
            Variable::Strikes => f64::from(e.strikes),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variable::Csp => "CSP",
            Variable::Bang => "Bang",
            Variable::Fastball => "Fastball",
            Variable::Balls => "Balls",
            Variable::Strikes => "Strikes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    PitchCount,
    PitchGroup,
}

impl Factor {
    /// All levels in their natural order.
    pub fn levels(self) -> Vec<String> {
        match self {
            Factor::PitchCount => {
                let mut v = Vec::with_capacity(12);
                for b in 0..=3 {
                    for s in 0..=2 {
                        v.push(format!("{b}-{s}"));
                    }
                }
                v
            }
            Factor::PitchGroup => PitchGroup::ALL.iter().map(|g| g.to_string()).collect(),
        }
    }

    pub fn value(self, e: &PitchEvent) -> String {
        match self {
            Factor::PitchCount => e.pitch_count(),
            Factor::PitchGroup => e.pitch_group.to_string(),
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Factor::PitchCount => "PC",
            Factor::PitchGroup => "PG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedTerm {
    Intercept,
    Continuous { variable: Variable },
    Indicator { variable: Variable },
    /// Treatment-coded factor; `reference` gets no column.
    Factor { factor: Factor, reference: String },
    /// Elementwise product of the component terms' columns.
    Interaction { terms: Vec<FixedTerm> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Batter,
    Pitcher,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Batter => "batter",
            Grouping::Pitcher => "pitcher",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomEffect {
    Intercept,
    Slope { variable: Variable },
}

impl RandomEffect {
    pub fn label(self) -> String {
        match self {
            RandomEffect::Intercept => "(Intercept)".to_string(),
            RandomEffect::Slope { variable } => variable.label().to_string(),
        }
    }

    pub fn value(self, e: &PitchEvent) -> f64 {
        match self {
            RandomEffect::Intercept => 1.0,
            RandomEffect::Slope { variable } => variable.value(e),
        }
    }
}

/// Random effects sharing one grouping factor. With `correlated = true` and
/// more than one effect, the effects get a full covariance block; otherwise
/// a diagonal one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTerm {
    pub group: Grouping,
    pub effects: Vec<RandomEffect>,
    #[serde(default = "default_true")]
    pub correlated: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub response: Response,
    pub family: Family,
    pub fixed: Vec<FixedTerm>,
    pub random: Vec<RandomTerm>,
}

impl ModelSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
