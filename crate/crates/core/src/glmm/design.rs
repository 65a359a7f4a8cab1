use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spec::{Factor, FixedTerm, Grouping, ModelSpec, RandomEffect, Variable};
use crate::error::{Error, Result};
use crate::ingest::{PitchEvent, Player};

/// One factor of a fixed-effect column product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Atom {
    One,
    Var { variable: Variable },
    Level { factor: Factor, level: String },
}

impl Atom {
    fn value(&self, e: &PitchEvent) -> f64 {
        match self {
            Atom::One => 1.0,
            Atom::Var { variable } => variable.value(e),
            Atom::Level { factor, level } => f64::from(u8::from(&factor.value(e) == level)),
        }
    }
}

/// A fixed-effect column: the product of its atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub label: String,
    pub atoms: Vec<Atom>,
}

/// Frozen column layout of X, reusable to build X for new events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub columns: Vec<ColumnSpec>,
}

impl DesignLayout {
    pub fn materialize(&self, events: &[PitchEvent]) -> DMatrix<f64> {
        DMatrix::from_fn(events.len(), self.columns.len(), |i, j| {
            self.columns[j].atoms.iter().map(|a| a.value(&events[i])).product()
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.label.clone()).collect()
    }
}

/// Random-effect columns of Z for one random term, stored factored: each row
/// belongs to exactly one level, and carries one value per effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBlock {
    pub group: Grouping,
    pub effect_labels: Vec<String>,
    pub correlated: bool,
    pub levels: Vec<Player>,
    pub level_of_row: Vec<usize>,
    /// Row-major n × k effect values (1 for intercepts, the covariate for slopes).
    pub values: Vec<f64>,
}

impl RandomBlock {
    pub fn n_effects(&self) -> usize {
        self.effect_labels.len()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn width(&self) -> usize {
        self.n_levels() * self.n_effects()
    }

    pub fn row_values(&self, i: usize) -> &[f64] {
        let k = self.n_effects();
        &self.values[i * k..(i + 1) * k]
    }

    /// Scalar random intercept with anonymous levels, for simulation and tests.
    pub fn intercept(group: Grouping, level_of_row: Vec<usize>) -> Self {
        let n_levels = level_of_row.iter().max().map_or(0, |m| m + 1);
        let values = vec![1.0; level_of_row.len()];
        RandomBlock {
            group,
            effect_labels: vec!["(Intercept)".into()],
            correlated: true,
            levels: (0..n_levels)
                .map(|l| Player { id: l.to_string(), name: format!("level {l}") })
                .collect(),
            level_of_row,
            values,
        }
    }
}

/// Everything the estimator needs: X, the factored Z, the response, and the
/// mapping back to source events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBundle {
    pub x: DMatrix<f64>,
    pub x_labels: Vec<String>,
    pub y: DVector<f64>,
    pub blocks: Vec<RandomBlock>,
    /// Index into the event list each row came from.
    pub row_events: Vec<usize>,
    pub layout: Option<DesignLayout>,
    pub warnings: Vec<String>,
}

impl DesignBundle {
    pub fn from_parts(
        x: DMatrix<f64>,
        x_labels: Vec<String>,
        y: DVector<f64>,
        blocks: Vec<RandomBlock>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || x_labels.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "X is {}x{} with {} labels, y has {n} rows",
                x.nrows(),
                x.ncols(),
                x_labels.len()
            )));
        }
        for b in &blocks {
            if b.level_of_row.len() != n || b.values.len() != n * b.n_effects() {
                return Err(Error::Dimension(format!("random block for {} has wrong length", b.group)));
            }
            if b.level_of_row.iter().any(|&l| l >= b.n_levels()) {
                return Err(Error::Dimension(format!("random block for {}: level index out of range", b.group)));
            }
        }
        Ok(DesignBundle {
            x,
            x_labels,
            y,
            blocks,
            row_events: (0..n).collect(),
            layout: None,
            warnings: Vec::new(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    /// Total number of random-effect columns q.
    pub fn n_random(&self) -> usize {
        self.blocks.iter().map(|b| b.width()).sum()
    }

    pub fn with_response(&self, y: DVector<f64>) -> Self {
        assert_eq!(y.len(), self.n_obs());
        DesignBundle { y, ..self.clone() }
    }

    /// Dense Z (n × q), term-major then level-major then effect. Intended for
    /// small problems and tests.
    pub fn z_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_obs(), self.n_random());
        let mut offset = 0;
        for b in &self.blocks {
            let k = b.n_effects();
            for i in 0..self.n_obs() {
                let base = offset + b.level_of_row[i] * k;
                for (e, v) in b.row_values(i).iter().enumerate() {
                    z[(i, base + e)] = *v;
                }
            }
            offset += b.width();
        }
        z
    }

    /// Errors naming the columns of X that are linear combinations of the
    /// preceding ones.
    pub fn check_rank(&self) -> Result<()> {
        let collinear = collinear_columns(&self.x);
        if collinear.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient(collinear.into_iter().map(|j| self.x_labels[j].clone()).collect()))
        }
    }
}

/// Modified Gram–Schmidt; a column whose residual norm falls below 1e-8 of
/// its own norm is reported as collinear.
pub(crate) fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-8 * norm {
            out.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    out
}

fn expand_term(term: &FixedTerm, events: &[PitchEvent], warnings: &mut Vec<String>) -> Vec<ColumnSpec> {
    match term {
        FixedTerm::Intercept => vec![ColumnSpec { label: "(Intercept)".into(), atoms: vec![Atom::One] }],
        FixedTerm::Continuous { variable } | FixedTerm::Indicator { variable } => vec![ColumnSpec {
            label: variable.label().into(),
            atoms: vec![Atom::Var { variable: *variable }],
        }],
        FixedTerm::Factor { factor, reference } => {
            let present: BTreeSet<String> = events.iter().map(|e| factor.value(e)).collect();
            factor
                .levels()
                .into_iter()
                .filter(|l| l != reference)
                .filter(|l| {
                    let keep = present.contains(l);
                    if !keep {
                        warnings.push(format!(
                            "level {}:{l} absent from data; column dropped",
                            factor.prefix()
                        ));
                    }
                    keep
                })
                .map(|level| ColumnSpec {
                    label: format!("{}:{level}", factor.prefix()),
                    atoms: vec![Atom::Level { factor: *factor, level }],
                })
                .collect()
        }
        FixedTerm::Interaction { terms } => {
            let mut cols = vec![ColumnSpec { label: String::new(), atoms: Vec::new() }];
            for t in terms {
                let parts = expand_term(t, events, warnings);
                let mut next = Vec::with_capacity(cols.len() * parts.len());
                for c in &cols {
                    for p in &parts {
                        let label = if c.label.is_empty() {
                            p.label.clone()
                        } else {
                            format!("{}:{}", c.label, p.label)
                        };
                        let mut atoms = c.atoms.clone();
                        atoms.extend(p.atoms.iter().cloned());
                        next.push(ColumnSpec { label, atoms });
                    }
                }
                cols = next;
            }
            cols
        }
    }
}

fn player_of(group: Grouping, e: &PitchEvent) -> &Player {
    match group {
        Grouping::Batter => &e.batter,
        Grouping::Pitcher => &e.pitcher,
    }
}

/// Builds X (treatment coding, spec order), the factored Z and y.
pub fn build_design(events: &[PitchEvent], spec: &ModelSpec) -> Result<DesignBundle> {
    let mut warnings = Vec::new();
    let mut y = Vec::with_capacity(events.len());
    for (i, e) in events.iter().enumerate() {
        y.push(spec.response.value(e).ok_or_else(|| Error::MissingCovariate {
            index: i,
            covariate: spec.response.name().to_string(),
        })?);
    }
    let mut columns = Vec::new();
    for term in &spec.fixed {
        columns.extend(expand_term(term, events, &mut warnings));
    }
    let layout = DesignLayout { columns };
    let x = layout.materialize(events);

    let mut blocks = Vec::with_capacity(spec.random.len());
    for term in &spec.random {
        let mut levels: Vec<Player> = events
            .iter()
            .map(|e| player_of(term.group, e).clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        levels.dedup_by(|a, b| a.id == b.id);
        let index: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let level_of_row = events.iter().map(|e| index[player_of(term.group, e).id.as_str()]).collect();
        let values = events
            .iter()
            .flat_map(|e| term.effects.iter().map(move |eff| eff.value(e)))
            .collect();
        blocks.push(RandomBlock {
            group: term.group,
            effect_labels: term.effects.iter().map(|e| e.label()).collect(),
            correlated: term.correlated,
            levels,
            level_of_row,
            values,
        });
    }

    Ok(DesignBundle {
        x,
        x_labels: layout.labels(),
        y: DVector::from_vec(y),
        blocks,
        row_events: (0..events.len()).collect(),
        layout: Some(layout),
        warnings,
    })
}

/// Random-effect rows for new events against a fitted level list; unseen
/// levels map to `None`.
pub(crate) fn lookup_levels(
    levels: &[Player],
    effects: &[RandomEffect],
    group: Grouping,
    events: &[PitchEvent],
) -> Vec<(Option<usize>, Vec<f64>)> {
    let index: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    events
        .iter()
        .map(|e| {
            let lvl = index.get(player_of(group, e).id.as_str()).copied();
            (lvl, effects.iter().map(|eff| eff.value(e)).collect())
        })
        .collect()
}
