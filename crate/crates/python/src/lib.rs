//! Python bindings: events, tables, model fits, inference, the trajectory
//! model and the pipeline runner.

use std::path::PathBuf;

use bangs_core::descriptive::{self, ContingencyTable, Field};
use bangs_core::glmm::{self, DesignBundle, FitOptions, FittedModel, Scale, VcovMethod};
use bangs_core::inference::{self, BootstrapOptions};
use bangs_core::ingest::{self, PitchEvent, SchemaConfig, Subset};
use bangs_core::pipeline::{self, AnalysisConfig, Stage};
use bangs_core::{models, synth, trajectory};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: bangs_core::Error) -> PyErr {
    use bangs_core::Error as E;
    match e {
        E::Numerical(_) | E::BootstrapFailures { .. } | E::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_field(name: &str) -> PyResult<Field> {
    Ok(match name {
        "pitch_group" => Field::PitchGroup,
        "bang" => Field::Bang,
        "swing" => Field::Swing,
        "contact" => Field::Contact,
        "fastball" => Field::Fastball,
        "pitch_count" => Field::PitchCount,
        other => return Err(PyValueError::new_err(format!("unknown field `{other}`"))),
    })
}

fn parse_subset(name: &str) -> PyResult<Subset> {
    Ok(match name {
        "swing" => Subset::Swing,
        "contact" => Subset::Contact,
        "ev" => Subset::Ev,
        other => return Err(PyValueError::new_err(format!("unknown subset `{other}`"))),
    })
}

/// Cleaned pitch events.
#[pyclass(module = "bangs")]
struct Events {
    inner: Vec<PitchEvent>,
    schema: SchemaConfig,
    report: Option<String>,
}

#[pymethods]
impl Events {
    /// Loads and cleans a raw CSV; `schema_json` overrides the default layout.
    #[staticmethod]
    #[pyo3(signature = (path, schema_json=None))]
    fn load(path: PathBuf, schema_json: Option<&str>) -> PyResult<Self> {
        let schema = match schema_json {
            Some(s) => SchemaConfig::from_json_str(s).map_err(py_err)?,
            None => SchemaConfig::default(),
        };
        let raw = ingest::load_csv(&path, &schema).map_err(py_err)?;
        let (inner, report) = ingest::clean(&raw, &schema).map_err(py_err)?;
        Ok(Events { inner, schema, report: Some(report.to_json_string().map_err(py_err)?) })
    }

    /// Cleaning report as JSON (None for derived subsets).
    #[getter]
    fn cleaning_report(&self) -> Option<String> {
        self.report.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// "swing", "contact" or "ev".
    fn subset(&self, which: &str) -> PyResult<Events> {
        Ok(Events {
            inner: ingest::subset(&self.inner, parse_subset(which)?, &self.schema),
            schema: self.schema.clone(),
            report: None,
        })
    }

    fn tabulate(&self, row: &str, col: &str) -> PyResult<Table> {
        Ok(Table { inner: descriptive::tabulate(&self.inner, parse_field(row)?, parse_field(col)?).map_err(py_err)? })
    }

    /// (batter id, name, pitches, bangs), most-pitched-to first.
    #[pyo3(signature = (top_n=None))]
    fn player_bang_counts(&self, top_n: Option<usize>) -> Vec<(String, String, u64, u64)> {
        descriptive::player_bang_counts(&self.inner, top_n)
            .into_iter()
            .map(|p| (p.player.id, p.player.name, p.pitches, p.bangs))
            .collect()
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
        ingest::write_events_csv(std::io::BufWriter::new(f), &self.inner).map_err(py_err)
    }
}

/// A labelled contingency table.
#[pyclass(module = "bangs")]
struct Table {
    inner: ContingencyTable,
}

#[pymethods]
impl Table {
    #[staticmethod]
    fn from_counts(counts: Vec<Vec<u64>>) -> PyResult<Self> {
        Ok(Table { inner: ContingencyTable::from_rows(counts).map_err(py_err)? })
    }

    #[getter]
    fn row_labels(&self) -> Vec<String> {
        self.inner.row_labels.clone()
    }

    #[getter]
    fn col_labels(&self) -> Vec<String> {
        self.inner.col_labels.clone()
    }

    #[getter]
    fn counts(&self) -> Vec<Vec<u64>> {
        self.inner.counts.clone()
    }

    /// (statistic, degrees of freedom, p-value), no continuity correction.
    fn chi_square(&self) -> PyResult<(f64, usize, f64)> {
        let r = descriptive::chi_square_independence(&self.inner).map_err(py_err)?;
        Ok((r.statistic, r.degrees_of_freedom, r.p_value))
    }

    /// (estimate, lower, upper, p-value); Wald by default, conditional MLE
    /// with exact interval when `exact`.
    #[pyo3(signature = (level=0.95, exact=false))]
    fn odds_ratio(&self, level: f64, exact: bool) -> PyResult<(f64, f64, f64, f64)> {
        let r = if exact {
            descriptive::odds_ratio_2x2_exact(&self.inner, level)
        } else {
            descriptive::odds_ratio_2x2(&self.inner, level)
        }
        .map_err(py_err)?;
        Ok((r.estimate, r.lower, r.upper, r.p_value))
    }
}

#[pyfunction]
#[pyo3(signature = (successes, trials, level=0.95))]
fn clopper_pearson(successes: u64, trials: u64, level: f64) -> PyResult<(f64, f64)> {
    let i = descriptive::clopper_pearson(successes, trials, level).map_err(py_err)?;
    Ok((i.lower, i.upper))
}

#[pyfunction]
#[pyo3(signature = (successes, trials, level=0.95))]
fn wilson_score_cc(successes: u64, trials: u64, level: f64) -> PyResult<(f64, f64)> {
    let i = descriptive::wilson_score_cc(successes, trials, level).map_err(py_err)?;
    Ok((i.lower, i.upper))
}

/// A fitted swing, contact or exit-velocity model.
#[pyclass(module = "bangs")]
struct Model {
    inner: FittedModel,
    bundle: DesignBundle,
}

#[pymethods]
impl Model {
    /// Fits "swing", "contact" or "ev" to the matching subset of `events`.
    #[staticmethod]
    fn fit(events: &Events, name: &str) -> PyResult<Self> {
        let (spec, which) = match name {
            "swing" => (models::spec_swing(), Subset::Swing),
            "contact" => (models::spec_contact(), Subset::Contact),
            "ev" => (models::spec_ev(), Subset::Ev),
            other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
        };
        let rows = ingest::subset(&events.inner, which, &events.schema);
        let bundle = glmm::build_design(&rows, &spec).map_err(py_err)?;
        let inner = glmm::fit(&bundle, &spec, &FitOptions::default()).map_err(py_err)?;
        Ok(Model { inner, bundle })
    }

    #[getter]
    fn terms(&self) -> Vec<String> {
        self.inner.terms.clone()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.clone()
    }

    #[getter]
    fn se_beta(&self) -> Vec<f64> {
        self.inner.se_beta.clone()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.convergence.converged
    }

    #[getter]
    fn residual_sd(&self) -> Option<f64> {
        self.inner.residual_sd
    }

    /// (group, effect labels, standard deviations) per random term.
    #[getter]
    fn variance_components(&self) -> Vec<(String, Vec<String>, Vec<f64>)> {
        self.inner
            .variance_components
            .iter()
            .map(|v| (v.group.to_string(), v.effects.clone(), v.sd.clone()))
            .collect()
    }

    /// (term, estimate, std error, z, p) rows.
    fn coefficients(&self) -> Vec<(String, f64, f64, f64, f64)> {
        self.inner
            .coefficients()
            .into_iter()
            .map(|r| (r.term, r.estimate, r.std_error, r.z_value, r.p_value))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(py_err)
    }

    #[pyo3(signature = (term, level=0.95))]
    fn wald_interval(&self, term: &str, level: f64) -> PyResult<(f64, f64, f64)> {
        let w = inference::wald_interval(&self.inner, term, level).map_err(py_err)?;
        Ok((w.estimate, w.lower, w.upper))
    }

    #[pyo3(signature = (term, level=0.95))]
    fn odds_ratio(&self, term: &str, level: f64) -> PyResult<(f64, f64, f64)> {
        let o = inference::odds_ratio(&self.inner, term, level).map_err(py_err)?;
        Ok((o.odds_ratio, o.lower, o.upper))
    }

    /// (estimate, std error) of Σ wᵢβᵢ for {term: weight}.
    fn linear_combo(&self, weights: Vec<(String, f64)>) -> PyResult<(f64, f64)> {
        let named: Vec<(&str, f64)> = weights.iter().map(|(t, w)| (t.as_str(), *w)).collect();
        let w = inference::term_weights(&self.inner, &named).map_err(py_err)?;
        let lc = inference::linear_combo(&self.inner, &w).map_err(py_err)?;
        Ok((lc.estimate, lc.std_error))
    }

    /// (batter id, name, odds ratio), descending.
    #[pyo3(signature = (term="Bang"))]
    fn player_odds_ratios(&self, term: &str) -> PyResult<Vec<(String, String, f64)>> {
        Ok(inference::player_odds_ratios(&self.inner, term)
            .map_err(py_err)?
            .into_iter()
            .map(|p| (p.player.id, p.player.name, p.odds_ratio))
            .collect())
    }

    /// "linear" or "response" scale predictions for new events.
    #[pyo3(signature = (events, scale="response"))]
    fn predict(&self, events: &Events, scale: &str) -> PyResult<Vec<f64>> {
        let scale = match scale {
            "linear" => Scale::Linear,
            "response" => Scale::Response,
            other => return Err(PyValueError::new_err(format!("unknown scale `{other}`"))),
        };
        glmm::predict(&self.inner, &events.inner, scale).map_err(py_err)
    }

    /// Parametric-bootstrap percentile intervals for every batter's bang
    /// odds ratio: (id, name, odds ratio, lower, upper).
    #[pyo3(signature = (replicates=1000, seed=20170101, level=0.95, term="Bang"))]
    fn bootstrap_player_odds_ratios(
        &self,
        py: Python<'_>,
        replicates: usize,
        seed: u64,
        level: f64,
        term: &str,
    ) -> PyResult<Vec<(String, String, f64, f64, f64)>> {
        let players = glmm::blups(&self.inner, glmm::Grouping::Batter).map_err(py_err)?.levels.clone();
        let opts = BootstrapOptions {
            replicates,
            seed,
            level,
            fit: FitOptions { vcov: VcovMethod::Conditional, ..Default::default() },
        };
        let res = py
            .detach(|| inference::player_effect_bootstrap(&self.inner, &self.bundle, &players, term, &opts))
            .map_err(py_err)?;
        Ok(res
            .into_iter()
            .map(|r| (r.player.id, r.player.name, r.slope.estimate.exp(), r.slope.lower.exp(), r.slope.upper.exp()))
            .collect())
    }
}

#[pyfunction]
#[pyo3(signature = (velocity_mph, launch_angle_deg=30.0, params_json=None))]
fn carry_distance(velocity_mph: f64, launch_angle_deg: f64, params_json: Option<&str>) -> PyResult<f64> {
    let p = match params_json {
        Some(s) => trajectory::FlightParams::from_json_str(s).map_err(py_err)?,
        None => trajectory::FlightParams::default(),
    };
    trajectory::carry_distance(velocity_mph, launch_angle_deg, &p).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (path, pitches=3000, seed=7, batters=12, pitchers=80))]
fn synth_csv(path: PathBuf, pitches: usize, seed: u64, batters: usize, pitchers: usize) -> PyResult<()> {
    let cfg = synth::SynthConfig { seed, pitches, batters, pitchers, ..Default::default() };
    synth::write_csv_file(&cfg, &path).map_err(py_err)
}

/// Runs pipeline stages and returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out, data=None, stages=None, boot_b=1000, seed=20170101, full_precision=false))]
fn run_pipeline(
    py: Python<'_>,
    out: PathBuf,
    data: Option<PathBuf>,
    stages: Option<Vec<String>>,
    boot_b: usize,
    seed: u64,
    full_precision: bool,
) -> PyResult<String> {
    let stages = match stages {
        None => Stage::ALL.to_vec(),
        Some(v) => v.iter().map(|s| Stage::parse(s)).collect::<bangs_core::Result<_>>().map_err(py_err)?,
    };
    let cfg = AnalysisConfig { data, out_dir: out, stages, bootstrap_replicates: boot_b, seed, full_precision, ..Default::default() };
    let manifest = py.detach(|| pipeline::run(&cfg)).map_err(py_err)?;
    manifest.to_json_string().map_err(py_err)
}

#[pymodule]
fn bangs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Events>()?;
    m.add_class::<Table>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(clopper_pearson, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_score_cc, m)?)?;
    m.add_function(wrap_pyfunction!(carry_distance, m)?)?;
    m.add_function(wrap_pyfunction!(synth_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
