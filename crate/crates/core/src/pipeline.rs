//! End-to-end analysis run: cleaning, descriptive tables, the three models,
//! the player bootstrap and the trajectory translation, written as flat files
//! with a JSON manifest.
//!
//! Every stage after ingest can run on the cleaned events cached in the output
//! directory (`events.csv`), and the bootstrap and trajectory stages reuse
//! cached model JSON when it matches the current data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptive::{
    chi_square_independence, clopper_pearson, exit_velocity_summary, monthly_bang_proportions,
    odds_ratio_2x2, odds_ratio_2x2_exact, player_bang_counts, tabulate, wilson_score_cc, Field,
};
use crate::error::{Error, Result};
use crate::glmm::{build_design, fit, DesignBundle, FitOptions, FittedModel, ModelSpec, VcovMethod};
use crate::inference::{
    bootstrap_distributions_export, linear_combo, odds_ratio, parametric_bootstrap_many, player_effect,
    player_odds_ratios, term_weights, wald_interval, write_distributions_csv, BootstrapOptions, BootstrapResult,
    OddsRatio, PlayerBootstrap,
};
use crate::ingest::{clean, load_csv, load_csv_reader, subset, write_events_csv, PitchEvent, SchemaConfig, Subset};
use crate::models::{spec_contact, spec_ev, spec_swing};
use crate::trajectory::{carry_distance, FlightParams};

pub const EVENTS_FILE: &str = "events.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_MARKER: &str = ".partial";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Descriptive,
    Swing,
    Contact,
    Ev,
    Bootstrap,
    Trajectory,
    Report,
}

impl Stage {
    /// Everything `all` runs, in execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Descriptive,
        Stage::Swing,
        Stage::Contact,
        Stage::Ev,
        Stage::Bootstrap,
        Stage::Trajectory,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Descriptive => "descriptive",
            Stage::Swing => "swing",
            Stage::Contact => "contact",
            Stage::Ev => "ev",
            Stage::Bootstrap => "bootstrap",
            Stage::Trajectory => "trajectory",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Raw source CSV. When absent, stages read `events.csv` from `out_dir`.
    pub data: Option<PathBuf>,
    /// JSON schema config; the default Statcast layout when absent.
    pub schema: Option<PathBuf>,
    pub stages: Vec<Stage>,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    /// Tables print full precision instead of 2 decimals.
    pub full_precision: bool,
    /// Bootstrap JSON carries every replicate value.
    pub include_replicates: bool,
    /// Batters included in the bootstrap-distribution export.
    pub distribution_players: usize,
    pub level: f64,
    pub flight: FlightParams,
    pub base_velocity_mph: f64,
    pub launch_angle_deg: f64,
    pub fit: FitOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            data: None,
            schema: None,
            stages: Stage::ALL.to_vec(),
            bootstrap_replicates: 1000,
            seed: 20170101,
            out_dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            full_precision: false,
            include_replicates: false,
            distribution_players: 9,
            level: 0.95,
            flight: FlightParams::default(),
            base_velocity_mph: 100.0,
            launch_angle_deg: 30.0,
            fit: FitOptions::default(),
        }
    }
}

impl AnalysisConfig {
    /// Checks the invariants and creates the output directory.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("no stages selected".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::InvalidArgument("no output formats selected".into()));
        }
        if self.stages.contains(&Stage::Bootstrap) && self.bootstrap_replicates < 2 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.bootstrap_replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {}", self.level)));
        }
        self.flight.validate()?;
        if let Some(d) = &self.data {
            if !d.is_file() {
                return Err(Error::InvalidArgument(format!("data file {} not found", d.display())));
            }
        }
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let probe = self.out_dir.join(".write_probe");
        fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
        Ok(())
    }

    fn wants(&self, s: Stage) -> bool {
        self.stages.contains(&s)
    }

    fn csv(&self) -> bool {
        self.formats.contains(&OutputFormat::Csv)
    }

    fn json(&self) -> bool {
        self.formats.contains(&OutputFormat::Json)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub input_rows: Option<usize>,
    pub events: usize,
    pub swing: usize,
    pub contact: usize,
    pub ev: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub stage: Stage,
    /// Data rows (CSV tables only).
    pub rows: Option<usize>,
    pub columns: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub bootstrap_replicates: usize,
    pub full_precision: bool,
    pub stages: Vec<Stage>,
    pub schema_version: String,
    pub row_counts: RowCounts,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Display formatting for emitted tables.
pub fn format_number(x: f64, full_precision: bool) -> String {
    if full_precision {
        format!("{x}")
    } else {
        format!("{x:.2}")
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: BTreeMap<String, FileEntry>,
}

impl Outputs<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_bytes(&mut self, name: &str, stage: Stage, bytes: &[u8], shape: Option<(usize, usize)>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.files.insert(
            name.to_string(),
            FileEntry { path: name.to_string(), stage, rows: shape.map(|s| s.0), columns: shape.map(|s| s.1) },
        );
        Ok(())
    }

    fn table(&mut self, name: &str, stage: Stage, t: &Table) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv buffer: {e}")))?;
        self.write_bytes(name, stage, &bytes, Some((t.rows.len(), t.header.len())))
    }

    fn json<T: Serialize>(&mut self, name: &str, stage: Stage, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, stage, s.as_bytes(), None)
    }

    fn csv_with(&mut self, name: &str, stage: Stage, rows: usize, columns: usize, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, stage, &buf, Some((rows, columns)))
    }
}

struct Context<'a> {
    config: &'a AnalysisConfig,
    schema: SchemaConfig,
    events: Option<Vec<PitchEvent>>,
    input_rows: Option<usize>,
    models: BTreeMap<&'static str, (FittedModel, DesignBundle)>,
}

fn stage_err(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage: stage.as_str().to_string(), source: Box::new(e) },
    }
}

/// Schema for reading the canonical `events.csv` back: canonical columns with
/// the user's code sets.
fn cache_schema(schema: &SchemaConfig) -> SchemaConfig {
    SchemaConfig {
        columns: SchemaConfig::canonical().columns,
        bang_true_values: vec!["1".into()],
        missing_values: vec![String::new()],
        ..schema.clone()
    }
}

impl Context<'_> {
    fn events(&self) -> Result<&[PitchEvent]> {
        self.events
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no events: pass a data file or run ingest first".into()))
    }

    fn load(&mut self, out: &mut Outputs) -> Result<()> {
        if let Some(path) = &self.config.data {
            let raw = load_csv(path, &self.schema)?;
            let (events, report) = clean(&raw, &self.schema)?;
            self.input_rows = Some(raw.len());
            let mut buf = Vec::new();
            write_events_csv(&mut buf, &events)?;
            out.write_bytes(EVENTS_FILE, Stage::Ingest, &buf, Some((events.len(), crate::ingest::CANONICAL_COLUMNS.len())))?;
            out.json("cleaning_report.json", Stage::Ingest, &report)?;
            let mut t = Table::new(&["rule", "removed"]);
            for (rule, n) in &report.removed {
                t.push(vec![rule.as_str().to_string(), n.to_string()]);
            }
            t.push(vec!["input_rows".into(), report.input_rows.to_string()]);
            t.push(vec!["output_rows".into(), report.output_rows.to_string()]);
            out.table("cleaning_report.csv", Stage::Ingest, &t)?;
            self.events = Some(events);
        } else {
            let p = out.path(EVENTS_FILE);
            if p.is_file() {
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let raw = load_csv_reader(bytes.as_slice(), &cache_schema(&self.schema))?;
                let (events, _) = clean(&raw, &cache_schema(&self.schema))?;
                self.events = Some(events);
            }
        }
        Ok(())
    }

    fn row_counts(&self) -> RowCounts {
        match &self.events {
            None => RowCounts { input_rows: self.input_rows, ..Default::default() },
            Some(ev) => RowCounts {
                input_rows: self.input_rows,
                events: ev.len(),
                swing: subset(ev, Subset::Swing, &self.schema).len(),
                contact: subset(ev, Subset::Contact, &self.schema).len(),
                ev: subset(ev, Subset::Ev, &self.schema).len(),
            },
        }
    }

    /// Fitted model for `name`, from this run, the cache, or a fresh fit.
    fn model(&mut self, name: &'static str, out: &Outputs) -> Result<&(FittedModel, DesignBundle)> {
        if !self.models.contains_key(name) {
            let (spec, which) = model_spec(name);
            let rows = subset(self.events()?, which, &self.schema);
            let bundle = build_design(&rows, &spec)?;
            let cached = out.path(&format!("model_{name}.json"));
            let from_cache = fs::read_to_string(&cached)
                .ok()
                .and_then(|s| serde_json::from_str::<FittedModel>(&s).ok())
                .filter(|m| m.spec == spec && m.n_obs == bundle.n_obs() && m.terms == bundle.x_labels);
            let model = match from_cache {
                Some(m) => m,
                None => fit(&bundle, &spec, &self.config.fit)?,
            };
            self.models.insert(name, (model, bundle));
        }
        Ok(&self.models[name])
    }
}

fn model_spec(name: &str) -> (ModelSpec, Subset) {
    match name {
        "swing" => (spec_swing(), Subset::Swing),
        "contact" => (spec_contact(), Subset::Contact),
        _ => (spec_ev(), Subset::Ev),
    }
}

fn table_file(stage: Stage) -> &'static str {
    match stage {
        Stage::Swing => "table3_swing_model",
        Stage::Contact => "table4_contact_model",
        _ => "table6_ev_model",
    }
}

/// Runs the configured stages. On failure the error names the stage and the
/// output directory keeps a `.partial` marker.
pub fn run(config: &AnalysisConfig) -> Result<Manifest> {
    config.validate()?;
    let marker = config.out_dir.join(PARTIAL_MARKER);
    let names: Vec<&str> = config.stages.iter().map(|s| s.as_str()).collect();
    fs::write(&marker, format!("incomplete run: {}\n", names.join(" "))).map_err(|e| Error::io(&marker, e))?;

    let schema = match &config.schema {
        Some(p) => SchemaConfig::from_json_file(p).map_err(stage_err(Stage::Ingest))?,
        None => SchemaConfig::default(),
    };
    let previous: Option<Manifest> = fs::read_to_string(config.out_dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let mut out = Outputs { dir: &config.out_dir, files: BTreeMap::new() };
    if let Some(prev) = &previous {
        for f in &prev.files {
            if out.path(&f.path).is_file() {
                out.files.insert(f.path.clone(), f.clone());
            }
        }
    }
    let mut ctx = Context { config, schema, events: None, input_rows: None, models: BTreeMap::new() };
    let needs_events = config.stages.iter().any(|s| *s != Stage::Report);
    if needs_events {
        ctx.load(&mut out).map_err(stage_err(Stage::Ingest))?;
        if ctx.events.is_none() {
            return Err(stage_err(Stage::Ingest)(Error::InvalidArgument(format!(
                "no data file given and no cached {EVENTS_FILE} in {}",
                config.out_dir.display()
            ))));
        }
    }

    for &stage in &Stage::ALL {
        if !config.wants(stage) {
            continue;
        }
        let res = match stage {
            Stage::Ingest => Ok(()),
            Stage::Descriptive => descriptive_stage(&ctx, &mut out),
            Stage::Swing | Stage::Contact | Stage::Ev => model_stage(&mut ctx, &mut out, stage),
            Stage::Bootstrap => bootstrap_stage(&mut ctx, &mut out),
            Stage::Trajectory => trajectory_stage(&mut ctx, &mut out),
            Stage::Report => report_into(&mut out, config.full_precision),
        };
        res.map_err(stage_err(stage))?;
    }

    let mut row_counts = ctx.row_counts();
    if ctx.events.is_none() {
        if let Some(prev) = &previous {
            row_counts = prev.row_counts.clone();
        }
    } else if row_counts.input_rows.is_none() {
        row_counts.input_rows = previous.as_ref().and_then(|p| p.row_counts.input_rows);
    }
    let mut stages: Vec<Stage> = previous.map(|p| p.stages).unwrap_or_default();
    stages.extend(config.stages.iter().copied());
    stages.sort();
    stages.dedup();
    let manifest = Manifest {
        tool: "bangs".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        bootstrap_replicates: config.bootstrap_replicates,
        full_precision: config.full_precision,
        stages,
        schema_version: ctx.schema.version.clone(),
        row_counts,
        files: out.files.values().cloned().collect(),
    };
    let p = config.out_dir.join(MANIFEST_FILE);
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(manifest)
}

#[derive(Serialize)]
struct TableSummary {
    counts: crate::descriptive::ContingencyTable,
    chi_square: crate::descriptive::TestResult,
    odds_ratio_wald: Option<crate::descriptive::OddsRatioResult>,
    odds_ratio_exact: Option<crate::descriptive::OddsRatioResult>,
}

#[derive(Serialize)]
struct MissRate {
    batter_id: String,
    batter_name: String,
    bang: bool,
    swings: u64,
    misses: u64,
    miss_rate: f64,
    exact_lower: f64,
    exact_upper: f64,
    wilson_cc_lower: f64,
    wilson_cc_upper: f64,
}

fn descriptive_stage(ctx: &Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config;
    let full = cfg.full_precision;
    let events = ctx.events()?;
    let st = Stage::Descriptive;
    for (file, row, col) in [
        ("table1_pitch_group_by_bang", Field::PitchGroup, Field::Bang),
        ("table2_bang_by_swing", Field::Bang, Field::Swing),
    ] {
        let t = tabulate(events, row, col)?;
        if cfg.csv() {
            let (r, c) = (t.n_rows(), t.n_cols() + 1);
            out.csv_with(&format!("{file}.csv"), st, r, c, |b| t.write_csv(b))?;
        }
        if cfg.json() {
            let two_by_two = t.n_rows() == 2 && t.n_cols() == 2;
            let summary = TableSummary {
                chi_square: chi_square_independence(&t)?,
                odds_ratio_wald: if two_by_two { odds_ratio_2x2(&t, cfg.level).ok() } else { None },
                odds_ratio_exact: if two_by_two { odds_ratio_2x2_exact(&t, cfg.level).ok() } else { None },
                counts: t,
            };
            out.json(&format!("{file}.json"), st, &summary)?;
        }
    }

    let monthly = monthly_bang_proportions(events);
    let players = player_bang_counts(events, None);
    let ev = exit_velocity_summary(&subset(events, Subset::Ev, &ctx.schema));
    let mut misses: BTreeMap<(crate::ingest::Player, bool), (u64, u64)> = BTreeMap::new();
    for e in subset(events, Subset::Contact, &ctx.schema) {
        if e.pitch_group.is_fastball() {
            continue;
        }
        let slot = misses.entry((e.batter.clone(), e.bang)).or_default();
        slot.0 += 1;
        slot.1 += u64::from(e.contact == Some(false));
    }
    let mut miss_rows = Vec::new();
    for ((p, bang), (swings, missed)) in misses {
        let exact = clopper_pearson(missed, swings, cfg.level)?;
        let wcc = wilson_score_cc(missed, swings, cfg.level)?;
        miss_rows.push(MissRate {
            batter_id: p.id,
            batter_name: p.name,
            bang,
            swings,
            misses: missed,
            miss_rate: missed as f64 / swings as f64,
            exact_lower: exact.lower,
            exact_upper: exact.upper,
            wilson_cc_lower: wcc.lower,
            wilson_cc_upper: wcc.upper,
        });
    }

    if cfg.csv() {
        let mut t = Table::new(&["year", "month", "bangs", "pitches", "proportion"]);
        for m in &monthly {
            t.push(vec![
                m.year.to_string(),
                m.month.to_string(),
                m.bangs.to_string(),
                m.pitches.to_string(),
                format_number(m.proportion, full),
            ]);
        }
        out.table("figure1_monthly_bang_proportions.csv", st, &t)?;
        let mut t = Table::new(&["batter_id", "batter_name", "pitches", "bangs"]);
        for p in &players {
            t.push(vec![p.player.id.clone(), p.player.name.clone(), p.pitches.to_string(), p.bangs.to_string()]);
        }
        out.table("figure2_player_bang_counts.csv", st, &t)?;
        let mut t = Table::new(&["pitch_group", "bang", "n", "mean", "q1", "median", "q3"]);
        for c in &ev {
            t.push(vec![
                c.pitch_group.to_string(),
                u8::from(c.bang).to_string(),
                c.n.to_string(),
                format_number(c.mean, full),
                format_number(c.q1, full),
                format_number(c.median, full),
                format_number(c.q3, full),
            ]);
        }
        out.table("figure3_ev_by_pitch_group_bang.csv", st, &t)?;
        let mut t = Table::new(&[
            "batter_id",
            "batter_name",
            "bang",
            "swings",
            "misses",
            "miss_rate",
            "exact_lower",
            "exact_upper",
            "wilson_cc_lower",
            "wilson_cc_upper",
        ]);
        for m in &miss_rows {
            t.push(vec![
                m.batter_id.clone(),
                m.batter_name.clone(),
                u8::from(m.bang).to_string(),
                m.swings.to_string(),
                m.misses.to_string(),
                format_number(m.miss_rate, full),
                format_number(m.exact_lower, full),
                format_number(m.exact_upper, full),
                format_number(m.wilson_cc_lower, full),
                format_number(m.wilson_cc_upper, full),
            ]);
        }
        out.table("offspeed_miss_rates.csv", st, &t)?;
    }
    if cfg.json() {
        out.json("figure1_monthly_bang_proportions.json", st, &monthly)?;
        out.json("figure2_player_bang_counts.json", st, &players)?;
        out.json("figure3_ev_by_pitch_group_bang.json", st, &ev)?;
        out.json("offspeed_miss_rates.json", st, &miss_rows)?;
    }
    Ok(())
}

fn coefficient_table(model: &FittedModel, full: bool) -> Table {
    let stat = if model.residual_sd.is_some() { "t_value" } else { "z_value" };
    let mut t = Table::new(&["term", "estimate", "std_error", stat, "p_value"]);
    for r in model.coefficients() {
        t.push(vec![
            r.term,
            format_number(r.estimate, full),
            format_number(r.std_error, full),
            format_number(r.z_value, full),
            format_number(r.p_value, full),
        ]);
    }
    t
}

fn variance_table(model: &FittedModel, full: bool) -> Table {
    let mut t = Table::new(&["group", "effect", "sd", "correlation"]);
    for v in &model.variance_components {
        for (i, (e, sd)) in v.effects.iter().zip(&v.sd).enumerate() {
            let corr = if i == 0 {
                String::new()
            } else {
                format_number(v.correlation[i][0], full)
            };
            t.push(vec![v.group.to_string(), e.clone(), format_number(*sd, full), corr]);
        }
    }
    if let Some(s) = model.residual_sd {
        t.push(vec!["Residual".into(), String::new(), format_number(s, full), String::new()]);
    }
    t
}

#[derive(Serialize)]
struct ContactDerived {
    offspeed_bang: OddsRatio,
    fastball_bang_log_odds: crate::inference::WaldInterval,
    fastball_bang: OddsRatio,
}

fn model_stage(ctx: &mut Context, out: &mut Outputs, stage: Stage) -> Result<()> {
    let name: &'static str = stage.as_str();
    let (spec, which) = model_spec(name);
    let rows = subset(ctx.events()?, which, &ctx.schema);
    let bundle = build_design(&rows, &spec)?;
    let model = fit(&bundle, &spec, &ctx.config.fit)?;
    let cfg = ctx.config;
    let full = cfg.full_precision;
    out.json(&format!("model_{name}.json"), stage, &model)?;
    let base = table_file(stage);
    if cfg.csv() {
        out.table(&format!("{base}.csv"), stage, &coefficient_table(&model, full))?;
        out.table(&format!("{base}_variance.csv"), stage, &variance_table(&model, full))?;
    }
    if cfg.json() {
        out.json(&format!("{base}.json"), stage, &model.coefficients())?;
    }
    match stage {
        Stage::Swing => {
            let or = odds_ratio(&model, "Bang", cfg.level)?;
            if cfg.json() {
                out.json("swing_bang_odds_ratio.json", stage, &or)?;
            }
        }
        Stage::Contact => {
            let lc = linear_combo(&model, &term_weights(&model, &[("Bang", 1.0), ("Fastball:Bang", 1.0)])?)?;
            let fb = lc.wald("Bang + Fastball:Bang", cfg.level)?;
            let derived = ContactDerived {
                offspeed_bang: odds_ratio(&model, "Bang", cfg.level)?,
                fastball_bang: OddsRatio::from_wald(&fb),
                fastball_bang_log_odds: fb,
            };
            if cfg.json() {
                out.json("contact_derived.json", stage, &derived)?;
            }
            let ors = player_odds_ratios(&model, "Bang")?;
            if cfg.csv() {
                let mut t = Table::new(&["batter_id", "batter_name", "blup", "log_odds", "odds_ratio"]);
                for p in &ors {
                    t.push(vec![
                        p.player.id.clone(),
                        p.player.name.clone(),
                        format_number(p.blup, full),
                        format_number(p.log_odds, full),
                        format_number(p.odds_ratio, full),
                    ]);
                }
                out.table("table5_player_odds_ratios.csv", stage, &t)?;
            }
            if cfg.json() {
                out.json("table5_player_odds_ratios.json", stage, &ors)?;
            }
        }
        _ => {
            let w = wald_interval(&model, "Bang", cfg.level)?;
            if cfg.json() {
                out.json("ev_bang_interval.json", stage, &w)?;
            }
        }
    }
    ctx.models.insert(name, (model, bundle));
    Ok(())
}

#[derive(Serialize)]
struct BootstrapRow {
    batter_id: String,
    batter_name: String,
    odds_ratio: f64,
    lower: f64,
    upper: f64,
    failures: usize,
}

fn bootstrap_stage(ctx: &mut Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config;
    let st = Stage::Bootstrap;
    let top: Vec<crate::ingest::Player> = player_bang_counts(ctx.events()?, Some(cfg.distribution_players))
        .into_iter()
        .map(|p| p.player)
        .collect();
    let (model, bundle) = ctx.model("contact", out)?;
    let batters = crate::glmm::blups(model, crate::glmm::Grouping::Batter)?.levels.clone();
    let opts = BootstrapOptions {
        replicates: cfg.bootstrap_replicates,
        seed: cfg.seed,
        level: cfg.level,
        fit: FitOptions { vcov: VcovMethod::Conditional, ..cfg.fit.clone() },
    };
    let mut names = vec!["offspeed_bang_odds_ratio".to_string(), "fastball_bang_odds_ratio".to_string()];
    for p in &batters {
        names.push(format!("{} intercept", p.id));
        names.push(format!("{} slope", p.id));
    }
    let stat = |m: &FittedModel| -> Result<Vec<f64>> {
        let bang = m.beta[m.term_index("Bang")?];
        let inter = m.beta[m.term_index("Fastball:Bang")?];
        let mut v = vec![bang.exp(), (bang + inter).exp()];
        for p in &batters {
            v.push(player_effect(m, &p.id, "(Intercept)", "(Intercept)")?);
            v.push(player_effect(m, &p.id, "Bang", "Bang")?);
        }
        Ok(v)
    };
    let mut all = parametric_bootstrap_many(model, bundle, &names, stat, &opts)?.into_iter();
    let derived: Vec<BootstrapResult> = all.by_ref().take(2).collect();
    let results: Vec<PlayerBootstrap> = batters
        .iter()
        .map(|p| PlayerBootstrap {
            player: p.clone(),
            intercept: all.next().expect("two results per batter"),
            slope: all.next().expect("two results per batter"),
        })
        .collect();
    let mut rows: Vec<BootstrapRow> = results
        .iter()
        .map(|r| BootstrapRow {
            batter_id: r.player.id.clone(),
            batter_name: r.player.name.clone(),
            odds_ratio: r.slope.estimate.exp(),
            lower: r.slope.lower.exp(),
            upper: r.slope.upper.exp(),
            failures: r.slope.failures,
        })
        .collect();
    rows.sort_by(|a, b| b.odds_ratio.total_cmp(&a.odds_ratio).then_with(|| a.batter_id.cmp(&b.batter_id)));
    let full = cfg.full_precision;
    if cfg.csv() {
        let mut t = Table::new(&["batter_id", "batter_name", "odds_ratio", "lower", "upper", "failures"]);
        for r in &rows {
            t.push(vec![
                r.batter_id.clone(),
                r.batter_name.clone(),
                format_number(r.odds_ratio, full),
                format_number(r.lower, full),
                format_number(r.upper, full),
                r.failures.to_string(),
            ]);
        }
        out.table("bootstrap_player_odds_ratios.csv", st, &t)?;
        let mut t = Table::new(&["statistic", "estimate", "lower", "upper", "failures"]);
        for b in &derived {
            t.push(vec![
                b.statistic.clone(),
                format_number(b.estimate, full),
                format_number(b.lower, full),
                format_number(b.upper, full),
                b.failures.to_string(),
            ]);
        }
        out.table("bootstrap_contact_odds_ratios.csv", st, &t)?;
        let chosen: Vec<_> = results.iter().filter(|r| top.contains(&r.player)).cloned().collect();
        let export = bootstrap_distributions_export(&chosen);
        out.csv_with("figure5_bootstrap_distributions.csv", st, export.len(), 5, |b| {
            write_distributions_csv(&export, b)
        })?;
    }
    if cfg.json() {
        out.json("bootstrap_player_odds_ratios.json", st, &rows)?;
        let mut all = Vec::new();
        for b in &derived {
            all.push(serde_json::from_str::<serde_json::Value>(&b.to_json(cfg.include_replicates)?)?);
        }
        for r in &results {
            for b in [&r.intercept, &r.slope] {
                all.push(serde_json::from_str::<serde_json::Value>(&b.to_json(cfg.include_replicates)?)?);
            }
        }
        out.json("bootstrap_results.json", st, &all)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub launch_angle_deg: f64,
    pub base_velocity_mph: f64,
    pub bang_velocity_delta_mph: f64,
    pub base_distance_ft: f64,
    pub bang_distance_ft: f64,
    pub distance_gain_ft: f64,
    pub flight: FlightParams,
}

impl TrajectorySummary {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Carry distance at the base velocity and at the base velocity plus the
/// exit-velocity model's bang coefficient.
pub fn trajectory_summary(
    delta_mph: f64,
    base_velocity_mph: f64,
    launch_angle_deg: f64,
    flight: &FlightParams,
) -> Result<TrajectorySummary> {
    let base = carry_distance(base_velocity_mph, launch_angle_deg, flight)?;
    let bang = carry_distance(base_velocity_mph + delta_mph, launch_angle_deg, flight)?;
    Ok(TrajectorySummary {
        launch_angle_deg,
        base_velocity_mph,
        bang_velocity_delta_mph: delta_mph,
        base_distance_ft: base,
        bang_distance_ft: bang,
        distance_gain_ft: bang - base,
        flight: *flight,
    })
}

fn trajectory_stage(ctx: &mut Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config;
    let (model, _) = ctx.model("ev", out)?;
    let delta = model.beta[model.term_index("Bang")?];
    let s = trajectory_summary(delta, cfg.base_velocity_mph, cfg.launch_angle_deg, &cfg.flight)?;
    let full = cfg.full_precision;
    if cfg.csv() {
        let mut t = Table::new(&["velocity_mph", "launch_angle_deg", "distance_ft"]);
        for (v, d) in [(s.base_velocity_mph, s.base_distance_ft), (s.base_velocity_mph + delta, s.bang_distance_ft)] {
            t.push(vec![format_number(v, full), format_number(s.launch_angle_deg, full), format_number(d, full)]);
        }
        out.table("trajectory.csv", Stage::Trajectory, &t)?;
    }
    if cfg.json() {
        out.json("trajectory.json", Stage::Trajectory, &s)?;
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Option<T>> {
    let p = dir.join(name);
    if !p.is_file() {
        return Ok(None);
    }
    let s = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(Some(serde_json::from_str(&s)?))
}

fn markdown(t: &Table) -> String {
    let mut s = format!("| {} |\n|{}\n", t.header.join(" | "), " --- |".repeat(t.header.len()));
    for r in &t.rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

fn report_into(out: &mut Outputs, full: bool) -> Result<()> {
    let dir = out.dir;
    let mut md = String::from("# Bangs analysis report\n");
    if let Some(r) = read_json::<crate::ingest::CleaningReport>(dir, "cleaning_report.json")? {
        md.push_str(&format!(
            "\n## Cleaning\n\n{} input rows, {} events after cleaning.\n\n",
            r.input_rows, r.output_rows
        ));
        let mut t = Table::new(&["rule", "removed"]);
        for (rule, n) in &r.removed {
            t.push(vec![rule.as_str().into(), n.to_string()]);
        }
        md.push_str(&markdown(&t));
    }
    for (file, title) in [("table1_pitch_group_by_bang.json", "Pitch group by bang"), ("table2_bang_by_swing.json", "Bang by swing")] {
        if let Some(v) = read_json::<serde_json::Value>(dir, file)? {
            let counts: crate::descriptive::ContingencyTable = serde_json::from_value(v["counts"].clone())?;
            let mut header = vec![format!("{}\\{}", counts.row_name, counts.col_name)];
            header.extend(counts.col_labels.iter().cloned());
            let mut t = Table { header, rows: Vec::new() };
            for (l, r) in counts.row_labels.iter().zip(&counts.counts) {
                let mut row = vec![l.clone()];
                row.extend(r.iter().map(|c| c.to_string()));
                t.push(row);
            }
            md.push_str(&format!("\n## {title}\n\n{}", markdown(&t)));
            let p = v["chi_square"]["p_value"].as_f64().unwrap_or(f64::NAN);
            md.push_str(&format!("\nChi-square p-value: {}\n", crate::descriptive::format_p_value(p)));
            if let Some(or) = v.get("odds_ratio_exact").filter(|o| !o.is_null()) {
                let f = |k: &str| format_number(or[k].as_f64().unwrap_or(f64::NAN), full);
                md.push_str(&format!("Odds ratio (conditional MLE): {} ({}, {})\n", f("estimate"), f("lower"), f("upper")));
            }
        }
    }
    for (name, title) in [("swing", "Swing model"), ("contact", "Contact model"), ("ev", "Exit-velocity model")] {
        if let Some(m) = read_json::<FittedModel>(dir, &format!("model_{name}.json"))? {
            md.push_str(&format!("\n## {title} (n = {})\n\n", m.n_obs));
            md.push_str(&markdown(&coefficient_table(&m, full)));
            md.push('\n');
            md.push_str(&markdown(&variance_table(&m, full)));
        }
    }
    if let Some(rows) = read_json::<Vec<serde_json::Value>>(dir, "bootstrap_player_odds_ratios.json")? {
        let mut t = Table::new(&["batter", "odds ratio", "lower", "upper"]);
        for r in rows {
            let f = |k: &str| format_number(r[k].as_f64().unwrap_or(f64::NAN), full);
            t.push(vec![r["batter_name"].as_str().unwrap_or("").to_string(), f("odds_ratio"), f("lower"), f("upper")]);
        }
        md.push_str(&format!("\n## Player bang odds ratios (parametric bootstrap)\n\n{}", markdown(&t)));
    }
    if let Some(all) = read_json::<Vec<serde_json::Value>>(dir, "bootstrap_results.json")? {
        let mut t = Table::new(&["statistic", "estimate", "lower", "upper"]);
        for r in all.iter().filter(|r| r["statistic"].as_str().is_some_and(|s| s.ends_with("odds_ratio"))) {
            let f = |k: &str| format_number(r[k].as_f64().unwrap_or(f64::NAN), full);
            t.push(vec![r["statistic"].as_str().unwrap_or("").to_string(), f("estimate"), f("lower"), f("upper")]);
        }
        md.push_str(&format!("\n## Contact odds ratios (parametric bootstrap)\n\n{}", markdown(&t)));
    }
    if let Some(s) = read_json::<TrajectorySummary>(dir, "trajectory.json")? {
        md.push_str(&format!(
            "\n## Trajectory\n\n{} mph at {} degrees carries {} ft; +{} mph carries {} ft (+{} ft).\n",
            format_number(s.base_velocity_mph, full),
            format_number(s.launch_angle_deg, full),
            format_number(s.base_distance_ft, full),
            format_number(s.bang_velocity_delta_mph, full),
            format_number(s.bang_distance_ft, full),
            format_number(s.distance_gain_ft, full),
        ));
    }
    out.write_bytes("report.md", Stage::Report, md.as_bytes(), None)
}

/// Renders `report.md` from the cached JSON outputs in `out_dir`.
pub fn report(out_dir: impl AsRef<Path>, full_precision: bool) -> Result<PathBuf> {
    let dir = out_dir.as_ref();
    let mut out = Outputs { dir, files: BTreeMap::new() };
    report_into(&mut out, full_precision).map_err(stage_err(Stage::Report))?;
    Ok(dir.join("report.md"))
}
