//! Loading, validation and cleaning of the joined Statcast / Pitch Info /
//! Bangs pitch file into [`PitchEvent`] records.

mod schema;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use schema::{ColumnMap, SchemaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PitchGroup {
    CH,
    CU,
    FA,
    SL,
}

impl PitchGroup {
    pub const ALL: [PitchGroup; 4] = [PitchGroup::CH, PitchGroup::CU, PitchGroup::FA, PitchGroup::SL];

    pub fn as_str(self) -> &'static str {
        match self {
            PitchGroup::CH => "CH",
            PitchGroup::CU => "CU",
            PitchGroup::FA => "FA",
            PitchGroup::SL => "SL",
        }
    }

    pub fn is_fastball(self) -> bool {
        self == PitchGroup::FA
    }
}

impl fmt::Display for PitchGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PitchGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "CH" => Ok(PitchGroup::CH),
            "CU" => Ok(PitchGroup::CU),
            "FA" => Ok(PitchGroup::FA),
            "SL" => Ok(PitchGroup::SL),
            other => Err(Error::InvalidArgument(format!("unknown pitch group `{other}`"))),
        }
    }
}

/// A player identifier with its NFC-normalized display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Player {
    pub id: String,
    pub name: String,
}

/// One cleaned pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchEvent {
    pub pitch_id: String,
    pub game_id: String,
    pub game_date: NaiveDate,
    pub batter: Player,
    pub pitcher: Player,
    pub pitch_group: PitchGroup,
    pub csp: f64,
    pub balls: u8,
    pub strikes: u8,
    pub bang: bool,
    pub swing: bool,
    /// Only defined when `swing` is true.
    pub contact: Option<bool>,
    /// Only defined when `contact == Some(true)` and a launch speed was recorded.
    pub exit_velocity: Option<f64>,
    pub description: String,
    pub event: Option<String>,
}

impl PitchEvent {
    pub fn pitch_count(&self) -> String {
        format!("{}-{}", self.balls, self.strikes)
    }
}

/// A data row after column mapping and type parsing, before any filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// 1-based data-row index (header excluded).
    pub row: usize,
    pub pitch_id: Option<String>,
    pub game_id: Option<String>,
    pub game_date: Option<NaiveDate>,
    pub batter_id: Option<String>,
    pub batter_name: Option<String>,
    pub pitcher_id: Option<String>,
    pub pitcher_name: Option<String>,
    pub pitch_group: Option<String>,
    pub csp: Option<f64>,
    pub balls: Option<i64>,
    pub strikes: Option<i64>,
    pub bang: bool,
    pub description: Option<String>,
    pub launch_speed: Option<f64>,
    pub event: Option<String>,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y/%m/%d"))
        .ok()
        .or_else(|| s.get(..10).and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok()))
}

/// Reads a CSV file with the given column mapping. No rows are filtered.
pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c = &schema.columns;
    let idx = [
        find(&c.pitch_id)?,
        find(&c.game_id)?,
        find(&c.game_date)?,
        find(&c.batter_id)?,
        find(&c.batter_name)?,
        find(&c.pitcher_id)?,
        find(&c.pitcher_name)?,
        find(&c.pitch_group)?,
        find(&c.csp)?,
        find(&c.balls)?,
        find(&c.strikes)?,
        find(&c.bang)?,
        find(&c.description)?,
        find(&c.launch_speed)?,
    ];
    let event_idx = match &c.event {
        Some(name) => headers.iter().position(|h| h.trim() == name),
        None => None,
    };

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let text = |k: usize| -> Option<String> {
            let v = rec.get(idx[k]).unwrap_or("");
            if schema.is_missing(v) {
                None
            } else {
                Some(v.trim().nfc().collect())
            }
        };
        let number = |k: usize, field: &str| -> Result<Option<f64>> {
            match text(k) {
                None => Ok(None),
                Some(v) => v.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    row,
                    field: field.to_string(),
                    value: v,
                }),
            }
        };
        let integer = |k: usize, field: &str| -> Result<Option<i64>> {
            match number(k, field)? {
                None => Ok(None),
                Some(x) if x.fract() == 0.0 => Ok(Some(x as i64)),
                Some(x) => Err(Error::Parse {
                    row,
                    field: field.to_string(),
                    value: x.to_string(),
                }),
            }
        };
        let game_date = match text(2) {
            None => None,
            Some(v) => Some(parse_date(&v).ok_or_else(|| Error::Parse {
                row,
                field: c.game_date.clone(),
                value: v.clone(),
            })?),
        };
        out.push(RawRecord {
            row,
            pitch_id: text(0),
            game_id: text(1),
            game_date,
            batter_id: text(3),
            batter_name: text(4),
            pitcher_id: text(5),
            pitcher_name: text(6),
            pitch_group: text(7),
            csp: number(8, &c.csp)?,
            balls: integer(9, &c.balls)?,
            strikes: integer(10, &c.strikes)?,
            bang: text(11).is_some_and(|v| schema.is_bang(&v)),
            description: text(12),
            launch_speed: number(13, &c.launch_speed)?,
            event: event_idx.and_then(|k| {
                let v = rec.get(k).unwrap_or("");
                (!schema.is_missing(v)).then(|| v.trim().to_string())
            }),
        });
    }
    Ok(out)
}

/// Exclusion rules, applied in this order; a row is attributed to the first rule it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningRule {
    MissingPitchId,
    DuplicatePitchId,
    Bunt,
    AmbiguousPitchGroup,
    MissingCsp,
    InvalidCount,
    MissingDescription,
    MissingRequiredField,
}

impl CleaningRule {
    pub const ALL: [CleaningRule; 8] = [
        CleaningRule::MissingPitchId,
        CleaningRule::DuplicatePitchId,
        CleaningRule::Bunt,
        CleaningRule::AmbiguousPitchGroup,
        CleaningRule::MissingCsp,
        CleaningRule::InvalidCount,
        CleaningRule::MissingDescription,
        CleaningRule::MissingRequiredField,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CleaningRule::MissingPitchId => "missing_pitch_id",
            CleaningRule::DuplicatePitchId => "duplicate_pitch_id",
            CleaningRule::Bunt => "bunt",
            CleaningRule::AmbiguousPitchGroup => "ambiguous_pitch_group",
            CleaningRule::MissingCsp => "missing_csp",
            CleaningRule::InvalidCount => "invalid_count",
            CleaningRule::MissingDescription => "missing_description",
            CleaningRule::MissingRequiredField => "missing_required_field",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub schema_version: String,
    pub input_rows: usize,
    pub output_rows: usize,
    /// Rows removed per rule; every rule is listed, zero counts included.
    pub removed: BTreeMap<CleaningRule, usize>,
    /// Data-row indices of removed rows, per rule.
    pub removed_rows: BTreeMap<CleaningRule, Vec<usize>>,
}

impl CleaningReport {
    pub fn total_removed(&self) -> usize {
        self.removed.values().sum()
    }

    pub fn count(&self, rule: CleaningRule) -> usize {
        self.removed.get(&rule).copied().unwrap_or(0)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// An event whose identity and covariates are validated but whose outcome
/// fields have not been derived yet.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub pitch_id: String,
    pub game_id: String,
    pub game_date: NaiveDate,
    pub batter: Player,
    pub pitcher: Player,
    pub pitch_group: PitchGroup,
    pub csp: f64,
    pub balls: u8,
    pub strikes: u8,
    pub bang: bool,
    pub description: String,
    pub launch_speed: Option<f64>,
    pub event: Option<String>,
}

/// Derives swing / contact / exit velocity from the description code.
pub fn derive_outcomes(draft: EventDraft, schema: &SchemaConfig) -> Result<PitchEvent> {
    if !schema.is_known_code(&draft.description) {
        return Err(Error::UnknownCodes(vec![draft.description]));
    }
    let swing = schema.swing_codes.contains(&draft.description);
    let contact = swing.then(|| !schema.no_contact_codes.contains(&draft.description));
    let exit_velocity = if contact == Some(true) { draft.launch_speed } else { None };
    Ok(PitchEvent {
        pitch_id: draft.pitch_id,
        game_id: draft.game_id,
        game_date: draft.game_date,
        batter: draft.batter,
        pitcher: draft.pitcher,
        pitch_group: draft.pitch_group,
        csp: draft.csp,
        balls: draft.balls,
        strikes: draft.strikes,
        bang: draft.bang,
        swing,
        contact,
        exit_velocity,
        description: draft.description,
        event: draft.event,
    })
}

fn matches_codes(rec: &RawRecord, codes: &std::collections::BTreeSet<String>) -> bool {
    rec.description.as_ref().is_some_and(|d| codes.contains(d))
        || rec.event.as_ref().is_some_and(|e| codes.contains(e))
}

fn classify(
    rec: &RawRecord,
    schema: &SchemaConfig,
    seen_ids: &mut HashSet<String>,
) -> std::result::Result<EventDraft, CleaningRule> {
    let pitch_id = rec.pitch_id.clone().ok_or(CleaningRule::MissingPitchId)?;
    if seen_ids.contains(&pitch_id) {
        return Err(CleaningRule::DuplicatePitchId);
    }
    if matches_codes(rec, &schema.bunt_codes) {
        return Err(CleaningRule::Bunt);
    }
    let pitch_group = rec
        .pitch_group
        .as_deref()
        .and_then(|g| g.parse::<PitchGroup>().ok())
        .ok_or(CleaningRule::AmbiguousPitchGroup)?;
    let csp = rec
        .csp
        .filter(|c| (0.0..=1.0).contains(c))
        .ok_or(CleaningRule::MissingCsp)?;
    let balls = rec.balls.filter(|b| (0..=3).contains(b)).ok_or(CleaningRule::InvalidCount)?;
    let strikes = rec.strikes.filter(|s| (0..=2).contains(s)).ok_or(CleaningRule::InvalidCount)?;
    let description = rec.description.clone().ok_or(CleaningRule::MissingDescription)?;
    let required = |v: &Option<String>| v.clone().ok_or(CleaningRule::MissingRequiredField);
    let batter_id = required(&rec.batter_id)?;
    let pitcher_id = required(&rec.pitcher_id)?;
    let game_date = rec.game_date.ok_or(CleaningRule::MissingRequiredField)?;
    let game_id = required(&rec.game_id)?;
    seen_ids.insert(pitch_id.clone());
    Ok(EventDraft {
        pitch_id,
        game_id,
        game_date,
        batter: Player {
            name: rec.batter_name.clone().unwrap_or_else(|| batter_id.clone()),
            id: batter_id,
        },
        pitcher: Player {
            name: rec.pitcher_name.clone().unwrap_or_else(|| pitcher_id.clone()),
            id: pitcher_id,
        },
        pitch_group,
        csp,
        balls: balls as u8,
        strikes: strikes as u8,
        bang: rec.bang,
        description,
        launch_speed: rec.launch_speed,
        event: rec.event.clone(),
    })
}

/// Applies the exclusion rules and derives outcomes.
///
/// Rows failing a rule are dropped and counted in the report. A description
/// code outside every schema code set is an error listing all such codes,
/// since silently dropping them would hide an incomplete mapping.
pub fn clean(records: &[RawRecord], schema: &SchemaConfig) -> Result<(Vec<PitchEvent>, CleaningReport)> {
    let mut removed: BTreeMap<CleaningRule, usize> = CleaningRule::ALL.iter().map(|r| (*r, 0)).collect();
    let mut removed_rows: BTreeMap<CleaningRule, Vec<usize>> =
        CleaningRule::ALL.iter().map(|r| (*r, Vec::new())).collect();
    let mut seen = HashSet::new();
    let mut drafts = Vec::with_capacity(records.len());
    for rec in records {
        match classify(rec, schema, &mut seen) {
            Ok(d) => drafts.push(d),
            Err(rule) => {
                *removed.get_mut(&rule).unwrap() += 1;
                removed_rows.get_mut(&rule).unwrap().push(rec.row);
            }
        }
    }
    let unknown: std::collections::BTreeSet<String> = drafts
        .iter()
        .filter(|d| !schema.is_known_code(&d.description))
        .map(|d| d.description.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownCodes(unknown.into_iter().collect()));
    }
    let events = drafts
        .into_iter()
        .map(|d| derive_outcomes(d, schema))
        .collect::<Result<Vec<_>>>()?;
    let report = CleaningReport {
        schema_version: schema.version.clone(),
        input_rows: records.len(),
        output_rows: events.len(),
        removed,
        removed_rows,
    };
    Ok((events, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Swing,
    Contact,
    Ev,
}

/// Per-model analysis subset: all events, swings (minus excluded rare
/// results), or contacts with a recorded exit velocity.
pub fn subset(events: &[PitchEvent], which: Subset, schema: &SchemaConfig) -> Vec<PitchEvent> {
    let excluded = |e: &PitchEvent| {
        schema.exclude_codes.contains(&e.description)
            || e.event.as_ref().is_some_and(|ev| schema.exclude_codes.contains(ev))
    };
    events
        .iter()
        .filter(|e| match which {
            Subset::Swing => true,
            Subset::Contact => e.swing && !excluded(e),
            Subset::Ev => e.swing && !excluded(e) && e.contact == Some(true) && e.exit_velocity.is_some(),
        })
        .cloned()
        .collect()
}

pub const CANONICAL_COLUMNS: [&str; 17] = [
    "pitch_id",
    "game_id",
    "game_date",
    "batter_id",
    "batter_name",
    "pitcher_id",
    "pitcher_name",
    "pitch_group",
    "csp",
    "balls",
    "strikes",
    "bang",
    "swing",
    "contact",
    "exit_velocity",
    "description",
    "event",
];

/// Writes events with canonical column names; readable back with
/// [`SchemaConfig::canonical`].
pub fn write_events_csv<W: Write>(writer: W, events: &[PitchEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CANONICAL_COLUMNS)?;
    for e in events {
        let b = |x: bool| if x { "1" } else { "0" }.to_string();
        w.write_record([
            e.pitch_id.clone(),
            e.game_id.clone(),
            e.game_date.format("%Y-%m-%d").to_string(),
            e.batter.id.clone(),
            e.batter.name.clone(),
            e.pitcher.id.clone(),
            e.pitcher.name.clone(),
            e.pitch_group.to_string(),
            format!("{}", e.csp),
            e.balls.to_string(),
            e.strikes.to_string(),
            b(e.bang),
            b(e.swing),
            e.contact.map(b).unwrap_or_default(),
            e.exit_velocity.map(|v| format!("{v}")).unwrap_or_default(),
            e.description.clone(),
            e.event.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
