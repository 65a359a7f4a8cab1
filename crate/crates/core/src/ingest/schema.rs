use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source CSV header for each [`PitchEvent`](super::PitchEvent) input field.
///
/// `swing`, `contact` and `exit_velocity` are derived from `description` and
/// `launch_speed`, so they have no column of their own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub pitch_id: String,
    pub game_id: String,
    pub game_date: String,
    pub batter_id: String,
    pub batter_name: String,
    pub pitcher_id: String,
    pub pitcher_name: String,
    pub pitch_group: String,
    pub csp: String,
    pub balls: String,
    pub strikes: String,
    pub bang: String,
    pub description: String,
    pub launch_speed: String,
    /// Plate-appearance result code (Statcast `events`); optional in the source.
    #[serde(default)]
    pub event: Option<String>,
}

/// Column mapping plus the description-code sets that drive outcome derivation.
///
/// Every description code seen in the data must belong to `swing_codes`,
/// `take_codes`, `bunt_codes` or `exclude_codes`; anything else is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub version: String,
    pub columns: ColumnMap,
    /// Cell values (case-insensitive) meaning "a bang was heard".
    pub bang_true_values: Vec<String>,
    /// Cell values treated as missing.
    pub missing_values: Vec<String>,
    pub swing_codes: BTreeSet<String>,
    /// Swing codes that mean the bat missed the ball.
    pub no_contact_codes: BTreeSet<String>,
    /// Non-swing codes (balls, called strikes, hit by pitch, ...).
    pub take_codes: BTreeSet<String>,
    /// Bunts and bunt attempts; matched against description and event.
    pub bunt_codes: BTreeSet<String>,
    /// Rare results dropped from the contact subset; matched against description and event.
    pub exclude_codes: BTreeSet<String>,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for SchemaConfig {
    /// Column names follow the Statcast export joined with Pitch Info's pitch
    /// group and called-strike probability and the Bangs `has_bangs` flag.
    fn default() -> Self {
        SchemaConfig {
            version: "1.0.0".to_string(),
            columns: ColumnMap {
                pitch_id: "pitch_playid".into(),
                game_id: "game_pk".into(),
                game_date: "game_date".into(),
                batter_id: "batter".into(),
                batter_name: "batter_name".into(),
                pitcher_id: "pitcher".into(),
                pitcher_name: "pitcher_name".into(),
                pitch_group: "pitch_group".into(),
                csp: "csp".into(),
                balls: "balls".into(),
                strikes: "strikes".into(),
                bang: "has_bangs".into(),
                description: "description".into(),
                launch_speed: "launch_speed".into(),
                event: Some("events".into()),
            },
            bang_true_values: ["y", "yes", "1", "true", "t"].iter().map(|s| s.to_string()).collect(),
            missing_values: ["", "NA", "N/A", "NaN", "null", "NULL"].iter().map(|s| s.to_string()).collect(),
            swing_codes: set(&[
                "foul",
                "foul_tip",
                "foul_pitchout",
                "hit_into_play",
                "hit_into_play_no_out",
                "hit_into_play_score",
                "swinging_strike",
                "swinging_strike_blocked",
                "swinging_pitchout",
            ]),
            no_contact_codes: set(&[
                "foul_tip",
                "swinging_strike",
                "swinging_strike_blocked",
                "swinging_pitchout",
            ]),
            take_codes: set(&[
                "ball",
                "blocked_ball",
                "called_strike",
                "hit_by_pitch",
                "intent_ball",
                "automatic_ball",
                "automatic_strike",
                "pitchout",
            ]),
            bunt_codes: set(&[
                "foul_bunt",
                "missed_bunt",
                "bunt_foul_tip",
                "sac_bunt",
                "sac_bunt_double_play",
            ]),
            exclude_codes: set(&["catcher_interf", "batter_interference", "fan_interference"]),
        }
    }
}

impl SchemaConfig {
    /// Schema matching the CSV written by [`write_events_csv`](super::write_events_csv).
    pub fn canonical() -> Self {
        SchemaConfig {
            columns: ColumnMap {
                pitch_id: "pitch_id".into(),
                game_id: "game_id".into(),
                game_date: "game_date".into(),
                batter_id: "batter_id".into(),
                batter_name: "batter_name".into(),
                pitcher_id: "pitcher_id".into(),
                pitcher_name: "pitcher_name".into(),
                pitch_group: "pitch_group".into(),
                csp: "csp".into(),
                balls: "balls".into(),
                strikes: "strikes".into(),
                bang: "bang".into(),
                description: "description".into(),
                launch_speed: "exit_velocity".into(),
                event: Some("event".into()),
            },
            ..SchemaConfig::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: SchemaConfig = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(code) = self.no_contact_codes.difference(&self.swing_codes).next() {
            return Err(Error::Schema(format!(
                "no-contact code `{code}` is not a swing code"
            )));
        }
        let groups = [
            ("swing", &self.swing_codes),
            ("take", &self.take_codes),
            ("bunt", &self.bunt_codes),
            ("exclude", &self.exclude_codes),
        ];
        for (i, (name_a, a)) in groups.iter().enumerate() {
            for (name_b, b) in &groups[i + 1..] {
                if let Some(code) = a.intersection(b).next() {
                    return Err(Error::Schema(format!(
                        "code `{code}` is in both the {name_a} and {name_b} sets"
                    )));
                }
            }
        }
        let c = &self.columns;
        let mut seen = BTreeSet::new();
        let mut all = vec![
            &c.pitch_id, &c.game_id, &c.game_date, &c.batter_id, &c.batter_name, &c.pitcher_id,
            &c.pitcher_name, &c.pitch_group, &c.csp, &c.balls, &c.strikes, &c.bang,
            &c.description, &c.launch_speed,
        ];
        if let Some(e) = &c.event {
            all.push(e);
        }
        for col in all {
            if !seen.insert(col.as_str()) {
                return Err(Error::Schema(format!("column `{col}` is mapped twice")));
            }
        }
        Ok(())
    }

    pub(crate) fn is_missing(&self, value: &str) -> bool {
        let v = value.trim();
        self.missing_values.iter().any(|m| m == v)
    }

    pub(crate) fn is_bang(&self, value: &str) -> bool {
        let v = value.trim();
        self.bang_true_values.iter().any(|t| t.eq_ignore_ascii_case(v))
    }

    pub(crate) fn is_known_code(&self, code: &str) -> bool {
        self.swing_codes.contains(code)
            || self.take_codes.contains(code)
            || self.bunt_codes.contains(code)
            || self.exclude_codes.contains(code)
    }
}
