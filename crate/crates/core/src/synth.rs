//! Synthetic pitch data in the default source layout, for tests and demos.
//!
//! Outcomes are drawn from swing / contact / exit-velocity models of the same
//! form the analysis fits, so a pipeline run on this data exercises every
//! stage. A few rows trigger each cleaning rule.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub pitches: usize,
    pub batters: usize,
    pub pitchers: usize,
    /// Rows per cleaning rule made deliberately dirty.
    pub dirty_rows: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 7, pitches: 3000, batters: 12, pitchers: 80, dirty_rows: 2 }
    }
}

pub const HEADER: [&str; 15] = [
    "pitch_playid",
    "game_pk",
    "game_date",
    "batter",
    "batter_name",
    "pitcher",
    "pitcher_name",
    "pitch_group",
    "csp",
    "balls",
    "strikes",
    "has_bangs",
    "description",
    "launch_speed",
    "events",
];

const FIRST: [&str; 12] = ["Alex", "Brian", "Carlos", "Derek", "Evan", "Jose", "Josh", "Juan", "Max", "Tyler", "Marwin", "Jake"];
const LAST: [&str; 10] = ["Adams", "Baker", "Cruz", "Diaz", "Ellis", "Flores", "Garcia", "Hill", "Ito", "Jones"];

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Writes a synthetic CSV to `w`.
pub fn write_csv<W: Write>(config: &SynthConfig, w: W) -> Result<()> {
    if config.batters == 0 || config.pitchers == 0 {
        return Err(Error::InvalidArgument("need at least one batter and one pitcher".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let batter_int: Vec<f64> = (0..config.batters).map(|_| 0.3 * std.sample(&mut rng)).collect();
    let batter_swing_slope: Vec<f64> = (0..config.batters).map(|_| 0.2 * std.sample(&mut rng)).collect();
    let batter_contact_slope: Vec<f64> = (0..config.batters).map(|_| 0.5 * std.sample(&mut rng)).collect();
    let batter_ev: Vec<f64> = (0..config.batters).map(|_| 2.0 * std.sample(&mut rng)).collect();
    let pitcher_int: Vec<f64> = (0..config.pitchers).map(|_| 0.3 * std.sample(&mut rng)).collect();
    let pitcher_ev: Vec<f64> = (0..config.pitchers).map(|_| 1.5 * std.sample(&mut rng)).collect();
    let name = |i: usize| format!("{} {}", FIRST[i % FIRST.len()], LAST[(i / FIRST.len() + i) % LAST.len()]);
    // Unequal batter exposure.
    let weights: Vec<f64> = (0..config.batters).map(|i| 1.0 / (1.0 + i as f64 * 0.15)).collect();
    let wsum: f64 = weights.iter().sum();
    let start = NaiveDate::from_ymd_opt(2017, 4, 3).expect("valid date");

    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(HEADER)?;
    let mut bunts = 0;
    let mut missing = 0;
    let mut ambiguous = 0;
    for i in 0..config.pitches {
        let mut u = rng.random::<f64>() * wsum;
        let mut b = 0;
        while b + 1 < config.batters && u > weights[b] {
            u -= weights[b];
            b += 1;
        }
        let p = rng.random_range(0..config.pitchers);
        let day = (i * 180 / config.pitches.max(1)) as i64;
        let date = start + Duration::days(day);
        let game = 490000 + day;
        let r: f64 = rng.random();
        let group = if r < 0.55 {
            "FA"
        } else if r < 0.76 {
            "SL"
        } else if r < 0.88 {
            "CH"
        } else {
            "CU"
        };
        let fastball = group == "FA";
        let balls = rng.random_range(0..4u8);
        let strikes = rng.random_range(0..3u8);
        let csp: f64 = rng.random::<f64>().powf(1.3);
        let month_boost = day as f64 / 180.0;
        let p_bang = if fastball { 0.02 } else { 0.10 + 0.25 * month_boost };
        let bang = rng.random::<f64>() < p_bang;
        let fb = f64::from(u8::from(fastball));
        let bg = f64::from(u8::from(bang));
        let eta_swing = -2.4 + 2.5 * csp + 0.06 * fb + 0.45 * f64::from(strikes) + 0.1 * f64::from(balls)
            - (if balls == 3 && strikes == 0 { 1.5 } else { 0.0 })
            + (-0.32 + batter_swing_slope[b]) * bg;
        let swing = rng.random::<f64>() < logistic(eta_swing);
        let mut launch = String::new();
        let mut event = String::new();
        let description = if swing {
            let eta_c = -0.2 + 1.9 * csp + 0.97 * fb + (0.59 + batter_contact_slope[b]) * bg - 1.19 * fb * bg
                + batter_int[b]
                + pitcher_int[p];
            if rng.random::<f64>() < logistic(eta_c) {
                let in_play = rng.random::<f64>() < 0.55;
                if in_play || rng.random::<f64>() < 0.15 {
                    let ev = 76.0 + 8.36 * csp + 2.2 * fb + 2.39 * bg + batter_ev[b] + pitcher_ev[p]
                        + 14.0 * std.sample(&mut rng);
                    launch = format!("{:.1}", ev.clamp(20.0, 120.0));
                }
                if in_play {
                    event = if rng.random::<f64>() < 0.3 { "single".into() } else { "field_out".into() };
                    "hit_into_play"
                } else {
                    "foul"
                }
            } else if rng.random::<f64>() < 0.1 {
                "foul_tip"
            } else {
                "swinging_strike"
            }
        } else if rng.random::<f64>() < csp {
            "called_strike"
        } else {
            "ball"
        };
        let mut pitch_id = format!("pid{i:06}");
        let mut description = description.to_string();
        let mut group = group.to_string();
        if bunts < config.dirty_rows && i % 97 == 13 {
            description = "foul_bunt".into();
            launch.clear();
            event.clear();
            bunts += 1;
        } else if missing < config.dirty_rows && i % 89 == 7 {
            pitch_id.clear();
            missing += 1;
        } else if ambiguous < config.dirty_rows && i % 83 == 5 {
            group = "KN".into();
            ambiguous += 1;
        }
        wtr.write_record([
            pitch_id,
            game.to_string(),
            date.format("%Y-%m-%d").to_string(),
            format!("{}", 100 + b),
            name(b),
            format!("{}", 5000 + p),
            format!("Pitcher {p}"),
            group,
            format!("{csp:.4}"),
            balls.to_string(),
            strikes.to_string(),
            if bang { "y".into() } else { "n".into() },
            description,
            launch,
            event,
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<synthetic csv>", e))?;
    Ok(())
}

pub fn write_csv_file(config: &SynthConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(config, std::io::BufWriter::new(f))
}
