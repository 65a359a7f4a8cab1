//! Wald intervals, odds ratios, linear combinations of fixed effects, and the
//! parametric bootstrap.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptive::{check_level, normal_quantile};
use crate::error::{Error, Result};
use crate::glmm::{fit, DesignBundle, Family, FitOptions, FittedModel, Grouping, StartValues};
use crate::ingest::Player;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// estimate ± z · SE.
pub fn wald_interval(model: &FittedModel, term: &str, level: f64) -> Result<WaldInterval> {
    check_level(level)?;
    let j = model.term_index(term)?;
    Ok(interval(term.to_string(), model.beta[j], model.se_beta[j], level))
}

fn interval(term: String, estimate: f64, se: f64, level: f64) -> WaldInterval {
    let z = normal_quantile(0.5 + level / 2.0);
    WaldInterval { term, estimate, std_error: se, lower: estimate - z * se, upper: estimate + z * se, level }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub term: String,
    pub odds_ratio: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl OddsRatio {
    pub fn from_wald(w: &WaldInterval) -> Self {
        OddsRatio {
            term: w.term.clone(),
            odds_ratio: w.estimate.exp(),
            lower: w.lower.exp(),
            upper: w.upper.exp(),
            level: w.level,
        }
    }
}

fn require_logit(model: &FittedModel) -> Result<()> {
    if model.family() != Family::BernoulliLogit {
        return Err(Error::Family("odds ratios need a Bernoulli-logit model".into()));
    }
    Ok(())
}

/// exp of the Wald point and endpoints.
pub fn odds_ratio(model: &FittedModel, term: &str, level: f64) -> Result<OddsRatio> {
    require_logit(model)?;
    Ok(OddsRatio::from_wald(&wald_interval(model, term, level)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCombination {
    pub estimate: f64,
    pub std_error: f64,
}

impl LinearCombination {
    pub fn wald(&self, label: &str, level: f64) -> Result<WaldInterval> {
        check_level(level)?;
        Ok(interval(label.to_string(), self.estimate, self.std_error, level))
    }
}

/// w'β and sqrt(w' Cov(β) w) for a weight per fixed effect.
pub fn linear_combo(model: &FittedModel, weights: &[f64]) -> Result<LinearCombination> {
    let p = model.beta.len();
    if weights.len() != p {
        return Err(Error::Dimension(format!("expected {p} weights, got {}", weights.len())));
    }
    let estimate = weights.iter().zip(&model.beta).map(|(w, b)| w * b).sum();
    let mut var = 0.0;
    for i in 0..p {
        for j in 0..p {
            var += weights[i] * model.vcov[i][j] * weights[j];
        }
    }
    Ok(LinearCombination { estimate, std_error: var.max(0.0).sqrt() })
}

/// Weight vector from (term, weight) pairs; unnamed terms get 0.
pub fn term_weights(model: &FittedModel, named: &[(&str, f64)]) -> Result<Vec<f64>> {
    let mut w = vec![0.0; model.beta.len()];
    for &(t, v) in named {
        w[model.term_index(t)?] += v;
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerOddsRatio {
    pub player: Player,
    pub blup: f64,
    pub log_odds: f64,
    pub odds_ratio: f64,
}

/// exp(fixed effect + batter random slope) per batter, descending.
pub fn player_odds_ratios(model: &FittedModel, term: &str) -> Result<Vec<PlayerOddsRatio>> {
    require_logit(model)?;
    let fixed = model.beta[model.term_index(term)?];
    let table = model
        .blups
        .iter()
        .find(|b| b.group == Grouping::Batter && b.effects.iter().any(|e| e == term))
        .ok_or_else(|| Error::UnknownTerm(format!("no batter random slope on {term}")))?;
    let e = table.effect_index(term)?;
    let mut out: Vec<PlayerOddsRatio> = table
        .levels
        .iter()
        .zip(&table.values)
        .map(|(p, v)| PlayerOddsRatio {
            player: p.clone(),
            blup: v[e],
            log_odds: fixed + v[e],
            odds_ratio: (fixed + v[e]).exp(),
        })
        .collect();
    out.sort_by(|a, b| b.odds_ratio.total_cmp(&a.odds_ratio).then_with(|| a.player.cmp(&b.player)));
    Ok(out)
}

/// A batter's total effect (fixed + random) for one random-effect label,
/// e.g. "(Intercept)" with fixed term "(Intercept)", or "Bang" with "Bang".
pub fn player_effect(model: &FittedModel, player_id: &str, fixed_term: &str, random_effect: &str) -> Result<f64> {
    let fixed = model.beta[model.term_index(fixed_term)?];
    let table = crate::glmm::blups(model, Grouping::Batter)?;
    let e = table.effect_index(random_effect)?;
    let l = table
        .levels
        .iter()
        .position(|p| p.id == player_id)
        .ok_or_else(|| Error::UnknownGroup(format!("batter {player_id}")))?;
    Ok(fixed + table.values[l][e])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    pub fit: FitOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { replicates: 1000, seed: 20170101, level: 0.95, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub statistic: String,
    /// Point value on the original fit.
    pub estimate: f64,
    /// One entry per replicate; `None` where the refit failed.
    pub replicates: Vec<Option<f64>>,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn usable(&self) -> Vec<f64> {
        self.replicates.iter().flatten().copied().collect()
    }

    /// Percentile interval at another level from the same replicates.
    pub fn interval_at(&self, level: f64) -> Result<(f64, f64)> {
        percentile_interval(&self.usable(), level)
    }

    pub fn to_json(&self, include_replicates: bool) -> Result<String> {
        if include_replicates {
            return Ok(serde_json::to_string_pretty(self)?);
        }
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("replicates");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub const CSV_HEADER: [&'static str; 8] =
        ["statistic", "estimate", "lower", "upper", "level", "b", "failures", "seed"];

    pub fn csv_record(&self) -> [String; 8] {
        [
            self.statistic.clone(),
            self.estimate.to_string(),
            self.lower.to_string(),
            self.upper.to_string(),
            self.level.to_string(),
            self.b.to_string(),
            self.failures.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Endpoints are the order statistics at ceil(m·α/2) and ceil(m·(1 − α/2)).
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("no replicate values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    let alpha = 1.0 - level;
    let idx = |q: f64| ((m * q).ceil() as usize).clamp(1, v.len()) - 1;
    Ok((v[idx(alpha / 2.0)], v[idx(1.0 - alpha / 2.0)]))
}

/// Response simulated from the fitted model with fresh random effects.
pub fn simulate_response(model: &FittedModel, bundle: &DesignBundle, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let n = bundle.n_obs();
    if bundle.n_fixed() != model.beta.len() || bundle.blocks.len() != model.cov_factors.len() {
        return Err(Error::Dimension("bundle does not match the fitted model".into()));
    }
    let mut eta: Vec<f64> = (0..n)
        .map(|i| (0..model.beta.len()).map(|j| bundle.x[(i, j)] * model.beta[j]).sum())
        .collect();
    for (block, l) in bundle.blocks.iter().zip(&model.cov_factors) {
        let k = block.n_effects();
        let effects: Vec<Vec<f64>> = (0..block.n_levels())
            .map(|_| {
                let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                (0..k).map(|d| (0..=d).map(|e| l[d][e] * z[e]).sum()).collect()
            })
            .collect();
        for (i, e) in eta.iter_mut().enumerate() {
            let b = &effects[block.level_of_row[i]];
            *e += block.row_values(i).iter().zip(b).map(|(z, b)| z * b).sum::<f64>();
        }
    }
    Ok(match model.family() {
        Family::BernoulliLogit => DVector::from_iterator(
            n,
            eta.iter().map(|&e| f64::from(u8::from(rng.random::<f64>() < crate::glmm::inverse_logit(e)))),
        ),
        Family::GaussianIdentity => {
            let sd = model.residual_sd.unwrap_or(0.0);
            DVector::from_iterator(n, eta.iter().map(|&e| e + sd * rng.sample::<f64, _>(StandardNormal)))
        }
    })
}

/// Parametric bootstrap of several statistics from the same refits.
/// Replicate r uses a ChaCha8 stream seeded with `seed ^ r`.
pub fn parametric_bootstrap_many<F>(
    model: &FittedModel,
    bundle: &DesignBundle,
    names: &[String],
    statistic: F,
    opts: &BootstrapOptions,
) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&FittedModel) -> Result<Vec<f64>> + Sync,
{
    if opts.replicates < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    check_level(opts.level)?;
    if !model.convergence.converged {
        return Err(Error::InvalidArgument("bootstrap needs a converged model".into()));
    }
    let estimate = statistic(model)?;
    if estimate.len() != names.len() {
        return Err(Error::Dimension(format!("{} names for {} statistics", names.len(), estimate.len())));
    }
    let mut fit_opts = opts.fit.clone();
    fit_opts.start = Some(StartValues { theta: model.theta.clone(), beta: model.beta.clone() });
    let reps: Vec<Option<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ r as u64);
            let y = simulate_response(model, bundle, &mut rng).ok()?;
            let refit = fit(&bundle.with_response(y), &model.spec, &fit_opts).ok()?;
            if !refit.convergence.converged {
                return None;
            }
            statistic(&refit).ok().filter(|v| v.len() == names.len() && v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let failures = reps.iter().filter(|r| r.is_none()).count();
    if failures * 5 > opts.replicates {
        return Err(Error::BootstrapFailures { failures, total: opts.replicates });
    }
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let replicates: Vec<Option<f64>> = reps.iter().map(|r| r.as_ref().map(|v| v[k])).collect();
            let usable: Vec<f64> = replicates.iter().flatten().copied().collect();
            let (lower, upper) = percentile_interval(&usable, opts.level)?;
            Ok(BootstrapResult {
                statistic: name.clone(),
                estimate: estimate[k],
                replicates,
                level: opts.level,
                lower,
                upper,
                b: opts.replicates,
                seed: opts.seed,
                failures,
            })
        })
        .collect()
}

pub fn parametric_bootstrap<F>(
    model: &FittedModel,
    bundle: &DesignBundle,
    name: &str,
    statistic: F,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult>
where
    F: Fn(&FittedModel) -> Result<f64> + Sync,
{
    let mut out =
        parametric_bootstrap_many(model, bundle, &[name.to_string()], |m| statistic(m).map(|v| vec![v]), opts)?;
    Ok(out.remove(0))
}

/// Bootstrap replicates of one batter's intercept and bang slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerBootstrap {
    pub player: Player,
    pub intercept: BootstrapResult,
    pub slope: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub player_id: String,
    pub player_name: String,
    pub replicate: usize,
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
}

/// Long-format table: one row per player and replicate.
pub fn bootstrap_distributions_export(results: &[PlayerBootstrap]) -> Vec<DistributionRow> {
    let mut rows = Vec::new();
    for r in results {
        for (i, (a, b)) in r.intercept.replicates.iter().zip(&r.slope.replicates).enumerate() {
            rows.push(DistributionRow {
                player_id: r.player.id.clone(),
                player_name: r.player.name.clone(),
                replicate: i,
                intercept: *a,
                slope: *b,
            });
        }
    }
    rows
}

pub fn write_distributions_csv<W: std::io::Write>(rows: &[DistributionRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["player_id", "player_name", "replicate", "intercept", "slope"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        wtr.write_record([
            r.player_id.clone(),
            r.player_name.clone(),
            r.replicate.to_string(),
            fmt(r.intercept),
            fmt(r.slope),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<distributions>", e))?;
    Ok(())
}

/// Per-player intercept and bang-slope bootstraps for the given batters, all
/// from one set of refits.
pub fn player_effect_bootstrap(
    model: &FittedModel,
    bundle: &DesignBundle,
    players: &[Player],
    slope_term: &str,
    opts: &BootstrapOptions,
) -> Result<Vec<PlayerBootstrap>> {
    let mut names = Vec::new();
    for p in players {
        names.push(format!("{} intercept", p.id));
        names.push(format!("{} slope", p.id));
    }
    let stat = |m: &FittedModel| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(2 * players.len());
        for p in players {
            v.push(player_effect(m, &p.id, "(Intercept)", "(Intercept)")?);
            v.push(player_effect(m, &p.id, slope_term, slope_term)?);
        }
        Ok(v)
    };
    let res = parametric_bootstrap_many(model, bundle, &names, stat, opts)?;
    let mut it = res.into_iter();
    Ok(players
        .iter()
        .map(|p| PlayerBootstrap {
            player: p.clone(),
            intercept: it.next().expect("two results per player"),
            slope: it.next().expect("two results per player"),
        })
        .collect())
}
