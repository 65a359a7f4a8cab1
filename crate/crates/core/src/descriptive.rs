//! Contingency tables, the Pearson χ² independence test, the 2×2 odds
//! ratio with a Wald interval, exact binomial intervals, and the per-month /
//! per-player bang summaries.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::ingest::{PitchEvent, PitchGroup, Player};

/// Categorical selectors usable as table margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    PitchGroup,
    Bang,
    Swing,
    Contact,
    Fastball,
    PitchCount,
}

impl Field {
    pub fn levels(self) -> Vec<String> {
        match self {
            Field::PitchGroup => PitchGroup::ALL.iter().map(|g| g.to_string()).collect(),
            Field::Bang | Field::Swing | Field::Contact | Field::Fastball => {
                vec!["No".to_string(), "Yes".to_string()]
            }
            Field::PitchCount => {
                let mut v = Vec::new();
                for b in 0..=3 {
                    for s in 0..=2 {
                        v.push(format!("{b}-{s}"));
                    }
                }
                v
            }
        }
    }

    fn level_index(self, e: &PitchEvent) -> Option<usize> {
        let yn = |x: bool| usize::from(x);
        match self {
            Field::PitchGroup => PitchGroup::ALL.iter().position(|g| *g == e.pitch_group),
            Field::Bang => Some(yn(e.bang)),
            Field::Swing => Some(yn(e.swing)),
            Field::Contact => e.contact.map(yn),
            Field::Fastball => Some(yn(e.pitch_group.is_fastball())),
            Field::PitchCount => Some(e.balls as usize * 3 + e.strikes as usize),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::PitchGroup => "pitch_group",
            Field::Bang => "bang",
            Field::Swing => "swing",
            Field::Contact => "contact",
            Field::Fastball => "fastball",
            Field::PitchCount => "pitch_count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_name: String,
    pub col_name: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn from_counts(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != col_labels.len()) {
            return Err(Error::Dimension(format!(
                "counts must be {}x{}",
                row_labels.len(),
                col_labels.len()
            )));
        }
        Ok(ContingencyTable {
            row_name: "row".into(),
            col_name: "col".into(),
            row_labels,
            col_labels,
            counts,
        })
    }

    /// Unlabelled table from nested counts; labels are the indices.
    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let r = counts.len();
        let c = counts.first().map_or(0, |x| x.len());
        Self::from_counts(
            (0..r).map(|i| i.to_string()).collect(),
            (0..c).map(|j| j.to_string()).collect(),
            counts,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.counts.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.n_cols()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_totals().iter().sum()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<u64> {
        let i = self.row_labels.iter().position(|l| l == row)?;
        let j = self.col_labels.iter().position(|l| l == col)?;
        Some(self.counts[i][j])
    }

    pub fn transpose(&self) -> Self {
        let counts = (0..self.n_cols()).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect();
        ContingencyTable {
            row_name: self.col_name.clone(),
            col_name: self.row_name.clone(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts,
        }
    }

    /// Long-format CSV: one line per row with its label followed by the counts.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![format!("{}\\{}", self.row_name, self.col_name)];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Cross-tabulates events by two categorical fields.
pub fn tabulate(events: &[PitchEvent], row: Field, col: Field) -> Result<ContingencyTable> {
    let row_labels = row.levels();
    let col_labels = col.levels();
    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (k, e) in events.iter().enumerate() {
        let missing = |f: Field| Error::MissingCovariate { index: k, covariate: f.name().to_string() };
        let i = row.level_index(e).ok_or_else(|| missing(row))?;
        let j = col.level_index(e).ok_or_else(|| missing(col))?;
        counts[i][j] += 1;
    }
    Ok(ContingencyTable {
        row_name: row.name().into(),
        col_name: col.name().into(),
        row_labels,
        col_labels,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Formats a p-value the way R prints tiny ones.
pub fn format_p_value(p: f64) -> String {
    if p < 2.2e-16 {
        "< 2.2e-16".to_string()
    } else {
        format!("{p:.4e}")
    }
}

/// χ² upper-tail probability.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

/// Pearson χ² test of independence, no continuity correction.
pub fn chi_square_independence(table: &ContingencyTable) -> Result<TestResult> {
    let (r, c) = (table.n_rows(), table.n_cols());
    if r < 2 || c < 2 {
        return Err(Error::DegenerateTable(format!("need at least 2x2, got {r}x{c}")));
    }
    let rows = table.row_totals();
    let cols = table.col_totals();
    if let Some(i) = rows.iter().position(|&t| t == 0) {
        return Err(Error::DegenerateTable(format!("row `{}` has zero total", table.row_labels[i])));
    }
    if let Some(j) = cols.iter().position(|&t| t == 0) {
        return Err(Error::DegenerateTable(format!("column `{}` has zero total", table.col_labels[j])));
    }
    let n = table.total() as f64;
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            let d = table.counts[i][j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = (r - 1) * (c - 1);
    Ok(TestResult {
        statistic: stat,
        degrees_of_freedom: df,
        p_value: chi_square_sf(stat, df as f64).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioResult {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub log_se: f64,
    pub z: f64,
    pub p_value: f64,
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Two-sided standard-normal p-value, computed from the upper tail to keep
/// precision for large |z|.
pub(crate) fn two_sided_normal_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Odds ratio of a 2×2 table with rows = exposure (No, Yes) and columns =
/// outcome (No, Yes), with a Wald interval on the log scale.
pub fn odds_ratio_2x2(table: &ContingencyTable, level: f64) -> Result<OddsRatioResult> {
    if table.n_rows() != 2 || table.n_cols() != 2 {
        return Err(Error::InvalidArgument(format!(
            "odds ratio needs a 2x2 table, got {}x{}",
            table.n_rows(),
            table.n_cols()
        )));
    }
    check_level(level)?;
    let n = &table.counts;
    if n.iter().flatten().any(|&c| c == 0) {
        return Err(Error::ZeroCell);
    }
    let [n11, n12, n21, n22] = [n[0][0], n[0][1], n[1][0], n[1][1]].map(|c| c as f64);
    let log_or = (n11 * n22).ln() - (n12 * n21).ln();
    let se = (1.0 / n11 + 1.0 / n12 + 1.0 / n21 + 1.0 / n22).sqrt();
    let zq = normal_quantile(0.5 + level / 2.0);
    let z = log_or / se;
    Ok(OddsRatioResult {
        estimate: log_or.exp(),
        lower: (log_or - zq * se).exp(),
        upper: (log_or + zq * se).exp(),
        level,
        log_se: se,
        z,
        p_value: two_sided_normal_p(z),
    })
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("confidence level {level} not in (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Conditional (Fisher) odds ratio: the conditional MLE under the
/// noncentral hypergeometric law of the (1,1) cell given both margins, the
/// exact interval obtained by inverting the two one-sided tests, and the
/// two-sided Fisher exact p-value. Matches R's `fisher.test`.
pub fn odds_ratio_2x2_exact(table: &ContingencyTable, level: f64) -> Result<OddsRatioResult> {
    if table.n_rows() != 2 || table.n_cols() != 2 {
        return Err(Error::InvalidArgument("exact odds ratio needs a 2x2 table".into()));
    }
    check_level(level)?;
    let n = &table.counts;
    let m1 = n[0][0] + n[0][1];
    let m2 = n[1][0] + n[1][1];
    let t = n[0][0] + n[1][0];
    let x = n[0][0];
    if m1 == 0 || m2 == 0 || t == 0 || t == m1 + m2 {
        return Err(Error::DegenerateTable("a margin of the 2x2 table is zero".into()));
    }
    let lo = t.saturating_sub(m2);
    let hi = t.min(m1);
    let support: Vec<u64> = (lo..=hi).collect();
    let base: Vec<f64> = support
        .iter()
        .map(|&k| ln_binomial(m1, k) + ln_binomial(m2, t - k))
        .collect();
    // Conditional probabilities at log odds ratio `lpsi`.
    let probs = |lpsi: f64| -> Vec<f64> {
        let lw: Vec<f64> = base.iter().zip(&support).map(|(b, &k)| b + k as f64 * lpsi).collect();
        let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    };
    let idx = (x - lo) as usize;
    let mean = |lpsi: f64| probs(lpsi).iter().zip(&support).map(|(p, &k)| p * k as f64).sum::<f64>();
    let upper_tail = |lpsi: f64| probs(lpsi)[idx..].iter().sum::<f64>();
    let lower_tail = |lpsi: f64| probs(lpsi)[..=idx].iter().sum::<f64>();
    // Root of an increasing function of log psi.
    let solve = |f: &dyn Fn(f64) -> f64, target: f64| -> f64 {
        let (mut a, mut b) = (-60.0f64, 60.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if f(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let alpha = 1.0 - level;
    let estimate = if x == lo {
        0.0
    } else if x == hi {
        f64::INFINITY
    } else {
        solve(&mean, x as f64).exp()
    };
    let lower = if x == lo { 0.0 } else { solve(&upper_tail, alpha / 2.0).exp() };
    let upper = if x == hi {
        f64::INFINITY
    } else {
        solve(&|l| -lower_tail(l), -alpha / 2.0).exp()
    };
    let null = probs(0.0);
    let d = null[idx] * (1.0 + 1e-7);
    let p_value = null.iter().filter(|&&p| p <= d).sum::<f64>().min(1.0);
    Ok(OddsRatioResult {
        estimate,
        lower,
        upper,
        level,
        log_se: f64::NAN,
        z: f64::NAN,
        p_value,
    })
}

/// Wilson score interval with continuity correction (R's `prop.test`).
pub fn wilson_score_cc(successes: u64, trials: u64, level: f64) -> Result<Interval> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= successes <= trials and trials > 0, got {successes}/{trials}"
        )));
    }
    check_level(level)?;
    let n = trials as f64;
    let est = successes as f64 / n;
    let z = normal_quantile(0.5 + level / 2.0);
    let z22n = z * z / (2.0 * n);
    let bound = |pc: f64, sign: f64| {
        (pc + z22n + sign * z * (pc * (1.0 - pc) / n + z22n / (2.0 * n)).sqrt()) / (1.0 + 2.0 * z22n)
    };
    let pc = est + 0.5 / n;
    let upper = if pc >= 1.0 { 1.0 } else { bound(pc, 1.0) };
    let pc = est - 0.5 / n;
    let lower = if pc <= 0.0 { 0.0 } else { bound(pc, -1.0) };
    Ok(Interval { lower, upper })
}

/// Solves `beta_reg(a, b, x) = p` for x by bisection; the CDF is monotone.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) binomial interval.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> Result<Interval> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= successes <= trials and trials > 0, got {successes}/{trials}"
        )));
    }
    check_level(level)?;
    let alpha = 1.0 - level;
    let (x, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 { 0.0 } else { beta_quantile(x, n - x + 1.0, alpha / 2.0) };
    let upper = if successes == trials { 1.0 } else { beta_quantile(x + 1.0, n - x, 1.0 - alpha / 2.0) };
    Ok(Interval { lower, upper })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyProportion {
    pub year: i32,
    pub month: u32,
    pub bangs: u64,
    pub pitches: u64,
    pub proportion: f64,
}

pub fn monthly_bang_proportions(events: &[PitchEvent]) -> Vec<MonthlyProportion> {
    use chrono::Datelike;
    let mut by_month: BTreeMap<(i32, u32), (u64, u64)> = BTreeMap::new();
    for e in events {
        let slot = by_month.entry((e.game_date.year(), e.game_date.month())).or_default();
        slot.0 += u64::from(e.bang);
        slot.1 += 1;
    }
    by_month
        .into_iter()
        .map(|((year, month), (bangs, pitches))| MonthlyProportion {
            year,
            month,
            bangs,
            pitches,
            proportion: bangs as f64 / pitches as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerBangCount {
    pub player: Player,
    pub pitches: u64,
    pub bangs: u64,
}

/// Pitches seen and bangs heard per batter, most-pitched-to first.
/// `top_n = None` keeps every batter.
pub fn player_bang_counts(events: &[PitchEvent], top_n: Option<usize>) -> Vec<PlayerBangCount> {
    let mut by_player: BTreeMap<&Player, (u64, u64)> = BTreeMap::new();
    for e in events {
        let slot = by_player.entry(&e.batter).or_default();
        slot.0 += 1;
        slot.1 += u64::from(e.bang);
    }
    let mut out: Vec<PlayerBangCount> = by_player
        .into_iter()
        .map(|(p, (pitches, bangs))| PlayerBangCount { player: p.clone(), pitches, bangs })
        .collect();
    out.sort_by(|a, b| b.pitches.cmp(&a.pitches).then_with(|| a.player.cmp(&b.player)));
    if let Some(n) = top_n {
        out.truncate(n);
    }
    out
}

/// Exit-velocity summary per pitch group and bang status (the data behind the
/// exit-velocity box plot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitVelocityCell {
    pub pitch_group: PitchGroup,
    pub bang: bool,
    pub n: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    // R type 7
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn exit_velocity_summary(events: &[PitchEvent]) -> Vec<ExitVelocityCell> {
    let mut cells: BTreeMap<(PitchGroup, bool), Vec<f64>> = BTreeMap::new();
    for e in events {
        if let Some(ev) = e.exit_velocity {
            cells.entry((e.pitch_group, e.bang)).or_default().push(ev);
        }
    }
    cells
        .into_iter()
        .map(|((pitch_group, bang), mut v)| {
            v.sort_by(f64::total_cmp);
            ExitVelocityCell {
                pitch_group,
                bang,
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q1: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q3: quantile_sorted(&v, 0.75),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;

    fn table(rows: Vec<Vec<u64>>) -> ContingencyTable {
        ContingencyTable::from_rows(rows).unwrap()
    }

    #[test]
    fn chi_square_exact_independence() {
        let t = chi_square_independence(&table(vec![vec![10, 20], vec![30, 60]])).unwrap();
        assert_abs_diff_eq!(t.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi_square_hand_computed() {
        // E = 15 in every cell: 4 * 25 / 15 = 20/3.
        let t = chi_square_independence(&table(vec![vec![10, 20], vec![20, 10]])).unwrap();
        assert_abs_diff_eq!(t.statistic, 20.0 / 3.0, epsilon = 1e-12);
        assert_eq!(t.degrees_of_freedom, 1);
        // P(χ²₁ > 20/3) = erfc(sqrt(10/3)).
        assert_abs_diff_eq!(t.p_value, 0.009823274507519247, epsilon = 1e-12);
    }

    #[test]
    fn chi_square_degenerate_margin() {
        let err = chi_square_independence(&table(vec![vec![0, 0], vec![3, 4]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateTable(_)));
    }

    #[test]
    fn odds_ratio_formula() {
        let or = odds_ratio_2x2(&table(vec![vec![10, 20], vec![20, 10]]), 0.95).unwrap();
        assert_abs_diff_eq!(or.estimate, 0.25, epsilon = 1e-12);
        let balanced = odds_ratio_2x2(&table(vec![vec![7, 7], vec![7, 7]]), 0.95).unwrap();
        assert_abs_diff_eq!(balanced.estimate, 1.0, epsilon = 1e-12);
        assert!(balanced.lower < 1.0 && balanced.upper > 1.0);
        assert_abs_diff_eq!(balanced.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn odds_ratio_zero_cell() {
        let err = odds_ratio_2x2(&table(vec![vec![0, 20], vec![20, 10]]), 0.95).unwrap_err();
        assert!(matches!(err, Error::ZeroCell));
    }

    #[test]
    fn clopper_pearson_beta_quantiles() {
        // scipy.stats.beta.ppf(0.025, 31, 65), beta.ppf(0.975, 32, 64)
        let ci = clopper_pearson(31, 95, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, 0.233615020923826, epsilon = 1e-10);
        assert_abs_diff_eq!(ci.upper, 0.43018161579038594, epsilon = 1e-10);
        let ci = clopper_pearson(2, 40, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, 0.006113646599350838, epsilon = 1e-10);
        assert_abs_diff_eq!(ci.upper, 0.16919686395941763, epsilon = 1e-10);
    }

    #[test]
    fn wilson_cc_matches_prop_test() {
        let ci = wilson_score_cc(31, 95, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, 0.23570330212487098, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.upper, 0.4311656310531199, epsilon = 1e-12);
        let ci = wilson_score_cc(2, 40, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, 0.008707842404129956, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.upper, 0.18209703903855426, epsilon = 1e-12);
        assert_eq!(wilson_score_cc(0, 10, 0.95).unwrap().lower, 0.0);
        assert_eq!(wilson_score_cc(10, 10, 0.95).unwrap().upper, 1.0);
    }

    #[test]
    fn exact_odds_ratio_matches_fisher() {
        // scipy.stats.contingency.odds_ratio(kind="conditional") and fisher_exact
        let t = table(vec![vec![3798, 3263], vec![678, 462]]);
        let or = odds_ratio_2x2_exact(&t, 0.95).unwrap();
        assert_abs_diff_eq!(or.estimate, 0.7931627903165289, epsilon = 1e-8);
        assert_abs_diff_eq!(or.lower, 0.6967832188402548, epsilon = 1e-8);
        assert_abs_diff_eq!(or.upper, 0.9023348248902849, epsilon = 1e-8);
        assert_abs_diff_eq!(or.p_value, 0.0003705961958070952, epsilon = 1e-10);
    }

    #[test]
    fn wald_odds_ratio_table_two() {
        let t = table(vec![vec![3798, 3263], vec![678, 462]]);
        let or = odds_ratio_2x2(&t, 0.95).unwrap();
        assert_abs_diff_eq!(or.estimate, 0.7931405758857015, epsilon = 1e-12);
        assert_abs_diff_eq!(or.lower, 0.6984344867561452, epsilon = 1e-10);
        assert_abs_diff_eq!(or.upper, 0.9006885900465844, epsilon = 1e-10);
        assert_abs_diff_eq!(or.p_value, 0.0003540656124719973, epsilon = 1e-10);
    }

    #[test]
    fn chi_square_table_one() {
        // scipy.stats.chi2_contingency(correction=False)
        let t = table(vec![vec![756, 707, 4128, 1470], vec![235, 270, 97, 538]]);
        let r = chi_square_independence(&t).unwrap();
        assert_abs_diff_eq!(r.statistic, 987.9872506654006, epsilon = 1e-8);
        assert_eq!(r.degrees_of_freedom, 3);
        assert!(r.p_value < 2.2e-16);
        assert!((r.p_value / 7.261879929001574e-214 - 1.0).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn clopper_pearson_boundaries() {
        let ci = clopper_pearson(0, 10, 0.95).unwrap();
        assert_eq!(ci.lower, 0.0);
        // Upper bound for 0/n is 1 - (α/2)^(1/n).
        assert_abs_diff_eq!(ci.upper, 1.0 - 0.025f64.powf(0.1), epsilon = 1e-10);
        let ci = clopper_pearson(10, 10, 0.95).unwrap();
        assert_eq!(ci.upper, 1.0);
        assert_abs_diff_eq!(ci.lower, 0.025f64.powf(0.1), epsilon = 1e-10);
        assert!(clopper_pearson(11, 10, 0.95).is_err());
        assert!(clopper_pearson(0, 0, 0.95).is_err());
    }

    fn event(month: u32, bang: bool, batter: &str) -> PitchEvent {
        PitchEvent {
            pitch_id: format!("{month}-{bang}-{batter}"),
            game_id: "g".into(),
            game_date: NaiveDate::from_ymd_opt(2017, month, 3).unwrap(),
            batter: Player { id: batter.into(), name: batter.into() },
            pitcher: Player { id: "p".into(), name: "P".into() },
            pitch_group: PitchGroup::FA,
            csp: 0.5,
            balls: 0,
            strikes: 0,
            bang,
            swing: false,
            contact: None,
            exit_velocity: None,
            description: "ball".into(),
            event: None,
        }
    }

    #[test]
    fn monthly_single_month() {
        let events: Vec<_> = (0..10).map(|i| event(6, i < 2, "a")).collect();
        let m = monthly_bang_proportions(&events);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].bangs, m[0].pitches), (2, 10));
        assert_abs_diff_eq!(m[0].proportion, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn player_counts_single_batter() {
        let events: Vec<_> = (0..7).map(|i| event(5, i % 3 == 0, "springer")).collect();
        let p = player_bang_counts(&events, Some(9));
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].pitches, p[0].bangs), (7, 3));
    }

    #[test]
    fn empty_tabulation_is_zero() {
        let t = tabulate(&[], Field::PitchGroup, Field::Bang).unwrap();
        assert_eq!(t.counts, vec![vec![0, 0]; 4]);
    }

    #[test]
    fn contact_selector_requires_swing() {
        let e = vec![event(5, false, "a")];
        assert!(matches!(
            tabulate(&e, Field::Bang, Field::Contact),
            Err(Error::MissingCovariate { .. })
        ));
    }
}
