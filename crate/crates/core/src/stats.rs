//! Balanced two-way fixed-effects ANOVA with interaction, plus post-hoc
//! pairwise comparisons and compact letter displays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("unbalanced design: cell ({a}, {b}) has {got} replicates, expected {expected}")]
    UnbalancedDesign { a: usize, b: usize, got: usize, expected: usize },
    #[error("need at least 2 replicates per cell, got {0}")]
    InsufficientReplicates(usize),
    #[error("need at least 2 levels per factor")]
    TooFewLevels,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown factor '{0}'")]
    UnknownFactor(String),
    #[error("table csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// `P(F <= x)` for an F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(special::reg_inc_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))
}

/// Upper tail `P(F > x)`, evaluated directly so small p-values keep precision.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(special::reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))
}

fn check_f_args(x: f64, d1: f64, d2: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::Domain(format!("F value {x} must be >= 0")));
    }
    if !(d1 >= 1.0 && d2 >= 1.0) {
        return Err(StatsError::Domain(format!("degrees of freedom ({d1}, {d2}) must be >= 1")));
    }
    Ok(())
}

/// Observations indexed `[a][b][replicate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialTable {
    pub factor_a: String,
    pub factor_b: String,
    pub a_levels: Vec<f64>,
    pub b_levels: Vec<f64>,
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl FactorialTable {
    pub fn new(
        factor_a: impl Into<String>,
        factor_b: impl Into<String>,
        a_levels: Vec<f64>,
        b_levels: Vec<f64>,
        cells: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let t = Self { factor_a: factor_a.into(), factor_b: factor_b.into(), a_levels, b_levels, cells };
        t.n_rep()?;
        Ok(t)
    }

    /// Replicates per cell, validating the balanced-design invariants.
    pub fn n_rep(&self) -> Result<usize> {
        if self.a_levels.len() < 2 || self.b_levels.len() < 2 {
            return Err(StatsError::TooFewLevels);
        }
        if self.cells.len() != self.a_levels.len() {
            return Err(StatsError::Csv("cell rows do not match factor A levels".into()));
        }
        let expected = self.cells.first().and_then(|r| r.first()).map_or(0, Vec::len);
        for (i, row) in self.cells.iter().enumerate() {
            if row.len() != self.b_levels.len() {
                return Err(StatsError::Csv("cell columns do not match factor B levels".into()));
            }
            for (j, cell) in row.iter().enumerate() {
                if cell.len() != expected {
                    return Err(StatsError::UnbalancedDesign { a: i, b: j, got: cell.len(), expected });
                }
            }
        }
        if expected < 2 {
            return Err(StatsError::InsufficientReplicates(expected));
        }
        Ok(expected)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in out.cells.iter_mut().flatten().flatten() {
            *v = f(*v);
        }
        out
    }

    /// Reads `<a>,<b>,rep,<value>` rows (header names the factors). Levels
    /// are sorted ascending.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| StatsError::Csv("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(StatsError::Csv(format!("expected 4 columns, header is '{header}'")));
        }
        let mut rows: Vec<(f64, f64, i64, f64)> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || StatsError::Csv(format!("line {}: '{line}'", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            rows.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            ));
        }
        let levels = |k: fn(&(f64, f64, i64, f64)) -> f64| {
            let mut l: Vec<f64> = rows.iter().map(k).collect();
            l.sort_by(f64::total_cmp);
            l.dedup();
            l
        };
        let a_levels = levels(|r| r.0);
        let b_levels = levels(|r| r.1);
        let mut by_cell: BTreeMap<(usize, usize), BTreeMap<i64, f64>> = BTreeMap::new();
        for &(a, b, rep, v) in &rows {
            let ia = a_levels.iter().position(|&x| x == a).expect("level present");
            let ib = b_levels.iter().position(|&x| x == b).expect("level present");
            if by_cell.entry((ia, ib)).or_default().insert(rep, v).is_some() {
                return Err(StatsError::Csv(format!("duplicate replicate {rep} in cell ({a}, {b})")));
            }
        }
        let cells = (0..a_levels.len())
            .map(|i| {
                (0..b_levels.len())
                    .map(|j| by_cell.get(&(i, j)).map(|m| m.values().copied().collect()).unwrap_or_default())
                    .collect()
            })
            .collect();
        Self::new(cols[0], cols[1], a_levels, b_levels, cells)
    }

    pub fn write_csv(&self, value_name: &str) -> String {
        let mut s = format!("{},{},rep,{value_name}\n", self.factor_a, self.factor_b);
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                for (k, v) in cell.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{},{}", self.a_levels[i], self.b_levels[j], k + 1, v);
                }
            }
        }
        s
    }

    pub fn cell_means(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factor_a: String,
    pub factor_b: String,
    pub a: EffectRow,
    pub b: EffectRow,
    pub ab: EffectRow,
    pub ss_error: f64,
    pub df_error: usize,
    pub ms_error: f64,
    pub ss_total: f64,
    pub grand_mean: f64,
    /// True when some F was 0/0 and reported as 0.
    pub degenerate: bool,
}

impl AnovaResult {
    pub fn to_table_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>14} {:>5} {:>14} {:>10} {:>10}", "source", "SS", "df", "MS", "F", "p");
        let rows = [
            (self.factor_a.clone(), &self.a),
            (self.factor_b.clone(), &self.b),
            (format!("{} x {}", self.factor_a, self.factor_b), &self.ab),
        ];
        for (name, r) in rows {
            let _ = writeln!(
                s,
                "{:<20} {:>14.4} {:>5} {:>14.4} {:>10.3} {:>10.3e}",
                name, r.ss, r.df, r.ms, r.f, r.p
            );
        }
        let _ = writeln!(s, "{:<20} {:>14.4} {:>5} {:>14.4}", "error", self.ss_error, self.df_error, self.ms_error);
        let _ = writeln!(s, "{:<20} {:>14.4}", "total", self.ss_total);
        s
    }
}

fn effect(ss: f64, df: usize, ms_error: f64, df_error: usize, degenerate: &mut bool) -> Result<EffectRow> {
    let ms = ss / df as f64;
    let (f, p) = if ms_error > 0.0 {
        let f = ms / ms_error;
        (f, f_sf(f, df as f64, df_error as f64)?)
    } else if ms == 0.0 {
        *degenerate = true;
        (0.0, 1.0)
    } else {
        (f64::INFINITY, 0.0)
    };
    Ok(EffectRow { ss, df, ms, f, p })
}

/// Fixed-effects two-way ANOVA on a balanced table.
pub fn anova2(table: &FactorialTable) -> Result<AnovaResult> {
    let n = table.n_rep()?;
    let (na, nb) = (table.a_levels.len(), table.b_levels.len());
    let nf = n as f64;
    let cell = table.cell_means();
    let grand = cell.iter().flatten().sum::<f64>() / (na * nb) as f64;
    let a_mean: Vec<f64> = cell.iter().map(|r| r.iter().sum::<f64>() / nb as f64).collect();
    let b_mean: Vec<f64> = (0..nb).map(|j| cell.iter().map(|r| r[j]).sum::<f64>() / na as f64).collect();

    let ss_a = nb as f64 * nf * a_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = na as f64 * nf * b_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    let mut ss_t = 0.0;
    for i in 0..na {
        for j in 0..nb {
            ss_ab += nf * (cell[i][j] - a_mean[i] - b_mean[j] + grand).powi(2);
            for &y in &table.cells[i][j] {
                ss_e += (y - cell[i][j]).powi(2);
                ss_t += (y - grand).powi(2);
            }
        }
    }
    let df_a = na - 1;
    let df_b = nb - 1;
    let df_ab = df_a * df_b;
    let df_e = na * nb * (n - 1);
    let ms_e = ss_e / df_e as f64;
    let mut degenerate = false;
    Ok(AnovaResult {
        factor_a: table.factor_a.clone(),
        factor_b: table.factor_b.clone(),
        a: effect(ss_a, df_a, ms_e, df_e, &mut degenerate)?,
        b: effect(ss_b, df_b, ms_e, df_e, &mut degenerate)?,
        ab: effect(ss_ab, df_ab, ms_e, df_e, &mut degenerate)?,
        ss_error: ss_e,
        df_error: df_e,
        ms_error: ms_e,
        ss_total: ss_t,
        grand_mean: grand,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    A,
    B,
}

impl std::str::FromStr for Factor {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Factor::A),
            "B" | "b" => Ok(Factor::B),
            other => Err(StatsError::UnknownFactor(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosthocMethod {
    #[default]
    FisherLsd,
    TukeyHsd,
}

impl std::str::FromStr for PosthocMethod {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher_lsd" | "lsd" => Ok(PosthocMethod::FisherLsd),
            "tukey_hsd" | "hsd" => Ok(PosthocMethod::TukeyHsd),
            other => Err(StatsError::Domain(format!("unknown post-hoc method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub level_i: f64,
    pub level_j: f64,
    pub mean_diff: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLetters {
    pub level: f64,
    pub mean: f64,
    pub letters: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub factor: String,
    pub method: PosthocMethod,
    pub alpha: f64,
    /// Set when the main effect was not significant and no comparisons were run.
    pub skipped: bool,
    pub comparisons: Vec<PairComparison>,
    pub groups: Vec<LevelLetters>,
}

/// Pairwise comparisons of one factor's marginal means, pooled over the other factor.
pub fn posthoc(
    table: &FactorialTable,
    result: &AnovaResult,
    factor: Factor,
    method: PosthocMethod,
    alpha: f64,
) -> Result<PosthocResult> {
    let n = table.n_rep()?;
    let cell = table.cell_means();
    let (na, nb) = (table.a_levels.len(), table.b_levels.len());
    let (levels, means, per_level, main_p, name) = match factor {
        Factor::A => (
            table.a_levels.clone(),
            cell.iter().map(|r| r.iter().sum::<f64>() / nb as f64).collect::<Vec<_>>(),
            nb * n,
            result.a.p,
            table.factor_a.clone(),
        ),
        Factor::B => (
            table.b_levels.clone(),
            (0..nb).map(|j| cell.iter().map(|r| r[j]).sum::<f64>() / na as f64).collect(),
            na * n,
            result.b.p,
            table.factor_b.clone(),
        ),
    };
    let k = levels.len();
    if !(main_p < alpha) {
        return Ok(PosthocResult {
            factor: name,
            method,
            alpha,
            skipped: true,
            comparisons: Vec::new(),
            groups: levels
                .iter()
                .zip(&means)
                .map(|(&level, &mean)| LevelLetters { level, mean, letters: "a".into() })
                .collect(),
        });
    }
    let df_e = result.df_error as f64;
    let mse = result.ms_error;
    let mut comparisons = Vec::new();
    let mut sig = vec![vec![false; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let diff = means[i] - means[j];
            let p = if mse > 0.0 {
                match method {
                    PosthocMethod::FisherLsd => {
                        let se = (mse * 2.0 / per_level as f64).sqrt();
                        special::t_two_sided_p(diff.abs() / se, df_e)
                    }
                    PosthocMethod::TukeyHsd => {
                        let se = (mse / per_level as f64).sqrt();
                        (1.0 - special::ptukey(diff.abs() / se, k, df_e)).max(0.0)
                    }
                }
            } else if diff == 0.0 {
                1.0
            } else {
                0.0
            };
            let significant = p < alpha;
            sig[i][j] = significant;
            sig[j][i] = significant;
            comparisons.push(PairComparison { level_i: levels[i], level_j: levels[j], mean_diff: diff, p, significant });
        }
    }
    let letters = letter_groups(&means, &sig);
    Ok(PosthocResult {
        factor: name,
        method,
        alpha,
        skipped: false,
        comparisons,
        groups: levels
            .iter()
            .zip(&means)
            .zip(letters)
            .map(|((&level, &mean), letters)| LevelLetters { level, mean, letters })
            .collect(),
    })
}

/// Compact letter display: two levels share a letter iff they are not
/// significantly different. Groups are grown greedily over levels sorted by
/// mean; letters are then assigned in level order.
pub fn letter_groups(means: &[f64], significant: &[Vec<bool>]) -> Vec<String> {
    let k = means.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| means[i].total_cmp(&means[j]).then(i.cmp(&j)));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let shares = |groups: &Vec<Vec<usize>>, i: usize, j: usize| groups.iter().any(|g| g.contains(&i) && g.contains(&j));
    for (pos, &i) in order.iter().enumerate() {
        let partners: Vec<usize> = order[pos + 1..].iter().copied().filter(|&j| !significant[i][j]).collect();
        if partners.is_empty() {
            if !groups.iter().any(|g| g.contains(&i)) {
                groups.push(vec![i]);
            }
            continue;
        }
        for &j in &partners {
            if shares(&groups, i, j) {
                continue;
            }
            let mut g = vec![i, j];
            for &m in &order {
                if !g.contains(&m) && g.iter().all(|&x| !significant[x][m]) {
                    g.push(m);
                }
            }
            groups.push(g);
        }
        if !groups.iter().any(|g| g.contains(&i)) {
            groups.push(vec![i]);
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    // drop groups contained in another
    let mut kept: Vec<Vec<usize>> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let subsumed = groups
            .iter()
            .enumerate()
            .any(|(hi, h)| hi != gi && g.iter().all(|x| h.contains(x)) && (h.len() > g.len() || hi < gi));
        if !subsumed {
            kept.push(g.clone());
        }
    }
    kept.sort();
    let mut out = vec![String::new(); k];
    for (li, g) in kept.iter().enumerate() {
        let letter = letter_name(li);
        for &m in g {
            out[m].push_str(&letter);
        }
    }
    out
}

fn letter_name(i: usize) -> String {
    let base = (b'a' + (i % 26) as u8) as char;
    if i < 26 {
        base.to_string()
    } else {
        format!("{base}{}", i / 26)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_from(means: &[Vec<f64>], n: usize, jitter: impl Fn(usize, usize, usize) -> f64) -> FactorialTable {
        let cells = means
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &m)| (0..n).map(|k| m + jitter(i, j, k)).collect())
                    .collect()
            })
            .collect();
        FactorialTable::new(
            "a",
            "b",
            (0..means.len()).map(|i| i as f64).collect(),
            (0..means[0].len()).map(|j| j as f64).collect(),
            cells,
        )
        .unwrap()
    }

    #[test]
    fn f_cdf_basic_identities() {
        assert_eq!(f_cdf(0.0, 3.0, 7.0).unwrap(), 0.0);
        for d in [1.0, 2.0, 5.0, 60.0, 200.0] {
            assert!((f_cdf(1.0, d, d).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!(matches!(f_cdf(-1.0, 1.0, 1.0), Err(StatsError::Domain(_))));
        let p = f_sf(2.87, 8.0, 60.0).unwrap();
        assert!((p - 0.009).abs() < 0.001, "{p}");
    }

    #[test]
    fn dfs_for_three_by_five_by_five() {
        let means = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]; 3];
        let t = table_from(&means, 5, |i, j, k| ((i * 7 + j * 3 + k * 11) % 5) as f64 * 0.1);
        let r = anova2(&t).unwrap();
        assert_eq!((r.a.df, r.b.df, r.ab.df, r.df_error), (2, 4, 8, 60));
    }

    #[test]
    fn constant_table_is_degenerate() {
        let t = table_from(&vec![vec![7.0; 3]; 2], 3, |_, _, _| 0.0);
        let r = anova2(&t).unwrap();
        assert_eq!(r.a.ss, 0.0);
        assert_eq!(r.ss_error, 0.0);
        assert_eq!(r.a.f, 0.0);
        assert_eq!(r.ab.f, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn unbalanced_rejected() {
        let mut t = table_from(&vec![vec![1.0; 2]; 2], 3, |_, _, k| k as f64);
        t.cells[1][0].pop();
        assert!(matches!(anova2(&t), Err(StatsError::UnbalancedDesign { a: 1, b: 0, got: 2, expected: 3 })));
        let single = FactorialTable::new("a", "b", vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![vec![1.0]; 2]; 2]);
        assert!(matches!(single, Err(StatsError::InsufficientReplicates(1))));
    }

    #[test]
    fn equal_means_share_one_letter() {
        let t = table_from(&vec![vec![5.0, 9.0, 1.0]; 3], 4, |_, _, k| if k % 2 == 0 { 0.5 } else { -0.5 });
        let r = anova2(&t).unwrap();
        // factor A has identical marginal means
        let ph = posthoc(&t, &AnovaResult { a: EffectRow { p: 0.0, ..r.a.clone() }, ..r.clone() }, Factor::A, PosthocMethod::FisherLsd, 0.05)
            .unwrap();
        assert!(ph.comparisons.iter().all(|c| !c.significant));
        assert!(ph.groups.iter().all(|g| g.letters == "a"));
    }

    #[test]
    fn letters_for_0_0_10() {
        // B levels with means 0, 0, 10 and tiny noise
        let t = table_from(&vec![vec![0.0, 0.0, 10.0]; 2], 4, |i, j, k| ((i + 2 * j + k) % 3) as f64 * 1e-3);
        let r = anova2(&t).unwrap();
        let ph = posthoc(&t, &r, Factor::B, PosthocMethod::FisherLsd, 0.05).unwrap();
        let letters: Vec<&str> = ph.groups.iter().map(|g| g.letters.as_str()).collect();
        assert_eq!(letters, ["a", "a", "b"]);
        let ph = posthoc(&t, &r, Factor::B, PosthocMethod::TukeyHsd, 0.05).unwrap();
        let letters: Vec<&str> = ph.groups.iter().map(|g| g.letters.as_str()).collect();
        assert_eq!(letters, ["a", "a", "b"]);
    }

    #[test]
    fn non_significant_main_effect_skips() {
        let t = table_from(&vec![vec![1.0, 1.0]; 2], 3, |i, j, k| ((i + j + k) % 2) as f64);
        let r = anova2(&t).unwrap();
        let ph = posthoc(&t, &r, Factor::A, PosthocMethod::FisherLsd, 0.05).unwrap();
        assert!(ph.skipped);
        assert!(ph.comparisons.is_empty());
    }

    #[test]
    fn overlapping_letter_display_is_consistent() {
        // chain: 0~1, 1~2, but 0 and 2 differ
        let means = [1.0, 2.0, 3.0, 10.0];
        let mut sig = vec![vec![true; 4]; 4];
        for (i, j) in [(0, 1), (1, 2)] {
            sig[i][j] = false;
            sig[j][i] = false;
        }
        let l = letter_groups(&means, &sig);
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let share = l[i].chars().any(|c| l[j].contains(c));
                assert_eq!(share, !sig[i][j], "{l:?} {i} {j}");
            }
        }
        assert_eq!(l, ["a", "ab", "b", "c"]);
    }

    #[test]
    fn csv_round_trip() {
        let t = table_from(&[vec![1.0, 2.0], vec![3.0, 4.5]], 2, |_, _, k| k as f64 * 0.25);
        let text = t.write_csv("pressure_pa");
        let back = FactorialTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn factor_parse() {
        assert!(matches!("C".parse::<Factor>(), Err(StatsError::UnknownFactor(_))));
    }
}
