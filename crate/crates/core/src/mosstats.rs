//! Opinion-score analysis: Friedman test, Wilcoxon signed-rank test,
//! Bonferroni correction and per-system summaries.

use std::fmt::Write as _;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Largest sample (after dropping zero differences) for exact enumeration.
pub const EXACT_MAX_N: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty rating table")]
    Empty,
    #[error("ratings line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("incomplete blocks: {0}")]
    Incomplete(String),
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("samples differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("degenerate sample: all differences are zero")]
    Degenerate,
    #[error("exact mode supports at most {EXACT_MAX_N} non-zero differences, got {0}")]
    ExactTooLarge(usize),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Scores indexed by block (a rater and item pair) and system.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    blocks: Vec<(String, String)>,
    systems: Vec<String>,
    scores: Vec<Vec<Option<f64>>>,
}

impl RatingTable {
    pub fn new(systems: Vec<String>) -> Self {
        Self { blocks: Vec::new(), systems, scores: Vec::new() }
    }

    /// Records one rating; blocks and systems are created on first sight.
    pub fn insert(&mut self, rater: &str, item: &str, system: &str, score: f64) {
        let s = match self.systems.iter().position(|x| x == system) {
            Some(s) => s,
            None => {
                self.systems.push(system.to_string());
                self.scores.iter_mut().for_each(|row| row.push(None));
                self.systems.len() - 1
            }
        };
        let b = match self.blocks.iter().position(|(r, i)| r == rater && i == item) {
            Some(b) => b,
            None => {
                self.blocks.push((rater.to_string(), item.to_string()));
                self.scores.push(vec![None; self.systems.len()]);
                self.blocks.len() - 1
            }
        };
        self.scores[b][s] = Some(score);
    }

    /// Parses `rater,item,system,score` rows (header required).
    pub fn from_csv(text: &str) -> Result<Self, StatsError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == "rater,item,system,score" => {}
            Some((i, h)) => return Err(StatsError::Parse { line: i + 1, message: format!("expected header rater,item,system,score, got {h:?}") }),
            None => return Err(StatsError::Empty),
        }
        let mut table = Self::new(Vec::new());
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let [rater, item, system, score] = f[..] else {
                return Err(StatsError::Parse { line: i + 1, message: format!("expected 4 fields, got {}", f.len()) });
            };
            let score: f64 = score
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| StatsError::Parse { line: i + 1, message: format!("bad score {score:?}") })?;
            table.insert(rater, item, system, score);
        }
        if table.blocks.is_empty() {
            return Err(StatsError::Empty);
        }
        Ok(table)
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Every score of `system`, in block order, skipping missing cells.
    pub fn system_scores(&self, system: &str) -> Vec<f64> {
        let Some(s) = self.systems.iter().position(|x| x == system) else { return Vec::new() };
        self.scores.iter().filter_map(|row| row[s]).collect()
    }

    /// The complete `blocks x systems` matrix, or an error naming each hole.
    pub fn complete_blocks(&self) -> Result<Vec<Vec<f64>>, StatsError> {
        let mut missing = Vec::new();
        for (row, (rater, item)) in self.scores.iter().zip(&self.blocks) {
            for (v, sys) in row.iter().zip(&self.systems) {
                if v.is_none() {
                    missing.push(format!("rater {rater} item {item} lacks {sys}"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(StatsError::Incomplete(missing.join("; ")));
        }
        Ok(self.scores.iter().map(|r| r.iter().map(|v| v.expect("checked")).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom of the reference chi-square distribution, when there is one.
    pub df: Option<usize>,
    pub p_value: f64,
    pub method: String,
    pub alpha_corrected: Option<f64>,
    /// Sample size the statistic was computed on.
    pub n: usize,
    /// Pairs dropped for having a zero difference.
    pub zeros_dropped: usize,
}

/// Mid-ranks (1-based) of `v`; tied values share their average rank.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the groups of tied values in `v`.
fn tie_groups(v: &[f64]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let j = s[i..].iter().position(|&x| x != s[i]).map_or(s.len(), |p| i + p);
        out.push(j - i);
        i = j;
    }
    out
}

/// Friedman rank test over complete blocks, with tie correction.
pub fn friedman(table: &RatingTable) -> Result<TestResult, StatsError> {
    let m = table.complete_blocks()?;
    let (n, k) = (m.len(), table.systems.len());
    if k < 2 {
        return Err(StatsError::TooSmall { what: "systems", needed: 2, got: k });
    }
    if n < 2 {
        return Err(StatsError::TooSmall { what: "blocks", needed: 2, got: n });
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in &m {
        for (s, r) in rank_sums.iter_mut().zip(mid_ranks(row)) {
            *s += r;
        }
        tie_term += tie_groups(row).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    let statistic = if correction <= 1e-12 { 0.0 } else { (raw / correction).max(0.0) };
    let df = k - 1;
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("df >= 1").sf(statistic).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic,
        df: Some(df),
        p_value,
        method: "friedman (mid-ranks, tie-corrected)".into(),
        alpha_corrected: None,
        n,
        zeros_dropped: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMode {
    Exact,
    Approx,
    /// Exact when at most [`EXACT_MAX_N`] differences remain, otherwise approximate.
    Auto,
}

/// Two-sided Wilcoxon signed-rank test of paired samples. The statistic is the
/// positive-rank sum `W+`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], mode: WilcoxonMode) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let zeros_dropped = x.len() - d.len();
    let n = d.len();
    if n == 0 {
        return Err(StatsError::Degenerate);
    }
    let ranks = mid_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let exact = match mode {
        WilcoxonMode::Exact if n > EXACT_MAX_N => return Err(StatsError::ExactTooLarge(n)),
        WilcoxonMode::Exact => true,
        WilcoxonMode::Approx => false,
        WilcoxonMode::Auto => n <= EXACT_MAX_N,
    };
    let (p_value, method) = if exact {
        (exact_p(&ranks, w_plus), "wilcoxon exact (sign enumeration, mid-ranks)")
    } else {
        (approx_p(&ranks, w_plus), "wilcoxon normal approximation (tie and continuity corrected)")
    };
    Ok(TestResult { statistic: w_plus, df: None, p_value, method: method.into(), alpha_corrected: None, n, zeros_dropped })
}

/// Null distribution of `W+` by dynamic programming over doubled ranks
/// (mid-ranks are multiples of one half).
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let obs = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower = counts[..=obs].iter().sum::<u64>() as f64 / all;
    let upper = counts[obs..].iter().sum::<u64>() as f64 / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn approx_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = tie_groups(ranks).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).clamp(0.0, 1.0)
}

pub fn bonferroni(alpha: f64, m: usize) -> Result<f64, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    if m == 0 {
        return Err(StatsError::Argument("m must be at least 1".into()));
    }
    Ok(alpha / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosSummary {
    pub system: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `p * (n - 1)` (the inclusive method).
pub fn quantile_inclusive(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mos_summary(table: &RatingTable) -> Result<Vec<MosSummary>, StatsError> {
    if table.n_blocks() == 0 {
        return Err(StatsError::Empty);
    }
    Ok(table
        .systems
        .iter()
        .filter_map(|sys| {
            let mut v = table.system_scores(sys);
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(MosSummary {
                system: sys.clone(),
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v[0],
                q1: quantile_inclusive(&v, 0.25),
                median: quantile_inclusive(&v, 0.5),
                q3: quantile_inclusive(&v, 0.75),
                max: v[v.len() - 1],
            })
        })
        .collect())
}

pub fn mos_csv(summary: &[MosSummary], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("# quartiles: inclusive method, linear interpolation at p*(n-1)\n");
    out.push_str("system,n,mean,min,q1,median,q3,max\n");
    for s in summary {
        let _ = writeln!(out, "{},{},{},{},{},{},{},{}", s.system, s.n, s.mean, s.min, s.q1, s.median, s.q3, s.max);
    }
    out
}

/// One labelled test outcome for export.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedResult {
    pub test: String,
    pub comparison: String,
    pub result: TestResult,
}

/// Friedman over all systems, then every pairwise Wilcoxon test judged at
/// `alpha / m`.
pub fn analyze(table: &RatingTable, alpha: f64, m: usize) -> Result<Vec<NamedResult>, StatsError> {
    let threshold = bonferroni(alpha, m)?;
    let blocks = table.complete_blocks()?;
    let mut out = vec![NamedResult { test: "friedman".into(), comparison: table.systems.join(" vs "), result: friedman(table)? }];
    for i in 0..table.systems.len() {
        for j in i + 1..table.systems.len() {
            let x: Vec<f64> = blocks.iter().map(|r| r[i]).collect();
            let y: Vec<f64> = blocks.iter().map(|r| r[j]).collect();
            let comparison = format!("{} vs {}", table.systems[i], table.systems[j]);
            let result = match wilcoxon_signed_rank(&x, &y, WilcoxonMode::Auto) {
                Ok(r) => r,
                Err(StatsError::Degenerate) => TestResult {
                    statistic: 0.0,
                    df: None,
                    p_value: 1.0,
                    method: "wilcoxon: all differences zero".into(),
                    alpha_corrected: None,
                    n: 0,
                    zeros_dropped: x.len(),
                },
                Err(e) => return Err(e),
            };
            out.push(NamedResult { test: "wilcoxon".into(), comparison, result: TestResult { alpha_corrected: Some(threshold), ..result } });
        }
    }
    Ok(out)
}

pub fn results_csv(results: &[NamedResult], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("test,comparison,statistic,df,p_value,alpha_corrected,significant,n,zeros_dropped,method\n");
    for r in results {
        let t = &r.result;
        let alpha = t.alpha_corrected.map_or(String::new(), |a| format!("{a:.4}"));
        let significant = t.alpha_corrected.map_or(String::new(), |a| (t.p_value < a).to_string());
        let df = t.df.map_or(String::new(), |d| d.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.test, r.comparison, t.statistic, df, t.p_value, alpha, significant, t.n, t.zeros_dropped, t.method
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-sided p by listing all 2^n sign assignments of the ranks.
    fn brute_force_p(d: &[f64]) -> f64 {
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let ranks = mid_ranks(&abs);
        let obs: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let (mut lo, mut hi) = (0u64, 0u64);
        for mask in 0..(1u64 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= obs + 1e-9 {
                lo += 1;
            }
            if w >= obs - 1e-9 {
                hi += 1;
            }
        }
        let total = (1u64 << n) as f64;
        (2.0 * (lo as f64 / total).min(hi as f64 / total)).min(1.0)
    }

    fn table(rows: &[[f64; 3]]) -> RatingTable {
        let mut t = RatingTable::new(vec![]);
        for (b, row) in rows.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                t.insert(&format!("r{b}"), "i", ["a", "b", "c"][s], *v);
            }
        }
        t
    }

    #[test]
    fn wilcoxon_all_positive() {
        let r = wilcoxon_signed_rank(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert!((r.p_value - 2.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_degenerate_and_zero_drop() {
        assert_eq!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], WilcoxonMode::Auto), Err(StatsError::Degenerate));
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 5.0], &[1.0, 1.0, 1.0], WilcoxonMode::Exact).unwrap();
        assert_eq!((r.n, r.zeros_dropped), (2, 1));
        assert!(wilcoxon_signed_rank(&[0.0; 16], &[1.0; 16], WilcoxonMode::Exact).is_err());
    }

    #[test]
    fn wilcoxon_modes_agree_at_fifteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..10.0)).collect();
            let y: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..10.0) + 1.0).collect();
            let e = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).unwrap().p_value;
            let a = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Approx).unwrap().p_value;
            assert!((e - a).abs() < 0.02, "{e} vs {a}");
        }
    }

    #[test]
    fn exact_matches_enumeration_for_every_small_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=10 {
            for _ in 0..30 {
                // Integer scores make ties common.
                let d: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4..=4i32))).filter(|v| *v != 0.0).collect();
                if d.is_empty() {
                    continue;
                }
                let p = wilcoxon_signed_rank(&d, &vec![0.0; d.len()], WilcoxonMode::Exact).unwrap().p_value;
                assert!((p - brute_force_p(&d)).abs() < 1e-12, "{d:?}");
            }
        }
    }

    #[test]
    fn friedman_identical_systems() {
        let r = friedman(&table(&[[3.0; 3], [1.0; 3], [4.0; 3]])).unwrap();
        assert_eq!((r.statistic, r.p_value, r.df), (0.0, 1.0, Some(2)));
    }

    #[test]
    fn friedman_matches_rank_sum_oracle() {
        let rows = [[1.0, 2.0, 3.0], [2.0, 3.0, 5.0], [1.0, 4.0, 6.0], [2.0, 2.5, 3.5]];
        let r = friedman(&table(&rows)).unwrap();
        // System c ranks 3 in every block, b 2, a 1: R = (4, 8, 12).
        let (n, k) = (4.0, 3.0);
        let expected = 12.0 / (n * k * (k + 1.0)) * (16.0 + 64.0 + 144.0) - 3.0 * n * (k + 1.0);
        assert!((r.statistic - expected).abs() < 1e-12);
        assert_eq!(r.statistic, 8.0);
        assert!((r.p_value - (-4.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn friedman_tie_correction() {
        let rows = [[1.0, 1.0, 2.0], [2.0, 3.0, 3.0], [1.0, 2.0, 3.0]];
        let r = friedman(&table(&rows)).unwrap();
        // Ranks: (1.5,1.5,3), (1,2.5,2.5), (1,2,3); R = (3.5, 6, 8.5).
        let raw = 12.0 / 36.0 * (3.5f64 * 3.5 + 36.0 + 8.5 * 8.5) - 36.0;
        let c = 1.0 - (6.0 + 6.0) / (3.0 * 3.0 * 8.0);
        assert!((r.statistic - raw / c).abs() < 1e-12);
    }

    #[test]
    fn friedman_needs_complete_blocks() {
        let mut t = table(&[[1.0, 2.0, 3.0], [2.0, 3.0, 1.0]]);
        t.insert("r9", "x", "a", 1.0);
        let err = friedman(&t).unwrap_err();
        assert!(matches!(&err, StatsError::Incomplete(m) if m.contains("rater r9 item x lacks b")), "{err}");
    }

    #[test]
    fn bonferroni_values() {
        assert_eq!(format!("{:.4}", bonferroni(0.05, 3).unwrap()), "0.0167");
        assert_eq!(bonferroni(0.05, 1).unwrap(), 0.05);
        assert!((bonferroni(0.05, 10).unwrap() - 0.005).abs() < 1e-15);
        assert!(bonferroni(0.05, 0).is_err());
        assert!(bonferroni(1.5, 2).is_err());
    }

    #[test]
    fn summaries() {
        let mut t = RatingTable::new(vec![]);
        for (i, v) in [1.0, 2.0, 3.0, 4.0, 5.0].iter().enumerate() {
            t.insert(&format!("r{i}"), "i", "x", *v);
            t.insert(&format!("r{i}"), "i", "k", 4.0);
        }
        let s = mos_summary(&t).unwrap();
        assert_eq!((s[0].mean, s[0].median, s[0].q1, s[0].q3), (3.0, 3.0, 2.0, 4.0));
        assert_eq!((s[1].mean, s[1].median, s[1].q3 - s[1].q1), (4.0, 4.0, 0.0));
        assert!(mos_csv(&s, &[]).contains("inclusive"));
    }

    #[test]
    fn csv_parsing() {
        let t = RatingTable::from_csv("rater,item,system,score\nr1,i1,a,3\nr1,i1,b,4\n").unwrap();
        assert_eq!(t.systems(), &["a".to_string(), "b".to_string()]);
        assert_eq!(RatingTable::from_csv(""), Err(StatsError::Empty));
        assert_eq!(RatingTable::from_csv("rater,item,system,score\n"), Err(StatsError::Empty));
        assert!(matches!(RatingTable::from_csv("rater,item,system,score\nr1,i1,a,x\n"), Err(StatsError::Parse { line: 2, .. })));
    }

    #[test]
    fn dominant_system_is_significant() {
        let mut t = RatingTable::new(vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for r in 0..30 {
            t.insert(&format!("r{r}"), "i", "real", 5.0);
            t.insert(&format!("r{r}"), "i", "render", f64::from(rng.random_range(1..=2)));
            t.insert(&format!("r{r}"), "i", "guitarflow", f64::from(rng.random_range(2..=3)));
        }
        let res = analyze(&t, 0.05, 3).unwrap();
        assert!(res[0].result.p_value < 0.001);
        for r in &res[1..] {
            if r.comparison.contains("real") {
                assert!(r.result.p_value < 0.05 / 3.0, "{}", r.comparison);
            }
        }
        let csv = results_csv(&res, &[]);
        assert!(csv.contains(",0.0167,true,"));
    }

    proptest! {
        #[test]
        fn friedman_rank_invariance(vals in prop::collection::vec(0.0f64..10.0, 12)) {
            let rows: Vec<[f64; 3]> = vals.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let mapped: Vec<[f64; 3]> = rows.iter().map(|r| r.map(|v| (v * 0.3).exp() + 2.0)).collect();
            let a = friedman(&table(&rows)).unwrap();
            let b = friedman(&table(&mapped)).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn summary_ignores_rater_order(vals in prop::collection::vec(1.0f64..5.0, 2..20)) {
            let mut fwd = RatingTable::new(vec![]);
            let mut rev = RatingTable::new(vec![]);
            for (i, v) in vals.iter().enumerate() {
                fwd.insert(&format!("r{i}"), "i", "s", *v);
            }
            for (i, v) in vals.iter().enumerate().rev() {
                rev.insert(&format!("r{i}"), "i", "s", *v);
            }
            prop_assert_eq!(mos_summary(&fwd).unwrap(), mos_summary(&rev).unwrap());
        }
    }
}
