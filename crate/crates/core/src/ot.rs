//! Char-to-token optimal transport.
//!
//! Rows are characters, columns are candidate tokens. Moving a unit of
//! character mass into token `j` costs `ln(len(j))` when the character occurs
//! in `j` and is forbidden otherwise. The entropic problem
//! `min <P, D> - γ H(P)` is solved by Sinkhorn scaling of the kernel
//! `K = exp(-D / γ)`. Only admissible (finite) cells are stored, so the plan
//! is exactly zero wherever the distance is infinite.

use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::bpe::CandidateList;
use crate::corpus::CharTable;
use crate::error::{Axis, Result, VoltError};
use crate::vocab::{Provenance, Strategy, Vocabulary};

/// Fraction of a token's own frequency it must receive to survive extraction.
pub const DEFAULT_MASS_THRESHOLD: f64 = 1e-3;

/// Above this exponent magnitude the kernel is evaluated in log space.
const LOG_DOMAIN_EXPONENT: f64 = 300.0;

/// Scalings beyond this magnitude trigger a restart in log space.
const SCALING_LIMIT: f64 = 1e250;

/// Sparse char × token distances; absent cells are +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    chars: Vec<char>,
    tokens: Vec<String>,
    /// Per column: (row, distance), rows ascending.
    columns: Vec<Vec<(usize, f64)>>,
    /// Per row: (column, distance), columns ascending.
    rows: Vec<Vec<(usize, f64)>>,
}

impl DistanceMatrix {
    /// Builds distances for `tokens` over the character rows `chars`.
    pub fn new(chars: Vec<char>, tokens: Vec<String>) -> Result<Self> {
        let row_of: std::collections::HashMap<char, usize> =
            chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if row_of.len() != chars.len() {
            return Err(VoltError::InconsistentInputs("duplicate character row".into()));
        }
        let mut columns = Vec::with_capacity(tokens.len());
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); chars.len()];
        for (j, tok) in tokens.iter().enumerate() {
            let len = tok.chars().count();
            if len == 0 {
                return Err(VoltError::InconsistentInputs("empty token column".into()));
            }
            let d = (len as f64).ln();
            let mut col: Vec<(usize, f64)> = Vec::new();
            for ch in tok.chars() {
                let i = *row_of.get(&ch).ok_or_else(|| {
                    VoltError::InconsistentInputs(format!("token {tok:?} contains unknown character {ch:?}"))
                })?;
                if !col.iter().any(|&(r, _)| r == i) {
                    col.push((i, d));
                }
            }
            col.sort_by_key(|&(r, _)| r);
            for &(i, d) in &col {
                rows[i].push((j, d));
            }
            columns.push(col);
        }
        Ok(DistanceMatrix {
            chars,
            tokens,
            columns,
            rows,
        })
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// D(i, j), +∞ when char `i` does not occur in token `j`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.columns[j]
            .iter()
            .find(|&&(r, _)| r == i)
            .map_or(f64::INFINITY, |&(_, d)| d)
    }

    /// Finite cells of column `j` as (row, distance).
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    /// Finite cells of row `i` as (column, distance).
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn max_finite(&self) -> f64 {
        self.columns
            .iter()
            .flatten()
            .map(|&(_, d)| d)
            .fold(0.0, f64::max)
    }
}

/// Distances from the characters of `chars` to every candidate.
pub fn build_distance_matrix(chars: &CharTable, candidates: &CandidateList) -> Result<DistanceMatrix> {
    DistanceMatrix::new(
        chars.chars().collect(),
        candidates.tokens().iter().map(|c| c.token.clone()).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogDomain {
    /// Log space only when a kernel entry would underflow or scalings blow up.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub gamma: f64,
    pub max_iters: usize,
    /// Maximum marginal violation accepted as converged.
    pub tolerance: f64,
    /// Extra slack allowed on the token marginal.
    pub epsilon_relax: f64,
    /// KL weight for a soft token marginal; `None` keeps it hard.
    pub unbalanced_tau: Option<f64>,
    pub log_domain: LogDomain,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            gamma: 0.1,
            max_iters: 5000,
            tolerance: 1e-8,
            epsilon_relax: 1e-3,
            unbalanced_tau: None,
            log_domain: LogDomain::Auto,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VoltError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad("tolerance must be positive");
        }
        if self.epsilon_relax.is_nan() || self.epsilon_relax < 0.0 {
            return bad("epsilon must be non-negative");
        }
        if let Some(tau) = self.unbalanced_tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad("unbalanced tau must be positive");
            }
        }
        Ok(())
    }
}

/// Sparse transport plan sharing the sparsity pattern of its distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    n_chars: usize,
    n_tokens: usize,
    /// Per column: (row, mass).
    columns: Vec<Vec<(usize, f64)>>,
    pub converged: bool,
    pub iterations_used: usize,
    /// max(char_violation, token_violation).
    pub marginal_violation: f64,
    pub char_violation: f64,
    pub token_violation: f64,
    pub log_domain: bool,
}

impl TransportPlan {
    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.columns[j]
            .iter()
            .find(|&&(r, _)| r == i)
            .map_or(0.0, |&(_, m)| m)
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    /// Mass received by each token.
    pub fn token_mass(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.iter().map(|&(_, m)| m).sum()).collect()
    }

    /// Mass shipped from each character.
    pub fn char_mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_chars];
        for col in &self.columns {
            for &(i, m) in col {
                out[i] += m;
            }
        }
        out
    }

    /// <P, D>.
    pub fn cost(&self, dist: &DistanceMatrix) -> f64 {
        self.columns
            .iter()
            .zip(&dist.columns)
            .flat_map(|(p, d)| p.iter().zip(d).map(|(&(_, m), &(_, c))| m * c))
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_tokens]; self.n_chars];
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, m) in col {
                out[i][j] = m;
            }
        }
        out
    }

    /// Dense TSV: header row of token labels, one row per character.
    pub fn to_tsv(&self, dist: &DistanceMatrix) -> String {
        let dense = self.to_dense();
        let mut out = String::new();
        for t in dist.tokens() {
            out.push('\t');
            out.push_str(t);
        }
        out.push('\n');
        for (ch, row) in dist.chars().iter().zip(&dense) {
            out.push(*ch);
            for m in row {
                let _ = write!(out, "\t{m:e}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_distribution(name: &str, dist: &[f64], expected_len: usize) -> Result<()> {
    if dist.len() != expected_len {
        return Err(VoltError::InconsistentInputs(format!(
            "{name} distribution has {} entries, expected {expected_len}",
            dist.len()
        )));
    }
    if let Some(x) = dist.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(VoltError::InconsistentInputs(format!("{name} distribution has entry {x}")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(VoltError::InconsistentInputs(format!("{name} distribution sums to {sum}")));
    }
    Ok(())
}

/// Entropic OT between `char_dist` (rows) and `token_dist` (columns).
///
/// Each iteration rescales the token side and then the char side, so the
/// returned plan meets the char marginal up to rounding and the token
/// marginal up to the reported violation. Running out of iterations is not
/// an error; the plan comes back with `converged = false`.
pub fn sinkhorn(
    dist: &DistanceMatrix,
    char_dist: &[f64],
    token_dist: &[f64],
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    check_distribution("char", char_dist, dist.n_chars())?;
    check_distribution("token", token_dist, dist.n_tokens())?;
    for (i, &a) in char_dist.iter().enumerate() {
        if a > 0.0 && dist.row(i).is_empty() {
            return Err(VoltError::InfeasibleTransport {
                axis: Axis::Char,
                index: i,
                label: dist.chars[i].to_string(),
            });
        }
    }
    for (j, &b) in token_dist.iter().enumerate() {
        if b > 0.0 && dist.column(j).iter().all(|&(i, _)| char_dist[i] == 0.0) {
            return Err(VoltError::InfeasibleTransport {
                axis: Axis::Token,
                index: j,
                label: dist.tokens[j].clone(),
            });
        }
    }

    let use_log = match config.log_domain {
        LogDomain::Always => true,
        LogDomain::Never => false,
        LogDomain::Auto => dist.max_finite() / config.gamma > LOG_DOMAIN_EXPONENT,
    };
    let solver = Solver {
        dist,
        a: char_dist,
        b: token_dist,
        config,
    };
    if !use_log {
        match solver.run_scaling() {
            Some(plan) => return Ok(plan),
            None if config.log_domain == LogDomain::Never => {
                debug!("sinkhorn: scalings left the representable range; continuing in log space anyway");
            }
            None => debug!("sinkhorn: scalings left the representable range; restarting in log space"),
        }
    }
    Ok(solver.run_log())
}

struct Solver<'a> {
    dist: &'a DistanceMatrix,
    a: &'a [f64],
    b: &'a [f64],
    config: &'a SinkhornConfig,
}

impl Solver<'_> {
    fn token_exponent(&self) -> Option<f64> {
        self.config
            .unbalanced_tau
            .map(|tau| tau / (tau + self.config.gamma))
    }

    /// Plain scaling iterations; `None` when scalings under- or overflow.
    fn run_scaling(&self) -> Option<TransportPlan> {
        let gamma = self.config.gamma;
        let kernel: Vec<Vec<(usize, f64)>> = self
            .dist
            .columns
            .iter()
            .map(|c| c.iter().map(|&(i, d)| (i, (-d / gamma).exp())).collect())
            .collect();
        let kernel_rows: Vec<Vec<(usize, f64)>> = self
            .dist
            .rows
            .iter()
            .map(|r| r.iter().map(|&(j, d)| (j, (-d / gamma).exp())).collect())
            .collect();
        let mut u = vec![1.0; self.dist.n_chars()];
        let mut v = vec![1.0; self.dist.n_tokens()];
        let mut v_prev = v.clone();
        let power = self.token_exponent();
        let mut ktu = vec![0.0; v.len()];

        for it in 1..=self.config.max_iters {
            v_prev.copy_from_slice(&v);
            for (j, col) in kernel.iter().enumerate() {
                if self.b[j] == 0.0 {
                    v[j] = 0.0;
                    continue;
                }
                let s: f64 = col.iter().map(|&(i, k)| k * u[i]).sum();
                if !s.is_finite() || s <= 0.0 {
                    return None;
                }
                v[j] = match power {
                    None => self.b[j] / s,
                    Some(p) => (self.b[j] / s).powf(p),
                };
                if !(v[j].is_finite() && v[j] < SCALING_LIMIT) {
                    return None;
                }
            }
            for (i, row) in kernel_rows.iter().enumerate() {
                if self.a[i] == 0.0 {
                    u[i] = 0.0;
                    continue;
                }
                let s: f64 = row.iter().map(|&(j, k)| k * v[j]).sum();
                if !s.is_finite() || s <= 0.0 {
                    return None;
                }
                u[i] = self.a[i] / s;
                if !(u[i].is_finite() && u[i] < SCALING_LIMIT) {
                    return None;
                }
            }
            for (j, col) in kernel.iter().enumerate() {
                ktu[j] = col.iter().map(|&(i, k)| k * u[i]).sum();
            }
            let token_violation = (0..v.len())
                .map(|j| (v[j] * ktu[j] - self.b[j]).abs())
                .fold(0.0, f64::max);
            let done = match power {
                None => token_violation <= self.config.tolerance.max(self.config.epsilon_relax),
                Some(_) => max_relative_change(&v_prev, &v) <= self.config.tolerance,
            };
            if done || it == self.config.max_iters {
                let plan_cols: Vec<Vec<(usize, f64)>> = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, col)| col.iter().map(|&(i, k)| (i, u[i] * k * v[j])).collect())
                    .collect();
                return Some(self.finish(plan_cols, it, done));
            }
        }
        unreachable!("max_iters is validated positive")
    }

    fn run_log(&self) -> TransportPlan {
        let gamma = self.config.gamma;
        let log_k: Vec<Vec<(usize, f64)>> = self
            .dist
            .columns
            .iter()
            .map(|c| c.iter().map(|&(i, d)| (i, -d / gamma)).collect())
            .collect();
        let log_k_rows: Vec<Vec<(usize, f64)>> = self
            .dist
            .rows
            .iter()
            .map(|r| r.iter().map(|&(j, d)| (j, -d / gamma)).collect())
            .collect();
        let log_a: Vec<f64> = self.a.iter().map(|&x| x.ln()).collect();
        let log_b: Vec<f64> = self.b.iter().map(|&x| x.ln()).collect();
        let mut f = vec![0.0; self.dist.n_chars()];
        let mut g = vec![0.0; self.dist.n_tokens()];
        let mut g_prev = g.clone();
        let power = self.token_exponent();

        for it in 1..=self.config.max_iters {
            g_prev.copy_from_slice(&g);
            for (j, col) in log_k.iter().enumerate() {
                g[j] = if self.b[j] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let lse = log_sum_exp(col.iter().map(|&(i, lk)| lk + f[i]));
                    match power {
                        None => log_b[j] - lse,
                        Some(p) => p * (log_b[j] - lse),
                    }
                };
            }
            for (i, row) in log_k_rows.iter().enumerate() {
                f[i] = if self.a[i] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    log_a[i] - log_sum_exp(row.iter().map(|&(j, lk)| lk + g[j]))
                };
            }
            let token_violation = log_k
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let m: f64 = col.iter().map(|&(i, lk)| (f[i] + lk + g[j]).exp()).sum();
                    (m - self.b[j]).abs()
                })
                .fold(0.0, f64::max);
            let done = match power {
                None => token_violation <= self.config.tolerance.max(self.config.epsilon_relax),
                Some(_) => max_abs_change(&g_prev, &g) <= self.config.tolerance,
            };
            if done || it == self.config.max_iters {
                let plan_cols: Vec<Vec<(usize, f64)>> = log_k
                    .iter()
                    .enumerate()
                    .map(|(j, col)| col.iter().map(|&(i, lk)| (i, (f[i] + lk + g[j]).exp())).collect())
                    .collect();
                let mut plan = self.finish(plan_cols, it, done);
                plan.log_domain = true;
                return plan;
            }
        }
        unreachable!("max_iters is validated positive")
    }

    fn finish(&self, columns: Vec<Vec<(usize, f64)>>, iterations: usize, fixed_point: bool) -> TransportPlan {
        let mut plan = TransportPlan {
            n_chars: self.dist.n_chars(),
            n_tokens: self.dist.n_tokens(),
            columns,
            converged: false,
            iterations_used: iterations,
            marginal_violation: 0.0,
            char_violation: 0.0,
            token_violation: 0.0,
            log_domain: false,
        };
        plan.char_violation = max_abs_diff(&plan.char_mass(), self.a);
        plan.token_violation = max_abs_diff(&plan.token_mass(), self.b);
        plan.marginal_violation = plan.char_violation.max(plan.token_violation);
        let token_band = self.config.tolerance.max(self.config.epsilon_relax);
        plan.converged = fixed_point
            && plan.char_violation <= self.config.tolerance
            && (self.config.unbalanced_tau.is_some() || plan.token_violation <= token_band);
        plan
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs_change(prev: &[f64], next: &[f64]) -> f64 {
    prev.iter()
        .zip(next)
        .filter(|(p, n)| p.is_finite() && n.is_finite())
        .map(|(p, n)| (p - n).abs())
        .fold(0.0, f64::max)
}

fn max_relative_change(prev: &[f64], next: &[f64]) -> f64 {
    prev.iter()
        .zip(next)
        .filter(|(_, n)| **n > 0.0)
        .map(|(p, n)| ((p - n) / n).abs())
        .fold(0.0, f64::max)
}

/// Vocabulary read off a transport plan.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub vocabulary: Vocabulary,
    /// No multi-character candidate survived; only characters remain.
    pub all_filtered: bool,
}

/// Keeps each multi-character candidate whose received mass is at least
/// `threshold × token_dist(j)`; single characters are always kept.
///
/// `dist` labels the plan's columns. Candidates absent from the plan (zero
/// corpus frequency) count as having received no mass. The vocabulary keeps
/// the candidate order.
pub fn extract_vocabulary(
    plan: &TransportPlan,
    dist: &DistanceMatrix,
    token_dist: &[f64],
    candidates: &CandidateList,
    threshold: f64,
) -> Result<Extraction> {
    if plan.n_tokens() != dist.n_tokens() || token_dist.len() != dist.n_tokens() {
        return Err(VoltError::InconsistentInputs(
            "plan, distance matrix and token distribution disagree in size".into(),
        ));
    }
    let column_of: std::collections::HashMap<&str, usize> = dist
        .tokens()
        .iter()
        .enumerate()
        .map(|(j, t)| (t.as_str(), j))
        .collect();
    let mass = plan.token_mass();
    let mut tokens = Vec::new();
    let mut freqs = Vec::new();
    let mut kept_multi = 0usize;
    let mut had_multi = false;
    for c in candidates.tokens() {
        let keep = if c.is_char() {
            true
        } else {
            had_multi = true;
            match column_of.get(c.token.as_str()) {
                Some(&j) => mass[j] > 0.0 && mass[j] >= threshold * token_dist[j],
                None => false,
            }
        };
        if keep {
            if !c.is_char() {
                kept_multi += 1;
            }
            tokens.push(c.token.clone());
            freqs.push(c.count);
        }
    }
    let vocabulary = Vocabulary::from_tokens(tokens)?
        .with_frequencies(freqs)?
        .with_provenance(Provenance {
            strategy: Strategy::Volt,
            ..Provenance::default()
        });
    Ok(Extraction {
        vocabulary,
        all_filtered: had_multi && kept_multi == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::CandidateList;
    use proptest::prelude::*;

    fn dm(chars: &str, tokens: &[&str]) -> DistanceMatrix {
        DistanceMatrix::new(chars.chars().collect(), tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    #[test]
    fn distances_follow_token_length() {
        let d = dm("abc", &["ab", "a", "aab"]);
        assert!((d.entry(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d.entry(1, 0) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(d.entry(2, 0), f64::INFINITY);
        assert_eq!(d.entry(0, 1), 0.0);
        assert_eq!(d.entry(0, 2), 3f64.ln());
        assert_eq!(d.column(2).len(), 2);
    }

    #[test]
    fn unknown_character_is_rejected() {
        let err = DistanceMatrix::new(vec!['a'], vec!["ab".into()]).unwrap_err();
        assert!(matches!(err, VoltError::InconsistentInputs(_)));
    }

    #[test]
    fn single_cell_plan() {
        let d = dm("a", &["a"]);
        let p = sinkhorn(&d, &[1.0], &[1.0], &SinkhornConfig::default()).unwrap();
        assert_eq!(p.get(0, 0), 1.0);
        assert!(p.converged);
        assert_eq!(p.iterations_used, 1);
    }

    #[test]
    fn forbidden_cells_force_diagonal() {
        let d = dm("ab", &["a", "b"]);
        let p = sinkhorn(&d, &[0.5, 0.5], &[0.5, 0.5], &SinkhornConfig::default()).unwrap();
        assert_eq!(p.to_dense(), vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        assert!(p.converged);
    }

    #[test]
    fn structural_zero_is_infeasible() {
        let d = dm("ab", &["a"]);
        let err = sinkhorn(&d, &[0.5, 0.5], &[1.0], &SinkhornConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            VoltError::InfeasibleTransport { axis: Axis::Char, index: 1, .. }
        ));
        let d = dm("ab", &["a", "b"]);
        let err = sinkhorn(&d, &[1.0, 0.0], &[0.5, 0.5], &SinkhornConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            VoltError::InfeasibleTransport { axis: Axis::Token, index: 1, .. }
        ));
    }

    #[test]
    fn rejects_unnormalized_marginals() {
        let d = dm("a", &["a"]);
        assert!(sinkhorn(&d, &[0.5], &[1.0], &SinkhornConfig::default()).is_err());
    }

    #[test]
    fn exhaustion_is_reported_not_raised() {
        // column "b" wants 0.9 but only 0.1 of "b" exists
        let d = dm("ab", &["a", "b"]);
        let cfg = SinkhornConfig {
            max_iters: 50,
            ..SinkhornConfig::default()
        };
        let p = sinkhorn(&d, &[0.9, 0.1], &[0.1, 0.9], &cfg).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations_used, 50);
        assert!(p.char_violation < 1e-12);
    }

    #[test]
    fn log_domain_matches_scaling_domain() {
        let d = dm("abc", &["a", "b", "c", "ab", "bc", "abc"]);
        let a = [0.5, 0.3, 0.2];
        let b = [0.2, 0.1, 0.1, 0.3, 0.2, 0.1];
        let base = SinkhornConfig {
            gamma: 0.5,
            tolerance: 1e-12,
            epsilon_relax: 0.0,
            ..SinkhornConfig::default()
        };
        let p1 = sinkhorn(&d, &a, &b, &SinkhornConfig { log_domain: LogDomain::Never, ..base }).unwrap();
        let p2 = sinkhorn(&d, &a, &b, &SinkhornConfig { log_domain: LogDomain::Always, ..base }).unwrap();
        assert!(p1.converged && p2.converged);
        assert!(!p1.log_domain && p2.log_domain);
        for j in 0..d.n_tokens() {
            for i in 0..d.n_chars() {
                assert!((p1.get(i, j) - p2.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tiny_gamma_switches_to_log_domain() {
        let d = dm("abc", &["a", "b", "c", "ab", "bc", "abc"]);
        let cfg = SinkhornConfig {
            gamma: 1e-3,
            ..SinkhornConfig::default()
        };
        let p = sinkhorn(&d, &[0.5, 0.3, 0.2], &[0.2, 0.1, 0.1, 0.3, 0.2, 0.1], &cfg).unwrap();
        assert!(p.log_domain);
        assert!(p.char_violation <= 1e-8);
    }

    #[test]
    fn unbalanced_mode_keeps_char_marginal() {
        let d = dm("ab", &["a", "b", "ab"]);
        let cfg = SinkhornConfig {
            unbalanced_tau: Some(1.0),
            tolerance: 1e-10,
            ..SinkhornConfig::default()
        };
        let p = sinkhorn(&d, &[0.9, 0.1], &[0.1, 0.8, 0.1], &cfg).unwrap();
        assert!(p.converged);
        assert!(p.char_violation < 1e-9);
    }

    #[test]
    fn extraction_threshold() {
        let d = dm("ab", &["a", "b", "ab", "ba"]);
        let cands = CandidateList::from_ordered(vec![
            ("a".into(), 5),
            ("b".into(), 5),
            ("ab".into(), 3),
            ("ba".into(), 2),
            ("bb".into(), 0),
        ])
        .unwrap();
        let token_dist = [0.4, 0.4, 0.1, 0.1];
        let plan = |ab: f64, ba: f64| TransportPlan {
            n_chars: 2,
            n_tokens: 4,
            columns: vec![vec![(0, 0.4)], vec![(1, 0.4)], vec![(0, ab)], vec![(1, ba)]],
            converged: true,
            iterations_used: 1,
            marginal_violation: 0.0,
            char_violation: 0.0,
            token_violation: 0.0,
            log_domain: false,
        };
        let e = extract_vocabulary(&plan(5e-5, 2e-4), &d, &token_dist, &cands, DEFAULT_MASS_THRESHOLD).unwrap();
        assert_eq!(e.vocabulary.tokens(), &["a", "b", "ba"]);
        assert!(!e.all_filtered);

        let e = extract_vocabulary(&plan(0.0, 0.0), &d, &token_dist, &cands, DEFAULT_MASS_THRESHOLD).unwrap();
        assert_eq!(e.vocabulary.tokens(), &["a", "b"]);
        assert!(e.all_filtered);
    }

    fn feasible_instance(
        n_chars: usize,
        tokens: Vec<Vec<usize>>,
        weights: Vec<f64>,
    ) -> (DistanceMatrix, Vec<f64>, Vec<f64>) {
        let alphabet: Vec<char> = ('a'..='z').take(n_chars).collect();
        let toks: Vec<String> = tokens
            .iter()
            .map(|t| t.iter().map(|&i| alphabet[i]).collect())
            .collect();
        let d = DistanceMatrix::new(alphabet, toks).unwrap();
        let mut a = vec![0.0; d.n_chars()];
        let mut b = vec![0.0; d.n_tokens()];
        let mut w = weights.into_iter().cycle();
        let mut total = 0.0;
        let mut cells = Vec::new();
        for j in 0..d.n_tokens() {
            for &(i, _) in d.column(j) {
                let x = w.next().unwrap();
                cells.push((i, j, x));
                total += x;
            }
        }
        for (i, j, x) in cells {
            a[i] += x / total;
            b[j] += x / total;
        }
        (d, a, b)
    }

    prop_compose! {
        fn instance()(n_chars in 2usize..5)
            (tokens in proptest::collection::vec(proptest::collection::vec(0..n_chars, 1..4), 1..6),
             weights in proptest::collection::vec(0.1f64..1.0, 1..20),
             n_chars in Just(n_chars))
            -> (DistanceMatrix, Vec<f64>, Vec<f64>) {
            let mut tokens = tokens;
            // every character gets at least its own token so rows are covered
            for c in 0..n_chars {
                tokens.push(vec![c]);
            }
            feasible_instance(n_chars, tokens, weights)
        }
    }

    proptest! {
        #[test]
        fn plan_respects_support_and_marginals((d, a, b) in instance()) {
            let cfg = SinkhornConfig { epsilon_relax: 0.0, tolerance: 1e-10, max_iters: 20_000, ..SinkhornConfig::default() };
            let p = sinkhorn(&d, &a, &b, &cfg).unwrap();
            for j in 0..d.n_tokens() {
                for i in 0..d.n_chars() {
                    if d.entry(i, j).is_infinite() {
                        prop_assert_eq!(p.get(i, j), 0.0);
                    }
                    prop_assert!(p.get(i, j) >= 0.0);
                }
            }
            if p.converged {
                prop_assert!(p.char_violation <= 1e-10);
                prop_assert!(p.token_violation <= 1e-10);
            }
        }

        #[test]
        fn smaller_gamma_never_costs_more((d, a, b) in instance()) {
            let run = |gamma: f64| {
                let cfg = SinkhornConfig { gamma, epsilon_relax: 0.0, tolerance: 1e-12, max_iters: 200_000, ..SinkhornConfig::default() };
                sinkhorn(&d, &a, &b, &cfg).unwrap()
            };
            let sharp = run(0.01);
            let smooth = run(1.0);
            prop_assume!(sharp.converged && smooth.converged);
            prop_assert!(sharp.cost(&d) <= smooth.cost(&d) + 1e-9);
        }

        #[test]
        fn permutation_invariance((d, a, b) in instance(), rot in 0usize..7) {
            let cfg = SinkhornConfig { epsilon_relax: 0.0, tolerance: 1e-13, max_iters: 50_000, ..SinkhornConfig::default() };
            let p = sinkhorn(&d, &a, &b, &cfg).unwrap();
            prop_assume!(p.converged);
            let n = d.n_tokens();
            let m = d.n_chars();
            // reverse the rows and rotate the columns
            let col_perm: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
            let chars: Vec<char> = d.chars().iter().rev().copied().collect();
            let toks: Vec<String> = col_perm.iter().map(|&j| d.tokens()[j].clone()).collect();
            let d2 = DistanceMatrix::new(chars, toks).unwrap();
            let a2: Vec<f64> = a.iter().rev().copied().collect();
            let b2: Vec<f64> = col_perm.iter().map(|&j| b[j]).collect();
            let p2 = sinkhorn(&d2, &a2, &b2, &cfg).unwrap();
            for (j2, &j) in col_perm.iter().enumerate() {
                for i in 0..m {
                    prop_assert!((p.get(i, j) - p2.get(m - 1 - i, j2)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn deterministic((d, a, b) in instance()) {
            let cfg = SinkhornConfig::default();
            let p1 = sinkhorn(&d, &a, &b, &cfg).unwrap();
            let p2 = sinkhorn(&d, &a, &b, &cfg).unwrap();
            prop_assert_eq!(p1, p2);
        }
    }
}
