//! Pairwise-preference statistics: Bradley-Terry scores and Top-K ratios.
//!
//! Bradley-Terry models `P(i beats j) = pi_i / (pi_i + pi_j)`. The maximum
//! likelihood scores are found with the minorization-maximization fixed point
//!
//! ```text
//! pi_i <- W_i / sum_{j != i} n_ij / (pi_i + pi_j)
//! ```
//!
//! (`W_i` total wins of `i`, `n_ij` comparisons between `i` and `j`), which
//! never decreases the log-likelihood. Near-separable data makes that fixed
//! point crawl, so each iteration also tries a Newton step in log-scores and
//! keeps it only when it beats the MM step. Scores are normalized to sum to one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `wins[i][j]` = number of times method `i` was preferred over `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    methods: Vec<String>,
    wins: Vec<Vec<u64>>,
}

impl ComparisonMatrix {
    pub fn new(methods: Vec<String>, wins: Vec<Vec<u64>>) -> Result<Self> {
        let n = methods.len();
        if n < 2 {
            return Err(Error::InvalidConfig("need at least two methods".into()));
        }
        if wins.len() != n || wins.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("wins matrix must be square over the methods".into()));
        }
        if (0..n).any(|i| wins[i][i] != 0) {
            return Err(Error::InvalidConfig("wins matrix diagonal must be zero".into()));
        }
        Ok(Self { methods, wins })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn wins(&self) -> &[Vec<u64>] {
        &self.wins
    }

    /// Parses either `method_a,method_b,wins_a,wins_b` rows or long-form
    /// `winner,loser` trial rows. Both need a header. `source` labels errors.
    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        let wide = header.len() == 4;
        if !wide && header.len() != 2 {
            return Err(Error::Parse {
                path: source.into(),
                line: 1,
                msg: "expected header `method_a,method_b,wins_a,wins_b` or `winner,loser`".into(),
            });
        }
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        let mut tallies: Vec<(usize, usize, u64)> = Vec::new();
        let mut intern = |name: &str| -> usize {
            if let Some(&i) = index.get(name) {
                return i;
            }
            index.insert(name.to_string(), order.len());
            order.push(name.to_string());
            order.len() - 1
        };
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Parse {
                path: source.into(),
                line,
                msg: e.to_string(),
            })?;
            let bad = |msg: String| Error::Parse {
                path: source.into(),
                line,
                msg,
            };
            let expected = if wide { 4 } else { 2 };
            if rec.len() != expected {
                return Err(bad(format!("expected {expected} fields, found {}", rec.len())));
            }
            if rec[0].is_empty() || rec[1].is_empty() {
                return Err(bad("empty method label".into()));
            }
            if rec[0] == rec[1] {
                return Err(bad(format!("method `{}` compared with itself", &rec[0])));
            }
            let a = intern(&rec[0]);
            let b = intern(&rec[1]);
            if wide {
                let parse = |s: &str| {
                    s.parse::<u64>()
                        .map_err(|_| bad(format!("win count `{s}` is not a nonnegative integer")))
                };
                tallies.push((a, b, parse(&rec[2])?));
                tallies.push((b, a, parse(&rec[3])?));
            } else {
                tallies.push((a, b, 1));
            }
        }
        let n = order.len();
        if n < 2 {
            return Err(Error::Parse {
                path: source.into(),
                line: 1,
                msg: "fewer than two methods in comparisons".into(),
            });
        }
        let mut wins = vec![vec![0u64; n]; n];
        for (a, b, w) in tallies {
            wins[a][b] += w;
        }
        Self::new(order, wins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtOptions {
    /// Stop when the largest relative score change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Pseudo-wins added in both directions for every pair; `None` disables.
    pub smoothing: Option<f64>,
    /// Starting scores; any positive vector, uniform by default.
    pub initial: Option<Vec<f64>>,
    /// Try a Newton step after each MM step; off gives the plain fixed point.
    pub newton: bool,
}

impl Default for BtOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            smoothing: None,
            initial: None,
            newton: true,
        }
    }
}

/// Pseudo-count used when smoothing is switched on.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtFit {
    pub methods: Vec<String>,
    /// Normalized preference scores, summing to one.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first update and after each one.
    pub log_likelihood: Vec<f64>,
}

impl BtFit {
    /// 1-based ranks, highest score first, ties to the earlier method.
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "pi", "rank"])?;
        for ((m, p), r) in self.methods.iter().zip(&self.scores).zip(self.ranks()) {
            w.write_record([m.clone(), p.to_string(), r.to_string()])?;
        }
        finish_csv(w)
    }
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Bradley-Terry log-likelihood `sum_ij w_ij log(pi_i / (pi_i + pi_j))`.
pub fn log_likelihood(wins: &[Vec<f64>], scores: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, row) in wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if i != j && w > 0.0 {
                ll += w * (scores[i] / (scores[i] + scores[j])).ln();
            }
        }
    }
    ll
}

fn check_identifiable(methods: &[String], wins: &[Vec<f64>]) -> Result<()> {
    let n = wins.len();
    for i in 0..n {
        let won: f64 = wins[i].iter().sum();
        let lost: f64 = wins.iter().map(|r| r[i]).sum();
        if won == 0.0 && lost == 0.0 {
            return Err(Error::Unidentifiable(format!(
                "method `{}` has no comparisons",
                methods[i]
            )));
        }
    }
    // Finite maximizer exists iff the "beats" digraph is strongly connected.
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { wins[i][j] } else { wins[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let undirected = {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if (wins[i][j] > 0.0 || wins[j][i] > 0.0) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    if let Some(j) = undirected.iter().position(|s| !s) {
        return Err(Error::Unidentifiable(format!(
            "comparison graph is disconnected: `{}` and `{}` are not linked",
            methods[0], methods[j]
        )));
    }
    let fwd = reach(true);
    let bwd = reach(false);
    if let Some(j) = (0..n).find(|&j| !fwd[j] || !bwd[j]) {
        return Err(Error::Unidentifiable(format!(
            "no chain of wins in both directions between `{}` and `{}`",
            methods[0], methods[j]
        )));
    }
    Ok(())
}

pub fn bt_fit(matrix: &ComparisonMatrix, opts: &BtOptions) -> Result<BtFit> {
    let n = matrix.methods.len();
    let mut wins: Vec<Vec<f64>> = matrix
        .wins
        .iter()
        .map(|r| r.iter().map(|&w| w as f64).collect())
        .collect();
    if let Some(eps) = opts.smoothing {
        if !(eps > 0.0) {
            return Err(Error::InvalidConfig("smoothing must be positive".into()));
        }
        for (i, row) in wins.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                if i != j {
                    *w += eps;
                }
            }
        }
    }
    check_identifiable(&matrix.methods, &wins)?;

    let mut scores = match &opts.initial {
        Some(init) => {
            if init.len() != n || init.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(Error::InvalidConfig("initial scores must be positive, one per method".into()));
            }
            init.clone()
        }
        None => vec![1.0; n],
    };
    normalize(&mut scores);

    let total_wins: Vec<f64> = wins.iter().map(|r| r.iter().sum()).collect();
    let mut history = vec![log_likelihood(&wins, &scores)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (wins[i][j] + wins[j][i]) / (scores[i] + scores[j]))
                .sum();
            next[i] = total_wins[i] / denom;
        }
        normalize(&mut next);
        let mut ll = log_likelihood(&wins, &next);
        if let Some(newton) = opts.newton.then(|| newton_step(&wins, &next)).flatten() {
            let nll = log_likelihood(&wins, &newton);
            if nll > ll {
                next = newton;
                ll = nll;
            }
        }
        let change = next
            .iter()
            .zip(&scores)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        scores = next;
        history.push(ll);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(BtFit {
        methods: matrix.methods.clone(),
        scores,
        iterations,
        converged,
        log_likelihood: history,
    })
}

/// One Newton step on `theta = ln pi` with the last method as reference.
/// The negative Hessian is a weighted graph Laplacian, so the reduced
/// system is positive definite whenever the comparison graph is connected.
fn newton_step(wins: &[Vec<f64>], scores: &[f64]) -> Option<Vec<f64>> {
    let n = scores.len();
    if n < 2 {
        return None;
    }
    let m = n - 1;
    let mut lap = DMatrix::<f64>::zeros(m, m);
    let mut grad = DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in i + 1..n {
            let nij = wins[i][j] + wins[j][i];
            if nij == 0.0 {
                continue;
            }
            let pij = scores[i] / (scores[i] + scores[j]);
            let c = nij * pij * (1.0 - pij);
            let gi = wins[i][j] - nij * pij;
            if i < m {
                lap[(i, i)] += c;
                grad[i] += gi;
            }
            if j < m {
                lap[(j, j)] += c;
                grad[j] -= gi;
            }
            if j < m {
                lap[(i, j)] -= c;
                lap[(j, i)] -= c;
            }
        }
    }
    let delta = lap.cholesky()?.solve(&grad);
    let theta: Vec<f64> = (0..n)
        .map(|i| scores[i].ln() + if i < m { delta[i] } else { 0.0 })
        .collect();
    let top = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = theta.iter().map(|t| (t - top).exp()).collect();
    normalize(&mut out);
    out.iter().all(|p| p.is_finite() && *p > 0.0).then_some(out)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Per-group rankings of all methods, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    methods: Vec<String>,
    groups: Vec<Vec<usize>>,
}

impl SelectionTable {
    pub fn from_rankings(methods: Vec<String>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = methods.len();
        for (g, ranking) in groups.iter().enumerate() {
            let mut seen = vec![false; n];
            if ranking.len() != n {
                return Err(Error::InvalidConfig(format!("group {g} does not rank every method")));
            }
            for &m in ranking {
                if m >= n || seen[m] {
                    return Err(Error::InvalidConfig(format!("group {g} ranks a method twice")));
                }
                seen[m] = true;
            }
        }
        Ok(Self { methods, groups })
    }

    /// Rankings from per-group scores (higher is better, ties to the earlier method).
    pub fn from_scores(methods: Vec<String>, scores: &[Vec<f64>]) -> Result<Self> {
        let groups = scores
            .iter()
            .map(|s| {
                if s.len() != methods.len() {
                    return Err(Error::InvalidConfig("score row length differs from method count".into()));
                }
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                Ok(order)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rankings(methods, groups)
    }

    /// Parses `group,method,score` rows.
    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut methods: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        let mut group_order: Vec<String> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Parse {
                path: source.into(),
                line,
                msg: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(Error::Parse {
                    path: source.into(),
                    line,
                    msg: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let score: f64 = rec[2].parse().map_err(|_| Error::Parse {
                path: source.into(),
                line,
                msg: format!("score `{}` is not a number", &rec[2]),
            })?;
            if !methods.iter().any(|m| m == &rec[1]) {
                methods.push(rec[1].to_string());
            }
            if !groups.contains_key(&rec[0]) {
                group_order.push(rec[0].to_string());
            }
            groups.entry(rec[0].to_string()).or_default().push((rec[1].to_string(), score));
        }
        let scores = group_order
            .iter()
            .map(|g| {
                let entries = &groups[g];
                methods
                    .iter()
                    .map(|m| {
                        entries.iter().find(|(name, _)| name == m).map(|e| e.1).ok_or_else(|| {
                            Error::InvalidConfig(format!("group `{g}` has no score for `{m}`"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_scores(methods, &scores)
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Fraction of groups in which `method` is among the top `k`.
    pub fn top_k_ratio(&self, method: &str, k: usize) -> Result<f64> {
        let i = self
            .methods
            .iter()
            .position(|m| m == method)
            .ok_or_else(|| Error::UnknownMethod(method.to_string()))?;
        if k == 0 || k > self.methods.len() {
            return Err(Error::InvalidConfig(format!(
                "k must lie in 1..={}, got {k}",
                self.methods.len()
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::InvalidConfig("selection table has no groups".into()));
        }
        let hits = self.groups.iter().filter(|g| g[..k].contains(&i)).count();
        Ok(hits as f64 / self.groups.len() as f64)
    }

    /// `method,k,ratio` for every method and every `k`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "k", "ratio"])?;
        for m in &self.methods {
            for k in 1..=self.methods.len() {
                w.write_record([m.clone(), k.to_string(), self.top_k_ratio(m, k)?.to_string()])?;
            }
        }
        finish_csv(w)
    }
}
