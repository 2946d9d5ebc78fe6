//! Exact posterior marginals of the oracle chain given hard evidence.
//!
//! Forward messages are normalized after every step; backward messages are
//! shifted by their row maximum. Both scales cancel in
//! `gamma_u = normalize(log_alpha_u + log_beta_u)`.
//!
//! Each transition costs O(V K) for the sparse part plus one scalar for the
//! rank-1 teleport term. Revealed positions are handled by index selection:
//! a revealed successor only needs one column of the sparse kernel, and a
//! revealed predecessor only needs one row.

use std::fmt::Write as _;

use thiserror::Error;

use crate::kernel::OracleChain;
use crate::logspace;

/// Sentinel for a masked position.
pub const MASK: u32 = u32::MAX - 1;

/// Largest number of completions [`brute_force_posterior`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PosteriorError {
    #[error("empty sequence")]
    Empty,
    #[error("token {id} at position {position} is out of range for vocabulary size {vocab_size}")]
    TokenOutOfRange { position: usize, id: u32, vocab_size: usize },
    #[error("evidence has zero probability at position {position}")]
    ImpossibleEvidence { position: usize },
    #[error("enumeration needs {completions:e} completions (limit {limit:e})")]
    TooLarge { completions: f64, limit: f64 },
    #[error("lattice dump: {0}")]
    Parse(String),
}

/// Partially masked sequence `z`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    tokens: Vec<u32>,
}

impl MaskedSequence {
    /// Validates every non-[`MASK`] token against the vocabulary.
    pub fn new(tokens: Vec<u32>, vocab_size: usize) -> Result<Self, PosteriorError> {
        if tokens.is_empty() {
            return Err(PosteriorError::Empty);
        }
        if let Some(position) = tokens.iter().position(|&t| t != MASK && t as usize >= vocab_size) {
            return Err(PosteriorError::TokenOutOfRange {
                position,
                id: tokens[position],
                vocab_size,
            });
        }
        Ok(Self { tokens })
    }

    pub fn fully_masked(len: usize) -> Self {
        Self { tokens: vec![MASK; len] }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    #[inline]
    pub fn get(&self, u: usize) -> Option<u32> {
        let t = self.tokens[u];
        (t != MASK).then_some(t)
    }

    #[inline]
    pub fn is_masked(&self, u: usize) -> bool {
        self.tokens[u] == MASK
    }

    /// Reveals position `u`. The caller guarantees `token < V`.
    #[inline]
    pub fn reveal(&mut self, u: usize, token: u32) {
        debug_assert_ne!(token, MASK);
        self.tokens[u] = token;
    }

    #[inline]
    pub fn mask(&mut self, u: usize) {
        self.tokens[u] = MASK;
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == MASK).count()
    }

    /// Revealed index set `R`.
    pub fn revealed(&self) -> Vec<usize> {
        (0..self.len()).filter(|&u| !self.is_masked(u)).collect()
    }

    /// Clean sequence, if nothing is masked.
    pub fn into_complete(self) -> Option<Vec<u32>> {
        (!self.tokens.contains(&MASK)).then_some(self.tokens)
    }
}

/// Dense row-major `rows x cols` matrix of log values.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![f64::NEG_INFINITY; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, f64::NEG_INFINITY);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Row `a` for reading and row `b` for writing; `a != b`.
    fn row_pair(&mut self, a: usize, b: usize) -> (&[f64], &mut [f64]) {
        let c = self.cols;
        if a < b {
            let (lo, hi) = self.data.split_at_mut(b * c);
            (&lo[a * c..(a + 1) * c], &mut hi[..c])
        } else {
            let (lo, hi) = self.data.split_at_mut(a * c);
            (&hi[..c], &mut lo[b * c..(b + 1) * c])
        }
    }

    pub fn max_abs_diff(&self, other: &LogMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max)
    }
}

/// Smoothing marginals `gamma`, one log-probability row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMarginals {
    pub log_gamma: LogMatrix,
}

impl PosteriorMarginals {
    pub fn len(&self) -> usize {
        self.log_gamma.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.log_gamma.rows() == 0
    }

    pub fn probs(&self, u: usize) -> Vec<f64> {
        self.log_gamma.row(u).iter().map(|x| x.exp()).collect()
    }
}

/// Forward, backward and smoothed lattices of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageLattice {
    /// Normalized forward messages.
    pub log_alpha: LogMatrix,
    /// Backward messages shifted so each row has maximum 0.
    pub log_beta: LogMatrix,
    /// Forward normalizers `log Z_t`; their sum is `log p(E)`.
    pub log_norm: Vec<f64>,
    pub log_gamma: LogMatrix,
}

impl MessageLattice {
    fn empty() -> Self {
        Self {
            log_alpha: LogMatrix::new(0, 0),
            log_beta: LogMatrix::new(0, 0),
            log_norm: Vec::new(),
            log_gamma: LogMatrix::new(0, 0),
        }
    }

    /// Log-probability of the revealed tokens under the chain.
    pub fn log_evidence(&self) -> f64 {
        self.log_norm.iter().sum()
    }

    /// Plain-text dump: a `lattice T V` header, then the `norm`, `alpha`,
    /// `beta` and `gamma` blocks with one whitespace-separated row per line.
    /// Values use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (t, v) = (self.log_alpha.rows(), self.log_alpha.cols());
        writeln!(s, "lattice {t} {v}").unwrap();
        write_block(&mut s, "norm", std::slice::from_ref(&self.log_norm));
        for (name, m) in [
            ("alpha", &self.log_alpha),
            ("beta", &self.log_beta),
            ("gamma", &self.log_gamma),
        ] {
            let rows: Vec<Vec<f64>> = (0..t).map(|r| m.row(r).to_vec()).collect();
            write_block(&mut s, name, &rows);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PosteriorError> {
        let err = |m: &str| PosteriorError::Parse(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines.next().ok_or_else(|| err("missing header"))?.split_whitespace().collect();
        if header.len() != 3 || header[0] != "lattice" {
            return Err(err("bad header"));
        }
        let t: usize = header[1].parse().map_err(|_| err("bad T"))?;
        let v: usize = header[2].parse().map_err(|_| err("bad V"))?;
        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>, PosteriorError> {
            if lines.next().map(str::trim) != Some(name) {
                return Err(err(&format!("expected block {name}")));
            }
            (0..rows)
                .map(|_| {
                    let line = lines.next().ok_or_else(|| err("truncated block"))?;
                    let row: Vec<f64> = line
                        .split_whitespace()
                        .map(|x| x.parse::<f64>().map_err(|_| err(&format!("bad value {x}"))))
                        .collect::<Result<_, _>>()?;
                    if row.len() != cols {
                        return Err(err("row length mismatch"));
                    }
                    Ok(row)
                })
                .collect()
        };
        let log_norm = read_block("norm", 1, t)?.remove(0);
        let log_alpha = LogMatrix::from_rows(read_block("alpha", t, v)?);
        let log_beta = LogMatrix::from_rows(read_block("beta", t, v)?);
        let log_gamma = LogMatrix::from_rows(read_block("gamma", t, v)?);
        Ok(Self {
            log_alpha,
            log_beta,
            log_norm,
            log_gamma,
        })
    }
}

fn write_block(s: &mut String, name: &str, rows: &[Vec<f64>]) {
    writeln!(s, "{name}").unwrap();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(s, "{}", cells.join(" ")).unwrap();
    }
}

/// Reusable forward-backward workspace. Buffers grow to the largest
/// instance seen and are reused across calls.
pub struct Smoother {
    lattice: MessageLattice,
    acc: Vec<f64>,
    scaled: Vec<f64>,
}

impl Default for Smoother {
    fn default() -> Self {
        Self::new()
    }
}

impl Smoother {
    pub fn new() -> Self {
        Self {
            lattice: MessageLattice::empty(),
            acc: Vec::new(),
            scaled: Vec::new(),
        }
    }

    pub fn lattice(&self) -> &MessageLattice {
        &self.lattice
    }

    pub fn into_lattice(self) -> MessageLattice {
        self.lattice
    }

    fn prepare(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<(), PosteriorError> {
        let v = chain.vocab_size();
        if z.is_empty() {
            return Err(PosteriorError::Empty);
        }
        if let Some(position) = z.tokens.iter().position(|&t| t != MASK && t as usize >= v) {
            return Err(PosteriorError::TokenOutOfRange {
                position,
                id: z.tokens[position],
                vocab_size: v,
            });
        }
        let t = z.len();
        self.lattice.log_alpha.resize(t, v);
        self.lattice.log_beta.resize(t, v);
        self.lattice.log_gamma.resize(t, v);
        self.lattice.log_norm.resize(t, 0.0);
        self.acc.resize(v, 0.0);
        self.scaled.resize(v, 0.0);
        Ok(())
    }

    /// Forward pass only; fills `log_alpha` and `log_norm`.
    pub fn forward(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<(), PosteriorError> {
        self.prepare(chain, z)?;
        self.run_forward(chain, z)
    }

    /// Backward pass only; fills `log_beta`.
    pub fn backward(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<(), PosteriorError> {
        self.prepare(chain, z)?;
        self.run_backward(chain, z)
    }

    /// Full smoothing. The returned matrix is valid until the next call.
    pub fn smooth(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<&LogMatrix, PosteriorError> {
        self.prepare(chain, z)?;
        self.run_forward(chain, z)?;
        self.run_backward(chain, z)?;
        self.combine(z)?;
        Ok(&self.lattice.log_gamma)
    }

    fn run_forward(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<(), PosteriorError> {
        let kernel = chain.kernel();
        let v = kernel.vocab_size();
        let eps = kernel.epsilon();
        let nu = kernel.nu();
        let alpha = &mut self.lattice.log_alpha;
        let log_norm = &mut self.lattice.log_norm;

        let row = alpha.row_mut(0);
        log_norm[0] = match z.get(0) {
            Some(a) => set_delta(row, a, chain.log_pi0()[a as usize]),
            None => {
                row.copy_from_slice(chain.log_pi0());
                logspace::normalize(row)
            }
        };
        check(log_norm[0], 0)?;

        for t in 1..z.len() {
            let (prev_row, row) = alpha.row_pair(t - 1, t);
            let lz = match (z.get(t - 1), z.get(t)) {
                (Some(b), Some(a)) => set_delta(row, a, kernel.prob(b as usize, a as usize).ln()),
                (None, Some(a)) => {
                    // only column `a` of the transition is needed
                    let m = logspace::max(prev_row);
                    let (src, ps) = kernel.sparse_column(a as usize);
                    let s: f64 = src.iter().zip(ps).map(|(&i, &p)| (prev_row[i as usize] - m).exp() * p).sum();
                    let pred = (1.0 - eps) * m.exp() * s + eps * nu[a as usize];
                    set_delta(row, a, pred.ln())
                }
                (Some(b), None) => {
                    for j in 0..v {
                        self.acc[j] = eps * nu[j];
                    }
                    let (ids, ps) = kernel.sparse_row(b as usize);
                    for (&j, &p) in ids.iter().zip(ps) {
                        self.acc[j as usize] += (1.0 - eps) * p;
                    }
                    for (r, &x) in row.iter_mut().zip(&self.acc) {
                        *r = x.ln();
                    }
                    logspace::normalize(row)
                }
                (None, None) => {
                    let m = logspace::max(prev_row);
                    self.acc.fill(0.0);
                    for (i, &la) in prev_row.iter().enumerate() {
                        let w = (la - m).exp();
                        if w == 0.0 {
                            continue;
                        }
                        let (ids, ps) = kernel.sparse_row(i);
                        for (&j, &p) in ids.iter().zip(ps) {
                            self.acc[j as usize] += w * p;
                        }
                    }
                    let scale = (1.0 - eps) * m.exp();
                    for j in 0..v {
                        row[j] = (scale * self.acc[j] + eps * nu[j]).ln();
                    }
                    logspace::normalize(row)
                }
            };
            log_norm[t] = lz;
            check(lz, t)?;
        }
        Ok(())
    }

    fn run_backward(&mut self, chain: &OracleChain, z: &MaskedSequence) -> Result<(), PosteriorError> {
        let kernel = chain.kernel();
        let v = kernel.vocab_size();
        let eps = kernel.epsilon();
        let nu = kernel.nu();
        let beta = &mut self.lattice.log_beta;
        let last = z.len() - 1;
        beta.row_mut(last).fill(0.0);

        for t in (0..last).rev() {
            let (next_row, row) = beta.row_pair(t + 1, t);
            match z.get(t + 1) {
                Some(a) => {
                    // beta_t(i) is proportional to P'(a|i)
                    let tail = eps * nu[a as usize];
                    self.acc.fill(tail);
                    let (src, ps) = kernel.sparse_column(a as usize);
                    for (&i, &p) in src.iter().zip(ps) {
                        self.acc[i as usize] += (1.0 - eps) * p;
                    }
                }
                None => {
                    let m = logspace::max(next_row);
                    let mut c = 0.0;
                    for j in 0..v {
                        self.scaled[j] = (next_row[j] - m).exp();
                        c += nu[j] * self.scaled[j];
                    }
                    let tail = eps * c;
                    for i in 0..v {
                        let (ids, ps) = kernel.sparse_row(i);
                        let s: f64 = ids.iter().zip(ps).map(|(&j, &p)| p * self.scaled[j as usize]).sum();
                        self.acc[i] = (1.0 - eps) * s + tail;
                    }
                }
            }
            let shift = self.acc.iter().copied().fold(0.0, f64::max);
            if !(shift > 0.0) {
                return Err(PosteriorError::ImpossibleEvidence { position: t + 1 });
            }
            for (r, &x) in row.iter_mut().zip(&self.acc) {
                *r = (x / shift).ln();
            }
        }
        Ok(())
    }

    fn combine(&mut self, z: &MaskedSequence) -> Result<(), PosteriorError> {
        let l = &mut self.lattice;
        for t in 0..z.len() {
            let row = l.log_gamma.row_mut(t);
            match z.get(t) {
                Some(a) => {
                    set_delta(row, a, 0.0);
                }
                None => {
                    let (la, lb) = (l.log_alpha.row(t), l.log_beta.row(t));
                    for ((g, &x), &y) in row.iter_mut().zip(la).zip(lb) {
                        *g = x + y;
                    }
                    check(logspace::normalize(row), t)?;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn set_delta(row: &mut [f64], a: u32, log_z: f64) -> f64 {
    row.fill(f64::NEG_INFINITY);
    row[a as usize] = 0.0;
    log_z
}

#[inline]
fn check(log_z: f64, position: usize) -> Result<(), PosteriorError> {
    if log_z.is_finite() {
        Ok(())
    } else {
        Err(PosteriorError::ImpossibleEvidence { position })
    }
}

/// Normalized forward lattice and per-step normalizers.
pub fn forward_pass(chain: &OracleChain, z: &MaskedSequence) -> Result<(LogMatrix, Vec<f64>), PosteriorError> {
    let mut s = Smoother::new();
    s.forward(chain, z)?;
    let l = s.into_lattice();
    Ok((l.log_alpha, l.log_norm))
}

/// Max-shifted backward lattice.
pub fn backward_pass(chain: &OracleChain, z: &MaskedSequence) -> Result<LogMatrix, PosteriorError> {
    let mut s = Smoother::new();
    s.backward(chain, z)?;
    Ok(s.into_lattice().log_beta)
}

/// Posterior marginals of every position given the revealed tokens of `z`.
pub fn smooth(chain: &OracleChain, z: &MaskedSequence) -> Result<PosteriorMarginals, PosteriorError> {
    Ok(PosteriorMarginals {
        log_gamma: lattice(chain, z)?.log_gamma,
    })
}

/// All messages of one instance.
pub fn lattice(chain: &OracleChain, z: &MaskedSequence) -> Result<MessageLattice, PosteriorError> {
    let mut s = Smoother::new();
    s.smooth(chain, z)?;
    Ok(s.into_lattice())
}

/// Marginals by explicit summation of `p0` over every completion of the
/// masked positions.
pub fn brute_force_posterior(chain: &OracleChain, z: &MaskedSequence) -> Result<PosteriorMarginals, PosteriorError> {
    let v = chain.vocab_size();
    let masked: Vec<usize> = (0..z.len()).filter(|&u| z.is_masked(u)).collect();
    let completions = (v as f64).powi(masked.len() as i32);
    if completions > BRUTE_FORCE_LIMIT {
        return Err(PosteriorError::TooLarge {
            completions,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let kernel = chain.kernel();
    let mut x: Vec<usize> = z.tokens.iter().map(|&t| if t == MASK { 0 } else { t as usize }).collect();
    let mut marg = vec![vec![0.0; v]; z.len()];
    let mut total = 0.0;
    loop {
        let mut p = chain.pi0()[x[0]];
        for u in 1..x.len() {
            p *= kernel.prob(x[u - 1], x[u]);
        }
        total += p;
        for (u, &xu) in x.iter().enumerate() {
            marg[u][xu] += p;
        }
        // odometer over masked positions
        let mut k = 0;
        while k < masked.len() {
            let u = masked[k];
            x[u] += 1;
            if x[u] < v {
                break;
            }
            x[u] = 0;
            k += 1;
        }
        if k == masked.len() {
            break;
        }
    }
    if !(total > 0.0) {
        return Err(PosteriorError::ImpossibleEvidence { position: 0 });
    }
    let rows = marg
        .into_iter()
        .map(|r| r.into_iter().map(|m| (m / total).ln()).collect())
        .collect();
    Ok(PosteriorMarginals {
        log_gamma: LogMatrix::from_rows(rows),
    })
}

/// Dense O(T V^2) forward-backward on the materialized kernel, with
/// evidence applied as `-inf` log-factors. Test reference only.
pub mod reference {
    use super::{LogMatrix, MaskedSequence, MessageLattice, PosteriorError};
    use crate::kernel::OracleChain;
    use crate::logspace::{lse, max, normalize};

    fn log_phi(z: &MaskedSequence, t: usize, j: usize) -> f64 {
        match z.get(t) {
            Some(a) if a as usize != j => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    pub fn forward_backward(chain: &OracleChain, z: &MaskedSequence) -> Result<MessageLattice, PosteriorError> {
        let v = chain.vocab_size();
        let t_len = z.len();
        let logp: Vec<Vec<f64>> = (0..v)
            .map(|i| chain.kernel().effective_row(i).iter().map(|p| p.ln()).collect())
            .collect();
        let mut alpha = vec![vec![0.0; v]; t_len];
        let mut log_norm = vec![0.0; t_len];
        for j in 0..v {
            alpha[0][j] = chain.log_pi0()[j] + log_phi(z, 0, j);
        }
        log_norm[0] = normalize(&mut alpha[0]);
        for t in 1..t_len {
            for j in 0..v {
                let terms: Vec<f64> = (0..v).map(|i| alpha[t - 1][i] + logp[i][j]).collect();
                alpha[t][j] = lse(&terms) + log_phi(z, t, j);
            }
            log_norm[t] = normalize(&mut alpha[t]);
        }
        let mut beta = vec![vec![0.0; v]; t_len];
        for t in (0..t_len - 1).rev() {
            for i in 0..v {
                let terms: Vec<f64> = (0..v)
                    .map(|j| logp[i][j] + log_phi(z, t + 1, j) + beta[t + 1][j])
                    .collect();
                beta[t][i] = lse(&terms);
            }
            let m = max(&beta[t]);
            for b in beta[t].iter_mut() {
                *b -= m;
            }
        }
        let gamma: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let mut g: Vec<f64> = (0..v).map(|j| alpha[t][j] + beta[t][j]).collect();
                normalize(&mut g);
                g
            })
            .collect();
        if let Some(t) = log_norm.iter().position(|x| !x.is_finite()) {
            return Err(PosteriorError::ImpossibleEvidence { position: t });
        }
        Ok(MessageLattice {
            log_alpha: LogMatrix::from_rows(alpha),
            log_beta: LogMatrix::from_rows(beta),
            log_norm,
            log_gamma: LogMatrix::from_rows(gamma),
        })
    }
}
