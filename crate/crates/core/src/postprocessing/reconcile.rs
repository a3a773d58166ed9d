//! Two-dimensional block-parity reconciliation.
//!
//! Each pass lays the surviving key positions (shuffled by a shared seed
//! after the first pass) into `rows × cols` matrices and Alice publishes every
//! row and column parity. Bob corrects his key, then both sides drop one
//! seed-chosen row and one column of every matrix. Alice also publishes a
//! handful of random-subset parities of the surviving key; when Bob's agree,
//! the loop stops.
//!
//! A matrix reveals `rows + cols − 1` independent parities and the drop step
//! removes exactly `rows + cols − 1` of its bits, one under each row parity
//! but the dropped one and one under each column parity but the dropped one,
//! plus their intersection. The published parities are therefore uniformly
//! distributed whatever the surviving bits are, and only the verification
//! parities and the parities of a zero-padded final matrix count as leak.
//!
//! Bob has two decoders. `Local` flips the intersection when exactly one row
//! and one column of a matrix disagree. `BeliefPropagation` runs sum-product
//! syndrome decoding over every parity check published so far, expressed on
//! the original key positions, and falls back to `Local` when it does not
//! converge to an assignment satisfying all of them.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    Local,
    #[default]
    BeliefPropagation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconcileParams {
    pub rows: usize,
    pub cols: usize,
    pub max_passes: usize,
    /// Random-subset parities compared after each pass.
    pub verify_parities: usize,
    pub decoder: Decoder,
    /// Drop one row and one column per matrix after each pass.
    pub drop_row_col: bool,
}

impl Default for ReconcileParams {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            max_passes: 6,
            verify_parities: 32,
            decoder: Decoder::BeliefPropagation,
            drop_row_col: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReconcileError {
    #[error("keys differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("block dimensions must be at least 2×2")]
    Dims,
    #[error("residual disagreement after {0} passes; keys discarded")]
    MaxPasses(usize),
    #[error("parity report does not match the expected layout")]
    Malformed,
    #[error("no key bits left to reconcile")]
    Exhausted,
}

/// Row and column parities of every matrix in one pass, concatenated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityBlockReport {
    pub rows: usize,
    pub cols: usize,
    pub pass: u32,
    pub row_parities: BitString,
    pub col_parities: BitString,
}

/// Everything Alice publishes in one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassDisclosure {
    pub report: ParityBlockReport,
    pub verify: BitString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconcileStats {
    pub passes: u32,
    pub block_parities: u64,
    pub verify_parities: u64,
    /// Parities that count against privacy amplification.
    pub leak_charged: u64,
    /// Key bits removed by the drop step.
    pub dropped: u64,
    pub corrections: u64,
    pub bp_successes: u32,
    pub converged: bool,
}

struct Layout {
    /// `rows·cols` cells per matrix; `None` marks zero padding.
    cells: Vec<Option<u32>>,
    matrices: usize,
}

struct Check {
    vars: Vec<u32>,
    syndrome: bool,
}

/// One party's reconciliation state. Alice calls [`alice_pass`](Self::alice_pass),
/// Bob feeds the result to [`bob_pass`](Self::bob_pass).
pub struct Reconciler {
    params: ReconcileParams,
    seed: u64,
    prior_llr: f64,
    prior: f64,
    independent_checks: usize,
    surviving: Vec<u32>,
    pass: u32,
    current: BitString,
    original: BitString,
    checks: Vec<Check>,
    stats: ReconcileStats,
}

impl Reconciler {
    /// `ber_prior` is the estimated error rate, used by the BP decoder.
    pub fn new(key: &BitString, params: ReconcileParams, seed: u64, ber_prior: f64) -> Result<Self, ReconcileError> {
        if params.rows < 2 || params.cols < 2 {
            return Err(ReconcileError::Dims);
        }
        let p = ber_prior.clamp(1e-3, 0.3);
        Ok(Self {
            params,
            seed,
            prior_llr: ((1.0 - p) / p).ln(),
            prior: p,
            independent_checks: 0,
            surviving: (0..key.len() as u32).collect(),
            pass: 0,
            current: key.clone(),
            original: key.clone(),
            checks: Vec::new(),
            stats: ReconcileStats::default(),
        })
    }

    pub fn stats(&self) -> &ReconcileStats {
        &self.stats
    }

    pub fn pass(&self) -> u32 {
        self.pass
    }

    pub fn surviving_len(&self) -> usize {
        self.surviving.len()
    }

    /// The surviving bits in original key order.
    pub fn key(&self) -> BitString {
        self.surviving.iter().map(|&i| self.current.get(i as usize)).collect()
    }

    /// Original positions of the surviving bits.
    pub fn positions(&self) -> &[u32] {
        &self.surviving
    }

    fn layout(&self) -> Layout {
        let mut order = self.surviving.clone();
        if self.pass > 0 {
            order.shuffle(&mut stream(self.seed, 100 + u64::from(self.pass)));
        }
        let size = self.params.rows * self.params.cols;
        let matrices = order.len().div_ceil(size);
        let mut cells: Vec<Option<u32>> = order.into_iter().map(Some).collect();
        cells.resize(matrices * size, None);
        Layout { cells, matrices }
    }

    fn row_vars<'a>(&self, l: &'a Layout, m: usize, r: usize) -> impl Iterator<Item = u32> + 'a {
        let (rows, cols) = (self.params.rows, self.params.cols);
        let base = m * rows * cols + r * cols;
        l.cells[base..base + cols].iter().flatten().copied()
    }

    fn col_vars<'a>(&self, l: &'a Layout, m: usize, c: usize) -> impl Iterator<Item = u32> + 'a {
        let (rows, cols) = (self.params.rows, self.params.cols);
        let base = m * rows * cols;
        (0..rows).filter_map(move |r| l.cells[base + r * cols + c])
    }

    fn parity<I: Iterator<Item = u32>>(bits: &BitString, vars: I) -> bool {
        vars.fold(false, |acc, v| acc ^ bits.get(v as usize))
    }

    fn report(&self, l: &Layout) -> ParityBlockReport {
        let (rows, cols) = (self.params.rows, self.params.cols);
        let mut row_parities = BitString::with_capacity(l.matrices * rows);
        let mut col_parities = BitString::with_capacity(l.matrices * cols);
        for m in 0..l.matrices {
            for r in 0..rows {
                row_parities.push(Self::parity(&self.current, self.row_vars(l, m, r)));
            }
            for c in 0..cols {
                col_parities.push(Self::parity(&self.current, self.col_vars(l, m, c)));
            }
        }
        ParityBlockReport {
            rows,
            cols,
            pass: self.pass,
            row_parities,
            col_parities,
        }
    }

    fn charge(&mut self, l: &Layout) {
        let (rows, cols) = (self.params.rows, self.params.cols);
        let per = (rows + cols) as u64;
        self.stats.block_parities += per * l.matrices as u64;
        let padded = l.matrices > 0 && l.cells.last().is_some_and(|c| c.is_none());
        if !self.params.drop_row_col {
            self.stats.leak_charged += per * l.matrices as u64;
        } else if padded {
            self.stats.leak_charged += per;
        }
    }

    fn drop_step(&mut self, l: &Layout) {
        if !self.params.drop_row_col {
            return;
        }
        let (rows, cols) = (self.params.rows, self.params.cols);
        let mut rng = stream(self.seed, 1000 + u64::from(self.pass));
        let mut gone = vec![false; self.current.len()];
        for m in 0..l.matrices {
            let dr = rng.random_range(0..rows);
            let dc = rng.random_range(0..cols);
            for v in self.row_vars(l, m, dr).chain(self.col_vars(l, m, dc)) {
                gone[v as usize] = true;
            }
        }
        let before = self.surviving.len();
        self.surviving.retain(|&v| !gone[v as usize]);
        self.stats.dropped += (before - self.surviving.len()) as u64;
    }

    fn verify_parities(&self, bits: &BitString) -> BitString {
        let mut rng = stream(self.seed, 2000 + u64::from(self.pass));
        let mut survivor_mask = BitString::zeros(bits.len());
        for &v in &self.surviving {
            survivor_mask.set(v as usize, true);
        }
        (0..self.params.verify_parities)
            .map(|_| {
                let mask: Vec<u64> = survivor_mask.words().iter().map(|w| w & rng.random::<u64>()).collect();
                bits.masked_parity(&mask)
            })
            .collect()
    }

    /// Alice's side of one pass.
    pub fn alice_pass(&mut self) -> Result<PassDisclosure, ReconcileError> {
        if self.surviving.is_empty() {
            return Err(ReconcileError::Exhausted);
        }
        let l = self.layout();
        let report = self.report(&l);
        self.charge(&l);
        self.drop_step(&l);
        let verify = self.verify_parities(&self.current);
        self.stats.verify_parities += verify.len() as u64;
        self.stats.leak_charged += verify.len() as u64;
        self.pass += 1;
        self.stats.passes = self.pass;
        Ok(PassDisclosure { report, verify })
    }

    /// Alice learns the outcome of a pass from Bob.
    pub fn alice_outcome(&mut self, agreed: bool) {
        self.stats.converged = agreed;
    }

    /// Bob's side of one pass. Returns whether all verification parities agree.
    pub fn bob_pass(&mut self, d: &PassDisclosure) -> Result<bool, ReconcileError> {
        if self.surviving.is_empty() {
            return Err(ReconcileError::Exhausted);
        }
        let l = self.layout();
        let (rows, cols) = (self.params.rows, self.params.cols);
        let rep = &d.report;
        if rep.rows != rows
            || rep.cols != cols
            || rep.pass != self.pass
            || rep.row_parities.len() != l.matrices * rows
            || rep.col_parities.len() != l.matrices * cols
            || d.verify.len() != self.params.verify_parities
        {
            return Err(ReconcileError::Malformed);
        }
        for m in 0..l.matrices {
            for r in 0..rows {
                let vars: Vec<u32> = self.row_vars(&l, m, r).collect();
                let s = rep.row_parities.get(m * rows + r) ^ Self::parity(&self.original, vars.iter().copied());
                self.checks.push(Check { vars, syndrome: s });
            }
            for c in 0..cols {
                let vars: Vec<u32> = self.col_vars(&l, m, c).collect();
                let s = rep.col_parities.get(m * cols + c) ^ Self::parity(&self.original, vars.iter().copied());
                self.checks.push(Check { vars, syndrome: s });
            }
        }
        self.independent_checks += l.matrices * (rows + cols - 1);
        let before = self.current.clone();
        let decoded = match self.params.decoder {
            Decoder::BeliefPropagation if self.independent_checks as f64 >= self.error_entropy() => {
                bp_decode(self.original.len(), &self.checks, self.prior_llr, 60)
            }
            _ => None,
        };
        match decoded {
            Some(e) => {
                self.stats.bp_successes += 1;
                let mut next = self.original.clone();
                next.xor_assign(&e);
                self.current = next;
            }
            None => self.local_correct(&l, rep),
        }
        self.stats.corrections += before.hamming(&self.current) as u64;
        self.charge(&l);
        self.drop_step(&l);
        let mine = self.verify_parities(&self.current);
        self.stats.verify_parities += mine.len() as u64;
        self.stats.leak_charged += mine.len() as u64;
        self.pass += 1;
        self.stats.passes = self.pass;
        let agreed = mine == d.verify;
        self.stats.converged = agreed;
        Ok(agreed)
    }

    /// Bits of syndrome needed to pin down the error pattern at the prior rate.
    fn error_entropy(&self) -> f64 {
        let p = self.prior;
        let h = -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
        h * self.original.len() as f64
    }

    fn local_correct(&mut self, l: &Layout, rep: &ParityBlockReport) {
        let (rows, cols) = (self.params.rows, self.params.cols);
        for m in 0..l.matrices {
            let bad_rows: Vec<usize> = (0..rows)
                .filter(|&r| rep.row_parities.get(m * rows + r) != Self::parity(&self.current, self.row_vars(l, m, r)))
                .collect();
            let bad_cols: Vec<usize> = (0..cols)
                .filter(|&c| rep.col_parities.get(m * cols + c) != Self::parity(&self.current, self.col_vars(l, m, c)))
                .collect();
            if let ([r], [c]) = (bad_rows.as_slice(), bad_cols.as_slice()) {
                if let Some(v) = l.cells[m * rows * cols + r * cols + c] {
                    self.current.flip(v as usize);
                }
            }
        }
    }
}

const STALL_LIMIT: usize = 12;

/// Sum-product decoding of an error pattern `e` with `H·e = s`, independent
/// Bernoulli prior of log-likelihood ratio `prior_llr` on every variable.
/// Returns `None` unless every check is satisfied within `max_iter` rounds,
/// giving up early once the count of unsatisfied checks stops falling.
fn bp_decode(n: usize, checks: &[Check], prior_llr: f64, max_iter: usize) -> Option<BitString> {
    let mut check_start = Vec::with_capacity(checks.len() + 1);
    let mut edge_var: Vec<u32> = Vec::new();
    check_start.push(0usize);
    for c in checks {
        edge_var.extend_from_slice(&c.vars);
        check_start.push(edge_var.len());
    }
    let edges = edge_var.len();
    let mut var_deg = vec![0usize; n + 1];
    for &v in &edge_var {
        var_deg[v as usize + 1] += 1;
    }
    for i in 0..n {
        var_deg[i + 1] += var_deg[i];
    }
    let var_start = var_deg;
    let mut fill = var_start.clone();
    let mut var_edges = vec![0usize; edges];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[fill[v as usize]] = e;
        fill[v as usize] += 1;
    }

    let mut v2c = vec![prior_llr; edges];
    let mut c2v = vec![0.0f64; edges];
    let mut decision = BitString::zeros(n);
    let mut t = Vec::new();
    let mut suffix = Vec::new();
    const LIM: f64 = 1.0 - 1e-15;
    let mut best_unsatisfied = usize::MAX;
    let mut since_best = 0;
    for _ in 0..max_iter {
        for (ci, c) in checks.iter().enumerate() {
            let (a, b) = (check_start[ci], check_start[ci + 1]);
            if a == b {
                continue;
            }
            t.clear();
            t.extend(v2c[a..b].iter().map(|&m| (0.5 * m).tanh()));
            suffix.clear();
            suffix.resize(t.len() + 1, 1.0);
            for k in (0..t.len()).rev() {
                suffix[k] = suffix[k + 1] * t[k];
            }
            let sign = if c.syndrome { -1.0 } else { 1.0 };
            let mut prefix = 1.0;
            for k in 0..t.len() {
                let prod = (prefix * suffix[k + 1]).clamp(-LIM, LIM);
                c2v[a + k] = sign * 2.0 * prod.atanh();
                prefix *= t[k];
            }
        }
        for v in 0..n {
            let (a, b) = (var_start[v], var_start[v + 1]);
            if a == b {
                continue;
            }
            let total: f64 = prior_llr + var_edges[a..b].iter().map(|&e| c2v[e]).sum::<f64>();
            decision.set(v, total < 0.0);
            for &e in &var_edges[a..b] {
                v2c[e] = total - c2v[e];
            }
        }
        let unsatisfied = checks
            .iter()
            .filter(|c| c.vars.iter().fold(false, |acc, &v| acc ^ decision.get(v as usize)) != c.syndrome)
            .count();
        if unsatisfied == 0 {
            return Some(decision);
        }
        if unsatisfied < best_unsatisfied {
            best_unsatisfied = unsatisfied;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_LIMIT {
                break;
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileOutcome {
    pub alice: BitString,
    pub bob: BitString,
    pub stats: ReconcileStats,
    /// Oracle: disagreements among surviving bits before the first pass and after each pass.
    pub errors_per_pass: Vec<usize>,
}

/// Runs both sides of the reconciliation loop in one place.
pub fn reconcile_block_parity(
    alice: &BitString,
    bob: &BitString,
    params: &ReconcileParams,
    seed: u64,
    ber_prior: f64,
) -> Result<ReconcileOutcome, ReconcileError> {
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch(alice.len(), bob.len()));
    }
    let mut a = Reconciler::new(alice, *params, seed, ber_prior)?;
    let mut b = Reconciler::new(bob, *params, seed, ber_prior)?;
    let mut errors_per_pass = vec![alice.hamming(bob)];
    if alice.is_empty() {
        return Ok(ReconcileOutcome {
            alice: alice.clone(),
            bob: bob.clone(),
            stats: ReconcileStats {
                converged: true,
                ..ReconcileStats::default()
            },
            errors_per_pass,
        });
    }
    for _ in 0..params.max_passes {
        let d = a.alice_pass()?;
        let agreed = b.bob_pass(&d)?;
        a.alice_outcome(agreed);
        errors_per_pass.push(a.key().hamming(&b.key()));
        if agreed {
            return Ok(ReconcileOutcome {
                alice: a.key(),
                bob: b.key(),
                stats: *b.stats(),
                errors_per_pass,
            });
        }
        if a.surviving_len() == 0 {
            break;
        }
    }
    Err(ReconcileError::MaxPasses(a.pass() as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn local(rows: usize, cols: usize) -> ReconcileParams {
        ReconcileParams {
            rows,
            cols,
            decoder: Decoder::Local,
            ..ReconcileParams::default()
        }
    }

    #[test]
    fn zero_errors_single_pass() {
        let key = BitString::random(640, &mut stream(1, 0));
        let out = reconcile_block_parity(&key, &key, &ReconcileParams::default(), 5, 0.05).unwrap();
        assert_eq!(out.stats.passes, 1);
        assert_eq!(out.alice, out.bob);
        assert_eq!(out.alice.len(), 640 - 10 * 15);
        assert_eq!(out.stats.block_parities, 10 * 16);
        assert_eq!(out.stats.dropped, 150);
        assert_eq!(out.stats.leak_charged, 32);
    }

    #[test]
    fn every_single_flip_in_8x8_is_corrected_in_pass_one() {
        let key = BitString::random(64, &mut stream(2, 0));
        for pos in 0..64 {
            let mut bob = key.clone();
            bob.flip(pos);
            for decoder in [Decoder::Local, Decoder::BeliefPropagation] {
                let params = ReconcileParams {
                    decoder,
                    ..ReconcileParams::default()
                };
                let mut a = Reconciler::new(&key, params, 3, 0.02).unwrap();
                let mut b = Reconciler::new(&bob, params, 3, 0.02).unwrap();
                let d = a.alice_pass().unwrap();
                assert!(b.bob_pass(&d).unwrap(), "pos {pos} {decoder:?}");
                assert_eq!(a.key(), b.key());
                assert_eq!(b.stats().corrections, 1);
            }
        }
    }

    #[test]
    fn padded_tail_is_charged() {
        let key = BitString::random(100, &mut stream(3, 0));
        let out = reconcile_block_parity(&key, &key, &local(8, 8), 1, 0.05).unwrap();
        assert_eq!(out.stats.leak_charged, 32 + 16);
    }

    #[test]
    fn exhausted_passes_fail_explicitly() {
        let mut rng = stream(4, 0);
        let a = BitString::random(256, &mut rng);
        let mut b = a.clone();
        for i in 0..256 {
            if rng.random_bool(0.3) {
                b.flip(i);
            }
        }
        let params = ReconcileParams {
            max_passes: 1,
            ..local(8, 8)
        };
        assert_eq!(
            reconcile_block_parity(&a, &b, &params, 1, 0.3),
            Err(ReconcileError::MaxPasses(1))
        );
    }

    #[test]
    fn malformed_report_rejected() {
        let key = BitString::random(128, &mut stream(5, 0));
        let mut a = Reconciler::new(&key, ReconcileParams::default(), 1, 0.05).unwrap();
        let mut b = Reconciler::new(&key, ReconcileParams::default(), 1, 0.05).unwrap();
        let mut d = a.alice_pass().unwrap();
        d.report.row_parities.push(true);
        assert_eq!(b.bob_pass(&d), Err(ReconcileError::Malformed));
    }

    #[test]
    fn bp_solves_small_system() {
        // two checks over three variables, syndrome says variable 1 is flipped
        let checks = vec![
            Check {
                vars: vec![0, 1],
                syndrome: true,
            },
            Check {
                vars: vec![1, 2],
                syndrome: true,
            },
        ];
        let e = bp_decode(3, &checks, 3.0, 20).unwrap();
        assert_eq!(e.to_string(), "010");
    }
}
