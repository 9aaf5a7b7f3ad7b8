//! Transfer accounting. A repair never touches helper data directly: it goes through
//! a [`MeteredSource`], which records every fetched symbol into a [`TransferLedger`].
//! Analytic download formulas live here too, kept as exact rationals so comparisons
//! against measured counts are equalities, not tolerances.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::io;

pub use num_rational::Rational64;

use crate::{Error, Result};

/// What a fetched batch of symbols was for.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Row-class reads used when a systematic node is rebuilt.
    SelectorRows,
    /// Full last-instance systematic cells used to recompute parity cells.
    ParityRebuild,
    /// Reads that peel earlier-instance parity cells out of carried sums.
    PiggybackExtract,
    /// Reads that rebuild the carried sum of the failed parity cell.
    PiggybackRestore,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SelectorRows => "selector-rows",
            Phase::ParityRebuild => "parity-rebuild",
            Phase::PiggybackExtract => "piggyback-extract",
            Phase::PiggybackRestore => "piggyback-restore",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub helper: usize,
    pub phase: Phase,
    pub symbols: u64,
}

/// Append-only record of one repair episode: which helper sent how many symbols
/// and why. Node ids are 0-based in memory; `write_csv` shifts to 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferLedger {
    pub failed_node: usize,
    entries: Vec<LedgerEntry>,
}

impl TransferLedger {
    pub fn new(failed_node: usize) -> TransferLedger {
        TransferLedger {
            failed_node,
            entries: Vec::new(),
        }
    }

    pub fn record(&mut self, helper: usize, phase: Phase, symbols: u64) {
        self.entries.push(LedgerEntry {
            helper,
            phase,
            symbols,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.symbols).sum()
    }

    pub fn per_helper(&self) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.helper).or_insert(0) += e.symbols;
        }
        out
    }

    pub fn per_phase(&self) -> BTreeMap<Phase, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.phase).or_insert(0) += e.symbols;
        }
        out
    }

    /// Folds another episode of the same failure into this ledger. Merging is
    /// associative and order-independent as far as totals are concerned.
    pub fn merge(&mut self, other: TransferLedger) {
        assert_eq!(
            self.failed_node, other.failed_node,
            "ledgers describe different failures"
        );
        self.entries.extend(other.entries);
    }

    /// Rewrites node ids (helpers and the failed node). Used when a repair computed
    /// in instance-local ids is lifted to cluster-global ids.
    pub fn relabel(mut self, f: impl Fn(usize) -> usize) -> TransferLedger {
        self.failed_node = f(self.failed_node);
        for e in &mut self.entries {
            e.helper = f(e.helper);
        }
        self
    }

    /// Collapses entries sharing (helper, phase) into one row each. Totals and
    /// groupings are unchanged; only entry granularity is lost.
    pub fn coalesce(&mut self) {
        let mut agg: BTreeMap<(usize, Phase), u64> = BTreeMap::new();
        for e in &self.entries {
            *agg.entry((e.helper, e.phase)).or_insert(0) += e.symbols;
        }
        self.entries = agg
            .into_iter()
            .map(|((helper, phase), symbols)| LedgerEntry {
                helper,
                phase,
                symbols,
            })
            .collect();
    }

    /// CSV export: `failed_node,helper,phase,symbols`, rows sorted by helper id,
    /// node ids 1-based.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "failed_node,helper,phase,symbols")?;
        let mut rows = self.entries.clone();
        rows.sort_by_key(|e| e.helper);
        for e in rows {
            writeln!(
                w,
                "{},{},{},{}",
                self.failed_node + 1,
                e.helper + 1,
                e.phase,
                e.symbols
            )?;
        }
        Ok(())
    }
}

/// Read access to an encoded cluster: `node_count` nodes, each holding
/// `instance_count` cells of `cell_len` symbols.
pub trait SymbolSource {
    fn node_count(&self) -> usize;
    fn instance_count(&self) -> usize;
    fn cell_len(&self) -> usize;
    fn cell(&self, node: usize, instance: usize) -> &[u16];
}

/// The only road from helper data into a repair. Every fetch is appended to the
/// ledger; fetching from the failed node is refused.
pub struct MeteredSource<'a, S: SymbolSource + ?Sized> {
    source: &'a S,
    failed: usize,
    ledger: RefCell<TransferLedger>,
}

impl<'a, S: SymbolSource + ?Sized> MeteredSource<'a, S> {
    pub fn new(source: &'a S, failed: usize) -> MeteredSource<'a, S> {
        MeteredSource {
            source,
            failed,
            ledger: RefCell::new(TransferLedger::new(failed)),
        }
    }

    pub fn failed(&self) -> usize {
        self.failed
    }

    pub fn node_count(&self) -> usize {
        self.source.node_count()
    }

    fn guard(&self, node: usize) -> Result<()> {
        if node == self.failed {
            return Err(Error::UnavailableHelper(node));
        }
        if node >= self.source.node_count() {
            return Err(Error::InvalidNodeSet(format!(
                "node {node} out of range 0..{}",
                self.source.node_count()
            )));
        }
        Ok(())
    }

    /// Downloads one whole cell from a helper.
    pub fn fetch_cell(&self, node: usize, instance: usize, phase: Phase) -> Result<&'a [u16]> {
        self.guard(node)?;
        let cell = self.source.cell(node, instance);
        self.ledger
            .borrow_mut()
            .record(node, phase, cell.len() as u64);
        Ok(cell)
    }

    /// Downloads selected rows of one cell, in the order given.
    pub fn fetch_rows(
        &self,
        node: usize,
        instance: usize,
        rows: &[usize],
        phase: Phase,
    ) -> Result<Vec<u16>> {
        self.guard(node)?;
        let cell = self.source.cell(node, instance);
        let picked: Vec<u16> = rows.iter().map(|&v| cell[v]).collect();
        self.ledger
            .borrow_mut()
            .record(node, phase, picked.len() as u64);
        Ok(picked)
    }

    pub fn finish(self) -> TransferLedger {
        self.ledger.into_inner()
    }
}

/// Measured-vs-analytic comparison. `analytic` is in symbols; the check is exact.
/// A fractional analytic value can never match, by design.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandwidthReport {
    pub measured: u64,
    pub per_helper: BTreeMap<usize, u64>,
    pub analytic: Rational64,
    pub matches: bool,
}

pub fn assert_measured(ledger: &TransferLedger, analytic: Rational64) -> BandwidthReport {
    let measured = ledger.total();
    BandwidthReport {
        measured,
        per_helper: ledger.per_helper(),
        analytic,
        matches: Rational64::from_integer(measured as i64) == analytic,
    }
}

/// Scales a per-node fraction (multiples of α) into a symbol count.
pub fn symbols(frac_of_alpha: Rational64, alpha_symbols: u64) -> Rational64 {
    frac_of_alpha * Rational64::from_integer(alpha_symbols as i64)
}

fn check_kr(k: usize, r: usize) -> Result<(i64, i64)> {
    if r < 2 || k < 2 {
        return Err(Error::InvalidParams(format!(
            "comparison formulas need k >= 2 and r >= 2, got k={k} r={r}"
        )));
    }
    Ok((k as i64, r as i64))
}

/// Average download to rebuild one parity node under classical two-instance
/// piggybacking, as a multiple of per-node storage α: the plain parity costs 2k
/// half-cells, each of the other r-1 costs k+r-1.
pub fn two_instance_parity_avg(k: usize, r: usize) -> Result<Rational64> {
    let (k, r) = check_kr(k, r)?;
    Ok(Rational64::new(2 * k + (r - 1) * (k + r - 1), 2 * r))
}

/// Average parity download of the modified two-instance design, where the first
/// parity's cells are folded into another parity's carried sums: two nodes cost
/// (k+r) half-cells each, the remaining r-2 cost (k+r-1).
pub fn two_instance_modified_parity_avg(k: usize, r: usize) -> Result<Rational64> {
    let (k, r) = check_kr(k, r)?;
    Ok(Rational64::new(
        (k + r + 1) + (r - 1) * (k + r - 1),
        2 * r,
    ))
}

/// Parity repair fraction of the Hadamard-design reference at rate (k+2, k).
pub fn hadamard_parity_reference(k: usize) -> Rational64 {
    Rational64::new(k as i64 + 1, 2)
}

/// One row of the design comparison: all values are repair downloads as exact
/// multiples of per-node storage α. `parity_new` takes s = r instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompareRow {
    pub k: usize,
    pub r: usize,
    pub msr_bound: Rational64,
    pub systematic_new: Rational64,
    pub parity_new: Rational64,
    pub two_instance_avg: Rational64,
    pub two_instance_modified: Rational64,
    /// Reference column; published for r = 2 only.
    pub hadamard_parity: Option<Rational64>,
}

pub fn compare_rows(ks: &[usize], r: usize) -> Result<Vec<CompareRow>> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let bw = crate::piggyback::repair_bandwidth(k, r, r)?;
        out.push(CompareRow {
            k,
            r,
            msr_bound: bw.msr_bound,
            systematic_new: bw.gamma_system,
            parity_new: bw.gamma_parity,
            two_instance_avg: two_instance_parity_avg(k, r)?,
            two_instance_modified: two_instance_modified_parity_avg(k, r)?,
            hadamard_parity: (r == 2).then(|| hadamard_parity_reference(k)),
        });
    }
    Ok(out)
}
