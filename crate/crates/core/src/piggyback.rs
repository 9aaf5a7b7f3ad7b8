//! The layered transform: s codewords of the base code are stored side by side, and
//! each parity node's last cell additionally carries a binary sum of earlier-instance
//! cells from OTHER parity nodes. Those carried sums are what make parity repair
//! cheap: a failed parity rebuilds its last-instance cell from k systematic cells,
//! then peels each of its earlier cells out of the one carried sum that contains it.
//!
//! Which cell lands in which sum is the injection table p: cell (parity i, instance
//! j < s) is carried by parity p[i][j], with p[i][s-1] = i marking the node's own
//! slot. Valid tables have injective rows that avoid their own index before the last
//! slot. Balanced tables (every carried sum holding exactly s-1 cells) minimize the
//! average parity repair cost; the two diagonal families below are balanced for
//! every 2 <= s <= r.

use std::collections::BTreeMap;

use itertools::Itertools;

use crate::base::BaseMsrCode;
use crate::meter::{MeteredSource, Phase, Rational64, SymbolSource, TransferLedger};
use crate::{par, Error, Result};

fn xor_into(dst: &mut [u16], src: &[u16]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

/// Outcome of checking a candidate table, 1-based rows as serialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableReport {
    pub r: usize,
    pub s: usize,
    pub issues: Vec<String>,
    /// Carried-sum sizes per parity; meaningful only when shape checks passed.
    pub support_sizes: Vec<usize>,
}

impl TableReport {
    pub fn valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// Valid and every carried sum has exactly s-1 members.
    pub fn optimal(&self) -> bool {
        self.valid() && self.support_sizes.iter().all(|&n| n + 1 == self.s)
    }
}

/// Checks 1-based rows without constructing a table; every violation is reported.
pub fn inspect_rows(rows: &[Vec<usize>]) -> TableReport {
    let r = rows.len();
    let s = rows.first().map_or(0, Vec::len);
    let mut issues = Vec::new();
    if r < 2 {
        issues.push(format!("need at least 2 rows, got {r}"));
    }
    if s < 2 || s > r {
        issues.push(format!("instance count must satisfy 2 <= s <= r, got s={s} r={r}"));
    }
    if rows.iter().any(|row| row.len() != s) {
        issues.push("rows have unequal lengths".into());
    }
    if !issues.is_empty() {
        return TableReport { r, s, issues, support_sizes: Vec::new() };
    }
    for (i0, row) in rows.iter().enumerate() {
        let i = i0 + 1;
        for (j0, &v) in row.iter().enumerate() {
            if v < 1 || v > r {
                issues.push(format!("row {i} slot {}: value {v} outside 1..={r}", j0 + 1));
            }
        }
        if row.iter().any(|&v| v < 1 || v > r) {
            continue;
        }
        if row[s - 1] != i {
            issues.push(format!("row {i} must end with {i}, ends with {}", row[s - 1]));
        }
        for (j0, &v) in row[..s - 1].iter().enumerate() {
            if v == i {
                issues.push(format!("row {i} slot {}: self-reference before the last slot", j0 + 1));
            }
        }
        if row.iter().duplicates().next().is_some() {
            issues.push(format!("row {i} repeats a value"));
        }
    }
    let mut support_sizes = vec![0usize; r];
    if issues.is_empty() {
        for row in rows {
            for &v in &row[..s - 1] {
                support_sizes[v - 1] += 1;
            }
        }
    }
    TableReport { r, s, issues, support_sizes }
}

/// The injection functions of one piggyback design. Internally 0-based; the
/// serialized form (`one_based_rows`) is 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InjectionTable {
    r: usize,
    s: usize,
    /// p[i][j]: parity whose last cell carries cell (parity i, instance j); p[i][s-1] = i.
    p: Vec<Vec<usize>>,
    /// support[l]: pairs (parity, instance) carried by parity l, instance < s-1,
    /// in ascending order.
    support: Vec<Vec<(usize, usize)>>,
}

impl InjectionTable {
    fn from_zero_based(p: Vec<Vec<usize>>) -> Result<InjectionTable> {
        let one_based: Vec<Vec<usize>> = p
            .iter()
            .map(|row| row.iter().map(|&v| v + 1).collect())
            .collect();
        let report = inspect_rows(&one_based);
        if !report.valid() {
            return Err(Error::InvalidInjection(report.issues.join("; ")));
        }
        let (r, s) = (report.r, report.s);
        let mut support = vec![Vec::new(); r];
        for (i, row) in p.iter().enumerate() {
            for (j, &l) in row[..s - 1].iter().enumerate() {
                support[l].push((i, j));
            }
        }
        for members in &mut support {
            members.sort_unstable();
        }
        Ok(InjectionTable { r, s, p, support })
    }

    pub fn from_one_based(rows: &[Vec<usize>]) -> Result<InjectionTable> {
        let report = inspect_rows(rows);
        if !report.valid() {
            return Err(Error::InvalidInjection(report.issues.join("; ")));
        }
        let p = rows
            .iter()
            .map(|row| row.iter().map(|&v| v - 1).collect())
            .collect();
        Self::from_zero_based(p)
    }

    /// Diagonal family constant along main diagonals: p[i][j] = (i - j + s - 1) mod r
    /// (0-based). Balanced for every 2 <= s <= r.
    pub fn main_diagonal(r: usize, s: usize) -> Result<InjectionTable> {
        Self::check_rs(r, s)?;
        Self::from_zero_based(
            (0..r)
                .map(|i| (0..s).map(|j| (i + s - 1 - j) % r).collect())
                .collect(),
        )
    }

    /// Diagonal family constant along anti-diagonals: p[i][j] = (i + j + 1 - s) mod r
    /// (0-based, least nonnegative residue).
    pub fn anti_diagonal(r: usize, s: usize) -> Result<InjectionTable> {
        Self::check_rs(r, s)?;
        Self::from_zero_based(
            (0..r)
                .map(|i| (0..s).map(|j| (i + j + 1 + r - s) % r).collect())
                .collect(),
        )
    }

    fn check_rs(r: usize, s: usize) -> Result<()> {
        if s < 2 || s > r {
            return Err(Error::InvalidParams(format!(
                "instance count must satisfy 2 <= s <= r, got s={s} r={r}"
            )));
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Parity carrying cell (parity i, instance j); `at(i, s-1) = i`.
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.p[i][j]
    }

    /// Members of parity l's carried sum: (parity, instance) pairs, instance < s-1.
    pub fn support(&self, l: usize) -> &[(usize, usize)] {
        &self.support[l]
    }

    pub fn support_sizes(&self) -> Vec<usize> {
        self.support.iter().map(Vec::len).collect()
    }

    /// All carried sums hold exactly s-1 cells.
    pub fn is_balanced(&self) -> bool {
        self.support.iter().all(|m| m.len() + 1 == self.s)
    }

    /// Member of either diagonal family.
    pub fn is_cyclic(&self) -> bool {
        InjectionTable::main_diagonal(self.r, self.s)
            .map(|t| t.p == self.p)
            .unwrap_or(false)
            || InjectionTable::anti_diagonal(self.r, self.s)
                .map(|t| t.p == self.p)
                .unwrap_or(false)
    }

    pub fn one_based_rows(&self) -> Vec<Vec<usize>> {
        self.p
            .iter()
            .map(|row| row.iter().map(|&v| v + 1).collect())
            .collect()
    }

    /// Support memberships with 1-based parity and instance ids, for comparison
    /// against published listings.
    pub fn supports_one_based(&self) -> Vec<Vec<(usize, usize)>> {
        self.support
            .iter()
            .map(|m| m.iter().map(|&(i, j)| (i + 1, j + 1)).collect())
            .collect()
    }

    /// Every valid table for (r, s), in deterministic order. Sizes grow as
    /// ((r-1)!/(r-s)!)^r; guarded to small parameter sets.
    pub fn enumerate_valid(r: usize, s: usize) -> Result<Vec<InjectionTable>> {
        Self::check_rs(r, s)?;
        let per_row: usize = (r - s + 1..r).product::<usize>().max(1);
        let total = per_row.checked_pow(r as u32).filter(|&t| t <= 1 << 20);
        if total.is_none() {
            return Err(Error::InvalidParams(format!(
                "table enumeration for r={r} s={s} is too large"
            )));
        }
        let row_choices: Vec<Vec<Vec<usize>>> = (0..r)
            .map(|i| {
                (0..r)
                    .filter(|&x| x != i)
                    .permutations(s - 1)
                    .collect::<Vec<_>>()
            })
            .collect();
        row_choices
            .into_iter()
            .multi_cartesian_product()
            .map(|heads| {
                let p = heads
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut row)| {
                        row.push(i);
                        row
                    })
                    .collect();
                Self::from_zero_based(p)
            })
            .collect()
    }
}

/// One node's stored cells: s slices of α′ symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub cells: Vec<Vec<u16>>,
}

impl SymbolSource for [Payload] {
    fn node_count(&self) -> usize {
        self.len()
    }
    fn instance_count(&self) -> usize {
        self.first().map_or(0, |p| p.cells.len())
    }
    fn cell_len(&self) -> usize {
        self.first()
            .and_then(|p| p.cells.first())
            .map_or(0, Vec::len)
    }
    fn cell(&self, node: usize, instance: usize) -> &[u16] {
        &self[node].cells[instance]
    }
}

/// Analytic repair costs as exact multiples of per-node storage α.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bandwidth {
    pub gamma_system: Rational64,
    pub gamma_parity: Rational64,
    /// Cut-set floor for any MDS code at this (k, r); equals `gamma_system`.
    pub msr_bound: Rational64,
}

/// gamma_system = (k+r-1)/r; gamma_parity = (k+s(s-1))/s, assuming a balanced table.
pub fn repair_bandwidth(k: usize, r: usize, s: usize) -> Result<Bandwidth> {
    if k < 2 || r < 2 || r > k || s < 2 || s > r {
        return Err(Error::InvalidParams(format!(
            "need 2 <= s <= r <= k and k >= 2, got k={k} r={r} s={s}"
        )));
    }
    let (k, r, s) = (k as i64, r as i64, s as i64);
    let system = Rational64::new(k + r - 1, r);
    Ok(Bandwidth {
        gamma_system: system,
        gamma_parity: Rational64::new(k + s * (s - 1), s),
        msr_bound: system,
    })
}

/// Per-helper symbol counts of one parity repair, checked against the constant
/// profile the diagonal tables guarantee at s = r.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HelperProfile {
    pub per_helper: BTreeMap<usize, u64>,
    /// Symbols every systematic helper sent: α′ (one cell).
    pub systematic_symbols: u64,
    /// Symbols every surviving parity helper sent: r·α′ (its whole payload).
    pub parity_symbols: u64,
}

/// s stored instances of one base code plus carried parity sums.
#[derive(Clone, Debug)]
pub struct PiggybackedCode {
    base: BaseMsrCode,
    table: InjectionTable,
}

impl PiggybackedCode {
    /// Builds the code, refusing unbalanced tables: they inflate the average parity
    /// repair cost. `allow_suboptimal` exists for exactly that experiment.
    pub fn new(base: BaseMsrCode, table: InjectionTable) -> Result<PiggybackedCode> {
        if !table.is_balanced() {
            return Err(Error::SuboptimalInjection(table.support_sizes()));
        }
        Self::allow_suboptimal(base, table)
    }

    pub fn allow_suboptimal(base: BaseMsrCode, table: InjectionTable) -> Result<PiggybackedCode> {
        if table.r() != base.r() {
            return Err(Error::InvalidParams(format!(
                "table is for {} parities, code has {}",
                table.r(),
                base.r()
            )));
        }
        Ok(PiggybackedCode { base, table })
    }

    pub fn base(&self) -> &BaseMsrCode {
        &self.base
    }

    pub fn table(&self) -> &InjectionTable {
        &self.table
    }

    pub fn s(&self) -> usize {
        self.table.s()
    }

    pub fn node_count(&self) -> usize {
        self.base.node_count()
    }

    /// Symbols per node: s·α′.
    pub fn alpha(&self) -> usize {
        self.s() * self.base.alpha_prime()
    }

    /// Encodes s source instances, each k cells of α′ symbols, into k+r payloads.
    pub fn encode(&self, instances: &[Vec<Vec<u16>>]) -> Result<Vec<Payload>> {
        let s = self.s();
        let (k, r) = (self.base.k(), self.base.r());
        if instances.len() != s {
            return Err(Error::LengthMismatch {
                expected: s,
                got: instances.len(),
            });
        }
        let mut parities = Vec::with_capacity(s);
        for inst in instances {
            parities.push(self.base.encode(inst)?);
        }
        let mut nodes = Vec::with_capacity(k + r);
        for i in 0..k {
            nodes.push(Payload {
                cells: (0..s).map(|j| instances[j][i].clone()).collect(),
            });
        }
        for i in 0..r {
            let mut cells: Vec<Vec<u16>> = (0..s).map(|j| parities[j][i].clone()).collect();
            for &(ip, jp) in self.table.support(i) {
                xor_into(&mut cells[s - 1], &parities[jp][ip]);
            }
            nodes.push(Payload { cells });
        }
        Ok(nodes)
    }

    /// Prepares decoding from one k-subset; the base factorization is shared by all
    /// s instances and every codeword decoded through this handle.
    pub fn subset_decoder(&self, nodes: &[usize]) -> Result<SubsetDecoder<'_>> {
        Ok(SubsetDecoder {
            code: self,
            solver: self.base.subset_solver(nodes)?,
        })
    }

    /// Decodes all s source instances from any k payloads.
    pub fn reconstruct(&self, shares: &[(usize, &Payload)]) -> Result<Vec<Vec<Vec<u16>>>> {
        let nodes: Vec<usize> = shares.iter().map(|&(n, _)| n).collect();
        self.subset_decoder(&nodes)?.reconstruct(shares)
    }

    fn check_stored<S: SymbolSource + ?Sized>(&self, stored: &S) -> Result<()> {
        let checks = [
            (stored.node_count(), self.node_count()),
            (stored.instance_count(), self.s()),
            (stored.cell_len(), self.base.alpha_prime()),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::LengthMismatch { expected, got });
            }
        }
        Ok(())
    }

    /// Rebuilds any failed node, metering every fetched symbol.
    pub fn repair<S: SymbolSource + ?Sized>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<(Payload, TransferLedger)> {
        if failed < self.base.k() {
            self.repair_systematic(stored, failed)
        } else {
            self.repair_parity(stored, failed)
        }
    }

    /// Systematic repair: one row class from every cell of every helper, carried
    /// sums cancelled row-wise, then per-instance base repair. Downloads exactly
    /// (k+r-1)·s·α′/r symbols, s·α′/r per helper.
    pub fn repair_systematic<S: SymbolSource + ?Sized>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<(Payload, TransferLedger)> {
        self.check_stored(stored)?;
        let s = self.s();
        let (k, r) = (self.base.k(), self.base.r());
        let sel = self.base.repair_selector(failed)?;
        let m = MeteredSource::new(stored, failed);
        let mut inst_rows: Vec<Vec<Vec<u16>>> = vec![vec![Vec::new(); k + r]; s];
        for h in 0..k + r {
            if h == failed {
                continue;
            }
            for (j, rows) in inst_rows.iter_mut().enumerate() {
                rows[h] = m.fetch_rows(h, j, &sel.rows, Phase::SelectorRows)?;
            }
        }
        // Carried sums only involve instances before the last, so the row images of
        // the sums are XORs of rows already fetched.
        let corrections: Vec<Vec<u16>> = (0..r)
            .map(|l| {
                let mut corr = vec![0u16; sel.rows.len()];
                for &(ip, jp) in self.table.support(l) {
                    xor_into(&mut corr, &inst_rows[jp][k + ip]);
                }
                corr
            })
            .collect();
        for (l, corr) in corrections.iter().enumerate() {
            xor_into(&mut inst_rows[s - 1][k + l], corr);
        }
        let cells: Vec<Vec<u16>> = par::map_indexed(s, |j| {
            self.base.repair_systematic(failed, &inst_rows[j])
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok((Payload { cells }, m.finish()))
    }

    /// Parity repair: k last-instance systematic cells rebuild every last-instance
    /// parity; each earlier cell of the failed node is peeled out of the carried sum
    /// holding it; the failed node's own carried sum is re-added from its members.
    /// Downloads exactly `parity_repair_cells(failed-k)`·α′ symbols.
    pub fn repair_parity<S: SymbolSource + ?Sized>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<(Payload, TransferLedger)> {
        self.check_stored(stored)?;
        let s = self.s();
        let k = self.base.k();
        if failed < k || failed >= self.node_count() {
            return Err(Error::InvalidNodeSet(format!(
                "parity repair needs a parity node, got {failed}"
            )));
        }
        let i0 = failed - k;
        let m = MeteredSource::new(stored, failed);
        let last_sources: Vec<Vec<u16>> = (0..k)
            .map(|h| {
                m.fetch_cell(h, s - 1, Phase::ParityRebuild)
                    .map(<[u16]>::to_vec)
            })
            .collect::<Result<_>>()?;
        let last_parities = self.base.encode(&last_sources)?;
        let mut cells: Vec<Vec<u16>> = vec![Vec::new(); s];
        let mut carried = last_parities[i0].clone();
        for &(ip, jp) in self.table.support(i0) {
            let member = m.fetch_cell(k + ip, jp, Phase::PiggybackRestore)?;
            xor_into(&mut carried, member);
        }
        cells[s - 1] = carried;
        for j in 0..s - 1 {
            let l = self.table.at(i0, j);
            let mut cell = m
                .fetch_cell(k + l, s - 1, Phase::PiggybackExtract)?
                .to_vec();
            xor_into(&mut cell, &last_parities[l]);
            for &(ip, jp) in self.table.support(l) {
                if (ip, jp) == (i0, j) {
                    continue;
                }
                let member = m.fetch_cell(k + ip, jp, Phase::PiggybackExtract)?;
                xor_into(&mut cell, member);
            }
            cells[j] = cell;
        }
        Ok((Payload { cells }, m.finish()))
    }

    /// Cells of α′ symbols a repair of parity node `i0` downloads: k systematic
    /// cells plus one carried-sum peel per instance slot.
    pub fn parity_repair_cells(&self, i0: usize) -> usize {
        let sizes = self.table.support_sizes();
        self.base.k()
            + (0..self.s())
                .map(|j| sizes[self.table.at(i0, j)])
                .sum::<usize>()
    }

    /// Runs a metered parity repair and checks the constant per-helper split the
    /// diagonal tables guarantee at s = r: each systematic helper sends one cell,
    /// each surviving parity helper its whole payload.
    pub fn per_parity_helper_profile<S: SymbolSource + ?Sized>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<HelperProfile> {
        let r = self.base.r();
        if self.s() != r || !self.table.is_cyclic() {
            return Err(Error::Unsupported(
                "constant per-helper split is guaranteed only for diagonal tables with s = r"
                    .into(),
            ));
        }
        let (_, ledger) = self.repair_parity(stored, failed)?;
        let per_helper = ledger.per_helper();
        let ap = self.base.alpha_prime() as u64;
        let k = self.base.k();
        for (&h, &sent) in &per_helper {
            let expected = if h < k { ap } else { r as u64 * ap };
            if sent != expected {
                return Err(Error::ProfileMismatch {
                    helper: h,
                    expected,
                    got: sent,
                });
            }
        }
        Ok(HelperProfile {
            per_helper,
            systematic_symbols: ap,
            parity_symbols: r as u64 * ap,
        })
    }
}

/// Reusable decoder for one fixed k-subset.
pub struct SubsetDecoder<'a> {
    code: &'a PiggybackedCode,
    solver: crate::base::SubsetSolver<'a>,
}

impl SubsetDecoder<'_> {
    /// Decodes one codeword: [instance][source node][symbol].
    pub fn reconstruct(&self, shares: &[(usize, &Payload)]) -> Result<Vec<Vec<Vec<u16>>>> {
        let code = self.code;
        let s = code.s();
        let k = code.base.k();
        for &(_, p) in shares {
            if p.cells.len() != s {
                return Err(Error::LengthMismatch {
                    expected: s,
                    got: p.cells.len(),
                });
            }
        }
        let mut sources = Vec::with_capacity(s);
        let mut parities = Vec::with_capacity(s - 1);
        for j in 0..s - 1 {
            let shares_j: Vec<(usize, &[u16])> = shares
                .iter()
                .map(|&(n, p)| (n, p.cells[j].as_slice()))
                .collect();
            let src = self.solver.solve(&shares_j)?;
            parities.push(code.base.encode(&src)?);
            sources.push(src);
        }
        // Earlier instances are fully known now, so each parity share's carried sum
        // can be recomputed and stripped before the last instance is decoded.
        let stripped: Vec<(usize, Vec<u16>)> = shares
            .iter()
            .map(|&(n, p)| {
                let mut cell = p.cells[s - 1].clone();
                if n >= k {
                    for &(ip, jp) in code.table.support(n - k) {
                        xor_into(&mut cell, &parities[jp][ip]);
                    }
                }
                (n, cell)
            })
            .collect();
        let shares_last: Vec<(usize, &[u16])> = stripped
            .iter()
            .map(|(n, c)| (*n, c.as_slice()))
            .collect();
        sources.push(self.solver.solve(&shares_last)?);
        Ok(sources)
    }
}
