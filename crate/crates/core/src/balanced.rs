//! Balanced-download composition. A single layered code downloads far more from
//! parity helpers than from systematic ones during a parity repair. Rotating the
//! parity role over the nodes with a block design evens this out: b independent
//! instances are stored side by side, instance l placing its r parity payloads on
//! the nodes of block A_l. Any two nodes share a block in exactly λ instances, so
//! every helper of a failed node sends λ whole instance-payloads plus (b-λ) row
//! classes — the same count for every helper, every failure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::base::{self, BaseParams};
use crate::gf::Width;
use crate::meter::{Rational64, SymbolSource, TransferLedger};
use crate::piggyback::{InjectionTable, Payload, PiggybackedCode};
use crate::{par, Error, Result};

/// A block design over points {1..n}: b blocks of size r, every point in e blocks,
/// every pair in λ blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibdDesign {
    pub n: usize,
    pub r: usize,
    pub lambda: usize,
    /// 1-based point ids.
    pub blocks: Vec<Vec<usize>>,
}

/// Replication and block counts forced by (n, r, λ): e = λ(n-1)/(r-1),
/// b = λn(n-1)/(r(r-1)). Errors when the divisibilities fail (no such design).
pub fn expected_counts(n: usize, r: usize, lambda: usize) -> Result<(usize, usize)> {
    if n < 2 || r < 2 || r > n || lambda == 0 {
        return Err(Error::InvalidDesign(format!(
            "need 2 <= r <= n and lambda >= 1, got n={n} r={r} lambda={lambda}"
        )));
    }
    let e_num = lambda * (n - 1);
    let b_num = lambda * n * (n - 1);
    if e_num % (r - 1) != 0 || b_num % (r * (r - 1)) != 0 {
        return Err(Error::InvalidDesign(format!(
            "no (n={n}, r={r}, lambda={lambda}) design: counts are not integers"
        )));
    }
    Ok((e_num / (r - 1), b_num / (r * (r - 1))))
}

/// Outcome of brute-force counting every point and pair incidence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignReport {
    pub e: usize,
    pub b: usize,
    pub issues: Vec<String>,
}

impl DesignReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl BibdDesign {
    /// Counts every incidence and compares against the forced parameters.
    pub fn validate(&self) -> DesignReport {
        let (n, r, lambda) = (self.n, self.r, self.lambda);
        let mut issues = Vec::new();
        let (e, b) = match expected_counts(n, r, lambda) {
            Ok(eb) => eb,
            Err(err) => {
                return DesignReport {
                    e: 0,
                    b: 0,
                    issues: vec![err.to_string()],
                }
            }
        };
        if self.blocks.len() != b {
            issues.push(format!("expected {b} blocks, got {}", self.blocks.len()));
        }
        for (idx, block) in self.blocks.iter().enumerate() {
            if block.len() != r {
                issues.push(format!("block {} has size {}, expected {r}", idx + 1, block.len()));
            }
            if block.iter().any(|&x| x < 1 || x > n) {
                issues.push(format!("block {} has a point outside 1..={n}", idx + 1));
            }
            let mut sorted = block.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != block.len() {
                issues.push(format!("block {} repeats a point", idx + 1));
            }
        }
        if !issues.is_empty() {
            return DesignReport { e, b, issues };
        }
        let mut point_count = vec![0usize; n];
        let mut pair_count = vec![vec![0usize; n]; n];
        for block in &self.blocks {
            for (ai, &a) in block.iter().enumerate() {
                point_count[a - 1] += 1;
                for &c in &block[ai + 1..] {
                    let (lo, hi) = (a.min(c) - 1, a.max(c) - 1);
                    pair_count[lo][hi] += 1;
                }
            }
        }
        for (x, &count) in point_count.iter().enumerate() {
            if count != e {
                issues.push(format!("point {} lies in {count} blocks, expected {e}", x + 1));
            }
        }
        for lo in 0..n {
            for hi in lo + 1..n {
                if pair_count[lo][hi] != lambda {
                    issues.push(format!(
                        "pair ({}, {}) lies in {} blocks, expected {lambda}",
                        lo + 1,
                        hi + 1,
                        pair_count[lo][hi]
                    ));
                }
            }
        }
        DesignReport { e, b, issues }
    }

    /// n×b 0/1 matrix: row = point, column = block.
    pub fn incidence_matrix(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.blocks.len()]; self.n];
        for (col, block) in self.blocks.iter().enumerate() {
            for &x in block {
                m[x - 1][col] = 1;
            }
        }
        m
    }
}

/// n blocks by cyclic translation: A_i = {(i-1+o mod n)+1 : o in offsets}. The pair
/// balance is counted, not assumed; offset sets that are not difference families
/// are rejected.
pub fn cyclic_bibd(n: usize, offsets: &[usize]) -> Result<BibdDesign> {
    let r = offsets.len();
    if r < 2 || r > n {
        return Err(Error::InvalidDesign(format!(
            "need 2 <= |offsets| <= n, got {r} offsets for n={n}"
        )));
    }
    let blocks: Vec<Vec<usize>> = (0..n)
        .map(|i| offsets.iter().map(|&o| (i + o) % n + 1).collect())
        .collect();
    // Every point lies in exactly r blocks by translation; λ must be read off the
    // pair counts and then be constant, which validate() confirms.
    let first_pair = {
        let a = blocks.iter().filter(|b| b.contains(&1) && b.contains(&2)).count();
        a
    };
    let design = BibdDesign {
        n,
        r,
        lambda: first_pair,
        blocks,
    };
    let report = design.validate();
    if !report.ok() {
        return Err(Error::InvalidDesign(format!(
            "cyclic translation of {offsets:?} mod {n} is not a block design: {}",
            report.issues.join("; ")
        )));
    }
    Ok(design)
}

/// The (13, 4, 1) design whose blocks are {i-1, i, i+2, i+8} translates.
pub fn preset_13_4_1() -> BibdDesign {
    cyclic_bibd(13, &[0, 1, 3, 9]).expect("fixed difference family")
}

/// The Fano plane as a cyclic (7, 3, 1) design.
pub fn preset_fano() -> BibdDesign {
    cyclic_bibd(7, &[0, 1, 3]).expect("fixed difference family")
}

/// Per-helper repair download as an exact fraction of per-node storage:
/// (b + (r-1)λ)/(br), equal to (r-1)²/(n(n-1)) + 1/r for any admissible λ.
pub fn per_helper_fraction(n: usize, r: usize, lambda: usize) -> Result<Rational64> {
    let (_, b) = expected_counts(n, r, lambda)?;
    let from_counts = Rational64::new((b + (r - 1) * lambda) as i64, (b * r) as i64);
    let closed = Rational64::new(((r - 1) * (r - 1)) as i64, (n * (n - 1)) as i64)
        + Rational64::new(1, r as i64);
    assert_eq!(from_counts, closed, "count and closed forms disagree");
    Ok(closed)
}

/// How far the balanced per-helper download sits above the floor α/r:
/// 1 + r(r-1)²/(n(n-1)).
pub fn balance_overhead(n: usize, r: usize) -> Rational64 {
    Rational64::from_integer(1)
        + Rational64::new((r * (r - 1) * (r - 1)) as i64, (n * (n - 1)) as i64)
}

/// b layered instances composed over a design; node x is a parity node in exactly
/// the instances whose block contains x.
#[derive(Clone, Debug)]
pub struct BalancedCode {
    design: BibdDesign,
    k: usize,
    instances: Vec<PiggybackedCode>,
    /// to_global[l][local] = global node; locals 0..k are the sorted block
    /// complement (systematic), k..k+r the sorted block (parity).
    to_global: Vec<Vec<usize>>,
    to_local: Vec<Vec<usize>>,
}

/// Remaps one instance's slice of the stored cluster into the node/instance
/// coordinates its layered code expects.
struct InstanceView<'a, S: SymbolSource + ?Sized> {
    inner: &'a S,
    to_global: &'a [usize],
    first_cell: usize,
    s: usize,
}

impl<S: SymbolSource + ?Sized> SymbolSource for InstanceView<'_, S> {
    fn node_count(&self) -> usize {
        self.to_global.len()
    }
    fn instance_count(&self) -> usize {
        self.s
    }
    fn cell_len(&self) -> usize {
        self.inner.cell_len()
    }
    fn cell(&self, node: usize, instance: usize) -> &[u16] {
        self.inner.cell(self.to_global[node], self.first_cell + instance)
    }
}

impl BalancedCode {
    /// Composes over `design` with every instance's base code proven decodable from
    /// all k-subsets. Instance l draws its scales from seed+l.
    pub fn build(design: &BibdDesign, k: usize, width: Width, seed: u64) -> Result<BalancedCode> {
        Self::build_inner(design, k, width, seed, true)
    }

    /// Skips the per-instance decodability sweep; repair behavior is identical.
    pub fn build_unverified(
        design: &BibdDesign,
        k: usize,
        width: Width,
        seed: u64,
    ) -> Result<BalancedCode> {
        Self::build_inner(design, k, width, seed, false)
    }

    fn build_inner(
        design: &BibdDesign,
        k: usize,
        width: Width,
        seed: u64,
        verify: bool,
    ) -> Result<BalancedCode> {
        let report = design.validate();
        if !report.ok() {
            return Err(Error::InvalidDesign(report.issues.join("; ")));
        }
        let (n, r) = (design.n, design.r);
        if n != k + r {
            return Err(Error::InvalidDesign(format!(
                "design has n={n} points but k={k} and r={r} give {}",
                k + r
            )));
        }
        let b = design.blocks.len();
        let instances = par::map_indexed(b, |l| {
            let params = BaseParams {
                k,
                r,
                width,
                seed: seed.wrapping_add(l as u64),
            };
            let code = if verify {
                base::build(params)?
            } else {
                base::build_unverified(params)?
            };
            PiggybackedCode::new(code, InjectionTable::main_diagonal(r, r)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut to_global = Vec::with_capacity(b);
        let mut to_local = Vec::with_capacity(b);
        for block in &design.blocks {
            let mut parity: Vec<usize> = block.iter().map(|&x| x - 1).collect();
            parity.sort_unstable();
            let systematic: Vec<usize> = (0..n).filter(|g| !parity.contains(g)).collect();
            let globals: Vec<usize> = systematic.into_iter().chain(parity).collect();
            let mut inverse = vec![0usize; n];
            for (local, &g) in globals.iter().enumerate() {
                inverse[g] = local;
            }
            to_global.push(globals);
            to_local.push(inverse);
        }
        Ok(BalancedCode {
            design: design.clone(),
            k,
            instances,
            to_global,
            to_local,
        })
    }

    pub fn design(&self) -> &BibdDesign {
        &self.design
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.design.r
    }

    pub fn b(&self) -> usize {
        self.design.blocks.len()
    }

    pub fn node_count(&self) -> usize {
        self.design.n
    }

    pub fn instances(&self) -> &[PiggybackedCode] {
        &self.instances
    }

    /// Cells of one instance payload: s = r.
    pub fn cells_per_instance(&self) -> usize {
        self.design.r
    }

    /// Symbols per node across all instances: b·r·α′.
    pub fn alpha(&self) -> usize {
        self.b() * self.instances[0].alpha()
    }

    /// Instances in which `node` (0-based) holds a parity payload.
    pub fn parity_instances(&self, node: usize) -> Vec<usize> {
        (0..self.b())
            .filter(|&l| self.to_local[l][node] >= self.k)
            .collect()
    }

    /// Exact per-helper download for one repair, in symbols:
    /// λ·(whole instance payload) + (b-λ)·(one row class per cell).
    pub fn beta_symbols(&self) -> u64 {
        let ap = self.instances[0].base().alpha_prime() as u64;
        let (r, b, lambda) = (self.r() as u64, self.b() as u64, self.design.lambda as u64);
        lambda * r * ap + (b - lambda) * ap
    }

    /// Encodes b instance sources; `sources[l][j][i]` is source cell i of
    /// sub-instance j of instance l. Returns n node payloads of b·r cells each.
    pub fn encode(&self, sources: &[Vec<Vec<Vec<u16>>>]) -> Result<Vec<Payload>> {
        if sources.len() != self.b() {
            return Err(Error::LengthMismatch {
                expected: self.b(),
                got: sources.len(),
            });
        }
        let per_instance = par::map_indexed(self.b(), |l| self.instances[l].encode(&sources[l]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let n = self.node_count();
        let mut nodes: Vec<Payload> = (0..n).map(|_| Payload { cells: Vec::new() }).collect();
        for (l, locals) in per_instance.into_iter().enumerate() {
            for (local, payload) in locals.into_iter().enumerate() {
                nodes[self.to_global[l][local]].cells.extend(payload.cells);
            }
        }
        debug_assert!(nodes.iter().all(|p| p.cells.len() == self.b() * self.r()));
        Ok(nodes)
    }

    /// Decodes every instance from any k node payloads:
    /// result[l][j][i] = source cell i of sub-instance j of instance l.
    pub fn reconstruct(&self, shares: &[(usize, &Payload)]) -> Result<Vec<Vec<Vec<Vec<u16>>>>> {
        let s = self.cells_per_instance();
        for &(_, p) in shares {
            if p.cells.len() != self.b() * s {
                return Err(Error::LengthMismatch {
                    expected: self.b() * s,
                    got: p.cells.len(),
                });
            }
        }
        (0..self.b())
            .map(|l| {
                let local_shares: Vec<(usize, Payload)> = shares
                    .iter()
                    .map(|&(g, p)| {
                        (
                            self.to_local[l][g],
                            Payload {
                                cells: p.cells[l * s..(l + 1) * s].to_vec(),
                            },
                        )
                    })
                    .collect();
                let refs: Vec<(usize, &Payload)> =
                    local_shares.iter().map(|(n, p)| (*n, p)).collect();
                self.instances[l].reconstruct(&refs)
            })
            .collect()
    }

    /// Rebuilds one failed node instance by instance; the merged ledger reports
    /// global helper ids.
    pub fn repair<S: SymbolSource + ?Sized + Sync>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<(Payload, TransferLedger)> {
        let s = self.cells_per_instance();
        let checks = [
            (stored.node_count(), self.node_count()),
            (stored.instance_count(), self.b() * s),
            (
                stored.cell_len(),
                self.instances[0].base().alpha_prime(),
            ),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::LengthMismatch { expected, got });
            }
        }
        if failed >= self.node_count() {
            return Err(Error::InvalidNodeSet(format!(
                "node {failed} out of range 0..{}",
                self.node_count()
            )));
        }
        let outcomes = par::map_indexed(self.b(), |l| {
            let view = InstanceView {
                inner: stored,
                to_global: &self.to_global[l],
                first_cell: l * s,
                s,
            };
            let (payload, ledger) = self.instances[l].repair(&view, self.to_local[l][failed])?;
            Ok((payload, ledger.relabel(|local| self.to_global[l][local])))
        })
        .into_iter()
        .collect::<Result<Vec<(Payload, TransferLedger)>>>()?;
        let mut cells = Vec::with_capacity(self.b() * s);
        let mut ledger = TransferLedger::new(failed);
        for (payload, sub) in outcomes {
            cells.extend(payload.cells);
            ledger.merge(sub);
        }
        Ok((Payload { cells }, ledger))
    }

    /// Per-helper totals of one repair; the balanced property says all values are
    /// equal to `beta_symbols`.
    pub fn repair_profile<S: SymbolSource + ?Sized + Sync>(
        &self,
        stored: &S,
        failed: usize,
    ) -> Result<(Payload, BTreeMap<usize, u64>)> {
        let (payload, ledger) = self.repair(stored, failed)?;
        Ok((payload, ledger.per_helper()))
    }
}
