//! The (k+r, k) systematic array code the piggyback layers build on.
//!
//! Every node stores α′ = r^k symbols. A symbol index is read as k base-r digits,
//! digit i being least significant for systematic node i. Parity j applies to source
//! i the scaled permutation that shifts digit i up by j (mod r); parity 0 is a plain
//! scaled sum. Rebuilding systematic node i needs only the rows whose digit i is 0 —
//! the same α′/r row class from every helper — because parity j's equations on that
//! class reach f_i exactly on the class with digit i equal to (r-j) mod r.
//!
//! Scales are drawn from a seeded generator. Decodability of every k-subset is not
//! assumed: [`build`] checks all of them and re-draws with a stepped seed until the
//! check passes or the attempt budget runs out.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gf::{self, PermDiagMatrix, Width};
use crate::{par, Error, Result};

/// Bounded seed retries in [`build`].
pub const MAX_BUILD_ATTEMPTS: u32 = 16;

/// Guard against absurd α′ = r^k allocations (symbols per node).
const MAX_ALPHA_PRIME: usize = 1 << 28;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BaseParams {
    pub k: usize,
    pub r: usize,
    pub width: Width,
    pub seed: u64,
}

impl BaseParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParams(format!("k must be at least 2, got {}", self.k)));
        }
        if self.r < 2 || self.r > self.k {
            return Err(Error::InvalidParams(format!(
                "r must satisfy 2 <= r <= k, got r={} k={}",
                self.r, self.k
            )));
        }
        self.alpha_prime()?;
        Ok(())
    }

    /// Symbols per node: r^k.
    pub fn alpha_prime(&self) -> Result<usize> {
        self.r
            .checked_pow(self.k as u32)
            .filter(|&a| a <= MAX_ALPHA_PRIME)
            .ok_or_else(|| {
                Error::InvalidParams(format!(
                    "per-node size {}^{} exceeds the supported limit",
                    self.r, self.k
                ))
            })
    }
}

/// Row classes one failed systematic node pulls from every helper.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepairSelector {
    pub node: usize,
    /// Ascending symbol indices with digit `node` equal to zero; α′/r of them.
    pub rows: Vec<usize>,
}

/// Outcome of the all-subsets decodability sweep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MdsReport {
    /// Number of k-subsets exercised (the all-systematic subset is trivial and skipped).
    pub subsets_checked: usize,
    pub failures: Vec<Vec<usize>>,
}

impl MdsReport {
    pub fn all_decodable(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct BaseMsrCode {
    params: BaseParams,
    alpha_prime: usize,
    /// r^0 ..= r^k.
    pow: Vec<usize>,
    /// coding[j][i]: contribution of source i to parity j.
    coding: Vec<Vec<PermDiagMatrix>>,
    verified_mds: bool,
    effective_seed: u64,
}

/// Builds a code and proves every k-subset decodes, re-drawing scales with a stepped
/// seed on failure. The retry chain is deterministic, so a parameter set names
/// exactly one code.
pub fn build(params: BaseParams) -> Result<BaseMsrCode> {
    params.validate()?;
    let mut last_failure = Vec::new();
    for attempt in 0..MAX_BUILD_ATTEMPTS {
        let mut code = construct(params, attempt)?;
        let report = code.verify_mds();
        if report.all_decodable() {
            code.verified_mds = true;
            return Ok(code);
        }
        if let Some(f) = report.failures.first() {
            last_failure = f.clone();
        }
    }
    Err(Error::MdsVerificationFailed {
        attempts: MAX_BUILD_ATTEMPTS,
        subset: last_failure,
    })
}

/// Builds without the decodability sweep. Repair paths never need the sweep, and at
/// large α′ the sweep is far more expensive than anything else; callers that only
/// measure repair traffic use this. `verified_mds` stays false.
pub fn build_unverified(params: BaseParams) -> Result<BaseMsrCode> {
    params.validate()?;
    construct(params, 0)
}

fn construct(params: BaseParams, attempt: u32) -> Result<BaseMsrCode> {
    let (k, r, w) = (params.k, params.r, params.width);
    let ap = params.alpha_prime()?;
    let mut pow = Vec::with_capacity(k + 1);
    let mut p = 1usize;
    for _ in 0..=k {
        pow.push(p);
        p = p.saturating_mul(r);
    }
    let effective_seed = params.seed.wrapping_add(attempt as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(effective_seed);
    let mut coding = Vec::with_capacity(r);
    for j in 0..r {
        let mut row = Vec::with_capacity(k);
        for i in 0..k {
            let perm: Vec<u32> = (0..ap)
                .map(|v| {
                    let d = (v / pow[i]) % r;
                    (v - d * pow[i] + ((d + j) % r) * pow[i]) as u32
                })
                .collect();
            let scale: Vec<u16> = (0..ap).map(|_| rng.gen_range(1..=w.mask())).collect();
            row.push(PermDiagMatrix::new(w, perm, scale)?);
        }
        coding.push(row);
    }
    Ok(BaseMsrCode {
        params,
        alpha_prime: ap,
        pow,
        coding,
        verified_mds: false,
        effective_seed,
    })
}

impl BaseMsrCode {
    pub fn params(&self) -> &BaseParams {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn r(&self) -> usize {
        self.params.r
    }

    pub fn width(&self) -> Width {
        self.params.width
    }

    pub fn node_count(&self) -> usize {
        self.params.k + self.params.r
    }

    pub fn alpha_prime(&self) -> usize {
        self.alpha_prime
    }

    /// Rows per helper in a systematic repair: α′/r.
    pub fn selector_len(&self) -> usize {
        self.alpha_prime / self.params.r
    }

    pub fn verified_mds(&self) -> bool {
        self.verified_mds
    }

    /// Seed that actually produced the scales (params.seed plus retries consumed).
    pub fn effective_seed(&self) -> u64 {
        self.effective_seed
    }

    pub fn coding_matrix(&self, parity: usize, source: usize) -> &PermDiagMatrix {
        &self.coding[parity][source]
    }

    #[inline]
    fn digit(&self, v: usize, i: usize) -> usize {
        (v / self.pow[i]) % self.params.r
    }

    /// `v` with digit `i` shifted down by `j` (mod r).
    #[inline]
    fn shift_digit_down(&self, v: usize, i: usize, j: usize) -> usize {
        let r = self.params.r;
        let d = self.digit(v, i);
        v - d * self.pow[i] + ((d + r - j % r) % r) * self.pow[i]
    }

    /// Position of `v` inside the ascending selector row list of node `i`.
    /// Deleting digit i from v is exactly that rank.
    #[inline]
    fn selector_rank(&self, v: usize, i: usize) -> usize {
        (v % self.pow[i]) + (v / self.pow[i + 1]) * self.pow[i]
    }

    /// Parity payloads for `source`, a slice of k cells of α′ symbols each.
    pub fn encode(&self, source: &[Vec<u16>]) -> Result<Vec<Vec<u16>>> {
        self.check_source(source)?;
        Ok(par::map_indexed(self.params.r, |j| {
            let mut out = vec![0u16; self.alpha_prime];
            for i in 0..self.params.k {
                self.coding[j][i].apply_accum(&source[i], &mut out);
            }
            out
        }))
    }

    fn check_source(&self, source: &[Vec<u16>]) -> Result<()> {
        if source.len() != self.params.k {
            return Err(Error::LengthMismatch {
                expected: self.params.k,
                got: source.len(),
            });
        }
        for cell in source {
            if cell.len() != self.alpha_prime {
                return Err(Error::LengthMismatch {
                    expected: self.alpha_prime,
                    got: cell.len(),
                });
            }
        }
        Ok(())
    }

    /// The row classes node `i` downloads from every helper. Identical for each
    /// helper, which is what keeps the repair at (k+r-1)·α′/r symbols total.
    pub fn repair_selector(&self, node: usize) -> Result<RepairSelector> {
        if node >= self.params.k {
            return Err(Error::InvalidNodeSet(format!(
                "row selectors exist for systematic nodes only, got node {node}"
            )));
        }
        let rows = (0..self.alpha_prime)
            .filter(|&v| self.digit(v, node) == 0)
            .collect();
        Ok(RepairSelector { node, rows })
    }

    /// Rebuilds systematic node `i`. `helper_rows[h]` holds node h's selector-row
    /// values (selector order) for every h != i; entry i itself is ignored.
    ///
    /// Parity j's equation at selector row u reads
    ///   p_j(u) = Σ_l scale_{j,l}(v_l) f_l(v_l),  v_l = u with digit l shifted down j.
    /// Every v_l of a helper lands back in the selector class, so the downloaded
    /// rows close the system; solving for l = i covers digit class (r-j) mod r.
    pub fn repair_systematic(&self, i: usize, helper_rows: &[Vec<u16>]) -> Result<Vec<u16>> {
        let (k, r, w) = (self.params.k, self.params.r, self.params.width);
        if helper_rows.len() != k + r {
            return Err(Error::LengthMismatch {
                expected: k + r,
                got: helper_rows.len(),
            });
        }
        let sel = self.repair_selector(i)?;
        for (h, rows) in helper_rows.iter().enumerate() {
            if h != i && rows.len() != sel.rows.len() {
                return Err(Error::LengthMismatch {
                    expected: sel.rows.len(),
                    got: rows.len(),
                });
            }
        }
        let mut out = vec![0u16; self.alpha_prime];
        for j in 0..r {
            let prow = &helper_rows[k + j];
            for (t, &u) in sel.rows.iter().enumerate() {
                let mut acc = prow[t];
                for l in 0..k {
                    if l == i {
                        continue;
                    }
                    let v = self.shift_digit_down(u, l, j);
                    let c = self.coding[j][l].scale_at(v);
                    acc ^= gf::mul(w, c, helper_rows[l][self.selector_rank(v, i)]);
                }
                let vi = self.shift_digit_down(u, i, j);
                out[vi] = gf::div(w, acc, self.coding[j][i].scale_at(vi))?;
            }
        }
        Ok(out)
    }

    /// Prepares decoding from one k-subset of nodes. The factorization is reused
    /// across however many codewords that subset has to decode.
    pub fn subset_solver(&self, nodes: &[usize]) -> Result<SubsetSolver<'_>> {
        let (k, r) = (self.params.k, self.params.r);
        let ap = self.alpha_prime;
        let mut sorted: Vec<usize> = nodes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k || nodes.len() != k {
            return Err(Error::InvalidNodeSet(format!(
                "need exactly k={k} distinct nodes, got {nodes:?}"
            )));
        }
        if *sorted.last().unwrap() >= k + r {
            return Err(Error::InvalidNodeSet(format!(
                "node ids must lie in 0..{}, got {nodes:?}",
                k + r
            )));
        }
        let present_systematic: Vec<usize> = sorted.iter().copied().filter(|&n| n < k).collect();
        let missing: Vec<usize> = (0..k).filter(|n| !present_systematic.contains(n)).collect();
        let parities: Vec<usize> = sorted
            .iter()
            .copied()
            .filter(|&n| n >= k)
            .map(|n| n - k)
            .collect();
        debug_assert_eq!(parities.len(), missing.len());
        let lu = if missing.is_empty() {
            None
        } else {
            // Stacked block system: block row jb = parity equations of parities[jb],
            // block column lb = unknown source missing[lb].
            let m = missing.len();
            let mut mat = gf::FieldMatrix::zero(self.params.width, m * ap, m * ap);
            for (jb, &j) in parities.iter().enumerate() {
                for (lb, &l) in missing.iter().enumerate() {
                    let pd = &self.coding[j][l];
                    for v in 0..ap {
                        mat.set(jb * ap + pd.perm_at(v), lb * ap + v, pd.scale_at(v));
                    }
                }
            }
            Some(mat.lu()?)
        };
        Ok(SubsetSolver {
            code: self,
            nodes: sorted,
            present_systematic,
            missing,
            parities,
            lu,
        })
    }

    /// Decodes the k source cells from any k node payloads.
    pub fn reconstruct(&self, shares: &[(usize, &[u16])]) -> Result<Vec<Vec<u16>>> {
        let nodes: Vec<usize> = shares.iter().map(|&(n, _)| n).collect();
        self.subset_solver(&nodes)?.solve(shares)
    }

    /// Exercises every k-subset with at least one parity node and reports the ones
    /// whose stacked system is singular.
    pub fn verify_mds(&self) -> MdsReport {
        let (k, r) = (self.params.k, self.params.r);
        let subsets: Vec<Vec<usize>> = (0..k + r)
            .combinations(k)
            .filter(|s| s.iter().any(|&n| n >= k))
            .collect();
        let subsets_checked = subsets.len();
        let outcomes = par::map_items(subsets, |s| match self.subset_solver(&s) {
            Ok(_) => None,
            Err(_) => Some(s),
        });
        MdsReport {
            subsets_checked,
            failures: outcomes.into_iter().flatten().collect(),
        }
    }
}

/// Reusable decoder for one fixed k-subset of nodes.
pub struct SubsetSolver<'a> {
    code: &'a BaseMsrCode,
    nodes: Vec<usize>,
    present_systematic: Vec<usize>,
    missing: Vec<usize>,
    parities: Vec<usize>,
    lu: Option<gf::Lu>,
}

impl SubsetSolver<'_> {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Decodes one codeword. `shares` must cover exactly the solver's node set.
    pub fn solve(&self, shares: &[(usize, &[u16])]) -> Result<Vec<Vec<u16>>> {
        let code = self.code;
        let (k, w) = (code.params.k, code.params.width);
        let ap = code.alpha_prime;
        let mut by_node: Vec<Option<&[u16]>> = vec![None; code.node_count()];
        for &(n, cell) in shares {
            if n >= code.node_count() || by_node[n].is_some() {
                return Err(Error::InvalidNodeSet(format!("bad share set: node {n}")));
            }
            if cell.len() != ap {
                return Err(Error::LengthMismatch {
                    expected: ap,
                    got: cell.len(),
                });
            }
            by_node[n] = Some(cell);
        }
        for &n in &self.nodes {
            if by_node[n].is_none() {
                return Err(Error::InvalidNodeSet(format!(
                    "share for node {n} missing from solver subset {:?}",
                    self.nodes
                )));
            }
        }
        let mut out: Vec<Option<Vec<u16>>> = vec![None; k];
        for &l in &self.present_systematic {
            out[l] = Some(by_node[l].unwrap().to_vec());
        }
        if let Some(lu) = &self.lu {
            let m = self.missing.len();
            let mut rhs = vec![0u16; m * ap];
            for (jb, &j) in self.parities.iter().enumerate() {
                let block = &mut rhs[jb * ap..(jb + 1) * ap];
                block.copy_from_slice(by_node[k + j].unwrap());
                // Move the known sources to the right-hand side.
                for &l in &self.present_systematic {
                    let pd = &code.coding[j][l];
                    let f = by_node[l].unwrap();
                    for v in 0..ap {
                        block[pd.perm_at(v)] ^= gf::mul(w, pd.scale_at(v), f[v]);
                    }
                }
            }
            let x = lu.solve(&rhs)?;
            for (lb, &l) in self.missing.iter().enumerate() {
                out[l] = Some(x[lb * ap..(lb + 1) * ap].to_vec());
            }
        }
        Ok(out.into_iter().map(|c| c.unwrap()).collect())
    }
}
