//! Code configuration: one JSON document names one code, bit for bit. The SHA-256
//! digest of the canonicalized document is stamped into every shard header so
//! shards cannot be decoded against the wrong configuration.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pgbk_core::balanced::{self, BalancedCode, BibdDesign};
use pgbk_core::base::{self, BaseParams};
use pgbk_core::piggyback::{InjectionTable, Payload, PiggybackedCode};
use pgbk_core::Width;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Piggyback,
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Injection {
    Named(String),
    /// Explicit 1-based table rows, one per parity node.
    Rows(Vec<Vec<usize>>),
}

impl Default for Injection {
    fn default() -> Injection {
        Injection::Named("main-diag".to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BibdChoice {
    Preset(String),
    Inline(BibdDesign),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub mode: Mode,
    pub k: usize,
    pub r: usize,
    pub s: usize,
    pub w: u8,
    pub seed: u64,
    #[serde(default)]
    pub injection: Injection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bibd: Option<BibdChoice>,
}

impl CodeConfig {
    pub fn load(path: &Path) -> Result<CodeConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: CodeConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w != 8 && self.w != 16 {
            bail!("w must be 8 or 16, got {}", self.w);
        }
        if !(2 <= self.s && self.s <= self.r && self.r <= self.k) {
            bail!(
                "parameters must satisfy 2 <= s <= r <= k, got k={} r={} s={}",
                self.k,
                self.r,
                self.s
            );
        }
        match self.mode {
            Mode::Piggyback => {
                if self.bibd.is_some() {
                    bail!("piggyback mode takes no bibd field");
                }
            }
            Mode::Balanced => {
                if self.bibd.is_none() {
                    bail!("balanced mode needs a bibd preset or inline design");
                }
                if self.s != self.r {
                    bail!("balanced mode uses s = r, got s={} r={}", self.s, self.r);
                }
                if self.injection != Injection::default() {
                    bail!("balanced mode pins the standard diagonal injection table");
                }
            }
        }
        if let Injection::Named(name) = &self.injection {
            if name != "main-diag" && name != "anti-diag" {
                bail!("unknown injection table name {name:?} (main-diag, anti-diag, or explicit rows)");
            }
        }
        Ok(())
    }

    pub fn width(&self) -> Width {
        Width::from_bits(self.w).expect("validated")
    }

    pub fn table(&self) -> Result<InjectionTable> {
        let t = match &self.injection {
            Injection::Named(n) if n == "main-diag" => InjectionTable::main_diagonal(self.r, self.s),
            Injection::Named(n) if n == "anti-diag" => InjectionTable::anti_diagonal(self.r, self.s),
            Injection::Named(n) => bail!("unknown injection table name {n:?}"),
            Injection::Rows(rows) => InjectionTable::from_one_based(rows),
        };
        t.map_err(Into::into)
    }

    pub fn design(&self) -> Result<Option<BibdDesign>> {
        let Some(choice) = &self.bibd else { return Ok(None) };
        let design = match choice {
            BibdChoice::Preset(name) => match name.as_str() {
                "13-4-1" => balanced::preset_13_4_1(),
                "fano" | "7-3-1" => balanced::preset_fano(),
                other => bail!("unknown bibd preset {other:?} (13-4-1, fano)"),
            },
            BibdChoice::Inline(d) => {
                let report = d.validate();
                if !report.ok() {
                    bail!("inline design invalid: {}", report.issues.join("; "));
                }
                d.clone()
            }
        };
        if design.n != self.k + self.r || design.r != self.r {
            bail!(
                "design is over n={} points with blocks of {}, but k={} r={} need n={} blocks of {}",
                design.n,
                design.r,
                self.k,
                self.r,
                self.k + self.r,
                self.r
            );
        }
        Ok(Some(design))
    }

    /// Canonical form: the parsed document re-serialized with sorted keys and no
    /// whitespace, so formatting never changes the digest.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    pub fn digest(&self) -> Result<[u8; 32]> {
        let mut h = Sha256::new();
        h.update(self.canonical_json()?.as_bytes());
        Ok(h.finalize().into())
    }

    pub fn digest_hex(&self) -> Result<String> {
        Ok(self.digest()?.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn alpha_prime(&self) -> Result<usize> {
        BaseParams {
            k: self.k,
            r: self.r,
            width: self.width(),
            seed: self.seed,
        }
        .alpha_prime()
        .map_err(Into::into)
    }

    /// Whether the completeness sweeps (decodability over all k-subsets) fit a
    /// desk-scale budget. The choice is a pure function of the config so every
    /// command derives the same code from the same document.
    pub fn sweep_feasible(&self) -> bool {
        let subsets = binomial(self.k + self.r, self.k);
        let Ok(ap) = self.alpha_prime() else { return false };
        subsets <= 256 && self.r * ap <= 4096
    }

    pub fn build(&self, allow_suboptimal: bool) -> Result<BuiltCode> {
        let width = self.width();
        let verified = self.sweep_feasible();
        match self.mode {
            Mode::Piggyback => {
                let table = self.table()?;
                if !table.is_balanced() && !allow_suboptimal {
                    bail!(
                        "injection table is valid but unbalanced (support sizes {:?}); pass --allow-suboptimal to use it",
                        table.support_sizes()
                    );
                }
                let params = BaseParams {
                    k: self.k,
                    r: self.r,
                    width,
                    seed: self.seed,
                };
                let base = if verified {
                    base::build(params)?
                } else {
                    base::build_unverified(params)?
                };
                let code = if table.is_balanced() {
                    PiggybackedCode::new(base, table)?
                } else {
                    PiggybackedCode::allow_suboptimal(base, table)?
                };
                Ok(BuiltCode::Piggyback(code))
            }
            Mode::Balanced => {
                let design = self.design()?.expect("validated");
                let code = if verified {
                    BalancedCode::build(&design, self.k, width, self.seed)?
                } else {
                    BalancedCode::build_unverified(&design, self.k, width, self.seed)?
                };
                Ok(BuiltCode::Balanced(code))
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

pub enum BuiltCode {
    Piggyback(PiggybackedCode),
    Balanced(BalancedCode),
}

impl BuiltCode {
    pub fn node_count(&self) -> usize {
        match self {
            BuiltCode::Piggyback(c) => c.node_count(),
            BuiltCode::Balanced(c) => c.node_count(),
        }
    }

    /// Symbols stored per node.
    pub fn alpha(&self) -> usize {
        match self {
            BuiltCode::Piggyback(c) => c.alpha(),
            BuiltCode::Balanced(c) => c.alpha(),
        }
    }

    /// Cells per node payload.
    pub fn cells_per_node(&self) -> usize {
        match self {
            BuiltCode::Piggyback(c) => c.s(),
            BuiltCode::Balanced(c) => c.b() * c.cells_per_instance(),
        }
    }

    pub fn cell_len(&self) -> usize {
        match self {
            BuiltCode::Piggyback(c) => c.base().alpha_prime(),
            BuiltCode::Balanced(c) => c.instances()[0].base().alpha_prime(),
        }
    }

    /// Source symbols one codeword carries.
    pub fn source_symbols(&self) -> usize {
        match self {
            BuiltCode::Piggyback(c) => c.s() * c.base().k() * c.base().alpha_prime(),
            BuiltCode::Balanced(c) => {
                c.b() * c.cells_per_instance() * c.k() * c.instances()[0].base().alpha_prime()
            }
        }
    }

    /// Shard header role byte: 0 systematic, 1 parity, 2 mixed.
    pub fn role(&self, node0: usize) -> u8 {
        match self {
            BuiltCode::Piggyback(c) => u8::from(node0 >= c.base().k()),
            BuiltCode::Balanced(_) => 2,
        }
    }

    pub fn uses_unbalanced_table(&self) -> bool {
        match self {
            BuiltCode::Piggyback(c) => !c.table().is_balanced(),
            BuiltCode::Balanced(_) => false,
        }
    }

    /// Consumes flat source symbols in (instance, sub-instance, source, offset)
    /// order and encodes them into n node payloads.
    pub fn encode_symbols(&self, symbols: &[u16]) -> Result<Vec<Payload>> {
        anyhow::ensure!(symbols.len() == self.source_symbols(), "source size mismatch");
        let ap = self.cell_len();
        let mut it = symbols.chunks_exact(ap).map(|c| c.to_vec());
        match self {
            BuiltCode::Piggyback(c) => {
                let (k, s) = (c.base().k(), c.s());
                let sources: Vec<Vec<Vec<u16>>> = (0..s)
                    .map(|_| (0..k).map(|_| it.next().expect("sized above")).collect())
                    .collect();
                c.encode(&sources).map_err(Into::into)
            }
            BuiltCode::Balanced(c) => {
                let (k, s, b) = (c.k(), c.cells_per_instance(), c.b());
                let sources: Vec<Vec<Vec<Vec<u16>>>> = (0..b)
                    .map(|_| {
                        (0..s)
                            .map(|_| (0..k).map(|_| it.next().expect("sized above")).collect())
                            .collect()
                    })
                    .collect();
                c.encode(&sources).map_err(Into::into)
            }
        }
    }

    /// Inverse of `encode_symbols`: decodes the shares back to the flat source
    /// symbol stream.
    pub fn reconstruct_symbols(&self, shares: &[(usize, &Payload)]) -> Result<Vec<u16>> {
        let mut out = Vec::with_capacity(self.source_symbols());
        match self {
            BuiltCode::Piggyback(c) => {
                for cell in c.reconstruct(shares)?.into_iter().flatten() {
                    out.extend(cell);
                }
            }
            BuiltCode::Balanced(c) => {
                for instance in c.reconstruct(shares)? {
                    for cell in instance.into_iter().flatten() {
                        out.extend(cell);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CodeConfig {
        CodeConfig {
            mode: Mode::Piggyback,
            k: 4,
            r: 3,
            s: 3,
            w: 16,
            seed: 7,
            injection: Injection::default(),
            bibd: None,
        }
    }

    #[test]
    fn digest_ignores_formatting_but_not_content() {
        let a = sample();
        let spaced: CodeConfig = serde_json::from_str(
            "{ \"mode\": \"piggyback\", \"k\": 4,\n  \"r\": 3, \"s\": 3, \"w\": 16, \"seed\": 7, \"injection\": \"main-diag\" }",
        )
        .unwrap();
        assert_eq!(a.digest().unwrap(), spaced.digest().unwrap());
        let mut b = sample();
        b.seed = 8;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut c = sample();
        c.s = 4;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.w = 12;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.bibd = Some(BibdChoice::Preset("fano".into()));
        assert!(c.validate().is_err());
        let mut c = sample();
        c.mode = Mode::Balanced;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_gate_is_config_derived() {
        assert!(sample().sweep_feasible());
        let mut big = sample();
        big.k = 9;
        big.r = 4;
        big.s = 4;
        assert!(!big.sweep_feasible());
    }
}
