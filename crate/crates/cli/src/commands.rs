//! Command bodies. Every command returns the process exit code: 0 for success
//! or all-match, 1 for a verification mismatch, with usage and I/O errors
//! bubbling up as errors (exit 2 in main).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pgbk_core::balanced::BibdDesign;
use pgbk_core::base::{self, BaseParams};
use pgbk_core::meter::{self, Rational64};
use pgbk_core::piggyback::{self, InjectionTable, Payload, PiggybackedCode};
use pgbk_core::Width;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{BuiltCode, CodeConfig, Mode};
use crate::shard::{
    self, Manifest, ReadShard, ShardHeader, FLAG_SUBOPTIMAL, VERSION,
};

pub fn encode(config: &Path, input: &Path, out: &Path, allow_suboptimal: bool) -> Result<i32> {
    let cfg = CodeConfig::load(config)?;
    let code = cfg.build(allow_suboptimal)?;
    let data = fs::read(input).with_context(|| format!("reading input {}", input.display()))?;
    let symbols = shard::bytes_to_symbols(&data, cfg.width(), code.source_symbols())?;
    let nodes = code.encode_symbols(&symbols)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let digest = cfg.digest()?;
    let flags = if code.uses_unbalanced_table() { FLAG_SUBOPTIMAL } else { 0 };
    let mut files = Vec::new();
    for (node0, payload) in nodes.iter().enumerate() {
        let header = ShardHeader {
            version: VERSION,
            role: code.role(node0),
            flags,
            node: node0 as u32 + 1,
            payload_symbols: code.alpha() as u64,
            original_len: data.len() as u64,
            digest,
        };
        shard::write_shard(out, &header, &payload.cells, cfg.width())?;
        files.push(shard::shard_filename(node0 + 1));
    }
    let manifest = Manifest {
        config_digest: cfg.digest_hex()?,
        mode: match cfg.mode {
            Mode::Piggyback => "piggyback".to_string(),
            Mode::Balanced => "balanced".to_string(),
        },
        nodes: code.node_count(),
        original_len: data.len() as u64,
        payload_symbols_per_node: code.alpha() as u64,
        shards: files,
    };
    shard::write_atomic(
        &out.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    println!(
        "encoded {} bytes into {} shards of {} symbols each in {}",
        data.len(),
        code.node_count(),
        code.alpha(),
        out.display()
    );
    Ok(0)
}

fn parse_node_list(arg: &str, n: usize) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for part in arg.split(',') {
        let id: usize = part
            .trim()
            .parse()
            .with_context(|| format!("node list entry {part:?} is not a number"))?;
        if id < 1 || id > n {
            bail!("node id {id} out of range 1..={n}");
        }
        if ids.contains(&id) {
            bail!("node id {id} listed twice");
        }
        ids.push(id);
    }
    Ok(ids)
}

fn check_shard(rs: &ReadShard, digest: &[u8; 32], node1: usize) -> Result<()> {
    if rs.header.digest != *digest {
        bail!("shard {} was written under a different configuration", node1);
    }
    if rs.header.node as usize != node1 {
        bail!(
            "shard file for node {node1} carries node id {}",
            rs.header.node
        );
    }
    Ok(())
}

pub fn reconstruct(config: &Path, shards_dir: &Path, nodes: &str, out: &Path) -> Result<i32> {
    let cfg = CodeConfig::load(config)?;
    let ids = parse_node_list(nodes, cfg.k + cfg.r)?;
    if ids.len() != cfg.k {
        bail!("reconstruction needs exactly k={} nodes, got {}", cfg.k, ids.len());
    }
    // The header flag records whether an unbalanced table was in force.
    let mut allow = false;
    for &id in &ids {
        let path = shards_dir.join(shard::shard_filename(id));
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        allow |= ShardHeader::parse(&bytes)?.flags & FLAG_SUBOPTIMAL != 0;
    }
    let code = cfg.build(allow)?;
    let digest = cfg.digest()?;
    let mut shards = Vec::new();
    let mut original_len: Option<u64> = None;
    for &id in &ids {
        let path = shards_dir.join(shard::shard_filename(id));
        let rs = shard::read_shard(&path, cfg.width(), code.cells_per_node(), code.cell_len())?;
        check_shard(&rs, &digest, id)?;
        if *original_len.get_or_insert(rs.header.original_len) != rs.header.original_len {
            bail!("shards disagree about the original file length");
        }
        shards.push(rs);
    }
    let shares: Vec<(usize, &Payload)> = ids
        .iter()
        .zip(&shards)
        .map(|(&id, rs)| (id - 1, &rs.payload))
        .collect();
    let symbols = code.reconstruct_symbols(&shares)?;
    let mut bytes = shard::symbols_to_bytes(symbols.iter(), cfg.width());
    let len = original_len.unwrap_or(0) as usize;
    if len > bytes.len() {
        bail!("shards claim {len} original bytes but carry only {}", bytes.len());
    }
    bytes.truncate(len);
    shard::write_atomic(out, &bytes)?;
    println!("reconstructed {len} bytes from nodes {ids:?} into {}", out.display());
    Ok(0)
}

pub fn repair(
    config: &Path,
    shards_dir: &Path,
    node1: usize,
    ledger_path: &Path,
    allow_suboptimal: bool,
) -> Result<i32> {
    let cfg = CodeConfig::load(config)?;
    let code = cfg.build(allow_suboptimal)?;
    let n = code.node_count();
    if node1 < 1 || node1 > n {
        bail!("node id {node1} out of range 1..={n}");
    }
    let failed0 = node1 - 1;
    let digest = cfg.digest()?;
    let mut payloads: Vec<Payload> = Vec::with_capacity(n);
    let mut missing_others = Vec::new();
    let mut original_len: Option<u64> = None;
    for node0 in 0..n {
        let placeholder = Payload {
            cells: vec![vec![0u16; code.cell_len()]; code.cells_per_node()],
        };
        if node0 == failed0 {
            payloads.push(placeholder);
            continue;
        }
        let path = shards_dir.join(shard::shard_filename(node0 + 1));
        if !path.exists() {
            missing_others.push(node0 + 1);
            payloads.push(placeholder);
            continue;
        }
        let rs = shard::read_shard(&path, cfg.width(), code.cells_per_node(), code.cell_len())?;
        check_shard(&rs, &digest, node0 + 1)?;
        if *original_len.get_or_insert(rs.header.original_len) != rs.header.original_len {
            bail!("shards disagree about the original file length");
        }
        payloads.push(rs.payload);
    }
    if !missing_others.is_empty() {
        bail!(
            "single failure only: shards {missing_others:?} are missing besides node {node1}"
        );
    }
    let original_len = original_len.context("no helper shards found")?;
    let (payload, mut ledger) = match &code {
        BuiltCode::Piggyback(c) => c.repair(&payloads[..], failed0)?,
        BuiltCode::Balanced(c) => c.repair(&payloads[..], failed0)?,
    };
    let analytic = match &code {
        BuiltCode::Piggyback(c) => {
            let ap = c.base().alpha_prime() as i64;
            let (k, r, s) = (c.base().k() as i64, c.base().r() as i64, c.s() as i64);
            if failed0 < c.base().k() {
                Rational64::new((k + r - 1) * s * ap, r)
            } else {
                Rational64::from_integer(c.parity_repair_cells(failed0 - c.base().k()) as i64 * ap)
            }
        }
        BuiltCode::Balanced(c) => {
            Rational64::from_integer((n as i64 - 1) * c.beta_symbols() as i64)
        }
    };
    let report = meter::assert_measured(&ledger, analytic);
    let mut ok = report.matches;
    if !report.matches {
        println!(
            "[repair] MISMATCH: measured {} symbols, analytic {}",
            report.measured, report.analytic
        );
    }
    if let BuiltCode::Balanced(c) = &code {
        let beta = c.beta_symbols();
        for (&h, &v) in &report.per_helper {
            if v != beta {
                println!("[repair] MISMATCH: helper {} sent {v} symbols, balanced amount is {beta}", h + 1);
                ok = false;
            }
        }
    }
    ledger.coalesce();
    let mut csv = Vec::new();
    ledger.write_csv(&mut csv)?;
    shard::write_atomic(ledger_path, &csv)?;
    let header = ShardHeader {
        version: VERSION,
        role: code.role(failed0),
        flags: if code.uses_unbalanced_table() { FLAG_SUBOPTIMAL } else { 0 },
        node: node1 as u32,
        payload_symbols: code.alpha() as u64,
        original_len,
        digest,
    };
    let mut regenerated = header.to_bytes().to_vec();
    regenerated.extend(shard::symbols_to_bytes(
        payload.cells.iter().flatten(),
        cfg.width(),
    ));
    let shard_path = shards_dir.join(shard::shard_filename(node1));
    if shard_path.exists() {
        let old = fs::read(&shard_path)?;
        if old == regenerated {
            println!("[repair] regenerated shard matches the existing one bit for bit");
        } else {
            println!("[repair] MISMATCH: regenerated shard differs from the existing file; leaving it untouched");
            ok = false;
        }
    } else {
        shard::write_atomic(&shard_path, &regenerated)?;
        println!("[repair] wrote {}", shard_path.display());
    }
    println!(
        "[repair] node {node1}: {} symbols from {} helpers, analytic {}, match: {}",
        report.measured,
        report.per_helper.len(),
        report.analytic,
        ok
    );
    println!("[repair] ledger written to {}", ledger_path.display());
    Ok(if ok { 0 } else { 1 })
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn verify(config: &Path) -> Result<i32> {
    let cfg = CodeConfig::load(config)?;
    println!("[verify] config digest {}", cfg.digest_hex()?);
    let mut failed = false;
    match cfg.mode {
        Mode::Piggyback => match cfg.table() {
            Ok(t) => {
                println!(
                    "[verify] injection table: valid, balanced: {}, support sizes {:?}",
                    t.is_balanced(),
                    t.support_sizes()
                );
            }
            Err(e) => {
                println!("[verify] injection table: FAIL ({e})");
                failed = true;
            }
        },
        Mode::Balanced => match cfg.design() {
            Ok(Some(d)) => {
                let rep = d.validate();
                if rep.ok() {
                    println!(
                        "[verify] design: ok (n={} r={} lambda={} e={} b={})",
                        d.n, d.r, d.lambda, rep.e, rep.b
                    );
                } else {
                    println!("[verify] design: FAIL ({})", rep.issues.join("; "));
                    failed = true;
                }
            }
            Ok(None) => unreachable!("validated"),
            Err(e) => {
                println!("[verify] design: FAIL ({e})");
                failed = true;
            }
        },
    }
    if failed {
        println!("[verify] remaining checks skipped");
        return Ok(1);
    }
    let code = match cfg.build(true) {
        Ok(c) => c,
        Err(e) => {
            println!("[verify] construction: FAIL ({e})");
            return Ok(1);
        }
    };
    if cfg.sweep_feasible() {
        match &code {
            BuiltCode::Piggyback(c) => {
                let rep = c.base().verify_mds();
                if rep.all_decodable() {
                    println!("[verify] decodability sweep: {} subsets pass", rep.subsets_checked);
                } else {
                    println!(
                        "[verify] decodability sweep: FAIL ({} of {} subsets)",
                        rep.failures.len(),
                        rep.subsets_checked
                    );
                    failed = true;
                }
            }
            BuiltCode::Balanced(c) => {
                let all = c.instances().iter().all(|i| i.base().verified_mds());
                if all {
                    println!(
                        "[verify] decodability sweep: all {} instances verified during construction",
                        c.b()
                    );
                } else {
                    println!("[verify] decodability sweep: FAIL");
                    failed = true;
                }
            }
        }
        let n = code.node_count();
        let k = cfg.k;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
        let mask = cfg.width().mask();
        let source: Vec<u16> = (0..code.source_symbols())
            .map(|_| rng.gen_range(0..=mask))
            .collect();
        let nodes = code.encode_symbols(&source)?;
        let subsets = k_subsets(n, k);
        let mut bad = 0;
        for subset in &subsets {
            let shares: Vec<(usize, &Payload)> =
                subset.iter().map(|&g| (g, &nodes[g])).collect();
            match code.reconstruct_symbols(&shares) {
                Ok(got) if got == source => {}
                _ => bad += 1,
            }
        }
        if bad == 0 {
            println!("[verify] reconstruction: {}/{} subsets bit-exact", subsets.len(), subsets.len());
        } else {
            println!(
                "[verify] reconstruction: FAIL ({bad} of {} subsets)",
                subsets.len()
            );
            failed = true;
        }
    } else {
        println!("[verify] decodability sweep: skipped at this scale");
        println!("[verify] reconstruction: skipped at this scale");
    }
    println!("[verify] {}", if failed { "FAIL" } else { "ok" });
    Ok(if failed { 1 } else { 0 })
}

struct Grid {
    ks: Vec<usize>,
    rs: Vec<usize>,
    ss: Vec<usize>,
    w: u8,
    seed: u64,
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '{' => {
                depth += 1;
                cur.push(ch);
            }
            '}' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                parts.push(cur.clone());
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.is_empty() {
        parts.push(cur);
    }
    parts
}

fn parse_values(v: &str) -> Result<Vec<usize>> {
    let inner = v.strip_prefix('{').and_then(|x| x.strip_suffix('}')).unwrap_or(v);
    inner
        .split(',')
        .map(|x| x.parse::<usize>().with_context(|| format!("bad grid value {x:?}")))
        .collect()
}

fn parse_grid(text: &str) -> Result<Grid> {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut grid = Grid {
        ks: Vec::new(),
        rs: Vec::new(),
        ss: Vec::new(),
        w: 16,
        seed: 42,
    };
    for clause in split_top_level(&cleaned) {
        let normalized = clause.replace('∈', "=");
        let Some((name, value)) = normalized.split_once('=') else {
            bail!("grid clause {clause:?} is not of the form name=values");
        };
        match name {
            "k" => grid.ks = parse_values(value)?,
            "r" => grid.rs = parse_values(value)?,
            "s" => grid.ss = parse_values(value)?,
            "w" => {
                grid.w = value.parse().with_context(|| format!("bad width {value:?}"))?;
            }
            "seed" => {
                grid.seed = value.parse().with_context(|| format!("bad seed {value:?}"))?;
            }
            other => bail!("unknown grid variable {other:?} (k, r, s, w, seed)"),
        }
    }
    if grid.ks.is_empty() || grid.rs.is_empty() || grid.ss.is_empty() {
        bail!("grid must set k, r and s, e.g. \"k∈{{4,8}}, r=2, s=2\"");
    }
    if grid.w != 8 && grid.w != 16 {
        bail!("grid width must be 8 or 16");
    }
    Ok(grid)
}

pub fn bench(grid_text: &str, out: &Path) -> Result<i32> {
    let grid = parse_grid(grid_text)?;
    let width = Width::from_bits(grid.w).expect("checked");
    let mut csv = String::from(
        "k,r,s,w,alpha,msr_bound,system_analytic,system_measured,system_match,parity_analytic,parity_measured,parity_match,legacy_two_instance_per_alpha\n",
    );
    let mut rows = 0;
    for &k in &grid.ks {
        for &r in &grid.rs {
            for &s in &grid.ss {
                if !(2 <= s && s <= r && r <= k) {
                    eprintln!("skipping infeasible cell k={k} r={r} s={s}");
                    continue;
                }
                let params = BaseParams {
                    k,
                    r,
                    width,
                    seed: grid.seed,
                };
                let ap = params.alpha_prime()?;
                if ap > 1 << 20 {
                    bail!("cell k={k} r={r} stores r^k = {ap} symbols per instance; too large to simulate");
                }
                let code = PiggybackedCode::new(
                    base::build_unverified(params)?,
                    InjectionTable::main_diagonal(r, s)?,
                )?;
                let mut rng = ChaCha8Rng::seed_from_u64(grid.seed ^ ((k * 64 + r * 8 + s) as u64));
                let sources: Vec<Vec<Vec<u16>>> = (0..s)
                    .map(|_| {
                        (0..k)
                            .map(|_| (0..ap).map(|_| rng.gen_range(0..=width.mask())).collect())
                            .collect()
                    })
                    .collect();
                let nodes = code.encode(&sources)?;
                let (sys_payload, sys_ledger) = code.repair(&nodes[..], 0)?;
                let (par_payload, par_ledger) = code.repair(&nodes[..], k)?;
                anyhow::ensure!(sys_payload == nodes[0] && par_payload == nodes[k], "repair mismatch");
                let alpha = (s * ap) as u64;
                let bound = ((k + r - 1) * s * ap / r) as u64;
                let sys_analytic = bound;
                let par_analytic = ((k + s * (s - 1)) * ap) as u64;
                let legacy = meter::two_instance_parity_avg(k, r)?;
                csv.push_str(&format!(
                    "{k},{r},{s},{w},{alpha},{bound},{sys_analytic},{sys_m},{sys_ok},{par_analytic},{par_m},{par_ok},{legacy}\n",
                    w = grid.w,
                    sys_m = sys_ledger.total(),
                    sys_ok = sys_ledger.total() == sys_analytic,
                    par_m = par_ledger.total(),
                    par_ok = par_ledger.total() == par_analytic,
                ));
                rows += 1;
            }
        }
    }
    shard::write_atomic(out, csv.as_bytes())?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(0)
}

pub fn bibd(validate: Option<&Path>, preset: Option<&str>, emit: Option<&Path>) -> Result<i32> {
    match (validate, preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading design {}", path.display()))?;
            let design: BibdDesign =
                serde_json::from_str(&text).with_context(|| "parsing design JSON")?;
            let rep = design.validate();
            println!(
                "[bibd] n={} r={} lambda={}: e={} b={} ok={}",
                design.n,
                design.r,
                design.lambda,
                rep.e,
                rep.b,
                rep.ok()
            );
            for issue in rep.issues.iter().take(20) {
                println!("  {issue}");
            }
            Ok(if rep.ok() { 0 } else { 1 })
        }
        (None, Some(name)) => {
            let out = emit.context("--preset needs --emit FILE")?;
            let design = match name {
                "13-4-1" => pgbk_core::balanced::preset_13_4_1(),
                "fano" | "7-3-1" => pgbk_core::balanced::preset_fano(),
                other => bail!("unknown preset {other:?} (13-4-1, fano)"),
            };
            shard::write_atomic(out, &serde_json::to_vec_pretty(&design)?)?;
            println!("wrote preset {name} to {}", out.display());
            Ok(0)
        }
        _ => bail!("use exactly one of --validate FILE or --preset NAME --emit FILE"),
    }
}

pub fn bandwidth(k: usize, r: usize, s: usize) -> Result<i32> {
    let bw = piggyback::repair_bandwidth(k, r, s)?;
    println!("(n={}, k={k}) layered code with s={s} instances", k + r);
    let ap = (r as u64).checked_pow(k as u32);
    let in_symbols = |frac: Rational64| -> String {
        match ap {
            Some(ap) => {
                let v = meter::symbols(frac, s as u64 * ap);
                if v.is_integer() {
                    format!(" = {} symbols at alpha = {}", v.numer(), s as u64 * ap)
                } else {
                    format!(" = {v} symbols at alpha = {}", s as u64 * ap)
                }
            }
            None => String::new(),
        }
    };
    println!("  cut-set repair floor:   {} x alpha{}", bw.msr_bound, in_symbols(bw.msr_bound));
    println!("  systematic repair:      {} x alpha{}", bw.gamma_system, in_symbols(bw.gamma_system));
    println!("  parity repair:          {} x alpha{}", bw.gamma_parity, in_symbols(bw.gamma_parity));
    println!(
        "  two-instance average:   {} x alpha",
        meter::two_instance_parity_avg(k, r)?
    );
    println!(
        "  modified two-instance:  {} x alpha",
        meter::two_instance_modified_parity_avg(k, r)?
    );
    if r == 2 {
        println!(
            "  hadamard reference:     {} x alpha",
            meter::hadamard_parity_reference(k)
        );
    }
    Ok(0)
}
