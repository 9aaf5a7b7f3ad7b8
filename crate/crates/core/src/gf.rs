//! GF(2^8) and GF(2^16) arithmetic plus the two matrix shapes everything else is
//! built from: dense matrices with exact Gaussian elimination, and scaled
//! permutation matrices (one nonzero per row and column).
//!
//! Reduction polynomials are fixed: x^8 + x^4 + x^3 + x^2 + 1 (0x11D) for 8-bit
//! symbols and x^16 + x^12 + x^3 + x + 1 (0x1100B) for 16-bit. Both are primitive
//! with x as generator, so multiplication goes through log/antilog tables built once
//! per width. The shift-and-reduce definition stays available as [`mul_poly`]; the
//! tables are checked against it in tests.

use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use crate::{Error, Result};

/// Symbol width. Fixes the field and its reduction polynomial.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Width {
    W8,
    W16,
}

impl Width {
    pub const fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
        }
    }

    pub const fn poly(self) -> u32 {
        match self {
            Width::W8 => 0x11D,
            Width::W16 => 0x1100B,
        }
    }

    pub const fn mask(self) -> u16 {
        match self {
            Width::W8 => 0xFF,
            Width::W16 => 0xFFFF,
        }
    }

    /// Number of field elements, 2^w.
    pub const fn order(self) -> usize {
        1 << self.bits()
    }

    /// Bytes per symbol in serialized form.
    pub const fn symbol_bytes(self) -> usize {
        match self {
            Width::W8 => 1,
            Width::W16 => 2,
        }
    }

    pub fn from_bits(bits: u8) -> Result<Width> {
        match bits {
            8 => Ok(Width::W8),
            16 => Ok(Width::W16),
            other => Err(Error::InvalidParams(format!(
                "symbol width must be 8 or 16, got {other}"
            ))),
        }
    }
}

/// Product by the defining shift-and-reduce rule. Slow; this is the reference the
/// table-based path is tested against, and what builds the tables.
pub fn mul_poly(w: Width, a: u16, b: u16) -> u16 {
    let mut acc = 0u32;
    let mut aa = a as u32;
    let mut bb = b as u32;
    while bb != 0 {
        if bb & 1 != 0 {
            acc ^= aa;
        }
        bb >>= 1;
        aa <<= 1;
        if aa >> w.bits() != 0 {
            aa ^= w.poly();
        }
    }
    acc as u16
}

struct Tables {
    log: Vec<u16>,
    /// 2*(order-1)-1 entries so a sum of two valid logs never needs a modulo.
    exp: Vec<u16>,
}

fn build_tables(w: Width) -> Tables {
    let g = w.order() - 1;
    let mut log = vec![0u16; w.order()];
    let mut exp = vec![0u16; 2 * g - 1];
    let mut x = 1u16;
    for i in 0..g {
        exp[i] = x;
        log[x as usize] = i as u16;
        x = mul_poly(w, x, 2);
    }
    assert_eq!(x, 1, "reduction polynomial must be primitive with generator x");
    for i in g..(2 * g - 1) {
        exp[i] = exp[i - g];
    }
    Tables { log, exp }
}

static TABLES_W8: OnceLock<Tables> = OnceLock::new();
static TABLES_W16: OnceLock<Tables> = OnceLock::new();

fn tables(w: Width) -> &'static Tables {
    match w {
        Width::W8 => TABLES_W8.get_or_init(|| build_tables(Width::W8)),
        Width::W16 => TABLES_W16.get_or_init(|| build_tables(Width::W16)),
    }
}

/// Table-based product.
#[inline]
pub fn mul(w: Width, a: u16, b: u16) -> u16 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables(w);
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

/// Multiplicative inverse; zero has none.
#[inline]
pub fn inv(w: Width, a: u16) -> Result<u16> {
    if a == 0 {
        return Err(Error::DivisionByZero);
    }
    let t = tables(w);
    let g = w.order() - 1;
    Ok(t.exp[g - t.log[a as usize] as usize])
}

#[inline]
pub fn div(w: Width, a: u16, b: u16) -> Result<u16> {
    Ok(mul(w, a, inv(w, b)?))
}

/// Constant-multiplier lookup split into low/high byte halves. 1 KiB per table, so
/// the hot row kernels stay inside L1 regardless of field size.
pub(crate) struct MulTable {
    lo: [u16; 256],
    hi: [u16; 256],
}

impl MulTable {
    pub(crate) fn build(w: Width, c: u16) -> MulTable {
        let mut lo = [0u16; 256];
        let mut hi = [0u16; 256];
        // c*(x ^ y) = c*x ^ c*y, so 8 products per half span all 256 entries.
        for bit in 0..8 {
            let vl = mul(w, c, 1 << bit);
            let vh = match w {
                Width::W8 => 0,
                Width::W16 => mul(w, c, 1 << (bit + 8)),
            };
            for x in 0..(1usize << bit) {
                lo[(1 << bit) | x] = vl ^ lo[x];
                hi[(1 << bit) | x] = vh ^ hi[x];
            }
        }
        MulTable { lo, hi }
    }

    #[inline(always)]
    pub(crate) fn mul(&self, x: u16) -> u16 {
        self.lo[(x & 0xFF) as usize] ^ self.hi[(x >> 8) as usize]
    }
}

/// Rows shorter than this use the log/exp scalar loop; building split tables only
/// pays off once the row amortizes the ~520 operations of table construction.
const AXPY_TABLE_CUTOVER: usize = 64;

/// dst ^= c * src, elementwise.
pub(crate) fn row_axpy(w: Width, dst: &mut [u16], src: &[u16], c: u16) {
    debug_assert_eq!(dst.len(), src.len());
    if c == 0 {
        return;
    }
    if c == 1 {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d ^= s;
        }
        return;
    }
    if dst.len() >= AXPY_TABLE_CUTOVER {
        let t = MulTable::build(w, c);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d ^= t.mul(s);
        }
    } else {
        let t = tables(w);
        let lc = t.log[c as usize] as usize;
        for (d, &s) in dst.iter_mut().zip(src) {
            if s != 0 {
                *d ^= t.exp[lc + t.log[s as usize] as usize];
            }
        }
    }
}

/// A field element tagged with its width. Mixing widths is a usage error and the
/// arithmetic operators panic on it; bulk code paths work on raw `u16` symbols with
/// the width carried by the containing matrix instead.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct FieldElement {
    pub value: u16,
    pub width: Width,
}

impl FieldElement {
    pub fn new(width: Width, value: u16) -> Result<FieldElement> {
        if value > width.mask() {
            return Err(Error::InvalidParams(format!(
                "value {value:#x} does not fit in {} bits",
                width.bits()
            )));
        }
        Ok(FieldElement { value, width })
    }

    pub const fn zero(width: Width) -> FieldElement {
        FieldElement { value: 0, width }
    }

    pub const fn one(width: Width) -> FieldElement {
        FieldElement { value: 1, width }
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn inv(self) -> Result<FieldElement> {
        Ok(FieldElement {
            value: inv(self.width, self.value)?,
            width: self.width,
        })
    }

    fn assert_same_width(self, rhs: FieldElement) {
        assert_eq!(
            self.width, rhs.width,
            "field width mismatch: {:?} vs {:?}",
            self.width, rhs.width
        );
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: FieldElement) -> FieldElement {
        self.assert_same_width(rhs);
        FieldElement {
            value: self.value ^ rhs.value,
            width: self.width,
        }
    }
}

// Characteristic 2: subtraction is addition.
impl Sub for FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: FieldElement) -> FieldElement {
        self + rhs
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: FieldElement) -> FieldElement {
        self.assert_same_width(rhs);
        FieldElement {
            value: mul(self.width, self.value, rhs.value),
            width: self.width,
        }
    }
}

/// Dense row-major matrix over one field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldMatrix {
    width: Width,
    rows: usize,
    cols: usize,
    data: Vec<u16>,
}

impl FieldMatrix {
    pub fn zero(width: Width, rows: usize, cols: usize) -> FieldMatrix {
        FieldMatrix {
            width,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(width: Width, n: usize) -> FieldMatrix {
        let mut m = FieldMatrix::zero(width, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    pub fn from_rows(width: Width, rows: Vec<Vec<u16>>) -> Result<FieldMatrix> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in &rows {
            if row.len() != ncols {
                return Err(Error::LengthMismatch {
                    expected: ncols,
                    got: row.len(),
                });
            }
            for &v in row {
                if v > width.mask() {
                    return Err(Error::InvalidParams(format!(
                        "entry {v:#x} does not fit in {} bits",
                        width.bits()
                    )));
                }
                data.push(v);
            }
        }
        Ok(FieldMatrix {
            width,
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u16 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u16) {
        debug_assert!(v <= self.width.mask());
        self.data[r * self.cols + c] = v;
    }

    pub fn get(&self, r: usize, c: usize) -> FieldElement {
        FieldElement {
            value: self.at(r, c),
            width: self.width,
        }
    }

    pub fn row(&self, r: usize) -> &[u16] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u16] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn mat_mul(&self, rhs: &FieldMatrix) -> Result<FieldMatrix> {
        if self.width != rhs.width {
            return Err(Error::WidthMismatch(self.width, rhs.width));
        }
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let mut out = FieldMatrix::zero(self.width, self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let c = self.at(i, l);
                if c != 0 {
                    let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                    row_axpy(self.width, dst, rhs.row(l), c);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[u16]) -> Result<Vec<u16>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![0u16; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0u16;
            for (j, &v) in self.row(i).iter().enumerate() {
                acc ^= mul(self.width, v, x[j]);
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Row echelon rank. Exact: a pivot either exists or the column is skipped,
    /// there is no tolerance involved.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut row = 0;
        for col in 0..m.cols {
            if row == m.rows {
                break;
            }
            let Some(p) = (row..m.rows).find(|&i| m.at(i, col) != 0) else {
                continue;
            };
            if p != row {
                m.data.swap_ranges(p * m.cols, row * m.cols, m.cols);
            }
            let pinv = inv(m.width, m.at(row, col)).expect("pivot is nonzero");
            let (top, below) = m.data.split_at_mut((row + 1) * m.cols);
            let prow = &top[row * m.cols..];
            for trow in below.chunks_mut(m.cols) {
                let c = trow[col];
                if c != 0 {
                    let l = mul(m.width, c, pinv);
                    trow[col] = 0;
                    row_axpy(m.width, &mut trow[col + 1..], &prow[col + 1..], l);
                }
            }
            row += 1;
        }
        row
    }

    /// LU factorization with row swaps; pivots take the first nonzero entry in the
    /// column. Fails with the exact rank when the matrix is singular.
    pub fn lu(&self) -> Result<Lu> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: self.cols,
                right_cols: self.cols,
            });
        }
        let n = self.rows;
        let w = self.width;
        let mut m = self.data.clone();
        let mut swaps = vec![0u32; n];
        for col in 0..n {
            let Some(piv) = (col..n).find(|&i| m[i * n + col] != 0) else {
                return Err(Error::Singular {
                    rank: self.rank(),
                    dim: n,
                });
            };
            swaps[col] = piv as u32;
            if piv != col {
                m.swap_ranges(piv * n, col * n, n);
            }
            let pinv = inv(w, m[col * n + col]).expect("pivot is nonzero");
            let (top, below) = m.split_at_mut((col + 1) * n);
            let prow = &top[col * n..];
            let update = |trow: &mut [u16]| {
                let c = trow[col];
                if c != 0 {
                    let l = mul(w, c, pinv);
                    trow[col] = l;
                    row_axpy(w, &mut trow[col + 1..], &prow[col + 1..], l);
                }
            };
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                // Fan out only when the trailing block is worth the scheduling.
                if (n - col) * (n - col) >= 1 << 16 {
                    below.par_chunks_mut(n).for_each(update);
                } else {
                    below.chunks_mut(n).for_each(update);
                }
            }
            #[cfg(not(feature = "parallel"))]
            below.chunks_mut(n).for_each(update);
        }
        Ok(Lu {
            width: w,
            n,
            data: m,
            swaps,
        })
    }

    /// Solves `self * x = rhs` for a single right-hand side.
    pub fn solve(&self, rhs: &[u16]) -> Result<Vec<u16>> {
        self.lu()?.solve(rhs)
    }
}

trait SwapRanges {
    fn swap_ranges(&mut self, a: usize, b: usize, len: usize);
}

impl SwapRanges for Vec<u16> {
    fn swap_ranges(&mut self, a: usize, b: usize, len: usize) {
        debug_assert!(a.abs_diff(b) >= len);
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        let (head, tail) = self.split_at_mut(y);
        head[x..x + len].swap_with_slice(&mut tail[..len]);
    }
}

/// Factored form of a square matrix: unit lower triangle holds the multipliers,
/// upper triangle (with diagonal) holds U, `swaps[c]` is the row swapped into place
/// at step c.
#[derive(Clone, Debug)]
pub struct Lu {
    width: Width,
    n: usize,
    data: Vec<u16>,
    swaps: Vec<u32>,
}

impl Lu {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[u16]) -> Result<Vec<u16>> {
        if rhs.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let n = self.n;
        let t = tables(self.width);
        let mut x = rhs.to_vec();
        for col in 0..n {
            let s = self.swaps[col] as usize;
            if s != col {
                x.swap(col, s);
            }
        }
        // Forward pass against the unit lower triangle.
        for i in 1..n {
            let row = &self.data[i * n..i * n + i];
            let mut acc = x[i];
            for (j, &l) in row.iter().enumerate() {
                if l != 0 && x[j] != 0 {
                    acc ^= t.exp[t.log[l as usize] as usize + t.log[x[j] as usize] as usize];
                }
            }
            x[i] = acc;
        }
        // Back substitution against U.
        for i in (0..n).rev() {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = x[i];
            for (j, &u) in row.iter().enumerate().skip(i + 1) {
                if u != 0 && x[j] != 0 {
                    acc ^= t.exp[t.log[u as usize] as usize + t.log[x[j] as usize] as usize];
                }
            }
            x[i] = mul(self.width, acc, inv(self.width, row[i]).expect("U diagonal is nonzero"));
        }
        Ok(x)
    }
}

/// Scaled permutation: exactly one nonzero per row and per column, so
/// `out[perm[v]] = scale[v] * in[v]`. Kept in index/scale form; `to_dense` expands
/// it when a general matrix is needed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermDiagMatrix {
    width: Width,
    perm: Vec<u32>,
    inv_perm: Vec<u32>,
    scale: Vec<u16>,
}

impl PermDiagMatrix {
    pub fn new(width: Width, perm: Vec<u32>, scale: Vec<u16>) -> Result<PermDiagMatrix> {
        if perm.len() != scale.len() {
            return Err(Error::LengthMismatch {
                expected: perm.len(),
                got: scale.len(),
            });
        }
        let dim = perm.len();
        let mut inv_perm = vec![u32::MAX; dim];
        for (v, &p) in perm.iter().enumerate() {
            if (p as usize) >= dim || inv_perm[p as usize] != u32::MAX {
                return Err(Error::NotPermutation);
            }
            inv_perm[p as usize] = v as u32;
        }
        for (v, &s) in scale.iter().enumerate() {
            if s == 0 {
                return Err(Error::ZeroScale(v));
            }
            if s > width.mask() {
                return Err(Error::InvalidParams(format!(
                    "scale {s:#x} does not fit in {} bits",
                    width.bits()
                )));
            }
        }
        Ok(PermDiagMatrix {
            width,
            perm,
            inv_perm,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn width(&self) -> Width {
        self.width
    }

    /// Row index the input position `v` lands on.
    #[inline]
    pub fn perm_at(&self, v: usize) -> usize {
        self.perm[v] as usize
    }

    /// Input position feeding output row `u`.
    #[inline]
    pub fn preimage(&self, u: usize) -> usize {
        self.inv_perm[u] as usize
    }

    #[inline]
    pub fn scale_at(&self, v: usize) -> u16 {
        self.scale[v]
    }

    pub fn apply(&self, input: &[u16]) -> Result<Vec<u16>> {
        if input.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: input.len(),
            });
        }
        let mut out = vec![0u16; self.dim()];
        self.apply_accum(input, &mut out);
        Ok(out)
    }

    /// out[perm[v]] ^= scale[v] * input[v]. Lengths must equal `dim`.
    pub fn apply_accum(&self, input: &[u16], out: &mut [u16]) {
        debug_assert_eq!(input.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        for v in 0..self.dim() {
            out[self.perm[v] as usize] ^= mul(self.width, self.scale[v], input[v]);
        }
    }

    pub fn to_dense(&self) -> FieldMatrix {
        let mut m = FieldMatrix::zero(self.width, self.dim(), self.dim());
        for v in 0..self.dim() {
            m.set(self.perm[v] as usize, v, self.scale[v]);
        }
        m
    }
}
