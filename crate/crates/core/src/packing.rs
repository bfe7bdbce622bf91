//! Bit-packed storage of Hadamard-binarized tensors and the xHBNN kernel.
//!
//! A packed row keeps one `f32` scale per block and one sign bit per element.
//! Element `i` lives in bit `i % 64` of word `i / 64` (LSB first); a set bit
//! means `Sign = +1`. Pad bits past the last element are always zero, which
//! lets the kernels xor whole words without masking the tail.
//!
//! For two `±1` blocks of width `n`, the dot product is
//! `2·popcount(xnor) − n = n − 2·popcount(xor)`; the kernel scales that by
//! the two block scales and accumulates in `f32`.

use std::thread;

use crate::error::{Error, Result};
use crate::hadamard::{block_means, sign};
use crate::tensor::Tensor;

pub const WORD_BITS: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

#[inline]
fn blocks_for(len: usize, beta: usize) -> usize {
    len.div_ceil(beta)
}

fn pack_row(v: &[f32], beta: usize, scales: &mut [f32], bits: &mut [u64]) {
    let means = block_means(v, beta).expect("beta checked by caller");
    scales.copy_from_slice(&means);
    for (word, chunk) in bits.iter_mut().zip(v.chunks(WORD_BITS)) {
        *word = chunk
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &x)| acc | (u64::from(sign(x) > 0.0) << j));
    }
}

fn unpack_row(len: usize, beta: usize, scales: &[f32], bits: &[u64], out: &mut [f32]) {
    for (i, o) in out.iter_mut().enumerate().take(len) {
        let s = scales[i / beta];
        *o = if bits[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 { s } else { -s };
    }
}

fn check_scales(scales: &[f32]) -> Result<()> {
    if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Model("packed scale is negative or not finite".into()));
    }
    Ok(())
}

fn check_pad_bits(len: usize, bits: &[u64]) -> Result<()> {
    let used = len % WORD_BITS;
    if used != 0 {
        let last = bits[bits.len() - 1];
        if last >> used != 0 {
            return Err(Error::Model("nonzero pad bits in packed row".into()));
        }
    }
    Ok(())
}

/// A single packed vector: `⌈K/β⌉` scales plus `K` sign bits.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedHadaVector {
    len: usize,
    beta: usize,
    scales: Vec<f32>,
    bits: Vec<u64>,
}

/// Packs `v` at block size `beta`.
pub fn pack(v: &[f32], beta: usize) -> Result<PackedHadaVector> {
    if beta == 0 {
        return Err(Error::invalid("beta must be >= 1"));
    }
    let mut scales = vec![0.0; blocks_for(v.len(), beta)];
    let mut bits = vec![0; words_for(v.len())];
    pack_row(v, beta, &mut scales, &mut bits);
    Ok(PackedHadaVector {
        len: v.len(),
        beta,
        scales,
        bits,
    })
}

impl PackedHadaVector {
    pub fn from_parts(len: usize, beta: usize, scales: Vec<f32>, bits: Vec<u64>) -> Result<Self> {
        if beta == 0 {
            return Err(Error::invalid("beta must be >= 1"));
        }
        if scales.len() != blocks_for(len, beta) || bits.len() != words_for(len) {
            return Err(Error::Model(format!(
                "packed vector of length {len} at beta {beta} needs {} scales and {} words, got {} and {}",
                blocks_for(len, beta),
                words_for(len),
                scales.len(),
                bits.len()
            )));
        }
        check_scales(&scales)?;
        check_pad_bits(len, &bits)?;
        Ok(PackedHadaVector {
            len,
            beta,
            scales,
            bits,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    /// Sign bit of element `i` (`true` means `+1`).
    pub fn bit(&self, i: usize) -> bool {
        self.bits[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn unpack(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.len];
        unpack_row(self.len, self.beta, &self.scales, &self.bits, &mut out);
        out
    }

    /// Re-expresses the vector at a finer block size `g` that divides `beta`.
    /// Values are unchanged; each scale is replicated over its sub-blocks.
    pub fn refine(&self, g: usize) -> Result<Self> {
        let scales = refine_scales(&self.scales, self.len, self.beta, g)?;
        Ok(PackedHadaVector {
            len: self.len,
            beta: g,
            scales,
            bits: self.bits.clone(),
        })
    }

    fn as_row(&self) -> PackedRow<'_> {
        PackedRow {
            len: self.len,
            beta: self.beta,
            scales: &self.scales,
            bits: &self.bits,
        }
    }
}

fn refine_scales(scales: &[f32], len: usize, beta: usize, g: usize) -> Result<Vec<f32>> {
    if g == 0 || beta % g != 0 {
        return Err(Error::invalid(format!(
            "refined block size {g} must divide beta {beta}"
        )));
    }
    Ok((0..blocks_for(len, g)).map(|s| scales[s * g / beta]).collect())
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Borrowed view of one packed row.
#[derive(Clone, Copy, Debug)]
pub struct PackedRow<'a> {
    pub len: usize,
    pub beta: usize,
    pub scales: &'a [f32],
    pub bits: &'a [u64],
}

/// `Σⱼ W_f,j · A_f,j · (2·popcount(xnor(W_b,j, A_b,j)) − nⱼ)`.
pub fn xhbnn_dot(w: &PackedHadaVector, a: &PackedHadaVector) -> Result<f32> {
    if w.len != a.len || w.beta != a.beta {
        return Err(Error::shape(format!(
            "xhbnn_dot operands differ: (len {}, beta {}) vs (len {}, beta {})",
            w.len, w.beta, a.len, a.beta
        )));
    }
    Ok(row_dot(w.as_row(), a.as_row()))
}

/// Number of sign disagreements in bit range `[start, end)`.
#[inline]
fn range_mismatches(wb: &[u64], ab: &[u64], start: usize, end: usize) -> u32 {
    let mut count = 0;
    let mut pos = start;
    while pos < end {
        let word = pos / WORD_BITS;
        let off = pos % WORD_BITS;
        let take = (WORD_BITS - off).min(end - pos);
        let mask = if take == WORD_BITS {
            u64::MAX
        } else {
            ((1u64 << take) - 1) << off
        };
        count += ((wb[word] ^ ab[word]) & mask).count_ones();
        pos += take;
    }
    count
}

/// Generic path: any `β`, blocks may straddle word boundaries.
fn row_dot_generic(w: PackedRow<'_>, a: PackedRow<'_>) -> f32 {
    let mut acc = 0.0f32;
    for (j, (ws, as_)) in w.scales.iter().zip(a.scales).enumerate() {
        let start = j * w.beta;
        let end = (start + w.beta).min(w.len);
        let n = (end - start) as i32;
        let agree_minus_disagree = n - 2 * range_mismatches(w.bits, a.bits, start, end) as i32;
        acc += ws * as_ * agree_minus_disagree as f32;
    }
    acc
}

/// One block per lane: `β` equals the lane width in bits.
trait Lane: bytemuck::Pod {
    fn mismatches(self, other: Self) -> u32;
}

macro_rules! impl_lane {
    ($($t:ty),*) => {$(
        impl Lane for $t {
            #[inline(always)]
            fn mismatches(self, other: Self) -> u32 {
                (self ^ other).count_ones()
            }
        }
    )*};
}
impl_lane!(u8, u16, u32, u64);

pub(crate) const LANES: usize = 8;

/// Fast path for `β ∈ {8, 16, 32, 64}` on little-endian targets, where block
/// `j` is exactly lane `j` of the word array reinterpreted at width `β`.
/// Full blocks accumulate into 8 interleaved partial sums (fixed order);
/// a ragged tail block falls back to the masked routine.
#[cfg(target_endian = "little")]
#[derive(Clone, Copy)]
struct LaneRow<'a, T> {
    lanes: &'a [T],
    scales: &'a [f32],
    row: PackedRow<'a>,
}

#[cfg(target_endian = "little")]
impl<'a, T: Lane> LaneRow<'a, T> {
    #[inline(always)]
    fn new(row: PackedRow<'a>) -> Self {
        let full = row.len / row.beta;
        LaneRow {
            lanes: &bytemuck::cast_slice(row.bits)[..full],
            scales: &row.scales[..full],
            row,
        }
    }
}

/// Sum over full blocks only. Kept out of line so the lane loop is
/// vectorized the same way regardless of the caller.
#[cfg(target_endian = "little")]
#[inline(never)]
fn full_blocks_dot<T: Lane>(wl: &[T], al: &[T], ws: &[f32], as_: &[f32], beta: i32) -> f32 {
    let mut acc = [0.0f32; LANES];
    let lanes = wl.chunks_exact(LANES).zip(al.chunks_exact(LANES));
    let scales = ws.chunks_exact(LANES).zip(as_.chunks_exact(LANES));
    for ((wc, ac), (wsc, asc)) in lanes.zip(scales) {
        for l in 0..LANES {
            let d = beta - 2 * wc[l].mismatches(ac[l]) as i32;
            acc[l] += wsc[l] * asc[l] * d as f32;
        }
    }
    let done = wl.len() / LANES * LANES;
    for (l, j) in (done..wl.len()).enumerate() {
        let d = beta - 2 * wl[j].mismatches(al[j]) as i32;
        acc[l] += ws[j] * as_[j] * d as f32;
    }
    let mut total = 0.0f32;
    for v in acc {
        total += v;
    }
    total
}


/// Four dots sharing the `w` row, so its lanes and scales are loaded once.
#[cfg(target_endian = "little")]
#[inline(never)]
fn full_blocks_dot4<T: Lane>(wl: &[T], ws: &[f32], al: [&[T]; 4], as_: [&[f32]; 4], beta: i32) -> [f32; 4] {
    let n = wl.len();
    let mut acc = [[0.0f32; LANES]; 4];
    let mut c = 0;
    while c + LANES <= n {
        let w: &[T; LANES] = wl[c..c + LANES].try_into().unwrap();
        let s: &[f32; LANES] = ws[c..c + LANES].try_into().unwrap();
        for q in 0..4 {
            let a: &[T; LANES] = al[q][c..c + LANES].try_into().unwrap();
            let sa: &[f32; LANES] = as_[q][c..c + LANES].try_into().unwrap();
            for l in 0..LANES {
                let d = beta - 2 * w[l].mismatches(a[l]) as i32;
                acc[q][l] = (s[l] * sa[l]).mul_add(d as f32, acc[q][l]);
            }
        }
        c += LANES;
    }
    let mut out = [0.0f32; 4];
    for q in 0..4 {
        for (l, j) in (c..n).enumerate() {
            let d = beta - 2 * wl[j].mismatches(al[q][j]) as i32;
            acc[q][l] += ws[j] * as_[q][j] * d as f32;
        }
        for v in acc[q] {
            out[q] += v;
        }
    }
    out
}

/// Contribution of the ragged tail block, 0 when `K` is a multiple of `β`.
#[cfg(target_endian = "little")]
#[inline(always)]
fn tail_term<T>(w: &LaneRow<'_, T>, a: &LaneRow<'_, T>) -> f32 {
    let (beta, full) = (w.row.beta, w.lanes.len());
    let start = full * beta;
    if start >= w.row.len {
        return 0.0;
    }
    let tail = (w.row.len - start) as i32;
    let d = tail - 2 * range_mismatches(w.row.bits, a.row.bits, start, w.row.len) as i32;
    w.row.scales[full] * a.row.scales[full] * d as f32
}

#[cfg(target_endian = "little")]
#[inline(always)]
fn lane_dot<T: Lane>(w: &LaneRow<'_, T>, a: &LaneRow<'_, T>) -> f32 {
    full_blocks_dot(w.lanes, a.lanes, w.scales, a.scales, w.row.beta as i32) + tail_term(w, a)
}

#[cfg(target_endian = "little")]
fn row_dot_lanes<T: Lane>(w: PackedRow<'_>, a: PackedRow<'_>) -> f32 {
    lane_dot(&LaneRow::<T>::new(w), &LaneRow::<T>::new(a))
}

#[cfg(target_endian = "little")]
fn lane_band<T: Lane>(w: &PackedHadaMatrix, a: &PackedHadaMatrix, first: usize, band: &mut [f32]) {
    let n = a.rows;
    let beta = w.beta as i32;
    let a_rows: Vec<LaneRow<'_, T>> = (0..n).map(|j| LaneRow::new(a.row(j))).collect();
    let rows = band.len() / n;
    for j0 in (0..n).step_by(TILE_ROWS) {
        let j1 = (j0 + TILE_ROWS).min(n);
        for r in 0..rows {
            let wr = LaneRow::<T>::new(w.row(first + r));
            let o = &mut band[r * n..(r + 1) * n];
            let mut j = j0;
            while j + 4 <= j1 {
                let q = &a_rows[j..j + 4];
                let sums = full_blocks_dot4(
                    wr.lanes,
                    wr.scales,
                    [q[0].lanes, q[1].lanes, q[2].lanes, q[3].lanes],
                    [q[0].scales, q[1].scales, q[2].scales, q[3].scales],
                    beta,
                );
                for (t, s) in sums.into_iter().enumerate() {
                    o[j + t] = s + tail_term(&wr, &q[t]);
                }
                j += 4;
            }
            for (ar, oj) in a_rows[j..j1].iter().zip(&mut o[j..j1]) {
                *oj = lane_dot(&wr, ar);
            }
        }
    }
}

#[inline]
fn row_dot(w: PackedRow<'_>, a: PackedRow<'_>) -> f32 {
    #[cfg(target_endian = "little")]
    {
        match w.beta {
            8 => return row_dot_lanes::<u8>(w, a),
            16 => return row_dot_lanes::<u16>(w, a),
            32 => return row_dot_lanes::<u32>(w, a),
            64 => return row_dot_lanes::<u64>(w, a),
            _ => {}
        }
    }
    row_dot_generic(w, a)
}

/// `M` packed rows of length `K` sharing one `β`, stored contiguously:
/// `M·⌈K/β⌉` scales followed by `M·⌈K/64⌉` words, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedHadaMatrix {
    rows: usize,
    cols: usize,
    beta: usize,
    scales: Vec<f32>,
    bits: Vec<u64>,
}

impl PackedHadaMatrix {
    /// Packs the rows of `data` (row-major `rows × cols`).
    pub fn pack_rows(data: &[f32], rows: usize, cols: usize, beta: usize) -> Result<Self> {
        if beta == 0 {
            return Err(Error::invalid("beta must be >= 1"));
        }
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "cannot pack {} values as {rows}×{cols}",
                data.len()
            )));
        }
        let (bpr, wpr) = (blocks_for(cols, beta), words_for(cols));
        let mut scales = vec![0.0; rows * bpr];
        let mut bits = vec![0; rows * wpr];
        for (r, row) in data.chunks_exact(cols).enumerate() {
            pack_row(
                row,
                beta,
                &mut scales[r * bpr..(r + 1) * bpr],
                &mut bits[r * wpr..(r + 1) * wpr],
            );
        }
        Ok(PackedHadaMatrix {
            rows,
            cols,
            beta,
            scales,
            bits,
        })
    }

    /// Packs a tensor as `reshape(t, (S[0], -1))`.
    pub fn pack(t: &Tensor, beta: usize) -> Result<Self> {
        let rows = if t.rank() >= 2 { t.shape()[0] } else { 1 };
        PackedHadaMatrix::pack_rows(t.data(), rows, t.len() / rows, beta)
    }

    pub fn from_parts(rows: usize, cols: usize, beta: usize, scales: Vec<f32>, bits: Vec<u64>) -> Result<Self> {
        if beta == 0 || rows == 0 || cols == 0 {
            return Err(Error::Model(format!(
                "degenerate packed matrix {rows}×{cols} at beta {beta}"
            )));
        }
        let (bpr, wpr) = (blocks_for(cols, beta), words_for(cols));
        if scales.len() != rows * bpr || bits.len() != rows * wpr {
            return Err(Error::Model("packed matrix payload size mismatch".into()));
        }
        check_scales(&scales)?;
        for r in 0..rows {
            check_pad_bits(cols, &bits[r * wpr..(r + 1) * wpr])?;
        }
        Ok(PackedHadaMatrix {
            rows,
            cols,
            beta,
            scales,
            bits,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn blocks_per_row(&self) -> usize {
        blocks_for(self.cols, self.beta)
    }

    pub fn words_per_row(&self) -> usize {
        words_for(self.cols)
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    pub fn row(&self, i: usize) -> PackedRow<'_> {
        let (bpr, wpr) = (self.blocks_per_row(), self.words_per_row());
        PackedRow {
            len: self.cols,
            beta: self.beta,
            scales: &self.scales[i * bpr..(i + 1) * bpr],
            bits: &self.bits[i * wpr..(i + 1) * wpr],
        }
    }

    pub fn row_vector(&self, i: usize) -> PackedHadaVector {
        let r = self.row(i);
        PackedHadaVector {
            len: r.len,
            beta: r.beta,
            scales: r.scales.to_vec(),
            bits: r.bits.to_vec(),
        }
    }

    /// Dense `rows × cols` tensor of `±scale` values.
    pub fn unpack(&self) -> Tensor {
        let mut out = vec![0.0; self.rows * self.cols];
        for (i, o) in out.chunks_exact_mut(self.cols).enumerate() {
            let r = self.row(i);
            unpack_row(r.len, r.beta, r.scales, r.bits, o);
        }
        Tensor::new(&[self.rows, self.cols], out).expect("packed matrix is non-empty")
    }

    pub fn refine(&self, g: usize) -> Result<Self> {
        let bpr = self.blocks_per_row();
        let mut scales = Vec::with_capacity(self.rows * blocks_for(self.cols, g));
        for r in 0..self.rows {
            scales.extend(refine_scales(&self.scales[r * bpr..(r + 1) * bpr], self.cols, self.beta, g)?);
        }
        Ok(PackedHadaMatrix {
            rows: self.rows,
            cols: self.cols,
            beta: g,
            scales,
            bits: self.bits.clone(),
        })
    }

    /// Bytes of scales plus sign words, excluding the 12-byte header.
    pub fn payload_bytes(&self) -> usize {
        self.scales.len() * 4 + self.bits.len() * 8
    }

    /// Size of [`PackedHadaMatrix::encode`]'s output.
    pub fn encoded_len(&self) -> usize {
        12 + self.payload_bytes()
    }

    /// Serialized size of a packed `rows × cols` matrix at block size `beta`.
    pub fn encoded_len_for(rows: usize, cols: usize, beta: usize) -> usize {
        12 + rows * (blocks_for(cols, beta) * 4 + words_for(cols) * 8)
    }

    /// Little-endian: `u32 M, u32 K, u32 beta`, scales, then words.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        for v in [self.rows, self.cols, self.beta] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for w in &self.bits {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    /// Parses one matrix from the front of `buf`, advancing it.
    pub fn decode(buf: &mut &[u8]) -> Result<Self> {
        let rows = take_u32(buf)? as usize;
        let cols = take_u32(buf)? as usize;
        let beta = take_u32(buf)? as usize;
        if beta == 0 || rows == 0 || cols == 0 {
            return Err(Error::Model(format!(
                "degenerate packed matrix {rows}×{cols} at beta {beta}"
            )));
        }
        let n_scales = rows
            .checked_mul(blocks_for(cols, beta))
            .ok_or_else(|| Error::Model("packed matrix too large".into()))?;
        let n_words = rows
            .checked_mul(words_for(cols))
            .ok_or_else(|| Error::Model("packed matrix too large".into()))?;
        if buf.len() < n_scales.saturating_mul(4).saturating_add(n_words.saturating_mul(8)) {
            return Err(Error::Model("truncated packed matrix".into()));
        }
        let scales = (0..n_scales).map(|_| take_f32(buf)).collect::<Result<Vec<_>>>()?;
        let bits = (0..n_words).map(|_| take_u64(buf)).collect::<Result<Vec<_>>>()?;
        PackedHadaMatrix::from_parts(rows, cols, beta, scales, bits)
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Model("unexpected end of data".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub(crate) fn take_u8(buf: &mut &[u8]) -> Result<u8> {
    Ok(take(buf, 1)?[0])
}

pub(crate) fn take_u16(buf: &mut &[u8]) -> Result<u16> {
    Ok(u16::from_le_bytes(take(buf, 2)?.try_into().unwrap()))
}

pub(crate) fn take_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

pub(crate) fn take_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8)?.try_into().unwrap()))
}

pub(crate) fn take_f32(buf: &mut &[u8]) -> Result<f32> {
    Ok(f32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

/// Output rows handled per tile of the right-hand operand. Both kernels use it.
const TILE_ROWS: usize = 64;

/// Splits `out` (`m × n`, row-major) into contiguous row bands, one per
/// worker, and runs `band(first_row, band_out)` on each.
fn for_row_bands<F>(out: &mut [f32], m: usize, n: usize, workers: usize, band: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    let workers = workers.clamp(1, m.max(1));
    if workers == 1 {
        band(0, out);
        return;
    }
    let rows_per = m.div_ceil(workers);
    thread::scope(|s| {
        for (b, chunk) in out.chunks_mut(rows_per * n).enumerate() {
            let band = &band;
            s.spawn(move || band(b * rows_per, chunk));
        }
    });
}

/// `Oᵢⱼ = xhbnn_dot(row i of W, row j of A)`, where the rows of `A` are the
/// columns of the activation matrix.
pub fn xhbnn_matmul(w: &PackedHadaMatrix, a: &PackedHadaMatrix) -> Result<Tensor> {
    xhbnn_matmul_with_workers(w, a, 1)
}

pub fn xhbnn_matmul_with_workers(w: &PackedHadaMatrix, a: &PackedHadaMatrix, workers: usize) -> Result<Tensor> {
    if w.cols != a.cols || w.beta != a.beta {
        return Err(Error::shape(format!(
            "xhbnn operands differ: {}×{} (beta {}) vs {}×{} (beta {})",
            w.rows, w.cols, w.beta, a.rows, a.cols, a.beta
        )));
    }
    let (m, n) = (w.rows, a.rows);
    let mut out = vec![0.0f32; m * n];
    for_row_bands(&mut out, m, n, workers, |first, band| {
        #[cfg(target_endian = "little")]
        {
            match w.beta {
                8 => return lane_band::<u8>(w, a, first, band),
                16 => return lane_band::<u16>(w, a, first, band),
                32 => return lane_band::<u32>(w, a, first, band),
                64 => return lane_band::<u64>(w, a, first, band),
                _ => {}
            }
        }
        let rows = band.len() / n;
        for j0 in (0..n).step_by(TILE_ROWS) {
            let j1 = (j0 + TILE_ROWS).min(n);
            for r in 0..rows {
                let wr = w.row(first + r);
                let o = &mut band[r * n..(r + 1) * n];
                for (j, oj) in (j0..j1).zip(&mut o[j0..j1]) {
                    *oj = row_dot_generic(wr, a.row(j));
                }
            }
        }
    });
    Tensor::new(&[m, n], out)
}

/// Dense `f32` dot product with the same 8-lane accumulation scheme as the
/// packed kernel.
#[inline(never)]
fn dense_dot(x: &[f32], y: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let mut xc = x.chunks_exact(LANES);
    let mut yc = y.chunks_exact(LANES);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    for (l, (a, b)) in xc.remainder().iter().zip(yc.remainder()).enumerate() {
        acc[l] += a * b;
    }
    let mut total = 0.0f32;
    for v in acc {
        total += v;
    }
    total
}

/// Classical dense multiply `O = A · Bᵀ` with `B` given as `N×K` rows, using
/// the same tiling, lane width and worker split as [`xhbnn_matmul`].
pub fn cmma(a: &Tensor, bt: &Tensor, workers: usize) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [n, k2] = bt.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "cmma operands differ: {:?} vs {:?}",
            a.shape(),
            bt.shape()
        )));
    }
    let (ad, bd) = (a.data(), bt.data());
    let mut out = vec![0.0f32; m * n];
    for_row_bands(&mut out, m, n, workers, |first, band| {
        let rows = band.len() / n;
        for j0 in (0..n).step_by(TILE_ROWS) {
            let j1 = (j0 + TILE_ROWS).min(n);
            for r in 0..rows {
                let ar = &ad[(first + r) * k..(first + r + 1) * k];
                let o = &mut band[r * n..(r + 1) * n];
                for (j, oj) in (j0..j1).zip(&mut o[j0..j1]) {
                    *oj = dense_dot(ar, &bd[j * k..(j + 1) * k]);
                }
            }
        }
    });
    Tensor::new(&[m, n], out)
}

pub use crate::bench::{bench_compare, write_bench_csv, BenchRecord, BenchReport, Kernel, BENCH_CSV_HEADER};
