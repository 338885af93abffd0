//! Code construction and encoding.
//!
//! A code of length `N = 2^n` is defined by the generator `F = [1 0; 1 1]^{⊗n}`
//! and a frozen mask over the scrambled vector `v`. Encoding is `v = uB`,
//! `x = vF`, where `B` is the bit-reversal permutation.
//!
//! Rust APIs index positions from 0. The JSON document uses 1-based
//! `info_indices` so it reads the same as the usual textbook notation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported `log2 N`.
pub const MAX_LOG_LEN: u32 = 20;

/// `F = [1 0; 1 1]^{⊗n}` over GF(2).
///
/// Entry `(j, i)` is 1 exactly when the set bits of `i` are a subset of the
/// set bits of `j`, so the matrix is never materialized. Row `j` has weight
/// `2^popcount(j)` and the matrix is lower triangular with a unit diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorMatrix {
    n: u32,
}

pub fn build_generator(n: u32) -> Result<GeneratorMatrix> {
    if n > MAX_LOG_LEN {
        return invalid(format!("log2 length {n} exceeds the supported bound {MAX_LOG_LEN}"));
    }
    Ok(GeneratorMatrix { n })
}

impl GeneratorMatrix {
    pub fn log_len(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        1 << self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Entry at row `j`, column `i` (0-based).
    #[inline]
    pub fn entry(&self, j: usize, i: usize) -> bool {
        i & !j == 0
    }

    pub fn row_weight(&self, j: usize) -> usize {
        1 << j.count_ones()
    }

    pub fn row(&self, j: usize) -> Vec<u8> {
        (0..self.len()).map(|i| self.entry(j, i) as u8).collect()
    }

    pub fn column(&self, i: usize) -> Vec<u8> {
        (0..self.len()).map(|j| self.entry(j, i) as u8).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.len()).map(|j| self.row(j)).collect()
    }

    /// Computes `bits · F` in place.
    pub fn transform(&self, bits: &mut [u8]) {
        assert_eq!(bits.len(), self.len(), "vector length must equal N");
        polar_transform(bits);
    }
}

/// In-place butterfly computing `x = vF` for a power-of-two length vector.
///
/// `x_i` is the XOR of all `v_j` whose index `j` is a bit-superset of `i`.
/// `F` is an involution over GF(2), so the same call also inverts it.
pub fn polar_transform(bits: &mut [u8]) {
    let len = bits.len();
    debug_assert!(len.is_power_of_two());
    let mut half = 1;
    while half < len {
        for block in (0..len).step_by(2 * half) {
            for j in block..block + half {
                bits[j] ^= bits[j + half];
            }
        }
        half *= 2;
    }
}

fn log2_exact(len: usize) -> Result<u32> {
    if len == 0 || !len.is_power_of_two() {
        return invalid(format!("length {len} is not a power of two"));
    }
    Ok(len.trailing_zeros())
}

#[inline]
fn reverse_index(p: usize, n: u32) -> usize {
    if n == 0 {
        0
    } else {
        p.reverse_bits() >> (usize::BITS - n)
    }
}

/// Bit-reversal permutation `B`. It is its own inverse.
pub fn bit_reverse_permute<T: Clone>(bits: &[T]) -> Result<Vec<T>> {
    let n = log2_exact(bits.len())?;
    Ok((0..bits.len())
        .map(|p| bits[reverse_index(p, n)].clone())
        .collect())
}

/// `û = v̂B⁻¹ = v̂B`.
pub fn unscramble(v_hat: &[u8]) -> Result<Vec<u8>> {
    bit_reverse_permute(v_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Construction {
    #[serde(rename = "polar-bhattacharyya")]
    PolarBhattacharyya,
    #[serde(rename = "reed-muller")]
    ReedMuller,
}

impl Construction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Construction::PolarBhattacharyya => "polar-bhattacharyya",
            Construction::ReedMuller => "reed-muller",
        }
    }
}

/// An `(N, K)` code: which positions of `v` are frozen to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpec {
    n: u32,
    k: usize,
    frozen: Vec<bool>,
    construction: Construction,
}

impl CodeSpec {
    /// Builds a spec from an explicit frozen mask (`true` = frozen).
    pub fn from_frozen_mask(frozen: Vec<bool>, construction: Construction) -> Result<Self> {
        let n = log2_exact(frozen.len())?;
        if n > MAX_LOG_LEN {
            return invalid(format!("log2 length {n} exceeds the supported bound {MAX_LOG_LEN}"));
        }
        let k = frozen.iter().filter(|&&f| !f).count();
        if k == 0 {
            return invalid("a code needs at least one information position");
        }
        Ok(Self {
            n,
            k,
            frozen,
            construction,
        })
    }

    pub fn log_len(&self) -> u32 {
        self.n
    }

    /// Block length `N`.
    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    /// Information length `K`.
    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn generator(&self) -> GeneratorMatrix {
        GeneratorMatrix { n: self.n }
    }

    #[inline]
    pub fn is_frozen(&self, j: usize) -> bool {
        self.frozen[j]
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    /// Information positions of `v`, ascending, 0-based.
    pub fn info_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.frozen[j]).collect()
    }

    /// Places `info` (length K) into the information positions of `v`.
    pub fn scatter_info(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return invalid(format!(
                "expected {} information bits, got {}",
                self.k,
                info.len()
            ));
        }
        let mut v = vec![0u8; self.len()];
        for (&j, &b) in self.info_indices().iter().zip(info) {
            v[j] = b & 1;
        }
        Ok(v)
    }

    pub fn to_document(&self) -> CodeSpecDocument {
        CodeSpecDocument {
            n: self.n,
            len: self.len(),
            k: self.k,
            construction: self.construction,
            frozen_mask: mask_to_hex(&self.frozen),
            info_indices: self.info_indices().iter().map(|j| j + 1).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CodeSpecDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &CodeSpecDocument) -> Result<Self> {
        if doc.len != 1usize.checked_shl(doc.n).unwrap_or(0) {
            return invalid(format!("N = {} does not equal 2^{}", doc.len, doc.n));
        }
        let frozen = hex_to_mask(&doc.frozen_mask, doc.len)?;
        let spec = Self::from_frozen_mask(frozen, doc.construction)?;
        if spec.k != doc.k {
            return invalid(format!(
                "K = {} disagrees with the frozen mask ({} information positions)",
                doc.k, spec.k
            ));
        }
        let listed: Vec<usize> = doc.info_indices.iter().map(|j| j.wrapping_sub(1)).collect();
        if listed != spec.info_indices() {
            return invalid("info_indices disagree with the frozen mask");
        }
        Ok(spec)
    }
}

/// Serialized form of a [`CodeSpec`].
///
/// `frozen_mask` packs position 1 into the most significant bit of the first
/// hex digit; `info_indices` are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSpecDocument {
    pub n: u32,
    #[serde(rename = "N")]
    pub len: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub construction: Construction,
    pub frozen_mask: String,
    pub info_indices: Vec<usize>,
}

fn mask_to_hex(mask: &[bool]) -> String {
    mask.chunks(4)
        .map(|nib| {
            let v = nib
                .iter()
                .enumerate()
                .fold(0u32, |acc, (b, &f)| acc | ((f as u32) << (3 - b)));
            char::from_digit(v, 16).unwrap()
        })
        .collect()
}

fn hex_to_mask(hex: &str, len: usize) -> Result<Vec<bool>> {
    let digits = len.div_ceil(4);
    if hex.len() != digits {
        return invalid(format!(
            "frozen_mask has {} hex digits, expected {digits}",
            hex.len()
        ));
    }
    let mut mask = Vec::with_capacity(len);
    for c in hex.chars() {
        let v = c
            .to_digit(16)
            .ok_or_else(|| Error::InvalidArgument(format!("bad hex digit {c:?} in frozen_mask")))?;
        for b in 0..4 {
            mask.push(v >> (3 - b) & 1 == 1);
        }
    }
    if mask[len..].iter().any(|&f| f) {
        return invalid("frozen_mask has bits set beyond N");
    }
    mask.truncate(len);
    Ok(mask)
}

/// Bhattacharyya parameters of the synthetic channels of `v`, from the
/// erasure-channel recursion started at `Z = 0.5`.
pub fn bhattacharyya_parameters(n: u32) -> Vec<f64> {
    let mut z = vec![0.5f64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(2 * z.len());
        for &zi in &z {
            next.push(2.0 * zi - zi * zi);
            next.push(zi * zi);
        }
        z = next;
    }
    z
}

/// Polar code: the `K` positions with smallest Bhattacharyya parameter carry
/// information. Equal parameters favour the larger index.
pub fn construct_polar(n: u32, k: usize) -> Result<CodeSpec> {
    if n > MAX_LOG_LEN {
        return invalid(format!("log2 length {n} exceeds the supported bound {MAX_LOG_LEN}"));
    }
    let len = 1usize << n;
    if k == 0 || k > len {
        return invalid(format!("K = {k} must lie in 1..={len}"));
    }
    let z = bhattacharyya_parameters(n);
    let mut order: Vec<usize> = (0..len).collect();
    // most reliable first
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)));
    let mut frozen = vec![true; len];
    for &j in &order[..k] {
        frozen[j] = false;
    }
    CodeSpec::from_frozen_mask(frozen, Construction::PolarBhattacharyya)
}

fn binomial(n: u64, r: u64) -> u64 {
    (0..r).fold(1u64, |acc, t| acc * (n - t) / (t + 1))
}

/// Valid Reed-Muller dimensions `Σ_{t≤r} C(n, t)` for `r = 0..=n`.
pub fn rm_dimensions(n: u32) -> Vec<usize> {
    let mut acc = 0;
    (0..=n as u64)
        .map(|r| {
            acc += binomial(n as u64, r) as usize;
            acc
        })
        .collect()
}

/// Reed-Muller code `RM(r, n)`: the rows of `F` with the largest weight.
pub fn construct_rm(n: u32, k: usize) -> Result<CodeSpec> {
    if n > MAX_LOG_LEN {
        return invalid(format!("log2 length {n} exceeds the supported bound {MAX_LOG_LEN}"));
    }
    let dims = rm_dimensions(n);
    let Some(order) = dims.iter().position(|&d| d == k) else {
        let below = dims.iter().rev().find(|&&d| d < k);
        let above = dims.iter().find(|&&d| d > k);
        let nearest: Vec<String> = below.into_iter().chain(above).map(|d| d.to_string()).collect();
        return invalid(format!(
            "K = {k} is not a Reed-Muller dimension for n = {n}; nearest valid K: {}",
            nearest.join(", ")
        ));
    };
    // RM(r, n) keeps rows with popcount ≥ n − r
    let min_weight = n as usize - order;
    let frozen = (0..1usize << n)
        .map(|j| (j.count_ones() as usize) < min_weight)
        .collect();
    CodeSpec::from_frozen_mask(frozen, Construction::ReedMuller)
}

/// Source block, scrambled vector and codeword of one encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlock {
    pub u: Vec<u8>,
    pub v: Vec<u8>,
    pub x: Vec<u8>,
}

/// `x = (uB)F`. Frozen positions of `v = uB` must be zero.
pub fn encode(u: &[u8], spec: &CodeSpec) -> Result<EncodedBlock> {
    if u.len() != spec.len() {
        return invalid(format!(
            "source block has length {}, code length is {}",
            u.len(),
            spec.len()
        ));
    }
    if let Some(b) = u.iter().find(|&&b| b > 1) {
        return invalid(format!("source block contains non-binary value {b}"));
    }
    let v = bit_reverse_permute(u)?;
    if let Some(j) = (0..v.len()).find(|&j| spec.is_frozen(j) && v[j] != 0) {
        return invalid(format!(
            "frozen position {} of the scrambled vector carries a 1",
            j + 1
        ));
    }
    let mut x = v.clone();
    polar_transform(&mut x);
    Ok(EncodedBlock {
        u: u.to_vec(),
        v,
        x,
    })
}
