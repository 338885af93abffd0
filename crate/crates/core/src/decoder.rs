//! Stack sphere decoding.
//!
//! The scrambled vector `v` is decided from its last position to its first.
//! Because `F` is lower triangular, fixing `v_i..v_N` fixes the codeword
//! symbol `x_i`, so every tree level contributes exactly one term to the
//! squared Euclidean distance `D`. The decoder keeps candidate paths in a
//! priority queue ordered by the chosen [`MetricKind`], records every full
//! path that beats the current radius, and discards paths whose distance is
//! not strictly below it. When the queue drains, the recorded path is the
//! maximum-likelihood codeword regardless of the metric used.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::hash::Hash;
use std::io::Write;
use std::path::PathBuf;

use smallvec::SmallVec;

use crate::channel::ChannelParams;
use crate::codes::{bit_reverse_permute, polar_transform, CodeSpec};
use crate::error::{invalid, Error, Result};
use crate::metrics::{sed_term, MetricKind, MetricTable};
use crate::scalar::Scalar;

/// Largest dimension the brute-force oracle accepts.
pub const MAX_ORACLE_DIMENSION: usize = 20;

/// Above this length the decoder enumerates row supports on the fly instead of
/// caching one bit mask per row.
const ROW_MASK_CACHE_LIMIT: usize = 4096;

/// Fixed-width bit set holding one bit per code position.
trait BitStore: Clone + Eq + Hash {
    fn zeros(len: usize) -> Self;
    fn get(&self, i: usize) -> bool;
    fn flip(&mut self, i: usize);
    fn xor_assign(&mut self, other: &Self);
}

impl BitStore for u64 {
    fn zeros(_: usize) -> Self {
        0
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        self >> i & 1 == 1
    }

    #[inline]
    fn flip(&mut self, i: usize) {
        *self ^= 1 << i;
    }

    #[inline]
    fn xor_assign(&mut self, other: &Self) {
        *self ^= other;
    }
}

impl BitStore for u128 {
    fn zeros(_: usize) -> Self {
        0
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        self >> i & 1 == 1
    }

    #[inline]
    fn flip(&mut self, i: usize) {
        *self ^= 1 << i;
    }

    #[inline]
    fn xor_assign(&mut self, other: &Self) {
        *self ^= other;
    }
}

type Words = SmallVec<[u64; 4]>;

impl BitStore for Words {
    fn zeros(len: usize) -> Self {
        SmallVec::from_elem(0, len.div_ceil(64))
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        self[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    fn flip(&mut self, i: usize) {
        self[i / 64] ^= 1 << (i % 64);
    }

    fn xor_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a ^= b;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// Child paths generated: one per frozen level expanded, two otherwise.
    pub node_visits: u64,
    /// Paths removed from the stack, including stale ones.
    pub pops: u64,
    pub max_stack: usize,
    pub radius_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult<T> {
    pub u_hat: Vec<u8>,
    pub v_hat: Vec<u8>,
    /// `D` of the decided path, which is also the final squared radius.
    pub final_radius_sq: T,
    pub stats: DecodeStats,
}

#[derive(Debug, Clone, Default)]
pub struct DecoderOptions {
    /// Abort with [`Error::ResourceExhausted`] once the stack holds this many
    /// paths. `None` leaves it unbounded.
    pub max_stack: Option<usize>,
    /// Track every generated path and fail with [`Error::Defect`] if one is
    /// produced twice. Costs a hash insert per node visit.
    pub check_unique: bool,
}

/// A suffix `v_i..v_N` of the scrambled vector.
#[derive(Debug, Clone)]
struct SearchPath<T, B> {
    /// Number of decided positions, `N − i + 1`.
    depth: usize,
    bits: B,
    /// For every undecided position `l`, `Σ_{j decided} f_{jl} v_j mod 2`.
    parity: B,
    last_bit: u8,
    sed: T,
    metric: T,
    seq: u64,
}

impl<T: Scalar, B> PartialEq for SearchPath<T, B> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar, B> Eq for SearchPath<T, B> {}

impl<T: Scalar, B> PartialOrd for SearchPath<T, B> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar, B> Ord for SearchPath<T, B> {
    /// Greater pops first: larger metric, then deeper, then bit 0 over bit 1,
    /// then the most recently pushed.
    fn cmp(&self, other: &Self) -> Ordering {
        self.metric
            .partial_cmp(&other.metric)
            .unwrap_or(Ordering::Equal)
            .then(self.depth.cmp(&other.depth))
            .then(other.last_bit.cmp(&self.last_bit))
            .then(self.seq.cmp(&other.seq))
    }
}

enum RowSupport<B> {
    /// Per row `j`, the columns `l < j` with `f_{jl} = 1`.
    Cached(Vec<B>),
    OnTheFly,
}

impl<B: BitStore> RowSupport<B> {
    fn new(len: usize) -> Self {
        if len > ROW_MASK_CACHE_LIMIT {
            return RowSupport::OnTheFly;
        }
        let masks = (0..len)
            .map(|j| {
                let mut w = B::zeros(len);
                let mut sub = j;
                while sub > 0 {
                    sub = (sub - 1) & j;
                    w.flip(sub);
                }
                w
            })
            .collect();
        RowSupport::Cached(masks)
    }

    #[inline]
    fn apply(&self, j: usize, parity: &mut B) {
        match self {
            RowSupport::Cached(masks) => parity.xor_assign(&masks[j]),
            RowSupport::OnTheFly => {
                let mut sub = j;
                while sub > 0 {
                    sub = (sub - 1) & j;
                    parity.flip(sub);
                }
            }
        }
    }
}

enum Rows {
    Narrow(RowSupport<u64>),
    Medium(RowSupport<u128>),
    Wide(RowSupport<Words>),
}

impl Rows {
    fn new(len: usize) -> Self {
        if len <= 64 {
            Rows::Narrow(RowSupport::new(len))
        } else if len <= 128 {
            Rows::Medium(RowSupport::new(len))
        } else {
            Rows::Wide(RowSupport::new(len))
        }
    }
}

#[derive(Clone, Copy)]
enum TraceAction {
    Expand,
    Record,
    Prune,
}

impl TraceAction {
    fn as_str(self) -> &'static str {
        match self {
            TraceAction::Expand => "expand",
            TraceAction::Record => "record",
            TraceAction::Prune => "prune",
        }
    }
}

/// Stack sphere decoder bound to one code, channel and sort metric.
pub struct StackSphereDecoder<'a, T> {
    spec: &'a CodeSpec,
    params: ChannelParams<T>,
    kind: MetricKind,
    options: DecoderOptions,
    rows: Rows,
}

impl<'a, T: Scalar> StackSphereDecoder<'a, T> {
    pub fn new(spec: &'a CodeSpec, params: ChannelParams<T>, kind: MetricKind) -> Self {
        Self::with_options(spec, params, kind, DecoderOptions::default())
    }

    pub fn with_options(
        spec: &'a CodeSpec,
        params: ChannelParams<T>,
        kind: MetricKind,
        options: DecoderOptions,
    ) -> Self {
        Self {
            spec,
            params,
            kind,
            options,
            rows: Rows::new(spec.len()),
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn decode(&self, y: &[T]) -> Result<DecodeResult<T>> {
        self.run(y, None)
    }

    /// Decodes while writing one line per pop to `sink`:
    /// `<level> <sed> <metric> <expand|record|prune>`, where `level` is the
    /// 1-based index `i` of the path `v_i..v_N` (`N + 1` for the root).
    pub fn decode_traced(&self, y: &[T], sink: &mut dyn Write) -> Result<DecodeResult<T>> {
        self.run(y, Some(sink))
    }

    fn run(&self, y: &[T], trace: Option<&mut dyn Write>) -> Result<DecodeResult<T>> {
        let len = self.spec.len();
        if y.len() != len {
            return invalid(format!(
                "received vector has length {}, code length is {len}",
                y.len()
            ));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return invalid(format!("received vector contains non-finite value {bad}"));
        }
        let (radius_sq, v_hat, stats) = match &self.rows {
            Rows::Narrow(rows) => self.search(y, rows, trace)?,
            Rows::Medium(rows) => self.search(y, rows, trace)?,
            Rows::Wide(rows) => self.search(y, rows, trace)?,
        };
        Ok(DecodeResult {
            u_hat: bit_reverse_permute(&v_hat)?,
            v_hat,
            final_radius_sq: radius_sq,
            stats,
        })
    }

    fn search<B: BitStore>(
        &self,
        y: &[T],
        rows: &RowSupport<B>,
        mut trace: Option<&mut dyn Write>,
    ) -> Result<(T, Vec<u8>, DecodeStats)> {
        let len = self.spec.len();
        let amp = self.params.amplitude();
        let table = MetricTable::new(y, &self.params, self.kind);

        let mut stats = DecodeStats::default();
        let mut seen: HashSet<(usize, B)> = HashSet::new();
        let mut seq = 0u64;
        let mut radius_sq = T::infinity();
        let mut best: Option<B> = None;

        let mut heap = BinaryHeap::new();
        heap.push(SearchPath {
            depth: 0,
            bits: B::zeros(len),
            parity: B::zeros(len),
            last_bit: 0,
            sed: T::zero(),
            metric: T::zero(),
            seq,
        });
        stats.max_stack = 1;

        while let Some(path) = heap.pop() {
            stats.pops += 1;
            let level = len + 1 - path.depth;
            // radius may have shrunk since this path was pushed
            if path.sed >= radius_sq {
                emit(&mut trace, level, path.sed, path.metric, TraceAction::Prune)?;
                continue;
            }
            if path.depth == len {
                emit(&mut trace, level, path.sed, path.metric, TraceAction::Record)?;
                radius_sq = path.sed;
                best = Some(path.bits);
                stats.radius_updates += 1;
                continue;
            }
            emit(&mut trace, level, path.sed, path.metric, TraceAction::Expand)?;

            let pos = len - 1 - path.depth;
            let upper = if self.spec.is_frozen(pos) { 0 } else { 1 };
            for bit in 0..=upper {
                stats.node_visits += 1;
                let x = path.parity.get(pos) as u8 ^ bit;
                let s = 1 - 2 * x as i8;
                let sed = path.sed + sed_term(y[pos], s, amp);
                if !(sed < radius_sq) {
                    continue;
                }
                let mut child = SearchPath {
                    depth: path.depth + 1,
                    bits: path.bits.clone(),
                    parity: path.parity.clone(),
                    last_bit: bit,
                    sed,
                    metric: path.metric + table.increment(pos, s),
                    seq: 0,
                };
                if bit == 1 {
                    child.bits.flip(pos);
                    rows.apply(pos, &mut child.parity);
                }
                if self.options.check_unique && !seen.insert((child.depth, child.bits.clone())) {
                    return Err(Error::Defect(format!(
                        "path at level {} generated twice",
                        len + 1 - child.depth
                    )));
                }
                seq += 1;
                child.seq = seq;
                heap.push(child);
            }
            stats.max_stack = stats.max_stack.max(heap.len());
            if let Some(cap) = self.options.max_stack {
                if heap.len() >= cap {
                    return Err(Error::ResourceExhausted {
                        size: heap.len(),
                        cap,
                    });
                }
            }
        }

        let bits = best.ok_or_else(|| {
            Error::Defect("search finished without recording a full path".into())
        })?;
        let v_hat = (0..len).map(|j| bits.get(j) as u8).collect();
        Ok((radius_sq, v_hat, stats))
    }
}

fn emit<T: Scalar>(
    trace: &mut Option<&mut dyn Write>,
    level: usize,
    sed: T,
    metric: T,
    action: TraceAction,
) -> Result<()> {
    if let Some(sink) = trace {
        writeln!(sink, "{level} {sed} {metric} {}", action.as_str()).map_err(|source| {
            Error::Io {
                path: PathBuf::from("<trace>"),
                source,
            }
        })?;
    }
    Ok(())
}

/// Decodes one received block with default options.
pub fn ssd_decode<T: Scalar>(
    y: &[T],
    spec: &CodeSpec,
    params: &ChannelParams<T>,
    kind: MetricKind,
) -> Result<DecodeResult<T>> {
    StackSphereDecoder::new(spec, *params, kind).decode(y)
}

/// Exhaustive ML decoding over all `2^K` codewords.
///
/// Distances are accumulated from the last position to the first, exactly as
/// the stack decoder does. Among equal distances the lexicographically
/// smallest `v` wins.
pub fn ml_oracle<T: Scalar>(
    y: &[T],
    spec: &CodeSpec,
    params: &ChannelParams<T>,
) -> Result<DecodeResult<T>> {
    let len = spec.len();
    let k = spec.dimension();
    if k > MAX_ORACLE_DIMENSION {
        return invalid(format!(
            "refusing to enumerate 2^{k} codewords (limit 2^{MAX_ORACLE_DIMENSION})"
        ));
    }
    if y.len() != len {
        return invalid(format!(
            "received vector has length {}, code length is {len}",
            y.len()
        ));
    }
    let amp = params.amplitude();
    let cost: Vec<[T; 2]> = y
        .iter()
        .map(|&yl| [sed_term(yl, 1, amp), sed_term(yl, -1, amp)])
        .collect();
    let info = spec.info_indices();
    let rows: Vec<Vec<u8>> = info
        .iter()
        .map(|&j| {
            let mut r = vec![0u8; len];
            r[j] = 1;
            polar_transform(&mut r);
            r
        })
        .collect();

    let distance = |x: &[u8]| {
        x.iter()
            .enumerate()
            .rev()
            .fold(T::zero(), |acc, (l, &b)| acc + cost[l][b as usize])
    };

    // Gray-code walk over the information bits
    let mut v = vec![0u8; len];
    let mut x = vec![0u8; len];
    let mut best_v = v.clone();
    let mut best_d = distance(&x);
    let mut visits = 1u64;
    for step in 1u64..1 << k {
        let flip = step.trailing_zeros() as usize;
        v[info[flip]] ^= 1;
        for (xi, ri) in x.iter_mut().zip(&rows[flip]) {
            *xi ^= ri;
        }
        let d = distance(&x);
        visits += 1;
        if d < best_d || (d == best_d && v < best_v) {
            best_d = d;
            best_v.copy_from_slice(&v);
        }
    }
    Ok(DecodeResult {
        u_hat: bit_reverse_permute(&best_v)?,
        v_hat: best_v,
        final_radius_sq: best_d,
        stats: DecodeStats {
            node_visits: visits,
            ..DecodeStats::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{bpsk_map, ebn0_to_params, transmit, trial_rng};
    use crate::codes::{construct_polar, construct_rm, encode, unscramble, Construction};
    use crate::metrics::sed;
    use rand::Rng;

    fn unit_params(n0: f64) -> ChannelParams<f64> {
        ChannelParams::new(1.0, n0).unwrap()
    }

    fn random_block(spec: &CodeSpec, rng: &mut impl Rng) -> Vec<u8> {
        let info: Vec<u8> = (0..spec.dimension()).map(|_| rng.gen_range(0..2)).collect();
        unscramble(&spec.scatter_info(&info).unwrap()).unwrap()
    }

    #[test]
    fn hand_worked_rate_one_example() {
        let spec = construct_polar(1, 2).unwrap();
        let p = unit_params(1.0);
        let y = [0.9, -0.2];
        let oracle = ml_oracle(&y, &spec, &p).unwrap();
        assert_eq!(oracle.v_hat, vec![1, 1]);
        // s = (+1, −1): 0.1² + 0.8²
        assert!((oracle.final_radius_sq - 0.65).abs() < 1e-12);
        for kind in MetricKind::ALL {
            let r = ssd_decode(&y, &spec, &p, kind).unwrap();
            assert_eq!(r.v_hat, vec![1, 1], "{kind}");
            assert_eq!(r.final_radius_sq, oracle.final_radius_sq);
        }
    }

    #[test]
    fn noiseless_input_decodes_to_source() {
        let spec = construct_polar(5, 16).unwrap();
        let p = unit_params(0.5);
        let mut rng = trial_rng(3, 0, 0);
        for _ in 0..20 {
            let u = random_block(&spec, &mut rng);
            let y: Vec<f64> = bpsk_map(&encode(&u, &spec).unwrap().x)
                .iter()
                .map(|&s| s as f64)
                .collect();
            for kind in MetricKind::ALL {
                let r = ssd_decode(&y, &spec, &p, kind).unwrap();
                assert_eq!(r.u_hat, u);
                assert_eq!(r.final_radius_sq, 0.0);
                assert!(r.stats.node_visits >= spec.len() as u64);
            }
        }
    }

    #[test]
    fn oracle_breaks_total_tie_toward_zero() {
        let spec = construct_rm(3, 4).unwrap();
        let r = ml_oracle(&[0.0; 8], &spec, &unit_params(1.0)).unwrap();
        assert_eq!(r.v_hat, vec![0; 8]);
        assert_eq!(r.final_radius_sq, 8.0);
        assert_eq!(r.stats.node_visits, 16);
    }

    #[test]
    fn oracle_refuses_large_dimension() {
        let spec = construct_polar(6, 57).unwrap();
        assert!(ml_oracle(&[0.0; 64], &spec, &unit_params(1.0)).is_err());
    }

    #[test]
    fn rejects_length_mismatch_and_nan() {
        let spec = construct_polar(3, 4).unwrap();
        let p = unit_params(1.0);
        assert!(matches!(
            ssd_decode(&[0.0; 4], &spec, &p, MetricKind::M1),
            Err(Error::InvalidArgument(_))
        ));
        let mut y = [0.5; 8];
        y[3] = f64::NAN;
        assert!(ssd_decode(&y, &spec, &p, MetricKind::M1).is_err());
        assert!(ml_oracle(&[0.0; 4], &spec, &p).is_err());
    }

    #[test]
    fn matches_oracle_on_small_polar_code() {
        let spec = construct_polar(4, 8).unwrap();
        let p = ebn0_to_params::<f64>(1.0, 16, 8).unwrap();
        for t in 0..300 {
            let mut rng = trial_rng(11, 0, t);
            let u = random_block(&spec, &mut rng);
            let y = transmit(&bpsk_map(&encode(&u, &spec).unwrap().x), &p, &mut rng);
            let oracle = ml_oracle(&y, &spec, &p).unwrap();
            for kind in MetricKind::ALL {
                let r = ssd_decode(&y, &spec, &p, kind).unwrap();
                assert_eq!(r.final_radius_sq, oracle.final_radius_sq, "trial {t} {kind}");
                let s = bpsk_map(&encode(&r.u_hat, &spec).unwrap().x);
                assert_eq!(sed(&y, &s, 1.0), r.final_radius_sq);
                for j in 0..spec.len() {
                    if spec.is_frozen(j) {
                        assert_eq!(r.v_hat[j], 0);
                    }
                }
                assert!(r.stats.pops <= r.stats.node_visits + 1);
            }
        }
    }

    #[test]
    fn unique_path_audit_passes() {
        let spec = construct_rm(4, 11).unwrap();
        let p = unit_params(0.8);
        let opts = DecoderOptions {
            check_unique: true,
            ..DecoderOptions::default()
        };
        for t in 0..50 {
            let mut rng = trial_rng(5, 1, t);
            let u = random_block(&spec, &mut rng);
            let y = transmit(&bpsk_map(&encode(&u, &spec).unwrap().x), &p, &mut rng);
            for kind in MetricKind::ALL {
                StackSphereDecoder::with_options(&spec, p, kind, opts.clone())
                    .decode(&y)
                    .unwrap();
            }
        }
    }

    #[test]
    fn stack_cap_is_enforced() {
        let spec = construct_polar(5, 32).unwrap();
        let p = unit_params(4.0);
        let y: Vec<f64> = (0..32).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let opts = DecoderOptions {
            max_stack: Some(3),
            ..DecoderOptions::default()
        };
        let err = StackSphereDecoder::with_options(&spec, p, MetricKind::M0, opts)
            .decode(&y)
            .unwrap_err();
        assert!(matches!(err, Error::ResourceExhausted { cap: 3, .. }), "{err}");
    }

    #[test]
    fn trace_records_strictly_decreasing_radii() {
        let spec = construct_polar(4, 10).unwrap();
        let p = unit_params(1.0);
        let mut rng = trial_rng(8, 0, 0);
        let u = random_block(&spec, &mut rng);
        let y = transmit(&bpsk_map(&encode(&u, &spec).unwrap().x), &p, &mut rng);
        let mut buf = Vec::new();
        let r = StackSphereDecoder::new(&spec, p, MetricKind::M0)
            .decode_traced(&y, &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len() as u64, r.stats.pops);
        assert!(lines[0].starts_with("17 0 0 expand"), "{}", lines[0]);
        let radii: Vec<f64> = lines
            .iter()
            .filter(|l| l.ends_with("record"))
            .map(|l| l.split(' ').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(radii.len() as u64, r.stats.radius_updates);
        assert!(radii.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*radii.last().unwrap(), r.final_radius_sq);
    }

    #[test]
    fn m0_runs_depth_first_with_zero_branch_first() {
        // with no noise and the all-zero codeword, the first dive is the answer
        let spec = CodeSpec::from_frozen_mask(vec![false; 8], Construction::ReedMuller).unwrap();
        let p = unit_params(1.0);
        let mut buf = Vec::new();
        let r = StackSphereDecoder::new(&spec, p, MetricKind::M0)
            .decode_traced(&[1.0; 8], &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let levels: Vec<usize> = text
            .lines()
            .take(9)
            .map(|l| l.split(' ').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(levels, vec![9, 8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(r.v_hat, vec![0; 8]);
        assert_eq!(r.stats.radius_updates, 1);
    }

    #[test]
    fn single_precision_decoder_agrees_with_oracle() {
        let spec = construct_polar(4, 8).unwrap();
        let p = ChannelParams::new(1.0f32, 0.7).unwrap();
        for t in 0..50 {
            let mut rng = trial_rng(21, 0, t);
            let u = random_block(&spec, &mut rng);
            let y: Vec<f32> = transmit(&bpsk_map(&encode(&u, &spec).unwrap().x), &p, &mut rng);
            let oracle = ml_oracle(&y, &spec, &p).unwrap();
            let r = ssd_decode(&y, &spec, &p, MetricKind::M2).unwrap();
            assert_eq!(r.final_radius_sq, oracle.final_radius_sq);
        }
    }

    #[test]
    fn large_code_uses_on_the_fly_row_support() {
        let spec = construct_rm(13, 1 << 13).unwrap();
        let p = unit_params(0.1);
        let mut x = vec![0u8; 1 << 13];
        x[5] = 1;
        x[4000] = 1;
        polar_transform(&mut x);
        let y: Vec<f64> = bpsk_map(&x).iter().map(|&s| s as f64).collect();
        let r = ssd_decode(&y, &spec, &p, MetricKind::M2).unwrap();
        let mut expect = vec![0u8; 1 << 13];
        expect[5] = 1;
        expect[4000] = 1;
        assert_eq!(r.v_hat, expect);
    }
}
