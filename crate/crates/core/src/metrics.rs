//! Squared Euclidean distance and the path sort metrics.
//!
//! A path `v_i^N` fixes the symbols `s_l` for `l = i..N`. Four sort keys are
//! provided, larger always meaning "expand first":
//!
//! | kind | value |
//! |------|-------|
//! | M0   | `N − i + 1` (path length) |
//! | M1   | `Σ (2√E/N0) y_l s_l − h1(y_i^N)` |
//! | M2   | `Σ (y_l s_l − |y_l|)` |
//! | M3   | `Σ (2√E/N0) y_l s_l − Σ 2E y_l²/N0² − (N − i + 1) log 2` |
//!
//! with `h1(y_i^N) = Σ log cosh(2√E y_l/N0) + (N − i + 1) log 2`. M1 is the
//! log of the marginal likelihood of the path with the undecided symbols
//! averaged out, shifted by a per-level constant; M2 and M3 are its high- and
//! low-SNR approximations.
//!
//! All four are sums of per-position terms, so the decoder evaluates them
//! through a [`MetricTable`] of `2 × N` precomputed increments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Longest prefix `likelihood_l1` will marginalize by enumeration.
pub const MAX_L1_COMPLETION: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    M0,
    M1,
    M2,
    M3,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::M0, MetricKind::M1, MetricKind::M2, MetricKind::M3];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::M0 => "m0",
            MetricKind::M1 => "m1",
            MetricKind::M2 => "m2",
            MetricKind::M3 => "m3",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" => Ok(MetricKind::M0),
            "m1" => Ok(MetricKind::M1),
            "m2" => Ok(MetricKind::M2),
            "m3" => Ok(MetricKind::M3),
            other => invalid(format!("unknown metric {other:?}; expected m0, m1, m2 or m3")),
        }
    }
}

/// `(y − √E·s)²` for one position.
#[inline]
pub fn sed_term<T: Scalar>(y: T, s: i8, amplitude: T) -> T {
    let d = if s > 0 { y - amplitude } else { y + amplitude };
    d * d
}

/// Distance of a child path: the parent's distance plus the newly decided
/// position's term.
#[inline]
pub fn sed_extend<T: Scalar>(parent_sed: T, s: i8, y: T, energy: T) -> T {
    parent_sed + sed_term(y, s, energy.sqrt())
}

/// Full-vector distance `|y − √E·s|²`, summed from the last position to the
/// first (the order the decoder accumulates it in).
pub fn sed<T: Scalar>(y: &[T], s: &[i8], energy: T) -> T {
    assert_eq!(y.len(), s.len());
    let amp = energy.sqrt();
    y.iter()
        .zip(s)
        .rev()
        .fold(T::zero(), |acc, (&yl, &sl)| acc + sed_term(yl, sl, amp))
}

/// `log cosh z`, evaluated as `|z| − log 2 + log1p(e^{−2|z|})` so it does not
/// overflow for large arguments.
#[inline]
pub fn log_cosh<T: Scalar>(z: T) -> T {
    let a = z.abs();
    a - T::LN_2() + (-(a + a)).exp().ln_1p()
}

/// Path-length metric for a path starting at 1-based level `level`
/// (`level = N + 1` is the empty root path).
pub fn metric_m0<T: Scalar>(level: usize, len: usize) -> T {
    assert!((1..=len + 1).contains(&level), "level {level} outside 1..={}", len + 1);
    T::from_usize_lossy(len + 1 - level)
}

#[inline]
fn correlation_scale<T: Scalar>(params: &ChannelParams<T>) -> T {
    T::two() * params.amplitude() / params.n0()
}

/// Correction term `h1` over the received suffix `y_i^N`.
pub fn h1<T: Scalar>(y_suffix: &[T], params: &ChannelParams<T>) -> T {
    let c = correlation_scale(params);
    y_suffix
        .iter()
        .fold(T::zero(), |acc, &y| acc + log_cosh(c * y) + T::LN_2())
}

fn check_aligned<T>(symbols: &[i8], y_suffix: &[T]) {
    assert_eq!(
        symbols.len(),
        y_suffix.len(),
        "path symbols and received suffix must cover the same positions"
    );
}

/// Correlation `Σ (2√E/N0) y_l s_l` of a path with its received suffix.
pub fn correlation<T: Scalar>(symbols: &[i8], y_suffix: &[T], params: &ChannelParams<T>) -> T {
    check_aligned(symbols, y_suffix);
    let c = correlation_scale(params);
    symbols
        .iter()
        .zip(y_suffix)
        .fold(T::zero(), |acc, (&s, &y)| {
            acc + c * y * T::from_f64_lossy(s as f64)
        })
}

/// ML path metric, evaluated directly from its definition.
pub fn metric_m1<T: Scalar>(symbols: &[i8], y_suffix: &[T], params: &ChannelParams<T>) -> T {
    correlation(symbols, y_suffix, params) - h1(y_suffix, params)
}

/// High-SNR approximation `Σ (y_l s_l − |y_l|)`. Always `≤ 0`.
pub fn metric_m2<T: Scalar>(symbols: &[i8], y_suffix: &[T]) -> T {
    check_aligned(symbols, y_suffix);
    symbols.iter().zip(y_suffix).fold(T::zero(), |acc, (&s, &y)| {
        acc + y * T::from_f64_lossy(s as f64) - y.abs()
    })
}

/// Low-SNR approximation, `log cosh z ≈ z²/2` substituted into M1.
pub fn metric_m3<T: Scalar>(symbols: &[i8], y_suffix: &[T], params: &ChannelParams<T>) -> T {
    let n0 = params.n0();
    let quad = T::two() * params.energy() / (n0 * n0);
    let energy_term = y_suffix.iter().fold(T::zero(), |acc, &y| acc + quad * y * y);
    correlation(symbols, y_suffix, params)
        - energy_term
        - T::from_usize_lossy(y_suffix.len()) * T::LN_2()
}

/// Direct evaluation of any metric for the path covering the last
/// `symbols.len()` positions of a length-`len` block.
pub fn metric_direct<T: Scalar>(
    kind: MetricKind,
    symbols: &[i8],
    y_suffix: &[T],
    params: &ChannelParams<T>,
    len: usize,
) -> T {
    match kind {
        MetricKind::M0 => metric_m0(len + 1 - symbols.len(), len),
        MetricKind::M1 => metric_m1(symbols, y_suffix, params),
        MetricKind::M2 => metric_m2(symbols, y_suffix),
        MetricKind::M3 => metric_m3(symbols, y_suffix, params),
    }
}

/// Per-position metric increments for both symbol values.
///
/// `metric(child) = metric(parent) + increment(position, s)` where `position`
/// is the 0-based index of the newly decided symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable<T> {
    kind: MetricKind,
    plus: Vec<T>,
    minus: Vec<T>,
}

impl<T: Scalar> MetricTable<T> {
    pub fn new(y: &[T], params: &ChannelParams<T>, kind: MetricKind) -> Self {
        let c = correlation_scale(params);
        let ln2 = T::LN_2();
        let n0 = params.n0();
        let quad = T::two() * params.energy() / (n0 * n0);
        let (plus, minus) = y
            .iter()
            .map(|&y| match kind {
                MetricKind::M0 => (T::one(), T::one()),
                MetricKind::M1 => {
                    let corr = c * y;
                    let h = log_cosh(corr) + ln2;
                    (corr - h, -corr - h)
                }
                MetricKind::M2 => {
                    let a = y.abs();
                    (y - a, -y - a)
                }
                MetricKind::M3 => {
                    let corr = c * y;
                    let h = quad * y * y + ln2;
                    (corr - h, -corr - h)
                }
            })
            .unzip();
        Self { kind, plus, minus }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    #[inline]
    pub fn increment(&self, position: usize, s: i8) -> T {
        if s > 0 {
            self.plus[position]
        } else {
            self.minus[position]
        }
    }

    /// Metric of a path covering the last `symbols.len()` positions, summed
    /// from the table in decoding order.
    pub fn path_metric(&self, symbols: &[i8]) -> T {
        let start = self.len() - symbols.len();
        symbols
            .iter()
            .enumerate()
            .rev()
            .fold(T::zero(), |acc, (off, &s)| acc + self.increment(start + off, s))
    }
}

pub fn build_metric_table<T: Scalar>(
    y: &[T],
    params: &ChannelParams<T>,
    kind: MetricKind,
) -> MetricTable<T> {
    MetricTable::new(y, params, kind)
}

/// Marginal likelihood of a partial path: the Gaussian likelihood of `y`
/// averaged over all `2^(i−1)` equiprobable completions of the undecided
/// prefix. Exponential in the prefix length; intended as a reference.
pub fn likelihood_l1<T: Scalar>(
    symbols: &[i8],
    y: &[T],
    params: &ChannelParams<T>,
) -> Result<T> {
    if symbols.len() > y.len() {
        return invalid("path is longer than the received vector");
    }
    let prefix = y.len() - symbols.len();
    if prefix > MAX_L1_COMPLETION {
        return invalid(format!(
            "refusing to enumerate 2^{prefix} completions (limit 2^{MAX_L1_COMPLETION})"
        ));
    }
    let amp = params.amplitude();
    let n0 = params.n0();
    let norm = (T::PI() * n0).sqrt().recip();
    let density = |yl: T, s: i8| norm * (-sed_term(yl, s, amp) / n0).exp();

    let suffix = symbols
        .iter()
        .zip(&y[prefix..])
        .fold(T::one(), |acc, (&s, &yl)| acc * density(yl, s));
    let mut total = T::zero();
    for d in 0u32..1 << prefix {
        let completion = (0..prefix).fold(T::one(), |acc, l| {
            let s = if d >> l & 1 == 0 { 1 } else { -1 };
            acc * density(y[l], s)
        });
        total = total + completion;
    }
    Ok(suffix * total / T::from_f64_lossy((1u64 << prefix) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    use crate::channel::trial_rng;

    fn params(e: f64, n0: f64) -> ChannelParams<f64> {
        ChannelParams::new(e, n0).unwrap()
    }

    fn random_case(len: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<i8>) {
        let mut rng = trial_rng(seed, 0, 0);
        let y = (0..len).map(|_| rng.gen_range(-1.0..1.0) * sigma + 0.3).collect();
        let s = (0..len).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        (y, s)
    }

    #[test]
    fn sed_extend_examples() {
        assert_eq!(sed_extend(0.0, 1, 1.0, 1.0), 0.0);
        assert_eq!(sed_extend(0.0, -1, 1.0, 1.0), 4.0);
        assert_eq!(sed_extend(2.5, -1, 1.0, 1.0), 6.5);
    }

    #[test]
    fn incremental_sed_matches_direct_objective() {
        for seed in 0..20 {
            let (y, s) = random_case(8, 2.0, seed);
            let inc = (0..8).rev().fold(0.0, |acc, l| sed_extend(acc, s[l], y[l], 1.7));
            let direct: f64 = y
                .iter()
                .zip(&s)
                .map(|(&yl, &sl)| (yl - 1.7f64.sqrt() * sl as f64).powi(2))
                .sum();
            assert_relative_eq!(inc, direct, max_relative = 1e-12);
            assert_eq!(inc, sed(&y, &s, 1.7));
        }
    }

    #[test]
    fn m0_examples() {
        assert_eq!(metric_m0::<f64>(65, 64), 0.0);
        assert_eq!(metric_m0::<f64>(1, 64), 64.0);
        assert_eq!(metric_m0::<f64>(64, 64), 1.0);
    }

    #[test]
    fn h1_examples() {
        let p = params(1.3, 0.4);
        assert_eq!(h1::<f64>(&[], &p), 0.0);
        assert_relative_eq!(h1(&[0.0; 5], &p), 5.0 * 2f64.ln(), max_relative = 1e-15);
        // z = 2·√E·y/N0 = 3: log cosh 3 + log 2 = 2.30933 + 0.69315
        let v = h1(&[3.0], &params(1.0, 2.0));
        assert!((v - 3.00248).abs() < 5e-6, "{v}");
        assert_relative_eq!(v, 3f64.cosh().ln() + 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn log_cosh_matches_naive_where_safe() {
        for k in -400..=400 {
            let z = k as f64 * 0.05;
            assert_relative_eq!(log_cosh(z), z.cosh().ln(), max_relative = 1e-12, epsilon = 1e-15);
        }
        assert!(log_cosh(1e9f64).is_finite());
        assert!(log_cosh(1e30f32).is_finite());
    }

    #[test]
    fn m1_examples() {
        let p = params(1.0, 0.8);
        assert_eq!(metric_m1::<f64>(&[], &[], &p), 0.0);
        for s in [[1i8, 1, -1], [-1, -1, -1]] {
            assert_relative_eq!(metric_m1(&s, &[0.0; 3], &p), -3.0 * 2f64.ln(), max_relative = 1e-15);
        }
    }

    #[test]
    fn m2_examples() {
        assert_eq!(metric_m2::<f64>(&[], &[]), 0.0);
        assert_eq!(metric_m2(&[1, -1, 1], &[0.4, -2.0, 0.0]), 0.0);
        assert_eq!(metric_m2(&[1], &[-0.5]), -1.0);
    }

    #[test]
    fn m3_examples() {
        let p = params(1.0, 0.5);
        assert_eq!(metric_m3::<f64>(&[], &[], &p), 0.0);
        assert_relative_eq!(metric_m3(&[1, -1], &[0.0, 0.0], &p), -2.0 * 2f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn m3_tracks_m1_at_low_snr() {
        // E/N0 = 0.01
        let p = params(1.0, 100.0);
        let mut rng = trial_rng(99, 0, 0);
        for _ in 0..50 {
            let s: Vec<i8> = (0..64).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let y = crate::channel::transmit(&s, &p, &mut rng);
            let m1 = metric_m1(&s, &y, &p);
            let m3 = metric_m3(&s, &y, &p);
            assert!(((m3 - m1) / m1).abs() < 0.01, "m1 {m1} m3 {m3}");
        }
    }

    #[test]
    fn m2_is_nonpositive_and_zero_only_on_sign_agreement() {
        for seed in 0..200 {
            let (mut y, s) = random_case(6, 1.5, seed);
            if seed % 7 == 0 {
                y[2] = 0.0;
            }
            let m = metric_m2(&s, &y);
            assert!(m <= 0.0);
            let agree = y.iter().zip(&s).all(|(&yl, &sl)| yl == 0.0 || (yl > 0.0) == (sl > 0));
            assert_eq!(m == 0.0, agree);
        }
    }

    #[test]
    fn table_entries() {
        let p = params(1.0, 1.0);
        let t = MetricTable::new(&[0.7], &p, MetricKind::M2);
        assert_eq!(t.increment(0, 1), 0.0);
        assert_relative_eq!(t.increment(0, -1), -1.4, max_relative = 1e-15);
        let t = MetricTable::new(&[0.7, -3.0, 0.1], &p, MetricKind::M0);
        for l in 0..3 {
            assert_eq!(t.increment(l, 1), 1.0);
            assert_eq!(t.increment(l, -1), 1.0);
        }
    }

    #[test]
    fn table_matches_direct_for_all_kinds() {
        let p = params(1.0, 0.6);
        for seed in 0..40 {
            let (y, s) = random_case(64, 2.5, seed);
            for kind in MetricKind::ALL {
                let table = build_metric_table(&y, &p, kind);
                for start in [0, 1, 17, 63, 64] {
                    let via_table = table.path_metric(&s[start..]);
                    let direct = metric_direct(kind, &s[start..], &y[start..], &p, 64);
                    assert_relative_eq!(via_table, direct, max_relative = 1e-12, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn l1_without_completion_is_plain_likelihood() {
        let p = params(1.0, 0.9);
        let y = [0.3, -1.2, 0.8];
        let s = [1i8, -1, -1];
        let direct: f64 = y
            .iter()
            .zip(&s)
            .map(|(&yl, &sl)| {
                (-(yl - sl as f64).powi(2) / 0.9).exp() / (std::f64::consts::PI * 0.9).sqrt()
            })
            .product();
        assert_relative_eq!(likelihood_l1(&s, &y, &p).unwrap(), direct, max_relative = 1e-14);
    }

    #[test]
    fn l1_refuses_large_completion() {
        let p = params(1.0, 1.0);
        let y = vec![0.0; MAX_L1_COMPLETION + 1];
        assert!(likelihood_l1::<f64>(&[], &y, &p).is_err());
        assert!(likelihood_l1(&[1, 1], &[0.0], &p).is_err());
    }

    #[test]
    fn metric_kind_parsing() {
        assert_eq!("M1".parse::<MetricKind>().unwrap(), MetricKind::M1);
        assert_eq!(" m3 ".parse::<MetricKind>().unwrap(), MetricKind::M3);
        assert!("m4".parse::<MetricKind>().is_err());
        assert_eq!(MetricKind::M2.to_string(), "m2");
    }
}
