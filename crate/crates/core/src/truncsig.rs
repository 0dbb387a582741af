//! Truncated path signatures.
//!
//! Coefficients are stored level-major: level 1 (`C` entries), then level 2
//! (`C^2` entries), and so on up to level `K`. Within a level, words are in
//! lexicographic order, so the word `(i_1, ..., i_k)` sits at offset
//! `i_1 C^{k-1} + ... + i_k` inside its block. Level 0 is implicitly 1.

use crate::error::{Error, Result};
use crate::paths::AugmentedPath;

/// Upper bound on the flattened signature length used by [`capped_depth`].
pub const MAX_SIG_LEN: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncSig {
    depth: usize,
    channels: usize,
    coeffs: Vec<f64>,
}

/// `C + C^2 + ... + C^K`.
pub fn sig_len(channels: usize, depth: usize) -> usize {
    let mut total = 0;
    let mut block = 1;
    for _ in 0..depth {
        block *= channels;
        total += block;
    }
    total
}

/// Largest depth `<= depth` (and at least 1) whose flattened length stays
/// within `max_len`.
pub fn capped_depth(channels: usize, depth: usize, max_len: usize) -> usize {
    let mut k = depth.max(1);
    while k > 1 && sig_len(channels, k) > max_len {
        k -= 1;
    }
    k
}

impl TruncSig {
    /// The identity element (all levels above 0 are zero).
    pub fn zeros(channels: usize, depth: usize) -> Self {
        Self {
            depth,
            channels,
            coeffs: vec![0.0; sig_len(channels, depth)],
        }
    }

    pub fn from_coeffs(channels: usize, depth: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != sig_len(channels, depth) {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for depth {} over {} channels",
                coeffs.len(),
                depth,
                channels
            )));
        }
        Ok(Self {
            depth,
            channels,
            coeffs,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficients of level `k` (1-based).
    pub fn level(&self, k: usize) -> &[f64] {
        let start = sig_len(self.channels, k - 1);
        &self.coeffs[start..start + self.channels.pow(k as u32)]
    }

    /// Inner product in the truncated tensor algebra, level 0 included.
    pub fn dot(&self, other: &TruncSig) -> f64 {
        1.0 + self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }
}

/// Truncated tensor exponential of one linear segment: level `k` is
/// `increment^{⊗k} / k!`.
pub fn segment_exp(increment: &[f64], depth: usize) -> TruncSig {
    let c = increment.len();
    let mut coeffs = Vec::with_capacity(sig_len(c, depth));
    coeffs.extend_from_slice(increment);
    let mut prev_start = 0;
    for k in 2..=depth {
        let prev_len = c.pow(k as u32 - 1);
        let inv_k = 1.0 / k as f64;
        for w in 0..prev_len {
            let a = coeffs[prev_start + w] * inv_k;
            for &x in increment {
                coeffs.push(a * x);
            }
        }
        prev_start += prev_len;
    }
    TruncSig {
        depth,
        channels: c,
        coeffs,
    }
}

/// Truncated tensor product `a ⊗ b` with level 0 equal to 1 on both sides.
pub fn chen_concat(a: &TruncSig, b: &TruncSig) -> Result<TruncSig> {
    if a.depth != b.depth || a.channels != b.channels {
        return Err(Error::ShapeMismatch(format!(
            "cannot concatenate signatures (depth {}, {} channels) and (depth {}, {} channels)",
            a.depth, a.channels, b.depth, b.channels
        )));
    }
    let c = a.channels;
    let mut out = Vec::with_capacity(a.coeffs.len());
    for k in 1..=a.depth {
        let start = out.len();
        out.extend_from_slice(a.level(k));
        let block = &mut out[start..];
        for (x, y) in block.iter_mut().zip(b.level(k)) {
            *x += y;
        }
        for i in 1..k {
            let left = a.level(i);
            let right = b.level(k - i);
            let rlen = right.len();
            for (u, &l) in left.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                let row = &mut block[u * rlen..(u + 1) * rlen];
                for (x, &r) in row.iter_mut().zip(right) {
                    *x += l * r;
                }
            }
        }
    }
    Ok(TruncSig {
        depth: a.depth,
        channels: c,
        coeffs: out,
    })
}

/// Signature of the piecewise-linear interpolation of `path`, truncated at
/// `depth`.
pub fn truncated_signature(path: &AugmentedPath, depth: usize) -> Result<TruncSig> {
    signature_of_rows(path.data(), path.channels(), depth)
}

/// Same as [`truncated_signature`] on raw row-major data.
pub fn signature_of_rows(data: &[f64], channels: usize, depth: usize) -> Result<TruncSig> {
    if depth == 0 {
        return Err(Error::InvalidInput("signature depth must be at least 1".into()));
    }
    let rows = data.len() / channels.max(1);
    if rows < 2 {
        return Err(Error::PathTooShort { rows });
    }
    let mut acc = TruncSig::zeros(channels, depth);
    let mut inc = vec![0.0; channels];
    for i in 1..rows {
        for (j, v) in inc.iter_mut().enumerate() {
            *v = data[i * channels + j] - data[(i - 1) * channels + j];
        }
        if inc.iter().all(|&v| v == 0.0) {
            continue;
        }
        acc = chen_concat(&acc, &segment_exp(&inc, depth))?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sig(rng: &mut impl Rng, c: usize, k: usize) -> TruncSig {
        let coeffs = (0..sig_len(c, k)).map(|_| rng.random_range(-1.0..1.0)).collect();
        TruncSig::from_coeffs(c, k, coeffs).unwrap()
    }

    fn path(data: Vec<f64>, c: usize) -> AugmentedPath {
        AugmentedPath::from_rows(data, c).unwrap()
    }

    #[test]
    fn lengths() {
        assert_eq!(sig_len(2, 4), 30);
        assert_eq!(sig_len(5, 3), 155);
        assert_eq!(capped_depth(5, 4, 20_000), 4);
        assert_eq!(capped_depth(19, 4, 20_000), 3);
        assert_eq!(capped_depth(200, 4, 20_000), 1);
    }

    #[test]
    fn one_dimensional_segment() {
        assert_eq!(segment_exp(&[3.0], 2).coeffs(), &[3.0, 4.5]);
    }

    #[test]
    fn zero_segment() {
        assert!(segment_exp(&[0.0, 0.0], 3).coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_segment() {
        let s = segment_exp(&[1.0, 0.0], 2);
        assert_eq!(s.level(1), &[1.0, 0.0]);
        assert_eq!(s.level(2), &[0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sig(&mut rng, 3, 3);
        let e = TruncSig::zeros(3, 3);
        assert_eq!(chen_concat(&a, &e).unwrap(), a);
        assert_eq!(chen_concat(&e, &a).unwrap(), a);
    }

    #[test]
    fn staircase() {
        let s = chen_concat(&segment_exp(&[1.0, 0.0], 2), &segment_exp(&[0.0, 1.0], 2)).unwrap();
        assert_eq!(s.level(1), &[1.0, 1.0]);
        assert_eq!(s.level(2), &[0.5, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_sig(&mut rng, 3, 3);
            let b = random_sig(&mut rng, 3, 3);
            let c = random_sig(&mut rng, 3, 3);
            let left = chen_concat(&chen_concat(&a, &b).unwrap(), &c).unwrap();
            let right = chen_concat(&a, &chen_concat(&b, &c).unwrap()).unwrap();
            for (x, y) in left.coeffs().iter().zip(right.coeffs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = TruncSig::zeros(2, 3);
        let b = TruncSig::zeros(3, 3);
        assert!(chen_concat(&a, &b).is_err());
        assert!(chen_concat(&a, &TruncSig::zeros(2, 2)).is_err());
    }

    #[test]
    fn backtracked_path_is_trivial() {
        // out along a 1-D value with time frozen, then exactly back
        let p = path(vec![0.0, 0.0, 1.0, 0.0, 2.5, 0.0, 1.0, 0.0, 0.0, 0.0], 2);
        let s = truncated_signature(&p, 4).unwrap();
        assert!(s.coeffs().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn collinear_points_match_single_segment() {
        let v = [0.7, -1.3, 2.0];
        let mut data = vec![];
        for f in [0.0, 0.1, 0.35, 0.6, 1.0] {
            data.extend(v.iter().map(|x| x * f));
        }
        let s = truncated_signature(&path(data, 3), 3).unwrap();
        let e = segment_exp(&v, 3);
        for (x, y) in s.coeffs().iter().zip(e.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_is_too_short() {
        let err = truncated_signature(&path(vec![1.0, 2.0], 2), 2).unwrap_err();
        assert!(err.to_string().contains("path too short"));
    }

    /// Iterated integrals `S^{w}(t) = ∫ S^{w-}(s) dx^{last}(s)` by the
    /// trapezoid rule on a fine resampling of the piecewise-linear path.
    fn quadrature_signature(data: &[f64], c: usize, depth: usize, sub: usize) -> Vec<f64> {
        let rows = data.len() / c;
        let mut fine = vec![];
        for i in 0..rows - 1 {
            for s in 0..sub {
                let f = s as f64 / sub as f64;
                for j in 0..c {
                    fine.push(data[i * c + j] * (1.0 - f) + data[(i + 1) * c + j] * f);
                }
            }
        }
        fine.extend_from_slice(&data[(rows - 1) * c..]);
        let n = fine.len() / c;
        let mut state: Vec<Vec<f64>> = (0..=depth).map(|k| vec![0.0; c.pow(k as u32)]).collect();
        state[0][0] = 1.0;
        for i in 1..n {
            let dx: Vec<f64> = (0..c).map(|j| fine[i * c + j] - fine[(i - 1) * c + j]).collect();
            let old = state.clone();
            for k in 1..=depth {
                for w in 0..c.pow(k as u32) {
                    let (prefix, last) = (w / c, w % c);
                    let mid = 0.5 * (old[k - 1][prefix] + state[k - 1][prefix]);
                    state[k][w] = old[k][w] + mid * dx[last];
                }
            }
        }
        state.into_iter().skip(1).flatten().collect()
    }

    #[test]
    fn matches_nested_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = truncated_signature(&path(data.clone(), 2), 4).unwrap();
        let q = quadrature_signature(&data, 2, 4, 4000);
        for (x, y) in s.coeffs().iter().zip(&q) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rows(c: usize) -> impl Strategy<Value = Vec<f64>> {
            (2usize..8).prop_flat_map(move |r| proptest::collection::vec(-2.0f64..2.0, r * c))
        }

        proptest! {
            #[test]
            fn duplicated_rows_change_nothing(data in rows(3), at in 0usize..8) {
                let c = 3;
                let r = data.len() / c;
                let at = at % r;
                let mut dup = data[..(at + 1) * c].to_vec();
                dup.extend_from_slice(&data[at * c..]);
                let a = signature_of_rows(&data, c, 3).unwrap();
                let b = signature_of_rows(&dup, c, 3).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn chen_split(data in rows(2), at in 0usize..8) {
                let c = 2;
                let r = data.len() / c;
                let at = 1 + at % (r - 1);
                let whole = signature_of_rows(&data, c, 4).unwrap();
                let first = signature_of_rows(&data[..(at + 1) * c], c, 4);
                let second = signature_of_rows(&data[at * c..], c, 4);
                let joined = match (first, second) {
                    (Ok(a), Ok(b)) => chen_concat(&a, &b).unwrap(),
                    (Ok(a), Err(_)) => a,
                    (Err(_), Ok(b)) => b,
                    _ => unreachable!(),
                };
                for (x, y) in whole.coeffs().iter().zip(joined.coeffs()) {
                    prop_assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
                }
            }

            #[test]
            fn level_scaling(data in rows(2), lambda in -3.0f64..3.0) {
                let scaled: Vec<f64> = data.iter().map(|v| v * lambda).collect();
                let a = signature_of_rows(&data, 2, 3).unwrap();
                let b = signature_of_rows(&scaled, 2, 3).unwrap();
                for k in 1..=3 {
                    let f = lambda.powi(k as i32);
                    for (x, y) in a.level(k).iter().zip(b.level(k)) {
                        prop_assert!((x * f - y).abs() < 1e-9 * (1.0 + y.abs()));
                    }
                }
            }
        }
    }
}
