//! Empirical Wasserstein-1 distances: exact in one dimension, sliced above.

use crate::rng::{fill_normal, path_rng};

/// Number of projection directions for sliced distances.
pub const SLICED_DIRECTIONS: usize = 32;

/// `(W1, SE)` between two 1-D samples.
///
/// The distance is `∫|F̂ₐ − F̂_b|`. The standard error is
/// `√(1/n₁ + 1/n₂)·∫√(F̂(1−F̂))` with `F̂` the pooled empirical CDF, the
/// scale of the distance between two samples drawn from one law.
pub fn w1_1d(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "W1 needs nonempty samples");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let (mut w1, mut spread) = (0.0, 0.0);
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        let fp = (i + j) as f64 / (na + nb);
        let width = next - prev;
        w1 += (fa - fb).abs() * width;
        spread += (fp * (1.0 - fp)).sqrt() * width;
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    (w1, (1.0 / na + 1.0 / nb).sqrt() * spread)
}

/// Sliced W1 over [`SLICED_DIRECTIONS`] seeded unit directions; reduces to
/// [`w1_1d`] in one dimension. The SE is the mean of the per-direction SEs.
pub fn sliced_w1(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> (f64, f64) {
    let d = a.first().map_or(0, |v| v.len());
    if d == 1 {
        let pa: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let pb: Vec<f64> = b.iter().map(|v| v[0]).collect();
        return w1_1d(&pa, &pb);
    }
    let mut rng = path_rng(seed, u64::MAX);
    let mut dir = vec![0.0; d];
    let (mut w, mut se) = (0.0, 0.0);
    for _ in 0..SLICED_DIRECTIONS {
        fill_normal(&mut rng, &mut dir);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let proj = |s: &[Vec<f64>]| -> Vec<f64> {
            s.iter()
                .map(|z| z.iter().zip(&dir).map(|(x, u)| x * u).sum())
                .collect()
        };
        let (wk, sk) = w1_1d(&proj(a), &proj(b));
        w += wk;
        se += sk;
    }
    let k = SLICED_DIRECTIONS as f64;
    (w / k, se / k)
}
