//! Correlation statistics shared by the diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Largest |r| fed to `atanh`.
pub const R_CLIP: f64 = 0.999999;

/// Pearson correlation; `None` when either input has zero variance or
/// fewer than two points are given.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson inputs differ in length");
    let n = x.len();
    if n < 2 {
        return None;
    }
    // Welford-style co-moment accumulation.
    let (mut mx, mut my, mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let w = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / w;
        my += dy / w;
        cxy += dx * (b - my);
        cxx += dx * (a - mx);
        cyy += dy * (b - my);
    }
    if !(cxx > 0.0 && cyy > 0.0) {
        return None;
    }
    if x == y {
        return Some(1.0);
    }
    Some((cxy / (cxx.sqrt() * cyy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `H0: ρ = 0` for a sample correlation over `n`
/// pairs, from the t distribution with `n − 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 || !r.is_finite() {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * dist.sf(t.abs())).min(1.0))
}

fn clipped_atanh(r: f64) -> f64 {
    if r.abs() > R_CLIP {
        log::warn!("correlation {r} clipped to ±{R_CLIP} before Fisher transform");
    }
    r.clamp(-R_CLIP, R_CLIP).atanh()
}

/// `tanh(mean(atanh(r)))`; `None` for empty input. Constant input is
/// returned unchanged.
pub fn fisher_z_aggregate(rs: &[f64]) -> Option<f64> {
    if rs.is_empty() {
        return None;
    }
    if rs.iter().all(|&r| r == rs[0]) {
        return Some(rs[0]);
    }
    let z = rs.iter().map(|&r| clipped_atanh(r)).sum::<f64>() / rs.len() as f64;
    Some(z.tanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Fisher-z mean of correlations with a normal-theory 95% interval built on
/// the z scale (`z̄ ± 1.96·sd(z)/√n`) and mapped back with `tanh`. Constant
/// input collapses to a zero-width interval at that value.
pub fn fisher_z_mean_ci(rs: &[f64]) -> Option<MeanCi> {
    if rs.is_empty() {
        return None;
    }
    if rs.iter().all(|&r| r == rs[0]) {
        return Some(MeanCi {
            n: rs.len(),
            mean: rs[0],
            lower: rs[0],
            upper: rs[0],
        });
    }
    let z: Vec<f64> = rs.iter().map(|&r| clipped_atanh(r)).collect();
    let n = z.len() as f64;
    let zbar = z.iter().sum::<f64>() / n;
    let se = if z.len() > 1 {
        (z.iter().map(|v| (v - zbar).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some(MeanCi {
        n: z.len(),
        mean: zbar.tanh(),
        lower: (zbar - 1.96 * se).tanh(),
        upper: (zbar + 1.96 * se).tanh(),
    })
}

/// Correlation matrix of the columns of a row-major `n × p` matrix. Entries
/// involving a constant column are `None`; the diagonal is 1 otherwise.
pub fn correlation_matrix(rows: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    let p = rows.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..p).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    let mut out = vec![vec![None; p]; p];
    for a in 0..p {
        for b in a..p {
            let r = pearson(&cols[a], &cols[b]);
            let r = if a == b { r.map(|_| 1.0) } else { r };
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    out
}

/// Two-sided permutation test for a correlation: the share of label
/// shuffles of `y` whose |r| reaches the observed |r|, with add-one
/// smoothing.
pub fn permutation_p_value(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Option<f64> {
    let observed = pearson(x, y)?.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        shuffled.shuffle(&mut rng);
        if let Some(r) = pearson(x, &shuffled) {
            if r.abs() >= observed - 1e-12 {
                hits += 1;
            }
        }
    }
    Some((1 + hits) as f64 / (n_perm + 1) as f64)
}
