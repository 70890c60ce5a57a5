//! Residual vector quantization: each stage runs Lloyd's algorithm on the
//! residuals the previous stages left behind. Seeding is deterministic, so a
//! given input and seed always produce the same codebook and indices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Codewords per stage, flattened K x dim per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebook {
    pub dim: usize,
    pub k: usize,
    pub stages: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqEncoding {
    pub codebook: RvqCodebook,
    /// Per stage, one codeword index per input vector.
    pub indices: Vec<Vec<u32>>,
    /// Total squared error remaining after each stage; non-increasing.
    pub stage_errors: Vec<f64>,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(codewords: &[f64], k: usize, dim: usize, v: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = dist_sq(&codewords[c * dim..(c + 1) * dim], v);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// K-means++ seeding followed by Lloyd iterations. Empty clusters re-seed
/// from the point farthest from its centroid.
fn fit_stage(
    data: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<u32>) {
    // Exact shortcut: when the distinct vectors fit the codebook, quantization
    // is lossless and refitting an already-quantized input reproduces itself.
    let mut distinct: Vec<usize> = Vec::new();
    'scan: for i in 0..n {
        for &j in &distinct {
            if data[i * dim..(i + 1) * dim] == data[j * dim..(j + 1) * dim] {
                continue 'scan;
            }
        }
        distinct.push(i);
        if distinct.len() > k {
            break;
        }
    }
    if distinct.len() <= k {
        let mut codewords = vec![0.0; k * dim];
        for (c, &i) in distinct.iter().enumerate() {
            codewords[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        let mut assign = vec![0u32; n];
        for i in 0..n {
            let v = &data[i * dim..(i + 1) * dim];
            let c = distinct
                .iter()
                .position(|&j| &data[j * dim..(j + 1) * dim] == v)
                .unwrap();
            assign[i] = c as u32;
        }
        return (codewords, assign);
    }

    // k-means++: D^2-weighted sampling.
    let mut codewords = vec![0.0; k * dim];
    let first = rng.gen_range(0..n);
    codewords[..dim].copy_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist_sq(&data[i * dim..(i + 1) * dim], &codewords[..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        codewords[c * dim..(c + 1) * dim].copy_from_slice(&data[pick * dim..(pick + 1) * dim]);
        for i in 0..n {
            let d = dist_sq(
                &data[i * dim..(i + 1) * dim],
                &codewords[c * dim..(c + 1) * dim],
            );
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assign = vec![0u32; n];
    for _ in 0..iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(&codewords, k, dim, &data[i * dim..(i + 1) * dim]);
            if assign[i] != c as u32 {
                assign[i] = c as u32;
                changed = true;
            }
        }
        // Centroid update.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i] as usize;
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += data[i * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    codewords[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            } else {
                // Re-seed the empty cluster from the farthest point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist_sq(
                            &data[a * dim..(a + 1) * dim],
                            &codewords[assign[a] as usize * dim..(assign[a] as usize + 1) * dim],
                        );
                        let db = dist_sq(
                            &data[b * dim..(b + 1) * dim],
                            &codewords[assign[b] as usize * dim..(assign[b] as usize + 1) * dim],
                        );
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                codewords[c * dim..(c + 1) * dim]
                    .copy_from_slice(&data[far * dim..(far + 1) * dim]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Final assignment against the last centroid update.
    for i in 0..n {
        let (c, _) = nearest(&codewords, k, dim, &data[i * dim..(i + 1) * dim]);
        assign[i] = c as u32;
    }
    (codewords, assign)
}

/// Fits `n_stages` codebooks of `k` codewords each to the `n` x `dim` input
/// and returns the encoding. Requires n >= k.
pub fn rvq_fit_encode(
    vectors: &[f64],
    n: usize,
    dim: usize,
    n_stages: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<RvqEncoding> {
    if dim == 0 || n_stages == 0 || k == 0 {
        return Err(Error::invalid("rvq needs positive dim, stages and k"));
    }
    if vectors.len() != n * dim {
        return Err(Error::invalid("rvq input length does not match n x dim"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "rvq codebook size {k} exceeds the {n} input vectors"
        )));
    }
    if k > u32::MAX as usize {
        return Err(Error::invalid("rvq codebook too large for u32 indices"));
    }
    let mut residual = vectors.to_vec();
    let mut stages = Vec::with_capacity(n_stages);
    let mut indices = Vec::with_capacity(n_stages);
    let mut stage_errors = Vec::with_capacity(n_stages);
    for stage in 0..n_stages {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (stage as u64).wrapping_mul(0x9e37_79b9));
        let (codewords, assign) = fit_stage(&residual, n, dim, k, iters, &mut rng);
        for i in 0..n {
            let c = assign[i] as usize;
            for d in 0..dim {
                residual[i * dim + d] -= codewords[c * dim + d];
            }
        }
        stage_errors.push(residual.iter().map(|v| v * v).sum());
        stages.push(codewords);
        indices.push(assign);
    }
    Ok(RvqEncoding {
        codebook: RvqCodebook { dim, k, stages },
        indices,
        stage_errors,
    })
}

/// Reconstruction: sum of the chosen codewords across stages.
pub fn rvq_decode(codebook: &RvqCodebook, indices: &[Vec<u32>], n: usize) -> Result<Vec<f64>> {
    if indices.len() != codebook.stages.len() {
        return Err(Error::invalid("rvq stage count mismatch"));
    }
    let dim = codebook.dim;
    let mut out = vec![0.0; n * dim];
    for (stage, assign) in codebook.stages.iter().zip(indices) {
        if assign.len() != n {
            return Err(Error::invalid("rvq index count mismatch"));
        }
        for i in 0..n {
            let c = assign[i] as usize;
            if c >= codebook.k {
                return Err(Error::Corrupt {
                    offset: 0,
                    msg: format!("rvq index {c} out of range (k = {})", codebook.k),
                });
            }
            for d in 0..dim {
                out[i * dim + d] += stage[c * dim + d];
            }
        }
    }
    Ok(out)
}
