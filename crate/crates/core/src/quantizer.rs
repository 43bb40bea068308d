//! Multifaceted residual quantization.
//!
//! Every facet of an item embedding is quantized independently against its
//! own stack of codeword tables: layer `l` picks the codeword nearest (squared
//! Euclidean) to the residual left by layers `1..l`, and the quantized
//! embedding after `l` layers is the sum of the selected codewords.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::l2_sq;

/// `layers[l]` is a row-major `F × N_l × d` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub facets: usize,
    pub dim: usize,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Vec<f32>>,
}

impl Codebook {
    pub fn zeros(facets: usize, dim: usize, layer_sizes: &[usize]) -> Result<Self> {
        if facets == 0 || dim == 0 || layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::arg("codebook dimensions must be positive"));
        }
        Ok(Self {
            facets,
            dim,
            layer_sizes: layer_sizes.to_vec(),
            layers: layer_sizes
                .iter()
                .map(|&n| vec![0.0; facets * n * dim])
                .collect(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Number of distinct codeword tuples, `Π N_l`.
    pub fn num_paths(&self) -> usize {
        self.layer_sizes.iter().product()
    }

    /// Codewords of facet `f` at layer `l` (0-based), `N_l × d`.
    pub fn table(&self, l: usize, f: usize) -> &[f32] {
        let span = self.layer_sizes[l] * self.dim;
        &self.layers[l][f * span..(f + 1) * span]
    }

    pub fn table_mut(&mut self, l: usize, f: usize) -> &mut [f32] {
        let span = self.layer_sizes[l] * self.dim;
        &mut self.layers[l][f * span..(f + 1) * span]
    }

    pub fn codeword(&self, l: usize, f: usize, k: usize) -> &[f32] {
        &self.table(l, f)[k * self.dim..(k + 1) * self.dim]
    }

    pub fn codeword_mut(&mut self, l: usize, f: usize, k: usize) -> &mut [f32] {
        let d = self.dim;
        &mut self.table_mut(l, f)[k * d..(k + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|x| x.is_finite())
    }

    /// Sum of the codewords along a tuple path for facet `f`.
    pub fn path_reconstruction(&self, f: usize, path: &[usize]) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (l, &k) in path.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.codeword(l, f, k)) {
                *o += c;
            }
        }
        out
    }
}

/// Index of the codeword nearest to `residual`; ties go to the lowest index.
pub fn assign(residual: &[f32], codewords: &[f32]) -> Result<usize> {
    let d = residual.len();
    if codewords.is_empty() || d == 0 {
        return Err(Error::arg("cannot assign against an empty codebook"));
    }
    if !codewords.len().is_multiple_of(d) {
        return Err(Error::arg("codeword table is not a multiple of the residual dim"));
    }
    Ok(nearest(residual, codewords))
}

#[inline]
pub(crate) fn nearest(residual: &[f32], codewords: &[f32]) -> usize {
    let mut best = 0;
    let mut best_dist = f32::INFINITY;
    for (k, c) in codewords.chunks_exact(residual.len()).enumerate() {
        let dist = l2_sq(residual, c);
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub facets: usize,
    pub dim: usize,
    /// `indices[l][f]`: codeword chosen at layer `l` for facet `f`.
    pub indices: Vec<Vec<usize>>,
    /// `residuals[l]`: `F × d` residual after layer `l + 1`.
    pub residuals: Vec<Vec<f32>>,
    /// `reconstructions[l]`: `F × d` sum of the first `l + 1` codewords.
    pub reconstructions: Vec<Vec<f32>>,
}

impl QuantizationResult {
    /// Codeword tuple of facet `f`.
    pub fn path(&self, f: usize) -> Vec<usize> {
        self.indices.iter().map(|layer| layer[f]).collect()
    }
}

/// Quantizes all facets of `v` (`F × d`) through every codebook layer.
pub fn quantize(v: &[f32], codebook: &Codebook) -> Result<QuantizationResult> {
    quantize_layers(v, codebook, codebook.num_layers())
}

/// Like [`quantize`] but stops after the first `layers` layers.
pub fn quantize_layers(v: &[f32], codebook: &Codebook, layers: usize) -> Result<QuantizationResult> {
    let (f_n, d) = (codebook.facets, codebook.dim);
    if v.len() != f_n * d {
        return Err(Error::arg(format!(
            "embedding has {} values, codebook expects {f_n} x {d}",
            v.len()
        )));
    }
    if layers > codebook.num_layers() {
        return Err(Error::arg("more layers requested than the codebook has"));
    }
    let mut residual = v.to_vec();
    let mut recon = vec![0.0f32; f_n * d];
    let mut out = QuantizationResult {
        facets: f_n,
        dim: d,
        indices: Vec::with_capacity(layers),
        residuals: Vec::with_capacity(layers),
        reconstructions: Vec::with_capacity(layers),
    };
    for l in 0..layers {
        let mut picked = Vec::with_capacity(f_n);
        for f in 0..f_n {
            let r = &mut residual[f * d..(f + 1) * d];
            let k = nearest(r, codebook.table(l, f));
            let q = codebook.codeword(l, f, k);
            for ((ri, rc), &qi) in r.iter_mut().zip(&mut recon[f * d..(f + 1) * d]).zip(q) {
                *ri -= qi;
                *rc += qi;
            }
            picked.push(k);
        }
        out.indices.push(picked);
        out.residuals.push(residual.clone());
        out.reconstructions.push(recon.clone());
    }
    Ok(out)
}

/// Codeword tuple of a single facet, writing the final residual into
/// `residual_out`. Used by bulk publishing where full results are not needed.
pub fn quantize_facet(
    v_facet: &[f32],
    codebook: &Codebook,
    f: usize,
    path_out: &mut [usize],
    residual_out: &mut [f32],
) {
    residual_out.copy_from_slice(v_facet);
    for (l, slot) in path_out.iter_mut().enumerate() {
        let k = nearest(residual_out, codebook.table(l, f));
        for (r, &q) in residual_out.iter_mut().zip(codebook.codeword(l, f, k)) {
            *r -= q;
        }
        *slot = k;
    }
}

/// Quantized embedding after layer `l` (1-based).
pub fn reconstruct(result: &QuantizationResult, l: usize) -> Result<Vec<f32>> {
    if l == 0 || l > result.reconstructions.len() {
        return Err(Error::arg(format!(
            "layer {l} out of range 1..={}",
            result.reconstructions.len()
        )));
    }
    Ok(result.reconstructions[l - 1].clone())
}

fn reg_check(
    facets: usize,
    n: usize,
    dim: usize,
    codewords: &[f32],
    residuals: &[f32],
) -> Result<usize> {
    if codewords.len() != facets * n * dim {
        return Err(Error::arg("codeword tensor does not match F x N x d"));
    }
    if residuals.is_empty() || !residuals.len().is_multiple_of(facets * dim) {
        return Err(Error::arg("regularizer needs a non-empty F x B x d residual batch"));
    }
    Ok(residuals.len() / (facets * dim))
}

/// Codeword-utilization regularizer:
/// `1/(F·N) Σ_{f,j} (Σ_k ‖C[f,j] − r[f,k]‖ / B)²`.
///
/// `codewords` is `F × N × d`, `residuals` is `F × B × d`.
pub fn codebook_reg_loss(
    facets: usize,
    n: usize,
    dim: usize,
    codewords: &[f32],
    residuals: &[f32],
) -> Result<f64> {
    codebook_reg_grad(facets, n, dim, codewords, residuals, None)
}

/// Regularizer value; when `grad` is given, adds `d loss / d C` into it.
/// Residuals are treated as constants.
pub fn codebook_reg_grad(
    facets: usize,
    n: usize,
    dim: usize,
    codewords: &[f32],
    residuals: &[f32],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let b = reg_check(facets, n, dim, codewords, residuals)?;
    let norm = 1.0 / (facets * n) as f64;
    let mut loss = 0.0;
    let mut dir = vec![0.0f64; dim];
    for f in 0..facets {
        let rs = &residuals[f * b * dim..(f + 1) * b * dim];
        for j in 0..n {
            let c = &codewords[(f * n + j) * dim..(f * n + j + 1) * dim];
            let mut sum_dist = 0.0;
            dir.iter_mut().for_each(|x| *x = 0.0);
            for r in rs.chunks_exact(dim) {
                let dist = (l2_sq(c, r) as f64).sqrt();
                sum_dist += dist;
                if grad.is_some() && dist > 0.0 {
                    for ((g, &ci), &ri) in dir.iter_mut().zip(c).zip(r) {
                        *g += (ci - ri) as f64 / dist;
                    }
                }
            }
            let mean = sum_dist / b as f64;
            loss += mean * mean;
            if let Some(g) = grad.as_deref_mut() {
                let scale = norm * 2.0 * mean / b as f64;
                let out = &mut g[(f * n + j) * dim..(f * n + j + 1) * dim];
                for (o, &x) in out.iter_mut().zip(&dir) {
                    *o += scale * x;
                }
            }
        }
    }
    Ok(norm * loss)
}

/// Layer-wise activation schedule for the quantized loss terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayedStartSchedule {
    pub warmup_steps: u64,
    /// Step at which each layer (in order) becomes active.
    pub per_layer_activation: Vec<u64>,
}

impl DelayedStartSchedule {
    pub fn new(warmup_steps: u64, per_layer_activation: Vec<u64>) -> Result<Self> {
        let s = Self {
            warmup_steps,
            per_layer_activation,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.per_layer_activation.first() {
            None => return Err(Error::config("schedule needs at least one layer")),
            Some(&first) if first < self.warmup_steps => {
                return Err(Error::config("first layer activates before warm-up ends"))
            }
            _ => {}
        }
        if self.per_layer_activation.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("layer activation steps must be non-decreasing"));
        }
        Ok(())
    }

    /// All layers active from step 0.
    pub fn immediate(layers: usize) -> Self {
        Self {
            warmup_steps: 0,
            per_layer_activation: vec![0; layers],
        }
    }

    /// Whether `layer` (1-based) is active at `step`; activation is inclusive.
    pub fn is_layer_active(&self, layer: usize, step: u64) -> bool {
        layer >= 1
            && self
                .per_layer_activation
                .get(layer - 1)
                .is_some_and(|&t| step >= t)
    }
}

/// Builds a full codebook layer by layer from a sample of `F × d` embeddings.
///
/// Layer 1 takes the first `N_1` sampled embeddings (per facet, skipping exact
/// duplicates when possible); every later layer takes `N_l` residuals of the
/// sample drawn uniformly without replacement under the layers built so far.
pub fn init_codebook(
    sample: &[&[f32]],
    facets: usize,
    dim: usize,
    layer_sizes: &[usize],
    seed: u64,
) -> Result<Codebook> {
    let mut cb = Codebook::zeros(facets, dim, layer_sizes)?;
    for l in 0..layer_sizes.len() {
        init_layer(&mut cb, l, sample, seed.wrapping_add(l as u64))?;
    }
    Ok(cb)
}

/// (Re)initializes layer `l` (0-based) from `sample`; layers `< l` must
/// already hold their final values.
pub fn init_layer(cb: &mut Codebook, l: usize, sample: &[&[f32]], seed: u64) -> Result<()> {
    let (f_n, d) = (cb.facets, cb.dim);
    let n_l = cb.layer_sizes[l];
    if sample.len() < n_l {
        return Err(Error::arg(format!(
            "codebook init needs at least {n_l} samples, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|s| s.len() != f_n * d) {
        return Err(Error::arg("sample embeddings do not match F x d"));
    }
    if l == 0 {
        for f in 0..f_n {
            let rows = distinct_prefix(sample, f, d, n_l);
            let table = cb.table_mut(0, f);
            for (k, s) in rows.into_iter().enumerate() {
                table[k * d..(k + 1) * d].copy_from_slice(&sample[s][f * d..(f + 1) * d]);
            }
        }
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, sample.len(), n_l).into_vec();
    let prefix = cb.clone();
    for (k, &s) in picks.iter().enumerate() {
        let q = quantize_layers(sample[s], &prefix, l)?;
        let r = &q.residuals[l - 1];
        for f in 0..f_n {
            cb.codeword_mut(l, f, k).copy_from_slice(&r[f * d..(f + 1) * d]);
        }
    }
    Ok(())
}

fn distinct_prefix(sample: &[&[f32]], f: usize, d: usize, n: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for (s, v) in sample.iter().enumerate() {
        if chosen.len() == n {
            break;
        }
        let facet = &v[f * d..(f + 1) * d];
        if !chosen.iter().any(|&c| &sample[c][f * d..(f + 1) * d] == facet) {
            chosen.push(s);
        }
    }
    // Not enough distinct rows: fill with the earliest unused ones.
    let mut s = 0;
    while chosen.len() < n {
        if !chosen.contains(&s) {
            chosen.push(s);
        }
        s += 1;
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_codebook(rng: &mut ChaCha8Rng, facets: usize, dim: usize, sizes: &[usize]) -> Codebook {
        let mut cb = Codebook::zeros(facets, dim, sizes).unwrap();
        for layer in &mut cb.layers {
            layer.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        cb
    }

    #[test]
    fn assign_examples() {
        assert_eq!(assign(&[1.0, 0.0], &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap(), 1);
        assert_eq!(assign(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap(), 0);
        assert_eq!(assign(&[2.0, 1.0], &[0.0, 0.0, 3.0, 3.0, 2.0, 0.0]).unwrap(), 2);
        assert!(assign(&[1.0], &[]).is_err());
    }

    #[test]
    fn exact_two_layer_match() {
        let mut cb = Codebook::zeros(1, 2, &[2, 2]).unwrap();
        cb.codeword_mut(0, 0, 1).copy_from_slice(&[3.0, -1.0]);
        cb.codeword_mut(0, 0, 0).copy_from_slice(&[10.0, 10.0]);
        cb.codeword_mut(1, 0, 1).copy_from_slice(&[0.5, 0.5]);
        let v = [3.0, -1.0];
        let q = quantize(&v, &cb).unwrap();
        assert_eq!(q.path(0), vec![1, 0]);
        assert_eq!(reconstruct(&q, 2).unwrap(), v.to_vec());
        assert_eq!(q.residuals[1], vec![0.0, 0.0]);
        assert_eq!(reconstruct(&q, 1).unwrap(), cb.codeword(0, 0, 1).to_vec());
        assert!(reconstruct(&q, 0).is_err());
        assert!(reconstruct(&q, 3).is_err());
    }

    #[test]
    fn symmetric_facets_share_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = random_codebook(&mut rng, 1, 4, &[8, 4]);
        let mut cb = Codebook::zeros(2, 4, &[8, 4]).unwrap();
        for l in 0..2 {
            let t = single.table(l, 0).to_vec();
            cb.table_mut(l, 0).copy_from_slice(&t);
            cb.table_mut(l, 1).copy_from_slice(&t);
        }
        let half = random_vec(&mut rng, 4);
        let v: Vec<f32> = half.iter().chain(&half).copied().collect();
        let q = quantize(&v, &cb).unwrap();
        assert_eq!(q.path(0), q.path(1));
    }

    #[test]
    fn residual_chain_matches_independent_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cb = random_codebook(&mut rng, 2, 6, &[16, 8]);
        for _ in 0..50 {
            let v = random_vec(&mut rng, 12);
            let q = quantize(&v, &cb).unwrap();
            for f in 0..2 {
                let k1 = q.indices[0][f];
                let k2 = q.indices[1][f];
                let r1: Vec<f32> = v[f * 6..(f + 1) * 6]
                    .iter()
                    .zip(cb.codeword(0, f, k1))
                    .map(|(a, b)| a - b)
                    .collect();
                let r2: Vec<f32> = r1.iter().zip(cb.codeword(1, f, k2)).map(|(a, b)| a - b).collect();
                assert_eq!(&q.residuals[0][f * 6..(f + 1) * 6], r1.as_slice());
                assert_eq!(&q.residuals[1][f * 6..(f + 1) * 6], r2.as_slice());
            }
        }
    }

    #[test]
    fn quantize_shape_mismatch() {
        let cb = Codebook::zeros(2, 3, &[4]).unwrap();
        assert!(quantize(&[0.0; 5], &cb).is_err());
    }

    #[test]
    fn init_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> = (0..64).map(|_| random_vec(&mut rng, 8)).collect();
        let sample: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();

        let cb = init_codebook(&sample, 2, 4, &[1], 0).unwrap();
        assert_eq!(cb.table(0, 0), &rows[0][..4]);
        assert_eq!(cb.table(0, 1), &rows[0][4..]);

        let cb = init_codebook(&sample, 2, 4, &[8, 4], 9).unwrap();
        // Sampled items that seeded layer 1 quantize to a zero layer-1 residual.
        for row in &rows[..8] {
            let q = quantize(row, &cb).unwrap();
            assert!(q.residuals[0].iter().all(|&x| x == 0.0));
        }
        // Layer-2 codewords are layer-1 residuals of sample members.
        for f in 0..2 {
            for k in 0..4 {
                let c = cb.codeword(1, f, k);
                let found = rows.iter().any(|row| {
                    let v = &row[f * 4..(f + 1) * 4];
                    let nearest = (0..8)
                        .min_by(|&a, &b| {
                            l2_sq(v, cb.codeword(0, f, a))
                                .partial_cmp(&l2_sq(v, cb.codeword(0, f, b)))
                                .unwrap()
                        })
                        .unwrap();
                    let r: Vec<f32> = v.iter().zip(cb.codeword(0, f, nearest)).map(|(a, b)| a - b).collect();
                    r == c
                });
                assert!(found, "layer-2 codeword {k} of facet {f} is not a sample residual");
            }
        }
        assert!(init_codebook(&sample[..4], 2, 4, &[8], 0).is_err());
    }

    #[test]
    fn regularizer_examples() {
        // One codeword equal to every residual.
        let l = codebook_reg_loss(1, 1, 2, &[1.0, 2.0], &[1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        // ((1 + 3) / 2)^2 = 4
        let l = codebook_reg_loss(1, 1, 1, &[0.0], &[1.0, 3.0]).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        assert!(codebook_reg_loss(1, 1, 1, &[0.0], &[]).is_err());
    }

    #[test]
    fn regularizer_is_homogeneous_of_degree_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_vec(&mut rng, 2 * 3 * 4);
        let r = random_vec(&mut rng, 2 * 5 * 4);
        let base = codebook_reg_loss(2, 3, 4, &c, &r).unwrap();
        let k = 2.5f32;
        let cs: Vec<f32> = c.iter().map(|x| x * k).collect();
        let rs: Vec<f32> = r.iter().map(|x| x * k).collect();
        let scaled = codebook_reg_loss(2, 3, 4, &cs, &rs).unwrap();
        assert!((scaled - base * (k as f64).powi(2)).abs() < 1e-4 * scaled.abs());
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = random_vec(&mut rng, 2 * 3 * 4);
        let r = random_vec(&mut rng, 2 * 6 * 4);
        let mut g = vec![0.0; c.len()];
        codebook_reg_grad(2, 3, 4, &c, &r, Some(&mut g)).unwrap();
        let h = 1e-2f32;
        for k in 0..c.len() {
            let (mut a, mut b) = (c.clone(), c.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (codebook_reg_loss(2, 3, 4, &a, &r).unwrap()
                - codebook_reg_loss(2, 3, 4, &b, &r).unwrap())
                / (2.0 * h as f64);
            assert!((fd - g[k]).abs() < 1e-3, "coord {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn regularizer_step_shrinks_popular_codeword_term() {
        // 90% of residuals sit near codeword 0, the rest near codeword 1.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = Vec::new();
        for i in 0..100 {
            let centre = if i < 90 { 0.0 } else { 5.0 };
            r.push(centre + rng.random_range(-0.5f32..0.5));
            r.push(rng.random_range(-0.5f32..0.5));
        }
        let c = vec![0.3f32, 0.2, 5.0, 0.0];
        let popular_term = |c: &[f32]| codebook_reg_loss(1, 1, 2, &c[..2], &r).unwrap();
        let mut g = vec![0.0; 4];
        let before = codebook_reg_grad(1, 2, 2, &c, &r, Some(&mut g)).unwrap();
        let stepped: Vec<f32> = c.iter().zip(&g).map(|(x, g)| x - 0.1 * *g as f32).collect();
        let after = codebook_reg_loss(1, 2, 2, &stepped, &r).unwrap();
        assert!(after < before);
        assert!(popular_term(&stepped) < popular_term(&c));
    }

    #[test]
    fn schedule_rules() {
        let s = DelayedStartSchedule::new(100, vec![100, 200]).unwrap();
        assert!(!s.is_layer_active(1, 0));
        assert!(s.is_layer_active(1, 150));
        assert!(!s.is_layer_active(2, 150));
        assert!(s.is_layer_active(2, 200));
        assert!(s.is_layer_active(1, 100));
        assert!(DelayedStartSchedule::new(100, vec![50]).is_err());
        assert!(DelayedStartSchedule::new(0, vec![20, 10]).is_err());
    }

    proptest! {
        #[test]
        fn telescoping_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = random_codebook(&mut rng, 2, 5, &[7, 3, 2]);
            let v = random_vec(&mut rng, 10);
            let q = quantize(&v, &cb).unwrap();
            for l in 0..3 {
                for (i, x) in v.iter().enumerate() {
                    let sum = q.reconstructions[l][i] + q.residuals[l][i];
                    prop_assert!((sum - x).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn assignment_is_optimal(seed in any::<u64>(), n in 1usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = random_vec(&mut rng, n * 3);
            let r = random_vec(&mut rng, 3);
            let k = assign(&r, &table).unwrap();
            let best = l2_sq(&r, &table[k * 3..k * 3 + 3]);
            for j in 0..n {
                prop_assert!(best <= l2_sq(&r, &table[j * 3..j * 3 + 3]));
            }
        }

        #[test]
        fn facet_quantization_is_independent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = random_codebook(&mut rng, 2, 4, &[6, 3]);
            let v = random_vec(&mut rng, 8);
            let mut w = v.clone();
            for x in &mut w[4..] {
                *x += rng.random_range(-3.0f32..3.0);
            }
            let a = quantize(&v, &cb).unwrap();
            let b = quantize(&w, &cb).unwrap();
            prop_assert_eq!(a.path(0), b.path(0));
            prop_assert_eq!(&a.residuals[1][..4], &b.residuals[1][..4]);
        }
    }
}
