//! Sampled-softmax losses over multifaceted embeddings, with analytic
//! gradients.
//!
//! Embeddings are flat `F × d` row-major slices. Each facet contributes an
//! independent softmax over the positive logit and the shared negatives; the
//! facet terms are summed with per-facet co-engagement weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot64, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub facets: usize,
    pub dim: usize,
}

impl Shape {
    pub fn new(facets: usize, dim: usize) -> Self {
        Self { facets, dim }
    }

    pub fn len(&self) -> usize {
        self.facets * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn facet<'a>(&self, v: &'a [f64], f: usize) -> &'a [f64] {
        &v[f * self.dim..(f + 1) * self.dim]
    }
}

/// Weights of the joint objective: `w0` on the raw pair, `layers[l]` on the
/// pair quantized after layer `l + 1`, `aux` on the relevance term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w0: f64,
    pub layers: Vec<f64>,
    pub aux: f64,
}

impl LossWeights {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.layers.len() != num_layers {
            return Err(Error::arg(format!(
                "expected {num_layers} layer weights, got {}",
                self.layers.len()
            )));
        }
        if self.w0 < 0.0 || self.aux < 0.0 || self.layers.iter().any(|&w| w < 0.0) {
            return Err(Error::arg("loss weights must be non-negative"));
        }
        Ok(())
    }
}

fn check_inputs(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    w: &[f64],
) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::arg("sampled softmax needs at least one negative"));
    }
    if vi.len() != shape.len()
        || vj.len() != shape.len()
        || w.len() != shape.facets
        || negatives.iter().any(|n| n.len() != shape.len())
    {
        return Err(Error::arg("embedding shapes are inconsistent"));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(vi) || !finite(vj) || !finite(w) || !negatives.iter().all(|n| finite(n)) {
        return Err(Error::NonFinite("sampled-softmax inputs".into()));
    }
    Ok(())
}

/// Gradient buffers for one sampled-softmax evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmGrad {
    pub trigger: Vec<f64>,
    pub candidate: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Weighted multifaceted sampled-softmax loss.
pub fn ssm_loss(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    w: &[f64],
) -> Result<f64> {
    check_inputs(shape, vi, vj, negatives, w)?;
    let mut logits = vec![0.0; negatives.len() + 1];
    let mut loss = 0.0;
    for (f, &wf) in w.iter().enumerate() {
        if wf == 0.0 {
            continue;
        }
        facet_logits(shape, f, vi, vj, negatives, &mut logits);
        loss += wf * (log_sum_exp(&logits) - logits[0]);
    }
    Ok(loss)
}

/// Loss and analytic gradients w.r.t. trigger, candidate and every negative.
pub fn ssm_grad(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    w: &[f64],
) -> Result<(f64, SsmGrad)> {
    check_inputs(shape, vi, vj, negatives, w)?;
    let mut trigger = vec![0.0; shape.len()];
    let mut candidate = vec![0.0; shape.len()];
    let mut flat = vec![0.0; shape.len() * negatives.len()];
    let loss = ssm_accumulate(
        shape,
        vi,
        vj,
        negatives,
        w,
        1.0,
        &mut trigger,
        &mut candidate,
        &mut flat,
    );
    let grad = SsmGrad {
        trigger,
        candidate,
        negatives: flat.chunks_exact(shape.len()).map(<[f64]>::to_vec).collect(),
    };
    Ok((loss, grad))
}

#[inline]
fn facet_logits(
    shape: Shape,
    f: usize,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    logits: &mut [f64],
) {
    let qi = shape.facet(vi, f);
    logits[0] = dot64(qi, shape.facet(vj, f));
    for (slot, n) in logits[1..].iter_mut().zip(negatives) {
        *slot = dot64(qi, shape.facet(n, f));
    }
}

/// Adds `scale ×` the gradients into the given buffers and returns
/// `scale × loss`. `g_negatives` is a flat `n × F × d` buffer. Inputs must
/// already be validated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ssm_accumulate(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    w: &[f64],
    scale: f64,
    g_trigger: &mut [f64],
    g_candidate: &mut [f64],
    g_negatives: &mut [f64],
) -> f64 {
    let d = shape.dim;
    let row = shape.len();
    let mut logits = vec![0.0; negatives.len() + 1];
    let mut loss = 0.0;
    for (f, &wf) in w.iter().enumerate() {
        let wf = wf * scale;
        if wf == 0.0 {
            continue;
        }
        facet_logits(shape, f, vi, vj, negatives, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += wf * (lse - logits[0]);

        let range = f * d..(f + 1) * d;
        let qi = &vi[range.clone()];
        let gi = &mut g_trigger[range.clone()];
        // d loss / d logit_0 = -w (1 - p0); d loss / d logit_k = w pk.
        let p0 = (logits[0] - lse).exp();
        let g0 = -wf * (1.0 - p0);
        for (g, &x) in gi.iter_mut().zip(&vj[range.clone()]) {
            *g += g0 * x;
        }
        for (g, &x) in g_candidate[range.clone()].iter_mut().zip(qi) {
            *g += g0 * x;
        }
        for (k, n) in negatives.iter().enumerate() {
            let gk = wf * (logits[k + 1] - lse).exp();
            for (g, &x) in gi.iter_mut().zip(&n[range.clone()]) {
                *g += gk * x;
            }
            let gn = &mut g_negatives[k * row + f * d..k * row + (f + 1) * d];
            for (g, &x) in gn.iter_mut().zip(qi) {
                *g += gk * x;
            }
        }
    }
    loss
}

/// `w0 · L(vi, vj) + Σ_l w_l · L(vi, v̂^l) + aux`.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    quantized: &[&[f64]],
    negatives: &[&[f64]],
    w: &[f64],
    weights: &LossWeights,
    aux: f64,
) -> Result<f64> {
    if quantized.len() != weights.layers.len() {
        return Err(Error::arg(format!(
            "{} quantized candidates for {} layer weights",
            quantized.len(),
            weights.layers.len()
        )));
    }
    let mut total = weights.w0 * ssm_loss(shape, vi, vj, negatives, w)?;
    for (q, &wl) in quantized.iter().zip(&weights.layers) {
        total += wl * ssm_loss(shape, vi, q, negatives, w)?;
    }
    Ok(total + aux)
}

/// Single-facet sampled-softmax term on the relevance facet, weighted by that
/// facet's label.
pub fn relevance_aux_loss(
    shape: Shape,
    vi: &[f64],
    vj: &[f64],
    negatives: &[&[f64]],
    labels: &[f64],
    facet: usize,
) -> Result<f64> {
    if facet >= shape.facets {
        return Err(Error::arg(format!(
            "facet {facet} out of range for {} facets",
            shape.facets
        )));
    }
    ssm_loss(shape, vi, vj, negatives, &facet_mask(labels, facet))
}

pub(crate) fn facet_mask(labels: &[f64], facet: usize) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(f, &w)| if f == facet { w } else { 0.0 })
        .collect()
}
