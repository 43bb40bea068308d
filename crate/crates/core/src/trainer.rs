//! Joint training of item embeddings and the residual-quantization codebook.
//!
//! Each step evaluates, per co-engaged pair, the raw sampled-softmax term, one
//! term per active quantization layer (candidate replaced by its quantized
//! embedding) and the relevance term on the relevance facet. Codeword
//! assignments are treated as constants, so quantized terms send gradient to
//! the selected codewords and to the trigger only. Updates use Adagrad.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, FileKind, Reader, Writer};
use crate::corpus::{EngagementEvent, Item};
use crate::embedding::{EmbeddingStore, ItemEmbeddingTable, RowLookup};
use crate::error::{DecodeError, Error, Result};
use crate::exec::Exec;
use crate::loss::{facet_mask, ssm_accumulate, LossWeights, Shape};
use crate::math::to_f64;
use crate::quantizer::{codebook_reg_grad, init_layer, quantize_layers, Codebook, DelayedStartSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_negatives: usize,
    pub epochs: usize,
    pub w0: f64,
    /// One weight per codebook layer.
    pub layer_weights: Vec<f64>,
    /// Weight of the relevance term on `relevance_facet`.
    pub relevance_weight: f64,
    /// Facet receiving the relevance term (0-based); ignored if out of range.
    pub relevance_facet: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            batch_size: 256,
            learning_rate: 0.1,
            num_negatives: 64,
            epochs: 4,
            w0: 1.0,
            layer_weights: vec![1.0, 1.0],
            relevance_weight: 1.0,
            relevance_facet: 1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub layer_sizes: Vec<usize>,
    /// Embeddings sampled when a layer is initialized.
    pub init_sample_size: usize,
    /// Weight of the utilization regularizer.
    pub reg_weight: f64,
    pub warmup_steps: u64,
    pub layer_activation: Vec<u64>,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![64, 16],
            init_sample_size: 4096,
            reg_weight: 0.1,
            warmup_steps: 1000,
            layer_activation: vec![1000, 2000],
        }
    }
}

impl CodebookConfig {
    /// Production-scale codebook shape.
    pub fn production() -> Self {
        Self {
            layer_sizes: vec![512, 128],
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> Result<DelayedStartSchedule> {
        if self.layer_activation.len() != self.layer_sizes.len() {
            return Err(Error::config("layer_activation needs one step per codebook layer"));
        }
        DelayedStartSchedule::new(self.warmup_steps, self.layer_activation.clone())
    }
}

/// Adagrad accumulators for every embedding value and codeword value.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub embedding_accum: Vec<f32>,
    pub codebook_accum: Vec<Vec<f32>>,
}

const ADAGRAD_EPS: f64 = 1e-10;

impl OptimizerState {
    pub fn new(learning_rate: f64, table: &ItemEmbeddingTable, codebook: &Codebook) -> Self {
        Self {
            learning_rate,
            embedding_accum: vec![0.0; table.values.len()],
            codebook_accum: codebook.layers.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub trigger: usize,
    pub candidate: usize,
    pub labels: Vec<f32>,
}

/// A batch of co-engaged row pairs with shared negative rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainBatch {
    pub pairs: Vec<TrainPair>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub table: ItemEmbeddingTable,
    pub codebook: Codebook,
    pub optimizer: OptimizerState,
    pub step: u64,
    /// Layers whose codewords have been initialized (a prefix of the stack).
    pub layers_ready: usize,
}

impl TrainState {
    pub fn new(table: ItemEmbeddingTable, layer_sizes: &[usize], learning_rate: f64) -> Result<Self> {
        let codebook = Codebook::zeros(table.facets, table.dim, layer_sizes)?;
        let optimizer = OptimizerState::new(learning_rate, &table, &codebook);
        Ok(Self {
            table,
            codebook,
            optimizer,
            step: 0,
            layers_ready: 0,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.table.facets, self.table.dim)
    }

    /// Number of layers contributing to the loss at the current step.
    pub fn active_layers(&self, schedule: &DelayedStartSchedule) -> usize {
        (1..=self.codebook.num_layers())
            .take_while(|&l| l <= self.layers_ready && schedule.is_layer_active(l, self.step))
            .count()
    }
}

/// Loss configuration for [`train_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub weights: LossWeights,
    pub schedule: DelayedStartSchedule,
    pub reg_weight: f64,
    pub relevance_facet: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Mean joint loss over the batch, before the update.
    pub loss: f64,
    pub reg_loss: f64,
    pub active_layers: usize,
    pub touched_rows: Vec<usize>,
    /// `(layer, facet, codeword)` triples that received an update.
    pub touched_codewords: Vec<(usize, usize, usize)>,
}

struct PairGrad {
    loss: f64,
    trigger: Vec<f64>,
    candidate: Vec<f64>,
    negatives: Vec<f64>,
    /// Per active layer: selected codeword per facet and its gradient (`F × d`).
    codes: Vec<(Vec<usize>, Vec<f64>)>,
    /// Per active layer `l`: the residual entering layer `l` (`F × d`).
    residuals_in: Vec<Vec<f32>>,
}

fn pair_grad(
    state: &TrainState,
    cfg: &StepConfig,
    pair: &TrainPair,
    negatives: &[&[f64]],
    active: usize,
    scale: f64,
) -> Result<PairGrad> {
    let shape = state.shape();
    let row = shape.len();
    let vi = to_f64(state.table.row(pair.trigger));
    let vj32 = state.table.row(pair.candidate);
    let vj = to_f64(vj32);
    let labels: Vec<f64> = pair.labels.iter().map(|&w| w as f64).collect();
    if labels.len() != shape.facets {
        return Err(Error::arg(format!(
            "pair has {} labels for {} facets",
            labels.len(),
            shape.facets
        )));
    }
    if !vi.iter().chain(&vj).all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "embedding rows {} / {}",
            pair.trigger, pair.candidate
        )));
    }

    let mut g = PairGrad {
        loss: 0.0,
        trigger: vec![0.0; row],
        candidate: vec![0.0; row],
        negatives: vec![0.0; row * negatives.len()],
        codes: Vec::with_capacity(active),
        residuals_in: Vec::with_capacity(active),
    };
    g.loss += ssm_accumulate(
        shape,
        &vi,
        &vj,
        negatives,
        &labels,
        cfg.weights.w0 * scale,
        &mut g.trigger,
        &mut g.candidate,
        &mut g.negatives,
    );

    if active > 0 {
        let q = quantize_layers(vj32, &state.codebook, active)?;
        let mut quantized_grads = Vec::with_capacity(active);
        for l in 0..active {
            let vhat = to_f64(&q.reconstructions[l]);
            let mut gq = vec![0.0; row];
            g.loss += ssm_accumulate(
                shape,
                &vi,
                &vhat,
                negatives,
                &labels,
                cfg.weights.layers[l] * scale,
                &mut g.trigger,
                &mut gq,
                &mut g.negatives,
            );
            quantized_grads.push(gq);
        }
        // v̂^l sums the codewords of layers 1..=l, so codeword k collects the
        // gradients of every term l >= k.
        for k in 0..active {
            let mut gc = vec![0.0; row];
            for gq in &quantized_grads[k..] {
                for (a, b) in gc.iter_mut().zip(gq) {
                    *a += b;
                }
            }
            g.codes.push((q.indices[k].clone(), gc));
            g.residuals_in.push(if k == 0 {
                vj32.to_vec()
            } else {
                q.residuals[k - 1].clone()
            });
        }
    }

    if let Some(rf) = cfg.relevance_facet.filter(|&f| f < shape.facets) {
        g.loss += ssm_accumulate(
            shape,
            &vi,
            &vj,
            negatives,
            &facet_mask(&labels, rf),
            cfg.weights.aux * scale,
            &mut g.trigger,
            &mut g.candidate,
            &mut g.negatives,
        );
    }
    Ok(g)
}

fn ensure_finite(grad: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if grad.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// One optimizer step on `batch`. An empty batch leaves the state untouched.
pub fn train_step(
    state: &mut TrainState,
    batch: &TrainBatch,
    cfg: &StepConfig,
    exec: Exec,
) -> Result<StepReport> {
    let active = state.active_layers(&cfg.schedule);
    if batch.pairs.is_empty() {
        return Ok(StepReport {
            loss: 0.0,
            reg_loss: 0.0,
            active_layers: active,
            touched_rows: Vec::new(),
            touched_codewords: Vec::new(),
        });
    }
    cfg.weights.validate(state.codebook.num_layers())?;
    let items = state.table.items;
    if batch.negatives.is_empty() {
        return Err(Error::arg("batch has no negatives"));
    }
    if batch
        .pairs
        .iter()
        .any(|p| p.trigger >= items || p.candidate >= items)
        || batch.negatives.iter().any(|&n| n >= items)
    {
        return Err(Error::arg("batch row out of range"));
    }
    let candidates: HashSet<usize> = batch.pairs.iter().map(|p| p.candidate).collect();
    if batch.negatives.iter().any(|n| candidates.contains(n)) {
        return Err(Error::arg("negatives overlap batch candidates"));
    }

    let shape = state.shape();
    let (row, d, facets) = (shape.len(), shape.dim, shape.facets);
    let neg_rows: Vec<Vec<f64>> = batch
        .negatives
        .iter()
        .map(|&n| to_f64(state.table.row(n)))
        .collect();
    let negs: Vec<&[f64]> = neg_rows.iter().map(Vec::as_slice).collect();
    let scale = 1.0 / batch.pairs.len() as f64;

    let snapshot: &TrainState = state;
    let grads: Vec<Result<PairGrad>> = exec.map(&batch.pairs, |p| {
        pair_grad(snapshot, cfg, p, &negs, active, scale)
    });

    let mut row_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut add_row = |r: usize, g: &[f64]| {
        let e = row_grads.entry(r).or_insert_with(|| vec![0.0; row]);
        e.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    };
    let mut code_grads: Vec<Vec<f64>> = state.codebook.layers.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut touched: Vec<Vec<bool>> = state
        .codebook
        .layer_sizes
        .iter()
        .map(|&n| vec![false; facets * n])
        .collect();
    let mut residual_batches: Vec<Vec<Vec<f32>>> = vec![Vec::new(); active];
    let mut loss = 0.0;

    for (p, g) in batch.pairs.iter().zip(grads) {
        let g = g?;
        loss += g.loss;
        add_row(p.trigger, &g.trigger);
        add_row(p.candidate, &g.candidate);
        for (&n, gn) in batch.negatives.iter().zip(g.negatives.chunks_exact(row)) {
            add_row(n, gn);
        }
        for (l, (ks, gc)) in g.codes.iter().enumerate() {
            let n_l = state.codebook.layer_sizes[l];
            for (f, &k) in ks.iter().enumerate() {
                let slot = f * n_l + k;
                touched[l][slot] = true;
                let dst = &mut code_grads[l][slot * d..(slot + 1) * d];
                dst.iter_mut()
                    .zip(&gc[f * d..(f + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
        }
        for (l, r) in g.residuals_in.into_iter().enumerate() {
            residual_batches[l].push(r);
        }
    }

    let mut reg_loss = 0.0;
    if cfg.reg_weight > 0.0 {
        for (l, rows) in residual_batches.iter().enumerate() {
            let n_l = state.codebook.layer_sizes[l];
            let b = rows.len();
            // F × B × d
            let mut flat = vec![0.0f32; facets * b * d];
            for (k, r) in rows.iter().enumerate() {
                for f in 0..facets {
                    flat[(f * b + k) * d..(f * b + k + 1) * d].copy_from_slice(&r[f * d..(f + 1) * d]);
                }
            }
            let mut g = vec![0.0; code_grads[l].len()];
            reg_loss += cfg.reg_weight
                * codebook_reg_grad(facets, n_l, d, &state.codebook.layers[l], &flat, Some(&mut g))?;
            code_grads[l]
                .iter_mut()
                .zip(&g)
                .for_each(|(a, b)| *a += cfg.reg_weight * b);
            touched[l].iter_mut().for_each(|t| *t = true);
        }
    }

    for (&r, g) in &row_grads {
        ensure_finite(g, || format!("gradient of embedding row {r}"))?;
    }
    for (l, g) in code_grads.iter().enumerate() {
        ensure_finite(g, || format!("gradient of codebook layer {}", l + 1))?;
    }

    let lr = state.optimizer.learning_rate;
    for (&r, g) in &row_grads {
        let span = r * row..(r + 1) * row;
        adagrad(
            lr,
            &mut state.table.values[span.clone()],
            &mut state.optimizer.embedding_accum[span],
            g,
        );
    }
    let mut touched_codewords = Vec::new();
    for (l, marks) in touched.iter().enumerate() {
        let n_l = state.codebook.layer_sizes[l];
        for (slot, _) in marks.iter().enumerate().filter(|(_, &t)| t) {
            let span = slot * d..(slot + 1) * d;
            let g = &code_grads[l][span.clone()];
            let params = &mut state.codebook.layers[l][span.clone()];
            let accum = &mut state.optimizer.codebook_accum[l][span];
            adagrad(lr, params, accum, g);
            touched_codewords.push((l, slot / n_l, slot % n_l));
        }
    }
    state.step += 1;

    Ok(StepReport {
        loss: loss + reg_loss,
        reg_loss,
        active_layers: active,
        touched_rows: row_grads.keys().copied().collect(),
        touched_codewords,
    })
}

fn adagrad(lr: f64, params: &mut [f32], accum: &mut [f32], grad: &[f64]) {
    for ((p, a), &g) in params.iter_mut().zip(accum.iter_mut()).zip(grad) {
        let acc = *a as f64 + g * g;
        *a = acc as f32;
        *p -= (lr * g / (acc.sqrt() + ADAGRAD_EPS)) as f32;
    }
}

/// Training loop state over a fixed item table.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub codebook_config: CodebookConfig,
    pub item_ids: Vec<u64>,
    pub state: TrainState,
    lookup: RowLookup,
    /// Rows eligible as negatives and codebook-init samples.
    pool: Vec<usize>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped_events: usize,
}

impl Trainer {
    /// One table row per item in `items`; rows of items created before
    /// `boundary_tick` form the negative/initialization pool.
    pub fn new(
        config: TrainingConfig,
        codebook_config: CodebookConfig,
        items: &[Item],
        facets: usize,
        boundary_tick: u64,
    ) -> Result<Self> {
        if config.batch_size == 0 || config.num_negatives == 0 || config.dim == 0 {
            return Err(Error::config("batch_size, num_negatives and dim must be positive"));
        }
        if !(config.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if config.layer_weights.len() != codebook_config.layer_sizes.len() {
            return Err(Error::config("layer_weights needs one weight per codebook layer"));
        }
        codebook_config.schedule()?;
        let item_ids: Vec<u64> = items.iter().map(|it| it.item_id).collect();
        let lookup = RowLookup::build(&item_ids)?;
        let pool: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.created_at < boundary_tick)
            .map(|(r, _)| r)
            .collect();
        let table = ItemEmbeddingTable::init_uniform(items.len(), facets, config.dim, config.seed);
        let state = TrainState::new(table, &codebook_config.layer_sizes, config.learning_rate)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5151);
        Ok(Self {
            config,
            codebook_config,
            item_ids,
            state,
            lookup,
            pool,
            rng,
        })
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        Ok(StepConfig {
            weights: LossWeights {
                w0: self.config.w0,
                layers: self.config.layer_weights.clone(),
                aux: self.config.relevance_weight,
            },
            schedule: self.codebook_config.schedule()?,
            reg_weight: self.codebook_config.reg_weight,
            relevance_facet: Some(self.config.relevance_facet),
        })
    }

    fn init_sample(&mut self) -> Vec<usize> {
        let n = self.codebook_config.init_sample_size.min(self.pool.len());
        sample(&mut self.rng, self.pool.len(), n)
            .into_iter()
            .map(|i| self.pool[i])
            .collect()
    }

    /// Initializes layer `l` (0-based) from a fresh sample of current embeddings.
    fn init_layer(&mut self, l: usize) -> Result<()> {
        let rows = self.init_sample();
        let table = &self.state.table;
        let sample: Vec<&[f32]> = rows.iter().map(|&r| table.row(r)).collect();
        let seed = self.rng.random();
        init_layer(&mut self.state.codebook, l, &sample, seed)?;
        self.state.layers_ready = self.state.layers_ready.max(l + 1);
        Ok(())
    }

    fn sample_negatives(&mut self, exclude: &HashSet<usize>) -> Result<Vec<usize>> {
        let want = self.config.num_negatives;
        let eligible = self.pool.iter().filter(|r| !exclude.contains(r)).count();
        if eligible == 0 {
            return Err(Error::config("no rows available as negatives"));
        }
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let r = self.pool[self.rng.random_range(0..self.pool.len())];
            if !exclude.contains(&r) {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Runs the configured number of epochs over `events`, initializing each
    /// codebook layer when its activation step is reached. Layers that never
    /// activated are initialized at the end so the codebook is always usable.
    pub fn fit(&mut self, events: &[EngagementEvent], exec: Exec) -> Result<TrainSummary> {
        let cfg = self.step_config()?;
        let mut pairs = Vec::with_capacity(events.len());
        let mut skipped = 0;
        for e in events {
            match (self.lookup.get(e.trigger_id), self.lookup.get(e.candidate_id)) {
                (Some(t), Some(c)) if e.labels.len() == self.state.table.facets => pairs.push(TrainPair {
                    trigger: t,
                    candidate: c,
                    labels: e.labels.clone(),
                }),
                _ => skipped += 1,
            }
        }
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            pairs.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in pairs.chunks(self.config.batch_size) {
                for l in self.state.layers_ready..self.state.codebook.num_layers() {
                    if cfg.schedule.is_layer_active(l + 1, self.state.step) {
                        self.init_layer(l)?;
                    } else {
                        break;
                    }
                }
                let exclude: HashSet<usize> = chunk.iter().map(|p| p.candidate).collect();
                let negatives = self.sample_negatives(&exclude)?;
                let batch = TrainBatch {
                    pairs: chunk.to_vec(),
                    negatives,
                };
                let report = train_step(&mut self.state, &batch, &cfg, exec)?;
                total += report.loss;
                batches += 1;
            }
            epoch_losses.push(if batches > 0 { total / batches as f64 } else { 0.0 });
        }
        for l in self.state.layers_ready..self.state.codebook.num_layers() {
            self.init_layer(l)?;
        }
        Ok(TrainSummary {
            steps: self.state.step,
            epoch_losses,
            skipped_events: skipped,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.state.step,
            item_ids: self.item_ids.clone(),
            table: self.state.table.clone(),
            codebook: self.state.codebook.clone(),
            optimizer: self.state.optimizer.clone(),
            layers_ready: self.state.layers_ready,
            cold_start_seed: self.config.seed ^ 0xc01d,
        }
    }
}

/// Everything needed to resume training or publish snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub item_ids: Vec<u64>,
    pub table: ItemEmbeddingTable,
    pub codebook: Codebook,
    pub optimizer: OptimizerState,
    pub layers_ready: usize,
    pub cold_start_seed: u64,
}

impl Checkpoint {
    pub fn embedding_store(&self) -> Result<EmbeddingStore> {
        EmbeddingStore::new(self.item_ids.clone(), self.table.clone(), self.cold_start_seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Writer::new();
        meta.u64(self.step)
            .u64(self.layers_ready as u64)
            .u64(self.cold_start_seed)
            .f64(self.optimizer.learning_rate)
            .u64(self.table.items as u64)
            .u64(self.table.facets as u64)
            .u64(self.table.dim as u64);

        let mut ids = Writer::new();
        ids.u64s(&self.item_ids);

        let mut table = Writer::new();
        table.f32s(&self.table.values);

        let mut codebook = Writer::new();
        encode_codebook(&mut codebook, &self.codebook);

        let mut opt = Writer::new();
        opt.f32s(&self.optimizer.embedding_accum);
        for acc in &self.optimizer.codebook_accum {
            opt.f32s(acc);
        }

        container::encode(
            FileKind::Checkpoint,
            self.step,
            &[meta.finish(), ids.finish(), table.finish(), codebook.finish(), opt.finish()],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let decoded = container::decode(bytes, FileKind::Checkpoint)?;
        let [meta, ids, table, codebook, opt] = decoded.sections[..] else {
            return Err(DecodeError::Malformed("checkpoint expects 5 sections".into()).into());
        };
        let mut r = Reader::new(meta);
        let step = r.u64()?;
        let layers_ready = r.u64()? as usize;
        let cold_start_seed = r.u64()?;
        let learning_rate = r.f64()?;
        let items = r.u64()? as usize;
        let facets = r.u64()? as usize;
        let dim = r.u64()? as usize;

        let item_ids = Reader::new(ids).u64s()?;
        if item_ids.len() != items {
            return Err(DecodeError::Malformed("item id count mismatch".into()).into());
        }
        let values = Reader::new(table).f32s(items * facets * dim)?;
        let codebook = decode_codebook(&mut Reader::new(codebook))?;
        let mut r = Reader::new(opt);
        let embedding_accum = r.f32s(values.len())?;
        let codebook_accum = codebook
            .layers
            .iter()
            .map(|l| r.f32s(l.len()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            step,
            item_ids,
            table: ItemEmbeddingTable {
                values,
                items,
                facets,
                dim,
            },
            codebook,
            optimizer: OptimizerState {
                learning_rate,
                embedding_accum,
                codebook_accum,
            },
            layers_ready,
            cold_start_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Layer count, then per layer a `(F, N_l, d)` u32 header and row-major f32 codewords.
pub fn encode_codebook(w: &mut Writer, cb: &Codebook) {
    w.u32(cb.num_layers() as u32);
    for (l, layer) in cb.layers.iter().enumerate() {
        w.u32(cb.facets as u32)
            .u32(cb.layer_sizes[l] as u32)
            .u32(cb.dim as u32)
            .f32s(layer);
    }
}

pub fn decode_codebook(r: &mut Reader<'_>) -> Result<Codebook, DecodeError> {
    let layers = r.u32()? as usize;
    let mut sizes = Vec::with_capacity(layers);
    let mut data = Vec::with_capacity(layers);
    let mut shape = None;
    for _ in 0..layers {
        let (f, n, d) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if *shape.get_or_insert((f, d)) != (f, d) {
            return Err(DecodeError::Malformed("codebook layers disagree on F or d".into()));
        }
        sizes.push(n);
        data.push(r.f32s(f * n * d)?);
    }
    let (facets, dim) = shape.ok_or_else(|| DecodeError::Malformed("empty codebook".into()))?;
    Ok(Codebook {
        facets,
        dim,
        layer_sizes: sizes,
        layers: data,
    })
}
