//! Encoder, gate, fusion, and head wiring over the autodiff graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{BatchInput, Modality, ModalitySet, ModelConfig};
use crate::datahub::{CAT_FIELDS, TEXT_FIELDS};
use crate::diffcore::{mix_seed, Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Dropout site tags; each site derives its mask seed from the batch seed,
/// so masks differ across sites but are reproducible per batch.
const SITE_TAB_NUM0: u64 = 0;
const SITE_TAB_NUM1: u64 = 1;
const SITE_TAB_PROJ: u64 = 2;
const SITE_TEXT_PROJ: u64 = 3;
const SITE_SP_NUM0: u64 = 4;
const SITE_SP_NUM1: u64 = 5;
const SITE_SP_PROJ: u64 = 6;
const SITE_FUSION0: u64 = 7;
const SITE_FUSION1: u64 = 8;

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    /// Dropout active; masks derived from the given seed.
    Train { dropout_seed: u64 },
    /// Deterministic forward, no dropout.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Handles {
    tab_embed: Option<[ParamId; 5]>,
    tab_num: Option<[DenseIds; 2]>,
    tab_proj: Option<DenseIds>,
    text_proj: Option<DenseIds>,
    sp_point: Option<DenseIds>,
    sp_pos: Option<ParamId>,
    sp_conv: Option<[DenseIds; 2]>,
    sp_num: Option<[DenseIds; 2]>,
    sp_proj: Option<DenseIds>,
    gate: Option<[DenseIds; 2]>,
    fusion: [DenseIds; 2],
    head_reg: DenseIds,
    head_band: DenseIds,
}

/// Node handles from one forward pass; values and gradients are read from
/// the graph that built them.
pub struct ForwardNodes {
    /// Per-modality latent, in fixed modality order.
    pub z: Vec<NodeId>,
    /// Boundary input node, for input-gradient analyses.
    pub boundary_input: Option<NodeId>,
    /// None for single-modality models (gate bypassed, weight 1).
    pub alpha: Option<NodeId>,
    pub z_fuse: NodeId,
    /// (B, 2) normalized-scale predictions.
    pub y_hat: NodeId,
    /// (B, 2*n_bands) logits; first n_bands columns are the SAP head.
    pub band_logits: NodeId,
}

/// Materialized eval outputs for one batch.
#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub z: Vec<Tensor>,
    /// (B, n_modalities); all-ones for single-modality models.
    pub alpha: Tensor,
    pub z_fuse: Tensor,
    pub y_hat: Tensor,
    /// (B, 2, n_bands).
    pub band_logits: Tensor,
}

pub struct FusionModel {
    config: ModelConfig,
    modalities: ModalitySet,
    vocab_sizes: [usize; 5],
    pub store: ParamStore,
    ids: Handles,
}

fn xavier(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("consistent init shape")
}

fn gaussian(rng: &mut ChaCha20Rng, std: f64, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
        })
        .collect();
    Tensor::new(shape, data).expect("consistent init shape")
}

fn add_dense(
    store: &mut ParamStore,
    rng: &mut ChaCha20Rng,
    name: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
) -> DenseIds {
    let w = store.add(
        format!("{name}.w"),
        group,
        xavier(rng, fan_in, fan_out, vec![fan_in, fan_out]),
    );
    let b = store.add(format!("{name}.b"), group, Tensor::zeros(vec![fan_out]));
    DenseIds { w, b }
}

impl FusionModel {
    /// Builds a freshly initialized model. Parameter creation order is
    /// fixed, so a given (config, modalities, vocab, seed) always yields
    /// the same weights.
    pub fn new(
        config: &ModelConfig,
        modalities: ModalitySet,
        vocab_sizes: [usize; 5],
        seed: u64,
    ) -> Result<FusionModel> {
        config.validate()?;
        if vocab_sizes.iter().any(|&v| v == 0) {
            return Err(Error::InvalidConfig("empty vocabulary".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.latent_dim;
        let e = config.cat_embed_dim;

        let tab = modalities.contains(Modality::Tabular).then(|| {
            let embeds = std::array::from_fn(|f| {
                store.add(
                    format!("tab.embed.{}", CAT_FIELDS[f]),
                    ParamGroup::Main,
                    gaussian(&mut rng, 0.02, vec![vocab_sizes[f], e]),
                )
            });
            let num = [
                add_dense(&mut store, &mut rng, "tab.num.0", ParamGroup::Main, 4, config.numeric_mlp[0]),
                add_dense(
                    &mut store,
                    &mut rng,
                    "tab.num.1",
                    ParamGroup::Main,
                    config.numeric_mlp[0],
                    config.numeric_mlp[1],
                ),
            ];
            let proj = add_dense(
                &mut store,
                &mut rng,
                "tab.proj",
                ParamGroup::Main,
                5 * e + config.numeric_mlp[1],
                d,
            );
            (embeds, num, proj)
        });

        let text_proj = modalities.contains(Modality::Text).then(|| {
            add_dense(
                &mut store,
                &mut rng,
                "text.proj",
                ParamGroup::Projection,
                config.text_dim,
                d,
            )
        });

        let spatial = modalities.contains(Modality::Spatial).then(|| {
            let point = add_dense(&mut store, &mut rng, "spatial.point", ParamGroup::Main, 2, d);
            let pos = store.add(
                "spatial.pos",
                ParamGroup::Main,
                gaussian(&mut rng, 0.02, vec![config.boundary_len, d]),
            );
            let conv = [
                add_dense(&mut store, &mut rng, "spatial.conv1", ParamGroup::Main, 3 * d, d),
                add_dense(&mut store, &mut rng, "spatial.conv2", ParamGroup::Main, 3 * d, d),
            ];
            let num = [
                add_dense(
                    &mut store,
                    &mut rng,
                    "spatial.num.0",
                    ParamGroup::Main,
                    3,
                    config.spatial_numeric_mlp[0],
                ),
                add_dense(
                    &mut store,
                    &mut rng,
                    "spatial.num.1",
                    ParamGroup::Main,
                    config.spatial_numeric_mlp[0],
                    config.spatial_numeric_mlp[1],
                ),
            ];
            let proj = add_dense(
                &mut store,
                &mut rng,
                "spatial.proj",
                ParamGroup::Main,
                d + config.spatial_numeric_mlp[1],
                d,
            );
            (point, pos, conv, num, proj)
        });

        let n_mod = modalities.len();
        let gate = (n_mod >= 2).then(|| {
            [
                add_dense(&mut store, &mut rng, "gate.0", ParamGroup::Main, n_mod * d, config.gate_hidden),
                add_dense(&mut store, &mut rng, "gate.1", ParamGroup::Main, config.gate_hidden, n_mod),
            ]
        });
        let fusion = [
            add_dense(&mut store, &mut rng, "fusion.0", ParamGroup::Main, n_mod * d, config.fusion_mlp[0]),
            add_dense(
                &mut store,
                &mut rng,
                "fusion.1",
                ParamGroup::Main,
                config.fusion_mlp[0],
                config.fusion_mlp[1],
            ),
        ];
        let head_reg = add_dense(&mut store, &mut rng, "head.reg", ParamGroup::Main, config.fused_dim(), 2);
        let head_band = add_dense(
            &mut store,
            &mut rng,
            "head.band",
            ParamGroup::Main,
            config.fused_dim(),
            2 * config.n_bands,
        );

        let (tab_embed, tab_num, tab_proj) = match tab {
            Some((a, b, c)) => (Some(a), Some(b), Some(c)),
            None => (None, None, None),
        };
        let (sp_point, sp_pos, sp_conv, sp_num, sp_proj) = match spatial {
            Some((a, b, c, d2, e2)) => (Some(a), Some(b), Some(c), Some(d2), Some(e2)),
            None => (None, None, None, None, None),
        };
        Ok(FusionModel {
            config: config.clone(),
            modalities,
            vocab_sizes,
            store,
            ids: Handles {
                tab_embed,
                tab_num,
                tab_proj,
                text_proj,
                sp_point,
                sp_pos,
                sp_conv,
                sp_num,
                sp_proj,
                gate,
                fusion,
                head_reg,
                head_band,
            },
        })
    }

    /// Rebuilds the parameter handle table for a store loaded from a
    /// checkpoint. The store must have the exact creation-order layout
    /// that `new` produces for the same (config, modalities).
    pub fn from_parts(
        config: &ModelConfig,
        modalities: ModalitySet,
        vocab_sizes: [usize; 5],
        store: ParamStore,
    ) -> Result<FusionModel> {
        let template = FusionModel::new(config, modalities, vocab_sizes, 0)?;
        if template.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: expected {}, found {}",
                template.store.len(),
                store.len()
            )));
        }
        for ((_, want), (_, got)) in template.store.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(FusionModel { store, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> ModalitySet {
        self.modalities
    }

    pub fn vocab_sizes(&self) -> [usize; 5] {
        self.vocab_sizes
    }

    fn dense_p(&self, g: &mut Graph, x: NodeId, ids: DenseIds) -> Result<NodeId> {
        let w = g.param(&self.store, ids.w);
        let b = g.param(&self.store, ids.b);
        g.dense(x, w, b)
    }

    fn drop(&self, g: &mut Graph, x: NodeId, site: u64, mode: Mode) -> Result<NodeId> {
        match mode {
            Mode::Train { dropout_seed } if self.config.dropout > 0.0 => {
                g.dropout(x, self.config.dropout, mix_seed(dropout_seed, site))
            }
            _ => Ok(x),
        }
    }

    /// Categorical embeddings concatenated with the numeric-MLP output,
    /// then projected to the shared latent width.
    pub fn encode_tabular(
        &self,
        g: &mut Graph,
        cat_idx: &[Vec<u32>; 5],
        nums: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let embeds = self.ids.tab_embed.as_ref().ok_or_else(|| {
            Error::InvalidConfig("tabular encoder absent from this model".into())
        })?;
        let num = self.ids.tab_num.as_ref().expect("tabular layers exist together");
        let proj = self.ids.tab_proj.expect("tabular layers exist together");
        let mut parts = Vec::with_capacity(6);
        for f in 0..5 {
            let table = g.param(&self.store, embeds[f]);
            parts.push(g.embed(table, cat_idx[f].clone())?);
        }
        let mut x = self.dense_p(g, nums, num[0])?;
        x = g.relu(x);
        x = self.drop(g, x, SITE_TAB_NUM0, mode)?;
        x = self.dense_p(g, x, num[1])?;
        x = g.relu(x);
        x = self.drop(g, x, SITE_TAB_NUM1, mode)?;
        parts.push(x);
        let cat = g.concat(&parts)?;
        let mut z = self.dense_p(g, cat, proj)?;
        z = g.relu(z);
        self.drop(g, z, SITE_TAB_PROJ, mode)
    }

    /// Presence-masked mean over field embeddings, then projection.
    pub fn encode_text(
        &self,
        g: &mut Graph,
        text: NodeId,
        mask: &[f64],
        mode: Mode,
    ) -> Result<NodeId> {
        let proj = self.ids.text_proj.ok_or_else(|| {
            Error::InvalidConfig("text encoder absent from this model".into())
        })?;
        let pooled = g.masked_mean_pool(text, mask)?;
        let mut z = self.dense_p(g, pooled, proj)?;
        z = g.relu(z);
        self.drop(g, z, SITE_TEXT_PROJ, mode)
    }

    /// Boundary branch (point projection, positional encoding, two convs,
    /// average pool) concatenated with the numeric branch, then projected.
    pub fn encode_spatial(
        &self,
        g: &mut Graph,
        boundary: NodeId,
        nums: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let point = self.ids.sp_point.ok_or_else(|| {
            Error::InvalidConfig("spatial encoder absent from this model".into())
        })?;
        let pos = self.ids.sp_pos.expect("spatial layers exist together");
        let conv = self.ids.sp_conv.as_ref().expect("spatial layers exist together");
        let num = self.ids.sp_num.as_ref().expect("spatial layers exist together");
        let proj = self.ids.sp_proj.expect("spatial layers exist together");

        let shape = g.value(boundary).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.config.boundary_len || shape[2] != 2 {
            return Err(Error::ShapeError {
                op: "encode_spatial".into(),
                detail: format!(
                    "boundary shape {:?}, expected (B, {}, 2)",
                    shape, self.config.boundary_len
                ),
            });
        }
        let (bs, l) = (shape[0], shape[1]);
        let d = self.config.latent_dim;

        let flat = g.reshape(boundary, vec![bs * l, 2])?;
        let pts = self.dense_p(g, flat, point)?;
        let seq = g.reshape(pts, vec![bs, l, d])?;
        let pos_node = g.param(&self.store, pos);
        let mut x = g.add_pos(seq, pos_node)?;
        for c in conv {
            let w = g.param(&self.store, c.w);
            let b = g.param(&self.store, c.b);
            x = g.conv1d(x, w, b, 3)?;
            x = g.relu(x);
        }
        let s = g.global_avg_pool(x)?;

        let mut u = self.dense_p(g, nums, num[0])?;
        u = g.relu(u);
        u = self.drop(g, u, SITE_SP_NUM0, mode)?;
        u = self.dense_p(g, u, num[1])?;
        u = g.relu(u);
        u = self.drop(g, u, SITE_SP_NUM1, mode)?;

        let cat = g.concat(&[s, u])?;
        let mut z = self.dense_p(g, cat, proj)?;
        z = g.relu(z);
        self.drop(g, z, SITE_SP_PROJ, mode)
    }

    /// Gate, rescale, fusion MLP, and heads over per-modality latents.
    /// `zs` must match this model's modality subset in order.
    pub fn fuse(&self, g: &mut Graph, zs: &[NodeId], mode: Mode) -> Result<ForwardNodes> {
        let n_mod = self.modalities.len();
        if zs.len() != n_mod {
            return Err(Error::ShapeError {
                op: "fuse".into(),
                detail: format!("{} latents for {} modalities", zs.len(), n_mod),
            });
        }
        let (alpha, fused_input) = if n_mod == 1 {
            (None, zs[0])
        } else {
            let zcat = g.concat(zs)?;
            let mut h = self.dense_p(g, zcat, self.ids.gate.as_ref().unwrap()[0])?;
            h = g.relu(h);
            let logits = self.dense_p(g, h, self.ids.gate.as_ref().unwrap()[1])?;
            let alpha = g.softmax(logits)?;
            let mut scaled = Vec::with_capacity(n_mod);
            for (i, &z) in zs.iter().enumerate() {
                let a = g.narrow(alpha, i, 1)?;
                scaled.push(g.row_scale(z, a)?);
            }
            (Some(alpha), g.concat(&scaled)?)
        };
        let mut f = self.dense_p(g, fused_input, self.ids.fusion[0])?;
        f = g.relu(f);
        f = self.drop(g, f, SITE_FUSION0, mode)?;
        f = self.dense_p(g, f, self.ids.fusion[1])?;
        f = g.relu(f);
        let z_fuse = self.drop(g, f, SITE_FUSION1, mode)?;
        let (y_hat, band_logits) = self.heads(g, z_fuse)?;
        Ok(ForwardNodes {
            z: zs.to_vec(),
            boundary_input: None,
            alpha,
            z_fuse,
            y_hat,
            band_logits,
        })
    }

    /// Affine regression and band heads over an arbitrary fused latent.
    pub fn heads(&self, g: &mut Graph, z_fuse: NodeId) -> Result<(NodeId, NodeId)> {
        let y_hat = self.dense_p(g, z_fuse, self.ids.head_reg)?;
        let band_logits = self.dense_p(g, z_fuse, self.ids.head_band)?;
        Ok((y_hat, band_logits))
    }

    /// Full forward over a batch: encodes each present modality, fuses,
    /// and returns all intermediate node handles.
    pub fn forward(&self, g: &mut Graph, batch: &BatchInput, mode: Mode) -> Result<ForwardNodes> {
        let mut zs = Vec::with_capacity(self.modalities.len());
        let mut boundary_input = None;
        for m in self.modalities.iter() {
            let z = match m {
                Modality::Tabular => {
                    let nums = g.input(batch.nums.clone());
                    self.encode_tabular(g, &batch.cat_idx, nums, mode)?
                }
                Modality::Text => {
                    let text = g.input(batch.text.clone());
                    self.encode_text(g, text, &batch.text_mask, mode)?
                }
                Modality::Spatial => {
                    let b = g.input(batch.boundary.clone());
                    boundary_input = Some(b);
                    let nums = g.input(batch.spatial_nums.clone());
                    self.encode_spatial(g, b, nums, mode)?
                }
            };
            zs.push(z);
        }
        let mut nodes = self.fuse(g, &zs, mode)?;
        nodes.boundary_input = boundary_input;
        Ok(nodes)
    }

    /// Deterministic eval forward, materialized to tensors.
    pub fn predict(&self, batch: &BatchInput) -> Result<FusionOutput> {
        let mut g = Graph::new();
        let nodes = self.forward(&mut g, batch, Mode::Eval)?;
        self.materialize(&g, &nodes, batch.n)
    }

    /// Extracts eval tensors from a finished forward pass.
    pub fn materialize(&self, g: &Graph, nodes: &ForwardNodes, n: usize) -> Result<FusionOutput> {
        let alpha = match nodes.alpha {
            Some(a) => g.value(a).clone(),
            None => Tensor::new(vec![n, 1], vec![1.0; n])?,
        };
        let logits = g.value(nodes.band_logits);
        let band_logits = Tensor::new(vec![n, 2, self.config.n_bands], logits.data().to_vec())?;
        Ok(FusionOutput {
            z: nodes.z.iter().map(|&z| g.value(z).clone()).collect(),
            alpha,
            z_fuse: g.value(nodes.z_fuse).clone(),
            y_hat: g.value(nodes.y_hat).clone(),
            band_logits,
        })
    }
}
