//! Gated multimodal fusion network.
//!
//! Three encoders map tabular, text, and spatial inputs to a shared latent
//! width, a sample-wise softmax gate weights them, and a fusion MLP feeds
//! the regression and band-classification heads. Any non-empty modality
//! subset yields a valid architecture; a single modality bypasses the gate.

mod batch;
mod checkpoint;
mod model;

pub use batch::{make_batch, BatchInput};
pub use checkpoint::{read_checkpoint, sha256_file, write_checkpoint, CheckpointBundle};
pub use model::{ForwardNodes, FusionModel, FusionOutput, Mode};

use serde::{Deserialize, Serialize};

use crate::datahub::BAND_COUNT;
use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults follow the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Shared latent width every encoder projects to.
    pub latent_dim: usize,
    /// Per-field categorical embedding width.
    pub cat_embed_dim: usize,
    /// Width of the precomputed text-field embeddings.
    pub text_dim: usize,
    /// Boundary sequence length.
    pub boundary_len: usize,
    /// Hidden widths of the tabular numeric MLP.
    pub numeric_mlp: [usize; 2],
    /// Hidden widths of the spatial numeric MLP.
    pub spatial_numeric_mlp: [usize; 2],
    /// Gate MLP hidden width.
    pub gate_hidden: usize,
    /// Fusion MLP widths; the second is the fused representation width.
    pub fusion_mlp: [usize; 2],
    pub dropout: f64,
    pub n_bands: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 128,
            cat_embed_dim: 64,
            text_dim: 768,
            boundary_len: 128,
            numeric_mlp: [128, 64],
            spatial_numeric_mlp: [64, 32],
            gate_hidden: 128,
            fusion_mlp: [256, 128],
            dropout: 0.1,
            n_bands: BAND_COUNT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.latent_dim,
            self.cat_embed_dim,
            self.text_dim,
            self.boundary_len,
            self.numeric_mlp[0],
            self.numeric_mlp[1],
            self.spatial_numeric_mlp[0],
            self.spatial_numeric_mlp[1],
            self.gate_hidden,
            self.fusion_mlp[0],
            self.fusion_mlp[1],
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.n_bands != BAND_COUNT {
            return Err(Error::InvalidConfig(format!(
                "n_bands {} unsupported; band labels are fixed at {}",
                self.n_bands, BAND_COUNT
            )));
        }
        Ok(())
    }

    /// Width of the fused representation consumed by the heads.
    pub fn fused_dim(&self) -> usize {
        self.fusion_mlp[1]
    }
}

/// The three input modalities, in fixed concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Tabular,
    Text,
    Spatial,
}

pub const ALL_MODALITIES: [Modality; 3] = [Modality::Tabular, Modality::Text, Modality::Spatial];

impl Modality {
    pub fn short_name(self) -> &'static str {
        match self {
            Modality::Tabular => "tab",
            Modality::Text => "text",
            Modality::Spatial => "spatial",
        }
    }
}

/// Non-empty subset of modalities; order is always tab, text, spatial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySet {
    present: [bool; 3],
}

impl ModalitySet {
    pub fn new(modalities: &[Modality]) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::InvalidConfig("empty modality subset".into()));
        }
        let mut present = [false; 3];
        for m in modalities {
            present[*m as usize] = true;
        }
        Ok(ModalitySet { present })
    }

    pub fn full() -> Self {
        ModalitySet {
            present: [true; 3],
        }
    }

    pub fn single(m: Modality) -> Self {
        let mut present = [false; 3];
        present[m as usize] = true;
        ModalitySet { present }
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.present[m as usize]
    }

    pub fn len(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        ALL_MODALITIES
            .into_iter()
            .filter(move |m| self.present[*m as usize])
    }

    /// Filesystem-safe label, e.g. "tab_text_spatial".
    pub fn label(&self) -> String {
        self.iter()
            .map(Modality::short_name)
            .collect::<Vec<_>>()
            .join("_")
    }

    /// All seven non-empty subsets: three singles, three pairs, full.
    pub fn all_subsets() -> Vec<ModalitySet> {
        let mut out: Vec<ModalitySet> = (1u8..8)
            .map(|bits| ModalitySet {
                present: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
            })
            .collect();
        out.sort_by_key(ModalitySet::len);
        out
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let names: Vec<Modality> = self.iter().collect();
        names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<Modality>::deserialize(d)?;
        ModalitySet::new(&names).map_err(serde::de::Error::custom)
    }
}
