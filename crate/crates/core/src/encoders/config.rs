use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Input frame step of every feature matrix.
pub const FRAME_STEP_MS: u32 = 10;

/// Architecture of both encoders.
///
/// Defaults are the full-size configuration: 6 BiLSTM layers of 512 units
/// per direction with 2x downsampling after the first and fourth, a query
/// encoder of 32-dim embeddings feeding two 256-unit BiGRU layers, and a
/// 400-dim joint space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Query symbols, including the word separator at index 0.
    pub inventory_size: usize,
    /// Dimension of each input feature frame.
    pub feature_dim: usize,
    pub embedding_dim: usize,
    /// Hidden units per direction of each query BiGRU layer.
    pub query_layers: Vec<usize>,
    /// Hidden units per direction of each document BiLSTM layer.
    pub doc_layers: Vec<usize>,
    /// Downsampling factor applied after each document layer (1 = none).
    pub doc_downsample: Vec<usize>,
    pub joint_dim: usize,
    /// Dropout after each document layer during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            inventory_size: 27,
            feature_dim: 42,
            embedding_dim: 32,
            query_layers: vec![256, 256],
            doc_layers: vec![512; 6],
            doc_downsample: vec![2, 1, 1, 2, 1, 1],
            joint_dim: 400,
            dropout: 0.4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.inventory_size == 0 || self.feature_dim == 0 || self.embedding_dim == 0 {
            return bad("inventory, feature and embedding sizes must be positive");
        }
        if self.joint_dim == 0 {
            return bad("joint dimension must be positive");
        }
        if self.query_layers.is_empty() || self.doc_layers.is_empty() {
            return bad("both encoders need at least one recurrent layer");
        }
        if self.query_layers.iter().chain(&self.doc_layers).any(|&h| h == 0) {
            return bad("layer sizes must be positive");
        }
        if self.doc_downsample.len() != self.doc_layers.len() {
            return bad("doc_downsample needs one factor per document layer");
        }
        if self.doc_downsample.iter().any(|&f| f == 0) {
            return bad("downsampling factors must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Total temporal reduction of the document encoder.
    pub fn downsample_product(&self) -> usize {
        self.doc_downsample.iter().product()
    }

    /// Frame step of the document encoding, in milliseconds.
    pub fn output_step_ms(&self) -> u32 {
        FRAME_STEP_MS * self.downsample_product() as u32
    }

    /// Output length of the document encoder for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        self.doc_downsample.iter().fold(frames, |n, &f| n / f)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_size_model() {
        let c = ModelConfig::default();
        assert_eq!(c.doc_layers, vec![512; 6]);
        assert_eq!(c.query_layers, vec![256, 256]);
        assert_eq!(c.embedding_dim, 32);
        assert_eq!(c.joint_dim, 400);
        assert_eq!(c.downsample_product(), 4);
        assert_eq!(c.output_step_ms(), 40);
        c.validate().unwrap();
    }

    #[test]
    fn length_law_default_config() {
        let c = ModelConfig::default();
        for n in 4..=2000 {
            assert_eq!(c.output_len(n), n / 4);
        }
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.dropout = 0.3;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn rejects_inconsistent_schedule() {
        let c = ModelConfig {
            doc_downsample: vec![2],
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
