use std::path::Path;

use super::{classify_segment, decode_hits, frame_interval, DecodeConfig, Hypothesis};
use crate::encoders::{encode_documents, score_frames, DocumentEncoding, ModelConfig, ParameterStore, QueryEmbedding};
use crate::io::binary::{read_file, Reader, Writer};
use crate::nn::Tensor;
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"KWSINDEX";
pub const INDEX_VERSION: u32 = 1;

/// Precomputed document encodings, searchable by any query embedding from
/// the same model.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentIndex {
    fingerprint: [u8; 32],
    docs: Vec<DocumentEncoding>,
}

impl DocumentIndex {
    /// Encodes every utterance in inference mode.
    pub fn build(params: &ParameterStore, utterances: &[(String, Tensor<f32>)]) -> Result<Self> {
        Ok(Self {
            fingerprint: params.config().fingerprint(),
            docs: encode_documents(params, utterances)?,
        })
    }

    pub fn from_encodings(config: &ModelConfig, docs: Vec<DocumentEncoding>) -> Self {
        Self {
            fingerprint: config.fingerprint(),
            docs,
        }
    }

    pub fn documents(&self) -> &[DocumentEncoding] {
        &self.docs
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn document(&self, id: &str) -> Option<&DocumentEncoding> {
        self.docs.iter().find(|d| d.id == id)
    }

    /// Highest frame probability of `query` inside `[start_ms, end_ms)` of
    /// one indexed utterance.
    pub fn score_segment(&self, utterance: &str, start_ms: u64, end_ms: u64, query: &QueryEmbedding) -> Result<f64> {
        let outside = |detail: String| Error::OutsideUtterance {
            id: utterance.to_string(),
            detail,
        };
        let doc = self
            .document(utterance)
            .ok_or_else(|| outside("not in the index".into()))?;
        let z = score_frames(doc, query)?;
        let (a, b) = frame_interval(start_ms, end_ms, doc.step_ms, z.len())
            .ok_or_else(|| outside(format!("segment {start_ms}-{end_ms} ms starts after the last frame")))?;
        classify_segment(&z[a..=b])
    }

    /// Fails unless the index was built with `config`.
    pub fn check_model(&self, config: &ModelConfig) -> Result<()> {
        if self.fingerprint != config.fingerprint() {
            return Err(Error::Fingerprint {
                path: "<index>".into(),
            });
        }
        Ok(())
    }

    /// Decoded hits for one query embedding over all documents, in index
    /// order.
    pub fn search(
        &self,
        query_id: &str,
        query: &QueryEmbedding,
        letters: usize,
        cfg: &DecodeConfig,
    ) -> Result<Vec<Hypothesis>> {
        let mut out = Vec::new();
        for d in &self.docs {
            let z = score_frames(d, query)?;
            out.extend(decode_hits(query_id, &d.id, &z, cfg, letters, d.step_ms));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.bytes(&self.fingerprint);
        w.u32(self.docs.len() as u32);
        for d in &self.docs {
            w.string(&d.id);
            w.u32(d.step_ms);
            w.u32(d.h.rows() as u32);
            w.u32(d.h.cols() as u32);
            w.f32s(d.h.data());
        }
        w.finish()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, &self.to_bytes())
    }

    /// Loads an index and checks that it was built with `config`.
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = Reader::new(&bytes, path);
        let fingerprint = config.fingerprint();
        r.header(INDEX_MAGIC, INDEX_VERSION, &fingerprint)?;
        let n = r.u32("document count")? as usize;
        let mut docs = Vec::with_capacity(n.min(1 << 20));
        for i in 0..n {
            let id = r.string(&format!("id of document {i}"))?;
            let step_ms = r.u32(&format!("document {id}"))?;
            let rows = r.u32(&format!("document {id}"))? as usize;
            let cols = r.u32(&format!("document {id}"))? as usize;
            if cols != config.joint_dim {
                return Err(Error::BadHeader {
                    path: path.to_path_buf(),
                    detail: format!("document {id} has {cols} dims, model has {}", config.joint_dim),
                });
            }
            let data = r.f32s(rows * cols, &format!("document {id}"))?;
            docs.push(DocumentEncoding {
                id,
                step_ms,
                h: Tensor::matrix(rows, cols, data)?,
            });
        }
        if !r.at_end() {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                detail: "trailing bytes after last document".into(),
            });
        }
        Ok(Self { fingerprint, docs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_query, Phase};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            inventory_size: 5,
            feature_dim: 3,
            embedding_dim: 4,
            query_layers: vec![4],
            doc_layers: vec![4, 4],
            doc_downsample: vec![2, 1],
            joint_dim: 5,
            dropout: 0.2,
        }
    }

    #[test]
    fn roundtrip_and_fingerprint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ParameterStore::init(&cfg(), &mut rng).unwrap();
        let utts: Vec<(String, Tensor<f32>)> = (0..3)
            .map(|i| {
                let n = 10 + 3 * i;
                let data = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (format!("u{i}"), Tensor::matrix(n, 3, data).unwrap())
            })
            .collect();
        let idx = DocumentIndex::build(&p, &utts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        idx.save(&path).unwrap();
        assert_eq!(DocumentIndex::load(&path, &cfg()).unwrap(), idx);
        let again = DocumentIndex::build(&p, &utts).unwrap();
        assert_eq!(again.to_bytes(), idx.to_bytes());
        let other = ModelConfig { joint_dim: 6, ..cfg() };
        assert!(matches!(DocumentIndex::load(&path, &other), Err(Error::Fingerprint { .. })));
        let e = encode_query(&p, &[1, 2], &mut Phase::Infer).unwrap();
        let dc = DecodeConfig {
            threshold: 0.3,
            min_ms_per_letter: 0.0,
            ..Default::default()
        };
        assert_eq!(idx.search("q", &e, 2, &dc).unwrap(), again.search("q", &e, 2, &dc).unwrap());
    }

    #[test]
    fn empty_index() {
        let p = ParameterStore::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let idx = DocumentIndex::build(&p, &[]).unwrap();
        let e = encode_query(&p, &[1], &mut Phase::Infer).unwrap();
        assert!(idx.search("q", &e, 1, &DecodeConfig::default()).unwrap().is_empty());
    }
}
