//! Versioned checkpoint files: model configuration, named parameter
//! tensors, and a provenance record, serialized as a single JSON document.
//! Also implements transfer initialization, which copies compatible
//! parameters from a source checkpoint into a freshly initialized model and
//! remaps vocabulary-dependent rows by label string.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decoder::{bos_index, DecoderConfig};
use super::encoder::EncoderConfig;
use super::{EncoderCtcModel, SluModel};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

pub const CHECKPOINT_MAGIC: &str = "SLU-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which architecture the parameters belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    EncoderDecoder,
    EncoderCtc,
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub stage_index: usize,
    pub stage_kind: String,
    pub source_corpus: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    /// Present only for encoder-decoder checkpoints.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decoder: Option<DecoderConfig>,
    /// Output vocabulary: class `i + 1` is `vocab[i]`, class 0 the blank.
    pub vocab: Vec<String>,
    pub provenance: Provenance,
    pub params: BTreeMap<String, Matrix>,
}

fn snapshot_params(store: &ParamStore) -> BTreeMap<String, Matrix> {
    store
        .iter()
        .map(|(name, slot)| (name.to_string(), slot.value.clone()))
        .collect()
}

fn restore_params(store: &mut ParamStore, params: &BTreeMap<String, Matrix>) -> Result<()> {
    let expected: Vec<String> = store.names().map(str::to_string).collect();
    if expected.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "parameter set mismatch: model has {} tensors, checkpoint holds {}",
            expected.len(),
            params.len()
        )));
    }
    for name in expected {
        let stored = params
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
        let value = store.value_mut(&name)?;
        if value.shape() != stored.shape() {
            return Err(Error::Shape {
                op: "checkpoint restore",
                expected: format!("{name} as {:?}", value.shape()),
                got: format!("{:?}", stored.shape()),
            });
        }
        *value = stored.clone();
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_slu(model: &SluModel, provenance: Provenance) -> Self {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            kind: ModelKind::EncoderDecoder,
            encoder: model.encoder.cfg.clone(),
            decoder: Some(model.decoder.cfg.clone()),
            vocab: model.label_vocab.clone(),
            provenance,
            params: snapshot_params(&model.store),
        }
    }

    pub fn from_encoder_ctc(model: &EncoderCtcModel, provenance: Provenance) -> Self {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            kind: ModelKind::EncoderCtc,
            encoder: model.encoder.cfg.clone(),
            decoder: None,
            vocab: model.label_vocab.clone(),
            provenance,
            params: snapshot_params(&model.store),
        }
    }

    /// Rebuilds the encoder-decoder model this checkpoint was taken from.
    pub fn build_slu(&self) -> Result<SluModel> {
        if self.kind != ModelKind::EncoderDecoder {
            return Err(Error::Checkpoint(
                "checkpoint holds an encoder-only model, not an encoder-decoder".into(),
            ));
        }
        let dec_cfg = self
            .decoder
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing decoder configuration".into()))?;
        let mut model = SluModel::new(
            self.encoder.clone(),
            dec_cfg,
            self.vocab.clone(),
            self.provenance.seed,
        )?;
        restore_params(&mut model.store, &self.params)?;
        Ok(model)
    }

    /// Rebuilds the encoder-plus-linear-head model this checkpoint was
    /// taken from.
    pub fn build_encoder_ctc(&self) -> Result<EncoderCtcModel> {
        if self.kind != ModelKind::EncoderCtc {
            return Err(Error::Checkpoint(
                "checkpoint holds an encoder-decoder model, not an encoder head".into(),
            ));
        }
        let mut model = EncoderCtcModel::new(
            self.encoder.clone(),
            self.vocab.clone(),
            self.provenance.seed,
        )?;
        restore_params(&mut model.store, &self.params)?;
        Ok(model)
    }

    fn check_encoder_compatible(&self, target: &EncoderConfig) -> Result<()> {
        if &self.encoder != target {
            return Err(Error::Shape {
                op: "transfer",
                expected: format!("encoder {target:?}"),
                got: format!("{:?}", self.encoder),
            });
        }
        Ok(())
    }

    fn copy_exact(&self, store: &mut ParamStore, name: &str) -> Result<()> {
        let stored = self
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("source lacks parameter {name:?}")))?;
        let value = store.value_mut(name)?;
        if value.shape() != stored.shape() {
            return Err(Error::Shape {
                op: "transfer",
                expected: format!("{name} as {:?}", value.shape()),
                got: format!("{:?}", stored.shape()),
            });
        }
        *value = stored.clone();
        Ok(())
    }

    fn transfer_encoder(&self, store: &mut ParamStore) -> Result<()> {
        let enc_names: Vec<String> = store
            .names()
            .filter(|n| n.starts_with("enc."))
            .map(str::to_string)
            .collect();
        for name in enc_names {
            self.copy_exact(store, &name)?;
        }
        Ok(())
    }

    /// Initializes an encoder-only model from this checkpoint. Only encoder
    /// parameters move; the head always keeps its fresh initialization.
    pub fn transfer_into_encoder_ctc(&self, model: &mut EncoderCtcModel) -> Result<()> {
        self.check_encoder_compatible(&model.encoder.cfg)?;
        self.transfer_encoder(&mut model.store)
    }

    /// Initializes a full model from this checkpoint. Encoder parameters
    /// always move. Decoder parameters move when the source is itself an
    /// encoder-decoder model with the same dimensions; rows of the
    /// embedding and output projection are matched by label string, labels
    /// the source never saw keep their fresh initialization, and the blank
    /// and beginning-of-sequence rows always move.
    pub fn transfer_into_slu(&self, model: &mut SluModel) -> Result<()> {
        self.check_encoder_compatible(&model.encoder.cfg)?;
        self.transfer_encoder(&mut model.store)?;
        let src_cfg = match (self.kind, &self.decoder) {
            (ModelKind::EncoderDecoder, Some(cfg)) => cfg,
            _ => return Ok(()),
        };
        let dst_cfg = &model.decoder.cfg;
        if (src_cfg.embed_dim, src_cfg.hidden_dim, src_cfg.attention_dim)
            != (dst_cfg.embed_dim, dst_cfg.hidden_dim, dst_cfg.attention_dim)
        {
            return Err(Error::Shape {
                op: "transfer",
                expected: format!("decoder dims of {dst_cfg:?}"),
                got: format!("{src_cfg:?}"),
            });
        }
        let vocab_free: Vec<String> = model
            .store
            .names()
            .filter(|n| {
                (n.starts_with("dec.") || n.starts_with("attx.") || n.starts_with("atty."))
                    && !matches!(*n, "dec.embed" | "dec.w_out" | "dec.b_out")
            })
            .map(str::to_string)
            .collect();
        for name in vocab_free {
            self.copy_exact(&mut model.store, &name)?;
        }

        // Row remap: class 0 is the blank, class i+1 is vocab[i], and the
        // embedding table has one extra beginning-of-sequence row at the end.
        let src_vocab = &self.vocab;
        let mut row_map: Vec<(usize, usize)> = vec![(0, 0)];
        for (dst_pos, label) in model.label_vocab.iter().enumerate() {
            if let Some(src_pos) = src_vocab.iter().position(|l| l == label) {
                row_map.push((dst_pos + 1, src_pos + 1));
            }
        }
        let embed_map: Vec<(usize, usize)> = row_map
            .iter()
            .copied()
            .chain(std::iter::once((
                bos_index(dst_cfg.vocab_size),
                bos_index(src_cfg.vocab_size),
            )))
            .collect();
        for (name, map) in [
            ("dec.embed", &embed_map),
            ("dec.w_out", &row_map),
            ("dec.b_out", &row_map),
        ] {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("source lacks parameter {name:?}")))?;
            let value = model.store.value_mut(name)?;
            if value.cols() != stored.cols() {
                return Err(Error::Shape {
                    op: "transfer",
                    expected: format!("{name} with {} columns", value.cols()),
                    got: format!("{}", stored.cols()),
                });
            }
            for &(dst, src) in map {
                value.row_mut(dst).copy_from_slice(stored.row(src));
            }
        }
        Ok(())
    }
}

/// Writes a checkpoint with a whole-file write and rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string(ckpt).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(text.as_bytes())
        .and_then(|_| tmp.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if ckpt.magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file (magic {:?})",
            path.display(),
            ckpt.magic
        )));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::decoder::DecoderConfig;
    use crate::model::encoder::EncoderConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prov(stage_kind: &str) -> Provenance {
        Provenance {
            strategy: "1step".into(),
            stage_index: 0,
            stage_kind: stage_kind.into(),
            source_corpus: "synthetic".into(),
            seed: 11,
        }
    }

    fn vocab(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    fn small_slu(labels: &[&str], seed: u64) -> SluModel {
        let enc = EncoderConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            pyramid_layers: 1,
            reduction_mode: Default::default(),
        };
        let dec = DecoderConfig {
            vocab_size: labels.len() + 1,
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 3,
        };
        SluModel::new(enc, dec, vocab(labels), seed).unwrap()
    }

    #[test]
    fn slu_round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_slu(&["a", "b", "c"], 11);
        let ckpt = Checkpoint::from_slu(&model, prov("full-slu"));
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let rebuilt = loaded.build_slu().unwrap();
        for (name, slot) in model.store.iter() {
            assert_eq!(
                rebuilt.store.value(name).unwrap().data(),
                slot.value.data(),
                "parameter {name}"
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (a, _) = model.forward(&frames).unwrap();
        let (b, _) = rebuilt.forward(&frames).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_head_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let enc = EncoderConfig {
            input_dim: 2,
            hidden_dim: 4,
            num_layers: 2,
            pyramid_layers: 1,
            reduction_mode: Default::default(),
        };
        let model = EncoderCtcModel::new(enc, vocab(&["x", "y"]), 3).unwrap();
        let ckpt = Checkpoint::from_encoder_ctc(&model, prov("encoder-slu"));
        save_checkpoint(&ckpt, &path).unwrap();
        let rebuilt = load_checkpoint(&path).unwrap().build_encoder_ctc().unwrap();
        for (name, slot) in model.store.iter() {
            assert_eq!(rebuilt.store.value(name).unwrap().data(), slot.value.data());
        }
        assert!(load_checkpoint(&path).unwrap().build_slu().is_err());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_slu(&["a"], 1);
        let mut ckpt = Checkpoint::from_slu(&model, prov("full-slu"));
        ckpt.magic = "NOPE".into();
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        ckpt.magic = CHECKPOINT_MAGIC.into();
        ckpt.version = 99;
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn encoder_transfer_copies_only_encoder_parameters() {
        let src_model = small_slu(&["a", "b"], 7);
        let ckpt = Checkpoint::from_slu(&src_model, prov("full-slu"));
        let enc = src_model.encoder.cfg.clone();
        let mut dst = EncoderCtcModel::new(enc, vocab(&["p", "q", "r"]), 9).unwrap();
        let head_before = dst.store.value("head.w").unwrap().clone();
        ckpt.transfer_into_encoder_ctc(&mut dst).unwrap();
        for name in ["enc.l0.w_x", "enc.l1.w_h"] {
            assert_eq!(
                dst.store.value(name).unwrap().data(),
                src_model.store.value(name).unwrap().data(),
                "parameter {name}"
            );
        }
        assert_eq!(
            dst.store.value("head.w").unwrap().data(),
            head_before.data()
        );
    }

    #[test]
    fn slu_transfer_remaps_shared_labels_and_keeps_fresh_rows() {
        let src = small_slu(&["alpha", "beta", "gamma"], 21);
        let ckpt = Checkpoint::from_slu(&src, prov("full-slu"));
        let mut dst = small_slu(&["beta", "delta", "alpha"], 22);
        let fresh_embed = dst.store.value("dec.embed").unwrap().clone();
        ckpt.transfer_into_slu(&mut dst).unwrap();

        let s_embed = src.store.value("dec.embed").unwrap();
        let d_embed = dst.store.value("dec.embed").unwrap();
        // blank row, then: dst beta(1)<-src beta(2), dst alpha(3)<-src alpha(1).
        assert_eq!(d_embed.row(0), s_embed.row(0));
        assert_eq!(d_embed.row(1), s_embed.row(2));
        assert_eq!(d_embed.row(3), s_embed.row(1));
        // delta was never seen by the source: fresh init survives.
        assert_eq!(d_embed.row(2), fresh_embed.row(2));
        // both vocabularies have 3 labels, so the BOS row is index 4.
        assert_eq!(d_embed.row(4), s_embed.row(4));

        let s_out = src.store.value("dec.w_out").unwrap();
        let d_out = dst.store.value("dec.w_out").unwrap();
        assert_eq!(d_out.row(0), s_out.row(0));
        assert_eq!(d_out.row(1), s_out.row(2));
        assert_eq!(d_out.row(3), s_out.row(1));
        // Shared decoder internals move wholesale.
        assert_eq!(
            dst.store.value("dec.w_s").unwrap().data(),
            src.store.value("dec.w_s").unwrap().data()
        );
        assert_eq!(
            dst.store.value("attx.w_q").unwrap().data(),
            src.store.value("attx.w_q").unwrap().data()
        );
    }

    #[test]
    fn transfer_rejects_mismatched_feature_dim() {
        let src = small_slu(&["a"], 1);
        let ckpt = Checkpoint::from_slu(&src, prov("full-slu"));
        let enc = EncoderConfig {
            input_dim: 5,
            ..src.encoder.cfg.clone()
        };
        let dec = src.decoder.cfg.clone();
        let mut dst = SluModel::new(enc, dec, vocab(&["a"]), 2).unwrap();
        match ckpt.transfer_into_slu(&mut dst) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "transfer"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn encoder_ctc_source_never_transfers_its_head() {
        let enc = EncoderConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            pyramid_layers: 1,
            reduction_mode: Default::default(),
        };
        let src = EncoderCtcModel::new(enc.clone(), vocab(&["w1", "w2", "w3"]), 5).unwrap();
        let ckpt = Checkpoint::from_encoder_ctc(&src, prov("encoder-asr"));
        let mut dst = small_slu(&["a", "b"], 6);
        let dec_before = dst.store.value("dec.w_out").unwrap().clone();
        ckpt.transfer_into_slu(&mut dst).unwrap();
        assert_eq!(
            dst.store.value("enc.l0.w_x").unwrap().data(),
            src.store.value("enc.l0.w_x").unwrap().data()
        );
        assert_eq!(
            dst.store.value("dec.w_out").unwrap().data(),
            dec_before.data()
        );
    }
}
