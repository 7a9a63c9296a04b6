//! Training-strategy orchestration: multi-stage plans, per-stage training
//! loops with energy metering, transfer initialization, and best-checkpoint
//! selection by dev error over user turns only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{inject_speaker_marker, Corpus, CorpusSplit, Speaker, Utterance};
use crate::ctc;
use crate::energy::{meter_session, EnergyMeter, RunRecord};
use crate::error::{Error, Result};
use crate::metrics::{align, error_rate, AlignmentCounts};
use crate::model::checkpoint::{Checkpoint, ModelKind, Provenance};
use crate::model::{
    ids_to_labels, labels_to_ids, DecoderConfig, EncoderConfig, EncoderCtcModel, SluModel,
};
use crate::numerics::{sgd_step, ParamStore};

/// What one training stage optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// Encoder plus linear head, CTC over transcript tokens.
    EncoderAsr,
    /// Encoder plus linear head, CTC over concept labels.
    EncoderSlu,
    /// Full encoder-decoder, CTC over concept labels.
    FullSlu,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::EncoderAsr => "encoder-asr",
            StageKind::EncoderSlu => "encoder-slu",
            StageKind::FullSlu => "full-slu",
        }
    }
}

impl std::str::FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder-asr" => Ok(StageKind::EncoderAsr),
            "encoder-slu" => Ok(StageKind::EncoderSlu),
            "full-slu" => Ok(StageKind::FullSlu),
            other => Err(Error::InvalidArgument(format!(
                "unknown stage kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StagePlan {
    pub stage_kind: StageKind,
    pub epochs: usize,
    pub lr: f64,
    /// Checkpoint whose compatible parameters initialize this stage.
    pub init_from: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct StrategyPlan {
    pub name: String,
    pub stages: Vec<StagePlan>,
    /// External checkpoint feeding the first stage (the transfer mechanism).
    pub transfer_source: Option<Checkpoint>,
}

/// Everything a strategy run needs beyond the corpus itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub encoder: EncoderConfig,
    pub embed_dim: usize,
    pub decoder_hidden_dim: usize,
    pub attention_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without a dev improvement before the learning rate halves.
    pub lr_halving_patience: usize,
    /// Global gradient-norm ceiling; None disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(input_dim: usize) -> Self {
        Hyperparams {
            encoder: EncoderConfig::new(input_dim),
            embed_dim: 16,
            decoder_hidden_dim: 32,
            attention_dim: 16,
            epochs: 30,
            lr: 0.05,
            lr_halving_patience: 6,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.embed_dim == 0 || self.decoder_hidden_dim == 0 || self.attention_dim == 0 {
            return Err(Error::InvalidArgument(
                "decoder dimensions must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and positive, got {}",
                self.lr
            )));
        }
        if self.lr_halving_patience == 0 {
            return Err(Error::InvalidArgument(
                "lr halving patience must be at least 1 epoch".into(),
            ));
        }
        if let Some(clip) = self.clip_norm {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "clip norm must be finite and positive, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

/// Expands a strategy name into its ordered stages. A transfer source, when
/// given, must agree with the target encoder configuration; it initializes
/// the first stage, and the run is tagged "+PM".
pub fn plan(
    strategy_name: &str,
    hp: &Hyperparams,
    transfer_source: Option<Checkpoint>,
) -> Result<StrategyPlan> {
    hp.validate()?;
    let kinds: &[StageKind] = match strategy_name {
        "3steps" => &[
            StageKind::EncoderAsr,
            StageKind::EncoderSlu,
            StageKind::FullSlu,
        ],
        "2steps" => &[StageKind::EncoderSlu, StageKind::FullSlu],
        "1step" => &[StageKind::FullSlu],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?} (expected 3steps, 2steps or 1step)"
            )))
        }
    };
    if let Some(src) = &transfer_source {
        if src.encoder != hp.encoder {
            return Err(Error::Shape {
                op: "plan",
                expected: format!("transfer source with encoder {:?}", hp.encoder),
                got: format!("{:?}", src.encoder),
            });
        }
    }
    let mut stages: Vec<StagePlan> = kinds
        .iter()
        .map(|&stage_kind| StagePlan {
            stage_kind,
            epochs: hp.epochs,
            lr: hp.lr,
            init_from: None,
        })
        .collect();
    stages[0].init_from = transfer_source.clone();
    Ok(StrategyPlan {
        name: strategy_name.to_string(),
        stages,
        transfer_source,
    })
}

/// Picks the epoch with the lowest dev error; the earliest epoch wins ties.
pub fn select_best<T>(epoch_evals: &[(T, f64)]) -> Result<(usize, &T)> {
    if epoch_evals.is_empty() {
        return Err(Error::EmptyInput("epoch evaluations"));
    }
    let mut best = 0;
    for (i, (_, cer)) in epoch_evals.iter().enumerate().skip(1) {
        if *cer < epoch_evals[best].1 {
            best = i;
        }
    }
    Ok((best, &epoch_evals[best].0))
}

enum Net {
    Full(SluModel),
    Head(EncoderCtcModel),
}

impl Net {
    fn vocab(&self) -> &[String] {
        match self {
            Net::Full(m) => &m.label_vocab,
            Net::Head(m) => &m.label_vocab,
        }
    }

    fn store(&self) -> &ParamStore {
        match self {
            Net::Full(m) => &m.store,
            Net::Head(m) => &m.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Net::Full(m) => &mut m.store,
            Net::Head(m) => &mut m.store,
        }
    }

    fn train_step(&mut self, frames: &[Vec<f64>], target: &[usize]) -> Result<f64> {
        match self {
            Net::Full(m) => {
                let (logits, trace) = m.forward(frames)?;
                let (loss, grad) = ctc::ctc_loss_and_grad(&logits, target)?;
                m.backward(&trace, &grad)?;
                Ok(loss)
            }
            Net::Head(m) => {
                let (logits, trace) = m.forward(frames)?;
                let (loss, grad) = ctc::ctc_loss_and_grad(&logits, target)?;
                m.backward(&trace, &grad)?;
                Ok(loss)
            }
        }
    }

    fn decode(&self, frames: &[Vec<f64>]) -> Result<Vec<usize>> {
        let logits = match self {
            Net::Full(m) => m.forward(frames)?.0,
            Net::Head(m) => m.forward(frames)?.0,
        };
        Ok(ctc::greedy_decode(&logits))
    }

    fn checkpoint(&self, provenance: Provenance) -> Checkpoint {
        match self {
            Net::Full(m) => Checkpoint::from_slu(m, provenance),
            Net::Head(m) => Checkpoint::from_encoder_ctc(m, provenance),
        }
    }

    fn transfer_from(&mut self, source: &Checkpoint) -> Result<()> {
        match self {
            Net::Full(m) => source.transfer_into_slu(m),
            Net::Head(m) => source.transfer_into_encoder_ctc(m),
        }
    }
}

fn targets_of(kind: StageKind, utt: &Utterance) -> &[String] {
    match kind {
        StageKind::EncoderAsr => &utt.transcript,
        StageKind::EncoderSlu | StageKind::FullSlu => &utt.concepts,
    }
}

/// Error rate of a model over the user turns of a split, as a fraction,
/// micro-averaged. Wizard turns never enter the computation.
fn eval_user_fraction(net: &Net, kind: StageKind, split: &CorpusSplit) -> Result<f64> {
    let mut totals = AlignmentCounts::default();
    for utt in &split.utterances {
        if utt.speaker != Speaker::User {
            continue;
        }
        let frames = inject_speaker_marker(&utt.features, utt.speaker);
        let ids = net.decode(&frames.frames)?;
        let hyp = ids_to_labels(net.vocab(), &ids)?;
        totals.absorb(align(targets_of(kind, utt), &hyp));
    }
    error_rate(totals)
}

/// Concept (or, for transcript-trained checkpoints, word) error rate of a
/// checkpoint over the user turns of a split, as a fraction.
pub fn evaluate_user_cer(ckpt: &Checkpoint, split: &CorpusSplit) -> Result<f64> {
    let net = match ckpt.kind {
        ModelKind::EncoderDecoder => Net::Full(ckpt.build_slu()?),
        ModelKind::EncoderCtc => Net::Head(ckpt.build_encoder_ctc()?),
    };
    let kind: StageKind = ckpt.provenance.stage_kind.parse()?;
    eval_user_fraction(&net, kind, split)
}

/// Everything a finished stage reports back.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub best: Checkpoint,
    /// Dev error of the selected epoch, in percent.
    pub best_dev_cer: f64,
    /// Zero-based index of the selected epoch.
    pub best_epoch: usize,
    /// Per-epoch dev error, in percent.
    pub epoch_dev_cers: Vec<f64>,
    pub kwh: f64,
    pub wall_time_s: f64,
}

fn stage_seed(hp: &Hyperparams, stage_index: usize) -> u64 {
    hp.seed.wrapping_add(stage_index as u64)
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one stage: a seeded shuffle and one CTC gradient step per
/// utterance each epoch, a dev evaluation (user turns only) after every
/// epoch, learning-rate halving on dev plateaus, and the meter wrapped
/// around the whole loop. Returns the best epoch by dev error.
pub fn run_stage(
    stage: &StagePlan,
    hp: &Hyperparams,
    train: &CorpusSplit,
    dev: &CorpusSplit,
    meter: EnergyMeter,
    provenance: &Provenance,
) -> Result<StageOutcome> {
    if stage.epochs == 0 {
        return Err(Error::InvalidArgument(
            "stage needs at least 1 epoch".into(),
        ));
    }
    if !(stage.lr.is_finite() && stage.lr >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stage learning rate must be finite and non-negative, got {}",
            stage.lr
        )));
    }
    let input_dim = train.feature_dim()?;
    if input_dim != hp.encoder.input_dim {
        return Err(Error::Shape {
            op: "run_stage",
            expected: format!("features of width {}", hp.encoder.input_dim),
            got: format!("{input_dim}"),
        });
    }
    let vocab: Vec<String> = match stage.stage_kind {
        StageKind::EncoderAsr => train.word_vocab.clone(),
        StageKind::EncoderSlu | StageKind::FullSlu => train.label_vocab.clone(),
    };
    if vocab.is_empty() {
        return Err(Error::EmptyInput("training vocabulary"));
    }

    let seed = stage_seed(hp, provenance.stage_index);
    let mut net = match stage.stage_kind {
        StageKind::FullSlu => {
            let dec = DecoderConfig {
                vocab_size: vocab.len() + 1,
                embed_dim: hp.embed_dim,
                hidden_dim: hp.decoder_hidden_dim,
                attention_dim: hp.attention_dim,
            };
            Net::Full(SluModel::new(hp.encoder.clone(), dec, vocab.clone(), seed)?)
        }
        _ => Net::Head(EncoderCtcModel::new(
            hp.encoder.clone(),
            vocab.clone(),
            seed,
        )?),
    };
    if let Some(source) = &stage.init_from {
        net.transfer_from(source)?;
    }
    let provenance = Provenance {
        stage_kind: stage.stage_kind.as_str().to_string(),
        ..provenance.clone()
    };

    let (epoch_evals, reading) = meter_session(meter, || {
        let mut evals: Vec<(Checkpoint, f64)> = Vec::with_capacity(stage.epochs);
        let mut lr = stage.lr;
        let mut best_so_far = f64::INFINITY;
        let mut stalled_epochs = 0usize;
        for epoch in 0..stage.epochs {
            let mut order: Vec<usize> = (0..train.utterances.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(seed, epoch)));
            for &idx in &order {
                let utt = &train.utterances[idx];
                let target = labels_to_ids(&vocab, targets_of(stage.stage_kind, utt))?;
                let frames = inject_speaker_marker(&utt.features, utt.speaker);
                let loss = net.train_step(&frames.frames, &target)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss {loss} at epoch {}, utterance {:?}",
                        epoch + 1,
                        utt.id
                    )));
                }
                if let Some(clip) = hp.clip_norm {
                    let norm = net.store().grad_norm();
                    if norm > clip {
                        net.store_mut().scale_grads(clip / norm);
                    }
                }
                sgd_step(net.store_mut(), lr)?;
            }
            let dev_cer = eval_user_fraction(&net, stage.stage_kind, dev)? * 100.0;
            evals.push((net.checkpoint(provenance.clone()), dev_cer));
            if dev_cer < best_so_far {
                best_so_far = dev_cer;
                stalled_epochs = 0;
            } else {
                stalled_epochs += 1;
                if stalled_epochs >= hp.lr_halving_patience {
                    lr *= 0.5;
                    stalled_epochs = 0;
                }
            }
        }
        Ok(evals)
    })?;

    let (best_epoch, best) = select_best(&epoch_evals)?;
    Ok(StageOutcome {
        best: best.clone(),
        best_dev_cer: epoch_evals[best_epoch].1,
        best_epoch,
        epoch_dev_cers: epoch_evals.iter().map(|(_, c)| *c).collect(),
        kwh: reading.kwh,
        wall_time_s: reading.wall_time_s,
    })
}

/// A finished strategy run: its ledger record, the final model, and every
/// stage's outcome.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub record: RunRecord,
    pub final_checkpoint: Checkpoint,
    pub stage_outcomes: Vec<StageOutcome>,
}

/// Runs every stage in order, initializing each stage after the first from
/// its predecessor's best checkpoint. Energy is summed across stages under
/// a simulated meter; a recorded meter's value stands for the whole run.
pub fn run_strategy(
    strategy: &StrategyPlan,
    hp: &Hyperparams,
    corpus: &Corpus,
    corpus_tag: &str,
    meter: EnergyMeter,
    run_id: &str,
) -> Result<StrategyRun> {
    if strategy.stages.is_empty() {
        return Err(Error::EmptyInput("strategy with no stages"));
    }
    let feature_family = corpus
        .train
        .utterances
        .first()
        .map(|u| u.feature_family.clone())
        .ok_or(Error::EmptyInput("training split"))?;
    let tag = if strategy.transfer_source.is_some() {
        format!("{}+PM", strategy.name)
    } else {
        strategy.name.clone()
    };
    let stage_meter = match meter {
        EnergyMeter::Simulated { .. } => meter,
        EnergyMeter::Recorded { .. } => EnergyMeter::Recorded { kwh: 0.0 },
    };

    let mut outcomes: Vec<StageOutcome> = Vec::with_capacity(strategy.stages.len());
    let mut kwh = 0.0;
    let mut wall_time_s = 0.0;
    for (stage_index, stage) in strategy.stages.iter().enumerate() {
        let mut stage = stage.clone();
        if stage_index > 0 {
            stage.init_from = Some(outcomes[stage_index - 1].best.clone());
        }
        let provenance = Provenance {
            strategy: tag.clone(),
            stage_index,
            stage_kind: stage.stage_kind.as_str().to_string(),
            source_corpus: corpus_tag.to_string(),
            seed: hp.seed,
        };
        let outcome = run_stage(
            &stage,
            hp,
            &corpus.train,
            &corpus.dev,
            stage_meter,
            &provenance,
        )?;
        kwh += outcome.kwh;
        wall_time_s += outcome.wall_time_s;
        outcomes.push(outcome);
    }
    if let EnergyMeter::Recorded { kwh: total } = meter {
        kwh = total;
    }

    let final_checkpoint = outcomes.last().expect("at least one stage").best.clone();
    let dev_cer = outcomes.last().expect("at least one stage").best_dev_cer;
    let test_cer = evaluate_user_cer(&final_checkpoint, &corpus.test)? * 100.0;
    Ok(StrategyRun {
        record: RunRecord {
            run_id: run_id.to_string(),
            strategy: tag,
            feature_family,
            kwh,
            wall_time_s,
            dev_cer,
            test_cer,
        },
        final_checkpoint,
        stage_outcomes: outcomes,
    })
}
