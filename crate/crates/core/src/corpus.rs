//! Corpus data model: utterances with feature frames, speakers, transcripts
//! and concept labels; line-oriented persistence; speaker markers; wizard
//! relabeling; split statistics; and a seeded synthetic generator.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The single conventional concept carried by every wizard turn.
pub const MACHINE_SEMANTIC: &str = "MachineSemantic";

/// Frames added at each end by the speaker marker.
pub const MARKER_WIDTH: usize = 3;

/// Magnitude of every marker entry: `+5.0` user, `-5.0` wizard.
pub const MARKER_VALUE: f64 = 5.0;

pub const DEFAULT_FRAME_DURATION_S: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    User,
    Wizard,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Wizard => "wizard",
        }
    }
}

/// T x F frames plus the duration one frame covers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<Vec<f64>>,
    pub frame_duration_s: f64,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 * self.frame_duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUtterance", into = "RawUtterance")]
pub struct Utterance {
    pub id: String,
    pub speaker: Speaker,
    pub features: FeatureSequence,
    pub transcript: Vec<String>,
    pub concepts: Vec<String>,
    pub feature_family: String,
}

/// Wire format: one flat object per line.
#[derive(Serialize, Deserialize)]
struct RawUtterance {
    id: String,
    speaker: String,
    frame_duration_s: f64,
    features: Vec<Vec<f64>>,
    transcript: Vec<String>,
    concepts: Vec<String>,
    feature_family: String,
}

impl TryFrom<RawUtterance> for Utterance {
    type Error = Error;

    fn try_from(raw: RawUtterance) -> Result<Self> {
        let speaker = match raw.speaker.as_str() {
            "user" => Speaker::User,
            "wizard" => Speaker::Wizard,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown speaker tag {other:?}"
                )))
            }
        };
        if raw.features.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "utterance {:?} has no feature frames",
                raw.id
            )));
        }
        let dim = raw.features[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "utterance {:?} has zero-width frames",
                raw.id
            )));
        }
        for (t, frame) in raw.features.iter().enumerate() {
            if frame.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "utterance {:?} frame {t} has width {} but frame 0 has {dim}",
                    raw.id,
                    frame.len()
                )));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "utterance {:?} frame {t} contains a non-finite value",
                    raw.id
                )));
            }
        }
        if !raw.frame_duration_s.is_finite() || raw.frame_duration_s <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "utterance {:?} has invalid frame duration {}",
                raw.id, raw.frame_duration_s
            )));
        }
        if speaker == Speaker::User && raw.concepts.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "user utterance {:?} has no concepts",
                raw.id
            )));
        }
        if raw.feature_family.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "utterance {:?} has an empty feature family tag",
                raw.id
            )));
        }
        Ok(Utterance {
            id: raw.id,
            speaker,
            features: FeatureSequence {
                frames: raw.features,
                frame_duration_s: raw.frame_duration_s,
            },
            transcript: raw.transcript,
            concepts: raw.concepts,
            feature_family: raw.feature_family,
        })
    }
}

impl From<Utterance> for RawUtterance {
    fn from(u: Utterance) -> Self {
        RawUtterance {
            id: u.id,
            speaker: u.speaker.as_str().to_string(),
            frame_duration_s: u.features.frame_duration_s,
            features: u.features.frames,
            transcript: u.transcript,
            concepts: u.concepts,
            feature_family: u.feature_family,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub utterances: Vec<Utterance>,
    /// Distinct concept labels, sorted.
    pub label_vocab: Vec<String>,
    /// Distinct transcript tokens, sorted.
    pub word_vocab: Vec<String>,
}

impl CorpusSplit {
    pub fn from_utterances(name: SplitName, utterances: Vec<Utterance>) -> Self {
        let mut labels: Vec<String> = utterances
            .iter()
            .flat_map(|u| u.concepts.iter().cloned())
            .collect();
        labels.sort();
        labels.dedup();
        let mut words: Vec<String> = utterances
            .iter()
            .flat_map(|u| u.transcript.iter().cloned())
            .collect();
        words.sort();
        words.dedup();
        CorpusSplit {
            name,
            utterances,
            label_vocab: labels,
            word_vocab: words,
        }
    }

    /// The uniform frame width across the split.
    pub fn feature_dim(&self) -> Result<usize> {
        let mut dim = None;
        for u in &self.utterances {
            let d = u.features.dim();
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Shape {
                        op: "feature_dim",
                        expected: format!("every utterance with {prev} features"),
                        got: format!("utterance {:?} with {d}", u.id),
                    })
                }
                _ => {}
            }
        }
        dim.ok_or(Error::EmptyInput("feature_dim of empty split"))
    }
}

/// The three standard splits of one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: CorpusSplit,
    pub dev: CorpusSplit,
    pub test: CorpusSplit,
}

/// Prepends and appends [`MARKER_WIDTH`] constant frames announcing the
/// speaker: `+5.0` everywhere for a user turn, `-5.0` for a wizard turn. The
/// original frames sit unchanged in the middle. Calling this twice grows the
/// sequence twice; injection is deliberately not idempotent.
pub fn inject_speaker_marker(features: &FeatureSequence, speaker: Speaker) -> FeatureSequence {
    let dim = features.dim();
    let value = match speaker {
        Speaker::User => MARKER_VALUE,
        Speaker::Wizard => -MARKER_VALUE,
    };
    let marker = vec![vec![value; dim]; MARKER_WIDTH];
    let mut frames = Vec::with_capacity(features.len() + 2 * MARKER_WIDTH);
    frames.extend(marker.iter().cloned());
    frames.extend(features.frames.iter().cloned());
    frames.extend(marker);
    FeatureSequence {
        frames,
        frame_duration_s: features.frame_duration_s,
    }
}

/// Overwrites every wizard turn's concepts with exactly
/// `[MachineSemantic]`; user turns pass through untouched. Vocabularies are
/// recomputed.
pub fn label_wizard_turns(split: CorpusSplit) -> CorpusSplit {
    let name = split.name;
    let utterances = split
        .utterances
        .into_iter()
        .map(|mut u| {
            if u.speaker == Speaker::Wizard {
                u.concepts = vec![MACHINE_SEMANTIC.to_string()];
            }
            u
        })
        .collect();
    CorpusSplit::from_utterances(name, utterances)
}

/// Split statistics: audio hours, sentence and token counts (total and
/// user-only), dictionary sizes, and out-of-vocabulary percentages against
/// the training dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub total_audio_h: f64,
    pub user_audio_h: f64,
    pub n_sentences: usize,
    pub n_user_sentences: usize,
    pub n_word_tokens: usize,
    pub n_user_word_tokens: usize,
    pub n_label_tokens: usize,
    pub n_user_label_tokens: usize,
    pub word_dict_size: usize,
    pub label_dict_size: usize,
    pub word_oov_pct: f64,
    pub label_oov_pct: f64,
}

pub fn compute_stats(
    split: &CorpusSplit,
    train_words: &[String],
    train_labels: &[String],
) -> CorpusStats {
    use std::collections::HashSet;
    let word_dict: HashSet<&str> = train_words.iter().map(String::as_str).collect();
    let label_dict: HashSet<&str> = train_labels.iter().map(String::as_str).collect();

    let mut s = CorpusStats {
        total_audio_h: 0.0,
        user_audio_h: 0.0,
        n_sentences: 0,
        n_user_sentences: 0,
        n_word_tokens: 0,
        n_user_word_tokens: 0,
        n_label_tokens: 0,
        n_user_label_tokens: 0,
        word_dict_size: split.word_vocab.len(),
        label_dict_size: split.label_vocab.len(),
        word_oov_pct: 0.0,
        label_oov_pct: 0.0,
    };
    let mut word_oov = 0usize;
    let mut label_oov = 0usize;
    for u in &split.utterances {
        let hours = u.features.duration_s() / 3600.0;
        s.total_audio_h += hours;
        s.n_sentences += 1;
        s.n_word_tokens += u.transcript.len();
        s.n_label_tokens += u.concepts.len();
        if u.speaker == Speaker::User {
            s.user_audio_h += hours;
            s.n_user_sentences += 1;
            s.n_user_word_tokens += u.transcript.len();
            s.n_user_label_tokens += u.concepts.len();
        }
        word_oov += u
            .transcript
            .iter()
            .filter(|w| !word_dict.contains(w.as_str()))
            .count();
        label_oov += u
            .concepts
            .iter()
            .filter(|c| !label_dict.contains(c.as_str()))
            .count();
    }
    if s.n_word_tokens > 0 {
        s.word_oov_pct = 100.0 * word_oov as f64 / s.n_word_tokens as f64;
    }
    if s.n_label_tokens > 0 {
        s.label_oov_pct = 100.0 * label_oov as f64 / s.n_label_tokens as f64;
    }
    s
}

/// Parameters for the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_utts: usize,
    pub n_concepts: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub wizard_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_utts: 100,
            n_concepts: 5,
            feature_dim: 8,
            noise: 0.1,
            wizard_fraction: 0.2,
        }
    }
}

/// Generates a deterministic, learnable corpus.
///
/// Each concept (plus the wizard's `MachineSemantic`) owns a fixed centroid
/// vector; an utterance is a run of 4-8 frames per drawn concept, each frame
/// the centroid plus `noise` times standard Gaussian jitter. At noise 0 a
/// nearest-centroid frame classifier is exact, so the concept sequence is
/// recoverable by construction. Utterances split 70/15/15 into
/// train/dev/test.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.n_concepts < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 concepts, got {}",
            spec.n_concepts
        )));
    }
    if spec.n_utts < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 utterances, got {}",
            spec.n_utts
        )));
    }
    if spec.feature_dim == 0 {
        return Err(Error::InvalidArgument(
            "feature_dim must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.wizard_fraction) {
        return Err(Error::InvalidArgument(format!(
            "wizard fraction must lie in [0, 1), got {}",
            spec.wizard_fraction
        )));
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise must be finite and non-negative, got {}",
            spec.noise
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let concept_names: Vec<String> = (0..spec.n_concepts)
        .map(|c| format!("concept-{c:02}"))
        .collect();

    // One centroid per concept plus one for MachineSemantic, redrawn on the
    // (measure-zero) chance of an exact collision.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.n_concepts + 1);
    while centroids.len() < spec.n_concepts + 1 {
        let c: Vec<f64> = (0..spec.feature_dim)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        if !centroids.contains(&c) {
            centroids.push(c);
        }
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut utterances = Vec::with_capacity(spec.n_utts);
    for i in 0..spec.n_utts {
        let wizard = rng.gen_range(0.0..1.0) < spec.wizard_fraction;
        let (concept_idxs, speaker) = if wizard {
            (vec![spec.n_concepts], Speaker::Wizard)
        } else {
            let len = rng.gen_range(1..=3);
            let idxs = (0..len)
                .map(|_| rng.gen_range(0..spec.n_concepts))
                .collect();
            (idxs, Speaker::User)
        };

        let mut frames = Vec::new();
        let mut transcript = Vec::new();
        let mut concepts = Vec::new();
        for &c in &concept_idxs {
            let seg_len = rng.gen_range(4..=8);
            for _ in 0..seg_len {
                let frame: Vec<f64> = centroids[c]
                    .iter()
                    .map(|mu| mu + spec.noise * normal.sample(&mut rng))
                    .collect();
                frames.push(frame);
            }
            let variant = rng.gen_range(0..2);
            if c == spec.n_concepts {
                transcript.push(format!("mword-{variant}"));
                concepts.push(MACHINE_SEMANTIC.to_string());
            } else {
                transcript.push(format!("word-{c:02}-{variant}"));
                concepts.push(concept_names[c].clone());
            }
        }

        utterances.push(Utterance {
            id: format!("utt-{i:04}"),
            speaker,
            features: FeatureSequence {
                frames,
                frame_duration_s: DEFAULT_FRAME_DURATION_S,
            },
            transcript,
            concepts,
            feature_family: "synthetic".to_string(),
        });
    }

    let n_train = spec.n_utts * 70 / 100;
    let n_dev = spec.n_utts * 15 / 100;
    let test_utts = utterances.split_off(n_train + n_dev);
    let dev_utts = utterances.split_off(n_train);
    Ok(Corpus {
        train: CorpusSplit::from_utterances(SplitName::Train, utterances),
        dev: CorpusSplit::from_utterances(SplitName::Dev, dev_utts),
        test: CorpusSplit::from_utterances(SplitName::Test, test_utts),
    })
}

/// Writes one utterance per line.
pub fn save_corpus(split: &CorpusSplit, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for u in &split.utterances {
        let line = serde_json::to_string(u)
            .map_err(|e| Error::InvalidArgument(format!("serialize {:?}: {e}", u.id)))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a split written by [`save_corpus`]. Malformed records fail with
/// their 1-based line number.
pub fn load_corpus(path: &Path, name: SplitName) -> Result<CorpusSplit> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut utterances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        utterances.push(utt);
    }
    Ok(CorpusSplit::from_utterances(name, utterances))
}

/// Convenience for directories holding `train.jsonl`, `dev.jsonl`,
/// `test.jsonl`.
pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    Ok(Corpus {
        train: load_corpus(&dir.join("train.jsonl"), SplitName::Train)?,
        dev: load_corpus(&dir.join("dev.jsonl"), SplitName::Dev)?,
        test: load_corpus(&dir.join("test.jsonl"), SplitName::Test)?,
    })
}

pub fn save_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_corpus(&corpus.train, &dir.join("train.jsonl"))?;
    save_corpus(&corpus.dev, &dir.join("dev.jsonl"))?;
    save_corpus(&corpus.test, &dir.join("test.jsonl"))
}
