//! Unlikelihood and distillation losses and the two-phase step schedule.
//!
//! Losses are plain functions of probabilities. Gradients are given both
//! w.r.t. the probabilities themselves and w.r.t. the logits of a softmax
//! student, which is what a trainer backpropagates through.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairs::{Manifest, Objective};

/// Unlikelihood probabilities are clamped to `1 - UL_EPS` before the log.
pub const UL_EPS: f64 = 1e-6;
/// Floor for student probabilities under positive teacher mass.
pub const KL_SMOOTHING: f64 = 1e-12;
pub const DEFAULT_GAMMA: f64 = 0.4;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("distribution entry {index} is {value}; entries must be finite and nonnegative")]
    BadEntry { index: usize, value: f64 },
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("teacher has {teacher} entries but student has {student}")]
    ShapeMismatch { teacher: usize, student: usize },
    #[error("gamma {0} is outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("target index {index} out of range for {len} logits")]
    TargetOutOfRange { index: usize, len: usize },
    #[error("dataset has no {0} examples")]
    EmptyStream(&'static str),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("manifest streams disagree: {0}")]
    BadManifest(String),
}

/// A probability distribution over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ObjectiveError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(ObjectiveError::BadEntry { index, value });
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ObjectiveError::NotNormalized(sum));
        }
        Ok(Self(values))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = ObjectiveError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn check_prob(p: f64) -> Result<(), ObjectiveError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ObjectiveError::ProbabilityOutOfRange(p))
    }
}

/// `-ln(1 - p_u)`, with `p_u` clamped to `1 - UL_EPS`.
pub fn ul_loss(p_u: f64) -> Result<f64, ObjectiveError> {
    check_prob(p_u)?;
    Ok(-(1.0 - p_u.min(1.0 - UL_EPS)).ln())
}

/// d ul_loss / d p_u. Zero on the clamped plateau.
pub fn ul_grad_prob(p_u: f64) -> Result<f64, ObjectiveError> {
    check_prob(p_u)?;
    Ok(if p_u < 1.0 - UL_EPS { 1.0 / (1.0 - p_u) } else { 0.0 })
}

/// Gradient of the unlikelihood loss of token `target` w.r.t. student logits.
pub fn ul_grad_logits(logits: &[f64], target: usize) -> Result<Vec<f64>, ObjectiveError> {
    let p = softmax(logits);
    let &p_u = p.get(target).ok_or(ObjectiveError::TargetOutOfRange {
        index: target,
        len: logits.len(),
    })?;
    let outer = ul_grad_prob(p_u)?;
    // dp_u/dz_j = p_u (δ_uj - p_j)
    Ok(p.iter()
        .enumerate()
        .map(|(j, &p_j)| outer * p_u * (if j == target { 1.0 } else { 0.0 } - p_j))
        .collect())
}

fn check_shapes(teacher: &ProbVector, student: &ProbVector) -> Result<(), ObjectiveError> {
    if teacher.len() == student.len() {
        Ok(())
    } else {
        Err(ObjectiveError::ShapeMismatch {
            teacher: teacher.len(),
            student: student.len(),
        })
    }
}

/// `KL(teacher || student)` with [`KL_SMOOTHING`].
pub fn kl_loss(teacher: &ProbVector, student: &ProbVector) -> Result<f64, ObjectiveError> {
    kl_loss_smoothed(teacher, student, KL_SMOOTHING)
}

/// `Σ t_i ln(t_i / max(s_i, smoothing))`, skipping entries with `t_i = 0`.
pub fn kl_loss_smoothed(
    teacher: &ProbVector,
    student: &ProbVector,
    smoothing: f64,
) -> Result<f64, ObjectiveError> {
    check_shapes(teacher, student)?;
    Ok(teacher
        .values()
        .iter()
        .zip(student.values())
        .filter(|(t, _)| **t > 0.0)
        .map(|(&t, &s)| t * (t / s.max(smoothing)).ln())
        .sum())
}

/// d kl_loss / d s_i = -t_i / s_i.
pub fn kl_grad_prob(teacher: &ProbVector, student: &ProbVector) -> Result<Vec<f64>, ObjectiveError> {
    check_shapes(teacher, student)?;
    Ok(teacher
        .values()
        .iter()
        .zip(student.values())
        .map(|(&t, &s)| if t > 0.0 { -t / s.max(KL_SMOOTHING) } else { 0.0 })
        .collect())
}

/// Gradient of `KL(teacher || softmax(logits))` w.r.t. the logits: `s_j - t_j`.
pub fn kl_grad_logits(teacher: &ProbVector, logits: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    if teacher.len() != logits.len() {
        return Err(ObjectiveError::ShapeMismatch {
            teacher: teacher.len(),
            student: logits.len(),
        });
    }
    let mass: f64 = teacher.values().iter().sum();
    Ok(softmax(logits)
        .iter()
        .zip(teacher.values())
        .map(|(s, t)| s * mass - t)
        .collect())
}

/// `gamma * l_ul + (1 - gamma) * l_kl`.
pub fn combined_loss(l_ul: f64, l_kl: f64, gamma: f64) -> Result<f64, ObjectiveError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ObjectiveError::GammaOutOfRange(gamma));
    }
    Ok(gamma * l_ul + (1.0 - gamma) * l_kl)
}

/// One record of a `loss-check` input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossRecord {
    Unlikelihood { p_u: f64 },
    Distill { teacher: ProbVector, student: ProbVector },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub kind: &'static str,
    pub loss: f64,
}

pub fn evaluate_record(record: &LossRecord) -> Result<LossValue, ObjectiveError> {
    match record {
        LossRecord::Unlikelihood { p_u } => Ok(LossValue {
            kind: "ul",
            loss: ul_loss(*p_u)?,
        }),
        LossRecord::Distill { teacher, student } => Ok(LossValue {
            kind: "kl",
            loss: kl_loss(teacher, student)?,
        }),
    }
}

/// Phase 1 of a step: contradictory pairs for unlikelihood plus copies for
/// distillation, mixed with weight `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedBatch {
    pub unlikelihood: Vec<usize>,
    pub distill: Vec<usize>,
    pub gamma: f64,
}

/// Two parameter updates per step, applied in order: first the mixed
/// unlikelihood/distillation gradient, then plain-sentence distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub step: usize,
    pub epoch: usize,
    pub phase1: MixedBatch,
    /// Plain-sentence example ids.
    pub phase2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// Carried for the trainer; nothing here uses it.
    pub learning_rate: f64,
    pub seed: u64,
    pub steps: Vec<StepPlan>,
}

/// Steps for `epochs` passes over a stream of `n` examples.
pub fn epoch_steps(n: usize, batch_size: usize, epochs: usize) -> usize {
    n.div_ceil(batch_size) * epochs
}

/// Default length: [`DEFAULT_EPOCHS`] passes over the manifest's streams.
pub fn default_total_steps(manifest: &Manifest, batch_size: usize) -> usize {
    epoch_steps(manifest.n_per_objective, batch_size, DEFAULT_EPOCHS)
}

fn stream_ids(manifest: &Manifest, o: Objective) -> Result<Vec<usize>, ObjectiveError> {
    let s = manifest
        .stream(o)
        .ok_or(ObjectiveError::EmptyStream(o.as_str()))?;
    if s.count == 0 {
        return Err(ObjectiveError::EmptyStream(o.as_str()));
    }
    Ok((s.first_id..s.first_id + s.count).collect())
}

/// Builds `total_steps` step plans.
///
/// Each stream is reshuffled at every epoch boundary and consumed in batches
/// of `batch_size`. Every id is visited once per epoch; the final batch of an
/// epoch is short when the stream size is not a multiple of the batch size.
pub fn make_schedule(
    total_steps: usize,
    batch_size: usize,
    manifest: &Manifest,
    seed: u64,
) -> Result<Schedule, ObjectiveError> {
    if batch_size == 0 {
        return Err(ObjectiveError::ZeroBatch);
    }
    let streams = [
        stream_ids(manifest, Objective::Unlikelihood)?,
        stream_ids(manifest, Objective::Distill)?,
        stream_ids(manifest, Objective::DistillPlain)?,
    ];
    let n = streams[0].len();
    if streams.iter().any(|s| s.len() != n) {
        return Err(ObjectiveError::BadManifest(format!(
            "stream sizes {}, {}, {}",
            streams[0].len(),
            streams[1].len(),
            streams[2].len()
        )));
    }
    let steps_per_epoch = n.div_ceil(batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = streams.clone();
    let mut steps = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let within = step % steps_per_epoch;
        if within == 0 {
            for (o, s) in order.iter_mut().zip(&streams) {
                o.clone_from(s);
                o.shuffle(&mut rng);
            }
        }
        let range = within * batch_size..((within + 1) * batch_size).min(n);
        steps.push(StepPlan {
            step,
            epoch: step / steps_per_epoch,
            phase1: MixedBatch {
                unlikelihood: order[0][range.clone()].to_vec(),
                distill: order[1][range.clone()].to_vec(),
                gamma: DEFAULT_GAMMA,
            },
            phase2: order[2][range].to_vec(),
        });
    }
    Ok(Schedule {
        batch_size,
        steps_per_epoch,
        learning_rate: DEFAULT_LEARNING_RATE,
        seed,
        steps,
    })
}
