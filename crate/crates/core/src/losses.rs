//! Inpainting training objective as plain numerical functions.
//!
//! Each differentiable loss has a matching `*_grad` returning the analytic
//! gradient with respect to the generator-side input, and
//! [`finite_diff_grad`] provides an independent central-difference check.

use ndarray::{Array2, ArrayView1, Axis};
use thiserror::Error;

/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.07;

pub type Image = Array2<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch sizes differ: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("shape mismatch at item {index}: {a:?} vs {b:?}")]
    ShapeMismatch {
        index: usize,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("non-finite value")]
    NonFinite,
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("finite-difference step must be > 0, got {0}")]
    BadEpsilon(f64),
    #[error("feature map needs {expected} values, got {found}")]
    FeatureSize { expected: usize, found: usize },
}

/// Per-location feature vectors: `channels x locations`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Array2<f64>,
}

impl FeatureMap {
    /// `values` is channel-major: `values[c * locations + s]`.
    pub fn new(channels: usize, locations: usize, values: Vec<f64>) -> Result<Self, LossError> {
        if values.len() != channels * locations {
            return Err(LossError::FeatureSize {
                expected: channels * locations,
                found: values.len(),
            });
        }
        Self::from_array(Array2::from_shape_vec((channels, locations), values).expect("length checked"))
    }

    pub fn from_array(values: Array2<f64>) -> Result<Self, LossError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        Ok(Self { values })
    }

    /// Builds from one vector per location.
    pub fn from_locations(vectors: &[Vec<f64>]) -> Result<Self, LossError> {
        let locations = vectors.len();
        let channels = vectors.first().map_or(0, Vec::len);
        let mut values = Array2::zeros((channels, locations));
        for (s, v) in vectors.iter().enumerate() {
            if v.len() != channels {
                return Err(LossError::FeatureSize {
                    expected: channels,
                    found: v.len(),
                });
            }
            for (c, x) in v.iter().enumerate() {
                values[(c, s)] = *x;
            }
        }
        Self::from_array(values)
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn locations(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn at(&self, s: usize) -> ArrayView1<'_, f64> {
        self.values.column(s)
    }

    pub fn as_slice(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// A paired input/target image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub x: Image,
    pub y: Image,
}

impl ImagePair {
    pub fn new(x: Image, y: Image) -> Result<Self, LossError> {
        if x.shape() != y.shape() {
            return Err(LossError::ShapeMismatch {
                index: 0,
                a: x.shape().to_vec(),
                b: y.shape().to_vec(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        Ok(Self { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub gan: f64,
    pub patchnce: f64,
    pub inpaint_l1: f64,
    pub total: f64,
}

fn check_batches(a: &[Image], b: &[Image]) -> Result<(), LossError> {
    if a.is_empty() || b.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if a.len() != b.len() {
        return Err(LossError::BatchMismatch(a.len(), b.len()));
    }
    for (index, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(LossError::ShapeMismatch {
                index,
                a: x.shape().to_vec(),
                b: y.shape().to_vec(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
    }
    Ok(())
}

/// Batch mean of per-image mean absolute error.
pub fn l1_loss(generated: &[Image], targets: &[Image]) -> Result<f64, LossError> {
    check_batches(generated, targets)?;
    let n = generated.len() as f64;
    Ok(generated
        .iter()
        .zip(targets)
        .map(|(g, y)| {
            let k = y.len() as f64;
            g.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / k
        })
        .sum::<f64>()
        / n)
}

/// Subgradient of [`l1_loss`] with respect to `generated` (zero at kinks).
pub fn l1_loss_grad(generated: &[Image], targets: &[Image]) -> Result<Vec<Image>, LossError> {
    check_batches(generated, targets)?;
    let n = generated.len() as f64;
    Ok(generated
        .iter()
        .zip(targets)
        .map(|(g, y)| {
            let scale = 1.0 / (n * y.len() as f64);
            ndarray::Zip::from(g).and(y).map_collect(|a, b| sign(a - b) * scale)
        })
        .collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 restricted to the non-zero pixels of each input, normalized by their
/// count. Inputs with no non-zero pixel contribute 0.
pub fn inpaint_l1_loss(generated: &[Image], inputs: &[Image]) -> Result<f64, LossError> {
    check_batches(generated, inputs)?;
    let n = generated.len() as f64;
    Ok(generated
        .iter()
        .zip(inputs)
        .map(|(g, x)| {
            let k = x.iter().filter(|v| **v != 0.0).count();
            if k == 0 {
                return 0.0;
            }
            g.iter()
                .zip(x.iter())
                .filter(|(_, xv)| **xv != 0.0)
                .map(|(gv, xv)| (gv - xv).abs())
                .sum::<f64>()
                / k as f64
        })
        .sum::<f64>()
        / n)
}

pub fn inpaint_l1_loss_grad(generated: &[Image], inputs: &[Image]) -> Result<Vec<Image>, LossError> {
    check_batches(generated, inputs)?;
    let n = generated.len() as f64;
    Ok(generated
        .iter()
        .zip(inputs)
        .map(|(g, x)| {
            let k = x.iter().filter(|v| **v != 0.0).count();
            let scale = if k == 0 { 0.0 } else { 1.0 / (n * k as f64) };
            ndarray::Zip::from(g)
                .and(x)
                .map_collect(|a, b| if *b != 0.0 { sign(a - b) * scale } else { 0.0 })
        })
        .collect())
}

/// `-log(exp(v.v+/tau) / (exp(v.v+/tau) + sum exp(v.v-/tau)))` from the raw
/// positive and negative logits (inner products already divided by `tau`).
///
/// Written as `log(1 + sum exp(neg - pos))` with the max shifted out, which
/// keeps full relative precision when the loss is tiny.
pub fn contrastive_term(positive_logit: f64, negative_logits: &[f64]) -> f64 {
    let shift = negative_logits
        .iter()
        .map(|a| a - positive_logit)
        .fold(0.0f64, f64::max);
    if shift == 0.0 {
        negative_logits
            .iter()
            .map(|a| (a - positive_logit).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        let rest: f64 = negative_logits
            .iter()
            .map(|a| (a - positive_logit - shift).exp())
            .sum();
        shift + ((-shift).exp() + rest).ln()
    }
}

fn check_layer(gen: &FeatureMap, tgt: &FeatureMap, index: usize) -> Result<(), LossError> {
    if gen.values.shape() != tgt.values.shape() {
        return Err(LossError::ShapeMismatch {
            index,
            a: gen.values.shape().to_vec(),
            b: tgt.values.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<(), LossError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(LossError::BadTemperature(tau))
    }
}

// logits[s, s'] = H_s(G(x)) . H_s'(y) / tau
fn logits(gen: &FeatureMap, tgt: &FeatureMap, tau: f64) -> Array2<f64> {
    gen.values.t().dot(&tgt.values) / tau
}

/// Contrastive patch loss of one layer, summed over locations.
pub fn patchnce_layer(gen: &FeatureMap, tgt: &FeatureMap, tau: f64) -> Result<f64, LossError> {
    check_tau(tau)?;
    check_layer(gen, tgt, 0)?;
    let l = logits(gen, tgt, tau);
    let mut negatives = Vec::with_capacity(l.ncols().saturating_sub(1));
    let mut total = 0.0;
    for (s, row) in l.axis_iter(Axis(0)).enumerate() {
        negatives.clear();
        negatives.extend(row.iter().enumerate().filter(|(j, _)| *j != s).map(|(_, v)| *v));
        total += contrastive_term(row[s], &negatives);
    }
    if !total.is_finite() {
        return Err(LossError::NonFinite);
    }
    Ok(total)
}

/// Contrastive patch loss of one sample, summed over layers.
pub fn patchnce_loss(gen: &[FeatureMap], tgt: &[FeatureMap], tau: f64) -> Result<f64, LossError> {
    check_tau(tau)?;
    if gen.len() != tgt.len() {
        return Err(LossError::BatchMismatch(gen.len(), tgt.len()));
    }
    let mut total = 0.0;
    for (i, (g, t)) in gen.iter().zip(tgt).enumerate() {
        check_layer(g, t, i)?;
        total += patchnce_layer(g, t, tau)?;
    }
    Ok(total)
}

/// Batch mean of [`patchnce_loss`].
pub fn patchnce_loss_batch(
    gen: &[Vec<FeatureMap>],
    tgt: &[Vec<FeatureMap>],
    tau: f64,
) -> Result<f64, LossError> {
    if gen.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if gen.len() != tgt.len() {
        return Err(LossError::BatchMismatch(gen.len(), tgt.len()));
    }
    let mut sum = 0.0;
    for (g, t) in gen.iter().zip(tgt) {
        sum += patchnce_loss(g, t, tau)?;
    }
    Ok(sum / gen.len() as f64)
}

/// Gradient of [`patchnce_loss`] with respect to the generated features.
///
/// For location `s`: `(sum_j softmax_j * y_j - y_s) / tau`.
pub fn patchnce_loss_grad(gen: &[FeatureMap], tgt: &[FeatureMap], tau: f64) -> Result<Vec<FeatureMap>, LossError> {
    check_tau(tau)?;
    if gen.len() != tgt.len() {
        return Err(LossError::BatchMismatch(gen.len(), tgt.len()));
    }
    gen.iter()
        .zip(tgt)
        .enumerate()
        .map(|(i, (g, t))| {
            check_layer(g, t, i)?;
            let l = logits(g, t, tau);
            let mut weights = Array2::<f64>::zeros(l.raw_dim());
            for (s, row) in l.axis_iter(Axis(0)).enumerate() {
                let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                let z: f64 = row.iter().map(|a| (a - m).exp()).sum();
                for (j, a) in row.iter().enumerate() {
                    weights[(s, j)] = (a - m).exp() / z;
                }
                weights[(s, s)] -= 1.0;
            }
            // grad[:, s] = sum_j weights[s, j] * y[:, j] / tau
            FeatureMap::from_array(t.values.dot(&weights.t()) / tau)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLoss {
    pub generator: f64,
    pub discriminator: f64,
}

fn check_probs(p: &[f64]) -> Result<(), LossError> {
    if p.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    match p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        Some(v) => Err(LossError::ProbabilityOutOfRange(*v)),
        None => Ok(()),
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len() as f64;
    it.sum::<f64>() / n
}

/// Binary cross-entropy adversarial losses; the generator term uses the
/// non-saturating form `-mean(log D(G(x)))`.
pub fn gan_loss(disc_real: &[f64], disc_fake: &[f64]) -> Result<GanLoss, LossError> {
    check_probs(disc_real)?;
    check_probs(disc_fake)?;
    let discriminator =
        -mean(disc_real.iter().map(|p| p.ln())) - mean(disc_fake.iter().map(|p| (-p).ln_1p()));
    let generator = -mean(disc_fake.iter().map(|p| p.ln()));
    Ok(GanLoss {
        generator,
        discriminator,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanGrad {
    /// d generator / d disc_fake
    pub generator_wrt_fake: Vec<f64>,
    /// d discriminator / d disc_real
    pub discriminator_wrt_real: Vec<f64>,
    /// d discriminator / d disc_fake
    pub discriminator_wrt_fake: Vec<f64>,
}

pub fn gan_loss_grad(disc_real: &[f64], disc_fake: &[f64]) -> Result<GanGrad, LossError> {
    check_probs(disc_real)?;
    check_probs(disc_fake)?;
    let nr = disc_real.len() as f64;
    let nf = disc_fake.len() as f64;
    Ok(GanGrad {
        generator_wrt_fake: disc_fake.iter().map(|p| -1.0 / (nf * p)).collect(),
        discriminator_wrt_real: disc_real.iter().map(|p| -1.0 / (nr * p)).collect(),
        discriminator_wrt_fake: disc_fake.iter().map(|p| 1.0 / (nf * (1.0 - p))).collect(),
    })
}

/// Unweighted sum of the three objective terms.
pub fn total_objective(gan: f64, patchnce: f64, inpaint_l1: f64) -> Result<LossBreakdown, LossError> {
    if !(gan.is_finite() && patchnce.is_finite() && inpaint_l1.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(LossBreakdown {
        gan,
        patchnce,
        inpaint_l1,
        total: gan + patchnce + inpaint_l1,
    })
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad(
    loss_fn: impl Fn(&[f64]) -> f64,
    point: &[f64],
    eps: f64,
) -> Result<Vec<f64>, LossError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(LossError::BadEpsilon(eps));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = loss_fn(&x);
        x[i] = orig - eps;
        let lo = loss_fn(&x);
        x[i] = orig;
        if !(hi.is_finite() && lo.is_finite()) {
            return Err(LossError::NonFinite);
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}
