//! Cross-entropy, triplet and mixed objectives with analytic gradients.
//!
//! All functions operate on row-major batches (`[batch, dim]`). Each loss
//! has a `*_grad` twin returning the loss together with the gradient with
//! respect to every input matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid loss config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    CosineDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TripletMode {
    /// `max(0, mean_i[d(a,p) - d(a,n)] + margin)`: one hinge over the batch mean.
    #[default]
    BatchMeanHinge,
    /// `mean_i max(0, d(a_i,p_i) - d(a_i,n_i) + margin)`.
    PerExampleHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the triplet term: `L = (1 - lambda) CE + lambda CL`.
    pub lambda: f64,
    pub margin: f64,
    pub distance: Distance,
    pub triplet_mode: TripletMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            margin: 1.0,
            distance: Distance::Euclidean,
            triplet_mode: TripletMode::BatchMeanHinge,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LossError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.margin >= 0.0) {
            return Err(LossError::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

fn check_labels(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(), LossError> {
    if logits.nrows() != labels.len() || labels.is_empty() {
        return Err(LossError::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let classes = logits.ncols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::Label { label, classes });
    }
    Ok(())
}

fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
    row.mapv(|v| v - lse)
}

/// Mean negative log-likelihood of the gold class.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64, LossError> {
    Ok(cross_entropy_grad(logits, labels)?.0)
}

pub fn cross_entropy_grad(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), LossError> {
    check_labels(logits, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let lp = log_softmax_row(row);
        loss -= lp[y];
        let mut g = grad.row_mut(i);
        g.assign(&lp.mapv(f64::exp));
        g[y] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// Distance between two vectors and its gradient with respect to each.
/// At degenerate points (zero difference or zero norm) the gradient is zero.
pub fn distance_grad(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    kind: Distance,
) -> (f64, Array1<f64>, Array1<f64>) {
    match kind {
        Distance::Euclidean => {
            let diff = &a - &b;
            let d = diff.dot(&diff).sqrt();
            if d == 0.0 {
                let z = Array1::zeros(a.len());
                return (0.0, z.clone(), z);
            }
            let ga = diff / d;
            let gb = -&ga;
            (d, ga, gb)
        }
        Distance::CosineDistance => {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                let z = Array1::zeros(a.len());
                return (1.0, z.clone(), z);
            }
            let cos = a.dot(&b) / (na * nb);
            // d = 1 - cos; dcos/da = b/(na nb) - cos a/na^2
            let ga = -(&b / (na * nb) - &a * (cos / (na * na)));
            let gb = -(&a / (na * nb) - &b * (cos / (nb * nb)));
            (1.0 - cos, ga, gb)
        }
    }
}

pub fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>, kind: Distance) -> f64 {
    distance_grad(a, b, kind).0
}

/// Gradients of the triplet loss with respect to anchors, positives, negatives.
#[derive(Debug, Clone)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Array2<f64>,
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
}

pub fn triplet_loss(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    Ok(triplet_loss_grad(anchors, positives, negatives, cfg)?.loss)
}

pub fn triplet_loss_grad(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<TripletGrad, LossError> {
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(LossError::Shape(format!(
            "anchor {:?}, positive {:?}, negative {:?}",
            anchors.shape(),
            positives.shape(),
            negatives.shape()
        )));
    }
    let m = anchors.nrows();
    if m == 0 {
        return Err(LossError::Shape("triplet batch is empty".into()));
    }
    let mut ga = Array2::zeros(anchors.raw_dim());
    let mut gp = Array2::zeros(anchors.raw_dim());
    let mut gn = Array2::zeros(anchors.raw_dim());
    let mut gaps = Vec::with_capacity(m);
    let mut parts = Vec::with_capacity(m);
    for i in 0..m {
        let (dp, dap, dpp) = distance_grad(anchors.row(i), positives.row(i), cfg.distance);
        let (dn, dan, dnn) = distance_grad(anchors.row(i), negatives.row(i), cfg.distance);
        gaps.push(dp - dn);
        parts.push((dap, dpp, dan, dnn));
    }
    let mf = m as f64;
    let loss = match cfg.triplet_mode {
        TripletMode::BatchMeanHinge => {
            let inner = gaps.iter().sum::<f64>() / mf + cfg.margin;
            if inner > 0.0 {
                for (i, (dap, dpp, dan, dnn)) in parts.iter().enumerate() {
                    ga.row_mut(i).assign(&((dap - dan) / mf));
                    gp.row_mut(i).assign(&(dpp / mf));
                    gn.row_mut(i).assign(&(-dnn / mf));
                }
            }
            inner.max(0.0)
        }
        TripletMode::PerExampleHinge => {
            let mut total = 0.0;
            for (i, (gap, (dap, dpp, dan, dnn))) in gaps.iter().zip(&parts).enumerate() {
                let v = gap + cfg.margin;
                if v > 0.0 {
                    total += v;
                    ga.row_mut(i).assign(&((dap - dan) / mf));
                    gp.row_mut(i).assign(&(dpp / mf));
                    gn.row_mut(i).assign(&(-dnn / mf));
                }
            }
            total / mf
        }
    };
    Ok(TripletGrad {
        loss,
        anchor: ga,
        positive: gp,
        negative: gn,
    })
}

/// `(1 - lambda) * ce + lambda * cl`.
pub fn combined_loss(ce: f64, cl: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ce
    } else if lambda == 1.0 {
        cl
    } else {
        (1.0 - lambda) * ce + lambda * cl
    }
}

/// Per-row distances, handy for post-hoc triplet checks.
pub fn row_distances(a: ArrayView2<f64>, b: ArrayView2<f64>, kind: Distance) -> Vec<f64> {
    a.axis_iter(Axis(0))
        .zip(b.axis_iter(Axis(0)))
        .map(|(x, y)| distance(x, y, kind))
        .collect()
}
