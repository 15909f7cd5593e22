use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hungarian::{hungarian, AssignError, Assignment, CostMatrix};
use crate::decoder::{Detection, DetectionSet, REG_DIM};
use crate::geometry::Point3;
use crate::netcore::{sigmoid, DenseMatrix, NetError};
use crate::scalar::Real;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logarithms.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("class id {class} outside the {num_classes} predicted classes")]
    UnknownClass { class: usize, num_classes: usize },
}

/// Ground-truth 3D box in the current ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GtBox<T: Real> {
    pub id: u32,
    pub class_id: usize,
    pub center: Point3<T>,
    /// Width, length, height in meters.
    pub size: [T; 3],
    pub yaw: T,
    pub velocity: [T; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct LossConfig<T: Real> {
    /// Focusing exponent γ.
    pub gamma: T,
    /// Weight of the classification term, also used for the matching cost.
    pub lambda_cls: T,
}

impl<T: Real> Default for LossConfig<T> {
    fn default() -> Self {
        LossConfig {
            gamma: T::lit(2.0),
            lambda_cls: T::lit(2.0),
        }
    }
}

/// Focal term for one (prediction, class) probability `p`.
///
/// Returns the loss `−(1 − p_t)^γ·ln p_t` and its derivative with respect to
/// the logit behind `p`, with `p_t = p` for positives and `1 − p` otherwise.
/// The derivative is zero where clamping is active.
pub fn focal_element<T: Real>(p: T, positive: bool, gamma: T) -> (T, T) {
    let eps = T::lit(FOCAL_EPS);
    let clamped = p < eps || p > T::one() - eps;
    let pc = p.max(eps).min(T::one() - eps);
    let pt = if positive { pc } else { T::one() - pc };
    let q = T::one() - pt;
    let log_pt = pt.ln();
    let loss = -q.powf(gamma) * log_pt;
    if clamped {
        return (loss, T::zero());
    }
    let modulating = if gamma == T::zero() {
        T::zero()
    } else {
        gamma * q.powf(gamma - T::one()) * log_pt
    };
    let dl_dpt = modulating - q.powf(gamma) / pt;
    let dp_dz = pc * (T::one() - pc);
    let dpt_dz = if positive { dp_dz } else { -dp_dz };
    (loss, dl_dpt * dpt_dz)
}

/// Focal loss over a `queries × classes` logit matrix. `targets[i]` is the
/// positive class of query `i`, if any; every other entry is a negative.
/// Sums over both queries and classes.
pub fn focal_loss<T: Real>(
    logits: &DenseMatrix<T>,
    targets: &[Option<usize>],
    gamma: T,
) -> Result<(T, DenseMatrix<T>), LossError> {
    crate::netcore::check_dim("focal_loss targets", logits.rows(), targets.len())?;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (i, target) in targets.iter().enumerate() {
        if let Some(c) = *target {
            if c >= logits.cols() {
                return Err(LossError::UnknownClass {
                    class: c,
                    num_classes: logits.cols(),
                });
            }
        }
        for k in 0..logits.cols() {
            let (l, g) = focal_element(sigmoid(logits.get(i, k)), *target == Some(k), gamma);
            total = total + l;
            grad.set(i, k, g);
        }
    }
    Ok((total, grad))
}

/// `Σ|pred − gt|` with gradient `sign(pred − gt)` (zero at zero).
pub fn l1_loss<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>), LossError> {
    crate::netcore::check_dim("l1_loss", gt.len(), pred.len())?;
    let mut total = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p - g;
            total = total + d.abs();
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((total, grad))
}

/// Regression vector `[x, y, z, w, l, h, sin yaw, cos yaw, vx, vy]`.
pub fn regression_target<T: Real>(center: &Point3<T>, size: &[T; 3], yaw: T, velocity: &[T; 2]) -> [T; REG_DIM] {
    let (s, c) = yaw.sin_cos();
    [
        center.x, center.y, center.z, size[0], size[1], size[2], s, c, velocity[0], velocity[1],
    ]
}

fn det_regression<T: Real>(d: &Detection<T>) -> [T; REG_DIM] {
    regression_target(&d.center, &d.size, d.yaw, &d.velocity)
}

fn gt_regression<T: Real>(g: &GtBox<T>) -> [T; REG_DIM] {
    regression_target(&g.center, &g.size, g.yaw, &g.velocity)
}

/// Loss terms and gradients for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LossReport<T: Real> {
    pub cls_loss: T,
    pub reg_loss: T,
    /// `lambda_cls·cls_loss + reg_loss`.
    pub total: T,
    /// `(prediction, ground truth)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub cls_grad_norm: T,
    pub reg_grad_norm: T,
    /// Gradient of `total` w.r.t. each prediction's class logits.
    #[serde(skip)]
    pub cls_grad: Vec<Vec<T>>,
    /// Gradient of `total` w.r.t. each prediction's regression vector.
    #[serde(skip)]
    pub reg_grad: Vec<[T; REG_DIM]>,
}

fn frobenius<T: Real, R: AsRef<[T]>>(rows: &[R]) -> T {
    rows.iter()
        .flat_map(|r| r.as_ref().iter())
        .map(|&v| v * v)
        .sum::<T>()
        .sqrt()
}

fn num_classes<T: Real>(preds: &DetectionSet<T>) -> usize {
    preds.detections.first().map_or(0, |d| d.scores.len())
}

/// Loss under a given matching of ground truths to predictions.
pub fn loss_with_assignment<T: Real>(
    preds: &DetectionSet<T>,
    gts: &[GtBox<T>],
    col_to_row: &[usize],
    cfg: &LossConfig<T>,
) -> Result<LossReport<T>, LossError> {
    let n_cls = num_classes(preds);
    let mut target: Vec<Option<usize>> = vec![None; preds.len()];
    for (g, &r) in col_to_row.iter().enumerate() {
        if gts[g].class_id >= n_cls {
            return Err(LossError::UnknownClass {
                class: gts[g].class_id,
                num_classes: n_cls,
            });
        }
        target[r] = Some(g);
    }

    let mut cls_loss = T::zero();
    let mut cls_grad = Vec::with_capacity(preds.len());
    for (d, t) in preds.detections.iter().zip(&target) {
        let positive_class = t.map(|g| gts[g].class_id);
        let mut row = Vec::with_capacity(n_cls);
        for (k, &p) in d.scores.iter().enumerate() {
            let (l, g) = focal_element(p, positive_class == Some(k), cfg.gamma);
            cls_loss = cls_loss + l;
            row.push(cfg.lambda_cls * g);
        }
        cls_grad.push(row);
    }

    let mut reg_loss = T::zero();
    let mut reg_grad = vec![[T::zero(); REG_DIM]; preds.len()];
    let mut matches = Vec::with_capacity(col_to_row.len());
    for (g, &r) in col_to_row.iter().enumerate() {
        let (l, grad) = l1_loss(&det_regression(&preds.detections[r]), &gt_regression(&gts[g]))?;
        reg_loss = reg_loss + l;
        reg_grad[r].copy_from_slice(&grad);
        matches.push((r, g));
    }

    Ok(LossReport {
        cls_loss,
        reg_loss,
        total: cfg.lambda_cls * cls_loss + reg_loss,
        matches,
        cls_grad_norm: frobenius(&cls_grad),
        reg_grad_norm: frobenius(&reg_grad),
        cls_grad,
        reg_grad,
    })
}

/// Matching cost of assigning prediction `d` to ground truth `g`: weighted
/// focal cost (positive minus negative term for the gt class) plus the L1
/// distance of the regression vectors.
fn pair_cost<T: Real>(d: &Detection<T>, g: &GtBox<T>, cfg: &LossConfig<T>) -> T {
    let p = d.scores.get(g.class_id).copied().unwrap_or(T::zero());
    let (pos, _) = focal_element(p, true, cfg.gamma);
    let (neg, _) = focal_element(p, false, cfg.gamma);
    let reg = det_regression(d)
        .iter()
        .zip(gt_regression(g).iter())
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
    cfg.lambda_cls * (pos - neg) + reg
}

/// Hungarian-matched detection loss for one frame.
pub fn detection_loss<T: Real>(
    preds: &DetectionSet<T>,
    gts: &[GtBox<T>],
    cfg: &LossConfig<T>,
) -> Result<LossReport<T>, LossError> {
    let cost = CostMatrix::from_fn(preds.len(), gts.len(), |r, c| pair_cost(&preds.detections[r], &gts[c], cfg));
    let assignment: Assignment<T> = hungarian(&cost)?;
    loss_with_assignment(preds, gts, &assignment.col_to_row, cfg)
}
