//! Center-distance average precision.
//!
//! A prediction matches a ground-truth object of its class in the same frame
//! when their bird's-eye-view center distance is within the threshold.
//! Predictions are processed in descending score order and each takes the
//! nearest still-unmatched object. AP is the 101-point interpolated area
//! under the precision-recall curve.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::DetectionSet;
use crate::geometry::Point3;
use crate::matching::GtBox;
use crate::scalar::Real;

/// Recall sample count of the interpolated AP.
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// BEV distance thresholds in meters, ascending.
    pub thresholds: Vec<f64>,
    pub classes: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            classes: ["car", "truck", "pedestrian", "cyclist"].map(String::from).to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.thresholds.is_empty() {
            return Err("eval.thresholds must not be empty".into());
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err("eval.thresholds must be positive".into());
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err("eval.thresholds must be strictly ascending".into());
        }
        Ok(())
    }
}

/// A scored prediction tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalDetection<T: Real> {
    pub frame: usize,
    pub class_id: usize,
    pub score: T,
    pub center: Point3<T>,
}

/// A ground-truth object tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalObject<T: Real> {
    pub frame: usize,
    pub class_id: usize,
    pub center: Point3<T>,
}

/// One evaluation record per detection, labelled with its best class.
pub fn eval_detections<T: Real>(frame: usize, set: &DetectionSet<T>) -> Vec<EvalDetection<T>> {
    set.detections
        .iter()
        .filter_map(|d| {
            d.label().map(|(class_id, score)| EvalDetection {
                frame,
                class_id,
                score,
                center: d.center,
            })
        })
        .collect()
}

pub fn eval_objects<T: Real>(frame: usize, gts: &[GtBox<T>]) -> Vec<EvalObject<T>> {
    gts.iter()
        .map(|g| EvalObject {
            frame,
            class_id: g.class_id,
            center: g.center,
        })
        .collect()
}

fn total_cmp<T: Real>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Descending score; equal scores are ordered by content so the result does
/// not depend on input order.
fn ranking<T: Real>(a: &EvalDetection<T>, b: &EvalDetection<T>) -> Ordering {
    total_cmp(b.score, a.score)
        .then(a.frame.cmp(&b.frame))
        .then(total_cmp(a.center.x, b.center.x))
        .then(total_cmp(a.center.y, b.center.y))
        .then(total_cmp(a.center.z, b.center.z))
}

/// Precision-recall points of one class at one threshold, one point per
/// prediction in ranked order. `None` when the class has no ground truth.
pub fn pr_curve<T: Real>(
    preds: &[EvalDetection<T>],
    gts: &[EvalObject<T>],
    class_id: usize,
    threshold: T,
) -> Option<Vec<(T, T)>> {
    let objects: Vec<&EvalObject<T>> = gts.iter().filter(|g| g.class_id == class_id).collect();
    if objects.is_empty() {
        return None;
    }
    let mut ranked: Vec<&EvalDetection<T>> = preds.iter().filter(|p| p.class_id == class_id).collect();
    ranked.sort_by(|a, b| ranking(a, b));

    let n_gt = T::from_count(objects.len());
    let mut taken = vec![false; objects.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (i, p) in ranked.iter().enumerate() {
        let mut best: Option<(usize, T)> = None;
        for (j, g) in objects.iter().enumerate() {
            if taken[j] || g.frame != p.frame {
                continue;
            }
            let d = p.center.bev_distance(&g.center);
            if d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
        let recall = T::from_count(tp) / n_gt;
        let precision = T::from_count(tp) / T::from_count(i + 1);
        curve.push((recall, precision));
    }
    Some(curve)
}

/// 101-point interpolated AP of a precision-recall curve: mean over
/// `r ∈ {0, 0.01, …, 1}` of the best precision at recall ≥ r (0 if the
/// curve never reaches r).
pub fn interpolated_ap<T: Real>(curve: &[(T, T)]) -> T {
    // runs of equal interpolated precision are summed as count × value so
    // rational curves do not pick up accumulated rounding error
    let mut total = T::zero();
    let mut run: Option<(T, usize)> = None;
    for k in 0..RECALL_POINTS {
        let r = T::from_count(k) / T::from_count(RECALL_POINTS - 1);
        let best = curve
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|&(_, p)| p)
            .fold(T::zero(), T::max);
        run = match run {
            Some((v, n)) if v == best => Some((v, n + 1)),
            Some((v, n)) => {
                total = total + v * T::from_count(n);
                Some((best, 1))
            }
            None => Some((best, 1)),
        };
    }
    if let Some((v, n)) = run {
        total = total + v * T::from_count(n);
    }
    total / T::from_count(RECALL_POINTS)
}

/// AP of one class at one threshold; `None` if the class has no ground truth.
pub fn center_distance_ap<T: Real>(
    preds: &[EvalDetection<T>],
    gts: &[EvalObject<T>],
    class_id: usize,
    threshold: T,
) -> Option<T> {
    pr_curve(preds, gts, class_id, threshold).map(|c| interpolated_ap(&c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ApResult<T: Real> {
    pub classes: Vec<String>,
    pub thresholds: Vec<T>,
    /// `ap[class][threshold]`, `None` where the class has no ground truth.
    pub ap: Vec<Vec<Option<T>>>,
    /// Mean over the defined entries; `None` if there are none.
    pub map: Option<T>,
}

impl<T: Real> ApResult<T> {
    /// `class,<thresholds…>` header, one row per class, then an `mAP` row.
    /// Undefined entries are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class");
        for t in &self.thresholds {
            let _ = write!(s, ",ap@{t}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.ap) {
            s.push_str(name);
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s.push_str("mAP");
        s.push(',');
        if let Some(m) = self.map {
            let _ = write!(s, "{m}");
        }
        s.push('\n');
        s
    }
}

/// AP for every (class, threshold) pair and their mean.
pub fn mean_ap<T: Real>(preds: &[EvalDetection<T>], gts: &[EvalObject<T>], cfg: &EvalConfig) -> ApResult<T> {
    let thresholds: Vec<T> = cfg.thresholds.iter().map(|&t| T::lit(t)).collect();
    let ap: Vec<Vec<Option<T>>> = (0..cfg.classes.len())
        .into_par_iter()
        .map(|c| {
            thresholds
                .iter()
                .map(|&t| center_distance_ap(preds, gts, c, t))
                .collect()
        })
        .collect();
    let defined: Vec<T> = ap.iter().flatten().flatten().copied().collect();
    let map = (!defined.is_empty()).then(|| defined.iter().copied().sum::<T>() / T::from_count(defined.len()));
    ApResult {
        classes: cfg.classes.clone(),
        thresholds,
        ap,
        map,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, x: f64, score: f64) -> EvalDetection<f64> {
        EvalDetection {
            frame,
            class_id: 0,
            score,
            center: Point3::new(x, 0.0, 0.0),
        }
    }

    fn obj(frame: usize, x: f64) -> EvalObject<f64> {
        EvalObject {
            frame,
            class_id: 0,
            center: Point3::new(x, 0.0, 0.0),
        }
    }

    fn hand_case() -> (Vec<EvalDetection<f64>>, Vec<EvalObject<f64>>) {
        let gts = vec![obj(0, 0.0), obj(0, 10.0), obj(0, 20.0)];
        let preds = vec![det(0, 0.3, 0.9), det(0, 0.3, 0.8), det(0, 11.5, 0.7), det(0, 25.0, 0.6)];
        (preds, gts)
    }

    #[test]
    fn hand_pr_curve() {
        let (p, g) = hand_case();
        let c = pr_curve(&p, &g, 0, 1.0).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(c, vec![(third, 1.0), (third, 0.5), (third, third), (third, 0.25)]);
        assert_eq!(center_distance_ap(&p, &g, 0, 1.0), Some(34.0 / 101.0));
        assert_eq!(center_distance_ap(&p, &g, 0, 2.0), Some(56.0 / 101.0));
    }

    #[test]
    fn perfect_and_empty() {
        let g = vec![obj(0, 1.0), obj(1, 5.0)];
        let p = vec![det(0, 1.0, 1.0), det(1, 5.0, 1.0)];
        assert_eq!(center_distance_ap(&p, &g, 0, 0.5), Some(1.0));
        assert_eq!(center_distance_ap(&[], &g, 0, 0.5), Some(0.0));
        assert_eq!(center_distance_ap(&p, &[], 0, 0.5), None);
    }

    #[test]
    fn frames_do_not_cross_match() {
        let g = vec![obj(0, 0.0)];
        let p = vec![det(1, 0.0, 1.0)];
        assert_eq!(center_distance_ap(&p, &g, 0, 4.0), Some(0.0));
    }

    #[test]
    fn mean_over_defined_entries() {
        let cfg = EvalConfig {
            thresholds: vec![0.5, 1.0],
            classes: vec!["a".into(), "b".into()],
        };
        let g = vec![obj(0, 0.0)];
        let p = vec![det(0, 0.7, 1.0)];
        let r = mean_ap(&p, &g, &cfg);
        assert_eq!(r.ap[0], vec![Some(0.0), Some(1.0)]);
        assert_eq!(r.ap[1], vec![None, None]);
        assert_eq!(r.map, Some(0.5));
        assert_eq!(r.to_csv(), "class,ap@0.5,ap@1\na,0,1\nb,,\nmAP,0.5\n");
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            thresholds: vec![1.0, 0.5],
            ..EvalConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
