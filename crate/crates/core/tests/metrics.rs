use mvdet::geometry::Point3;
use mvdet::metrics::{center_distance_ap, interpolated_ap, mean_ap, pr_curve, EvalConfig, EvalDetection, EvalObject};
use proptest::prelude::*;

fn det(frame: usize, class_id: usize, score: f64, x: f64, y: f64) -> EvalDetection<f64> {
    EvalDetection {
        frame,
        class_id,
        score,
        center: Point3::new(x, y, 0.0),
    }
}

fn obj(frame: usize, class_id: usize, x: f64, y: f64) -> EvalObject<f64> {
    EvalObject {
        frame,
        class_id,
        center: Point3::new(x, y, 0.0),
    }
}

/// Independent matcher: for each prediction in score order, scan all
/// objects and greedily claim the closest free one.
fn reference_curve(preds: &[EvalDetection<f64>], gts: &[EvalObject<f64>], thr: f64) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&preds[a], &preds[b]);
        q.score
            .total_cmp(&p.score)
            .then(p.frame.cmp(&q.frame))
            .then(p.center.x.total_cmp(&q.center.x))
            .then(p.center.y.total_cmp(&q.center.y))
            .then(p.center.z.total_cmp(&q.center.z))
    });
    let mut free = vec![true; gts.len()];
    let mut tp = 0.0;
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let p = &preds[i];
        let hit = (0..gts.len())
            .filter(|&j| free[j] && gts[j].frame == p.frame)
            .map(|j| (j, ((p.center.x - gts[j].center.x).powi(2) + (p.center.y - gts[j].center.y).powi(2)).sqrt()))
            .filter(|&(_, d)| d <= thr)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = hit {
            free[j] = false;
            tp += 1.0;
        }
        out.push((tp / gts.len() as f64, tp / (k + 1) as f64));
    }
    out
}

/// Direct 101-point interpolation.
fn reference_ap(curve: &[(f64, f64)]) -> f64 {
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            curve.iter().filter(|(rc, _)| *rc >= r).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn world() -> impl Strategy<Value = (Vec<EvalDetection<f64>>, Vec<EvalObject<f64>>)> {
    let objects = prop::collection::vec((0usize..3, -20.0..20.0f64, -20.0..20.0f64), 1..12)
        .prop_map(|v| v.into_iter().map(|(f, x, y)| obj(f, 0, x, y)).collect::<Vec<_>>());
    let preds = prop::collection::vec((0usize..3, 0.0..1.0f64, -20.0..20.0f64, -20.0..20.0f64), 0..20)
        .prop_map(|v| v.into_iter().map(|(f, s, x, y)| det(f, 0, s, x, y)).collect::<Vec<_>>());
    (preds, objects).prop_flat_map(|(preds, objects)| {
        // put some predictions near objects so matches happen
        let n = objects.len();
        (Just(objects.clone()), prop::collection::vec((0..n, -1.5..1.5f64, -1.5..1.5f64, 0.0..1.0f64), 0..10)).prop_map(
            move |(objects, near)| {
                let mut preds = preds.clone();
                for (j, dx, dy, s) in near {
                    let o = &objects[j];
                    preds.push(det(o.frame, 0, s, o.center.x + dx, o.center.y + dy));
                }
                (preds, objects)
            },
        )
    })
}

proptest! {
    #[test]
    fn matches_independent_implementation((preds, gts) in world(), thr in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0])) {
        let curve = pr_curve(&preds, &gts, 0, thr).unwrap();
        let want = reference_curve(&preds, &gts, thr);
        prop_assert_eq!(&curve, &want);
        let ap = center_distance_ap(&preds, &gts, 0, thr).unwrap();
        prop_assert!((ap - reference_ap(&want)).abs() < 1e-12);
    }

    #[test]
    fn ap_grows_with_threshold((preds, gts) in world()) {
        let aps: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&t| center_distance_ap(&preds, &gts, 0, t).unwrap()).collect();
        for w in aps.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
    }

    #[test]
    fn ap_ignores_monotone_rescaling((preds, gts) in world(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let rescaled: Vec<_> = preds.iter().map(|p| EvalDetection { score: a * p.score + b, ..*p }).collect();
        prop_assert_eq!(center_distance_ap(&preds, &gts, 0, 2.0), center_distance_ap(&rescaled, &gts, 0, 2.0));
    }

    #[test]
    fn ap_ignores_input_order((preds, gts) in world(), seed: u64) {
        let mut shuffled = preds.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                shuffled.swap(i, (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize);
            }
        }
        prop_assert_eq!(center_distance_ap(&preds, &gts, 0, 1.0), center_distance_ap(&shuffled, &gts, 0, 1.0));
    }

    #[test]
    fn ap_is_a_probability((preds, gts) in world()) {
        let ap = center_distance_ap(&preds, &gts, 0, 2.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn class_without_ground_truth_is_undefined() {
    let cfg = EvalConfig::default();
    let r = mean_ap(&[det(0, 1, 0.9, 0.0, 0.0)], &[obj(0, 0, 0.0, 0.0)], &cfg);
    assert_eq!(r.ap[0], vec![Some(0.0); 4]);
    assert!(r.ap[1].iter().all(Option::is_none));
    assert_eq!(r.map, Some(0.0));
}

#[test]
fn empty_curve_scores_zero() {
    assert_eq!(interpolated_ap::<f64>(&[]), 0.0);
}

#[test]
fn height_is_ignored() {
    let p = EvalDetection {
        center: Point3::new(0.0, 0.0, 10.0),
        ..det(0, 0, 1.0, 0.0, 0.0)
    };
    assert_eq!(center_distance_ap(&[p], &[obj(0, 0, 0.0, 0.0)], 0, 0.5), Some(1.0));
}
