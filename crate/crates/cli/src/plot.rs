//! Bird's-eye-view SVG of one frame: ROI outline, ground-truth centres and
//! query reference points in ROI-normalized coordinates.

use std::fmt::Write as _;

use mvdet::geometry::{Point3, RoiBounds};
use mvdet::pipeline::FrameReport;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

fn to_px(roi: &RoiBounds<f64>, p: &Point3<f64>) -> (f64, f64) {
    let n = roi.normalize(p).point;
    (MARGIN + n.x * SIZE, MARGIN + (1.0 - n.y) * SIZE)
}

pub fn bev_svg(frame: &FrameReport, roi: &RoiBounds<f64>) -> String {
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    s.push_str("<style>.roi{fill:none;stroke:#444;stroke-width:1}.gt{fill:#d62728}.ref{fill:#1f77b4;fill-opacity:0.6}text{font:12px sans-serif}</style>\n");
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}">frame {} | reference points {} | ground truth {}</text>"#,
        MARGIN / 2.0,
        frame.frame,
        frame.reference_points.len(),
        frame.gt_boxes.len()
    );
    let _ = writeln!(s, r#"<rect class="roi" x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}"/>"#);
    s.push_str(r#"<g id="references">"#);
    s.push('\n');
    for p in &frame.reference_points {
        let (x, y) = to_px(roi, p);
        let _ = writeln!(s, r#"<circle class="ref" cx="{x:.3}" cy="{y:.3}" r="1.5"/>"#);
    }
    s.push_str("</g>\n");
    s.push_str(r#"<g id="ground-truth">"#);
    s.push('\n');
    for g in &frame.gt_boxes {
        let (x, y) = to_px(roi, &g.center);
        let _ = writeln!(
            s,
            r#"<rect class="gt" x="{:.3}" y="{:.3}" width="6" height="6"/>"#,
            x - 3.0,
            y - 3.0
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvdet::decoder::DetectionSet;
    use mvdet::matching::GtBox;

    fn frame(refs: usize, gts: usize) -> FrameReport {
        FrameReport {
            frame: 0,
            timestamp: 0.0,
            depth_guided_queries: refs,
            temporal_queries: 0,
            decoder_queries: refs,
            boxes_2d: 0,
            memory_entries: 0,
            detections: DetectionSet { detections: vec![] },
            loss: None,
            reference_points: (0..refs).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            gt_boxes: (0..gts)
                .map(|i| GtBox {
                    id: i as u32,
                    class_id: 0,
                    center: Point3::new(0.0, i as f64, 0.0),
                    size: [1.0; 3],
                    yaw: 0.0,
                    velocity: [0.0; 2],
                })
                .collect(),
            mean_reference_distance: None,
            timing_ms: None,
        }
    }

    #[test]
    fn marker_counts() {
        let svg = bev_svg(&frame(7, 3), &RoiBounds::default());
        assert_eq!(svg.matches(r#"class="ref""#).count(), 7);
        assert_eq!(svg.matches(r#"class="gt""#).count(), 3);
        assert_eq!(svg.matches(r#"class="roi""#).count(), 1);
    }

    #[test]
    fn roi_centre_maps_to_plot_centre() {
        let (x, y) = to_px(&RoiBounds::default(), &Point3::origin());
        assert!((x - (MARGIN + SIZE / 2.0)).abs() < 1e-9);
        assert!((y - (MARGIN + SIZE / 2.0)).abs() < 1e-9);
    }
}
