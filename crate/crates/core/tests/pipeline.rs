use mvdet::pipeline::{run_ablation, run_sequence, PipelineConfig, QueryMode};
use mvdet::simworld::{generate_scene, NoiseConfig, Scene, SceneConfig};

fn cfg() -> PipelineConfig {
    PipelineConfig {
        embed_dim: 12,
        decoder_layers: 2,
        memory_frames: 2,
        memory_per_frame: 5,
        fixed_queries: 60,
        ..PipelineConfig::default()
    }
}

fn scene(frames: usize, seed: u64) -> Scene {
    let mut c = SceneConfig {
        num_objects: 8,
        frames,
        ..SceneConfig::default()
    };
    c.rig.image_width = 320;
    c.rig.image_height = 128;
    generate_scene(&c, seed).unwrap()
}

#[test]
fn memory_stays_bounded_and_rows_track_depth_guided_queries() {
    let c = cfg();
    let r = run_sequence(&scene(6, 1), &c).unwrap();
    assert_eq!(r.frames.len(), 6);
    assert!(r.peak_memory_entries <= 10);
    assert_eq!(r.frames[0].temporal_queries, 0);
    for f in &r.frames {
        assert_eq!(f.decoder_queries, f.depth_guided_queries);
        assert_eq!(f.detections.len(), f.decoder_queries);
        assert!(f.temporal_queries <= 10 && f.memory_entries <= 10);
        assert_eq!(f.reference_points.len(), f.decoder_queries);
    }
}

#[test]
fn runs_are_reproducible_and_noise_changes_them() {
    let c = cfg();
    let s = scene(3, 2);
    let a = serde_json::to_string(&run_sequence(&s, &c).unwrap()).unwrap();
    let b = serde_json::to_string(&run_sequence(&s, &c).unwrap()).unwrap();
    assert_eq!(a, b);
    let noisy = PipelineConfig {
        noise: NoiseConfig {
            depth_rel_sigma: 0.05,
            box_jitter_px: 2.0,
            ..NoiseConfig::default()
        },
        ..c
    };
    assert_ne!(a, serde_json::to_string(&run_sequence(&s, &noisy).unwrap()).unwrap());
}

#[test]
fn timings_are_opt_in() {
    let s = scene(1, 3);
    let plain = run_sequence(&s, &cfg()).unwrap();
    assert!(plain.frames.iter().all(|f| f.timing_ms.is_none()));
    let timed = run_sequence(&s, &PipelineConfig { record_timings: true, ..cfg() }).unwrap();
    assert!(timed.frames.iter().all(|f| f.timing_ms.is_some()));
}

#[test]
fn ablation_arms_share_weights() {
    let c = PipelineConfig { oracle_head: true, ..cfg() };
    let (report, [fixed, dqg]) = run_ablation(&scene(2, 4), &c).unwrap();
    assert_eq!(report.fixed.weights_checksum, report.depth_guided.weights_checksum);
    assert_eq!(report.fixed.query_mode, QueryMode::Fixed);
    assert!(fixed.frames.iter().all(|f| f.decoder_queries == 60));
    assert_eq!(dqg.frames.len(), 2);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("arm,query_mode,weights_checksum,map,mean_reference_distance,reference_points"));
}

#[test]
fn config_round_trips_through_json() {
    let c = cfg();
    let text = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
    assert!(serde_json::from_str::<PipelineConfig>(r#"{"embed_dimm": 4}"#).is_err());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let c = PipelineConfig { embed_dim: 6, ..cfg() };
    assert!(run_sequence(&scene(1, 0), &c).is_err());
}
