use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[scene]
num_objects = 6
frames = 3

[scene.rig]
image_width = 320
image_height = 128

[pipeline]
embed_dim = 12
decoder_layers = 1
fixed_queries = 60
oracle_head = true
"#;

fn mvdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvdet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = mvdet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work { dir: TempDir::new().unwrap() };
        fs::write(w.path("small.toml"), SMALL).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn simulate(&self, name: &str, extra: &[&str]) -> String {
        let out = self.s(name);
        let cfg = self.s("small.toml");
        let mut args = vec!["simulate", "--config", &cfg, "--out", &out];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }

    fn detect(&self, scene: &str, name: &str) -> String {
        let out = self.s(name);
        ok(&["detect", "--scene", scene, "--config", &self.s("small.toml"), "--out", &out]);
        out
    }
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic_and_writes_a_manifest() {
    let w = Work::new();
    let a = w.simulate("a.json", &["--seed", "4"]);
    let b = w.simulate("b.json", &["--seed", "4"]);
    let c = w.simulate("c.json", &["--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let m = json(w.path("a.manifest.json"));
    assert_eq!(m["kind"], "manifest");
    assert_eq!(m["seeds"]["scene"], 4);
    assert_eq!(m["config"]["scene"]["frames"], 3);
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.iter().any(|o| o.ends_with("a.manifest.json")));
    assert_eq!(json(&a)["kind"], "scene");
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let w = Work::new();
    fs::write(w.path("bad.toml"), "[pipeline]\nembed_dim = 12\n[pipeline.querygen]\nn_pointz = 3\n").unwrap();
    let out = mvdet(&["simulate", "--config", &w.s("bad.toml"), "--out", &w.s("x.json")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_pointz") && err.contains("bad.toml:4"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    fs::write(w.path("odd.toml"), "[pipeline]\nembed_dim = 10\n").unwrap();
    let out = mvdet(&["simulate", "--config", &w.s("odd.toml"), "--out", &w.s("x.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed_dim"));
}

#[test]
fn missing_input_is_an_io_error() {
    let w = Work::new();
    let out = mvdet(&["detect", "--scene", &w.s("nope.json"), "--out", &w.s("r.json")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn wrong_file_kind_is_rejected() {
    let w = Work::new();
    let scene = w.simulate("scene.json", &["--frames", "1"]);
    let out = mvdet(&["eval", "--report", &scene]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run_report"));
}

#[test]
fn detect_on_empty_scene_succeeds_and_repeats() {
    let w = Work::new();
    fs::write(
        w.path("empty.toml"),
        SMALL.replace("num_objects = 6", "num_objects = 0"),
    )
    .unwrap();
    let scene = w.s("empty.json");
    ok(&["simulate", "--config", &w.s("empty.toml"), "--out", &scene]);
    let a = w.detect(&scene, "r1.json");
    let b = w.detect(&scene, "r2.json");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let r = json(&a);
    assert_eq!(r["kind"], "run_report");
    for f in r["report"]["frames"].as_array().unwrap() {
        assert_eq!(f["depth_guided_queries"], 0);
    }
    assert!(json(w.path("r1.manifest.json"))["weights_checksum"].is_string());
}

#[test]
fn eval_reproduces_the_report_map() {
    let w = Work::new();
    let scene = w.simulate("scene.json", &[]);
    let report = w.detect(&scene, "report.json");
    let out = ok(&["eval", "--report", &report]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("class,ap@0.5,ap@1,ap@2,ap@4\n"), "{csv}");
    let map_row = csv.lines().find(|l| l.starts_with("mAP,")).unwrap();
    let from_csv: f64 = map_row.split(',').nth(1).unwrap().parse().unwrap();
    let from_report = json(&report)["report"]["ap"]["map"].as_f64().unwrap();
    assert_eq!(from_csv, from_report);

    let file = w.s("ap.csv");
    ok(&["eval", "--report", &report, "--out", &file]);
    assert_eq!(fs::read_to_string(file).unwrap(), csv);
}

#[test]
fn ablate_reports_two_arms_with_one_checksum() {
    let w = Work::new();
    let scene = w.simulate("scene.json", &["--frames", "2"]);
    let out = w.s("ablation.csv");
    ok(&["ablate", "--scene", &scene, "--config", &w.s("small.toml"), "--out", &out]);
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], rows[1][2]);
    let m = json(w.path("ablation.manifest.json"));
    assert_eq!(m["command"], "ablate");
    assert_eq!(m["weights_checksum"].as_str(), Some(rows[0][2]));
    for k in ["scene", "weights", "stubs", "queries"] {
        assert!(m["seeds"][k].is_u64());
    }
}

#[test]
fn plot_bev_draws_every_marker() {
    let w = Work::new();
    let scene = w.simulate("scene.json", &[]);
    let report = w.detect(&scene, "report.json");
    let r = json(&report);
    let frame = &r["report"]["frames"][1];
    let svg_path = w.s("bev.svg");
    ok(&["plot-bev", "--report", &report, "--frame", "1", "--out", &svg_path]);
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches(r#"class="ref""#).count(), frame["reference_points"].as_array().unwrap().len());
    assert_eq!(svg.matches(r#"class="gt""#).count(), frame["gt_boxes"].as_array().unwrap().len());

    let out = mvdet(&["plot-bev", "--report", &report, "--frame", "9", "--out", &svg_path]);
    assert_eq!(out.status.code(), Some(2));
}
