use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mitodet::imagecore::{self, Image8, InstanceLabelMap};
use serde_json::Value;
use tempfile::TempDir;

fn mitodet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mitodet"))
        .args(args)
        .env_remove("FDA_SEED")
        .output()
        .expect("spawn mitodet")
}

fn ok(args: &[&str]) -> Output {
    let out = mitodet(args);
    assert!(
        out.status.success(),
        "mitodet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradient_rgb(w: usize, h: usize, k: usize) -> Image8 {
    Image8::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 13 + c * 41 + k * 29) % 256) as u8).unwrap()
}

fn save(dir: &Path, name: &str, img: &Image8) -> PathBuf {
    let p = dir.join(name);
    imagecore::save_image(img, &p).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fda_beta_zero_keeps_source_pixels() {
    let dir = TempDir::new().unwrap();
    let src = save(dir.path(), "src.png", &gradient_rgb(40, 24, 0));
    let refr = save(dir.path(), "ref.png", &gradient_rgb(40, 24, 3));
    let out = dir.path().join("out.png");
    ok(&[
        "fda",
        "--source",
        s(&src),
        "--reference",
        s(&refr),
        "--beta",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        imagecore::load_image(&out).unwrap(),
        imagecore::load_image(&src).unwrap()
    );
}

#[test]
fn fda_batch_writes_every_pair() {
    let dir = TempDir::new().unwrap();
    let srcs = dir.path().join("src");
    let refs = dir.path().join("ref");
    std::fs::create_dir_all(&srcs).unwrap();
    std::fs::create_dir_all(&refs).unwrap();
    for i in 0..2 {
        save(&srcs, &format!("s{i}.png"), &gradient_rgb(32, 32, i));
    }
    for j in 0..3 {
        save(&refs, &format!("r{j}.png"), &gradient_rgb(32, 32, 10 + j));
    }
    let out = dir.path().join("out");
    ok(&[
        "fda",
        "--source",
        s(&srcs),
        "--reference",
        s(&refs),
        "--batch-dir",
        s(&out),
        "-j",
        "3",
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "s0_r0.png",
            "s0_r1.png",
            "s0_r2.png",
            "s1_r0.png",
            "s1_r1.png",
            "s1_r2.png"
        ]
    );
}

#[test]
fn fda_shape_mismatch_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let src = save(dir.path(), "src.png", &gradient_rgb(40, 24, 0));
    let refr = save(dir.path(), "ref.png", &gradient_rgb(30, 20, 0));
    let out = dir.path().join("out.png");
    let res = mitodet(&["fda", "--source", s(&src), "--reference", s(&refr), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.starts_with("fda: "), "{err}");
    assert!(err.contains("40x24") && err.contains("30x20"), "{err}");

    ok(&[
        "fda",
        "--source",
        s(&src),
        "--reference",
        s(&refr),
        "--out",
        s(&out),
        "--resize-reference",
    ]);
    let img = imagecore::load_image(&out).unwrap();
    assert_eq!((img.width(), img.height()), (40, 24));
}

#[test]
fn missing_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let res = mitodet(&[
        "baseline-predict",
        "--image",
        s(&dir.path().join("nope.png")),
        "--out",
        "x.png",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("baseline-predict: "));
}

#[test]
fn postprocess_reports_pixel_center_of_a_square_blob() {
    let dir = TempDir::new().unwrap();
    let mask = Image8::from_fn(10, 8, 1, |x, y, _| {
        if (3..5).contains(&x) && (2..4).contains(&y) {
            255
        } else {
            0
        }
    })
    .unwrap();
    let input = save(dir.path(), "m.png", &mask);
    let out = dir.path().join("det.json");
    ok(&["postprocess", "--input", s(&input), "--image-id", "7", "--out", s(&out)]);
    let det = read_json(&out);
    assert_eq!(det["image_id"], 7);
    let pts = det["points"].as_array().unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0]["x"], 3.5);
    assert_eq!(pts[0]["y"], 2.5);
    assert_eq!(pts[0]["area"], 4);
}

fn write_annotations(dir: &Path, boxes: &[[f64; 4]]) -> PathBuf {
    let anns: Vec<Value> = boxes
        .iter()
        .map(|b| serde_json::json!({"image_id": 1, "bbox": b, "category_id": 1}))
        .collect();
    let doc = serde_json::json!({
        "images": [{"id": 1, "file_name": "slide.png", "width": 64, "height": 48}],
        "annotations": anns,
        "categories": [{"id": 1, "name": "mitotic figure"}],
    });
    let p = dir.join("ann.json");
    std::fs::write(&p, doc.to_string()).unwrap();
    p
}

#[test]
fn make_mask_then_evaluate_is_perfect() {
    let dir = TempDir::new().unwrap();
    let boxes = [[4.0, 4.0, 8.0, 8.0], [30.0, 20.0, 10.0, 6.0]];
    let labels: Vec<u32> = (0..48 * 64)
        .map(|i| {
            let (x, y) = ((i % 64) as f64 + 0.5, (i / 64) as f64 + 0.5);
            boxes
                .iter()
                .position(|b| x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3])
                .map_or(0, |k| k as u32 + 1)
        })
        .collect();
    let cells = dir.path().join("slide.png");
    imagecore::save_label_map(&InstanceLabelMap::new(64, 48, labels).unwrap(), &cells).unwrap();
    let ann = write_annotations(dir.path(), &boxes);
    let mask = dir.path().join("mask.png");
    ok(&[
        "make-mask",
        "--cells",
        s(&cells),
        "--annotations",
        s(&ann),
        "--out",
        s(&mask),
    ]);
    let det = dir.path().join("det.json");
    ok(&["postprocess", "--input", s(&mask), "--image-id", "1", "--out", s(&det)]);
    let report = dir.path().join("report.json");
    ok(&[
        "evaluate",
        "--predictions",
        s(&det),
        "--annotations",
        s(&ann),
        "--out",
        s(&report),
    ]);
    let r = read_json(&report);
    assert_eq!(
        (r["tp"].as_u64(), r["fp"].as_u64(), r["fn"].as_u64()),
        (Some(2), Some(0), Some(0))
    );
    assert_eq!(r["f1"], 1.0);
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["tile", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("[default: 512]") && text.contains("[default: 256]"),
        "{text}"
    );
    let out = ok(&["evaluate", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("[default: 30]"));
}

#[test]
fn tile_then_stitch_restores_a_gray_image() {
    let dir = TempDir::new().unwrap();
    let gray = Image8::from_fn(70, 45, 1, |x, y, _| ((x * 3 + y * 5) % 256) as u8).unwrap();
    let input = save(dir.path(), "g.png", &gray);
    let tiles = dir.path().join("tiles");
    ok(&[
        "tile",
        "--image",
        s(&input),
        "--out-dir",
        s(&tiles),
        "--patch-size",
        "32",
        "--stride",
        "16",
    ]);
    let manifest = read_json(&tiles.join("manifest.json"));
    assert_eq!(manifest["patch_size"], 32);
    assert_eq!(manifest["tiles"].as_array().unwrap().len(), 4 * 2);
    for mode in ["max", "mean"] {
        let out = dir.path().join(format!("{mode}.png"));
        ok(&[
            "stitch",
            "--manifest",
            s(&tiles.join("manifest.json")),
            "--mode",
            mode,
            "--out",
            s(&out),
        ]);
        assert_eq!(imagecore::load_image(&out).unwrap(), gray, "{mode}");
    }
}

fn augment_run(dir: &Path, jobs: &str, seed: Option<&str>, env_seed: Option<&str>) -> Vec<(String, Vec<u8>)> {
    let img = save(dir, "a.png", &gradient_rgb(48, 40, 1));
    let mask = save(
        dir,
        "a_m.png",
        &Image8::from_fn(48, 40, 1, |x, y, _| if x > y { 255 } else { 0 }).unwrap(),
    );
    let out = dir.join(format!("aug_{jobs}_{seed:?}_{env_seed:?}"));
    let mut args = vec![
        "augment",
        "--image",
        s(&img),
        "--mask",
        s(&mask),
        "--out-dir",
        s(&out),
        "--count",
        "4",
        "--crop-size",
        "32",
        "-j",
        jobs,
    ];
    if let Some(seed) = seed {
        args.extend(["--seed", seed]);
    }
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mitodet"));
    cmd.args(&args).env_remove("FDA_SEED");
    if let Some(e) = env_seed {
        cmd.env("FDA_SEED", e);
    }
    let res = cmd.output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn augment_is_deterministic_across_job_counts() {
    let dir = TempDir::new().unwrap();
    let one = augment_run(dir.path(), "1", Some("5"), None);
    let eight = augment_run(dir.path(), "8", Some("5"), None);
    assert_eq!(one.len(), 12);
    assert_eq!(one, eight);
    let other = augment_run(dir.path(), "1", Some("6"), None);
    assert_ne!(one, other);
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = TempDir::new().unwrap();
    let env = augment_run(dir.path(), "1", None, Some("5"));
    let flag = augment_run(dir.path(), "1", Some("5"), Some("99"));
    assert_eq!(env, flag);
}

#[test]
fn loss_eval_reports_three_numbers() {
    let dir = TempDir::new().unwrap();
    let pred = save(
        dir.path(),
        "p.png",
        &Image8::from_fn(8, 8, 1, |x, _, _| (x * 30) as u8).unwrap(),
    );
    let truth = save(
        dir.path(),
        "t.png",
        &Image8::from_fn(8, 8, 1, |x, _, _| if x >= 4 { 255 } else { 0 }).unwrap(),
    );
    let out = ok(&["loss-eval", "--pred", s(&pred), "--truth", s(&truth)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (f, d, t) = (
        v["focal"].as_f64().unwrap(),
        v["dice"].as_f64().unwrap(),
        v["total"].as_f64().unwrap(),
    );
    assert!(f > 0.0 && d > 0.0);
    assert!((f + d - t).abs() < 1e-12);
}

#[test]
fn config_file_supplies_settings_and_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let mask = Image8::from_fn(6, 6, 1, |x, y, _| if x < 2 && y < 2 { 255 } else { 0 }).unwrap();
    let input = save(dir.path(), "m.png", &mask);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"postproc": {"min_component_area": 5}}"#).unwrap();
    let out = dir.path().join("d.json");
    ok(&[
        "postprocess",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(read_json(&out)["points"].as_array().unwrap().len(), 0);
    ok(&[
        "postprocess",
        "--config",
        s(&cfg),
        "--min-area",
        "4",
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(read_json(&out)["points"].as_array().unwrap().len(), 1);

    std::fs::write(&cfg, r#"{"postprocess": {}}"#).unwrap();
    let res = mitodet(&[
        "postprocess",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn baseline_predict_writes_gray_map() {
    let dir = TempDir::new().unwrap();
    let img = save(dir.path(), "i.png", &gradient_rgb(20, 10, 2));
    let out = dir.path().join("p.png");
    ok(&["baseline-predict", "--image", s(&img), "--out", s(&out)]);
    let p = imagecore::load_image(&out).unwrap();
    assert_eq!((p.width(), p.height(), p.channels()), (20, 10, 1));
    let src = imagecore::load_image(&img).unwrap();
    assert_eq!(p.get(3, 4, 0), 255 - src.get(3, 4, 2));
}
