use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stylefield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylefield")).args(args).output().expect("spawn stylefield")
}

fn ok(args: &[&str]) -> String {
    let out = stylefield(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// First `n` cameras of a path, downscaled to `size` pixels square.
fn shrink_path(src: &Path, dst: &Path, n: usize, size: usize) {
    let cams: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(src).unwrap()).unwrap();
    let cams: Vec<Value> = cams
        .into_iter()
        .take(n)
        .map(|mut c| {
            let k = size as f64 / c["width"].as_f64().unwrap();
            for key in ["fx", "fy", "cx", "cy"] {
                c[key] = (c[key].as_f64().unwrap() * k).into();
            }
            c["width"] = size.into();
            c["height"] = size.into();
            c
        })
        .collect();
    std::fs::write(dst, serde_json::to_string(&cams).unwrap()).unwrap();
}

#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (scene, ckpt, styles, net) = (d.join("scene"), d.join("ckpt"), d.join("styles"), d.join("net"));

    ok(&["synth-scene", "--spec", "sphere", "--views", "12", "--out", s(&scene)]);
    assert!(scene.join("path.json").exists());

    let fit_cfg = d.join("fit.json");
    std::fs::write(&fit_cfg, r#"{"iterations": 20, "batch_rays": 256, "samples": 32, "density_res": 16, "uv_res": 8}"#).unwrap();
    ok(&["fit", "--scene", s(&scene), "--config", s(&fit_cfg), "--out", s(&ckpt)]);
    for f in ["loss.csv", "summary.json"] {
        assert!(ckpt.join(f).exists(), "missing {f}");
    }

    ok(&["synth-styles", "--count", "2", "--out", s(&styles)]);
    let textures = d.join("textures");
    ok(&["synth-styles", "--count", "16", "--seed", "5", "--out", s(&textures)]);
    ok(&["pretrain-stylizer", "--textures", s(&textures), "--iters", "3", "--out", s(&net)]);

    let st_cfg = d.join("stylize.json");
    std::fs::write(&st_cfg, r#"{"iterations": 3, "face_res": 8, "render_width": 32, "samples": 32}"#).unwrap();
    let prompt = d.join("prompt.f32t");
    ok(&["stylize", "--ckpts", s(&ckpt), "--styles", s(&styles), "--stylizer", s(&net), "--config", s(&st_cfg), "--out", s(&prompt)]);
    let prompt0 = d.join("prompt_0.f32t");
    assert!(prompt0.exists() && d.join("prompt_1.f32t").exists() && d.join("prompt.json").exists());

    let path = d.join("path.json");
    shrink_path(&scene.join("path.json"), &path, 8, 32);
    let renders = d.join("renders");
    let style0 = styles.join("style_000.f32t");
    ok(&[
        "render", "--ckpt", s(&ckpt), "--style", s(&style0), "--stylizer", s(&net), "--prompt", s(&prompt0),
        "--camera-path", s(&path), "--out", s(&renders),
    ]);
    assert!(renders.join("frame_0007.png").exists());

    let report = d.join("report.csv");
    let stdout = ok(&["eval", "--renders", s(&renders), "--scene", s(&scene), "--out", s(&report)]);
    assert!(stdout.contains("E short"));
    assert!(std::fs::read_to_string(&report).unwrap().lines().count() > 2);

    let cube = d.join("cube.f32t");
    ok(&["bake-cubemap", "--ckpt", s(&ckpt), "--face-res", "8", "--out", s(&cube)]);
    assert!(cube.exists() && cube.with_extension("png").exists());
}

#[test]
fn gradcheck_render_suite_passes() {
    let out = ok(&["gradcheck", "--suite", "render"]);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn bad_inputs_exit_nonzero() {
    assert!(!stylefield(&["gradcheck", "--suite", "bogus"]).status.success());
    assert!(!stylefield(&["synth-scene", "--spec", "teapot", "--out", "/nonexistent/x"]).status.success());

    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    ok(&["synth-scene", "--spec", "box", "--views", "3", "--out", s(&scene)]);
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"iterations": "many"}"#).unwrap();
    let out = stylefield(&["fit", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&tmp.path().join("ckpt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}
