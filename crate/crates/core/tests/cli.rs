use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmix"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ssmix(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(prefix: &Path, seed: &str) {
    ok(&[
        "synth", "--out", p(prefix), "--height", "16", "--width", "14", "--bands", "10", "--classes", "3",
        "--regions", "2", "--seed", seed,
    ]);
}

const SMALL_MODEL: [&str; 12] = [
    "--patch", "3", "--pca", "4", "--stem-filters", "2", "--channels", "3", "--hidden", "6", "--blocks", "1",
];

fn train_args<'a>(cmd: &'a str, cube: &'a str, labels: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut args = vec![cmd, "--cube", cube, "--labels", labels];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(&[
        "--train-frac", "0.1", "--val-frac", "0.1", "--epochs", "3", "--batch", "8", "--lr", "0.01", "--seed", "3",
        "--out", out,
    ]);
    args
}

fn strip_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, "5");
    synth(&b, "5");
    synth(&c, "6");
    for ext in ["json", "f32", "u16"] {
        assert_eq!(fs::read(a.with_extension(ext)).unwrap(), fs::read(b.with_extension(ext)).unwrap());
    }
    assert_ne!(fs::read(a.with_extension("f32")).unwrap(), fs::read(c.with_extension("f32")).unwrap());
    assert_eq!(fs::metadata(a.with_extension("f32")).unwrap().len(), 16 * 14 * 10 * 4);
    assert_eq!(fs::metadata(a.with_extension("u16")).unwrap().len(), 16 * 14 * 2);
    assert!(a.with_extension("manifest.json").exists());

    let replayed = dir.path().join("r");
    ok(&["replay", "--manifest", p(&a.with_extension("manifest.json")), "--out", p(&replayed)]);
    for ext in ["f32", "u16"] {
        assert_eq!(fs::read(a.with_extension(ext)).unwrap(), fs::read(replayed.with_extension(ext)).unwrap());
    }
}

#[test]
fn train_eval_map_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "11");
    let (cube, labels) = (scene.with_extension("json"), scene.with_extension("u16"));
    let run = dir.path().join("run");
    let stdout = ok(&train_args("train", p(&cube), p(&labels), p(&run)));
    assert!(stdout.contains("OA "));
    for f in ["manifest.json", "model.ssmx", "train_log.csv", "metrics.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,wall_ms\n"));
    assert_eq!(log.lines().count(), 4);
    let metrics = fs::read(run.join("metrics.csv")).unwrap();

    let eval_out = dir.path().join("eval.csv");
    ok(&["eval", "--run", p(&run), "--out", p(&eval_out), "--threads", "2"]);
    assert_eq!(fs::read(&eval_out).unwrap(), metrics);

    let map = dir.path().join("map.ppm");
    ok(&["map", "--run", p(&run), "--out", p(&map)]);
    let ppm = fs::read(&map).unwrap();
    assert!(ppm.starts_with(b"P6\n14 16\n255\n"));
    assert_eq!(ppm.len(), b"P6\n14 16\n255\n".len() + 16 * 14 * 3);
    let map_manifest = dir.path().join("map.ppm.manifest.json");
    assert!(map_manifest.exists());
    let map2 = dir.path().join("map2.ppm");
    ok(&["replay", "--manifest", p(&map_manifest), "--out", p(&map2)]);
    assert_eq!(fs::read(&map2).unwrap(), ppm);

    let rerun = dir.path().join("rerun");
    ok(&["replay", "--manifest", p(&run.join("manifest.json")), "--out", p(&rerun), "--threads", "3"]);
    for f in ["model.ssmx", "metrics.csv", "manifest.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(rerun.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(
        strip_wall_time(&log),
        strip_wall_time(&fs::read_to_string(rerun.join("train_log.csv")).unwrap())
    );
}

#[test]
fn ablate_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "12");
    let (cube, labels) = (scene.with_extension("json"), scene.with_extension("u16"));
    let out = dir.path().join("abl");
    ok(&train_args("ablate", p(&cube), p(&labels), p(&out)));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "combination,oa,aa,kappa,n_train,n_val,n_test");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("3D-CNN,"));
    assert!(lines[5].starts_with("3D-CNN + Spe + Spa + Attention,"));
    let sizes: Vec<&str> = lines[1..].iter().map(|l| l.splitn(5, ',').nth(4).unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn count_reports_the_default_budget() {
    let table = ok(&["count"]);
    assert!(table.contains("140,914"), "{table}");
    let json = ok(&["count", "--json", "--classes", "5", "--no-attention"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let layers = v["layers"].as_array().unwrap();
    assert!(layers.iter().all(|l| l["name"] != "attention"));
    let sum: u64 = layers.iter().map(|l| l["params"].as_u64().unwrap()).sum();
    assert_eq!(sum, v["total_params"].as_u64().unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ssmix(&["--help"]).status.code(), Some(0));
    assert_eq!(ssmix(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ssmix(&["count", "--classes", "0"]).status.code(), Some(1));
    assert_eq!(ssmix(&["count", "--patch", "4"]).status.code(), Some(1));
    let missing = dir.path().join("none.json");
    let out = ssmix(&["train", "--cube", p(&missing), "--labels", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let scene = dir.path().join("s");
    synth(&scene, "1");
    let cube = scene.with_extension("json");
    let labels = scene.with_extension("u16");
    let mut args = train_args("train", p(&cube), p(&labels), p(dir.path()));
    let at = args.iter().position(|a| *a == "--train-frac").unwrap();
    args[at + 1] = "0.7";
    args[at + 3] = "0.5";
    assert_eq!(ssmix(&args).status.code(), Some(1));

    fs::write(scene.with_extension("u16"), [0u8; 3]).unwrap();
    let out = ssmix(&train_args("train", p(&cube), p(&labels), p(dir.path())));
    assert_eq!(out.status.code(), Some(3));
}
