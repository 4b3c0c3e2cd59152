use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcsep::{read_wav, si_sdr, write_wav, WavEncoding};

fn mcsep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = mcsep(args);
    assert!(
        out.status.success(),
        "mcsep {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    mcsep(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("scene");
    let mut args = vec!["simulate", "--out", s(&out)];
    if !extra.contains(&"--samples") {
        args.extend_from_slice(&["--samples", "4000"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_writes_mixture_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("a");
    ok(&[
        "simulate",
        "--C",
        "2",
        "--P",
        "3",
        "--seed",
        "7",
        "--out",
        s(&scene),
    ]);
    let mix = read_wav(scene.join("mixture.wav")).unwrap();
    assert_eq!(mix.num_channels(), 3);
    for c in 0..2 {
        for p in 0..3 {
            assert!(scene.join(format!("image_s{c}_m{p}.wav")).exists());
        }
    }
    assert!(!scene.join("noise.wav").exists());

    let manifest: toml::Table = read(&scene.join("manifest.toml")).parse().unwrap();
    assert_eq!(manifest["run"]["command"].as_str(), Some("simulate"));
    assert_eq!(manifest["run"]["seed"].as_integer(), Some(7));
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 7);
    for o in outputs {
        let bytes = std::fs::read(scene.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"].as_integer(), Some(bytes.len() as i64));
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }

    let again = dir.path().join("b");
    ok(&[
        "simulate",
        "--C",
        "2",
        "--P",
        "3",
        "--seed",
        "7",
        "--out",
        s(&again),
    ]);
    for o in outputs {
        let name = o["path"].as_str().unwrap();
        assert_eq!(
            std::fs::read(scene.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap()
        );
    }
}

#[test]
fn noise_file_written_when_snr_set() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &["--snr-db", "20"]);
    assert_eq!(read_wav(scene.join("noise.wav")).unwrap().num_channels(), 3);
}

#[test]
fn manifest_reruns_the_same_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &["--seed", "3", "--mics", "4"]);
    let rerun = dir.path().join("rerun");
    ok(&[
        "simulate",
        "--config",
        s(&scene.join("manifest.toml")),
        "--out",
        s(&rerun),
    ]);
    assert_eq!(
        std::fs::read(scene.join("mixture.wav")).unwrap(),
        std::fs::read(rerun.join("mixture.wav")).unwrap()
    );
    assert_eq!(
        read_wav(rerun.join("mixture.wav")).unwrap().num_channels(),
        4
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[simulate]\nmics = 5\nspeakers = 3\nsamples = 2000\n").unwrap();
    let out = dir.path().join("o");
    ok(&[
        "simulate",
        "--config",
        s(&cfg),
        "--mics",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(read_wav(out.join("mixture.wav")).unwrap().num_channels(), 4);
    assert!(out.join("image_s2_m3.wav").exists());
    // The mixture carries the full reverberant tail of the 400-tap RIRs.
    assert_eq!(
        read_wav(out.join("mixture.wav")).unwrap().len(),
        2000 + 400 - 1
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["simulate", "--P", "0", "--out", s(&d.join("x"))]), 1);
    assert_eq!(code(&["simulate", "--no-such-flag"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);

    let bad_key = d.join("bad_key.toml");
    std::fs::write(&bad_key, "[simulate]\nmicrophones = 3\n").unwrap();
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            s(&bad_key),
            "--out",
            s(&d.join("y"))
        ]),
        1
    );
    let bad_section = d.join("bad_section.toml");
    std::fs::write(&bad_section, "[simulat]\nmics = 3\n").unwrap();
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            s(&bad_section),
            "--out",
            s(&d.join("y"))
        ]),
        1
    );

    assert_eq!(
        code(&["simulate", "--config", s(&d.join("missing.toml"))]),
        2
    );
    let missing = d.join("missing.wav");
    assert_eq!(
        code(&[
            "separate",
            "--mixture",
            s(&missing),
            "--out",
            s(&d.join("z"))
        ]),
        2
    );
    let scene = simulate(d, &[]);
    let mix = scene.join("mixture.wav");
    assert_eq!(
        code(&[
            "separate",
            "--mixture",
            s(&mix),
            "--align",
            "oracle",
            "--out",
            s(&d.join("z"))
        ]),
        1
    );
    assert_eq!(
        code(&[
            "separate",
            "--mixture",
            s(&mix),
            "--init",
            "oracle",
            "--out",
            s(&d.join("z"))
        ]),
        1
    );
}

#[test]
fn singular_wiener_solve_exits_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &[]);
    // A lone impulse in the last sample leaves the lagged design rank one.
    let len = read_wav(scene.join("mixture.wav")).unwrap().len();
    let mut spike = vec![0.0; len];
    spike[len - 1] = 1.0;
    let est = dir.path().join("spike.wav");
    write_wav(&est, &[spike], 8000, WavEncoding::Float32).unwrap();
    let out = mcsep(&[
        "wiener",
        "--mixture",
        s(&scene.join("mixture.wav")),
        "--estimates",
        s(&est),
        "--taps",
        "64",
        "--future-taps",
        "0",
        "--ridge",
        "0",
        "--out",
        s(&dir.path().join("w")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn objective_rows(trace: &str) -> Vec<(String, f64)> {
    trace
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn separate_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &["--seed", "5"]);
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--mixture",
        s(&scene.join("mixture.wav")),
        "--truth",
        s(&scene),
        "--align",
        "oracle",
        "--max-iters",
        "12",
        "--warmup-iters",
        "4",
        "--out",
        s(&out),
    ]);
    for name in [
        "estimate_s0.wav",
        "estimate_s1.wav",
        "trace.csv",
        "permutation.csv",
        "metrics.csv",
        "manifest.toml",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let rows = objective_rows(&read(&out.join("trace.csv")));
    assert_eq!(rows.iter().filter(|r| r.0 == "warmup").count(), 4);
    let joint: Vec<f64> = rows
        .iter()
        .skip_while(|r| r.0 == "warmup")
        .map(|r| r.1)
        .collect();
    assert!(joint.len() >= 2);
    assert!(
        joint.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)),
        "{joint:?}"
    );
    assert_eq!(read(&out.join("metrics.csv")).lines().count(), 3);
    assert_eq!(read(&out.join("permutation.csv")).lines().count(), 130);
}

#[test]
fn corr_alignment_without_truth_omits_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &[]);
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--mixture",
        s(&scene.join("mixture.wav")),
        "--align",
        "corr",
        "--max-iters",
        "3",
        "--warmup-iters",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(out.join("estimate_s1.wav").exists());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn oracle_init_stops_at_the_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(
        dir.path(),
        &["--rir-model", "hop-aligned", "--samples", "6400"],
    );
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--mixture",
        s(&scene.join("mixture.wav")),
        "--truth",
        s(&scene),
        "--init",
        "oracle",
        "--out",
        s(&out),
    ]);
    let rows = objective_rows(&read(&out.join("trace.csv")));
    assert!(rows.len() <= 3, "{} iterations", rows.len() - 1);
    for c in 0..2 {
        let est = read_wav(out.join(format!("estimate_s{c}.wav"))).unwrap();
        let truth = read_wav(scene.join(format!("image_s{c}_m0.wav"))).unwrap();
        let v = si_sdr(&est.channels[0], &truth.channels[0]).unwrap();
        assert!(v >= 20.0, "speaker {c}: {v} dB");
    }
}

#[test]
fn loss_surface_grid_size() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &["--samples", "2000"]);
    let out = dir.path().join("surf");
    ok(&[
        "loss-surface",
        "--scene",
        s(&scene),
        "--grid",
        "21",
        "--out",
        s(&out),
    ]);
    let csv = read(&out.join("surface.csv"));
    assert_eq!(csv.lines().next(), Some("mu,nu,loss"));
    assert_eq!(csv.lines().count(), 1 + 441);
}

#[test]
fn wiener_length_from_subband_taps() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &[]);
    let out = dir.path().join("w");
    let est = format!(
        "{},{}",
        s(&scene.join("image_s0_m0.wav")),
        s(&scene.join("image_s1_m0.wav"))
    );
    ok(&[
        "wiener",
        "--mixture",
        s(&scene.join("mixture.wav")),
        "--estimates",
        &est,
        "--taps-from-K",
        "13",
        "--out",
        s(&out),
    ]);
    let csv = read(&out.join("iras.csv"));
    assert!(
        csv.lines()
            .skip(1)
            .all(|l| l.split(',').nth(1) == Some("1024")),
        "{csv}"
    );
    let manifest: toml::Table = read(&out.join("manifest.toml")).parse().unwrap();
    assert_eq!(manifest["wiener"]["taps"].as_integer(), Some(1024));
}

#[test]
fn loss_eval_records_variant() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &[]);
    let est = format!(
        "{},{}",
        s(&scene.join("image_s0_m0.wav")),
        s(&scene.join("image_s1_m0.wav"))
    );
    let mut totals = Vec::new();
    for variant in ["eq4", "eq9"] {
        let out = dir.path().join(variant);
        ok(&[
            "loss-eval",
            "--mixture",
            s(&scene.join("mixture.wav")),
            "--estimates",
            &est,
            "--variant",
            variant,
            "--out",
            s(&out),
        ]);
        let csv = read(&out.join("loss.csv"));
        assert!(csv.lines().skip(1).all(|l| l.starts_with(variant)));
        let combined = csv.lines().last().unwrap();
        assert!(combined.starts_with(&format!("{variant},combined,all,")));
        totals.push(combined.rsplit(',').next().unwrap().parse::<f64>().unwrap());
        let manifest: toml::Table = read(&out.join("manifest.toml")).parse().unwrap();
        assert_eq!(manifest["loss-eval"]["variant"].as_str(), Some(variant));
    }
    assert!(totals.iter().all(|t| t.is_finite()));
    assert_ne!(totals[0], totals[1]);
}

#[test]
fn metrics_and_align_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), &[]);
    let est = format!(
        "{},{}",
        s(&scene.join("image_s1_m0.wav")),
        s(&scene.join("image_s0_m0.wav"))
    );
    let m = dir.path().join("m");
    ok(&[
        "metrics",
        "--estimates",
        &est,
        "--truth",
        s(&scene),
        "--out",
        s(&m),
    ]);
    let csv = read(&m.join("metrics.csv"));
    for line in csv.lines().skip(1) {
        let si: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(si > 100.0, "{line}");
    }

    let a = dir.path().join("a");
    ok(&[
        "align",
        "--estimates",
        &est,
        "--method",
        "oracle",
        "--truth",
        s(&scene),
        "--out",
        s(&a),
    ]);
    let perm = read(&a.join("permutation.csv"));
    assert!(perm.lines().skip(1).all(|l| l.ends_with(",1 0")), "{perm}");
    assert!(a.join("aligned_s0.wav").exists());
    assert_eq!(
        code(&[
            "align",
            "--estimates",
            &est,
            "--method",
            "oracle",
            "--out",
            s(&a)
        ]),
        1
    );
}
