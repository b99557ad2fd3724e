//! Runs the built binary against a tiny synthetic capture.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orbit_splat::body::{capsule_person, write_pose_file, FramePose};
use orbit_splat::orbit::make_static_orbit;
use orbit_splat::synthetic::{a_pose, gaussian_figure, render_gaussian_figure};
use tempfile::TempDir;

const CONFIG: &str = "[paths]\nframes = \"frames\"\noutput = \"out\"\n\
                      [body]\nposes = \"poses.txt\"\n\
                      [augment]\nupsample_factor = 2\ntarget_size = 32\n\
                      [model]\nsamples = 200\nuv_resolution = 32\nfeature_channels = 4\nhidden_widths = [8]\n\
                      [train]\nepochs = 1\nbatch_size = 2\n";

fn capture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let template = capsule_person::<f32>();
    let pose = a_pose(&template);
    let (samples, figure) = gaussian_figure(&template, 400, 64, 5, None).unwrap();
    fs::create_dir(dir.path().join("frames")).unwrap();
    for (k, c) in make_static_orbit::<f32>(3, 0.0, 2.7, 33.8, 16, 16).unwrap().iter().enumerate() {
        render_gaussian_figure(&template, &samples, &figure, &pose, c, [1.0; 3])
            .unwrap()
            .save_png(&dir.path().join(format!("frames/frame_{:04}.png", k + 1)))
            .unwrap();
    }
    let rows: Vec<FramePose<f32>> = (0..3).map(|index| FramePose { index, theta: pose.theta.clone(), translation: [0.0; 3] }).collect();
    let mut text = Vec::new();
    write_pose_file(&mut text, &rows).unwrap();
    fs::write(dir.path().join("poses.txt"), text).unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbit-splat")).args(args).env("ORBIT_SPLAT_DETERMINISTIC", "1").env("RUST_LOG", "warn").current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_the_commands() {
    let out = run(Path::new("."), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["augment", "fit", "render", "eval", "export"] {
        assert!(text.contains(cmd), "{text}");
    }
}

#[test]
fn invalid_config_exits_2() {
    let dir = capture();
    fs::write(dir.path().join("bad.toml"), "[train]\nepochz = 3\n").unwrap();
    let out = run(dir.path(), &["augment", "-c", "bad.toml"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("epochz"));

    let out = run(dir.path(), &["fit", "-c", "config.toml", "--set", "train.epochs=0"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn full_run_succeeds() {
    let dir = capture();
    for args in [
        &["augment", "-c", "config.toml"][..],
        &["fit", "-c", "config.toml"],
        &["render", "-c", "config.toml", "--orbit", "4"],
        &["render", "-c", "config.toml", "--azimuth", "45,135", "--out", "views"],
        &["export", "-c", "config.toml", "--frame", "2"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    let out = dir.path().join("out");
    assert!(out.join("model/checkpoint.osck").is_file());
    assert_eq!(fs::read_dir(out.join("renders")).unwrap().count(), 4);
    assert!(dir.path().join("views/azimuth_0045.00.png").is_file());
    assert!(out.join("export/frame_0002.ply").is_file());
    assert!(!out.join(".orbit-splat.lock").exists());
}

#[test]
fn diverging_training_exits_3() {
    let dir = capture();
    assert_eq!(code(&run(dir.path(), &["augment", "-c", "config.toml"])), 0);
    let out = run(dir.path(), &["fit", "-c", "config.toml", "--set", "train.learning_rate=1e30"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = capture();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = run(dir.path(), &["augment", "-c", "config.toml", "--set", "paths.output=blocker/out"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}
