use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use intersect_cli::*;
use intersect_core::log::TrainingLog;
use intersect_core::{EvalReport, Frame};

const SMALL_NET: &str = "[network]\nhidden = 16\n\n[[network.conv]]\nout_channels = 4\nkernel = 8\nstride = 8\n";

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let out = dir.join(format!("{name}.run"));
    let text = format!(
        "{SMALL_NET}\n[env]\ninitial_vehicle_count = 1\n\n[run]\nout = {:?}\nsteps = 60\neval_episodes = 4\n{body}",
        out.display().to_string()
    );
    fs::write(&path, text).unwrap();
    path
}

fn dqn_config(dir: &Path, name: &str) -> PathBuf {
    write_config(
        dir,
        name,
        "\n[dqn]\nwarmup_steps = 20\nbatch_size = 8\ntarget_sync_period = 10\n",
    )
}

#[test]
fn train_writes_weights_log_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "a.toml");
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    for f in [WEIGHTS_FILE, LOG_FILE, CONFIG_FILE] {
        assert!(s.dir.join(f).is_file(), "{f} missing");
    }
    assert!(!s.log.episodes.is_empty());
    let back = TrainingLog::load(&s.dir.join(LOG_FILE)).unwrap();
    assert_eq!(back.episodes.len(), s.log.episodes.len());
    let snap = fs::read_to_string(s.dir.join(CONFIG_FILE)).unwrap();
    assert!(snap.contains("steps = 60"));
}

#[test]
fn zero_steps_gives_empty_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "z.toml", "");
    let text = fs::read_to_string(&cfg).unwrap().replace("steps = 60", "steps = 0");
    fs::write(&cfg, text).unwrap();
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    assert!(s.log.episodes.is_empty());
    assert!(s.dir.join(WEIGHTS_FILE).is_file());
}

#[test]
fn overrides_take_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "o.toml");
    let out = tmp.path().join("elsewhere");
    let resolved = resolve(
        &cfg,
        &Overrides {
            seed: Some(42),
            out: Some(out.clone()),
        },
    )
    .unwrap();
    assert_eq!(resolved.run.seed, 42);
    assert_eq!(resolved.run.out, out);
}

#[test]
fn ppo_run_writes_value_head_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.toml",
        "algorithm = \"ppo\"\n\n[ppo]\nhorizon = 32\nminibatch_size = 16\nepochs = 2\n",
    );
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    assert!(s.dir.join(VALUE_FILE).is_file());
    let r = cmd_eval(None, &cfg, Some(2), &Overrides::default()).unwrap();
    assert_eq!(r.episodes, 2);
    assert!(TrainingLog::load(&s.dir.join(LOG_FILE)).unwrap().ppo);
}

#[test]
fn eval_writes_report_confusion_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "e.toml");
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    let r = cmd_eval(None, &cfg, None, &Overrides::default()).unwrap();
    assert_eq!(r.episodes, 4);
    assert_eq!(r.success_count + r.collision_count + r.timeout_count, 4);
    assert_eq!(r.success_rate + r.collision_rate + r.timeout_rate, 1.0);
    let back = EvalReport::load(&s.dir.join(REPORT_FILE)).unwrap();
    assert_eq!(back, r);
    let confusion = fs::read_to_string(s.dir.join(CONFUSION_FILE)).unwrap();
    assert_eq!(confusion.lines().count(), 4);
    for i in 0..TRACE_EPISODES {
        for f in ["speed.csv", "actions.csv", "q_values.csv", "positions.csv", "trajectory.svg"] {
            let p = s.dir.join(TRACES_DIR).join(format!("episode_{i}_{f}"));
            assert!(p.is_file(), "{} missing", p.display());
        }
    }
    assert!(!s.dir.join(TRACES_DIR).join("episode_3_speed.csv").exists());

    let one = cmd_eval(None, &cfg, Some(1), &Overrides::default()).unwrap();
    assert_eq!(one.episodes, 1);
    assert_eq!(one.records.len(), 1);
}

#[test]
fn corrupted_weights_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "c.toml");
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    let w = s.dir.join(WEIGHTS_FILE);
    let mut bytes = fs::read(&w).unwrap();
    bytes[0] ^= 0xff;
    let bad = tmp.path().join("bad.nnw");
    fs::write(&bad, bytes).unwrap();
    let err = cmd_eval(Some(&bad), &cfg, Some(1), &Overrides::default()).unwrap_err();
    assert!(format!("{err:#}").contains("bad.nnw"), "{err:#}");
}

#[test]
fn architecture_mismatch_names_both_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "m.toml");
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    let other = tmp.path().join("wide.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("hidden = 16", "hidden = 24");
    fs::write(&other, text).unwrap();
    let err = cmd_eval(Some(&s.dir.join(WEIGHTS_FILE)), &other, Some(1), &Overrides::default()).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("dense(16)") && msg.contains("dense(24)"), "{msg}");
}

#[test]
fn embedding_without_assets_is_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "emb.toml", "\n[reward]\nmodel = \"embedding\"\n");
    let err = cmd_train(&cfg, &Overrides::default()).unwrap_err();
    assert!(format!("{err:#}").contains("assets"), "{err:#}");
    let cfg = write_config(
        tmp.path(),
        "emb2.toml",
        "\n[reward]\nmodel = \"embedding\"\nassets = \"/nonexistent/assets.emb\"\n",
    );
    let err = cmd_train(&cfg, &Overrides::default()).unwrap_err();
    assert!(format!("{err:#}").contains("/nonexistent/assets.emb"), "{err:#}");
}

#[test]
fn train_and_eval_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "d.toml");
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    for out in [&first, &second] {
        let o = Overrides {
            seed: None,
            out: Some(out.clone()),
        };
        cmd_train(&cfg, &o).unwrap();
        cmd_eval(None, &cfg, Some(3), &o).unwrap();
    }
    for f in [LOG_FILE, WEIGHTS_FILE, REPORT_FILE, CONFUSION_FILE] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn compare_tabulates_and_reports_missing_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "r.toml");
    let s = cmd_train(&cfg, &Overrides::default()).unwrap();
    cmd_eval(None, &cfg, Some(2), &Overrides::default()).unwrap();

    let out = tmp.path().join("cmp");
    let rows = cmd_compare(&[s.dir.clone(), s.dir.clone()], &out).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    assert_eq!(rows[0].method, "dqn");
    assert_eq!(rows[0].vehicles, 1);
    let csv = fs::read_to_string(out.join(COMPARISON_FILE)).unwrap();
    assert!(csv.starts_with("method,vehicles,episodes,success_rate,collision_rate,timeout_rate,mean_speed,run"));
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("reward_curves_1hv.svg").is_file());

    let empty = tmp.path().join("empty_run");
    fs::create_dir_all(&empty).unwrap();
    let err = cmd_compare(&[s.dir.clone(), empty.clone()], &out).unwrap_err();
    assert!(err.to_string().contains("empty_run"), "{err}");
    assert!(cmd_compare(std::slice::from_ref(&s.dir), &out).is_err());
}

#[test]
fn export_pgm_writes_readable_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "x.toml", "");
    let out = tmp.path().join("frames");
    let n = cmd_export_pgm(
        &cfg,
        &Overrides {
            seed: Some(3),
            out: Some(out.clone()),
        },
        2,
    )
    .unwrap();
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), n + 1);
    let first = labels.lines().nth(1).unwrap();
    let (name, action) = first.split_once(',').unwrap();
    assert!(action.parse::<usize>().unwrap() < 3);
    let frame = Frame::read_pgm(fs::File::open(out.join(name)).unwrap()).unwrap();
    assert_eq!(frame.pixels().len(), 128 * 64);
}

#[test]
fn binary_reports_bad_key_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[dqn]\nlearning_rat = 0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_intersect"))
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rat"), "{stderr}");
}

#[test]
fn binary_runs_train_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dqn_config(tmp.path(), "b.toml");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_intersect"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    assert!(run(&["train", "--seed", "5"]).contains("trained"));
    assert!(run(&["eval", "--seed", "5", "--episodes", "2"]).contains("episodes 2"));
}
