use std::path::Path;
use std::process::Command;

use dmaml::harness::config::{load_config, RunConfig};
use dmaml::harness::plot::{curves, emit_plot, render_dat, render_svg};
use dmaml::harness::report::speedup;
use dmaml::harness::{cli, detect_convergence, ema_smooth, summarize, train, RunLog, RunStatus, TrainOptions};
use dmaml::meta::{Algorithm, EpochMetrics};
use dmaml::Error;
use proptest::prelude::*;

const TABLE1: &str = "\
# reference hyperparameters
algorithm = directed-maml
learner = pg
env = cartpole
phi_lo = 5
phi_hi = 15
delta = 0.005
alpha = 0.001
beta = 0.001
gamma = 0.99
m_tasks = 5
k_trajs = 10
";

fn tiny(dir: &Path, label: &str, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::parse(TABLE1).unwrap();
    cfg.meta.m_tasks = 2;
    cfg.meta.k_trajs = 2;
    cfg.meta.delta = 0.002;
    cfg.meta.epochs = epochs;
    cfg.out_dir = dir.to_path_buf();
    cfg.label = label.into();
    cfg
}

fn row(epoch: usize, ret: f64, secs: f64) -> EpochMetrics {
    EpochMetrics {
        epoch,
        eval_return: ret,
        heldout_return: None,
        wall_seconds: secs,
        eval_seconds: 0.0,
        grad_norm_outer: 1.0,
        prestep_grad_norm: None,
        grad_calls: 10,
        hvp_calls: 5,
        rollouts: 100,
    }
}

fn synthetic(alg: Algorithm, returns: &[f64], secs: f64) -> RunLog {
    let mut cfg = RunConfig::default();
    cfg.meta.algorithm = alg;
    let mut log = RunLog::new(&cfg);
    for (i, &r) in returns.iter().enumerate() {
        log.push(row(i, r, secs)).unwrap();
    }
    log.total_wall_seconds = Some(secs * returns.len() as f64);
    log
}

fn args(v: &[&str]) -> Vec<String> {
    std::iter::once("dmaml").chain(v.iter().copied()).map(String::from).collect()
}

#[test]
fn reference_defaults_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t1.cfg");
    std::fs::write(&path, TABLE1).unwrap();
    let a = load_config(Some(&path), &[]).unwrap();
    let m = &a.meta;
    assert_eq!((m.delta, m.alpha, m.beta, m.gamma, m.m_tasks, m.k_trajs), (0.005, 0.001, 0.001, 0.99, 5, 10));
    assert_eq!(m.horizon, 200);
    let b = load_config(Some(&path), &[]).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = load_config(Some(&path), &[("seed".into(), "2".into())]).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
    let d = load_config(Some(&path), &[("label".into(), "other".into())]).unwrap();
    assert_eq!(a.fingerprint(), d.fingerprint());
    assert_eq!(RunConfig::parse(&a.to_file_string()).unwrap(), a);
}

#[test]
fn invalid_configs_name_the_field() {
    let over = |pairs: &[(&str, &str)]| {
        let p: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        RunConfig::from_sources(Some(TABLE1), &p)
    };
    let e = over(&[("algorithm", "directed-maml"), ("delta", "0.01"), ("beta", "0.001")]).unwrap_err();
    assert!(matches!(e, Error::Validation { ref field, .. } if field == "delta"), "{e}");
    assert!(over(&[("algorithm", "maml"), ("delta", "0.01")]).is_ok());
    let e = over(&[("gamma", "1.5")]).unwrap_err();
    assert!(matches!(e, Error::Validation { ref field, .. } if field == "gamma"));
    let e = over(&[("m_tasks", "zero")]).unwrap_err();
    assert!(matches!(e, Error::Validation { ref field, .. } if field == "m_tasks"));
    assert!(matches!(RunConfig::parse("alpha 0.1\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(RunConfig::parse("# c\nalpha = 1\nalpha = 2\n"), Err(Error::Parse { line: 3, .. })));
    assert!(RunConfig::parse("colour = red\n").is_err());
}

proptest! {
    #[test]
    fn prestep_validation_is_total(beta in 1e-4f64..0.1, ratio in 0.0f64..3.0, m in 1usize..8) {
        let delta = ratio * beta * m as f64;
        let mut cfg = RunConfig::default();
        cfg.meta.beta = beta;
        cfg.meta.delta = delta;
        cfg.meta.m_tasks = m;
        let ok = cfg.validate().is_ok();
        prop_assert_eq!(ok, delta <= beta * m as f64);
        prop_assert_eq!(dmaml::meta::Trainer::new(cfg.meta.clone()).is_ok(), ok);
    }

    #[test]
    fn ema_stays_within_running_range(xs in prop::collection::vec(-1e3f64..1e3, 1..80), f in 0.0f64..0.999) {
        let s = ema_smooth(&xs, f);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in xs.iter().zip(&s) {
            lo = lo.min(*x);
            hi = hi.max(*x);
            prop_assert!(*y >= lo - 1e-9 && *y <= hi + 1e-9);
        }
    }

    #[test]
    fn convergence_is_monotone_in_threshold(xs in prop::collection::vec(0.0f64..200.0, 0..80), t1 in 0.0f64..200.0, dt in 0.0f64..50.0, w in 1usize..10) {
        let lo = detect_convergence(&xs, t1, w);
        let hi = detect_convergence(&xs, t1 + dt, w);
        if let Some(h) = hi {
            prop_assert!(lo.is_some_and(|l| l <= h));
        }
    }

    #[test]
    fn speedups_are_reciprocal(a in 1e-3f64..1e5, b in 1e-3f64..1e5) {
        prop_assert!((speedup(a, b) * speedup(b, a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn runlog_roundtrip_is_byte_identical(
        rets in prop::collection::vec(-1e6f64..1e6, 1..20),
        secs in 1e-6f64..10.0,
        conv in prop::option::of(0usize..20),
    ) {
        let mut log = synthetic(Algorithm::Fomaml, &rets, secs);
        log.rows[0].heldout_return = Some(rets[0] / 3.0);
        log.rows[0].prestep_grad_norm = Some(secs.sqrt());
        log.convergence_epoch = conv;
        log.status = RunStatus::Diverged(rets.len());
        let text = log.serialize();
        let back = RunLog::parse(&text).unwrap();
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(&back.rows[0].eval_return.to_bits(), &log.rows[0].eval_return.to_bits());
    }
}

#[test]
fn ramp_crosses_at_150() {
    let ramp: Vec<f64> = (0..300).map(|i| 174.0 + (i as f64 - 149.0).max(0.0)).collect();
    assert_eq!(detect_convergence(&ramp, 175.0, 20), Some(150));
}

#[test]
fn summary_of_constant_timings() {
    let log = synthetic(Algorithm::Maml, &[1.0, 2.0, 3.0, 4.0], 2.0);
    let r = summarize(&[log], 175.0, 20).unwrap();
    let a = r.algorithm("maml").unwrap();
    assert_eq!((a.per_epoch_seconds.mean, a.per_epoch_seconds.std), (2.0, 0.0));
    assert_eq!(a.missing_convergence, 1);
    assert!(r.to_table().contains("maml"));
}

#[test]
fn report_speedups_and_table() {
    let fast = synthetic(Algorithm::DirectedMaml, &[200.0; 30], 1.0);
    let slow = synthetic(Algorithm::Maml, &[&[0.0; 10][..], &[200.0; 60][..]].concat(), 2.0);
    let r = summarize(&[slow, fast], 175.0, 20).unwrap();
    let s = r.speedup("maml", "directed-maml").unwrap();
    assert!((s * r.speedup("directed-maml", "maml").unwrap() - 1.0).abs() < 1e-9);
    assert!(s > 1.0);
    let table = r.to_table();
    assert!(table.contains("speedup maml / directed-maml"));
    assert!(table.contains("to convergence (h)"));
}

#[test]
fn plot_structure() {
    let dir = tempfile::tempdir().unwrap();
    let run = synthetic(Algorithm::Maml, &(0..10).map(f64::from).collect::<Vec<_>>(), 1.0);
    let (svg, dat) = emit_plot(std::slice::from_ref(&run), 0.9, dir.path()).unwrap();
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg_text.matches("<polyline").count(), 1);
    let pts = svg_text.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(pts.split_whitespace().count(), 10);
    let dat_text = std::fs::read_to_string(&dat).unwrap();
    assert_eq!(dat_text.lines().filter(|l| !l.starts_with('#')).count(), 10);
    let c = curves(&[run.clone()], 0.9).unwrap();
    assert_eq!(render_svg(&c), svg_text);
    assert_eq!(render_dat(&c), dat_text);
    emit_plot(&[run], 0.9, dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(&svg).unwrap(), svg_text);
    let mut other = RunConfig::default();
    other.meta.family = dmaml::envs::Family::Intersection;
    other.meta.horizon = 100;
    let mixed = [synthetic(Algorithm::Maml, &[1.0], 1.0), RunLog::new(&other)];
    assert!(matches!(curves(&mixed, 0.9), Err(Error::MixedFamilies)));
}

#[test]
fn train_writes_logs_and_accounts_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "one", 1);
    let log = train(&cfg, &TrainOptions::default()).unwrap();
    assert_eq!(log.rows.len(), 1);
    assert_eq!(log.status, RunStatus::Complete);
    let cfg = tiny(dir.path(), "three", 3);
    let log = train(&cfg, &TrainOptions::default()).unwrap();
    let per_epoch: f64 = log.rows.iter().map(|r| r.wall_seconds + r.eval_seconds).sum();
    assert!(log.rows.iter().all(|r| r.wall_seconds > 0.0));
    assert!(per_epoch <= log.total_wall_seconds.unwrap());
    let back = RunLog::read(&cfg.runlog_path()).unwrap();
    assert_eq!(back, log);
    assert!(cfg.checkpoint_path().exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = tiny(&dir.path().join("a"), "r", 4);
    train(&full, &TrainOptions::default()).unwrap();
    let part = tiny(&dir.path().join("b"), "r", 4);
    let first = train(
        &part,
        &TrainOptions {
            stop_after: Some(2),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!((first.rows.len(), first.status), (2, RunStatus::Interrupted));
    train(
        &part,
        &TrainOptions {
            resume: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let a = std::fs::read(full.runlog_path()).unwrap();
    let b = std::fs::read(part.runlog_path()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cli_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cartpole.cfg");
    std::fs::write(&cfg_path, TABLE1).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cfg_path.to_str().unwrap(), out.to_str().unwrap());
    let small = ["--m_tasks", "2", "--k_trajs", "2", "--delta", "0.002", "--out_dir", o];

    let mut a = vec!["train", "--config", c, "--seed", "1", "--epochs", "2", "--label", "t"];
    a.extend(small);
    assert_eq!(cli::run(args(&a)), 0);
    assert!(out.join("t.runlog").exists() && out.join("t.ckpt").exists());

    let mut a = vec!["eval", "--config", c, "--seed", "1", "--epochs", "2", "--label", "t", "--episodes", "2"];
    a.extend(small);
    assert_eq!(cli::run(args(&a)), 0);

    let mut a = vec!["sweep", "--config", c, "--seeds", "1,2,3,4,5", "--epochs", "1", "--label", "s"];
    a.extend(small);
    assert_eq!(cli::run(args(&a)), 0);
    let logs: Vec<RunLog> = (1..=5)
        .map(|s| RunLog::read(&out.join(format!("s-seed{s}.runlog"))).unwrap())
        .collect();
    let mut fps: Vec<&str> = logs.iter().map(|l| l.fingerprint.as_str()).collect();
    fps.sort_unstable();
    fps.dedup();
    assert_eq!(fps.len(), 5);
    for (i, l) in logs.iter().enumerate() {
        assert_eq!(l.config_value("seed"), Some((i + 1).to_string().as_str()));
    }

    let paths: Vec<String> = (1..=5).map(|s| out.join(format!("s-seed{s}.runlog")).display().to_string()).collect();
    let mut a = vec!["compare"];
    a.extend(paths.iter().map(String::as_str));
    assert_eq!(cli::run(args(&a)), 0);
    assert!(out.join("compare.txt").exists());
    let mut a = vec!["plot"];
    a.extend(paths.iter().map(String::as_str));
    assert_eq!(cli::run(args(&a)), 0);
    assert!(out.join("curves.svg").exists() && out.join("curves.dat").exists());

    assert_eq!(cli::run(args(&["audit", "--seed", "2"])), 0);
    assert_ne!(cli::run(args(&["train", "--config", c, "--delta", "0.01", "--beta", "0.001"])), 0);
    assert_ne!(cli::run(args(&["frobnicate"])), 0);
    assert_ne!(cli::run(args(&["compare", "/nonexistent.runlog"])), 0);
}

#[test]
fn binary_prints_usage_on_unknown_subcommand() {
    let out = Command::new(env!("CARGO_BIN_EXE_dmaml")).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}
