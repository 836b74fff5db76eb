use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phlink::io::{parse_fit, parse_report};
use phlink::{simulate_trace, BitSequence, PhTrace};
use phlink_cli::commands::{self, format_sweep, parse_sweep, transmit_schedule, DetectOptions, FigureKind};
use phlink_cli::config::{random_bits, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const FIG4_BITS: &str = "10011000101011101101";
const EQ5_BITS: &str = "10011000101011101101011110100110010100100100111011011101110001001011010010000000";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn phlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phlink")).args(args).env_remove("PHLINK_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// The Fig. 4 configuration with some lines replaced.
fn fig4_with(dir: &Path, replacements: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(configs().join("fig4.toml")).unwrap();
    for (from, to) in replacements {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    write_config(dir, "run.toml", &text)
}

#[test]
fn simulate_then_detect_recovers_fig4_bits() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("fig4.toml");
    let sim = phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(stdout(&sim).trim(), FIG4_BITS);
    // 20 one-minute symbols plus 30 min of adaptation at 1 Hz, both ends included
    let trace = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 1200 + 1800 + 1);
    assert_eq!(fs::read_to_string(tmp.path().join("bits.txt")).unwrap().trim(), FIG4_BITS);

    let det = phlink(&["detect", "--trace", p(&tmp.path().join("trace.csv")), "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert!(det.status.success(), "{}", String::from_utf8_lossy(&det.stderr));
    assert_eq!(stdout(&det).trim(), FIG4_BITS);
    let report = parse_report(&fs::read_to_string(tmp.path().join("report.txt")).unwrap()).unwrap();
    assert_eq!(report.bits.to_string(), FIG4_BITS);
}

#[test]
fn empty_bits_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = phlink(&["simulate", "--config", p(&configs().join("fig4.toml")), "--bits", "", "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("eq5.toml");
    for dir in ["a", "b"] {
        let out = phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(&tmp.path().join(dir))]);
        assert!(out.status.success());
    }
    for file in ["trace.csv", "schedule.csv", "bits.txt"] {
        assert_eq!(fs::read(tmp.path().join("a").join(file)).unwrap(), fs::read(tmp.path().join("b").join(file)).unwrap());
    }
    let other = phlink(&["simulate", "--config", p(&cfg), "--noise-seed", "6", "--out-dir", p(&tmp.path().join("c"))]);
    assert!(other.status.success());
    assert_ne!(fs::read(tmp.path().join("a/trace.csv")).unwrap(), fs::read(tmp.path().join("c/trace.csv")).unwrap());
}

#[test]
fn truncated_trace_exits_with_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("fig4.toml");
    assert!(phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]).status.success());
    let full = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let short: Vec<&str> = full.lines().take(2400).collect();
    let short_path = tmp.path().join("short.csv");
    fs::write(&short_path, short.join("\n") + "\n").unwrap();
    let out = phlink(&["detect", "--trace", p(&short_path), "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window overrun"));
}

#[test]
fn dark_only_trace_exits_with_sync_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("fig4.toml");
    let zeros = "0".repeat(20);
    assert!(phlink(&["simulate", "--config", p(&cfg), "--bits", &zeros, "--out-dir", p(tmp.path())]).status.success());
    let out = phlink(&["detect", "--trace", p(&tmp.path().join("trace.csv")), "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrated_detection_of_an_all_zero_transmission() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("fig4.toml");
    let calib = tmp.path().join("calib");
    assert!(phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(&calib)]).status.success());
    assert!(phlink(&["detect", "--trace", p(&calib.join("trace.csv")), "--config", p(&cfg), "--out-dir", p(&calib)])
        .status
        .success());
    let zeros = "0".repeat(20);
    assert!(phlink(&["simulate", "--config", p(&cfg), "--bits", &zeros, "--out-dir", p(tmp.path())]).status.success());
    let out = phlink(&[
        "detect",
        "--trace",
        p(&tmp.path().join("trace.csv")),
        "--config",
        p(&cfg),
        "--calibration",
        p(&calib.join("report.txt")),
        "--sync-offset",
        "1800",
        "--out-dir",
        p(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), zeros);
}

/// One long light/dark cycle where every parameter is identifiable.
fn long_symbol_config(dir: &Path, sigma: f64) -> PathBuf {
    fig4_with(
        dir,
        &[
            ("bits = \"10011000101011101101\"", "bits = \"1\""),
            ("dark_adaptation_s = 1800.0", "dark_adaptation_s = 0.0"),
            ("symbol_duration_s = 60.0", "symbol_duration_s = 6600.0"),
            ("duty_fraction = 0.25", "duty_fraction = 0.5"),
            ("sigma_mol_per_l = 0.0", &format!("sigma_mol_per_l = {sigma:e}")),
        ],
    )
}

#[test]
fn fit_recovers_noiseless_self_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = long_symbol_config(tmp.path(), 0.0);
    assert!(phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]).status.success());
    let out = phlink(&[
        "fit",
        "--trace",
        p(&tmp.path().join("trace.csv")),
        "--schedule",
        p(&tmp.path().join("schedule.csv")),
        "--out-dir",
        p(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = parse_fit(&fs::read_to_string(tmp.path().join("fit.txt")).unwrap()).unwrap();
    assert!(result.converged);
    assert!(result.rss < 1e-12, "{}", result.rss);
    assert!((result.params.tau_light - 508.8).abs() / 508.8 < 1e-3);
}

#[test]
fn fit_on_noisy_trace_converges_with_positive_rss() {
    let tmp = TempDir::new().unwrap();
    let cfg = long_symbol_config(tmp.path(), 5e-8);
    assert!(phlink(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]).status.success());
    let out = phlink(&[
        "fit",
        "--trace",
        p(&tmp.path().join("trace.csv")),
        "--schedule",
        p(&tmp.path().join("schedule.csv")),
        "--config",
        p(&cfg),
        "--out-dir",
        p(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = parse_fit(&stdout(&out)).unwrap();
    assert!(result.converged && result.rss > 0.0);
}

#[test]
fn fit_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dark = tmp.path().join("dark");
    let cfg = configs().join("fig4.toml");
    let zeros = "0".repeat(5);
    assert!(phlink(&["simulate", "--config", p(&cfg), "--bits", &zeros, "--out-dir", p(&dark)]).status.success());
    let out = phlink(&[
        "fit",
        "--trace",
        p(&dark.join("trace.csv")),
        "--schedule",
        p(&dark.join("schedule.csv")),
        "--out-dir",
        p(&dark),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // a one-iteration budget cannot converge; the best effort is still written
    let starved = fig4_with(tmp.path(), &[("[output]", "[fit]\nmax_iters = 1\nn_starts = 2\n\n[output]")]);
    assert!(phlink(&["simulate", "--config", p(&starved), "--out-dir", p(tmp.path())]).status.success());
    let out = phlink(&[
        "fit",
        "--trace",
        p(&tmp.path().join("trace.csv")),
        "--schedule",
        p(&tmp.path().join("schedule.csv")),
        "--config",
        p(&starved),
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!parse_fit(&fs::read_to_string(tmp.path().join("fit.txt")).unwrap()).unwrap().converged);

    let missing = phlink(&["fit", "--trace", "/nonexistent/trace.csv", "--schedule", "/nonexistent/s.csv"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn sweep_is_reproducible_and_clean_without_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("fig4.toml");
    let run = |dir: &str, workers: &str, trials: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_phlink"))
            .args(["sweep", "--config", p(&cfg), "--parameter", "sigma_mol_per_l", "--values", "0,4e-8,1e-7"])
            .args(["--trials", trials, "--master-seed", "9", "--out-dir", p(&tmp.path().join(dir))])
            .env("PHLINK_WORKERS", workers)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(tmp.path().join(dir).join("sweep.csv")).unwrap()
    };
    let a = run("a", "1", "4");
    assert_eq!(a, run("b", "3", "4"));
    assert_eq!(run("c", "1", "1"), run("d", "2", "1"));

    let records = parse_sweep(&a).unwrap();
    assert_eq!(format_sweep(&records), a);
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].bit_errors, 0);
    assert_eq!(records[0].total_bits, 80);
    assert!(records[2].ber > 0.0);
}

#[test]
fn figure_detection_shows_one_negative_peak_per_one() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("eq5.toml")).unwrap().replace("sigma_mol_per_l = 1e-8", "sigma_mol_per_l = 0.0");
    let cfg = write_config(tmp.path(), "eq5.toml", &text);
    let out = phlink(&["figure", "--config", p(&cfg), "--which", "detection", "--out-dir", p(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let data = fs::read_to_string(tmp.path().join("figure.csv")).unwrap();
    let mut rows = data.lines();
    assert_eq!(rows.next().unwrap(), "time_s,state,ph,ph_model,smoothed_ph,delta_ph,threshold,symbol_boundary");
    let (mut peaks, mut below, mut boundaries) = (0, false, 0);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        boundaries += usize::from(f[7] == "1");
        if f[5].is_empty() {
            continue;
        }
        let now = f[5].parse::<f64>().unwrap() < f[6].parse::<f64>().unwrap();
        peaks += usize::from(now && !below);
        below = now;
    }
    let ones = EQ5_BITS.chars().filter(|&c| c == '1').count();
    assert_eq!(ones, 39);
    assert_eq!(peaks, ones);
    assert_eq!(boundaries, 81);

    let symbols = fs::read_to_string(tmp.path().join("symbols.csv")).unwrap();
    assert_eq!(symbols.lines().count(), 81);
    assert!(symbols.lines().skip(1).all(|l| {
        let f: Vec<&str> = l.split(',').collect();
        f[4] == f[5]
    }));
}

#[test]
fn figure_requires_a_kind() {
    let out = phlink(&["figure", "--config", p(&configs().join("fig3.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_shot_figure_rises_then_recovers() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig::load(&configs().join("fig3.toml")).unwrap();
    let out = commands::figure(&cfg, FigureKind::SingleShot, tmp.path()).unwrap();
    let data = fs::read_to_string(out.data_path).unwrap();
    let model: Vec<f64> = data.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    let half = model.len() / 2;
    // pH falls toward the light equilibrium, then climbs back in the dark
    assert!(model[half] < model[0] - 0.02);
    assert!(model[model.len() - 1] > model[half] + 0.02);
    assert!(out.symbols_path.is_none());
}

#[test]
fn random_sequences_round_trip_through_files() {
    let tmp = TempDir::new().unwrap();
    let base = RunConfig::load(&configs().join("fig4.toml")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..50 {
        let len = rng.random_range(1..=200);
        let bits = random_bits(len, rng.random()).unwrap();
        let cfg = RunConfig { bits: Some(bits.to_string()), ..base.clone() };
        let dir = tmp.path().join(i.to_string());
        let sim = commands::simulate(&cfg, &dir).unwrap();
        let report = commands::detect_file(&sim.trace_path, &cfg.receiver(), len, &DetectOptions::default(), &dir.join("report.txt"))
            .unwrap();
        assert_eq!(report.bits, bits, "sequence {i}");
    }
}

#[test]
fn written_files_read_back_to_the_simulated_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig::load(&configs().join("eq5.toml")).unwrap();
    let sim = commands::simulate(&cfg, tmp.path()).unwrap();
    let bits: BitSequence = fs::read_to_string(&sim.bits_path).unwrap().trim().parse().unwrap();
    let sched = transmit_schedule(&cfg, &bits).unwrap();
    assert_eq!(commands::load_schedule(&sim.schedule_path).unwrap(), sched);
    let expected: PhTrace = simulate_trace(&sched, &cfg.params().unwrap(), &cfg.noise(), 1.0).unwrap().trace;
    assert_eq!(commands::load_trace(&sim.trace_path).unwrap(), expected);
}
