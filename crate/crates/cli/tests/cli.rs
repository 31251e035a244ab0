use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use grinlab::data::Split;
use grinlab::unlearn::{write_mask, MaskOrigin, SelectionMask};
use grinlab_cli::config::{load_config, parse_config, sha256_hex, ExperimentConfig};
use grinlab_cli::runner::{run_fingerprint, train_base};
use grinlab_cli::{commands, CliError};
use tempfile::TempDir;

const TINY: &str = r#"
schema_version = 1
seeds = [0, 1, 2]

[corpus]
n_entities = 10
facts_per_entity = 2
forget_fraction = 0.2
seed = 3

[model]
context_len = 32
n_layers = 1
n_heads = 2
d_model = 16
d_ff = 32
seed = 7

[train]
epochs = 2
lr = 1e-2
batch_size = 8
grad_accum = 1

[unlearn]
loss_kind = "po"
origin = "gri"
p_fraction = 0.4
noise_sigma = 0.01
lr = 1e-3
epochs = 1
grad_accum = 2
"#;

const GRID: &str = r#"
[sweep]
p_fraction = [0.2, 0.4, 0.6, 0.8]
noise_sigma = [0.0, 0.01]
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn grinlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_grinlab")).args(args).output().unwrap()
}

#[test]
fn shipped_configs_parse() {
    let default = load_config(&repo_root().join("configs/default.toml")).unwrap();
    assert_eq!(default, ExperimentConfig::default());
    let sweep = load_config(&repo_root().join("configs/sweep.toml")).unwrap();
    assert_eq!(sweep.cells().len(), 32);
    let cells = sweep.cells();
    assert_eq!((cells[0].origin, cells[0].p_fraction, cells[0].noise_sigma), (MaskOrigin::Gri, 0.2, 0.0));
    assert_eq!(cells[1].noise_sigma, 0.001f64.sqrt());
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let missing = write_config(tmp.path(), "missing.toml", &TINY.replace("n_entities = 10\n", ""));
    let out = grinlab(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.n_entities"));

    let typo = write_config(tmp.path(), "typo.toml", &TINY.replace("epochs = 1\n", "epoch = 1\n"));
    let out = grinlab(&["unlearn", "--config", typo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unlearn.epoch"));

    let no_grid = write_config(tmp.path(), "plain.toml", TINY);
    let out = grinlab(&["sweep", "--config", no_grid.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let ckpt = tmp.path().join("absent.ckpt");
    let out = grinlab(&[
        "unlearn",
        "--config",
        no_grid.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = grinlab(&["report", "--out", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run results"));
}

#[test]
fn report_on_empty_dir_is_a_contract_error() {
    let tmp = TempDir::new().unwrap();
    match commands::report(tmp.path()) {
        Err(CliError::Core(grinlab::Error::Contract(_))) => {}
        other => panic!("expected contract error, got {other:?}"),
    }
}

#[test]
fn train_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let a = commands::train(&cfg, Some(&tmp.path().join("a")), None).unwrap();
    let b = commands::train(&cfg, Some(&tmp.path().join("b")), None).unwrap();
    assert_eq!(a.checkpoint_sha256, b.checkpoint_sha256);
    assert_eq!(a, b);
    let again = commands::train(&cfg, Some(&tmp.path().join("a")), None).unwrap();
    assert_eq!(again, a);
    let ckpt = fs::read(tmp.path().join("a/base.ckpt")).unwrap();
    assert_eq!(sha256_hex(&ckpt), a.checkpoint_sha256);
    assert!(tmp.path().join("a/corpus.tsv").is_file());
    assert_eq!(a.metrics.len(), 3);

    let reseeded = commands::train(&cfg, Some(&tmp.path().join("c")), Some(99)).unwrap();
    assert_ne!(reseeded.checkpoint_sha256, a.checkpoint_sha256);
}

#[test]
fn unlearn_labels_and_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    commands::train(&cfg, Some(&out), None).unwrap();
    let ckpt = out.join("base.ckpt");

    let (grin, dir) = commands::unlearn(&cfg, Some(&ckpt), Some(&out), None, None).unwrap();
    assert_eq!(grin.method, "GRIN");
    assert!(grin.isolation_ok);
    for file in ["result.json", "metrics.csv", "density.csv", "mask.txt"] {
        assert!(dir.join(file).is_file(), "{file}");
    }
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(grin.pre.len(), 3);
    assert_eq!(grin.post.len(), 3);

    let full = write_config(
        tmp.path(),
        "full.toml",
        &TINY.replace("origin = \"gri\"", "origin = \"full\"").replace("noise_sigma = 0.01", "noise_sigma = 0.0"),
    );
    let (ft, _) = commands::unlearn(&full, Some(&ckpt), Some(&out), Some(5), None).unwrap();
    assert_eq!(ft.method, "Full FT");
    assert_eq!(ft.config.seed, 5);
    assert_eq!(ft.log.popcount, ft.log.total_count);

    let n = grin.log.total_count;
    let mut bits = vec![false; n];
    bits.iter_mut().step_by(3).for_each(|b| *b = true);
    let mask = SelectionMask {
        bits,
        origin: MaskOrigin::Random,
        p_fraction: 1.0 / 3.0,
        seed: None,
    };
    let mask_path = tmp.path().join("mask.txt");
    fs::write(&mask_path, write_mask(&mask)).unwrap();
    let (ext, _) = commands::unlearn(&cfg, Some(&ckpt), Some(&out), None, Some(&mask_path)).unwrap();
    assert_eq!(ext.config.origin, MaskOrigin::External);
    assert_eq!(ext.log.origin, MaskOrigin::External);
    assert!(ext.method.starts_with("External"));
    assert_eq!(ext.log.popcount, mask.popcount());
    assert_eq!(
        ext.mask_file_sha256.as_deref(),
        Some(sha256_hex(fs::read(&mask_path).unwrap().as_slice()).as_str())
    );
    assert!(ext.isolation_ok);

    let report = commands::report(&out).unwrap();
    assert_eq!(report.n_runs, 3);
    assert_eq!(report.n_cells, 3);
    for name in ["report.md", "density_by_kind.csv", "density_by_layer.csv", "timing.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

fn table_rows(markdown: &str) -> Vec<Vec<String>> {
    markdown
        .lines()
        .skip(2)
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect()
}

#[test]
fn report_ranks_by_forget_then_retain() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    commands::unlearn(&cfg, None, Some(&out), None, None).unwrap();
    let single = commands::report(&out).unwrap();
    let rows = table_rows(&single.markdown);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "GRIN");

    let random = write_config(
        tmp.path(),
        "random.toml",
        &TINY.replace("origin = \"gri\"", "origin = \"random\"").replace("noise_sigma = 0.01", "noise_sigma = 0.0"),
    );
    commands::unlearn(&random, None, Some(&out), None, None).unwrap();
    let both = commands::report(&out).unwrap();
    let header: Vec<String> = table_rows(&format!("\n\n{}", both.markdown.lines().next().unwrap()))[0].clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows = table_rows(&both.markdown);
    assert_eq!(rows.len(), 2);
    let mut methods: Vec<&str> = rows.iter().map(|r| r[col("method")].as_str()).collect();
    methods.sort();
    assert_eq!(methods, ["GRIN", "Random"]);
    let key = |r: &Vec<String>| {
        (
            r[col("forget K-Acc")].parse::<f64>().unwrap(),
            -r[col("retain K-Acc")].parse::<f64>().unwrap(),
        )
    };
    assert!(key(&rows[0]) <= key(&rows[1]));
    for r in &rows {
        assert!(r[col("mask gen (s)")].parse::<f64>().unwrap() >= 0.0);
        assert!(r[col("unlearning (s)")].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn sweep_counts_averages_caches_and_reproduces() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "grid.toml", &format!("{TINY}{GRID}"));
    let out_a = tmp.path().join("a");
    let first = commands::sweep(&cfg_path, None, Some(&out_a), None, 4).unwrap();
    assert_eq!(first.runs.len(), 24);
    assert_eq!(first.cells.len(), 8);
    assert_eq!(first.reused, 0);
    assert!(first.runs.iter().all(|r| r.isolation_ok));

    for cell in &first.cells {
        assert_eq!(cell.seeds, vec![0, 1, 2]);
        let runs: Vec<_> = first
            .runs
            .iter()
            .filter(|r| cell.run_ids.contains(&r.run_id))
            .collect();
        assert_eq!(runs.len(), 3);
        for split in [Split::Forget, Split::Retain, Split::World] {
            let mean = |f: fn(&grinlab::metrics::MetricsReport) -> f64| {
                runs.iter().map(|r| f(r.report(split, true))).sum::<f64>() / 3.0
            };
            let m = cell.split(split);
            assert!((m.k_acc - mean(|r| r.keyword_accuracy)).abs() <= 1e-12);
            assert!((m.one_minus_tr - mean(|r| r.one_minus_truth_ratio)).abs() <= 1e-12);
            assert!((m.kc - mean(|r| r.keyword_confidence)).abs() <= 1e-12);
            assert!((m.rouge - mean(|r| r.rouge_l_recall)).abs() <= 1e-12);
            assert!((m.c_acc - mean(|r| r.cosine_accuracy)).abs() <= 1e-12);
        }
    }

    let comparison = fs::read_to_string(out_a.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = comparison.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 8);
    assert!(lines[1].starts_with("Original,"));
    assert!(!lines[0].contains("seconds"));

    let fraction = fs::read_to_string(out_a.join("fraction_sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = fraction.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for method in ["GRI", "GRIN"] {
        let mut ps: Vec<&str> = rows.iter().filter(|r| r[0] == method).map(|r| r[6]).collect();
        ps.sort();
        assert_eq!(ps, ["0.2", "0.4", "0.6", "0.8"], "{method}");
    }

    let resumed = commands::sweep(&cfg_path, None, Some(&out_a), None, 2).unwrap();
    assert_eq!(resumed.reused, 24);
    assert_eq!(fs::read_to_string(out_a.join("comparison.csv")).unwrap(), comparison);

    let out_b = tmp.path().join("b");
    commands::sweep(&cfg_path, None, Some(&out_b), None, 1).unwrap();
    assert_eq!(fs::read(out_b.join("comparison.csv")).unwrap(), comparison.as_bytes());
    assert_eq!(fs::read(out_b.join("fraction_sweep.csv")).unwrap(), fraction.as_bytes());

    let changed = write_config(tmp.path(), "grid2.toml", &format!("{}{GRID}", TINY.replace("lr = 1e-3", "lr = 2e-3")));
    let other = commands::sweep(&changed, None, Some(&out_a), Some(1), 4).unwrap();
    assert_eq!(other.runs.len(), 8);
    assert_eq!(other.reused, 0);
}

#[test]
fn sweep_records_failures_and_continues() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TINY}[sweep]\norigin = [\"gri\", \"external\"]\n");
    let cfg_path = write_config(tmp.path(), "fail.toml", &text);
    let outcome = commands::sweep(&cfg_path, None, Some(tmp.path()), None, 2).unwrap();
    assert_eq!(outcome.cells.len(), 2);
    assert_eq!(outcome.runs.len(), 3);
    assert!(outcome.cells[0].failures.is_empty());
    assert_eq!(outcome.cells[1].failures.len(), 3);
    assert!(outcome.cells[1].failures[0].contains("mask file"));
    let comparison = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    assert!(comparison.lines().last().unwrap().ends_with(",3"));
}

#[test]
fn fingerprint_changes_with_any_unlearn_field() {
    let cfg = parse_config(TINY).unwrap();
    let (base, _) = train_base(&cfg).unwrap();
    let a = run_fingerprint(&base, &cfg.unlearn, None);
    assert_eq!(a, run_fingerprint(&base, &cfg.unlearn.clone(), None));
    let mut variants = vec![cfg.unlearn.clone(); 6];
    variants[0].lambda = 0.5;
    variants[1].seed = 1;
    variants[2].k_percentile = 10.0;
    variants[3].micro_batch = 2;
    variants[4].weight_decay = 0.0;
    variants[5].beta_npo = 0.2;
    for v in &variants {
        assert_ne!(run_fingerprint(&base, v, None), a);
    }
}
