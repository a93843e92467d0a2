use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use tempfile::TempDir;

use adamerge_cli::report::{merge_mask, COMPARE_HEADER};
use adamerge_cli::{evaluate, summarize, Cli};
use adamerge_core::{forward_model, Dataset, Method, ModelWeights, RunConfig, ScheduleConfig};

fn bin(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adamerge"));
    c.args(args).env_remove("ADAMERGE_SEED");
    if let Some(s) = env_seed {
        c.env("ADAMERGE_SEED", s);
    }
    c.output().expect("spawn adamerge")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Small model and dataset: d=16, 4 layers, 32 patch tokens, 8 images.
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["synth", "--images", "8", "--tokens", "32", "--dim", "16", "--seed", "3", "--out", &f.p("data")]);
        ok(&[
            "weights", "--dim", "16", "--heads", "2", "--mlp-dim", "32", "--layers", "4", "--classes", "5", "--seed",
            "3", "--out", &f.p("model"),
        ]);
        f
    }

    fn p(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn calibrate(&self, r_max: &str) -> String {
        let out = self.p(&format!("stats{r_max}.json"));
        ok(&[
            "calibrate", "--weights", &self.p("model"), "--dataset", &self.p("data"), "--r-max", r_max, "--out", &out,
        ]);
        out
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn synth_is_byte_identical_and_honours_env_seed() {
    let f = Fixture::new();
    ok(&["synth", "--images", "8", "--tokens", "32", "--dim", "16", "--seed", "3", "--out", &f.p("again")]);
    let env = bin(&["synth", "--images", "8", "--tokens", "32", "--dim", "16", "--out", &f.p("env")], Some("3"));
    assert!(env.status.success());
    for file in ["manifest.json", "tensors.bin"] {
        let a = read(&f.path("data").join(file));
        assert_eq!(a, read(&f.path("again").join(file)));
        assert_eq!(a, read(&f.path("env").join(file)));
    }
    ok(&["synth", "--images", "8", "--tokens", "32", "--dim", "16", "--seed", "4", "--out", &f.p("other")]);
    assert_ne!(read(&f.path("data").join("tensors.bin")), read(&f.path("other").join("tensors.bin")));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(bin(&[], None).status.code(), Some(1));
    assert_eq!(bin(&["run", "--bogus"], None).status.code(), Some(1));
    assert_eq!(bin(&["synth", "--redundancy", "1.5", "--out", &f.p("x")], None).status.code(), Some(1));
    assert_eq!(bin(&["--help"], None).status.code(), Some(0));
    let missing = bin(
        &["run", "--weights", &f.p("nope"), "--dataset", &f.p("data"), "--method", "tome", "--r", "2"],
        None,
    );
    assert_eq!(missing.status.code(), Some(2));
    let no_stats = bin(
        &["run", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--method", "adamerge", "--r", "8"],
        None,
    );
    assert_eq!(no_stats.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_stats.stderr).contains("adamerge calibrate"));
    let vanilla = bin(
        &["run", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--method", "none"],
        None,
    );
    assert_eq!(vanilla.status.code(), Some(0));
}

#[test]
fn run_csv_is_deterministic_and_consistent() {
    let f = Fixture::new();
    let stats = f.calibrate("8");
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "--weights".into(),
            f.p("model"),
            "--dataset".into(),
            f.p("data"),
            "--method".into(),
            "adamerge".into(),
            "--r".into(),
            "8".into(),
            "--stats".into(),
            stats.clone(),
            "--out".into(),
            f.p(out),
            "--summary".into(),
            f.p(&format!("{out}.json")),
        ]
    };
    let a: Vec<String> = args("a.csv");
    let b: Vec<String> = args("b.csv");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(read(&f.path("a.csv")), read(&f.path("b.csv")));
    assert_eq!(read(&f.path("a.csv.json")), read(&f.path("b.csv.json")));

    let text = String::from_utf8(read(&f.path("a.csv"))).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8 * 4);
    for img in rows.chunks(4) {
        for w in img.windows(2) {
            let n0: usize = w[0][2].parse().unwrap();
            let r0: usize = w[0][3].parse().unwrap();
            assert_eq!(w[1][2].parse::<usize>().unwrap(), n0 - r0);
        }
        assert!(img.iter().all(|r| !r[5].is_empty()), "adaptive runs record z");
    }
}

#[test]
fn compare_single_config_and_empty_dataset() {
    let f = Fixture::new();
    let out = ok(&[
        "compare", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--config", "tome:4", "--out-csv",
        &f.p("c.csv"), "--out-svg", &f.p("c.svg"),
    ]);
    assert_eq!(out.lines().count(), 2);
    let csv = String::from_utf8(read(&f.path("c.csv"))).unwrap();
    assert_eq!(csv.lines().next(), Some(COMPARE_HEADER));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().ends_with(",n/a"));
    assert_eq!(String::from_utf8(read(&f.path("c.svg"))).unwrap().matches("<polyline").count(), 1);

    ok(&["synth", "--images", "0", "--tokens", "32", "--dim", "16", "--out", &f.p("empty")]);
    let empty = bin(
        &["compare", "--weights", &f.p("model"), "--dataset", &f.p("empty"), "--config", "tome:4"],
        None,
    );
    assert_eq!(empty.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("empty dataset"));
}

#[test]
fn compare_reruns_are_byte_identical_and_calibrate_inline() {
    let f = Fixture::new();
    for tag in ["a", "b"] {
        ok(&[
            "compare", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--config", "none", "--config",
            "tome:4", "--config", "adamerge:8", "--config", "adp-only:8", "--config", "sw-only:4", "--out-csv",
            &f.p(&format!("{tag}.csv")), "--out-svg", &f.p(&format!("{tag}.svg")),
        ]);
    }
    assert_eq!(read(&f.path("a.csv")), read(&f.path("b.csv")));
    assert_eq!(read(&f.path("a.svg")), read(&f.path("b.svg")));
    let csv = String::from_utf8(read(&f.path("a.csv"))).unwrap();
    let none = csv.lines().nth(1).unwrap();
    assert!(none.starts_with("none,none,0,"));
    assert!(none.contains(",0.0000,0.0000,32.0000,100.0000,"), "{none}");
    let svg = String::from_utf8(read(&f.path("a.svg"))).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 5);
}

#[test]
fn compare_flops_column_matches_flops_meter() {
    let f = Fixture::new();
    ok(&[
        "compare", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--config", "tome:3", "--out-csv",
        &f.p("c.csv"),
    ]);
    let csv = String::from_utf8(read(&f.path("c.csv"))).unwrap();
    let cols: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();

    let weights = ModelWeights::load(&f.path("model")).unwrap();
    let ds = Dataset::load(&f.path("data")).unwrap();
    let cfg = RunConfig::for_method(Method::Tome, ScheduleConfig::fixed(3)).unwrap();
    let outs = evaluate(&weights, &ds, &cfg, None).unwrap();
    let mut total = 0u128;
    for o in &outs {
        total += adamerge_core::trace_flops(&o.trace, &weights.dims, false).total as u128;
    }
    let mean_g = total as f64 / outs.len() as f64 / 1e9;
    assert_eq!(cols[3], format!("{mean_g:.6}"));
    let s = summarize(Method::Tome, 3, &weights.dims, &outs, false);
    assert_eq!(cols[4], format!("{:.4}", s.flops_reduction_pct));
}

#[test]
fn viz_masks_follow_the_ledger() {
    let f = Fixture::new();
    ok(&[
        "viz", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--method", "none", "--out-svg",
        &f.p("none.svg"), "--out-csv", &f.p("none.csv"),
    ]);
    let none = String::from_utf8(read(&f.path("none.csv"))).unwrap();
    assert_eq!(none.lines().count(), 1 + 4 * 32);
    assert!(none.lines().skip(1).all(|l| l.contains(",survived,")));

    ok(&[
        "viz", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--image", "2", "--method", "tome", "--r",
        "5", "--out-svg", &f.p("t.svg"), "--out-csv", &f.p("t.csv"),
    ]);
    let csv = String::from_utf8(read(&f.path("t.csv"))).unwrap();
    let mut merged_per_layer = [0usize; 4];
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[4] == "merged" {
            merged_per_layer[cols[0].parse::<usize>().unwrap()] += 1;
        }
    }
    assert_eq!(merged_per_layer, [5, 10, 15, 20]);

    let weights = ModelWeights::load(&f.path("model")).unwrap();
    let ds = Dataset::load(&f.path("data")).unwrap();
    let cfg = RunConfig::for_method(Method::Tome, ScheduleConfig::fixed(5))
        .unwrap()
        .with_snapshots(true);
    let run = forward_model(&ds.images[2], &weights, &cfg, None).unwrap();
    for (layer, cells) in run.trace.layers.iter().zip(merge_mask(&run.trace)) {
        assert_eq!(cells.iter().filter(|c| !c.merged).count(), layer.n_after());
    }
    let svg = String::from_utf8(read(&f.path("t.svg"))).unwrap();
    assert_eq!(svg.matches(r##"fill="#d62728""##).count(), 50);
}

#[test]
fn viz_rejects_out_of_range_image() {
    let f = Fixture::new();
    let out = bin(
        &[
            "viz", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--image", "99", "--method", "none",
            "--out-svg", &f.p("v.svg"), "--out-csv", &f.p("v.csv"),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_prints_layer_table_and_writes_stats() {
    let f = Fixture::new();
    let out = ok(&[
        "calibrate", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--r-max", "8", "--passes", "3",
        "--out", &f.p("s.json"),
    ]);
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 4);
    let stats = adamerge_core::load_stats(&f.path("s.json")).unwrap();
    assert_eq!(stats.meta.passes, 3);
    assert_eq!(stats.meta.calibration_size, 8);
    let fixed = bin(
        &[
            "calibrate", "--weights", &f.p("model"), "--dataset", &f.p("data"), "--method", "tome", "--r-max", "8",
            "--out", &f.p("t.json"),
        ],
        None,
    );
    assert_eq!(fixed.status.code(), Some(2));
}

#[test]
fn flops_table_matches_reported_reductions() {
    let out = ok(&["flops", "--r", "3,8"]);
    assert!(out.contains("8.7%"));
    assert!(out.contains("23.0%"));
    let pre = ok(&["flops", "--r", "8", "--accounting", "pre-block"]);
    assert!(pre.contains("27.1%"));
}

#[test]
fn in_process_parse_matches_binary_flags() {
    let cli = Cli::try_parse_from(["adamerge", "--threads", "1", "flops", "--r", "4"]).unwrap();
    let mut buf = Vec::new();
    adamerge_cli::execute(cli, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().contains("11.6%"));
    assert!(Cli::try_parse_from(["adamerge", "compare", "--weights", "w", "--dataset", "d"]).is_err());
}
