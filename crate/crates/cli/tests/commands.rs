use std::io::Read;
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use proptest::prelude::*;
use viscomp_cli::commands::*;
use viscomp_cli::features::{extract, ExtractOptions, FeatureRow, FeatureTable};
use viscomp_cli::manifest::{DatasetManifest, ManifestRow};
use viscomp_cli::{Cli, CliError};
use viscomp_core::btrank::score_pipeline;
use viscomp_core::RgbImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_viscomp"))
}

fn write_images(dir: &Path, imgs: &[(String, RgbImage)]) -> DatasetManifest {
    let rows = imgs
        .iter()
        .map(|(id, img)| {
            img.save_png(dir.join(format!("{id}.png"))).unwrap();
            ManifestRow::new(id.clone(), format!("{id}.png"))
        })
        .collect();
    let m = DatasetManifest::new(dir, rows).unwrap();
    m.save(dir.join("manifest.csv")).unwrap();
    m
}

fn noisy(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    RgbImage::from_fn(h, w, |_, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        [(s >> 8) as u8, (s >> 16) as u8, (s >> 24) as u8]
    })
    .unwrap()
}

#[test]
fn constant_images_have_zero_msg() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_images(
        dir.path(),
        &[
            ("black".into(), RgbImage::filled(12, 9, [0, 0, 0]).unwrap()),
            ("teal".into(), RgbImage::filled(5, 30, [0, 128, 128]).unwrap()),
        ],
    );
    let (t, _) = extract(&m, &ExtractOptions::default()).unwrap();
    let msg = t.column_index("msg").unwrap();
    assert!(t.rows.iter().all(|r| r.values[msg] == 0.0));
    let muc = t.column_index("muc_b7").unwrap();
    assert!(t.rows.iter().all(|r| (r.values[muc] - 1.0).abs() < 1e-12));
}

#[test]
fn job_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let imgs: Vec<_> = (0..12).map(|i| (format!("n{i}"), noisy(i, 20 + i as usize, 33))).collect();
    write_images(dir.path(), &imgs);
    let manifest = dir.path().join("manifest.csv");
    let run = |jobs: &str, out: &str| {
        let st = bin()
            .args(["extract", "--with-baselines", "--bits", "4,7", "--jobs", jobs, "--manifest"])
            .arg(&manifest)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let one = run("1", "j1.csv");
    let eight = run("8", "j8.csv");
    assert_eq!(one, eight);
    let text = String::from_utf8(one).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "image_id,msg,msg_gray,muc_b4,muc_b7,colorfulness_b4,colorfulness_b7,edge_density,patch_symmetry"
    );
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, (0..12).map(|i| format!("n{i}")).collect::<Vec<_>>());
}

#[test]
fn bad_image_fails_unless_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = write_images(dir.path(), &[("ok".into(), noisy(1, 8, 8))]);
    std::fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
    m.rows.push(ManifestRow::new("broken", "broken.png"));
    m.save(dir.path().join("manifest.csv")).unwrap();
    let manifest = dir.path().join("manifest.csv");

    let out = bin().arg("extract").arg("--manifest").arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken"));

    let out = bin().args(["extract", "--skip-bad", "--manifest"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = FeatureTable::from_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped broken"));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "image_id,image_path\na,a.png\na,b.png\n").unwrap();
    let out = bin().arg("extract").arg("--manifest").arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate image_id a"));

    let out = bin().args(["extract", "--bits", "9", "--manifest"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["bt", "--in"]).arg(dir.path().join("nope.jsonl")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_rejects_bad_counts() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["-3", "2.5", "many"] {
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("image_id,image_path,num_seg\na,a.png,{bad}\n")).unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(CliError::Validation(_))), "{bad}");
    }
}

fn dataset_with(complexity: impl Fn(f64) -> f64) -> (DatasetManifest, FeatureTable) {
    let n = 30;
    let mut rows = Vec::new();
    let mut frows = Vec::new();
    for i in 0..n {
        let msg = ((i * 7919) % 31) as f64 / 7.0;
        let mut r = ManifestRow::new(format!("x{i}"), format!("x{i}.png"));
        r.complexity = Some(complexity(msg));
        r.num_seg = Some((i % 7) as u64);
        frows.push(FeatureRow {
            image_id: format!("x{i}"),
            values: vec![msg, (i % 5) as f64],
        });
        rows.push(r);
    }
    (
        DatasetManifest::new("/", rows).unwrap(),
        FeatureTable {
            columns: vec!["msg".into(), "muc_b7".into()],
            rows: frows,
        },
    )
}

#[test]
fn eval_recovers_a_feature_that_is_the_target() {
    let (m, f) = dataset_with(|msg| msg);
    let data = Dataset::new(&m, &f).unwrap();
    let out = cmd_eval(&data, &parse_model("msg"), "complexity", Some(10), 3).unwrap();
    assert_eq!(out.report.mean_spearman, 1.0);
    assert_eq!(out.report.repetitions, 10);
    let default = cmd_eval(&data, &parse_model("msg"), "complexity", None, 3).unwrap();
    assert_eq!(default.report.repetitions, 50);
}

#[test]
fn eval_lists_missing_columns() {
    let (m, f) = dataset_with(|msg| msg);
    let data = Dataset::new(&m, &f).unwrap();
    let err = cmd_eval(&data, &parse_model("msg,sqrt_num_seg,sqrt_num_class,edge_density"), "complexity", None, 0).unwrap_err();
    // num_class is a known manifest column but empty in every row.
    assert_eq!(err, CliError::Validation("missing columns: edge_density".into()));
    let err = cmd_eval(&data, &parse_model("sqrt_num_seg,sqrt_num_class"), "complexity", None, 0).unwrap_err();
    assert!(err.to_string().contains("num_class is empty"), "{err}");
    // `muc` resolves to the single extracted precision.
    assert!(cmd_eval(&data, &parse_model("msg,muc"), "complexity", Some(2), 0).is_ok());
}

#[test]
fn count_columns_are_square_rooted() {
    let (m, f) = dataset_with(|msg| msg);
    let data = Dataset::new(&m, &f).unwrap();
    let raw = m.column("num_seg").unwrap();
    let got = data.column("num_seg").unwrap();
    assert_eq!(got, data.column("sqrt_num_seg").unwrap());
    for (g, r) in got.iter().zip(raw) {
        assert_eq!(*g, r.sqrt());
    }
}

#[test]
fn permtest_defaults_to_a_thousand_permutations() {
    let cli = Cli::parse_from(["viscomp", "permtest", "--manifest", "m", "--features", "f", "--x", "a", "--y", "b"]);
    match cli.command {
        viscomp_cli::Command::Permtest(a) => {
            assert_eq!(a.n, 1000);
            assert_eq!(a.data.target, "complexity");
        }
        other => panic!("{other:?}"),
    }
    let (m, f) = dataset_with(|msg| msg);
    let out = cmd_permtest(&Dataset::new(&m, &f).unwrap(), "complexity", "msg", "muc_b7", 1000, 0).unwrap();
    assert_eq!(out.result.n_perm, 1000);
    assert!(out.result.p_value < 0.05);
}

#[test]
fn ks_reads_a_column_from_two_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "id,surprise\na,1\nb,2\nc,3\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "surprise,id\n10,x\n20,y\n").unwrap();
    let out = bin()
        .args(["ks", "--column", "surprise", "--a"])
        .arg(dir.path().join("a.csv"))
        .arg("--b")
        .arg(dir.path().join("b.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["d"], 1.0);
}

fn sample_records() -> Vec<viscomp_core::ComparisonRecord> {
    let mut recs = Vec::new();
    let ids = ["a", "b", "c", "d"];
    let mut k = 0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            for r in 0..3 {
                k += 1;
                let winner = if (k % 4 == 0) == (i < j) { ids[j] } else { ids[i] };
                recs.push(viscomp_core::ComparisonRecord {
                    item_a: ids[i].into(),
                    item_b: ids[j].into(),
                    winner: winner.into(),
                    rater: format!("r{r}"),
                    session_id: format!("s{r}"),
                    timestamp: chrono::DateTime::from_timestamp(k, 0).unwrap(),
                    is_attention_check: false,
                    task: Default::default(),
                    excluded: false,
                    trial_index: None,
                    attention: None,
                });
            }
        }
    }
    recs
}

#[test]
fn bt_command_reproduces_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let recs = sample_records();
    let path = dir.path().join("c.jsonl");
    let text: String = recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("bt").arg("--in").arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let want = score_pipeline(&recs).unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut n = 0;
    for line in csv.lines().skip(1) {
        let (id, v) = line.split_once(',').unwrap();
        assert_eq!(v.parse::<f64>().unwrap(), want.get(id).unwrap());
        n += 1;
    }
    assert_eq!(n, 4);
}

#[test]
fn bt_ignores_excluded_records() {
    let mut recs = sample_records();
    let base = cmd_bt(&recs).unwrap();
    let mut bogus = recs[0].clone();
    bogus.winner = bogus.item_b.clone();
    bogus.excluded = true;
    for _ in 0..50 {
        recs.push(bogus.clone());
    }
    assert_eq!(cmd_bt(&recs).unwrap(), base);
}

/// Counts TCP connections on a local port.
fn connection_counter() -> (u16, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    std::thread::spawn(move || {
        for mut s in listener.incoming().flatten() {
            h.fetch_add(1, Ordering::SeqCst);
            let mut buf = [0u8; 1024];
            let _ = s.set_read_timeout(Some(Duration::from_millis(100)));
            let _ = s.read(&mut buf);
        }
    });
    (port, hits)
}

#[test]
fn stub_provider_never_touches_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let imgs: Vec<_> = (0..3).map(|i| (format!("s{i}"), noisy(i + 50, 10, 10))).collect();
    write_images(dir.path(), &imgs);
    let (port, hits) = connection_counter();
    let proxy = format!("http://127.0.0.1:{port}");
    let out_file = dir.path().join("surprise.jsonl");
    let out = bin()
        .args(["surprise", "--provider", "stub", "--endpoint", &proxy, "--manifest"])
        .arg(dir.path().join("manifest.csv"))
        .arg("--out")
        .arg(&out_file)
        .env("HTTP_PROXY", &proxy)
        .env("HTTPS_PROXY", &proxy)
        .env("ALL_PROXY", &proxy)
        .env("VISCOMP_API_KEY", "sk-never-sent")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    let log = std::fs::read_to_string(&out_file).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(!log.contains("sk-never-sent"));
    let ids: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["image_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["s0", "s1", "s2"]);

    // A rerun finds everything already rated.
    let again = bin()
        .args(["surprise", "--manifest"])
        .arg(dir.path().join("manifest.csv"))
        .arg("--out")
        .arg(&out_file)
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&again.stderr).contains("scored 0, already present 3"));
}

#[test]
fn http_provider_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &[("a".into(), noisy(3, 4, 4))]);
    let out = bin()
        .args(["surprise", "--provider", "http", "--manifest"])
        .arg(dir.path().join("manifest.csv"))
        .arg("--out")
        .arg(dir.path().join("o.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_rejects_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "corpus = [\"a\", \"b\"]\ntarget_total_comparisons = 5\nseed = 1\n").unwrap();
    let out = bin()
        .args(["serve", "--port", "0", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn opt_real() -> impl Strategy<Value = Option<f64>> {
    proptest::option::of(prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3..1e3f64])
}

fn id() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_ ,\"-]{1,12}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip(
        rows in proptest::collection::vec(
            (id(), "[a-z/ ,.]{1,16}", opt_real(), proptest::option::of(any::<u64>()), proptest::option::of(0u64..1000), opt_real()),
            0..12,
        )
    ) {
        let mut seen = std::collections::HashSet::new();
        let rows: Vec<ManifestRow> = rows
            .into_iter()
            .filter(|r| seen.insert(r.0.clone()))
            .map(|(image_id, image_path, complexity, num_seg, num_class, surprise)| ManifestRow {
                image_id, image_path, complexity, num_seg, num_class, surprise,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DatasetManifest::new(dir.path(), rows).unwrap();
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn feature_table_round_trip(
        cols in proptest::collection::vec("[a-z_0-9]{1,10}", 1..6),
        rows in proptest::collection::vec((id(), proptest::collection::vec(any::<f64>(), 6)), 0..10),
    ) {
        let t = FeatureTable {
            columns: cols.clone(),
            rows: rows
                .into_iter()
                .map(|(image_id, v)| FeatureRow {
                    image_id,
                    values: v.into_iter().take(cols.len()).map(|x| if x.is_finite() { x } else { 0.5 }).collect(),
                })
                .collect(),
        };
        let back = FeatureTable::from_csv(&t.to_csv()).unwrap();
        prop_assert_eq!(back, t);
    }
}
