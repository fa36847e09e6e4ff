use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cigar");

/// Small fast settings shared by every staged run.
const QUICK: [&str; 12] = [
    "--set", "hash_epochs=6", "--set", "hash_batch=512", "--set", "epochs=4", "--set", "batch=512", "--set", "bits=16",
    "--set", "c=20",
];

fn cigar(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("CIGAR_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK).collect()
}

/// 80 users in two taste groups over 60 items, 10 items each.
fn write_log(path: &Path) {
    let mut csv = String::from("user,item,rating,timestamp\n");
    for u in 0..80u64 {
        let base = if u % 2 == 0 { 0 } else { 30 };
        for j in 0..10u64 {
            let item = base + (u * 7 + j * 3) % 30;
            csv.push_str(&format!("{},{},5,{}\n", 1000 + u, item, u * 100 + j));
        }
    }
    fs::write(path, csv).unwrap();
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cigar(&["ingest", "--input", "does-not-exist.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.csv"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    write_log(&log);
    let log = log.to_str().unwrap();
    assert_eq!(cigar(&["ingest", "--input", log, "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(cigar(&["ingest", "--input", log, "--set", "nonsense=1"], dir.path()).status.code(), Some(2));
    assert_eq!(cigar(&["ingest", "--input", log, "--kcore", "0"], dir.path()).status.code(), Some(2));
}

#[test]
fn ingest_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    write_log(&log);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(cigar(&["ingest", "--input", log.to_str().unwrap(), "--seed", "3"], d));
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "dataset.cgds"), read(&b, "dataset.cgds"));
    assert_eq!(read(&a, "ingest.conf"), read(&b, "ingest.conf"));
}

#[test]
fn staged_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let log = d.join("log.csv");
    write_log(&log);
    let stdout = ok(cigar(&["ingest", "--input", log.to_str().unwrap()], d));
    assert!(stdout.contains("80 users"), "{stdout}");

    ok(cigar(&with_quick(&["train-hash"]), d));
    let curve = fs::read_to_string(d.join("hashrec_curve.csv")).unwrap();
    let header: Vec<&str> = curve.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"surrogate_loss") && header.contains(&"desired_loss"));
    assert_eq!(curve.lines().count(), 1 + 6);

    let warm = d.join("hashrec.cghr");
    ok(cigar(&with_quick(&["train-hash", "--warm-start", warm.to_str().unwrap()]), d));

    ok(cigar(&with_quick(&["build-index"]), d));
    assert!(fs::read_to_string(d.join("build-index.conf")).unwrap().contains("m = 16\n"));
    ok(cigar(&with_quick(&["gen-candidates"]), d));

    let cands = d.join("candidates.cgcd");
    let cands = cands.to_str().unwrap();
    for (h, lo, hi) in [("0", 0.0, 0.0), ("0.5", 0.45, 0.55), ("1", 1.0, 1.0)] {
        let stdout = ok(cigar(&with_quick(&["train-ranker", "--candidates", cands, "--h", h]), d));
        let frac: f64 = stdout
            .split("candidate_fraction ")
            .nth(1)
            .and_then(|s| s.split_whitespace().next())
            .unwrap()
            .parse()
            .unwrap();
        assert!((lo..=hi).contains(&frac), "h = {h}: fraction {frac}");
    }

    let table = ok(cigar(&with_quick(&["evaluate"]), d));
    assert!(table.contains("cigar-bpr-mf"), "{table}");
    assert!(d.join("report-cigar-bpr-mf.json").is_file());
    ok(cigar(&with_quick(&["evaluate", "--mode", "candidates"]), d));

    let recs = ok(cigar(&with_quick(&["recommend", "--user", "1000", "-n", "5"]), d));
    assert_eq!(recs.lines().count(), 5);
    let full = ok(cigar(&with_quick(&["recommend", "--user", "1000", "-n", "5", "--full"]), d));
    assert_eq!(full.lines().count(), 5);
    assert_eq!(cigar(&with_quick(&["recommend", "--user", "7"]), d).status.code(), Some(2));

    let bench = ok(cigar(
        &with_quick(&["bench", "--methods", "linear-hamming,mih,cigar-pipeline", "--queries", "20", "--warmup", "5"]),
        d,
    ));
    assert!(bench.starts_with("method,queries,"));
    assert_eq!(bench.lines().count(), 4);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let log = d.join("log.csv");
    write_log(&log);
    ok(cigar(&["ingest", "--input", log.to_str().unwrap()], d));
    let out = cigar(&with_quick(&["train-hash", "--set", "hash_lr=1e300"]), d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let log = d.join("log.csv");
    write_log(&log);
    let conf = d.join("my.conf");
    fs::write(&conf, "# run settings\nkcore = 4\nseed = 9\nc = 30\n").unwrap();
    let conf = conf.to_str().unwrap();
    let log = log.to_str().unwrap();
    ok(cigar(&["ingest", "--input", log, "--config", conf, "--set", "seed=11"], d));
    let written = fs::read_to_string(d.join("ingest.conf")).unwrap();
    assert!(written.contains("kcore = 4\n") && written.contains("seed = 11\n") && written.contains("c = 30\n"));
    ok(cigar(&["ingest", "--input", log, "--config", conf, "--kcore", "3"], d));
    assert!(fs::read_to_string(d.join("ingest.conf")).unwrap().contains("kcore = 3\n"));
}

#[test]
fn pipeline_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    write_log(&log);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let table = ok(cigar(&with_quick(&["pipeline", "--input", log.to_str().unwrap(), "--h", "0.5"]), d));
        assert!(table.contains("candidates") && table.contains("full-bpr-mf"), "{table}");
    }
    for f in ["report-candidates.json", "report-cigar-bpr-mf.json", "report-full-bpr-mf.json", "ranker-bpr-mf.cgrk", "pipeline.conf"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
