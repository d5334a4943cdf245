use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn cafie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cafie"))
        .args(args)
        .env("CAFIE_HTTP_TIMEOUT_MS", "2000")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cafie(args);
    assert!(
        out.status.success(),
        "cafie {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    cafie(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data and its trained model, generated once per test binary.
fn synth() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(&["synth", "--out-dir", s(dir.path()), "--train"]);
        dir
    })
    .path()
}

fn backend() -> String {
    format!("ngram:{}", s(&synth().join("model.bin")))
}

fn with_session<'a>(args: &[&'a str], backend: &'a str, lexicon: &'a str) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&["--backend", backend, "--lexicon", lexicon]);
    v
}

fn lexicon() -> String {
    s(&synth().join("lexicon.json")).to_string()
}

#[test]
fn configuration_errors_exit_with_two() {
    let b = backend();
    let lex = lexicon();
    assert_eq!(
        code(&with_session(
            &["decode", "--prompt", "she", "--alpha", "1.5"],
            &b,
            &lex
        )),
        2
    );
    let out = cafie(&with_session(
        &["decode", "--prompt", "she", "--alpha", "1.5"],
        &b,
        &lex,
    ));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--alpha"));
    assert_eq!(
        code(&with_session(
            &["decode", "--prompt", "she", "--sampling", "beam:3"],
            &b,
            &lex
        )),
        2
    );
    assert_eq!(
        code(&["decode", "--prompt", "she", "--backend", "gpt:small"]),
        2
    );
    assert_eq!(code(&["decode", "--prompt", "she"]), 2);
    let corpus = synth().join("corpus.txt");
    assert_eq!(
        code(&[
            "train-ngram",
            "--corpus",
            s(&corpus),
            "--out",
            "/nonexistent/m.bin",
            "--order",
            "1"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "sweep",
            "--param",
            "lambda",
            "--grid",
            "1:0:1",
            "--backend",
            &b,
            "--stereoset",
            "x"
        ]),
        2
    );
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn backend_errors_exit_with_three() {
    assert_eq!(
        code(&[
            "decode",
            "--prompt",
            "she",
            "--backend",
            "ngram:/nonexistent/model.bin"
        ]),
        3
    );
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let vocab = synth().join("model.vocab");
    assert_eq!(
        code(&[
            "decode",
            "--prompt",
            "she",
            "--backend",
            &url,
            "--vocab",
            s(&vocab)
        ]),
        3
    );
}

#[test]
fn synthetic_artifacts_are_reproducible() {
    let again = tempfile::tempdir().unwrap();
    ok(&["synth", "--out-dir", s(again.path()), "--train"]);
    for name in [
        "corpus.txt",
        "stereoset.jsonl",
        "crows.jsonl",
        "bold.jsonl",
        "lexicon.json",
        "model.bin",
        "model.vocab",
    ] {
        assert_eq!(
            fs::read(synth().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(
        fs::read_to_string(synth().join("stereoset.jsonl"))
            .unwrap()
            .lines()
            .count(),
        100
    );
}

#[test]
fn retrained_model_gives_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let corpus = synth().join("corpus.txt");
    let out = ok(&[
        "train-ngram",
        "--corpus",
        s(&corpus),
        "--out",
        s(&model),
        "--order",
        "5",
        "--k",
        "0.01",
    ]);
    assert!(out.starts_with("heldout_perplexity\t"));
    let ppl: f64 = out.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(ppl.is_finite() && ppl > 1.0);
    let again = dir.path().join("again.bin");
    ok(&[
        "train-ngram",
        "--corpus",
        s(&corpus),
        "--out",
        s(&again),
        "--order",
        "5",
        "--k",
        "0.01",
    ]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let data = synth().join("stereoset.jsonl");
    let lex = lexicon();
    let run = |m: &Path| {
        let b = format!("ngram:{}", s(m));
        let report: Value = serde_json::from_str(&ok(&with_session(
            &["eval", "stereoset", "--data", s(&data), "--lambda", "100"],
            &b,
            &lex,
        )))
        .unwrap();
        report["stereoset"].clone()
    };
    assert_eq!(run(&model), run(&again));
}

fn stereoset_report(lambda: &str, alpha: &str) -> Value {
    let data = synth().join("stereoset.jsonl");
    let (b, lex) = (backend(), lexicon());
    let args = [
        "eval",
        "stereoset",
        "--data",
        s(&data),
        "--lambda",
        lambda,
        "--alpha",
        alpha,
    ];
    serde_json::from_str(&ok(&with_session(&args, &b, &lex))).unwrap()
}

#[test]
fn stereoset_moves_towards_fifty() {
    let base = stereoset_report("100", "0");
    let fair = stereoset_report("100", "0.99");
    let ss = |r: &Value| r["stereoset"]["ss"].as_f64().unwrap();
    assert!(ss(&base) >= 80.0, "{base}");
    assert!((40.0..=60.0).contains(&ss(&fair)), "{fair}");
    assert_eq!(base["config"]["params"]["alpha"], 0.0);
    assert_eq!(base["config"]["backend"]["kind"], "ngram");
    // alpha = 0 is the raw model whatever lambda says
    assert_eq!(
        stereoset_report("1000", "0")["stereoset"],
        base["stereoset"]
    );
}

#[test]
fn decode_prints_text_and_writes_a_trace() {
    let (b, lex) = (backend(), lexicon());
    let base = ok(&with_session(
        &["decode", "--prompt", "she works as a", "--alpha", "0"],
        &b,
        &lex,
    ));
    assert_eq!(base.trim(), "nurse .");
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let fair = ok(&with_session(
        &[
            "decode",
            "--prompt",
            "she works as a",
            "--lambda",
            "100",
            "--trace",
            s(&trace),
        ],
        &b,
        &lex,
    ));
    assert_ne!(fair.trim(), "nurse .");
    let g: Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    let steps = g["trace"]["steps"].as_array().unwrap().len() as u64;
    assert_eq!(
        g["trace"]["backend_call_count"].as_u64().unwrap(),
        2 * steps
    );
    assert_eq!(g["text"].as_str().unwrap(), fair.trim());
}

#[test]
fn prefix_modes_and_samplers_run() {
    let (b, lex) = (backend(), lexicon());
    for extra in [
        ["--prefix-mode", "cot"],
        ["--prefix-mode", "instruction2"],
        ["--sampling", "nucleus:0.9"],
        ["--refresh", "per-step"],
    ] {
        let mut args = vec!["decode", "--prompt", "the woman is", "--seed", "5"];
        args.extend_from_slice(&extra);
        let a = ok(&with_session(&args, &b, &lex));
        assert_eq!(
            a,
            ok(&with_session(&args, &b, &lex)),
            "{extra:?} is not deterministic"
        );
    }
}

#[test]
fn temperature_sweep_has_eleven_rows() {
    let (b, lex) = (backend(), lexicon());
    let data = synth().join("stereoset.jsonl");
    let csv = ok(&with_session(
        &[
            "sweep",
            "--param",
            "temperature",
            "--grid",
            "0.10:3.90:0.38",
            "--stereoset",
            s(&data),
            "--lambda",
            "100",
        ],
        &b,
        &lex,
    ));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,ss,lm,icat,crows");
    assert_eq!(lines.len(), 12);
    let values: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(
        values,
        ["0.1", "0.48", "0.86", "1.24", "1.62", "2", "2.38", "2.76", "3.14", "3.52", "3.9"]
    );
}

#[test]
fn alpha_sweep_row_zero_is_the_base_model() {
    let (b, lex) = (backend(), lexicon());
    let data = synth().join("stereoset.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("alpha.csv");
    ok(&with_session(
        &[
            "sweep",
            "--param",
            "alpha",
            "--grid",
            "0,0.5,0.8,0.9,0.99,0.999,1",
            "--stereoset",
            s(&data),
            "--lambda",
            "100",
            "--out",
            s(&out),
        ],
        &b,
        &lex,
    ));
    let csv = fs::read_to_string(&out).unwrap();
    let row0: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let base = stereoset_report("100", "0");
    assert_eq!(
        row0[2].parse::<f64>().unwrap(),
        base["stereoset"]["ss"].as_f64().unwrap()
    );
    assert_eq!(
        row0[3].parse::<f64>().unwrap(),
        base["stereoset"]["lm"].as_f64().unwrap()
    );
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn bench_reports_calls_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("kin.json");
    fs::write(
        &lex,
        r#"{"attributes":[{"name":"kin","groups":[{"name":"a","tokens":["she"]},{"name":"b","tokens":["he"]},
            {"name":"c","tokens":["mother"]},{"name":"d","tokens":["father"]}]}]}"#,
    )
    .unwrap();
    let prompts = dir.path().join("prompts.txt");
    fs::write(&prompts, "she works as a\n\nhe trained as a\n").unwrap();
    let b = backend();
    let csv = ok(&with_session(
        &[
            "bench",
            "--prompts",
            s(&prompts),
            "--caps",
            "0,1,2,3",
            "--max-tokens",
            "4",
        ],
        &b,
        s(&lex),
    ));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let r: usize = row[2].parse().unwrap();
        let steps: usize = row[3].parse().unwrap();
        assert_eq!(row[4].parse::<usize>().unwrap(), steps * (r + 1));
        assert_eq!(row[5].parse::<f64>().unwrap(), (r + 1) as f64);
        assert_eq!(
            row[0],
            if r == 0 {
                "base".to_string()
            } else {
                format!("cafie_r{r}")
            }
        );
    }
}

#[test]
fn crows_bold_and_fluency_reports() {
    let (b, lex) = (backend(), lexicon());
    let dir = tempfile::tempdir().unwrap();
    let crows = synth().join("crows.jsonl");
    let report: Value = serde_json::from_str(&ok(&with_session(
        &["eval", "crows", "--data", s(&crows), "--alpha", "0"],
        &b,
        &lex,
    )))
    .unwrap();
    assert!(report["crows"]["total"]["overall"].as_f64().unwrap() > 80.0);
    assert!(report["crows"]["protocol"]
        .as_str()
        .unwrap()
        .contains("refreshed"));

    let bold = synth().join("bold.jsonl");
    let plot = dir.path().join("plot.csv");
    let out = dir.path().join("bold.json");
    let csv = dir.path().join("bold.csv");
    ok(&with_session(
        &[
            "eval",
            "bold",
            "--data",
            s(&bold),
            "--generations",
            "3",
            "--sampling",
            "multinomial",
            "--max-tokens",
            "6",
            "--plot-csv",
            s(&plot),
            "--out",
            s(&out),
            "--csv",
            s(&csv),
            "--lambda",
            "100",
        ],
        &b,
        &lex,
    ));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["bold"]["prompts"], 12);
    assert_eq!(report["bold"]["generations_per_prompt"], 3);
    let plot = fs::read_to_string(&plot).unwrap();
    assert!(plot.lines().count() >= 3, "{plot}");
    assert!(fs::read_to_string(&csv).unwrap().lines().count() >= 2);

    let corpus = dir.path().join("lines.txt");
    fs::write(&corpus, "she works as a nurse .\nthe sky is blue .\n").unwrap();
    let report: Value = serde_json::from_str(&ok(&with_session(
        &["eval", "fluency", "--data", s(&corpus)],
        &b,
        &lex,
    )))
    .unwrap();
    assert_eq!(report["fluency"]["tokens"], 13);
    assert!(report["fluency"]["perplexity"].as_f64().unwrap() > 1.0);
}

#[test]
fn release_files_convert() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("crows_pairs_anonymized.csv");
    fs::write(
        &csv,
        ",sent_more,sent_less,stereo_antistereo,bias_type\n0,She can't drive,He can't drive,stereo,gender\n1,He cried,She cried,antistereo,gender\n",
    )
    .unwrap();
    let out = dir.path().join("crows.jsonl");
    assert_eq!(
        ok(&[
            "convert",
            "--format",
            "crows",
            "--input",
            s(&csv),
            "--output",
            s(&out)
        ])
        .trim(),
        "2"
    );
    let first: Value =
        serde_json::from_str(fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "c0");

    let bold = dir.path().join("gender_prompt.json");
    fs::write(
        &bold,
        r#"{"American_actresses":{"A B":["A B is an actress "]}}"#,
    )
    .unwrap();
    let out = dir.path().join("bold.jsonl");
    assert_eq!(
        ok(&[
            "convert",
            "--format",
            "bold",
            "--input",
            s(&bold),
            "--output",
            s(&out)
        ])
        .trim(),
        "1"
    );
    let rec: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(rec["domain"], "gender");
    assert_eq!(rec["prompt"], "A B is an actress");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert_ne!(
        code(&[
            "convert",
            "--format",
            "stereoset",
            "--input",
            s(&bad),
            "--output",
            s(&out)
        ]),
        0
    );
}

#[test]
fn missing_files_are_reported() {
    let missing: PathBuf = synth().join("nope.jsonl");
    let (b, lex) = (backend(), lexicon());
    let out = cafie(&with_session(
        &["eval", "stereoset", "--data", s(&missing)],
        &b,
        &lex,
    ));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}
