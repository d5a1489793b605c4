use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use geosteer::data::load_mc;
use geosteer::formats::{load_checkpoint, load_prototype, save_activations};
use geosteer::run;
use geosteer_core::model::{tokenize, Identity};
use geosteer_core::{ActivationHook, ActivationRecord, HookPoint, Model, Polarity, Vector};
use serde_json::Value;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// A small model plus the synthetic data and a layer-3 prototype.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        f.ok(&["init-model", "--out", &f.p("model.gstr"), "--d-model", "32", "--max-seq-len", "64", "--seed", "2"]);
        f.ok(&["synth-data", "--out", &f.p("data")]);
        f.ok(&[
            "extract",
            "--model",
            &f.p("model.gstr"),
            "--data",
            &f.p("data/pairs.jsonl"),
            "--layers",
            "3,1",
            "--out",
            &f.p("acts.bin"),
        ]);
        f.ok(&["prototype", "--acts", &f.p("acts.bin"), "--layer", "3", "--out", &f.p("p.json")]);
        f
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn code(&self, args: &[&str]) -> i32 {
        run(std::iter::once("geosteer").chain(["--quiet"]).chain(args.iter().copied()))
    }

    fn ok(&self, args: &[&str]) {
        assert_eq!(self.code(args), 0, "{args:?}");
    }

    fn eval(&self, out: &str, extra: &[&str]) -> i32 {
        let (m, d, o) = (self.p("model.gstr"), self.p("data/mc.jsonl"), self.p(out));
        let mut args = vec!["eval-mc", "--model", &m, "--data", &d, "--out", &o];
        args.extend_from_slice(extra);
        self.code(&args)
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.root.join(rel)).unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_slice(&self.read(rel)).unwrap()
    }
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let f = Fixture::new();
    assert_eq!(f.code(&["--help"]), 0);
    assert_eq!(f.code(&["eval-mc", "--help"]), 0);
    assert_eq!(f.code(&["eval-mc", "--no-such-flag"]), 1);
    assert_eq!(f.code(&["transmogrify"]), 1);
    assert_eq!(f.code(&[]), 1);
    assert_eq!(f.code(&["eval-mc", "--out", &f.p("x")]), 1);
    assert_eq!(f.code(&["init-model", "--alpha", "0.3", "--out", &f.p("m2")]), 1);
    assert_eq!(f.code(&["init-model", "--d-model", "30", "--n-heads", "4", "--out", &f.p("m2")]), 1);
    // Steering parameters without a direction, or mixed with a plan file.
    assert_eq!(f.eval("e", &["--beta", "0.5"]), 1);
    assert_eq!(f.eval("e", &["--plan", &f.p("plan.json"), "--alpha", "0.5"]), 1);
    assert_eq!(f.eval("e", &["--prototypes", &f.p("p.json"), "--mode", "add"]), 1);
    assert_eq!(f.eval("e", &["--prototypes", &f.p("p.json"), "--alpha", "1.5"]), 1);
    assert_eq!(f.eval("e", &["--prototypes", &f.p("p.json"), "--mode", "sideways"]), 1);
}

#[test]
fn data_errors_exit_2() {
    let f = Fixture::new();
    let missing = f.p("nope.gstr");
    assert_eq!(f.code(&["eval-mc", "--model", &missing, "--data", &f.p("data/mc.jsonl"), "--out", &f.p("e")]), 2);
    fs::write(f.root.join("bad.jsonl"), "{not json}\n").unwrap();
    assert_eq!(f.code(&["eval-mc", "--model", &f.p("model.gstr"), "--data", &f.p("bad.jsonl"), "--out", &f.p("e")]), 2);
    // Layer 2 was not extracted.
    assert_eq!(f.code(&["prototype", "--acts", &f.p("acts.bin"), "--layer", "2", "--out", &f.p("p2.json")]), 2);
}

#[test]
fn degenerate_prototype_exits_3() {
    let f = Fixture::new();
    let v = Vector::new(vec![1.0, 2.0]).unwrap();
    let recs: Vec<_> = [Polarity::Positive, Polarity::Negative]
        .into_iter()
        .map(|polarity| ActivationRecord { pair_index: 0, layer: 0, polarity, vector: v.clone() })
        .collect();
    save_activations(&f.root.join("same.bin"), &recs).unwrap();
    assert_eq!(f.code(&["prototype", "--acts", &f.p("same.bin"), "--layer", "0", "--out", &f.p("d.json")]), 3);
}

#[test]
fn prototype_command_writes_a_unit_vector() {
    let f = Fixture::new();
    let p = load_prototype(Path::new(&f.p("p.json"))).unwrap();
    assert_eq!((p.layer(), p.dim(), p.n_pairs()), (3, 32, 20));
    let n: f64 = p.mu_t().as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() <= 1e-9);
    assert_eq!(f.json("config.resolved.json")["command"], "prototype");
}

/// Lowest `s_T` over every token the evaluator steers at the prototype's layer.
fn min_alignment(f: &Fixture) -> f64 {
    let model = Model::from_checkpoint(&load_checkpoint(Path::new(&f.p("model.gstr"))).unwrap()).unwrap();
    let proto = load_prototype(Path::new(&f.p("p.json"))).unwrap();
    let point = HookPoint::post_block(proto.layer());
    let mut min = f64::INFINITY;
    for item in load_mc(Path::new(&f.p("data/mc.jsonl"))).unwrap() {
        for choice in &item.choices {
            let tokens = tokenize(format!("{}{choice}", item.question).as_bytes());
            let out =
                model.forward_with_hooks(&tokens, &[(point, Box::new(Identity) as Box<dyn ActivationHook>)]).unwrap();
            for h in &out.captured[&point] {
                min = min.min(h.dot(proto.mu_t().as_slice()).unwrap() / h.norm());
            }
        }
    }
    min
}

#[test]
fn gate_at_high_beta_changes_scores_only_past_its_threshold() {
    let f = Fixture::new();
    assert_eq!(f.eval("plain", &[]), 0);
    assert_eq!(f.eval("gated", &["--prototypes", &f.p("p.json"), "--beta", "0.9999", "--mode", "rotate"]), 0);
    let (a, b) = (f.json("plain/summary.json"), f.json("gated/summary.json"));
    assert_eq!(a["plan_digest"], "none");
    assert_eq!(b["plan_digest"].as_str().unwrap().len(), 64);
    // The gate fires iff s_T < -artanh(β)/κ; with no token past that the run is unsteered.
    let threshold = -(0.9999f64).atanh() / 20.0;
    let fires = min_alignment(&f) < threshold;
    assert_eq!(f.read("plain/results.csv") != f.read("gated/results.csv"), fires);
    // A gate that cannot reach the threshold (s_T >= -1 > -artanh(β)/κ) never fires.
    assert_eq!(f.eval("inert", &["--prototypes", &f.p("p.json"), "--beta", "0.9999", "--kappa", "0.5"]), 0);
    assert_eq!(f.read("plain/results.csv"), f.read("inert/results.csv"));
    assert_eq!(a["mc2"], f.json("inert/summary.json")["mc2"]);
    // A fixed rotation does move the scores.
    assert_eq!(f.eval("fixed", &["--prototypes", &f.p("p.json"), "--fixed-t", "0.7"]), 0);
    assert_ne!(f.read("plain/results.csv"), f.read("fixed/results.csv"));
}

#[test]
fn results_csv_layout() {
    let f = Fixture::new();
    assert_eq!(f.eval("e", &["--split", "validation"]), 0);
    let mut r = csv::Reader::from_path(f.root.join("e/results.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["item_index", "choice_index", "loglik"]);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4 * 3);
    assert!(rows.iter().all(|row| row[2].parse::<f64>().unwrap() < 0.0));
    assert_eq!(f.json("e/summary.json")["n_items"], 4);
}

#[test]
fn flags_override_config_and_echo_replays() {
    let f = Fixture::new();
    let cfg = f.root.join("cfg.json");
    fs::write(&cfg, format!(r#"{{"prototypes":["{}"],"kappa":5,"alpha":0.9,"out":"{}"}}"#, f.p("p.json"), f.p("a")))
        .unwrap();
    let c = cfg.to_string_lossy().into_owned();
    assert_eq!(f.eval("b", &["--config", &c, "--kappa", "7"]), 0);
    let echoed = f.json("b/config.resolved.json");
    assert_eq!(echoed["kappa"], 7.0);
    assert_eq!(echoed["alpha"], 0.9);
    assert_eq!(echoed["out"], f.p("b"));
    assert_eq!(echoed["beta"], -1.0 + 1e-9);
    assert_eq!(echoed["command"], "eval-mc");

    let first = f.read("b/summary.json");
    fs::remove_file(f.root.join("b/summary.json")).unwrap();
    assert_eq!(f.code(&["--config", &f.p("b/config.resolved.json")]), 0);
    assert_eq!(f.read("b/summary.json"), first);

    fs::write(&cfg, r#"{"lambdas":[1.0]}"#).unwrap();
    assert_eq!(f.eval("c", &["--config", &c]), 1);
    fs::write(&cfg, r#"{"command":"sweep"}"#).unwrap();
    assert_eq!(f.eval("c", &["--config", &c]), 1);
    fs::write(&cfg, r#"{"kappa":"high"}"#).unwrap();
    assert_eq!(f.eval("c", &["--config", &c]), 1);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let f = Fixture::new();
    let exe = env!("CARGO_BIN_EXE_geosteer");
    let eval = |threads: &str, out: &str| {
        Command::new(exe)
            .env("GEOSTEER_THREADS", threads)
            .args(["-q", "eval-mc", "--model", &f.p("model.gstr"), "--data", &f.p("data/mc.jsonl"), "--out", &f.p(out)])
            .args(["--prototypes", &f.p("p.json")])
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(eval("1", "t1"), Some(0));
    assert_eq!(eval("5", "t5"), Some(0));
    assert_eq!(f.read("t1/results.csv"), f.read("t5/results.csv"));
    assert_eq!(f.read("t1/summary.json"), f.read("t5/summary.json"));
    assert_eq!(eval("0", "t0"), Some(1));
}

#[test]
fn diagnostics_and_generation_outputs() {
    let f = Fixture::new();
    let (m, proto) = (f.p("model.gstr"), f.p("p.json"));
    f.ok(&["diagnose", "norms", "--model", &m, "--data", &f.p("data/pairs.jsonl"), "--out", &f.p("n")]);
    let header = String::from_utf8(f.read("n/norm_profile.csv")).unwrap();
    assert!(header.starts_with("layer,mean_pos,std_pos,mean_neg,std_neg,delta\n0,"));
    assert_eq!(header.lines().count(), 5);

    f.ok(&[
        "diagnose",
        "rank",
        "--model",
        &m,
        "--probes",
        &f.p("data/probes.txt"),
        "--prototypes",
        &proto,
        "--fixed-t",
        "1",
        "--out",
        &f.p("r"),
    ]);
    let rank = f.json("r/rank.json");
    assert_eq!(rank["layer"], 3);
    assert!((rank["effective_rank_post"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let spectra = f.json("r/spectra.json");
    assert_eq!(spectra["pre"].as_array().unwrap().len(), 32);

    f.ok(&["diagnose", "planted", "--d-model", "16", "--n-heads", "2", "--out", &f.p("pl")]);
    assert_eq!(f.json("pl/planted.json")["strictly_increasing"], true);
    assert_eq!(String::from_utf8(f.read("pl/planted.csv")).unwrap().lines().count(), 12);

    let gen = |out: &str| {
        f.ok(&[
            "generate",
            "--model",
            &m,
            "--prompt",
            "Q: What is ice like? A:",
            "--max-new-tokens",
            "6",
            "--prototypes",
            &proto,
            "--fixed-t",
            "1",
            "--out",
            &f.p(out),
        ]);
        f.json(&format!("{out}/generation.json"))
    };
    let g = gen("g1");
    assert_eq!(g["tokens"].as_array().unwrap().len(), 6);
    assert_eq!(g, gen("g2"));
    let too_long = ["generate", "--model", &m, "--prompt", "x", "--max-new-tokens", "64", "--out", &f.p("g3")];
    assert_eq!(f.code(&too_long), 2);
}

#[test]
fn sweep_with_explicit_strengths() {
    let f = Fixture::new();
    let args = [
        "sweep",
        "--model",
        &f.p("model.gstr"),
        "--data",
        &f.p("data/mc.jsonl"),
        "--probes",
        &f.p("data/probes.txt"),
        "--prototypes",
        &f.p("p.json"),
        "--strengths",
        "0,1",
        "--lambdas",
        "0,4",
        "--out",
        &f.p("s"),
    ];
    f.ok(&args);
    let text = String::from_utf8(f.read("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mode,strength,mc1,mc2,mc3,rank_drop");
    assert!(lines[1].starts_with("rotate,0,") && lines[1].ends_with(",0"));
    assert!(lines[3].starts_with("add,0,") && lines[3].ends_with(",0"));
    // Zero strength in both modes is the unsteered model.
    let tail = |l: &str| l.splitn(3, ',').nth(2).unwrap().to_string();
    assert_eq!(tail(lines[1]), tail(lines[3]));
    assert_eq!(f.code(&[&args[..11], &["--strengths", "1,0", "--out", &f.p("s2")]].concat()), 1);
}
