//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion, with
//! its wall-clock time against the budget, and exits non-zero if any fails.
//!
//! Run with `cargo test -p geosteer --test acceptance`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use geosteer::formats::{load_checkpoint, load_prototype, save_checkpoint, save_prototype};
use geosteer::report::SWEEP_HEADER;
use geosteer::synth::synth_data;
use geosteer_core::diagnostics::{planted_direction_check, rank_drop};
use geosteer_core::eval::{item_metrics, MCItem};
use geosteer_core::model::init_model;
use geosteer_core::prototype::{build_prototype, extract_last_token};
use geosteer_core::steering::{gate_threshold, norm_change_ratio, slerp_rotate, vmf_gate};
use geosteer_core::{
    ActivationRecord, Error, GateParams, Intervention, Model, ModelConfig, Polarity, SteeringPlan, UnitVector, Vector,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> UnitVector {
    UnitVector::normalize(&gaussian(rng, d)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A unit vector orthogonal to `mu`.
fn orthogonal(rng: &mut ChaCha8Rng, mu: &UnitVector) -> Vec<f64> {
    let g = gaussian(rng, mu.dim());
    let c = dot(&g, mu.as_slice());
    let u: Vec<f64> = g.iter().zip(mu.as_slice()).map(|(g, m)| g - c * m).collect();
    let n = l2(&u);
    u.iter().map(|x| x / n).collect()
}

/// `cos θ · μ + sin θ · u`, scaled to `r`.
fn at_angle(mu: &UnitVector, u: &[f64], theta: f64, r: f64) -> Vector {
    Vector::new(mu.as_slice().iter().zip(u).map(|(m, u)| r * (theta.cos() * m + theta.sin() * u)).collect()).unwrap()
}

/// Angle between `v` and unit `mu` via atan2, which stays accurate near 0 and π.
fn angle_to(v: &[f64], mu: &[f64]) -> f64 {
    let c = dot(v, mu);
    let perp: Vec<f64> = v.iter().zip(mu).map(|(x, m)| x - c * m).collect();
    l2(&perp).atan2(c)
}

fn c1_norm_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..100_000 {
        let d = [8, 64, 512][i % 3];
        let scale = (rng.random_range(-3.0..3.0f64)).exp();
        let h = Vector::new(gaussian(&mut rng, d).iter().map(|x| x * scale).collect()).unwrap();
        let mu = unit(&mut rng, d);
        let t = rng.random_range(0.0..=1.0);
        let out = slerp_rotate(&h, &mu, t).map_err(|e| e.to_string())?;
        worst = worst.max((l2(out.as_slice()) / l2(h.as_slice()) - 1.0).abs());
    }
    check(worst <= 1e-9, || format!("max |ratio - 1| = {worst:e}"))?;
    Ok(format!("max |ratio - 1| = {worst:.1e} over 1e5 triples"))
}

fn c2_geodesic_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let d = [8, 64, 512][i % 3];
        let mu = unit(&mut rng, d);
        let u = orthogonal(&mut rng, &mu);
        let theta = rng.random_range(0.01..=PI - 0.01);
        let h = at_angle(&mu, &u, theta, rng.random_range(0.1..10.0));
        let t = rng.random_range(0.0..=1.0);
        let out = slerp_rotate(&h, &mu, t).map_err(|e| e.to_string())?;
        let err = (angle_to(out.as_slice(), mu.as_slice()) - (1.0 - t) * theta).abs();
        worst = worst.max(err);
    }
    check(worst <= 1e-7, || format!("max angle error = {worst:e}"))?;
    Ok(format!("max |angle - (1-t)θ| = {worst:.1e} over 1e4 samples"))
}

fn c3_gate_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut n = 0;
    let d = 16;
    for &kappa in &[1.0, 20.0, 100.0] {
        for k in 0..3334 {
            let s = -1.0 + 2.0 * k as f64 / 3333.0;
            let mu = unit(&mut rng, d);
            let u = orthogonal(&mut rng, &mu);
            let h = at_angle(&mu, &u, s.clamp(-1.0, 1.0).acos(), 1.0);
            let h_hat = UnitVector::normalize(h.as_slice()).unwrap();
            let g = vmf_gate(&h_hat, &mu, &GateParams::new(0.5, 0.0, kappa).unwrap()).map_err(|e| e.to_string())?;
            worst = worst.max((g.delta - (-(kappa * g.s_t).tanh())).abs());
            n += 1;
        }
    }
    check(worst <= 1e-12, || format!("max |δ + tanh(κ s_T)| = {worst:e}"))?;
    Ok(format!("max |δ + tanh(κ s_T)| = {worst:.1e} on {n} grid points"))
}

fn c4_threshold_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fired = 0;
    let mut total = 0;
    for &beta in &[-0.5, -0.05, 0.0, 0.3] {
        for i in 0..10_000 {
            let kappa = [1.0, 5.0, 20.0, 100.0][i % 4];
            let params = GateParams::new(0.3, beta, kappa).unwrap();
            let d = 12;
            let (h, mu) = (unit(&mut rng, d), unit(&mut rng, d));
            let g = vmf_gate(&h, &mu, &params).map_err(|e| e.to_string())?;
            let oracle = g.s_t < -f64::atanh(beta) / kappa;
            let gate = g.t > 0.0;
            check(gate == oracle, || format!("β={beta} κ={kappa} s_T={}: gate {gate}, threshold {oracle}", g.s_t))?;
            check(gate_threshold(&params).triggers(g.s_t) == oracle, || {
                format!("gate_threshold disagrees at s_T={}", g.s_t)
            })?;
            fired += usize::from(gate);
            total += 1;
        }
    }
    check(fired > 0 && fired < total, || format!("degenerate sample: {fired}/{total} fired"))?;
    Ok(format!("{total} decisions agree exactly ({fired} fired)"))
}

fn c5_addition_norm_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let d = [8, 64, 512][i % 3];
        let scale = rng.random_range(0.1..10.0);
        let h: Vec<f64> = gaussian(&mut rng, d).iter().map(|x| x * scale).collect();
        let mu = unit(&mut rng, d);
        let lambda = if i % 2 == 0 { grid[(i / 2) % grid.len()] } else { rng.random_range(-20.0..20.0) };
        let explicit: Vec<f64> = h.iter().zip(mu.as_slice()).map(|(h, m)| h + lambda * m).collect();
        let want = l2(&explicit) / l2(&h);
        let got = norm_change_ratio(&Vector::new(h).unwrap(), &mu, lambda).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
    }
    check(worst <= 1e-10, || format!("max error {worst:e}"))?;
    Ok(format!("max |closed form - explicit| = {worst:.1e} over 1e4 triples"))
}

fn c6_prototype_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for set in 0..1000 {
        let n_pairs = rng.random_range(1..8);
        let d = rng.random_range(2..24);
        let mut recs = Vec::new();
        for pair_index in 0..n_pairs {
            for polarity in [Polarity::Positive, Polarity::Negative] {
                let vector = Vector::new(gaussian(&mut rng, d)).unwrap();
                recs.push(ActivationRecord { pair_index, layer: 2, polarity, vector });
            }
        }
        let p = build_prototype(&recs, 2).map_err(|e| e.to_string())?;
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng);
        let q = build_prototype(&shuffled, 2).map_err(|e| e.to_string())?;
        let bits = |v: &UnitVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        check(bits(p.mu_t()) == bits(q.mu_t()), || format!("set {set}: permutation changed μ_T"))?;
        let flipped: Vec<_> =
            recs.iter().map(|r| ActivationRecord { polarity: r.polarity.flipped(), ..r.clone() }).collect();
        let f = build_prototype(&flipped, 2).map_err(|e| e.to_string())?;
        check(f.mu_t().as_slice().iter().zip(p.mu_t().as_slice()).all(|(a, b)| *a == -*b), || {
            format!("set {set}: flipping polarity is not an exact negation")
        })?;
        check((l2(p.mu_t().as_slice()) - 1.0).abs() <= 1e-9, || format!("set {set}: |μ_T| off unit"))?;
        let same: Vec<_> = recs
            .iter()
            .map(|r| {
                let twin = recs.iter().find(|o| o.pair_index == r.pair_index && o.polarity == Polarity::Positive);
                ActivationRecord { vector: twin.unwrap().vector.clone(), ..r.clone() }
            })
            .collect();
        check(matches!(build_prototype(&same, 2), Err(Error::DegeneratePrototype { .. })), || {
            format!("set {set}: identical polarities were not rejected")
        })?;
    }
    Ok("1000 record sets: permutation and polarity exact, unit norm, degenerate Δ rejected".into())
}

fn brute_force(correct: &[bool], s: &[f64]) -> (f64, f64, f64) {
    // MC1: there is a correct choice that beats every incorrect one.
    let beats_all = |i: usize| (0..s.len()).filter(|j| !correct[*j]).all(|j| s[i] > s[j]);
    let winners = (0..s.len()).filter(|i| correct[*i] && beats_all(*i)).count();
    let n_true = correct.iter().filter(|c| **c).count();
    let mc1 = if winners > 0 { 1.0 } else { 0.0 };
    let mc3 = winners as f64 / n_true as f64;
    let z: f64 = s.iter().map(|x| x.exp()).sum();
    let mass: f64 = s.iter().zip(correct).filter(|(_, c)| **c).map(|(x, _)| x.exp()).sum();
    (mc1, mass / z, mc3)
}

fn c7_mc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut tables = 0;
    while tables < 200 {
        let n = rng.random_range(2..9);
        let correct: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if correct.iter().all(|c| *c) || !correct.iter().any(|c| *c) {
            continue;
        }
        // Quantised scores make ties common.
        let s: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { -(rng.random_range(1..4) as f64) } else { rng.random_range(-40.0..0.0) })
            .collect();
        let idx: Vec<usize> = (0..n).filter(|i| correct[*i]).collect();
        let item = MCItem::new("q", (0..n).map(|i| format!("c{i}")).collect(), idx).unwrap();
        let m = item_metrics(&item, &s);
        let (mc1, mc2, mc3) = brute_force(&correct, &s);
        check(m.mc1 == mc1 && m.mc3 == mc3, || format!("table {tables}: MC1/MC3 {:?} vs ({mc1}, {mc3})", m))?;
        worst = worst.max((m.mc2 - mc2).abs());
        let c = rng.random_range(-50.0..50.0);
        let shifted = item_metrics(&item, &s.iter().map(|x| x + c).collect::<Vec<_>>());
        check(shifted.mc1 == m.mc1 && shifted.mc3 == m.mc3, || format!("table {tables}: shift changed MC1/MC3"))?;
        check((shifted.mc2 - m.mc2).abs() <= 1e-12, || format!("table {tables}: shift moved MC2"))?;
        tables += 1;
    }
    check(worst <= 1e-12, || format!("max MC2 error {worst:e}"))?;
    Ok(format!("200 tables match brute force (MC2 within {worst:.1e}), shift invariant"))
}

fn toy_model() -> Model {
    let config = ModelConfig { d_model: 64, n_layers: 4, n_heads: 4, vocab_size: 256, max_seq_len: 256, rms_eps: 1e-6 };
    Model::from_checkpoint(&init_model(config, 8).unwrap()).unwrap()
}

fn c8_rank_collapse() -> Outcome {
    let model = toy_model();
    let data = synth_data(0);
    let layer = 2;
    let recs = extract_last_token(&model, &data.pairs, &[layer]).map_err(|e| e.to_string())?;
    let proto = build_prototype(&recs, layer).map_err(|e| e.to_string())?;
    let probes = ["Q: Is fire hot? A: Yes, it is.", "Snow is cold and wet"];
    let n_tokens: usize = probes.iter().map(|p| p.len()).sum();
    check(n_tokens == 50, || format!("{n_tokens} probe tokens"))?;
    let plan = |t| SteeringPlan::from_prototypes(vec![proto.clone()], Intervention::fixed(t)?);
    let full = rank_drop(&model, &plan(1.0).map_err(|e| e.to_string())?, &probes, layer).map_err(|e| e.to_string())?;
    let zero = rank_drop(&model, &plan(0.0).map_err(|e| e.to_string())?, &probes, layer).map_err(|e| e.to_string())?;
    check((full.effective_rank_post - 1.0).abs() <= 1e-6, || format!("t=1 post rank {}", full.effective_rank_post))?;
    check(zero.rank_drop == 0.0, || format!("t=0 drop {}", zero.rank_drop))?;
    Ok(format!(
        "effective rank {:.3} -> {:.9} at t=1; drop exactly 0 at t=0",
        full.effective_rank_pre, full.effective_rank_post
    ))
}

fn c9_planted_direction() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let r = planted_direction_check(ModelConfig::default(), &grid, 0).map_err(|e| e.to_string())?;
    check(r.theta > 0.0 && r.theta < PI - 0.01, || format!("θ = {}", r.theta))?;
    check(r.strictly_increasing, || format!("logits not increasing: {:?}", r.logits))?;
    check(r.generated_at_full == r.token, || format!("emitted {} not {}", r.generated_at_full, r.token))?;
    Ok(format!(
        "θ = {:.4}; logit rises {:.4} -> {:.4}; t=1 emits token {}",
        r.theta, r.logits[0], r.logits[10], r.token
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let code = geosteer::run(["geosteer", "--quiet"].iter().chain(args));
    check(code == 0, || format!("`{}` exited {code}", args.join(" ")))
}

/// init -> synth -> extract -> prototype -> eval-mc (plain and steered) -> sweep.
fn pipeline(dir: &Path, seed: &str) -> Result<(), String> {
    let p = |r: &str| dir.join(r).to_string_lossy().into_owned();
    cli(&["init-model", "--seed", seed, "--out", &p("model.gstr")])?;
    cli(&["synth-data", "--seed", seed, "--out", &p("data")])?;
    cli(&[
        "extract",
        "--model",
        &p("model.gstr"),
        "--data",
        &p("data/pairs.jsonl"),
        "--layers",
        "2",
        "--out",
        &p("acts.bin"),
    ])?;
    cli(&["prototype", "--acts", &p("acts.bin"), "--layer", "2", "--out", &p("p2.json")])?;
    cli(&["eval-mc", "--model", &p("model.gstr"), "--data", &p("data/mc.jsonl"), "--out", &p("plain")])?;
    let steered = ["--prototypes", &p("p2.json"), "--alpha", "0.5"];
    cli(&[
        &["eval-mc", "--model", &p("model.gstr"), "--data", &p("data/mc.jsonl"), "--out", &p("steered")],
        &steered[..],
    ]
    .concat())?;
    let sweep =
        ["sweep", "--model", &p("model.gstr"), "--data", &p("data/mc.jsonl"), "--probes", &p("data/probes.txt")];
    cli(&[&sweep[..], &["--prototypes", &p("p2.json"), "--out", &p("sweep")]].concat())
}

const SUMMARY_OUTPUTS: [&str; 5] =
    ["plain/summary.json", "plain/results.csv", "steered/summary.json", "steered/results.csv", "sweep/sweep.csv"];

fn c10_determinism_and_round_trips() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "3")?;
    pipeline(b.path(), "3")?;
    for rel in SUMMARY_OUTPUTS {
        let (x, y) = (fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        check(x == y, || format!("{rel} differs between runs"))?;
    }
    let io = |e: geosteer::Error| e.to_string();
    let model_path = a.path().join("model.gstr");
    let ckpt = load_checkpoint(&model_path).map_err(io)?;
    let copy = a.path().join("copy.gstr");
    save_checkpoint(&copy, &ckpt).map_err(io)?;
    check(fs::read(&model_path).unwrap() == fs::read(&copy).unwrap(), || "checkpoint bytes changed".into())?;
    let proto_path = a.path().join("p2.json");
    let proto = load_prototype(&proto_path).map_err(io)?;
    let copy = a.path().join("copy.json");
    save_prototype(&copy, &proto).map_err(io)?;
    let back = load_prototype(&copy).map_err(io)?;
    let bits = |v: &UnitVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    check(bits(back.mu_t()) == bits(proto.mu_t()), || "prototype bits changed".into())?;
    check(fs::read(&proto_path).unwrap() == fs::read(&copy).unwrap(), || "prototype file bytes changed".into())?;
    Ok(format!(
        "{} outputs byte-identical across runs; checkpoint and prototype round-trip bit-exactly",
        SUMMARY_OUTPUTS.len()
    ))
}

fn c11_collapse_report() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |r: &str| dir.path().join(r).to_string_lossy().into_owned();
    cli(&["init-model", "--seed", "11", "--out", &p("model.gstr")])?;
    cli(&["synth-data", "--seed", "11", "--out", &p("data")])?;
    cli(&[
        "extract",
        "--model",
        &p("model.gstr"),
        "--data",
        &p("data/pairs.jsonl"),
        "--layers",
        "2",
        "--out",
        &p("acts.bin"),
    ])?;
    cli(&["prototype", "--acts", &p("acts.bin"), "--layer", "2", "--out", &p("p2.json")])?;
    let sweep =
        ["sweep", "--model", &p("model.gstr"), "--data", &p("data/mc.jsonl"), "--probes", &p("data/probes.txt")];
    cli(&[&sweep[..], &["--prototypes", &p("p2.json"), "--out", &p("sweep")]].concat())?;

    let mut reader = csv::Reader::from_path(dir.path().join("sweep/sweep.csv")).map_err(|e| e.to_string())?;
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    check(header == SWEEP_HEADER, || format!("header {header:?}"))?;
    let mut curves: [Vec<[f64; 5]>; 2] = [Vec::new(), Vec::new()];
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let mode = match &row[0] {
            "rotate" => 0,
            "add" => 1,
            m => return Err(format!("unknown mode {m}")),
        };
        let mut v = [0.0f64; 5];
        for (k, x) in v.iter_mut().enumerate() {
            *x = row[k + 1].parse().map_err(|_| format!("bad number {}", &row[k + 1]))?;
            check(x.is_finite(), || format!("non-finite value in {row:?}"))?;
        }
        check(v[1..4].iter().all(|m| (0.0..=1.0).contains(m)), || format!("metric out of range in {row:?}"))?;
        curves[mode].push(v);
    }
    for (name, c) in ["rotate", "add"].iter().zip(&curves) {
        check(c.len() == 10, || format!("{} {name} points", c.len()))?;
        check(c.windows(2).all(|w| w[0][0] < w[1][0]), || format!("{name} strengths not increasing"))?;
    }
    let rot_full = curves[0].last().unwrap();
    check(rot_full[0] == 1.0 && rot_full[4] >= -1e-9, || format!("rotate t=1 point {rot_full:?}"))?;

    println!("      collapse-efficiency report (MC2 vs effective-rank drop, layer 2):");
    println!("      {:>8} {:>9} {:>9} | {:>8} {:>9} {:>9}", "rotate t", "mc2", "drop", "add λ", "mc2", "drop");
    for (r, a) in curves[0].iter().zip(&curves[1]) {
        println!("      {:>8.2} {:>9.5} {:>9.4} | {:>8.3} {:>9.5} {:>9.4}", r[0], r[2], r[4], a[0], a[2], a[4]);
    }
    // At each rotate point, compare with the add curve interpolated at the same rank drop.
    let (mut above, mut comparable) = (0, 0);
    for r in &curves[0] {
        if let Some(w) = curves[1].windows(2).find(|w| w[0][4] <= r[4] && r[4] <= w[1][4]) {
            let f = if w[1][4] > w[0][4] { (r[4] - w[0][4]) / (w[1][4] - w[0][4]) } else { 0.0 };
            comparable += 1;
            above += usize::from(r[2] > w[0][2] + f * (w[1][2] - w[0][2]));
        }
    }
    println!("      rotation above addition at matched rank drop: {above}/{comparable} comparable points (reported, not asserted)");
    Ok("sweep.csv well-formed: 10 rotate + 10 add points".into())
}

fn main() {
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("norm preservation", 5, c1_norm_preservation),
        ("geodesic linearity", 2, c2_geodesic_linearity),
        ("gate identity", 1, c3_gate_identity),
        ("threshold equivalence", 1, c4_threshold_equivalence),
        ("addition norm law", 1, c5_addition_norm_law),
        ("prototype algebra", 2, c6_prototype_algebra),
        ("MC metric oracle", 1, c7_mc_oracle),
        ("rank-collapse endpoint", 10, c8_rank_collapse),
        ("planted-direction monotonicity", 5, c9_planted_direction),
        ("end-to-end determinism and round trips", 60, c10_determinism_and_round_trips),
        ("collapse-efficiency sweep report", 120, c11_collapse_report),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > Duration::from_secs(*budget) => Err(format!("{msg}; over the {budget} s budget")),
            o => o,
        };
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        failed += usize::from(outcome.is_err());
        println!("[{tag}] {:>2} {name}: {msg} ({:.2} s / {budget} s)", i + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
