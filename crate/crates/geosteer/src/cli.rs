//! `geosteer` entry point: config resolution and subcommand handlers.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use geosteer_core::diagnostics::{
    collapse_sweep, norm_profile, planted_direction_check, rank_drop, stacked_activations, SweepSetup,
};
use geosteer_core::eval::{mc_metrics, score_item, split, SplitSpec, SteerScope};
use geosteer_core::model::{detokenize, init_model, tokenize};
use geosteer_core::prototype::{build_prototype, extract_last_token};
use geosteer_core::{Intervention, Model, ModelConfig, Prototype, SteeringPlan};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::*;
use crate::data::{load_mc, load_pairs, load_probes, write_mc, write_pairs, write_probes};
use crate::error::{Error, Result};
use crate::formats::{
    load_activations, load_checkpoint, load_plan, load_prototype, plan_digest, read_string, save_activations,
    save_checkpoint, save_prototype, write_json, Mode, SteerParams,
};
use crate::report::{
    write_norm_profile_csv, write_planted_report, write_rank_report, write_results_csv, write_summary, write_sweep_csv,
};
use crate::synth::synth_data;

#[derive(Clone, Copy)]
struct Ui {
    quiet: bool,
}

macro_rules! say {
    ($ui:expr, $($arg:tt)*) => {
        if !$ui.quiet {
            println!($($arg)*);
        }
    };
}

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const THREADS_ENV: &str = "GEOSTEER_THREADS";

/// Runs one command line and returns the process exit status: 0 success,
/// 1 usage error, 2 data error, 3 numeric error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, argv: &[OsString]) -> Result<()> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let Some(command) = cli.command else {
        // `geosteer --config resolved.json` replays the recorded command.
        let Some(name) = file.as_ref().and_then(|f| f.get("command")).and_then(Value::as_str) else {
            return Err(Error::Usage("no subcommand given; see --help".into()));
        };
        let mut replay: Vec<OsString> = argv.iter().take(1).cloned().collect();
        replay.extend(name.split_whitespace().map(OsString::from));
        replay.extend(argv.iter().skip(1).cloned());
        let cli = Cli::try_parse_from(&replay).map_err(|e| Error::Usage(e.to_string()))?;
        if cli.command.is_none() {
            return Err(Error::Usage(format!("config names unknown command '{name}'")));
        }
        return dispatch(cli, &replay);
    };
    let name = command.name();
    if let Some(recorded) = file.as_ref().and_then(|f| f.get("command")) {
        if recorded.as_str() != Some(name) {
            return Err(Error::Usage(format!("config was recorded for {recorded}, not '{name}'")));
        }
    }
    let ui = Ui { quiet: cli.quiet };
    if !ui.quiet {
        eprintln!(
            "geosteer {name}: defaults mode=rotate kappa={DEFAULT_KAPPA} alpha={DEFAULT_ALPHA} beta={DEFAULT_BETA} \
         steer-scope=all split=all seed={DEFAULT_SEED} max-new-tokens={DEFAULT_MAX_NEW_TOKENS}"
        );
    }
    let pool = thread_pool()?;
    let f = file.as_ref();
    pool.install(|| match command {
        Command::InitModel(a) => cmd_init(merge(&a, f, name)?, ui),
        Command::SynthData(a) => cmd_synth(merge(&a, f, name)?, ui),
        Command::Extract(a) => cmd_extract(merge(&a, f, name)?, ui),
        Command::Prototype(a) => cmd_prototype(merge(&a, f, name)?, ui),
        Command::Generate(a) => cmd_generate(merge(&a, f, name)?, ui),
        Command::EvalMc(a) => cmd_eval(merge(&a, f, name)?, ui),
        Command::Diagnose(Diagnose::Norms(a)) => cmd_norms(merge(&a, f, name)?, ui),
        Command::Diagnose(Diagnose::Rank(a)) => cmd_rank(merge(&a, f, name)?, ui),
        Command::Diagnose(Diagnose::Planted(a)) => cmd_planted(merge(&a, f, name)?, ui),
        Command::Sweep(a) => cmd_sweep(merge(&a, f, name)?, ui),
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    match serde_json::from_str(&read_string(path)?) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(Error::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Config file values overlaid by explicitly given flags. Keys the command
/// does not accept are rejected.
fn merge<A: Serialize + DeserializeOwned>(flags: &A, file: Option<&Map<String, Value>>, command: &str) -> Result<A> {
    let Value::Object(cli) = serde_json::to_value(flags).expect("flag structs serialise") else {
        unreachable!("flag structs are objects")
    };
    let mut merged = Map::new();
    for (k, v) in file.into_iter().flatten() {
        if k == "command" {
            continue;
        }
        if !cli.contains_key(k) {
            return Err(Error::Usage(format!("config key '{k}' is not accepted by {command}")));
        }
        merged.insert(k.clone(), v.clone());
    }
    merged.extend(cli.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Usage(format!("config: {e}")))
}

/// Writes the resolved configuration, `command` included, into `dir`.
fn echo<A: Serialize>(resolved: &A, command: &str, dir: &Path) -> Result<()> {
    let Value::Object(fields) = serde_json::to_value(resolved).expect("flag structs serialise") else {
        unreachable!("flag structs are objects")
    };
    let mut map: Map<String, Value> = fields.into_iter().filter(|(_, v)| !v.is_null()).collect();
    map.insert("command".into(), Value::String(command.into()));
    write_json(&dir.join(RESOLVED_CONFIG), &Value::Object(map))
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Usage(format!("missing required --{flag}")))
}

/// Parameter errors caused by flag values are usage errors.
fn flag_error(e: geosteer_core::Error) -> Error {
    use geosteer_core::Error as E;
    match e {
        E::InvalidGateParams(_) | E::InvalidConfig(_) | E::InvalidPlan(_) => Error::Usage(e.to_string()),
        e => Error::Core(e),
    }
}

fn parent_dir(file: &Path) -> PathBuf {
    file.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

impl Common {
    fn fill(&mut self) -> Result<()> {
        self.seed.get_or_insert(DEFAULT_SEED);
        need(&self.out, "out")?;
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn out(&self) -> PathBuf {
        self.out.clone().expect("filled")
    }
}

impl Arch {
    fn fill(&mut self) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            d_model: *self.d_model.get_or_insert(d.d_model),
            n_layers: *self.n_layers.get_or_insert(d.n_layers),
            n_heads: *self.n_heads.get_or_insert(d.n_heads),
            vocab_size: *self.vocab_size.get_or_insert(d.vocab_size),
            max_seq_len: *self.max_seq_len.get_or_insert(d.max_seq_len),
            rms_eps: d.rms_eps,
        }
    }
}

impl Steer {
    /// Fills defaults when steering from prototypes and checks that flags are
    /// not mixed with a plan file.
    fn fill(&mut self) -> Result<()> {
        let p = &mut self.params;
        let any_param = p.mode.is_some()
            || p.alpha.is_some()
            || p.beta.is_some()
            || p.kappa.is_some()
            || p.lambda.is_some()
            || p.fixed_t.is_some();
        if self.source.plan.is_some() {
            if any_param {
                return Err(Error::Usage(
                    "steering parameters come from the plan file; drop the flags or --plan".into(),
                ));
            }
            return Ok(());
        }
        if self.source.prototypes.is_none() {
            if any_param {
                return Err(Error::Usage("steering parameters need --prototypes or --plan".into()));
            }
            return Ok(());
        }
        match *p.mode.get_or_insert(Mode::Rotate) {
            Mode::Add => {
                need(&p.lambda, "lambda")?;
                if p.fixed_t.is_some() || p.alpha.is_some() || p.beta.is_some() || p.kappa.is_some() {
                    return Err(Error::Usage("--mode add takes only --lambda".into()));
                }
            }
            Mode::Rotate => {
                if p.lambda.is_some() {
                    return Err(Error::Usage("--lambda applies to --mode add".into()));
                }
                if p.fixed_t.is_none() {
                    p.alpha.get_or_insert(DEFAULT_ALPHA);
                    p.beta.get_or_insert(DEFAULT_BETA);
                    p.kappa.get_or_insert(DEFAULT_KAPPA);
                } else if p.alpha.is_some() || p.beta.is_some() || p.kappa.is_some() {
                    return Err(Error::Usage("--fixed-t bypasses the gate; drop --alpha/--beta/--kappa".into()));
                }
            }
        }
        Ok(())
    }

    fn plan(&self) -> Result<Option<SteeringPlan>> {
        let prototypes = match self.source.load()? {
            Source::Unsteered => return Ok(None),
            Source::PlanFile(path) => return Ok(Some(load_plan(path)?)),
            Source::Prototypes(p) => p,
        };
        let p = &self.params;
        let params = SteerParams {
            mode: p.mode.unwrap_or(Mode::Rotate),
            alpha: p.alpha.unwrap_or(DEFAULT_ALPHA),
            beta: p.beta.unwrap_or(DEFAULT_BETA),
            kappa: p.kappa.unwrap_or(DEFAULT_KAPPA),
            lambda: p.lambda.unwrap_or(0.0),
            fixed_t: p.fixed_t,
        };
        let intervention = params.intervention().map_err(flag_error)?;
        Ok(Some(SteeringPlan::from_prototypes(prototypes, intervention).map_err(flag_error)?))
    }
}

enum Source<'a> {
    Unsteered,
    PlanFile(&'a Path),
    Prototypes(Vec<Prototype>),
}

impl PlanSource {
    fn load(&self) -> Result<Source<'_>> {
        if let Some(plan) = &self.plan {
            return Ok(Source::PlanFile(plan));
        }
        match &self.prototypes {
            None => Ok(Source::Unsteered),
            Some(paths) if paths.is_empty() => Err(Error::Usage("--prototypes needs at least one file".into())),
            Some(paths) => Ok(Source::Prototypes(paths.iter().map(|p| load_prototype(p)).collect::<Result<_>>()?)),
        }
    }

    /// Layers and prototypes only; the intervention is a placeholder.
    fn base_plan(&self) -> Result<SteeringPlan> {
        match self.load()? {
            Source::Unsteered => Err(Error::Usage("missing required --prototypes or --plan".into())),
            Source::PlanFile(path) => Ok(load_plan(path)?),
            Source::Prototypes(p) => {
                Ok(SteeringPlan::from_prototypes(p, Intervention::fixed(0.0)?).map_err(flag_error)?)
            }
        }
    }
}

fn scope(s: Option<ScopeArg>) -> SteerScope {
    match s.unwrap_or(ScopeArg::All) {
        ScopeArg::All => SteerScope::All,
        ScopeArg::AnswerOnly => SteerScope::AnswerOnly,
    }
}

fn select<T: Clone>(items: Vec<T>, which: Option<SplitArg>, seed: u64) -> Result<Vec<T>> {
    let which = which.unwrap_or(SplitArg::All);
    if which == SplitArg::All {
        return Ok(items);
    }
    let (train, val) = split(&items, SplitSpec { seed, ..SplitSpec::default() })?;
    Ok(if which == SplitArg::Train { train } else { val })
}

fn load_model(path: &Option<PathBuf>) -> Result<Model> {
    Ok(Model::from_checkpoint(&load_checkpoint(&need(path, "model")?)?)?)
}

fn cmd_init(mut a: InitArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    let config = a.arch.fill();
    let out = a.common.out();
    let ckpt = init_model(config, a.common.seed()).map_err(flag_error)?;
    save_checkpoint(&out, &ckpt)?;
    echo(&a, "init-model", &parent_dir(&out))?;
    say!(ui, "wrote {} ({} tensors)", out.display(), ckpt.tensors.len());
    Ok(())
}

fn cmd_synth(mut a: SynthArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    let dir = a.common.out();
    let data = synth_data(a.common.seed());
    write_pairs(&dir.join("pairs.jsonl"), &data.pairs)?;
    write_mc(&dir.join("mc.jsonl"), &data.items)?;
    write_probes(&dir.join("probes.txt"), &data.probes)?;
    echo(&a, "synth-data", &dir)?;
    say!(
        ui,
        "wrote {} pairs, {} MC items, {} probes to {}",
        data.pairs.len(),
        data.items.len(),
        data.probes.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_extract(mut a: ExtractArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.split.get_or_insert(SplitArg::All);
    let layers = need(&a.layers, "layers")?;
    let model = load_model(&a.model)?;
    let pairs = select(load_pairs(&need(&a.data, "data")?)?, a.split, a.common.seed())?;
    let records = extract_last_token(&model, &pairs, &layers)?;
    let out = a.common.out();
    save_activations(&out, &records)?;
    echo(&a, "extract", &parent_dir(&out))?;
    say!(ui, "wrote {} records from {} pairs to {}", records.len(), pairs.len(), out.display());
    Ok(())
}

fn cmd_prototype(mut a: PrototypeArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    let layer = need(&a.layer, "layer")?;
    let records = load_activations(&need(&a.acts, "acts")?)?;
    let prototype = build_prototype(&records, layer)?;
    let out = a.common.out();
    save_prototype(&out, &prototype)?;
    echo(&a, "prototype", &parent_dir(&out))?;
    say!(
        ui,
        "layer {layer}: {} pairs, |delta| = {}, wrote {}",
        prototype.n_pairs(),
        prototype.raw_delta_norm(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Generation {
    prompt: String,
    completion: String,
    tokens: Vec<u32>,
    plan_digest: String,
}

fn cmd_generate(mut a: GenerateArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.steer.fill()?;
    let max_new = *a.max_new_tokens.get_or_insert(DEFAULT_MAX_NEW_TOKENS);
    let prompt = need(&a.prompt, "prompt")?;
    let model = load_model(&a.model)?;
    let plan = a.steer.plan()?;
    let hooks = plan.as_ref().map(|p| p.hooks(0)).unwrap_or_default();
    let seq = model.generate_greedy(&tokenize(prompt.as_bytes()), max_new, &hooks)?;
    let new = seq.ids()[prompt.len()..].to_vec();
    let text = detokenize(&new, model.config().vocab_size)?;
    let dir = a.common.out();
    let generation = Generation {
        prompt,
        completion: String::from_utf8_lossy(&text).into_owned(),
        tokens: new,
        plan_digest: plan.as_ref().map_or_else(|| "none".into(), plan_digest),
    };
    write_json(&dir.join("generation.json"), &generation)?;
    echo(&a, "generate", &dir)?;
    say!(ui, "{}{}", generation.prompt, generation.completion);
    Ok(())
}

fn cmd_eval(mut a: EvalArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.steer.fill()?;
    a.steer_scope.get_or_insert(ScopeArg::All);
    a.split.get_or_insert(SplitArg::All);
    let model = load_model(&a.model)?;
    let items = select(load_mc(&need(&a.data, "data")?)?, a.split, a.common.seed())?;
    let plan = a.steer.plan()?;
    let scope = scope(a.steer_scope);
    // Collecting a parallel iterator keeps input order.
    let scores = items
        .par_iter()
        .map(|item| score_item(&model, plan.as_ref(), item, scope))
        .collect::<geosteer_core::Result<Vec<_>>>()?;
    let metrics = mc_metrics(&items, &scores)?;
    let dir = a.common.out();
    write_results_csv(&dir.join("results.csv"), &metrics)?;
    write_summary(&dir.join("summary.json"), &metrics, plan.as_ref().map(plan_digest))?;
    echo(&a, "eval-mc", &dir)?;
    say!(ui, "mc1={} mc2={} mc3={} n_items={}", metrics.mc1, metrics.mc2, metrics.mc3, items.len());
    Ok(())
}

fn cmd_norms(mut a: NormsArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.steer.fill()?;
    let model = load_model(&a.model)?;
    let pairs = load_pairs(&need(&a.data, "data")?)?;
    let plan = a.steer.plan()?;
    let profile = norm_profile(&model, &pairs, plan.as_ref())?;
    let dir = a.common.out();
    write_norm_profile_csv(&dir.join("norm_profile.csv"), &profile)?;
    echo(&a, "diagnose norms", &dir)?;
    for l in &profile.per_layer {
        say!(ui, "layer {}: mean_pos={} mean_neg={} delta={}", l.layer, l.mean_norm_pos, l.mean_norm_neg, l.delta_norm);
    }
    Ok(())
}

fn cmd_rank(mut a: RankArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.steer.fill()?;
    let model = load_model(&a.model)?;
    let probes = load_probes(&need(&a.probes, "probes")?)?;
    let plan = a.steer.plan()?.ok_or_else(|| Error::Usage("missing required --prototypes or --plan".into()))?;
    let layer = *a.layer.get_or_insert(plan.entries()[0].layer);
    let texts: Vec<&str> = probes.iter().map(String::as_str).collect();
    let report = rank_drop(&model, &plan, &texts, layer)?;
    let dir = a.common.out();
    write_rank_report(&dir, &report)?;
    echo(&a, "diagnose rank", &dir)?;
    say!(
        ui,
        "layer {layer}: effective rank {} -> {} (drop {})",
        report.effective_rank_pre,
        report.effective_rank_post,
        report.rank_drop
    );
    Ok(())
}

fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn cmd_planted(mut a: PlantedArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    let config = a.arch.fill();
    let grid = a.strengths.get_or_insert_with(default_grid).clone();
    let report = planted_direction_check(config, &grid, a.common.seed()).map_err(flag_error)?;
    let dir = a.common.out();
    write_planted_report(&dir, &report)?;
    echo(&a, "diagnose planted", &dir)?;
    say!(
        ui,
        "token {}: theta={} strictly_increasing={} argmax_at_full={} generated_at_full={}",
        report.token,
        report.theta,
        report.strictly_increasing,
        report.argmax_at_full,
        report.generated_at_full
    );
    Ok(())
}

fn cmd_sweep(mut a: SweepArgs, ui: Ui) -> Result<()> {
    a.common.fill()?;
    a.steer_scope.get_or_insert(ScopeArg::All);
    let model = load_model(&a.model)?;
    let items = load_mc(&need(&a.data, "data")?)?;
    let probes = load_probes(&need(&a.probes, "probes")?)?;
    let texts: Vec<&str> = probes.iter().map(String::as_str).collect();
    let base = a.source.base_plan()?;
    let rotate = a.strengths.get_or_insert_with(|| (1..=10).map(|i| i as f64 / 10.0).collect()).clone();
    let add = match &a.lambdas {
        Some(l) => l.clone(),
        None => {
            let scale = mean_probe_norm(&model, &base, &texts)?;
            a.lambdas.insert((1..=10).map(|i| i as f64 / 5.0 * scale).collect()).clone()
        }
    };
    let scope = scope(a.steer_scope);
    let runs: Vec<(&[f64], &[f64])> = rotate
        .iter()
        .map(|t| (std::slice::from_ref(t), &[][..]))
        .chain(add.iter().map(|l| (&[][..], std::slice::from_ref(l))))
        .collect();
    if !is_ascending(&rotate) || !is_ascending(&add) {
        return Err(Error::Usage("--strengths and --lambdas must be ascending".into()));
    }
    // Points are independent; collecting keeps them in strength order.
    let points = runs
        .par_iter()
        .map(|(r, l)| {
            let setup = SweepSetup {
                base_plan: &base,
                rotate_strengths: r,
                add_strengths: l,
                items: &items,
                probe_texts: &texts,
                scope,
            };
            collapse_sweep(&model, &setup)
        })
        .collect::<geosteer_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let dir = a.common.out();
    write_sweep_csv(&dir.join("sweep.csv"), &points)?;
    echo(&a, "sweep", &dir)?;
    for p in &points {
        say!(ui, "{} {}: mc1={} mc2={} rank_drop={}", p.mode.as_str(), p.strength, p.mc1, p.mc2, p.rank_drop);
    }
    Ok(())
}

fn is_ascending(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

/// Mean unsteered activation norm of the probe tokens at the plan's first layer.
fn mean_probe_norm(model: &Model, plan: &SteeringPlan, texts: &[&str]) -> Result<f64> {
    let (pre, _) = stacked_activations(model, plan, texts, plan.entries()[0].layer)?;
    let total: f64 = (0..pre.rows()).map(|r| (0..pre.cols()).map(|c| pre.get(r, c).powi(2)).sum::<f64>().sqrt()).sum();
    Ok(total / pre.rows() as f64)
}
