use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{PolicyVariant, RunConfig};
use super::data::Dataset;
use super::train::pretrain;
use crate::compression::{apply_policy, profile_sensitivity, CompressionPolicy, LayerSensitivity};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::sched::search::{candidates_tsv, schedule_summary, schedule_tsv};
use crate::sched::{build_graph, search_schedule, speedup_report, SearchOptions, Variant};
use crate::tensor::checkpoint::Checkpoint;
use crate::tuning::{
    build_exit_plan, evaluate_exits, generate, model_nll, tune_step, DecodeMode, ExitPlan,
};

/// What a stage wrote, plus a short human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

pub const TRAIN_LOG_HEADER: &str = "iter\texit\tloss\tupdated_layers\tretained_acts";

fn write(path: &Path, contents: &str, report: &mut StageReport) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    report.outputs.push(path.to_path_buf());
    Ok(())
}

fn save_checkpoint(ck: &Checkpoint, path: &Path, report: &mut StageReport) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ck.save(path)?;
    report.outputs.push(path.to_path_buf());
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(&cfg.paths.corpus, &cfg.model)
}

fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    Ok((Model::from_checkpoint(&ck)?, ck))
}

/// Trains the base model on the corpus and writes `base.ckpt` and the loss curve.
pub fn run_pretrain(cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let mut model = Model::init(&cfg.model)?;
    let losses = pretrain(&mut model, &data, &cfg.pretrain, cfg.seed)?;
    let mut rep = StageReport::default();
    save_checkpoint(&model.to_checkpoint(), &cfg.base_checkpoint(), &mut rep)?;
    let mut log = String::from("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(log, "{i}\t{l}");
    }
    write(&cfg.report("pretrain_loss.tsv"), &log, &mut rep)?;
    let held = data.held_out_windows(cfg.model.max_seq_len, cfg.eval.max_sequences);
    let nll = model_nll(&model, &held)?;
    rep.summary = format!(
        "pretrained {} steps: loss {:.4} -> {:.4}, held-out perplexity {:.3}",
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        nll.exp()
    );
    Ok(rep)
}

/// Per-layer sensitivities and the policy for `cfg.compression.variant`.
pub fn build_policy(
    cfg: &RunConfig,
    model: &Model,
    data: &Dataset,
) -> Result<(Vec<LayerSensitivity>, CompressionPolicy)> {
    let c = &cfg.compression;
    let calib = data.calibration(c.calib_sequences, c.calib_len);
    let sens = profile_sensitivity(model, &calib, c.base_bits, c.target_sparsity)?;
    let luc = || CompressionPolicy::from_sensitivities(&sens, c.base_bits, c.target_sparsity, c.rule());
    let policy = match c.variant {
        PolicyVariant::Luc => luc()?,
        PolicyVariant::Uniform => {
            CompressionPolicy::uniform(model.num_layers(), c.base_bits, c.target_sparsity)?
        }
        PolicyVariant::Random => luc()?.randomized(cfg.seed ^ 0x005e_ed0f_5417)?,
    };
    Ok((sens, policy))
}

/// Profiles the base model and writes the sensitivity tables and the policy file.
pub fn run_profile(cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let (model, _) = load_model(&cfg.base_checkpoint())?;
    let (sens, policy) = build_policy(cfg, &model, &data)?;
    let mut rep = StageReport::default();
    let mut table = String::from("layer\ts_quant\ts_prune\tbits\tsparsity\n");
    let mut quant = String::from("layer\ts_quant\n");
    let mut prune = String::from("layer\ts_prune\n");
    for (s, l) in sens.iter().zip(&policy.layers) {
        let _ = writeln!(table, "{}\t{}\t{}\t{}\t{:.9}", s.layer_index, s.s_quant, s.s_prune, l.bits, l.sparsity);
        let _ = writeln!(quant, "{}\t{}", s.layer_index, s.s_quant);
        let _ = writeln!(prune, "{}\t{}", s.layer_index, s.s_prune);
    }
    write(&cfg.report("sensitivity.tsv"), &table, &mut rep)?;
    write(&cfg.report("sensitivity_quant.tsv"), &quant, &mut rep)?;
    write(&cfg.report("sensitivity_prune.tsv"), &prune, &mut rep)?;
    write(&cfg.paths.policy, &policy.to_text(), &mut rep)?;
    rep.summary = format!(
        "{:?} policy: average bits {:.3}, mean sparsity {:.4}",
        cfg.compression.variant,
        policy.average_bits(),
        policy.mean_sparsity()
    );
    Ok(rep)
}

fn perplexity_row(iter: usize, ev: &crate::tuning::ExitEval) -> String {
    let mut s = iter.to_string();
    for i in 0..ev.exit_nll.len() {
        let _ = write!(s, "\t{}", ev.exit_perplexity(i));
    }
    let _ = write!(s, "\t{}", ev.vote_perplexity());
    s
}

/// Compresses the base model with the policy, then tunes adapters and exit heads.
pub fn run_tune(cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let (base, _) = load_model(&cfg.base_checkpoint())?;
    let policy = CompressionPolicy::load(&cfg.paths.policy)?;
    let mut model = apply_policy(&base, &policy)?;
    let t = &cfg.tuning;
    model.add_adapters(t.rank, t.alpha, cfg.seed)?;
    let mut plan = build_exit_plan(&model.cfg, t.exits, cfg.seed)?;
    let mut opt = Adam::momentum_free(t.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57_ab1e);
    let len = model.cfg.max_seq_len;
    let held = data.held_out_windows(len, cfg.eval.max_sequences);

    let mut log = format!("{TRAIN_LOG_HEADER}\n");
    let mut evals = String::from("iter");
    for i in 0..plan.num_exits() {
        let _ = write!(evals, "\texit{i}_ppl");
    }
    evals.push_str("\tvote_ppl\n");
    let first = evaluate_exits(&model, &plan, &held)?;
    let _ = writeln!(evals, "{}", perplexity_row(0, &first));
    let mut last = first.clone();
    let mut max_retained = 0;
    for it in 0..t.steps {
        let batch = data.batch(&mut rng, t.batch_size, len);
        let rec = tune_step(&mut model, &mut plan, &batch, &mut opt, &mut rng, it)?;
        max_retained = max_retained.max(rec.retained_acts);
        let _ = writeln!(log, "{rec}");
        let done = it + 1;
        if done == t.steps || (t.eval_every > 0 && done % t.eval_every == 0) {
            last = evaluate_exits(&model, &plan, &held)?;
            let _ = writeln!(evals, "{}", perplexity_row(done, &last));
        }
    }

    let mut rep = StageReport::default();
    let mut ck = model.to_checkpoint();
    plan.write_checkpoint(&mut ck);
    save_checkpoint(&ck, &cfg.tuned_checkpoint(), &mut rep)?;
    write(&cfg.report("train_log.tsv"), &log, &mut rep)?;
    write(&cfg.report("tune_eval.tsv"), &evals, &mut rep)?;
    let fin = plan.num_exits() - 1;
    rep.summary = format!(
        "tuned {} steps (window {} layers, at most {} blocks retained); final-exit perplexity {:.3} -> {:.3}",
        t.steps,
        plan.window,
        max_retained,
        first.exit_perplexity(fin),
        last.exit_perplexity(fin)
    );
    Ok(rep)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n").replace('\r', "\\r")
}

/// Held-out perplexity per exit, vote and model head, plus greedy samples.
/// Reads `checkpoint`, or the tuned checkpoint by default.
pub fn run_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<StageReport> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let path = checkpoint.map_or_else(|| cfg.tuned_checkpoint(), Path::to_path_buf);
    let (model, ck) = load_model(&path)?;
    let plan = match ck.get("meta.exits") {
        Some(_) => Some(ExitPlan::from_checkpoint(&ck, &model.cfg)?),
        None => None,
    };
    let held = data.held_out_windows(model.cfg.max_seq_len, cfg.eval.max_sequences);
    let mut table = String::from("head\tlayer\tnll\tperplexity\n");
    let mut samples = String::from("mode\ttext\n");
    let prompt = data.tokenizer.encode(&cfg.eval.sample_prompt);
    if prompt.is_empty() {
        return Err(Error::Input("sample prompt encodes to no tokens".into()));
    }
    let mut summary = String::new();
    if let Some(plan) = &plan {
        let ev = evaluate_exits(&model, plan, &held)?;
        for (i, e) in plan.exits.iter().enumerate() {
            let _ = writeln!(table, "exit{i}\t{}\t{}\t{}", e.backbone_layer, ev.exit_nll[i], ev.exit_perplexity(i));
        }
        let _ = writeln!(table, "vote\t-\t{}\t{}", ev.vote_nll, ev.vote_perplexity());
        let fin = plan.num_exits() - 1;
        let _ = write!(
            summary,
            "final-exit perplexity {:.3}, vote perplexity {:.3}; ",
            ev.exit_perplexity(fin),
            ev.vote_perplexity()
        );
        for (mode, name) in [(DecodeMode::FinalExit, "final_exit"), (DecodeMode::Vote, "vote")] {
            let out = generate(&model, plan, &prompt, cfg.eval.sample_tokens, mode)?;
            let _ = writeln!(samples, "{name}\t{}", escape(&data.tokenizer.decode(&out)));
        }
    }
    let nll = model_nll(&model, &held)?;
    let _ = writeln!(table, "model_head\t{}\t{}\t{}", model.num_layers() - 1, nll, nll.exp());
    let _ = write!(summary, "model-head perplexity {:.3} on {} held-out windows", nll.exp(), held.len());

    let mut rep = StageReport::default();
    write(&cfg.report("eval.tsv"), &table, &mut rep)?;
    if plan.is_some() {
        write(&cfg.report("samples.tsv"), &samples, &mut rep)?;
    }
    rep.summary = summary;
    Ok(rep)
}

/// Speedup of adaptive tuning variants over the dense baseline, from the best
/// schedule of each. `policies` defaults to the configured policy file.
pub fn run_schedule(cfg: &RunConfig, policies: &[PathBuf], dump: Option<&Path>) -> Result<StageReport> {
    cfg.validate()?;
    let paths: Vec<PathBuf> = if policies.is_empty() {
        vec![cfg.paths.policy.clone()]
    } else {
        policies.to_vec()
    };
    let mut variants = vec![
        Variant::Adaptive,
        Variant::PruneAdaptive {
            sparsity: cfg.compression.target_sparsity,
        },
    ];
    for p in &paths {
        let policy = CompressionPolicy::load(p)?;
        let label = p
            .file_stem()
            .map_or_else(|| "policy".to_string(), |s| s.to_string_lossy().into_owned());
        variants.push(Variant::PolicyAdaptive { label, policy });
    }
    let opts = SearchOptions {
        divisions: cfg.schedule.divisions,
        keep_candidates: false,
    };
    let l = cfg.model.num_layers;
    let report = speedup_report(&cfg.workload, &cfg.hardware, l, cfg.tuning.exits, &variants, &opts)?;

    // the dense baseline's search, with every priced candidate
    let dense = cfg.workload.workload(&cfg.workload.dense_layers(l), l - 1, 0..l)?;
    let full = search_schedule(
        &build_graph(&dense)?,
        &cfg.hardware,
        &SearchOptions {
            keep_candidates: dump.is_some(),
            ..opts
        },
    )?;

    let mut rep = StageReport::default();
    let mut table = report.to_tsv();
    table = table.replacen("\n", "\tplacement\n", 1);
    let mut lines: Vec<String> = table.lines().map(String::from).collect();
    for (line, row) in lines.iter_mut().skip(1).zip(&report.rows) {
        let _ = write!(line, "\t{}", row.schedule.placement);
    }
    write(&cfg.report("schedule.tsv"), &(lines.join("\n") + "\n"), &mut rep)?;
    write(&cfg.report("schedule_best.tsv"), &schedule_tsv(&full.best), &mut rep)?;
    let summary = format!(
        "{}dense baseline: {}\n",
        report.summary(),
        schedule_summary(&full.best)
    );
    write(&cfg.report("schedule_summary.txt"), &summary, &mut rep)?;
    if let Some(path) = dump {
        write(path, &candidates_tsv(&full.candidates), &mut rep)?;
    }
    rep.summary = summary.trim_end().to_string();
    Ok(rep)
}

/// Process exit status for an error: 1 usage or configuration, 2 data, 3 infeasible schedule.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Infeasible(_) => 3,
        _ => 2,
    }
}
