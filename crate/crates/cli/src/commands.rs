use std::path::Path;

use serde::Serialize;
use serde_json::json;

use prunebench::bench::{
    benchmark_interleaved, cis_overlap, compare_sparse_dense, profile, speedup_csv, speedup_table,
    BenchParams, BenchmarkReport,
};
use prunebench::model::{load_model, save_model};
use prunebench::pruning::{gru_sparsity, prune_structured, prune_unstructured};
use prunebench::reparam::{derive_config, resolve_config, standard_configs, PruneFraction, STANDARD_FRACTIONS};
use prunebench::training::{
    experiment_lr_sweep, experiment_prune_vs_direct, history_csv, loss, train, SynthConfig,
    SynthDataset, TrainConfig,
};
use prunebench::{build_model, ModelSpec, ModelWeights, Result};

use crate::manifest::{create_dir, read_json, write_json, write_text, RunManifest};
use crate::{
    usage, AblateCommon, AblateKind, BenchArgs, Cli, Command, DataArgs, EvalDataArgs, ModelSource,
    OptimArgs, ReportKind,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DeriveConfig(a) => derive(a),
        Command::Init(a) => {
            let params = resolve_config(&a.config)?;
            let w = build_model(ModelSpec::new(params, a.freq_bins)?, a.seed.seed);
            let mut m = RunManifest::new("init").seed("init", a.seed.seed);
            save_with_manifest(&w, &a.out, &mut m)?;
            println!("{} ({} parameters) -> {}", params, w.param_count(), a.out.display());
            Ok(())
        }
        Command::Train(a) => train_cmd("train", a),
        Command::Finetune(a) => train_cmd("finetune", a),
        Command::Prune(a) => {
            let w = load_model(&a.model)?;
            let (pruned, what) = match (&a.target, a.unstructured) {
                (Some(t), None) => {
                    let target = resolve_config(t)?;
                    (prune_structured(&w, target)?, format!("structured to {target}"))
                }
                (None, Some(f)) => (
                    prune_unstructured(&w, f)?,
                    format!("GRU magnitude pruning at {f}"),
                ),
                _ => return Err(usage("give exactly one of --target and --unstructured")),
            };
            let mut m = RunManifest::new("prune");
            save_with_manifest(&pruned, &a.out, &mut m)?;
            println!(
                "{what}: {} -> {} parameters, GRU sparsity {:.4} -> {}",
                w.param_count(),
                pruned.param_count(),
                gru_sparsity(&pruned),
                a.out.display()
            );
            Ok(())
        }
        Command::Eval(a) => {
            let w = load_model(&a.model)?;
            let set = eval_set(&a.eval, a.frames, a.snr_db, w.spec().freq_bins)?;
            let l = loss(&w, set.pairs())?;
            let out = json!({
                "model": a.model,
                "network_param": w.spec().params,
                "eval_loss": l,
                "eval_sequences": a.eval.eval_sequences,
                "eval_seed": a.eval.eval_seed,
            });
            println!("{}", serde_json::to_string(&out)?);
            if let Some(dir) = &a.out {
                create_dir(dir)?;
                let mut m = RunManifest::new("eval").seed("eval_data", a.eval.eval_seed);
                write_json(&dir.join("eval.json"), &out)?;
                m.artifact("eval.json");
                m.write(dir)?;
            }
            Ok(())
        }
        Command::Benchmark(a) => {
            let models = load_sources(&a.source, a.seed.seed)?;
            let reports = run_bench(&models, &bench_params(&a.bench, a.seed.seed))?;
            create_dir(&a.out)?;
            let mut m = RunManifest::new("benchmark").seed("input", a.seed.seed);
            write_reports(&a.out, &reports, &mut m)?;
            m.write(&a.out)?;
            print_reports(&reports);
            Ok(())
        }
        Command::Profile(a) => {
            let models = load_sources(&a.source, a.seed.seed)?;
            let mut rows = Vec::new();
            for (name, w) in &models {
                let p = profile(w, a.frames, a.repeats, a.seed.seed)?;
                let f = p.fractions();
                println!(
                    "{name}: recurrent {:.1}%, conv/deconv {:.1}%, other {:.1}%",
                    100.0 * f.recurrent,
                    100.0 * f.conv_deconv,
                    100.0 * f.other
                );
                rows.push(json!({
                    "config_name": name,
                    "network_param": w.spec().params,
                    "freq_bins": w.spec().freq_bins,
                    "seconds": p,
                    "fractions": f,
                }));
            }
            println!("{}", serde_json::to_string(&rows)?);
            if let Some(dir) = &a.out {
                create_dir(dir)?;
                let mut m = RunManifest::new("profile").seed("input", a.seed.seed);
                write_json(&dir.join("profile.json"), &rows)?;
                m.artifact("profile.json");
                m.write(dir)?;
            }
            Ok(())
        }
        Command::Compare(a) => {
            debug_assert!(a.sparse);
            let models = load_sources(&a.source, a.seed.seed)?;
            let [(_, base)] = <[_; 1]>::try_from(models)
                .map_err(|_| usage("compare --sparse takes exactly one model"))?;
            let reports = compare_sparse_dense(&base, &a.fracs, &bench_params(&a.bench, a.seed.seed))?;
            let overlap = reports
                .iter()
                .enumerate()
                .all(|(i, r)| reports[i + 1..].iter().all(|s| cis_overlap(r, s)));
            create_dir(&a.out)?;
            let mut m = RunManifest::new("compare").seed("input", a.seed.seed);
            write_reports(&a.out, &reports, &mut m)?;
            write_json(&a.out.join("compare.json"), &json!({ "all_pairwise_cis_overlap": overlap }))?;
            m.artifact("compare.json");
            m.write(&a.out)?;
            print_reports(&reports);
            println!("all pairwise 95% CIs overlap: {overlap}");
            Ok(())
        }
        Command::Report {
            kind:
                ReportKind::Speedup {
                    reports,
                    baseline,
                    out,
                },
        } => {
            let mut all: Vec<BenchmarkReport> = Vec::new();
            for path in &reports {
                all.extend(read_json::<Vec<BenchmarkReport>>(path)?);
            }
            let rows = speedup_table(&all, &baseline)?;
            create_dir(&out)?;
            let mut m = RunManifest::new("report speedup");
            let csv = speedup_csv(&rows);
            write_text(&out.join("speedup.csv"), &csv)?;
            write_json(&out.join("speedup.json"), &rows)?;
            m.artifact("speedup.csv");
            m.artifact("speedup.json");
            m.write(&out)?;
            print!("{csv}");
            Ok(())
        }
        Command::Ablate { kind } => ablate(kind),
    }
}

fn derive(a: crate::DeriveConfigArgs) -> Result<()> {
    let base = resolve_config(&a.base)?;
    if a.all {
        let mut rows = vec![("base".to_string(), base)];
        for (name, p) in STANDARD_FRACTIONS {
            rows.push((name.to_string(), derive_config(base, PruneFraction::new(p)?)?));
        }
        if a.json {
            let v: Vec<_> = rows.iter().map(|(n, c)| json!({ "name": n, "network_param": c })).collect();
            println!("{}", serde_json::to_string(&v)?);
        } else {
            for (n, c) in rows {
                println!("{n}\t{c}");
            }
        }
        return Ok(());
    }
    let p = a.fraction.ok_or_else(|| usage("--fraction is required without --all"))?;
    let cfg = derive_config(base, PruneFraction::new(p)?)?;
    if a.json {
        println!("{}", json!({ "base": base, "fraction": p, "network_param": cfg }));
    } else {
        println!("{cfg}");
    }
    Ok(())
}

fn save_with_manifest(w: &ModelWeights, dir: &Path, m: &mut RunManifest) -> Result<()> {
    save_model(w, dir)?;
    m.artifact(prunebench::model::MANIFEST_FILE);
    m.artifact(prunebench::model::WEIGHTS_FILE);
    m.write(dir)
}

fn train_config(o: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: o.lr,
        epochs: o.epochs,
        batch_size: o.batch_size,
        seed,
        ..TrainConfig::default()
    }
}

fn train_set(d: &DataArgs, freq_bins: usize) -> Result<SynthDataset> {
    SynthDataset::generate(SynthConfig {
        num_sequences: d.sequences,
        frames_per_sequence: d.frames,
        freq_bins,
        snr_db: d.snr_db,
        seed: d.data_seed,
    })
}

fn eval_set(e: &EvalDataArgs, frames: usize, snr_db: f64, freq_bins: usize) -> Result<SynthDataset> {
    SynthDataset::generate(SynthConfig {
        num_sequences: e.eval_sequences,
        frames_per_sequence: frames,
        freq_bins,
        snr_db,
        seed: e.eval_seed,
    })
}

fn train_cmd(name: &str, a: crate::TrainArgs) -> Result<()> {
    let w = load_model(&a.model)?;
    let data = train_set(&a.data, w.spec().freq_bins)?;
    let cfg = train_config(&a.optim, a.seed.seed);
    let r = train(&w, &data, &cfg)?;
    let mut m = RunManifest::new(name)
        .seed("shuffle", cfg.seed)
        .seed("train_data", a.data.data_seed);
    save_with_manifest(&r.weights, &a.out, &mut m)?;
    write_text(&a.out.join("history.csv"), &history_csv(&[(name, &r.history)]))?;
    write_json(
        &a.out.join("train.json"),
        &json!({ "config": cfg, "history": r.history, "final_train_loss": r.history.last() }),
    )?;
    m.artifact("history.csv");
    m.artifact("train.json");
    m.write(&a.out)?;
    println!(
        "{name}: {} epochs, train loss {:.6e} -> {:.6e}; saved to {}",
        cfg.epochs,
        r.history[0],
        r.history[r.history.len() - 1],
        a.out.display()
    );
    Ok(())
}

fn bench_params(b: &BenchArgs, seed: u64) -> BenchParams {
    BenchParams {
        frames_per_sample: b.frames_per_sample,
        samples: b.samples,
        warmup: b.warmup,
        seed,
    }
}

fn load_sources(src: &ModelSource, seed: u64) -> Result<Vec<(String, ModelWeights)>> {
    let mut out = Vec::new();
    for dir in &src.models {
        let w = load_model(dir)?;
        let name = standard_configs()
            .into_iter()
            .find(|(_, c)| *c == w.spec().params)
            .map(|(n, _)| n)
            .unwrap_or_else(|| dir.display().to_string());
        out.push((name, w));
    }
    for c in &src.configs {
        let spec = ModelSpec::new(resolve_config(c)?, src.freq_bins)?;
        out.push((c.clone(), build_model(spec, seed)));
    }
    if out.is_empty() {
        return Err(usage("give at least one --model or --config"));
    }
    Ok(out)
}

fn run_bench(models: &[(String, ModelWeights)], params: &BenchParams) -> Result<Vec<BenchmarkReport>> {
    let refs: Vec<(&str, &ModelWeights)> = models.iter().map(|(n, w)| (n.as_str(), w)).collect();
    benchmark_interleaved(&refs, params)
}

fn write_reports(dir: &Path, reports: &[BenchmarkReport], m: &mut RunManifest) -> Result<()> {
    write_json(&dir.join("reports.json"), reports)?;
    let rows = speedup_table(reports, &reports[0].config_name)?;
    write_text(&dir.join("benchmark.csv"), &speedup_csv(&rows))?;
    m.artifact("reports.json");
    m.artifact("benchmark.csv");
    Ok(())
}

fn print_reports(reports: &[BenchmarkReport]) {
    for r in reports {
        println!(
            "{:<16} {:>10.4} ms/frame ± {:.4} (95% CI, n={})  {:>8.3} MB",
            r.config_name, r.mean_ms_per_frame, r.ci95_half_width_ms, r.samples, r.memory_mb
        );
    }
}

#[derive(Serialize)]
struct PruneVsDirectSummary {
    base: String,
    target: String,
    base_epochs: usize,
    finetune_epochs: usize,
    pruned_eval_loss: f64,
    finetuned_eval_loss: f64,
    direct_eval_loss: f64,
    relative_difference: f64,
}

fn ablate(kind: AblateKind) -> Result<()> {
    match kind {
        AblateKind::PruneVsDirect { common, base_epochs } => {
            let s = AblateSetup::new(&common)?;
            let r = experiment_prune_vs_direct(
                &s.base,
                base_epochs,
                s.target,
                &s.train_set,
                &s.eval_set,
                &s.cfg,
            )?;
            let summary = PruneVsDirectSummary {
                base: s.base.spec().params.to_string(),
                target: s.target.to_string(),
                base_epochs,
                finetune_epochs: s.cfg.epochs,
                pruned_eval_loss: r.pruned_eval_loss,
                finetuned_eval_loss: r.finetuned_eval_loss,
                direct_eval_loss: r.direct_eval_loss,
                relative_difference: (r.finetuned_eval_loss - r.direct_eval_loss).abs()
                    / r.direct_eval_loss,
            };
            let out = &common.out;
            create_dir(out)?;
            let mut m = s.manifest("ablate prune-vs-direct", &common);
            let csv = history_csv(&[
                ("finetune", &r.finetune_history),
                ("direct", &r.direct_history),
            ]);
            write_text(&out.join("history.csv"), &csv)?;
            write_json(&out.join("summary.json"), &summary)?;
            save_model(&r.finetuned, out.join("finetuned"))?;
            save_model(&r.direct, out.join("direct"))?;
            for a in ["history.csv", "summary.json", "finetuned/", "direct/"] {
                m.artifact(a);
            }
            m.write(out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        AblateKind::LrSweep { common, lrs } => {
            let s = AblateSetup::new(&common)?;
            let results =
                experiment_lr_sweep(&s.base, s.target, &s.train_set, &s.eval_set, &s.cfg, &lrs)?;
            let out = &common.out;
            create_dir(out)?;
            let mut m = s.manifest("ablate lr-sweep", &common);
            let mut csv = String::from("lr,final_train_loss,eval_loss\n");
            for r in &results {
                csv.push_str(&format!(
                    "{:e},{:.9e},{:.9e}\n",
                    r.learning_rate,
                    r.history.last().copied().unwrap_or(f64::NAN),
                    r.eval_loss
                ));
            }
            let names: Vec<String> = results.iter().map(|r| format!("lr={:e}", r.learning_rate)).collect();
            let arms: Vec<(&str, &[f64])> = names
                .iter()
                .zip(&results)
                .map(|(n, r)| (n.as_str(), r.history.as_slice()))
                .collect();
            write_text(&out.join("lr_sweep.csv"), &csv)?;
            write_text(&out.join("history.csv"), &history_csv(&arms))?;
            write_json(&out.join("lr_sweep.json"), &results)?;
            for a in ["lr_sweep.csv", "history.csv", "lr_sweep.json"] {
                m.artifact(a);
            }
            m.write(out)?;
            print!("{csv}");
            Ok(())
        }
    }
}

struct AblateSetup {
    base: ModelWeights,
    target: prunebench::NetworkParam,
    train_set: SynthDataset,
    eval_set: SynthDataset,
    cfg: TrainConfig,
}

impl AblateSetup {
    fn new(c: &AblateCommon) -> Result<Self> {
        let base = load_model(&c.model)?;
        let target = resolve_config(&c.target)?;
        if !target.fits_within(&base.spec().params) {
            return Err(usage(format!(
                "target {target} exceeds the base model's channels {}",
                base.spec().params
            )));
        }
        let f = base.spec().freq_bins;
        Ok(Self {
            train_set: train_set(&c.data, f)?,
            eval_set: eval_set(&c.eval, c.data.frames, c.data.snr_db, f)?,
            cfg: train_config(&c.optim, c.seed.seed),
            target,
            base,
        })
    }

    fn manifest(&self, name: &str, c: &AblateCommon) -> RunManifest {
        RunManifest::new(name)
            .seed("shuffle", self.cfg.seed)
            .seed("direct_init", self.cfg.seed.wrapping_add(1))
            .seed("train_data", c.data.data_seed)
            .seed("eval_data", c.eval.eval_seed)
    }
}
