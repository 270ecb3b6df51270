use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hrvfair::dataset::{
    generate_synthetic, read_cohort, split_cohort, split_cohort_by_participant, standardize, write_cohort, Cohort,
    CohortPaths, SplitCohort,
};
use hrvfair::exec::Exec;
use hrvfair::fairness::{self, audit_dataset, audit_predictions};
use hrvfair::hrv::{self, EcgSignal, FeatureVector, NnIntervals};
use hrvfair::mitigation::{
    self, checkpoint_file_name, compare_models, evaluate_model, final_predict, train_baseline, train_reweighted,
    Predictions, TrainConfig, TrainRun,
};
use hrvfair::nnet::{self, ModelParams};
use hrvfair::saliency::average_saliency;
use serde::Serialize;

use crate::output::RunDir;
use crate::{
    AuditArgs, Cli, Command, DataArgs, ExecArg, ExtractArgs, HeadArg, SaliencyArgs, SplitArg, SynthArgs, TrainArgs,
};

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Extract(a) => extract(a, cli),
        Command::Synth(a) => synth(a, cli),
        Command::Audit(a) => audit(a, cli),
        Command::TrainBase(a) => train(a, cli, false),
        Command::ReweighTrain(a) => train(a, cli, true),
        Command::Mitigate(a) => mitigate(a, cli),
        Command::Saliency(a) => saliency(a, cli),
        Command::Compare(a) => compare(a, cli),
    }
}

fn command_name(cli: &Cli) -> &'static str {
    match cli.command {
        Command::Extract(_) => "extract",
        Command::Synth(_) => "synth",
        Command::Audit(_) => "audit",
        Command::TrainBase(_) => "train-base",
        Command::ReweighTrain(_) => "reweigh-train",
        Command::Mitigate(_) => "mitigate",
        Command::Saliency(_) => "saliency",
        Command::Compare(_) => "compare",
    }
}

fn load_cohort(d: &DataArgs) -> Result<Cohort> {
    let paths = CohortPaths { windows: d.windows.clone(), labels: d.labels.clone(), demographics: d.demo.clone() };
    let cohort = read_cohort(&paths)?;
    if !cohort.catalog().contains_key(&d.protected) {
        bail!(
            "{}: no protected attribute column {:?} (have {:?})",
            d.demo.display(),
            d.protected,
            cohort.attribute_names()
        );
    }
    Ok(cohort)
}

fn split(cohort: &Cohort, seed: u64, by_participant: bool) -> Result<SplitCohort> {
    let s = if by_participant { split_cohort_by_participant(cohort, seed)? } else { split_cohort(cohort, seed)? };
    Ok(standardize(&s).0)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        checkpoint_every: a.ckpt_every,
        task_weights: [a.anxiety_weight, a.protected_weight],
        mc_passes: a.mc_passes,
        keep_rate: a.keep_rate,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        lstm_hidden: a.hidden,
        dense_hidden: a.dense,
        eval_on_heldout: a.heldout_uncertainty,
        exec: match a.exec {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn predictions_csv(cohort: &Cohort, preds: &Predictions) -> Vec<u8> {
    let mut out = String::from("sample_id,probability,prediction\n");
    for ((w, p), y) in cohort.windows().iter().zip(&preds.probabilities).zip(&preds.labels) {
        out.push_str(&format!("{},{p},{y}\n", w.sample_id));
    }
    out.into_bytes()
}

fn extract(a: &ExtractArgs, cli: &Cli) -> Result<()> {
    let mut out = RunDir::create(&a.out)?;
    #[derive(Serialize)]
    struct Row<'a> {
        source: &'a Path,
        vlf_unresolved: bool,
        spectrum_undefined: bool,
        poincare_degenerate: bool,
    }
    let sources = if a.ecg.is_empty() { &a.nni } else { &a.ecg };
    let mut rows: Vec<FeatureVector> = Vec::new();
    let mut meta = Vec::new();
    for path in sources {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let features = if a.ecg.is_empty() {
            hrv::extract_features(&NnIntervals::read_csv(file).with_context(|| path.display().to_string())?)
        } else {
            hrv::features_from_ecg(&EcgSignal::read_csv(file).with_context(|| path.display().to_string())?)
        }
        .with_context(|| path.display().to_string())?;
        meta.push(Row {
            source: path,
            vlf_unresolved: features.flags.vlf_unresolved,
            spectrum_undefined: features.flags.spectrum_undefined,
            poincare_degenerate: features.flags.poincare_degenerate,
        });
        rows.push(features);
    }
    let mut csv = Vec::new();
    hrv::write_features_csv(&mut csv, &rows)?;
    out.write("features.csv", &csv)?;
    out.write_json("sources.json", &meta)?;
    out.finish(command_name(cli), None, cli)
}

fn synth(a: &SynthArgs, cli: &Cli) -> Result<()> {
    let cohort = generate_synthetic(a.n, a.bias_strength, a.seed)?;
    let mut out = RunDir::create(&a.out)?;
    let staging = out.path(".staging");
    let written = write_cohort(&cohort, &staging)?;
    for p in [&written.windows, &written.labels, &written.demographics, &staging.join("catalog.json")] {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        out.write(&name, &fs::read(p)?)?;
    }
    fs::remove_dir_all(&staging).ok();
    out.write_json("report.json", &audit_dataset(&cohort, hrvfair::dataset::SYNTH_ATTRIBUTE)?)?;
    out.finish(command_name(cli), Some(a.seed), cli)
}

fn read_predictions(path: &Path, cohort: &Cohort) -> Result<Vec<u8>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).with_context(|| format!("{}: missing column {name}", path.display()))
    };
    let (sid, pred) = (col("sample_id")?, col("prediction")?);
    let mut by_id = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| path.display().to_string())?;
        let v: u8 = rec[pred].trim().parse().with_context(|| format!("{}: bad prediction {:?}", path.display(), &rec[pred]))?;
        if v > 1 {
            bail!("{}: prediction {v} is not binary", path.display());
        }
        by_id.insert(rec[sid].to_string(), v);
    }
    cohort
        .windows()
        .iter()
        .map(|w| by_id.get(&w.sample_id).copied().with_context(|| format!("{}: no prediction for {}", path.display(), w.sample_id)))
        .collect()
}

fn audit(a: &AuditArgs, cli: &Cli) -> Result<()> {
    let cohort = load_cohort(&a.data)?;
    let mut out = RunDir::create(&a.out)?;
    let report = match &a.predictions {
        None => audit_dataset(&cohort, &a.data.protected)?,
        Some(p) => {
            let preds = read_predictions(p, &cohort)?;
            audit_predictions(&preds, &cohort.labels(), &cohort.groups(&a.data.protected)?, &a.data.protected)?
        }
    };
    log::info!("{}: DIR {:.3} (in bounds: {})", report.attribute, report.dir, report.in_bounds);
    out.write_json("report.json", &report)?;
    out.finish(command_name(cli), None, cli)
}

fn write_model(out: &mut RunDir, name: &str, params: &ModelParams) -> Result<()> {
    out.write(name, &nnet::write_checkpoint(params))
}

fn write_run(out: &mut RunDir, run: &TrainRun) -> Result<()> {
    out.write_json("history.json", &run.history)
}

fn train(a: &TrainArgs, cli: &Cli, reweigh: bool) -> Result<()> {
    let cfg = train_config(a)?;
    let cohort = load_cohort(&a.data)?;
    let s = split(&cohort, a.seed, a.by_participant)?;
    let mut out = RunDir::create(&a.out)?;
    let run = if reweigh {
        let labels = s.train.labels();
        let groups = s.train.groups(&a.data.protected)?;
        let w = fairness::reweigh_weights(&labels, &groups)?;
        out.write_json("weights.json", &w)?;
        train_reweighted(&s.train, &cfg, &w.sample_weights(&labels, &groups))?
    } else {
        train_baseline(&s.train, &cfg)?
    };
    let preds = final_predict(&run.params, &s.test, 0.5)?;
    let scores = evaluate_model(&preds, &s.test, &a.data.protected)?;
    log::info!("test accuracy {:.3}, DIR {:?}", scores.accuracy, scores.dir);
    write_model(&mut out, "model.bin", &run.params)?;
    write_run(&mut out, &run)?;
    out.write("predictions.csv", &predictions_csv(&s.test, &preds))?;
    out.write_json("report.json", &scores)?;
    out.finish(command_name(cli), Some(a.seed), cli)
}

fn mitigate(a: &TrainArgs, cli: &Cli) -> Result<()> {
    let cfg = train_config(a)?;
    let cohort = load_cohort(&a.data)?;
    let s = split(&cohort, a.seed, a.by_participant)?;
    let mut out = RunDir::create(&a.out)?;
    let ckpt_dir = out.path("checkpoints");
    let outcome = mitigation::mitigate(&s, &a.data.protected, &cfg, Some(&ckpt_dir))?;
    for ck in &outcome.run.checkpoints {
        out.record(&format!("checkpoints/{}", checkpoint_file_name(ck.epoch())))?;
    }
    #[derive(Serialize)]
    struct Rec {
        epoch: u32,
        c_anxiety: f64,
        c_protected: f64,
        gap: f64,
    }
    let records: Vec<Rec> = outcome
        .records
        .iter()
        .map(|r| Rec { epoch: r.epoch, c_anxiety: r.c_anxiety, c_protected: r.c_protected, gap: r.gap() })
        .collect();
    out.write_json("uncertainty.json", &records)?;
    out.write_json("selection.json", &outcome.selection)?;
    let scores = evaluate_model(&outcome.predictions, &s.test, &a.data.protected)?;
    log::info!(
        "selected epoch {} (gap {:.5}); test accuracy {:.3}, DIR {:?}",
        outcome.selection.chosen_epoch,
        outcome.selection.gap,
        scores.accuracy,
        scores.dir
    );
    write_model(&mut out, "model.bin", &outcome.selected)?;
    write_run(&mut out, &outcome.run)?;
    out.write("predictions.csv", &predictions_csv(&s.test, &outcome.predictions))?;
    out.write_json("report.json", &scores)?;
    out.finish(command_name(cli), Some(a.seed), cli)
}

fn saliency(a: &SaliencyArgs, cli: &Cli) -> Result<()> {
    let cohort = load_cohort(&a.data)?;
    let params = nnet::load_checkpoint(&a.model).with_context(|| a.model.display().to_string())?;
    let head = match a.head {
        HeadArg::Anxiety => 0,
        HeadArg::Protected => 1,
    };
    if head >= params.architecture().heads {
        bail!("{}: model has no {:?} head", a.model.display(), a.head);
    }
    let s = split(&cohort, a.seed, a.by_participant)?;
    let target = match a.split {
        SplitArg::Test => s.test,
        SplitArg::Train => s.train,
        SplitArg::All => {
            let train = s.train.windows().iter().chain(s.test.windows()).cloned().collect();
            Cohort::new(train, s.train.catalog().clone())?
        }
    };
    let map = average_saliency(&params, &target, head, Exec::default())?;
    let mut out = RunDir::create(&a.out)?;
    let mut signed = Vec::new();
    map.write_csv(&mut signed)?;
    out.write("saliency.csv", &signed)?;
    let mut abs = Vec::new();
    map.magnitude().write_csv(&mut abs)?;
    out.write("saliency_abs.csv", &abs)?;
    out.write("saliency.svg", map.to_svg().as_bytes())?;
    out.finish(command_name(cli), Some(a.seed), cli)
}

fn compare(a: &TrainArgs, cli: &Cli) -> Result<()> {
    let cfg = train_config(a)?;
    let cohort = load_cohort(&a.data)?;
    let s = split(&cohort, a.seed, a.by_participant)?;
    let table = compare_models(&s, &a.data.protected, &cfg)?;
    let text = table.render();
    print!("{text}");
    let mut out = RunDir::create(&a.out)?;
    out.write_json("comparison.json", &table)?;
    out.write("comparison.txt", text.as_bytes())?;
    out.finish(command_name(cli), Some(a.seed), cli)
}
