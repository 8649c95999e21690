use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use triplet_gcn::baselines::{densify, knn_score};
use triplet_gcn::metrics::{evaluate, stratified_split, stratified_split_subset, youden_threshold, MetricsTable};
use triplet_gcn::preprocess::{fit, transform};
use triplet_gcn::schema::{write_labels, write_triplets};
use triplet_gcn::{synth, train as fit_model, Checkpoint, Cohort, MetricsReport, Split};

use crate::data::{self, DataArgs, LABELS_FILE, PROVENANCE_FILE, SCHEMA_FILE, TRIPLETS_FILE};
use crate::error::{CliError, CliResult};
use crate::settings::{Settings, ThresholdMode};
use crate::Subset;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::file(path))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(CliError::file(path))
}

fn labels_of(cohort: &Cohort) -> CliResult<&[u8]> {
    cohort
        .labels()
        .ok_or_else(|| CliError::Usage("this command needs labels (--labels)".into()))
}

fn pick<T: Copy>(values: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| values[i]).collect()
}

/// Outer train/test split plus the validation slice carved out of train.
struct Splits {
    outer: Split,
    inner: Split,
}

fn splits(labels: &[u8], s: &Settings) -> CliResult<Splits> {
    let seed = s.train.seed;
    let outer = stratified_split(labels, s.test_fraction, seed)?;
    let inner = stratified_split_subset(&outer.train, labels, s.val_fraction, seed)?;
    Ok(Splits { outer, inner })
}

fn choose_threshold(mode: ThresholdMode, scores: &[f64], labels: &[u8]) -> CliResult<f64> {
    Ok(match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Youden => youden_threshold(scores, labels)?,
    })
}

fn report(scores: &[f64], labels: &[u8], rows: &[usize], threshold: f64, s: &Settings) -> CliResult<MetricsReport> {
    Ok(evaluate(&pick(scores, rows), &pick(labels, rows), threshold, s.bootstrap, s.train.seed)?)
}

pub fn synth(s: &Settings, out: &Path) -> CliResult<()> {
    let generated = synth::generate(&s.synth)?;
    let provenance = serde_json::to_string_pretty(&generated.provenance)
        .map_err(|e| CliError::Core(triplet_gcn::Error::Json(e)))?;
    fs::create_dir_all(out).map_err(CliError::file(out))?;
    let cohort = &generated.cohort;
    write_text(&out.join(SCHEMA_FILE), &cohort.schema().to_json())?;
    write_triplets(create(&out.join(TRIPLETS_FILE))?, cohort)?;
    write_labels(create(&out.join(LABELS_FILE))?, labels_of(cohort)?)?;
    write_text(&out.join(PROVENANCE_FILE), &provenance)?;
    println!(
        "wrote {} patients, {} records, prevalence {:.4} to {}",
        cohort.n_patients(),
        cohort.triplets().len(),
        generated.provenance.empirical_prevalence,
        out.display()
    );
    Ok(())
}

pub fn train(s: &Settings, data: &DataArgs, out: &Path, history_path: &Path) -> CliResult<()> {
    let loaded = data::load(data, true)?;
    let cohort = loaded.cohort.expect("labeled cohorts are non-empty");
    let labels = labels_of(&cohort)?;
    let sp = splits(labels, s)?;
    let (model, history) = fit_model::train(&cohort, &sp.inner.train, &sp.inner.test, &s.train)?;

    let probs = model.predict(&cohort)?;
    let threshold = choose_threshold(s.threshold, &pick(&probs, &sp.inner.test), &pick(labels, &sp.inner.test))?;
    let val = report(&probs, labels, &sp.inner.test, threshold, s)?;
    let test = report(&probs, labels, &sp.outer.test, threshold, s)?;

    Checkpoint::from_model(&model, threshold).save(create(out)?)?;
    history.write_csv(create(history_path)?)?;
    println!(
        "trained {} epochs (best {}), checkpoint {}",
        history.records.len(),
        history.best_epoch.map_or("none".to_string(), |e| e.to_string()),
        out.display()
    );
    print!("{}", MetricsTable(vec![("validation", &val), ("test", &test)]));
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let file = File::open(path).map_err(CliError::file(path))?;
    Ok(Checkpoint::load(std::io::BufReader::new(file))?)
}

pub fn eval(s: &Settings, checkpoint: &Path, data: &DataArgs, subset: Subset, out: Option<&Path>) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let loaded = data::load(data, true)?;
    ckpt.check_schema(&loaded.schema.fingerprint())?;
    let cohort = loaded.cohort.expect("labeled cohorts are non-empty");
    let labels = labels_of(&cohort)?;
    let rows: Vec<usize> = match subset {
        Subset::All => (0..cohort.n_patients()).collect(),
        Subset::Test => {
            let mut s = s.clone();
            s.train.seed = ckpt.train_config.seed;
            splits(labels, &s)?.outer.test
        }
    };
    let model = ckpt.model();
    let probs = model.predict(&cohort)?;
    let metrics = report(&probs, labels, &rows, ckpt.threshold, s)?;
    if let Some(path) = out {
        write_text(path, &metrics.to_json())?;
    }
    print!("{}", MetricsTable(vec![("Triplet-GCN", &metrics)]));
    Ok(())
}

pub fn predict(checkpoint: &Path, data: &DataArgs, out: &Path) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let loaded = data::load(data, false)?;
    ckpt.check_schema(&loaded.schema.fingerprint())?;
    let scores = match &loaded.cohort {
        Some(cohort) => ckpt.model().predict(cohort)?,
        None => Vec::new(),
    };
    let mut w = create(out)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "patient_id,score")?;
        for (i, p) in scores.iter().enumerate() {
            writeln!(w, "{i},{p:.6}")?;
        }
        w.flush()
    };
    emit().map_err(CliError::file(out))
}

pub fn baseline(s: &Settings, data: &DataArgs, out: Option<&Path>) -> CliResult<()> {
    let loaded = data::load(data, true)?;
    let cohort = loaded.cohort.expect("labeled cohorts are non-empty");
    let labels = labels_of(&cohort)?;
    let sp = splits(labels, s)?;
    let score = |train_rows: &[usize], test_rows: &[usize]| -> CliResult<Vec<f64>> {
        let stats = fit(&cohort, train_rows, s.train.preprocess_config())?;
        let design = densify(&transform(&cohort, &stats)?);
        Ok(knn_score(
            &design.select_rows(train_rows),
            &pick(labels, train_rows),
            &design.select_rows(test_rows),
            s.k,
        )?)
    };
    let threshold = match s.threshold {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Youden => {
            youden_threshold(&score(&sp.inner.train, &sp.inner.test)?, &pick(labels, &sp.inner.test))?
        }
    };
    let test_scores = score(&sp.outer.train, &sp.outer.test)?;
    let metrics = evaluate(&test_scores, &pick(labels, &sp.outer.test), threshold, s.bootstrap, s.train.seed)?;
    if let Some(path) = out {
        write_text(path, &metrics.to_json())?;
    }
    let name = format!("KNN (k={})", s.k);
    print!("{}", MetricsTable(vec![(&name, &metrics)]));
    Ok(())
}
