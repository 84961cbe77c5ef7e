use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use least_volume::analysis::Analyzer;
use least_volume::checkpoint::{load_checkpoint, save_checkpoint};
use least_volume::data::{self, Dataset};
use least_volume::model::build_autoencoder;
use least_volume::objectives::{LossKind, RegularizerKind};
use least_volume::train::LambdaSchedule;
use least_volume::verify::{run_suite, SUITES};
use least_volume::Error;

use crate::config::{build_spec, resolve, Overrides};
use crate::{AnalyzeArgs, CliError, GendataArgs, TrainArgs, VerifyArgs};

const FACTOR_NAMES: [(&str, &[&str]); 3] =
    [("curve1d", &["x"]), ("surface2d", &["x", "y"]), ("circles", &["tx", "ty", "scale", "hue", "value"])];

/// Generator thread count from `LV_THREADS`, defaulting to the available cores.
pub fn generator_threads() -> Result<usize, CliError> {
    match std::env::var("LV_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(CliError::Usage(format!("LV_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn factors_csv(ds: &Dataset, kind: &str) -> Option<String> {
    let f = ds.factors.as_ref()?;
    let k = f.shape()[1];
    let names: Vec<String> = match FACTOR_NAMES.iter().find(|(n, _)| *n == kind) {
        Some((_, cols)) if cols.len() == k => cols.iter().map(|s| s.to_string()).collect(),
        _ => (0..k).map(|i| format!("factor_{i}")).collect(),
    };
    let mut s = format!("index,{}\n", names.join(","));
    for (i, row) in f.data().chunks_exact(k).enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{i},{}", vals.join(","));
    }
    Some(s)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".factors.csv");
    PathBuf::from(name)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(format!("cannot write {}", path.display())))
}

pub fn gendata(a: &GendataArgs) -> Result<(), CliError> {
    let ds = match a.kind.as_str() {
        "curve1d" => data::gen_curve1d(a.n.unwrap_or(50), a.seed)?,
        "surface2d" => data::gen_surface2d(a.n.unwrap_or(100), a.seed, a.noise)?,
        "circles" => data::gen_circles_parallel(a.n.unwrap_or(3000), a.size, a.seed, generator_threads()?)?,
        "idx" => {
            let input = a.input.as_ref().ok_or_else(|| CliError::Usage("idx needs --input".into()))?;
            data::load_idx(input, a.pad)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown dataset kind {other:?}; expected curve1d, surface2d, circles or idx"
            )))
        }
    };
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.lvds", a.kind)));
    data::save_dataset(&ds, &out).map_err(|e| match e {
        Error::Io(source) => CliError::Io { context: format!("cannot write {}", out.display()), source },
        e => e.into(),
    })?;
    if let Some(csv) = factors_csv(&ds, &a.kind) {
        write(&sidecar_path(&out), csv)?;
    }
    let shape: Vec<String> = ds.sample_shape().iter().map(|d| d.to_string()).collect();
    println!("n={} shape={} seed={} out={}", ds.len(), shape.join("x"), a.seed, out.display());
    Ok(())
}

fn train_overrides(a: &TrainArgs) -> Result<Overrides, CliError> {
    let mut t: Vec<(&'static str, toml::Value)> = Vec::new();
    let usage = |e: Error| CliError::Usage(e.to_string());
    if let Some(r) = &a.regularizer {
        let k: RegularizerKind = r.parse().map_err(usage)?;
        t.push(("regularizer", toml::Value::try_from(k).expect("enum serializes")));
    }
    if let Some(l) = &a.loss {
        let k: LossKind = l.parse().map_err(usage)?;
        t.push(("loss", toml::Value::try_from(k).expect("enum serializes")));
    }
    let int = |v: u64| toml::Value::Integer(v as i64);
    if let Some(v) = a.lambda {
        t.push(("lambda", toml::Value::Float(v)));
    }
    if let Some(v) = a.eta {
        t.push(("eta", toml::Value::Float(v)));
    }
    if let Some(v) = a.lr {
        t.push(("learning_rate", toml::Value::Float(v)));
    }
    if let Some(v) = a.epochs {
        t.push(("epochs", int(v as u64)));
    }
    if let Some(v) = a.batch_size {
        t.push(("batch_size", int(v as u64)));
    }
    if let Some(v) = a.seed {
        if v > i64::MAX as u64 {
            return Err(CliError::Usage(format!("seed {v} exceeds {}", i64::MAX)));
        }
        t.push(("seed", int(v)));
    }
    if let Some(v) = a.power_iterations {
        t.push(("power_iterations", int(v as u64)));
    }
    if let Some(epochs) = a.lambda_warmup {
        let s = LambdaSchedule::Warmup { epochs };
        t.push(("lambda_schedule", toml::Value::try_from(s).expect("schedule serializes")));
    }
    if a.no_timing {
        t.push(("record_time", toml::Value::Boolean(false)));
    }
    Ok(Overrides {
        arch: a.arch.clone(),
        latent_dim: a.latent_dim,
        no_spectral_norm: a.no_spectral_norm,
        data: a.data.clone(),
        train: t,
    })
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve(a.config.as_deref(), &train_overrides(a)?)?;
    let ds = data::load_dataset(&cfg.data)?;
    let spec = build_spec(&cfg, ds.sample_shape())?;
    fs::create_dir_all(&a.out).map_err(CliError::io(format!("cannot create {}", a.out.display())))?;
    write(&a.out.join("config.toml"), cfg.to_toml())?;
    let model = build_autoencoder(&spec, cfg.train.seed)?;
    eprintln!(
        "training {} (m={}) on {} samples for {} epochs",
        cfg.arch,
        spec.latent_dim,
        ds.len(),
        cfg.train.epochs
    );
    let (model, history) = least_volume::train::train(model, &ds.samples, &cfg.train)?;
    save_checkpoint(&model, a.out.join("model.lvae"))?;
    history.write_csv(a.out.join("history.csv"))?;
    if let Some(last) = history.last() {
        println!("epochs={} final={last:?} out={}", history.len(), a.out.display());
    }
    Ok(())
}

fn degenerate_summary(epsilon: f64, delta: f64, threshold: f64, reason: &str) -> String {
    format!(
        "epsilon,delta,embedding_ok,threshold,dim_estimate,plummet_index,plummet_low_confidence,pcc,bound_checks_passed,bound_checks_total,degenerate\n{epsilon},{delta},{},{threshold},undefined,undefined,undefined,undefined,0,0,\"{}\"\n",
        epsilon < delta,
        reason.replace('"', "'")
    )
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(CliError::Usage(format!("threshold {} must lie in (0, 1]", a.threshold)));
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = data::load_dataset(&a.data)?;
    if model.spec().input_shape != ds.sample_shape() {
        return Err(CliError::Usage(format!(
            "checkpoint expects samples of shape {:?}, data has {:?}",
            model.spec().input_shape,
            ds.sample_shape()
        )));
    }
    fs::create_dir_all(&a.out).map_err(CliError::io(format!("cannot create {}", a.out.display())))?;
    let analyzer = Analyzer::new(&model, &ds.samples)?;
    match analyzer.report(a.threshold, a.delta) {
        Ok(report) => {
            write(&a.out.join("dims.csv"), report.dims_csv())?;
            write(&a.out.join("summary.csv"), report.summary_csv())?;
            let mut bounds = String::from("prune_set,delta,bound,pass\n");
            for c in &report.bound_checks {
                let set: Vec<String> = c.prune_set.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(bounds, "{},{},{},{}", set.join(" "), c.delta, c.bound, c.pass);
            }
            write(&a.out.join("bounds.csv"), bounds)?;
            let pcc = report.pcc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
            println!(
                "epsilon={:.6} dim_estimate={} pcc={} bound_checks={}/{} out={}",
                report.epsilon,
                report.dim_estimate,
                pcc,
                report.bound_passes(),
                report.bound_checks.len(),
                a.out.display()
            );
            Ok(())
        }
        Err(Error::Degenerate(reason)) => {
            let eps = analyzer.baseline(least_volume::analysis::Metric::L2);
            write(&a.out.join("summary.csv"), degenerate_summary(eps, a.delta, a.threshold, &reason))?;
            let mut dims = String::from("dim_index,sigma,explained_reconstruction\n");
            for &i in &analyzer.stats().order_descending() {
                let _ = writeln!(dims, "{},{},undefined", i, analyzer.stats().std[i]);
            }
            write(&a.out.join("dims.csv"), dims)?;
            write(&a.out.join("bounds.csv"), "prune_set,delta,bound,pass\n")?;
            eprintln!("lvae: degenerate model: {reason}");
            println!("epsilon={eps:.6} degenerate=true out={}", a.out.display());
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    if !SUITES.contains(&a.suite.as_str()) {
        return Err(CliError::Usage(format!("unknown suite {:?}; expected one of {SUITES:?}", a.suite)));
    }
    let report = run_suite(&a.suite, a.seed)?;
    for c in &report.checks {
        println!("{} {} {:e} {} {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.measured, c.relation, c.tolerance);
    }
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("verify_{}.json", a.suite)));
    write(&out, report.to_json())?;
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    println!("suite {}: {}/{} checks passed, report {}", a.suite, report.checks.len() - failed, report.checks.len(), out.display());
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!("{failed} of {} checks in suite {} failed", report.checks.len(), a.suite)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar_path(Path::new("a/b.lvds")), PathBuf::from("a/b.lvds.factors.csv"));
    }

    #[test]
    fn factors_csv_names_columns() {
        let ds = data::gen_surface2d(4, 0, 0.1).unwrap();
        let csv = factors_csv(&ds, "surface2d").unwrap();
        assert!(csv.starts_with("index,x,y\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn degenerate_summary_marks_undefined() {
        let s = degenerate_summary(0.5, 0.05, 0.01, "collapsed");
        let rows: Vec<_> = s.lines().collect();
        assert_eq!(rows[0].split(',').count(), rows[1].split(',').count());
        assert!(rows[1].contains("undefined"));
    }
}
