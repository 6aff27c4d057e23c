use std::fs;
use std::io::{self, Write};
use std::path::Path;

use credit_lens::credit::{
    categorical_mean_verdict, check_analysis, epsilon_sparsity_classify, information_sparsity,
    Analysis,
};
use credit_lens::engine::DEFAULT_MERGE_TOL;
use credit_lens::info::Nats;
use credit_lens::mc::{convergence_sweep, PluginOptions};
use credit_lens::mdp::{apply_shaping, PolicySet};
use credit_lens::report::{exact_reports, write_verdicts_json, Measure, ReportOptions, Units};
use credit_lens::{Error, Result};

use crate::input::{self, Source};
use crate::{Format, RunConfig};

fn source(cfg: &RunConfig) -> Result<Source> {
    match (&cfg.mdp, &cfg.generator) {
        (Some(path), _) => input::load(path),
        (None, Some(spec)) => input::generate(spec),
        (None, None) => Err(Error::InvalidParameter(
            "one of --mdp or --gen is required".into(),
        )),
    }
}

fn measures(cfg: &RunConfig, default: Measure) -> Result<Vec<Measure>> {
    match cfg.measure.as_deref().map(str::trim) {
        None | Some("") => Ok(vec![default]),
        Some("all") => Ok(Measure::ALL.to_vec()),
        Some(list) => list.split(',').map(str::parse).collect(),
    }
}

fn units(cfg: &RunConfig) -> Units {
    if cfg.bits {
        Units::Bits
    } else {
        Units::Nats
    }
}

fn report_options(cfg: &RunConfig) -> ReportOptions {
    ReportOptions {
        tolerance: cfg.tol,
        units: units(cfg),
        marginalize_time: cfg.marginalize_time,
    }
}

fn show(v: Nats, u: Units) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{:.6}", u.convert(v))
    }
}

/// Writes to `--out` through a temporary file renamed into place, or to
/// standard output.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let Some(path) = out else {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        return write(&mut lock).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        });
    };
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => ".".into(),
    };
    if !dir.is_dir() {
        fs::create_dir_all(&dir).map_err(io_err)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    write(&mut io::BufWriter::new(tmp.as_file_mut())).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<u8> {
    let src = source(cfg)?;
    let pis = input::policies(&src, &cfg.policy)?;
    let measures = measures(cfg, Measure::InfoSparsity)?;
    let an = Analysis::new(&src.mdp, &pis[0], cfg.budget, DEFAULT_MERGE_TOL)?;
    let set = exact_reports(&an, &measures, report_options(cfg))?;
    let u = units(cfg);
    let unit_name = if cfg.bits { "bits" } else { "nats" };
    for r in &set.reports {
        if let Some(v) = r.scalar() {
            println!("{}={} {unit_name}", r.measure, show(v, u));
        }
    }
    if let Some(eps) = cfg.epsilon {
        let set = PolicySet::new(&src.mdp, pis.clone())?;
        let eps_nats = if cfg.bits {
            eps * std::f64::consts::LN_2
        } else {
            eps
        };
        let c = epsilon_sparsity_classify(&src.mdp, &set, eps_nats, cfg.budget, DEFAULT_MERGE_TOL)?;
        println!("is_sparse={} sup={}", c.is_sparse, show(c.sup, u));
    }
    emit(cfg.out.as_deref(), |w| match cfg.format {
        Format::Csv => set.write_csv(w),
        Format::Json => set.write_json(w),
    })?;
    Ok(0)
}

pub fn check(cfg: &RunConfig) -> Result<u8> {
    let src = source(cfg)?;
    let pis = input::policies(&src, &cfg.policy)?;
    let an = Analysis::new(&src.mdp, &pis[0], cfg.budget, DEFAULT_MERGE_TOL)?;
    let mut verdicts = check_analysis(&an, cfg.tol)?;
    verdicts.push(categorical_mean_verdict(&src.mdp, &pis[0], cfg.atoms)?);
    let failures: Vec<_> = verdicts.iter().filter(|v| v.is_failure()).collect();
    for v in &failures {
        let at = v.h.map(|h| format!(" h={h}")).unwrap_or_default();
        println!(
            "discrepant {}{at}: lhs={:.12} rhs={:.12} diff={:.3e}",
            v.id, v.lhs, v.rhs, v.abs_diff
        );
    }
    println!("verdicts={} discrepant={}", verdicts.len(), failures.len());
    emit(cfg.out.as_deref(), |w| write_verdicts_json(&verdicts, w))?;
    Ok(if failures.is_empty() { 0 } else { 1 })
}

pub fn sweep(cfg: &RunConfig) -> Result<u8> {
    let src = source(cfg)?;
    let pis = input::policies(&src, &cfg.policy)?;
    let transforms = input::transforms(&src, &cfg.transforms)?;
    let mut rows = Vec::with_capacity(transforms.len());
    for t in &transforms {
        let m = match &t.transform {
            Some(tr) => apply_shaping(&src.mdp, tr)?,
            None => src.mdp.clone(),
        };
        let an = Analysis::new(&m, &pis[0], cfg.budget, DEFAULT_MERGE_TOL)?;
        rows.push((t.name.clone(), information_sparsity(&an)?));
    }
    // largest first; ties keep the order they were given in
    rows.sort_by(|a, b| b.1.value().total_cmp(&a.1.value()));
    let u = units(cfg);
    for (name, v) in &rows {
        println!("{name}\t{}", show(*v, u));
    }
    emit(cfg.out.as_deref(), |w| match cfg.format {
        Format::Csv => {
            writeln!(w, "transform,info_sparsity_nats,info_sparsity_bits")?;
            for (name, v) in &rows {
                writeln!(w, "{name},{:.12e},{:.12e}", v.value(), v.bits())?;
            }
            Ok(())
        }
        Format::Json => {
            let list: Vec<_> = rows
                .iter()
                .map(|(name, v)| {
                    serde_json::json!({
                        "transform": name,
                        "info_sparsity_nats": v.value(),
                        "info_sparsity_bits": v.bits(),
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut *w, &list)?;
            writeln!(w)
        }
    })?;
    Ok(0)
}

pub fn sample(cfg: &RunConfig) -> Result<u8> {
    // validate cheap arguments before any sampling
    let measures = measures(cfg, Measure::InfoSparsity)?;
    let n_grid = input::sizes(&cfg.n_grid)?;
    let src = source(cfg)?;
    let pis = input::policies(&src, &cfg.policy)?;
    let seeds: Vec<u64> = (0..cfg.seed_count)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let opts = PluginOptions {
        merge_tol: DEFAULT_MERGE_TOL,
        miller_madow: cfg.miller_madow,
        report: report_options(cfg),
    };
    let reports = measures
        .iter()
        .map(|&m| convergence_sweep(&src.mdp, &pis[0], m, &n_grid, &seeds, opts, cfg.budget))
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        for row in r.rows() {
            println!(
                "{} n={} median_abs_error={:.6e} exact={:.6}",
                r.measure,
                row.n,
                row.median_abs_error,
                r.exact_value.value()
            );
        }
    }
    emit(cfg.out.as_deref(), |w| match cfg.format {
        Format::Csv => {
            let mut header = true;
            for r in &reports {
                let mut buf = Vec::new();
                r.write_csv(&mut buf)?;
                let text = String::from_utf8_lossy(&buf);
                let body = if header {
                    &text[..]
                } else {
                    text.split_once('\n').map_or("", |x| x.1)
                };
                w.write_all(body.as_bytes())?;
                header = false;
            }
            Ok(())
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &reports)?;
            writeln!(w)
        }
    })?;
    Ok(0)
}
