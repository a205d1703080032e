//! Experiment drivers behind the command-line subcommands.
//!
//! Each run writes its artifacts into one output directory and finishes with
//! `summary.json`. In deterministic mode no wall-clock values are written,
//! so repeated runs produce identical directories.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{Value, json};

use cnsprox::anomaly::{
    self, AnomalyOutput, AnomalyProblem, caddict_admm_consensus, caddict_apg_consensus, flag_scores, flagged_windows,
};
use cnsprox::cdl::{CdlConfig, CdlOutput, CoefSolver, DictSolver, Pipeline, cdl_train_with};
use cnsprox::container;
use cnsprox::csc::{CscOptions, CscProblem, FistaVariant, cbpdn_solve, csc_admm_solve, csc_fista_solve};
use cnsprox::tensor::{Dictionary, Frame, SignalSet, conv_sum};
use cnsprox::trace::ConvergenceTrace;
use cnsprox::vecops;

use crate::config::{AnomalySolver, ExperimentConfig, Task};
use crate::error::{BenchError, Result};
use crate::images::{Geometry, load_grayscale_images};
use crate::metrics::{awgn_corrupt, map_sparsity, psnr};
use crate::synth::synthetic_images;

/// Seed offset separating held-out synthetic images from training ones.
const TEST_OFFSET: u64 = 500;

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// File names written, relative to `out_dir`, in creation order.
    pub files: Vec<String>,
    pub summary: Value,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    deterministic: bool,
}

impl Artifacts {
    fn create(dir: PathBuf, deterministic: bool) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        Ok(Artifacts {
            dir,
            files: Vec::new(),
            deterministic,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, content).map_err(|e| BenchError::io(&p, e))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let write = || -> std::result::Result<Vec<u8>, csv::Error> {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
        };
        let bytes = write().map_err(|e| BenchError::Output {
            path: self.dir.join(name),
            message: e.to_string(),
        })?;
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| BenchError::io(&p, e))
    }

    /// `<stem>.csv`, plus `<stem>_timing.csv` outside deterministic mode.
    fn trace(&mut self, stem: &str, trace: &ConvergenceTrace) -> Result<()> {
        self.text(&format!("{stem}.csv"), &trace.to_csv_string())?;
        if !self.deterministic {
            let mut buf = Vec::new();
            trace.write_timing_csv(&mut buf)?;
            self.text(&format!("{stem}_timing.csv"), &String::from_utf8_lossy(&buf))?;
        }
        Ok(())
    }

    fn dictionary(&mut self, name: &str, d: &Dictionary) -> Result<()> {
        let p = self.path(name);
        self.files.push(Path::new(name).with_extension("json").display().to_string());
        container::save_dictionary(&p, d)?;
        Ok(())
    }
}

/// Run the task of `cfg` (already finalized) and write its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let task = cfg.task.as_ref().map(|t| *t.get_ref()).unwrap_or(Task::Cdl);
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(task.to_string()));
    let mut art = Artifacts::create(out_dir.clone(), cfg.deterministic)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| BenchError::Invalid(format!("worker pool: {e}")))?;
    let mut summary = pool.install(|| match task {
        Task::Cdl => run_cdl(cfg, &mut art),
        Task::Csc => run_csc(cfg, &mut art),
        Task::Denoise => run_denoise(cfg, &mut art),
        Task::Anomaly => run_anomaly(cfg, &mut art),
    })?;
    summary["task"] = json!(task.to_string());
    summary["seed"] = json!(cfg.seed);
    summary["deterministic"] = json!(cfg.deterministic);
    art.files.push("summary.json".into());
    summary["files"] = json!(art.files);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    let p = art.dir.join("summary.json");
    fs::write(&p, text).map_err(|e| BenchError::io(&p, e))?;
    Ok(RunReport {
        out_dir,
        files: art.files,
        summary,
    })
}

fn geometry(cfg: &ExperimentConfig) -> Geometry {
    Geometry {
        crop: cfg.data.crop,
        size: cfg.data.size,
        convert_color: cfg.data.convert_color,
    }
}

/// Training images (synthetic when none are configured), mean-removed if requested.
pub fn training_set(cfg: &ExperimentConfig) -> Result<SignalSet> {
    let d = &cfg.data;
    let set = if d.train.is_empty() {
        synthetic_images(d.synthetic.train, d.synthetic.size, cfg.seed, 0)?
    } else {
        let paths: Vec<&Path> = d.train.iter().map(|p| p.get_ref().as_path()).collect();
        load_grayscale_images(&paths, &geometry(cfg))?
    };
    if d.subtract_mean {
        let centered = set
            .iter()
            .map(|s| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| v - m).collect()
            })
            .collect();
        return Ok(SignalSet::from_signals(set.frame().clone(), centered)?);
    }
    Ok(set)
}

/// Held-out images (synthetic when none are configured).
pub fn test_set(cfg: &ExperimentConfig) -> Result<SignalSet> {
    let d = &cfg.data;
    if d.test.is_empty() {
        return Ok(synthetic_images(d.synthetic.test, d.synthetic.size, cfg.seed, TEST_OFFSET)?);
    }
    let paths: Vec<&Path> = d.test.iter().map(|p| p.get_ref().as_path()).collect();
    load_grayscale_images(&paths, &geometry(cfg))
}

fn solver_label(coef: CoefSolver, dict: DictSolver) -> String {
    let c = match coef {
        CoefSolver::Admm => "admm",
        CoefSolver::Fista => "fista",
        CoefSolver::Fista3k => "fista3k",
    };
    let d = match dict {
        DictSolver::AdmmCns => "admm_cns",
        DictSolver::Apg => "apg",
        DictSolver::ApgCns => "apg_cns",
    };
    format!("{c}-{d}")
}

fn pipeline_label(p: Pipeline) -> &'static str {
    match p {
        Pipeline::AdmmAdmmCns => "admm_admm_cns",
        Pipeline::FistaApgCns => "fista_apg_cns",
    }
}

/// Mean held-out coding objective and sparsity of `d` over `test`.
pub fn heldout_coding(d: &Dictionary, test: &SignalSet, lambda: f64, opts: &CscOptions) -> Result<(f64, f64)> {
    let d = if d.frame() == test.frame() {
        d.clone()
    } else {
        d.with_frame(test.frame().clone())?
    };
    let per_image: Vec<(f64, f64)> = (0..test.count())
        .into_par_iter()
        .map(|k| {
            let r = cbpdn_solve(&d, test.signal(k), lambda, opts)?;
            Ok((r.objective, map_sparsity(&r.maps, 0)?))
        })
        .collect::<cnsprox::Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    Ok((
        per_image.iter().map(|p| p.0).sum::<f64>() / n,
        per_image.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

struct TrainedRun {
    label: String,
    output: CdlOutput,
    /// `(iteration, mean objective, mean sparsity)` of held-out coding.
    heldout: Vec<(usize, f64, f64)>,
}

fn train_one(
    cdl: &CdlConfig,
    label: String,
    train: &SignalSet,
    test: Option<&SignalSet>,
    eval: &crate::config::ProtocolConfig,
    deterministic: bool,
) -> Result<TrainedRun> {
    let mut cfg = cdl.clone();
    let eval_opts = CscOptions {
        iters: eval.eval_iters,
        deterministic,
        ..CscOptions::default()
    };
    cfg.checkpoint_every = if test.is_some() { eval.eval_every } else { 0 };
    let mut heldout = Vec::new();
    let output = cdl_train_with(&cfg, train, None, |iter, d| {
        if let Some(t) = test {
            let (obj, sp) = heldout_coding(d, t, eval.eval_lambda, &eval_opts).map_err(|e| match e {
                BenchError::Solver(inner) => inner,
                other => cnsprox::Error::InvalidParameter(other.to_string()),
            })?;
            log::info!("{label}: iteration {iter}, held-out objective {obj:.6e}, sparsity {sp:.3}%");
            heldout.push((iter, obj, sp));
        }
        Ok(())
    })?;
    if let Some(t) = test {
        if heldout.last().map(|h| h.0) != Some(cfg.iters) {
            let (obj, sp) = heldout_coding(&output.dict, t, eval.eval_lambda, &eval_opts)?;
            heldout.push((cfg.iters, obj, sp));
        }
    }
    Ok(TrainedRun { label, output, heldout })
}

fn run_summary(run: &TrainedRun, k: usize, deterministic: bool) -> Value {
    let rows = run.output.trace.rows();
    let mut v = json!({
        "label": run.label,
        "k": k,
        "m": run.output.dict.m_count(),
        "initial_objective": rows.first().map(|r| r.objective),
        "final_objective": rows.last().map(|r| r.objective),
        "replaced_filters": run.output.replaced_filters,
        "dict_bin_solves": run.output.dict_ops.bin_solves,
        "dict_ffts": run.output.dict_ops.ffts,
        "heldout_final_objective": run.heldout.last().map(|h| h.1),
        "heldout_final_sparsity": run.heldout.last().map(|h| h.2),
    });
    if !deterministic {
        v["mean_dict_ms"] = json!(run.output.timings.mean_dict_ms());
        v["mean_coef_ms"] = json!(run.output.timings.mean_coef_ms());
    }
    v
}

fn write_run(art: &mut Artifacts, run: &TrainedRun) -> Result<()> {
    art.trace(&format!("trace_{}", run.label), &run.output.trace)?;
    art.dictionary(&format!("dict_{}.cdla", run.label), &run.output.dict)?;
    if !run.heldout.is_empty() {
        let rows: Vec<Vec<String>> = run
            .heldout
            .iter()
            .map(|(i, o, s)| vec![i.to_string(), format!("{o:e}"), format!("{s:e}")])
            .collect();
        art.csv(
            &format!("heldout_{}.csv", run.label),
            &["iter", "mean_objective", "mean_sparsity"],
            &rows,
        )?;
    }
    if !art.deterministic {
        let rows: Vec<Vec<String>> = run
            .output
            .timings
            .coef_ms
            .iter()
            .zip(&run.output.timings.dict_ms)
            .enumerate()
            .map(|(i, (c, d))| vec![(i + 1).to_string(), format!("{c:e}"), format!("{d:e}")])
            .collect();
        art.csv(&format!("phases_{}_timing.csv", run.label), &["iter", "coef_ms", "dict_ms"], &rows)?;
    }
    Ok(())
}

fn run_cdl(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let train = training_set(cfg)?;
    let test = if cfg.protocol.eval_every > 0 { Some(test_set(cfg)?) } else { None };
    let p = &cfg.protocol;
    let variants: Vec<(String, CdlConfig)> = if p.pipelines.is_empty() {
        vec![(solver_label(cfg.cdl.coef, cfg.cdl.dict), cfg.cdl.clone())]
    } else {
        p.pipelines
            .iter()
            .map(|&pl| (pipeline_label(pl).to_string(), cfg.cdl.clone().with_pipeline(pl)))
            .collect()
    };
    let ks = if p.k_sweep.is_empty() { vec![train.count()] } else { p.k_sweep.clone() };
    let ms = if p.m_sweep.is_empty() { vec![cfg.cdl.m_count] } else { p.m_sweep.clone() };
    let sweep = !p.k_sweep.is_empty() || !p.m_sweep.is_empty();
    let mut runs = Vec::new();
    for &k in &ks {
        if k > train.count() {
            return Err(BenchError::Invalid(format!(
                "training-set size {k} exceeds the {} available images",
                train.count()
            )));
        }
        let subset = train.select(&(0..k).collect::<Vec<_>>())?;
        for &m in &ms {
            for (name, base) in &variants {
                let mut c = base.clone();
                c.m_count = m;
                let label = if sweep { format!("k{k}_m{m}_{name}") } else { name.clone() };
                log::info!("training {label}: {k} images, {m} filters, {} iterations", c.iters);
                let run = train_one(&c, label, &subset, test.as_ref(), p, cfg.deterministic)?;
                write_run(art, &run)?;
                runs.push(run_summary(&run, k, cfg.deterministic));
            }
        }
    }
    Ok(json!({
        "train_images": train.count(),
        "frame": train.frame().dims(),
        "runs": runs,
    }))
}

/// Configured dictionaries, or ones trained with each listed pipeline.
fn dictionaries(cfg: &ExperimentConfig, pipelines: &[Pipeline], art: &mut Artifacts) -> Result<Vec<(String, Dictionary)>> {
    if !cfg.data.dictionaries.is_empty() {
        return cfg
            .data
            .dictionaries
            .iter()
            .map(|p| {
                let path = p.get_ref();
                let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((label, container::load_dictionary(path)?))
            })
            .collect();
    }
    let train = training_set(cfg)?;
    let mut out = Vec::new();
    for &pl in pipelines {
        let label = pipeline_label(pl).to_string();
        log::info!("training {label} dictionary on {} images", train.count());
        let c = cfg.cdl.clone().with_pipeline(pl);
        let run = train_one(&c, label.clone(), &train, None, &cfg.protocol, cfg.deterministic)?;
        write_run(art, &run)?;
        out.push((label, run.output.dict));
    }
    Ok(out)
}

fn run_csc(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let pipeline = match cfg.cdl.coef {
        CoefSolver::Admm => Pipeline::AdmmAdmmCns,
        _ => Pipeline::FistaApgCns,
    };
    let (label, d) = dictionaries(cfg, &[pipeline], art)?.remove(0);
    let signals = test_set(cfg)?;
    let d = fit_frame(d, signals.frame())?;
    let lambda = cfg.csc.lambda;
    let p = CscProblem::new(d.clone(), signals.clone(), lambda)?;
    let opts = &cfg.csc.options;
    let out = match cfg.csc.solver {
        CoefSolver::Admm => csc_admm_solve(&p, opts)?,
        CoefSolver::Fista => csc_fista_solve(&p, opts, FistaVariant::Fista)?,
        CoefSolver::Fista3k => csc_fista_solve(&p, opts, FistaVariant::Fista3k)?,
    };
    art.trace("trace", &out.trace)?;
    let p = art.path("maps.cdla");
    art.files.push("maps.json".into());
    container::save_maps(&p, &out.maps)?;
    let mut rows = Vec::new();
    let mut per_image = Vec::new();
    for k in 0..signals.count() {
        let mut rec = conv_sum(&d, &out.maps, k)?;
        let mean = out.means.as_ref().map_or(0.0, |m| m[k]);
        rec.iter_mut().for_each(|v| *v += mean);
        let s = signals.signal(k);
        let fidelity = 0.5 * vecops::dist_sq(&rec, s);
        let l1 = lambda * vecops::l1(out.maps.image(k));
        let sparsity = map_sparsity(&out.maps, k)?;
        let quality = psnr(s, &rec, 1.0)?;
        rows.push(vec![
            k.to_string(),
            format!("{:e}", fidelity + l1),
            format!("{fidelity:e}"),
            format!("{l1:e}"),
            format!("{sparsity:e}"),
            format!("{quality:e}"),
        ]);
        per_image.push(json!({"image": k, "objective": fidelity + l1, "sparsity": sparsity, "psnr": quality}));
    }
    art.csv("metrics.csv", &["image", "objective", "fidelity", "l1", "sparsity", "psnr"], &rows)?;
    Ok(json!({
        "dictionary": label,
        "lambda": lambda,
        "final_objective": out.trace.final_objective(),
        "images": per_image,
    }))
}

fn fit_frame(d: Dictionary, frame: &Frame) -> Result<Dictionary> {
    if d.frame() == frame {
        Ok(d)
    } else {
        Ok(d.with_frame(frame.clone())?)
    }
}

/// Best-weight denoising result of one dictionary on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseBest {
    pub lambda: f64,
    pub psnr: f64,
    pub sparsity: f64,
}

/// Code `noisy` with `d` at every weight of `grid`; returns
/// `(lambda, psnr against clean, sparsity)` per weight.
pub fn denoise_sweep(
    d: &Dictionary,
    clean: &[f64],
    noisy: &[f64],
    grid: &[f64],
    opts: &CscOptions,
) -> Result<Vec<(f64, f64, f64)>> {
    grid.par_iter()
        .map(|&lambda| {
            let r = cbpdn_solve(d, noisy, lambda, opts)?;
            Ok((lambda, psnr(clean, &r.reconstruction, 1.0)?, map_sparsity(&r.maps, 0)?))
        })
        .collect()
}

/// The weight with the highest PSNR; ties keep the smaller weight.
pub fn best_of(sweep: &[(f64, f64, f64)]) -> DenoiseBest {
    let mut best = sweep[0];
    for &row in &sweep[1..] {
        if row.1 > best.1 {
            best = row;
        }
    }
    DenoiseBest {
        lambda: best.0,
        psnr: best.1,
        sparsity: best.2,
    }
}

fn run_denoise(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let n = &cfg.denoise;
    let dicts = dictionaries(cfg, &n.pipelines, art)?;
    let clean = test_set(cfg)?;
    let grid = n.lambda_grid();
    let opts = CscOptions {
        iters: n.iters,
        subtract_mean: n.subtract_mean,
        deterministic: cfg.deterministic,
        ..CscOptions::default()
    };
    let noisy: Vec<Vec<f64>> = (0..clean.count())
        .map(|k| awgn_corrupt(clean.signal(k), n.sigma, cfg.seed.wrapping_mul(1000).wrapping_add(k as u64)))
        .collect::<cnsprox::Result<_>>()?;
    let mut rows = Vec::new();
    let mut best_rows = Vec::new();
    let mut best: Vec<Vec<DenoiseBest>> = Vec::new();
    for (label, d) in &dicts {
        let d = fit_frame(d.clone(), clean.frame())?;
        let mut per_image = Vec::new();
        for k in 0..clean.count() {
            let sweep = denoise_sweep(&d, clean.signal(k), &noisy[k], &grid, &opts)?;
            for (lambda, q, sp) in &sweep {
                rows.push(vec![k.to_string(), label.clone(), format!("{lambda:e}"), format!("{q:e}"), format!("{sp:e}")]);
            }
            let b = best_of(&sweep);
            log::info!("{label}: image {k}, best lambda {:.4}, PSNR {:.3} dB", b.lambda, b.psnr);
            best_rows.push(vec![
                k.to_string(),
                label.clone(),
                format!("{:e}", b.lambda),
                format!("{:e}", b.psnr),
                format!("{:e}", b.sparsity),
            ]);
            per_image.push(b);
        }
        best.push(per_image);
    }
    let header = ["image", "dictionary", "lambda", "psnr", "sparsity"];
    art.csv("denoise.csv", &header, &rows)?;
    art.csv("denoise_best.csv", &header, &best_rows)?;
    let noisy_psnr: Vec<f64> = (0..clean.count())
        .map(|k| psnr(clean.signal(k), &noisy[k], 1.0))
        .collect::<cnsprox::Result<_>>()?;
    let per_dict: Vec<Value> = dicts
        .iter()
        .zip(&best)
        .map(|((label, _), b)| {
            json!({
                "dictionary": label,
                "best_psnr": b.iter().map(|x| x.psnr).collect::<Vec<_>>(),
                "best_lambda": b.iter().map(|x| x.lambda).collect::<Vec<_>>(),
                "mean_best_psnr": b.iter().map(|x| x.psnr).sum::<f64>() / b.len() as f64,
            })
        })
        .collect();
    let mut summary = json!({
        "sigma": n.sigma,
        "lambda_grid": grid,
        "noisy_psnr": noisy_psnr,
        "dictionaries": per_dict,
    });
    if best.len() >= 2 {
        let gap = best[0]
            .iter()
            .zip(&best[1])
            .map(|(a, b)| (a.psnr - b.psnr).abs())
            .fold(0.0, f64::max);
        summary["max_best_psnr_gap_db"] = json!(gap);
    }
    Ok(summary)
}

/// Series, their dictionaries and (for generated data) the injected windows.
fn anomaly_problem(cfg: &ExperimentConfig) -> Result<(AnomalyProblem, Vec<String>, Option<Vec<(usize, usize)>>)> {
    let a = &cfg.anomaly;
    let Some(path) = &cfg.data.series else {
        let mut spec = a.synthetic;
        spec.lambda = a.lambda;
        spec.beta = a.beta;
        let synth = anomaly::synthetic_anomalies(&spec)?;
        let names = (0..spec.series).map(|p| format!("series{p}")).collect();
        return Ok((synth.problem, names, Some(synth.injected)));
    };
    let path = path.get_ref();
    let file = fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let table = anomaly::read_series_csv(std::io::BufReader::new(file))?;
    let len = table.series.frame().len();
    let train_len = ((len as f64) * a.train_fraction).floor() as usize;
    if train_len < a.support {
        return Err(BenchError::Invalid(format!(
            "training portion of {train_len} samples is shorter than the filter length {}",
            a.support
        )));
    }
    let train_frame = Frame::d1(train_len)?;
    let heads: Vec<Vec<f64>> = table.series.iter().map(|s| s[..train_len].to_vec()).collect();
    let cdl = CdlConfig {
        m_count: a.m_count,
        support: vec![a.support],
        lambda: a.train_lambda,
        iters: a.train_iters,
        checkpoint_every: 0,
        ..cfg.cdl.clone().with_pipeline(Pipeline::FistaApgCns)
    };
    let full = table.series.frame().clone();
    let dicts = if a.shared_dictionary {
        let set = SignalSet::from_signals(train_frame, heads)?;
        let d = cnsprox::cdl::cdl_train(&cdl, &set)?.dict.with_frame(full.clone())?;
        vec![d; table.series.count()]
    } else {
        heads
            .into_iter()
            .map(|h| {
                let set = SignalSet::from_signals(train_frame.clone(), vec![h])?;
                cnsprox::cdl::cdl_train(&cdl, &set)?.dict.with_frame(full.clone())
            })
            .collect::<cnsprox::Result<Vec<_>>>()?
    };
    let problem = AnomalyProblem::new(dicts, table.series, a.lambda, a.beta)?;
    Ok((problem, table.names, None))
}

fn solver_name(s: AnomalySolver) -> &'static str {
    match s {
        AnomalySolver::ApgCns => "apg_cns",
        AnomalySolver::AdmmCns => "admm_cns",
    }
}

fn run_anomaly(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let a = &cfg.anomaly;
    let (problem, names, injected) = anomaly_problem(cfg)?;
    let mut results: Vec<(AnomalySolver, AnomalyOutput, Vec<(usize, usize)>)> = Vec::new();
    for &s in &a.solvers {
        let out = match s {
            AnomalySolver::ApgCns => caddict_apg_consensus(&problem, &a.solver)?,
            AnomalySolver::AdmmCns => caddict_admm_consensus(&problem, &a.solver)?,
        };
        let flags = flag_scores(&out.solution.score, a.solver.threshold_sigmas);
        let windows = flagged_windows(&flags);
        let name = solver_name(s);
        art.trace(&format!("trace_{name}"), &out.trace)?;
        let mut buf = Vec::new();
        anomaly::write_scores_csv(&mut buf, &out.solution.score, &flags)?;
        art.text(&format!("scores_{name}.csv"), &String::from_utf8_lossy(&buf))?;
        results.push((s, out, windows));
    }
    let solvers: Vec<Value> = results
        .iter()
        .map(|(s, out, w)| {
            let mut v = json!({
                "solver": solver_name(*s),
                "final_objective": out.trace.final_objective(),
                "windows": w,
            });
            if let Some(inj) = &injected {
                v["injected_flagged"] = json!(inj.iter().all(|&(a, b)| w.iter().any(|&(c, d)| c < b && a < d)));
            }
            v
        })
        .collect();
    let mut summary = json!({
        "series": names,
        "length": problem.len(),
        "solvers": solvers,
    });
    if let Some(inj) = &injected {
        summary["injected_windows"] = json!(inj);
    }
    if let [(_, a0, w0), (_, a1, w1), ..] = results.as_slice() {
        let (f0, f1) = (
            a0.trace.final_objective().unwrap_or(f64::NAN),
            a1.trace.final_objective().unwrap_or(f64::NAN),
        );
        summary["objective_relative_gap"] = json!((f0 - f1).abs() / f0.abs().max(f1.abs()));
        summary["windows_identical"] = json!(w0 == w1);
    }
    Ok(summary)
}
