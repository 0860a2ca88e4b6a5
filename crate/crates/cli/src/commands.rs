//! Subcommand bodies. Each writes its artifacts plus a manifest under the
//! configured output directory and returns the manifest path.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sidflow_core::distill::{
    generate, pretrain_student, DistillOutcome, Distiller, MetricRow, PretrainRow, METRICS_HEADER,
};
use sidflow_core::eval::{calibrate, class_purity, MetricReport};
use sidflow_core::io::{csv_document, csv_row, fmt_g9, parse_samples_csv, samples_csv};
use sidflow_core::nn::checkpoint;
use sidflow_core::param::{Kind, Prediction};
use sidflow_core::schedule::law::{figure_densities, TimestepLaw, Weight, DEFAULT_QUAD_GRID};
use sidflow_core::schedule::{T_HI, T_LO};
use sidflow_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::svg::{line_plot, Series};

/// Seed offset of the teacher-vs-teacher calibration stream.
const CALIBRATION_STREAM: u64 = 0x5eed_ca11;

/// The 6 × 6 grid of `π(t)` tables, one CSV (and optionally one SVG) per
/// density/weight panel.
pub fn schedules(config: &RunConfig) -> Result<PathBuf> {
    let points: usize = config.parse("schedule.table_points")?;
    let svg: bool = config.parse("io.svg")?;
    let mut run = Run::new("schedules", &config.out_dir())?;
    for (name, density) in figure_densities::<f64>() {
        for weight in Weight::FIGURE_ROWS {
            let law = TimestepLaw::new(density.clone(), weight, (T_LO, T_HI), DEFAULT_QUAD_GRID)?;
            let table = law.pi_table(points)?;
            let stem = format!("schedules/{name}__{}", weight.name());
            let rows = table.iter().map(|r| csv_row(&[r.t, r.p, r.w, r.pi]));
            run.write(&format!("{stem}.csv"), csv_document("t,p,w,pi", rows))?;
            if svg {
                let t: Vec<f64> = table.iter().map(|r| r.t).collect();
                let p: Vec<f64> = table.iter().map(|r| r.p).collect();
                let pi: Vec<f64> = table.iter().map(|r| r.pi).collect();
                let plot = line_plot(
                    &format!("{name}, w = {}", weight.name()),
                    "t",
                    "density",
                    &[Series { label: "p(t)", x: &t, y: &p }, Series { label: "π(t)", x: &t, y: &pi }],
                );
                run.write(&format!("{stem}.svg"), plot)?;
            }
        }
    }
    run.finish(config)
}

fn numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{v}`"))))
        .collect()
}

/// Converts one prediction between kinds under `schedule.family` and
/// returns the converted vector.
pub fn convert(config: &RunConfig, from: &str, to: &str, x_t: &str, t: f64, value: &str) -> Result<Vec<f64>> {
    let schedule = config.schedule()?;
    let (from, to): (Kind, Kind) = (from.parse()?, to.parse()?);
    let p = Prediction::new(from, numbers(value)?, numbers(x_t)?, t, &schedule)?;
    Ok(p.convert(to)?.value)
}

fn pretrain_csv(rows: &[PretrainRow]) -> String {
    csv_document(PretrainRow::HEADER, rows.iter().map(|r| csv_row(&r.values())))
}

pub fn pretrain(config: &RunConfig) -> Result<PathBuf> {
    let teacher = config.teacher()?;
    let pre = config.pretrain()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed()?);
    let out = pretrain_student(&pre, &teacher, &mut rng, config.parse("eval.seed")?)?;
    let mut run = Run::new("pretrain", &config.out_dir())?;
    let ckpt = run.out.join("student.ckpt");
    checkpoint::save(&ckpt, &out.net.spec, &out.net.params)?;
    run.record([checkpoint::sidecar_path(&ckpt), ckpt]);
    run.write("pretrain.csv", pretrain_csv(&out.timeline))?;
    run.note("teacher.fingerprint", teacher.fingerprint());
    if let Some(last) = out.timeline.last() {
        run.note("result.oracle_mse", fmt_g9(last.oracle_mse));
    }
    run.finish(config)
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    csv_document(METRICS_HEADER, rows.iter().map(|r| csv_row(&r.values())))
}

/// Result of one finished distillation run.
pub struct DistillSummary {
    pub manifest: PathBuf,
    pub energy_distance: f64,
    pub sliced_w2: f64,
    pub threshold: f64,
    /// `(class, purity)` for conditional teachers.
    pub purity: Vec<(usize, f64)>,
}

fn write_outcome(run: &mut Run, config: &RunConfig, out: &DistillOutcome, steps: usize, t_max: f64) -> Result<DistillSummary> {
    let teacher = config.teacher()?;
    let d = teacher.dim();
    run.write("metrics.csv", metrics_csv(&out.timeline))?;
    run.write("samples.csv", samples_csv(&out.samples, d, &out.sample_classes))?;
    if !out.pretrain_timeline.is_empty() {
        run.write("pretrain.csv", pretrain_csv(&out.pretrain_timeline))?;
    }
    let eval_seed: u64 = config.parse("eval.seed")?;
    let n: usize = config.parse("eval.samples")?;
    let trials: usize = config.parse("eval.calibration_trials")?;
    let cal = calibrate(&teacher, n, trials, &mut ChaCha8Rng::seed_from_u64(eval_seed ^ CALIBRATION_STREAM), None)?;
    let mut purity = Vec::new();
    for c in 0..teacher.class_count() {
        let classes = vec![Some(c); n];
        let traj = generate(&out.generator, n, &mut ChaCha8Rng::seed_from_u64(eval_seed), &classes, steps, t_max)?;
        purity.push((c, class_purity(&teacher, traj.samples(), c)?));
    }
    if !purity.is_empty() {
        let rows = purity.iter().map(|&(c, p)| format!("{c},{}", fmt_g9(p)));
        run.write("purity.csv", csv_document("class,purity", rows))?;
    }
    let summary = csv_row(&[out.energy_distance, out.w2_sliced, cal.mean, cal.std, cal.threshold]);
    run.write(
        "summary.csv",
        csv_document("energy_distance,sliced_w2,calibration_mean,calibration_std,threshold", [summary]),
    )?;
    for (i, c) in out.t_histogram.iter().enumerate() {
        run.note(&format!("t_histogram.{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0), c);
    }
    run.note("teacher.fingerprint", &out.teacher_fingerprint);
    run.note("result.energy_distance", fmt_g9(out.energy_distance));
    run.note("result.threshold", fmt_g9(cal.threshold));
    Ok(DistillSummary {
        manifest: PathBuf::new(),
        energy_distance: out.energy_distance,
        sliced_w2: out.w2_sliced,
        threshold: cal.threshold,
        purity,
    })
}

/// Runs one distillation into `out`. On divergence the training state is
/// dumped to `out/diverged/` and the manifest is written before the error is
/// returned.
fn distill_into(config: &RunConfig, command: &str, out: &Path) -> Result<DistillSummary> {
    let teacher = config.teacher()?;
    let dc = config.distill()?;
    let (steps, t_max) = (dc.steps, dc.t_max);
    let mut run = Run::new(command, out)?;
    let mut state = Distiller::new(dc, &teacher)?;
    let mut rows = Vec::new();
    match state.run(|r| rows.push(r.clone())) {
        Ok(timeline) => {
            let outcome = state.into_outcome(timeline)?;
            let ckpt = run.out.join("checkpoints");
            let mut summary = write_outcome(&mut run, config, &outcome, steps, t_max)?;
            run.note("status", "ok");
            let written = save_outcome(&outcome, &ckpt)?;
            run.record(written);
            summary.manifest = run.finish(config)?;
            Ok(summary)
        }
        Err(e) => {
            let written = state.save(&run.out.join("diverged"))?;
            run.record(written);
            run.write("metrics.csv", metrics_csv(&rows))?;
            run.note("status", format!("failed: {e}"));
            run.finish(config)?;
            Err(e)
        }
    }
}

fn save_outcome(out: &DistillOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let nets = [("generator.ckpt", Some(&out.generator)), ("fake.ckpt", Some(&out.fake)), ("discriminator.ckpt", out.discriminator.as_ref())];
    for (name, net) in nets {
        if let Some(net) = net {
            let p = dir.join(name);
            checkpoint::save(&p, &net.spec, &net.params)?;
            written.push(checkpoint::sidecar_path(&p));
            written.push(p);
        }
    }
    Ok(written)
}

pub fn distill(config: &RunConfig) -> Result<DistillSummary> {
    distill_into(config, "distill", &config.out_dir())
}

/// Metric row comparing two sample files.
pub fn eval(config: &RunConfig, a: &Path, b: &Path) -> Result<MetricReport> {
    let ta = parse_samples_csv(&std::fs::read_to_string(a)?)?;
    let tb = parse_samples_csv(&std::fs::read_to_string(b)?)?;
    if ta.dim != tb.dim {
        return Err(Error::Dimension {
            expected: ta.dim,
            got: tb.dim,
        });
    }
    let report = MetricReport::compute(&ta.points, &tb.points, ta.dim, config.parse("eval.projections")?, config.parse("eval.seed")?)?;
    let mut run = Run::new("eval", &config.out_dir())?;
    run.write("eval.csv", csv_document(MetricReport::CSV_HEADER, [report.csv_row()]))?;
    run.note("input.a", format!("{} sha256:{}", a.display(), crate::manifest::sha256_hex(&std::fs::read(a)?)));
    run.note("input.b", format!("{} sha256:{}", b.display(), crate::manifest::sha256_hex(&std::fs::read(b)?)));
    run.finish(config)?;
    Ok(report)
}

/// Teacher draws as a sample CSV; `class` restricts to one label.
pub fn sample(config: &RunConfig, n: usize, class: Option<usize>) -> Result<PathBuf> {
    let teacher = config.teacher()?;
    let s = teacher.sample(n, &mut ChaCha8Rng::seed_from_u64(config.seed()?), class)?;
    let mut run = Run::new("sample", &config.out_dir())?;
    let classes: Vec<Option<usize>> = s.components.iter().map(|&k| teacher.components()[k].class).collect();
    run.write("teacher_samples.csv", samples_csv(&s.points, teacher.dim(), &classes))?;
    run.finish(config)
}

/// One finished ablation row.
pub struct AblationRow {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub energy_distance: f64,
    pub sliced_w2: f64,
}

fn range_dir(lo: f64, hi: f64) -> String {
    format!("t_{}_{}", fmt_g9(lo), fmt_g9(hi))
}

/// Distills once per configured `t` range from the same seed and tabulates
/// the final metrics.
pub fn ablate_t(config: &RunConfig) -> Result<(PathBuf, Vec<AblationRow>)> {
    let mut ranges = config.ablation_ranges()?;
    if config.parse::<bool>("distill.ablation_full")? {
        let (lo, hi) = config.t_range()?;
        ranges.push(crate::config::Range {
            label: "full".into(),
            lo,
            hi,
        });
    }
    let mut dirs: Vec<String> = ranges.iter().map(|r| range_dir(r.lo, r.hi)).collect();
    {
        let mut sorted = dirs.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("two ablation ranges share the output directory `{}`", w[0])));
        }
    }
    let out = config.out_dir();
    let mut run = Run::new("ablate-t", &out)?;
    let mut rows = Vec::new();
    for (r, dir) in ranges.iter().zip(dirs.drain(..)) {
        let mut c = config.clone();
        c.set("law.t_lo", &fmt_g9(r.lo))?;
        c.set("law.t_hi", &fmt_g9(r.hi))?;
        let sub = out.join(&dir);
        if sub.join(crate::manifest::FILE_NAME).exists() {
            return Err(Error::Config(format!("ablation output `{}` already exists", sub.display())));
        }
        let c = {
            let mut c = c;
            c.set("io.out", &sub.to_string_lossy())?;
            c
        };
        let s = distill_into(&c, "distill", &sub)?;
        run.record([s.manifest.clone()]);
        rows.push(AblationRow {
            label: r.label.clone(),
            lo: r.lo,
            hi: r.hi,
            energy_distance: s.energy_distance,
            sliced_w2: s.sliced_w2,
        });
    }
    let table = rows
        .iter()
        .map(|r| format!("{},{},{}", r.label, fmt_g9(r.energy_distance), fmt_g9(r.sliced_w2)));
    run.write("ablate_t.csv", csv_document("range,energy_distance,sliced_w2", table))?;
    Ok((run.finish(config)?, rows))
}
