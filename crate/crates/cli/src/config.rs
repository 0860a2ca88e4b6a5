//! Flat `key = value` run configuration with documented defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sidflow_core::distill::{AdversarialConfig, DistillConfig, PretrainConfig, RealData};
use sidflow_core::io::parse_samples_csv;
use sidflow_core::schedule::law::Density;
use sidflow_core::schedule::{FamilyKind, Schedule, T_HI, T_LO};
use sidflow_core::teacher::MixtureTeacher;
use sidflow_core::{Error, Result};

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(name: &'static str, default: &'static str, doc: &'static str) -> Key {
    Key { name, default, doc }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[Key] = &[
    key("seed", "0", "seed of every training and sampling stream"),
    key("io.out", "out", "output directory"),
    key("io.svg", "true", "write SVG plots next to CSV tables"),
    key("schedule.family", "rectified_flow", "schedule used by `convert`"),
    key("schedule.table_points", "256", "grid points per tabulated π(t) panel"),
    key("law.density", "logit_normal", "timestep density: logit_normal | uniform"),
    key("law.mu", "0.6931471805599453", "logit-normal location (ln 2)"),
    key("law.s", "1.6", "logit-normal scale"),
    key("law.t_lo", "0.001", "lower end of the distillation t range, clamped to 0.001"),
    key("law.t_hi", "0.999", "upper end of the distillation t range, clamped to 0.999"),
    key("teacher.file", "", "teacher definition file; empty selects the ring preset"),
    key("teacher.modes", "8", "ring modes"),
    key("teacher.radius", "4", "ring radius"),
    key("teacher.std", "0.3", "per-mode standard deviation"),
    key("teacher.classes", "0", "class count of the ring labels; 0 is unconditional"),
    key("net.hidden", "128,128,128", "hidden layer widths"),
    key("net.time_features", "8", "sinusoidal time-frequency pairs"),
    key("net.class_embed", "16", "class embedding width"),
    key("pretrain.kind", "vfm", "student output kind: x0 | eps | v | vfm"),
    key("pretrain.iterations", "4000", "student training iterations"),
    key("pretrain.batch", "256", "student batch size"),
    key("pretrain.lr", "0.001", "student learning rate"),
    key("pretrain.lr_end_factor", "0.05", "final learning rate as a fraction of the initial one"),
    key("pretrain.weight", "one", "x0-space loss weight w(t)"),
    key("pretrain.class_dropout", "0.1", "probability of training a row on the null class"),
    key("pretrain.eval_every", "500", "oracle-MSE rows every this many iterations"),
    key("pretrain.eval_samples", "2048", "held-out draws per oracle-MSE row"),
    key("distill.steps", "4", "generator steps K"),
    key("distill.t_max", "1000", "step-time normalization T"),
    key("distill.cfg_scale", "4.5", "guidance scale for conditional teachers"),
    key("distill.weight", "one_minus_t", "generator-loss weight w_t"),
    key("distill.lambda_sid", "100", "generator-loss scale"),
    key("distill.alpha_sid", "1", "coefficient of the optional ‖f_φ − f_ψ‖² term"),
    key("distill.alpha_term", "off", "optional term: off | add | subtract"),
    key("distill.lr_gen", "5e-5", "generator learning rate"),
    key("distill.lr_fake", "0.002", "fake-network learning rate"),
    key("distill.batch", "256", "rows per update"),
    key("distill.fake_updates", "1", "fake updates per generator update"),
    key("distill.iterations", "20000", "generator updates"),
    key("distill.generator_init", "fresh", "generator start: fresh | student"),
    key("distill.fake_mode", "residual", "fake network: residual | direct"),
    key("distill.eval_every", "500", "metric rows every this many iterations"),
    key("distill.adversarial", "false", "add the diffusion-GAN term"),
    key("distill.adversarial_weight", "0.01", "weight of the adversarial generator term"),
    key("distill.adversarial_lr", "0.001", "discriminator learning rate"),
    key("distill.adversarial_hidden", "64,64,64", "discriminator hidden widths"),
    key("distill.real_data", "", "real rows for the adversarial term: `teacher` or a CSV path"),
    key(
        "distill.ablation_ranges",
        "0:1/3;1/3:2/3;2/3:1;0:1/2;1/4:3/4;1/2:1",
        "t ranges compared by `ablate-t`, clamped into the sampling domain",
    ),
    key("distill.ablation_full", "false", "add a full-range reference row to `ablate-t`"),
    key("eval.samples", "4096", "generator and teacher samples per metric row"),
    key("eval.projections", "64", "sliced-W2 projections"),
    key("eval.seed", "7", "seed of the evaluation noise and projections"),
    key("eval.calibration_trials", "20", "teacher-vs-teacher pairs behind the pass threshold"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

fn bad(key: &str, value: &str, why: impl Display) -> Error {
    Error::Config(format!("`{key} = {value}`: {why}"))
}

/// `a/b` or a plain number.
fn fraction(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.trim().parse().ok(),
    }
}

/// One `lo:hi` ablation interval with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Range {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

impl RunConfig {
    /// Defaults merged with the file at `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        c.merge_text(&std::fs::read_to_string(path)?)?;
        Ok(c)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", n + 1)))?;
            if !seen.insert(k.trim().to_string()) {
                return Err(Error::Parse(format!("config line {}: duplicate key `{}`", n + 1, k.trim())));
            }
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        self.values.insert(k.name, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.get(key);
        v.parse().map_err(|e| bad(key, v, e))
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.get(key);
        v.split(',').map(|s| s.trim().parse().map_err(|e| bad(key, v, e))).collect()
    }

    /// Fully resolved configuration, one `key = value` per line in key order.
    pub fn resolved(&self) -> Vec<(&'static str, &str)> {
        KEYS.iter().map(|k| (k.name, self.get(k.name))).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("io.out"))
    }

    pub fn schedule(&self) -> Result<Schedule<f64>> {
        Ok(Schedule::default_for(self.parse::<FamilyKind>("schedule.family")?))
    }

    pub fn density(&self) -> Result<Density<f64>> {
        match self.get("law.density") {
            "logit_normal" => Ok(Density::logit_normal(self.parse("law.mu")?, self.parse("law.s")?)),
            "uniform" => Ok(Density::Uniform),
            other => Err(bad("law.density", other, "expected logit_normal | uniform")),
        }
    }

    /// `(law.t_lo, law.t_hi)` clamped into `[T_LO, T_HI]`, so `0` and `1`
    /// may be written for the ends of the domain.
    pub fn t_range(&self) -> Result<(f64, f64)> {
        let (lo, hi): (f64, f64) = (self.parse("law.t_lo")?, self.parse("law.t_hi")?);
        Ok((lo.max(T_LO), hi.min(T_HI)))
    }

    pub fn teacher(&self) -> Result<MixtureTeacher<f64>> {
        let file = self.get("teacher.file");
        if !file.is_empty() {
            return MixtureTeacher::from_kv_str(&std::fs::read_to_string(file)?);
        }
        let classes: usize = self.parse("teacher.classes")?;
        MixtureTeacher::ring(
            self.parse("teacher.modes")?,
            self.parse("teacher.radius")?,
            self.parse("teacher.std")?,
            (classes > 0).then_some(classes),
        )
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            kind: self.parse("pretrain.kind")?,
            iterations: self.parse("pretrain.iterations")?,
            batch: self.parse("pretrain.batch")?,
            lr: self.parse("pretrain.lr")?,
            lr_end_factor: self.parse("pretrain.lr_end_factor")?,
            density: self.density()?,
            weight: self.parse("pretrain.weight")?,
            class_dropout: self.parse("pretrain.class_dropout")?,
            hidden: self.list("net.hidden")?,
            time_features: self.parse("net.time_features")?,
            class_embed: self.parse("net.class_embed")?,
            eval_every: self.parse("pretrain.eval_every")?,
            eval_samples: self.parse("pretrain.eval_samples")?,
        })
    }

    pub fn distill(&self) -> Result<DistillConfig> {
        let real = match self.get("distill.real_data") {
            "" => None,
            "teacher" => Some(RealData::Teacher),
            path => {
                let table = parse_samples_csv(&std::fs::read_to_string(path)?)?;
                Some(RealData::Table {
                    points: table.points,
                    classes: table.classes,
                })
            }
        };
        let c = DistillConfig {
            steps: self.parse("distill.steps")?,
            t_max: self.parse("distill.t_max")?,
            cfg_scale: self.parse("distill.cfg_scale")?,
            weight: self.parse("distill.weight")?,
            lambda_sid: self.parse("distill.lambda_sid")?,
            alpha_sid: self.parse("distill.alpha_sid")?,
            alpha_term: self.parse("distill.alpha_term")?,
            density: self.density()?,
            t_range: self.t_range()?,
            lr_gen: self.parse("distill.lr_gen")?,
            lr_fake: self.parse("distill.lr_fake")?,
            batch: self.parse("distill.batch")?,
            fake_updates: self.parse("distill.fake_updates")?,
            iterations: self.parse("distill.iterations")?,
            seed: self.seed()?,
            hidden: self.list("net.hidden")?,
            time_features: self.parse("net.time_features")?,
            class_embed: self.parse("net.class_embed")?,
            generator_init: self.parse("distill.generator_init")?,
            fake_mode: self.parse("distill.fake_mode")?,
            pretrain: self.pretrain()?,
            adversarial: AdversarialConfig {
                enabled: self.parse("distill.adversarial")?,
                weight: self.parse("distill.adversarial_weight")?,
                hidden: self.list("distill.adversarial_hidden")?,
                lr: self.parse("distill.adversarial_lr")?,
                real,
            },
            eval_every: self.parse("distill.eval_every")?,
            eval_samples: self.parse("eval.samples")?,
            eval_projections: self.parse("eval.projections")?,
            eval_seed: self.parse("eval.seed")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Ablation intervals, each clamped into `[T_LO, T_HI]`.
    pub fn ablation_ranges(&self) -> Result<Vec<Range>> {
        let key = "distill.ablation_ranges";
        let text = self.get(key);
        let mut out = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = part.split_once(':').ok_or_else(|| bad(key, text, format!("`{part}` is not lo:hi")))?;
            let (lo, hi) = match (fraction(a), fraction(b)) {
                (Some(lo), Some(hi)) if lo < hi => (lo.max(T_LO), hi.min(T_HI)),
                _ => return Err(bad(key, text, format!("`{part}` is not an increasing pair of numbers"))),
            };
            if lo >= hi {
                return Err(bad(key, text, format!("`{part}` is empty after clamping")));
            }
            out.push(Range {
                label: part.to_string(),
                lo,
                hi,
            });
        }
        if out.is_empty() {
            return Err(bad(key, text, "no ranges"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.distill().unwrap(), DistillConfig::default());
        assert_eq!(c.pretrain().unwrap(), PretrainConfig::default());
        assert_eq!(c.teacher().unwrap().fingerprint(), MixtureTeacher::<f64>::benchmark_ring(None).fingerprint());
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("distill.bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(c.merge_text("seed = 1\nseed = 2\n"), Err(Error::Parse(_))));
        c.merge_text("# comment\nseed = 5 # trailing\n\n").unwrap();
        assert_eq!(c.seed().unwrap(), 5);
        assert!(c.assign("distill.steps").is_err());
    }

    #[test]
    fn ablation_ranges_are_clamped() {
        let r = RunConfig::default().ablation_ranges().unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!((r[0].lo, r[0].hi), (T_LO, 1.0 / 3.0));
        assert_eq!(r[2].hi, T_HI);
        assert_eq!(r[4].label, "1/4:3/4");
    }
}
