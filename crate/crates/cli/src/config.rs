//! `key=value` run configuration with `#` comments and dotted section keys.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use aefuse::fusion::{BuiltinOp, FusionMethodId, MethodRegistry};
use aefuse::learner::{LossMode, TrainConfig};
use aefuse::metrics::{MetricId, Normalizer, QualityWeights};
use aefuse::TaskKind;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: '{key}' expects {expected}, got '{value}'")]
    TypeError {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("line {line}: '{key}' {reason}")]
    RangeError {
        line: usize,
        key: String,
        reason: String,
    },
}

/// Which evaluator selects the per-pair optimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleEvaluator {
    /// Reference-based E1.
    Supervised,
    /// Cross-modal E2.
    CrossModal,
}

/// One configured fusion method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub op: BuiltinOp,
    pub tasks: Vec<TaskKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Methods forming the registry, in order.
    pub methods: Vec<MethodSpec>,
    /// Methods defined via `method.<name>.*` but not listed in the registry;
    /// available to `evolve`.
    pub extra_methods: Vec<MethodSpec>,
    pub weights: QualityWeights,
    pub evaluator: OracleEvaluator,
    pub nss_path: Option<PathBuf>,
    pub nss_patch_size: usize,
    pub nss_sharpness_fraction: f64,
    pub train: TrainConfig,
    pub cache_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let methods = BuiltinOp::KINDS
            .iter()
            .map(|k| MethodSpec {
                name: k.to_string(),
                op: BuiltinOp::from_kind(k).expect("builtin kind"),
                tasks: Vec::new(),
            })
            .collect();
        Self {
            methods,
            extra_methods: Vec::new(),
            weights: QualityWeights::default(),
            evaluator: OracleEvaluator::CrossModal,
            nss_path: None,
            nss_patch_size: aefuse::metrics::niqe::DEFAULT_PATCH_SIZE,
            nss_sharpness_fraction: aefuse::metrics::niqe::DEFAULT_SHARPNESS_FRACTION,
            train: TrainConfig::default(),
            cache_dir: None,
            report_dir: None,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn registry(&self) -> MethodRegistry {
        let mut reg = MethodRegistry::new();
        for m in &self.methods {
            reg.register(
                FusionMethodId::new(&m.name, 1),
                Arc::new(m.op),
                m.tasks.clone(),
            )
            .expect("method names validated at parse time");
        }
        reg
    }

    /// A configured method by name, registered or not.
    pub fn method(&self, name: &str) -> Option<&MethodSpec> {
        self.methods
            .iter()
            .chain(&self.extra_methods)
            .find(|m| m.name == name)
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn parse<T: FromStr>(&self, expected: &'static str) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| ConfigError::TypeError {
            line: self.line,
            key: self.key.to_string(),
            expected,
            value: self.value.to_string(),
        })
    }

    fn real(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.parse("a real number")?;
        if !v.is_finite() {
            return Err(self.range("must be finite"));
        }
        Ok(v)
    }

    fn non_negative(&self) -> Result<f64, ConfigError> {
        let v = self.real()?;
        if v < 0.0 {
            return Err(self.range("must be >= 0"));
        }
        Ok(v)
    }

    fn integer(&self) -> Result<usize, ConfigError> {
        self.parse("a non-negative integer")
    }

    fn boolean(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(ConfigError::TypeError {
                line: self.line,
                key: self.key.to_string(),
                expected: "a boolean",
                value: self.value.to_string(),
            }),
        }
    }

    fn range(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::RangeError {
            line: self.line,
            key: self.key.to_string(),
            reason: reason.into(),
        }
    }

    fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            line: self.line,
            key: self.key.to_string(),
        }
    }
}

/// Per-method keys gathered before the registry list is known.
#[derive(Default)]
struct MethodKeys {
    first_line: usize,
    kind: Option<(usize, String)>,
    weight: Option<(usize, f64)>,
    radius: Option<(usize, usize)>,
    levels: Option<(usize, usize)>,
    tasks: Option<Vec<TaskKind>>,
}

fn metric_by_key(name: &str) -> Option<MetricId> {
    MetricId::ALL
        .into_iter()
        .find(|m| m.as_str().eq_ignore_ascii_case(name))
}

fn split_list(value: &str) -> Vec<&str> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parses configuration text. Absent keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut registry_line: Option<(usize, Vec<String>)> = None;
    let mut method_keys: BTreeMap<String, MethodKeys> = BTreeMap::new();
    let mut weights_line = 0;
    let mut norm_kind: [Option<(usize, String)>; 7] = Default::default();
    let mut norm_lo: [Option<f64>; 7] = [None; 7];
    let mut norm_hi: [Option<f64>; 7] = [None; 7];
    let mut norm_flip: [Option<bool>; 7] = [None; 7];
    let mut train_seed: Option<u64> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::TypeError {
                line,
                key: content.to_string(),
                expected: "key=value",
                value: String::new(),
            });
        };
        let e = Entry {
            line,
            key: key.trim(),
            value: value.trim(),
        };
        let parts: Vec<&str> = e.key.split('.').collect();
        match parts.as_slice() {
            ["seed"] => cfg.seed = e.parse("a 64-bit unsigned integer")?,
            ["registry", "methods"] => {
                let names: Vec<String> =
                    split_list(e.value).into_iter().map(String::from).collect();
                if names.is_empty() {
                    return Err(e.range("must list at least one method"));
                }
                registry_line = Some((line, names));
            }
            ["method", name, field] => {
                if name.is_empty()
                    || aefuse::oracle::validate_pair_id(name).is_err()
                    || name.contains(',')
                {
                    return Err(e.range("has an invalid method name"));
                }
                let mk = method_keys
                    .entry(name.to_string())
                    .or_insert_with(|| MethodKeys {
                        first_line: line,
                        ..MethodKeys::default()
                    });
                match *field {
                    "kind" => {
                        if !BuiltinOp::KINDS.contains(&e.value) {
                            return Err(
                                e.range(format!("must be one of {}", BuiltinOp::KINDS.join(", ")))
                            );
                        }
                        mk.kind = Some((line, e.value.to_string()));
                    }
                    "weight" => {
                        let w = e.real()?;
                        if !(0.0..=1.0).contains(&w) {
                            return Err(e.range("must be in [0, 1]"));
                        }
                        mk.weight = Some((line, w));
                    }
                    "radius" => {
                        let r = e.integer()?;
                        if r == 0 {
                            return Err(e.range("must be >= 1"));
                        }
                        mk.radius = Some((line, r));
                    }
                    "levels" => {
                        let l = e.integer()?;
                        if l < 2 {
                            return Err(e.range("must be >= 2"));
                        }
                        mk.levels = Some((line, l));
                    }
                    "tasks" => {
                        let tasks = split_list(e.value)
                            .into_iter()
                            .map(|t| t.parse::<TaskKind>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|msg| e.range(msg))?;
                        mk.tasks = Some(tasks);
                    }
                    _ => return Err(e.unknown()),
                }
            }
            ["weights", w] => {
                weights_line = line;
                let v = e.non_negative()?;
                match *w {
                    "beta" => cfg.weights.beta = v,
                    "beta1" => cfg.weights.beta1 = v,
                    a if a.starts_with("alpha") => {
                        let idx: usize = a[5..].parse().map_err(|_| e.unknown())?;
                        if idx >= 6 || a.len() != 6 {
                            return Err(e.unknown());
                        }
                        cfg.weights.alpha[idx] = v;
                    }
                    _ => return Err(e.unknown()),
                }
            }
            ["norm", metric, field] => {
                let m = metric_by_key(metric).ok_or_else(|| e.unknown())?;
                let k = m.index();
                match *field {
                    "kind" => match e.value {
                        "clamp" | "reciprocal" => norm_kind[k] = Some((line, e.value.to_string())),
                        _ => return Err(e.range("must be 'clamp' or 'reciprocal'")),
                    },
                    "lo" => norm_lo[k] = Some(e.real()?),
                    "hi" => norm_hi[k] = Some(e.real()?),
                    "flip" => norm_flip[k] = Some(e.boolean()?),
                    _ => return Err(e.unknown()),
                }
                norm_kind[k].get_or_insert((line, String::new())).0 = line;
            }
            ["oracle", "evaluator"] => {
                cfg.evaluator = match e.value.to_ascii_lowercase().as_str() {
                    "e1" | "supervised" => OracleEvaluator::Supervised,
                    "e2" | "crossmodal" | "cross-modal" => OracleEvaluator::CrossModal,
                    _ => return Err(e.range("must be 'e1' or 'e2'")),
                }
            }
            ["nss", "path"] => cfg.nss_path = Some(PathBuf::from(e.value)),
            ["nss", "patch_size"] => {
                let p = e.integer()?;
                if p < 8 {
                    return Err(e.range("must be >= 8"));
                }
                cfg.nss_patch_size = p;
            }
            ["nss", "sharpness_fraction"] => {
                let f = e.real()?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(e.range("must be in (0, 1]"));
                }
                cfg.nss_sharpness_fraction = f;
            }
            ["train", field] => match *field {
                "batch_size" => {
                    let b = e.integer()?;
                    if b == 0 {
                        return Err(e.range("must be >= 1"));
                    }
                    cfg.train.batch_size = b;
                }
                "epochs" => cfg.train.epochs = e.integer()?,
                "learning_rate" => cfg.train.learning_rate = e.non_negative()?,
                "crop_size" => {
                    let c = e.integer()?;
                    if c < 16 {
                        return Err(e.range("must be >= 16"));
                    }
                    cfg.train.crop_size = c;
                }
                "loss_mode" => {
                    cfg.train.loss_mode = e.value.parse::<LossMode>().map_err(|msg| e.range(msg))?
                }
                "momentum" => {
                    let m = e.real()?;
                    if !(0.0..1.0).contains(&m) {
                        return Err(e.range("must be in [0, 1)"));
                    }
                    cfg.train.momentum = m;
                }
                "seed" => train_seed = Some(e.parse("a 64-bit unsigned integer")?),
                _ => return Err(e.unknown()),
            },
            ["cache", "dir"] => cfg.cache_dir = Some(PathBuf::from(e.value)),
            ["report", "path"] => cfg.report_dir = Some(PathBuf::from(e.value)),
            _ => return Err(e.unknown()),
        }
    }

    // normalizers
    for m in MetricId::ALL {
        let k = m.index();
        let Some((line, kind)) = &norm_kind[k] else {
            continue;
        };
        let default = Normalizer::default_for(m);
        let kind = if kind.is_empty() {
            match default {
                Normalizer::Clamp { .. } => "clamp",
                Normalizer::Reciprocal => "reciprocal",
            }
        } else {
            kind.as_str()
        };
        let range_err = |reason: &str| ConfigError::RangeError {
            line: *line,
            key: format!("norm.{}", m.as_str().to_ascii_lowercase()),
            reason: reason.to_string(),
        };
        cfg.weights.norms[k] = match kind {
            "reciprocal" => {
                if norm_lo[k].is_some() || norm_hi[k].is_some() || norm_flip[k].is_some() {
                    return Err(range_err("reciprocal takes no lo/hi/flip"));
                }
                Normalizer::Reciprocal
            }
            _ => {
                let (dlo, dhi, dflip) = match default {
                    Normalizer::Clamp { lo, hi, flip } => (lo, hi, flip),
                    Normalizer::Reciprocal => (0.0, 1.0, false),
                };
                let lo = norm_lo[k].unwrap_or(dlo);
                let hi = norm_hi[k].unwrap_or(dhi);
                if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                    return Err(range_err("needs lo < hi"));
                }
                Normalizer::Clamp {
                    lo,
                    hi,
                    flip: norm_flip[k].unwrap_or(dflip),
                }
            }
        };
    }
    if let Err(err) = cfg.weights.validate() {
        return Err(ConfigError::RangeError {
            line: weights_line,
            key: "weights".into(),
            reason: err.to_string(),
        });
    }

    // methods
    let build =
        |name: &str, mk: Option<&MethodKeys>, line: usize| -> Result<MethodSpec, ConfigError> {
            let range = |l: usize, key: &str, reason: String| ConfigError::RangeError {
                line: l,
                key: format!("method.{name}.{key}"),
                reason,
            };
            let kind = match mk.and_then(|m| m.kind.as_ref()) {
                Some((_, k)) => k.as_str(),
                None if BuiltinOp::KINDS.contains(&name) => name,
                None => {
                    return Err(range(
                        line,
                        "kind",
                        format!("is required for non-builtin method '{name}'"),
                    ))
                }
            };
            let mut op = BuiltinOp::from_kind(kind).expect("kind validated");
            if let Some(mk) = mk {
                let misplaced = |l: usize, field: &str| {
                    range(l, field, format!("does not apply to kind '{kind}'"))
                };
                if let Some((l, w)) = mk.weight {
                    match &mut op {
                        BuiltinOp::Average { weight } => *weight = w,
                        _ => return Err(misplaced(l, "weight")),
                    }
                }
                if let Some((l, r)) = mk.radius {
                    match &mut op {
                        BuiltinOp::MaxEnergy { window_radius } => *window_radius = r,
                        _ => return Err(misplaced(l, "radius")),
                    }
                }
                if let Some((l, n)) = mk.levels {
                    match &mut op {
                        BuiltinOp::LaplacianPyramid { levels }
                        | BuiltinOp::RatioPyramid { levels } => *levels = n,
                        _ => return Err(misplaced(l, "levels")),
                    }
                }
            }
            Ok(MethodSpec {
                name: name.to_string(),
                op,
                tasks: mk.and_then(|m| m.tasks.clone()).unwrap_or_default(),
            })
        };
    let (reg_line, names) = match registry_line {
        Some((l, names)) => (l, names),
        None => (0, BuiltinOp::KINDS.iter().map(|k| k.to_string()).collect()),
    };
    let mut methods = Vec::new();
    for name in &names {
        if methods.iter().any(|m: &MethodSpec| &m.name == name) {
            return Err(ConfigError::RangeError {
                line: reg_line,
                key: "registry.methods".into(),
                reason: format!("lists '{name}' twice"),
            });
        }
        methods.push(build(name, method_keys.get(name), reg_line)?);
    }
    let mut extra = Vec::new();
    for (name, mk) in &method_keys {
        if !names.contains(name) {
            extra.push(build(name, Some(mk), mk.first_line)?);
        }
    }
    cfg.methods = methods;
    cfg.extra_methods = extra;
    cfg.train.seed = train_seed.unwrap_or(cfg.seed);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(
            parse_config("# only a comment\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn negative_beta_is_range_error() {
        assert!(matches!(
            parse_config("weights.beta=-1"),
            Err(ConfigError::RangeError { line: 1, .. })
        ));
    }

    #[test]
    fn epochs_from_table() {
        assert_eq!(parse_config("train.epochs=255").unwrap().train.epochs, 255);
    }

    #[test]
    fn errors_name_lines() {
        let err = parse_config("seed=1\n\nbogus.key=3").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 3,
                key: "bogus.key".into()
            }
        );
        assert!(err.to_string().contains("line 3"));
        assert!(matches!(
            parse_config("train.epochs=many"),
            Err(ConfigError::TypeError { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("weights.alpha6=0.1"),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn methods_and_parameters() {
        let cfg = parse_config(
            "registry.methods = avg, lp2\n\
             method.avg.weight = 0.25\n\
             method.lp2.kind = lp\n\
             method.lp2.levels = 3\n\
             method.lp2.tasks = mf, me\n\
             method.extra.kind = tsal # for evolve\n",
        )
        .unwrap();
        assert_eq!(cfg.methods.len(), 2);
        assert_eq!(cfg.methods[0].op, BuiltinOp::Average { weight: 0.25 });
        assert_eq!(cfg.methods[1].op, BuiltinOp::LaplacianPyramid { levels: 3 });
        assert_eq!(
            cfg.methods[1].tasks,
            vec![TaskKind::MultiFocus, TaskKind::MultiExposure]
        );
        assert_eq!(cfg.extra_methods[0].name, "extra");
        assert!(cfg.method("extra").is_some());
        assert_eq!(cfg.registry().len(), 2);
    }

    #[test]
    fn misplaced_method_parameter() {
        assert!(matches!(
            parse_config("method.avg.levels=3"),
            Err(ConfigError::RangeError { line: 1, .. })
        ));
        assert!(parse_config("registry.methods=mystery").is_err());
    }

    #[test]
    fn normalizer_overrides() {
        let cfg =
            parse_config("norm.niqe.kind=clamp\nnorm.niqe.hi=20\nnorm.niqe.flip=true").unwrap();
        assert_eq!(
            cfg.weights.norms[MetricId::Niqe.index()],
            Normalizer::Clamp {
                lo: 0.0,
                hi: 20.0,
                flip: true
            }
        );
        assert!(parse_config("norm.en.lo=9").is_err());
    }

    #[test]
    fn train_keys() {
        let cfg = parse_config(
            "seed=7\ntrain.batch_size=10\ntrain.crop_size=256\ntrain.loss_mode=supervised\ntrain.learning_rate=0",
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 10);
        assert_eq!(cfg.train.crop_size, 256);
        assert_eq!(cfg.train.loss_mode, LossMode::Supervised);
        assert_eq!(cfg.train.learning_rate, 0.0);
        assert_eq!(cfg.train.seed, 7);
        assert!(parse_config("train.crop_size=8").is_err());
    }
}
