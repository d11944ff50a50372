//! Fusion method library: built-in operators and the registry that runs
//! them per pair.

mod ops;

pub use ops::{
    fuse_average, fuse_laplacian_pyramid, fuse_max_energy, fuse_ratio_pyramid,
    fuse_two_scale_saliency, saliency_weights,
};

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{GrayImage, ImagePair, TaskKind};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("average weight {0} outside [0,1]")]
    WeightOutOfRange(f64),
    #[error("{levels} pyramid levels requested for {width}x{height}; allowed 2..={max}")]
    TooManyLevels {
        levels: usize,
        max: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid operator parameter: {0}")]
    InvalidParameter(String),
    #[error("method '{0}' already registered")]
    DuplicateMethod(String),
    #[error("no registered method applies to task {task} of pair '{pair}'")]
    NoApplicableMethod { pair: String, task: TaskKind },
    #[error("empty method registry")]
    EmptyRegistry,
    #[error("unknown operator kind '{0}'")]
    UnknownKind(String),
    #[error("method '{method}' failed on pair '{pair}': {source}")]
    Method {
        method: String,
        pair: String,
        #[source]
        source: Box<FusionError>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FusionMethodId {
    pub name: String,
    pub version: u32,
}

impl FusionMethodId {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self {
            name: name.into(),
            version,
        }
    }
}

impl fmt::Display for FusionMethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Anything that turns a registered pair into one fused image.
pub trait FusionOperator: Send + Sync {
    fn fuse(&self, pair: &ImagePair) -> Result<GrayImage, FusionError>;
}

impl<F> FusionOperator for F
where
    F: Fn(&ImagePair) -> Result<GrayImage, FusionError> + Send + Sync,
{
    fn fuse(&self, pair: &ImagePair) -> Result<GrayImage, FusionError> {
        self(pair)
    }
}

/// Parameterized built-in operators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BuiltinOp {
    Average { weight: f64 },
    MaxEnergy { window_radius: usize },
    LaplacianPyramid { levels: usize },
    RatioPyramid { levels: usize },
    TwoScaleSaliency,
}

impl BuiltinOp {
    pub const KINDS: [&'static str; 5] = ["avg", "maxsel", "lp", "rp", "tsal"];

    /// Default parameters for a kind token.
    pub fn from_kind(kind: &str) -> Result<Self, FusionError> {
        match kind {
            "avg" => Ok(BuiltinOp::Average { weight: 0.5 }),
            "maxsel" => Ok(BuiltinOp::MaxEnergy { window_radius: 2 }),
            "lp" => Ok(BuiltinOp::LaplacianPyramid { levels: 4 }),
            "rp" => Ok(BuiltinOp::RatioPyramid { levels: 4 }),
            "tsal" => Ok(BuiltinOp::TwoScaleSaliency),
            other => Err(FusionError::UnknownKind(other.into())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BuiltinOp::Average { .. } => "avg",
            BuiltinOp::MaxEnergy { .. } => "maxsel",
            BuiltinOp::LaplacianPyramid { .. } => "lp",
            BuiltinOp::RatioPyramid { .. } => "rp",
            BuiltinOp::TwoScaleSaliency => "tsal",
        }
    }
}

impl FusionOperator for BuiltinOp {
    fn fuse(&self, pair: &ImagePair) -> Result<GrayImage, FusionError> {
        match *self {
            BuiltinOp::Average { weight } => fuse_average(pair, weight),
            BuiltinOp::MaxEnergy { window_radius } => fuse_max_energy(pair, window_radius),
            BuiltinOp::LaplacianPyramid { levels } => fuse_laplacian_pyramid(pair, levels),
            BuiltinOp::RatioPyramid { levels } => fuse_ratio_pyramid(pair, levels),
            BuiltinOp::TwoScaleSaliency => fuse_two_scale_saliency(pair),
        }
    }
}

#[derive(Clone)]
pub struct RegistryEntry {
    pub id: FusionMethodId,
    pub op: Arc<dyn FusionOperator>,
    /// Tasks the method applies to; empty means every task.
    pub tasks: Vec<TaskKind>,
}

impl RegistryEntry {
    pub fn applies_to(&self, task: TaskKind) -> bool {
        task == TaskKind::Unknown || self.tasks.is_empty() || self.tasks.contains(&task)
    }
}

impl fmt::Debug for RegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegistryEntry")
            .field("id", &self.id)
            .field("tasks", &self.tasks)
            .finish()
    }
}

/// Ordered, name-unique list of fusion methods.
#[derive(Clone, Debug, Default)]
pub struct MethodRegistry {
    entries: Vec<RegistryEntry>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The five built-ins with default parameters, applicable to every task.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        for kind in BuiltinOp::KINDS {
            let op = BuiltinOp::from_kind(kind).expect("builtin kind");
            reg.register(FusionMethodId::new(kind, 1), Arc::new(op), Vec::new())
                .expect("unique builtin names");
        }
        reg
    }

    pub fn register(
        &mut self,
        id: FusionMethodId,
        op: Arc<dyn FusionOperator>,
        tasks: Vec<TaskKind>,
    ) -> Result<(), FusionError> {
        if self.entries.iter().any(|e| e.id.name == id.name) {
            return Err(FusionError::DuplicateMethod(id.name));
        }
        self.entries.push(RegistryEntry { id, op, tasks });
        Ok(())
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.id.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Runs every applicable method, returning candidates in registration
    /// order.
    pub fn fuse_all(
        &self,
        pair: &ImagePair,
    ) -> Result<Vec<(FusionMethodId, GrayImage)>, FusionError> {
        if self.entries.is_empty() {
            return Err(FusionError::EmptyRegistry);
        }
        let applicable: Vec<&RegistryEntry> = self
            .entries
            .iter()
            .filter(|e| e.applies_to(pair.task))
            .collect();
        if applicable.is_empty() {
            return Err(FusionError::NoApplicableMethod {
                pair: pair.id.clone(),
                task: pair.task,
            });
        }
        applicable
            .par_iter()
            .map(|e| {
                e.op.fuse(pair)
                    .map(|img| (e.id.clone(), img))
                    .map_err(|err| FusionError::Method {
                        method: e.id.name.clone(),
                        pair: pair.id.clone(),
                        source: Box::new(err),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn builtin_fuse_all_unknown_task() {
        let reg = MethodRegistry::builtin();
        let mut pair = synthetic::pair("p", TaskKind::MultiFocus, 48, 48, 1);
        pair.task = TaskKind::Unknown;
        let out = reg.fuse_all(&pair).unwrap();
        let names: Vec<_> = out.iter().map(|(id, _)| id.name.as_str()).collect();
        assert_eq!(names, BuiltinOp::KINDS);
    }

    #[test]
    fn tag_filter() {
        let mut reg = MethodRegistry::new();
        reg.register(
            FusionMethodId::new("lp", 1),
            Arc::new(BuiltinOp::LaplacianPyramid { levels: 3 }),
            vec![TaskKind::MultiFocus],
        )
        .unwrap();
        let pair = synthetic::pair("p", TaskKind::MultiExposure, 32, 32, 1);
        assert!(matches!(
            reg.fuse_all(&pair),
            Err(FusionError::NoApplicableMethod { .. })
        ));
        let mf = synthetic::pair("q", TaskKind::MultiFocus, 32, 32, 1);
        assert_eq!(reg.fuse_all(&mf).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut reg = MethodRegistry::builtin();
        let err = reg
            .register(
                FusionMethodId::new("lp", 2),
                Arc::new(BuiltinOp::TwoScaleSaliency),
                vec![],
            )
            .unwrap_err();
        assert!(matches!(err, FusionError::DuplicateMethod(n) if n == "lp"));
    }

    #[test]
    fn empty_registry() {
        let pair = synthetic::pair("p", TaskKind::Unknown, 16, 16, 1);
        assert!(matches!(
            MethodRegistry::new().fuse_all(&pair),
            Err(FusionError::EmptyRegistry)
        ));
    }

    #[test]
    fn closures_register() {
        let mut reg = MethodRegistry::new();
        let first = |p: &ImagePair| Ok(p.a.clone());
        reg.register(FusionMethodId::new("first", 1), Arc::new(first), vec![])
            .unwrap();
        let pair = synthetic::pair("p", TaskKind::Medical, 16, 16, 2);
        assert_eq!(reg.fuse_all(&pair).unwrap()[0].1, pair.a);
    }
}
