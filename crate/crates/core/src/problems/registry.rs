use std::collections::BTreeMap;

use super::{wrap_shared, ParametricProblem, SharedComponentSpec, SynthD1, SynthP1, SynthP2, Zdt1};
use crate::error::{Error, Result};

pub type ProblemFactory = Box<dyn Fn() -> Result<ParametricProblem> + Send + Sync>;

/// Problems available by name; external suites register their own factories.
pub struct ProblemRegistry {
    factories: BTreeMap<String, ProblemFactory>,
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// `synth-p1`, `synth-p2`, `synth-d1` (10 variables), `zdt1` (4 variables).
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("synth-p1", || Ok(ParametricProblem::new(SynthP1::new())));
        r.register("synth-p2", || Ok(ParametricProblem::new(SynthP2::new())));
        r.register("synth-d1", || Ok(ParametricProblem::new(SynthD1::new(10))));
        r.register("zdt1", || Ok(ParametricProblem::new(Zdt1::new(4))));
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Result<ParametricProblem> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str) -> Result<ParametricProblem> {
        let f = self.factories.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Config(format!("unknown problem {name:?}; registered: {known:?}"))
        })?;
        f()
    }

    /// Creates `name`, wrapping it with shared components when `shared` is given.
    pub fn create_with_shared(&self, name: &str, shared: Option<&[usize]>) -> Result<ParametricProblem> {
        let base = self.create(name)?;
        match shared {
            Some(idx) => wrap_shared(&SharedComponentSpec::new(base, idx.to_vec())),
            None => Ok(base),
        }
    }
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
