//! Discrete parameter spaces and search strategies.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChangeLog, Params, TuningError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDim {
    pub name: String,
    pub values: Vec<u32>,
}

/// Cartesian lattice in declared order; the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub dims: Vec<ParamDim>,
}

impl ParamSpace {
    pub fn new(dims: Vec<(&str, Vec<u32>)>) -> Result<Self, TuningError> {
        let dims: Vec<ParamDim> =
            dims.into_iter().map(|(n, values)| ParamDim { name: n.to_string(), values }).collect();
        let space = Self { dims };
        space.check()?;
        Ok(space)
    }

    pub fn check(&self) -> Result<(), TuningError> {
        match self.dims.iter().find(|d| d.values.is_empty()) {
            Some(d) => Err(TuningError::EmptyDimension(d.name.clone())),
            None => Ok(()),
        }
    }

    /// Block and thread tile sizes for a shared-memory GEMM kernel.
    pub fn gemm_default() -> Self {
        Self::new(vec![
            ("BLOCK_M", vec![16, 32, 64, 128]),
            ("BLOCK_N", vec![16, 32, 64, 128]),
            ("BLOCK_K", vec![8, 16, 32]),
            ("THREAD_M", vec![2, 4, 8]),
            ("THREAD_N", vec![2, 4, 8]),
        ])
        .unwrap()
    }

    pub fn size(&self) -> usize {
        if self.dims.is_empty() {
            return 0;
        }
        self.dims.iter().map(|d| d.values.len()).product()
    }

    pub fn point(&self, mut index: usize) -> Params {
        let mut out = Params::new();
        for d in self.dims.iter().rev() {
            let n = d.values.len();
            out.insert(d.name.clone(), d.values[index % n]);
            index /= n;
        }
        out
    }

    pub fn index_of(&self, params: &Params) -> Option<usize> {
        let mut index = 0;
        for d in &self.dims {
            let v = params.get(&d.name)?;
            let pos = d.values.iter().position(|x| x == v)?;
            index = index * d.values.len() + pos;
        }
        Some(index)
    }
}

/// A way of picking the next lattice point. Model-based searches such as
/// Bayesian optimization or genetic algorithms plug in here.
pub trait SearchStrategy {
    fn name(&self) -> &'static str;
    fn next_index(&self, space: &ParamSpace, visited: &BTreeSet<usize>, seed: u64) -> Result<usize, TuningError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GridSearch;

impl SearchStrategy for GridSearch {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn next_index(&self, space: &ParamSpace, visited: &BTreeSet<usize>, _seed: u64) -> Result<usize, TuningError> {
        (0..space.size()).find(|i| !visited.contains(i)).ok_or(TuningError::ExhaustedSpace)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomSearch;

impl SearchStrategy for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn next_index(&self, space: &ParamSpace, visited: &BTreeSet<usize>, seed: u64) -> Result<usize, TuningError> {
        let open: Vec<usize> = (0..space.size()).filter(|i| !visited.contains(i)).collect();
        let step = (visited.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step);
        open.choose(&mut rng).copied().ok_or(TuningError::ExhaustedSpace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Grid,
    Random,
}

impl StrategyKind {
    pub fn build(self) -> Box<dyn SearchStrategy> {
        match self {
            Self::Grid => Box::new(GridSearch),
            Self::Random => Box::new(RandomSearch),
        }
    }
}

/// Next unvisited point, treating every parameter set in `history` as visited.
pub fn next_params(
    strategy: &dyn SearchStrategy,
    space: &ParamSpace,
    history: &ChangeLog,
    seed: u64,
) -> Result<Params, TuningError> {
    space.check()?;
    let visited: BTreeSet<usize> = history.current().iter().filter_map(|c| space.index_of(&c.params)).collect();
    Ok(space.point(strategy.next_index(space, &visited, seed)?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::tuning::Version;

    fn small() -> ParamSpace {
        ParamSpace::new(vec![("BLOCK_M", vec![32, 64]), ("BLOCK_K", vec![8, 16, 32])]).unwrap()
    }

    fn visit(log: &mut ChangeLog, p: Params) {
        let n = log.len() as u32;
        log.register_candidate(0, Version::new(1, 0, n), None, p, "", "x", "PG1.1").unwrap();
    }

    #[test]
    fn grid_first_point() {
        let space = ParamSpace::new(vec![("BLOCK_K", vec![8, 16, 32])]).unwrap();
        let p = next_params(&GridSearch, &space, &ChangeLog::new(), 0).unwrap();
        assert_eq!(p, Params::from([("BLOCK_K".to_string(), 8)]));
    }

    #[test]
    fn grid_covers_space_once_then_exhausts() {
        let space = small();
        let mut log = ChangeLog::new();
        let mut seen = BTreeSet::new();
        for _ in 0..6 {
            let p = next_params(&GridSearch, &space, &log, 0).unwrap();
            assert!(seen.insert(space.index_of(&p).unwrap()));
            visit(&mut log, p);
        }
        assert_eq!(next_params(&GridSearch, &space, &log, 0), Err(TuningError::ExhaustedSpace));
        assert_eq!(next_params(&RandomSearch, &space, &log, 0), Err(TuningError::ExhaustedSpace));
    }

    #[test]
    fn declared_order_last_fastest() {
        let s = small();
        assert_eq!(s.point(1)["BLOCK_K"], 16);
        assert_eq!(s.point(1)["BLOCK_M"], 32);
        assert_eq!(s.point(3)["BLOCK_M"], 64);
        assert_eq!(ParamSpace::gemm_default().size(), 432);
    }

    #[test]
    fn empty_dimension_rejected() {
        assert_eq!(ParamSpace::new(vec![("X", vec![])]), Err(TuningError::EmptyDimension("X".into())));
    }

    fn random_sequence(seed: u64) -> Vec<Params> {
        let space = ParamSpace::gemm_default();
        let mut log = ChangeLog::new();
        let mut out = Vec::new();
        for _ in 0..25 {
            let p = next_params(&RandomSearch, &space, &log, seed).unwrap();
            out.push(p.clone());
            visit(&mut log, p);
        }
        out
    }

    #[test]
    fn random_is_reproducible() {
        assert_eq!(random_sequence(42), random_sequence(42));
        assert_ne!(random_sequence(42), random_sequence(43));
    }

    proptest! {
        #[test]
        fn index_round_trip(i in 0usize..432) {
            let s = ParamSpace::gemm_default();
            prop_assert_eq!(s.index_of(&s.point(i)), Some(i));
        }

        #[test]
        fn random_never_revisits(seed in any::<u64>()) {
            let space = small();
            let mut log = ChangeLog::new();
            let mut seen = BTreeSet::new();
            for _ in 0..space.size() {
                let p = next_params(&RandomSearch, &space, &log, seed).unwrap();
                prop_assert!(seen.insert(space.index_of(&p).unwrap()));
                visit(&mut log, p);
            }
            prop_assert_eq!(next_params(&RandomSearch, &space, &log, seed), Err(TuningError::ExhaustedSpace));
        }
    }
}
