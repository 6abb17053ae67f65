//! Run configuration and its string key/value interface.

use serde::{Deserialize, Serialize};

use crate::dataio::FoldMethod;
use crate::error::{Error, Result};
use crate::kernel::KernelFamily;
use crate::modelselect::SelectionMode;
use crate::solver::{self, LossKind};
use crate::workingsets::{PartitionMethod, DEFAULT_OVERLAP_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    /// Geometric grid with 10, 15 or 20 values per axis (codes 0, 1, 2).
    Default(usize),
    Libsvm,
}

impl std::str::FromStr for GridChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Self::Default(10)),
            "1" => Ok(Self::Default(15)),
            "2" => Ok(Self::Default(20)),
            "libsvm" | "-1" => Ok(Self::Libsvm),
            other => Err(Error::Argument(format!("grid_choice must be 0, 1, 2 or libsvm, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McType {
    #[default]
    Ava,
    Ova,
}

pub const DEFAULT_CELL_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// 0 uses every available core.
    pub threads: usize,
    pub display: u8,
    pub grid_choice: GridChoice,
    pub adaptivity_control: u8,
    pub partition: PartitionMethod,
    pub cell_size: usize,
    pub overlap_factor: f64,
    pub folds: usize,
    /// `None`: stratified for classification, random otherwise.
    pub fold_method: Option<FoldMethod>,
    pub seed: u64,
    pub kernel: KernelFamily,
    pub selection: SelectionMode,
    pub cv_tolerance: f64,
    pub final_tolerance: f64,
    pub max_iterations: Option<u64>,
    pub gammas: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub levels: Option<Vec<f64>>,
    pub npl_class: Option<f64>,
    pub npl_alpha: f64,
    pub solver: Option<LossKind>,
    pub mc_type: McType,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            threads: 1,
            display: 0,
            grid_choice: GridChoice::Default(10),
            adaptivity_control: 0,
            partition: PartitionMethod::None,
            cell_size: DEFAULT_CELL_SIZE,
            overlap_factor: DEFAULT_OVERLAP_FACTOR,
            folds: 5,
            fold_method: None,
            seed: 1,
            kernel: KernelFamily::GaussianRbf,
            selection: SelectionMode::RetrainSingle,
            cv_tolerance: solver::CV_TOLERANCE,
            final_tolerance: solver::FINAL_TOLERANCE,
            max_iterations: None,
            gammas: None,
            lambdas: None,
            weights: None,
            levels: None,
            npl_class: None,
            npl_alpha: 0.05,
            solver: None,
            mc_type: McType::Ava,
        }
    }
}

/// Keys accepted by [`Config::set`].
pub const KEYS: &[&str] = &[
    "threads",
    "display",
    "grid_choice",
    "adaptivity_control",
    "voronoi",
    "overlap",
    "folds",
    "fold_method",
    "seed",
    "kernel",
    "selection",
    "epsilon",
    "final_epsilon",
    "max_iterations",
    "gammas",
    "lambdas",
    "weights",
    "levels",
    "npl_class",
    "npl_alpha",
    "solver",
    "mc_type",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Argument(format!("invalid value `{value}` for {key}")))
}

/// Reads `1,2,3`, `1 2 3` or `c(1,2,3)`.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let v = v
        .strip_prefix("c(")
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(v);
    let items: Vec<f64> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() || items.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument(format!("{key} needs a nonempty list of finite numbers")));
    }
    Ok(items)
}

/// Maps a voronoi code to a partition method: 0 none, 1 random chunks,
/// 2-4 disjoint Voronoi cells, 5 overlapping cells, 6 recursive splits.
pub fn partition_from_code(code: u32) -> Result<PartitionMethod> {
    Ok(match code {
        0 => PartitionMethod::None,
        1 => PartitionMethod::RandomChunk,
        2..=4 => PartitionMethod::VoronoiDisjoint,
        5 => PartitionMethod::VoronoiOverlap,
        6 => PartitionMethod::Recursive,
        _ => return Err(Error::Argument(format!("voronoi code must be 0-6, got {code}"))),
    })
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "threads" => self.threads = parse(&key, value)?,
            "display" => {
                let d: u8 = parse(&key, value)?;
                if d > 2 {
                    return Err(Error::Argument(format!("display must be 0, 1 or 2, got {d}")));
                }
                self.display = d;
            }
            "grid_choice" => self.grid_choice = value.parse()?,
            "adaptivity_control" => {
                let a: u8 = parse(&key, value)?;
                if a > 2 {
                    return Err(Error::Argument(format!("adaptivity_control must be 0, 1 or 2, got {a}")));
                }
                self.adaptivity_control = a;
            }
            "voronoi" => {
                let parts = parse_list(&key, value)?;
                if parts.len() > 2 || parts.iter().any(|p| p.fract() != 0.0 || *p < 0.0) {
                    return Err(Error::Argument(format!("voronoi expects `code[,size]`, got `{value}`")));
                }
                self.partition = partition_from_code(parts[0] as u32)?;
                if let Some(&size) = parts.get(1) {
                    if size < 2.0 {
                        return Err(Error::Argument(format!("voronoi cell size must be at least 2, got {size}")));
                    }
                    self.cell_size = size as usize;
                }
            }
            "overlap" => {
                let f: f64 = parse(&key, value)?;
                if !(f >= 1.0 && f.is_finite()) {
                    return Err(Error::Argument(format!("overlap must be at least 1, got {f}")));
                }
                self.overlap_factor = f;
            }
            "folds" => {
                let k: usize = parse(&key, value)?;
                if k < 2 {
                    return Err(Error::Argument(format!("folds must be at least 2, got {k}")));
                }
                self.folds = k;
            }
            "fold_method" => self.fold_method = Some(value.trim().parse()?),
            "seed" | "random_seed" => self.seed = parse(&key, value)?,
            "kernel" => self.kernel = value.trim().parse()?,
            "selection" => self.selection = value.trim().parse()?,
            "epsilon" => self.cv_tolerance = positive(&key, value)?,
            "final_epsilon" => self.final_tolerance = positive(&key, value)?,
            "max_iterations" => {
                let m: u64 = parse(&key, value)?;
                self.max_iterations = (m > 0).then_some(m);
            }
            "gammas" => self.gammas = Some(positive_list(&key, value)?),
            "lambdas" => self.lambdas = Some(positive_list(&key, value)?),
            "weights" => self.weights = Some(positive_list(&key, value)?),
            "levels" => {
                let l = parse_list(&key, value)?;
                if l.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return Err(Error::Argument("levels must lie in (0, 1)".into()));
                }
                self.levels = Some(l);
            }
            "npl_class" => self.npl_class = Some(parse(&key, value)?),
            "npl_alpha" | "npl_constraint" => {
                let a: f64 = parse(&key, value)?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::Argument(format!("npl_alpha must lie in (0, 1), got {a}")));
                }
                self.npl_alpha = a;
            }
            "solver" => {
                self.solver = Some(match value.trim() {
                    "hinge" | "svm" | "0" => LossKind::Hinge,
                    "ls" | "least_squares" | "1" => LossKind::LeastSquares,
                    other => return Err(Error::Argument(format!("solver must be hinge or ls, got `{other}`"))),
                })
            }
            "mc_type" => {
                self.mc_type = match value.trim().to_ascii_lowercase().as_str() {
                    "ava" | "ava_hinge" | "0" => McType::Ava,
                    "ova" | "ova_ls" | "1" => McType::Ova,
                    other => return Err(Error::Argument(format!("mc_type must be ava or ova, got `{other}`"))),
                }
            }
            _ => return Err(Error::Argument(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_pairs<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Argument(format!("{key} must be positive, got {v}")));
    }
    Ok(v)
}

fn positive_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let l = parse_list(key, value)?;
    if l.iter().any(|v| *v <= 0.0) {
        return Err(Error::Argument(format!("{key} values must be positive")));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voronoi_forms() {
        let mut c = Config::default();
        c.set("voronoi", "5").unwrap();
        assert_eq!(c.partition, PartitionMethod::VoronoiOverlap);
        assert_eq!(c.cell_size, DEFAULT_CELL_SIZE);
        c.set("voronoi", "c(6,1000)").unwrap();
        assert_eq!((c.partition, c.cell_size), (PartitionMethod::Recursive, 1000));
        c.set("voronoi", "3 500").unwrap();
        assert_eq!((c.partition, c.cell_size), (PartitionMethod::VoronoiDisjoint, 500));
        assert!(c.set("voronoi", "7").is_err());
        assert!(c.set("voronoi", "1,1").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = Config::default();
        assert!(c.set("folds", "1").is_err());
        assert!(c.set("display", "3").is_err());
        assert!(c.set("no_such_key", "1").is_err());
        assert!(c.set("npl_alpha", "1.5").is_err());
        assert!(c.set("grid_choice", "7").is_err());
        c.set("grid_choice", "libsvm").unwrap();
        assert_eq!(c.grid_choice, GridChoice::Libsvm);
        c.set("grid-choice", "1").unwrap();
        assert_eq!(c.grid_choice, GridChoice::Default(15));
        c.set("levels", "0.1, 0.9").unwrap();
        assert_eq!(c.levels, Some(vec![0.1, 0.9]));
    }

    #[test]
    fn every_key_is_accepted() {
        let samples = [
            ("threads", "2"),
            ("display", "1"),
            ("grid_choice", "0"),
            ("adaptivity_control", "1"),
            ("voronoi", "2,100"),
            ("overlap", "2"),
            ("folds", "3"),
            ("fold_method", "random"),
            ("seed", "9"),
            ("kernel", "laplacian"),
            ("selection", "keep_fold_models"),
            ("epsilon", "0.01"),
            ("final_epsilon", "0.001"),
            ("max_iterations", "1000"),
            ("gammas", "1,2"),
            ("lambdas", "0.1"),
            ("weights", "1,2"),
            ("levels", "0.5"),
            ("npl_class", "1"),
            ("npl_alpha", "0.1"),
            ("solver", "ls"),
            ("mc_type", "ova"),
        ];
        assert_eq!(samples.len(), KEYS.len());
        let mut c = Config::default();
        for (k, v) in samples {
            assert!(KEYS.contains(&k));
            c.set(k, v).unwrap();
        }
    }
}
