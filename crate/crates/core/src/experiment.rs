//! The method comparison on a synthetic world: raw cosine, max-norm, and
//! one adapter per transform kind, all scored on the same retrieved lists.

use std::fmt;
use std::str::FromStr;

use crate::adapter::{calibrate_candidates, train_adapter, AdapterNetwork, AdapterTrainConfig, TransformKind};
use crate::data::{generate_synthetic, EmbeddingTable, SyntheticDataset, SyntheticSpec};
use crate::error::{Error, Result, StageExt};
use crate::eval::{evaluate_lists, max_norm_baseline, raw_baseline, unit_edges, MetricReport, ThresholdChoice};
use crate::index::{SearchResult, VectorIndex};
use crate::judgment::{JudgedPair, Qrels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Raw,
    MaxNorm,
    Adapter(TransformKind),
}

impl Method {
    /// Baselines first, then the adapter kinds with parameters.
    pub const ALL: [Method; 6] = [
        Method::Raw,
        Method::MaxNorm,
        Method::Adapter(TransformKind::Linear),
        Method::Adapter(TransformKind::Sqrt),
        Method::Adapter(TransformKind::Quadratic),
        Method::Adapter(TransformKind::Power),
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Raw => f.write_str("raw"),
            Method::MaxNorm => f.write_str("max-norm"),
            Method::Adapter(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Method::Raw),
            "max-norm" => Ok(Method::MaxNorm),
            other => match other.parse::<TransformKind>()? {
                TransformKind::Raw => Ok(Method::Raw),
                k => Ok(Method::Adapter(k)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub k: usize,
    pub target_recall: f64,
    pub mrr_k: usize,
    /// Training settings shared by every adapter kind; `kind` is overridden.
    pub adapter: AdapterTrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            k: 50,
            target_recall: 0.95,
            mrr_k: 10,
            adapter: AdapterTrainConfig::default(),
        }
    }
}

/// A generated dataset with its index and lookup tables.
pub struct World {
    pub dataset: SyntheticDataset,
    pub index: VectorIndex,
    pub queries: EmbeddingTable,
    pub corpus: EmbeddingTable,
    pub qrels: Qrels,
}

impl World {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let dataset = generate_synthetic(spec).stage("gen-synth")?;
        Self::from_dataset(dataset)
    }

    pub fn from_dataset(dataset: SyntheticDataset) -> Result<Self> {
        let index = VectorIndex::build(dataset.corpus.iter().map(|r| (r.id.clone(), r.values.clone())))
            .stage("build-index")?;
        let queries = EmbeddingTable::from_records(&dataset.queries)?;
        let corpus = EmbeddingTable::from_records(&dataset.corpus)?;
        let qrels = Qrels::from_pairs(&dataset.qrels)?;
        Ok(Self {
            dataset,
            index,
            queries,
            corpus,
            qrels,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.dataset
            .splits
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown split {name:?}")))
    }

    pub fn split_pairs(&self, name: &str) -> Result<Vec<JudgedPair>> {
        Ok(self.dataset.pairs_for(self.split(name)?).cloned().collect())
    }

    /// Top-`k` lists for the queries of one split, in id order.
    pub fn retrieve(&self, split: &str, k: usize) -> Result<Vec<SearchResult>> {
        self.split(split)?
            .iter()
            .map(|id| self.index.search(id, self.queries.require(id)?, k))
            .collect::<Result<Vec<_>>>()
            .stage("search")
    }

    pub fn train_adapter(&self, config: &AdapterTrainConfig) -> Result<AdapterNetwork> {
        let pairs = self.split_pairs("train")?;
        Ok(train_adapter(config, &pairs, &self.queries, &self.corpus)
            .stage("train-adapter")?
            .network)
    }
}

/// Fills logits for `method`. Adapter methods need the matching network.
pub fn calibrate_lists(
    method: Method,
    lists: &[SearchResult],
    queries: &EmbeddingTable,
    adapter: Option<&AdapterNetwork>,
) -> Result<Vec<SearchResult>> {
    lists
        .iter()
        .map(|r| match method {
            Method::Raw => Ok(raw_baseline(r)),
            Method::MaxNorm => Ok(max_norm_baseline(r).0),
            Method::Adapter(kind) => {
                let net = adapter
                    .filter(|n| n.kind() == kind)
                    .ok_or_else(|| Error::invalid(format!("no {kind} adapter supplied")))?;
                calibrate_candidates(net, queries.require(&r.query_id)?, r)
            }
        })
        .collect::<Result<Vec<_>>>()
        .stage("calibrate")
}

/// Trained adapters and one report per method on the test split.
pub struct Comparison {
    pub adapters: Vec<AdapterNetwork>,
    pub reports: Vec<MetricReport>,
}

impl Comparison {
    pub fn report(&self, method: Method) -> Option<&MetricReport> {
        let name = method.to_string();
        self.reports.iter().find(|r| r.method == name)
    }
}

/// Trains the adapter kinds named in `methods`, then evaluates every method
/// on the test split with a threshold self-calibrated at the target recall.
pub fn compare_methods(world: &World, config: &ExperimentConfig, methods: &[Method]) -> Result<Comparison> {
    let lists = world.retrieve("test", config.k)?;
    let mut adapters = Vec::new();
    let mut reports = Vec::new();
    for &m in methods {
        let net = match m {
            Method::Adapter(kind) => {
                let cfg = AdapterTrainConfig {
                    kind,
                    ..config.adapter.clone()
                };
                Some(world.train_adapter(&cfg)?)
            }
            _ => None,
        };
        let calibrated = calibrate_lists(m, &lists, &world.queries, net.as_ref())?;
        reports.push(
            evaluate_lists(
                &m.to_string(),
                &calibrated,
                &world.qrels,
                ThresholdChoice::SelfCalibrated(config.target_recall),
                config.target_recall,
                config.mrr_k,
                &unit_edges(config.k),
            )
            .stage("evaluate")?,
        );
        adapters.extend(net);
    }
    Ok(Comparison { adapters, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("cubic".parse::<Method>().is_err());
    }

    #[test]
    fn small_comparison_runs() {
        let spec = SyntheticSpec { num_queries: 80, corpus_size: 1600, dim: 16, seed: 1, ..Default::default() };
        let world = World::generate(&spec).unwrap();
        let cfg = ExperimentConfig {
            synthetic: spec,
            k: 10,
            adapter: AdapterTrainConfig { epochs: 2, ..Default::default() },
            ..Default::default()
        };
        let cmp = compare_methods(&world, &cfg, &Method::ALL).unwrap();
        assert_eq!(cmp.reports.len(), 6);
        assert_eq!(cmp.adapters.len(), 4);
        for r in &cmp.reports {
            assert!(r.p_at_r.recall >= 0.95);
            assert!((0.0..=1.0).contains(&r.pr_auc));
        }
    }
}
