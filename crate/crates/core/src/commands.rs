//! The pipeline subcommands. Each one checks its inputs, writes its artifacts
//! under the output directory and returns a human-readable summary.
//!
//! Default file layout under `out`:
//!
//! | stage          | writes                                                        |
//! |----------------|---------------------------------------------------------------|
//! | gen-synth      | `queries.crem`, `queries.{train,calib,test}.crem`, `corpus.crem`, `qrels.txt`, `tokens/*` |
//! | train-encoder  | `tokens/query.cren`, `tokens/candidate.cren`                  |
//! | embed          | `tokens/queries.crem`, `tokens/candidates.crem`               |
//! | build-index    | `index.crix`                                                  |
//! | train-adapter  | `adapter_{kind}.crad`                                         |
//! | calibrate      | `calibration_{kind}.toml`                                     |
//! | search         | `run_{kind}.txt`                                              |
//! | evaluate       | `report.txt`, `report.kv`, `histogram_{method}.tsv`           |

use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{calibrate_candidates, train_adapter, AdapterNetwork, TransformKind};
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, generate_token_dataset, read_embeddings, read_features, read_qrels, write_embeddings,
    write_features, write_qrels, write_run, EmbeddingRecord, EmbeddingTable,
};
use crate::encoder::{train_encoders, DualParams, EncoderData, FeatureTable, LinearEncoder};
use crate::error::{Error, Result, StageExt};
use crate::eval::{evaluate_lists, recall_at_k, render_kv, render_table, unit_edges, ThresholdChoice};
use crate::experiment::{calibrate_lists, Method};
use crate::filter::{calibrate_threshold_with, Pipeline, ScoredPair, StageTimings, ThresholdCalibration};
use crate::index::{SearchResult, VectorIndex};
use crate::judgment::{JudgedPair, Qrels};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenSynth,
    TrainEncoder,
    Embed,
    BuildIndex,
    TrainAdapter,
    Calibrate,
    Search,
    Evaluate,
}

impl Command {
    /// Pipeline order.
    pub const ALL: [Command; 8] = [
        Command::GenSynth,
        Command::TrainEncoder,
        Command::Embed,
        Command::BuildIndex,
        Command::TrainAdapter,
        Command::Calibrate,
        Command::Search,
        Command::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenSynth => "gen-synth",
            Command::TrainEncoder => "train-encoder",
            Command::Embed => "embed",
            Command::BuildIndex => "build-index",
            Command::TrainAdapter => "train-adapter",
            Command::Calibrate => "calibrate",
            Command::Search => "search",
            Command::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command {s:?}")))
    }
}

/// Artifact locations for one run, honoring `[paths]` overrides.
#[derive(Debug, Clone)]
pub struct Artifacts<'a> {
    cfg: &'a RunConfig,
}

impl<'a> Artifacts<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        Self { cfg }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out(name))
    }

    /// Query embeddings for a split, unless `paths.queries` is set.
    pub fn queries(&self, split: &str) -> PathBuf {
        self.or_out(&self.cfg.paths.queries, &format!("queries.{split}.crem"))
    }

    pub fn corpus(&self) -> PathBuf {
        self.or_out(&self.cfg.paths.embeddings, "corpus.crem")
    }

    pub fn qrels(&self) -> PathBuf {
        self.or_out(&self.cfg.paths.qrels, "qrels.txt")
    }

    pub fn index(&self) -> PathBuf {
        self.or_out(&self.cfg.paths.index, "index.crix")
    }

    pub fn adapter(&self, kind: TransformKind) -> PathBuf {
        self.or_out(&self.cfg.paths.adapter, &format!("adapter_{kind}.crad"))
    }

    /// The trained adapter for `kind` under `out`, ignoring `paths.adapter`.
    pub fn trained_adapter(&self, kind: TransformKind) -> PathBuf {
        self.out(&format!("adapter_{kind}.crad"))
    }

    pub fn calibration(&self, kind: TransformKind) -> PathBuf {
        self.out(&format!("calibration_{kind}.toml"))
    }

    pub fn run_file(&self, kind: TransformKind) -> PathBuf {
        self.out(&format!("run_{kind}.txt"))
    }

    pub fn tokens(&self, name: &str) -> PathBuf {
        self.cfg.out.join("tokens").join(name)
    }
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::MissingInput(p.to_path_buf()));
        }
    }
    Ok(())
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_qrels(path: &Path) -> Result<Vec<JudgedPair>> {
    read_qrels(BufReader::new(File::open(path)?))
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    let mut t = FeatureTable::new();
    for (id, f) in read_features(BufReader::new(File::open(path)?))? {
        if t.insert(id.clone(), f).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(t)
}

fn write_feature_table(path: &Path, t: &FeatureTable) -> Result<()> {
    let items: Vec<_> = t.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    write_features(create(path)?, &items)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

fn load_table(path: &Path) -> Result<(Vec<String>, EmbeddingTable)> {
    let (_, records) = read_embeddings(path)?;
    let ids = records.iter().map(|r| r.id.clone()).collect();
    Ok((ids, EmbeddingTable::from_records(&records)?))
}

fn table_dim(t: &EmbeddingTable, path: &Path) -> Result<usize> {
    t.dim()
        .ok_or_else(|| Error::invalid(format!("{} holds no embeddings", path.display())))
}

/// Runs one subcommand and returns its summary.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String> {
    let out = match cmd {
        Command::GenSynth => gen_synth(cfg),
        Command::TrainEncoder => train_encoder(cfg),
        Command::Embed => embed(cfg),
        Command::BuildIndex => build_index(cfg),
        Command::TrainAdapter => train_adapter_cmd(cfg),
        Command::Calibrate => calibrate(cfg),
        Command::Search => search(cfg),
        Command::Evaluate => evaluate(cfg),
    };
    out.stage(cmd.name())
}

fn gen_synth(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let ds = generate_synthetic(&cfg.synthetic)?;
    let tokens = generate_token_dataset(&cfg.tokens)?;
    let dim = ds.spec.dim;
    fs::create_dir_all(&cfg.out)?;
    write_embeddings(a.out("queries.crem"), dim, &ds.queries)?;
    for split in ["train", "calib", "test"] {
        let ids = ds.splits.get(split).expect("known split");
        write_embeddings(a.out(&format!("queries.{split}.crem")), dim, &ds.query_records(ids))?;
    }
    write_embeddings(a.out("corpus.crem"), dim, &ds.corpus)?;
    write_qrels(create(&a.out("qrels.txt"))?, &ds.qrels)?;

    write_feature_table(&a.tokens("queries.feat"), &tokens.queries)?;
    write_feature_table(&a.tokens("candidates.feat"), &tokens.candidates)?;
    write_qrels(create(&a.tokens("qrels.txt"))?, &tokens.qrels)?;
    write_ids(&a.tokens("train.ids"), &tokens.train_queries)?;
    write_ids(&a.tokens("test.ids"), &tokens.test_queries)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "synthetic: {} queries ({}/{}/{} train/calib/test), {} candidates, d = {}, {} judgments",
        ds.queries.len(),
        ds.splits.train.len(),
        ds.splits.calib.len(),
        ds.splits.test.len(),
        ds.corpus.len(),
        dim,
        ds.qrels.len()
    );
    let _ = writeln!(
        s,
        "tokens: {} queries ({} train / {} test), {} candidates, vocabulary {}",
        tokens.queries.len(),
        tokens.train_queries.len(),
        tokens.test_queries.len(),
        tokens.candidates.len(),
        tokens.vocab_size
    );
    let _ = writeln!(s, "wrote {}", cfg.out.display());
    Ok(s)
}

struct TokenInputs {
    queries: FeatureTable,
    candidates: FeatureTable,
    qrels: Vec<JudgedPair>,
    train: Vec<String>,
    test: Vec<String>,
}

fn vocab_of(tables: &[&FeatureTable]) -> usize {
    tables
        .iter()
        .flat_map(|t| t.values())
        .flat_map(|f| f.indices().iter().copied())
        .max()
        .map_or(0, |m| m as usize + 1)
}

fn encode_table(enc: &LinearEncoder, t: &FeatureTable) -> Result<Vec<EmbeddingRecord>> {
    t.iter()
        .map(|(id, f)| Ok(EmbeddingRecord::new(id.clone(), enc.encode(f)?.into_inner())))
        .collect()
}

/// Mean recall@10 of the test queries against every candidate.
fn token_recall(q: &LinearEncoder, c: &LinearEncoder, inputs: &TokenInputs, qrels: &Qrels) -> Result<f64> {
    let index = VectorIndex::build(encode_table(c, &inputs.candidates)?.into_iter().map(|r| (r.id, r.values)))?;
    let mut runs = Vec::with_capacity(inputs.test.len());
    for id in &inputs.test {
        let f = inputs
            .queries
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
        runs.push(index.search(id, &q.encode(f)?, 10)?);
    }
    Ok(recall_at_k(&runs, qrels, 10))
}

fn train_encoder(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let files = ["queries.feat", "candidates.feat", "qrels.txt", "train.ids", "test.ids"].map(|n| a.tokens(n));
    require_inputs(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let inputs = TokenInputs {
        queries: load_features(&files[0])?,
        candidates: load_features(&files[1])?,
        qrels: load_qrels(&files[2])?,
        train: read_ids(&files[3])?,
        test: read_ids(&files[4])?,
    };
    let vocab = vocab_of(&[&inputs.queries, &inputs.candidates]);
    let train: std::collections::HashSet<&str> = inputs.train.iter().map(String::as_str).collect();
    let pairs: Vec<JudgedPair> = inputs
        .qrels
        .iter()
        .filter(|p| train.contains(p.query_id.as_str()))
        .cloned()
        .collect();
    let ecfg = cfg.encoder_config();
    let trained = train_encoders(
        &ecfg,
        &EncoderData {
            vocab_size: vocab,
            queries: &inputs.queries,
            candidates: &inputs.candidates,
            pairs: &pairs,
        },
    )?;
    trained.query.save(a.tokens("query.cren"))?;
    trained.candidate.save(a.tokens("candidate.cren"))?;

    let qrels = Qrels::from_pairs(&inputs.qrels)?;
    let (uq, uc) = DualParams::init(vocab, ecfg.dim, &mut ChaCha8Rng::seed_from_u64(ecfg.seed)).to_encoders()?;
    let before = token_recall(&uq, &uc, &inputs, &qrels)?;
    let after = token_recall(&trained.query, &trained.candidate, &inputs, &qrels)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} objective, {} epochs, vocabulary {}, d = {}",
        ecfg.objective, ecfg.epochs, vocab, ecfg.dim
    );
    if let (Some(first), Some(last)) = (trained.epoch_losses.first(), trained.epoch_losses.last()) {
        let _ = writeln!(s, "loss: {first:.4} -> {last:.4}");
    }
    let _ = writeln!(s, "test recall@10: untrained {before:.4}, trained {after:.4}");
    Ok(s)
}

fn embed(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = match (&cfg.paths.features, &cfg.paths.encoder) {
        (Some(f), Some(e)) => vec![(f.clone(), e.clone(), a.out("embeddings.crem"))],
        (None, None) => vec![
            (a.tokens("queries.feat"), a.tokens("query.cren"), a.tokens("queries.crem")),
            (a.tokens("candidates.feat"), a.tokens("candidate.cren"), a.tokens("candidates.crem")),
        ],
        _ => return Err(Error::Config("paths.features and paths.encoder must be set together".into())),
    };
    for (f, e, _) in &jobs {
        require_inputs(&[f, e])?;
    }
    let mut s = String::new();
    for (f, e, dst) in jobs {
        let enc = LinearEncoder::load(&e)?;
        let records = encode_table(&enc, &load_features(&f)?)?;
        write_embeddings(&dst, enc.dim(), &records)?;
        let _ = writeln!(s, "{} items, d = {} -> {}", records.len(), enc.dim(), dst.display());
    }
    Ok(s)
}

fn build_index(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let src = a.corpus();
    require_inputs(&[&src])?;
    let (dim, records) = read_embeddings(&src)?;
    let index = VectorIndex::build(records.into_iter().map(|r| (r.id, r.values)))?;
    let dst = a.out("index.crix");
    fs::create_dir_all(&cfg.out)?;
    index.save(&dst)?;
    Ok(format!("{} candidates, d = {} -> {}\n", index.len(), dim, dst.display()))
}

fn train_adapter_cmd(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let (qpath, cpath, rpath) = (a.queries("train"), a.corpus(), a.qrels());
    require_inputs(&[&qpath, &cpath, &rpath])?;
    let (qids, queries) = load_table(&qpath)?;
    let (_, corpus) = load_table(&cpath)?;
    check_dim(table_dim(&queries, &qpath)?, table_dim(&corpus, &cpath)?)?;
    let qrels = load_qrels(&rpath)?;
    let keep: std::collections::HashSet<&str> = qids.iter().map(String::as_str).collect();
    let pairs: Vec<JudgedPair> = qrels
        .into_iter()
        .filter(|p| keep.contains(p.query_id.as_str()))
        .collect();
    let kind = cfg.adapter.kind;
    let acfg = cfg.adapter_config(kind);
    let trained = train_adapter(&acfg, &pairs, &queries, &corpus)?;
    let dst = a.trained_adapter(kind);
    trained.network.save(&dst)?;
    let mut s = format!(
        "{kind} adapter: {} queries, {} judgments, {} epochs, {} weights\n",
        qids.len(),
        pairs.len(),
        acfg.epochs,
        trained.network.params().len()
    );
    if let (Some(first), Some(last)) = (trained.epoch_losses.first(), trained.epoch_losses.last()) {
        let _ = writeln!(s, "loss: {first:.4} -> {last:.4}");
    }
    let _ = writeln!(s, "wrote {}", dst.display());
    Ok(s)
}

/// Index, adapter and query embeddings, checked for matching dimensions.
struct Loaded {
    index: VectorIndex,
    adapter: AdapterNetwork,
    qids: Vec<String>,
    queries: EmbeddingTable,
}

fn load_stage(a: &Artifacts<'_>, kind: TransformKind, split: &str, extra: &[&Path]) -> Result<Loaded> {
    let (ipath, apath, qpath) = (a.index(), a.adapter(kind), a.queries(split));
    let mut inputs = vec![ipath.as_path(), apath.as_path(), qpath.as_path()];
    inputs.extend_from_slice(extra);
    require_inputs(&inputs)?;
    let index = VectorIndex::load(&ipath)?;
    let adapter = AdapterNetwork::load(&apath)?;
    let (qids, queries) = load_table(&qpath)?;
    check_dim(index.dim(), adapter.dim()).stage("adapter")?;
    check_dim(index.dim(), table_dim(&queries, &qpath)?).stage("queries")?;
    Ok(Loaded {
        index,
        adapter,
        qids,
        queries,
    })
}

fn calibrate(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let rpath = a.qrels();
    let kind = cfg.adapter.kind;
    let l = load_stage(&a, kind, "calib", &[&rpath])?;
    let qrels = Qrels::from_pairs(&load_qrels(&rpath)?)?;
    let mut scored = Vec::new();
    for id in &l.qids {
        let q = l.queries.require(id)?;
        let hits = l.index.search(id, q, cfg.retrieval.k)?;
        for h in calibrate_candidates(&l.adapter, q, &hits)?.hits {
            let z = h.logit.expect("calibrated hits carry logits");
            scored.push(ScoredPair::new(id.clone(), z, qrels.grade(id, &h.candidate_id)));
        }
    }
    let cal = calibrate_threshold_with(&scored, cfg.retrieval.target_recall, cfg.retrieval.recall_mode)?;
    let dst = a.calibration(kind);
    cal.save(&dst)?;
    Ok(format!(
        "{kind}: threshold {} reaches {} recall {:.4} (target {}) over {} retrieved pairs from {} queries\nwrote {}\n",
        cal.threshold,
        cal.recall_mode,
        cal.achieved_recall,
        cal.target_recall,
        cal.calibration_set_size,
        l.qids.len(),
        dst.display()
    ))
}

fn search(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let kind = cfg.adapter.kind;
    let cpath = a.calibration(kind);
    let l = load_stage(&a, kind, "test", &[&cpath])?;
    let cal = ThresholdCalibration::load(&cpath)?;
    let pipeline = Pipeline {
        query_encoder: None,
        index: &l.index,
        adapter: &l.adapter,
        threshold: cal.threshold,
        k: cfg.retrieval.k,
    };
    pipeline.check()?;
    l.adapter.reset_forward_count();
    let mut kept: Vec<SearchResult> = Vec::with_capacity(l.qids.len());
    let mut total = StageTimings::default();
    let (mut retained, mut input, mut null) = (0usize, 0usize, 0usize);
    for id in &l.qids {
        let o = pipeline.run_embedded(id, l.queries.require(id)?)?;
        total.search += o.timings.search;
        total.calibrate += o.timings.calibrate;
        total.filter += o.timings.filter;
        retained += o.entry.retained;
        input += o.entry.input;
        null += usize::from(o.entry.retained == 0);
        kept.push(o.filtered);
    }
    let dst = a.run_file(kind);
    write_run(create(&dst)?, &kept, &format!("adapter-{kind}"))?;
    let n = l.qids.len().max(1) as f64;
    let us = |d: Duration| d.as_secs_f64() * 1e6 / n;
    Ok(format!(
        "{kind}: {} queries, top-{}, threshold {}\nretained {retained} of {input} hits, {null} queries empty\n\
         adapter forward calls: {}\nmean per query: search {:.1} us, calibrate {:.1} us, filter {:.1} us\nwrote {}\n",
        l.qids.len(),
        cfg.retrieval.k,
        cal.threshold,
        l.adapter.forward_count(),
        us(total.search),
        us(total.calibrate),
        us(total.filter),
        dst.display()
    ))
}

fn evaluate(cfg: &RunConfig) -> Result<String> {
    let a = Artifacts::new(cfg);
    let (ipath, qpath, rpath) = (a.index(), a.queries("test"), a.qrels());
    let adapter_paths: Vec<(TransformKind, PathBuf)> = TransformKind::ALL
        .into_iter()
        .filter(|k| *k != TransformKind::Raw)
        .map(|k| (k, a.trained_adapter(k)))
        .collect();
    let mut inputs = vec![ipath.as_path(), qpath.as_path(), rpath.as_path()];
    inputs.extend(adapter_paths.iter().map(|(_, p)| p.as_path()));
    require_inputs(&inputs)?;

    let index = VectorIndex::load(&ipath)?;
    let (qids, queries) = load_table(&qpath)?;
    check_dim(index.dim(), table_dim(&queries, &qpath)?)?;
    let mut adapters = Vec::new();
    for (kind, p) in &adapter_paths {
        let net = AdapterNetwork::load(p)?;
        if net.kind() != *kind {
            return Err(Error::invalid(format!("{} holds a {} adapter", p.display(), net.kind())));
        }
        check_dim(index.dim(), net.dim())?;
        adapters.push(net);
    }
    let qrels = Qrels::from_pairs(&load_qrels(&rpath)?)?;

    let r = &cfg.retrieval;
    let lists = qids
        .iter()
        .map(|id| index.search(id, queries.require(id)?, r.k))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for m in Method::ALL {
        let net = match m {
            Method::Adapter(kind) => adapters.iter().find(|n| n.kind() == kind),
            _ => None,
        };
        let calibrated = calibrate_lists(m, &lists, &queries, net)?;
        reports.push(evaluate_lists(
            &m.to_string(),
            &calibrated,
            &qrels,
            ThresholdChoice::SelfCalibrated(r.target_recall),
            r.target_recall,
            r.mrr_k,
            &unit_edges(r.k),
        )?);
    }
    let table = render_table(&reports);
    fs::write(a.out("report.txt"), &table)?;
    fs::write(a.out("report.kv"), render_kv(&reports))?;
    for rep in &reports {
        fs::write(a.out(&format!("histogram_{}.tsv", rep.method)), rep.histogram.to_tsv())?;
    }
    Ok(format!("{} test queries, top-{}\n{table}", qids.len(), r.k))
}
