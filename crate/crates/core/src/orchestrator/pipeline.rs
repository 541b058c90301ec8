use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::cache::UpliftCache;
use super::config::{EstimatorKind, ExperimentConfig};
use super::manifest::{ArtifactRecord, RunManifest, StageRecord, MANIFEST_FILE};
use crate::allocator::{allocate, Allocation, AllocatorKind};
use crate::attackers::{generate, FakeUserBlock};
use crate::cf::train;
use crate::dataset::{
    generate_synthetic, kcore_filter, load_categories, load_ratings, read_matrix, select_target_items,
    select_target_users, split_accessible, to_implicit, write_matrix, InteractionMatrix, TargetSpec,
};
use crate::defense::{fap_detect, filter_and_evaluate, pca_detect, DetectionResult, DetectorKind};
use crate::error::{Error, Result};
use crate::evaluator::{compare, evaluate, Comparison, MetricsReport};
use crate::pathcount::correlation_report;
use crate::seed::{derive_seed, sha256_hex};
use crate::uplift::{estimate_proxy, estimate_simulated, SimulationConfig, UpliftTable};

use super::config::DatasetSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Estimate,
    Allocate,
    Attack,
    Defend,
    Correlate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Prepare,
        Stage::Estimate,
        Stage::Allocate,
        Stage::Attack,
        Stage::Defend,
        Stage::Correlate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Estimate => "estimate",
            Stage::Allocate => "allocate",
            Stage::Attack => "attack",
            Stage::Defend => "defend",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Seed-averaged reports, one per (item, allocator, victim[, detector]).
    pub reports: Vec<MetricsReport>,
    pub comparison: Comparison,
}

/// Lower-case serde name of a unit enum value.
fn tag<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => "?".into(),
    }
}

struct Recorder<'a> {
    out: &'a Path,
    artifacts: Vec<ArtifactRecord>,
}

impl Recorder<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8], cache_hit: bool) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            cache_hit,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.put(rel, serde_json::to_string_pretty(value)?.as_bytes(), false)
    }
}

/// The attacked item's artifacts from `prepare`.
struct ItemData {
    spec: TargetSpec,
    accessible: InteractionMatrix,
    acc_spec: TargetSpec,
}

/// Stage runner over one output directory. Every stage reads the serialized
/// artifacts of earlier stages, so stages can run in separate processes.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    cache: UpliftCache,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir.clone();
        let cache = cfg.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
        Ok(Pipeline {
            cfg,
            out,
            cache: UpliftCache::new(cache),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn cache(&self) -> &UpliftCache {
        &self.cache
    }

    /// Runs every configured stage in order from a fresh manifest.
    pub fn run(&self) -> Result<RunOutcome> {
        let manifest_path = self.out.join(MANIFEST_FILE);
        if manifest_path.exists() {
            std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        }
        for stage in Stage::ALL {
            let skip = match stage {
                Stage::Defend => self.cfg.defense.is_none(),
                Stage::Correlate => self.cfg.correlation.is_none(),
                _ => false,
            };
            if !skip {
                self.run_stage(stage)?;
            }
        }
        let reports = self.mean_reports()?;
        Ok(RunOutcome {
            manifest: RunManifest::load(&self.out)?
                .ok_or(Error::MissingArtifact(manifest_path))?,
            comparison: compare(&reports)?,
            reports,
        })
    }

    /// Runs one stage and records it in the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord> {
        let started = Instant::now();
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let mut rec = Recorder {
            out: &self.out,
            artifacts: Vec::new(),
        };
        let res = match stage {
            Stage::Prepare => self.prepare(&mut rec),
            Stage::Estimate => self.estimate(&mut rec),
            Stage::Allocate => self.allocate(&mut rec),
            Stage::Attack => self.attack(&mut rec),
            Stage::Defend => self.defend(&mut rec),
            Stage::Correlate => self.correlate(&mut rec),
            Stage::Report => self.report(&mut rec),
        };
        res.map_err(|e| e.in_stage(stage.name()))?;
        let record = StageRecord {
            name: stage.name().to_string(),
            seconds: started.elapsed().as_secs_f64(),
            artifacts: rec.artifacts,
        };
        let mut manifest = RunManifest::load(&self.out)?.unwrap_or_else(|| RunManifest::new(self.cfg.hash()));
        manifest.config_hash = self.cfg.hash();
        manifest.record(record.clone());
        manifest.save(&self.out)?;
        log::info!("{} finished in {:.1}s", stage.name(), record.seconds);
        Ok(record)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.out.join(rel);
        std::fs::read(&path).map_err(|_| Error::MissingArtifact(path))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_slice(&self.read(rel)?)?)
    }

    fn load_real(&self) -> Result<InteractionMatrix> {
        read_matrix(self.read("prepare/matrix.im")?.as_slice())
    }

    fn load_item(&self, k: usize, real: &InteractionMatrix) -> Result<ItemData> {
        let spec: TargetSpec = self.read_json(&format!("prepare/item-{k}/target.json"))?;
        spec.validate(real)?;
        let accessible = read_matrix(self.read(&format!("prepare/item-{k}/accessible.im"))?.as_slice())?;
        let acc_spec = spec.remap(real, &accessible)?;
        Ok(ItemData {
            spec,
            accessible,
            acc_spec,
        })
    }

    fn n_items(&self) -> usize {
        self.cfg.targets.n_items
    }

    fn seed(s: u64, label: &str, k: usize) -> u64 {
        derive_seed(s, label, &[k as u64])
    }

    fn prepare(&self, rec: &mut Recorder) -> Result<()> {
        let cfg = &self.cfg;
        let (real, cats) = match &cfg.dataset {
            DatasetSource::Synthetic(sc) => {
                let d = generate_synthetic(sc)?;
                (d.matrix, d.categories)
            }
            DatasetSource::Files {
                ratings,
                categories,
                format,
            } => {
                let log = load_ratings(ratings, format)?;
                let m = to_implicit(&log, cfg.preprocess.like_threshold)?;
                let m = kcore_filter(&m, cfg.preprocess.k_core)?;
                let cats = load_categories(categories, format, &m)?;
                (m, cats)
            }
        };
        rec.json("config.json", &cfg.normalized())?;
        let mut bytes = Vec::new();
        write_matrix(&real, &mut bytes)?;
        rec.put("prepare/matrix.im", &bytes, false)?;
        let t = &cfg.targets;
        let items = select_target_items(&real, t.mode, t.n_items, t.seed)?;
        for (k, &item) in items.iter().enumerate() {
            let mut spec = select_target_users(
                &real,
                &cats,
                item,
                t.n_users,
                t.cat_threshold,
                Self::seed(t.seed, "target-users", k),
            )?;
            spec.popularity_mode = Some(t.mode);
            let acc = split_accessible(
                &real,
                cfg.accessible_ratio,
                &spec.target_users,
                Self::seed(t.seed, "accessible", k),
            )?;
            rec.json(&format!("prepare/item-{k}/target.json"), &spec)?;
            let mut bytes = Vec::new();
            write_matrix(&acc, &mut bytes)?;
            rec.put(&format!("prepare/item-{k}/accessible.im"), &bytes, false)?;
        }
        Ok(())
    }

    /// Hash of everything the table for (`item`, repeat seed `s`) depends on.
    fn table_key(&self, item: &ItemData, s: u64, k: usize) -> Result<String> {
        let est = &self.cfg.estimator;
        let params = match est.kind {
            EstimatorKind::Simulated => serde_json::json!({
                "kind": "simulated",
                "max_budget": est.max_budget,
                "runs": est.runs,
                "top_k": est.top_k,
                "surrogate": est.surrogate,
                "attacker": self.cfg.attacker,
                "base_seed": Self::seed(s, "estimate", k),
            }),
            EstimatorKind::Proxy => serde_json::json!({
                "kind": "proxy",
                "max_budget": est.max_budget,
                "alpha": est.alpha,
                "beta": est.beta,
                "profile_size": self.cfg.attacker.resolved_profile_size(&item.accessible)?,
            }),
        };
        let key = serde_json::json!({
            "accessible": item.accessible.fingerprint(),
            "spec": item.acc_spec,
            "estimator": params,
        });
        Ok(sha256_hex(key.to_string().as_bytes()))
    }

    fn compute_table(&self, item: &ItemData, s: u64, k: usize) -> Result<UpliftTable> {
        let est = &self.cfg.estimator;
        match est.kind {
            EstimatorKind::Simulated => estimate_simulated(
                &item.accessible,
                &item.acc_spec,
                &self.cfg.attacker,
                &est.surrogate,
                &SimulationConfig {
                    max_budget: est.max_budget,
                    runs: est.runs,
                    top_k: est.top_k,
                    base_seed: Self::seed(s, "estimate", k),
                },
            ),
            EstimatorKind::Proxy => estimate_proxy(
                &item.accessible,
                &item.acc_spec,
                est.max_budget,
                &est.proxy_params(),
                self.cfg.attacker.resolved_profile_size(&item.accessible)?,
            ),
        }
    }

    fn table_path(k: usize, s: u64) -> String {
        format!("estimate/item-{k}/seed-{s}.ut")
    }

    /// The estimate artifact, or the cached table when the artifact is absent.
    fn load_table(&self, item: &ItemData, s: u64, k: usize) -> Result<UpliftTable> {
        let rel = Self::table_path(k, s);
        let path = self.out.join(&rel);
        if path.exists() {
            return UpliftTable::read(self.read(&rel)?.as_slice());
        }
        self.cache
            .get(&self.table_key(item, s, k)?)?
            .ok_or(Error::MissingArtifact(path))
    }

    fn estimate(&self, rec: &mut Recorder) -> Result<()> {
        let real = self.load_real()?;
        for k in 0..self.n_items() {
            let item = self.load_item(k, &real)?;
            for &s in &self.cfg.seeds {
                let key = self.table_key(&item, s, k)?;
                let (table, hit) = match self.cache.get(&key)? {
                    Some(t) => (t, true),
                    None => {
                        let t = self.compute_table(&item, s, k)?;
                        self.cache.put(&key, &t)?;
                        (t, false)
                    }
                };
                let mut bytes = Vec::new();
                table.write(&mut bytes)?;
                rec.put(&Self::table_path(k, s), &bytes, hit)?;
                let mut plot = Vec::new();
                table.write_plot_data(&item.accessible, '\t', &mut plot)?;
                rec.put(&format!("plots/item-{k}/uplift-seed-{s}.tsv"), &plot, false)?;
            }
        }
        Ok(())
    }

    fn alloc_path(k: usize, s: u64, kind: AllocatorKind) -> String {
        format!("allocate/item-{k}/seed-{s}/{}.tsv", tag(&kind))
    }

    fn allocate(&self, rec: &mut Recorder) -> Result<()> {
        let real = self.load_real()?;
        for k in 0..self.n_items() {
            let item = self.load_item(k, &real)?;
            for &s in &self.cfg.seeds {
                let table = self.load_table(&item, s, k)?;
                for &kind in &self.cfg.allocators {
                    let alloc = allocate(
                        kind,
                        &table,
                        &item.acc_spec,
                        self.cfg.total_budget,
                        Self::seed(s, "allocate", k),
                    )?;
                    let mut bytes = Vec::new();
                    alloc.write(&item.accessible, '\t', &mut bytes)?;
                    rec.put(&Self::alloc_path(k, s, kind), &bytes, false)?;
                }
            }
        }
        Ok(())
    }

    fn run_dir(k: usize, s: u64, kind: AllocatorKind) -> String {
        format!("attack/item-{k}/seed-{s}/{}", tag(&kind))
    }

    fn label(&self, k: usize, kind: AllocatorKind, v: usize, detector: Option<DetectorKind>) -> String {
        let victim = &self.cfg.victims[v];
        let mut label = format!(
            "item{k}.{}.v{v}-{}-{}",
            tag(&kind),
            tag(&victim.model_kind),
            tag(&victim.loss)
        );
        if let Some(d) = detector {
            label.push('.');
            label.push_str(&tag(&d));
        }
        label
    }

    fn attack(&self, rec: &mut Recorder) -> Result<()> {
        let real = self.load_real()?;
        for k in 0..self.n_items() {
            let item = self.load_item(k, &real)?;
            for &s in &self.cfg.seeds {
                for &kind in &self.cfg.allocators {
                    let alloc = Allocation::read(
                        self.read(&Self::alloc_path(k, s, kind))?.as_slice(),
                        &item.accessible,
                        '\t',
                    )?;
                    alloc.validate(self.cfg.estimator.max_budget)?;
                    let attacker = self.cfg.attacker.with_seed(Self::seed(s, "attack", k));
                    let fakes = generate(&attacker, &alloc, &item.acc_spec, &item.accessible)?;
                    let dir = Self::run_dir(k, s, kind);
                    rec.put(&format!("{dir}/fakes.json"), serde_json::to_string(&fakes)?.as_bytes(), false)?;
                    let mut text = Vec::new();
                    fakes.write_interactions(&real, '\t', &mut text)?;
                    rec.put(&format!("{dir}/fakes.tsv"), &text, false)?;
                    for (v, victim) in self.cfg.victims.iter().enumerate() {
                        let mut report =
                            evaluate(&real, &fakes, &item.spec, victim, &self.cfg.ks, Self::seed(s, "victim", k))?;
                        report.meta.label = self.label(k, kind, v, None);
                        report.meta.allocator = Some(kind);
                        report.meta.total_budget = self.cfg.total_budget;
                        report.meta.seeds = vec![s];
                        rec.json(&format!("{dir}/victim-{v}.json"), &report)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn defend(&self, rec: &mut Recorder) -> Result<()> {
        let defense = self
            .cfg
            .defense
            .as_ref()
            .ok_or_else(|| Error::Config("no defense configured".into()))?;
        let real = self.load_real()?;
        for k in 0..self.n_items() {
            let item = self.load_item(k, &real)?;
            for &s in &self.cfg.seeds {
                for &kind in &self.cfg.allocators {
                    let dir = Self::run_dir(k, s, kind);
                    let fakes: FakeUserBlock = self.read_json(&format!("{dir}/fakes.json"))?;
                    let stacked = fakes.stack_onto(&real)?;
                    let n_flag = defense.n_flag.unwrap_or(fakes.len());
                    let out_dir = format!("defend/item-{k}/seed-{s}/{}", tag(&kind));
                    for &det in &defense.detectors {
                        let mut detection: DetectionResult = match det {
                            DetectorKind::Pca => pca_detect(&stacked, n_flag, defense.n_components)?,
                            DetectorKind::Fap => {
                                fap_detect(&stacked, item.spec.target_item, n_flag, &defense.fap)?
                            }
                        };
                        detection.label_with(&stacked)?;
                        let mut text = Vec::new();
                        detection.write_delimited(&stacked, '\t', &mut text)?;
                        rec.put(&format!("{out_dir}/{}.tsv", tag(&det)), &text, false)?;
                        let c = detection.confusion.unwrap_or_default();
                        rec.json(
                            &format!("{out_dir}/{}.json", tag(&det)),
                            &serde_json::json!({
                                "detector": det,
                                "params": detection.params,
                                "flagged": detection.flagged.len(),
                                "confusion": c,
                                "recall": c.recall(),
                                "notes": detection.notes,
                            }),
                        )?;
                        for (v, victim) in self.cfg.victims.iter().enumerate() {
                            let mut report = filter_and_evaluate(
                                &real,
                                &fakes,
                                &detection,
                                &item.spec,
                                victim,
                                &self.cfg.ks,
                                Self::seed(s, "victim", k),
                            )?;
                            report.meta.label = self.label(k, kind, v, Some(det));
                            report.meta.allocator = Some(kind);
                            report.meta.total_budget = self.cfg.total_budget;
                            report.meta.seeds = vec![s];
                            rec.json(&format!("{out_dir}/{}-victim-{v}.json", tag(&det)), &report)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn correlate(&self, rec: &mut Recorder) -> Result<()> {
        let corr = self.cfg.correlation.clone().unwrap_or_default();
        let real = self.load_real()?;
        let model = train(&real, &corr.model)?;
        for &order in &corr.orders {
            let seed = derive_seed(self.cfg.seeds[0], "correlate", &[order as u64]);
            let report = correlation_report(&model, &real, order, corr.n_groups, corr.sample_cap, seed)?;
            log::info!(
                "order {order}: spearman r={:.4} p={:.3e} over {} groups",
                report.spearman_r,
                report.p_value,
                report.groups.len()
            );
            rec.json(&format!("correlate/order-{order}.json"), &report)?;
            let mut plot = Vec::new();
            report.write_plot_data(&mut plot, '\t')?;
            rec.put(&format!("plots/correlation-order-{order}.tsv"), &plot, false)?;
        }
        Ok(())
    }

    /// (label, per-seed report paths) for every reported configuration.
    fn report_sources(&self) -> Vec<(String, Vec<String>)> {
        let mut out = Vec::new();
        for k in 0..self.n_items() {
            for &kind in &self.cfg.allocators {
                for v in 0..self.cfg.victims.len() {
                    let seeds = &self.cfg.seeds;
                    out.push((
                        self.label(k, kind, v, None),
                        seeds
                            .iter()
                            .map(|&s| format!("{}/victim-{v}.json", Self::run_dir(k, s, kind)))
                            .collect(),
                    ));
                    for &det in self.cfg.defense.iter().flat_map(|d| &d.detectors) {
                        out.push((
                            self.label(k, kind, v, Some(det)),
                            seeds
                                .iter()
                                .map(|&s| {
                                    format!("defend/item-{k}/seed-{s}/{}/{}-victim-{v}.json", tag(&kind), tag(&det))
                                })
                                .collect(),
                        ));
                    }
                }
            }
        }
        out
    }

    fn report(&self, rec: &mut Recorder) -> Result<()> {
        let mut means = Vec::new();
        for (label, paths) in self.report_sources() {
            let runs = paths
                .iter()
                .map(|p| self.read_json::<MetricsReport>(p))
                .collect::<Result<Vec<_>>>()?;
            let mut mean = MetricsReport::mean(&runs)?;
            mean.meta.label = label.clone();
            rec.json(&format!("reports/{label}.json"), &mean)?;
            let mut kv = Vec::new();
            mean.write_kv(&mut kv)?;
            rec.put(&format!("reports/{label}.txt"), &kv, false)?;
            means.push(mean);
        }
        let comparison = compare(&means)?;
        let mut table = Vec::new();
        comparison.write_delimited(',', &mut table)?;
        rec.put("reports/comparison.csv", &table, false)?;
        let k0 = self.cfg.ks.iter().copied().min().unwrap_or(10);
        rec.put("reports/summary.txt", comparison.summary(k0).as_bytes(), false)?;
        Ok(())
    }

    /// Seed-averaged reports written by the report stage.
    pub fn mean_reports(&self) -> Result<Vec<MetricsReport>> {
        self.report_sources()
            .into_iter()
            .map(|(label, _)| self.read_json(&format!("reports/{label}.json")))
            .collect()
    }
}

/// Comparison over the seed-averaged reports of several finished runs.
/// Labels are prefixed with the run directory name when more than one run
/// is given.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    let mut reports = Vec::new();
    for dir in dirs {
        let manifest = RunManifest::load(dir)?.ok_or_else(|| Error::MissingArtifact(dir.join(MANIFEST_FILE)))?;
        let stage = manifest
            .stage("report")
            .ok_or_else(|| Error::MissingArtifact(dir.join("reports")))?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for a in stage.artifacts.iter().filter(|a| a.path.ends_with(".json")) {
            let path = dir.join(&a.path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut r = MetricsReport::from_json(&text)?;
            if dirs.len() > 1 {
                r.meta.label = format!("{name}/{}", r.meta.label);
            }
            reports.push(r);
        }
    }
    compare(&reports)
}
