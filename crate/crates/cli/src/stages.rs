//! One function per pipeline stage. Each validates, runs, writes its outputs
//! under `<out>/<stage>/` and finishes with the stage manifest.

use std::fs;
use std::path::{Path, PathBuf};

use mixroute::env::{write_trajectories, Simulator};
use mixroute::eval::{self, calibrate, divergence_histogram, BaselineSpec, EvalReport};
use mixroute::grpo::{train_grpo, train_grpo_with_fallback, write_curve_csv};
use mixroute::klst::{self, records_from_trajectories, train_klst, write_records, EmpiricalCdf, SupervisionDataset};
use mixroute::router::{params_from_bytes, save_params, RouterError, RouterParams};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{entry, relative, EpisodeRange, FileEntry, Manifest, Stage, MANIFEST_FILE};

/// Where train-grpo starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum GrpoInit {
    /// `<out>/klst/router.ckpt`.
    Klst,
    Checkpoint(PathBuf),
    Fresh,
}

pub struct Run {
    pub config: RunConfig,
}

fn stage_dir(root: &Path, stage: Stage) -> Result<PathBuf, CliError> {
    let dir = root.join(stage.dir());
    fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn outputs(root: &Path, paths: &[&Path]) -> Result<Vec<FileEntry>, CliError> {
    paths.iter().map(|p| entry(root, p)).collect()
}

/// Loads a checkpoint and checks it against the manifest in its directory.
fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<(RouterParams, FileEntry), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::MissingArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let params = params_from_bytes(&bytes, &cfg.router).map_err(|e| match e {
        RouterError::CorruptCheckpoint(_) | RouterError::VersionMismatch { .. } => CliError::MissingArtifact {
            path: path.to_path_buf(),
            reason: format!("not a router checkpoint ({e})"),
        },
        RouterError::ConfigMismatch { .. } => CliError::Provenance {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        other => other.into(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let manifest_path = dir.join(MANIFEST_FILE);
    let upstream = Manifest::read(&manifest_path)?;
    upstream.check_sections(&manifest_path, cfg)?;
    let root = dir.parent().unwrap_or(Path::new("."));
    let found = upstream.verified_output(root, &relative(root, path))?;
    Ok((params, found))
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        Ok(Self { config })
    }

    fn root(&self) -> &Path {
        &self.config.out
    }

    fn simulator(&self) -> Result<Simulator, CliError> {
        Ok(Simulator::synthetic(&self.config.env)?)
    }

    fn collect_range(&self) -> (u64, Vec<u64>, EpisodeRange) {
        let k = &self.config.klst;
        let first = k.first_episode;
        let ids = (first..first + k.episodes as u64).collect();
        (first, ids, EpisodeRange { first, count: k.episodes as u64 })
    }

    pub fn calibrate(&self) -> Result<(), CliError> {
        let root = self.root();
        let dir = stage_dir(root, Stage::Calibrate)?;
        let sim = self.simulator()?;
        let (_, ids, range) = self.collect_range();
        let (cal, divergences) = calibrate(&sim, &ids)?;
        let hist = dir.join("histogram.csv");
        eval::write_histogram_csv(&hist, &divergence_histogram(&divergences))?;
        let violations = cal.violations();
        let report = dir.join("calibration.json");
        write_json(&report, &json!({ "calibration": cal, "violations": violations }))?;

        let mut m = Manifest::new(Stage::Calibrate, &self.config);
        m.episodes = Some(range);
        m.outputs = outputs(root, &[&hist, &report])?;
        m.details = json!({ "passed": violations.is_empty() });
        m.write(root)?;
        log::info!(
            "calibration: low mass {:.3}, high mass {:.3}, success {:.3} vs {:.3}",
            cal.low_mass,
            cal.high_mass,
            cal.high_success,
            cal.low_success
        );
        if violations.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invariant(violations))
        }
    }

    pub fn collect(&self) -> Result<(), CliError> {
        let root = self.root();
        let dir = stage_dir(root, Stage::Collect)?;
        let sim = self.simulator()?;
        let (first, _, range) = self.collect_range();
        let collection = klst::collect(&sim, self.config.klst.episodes, first)?;
        let trajectories = dir.join("trajectories.jsonl");
        write_trajectories(&trajectories, &collection.trajectories)?;
        let records = records_from_trajectories(&collection.trajectories, self.config.router.max_len)?;
        let records_path = dir.join("records.jsonl");
        write_records(&records_path, &records)?;
        let values: Vec<f64> = records.iter().map(|r| r.divergence).collect();
        let cdf = EmpiricalCdf::new(&values)?;
        let cdf_path = dir.join("cdf.json");
        fs::write(
            &cdf_path,
            serde_json::to_string(cdf.sorted_values()).expect("floats serialize") + "\n",
        )
        .map_err(CliError::io(format!("writing {}", cdf_path.display())))?;

        let mut m = Manifest::new(Stage::Collect, &self.config);
        m.episodes = Some(range);
        m.outputs = outputs(root, &[&trajectories, &records_path, &cdf_path])?;
        m.details = json!({
            "attempted": collection.attempted,
            "discarded": collection.discarded,
            "records": records.len(),
        });
        m.write(root)?;
        log::info!(
            "kept {} of {} episodes, {} records",
            collection.trajectories.len(),
            collection.attempted,
            records.len()
        );
        Ok(())
    }

    pub fn train_klst(&self) -> Result<(), CliError> {
        let root = self.root();
        let cfg = &self.config;
        let upstream = Manifest::upstream(root, Stage::Collect, cfg)?;
        let records = upstream.verified_output(root, "collect/records.jsonl")?;
        let cdf = upstream.verified_output(root, "collect/cdf.json")?;
        let dataset = SupervisionDataset::read(root.join(&records.path), root.join(&cdf.path), &cfg.klst.labeling)?;

        let dir = stage_dir(root, Stage::TrainKlst)?;
        let init = RouterParams::new(cfg.router, cfg.seed)?;
        let outcome = train_klst(&dataset, &init, &cfg.klst.train)?;
        let dataset_path = dir.join("dataset.jsonl");
        dataset.write_jsonl(&dataset_path)?;
        let ckpt = dir.join("router.ckpt");
        save_params(&outcome.params, &ckpt)?;
        let metrics = dir.join("metrics.json");
        write_json(
            &metrics,
            &json!({
                "best_epoch": outcome.best_epoch,
                "epochs": outcome.epochs,
                "positive_fraction": dataset.positive_fraction(),
                "class_weights": dataset.class_weights,
                "train_episodes": outcome.train_episodes.len(),
                "validation_episodes": outcome.validation_episodes.len(),
            }),
        )?;

        let mut m = Manifest::new(Stage::TrainKlst, cfg);
        m.inputs = vec![records, cdf];
        m.outputs = outputs(root, &[&dataset_path, &ckpt, &metrics])?;
        m.details = json!({ "best_epoch": outcome.best_epoch });
        m.write(root)?;
        if let Some(best) = outcome.epochs.iter().find(|e| e.epoch == outcome.best_epoch) {
            log::info!(
                "selected epoch {} with balanced accuracy {:.3}",
                best.epoch,
                best.validation.balanced_accuracy
            );
        }
        Ok(())
    }

    pub fn train_grpo(&self, init: &GrpoInit) -> Result<(), CliError> {
        let root = self.root();
        let cfg = &self.config;
        let (start, input, init_label) = match init {
            GrpoInit::Fresh => (RouterParams::new(cfg.router, cfg.seed)?, None, "fresh".to_string()),
            GrpoInit::Klst => {
                let upstream = Manifest::upstream(root, Stage::TrainKlst, cfg)?;
                let found = upstream.verified_output(root, "klst/router.ckpt")?;
                let (params, _) = load_checkpoint(&root.join(&found.path), cfg)?;
                (params, Some(found), "klst".to_string())
            }
            GrpoInit::Checkpoint(path) => {
                let (params, found) = load_checkpoint(path, cfg)?;
                (params, Some(found), path.display().to_string())
            }
        };
        let dir = stage_dir(root, Stage::TrainGrpo)?;
        let sim = self.simulator()?;
        let g = &cfg.grpo;
        let outcome = if g.fallback {
            train_grpo_with_fallback(&sim, &start, &g.train, &g.reward)?
        } else {
            train_grpo(&sim, &start, &g.train, &g.reward)?
        };
        let ckpt = dir.join("router.ckpt");
        save_params(&outcome.params, &ckpt)?;
        let curve = dir.join("curve.csv");
        write_curve_csv(&curve, &outcome.curve)?;
        let summary = dir.join("outcome.json");
        let details = json!({
            "init": init_label,
            "lr_scale": outcome.lr_scale,
            "effective_learning_rate": g.train.learning_rate * outcome.lr_scale,
            "movement": outcome.movement,
            "groups": outcome.curve.len(),
        });
        write_json(&summary, &details)?;

        let mut m = Manifest::new(Stage::TrainGrpo, cfg);
        m.inputs = input.into_iter().collect();
        m.outputs = outputs(root, &[&ckpt, &curve, &summary])?;
        m.details = details;
        m.write(root)?;
        log::info!(
            "grpo: {} groups, lr scale {}, movement {:.3e}",
            outcome.curve.len(),
            outcome.lr_scale,
            outcome.movement
        );
        Ok(())
    }

    pub fn eval(&self) -> Result<(), CliError> {
        let root = self.root();
        let cfg = &self.config;
        let mut methods = Vec::with_capacity(cfg.eval.specs.len());
        let mut inputs = Vec::new();
        for m in &cfg.eval.specs {
            let driver = match &m.spec {
                BaselineSpec::Router { checkpoint, mode } => {
                    let path = root.join(checkpoint);
                    let (params, found) = load_checkpoint(&path, cfg)?;
                    inputs.push(found);
                    eval::router_driver(&params, *mode)
                }
                other => other.driver(&cfg.router)?,
            };
            methods.push((m.label(), driver));
        }
        let dir = stage_dir(root, Stage::Eval)?;
        let sim = self.simulator()?;
        let e = &cfg.eval;
        let ids: Vec<u64> = (e.first_episode..e.first_episode + e.episodes as u64).collect();
        let sweep = eval::sweep_drivers(&sim, &methods, &ids, e.averaging)?;
        let csv_path = dir.join("report.csv");
        eval::write_report_csv(&csv_path, &sweep.reports)?;
        let json_path = dir.join("report.json");
        eval::write_report_json(&json_path, &sweep.reports)?;
        let frontier = dir.join("frontier.csv");
        eval::write_frontier_csv(&frontier, &sweep.frontier)?;

        let mut m = Manifest::new(Stage::Eval, cfg);
        m.episodes = Some(EpisodeRange {
            first: e.first_episode,
            count: e.episodes as u64,
        });
        m.inputs = inputs;
        m.outputs = outputs(root, &[&csv_path, &json_path, &frontier])?;
        m.write(root)?;
        for r in &sweep.reports {
            let ghc = r.ghc.map_or("n/a".to_string(), |g| format!("{g:.1}"));
            log::info!("{:>16}: S {:.3}  c {:.3}  GHC {ghc}", r.method, r.success_rate, r.high_ratio);
        }
        Ok(())
    }

    pub fn export(&self) -> Result<(), CliError> {
        let root = self.root();
        let cfg = &self.config;
        let eval_path = Manifest::path(root, Stage::Eval);
        let upstream = Manifest::read(&eval_path)?;
        let mut shared = upstream.clone();
        shared.sections.remove("eval");
        shared.check_sections(&eval_path, cfg)?;
        let report = upstream.verified_output(root, "eval/report.json")?;
        let frontier_in = upstream.verified_output(root, "eval/frontier.csv")?;
        let text = fs::read_to_string(root.join(&report.path)).map_err(CliError::io("reading eval report"))?;
        let reports: Vec<EvalReport> = serde_json::from_str(&text).map_err(|e| CliError::Provenance {
            path: root.join(&report.path),
            reason: format!("unreadable report: {e}"),
        })?;

        let dir = stage_dir(root, Stage::Export)?;
        let best_random = upstream
            .config
            .eval
            .specs
            .iter()
            .filter(|m| matches!(m.spec, BaselineSpec::Random { .. }))
            .filter_map(|m| reports.iter().find(|r| r.method == m.label()))
            .filter_map(|r| r.ghc.map(|g| (r.method.clone(), g)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let methods: Vec<_> = reports
            .iter()
            .map(|r| {
                json!({
                    "method": r.method,
                    "n": r.n_episodes,
                    "S": r.success_rate,
                    "c": r.high_ratio,
                    "S_weak": r.weak_success_rate,
                    "GHC": r.ghc,
                    "beats_best_random": match (&best_random, r.ghc) {
                        (Some((_, b)), Some(g)) => Some(g > *b),
                        _ => None,
                    },
                })
            })
            .collect();
        let mut inputs = vec![report, frontier_in.clone()];
        let mut stages = serde_json::Map::new();
        for stage in [Stage::Calibrate, Stage::TrainKlst, Stage::TrainGrpo] {
            let path = Manifest::path(root, stage);
            if !path.is_file() {
                continue;
            }
            let m = Manifest::read(&path)?;
            if m.check_sections(&path, cfg).is_err() {
                log::warn!("{} was produced under a different config; left out of the summary", stage.dir());
                continue;
            }
            inputs.push(entry(root, &path)?);
            stages.insert(stage.dir().to_string(), m.details);
        }
        let summary = dir.join("summary.json");
        write_json(
            &summary,
            &json!({
                "seed": upstream.seed,
                "config_hash": upstream.config_hash,
                "eval_episodes": upstream.episodes,
                "methods": methods,
                "best_random": best_random.map(|(m, g)| json!({ "method": m, "GHC": g })),
                "stages": stages,
            }),
        )?;
        let frontier = dir.join("frontier.csv");
        fs::copy(root.join(&frontier_in.path), &frontier).map_err(CliError::io("copying frontier"))?;

        let mut m = Manifest::new(Stage::Export, cfg);
        m.sections = upstream.sections.clone();
        m.inputs = inputs;
        m.outputs = outputs(root, &[&summary, &frontier])?;
        m.write(root)?;
        Ok(())
    }

    pub fn pipeline(&self) -> Result<(), CliError> {
        for stage in Stage::ALL {
            log::info!("stage {}", stage.dir());
            self.run_stage(stage, &GrpoInit::Klst)?;
        }
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage, init: &GrpoInit) -> Result<(), CliError> {
        match stage {
            Stage::Calibrate => self.calibrate(),
            Stage::Collect => self.collect(),
            Stage::TrainKlst => self.train_klst(),
            Stage::TrainGrpo => self.train_grpo(init),
            Stage::Eval => self.eval(),
            Stage::Export => self.export(),
        }
    }
}

/// Reruns the stage a manifest describes with the config it records.
pub fn replay(manifest_path: &Path) -> Result<(), CliError> {
    let m = Manifest::read(manifest_path)?;
    let stage_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let root = stage_dir.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut config = m.config.clone();
    config.out = root;
    let init = match m.details.get("init").and_then(|v| v.as_str()) {
        None | Some("klst") => GrpoInit::Klst,
        Some("fresh") => GrpoInit::Fresh,
        Some(path) => GrpoInit::Checkpoint(PathBuf::from(path)),
    };
    Run::new(config)?.run_stage(m.stage, &init)
}

/// Drops router specs so evaluation needs no checkpoint.
pub fn baselines_only(config: &mut RunConfig) {
    config.eval.specs.retain(|m| !m.spec.needs_checkpoint());
}
