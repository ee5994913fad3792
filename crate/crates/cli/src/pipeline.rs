//! Stage graph. Every stage lives in a directory keyed by a hash of its
//! inputs, which include the keys of the stages it reads, so a config
//! change only rebuilds what depends on it.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use flowlab::datasets::{
    build_dataset, build_eval_set, fit_fourier_stats, gen_noise_annulus, gen_noise_fourier,
    DatasetManifest, LabeledImage, Split, SplitConfig,
};
use flowlab::fieldcore::Grid2D;
use flowlab::rng::{stream_id, stream_rng};
use nnet::data::{class_pair_rows, load_all, load_rows};
use nnet::{Adam, Checkpoint, Sample, StageNet, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::cache::StageDir;
use crate::config::{ExperimentConfig, FamilyConfig, Role, TaskConfig, CHAOS, NOISE, TURBULENCE};
use crate::pool::{simulate_family, Pool};
use crate::{Error, Result, StageContext};

/// Bumped whenever an on-disk format changes.
const FORMAT: u32 = 1;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "log.csv";
pub const TRAIN_RESULT: &str = "result.json";

/// What an evaluation set is made of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvalSource {
    /// Images of one simulation family.
    Family { family: String, labels: Vec<String> },
    /// Fourier proxies fitted to one class of the eval task's train split.
    Fourier { class: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub name: String,
    pub role: Role,
    pub source: EvalSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub task: String,
    pub seed: u64,
    pub epochs: usize,
    pub test_accuracy: f64,
    pub config_hash: String,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
        })
    }

    fn split_config(&self) -> SplitConfig {
        SplitConfig {
            seed: stream_id("split", self.cfg.seed),
            ..self.cfg.split.clone()
        }
    }

    // ---- simulation -------------------------------------------------

    pub fn sim_dir(&self, fam: &FamilyConfig) -> StageDir {
        let c = &self.cfg;
        StageDir::new(
            &self.out,
            "sims",
            &fam.name,
            &(FORMAT, c.seed, fam, &c.regime, &c.render),
        )
    }

    pub fn pool(&self, fam: &FamilyConfig) -> Result<Pool> {
        let dir = self.sim_dir(fam);
        let stage = format!("simulate {}", fam.name);
        dir.ensure(|d| simulate_family(&self.cfg, fam, d))
            .stage(&stage)?;
        Pool::read(&dir.path).stage(&stage)
    }

    pub fn simulate(&self) -> Result<()> {
        for fam in &self.cfg.families {
            self.pool(fam)?;
        }
        Ok(())
    }

    fn train_families(&self) -> Vec<&FamilyConfig> {
        self.cfg.families_with(Role::Train).collect()
    }

    // ---- datasets ---------------------------------------------------

    fn noise_count(&self, available: usize) -> usize {
        let s = &self.cfg.split;
        match (s.train_per_class, s.test_per_class) {
            (Some(tr), Some(te)) => {
                let need_train = tr as f64 / (1.0 - s.test_fraction);
                let need_test = te.max(s.min_test_per_class) as f64 / s.test_fraction;
                need_train.max(need_test).ceil() as usize
            }
            _ => available,
        }
    }

    pub fn task_dir(&self, task: &TaskConfig) -> StageDir {
        let sims: Vec<String> = self
            .train_families()
            .iter()
            .map(|f| self.sim_dir(f).key)
            .collect();
        let noise = [&task.positive, &task.negative]
            .iter()
            .any(|l| l.as_str() == NOISE)
            .then_some(&self.cfg.noise);
        StageDir::new(
            &self.out,
            "datasets",
            &task.name,
            &(
                FORMAT,
                task,
                sims,
                self.split_config(),
                noise,
                self.cfg.guard,
            ),
        )
    }

    fn noise_images(&self, count: usize) -> Result<Vec<LabeledImage>> {
        let n = &self.cfg.noise;
        let grid = Grid2D::periodic(n.grid)?;
        let mut rng = stream_rng(self.cfg.seed, stream_id("noise/annulus", 0));
        let images = gen_noise_annulus(count, &n.annulus, grid, &self.cfg.render, &mut rng)?;
        let hash = self.cfg.render.hash();
        Ok(images
            .into_iter()
            .enumerate()
            .map(|(i, image)| LabeledImage {
                image,
                label: NOISE.into(),
                sim_id: format!("noise-{i:05}"),
                t: None,
                regime: "noise".into(),
                generator: "annulus".into(),
                render_hash: hash.clone(),
            })
            .collect())
    }

    pub fn task_dataset(&self, task: &TaskConfig) -> Result<DatasetManifest> {
        let dir = self.task_dir(task);
        let stage = format!("dataset {}", task.name);
        if !dir.is_complete() {
            let mut images = Vec::new();
            let physical: Vec<&str> = [task.positive.as_str(), task.negative.as_str()]
                .into_iter()
                .filter(|l| *l != NOISE)
                .collect();
            for fam in self.train_families() {
                let pool = self.pool(fam)?;
                let guard = self.cfg.guard.window(fam).stage(&stage)?;
                images.extend(
                    pool.labeled(&physical, &self.cfg.render, guard)
                        .stage(&stage)?,
                );
            }
            if task.positive == NOISE || task.negative == NOISE {
                let have = images.len() / physical.len().max(1);
                images.extend(self.noise_images(self.noise_count(have)).stage(&stage)?);
            }
            let split = self.split_config();
            dir.ensure(|d| {
                build_dataset(images, &split, d)?;
                Ok(())
            })
            .stage(&stage)?;
        }
        let m = DatasetManifest::read(&dir.path).stage(&stage)?;
        m.check_integrity().stage(&stage)?;
        Ok(m)
    }

    pub fn eval_task(&self) -> &TaskConfig {
        self.cfg
            .task(&self.cfg.eval_task)
            .expect("validated config names its eval task")
    }

    pub fn eval_sets(&self) -> Vec<EvalSet> {
        let mut sets = Vec::new();
        for class in [TURBULENCE, CHAOS] {
            sets.push(EvalSet {
                name: format!("fourier_{class}"),
                role: Role::Adversarial,
                source: EvalSource::Fourier {
                    class: class.into(),
                },
            });
        }
        for f in &self.cfg.families {
            let labels = match f.role {
                Role::Train => continue,
                Role::Ood => vec![TURBULENCE.to_string(), CHAOS.to_string()],
                Role::Adversarial => vec![TURBULENCE.to_string()],
            };
            sets.push(EvalSet {
                name: f.name.clone(),
                role: f.role,
                source: EvalSource::Family {
                    family: f.name.clone(),
                    labels,
                },
            });
        }
        sets
    }

    pub fn eval_dir(&self, set: &EvalSet) -> StageDir {
        let upstream = match &set.source {
            EvalSource::Family { family, .. } => {
                let fam = self.cfg.family(family).expect("eval set names a family");
                format!("{}-{:?}", self.sim_dir(fam).key, self.cfg.guard)
            }
            EvalSource::Fourier { .. } => self.task_dir(self.eval_task()).key,
        };
        let fit = matches!(set.source, EvalSource::Fourier { .. })
            .then_some(self.cfg.noise.fourier_fit_images);
        StageDir::new(
            &self.out,
            "evalsets",
            &set.name,
            &(
                FORMAT,
                set,
                upstream,
                self.cfg.eval_per_class,
                fit,
                self.cfg.seed,
            ),
        )
    }

    fn fourier_images(&self, class: &str) -> Result<Vec<LabeledImage>> {
        let m = self.task_dataset(self.eval_task())?;
        let rows: Vec<_> = m
            .split(Split::Train)
            .filter(|r| r.label == class)
            .take(self.cfg.noise.fourier_fit_images)
            .collect();
        let images = rows
            .iter()
            .map(|r| m.load_image(r))
            .collect::<flowlab::Result<Vec<_>>>()?;
        let stats = fit_fourier_stats(&images)?;
        let mut rng = stream_rng(
            self.cfg.seed,
            stream_id(&format!("noise/fourier/{class}"), 0),
        );
        let noise = gen_noise_fourier(&stats, self.cfg.eval_per_class, &mut rng)?;
        let label = format!("fourier_{class}");
        let hash = self.cfg.render.hash();
        Ok(noise
            .into_iter()
            .enumerate()
            .map(|(i, image)| LabeledImage {
                image,
                label: label.clone(),
                sim_id: format!("{label}-{i:05}"),
                t: None,
                regime: "noise".into(),
                generator: "fourier".into(),
                render_hash: hash.clone(),
            })
            .collect())
    }

    pub fn eval_set(&self, set: &EvalSet) -> Result<DatasetManifest> {
        let dir = self.eval_dir(set);
        let stage = format!("evaluation set {}", set.name);
        if !dir.is_complete() {
            let images = match &set.source {
                EvalSource::Family { family, labels } => {
                    let fam = self.cfg.family(family).expect("eval set names a family");
                    let pool = self.pool(fam)?;
                    let guard = self.cfg.guard.window(fam).stage(&stage)?;
                    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
                    for l in &labels {
                        if pool.count(l, guard) == 0 {
                            log::warn!("family {family} produced no usable {l} images");
                        }
                    }
                    pool.labeled(&labels, &self.cfg.render, guard)
                        .stage(&stage)?
                }
                EvalSource::Fourier { class } => self.fourier_images(class).stage(&stage)?,
            };
            let seed = stream_id(&format!("eval/{}", set.name), self.cfg.seed);
            dir.ensure(|d| {
                build_eval_set(images, Some(self.cfg.eval_per_class), seed, d)?;
                Ok(())
            })
            .stage(&stage)?;
        }
        DatasetManifest::read(&dir.path).stage(&stage)
    }

    fn uses_noise(task: &TaskConfig) -> bool {
        task.positive == NOISE || task.negative == NOISE
    }

    /// Simulation-derived datasets and evaluation sets.
    pub fn render(&self) -> Result<()> {
        for t in self.cfg.tasks.iter().filter(|t| !Self::uses_noise(t)) {
            self.task_dataset(t)?;
        }
        for s in self
            .eval_sets()
            .iter()
            .filter(|s| matches!(s.source, EvalSource::Family { .. }))
        {
            self.eval_set(s)?;
        }
        Ok(())
    }

    /// Datasets and evaluation sets that involve synthetic noise.
    pub fn noise(&self) -> Result<()> {
        for t in self.cfg.tasks.iter().filter(|t| Self::uses_noise(t)) {
            self.task_dataset(t)?;
        }
        for s in self
            .eval_sets()
            .iter()
            .filter(|s| matches!(s.source, EvalSource::Fourier { .. }))
        {
            self.eval_set(s)?;
        }
        Ok(())
    }

    // ---- training ---------------------------------------------------

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: stream_id(&format!("train/{}", self.cfg.seed), seed),
            ..self.cfg.train.clone()
        }
    }

    pub fn model_dir(&self, task: &TaskConfig, seed: u64) -> StageDir {
        StageDir::new(
            &self.out,
            "models",
            &format!("{}-s{seed}", task.name),
            &(
                FORMAT,
                self.task_dir(task).key,
                &self.cfg.net,
                self.train_config(seed),
            ),
        )
    }

    /// `(train, test)` samples of a task, positive class labelled 1.
    pub fn task_samples(&self, task: &TaskConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let m = self.task_dataset(task)?;
        let load = |split| {
            load_rows(
                &m,
                &class_pair_rows(&m, split, &task.positive, &task.negative),
            )
        };
        Ok((load(Split::Train)?, load(Split::Test)?))
    }

    pub fn model(&self, task: &TaskConfig, seed: u64) -> Result<Checkpoint> {
        let dir = self.model_dir(task, seed);
        let stage = format!("train {} seed {seed}", task.name);
        let tc = self.train_config(seed);
        if !dir.is_complete() {
            let (train_set, test_set) = self.task_samples(task).stage(&stage)?;
            dir.ensure(|d| {
                let (ckpt, log) = nnet::train(&self.cfg.net, &tc, &train_set, &test_set)?;
                ckpt.save(&d.join(CHECKPOINT))?;
                nnet::train::write_log(File::create(d.join(TRAIN_LOG))?, &log)?;
                let result = TrainResult {
                    task: task.name.clone(),
                    seed,
                    epochs: log.len(),
                    test_accuracy: log.last().map_or(0.0, |l| l.test_acc),
                    config_hash: ckpt.config_hash(),
                };
                serde_json::to_writer_pretty(File::create(d.join(TRAIN_RESULT))?, &result)?;
                log::info!(
                    "{} seed {seed}: test accuracy {:.4} after {} epochs",
                    task.name,
                    result.test_accuracy,
                    result.epochs
                );
                Ok(())
            })
            .stage(&stage)?;
        }
        let ckpt = Checkpoint::load(&dir.path.join(CHECKPOINT)).stage(&stage)?;
        ckpt.expect_hash(&nnet::checkpoint::config_hash(&self.cfg.net, &tc))
            .stage(&stage)?;
        Ok(ckpt)
    }

    pub fn train_result(&self, task: &TaskConfig, seed: u64) -> Result<TrainResult> {
        self.model(task, seed)?;
        let path = self.model_dir(task, seed).path.join(TRAIN_RESULT);
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn train(&self) -> Result<()> {
        for t in &self.cfg.tasks {
            for &s in &self.cfg.seeds {
                self.model(t, s)?;
            }
        }
        Ok(())
    }

    /// The untrained network a seed starts from.
    pub fn initial_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let tc = self.train_config(seed);
        let net = StageNet::<f32>::init(
            &self.cfg.net,
            &mut stream_rng(tc.seed, stream_id("init", 0)),
        )?;
        let adam = Adam::new(net.params.len());
        Ok(Checkpoint {
            net: self.cfg.net.clone(),
            train: tc,
            epoch: 0,
            params: net.params,
            adam,
        })
    }

    pub fn models(&self, task: &TaskConfig) -> Result<Vec<Checkpoint>> {
        self.cfg
            .seeds
            .iter()
            .map(|&s| self.model(task, s))
            .collect()
    }

    pub fn model_keys(&self, task: &TaskConfig) -> Vec<String> {
        self.cfg
            .seeds
            .iter()
            .map(|&s| self.model_dir(task, s).key)
            .collect()
    }

    // ---- evaluation inputs -----------------------------------------

    /// Evaluation samples, turbulence labelled 1 and everything else 0.
    pub fn eval_samples(&self, set: &EvalSet) -> Result<(DatasetManifest, Vec<Sample>)> {
        let m = self.eval_set(set)?;
        let mut samples = load_all(&m, Some(Split::Test), 0)?;
        for (s, r) in samples.iter_mut().zip(m.split(Split::Test)) {
            s.label = (r.label == TURBULENCE) as u8;
        }
        Ok((m, samples))
    }

    pub fn eval_keys(&self) -> Vec<String> {
        self.eval_sets()
            .iter()
            .map(|s| self.eval_dir(s).key)
            .collect()
    }

    /// Everything the pipeline produces, in build order.
    pub fn run_all(&self) -> Result<()> {
        self.simulate()?;
        self.render()?;
        self.noise()?;
        self.train()?;
        crate::analysis::effdim(self)?;
        crate::analysis::evaluate(self)?;
        crate::analysis::spectra(self)?;
        crate::report::write_report(self)?;
        Ok(())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(serde_json::from_reader(f)?)
}
