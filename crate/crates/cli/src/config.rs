//! Experiment configuration and the desk/paper profiles.

use std::collections::BTreeSet;
use std::path::Path;

use flowlab::compressible::CompressibleConfig;
use flowlab::datasets::{FieldSelect, RenderSpec, SplitConfig};
use flowlab::forcing::ForcingSpec;
use flowlab::incompressible::IncompressibleConfig;
use flowlab::spectra::{forcing_time, RegimeConfig};
use nnet::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Class labels the pipeline knows how to produce.
pub const TURBULENCE: &str = "turbulence";
pub const CHAOS: &str = "chaos";
pub const NOISE: &str = "noise";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dynamics", rename_all = "lowercase")]
pub enum Dynamics {
    Incompressible(IncompressibleConfig),
    Compressible(CompressibleConfig),
}

impl Dynamics {
    pub fn forcing(&self) -> Option<&ForcingSpec> {
        match self {
            Dynamics::Incompressible(c) => c.forcing.as_ref(),
            Dynamics::Compressible(c) => c.forcing.as_ref(),
        }
    }

    pub fn time_step(&self) -> Result<f64> {
        Ok(match self {
            Dynamics::Incompressible(c) => c.dt,
            Dynamics::Compressible(c) => c.time_step()?,
        })
    }

    /// Time between stored snapshots.
    pub fn snapshot_interval(&self) -> Result<f64> {
        let stride = match self {
            Dynamics::Incompressible(c) => c.snapshot_stride,
            Dynamics::Compressible(c) => c.snapshot_stride,
        };
        Ok(self.time_step()? * stride as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Source of the training classes.
    Train,
    /// Chaos and turbulence from other parameters, scored for accuracy.
    Ood,
    /// Turbulence only, scored for class fractions.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub name: String,
    pub role: Role,
    pub runs: usize,
    #[serde(flatten)]
    pub dynamics: Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSettings {
    pub slope_tol: f64,
    pub r2_min: f64,
    /// Half-width of the spectral averaging window, in forcing times.
    pub smooth_forcing_times: f64,
    /// Spin-up left unlabelled, in forcing times.
    pub spinup_forcing_times: f64,
}

impl RegimeSettings {
    pub fn for_family(&self, fam: &FamilyConfig) -> Result<RegimeConfig> {
        let f = fam
            .dynamics
            .forcing()
            .ok_or_else(|| Error::Config(format!("family {} is unforced", fam.name)))?;
        let tau = forcing_time(f.amplitude, fam.dynamics.time_step()?);
        let interval = fam.dynamics.snapshot_interval()?;
        let mut rc = RegimeConfig::new(f.k_center, self.spinup_forcing_times * tau);
        rc.slope_tol = self.slope_tol;
        rc.r2_min = self.r2_min;
        rc.smooth = (self.smooth_forcing_times * tau / interval).round() as usize;
        Ok(rc)
    }
}

/// Forcing time of a family's forcing at its time step.
pub fn family_forcing_time(fam: &FamilyConfig) -> Result<f64> {
    let f = fam
        .dynamics
        .forcing()
        .ok_or_else(|| Error::Config(format!("family {} is unforced", fam.name)))?;
    Ok(forcing_time(f.amplitude, fam.dynamics.time_step()?))
}

/// Images kept out of every dataset around a run's first turbulent
/// snapshot, in forcing times. Snapshots on either side of the onset look
/// alike; their regime labels are left as they are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionGuard {
    pub before_forcing_times: f64,
    pub after_forcing_times: f64,
}

impl TransitionGuard {
    /// `(before, after)` in time units for `fam`.
    pub fn window(&self, fam: &FamilyConfig) -> Result<(f64, f64)> {
        let tau = family_forcing_time(fam)?;
        Ok((
            self.before_forcing_times * tau,
            self.after_forcing_times * tau,
        ))
    }
}

/// A binary task: images labelled `positive` get target 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    /// Annulus noise for the noise class, on a `grid`-sized periodic box.
    pub annulus: ForcingSpec,
    pub grid: usize,
    /// Training images per class used to fit the Fourier proxies.
    pub fourier_fit_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Master seed for simulations, splits and noise.
    pub seed: u64,
    /// One classifier per seed and task.
    pub seeds: Vec<u64>,
    pub families: Vec<FamilyConfig>,
    pub regime: RegimeSettings,
    pub guard: TransitionGuard,
    pub render: RenderSpec,
    pub tasks: Vec<TaskConfig>,
    /// Task whose classifiers face the adversarial and OOD sets.
    pub eval_task: String,
    /// The split seed is replaced by one derived from `seed`.
    pub split: SplitConfig,
    pub noise: NoiseSettings,
    pub net: NetConfig,
    /// The seed is replaced per run.
    pub train: TrainConfig,
    pub effdim_row_cap: Option<usize>,
    /// Images per class in each evaluation set.
    pub eval_per_class: usize,
    pub histogram_bins: usize,
}

/// Forced run at injection rate `f²·dt/2 ≈ 0.98`; smaller `dt` for
/// lower `k_f`, whose larger eddies are faster. Snapshots every `every`
/// time units.
fn incompressible(n: usize, kf: f64, t_end: f64, dt: f64, nu: f64, every: f64) -> Dynamics {
    Dynamics::Incompressible(IncompressibleConfig {
        n,
        length: 2.0 * std::f64::consts::PI,
        nu,
        p: 2,
        alpha: 0.0,
        dt,
        forcing: Some(ForcingSpec {
            k_center: kf,
            half_width: 1.5,
            amplitude: 14.0 * (0.01 / dt).sqrt(),
        }),
        t_end,
        snapshot_stride: (every / dt).round() as usize,
        cfl_limit: 0.5,
    })
}

fn family(name: &str, role: Role, runs: usize, dynamics: Dynamics) -> FamilyConfig {
    FamilyConfig {
        name: name.into(),
        role,
        runs,
        dynamics,
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        let mut compressible = CompressibleConfig::desk(2000.0);
        compressible.snapshot_stride = 25;
        Self {
            profile: Profile::Desk,
            seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            families: vec![
                family(
                    "train",
                    Role::Train,
                    14,
                    incompressible(128, 20.0, 130.0, 0.01, 1e-6, 0.25),
                ),
                family(
                    "kf12",
                    Role::Ood,
                    8,
                    incompressible(128, 12.0, 60.0, 0.004, 1e-6, 0.1),
                ),
                family(
                    "kf26",
                    Role::Ood,
                    4,
                    incompressible(128, 26.0, 130.0, 0.005, 3e-7, 0.25),
                ),
                family(
                    "compressible",
                    Role::Ood,
                    8,
                    Dynamics::Compressible(compressible),
                ),
                family(
                    "kf10",
                    Role::Adversarial,
                    3,
                    incompressible(128, 10.0, 60.0, 0.004, 1e-6, 0.1),
                ),
            ],
            regime: RegimeSettings {
                slope_tol: 0.35,
                r2_min: 0.95,
                smooth_forcing_times: 2.0,
                spinup_forcing_times: 5.0,
            },
            guard: TransitionGuard {
                before_forcing_times: 8.0,
                after_forcing_times: 4.0,
            },
            render: RenderSpec {
                field: FieldSelect::Vx,
                out_size: 64,
            },
            tasks: vec![
                TaskConfig {
                    name: "turb_chaos".into(),
                    positive: TURBULENCE.into(),
                    negative: CHAOS.into(),
                },
                TaskConfig {
                    name: "turb_noise".into(),
                    positive: TURBULENCE.into(),
                    negative: NOISE.into(),
                },
            ],
            eval_task: "turb_chaos".into(),
            split: SplitConfig {
                test_fraction: 0.34,
                train_per_class: Some(1000),
                test_per_class: Some(500),
                min_test_per_class: 500,
                seed: 0,
            },
            noise: NoiseSettings {
                annulus: ForcingSpec {
                    k_center: 20.0,
                    half_width: 1.5,
                    amplitude: 1.0,
                },
                grid: 128,
                fourier_fit_images: 1000,
            },
            net: NetConfig {
                channels: vec![8, 16, 32, 64],
                blocks: 2,
                skip: false,
                input: 64,
            },
            train: TrainConfig::default(),
            effdim_row_cap: Some(2_000_000),
            eval_per_class: 500,
            histogram_bins: 20,
        }
    }

    /// Full-size setting; selectable but far beyond a workstation budget.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Paper;
        let mut compressible = CompressibleConfig::desk(2000.0);
        compressible.n = 436;
        compressible.snapshot_stride = 25;
        c.families = vec![
            family(
                "train",
                Role::Train,
                40,
                incompressible(400, 20.0, 130.0, 0.0025, 1e-6, 0.25),
            ),
            family(
                "kf12",
                Role::Ood,
                8,
                incompressible(400, 12.0, 60.0, 0.001, 1e-6, 0.1),
            ),
            family(
                "kf26",
                Role::Ood,
                8,
                incompressible(400, 26.0, 130.0, 0.00125, 3e-7, 0.25),
            ),
            family(
                "compressible",
                Role::Ood,
                8,
                Dynamics::Compressible(compressible),
            ),
            family(
                "kf10",
                Role::Adversarial,
                8,
                incompressible(400, 10.0, 60.0, 0.001, 1e-6, 0.1),
            ),
        ];
        c.render.out_size = 400;
        c.split.train_per_class = Some(4000);
        c.split.test_per_class = Some(1000);
        c.split.min_test_per_class = 1000;
        c.noise.grid = 400;
        c.net = NetConfig::paper(400);
        c.eval_per_class = 1000;
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if self.seeds.is_empty() || distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!(
                "seeds {:?} must be nonempty and distinct",
                self.seeds
            )));
        }
        let g = self.guard;
        if !(g.before_forcing_times >= 0.0 && g.after_forcing_times >= 0.0) {
            return Err(Error::Config(format!(
                "transition guard {g:?} must be non-negative"
            )));
        }
        let mut names = BTreeSet::new();
        for f in &self.families {
            if !names.insert(f.name.as_str()) || f.name.is_empty() {
                return Err(Error::Config(format!("duplicate family name {:?}", f.name)));
            }
            if f.runs == 0 {
                return Err(Error::Config(format!("family {} has no runs", f.name)));
            }
            match &f.dynamics {
                Dynamics::Incompressible(c) => {
                    c.validate()?;
                }
                Dynamics::Compressible(c) => {
                    c.validate()?;
                }
            }
            if f.dynamics.forcing().is_none() {
                return Err(Error::Config(format!("family {} is unforced", f.name)));
            }
            if matches!(f.dynamics, Dynamics::Incompressible(_))
                && self.render.field == FieldSelect::Density
            {
                return Err(Error::Config(format!(
                    "family {} has no density field to render",
                    f.name
                )));
            }
        }
        if !self.families.iter().any(|f| f.role == Role::Train) {
            return Err(Error::Config("no family with role train".into()));
        }
        let mut tasks = BTreeSet::new();
        for t in &self.tasks {
            if !tasks.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate task {}", t.name)));
            }
            for l in [&t.positive, &t.negative] {
                if ![TURBULENCE, CHAOS, NOISE].contains(&l.as_str()) {
                    return Err(Error::Config(format!("task {}: unknown class {l}", t.name)));
                }
            }
            if t.positive == t.negative {
                return Err(Error::Config(format!(
                    "task {}: class manifests must be disjoint",
                    t.name
                )));
            }
        }
        let eval = self
            .task(&self.eval_task)
            .ok_or_else(|| Error::Config(format!("eval task {} not listed", self.eval_task)))?;
        if eval.positive != TURBULENCE || eval.negative != CHAOS {
            return Err(Error::Config(format!(
                "eval task {} must separate turbulence from chaos",
                eval.name
            )));
        }
        self.render.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.net.input != self.render.out_size {
            return Err(Error::Config(format!(
                "net input {} differs from image size {}",
                self.net.input, self.render.out_size
            )));
        }
        if self.histogram_bins == 0 || self.eval_per_class == 0 {
            return Err(Error::Config(
                "histogram bins and eval size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> Option<&TaskConfig> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn family(&self, name: &str) -> Option<&FamilyConfig> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn families_with(&self, role: Role) -> impl Iterator<Item = &FamilyConfig> {
        self.families.iter().filter(move |f| f.role == role)
    }
}
