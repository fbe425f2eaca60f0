//! Typed experiment configuration, its validation, and the model registry
//! that turns registry keys into simulator inputs.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use mckean::gl::{BandwidthGrid, GridRule};
use mckean::interaction::{Lattice, LinearForm, TimeWeight};
use mckean::kernels::KernelSpec;
use mckean::model::{linear_confinement, DiffusionModel, DriftModel, InitialLaw, MeanFieldOu, PolynomialForce, TimeGrid};
use mckean::simulator::{ForceEval, SimConfig};
use serde::{Deserialize, Serialize};

use crate::config::ConfigDoc;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Interaction {
    None,
    /// `s u (1 - |u|^2 / r^2)^2` on `|u| < r`.
    Bump { strength: f64, radius: f64 },
    /// `s u` everywhere; not compactly supported.
    Quadratic { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// `b = -theta x - lambda (x - mean)`, one-dimensional.
    MeanFieldOu { theta: f64, lambda: f64 },
    /// `b = -k x - (grad W * mu)(x)`.
    Vlasov { confinement: f64, interaction: Interaction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    Point(Vec<f64>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub sigma: f64,
    pub init: InitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForceChoice {
    Auto,
    Naive,
    Cells,
    Sorted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub t_end: f64,
    pub steps: usize,
    pub seed: u64,
    pub force: ForceChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub kernel: String,
    pub time_kernel: String,
    pub grid: GridRule,
    pub relax_h1: bool,
    pub varpi1: f64,
    pub varpi2: f64,
    /// `None` lets the drift estimator pick its floor from a pilot density.
    pub varpi3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub weight: TimeWeight,
    pub half_width: f64,
    pub points: usize,
    /// `varpi_N = varpi_scale * N^{-1/4}`.
    pub varpi_scale: f64,
    pub varpi_prime: f64,
    pub radius: f64,
    /// Bandwidths at `reference_n`; they scale as `(N / reference_n)^{-1/5}`.
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub reference_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSpec {
    pub replicates: usize,
    pub base_seed: u64,
    pub n_schedule: Vec<usize>,
}

/// Bounded test functions for the concentration check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    /// `(1 - x^2)^2` on `|x| < 1`.
    Bump,
    /// `cos(2 x)`.
    Cos,
    /// `tanh(x)`.
    Tanh,
    /// `1`; its deviations vanish identically.
    Constant,
}

impl TestFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            TestFunction::Bump => {
                if x.abs() < 1.0 {
                    (1.0 - x * x).powi(2)
                } else {
                    0.0
                }
            }
            TestFunction::Cos => (2.0 * x).cos(),
            TestFunction::Tanh => x.tanh(),
            TestFunction::Constant => 1.0,
        }
    }

    pub fn sup_norm(self) -> f64 {
        1.0
    }
}

impl FromStr for TestFunction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "bump" => Ok(TestFunction::Bump),
            "cos" => Ok(TestFunction::Cos),
            "tanh" => Ok(TestFunction::Tanh),
            "constant" => Ok(TestFunction::Constant),
            other => Err(format!("unknown test function {other:?} (bump, cos, tanh, constant)")),
        }
    }
}

impl Display for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestFunction::Bump => "bump",
            TestFunction::Cos => "cos",
            TestFunction::Tanh => "tanh",
            TestFunction::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub sim: SimSpec,
    pub estimate: EstimatorSpec,
    pub interaction: InteractionSpec,
    pub replication: ReplicationSpec,
    pub concentration: Vec<TestFunction>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec {
                kind: ModelKind::MeanFieldOu { theta: 1.0, lambda: 1.0 },
                dim: 1,
                sigma: 1.0,
                init: InitSpec::Gaussian { mean: vec![0.5], var: vec![0.5] },
            },
            sim: SimSpec { n: 1024, t_end: 2.0, steps: 200, seed: 1, force: ForceChoice::Auto },
            estimate: EstimatorSpec {
                t0: 1.0,
                x0: vec![0.0],
                kernel: "epa:2".into(),
                time_kernel: "epa:2".into(),
                grid: GridRule::Geometric(1.5),
                relax_h1: true,
                varpi1: 1.0,
                varpi2: 1.0,
                varpi3: None,
            },
            interaction: InteractionSpec {
                weight: TimeWeight::BumpDerivative { a: 0.2, b: 0.8 },
                half_width: 4.0,
                points: 64,
                varpi_scale: 1.0,
                varpi_prime: 0.01,
                radius: 1.0,
                h: 0.5,
                h1: 0.15,
                h2: 0.5,
                reference_n: 1024,
            },
            replication: ReplicationSpec { replicates: 10, base_seed: 1, n_schedule: vec![] },
            concentration: vec![TestFunction::Bump, TestFunction::Cos, TestFunction::Tanh],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Reads typed values out of a [`ConfigDoc`], remembering which keys were
/// consumed so that leftovers can be reported as unknown.
struct Reader<'a> {
    doc: &'a ConfigDoc,
    used: Vec<String>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.push(key.to_string());
        self.doc.get(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| CliError::Key { key: key.into(), msg: format!("{v:?}: {e}") }),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e: T::Err| CliError::Key { key: key.into(), msg: format!("{s:?}: {e}") }))
                .collect(),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }
}

fn key_err(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Key { key: key.into(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_doc(&ConfigDoc::load(path)?)
    }

    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        let d = Self::default();
        let mut r = Reader { doc, used: Vec::new() };

        let dim: usize = r.parse("model.dim", d.model.dim)?;
        let kind = match r.string("model.drift", "mfou").as_str() {
            "mfou" => ModelKind::MeanFieldOu { theta: r.parse("model.theta", 1.0)?, lambda: r.parse("model.lambda", 1.0)? },
            "vlasov" => {
                let confinement = r.parse("model.confinement", 1.0)?;
                let interaction = match r.string("model.interaction", "bump").as_str() {
                    "none" => Interaction::None,
                    "bump" => Interaction::Bump { strength: r.parse("model.strength", 1.0)?, radius: r.parse("model.radius", 1.0)? },
                    "quadratic" => Interaction::Quadratic { strength: r.parse("model.strength", 1.0)? },
                    other => return Err(key_err("model.interaction", format!("unknown interaction {other:?} (none, bump, quadratic)"))),
                };
                ModelKind::Vlasov { confinement, interaction }
            }
            other => return Err(key_err("model.drift", format!("unknown drift model {other:?} (mfou, vlasov)"))),
        };
        let sigma = r.parse("model.sigma", d.model.sigma)?;
        let init = match r.string("init.law", "gaussian").as_str() {
            "gaussian" => InitSpec::Gaussian { mean: r.list("init.mean", vec![0.5; dim])?, var: r.list("init.var", vec![0.5; dim])? },
            "point" => InitSpec::Point(r.list("init.mean", vec![0.0; dim])?),
            "file" => InitSpec::File(PathBuf::from(r.raw("init.path").ok_or_else(|| key_err("init.path", "required for law = file"))?)),
            other => return Err(key_err("init.law", format!("unknown initial law {other:?} (gaussian, point, file)"))),
        };

        let force = match r.string("sim.force", "auto").as_str() {
            "auto" => ForceChoice::Auto,
            "naive" => ForceChoice::Naive,
            "cells" => ForceChoice::Cells,
            "sorted" => ForceChoice::Sorted,
            other => return Err(key_err("sim.force", format!("unknown force evaluation {other:?} (auto, naive, cells, sorted)"))),
        };
        let sim = SimSpec {
            n: r.parse("sim.n", d.sim.n)?,
            t_end: r.parse("sim.t_end", d.sim.t_end)?,
            steps: r.parse("sim.steps", d.sim.steps)?,
            seed: r.parse("sim.seed", d.sim.seed)?,
            force,
        };

        let de = &d.estimate;
        let varpi3 = match r.raw("estimate.varpi3") {
            None | Some("auto") => None,
            Some(v) => Some(v.parse().map_err(|e| key_err("estimate.varpi3", format!("{v:?}: {e}")))?),
        };
        let estimate = EstimatorSpec {
            t0: r.parse("estimate.t0", de.t0)?,
            x0: r.list("estimate.x0", vec![0.0; dim])?,
            kernel: r.string("estimate.kernel", &de.kernel),
            time_kernel: r.string("estimate.time_kernel", &de.time_kernel),
            grid: r.parse("estimate.grid", de.grid)?,
            relax_h1: r.parse("estimate.relax_h1", de.relax_h1)?,
            varpi1: r.parse("estimate.varpi1", de.varpi1)?,
            varpi2: r.parse("estimate.varpi2", de.varpi2)?,
            varpi3,
        };

        let di = &d.interaction;
        let interaction = InteractionSpec {
            weight: r.parse("interaction.weight", di.weight)?,
            half_width: r.parse("interaction.half_width", di.half_width)?,
            points: r.parse("interaction.points", di.points)?,
            varpi_scale: r.parse("interaction.varpi_scale", di.varpi_scale)?,
            varpi_prime: r.parse("interaction.varpi_prime", di.varpi_prime)?,
            radius: r.parse("interaction.radius", di.radius)?,
            h: r.parse("interaction.h", di.h)?,
            h1: r.parse("interaction.h1", di.h1)?,
            h2: r.parse("interaction.h2", di.h2)?,
            reference_n: r.parse("interaction.reference_n", di.reference_n)?,
        };

        let replication = ReplicationSpec {
            replicates: r.parse("replication.replicates", d.replication.replicates)?,
            base_seed: r.parse("replication.base_seed", d.replication.base_seed)?,
            n_schedule: r.list("replication.n_schedule", d.replication.n_schedule.clone())?,
        };
        let concentration = r.list("concentration.functions", d.concentration.clone())?;
        let output_dir = PathBuf::from(r.string("output.dir", "out"));

        let unknown: Vec<&str> = doc.keys().filter(|k| !r.used.iter().any(|u| u == k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Invalid(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let model = ModelSpec { kind, dim, sigma, init };
        Ok(Self { model, sim, estimate, interaction, replication, concentration, output_dir })
    }

    /// The full configuration as a document (every key written out).
    pub fn to_doc(&self) -> ConfigDoc {
        let mut doc = ConfigDoc::new();
        let m = &self.model;
        doc.set("model.dim", m.dim.to_string());
        doc.set("model.sigma", m.sigma.to_string());
        match &m.kind {
            ModelKind::MeanFieldOu { theta, lambda } => {
                doc.set("model.drift", "mfou");
                doc.set("model.theta", theta.to_string());
                doc.set("model.lambda", lambda.to_string());
            }
            ModelKind::Vlasov { confinement, interaction } => {
                doc.set("model.drift", "vlasov");
                doc.set("model.confinement", confinement.to_string());
                match interaction {
                    Interaction::None => doc.set("model.interaction", "none"),
                    Interaction::Bump { strength, radius } => {
                        doc.set("model.interaction", "bump");
                        doc.set("model.strength", strength.to_string());
                        doc.set("model.radius", radius.to_string());
                    }
                    Interaction::Quadratic { strength } => {
                        doc.set("model.interaction", "quadratic");
                        doc.set("model.strength", strength.to_string());
                    }
                }
            }
        }
        match &m.init {
            InitSpec::Gaussian { mean, var } => {
                doc.set("init.law", "gaussian");
                doc.set("init.mean", list(mean));
                doc.set("init.var", list(var));
            }
            InitSpec::Point(p) => {
                doc.set("init.law", "point");
                doc.set("init.mean", list(p));
            }
            InitSpec::File(p) => {
                doc.set("init.law", "file");
                doc.set("init.path", p.display().to_string());
            }
        }
        let s = &self.sim;
        doc.set("sim.n", s.n.to_string());
        doc.set("sim.t_end", s.t_end.to_string());
        doc.set("sim.steps", s.steps.to_string());
        doc.set("sim.seed", s.seed.to_string());
        doc.set(
            "sim.force",
            match s.force {
                ForceChoice::Auto => "auto",
                ForceChoice::Naive => "naive",
                ForceChoice::Cells => "cells",
                ForceChoice::Sorted => "sorted",
            },
        );
        let e = &self.estimate;
        doc.set("estimate.t0", e.t0.to_string());
        doc.set("estimate.x0", list(&e.x0));
        doc.set("estimate.kernel", e.kernel.clone());
        doc.set("estimate.time_kernel", e.time_kernel.clone());
        doc.set("estimate.grid", e.grid.to_string());
        doc.set("estimate.relax_h1", e.relax_h1.to_string());
        doc.set("estimate.varpi1", e.varpi1.to_string());
        doc.set("estimate.varpi2", e.varpi2.to_string());
        doc.set("estimate.varpi3", e.varpi3.map_or("auto".to_string(), |v| v.to_string()));
        let i = &self.interaction;
        doc.set("interaction.weight", i.weight.to_string());
        doc.set("interaction.half_width", i.half_width.to_string());
        doc.set("interaction.points", i.points.to_string());
        doc.set("interaction.varpi_scale", i.varpi_scale.to_string());
        doc.set("interaction.varpi_prime", i.varpi_prime.to_string());
        doc.set("interaction.radius", i.radius.to_string());
        doc.set("interaction.h", i.h.to_string());
        doc.set("interaction.h1", i.h1.to_string());
        doc.set("interaction.h2", i.h2.to_string());
        doc.set("interaction.reference_n", i.reference_n.to_string());
        let r = &self.replication;
        doc.set("replication.replicates", r.replicates.to_string());
        doc.set("replication.base_seed", r.base_seed.to_string());
        doc.set("replication.n_schedule", list(&r.n_schedule));
        doc.set("concentration.functions", list(&self.concentration));
        doc.set("output.dir", self.output_dir.display().to_string());
        doc
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.sim.t_end, self.sim.steps)?)
    }

    pub fn space_kernel(&self) -> Result<KernelSpec> {
        Ok(KernelSpec::from_id(&self.estimate.kernel, self.model.dim)?)
    }

    pub fn time_kernel(&self) -> Result<KernelSpec> {
        Ok(KernelSpec::from_id(&self.estimate.time_kernel, 1)?)
    }

    /// Largest `h1` whose time window around `t0` stays inside `[0, T]`.
    pub fn h1_cap(&self) -> Result<f64> {
        let (lo, hi) = self.time_kernel()?.factors()[0].support();
        let t0 = self.estimate.t0;
        let room_left = if hi > 0.0 { t0 / hi } else { f64::INFINITY };
        let room_right = if lo < 0.0 { (self.sim.t_end - t0) / -lo } else { f64::INFINITY };
        Ok(room_left.min(room_right))
    }

    pub fn density_grid(&self, n: usize) -> Result<BandwidthGrid> {
        Ok(BandwidthGrid::density(n, self.model.dim, self.estimate.grid)?)
    }

    pub fn drift_grid(&self, n: usize) -> Result<BandwidthGrid> {
        Ok(BandwidthGrid::drift(n, self.model.dim, self.estimate.grid, self.estimate.relax_h1, self.h1_cap()?)?)
    }

    /// Particle counts a replicated run uses: the schedule, or `sim.n`.
    pub fn schedule(&self) -> Vec<usize> {
        if self.replication.n_schedule.is_empty() {
            vec![self.sim.n]
        } else {
            self.replication.n_schedule.clone()
        }
    }

    pub fn is_vlasov(&self) -> bool {
        matches!(self.model.kind, ModelKind::Vlasov { .. })
    }

    /// Checks everything that does not depend on the chosen experiment.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let invalid = |msg: String| Err(CliError::Invalid(msg));
        if m.dim == 0 {
            return invalid("model.dim must be >= 1".into());
        }
        if !(m.sigma >= 0.0 && m.sigma.is_finite()) {
            return invalid(format!("model.sigma must be finite and >= 0, got {}", m.sigma));
        }
        match &m.kind {
            ModelKind::MeanFieldOu { theta, lambda } => {
                if m.dim != 1 {
                    return invalid("the mean-field OU model is one-dimensional".into());
                }
                if !(*theta >= 0.0 && *lambda >= 0.0) {
                    return invalid("model.theta and model.lambda must be >= 0".into());
                }
            }
            ModelKind::Vlasov { confinement, interaction } => {
                if !confinement.is_finite() {
                    return invalid("model.confinement must be finite".into());
                }
                match interaction {
                    Interaction::Bump { strength, radius } if !(strength.is_finite() && *radius > 0.0 && radius.is_finite()) => {
                        return invalid("bump interaction needs finite strength and radius > 0".into())
                    }
                    Interaction::Quadratic { strength } if !strength.is_finite() => {
                        return invalid("model.strength must be finite".into())
                    }
                    _ => {}
                }
            }
        }
        match &m.init {
            InitSpec::Gaussian { mean, var } if mean.len() != m.dim || var.len() != m.dim => {
                return invalid(format!("init.mean and init.var need {} entries", m.dim))
            }
            InitSpec::Point(p) if p.len() != m.dim => return invalid(format!("init.mean needs {} entries", m.dim)),
            _ => {}
        }
        let grid = self.time_grid()?;
        if self.sim.n == 0 {
            return invalid("sim.n must be >= 1".into());
        }
        let e = &self.estimate;
        if !(e.t0 > 0.0 && e.t0 < grid.t_end()) {
            return invalid(format!("estimate.t0 = {} must lie in (0, {})", e.t0, grid.t_end()));
        }
        if e.x0.len() != m.dim {
            return invalid(format!("estimate.x0 needs {} entries", m.dim));
        }
        self.space_kernel()?;
        self.time_kernel()?;
        if !(e.varpi1 > 0.0 && e.varpi2 > 0.0) || e.varpi3.is_some_and(|v| !(v >= 0.0)) {
            return invalid("varpi1, varpi2 must be > 0 and varpi3 >= 0".into());
        }
        if self.replication.replicates == 0 {
            return invalid("replication.replicates must be >= 1".into());
        }
        for n in self.schedule().into_iter().chain([self.sim.n]) {
            if n < 2 {
                return invalid(format!("estimation needs N >= 2, got {n}"));
            }
            self.density_grid(n)?.check_admissible(n, m.dim, e.relax_h1)?;
            self.drift_grid(n)?.check_admissible(n, m.dim, e.relax_h1)?;
        }
        Ok(())
    }

    /// Gating for the interaction estimator: Vlasov model with a compactly
    /// supported interaction, a weight supported inside `(0, T)`, and a
    /// truncation radius inside the lattice box.
    pub fn validate_interaction(&self) -> Result<()> {
        match &self.model.kind {
            ModelKind::Vlasov { interaction: Interaction::Quadratic { .. }, .. } => {
                return Err(CliError::Invalid("interaction estimation needs a compactly supported interaction force".into()))
            }
            ModelKind::Vlasov { .. } => {}
            ModelKind::MeanFieldOu { .. } => {
                return Err(CliError::Invalid("interaction estimation is only defined for Vlasov models".into()))
            }
        }
        let i = &self.interaction;
        LinearForm::new(i.weight, &self.time_grid()?)?;
        Lattice::new(self.model.dim, i.half_width, i.points)?;
        if !(i.radius > 0.0 && i.radius <= i.half_width) {
            return Err(CliError::Invalid(format!("interaction.radius {} must lie in (0, {}]", i.radius, i.half_width)));
        }
        if !(i.varpi_scale > 0.0 && i.varpi_prime > 0.0 && i.h > 0.0 && i.h1 > 0.0 && i.h2 > 0.0 && i.reference_n > 0) {
            return Err(CliError::Invalid("interaction thresholds and bandwidths must be > 0".into()));
        }
        Ok(())
    }

    /// Closed-form oracle, available for the mean-field OU model with a
    /// Gaussian initial law.
    pub fn oracle(&self) -> Option<MeanFieldOu> {
        match (&self.model.kind, &self.model.init) {
            (ModelKind::MeanFieldOu { theta, lambda }, InitSpec::Gaussian { mean, var }) => {
                MeanFieldOu::new(*theta, *lambda, self.model.sigma, mean[0], var[0]).ok()
            }
            _ => None,
        }
    }

    /// Drift, diffusion and initial law from the registry keys.
    pub fn build_model(&self) -> Result<(DriftModel, DiffusionModel, InitialLaw)> {
        let m = &self.model;
        let dim = m.dim;
        let drift = match &m.kind {
            ModelKind::MeanFieldOu { theta, lambda } => {
                MeanFieldOu::new(*theta, *lambda, m.sigma, 0.0, 0.0)?.drift_model()
            }
            ModelKind::Vlasov { confinement, interaction } => {
                let k = *confinement;
                match interaction {
                    Interaction::Bump { strength, radius } if dim == 1 => {
                        DriftModel::vlasov_polynomial(linear_confinement(k), PolynomialForce::bump(*strength, *radius))?
                    }
                    Interaction::Bump { strength, radius } => {
                        DriftModel::vlasov(dim, linear_confinement(k), mckean::model::bump_interaction(*strength, *radius), *radius)?
                    }
                    // a zero polynomial keeps the Vlasov force path in one dimension
                    Interaction::None if dim == 1 => {
                        DriftModel::vlasov_polynomial(linear_confinement(k), PolynomialForce { coeffs: vec![0.0], radius: 1.0 })?
                    }
                    Interaction::None => DriftModel::GeneralLipschitz {
                        dim,
                        drift: Arc::new(move |_, x, _, out| {
                            for (o, v) in out.iter_mut().zip(x) {
                                *o = -k * v;
                            }
                        }),
                        lipschitz: Some(k.abs()),
                    },
                    // grad W * mu = s (x - mean(mu)), linear in the cloud mean
                    Interaction::Quadratic { strength } => {
                        let s = *strength;
                        DriftModel::GeneralLipschitz {
                            dim,
                            drift: Arc::new(move |_, x, cloud, out| {
                                let mean = cloud.mean();
                                for c in 0..out.len() {
                                    out[c] = -k * x[c] - s * (x[c] - mean[c]);
                                }
                            }),
                            lipschitz: Some(k.abs() + s.abs()),
                        }
                    }
                }
            }
        };
        let diffusion = DiffusionModel::constant(m.sigma)?;
        let init = match &m.init {
            InitSpec::Gaussian { mean, var } => InitialLaw::gaussian(mean.clone(), var.clone())?,
            InitSpec::Point(p) => InitialLaw::PointMass(p.clone()),
            InitSpec::File(p) => InitialLaw::from_file(p)?,
        };
        if init.dim() != dim {
            return Err(CliError::Invalid(format!("initial law has dimension {}, model has {dim}", init.dim())));
        }
        Ok((drift, diffusion, init))
    }

    pub fn sim_config(&self, drift: &DriftModel, n: usize, seed: u64) -> Result<SimConfig> {
        let force = match (self.sim.force, drift) {
            (ForceChoice::Naive, _) => ForceEval::NaivePairwise,
            (ForceChoice::Sorted, _) => ForceEval::SortedMoments,
            (ForceChoice::Auto, DriftModel::VlasovPair { polynomial: Some(_), .. }) => ForceEval::SortedMoments,
            (ForceChoice::Auto | ForceChoice::Cells, DriftModel::VlasovPair { support_radius, .. }) if support_radius.is_finite() => {
                ForceEval::CellList { radius: *support_radius }
            }
            (ForceChoice::Cells, _) => {
                return Err(CliError::Invalid("cell lists need a compactly supported Vlasov interaction".into()))
            }
            (ForceChoice::Auto, _) => ForceEval::NaivePairwise,
        };
        let cfg = SimConfig::new(n, self.time_grid()?, seed).with_force_eval(force);
        cfg.validate(drift)?;
        Ok(cfg)
    }
}
