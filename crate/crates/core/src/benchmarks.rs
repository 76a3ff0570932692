//! Experiment definitions: which system, cost, warp, keyframes and learner
//! settings make up a run. Specs are plain data and serialize to the JSON
//! config format read by the `kfioc` binary.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::learner::{project, random_theta0, Keyframe, KeyframeSet, LearnConfig, LearnProblem};
use crate::models::{
    ArmDynamics, CostModel, DistToObstacleCost, DynamicsModel, LinearDynamics, NeuralCost,
    QuadDynamics, QuadGoalCost, QuadPolynomialCost, StateSelector, TaskMap, ThetaParams,
    WeightedFeatureCost,
};
use crate::ocsolver::{solve_oc, OcProblem, SolverConfig};
use crate::oracle::{TimingCase, TimingConfig};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    Arm,
    Quadrotor,
    Lti,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostId {
    WeightedFeatures,
    Polynomial,
    Neural,
    DistToObstacle,
}

/// `ẋ = A x + B u` for the `lti` system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtiSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyframeSource {
    Inline { frames: Vec<Keyframe> },
    /// Sampled from the optimal trajectory at `theta = [p; β]`.
    Generate { theta: Vec<f64>, times: Vec<f64> },
}

/// Uniform jitter of keyframe times, `τ_i + U[−half_width, half_width]`,
/// clipped into `(0, T]` and re-sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeJitter {
    pub half_width: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemId,
    pub cost: CostId,
    pub warp_degree: usize,
    pub horizon: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
    /// Goal state (arm, lti) or goal position (quadrotor).
    #[serde(default)]
    pub goal: Option<Vec<f64>>,
    #[serde(default)]
    pub control_weight: Option<f64>,
    #[serde(default)]
    pub neural_width: Option<usize>,
    #[serde(default)]
    pub obstacles: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub lti: Option<LtiSpec>,
    /// State coordinates observed by the keyframes; system default if absent.
    #[serde(default)]
    pub outputs: Option<Vec<usize>>,
    pub keyframes: KeyframeSource,
    #[serde(default)]
    pub keyframe_subset: Option<Vec<usize>>,
    #[serde(default)]
    pub time_jitter: Option<TimeJitter>,
    /// Flat `[p; β]`; drawn from the seed when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Reference parameters for error curves, when known.
    #[serde(default)]
    pub theta_true: Option<Vec<f64>>,
    pub learn: LearnConfig,
    pub seed: u64,
}

/// Reference joint-angle keyframes of the arm at `θ = [3, 3, 3, 3 | 5]`,
/// `T = 1`. This solver does not reproduce them at that `θ` (its `q(0.1)` is
/// about `[-2.335, 1.754]`); `arm_generated_*` samples its own trajectory
/// at the same times instead.
pub const ARM_KEYFRAMES: [(f64, [f64; 2]); 8] = [
    (0.1, [-2.587, 2.216]),
    (0.2, [-1.776, 1.518]),
    (0.3, [-0.888, 0.853]),
    (0.4, [-0.172, 0.454]),
    (0.5, [0.385, 0.242]),
    (0.6, [0.806, 0.135]),
    (0.8, [1.327, 0.06]),
    (0.9, [1.478, 0.049]),
];

pub const ARM_THETA_TRUE: [f64; 5] = [3.0, 3.0, 3.0, 3.0, 5.0];

/// Offset applied to every arm keyframe for the non-optimal study.
pub const ARM_KEYFRAME_BIAS: [f64; 2] = [-0.3, -0.3];

/// Position keyframes near the two gates, `T = 1`.
pub const QUAD_KEYFRAMES: [(f64, [f64; 3]); 5] = [
    (0.1, [-4.0, -6.0, 3.0]),
    (0.2, [1.0, -6.0, 3.0]),
    (0.4, [1.0, -1.0, 4.0]),
    (0.6, [-1.0, 1.0, 5.0]),
    (0.8, [2.0, 3.0, 4.0]),
];

pub const ARM_STEPS: usize = 300;
pub const QUAD_STEPS: usize = 200;

pub fn arm_x0() -> Vec<f64> {
    vec![-FRAC_PI_2, 3.0 * PI / 4.0, -5.0, 3.0]
}

pub fn arm_goal() -> Vec<f64> {
    vec![FRAC_PI_2, 0.0, 0.0, 0.0]
}

/// Initial state used for arm generalization replays.
pub fn arm_replay_x0() -> Vec<f64> {
    vec![-FRAC_PI_4, 0.0, 0.0, 0.0]
}

pub fn quad_x0() -> Vec<f64> {
    vec![-8.0, -8.0, 5.0, 15.0, 5.0, -10.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
}

fn arm_table_frames(bias: [f64; 2]) -> Vec<Keyframe> {
    ARM_KEYFRAMES
        .iter()
        .map(|(tau, y)| Keyframe { tau: *tau, y: vec![y[0] + bias[0], y[1] + bias[1]] })
        .collect()
}

fn arm_spec(name: &str) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        system: SystemId::Arm,
        cost: CostId::WeightedFeatures,
        warp_degree: 1,
        horizon: 1.0,
        steps: ARM_STEPS,
        x0: arm_x0(),
        goal: Some(arm_goal()),
        control_weight: Some(0.5),
        neural_width: None,
        obstacles: None,
        lti: None,
        outputs: None,
        keyframes: KeyframeSource::Inline { frames: arm_table_frames([0.0, 0.0]) },
        keyframe_subset: None,
        time_jitter: None,
        theta0: None,
        theta_true: Some(ARM_THETA_TRUE.to_vec()),
        learn: LearnConfig { learning_rate: 0.3, max_iter: 1000, ..LearnConfig::default() },
        seed: 0,
    }
}

fn quad_spec(name: &str) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        system: SystemId::Quadrotor,
        cost: CostId::Polynomial,
        warp_degree: 1,
        horizon: 1.0,
        steps: QUAD_STEPS,
        x0: quad_x0(),
        goal: Some(vec![8.0, 8.0, 0.0]),
        control_weight: Some(0.1),
        neural_width: None,
        obstacles: None,
        lti: None,
        outputs: None,
        keyframes: KeyframeSource::Inline {
            frames: QUAD_KEYFRAMES.iter().map(|(tau, y)| Keyframe { tau: *tau, y: y.to_vec() }).collect(),
        },
        keyframe_subset: None,
        time_jitter: None,
        theta0: None,
        theta_true: None,
        learn: LearnConfig {
            learning_rate: 1e-2,
            max_iter: 150,
            solver: SolverConfig { max_iter: 60, ..SolverConfig::default() },
            ..LearnConfig::default()
        },
        seed: 0,
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 14] = [
    "arm_recovery_n8",
    "arm_recovery_n4",
    "arm_recovery_n3",
    "arm_generated_n8",
    "arm_generated_n3",
    "arm_nonoptimal",
    "arm_warp_degree_1",
    "arm_warp_degree_2",
    "arm_warp_degree_3",
    "arm_warp_degree_4",
    "arm_neural",
    "quad_gates_n5",
    "quad_gates_n5_random_tau",
    "quad_obstacle",
];

pub fn builtin(name: &str) -> Result<ExperimentSpec> {
    let spec = match name {
        "arm_recovery_n8" => arm_spec(name),
        "arm_recovery_n4" => ExperimentSpec { keyframe_subset: Some(vec![0, 2, 4, 6]), ..arm_spec(name) },
        "arm_recovery_n3" => ExperimentSpec { keyframe_subset: Some(vec![0, 3, 6]), ..arm_spec(name) },
        "arm_generated_n8" | "arm_generated_n3" => ExperimentSpec {
            keyframes: KeyframeSource::Generate {
                theta: ARM_THETA_TRUE.to_vec(),
                times: ARM_KEYFRAMES.iter().map(|(tau, _)| *tau).collect(),
            },
            keyframe_subset: name.ends_with("n3").then(|| vec![0, 1, 2]),
            ..arm_spec(name)
        },
        "arm_nonoptimal" | "arm_warp_degree_1" | "arm_warp_degree_2" | "arm_warp_degree_3" | "arm_warp_degree_4" => {
            let degree = name.strip_prefix("arm_warp_degree_").map_or(1, |d| d.parse().unwrap());
            ExperimentSpec {
                warp_degree: degree,
                theta_true: None,
                keyframes: KeyframeSource::Inline { frames: arm_table_frames(ARM_KEYFRAME_BIAS) },
                ..arm_spec(name)
            }
        }
        "arm_neural" => ExperimentSpec {
            cost: CostId::Neural,
            neural_width: Some(8),
            theta_true: None,
            ..arm_spec(name)
        },
        "quad_gates_n5" => quad_spec(name),
        "quad_gates_n5_random_tau" => ExperimentSpec {
            time_jitter: Some(TimeJitter { half_width: 0.05 }),
            ..quad_spec(name)
        },
        "quad_obstacle" => ExperimentSpec {
            cost: CostId::DistToObstacle,
            obstacles: Some(DistToObstacleCost::default_obstacles().iter().map(|o| [o.x, o.y, o.z]).collect()),
            ..quad_spec(name)
        },
        _ => return Err(Error::UnknownExperiment(name.to_string())),
    };
    Ok(spec)
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::config(field, "expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        let (n, _) = self.dims()?;
        if self.x0.len() != n {
            return Err(Error::config("x0", format!("expected {n} entries, got {}", self.x0.len())));
        }
        match (self.system, self.cost) {
            (SystemId::Quadrotor, CostId::Polynomial | CostId::DistToObstacle | CostId::Neural) => {}
            (SystemId::Arm | SystemId::Lti, CostId::WeightedFeatures | CostId::Neural) => {}
            (system, cost) => {
                return Err(Error::config("cost", format!("{cost:?} is not available for {system:?}")));
            }
        }
        if let Some(goal) = &self.goal {
            let want = if self.system == SystemId::Quadrotor { 3 } else { n };
            if goal.len() != want {
                return Err(Error::config("goal", format!("expected {want} entries, got {}", goal.len())));
            }
        }
        if self.cost == CostId::Neural && self.neural_width == Some(0) {
            return Err(Error::config("neural_width", "must be at least 1"));
        }
        if let Some(outputs) = &self.outputs {
            if outputs.is_empty() || outputs.iter().any(|&i| i >= n) {
                return Err(Error::config("outputs", format!("indices must lie in 0..{n}")));
            }
        }
        let o = self.output_indices().len();
        let times = match &self.keyframes {
            KeyframeSource::Inline { frames } => {
                if frames.iter().any(|f| f.y.len() != o) {
                    return Err(Error::config("keyframes.frames", format!("every keyframe needs {o} outputs")));
                }
                frames.iter().map(|f| f.tau).collect::<Vec<_>>()
            }
            KeyframeSource::Generate { theta, times } => {
                if theta.len() != self.theta_dim()? {
                    return Err(Error::config("keyframes.theta", format!("expected {} entries", self.theta_dim()?)));
                }
                times.clone()
            }
        };
        if times.is_empty() {
            return Err(Error::config("keyframes", "at least one keyframe is required"));
        }
        if times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::config("keyframes", "keyframe times must lie in [0, horizon]"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("keyframes", "keyframe times must be strictly increasing"));
        }
        if let Some(subset) = &self.keyframe_subset {
            if subset.is_empty() || subset.iter().any(|&i| i >= times.len()) || subset.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("keyframe_subset", "indices must be increasing and within the keyframe list"));
            }
        }
        if let Some(j) = &self.time_jitter {
            if !(j.half_width >= 0.0 && j.half_width.is_finite()) {
                return Err(Error::config("time_jitter.half_width", "must be non-negative"));
            }
        }
        for (field, value) in [("theta0", &self.theta0), ("theta_true", &self.theta_true)] {
            if let Some(v) = value {
                if v.len() != self.theta_dim()? {
                    return Err(Error::config(field, format!("expected {} entries, got {}", self.theta_dim()?, v.len())));
                }
            }
        }
        self.learn.validate()?;
        Ok(())
    }

    fn dims(&self) -> Result<(usize, usize)> {
        match self.system {
            SystemId::Arm => Ok((4, 2)),
            SystemId::Quadrotor => Ok((13, 4)),
            SystemId::Lti => {
                let lti = self.lti.as_ref().ok_or_else(|| Error::config("lti", "required for the lti system"))?;
                let a = matrix(&lti.a, "lti.a")?;
                let b = matrix(&lti.b, "lti.b")?;
                if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
                    return Err(Error::config("lti", "A must be n×n and B must be n×m"));
                }
                Ok((a.nrows(), b.ncols()))
            }
        }
    }

    pub fn output_indices(&self) -> Vec<usize> {
        if let Some(o) = &self.outputs {
            return o.clone();
        }
        match self.system {
            SystemId::Arm => vec![0, 1],
            SystemId::Quadrotor => vec![0, 1, 2],
            SystemId::Lti => (0..self.x0.len()).collect(),
        }
    }

    /// `r`, the number of cost parameters.
    pub fn cost_dim(&self) -> Result<usize> {
        Ok(self.cost_model()?.param_dim())
    }

    pub fn theta_dim(&self) -> Result<usize> {
        Ok(self.cost_dim()? + self.warp_degree)
    }

    fn cost_model(&self) -> Result<Arc<dyn CostModel>> {
        let (n, _) = self.dims()?;
        let weight = self.control_weight;
        let quad_terminal = || {
            let mut t = QuadGoalCost::default();
            if let Some(g) = &self.goal {
                t.goal_position = Vector3::new(g[0], g[1], g[2]);
            }
            t
        };
        let cost: Arc<dyn CostModel> = match self.cost {
            CostId::WeightedFeatures => {
                let goal = self.goal.clone().unwrap_or_else(|| vec![0.0; n]);
                Arc::new(WeightedFeatureCost::new(DVector::from_vec(goal), weight.unwrap_or(0.5)))
            }
            CostId::Neural => {
                let mut c = NeuralCost::new(n, self.neural_width.unwrap_or(8));
                if let Some(w) = weight {
                    c.control_weight = w;
                }
                Arc::new(c)
            }
            CostId::Polynomial => Arc::new(QuadPolynomialCost {
                control_weight: weight.unwrap_or(0.1),
                terminal: quad_terminal(),
            }),
            CostId::DistToObstacle => {
                let obstacles = match &self.obstacles {
                    Some(o) => o.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
                    None => DistToObstacleCost::default_obstacles(),
                };
                let mut c = DistToObstacleCost::new(obstacles);
                c.control_weight = weight.unwrap_or(0.1);
                c.terminal = quad_terminal();
                Arc::new(c)
            }
        };
        Ok(cost)
    }

    fn dynamics_model(&self) -> Result<Arc<dyn DynamicsModel>> {
        Ok(match self.system {
            SystemId::Arm => Arc::new(ArmDynamics::default()),
            SystemId::Quadrotor => Arc::new(QuadDynamics::default()),
            SystemId::Lti => {
                let lti = self.lti.as_ref().ok_or_else(|| Error::config("lti", "required for the lti system"))?;
                Arc::new(LinearDynamics::new(matrix(&lti.a, "lti.a")?, matrix(&lti.b, "lti.b")?))
            }
        })
    }

    /// Optimal control problem at the spec's `x0` and horizon.
    pub fn oc_problem(&self) -> Result<OcProblem> {
        OcProblem::new(
            self.dynamics_model()?,
            self.cost_model()?,
            DVector::from_column_slice(&self.x0),
            self.horizon,
            self.steps,
        )
    }

    pub fn task_map(&self) -> Result<Arc<dyn TaskMap>> {
        let (n, m) = self.dims()?;
        Ok(Arc::new(StateSelector::new(self.output_indices(), n, m)))
    }

    pub fn learn_problem(&self) -> Result<LearnProblem> {
        Ok(LearnProblem { oc: self.oc_problem()?, task: self.task_map()? })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// The keyframes used for learning, after generation, subsetting and
    /// time jitter.
    pub fn keyframe_set(&self) -> Result<KeyframeSet> {
        let mut set = match &self.keyframes {
            KeyframeSource::Inline { frames } => KeyframeSet::new(self.horizon, frames.clone())?,
            KeyframeSource::Generate { theta, .. } => {
                let r = self.cost_dim()?;
                generate_keyframes(self, &ThetaParams::from_slice(theta, r))?
            }
        };
        if let Some(subset) = &self.keyframe_subset {
            set = set.subset(subset)?;
        }
        if let Some(jitter) = &self.time_jitter {
            let mut rng = self.rng(1);
            let min_gap = self.horizon / self.steps as f64;
            for f in set.frames.iter_mut() {
                let d = rng.gen_range(-1.0..=1.0) * jitter.half_width;
                f.tau = (f.tau + d).clamp(min_gap, self.horizon);
            }
            set.frames.sort_by(|a, b| a.tau.total_cmp(&b.tau));
            for i in 1..set.frames.len() {
                if set.frames[i].tau <= set.frames[i - 1].tau {
                    set.frames[i].tau = (set.frames[i - 1].tau + min_gap).min(self.horizon);
                }
            }
            set.validate()?;
        }
        Ok(set)
    }

    /// Initial guess: the configured `theta0`, or `p ~ U[0,1]^r` with `β`
    /// all ones, projected onto the admissible set.
    pub fn initial_theta(&self) -> Result<ThetaParams> {
        let r = self.cost_dim()?;
        let theta = match &self.theta0 {
            Some(v) => ThetaParams::from_slice(v, r),
            None => random_theta0(r, self.warp_degree, &mut self.rng(0)),
        };
        project(&theta, None, self.horizon, &self.learn)
    }

    pub fn true_theta(&self) -> Result<Option<ThetaParams>> {
        let r = self.cost_dim()?;
        Ok(self.theta_true.as_ref().map(|v| ThetaParams::from_slice(v, r)))
    }
}

/// Solves the spec's control problem at `theta_star` and samples the task
/// output at the spec's keyframe times.
pub fn generate_keyframes(spec: &ExperimentSpec, theta_star: &ThetaParams) -> Result<KeyframeSet> {
    let times = match &spec.keyframes {
        KeyframeSource::Inline { frames } => frames.iter().map(|f| f.tau).collect(),
        KeyframeSource::Generate { times, .. } => times.clone(),
    };
    let problem = spec.learn_problem()?;
    let traj = solve_oc(&problem.oc, theta_star, &spec.learn.solver, None)?;
    let frames = times
        .into_iter()
        .map(|tau| {
            let x = traj.state_at(tau)?;
            let u = traj.control_at(tau)?;
            Ok(Keyframe { tau, y: problem.task.eval(&x, &u).as_slice().to_vec() })
        })
        .collect::<Result<Vec<_>>>()?;
    KeyframeSet::new(spec.horizon, frames)
}

/// Gradient timing study: one loss gradient by the Riccati route and by
/// central differences, over parameter dimensions and grid sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub schema_version: u32,
    pub name: String,
    /// Builtin experiment supplying system, keyframes and solver settings.
    pub base: String,
    /// `dim θ` per row. For a neural base each entry sets the hidden width
    /// to `dim / (n + 1)`; otherwise it must equal the base dimension.
    pub dims: Vec<usize>,
    pub horizons: Vec<usize>,
    pub timing: TimingConfig,
    pub seed: u64,
}

pub const BENCH_NAMES: [&str; 1] = ["arm_neural_timing"];

pub fn builtin_bench(name: &str) -> Result<BenchSpec> {
    match name {
        "arm_neural_timing" => Ok(BenchSpec {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            base: "arm_neural".to_string(),
            dims: vec![5, 20, 40],
            horizons: vec![100, 200, 400],
            timing: TimingConfig::default(),
            seed: 0,
        }),
        _ => Err(Error::UnknownExperiment(name.to_string())),
    }
}

impl BenchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.dims.is_empty() {
            return Err(Error::config("dims", "at least one dimension is required"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::config("horizons", "need at least one positive step count"));
        }
        self.timing.fd.validate()?;
        for &dim in &self.dims {
            self.experiment(dim, self.horizons[0])?;
        }
        Ok(())
    }

    /// The base experiment resized to `dim` parameters on `steps` intervals,
    /// with the identity warp.
    pub fn experiment(&self, dim: usize, steps: usize) -> Result<ExperimentSpec> {
        let mut spec = builtin(&self.base).map_err(|_| Error::config("base", format!("unknown experiment '{}'", self.base)))?;
        spec.warp_degree = 0;
        spec.steps = steps;
        spec.theta0 = None;
        spec.theta_true = None;
        spec.learn.solver = self.timing.solver.clone();
        if spec.cost == CostId::Neural {
            let per_unit = spec.x0.len() + 1;
            if dim == 0 || dim % per_unit != 0 {
                return Err(Error::config("dims", format!("{dim} is not a multiple of {per_unit}")));
            }
            spec.neural_width = Some(dim / per_unit);
        }
        if spec.theta_dim()? != dim {
            return Err(Error::config("dims", format!("{} has {} parameters, not {dim}", self.base, spec.theta_dim()?)));
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Problem, keyframes and a seeded `θ` with `p ~ U[-0.5, 0.5]`.
    pub fn case(&self, dim: usize, steps: usize) -> Result<TimingCase> {
        let spec = self.experiment(dim, steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(dim as u64);
        let p = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Ok(TimingCase {
            problem: spec.learn_problem()?,
            keyframes: spec.keyframe_set()?,
            theta: ThetaParams::new(p, vec![]),
        })
    }
}
