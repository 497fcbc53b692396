//! Batch front end: configuration, orchestration and deterministic outputs.
//!
//! Every subcommand reads an optional JSON config (unknown keys rejected),
//! applies command-line overrides, validates, runs, and writes CSV/JSON files
//! into the output directory. Each file starts with a header carrying the
//! artifact version and the SHA-256 of the resolved config.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::mesh::PeriodicMesh;
use crate::metric::{MetricField, MetricFieldJson, MetricPath, SmoothSym3, Sym3};
use crate::oracle::{central_difference, FourierOracle};
use crate::perturbation::{closed_derivative, coclosed_derivative, default_a_grid, sah2_span_test};
use crate::quadrature::Quadrature;
use crate::solver::{closed_spectrum, coclosed_spectrum, Backend, Discretization, SolverOptions, Window};
use crate::sphere3::{crossing_derivatives, pointwise_identities_check, SphereQuadrature};
use crate::teytel::{
    codim2_slice_scan, default_shift, defining_function, eigen, isolating_radius, spectral_projector, Contour,
    OperatorFamily, Preset, Slice,
};
use crate::tracking::{
    closed_coclosed_experiment, conformal_path, forced_crossing_experiment, stretch_path, uniform_grid,
    unexplained_order_changes, ForcedCrossingOptions, Localization, TrackOptions, Tracker, Which,
};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "beltrami", version, about = "Beltrami and Hodge-Laplacian spectra along metric families")]
pub struct Cli {
    /// JSON experiment config; command-line values override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random metrics and solver start vectors.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; affects speed only.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coclosed and closed spectrum of the mesh discretization.
    Spectrum(MeshArgs),
    /// Plane-wave spectrum for a constant metric, optionally against the mesh.
    Oracle(OracleArgs),
    /// Eigenvalue derivatives against finite differences.
    Perturb(MeshArgs),
    /// Span test on a degenerate plane-wave cluster.
    Sah2(Sah2Args),
    /// Crossing certificate for the Hopf fields on the round 3-sphere.
    Sphere3,
    /// Spectral projector and defining function demos on a preset family.
    Teytel(TeytelArgs),
    /// Eigenvalue branch tracking and crossing detection along a path.
    Track(TrackArgs),
}

impl Command {
    fn name(&self) -> SubcommandName {
        match self {
            Command::Spectrum(_) => SubcommandName::Spectrum,
            Command::Oracle(_) => SubcommandName::Oracle,
            Command::Perturb(_) => SubcommandName::Perturb,
            Command::Sah2(_) => SubcommandName::Sah2,
            Command::Sphere3 => SubcommandName::Sphere3,
            Command::Teytel(_) => SubcommandName::Teytel,
            Command::Track(_) => SubcommandName::Track,
        }
    }
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Cells per side of the periodic mesh.
    #[arg(long, allow_negative_numbers = true)]
    pub n: Option<i64>,
    /// `I`, `diag:a,b,c`, six components `xx,xy,xz,yy,yz,zz`,
    /// `random:amplitude,modes`, or `@file.json`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Number of eigenvalues to report.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Metric spec, as for `spectrum --metric`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Wavevector truncation `|k|_∞ ≤ K`.
    #[arg(long = "K", alias = "truncation")]
    pub truncation: Option<usize>,
    /// Mesh resolution to compare the smallest values against.
    #[arg(long, allow_negative_numbers = true)]
    pub compare: Option<i64>,
    /// Number of eigenvalues to report.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Sah2Args {
    /// Metric spec, as for `spectrum --metric`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Eigenvalue of the cluster to test.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TeytelArgs {
    /// Family preset id.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Cells per side of the periodic mesh.
    #[arg(long, allow_negative_numbers = true)]
    pub n: Option<i64>,
    /// Metric spec, as for `spectrum --metric`.
    #[arg(long)]
    pub metric: Option<String>,
    /// `stretch`, `conformal`, `random` or `forced`.
    #[arg(long)]
    pub path: Option<String>,
    /// Number of eigenvalues to report.
    #[arg(long)]
    pub window: Option<usize>,
    /// Number of grid samples on [0, 1].
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubcommandName {
    Spectrum,
    Oracle,
    Perturb,
    Sah2,
    Sphere3,
    Teytel,
    Track,
}

/// A metric given by name, components, a random trigonometric field, or a
/// sampled field inline or on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MetricSpec {
    Identity {},
    Diagonal { values: [f64; 3] },
    Constant { components: [f64; 6] },
    /// Seed defaults to the run seed.
    Random {
        amplitude: f64,
        modes: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    File { path: PathBuf },
    Inline { field: MetricFieldJson },
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec::Identity {}
    }
}

impl MetricSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let numbers = |body: &str| -> Result<Vec<f64>> {
            body.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| invalid(format!("metric `{s}`: {e}"))))
                .collect()
        };
        if s == "I" || s == "identity" {
            return Ok(MetricSpec::Identity {});
        }
        if let Some(file) = s.strip_prefix('@') {
            return Ok(MetricSpec::File { path: file.into() });
        }
        if let Some(body) = s.strip_prefix("diag:") {
            let v = numbers(body)?;
            let values: [f64; 3] = v.try_into().map_err(|_| invalid(format!("metric `{s}` needs 3 values")))?;
            return Ok(MetricSpec::Diagonal { values });
        }
        if let Some(body) = s.strip_prefix("random:") {
            let v = numbers(body)?;
            if v.len() != 2 || v[1] < 1.0 || v[1].fract() != 0.0 {
                return Err(invalid(format!("metric `{s}` needs `random:amplitude,modes`")));
            }
            return Ok(MetricSpec::Random {
                amplitude: v[0],
                modes: v[1] as usize,
                seed: None,
            });
        }
        let v = numbers(s)?;
        let components: [f64; 6] = v
            .try_into()
            .map_err(|_| invalid(format!("metric `{s}` is not I, diag:, random:, @file or six components")))?;
        Ok(MetricSpec::Constant { components })
    }

    /// The metric as a constant matrix, if it is one.
    pub fn constant(&self) -> Option<Sym3> {
        match self {
            MetricSpec::Identity {} => Some(Sym3::identity()),
            MetricSpec::Diagonal { values: [a, b, c] } => Some(Sym3::diag(*a, *b, *c)),
            MetricSpec::Constant { components } => Some(Sym3(*components)),
            _ => None,
        }
    }

    pub fn field(&self, mesh: &PeriodicMesh, seed: u64) -> Result<MetricField> {
        if let Some(g) = self.constant() {
            return mesh.constant_metric(g);
        }
        let g = match self {
            MetricSpec::Random { amplitude, modes, seed: own } => {
                mesh.sample_metric(&SmoothSym3::random_metric(*amplitude, *modes, own.unwrap_or(seed)))?
            }
            MetricSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("cannot read metric file {}: {e}", path.display())))?;
                let j: MetricFieldJson =
                    serde_json::from_str(&text).map_err(|e| invalid(format!("metric file {}: {e}", path.display())))?;
                MetricField::from_json(&j)?
            }
            MetricSpec::Inline { field } => MetricField::from_json(field)?,
            _ => unreachable!("constant metrics handled above"),
        };
        let expected = mesh.quadrature().len();
        if g.len() != expected {
            return Err(Error::GridMismatch {
                left: g.len(),
                right: expected,
            });
        }
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = self.constant() {
            if !(g.min_cholesky_pivot() > 0.0) {
                return Err(invalid("metric is not positive definite".into()));
            }
        }
        if let MetricSpec::Random { amplitude, modes, .. } = self {
            if !(amplitude.is_finite() && *amplitude >= 0.0) || *modes == 0 {
                return Err(invalid("random metric needs amplitude >= 0 and modes >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PathSpec {
    /// `diag(1, 1, (1 + t)²)`: closed/coclosed crossing experiment.
    Stretch {},
    /// `(1 + t)² g₀` with `g₀` the configured metric.
    Conformal {},
    /// Straight line between two metrics.
    Linear { from: MetricSpec, to: MetricSpec },
    /// Straight line between two random metrics seeded from the run seed.
    Random { amplitude: f64, modes: usize },
    /// Forced coclosed ± crossing around the configured metric.
    Forced {},
}

impl PathSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stretch" => Ok(PathSpec::Stretch {}),
            "conformal" => Ok(PathSpec::Conformal {}),
            "random" => Ok(PathSpec::Random {
                amplitude: 0.3,
                modes: 6,
            }),
            "forced" => Ok(PathSpec::Forced {}),
            _ => Err(invalid(format!("unknown path `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative gap below which eigenvalues form one cluster.
    pub cluster_gap: f64,
    /// Finite-difference step for derivative checks.
    pub fd_step: f64,
    /// Crossing tolerance relative to the window scale.
    pub crossing: f64,
    /// Avoided-crossing threshold relative to the window scale.
    pub near_miss: f64,
    /// Minimum overlap for a branch match.
    pub overlap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cluster_gap: 1e-6,
            fd_step: 1e-4,
            crossing: 1e-8,
            near_miss: 1e-2,
            overlap: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub truncation: usize,
    /// Mesh resolution for a comparison of the smallest values.
    pub compare: Option<i64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            truncation: 2,
            compare: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Direction field `h`; constant when given, random otherwise.
    pub direction: Option<[f64; 6]>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { direction: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sah2Config {
    pub lambda: f64,
    /// Quadrature points per side.
    pub points: usize,
    pub a_grid: Vec<f64>,
}

impl Default for Sah2Config {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            points: 6,
            a_grid: default_a_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sphere3Config {
    /// Gauss points in the polar angle.
    pub polar: usize,
    /// Uniform points per fibre angle.
    pub azimuthal: usize,
}

impl Default for Sphere3Config {
    fn default() -> Self {
        Self { polar: 16, azimuthal: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeytelConfig {
    pub preset: String,
    /// Base parameter; zeros when empty.
    pub base: Vec<f64>,
    /// Probe parameter for the defining function.
    pub probe: Vec<f64>,
    /// Index of the lower eigenvalue of the pair under study.
    pub pair: usize,
    pub slice_points: usize,
    pub slice_half_width: f64,
}

impl Default for TeytelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Conic.id().into(),
            base: Vec::new(),
            probe: vec![0.05, -0.03],
            pair: 0,
            slice_points: 21,
            slice_half_width: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub path: PathSpec,
    pub which: Which,
    pub grid: usize,
    pub localization: Localization,
    /// Bisection depth for failing segments.
    pub max_refinements: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            path: PathSpec::Stretch {},
            which: Which::Both,
            grid: 11,
            localization: Localization::Bisection,
            max_refinements: 3,
        }
    }
}

/// Resolved experiment configuration; its JSON form is what gets hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must name the subcommand being run.
    pub subcommand: Option<SubcommandName>,
    /// Cells per side of the periodic mesh.
    pub resolution: i64,
    pub metric: MetricSpec,
    /// Number of smallest eigenvalues per type.
    pub window: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Output directory; not part of the hash.
    pub out: Option<PathBuf>,
    pub oracle: OracleConfig,
    pub perturb: PerturbConfig,
    pub sah2: Sah2Config,
    pub sphere3: Sphere3Config,
    pub teytel: TeytelConfig,
    pub track: TrackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            resolution: 8,
            metric: MetricSpec::Identity {},
            window: 12,
            tolerances: Tolerances::default(),
            seed: 0,
            out: None,
            oracle: OracleConfig::default(),
            perturb: PerturbConfig::default(),
            sah2: Sah2Config::default(),
            sphere3: Sphere3Config::default(),
            teytel: TeytelConfig::default(),
            track: TrackConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn validate(&self, command: SubcommandName) -> Result<()> {
        if let Some(s) = self.subcommand {
            if s != command {
                return Err(invalid(format!("config is for `{s:?}`, not `{command:?}`").to_lowercase()));
            }
        }
        if self.resolution < 2 {
            return Err(invalid(format!("resolution must be at least 2, got {}", self.resolution)));
        }
        if self.window == 0 {
            return Err(invalid("window must be positive".into()));
        }
        self.metric.validate()?;
        let t = &self.tolerances;
        for (name, v) in [
            ("cluster_gap", t.cluster_gap),
            ("fd_step", t.fd_step),
            ("crossing", t.crossing),
            ("near_miss", t.near_miss),
            ("overlap", t.overlap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("tolerance `{name}` must be positive")));
            }
        }
        if t.overlap >= 1.0 {
            return Err(invalid("overlap threshold must be below 1".into()));
        }
        if self.oracle.truncation == 0 {
            return Err(invalid("oracle truncation must be positive".into()));
        }
        if let Some(n) = self.oracle.compare {
            if n < 2 {
                return Err(invalid(format!("comparison resolution must be at least 2, got {n}")));
            }
        }
        if self.sah2.points < 2 || self.sah2.a_grid.is_empty() {
            return Err(invalid("sah2 needs at least 2 points per side and a nonempty a grid".into()));
        }
        if self.sphere3.polar < 2 || self.sphere3.azimuthal < 2 {
            return Err(invalid("sphere3 quadrature needs at least 2 points per direction".into()));
        }
        let ty = &self.teytel;
        let preset = Preset::from_id(&ty.preset)?;
        let params = preset.family().params();
        for (name, q) in [("base", &ty.base), ("probe", &ty.probe)] {
            if !q.is_empty() && q.len() != params {
                return Err(invalid(format!("teytel {name} has {} entries, family has {params} parameters", q.len())));
            }
        }
        if ty.slice_points < 3 || !(ty.slice_half_width > 0.0) {
            return Err(invalid("slice needs at least 3 points and a positive half width".into()));
        }
        if self.track.grid < 2 {
            return Err(invalid("track grid needs at least 2 samples".into()));
        }
        if let PathSpec::Linear { from, to } = &self.track.path {
            from.validate()?;
            to.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the config with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions {
            gap_tol: self.tolerances.cluster_gap,
            ..SolverOptions::default().with_seed(self.seed)
        }
    }

    fn mesh(&self) -> Result<PeriodicMesh> {
        PeriodicMesh::new(self.resolution as usize)
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

/// Whether an error stems from the input rather than a computation.
pub fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfig(_)
            | Error::InvalidResolution(_)
            | Error::NotPositiveDefinite { .. }
            | Error::GridMismatch { .. }
            | Error::ParameterOutOfRange(_)
            | Error::Json(_)
    )
}

pub fn exit_code(e: &Error) -> i32 {
    if is_validation(e) {
        EXIT_VALIDATION
    } else {
        EXIT_SOLVER
    }
}

/// One output file ready to be written.
#[derive(Clone, Debug)]
pub struct Output {
    pub name: String,
    pub contents: String,
}

struct Header {
    subcommand: SubcommandName,
    hash: String,
}

impl Header {
    fn json(&self, result: Value) -> Output {
        let doc = json!({
            "header": {
                "artifact": "beltrami",
                "version": VERSION,
                "subcommand": self.subcommand,
                "config_hash": self.hash,
            },
            "result": result,
        });
        let mut contents = serde_json::to_string_pretty(&doc).expect("json output");
        contents.push('\n');
        Output {
            name: format!("{}.json", name_of(self.subcommand)),
            contents,
        }
    }

    fn csv(&self, name: &str, body: &str) -> Output {
        Output {
            name: name.into(),
            contents: format!(
                "# artifact: beltrami\n# version: {VERSION}\n# subcommand: {}\n# config_hash: {}\n{body}",
                name_of(self.subcommand),
                self.hash
            ),
        }
    }
}

fn name_of(s: SubcommandName) -> &'static str {
    match s {
        SubcommandName::Spectrum => "spectrum",
        SubcommandName::Oracle => "oracle",
        SubcommandName::Perturb => "perturb",
        SubcommandName::Sah2 => "sah2",
        SubcommandName::Sphere3 => "sphere3",
        SubcommandName::Teytel => "teytel",
        SubcommandName::Track => "track",
    }
}

/// Loads the config file (if any) and applies command-line overrides.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = Some(o.clone());
    }
    let metric = |c: &mut ExperimentConfig, m: &Option<String>| -> Result<()> {
        if let Some(m) = m {
            c.metric = MetricSpec::parse(m)?;
        }
        Ok(())
    };
    match &cli.command {
        Command::Spectrum(a) | Command::Perturb(a) => {
            metric(&mut c, &a.metric)?;
            c.resolution = a.n.unwrap_or(c.resolution);
            c.window = a.window.unwrap_or(c.window);
        }
        Command::Oracle(a) => {
            metric(&mut c, &a.metric)?;
            c.oracle.truncation = a.truncation.unwrap_or(c.oracle.truncation);
            c.oracle.compare = a.compare.or(c.oracle.compare);
            c.window = a.window.unwrap_or(c.window);
        }
        Command::Sah2(a) => {
            metric(&mut c, &a.metric)?;
            c.sah2.lambda = a.lambda.unwrap_or(c.sah2.lambda);
        }
        Command::Sphere3 => {}
        Command::Teytel(a) => {
            if let Some(p) = &a.preset {
                c.teytel.preset = p.clone();
            }
        }
        Command::Track(a) => {
            metric(&mut c, &a.metric)?;
            c.resolution = a.n.unwrap_or(c.resolution);
            c.window = a.window.unwrap_or(c.window);
            c.track.grid = a.grid.unwrap_or(c.track.grid);
            if let Some(p) = &a.path {
                c.track.path = PathSpec::parse(p)?;
            }
        }
    }
    Ok(c)
}

/// Runs one validated experiment and returns the files it produces.
pub fn execute(command: SubcommandName, c: &ExperimentConfig) -> Result<Vec<Output>> {
    let header = Header {
        subcommand: command,
        hash: c.hash(),
    };
    match command {
        SubcommandName::Spectrum => spectrum(c, &header),
        SubcommandName::Oracle => oracle(c, &header),
        SubcommandName::Perturb => perturb(c, &header),
        SubcommandName::Sah2 => sah2(c, &header),
        SubcommandName::Sphere3 => sphere3(c, &header),
        SubcommandName::Teytel => teytel(c, &header),
        SubcommandName::Track => track(c, &header),
    }
}

fn spectrum(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let mesh = c.mesh()?;
    let g = c.metric.field(&mesh, c.seed)?;
    let disc = Discretization::new(&mesh, &g)?;
    let opts = c.solver();
    let co = coclosed_spectrum(&disc, Window::Count(c.window), &opts)?;
    let cl = closed_spectrum(&disc, c.window, &opts)?;
    let mut csv = String::from("type,index,value,sign,residual,cluster_id\n");
    for (i, p) in co.pairs.iter().enumerate() {
        let _ = writeln!(csv, "coclosed,{i},{:e},{},{:e},{}", p.lambda, p.sign(), p.residual, p.cluster_id);
    }
    for (i, p) in cl.pairs.iter().enumerate() {
        let _ = writeln!(csv, "closed,{i},{:e},0,{:e},{}", p.rho, p.residual, p.cluster_id);
    }
    let result = json!({
        "resolution": c.resolution,
        "backend": co.backend,
        "seed": co.seed,
        "coclosed": co.records(),
        "coclosed_clusters": co.clusters,
        "closed": cl.values(),
        "closed_clusters": cl.clusters,
        "edges": mesh.num_edges(),
    });
    Ok(vec![header.csv("spectrum.csv", &csv), header.json(result)])
}

fn oracle(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let g = c
        .metric
        .constant()
        .ok_or_else(|| invalid("the plane-wave oracle needs a constant metric".into()))?;
    let oracle = FourierOracle::new(g, c.oracle.truncation)?;
    let clusters = oracle.clusters();
    let mut csv = String::from("lambda,multiplicity,k_representatives\n");
    for cl in &clusters {
        let ks: Vec<String> = cl
            .k_representatives
            .iter()
            .map(|k| format!("{} {} {}", k[0], k[1], k[2]))
            .collect();
        let _ = writeln!(csv, "{:.17e},{},{}", cl.lambda, cl.multiplicity, ks.join(";"));
    }
    let mut result = json!({
        "truncation": c.oracle.truncation,
        "metric": g,
        "clusters": clusters,
        "closed_clusters": oracle.closed_clusters(),
    });
    if let Some(n) = c.oracle.compare {
        let mesh = PeriodicMesh::new(n as usize)?;
        let disc = Discretization::new(&mesh, &mesh.constant_metric(g)?)?;
        let opts = c.solver().values_only().with_backend(Backend::Auto);
        let mesh_values = coclosed_spectrum(&disc, Window::Count(c.window), &opts)?.values();
        let mut exact = oracle.eigenvalues();
        exact.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        let mut rows = Vec::new();
        let mut max_rel = 0.0f64;
        for &m in mesh_values.iter().take(c.window) {
            // nearest oracle value of the same sign
            let e = exact
                .iter()
                .copied()
                .filter(|e| e.signum() == m.signum())
                .min_by(|a, b| (a - m).abs().total_cmp(&(b - m).abs()))
                .unwrap_or(f64::NAN);
            let rel = (m - e).abs() / e.abs();
            max_rel = max_rel.max(rel);
            rows.push(json!({"mesh": m, "oracle": e, "rel_error": rel}));
        }
        result["comparison"] = json!({"resolution": n, "values": rows, "max_rel_error": max_rel});
    }
    Ok(vec![header.csv("oracle.csv", &csv), header.json(result)])
}

fn perturb(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let mesh = c.mesh()?;
    let g = c.metric.field(&mesh, c.seed)?;
    let (h, direction_id) = match c.perturb.direction {
        Some(d) => (mesh.constant_tensor(Sym3(d)), "constant".to_string()),
        None => {
            let seed = c.seed.wrapping_add(100);
            let field = SmoothSym3::random(Sym3::diag(0.2, -0.1, 0.3), 0.4, 6, seed);
            (mesh.sample_tensor(&field), format!("random:{seed}"))
        }
    };
    let opts = SolverOptions {
        polarization: 0.0,
        ..c.solver()
    };
    let disc = Discretization::new(&mesh, &g)?;
    let co = coclosed_spectrum(&disc, Window::Count(c.window), &opts)?;
    let cl = closed_spectrum(&disc, c.window, &opts)?;
    let delta = c.tolerances.fd_step;
    let at = |s: f64| -> Result<Discretization> { Discretization::new(&mesh, &g.perturbed(&h, s)?) };
    // the spectra at the four probe points are shared by all indices
    let probes = [-2.0, -1.0, 1.0, 2.0].map(|k| k * delta);
    let mut co_probe = Vec::new();
    let mut cl_probe = Vec::new();
    for s in probes {
        let d = at(s)?;
        co_probe.push(coclosed_spectrum(&d, Window::Count(c.window), &opts.clone().values_only())?.values());
        cl_probe.push(closed_spectrum(&d, c.window, &opts)?.values());
    }
    let fd = |values: &[Vec<f64>], i: usize| -> f64 {
        let v = |s: f64| {
            let k = probes.iter().position(|p| (p - s).abs() < 0.5 * delta).expect("probe point");
            values[k].get(i).copied().unwrap_or(f64::NAN)
        };
        central_difference(v, delta)
    };
    let mut records = Vec::new();
    let mut skipped = 0;
    for i in 0..co.pairs.len() {
        match coclosed_derivative(&disc, &co, i, &h) {
            Ok(d) => {
                let f = fd(&co_probe, i);
                records.push(record("coclosed", co.pairs[i].lambda, &direction_id, d, f));
            }
            Err(Error::DegenerateCluster(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    for i in 0..cl.pairs.len() {
        match closed_derivative(&disc, &cl, i, &h) {
            Ok(d) => {
                let f = fd(&cl_probe, i);
                records.push(record("closed", cl.pairs[i].rho, &direction_id, d, f));
            }
            Err(Error::DegenerateCluster(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let mut csv = String::from("type,lambda,direction_id,derivative,fd_value,rel_error\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{:e},{},{:e},{:e},{:e}",
            r["type"].as_str().unwrap_or_default(),
            r["lambda"].as_f64().unwrap_or(f64::NAN),
            direction_id,
            r["derivative"].as_f64().unwrap_or(f64::NAN),
            r["fd_value"].as_f64().unwrap_or(f64::NAN),
            r["rel_error"].as_f64().unwrap_or(f64::NAN),
        );
    }
    let max_rel = records
        .iter()
        .filter_map(|r| r["rel_error"].as_f64())
        .fold(0.0, f64::max);
    let result = json!({
        "resolution": c.resolution,
        "fd_step": delta,
        "records": records,
        "skipped_degenerate": skipped,
        "max_rel_error": max_rel,
    });
    Ok(vec![header.csv("perturb.csv", &csv), header.json(result)])
}

fn record(kind: &str, lambda: f64, direction_id: &str, derivative: f64, fd_value: f64) -> Value {
    let rel = (derivative - fd_value).abs() / derivative.abs().max(1e-2);
    json!({
        "type": kind,
        "lambda": lambda,
        "direction_id": direction_id,
        "derivative": derivative,
        "fd_value": fd_value,
        "rel_error": rel,
    })
}

fn sah2(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let g = c
        .metric
        .constant()
        .ok_or_else(|| invalid("the span test runs on plane-wave clusters of a constant metric".into()))?;
    let s = &c.sah2;
    let oracle = FourierOracle::new(g, c.oracle.truncation)?;
    let fields = oracle.cluster_fields(s.lambda, 1e-9);
    if fields.len() < 2 {
        return Err(invalid(format!(
            "eigenvalue {} has multiplicity {} under truncation {}",
            s.lambda,
            fields.len(),
            c.oracle.truncation
        )));
    }
    let quad = Quadrature::torus_grid(s.points, [2.0 * PI; 3]);
    let gf = MetricField::constant(crate::metric::Domain::standard_torus(), quad.len(), g)?;
    let sample = |i: usize| {
        crate::metric::OneFormField::from_samples(quad.points.iter().map(|x| fields[i].eval(x)).collect())
    };
    // first pair of fields with different wavevectors
    let second = (1..fields.len())
        .find(|&i| fields[i].mode.k != fields[0].mode.k)
        .unwrap_or(1);
    let report = sah2_span_test(&quad, &gf, s.lambda, &sample(0), &sample(second), &s.a_grid)?;
    let mut csv = String::from("a,det,relative\n");
    for d in &report.determinants {
        let _ = writeln!(csv, "{},{:e},{:e}", d.a, d.det, d.relative);
    }
    let result = json!({
        "lambda": s.lambda,
        "multiplicity": fields.len(),
        "pair": [fields[0].mode.k, fields[second].mode.k],
        "report": report,
    });
    Ok(vec![header.csv("sah2.csv", &csv), header.json(result)])
}

fn sphere3(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let quad = SphereQuadrature::gauss(c.sphere3.polar, c.sphere3.azimuthal);
    let cert = crossing_derivatives(&quad)?;
    let identities = pointwise_identities_check(&quad)?;
    let result = json!({
        "dmu": cert.dmu,
        "dnu": cert.dnu,
        "residual_alpha": cert.residual_alpha,
        "residual_beta": cert.residual_beta,
        "vol": cert.vol,
        "quadrature_residual": cert.quadrature_residual,
        "flagged": cert.flagged,
        "identities": identities,
    });
    Ok(vec![header.json(result)])
}

fn teytel(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let ty = &c.teytel;
    let preset = Preset::from_id(&ty.preset)?;
    let family = preset.family();
    let params = family.params();
    let base = if ty.base.is_empty() { vec![0.0; params] } else { ty.base.clone() };
    let probe = if ty.probe.is_empty() { base.clone() } else { ty.probe.clone() };
    let (values, _) = eigen(&family, &base);
    if ty.pair + 1 >= values.len() {
        return Err(invalid(format!("pair index {} exceeds the family dimension {}", ty.pair, values.len())));
    }
    // the contour encloses the pair and nothing else
    let center = 0.5 * (values[ty.pair] + values[ty.pair + 1]);
    let half = 0.5 * (values[ty.pair + 1] - values[ty.pair]);
    let outside = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ty.pair && i != ty.pair + 1)
        .map(|(_, v)| (v - center).abs())
        .fold(f64::INFINITY, f64::min);
    let radius = if outside.is_finite() {
        0.5 * (half + outside)
    } else {
        half + isolating_radius(&values, center, c.tolerances.cluster_gap).max(1.0)
    };
    let contour = Contour::new(center, radius);
    let p = spectral_projector(&family, &base, contour)?;
    let a = family.operator(&base);
    let mu = default_shift(&contour);
    let df = defining_function(&family, &base, &probe, contour, mu)?;
    let (probe_values, _) = eigen(&family, &probe);
    let mut windowed: Vec<f64> = probe_values
        .iter()
        .filter(|v| (*v - center).abs() < radius)
        .map(|v| 1.0 / (mu - v))
        .collect();
    windowed.sort_by(f64::total_cmp);
    let f_values = df.eigenvalues();
    let spectrum_error = if f_values.len() == windowed.len() {
        f_values.iter().zip(&windowed).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let scan = codim2_slice_scan(&family, &Slice::coordinate(params, ty.slice_half_width), ty.pair, ty.slice_points);
    let result = json!({
        "preset": preset.id(),
        "base": base,
        "probe": probe,
        "eigenvalues": values,
        "contour": {"center": center, "radius": radius},
        "projector": {
            "idempotency_defect": p.idempotency_defect(),
            "trace": p.trace(),
            "rank": p.rank(),
            "commutator_defect": p.commutator_defect(&a),
        },
        "defining_function": {
            "shift": mu,
            "eigenvalues": f_values,
            "windowed_resolvent": windowed,
            "spectrum_error": spectrum_error,
            "transfer_condition": df.transfer_condition,
            "scalar_defect": df.scalar_defect(),
        },
        "slice_scan": scan,
        "max_component_diameter": scan.max_diameter(),
    });
    Ok(vec![header.json(result)])
}

fn track(c: &ExperimentConfig, header: &Header) -> Result<Vec<Output>> {
    let mesh = c.mesh()?;
    let t = &c.track;
    let tol = &c.tolerances;
    let opts = TrackOptions {
        solver: c.solver(),
        threshold: tol.overlap,
        crossing_tol: tol.crossing,
        near_miss: tol.near_miss,
        max_refinements: t.max_refinements,
        localization: t.localization,
        ..TrackOptions::default()
    };
    let grid = uniform_grid(t.grid);
    let window = c.window;
    let (tracking, result) = match &t.path {
        PathSpec::Stretch {} => {
            let path = stretch_path(&mesh)?;
            let (tracking, report) = closed_coclosed_experiment(&mesh, &path, &grid, window, &opts)?;
            let summary = json!({
                "path": "stretch",
                "mixed_crossings": report.mixed_crossings(),
                "all_consistent": report.all_consistent(),
                "report": report,
            });
            (tracking, summary)
        }
        PathSpec::Forced {} => {
            let g0 = c.metric.field(&mesh, c.seed)?;
            let fo = ForcedCrossingOptions {
                window,
                grid: t.grid | 1,
                track: opts,
                ..ForcedCrossingOptions::default()
            };
            let (_, tracking, report) = forced_crossing_experiment(&mesh, &g0, &fo)?;
            let summary = json!({
                "path": "forced",
                "found": report.found(),
                "word_before": report.word_before.as_ref().map(|w| w.word()),
                "word_after": report.word_after.as_ref().map(|w| w.word()),
                "report": report,
            });
            (tracking, summary)
        }
        spec => {
            let path = match spec {
                PathSpec::Conformal {} => conformal_path(&c.metric.field(&mesh, c.seed)?)?,
                PathSpec::Linear { from, to } => {
                    MetricPath::linear(from.field(&mesh, c.seed)?, to.field(&mesh, c.seed.wrapping_add(1000))?)?
                }
                PathSpec::Random { amplitude, modes } => {
                    let end = |s: u64| mesh.sample_metric(&SmoothSym3::random_metric(*amplitude, *modes, s));
                    MetricPath::linear(end(c.seed)?, end(c.seed.wrapping_add(1000))?)?
                }
                PathSpec::Stretch {} | PathSpec::Forced {} => unreachable!("handled above"),
            };
            let tracker = Tracker::new(&mesh, &path, window, t.which, opts)?;
            let tracking = tracker.track(&grid)?;
            let events = tracker.detect(&tracking, |_, _| true)?;
            let unexplained = unexplained_order_changes(&tracking, &events);
            let summary = json!({
                "path": serde_json::to_value(spec)?,
                "events": events,
                "unexplained_order_changes": unexplained,
            });
            (tracking, summary)
        }
    };
    let mut result = result;
    result["tracking"] = json!({
        "window": tracking.window,
        "samples": tracking.times(),
        "refinements": tracking.refinements,
        "unresolved": tracking.unresolved,
        "harmonic_dimensions": tracking.harmonic_dimensions(),
        "min_hodge": tracking.min_hodge(),
        "all_continuous": tracking.all_continuous(),
        "min_core_overlap": tracking.min_core_overlap(),
    });
    Ok(vec![header.csv("branches.csv", &tracking.branch_csv()), header.json(result)])
}

fn write_outputs(dir: &Path, outputs: &[Output]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    outputs
        .iter()
        .map(|o| {
            let p = dir.join(&o.name);
            std::fs::write(&p, &o.contents)?;
            Ok(p)
        })
        .collect()
}

fn diagnostic(code: i32, kind: &str, message: &str) -> String {
    json!({"status": "error", "kind": kind, "exit_code": code, "message": message}).to_string()
}

/// Parses `argv`, runs the experiment and returns the process exit code.
/// Diagnostics go to stderr as JSON; a success summary goes to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!("{}", diagnostic(EXIT_VALIDATION, "validation", &e.to_string()));
            return EXIT_VALIDATION;
        }
    };
    match run_cli(&cli) {
        Ok(paths) => {
            let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({"status": "ok", "outputs": files}));
            EXIT_OK
        }
        Err(e) => {
            let code = exit_code(&e);
            let kind = if code == EXIT_VALIDATION { "validation" } else { "solver" };
            eprintln!("{}", diagnostic(code, kind, &e.to_string()));
            code
        }
    }
}

/// Resolves, validates, runs and writes; nothing is written unless the run
/// succeeds.
pub fn run_cli(cli: &Cli) -> Result<Vec<PathBuf>> {
    let command = cli.command.name();
    let config = resolve(cli)?;
    config.validate(command)?;
    if cli.threads == Some(0) {
        return Err(invalid("thread count must be positive".into()));
    }
    let outputs = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(|| execute(command, &config))?,
        None => execute(command, &config)?,
    };
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&dir, &outputs)
}
