//! `meshlat` — encode, decode, train and generate triangle meshes through sparse voxel latents.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use meshlat_core::config::{ConfigError, RunConfig};
use meshlat_core::flow::{self, FlowError, FlowModel, Stage};
use meshlat_core::graph_recovery::{self, RecoveryError};
use meshlat_core::mesh_io::{normalize_unit_cube, parse_obj, write_obj, Mesh, MeshError};
use meshlat_core::metrics::{evaluate_pair, MetricsError, DEFAULT_EVAL_SAMPLES};
use meshlat_core::nn::NnError;
use meshlat_core::sampling::FeatureVariant;
use meshlat_core::vae::{latent, train_vae, TrainingMesh, Vae, VaeError};

mod exit {
    pub const IO: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const SHAPE: u8 = 3;
    pub const EMPTY: u8 = 4;
    pub const BUDGET: u8 = 5;
    pub const DIVERGED: u8 = 6;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(exit::IO, format!("{}: {e}", path.display()))
    }
}

impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        Self::new(exit::PARSE, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::new(exit::PARSE, e.to_string())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        let code = match e {
            NnError::Format(_) => exit::PARSE,
            NnError::Shape(_) | NnError::Incompatible(_) => exit::SHAPE,
        };
        Self::new(code, format!("checkpoint: {e}"))
    }
}

impl From<latent::LatentError> for Failure {
    fn from(e: latent::LatentError) -> Self {
        let code = match e {
            latent::LatentError::Channels { .. } => exit::SHAPE,
            _ => exit::PARSE,
        };
        Self::new(code, format!("latent: {e}"))
    }
}

impl From<RecoveryError> for Failure {
    fn from(e: RecoveryError) -> Self {
        let code = match e {
            RecoveryError::Budget { .. } => exit::BUDGET,
            _ => exit::PARSE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<VaeError> for Failure {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Nn(e) => e.into(),
            VaeError::Recovery(e) => e.into(),
            VaeError::ChannelMismatch { .. } | VaeError::LevelMismatch { .. } => {
                Self::new(exit::SHAPE, e.to_string())
            }
            VaeError::Budget { .. } => Self::new(exit::BUDGET, e.to_string()),
            VaeError::Diverged { .. } => Self::new(exit::DIVERGED, e.to_string()),
            VaeError::EmptyInput => Self::new(exit::EMPTY, e.to_string()),
            VaeError::OutOfUnitCube | VaeError::Sampling(_) => {
                Self::new(exit::PARSE, e.to_string())
            }
        }
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Nn(e) => e.into(),
            FlowError::Vae(e) => e.into(),
            FlowError::Recovery(e) => e.into(),
            FlowError::Empty(_) => Self::new(exit::EMPTY, format!("empty output: {e}")),
            FlowError::Incompatible(_) => Self::new(exit::SHAPE, e.to_string()),
            FlowError::Diverged { .. } => Self::new(exit::DIVERGED, e.to_string()),
            FlowError::ZeroSteps | FlowError::NoExamples => Self::new(exit::PARSE, e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Self::new(exit::EMPTY, e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "meshlat",
    version,
    about = "Topology-preserving sparse voxel latents for triangle meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus the per-run overrides every command accepts.
#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config; desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Surface samples per mesh.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    variant: Option<FeatureVariant>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Structure,
    Topology,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh → sampled latent (`.ltv`).
    Encode {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Latent → OBJ via pruning, edge inference and 3-cycle faces.
    Decode {
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        edge_threshold: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Learning-free codec check against the ground-truth ladder.
    OracleRoundtrip {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    TrainVae {
        /// Training meshes; repeat the flag for several.
        #[arg(long, required = true)]
        mesh: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    TrainFlow {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long, required = true)]
        mesh: Vec<PathBuf>,
        /// Trained autoencoder; required for the topology stage.
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Structure flow → topology flow → decode.
    Generate {
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        vertices: usize,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        edge_threshold: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config(args: &ConfigArgs, steps: Option<usize>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let bytes = read(p)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Failure::new(exit::PARSE, format!("{}: not UTF-8", p.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.samples {
        cfg.samples = k;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(t) = args.tau {
        cfg.tau = t;
    }
    if let Some(s) = steps {
        cfg.steps = s;
        cfg.flow_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_mesh(path: &Path) -> Result<(Mesh, String)> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mesh = parse_obj(&text)?;
    let (mesh, _) = normalize_unit_cube(&mesh)?;
    Ok((mesh, sha256_hex(&bytes)))
}

/// Sidecar manifest: `key = value` lines written next to `out`.
struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &str, cfg: Option<&RunConfig>) -> Self {
        let mut m = Self { lines: Vec::new() };
        m.push("command", command);
        m.push("version", concat!("v", env!("CARGO_PKG_VERSION")));
        if let Some(cfg) = cfg {
            m.push("config_sha256", sha256_hex(cfg.to_text().as_bytes()));
            m.push("seed", cfg.seed);
        }
        m
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let hash = sha256_hex(&read(path)?);
        self.push(&format!("{key}_sha256"), hash);
        Ok(())
    }

    fn write(&self, out: &Path, cfg: Option<&RunConfig>) -> Result<()> {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        write(&sidecar(out, "manifest"), s)?;
        if let Some(cfg) = cfg {
            write(&sidecar(out, "config"), cfg.to_text())?;
        }
        Ok(())
    }
}

fn sidecar(out: &Path, ext: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

fn load_vae(cfg: &RunConfig, path: &Path) -> Result<Vae> {
    Ok(Vae::load(cfg, &read(path)?)?)
}

fn load_flow(stage: Stage, cfg: &RunConfig, path: &Path) -> Result<FlowModel> {
    Ok(FlowModel::load(stage, cfg, &read(path)?)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode {
            mesh,
            ckpt,
            out,
            cfg,
        } => {
            let cfg = load_config(&cfg, None)?;
            let vae = load_vae(&cfg, &ckpt)?;
            let (m, mesh_hash) = load_mesh(&mesh)?;
            let post = vae.encode_mesh(&m, cfg.seed)?;
            let z = post.sample(cfg.seed);
            write(&out, latent::to_bytes(&z))?;
            let mut man = Manifest::new("encode", Some(&cfg));
            man.push("mesh_sha256", mesh_hash);
            man.input("ckpt", &ckpt)?;
            man.push("voxels", z.len());
            man.write(&out, Some(&cfg))?;
            println!("encoded {} voxels x {} channels", z.len(), z.channels());
        }
        Command::Decode {
            latent: lat,
            ckpt,
            out,
            edge_threshold,
            cfg,
        } => {
            let mut cfg = load_config(&cfg, None)?;
            if let Some(t) = edge_threshold {
                cfg.edge_threshold = t;
            }
            let vae = load_vae(&cfg, &ckpt)?;
            let z = latent::from_bytes(&read(&lat)?, Some(cfg.channels))?;
            let rec = vae.reconstruct(&z, cfg.edge_threshold)?;
            println!("{}", rec.stats.summary_line());
            if let Some(level) = rec.decoded.empty_at {
                return Err(Failure::new(
                    exit::EMPTY,
                    format!("empty output: every voxel pruned at level {level}"),
                ));
            }
            write(&out, write_obj(&rec.mesh))?;
            let mut man = Manifest::new("decode", Some(&cfg));
            man.input("latent", &lat)?;
            man.input("ckpt", &ckpt)?;
            man.push("edge_threshold", cfg.edge_threshold);
            man.write(&out, Some(&cfg))?;
        }
        Command::OracleRoundtrip { mesh, report, cfg } => {
            let cfg = load_config(&cfg, None)?;
            let (m, mesh_hash) = load_mesh(&mesh)?;
            let r = graph_recovery::oracle_roundtrip(&m, &cfg);
            write(&report, r.to_report())?;
            let mut man = Manifest::new("oracle-roundtrip", Some(&cfg));
            man.push("mesh_sha256", mesh_hash);
            man.write(&report, Some(&cfg))?;
            println!("{}", r.stats.summary_line());
        }
        Command::TrainVae {
            mesh,
            out,
            steps,
            cfg,
        } => {
            let cfg = load_config(&cfg, steps)?;
            let mut meshes = Vec::new();
            let mut man = Manifest::new("train-vae", Some(&cfg));
            for (i, p) in mesh.iter().enumerate() {
                let (m, h) = load_mesh(p)?;
                man.push(&format!("mesh{i}_sha256"), h);
                meshes.push(TrainingMesh::new(m, &cfg));
            }
            let mut vae = Vae::new(&cfg);
            let report = train_vae(&mut vae, &meshes, |_, _, _| false)?;
            write(&out, vae.save())?;
            man.push("steps", report.steps_run);
            if let Some(last) = report.trace.last() {
                man.push("final_loss", format!("{:e}", last.total));
            }
            man.write(&out, Some(&cfg))?;
            let mut trace = String::from("step total prune vtx conn kl\n");
            for (i, b) in report.trace.iter().enumerate() {
                let _ = writeln!(
                    trace,
                    "{i} {:e} {:e} {:e} {:e} {:e}",
                    b.total, b.prune, b.vtx, b.conn, b.kl
                );
            }
            write(&sidecar(&out, "trace"), trace)?;
            println!("trained {} steps", report.steps_run);
        }
        Command::TrainFlow {
            stage,
            mesh,
            vae,
            out,
            steps,
            cfg,
        } => {
            let cfg = load_config(&cfg, steps)?;
            let stage = match stage {
                StageArg::Structure => Stage::Structure,
                StageArg::Topology => Stage::Topology,
            };
            let mut man = Manifest::new(&format!("train-flow {}", stage.name()), Some(&cfg));
            let mut meshes = Vec::new();
            for (i, p) in mesh.iter().enumerate() {
                let (m, h) = load_mesh(p)?;
                man.push(&format!("mesh{i}_sha256"), h);
                meshes.push(m);
            }
            let examples = match stage {
                Stage::Structure => {
                    let layout = flow::Patchify::from_config(&cfg);
                    let mut ex = Vec::new();
                    for m in &meshes {
                        let occ: BTreeSet<_> = flow::surface_occupancy(m, &cfg, cfg.seed)?;
                        ex.push(flow::structure_example(&occ, layout));
                    }
                    ex
                }
                Stage::Topology => {
                    let path = vae.as_ref().ok_or_else(|| {
                        Failure::new(exit::PARSE, "--vae is required for the topology stage")
                    })?;
                    let v = load_vae(&cfg, path)?;
                    man.input("vae", path)?;
                    meshes
                        .iter()
                        .map(|m| flow::topology_example(&v, m, cfg.seed))
                        .collect::<std::result::Result<_, _>>()?
                }
            };
            let mut model = FlowModel::new(stage, &cfg);
            let report = model.train(&examples, |_, _, _| false)?;
            write(&out, model.save())?;
            man.push("steps", report.steps_run);
            if let Some(last) = report.trace.last() {
                man.push("final_loss", format!("{last:e}"));
            }
            man.write(&out, Some(&cfg))?;
            println!(
                "trained {} flow for {} steps",
                stage.name(),
                report.steps_run
            );
        }
        Command::Generate {
            vae,
            structure,
            topology,
            vertices,
            steps,
            out,
            edge_threshold,
            cfg,
        } => {
            let mut cfg = load_config(&cfg, None)?;
            if let Some(t) = edge_threshold {
                cfg.edge_threshold = t;
            }
            cfg.sample_steps = steps;
            let v = load_vae(&cfg, &vae)?;
            let s = load_flow(Stage::Structure, &cfg, &structure)?;
            let t = load_flow(Stage::Topology, &cfg, &topology)?;
            let g = flow::generate_mesh(&s, &t, &v, vertices, steps, cfg.seed, cfg.edge_threshold)?;
            println!("{}", g.reconstruction.stats.summary_line());
            write(&out, write_obj(&g.reconstruction.mesh))?;
            let mut man = Manifest::new("generate", Some(&cfg));
            man.input("vae", &vae)?;
            man.input("structure", &structure)?;
            man.input("topology", &topology)?;
            man.push("vertices", vertices);
            man.push("steps", steps);
            man.push("occupied_voxels", g.occupied.len());
            man.write(&out, Some(&cfg))?;
        }
        Command::Eval {
            pred,
            gt,
            points,
            seed,
            report,
        } => {
            let (p, _) = load_mesh_raw(&pred)?;
            let (g, _) = load_mesh_raw(&gt)?;
            let r = evaluate_pair(&p, &g, points, seed)?;
            print!("{}", r.to_text());
            if let Some(path) = report {
                write(&path, r.to_text())?;
                let mut man = Manifest::new("eval", None);
                man.push("seed", seed);
                man.input("pred", &pred)?;
                man.input("gt", &gt)?;
                man.write(&path, None)?;
            }
        }
    }
    Ok(())
}

/// Metrics compare meshes in their stored coordinates.
fn load_mesh_raw(path: &Path) -> Result<(Mesh, String)> {
    let bytes = read(path)?;
    let mesh = parse_obj(&String::from_utf8_lossy(&bytes))?;
    Ok((mesh, sha256_hex(&bytes)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
