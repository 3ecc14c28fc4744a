use std::path::{Path, PathBuf};
use std::sync::Arc;

use pals::field::{binarize, field_eval, FieldModel, GridSpec, DEFAULT_EXTENT};
use pals::forward::DEFAULT_LEVEL;
use pals::harness::io::{
    atomic_write, read_dips, read_params, read_point_cloud, read_silhouettes, read_voxels, trace_csv, write_dips,
    write_params, write_point_cloud, write_silhouettes, write_voxels, VoxelDtype,
};
use pals::harness::{
    gradcheck as check_family, gradcheck_all, ground_truth, metrics, simulate as run_simulation, voxelize, ExperimentData, Modality,
    NoiseSpec, Phantom, SimulationSpec,
};
use pals::solver::{joint_objective, reconstruct as run_reconstruction, ReconstructionProblem, ResidualModel};
use pals::{PalsError, Result};
use serde::Serialize;

use crate::config::{PhantomSpec, RunConfig};
use crate::svg::misfit_chart;
use crate::{CliError, ExportArgs, GlobalArgs, GradcheckArgs, MetricsArgs, PhantomArgs, SimulateArgs};

type CmdResult = std::result::Result<(), CliError>;

fn load_config(g: &GlobalArgs) -> Result<Option<RunConfig>> {
    let Some(path) = &g.config else { return Ok(None) };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PalsError::Format(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn cube(dims: usize) -> Result<GridSpec> {
    if dims == 0 {
        return Err(PalsError::Config("--dims must be at least 1".into()));
    }
    GridSpec::cube(dims, DEFAULT_EXTENT)
}

pub fn phantom(g: &GlobalArgs, a: &PhantomArgs) -> CmdResult {
    let grid = cube(a.dims)?;
    let spec = match load_config(g)?.and_then(|c| c.phantom) {
        Some(p) => p,
        None => PhantomSpec::Builtin(a.name.clone()),
    };
    let phantom = spec.build(&grid)?;
    let field = voxelize(&phantom, &grid);
    let header = g.out_dir.join("phantom.json");
    write_voxels(&header, &field, a.dtype.into())?;
    println!("{}", header.display());
    Ok(())
}

/// Writes the data files of one simulation into `dir` and returns them.
fn write_simulation(dir: &Path, data: &ExperimentData, grid_lo: &GridSpec) -> Result<Vec<PathBuf>> {
    match data {
        ExperimentData::Dip(v) => {
            let p = dir.join("dips.csv");
            write_dips(&p, v)?;
            Ok(vec![p])
        }
        ExperimentData::Sfs(v) => {
            let p = dir.join("silhouettes.json");
            write_silhouettes(&p, grid_lo, v)?;
            Ok(vec![p])
        }
        ExperimentData::Pc(v) => v
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let p = dir.join(format!("cloud_{i:03}.txt"));
                write_point_cloud(&p, c)?;
                Ok(p)
            })
            .collect(),
    }
}

pub fn simulate(g: &GlobalArgs, a: &SimulateArgs) -> CmdResult {
    let modality: Modality = a.modality.parse()?;
    let cfg = load_config(g)?;
    let n = a.n.unwrap_or(match modality {
        Modality::Dip => 30,
        Modality::Sfs => 8,
        Modality::Pc => 1,
    });
    let seed = g.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut spec = SimulationSpec {
        noise: NoiseSpec {
            data_sigma_voxels: a.data_noise,
            angle_sigma_deg: a.angle_noise,
            trans_frac: a.trans_noise,
            seed,
        },
        ..SimulationSpec::new(modality, n)
    };
    if let Some(c) = &cfg {
        spec.grid_hi = c.grid_hi;
        spec.grid_lo = c.grid_lo;
    }
    spec.validate()?;
    let phantom = match cfg.and_then(|c| c.phantom) {
        Some(p) => p.build(&spec.grid_lo)?,
        None => Phantom::builtin(&a.phantom, spec.grid_lo.mid())?,
    };
    let sim = run_simulation(&phantom, &spec)?;
    for p in write_simulation(&g.out_dir, &sim.data, &spec.grid_lo)? {
        println!("{}", p.display());
    }
    write_json(&g.out_dir.join("truth_acq.json"), &sim.truth)?;
    Ok(())
}

fn read_modality(m: &crate::config::ModalityConfig, cfg: &RunConfig) -> Result<ExperimentData> {
    match m.modality {
        Modality::Dip => Ok(ExperimentData::Dip(read_dips(&m.files[0])?)),
        Modality::Sfs => Ok(ExperimentData::Sfs(read_silhouettes(&m.files[0])?)),
        Modality::Pc => {
            let offset = m.simulation_spec(cfg).offset();
            let clouds = m.files.iter().map(|f| read_point_cloud(f, offset, DEFAULT_LEVEL)).collect::<Result<_>>()?;
            Ok(ExperimentData::Pc(clouds))
        }
    }
}

#[derive(Serialize)]
struct MetricsReport {
    iou: f64,
    volume_rel_err: f64,
    initial_misfit: f64,
    final_misfit: f64,
    n_rbf: usize,
    gammas: Vec<f64>,
}

pub fn reconstruct(g: &GlobalArgs) -> CmdResult {
    let cfg = load_config(g)?.ok_or_else(|| CliError::Invalid("reconstruct needs --config".into()))?;
    let phantom = cfg.phantom.as_ref().map(|p| p.build(&cfg.grid_lo)).transpose()?;

    let mut modalities: Vec<Vec<Arc<dyn ResidualModel>>> = Vec::new();
    for m in &cfg.modalities {
        let data = match (&phantom, m.files.is_empty()) {
            (Some(ph), true) => {
                let sim = run_simulation(ph, &m.simulation_spec(&cfg))?;
                log::info!("simulated {} {} experiments", sim.data.len(), m.modality);
                sim.data
            }
            _ => read_modality(m, &cfg)?,
        };
        if data.is_empty() {
            return Err(PalsError::Config(format!("modality {} has no experiments", m.modality)).into());
        }
        modalities.push(data.terms(&cfg.grid_lo, cfg.model)?);
    }
    let objective = joint_objective(modalities, cfg.gamma)?;
    let problem = ReconstructionProblem::new(objective, cfg.grid_lo, cfg.model, cfg.kind)?;
    let rec = run_reconstruction(&problem, &cfg.schedule, &cfg.gn, cfg.estimate_calibration, cfg.seed)?;

    let out = &g.out_dir;
    write_params(&out.join("params.json"), &rec.params)?;
    write_voxels(&out.join("recon.json"), &rec.binary, VoxelDtype::U8)?;
    write_voxels(&out.join("field.json"), &rec.field, VoxelDtype::F32)?;
    let steps = &rec.trace.steps;
    atomic_write(&out.join("trace.csv"), trace_csv(rec.trace.initial_misfit, cfg.schedule.p0, steps).as_bytes())?;
    write_json(&out.join("config.json"), &cfg)?;
    let history: Vec<f64> =
        std::iter::once(rec.trace.initial_misfit).chain(steps.iter().map(|s| s.misfit)).collect();
    if cfg.svg {
        atomic_write(&out.join("misfit.svg"), misfit_chart(&history).as_bytes())?;
    }
    if let Some(ph) = &phantom {
        let spec = SimulationSpec { grid_hi: cfg.grid_hi, grid_lo: cfg.grid_lo, ..SimulationSpec::new(Modality::Dip, 1) };
        let truth = ground_truth(ph, &spec, cfg.schedule.binarize_threshold)?;
        let m = metrics(&rec.binary, &truth, history)?;
        let report = MetricsReport {
            iou: m.iou,
            volume_rel_err: m.volume_rel_err,
            initial_misfit: rec.trace.initial_misfit,
            final_misfit: rec.trace.final_misfit(),
            n_rbf: rec.params.pals.len(),
            gammas: rec.trace.gammas.clone(),
        };
        write_json(&out.join("metrics.json"), &report)?;
        println!("iou {:.4}  volume error {:.4}", m.iou, m.volume_rel_err);
    }
    println!(
        "{} bases, misfit {:.4e} -> {:.4e}",
        rec.params.pals.len(),
        rec.trace.initial_misfit,
        rec.trace.final_misfit()
    );
    Ok(())
}

pub fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> CmdResult {
    if a.trials == 0 {
        return Err(CliError::Invalid("--trials must be at least 1".into()));
    }
    let seed = g.seed.unwrap_or(1);
    let reports = if a.family == "all" {
        gradcheck_all(a.trials, seed)?
    } else {
        vec![check_family(a.family.parse()?, a.trials, seed)?]
    };
    let mut failed = Vec::new();
    for r in &reports {
        println!("{r}");
        if !r.passed {
            failed.push(r.family.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn metrics_cmd(a: &MetricsArgs) -> CmdResult {
    let recon = read_voxels(&a.recon)?;
    let truth = read_voxels(&a.truth)?;
    let m = metrics(&recon, &truth, Vec::new())?;
    println!("{}", serde_json::json!({"iou": m.iou, "volume_rel_err": m.volume_rel_err}));
    Ok(())
}

pub fn export(g: &GlobalArgs, a: &ExportArgs) -> CmdResult {
    let model = load_config(g)?.map(|c| c.model).unwrap_or_else(FieldModel::default);
    let params = read_params(&a.params)?;
    let grid = cube(a.dims)?;
    let (field, _) = field_eval(&params.pals, &grid, &model.heaviside, model.order, false)?;
    let field = match a.threshold {
        Some(t) => binarize(&field, t)?,
        None => field,
    };
    let header = g.out_dir.join(&a.out);
    write_voxels(&header, &field, a.dtype.into())?;
    println!("{}", header.display());
    Ok(())
}
