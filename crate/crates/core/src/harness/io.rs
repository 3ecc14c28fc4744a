//! On-disk formats: voxel grids, dip traces, silhouettes, point clouds,
//! parameter vectors and optimization traces.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calib::{AcquisitionParams, ExtendedParameters};
use crate::error::{PalsError, Result};
use crate::field::{BasisKind, GridSpec, ParameterVector, ScalarField};
use crate::forward::{DipExperiment, PointCloudData, SilhouetteExperiment};
use crate::solver::StepRecord;

/// Writes `bytes` next to `path` and renames it into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| PalsError::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PalsError::Format(format!("cannot read {}: {e}", path.display())))
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| PalsError::Format(format!("line {line}: bad {what} '{s}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelDtype {
    /// `[0, 1]` scaled to `0..=255`.
    U8,
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoxelHeader {
    dims: [usize; 3],
    origin: [f64; 3],
    extent: [f64; 3],
    dtype: VoxelDtype,
    order: String,
}

const X_FASTEST: &str = "x-fastest";

/// Payload path paired with a voxel header: same stem, `.raw` extension.
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Writes `<stem>.json` and `<stem>.raw` (little-endian, x-fastest).
pub fn write_voxels(header: &Path, field: &ScalarField, dtype: VoxelDtype) -> Result<()> {
    let mut payload = Vec::with_capacity(field.values.len() * 8);
    for &v in &field.values {
        match dtype {
            VoxelDtype::U8 => payload.push((v.clamp(0.0, 1.0) * 255.0).round() as u8),
            VoxelDtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
            VoxelDtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
        }
    }
    let h = VoxelHeader {
        dims: field.grid.dims,
        origin: field.grid.origin,
        extent: field.grid.extent,
        dtype,
        order: X_FASTEST.into(),
    };
    atomic_write(&raw_path(header), &payload)?;
    atomic_write(header, serde_json::to_string_pretty(&h).expect("header serializes").as_bytes())
}

pub fn read_voxels(header: &Path) -> Result<ScalarField> {
    let h: VoxelHeader = serde_json::from_str(&read_text(header)?)
        .map_err(|e| PalsError::Format(format!("{}: {e}", header.display())))?;
    if h.order != X_FASTEST {
        return Err(PalsError::Format(format!("unsupported voxel order '{}'", h.order)));
    }
    let grid = GridSpec::new(h.dims, h.origin, h.extent)?;
    let bytes = fs::read(raw_path(header))?;
    let width = match h.dtype {
        VoxelDtype::U8 => 1,
        VoxelDtype::F32 => 4,
        VoxelDtype::F64 => 8,
    };
    if bytes.len() != grid.len() * width {
        return Err(PalsError::Format(format!(
            "{} holds {} bytes, expected {}",
            raw_path(header).display(),
            bytes.len(),
            grid.len() * width
        )));
    }
    let values = match h.dtype {
        VoxelDtype::U8 => bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        VoxelDtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        VoxelDtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    ScalarField::new(grid, values)
}

/// One row per dip: `theta_deg,phi_deg,bx,by,bz,v_1,...,v_n3`.
pub fn write_dips(path: &Path, dips: &[DipExperiment]) -> Result<()> {
    let n3 = dips.first().map_or(0, |d| d.observed.len());
    let mut out = String::from("theta_deg,phi_deg,bx,by,bz");
    for k in 1..=n3 {
        out.push_str(&format!(",v_{k}"));
    }
    out.push('\n');
    for d in dips {
        if d.observed.len() != n3 {
            return Err(PalsError::Contract("dip traces have different lengths".into()));
        }
        let a = &d.acq;
        let mut row = vec![a.theta.to_degrees(), a.phi.to_degrees(), a.b[0], a.b[1], a.b[2]];
        row.extend_from_slice(&d.observed);
        out.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_dips(path: &Path) -> Result<Vec<DipExperiment>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| PalsError::Format(format!("{} is empty", path.display())))?;
    let cols = header.split(',').count();
    if cols < 6 || !header.starts_with("theta_deg,phi_deg,bx,by,bz") {
        return Err(PalsError::Format(format!("{}: unexpected dip header '{header}'", path.display())));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').map(|s| parse_f64(s, "value", i + 1)).collect::<Result<_>>()?;
        if v.len() != cols {
            return Err(PalsError::Format(format!("line {}: {} columns, header has {cols}", i + 1, v.len())));
        }
        let acq = AcquisitionParams { theta: v[0].to_radians(), phi: v[1].to_radians(), b: [v[2], v[3], v[4]] };
        out.push(DipExperiment::new(acq, v[5..].to_vec())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilhouetteEntry {
    pub file: String,
    pub acq: AcquisitionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilhouetteManifest {
    pub eta: f64,
    /// Image width (first grid axis) and height (second).
    pub width: usize,
    pub height: usize,
    pub experiments: Vec<SilhouetteEntry>,
}

/// Binary PGM (P5, maxval 255), first index fastest.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(PalsError::Contract(format!("{} pixels for a {width}×{height} image", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    atomic_write(path, &out)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let bad = |what: &str| PalsError::Format(format!("{}: {what}", path.display()));
    // header: magic, width, height, maxval, each separated by whitespace, with optional comments
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    Ok((w, h, data.iter().map(|&b| b as f64 / maxval as f64).collect()))
}

/// One `<stem>_NNN.pgm` per silhouette plus `<stem>.json`.
pub fn write_silhouettes(manifest: &Path, grid: &GridSpec, sils: &[SilhouetteExperiment]) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sfs".into());
    let [w, h, _] = grid.dims;
    let eta = sils.first().map_or(crate::forward::DEFAULT_ETA, |s| s.eta);
    let mut experiments = Vec::new();
    for (i, s) in sils.iter().enumerate() {
        if s.eta != eta {
            return Err(PalsError::Contract("silhouettes in one manifest must share η".into()));
        }
        let file = format!("{stem}_{i:03}.pgm");
        write_pgm(&dir.join(&file), w, h, &s.observed)?;
        experiments.push(SilhouetteEntry { file, acq: s.acq });
    }
    let m = SilhouetteManifest { eta, width: w, height: h, experiments };
    atomic_write(manifest, serde_json::to_string_pretty(&m).expect("manifest serializes").as_bytes())
}

pub fn read_silhouettes(manifest: &Path) -> Result<Vec<SilhouetteExperiment>> {
    let m: SilhouetteManifest = serde_json::from_str(&read_text(manifest)?)
        .map_err(|e| PalsError::Format(format!("{}: {e}", manifest.display())))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    m.experiments
        .iter()
        .map(|e| {
            let (w, h, px) = read_pgm(&dir.join(&e.file))?;
            if (w, h) != (m.width, m.height) {
                return Err(PalsError::Format(format!("{} is {w}×{h}, manifest says {}×{}", e.file, m.width, m.height)));
            }
            SilhouetteExperiment::new(e.acq, px, m.eta)
        })
        .collect()
}

/// `x y z nx ny nz` per line. The pose, normal offset and level ride along
/// in `#` comment lines so the file stays a plain point list.
pub fn write_point_cloud(path: &Path, cloud: &PointCloudData) -> Result<()> {
    let a = &cloud.acq;
    let mut out = format!(
        "# acq {} {} {} {} {}\n# eps_offset {}\n# level {}\n",
        a.theta,
        a.phi,
        a.b[0],
        a.b[1],
        a.b[2],
        cloud.eps_offset(),
        cloud.level()
    );
    for (p, n) in cloud.points().iter().zip(cloud.normals()) {
        out.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, n.x, n.y, n.z));
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a cloud; missing metadata falls back to the given offset and level and an identity pose.
pub fn read_point_cloud(path: &Path, eps_offset: f64, level: f64) -> Result<PointCloudData> {
    let text = read_text(path)?;
    let (mut acq, mut eps, mut lvl) = (AcquisitionParams::default(), eps_offset, level);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut it = meta.split_whitespace();
            let key = it.next().unwrap_or("");
            let vals: Vec<f64> = it.map(|s| parse_f64(s, key, i + 1)).collect::<Result<_>>()?;
            match (key, vals.as_slice()) {
                ("acq", v) if v.len() == 5 => acq = AcquisitionParams::from_slice(v),
                ("eps_offset", [v]) => eps = *v,
                ("level", [v]) => lvl = *v,
                _ => {}
            }
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().map(|s| parse_f64(s, "coordinate", i + 1)).collect::<Result<_>>()?;
        if v.len() != 6 {
            return Err(PalsError::Format(format!("line {}: expected 6 numbers, got {}", i + 1, v.len())));
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
        normals.push(Vector3::new(v[3], v[4], v[5]));
    }
    PointCloudData::new(points, normals, eps, lvl, acq)
}

/// JSON form of [`ExtendedParameters`]: explicit kind tag, flattened arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub kind: BasisKind,
    pub eps_norm: f64,
    pub bias: f64,
    pub n_rbf: usize,
    pub params: Vec<f64>,
    #[serde(default)]
    pub acq: Vec<[f64; 5]>,
}

impl ParamsFile {
    pub fn from_extended(m: &ExtendedParameters) -> Self {
        ParamsFile {
            kind: m.pals.kind(),
            eps_norm: m.pals.eps_norm,
            bias: m.pals.bias,
            n_rbf: m.pals.len(),
            params: m.pals.flatten(),
            acq: m.acq_list.iter().map(|a| a.to_array()).collect(),
        }
    }

    pub fn to_extended(&self) -> Result<ExtendedParameters> {
        let pals = ParameterVector::unflatten(self.kind, &self.params, self.eps_norm, self.bias)?;
        if pals.len() != self.n_rbf {
            return Err(PalsError::Format(format!("n_rbf is {} but params hold {} bases", self.n_rbf, pals.len())));
        }
        Ok(ExtendedParameters::new(pals, self.acq.iter().map(|a| AcquisitionParams::from_slice(a)).collect()))
    }
}

pub fn write_params(path: &Path, m: &ExtendedParameters) -> Result<()> {
    let json = serde_json::to_string_pretty(&ParamsFile::from_extended(m)).expect("parameters serialize");
    atomic_write(path, json.as_bytes())
}

pub fn read_params(path: &Path) -> Result<ExtendedParameters> {
    let f: ParamsFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| PalsError::Format(format!("{}: {e}", path.display())))?;
    f.to_extended()
}

/// `iter,misfit,reg,n_rbf,step`, one row per Gauss-Newton step; row 0 is the initial state.
pub fn trace_csv(initial_misfit: f64, initial_n_rbf: usize, steps: &[StepRecord]) -> String {
    let mut out = String::from("iter,misfit,reg,n_rbf,step\n");
    out.push_str(&format!("0,{initial_misfit},0,{initial_n_rbf},0\n"));
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", i + 1, s.misfit, s.reg, s.n_rbf, s.step));
    }
    out
}

/// Rows of a trace CSV as `(iter, misfit, reg, n_rbf, step)`.
pub fn read_trace_csv(path: &Path) -> Result<Vec<(usize, f64, f64, usize, f64)>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "iter,misfit,reg,n_rbf,step")) => {}
        _ => return Err(PalsError::Format(format!("{}: missing trace header", path.display()))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 5 {
                return Err(PalsError::Format(format!("line {}: expected 5 columns", i + 1)));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| PalsError::Format(format!("line {}: bad integer '{s}'", i + 1)));
            Ok((int(c[0])?, parse_f64(c[1], "misfit", i + 1)?, parse_f64(c[2], "reg", i + 1)?, int(c[3])?, parse_f64(c[4], "step", i + 1)?))
        })
        .collect()
}
