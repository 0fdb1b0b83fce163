//! Portable dataset format: a JSON manifest plus raw binary blobs.
//!
//! Complex arrays are stored as interleaved little-endian IEEE-754 float64
//! pairs (re, im), row-major with the last index fastest, so a blob of shape
//! `s` holds exactly `prod(s) * 16` bytes. The susceptibility mask is stored
//! as little-endian u32. Small datasets may inline arrays in the manifest as
//! `[re, im]` pairs instead of referencing blobs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Chi2Map, Chi2Tensor, ComplexFrequency, FarFieldAmplitude, GridGeometry, NearFieldGrid, QnmMode,
    Scenario, C64,
};

pub const FORMAT_VERSION: u32 = 1;

const COMPLEX128: &str = "complex128";
const UINT32: &str = "uint32";
const LITTLE_ENDIAN: &str = "little";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub frequency: String,
    pub length: String,
    pub pump_field: String,
    pub chi2: String,
    pub mode_field: String,
    pub volume: String,
    pub intensity: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            frequency: "rad/s".into(),
            length: "m".into(),
            pump_field: "V/m".into(),
            chi2: "m/V".into(),
            mode_field: "normalized QNM (opaque, consistent)".into(),
            volume: "m^3".into(),
            intensity: "W/m^2".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub pump_omega: f64,
    pub pump_intensity: f64,
    pub n_idler: f64,
    pub n_signal: f64,
    pub volume: f64,
}

/// Reference to an array either in a sibling blob file or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayRef<T> {
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_order: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarFieldEntry {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub amp_theta: ArrayRef<[f64; 2]>,
    pub amp_phi: ArrayRef<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub label: String,
    pub eigenfrequency: ComplexFrequency,
    pub near_field: ArrayRef<[f64; 2]>,
    pub far_field: FarFieldEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub index: u32,
    pub tensor: Chi2Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Entry {
    pub regions: Vec<RegionEntry>,
    pub mask: ArrayRef<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub units: Units,
    pub scenario: ScenarioMeta,
    pub grid: GridGeometry,
    pub pump_field: ArrayRef<[f64; 2]>,
    pub modes: Vec<ModeEntry>,
    pub chi2: Chi2Entry,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ArrayStorage {
    /// Sibling `.bin` files next to the manifest.
    #[default]
    Blobs,
    /// Arrays embedded in the manifest.
    Inline,
}

struct Writer<'a> {
    dir: &'a Path,
    stem: String,
    storage: ArrayStorage,
}

impl Writer<'_> {
    fn complex(&self, name: &str, shape: Vec<usize>, values: &[C64]) -> Result<ArrayRef<[f64; 2]>> {
        match self.storage {
            ArrayStorage::Inline => Ok(ArrayRef {
                shape,
                dtype: COMPLEX128.into(),
                byte_order: None,
                blob: None,
                data: Some(values.iter().map(|z| [z.re, z.im]).collect()),
            }),
            ArrayStorage::Blobs => {
                let mut bytes = Vec::with_capacity(values.len() * 16);
                for z in values {
                    bytes.extend_from_slice(&z.re.to_le_bytes());
                    bytes.extend_from_slice(&z.im.to_le_bytes());
                }
                let blob = self.write_blob(name, &bytes)?;
                Ok(ArrayRef {
                    shape,
                    dtype: COMPLEX128.into(),
                    byte_order: Some(LITTLE_ENDIAN.into()),
                    blob: Some(blob),
                    data: None,
                })
            }
        }
    }

    fn mask(&self, shape: Vec<usize>, values: &[u32]) -> Result<ArrayRef<u32>> {
        match self.storage {
            ArrayStorage::Inline => Ok(ArrayRef {
                shape,
                dtype: UINT32.into(),
                byte_order: None,
                blob: None,
                data: Some(values.to_vec()),
            }),
            ArrayStorage::Blobs => {
                let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                let blob = self.write_blob("chi2-mask", &bytes)?;
                Ok(ArrayRef {
                    shape,
                    dtype: UINT32.into(),
                    byte_order: Some(LITTLE_ENDIAN.into()),
                    blob: Some(blob),
                    data: None,
                })
            }
        }
    }

    fn write_blob(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let file = format!("{}.{}.bin", self.stem, name);
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(file)
    }
}

fn grid_shape(g: &GridGeometry) -> Vec<usize> {
    vec![g.shape[0], g.shape[1], g.shape[2], 3]
}

fn flatten(v: &[[C64; 3]]) -> Vec<C64> {
    v.iter().flatten().copied().collect()
}

pub fn write_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    write_scenario_with(scenario, path, ArrayStorage::Blobs)
}

/// Write the manifest (and blobs) for `scenario`. Output bytes depend only
/// on the scenario contents.
pub fn write_scenario_with(scenario: &Scenario, path: &Path, storage: ArrayStorage) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::parse(path, "output path has no usable file name"))?
        .to_string();
    let w = Writer { dir, stem, storage };
    let geo = scenario.pump_field.geometry;

    let pump_field = w.complex(
        "pump",
        grid_shape(&geo),
        &flatten(&scenario.pump_field.values),
    )?;
    let mut modes = Vec::with_capacity(scenario.modes.len());
    for (i, m) in scenario.modes.iter().enumerate() {
        let ff = &m.far_field;
        let far_shape = vec![ff.theta.len(), ff.phi.len()];
        modes.push(ModeEntry {
            label: m.label.clone(),
            eigenfrequency: m.eigenfrequency,
            near_field: w.complex(
                &format!("mode{i}-near"),
                grid_shape(&geo),
                &flatten(&m.near_field.values),
            )?,
            far_field: FarFieldEntry {
                theta: ff.theta.clone(),
                phi: ff.phi.clone(),
                amp_theta: w.complex(
                    &format!("mode{i}-far-theta"),
                    far_shape.clone(),
                    &ff.amp_theta,
                )?,
                amp_phi: w.complex(&format!("mode{i}-far-phi"), far_shape, &ff.amp_phi)?,
            },
        });
    }
    let chi2 = Chi2Entry {
        regions: scenario
            .chi2
            .regions
            .iter()
            .enumerate()
            .map(|(i, t)| RegionEntry {
                index: i as u32 + 1,
                tensor: *t,
            })
            .collect(),
        mask: w.mask(geo.shape.to_vec(), &scenario.chi2.mask)?,
    };
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        units: Units::default(),
        scenario: ScenarioMeta {
            pump_omega: scenario.pump_omega,
            pump_intensity: scenario.pump_intensity,
            n_idler: scenario.n_idler,
            n_signal: scenario.n_signal,
            volume: scenario.volume,
        },
        grid: geo,
        pump_field,
        modes,
        chi2,
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    manifest_path: &'a Path,
    dir: PathBuf,
}

impl Reader<'_> {
    fn blob_bytes(&self, blob: &str, shape: &[usize], elem: usize) -> Result<Vec<u8>> {
        let path = self.dir.join(blob);
        let bytes = fs::read(&path)
            .map_err(|e| Error::parse(&path, format!("missing blob {blob:?}: {e}")))?;
        let expected = shape.iter().product::<usize>() * elem;
        if bytes.len() != expected {
            return Err(Error::parse(
                &path,
                format!(
                    "blob {blob:?} holds {} bytes, expected {expected} for shape {shape:?}",
                    bytes.len()
                ),
            ));
        }
        Ok(bytes)
    }

    fn check_header<T>(
        &self,
        what: &str,
        a: &ArrayRef<T>,
        dtype: &str,
        shape: &[usize],
    ) -> Result<()> {
        if a.dtype != dtype {
            return Err(Error::parse(
                self.manifest_path,
                format!("{what}: dtype {:?}, expected {dtype:?}", a.dtype),
            ));
        }
        if a.shape != shape {
            return Err(Error::parse(
                self.manifest_path,
                format!("{what}: shape {:?}, expected {shape:?}", a.shape),
            ));
        }
        if let Some(bo) = &a.byte_order {
            if bo != LITTLE_ENDIAN {
                return Err(Error::parse(
                    self.manifest_path,
                    format!("{what}: unsupported byte order {bo:?}"),
                ));
            }
        }
        Ok(())
    }

    fn complex(&self, what: &str, a: &ArrayRef<[f64; 2]>, shape: &[usize]) -> Result<Vec<C64>> {
        self.check_header(what, a, COMPLEX128, shape)?;
        let count: usize = shape.iter().product();
        let values: Vec<C64> = match (&a.blob, &a.data) {
            (Some(blob), None) => self
                .blob_bytes(blob, shape, 16)?
                .chunks_exact(16)
                .map(|c| {
                    C64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
            (None, Some(data)) => {
                if data.len() != count {
                    return Err(Error::parse(
                        self.manifest_path,
                        format!("{what}: {} inline values, expected {count}", data.len()),
                    ));
                }
                data.iter().map(|p| C64::new(p[0], p[1])).collect()
            }
            _ => {
                return Err(Error::parse(
                    self.manifest_path,
                    format!("{what}: exactly one of \"blob\" or \"data\" is required"),
                ))
            }
        };
        if let Some(i) = values
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            let loc = match &a.blob {
                Some(b) => format!("blob {b:?} byte offset {}", i * 16),
                None => format!("inline element {i}"),
            };
            return Err(Error::parse(
                self.manifest_path,
                format!("{what}: non-finite value at {loc}"),
            ));
        }
        Ok(values)
    }

    fn mask(&self, a: &ArrayRef<u32>, shape: &[usize]) -> Result<Vec<u32>> {
        self.check_header("chi2.mask", a, UINT32, shape)?;
        let count: usize = shape.iter().product();
        match (&a.blob, &a.data) {
            (Some(blob), None) => Ok(self
                .blob_bytes(blob, shape, 4)?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            (None, Some(data)) if data.len() == count => Ok(data.clone()),
            (None, Some(data)) => Err(Error::parse(
                self.manifest_path,
                format!("chi2.mask: {} inline values, expected {count}", data.len()),
            )),
            _ => Err(Error::parse(
                self.manifest_path,
                "chi2.mask: exactly one of \"blob\" or \"data\" is required",
            )),
        }
    }
}

fn vec3(values: Vec<C64>) -> Vec<[C64; 3]> {
    values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Parse a manifest without resolving blobs. The format version is checked
/// before anything else.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("invalid JSON: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::parse(path, "missing integer \"format_version\""))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value)
        .map_err(|e| Error::parse(path, format!("malformed manifest: {e}")))
}

/// Load and validate a scenario.
pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let manifest = read_manifest(path)?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let r = Reader {
        manifest_path: path,
        dir,
    };
    let geo = manifest.grid;
    let gshape = grid_shape(&geo);

    let pump_field = NearFieldGrid::new(
        geo,
        vec3(r.complex("pump_field", &manifest.pump_field, &gshape)?),
    )?;
    let mut modes = Vec::with_capacity(manifest.modes.len());
    for (i, m) in manifest.modes.iter().enumerate() {
        let what = format!("modes[{i}] ({:?})", m.label);
        let near = vec3(r.complex(&format!("{what}.near_field"), &m.near_field, &gshape)?);
        let ff = &m.far_field;
        let fshape = [ff.theta.len(), ff.phi.len()];
        let at = r.complex(
            &format!("{what}.far_field.amp_theta"),
            &ff.amp_theta,
            &fshape,
        )?;
        let ap = r.complex(&format!("{what}.far_field.amp_phi"), &ff.amp_phi, &fshape)?;
        let far = FarFieldAmplitude::new(ff.theta.clone(), ff.phi.clone(), at, ap)
            .map_err(|e| Error::parse(path, format!("{what}.far_field: {e}")))?;
        modes.push(QnmMode {
            label: m.label.clone(),
            eigenfrequency: m.eigenfrequency,
            near_field: NearFieldGrid::new(geo, near)?,
            far_field: far,
        });
    }

    let mut regions = vec![Chi2Tensor::zero(); manifest.chi2.regions.len()];
    for reg in &manifest.chi2.regions {
        let slot = (reg.index as usize)
            .checked_sub(1)
            .filter(|&k| k < regions.len())
            .ok_or_else(|| {
                Error::parse(
                    path,
                    format!("chi2 region index {} out of range", reg.index),
                )
            })?;
        regions[slot] = reg.tensor;
    }
    let chi2 = Chi2Map {
        geometry: geo,
        regions,
        mask: r.mask(&manifest.chi2.mask, &geo.shape)?,
    };

    let meta = &manifest.scenario;
    let scenario = Scenario {
        pump_omega: meta.pump_omega,
        pump_field,
        pump_intensity: meta.pump_intensity,
        modes,
        chi2,
        n_idler: meta.n_idler,
        n_signal: meta.n_signal,
        volume: meta.volume,
    };
    scenario.ensure_valid()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{centered_grid, random_scenario, FarGridSpec};

    fn small() -> Scenario {
        random_scenario(
            5,
            2,
            centered_grid(4, 1e-6),
            FarGridSpec {
                n_theta: 7,
                n_phi: 8,
                theta_max: 1.2,
            },
        )
        .unwrap()
    }

    #[test]
    fn blob_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let s = small();
        let p = dir.path().join("s.json");
        write_scenario(&s, &p).unwrap();
        assert_eq!(read_scenario(&p).unwrap(), s);
    }

    #[test]
    fn inline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = small();
        let p = dir.path().join("inline.json");
        write_scenario_with(&s, &p, ArrayStorage::Inline).unwrap();
        assert_eq!(read_scenario(&p).unwrap(), s);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn truncated_blob_reports_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        write_scenario(&small(), &p).unwrap();
        let blob = dir.path().join("t.mode0-near.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 5]).unwrap();
        let msg = read_scenario(&p).unwrap_err().to_string();
        assert!(msg.contains("t.mode0-near.bin"), "{msg}");
        assert!(msg.contains(&format!("expected {}", bytes.len())), "{msg}");
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        fs::write(&p, r#"{"format_version": 999, "garbage": true}"#).unwrap();
        assert!(matches!(
            read_scenario(&p),
            Err(Error::Version { found: 999, .. })
        ));
    }

    #[test]
    fn missing_blob_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_scenario(&small(), &p).unwrap();
        let pump = dir.path().join("m.pump.bin");
        let mut bytes = fs::read(&pump).unwrap();
        bytes[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&pump, &bytes).unwrap();
        let msg = read_scenario(&p).unwrap_err().to_string();
        assert!(
            msg.contains("non-finite") && msg.contains("byte offset 16"),
            "{msg}"
        );
        fs::remove_file(&pump).unwrap();
        assert!(read_scenario(&p)
            .unwrap_err()
            .to_string()
            .contains("missing blob"));
    }

    #[test]
    fn write_to_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("no/such/dir/s.json");
        assert!(matches!(
            write_scenario(&small(), &p),
            Err(Error::Io { .. })
        ));
    }
}
