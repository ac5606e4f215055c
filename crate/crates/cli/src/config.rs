//! Project and run-spec files. Relative paths resolve against the directory
//! of the file that names them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermonet::circuit::{CellKind, FlavorSetup, Stimulus, SweepSpec};
use thermonet::compact::{CompactModelParams, ModelCard};
use thermonet::fosterfit::FosterNetwork;
use thermonet::geometry::{GeometryConfig, MaterialTable};
use thermonet::heatsolve::SolverConfig;
use thermonet::nid::DeconvConfig;
use thermonet::xnet::{AssemblyConfig, DevicePairThermalModel, ModelJson};
use thermonet::{Device, Error, Flavor, Result};

use crate::artifacts::ConfigHash;

/// Environment variable that overrides every output directory.
pub const OUT_ENV: &str = "THERMONET_OUT";

/// Offset added to the global seed for the ladder fits of flavor `k`.
const FIT_SEED_OFFSET: u64 = 1000;

/// Seed of the ladder fits for one flavor.
pub fn fit_seed(global: u64, flavor: Flavor) -> u64 {
    global.wrapping_add(FIT_SEED_OFFSET + flavor as u64)
}

/// Which cards the circuit stage simulates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CardSource {
    /// Default cards calibrated to the device powers.
    #[default]
    Calibrated,
    /// Cards extracted from the reference curves in the same run.
    Extracted,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub flavors: Vec<Flavor>,
    /// Geometry config per flavor.
    pub geometry: BTreeMap<Flavor, PathBuf>,
    /// Material table replacing the one inside each geometry config.
    #[serde(default)]
    pub materials: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub deconv: DeconvConfig,
    /// Ladder-fit settings; the GA seed inside is replaced by one derived from `seed`.
    #[serde(default)]
    pub assembly: AssemblyConfig,
    #[serde(default)]
    pub cards: CardSource,
    /// Sweep spec file.
    pub scenario: PathBuf,
}

/// A project config with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub geometry: BTreeMap<Flavor, GeometryConfig>,
    pub sweep: SweepSpec,
    pub config_hash: String,
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn utf8(path: &Path, data: Vec<u8>) -> Result<String> {
    String::from_utf8(data).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reads a JSON file into `T`, hashing its bytes.
pub fn read_json<T: serde::de::DeserializeOwned>(hash: &mut ConfigHash, label: &str, path: &Path) -> Result<T> {
    let text = utf8(path, hash.file(label, path)?)?;
    parse_json(path, &text)
}

impl Project {
    /// Loads the project file and everything it names, failing before any
    /// computation when a path is missing or malformed.
    pub fn load(path: &Path) -> Result<Self> {
        let mut hash = ConfigHash::default();
        let config: ProjectConfig = read_json(&mut hash, "project", path)?;
        let base = dir_of(path);
        if config.flavors.is_empty() {
            return Err(Error::Config("project lists no flavors".into()));
        }
        config.solver.validate()?;
        config.deconv.validate()?;
        config.assembly.ga.validate()?;
        let materials: Option<MaterialTable> = match &config.materials {
            Some(p) => {
                let m: MaterialTable = read_json(&mut hash, "materials", &resolve(&base, p))?;
                m.validate()?;
                Some(m)
            }
            None => None,
        };
        let mut geometry = BTreeMap::new();
        for &f in &config.flavors {
            let p = config.geometry.get(&f).ok_or_else(|| Error::Config(format!("no geometry config for flavor {f}")))?;
            let p = resolve(&base, p);
            let text = utf8(&p, hash.file(&format!("geometry-{f}"), &p)?)?;
            let mut g = GeometryConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            if g.geometry.arrangement.flavor() != f {
                return Err(Error::Config(format!("{} describes a {} layout, not {f}", p.display(), g.geometry.arrangement.flavor())));
            }
            if let Some(m) = &materials {
                g.materials = m.clone();
            }
            geometry.insert(f, g);
        }
        let sweep: SweepSpec = read_json(&mut hash, "scenario", &resolve(&base, &config.scenario))?;
        if let Some(f) = sweep.flavors.iter().find(|f| !config.flavors.contains(f)) {
            return Err(Error::Config(format!("scenario asks for flavor {f}, which the project does not build")));
        }
        Ok(Project { config, geometry, sweep, config_hash: hash.finish() })
    }

    /// Output directory: the override, else the environment variable, else the config's.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        output_dir(cli).unwrap_or_else(|| self.config.output_dir.clone())
    }

    pub fn assembly_for(&self, flavor: Flavor) -> AssemblyConfig {
        let mut a = self.config.assembly.clone();
        a.ga.seed = fit_seed(self.config.seed, flavor);
        a.ambient = self.config.solver.ambient;
        a
    }
}

/// `--out`, then the environment variable.
pub fn output_dir(cli: Option<&Path>) -> Option<PathBuf> {
    cli.map(Path::to_path_buf).or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// NFET and PFET card files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardFiles {
    pub n: PathBuf,
    pub p: PathBuf,
}

/// Single-cell transient run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct CellSpec {
    pub cell: CellKind,
    pub c_load_fF: f64,
    pub flavor: Flavor,
    #[serde(default)]
    pub shmod: u8,
    #[serde(default)]
    pub stimulus: Stimulus,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Default: cards calibrated for `flavor`.
    #[serde(default)]
    pub cards: Option<CardFiles>,
    /// Pair-model JSON; required when `shmod` is 1.
    #[serde(default)]
    pub thermal: Option<PathBuf>,
}

/// Ring-oscillator transient run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RoSpec {
    pub stages: usize,
    pub c_per_stage_fF: f64,
    pub flavor: Flavor,
    #[serde(default)]
    pub shmod: u8,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub cards: Option<CardFiles>,
    #[serde(default)]
    pub thermal: Option<PathBuf>,
}

/// Models for one flavor of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFiles {
    #[serde(default)]
    pub cards: Option<CardFiles>,
    pub thermal: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub sweep: SweepSpec,
    pub models: BTreeMap<Flavor, ModelFiles>,
}

pub fn load_card(hash: &mut ConfigHash, path: &Path, want: Device) -> Result<CompactModelParams> {
    let card: ModelCard = read_json(hash, &format!("card-{want}"), path)?;
    if card.params.polarity != want {
        return Err(Error::Config(format!("{} holds a {} card where a {want} card is needed", path.display(), card.params.polarity)));
    }
    card.params.validate()?;
    Ok(card.params)
}

pub fn load_thermal(hash: &mut ConfigHash, path: &Path) -> Result<DevicePairThermalModel> {
    let j: ModelJson = read_json(hash, "thermal", path)?;
    DevicePairThermalModel::from_json(&j)
}

/// Pair model with every ladder empty: device temperatures stay at ambient.
pub fn isothermal_model(t0: f64) -> DevicePairThermalModel {
    let e = || FosterNetwork::new(Vec::new()).expect("empty ladder");
    DevicePairThermalModel::new(e(), e(), e(), e(), t0).expect("empty model")
}

/// Cards and thermal model for one flavor. Without a thermal file the
/// model is isothermal, which is only allowed when `shmod` is 0.
pub fn flavor_setup(
    hash: &mut ConfigHash,
    base: &Path,
    flavor: Flavor,
    cards: Option<&CardFiles>,
    thermal: Option<&Path>,
    shmod: u8,
) -> Result<FlavorSetup> {
    let cards = match cards {
        Some(c) => [load_card(hash, &resolve(base, &c.n), Device::N)?, load_card(hash, &resolve(base, &c.p), Device::P)?],
        None => Device::BOTH.map(|d| CompactModelParams::calibrated(flavor, d)),
    };
    let thermal = match thermal {
        Some(p) => load_thermal(hash, &resolve(base, p))?,
        None if shmod == 1 => return Err(Error::Config(format!("shmod=1 for {flavor} needs a thermal pair model"))),
        None => isothermal_model(cards[0].t0),
    };
    Ok(FlavorSetup { cards, thermal })
}

pub fn spec_dir(path: &Path) -> PathBuf {
    dir_of(path)
}

/// Solver, deconvolution or GA settings from an optional file, else defaults.
pub fn settings<T: serde::de::DeserializeOwned + Default + Serialize>(hash: &mut ConfigHash, label: &str, path: Option<&Path>) -> Result<T> {
    let v = match path {
        Some(p) => read_json(hash, label, p)?,
        None => T::default(),
    };
    hash.value(label, &v)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_flavor_seeds_differ_and_are_fixed() {
        assert_ne!(fit_seed(5, Flavor::Nsfet), fit_seed(5, Flavor::Cfet));
        assert_eq!(fit_seed(5, Flavor::Nsfet), 1005);
    }

    #[test]
    fn missing_project_is_a_config_error() {
        let err = Project::load(Path::new("/nonexistent/project.json")).unwrap_err();
        assert_eq!(err.kind(), thermonet::ErrorKind::Config);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        assert_eq!(resolve(Path::new("cfg"), Path::new("a.json")), PathBuf::from("cfg/a.json"));
        assert_eq!(resolve(Path::new("cfg"), Path::new("/a.json")), PathBuf::from("/a.json"));
    }
}
