//! INI run configuration.
//!
//! Sections: `[scenario]`, `[space]`, `[priors]`, `[mcmc]`, `[output]`.
//! Every key is optional; unknown sections or keys are rejected. The
//! resolved configuration, defaults included, is echoed into each run
//! directory and re-parses to the same value.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use spatcount::simulator::preset;
use spatcount::{Algorithm, McmcConfig, PriorSpec, Scenario, SigmaPrior, TrapLayout};

use crate::error::{CliError, CliResult};

/// Coordinate units and the area unit used to report density.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceConfig {
    /// Buffer around the trap bounding box in user units; `None` means three
    /// trap spacings.
    pub buffer: Option<f64>,
    /// Explicit `(xmin, xmax, ymin, ymax)` in user units; overrides `buffer`.
    pub bounds: Option<[f64; 4]>,
    /// Model units per user unit.
    pub unit_scale: f64,
    pub area_unit: String,
    /// Size of one area unit in squared user units.
    pub area_unit_size: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            buffer: None,
            bounds: None,
            unit_scale: 1.0,
            area_unit: "unit^2".into(),
            area_unit_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    /// Raster pixel side in user units; `None` means one trap spacing.
    pub pixel: Option<f64>,
    /// Also render the raster as a greyscale PGM image.
    pub image: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Option<Scenario>,
    pub space: SpaceConfig,
    pub priors: PriorSpec,
    pub mcmc: McmcConfig,
    pub output: OutputConfig,
}

/// Augmentation ceiling used when `[mcmc] augmentation` is not given.
pub fn default_augmentation(scenario: Option<&Scenario>) -> usize {
    match scenario {
        Some(s) => (3 * s.n_true).max(100),
        None => McmcConfig::default().augmentation,
    }
}

const SCENARIO_KEYS: &[&str] = &[
    "preset", "name", "rows", "cols", "spacing", "buffer", "sigma", "lambda0", "n_true",
    "occasions", "marked", "seed",
];
const SPACE_KEYS: &[&str] =
    &["buffer", "xmin", "xmax", "ymin", "ymax", "unit_scale", "area_unit", "area_unit_size"];
const PRIOR_KEYS: &[&str] = &["sigma", "sigma_upper", "sigma_shape", "sigma_rate", "lambda0_upper"];
const MCMC_KEYS: &[&str] = &[
    "algorithm",
    "iterations",
    "burn_in",
    "thin",
    "chains",
    "augmentation",
    "proposal_sd_s",
    "proposal_sd_log_sigma",
    "proposal_sd_log_lambda0",
    "adapt",
    "seed",
    "likelihood",
    "store_centers",
    "fixed_sigma",
    "fixed_lambda0",
    "validate_every",
];
const OUTPUT_KEYS: &[&str] = &["pixel", "image"];

/// Raw `section -> key -> value` table.
type Table = BTreeMap<String, BTreeMap<String, String>>;

struct Section<'a> {
    name: &'static str,
    keys: Option<&'a BTreeMap<String, String>>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.keys.and_then(|k| k.get(key)).map(|s| s.trim())
    }

    fn parse<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                CliError::config(format!("[{}] {key} = '{v}': {e}", self.name))
            }),
        }
    }

    /// Value where `auto`, `none` or an empty string mean unset.
    fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None | Some("") | Some("auto") | Some("none") => Ok(None),
            Some(_) => self.parse(key),
        }
    }

    fn flag(&self, key: &str) -> CliResult<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some("true" | "yes" | "on" | "1") => Ok(Some(true)),
            Some("false" | "no" | "off" | "0") => Ok(Some(false)),
            Some(v) => Err(CliError::config(format!(
                "[{}] {key} = '{v}': expected true or false",
                self.name
            ))),
        }
    }
}

fn read_table(text: &str) -> CliResult<Table> {
    let ini = Ini::load_from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
    let mut table = Table::new();
    for (section, props) in ini.iter() {
        let Some(section) = section else {
            if let Some((k, _)) = props.iter().next() {
                return Err(CliError::config(format!("key '{k}' outside of any section")));
            }
            continue;
        };
        let allowed = match section {
            "scenario" => SCENARIO_KEYS,
            "space" => SPACE_KEYS,
            "priors" => PRIOR_KEYS,
            "mcmc" => MCMC_KEYS,
            "output" => OUTPUT_KEYS,
            other => return Err(CliError::config(format!("unknown section [{other}]"))),
        };
        let entry = table.entry(section.to_string()).or_default();
        for (k, v) in props.iter() {
            if !allowed.contains(&k) {
                return Err(CliError::config(format!("unknown key '{k}' in [{section}]")));
            }
            entry.insert(k.to_string(), v.to_string());
        }
    }
    Ok(table)
}

fn section<'a>(table: &'a Table, name: &'static str) -> Section<'a> {
    Section { name, keys: table.get(name) }
}

fn parse_scenario(s: &Section<'_>) -> CliResult<Option<Scenario>> {
    if s.keys.is_none() {
        return Ok(None);
    }
    let base = match s.raw("preset") {
        Some(name) => Some(
            preset(name).ok_or_else(|| CliError::config(format!("unknown preset '{name}'")))?,
        ),
        None => None,
    };
    let need = |key: &str| CliError::config(format!("[scenario] {key} is required without a preset"));
    let (b_rows, b_cols, b_spacing) = match base.as_ref().map(|b| &b.layout) {
        Some(TrapLayout::Grid { rows, cols, spacing }) => (Some(*rows), Some(*cols), Some(*spacing)),
        _ => (None, None, None),
    };
    let rows = s.parse("rows")?.or(b_rows).ok_or_else(|| need("rows"))?;
    let cols = s.parse("cols")?.or(b_cols).ok_or_else(|| need("cols"))?;
    let spacing: f64 = s.parse("spacing")?.or(b_spacing).ok_or_else(|| need("spacing"))?;
    let scn = Scenario {
        name: s
            .raw("name")
            .map(str::to_string)
            .or_else(|| base.as_ref().map(|b| b.name.clone()))
            .unwrap_or_else(|| "custom".into()),
        layout: TrapLayout::Grid { rows, cols, spacing },
        buffer: s.parse("buffer")?.or(base.as_ref().map(|b| b.buffer)).unwrap_or(3.0 * spacing),
        sigma: s.parse("sigma")?.or(base.as_ref().map(|b| b.sigma)).ok_or_else(|| need("sigma"))?,
        lambda0: s
            .parse("lambda0")?
            .or(base.as_ref().map(|b| b.lambda0))
            .ok_or_else(|| need("lambda0"))?,
        n_true: s
            .parse("n_true")?
            .or(base.as_ref().map(|b| b.n_true))
            .ok_or_else(|| need("n_true"))?,
        occasions: s
            .parse("occasions")?
            .or(base.as_ref().map(|b| b.occasions))
            .ok_or_else(|| need("occasions"))?,
        marked: s.parse("marked")?.or(base.as_ref().map(|b| b.marked)).unwrap_or(0),
        seed: s.parse("seed")?.or(base.as_ref().map(|b| b.seed)).unwrap_or(1),
    };
    scn.validate().map_err(|e| CliError::config(format!("[scenario] {e}")))?;
    Ok(Some(scn))
}

fn parse_space(s: &Section<'_>) -> CliResult<SpaceConfig> {
    let d = SpaceConfig::default();
    let corners: Vec<Option<f64>> = ["xmin", "xmax", "ymin", "ymax"]
        .iter()
        .map(|k| s.parse(k))
        .collect::<CliResult<_>>()?;
    let bounds = match corners.as_slice() {
        [Some(a), Some(b), Some(c), Some(e)] => Some([*a, *b, *c, *e]),
        [None, None, None, None] => None,
        _ => return Err(CliError::config("[space] give all of xmin, xmax, ymin, ymax or none")),
    };
    let cfg = SpaceConfig {
        buffer: s.optional("buffer")?,
        bounds,
        unit_scale: s.parse("unit_scale")?.unwrap_or(d.unit_scale),
        area_unit: s.raw("area_unit").map(str::to_string).unwrap_or(d.area_unit),
        area_unit_size: s.parse("area_unit_size")?.unwrap_or(d.area_unit_size),
    };
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(cfg.unit_scale) || !positive(cfg.area_unit_size) {
        return Err(CliError::config("[space] unit_scale and area_unit_size must be positive"));
    }
    if let Some(b) = cfg.buffer {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(CliError::config(format!("[space] buffer must be non-negative, got {b}")));
        }
    }
    if let Some([a, b, c, e]) = cfg.bounds {
        if !(a < b && c < e) {
            return Err(CliError::config("[space] bounds must satisfy xmin < xmax and ymin < ymax"));
        }
    }
    if cfg.area_unit.contains(['\n', ',']) || cfg.area_unit.is_empty() {
        return Err(CliError::config("[space] area_unit must be a non-empty label without commas"));
    }
    Ok(cfg)
}

fn parse_priors(s: &Section<'_>) -> CliResult<PriorSpec> {
    let d = PriorSpec::default();
    let sigma = match s.raw("sigma").unwrap_or("uniform") {
        "uniform" => {
            if s.raw("sigma_shape").is_some() || s.raw("sigma_rate").is_some() {
                return Err(CliError::config("[priors] sigma_shape/sigma_rate need sigma = gamma"));
            }
            SigmaPrior::Uniform { upper: s.parse("sigma_upper")?.unwrap_or(100.0) }
        }
        "gamma" => {
            if s.raw("sigma_upper").is_some() {
                return Err(CliError::config("[priors] sigma_upper needs sigma = uniform"));
            }
            let need = |k: &str| CliError::config(format!("[priors] {k} is required for sigma = gamma"));
            SigmaPrior::Gamma {
                shape: s.parse("sigma_shape")?.ok_or_else(|| need("sigma_shape"))?,
                rate: s.parse("sigma_rate")?.ok_or_else(|| need("sigma_rate"))?,
            }
        }
        other => {
            return Err(CliError::config(format!(
                "[priors] sigma = '{other}': expected uniform or gamma"
            )))
        }
    };
    let priors = PriorSpec {
        sigma,
        lambda0_upper: s.parse("lambda0_upper")?.unwrap_or(d.lambda0_upper),
    };
    priors.validate().map_err(|e| CliError::config(format!("[priors] {e}")))?;
    Ok(priors)
}

fn parse_mcmc(s: &Section<'_>, scenario: Option<&Scenario>) -> CliResult<McmcConfig> {
    let d = McmcConfig::default();
    let cfg = McmcConfig {
        algorithm: s.parse::<Algorithm>("algorithm")?.unwrap_or(d.algorithm),
        iterations: s.parse("iterations")?.unwrap_or(d.iterations),
        burn_in: s.parse("burn_in")?.unwrap_or(d.burn_in),
        thin: s.parse("thin")?.unwrap_or(d.thin),
        chains: s.parse("chains")?.unwrap_or(d.chains),
        augmentation: s.parse("augmentation")?.unwrap_or_else(|| default_augmentation(scenario)),
        proposal_sd_s: s.optional("proposal_sd_s")?,
        proposal_sd_log_sigma: s.parse("proposal_sd_log_sigma")?.unwrap_or(d.proposal_sd_log_sigma),
        proposal_sd_log_lambda0: s
            .parse("proposal_sd_log_lambda0")?
            .unwrap_or(d.proposal_sd_log_lambda0),
        adapt: s.flag("adapt")?.unwrap_or(d.adapt),
        seed: s.parse("seed")?.unwrap_or(d.seed),
        likelihood: s.flag("likelihood")?.unwrap_or(d.likelihood),
        store_centers: s.flag("store_centers")?.unwrap_or(d.store_centers),
        fixed_sigma: s.optional("fixed_sigma")?,
        fixed_lambda0: s.optional("fixed_lambda0")?,
        validate_every: s.optional("validate_every")?,
        omit_sigma_jacobian: false,
    };
    cfg.validate().map_err(|e| CliError::config(format!("[mcmc] {e}")))?;
    Ok(cfg)
}

fn parse_output(s: &Section<'_>) -> CliResult<OutputConfig> {
    let out = OutputConfig {
        pixel: s.optional("pixel")?,
        image: s.flag("image")?.unwrap_or(false),
    };
    if let Some(p) = out.pixel {
        if !(p > 0.0 && p.is_finite()) {
            return Err(CliError::config(format!("[output] pixel must be positive, got {p}")));
        }
    }
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>, unset: &str) -> String {
    v.map_or_else(|| unset.to_string(), |v| v.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<RunConfig> {
        let table = read_table(text)?;
        let scenario = parse_scenario(&section(&table, "scenario"))?;
        Ok(RunConfig {
            space: parse_space(&section(&table, "space"))?,
            priors: parse_priors(&section(&table, "priors"))?,
            mcmc: parse_mcmc(&section(&table, "mcmc"), scenario.as_ref())?,
            output: parse_output(&section(&table, "output"))?,
            scenario,
        })
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::at(path, e))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Configuration holding only a preset scenario and defaults.
    pub fn from_preset(name: &str) -> CliResult<RunConfig> {
        Self::parse(&format!("[scenario]\npreset = {name}\n"))
    }

    /// Fully resolved `(section, [(key, value)])` listing.
    pub fn echo(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let mut out = Vec::new();
        if let Some(s) = &self.scenario {
            let TrapLayout::Grid { rows, cols, spacing } = s.layout else {
                unreachable!("configured scenarios use grid layouts")
            };
            out.push((
                "scenario",
                vec![
                    ("name", s.name.clone()),
                    ("rows", rows.to_string()),
                    ("cols", cols.to_string()),
                    ("spacing", spacing.to_string()),
                    ("buffer", s.buffer.to_string()),
                    ("sigma", s.sigma.to_string()),
                    ("lambda0", s.lambda0.to_string()),
                    ("n_true", s.n_true.to_string()),
                    ("occasions", s.occasions.to_string()),
                    ("marked", s.marked.to_string()),
                    ("seed", s.seed.to_string()),
                ],
            ));
        }
        let sp = &self.space;
        let mut space = vec![("buffer", opt(sp.buffer, "auto"))];
        if let Some(b) = sp.bounds {
            for (k, v) in ["xmin", "xmax", "ymin", "ymax"].into_iter().zip(b) {
                space.push((k, v.to_string()));
            }
        }
        space.push(("unit_scale", sp.unit_scale.to_string()));
        space.push(("area_unit", sp.area_unit.clone()));
        space.push(("area_unit_size", sp.area_unit_size.to_string()));
        out.push(("space", space));

        let mut priors = match self.priors.sigma {
            SigmaPrior::Uniform { upper } => {
                vec![("sigma", "uniform".to_string()), ("sigma_upper", upper.to_string())]
            }
            SigmaPrior::Gamma { shape, rate } => vec![
                ("sigma", "gamma".to_string()),
                ("sigma_shape", shape.to_string()),
                ("sigma_rate", rate.to_string()),
            ],
        };
        priors.push(("lambda0_upper", self.priors.lambda0_upper.to_string()));
        out.push(("priors", priors));

        let m = &self.mcmc;
        out.push((
            "mcmc",
            vec![
                ("algorithm", m.algorithm.to_string()),
                ("iterations", m.iterations.to_string()),
                ("burn_in", m.burn_in.to_string()),
                ("thin", m.thin.to_string()),
                ("chains", m.chains.to_string()),
                ("augmentation", m.augmentation.to_string()),
                ("proposal_sd_s", opt(m.proposal_sd_s, "auto")),
                ("proposal_sd_log_sigma", m.proposal_sd_log_sigma.to_string()),
                ("proposal_sd_log_lambda0", m.proposal_sd_log_lambda0.to_string()),
                ("adapt", m.adapt.to_string()),
                ("seed", m.seed.to_string()),
                ("likelihood", m.likelihood.to_string()),
                ("store_centers", m.store_centers.to_string()),
                ("fixed_sigma", opt(m.fixed_sigma, "none")),
                ("fixed_lambda0", opt(m.fixed_lambda0, "none")),
                ("validate_every", opt(m.validate_every, "none")),
            ],
        ));
        out.push((
            "output",
            vec![("pixel", opt(self.output.pixel, "auto")), ("image", self.output.image.to_string())],
        ));
        out
    }

    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        for (i, (name, keys)) in self.echo().into_iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            s.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for (name, keys) in self.echo() {
            let section: serde_json::Map<String, serde_json::Value> =
                keys.into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
            root.insert(name.to_string(), section.into());
        }
        root.into()
    }
}
