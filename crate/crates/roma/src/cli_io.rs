//! Configuration, dataset ingestion, and machine-readable result emission
//! for the command-line front end.
//!
//! Configs are TOML; datasets are CSV with column roles declared in the
//! config; results are line-delimited JSON records (each tagged with a
//! schema version) plus a flat CSV for plotting tools. Numbers serialize
//! as shortest round-trip decimals.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomaError};
use crate::estimator::{fit, EffectKind, MediationFit};
use crate::inference::{
    ci_nde_with, ci_nie_with, residual_covariances, test_nde_with, test_nie_with, CdfMethod,
    Interval, ResidualCovariances,
};
use crate::kernels::{KernelSpec, KernelSummary};
use crate::object_spaces::{HilbertVector, MetricKind, ObjectPoint, QuantileGridSpec};
use crate::simulation::{
    run_campaign, CampaignConfig, Dataset, KernelMode, ReplicationReport, ScenarioId, ScenarioSpec,
    TuningMode,
};
use crate::tuning::{select, GcvTrace, KernelFamily, SelectConfig, Selection};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Declared object type of a dataset variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Euclidean,
    DistributionSamples,
    DistributionQuantiles,
    Composition,
    Spd,
}

impl ColumnType {
    pub fn metric(&self) -> MetricKind {
        match self {
            ColumnType::Euclidean => MetricKind::Euclidean,
            ColumnType::DistributionSamples | ColumnType::DistributionQuantiles => {
                MetricKind::Wasserstein2
            }
            ColumnType::Composition => MetricKind::SphericalComposition,
            ColumnType::Spd => MetricKind::Frobenius,
        }
    }
}

/// Column binding for one variable: an explicit column list or a
/// prefix/count pair expanding to `prefix1..prefixN`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ColumnSpec {
    #[serde(rename = "type")]
    pub column_type: Option<ColumnType>,
    #[serde(default)]
    pub cols: Option<Vec<String>>,
    #[serde(default)]
    pub prefix: Option<String>,
    #[serde(default)]
    pub count: Option<usize>,
}

impl ColumnSpec {
    fn column_type(&self) -> Result<&ColumnType> {
        self.column_type
            .as_ref()
            .ok_or_else(|| RomaError::Config("column spec is missing its type".into()))
    }

    fn resolve_names(&self) -> Result<Vec<String>> {
        if let Some(cols) = &self.cols {
            if cols.is_empty() {
                return Err(RomaError::Config("empty column list".into()));
            }
            return Ok(cols.clone());
        }
        match (&self.prefix, self.count) {
            (Some(prefix), Some(count)) if count > 0 => {
                Ok((1..=count).map(|i| format!("{prefix}{i}")).collect())
            }
            _ => Err(RomaError::Config(
                "column spec needs either `cols` or `prefix` with `count`".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub path: Option<String>,
    pub exposure: ColumnSpec,
    pub mediator: ColumnSpec,
    pub outcome: ColumnSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: String,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub offset: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { kind: "linear".into(), bandwidth: None, offset: None }
    }
}

fn default_grid_size() -> usize {
    crate::object_spaces::DEFAULT_QUANTILE_GRID
}

fn default_eps_grid_size() -> usize {
    20
}

fn default_bandwidth_grid_size() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub kernel_x: KernelConfig,
    #[serde(default)]
    pub kernel_m: KernelConfig,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_tilde: Option<f64>,
    #[serde(default = "default_eps_grid_size")]
    pub eps_grid_size: usize,
    #[serde(default = "default_bandwidth_grid_size")]
    pub bandwidth_grid_size: usize,
    #[serde(default)]
    pub exhaustive: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid_size: default_grid_size(),
            kernel_x: KernelConfig::default(),
            kernel_m: KernelConfig::default(),
            eps: None,
            eps_tilde: None,
            eps_grid_size: default_eps_grid_size(),
            bandwidth_grid_size: default_bandwidth_grid_size(),
            exhaustive: false,
        }
    }
}

/// Directions for directional confidence intervals: the outcome grid's
/// pointwise evaluation functionals, or explicit coordinate vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionsConfig {
    Named(String),
    Vectors(Vec<Vec<f64>>),
}

impl Default for DirectionsConfig {
    fn default() -> Self {
        DirectionsConfig::Named("grid".into())
    }
}

fn default_level_q() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_level_q")]
    pub level_q: f64,
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub directions: DirectionsConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            level_q: default_level_q(),
            truncation: None,
            directions: DirectionsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub x: Vec<f64>,
    pub x_star: Vec<f64>,
}

/// Full run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    pub contrast: ContrastConfig,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| RomaError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| RomaError::Config(format!("cannot parse config {}: {e}", path.display())))?;
    if !(cfg.inference.level_q > 0.0 && cfg.inference.level_q < 1.0) {
        return Err(RomaError::Config(format!(
            "level_q must lie in (0,1), got {}",
            cfg.inference.level_q
        )));
    }
    if cfg.inference.truncation == Some(0) {
        return Err(RomaError::Config("truncation must be ≥ 1".into()));
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        RomaError::Data(format!("row {row}, column {col}: cannot parse `{raw}` as a number"))
    })
}

fn build_point(ty: &ColumnType, values: Vec<f64>, row: usize) -> Result<ObjectPoint> {
    let with_row = |e: RomaError| RomaError::Data(format!("row {row}: {e}"));
    match ty {
        ColumnType::Euclidean => ObjectPoint::euclidean(values).map_err(with_row),
        ColumnType::DistributionSamples => {
            ObjectPoint::empirical_distribution(values).map_err(with_row)
        }
        ColumnType::DistributionQuantiles => ObjectPoint::quantile_grid(values).map_err(with_row),
        ColumnType::Composition => ObjectPoint::composition(values).map_err(with_row),
        ColumnType::Spd => {
            let p = (values.len() as f64).sqrt().round() as usize;
            if p * p != values.len() {
                return Err(RomaError::Data(format!(
                    "row {row}: SPD variable has {} values, not a perfect square",
                    values.len()
                )));
            }
            let m = DMatrix::from_row_slice(p, p, &values);
            ObjectPoint::spd_matrix(m).map_err(with_row)
        }
    }
}

/// Reads a CSV dataset under the declared column roles. Schema violations
/// are reported with row and column coordinates.
pub fn read_dataset(path: &Path, cfg: &DataConfig) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| RomaError::Data(format!("cannot open dataset {}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader
            .headers()
            .map_err(|e| RomaError::Data(format!("bad CSV header: {e}")))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();

    let resolve = |spec: &ColumnSpec, label: &str| -> Result<(ColumnType, Vec<usize>)> {
        let ty = spec.column_type()?.clone();
        let names = spec.resolve_names()?;
        let mut idx = Vec::with_capacity(names.len());
        for name in &names {
            match headers.iter().position(|h| h == name) {
                Some(i) => idx.push(i),
                None => {
                    return Err(RomaError::Data(format!(
                        "{label} column `{name}` not found in header"
                    )))
                }
            }
        }
        Ok((ty, idx))
    };

    let (tx, ix) = resolve(&cfg.exposure, "exposure")?;
    let (tm, im) = resolve(&cfg.mediator, "mediator")?;
    let (ty, iy) = resolve(&cfg.outcome, "outcome")?;

    let mut xs = Vec::new();
    let mut ms = Vec::new();
    let mut ys = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2; // 1-based, after the header line
        let record =
            record.map_err(|e| RomaError::Data(format!("row {row}: malformed record: {e}")))?;
        let take = |ty: &ColumnType, idx: &[usize]| -> Result<ObjectPoint> {
            let mut vals = Vec::with_capacity(idx.len());
            for &i in idx {
                let raw = record.get(i).ok_or_else(|| {
                    RomaError::Data(format!("row {row}: missing column {} (ragged row)", headers[i]))
                })?;
                if raw.is_empty() {
                    return Err(RomaError::Data(format!(
                        "row {row}, column {}: empty cell (ragged row)",
                        headers[i]
                    )));
                }
                vals.push(parse_cell(raw, row, &headers[i])?);
            }
            build_point(ty, vals, row)
        };
        xs.push(take(&tx, &ix)?);
        ms.push(take(&tm, &im)?);
        ys.push(take(&ty, &iy)?);
    }
    if xs.is_empty() {
        return Err(RomaError::Data(format!("dataset {} has no rows", path.display())));
    }
    Ok(Dataset { x: xs, m: ms, y: ys })
}

fn contrast_point(ty: &ColumnType, values: &[f64]) -> Result<ObjectPoint> {
    build_point(ty, values.to_vec(), 0)
        .map_err(|e| RomaError::Config(format!("bad contrast point: {e}")))
}

// ---------------------------------------------------------------------------
// Tuning + fitting from a config
// ---------------------------------------------------------------------------

fn kernel_family(
    cfg: &KernelConfig,
    metric: MetricKind,
    anchor: &ObjectPoint,
) -> Result<KernelFamily> {
    match cfg.kind.as_str() {
        "linear" => {
            let spec = match cfg.offset {
                Some(c) => KernelSpec::linear_with_offset(metric, c)?,
                None => KernelSpec::linear(metric),
            };
            Ok(KernelFamily::Fixed(spec))
        }
        "gaussian" => match cfg.bandwidth {
            Some(b) => Ok(KernelFamily::Fixed(KernelSpec::gaussian(metric, b)?)),
            None => Ok(KernelFamily::GaussianAuto { metric }),
        },
        "distance_induced" => {
            Ok(KernelFamily::Fixed(KernelSpec::distance_induced(metric, anchor.clone())))
        }
        other => Err(RomaError::Config(format!("unknown kernel kind `{other}`"))),
    }
}

/// Tuned model plus the selection trace.
pub struct TunedFit {
    pub selection: Selection,
    pub fit: MediationFit,
}

pub fn tune_and_fit(cfg: &RunConfig, data: &Dataset) -> Result<TunedFit> {
    let fx = kernel_family(&cfg.model.kernel_x, cfg.data.exposure.column_type()?.metric(), &data.x[0])?;
    let fm = kernel_family(&cfg.model.kernel_m, cfg.data.mediator.column_type()?.metric(), &data.m[0])?;
    let grid = QuantileGridSpec::midpoints(cfg.model.grid_size);
    let sel_cfg = SelectConfig {
        eps_grid: cfg.model.eps.map(|e| vec![e]),
        eps_tilde_grid: cfg.model.eps_tilde.map(|e| vec![e]),
        eps_grid_size: cfg.model.eps_grid_size,
        bandwidth_grid_size: cfg.model.bandwidth_grid_size,
        exhaustive: cfg.model.exhaustive,
    };
    let selection = select(&data.x, &data.m, &data.y, &fx, &fm, &grid, &sel_cfg)?;
    let fitted = fit(
        &data.x,
        &data.m,
        &data.y,
        selection.kernel_x.clone(),
        selection.kernel_m.clone(),
        selection.eps,
        selection.eps_tilde,
        &grid,
    )?;
    Ok(TunedFit { selection, fit: fitted })
}

// ---------------------------------------------------------------------------
// Output records
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitSummaryRecord {
    pub schema: String,
    pub n: usize,
    pub outcome_dim: usize,
    pub kernel_x: KernelSummary,
    pub kernel_m: KernelSummary,
    pub eps: f64,
    pub eps_tilde: f64,
    pub gcv_mediator_best: f64,
    pub gcv_outcome_best: f64,
    pub effective_df: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GcvRecord {
    pub schema: String,
    pub model: String,
    pub eps: f64,
    pub bandwidth_x: Option<f64>,
    pub bandwidth_m: Option<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectRecord {
    pub schema: String,
    pub kind: String,
    /// Grid levels for functional outcomes; absent for scalar ones.
    pub grid: Option<Vec<f64>>,
    /// Effect in unweighted function values (or the scalar effect).
    pub estimate: Vec<f64>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub spectrum: Option<Vec<f64>>,
    pub cdf_method: Option<String>,
    pub variance_warning: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveRecord {
    pub schema: String,
    pub label: String,
    pub grid: Vec<f64>,
    /// Monotone-projected quantile values.
    pub quantile_values: Vec<f64>,
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| RomaError::Numerical(format!("serialization: {e}")))
}

fn gcv_records(trace: &GcvTrace, model: &str) -> Vec<GcvRecord> {
    trace
        .candidates
        .iter()
        .zip(trace.scores.iter())
        .map(|(c, &score)| GcvRecord {
            schema: "roma.gcv/v1".into(),
            model: model.into(),
            eps: c.eps,
            bandwidth_x: c.bandwidth_x,
            bandwidth_m: c.bandwidth_m,
            score,
        })
        .collect()
}

/// Pool-adjacent-violators projection onto nondecreasing sequences.
pub fn isotonic_projection(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    for &v in values {
        level.push(v);
        weight.push(1.0);
        while level.len() > 1 {
            let k = level.len();
            if level[k - 2] <= level[k - 1] {
                break;
            }
            let w = weight[k - 2] + weight[k - 1];
            let merged = (level[k - 2] * weight[k - 2] + level[k - 1] * weight[k - 1]) / w;
            level.truncate(k - 2);
            weight.truncate(k - 2);
            level.push(merged);
            weight.push(w);
        }
    }
    let mut out = Vec::with_capacity(n);
    for (lv, w) in level.iter().zip(weight.iter()) {
        for _ in 0..(*w as usize) {
            out.push(*lv);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Fits the model under the config and writes the selection summary, the
/// GCV traces (JSONL + CSV), and fit diagnostics.
pub fn cmd_fit(cfg: &RunConfig, data: &Dataset, out_prefix: &Path) -> Result<Vec<PathBuf>> {
    let tuned = tune_and_fit(cfg, data)?;
    let rc = residual_covariances(&tuned.fit)?;
    let summary = FitSummaryRecord {
        schema: "roma.fit/v1".into(),
        n: tuned.fit.n(),
        outcome_dim: tuned.fit.outcome_dim(),
        kernel_x: tuned.fit.kernel_x().summary(),
        kernel_m: tuned.fit.kernel_m().summary(),
        eps: tuned.selection.eps,
        eps_tilde: tuned.selection.eps_tilde,
        gcv_mediator_best: tuned.selection.trace_phi.best().1,
        gcv_outcome_best: tuned.selection.trace_outcome.best().1,
        effective_df: rc.df,
    };
    let mut lines = vec![json_line(&summary)?];
    for rec in gcv_records(&tuned.selection.trace_phi, "mediator")
        .iter()
        .chain(gcv_records(&tuned.selection.trace_outcome, "outcome").iter())
    {
        lines.push(json_line(rec)?);
    }
    let jsonl = out_prefix.with_extension("fit.jsonl");
    write_lines(&jsonl, &lines)?;

    let mut csv_lines = vec!["model,eps,bandwidth_x,bandwidth_m,score".to_string()];
    for rec in gcv_records(&tuned.selection.trace_phi, "mediator")
        .iter()
        .chain(gcv_records(&tuned.selection.trace_outcome, "outcome").iter())
    {
        csv_lines.push(format!(
            "{},{},{},{},{}",
            rec.model,
            rec.eps,
            rec.bandwidth_x.map_or(String::new(), |v| v.to_string()),
            rec.bandwidth_m.map_or(String::new(), |v| v.to_string()),
            rec.score
        ));
    }
    let csv_path = out_prefix.with_extension("gcv.csv");
    write_lines(&csv_path, &csv_lines)?;
    Ok(vec![jsonl, csv_path])
}

fn directions_for(
    cfg: &InferenceConfig,
    grid: &QuantileGridSpec,
    d: usize,
) -> Result<Vec<DVector<f64>>> {
    match &cfg.directions {
        DirectionsConfig::Named(name) if name == "grid" => {
            if d == 1 {
                Ok(vec![DVector::from_vec(vec![1.0])])
            } else {
                Ok((0..d).map(|k| HilbertVector::pointwise_direction(grid, k)).collect())
            }
        }
        DirectionsConfig::Named(other) => {
            Err(RomaError::Config(format!("unknown directions mode `{other}`")))
        }
        DirectionsConfig::Vectors(vs) => {
            if vs.is_empty() {
                return Err(RomaError::Config("empty direction list".into()));
            }
            vs.iter()
                .map(|v| {
                    if v.len() != d {
                        Err(RomaError::Config(format!(
                            "direction of length {} does not match outcome dimension {d}",
                            v.len()
                        )))
                    } else {
                        Ok(DVector::from_vec(v.clone()))
                    }
                })
                .collect()
        }
    }
}

struct EffectBundle {
    kind: EffectKind,
    estimate: Vec<f64>,
    cis: Option<Vec<Interval>>,
    statistic: Option<f64>,
    p_value: Option<f64>,
    spectrum: Option<Vec<f64>>,
    cdf_method: Option<CdfMethod>,
}

fn effect_values(v: &HilbertVector) -> Vec<f64> {
    match v.grid_values() {
        Some(vals) => vals,
        None => v.coords.iter().cloned().collect(),
    }
}

/// Estimates effects, intervals, and global tests under the config and
/// writes them as JSONL and CSV; functional outcomes also get the
/// monotone-projected potential-outcome quantile curves.
pub fn cmd_effects(cfg: &RunConfig, data: &Dataset, out_prefix: &Path) -> Result<Vec<PathBuf>> {
    let tuned = tune_and_fit(cfg, data)?;
    let model = &tuned.fit;
    let exposure_type = cfg.data.exposure.column_type()?;
    let x = contrast_point(exposure_type, &cfg.contrast.x)?;
    let xs = contrast_point(exposure_type, &cfg.contrast.x_star)?;
    let rc: ResidualCovariances = residual_covariances(model)?;
    let grid = model.grid().clone();
    let d = model.outcome_dim();
    let dirs = directions_for(&cfg.inference, &grid, d)?;
    let q = cfg.inference.level_q;
    let l = cfg.inference.truncation.unwrap_or_else(|| model.n().min(d)).min(model.n().min(d));

    let nde = model.estimate_nde(&x, &xs)?;
    let nie = model.estimate_nie(&x, &xs)?;
    let te = model.estimate_te(&x, &xs)?;
    let t_nde = test_nde_with(model, &rc, &x, &xs, l)?;
    let t_nie = test_nie_with(model, &rc, &x, &xs, l)?;

    let nde_cis: Vec<Interval> =
        dirs.iter().map(|v| ci_nde_with(model, &rc, &x, &xs, v, q)).collect::<Result<_>>()?;
    let nie_cis: Vec<Interval> =
        dirs.iter().map(|v| ci_nie_with(model, &rc, &x, &xs, v, q)).collect::<Result<_>>()?;

    let bundles = [
        EffectBundle {
            kind: EffectKind::Nde,
            estimate: effect_values(&nde.value),
            cis: Some(nde_cis),
            statistic: Some(t_nde.statistic),
            p_value: Some(t_nde.p_value),
            spectrum: Some(t_nde.spectrum.clone()),
            cdf_method: Some(t_nde.cdf_method),
        },
        EffectBundle {
            kind: EffectKind::Nie,
            estimate: effect_values(&nie.value),
            cis: Some(nie_cis),
            statistic: Some(t_nie.statistic),
            p_value: Some(t_nie.p_value),
            spectrum: Some(t_nie.spectrum.clone()),
            cdf_method: Some(t_nie.cdf_method),
        },
        EffectBundle {
            kind: EffectKind::Te,
            estimate: effect_values(&te.value),
            cis: None,
            statistic: None,
            p_value: None,
            spectrum: None,
            cdf_method: None,
        },
    ];

    let grid_levels: Option<Vec<f64>> = if d > 1 { Some(grid.levels().to_vec()) } else { None };
    let mut lines = Vec::new();
    let mut csv_lines = vec!["effect,index,grid_level,estimate,ci_lower,ci_upper".to_string()];
    for b in &bundles {
        let record = EffectRecord {
            schema: "roma.effect/v1".into(),
            kind: b.kind.label().into(),
            grid: grid_levels.clone(),
            estimate: b.estimate.clone(),
            ci_lower: b.cis.as_ref().map(|cis| cis.iter().map(|c| c.lower()).collect()),
            ci_upper: b.cis.as_ref().map(|cis| cis.iter().map(|c| c.upper()).collect()),
            statistic: b.statistic,
            p_value: b.p_value,
            spectrum: b.spectrum.clone(),
            cdf_method: b.cdf_method.map(|m| format!("{m:?}")),
            variance_warning: b
                .cis
                .as_ref()
                .map_or(false, |cis| cis.iter().any(|c| c.variance_warning)),
        };
        lines.push(json_line(&record)?);
        for (i, est) in b.estimate.iter().enumerate() {
            let level = grid_levels.as_ref().map_or(String::new(), |g| g[i].to_string());
            let (lo, hi) = match &b.cis {
                Some(cis) if cis.len() == b.estimate.len() => {
                    (cis[i].lower().to_string(), cis[i].upper().to_string())
                }
                _ => (String::new(), String::new()),
            };
            csv_lines.push(format!("{},{},{},{},{},{}", b.kind.label(), i, level, est, lo, hi));
        }
    }

    // Potential-outcome quantile curves for distributional outcomes,
    // projected onto monotone functions before emission.
    if d > 1 {
        for (label, point) in [("potential_outcome_x", &x), ("potential_outcome_x_star", &xs)] {
            let curve = model.potential_outcome_curve(point)?;
            let vals = curve.grid_values().unwrap_or_default();
            let record = CurveRecord {
                schema: "roma.curve/v1".into(),
                label: label.into(),
                grid: grid.levels().to_vec(),
                quantile_values: isotonic_projection(&vals),
            };
            lines.push(json_line(&record)?);
        }
    }

    let jsonl = out_prefix.with_extension("effects.jsonl");
    write_lines(&jsonl, &lines)?;
    let csv_path = out_prefix.with_extension("effects.csv");
    write_lines(&csv_path, &csv_lines)?;
    Ok(vec![jsonl, csv_path])
}

// ---------------------------------------------------------------------------
// Simulation command
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub mode: Option<String>,
    pub grid_size: usize,
    pub level_q: f64,
    pub truncation: Option<usize>,
    pub contrast: (f64, f64),
    pub oracle_draws: usize,
    /// Fixed (ε, ε̃) fast mode; GCV per replicate when absent.
    pub fixed: Option<(f64, f64)>,
    pub bandwidth_x: Option<f64>,
    pub bandwidth_m: Option<f64>,
}

/// Runs a replication campaign and writes the report as JSON plus a flat
/// CSV of the headline metrics.
pub fn cmd_simulate(args: &SimulateArgs, out_prefix: &Path) -> Result<ReplicationReport> {
    let id = ScenarioId::parse(&args.scenario)?;
    let mode = match args.mode.as_deref() {
        None => id.default_kernel_mode(),
        Some("linear") => KernelMode::Linear,
        Some("nonlinear") => KernelMode::Nonlinear,
        Some(other) => return Err(RomaError::Config(format!("unknown kernel mode `{other}`"))),
    };
    let mut spec = ScenarioSpec::new(id, args.n, args.m, args.seed, mode)?;
    spec.grid_size = args.grid_size;
    let mut cfg = CampaignConfig::new(args.reps);
    cfg.level_q = args.level_q;
    cfg.truncation = args.truncation;
    cfg.contrast = args.contrast;
    cfg.oracle_draws = args.oracle_draws;
    if let Some((eps, eps_tilde)) = args.fixed {
        cfg.tuning = TuningMode::Fixed {
            eps,
            eps_tilde,
            bandwidth_x: args.bandwidth_x,
            bandwidth_m: args.bandwidth_m,
        };
    }
    let report = run_campaign(&spec, &cfg)?;

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| RomaError::Numerical(format!("serialization: {e}")))?;
    fs::write(out_prefix.with_extension("report.json"), json)?;

    let csv = vec![
        "scenario,kernel_mode,n,m,reps,failures,mse_te,mse_te_se,mse_nde,mse_nde_se,mse_nie,mse_nie_se,coverage_nde,coverage_nie,rejection_nde,rejection_nie".to_string(),
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            report.scenario,
            report.kernel_mode,
            report.n,
            report.m,
            report.reps_completed,
            report.failures,
            report.mse_te.mean,
            report.mse_te.se,
            report.mse_nde.mean,
            report.mse_nde.se,
            report.mse_nie.mean,
            report.mse_nie.se,
            report.coverage_nde,
            report.coverage_nie,
            report.rejection_nde,
            report.rejection_nie
        ),
    ];
    write_lines(&out_prefix.with_extension("report.csv"), &csv)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_projection_cases() {
        assert_eq!(isotonic_projection(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        let proj = isotonic_projection(&[3.0, 1.0, 2.0]);
        assert!(proj.windows(2).all(|w| w[1] >= w[0]));
        // Projection preserves the mean.
        let mean: f64 = proj.iter().sum::<f64>() / 3.0;
        assert!((mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn column_spec_expansion() {
        let spec = ColumnSpec {
            column_type: Some(ColumnType::DistributionSamples),
            cols: None,
            prefix: Some("m".into()),
            count: Some(3),
        };
        assert_eq!(spec.resolve_names().unwrap(), vec!["m1", "m2", "m3"]);
        let bad = ColumnSpec { column_type: Some(ColumnType::Euclidean), ..Default::default() };
        assert!(bad.resolve_names().is_err());
    }

    #[test]
    fn directions_config_parses_both_forms() {
        let named: DirectionsConfig = toml::from_str::<toml::Value>("d = \"grid\"")
            .ok()
            .and_then(|v| v.get("d").cloned())
            .and_then(|v| v.try_into().ok())
            .unwrap();
        assert!(matches!(named, DirectionsConfig::Named(ref s) if s == "grid"));
        let vecs: DirectionsConfig = toml::from_str::<toml::Value>("d = [[1.0, 0.0]]")
            .ok()
            .and_then(|v| v.get("d").cloned())
            .and_then(|v| v.try_into().ok())
            .unwrap();
        assert!(matches!(vecs, DirectionsConfig::Vectors(ref v) if v.len() == 1));
    }
}
