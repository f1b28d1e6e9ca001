//! Run configuration and stage orchestration for the command line tool.
//!
//! A run directory is `<output_dir>/run-<hash>`, where the hash covers the
//! configuration (minus paths and output location) and the bytes of every
//! input file. Each stage adds its sections to `manifest.json` in that
//! directory and writes its own artifacts; running the stages one at a time
//! leaves the same directory as a full pipeline run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assign::{assign_stations, assignments_csv, inject_loads, AssignError, Assignment};
use crate::evfleet::{find_peak, scenario_profile, Cohort, DemandProfile, ProfileError, ScenarioConfig, Schedule};
use crate::geoexport::{export_geojson, StyleConfig};
use crate::impact::{
    build_histogram, build_records, filter_by_ampacity, summarize, Category, Histogram, ImpactRecord, ImpactReport,
    Metric, SystemSummary,
};
use crate::netmodel::{parse_network, serialize_network, validate_radial, BusCatalog, Network, TopologyReport};
use crate::powerflow::{
    run_qsts, solve_snapshot, total_losses, Execution, LoadShape, PowerFlowError, PowerFlowSolution, QstsPlan,
    QstsResult, SolverConfig,
};
use crate::stations::{allocate_peak, parse_stations, Allocation, ClassWeights, EvStation, StationCensus};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";
const ALLOWED_DT_H: [f64; 3] = [0.25, 0.5, 1.0];

fn default_dt_h() -> f64 {
    1.0
}

fn default_steps() -> usize {
    8760
}

/// Everything one run needs. Relative paths resolve against the directory
/// holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network_path: PathBuf,
    pub stations_path: PathBuf,
    pub scenario: ScenarioConfig<f64>,
    #[serde(default)]
    pub schedule: Schedule<f64>,
    #[serde(default)]
    pub solver: SolverConfig<f64>,
    #[serde(default)]
    pub peak_kw_override: Option<f64>,
    #[serde(default)]
    pub ampacity_threshold_a: f64,
    pub output_dir: PathBuf,
    #[serde(default = "default_dt_h")]
    pub dt_h: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Assign stations to `transformer`-tagged buses instead of load buses.
    #[serde(default)]
    pub assign_to_tagged: bool,
    #[serde(default)]
    pub class_weights: ClassWeights<f64>,
    /// Optional base-load multiplier series, CSV `step,multiplier` sampled at
    /// `dt_h` and repeated cyclically.
    #[serde(default)]
    pub load_shape_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::config(format!("config document: {e}")))?;
        cfg.validate()?;
        cfg.network_path = base_dir.join(&cfg.network_path);
        cfg.stations_path = base_dir.join(&cfg.stations_path);
        cfg.output_dir = base_dir.join(&cfg.output_dir);
        cfg.load_shape_path = cfg.load_shape_path.map(|p| base_dir.join(p));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::io(None, format!("reading {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let empty = |p: &Path| p.as_os_str().is_empty();
        if empty(&self.network_path) || empty(&self.stations_path) || empty(&self.output_dir) {
            return Err(PipelineError::config("paths must be non-empty"));
        }
        if self.load_shape_path.as_deref().is_some_and(empty) {
            return Err(PipelineError::config("load_shape_path must be non-empty when given"));
        }
        if self.steps == 0 {
            return Err(PipelineError::config("steps must be >= 1"));
        }
        if !ALLOWED_DT_H.contains(&self.dt_h) {
            return Err(PipelineError::config(format!("dt_h must be one of {ALLOWED_DT_H:?}, got {}", self.dt_h)));
        }
        if let Some(p) = self.peak_kw_override {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(PipelineError::config("peak_kw_override must be finite and >= 0"));
            }
        }
        if !(self.ampacity_threshold_a >= 0.0) {
            return Err(PipelineError::config("ampacity_threshold_a must be >= 0"));
        }
        if self.class_weights.0.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(PipelineError::config("class weights must be finite and > 0"));
        }
        self.scenario.validate().map_err(|e| PipelineError::config(e.to_string()))?;
        self.solver.validate().map_err(|e| PipelineError::config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Validate,
    Profile,
    Assign,
    Run,
    Impact,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Validate, Stage::Profile, Stage::Assign, Stage::Run, Stage::Impact, Stage::Export];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Profile => "profile",
            Stage::Assign => "assign",
            Stage::Run => "run",
            Stage::Impact => "impact",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Io,
    Schema,
    Topology,
    Divergence,
    Invalid,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Io | FailureKind::Invalid => 1,
            FailureKind::Schema => 2,
            FailureKind::Topology => 3,
            FailureKind::Divergence => 4,
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Io => "i/o error",
            FailureKind::Schema => "schema error",
            FailureKind::Topology => "topology error",
            FailureKind::Divergence => "solver divergence",
            FailureKind::Invalid => "invalid data",
        })
    }
}

#[derive(Debug, Error)]
#[error("{}{kind}: {message}", stage.map(|s| format!("stage `{s}` failed, ")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Option<Stage>,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Option<Stage>, kind: FailureKind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(None, FailureKind::Schema, message)
    }

    fn io(stage: Option<Stage>, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::Io, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    fn at(mut self, stage: Stage) -> Self {
        self.stage.get_or_insert(stage);
        self
    }
}

fn profile_err(e: ProfileError) -> PipelineError {
    PipelineError::new(Some(Stage::Profile), FailureKind::Schema, e.to_string())
}

fn powerflow_err(e: PowerFlowError) -> PipelineError {
    let kind = match e {
        PowerFlowError::NotRadial { .. } => FailureKind::Topology,
        PowerFlowError::VoltageCollapse { .. } => FailureKind::Divergence,
        PowerFlowError::InvalidConfig(_) => FailureKind::Schema,
        _ => FailureKind::Invalid,
    };
    PipelineError::new(Some(Stage::Run), kind, e.to_string())
}

fn assign_err(e: AssignError) -> PipelineError {
    PipelineError::new(Some(Stage::Assign), FailureKind::Invalid, e.to_string())
}

/// Hex SHA-256 over the configuration and input bytes; paths and the output
/// location are left out so relocating inputs keeps the run directory.
pub fn config_hash(cfg: &RunConfig) -> Result<String, PipelineError> {
    let mut keyed = cfg.clone();
    keyed.network_path = PathBuf::new();
    keyed.stations_path = PathBuf::new();
    keyed.output_dir = PathBuf::new();
    keyed.load_shape_path = keyed.load_shape_path.map(|_| PathBuf::new());
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&keyed).expect("config serializes"));
    let mut inputs = vec![&cfg.network_path, &cfg.stations_path];
    inputs.extend(cfg.load_shape_path.as_ref());
    for p in inputs {
        let bytes = fs::read(p).map_err(|e| PipelineError::io(None, format!("reading {}: {e}", p.display())))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Parses a `step,multiplier` CSV into the multiplier column.
pub fn parse_load_shape(table: &str) -> Result<Vec<f64>, String> {
    #[derive(Deserialize)]
    struct Row {
        #[allow(dead_code)]
        step: u64,
        multiplier: f64,
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(table.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| format!("load shape row {}: {e}", i + 2))?;
        if !(row.multiplier >= 0.0) || !row.multiplier.is_finite() {
            return Err(format!("load shape row {}: multiplier must be finite and >= 0", i + 2));
        }
        out.push(row.multiplier);
    }
    if out.is_empty() {
        return Err("load shape has no rows".into());
    }
    Ok(out)
}

pub struct Inputs {
    pub network: Network<f64>,
    pub stations: Vec<EvStation<f64>>,
    pub topology: TopologyReport,
    pub base_multiplier: Option<Vec<f64>>,
}

pub struct ProfileOutcome {
    pub cohorts: Vec<Cohort<f64>>,
    pub profile: DemandProfile<f64>,
    pub peak_index: usize,
    pub generated_peak_kw: f64,
    pub peak_kw: f64,
}

pub struct AssignOutcome {
    pub census: StationCensus,
    pub allocation: Allocation<f64>,
    pub catalog_size: usize,
    pub assignments: Vec<Assignment<f64>>,
    pub network_after: Network<f64>,
    /// EV kW added to each load of `network_after`, by load id.
    pub ev_kw: BTreeMap<String, f64>,
}

pub struct RunOutcome {
    pub before: PowerFlowSolution<f64>,
    pub after: PowerFlowSolution<f64>,
    pub qsts_before: QstsResult<f64>,
    pub qsts_after: QstsResult<f64>,
}

pub struct ImpactOutcome {
    pub summary: SystemSummary<f64>,
    pub flow: Vec<ImpactRecord<f64>>,
    pub loss: Vec<ImpactRecord<f64>>,
    pub flow_histogram: Histogram<f64>,
    pub loss_histogram: Histogram<f64>,
}

/// Lazily computed stage results for one configuration.
pub struct Runner {
    cfg: RunConfig,
    hash: String,
    run_dir: PathBuf,
    execution: Execution,
    inputs: Option<Inputs>,
    profile: Option<ProfileOutcome>,
    assign: Option<AssignOutcome>,
    run: Option<RunOutcome>,
    impact: Option<ImpactOutcome>,
}

impl Runner {
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        let hash = config_hash(&cfg)?;
        let run_dir = cfg.output_dir.join(format!("run-{}", &hash[..16]));
        Ok(Self {
            cfg,
            hash,
            run_dir,
            execution: Execution::Parallel,
            inputs: None,
            profile: None,
            assign: None,
            run: None,
            impact: None,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Runs the given stages in order. On failure a `FAILED` marker naming
    /// the stage is left next to whatever was already written.
    pub fn execute(&mut self, stages: &[Stage]) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.run_dir)
            .map_err(|e| PipelineError::io(None, format!("creating {}: {e}", self.run_dir.display())))?;
        for &stage in stages {
            log::info!("stage {stage}");
            if let Err(e) = self.write_stage(stage) {
                let e = e.at(stage);
                let marker = format!("stage: {stage}\nerror: {e}\n");
                if let Err(io) = fs::write(self.run_dir.join(FAILED_FILE), marker) {
                    log::error!("could not write failure marker: {io}");
                }
                return Err(e);
            }
        }
        match fs::remove_file(self.run_dir.join(FAILED_FILE)) {
            Ok(()) => log::info!("cleared stale failure marker"),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(PipelineError::io(None, format!("removing failure marker: {e}"))),
        }
        Ok(())
    }

    fn write_stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Validate => self.write_validate(),
            Stage::Profile => self.write_profile(),
            Stage::Assign => self.write_assign(),
            Stage::Run => self.write_run(),
            Stage::Impact => self.write_impact(),
            Stage::Export => self.write_export(),
        }
    }

    pub fn inputs(&mut self) -> Result<&Inputs, PipelineError> {
        if self.inputs.is_none() {
            let stage = Some(Stage::Validate);
            let read = |p: &Path| {
                fs::read_to_string(p).map_err(|e| PipelineError::io(stage, format!("reading {}: {e}", p.display())))
            };
            let network = parse_network::<f64>(&read(&self.cfg.network_path)?)
                .map_err(|e| PipelineError::new(stage, FailureKind::Schema, format!("network: {e}")))?;
            let stations = parse_stations::<f64>(&read(&self.cfg.stations_path)?)
                .map_err(|e| PipelineError::new(stage, FailureKind::Schema, format!("stations: {e}")))?;
            let base_multiplier = match &self.cfg.load_shape_path {
                Some(p) => Some(parse_load_shape(&read(p)?).map_err(|e| PipelineError::new(stage, FailureKind::Schema, e))?),
                None => None,
            };
            let topology = validate_radial(&network);
            self.inputs = Some(Inputs { network, stations, topology, base_multiplier });
        }
        Ok(self.inputs.as_ref().unwrap())
    }

    fn radial_inputs(&mut self) -> Result<&Inputs, PipelineError> {
        let inputs = self.inputs()?;
        if !inputs.topology.radial {
            return Err(PipelineError::new(
                Some(Stage::Validate),
                FailureKind::Topology,
                format!(
                    "network is not radial (connected: {}, orphan buses: {:?})",
                    inputs.topology.connected, inputs.topology.orphan_buses
                ),
            ));
        }
        Ok(inputs)
    }

    pub fn profile(&mut self) -> Result<&ProfileOutcome, PipelineError> {
        if self.profile.is_none() {
            let (cohorts, profile) =
                scenario_profile(&self.cfg.scenario, &self.cfg.schedule, self.cfg.dt_h).map_err(profile_err)?;
            if profile.truncated {
                log::warn!("some cohorts cannot finish charging before departure; profile is truncated");
            }
            let (peak_index, generated_peak_kw) = find_peak(&profile).map_err(profile_err)?;
            let peak_kw = self.cfg.peak_kw_override.unwrap_or(generated_peak_kw);
            self.profile = Some(ProfileOutcome { cohorts, profile, peak_index, generated_peak_kw, peak_kw });
        }
        Ok(self.profile.as_ref().unwrap())
    }

    pub fn assignment(&mut self) -> Result<&AssignOutcome, PipelineError> {
        if self.assign.is_none() {
            let peak_kw = self.profile()?.peak_kw;
            let weights = self.cfg.class_weights;
            let tagged = self.cfg.assign_to_tagged;
            let inputs = self.radial_inputs()?;
            let census = StationCensus::from_stations(&inputs.stations).map_err(|e| assign_err(e.into()))?;
            let allocation = allocate_peak(peak_kw, &census, &weights).map_err(|e| assign_err(e.into()))?;
            let catalog =
                if tagged { BusCatalog::tagged_buses(&inputs.network) } else { BusCatalog::load_buses(&inputs.network) };
            if catalog.is_empty() {
                let which = if tagged { "transformer-tagged" } else { "load" };
                return Err(PipelineError::new(
                    Some(Stage::Assign),
                    FailureKind::Invalid,
                    format!("network has no {which} buses to assign stations to"),
                ));
            }
            let assignments = assign_stations(&inputs.stations, &allocation, &catalog).map_err(assign_err)?;
            let network_after = inject_loads(&inputs.network, &assignments).map_err(assign_err)?;
            let before: BTreeMap<&str, f64> = inputs.network.loads.iter().map(|l| (l.id.as_str(), l.kw)).collect();
            let ev_kw = network_after
                .loads
                .iter()
                .map(|l| (l.id.clone(), l.kw - before.get(l.id.as_str()).copied().unwrap_or(0.0)))
                .collect();
            self.assign = Some(AssignOutcome {
                census,
                allocation,
                catalog_size: catalog.len(),
                assignments,
                network_after,
                ev_kw,
            });
        }
        Ok(self.assign.as_ref().unwrap())
    }

    /// Base loads follow the optional multiplier series; EV additions follow
    /// the demand profile scaled so its daily peak equals the assigned kW.
    fn qsts_plans(&mut self) -> Result<(QstsPlan<f64>, QstsPlan<f64>), PipelineError> {
        let (dt_h, steps) = (self.cfg.dt_h, self.cfg.steps);
        let profile = self.profile()?;
        let peak = profile.generated_peak_kw;
        let ev_unit: Vec<f64> =
            profile.profile.values_kw.iter().map(|&v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
        let base = self.radial_inputs()?;
        let multiplier = base.base_multiplier.clone();
        let base_kw: BTreeMap<String, f64> = base.network.loads.iter().map(|l| (l.id.clone(), l.kw)).collect();
        let after = self.assignment()?;

        let base_at = |kw: f64, t: usize| match &multiplier {
            Some(m) => kw * m[t % m.len()],
            None => kw,
        };
        let mut before_shapes = BTreeMap::new();
        if multiplier.is_some() {
            for (id, &kw) in &base_kw {
                let values_kw = (0..steps).map(|t| base_at(kw, t)).collect();
                before_shapes.insert(id.clone(), LoadShape { dt_h, values_kw });
            }
        }
        let mut after_shapes = BTreeMap::new();
        for l in &after.network_after.loads {
            let ev = after.ev_kw[&l.id];
            if ev == 0.0 && multiplier.is_none() {
                continue;
            }
            let kw0 = base_kw.get(&l.id).copied().unwrap_or(0.0);
            let values_kw = (0..steps).map(|t| base_at(kw0, t) + ev * ev_unit[t % ev_unit.len()]).collect();
            after_shapes.insert(l.id.clone(), LoadShape { dt_h, values_kw });
        }
        Ok((
            QstsPlan { dt_h, steps, shapes: before_shapes },
            QstsPlan { dt_h, steps, shapes: after_shapes },
        ))
    }

    pub fn powerflow(&mut self) -> Result<&RunOutcome, PipelineError> {
        if self.run.is_none() {
            let solver = self.cfg.solver;
            let (plan_before, plan_after) = self.qsts_plans()?;
            let network = self.radial_inputs()?.network.clone();
            let network_after = self.assignment()?.network_after.clone();
            let snapshot = |net: &Network<f64>, label: &str| -> Result<PowerFlowSolution<f64>, PipelineError> {
                let sol = solve_snapshot(net, &solver).map_err(powerflow_err)?;
                if !sol.converged {
                    return Err(PipelineError::new(
                        Some(Stage::Run),
                        FailureKind::Divergence,
                        format!(
                            "{label} snapshot did not converge in {} iterations (last update {:.3e} pu)",
                            sol.iterations, sol.max_update_pu
                        ),
                    ));
                }
                Ok(sol)
            };
            let before = snapshot(&network, "before")?;
            let after = snapshot(&network_after, "after")?;
            let qsts_before = run_qsts(&network, &plan_before, &solver, self.execution).map_err(powerflow_err)?;
            let qsts_after = run_qsts(&network_after, &plan_after, &solver, self.execution).map_err(powerflow_err)?;
            for (label, r) in [("before", &qsts_before), ("after", &qsts_after)] {
                let bad = r.steps.len() - r.converged_steps();
                if bad > 0 {
                    log::warn!("{label}: {bad} of {} time steps did not converge", r.steps.len());
                }
            }
            self.run = Some(RunOutcome { before, after, qsts_before, qsts_after });
        }
        Ok(self.run.as_ref().unwrap())
    }

    pub fn impact(&mut self) -> Result<&ImpactOutcome, PipelineError> {
        if self.impact.is_none() {
            let threshold = self.cfg.ampacity_threshold_a;
            let keep: std::collections::HashSet<String> =
                filter_by_ampacity(&self.radial_inputs()?.network, threshold).into_iter().collect();
            let run = self.powerflow()?;
            let failed = |e: crate::impact::ImpactError| PipelineError::new(Some(Stage::Impact), FailureKind::Invalid, e.to_string());
            let records = |metric| -> Result<Vec<ImpactRecord<f64>>, PipelineError> {
                let mut rs = build_records(&run.before, &run.after, metric).map_err(failed)?;
                rs.retain(|r| keep.contains(&r.line_id));
                Ok(rs)
            };
            let flow = records(Metric::Flow)?;
            let loss = records(Metric::Loss)?;
            let edges = Category::default_edges::<f64>();
            let flow_histogram = build_histogram(&flow, &edges).map_err(failed)?;
            let loss_histogram = build_histogram(&loss, &edges).map_err(failed)?;
            let summary =
                summarize(run.before.load_kw, run.after.load_kw, run.before.total_loss_kw, run.after.total_loss_kw)
                    .map_err(failed)?;
            self.impact = Some(ImpactOutcome { summary, flow, loss, flow_histogram, loss_histogram });
        }
        Ok(self.impact.as_ref().unwrap())
    }

    pub fn geojson(&mut self) -> Result<String, PipelineError> {
        self.impact()?;
        let net = &self.inputs.as_ref().unwrap().network;
        let flow = &self.impact.as_ref().unwrap().flow;
        export_geojson(net, flow, &StyleConfig::default())
            .map_err(|e| PipelineError::new(Some(Stage::Export), FailureKind::Invalid, e.to_string()))
    }

    fn write_file(&self, name: &str, contents: &[u8]) -> Result<(), PipelineError> {
        let path = self.run_dir.join(name);
        fs::write(&path, contents).map_err(|e| PipelineError::io(None, format!("writing {}: {e}", path.display())))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), PipelineError> {
        let path = self.run_dir.join(name);
        let wrap = |e: io::Error| PipelineError::io(None, format!("writing {}: {e}", path.display()));
        let mut w = BufWriter::new(fs::File::create(&path).map_err(wrap)?);
        f(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)
    }

    /// Merges `sections` into the manifest, keyed by section name.
    fn record(&self, sections: Vec<(&str, Value)>) -> Result<(), PipelineError> {
        let path = self.run_dir.join(MANIFEST_FILE);
        let mut doc: BTreeMap<String, Value> = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| PipelineError::io(None, format!("existing manifest is unreadable: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(PipelineError::io(None, format!("reading manifest: {e}"))),
        };
        doc.insert("config_hash".into(), Value::String(self.hash.clone()));
        for (k, v) in sections {
            doc.insert(k.into(), v);
        }
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        self.write_file(MANIFEST_FILE, text.as_bytes())
    }

    fn write_validate(&mut self) -> Result<(), PipelineError> {
        let inputs = self.inputs()?;
        let report = json!({
            "buses": inputs.network.buses.len(),
            "lines": inputs.network.lines.len(),
            "loads": inputs.network.loads.len(),
            "stations": inputs.stations.len(),
            "topology": inputs.topology,
        });
        let radial = inputs.topology.radial;
        log::info!(
            "network: {} buses, {} lines, radial={radial}; stations: {}",
            inputs.network.buses.len(),
            inputs.network.lines.len(),
            inputs.stations.len()
        );
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        self.write_file("validation.json", text.as_bytes())?;
        self.record(vec![("validate", report)])?;
        self.radial_inputs().map(|_| ())
    }

    fn write_profile(&mut self) -> Result<(), PipelineError> {
        let source = if self.cfg.peak_kw_override.is_some() { "override" } else { "profile" };
        let p = self.profile()?;
        let section = json!({
            "dt_h": p.profile.dt_h,
            "cohorts": p.cohorts,
            "energy_kwh": p.profile.energy_kwh,
            "truncated": p.profile.truncated,
            "peak_index": p.peak_index,
            "peak_hour": p.peak_index as f64 * p.profile.dt_h,
            "generated_peak_kw": p.generated_peak_kw,
            "peak_kw": p.peak_kw,
            "peak_source": source,
            "files": ["profile.csv"],
        });
        let csv = p.profile.to_csv();
        self.write_file("profile.csv", csv.as_bytes())?;
        self.record(vec![("profile", section)])
    }

    fn write_assign(&mut self) -> Result<(), PipelineError> {
        let weights = self.cfg.class_weights.0;
        let targets = if self.cfg.assign_to_tagged { "transformer_buses" } else { "load_buses" };
        let a = self.assignment()?;
        let total: Vec<f64> = a.assignments.iter().map(|x| x.assigned_kw).collect();
        let allocation = json!({
            "census": a.census,
            "class_weights": weights,
            "per_station_kw": a.allocation,
            "reconstructed_kw": a.allocation.reconstruct(&a.census),
        });
        let assignment = json!({
            "targets": targets,
            "candidate_buses": a.catalog_size,
            "total_assigned_kw": crate::num::pairwise_sum(&total),
            "assignments": a.assignments,
            "files": ["assignments.csv", "network_after.json"],
        });
        let csv = assignments_csv(&a.assignments);
        let net = serialize_network(&a.network_after);
        self.write_file("assignments.csv", csv.as_bytes())?;
        self.write_file("network_after.json", net.as_bytes())?;
        self.record(vec![("allocation", allocation), ("assignment", assignment)])
    }

    fn write_run(&mut self) -> Result<(), PipelineError> {
        self.powerflow()?;
        let run = self.run.as_ref().unwrap();
        let snapshot = |s: &PowerFlowSolution<f64>| {
            json!({
                "converged": s.converged,
                "iterations": s.iterations,
                "source_kw": s.source_kw,
                "source_kvar": s.source_kvar,
                "load_kw": s.load_kw,
                "loss_kw": s.total_loss_kw,
                "min_voltage_pu": s.min_voltage_pu(),
                "max_voltage_pu": s.max_voltage_pu(),
            })
        };
        let series = |r: &QstsResult<f64>| {
            let e = total_losses(r);
            json!({ "converged_steps": r.converged_steps(), "loss_kwh": e.kwh, "complete": e.complete })
        };
        let powerflow = json!({
            "before": snapshot(&run.before),
            "after": snapshot(&run.after),
            "files": ["snapshot_before.csv", "snapshot_after.csv"],
        });
        let qsts = json!({
            "dt_h": self.cfg.dt_h,
            "steps": self.cfg.steps,
            "before": series(&run.qsts_before),
            "after": series(&run.qsts_after),
            "files": ["qsts_before_lines.csv", "qsts_before_summary.csv", "qsts_after_lines.csv", "qsts_after_summary.csv"],
        });
        self.write_with("snapshot_before.csv", |w| write_snapshot_csv(&run.before, w))?;
        self.write_with("snapshot_after.csv", |w| write_snapshot_csv(&run.after, w))?;
        self.write_with("qsts_before_lines.csv", |w| run.qsts_before.write_line_csv(w))?;
        self.write_with("qsts_before_summary.csv", |w| run.qsts_before.write_summary_csv(w))?;
        self.write_with("qsts_after_lines.csv", |w| run.qsts_after.write_line_csv(w))?;
        self.write_with("qsts_after_summary.csv", |w| run.qsts_after.write_summary_csv(w))?;
        self.record(vec![("powerflow", powerflow), ("qsts", qsts)])
    }

    fn write_impact(&mut self) -> Result<(), PipelineError> {
        self.impact()?;
        let im = self.impact.as_ref().unwrap();
        let mut counts: BTreeMap<&str, u64> = Category::ALL.iter().map(|c| (c.color_hex(), 0)).collect();
        for r in &im.flow {
            *counts.get_mut(r.category.color_hex()).unwrap() += 1;
        }
        let section = json!({
            "ampacity_threshold_a": self.cfg.ampacity_threshold_a,
            "lines_considered": im.flow.len(),
            "summary": im.summary,
            "flow_histogram": im.flow_histogram,
            "loss_histogram": im.loss_histogram,
            "flow_category_counts": counts,
            "files": ["impact_report.json", "histogram_flow.csv", "histogram_loss.csv"],
        });
        let report = ImpactReport { summary: im.summary, records: im.flow.iter().chain(&im.loss).cloned().collect() };
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        self.write_file("impact_report.json", text.as_bytes())?;
        self.write_file("histogram_flow.csv", im.flow_histogram.to_csv().as_bytes())?;
        self.write_file("histogram_loss.csv", im.loss_histogram.to_csv().as_bytes())?;
        self.record(vec![("impact", section)])
    }

    fn write_export(&mut self) -> Result<(), PipelineError> {
        let doc = self.geojson()?;
        let features = self.inputs.as_ref().unwrap().network.lines.len();
        self.write_file("impact_map.geojson", doc.as_bytes())?;
        self.record(vec![("export", json!({ "features": features, "files": ["impact_map.geojson"] }))])
    }
}

/// Per-line snapshot CSV, header `line_id,kw,kvar,amps,loss_kw`. Values are
/// written at full precision (shortest round-trip form).
pub fn write_snapshot_csv<W: Write>(s: &PowerFlowSolution<f64>, mut w: W) -> io::Result<()> {
    writeln!(w, "line_id,kw,kvar,amps,loss_kw")?;
    for (i, id) in s.line_ids.iter().enumerate() {
        writeln!(
            w,
            "{id},{},{},{},{}",
            s.line_flow_kw[i], s.line_flow_kvar[i], s.line_current_a[i], s.line_loss_kw[i]
        )?;
    }
    Ok(())
}

/// Loads the configuration (with `--out` override) and runs `stages`.
pub fn run_stages(config_path: &Path, out: Option<&Path>, stages: &[Stage]) -> Result<PathBuf, PipelineError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(out) = out {
        cfg.output_dir = out.to_path_buf();
    }
    let mut runner = Runner::new(cfg)?;
    runner.execute(stages)?;
    Ok(runner.run_dir().to_path_buf())
}
