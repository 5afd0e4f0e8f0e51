//! File formats.
//!
//! * Event logs are JSONL, one `{"user", "t", "v", "a"}` object per event.
//!   Window bounds come either from a single global `(t0, t_max)` or from a
//!   windows file with one `{"user", "t0", "t_max"}` object per user. Users
//!   listed in a windows file but absent from the log are empty records.
//! * Models, policies and configs are JSON objects carrying
//!   `"version": "mtpp-v1"`.
//! * Curves and per-user log-likelihoods are CSV.
//!
//! Encoder model files hold a header (`config` with `num_types`,
//! `num_actions`, `request_type`, `state_dim`, `embed_dim`, `cell`, plus
//! `num_marks`) followed by `tensors`, a list of `{name, rows, cols, data}`
//! in the order `type_emb, act_emb, w_update, u_update, b_update, w_cand,
//! u_cand, b_cand, w_head, b_head`, each row-major.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::{CellKind, EncoderConfig, EncoderWeights, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::event_model::{validate_record, AugmentedEvent, EventSchema, ObservationWindow, UserRecord};
use crate::likelihood::FitConfig;
use crate::linalg::Matrix;
use crate::model::HistoryModel;
use crate::policy::PolicyParams;
use crate::reinforce::{OptimizeConfig, UtilitySpec};
use crate::tabular::TabularModel;

pub const FORMAT_VERSION: &str = "mtpp-v1";

/// One line of an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLogLine {
    pub user: String,
    pub t: f64,
    pub v: u32,
    pub a: u32,
}

/// One line of a windows file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowLine {
    pub user: String,
    pub t0: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowSource {
    Global(ObservationWindow),
    PerUser(PathBuf),
}

impl WindowSource {
    /// `"t0,t_max"` for a global window, anything else is a windows file.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some((a, b)) = s.split_once(',') {
            if let (Ok(t0), Ok(t_max)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                return Ok(Self::Global(ObservationWindow::new(t0, t_max)?));
            }
        }
        Ok(Self::PerUser(PathBuf::from(s)))
    }
}

/// `data.jsonl` → `data.<suffix>`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn windows_path(data: &Path) -> PathBuf {
    sidecar_path(data, "windows.jsonl")
}

fn parse_error(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::ParseError { path: path.display().to_string(), line, message: message.to_string() }
}

/// Non-blank lines of a JSONL file parsed as `T`, with 1-based line numbers.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e))?;
        out.push((i + 1, item));
    }
    Ok(out)
}

fn read_windows(path: &Path) -> Result<IndexMap<String, ObservationWindow>> {
    let mut out = IndexMap::new();
    for (line, w) in read_jsonl::<WindowLine>(path)? {
        let window = ObservationWindow::new(w.t0, w.t_max).map_err(|e| parse_error(path, line, e))?;
        if out.insert(w.user.clone(), window).is_some() {
            return Err(parse_error(path, line, format!("duplicate window for user {}", w.user)));
        }
    }
    Ok(out)
}

fn line_check(schema: &EventSchema, e: &EventLogLine) -> Option<String> {
    if e.v == 0 || e.v > schema.num_types {
        Some(format!("event type {} not in 1..={}", e.v, schema.num_types))
    } else if e.a > schema.num_actions {
        Some(format!("action {} not in 0..={}", e.a, schema.num_actions))
    } else if e.a > 0 && !schema.is_request(e.v) {
        Some(format!("action {} attached to non-request type {}", e.a, e.v))
    } else {
        None
    }
}

/// Loads an event log, grouping by user (first appearance order, or the
/// windows file order when one is given) and sorting each user's events by
/// time. Validation failures name the offending line.
pub fn load_dataset(path: &Path, schema: &EventSchema, windows: &WindowSource) -> Result<Vec<UserRecord>> {
    schema.validate()?;
    let lines = read_jsonl::<EventLogLine>(path)?;

    let mut groups: IndexMap<String, Vec<(usize, AugmentedEvent)>> = IndexMap::new();
    let per_user = match windows {
        WindowSource::Global(_) => None,
        WindowSource::PerUser(p) => {
            let w = read_windows(p)?;
            for user in w.keys() {
                groups.insert(user.clone(), Vec::new());
            }
            Some(w)
        }
    };
    for (line, e) in lines {
        if let Some(reason) = line_check(schema, &e) {
            return Err(Error::ValidationError { user: e.user, reason: format!("line {line}: {reason}") });
        }
        if per_user.as_ref().is_some_and(|w| !w.contains_key(&e.user)) {
            return Err(Error::ValidationError { user: e.user, reason: format!("line {line}: user has no window") });
        }
        groups.entry(e.user).or_default().push((line, AugmentedEvent::new(e.t, e.v, e.a)));
    }

    let mut records = Vec::with_capacity(groups.len());
    for (user, mut events) in groups {
        events.sort_by(|x, y| x.1.t.total_cmp(&y.1.t));
        let window = match (&per_user, windows) {
            (Some(w), _) => w[&user],
            (None, WindowSource::Global(w)) => *w,
            (None, WindowSource::PerUser(_)) => unreachable!(),
        };
        let lines: Vec<usize> = events.iter().map(|e| e.0).collect();
        let record = UserRecord::new(user, window, events.into_iter().map(|e| e.1).collect());
        validate_record(&record, schema, false).map_err(|err| {
            let reason = match event_index(&err) {
                Some(k) => format!("line {}: {err}", lines[k - 1]),
                None => err.to_string(),
            };
            Error::ValidationError { user: record.user_id.clone(), reason }
        })?;
        records.push(record);
    }
    Ok(records)
}

fn event_index(e: &Error) -> Option<usize> {
    match e {
        Error::UnorderedTimestamps { index, .. }
        | Error::EventOutsideWindow { index, .. }
        | Error::ActionOnNonRequest { index, .. }
        | Error::RequestWithoutAction { index } => Some(*index),
        _ => None,
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the event log to `path` and every user's window to
/// [`windows_path`]`(path)`, so empty records survive the round trip.
pub fn write_dataset(path: &Path, records: &[UserRecord]) -> Result<()> {
    write_lines(
        path,
        records
            .iter()
            .flat_map(|r| r.events.iter().map(|e| EventLogLine { user: r.user_id.clone(), t: e.t, v: e.v, a: e.a })),
    )?;
    write_lines(
        &windows_path(path),
        records.iter().map(|r| WindowLine { user: r.user_id.clone(), t0: r.window.t0, t_max: r.window.t_max }),
    )
}

/// Serializes `body` as a JSON object with the format version added.
pub fn to_versioned_json<T: Serialize>(body: &T) -> Result<String> {
    let mut value = serde_json::to_value(body)?;
    let obj =
        value.as_object_mut().ok_or_else(|| Error::InvalidConfig("versioned documents must be JSON objects".into()))?;
    obj.insert("version".into(), Value::String(FORMAT_VERSION.into()));
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

pub fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut value: Value = serde_json::from_str(text)?;
    let found = match value.as_object_mut().and_then(|o| o.remove("version")) {
        Some(Value::String(s)) => s,
        Some(other) => other.to_string(),
        None => "<missing>".into(),
    };
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION.into(), found });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn save_versioned<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    fs::write(path, to_versioned_json(body)?)?;
    Ok(())
}

pub fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_versioned_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ModelFile {
    Encoder { config: EncoderConfig, num_marks: usize, tensors: Vec<TensorRecord> },
    Tabular(TabularModel),
}

/// Any persisted history model.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Encoder(EncoderWeights),
    Tabular(TabularModel),
}

impl AnyModel {
    pub fn schema(&self) -> &EventSchema {
        match self {
            Self::Encoder(w) => w.schema(),
            Self::Tabular(t) => t.schema(),
        }
    }
}

fn encoder_from_file(config: EncoderConfig, num_marks: usize, tensors: Vec<TensorRecord>) -> Result<EncoderWeights> {
    config.validate()?;
    if num_marks != config.num_marks() {
        return Err(Error::ShapeMismatch(format!("num_marks {num_marks} but {} event types", config.num_marks())));
    }
    if tensors.len() != TENSOR_NAMES.len() {
        return Err(Error::ShapeMismatch(format!("expected {} tensors, got {}", TENSOR_NAMES.len(), tensors.len())));
    }
    let mut w = EncoderWeights::zeros(config);
    for ((name, slot), t) in w.tensors_mut().into_iter().zip(tensors) {
        if t.name != name {
            return Err(Error::ShapeMismatch(format!("expected tensor {name}, found {}", t.name)));
        }
        if (t.rows, t.cols) != (slot.rows, slot.cols) || t.data.len() != t.rows * t.cols {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: expected {}x{}, header says {}x{} with {} values",
                slot.rows,
                slot.cols,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
        *slot = Matrix { rows: t.rows, cols: t.cols, data: t.data };
    }
    Ok(w)
}

pub fn model_to_json(model: &AnyModel) -> Result<String> {
    let file = match model {
        AnyModel::Encoder(w) => ModelFile::Encoder {
            config: w.config,
            num_marks: w.config.num_marks(),
            tensors: w
                .tensors()
                .into_iter()
                .map(|(name, m)| TensorRecord { name: name.into(), rows: m.rows, cols: m.cols, data: m.data.clone() })
                .collect(),
        },
        AnyModel::Tabular(t) => ModelFile::Tabular(t.clone()),
    };
    to_versioned_json(&file)
}

pub fn model_from_json(text: &str) -> Result<AnyModel> {
    match from_versioned_json::<ModelFile>(text)? {
        ModelFile::Encoder { config, num_marks, tensors } => {
            Ok(AnyModel::Encoder(encoder_from_file(config, num_marks, tensors)?))
        }
        ModelFile::Tabular(t) => {
            t.validate()?;
            Ok(AnyModel::Tabular(t))
        }
    }
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    model_from_json(&fs::read_to_string(path)?)
}

pub fn load_tabular(path: &Path) -> Result<TabularModel> {
    match load_model(path)? {
        AnyModel::Tabular(t) => Ok(t),
        AnyModel::Encoder(_) => {
            Err(Error::InvalidConfig(format!("{} holds an encoder, not a tabular model", path.display())))
        }
    }
}

pub fn save_policy(path: &Path, policy: &PolicyParams) -> Result<()> {
    save_versioned(path, policy)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let p: PolicyParams = load_versioned(path)?;
    p.schema.validate()?;
    p.validate()?;
    Ok(p)
}

pub fn load_utility(path: &Path) -> Result<UtilitySpec> {
    let u: UtilitySpec = load_versioned(path)?;
    u.validate()?;
    Ok(u)
}

fn default_state_dim() -> usize {
    32
}

fn default_embed_dim() -> usize {
    8
}

/// Settings for `fit`: event vocabulary, encoder sizes and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub num_types: u32,
    pub num_actions: u32,
    /// Defaults to the highest type code.
    #[serde(default)]
    pub request_type: Option<u32>,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub cell: CellKind,
    #[serde(flatten)]
    pub fit: FitConfig,
}

impl FitSettings {
    pub fn schema(&self) -> EventSchema {
        let s = EventSchema::new(self.num_types, self.num_actions);
        self.request_type.map_or(s, |r| s.with_request_type(r))
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig { cell: self.cell, ..EncoderConfig::new(self.schema()).with_dims(self.state_dim, self.embed_dim) }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = load_versioned(path)?;
        s.encoder_config().validate()?;
        s.fit.validate()?;
        Ok(s)
    }
}

/// Settings for `optimize-policy`: the simulation window and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSettings {
    #[serde(default)]
    pub t0: f64,
    pub t_max: f64,
    #[serde(flatten)]
    pub optimize: OptimizeConfig,
}

impl OptimizeSettings {
    pub fn window(&self) -> Result<ObservationWindow> {
        ObservationWindow::new(self.t0, self.t_max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = load_versioned(path)?;
        s.window()?;
        s.optimize.validate()?;
        Ok(s)
    }
}

/// `user,log_likelihood` CSV.
pub fn log_likelihood_csv(records: &[UserRecord], values: &[f64]) -> String {
    let mut out = String::from("user,log_likelihood\n");
    for (r, v) in records.iter().zip(values) {
        out.push_str(&format!("{},{v}\n", r.user_id));
    }
    out
}

/// Parses the CSV written by [`log_likelihood_csv`].
pub fn read_log_likelihood_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (user, v) = line.rsplit_once(',').ok_or_else(|| parse_error(path, i + 1, "expected user,value"))?;
        let v = v.parse::<f64>().map_err(|e| parse_error(path, i + 1, e))?;
        out.push((user.to_string(), v));
    }
    Ok(out)
}
