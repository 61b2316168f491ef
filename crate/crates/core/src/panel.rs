//! Panel-dataset loading, validation, and cell-level aggregation.
//!
//! Datasets come in two modes. In panel mode the treatment column is the
//! per-period indicator and the onset is inferred: a common first-treated
//! period across units yields the basic two-group design, heterogeneous
//! onsets a staggered one. In repeated-cross-section mode units need not
//! recur, the treatment column marks group membership, and the onset must
//! be supplied explicitly.
//!
//! Period labels are arbitrary integers; internally they are re-indexed to
//! consecutive 0..T so that difference operators have well-defined offsets.
//! Original labels are kept for reporting.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    Panel,
    RepeatedCrossSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Basic,
    Staggered,
}

/// One row of a dataset. `cluster` defaults to the unit when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit: String,
    pub time: i64,
    pub outcome: f64,
    pub treated: bool,
    pub cluster: Option<String>,
    pub covariates: Vec<f64>,
}

/// Column bindings for CSV input.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    pub cluster: Option<String>,
    pub covariates: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            cluster: None,
            covariates: Vec::new(),
        }
    }
}

/// Validated dataset with interned units, clusters, and periods.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    mode: DatasetMode,
    obs: Vec<Observation>,
    unit_names: Vec<String>,
    cluster_names: Vec<String>,
    times: Vec<i64>,
    covariate_names: Vec<String>,
    onset: Option<i64>,
    heterogeneous_onsets: bool,
    row_unit: Vec<usize>,
    row_time: Vec<usize>,
    row_cluster: Vec<usize>,
    unit_cluster: Vec<usize>,
    /// First period index with treatment on, per unit. In cross-section
    /// mode this is the onset index for treatment-group units.
    unit_first_treated: Vec<Option<usize>>,
    balanced: bool,
}

impl PanelDataset {
    pub fn from_observations(
        obs: Vec<Observation>,
        mode: DatasetMode,
        onset: Option<i64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        for (i, o) in obs.iter().enumerate() {
            if !o.outcome.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite outcome for unit {} at period {} (row {})",
                    o.unit,
                    o.time,
                    i + 1
                )));
            }
            if o.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "row {} has {} covariates, expected {}",
                    i + 1,
                    o.covariates.len(),
                    covariate_names.len()
                )));
            }
            if o.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite covariate for unit {} at period {}",
                    o.unit, o.time
                )));
            }
        }

        let mut unit_names: Vec<String> = Vec::new();
        let mut unit_ids: HashMap<String, usize> = HashMap::new();
        let mut cluster_names: Vec<String> = Vec::new();
        let mut cluster_ids: HashMap<String, usize> = HashMap::new();

        let mut times: Vec<i64> = obs.iter().map(|o| o.time).collect();
        times.sort_unstable();
        times.dedup();

        let mut row_unit = Vec::with_capacity(obs.len());
        let mut row_time = Vec::with_capacity(obs.len());
        let mut row_cluster = Vec::with_capacity(obs.len());

        for o in &obs {
            let u = *unit_ids.entry(o.unit.clone()).or_insert_with(|| {
                unit_names.push(o.unit.clone());
                unit_names.len() - 1
            });
            let cname = o.cluster.as_deref().unwrap_or(o.unit.as_str());
            let c = *cluster_ids.entry(cname.to_string()).or_insert_with(|| {
                cluster_names.push(cname.to_string());
                cluster_names.len() - 1
            });
            row_unit.push(u);
            row_time.push(times.binary_search(&o.time).expect("time interned"));
            row_cluster.push(c);
        }

        let n_units = unit_names.len();
        let mut unit_cluster = vec![usize::MAX; n_units];
        for (r, &u) in row_unit.iter().enumerate() {
            if unit_cluster[u] == usize::MAX {
                unit_cluster[u] = row_cluster[r];
            } else if unit_cluster[u] != row_cluster[r] {
                return Err(Error::Validation(format!(
                    "unit {} appears in more than one cluster",
                    unit_names[u]
                )));
            }
        }

        let mut ds = PanelDataset {
            mode,
            obs,
            unit_names,
            cluster_names,
            times,
            covariate_names,
            onset,
            heterogeneous_onsets: false,
            row_unit,
            row_time,
            row_cluster,
            unit_cluster,
            unit_first_treated: vec![None; n_units],
            balanced: false,
        };
        match mode {
            DatasetMode::Panel => ds.validate_panel()?,
            DatasetMode::RepeatedCrossSection => ds.validate_cross_section()?,
        }
        if let Some(t_star) = ds.onset {
            if t_star > *ds.times.last().expect("nonempty") {
                return Err(Error::Validation(format!(
                    "treatment onset {} lies after the last observed period {}",
                    t_star,
                    ds.times.last().unwrap()
                )));
            }
        }
        Ok(ds)
    }

    fn validate_panel(&mut self) -> Result<()> {
        let n_units = self.unit_names.len();
        let t_len = self.times.len();
        let mut seen = vec![false; n_units * t_len];
        // Treatment trajectory per unit, indexed by period.
        let mut status = vec![u8::MAX; n_units * t_len];
        for (r, &u) in self.row_unit.iter().enumerate() {
            let slot = u * t_len + self.row_time[r];
            if seen[slot] {
                return Err(Error::Validation(format!(
                    "duplicate observation for unit {} at period {}",
                    self.unit_names[u],
                    self.times[self.row_time[r]]
                )));
            }
            seen[slot] = true;
            status[slot] = self.obs[r].treated as u8;
        }
        self.balanced = seen.iter().all(|&s| s);

        let mut first_treated: Vec<Option<usize>> = vec![None; n_units];
        for u in 0..n_units {
            let mut on = false;
            for t in 0..t_len {
                match status[u * t_len + t] {
                    1 => {
                        if first_treated[u].is_none() {
                            first_treated[u] = Some(t);
                        }
                        on = true;
                    }
                    0 if on => {
                        return Err(Error::Validation(format!(
                            "treatment reversal for unit {} at period {}: treatment must be \
                             absorbing",
                            self.unit_names[u], self.times[t]
                        )));
                    }
                    _ => {}
                }
            }
        }
        self.unit_first_treated = first_treated;

        let onsets: Vec<usize> = {
            let mut v: Vec<usize> = self.unit_first_treated.iter().flatten().copied().collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        match self.onset {
            Some(t_star) => {
                for (u, ft) in self.unit_first_treated.iter().enumerate() {
                    if let Some(t) = ft {
                        if self.times[*t] != t_star {
                            return Err(Error::Validation(format!(
                                "unit {} is first treated at period {} but the declared onset \
                                 is {}",
                                self.unit_names[u], self.times[*t], t_star
                            )));
                        }
                    }
                }
            }
            None => {
                if onsets.len() == 1 {
                    self.onset = Some(self.times[onsets[0]]);
                } else if onsets.len() > 1 {
                    self.heterogeneous_onsets = true;
                }
            }
        }
        Ok(())
    }

    fn validate_cross_section(&mut self) -> Result<()> {
        let t_star = self.onset.ok_or_else(|| {
            Error::Validation(
                "repeated cross-section mode needs an explicit treatment onset; pass --onset"
                    .into(),
            )
        })?;
        let n_units = self.unit_names.len();
        let mut group = vec![u8::MAX; n_units];
        for (r, &u) in self.row_unit.iter().enumerate() {
            let g = self.obs[r].treated as u8;
            if group[u] == u8::MAX {
                group[u] = g;
            } else if group[u] != g {
                return Err(Error::Validation(format!(
                    "unit {} switches group membership; in cross-section mode the treatment \
                     column marks the group and must be constant within unit",
                    self.unit_names[u]
                )));
            }
        }
        let onset_idx = self.times.partition_point(|&t| t < t_star);
        for (u, &g) in group.iter().enumerate() {
            if g == 1 {
                self.unit_first_treated[u] = Some(onset_idx);
            }
        }
        self.balanced = false;
        Ok(())
    }

    pub fn mode(&self) -> DatasetMode {
        self.mode
    }

    pub fn rows(&self) -> &[Observation] {
        &self.obs
    }

    pub fn n_rows(&self) -> usize {
        self.obs.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_names.len()
    }

    pub fn unit_name(&self, u: usize) -> &str {
        &self.unit_names[u]
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_names.len()
    }

    pub fn cluster_name(&self, c: usize) -> &str {
        &self.cluster_names[c]
    }

    pub fn unit_cluster(&self, u: usize) -> usize {
        self.unit_cluster[u]
    }

    /// Sorted distinct period labels; position is the internal index.
    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn n_periods(&self) -> usize {
        self.times.len()
    }

    pub fn time_label(&self, idx: usize) -> i64 {
        self.times[idx]
    }

    pub fn time_index(&self, label: i64) -> Result<usize> {
        self.times
            .binary_search(&label)
            .map_err(|_| Error::Misuse(format!("period {} is not observed in the data", label)))
    }

    /// Declared or inferred onset label, if the design has a single one.
    pub fn onset(&self) -> Option<i64> {
        self.onset
    }

    /// Index of the first post-treatment period for a single-onset design.
    pub fn onset_index(&self) -> Option<usize> {
        self.onset.map(|t| self.times.partition_point(|&u| u < t))
    }

    pub fn heterogeneous_onsets(&self) -> bool {
        self.heterogeneous_onsets
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Panel mode only: true when every unit is observed in every period.
    pub fn balanced(&self) -> bool {
        self.balanced
    }

    pub(crate) fn row_unit(&self) -> &[usize] {
        &self.row_unit
    }

    pub(crate) fn row_time(&self) -> &[usize] {
        &self.row_time
    }

    pub(crate) fn row_cluster(&self) -> &[usize] {
        &self.row_cluster
    }

    pub(crate) fn unit_first_treated(&self) -> &[Option<usize>] {
        &self.unit_first_treated
    }

    /// Mean outcome and observation count for a (group, period) cell.
    pub fn cell_mean(&self, sel: &GroupSel, time: i64) -> Result<(f64, usize)> {
        let t = self.time_index(time)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (r, &u) in self.row_unit.iter().enumerate() {
            if self.row_time[r] != t {
                continue;
            }
            let keep = match sel {
                GroupSel::Basic { assign, treated } => {
                    assign.in_treated_group(u) == *treated
                }
                GroupSel::Cohort { assign, adoption } => {
                    assign.adoption_label(u) == *adoption
                }
            };
            if keep {
                sum += self.obs[r].outcome;
                n += 1;
            }
        }
        if n == 0 {
            let group = match sel {
                GroupSel::Basic { treated: true, .. } => "treated".to_string(),
                GroupSel::Basic { treated: false, .. } => "control".to_string(),
                GroupSel::Cohort { adoption, .. } => match adoption {
                    Some(a) => format!("cohort {}", a),
                    None => "never-treated".to_string(),
                },
            };
            return Err(Error::EmptyCell { group, time });
        }
        Ok((sum / n as f64, n))
    }
}

/// Group selector for [`PanelDataset::cell_mean`].
pub enum GroupSel<'a> {
    Basic {
        assign: &'a GroupAssignment,
        treated: bool,
    },
    Cohort {
        assign: &'a GroupAssignment,
        adoption: Option<i64>,
    },
}

/// Per-unit group structure derived from the treatment trajectories.
///
/// For the basic design every treated unit shares the onset. For staggered
/// adoption each unit carries its own adoption period (`None` = never), and
/// the relative indicators follow the three-level convention: 1 for the
/// cohort adopting exactly at t, 0 for units still untreated at the horizon,
/// -1 for units treated before.
#[derive(Debug, Clone)]
pub struct GroupAssignment {
    design: Design,
    onset_idx: Option<usize>,
    adoption_idx: Vec<Option<usize>>,
    labels: Vec<i64>,
}

pub fn assign_groups(data: &PanelDataset, design: Design) -> Result<GroupAssignment> {
    match design {
        Design::Basic => {
            if data.heterogeneous_onsets() {
                return Err(Error::Validation(
                    "treatment onsets differ across units; use the staggered design".into(),
                ));
            }
            let onset_idx = data.onset_index().ok_or_else(|| {
                Error::Validation("no treated units, so no onset can be inferred".into())
            })?;
            let adoption_idx: Vec<Option<usize>> = data
                .unit_first_treated()
                .iter()
                .map(|ft| ft.map(|_| onset_idx))
                .collect();
            let n_treated = adoption_idx.iter().filter(|a| a.is_some()).count();
            if n_treated == 0 {
                return Err(Error::Validation("no treated units".into()));
            }
            if n_treated == adoption_idx.len() {
                return Err(Error::Validation("no control units".into()));
            }
            Ok(GroupAssignment {
                design,
                onset_idx: Some(onset_idx),
                adoption_idx,
                labels: data.times().to_vec(),
            })
        }
        Design::Staggered => {
            if data.mode() != DatasetMode::Panel {
                return Err(Error::Misuse(
                    "staggered designs need panel data; repeated cross-sections cannot track \
                     adoption"
                        .into(),
                ));
            }
            let adoption_idx = data.unit_first_treated().to_vec();
            if adoption_idx.iter().all(|a| a.is_none()) {
                return Err(Error::Validation("no unit ever adopts the treatment".into()));
            }
            Ok(GroupAssignment {
                design,
                onset_idx: None,
                adoption_idx,
                labels: data.times().to_vec(),
            })
        }
    }
}

impl GroupAssignment {
    pub fn design(&self) -> Design {
        self.design
    }

    /// Internal index of the common onset (basic design only).
    pub fn onset_index(&self) -> Option<usize> {
        self.onset_idx
    }

    pub fn n_units(&self) -> usize {
        self.adoption_idx.len()
    }

    /// Ever-treated flag.
    pub fn in_treated_group(&self, unit: usize) -> bool {
        self.adoption_idx[unit].is_some()
    }

    /// Adoption period as an internal index; `None` for never-treated.
    pub fn adoption_index(&self, unit: usize) -> Option<usize> {
        self.adoption_idx[unit]
    }

    /// Adoption period as an original label; `None` for never-treated.
    pub fn adoption_label(&self, unit: usize) -> Option<i64> {
        self.adoption_idx[unit].map(|a| self.labels[a])
    }

    /// Relative treatment-group indicator at period index `t`:
    /// 1 = adopts exactly at t, 0 = not yet treated, -1 = already treated.
    pub fn g_it(&self, unit: usize, t: usize) -> i8 {
        match self.adoption_idx[unit] {
            Some(a) if a == t => 1,
            Some(a) if a < t => -1,
            _ => 0,
        }
    }

    /// Lead-aware indicator: controls must stay untreated through t + s.
    pub fn g_its(&self, unit: usize, t: usize, s: u32) -> i8 {
        match self.adoption_idx[unit] {
            Some(a) if a == t => 1,
            Some(a) if a <= t + s as usize => -1,
            _ => 0,
        }
    }

    /// Sorted distinct adoption indices observed in the data.
    pub fn adoption_times(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.adoption_idx.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Per-cluster outcome sums for a fixed two-level grouping of units, laid
/// out for fast re-aggregation under cluster resampling.
#[derive(Debug, Clone)]
pub struct CellTable {
    n_periods: usize,
    n_clusters: usize,
    /// Per cluster: treated sums, control sums, treated counts, control
    /// counts, each of length `n_periods`.
    slots: Vec<f64>,
}

/// Aggregated (group, period) sums and counts.
#[derive(Debug, Clone)]
pub struct CellMeans {
    n_periods: usize,
    data: Vec<f64>,
}

impl CellTable {
    /// `level` maps a unit to its cell row: `Some(true)` treated,
    /// `Some(false)` control, `None` excluded.
    pub fn build(data: &PanelDataset, level: &dyn Fn(usize) -> Option<bool>) -> CellTable {
        let t_len = data.n_periods();
        let width = 4 * t_len;
        let mut slots = vec![0.0; data.n_clusters() * width];
        for (r, &u) in data.row_unit().iter().enumerate() {
            let lv = match level(u) {
                Some(lv) => lv,
                None => continue,
            };
            let base = data.row_cluster()[r] * width;
            let t = data.row_time()[r];
            let off = if lv { 0 } else { t_len };
            slots[base + off + t] += data.rows()[r].outcome;
            slots[base + 2 * t_len + off + t] += 1.0;
        }
        CellTable {
            n_periods: t_len,
            n_clusters: data.n_clusters(),
            slots,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Sums over a multiset of cluster indices (repeats count repeatedly).
    pub fn aggregate(&self, draw: &[usize]) -> CellMeans {
        let width = 4 * self.n_periods;
        let mut data = vec![0.0; width];
        for &c in draw {
            let base = c * width;
            for (d, s) in data.iter_mut().zip(&self.slots[base..base + width]) {
                *d += s;
            }
        }
        CellMeans {
            n_periods: self.n_periods,
            data,
        }
    }

    /// Sums over the original, unresampled data.
    pub fn full(&self) -> CellMeans {
        let draw: Vec<usize> = (0..self.n_clusters).collect();
        self.aggregate(&draw)
    }
}

impl CellMeans {
    /// Mean and count for one cell; `None` when the cell is empty.
    pub fn mean(&self, treated: bool, t: usize) -> Option<(f64, f64)> {
        let t_len = self.n_periods;
        let off = if treated { 0 } else { t_len };
        let n = self.data[2 * t_len + off + t];
        if n <= 0.0 {
            return None;
        }
        Some((self.data[off + t] / n, n))
    }
}

fn parse_treatment(raw: &str, line: u64, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        s if s.eq_ignore_ascii_case("false") => Ok(false),
        s if s.eq_ignore_ascii_case("true") => Ok(true),
        s => Err(Error::Schema(format!(
            "line {}: cannot parse {:?} in column {} as a treatment flag (expected 0, 1, true, \
             or false)",
            line, s, column
        ))),
    }
}

pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    mode: DatasetMode,
    onset: Option<i64>,
) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_csv_reader(file, schema, mode, onset)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    schema: &CsvSchema,
    mode: DatasetMode,
    onset: Option<i64>,
) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {}", e)))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {:?}", name)))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let outcome_col = col(&schema.outcome)?;
    let treatment_col = col(&schema.treatment)?;
    let cluster_col = match &schema.cluster {
        Some(c) => Some(col(c)?),
        None => None,
    };
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Schema(format!("malformed CSV record: {}", e)))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| {
                Error::Schema(format!("line {}: row has too few fields", line))
            })
        };
        let time: i64 = field(time_col)?.parse().map_err(|_| {
            Error::Schema(format!(
                "line {}: cannot parse {:?} in column {} as an integer period",
                line,
                rec.get(time_col).unwrap_or(""),
                schema.time
            ))
        })?;
        let outcome: f64 = field(outcome_col)?.parse().map_err(|_| {
            Error::Schema(format!(
                "line {}: cannot parse {:?} in column {} as a number",
                line,
                rec.get(outcome_col).unwrap_or(""),
                schema.outcome
            ))
        })?;
        let treated = parse_treatment(field(treatment_col)?, line, &schema.treatment)?;
        let cluster = match cluster_col {
            Some(c) => Some(field(c)?.to_string()),
            None => None,
        };
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
            let v: f64 = field(c)?.parse().map_err(|_| {
                Error::Schema(format!(
                    "line {}: cannot parse {:?} in column {} as a number",
                    line,
                    rec.get(c).unwrap_or(""),
                    name
                ))
            })?;
            covariates.push(v);
        }
        obs.push(Observation {
            unit: field(unit_col)?.to_string(),
            time,
            outcome,
            treated,
            cluster,
            covariates,
        });
    }
    PanelDataset::from_observations(obs, mode, onset, schema.covariates.clone())
}

/// Writes a dataset back out with canonical column names. The cluster
/// column appears only when some cluster differs from its unit, covariate
/// columns only when present.
pub fn write_csv<W: std::io::Write>(data: &PanelDataset, writer: W) -> Result<W> {
    let has_cluster = data
        .rows()
        .iter()
        .any(|o| o.cluster.as_deref().map(|c| c != o.unit).unwrap_or(false));
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "time".into(), "outcome".into(), "treatment".into()];
    if has_cluster {
        header.push("cluster".into());
    }
    header.extend(data.covariate_names().iter().cloned());
    let io_err = |e: csv::Error| Error::Schema(format!("csv write failed: {}", e));
    wtr.write_record(&header).map_err(io_err)?;
    for o in data.rows() {
        let mut rec = vec![
            o.unit.clone(),
            o.time.to_string(),
            o.outcome.to_string(),
            (o.treated as u8).to_string(),
        ];
        if has_cluster {
            rec.push(o.cluster.clone().unwrap_or_else(|| o.unit.clone()));
        }
        rec.extend(o.covariates.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(io_err)?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Schema(format!("csv write failed: {}", e)))
}

/// Incremental constructor for programmatic datasets.
#[derive(Debug, Clone)]
pub struct PanelBuilder {
    mode: DatasetMode,
    onset: Option<i64>,
    covariate_names: Vec<String>,
    rows: Vec<Observation>,
}

impl PanelBuilder {
    pub fn new(mode: DatasetMode) -> Self {
        PanelBuilder {
            mode,
            onset: None,
            covariate_names: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn onset(mut self, t: i64) -> Self {
        self.onset = Some(t);
        self
    }

    pub fn covariate_names<S: Into<String>>(mut self, names: Vec<S>) -> Self {
        self.covariate_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn row(mut self, unit: &str, time: i64, outcome: f64, treated: bool) -> Self {
        self.rows.push(Observation {
            unit: unit.to_string(),
            time,
            outcome,
            treated,
            cluster: None,
            covariates: Vec::new(),
        });
        self
    }

    pub fn row_full(
        mut self,
        unit: &str,
        time: i64,
        outcome: f64,
        treated: bool,
        cluster: Option<&str>,
        covariates: &[f64],
    ) -> Self {
        self.rows.push(Observation {
            unit: unit.to_string(),
            time,
            outcome,
            treated,
            cluster: cluster.map(|c| c.to_string()),
            covariates: covariates.to_vec(),
        });
        self
    }

    pub fn build(self) -> Result<PanelDataset> {
        PanelDataset::from_observations(self.rows, self.mode, self.onset, self.covariate_names)
    }
}
