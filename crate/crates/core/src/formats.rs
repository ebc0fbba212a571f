//! Dataset CSV and JSON artifact I/O.
//!
//! The dataset CSV has one row per traversed edge:
//!
//! ```text
//! unit_id,group_id,cycle,step,edge_id,holding_time,remedy_id,remedy_class,sampled_indicator
//! ```
//!
//! Remedy columns are filled only on the last step of a cycle that was
//! followed by a remedy. Where the next cycle starts is recovered from the
//! next cycle's first edge.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CegError, Result};
use crate::intervention::{reset_vertex, InterventionIndicator, RemedyClass};
use crate::semi_markov::{Cycle, Dataset, RemedyEvent, SemiMarkovModel, UnitHistory};

pub const DATASET_HEADER: [&str; 9] = [
    "unit_id",
    "group_id",
    "cycle",
    "step",
    "edge_id",
    "holding_time",
    "remedy_id",
    "remedy_class",
    "sampled_indicator",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    unit_id: u64,
    group_id: u64,
    cycle: usize,
    step: usize,
    edge_id: String,
    holding_time: f64,
    remedy_id: String,
    remedy_class: String,
    sampled_indicator: String,
}

pub fn write_dataset<W: Write>(dataset: &Dataset, model: &SemiMarkovModel, out: W) -> Result<()> {
    let tree = &model.tree;
    let mut w = csv::Writer::from_writer(out);
    for u in &dataset.units {
        for (ci, c) in u.cycles.iter().enumerate() {
            for (si, &(e, t)) in c.steps.iter().enumerate() {
                let last = si + 1 == c.steps.len();
                let (rid, class, ind) = match (&c.remedy, last) {
                    (Some(r), true) => (
                        r.remedy_id.clone(),
                        r.class.as_str().to_string(),
                        r.indicator.as_ref().map(|i| i.to_string()).unwrap_or_default(),
                    ),
                    _ => (String::new(), String::new(), String::new()),
                };
                w.serialize(Row {
                    unit_id: u.unit_id,
                    group_id: u.group_id,
                    cycle: ci,
                    step: si,
                    edge_id: tree.edge_data(e).id.clone(),
                    holding_time: t,
                    remedy_id: rid,
                    remedy_class: class,
                    sampled_indicator: ind,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_string(dataset: &Dataset, model: &SemiMarkovModel) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(dataset, model, &mut buf)?;
    String::from_utf8(buf).map_err(|e| CegError::Parse(e.to_string()))
}

pub fn read_dataset<R: Read>(input: R, model: &SemiMarkovModel) -> Result<Dataset> {
    let tree = &model.tree;
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != DATASET_HEADER {
        return Err(CegError::Parse(format!("unexpected dataset header {header:?}")));
    }
    struct PendingRemedy {
        id: String,
        class: RemedyClass,
        indicator: Option<InterventionIndicator>,
    }
    let mut units: Vec<UnitHistory> = Vec::new();
    let mut remedies: Vec<Vec<Option<PendingRemedy>>> = Vec::new();
    for (line, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let bad = |msg: &str| CegError::Parse(format!("row {}: {msg}", line + 2));
        let e = tree
            .edge(&row.edge_id)
            .ok_or_else(|| bad(&format!("unknown edge {}", row.edge_id)))?;
        if !(row.holding_time >= 0.0 && row.holding_time.is_finite()) {
            return Err(bad("holding time must be finite and non-negative"));
        }
        if units.last().map(|u| u.unit_id) != Some(row.unit_id) {
            if units.iter().any(|u| u.unit_id == row.unit_id) {
                return Err(bad("unit rows are not contiguous"));
            }
            units.push(UnitHistory {
                unit_id: row.unit_id,
                group_id: row.group_id,
                cycles: Vec::new(),
            });
            remedies.push(Vec::new());
        }
        let unit = units.last_mut().unwrap();
        let rems = remedies.last_mut().unwrap();
        if row.group_id != unit.group_id {
            return Err(bad("group id changes within a unit"));
        }
        if row.cycle == unit.cycles.len() {
            if row.step != 0 {
                return Err(bad("cycle does not start at step 0"));
            }
            unit.cycles.push(Cycle {
                start: tree.source(e),
                steps: Vec::new(),
                failure: false,
                remedy: None,
            });
            rems.push(None);
        } else if row.cycle + 1 != unit.cycles.len() {
            return Err(bad("cycles out of order"));
        }
        let cycle = unit.cycles.last_mut().unwrap();
        if row.step != cycle.steps.len() {
            return Err(bad("steps out of order"));
        }
        if rems.last().unwrap().is_some() {
            return Err(bad("remedy recorded before the last step"));
        }
        cycle.steps.push((e, row.holding_time));
        if !row.remedy_id.is_empty() {
            let class = RemedyClass::parse(&row.remedy_class)?;
            let indicator = if row.sampled_indicator.is_empty() {
                None
            } else {
                Some(InterventionIndicator::parse(&row.sampled_indicator)?)
            };
            *rems.last_mut().unwrap() = Some(PendingRemedy {
                id: row.remedy_id,
                class,
                indicator,
            });
        }
    }
    for (unit, rems) in units.iter_mut().zip(remedies) {
        let n = unit.cycles.len();
        let starts: Vec<usize> = unit.cycles.iter().map(|c| c.start).collect();
        for (ci, (cycle, rem)) in unit.cycles.iter_mut().zip(rems).enumerate() {
            let last = cycle.steps.last().map(|s| s.0).expect("cycles have steps");
            let leaf = tree.target(last);
            cycle.failure = tree.edge_data(last).failure;
            let Some(rem) = rem else { continue };
            let bad = |msg: &str| CegError::Parse(format!("unit {} cycle {ci}: {msg}", unit.unit_id));
            let root_cause = model
                .root_cause_above(leaf)
                .ok_or_else(|| bad("remedy after a cycle without a root cause"))?;
            let (vertex, followup_pending) = if ci + 1 < n {
                let next = starts[ci + 1];
                let remediated = next == tree.root();
                let outcome = reset_vertex(rem.class, root_cause, remediated, tree);
                if outcome.vertex != next {
                    return Err(bad("next cycle start contradicts the remedy class"));
                }
                (outcome.vertex, outcome.followup_pending)
            } else {
                let idx = model.paths.root_cause_index(root_cause).unwrap();
                let remediated = rem.indicator.as_ref().map(|i| i.get(idx)).unwrap_or(true);
                let outcome = reset_vertex(rem.class, root_cause, remediated, tree);
                (outcome.vertex, outcome.followup_pending)
            };
            cycle.remedy = Some(RemedyEvent {
                remedy_id: rem.id,
                class: rem.class,
                indicator: rem.indicator,
                root_cause,
                reset_vertex: vertex,
                followup_pending,
            });
        }
    }
    Ok(Dataset { units })
}

pub fn read_dataset_file(path: &Path, model: &SemiMarkovModel) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?, model)
}

pub fn write_dataset_file(path: &Path, dataset: &Dataset, model: &SemiMarkovModel) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_dataset(dataset, model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<SemiMarkovModel> {
    SemiMarkovModel::from_json(&fs::read_to_string(path)?)
}
