//! Demonstration datasets and their on-disk form: a flat CSV of records plus
//! a JSON manifest describing how the data was produced.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, Disturbance, State};
use crate::error::{Error, Result};

/// How a rollout or demonstration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Goal,
    Collision,
    Timeout,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Goal => "goal",
            Status::Collision => "collision",
            Status::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "goal" => Ok(Status::Goal),
            "collision" => Ok(Status::Collision),
            "timeout" => Ok(Status::Timeout),
            other => Err(Error::Parse(format!("unknown status {other:?}"))),
        }
    }
}

/// One `(x_t, π*(x_t))` pair with the disturbance that was executed alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub state: State,
    /// Clean expert label.
    pub expert_action: Control,
    pub applied_disturbance: Disturbance,
    /// Sampled bound as a fraction of `ū` (zero for unguided collection).
    pub d_bar_ratio: f64,
    /// Per-component sampled bound `d̄`.
    pub d_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: usize,
    /// Index passed to the world source for this demonstration.
    pub world_index: u64,
    pub records: Vec<Record>,
    pub terminal_status: Status,
}

impl Demonstration {
    /// Minimum safety margin over the recorded states.
    pub fn min_clearance(&self, world: &crate::World) -> f64 {
        self.records.iter().map(|r| world.signed_distance([r.state[0], r.state[1]])).fold(f64::INFINITY, f64::min)
    }
}

/// Demonstrations sorted by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
}

impl Dataset {
    pub fn num_records(&self) -> usize {
        self.demos.iter().map(|d| d.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = (&Demonstration, &Record)> {
        self.demos.iter().flat_map(|d| d.records.iter().map(move |r| (d, r)))
    }

    pub fn is_empty(&self) -> bool {
        self.num_records() == 0
    }

    fn dims(&self) -> Option<(usize, usize)> {
        self.records().next().map(|(_, r)| (r.state.len(), r.expert_action.len()))
    }

    /// Header `demo_id,t,x_0..,a_0..,d_0..,d_bar,status`; `d_bar` is the
    /// sampled bound as a fraction of `ū`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (nx, nu) = self.dims().unwrap_or((0, 0));
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["demo_id".to_string(), "t".to_string()];
        header.extend((0..nx).map(|i| format!("x_{i}")));
        header.extend((0..nu).map(|i| format!("a_{i}")));
        header.extend((0..nu).map(|i| format!("d_{i}")));
        header.push("d_bar".into());
        header.push("status".into());
        w.write_record(&header)?;
        for d in &self.demos {
            for (t, r) in d.records.iter().enumerate() {
                let mut row = vec![d.id.to_string(), t.to_string()];
                // `{:?}` on f64 prints the shortest representation that round-trips.
                row.extend(r.state.iter().map(|v| format!("{v:?}")));
                row.extend(r.expert_action.iter().map(|v| format!("{v:?}")));
                row.extend(r.applied_disturbance.iter().map(|v| format!("{v:?}")));
                row.push(format!("{:?}", r.d_bar_ratio));
                row.push(d.terminal_status.as_str().into());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Dataset::write_csv`]. `control_bound` restores the
    /// per-component `d̄`; `world_index` defaults to the demo id.
    pub fn read_csv<R: Read>(reader: R, control_bound: &[f64]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let nx = header.iter().filter(|h| h.starts_with("x_")).count();
        let nu = header.iter().filter(|h| h.starts_with("a_")).count();
        if nu != control_bound.len() || header.len() != 2 + nx + 2 * nu + 2 {
            return Err(Error::Parse("dataset header does not match the model dimensions".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")));
        let mut demos: Vec<Demonstration> = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let id: usize = row[0].parse().map_err(|_| Error::Parse("bad demo_id".into()))?;
            let vals = (2..2 + nx + 2 * nu + 1).map(|i| num(&row[i])).collect::<Result<Vec<_>>>()?;
            let status = Status::parse(&row[header.len() - 1])?;
            let ratio = vals[nx + 2 * nu];
            let record = Record {
                state: State(vals[..nx].to_vec()),
                expert_action: Control(vals[nx..nx + nu].to_vec()),
                applied_disturbance: Disturbance(vals[nx + nu..nx + 2 * nu].to_vec()),
                d_bar_ratio: ratio,
                d_bar: control_bound.iter().map(|b| ratio * b).collect(),
            };
            match demos.last_mut() {
                Some(d) if d.id == id => d.records.push(record),
                _ => demos.push(Demonstration {
                    id,
                    world_index: id as u64,
                    records: vec![record],
                    terminal_status: status,
                }),
            }
        }
        Ok(Self { demos })
    }
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub scenario: crate::scenario::Scenario,
    pub collection: serde_json::Value,
    pub num_demos: usize,
    pub num_records: usize,
    pub code_version: String,
    pub config_fingerprint: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let rec = |t: f64| Record {
            state: State(vec![t, -t, 0.1 * t]),
            expert_action: Control(vec![0.3 - t]),
            applied_disturbance: Disturbance(vec![-0.25]),
            d_bar_ratio: 0.25,
            d_bar: vec![0.25],
        };
        Dataset {
            demos: vec![
                Demonstration {
                    id: 0,
                    world_index: 0,
                    records: vec![rec(0.0), rec(0.1)],
                    terminal_status: Status::Goal,
                },
                Demonstration {
                    id: 1,
                    world_index: 1,
                    records: vec![rec(1.0 / 3.0)],
                    terminal_status: Status::Collision,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("demo_id,t,x_0,x_1,x_2,a_0,d_0,d_bar,status\n"));
        let back = Dataset::read_csv(buf.as_slice(), &[1.0]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_header_mismatch_is_parse_error() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        assert!(matches!(Dataset::read_csv(buf.as_slice(), &[1.0, 1.0]), Err(Error::Parse(_))));
    }
}
