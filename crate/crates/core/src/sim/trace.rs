//! Episode trace export: one CSV row per (step, vehicle).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{VehicleKind, WorldState};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub id: usize,
    pub kind: String,
    pub position: f64,
    pub lane: usize,
    pub speed: f64,
    pub maneuvering: bool,
}

pub fn snapshot_rows(world: &WorldState) -> impl Iterator<Item = TraceRow> + '_ {
    world.vehicles.iter().map(move |v| TraceRow {
        step: world.step_count,
        id: v.id,
        kind: match v.kind {
            VehicleKind::Cav => "CAV".to_string(),
            VehicleKind::Hdv => "HDV".to_string(),
        },
        position: v.position,
        lane: v.lane,
        speed: v.speed,
        maneuvering: v.maneuver.is_changing(),
    })
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn record(&mut self, world: &WorldState) -> Result<()> {
        for row in snapshot_rows(world) {
            self.inner.serialize(row)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Renders trace rows as one text line per step: each lane lists the vehicles in it by position.
pub fn render_steps(rows: &[TraceRow]) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let step = rows[start].step;
        let end = start + rows[start..].iter().take_while(|r| r.step == step).count();
        let group = &rows[start..end];
        let max_lane = group.iter().map(|r| r.lane).max().unwrap_or(0);
        let mut line = format!("step {step:>5}");
        for lane in (0..=max_lane).rev() {
            let mut in_lane: Vec<&TraceRow> = group.iter().filter(|r| r.lane == lane).collect();
            in_lane.sort_by(|a, b| a.position.total_cmp(&b.position));
            let cars: Vec<String> = in_lane
                .iter()
                .map(|r| {
                    let tag = if r.kind == "CAV" { "*" } else { "" };
                    let lc = if r.maneuvering { "~" } else { "" };
                    format!("{tag}{}{lc}@{:.0}/{:.1}", r.id, r.position, r.speed)
                })
                .collect();
            line.push_str(&format!(" | L{lane}: {}", cars.join(" ")));
        }
        out.push(line);
        start = end;
    }
    out
}
