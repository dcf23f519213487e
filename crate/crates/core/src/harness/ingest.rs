//! Delimited-text flow records to and from dense tensors.
//!
//! Files carry a header `station_id,day_index,slot_index,count`. Stations
//! are indexed in order of first appearance.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub station_id: String,
    pub day_index: usize,
    pub slot_index: usize,
    pub count: f64,
}

/// Declared tensor extents. Unset extents are inferred from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Extents {
    pub stations: Option<usize>,
    pub days: Option<usize>,
    pub slots: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    pub shape: [usize; 3],
    /// Cells with no record, zero-filled.
    pub missing_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tensor: DenseTensor,
    pub station_ids: Vec<String>,
    pub report: LoadReport,
}

fn check_extent(name: &str, index: usize, extent: Option<usize>) -> Result<()> {
    match extent {
        Some(n) if index >= n => Err(Error::InvalidArgument(format!("{name} {index} outside declared extent {n}"))),
        _ => Ok(()),
    }
}

pub fn ingest_reader(reader: impl Read, extents: Extents) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut records = Vec::new();
    let mut station_index: HashMap<String, usize> = HashMap::new();
    let mut station_ids = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize() {
        let rec: FlowRecord = row?;
        if !(rec.count >= 0.0 && rec.count.is_finite()) {
            return Err(Error::Parse(format!(
                "count {} for ({}, {}, {}) must be a non-negative number",
                rec.count, rec.station_id, rec.day_index, rec.slot_index
            )));
        }
        check_extent("day_index", rec.day_index, extents.days)?;
        check_extent("slot_index", rec.slot_index, extents.slots)?;
        let next = station_index.len();
        let s = *station_index.entry(rec.station_id.clone()).or_insert_with(|| {
            station_ids.push(rec.station_id.clone());
            next
        });
        check_extent("station count", s, extents.stations)?;
        if !seen.insert((s, rec.day_index, rec.slot_index)) {
            return Err(Error::DuplicateKey(format!("({}, {}, {})", rec.station_id, rec.day_index, rec.slot_index)));
        }
        records.push((s, rec.day_index, rec.slot_index, rec.count));
    }
    let infer = |declared: Option<usize>, f: &dyn Fn(&(usize, usize, usize, f64)) -> usize| {
        declared.unwrap_or_else(|| records.iter().map(|r| f(r) + 1).max().unwrap_or(0))
    };
    let shape = [
        extents.stations.unwrap_or(station_ids.len()),
        infer(extents.days, &|r| r.1),
        infer(extents.slots, &|r| r.2),
    ];
    let mut tensor = DenseTensor::zeros(shape.to_vec())?;
    for &(s, d, p, c) in &records {
        tensor.set(&[s, d, p], c);
    }
    for extra in station_ids.len()..shape[0] {
        station_ids.push(format!("unlisted_{extra}"));
    }
    let report = LoadReport { records: records.len(), shape, missing_count: tensor.len() - records.len() };
    Ok(Dataset { tensor, station_ids, report })
}

pub fn ingest(path: &Path, extents: Extents) -> Result<Dataset> {
    ingest_reader(std::fs::File::open(path)?, extents)
}

/// Writes every cell of an `L x T x P` tensor as a record.
pub fn export_writer(writer: impl Write, tensor: &DenseTensor, station_ids: &[String]) -> Result<()> {
    if tensor.order() != 3 || station_ids.len() != tensor.shape()[0] {
        return Err(Error::DimensionMismatch(format!(
            "{} station ids for tensor of shape {:?}",
            station_ids.len(),
            tensor.shape()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let [l, t, p] = [tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]];
    for s in 0..l {
        for d in 0..t {
            for k in 0..p {
                w.serialize(FlowRecord {
                    station_id: station_ids[s].clone(),
                    day_index: d,
                    slot_index: k,
                    count: tensor.get(&[s, d, k]),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export(path: &Path, tensor: &DenseTensor, station_ids: &[String]) -> Result<()> {
    export_writer(std::fs::File::create(path)?, tensor, station_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "station_id,day_index,slot_index,count\n";

    fn full_file() -> String {
        let mut s = HEADER.to_string();
        for st in ["A", "B"] {
            for d in 0..2 {
                for p in 0..3 {
                    s += &format!("{st},{d},{p},{}\n", d * 3 + p + if st == "B" { 10 } else { 0 });
                }
            }
        }
        s
    }

    #[test]
    fn complete_file_maps_cells() {
        let ds = ingest_reader(full_file().as_bytes(), Extents::default()).unwrap();
        assert_eq!(ds.tensor.shape(), &[2, 2, 3]);
        assert_eq!(ds.tensor.get(&[1, 1, 2]), 15.0);
        assert_eq!(ds.station_ids, vec!["A", "B"]);
        assert_eq!(ds.report.missing_count, 0);
    }

    #[test]
    fn missing_cell_zero_filled() {
        let text: String = full_file().lines().filter(|l| *l != "A,1,1,4").map(|l| format!("{l}\n")).collect();
        let ds = ingest_reader(text.as_bytes(), Extents::default()).unwrap();
        assert_eq!(ds.tensor.get(&[0, 1, 1]), 0.0);
        assert_eq!(ds.report.missing_count, 1);
    }

    #[test]
    fn duplicate_names_key() {
        let text = format!("{}B,0,2,1\n", full_file());
        let err = ingest_reader(text.as_bytes(), Extents::default()).unwrap_err();
        assert!(err.to_string().contains("(B, 0, 2)"), "{err}");
    }

    #[test]
    fn rejects_bad_rows() {
        let neg = format!("{HEADER}A,0,0,-1\n");
        assert!(ingest_reader(neg.as_bytes(), Extents::default()).is_err());
        let out = format!("{HEADER}A,0,5,1\n");
        let ext = Extents { slots: Some(3), ..Default::default() };
        assert!(ingest_reader(out.as_bytes(), ext).is_err());
        let junk = format!("{HEADER}A,x,0,1\n");
        assert!(ingest_reader(junk.as_bytes(), Extents::default()).is_err());
    }

    #[test]
    fn export_round_trip() {
        let ds = ingest_reader(full_file().as_bytes(), Extents::default()).unwrap();
        let mut buf = Vec::new();
        export_writer(&mut buf, &ds.tensor, &ds.station_ids).unwrap();
        let back = ingest_reader(buf.as_slice(), Extents::default()).unwrap();
        assert_eq!(back.tensor, ds.tensor);
    }
}
