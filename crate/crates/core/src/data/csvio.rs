//! CSV interchange: header `jet_id,label,p_index,f0,f1,...`, one particle
//! per row, rows of a jet contiguous and `p_index` counting from 0.
//! Labels are class names from the manifest.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::JetRecord;
use crate::error::{Error, Result};

/// Dataset description stored next to the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_features: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_particles: Option<usize>,
}

impl Manifest {
    /// Default names `class0..classN`, except for the five-class jet set.
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        let class_names = if num_classes == 5 {
            ["gluon", "quark", "W", "Z", "top"].map(String::from).to_vec()
        } else {
            (0..num_classes).map(|c| format!("class{c}")).collect()
        };
        Manifest {
            num_features,
            num_classes,
            class_names,
            max_particles: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "manifest lists {} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    fn label_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

fn header(num_features: usize) -> Vec<String> {
    let mut h = vec!["jet_id".to_string(), "label".into(), "p_index".into()];
    h.extend((0..num_features).map(|i| format!("f{i}")));
    h
}

pub fn write_csv<W: Write>(out: W, records: &[JetRecord], manifest: &Manifest) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header(manifest.num_features)).map_err(csv_err)?;
    for (id, r) in records.iter().enumerate() {
        let name = manifest
            .class_names
            .get(r.label)
            .ok_or_else(|| Error::contract(format!("label {} has no class name", r.label)))?;
        for (k, p) in r.particles.iter().enumerate() {
            if p.len() != manifest.num_features {
                return Err(Error::dim(format!(
                    "jet {id} particle {k} has {} features, manifest says {}",
                    p.len(),
                    manifest.num_features
                )));
            }
            let mut row = vec![id.to_string(), name.clone(), k.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R, manifest: &Manifest) -> Result<Vec<JetRecord>> {
    manifest.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rdr.records();
    let parse = |line: usize, msg: String| Error::Parse { line, msg };

    match rows.next() {
        None => return Ok(Vec::new()),
        Some(h) => {
            let h = h.map_err(|e| parse(1, e.to_string()))?;
            let got: Vec<&str> = h.iter().collect();
            if got != header(manifest.num_features) {
                return Err(parse(1, format!("unexpected header {got:?}")));
            }
        }
    }

    let mut records: Vec<JetRecord> = Vec::new();
    let mut current: Option<String> = None;
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 3 + manifest.num_features {
            return Err(parse(
                line,
                format!("expected {} fields, got {}", 3 + manifest.num_features, row.len()),
            ));
        }
        let jet_id = &row[0];
        let label = manifest
            .label_of(&row[1])
            .ok_or_else(|| parse(line, format!("unknown label {:?}", &row[1])))?;
        let p_index: usize = row[2]
            .parse()
            .map_err(|_| parse(line, format!("bad p_index {:?}", &row[2])))?;
        let features = row
            .iter()
            .skip(3)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse(line, format!("bad feature value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;

        if current.as_deref() != Some(jet_id) {
            if !seen.insert(jet_id.to_string()) {
                return Err(parse(line, format!("jet {jet_id} is not contiguous")));
            }
            current = Some(jet_id.to_string());
            records.push(JetRecord {
                particles: Vec::new(),
                label,
            });
        }
        let rec = records.last_mut().expect("pushed above");
        if rec.label != label {
            return Err(parse(line, format!("jet {jet_id} changes label")));
        }
        if p_index != rec.particles.len() {
            return Err(parse(
                line,
                format!("jet {jet_id}: p_index {p_index}, expected {}", rec.particles.len()),
            ));
        }
        rec.particles.push(features);
    }
    Ok(records)
}

pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<Vec<JetRecord>> {
    read_csv(std::fs::File::open(path)?, manifest)
}
