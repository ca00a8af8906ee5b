use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use super::container::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::labels::{encode_labels, subtype_code, subtype_from_code, CoreType, Subtype};
use crate::spectral::WavenumberAxis;

/// Provenance and labels of one spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub patient_id: u32,
    pub core_id: u32,
    pub row: u32,
    pub col: u32,
    pub core_type: CoreType,
    pub subtype: Option<Subtype>,
}

/// Preprocessed spectra (row-major `n × axis.len()`, f32) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraSet {
    axis: WavenumberAxis,
    spectra: Vec<f32>,
    info: Vec<SpectrumInfo>,
    /// Free-form provenance carried through the container.
    pub metadata: serde_json::Value,
}

impl SpectraSet {
    pub fn new(axis: WavenumberAxis) -> Self {
        Self {
            axis,
            spectra: Vec::new(),
            info: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn axis(&self) -> &WavenumberAxis {
        &self.axis
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn width(&self) -> usize {
        self.axis.len()
    }

    pub fn push(&mut self, spectrum: &[f32], info: SpectrumInfo) -> Result<()> {
        if spectrum.len() != self.axis.len() {
            return Err(Error::LengthMismatch {
                expected: self.axis.len(),
                got: spectrum.len(),
            });
        }
        encode_labels(info.core_type, info.subtype)?;
        self.spectra.extend_from_slice(spectrum);
        self.info.push(info);
        Ok(())
    }

    pub fn extend(&mut self, other: &SpectraSet) -> Result<()> {
        if !self.axis.approx_eq(&other.axis) {
            return Err(Error::InvalidAxis(
                "cannot merge spectra on different axes".into(),
            ));
        }
        self.spectra.extend_from_slice(&other.spectra);
        self.info.extend_from_slice(&other.info);
        Ok(())
    }

    pub fn spectrum(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.spectra[i * w..(i + 1) * w]
    }

    pub fn spectra(&self) -> &[f32] {
        &self.spectra
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.spectra.chunks_exact(self.width())
    }

    pub fn info(&self, i: usize) -> &SpectrumInfo {
        &self.info[i]
    }

    pub fn infos(&self) -> &[SpectrumInfo] {
        &self.info
    }

    pub fn subset(&self, indices: &[usize]) -> SpectraSet {
        let mut out = SpectraSet::new(self.axis);
        out.metadata = self.metadata.clone();
        out.spectra.reserve(indices.len() * self.width());
        for &i in indices {
            out.spectra.extend_from_slice(self.spectrum(i));
            out.info.push(self.info[i]);
        }
        out
    }

    /// Sorted distinct patient ids.
    pub fn patients(&self) -> Vec<u32> {
        self.info
            .iter()
            .map(|i| i.patient_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn indices_where(&self, pred: impl Fn(&SpectrumInfo) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(&self.info[i])).collect()
    }

    /// Value-range and label invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.spectra.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("spectrum value {v} outside [0, 1]")));
        }
        for i in &self.info {
            encode_labels(i.core_type, i.subtype)?;
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.len();
        let mut c = Container::new(json!({
            "kind": "spectraset",
            "axis": self.axis,
            "n_spectra": n,
            "extra": self.metadata,
        }));
        let col = |f: fn(&SpectrumInfo) -> u32| ArrayData::U32(self.info.iter().map(f).collect());
        c.push(
            "spectra",
            vec![n, self.width()],
            ArrayData::F32(self.spectra.clone()),
        )?;
        c.push("patient_id", vec![n], col(|i| i.patient_id))?;
        c.push("core_id", vec![n], col(|i| i.core_id))?;
        c.push("row", vec![n], col(|i| i.row))?;
        c.push("col", vec![n], col(|i| i.col))?;
        c.push(
            "core_type",
            vec![n],
            ArrayData::U8(self.info.iter().map(|i| i.core_type.code()).collect()),
        )?;
        c.push(
            "subtype",
            vec![n],
            ArrayData::U8(self.info.iter().map(|i| subtype_code(i.subtype)).collect()),
        )?;
        c.push(
            "wavenumbers",
            vec![self.width()],
            ArrayData::F64(self.axis.values()),
        )?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.metadata.get("kind").and_then(|k| k.as_str()) != Some("spectraset") {
            return Err(Error::Format(
                "container does not hold a spectra set".into(),
            ));
        }
        let a: WavenumberAxis = serde_json::from_value(c.metadata["axis"].clone())
            .map_err(|e| Error::Format(format!("bad axis metadata: {e}")))?;
        let axis = WavenumberAxis::new(a.start(), a.end(), a.len())?;
        let (shape, spectra) = c.f32_array("spectra")?;
        let n = *shape.first().unwrap_or(&0);
        if shape != [n, axis.len()] {
            return Err(Error::Format(format!(
                "spectra shape {shape:?} does not match the axis"
            )));
        }
        let col = |name: &str| -> Result<Vec<u32>> {
            let (s, v) = c.u32_array(name)?;
            if s != [n] {
                return Err(Error::Format(format!(
                    "`{name}` has shape {s:?}, expected [{n}]"
                )));
            }
            Ok(v.to_vec())
        };
        let (patient, core, row, colv) = (
            col("patient_id")?,
            col("core_id")?,
            col("row")?,
            col("col")?,
        );
        let (_, types) = c.u8_array("core_type")?;
        let (_, subs) = c.u8_array("subtype")?;
        if types.len() != n || subs.len() != n {
            return Err(Error::Format(
                "label arrays do not match the spectra count".into(),
            ));
        }
        let mut info = Vec::with_capacity(n);
        for i in 0..n {
            let core_type = CoreType::from_code(types[i])?;
            let subtype = subtype_from_code(subs[i])?;
            encode_labels(core_type, subtype)?;
            info.push(SpectrumInfo {
                patient_id: patient[i],
                core_id: core[i],
                row: row[i],
                col: colv[i],
                core_type,
                subtype,
            });
        }
        Ok(Self {
            axis,
            spectra: spectra.to_vec(),
            info,
            metadata: c
                .metadata
                .get("extra")
                .cloned()
                .unwrap_or(serde_json::Value::Null),
        })
    }

    /// Header row of metadata column names then wavenumbers; one spectrum
    /// per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "patient_id,core_id,row,col,core_type,subtype")?;
        for wn in self.axis.values() {
            write!(out, ",{wn}")?;
        }
        writeln!(out)?;
        for (i, info) in self.info.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{},{}",
                info.patient_id,
                info.core_id,
                info.row,
                info.col,
                info.core_type,
                info.subtype.map(|s| s.name()).unwrap_or("")
            )?;
            for v in self.spectrum(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 8
            || cols[..6]
                != [
                    "patient_id",
                    "core_id",
                    "row",
                    "col",
                    "core_type",
                    "subtype",
                ]
        {
            return Err(Error::Format("unexpected CSV header".into()));
        }
        let wn: Vec<f64> = cols[6..]
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad wavenumber in header: {e}")))?;
        let axis = WavenumberAxis::new(wn[0], wn[wn.len() - 1], wn.len())?;
        if wn
            .iter()
            .zip(axis.values())
            .any(|(a, b)| (a - b).abs() > 1e-6 * axis.spacing())
        {
            return Err(Error::InvalidAxis(
                "CSV wavenumbers are not uniformly spaced".into(),
            ));
        }
        let mut set = SpectraSet::new(axis);
        let bad = |line: usize, what: &str| Error::Format(format!("CSV line {line}: {what}"));
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad(k + 2, "wrong number of fields"));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|_| bad(k + 2, "bad integer"))
            };
            let core_type = match f[4] {
                "AT" => CoreType::Adjacent,
                "CA" => CoreType::Cancer,
                _ => return Err(bad(k + 2, "core_type must be AT or CA")),
            };
            let subtype = if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse::<Subtype>()?)
            };
            let values: Vec<f32> = f[6..]
                .iter()
                .map(|s| s.trim().parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(k + 2, "bad intensity"))?;
            set.push(
                &values,
                SpectrumInfo {
                    patient_id: num(f[0])?,
                    core_id: num(f[1])?,
                    row: num(f[2])?,
                    col: num(f[3])?,
                    core_type,
                    subtype,
                },
            )?;
        }
        Ok(set)
    }
}

pub fn write_spectraset(set: &SpectraSet, path: &Path) -> Result<()> {
    set.to_container()?.write(path)
}

pub fn read_spectraset(path: &Path) -> Result<SpectraSet> {
    SpectraSet::from_container(&Container::read(path)?)
}
