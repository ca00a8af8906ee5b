use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

use super::container::{ArrayData, Container};
use crate::clustering::{CoreMeta, HyperCube, MaskRole, PixelMask};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral::WavenumberAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    Slide = 0,
    Tissue = 1,
    Paraffin = 2,
}

impl PixelClass {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PixelClass::Slide),
            1 => Ok(PixelClass::Tissue),
            2 => Ok(PixelClass::Paraffin),
            other => Err(Error::Format(format!("unknown pixel class {other}"))),
        }
    }
}

/// Known composition of a generated cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub classes: Vec<PixelClass>,
    /// Pixels that received an injected spike.
    pub spikes: Vec<bool>,
}

impl GroundTruth {
    pub fn mask(&self, rows: usize, cols: usize, class: PixelClass) -> Result<PixelMask> {
        let role = match class {
            PixelClass::Paraffin => MaskRole::Paraffin,
            _ => MaskRole::Tissue,
        };
        PixelMask::new(
            rows,
            cols,
            role,
            self.classes.iter().map(|c| *c == class).collect(),
        )
    }

    pub fn count(&self, class: PixelClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }
}

fn axis_from_meta(v: &serde_json::Value) -> Result<WavenumberAxis> {
    let a: WavenumberAxis = serde_json::from_value(v.clone())
        .map_err(|e| Error::Format(format!("bad axis metadata: {e}")))?;
    WavenumberAxis::new(a.start(), a.end(), a.len())
}

pub fn cube_to_container(cube: &HyperCube, truth: Option<&GroundTruth>) -> Result<Container> {
    let (r, c, n) = (cube.rows(), cube.cols(), cube.axis().len());
    let mut out = Container::new(json!({
        "kind": "cube",
        "axis": cube.axis(),
        "core": cube.meta,
        "ground_truth": truth.map(|t| json!({
            "classes": {"0": "slide", "1": "tissue", "2": "paraffin"},
            "tissue_pixels": t.count(PixelClass::Tissue),
            "paraffin_pixels": t.count(PixelClass::Paraffin),
            "spiked_pixels": t.spikes.iter().filter(|s| **s).count(),
        })),
    }));
    out.push("cube", vec![r, c, n], ArrayData::F32(cube.data().to_vec()))?;
    if let Some(t) = truth {
        if t.classes.len() != r * c || t.spikes.len() != r * c {
            return Err(Error::ShapeMismatch(
                "ground truth does not cover the cube".into(),
            ));
        }
        out.push(
            "truth_class",
            vec![r, c],
            ArrayData::U8(t.classes.iter().map(|k| *k as u8).collect()),
        )?;
        out.push(
            "truth_spike",
            vec![r, c],
            ArrayData::U8(t.spikes.iter().map(|&s| u8::from(s)).collect()),
        )?;
    }
    Ok(out)
}

pub fn cube_from_container(c: &Container) -> Result<(HyperCube, Option<GroundTruth>)> {
    if c.metadata.get("kind").and_then(|k| k.as_str()) != Some("cube") {
        return Err(Error::Format("container does not hold a cube".into()));
    }
    let axis = axis_from_meta(&c.metadata["axis"])?;
    let meta: CoreMeta = serde_json::from_value(c.metadata["core"].clone())
        .map_err(|e| Error::Format(format!("bad core metadata: {e}")))?;
    let meta = CoreMeta::new(meta.core_id, meta.patient_id, meta.core_type, meta.subtype)?;
    let (shape, data) = c.f32_array("cube")?;
    if shape.len() != 3 || shape[2] != axis.len() {
        return Err(Error::Format(format!(
            "cube shape {shape:?} does not match the axis"
        )));
    }
    let cube = HyperCube::new(shape[0], shape[1], axis, data.to_vec(), meta)?;
    let truth = match c.u8_array("truth_class") {
        Ok((_, classes)) => {
            let (_, spikes) = c.u8_array("truth_spike")?;
            if classes.len() != cube.n_pixels() || spikes.len() != cube.n_pixels() {
                return Err(Error::Format("ground truth does not cover the cube".into()));
            }
            Some(GroundTruth {
                classes: classes
                    .iter()
                    .map(|&k| PixelClass::from_code(k))
                    .collect::<Result<_>>()?,
                spikes: spikes.iter().map(|&s| s != 0).collect(),
            })
        }
        Err(_) => None,
    };
    Ok((cube, truth))
}

pub fn write_cube(path: &Path, cube: &HyperCube, truth: Option<&GroundTruth>) -> Result<()> {
    cube_to_container(cube, truth)?.write(path)
}

pub fn read_cube(path: &Path) -> Result<(HyperCube, Option<GroundTruth>)> {
    cube_from_container(&Container::read(path)?)
}

/// Water-vapour environment spectra (no tissue) on the raw axis.
pub fn write_environment(path: &Path, axis: &WavenumberAxis, spectra: &Matrix) -> Result<()> {
    if spectra.cols() != axis.len() {
        return Err(Error::LengthMismatch {
            expected: axis.len(),
            got: spectra.cols(),
        });
    }
    let mut c = Container::new(json!({"kind": "environment", "axis": axis}));
    c.push(
        "spectra",
        vec![spectra.rows(), spectra.cols()],
        ArrayData::F32(spectra.as_slice().iter().map(|&v| v as f32).collect()),
    )?;
    c.write(path)
}

pub fn read_environment(path: &Path) -> Result<(WavenumberAxis, Matrix)> {
    let c = Container::read(path)?;
    if c.metadata.get("kind").and_then(|k| k.as_str()) != Some("environment") {
        return Err(Error::Format(
            "container does not hold environment spectra".into(),
        ));
    }
    let axis = axis_from_meta(&c.metadata["axis"])?;
    let (shape, data) = c.f32_array("spectra")?;
    if shape.len() != 2 || shape[1] != axis.len() {
        return Err(Error::Format(format!(
            "environment shape {shape:?} does not match the axis"
        )));
    }
    let m = Matrix::from_vec(shape[0], shape[1], data.iter().map(|&v| v as f64).collect())?;
    Ok((axis, m))
}
