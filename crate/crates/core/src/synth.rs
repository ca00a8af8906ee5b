//! Synthetic micro-FTIR panels with known composition.
//!
//! Every pixel is a sum of Gaussian bands on the raw 3950–900 cm⁻¹ axis,
//! an order-4 polynomial baseline, a multiplicative scale and white noise.
//! Tissue carries class-dependent bands: a type band present only in cancer
//! cores and one band per subtype present in both cores of a patient with
//! that subtype. With `type_separation = 0` cancer and adjacent tissue are
//! therefore identically distributed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::clustering::{CoreMeta, HyperCube};
use crate::dataset::{write_cube, write_environment, GroundTruth, PixelClass};
use crate::error::{Error, Result};
use crate::labels::{CoreType, Subtype};
use crate::linalg::Matrix;
use crate::spectral::{build_axis, Band, Spectrum, WavenumberAxis, BIOFINGERPRINT};

pub const RAW_START: f64 = 3950.0;
pub const RAW_END: f64 = 900.0;
pub const RAW_POINTS: usize = 1580;

/// Gaussian band whose amplitude depends on the class of the tissue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center: f64,
    pub sigma: f64,
    pub amplitude: f64,
    /// Added to the amplitude in cancer cores, times the type separation.
    pub cancer_gain: f64,
    /// Added for patients of each subtype, times the subtype separation.
    pub subtype_gain: [f64; 4],
}

impl BandSpec {
    pub const fn plain(center: f64, sigma: f64, amplitude: f64) -> Self {
        Self {
            center,
            sigma,
            amplitude,
            cancer_gain: 0.0,
            subtype_gain: [0.0; 4],
        }
    }

    /// Band covering `[low, high]` at ±2σ.
    pub fn over(band: Band) -> Self {
        Self::plain((band.high + band.low) / 2.0, band.width() / 4.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let gains_ok = self.cancer_gain >= 0.0 && self.subtype_gain.iter().all(|g| *g >= 0.0);
        if !(self.sigma > 0.0) || !(self.amplitude >= 0.0) || !gains_ok || !self.center.is_finite()
        {
            return Err(Error::Config(format!("invalid band {self:?}")));
        }
        Ok(())
    }

    pub fn effective_amplitude(&self, class: SynthClass, type_sep: f64, subtype_sep: f64) -> f64 {
        let mut a = self.amplitude + subtype_sep * self.subtype_gain[class.subtype.index()];
        if class.core_type == CoreType::Cancer {
            a += type_sep * self.cancer_gain;
        }
        a
    }

    pub fn profile(&self, axis: &WavenumberAxis) -> Vec<f64> {
        (0..axis.len())
            .map(|i| {
                let z = (axis.value(i) - self.center) / self.sigma;
                (-0.5 * z * z).exp()
            })
            .collect()
    }
}

/// Protein, lipid and nucleic-acid bands shared by all tissue.
pub const TISSUE_BANDS: [BandSpec; 10] = [
    BandSpec::plain(3300.0, 60.0, 0.30),
    BandSpec::plain(2925.0, 15.0, 0.20),
    BandSpec::plain(1740.0, 8.0, 0.05),
    BandSpec::plain(1655.0, 14.0, 0.55),
    BandSpec::plain(1545.0, 13.0, 0.35),
    BandSpec::plain(1400.0, 10.0, 0.12),
    BandSpec::plain(1240.0, 12.0, 0.15),
    BandSpec::plain(1160.0, 10.0, 0.06),
    BandSpec::plain(1080.0, 10.0, 0.18),
    BandSpec::plain(1030.0, 10.0, 0.08),
];

pub const PARAFFIN_BANDS: [BandSpec; 4] = [
    BandSpec::plain(2920.0, 12.0, 0.90),
    BandSpec::plain(2850.0, 10.0, 0.60),
    BandSpec::plain(1462.0, 6.0, 0.45),
    BandSpec::plain(1373.0, 4.0, 0.12),
];

/// Two groups of water-vapour rotation lines with independent strengths.
const H2O_LINES_A: [f64; 12] = [
    1794.0, 1747.0, 1699.0, 1653.0, 1617.0, 1558.0, 1521.0, 1489.0, 1457.0, 1419.0, 1374.0, 1339.0,
];
const H2O_LINES_B: [f64; 12] = [
    1771.0, 1717.0, 1684.0, 1636.0, 1576.0, 1540.0, 1507.0, 1473.0, 1436.0, 1396.0, 1362.0, 1317.0,
];
const H2O_STRETCH: [f64; 6] = [3901.0, 3853.0, 3803.0, 3745.0, 3675.0, 3620.0];
const H2O_SIGMA: f64 = 1.5;

/// Discriminative band of each subtype.
pub fn subtype_band(subtype: Subtype) -> Band {
    match subtype {
        Subtype::LuminalA => Band::fixed(1750.0, 1680.0),
        Subtype::LuminalB => Band::fixed(1590.0, 1570.0),
        Subtype::Her2 => Band::fixed(1550.0, 1510.0),
        Subtype::TripleNegative => Band::fixed(1660.0, 1610.0),
    }
}

/// What a pixel is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tissue,
    Paraffin,
    Slide,
    H2o,
}

/// Core type plus the subtype of the patient the core came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthClass {
    pub core_type: CoreType,
    pub subtype: Subtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Patients per subtype in LA, LB, HER2, TNBC order.
    pub patients_per_subtype: [usize; 4],
    pub rows: usize,
    pub cols: usize,
    pub axis_points: usize,
    pub noise_sigma: f64,
    /// Standard deviation of each baseline monomial coefficient, order 0 to 4.
    pub baseline_sigma: [f64; 5],
    pub scale_range: [f64; 2],
    /// Relative amplitude spread of tissue bands between cores.
    pub core_jitter: f64,
    /// Relative amplitude spread of bands between pixels.
    pub pixel_jitter: f64,
    pub type_separation: f64,
    pub subtype_separation: f64,
    /// Band carrying the cancer/adjacent difference.
    pub type_band: [f64; 2],
    /// Amplitude of a discriminative band at separation 1.
    pub class_amplitude: f64,
    /// Paraffin left inside tissue pixels, relative to pure paraffin.
    pub paraffin_in_tissue: f64,
    /// Water-vapour strength range in sample pixels.
    pub h2o_range: [f64; 2],
    /// Fraction of tissue pixels receiving a spike.
    pub spike_fraction: f64,
    /// Spike height relative to the pixel maximum.
    pub spike_factor: f64,
    pub environment_spectra: usize,
    /// Tissue disk and paraffin ring radii as fractions of the smaller side.
    pub tissue_radius: f64,
    pub paraffin_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            patients_per_subtype: [8, 8, 7, 7],
            rows: 32,
            cols: 32,
            axis_points: RAW_POINTS,
            noise_sigma: 0.002,
            baseline_sigma: [0.004, 0.002, 0.002, 0.001, 0.001],
            scale_range: [0.8, 1.25],
            core_jitter: 0.05,
            pixel_jitter: 0.03,
            type_separation: 1.0,
            subtype_separation: 1.0,
            type_band: [1100.0, 1060.0],
            class_amplitude: 0.1,
            paraffin_in_tissue: 0.3,
            h2o_range: [0.0, 0.03],
            spike_fraction: 0.0,
            spike_factor: 10.0,
            environment_spectra: 32,
            tissue_radius: 0.3,
            paraffin_radius: 0.45,
        }
    }
}

impl SynthConfig {
    /// Every pixel of a role identical: no noise, jitter, baseline or scatter.
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.baseline_sigma = [0.0; 5];
        self.scale_range = [1.0, 1.0];
        self.core_jitter = 0.0;
        self.pixel_jitter = 0.0;
        self.h2o_range = [self.h2o_range[1]; 2];
        self
    }

    pub fn n_patients(&self) -> usize {
        self.patients_per_subtype.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.rows == 0 || self.cols == 0 {
            return bad("image size must be positive");
        }
        if self.axis_points < 16 {
            return bad("axis needs at least 16 points");
        }
        if self.n_patients() == 0 {
            return bad("panel has no patients");
        }
        if !nonneg(self.noise_sigma) || !self.baseline_sigma.iter().all(|s| nonneg(*s)) {
            return bad("noise and baseline sigmas must be finite and non-negative");
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("scale range must satisfy 0 < low <= high");
        }
        let [hlo, hhi] = self.h2o_range;
        if !(nonneg(hlo) && hlo <= hhi && hhi.is_finite()) {
            return bad("h2o range must satisfy 0 <= low <= high");
        }
        for v in [
            self.core_jitter,
            self.pixel_jitter,
            self.type_separation,
            self.subtype_separation,
            self.class_amplitude,
            self.paraffin_in_tissue,
            self.spike_factor,
        ] {
            if !nonneg(v) {
                return bad("jitter, separation, amplitude and spike factor must be non-negative");
            }
        }
        if !(0.0..=1.0).contains(&self.spike_fraction) {
            return bad("spike fraction must lie in [0, 1]");
        }
        if !(self.tissue_radius > 0.0 && self.tissue_radius < self.paraffin_radius) {
            return bad("need 0 < tissue radius < paraffin radius");
        }
        Band::new(self.type_band[0], self.type_band[1])?;
        Ok(())
    }

    pub fn raw_axis(&self) -> Result<WavenumberAxis> {
        build_axis(RAW_START, RAW_END, self.axis_points)
    }

    pub fn type_band(&self) -> Band {
        Band::fixed(self.type_band[0], self.type_band[1])
    }
}

/// One patient of a panel: a cancer core and an adjacent-tissue core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: u32,
    pub subtype: Subtype,
    pub ca: CoreMeta,
    pub at: CoreMeta,
}

impl PatientRecord {
    pub fn cores(&self) -> [CoreMeta; 2] {
        [self.ca, self.at]
    }
}

/// Patients in subtype order; patient `p` owns cores `2p` (CA) and `2p+1` (AT).
pub fn panel_records(config: &SynthConfig) -> Vec<PatientRecord> {
    let mut out = Vec::with_capacity(config.n_patients());
    for (s, &n) in Subtype::ALL.iter().zip(&config.patients_per_subtype) {
        for _ in 0..n {
            let p = out.len() as u32;
            out.push(PatientRecord {
                patient_id: p,
                subtype: *s,
                ca: CoreMeta {
                    core_id: 2 * p,
                    patient_id: p,
                    core_type: CoreType::Cancer,
                    subtype: Some(*s),
                },
                at: CoreMeta {
                    core_id: 2 * p + 1,
                    patient_id: p,
                    core_type: CoreType::Adjacent,
                    subtype: None,
                },
            });
        }
    }
    out
}

/// Stream id of the environment image; cubes use their core id.
const ENVIRONMENT_STREAM: u64 = u64::MAX;

/// Precomputed band profiles for one configuration.
#[derive(Debug, Clone)]
pub struct Generator {
    config: SynthConfig,
    axis: WavenumberAxis,
    tissue_bands: Vec<BandSpec>,
    tissue: Vec<Vec<f64>>,
    paraffin: Vec<f64>,
    h2o: [Vec<f64>; 2],
    monomials: Vec<Vec<f64>>,
    fingerprint: std::ops::Range<usize>,
}

impl Generator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let axis = config.raw_axis()?;
        let mut tissue_bands: Vec<BandSpec> = TISSUE_BANDS.to_vec();
        let mut type_band = BandSpec::over(config.type_band());
        type_band.cancer_gain = config.class_amplitude;
        tissue_bands.push(type_band);
        for s in Subtype::ALL {
            let mut b = BandSpec::over(subtype_band(s));
            b.subtype_gain[s.index()] = config.class_amplitude;
            tissue_bands.push(b);
        }
        for b in tissue_bands.iter().chain(&PARAFFIN_BANDS) {
            b.validate()?;
        }
        let tissue = tissue_bands.iter().map(|b| b.profile(&axis)).collect();
        let mut paraffin = vec![0.0; axis.len()];
        for b in &PARAFFIN_BANDS {
            add_scaled(&mut paraffin, &b.profile(&axis), b.amplitude);
        }
        let lines = |centers: &[f64], extra: &[f64]| {
            let mut v = vec![0.0; axis.len()];
            for (k, c) in centers.iter().chain(extra).enumerate() {
                let strength = 0.4 + 0.6 * ((k * 7) % 5) as f64 / 4.0;
                add_scaled(
                    &mut v,
                    &BandSpec::plain(*c, H2O_SIGMA, 1.0).profile(&axis),
                    strength,
                );
            }
            v
        };
        let h2o = [
            lines(&H2O_LINES_A, &H2O_STRETCH[..3]),
            lines(&H2O_LINES_B, &H2O_STRETCH[3..]),
        ];
        let x = axis.scaled();
        let monomials = (0..5)
            .map(|k| x.iter().map(|v| v.powi(k)).collect())
            .collect();
        let fingerprint = axis.band_range(&BIOFINGERPRINT)?;
        Ok(Self {
            config,
            axis,
            tissue_bands,
            tissue,
            paraffin,
            h2o,
            monomials,
            fingerprint,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn axis(&self) -> &WavenumberAxis {
        &self.axis
    }

    /// Tissue bands including the class-dependent ones.
    pub fn tissue_bands(&self) -> &[BandSpec] {
        &self.tissue_bands
    }

    /// Noise-free, unscaled, baseline-free spectrum of a role.
    pub fn analytic(&self, class: SynthClass, role: Role) -> Vec<f64> {
        let c = &self.config;
        let mut out = vec![0.0; self.axis.len()];
        match role {
            Role::Tissue => {
                for (b, p) in self.tissue_bands.iter().zip(&self.tissue) {
                    let a = b.effective_amplitude(class, c.type_separation, c.subtype_separation);
                    add_scaled(&mut out, p, a);
                }
                add_scaled(&mut out, &self.paraffin, c.paraffin_in_tissue);
            }
            Role::Paraffin => add_scaled(&mut out, &self.paraffin, 1.0),
            Role::Slide => {}
            Role::H2o => {
                add_scaled(&mut out, &self.h2o[0], 1.0);
                add_scaled(&mut out, &self.h2o[1], 1.0);
            }
        }
        out
    }

    /// One spectrum. `core_gain` scales each tissue band for a whole core.
    fn pixel(
        &self,
        class: SynthClass,
        role: Role,
        core_gain: &[f64],
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) {
        let c = &self.config;
        out.fill(0.0);
        let jitter = |rng: &mut ChaCha8Rng| {
            let z: f64 = rng.sample(StandardNormal);
            (1.0 + c.pixel_jitter * z).max(0.0)
        };
        match role {
            Role::Tissue => {
                for ((b, p), g) in self.tissue_bands.iter().zip(&self.tissue).zip(core_gain) {
                    let a = b.effective_amplitude(class, c.type_separation, c.subtype_separation);
                    let j = jitter(rng);
                    if a > 0.0 {
                        add_scaled(out, p, a * g * j);
                    }
                }
                let j = jitter(rng);
                add_scaled(out, &self.paraffin, c.paraffin_in_tissue * j);
            }
            Role::Paraffin => {
                let j = jitter(rng);
                add_scaled(out, &self.paraffin, j);
            }
            Role::Slide | Role::H2o => {}
        }
        if role != Role::H2o {
            let s = uniform(rng, c.scale_range);
            if s != 1.0 {
                out.iter_mut().for_each(|v| *v *= s);
            }
            for (m, &sd) in self.monomials.iter().zip(&c.baseline_sigma) {
                if sd > 0.0 {
                    let k: f64 = rng.sample(StandardNormal);
                    add_scaled(out, m, sd * k);
                }
            }
        }
        let h2o_range = if role == Role::H2o {
            [0.5, 1.5]
        } else {
            c.h2o_range
        };
        for lines in &self.h2o {
            let a = uniform(rng, h2o_range);
            if a > 0.0 {
                add_scaled(out, lines, a);
            }
        }
        if c.noise_sigma > 0.0 {
            let n = Normal::new(0.0, c.noise_sigma).expect("validated sigma");
            out.iter_mut().for_each(|v| *v += n.sample(rng));
        }
    }

    /// A single spectrum of the given class and role, with per-core jitter drawn too.
    pub fn gen_spectrum(&self, class: SynthClass, role: Role, rng: &mut ChaCha8Rng) -> Spectrum {
        let gain = self.core_gain(rng);
        let mut out = vec![0.0; self.axis.len()];
        self.pixel(class, role, &gain, rng, &mut out);
        Spectrum::new(self.axis, out).expect("length matches the axis")
    }

    fn core_gain(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cj = self.config.core_jitter;
        self.tissue_bands
            .iter()
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (1.0 + cj * z).max(0.0)
            })
            .collect()
    }

    /// Pixel classes of a core: tissue disk, paraffin ring, slide elsewhere.
    fn layout(&self, rng: &mut ChaCha8Rng) -> Vec<PixelClass> {
        let c = &self.config;
        let (rows, cols) = (c.rows, c.cols);
        let side = rows.min(cols) as f64;
        let cy = (rows as f64 - 1.0) / 2.0 + rng.random_range(-0.05..=0.05) * side;
        let cx = (cols as f64 - 1.0) / 2.0 + rng.random_range(-0.05..=0.05) * side;
        let rt = c.tissue_radius * side * rng.random_range(0.9..=1.1);
        let rp = (c.paraffin_radius * side).max(rt + 1.0);
        let mut classes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for q in 0..cols {
                let d = ((r as f64 - cy).powi(2) + (q as f64 - cx).powi(2)).sqrt();
                classes.push(if d <= rt {
                    PixelClass::Tissue
                } else if d <= rp {
                    PixelClass::Paraffin
                } else {
                    PixelClass::Slide
                });
            }
        }
        classes
    }

    /// Cube of one core of `record`; a pure function of the config seed and core id.
    pub fn gen_cube(
        &self,
        record: &PatientRecord,
        core_type: CoreType,
    ) -> Result<(HyperCube, GroundTruth)> {
        let meta = match core_type {
            CoreType::Cancer => record.ca,
            CoreType::Adjacent => record.at,
        };
        let class = SynthClass {
            core_type,
            subtype: record.subtype,
        };
        let mut rng = self.rng(u64::from(meta.core_id));
        let classes = self.layout(&mut rng);
        let gain = self.core_gain(&mut rng);
        let n = self.axis.len();
        let mut data = vec![0f32; classes.len() * n];
        let mut buf = vec![0.0; n];
        for (px, cls) in classes.iter().enumerate() {
            let role = match cls {
                PixelClass::Tissue => Role::Tissue,
                PixelClass::Paraffin => Role::Paraffin,
                PixelClass::Slide => Role::Slide,
            };
            self.pixel(class, role, &gain, &mut rng, &mut buf);
            for (d, v) in data[px * n..(px + 1) * n].iter_mut().zip(&buf) {
                *d = *v as f32;
            }
        }
        let spikes = self.inject_spikes(&classes, &mut data, &mut rng);
        let cube = HyperCube::new(self.config.rows, self.config.cols, self.axis, data, meta)?;
        Ok((cube, GroundTruth { classes, spikes }))
    }

    fn inject_spikes(
        &self,
        classes: &[PixelClass],
        data: &mut [f32],
        rng: &mut ChaCha8Rng,
    ) -> Vec<bool> {
        let mut spikes = vec![false; classes.len()];
        let tissue: Vec<usize> = (0..classes.len())
            .filter(|&i| classes[i] == PixelClass::Tissue)
            .collect();
        let f = self.config.spike_fraction;
        if f == 0.0 || tissue.is_empty() {
            return spikes;
        }
        let count = ((f * tissue.len() as f64).round() as usize).clamp(1, tissue.len());
        let n = self.axis.len();
        for k in sample(rng, tissue.len(), count) {
            let px = tissue[k];
            let row = &mut data[px * n..(px + 1) * n];
            let peak = row.iter().fold(0f32, |m, v| m.max(v.abs()));
            let at = rng.random_range(self.fingerprint.clone());
            row[at] += (self.config.spike_factor * f64::from(peak)) as f32;
            spikes[px] = true;
        }
        spikes
    }

    /// Water-vapour spectra measured without a sample.
    pub fn gen_environment(&self) -> Matrix {
        let mut rng = self.rng(ENVIRONMENT_STREAM);
        let class = SynthClass {
            core_type: CoreType::Adjacent,
            subtype: Subtype::LuminalA,
        };
        let n = self.axis.len();
        let mut m = Matrix::zeros(self.config.environment_spectra, n);
        for i in 0..m.rows() {
            self.pixel(class, Role::H2o, &[], &mut rng, m.row_mut(i));
            // round through f32 like the stored cubes
            m.row_mut(i)
                .iter_mut()
                .for_each(|v| *v = f64::from(*v as f32));
        }
        m
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn add_scaled(out: &mut [f64], v: &[f64], a: f64) {
    out.iter_mut().zip(v).for_each(|(o, x)| *o += a * x);
}

/// A generated panel held in memory.
#[derive(Debug, Clone)]
pub struct Panel {
    pub records: Vec<PatientRecord>,
    /// Cubes in record order, CA before AT.
    pub cubes: Vec<(HyperCube, GroundTruth)>,
    pub environment: Matrix,
}

pub fn gen_panel(config: &SynthConfig) -> Result<Panel> {
    let g = Generator::new(config.clone())?;
    let records = panel_records(config);
    let jobs: Vec<(PatientRecord, CoreType)> = records
        .iter()
        .flat_map(|r| [(*r, CoreType::Cancer), (*r, CoreType::Adjacent)])
        .collect();
    let cubes = jobs
        .par_iter()
        .map(|(r, t)| g.gen_cube(r, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Panel {
        records,
        cubes,
        environment: g.gen_environment(),
    })
}

/// Index file written next to the cube files of a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelIndex {
    pub config: SynthConfig,
    pub records: Vec<PatientRecord>,
    /// Cube paths relative to the panel directory, keyed by core id.
    pub cubes: Vec<(u32, PathBuf)>,
    pub environment: PathBuf,
}

pub const PANEL_INDEX: &str = "panel.json";

impl PanelIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(PANEL_INDEX))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad panel index: {e}")))
    }

    pub fn cube_path(&self, dir: &Path, core_id: u32) -> Result<PathBuf> {
        self.cubes
            .iter()
            .find(|(id, _)| *id == core_id)
            .map(|(_, p)| dir.join(p))
            .ok_or_else(|| Error::Format(format!("panel has no cube for core {core_id}")))
    }
}

/// Generate and write a panel one cube at a time; returns the written files.
pub fn write_panel(config: &SynthConfig, dir: &Path) -> Result<(PanelIndex, Vec<PathBuf>)> {
    let g = Generator::new(config.clone())?;
    let records = panel_records(config);
    std::fs::create_dir_all(dir.join("cores"))?;
    let jobs: Vec<(PatientRecord, CoreType)> = records
        .iter()
        .flat_map(|r| [(*r, CoreType::Cancer), (*r, CoreType::Adjacent)])
        .collect();
    let cubes = jobs
        .par_iter()
        .map(|(r, t)| {
            let (cube, truth) = g.gen_cube(r, *t)?;
            let rel = PathBuf::from("cores").join(format!(
                "p{:03}_{}_c{:03}.crns",
                r.patient_id,
                t.name(),
                cube.meta.core_id
            ));
            write_cube(&dir.join(&rel), &cube, Some(&truth))?;
            Ok((cube.meta.core_id, rel))
        })
        .collect::<Result<Vec<_>>>()?;
    let environment = PathBuf::from("h2o.crns");
    write_environment(&dir.join(&environment), g.axis(), &g.gen_environment())?;
    let index = PanelIndex {
        config: config.clone(),
        records,
        cubes,
        environment,
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(PANEL_INDEX), json)?;
    let mut files: Vec<PathBuf> = index.cubes.iter().map(|(_, p)| dir.join(p)).collect();
    files.push(dir.join(&index.environment));
    files.push(dir.join(PANEL_INDEX));
    Ok((index, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{integrate_band, AMIDE_BAND};

    fn small() -> SynthConfig {
        SynthConfig {
            patients_per_subtype: [2, 2, 2, 2],
            rows: 12,
            cols: 12,
            ..SynthConfig::default()
        }
    }

    const CA_LA: SynthClass = SynthClass {
        core_type: CoreType::Cancer,
        subtype: Subtype::LuminalA,
    };

    #[test]
    fn tissue_amide_area_dwarfs_slide() {
        let g = Generator::new(SynthConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = integrate_band(&g.gen_spectrum(CA_LA, Role::Tissue, &mut rng), &AMIDE_BAND)
                .unwrap();
            let s =
                integrate_band(&g.gen_spectrum(CA_LA, Role::Slide, &mut rng), &AMIDE_BAND).unwrap();
            assert!(t >= 10.0 * s.abs(), "tissue {t} slide {s}");
        }
    }

    #[test]
    fn paraffin_maxima_at_known_peaks() {
        let cfg = SynthConfig::default().noiseless();
        let g = Generator::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = g.gen_spectrum(CA_LA, Role::Paraffin, &mut rng);
        let axis = *g.axis();
        let argmax_in = |hi: f64, lo: f64| {
            let r = axis.band_range(&Band::fixed(hi, lo)).unwrap();
            let i = r
                .clone()
                .max_by(|&a, &b| s.intensities()[a].total_cmp(&s.intensities()[b]))
                .unwrap();
            axis.value(i)
        };
        assert!((argmax_in(1500.0, 1420.0) - 1462.0).abs() <= axis.spacing());
        assert!((argmax_in(1420.0, 1320.0) - 1373.0).abs() <= axis.spacing());
    }

    #[test]
    fn noiseless_equals_analytic_sum() {
        let cfg = SynthConfig {
            h2o_range: [0.0, 0.0],
            ..SynthConfig::default().noiseless()
        };
        let g = Generator::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for role in [Role::Tissue, Role::Paraffin, Role::Slide] {
            let s = g.gen_spectrum(CA_LA, role, &mut rng);
            assert_eq!(
                s.intensities(),
                g.analytic(CA_LA, role).as_slice(),
                "{role:?}"
            );
        }
        let slide = g.gen_spectrum(CA_LA, Role::Slide, &mut rng);
        assert!(slide.intensities().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn panel_counts_and_partition() {
        let p = gen_panel(&small()).unwrap();
        assert_eq!(p.records.len(), 8);
        assert_eq!(p.cubes.len(), 16);
        let ca = p
            .cubes
            .iter()
            .filter(|(c, _)| c.meta.core_type == CoreType::Cancer)
            .count();
        assert_eq!(ca, 8);
        for (cube, truth) in &p.cubes {
            assert_eq!(truth.classes.len(), cube.n_pixels());
            let total: usize = [PixelClass::Tissue, PixelClass::Paraffin, PixelClass::Slide]
                .iter()
                .map(|k| truth.count(*k))
                .sum();
            assert_eq!(total, cube.n_pixels());
            assert!(truth.count(PixelClass::Tissue) > 0 && truth.count(PixelClass::Paraffin) > 0);
        }
        assert_eq!(p.environment.rows(), 32);
        assert_eq!(panel_records(&SynthConfig::default()).len(), 30);
    }

    #[test]
    fn same_seed_same_panel() {
        let a = gen_panel(&small()).unwrap();
        let b = gen_panel(&small()).unwrap();
        assert_eq!(a.cubes, b.cubes);
        assert_eq!(a.environment, b.environment);
        let c = gen_panel(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.cubes[0].0, c.cubes[0].0);
    }

    #[test]
    fn spikes_are_tall_and_recorded() {
        let cfg = SynthConfig {
            spike_fraction: 0.05,
            ..small()
        };
        let p = gen_panel(&cfg).unwrap();
        let clean = gen_panel(&small()).unwrap();
        let (cube, truth) = &p.cubes[0];
        let n_spiked = truth.spikes.iter().filter(|s| **s).count();
        let expected = (0.05 * truth.count(PixelClass::Tissue) as f64)
            .round()
            .max(1.0) as usize;
        assert_eq!(n_spiked, expected);
        for (i, _) in truth.spikes.iter().enumerate().filter(|(_, s)| **s) {
            assert_eq!(truth.classes[i], PixelClass::Tissue);
            let base = clean.cubes[0].0.pixel(i);
            let max = base.iter().fold(0f32, |m, v| m.max(v.abs()));
            let top = cube.pixel(i).iter().fold(0f32, |m, v| m.max(*v));
            assert!(top >= 10.0 * max);
        }
    }

    #[test]
    fn panel_written_and_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            patients_per_subtype: [1, 1, 1, 1],
            rows: 6,
            cols: 6,
            ..SynthConfig::default()
        };
        let (index, files) = write_panel(&cfg, dir.path()).unwrap();
        assert_eq!(files.len(), 8 + 2);
        let back = PanelIndex::read(dir.path()).unwrap();
        assert_eq!(back, index);
        let (cube, truth) =
            crate::dataset::read_cube(&back.cube_path(dir.path(), 3).unwrap()).unwrap();
        let mem = Generator::new(cfg)
            .unwrap()
            .gen_cube(&index.records[1], CoreType::Adjacent)
            .unwrap();
        assert_eq!(cube, mem.0);
        assert_eq!(truth.unwrap(), mem.1);
    }

    /// Fisher ratio of CA vs AT tissue projected on the noiseless mean difference.
    fn type_separability(sep: f64) -> f64 {
        let cfg = SynthConfig {
            type_separation: sep,
            ..SynthConfig::default()
        };
        let g = Generator::new(cfg).unwrap();
        let ca = CA_LA;
        let at = SynthClass {
            core_type: CoreType::Adjacent,
            ..ca
        };
        let d: Vec<f64> = g
            .analytic(ca, Role::Tissue)
            .iter()
            .zip(g.analytic(at, Role::Tissue))
            .map(|(a, b)| a - b)
            .collect();
        let w = if d.iter().all(|v| *v == 0.0) {
            g.tissue[10].clone()
        } else {
            d
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut proj = |class| -> Vec<f64> {
            (0..200)
                .map(|_| {
                    crate::linalg::dot(
                        g.gen_spectrum(class, Role::Tissue, &mut rng).intensities(),
                        &w,
                    )
                })
                .collect()
        };
        let (a, b) = (proj(ca), proj(at));
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (
                m,
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64,
            )
        };
        let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
        (ma - mb).powi(2) / (0.5 * (va + vb))
    }

    #[test]
    fn separability_grows_with_separation() {
        let f: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|s| type_separability(*s))
            .collect();
        assert!(f[0] < 0.1, "{f:?}");
        assert!(f.windows(2).all(|w| w[1] >= w[0]), "{f:?}");
    }

    #[test]
    fn zero_separation_classes_share_an_analytic_spectrum() {
        let g = Generator::new(SynthConfig {
            type_separation: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in Subtype::ALL {
            let ca = SynthClass {
                core_type: CoreType::Cancer,
                subtype: s,
            };
            let at = SynthClass {
                core_type: CoreType::Adjacent,
                subtype: s,
            };
            assert_eq!(g.analytic(ca, Role::Tissue), g.analytic(at, Role::Tissue));
        }
    }

    #[test]
    fn bad_configs_rejected() {
        for cfg in [
            SynthConfig { rows: 0, ..small() },
            SynthConfig {
                scale_range: [1.2, 0.8],
                ..small()
            },
            SynthConfig {
                noise_sigma: -1.0,
                ..small()
            },
            SynthConfig {
                patients_per_subtype: [0; 4],
                ..small()
            },
            SynthConfig {
                tissue_radius: 0.6,
                ..small()
            },
        ] {
            assert!(matches!(Generator::new(cfg), Err(Error::Config(_))));
        }
        let toml_cfg: SynthConfig = toml::from_str("seed = 5\nrows = 16\n").unwrap();
        assert_eq!(toml_cfg.rows, 16);
        assert_eq!(toml_cfg.cols, 32);
        assert!(toml::from_str::<SynthConfig>("bogus = 1").is_err());
    }
}
