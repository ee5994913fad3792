//! Grayscale image datasets from simulated fields, the two synthetic noise
//! classes, folder import and CSV manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::GrayImage;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fieldcore::{Fft2, Grid2D, RealField, SpectralField};
use crate::forcing::{sample_annulus_scalar, ForcingSpec};
use crate::rng::{stream_id, stream_rng, FlowRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSelect {
    Vorticity,
    Vx,
    Vy,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub field: FieldSelect,
    pub out_size: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            field: FieldSelect::Vorticity,
            out_size: 128,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_size < 32 {
            return Err(Error::Param(format!("out_size {} below 32", self.out_size)));
        }
        Ok(())
    }

    /// Short content hash recorded in manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("render spec serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: GrayImage,
    /// The field was identically zero and rendered flat mid-gray.
    pub flat: bool,
}

/// Periodic bilinear sample of `field` at fractional grid position `(u, v)`.
fn bilinear(field: &RealField, u: f64, v: f64) -> f64 {
    let n = field.grid().n();
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let w = |i: f64| (i as i64).rem_euclid(n as i64) as usize;
    let (xa, xb, ya, yb) = (w(x0), w(x0 + 1.0), w(y0), w(y0 + 1.0));
    let a = field.at(xa, ya) * (1.0 - fx) + field.at(xb, ya) * fx;
    let b = field.at(xa, yb) * (1.0 - fx) + field.at(xb, yb) * fx;
    a * (1.0 - fy) + b * fy
}

/// Symmetric map of `[-m, m]` onto `[0, 255]`: `v ≥ 0` goes to
/// `128 + ⌊127.5·v/m⌋`, `v < 0` to `127 - ⌊127.5·|v|/m⌋`, so negating a
/// nonzero value gives `255 - p` exactly and 0 lands on 128.
fn intensity(v: f64, m: f64) -> u8 {
    let level = (127.5 * v.abs() / m).floor().min(127.0) as u8;
    if v >= 0.0 {
        128 + level
    } else {
        127 - level
    }
}

/// Bilinear resample to `spec.out_size` and symmetric linear intensity map.
/// Pixel centres are aligned, so `out_size == n` reproduces the grid.
pub fn render_field(field: &RealField, spec: &RenderSpec) -> Result<Rendered> {
    spec.validate()?;
    field.check_finite()?;
    let size = spec.out_size;
    let m = field.max_abs();
    if m == 0.0 {
        return Ok(Rendered {
            image: GrayImage::from_pixel(size as u32, size as u32, image::Luma([128])),
            flat: true,
        });
    }
    let scale = field.grid().n() as f64 / size as f64;
    let mut image = GrayImage::new(size as u32, size as u32);
    for (i, j, p) in image.enumerate_pixels_mut() {
        let u = (i as f64 + 0.5) * scale - 0.5;
        let v = (j as f64 + 0.5) * scale - 0.5;
        p.0[0] = intensity(bilinear(field, u, v), m);
    }
    Ok(Rendered { image, flat: false })
}

pub fn image_to_f64(img: &GrayImage) -> Vec<f64> {
    img.as_raw().iter().map(|&p| p as f64).collect()
}

/// Annulus-scalar noise images: the forcing potential rendered directly.
pub fn gen_noise_annulus(
    count: usize,
    spec: &ForcingSpec,
    grid: Grid2D,
    render: &RenderSpec,
    rng: &mut FlowRng,
) -> Result<Vec<GrayImage>> {
    let fft = Fft2::cached(grid.n());
    (0..count)
        .map(|_| {
            let phi = sample_annulus_scalar(spec, grid, rng)?;
            Ok(render_field(&fft.inverse(&phi)?, render)?.image)
        })
        .collect()
}

/// Per-coefficient moments of the real transform of a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierNoiseStats {
    pub size: usize,
    pub count: usize,
    pub mean_re: Vec<f64>,
    pub mean_im: Vec<f64>,
    pub std_re: Vec<f64>,
    pub std_im: Vec<f64>,
}

pub fn fit_fourier_stats(images: &[GrayImage]) -> Result<FourierNoiseStats> {
    if images.len() < 2 {
        return Err(Error::Insufficient(format!(
            "{} images; Fourier statistics need at least 2",
            images.len()
        )));
    }
    let size = images[0].width() as usize;
    let grid = Grid2D::periodic(size)?;
    let fft = Fft2::cached(size);
    let len = grid.spectral_len();
    // Welford accumulation: exact zero spread for repeated images.
    let mut mean = vec![Complex64::new(0.0, 0.0); len];
    let mut m2_re = vec![0.0; len];
    let mut m2_im = vec![0.0; len];
    for (k, img) in images.iter().enumerate() {
        if img.width() as usize != size || img.height() as usize != size {
            return Err(Error::Shape(format!(
                "image {}x{} in a {size}x{size} set",
                img.width(),
                img.height()
            )));
        }
        let f = fft.forward_unchecked(grid, &image_to_f64(img));
        let w = 1.0 / (k + 1) as f64;
        for (i, c) in f.coeffs().iter().enumerate() {
            let d = c - mean[i];
            mean[i] += d * w;
            let d2 = c - mean[i];
            m2_re[i] += d.re * d2.re;
            m2_im[i] += d.im * d2.im;
        }
    }
    let dof = (images.len() - 1) as f64;
    let mut stats = FourierNoiseStats {
        size,
        count: images.len(),
        mean_re: mean.iter().map(|c| c.re).collect(),
        mean_im: mean.iter().map(|c| c.im).collect(),
        std_re: m2_re.iter().map(|v| (v / dof).sqrt()).collect(),
        std_im: m2_im.iter().map(|v| (v / dof).sqrt()).collect(),
    };
    for i in self_conjugate(grid) {
        stats.std_im[i] = 0.0;
        stats.mean_im[i] = 0.0;
    }
    Ok(stats)
}

/// Flat indices of the four real-valued modes of the half-plane layout.
fn self_conjugate(grid: Grid2D) -> [usize; 4] {
    let (n, nk) = (grid.n(), grid.nk());
    [0, nk - 1, (n / 2) * nk, (n / 2) * nk + nk - 1]
}

/// Independent Gaussian draws per coefficient, Hermitian-completed, inverse
/// transformed and re-rendered. The mean (k = 0) mode is dropped before
/// rendering so the symmetric intensity map spans the fluctuations.
pub fn gen_noise_fourier(
    stats: &FourierNoiseStats,
    count: usize,
    rng: &mut FlowRng,
) -> Result<Vec<GrayImage>> {
    let grid = Grid2D::periodic(stats.size)?;
    let fft = Fft2::cached(stats.size);
    let render = RenderSpec {
        field: FieldSelect::Vorticity,
        out_size: stats.size,
    };
    (0..count)
        .map(|_| {
            let f = draw_fourier(stats, grid, rng)?;
            Ok(render_field(&fft.inverse(&f)?, &render)?.image)
        })
        .collect()
}

fn draw_fourier(
    stats: &FourierNoiseStats,
    grid: Grid2D,
    rng: &mut FlowRng,
) -> Result<SpectralField> {
    let len = grid.spectral_len();
    let coeffs: Vec<Complex64> = (0..len)
        .map(|i| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex64::new(
                stats.mean_re[i] + stats.std_re[i] * a,
                stats.mean_im[i] + stats.std_im[i] * b,
            )
        })
        .collect();
    let mut f = SpectralField::from_coeffs(grid, coeffs)?;
    // Columns kx = 0 and kx = n/2 hold each mode twice; keep the upper half.
    let n = grid.n();
    for ix in [0, grid.nk() - 1] {
        for iy in n / 2 + 1..n {
            let c = f.get(ix, n - iy).conj();
            f.set(ix, iy, c);
        }
    }
    for i in self_conjugate(grid) {
        f.coeffs_mut()[i].im = 0.0;
    }
    f.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub sim_id: String,
    pub t: Option<f64>,
    pub regime: String,
    pub generator: String,
    pub render_hash: String,
    pub split: Split,
}

/// Rows plus the directory their relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl DatasetManifest {
    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let path = self.root.join(MANIFEST_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Reads `dir/manifest.csv`.
    pub fn read(dir: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(dir.join(MANIFEST_FILE))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            rows,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }

    pub fn load_image(&self, row: &ManifestRow) -> Result<GrayImage> {
        Ok(image::open(self.root.join(&row.path))?.to_luma8())
    }

    /// Every row's file exists and sim ids never straddle the split.
    pub fn check_integrity(&self) -> Result<()> {
        let mut sims: BTreeMap<(&str, &str), Split> = BTreeMap::new();
        for r in &self.rows {
            if !self.root.join(&r.path).is_file() {
                return Err(Error::Missing(vec![r.path.clone()]));
            }
            if let Some(s) = sims.insert((&r.label, &r.sim_id), r.split) {
                if s != r.split {
                    return Err(Error::Param(format!(
                        "sim {} of class {} appears in both splits",
                        r.sim_id, r.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One labelled image awaiting a split.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: String,
    pub sim_id: String,
    pub t: Option<f64>,
    pub regime: String,
    pub generator: String,
    pub render_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Caps applied per class after the sim-level split.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub min_test_per_class: usize,
    pub seed: u64,
}

/// Splits by sim id within each class, writes PNGs under `out/<label>/` and
/// the manifest.
pub fn build_dataset(
    sources: Vec<LabeledImage>,
    cfg: &SplitConfig,
    out: &Path,
) -> Result<DatasetManifest> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Param(format!(
            "test_fraction {} must lie in (0, 1)",
            cfg.test_fraction
        )));
    }
    // Whole runs go to one split, so every class drawn from a run shares
    // its assignment.
    let mut want: BTreeMap<String, usize> = BTreeMap::new();
    let mut sims: BTreeMap<String, Vec<LabeledImage>> = BTreeMap::new();
    for s in sources {
        *want.entry(s.label.clone()).or_default() += 1;
        sims.entry(s.sim_id.clone()).or_default().push(s);
    }
    for w in want.values_mut() {
        *w = (cfg.test_fraction * *w as f64).round() as usize;
    }
    let mut rng = stream_rng(cfg.seed, stream_id("split", 0));
    let mut ids: Vec<String> = sims.keys().cloned().collect();
    ids.shuffle(&mut rng);
    let mut train: BTreeMap<String, Vec<LabeledImage>> = BTreeMap::new();
    let mut test: BTreeMap<String, Vec<LabeledImage>> = BTreeMap::new();
    for id in ids {
        let group = sims.remove(&id).expect("sim id present");
        let to_test = group
            .iter()
            .any(|s| test.get(&s.label).map_or(0, Vec::len) < want[&s.label]);
        let dest = if to_test { &mut test } else { &mut train };
        for s in group {
            dest.entry(s.label.clone()).or_default().push(s);
        }
    }
    let mut chosen: Vec<(LabeledImage, Split)> = Vec::new();
    let mut shortfalls = Vec::new();
    for label in want.keys() {
        let mut tr = train.remove(label).unwrap_or_default();
        let mut te = test.remove(label).unwrap_or_default();
        for (set, cap) in [
            (&mut tr, cfg.train_per_class),
            (&mut te, cfg.test_per_class),
        ] {
            if let Some(cap) = cap {
                if set.len() > cap {
                    set.shuffle(&mut rng);
                    set.truncate(cap);
                }
            }
        }
        if te.len() < cfg.min_test_per_class || tr.is_empty() {
            shortfalls.push(format!("{label}: {} train / {} test", tr.len(), te.len()));
        }
        chosen.extend(tr.into_iter().map(|s| (s, Split::Train)));
        chosen.extend(te.into_iter().map(|s| (s, Split::Test)));
    }
    if !shortfalls.is_empty() {
        return Err(Error::Insufficient(format!(
            "need at least {} test images and a nonempty train split per class; have {}",
            cfg.min_test_per_class,
            shortfalls.join(", ")
        )));
    }
    write_dataset(chosen, out)
}

/// Test-only dataset, e.g. for out-of-distribution evaluation: each label
/// is subsampled to at most `per_class` images with a seeded shuffle.
pub fn build_eval_set(
    sources: Vec<LabeledImage>,
    per_class: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<DatasetManifest> {
    if sources.is_empty() {
        return Err(Error::Insufficient("evaluation set has no images".into()));
    }
    let mut by_label: BTreeMap<String, Vec<LabeledImage>> = BTreeMap::new();
    for s in sources {
        by_label.entry(s.label.clone()).or_default().push(s);
    }
    let mut chosen = Vec::new();
    for (i, (_, mut items)) in by_label.into_iter().enumerate() {
        if let Some(cap) = per_class.filter(|&c| c < items.len()) {
            items.shuffle(&mut stream_rng(seed, stream_id("eval-cap", i as u64)));
            items.truncate(cap);
        }
        chosen.extend(items.into_iter().map(|s| (s, Split::Test)));
    }
    write_dataset(chosen, out)
}

fn write_dataset(mut chosen: Vec<(LabeledImage, Split)>, out: &Path) -> Result<DatasetManifest> {
    chosen.sort_by(|a, b| {
        (&a.0.label, a.1, &a.0.sim_id, a.0.t.map(f64::to_bits)).cmp(&(
            &b.0.label,
            b.1,
            &b.0.sim_id,
            b.0.t.map(f64::to_bits),
        ))
    });
    let mut rows = Vec::with_capacity(chosen.len());
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for (item, split) in chosen {
        let c = counters.entry(item.label.clone()).or_default();
        let rel = format!("{}/{:06}.png", sanitize(&item.label), c);
        *c += 1;
        let path = out.join(&rel);
        fs::create_dir_all(path.parent().expect("image path has a parent"))?;
        item.image.save(&path)?;
        rows.push(ManifestRow {
            path: rel,
            label: item.label,
            sim_id: item.sim_id,
            t: item.t,
            regime: item.regime,
            generator: item.generator,
            render_hash: item.render_hash,
            split,
        });
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        rows,
    };
    manifest.write()?;
    Ok(manifest)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Imports `folder/<label>/*` as grayscale `out_size²` images into `out`.
/// Undecodable files are skipped; their count is returned alongside.
pub fn import_images(folder: &Path, out_size: u32, out: &Path) -> Result<(DatasetManifest, usize)> {
    let mut classes: Vec<PathBuf> = fs::read_dir(folder)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    let mut rows = Vec::new();
    let mut skipped = 0;
    let hash = hex::encode(&Sha256::digest(format!("import:{out_size}").as_bytes())[..8]);
    for class in classes {
        let label = class
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Param(format!("bad class folder {}", class.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&class)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let img = match image::open(&f) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", f.display());
                    skipped += 1;
                    continue;
                }
            };
            let gray = img.to_luma8();
            let gray = if gray.dimensions() == (out_size, out_size) {
                gray
            } else {
                image::imageops::resize(&gray, out_size, out_size, FilterType::Triangle)
            };
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let rel = format!("{}/{}.png", sanitize(&label), sanitize(stem));
            let path = out.join(&rel);
            fs::create_dir_all(path.parent().expect("image path has a parent"))?;
            gray.save(&path)?;
            rows.push(ManifestRow {
                path: rel,
                label: label.clone(),
                sim_id: format!("import:{stem}"),
                t: None,
                regime: "external".into(),
                generator: "import".into(),
                render_hash: hash.clone(),
                split: Split::Test,
            });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} undecodable files skipped");
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        rows,
    };
    manifest.write()?;
    Ok((manifest, skipped))
}
