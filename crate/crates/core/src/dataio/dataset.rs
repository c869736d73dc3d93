//! Dataset sources and deterministic shuffled epoch streaming.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{kernels, Tensor};
use crate::View;

use super::{load_image, DataError, GrayImage, LabeledImage, PhantomConfig, Result};

/// A finite source of labeled images at a fixed resolution. `item(i)` must
/// be deterministic.
pub trait Dataset {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn item(&self, index: usize) -> &LabeledImage;
    fn resolution(&self) -> (usize, usize);
}

/// Synthetic phantoms, materialized eagerly so repeated epochs are cheap.
pub struct PhantomDataset {
    items: Vec<LabeledImage>,
    resolution: (usize, usize),
}

impl PhantomDataset {
    pub fn new(cfg: &PhantomConfig, count: usize) -> Result<PhantomDataset> {
        cfg.validate().map_err(|e| DataError::Malformed { path: "phantom config".into(), detail: e })?;
        if count == 0 {
            return Err(DataError::EmptyDataset);
        }
        let items: Vec<LabeledImage> = (0..count as u64).map(|i| cfg.generate(i)).collect();
        Ok(PhantomDataset { items, resolution: (cfg.height, cfg.width) })
    }
}

impl Dataset for PhantomDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn item(&self, index: usize) -> &LabeledImage {
        &self.items[index]
    }

    fn resolution(&self) -> (usize, usize) {
        self.resolution
    }
}

/// Images listed in a `path,view` manifest CSV, loaded up front. An
/// optional exclusion predicate drops items at load time.
pub struct DirDataset {
    items: Vec<LabeledImage>,
    resolution: (usize, usize),
}

impl DirDataset {
    pub fn from_manifest(
        manifest: &Path,
        exclude: Option<&dyn Fn(&LabeledImage) -> bool>,
    ) -> Result<DirDataset> {
        let text = std::fs::read_to_string(manifest)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut entries: Vec<(PathBuf, View)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // allow a "path,view" header row
            if lineno == 0 && line.eq_ignore_ascii_case("path,view") {
                continue;
            }
            let (path, view) = line.rsplit_once(',').ok_or_else(|| DataError::Malformed {
                path: manifest.display().to_string(),
                detail: format!("line {}: expected 'path,view'", lineno + 1),
            })?;
            let view: View = view.trim().parse().map_err(|e| DataError::Malformed {
                path: manifest.display().to_string(),
                detail: format!("line {}: {e}", lineno + 1),
            })?;
            entries.push((base.join(path.trim()), view));
        }
        Self::load_entries(entries, exclude)
    }

    fn load_entries(
        entries: Vec<(PathBuf, View)>,
        exclude: Option<&dyn Fn(&LabeledImage) -> bool>,
    ) -> Result<DirDataset> {
        let mut items = Vec::with_capacity(entries.len());
        let mut resolution = None;
        for (path, view) in entries {
            let image = load_image(&path)?;
            let res = (image.height(), image.width());
            match resolution {
                None => resolution = Some(res),
                Some(r) if r != res => {
                    return Err(DataError::Malformed {
                        path: path.display().to_string(),
                        detail: format!("resolution {res:?} differs from {r:?}"),
                    })
                }
                _ => {}
            }
            let item = LabeledImage {
                image,
                view,
                source_id: path.display().to_string(),
            };
            if exclude.map(|f| f(&item)).unwrap_or(false) {
                continue;
            }
            items.push(item);
        }
        if items.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Ok(DirDataset { items, resolution: resolution.unwrap() })
    }
}

impl Dataset for DirDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn item(&self, index: usize) -> &LabeledImage {
        &self.items[index]
    }

    fn resolution(&self) -> (usize, usize) {
        self.resolution
    }
}

/// Load every `.pgm`/`.png`/`.tnsr` image in a directory, sorted by file
/// name for determinism. Used by the evaluation commands.
pub fn load_images_from_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("pgm") | Some("png") | Some("tnsr")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    paths.iter().map(|p| load_image(p)).collect()
}

/// Deterministic shuffled epoch stream over a dataset. Each epoch is a
/// fresh seeded permutation; every item appears exactly once per epoch and
/// the stream wraps around indefinitely. Batches are delivered at the
/// requested resolution by repeated 2x mean pooling.
pub struct EpochStream<'d> {
    dataset: &'d dyn Dataset,
    seed: u64,
    epoch: u64,
    cursor: usize,
    perm: Vec<u32>,
}

impl<'d> EpochStream<'d> {
    pub fn new(dataset: &'d dyn Dataset, seed: u64) -> Result<EpochStream<'d>> {
        Self::restore(dataset, seed, 0, 0)
    }

    /// Rebuild the stream at an exact (epoch, cursor) position.
    pub fn restore(
        dataset: &'d dyn Dataset,
        seed: u64,
        epoch: u64,
        cursor: usize,
    ) -> Result<EpochStream<'d>> {
        if dataset.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let mut s = EpochStream { dataset, seed, epoch, cursor, perm: Vec::new() };
        s.perm = s.permutation(epoch);
        Ok(s)
    }

    pub fn position(&self) -> (u64, usize) {
        (self.epoch, self.cursor)
    }

    fn permutation(&self, epoch: u64) -> Vec<u32> {
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(&epoch.to_le_bytes());
        seed_bytes[16] = 0xe1;
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        let n = self.dataset.len();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        perm
    }

    /// Next `n` items as a `[n,1,h,w]` tensor at resolution `(h, w)` plus
    /// their view labels.
    pub fn next_batch(&mut self, n: usize, res: (usize, usize)) -> Result<(Tensor, Vec<View>)> {
        let (sh, sw) = self.dataset.resolution();
        let (th, tw) = res;
        let steps = downsample_steps((sh, sw), (th, tw))
            .ok_or(DataError::IncompatibleResolution { src: (sh, sw), dst: (th, tw) })?;

        let mut data = Vec::with_capacity(n * sh * sw);
        let mut views = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor >= self.perm.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.perm = self.permutation(self.epoch);
            }
            let item = self.dataset.item(self.perm[self.cursor] as usize);
            self.cursor += 1;
            data.extend_from_slice(item.image.data());
            views.push(item.view);
        }
        let mut batch = Tensor::from_parts(vec![n, 1, sh, sw], data);
        for _ in 0..steps {
            batch = kernels::down2(&batch);
        }
        Ok((batch, views))
    }
}

/// Number of 2x pooling steps from `src` to `dst`, if both extents shrink
/// by the same power of two.
pub fn downsample_steps(src: (usize, usize), dst: (usize, usize)) -> Option<u32> {
    if dst.0 == 0 || dst.1 == 0 || src.0 % dst.0 != 0 || src.1 % dst.1 != 0 {
        return None;
    }
    let (fh, fw) = (src.0 / dst.0, src.1 / dst.1);
    if fh != fw || !fh.is_power_of_two() {
        return None;
    }
    Some(fh.trailing_zeros())
}
