//! Septuplet datasets on disk, the synthetic scene generator and the
//! in-memory sample pipeline.

mod augment;
mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use jnmr_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, Applied, AugmentationPolicy};
pub use scene::{Family, GeneratedScene, KinematicScene, SceneSampler, Shape, Sprite, Stage, Trajectory, SUPERSAMPLE};

use crate::error::{invalid, io_error, Error, Result};
use crate::motion_model::FrameTensor;

/// One-based file numbers of the inputs (`t = -2, -1, 1, 2`) and target.
pub const INPUT_FILES: [usize; 4] = [2, 3, 5, 6];
pub const TARGET_FILE: usize = 4;
pub const SEPTUPLET_LEN: usize = 7;

/// Four inputs in temporal order `-2, -1, 1, 2` and the middle frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Scalar> {
    pub id: String,
    pub inputs: [FrameTensor<T>; 4],
    pub target: FrameTensor<T>,
    /// Mean true motion magnitude in pixels, when known.
    pub magnitude: Option<f64>,
}

impl<T: Scalar> Sample<T> {
    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            inputs: self.inputs.clone().map(|f| f.cast()),
            target: self.target.cast(),
            magnitude: self.magnitude,
        }
    }
}

pub fn frame_file(seq_dir: &Path, number: usize) -> PathBuf {
    seq_dir.join(format!("im{number}.png"))
}

/// Reads an 8-bit image as RGB in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<FrameTensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(FrameTensor::from_fn(3, h, w, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first three channels as an 8-bit RGB PNG, clamping to
/// `[0, 1]`.
pub fn write_png<T: Scalar>(path: &Path, frame: &FrameTensor<T>) -> Result<()> {
    let (c, h, w) = frame.dims();
    if c != 3 {
        return Err(invalid(format!("PNG output needs 3 channels, got {c}")));
    }
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|k| quantize(frame.get(k, y as usize, x as usize))))
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rounds to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize_frame<T: Scalar>(frame: &FrameTensor<T>) -> FrameTensor<T> {
    let (c, h, w) = frame.dims();
    FrameTensor::from_fn(c, h, w, |k, y, x| T::lit(quantize(frame.get(k, y, x)) as f64 / 255.0))
        .cast::<f32>()
        .cast()
}

/// Sequence folders `<root>/<id>/im1.png .. im7.png`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeptupletIndex {
    pub root: PathBuf,
    pub ids: Vec<String>,
}

impl SeptupletIndex {
    /// Reads a split list: one sequence id per line, blank lines ignored.
    pub fn from_split(root: &Path, list: &Path) -> Result<Self> {
        let text = fs::read_to_string(list).map_err(io_error(format!("reading split list {}", list.display())))?;
        let ids = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        Ok(SeptupletIndex {
            root: root.to_path_buf(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks that every sequence has all seven files at one resolution.
    pub fn validate(&self) -> Result<()> {
        let mut size = None;
        for id in &self.ids {
            let dir = self.root.join(id);
            for n in 1..=SEPTUPLET_LEN {
                let path = frame_file(&dir, n);
                let dims = image::image_dimensions(&path).map_err(|e| Error::Sequence {
                    sequence: id.clone(),
                    message: format!("{}: {e}", path.display()),
                })?;
                match size {
                    None => size = Some(dims),
                    Some(s) if s != dims => {
                        return Err(Error::Sequence {
                            sequence: id.clone(),
                            message: format!("{} is {dims:?}, expected {s:?}", path.display()),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn load(&self, i: usize) -> Result<Sample<f32>> {
        let id = self
            .ids
            .get(i)
            .ok_or_else(|| invalid(format!("sample {i} out of range for {} sequences", self.ids.len())))?;
        let dir = self.root.join(id);
        let read = |n: usize| {
            read_png(&frame_file(&dir, n)).map_err(|e| Error::Sequence {
                sequence: id.clone(),
                message: e.to_string(),
            })
        };
        let inputs = [read(INPUT_FILES[0])?, read(INPUT_FILES[1])?, read(INPUT_FILES[2])?, read(INPUT_FILES[3])?];
        let target = read(TARGET_FILE)?;
        if inputs.iter().any(|f| f.dims() != target.dims()) {
            return Err(Error::Sequence {
                sequence: id.clone(),
                message: "frames differ in resolution".into(),
            });
        }
        Ok(Sample {
            id: id.clone(),
            inputs,
            target,
            magnitude: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub height: usize,
    pub width: usize,
    pub sampler: SceneSampler,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: 0,
            train: 2000,
            test: 200,
            height: 64,
            width: 64,
            sampler: SceneSampler::default(),
        }
    }
}

/// One scene of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub family: Family,
    pub magnitude: f64,
    pub scene: KinematicScene,
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenerateConfig,
    pub scenes: Vec<SceneRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SEQUENCE_DIR: &str = "sequences";

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_error(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(io_error(format!("writing {}", path.display())))
    }
}

fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    let salt = match split {
        Split::Train => 0x7472_6169_6e00_0000u64,
        Split::Test => 0x7465_7374_0000_0000u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rand::Rng::random(&mut rng)
}

/// Draws the scenes of `split`; families cycle linear, quadratic,
/// piecewise-quadratic so they come in equal proportion.
pub fn sample_scenes(cfg: &GenerateConfig, split: Split) -> Result<Vec<SceneRecord>> {
    let count = match split {
        Split::Train => cfg.train,
        Split::Test => cfg.test,
    };
    (0..count)
        .map(|i| {
            let seed = scene_seed(cfg.seed, split, i);
            let family = Family::ALL[i % 3];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = cfg.sampler.sample(&mut rng, family, cfg.height, cfg.width)?;
            Ok(SceneRecord {
                id: format!("{}_{i:05}", split.as_str()),
                split,
                seed,
                family,
                magnitude: scene.motion_magnitude(),
                scene,
            })
        })
        .collect()
}

/// Renders a scene's four inputs and target, quantized to 8 bits so the
/// in-memory and on-disk paths agree.
pub fn render_sample(record: &SceneRecord) -> Result<Sample<f32>> {
    let frame = |t: f64| -> Result<FrameTensor<f32>> { Ok(quantize_frame(&record.scene.render(t)?).cast()) };
    Ok(Sample {
        id: record.id.clone(),
        inputs: [frame(-2.0)?, frame(-1.0)?, frame(1.0)?, frame(2.0)?],
        target: frame(0.0)?,
        magnitude: Some(record.magnitude),
    })
}

/// Writes a septuplet dataset (`t = -3 .. 3` as `im1 .. im7`), the split
/// lists `train.txt` / `test.txt` and the manifest under `out`.
pub fn write_dataset(cfg: &GenerateConfig, out: &Path) -> Result<Manifest> {
    let mut scenes = sample_scenes(cfg, Split::Train)?;
    scenes.extend(sample_scenes(cfg, Split::Test)?);
    let seq_root = out.join(SEQUENCE_DIR);
    for rec in &scenes {
        let dir = seq_root.join(&rec.id);
        fs::create_dir_all(&dir).map_err(io_error(format!("creating {}", dir.display())))?;
        for n in 1..=SEPTUPLET_LEN {
            let t = n as f64 - TARGET_FILE as f64;
            write_png(&frame_file(&dir, n), &rec.scene.render(t)?)?;
        }
    }
    for split in [Split::Train, Split::Test] {
        let ids: Vec<&str> = scenes.iter().filter(|r| r.split == split).map(|r| r.id.as_str()).collect();
        let path = out.join(format!("{}.txt", split.as_str()));
        fs::write(&path, ids.join("\n") + "\n").map_err(io_error(format!("writing {}", path.display())))?;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        scenes,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Samples held in memory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample<f32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn generate(cfg: &GenerateConfig, split: Split) -> Result<Self> {
        let samples = sample_scenes(cfg, split)?.iter().map(render_sample).collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    /// Loads split `split` of a dataset directory written by
    /// [`write_dataset`] or laid out the same way. Motion magnitudes are
    /// attached when a manifest is present.
    pub fn load_dir(dir: &Path, split: Split) -> Result<Self> {
        let list = dir.join(format!("{}.txt", split.as_str()));
        let seq_root = if dir.join(SEQUENCE_DIR).is_dir() { dir.join(SEQUENCE_DIR) } else { dir.to_path_buf() };
        let index = SeptupletIndex::from_split(&seq_root, &list)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.is_file() { Some(Manifest::read(&manifest_path)?) } else { None };
        let mut samples = Vec::with_capacity(index.len());
        for i in 0..index.len() {
            let mut s = index.load(i)?;
            if let Some(m) = &manifest {
                s.magnitude = m.scenes.iter().find(|r| r.id == s.id).map(|r| r.magnitude);
            }
            samples.push(s);
        }
        Ok(Dataset { samples })
    }

    pub fn frame_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.target.height(), s.target.width()))
    }
}

/// Sample order of `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03));
    order.shuffle(&mut rng);
    order
}

/// Inputs stacked as four `N x 3 x H x W` tensors plus the targets.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub ids: Vec<String>,
    pub inputs: [Tensor<T>; 4],
    pub target: Tensor<T>,
}

pub fn collate<T: Scalar>(samples: &[Sample<T>]) -> Result<Batch<T>> {
    if samples.is_empty() {
        return Err(invalid("empty batch"));
    }
    let stack = |f: &dyn Fn(&Sample<T>) -> &FrameTensor<T>| -> Result<Tensor<T>> {
        let items: Vec<Tensor<T>> = samples.iter().map(|s| f(s).to_batch()).collect();
        let parts: Vec<Tensor<T>> = items
            .into_iter()
            .map(|t| {
                let s = t.shape()[1..].to_vec();
                t.reshape(&s)
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::stack(&parts)?)
    };
    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        inputs: [
            stack(&|s| &s.inputs[0])?,
            stack(&|s| &s.inputs[1])?,
            stack(&|s| &s.inputs[2])?,
            stack(&|s| &s.inputs[3])?,
        ],
        target: stack(&|s| &s.target)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenerateConfig {
        GenerateConfig {
            seed: 11,
            train: 6,
            test: 3,
            height: 24,
            width: 24,
            sampler: SceneSampler::default(),
        }
    }

    #[test]
    fn families_are_balanced_and_generation_is_reproducible() {
        let cfg = small_cfg();
        let a = sample_scenes(&cfg, Split::Train).unwrap();
        let b = sample_scenes(&cfg, Split::Train).unwrap();
        assert_eq!(a, b);
        for f in Family::ALL {
            assert_eq!(a.iter().filter(|r| r.family == f).count(), 2);
        }
        let t = sample_scenes(&cfg, Split::Test).unwrap();
        assert_ne!(a[0].seed, t[0].seed);
    }

    #[test]
    fn written_dataset_loads_back_like_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let manifest = write_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 9);
        let disk = Dataset::load_dir(dir.path(), Split::Test).unwrap();
        let mem = Dataset::generate(&cfg, Split::Test).unwrap();
        assert_eq!(disk.samples, mem.samples);
        let back = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn missing_target_names_the_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig {
            train: 2,
            test: 0,
            ..small_cfg()
        };
        write_dataset(&cfg, dir.path()).unwrap();
        let seq = dir.path().join(SEQUENCE_DIR).join("train_00001");
        fs::remove_file(frame_file(&seq, TARGET_FILE)).unwrap();
        let index = SeptupletIndex::from_split(&dir.path().join(SEQUENCE_DIR), &dir.path().join("train.txt")).unwrap();
        assert!(index.load(0).is_ok());
        let err = index.load(1).unwrap_err().to_string();
        assert!(err.contains("train_00001"), "{err}");
        assert!(index.validate().unwrap_err().to_string().contains("train_00001"));
    }

    #[test]
    fn full_intensity_reads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        write_png(&path, &FrameTensor::filled(3, 2, 3, 1.0f32)).unwrap();
        let f = read_png(&path).unwrap();
        assert_eq!(f.dims(), (3, 2, 3));
        assert!(f.tensor().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn epoch_order_is_a_reproducible_permutation() {
        let a = epoch_order(50, 7, 3);
        assert_eq!(a, epoch_order(50, 7, 3));
        assert_ne!(a, epoch_order(50, 7, 4));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn collate_stacks_in_order() {
        let mem = Dataset::generate(&small_cfg(), Split::Test).unwrap();
        let b = collate(&mem.samples).unwrap();
        assert_eq!(b.target.shape(), &[3, 3, 24, 24]);
        assert_eq!(FrameTensor::from_batch(&b.inputs[2], 1).unwrap(), mem.samples[1].inputs[2]);
    }
}
