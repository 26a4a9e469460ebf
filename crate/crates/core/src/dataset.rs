//! On-disk datasets: `manifest.json` plus one blob per modality.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob::{Blob, BlobData};
use crate::error::{Error, Result};
use crate::scene::{
    check_success, make_instruction, median_script_length, render_topview, sample_scene, synthesize_trajectory,
    DatasetConfig, ImageTensor, SceneSpec, Thresholds, TokenSequence, Trajectory, IMAGE_SIZE, L_MAX, T_MAX,
    VOCABULARY,
};
use crate::seed::rng_for;

pub const FORMAT: &str = "mmvae-dataset/1";
pub const IMAGES: &str = "images.bin";
pub const TEXT: &str = "text.bin";
pub const TRAJ: &str = "traj.bin";
pub const TRAJ_MASK: &str = "traj_mask.bin";
pub const SCENES: &str = "scenes.jsonl";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub image: ImageTensor,
    pub instruction: TokenSequence,
    pub trajectory: Trajectory,
    pub scene: SceneSpec,
    pub thresholds: Thresholds,
}

/// Trial `index` of the dataset seeded by `seed`. The demonstration is
/// checked against its own scene before it is returned.
pub fn generate_episode(config: &DatasetConfig, seed: u64, index: u64) -> Result<EpisodeRecord> {
    let fail = |e: Error| Error::Generation(format!("trial {index}: {e}"));
    let mut rng = rng_for(seed, "dataset", index);
    let scene = sample_scene(config, &mut rng).map_err(fail)?;
    let trajectory = synthesize_trajectory(&scene, &mut rng).map_err(fail)?;
    let thresholds = Thresholds::default();
    if !check_success(&scene, &trajectory).map_err(fail)?.success {
        return Err(fail(Error::Generation("scripted demonstration fails its own task".into())));
    }
    Ok(EpisodeRecord { image: render_topview(&scene), instruction: make_instruction(&scene), trajectory, scene, thresholds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub seed: u64,
    pub n: usize,
    pub vocabulary: Vec<String>,
    pub thresholds: Thresholds,
    pub shapes: BTreeMap<String, Vec<usize>>,
    /// Median scripted length per task name.
    pub median_lengths: BTreeMap<String, usize>,
    pub task_counts: BTreeMap<String, usize>,
}

pub fn generate_dataset(config: &DatasetConfig, n: usize, seed: u64, out: &Path) -> Result<Manifest> {
    config.validate()?;
    let episodes = (0..n as u64).map(|i| generate_episode(config, seed, i)).collect::<Result<Vec<_>>>()?;

    let mut images = Vec::with_capacity(n * IMAGE_SIZE * IMAGE_SIZE * 3);
    let mut text = Vec::with_capacity(n * L_MAX);
    let mut traj = Vec::with_capacity(n * T_MAX * 4);
    let mut mask = Vec::with_capacity(n * T_MAX);
    let mut scenes = String::new();
    let mut task_counts = BTreeMap::new();
    for e in &episodes {
        images.extend(e.image.to_bytes());
        text.extend(e.instruction.tokens.iter().map(|t| *t as u16));
        let (d, m) = e.trajectory.padded(T_MAX);
        traj.extend(d);
        mask.extend(m);
        scenes.push_str(&serde_json::to_string(&e.scene)?);
        scenes.push('\n');
        *task_counts.entry(e.scene.task.name().to_string()).or_insert(0) += 1;
    }

    let shapes: BTreeMap<String, Vec<usize>> = [
        (IMAGES, vec![n, IMAGE_SIZE, IMAGE_SIZE, 3]),
        (TEXT, vec![n, L_MAX]),
        (TRAJ, vec![n, T_MAX, 4]),
        (TRAJ_MASK, vec![n, T_MAX]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    fs::create_dir_all(out)?;
    Blob::new(shapes[IMAGES].clone(), BlobData::U8(images))?.write_to(fs::File::create(out.join(IMAGES))?)?;
    Blob::new(shapes[TEXT].clone(), BlobData::U16(text))?.write_to(fs::File::create(out.join(TEXT))?)?;
    Blob::new(shapes[TRAJ].clone(), BlobData::F32(traj))?.write_to(fs::File::create(out.join(TRAJ))?)?;
    Blob::new(shapes[TRAJ_MASK].clone(), BlobData::U8(mask))?.write_to(fs::File::create(out.join(TRAJ_MASK))?)?;
    fs::File::create(out.join(SCENES))?.write_all(scenes.as_bytes())?;

    let median_lengths = config
        .tasks
        .iter()
        .map(|t| Ok((t.name().to_string(), median_script_length(config, *t)?)))
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: config.clone(),
        seed,
        n,
        vocabulary: VOCABULARY.iter().map(|s| s.to_string()).collect(),
        thresholds: Thresholds::default(),
        shapes,
        median_lengths,
        task_counts,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(out.join(MANIFEST), json)?;
    Ok(manifest)
}

/// A dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<u8>,
    pub text: Vec<u16>,
    pub traj: Vec<f32>,
    pub traj_mask: Vec<u8>,
}

fn read_blob(dir: &Path, name: &str, shape: &[usize]) -> Result<BlobData> {
    let blob = Blob::read_from(fs::File::open(dir.join(name))?)?;
    if blob.shape != shape {
        return Err(Error::Format(format!("{name} has shape {:?}, manifest says {shape:?}", blob.shape)));
    }
    Ok(blob.data)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("unsupported dataset format `{}`", manifest.format)));
        }
        let shape = |k: &str| {
            manifest.shapes.get(k).cloned().ok_or_else(|| Error::Format(format!("manifest lacks a shape for {k}")))
        };
        let images = match read_blob(dir, IMAGES, &shape(IMAGES)?)? {
            BlobData::U8(v) => v,
            _ => return Err(Error::Format("images must be u8".into())),
        };
        let text = match read_blob(dir, TEXT, &shape(TEXT)?)? {
            BlobData::U16(v) => v,
            _ => return Err(Error::Format("text must be u16".into())),
        };
        let traj = match read_blob(dir, TRAJ, &shape(TRAJ)?)? {
            BlobData::F32(v) => v,
            _ => return Err(Error::Format("trajectories must be f32".into())),
        };
        let traj_mask = match read_blob(dir, TRAJ_MASK, &shape(TRAJ_MASK)?)? {
            BlobData::U8(v) => v,
            _ => return Err(Error::Format("trajectory mask must be u8".into())),
        };
        Ok(Self { manifest, images, text, traj, traj_mask })
    }

    pub fn len(&self) -> usize {
        self.manifest.n
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n == 0
    }

    pub fn image_size(&self) -> usize {
        self.manifest.shapes[IMAGES][1]
    }

    pub fn text_len(&self) -> usize {
        self.manifest.shapes[TEXT][1]
    }

    pub fn t_max(&self) -> usize {
        self.manifest.shapes[TRAJ][1]
    }
}
