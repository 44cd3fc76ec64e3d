//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u64 manifest length, a JSON
//! manifest (preset, gate function, seed, epoch, optimizer metadata, and an
//! array directory), then the raw array payload. Every array is stored as
//! consecutive little-endian IEEE-754 values in its own element type, so a
//! save/load cycle reproduces parameters, gate values, and optimizer
//! moments bit for bit.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{GateBank, GateFamily, GateFunction};
use crate::nn::presets::{build_preset, Preset};
use crate::nn::GatedNetwork;
use crate::scalar::Scalar;
use crate::trainer::optim::{OptState, OptimizerSpec};

const MAGIC: &[u8; 8] = b"L0CKPT1\n";
const FORMAT_VERSION: u32 = 1;

// --- manifest ---------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GateMeta {
    family: GateFamily,
    k: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    spec: OptimizerSpec,
    step_count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    preset: String,
    dtype: String,
    seed: u64,
    epoch: u64,
    gate: GateMeta,
    optimizer: Option<OptimizerMeta>,
    arrays: Vec<ArrayMeta>,
}

// --- checkpoint bundle ------------------------------------------------------

/// Optimizer configuration plus the moment buffers for both parameter
/// groups (network weights/biases and gate parameters).
#[derive(Debug, Clone)]
pub struct TrainerState<F: Scalar> {
    pub spec: OptimizerSpec,
    pub theta: OptState<F>,
    pub phi: OptState<f64>,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub preset: Preset,
    pub net: GatedNetwork<F>,
    pub bank: GateBank,
    pub seed: u64,
    pub epoch: u64,
    pub state: Option<TrainerState<F>>,
}

// --- writing ----------------------------------------------------------------

struct PayloadWriter {
    arrays: Vec<ArrayMeta>,
    bytes: Vec<u8>,
}

impl PayloadWriter {
    fn push<F: Scalar>(&mut self, name: String, shape: Vec<usize>, values: &[F]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let offset = self.bytes.len() as u64;
        for &v in values {
            F::push_le(v, &mut self.bytes);
        }
        self.arrays.push(ArrayMeta {
            name,
            dtype: F::DTYPE.to_string(),
            shape,
            offset,
            byte_len: (values.len() * F::BYTES) as u64,
        });
    }
}

/// Write a checkpoint file. The array directory covers, in order: every
/// weight and bias tensor, the gate parameters, then any optimizer moment
/// buffers.
pub fn save<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<()> {
    let mut payload = PayloadWriter {
        arrays: Vec::new(),
        bytes: Vec::new(),
    };

    let shapes = param_shapes(&ckpt.net);
    for ((slot, shape), values) in shapes.iter().enumerate().zip(ckpt.net.param_slices()) {
        payload.push(param_name(slot), shape.clone(), values);
    }
    payload.push(
        "gates.phi".to_string(),
        vec![ckpt.bank.len()],
        ckpt.bank.phi(),
    );

    if let Some(state) = &ckpt.state {
        for (i, m) in state.theta.first_moments().iter().enumerate() {
            payload.push(format!("opt.theta.m.{i}"), vec![m.len()], m);
        }
        for (i, v) in state.theta.second_moments().iter().enumerate() {
            payload.push(format!("opt.theta.v.{i}"), vec![v.len()], v);
        }
        for (i, m) in state.phi.first_moments().iter().enumerate() {
            payload.push(format!("opt.phi.m.{i}"), vec![m.len()], m);
        }
        for (i, v) in state.phi.second_moments().iter().enumerate() {
            payload.push(format!("opt.phi.v.{i}"), vec![v.len()], v);
        }
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        preset: ckpt.preset.name().to_string(),
        dtype: F::DTYPE.to_string(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        gate: GateMeta {
            family: ckpt.bank.gate().family(),
            k: ckpt.bank.gate().sharpness(),
        },
        optimizer: ckpt.state.as_ref().map(|s| OptimizerMeta {
            spec: s.spec.clone(),
            step_count: s.theta.step_count(),
        }),
        arrays: payload.arrays,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;

    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + payload.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload.bytes);
    std::fs::write(path, out)?;
    Ok(())
}

fn param_name(slot: usize) -> String {
    // Slots alternate weight/bias per trainable layer.
    let layer = slot / 2;
    if slot % 2 == 0 {
        format!("param{layer}.weight")
    } else {
        format!("param{layer}.bias")
    }
}

fn param_shapes<F: Scalar>(net: &GatedNetwork<F>) -> Vec<Vec<usize>> {
    use crate::nn::Layer;
    let mut shapes = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, bias } => {
                shapes.push(weight.shape().to_vec());
                shapes.push(bias.shape().to_vec());
            }
            Layer::Conv2d { weight, bias } => {
                shapes.push(weight.shape().to_vec());
                shapes.push(bias.shape().to_vec());
            }
            _ => {}
        }
    }
    shapes
}

// --- reading ----------------------------------------------------------------

struct PayloadReader<'a> {
    manifest: &'a Manifest,
    payload: &'a [u8],
    path: &'a Path,
    cursor: usize,
}

impl<'a> PayloadReader<'a> {
    /// Read the next array in directory order, checking its name and dtype.
    fn take<F: Scalar>(&mut self, name: &str) -> Result<(Vec<usize>, Vec<F>)> {
        let Some(meta) = self.manifest.arrays.get(self.cursor) else {
            return Err(Error::Format(format!(
                "{}: array {name:?} missing from manifest",
                self.path.display()
            )));
        };
        self.cursor += 1;
        if meta.name != name {
            return Err(Error::Format(format!(
                "{}: expected array {name:?}, found {:?}",
                self.path.display(),
                meta.name
            )));
        }
        if meta.dtype != F::DTYPE {
            return Err(Error::Format(format!(
                "{}: array {name:?} has dtype {} but {} was requested",
                self.path.display(),
                meta.dtype,
                F::DTYPE
            )));
        }
        let count = meta.shape.iter().product::<usize>();
        if meta.byte_len as usize != count * F::BYTES {
            return Err(Error::Format(format!(
                "{}: array {name:?} length {} disagrees with shape {:?}",
                self.path.display(),
                meta.byte_len,
                meta.shape
            )));
        }
        let start = meta.offset as usize;
        let end = start + meta.byte_len as usize;
        if end > self.payload.len() {
            return Err(Error::Format(format!(
                "{}: array {name:?} extends past end of file",
                self.path.display()
            )));
        }
        let values = self.payload[start..end]
            .chunks_exact(F::BYTES)
            .map(F::read_le)
            .collect();
        Ok((meta.shape.clone(), values))
    }

    fn done(&self) -> bool {
        self.cursor == self.manifest.arrays.len()
    }
}

/// Load a checkpoint written by [`save`]. The element type must match the
/// stored dtype; mismatches are format errors, never silent casts.
pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + manifest_len > bytes.len() {
        return Err(Error::Format(format!(
            "{}: truncated manifest ({} bytes declared, {} available)",
            path.display(),
            manifest_len,
            bytes.len() - 16
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| Error::Format(format!("{}: manifest: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format version mismatch: file is v{}, this build reads v{}",
            path.display(),
            manifest.format_version,
            FORMAT_VERSION
        )));
    }
    if manifest.dtype != F::DTYPE {
        return Err(Error::Format(format!(
            "{}: stored dtype is {}, but {} was requested",
            path.display(),
            manifest.dtype,
            F::DTYPE
        )));
    }

    let preset: Preset = manifest.preset.parse()?;
    // Build the architecture, then overwrite every parameter from the file.
    let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = build_preset::<F, _>(preset, &mut seed_rng);

    let mut reader = PayloadReader {
        manifest: &manifest,
        payload: &bytes[16 + manifest_len..],
        path,
        cursor: 0,
    };

    let shapes = param_shapes(&net);
    let mut loaded: Vec<Vec<F>> = Vec::with_capacity(shapes.len());
    for (slot, expected_shape) in shapes.iter().enumerate() {
        let (shape, values) = reader.take::<F>(&param_name(slot))?;
        if &shape != expected_shape {
            return Err(Error::Format(format!(
                "{}: array {:?} has shape {:?}, preset expects {:?}",
                path.display(),
                param_name(slot),
                shape,
                expected_shape
            )));
        }
        loaded.push(values);
    }
    for (dst, src) in net.param_slices_mut().into_iter().zip(&loaded) {
        dst.copy_from_slice(src);
    }

    let gate = GateFunction::new(manifest.gate.family, manifest.gate.k)?;
    let mut bank = GateBank::new(gate, net.gate_counts())?;
    let (phi_shape, phi) = reader.take::<f64>("gates.phi")?;
    if phi_shape != vec![bank.len()] {
        return Err(Error::Format(format!(
            "{}: gates.phi has shape {:?}, expected [{}]",
            path.display(),
            phi_shape,
            bank.len()
        )));
    }
    bank.set_phi(&phi)?;

    let state = match &manifest.optimizer {
        Some(meta) => {
            meta.spec.validate()?;
            let adam = matches!(meta.spec, OptimizerSpec::Adam { .. });
            let mut theta_m = Vec::new();
            if adam {
                for i in 0..shapes.len() {
                    theta_m.push(reader.take::<F>(&format!("opt.theta.m.{i}"))?.1);
                }
            }
            let mut theta_v = Vec::new();
            for i in 0..shapes.len() {
                theta_v.push(reader.take::<F>(&format!("opt.theta.v.{i}"))?.1);
            }
            let mut phi_m = Vec::new();
            if adam {
                phi_m.push(reader.take::<f64>("opt.phi.m.0")?.1);
            }
            let phi_v = vec![reader.take::<f64>("opt.phi.v.0")?.1];
            Some(TrainerState {
                spec: meta.spec.clone(),
                theta: OptState::from_parts(theta_m, theta_v, meta.step_count),
                phi: OptState::from_parts(phi_m, phi_v, meta.step_count),
            })
        }
        None => None,
    };
    if !reader.done() {
        return Err(Error::Format(format!(
            "{}: {} unexpected trailing arrays in manifest",
            path.display(),
            manifest.arrays.len() - reader.cursor
        )));
    }

    Ok(Checkpoint {
        preset,
        net,
        bank,
        seed: manifest.seed,
        epoch: manifest.epoch,
        state,
    })
}

// ---------------------------------------------------------------------------
