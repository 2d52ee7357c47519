//! Conditional neural process: per-point context encoding, mean
//! aggregation into a fixed-width r_C, and decoding of target inputs
//! conditioned on r_C. Two decoder heads: direct sample output, or
//! Gaussian (mean, scale) pairs for the likelihood baseline.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Direct,
    Gaussian,
}

/// Two-layer fully connected network: tanh hidden, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let uniform = |fan_in: usize, len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        Mlp {
            w1: Tensor::matrix(d_in, hidden, uniform(d_in, d_in * hidden, rng)).unwrap(),
            b1: Tensor::vector(vec![0.0; hidden]),
            w2: Tensor::matrix(hidden, d_out, uniform(hidden, hidden * d_out, rng)).unwrap(),
            b2: Tensor::vector(vec![0.0; d_out]),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn map(&self, mut f: impl FnMut(&Tensor) -> Tensor) -> Mlp {
        Mlp { w1: f(&self.w1), b1: f(&self.b1), w2: f(&self.w2), b2: f(&self.b2) }
    }
}

/// One regression episode: full target set plus a context index subset.
#[derive(Debug, Clone)]
pub struct TaskBatch {
    pub x_target: Tensor,
    pub y_target: Tensor,
    pub context_idx: Vec<usize>,
}

impl TaskBatch {
    pub fn new(x_target: Tensor, y_target: Tensor, context_idx: Vec<usize>) -> Result<Self> {
        let (n, _) = x_target.dims2();
        let (ny, _) = y_target.dims2();
        if n != ny {
            return Err(Error::shape(format!("target row counts differ: {n} vs {ny}")));
        }
        if context_idx.is_empty() || context_idx.len() > n {
            return Err(Error::contract(format!(
                "context size {} out of range 1..={n}",
                context_idx.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &context_idx {
            if i >= n || seen[i] {
                return Err(Error::contract(format!("bad context index {i}")));
            }
            seen[i] = true;
        }
        Ok(TaskBatch { x_target, y_target, context_idx })
    }

    pub fn len(&self) -> usize {
        self.x_target.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of (x, y) selected by the context indices.
    pub fn context_xy(&self) -> (Tensor, Tensor) {
        let (_, dx) = self.x_target.dims2();
        let (_, dy) = self.y_target.dims2();
        let mut xs = Vec::with_capacity(self.context_idx.len() * dx);
        let mut ys = Vec::with_capacity(self.context_idx.len() * dy);
        for &i in &self.context_idx {
            xs.extend_from_slice(&self.x_target.values[i * dx..(i + 1) * dx]);
            ys.extend_from_slice(&self.y_target.values[i * dy..(i + 1) * dy]);
        }
        (
            Tensor::matrix(self.context_idx.len(), dx, xs).unwrap(),
            Tensor::matrix(self.context_idx.len(), dy, ys).unwrap(),
        )
    }
}

/// Encoder and decoder weights plus the sizes that shape them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub d_x: usize,
    pub d_y: usize,
    pub hidden: usize,
    pub r_dim: usize,
    pub head: Head,
}

/// Parameter tensors registered on (or excluded from) a tape, in the
/// same declaration order as [`ModelParams::tensors`].
pub struct TrackedParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub d_y: usize,
    pub head: Head,
}

impl ModelParams {
    pub fn output_width(&self) -> usize {
        match self.head {
            Head::Direct => self.d_y,
            Head::Gaussian => 2 * self.d_y,
        }
    }

    /// Flat parameter list in declaration order: encoder w1,b1,w2,b2
    /// then decoder w1,b1,w2,b2.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.tensors().to_vec();
        v.extend(self.decoder.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let [ew1, eb1, ew2, eb2] = self.encoder.tensors_mut();
        let [dw1, db1, dw2, db2] = self.decoder.tensors_mut();
        vec![ew1, eb1, ew2, eb2, dw1, db1, dw2, db2]
    }

    /// Register every parameter as a tracked leaf.
    pub fn track(&self, tape: &mut Tape) -> TrackedParams {
        TrackedParams {
            encoder: self.encoder.map(|t| tape.leaf(t)),
            decoder: self.decoder.map(|t| tape.leaf(t)),
            d_y: self.d_y,
            head: self.head,
        }
    }

    /// Untracked view for pure evaluation.
    pub fn as_constants(&self) -> TrackedParams {
        TrackedParams {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            d_y: self.d_y,
            head: self.head,
        }
    }
}

impl TrackedParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.tensors().to_vec();
        v.extend(self.decoder.tensors());
        v
    }
}

/// Weights uniform in ±1/√fan_in, biases zero; deterministic per seed.
pub fn init_params(
    d_x: usize,
    d_y: usize,
    hidden: usize,
    r_dim: usize,
    head: Head,
    seed: u64,
) -> Result<ModelParams> {
    if d_x == 0 || d_y == 0 || hidden == 0 || r_dim == 0 {
        return Err(Error::contract("all model sizes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_width = match head {
        Head::Direct => d_y,
        Head::Gaussian => 2 * d_y,
    };
    Ok(ModelParams {
        encoder: Mlp::init(d_x + d_y, hidden, r_dim, &mut rng),
        decoder: Mlp::init(d_x + r_dim, hidden, out_width, &mut rng),
        d_x,
        d_y,
        hidden,
        r_dim,
        head,
    })
}

fn mlp_forward(tape: &mut Tape, mlp: &Mlp, input: &Tensor) -> Result<Tensor> {
    let z = tape.matmul(input, &mlp.w1)?;
    let z = tape.add_bias(&z, &mlp.b1)?;
    let a = tape.tanh(&z);
    let out = tape.matmul(&a, &mlp.w2)?;
    tape.add_bias(&out, &mlp.b2)
}

/// Encode each (x, y) context pair and aggregate by the mean.
pub fn encode_context(
    tape: &mut Tape,
    params: &TrackedParams,
    x_c: &Tensor,
    y_c: &Tensor,
) -> Result<Tensor> {
    let (k, _) = x_c.dims2();
    if k == 0 {
        return Err(Error::contract("empty context set"));
    }
    let pairs = tape.concat_cols(x_c, y_c)?;
    let reps = mlp_forward(tape, &params.encoder, &pairs)?;
    tape.mean(&reps, Some(0))
}

/// Broadcast r_C onto every target row and decode.
pub fn decode_targets(
    tape: &mut Tape,
    params: &TrackedParams,
    x_t: &Tensor,
    r_c: &Tensor,
) -> Result<Tensor> {
    let (n, _) = x_t.dims2();
    let (w_in, _) = params.decoder.w1.dims2();
    let (_, dx) = x_t.dims2();
    if dx + r_c.values.len() != w_in {
        return Err(Error::shape(format!(
            "decoder expects {w_in} inputs, got {} x columns + {} r_C entries",
            dx,
            r_c.values.len()
        )));
    }
    let tiled = tape.repeat_rows(r_c, n)?;
    let input = tape.concat_cols(x_t, &tiled)?;
    mlp_forward(tape, &params.decoder, &input)
}

/// Split a Gaussian-head decoder output into mean columns and strictly
/// positive scales (softplus plus a 1e-3 floor).
pub fn gaussian_split(tape: &mut Tape, out: &Tensor, d_y: usize) -> Result<(Tensor, Tensor)> {
    let mu = tape.slice_cols(out, 0, d_y)?;
    let pre = tape.slice_cols(out, d_y, 2 * d_y)?;
    let sp = tape.softplus(&pre);
    let sigma = tape.shift(&sp, 1e-3);
    Ok((mu, sigma))
}

/// Full forward pass over an episode: encode its context, decode all
/// target inputs.
pub fn forward_episode(
    tape: &mut Tape,
    params: &TrackedParams,
    batch: &TaskBatch,
) -> Result<Tensor> {
    let (x_c, y_c) = batch.context_xy();
    let r_c = encode_context(tape, params, &x_c, &y_c)?;
    decode_targets(tape, params, &batch.x_target, &r_c)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    d_x: usize,
    d_y: usize,
    hidden: usize,
    r_dim: usize,
    head: Head,
    seed: u64,
    step: u64,
    shapes: Vec<Vec<usize>>,
}

/// Single-file checkpoint: one JSON header line, then raw little-endian
/// f64 values for each parameter tensor in declaration order.
pub fn save_checkpoint(params: &ModelParams, seed: u64, step: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        d_x: params.d_x,
        d_y: params.d_y,
        hidden: params.hidden,
        r_dim: params.r_dim,
        head: params.head,
        seed,
        step,
        shapes: params.tensors().iter().map(|t| t.shape.clone()).collect(),
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    for t in params.tensors() {
        for v in &t.values {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Returns the model along with the (seed, step) recorded at save time.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64, u64)> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    let mut params =
        init_params(header.d_x, header.d_y, header.hidden, header.r_dim, header.head, header.seed)?;
    {
        let tensors = params.tensors_mut();
        if header.shapes.len() != tensors.len() {
            return Err(Error::contract(format!(
                "checkpoint lists {} tensors, model has {}",
                header.shapes.len(),
                tensors.len()
            )));
        }
        for (t, shape) in tensors.into_iter().zip(&header.shapes) {
            if &t.shape != shape {
                return Err(Error::shape(format!(
                    "checkpoint tensor shape {:?} does not match model shape {:?}",
                    shape, t.shape
                )));
            }
            let mut buf = vec![0u8; t.values.len() * 8];
            reader.read_exact(&mut buf)?;
            for (i, chunk) in buf.chunks_exact(8).enumerate() {
                t.values[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    Ok((params, header.seed, header.step))
}
