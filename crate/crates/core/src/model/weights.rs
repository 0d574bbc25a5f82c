//! Model parameters, seeded generation, and the on-disk weight format.
//!
//! Weight files are self-describing: a fixed header carries the model config,
//! then every tensor follows in a fixed order with its own shape prefix.
//! Values are stored as little-endian `f64` regardless of the in-memory
//! scalar, so files written from `f32` and `f64` sets interoperate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::config::{ConfigError, ModelConfig, NormPlacement, PositionalScheme};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"ECSW";
const VERSION: u32 = 1;

/// Uniform init half-width for generated parameter matrices.
const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("weight file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("weight file {path}: bad magic, not a weight file")]
    BadMagic { path: PathBuf },
    #[error("weight file {path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("weight file {path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("weight shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite weight value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Parameters for one transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub attn_query: Matrix<S>,
    pub attn_key: Matrix<S>,
    pub attn_value: Matrix<S>,
    pub attn_output: Matrix<S>,
    pub attn_norm_scale: Vec<S>,
    pub attn_norm_shift: Vec<S>,
    pub ff_up: Matrix<S>,
    pub ff_up_bias: Vec<S>,
    pub ff_down: Matrix<S>,
    pub ff_down_bias: Vec<S>,
    pub ff_norm_scale: Vec<S>,
    pub ff_norm_shift: Vec<S>,
}

/// Full parameter set for one model.
///
/// `position_embedding` is present exactly when the config uses
/// learned-absolute positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<S> {
    pub token_embedding: Matrix<S>,
    pub position_embedding: Option<Matrix<S>>,
    pub layers: Vec<LayerWeights<S>>,
    pub output_head: Matrix<S>,
}

impl<S: Scalar> WeightSet<S> {
    /// All-zero parameters (norm scales included) for tests that want full
    /// control over individual tensors.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim();
        let f = config.ff_dim();
        let v = config.vocab_size();
        let layer = || LayerWeights {
            attn_query: Matrix::zeros(d, d),
            attn_key: Matrix::zeros(d, d),
            attn_value: Matrix::zeros(d, d),
            attn_output: Matrix::zeros(d, d),
            attn_norm_scale: vec![S::zero(); d],
            attn_norm_shift: vec![S::zero(); d],
            ff_up: Matrix::zeros(d, f),
            ff_up_bias: vec![S::zero(); f],
            ff_down: Matrix::zeros(f, d),
            ff_down_bias: vec![S::zero(); d],
            ff_norm_scale: vec![S::zero(); d],
            ff_norm_shift: vec![S::zero(); d],
        };
        WeightSet {
            token_embedding: Matrix::zeros(v, d),
            position_embedding: (config.positional_scheme() == PositionalScheme::LearnedAbsolute)
                .then(|| Matrix::zeros(config.max_context(), d)),
            layers: (0..config.num_layers()).map(|_| layer()).collect(),
            output_head: Matrix::zeros(d, v),
        }
    }

    /// Seeded random parameters: matrices uniform in
    /// [-[`INIT_RANGE`], [`INIT_RANGE`]], norm scales 1, norm shifts 0.
    /// Draw order matches the file tensor order, so a given `(config, seed)`
    /// pair always produces the same set.
    pub fn seeded_uniform(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| -> Matrix<S> {
            let data = (0..rows * cols)
                .map(|_| S::from_f64_lossy(rng.random_range(-INIT_RANGE..=INIT_RANGE)))
                .collect();
            Matrix::from_vec(rows, cols, data)
        };
        let d = config.hidden_dim();
        let f = config.ff_dim();
        let v = config.vocab_size();
        let token_embedding = draw(v, d);
        let position_embedding = (config.positional_scheme()
            == PositionalScheme::LearnedAbsolute)
            .then(|| draw(config.max_context(), d));
        let mut layers = Vec::with_capacity(config.num_layers());
        for _ in 0..config.num_layers() {
            layers.push(LayerWeights {
                attn_query: draw(d, d),
                attn_key: draw(d, d),
                attn_value: draw(d, d),
                attn_output: draw(d, d),
                attn_norm_scale: vec![S::one(); d],
                attn_norm_shift: vec![S::zero(); d],
                ff_up: draw(d, f),
                ff_up_bias: vec![S::zero(); f],
                ff_down: draw(f, d),
                ff_down_bias: vec![S::zero(); d],
                ff_norm_scale: vec![S::one(); d],
                ff_norm_shift: vec![S::zero(); d],
            });
        }
        let output_head = draw(d, v);
        WeightSet {
            token_embedding,
            position_embedding,
            layers,
            output_head,
        }
    }

    /// Checks every tensor shape against `config` and rejects non-finite
    /// values. Run after construction or mutation; the forward pass assumes
    /// it has passed.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), WeightError> {
        let d = config.hidden_dim();
        let f = config.ff_dim();
        let v = config.vocab_size();
        let check_mat = |m: &Matrix<S>, rows: usize, cols: usize, name: &str| {
            if m.rows() != rows || m.cols() != cols {
                return Err(WeightError::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(WeightError::NonFinite(name.to_string()));
            }
            Ok(())
        };
        check_mat(&self.token_embedding, v, d, "token_embedding")?;
        match (&self.position_embedding, config.positional_scheme()) {
            (Some(p), PositionalScheme::LearnedAbsolute) => {
                check_mat(p, config.max_context(), d, "position_embedding")?;
            }
            (None, PositionalScheme::LearnedAbsolute) => {
                return Err(WeightError::Shape(
                    "learned-absolute positions need a position_embedding".into(),
                ));
            }
            (Some(_), _) => {
                return Err(WeightError::Shape(format!(
                    "position_embedding present but scheme is {}",
                    config.positional_scheme()
                )));
            }
            (None, _) => {}
        }
        if self.layers.len() != config.num_layers() {
            return Err(WeightError::Shape(format!(
                "{} layers, expected {}",
                self.layers.len(),
                config.num_layers()
            )));
        }
        let check_vec = |xs: &[S], len: usize, name: &str| {
            if xs.len() != len {
                return Err(WeightError::Shape(format!(
                    "{name} has length {}, expected {len}",
                    xs.len()
                )));
            }
            if !xs.iter().all(|x| x.is_finite()) {
                return Err(WeightError::NonFinite(name.to_string()));
            }
            Ok(())
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let check_layer_mat = |m: &Matrix<S>, rows: usize, cols: usize, name: &str| {
                if m.rows() != rows || m.cols() != cols {
                    return Err(WeightError::Shape(format!(
                        "layer {i} {name} is {}x{}, expected {rows}x{cols}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.is_finite() {
                    return Err(WeightError::NonFinite(format!("layer {i} {name}")));
                }
                Ok(())
            };
            check_layer_mat(&layer.attn_query, d, d, "attn_query")?;
            check_layer_mat(&layer.attn_key, d, d, "attn_key")?;
            check_layer_mat(&layer.attn_value, d, d, "attn_value")?;
            check_layer_mat(&layer.attn_output, d, d, "attn_output")?;
            check_vec(&layer.attn_norm_scale, d, "attn_norm_scale")?;
            check_vec(&layer.attn_norm_shift, d, "attn_norm_shift")?;
            check_layer_mat(&layer.ff_up, d, f, "ff_up")?;
            check_vec(&layer.ff_up_bias, f, "ff_up_bias")?;
            check_layer_mat(&layer.ff_down, f, d, "ff_down")?;
            check_vec(&layer.ff_down_bias, d, "ff_down_bias")?;
            check_vec(&layer.ff_norm_scale, d, "ff_norm_scale")?;
            check_vec(&layer.ff_norm_shift, d, "ff_norm_shift")?;
        }
        check_mat(&self.output_head, d, v, "output_head")?;
        Ok(())
    }

    /// Writes `config` and all tensors to `path` in the versioned binary
    /// format.
    pub fn write_to_path(&self, config: &ModelConfig, path: &Path) -> Result<(), WeightError> {
        self.validate(config)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for field in [
            config.num_layers(),
            config.hidden_dim(),
            config.num_heads(),
            config.vocab_size(),
            config.max_context(),
        ] {
            buf.extend_from_slice(&(field as u32).to_le_bytes());
        }
        buf.push(match config.norm_placement() {
            NormPlacement::Pre => 0,
            NormPlacement::Post => 1,
        });
        buf.push(match config.positional_scheme() {
            PositionalScheme::Rotary => 0,
            PositionalScheme::LearnedAbsolute => 1,
            PositionalScheme::None => 2,
        });
        buf.extend_from_slice(&(config.ff_dim() as u32).to_le_bytes());
        let put_mat = |buf: &mut Vec<u8>, m: &Matrix<S>| {
            buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        };
        let put_vec = |buf: &mut Vec<u8>, xs: &[S]| {
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&(xs.len() as u32).to_le_bytes());
            for v in xs {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        };
        put_mat(&mut buf, &self.token_embedding);
        if let Some(p) = &self.position_embedding {
            put_mat(&mut buf, p);
        }
        for layer in &self.layers {
            put_mat(&mut buf, &layer.attn_query);
            put_mat(&mut buf, &layer.attn_key);
            put_mat(&mut buf, &layer.attn_value);
            put_mat(&mut buf, &layer.attn_output);
            put_vec(&mut buf, &layer.attn_norm_scale);
            put_vec(&mut buf, &layer.attn_norm_shift);
            put_mat(&mut buf, &layer.ff_up);
            put_vec(&mut buf, &layer.ff_up_bias);
            put_mat(&mut buf, &layer.ff_down);
            put_vec(&mut buf, &layer.ff_down_bias);
            put_vec(&mut buf, &layer.ff_norm_scale);
            put_vec(&mut buf, &layer.ff_norm_shift);
        }
        put_mat(&mut buf, &self.output_head);
        fs::write(path, &buf).map_err(|source| WeightError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a weight file, returning the embedded config and the validated
    /// set. Errors name the offending file.
    pub fn read_from_path(path: &Path) -> Result<(ModelConfig, WeightSet<S>), WeightError> {
        let buf = fs::read(path).map_err(|source| WeightError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cur = Reader {
            buf: &buf,
            pos: 0,
            path,
        };
        if cur.take(4)? != MAGIC {
            return Err(WeightError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(WeightError::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let num_layers = cur.u32()? as usize;
        let hidden_dim = cur.u32()? as usize;
        let num_heads = cur.u32()? as usize;
        let vocab_size = cur.u32()? as usize;
        let max_context = cur.u32()? as usize;
        let norm_placement = match cur.u8()? {
            0 => NormPlacement::Pre,
            1 => NormPlacement::Post,
            other => return Err(cur.schema(format!("unknown norm placement tag {other}"))),
        };
        let positional_scheme = match cur.u8()? {
            0 => PositionalScheme::Rotary,
            1 => PositionalScheme::LearnedAbsolute,
            2 => PositionalScheme::None,
            other => return Err(cur.schema(format!("unknown positional scheme tag {other}"))),
        };
        let config = ModelConfig::new(
            num_layers,
            hidden_dim,
            num_heads,
            vocab_size,
            max_context,
            norm_placement,
            positional_scheme,
        )?;
        let ff_dim = cur.u32()? as usize;
        if ff_dim != config.ff_dim() {
            return Err(cur.schema(format!(
                "ff_dim {ff_dim} does not match the 4x convention ({})",
                config.ff_dim()
            )));
        }
        let d = hidden_dim;
        let f = ff_dim;
        let token_embedding = cur.matrix(vocab_size, d, "token_embedding")?;
        let position_embedding = match positional_scheme {
            PositionalScheme::LearnedAbsolute => {
                Some(cur.matrix(max_context, d, "position_embedding")?)
            }
            _ => None,
        };
        let mut layers = Vec::with_capacity(num_layers);
        for i in 0..num_layers {
            layers.push(LayerWeights {
                attn_query: cur.matrix(d, d, &format!("layer {i} attn_query"))?,
                attn_key: cur.matrix(d, d, &format!("layer {i} attn_key"))?,
                attn_value: cur.matrix(d, d, &format!("layer {i} attn_value"))?,
                attn_output: cur.matrix(d, d, &format!("layer {i} attn_output"))?,
                attn_norm_scale: cur.vector(d, &format!("layer {i} attn_norm_scale"))?,
                attn_norm_shift: cur.vector(d, &format!("layer {i} attn_norm_shift"))?,
                ff_up: cur.matrix(d, f, &format!("layer {i} ff_up"))?,
                ff_up_bias: cur.vector(f, &format!("layer {i} ff_up_bias"))?,
                ff_down: cur.matrix(f, d, &format!("layer {i} ff_down"))?,
                ff_down_bias: cur.vector(d, &format!("layer {i} ff_down_bias"))?,
                ff_norm_scale: cur.vector(d, &format!("layer {i} ff_norm_scale"))?,
                ff_norm_shift: cur.vector(d, &format!("layer {i} ff_norm_shift"))?,
            });
        }
        let output_head = cur.matrix(d, vocab_size, "output_head")?;
        if cur.pos != buf.len() {
            return Err(cur.schema(format!("{} trailing bytes", buf.len() - cur.pos)));
        }
        let set = WeightSet {
            token_embedding,
            position_embedding,
            layers,
            output_head,
        };
        set.validate(&config)?;
        Ok((config, set))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn schema(&self, detail: String) -> WeightError {
        WeightError::Schema {
            path: self.path.to_path_buf(),
            detail,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        if self.pos + n > self.buf.len() {
            return Err(self.schema("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.take(1)?[0])
    }

    fn matrix<S: Scalar>(
        &mut self,
        rows: usize,
        cols: usize,
        name: &str,
    ) -> Result<Matrix<S>, WeightError> {
        let got_rows = self.u32()? as usize;
        let got_cols = self.u32()? as usize;
        if got_rows != rows || got_cols != cols {
            return Err(self.schema(format!(
                "{name} declared {got_rows}x{got_cols}, expected {rows}x{cols}"
            )));
        }
        let bytes = self.take(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| {
                S::from_f64_lossy(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]))
            })
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }

    fn vector<S: Scalar>(&mut self, len: usize, name: &str) -> Result<Vec<S>, WeightError> {
        let m: Matrix<S> = self.matrix(1, len, name)?;
        Ok(m.data().to_vec())
    }
}
