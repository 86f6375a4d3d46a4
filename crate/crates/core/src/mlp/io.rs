//! Plain-text model container.
//!
//! ```text
//! wignernet-model 1
//! input_dim 4
//! hidden_dims 128 256 256 128
//! output_dim 4
//! batchnorm true
//! bn_momentum <f64>
//! bn_epsilon <f64>
//! init_seed 42
//! dense <index> <fan_out> <fan_in>
//! weights
//! <fan_out lines of fan_in values>
//! bias
//! <fan_out values>
//! batchnorm <index> <width> <momentum> <epsilon>
//! gamma
//! <width values>
//! beta
//! ...
//! running_mean
//! ...
//! running_var
//! ...
//! end
//! ```
//!
//! Dense layers are numbered from 0; the output layer carries the last
//! index. Every float is written with 17 significant digits, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{ArchitectureSpec, BatchNormLayer, DenseLayer, HiddenBlock, MlpModel};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "wignernet-model";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let cells: Vec<String> = values.map(|&v| fmt_f64(v)).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

fn write_dense(out: &mut String, index: usize, layer: &DenseLayer) {
    let _ = writeln!(out, "dense {index} {} {}", layer.fan_out(), layer.fan_in());
    out.push_str("weights\n");
    for row in layer.weights.rows() {
        push_row(out, row.iter());
    }
    out.push_str("bias\n");
    push_row(out, layer.bias.iter());
}

pub fn to_text(model: &MlpModel) -> String {
    let spec = &model.spec;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "input_dim {}", spec.input_dim);
    let dims: Vec<String> = spec.hidden_dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "hidden_dims {}", dims.join(" "));
    let _ = writeln!(out, "output_dim {}", spec.output_dim);
    let _ = writeln!(out, "batchnorm {}", spec.batchnorm);
    let _ = writeln!(out, "bn_momentum {}", fmt_f64(spec.bn_momentum));
    let _ = writeln!(out, "bn_epsilon {}", fmt_f64(spec.bn_epsilon));
    let _ = writeln!(out, "init_seed {}", model.init_seed);
    for (k, block) in model.hidden.iter().enumerate() {
        write_dense(&mut out, k, &block.dense);
        if let Some(n) = &block.norm {
            let _ = writeln!(
                out,
                "batchnorm {k} {} {} {}",
                n.width(),
                fmt_f64(n.momentum),
                fmt_f64(n.epsilon)
            );
            for (name, v) in [
                ("gamma", &n.gamma),
                ("beta", &n.beta),
                ("running_mean", &n.running_mean),
                ("running_var", &n.running_var),
            ] {
                out.push_str(name);
                out.push('\n');
                push_row(&mut out, v.iter());
            }
        }
    }
    write_dense(&mut out, model.hidden.len(), &model.output);
    out.push_str("end\n");
    out
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: PathBuf,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn parse_err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            message: message.into(),
        }
    }

    fn shape_err(&self, message: impl Into<String>) -> Error {
        Error::InconsistentShape {
            path: self.path.clone(),
            message: format!("line {}: {}", self.line_no, message.into()),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l.trim())
            }
            None => {
                self.line_no += 1;
                Err(self.parse_err("unexpected end of file"))
            }
        }
    }

    fn peek_line(&mut self) -> Option<&'a str> {
        self.lines.peek().map(|(_, l)| l.trim())
    }

    /// Reads `key v1 v2 ...` and returns the values.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => {
                Err(self.parse_err(format!("expected {key:?}, found {:?}", other.unwrap_or(""))))
            }
        }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let vals = self.keyed(key)?;
        match vals.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| self.parse_err(format!("invalid value {v:?} for {key}"))),
            _ => Err(self.parse_err(format!("{key} takes exactly one value"))),
        }
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| self.parse_err(format!("non-numeric value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(self.shape_err(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn vector(&mut self, name: &str, width: usize) -> Result<Array1<f64>> {
        self.keyed(name)?;
        Ok(Array1::from(self.floats(width)?))
    }

    fn dense(&mut self, index: usize, fan_in: usize, fan_out: usize) -> Result<DenseLayer> {
        let header = self.keyed("dense")?;
        let dims = header
            .iter()
            .map(|v| v.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| self.parse_err("invalid dense header"))?;
        match dims.as_slice() {
            [i, o, n] if *i == index => {
                if (*o, *n) != (fan_out, fan_in) {
                    return Err(self.shape_err(format!(
                        "dense layer {index} stored as {o}x{n}, architecture needs {fan_out}x{fan_in}"
                    )));
                }
            }
            _ => return Err(self.parse_err(format!("expected 'dense {index} <out> <in>'"))),
        }
        self.keyed("weights")?;
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_out {
            match self.peek_line() {
                Some("bias") => {
                    self.next_line()?;
                    return Err(self.shape_err(format!(
                        "dense layer {index} has fewer than {fan_out} weight rows"
                    )));
                }
                _ => w.extend(self.floats(fan_in)?),
            }
        }
        let weights = Array2::from_shape_vec((fan_out, fan_in), w).expect("counted rows");
        let bias = self.vector("bias", fan_out)?;
        Ok(DenseLayer { weights, bias })
    }

    fn batchnorm(&mut self, index: usize, width: usize) -> Result<BatchNormLayer> {
        let header = self.keyed("batchnorm")?;
        let (i, w, momentum, epsilon) = match header.as_slice() {
            [i, w, m, e] => (
                i.parse::<usize>().ok(),
                w.parse::<usize>().ok(),
                m.parse::<f64>().ok(),
                e.parse::<f64>().ok(),
            ),
            _ => (None, None, None, None),
        };
        let (Some(i), Some(w), Some(momentum), Some(epsilon)) = (i, w, momentum, epsilon) else {
            return Err(self.parse_err("expected 'batchnorm <index> <width> <momentum> <epsilon>'"));
        };
        if i != index {
            return Err(self.parse_err(format!("expected batchnorm {index}, found {i}")));
        }
        if w != width {
            return Err(self.shape_err(format!(
                "batchnorm {index} stored with width {w}, architecture needs {width}"
            )));
        }
        let gamma = self.vector("gamma", width)?;
        let beta = self.vector("beta", width)?;
        let running_mean = self.vector("running_mean", width)?;
        let running_var = self.vector("running_var", width)?;
        Ok(BatchNormLayer {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum,
            epsilon,
        })
    }
}

pub fn from_text(text: &str, path: &Path) -> Result<MlpModel> {
    let mut r = Reader {
        lines: text.lines().enumerate().peekable(),
        path: path.to_path_buf(),
        line_no: 0,
    };
    let magic = r.keyed(MAGIC)?;
    match magic.as_slice() {
        [v] if *v == FORMAT_VERSION.to_string() => {}
        other => {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: other.join(" "),
                expected: FORMAT_VERSION,
            })
        }
    }
    let input_dim: usize = r.single("input_dim")?;
    let hidden_dims = r
        .keyed("hidden_dims")?
        .iter()
        .map(|v| v.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| r.parse_err("invalid hidden_dims"))?;
    let output_dim: usize = r.single("output_dim")?;
    let batchnorm: bool = r.single("batchnorm")?;
    let bn_momentum: f64 = r.single("bn_momentum")?;
    let bn_epsilon: f64 = r.single("bn_epsilon")?;
    let init_seed: u64 = r.single("init_seed")?;
    let spec = ArchitectureSpec {
        input_dim,
        hidden_dims,
        output_dim,
        batchnorm,
        bn_momentum,
        bn_epsilon,
    };
    spec.validate()?;

    let shapes = spec.dense_shapes();
    let mut hidden = Vec::with_capacity(shapes.len() - 1);
    for (k, &(fan_in, fan_out)) in shapes[..shapes.len() - 1].iter().enumerate() {
        let dense = r.dense(k, fan_in, fan_out)?;
        let norm = if batchnorm {
            Some(r.batchnorm(k, fan_out)?)
        } else {
            None
        };
        hidden.push(HiddenBlock { dense, norm });
    }
    let (fan_in, fan_out) = shapes[shapes.len() - 1];
    let output = r.dense(shapes.len() - 1, fan_in, fan_out)?;
    if r.next_line()? != "end" {
        return Err(r.parse_err("expected 'end'"));
    }
    MlpModel::from_parts(spec, hidden, output, init_seed).map_err(|e| Error::InconsistentShape {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
