//! Versioned text model format.
//!
//! ```text
//! {
//!   "format": "mpc-imitation/mlp",
//!   "version": 1,
//!   "output_scale": 4.1890000000000000e-1,
//!   "layers": [
//!     {"inputs": 40, "outputs": 10, "activation": "sigmoid",
//!      "weights": [...row-major, outputs x inputs...], "biases": [...]},
//!     ...
//!   ]
//! }
//! ```
//!
//! Numbers carry 17 significant digits, so a save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Deserialize;

use super::{Activation, Dense, Mlp};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

const FORMAT: &str = "mpc-imitation/mlp";
const VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    output_scale: f64,
    layers: Vec<LayerFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: String,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

fn push_array(out: &mut String, values: impl Iterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(v));
    }
    out.push(']');
}

pub fn to_text(net: &Mlp) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{{");
    let _ = writeln!(s, "  \"format\": \"{FORMAT}\",");
    let _ = writeln!(s, "  \"version\": {VERSION},");
    let _ = writeln!(s, "  \"output_scale\": {},", fmt_f64(net.output_scale()));
    let _ = writeln!(s, "  \"layers\": [");
    for (i, l) in net.layers().iter().enumerate() {
        let _ = write!(
            s,
            "    {{\"inputs\": {}, \"outputs\": {}, \"activation\": \"{}\",\n     \"weights\": ",
            l.inputs(),
            l.outputs(),
            l.activation.name()
        );
        push_array(&mut s, l.weights.iter().copied());
        s.push_str(",\n     \"biases\": ");
        push_array(&mut s, l.biases.iter().copied());
        s.push('}');
        if i + 1 < net.layers().len() {
            s.push(',');
        }
        s.push('\n');
    }
    s.push_str("  ]\n}\n");
    s
}

pub fn from_text(text: &str) -> Result<Mlp> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::ModelFormat(format!("unknown format `{}`", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {}", file.version)));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let activation: Activation = l
            .activation
            .parse()
            .map_err(|e: Error| Error::ModelFormat(format!("layer {i}: {e}")))?;
        if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
            return Err(Error::ModelFormat(format!(
                "layer {i}: {} weights and {} biases do not fit {}x{}",
                l.weights.len(),
                l.biases.len(),
                l.outputs,
                l.inputs
            )));
        }
        layers.push(Dense {
            weights: Array2::from_shape_vec((l.outputs, l.inputs), l.weights)
                .map_err(|e| Error::ModelFormat(e.to_string()))?,
            biases: Array1::from(l.biases),
            activation,
        });
    }
    Mlp::new(layers, file.output_scale).map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn save(net: &Mlp, path: &Path) -> Result<()> {
    crate::io::write_string(path, &to_text(net))
}

pub fn load(path: &Path) -> Result<Mlp> {
    from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_glorot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        init_glorot(&[40, 10, 10, 10, 1], &[Activation::Sigmoid; 3], 0.4189, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(&net, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, net);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_eq!(net.forward(&x).to_bits(), back.forward(&x).to_bits());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = to_text(&net());
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_text(cut), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn unknown_activation_is_reported() {
        let text = to_text(&net()).replacen("\"sigmoid\"", "\"gelu\"", 1);
        let err = from_text(&text).unwrap_err().to_string();
        assert!(err.contains("gelu"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = to_text(&net()).replacen("\"inputs\": 40", "\"inputs\": 41", 1);
        assert!(from_text(&text).is_err());
    }
}
