//! Line-delimited tensor files: one `{"name", "shape", "values"}` record per
//! line, values row-major.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    shape_err, AlifGates, CrossAttnParams, EmbeddingParams, FusionError, GateConfig, Linear,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn matrix(name: &str, m: &Array2<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: vec![m.nrows(), m.ncols()],
            values: m.iter().copied().collect(),
        }
    }

    pub fn vector(name: &str, v: &Array1<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: vec![v.len()],
            values: v.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap(BTreeMap<String, Tensor>);

impl TensorMap {
    pub fn insert(&mut self, t: Tensor) {
        self.0.insert(t.name.clone(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>, FusionError> {
        let t = self
            .get(name)
            .ok_or_else(|| FusionError::Config(format!("missing tensor {name:?}")))?;
        match t.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), t.values.clone())
                .map_err(|_| shape_err("tensor values", r * c, t.values.len())),
            _ => Err(shape_err("tensor rank", 2, t.shape.len())),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>, FusionError> {
        let t = self
            .get(name)
            .ok_or_else(|| FusionError::Config(format!("missing tensor {name:?}")))?;
        match t.shape[..] {
            [n] if n == t.values.len() => Ok(Array1::from(t.values.clone())),
            [n] => Err(shape_err("tensor values", n, t.values.len())),
            _ => Err(shape_err("tensor rank", 1, t.shape.len())),
        }
    }

    /// Reads `{prefix}w1` … `{prefix}w6`.
    pub fn cross_attn(&self, prefix: &str) -> Result<CrossAttnParams, FusionError> {
        let w = |i: usize| self.matrix(&format!("{prefix}w{i}"));
        CrossAttnParams::new([w(1)?, w(2)?, w(3)?, w(4)?, w(5)?, w(6)?])
    }

    pub fn insert_cross_attn(&mut self, prefix: &str, p: &CrossAttnParams) {
        for (i, m) in p.weights().iter().enumerate() {
            self.insert(Tensor::matrix(&format!("{prefix}w{}", i + 1), m));
        }
    }

    fn linear(&self, prefix: &str) -> Result<Linear, FusionError> {
        Linear::new(
            self.matrix(&format!("{prefix}.weight"))?,
            self.vector(&format!("{prefix}.bias"))?,
        )
    }

    /// Reads `position.*`, `label.*` and `fuse.*` weight/bias pairs.
    pub fn embedding(&self) -> Result<EmbeddingParams, FusionError> {
        EmbeddingParams::new(
            self.linear("position")?,
            self.linear("label")?,
            self.linear("fuse")?,
        )
    }

    pub fn insert_embedding(&mut self, p: &EmbeddingParams) {
        for (name, l) in [("position", &p.position), ("label", &p.label), ("fuse", &p.fuse)] {
            self.insert(Tensor::matrix(&format!("{name}.weight"), &l.weight));
            self.insert(Tensor::vector(&format!("{name}.bias"), &l.bias));
        }
    }

    /// Scalar gates stored as 1-element tensors `{prefix}gate_v` / `{prefix}gate_l`.
    pub fn scalar_gates(&self, prefix: &str) -> Result<AlifGates, FusionError> {
        let scalar = |n: &str| -> Result<f64, FusionError> {
            let v = self.vector(&format!("{prefix}{n}"))?;
            if v.len() != 1 {
                return Err(shape_err("scalar gate", 1, v.len()));
            }
            Ok(v[0])
        };
        Ok(AlifGates {
            vision: GateConfig::scalar(scalar("gate_v")?),
            language: GateConfig::scalar(scalar("gate_l")?),
        })
    }
}

pub fn read_tensors(text: &str) -> Result<TensorMap, FusionError> {
    let mut map = TensorMap::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Tensor = serde_json::from_str(line).map_err(|e| FusionError::TensorFile {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let expected: usize = t.shape.iter().product();
        if expected != t.values.len() {
            return Err(FusionError::TensorFile {
                line: idx + 1,
                msg: format!("shape {:?} needs {expected} values, got {}", t.shape, t.values.len()),
            });
        }
        if !t.values.iter().all(|v| v.is_finite()) {
            return Err(FusionError::TensorFile {
                line: idx + 1,
                msg: "non-finite value".into(),
            });
        }
        map.insert(t);
    }
    Ok(map)
}

pub fn write_tensors(map: &TensorMap) -> String {
    let mut out = String::new();
    for t in map.0.values() {
        out.push_str(&serde_json::to_string(t).expect("tensor serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CrossAttnParams::random(4, 6, 8, &mut rng);
        let e = EmbeddingParams::random(6, 8, &mut rng);
        let mut map = TensorMap::default();
        map.insert_cross_attn("layer0.", &p);
        map.insert_embedding(&e);
        let text = write_tensors(&map);
        let back = read_tensors(&text).unwrap();
        assert_eq!(back.cross_attn("layer0.").unwrap(), p);
        assert_eq!(back.embedding().unwrap(), e);
    }

    #[test]
    fn bad_records() {
        let err = read_tensors("{\"name\":\"a\",\"shape\":[2,2],\"values\":[1,2,3]}\n").unwrap_err();
        assert!(matches!(err, FusionError::TensorFile { line: 1, .. }));
        assert!(read_tensors("not json").is_err());
        let map = read_tensors("{\"name\":\"gate_v\",\"shape\":[1],\"values\":[0.5]}\n{\"name\":\"gate_l\",\"shape\":[1],\"values\":[0.0]}").unwrap();
        let g = map.scalar_gates("").unwrap();
        assert_eq!(g.vision, GateConfig::scalar(0.5));
        assert!(map.cross_attn("").is_err());
    }
}
