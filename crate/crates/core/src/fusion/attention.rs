use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{random_matrix, shape_err, AttentionMask, FeatureMatrix, FeatureMatrix as FM, FusionError};

/// Projections of the bidirectional cross-attention.
///
/// With vision dim `dv`, language dim `dl`, attention dim `d` and value dims
/// `vl`, `vc`:
/// `w1: dv×d`, `w2: dl×d`, `w3: dl×vl`, `w4: vl×dv`, `w5: dv×vc`, `w6: vc×dl`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttnParams {
    w: [Array2<f64>; 6],
    d: usize,
}

impl CrossAttnParams {
    pub fn new(w: [Array2<f64>; 6]) -> Result<Self, FusionError> {
        let [w1, w2, w3, w4, w5, w6] = &w;
        let dv = w1.nrows();
        let d = w1.ncols();
        let dl = w2.nrows();
        let check = |name: &'static str, m: &Array2<f64>, rows: usize, cols: usize| {
            if m.dim() == (rows, cols) {
                Ok(())
            } else {
                Err(shape_err(name, format!("{rows}x{cols}"), format!("{:?}", m.dim())))
            }
        };
        if d == 0 {
            return Err(FusionError::Config("attention dim must be positive".into()));
        }
        check("w2", w2, dl, d)?;
        check("w3", w3, dl, w3.ncols())?;
        check("w4", w4, w3.ncols(), dv)?;
        check("w5", w5, dv, w5.ncols())?;
        check("w6", w6, w5.ncols(), dl)?;
        if !w.iter().all(|m| m.iter().all(|v| v.is_finite())) {
            return Err(FusionError::NonFinite("CrossAttnParams"));
        }
        Ok(Self { w, d })
    }

    /// Uniform random projections with value dims equal to `d`.
    pub fn random(vision_dim: usize, language_dim: usize, d: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        let w = [
            random_matrix(vision_dim, d, s, rng),
            random_matrix(language_dim, d, s, rng),
            random_matrix(language_dim, d, s, rng),
            random_matrix(d, vision_dim, s, rng),
            random_matrix(vision_dim, d, s, rng),
            random_matrix(d, language_dim, s, rng),
        ];
        Self::new(w).expect("random params are consistent")
    }

    pub fn attention_dim(&self) -> usize {
        self.d
    }

    pub fn vision_dim(&self) -> usize {
        self.w[0].nrows()
    }

    pub fn language_dim(&self) -> usize {
        self.w[1].nrows()
    }

    pub fn weights(&self) -> &[Array2<f64>; 6] {
        &self.w
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttnOutput {
    /// Language features aggregated onto vision tokens.
    pub vision: FeatureMatrix,
    /// Vision features aggregated onto language tokens.
    pub language: FeatureMatrix,
    /// Row-stochastic `C.rows × L.rows` attention weights.
    pub vision_weights: Array2<f64>,
    /// Row-stochastic `L.rows × C.rows` attention weights.
    pub language_weights: Array2<f64>,
}

/// Row-wise softmax with blocked entries forced to exactly 0. A fully
/// blocked row produces all zeros.
pub fn masked_softmax_rows(scores: ArrayView2<f64>, blocked: impl Fn(usize, usize) -> bool) -> Array2<f64> {
    let mut out = Array2::zeros(scores.dim());
    for (i, row) in scores.outer_iter().enumerate() {
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| !blocked(i, *j))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (j, v) in row.iter().enumerate() {
            if !blocked(i, j) {
                let e = (v - max).exp();
                out[[i, j]] = e;
                sum += e;
            }
        }
        out.row_mut(i).mapv_inplace(|e| e / sum);
    }
    out
}

/// Bidirectional cross-attention between vision tokens `c` and language
/// tokens `l`. `mask`, when given, is `c.rows × l.rows` with `true` marking a
/// blocked vision→language link; the reverse direction uses its transpose.
pub fn cross_attend(
    c: &FM,
    l: &FM,
    p: &CrossAttnParams,
    mask: Option<&AttentionMask>,
) -> Result<CrossAttnOutput, FusionError> {
    if c.dim() != p.vision_dim() {
        return Err(shape_err("cross_attend vision dim", p.vision_dim(), c.dim()));
    }
    if l.dim() != p.language_dim() {
        return Err(shape_err("cross_attend language dim", p.language_dim(), l.dim()));
    }
    if let Some(m) = mask {
        if (m.rows(), m.cols()) != (c.rows(), l.rows()) {
            return Err(shape_err(
                "cross_attend mask",
                format!("{}x{}", c.rows(), l.rows()),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
    }
    let [w1, w2, w3, w4, w5, w6] = &p.w;
    let cq = c.as_array().dot(w1);
    let lq = l.as_array().dot(w2);
    let att = cq.dot(&lq.t()) / (p.d as f64).sqrt();

    let vision_weights = masked_softmax_rows(att.view(), |i, j| mask.is_some_and(|m| m.is_blocked(i, j)));
    let language_weights = masked_softmax_rows(att.t(), |i, j| mask.is_some_and(|m| m.is_blocked(j, i)));

    let lv = l.as_array().dot(w3);
    let cv = c.as_array().dot(w5);
    let vision = vision_weights.dot(&lv).dot(w4);
    let language = language_weights.dot(&cv).dot(w6);

    Ok(CrossAttnOutput {
        vision: FeatureMatrix::from_array(vision)?,
        language: FeatureMatrix::from_array(language)?,
        vision_weights,
        language_weights,
    })
}
