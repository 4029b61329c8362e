//! CSI amplitude preprocessing: modulus extraction, removal of static
//! (null/guard) subcarriers, PCA along the subcarrier axis and z-score
//! normalization with training-split statistics.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array3, Array4, ArrayView4, Axis};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_PCA_COMPONENTS: usize = 10;

/// Non-negative CSI amplitudes, (T, n_tx, n_rx, n_subcarriers).
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTensor(Array4<f32>);

impl AmplitudeTensor {
    pub fn new(values: Array4<f32>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Shape("amplitudes must be non-negative".into()));
        }
        Ok(AmplitudeTensor(values))
    }

    pub fn values(&self) -> &Array4<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array4<f32> {
        self.0
    }

    pub fn n_subcarriers(&self) -> usize {
        self.0.len_of(Axis(3))
    }

    /// Rows of subcarrier vectors, one per (t, tx, rx).
    fn rows(&self) -> impl Iterator<Item = ndarray::ArrayView1<'_, f32>> {
        self.0.lanes(Axis(3)).into_iter()
    }
}

pub fn extract_amplitude(csi: &ArrayView4<Complex32>) -> AmplitudeTensor {
    AmplitudeTensor(csi.mapv(|z| z.norm()))
}

/// Temporal variance of each subcarrier relative to the mean squared
/// amplitude of the whole tensor, maximized over antenna pairs.
pub fn subcarrier_variance(amp: &AmplitudeTensor) -> Vec<f64> {
    let v = amp.values();
    let (t, n_tx, n_rx, n_sc) = v.dim();
    let scale = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>() / v.len().max(1) as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut out = vec![0.0f64; n_sc];
    if t == 0 {
        return out;
    }
    for a in 0..n_tx {
        for b in 0..n_rx {
            for (k, slot) in out.iter_mut().enumerate() {
                let series = v.slice(ndarray::s![.., a, b, k]);
                let mean = series.iter().map(|x| *x as f64).sum::<f64>() / t as f64;
                let var = series
                    .iter()
                    .map(|x| (*x as f64 - mean).powi(2))
                    .sum::<f64>()
                    / t as f64;
                *slot = slot.max(var / scale);
            }
        }
    }
    out
}

/// Drops subcarriers whose normalized temporal variance is at most
/// `variance_floor`, returning the kept indices for reuse at inference.
pub fn clean_subcarriers(
    amp: &AmplitudeTensor,
    variance_floor: f64,
) -> Result<(AmplitudeTensor, Vec<usize>)> {
    if !(variance_floor >= 0.0) {
        return Err(Error::config("variance_floor must be non-negative"));
    }
    let kept: Vec<usize> = subcarrier_variance(amp)
        .into_iter()
        .enumerate()
        .filter(|(_, v)| *v > variance_floor)
        .map(|(k, _)| k)
        .collect();
    if kept.is_empty() {
        return Err(Error::AllSubcarriersDropped {
            floor: variance_floor,
        });
    }
    Ok((select_subcarriers(amp, &kept)?, kept))
}

pub fn select_subcarriers(amp: &AmplitudeTensor, kept: &[usize]) -> Result<AmplitudeTensor> {
    let n = amp.n_subcarriers();
    if let Some(bad) = kept.iter().find(|k| **k >= n) {
        return Err(Error::Shape(format!(
            "subcarrier index {bad} out of range for {n} subcarriers"
        )));
    }
    Ok(AmplitudeTensor(amp.values().select(Axis(3), kept)))
}

/// PCA along the subcarrier axis. Components are orthonormal rows; each
/// component's largest-magnitude coordinate is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub n_features: usize,
    pub n_components: usize,
    pub mean: Vec<f64>,
    /// Row-major (n_components, n_features).
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PcaModel serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: PcaModel = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid PCA model: {e}")))?;
        if model.mean.len() != model.n_features
            || model.components.len() != model.n_features * model.n_components
            || model.explained_variance_ratio.len() != model.n_components
        {
            return Err(Error::config("PCA model arrays disagree with its dimensions"));
        }
        Ok(model)
    }
}

/// Fits PCA on subcarrier vectors pooled over time and antenna axes of every
/// window in `windows`.
pub fn fit_pca(windows: &[AmplitudeTensor], k: usize) -> Result<PcaModel> {
    let first = windows.first().ok_or(Error::Empty("PCA fit data"))?;
    let n_features = first.n_subcarriers();
    if windows.iter().any(|w| w.n_subcarriers() != n_features) {
        return Err(Error::Shape("PCA windows disagree on subcarrier count".into()));
    }
    if k == 0 || k > n_features {
        return Err(Error::config(format!(
            "PCA target dimension {k} must be in 1..={n_features}"
        )));
    }
    let rows: Vec<Vec<f64>> = windows
        .iter()
        .flat_map(|w| w.rows().map(|r| r.iter().map(|v| *v as f64).collect()))
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("PCA fit data"));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; n_features];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n_features, n_features);
    for r in &rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..n_features {
            if c[i] == 0.0 {
                continue;
            }
            for j in i..n_features {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for i in 0..n_features {
        for j in i..n_features {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n_features).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k * n_features);
    let mut ratio = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
        let lambda = eig.eigenvalues[idx].max(0.0);
        ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    Ok(PcaModel {
        n_features,
        n_components: k,
        mean,
        components,
        explained_variance_ratio: ratio,
    })
}

/// Centered projection onto the components: (T, tx, rx, k).
pub fn pca_transform(model: &PcaModel, amp: &AmplitudeTensor) -> Result<Array4<f32>> {
    let v = amp.values();
    let (t, a, b, f) = v.dim();
    if f != model.n_features {
        return Err(Error::Shape(format!(
            "PCA model expects {} subcarriers, input has {f}",
            model.n_features
        )));
    }
    let mut out = Array4::<f32>::zeros((t, a, b, model.n_components));
    for (src, mut dst) in v.lanes(Axis(3)).into_iter().zip(out.lanes_mut(Axis(3))) {
        for (c, slot) in dst.iter_mut().enumerate() {
            let comp = model.component(c);
            let mut acc = 0.0f64;
            for ((x, m), w) in src.iter().zip(&model.mean).zip(comp) {
                acc += (*x as f64 - m) * w;
            }
            *slot = acc as f32;
        }
    }
    Ok(out)
}

/// Maps projected coordinates back to subcarrier space.
pub fn pca_inverse(model: &PcaModel, projected: &Array4<f32>) -> Result<Array4<f32>> {
    let (t, a, b, k) = projected.dim();
    if k != model.n_components {
        return Err(Error::Shape(format!(
            "PCA model has {} components, input has {k}",
            model.n_components
        )));
    }
    let mut out = Array4::<f32>::zeros((t, a, b, model.n_features));
    for (src, mut dst) in projected.lanes(Axis(3)).into_iter().zip(out.lanes_mut(Axis(3))) {
        for (j, slot) in dst.iter_mut().enumerate() {
            let mut acc = model.mean[j];
            for (c, z) in src.iter().enumerate() {
                acc += *z as f64 * model.components[c * model.n_features + j];
            }
            *slot = acc as f32;
        }
    }
    Ok(out)
}

/// Per-feature mean and standard deviation; features are the flattened
/// per-frame values (everything but the time axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standard deviations at or below this are treated as constant features.
const MIN_STD: f64 = 1e-12;

impl NormStats {
    pub fn fit(tensors: &[Array2<f32>]) -> Result<Self> {
        let first = tensors.first().ok_or(Error::Empty("normalization fit data"))?;
        let d = first.ncols();
        let mut n = 0usize;
        let mut sum = vec![0.0f64; d];
        for t in tensors {
            if t.ncols() != d {
                return Err(Error::Shape("normalization inputs disagree on feature count".into()));
            }
            for row in t.rows() {
                n += 1;
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += *v as f64;
                }
            }
        }
        if n == 0 {
            return Err(Error::Empty("normalization fit data"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0f64; d];
        for t in tensors {
            for row in t.rows() {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (*v as f64 - m).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(NormStats { mean, std })
    }

    /// z-score; features with (near-)zero training std are only centered.
    pub fn apply(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "normalization expects {} features, input has {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                let centered = *v as f64 - m;
                *v = if *s > MIN_STD { centered / s } else { centered } as f32;
            }
        }
        Ok(out)
    }
}

/// Flattens (T, a, b, f) into (T, a*b*f).
pub fn flatten_frames(x: &Array4<f32>) -> Array2<f32> {
    let (t, a, b, f) = x.dim();
    x.to_shape((t, a * b * f))
        .expect("contiguous reshape")
        .to_owned()
}

/// The fitted preprocessing chain applied to every sensor's CSI window:
/// amplitude, subcarrier selection, optional PCA, per-sensor z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiPreprocessor {
    pub variance_floor: f64,
    pub kept_subcarriers: Vec<usize>,
    pub pca: Option<PcaModel>,
    /// One entry per sensor, in sensor order of the training windows.
    pub norms: Vec<NormStats>,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl CsiPreprocessor {
    /// Fits the chain on training windows only. `train[i][s]` is sensor
    /// `s`'s complex CSI window of sample `i`. `pca_components = None`
    /// skips PCA.
    pub fn fit(
        train: &[Vec<Array4<Complex32>>],
        variance_floor: f64,
        pca_components: Option<usize>,
    ) -> Result<Self> {
        let first = train.first().ok_or(Error::Empty("training windows"))?;
        let n_sensors = first.len();
        if n_sensors == 0 {
            return Err(Error::Empty("sensor list"));
        }
        let (_, n_tx, n_rx, _) = first[0].dim();
        let amps: Vec<Vec<AmplitudeTensor>> = (0..n_sensors)
            .map(|s| {
                train
                    .iter()
                    .map(|sample| {
                        sample
                            .get(s)
                            .map(|w| extract_amplitude(&w.view()))
                            .ok_or_else(|| Error::Shape("samples disagree on sensor count".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        // a subcarrier survives if it varies at any sensor
        let mut any_var = vec![0.0f64; first[0].dim().3];
        for per_sensor in &amps {
            let views: Vec<_> = per_sensor.iter().map(|a| a.values().view()).collect();
            let stacked = AmplitudeTensor(
                ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?,
            );
            for (slot, v) in any_var.iter_mut().zip(subcarrier_variance(&stacked)) {
                *slot = slot.max(v);
            }
        }
        let kept: Vec<usize> = any_var
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > variance_floor)
            .map(|(k, _)| k)
            .collect();
        if kept.is_empty() {
            return Err(Error::AllSubcarriersDropped {
                floor: variance_floor,
            });
        }

        let cleaned: Vec<Vec<AmplitudeTensor>> = amps
            .iter()
            .map(|per| per.iter().map(|a| select_subcarriers(a, &kept)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let pca = match pca_components {
            Some(k) => {
                let pooled: Vec<AmplitudeTensor> = cleaned.iter().flatten().cloned().collect();
                Some(fit_pca(&pooled, k)?)
            }
            None => None,
        };
        let mut norms = Vec::with_capacity(n_sensors);
        for per in &cleaned {
            let feats = per
                .iter()
                .map(|a| Self::project(pca.as_ref(), a).map(|x| flatten_frames(&x)))
                .collect::<Result<Vec<_>>>()?;
            norms.push(NormStats::fit(&feats)?);
        }
        Ok(CsiPreprocessor {
            variance_floor,
            kept_subcarriers: kept,
            pca,
            norms,
            n_tx,
            n_rx,
        })
    }

    fn project(pca: Option<&PcaModel>, amp: &AmplitudeTensor) -> Result<Array4<f32>> {
        match pca {
            Some(model) => pca_transform(model, amp),
            None => Ok(amp.values().clone()),
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.norms.len()
    }

    /// Per-frame feature width of one sensor: `n_tx * n_rx * k`, with `k`
    /// the PCA dimension or the kept subcarrier count.
    pub fn feature_dim(&self) -> usize {
        let per = self
            .pca
            .as_ref()
            .map_or(self.kept_subcarriers.len(), |p| p.n_components);
        self.n_tx * self.n_rx * per
    }

    /// Applies the chain to one sample's sensor windows, giving
    /// (n_sensors, L_csi, feature_dim).
    pub fn apply(&self, windows: &[Array4<Complex32>]) -> Result<Array3<f32>> {
        if windows.len() != self.norms.len() {
            return Err(Error::Shape(format!(
                "preprocessor fitted for {} sensors, got {}",
                self.norms.len(),
                windows.len()
            )));
        }
        let l = windows[0].dim().0;
        let mut out = Array3::<f32>::zeros((windows.len(), l, self.feature_dim()));
        for (s, w) in windows.iter().enumerate() {
            if w.dim().0 != l {
                return Err(Error::Shape("sensor windows disagree on length".into()));
            }
            let amp = select_subcarriers(&extract_amplitude(&w.view()), &self.kept_subcarriers)?;
            let feats = flatten_frames(&Self::project(self.pca.as_ref(), &amp)?);
            let z = self.norms[s].apply(&feats)?;
            out.index_axis_mut(Axis(0), s).assign(&z);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("preprocessor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid preprocessor: {e}")))
    }
}
