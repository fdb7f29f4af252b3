//! The MLP student: rectified trunk, linear classifier head and a two-layer
//! domain head, all parameters in one flat vector.

use std::io::{Read, Write};

use rand::Rng;

use crate::container::{BinReader, BinWriter};
use crate::error::{DscError, Result};
use crate::scorers::{logsumexp, softmax, Head};
use crate::specmath::{FeatureMatrix, Matrix};

pub const STUDENT_MAGIC: &[u8; 4] = b"DSCM";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Width of the domain head's hidden layer.
    pub domain_hidden: usize,
    /// Teacher dimension `m`.
    pub teacher_dim: usize,
    /// Rectify the feature layer as well as the hidden layers.
    pub rectify_features: bool,
}

impl Architecture {
    /// Two hidden layers of width 64, 32 features, domain hidden = features.
    pub fn standard(input_dim: usize, num_classes: usize, teacher_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: vec![64, 64],
            feature_dim: 32,
            num_classes,
            domain_hidden: 32,
            teacher_dim,
            rectify_features: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.feature_dim, self.num_classes, self.domain_hidden, self.teacher_dim];
        if dims.iter().chain(&self.hidden).any(|&d| d == 0) {
            return Err(DscError::invalid("all layer widths must be positive"));
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    /// `out×inp`, row-major.
    pub w_off: usize,
    pub b_off: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.out * (self.inp + 1)
    }

    fn apply(&self, p: &[f64], x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        for o in 0..self.out {
            let row = &p[self.w_off + o * self.inp..self.w_off + (o + 1) * self.inp];
            let mut s = p[self.b_off + o];
            for (w, v) in row.iter().zip(x) {
                s += w * v;
            }
            y.push(s);
        }
    }

    /// Accumulates `dW += g xᵀ`, `db += g` and returns `Wᵀ g`.
    fn backward(&self, p: &[f64], grad: &mut [f64], x: &[f64], g: &[f64], want_input: bool) -> Vec<f64> {
        let mut gx = vec![0.0; if want_input { self.inp } else { 0 }];
        for o in 0..self.out {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            grad[self.b_off + o] += go;
            let base = self.w_off + o * self.inp;
            for i in 0..self.inp {
                grad[base + i] += go * x[i];
            }
            if want_input {
                for i in 0..self.inp {
                    gx[i] += p[base + i] * go;
                }
            }
        }
        gx
    }
}

/// Activations kept by [`MlpStudent::forward`] for backprop.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input followed by each rectified trunk output.
    pub acts: Vec<Vec<f64>>,
    pub pres: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub dom_pre: Vec<f64>,
    pub dom_act: Vec<f64>,
    pub domain_pred: Vec<f64>,
}

impl ForwardCache {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpStudent {
    arch: Architecture,
    trunk: Vec<Dense>,
    cls: Dense,
    dom1: Dense,
    dom2: Dense,
    params: Vec<f64>,
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl MlpStudent {
    /// All parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut off = 0;
        let mut layer = |inp: usize, out: usize| {
            let d = Dense { inp, out, w_off: off, b_off: off + inp * out };
            off += d.len();
            d
        };
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.feature_dim);
        let trunk: Vec<Dense> = widths.windows(2).map(|w| layer(w[0], w[1])).collect();
        let cls = layer(arch.feature_dim, arch.num_classes);
        let dom1 = layer(arch.feature_dim, arch.domain_hidden);
        let dom2 = layer(arch.domain_hidden, arch.teacher_dim);
        Ok(MlpStudent { arch, trunk, cls, dom1, dom2, params: vec![0.0; off] })
    }

    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut s = MlpStudent::zeros(arch)?;
        for d in s.layers() {
            let bound = 1.0 / (d.inp as f64).sqrt();
            for v in &mut s.params[d.w_off..d.w_off + d.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(s)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Trunk layers, then classifier, then the two domain-head layers.
    pub fn layers(&self) -> Vec<Dense> {
        let mut v = self.trunk.clone();
        v.extend([self.cls, self.dom1, self.dom2]);
        v
    }

    pub fn trunk_layers(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Overwrite the weight matrix (row-major `out×inp`) and bias of a layer.
    pub fn set_layer(&mut self, layer: Dense, w: &[f64], b: &[f64]) -> Result<()> {
        if w.len() != layer.inp * layer.out || b.len() != layer.out {
            return Err(DscError::DimensionMismatch { expected: layer.inp * layer.out, got: w.len() });
        }
        self.params[layer.w_off..layer.b_off].copy_from_slice(w);
        self.params[layer.b_off..layer.b_off + layer.out].copy_from_slice(b);
        Ok(())
    }

    pub fn head(&self) -> Head {
        let d = self.cls;
        let w = Matrix::from_vec(d.out, d.inp, self.params[d.w_off..d.b_off].to_vec()).expect("layout");
        Head { w, b: self.params[d.b_off..d.b_off + d.out].to_vec() }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.arch.input_dim {
            return Err(DscError::DimensionMismatch { expected: self.arch.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DscError::Numerical("non-finite student input".into()));
        }
        let p = &self.params;
        let mut cache = ForwardCache { acts: vec![x.to_vec()], ..Default::default() };
        let last = self.trunk.len() - 1;
        for (l, d) in self.trunk.iter().enumerate() {
            let mut pre = Vec::with_capacity(d.out);
            d.apply(p, cache.acts.last().unwrap(), &mut pre);
            let mut act = pre.clone();
            if l < last || self.arch.rectify_features {
                relu(&mut act);
            }
            cache.pres.push(pre);
            cache.acts.push(act);
        }
        let z = cache.acts.last().unwrap();
        self.cls.apply(p, z, &mut cache.logits);
        self.dom1.apply(p, z, &mut cache.dom_pre);
        cache.dom_act = cache.dom_pre.clone();
        relu(&mut cache.dom_act);
        self.dom2.apply(p, &cache.dom_act, &mut cache.domain_pred);
        if cache.logits.iter().chain(&cache.domain_pred).any(|v| !v.is_finite()) {
            return Err(DscError::Numerical("non-finite student output".into()));
        }
        Ok(cache)
    }

    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(inputs.rows(), self.arch.feature_dim);
        for i in 0..inputs.rows() {
            let c = self.forward(inputs.row(i))?;
            out.row_mut(i).copy_from_slice(c.features());
        }
        Ok(out)
    }

    pub fn labeled_features(&self, inputs: &Matrix, labels: &[usize], num_classes: usize) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.features(inputs)?, labels.to_vec(), num_classes)
    }

    /// Adds the gradient of one sample's loss to `grad`, given the loss
    /// gradients with respect to the logits and (optionally) the domain
    /// prediction. `detach_domain` stops the domain gradient at the trunk.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_domain: Option<&[f64]>,
        detach_domain: bool,
        grad: &mut [f64],
    ) {
        let p = &self.params;
        let z = cache.features();
        let mut dz = self.cls.backward(p, grad, z, d_logits, true);
        if let Some(dh) = d_domain {
            let da = self.dom2.backward(p, grad, &cache.dom_act, dh, true);
            let dpre: Vec<f64> =
                da.iter().zip(&cache.dom_pre).map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 }).collect();
            let dz_dom = self.dom1.backward(p, grad, z, &dpre, !detach_domain);
            if !detach_domain {
                for (a, b) in dz.iter_mut().zip(&dz_dom) {
                    *a += b;
                }
            }
        }
        let last = self.trunk.len() - 1;
        for (l, d) in self.trunk.iter().enumerate().rev() {
            let linear = l == last && !self.arch.rectify_features;
            let g: Vec<f64> =
                dz.iter().zip(&cache.pres[l]).map(|(&g, &pre)| if linear || pre > 0.0 { g } else { 0.0 }).collect();
            dz = d.backward(p, grad, &cache.acts[l], &g, l > 0);
        }
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut out = BinWriter::new(w, STUDENT_MAGIC)?;
        let a = &self.arch;
        out.usize(a.input_dim)?;
        out.usize(a.hidden.len())?;
        for &h in &a.hidden {
            out.usize(h)?;
        }
        out.usize(a.feature_dim)?;
        out.usize(a.num_classes)?;
        out.usize(a.domain_hidden)?;
        out.usize(a.teacher_dim)?;
        out.u32(a.rectify_features as u32)?;
        out.f64_array(&self.params)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut inp = BinReader::new(r, STUDENT_MAGIC)?;
        let input_dim = inp.usize()?;
        let nh = inp.usize()?;
        if nh > 64 {
            return Err(DscError::Format(format!("implausible hidden layer count {nh}")));
        }
        let hidden = (0..nh).map(|_| inp.usize()).collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            input_dim,
            hidden,
            feature_dim: inp.usize()?,
            num_classes: inp.usize()?,
            domain_hidden: inp.usize()?,
            teacher_dim: inp.usize()?,
            rectify_features: match inp.u32()? {
                0 => false,
                1 => true,
                v => return Err(DscError::Format(format!("bad feature activation flag {v}"))),
            },
        };
        let mut s = MlpStudent::zeros(arch)?;
        let params = inp.f64_array()?;
        inp.finish()?;
        if params.len() != s.params.len() {
            return Err(DscError::Format(format!(
                "parameter count {} does not match architecture ({})",
                params.len(),
                s.params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(DscError::Format("non-finite student parameter".into()));
        }
        s.params = params;
        Ok(s)
    }
}

/// Stable cross-entropy and `softmax − onehot`.
pub fn ce_loss(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label out of range");
    let loss = (logsumexp(logits) - logits[label]).max(0.0);
    let mut g = softmax(logits);
    g[label] -= 1.0;
    (loss, g)
}
