use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm2d, conv2d, conv_transpose2d, Activation, Mode, RunningStats, Scalar, Tensor,
};

use super::init::{InitSpec, SeededRng};
use super::spectral::{SpectralNorm, WeightLayout};

/// Named tensors making up a model's persistent state.
pub type StateMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv {
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        stride: usize,
        pad: usize,
        output_pad: usize,
    },
}

/// Per-channel affine batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::<T>::ones(&[channels]).to_param(),
            beta: Tensor::<T>::zeros(&[channels]).to_param(),
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        batchnorm2d(x, &self.gamma, &self.beta, &mut self.stats, mode)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn save(&self, prefix: &str, out: &mut StateMap<T>) {
        let c = self.stats.mean.len();
        out.insert(format!("{prefix}.gamma"), self.gamma.detach());
        out.insert(format!("{prefix}.beta"), self.beta.detach());
        out.insert(
            format!("{prefix}.running_mean"),
            vec_tensor(&self.stats.mean, c),
        );
        out.insert(
            format!("{prefix}.running_var"),
            vec_tensor(&self.stats.var, c),
        );
    }

    pub fn load(&mut self, prefix: &str, map: &StateMap<T>) -> Result<()> {
        self.gamma = take(map, &format!("{prefix}.gamma"), self.gamma.shape())?.to_param();
        self.beta = take(map, &format!("{prefix}.beta"), self.beta.shape())?.to_param();
        let c = self.stats.mean.len();
        self.stats.mean = take(map, &format!("{prefix}.running_mean"), &[c])?.to_vec();
        self.stats.var = take(map, &format!("{prefix}.running_var"), &[c])?.to_vec();
        Ok(())
    }
}

fn vec_tensor<T: Scalar>(v: &[T], n: usize) -> Tensor<T> {
    Tensor::from_vec(v.to_vec(), &[n]).expect("length matches")
}

fn take<T: Scalar>(map: &StateMap<T>, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
    let t = map
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "tensor {name} has shape {:?}, model expects {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

/// A linear map (optionally spectrally normalized), bias, optional batch norm,
/// then an activation. Spatial extent only shrinks through stride.
#[derive(Debug, Clone)]
pub struct Layer<T: Scalar> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub spectral: Option<SpectralNorm<T>>,
    pub norm: Option<BatchNorm<T>>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    fn with_shape(kind: LayerKind, shape: &[usize], bias_len: usize, rng: &mut SeededRng) -> Self {
        let mut layer = Layer {
            kind,
            weight: Tensor::zeros(shape),
            bias: Some(Tensor::zeros(&[bias_len])),
            spectral: None,
            norm: None,
            activation: Activation::Identity,
        };
        layer.init_parameters(InitSpec::default(), rng);
        layer
    }

    /// `in_features → out_features`, weight `[out, in]`.
    pub fn dense(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Self {
        Self::with_shape(
            LayerKind::Dense,
            &[out_features, in_features],
            out_features,
            rng,
        )
    }

    /// 3×3 convolution, weight `[out, in, 3, 3]`.
    pub fn conv(cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut SeededRng) -> Self {
        Self::with_shape(
            LayerKind::Conv { stride, pad },
            &[cout, cin, 3, 3],
            cout,
            rng,
        )
    }

    /// 3×3 transposed convolution, weight `[in, out, 3, 3]`.
    pub fn conv_transpose(
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut SeededRng,
    ) -> Self {
        Self::with_shape(
            LayerKind::ConvTranspose {
                stride,
                pad,
                output_pad,
            },
            &[cin, cout, 3, 3],
            cout,
            rng,
        )
    }

    /// Redraws the weight from `spec`, resets the bias and (if present) `u`.
    pub fn init_parameters(&mut self, spec: InitSpec, rng: &mut SeededRng) {
        let shape = self.weight.shape().to_vec();
        self.weight = Tensor::param(spec.sample(self.weight.numel(), rng), &shape).expect("shape");
        if let Some(b) = &self.bias {
            self.bias = Some(Tensor::full(b.shape(), T::of(spec.bias)).to_param());
        }
        if self.spectral.is_some() {
            self.spectral = Some(SpectralNorm::new(&shape, self.layout(), rng));
        }
    }

    pub fn layout(&self) -> WeightLayout {
        match self.kind {
            LayerKind::ConvTranspose { .. } => WeightLayout::InFirst,
            _ => WeightLayout::OutFirst,
        }
    }

    pub fn with_spectral_norm(mut self, rng: &mut SeededRng) -> Self {
        self.spectral = Some(SpectralNorm::new(self.weight.shape(), self.layout(), rng));
        self
    }

    /// Adds batch norm after the linear map; the bias becomes redundant and is dropped.
    pub fn with_batch_norm(mut self) -> Self {
        let channels = match self.kind {
            LayerKind::Dense => self.weight.shape()[0],
            LayerKind::Conv { .. } => self.weight.shape()[0],
            LayerKind::ConvTranspose { .. } => self.weight.shape()[1],
        };
        self.bias = None;
        self.norm = Some(BatchNorm::new(channels));
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn zero_init(mut self) -> Self {
        self.weight = Tensor::<T>::zeros(self.weight.shape()).to_param();
        if let Some(b) = &self.bias {
            self.bias = Some(Tensor::<T>::zeros(b.shape()).to_param());
        }
        self
    }

    /// The weight actually applied: spectrally normalized when enabled.
    pub fn effective_weight(&mut self, mode: Mode) -> Result<Tensor<T>> {
        match &mut self.spectral {
            Some(sn) => sn.normalize_weight(&self.weight, mode),
            None => Ok(self.weight.clone()),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let w = self.effective_weight(mode)?;
        let mut y = match self.kind {
            LayerKind::Dense => x.dense(&w, None)?,
            LayerKind::Conv { stride, pad } => conv2d(x, &w, stride, pad)?,
            LayerKind::ConvTranspose {
                stride,
                pad,
                output_pad,
            } => conv_transpose2d(x, &w, stride, pad, output_pad)?,
        };
        if let Some(b) = &self.bias {
            y = y.add_channel_bias(b)?;
        }
        if let Some(norm) = &mut self.norm {
            y = norm.forward(&y, mode)?;
        }
        y.activation(self.activation)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = vec![&self.weight];
        p.extend(self.bias.as_ref());
        if let Some(n) = &self.norm {
            p.extend(n.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = vec![&mut self.weight];
        p.extend(self.bias.as_mut());
        if let Some(n) = &mut self.norm {
            p.extend(n.params_mut());
        }
        p
    }

    pub fn save(&self, prefix: &str, out: &mut StateMap<T>) {
        out.insert(format!("{prefix}.weight"), self.weight.detach());
        if let Some(b) = &self.bias {
            out.insert(format!("{prefix}.bias"), b.detach());
        }
        if let Some(sn) = &self.spectral {
            out.insert(format!("{prefix}.sn_u"), vec_tensor(&sn.u, sn.u.len()));
        }
        if let Some(n) = &self.norm {
            n.save(&format!("{prefix}.bn"), out);
        }
    }

    pub fn load(&mut self, prefix: &str, map: &StateMap<T>) -> Result<()> {
        self.weight = take(map, &format!("{prefix}.weight"), self.weight.shape())?.to_param();
        if let Some(b) = &self.bias {
            self.bias = Some(take(map, &format!("{prefix}.bias"), b.shape())?.to_param());
        }
        if let Some(sn) = &mut self.spectral {
            sn.u = take(map, &format!("{prefix}.sn_u"), &[sn.u.len()])?.to_vec();
        }
        if let Some(n) = &mut self.norm {
            n.load(&format!("{prefix}.bn"), map)?;
        }
        Ok(())
    }
}
