//! The class-conditioned generator `G(z|y)` and the two-headed discriminator.
//!
//! Both networks use five 3×3 layers with stride 2 and padding 1. For 50×50
//! patches the discriminator shrinks 50→25→13→7→4→2 and the generator mirrors
//! it, 2→4→7→13→25→50, with output padding chosen per layer to land on each
//! extent exactly. Layer `l` (1-based) of the discriminator has
//! `base·l·ω` filters; the generator uses the same counts in reverse.

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Layer, StateMap};
use crate::tensor::{conv_output_extent, Activation, Mode, Scalar, Tensor};

pub const NUM_CONV_LAYERS: usize = 5;
pub const BASE_FILTERS: usize = 64;

/// Which networks see the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// Only the generator is conditioned; the discriminator sees images alone.
    #[default]
    GeneratorOnly,
    /// Classic cGAN: the discriminator also receives the label as extra input planes.
    Both,
}

impl Conditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::GeneratorOnly => "generator-only",
            Conditioning::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generator-only" | "generator_only" => Ok(Conditioning::GeneratorOnly),
            "both" => Ok(Conditioning::Both),
            other => Err(Error::Config(format!(
                "unknown conditioning mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width multiplier ω.
    pub omega: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub leaky_slope: f64,
    pub conditioning: Conditioning,
    pub base_filters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            omega: 1,
            latent_dim: 100,
            num_classes: 2,
            channels: 3,
            height: 50,
            width: 50,
            leaky_slope: 0.2,
            conditioning: Conditioning::GeneratorOnly,
            base_filters: BASE_FILTERS,
        }
    }
}

/// `[64·1·ω, 64·2·ω, …, 64·5·ω]`, the discriminator's per-layer filter counts.
pub fn filter_counts(omega: usize) -> Result<[usize; NUM_CONV_LAYERS]> {
    scaled_filters(BASE_FILTERS, omega)
}

fn scaled_filters(base: usize, omega: usize) -> Result<[usize; NUM_CONV_LAYERS]> {
    if omega < 1 {
        return Err(Error::Config(
            "width multiplier omega must be at least 1".into(),
        ));
    }
    Ok(std::array::from_fn(|l| base * (l + 1) * omega))
}

impl ModelConfig {
    pub fn with_omega(omega: usize) -> Self {
        ModelConfig {
            omega,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.channels < 1 || self.base_filters < 1 {
            return Err(Error::Config(
                "channels and base_filters must be positive".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope {} outside (0,1)",
                self.leaky_slope
            )));
        }
        self.filters()?;
        self.spatial_plan()?;
        Ok(())
    }

    pub fn filters(&self) -> Result<[usize; NUM_CONV_LAYERS]> {
        scaled_filters(self.base_filters, self.omega)
    }

    /// Spatial extents through the discriminator, input first:
    /// `[(50,50), (25,25), (13,13), (7,7), (4,4), (2,2)]` for 50×50 patches.
    pub fn spatial_plan(&self) -> Result<Vec<(usize, usize)>> {
        let mut plan = vec![(self.height, self.width)];
        for _ in 0..NUM_CONV_LAYERS {
            let (h, w) = *plan.last().unwrap();
            match (
                conv_output_extent(h, 3, 2, 1),
                conv_output_extent(w, 3, 2, 1),
            ) {
                (Some(oh), Some(ow)) => plan.push((oh, ow)),
                _ => {
                    return Err(Error::Config(format!(
                        "{}x{} images are too small for five stride-2 layers",
                        self.height, self.width
                    )))
                }
            }
        }
        Ok(plan)
    }

    /// Output padding of each generator layer so `(s−1)·2 + 1 + pad` hits the next extent.
    pub fn generator_output_pads(&self) -> Result<Vec<(usize, usize)>> {
        let plan = self.spatial_plan()?;
        Ok(plan
            .windows(2)
            .rev()
            .map(|w| {
                let (big, small) = (w[0], w[1]);
                (big.0 - (2 * small.0 - 1), big.1 - (2 * small.1 - 1))
            })
            .collect())
    }

    fn discriminator_in_channels(&self) -> usize {
        match self.conditioning {
            Conditioning::GeneratorOnly => self.channels,
            Conditioning::Both => self.channels + self.num_classes,
        }
    }

    /// Width of the flattened trunk output feeding both heads.
    pub fn feature_width(&self) -> Result<usize> {
        let (h, w) = *self.spatial_plan()?.last().unwrap();
        Ok(self.filters()?[NUM_CONV_LAYERS - 1] * h * w)
    }

    fn check_labels(&self, labels: &[usize], batch: usize) -> Result<()> {
        if labels.len() != batch {
            return Err(Error::shape("labels", &[batch], &[labels.len()]));
        }
        match labels.iter().find(|&&l| l >= self.num_classes) {
            Some(&label) => Err(Error::Label {
                label,
                classes: self.num_classes,
            }),
            None => Ok(()),
        }
    }
}

fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = T::one();
    }
    Tensor::from_vec(data, &[labels.len(), classes])
}

/// One constant plane per class, set to 1 for the sample's label.
fn label_planes<T: Scalar>(
    labels: Option<&[usize]>,
    batch: usize,
    classes: usize,
    h: usize,
    w: usize,
) -> Tensor<T> {
    let mut data = vec![T::zero(); batch * classes * h * w];
    if let Some(labels) = labels {
        for (i, &l) in labels.iter().enumerate() {
            let start = (i * classes + l) * h * w;
            data[start..start + h * w]
                .iter_mut()
                .for_each(|v| *v = T::one());
        }
    }
    Tensor::from_vec(data, &[batch, classes, h, w]).expect("plane shape")
}

/// `G(z|y)`: a dense projection of `[z, onehot(y)]` followed by five
/// transposed convolutions; tanh output in `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar = f32> {
    config: ModelConfig,
    project: Layer<T>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let filters = config.filters()?;
        let plan = config.spatial_plan()?;
        let (h0, w0) = plan[NUM_CONV_LAYERS];
        let top = filters[NUM_CONV_LAYERS - 1];
        let project = Layer::dense(
            config.latent_dim + config.num_classes,
            top * h0 * w0,
            &mut rng,
        )
        .with_batch_norm()
        .with_activation(Activation::Relu);
        let mut channels: Vec<usize> = filters.iter().rev().copied().collect();
        channels.push(config.channels);
        let pads = config.generator_output_pads()?;
        let mut layers = Vec::with_capacity(NUM_CONV_LAYERS);
        for (i, &(pad_h, pad_w)) in pads.iter().enumerate() {
            if pad_h != pad_w {
                return Err(Error::Config(
                    "non-square images need per-axis output padding".into(),
                ));
            }
            let layer = Layer::conv_transpose(channels[i], channels[i + 1], 2, 1, pad_h, &mut rng)
                .with_spectral_norm(&mut rng);
            let last = i == NUM_CONV_LAYERS - 1;
            layers.push(if last {
                layer.with_activation(Activation::Tanh)
            } else {
                layer.with_batch_norm().with_activation(Activation::Relu)
            });
        }
        Ok(Generator {
            config: config.clone(),
            project,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&mut self, z: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<Tensor<T>> {
        let (batch, latent) = z.dims2("generator")?;
        if latent != self.config.latent_dim {
            return Err(Error::shape(
                "generator",
                z.shape(),
                &[batch, self.config.latent_dim],
            ));
        }
        self.config.check_labels(labels, batch)?;
        let cond = one_hot(labels, self.config.num_classes)?;
        let input = Tensor::concat(&[z, &cond], 1)?;
        let (h0, w0) = self.config.spatial_plan()?[NUM_CONV_LAYERS];
        let top = self.config.filters()?[NUM_CONV_LAYERS - 1];
        let mut h = self
            .project
            .forward(&input, mode)?
            .reshape(&[batch, top, h0, w0])?;
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn all_layers(&self) -> impl Iterator<Item = (String, &Layer<T>)> {
        std::iter::once(("g.project".to_string(), &self.project)).chain(
            self.layers
                .iter()
                .enumerate()
                .map(|(i, l)| (format!("g.convt{}", i + 1), l)),
        )
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.all_layers().flat_map(|(_, l)| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.project.params_mut();
        for l in &mut self.layers {
            p.extend(l.params_mut());
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn save(&self, out: &mut StateMap<T>) {
        for (name, layer) in self.all_layers() {
            layer.save(&name, out);
        }
    }

    pub fn load(&mut self, map: &StateMap<T>) -> Result<()> {
        self.project.load("g.project", map)?;
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.load(&format!("g.convt{}", i + 1), map)?;
        }
        Ok(())
    }
}

/// Raw logits of both discriminator heads.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput<T: Scalar> {
    /// `[batch, 1]`, real vs. synthetic.
    pub adv: Tensor<T>,
    /// `[batch, num_classes]`.
    pub class: Tensor<T>,
}

/// Five strided convolutions with leaky ReLU, then two single dense heads.
///
/// Spectral normalization wraps convolutions 2–4; the first and last
/// convolutions and both heads are left plain. The class head starts at zero,
/// so before any supervised signal it expresses no class preference.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar = f32> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    adv_head: Layer<T>,
    class_head: Layer<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        // Distinct stream from the generator built with the same seed.
        let mut rng = seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
        let filters = config.filters()?;
        let mut channels = vec![config.discriminator_in_channels()];
        channels.extend(filters);
        let act = Activation::LeakyRelu(config.leaky_slope);
        let layers = (0..NUM_CONV_LAYERS)
            .map(|i| {
                let layer =
                    Layer::conv(channels[i], channels[i + 1], 2, 1, &mut rng).with_activation(act);
                if (1..NUM_CONV_LAYERS - 1).contains(&i) {
                    layer.with_spectral_norm(&mut rng)
                } else {
                    layer
                }
            })
            .collect();
        let features = config.feature_width()?;
        let adv_head = Layer::dense(features, 1, &mut rng);
        let class_head = Layer::dense(features, config.num_classes, &mut rng).zero_init();
        Ok(Discriminator {
            config: config.clone(),
            layers,
            adv_head,
            class_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let (b, c, h, w) = x.dims4("discriminator")?;
        let c_ = &self.config;
        if (c, h, w) != (c_.channels, c_.height, c_.width) {
            return Err(Error::shape(
                "discriminator",
                x.shape(),
                &[b, c_.channels, c_.height, c_.width],
            ));
        }
        Ok(b)
    }

    fn trunk(&mut self, x: &Tensor<T>, labels: Option<&[usize]>, mode: Mode) -> Result<Tensor<T>> {
        let batch = self.check_input(x)?;
        let mut h = match self.config.conditioning {
            Conditioning::GeneratorOnly => x.clone(),
            Conditioning::Both => {
                if let Some(l) = labels {
                    self.config.check_labels(l, batch)?;
                }
                let planes = label_planes(
                    labels,
                    batch,
                    self.config.num_classes,
                    self.config.height,
                    self.config.width,
                );
                Tensor::concat(&[x, &planes], 1)?
            }
        };
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        h.flatten()
    }

    /// `D(x)` (or `D(x|y)` when the discriminator is conditioned).
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&[usize]>,
        mode: Mode,
    ) -> Result<DiscriminatorOutput<T>> {
        match (self.config.conditioning, labels) {
            (Conditioning::GeneratorOnly, Some(_)) => {
                return Err(Error::Mode(
                    "labels given to an unconditioned discriminator".into(),
                ))
            }
            (Conditioning::Both, None) => {
                return Err(Error::Mode("conditioned discriminator needs labels".into()))
            }
            _ => {}
        }
        let features = self.trunk(x, labels, mode)?;
        Ok(DiscriminatorOutput {
            adv: self.adv_head.forward(&features, mode)?,
            class: self.class_head.forward(&features, mode)?,
        })
    }

    /// Class-head logits without label information; a conditioned
    /// discriminator receives all-zero label planes.
    pub fn class_logits(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let features = self.trunk(x, None, mode)?;
        self.class_head.forward(&features, mode)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn adv_head(&self) -> &Layer<T> {
        &self.adv_head
    }

    pub fn class_head(&self) -> &Layer<T> {
        &self.class_head
    }

    pub fn class_head_mut(&mut self) -> &mut Layer<T> {
        &mut self.class_head
    }

    fn all_layers(&self) -> impl Iterator<Item = (String, &Layer<T>)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("d.conv{}", i + 1), l))
            .chain([
                ("d.adv_head".to_string(), &self.adv_head),
                ("d.class_head".to_string(), &self.class_head),
            ])
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.all_layers().flat_map(|(_, l)| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = Vec::new();
        for l in &mut self.layers {
            p.extend(l.params_mut());
        }
        p.extend(self.adv_head.params_mut());
        p.extend(self.class_head.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn save(&self, out: &mut StateMap<T>) {
        for (name, layer) in self.all_layers() {
            layer.save(&name, out);
        }
    }

    pub fn load(&mut self, map: &StateMap<T>) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.load(&format!("d.conv{}", i + 1), map)?;
        }
        self.adv_head.load("d.adv_head", map)?;
        self.class_head.load("d.class_head", map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            base_filters: 2,
            latent_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn filter_formula() {
        assert_eq!(filter_counts(1).unwrap(), [64, 128, 192, 256, 320]);
        assert_eq!(filter_counts(2).unwrap(), [128, 256, 384, 512, 640]);
        assert_eq!(filter_counts(4).unwrap(), [256, 512, 768, 1024, 1280]);
        assert!(matches!(filter_counts(0), Err(Error::Config(_))));
    }

    #[test]
    fn geometry_plan_for_fifty() {
        let cfg = ModelConfig::default();
        let plan: Vec<usize> = cfg.spatial_plan().unwrap().iter().map(|p| p.0).collect();
        assert_eq!(plan, vec![50, 25, 13, 7, 4, 2]);
        let pads: Vec<usize> = cfg
            .generator_output_pads()
            .unwrap()
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(pads, vec![1, 0, 0, 0, 1]);
        assert_eq!(ModelConfig::with_omega(4).feature_width().unwrap(), 5120);
    }

    #[test]
    fn too_small_images_are_a_config_error() {
        let cfg = ModelConfig {
            height: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn both_mode_adds_label_planes() {
        let cfg = ModelConfig {
            conditioning: Conditioning::Both,
            ..tiny()
        };
        let d: Discriminator<f32> = Discriminator::build(&cfg, 0).unwrap();
        assert_eq!(d.layers()[0].weight.shape()[1], 5);
    }

    #[test]
    fn conditioning_contract() {
        let mut d: Discriminator<f32> = Discriminator::build(&tiny(), 0).unwrap();
        let x = Tensor::zeros(&[2, 3, 50, 50]);
        assert!(matches!(
            d.forward(&x, Some(&[0, 1]), Mode::Eval),
            Err(Error::Mode(_))
        ));
        let cfg = ModelConfig {
            conditioning: Conditioning::Both,
            ..tiny()
        };
        let mut d: Discriminator<f32> = Discriminator::build(&cfg, 0).unwrap();
        assert!(matches!(
            d.forward(&x, None, Mode::Eval),
            Err(Error::Mode(_))
        ));
        assert!(d.forward(&x, Some(&[0, 1]), Mode::Eval).is_ok());
    }

    #[test]
    fn generator_rejects_bad_labels() {
        let mut g: Generator<f32> = Generator::build(&tiny(), 0).unwrap();
        let z = Tensor::zeros(&[2, 8]);
        assert!(matches!(
            g.forward(&z, &[0, 2], Mode::Eval),
            Err(Error::Label { label: 2, .. })
        ));
    }
}
