//! Binary checkpoint: everything needed to resume training bit-exactly.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SSCG" | version u32 | dtype u8
//! settings: u32 length + UTF-8 key=value lines (model, plan, loss, epoch)
//! manifest: u32 count, then per tensor: name (u32 length + UTF-8), dtype u8,
//!           rank u32, dims u64…, payload offset u64, payload bytes u64
//! payload:  u64 length + raw tensor data
//! "OPT\0"   per optimizer (generator, discriminator): step u64, lr, β1, β2, ε as f64, moment count u32
//! "RNG\0"   ChaCha seed [u8; 32], stream u64, word position u128
//! "TRC\0"   u64 count, per record: epoch u64, step u64, 8 × f64
//! "END\0"
//! ```
//!
//! A file is parsed completely before any state is built from it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;

use super::loss::{AdvForm, LossConfig};
use super::optim::Adam;
use super::schedule::TrainPlan;
use super::trainer::{StepRecord, Trainer};
use crate::error::{Error, Result};
use crate::models::{Conditioning, ModelConfig};
use crate::nn::{SeededRng, StateMap};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub loss: LossConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub tensors: StateMap<T>,
    pub g_opt: Adam<T>,
    pub d_opt: Adam<T>,
    pub rng: SeededRng,
    pub trace: Vec<StepRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// `key=value` lines describing a run; keys mirror the command-line flags.
pub fn settings_text(model: &ModelConfig, plan: &TrainPlan, loss: &LossConfig) -> String {
    let pairs: Vec<(&str, String)> = vec![
        ("omega", model.omega.to_string()),
        ("latent-dim", model.latent_dim.to_string()),
        ("classes", model.num_classes.to_string()),
        ("channels", model.channels.to_string()),
        ("height", model.height.to_string()),
        ("width", model.width.to_string()),
        ("leaky-slope", model.leaky_slope.to_string()),
        ("conditioning", model.conditioning.as_str().to_string()),
        ("base-filters", model.base_filters.to_string()),
        ("epochs", plan.epochs.to_string()),
        ("batch", plan.batch.to_string()),
        ("lr", plan.lr0.to_string()),
        ("decay-start", plan.decay_start.to_string()),
        ("seed", plan.seed.to_string()),
        ("sample-every", plan.sample_every.to_string()),
        ("checkpoint-every", plan.checkpoint_every.to_string()),
        ("adv-form", loss.adv_form.as_str().to_string()),
        ("lambda-gp", loss.lambda_gp.to_string()),
        ("lambda-cls", loss.lambda_cls.to_string()),
        ("classify-fakes", loss.classify_fakes.to_string()),
    ];
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_settings(text: &str) -> Result<(ModelConfig, TrainPlan, LossConfig, usize)> {
    let map: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| bad(format!("malformed settings line {l:?}")))
        })
        .collect::<Result<_>>()?;
    fn get<V: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<V> {
        map.get(key)
            .ok_or_else(|| bad(format!("settings lack {key}")))?
            .parse()
            .map_err(|_| bad(format!("settings value for {key} does not parse")))
    }
    let model = ModelConfig {
        omega: get(&map, "omega")?,
        latent_dim: get(&map, "latent-dim")?,
        num_classes: get(&map, "classes")?,
        channels: get(&map, "channels")?,
        height: get(&map, "height")?,
        width: get(&map, "width")?,
        leaky_slope: get(&map, "leaky-slope")?,
        conditioning: Conditioning::parse(&get::<String>(&map, "conditioning")?)
            .map_err(|e| bad(e.to_string()))?,
        base_filters: get(&map, "base-filters")?,
    };
    let plan = TrainPlan {
        epochs: get(&map, "epochs")?,
        batch: get(&map, "batch")?,
        lr0: get(&map, "lr")?,
        decay_start: get(&map, "decay-start")?,
        seed: get(&map, "seed")?,
        sample_every: get(&map, "sample-every")?,
        checkpoint_every: get(&map, "checkpoint-every")?,
    };
    let loss = LossConfig {
        adv_form: AdvForm::parse(&get::<String>(&map, "adv-form")?)
            .map_err(|e| bad(e.to_string()))?,
        lambda_gp: get(&map, "lambda-gp")?,
        lambda_cls: get(&map, "lambda-cls")?,
        classify_fakes: get(&map, "classify-fakes")?,
    };
    Ok((model, plan, loss, get(&map, "epoch")?))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("size does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }

    fn tag(&mut self, tag: &[u8; 4]) -> Result<()> {
        if &self.array::<4>()? != tag {
            return Err(bad(format!(
                "missing {} block",
                String::from_utf8_lossy(&tag[..3])
            )));
        }
        Ok(())
    }
}

fn moment_name(which: &str, kind: &str, i: usize) -> String {
    format!("opt.{which}.{kind}.{i:04}")
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(trainer: &Trainer<T>) -> Self {
        let mut tensors = StateMap::new();
        trainer.generator.save(&mut tensors);
        trainer.discriminator.save(&mut tensors);
        Checkpoint {
            model: trainer.model_config().clone(),
            plan: trainer.plan,
            loss: trainer.loss,
            epoch: trainer.epoch,
            tensors,
            g_opt: trainer.g_opt.clone(),
            d_opt: trainer.d_opt.clone(),
            rng: trainer.rng.clone(),
            trace: trainer.trace.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = self.tensors.clone();
        for (which, opt) in [("g", &self.g_opt), ("d", &self.d_opt)] {
            for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
                for (i, m) in moments.iter().enumerate() {
                    let t = Tensor::from_vec(m.clone(), &[m.len()]).expect("vector shape");
                    tensors.insert(moment_name(which, kind, i), t);
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(T::DTYPE.code());
        let mut settings = settings_text(&self.model, &self.plan, &self.loss);
        settings.push_str(&format!("epoch={}\n", self.epoch));
        put_str(&mut out, &settings);

        let mut payload = Vec::new();
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in &tensors {
            put_str(&mut out, name);
            out.push(T::DTYPE.code());
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            let start = payload.len();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            put_u64(&mut out, start as u64);
            put_u64(&mut out, (payload.len() - start) as u64);
        }
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);

        out.extend_from_slice(b"OPT\0");
        for opt in [&self.g_opt, &self.d_opt] {
            put_u64(&mut out, opt.step);
            for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                put_f64(&mut out, v);
            }
            put_u32(&mut out, opt.m.len() as u32);
        }

        out.extend_from_slice(b"RNG\0");
        out.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut out, self.rng.get_stream());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());

        out.extend_from_slice(b"TRC\0");
        put_u64(&mut out, self.trace.len() as u64);
        for r in &self.trace {
            put_u64(&mut out, r.epoch as u64);
            put_u64(&mut out, r.step as u64);
            for v in [
                r.lr, r.d_loss, r.d_adv, r.d_cls, r.d_gp, r.g_loss, r.g_adv, r.g_cls,
            ] {
                put_f64(&mut out, v);
            }
        }
        out.extend_from_slice(b"END\0");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if &r
            .array::<4>()
            .map_err(|_| bad("not a checkpoint (too short)"))?
            != CHECKPOINT_MAGIC
        {
            return Err(bad("not a checkpoint (bad magic bytes)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| bad("unknown element type"))?;
        if dtype != T::DTYPE {
            return Err(bad(format!(
                "checkpoint holds {dtype:?} tensors, expected {:?}",
                T::DTYPE
            )));
        }
        let (model, plan, loss, epoch) = parse_settings(&r.string()?)?;

        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            if DType::from_code(r.u8()?) != Some(T::DTYPE) {
                return Err(bad(format!("tensor {name} has a different element type")));
            }
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
            let (offset, len) = (r.usize()?, r.usize()?);
            manifest.push((name, shape, offset, len));
        }
        let payload_len = r.usize()?;
        let payload = r.take(payload_len)?;
        let mut tensors = StateMap::new();
        let size = T::DTYPE.size();
        for (name, shape, offset, len) in manifest {
            let numel: usize = shape.iter().product();
            if len != numel * size || offset.checked_add(len).is_none_or(|e| e > payload.len()) {
                return Err(bad(format!(
                    "tensor {name} payload is inconsistent with its shape"
                )));
            }
            let data = payload[offset..offset + len]
                .chunks_exact(size)
                .map(T::read_le)
                .collect();
            tensors.insert(name, Tensor::from_vec(data, &shape)?);
        }

        r.tag(b"OPT\0")?;
        let mut opts = Vec::with_capacity(2);
        for which in ["g", "d"] {
            let step = r.u64()?;
            let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let n = r.u32()? as usize;
            let mut take_moments = |kind: &str| -> Result<Vec<Vec<T>>> {
                (0..n)
                    .map(|i| {
                        let name = moment_name(which, kind, i);
                        tensors
                            .remove(&name)
                            .map(|t| t.to_vec())
                            .ok_or_else(|| bad(format!("missing {name}")))
                    })
                    .collect()
            };
            let m = take_moments("m")?;
            let v = take_moments("v")?;
            opts.push(Adam {
                beta1,
                beta2,
                eps,
                lr,
                step,
                m,
                v,
            });
        }
        let d_opt = opts.pop().expect("two optimizers");
        let g_opt = opts.pop().expect("two optimizers");

        r.tag(b"RNG\0")?;
        let seed = r.array::<32>()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let mut rng = SeededRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        r.tag(b"TRC\0")?;
        let n = r.usize()?;
        let mut trace = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let (epoch, step) = (r.usize()?, r.usize()?);
            let mut v = [0.0; 8];
            for x in &mut v {
                *x = r.f64()?;
            }
            trace.push(StepRecord {
                epoch,
                step,
                lr: v[0],
                d_loss: v[1],
                d_adv: v[2],
                d_cls: v[3],
                d_gp: v[4],
                g_loss: v[5],
                g_adv: v[6],
                g_cls: v[7],
            });
        }
        r.tag(b"END\0")?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after the end marker"));
        }
        Ok(Checkpoint {
            model,
            plan,
            loss,
            epoch,
            tensors,
            g_opt,
            d_opt,
            rng,
            trace,
        })
    }

    /// Writes to a sibling temporary file first so a crash never leaves a half-written checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was made for `model`.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if &self.model != model {
            return Err(bad(format!(
                "checkpoint was trained with {:?}, current configuration is {:?}",
                self.model, model
            )));
        }
        Ok(())
    }

    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let mut trainer =
            Trainer::new(&self.model, self.plan, self.loss).map_err(|e| bad(e.to_string()))?;
        trainer.generator.load(&self.tensors)?;
        trainer.discriminator.load(&self.tensors)?;
        for (opt, params) in [
            (&self.g_opt, trainer.generator.params()),
            (&self.d_opt, trainer.discriminator.params()),
        ] {
            let fits = opt.m.is_empty()
                || (opt.m.len() == params.len()
                    && opt.m.iter().zip(&params).all(|(m, p)| m.len() == p.numel()));
            if !fits || opt.m.len() != opt.v.len() {
                return Err(bad("optimizer moments do not match the model parameters"));
            }
        }
        trainer.g_opt = self.g_opt;
        trainer.d_opt = self.d_opt;
        trainer.rng = self.rng;
        trainer.epoch = self.epoch;
        trainer.trace = self.trace;
        Ok(trainer)
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Checkpoint::capture(self).write(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Checkpoint::read(path)?.into_trainer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trainer() -> Trainer<f64> {
        let model = ModelConfig {
            base_filters: 1,
            latent_dim: 4,
            height: 8,
            width: 8,
            ..Default::default()
        };
        Trainer::new(&model, TrainPlan::default(), LossConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let trainer = tiny_trainer();
        let ck = Checkpoint::capture(&trainer);
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let restored = back.into_trainer().unwrap();
        for (a, b) in trainer
            .generator
            .params()
            .iter()
            .zip(restored.generator.params())
        {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = Checkpoint::capture(&tiny_trainer()).to_bytes();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bad_magic),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(
            matches!(Checkpoint::<f64>::from_bytes(&bad_version), Err(Error::Checkpoint(m)) if m.contains("version"))
        );
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }
}
