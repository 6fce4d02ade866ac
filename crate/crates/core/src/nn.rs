//! Parameter storage and the small set of layers the networks are built from.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named, ordered collection of trainable tensors.
///
/// Layers hold clones of the tensors registered here; updating a [`Var`]
/// in place is therefore visible to every layer that uses it.
#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    vars: Vec<Var>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.names.len())
            .field("scalars", &self.count())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            names: Vec::new(),
            vars: Vec::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: String, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.names.contains(&name) {
            return Err(Error::Construction {
                layer: name,
                msg: "duplicate parameter name".into(),
            });
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.names.push(name);
        self.vars.push(var);
        Ok(handle)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.register(name.into(), data, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name.into(), vec![value; n], shape)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Exact number of trainable scalars.
    pub fn count(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.names.iter().map(String::as_str).zip(&self.vars)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.names.iter().position(|n| n == name).map(|i| &self.vars[i])
    }

    /// Overwrites one parameter in place, keeping its identity.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Copies every value from `other`, matching by name.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Validation("parameter sets differ".into()));
        }
        for (dst, src) in self.vars.iter().zip(&other.vars) {
            dst.set(&src.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Draws a fresh per-module RNG so that adding a module never shifts the
/// initial values of the modules created after it.
pub fn child_rng(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(rng.gen())
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.normal(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], std, rng)?;
        let bias = bias
            .then(|| store.constant(format!("{name}.bias"), &[out_ch], 0.0))
            .transpose()?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?,
            None => y,
        })
    }
}

/// Transposed convolution; weight layout `(in, out, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.normal(format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel], std, rng)?;
        let bias = bias
            .then(|| store.constant(format!("{name}.bias"), &[out_ch], 0.0))
            .transpose()?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, self.padding, 0, self.stride, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?,
            None => y,
        })
    }
}

/// Per-sample, per-channel normalisation over the spatial axes with a
/// learnable scale and shift.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.gamma"), &[1, channels, 1, 1], 1.0)?,
            beta: store.constant(format!("{name}.beta"), &[1, channels, 1, 1], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let flat = x.reshape((b, c, h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centred = flat.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .reshape((b, c, h, w))?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

/// Affine map applied to the last axis; weight layout `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.normal(format!("{name}.weight"), &[in_dim, out_dim], std, rng)?;
        let bias = bias
            .then(|| store.constant(format!("{name}.bias"), &[out_dim], 0.0))
            .transpose()?;
        Ok(Self { weight, bias })
    }

    /// Wraps existing tensors; used to build projections with known values.
    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_conv_parameter_count() {
        let mut store = ParamStore::new(DType::F32, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Conv2d::new(&mut store, "c", 1, 8, 3, 1, 1, true, 0.02, &mut rng).unwrap();
        assert_eq!(store.count(), 80);
        assert_eq!(ParamStore::new(DType::F32, Device::Cpu).count(), 0);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let norm = InstanceNorm::new(&mut store, "n", 2).unwrap();
        let x = Tensor::arange(0f64, 32.0, &Device::Cpu).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let y = norm.forward(&x).unwrap().reshape((2, 16)).unwrap();
        let mean = y.mean(1).unwrap().to_vec1::<f64>().unwrap();
        let var = y.sqr().unwrap().mean(1).unwrap().to_vec1::<f64>().unwrap();
        for (m, v) in mean.iter().zip(&var) {
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
        let y = sigmoid(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new(DType::F32, Device::Cpu);
        store.constant("a", &[1], 0.0).unwrap();
        assert!(store.constant("a", &[1], 0.0).is_err());
    }
}
