use crate::error::{Error, Result};
use crate::ndcore::{gemm_slices, Rng, Scalar, Tensor};

/// Convolution kernel extent (square).
pub const KERNEL: usize = 3;
/// Max-pooling window extent (square, stride equal to the window).
pub const POOL: usize = 2;

fn glorot_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.uniform_range(-limit, limit)))
}

fn take_cache<'a, C>(cache: &'a Option<C>, name: &'static str) -> Result<&'a C> {
    cache.as_ref().ok_or(Error::BackwardBeforeForward(name))
}

/// Fully connected layer `y = x W^T + b` over rows of `x`.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let weight = glorot_uniform(&[outputs, inputs], inputs, outputs, rng);
        Self::from_parts(weight, Tensor::zeros([outputs])).expect("consistent shapes")
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::from_parts(Tensor::zeros([outputs, inputs]), Tensor::zeros([outputs])).expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Shape(format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape())));
        }
        Ok(Dense {
            grad_weight: Tensor::zeros(weight.shape().to_vec()),
            grad_bias: Tensor::zeros(bias.shape().to_vec()),
            weight,
            bias,
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.rows();
        if x.row_len() != self.inputs() {
            return Err(Error::Shape(format!(
                "dense layer expects rows of {}, got input {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        let out = self.outputs();
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(self.bias.data());
        }
        gemm_slices(n, self.inputs(), out, T::one(), x.data(), false, self.weight.data(), true, T::one(), &mut y);
        Tensor::new([n, out], y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&self.input, "dense")?;
        let n = x.rows();
        let (inp, out) = (self.inputs(), self.outputs());
        if dy.shape() != [n, out] {
            return Err(Error::Shape(format!("dense backward expects [{n}, {out}], got {:?}", dy.shape())));
        }
        gemm_slices(out, n, inp, T::one(), dy.data(), true, x.data(), false, T::one(), self.grad_weight.data_mut());
        for r in 0..n {
            for (g, &d) in self.grad_bias.data_mut().iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); n * inp];
        gemm_slices(n, out, inp, T::one(), dy.data(), false, self.weight.data(), false, T::zero(), &mut dx);
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Valid (unpadded), stride-1, 3x3 convolution over `[N, C, H, W]` input.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        let area = KERNEL * KERNEL;
        let weight = glorot_uniform(
            &[out_channels, in_channels, KERNEL, KERNEL],
            in_channels * area,
            out_channels * area,
            rng,
        );
        Self::from_parts(weight, Tensor::zeros([out_channels])).expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match *weight.shape() {
            [oc, _, KERNEL, KERNEL] if bias.shape() == [oc] => Ok(Conv2d {
                grad_weight: Tensor::zeros(weight.shape().to_vec()),
                grad_bias: Tensor::zeros([oc]),
                weight,
                bias,
                input: None,
            }),
            _ => Err(Error::Shape(format!(
                "conv weight {:?} / bias {:?} are not [oc, ic, 3, 3] / [oc]",
                weight.shape(),
                bias.shape()
            ))),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        match *x.shape() {
            [n, c, h, w] if c == self.in_channels() && h >= KERNEL && w >= KERNEL => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!(
                "conv expects [N, {}, H>=3, W>=3], got {:?}",
                self.in_channels(),
                x.shape()
            ))),
        }
    }

    fn im2col(sample: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
        let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
        let plane = ho * wo;
        for ch in 0..c {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (ch * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let src = &sample[ch * h * w + (oy + ky) * w + kx..][..wo];
                        dst[oy * wo..(oy + 1) * wo].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im(cols: &[T], c: usize, h: usize, w: usize, sample: &mut [T]) {
        let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
        let plane = ho * wo;
        for ch in 0..c {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (ch * KERNEL + ky) * KERNEL + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let dst = &mut sample[ch * h * w + (oy + ky) * w + kx..][..wo];
                        for (d, &s) in dst.iter_mut().zip(&src[oy * wo..(oy + 1) * wo]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.geometry(x)?;
        let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
        let (oc, patch, plane) = (self.out_channels(), c * KERNEL * KERNEL, ho * wo);
        let mut cols = vec![T::zero(); patch * plane];
        let mut out = vec![T::zero(); n * oc * plane];
        for s in 0..n {
            Self::im2col(x.row(s), c, h, w, &mut cols);
            let dst = &mut out[s * oc * plane..(s + 1) * oc * plane];
            for (o, &b) in self.bias.data().iter().enumerate() {
                dst[o * plane..(o + 1) * plane].fill(b);
            }
            gemm_slices(oc, patch, plane, T::one(), self.weight.data(), false, &cols, false, T::one(), dst);
        }
        Tensor::new([n, oc, ho, wo], out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&self.input, "conv2d")?;
        let (n, c, h, w) = self.geometry(x)?;
        let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
        let (oc, patch, plane) = (self.out_channels(), c * KERNEL * KERNEL, ho * wo);
        if dy.shape() != [n, oc, ho, wo] {
            return Err(Error::Shape(format!("conv backward expects [{n}, {oc}, {ho}, {wo}], got {:?}", dy.shape())));
        }
        let mut cols = vec![T::zero(); patch * plane];
        let mut dcols = vec![T::zero(); patch * plane];
        let mut dx = Tensor::zeros(x.shape().to_vec());
        for s in 0..n {
            Self::im2col(x.row(s), c, h, w, &mut cols);
            let g = dy.row(s);
            gemm_slices(oc, plane, patch, T::one(), g, false, &cols, true, T::one(), self.grad_weight.data_mut());
            for (o, gb) in self.grad_bias.data_mut().iter_mut().enumerate() {
                *gb += g[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
            gemm_slices(patch, oc, plane, T::one(), self.weight.data(), true, g, false, T::zero(), &mut dcols);
            Self::col2im(&dcols, c, h, w, dx.row_mut(s));
        }
        Ok(dx)
    }
}

/// 2x2 max pooling with stride 2 over `[N, C, H, W]`; odd trailing rows or
/// columns are dropped.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    fn pool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let [n, c, h, w] = *x.shape() else {
            return Err(Error::Shape(format!("max-pool expects [N, C, H, W], got {:?}", x.shape())));
        };
        let (ho, wo) = (h / POOL, w / POOL);
        if ho == 0 || wo == 0 {
            return Err(Error::Shape(format!("max-pool input {:?} smaller than the window", x.shape())));
        }
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        let src = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * POOL * w + ox * POOL;
                    for dy in 0..POOL {
                        for dx in 0..POOL {
                            let idx = base + (oy * POOL + dy) * w + ox * POOL + dx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::new([n, c, ho, wo], out)?, arg))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::pool(x).map(|(y, _)| y)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = Self::pool(x)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = take_cache(&self.cache, "max-pool")?;
        if dy.len() != arg.len() {
            return Err(Error::Shape(format!("max-pool backward got {:?}", dy.shape())));
        }
        let mut dx = Tensor::zeros(shape.clone());
        for (&i, &g) in arg.iter().zip(dy.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

/// Inverted dropout: in training, survivors are scaled by `1 / keep` so the
/// eval-mode identity matches the training expectation.
#[derive(Clone, Debug)]
pub struct Dropout<T: Scalar = f32> {
    rate: f64,
    // Some(None): last forward ran in eval mode.
    mask: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor<T>, rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let Some(rng) = rng else {
            self.mask = Some(None);
            return Ok(x.clone());
        };
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.uniform() < keep { scale } else { T::zero() })
            .collect();
        let y = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())?;
        self.mask = Some(Some(mask));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match take_cache(&self.mask, "dropout")? {
            None => Ok(dy.clone()),
            Some(mask) if mask.len() == dy.len() => {
                Tensor::new(dy.shape().to_vec(), dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect())
            }
            Some(_) => Err(Error::Shape(format!("dropout backward got {:?}", dy.shape()))),
        }
    }
}

/// Elementwise nonlinearities, each caching what its derivative needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    /// Row-wise softmax over the trailing extent.
    Softmax,
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.map(sigmoid),
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Softmax => {
                let mut y = x.clone();
                for r in 0..y.rows() {
                    let row = y.row_mut(r);
                    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let mut total = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / total;
                    }
                }
                y
            }
        }
    }

    /// Input gradient given the forward input `x`, output `y` and upstream `dy`.
    fn gradient<T: Scalar>(self, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Tanh => y.zip_with(dy, |y, g| g * (T::one() - y * y)),
            Activation::Sigmoid => y.zip_with(dy, |y, g| g * y * (T::one() - y)),
            Activation::Relu => x.zip_with(dy, |x, g| if x > T::zero() { g } else { T::zero() }),
            Activation::Softmax => {
                y.expect_same_shape(dy, "softmax backward")?;
                let mut dx = dy.clone();
                for r in 0..y.rows() {
                    let (s, g) = (y.row(r), dy.row(r));
                    let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for ((d, &si), &gi) in dx.row_mut(r).iter_mut().zip(s).zip(g) {
                        *d = si * (gi - dot);
                    }
                }
                Ok(dx)
            }
        }
    }
}

/// One element of a [`Sequential`](super::Sequential) stack.
#[derive(Clone, Debug)]
pub enum Layer<T: Scalar = f32> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout<T>),
    /// Collapses `[N, ...]` to `[N, rest]`.
    Flatten(Option<Vec<usize>>),
    Activation(Activation, Option<(Tensor<T>, Tensor<T>)>),
}

impl<T: Scalar> Layer<T> {
    pub fn activation(kind: Activation) -> Self {
        Layer::Activation(kind, None)
    }

    pub fn flatten() -> Self {
        Layer::Flatten(None)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Activation(Activation::Tanh, _) => "tanh",
            Layer::Activation(Activation::Sigmoid, _) => "sigmoid",
            Layer::Activation(Activation::Relu, _) => "relu",
            Layer::Activation(Activation::Softmax, _) => "softmax",
        }
    }

    /// Eval-mode forward pass that leaves no cache behind.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.infer(x),
            Layer::Conv2d(l) => l.infer(x),
            Layer::MaxPool2d(l) => l.infer(x),
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Flatten(_) => x.clone().reshape([x.rows(), x.row_len()]),
            Layer::Activation(kind, _) => Ok(kind.apply(x)),
        }
    }

    /// Forward pass that caches for [`Layer::backward`]. Passing an `rng`
    /// selects training mode (dropout active).
    pub fn forward(&mut self, x: &Tensor<T>, rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, rng),
            Layer::Flatten(cache) => {
                *cache = Some(x.shape().to_vec());
                x.clone().reshape([x.rows(), x.row_len()])
            }
            Layer::Activation(kind, cache) => {
                let y = kind.apply(x);
                *cache = Some((x.clone(), y.clone()));
                Ok(y)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(dy),
            Layer::Conv2d(l) => l.backward(dy),
            Layer::MaxPool2d(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
            Layer::Flatten(cache) => {
                let shape = take_cache(cache, "flatten")?;
                dy.clone().reshape(shape.clone())
            }
            Layer::Activation(kind, cache) => {
                let name = self_kind_name(*kind);
                let (x, y) = take_cache(cache, name)?;
                kind.gradient(x, y, dy)
            }
        }
    }

    /// `(name, parameter, gradient)` triples in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Dense(l) => vec![("weight", &mut l.weight, &mut l.grad_weight), ("bias", &mut l.bias, &mut l.grad_bias)],
            Layer::Conv2d(l) => vec![("weight", &mut l.weight, &mut l.grad_weight), ("bias", &mut l.bias, &mut l.grad_bias)],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, _, g) in self.params_mut() {
            g.fill(T::zero());
        }
    }
}

fn self_kind_name(kind: Activation) -> &'static str {
    match kind {
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
        Activation::Relu => "relu",
        Activation::Softmax => "softmax",
    }
}
