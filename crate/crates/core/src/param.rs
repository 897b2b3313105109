//! Named trainable parameters and the visitor trait that exposes them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Gradients, Tensor, TensorId};

/// How a parameter's initial values were drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Zeros,
    Constant(f64),
    /// `δ(s,t) / groups` over a `[C, groups, C]` mixing tensor.
    GroupMixIdentity { groups: usize },
}

#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    name: String,
    tensor: Tensor<T>,
    grad: Option<Vec<T>>,
    init: Init,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>, init: Init) -> Self {
        let tensor = if tensor.requires_grad() && tensor.node().is_none() {
            tensor
        } else {
            tensor.to_variable()
        };
        Parameter {
            name: name.into(),
            tensor,
            grad: None,
            init,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn init(&self) -> Init {
        self.init
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds this parameter's entry of `grads` (if any) into its gradient buffer.
    pub fn accumulate_grad(&mut self, grads: &Gradients<T>) {
        if let Some(g) = grads.get(&self.tensor) {
            match &mut self.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                None => self.grad = Some(g.to_vec()),
            }
        }
    }

    /// Replaces the values, keeping identity so recorded gradients stay addressable.
    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::shape(
                "set_data",
                format!(
                    "parameter `{}` has {} elements, got {}",
                    self.name,
                    self.numel(),
                    data.len()
                ),
            ));
        }
        self.tensor = Tensor::leaf_with_id(self.tensor.id(), data, self.shape().to_vec());
        Ok(())
    }

    /// Swaps in an externally created leaf of the same shape. Used by the
    /// finite-difference checker to bind its own variables.
    pub fn bind(&mut self, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.shape() {
            return Err(Error::shape(
                "bind",
                format!(
                    "parameter `{}` is {:?}, got {:?}",
                    self.name,
                    self.shape(),
                    t.shape()
                ),
            ));
        }
        self.tensor = t;
        Ok(())
    }

    pub fn id(&self) -> TensorId {
        self.tensor.id()
    }
}

/// Anything owning parameters. Visitation order is the registry order.
pub trait Module<T: Element> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.numel());
        n
    }

    fn param_tensors(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|p| p.tensor().clone()).collect()
    }

    /// Binds `tensors` to the parameters in registry order.
    fn bind_params(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        let mut it = tensors.iter();
        let mut res = Ok(());
        self.visit_params_mut(&mut |p| {
            if res.is_err() {
                return;
            }
            res = match it.next() {
                Some(t) => p.bind(t.clone()),
                None => Err(Error::Contract("too few tensors to bind".into())),
            };
        });
        res?;
        if it.next().is_some() {
            return Err(Error::Contract("too many tensors to bind".into()));
        }
        Ok(())
    }

    fn accumulate_grads(&mut self, grads: &Gradients<T>) {
        self.visit_params_mut(&mut |p| p.accumulate_grad(grads));
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }
}

impl<T: Element> Module<T> for Parameter<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(self)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(self)
    }
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        if let Some(m) = self {
            m.visit_params(f)
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        if let Some(m) = self {
            m.visit_params_mut(f)
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.iter().for_each(|m| m.visit_params(f))
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.iter_mut().for_each(|m| m.visit_params_mut(f))
    }
}

/// View of a module restricted to parameters that currently hold a gradient,
/// i.e. the ones the last objective actually reached.
pub struct WithGrad<'m, T: Element>(pub &'m mut dyn Module<T>);

impl<T: Element> Module<T> for WithGrad<'_, T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.0.visit_params(&mut |p| {
            if p.grad().is_some() {
                f(p)
            }
        })
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.0.visit_params_mut(&mut |p| {
            if p.grad().is_some() {
                f(p)
            }
        })
    }
}

/// Deterministic parameter construction from a seeded stream.
pub struct ParamFactory {
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamFactory {
    pub fn new(seed: u64) -> Self {
        ParamFactory {
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `segment` appended to the name prefix.
    pub fn scoped<R>(&mut self, segment: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(segment.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    pub fn make<T: Element>(&mut self, name: &str, shape: &[usize], init: Init) -> Parameter<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(self.rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::from_f64(c); n],
            Init::GroupMixIdentity { groups } => {
                let [c_out, g, c_in] = *shape else {
                    panic!("GroupMixIdentity needs a rank-3 shape, got {shape:?}")
                };
                debug_assert_eq!(g, groups);
                let mut d = vec![T::zero(); n];
                let v = T::from_f64(1.0 / groups as f64);
                for s in 0..c_out.min(c_in) {
                    for j in 0..g {
                        d[(s * g + j) * c_in + s] = v;
                    }
                }
                d
            }
        };
        let t = Tensor::variable(data, shape).expect("factory shapes are nonzero");
        Parameter::new(self.full_name(name), t, init)
    }

    /// Kaiming-initialized conv weight `[out, in_per_group, kh, kw]`.
    pub fn conv_weight<T: Element>(&mut self, name: &str, shape: [usize; 4]) -> Parameter<T> {
        let fan_in = shape[1] * shape[2] * shape[3];
        self.make(name, &shape, Init::KaimingUniform { fan_in })
    }

    pub fn zeros<T: Element>(&mut self, name: &str, shape: &[usize]) -> Parameter<T> {
        self.make(name, shape, Init::Zeros)
    }
}

/// Overwrites every parameter with uniform values in `±scale`. Used to move
/// zero-initialized heads off degenerate points in tests and benchmarks.
pub fn randomize_params<T: Element>(m: &mut dyn Module<T>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.visit_params_mut(&mut |p| {
        let data = (0..p.numel())
            .map(|_| T::from_f64(rng.random_range(-scale..scale)))
            .collect();
        p.set_data(data).expect("same length");
    });
}
