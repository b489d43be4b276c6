use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    apply_mask, conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_mask, lstm_backward,
    lstm_forward, maxpool1d_backward, maxpool1d_forward, relu, relu_backward, rnn_backward, rnn_forward, Layer,
    LayerCache, Mode,
};
use super::{NnError, Result, Tensor};

/// An ordered layer stack with a fixed per-sample input shape.
///
/// Dropout masks are drawn from a ChaCha stream keyed by the forward seed
/// and the layer index, so a forward pass is a pure function of
/// `(parameters, input, mode, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    pub rng_seed: u64,
    pub mode: Mode,
    version: u64,
}

/// Intermediates recorded by [`ModelGraph::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    version: u64,
    output_shape: Vec<usize>,
}

/// One gradient per parameter tensor (in [`ModelGraph::params`] order) plus
/// the gradient with respect to the batch input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl ModelGraph {
    /// Validates that each layer accepts its predecessor's output.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, rng_seed: u64) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            layers,
            input_shape,
            rng_seed,
            mode: Mode::Inference,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
            .expect("validated at construction")
    }

    /// Per-sample shapes after every layer, starting with the input.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap()).expect("validated");
            shapes.push(next);
        }
        shapes
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn clone_params(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    /// Replaces all parameters; shapes must match exactly. Invalidates
    /// outstanding forward caches.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut slots: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(Layer::params_mut).collect();
        if slots.len() != values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        if let Some((i, _)) = slots
            .iter()
            .zip(&values)
            .enumerate()
            .find(|(_, (a, b))| !a.same_shape(b))
        {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {i}: expected {:?}, got {:?}",
                slots[i].shape(),
                values[i].shape()
            )));
        }
        for (slot, value) in slots.iter_mut().zip(values) {
            **slot = value;
        }
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(NnError::ShapeMismatch(format!(
                "model expects batch × {:?}, got {:?}",
                self.input_shape,
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass using the graph's own mode and seed.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_seeded(batch, self.rng_seed)
    }

    pub fn forward_seeded(&self, batch: &Tensor, seed: u64) -> Result<(Tensor, ForwardCache)> {
        self.check_input(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let (y, cache) = match layer {
                Layer::Conv1d(l) => (conv1d_forward(&x, l)?, LayerCache::Input(x)),
                Layer::MaxPool1d(p) => {
                    let (y, argmax) = maxpool1d_forward(&x, p.pool, p.stride)?;
                    (
                        y,
                        LayerCache::Pool {
                            input_shape: x.shape().to_vec(),
                            argmax,
                        },
                    )
                }
                Layer::Dense(l) => (dense_forward(&x, l)?, LayerCache::Input(x)),
                Layer::Relu => (relu(&x), LayerCache::Input(x)),
                Layer::Dropout(d) => {
                    let scale = if self.mode == Mode::Training && d.rate > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(index as u64);
                        dropout_mask(x.len(), d.rate, &mut rng)
                    } else {
                        vec![1.0; x.len()]
                    };
                    (apply_mask(&x, &scale), LayerCache::Dropout { scale })
                }
                Layer::Lstm(l) => {
                    let (y, trace) = lstm_forward(&x, l)?;
                    (y, LayerCache::Lstm(trace))
                }
                Layer::Rnn(l) => {
                    let (y, hidden) = rnn_forward(&x, l)?;
                    (y, LayerCache::Rnn { input: x, hidden })
                }
                Layer::Flatten => {
                    let input_shape = x.shape().to_vec();
                    let batch = input_shape[0];
                    let width = x.len() / batch.max(1);
                    (x.reshape(vec![batch, width])?, LayerCache::Flatten { input_shape })
                }
            };
            if !y.is_finite() {
                return Err(NnError::NonFiniteActivation { layer: index });
            }
            caches.push(cache);
            x = y;
        }
        let output_shape = x.shape().to_vec();
        Ok((
            x,
            ForwardCache {
                layers: caches,
                version: self.version,
                output_shape,
            },
        ))
    }

    /// Inference-mode output, ignoring the graph's configured mode.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        if self.mode == Mode::Inference {
            return self.forward(batch).map(|(y, _)| y);
        }
        self.clone().with_mode(Mode::Inference).forward(batch).map(|(y, _)| y)
    }

    /// Backpropagates `output_grad` through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Gradients> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        if output_grad.shape() != cache.output_shape.as_slice() {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.shape(),
                cache.output_shape
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut grad = output_grad.clone();
        for (layer, lcache) in self.layers.iter().zip(&cache.layers).rev() {
            let (dx, dparams) = match (layer, lcache) {
                (Layer::Conv1d(l), LayerCache::Input(x)) => {
                    let (dx, dw, db) = conv1d_backward(x, l, &grad)?;
                    (dx, vec![dw, db])
                }
                (Layer::MaxPool1d(_), LayerCache::Pool { input_shape, argmax }) => {
                    (maxpool1d_backward(input_shape, argmax, &grad), Vec::new())
                }
                (Layer::Dense(l), LayerCache::Input(x)) => {
                    let (dx, dw, db) = dense_backward(x, l, &grad);
                    (dx, vec![dw, db])
                }
                (Layer::Relu, LayerCache::Input(x)) => (relu_backward(x, &grad), Vec::new()),
                (Layer::Dropout(_), LayerCache::Dropout { scale }) => (apply_mask(&grad, scale), Vec::new()),
                (Layer::Lstm(l), LayerCache::Lstm(trace)) => lstm_backward(l, trace, &grad),
                (Layer::Rnn(l), LayerCache::Rnn { input, hidden }) => rnn_backward(l, input, hidden, &grad),
                (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                    (grad.clone().reshape(input_shape.clone())?, Vec::new())
                }
                _ => return Err(NnError::StaleCache),
            };
            per_layer.push(dparams);
            grad = dx;
        }
        per_layer.reverse();
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: grad,
        })
    }
}
