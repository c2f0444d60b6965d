//! Small fully connected networks with hand-written backpropagation.
//!
//! Layers are `y = W x + b`, with ReLU after every layer but the last. The
//! caller applies the output head (softmax or sigmoid) and hands back the
//! gradient with respect to the raw outputs.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Multilayer perceptron: `input -> hidden x (M-1) -> output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map_or(&[][..], Vec::as_slice)
    }
}

impl Mlp {
    /// `layers` dense layers; hidden layers use He-uniform init and the
    /// output layer is scaled by `output_scale` (small values start the head
    /// near uniform).
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize, output_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(layers >= 1);
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut d = Dense::zeros(w[0], w[1]);
                let bound = (6.0 / w[0].max(1) as f64).sqrt();
                let scale = if i + 2 == dims.len() { output_scale } else { 1.0 };
                for x in &mut d.weights {
                    *x = rng.random_range(-bound..bound) * scale;
                }
                d
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(output);
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn hidden_dim(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].outputs
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&cur, &mut z);
            let next = if i < last { z.iter().map(|v| v.max(0.0)).collect() } else { Vec::new() };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Accumulates `scale * ∂(g·output)/∂θ` into `grad` (flat parameter
    /// order), where `g = grad_output`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], scale: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut delta: Vec<f64> = grad_output.to_vec();
        let mut offset = self.param_count();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let x = &trace.inputs[i];
            let (gw, gb) = grad[offset..offset + layer.param_count()].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                gb[o] += sd;
                for (g, &xv) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(x) {
                    *g += sd * xv;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                    *p += d * w;
                }
            }
            // ReLU of the previous layer
            for (p, &z) in prev.iter_mut().zip(&trace.pre[i - 1]) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Parameters in flat order: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        for (p, &v) in self.params_mut().zip(flat) {
            *p = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Header `M input hidden output`, then each weight row and each bias on
    /// its own line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{} {} {} {}",
            self.layers.len(),
            self.input_dim(),
            self.hidden_dim(),
            self.output_dim()
        )?;
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for l in &self.layers {
            for row in l.weights.chunks_exact(l.inputs) {
                writeln!(w, "{}", join(row))?;
            }
            writeln!(w, "{}", join(&l.bias))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_owned(),
        };
        let mut values: Vec<f64> = Vec::new();
        let mut header: Option<[usize; 4]> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: std::result::Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
                let h = h.map_err(|_| bad(i + 1, "bad network header"))?;
                if h.len() != 4 || h[0] == 0 || (h[0] > 1 && h[2] == 0) {
                    return Err(bad(i + 1, "network header needs `M input hidden output`"));
                }
                header = Some([h[0], h[1], h[2], h[3]]);
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(tok.parse().map_err(|_| bad(i + 1, "bad float"))?);
            }
        }
        let [m, input, hidden, output] = header.ok_or_else(|| bad(1, "missing network header"))?;
        let mut net = Self::zeros(input, hidden, m, output);
        if values.len() != net.param_count() {
            return Err(bad(0, &format!("expected {} parameters, found {}", net.param_count(), values.len())));
        }
        net.set_params(&values);
        Ok(net)
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("Vec write");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Adam on a flat parameter vector. `step` ascends when `ascend` is set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64], ascend: bool) {
        self.t += 1;
        let sign = if ascend { 1.0 } else { -1.0 };
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p += sign * self.learning_rate * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Central finite differences of `f` around `params`.
pub fn finite_difference(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut q = params.to_vec();
    (0..params.len())
        .map(|i| {
            q[i] = params[i] + step;
            let up = f(&q);
            q[i] = params[i] - step;
            let down = f(&q);
            q[i] = params[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = l2(&mut a.iter().copied()).max(l2(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
