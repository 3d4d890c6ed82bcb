use rand::Rng;

use crate::error::Result;
use crate::nn::{BatchNorm, Dropout, Linear, Mode, Param, Relu, Tensor};

/// Linear layer followed by batch normalization, ReLU and dropout.
#[derive(Debug, Clone)]
pub struct Stage {
    pub linear: Linear,
    pub bn: BatchNorm,
    relu: Relu,
    dropout: Dropout,
}

impl Stage {
    pub fn init(in_features: usize, out_features: usize, dropout_rate: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            linear: Linear::init(in_features, out_features, rng),
            bn: BatchNorm::new(out_features),
            relu: Relu::default(),
            dropout: Dropout::new(dropout_rate)?,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
        let z = self.linear.forward(x)?;
        let z = self.bn.forward(&z, mode)?;
        let z = self.relu.forward(&z);
        Ok(self.dropout.forward(&z, mode, rng))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.dropout.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.linear.backward(&g)
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.linear.apply(x)?;
        Ok(Relu::apply(&self.bn.apply(&z)?))
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout.rate()
    }

    pub(crate) fn set_dropout(&mut self, rate: f64) -> Result<()> {
        self.dropout = Dropout::new(rate)?;
        Ok(())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.linear.params_mut().into_iter().chain(self.bn.params_mut())
    }
}

/// `J*C -> F` input stage, `R` residual `F -> F` stages with identity skips,
/// and a linear `F -> J*3` output producing the residual pose.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    pub input: Stage,
    pub blocks: Vec<Stage>,
    pub output: Linear,
}

impl ResidualNet {
    pub fn init(
        in_features: usize,
        features: usize,
        blocks: usize,
        out_features: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input = Stage::init(in_features, features, dropout_rate, rng)?;
        let blocks = (0..blocks)
            .map(|_| Stage::init(features, features, dropout_rate, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::init(features, out_features, rng);
        Ok(Self { input, blocks, output })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
        let mut h = self.input.forward(x, mode, rng)?;
        for block in &mut self.blocks {
            let z = block.forward(&h, mode, rng)?;
            h.add_assign(&z);
        }
        self.output.forward(&h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = self.output.backward(grad)?;
        for block in self.blocks.iter_mut().rev() {
            let through = block.backward(&g)?;
            g.add_assign(&through);
        }
        self.input.backward(&g)?;
        Ok(())
    }

    /// Inference pass from running statistics; dropout is the identity.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.input.apply(x)?;
        for block in &self.blocks {
            let z = block.apply(&h)?;
            h.add_assign(&z);
        }
        self.output.apply(&h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut params: Vec<&mut Param> = self.input.params_mut().collect();
        for b in &mut self.blocks {
            params.extend(b.params_mut());
        }
        params.extend(self.output.params_mut());
        params
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn parameter_count(&self) -> usize {
        let stage = |s: &Stage| s.linear.weight.value.len() + s.linear.bias.value.len() + 2 * s.bn.features();
        stage(&self.input)
            + self.blocks.iter().map(stage).sum::<usize>()
            + self.output.weight.value.len()
            + self.output.bias.value.len()
    }

    /// Named tensors in serialization order, including batch-norm running
    /// statistics.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn stage<'a>(prefix: &str, s: &'a Stage, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
            let (w, b) = (&s.linear.weight.value, &s.linear.bias.value);
            let f = s.bn.features();
            out.push((format!("{prefix}.linear.weight"), w.shape().to_vec(), w.data()));
            out.push((format!("{prefix}.linear.bias"), b.shape().to_vec(), b.data()));
            out.push((format!("{prefix}.bn.gamma"), vec![f], s.bn.gamma.value.data()));
            out.push((format!("{prefix}.bn.beta"), vec![f], s.bn.beta.value.data()));
            out.push((format!("{prefix}.bn.running_mean"), vec![f], &s.bn.running_mean));
            out.push((format!("{prefix}.bn.running_var"), vec![f], &s.bn.running_var));
        }
        let mut out = Vec::new();
        stage("input", &self.input, &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            stage(&format!("blocks.{i}"), b, &mut out);
        }
        let (w, b) = (&self.output.weight.value, &self.output.bias.value);
        out.push(("output.weight".into(), w.shape().to_vec(), w.data()));
        out.push(("output.bias".into(), b.shape().to_vec(), b.data()));
        out
    }

    /// Mutable views matching [`ResidualNet::named_tensors`] order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        fn stage<'a>(s: &'a mut Stage, out: &mut Vec<&'a mut [f64]>) {
            out.push(s.linear.weight.value.data_mut());
            out.push(s.linear.bias.value.data_mut());
            out.push(s.bn.gamma.value.data_mut());
            out.push(s.bn.beta.value.data_mut());
            out.push(&mut s.bn.running_mean);
            out.push(&mut s.bn.running_var);
        }
        stage(&mut self.input, &mut out);
        for b in &mut self.blocks {
            stage(b, &mut out);
        }
        out.push(self.output.weight.value.data_mut());
        out.push(self.output.bias.value.data_mut());
        out
    }
}
