use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classifier shape: a linear-softmax model when `hidden` is `None`, otherwise
/// a single tanh hidden layer.
///
/// Parameters are stored flat, row-major, in this order:
/// - linear: `W[C×D]`, `b[C]`
/// - mlp: `W1[H×D]`, `b1[H]`, `W2[C×H]`, `b2[C]`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Option<usize>,
    pub classes: usize,
}

impl Arch {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self { input_dim, hidden: None, classes }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { input_dim, hidden: Some(hidden), classes }
    }

    pub fn param_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.classes);
        match self.hidden {
            None => c * d + c,
            Some(h) => h * d + h + c * h + c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 || self.hidden == Some(0) {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Flat parameter vector of one classifier; the unit of federation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Arch,
    values: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        Self { values: vec![0.0; arch.param_count()], arch }
    }

    pub fn from_vec(arch: Arch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Config(format!("parameter vector has {} entries, {:?} needs {}", values.len(), arch, arch.param_count())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { arch, values })
    }

    /// Scaled-normal initialisation (std = 1/sqrt(fan_in)), zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let d = arch.input_dim;
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in slice {
                let z: f64 = StandardNormal.sample(rng);
                *v = s * z;
            }
        };
        match arch.hidden {
            None => fill(&mut p.values[..arch.classes * d], d),
            Some(h) => {
                fill(&mut p.values[..h * d], d);
                let w2 = h * d + h;
                fill(&mut p.values[w2..w2 + arch.classes * h], h);
            }
        }
        p
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Raw logits `f(x)`, without any prior adjustment.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).logits)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Config(format!("feature vector has dimension {}, model expects {}", x.len(), self.arch.input_dim)));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> Activations {
        let Arch { input_dim: d, hidden, classes: c } = self.arch;
        let v = &self.values;
        match hidden {
            None => {
                let (w, b) = v.split_at(c * d);
                let logits = (0..c).map(|k| b[k] + dot(&w[k * d..(k + 1) * d], x)).collect();
                Activations { hidden: Vec::new(), logits }
            }
            Some(h) => {
                let (w1, rest) = v.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let hid: Vec<f64> = (0..h).map(|j| (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh()).collect();
                let logits = (0..c).map(|k| b2[k] + dot(&w2[k * h..(k + 1) * h], &hid)).collect();
                Activations { hidden: hid, logits }
            }
        }
    }

    /// Adds `d loss / d params` to `grad` given `d loss / d logits`.
    pub(crate) fn accumulate_grad(&self, x: &[f64], act: &Activations, dlogits: &[f64], grad: &mut [f64]) {
        let Arch { input_dim: d, hidden, classes: c } = self.arch;
        match hidden {
            None => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let g = dlogits[k];
                    for (gwi, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *gwi += g * xi;
                    }
                    gb[k] += g;
                }
            }
            Some(h) => {
                let w2 = &self.values[h * d + h..h * d + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                let mut dhid = vec![0.0; h];
                for k in 0..c {
                    let g = dlogits[k];
                    let row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += g * act.hidden[j];
                        dhid[j] += g * row[j];
                    }
                    gb2[k] += g;
                }
                for j in 0..h {
                    let a = act.hidden[j];
                    let dz = dhid[j] * (1.0 - a * a);
                    for (gwi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gwi += dz * xi;
                    }
                    gb1[j] += dz;
                }
            }
        }
    }

    /// Euclidean distance over the full flat vector.
    pub fn distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Config(format!("architecture mismatch: {:?} vs {:?}", self.arch, other.arch)));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    /// Stable fingerprint of the parameter bits (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::rng_for;

    /// Independent triple-loop oracle for the linear layer.
    fn naive_linear(w: &[f64], b: &[f64], x: &[f64], c: usize) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; c];
        for i in 0..c {
            let mut acc = 0.0;
            for j in 0..d {
                acc += w[i * d + j] * x[j];
            }
            out[i] = acc + b[i];
        }
        out
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = ModelParams::zeros(Arch::linear(3, 4));
        assert_eq!(p.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // W = [[w11, w12], [w21, w22]], b = 0, x = (1, 0) -> (w11, w21)
        let p = ModelParams::from_vec(Arch::linear(2, 2), vec![0.7, -0.2, 1.3, 0.4, 0.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[1.0, 0.0]).unwrap(), vec![0.7, 1.3]);
    }

    #[test]
    fn matches_naive_matmul_oracle() {
        let mut rng = rng_for(3, &[1]);
        for _ in 0..50 {
            let arch = Arch::linear(7, 5);
            let p = ModelParams::init(arch, &mut rng);
            let mut vals = p.values().to_vec();
            for v in vals.iter_mut().skip(35) {
                *v = rng.random_range(-1.0..1.0);
            }
            let p = ModelParams::from_vec(arch, vals).unwrap();
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = p.forward(&x).unwrap();
            let want = naive_linear(&p.values()[..35], &p.values()[35..], &x, 5);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_matches_two_stage_oracle() {
        let mut rng = rng_for(4, &[1]);
        let arch = Arch::mlp(4, 6, 3);
        let p = ModelParams::init(arch, &mut rng);
        let x = [0.3, -1.2, 2.0, 0.5];
        let v = p.values();
        let (w1, b1) = (&v[..24], &v[24..30]);
        let (w2, b2) = (&v[30..48], &v[48..51]);
        let hid: Vec<f64> = naive_linear(w1, b1, &x, 6).into_iter().map(f64::tanh).collect();
        let want = naive_linear(w2, b2, &hid, 3);
        let got = p.forward(&x).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = ModelParams::zeros(Arch::linear(3, 2));
        assert!(matches!(p.forward(&[1.0]), Err(Error::Config(_))));
        assert!(ModelParams::from_vec(Arch::linear(3, 2), vec![0.0; 5]).is_err());
    }

    #[test]
    fn param_count_layout() {
        assert_eq!(Arch::linear(10, 5).param_count(), 55);
        assert_eq!(Arch::mlp(10, 16, 5).param_count(), 160 + 16 + 80 + 5);
    }
}
