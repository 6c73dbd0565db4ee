//! Synthetic paired-view activity dataset.
//!
//! Every example is one clean tri-axial signal drawn from its class's signal
//! family, observed twice: a lightly corrupted teacher view and a heavily
//! corrupted student view.

use crate::encoding::{encode_window, SensorWindow};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::TAU;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticHarSpec {
    pub classes: usize,
    /// Samples per window.
    pub window_len: usize,
    pub samples_per_class: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Standard deviation of the Gaussian noise on the teacher view.
    pub teacher_noise: f64,
    /// Standard deviation of the Gaussian noise on the student view.
    pub student_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticHarSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            window_len: 128,
            samples_per_class: 200,
            sample_rate: 50.0,
            teacher_noise: 0.1,
            student_noise: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticHarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return invalid("need at least 2 classes");
        }
        if self.window_len < 2 {
            return invalid("window length must be at least 2");
        }
        if self.samples_per_class < 2 {
            return invalid("need at least 2 samples per class for a train/test split");
        }
        if !(self.sample_rate > 0.0) {
            return invalid("sample rate must be positive");
        }
        if !(self.teacher_noise >= 0.0) || !(self.student_noise >= 0.0) {
            return invalid("noise levels must be non-negative");
        }
        if self.student_noise < self.teacher_noise {
            return invalid("the student view must not be cleaner than the teacher view");
        }
        Ok(())
    }

    /// Number of examples per class in the training split.
    pub fn train_per_class(&self) -> usize {
        let n = (self.samples_per_class as f64 * 0.8).round() as usize;
        n.clamp(1, self.samples_per_class - 1)
    }
}

/// Teacher and student views of the same examples, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSplit {
    pub teacher: Vec<SensorWindow>,
    pub student: Vec<SensorWindow>,
}

impl PairedSplit {
    pub fn len(&self) -> usize {
        self.teacher.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teacher.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.teacher.iter().map(SensorWindow::label).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarDataset {
    pub train: PairedSplit,
    pub test: PairedSplit,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Clean signal of one example; families repeat every six classes with
/// frequencies shifted upward per repetition.
fn clean_signal(class: usize, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> [Vec<f64>; 3] {
    let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let duration = n as f64 / rate;
    let shift = 1.0 + 0.35 * (class / 6) as f64;
    let amp = rng.random_range(0.8..1.2);
    let phase = rng.random_range(0.0..TAU);
    let mut axes: [Vec<f64>; 3] = Default::default();
    match class % 6 {
        // steady gait: fundamental on x, second harmonic on y
        0 | 1 => {
            let f =
                shift * if class.is_multiple_of(6) { rng.random_range(0.9..1.5) } else { rng.random_range(1.7..2.5) };
            let lag = rng.random_range(0.0..TAU);
            axes[0] = t.iter().map(|&s| amp * (TAU * f * s + phase).sin()).collect();
            axes[1] = t.iter().map(|&s| 0.6 * amp * (2.0 * TAU * f * s + lag).sin()).collect();
            axes[2] = t.iter().map(|&s| 0.3 * (TAU * 0.3 * s + phase).cos()).collect();
        }
        // periodic impacts on x with exponential decay
        2 => {
            let period = rng.random_range(0.35..0.6) / shift;
            let offset = rng.random_range(0.0..period);
            for &s in &t {
                let since = (s - offset).rem_euclid(period);
                axes[0].push(amp * 2.0 * (-since * 18.0).exp());
                axes[1].push(0.4 * amp * (-since * 9.0).exp());
                axes[2].push(0.2 * (TAU * 0.5 * s + phase).sin());
            }
        }
        // single wide swing
        3 => {
            let centre = rng.random_range(0.3..0.7) * duration;
            let width = rng.random_range(0.2..0.35) * duration / shift;
            for &s in &t {
                let g = (-((s - centre) / width).powi(2)).exp();
                axes[0].push(amp * g);
                axes[1].push(-0.8 * amp * g * (s - centre) / width);
                axes[2].push(0.5 * amp * g);
            }
        }
        // wandering posture: smoothed random walk
        4 => {
            for ax in axes.iter_mut() {
                let mut level = 0.0;
                let mut vel = 0.0;
                for _ in 0..n {
                    vel = 0.9 * vel + 0.08 * gauss(rng);
                    level += vel;
                    ax.push(amp * level);
                }
            }
        }
        // impacts on z over a slow sway on y
        _ => {
            let period = rng.random_range(0.5..0.8) / shift;
            let offset = rng.random_range(0.0..period);
            let f = rng.random_range(0.4..0.8) * shift;
            for &s in &t {
                let since = (s - offset).rem_euclid(period);
                axes[0].push(0.3 * (TAU * f * s + phase).cos());
                axes[1].push(amp * (TAU * f * s + phase).sin());
                axes[2].push(amp * 1.5 * (-since * 14.0).exp());
            }
        }
    }
    axes
}

fn noisy(clean: &[Vec<f64>; 3], sigma: f64, rng: &mut ChaCha8Rng) -> [Vec<f64>; 3] {
    let mut out = clean.clone();
    for ax in out.iter_mut() {
        for v in ax.iter_mut() {
            *v += sigma * gauss(rng);
        }
    }
    out
}

/// Generates both views of every example and splits each class 80/20.
pub fn generate_dataset(spec: &SyntheticHarSpec) -> Result<HarDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / spec.sample_rate;
    let keep = spec.train_per_class();
    let mut train = PairedSplit { teacher: Vec::new(), student: Vec::new() };
    let mut test = PairedSplit { teacher: Vec::new(), student: Vec::new() };
    for class in 0..spec.classes {
        let mut examples = Vec::with_capacity(spec.samples_per_class);
        for _ in 0..spec.samples_per_class {
            let clean = clean_signal(class, spec.window_len, spec.sample_rate, &mut rng);
            let [tx, ty, tz] = noisy(&clean, spec.teacher_noise, &mut rng);
            let [sx, sy, sz] = noisy(&clean, spec.student_noise, &mut rng);
            examples
                .push((SensorWindow::uniform(tx, ty, tz, dt, class)?, SensorWindow::uniform(sx, sy, sz, dt, class)?));
        }
        examples.shuffle(&mut rng);
        for (i, (t, s)) in examples.into_iter().enumerate() {
            let split = if i < keep { &mut train } else { &mut test };
            split.teacher.push(t);
            split.student.push(s);
        }
    }
    Ok(HarDataset { train, test })
}

/// Flattened GAF images of both views, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub teacher: Tensor,
    pub student: Tensor,
    pub labels: Vec<usize>,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub train: EncodedSplit,
    pub test: EncodedSplit,
    pub side: usize,
    pub classes: usize,
}

impl EncodedDataset {
    pub fn input_width(&self) -> usize {
        3 * self.side * self.side
    }
}

/// Encodes windows into a batch matrix of flattened images.
pub fn encode_windows(windows: &[SensorWindow], side: usize) -> Result<Tensor> {
    let width = 3 * side * side;
    let mut data = Vec::with_capacity(windows.len() * width);
    for w in windows {
        data.extend(encode_window(w, side)?.flatten());
    }
    Tensor::matrix(windows.len(), width, data)
}

fn encode_split(split: &PairedSplit, side: usize) -> Result<EncodedSplit> {
    Ok(EncodedSplit {
        teacher: encode_windows(&split.teacher, side)?,
        student: encode_windows(&split.student, side)?,
        labels: split.labels(),
    })
}

pub fn encode_dataset(data: &HarDataset, side: usize, classes: usize) -> Result<EncodedDataset> {
    Ok(EncodedDataset { train: encode_split(&data.train, side)?, test: encode_split(&data.test, side)?, side, classes })
}
