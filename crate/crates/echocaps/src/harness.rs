//! Equalized split, training loop, evaluation, latency benchmark and the
//! complex-versus-absolute ablation.

use std::fmt;
use std::time::{Duration, Instant};

use echocaps_core::dsp::{preprocess, Filters};
use echocaps_core::echosim::{gen_dataset, LabeledTrace};
use echocaps_core::{HeightClass, InputVariant, SignalConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{InputGain, RunConfig};
use crate::dataset::{hex, image_set, preprocess_traces, ImageSet};
use crate::error::{Error, Result};
use crate::imagefile::NetworkImage;
use crate::model::{ArchTag, Model};

const CLASSES: usize = HeightClass::COUNT;
const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub equalized_total: usize,
    pub holdout: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            equalized_total: 4_800,
            holdout: 960,
            seed: 2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.equalized_total % CLASSES != 0 || self.holdout % CLASSES != 0 {
            return Err(Error::Usage(format!(
                "equalized_total {} and holdout {} must be multiples of {CLASSES}",
                self.equalized_total, self.holdout
            )));
        }
        if self.holdout == 0 || self.holdout >= self.equalized_total {
            return Err(Error::Usage(format!(
                "holdout {} must be positive and below equalized_total {}",
                self.holdout, self.equalized_total
            )));
        }
        Ok(())
    }
}

/// Index lists of an equalized split, training first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Picks `equalized_total / 4` samples per class with a seeded shuffle and
/// holds out `holdout / 4` of each class for validation.
pub fn equalize_split(labels: &[HeightClass], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let per_class = spec.equalized_total / CLASSES;
    let held_per_class = spec.holdout / CLASSES;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(spec.equalized_total - spec.holdout);
    let mut validation = Vec::with_capacity(spec.holdout);
    for class in HeightClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} samples, {per_class} needed",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        validation.extend_from_slice(&members[..held_per_class]);
        train.extend_from_slice(&members[held_per_class..per_class]);
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    Ok(Split { train, validation })
}

/// Counts indexed `[predicted][actual]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; CLASSES]; CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Usage(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut m = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= CLASSES || a >= CLASSES {
                return Err(Error::Usage(format!("class index out of range: {p}, {a}")));
            }
            m.counts[p][a] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..CLASSES).map(|k| self.counts[k][k]).sum()
    }

    /// Samples per actual class.
    pub fn column_sums(&self) -> [usize; CLASSES] {
        let mut out = [0; CLASSES];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

/// Predicted classes as rows, actual classes as columns.
impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>18}", "predicted \\ actual")?;
        for c in HeightClass::ALL {
            write!(f, " {:>8}", c.name())?;
        }
        writeln!(f)?;
        for (p, row) in self.counts.iter().enumerate() {
            write!(f, "{:>18}", HeightClass::ALL[p].name())?;
            for v in row {
                write!(f, " {v:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
}

pub fn predict_all(model: &Model, set: &ImageSet) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, _) = set.batch(chunk)?;
        out.extend(model.predict_batch(&x)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, set: &ImageSet) -> Result<Evaluation> {
    model.check_variant(set.variant)?;
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let predicted = predict_all(model, set)?;
    let actual: Vec<usize> = set.labels.iter().map(|l| l.index()).collect();
    let matrix = ConfusionMatrix::from_pairs(&predicted, &actual)?;
    Ok(Evaluation {
        accuracy: matrix.accuracy(),
        matrix,
    })
}

/// One metrics row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} val_accuracy={:.6} wall_time={:.3}",
            self.epoch, self.train_loss, self.val_accuracy, self.wall_time_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters and optimizer state at the best validation epoch.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Reciprocal root-mean-square of all input values.
pub fn auto_gain(set: &ImageSet) -> f64 {
    let (sum, n) = set
        .images
        .iter()
        .flat_map(|t| t.data())
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    let rms = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
    if rms > 0.0 {
        1.0 / rms
    } else {
        1.0
    }
}

pub fn fingerprint(train: &ImageSet, validation: &ImageSet) -> String {
    let mut h = Sha256::new();
    h.update(train.fingerprint());
    h.update(validation.fingerprint());
    hex(&h.finalize())
}

/// Trains `cfg.arch` on `train`, validating after every epoch.
///
/// Stops after `cfg.epochs` or when validation accuracy has not improved for
/// `cfg.patience` epochs (0 disables early stopping).
pub fn run_training(
    cfg: &RunConfig,
    train: &ImageSet,
    validation: &ImageSet,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if train.variant != cfg.variant || validation.variant != cfg.variant {
        return Err(Error::Usage(format!(
            "config asks for {} input but the data is {}",
            cfg.variant, train.variant
        )));
    }
    let gain = match cfg.input_gain {
        InputGain::Auto => auto_gain(train),
        InputGain::Fixed(g) => g,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = match cfg.arch {
        ArchTag::CapsNet => Model::init_capsnet(cfg.caps_arch(), gain, &mut rng)?,
        ArchTag::Cnn => Model::init_cnn(cfg.cnn_arch(), gain, &mut rng)?,
    };
    let mut opt = model.optimizer(cfg.adam);
    let snapshot = |model: &Model, opt: &echocaps_core::numerics::AdamState| Checkpoint {
        model: model.clone(),
        optimizer: Some(opt.clone()),
        seed: cfg.seed,
        dataset_fingerprint: fingerprint(train, validation),
        config_text: cfg.to_text(),
    };
    let mut best = snapshot(&model, &opt);
    let mut best_epoch = 0;
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train.batch(chunk)?;
            loss_sum += model.train_step(&mut opt, &x, &labels, &cfg.margin)? * chunk.len() as f64;
        }
        let accuracy = evaluate(&model, validation)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if accuracy > best_accuracy {
            best_accuracy = accuracy;
            best_epoch = epoch;
            best = snapshot(&model, &opt);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_accuracy,
        history,
    })
}

/// Generated traces plus the split of their labels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub traces: Vec<LabeledTrace>,
    pub split: Split,
}

/// Simulates `cfg.n_total` traces and splits their labels.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let traces = gen_dataset(cfg.n_total, cfg.data_seed, &cfg.signal)?;
    let labels: Vec<HeightClass> = traces.iter().map(|t| t.spec.height_class).collect();
    let split = equalize_split(&labels, &cfg.split())?;
    Ok(Prepared { traces, split })
}

/// Preprocessed training and validation sets for one input variant.
pub fn split_sets(
    prepared: &Prepared,
    signal: &SignalConfig,
    variant: InputVariant,
) -> Result<(ImageSet, ImageSet)> {
    let build = |indices: &[usize]| -> Result<ImageSet> {
        let traces: Vec<LabeledTrace> = indices
            .iter()
            .map(|&i| prepared.traces[i].clone())
            .collect();
        let pre = preprocess_traces(&traces, signal, variant)?;
        if pre.clipped > 0 {
            return Err(Error::Data(format!(
                "{} envelope components clipped",
                pre.clipped
            )));
        }
        image_set(&pre.images, variant)
    };
    Ok((
        build(&prepared.split.train)?,
        build(&prepared.split.validation)?,
    ))
}

/// Splits an already preprocessed image set with the configured split.
pub fn split_images(set: &ImageSet, spec: &SplitSpec) -> Result<(ImageSet, ImageSet)> {
    let split = equalize_split(&set.labels, spec)?;
    Ok((set.subset(&split.train), set.subset(&split.validation)))
}

/// Minimum, median and 99th percentile of a sample of durations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub min: Duration,
    pub median: Duration,
    pub p99: Duration,
}

impl TimingStats {
    pub fn from_samples(samples: &[Duration]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("no timing samples".into()));
        }
        let mut s = samples.to_vec();
        s.sort();
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2
        };
        let p99 = s[(n * 99).div_ceil(100).max(1) - 1];
        Ok(Self {
            min: s[0],
            median,
            p99,
        })
    }
}

impl fmt::Display for TimingStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        write!(
            f,
            "min={:.3}ms median={:.3}ms p99={:.3}ms",
            ms(self.min),
            ms(self.median),
            ms(self.p99)
        )
    }
}

pub const LATENCY_BUDGET: Duration = Duration::from_millis(30);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub preprocess: TimingStats,
    pub inference: TimingStats,
    pub total: TimingStats,
    pub pass: bool,
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preprocess {}", self.preprocess)?;
        writeln!(f, "inference  {}", self.inference)?;
        writeln!(f, "total      {}", self.total)?;
        write!(
            f,
            "{} median total below {} ms",
            if self.pass { "PASS" } else { "FAIL" },
            LATENCY_BUDGET.as_millis()
        )
    }
}

/// Times single-measurement preprocessing and prediction, cycling through
/// `traces`.
pub fn bench_latency(
    model: &Model,
    signal: &SignalConfig,
    traces: &[LabeledTrace],
    n_warm: usize,
    n_measure: usize,
) -> Result<LatencyReport> {
    if n_measure == 0 {
        return Err(Error::Usage("n_measure must be positive".into()));
    }
    if traces.is_empty() {
        return Err(Error::Data("no traces to benchmark".into()));
    }
    let filters = Filters::design(signal)?;
    let variant = model.variant();
    let mut pre = Vec::with_capacity(n_measure);
    let mut inf = Vec::with_capacity(n_measure);
    let mut total = Vec::with_capacity(n_measure);
    for k in 0..n_warm + n_measure {
        let raw = &traces[k % traces.len()].trace;
        let t0 = Instant::now();
        let env = preprocess(raw, signal, &filters)?;
        let image = match variant {
            InputVariant::Complex => NetworkImage::Complex(env),
            InputVariant::Absolute => {
                NetworkImage::Absolute(echocaps_core::dsp::magnitude_image(&env))
            }
        };
        let x = image.to_tensor();
        let t1 = Instant::now();
        let class = model.predict_batch(&x)?;
        let t2 = Instant::now();
        std::hint::black_box(class);
        if k >= n_warm {
            pre.push(t1 - t0);
            inf.push(t2 - t1);
            total.push(t2 - t0);
        }
    }
    let total = TimingStats::from_samples(&total)?;
    Ok(LatencyReport {
        preprocess: TimingStats::from_samples(&pre)?,
        inference: TimingStats::from_samples(&inf)?,
        pass: total.median < LATENCY_BUDGET,
        total,
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: InputVariant,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
    pub latency: LatencyReport,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub arch: ArchTag,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn accuracy(&self, variant: InputVariant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .map(|r| r.evaluation.accuracy)
    }
}

/// Accuracy and prediction time per input variant.
impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>9} {:>16} {:>16} {:>16}",
            "method", "accuracy", "preprocess (ms)", "inference (ms)", "total (ms)"
        )?;
        for r in &self.rows {
            let ms = |d: Duration| d.as_secs_f64() * 1e3;
            let name = match r.variant {
                InputVariant::Complex => format!("complex {}", self.arch),
                InputVariant::Absolute => format!("absolute {}", self.arch),
            };
            writeln!(
                f,
                "{name:<20} {:>8.2}% {:>16.3} {:>16.3} {:>16.3}",
                r.evaluation.accuracy * 100.0,
                ms(r.latency.preprocess.median),
                ms(r.latency.inference.median),
                ms(r.latency.total.median)
            )?;
        }
        Ok(())
    }
}

/// Trains and evaluates the configured architecture on both input variants
/// over the same split.
pub fn run_ablation(
    cfg: &RunConfig,
    prepared: &Prepared,
    on_epoch: &mut dyn FnMut(InputVariant, &EpochRecord),
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for variant in [InputVariant::Complex, InputVariant::Absolute] {
        let vcfg = RunConfig {
            variant,
            ..cfg.clone()
        };
        let (train, validation) = split_sets(prepared, &cfg.signal, variant)?;
        let outcome = run_training(&vcfg, &train, &validation, &mut |r| on_epoch(variant, r))?;
        let evaluation = evaluate(&outcome.best.model, &validation)?;
        let bench_traces: Vec<LabeledTrace> = prepared
            .split
            .validation
            .iter()
            .take(32)
            .map(|&i| prepared.traces[i].clone())
            .collect();
        let latency = bench_latency(
            &outcome.best.model,
            &cfg.signal,
            &bench_traces,
            cfg.n_warm,
            cfg.n_measure,
        )?;
        rows.push(AblationRow {
            variant,
            outcome,
            evaluation,
            latency,
        });
    }
    Ok(AblationReport {
        arch: cfg.arch,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: [usize; 4]) -> Vec<HeightClass> {
        let mut out = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(HeightClass::ALL[k], n));
        }
        out
    }

    #[test]
    fn default_split_sizes() {
        let l = labels([1300, 1250, 1400, 1200]);
        let s = equalize_split(&l, &SplitSpec::default()).unwrap();
        assert_eq!(s.train.len(), 3840);
        assert_eq!(s.validation.len(), 960);
        let mut val_counts = [0; 4];
        for &i in &s.validation {
            val_counts[l[i].index()] += 1;
        }
        assert_eq!(val_counts, [240; 4]);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 4800);
        assert_eq!(s, equalize_split(&l, &SplitSpec::default()).unwrap());
    }

    #[test]
    fn short_class_is_a_data_error() {
        let l = labels([1300, 100, 1400, 1200]);
        assert!(matches!(
            equalize_split(&l, &SplitSpec::default()),
            Err(Error::Data(_))
        ));
        let bad = SplitSpec {
            holdout: 4800,
            ..SplitSpec::default()
        };
        assert!(matches!(equalize_split(&l, &bad), Err(Error::Usage(_))));
    }

    #[test]
    fn confusion_matrix_examples() {
        let actual: Vec<usize> = (0..960).map(|i| i % 4).collect();
        let perfect = ConfusionMatrix::from_pairs(&actual, &actual).unwrap();
        assert_eq!(perfect.accuracy(), 1.0);
        assert_eq!(
            (0..4).map(|k| perfect.counts[k][k]).collect::<Vec<_>>(),
            vec![240; 4]
        );

        let mut predicted = actual.clone();
        let mut moved = 0;
        for (p, &a) in predicted.iter_mut().zip(&actual) {
            if a == 0 && moved < 4 {
                *p = 2;
                moved += 1;
            }
        }
        let m = ConfusionMatrix::from_pairs(&predicted, &actual).unwrap();
        assert_eq!(m.counts[2][0], 4);
        assert_eq!(m.counts[0][0], 236);
        assert!((m.accuracy() - 956.0 / 960.0).abs() < 1e-15);
        assert!((m.accuracy() * 100.0 - 99.58).abs() < 0.005);
        assert_eq!(m.column_sums(), [240; 4]);

        let constant = ConfusionMatrix::from_pairs(&vec![3; 960], &actual).unwrap();
        assert_eq!(constant.counts[3], [240; 4]);
        assert_eq!(constant.accuracy(), 0.25);
        let text = constant.to_string();
        assert!(text
            .lines()
            .nth(4)
            .unwrap()
            .trim_start()
            .starts_with("highest"));
    }

    #[test]
    fn timing_stats() {
        let ms = |v: u64| Duration::from_millis(v);
        let s = TimingStats::from_samples(&[ms(5), ms(1), ms(3)]).unwrap();
        assert_eq!((s.min, s.median, s.p99), (ms(1), ms(3), ms(5)));
        let many: Vec<Duration> = (1..=200).map(ms).collect();
        let s = TimingStats::from_samples(&many).unwrap();
        assert_eq!(s.p99, ms(198));
        assert!(TimingStats::from_samples(&[]).is_err());
    }
}
