//! Non-i.i.d. device streams: a Dirichlet label mix per device, Gaussian
//! class clusters for features, and FIFO mini-batch queues. Also reads and
//! writes the JSON manifest used to exchange pre-partitioned data.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{estimate_global_distribution, normalize, ClassCounts, ClassDistribution};
use crate::error::{Error, Result};
use crate::learn::Batch;
use crate::rng::{purpose, StreamKey};
use crate::sampling;

/// Knobs of the synthetic federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub devices_per_group: usize,
    pub groups: usize,
    pub batches_per_device: usize,
    pub batch_size: usize,
    /// Dirichlet concentration; small values give skewed devices.
    pub concentration: f64,
    /// Typical distance between class means.
    pub separation: f64,
    /// Per-coordinate feature noise.
    pub noise: f64,
    pub seed: u64,
    /// Draw fresh batches once a device runs dry.
    #[serde(default)]
    pub regenerate: bool,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

fn default_test_size() -> usize {
    5000
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("dim", self.dim),
            ("devices_per_group", self.devices_per_group),
            ("groups", self.groups),
            ("batches_per_device", self.batches_per_device),
            ("batch_size", self.batch_size),
            ("test_size", self.test_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("concentration", self.concentration),
            ("separation", self.separation),
            ("noise", self.noise),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// What a synthetic stream needs to draw more batches.
#[derive(Debug, Clone)]
struct Generator {
    dim: usize,
    batch_size: usize,
    noise: f64,
    /// Row-major `classes x dim`.
    means: Vec<f64>,
}

impl Generator {
    fn batch(&self, p: &ClassDistribution, key: StreamKey) -> Batch {
        let mut rng = key.rng();
        let labels = sampling::labels(&mut rng, p, self.batch_size);
        let mut features = Vec::with_capacity(self.batch_size * self.dim);
        for &l in &labels {
            for j in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                features.push(self.means[l * self.dim + j] + self.noise * z);
            }
        }
        Batch::new(self.dim, features, labels).expect("consistent batch shape")
    }
}

#[derive(Debug, Clone)]
struct Refill {
    generator: Arc<Generator>,
    key: StreamKey,
    next: u64,
}

/// One device's queue of one-shot mini-batches.
#[derive(Debug, Clone)]
pub struct DeviceStream {
    classes: usize,
    queue: VecDeque<(Batch, ClassCounts)>,
    local: ClassDistribution,
    initial: ClassCounts,
    refill: Option<Refill>,
}

impl DeviceStream {
    /// A finite stream. Its local distribution is the label mix of the
    /// given batches.
    pub fn from_batches(classes: usize, batches: Vec<Batch>) -> Result<Self> {
        let mut initial = ClassCounts::zeros(classes);
        let mut queue = VecDeque::with_capacity(batches.len());
        for b in batches {
            if let Some(&l) = b.labels().iter().find(|&&l| l >= classes) {
                return Err(Error::ShapeMismatch(format!("label {l} outside {classes} classes")));
            }
            let h = ClassCounts::from_labels(b.labels(), classes);
            initial.add_assign(&h)?;
            queue.push_back((b, h));
        }
        let local = normalize(&initial)?;
        Ok(DeviceStream {
            classes,
            queue,
            local,
            initial,
            refill: None,
        })
    }

    /// Declared class distribution `P^{m,k}`.
    pub fn local_distribution(&self) -> &ClassDistribution {
        &self.local
    }

    /// Label totals of the stream as first provisioned.
    pub fn initial_counts(&self) -> &ClassCounts {
        &self.initial
    }

    /// `N^{m,k}`, the provisioned sample count.
    pub fn size(&self) -> u64 {
        self.initial.total()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Batches left; `None` for a regenerating stream.
    pub fn remaining(&self) -> Option<usize> {
        match self.refill {
            Some(_) => None,
            None => Some(self.queue.len()),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.queue.is_empty()
    }

    /// Whether `k` more batches can be fetched.
    pub fn can_supply(&self, k: usize) -> bool {
        self.remaining().is_none_or(|r| r >= k)
    }

    /// Label histogram of the head batch, without consuming it. This is all
    /// a device discloses for selection.
    pub fn peek_next_histogram(&self) -> Result<&ClassCounts> {
        self.queue.front().map(|(_, h)| h).ok_or(Error::StreamExhausted)
    }

    /// Dequeues the head batch.
    pub fn fetch_batch(&mut self) -> Result<Batch> {
        let (batch, _) = self.queue.pop_front().ok_or(Error::StreamExhausted)?;
        if self.queue.is_empty() {
            if let Some(refill) = &mut self.refill {
                let b = refill.generator.batch(&self.local, refill.key.child(refill.next));
                refill.next += 1;
                let h = ClassCounts::from_labels(b.labels(), self.classes);
                self.queue.push_back((b, h));
            }
        }
        Ok(batch)
    }

    /// Batches still queued, head first.
    pub fn queued(&self) -> impl Iterator<Item = &Batch> {
        self.queue.iter().map(|(b, _)| b)
    }
}

/// All device streams, grouped by base station, plus a held-out test set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub classes: usize,
    pub dim: usize,
    pub batch_size: usize,
    pub groups: Vec<Vec<DeviceStream>>,
    pub test: Batch,
}

impl Federation {
    pub fn devices(&self) -> impl Iterator<Item = &DeviceStream> {
        self.groups.iter().flatten()
    }

    /// `(N^{m,k}, P^{m,k})` for every device, group-major.
    pub fn declared_distributions(&self) -> Vec<(u64, ClassDistribution)> {
        self.devices().map(|d| (d.size(), d.local_distribution().clone())).collect()
    }
}

/// Builds the synthetic federation described by `config`.
pub fn generate_federation(config: &SynthConfig) -> Result<Federation> {
    config.validate()?;
    let root = StreamKey::root(config.seed);
    let scale = config.separation / (2.0 * config.dim as f64).sqrt();
    let mut rng = root.child(purpose::CLASS_MEANS).rng();
    let means = (0..config.classes * config.dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let generator = Arc::new(Generator {
        dim: config.dim,
        batch_size: config.batch_size,
        noise: config.noise,
        means,
    });

    let mut groups = Vec::with_capacity(config.groups);
    for m in 0..config.groups {
        let mut devices = Vec::with_capacity(config.devices_per_group);
        for k in 0..config.devices_per_group {
            let ids = [m as u64, k as u64];
            let p = sampling::dirichlet(
                &mut root.child(purpose::DEVICE_DIST).path(&ids).rng(),
                config.concentration,
                config.classes,
            );
            let key = root.child(purpose::DEVICE_BATCH).path(&ids);
            let batches = (0..config.batches_per_device)
                .map(|i| generator.batch(&p, key.child(i as u64)))
                .collect();
            let mut stream = DeviceStream::from_batches(config.classes, batches)?;
            stream.local = p;
            if config.regenerate {
                stream.refill = Some(Refill {
                    generator: Arc::clone(&generator),
                    key,
                    next: config.batches_per_device as u64,
                });
            }
            devices.push(stream);
        }
        groups.push(devices);
    }

    let mix: Vec<_> = groups
        .iter()
        .flatten()
        .map(|d: &DeviceStream| (d.size(), d.local.clone()))
        .collect();
    let global = estimate_global_distribution(&mix)?;
    let test_gen = Generator {
        batch_size: config.test_size,
        ..Generator::clone(&generator)
    };
    let test = test_gen.batch(&global, root.child(purpose::TEST_SET));

    Ok(Federation {
        classes: config.classes,
        dim: config.dim,
        batch_size: config.batch_size,
        groups,
        test,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    x: Vec<f64>,
    y: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDevice {
    group: usize,
    device: usize,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    #[serde(rename = "F")]
    classes: usize,
    d: usize,
    n: usize,
    devices: Vec<ManifestDevice>,
    #[serde(default)]
    test: Vec<ManifestSample>,
}

/// Prints every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn samples_of(batch: &Batch) -> impl Iterator<Item = ManifestSample> + '_ {
    (0..batch.len()).map(|i| ManifestSample {
        x: batch.row(i).to_vec(),
        y: batch.labels()[i],
    })
}

/// Writes the queued batches of every stream and the test set.
pub fn write_manifest<W: Write>(federation: &Federation, out: W) -> Result<()> {
    let doc = ManifestDoc {
        classes: federation.classes,
        d: federation.dim,
        n: federation.batch_size,
        devices: federation
            .groups
            .iter()
            .enumerate()
            .flat_map(|(m, devices)| {
                devices.iter().enumerate().map(move |(k, s)| ManifestDevice {
                    group: m,
                    device: k,
                    samples: s.queued().flat_map(samples_of).collect(),
                })
            })
            .collect(),
        test: samples_of(&federation.test).collect(),
    };
    let mut ser = serde_json::Serializer::with_formatter(out, FullPrecision);
    doc.serialize(&mut ser)?;
    Ok(())
}

pub fn export_manifest(federation: &Federation, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    write_manifest(federation, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn to_batch(dim: usize, classes: usize, samples: &[ManifestSample], context: &str) -> Result<Batch> {
    let mut features = Vec::with_capacity(samples.len() * dim);
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.x.len() != dim {
            return Err(Error::MalformedManifest(format!(
                "{context} sample {i}: x has {} values, expected d = {dim}",
                s.x.len()
            )));
        }
        if s.y >= classes {
            return Err(Error::MalformedManifest(format!(
                "{context} sample {i}: label y = {} outside [0, {classes})",
                s.y
            )));
        }
        features.extend_from_slice(&s.x);
        labels.push(s.y);
    }
    Batch::new(dim, features, labels).map_err(|e| Error::MalformedManifest(format!("{context}: {e}")))
}

/// Parses a manifest document. Devices are grouped by their `group` field
/// and keep manifest order within a group; samples are cut into batches of
/// `n` in order, the last batch possibly shorter.
pub fn parse_manifest(text: &str) -> Result<Federation> {
    let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| {
        Error::MalformedManifest(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    if doc.classes == 0 || doc.d == 0 || doc.n == 0 {
        return Err(Error::MalformedManifest("F, d and n must be positive".into()));
    }
    if doc.devices.is_empty() {
        return Err(Error::MalformedManifest("devices: empty list".into()));
    }
    let group_count = doc.devices.iter().map(|d| d.group).max().unwrap_or(0) + 1;
    let mut groups: Vec<Vec<DeviceStream>> = (0..group_count).map(|_| Vec::new()).collect();
    for (idx, dev) in doc.devices.iter().enumerate() {
        let context = format!("devices[{idx}] (group {}, device {})", dev.group, dev.device);
        if dev.samples.is_empty() {
            return Err(Error::MalformedManifest(format!("{context}: no samples")));
        }
        let batches = dev
            .samples
            .chunks(doc.n)
            .map(|chunk| to_batch(doc.d, doc.classes, chunk, &context))
            .collect::<Result<Vec<_>>>()?;
        groups[dev.group].push(DeviceStream::from_batches(doc.classes, batches)?);
    }
    if let Some(m) = groups.iter().position(Vec::is_empty) {
        return Err(Error::MalformedManifest(format!("group {m} has no devices")));
    }
    let test = to_batch(doc.d, doc.classes, &doc.test, "test")?;
    Ok(Federation {
        classes: doc.classes,
        dim: doc.d,
        batch_size: doc.n,
        groups,
        test,
    })
}

pub fn load_manifest(path: &Path) -> Result<Federation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
