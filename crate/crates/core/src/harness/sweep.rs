use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::data::{Dataset, SWEEP_FRACTIONS};
use crate::error::{Error, Result};

use super::config::{Method, RunConfig};
use super::train::train_on;

/// A grid of methods by training fractions, repeated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Template for every run; `method`, `fraction` and `seed` are overwritten per run.
    pub base: RunConfig,
    #[serde(with = "labels")]
    pub methods: Vec<Method>,
    pub fractions: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Worker threads.
    pub jobs: usize,
}

mod labels {
    use super::Method;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &[Method], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(ToString::to_string))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Method>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|s| s.parse().map_err(serde::de::Error::custom)).collect()
    }
}

impl SweepSpec {
    /// The full 16-method grid over the standard fractions and five seeds.
    pub fn table(base: RunConfig, lm_weight: f64) -> Self {
        Self { base, methods: Method::table_grid(lm_weight), fractions: SWEEP_FRACTIONS.to_vec(), seeds: (0..5).collect(), jobs: 1 }
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return Err(Error::Usage("sweep needs at least one method, fraction and seed".into()));
        }
        for &f in &self.fractions {
            RunConfig { fraction: f, ..self.base.clone() }.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one seed within a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub error: Option<String>,
    pub wall_seconds: f64,
    pub steps: usize,
    pub bounds: Option<BoundReport>,
}

/// Aggregate over the seeds of one (method, fraction) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(with = "label")]
    pub method: Method,
    pub fraction: u32,
    pub runs: Vec<RunRecord>,
    /// Over successful seeds; `None` when every seed failed.
    pub mean: Option<f64>,
    /// Population standard deviation over successful seeds.
    pub std: Option<f64>,
    pub failures: usize,
    pub d_l: Option<f64>,
    pub rho_min: Option<f64>,
    pub k_hat: Option<f64>,
    pub dl2w2: Option<f64>,
    pub epochs: usize,
    pub wall_seconds: f64,
}

mod label {
    use super::Method;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(m)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl CellResult {
    pub fn from_runs(method: Method, fraction: u32, epochs: usize, mut runs: Vec<RunRecord>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let acc: Vec<f64> = runs.iter().filter_map(|r| r.test_accuracy).collect();
        let reports: Vec<&BoundReport> = runs.iter().filter_map(|r| r.bounds.as_ref()).collect();
        let over = |f: &dyn Fn(&BoundReport) -> f64| mean(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            method,
            fraction,
            mean: mean(&acc),
            std: population_std(&acc),
            failures: runs.len() - acc.len(),
            d_l: over(&|r| r.d_l),
            rho_min: over(&|r| r.rho_min),
            k_hat: over(&|r| r.k_hat as f64),
            dl2w2: over(&|r| r.dl2w2),
            epochs,
            wall_seconds: runs.iter().map(|r| r.wall_seconds).sum(),
            runs,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.test_accuracy).collect()
    }
}

/// All cells of a sweep, methods-major in the order requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub cells: Vec<CellResult>,
    pub wall_seconds: f64,
}

impl SweepResult {
    pub fn cell(&self, method: &Method, fraction: u32) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.method == method && c.fraction == fraction)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures).sum()
    }
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn population_std(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

/// Runs every (method, fraction, seed) triple. Failed seeds are recorded in
/// their cell; the call errors only if no run at all succeeded.
pub fn run_sweep(
    spec: &SweepSpec,
    train: &Dataset,
    test: &Dataset,
    progress: Option<&(dyn Fn(&Method, u32, &RunRecord) + Sync)>,
) -> Result<SweepResult> {
    spec.validate()?;
    let start = Instant::now();
    let mut jobs = Vec::new();
    for (mi, m) in spec.methods.iter().enumerate() {
        for (fi, &f) in spec.fractions.iter().enumerate() {
            for &seed in &spec.seeds {
                jobs.push((mi, fi, RunConfig { method: *m, fraction: f, seed, ..spec.base.clone() }));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, usize, RunRecord)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|s| {
        for _ in 0..spec.jobs.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some((mi, fi, cfg)) = jobs.get(j) else { break };
                let rec = match train_on(cfg, train, test) {
                    Ok(o) => RunRecord {
                        seed: cfg.seed,
                        test_accuracy: Some(o.test_accuracy),
                        error: None,
                        wall_seconds: o.wall_seconds,
                        steps: o.steps,
                        bounds: Some(o.bounds),
                    },
                    Err(e) => RunRecord { seed: cfg.seed, test_accuracy: None, error: Some(e.to_string()), wall_seconds: 0.0, steps: 0, bounds: None },
                };
                if let Some(p) = progress {
                    p(&cfg.method, cfg.fraction, &rec);
                }
                done.lock().expect("worker panicked").push((*mi, *fi, rec));
            });
        }
    });
    let mut done = done.into_inner().expect("worker panicked");
    let mut cells = Vec::new();
    for (mi, m) in spec.methods.iter().enumerate() {
        for (fi, &f) in spec.fractions.iter().enumerate() {
            let runs: Vec<RunRecord> = extract(&mut done, |&(a, b, _)| a == mi && b == fi).into_iter().map(|t| t.2).collect();
            cells.push(CellResult::from_runs(*m, f, spec.base.epochs, runs));
        }
    }
    if cells.iter().all(|c| c.mean.is_none()) {
        let first = cells.iter().flat_map(|c| &c.runs).find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Diverged(format!("every run in the sweep failed; first error: {first}")));
    }
    Ok(SweepResult { spec: spec.clone(), cells, wall_seconds: start.elapsed().as_secs_f64() })
}

fn extract<T>(v: &mut Vec<T>, pred: impl Fn(&T) -> bool) -> Vec<T> {
    let (hit, keep): (Vec<T>, Vec<T>) = std::mem::take(v).into_iter().partition(|t| pred(t));
    *v = keep;
    hit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::harness::config::Architecture;
    use crate::tensor::Tensor;

    fn toy(n: usize, split: Split) -> Dataset {
        let mut v = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            v.extend((0..4).map(|p| if (p < 2) == (y == 0) { 0.9 } else { 0.05 * (i % 3) as f64 }));
            labels.push(y);
        }
        Dataset::new(Tensor::new(vec![n, 1, 2, 2], v).unwrap(), labels, 2, split).unwrap()
    }

    fn spec(jobs: usize) -> SweepSpec {
        SweepSpec {
            base: RunConfig {
                architecture: Architecture::Mlp { hidden: vec![4] },
                epochs: 5,
                batch_size: 4,
                ..Default::default()
            },
            methods: vec!["ce".parse().unwrap(), "mh+lm-0.001".parse().unwrap()],
            fractions: vec![50, 100],
            seeds: vec![0, 1, 2],
            jobs,
        }
    }

    #[test]
    fn aggregates_every_cell_over_all_seeds() {
        let (tr, te) = (toy(40, Split::Train), toy(10, Split::Test));
        let r = run_sweep(&spec(1), &tr, &te, None).unwrap();
        assert_eq!(r.cells.len(), 4);
        for c in &r.cells {
            assert_eq!(c.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
            let acc = c.accuracies();
            assert_eq!(c.mean, mean(&acc));
            assert_eq!(c.failures, 0);
            assert!(c.d_l.is_some());
        }
        let threaded = run_sweep(&spec(3), &tr, &te, None).unwrap();
        assert_eq!(threaded.cells.iter().map(|c| c.accuracies()).collect::<Vec<_>>(), r.cells.iter().map(|c| c.accuracies()).collect::<Vec<_>>());
    }

    #[test]
    fn all_failed_sweep_is_an_error() {
        let (tr, te) = (toy(40, Split::Train), toy(10, Split::Test));
        let mut s = spec(1);
        s.base.optimizer.lr = 1e200;
        s.base.optimizer.weight_decay = 0.0;
        s.base.epochs = 40;
        assert!(run_sweep(&s, &tr, &te, None).is_err());
        assert!(run_sweep(&SweepSpec { seeds: vec![], ..spec(1) }, &tr, &te, None).is_err());
    }

    #[test]
    fn std_is_population() {
        assert_eq!(population_std(&[1.0, 3.0]), Some(1.0));
        assert_eq!(population_std(&[]), None);
    }

    #[test]
    fn failed_seeds_stay_visible() {
        let rec = |seed, acc: Option<f64>| RunRecord {
            seed,
            test_accuracy: acc,
            error: acc.is_none().then(|| "diverged".into()),
            wall_seconds: 1.0,
            steps: 1,
            bounds: None,
        };
        let c = CellResult::from_runs("ce".parse().unwrap(), 1, 3, vec![rec(1, None), rec(0, Some(90.0))]);
        assert_eq!(c.failures, 1);
        assert_eq!(c.runs.len(), 2);
        assert_eq!(c.mean, Some(90.0));
    }
}
