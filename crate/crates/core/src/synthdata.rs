//! Synthetic multi-class 2D tasks: isotropic Gaussians on a ring (or grid)
//! with held-out target classes placed between source classes, plus
//! deterministic sampling and sample-budget controls.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("covariance is not symmetric positive-definite: {0:?}")]
    BadCovariance([[f64; 2]; 2]),
    #[error("requested {requested} samples but only {available} available")]
    NotEnough { requested: usize, available: usize },
    #[error("dataset parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One class's true distribution: a 2D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub center: Point,
    pub covariance: [[f64; 2]; 2],
}

impl ClassDistribution {
    pub fn isotropic(center: Point, sigma: f64) -> Self {
        let s2 = sigma * sigma;
        ClassDistribution { center, covariance: [[s2, 0.0], [0.0, s2]] }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let c = &self.covariance;
        let symmetric = (c[0][1] - c[1][0]).abs() <= 1e-12 * (1.0 + c[0][1].abs());
        let trace = c[0][0] + c[1][1];
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        // positive eigenvalues <=> trace > 0 and det > 0 for symmetric 2x2
        if !symmetric || trace <= 0.0 || det <= 0.0 {
            return Err(DataError::BadCovariance(*c));
        }
        Ok(())
    }

    /// Standard deviation scale: sqrt of the largest eigenvalue.
    pub fn sigma_scale(&self) -> f64 {
        let c = &self.covariance;
        let half_tr = 0.5 * (c[0][0] + c[1][1]);
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let disc = (half_tr * half_tr - det).max(0.0).sqrt();
        (half_tr + disc).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Ring { radius: f64 },
    Grid { spacing: f64 },
}

/// Full description of one task: class counts, budgets, geometry, seed.
/// `target_slots` records which gaps (ring) or cells (grid) the target
/// classes occupy; it is derived deterministically from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub n_source: usize,
    pub m_target: usize,
    pub source_budget: usize,
    pub target_budget: usize,
    pub sigma: f64,
    pub geometry: Geometry,
    pub seed: u64,
    pub target_slots: Vec<usize>,
}

/// A task with its materialized class distributions. Classes are indexed
/// `0..N` for sources and `N..N+M` for targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub config: TaskConfig,
    pub source: Vec<ClassDistribution>,
    pub target: Vec<ClassDistribution>,
}

/// Splitmix64 step, used to derive independent seeds from a base seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte stream; used for task fingerprints.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Task {
    /// Sources evenly spaced on a ring of radius `r`; target class centers
    /// sit at the midpoint angle of seed-chosen gaps between adjacent
    /// sources, on the same ring.
    pub fn ring(
        n_source: usize,
        m_target: usize,
        radius: f64,
        sigma: f64,
        seed: u64,
        source_budget: usize,
        target_budget: usize,
    ) -> Result<Task, DataError> {
        if n_source < 2 {
            return Err(DataError::InvalidTask(format!(
                "need >= 2 source classes, got {n_source}"
            )));
        }
        if m_target < 1 || m_target > n_source {
            return Err(DataError::InvalidTask(format!(
                "need 1 <= M <= N, got M = {m_target}, N = {n_source}"
            )));
        }
        if radius <= 0.0 || sigma <= 0.0 {
            return Err(DataError::InvalidTask("radius and sigma must be positive".into()));
        }
        if source_budget < 2 || target_budget < 2 {
            return Err(DataError::InvalidTask("budgets must be >= 2".into()));
        }
        let source: Vec<ClassDistribution> = (0..n_source)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / n_source as f64;
                ClassDistribution::isotropic([radius * angle.cos(), radius * angle.sin()], sigma)
            })
            .collect();
        let target_slots = choose_slots(n_source, m_target, derive_seed(seed, 0x51075));
        let target: Vec<ClassDistribution> = target_slots
            .iter()
            .map(|&gap| {
                let angle = 2.0 * PI * (gap as f64 + 0.5) / n_source as f64;
                ClassDistribution::isotropic([radius * angle.cos(), radius * angle.sin()], sigma)
            })
            .collect();
        let task = Task {
            config: TaskConfig {
                n_source,
                m_target,
                source_budget,
                target_budget,
                sigma,
                geometry: Geometry::Ring { radius },
                seed,
                target_slots,
            },
            source,
            target,
        };
        task.check_centers()?;
        Ok(task)
    }

    /// 5x5 grid of sources; targets at seed-chosen cell midpoints.
    pub fn grid(
        m_target: usize,
        spacing: f64,
        sigma: f64,
        seed: u64,
        source_budget: usize,
        target_budget: usize,
    ) -> Result<Task, DataError> {
        const SIDE: usize = 5;
        let n_source = SIDE * SIDE;
        if m_target < 1 || m_target > (SIDE - 1) * (SIDE - 1) {
            return Err(DataError::InvalidTask(format!(
                "grid task supports 1 <= M <= {}, got {m_target}",
                (SIDE - 1) * (SIDE - 1)
            )));
        }
        if spacing <= 0.0 || sigma <= 0.0 {
            return Err(DataError::InvalidTask("spacing and sigma must be positive".into()));
        }
        if source_budget < 2 || target_budget < 2 {
            return Err(DataError::InvalidTask("budgets must be >= 2".into()));
        }
        let offset = (SIDE as f64 - 1.0) / 2.0;
        let source: Vec<ClassDistribution> = (0..n_source)
            .map(|i| {
                let (r, c) = (i / SIDE, i % SIDE);
                ClassDistribution::isotropic(
                    [(c as f64 - offset) * spacing, (r as f64 - offset) * spacing],
                    sigma,
                )
            })
            .collect();
        let cells = (SIDE - 1) * (SIDE - 1);
        let target_slots = choose_slots(cells, m_target, derive_seed(seed, 0x6121D));
        let target: Vec<ClassDistribution> = target_slots
            .iter()
            .map(|&cell| {
                let (r, c) = (cell / (SIDE - 1), cell % (SIDE - 1));
                ClassDistribution::isotropic(
                    [(c as f64 + 0.5 - offset) * spacing, (r as f64 + 0.5 - offset) * spacing],
                    sigma,
                )
            })
            .collect();
        let task = Task {
            config: TaskConfig {
                n_source,
                m_target,
                source_budget,
                target_budget,
                sigma,
                geometry: Geometry::Grid { spacing },
                seed,
                target_slots,
            },
            source,
            target,
        };
        task.check_centers()?;
        Ok(task)
    }

    fn check_centers(&self) -> Result<(), DataError> {
        for t in &self.target {
            for s in &self.source {
                let d = (t.center[0] - s.center[0]).hypot(t.center[1] - s.center[1]);
                if d <= 0.0 {
                    return Err(DataError::InvalidTask(
                        "target center coincides with a source center".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.config.n_source + self.config.m_target
    }

    pub fn source_class_ids(&self) -> Vec<usize> {
        (0..self.config.n_source).collect()
    }

    pub fn target_class_ids(&self) -> Vec<usize> {
        (self.config.n_source..self.num_classes()).collect()
    }

    pub fn distribution(&self, class_id: usize) -> &ClassDistribution {
        if class_id < self.config.n_source {
            &self.source[class_id]
        } else {
            &self.target[class_id - self.config.n_source]
        }
    }

    pub fn distributions(&self) -> Vec<&ClassDistribution> {
        self.source.iter().chain(&self.target).collect()
    }

    /// Fingerprint of everything that defines the task.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.fingerprint_bytes(true))
    }

    /// Fingerprint of the source side only; a pretrained checkpoint is
    /// compatible with any task that shares it (the target side may vary).
    pub fn source_fingerprint(&self) -> u64 {
        fnv1a(self.fingerprint_bytes(false))
    }

    fn fingerprint_bytes(&self, include_target: bool) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend(c.n_source.to_le_bytes());
        out.extend(c.source_budget.to_le_bytes());
        out.extend(c.sigma.to_bits().to_le_bytes());
        out.extend(c.seed.to_le_bytes());
        match c.geometry {
            Geometry::Ring { radius } => {
                out.push(0);
                out.extend(radius.to_bits().to_le_bytes());
            }
            Geometry::Grid { spacing } => {
                out.push(1);
                out.extend(spacing.to_bits().to_le_bytes());
            }
        }
        if include_target {
            out.extend(c.m_target.to_le_bytes());
            out.extend(c.target_budget.to_le_bytes());
            for &slot in &c.target_slots {
                out.extend(slot.to_le_bytes());
            }
        }
        out
    }
}

/// Picks `m` distinct slots out of `0..slots`, deterministically per seed.
fn choose_slots(slots: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..slots).collect();
    // partial Fisher-Yates
    for i in 0..m {
        let j = rng.random_range(i..all.len());
        all.swap(i, j);
    }
    all.truncate(m);
    all
}

/// `n` i.i.d. samples from a 2D Gaussian, deterministic per
/// `(dist, n, seed)`.
pub fn sample_class(dist: &ClassDistribution, n: usize, seed: u64) -> Vec<Point> {
    let c = &dist.covariance;
    // Cholesky factor of the 2x2 covariance
    let l11 = c[0][0].sqrt();
    let l21 = if l11 > 0.0 { c[1][0] / l11 } else { 0.0 };
    let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, n as u64));
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(rand_distr::StandardNormal);
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            [dist.center[0] + l11 * u, dist.center[1] + l21 * u + l22 * v]
        })
        .collect()
}

/// Uniform subset without replacement, order-preserving, deterministic per
/// seed. Selecting everything is the identity.
pub fn subsample(points: &[Point], count: usize, seed: u64) -> Result<Vec<Point>, DataError> {
    if count > points.len() {
        return Err(DataError::NotEnough { requested: count, available: points.len() });
    }
    let mut idx = choose_slots(points.len(), count, derive_seed(seed, 0x5AB5));
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| points[i]).collect())
}

/// Materialized per-class sample pools for a task (index = class id).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub per_class: Vec<Vec<Point>>,
}

impl Dataset {
    /// Draws each class's pool at its budget from the true distribution.
    /// Target pools may later be reduced further with [`subsample`].
    pub fn generate(task: &Task) -> Dataset {
        let mut per_class = Vec::with_capacity(task.num_classes());
        for (id, dist) in task.distributions().iter().enumerate() {
            let budget = if id < task.config.n_source {
                task.config.source_budget
            } else {
                task.config.target_budget
            };
            per_class
                .push(sample_class(dist, budget, derive_seed(task.config.seed, id as u64)));
        }
        Dataset { per_class }
    }

    /// CSV dump `class_id,x0,x1` with full round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,x0,x1\n");
        for (id, points) in self.per_class.iter().enumerate() {
            for p in points {
                s.push_str(&format!("{id},{:.16e},{:.16e}\n", p[0], p[1]));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Dataset, DataError> {
        let mut per_class: Vec<Vec<Point>> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| {
                parts.next().ok_or_else(|| DataError::Parse {
                    line: lineno + 1,
                    detail: format!("missing {name}"),
                })
            };
            let id: usize = field("class_id")?.parse().map_err(|e| DataError::Parse {
                line: lineno + 1,
                detail: format!("class_id: {e}"),
            })?;
            let x0: f64 = field("x0")?.parse().map_err(|e| DataError::Parse {
                line: lineno + 1,
                detail: format!("x0: {e}"),
            })?;
            let x1: f64 = field("x1")?.parse().map_err(|e| DataError::Parse {
                line: lineno + 1,
                detail: format!("x1: {e}"),
            })?;
            if per_class.len() <= id {
                per_class.resize(id + 1, Vec::new());
            }
            per_class[id].push([x0, x1]);
        }
        Ok(Dataset { per_class })
    }
}
