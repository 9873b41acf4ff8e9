//! Synthetic multi-view recognition pipeline.
//!
//! Each object has a world-frame feature `c`. A view instance places `N`
//! random cameras `R_i`, observes `f(i) = ρ(R_i) c` plus noise and connects the
//! views with potentials `ψ_ij = R_i R_jᵀ`. Noise-free observations are
//! therefore global sections of the view graph.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::conv::{commutant_basis, Nonlinearity, TorsorConvLayer};
use crate::error::{Result, TorsorError};
use crate::groups::{distance, sample_element, GroupElement, GroupKind, Representation};
use crate::potentialgraph::PotentialGraph;
use crate::sheaf::{align_to_reference, pool, FeatureAssignment, PoolMode};

/// How views are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Complete,
    Ring,
    /// Each view linked to its `k` nearest views by geodesic camera distance.
    Knn(usize),
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Complete => f.write_str("complete"),
            Topology::Ring => f.write_str("ring"),
            Topology::Knn(k) => write!(f, "knn:{k}"),
        }
    }
}

impl FromStr for Topology {
    type Err = TorsorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Topology::Complete),
            "ring" => Ok(Topology::Ring),
            _ => s
                .strip_prefix("knn:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Topology::Knn)
                .ok_or_else(|| {
                    TorsorError::InvalidArgument(format!("unknown topology '{s}', expected complete|ring|knn:<k>"))
                }),
        }
    }
}

fn topology_edges(topology: Topology, cameras: &[GroupElement]) -> Result<Vec<(usize, usize)>> {
    let n = cameras.len();
    let mut edges = Vec::new();
    match topology {
        Topology::Complete => {
            for u in 0..n {
                for v in u + 1..n {
                    edges.push((u, v));
                }
            }
        }
        Topology::Ring => {
            for u in 0..n {
                let v = (u + 1) % n;
                if u != v && !(n == 2 && u == 1) {
                    edges.push((u.min(v), u.max(v)));
                }
            }
        }
        Topology::Knn(k) => {
            let mut set = std::collections::BTreeSet::new();
            for u in 0..n {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&v| v != u)
                    .map(|v| Ok((distance(&cameras[u], &cameras[v])?, v)))
                    .collect::<Result<_>>()?;
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, v) in others.iter().take(k) {
                    set.insert((u.min(v), u.max(v)));
                }
            }
            edges.extend(set);
        }
    }
    Ok(edges)
}

/// Parameters of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub classes: usize,
    pub per_class: usize,
    pub views: usize,
    pub topology: Topology,
    pub sigma_view: f64,
    /// Per-instance perturbation of the class feature.
    pub sigma_object: f64,
    /// SO(3) representation of the features.
    pub rep: Representation,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 4,
            views: 8,
            topology: Topology::Complete,
            sigma_view: 0.0,
            sigma_object: 0.0,
            rep: Representation::standard(GroupKind::So3).expect("so3 standard"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObject {
    pub class_id: usize,
    pub canonical_feature: DVector<f64>,
    pub instance_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewInstance {
    pub object: SyntheticObject,
    pub cameras: Vec<GroupElement>,
    pub graph: PotentialGraph,
    pub observed: FeatureAssignment,
}

/// A generated dataset with the class features it was drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub prototypes: Vec<DVector<f64>>,
    pub instances: Vec<ViewInstance>,
}

const MIN_SEPARATION: f64 = 1.0;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn class_prototypes(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    // Spread grows with the class count so rejection stays cheap.
    let scale = 1.5 * (classes as f64).cbrt();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while out.len() < classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(TorsorError::InvalidArgument(format!(
                "could not place {classes} separated class features in dimension {dim}"
            )));
        }
        let x = DVector::from_iterator(dim, (0..dim).map(|_| scale * gaussian(rng)));
        if out.iter().all(|p| (p - &x).norm() >= MIN_SEPARATION) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Deterministic synthetic dataset; instances are ordered by class.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.classes < 2 || config.views < 2 || config.per_class < 1 {
        return Err(TorsorError::InvalidArgument(format!(
            "need classes >= 2, views >= 2 and per_class >= 1, got {}, {}, {}",
            config.classes, config.views, config.per_class
        )));
    }
    if !(config.sigma_view >= 0.0
        && config.sigma_view.is_finite()
        && config.sigma_object >= 0.0
        && config.sigma_object.is_finite())
    {
        return Err(TorsorError::InvalidArgument(
            "noise levels must be finite and non-negative".into(),
        ));
    }
    if config.rep.group() != GroupKind::So3 {
        return Err(TorsorError::InvalidRepresentation(format!(
            "multi-view features need an so3 representation, got one over {}",
            config.rep.group()
        )));
    }
    let dim = config.rep.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes = class_prototypes(config.classes, dim, &mut rng)?;
    let view_noise = Normal::new(0.0, config.sigma_view).expect("validated");
    let object_noise = Normal::new(0.0, config.sigma_object).expect("validated");

    let mut instances = Vec::with_capacity(config.classes * config.per_class);
    for (class_id, proto) in prototypes.iter().enumerate() {
        for _ in 0..config.per_class {
            let canonical = proto + DVector::from_iterator(dim, (0..dim).map(|_| object_noise.sample(&mut rng)));
            let cameras: Vec<GroupElement> = (0..config.views)
                .map(|_| sample_element(GroupKind::So3, &mut rng))
                .collect();
            let graph = PotentialGraph::from_absolute_states(&cameras, &topology_edges(config.topology, &cameras)?)?;
            let mut values = DMatrix::zeros(config.views, dim);
            for (i, cam) in cameras.iter().enumerate() {
                let clean = config.rep.matrix(cam)? * &canonical;
                let noisy = clean + DVector::from_iterator(dim, (0..dim).map(|_| view_noise.sample(&mut rng)));
                values.set_row(i, &noisy.transpose());
            }
            instances.push(ViewInstance {
                object: SyntheticObject {
                    class_id,
                    canonical_feature: canonical,
                    instance_noise: config.sigma_object,
                },
                cameras,
                graph,
                observed: FeatureAssignment::new(config.rep.clone(), values)?,
            });
        }
    }
    Ok(Dataset { prototypes, instances })
}

/// Layer with `K = I` and no nonlinearity on `rep`.
pub fn identity_layer(rep: &Representation) -> Result<TorsorConvLayer> {
    let basis = commutant_basis(rep, rep)?;
    TorsorConvLayer::from_matrix(basis, &DMatrix::identity(rep.dim(), rep.dim()), Nonlinearity::None)
}

/// Convolve, align every view to view `r`, then mean-pool.
pub fn descriptor_pipeline_a(instance: &ViewInstance, layer: &TorsorConvLayer, r: usize) -> Result<DVector<f64>> {
    let out = layer.forward(&instance.graph, &instance.observed)?;
    let aligned = align_to_reference(&instance.graph, &out, r)?;
    pool(&aligned.features, PoolMode::Mean)
}

/// Convolve and mean-pool without alignment.
pub fn raw_descriptor(instance: &ViewInstance, layer: &TorsorConvLayer) -> Result<DVector<f64>> {
    pool(&layer.forward(&instance.graph, &instance.observed)?, PoolMode::Mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletReport {
    pub triplets: usize,
    /// Mean distance between same-class descriptors, unaligned pooling.
    pub d_intra_raw: f64,
    /// Same, for aligned descriptors expressed in world coordinates.
    pub d_intra_aligned: f64,
    pub mean_triplet_raw: f64,
    pub mean_triplet_aligned: f64,
    /// Mean of `max(0, α − ‖z_a − z_n‖²)` on aligned descriptors.
    pub mean_triplet_inter_only: f64,
}

struct TripletStats {
    d_intra: f64,
    mean_triplet: f64,
    inter_only: f64,
    triplets: usize,
}

fn triplet_stats(z: &[DVector<f64>], labels: &[usize], margin: f64) -> TripletStats {
    let (mut intra_sum, mut intra_count) = (0.0, 0usize);
    let (mut loss, mut inter, mut triplets) = (0.0, 0.0, 0usize);
    for a in 0..z.len() {
        for p in 0..z.len() {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let dp = (&z[a] - &z[p]).norm_squared();
            intra_sum += dp.sqrt();
            intra_count += 1;
            for n in 0..z.len() {
                if labels[n] == labels[a] {
                    continue;
                }
                let dn = (&z[a] - &z[n]).norm_squared();
                loss += (dp - dn + margin).max(0.0);
                inter += (margin - dn).max(0.0);
                triplets += 1;
            }
        }
    }
    TripletStats {
        d_intra: intra_sum / intra_count.max(1) as f64,
        mean_triplet: loss / triplets.max(1) as f64,
        inter_only: inter / triplets.max(1) as f64,
        triplets,
    }
}

/// Compares raw and aligned descriptors on every `(anchor, positive, negative)` triple.
///
/// Aligned descriptors are mapped back to world coordinates with the reference
/// camera, `ρ(R_r)⁻¹ z`, so instances with different cameras are comparable.
pub fn triplet_gap_experiment(
    dataset: &[ViewInstance],
    layer: &TorsorConvLayer,
    r: usize,
    margin: f64,
) -> Result<TripletReport> {
    let labels: Vec<usize> = dataset.iter().map(|x| x.object.class_id).collect();
    let mut counts = std::collections::BTreeMap::new();
    for &l in &labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(TorsorError::InsufficientData(
            "need at least two classes with two instances each".into(),
        ));
    }
    let mut raw = Vec::with_capacity(dataset.len());
    let mut aligned = Vec::with_capacity(dataset.len());
    for inst in dataset {
        if r >= inst.cameras.len() {
            return Err(TorsorError::InvalidArgument(format!("reference view {r} out of range")));
        }
        raw.push(raw_descriptor(inst, layer)?);
        let z = descriptor_pipeline_a(inst, layer, r)?;
        let back = layer.rep_out().matrix(&inst.cameras[r])?.tr_mul(&z);
        aligned.push(back);
    }
    let raw_stats = triplet_stats(&raw, &labels, margin);
    let aligned_stats = triplet_stats(&aligned, &labels, margin);
    Ok(TripletReport {
        triplets: aligned_stats.triplets,
        d_intra_raw: raw_stats.d_intra,
        d_intra_aligned: aligned_stats.d_intra,
        mean_triplet_raw: raw_stats.mean_triplet,
        mean_triplet_aligned: aligned_stats.mean_triplet,
        mean_triplet_inter_only: aligned_stats.inter_only,
    })
}

/// Training problem for a per-view linear encoder `E`.
///
/// `L(E) = (1/M) Σ_n ‖E x̄_n − p_{y_n}‖² + λ Σ_n η_n(E f_n)` where `x̄_n` is the
/// mean observed feature of instance `n` and `p_y` the class feature.
#[derive(Debug, Clone)]
pub struct EncoderObjective<'a> {
    instances: &'a [ViewInstance],
    prototypes: &'a [DVector<f64>],
    lambda: f64,
    means: Vec<DVector<f64>>,
    transports: Vec<Vec<DMatrix<f64>>>,
    dim: usize,
}

impl<'a> EncoderObjective<'a> {
    pub fn new(dataset: &'a Dataset, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TorsorError::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let instances = &dataset.instances[..];
        let first = instances
            .first()
            .ok_or_else(|| TorsorError::InsufficientData("empty dataset".into()))?;
        let rep = first.observed.rep();
        let mut means = Vec::with_capacity(instances.len());
        let mut transports = Vec::with_capacity(instances.len());
        for inst in instances {
            if inst.graph.num_edges() == 0 {
                return Err(TorsorError::EmptyGraph);
            }
            means.push(pool(&inst.observed, PoolMode::Mean)?);
            transports.push(
                inst.graph
                    .edges()
                    .iter()
                    .map(|e| rep.matrix(&e.psi))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            instances,
            prototypes: &dataset.prototypes,
            lambda,
            means,
            transports,
            dim: rep.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn instance_eta(&self, n: usize, e: &DMatrix<f64>) -> f64 {
        let inst = &self.instances[n];
        let f = inst.observed.values();
        let total: f64 = inst
            .graph
            .edges()
            .iter()
            .zip(&self.transports[n])
            .map(|(edge, r)| {
                let res = e * f.row(edge.u).transpose() - r * e * f.row(edge.v).transpose();
                edge.weight * res.norm_squared()
            })
            .sum();
        total / inst.graph.volume()
    }

    /// `(1/M) Σ_n η_n(E f_n)`.
    pub fn mean_eta(&self, e: &DMatrix<f64>) -> f64 {
        (0..self.instances.len()).map(|n| self.instance_eta(n, e)).sum::<f64>() / self.instances.len() as f64
    }

    pub fn task_loss(&self, e: &DMatrix<f64>) -> f64 {
        self.instances
            .iter()
            .zip(&self.means)
            .map(|(inst, x)| (e * x - &self.prototypes[inst.object.class_id]).norm_squared())
            .sum::<f64>()
            / self.instances.len() as f64
    }

    pub fn loss(&self, e: &DMatrix<f64>) -> f64 {
        let eta_sum: f64 = (0..self.instances.len()).map(|n| self.instance_eta(n, e)).sum();
        self.task_loss(e) + self.lambda * eta_sum
    }

    pub fn gradient(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.instances.len() as f64;
        let mut grad = DMatrix::zeros(self.dim, self.dim);
        for (inst, x) in self.instances.iter().zip(&self.means) {
            let res = e * x - &self.prototypes[inst.object.class_id];
            grad += (res * x.transpose()) * (2.0 / m);
        }
        if self.lambda > 0.0 {
            for (n, inst) in self.instances.iter().enumerate() {
                let f = inst.observed.values();
                let scale = 2.0 * self.lambda / inst.graph.volume();
                for (edge, r) in inst.graph.edges().iter().zip(&self.transports[n]) {
                    let (fu, fv) = (f.row(edge.u).transpose(), f.row(edge.v).transpose());
                    let res = e * &fu - r * e * &fv;
                    grad += (&res * fu.transpose() - r.tr_mul(&res) * fv.transpose()) * (scale * edge.weight);
                }
            }
        }
        grad
    }

    /// Upper bound on the Lipschitz constant of the gradient.
    ///
    /// The task term has Hessian `(2/M) Σ x̄ x̄ᵀ`; each frustration term is at most
    /// `4·max weighted degree / vol` times `Σ_v ‖f_v‖²`.
    pub fn lipschitz_bound(&self) -> f64 {
        let m = self.instances.len() as f64;
        let task = 2.0 * self.means.iter().map(|x| x.norm_squared()).sum::<f64>() / m;
        let reg: f64 = self
            .instances
            .iter()
            .map(|inst| {
                let g = &inst.graph;
                let dmax = (0..g.num_vertices()).map(|v| g.weighted_degree(v)).fold(0.0, f64::max);
                4.0 * dmax / g.volume() * inst.observed.values().norm_squared()
            })
            .sum();
        task + self.lambda * reg
    }
}

/// Largest relative deviation between the analytic gradient and central differences.
pub fn gradient_check(objective: &EncoderObjective<'_>, e: &DMatrix<f64>, h: f64) -> f64 {
    let analytic = objective.gradient(e);
    let mut numeric = DMatrix::zeros(e.nrows(), e.ncols());
    for i in 0..e.nrows() {
        for j in 0..e.ncols() {
            let (mut plus, mut minus) = (e.clone(), e.clone());
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            numeric[(i, j)] = (objective.loss(&plus) - objective.loss(&minus)) / (2.0 * h);
        }
    }
    (&analytic - &numeric).norm() / numeric.norm().max(analytic.norm()).max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    /// Step size; `None` uses `1 / lipschitz_bound`.
    pub lr: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            epochs: 500,
            lr: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub lr: f64,
    pub gradient_rel_error: f64,
    pub eta_initial: f64,
    pub eta_final: f64,
    /// Task loss before training and after each epoch.
    pub task_loss_curve: Vec<f64>,
    /// Mean frustration before training and after each epoch.
    pub eta_curve: Vec<f64>,
    pub encoder: DMatrix<f64>,
}

/// Full-batch gradient descent on [`EncoderObjective`] from a seeded Gaussian encoder.
pub fn train_with_frustration(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    let objective = EncoderObjective::new(dataset, config.lambda)?;
    let d = objective.dim();
    let lr = match config.lr {
        Some(lr) if lr > 0.0 && lr.is_finite() => lr,
        Some(lr) => {
            return Err(TorsorError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )))
        }
        None => 1.0 / objective.lipschitz_bound(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = 1.0 / (d as f64).sqrt();
    let mut e = DMatrix::from_fn(d, d, |_, _| s * gaussian(&mut rng));

    let gradient_rel_error = gradient_check(&objective, &e, 1e-5);
    let mut task_loss_curve = vec![objective.task_loss(&e)];
    let mut eta_curve = vec![objective.mean_eta(&e)];
    let mut history = vec![objective.loss(&e)];
    for epoch in 1..=config.epochs {
        e -= objective.gradient(&e) * lr;
        let loss = objective.loss(&e);
        history.push(loss);
        if !loss.is_finite() {
            return Err(TorsorError::TrainingDiverged { epoch, history });
        }
        task_loss_curve.push(objective.task_loss(&e));
        eta_curve.push(objective.mean_eta(&e));
    }
    Ok(TrainReport {
        lr,
        gradient_rel_error,
        eta_initial: eta_curve[0],
        eta_final: *eta_curve.last().expect("non-empty"),
        task_loss_curve,
        eta_curve,
        encoder: e,
    })
}

/// Settings for [`run_multiview_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub dataset: DatasetConfig,
    pub lambda: f64,
    pub epochs: usize,
    pub margin: f64,
    pub reference: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            lambda: 10.0,
            epochs: 500,
            margin: 0.2,
            reference: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub instances: usize,
    pub triplet: TripletReport,
    pub training: TrainReport,
}

impl DemoReport {
    /// Flat `key=value` block, one entry per line.
    pub fn to_key_values(&self) -> String {
        let c = &self.config;
        let t = &self.triplet;
        let r = &self.training;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("classes", c.dataset.classes.to_string());
        line("per_class", c.dataset.per_class.to_string());
        line("views", c.dataset.views.to_string());
        line("topology", c.dataset.topology.to_string());
        line("sigma_view", format!("{:.16e}", c.dataset.sigma_view));
        line("lambda", format!("{:.16e}", c.lambda));
        line("margin", format!("{:.16e}", c.margin));
        line("seed", c.dataset.seed.to_string());
        line("instances", self.instances.to_string());
        line("triplets", t.triplets.to_string());
        line("d_intra_raw", format!("{:.16e}", t.d_intra_raw));
        line("d_intra_aligned", format!("{:.16e}", t.d_intra_aligned));
        line("mean_triplet_raw", format!("{:.16e}", t.mean_triplet_raw));
        line("mean_triplet_aligned", format!("{:.16e}", t.mean_triplet_aligned));
        line("mean_triplet_inter_only", format!("{:.16e}", t.mean_triplet_inter_only));
        line("epochs", c.epochs.to_string());
        line("lr", format!("{:.16e}", r.lr));
        line("gradient_rel_error", format!("{:.16e}", r.gradient_rel_error));
        line("task_loss_initial", format!("{:.16e}", r.task_loss_curve[0]));
        line(
            "task_loss_final",
            format!("{:.16e}", r.task_loss_curve.last().expect("non-empty")),
        );
        line("eta_initial", format!("{:.16e}", r.eta_initial));
        line("eta_final", format!("{:.16e}", r.eta_final));
        out
    }

    /// Tab-separated `epoch task_loss eta` rows with a header.
    pub fn trace_tsv(&self) -> String {
        let mut out = String::from("epoch\ttask_loss\teta\n");
        for (i, (t, e)) in self
            .training
            .task_loss_curve
            .iter()
            .zip(&self.training.eta_curve)
            .enumerate()
        {
            let _ = writeln!(out, "{i}\t{t:.16e}\t{e:.16e}");
        }
        out
    }
}

/// Generates a dataset, runs the triplet comparison with an identity layer and
/// trains a frustration-regularized encoder.
pub fn run_multiview_demo(config: &DemoConfig) -> Result<DemoReport> {
    let dataset = generate_dataset(&config.dataset)?;
    let layer = identity_layer(&config.dataset.rep)?;
    let triplet = triplet_gap_experiment(&dataset.instances, &layer, config.reference, config.margin)?;
    let training = train_with_frustration(
        &dataset,
        &TrainConfig {
            lambda: config.lambda,
            epochs: config.epochs,
            lr: None,
            seed: config.dataset.seed.wrapping_add(1),
        },
    )?;
    Ok(DemoReport {
        config: config.clone(),
        instances: dataset.instances.len(),
        triplet,
        training,
    })
}
