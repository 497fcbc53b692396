//! Continuation of Hodge-Laplacian eigenvalue branches along metric paths,
//! crossing detection and color words.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::PeriodicMesh;
use crate::metric::{sym_product, MetricField, MetricPath};
use crate::perturbation::{dec_beltrami_derivative, dec_closed_derivative, dec_coclosed_sq_derivative};
use crate::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};
use crate::sparse::{dot, Csr};

/// Type and sign tag of a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    #[serde(rename = "coclosed+")]
    CoclosedPlus,
    #[serde(rename = "coclosed-")]
    CoclosedMinus,
    #[serde(rename = "closed")]
    Closed,
}

impl Color {
    pub fn label(self) -> &'static str {
        match self {
            Color::CoclosedPlus => "coclosed+",
            Color::CoclosedMinus => "coclosed-",
            Color::Closed => "closed",
        }
    }

    /// One-letter symbol used in color words.
    pub fn symbol(self) -> char {
        match self {
            Color::CoclosedPlus => '+',
            Color::CoclosedMinus => '-',
            Color::Closed => 'c',
        }
    }

    pub fn is_closed(self) -> bool {
        self == Color::Closed
    }

    fn of_lambda(lambda: f64) -> Self {
        if lambda > 0.0 {
            Color::CoclosedPlus
        } else {
            Color::CoclosedMinus
        }
    }

    /// Bound on `|dv/dt| / (|v| ‖g⁻¹‖ ‖ġ‖)` for the branch value `v`.
    fn rate_constant(self) -> f64 {
        if self.is_closed() {
            4.0
        } else {
            2.5
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Coclosed,
    Closed,
    #[default]
    Both,
}

impl Which {
    pub fn coclosed(self) -> bool {
        self != Which::Closed
    }

    pub fn closed(self) -> bool {
        self != Which::Coclosed
    }
}

/// How sign changes found on the grid are localized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// Bisection with fresh solves.
    #[default]
    Bisection,
    /// Secant on the grid bracket, no extra solves.
    Interpolation,
}

#[derive(Clone, Debug)]
pub struct TrackOptions {
    pub solver: SolverOptions,
    /// Modes solved past the window so exits through its top are not
    /// mistaken for matching failures.
    pub margin: usize,
    /// Relative gap by which the solved spectrum must extend past the
    /// window edge.
    pub edge_gap: f64,
    /// Minimum eigenvector overlap for a match.
    pub threshold: f64,
    pub max_refinements: usize,
    /// Relative to the window scale.
    pub crossing_tol: f64,
    /// Relative to the window scale: gap minima below this without a sign
    /// change are reported as avoided crossings.
    pub near_miss: f64,
    /// Target bracket width of the localization.
    pub resolution: f64,
    pub max_depth: usize,
    pub localization: Localization,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            margin: 4,
            edge_gap: 0.05,
            threshold: 0.5,
            max_refinements: 3,
            crossing_tol: 1e-8,
            near_miss: 1e-2,
            resolution: 1e-4,
            max_depth: 14,
            localization: Localization::Bisection,
        }
    }
}

/// One eigenpair at one parameter value.
#[derive(Clone, Debug)]
pub struct Mode {
    pub color: Color,
    /// `λ` for coclosed modes, `ρ` for closed ones.
    pub value: f64,
    /// Hodge-Laplacian eigenvalue: `λ²` or `ρ`.
    pub hodge: f64,
    pub vector: Vec<f64>,
    pub cluster: usize,
    /// Position by Hodge value within its type.
    pub rank: usize,
}

/// Solved spectra at one parameter value.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub modes: Vec<Mode>,
    /// Dimension of the near-zero cluster of the Hodge Laplacian on 1-forms.
    pub harmonic_dimension: usize,
    /// `max ‖g⁻¹‖ ‖ġ‖` over the samples.
    pub stretch: f64,
    mass: Option<Csr>,
    mass0: Option<Csr>,
}

impl Snapshot {
    fn mass_for(&self, color: Color) -> &Csr {
        let m = if color.is_closed() { &self.mass0 } else { &self.mass };
        m.as_ref().expect("mass matrix of a tracked type")
    }

    /// Member indices of every cluster, keyed by cluster id.
    fn clusters(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, m) in self.modes.iter().enumerate() {
            out.entry(m.cluster).or_default().push(i);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchSample {
    pub t: f64,
    pub value: f64,
    pub hodge: f64,
    /// Overlap with the previous sample; 1 for the first.
    pub overlap: f64,
    pub snapshot: usize,
    pub mode: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralBranch {
    pub id: usize,
    pub color: Color,
    pub samples: Vec<BranchSample>,
    /// Estimate `L` with `|v(t′) − v(t)| ≤ L |t′ − t|`.
    pub lipschitz: f64,
}

impl SpectralBranch {
    pub fn min_hodge(&self) -> f64 {
        self.samples.iter().map(|s| s.hodge).fold(f64::INFINITY, f64::min)
    }

    pub fn min_overlap(&self) -> f64 {
        self.samples.iter().map(|s| s.overlap).fold(1.0, f64::min)
    }

    /// Whether consecutive samples respect the Lipschitz estimate.
    pub fn is_continuous(&self) -> bool {
        self.samples
            .windows(2)
            .all(|w| (w[1].value - w[0].value).abs() <= self.lipschitz * (w[1].t - w[0].t) * (1.0 + 1e-9) + 1e-12)
    }

    fn at(&self, snapshot: usize) -> Option<&BranchSample> {
        self.samples
            .binary_search_by_key(&snapshot, |s| s.snapshot)
            .ok()
            .map(|i| &self.samples[i])
    }
}

/// Branches along a path with the solved snapshots behind them.
#[derive(Clone, Debug)]
pub struct Tracking {
    pub window: usize,
    pub which: Which,
    pub snapshots: Vec<Snapshot>,
    /// `links[k]`: matched `(mode at k, mode at k + 1, overlap)`.
    pub links: Vec<Vec<(usize, usize, f64)>>,
    /// `owner[k][m]`: branch of mode `m` at snapshot `k`.
    pub owner: Vec<Vec<usize>>,
    pub branches: Vec<SpectralBranch>,
    /// Parameter intervals left unmatched after all refinements.
    pub unresolved: Vec<(f64, f64)>,
    pub refinements: usize,
}

impl Tracking {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Largest Hodge value in the window, the scale of the tolerances.
    pub fn scale(&self) -> f64 {
        self.snapshots
            .iter()
            .flat_map(|s| s.modes.iter().map(|m| m.hodge))
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE)
    }

    pub fn min_hodge(&self) -> f64 {
        self.branches.iter().map(|b| b.min_hodge()).fold(f64::INFINITY, f64::min)
    }

    pub fn harmonic_dimensions(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.harmonic_dimension).collect()
    }

    pub fn all_continuous(&self) -> bool {
        self.branches.iter().all(|b| b.is_continuous())
    }

    /// Smallest overlap among matched samples of branches living inside the
    /// window at both ends of a link.
    pub fn min_core_overlap(&self) -> f64 {
        let mut out = 1.0f64;
        for (k, link) in self.links.iter().enumerate() {
            for &(a, b, o) in link {
                if self.snapshots[k].modes[a].rank < self.window || self.snapshots[k + 1].modes[b].rank < self.window {
                    out = out.min(o);
                }
            }
        }
        out
    }

    /// Branch ids in the window at snapshot `k`, sorted by Hodge value.
    pub fn order_at(&self, k: usize) -> Vec<usize> {
        let snap = &self.snapshots[k];
        let mut ids: Vec<(f64, usize)> = snap
            .modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.rank < self.window)
            .map(|(i, m)| (m.hodge, self.owner[k][i]))
            .collect();
        ids.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ids.into_iter().map(|(_, b)| b).collect()
    }

    /// `t, branch_id, type, value, color, overlap` rows.
    pub fn branch_csv(&self) -> String {
        let mut out = String::from("t,branch_id,type,value,color,overlap\n");
        let mut rows: Vec<(usize, usize, &BranchSample, Color)> = Vec::new();
        for b in &self.branches {
            for s in &b.samples {
                rows.push((s.snapshot, b.id, s, b.color));
            }
        }
        rows.sort_by_key(|r| (r.0, r.1));
        for (_, id, s, color) in rows {
            let kind = if color.is_closed() { "closed" } else { "coclosed" };
            out.push_str(&format!(
                "{:.10},{},{},{:.12e},{},{:.6}\n",
                s.t,
                id,
                kind,
                s.value,
                color.label(),
                s.overlap
            ));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderEntry {
    pub branch: usize,
    pub color: Color,
    pub hodge: f64,
}

/// Sorted Hodge values in the window at one parameter, with colors.
#[derive(Clone, Debug, Serialize)]
pub struct OrderSequence {
    pub t: f64,
    pub entries: Vec<OrderEntry>,
    /// Two values within the crossing tolerance.
    pub ambiguous: bool,
}

impl OrderSequence {
    pub fn word(&self) -> String {
        self.entries.iter().map(|e| e.color.symbol()).collect()
    }

    pub fn branches(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.branch).collect()
    }
}

/// Color word at `t`, interpolating linearly between snapshots.
pub fn order_sequence(tracking: &Tracking, t: f64, crossing_tol: f64) -> OrderSequence {
    let times = tracking.times();
    let k = match times.iter().rposition(|&s| s <= t) {
        Some(k) => k,
        None => 0,
    };
    let next = if k + 1 < times.len() && times[k] < t { Some(k + 1) } else { None };
    let mut entries = Vec::new();
    for b in &tracking.branches {
        let Some(left) = b.at(k) else { continue };
        if tracking.snapshots[k].modes[left.mode].rank >= tracking.window {
            continue;
        }
        let hodge = match next {
            Some(n) => match b.at(n) {
                Some(right) => {
                    let w = (t - left.t) / (right.t - left.t);
                    left.hodge + w * (right.hodge - left.hodge)
                }
                None => continue,
            },
            None => left.hodge,
        };
        entries.push(OrderEntry {
            branch: b.id,
            color: b.color,
            hodge,
        });
    }
    entries.sort_by(|a, b| a.hodge.total_cmp(&b.hodge).then(a.branch.cmp(&b.branch)));
    let tol = crossing_tol * tracking.scale();
    let ambiguous = entries.windows(2).any(|w| w[1].hodge - w[0].hodge <= tol);
    OrderSequence { t, entries, ambiguous }
}

/// Whether `after` is `before` with the adjacent entries `a` and `b`
/// exchanged, after dropping branches absent from either list.
pub fn is_transposition(before: &[usize], after: &[usize], a: usize, b: usize) -> bool {
    let before: Vec<usize> = before.iter().copied().filter(|x| after.contains(x)).collect();
    let after: Vec<usize> = after.iter().copied().filter(|x| before.contains(x)).collect();
    let (Some(i), Some(j)) = (before.iter().position(|&x| x == a), before.iter().position(|&x| x == b)) else {
        return false;
    };
    if i.abs_diff(j) != 1 {
        return false;
    }
    let mut swapped = before.clone();
    swapped.swap(i, j);
    swapped == after
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Crossing,
    Avoided,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingEvent {
    pub t: f64,
    pub branches: [usize; 2],
    pub colors: [Color; 2],
    pub kind: EventKind,
    /// Smallest `|v_i − v_j|` evaluated while localizing.
    pub gap_min: f64,
    /// Final bracket; its width is the localization accuracy.
    pub bracket: [f64; 2],
    pub depth: usize,
}

impl CrossingEvent {
    pub fn is_mixed(&self) -> bool {
        self.colors[0].is_closed() != self.colors[1].is_closed()
    }

    pub fn involves(&self, a: usize, b: usize) -> bool {
        (self.branches[0] == a && self.branches[1] == b) || (self.branches[0] == b && self.branches[1] == a)
    }
}

/// Hodge-value difference of two branches at a parameter.
pub type PairGap<'a> = dyn Fn(f64, usize, usize) -> Result<f64> + Sync + 'a;

/// Sign changes of `v_i − v_j` between consecutive shared samples, and gap
/// minima below the near-miss threshold. Sign changes are localized by
/// bisection with `refine`, otherwise by linear interpolation on the grid
/// bracket; minima sit at the vertex of the parabola through three samples,
/// evaluated once with `refine`.
pub fn detect_crossings(
    branches: &[SpectralBranch],
    opts: &TrackOptions,
    filter: impl Fn(&SpectralBranch, &SpectralBranch) -> bool + Sync,
    refine: Option<&PairGap>,
) -> Result<Vec<CrossingEvent>> {
    let scale = branches
        .iter()
        .flat_map(|b| b.samples.iter().map(|s| s.hodge))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = opts.crossing_tol * scale;
    let near = opts.near_miss * scale;
    let pairs: Vec<(usize, usize)> = (0..branches.len())
        .flat_map(|i| (i + 1..branches.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| filter(&branches[i], &branches[j]))
        .collect();
    let found: Vec<Vec<CrossingEvent>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_events(&branches[i], &branches[j], tol, near, opts, refine))
        .collect::<Result<_>>()?;
    let mut events: Vec<CrossingEvent> = found.into_iter().flatten().collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.branches.cmp(&b.branches)));
    Ok(events)
}

fn pair_events(
    bi: &SpectralBranch,
    bj: &SpectralBranch,
    tol: f64,
    near: f64,
    opts: &TrackOptions,
    refine: Option<&PairGap>,
) -> Result<Vec<CrossingEvent>> {
    // runs of consecutive shared snapshots
    let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut last: Option<usize> = None;
    for s in &bi.samples {
        let Some(o) = bj.at(s.snapshot) else {
            last = None;
            continue;
        };
        let d = s.hodge - o.hodge;
        if last.is_some_and(|l| l + 1 == s.snapshot) {
            runs.last_mut().unwrap().push((s.t, d));
        } else {
            runs.push(vec![(s.t, d)]);
        }
        last = Some(s.snapshot);
    }
    let make = |t: f64, kind, gap_min: f64, bracket: [f64; 2], depth| CrossingEvent {
        t,
        branches: [bi.id, bj.id],
        colors: [bi.color, bj.color],
        kind,
        gap_min,
        bracket,
        depth,
    };
    let mut events = Vec::new();
    for run in &runs {
        for w in run.windows(2) {
            let ((ta, da), (tb, db)) = (w[0], w[1]);
            if da.abs() > tol && db.abs() > tol && da.signum() != db.signum() {
                let (t, gap, bracket, depth) = bisect(ta, da, tb, db, tol, opts, |t| match refine {
                    Some(f) => f(t, bi.id, bj.id),
                    None => unreachable!(),
                }, refine.is_some())?;
                events.push(make(t, EventKind::Crossing, gap, bracket, depth));
            }
        }
        for w in run.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            if b.1.abs() <= tol && a.1.abs() > tol && c.1.abs() > tol {
                events.push(make(b.0, EventKind::Crossing, b.1.abs(), [b.0, b.0], 0));
                continue;
            }
            let same = a.1.signum() == b.1.signum() && b.1.signum() == c.1.signum();
            let local_min = b.1.abs() < a.1.abs() && b.1.abs() <= c.1.abs();
            if same && local_min && a.1.abs() > tol && c.1.abs() > tol && b.1.abs() <= near {
                let t = parabola_vertex(a, b, c);
                let (gap, depth) = match refine {
                    Some(f) => (f(t, bi.id, bj.id)?.abs().min(b.1.abs()), 1),
                    None => (b.1.abs(), 0),
                };
                let bracket = [a.0, c.0];
                let kind = if gap <= tol { EventKind::Crossing } else { EventKind::Avoided };
                events.push(make(t, kind, gap, bracket, depth));
            }
        }
    }
    Ok(events)
}

#[allow(clippy::too_many_arguments)]
fn bisect(
    mut a: f64,
    mut da: f64,
    mut b: f64,
    mut db: f64,
    tol: f64,
    opts: &TrackOptions,
    f: impl Fn(f64) -> Result<f64>,
    refine: bool,
) -> Result<(f64, f64, [f64; 2], usize)> {
    let mut gap = da.abs().min(db.abs());
    let mut depth = 0;
    if refine {
        while depth < opts.max_depth && b - a > opts.resolution {
            let m = 0.5 * (a + b);
            let dm = f(m)?;
            depth += 1;
            gap = gap.min(dm.abs());
            if dm.abs() <= tol {
                return Ok((m, gap, [a, b], depth));
            }
            if dm.signum() == da.signum() {
                a = m;
                da = dm;
            } else {
                b = m;
                db = dm;
            }
        }
    }
    let t = a + (b - a) * da / (da - db);
    Ok((t, gap, [a, b], depth))
}

/// Abscissa of the vertex of the parabola through three samples of `|d|`,
/// clamped to their range.
fn parabola_vertex(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (ya, yb, yc) = (a.1.abs(), b.1.abs(), c.1.abs());
    let num = (b.0 - a.0).powi(2) * (yb - yc) - (b.0 - c.0).powi(2) * (yb - ya);
    let den = (b.0 - a.0) * (yb - yc) - (b.0 - c.0) * (yb - ya);
    if den.abs() <= f64::EPSILON * num.abs() {
        return b.0;
    }
    (b.0 - 0.5 * num / den).clamp(a.0, c.0)
}

/// A branch located in a fresh snapshot.
#[derive(Clone, Debug)]
pub struct Located {
    pub value: f64,
    pub hodge: f64,
    /// `M`-normalized projection of the reference vector onto the cluster.
    pub vector: Vec<f64>,
    /// Squared norm of that projection before normalizing.
    pub score: f64,
}

/// Solves spectra along one path and continues branches.
pub struct Tracker<'a> {
    pub mesh: &'a PeriodicMesh,
    pub path: &'a MetricPath,
    pub window: usize,
    pub which: Which,
    pub opts: TrackOptions,
    cache: Mutex<HashMap<u64, Arc<Snapshot>>>,
    discs: Mutex<HashMap<u64, Arc<Discretization>>>,
}

impl<'a> Tracker<'a> {
    pub fn new(mesh: &'a PeriodicMesh, path: &'a MetricPath, window: usize, which: Which, opts: TrackOptions) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("window must be positive".into()));
        }
        Ok(Self {
            mesh,
            path,
            window,
            which,
            opts,
            cache: Mutex::new(HashMap::new()),
            discs: Mutex::new(HashMap::new()),
        })
    }

    /// Spectra, harmonic dimension and mass matrices at `t`.
    pub fn snapshot(&self, t: f64) -> Result<Snapshot> {
        let g = self.path.eval(t)?;
        let disc = Discretization::new(self.mesh, &g)?;
        let mut modes = Vec::new();
        let mut small = 0;
        let zero = 1e-6 * disc.spectral_scale().powi(2);
        if self.which.coclosed() {
            let spec = self.grow(|count| {
                let spec = coclosed_spectrum(&disc, Window::Count(count), &self.opts.solver)?;
                let hodge = spec.pairs.iter().map(|p| p.lambda * p.lambda).collect();
                Ok((spec, hodge))
            })?;
            let ranks = ranks_by(spec.pairs.iter().map(|p| p.lambda.abs()));
            for (p, rank) in spec.pairs.iter().zip(ranks) {
                let hodge = p.lambda * p.lambda;
                small += usize::from(hodge < zero);
                modes.push(Mode {
                    color: Color::of_lambda(p.lambda),
                    value: p.lambda,
                    hodge,
                    vector: p.vector.clone(),
                    cluster: p.cluster_id,
                    rank,
                });
            }
        }
        if self.which.closed() {
            let offset = modes.iter().map(|m| m.cluster + 1).max().unwrap_or(0);
            let spec = self.grow(|count| {
                let spec = closed_spectrum(&disc, count, &self.opts.solver)?;
                let hodge = spec.values();
                Ok((spec, hodge))
            })?;
            let ranks = ranks_by(spec.pairs.iter().map(|p| p.rho));
            for (p, rank) in spec.pairs.iter().zip(ranks) {
                modes.push(Mode {
                    color: Color::Closed,
                    value: p.rho,
                    hodge: p.rho,
                    vector: p.vector.clone(),
                    cluster: offset + p.cluster_id,
                    rank,
                });
            }
        }
        let harmonic_dimension = harmonic_dimension(&disc)? + small;
        let velocity = self.path.velocity(t);
        let stretch = g
            .inverse_samples()
            .iter()
            .zip(&velocity.samples)
            .map(|(gi, v)| gi.spectral_norm() * v.spectral_norm())
            .fold(0.0f64, f64::max);
        Ok(Snapshot {
            t,
            modes,
            harmonic_dimension,
            stretch,
            mass: self.which.coclosed().then(|| disc.mass.clone()),
            mass0: self.which.closed().then(|| disc.mass0.clone()),
        })
    }

    /// Solves with `window + margin` modes, enlarging the count until the
    /// top solved value clears the window edge by the relative edge gap.
    fn grow<S>(&self, solve: impl Fn(usize) -> Result<(S, Vec<f64>)>) -> Result<S> {
        let step = self.opts.margin.max(self.window / 2).max(1);
        let cap = 8 * self.window + self.opts.margin;
        let mut count = self.window + self.opts.margin;
        loop {
            let (spec, mut hodge) = solve(count)?;
            hodge.sort_by(f64::total_cmp);
            let clear = hodge.len() > self.window && hodge[hodge.len() - 1] >= hodge[self.window - 1] * (1.0 + self.opts.edge_gap);
            if clear || count >= cap {
                return Ok(spec);
            }
            count += step;
        }
    }

    /// Memoized operators at `t`.
    pub fn discretization(&self, t: f64) -> Result<Arc<Discretization>> {
        let key = t.to_bits();
        if let Some(d) = self.discs.lock().expect("cache lock").get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(Discretization::new(self.mesh, &self.path.eval(t)?)?);
        self.discs.lock().expect("cache lock").insert(key, d.clone());
        Ok(d)
    }

    /// Memoized snapshot for localization.
    pub fn probe(&self, t: f64) -> Result<Arc<Snapshot>> {
        let key = t.to_bits();
        if let Some(s) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.snapshot(t)?);
        self.cache.lock().expect("cache lock").insert(key, s.clone());
        Ok(s)
    }

    /// Solves on the grid (concurrently), then matches consecutive
    /// snapshots, bisecting intervals where a mode in the window finds no
    /// partner.
    pub fn track(&self, t_grid: &[f64]) -> Result<Tracking> {
        if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("t grid must be strictly increasing".into()));
        }
        let solved: Vec<Snapshot> = t_grid.par_iter().map(|&t| self.snapshot(t)).collect::<Result<_>>()?;
        let mut rest = solved.into_iter();
        let mut chain = vec![rest.next().expect("nonempty grid")];
        let mut stack: Vec<(Snapshot, usize)> = rest.rev().map(|s| (s, 0)).collect();
        let mut links = Vec::new();
        let mut unresolved = Vec::new();
        let mut refinements = 0;
        while let Some((mut b, depth)) = stack.pop() {
            let a = chain.last().expect("chain starts nonempty");
            let (link, ok) = self.link(a, &mut b)?;
            if ok || depth >= self.opts.max_refinements {
                if !ok {
                    unresolved.push((a.t, b.t));
                }
                chain.push(b);
                links.push(link);
            } else {
                let mid = self.snapshot(0.5 * (a.t + b.t))?;
                refinements += 1;
                stack.push((b, depth + 1));
                stack.push((mid, depth + 1));
            }
        }
        let (owner, branches) = assemble_branches(&chain, &links);
        Ok(Tracking {
            window: self.window,
            which: self.which,
            snapshots: chain,
            links,
            owner,
            branches,
            unresolved,
            refinements,
        })
    }

    /// Overlap matching of `b` against `a` in the midpoint inner product.
    /// Rotates `b`'s cluster bases onto `a`; returns the links and whether
    /// every mode inside the window was matched.
    fn link(&self, a: &Snapshot, b: &mut Snapshot) -> Result<(Vec<(usize, usize, f64)>, bool)> {
        let gm = self.path.eval(0.5 * (a.t + b.t))?;
        let mut links = Vec::new();
        let mut ok = true;
        for closed in [false, true] {
            let tracked = if closed { self.which.closed() } else { self.which.coclosed() };
            if !tracked {
                continue;
            }
            let mass = if closed {
                self.mesh.assemble_scalar(&gm)?.1
            } else {
                self.mesh.assemble_mass_1forms(&gm)?
            };
            let ia: Vec<usize> = (0..a.modes.len()).filter(|&i| a.modes[i].color.is_closed() == closed).collect();
            let ib: Vec<usize> = (0..b.modes.len()).filter(|&i| b.modes[i].color.is_closed() == closed).collect();
            let mb: Vec<Vec<f64>> = ib.par_iter().map(|&j| mass.matvec(&b.modes[j].vector)).collect();
            let mut o = DMatrix::zeros(ia.len(), ib.len());
            for (r, &i) in ia.iter().enumerate() {
                for (c, mv) in mb.iter().enumerate() {
                    o[(r, c)] = dot(&a.modes[i].vector, mv);
                }
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (c, &j) in ib.iter().enumerate() {
                groups.entry(b.modes[j].cluster).or_default().push(c);
            }
            for cols in groups.values() {
                let color = b.modes[ib[cols[0]]].color;
                let q = procrustes(&o, cols, |r| a.modes[ia[r]].color == color);
                let k = cols.len();
                let rotated: Vec<Vec<f64>> = (0..k)
                    .map(|p| {
                        let mut v = vec![0.0; b.modes[ib[cols[0]]].vector.len()];
                        for (s, &c) in cols.iter().enumerate() {
                            let w = q[(s, p)];
                            if w != 0.0 {
                                v.iter_mut().zip(&b.modes[ib[c]].vector).for_each(|(v, x)| *v += w * x);
                            }
                        }
                        v
                    })
                    .collect();
                let block: Vec<Vec<f64>> = (0..o.nrows())
                    .map(|r| (0..k).map(|p| (0..k).map(|s| o[(r, cols[s])] * q[(s, p)]).sum()).collect())
                    .collect();
                // a rotated vector carries the Rayleigh value of its mixture
                let values: Vec<f64> = (0..k)
                    .map(|p| (0..k).map(|s| q[(s, p)].powi(2) * b.modes[ib[cols[s]]].value).sum())
                    .collect();
                for (p, v) in rotated.into_iter().enumerate() {
                    let mode = &mut b.modes[ib[cols[p]]];
                    mode.vector = v;
                    mode.value = values[p];
                    mode.hodge = if closed { values[p] } else { values[p] * values[p] };
                    for (r, row) in block.iter().enumerate() {
                        o[(r, cols[p])] = row[p];
                    }
                }
            }
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for r in 0..ia.len() {
                for c in 0..ib.len() {
                    let v = o[(r, c)].abs();
                    if a.modes[ia[r]].color == b.modes[ib[c]].color && v >= self.opts.threshold {
                        candidates.push((v, r, c));
                    }
                }
            }
            candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut used_a = vec![false; ia.len()];
            let mut used_b = vec![false; ib.len()];
            for (v, r, c) in candidates {
                if !used_a[r] && !used_b[c] {
                    used_a[r] = true;
                    used_b[c] = true;
                    links.push((ia[r], ib[c], v));
                }
            }
            let lost_a = ia.iter().zip(&used_a).any(|(&i, &u)| !u && a.modes[i].rank < self.window);
            let lost_b = ib.iter().zip(&used_b).any(|(&j, &u)| !u && b.modes[j].rank < self.window);
            ok &= !(lost_a || lost_b);
        }
        links.sort_by_key(|l| l.0);
        Ok((links, ok))
    }

    /// Finds branch `branch` of `tracking` in `snap` by the largest
    /// projection of its vector at the preceding sample onto a cluster.
    pub fn locate(&self, tracking: &Tracking, branch: usize, snap: &Snapshot) -> Result<Located> {
        let br = &tracking.branches[branch];
        // of the neighbouring samples, the one in the smaller cluster pins
        // the branch down best
        let left = br.samples.iter().rev().find(|s| s.t <= snap.t);
        let right = br.samples.iter().find(|s| s.t >= snap.t);
        let size = |s: &BranchSample| {
            let modes = &tracking.snapshots[s.snapshot].modes;
            modes.iter().filter(|m| m.cluster == modes[s.mode].cluster).count()
        };
        let s = match (left, right) {
            (Some(l), Some(r)) => {
                let key = |s: &BranchSample| (size(s), (s.t - snap.t).abs());
                if key(r).0 < key(l).0 || (key(r).0 == key(l).0 && key(r).1 < key(l).1) {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => return Err(Error::Tracking(format!("branch {branch} has no samples"))),
        };
        let reference = &tracking.snapshots[s.snapshot].modes[s.mode].vector;
        let mr = snap.mass_for(br.color).matvec(reference);
        let mut best: Option<(f64, Vec<(usize, f64)>)> = None;
        for members in snap.clusters().values() {
            if snap.modes[members[0]].color != br.color {
                continue;
            }
            let coeffs: Vec<(usize, f64)> = members.iter().map(|&m| (m, dot(&mr, &snap.modes[m].vector))).collect();
            let score: f64 = coeffs.iter().map(|c| c.1 * c.1).sum();
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, coeffs));
            }
        }
        let (score, coeffs) = best.ok_or_else(|| Error::Tracking(format!("branch {branch} has no {} modes at t = {}", br.color.label(), snap.t)))?;
        let n = coeffs.len() as f64;
        let value = coeffs.iter().map(|&(m, _)| snap.modes[m].value).sum::<f64>() / n;
        let hodge = coeffs.iter().map(|&(m, _)| snap.modes[m].hodge).sum::<f64>() / n;
        let mut vector = vec![0.0; reference.len()];
        let norm = score.sqrt().max(f64::MIN_POSITIVE);
        for &(m, c) in &coeffs {
            vector
                .iter_mut()
                .zip(&snap.modes[m].vector)
                .for_each(|(v, x)| *v += c / norm * x);
        }
        Ok(Located {
            value,
            hodge,
            vector,
            score,
        })
    }

    /// Crossing events between branches accepted by `filter`, localized as
    /// configured.
    pub fn detect(
        &self,
        tracking: &Tracking,
        filter: impl Fn(&SpectralBranch, &SpectralBranch) -> bool + Sync,
    ) -> Result<Vec<CrossingEvent>> {
        let refine = |t: f64, i: usize, j: usize| -> Result<f64> {
            let snap = self.probe(t)?;
            Ok(self.locate(tracking, i, &snap)?.hodge - self.locate(tracking, j, &snap)?.hodge)
        };
        match self.opts.localization {
            Localization::Bisection => detect_crossings(&tracking.branches, &self.opts, filter, Some(&refine)),
            Localization::Interpolation => detect_crossings(&tracking.branches, &self.opts, filter, None),
        }
    }

    /// First-order rate of the branch's Hodge value at `t` with
    /// `h = ġ(t)`, from the variation formulas on the located vector.
    pub fn hodge_rate(&self, tracking: &Tracking, branch: usize, t: f64) -> Result<f64> {
        let snap = self.probe(t)?;
        let loc = self.locate(tracking, branch, &snap)?;
        let disc = self.discretization(t)?;
        let h = self.path.velocity(t);
        if tracking.branches[branch].color.is_closed() {
            dec_closed_derivative(&disc, loc.value, &loc.vector, &h)
        } else {
            dec_coclosed_sq_derivative(&disc, loc.value, &loc.vector, &h)
        }
    }
}

/// Free-function form of [`Tracker::track`].
pub fn track(
    mesh: &PeriodicMesh,
    path: &MetricPath,
    t_grid: &[f64],
    window: usize,
    which: Which,
    opts: &TrackOptions,
) -> Result<Tracking> {
    Tracker::new(mesh, path, window, which, opts.clone())?.track(t_grid)
}

/// `n` equally spaced parameters covering [0, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "a grid needs both endpoints");
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Parameter intervals over which the window order of two branches present
/// at both ends changed with no event recorded inside.
pub fn unexplained_order_changes(tracking: &Tracking, events: &[CrossingEvent]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for k in 0..tracking.snapshots.len().saturating_sub(1) {
        let (t0, t1) = (tracking.snapshots[k].t, tracking.snapshots[k + 1].t);
        let before = tracking.order_at(k);
        let after = tracking.order_at(k + 1);
        let common_b: Vec<usize> = before.iter().copied().filter(|x| after.contains(x)).collect();
        let common_a: Vec<usize> = after.iter().copied().filter(|x| before.contains(x)).collect();
        if common_a == common_b {
            continue;
        }
        let explained = (0..common_b.len()).all(|p| {
            (p + 1..common_b.len()).all(|q| {
                let (x, y) = (common_b[p], common_b[q]);
                let swapped = common_a.iter().position(|&z| z == x) > common_a.iter().position(|&z| z == y);
                !swapped || events.iter().any(|e| e.involves(x, y) && e.t >= t0 && e.t <= t1)
            })
        });
        if !explained {
            out.push((t0, t1));
        }
    }
    out
}

fn ranks_by(keys: impl Iterator<Item = f64>) -> Vec<usize> {
    let keys: Vec<f64> = keys.collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let mut rank = vec![0; keys.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Rotation `Q` of the columns `cols` of the overlap matrix maximizing the
/// overlap with the best-aligned rows: `B = U Σ Vᵀ`, `Q = V Uᵀ`.
fn procrustes(o: &DMatrix<f64>, cols: &[usize], row_ok: impl Fn(usize) -> bool) -> DMatrix<f64> {
    let k = cols.len();
    let mut rows: Vec<(f64, usize)> = (0..o.nrows())
        .filter(|&r| row_ok(r))
        .map(|r| (cols.iter().map(|&c| o[(r, c)].powi(2)).sum(), r))
        .collect();
    rows.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut block = DMatrix::zeros(k, k);
    for (p, &(_, r)) in rows.iter().take(k).enumerate() {
        for (q, &c) in cols.iter().enumerate() {
            block[(p, q)] = o[(r, c)];
        }
    }
    if k == 1 {
        let s = if block[(0, 0)] < 0.0 { -1.0 } else { 1.0 };
        return DMatrix::from_element(1, 1, s);
    }
    let svd = block.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    vt.transpose() * u.transpose()
}

fn assemble_branches(chain: &[Snapshot], links: &[Vec<(usize, usize, f64)>]) -> (Vec<Vec<usize>>, Vec<SpectralBranch>) {
    let mut branches: Vec<SpectralBranch> = Vec::new();
    let mut owner: Vec<Vec<usize>> = Vec::with_capacity(chain.len());
    for (k, snap) in chain.iter().enumerate() {
        let mut prev: HashMap<usize, (usize, f64)> = HashMap::new();
        if k > 0 {
            for &(a, b, o) in &links[k - 1] {
                prev.insert(b, (owner[k - 1][a], o));
            }
        }
        let mut own = Vec::with_capacity(snap.modes.len());
        for (m, mode) in snap.modes.iter().enumerate() {
            let (id, overlap) = match prev.get(&m) {
                Some(&(id, o)) => (id, o),
                None => {
                    branches.push(SpectralBranch {
                        id: branches.len(),
                        color: mode.color,
                        samples: Vec::new(),
                        lipschitz: 0.0,
                    });
                    (branches.len() - 1, 1.0)
                }
            };
            branches[id].samples.push(BranchSample {
                t: snap.t,
                value: mode.value,
                hodge: mode.hodge,
                overlap,
                snapshot: k,
                mode: m,
            });
            own.push(id);
        }
        owner.push(own);
    }
    for b in &mut branches {
        let vmax = b.samples.iter().map(|s| s.value.abs()).fold(0.0f64, f64::max);
        let smax = b.samples.iter().map(|s| chain[s.snapshot].stretch).fold(0.0f64, f64::max);
        b.lipschitz = b.color.rate_constant() * vmax * smax;
    }
    (owner, branches)
}

/// Number of independent closed, non-exact discrete 1-forms found from the
/// gradient-free parts of the parallel forms.
fn harmonic_dimension(disc: &Discretization) -> Result<usize> {
    let proj = disc.coclosed_projector()?;
    let scale = disc.spectral_scale().powi(2);
    Ok(proj
        .harmonic_basis()
        .iter()
        .filter(|h| {
            let m = disc.mass.form(h, h);
            let c = disc.curl_curl.form(h, h);
            m.is_finite() && m > 0.5 && c <= 1e-10 * scale * m
        })
        .count())
}

#[derive(Clone, Debug)]
pub struct ForcedCrossingOptions {
    /// Coclosed modes tracked.
    pub window: usize,
    /// Grid points on [0, 1]; odd so the base metric is a grid point.
    pub grid: usize,
    /// Indices into the base spectrum sorted by `λ`; chosen automatically
    /// when absent.
    pub target: Option<[usize; 2]>,
    /// Path half-length in units of the predicted crossing parameter.
    pub overshoot: f64,
    pub track: TrackOptions,
}

impl Default for ForcedCrossingOptions {
    fn default() -> Self {
        Self {
            window: 8,
            grid: 9,
            target: None,
            overshoot: 2.0,
            track: TrackOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ForcedCrossingReport {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// First-order rates of `λ₊`, `λ₋` along `h`.
    pub rate_plus: f64,
    pub rate_minus: f64,
    /// Perturbation size at which the first-order `λ²` values meet.
    pub s_star: f64,
    pub s_max: f64,
    pub predicted_t: f64,
    pub branches: [usize; 2],
    pub events: Vec<CrossingEvent>,
    pub target_event: Option<CrossingEvent>,
    pub word_before: Option<OrderSequence>,
    pub word_after: Option<OrderSequence>,
    pub transposition: bool,
    pub unresolved: Vec<(f64, f64)>,
}

impl ForcedCrossingReport {
    pub fn found(&self) -> bool {
        self.target_event.is_some() && self.transposition
    }
}

/// Builds the direction `h = u₊⊙u₊ − u₋⊙u₋` from a `+`/`−` pair of the base
/// spectrum, checks that both first-order rates are positive, and tracks
/// the path `g₀ + s h`, `s ∈ [−s_max, s_max]`, through the predicted swap
/// of `λ₊²` and `λ₋²`.
pub fn forced_crossing_experiment(
    mesh: &PeriodicMesh,
    g0: &MetricField,
    opts: &ForcedCrossingOptions,
) -> Result<(MetricPath, Tracking, ForcedCrossingReport)> {
    if opts.grid < 3 || opts.grid % 2 == 0 {
        return Err(Error::InvalidConfig("forced-crossing grid must be odd and at least 3".into()));
    }
    let disc = Discretization::new(mesh, g0)?;
    let count = opts.window + opts.track.margin;
    let spec = coclosed_spectrum(&disc, Window::Count(count), &opts.track.solver)?;
    let order = {
        let ranks = ranks_by(spec.pairs.iter().map(|p| p.lambda.abs()));
        let mut order = vec![0; ranks.len()];
        for (i, r) in ranks.into_iter().enumerate() {
            order[r] = i;
        }
        order
    };
    let [ip, im] = match opts.target {
        Some([a, b]) => {
            if a >= spec.pairs.len() || b >= spec.pairs.len() {
                return Err(Error::InvalidConfig("target index outside the solved window".into()));
            }
            if spec.pairs[a].lambda > 0.0 {
                [a, b]
            } else {
                [b, a]
            }
        }
        None => order
            .windows(2)
            .take(opts.window.saturating_sub(1))
            .find(|w| spec.pairs[w[0]].lambda.signum() != spec.pairs[w[1]].lambda.signum())
            .map(|w| if spec.pairs[w[0]].lambda > 0.0 { [w[0], w[1]] } else { [w[1], w[0]] })
            .ok_or_else(|| Error::Tracking("no adjacent +/- pair in the window".into()))?,
    };
    let (pp, pm) = (&spec.pairs[ip], &spec.pairs[im]);
    if pp.lambda <= 0.0 || pm.lambda >= 0.0 {
        return Err(Error::InvalidConfig("target pair must have one eigenvalue of each sign".into()));
    }
    for p in [pp, pm] {
        let size = spec.clusters[p.cluster_id].size();
        if size > 1 {
            return Err(Error::DegenerateCluster(size));
        }
    }
    let up = mesh.whitney_field(&pp.vector);
    let um = mesh.whitney_field(&pm.vector);
    let h = sym_product(&up, &up)?.axpy(-1.0, &sym_product(&um, &um)?)?;
    let h = h.scaled(1.0 / h.max_abs());
    let rate_plus = dec_beltrami_derivative(&disc, pp.lambda, &pp.vector, &h)?;
    let rate_minus = dec_beltrami_derivative(&disc, pm.lambda, &pm.vector, &h)?;
    if rate_plus <= 0.0 || rate_minus <= 0.0 {
        return Err(Error::WrongRates(format!(
            "expected both rates positive, got {rate_plus:.6e} for λ₊ = {:.6} and {rate_minus:.6e} for λ₋ = {:.6}",
            pp.lambda, pm.lambda
        )));
    }
    let gap = pm.lambda * pm.lambda - pp.lambda * pp.lambda;
    let rate_gap = 2.0 * pp.lambda * rate_plus - 2.0 * pm.lambda * rate_minus;
    let s_star = gap / rate_gap;
    let s_max = opts.overshoot * s_star.abs();
    let path = MetricPath::linear(g0.perturbed(&h, -s_max)?, g0.perturbed(&h, s_max)?)?;
    let predicted_t = 0.5 * (1.0 + s_star / s_max);
    let tracker = Tracker::new(mesh, &path, opts.window, Which::Coclosed, opts.track.clone())?;
    let grid = uniform_grid(opts.grid);
    let tracking = tracker.track(&grid)?;
    let base = tracking
        .snapshots
        .iter()
        .position(|s| (s.t - 0.5).abs() < 1e-12)
        .expect("odd grid contains t = 1/2");
    let snap = &tracking.snapshots[base];
    let pick = |x: &[f64]| -> usize {
        let mx = snap.mass_for(Color::CoclosedPlus).matvec(x);
        let best = (0..snap.modes.len())
            .max_by(|&a, &b| dot(&mx, &snap.modes[a].vector).abs().total_cmp(&dot(&mx, &snap.modes[b].vector).abs()))
            .expect("nonempty snapshot");
        tracking.owner[base][best]
    };
    let branches = [pick(&pp.vector), pick(&pm.vector)];
    let is_target = |a: &SpectralBranch, b: &SpectralBranch| branches.contains(&a.id) && branches.contains(&b.id);
    let opposite = |a: &SpectralBranch, b: &SpectralBranch| a.color != b.color && !a.color.is_closed() && !b.color.is_closed();
    let mut events = tracker.detect(&tracking, is_target)?;
    // the remaining opposite-sign pairs only need grid-level localization
    events.extend(detect_crossings(
        &tracking.branches,
        &opts.track,
        |a, b| opposite(a, b) && !is_target(a, b),
        None,
    )?);
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.branches.cmp(&b.branches)));
    let target_event = events
        .iter()
        .find(|e| e.kind == EventKind::Crossing && e.involves(branches[0], branches[1]))
        .cloned();
    let (mut word_before, mut word_after, mut transposition) = (None, None, false);
    if let Some(e) = &target_event {
        let times = tracking.times();
        let kb = times.iter().rposition(|&t| t <= e.bracket[0]).unwrap_or(0);
        let ka = times.iter().position(|&t| t >= e.bracket[1]).unwrap_or(times.len() - 1);
        let tol = opts.track.crossing_tol;
        word_before = Some(order_sequence(&tracking, times[kb], tol));
        word_after = Some(order_sequence(&tracking, times[ka], tol));
        transposition = is_transposition(&tracking.order_at(kb), &tracking.order_at(ka), branches[0], branches[1]);
    }
    let report = ForcedCrossingReport {
        lambda_plus: pp.lambda,
        lambda_minus: pm.lambda,
        rate_plus,
        rate_minus,
        s_star,
        s_max,
        predicted_t,
        branches,
        events,
        target_event,
        word_before,
        word_after,
        transposition,
        unresolved: tracking.unresolved.clone(),
    };
    Ok((path, tracking, report))
}

/// Transversality check of one mixed crossing.
#[derive(Clone, Debug, Serialize)]
pub struct EventCertificate {
    pub event: CrossingEvent,
    /// Number of branch pairs with the same bracket and colors, i.e. the
    /// product of the two cluster sizes.
    pub multiplicity: usize,
    /// `rate_i − rate_j` from the variation formulas at both bracket ends.
    pub rate_difference: [f64; 2],
    /// `(d(b) − d(a)) / (b − a)` for `d = v_i − v_j` on the bracket.
    pub finite_difference: f64,
    pub rel_error: f64,
    /// Both formula differences have the sign of the observed change.
    pub consistent: bool,
    /// Nearest crossing parameter predicted by the continuum formulas, when
    /// the path has constant metrics.
    pub nearest_prediction: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedCoclosedReport {
    pub crossings: Vec<EventCertificate>,
    pub avoided: Vec<CrossingEvent>,
    pub predicted: Vec<f64>,
    pub unresolved: Vec<(f64, f64)>,
    pub min_hodge: f64,
}

impl ClosedCoclosedReport {
    pub fn mixed_crossings(&self) -> usize {
        self.crossings.len()
    }

    pub fn all_consistent(&self) -> bool {
        self.crossings.iter().all(|c| c.consistent)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.crossings.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// Tracks closed and coclosed branches together, detects mixed-type
/// crossings and certifies each with the first-order rates.
pub fn closed_coclosed_experiment(
    mesh: &PeriodicMesh,
    path: &MetricPath,
    t_grid: &[f64],
    window: usize,
    opts: &TrackOptions,
) -> Result<(Tracking, ClosedCoclosedReport)> {
    let tracker = Tracker::new(mesh, path, window, Which::Both, opts.clone())?;
    let tracking = tracker.track(t_grid)?;
    let events = tracker.detect(&tracking, |a, b| a.color.is_closed() != b.color.is_closed())?;
    let predicted = continuum_mixed_crossings(path, t_grid, tracking.scale());
    // pairs drawn from the same two clusters share the bisection sequence
    let mut groups: BTreeMap<(u64, u64, [Color; 2], EventKind), (CrossingEvent, usize)> = BTreeMap::new();
    for e in events {
        let kind = e.kind;
        let key = (e.bracket[0].to_bits(), e.bracket[1].to_bits(), e.colors, kind);
        groups.entry(key).or_insert((e, 0)).1 += 1;
    }
    let mut avoided = Vec::new();
    let mut crossings = Vec::new();
    for (event, multiplicity) in groups.into_values() {
        if event.kind == EventKind::Avoided {
            avoided.push(event);
            continue;
        }
        let [i, j] = event.branches;
        let [a, b] = event.bracket;
        let (a, b) = if b > a { (a, b) } else { (a - opts.resolution, b + opts.resolution) };
        let diff = |t: f64| -> Result<f64> { Ok(tracker.hodge_rate(&tracking, i, t)? - tracker.hodge_rate(&tracking, j, t)?) };
        let gap = |t: f64| -> Result<f64> {
            let snap = tracker.probe(t)?;
            Ok(tracker.locate(&tracking, i, &snap)?.hodge - tracker.locate(&tracking, j, &snap)?.hodge)
        };
        let rate_difference = [diff(a)?, diff(b)?];
        let finite_difference = (gap(b)? - gap(a)?) / (b - a);
        let mean = 0.5 * (rate_difference[0] + rate_difference[1]);
        let rel_error = (finite_difference - mean).abs() / mean.abs().max(f64::MIN_POSITIVE);
        let direction = finite_difference.signum();
        let consistent = rate_difference.iter().all(|r| r.signum() == direction);
        let nearest_prediction = predicted
            .iter()
            .copied()
            .min_by(|x, y| (x - event.t).abs().total_cmp(&(y - event.t).abs()));
        crossings.push(EventCertificate {
            event,
            multiplicity,
            rate_difference,
            finite_difference,
            rel_error,
            consistent,
            nearest_prediction,
        });
    }
    crossings.sort_by(|x, y| x.event.t.total_cmp(&y.event.t));
    avoided.sort_by(|x, y| x.t.total_cmp(&y.t));
    let report = ClosedCoclosedReport {
        crossings,
        avoided,
        predicted,
        unresolved: tracking.unresolved.clone(),
        min_hodge: tracking.min_hodge(),
    };
    Ok((tracking, report))
}

/// Parameters where a continuum closed value `kᵀG⁻¹k` meets a coclosed
/// value `k′ᵀG⁻¹k′` with `k′` not parallel to `k`, for paths of constant
/// metrics; empty otherwise. Values above `ceiling` are ignored.
pub fn continuum_mixed_crossings(path: &MetricPath, t_grid: &[f64], ceiling: f64) -> Vec<f64> {
    let Ok(g0) = path.eval(0.0) else { return Vec::new() };
    if !g0.is_constant() {
        return Vec::new();
    }
    let value = |t: f64, k: [i32; 3]| -> f64 {
        let g = path.eval(t).expect("path validated at t = 0").samples()[0];
        let gi = g.inverse().expect("positive definite");
        let kv = nalgebra::Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
        kv.dot(&(gi.to_matrix() * kv))
    };
    let ks = crate::oracle::half_space(3);
    let mut out: Vec<f64> = Vec::new();
    for (p, &k) in ks.iter().enumerate() {
        for &q in &ks[p + 1..] {
            let parallel = k[0] * q[1] == k[1] * q[0] && k[1] * q[2] == k[2] * q[1] && k[0] * q[2] == k[2] * q[0];
            if parallel {
                continue;
            }
            let d = |t: f64| value(t, k) - value(t, q);
            for w in t_grid.windows(2) {
                let (mut a, mut b) = (w[0], w[1]);
                let (mut da, db) = (d(a), d(b));
                if da.abs() < 1e-14 || db.abs() < 1e-14 || da.signum() == db.signum() || value(a, k) > ceiling {
                    continue;
                }
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    let dm = d(m);
                    if dm.signum() == da.signum() {
                        a = m;
                        da = dm;
                    } else {
                        b = m;
                    }
                }
                let t = 0.5 * (a + b);
                if !out.iter().any(|&s| (s - t).abs() < 1e-9) {
                    out.push(t);
                }
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Conformal path `g(t) = (1 + t)² g₀`.
pub fn conformal_path(g0: &MetricField) -> Result<MetricPath> {
    MetricPath::linear(g0.clone(), g0.scaled(3.0)?)?.with_term(g0.as_tensor(), crate::metric::Profile::Quadratic { amplitude: 1.0 })
}

/// `g(t) = diag(1, 1, (1 + t)²)` sampled on `mesh`.
pub fn stretch_path(mesh: &PeriodicMesh) -> Result<MetricPath> {
    use crate::metric::{Profile, Sym3};
    let g0 = mesh.constant_metric(Sym3::identity())?;
    let g1 = mesh.constant_metric(Sym3::diag(1.0, 1.0, 3.0))?;
    MetricPath::linear(g0, g1)?.with_term(mesh.constant_tensor(Sym3::diag(0.0, 0.0, 1.0)), Profile::Quadratic { amplitude: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{SmoothSym3, Sym3};

    fn quiet() -> TrackOptions {
        TrackOptions::default()
    }

    fn linear_branch(id: usize, color: Color, f: impl Fn(f64) -> f64, times: &[f64]) -> SpectralBranch {
        SpectralBranch {
            id,
            color,
            samples: times
                .iter()
                .enumerate()
                .map(|(k, &t)| BranchSample {
                    t,
                    value: f(t),
                    hodge: f(t),
                    overlap: 1.0,
                    snapshot: k,
                    mode: id,
                })
                .collect(),
            lipschitz: 2.0,
        }
    }

    #[test]
    fn synthetic_linear_crossing_is_localized() {
        let times = uniform_grid(11);
        let f = |t: f64| 1.0 + 0.5 * t;
        let g = |t: f64| 1.5 - 0.5 * t;
        let branches = vec![
            linear_branch(0, Color::CoclosedPlus, f, &times),
            linear_branch(1, Color::CoclosedMinus, g, &times),
        ];
        let refine = |t: f64, i: usize, _j: usize| -> Result<f64> { Ok(if i == 0 { f(t) - g(t) } else { g(t) - f(t) }) };
        let events = detect_crossings(&branches, &quiet(), |_, _| true, Some(&refine)).unwrap();
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!(e.kind, EventKind::Crossing);
        assert!((e.t - 0.5).abs() <= 1e-4, "t = {}", e.t);
        assert!(e.bracket[1] - e.bracket[0] <= 1e-4 || e.gap_min <= 1e-8);
        assert_eq!(e.colors, [Color::CoclosedPlus, Color::CoclosedMinus]);
    }

    #[test]
    fn synthetic_avoided_crossing_is_reported() {
        let times = uniform_grid(21);
        let f = |t: f64| 1.0 + (0.25 * (t - 0.5) * (t - 0.5) + 1e-5).sqrt();
        let g = |t: f64| 1.0 - (0.25 * (t - 0.5) * (t - 0.5) + 1e-5).sqrt();
        let branches = vec![
            linear_branch(0, Color::CoclosedPlus, f, &times),
            linear_branch(1, Color::CoclosedPlus, g, &times),
        ];
        let refine = |t: f64, _: usize, _: usize| -> Result<f64> { Ok(f(t) - g(t)) };
        let events = detect_crossings(&branches, &quiet(), |_, _| true, Some(&refine)).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Avoided);
        assert!((events[0].gap_min - 2.0 * 1e-5f64.sqrt()).abs() < 1e-9);
        assert!((events[0].t - 0.5).abs() < 1e-3);
    }

    #[test]
    fn interpolation_localizes_without_solves() {
        let times = uniform_grid(5);
        let branches = vec![
            linear_branch(0, Color::Closed, |t| 2.0 * t, &times),
            linear_branch(1, Color::CoclosedPlus, |_| 0.8, &times),
        ];
        let events = detect_crossings(&branches, &quiet(), |_, _| true, None).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].t - 0.4).abs() < 1e-12);
        assert!(events[0].colors[0].is_closed());
    }

    #[test]
    fn transposition_detection() {
        assert!(is_transposition(&[1, 2, 3, 4], &[1, 3, 2, 4], 2, 3));
        assert!(!is_transposition(&[1, 2, 3, 4], &[1, 3, 2, 4], 1, 2));
        assert!(!is_transposition(&[1, 2, 3], &[3, 2, 1], 1, 3));
        assert!(is_transposition(&[1, 2, 3, 9], &[2, 1, 3, 7], 1, 2));
    }

    #[test]
    fn constant_path_gives_horizontal_branches() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let g = mesh.sample_metric(&SmoothSym3::random_metric(0.2, 6, 3)).unwrap();
        let path = MetricPath::linear(g.clone(), g).unwrap();
        let t = track(&mesh, &path, &uniform_grid(3), 6, Which::Both, &quiet()).unwrap();
        assert!(t.unresolved.is_empty());
        assert_eq!(t.refinements, 0);
        for b in &t.branches {
            assert_eq!(b.samples.len(), 3);
            let v0 = b.samples[0].value;
            assert!(b.samples.iter().all(|s| (s.value - v0).abs() <= 1e-9 * v0.abs()));
            assert!(b.min_overlap() > 0.99);
            assert_eq!(b.lipschitz, 0.0);
        }
        let events = Tracker::new(&mesh, &path, 6, Which::Both, quiet()).unwrap().detect(&t, |_, _| true).unwrap();
        assert!(events.iter().all(|e| e.kind != EventKind::Crossing));
        let w0 = order_sequence(&t, 0.0, 1e-8).word();
        assert_eq!(w0, order_sequence(&t, 1.0, 1e-8).word());
        assert!(t.harmonic_dimensions().iter().all(|&d| d == 3));
    }

    #[test]
    fn conformal_path_follows_scaling_law() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let g0 = mesh.sample_metric(&SmoothSym3::random_metric(0.2, 6, 5)).unwrap();
        let path = conformal_path(&g0).unwrap();
        let grid = uniform_grid(4);
        let tracker = Tracker::new(&mesh, &path, 6, Which::Both, quiet()).unwrap();
        let t = tracker.track(&grid).unwrap();
        assert!(t.unresolved.is_empty());
        for b in t.branches.iter().filter(|b| b.samples[0].snapshot == 0) {
            let v0 = b.samples[0].value;
            for s in &b.samples {
                let c = 1.0 + s.t;
                let expect = if b.color.is_closed() { v0 / (c * c) } else { v0 / c };
                // members of one cluster may trade places; they agree to the cluster tolerance
                assert!((s.value - expect).abs() <= 1e-6 * expect.abs(), "{} vs {}", s.value, expect);
            }
            assert!(b.is_continuous());
        }
        let events = tracker.detect(&t, |_, _| true).unwrap();
        assert!(events.iter().all(|e| e.kind != EventKind::Crossing), "{events:?}");
        let w = order_sequence(&t, 0.0, 1e-8).word();
        for s in &grid {
            assert_eq!(order_sequence(&t, *s, 1e-8).word(), w);
        }
        assert!(unexplained_order_changes(&t, &events).is_empty());
    }

    #[test]
    fn stretch_path_predictions() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let path = stretch_path(&mesh).unwrap();
        let g = path.eval(0.5).unwrap().samples()[0];
        assert!((g.to_matrix()[(2, 2)] - 2.25).abs() < 1e-14);
        let predicted = continuum_mixed_crossings(&path, &uniform_grid(11), 3.0);
        for t in [2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0] {
            assert!(predicted.iter().any(|&p| (p - t).abs() < 1e-9), "{t} missing from {predicted:?}");
        }
    }

    #[test]
    fn branch_csv_has_header_and_rows() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let g = mesh.constant_metric(Sym3::identity()).unwrap();
        let path = MetricPath::linear(g.clone(), g).unwrap();
        let t = track(&mesh, &path, &uniform_grid(2), 4, Which::Closed, &quiet()).unwrap();
        let csv = t.branch_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,branch_id,type,value,color,overlap");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 2 * t.snapshots[0].modes.len());
        assert!(rows.iter().all(|r| r.split(',').count() == 6 && r.contains(",closed,")));
    }

    #[test]
    fn same_sign_target_is_rejected() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let g0 = mesh.sample_metric(&SmoothSym3::random_metric(0.2, 6, 9)).unwrap();
        let disc = Discretization::new(&mesh, &g0).unwrap();
        let spec = coclosed_spectrum(&disc, Window::Count(8), &SolverOptions::default()).unwrap();
        let plus: Vec<usize> = (0..spec.pairs.len()).filter(|&i| spec.pairs[i].lambda > 0.0).collect();
        let opts = ForcedCrossingOptions {
            target: Some([plus[0], plus[1]]),
            ..Default::default()
        };
        assert!(forced_crossing_experiment(&mesh, &g0, &opts).is_err());
    }
}
