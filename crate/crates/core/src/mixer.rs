//! Centralized mixing networks: VDN, QMIX and the hierarchy-conditioned
//! mixer with its Gaussian hierarchy policy.
//!
//! Every weight that multiplies a utility passes through `abs`, so
//! `dQ_tot/dQ_i >= 0` holds for any parameters and the joint argmax of
//! `Q_tot` decomposes into per-agent argmaxes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::gradcore::{init_mlp, mlp, mlp_param_count, Activation, Matrix, ParamStore, Tape, Var};

/// Parameter prefix of the hierarchy policy.
pub const HIERARCHY_PREFIX: &str = "theta";
/// Parameter prefix of mixer parameters (decoder and hypernetworks).
pub const MIXER_PREFIX: &str = "zeta";
/// Lower bound added to `softplus` when mapping to standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Largest joint action space [`igm_check`] will enumerate.
pub const IGM_LIMIT: usize = 100_000;

/// Mixer variants selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixerKind {
    Vdn,
    Qmix,
    QmixLarge,
    Mnmpg,
    /// Hierarchy sample detached from the TD-loss gradient.
    MnmpgNoGrad,
    /// Hypernetworks see only the decoded hierarchy, not the full state.
    MnmpgNoState,
}

impl MixerKind {
    pub const ALL: [MixerKind; 6] = [
        MixerKind::Vdn,
        MixerKind::Qmix,
        MixerKind::QmixLarge,
        MixerKind::Mnmpg,
        MixerKind::MnmpgNoGrad,
        MixerKind::MnmpgNoState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
            MixerKind::QmixLarge => "qmix_large",
            MixerKind::Mnmpg => "mnmpg",
            MixerKind::MnmpgNoGrad => "mnmpg_no_grad",
            MixerKind::MnmpgNoState => "mnmpg_no_state",
        }
    }

    pub fn has_hierarchy(self) -> bool {
        matches!(self, MixerKind::Mnmpg | MixerKind::MnmpgNoGrad | MixerKind::MnmpgNoState)
    }

    pub fn detaches_hierarchy(self) -> bool {
        self == MixerKind::MnmpgNoGrad
    }

    fn hypernet_sees_state(self) -> bool {
        !matches!(self, MixerKind::MnmpgNoState)
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixerKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = MixerKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown mixer `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

impl serde::Serialize for MixerKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for MixerKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// Sizes shared by all mixers.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerDims {
    pub n_agents: usize,
    pub state_dim: usize,
    /// Hierarchy dimension `K`.
    pub hierarchy_dim: usize,
    /// Hidden width of the hierarchy MLP; 0 makes it a single linear layer.
    pub hierarchy_hidden: usize,
    pub decoder_dim: usize,
    /// Mixing hidden width `H`.
    pub embed: usize,
}

impl MixerDims {
    pub fn new(n_agents: usize, state_dim: usize) -> Self {
        Self {
            n_agents,
            state_dim,
            hierarchy_dim: 3,
            hierarchy_hidden: 32,
            decoder_dim: 16,
            embed: 32,
        }
    }
}

/// Gaussian hierarchy policy `z ~ N(mu(s), sigma(s))` with
/// `sigma = softplus(rho) + SIGMA_FLOOR`.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyNet {
    pub state_dim: usize,
    pub k: usize,
    pub hidden: usize,
}

/// Tape handles of a batched hierarchy pass (`rows x K` each).
#[derive(Clone, Copy, Debug)]
pub struct HierarchyVars {
    pub z: Var,
    pub mu: Var,
    pub sigma: Var,
}

impl HierarchyNet {
    pub fn arch(&self) -> Vec<usize> {
        if self.hidden == 0 {
            vec![self.state_dim, 2 * self.k]
        } else {
            vec![self.state_dim, self.hidden, 2 * self.k]
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        init_mlp(store, HIERARCHY_PREFIX, &self.arch(), rng)
    }

    pub fn param_count(&self) -> usize {
        mlp_param_count(&self.arch())
    }

    /// `(mu, sigma)` for a batch of states.
    pub fn distribution(&self, tape: &mut Tape, store: &ParamStore, states: Var, track: bool) -> Result<(Var, Var)> {
        let out = mlp(tape, store, HIERARCHY_PREFIX, states, &self.arch(), Activation::Elu, track)?;
        let mu = tape.slice_cols(out, 0, self.k)?;
        let rho = tape.slice_cols(out, self.k, self.k)?;
        let sp = tape.softplus(rho);
        let sigma = tape.add_scalar(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    /// Reparameterized sample `z = mu + sigma * noise`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: Var,
        noise: &Matrix,
        track: bool,
    ) -> Result<HierarchyVars> {
        let (mu, sigma) = self.distribution(tape, store, states, track)?;
        if noise.shape() != tape.value(mu).shape() {
            return Err(shape_err(
                "hierarchy noise",
                format!("{:?}", tape.value(mu).shape()),
                format!("{:?}", noise.shape()),
            ));
        }
        let eps = tape.input(noise.clone());
        let scaled = tape.mul(sigma, eps)?;
        let z = tape.add(mu, scaled)?;
        Ok(HierarchyVars { z, mu, sigma })
    }

    /// Per-row `log N(z; mu(s), sigma(s))` with `z` held constant.
    pub fn log_density(&self, tape: &mut Tape, store: &ParamStore, states: Var, z: &Matrix, track: bool) -> Result<Var> {
        let (mu, sigma) = self.distribution(tape, store, states, track)?;
        if z.shape() != tape.value(mu).shape() {
            return Err(shape_err(
                "hierarchy sample",
                format!("{:?}", tape.value(mu).shape()),
                format!("{:?}", z.shape()),
            ));
        }
        let zv = tape.input(z.clone());
        tape.gaussian_logpdf(zv, mu, sigma)
    }
}

/// One hierarchy draw for a single state.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchySample {
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Reparameterized hierarchy sample for one state and a given noise draw.
pub fn hierarchy_forward(store: &ParamStore, net: &HierarchyNet, s: &[f64], eps: &[f64]) -> Result<HierarchySample> {
    let mut tape = Tape::new();
    let sv = tape.input(Matrix::row_vector(s));
    let h = net.sample(&mut tape, store, sv, &Matrix::row_vector(eps), false)?;
    Ok(HierarchySample {
        eps: eps.to_vec(),
        z: tape.value(h.z).as_slice().to_vec(),
        mu: tape.value(h.mu).as_slice().to_vec(),
        sigma: tape.value(h.sigma).as_slice().to_vec(),
    })
}

/// Scalar output of a single-sample network call, with its tape.
#[derive(Debug)]
pub struct ScalarOutput {
    pub value: f64,
    pub tape: Tape,
    pub output: Var,
}

/// `log N(z; mu_theta(s), sigma_theta(s))`, differentiable w.r.t. theta.
pub fn hierarchy_logpdf(store: &ParamStore, net: &HierarchyNet, s: &[f64], z: &[f64]) -> Result<ScalarOutput> {
    let mut tape = Tape::new();
    let sv = tape.input(Matrix::row_vector(s));
    let out = net.log_density(&mut tape, store, sv, &Matrix::row_vector(z), true)?;
    Ok(ScalarOutput {
        value: tape.scalar(out),
        tape,
        output: out,
    })
}

/// Handles produced by a batched mixer pass.
#[derive(Clone, Copy, Debug)]
pub struct MixVars {
    /// `rows x 1`.
    pub q_tot: Var,
    /// Hierarchy sample, for mixers that have one.
    pub z: Option<Var>,
    /// `|W1|`, `rows x (n * H)`.
    pub w1: Option<Var>,
    pub b1: Option<Var>,
    /// `|w2|`, `rows x H`.
    pub w2: Option<Var>,
    /// State value head, `rows x 1`.
    pub v: Option<Var>,
    /// `Q_tot - V(s)`.
    pub mixed: Option<Var>,
}

/// Which parameter groups receive gradients in a mixer pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Track {
    pub mixer: bool,
    pub hierarchy: bool,
}

impl Track {
    pub const ALL: Track = Track {
        mixer: true,
        hierarchy: true,
    };
    pub const NONE: Track = Track {
        mixer: false,
        hierarchy: false,
    };
}

/// A configured mixing network.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixer {
    kind: MixerKind,
    dims: MixerDims,
    embed: usize,
    hierarchy: Option<HierarchyNet>,
}

const DECODER: &str = "zeta.dec";
const HEAD_W1: &str = "zeta.w1";
const HEAD_B1: &str = "zeta.b1";
const HEAD_W2: &str = "zeta.w2";
const HEAD_V: &str = "zeta.v";

impl Mixer {
    pub fn new(kind: MixerKind, dims: MixerDims) -> Self {
        let hierarchy = kind.has_hierarchy().then_some(HierarchyNet {
            state_dim: dims.state_dim,
            k: dims.hierarchy_dim,
            hidden: dims.hierarchy_hidden,
        });
        let embed = match kind {
            MixerKind::QmixLarge => matched_qmix_embed(&dims),
            _ => dims.embed,
        };
        Self {
            kind,
            dims,
            embed,
            hierarchy,
        }
    }

    pub fn kind(&self) -> MixerKind {
        self.kind
    }

    pub fn dims(&self) -> &MixerDims {
        &self.dims
    }

    /// Effective mixing width (differs from `dims.embed` for `qmix_large`).
    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn hierarchy(&self) -> Option<&HierarchyNet> {
        self.hierarchy.as_ref()
    }

    fn hypernet_input_dim(&self) -> usize {
        match self.kind {
            MixerKind::Vdn => 0,
            MixerKind::Qmix | MixerKind::QmixLarge => self.dims.state_dim,
            MixerKind::Mnmpg | MixerKind::MnmpgNoGrad => self.dims.decoder_dim + self.dims.state_dim,
            MixerKind::MnmpgNoState => self.dims.decoder_dim,
        }
    }

    fn decoder_arch(&self) -> [usize; 3] {
        [self.dims.hierarchy_dim, self.dims.decoder_dim, self.dims.decoder_dim]
    }

    fn head_archs(&self) -> [(&'static str, Vec<usize>); 4] {
        let x = self.hypernet_input_dim();
        let (n, h, s) = (self.dims.n_agents, self.embed, self.dims.state_dim);
        [
            (HEAD_W1, vec![x, n * h]),
            (HEAD_B1, vec![x, h]),
            (HEAD_W2, vec![x, h]),
            (HEAD_V, vec![s, h, 1]),
        ]
    }

    /// Registers the mixer's parameters (and the hierarchy's, if any).
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.kind == MixerKind::Vdn {
            return Ok(());
        }
        if let Some(h) = &self.hierarchy {
            h.init(store, rng)?;
            init_mlp(store, DECODER, &self.decoder_arch(), rng)?;
        }
        for (name, arch) in self.head_archs() {
            init_mlp(store, name, &arch, rng)?;
        }
        Ok(())
    }

    /// Scalars owned by the mixing side: mixer parameters plus the hierarchy.
    pub fn param_count(&self) -> usize {
        if self.kind == MixerKind::Vdn {
            return 0;
        }
        let heads: usize = self.head_archs().iter().map(|(_, a)| mlp_param_count(a)).sum();
        let hier = self
            .hierarchy
            .as_ref()
            .map_or(0, |h| h.param_count() + mlp_param_count(&self.decoder_arch()));
        heads + hier
    }

    /// Batched `Q_tot` given the per-agent chosen utilities `q` (`rows x n`).
    /// `noise` (`rows x K`) is the stored hierarchy noise; ignored by mixers
    /// without a hierarchy.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: Var,
        noise: &Matrix,
        q: Var,
        track: Track,
    ) -> Result<MixVars> {
        let z = match &self.hierarchy {
            Some(h) => {
                let track_theta = track.hierarchy && !self.kind.detaches_hierarchy();
                let vars = h.sample(tape, store, states, noise, track_theta)?;
                Some(if self.kind.detaches_hierarchy() { tape.detach(vars.z) } else { vars.z })
            }
            None => None,
        };
        self.mix(tape, store, states, z, q, track.mixer)
    }

    /// Mixes with an explicit hierarchy handle (`None` for VDN/QMIX).
    pub fn mix(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: Var,
        z: Option<Var>,
        q: Var,
        track: bool,
    ) -> Result<MixVars> {
        let (rows, n) = tape.value(q).shape();
        if n != self.dims.n_agents {
            return Err(shape_err("mixer utilities", self.dims.n_agents, n));
        }
        if self.kind == MixerKind::Vdn {
            let ones = tape.input(Matrix::filled(n, 1, 1.0));
            let q_tot = tape.matmul(q, ones)?;
            return Ok(MixVars {
                q_tot,
                z: None,
                w1: None,
                b1: None,
                w2: None,
                v: None,
                mixed: Some(q_tot),
            });
        }
        let (s_rows, s_cols) = tape.value(states).shape();
        if s_rows != rows || s_cols != self.dims.state_dim {
            return Err(shape_err(
                "mixer states",
                format!("{rows}x{}", self.dims.state_dim),
                format!("{s_rows}x{s_cols}"),
            ));
        }

        let hyper_in = if self.hierarchy.is_some() {
            let z = z.ok_or_else(|| Error::InvalidArgument(format!("mixer `{}` needs a hierarchy sample", self.kind)))?;
            let (zr, zc) = tape.value(z).shape();
            if zr != rows || zc != self.dims.hierarchy_dim {
                return Err(shape_err("hierarchy sample", format!("{rows}x{}", self.dims.hierarchy_dim), format!("{zr}x{zc}")));
            }
            let d = mlp(tape, store, DECODER, z, &self.decoder_arch(), Activation::Elu, track)?;
            if self.kind.hypernet_sees_state() {
                tape.concat_cols(&[d, states])?
            } else {
                d
            }
        } else {
            states
        };

        let [(_, a_w1), (_, a_b1), (_, a_w2), (_, a_v)] = self.head_archs();
        let raw_w1 = mlp(tape, store, HEAD_W1, hyper_in, &a_w1, Activation::None, track)?;
        let w1 = tape.abs(raw_w1);
        let b1 = mlp(tape, store, HEAD_B1, hyper_in, &a_b1, Activation::None, track)?;
        let raw_w2 = mlp(tape, store, HEAD_W2, hyper_in, &a_w2, Activation::None, track)?;
        let w2 = tape.abs(raw_w2);
        let v = mlp(tape, store, HEAD_V, states, &a_v, Activation::Relu, track)?;

        let pre = tape.row_mix(q, w1, self.embed)?;
        let pre = tape.add(pre, b1)?;
        let hidden = tape.elu(pre);
        let mixed = tape.row_dot(hidden, w2)?;
        let q_tot = tape.add(mixed, v)?;
        Ok(MixVars {
            q_tot,
            z,
            w1: Some(w1),
            b1: Some(b1),
            w2: Some(w2),
            v: Some(v),
            mixed: Some(mixed),
        })
    }

    /// Forward-only `Q_tot` for each row of `q`.
    pub fn evaluate(&self, store: &ParamStore, states: &Matrix, noise: &Matrix, q: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let sv = tape.input(states.clone());
        let qv = tape.input(q.clone());
        let out = self.forward(&mut tape, store, sv, noise, qv, Track::NONE)?;
        Ok(tape.value(out.q_tot).as_slice().to_vec())
    }

    /// IGM check for one state: every joint action is mixed in a single batch.
    pub fn igm_check(&self, store: &ParamStore, s: &[f64], noise: &[f64], utility_qs: &[Vec<f64>]) -> Result<bool> {
        igm_check(utility_qs, |joint| {
            let rows = joint.rows();
            let states = Matrix::from_rows(&vec![s; rows])?;
            let noise = Matrix::from_rows(&vec![noise; rows])?;
            self.evaluate(store, &states, &noise, joint)
        })
    }
}

/// Hypernetwork width for `qmix_large`: the QMIX width whose parameter count
/// is closest to the hierarchy mixer (decoder, heads and hierarchy) built
/// from the same dims.
pub fn matched_qmix_embed(dims: &MixerDims) -> usize {
    let target = Mixer::new(MixerKind::Mnmpg, dims.clone()).param_count() as i64;
    let count = |h: usize| {
        let d = MixerDims { embed: h, ..dims.clone() };
        Mixer::new(MixerKind::Qmix, d).param_count() as i64
    };
    (1..=4096).min_by_key(|&h| (count(h) - target).abs()).unwrap_or(dims.embed)
}

/// Single-sample hierarchy mixer with an explicit `z`. With `detach_z` the
/// gradient w.r.t. `z` is cut.
#[derive(Debug)]
pub struct MixOutput {
    pub q_tot: f64,
    pub tape: Tape,
    pub output: Var,
    pub z: Option<Var>,
    pub q: Var,
    pub states: Var,
}

pub fn mnmpg_mix(mixer: &Mixer, store: &ParamStore, z: &[f64], s: &[f64], q: &[f64], detach_z: bool) -> Result<MixOutput> {
    if !mixer.kind().has_hierarchy() {
        return Err(Error::InvalidArgument(format!("mixer `{}` has no hierarchy", mixer.kind())));
    }
    let mut tape = Tape::new();
    let sv = tape.input(Matrix::row_vector(s));
    let qv = tape.input(Matrix::row_vector(q));
    let zv = tape.input(Matrix::row_vector(z));
    let used = if detach_z { tape.detach(zv) } else { zv };
    let vars = mixer.mix(&mut tape, store, sv, Some(used), qv, true)?;
    Ok(MixOutput {
        q_tot: tape.scalar(vars.q_tot),
        tape,
        output: vars.q_tot,
        z: Some(zv),
        q: qv,
        states: sv,
    })
}

/// Single-sample QMIX.
pub fn qmix_mix(mixer: &Mixer, store: &ParamStore, s: &[f64], q: &[f64]) -> Result<MixOutput> {
    if !matches!(mixer.kind(), MixerKind::Qmix | MixerKind::QmixLarge) {
        return Err(Error::InvalidArgument(format!("mixer `{}` is not a QMIX mixer", mixer.kind())));
    }
    let mut tape = Tape::new();
    let sv = tape.input(Matrix::row_vector(s));
    let qv = tape.input(Matrix::row_vector(q));
    let vars = mixer.mix(&mut tape, store, sv, None, qv, true)?;
    Ok(MixOutput {
        q_tot: tape.scalar(vars.q_tot),
        tape,
        output: vars.q_tot,
        z: None,
        q: qv,
        states: sv,
    })
}

/// Sum of utilities.
pub fn vdn_mix(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Empty("utility vector"));
    }
    Ok(q.iter().sum())
}

/// Whether the joint argmax of a mixer equals the tuple of per-agent argmaxes.
///
/// `joint_value` receives one row per joint action (lexicographic order, last
/// agent fastest) holding the chosen per-agent utilities and returns `Q_tot`
/// for each row. Ties resolve to the lowest index at both levels.
pub fn igm_check<F>(utility_qs: &[Vec<f64>], joint_value: F) -> Result<bool>
where
    F: FnOnce(&Matrix) -> Result<Vec<f64>>,
{
    if utility_qs.is_empty() || utility_qs.iter().any(Vec::is_empty) {
        return Err(Error::Empty("utility table"));
    }
    let mut size: usize = 1;
    for q in utility_qs {
        size = size.saturating_mul(q.len());
        if size > IGM_LIMIT {
            return Err(Error::SpaceTooLarge {
                size: utility_qs.iter().map(|q| q.len() as u128).product(),
                limit: IGM_LIMIT as u128,
            });
        }
    }
    let n = utility_qs.len();
    let mut rows = Vec::with_capacity(size * n);
    let mut joint = vec![0usize; n];
    let mut actions = Vec::with_capacity(size);
    for _ in 0..size {
        rows.extend(joint.iter().enumerate().map(|(i, &a)| utility_qs[i][a]));
        actions.push(joint.clone());
        for i in (0..n).rev() {
            joint[i] += 1;
            if joint[i] < utility_qs[i].len() {
                break;
            }
            joint[i] = 0;
        }
    }
    let values = joint_value(&Matrix::from_vec(size, n, rows)?)?;
    if values.len() != size {
        return Err(shape_err("joint values", size, values.len()));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let per_agent: Vec<usize> = utility_qs
        .iter()
        .map(|q| crate::agents::greedy(q))
        .collect::<Result<_>>()?;
    Ok(actions[best] == per_agent)
}
