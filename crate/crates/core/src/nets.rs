//! Policy network `g(s, a_t, b, t)`, critic ensemble `Q(s, a)`, and its delayed target.

use crate::embed;
use crate::error::{Error, Result};
use crate::meanflow::Variant;
use crate::mlp::{
    init_mlp, mlp_backward, mlp_backward_input, mlp_forward, mlp_jvp_with_cache, mlp_predict,
    FinalInit, ForwardCache, MlpParams, MlpSpec,
};
use crate::optim::ParamSet;
use crate::tensor::{DualTensor, Tensor};

pub const DEFAULT_TIME_EMBED_DIM: usize = 32;
pub const DEFAULT_ACTOR_HIDDEN: [usize; 3] = [256, 256, 256];
pub const DEFAULT_CRITIC_HIDDEN: [usize; 4] = [512, 512, 512, 512];
pub const DEFAULT_TAU: f64 = 0.005;

/// The generative policy head. Its raw output is `g`; how `g` becomes an action
/// depends on [`Variant`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    mlp: MlpParams,
    state_dim: usize,
    action_dim: usize,
    time_embed_dim: usize,
    variant: Variant,
}

impl PolicyNet {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        time_embed_dim: usize,
        variant: Variant,
        seed: u64,
    ) -> Result<Self> {
        embed::validate_dim(time_embed_dim)?;
        let mut sizes = vec![state_dim + action_dim + 2 * time_embed_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mlp = init_mlp(&MlpSpec::new(sizes, false, FinalInit::Zero), seed)?;
        Self::from_parts(mlp, state_dim, action_dim, time_embed_dim, variant)
    }

    pub fn from_parts(
        mlp: MlpParams,
        state_dim: usize,
        action_dim: usize,
        time_embed_dim: usize,
        variant: Variant,
    ) -> Result<Self> {
        embed::validate_dim(time_embed_dim)?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::config(
                "state and action dimensions must be positive",
            ));
        }
        let spec = mlp.spec();
        if spec.input_dim() != state_dim + action_dim + 2 * time_embed_dim
            || spec.output_dim() != action_dim
        {
            return Err(Error::shape(format!(
                "policy MLP {:?} does not fit state {state_dim}, action {action_dim}, embed {time_embed_dim}",
                spec.layer_sizes
            )));
        }
        Ok(PolicyNet {
            mlp,
            state_dim,
            action_dim,
            time_embed_dim,
            variant,
        })
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpParams {
        &mut self.mlp
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    fn check_inputs(&self, s: &Tensor, a_t: &Tensor, b: &Tensor, t: &Tensor) -> Result<usize> {
        let batch = s.rows();
        if s.rank() != 2 || s.cols() != self.state_dim {
            return Err(Error::shape(format!(
                "policy expects state [B, {}], got {:?}",
                self.state_dim,
                s.shape()
            )));
        }
        if a_t.rank() != 2 || a_t.shape() != [batch, self.action_dim] {
            return Err(Error::shape(format!(
                "policy expects action [{batch}, {}], got {:?}",
                self.action_dim,
                a_t.shape()
            )));
        }
        for (name, x) in [("b", b), ("t", t)] {
            if x.len() != batch {
                return Err(Error::shape(format!(
                    "{name} has {} entries for batch {batch}",
                    x.len()
                )));
            }
            if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(batch)
    }

    /// Network input rows `[s ‖ a_t ‖ embed(b) ‖ embed(t)]`, plus the tangent rows
    /// `[0 ‖ v ‖ 0 ‖ d embed(t)/dt]` when `v` is given.
    fn build_input(
        &self,
        s: &Tensor,
        a_t: &Tensor,
        b: &Tensor,
        t: &Tensor,
        v: Option<&Tensor>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let batch = self.check_inputs(s, a_t, b, t)?;
        if let Some(v) = v {
            a_t.same_shape(v, "policy tangent")?;
        }
        let (sd, ad, ed) = (self.state_dim, self.action_dim, self.time_embed_dim);
        let width = sd + ad + 2 * ed;
        let mut x = vec![0.0; batch * width];
        let mut dx = v.map(|_| vec![0.0; batch * width]);
        for i in 0..batch {
            let row = &mut x[i * width..(i + 1) * width];
            row[..sd].copy_from_slice(s.row(i));
            row[sd..sd + ad].copy_from_slice(a_t.row(i));
            let (_, rest) = row.split_at_mut(sd + ad);
            let (eb, et) = rest.split_at_mut(ed);
            embed::embed_into(b.data()[i], eb, None);
            match (&mut dx, v) {
                (Some(dx), Some(v)) => {
                    let drow = &mut dx[i * width..(i + 1) * width];
                    drow[sd..sd + ad].copy_from_slice(v.row(i));
                    embed::embed_into(t.data()[i], et, Some(&mut drow[sd + ad + ed..]));
                }
                _ => embed::embed_into(t.data()[i], et, None),
            }
        }
        let x = Tensor::matrix(batch, width, x)?;
        let dx = dx.map(|d| Tensor::matrix(batch, width, d)).transpose()?;
        Ok((x, dx))
    }
}

/// `g(s, a_t, b, t)`.
pub fn policy_forward(
    g: &PolicyNet,
    s: &Tensor,
    a_t: &Tensor,
    b: &Tensor,
    t: &Tensor,
) -> Result<Tensor> {
    let (x, _) = g.build_input(s, a_t, b, t, None)?;
    mlp_predict(&g.mlp, &x)
}

/// [`policy_forward`] keeping the cache for [`policy_backward`].
pub fn policy_forward_cached(
    g: &PolicyNet,
    s: &Tensor,
    a_t: &Tensor,
    b: &Tensor,
    t: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    let (x, _) = g.build_input(s, a_t, b, t, None)?;
    mlp_forward(&g.mlp, &x)
}

/// Output and total time derivative `dg/dt = v·∂_{a_t} g + ∂_t g`.
///
/// The tangent is zero for the state and for `b`, `v` for `a_t`, and 1 for `t`.
pub fn policy_jvp(
    g: &PolicyNet,
    s: &Tensor,
    a_t: &Tensor,
    b: &Tensor,
    t: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (out, dgdt, _) = policy_jvp_cached(g, s, a_t, b, t, v)?;
    Ok((out, dgdt))
}

pub fn policy_jvp_cached(
    g: &PolicyNet,
    s: &Tensor,
    a_t: &Tensor,
    b: &Tensor,
    t: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, Tensor, ForwardCache)> {
    let (x, dx) = g.build_input(s, a_t, b, t, Some(v))?;
    let dual = DualTensor::new(x, dx.unwrap())?;
    mlp_jvp_with_cache(&g.mlp, &dual)
}

/// Parameter gradients of `sum(g_out ⊙ dl_dg)`.
pub fn policy_backward(g: &PolicyNet, cache: &ForwardCache, dl_dg: &Tensor) -> Result<MlpParams> {
    Ok(mlp_backward(&g.mlp, cache, dl_dg)?.0)
}

impl ParamSet for PolicyNet {
    fn param_tensors(&self) -> Vec<&Tensor> {
        self.mlp.param_tensors()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.param_tensors_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
}

/// Ensemble of Q-networks over `[s ‖ a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    members: Vec<MlpParams>,
    aggregation: Aggregation,
    state_dim: usize,
    action_dim: usize,
}

impl CriticEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        n_members: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, layer_norm, FinalInit::KaimingSmall);
        let members = (0..n_members as u64)
            .map(|m| init_mlp(&spec, seed.wrapping_mul(1_000_003).wrapping_add(m)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members, state_dim, action_dim)
    }

    pub fn from_members(
        members: Vec<MlpParams>,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::config("critic ensemble needs at least one member"))?;
        if first.spec().input_dim() != state_dim + action_dim || first.spec().output_dim() != 1 {
            return Err(Error::shape(format!(
                "critic MLP {:?} does not fit state {state_dim} + action {action_dim} → 1",
                first.spec().layer_sizes
            )));
        }
        if members.iter().any(|m| m.spec() != first.spec()) {
            return Err(Error::shape("critic members must share one spec"));
        }
        Ok(CriticEnsemble {
            members,
            aggregation: Aggregation::Mean,
            state_dim,
            action_dim,
        })
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [MlpParams] {
        &mut self.members
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn zeros_like(&self) -> CriticEnsemble {
        CriticEnsemble {
            members: self.members.iter().map(|m| m.zeros_like()).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn input(&self, s: &Tensor, a: &Tensor) -> Result<Tensor> {
        if s.rank() != 2 || s.cols() != self.state_dim {
            return Err(Error::shape(format!(
                "critic expects state [B, {}], got {:?}",
                self.state_dim,
                s.shape()
            )));
        }
        if a.rank() != 2 || a.shape() != [s.rows(), self.action_dim] {
            return Err(Error::shape(format!(
                "critic expects action [{}, {}], got {:?}",
                s.rows(),
                self.action_dim,
                a.shape()
            )));
        }
        Tensor::hcat(&[s, a])
    }

    fn aggregate(&self, per_member: &[Tensor]) -> Tensor {
        let batch = per_member[0].rows();
        let m = per_member.len() as f64;
        let agg = (0..batch)
            .map(|i| match self.aggregation {
                Aggregation::Mean => per_member.iter().map(|q| q.data()[i]).sum::<f64>() / m,
            })
            .collect();
        Tensor::from_raw(vec![batch], agg)
    }

    fn stack(per_member: &[Tensor]) -> Tensor {
        let batch = per_member[0].rows();
        let m = per_member.len();
        let mut data = vec![0.0; batch * m];
        for (j, q) in per_member.iter().enumerate() {
            for i in 0..batch {
                data[i * m + j] = q.data()[i];
            }
        }
        Tensor::from_raw(vec![batch, m], data)
    }

    /// Aggregate Q values only.
    pub fn q_values(&self, s: &Tensor, a: &Tensor) -> Result<Tensor> {
        Ok(critic_forward(self, s, a)?.1)
    }

    /// Per-member outputs `[B]` with caches, for the Bellman regression.
    pub(crate) fn forward_members(
        &self,
        s: &Tensor,
        a: &Tensor,
    ) -> Result<(Vec<Tensor>, Vec<ForwardCache>)> {
        let x = self.input(s, a)?;
        let mut outs = Vec::with_capacity(self.members.len());
        let mut caches = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let (y, c) = mlp_forward(m, &x)?;
            outs.push(y.reshape(vec![x.rows()])?);
            caches.push(c);
        }
        Ok((outs, caches))
    }

    /// Parameter gradients given `dL/dQ_m` for every member.
    pub(crate) fn backward_members(
        &self,
        caches: &[ForwardCache],
        dl_dq: &[Tensor],
    ) -> Result<CriticEnsemble> {
        let members = self
            .members
            .iter()
            .zip(caches)
            .zip(dl_dq)
            .map(|((m, c), d)| {
                let d = d.clone().reshape(vec![d.len(), 1])?;
                Ok(mlp_backward(m, c, &d)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CriticEnsemble {
            members,
            ..self.clone()
        })
    }

    /// Aggregate Q and its gradient with respect to the action input.
    pub fn action_gradient(&self, s: &Tensor, a: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.input(s, a)?;
        let batch = x.rows();
        let m = self.members.len() as f64;
        let mut per_member = Vec::with_capacity(self.members.len());
        let mut dx_total = Tensor::zeros(x.shape());
        for member in &self.members {
            let (y, c) = mlp_forward(member, &x)?;
            let dx = mlp_backward_input(member, &c, &Tensor::filled(&[batch, 1], 1.0 / m))?;
            dx_total.axpy(1.0, &dx)?;
            per_member.push(y.reshape(vec![batch])?);
        }
        let agg = self.aggregate(&per_member);
        Ok((agg, dx_total.slice_cols(self.state_dim, self.action_dim)?))
    }
}

/// Per-member Q values `[B, M]` and their aggregate `[B]`.
pub fn critic_forward(q: &CriticEnsemble, s: &Tensor, a: &Tensor) -> Result<(Tensor, Tensor)> {
    let x = q.input(s, a)?;
    let per_member = q
        .members
        .iter()
        .map(|m| mlp_predict(m, &x)?.reshape(vec![x.rows()]))
        .collect::<Result<Vec<_>>>()?;
    Ok((CriticEnsemble::stack(&per_member), q.aggregate(&per_member)))
}

impl ParamSet for CriticEnsemble {
    fn param_tensors(&self) -> Vec<&Tensor> {
        self.members
            .iter()
            .flat_map(|m| m.param_tensors())
            .collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.members
            .iter_mut()
            .flat_map(|m| m.param_tensors_mut())
            .collect()
    }
}

/// Delayed copy of the online critic.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetCritic {
    pub critic: CriticEnsemble,
    pub tau: f64,
}

impl TargetCritic {
    pub fn from_online(online: &CriticEnsemble, tau: f64) -> Self {
        TargetCritic {
            critic: online.clone(),
            tau,
        }
    }
}

/// `θ̄ ← (1−τ)·θ̄ + τ·θ`, elementwise.
pub fn polyak_update(target: &mut TargetCritic, online: &CriticEnsemble, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("tau must lie in [0, 1], got {tau}")));
    }
    let src = online.param_tensors();
    let mut dst = target.critic.param_tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::shape(
            "target and online critics differ in structure",
        ));
    }
    for (d, s) in dst.iter().zip(&src) {
        d.same_shape(s, "polyak update")?;
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        for (dv, &sv) in d.data_mut().iter_mut().zip(s.data()) {
            *dv = (1.0 - tau) * *dv + tau * sv;
        }
    }
    Ok(())
}
