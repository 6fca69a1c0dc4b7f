use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Gru, GruCache, Linear, Mlp, MlpCache};
use super::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for ActorCriticSpec {
    fn default() -> Self {
        Self {
            obs_dim: crate::env::TEACHER_OBS_DIM,
            act_dim: crate::robot::ACTION_DIM,
            hidden: vec![256, 160, 128],
            init_log_std: -0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Core {
    Gru,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub head_hidden: Vec<usize>,
    pub decoder_dim: usize,
    pub core: Core,
}

impl Default for StudentSpec {
    fn default() -> Self {
        Self {
            obs_dim: crate::env::STUDENT_OBS_DIM,
            act_dim: crate::robot::ACTION_DIM,
            hidden: 256,
            head_hidden: vec![128],
            decoder_dim: crate::env::ESTIMATION_DIM + 4,
            core: Core::Gru,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    ActorCritic(ActorCriticSpec),
    Student(StudentSpec),
}

impl NetworkSpec {
    pub fn num_params(&self) -> usize {
        match self {
            NetworkSpec::ActorCritic(s) => ActorCritic::new(s.clone()).num_params(),
            NetworkSpec::Student(s) => Student::new(s.clone()).num_params(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            NetworkSpec::ActorCritic(s) => s.obs_dim,
            NetworkSpec::Student(s) => s.obs_dim,
        }
    }
}

/// Separate actor and critic MLPs plus a state-independent log-std.
/// Parameter layout: actor, critic, log-std.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub spec: ActorCriticSpec,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std_offset: usize,
}

#[derive(Debug, Clone)]
pub struct ActorCriticCache<T> {
    pub actor: MlpCache<T>,
    pub critic: MlpCache<T>,
}

impl<T: Scalar> ActorCriticCache<T> {
    pub fn mean(&self) -> &[T] {
        self.actor.output()
    }

    pub fn value(&self) -> &[T] {
        self.critic.output()
    }
}

impl ActorCritic {
    pub fn new(spec: ActorCriticSpec) -> Self {
        let mut sizes = vec![spec.obs_dim];
        sizes.extend(&spec.hidden);
        sizes.push(spec.act_dim);
        let actor = Mlp::new(&sizes, Activation::Identity, 0);
        *sizes.last_mut().unwrap() = 1;
        let critic = Mlp::new(&sizes, Activation::Identity, actor.end());
        let log_std_offset = critic.end();
        Self {
            spec,
            actor,
            critic,
            log_std_offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.log_std_offset + self.spec.act_dim
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.num_params()];
        self.actor.init(&mut p, 0.01, rng);
        self.critic.init(&mut p, 1.0, rng);
        let ls = T::from_f64_lossy(self.spec.init_log_std);
        p[self.log_std_offset..].fill(ls);
        p
    }

    pub fn log_std<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.log_std_offset..self.log_std_offset + self.spec.act_dim]
    }

    pub fn forward<T: Scalar>(&self, p: &[T], obs: &[T], batch: usize) -> ActorCriticCache<T> {
        ActorCriticCache {
            actor: self.actor.forward(p, obs, batch),
            critic: self.critic.forward(p, obs, batch),
        }
    }

    pub fn actor_mean<T: Scalar>(&self, p: &[T], obs: &[T], batch: usize) -> Vec<T> {
        let mut c = self.actor.forward(p, obs, batch);
        c.acts.pop().unwrap_or_default()
    }

    /// Accumulate gradients of a loss given its partials w.r.t. the action
    /// mean (batch×act), the value (batch) and the log-std (act).
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        cache: &ActorCriticCache<T>,
        dmean: &[T],
        dvalue: &[T],
        dlogstd: &[T],
        g: &mut [T],
    ) {
        self.actor.backward(p, &cache.actor, dmean, g, false);
        self.critic.backward(p, &cache.critic, dvalue, g, false);
        for (acc, d) in g[self.log_std_offset..].iter_mut().zip(dlogstd) {
            *acc = *acc + *d;
        }
    }
}

/// Recurrent student: encoder → core → (action head, linear decoder).
/// Parameter layout: encoder, core, head, decoder.
#[derive(Debug, Clone)]
pub struct Student {
    pub spec: StudentSpec,
    pub encoder: Mlp,
    pub gru: Option<Gru>,
    pub core_mlp: Option<Mlp>,
    pub head: Mlp,
    pub decoder: Linear,
}

#[derive(Debug, Clone)]
pub enum CoreCache<T> {
    Gru(GruCache<T>),
    Mlp(MlpCache<T>),
}

#[derive(Debug, Clone)]
pub struct StudentStepCache<T> {
    pub enc: MlpCache<T>,
    pub core: CoreCache<T>,
    pub head: MlpCache<T>,
    /// Core output (the new hidden state).
    pub h: Vec<T>,
    pub dec: Vec<T>,
    pub batch: usize,
}

impl<T: Scalar> StudentStepCache<T> {
    pub fn action(&self) -> &[T] {
        self.head.output()
    }
}

impl Student {
    pub fn new(spec: StudentSpec) -> Self {
        let h = spec.hidden;
        let encoder = Mlp::new(&[spec.obs_dim, h], Activation::Tanh, 0);
        let (gru, core_mlp, core_end) = match spec.core {
            Core::Gru => {
                let g = Gru::new(h, h, encoder.end());
                (Some(g), None, g.end())
            }
            Core::Mlp => {
                let m = Mlp::new(&[h, h], Activation::Tanh, encoder.end());
                let e = m.end();
                (None, Some(m), e)
            }
        };
        let mut sizes = vec![h];
        sizes.extend(&spec.head_hidden);
        sizes.push(spec.act_dim);
        let head = Mlp::new(&sizes, Activation::Identity, core_end);
        let decoder = Linear::new(h, spec.decoder_dim, head.end());
        Self {
            spec,
            encoder,
            gru,
            core_mlp,
            head,
            decoder,
        }
    }

    pub fn num_params(&self) -> usize {
        self.decoder.end()
    }

    pub fn hidden(&self) -> usize {
        self.spec.hidden
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.num_params()];
        self.encoder.init(&mut p, 2f64.sqrt(), rng);
        if let Some(g) = &self.gru {
            g.init(&mut p, rng);
        }
        if let Some(m) = &self.core_mlp {
            m.init(&mut p, 2f64.sqrt(), rng);
        }
        self.head.init(&mut p, 0.01, rng);
        self.decoder.init(&mut p, 1.0, rng);
        p
    }

    /// One recurrent step for a batch. `h` is the previous hidden state
    /// (batch×hidden); ignored by the feed-forward core.
    pub fn step<T: Scalar>(&self, p: &[T], obs: &[T], h: &[T], batch: usize) -> StudentStepCache<T> {
        let enc = self.encoder.forward(p, obs, batch);
        let (core, h_new) = match (&self.gru, &self.core_mlp) {
            (Some(g), _) => {
                let (out, c) = g.forward(p, enc.output(), h, batch);
                (CoreCache::Gru(c), out)
            }
            (None, Some(m)) => {
                let c = m.forward(p, enc.output(), batch);
                let out = c.output().to_vec();
                (CoreCache::Mlp(c), out)
            }
            _ => unreachable!("student without core"),
        };
        let head = self.head.forward(p, &h_new, batch);
        let mut dec = vec![T::zero(); batch * self.decoder.out];
        self.decoder.forward(p, &h_new, batch, &mut dec);
        StudentStepCache {
            enc,
            core,
            head,
            h: h_new,
            dec,
            batch,
        }
    }

    /// Backward through one step. `dh_next` is the gradient arriving at the
    /// produced hidden state from later steps. Returns the gradient w.r.t.
    /// the input hidden state.
    pub fn step_backward<T: Scalar>(
        &self,
        p: &[T],
        c: &StudentStepCache<T>,
        dact: &[T],
        ddec: &[T],
        dh_next: Option<&[T]>,
        g: &mut [T],
    ) -> Vec<T> {
        let batch = c.batch;
        let mut dh = self.head.backward(p, &c.head, dact, g, true).unwrap_or_default();
        let mut dh_dec = vec![T::zero(); batch * self.hidden()];
        self.decoder.backward(p, &c.h, ddec, batch, g, Some(&mut dh_dec));
        for (a, b) in dh.iter_mut().zip(&dh_dec) {
            *a = *a + *b;
        }
        if let Some(dn) = dh_next {
            for (a, b) in dh.iter_mut().zip(dn) {
                *a = *a + *b;
            }
        }
        let (de, dh_prev) = match (&c.core, &self.gru, &self.core_mlp) {
            (CoreCache::Gru(cc), Some(gru), _) => gru.backward(p, cc, &dh, g),
            (CoreCache::Mlp(cc), _, Some(m)) => {
                let de = m.backward(p, cc, &dh, g, true).unwrap_or_default();
                (de, vec![T::zero(); batch * self.hidden()])
            }
            _ => unreachable!("cache does not match core"),
        };
        self.encoder.backward(p, &c.enc, &de, g, false);
        dh_prev
    }

    /// Unroll over `t_len` steps of a `batch`-wide sequence (time-major
    /// `obs`). `resets[t*batch + b]` zeroes env b's hidden state before step t.
    pub fn unroll<T: Scalar>(
        &self,
        p: &[T],
        obs: &[T],
        h0: &[T],
        resets: &[bool],
        t_len: usize,
        batch: usize,
    ) -> Vec<StudentStepCache<T>> {
        let od = self.spec.obs_dim;
        let hd = self.hidden();
        let mut h = h0.to_vec();
        let mut caches = Vec::with_capacity(t_len);
        for t in 0..t_len {
            for b in 0..batch {
                if resets[t * batch + b] {
                    h[b * hd..(b + 1) * hd].fill(T::zero());
                }
            }
            let c = self.step(p, &obs[t * batch * od..(t + 1) * batch * od], &h, batch);
            h.clone_from(&c.h);
            caches.push(c);
        }
        caches
    }

    /// Truncated backpropagation through time. Gradients do not cross reset
    /// boundaries or the start of each `window`-step chunk.
    #[allow(clippy::too_many_arguments)]
    pub fn bptt<T: Scalar>(
        &self,
        p: &[T],
        caches: &[StudentStepCache<T>],
        resets: &[bool],
        dact: &[T],
        ddec: &[T],
        window: usize,
        g: &mut [T],
    ) {
        let t_len = caches.len();
        if t_len == 0 {
            return;
        }
        let batch = caches[0].batch;
        let hd = self.hidden();
        let (ad, dd) = (self.spec.act_dim, self.spec.decoder_dim);
        let window = window.max(1);
        let mut dh_next: Option<Vec<T>> = None;
        for t in (0..t_len).rev() {
            let mut dh_prev = self.step_backward(
                p,
                &caches[t],
                &dact[t * batch * ad..(t + 1) * batch * ad],
                &ddec[t * batch * dd..(t + 1) * batch * dd],
                dh_next.as_deref(),
                g,
            );
            if t % window == 0 {
                dh_next = None;
                continue;
            }
            for b in 0..batch {
                if resets[t * batch + b] {
                    dh_prev[b * hd..(b + 1) * hd].fill(T::zero());
                }
            }
            dh_next = Some(dh_prev);
        }
    }
}
