//! Dense network stack with explicit backpropagation: linear layers, tanh
//! MLPs, a gated recurrent cell, the actor-critic and student models, Adam and
//! a versioned checkpoint container.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod models;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointHeader, MAGIC};
pub use layers::{Activation, Gru, GruCache, Linear, Mlp, MlpCache};
pub use models::{
    ActorCritic, ActorCriticCache, ActorCriticSpec, Core, NetworkSpec, Student, StudentSpec,
    StudentStepCache,
};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point element type. Training runs in `f32`; gradient checks use
/// an `f64` shadow of the same code.
pub trait Scalar: Float + FromPrimitive + Default + std::fmt::Debug + Send + Sync + 'static {
    /// `C = alpha * A B + beta * C` with explicit row and column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let need = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(a.len() >= need(m, k, rsa, csa));
                assert!(b.len() >= need(k, n, rsb, csb));
                assert!(c.len() >= need(m, n, rsc, csc));
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `Y (b×o) = X (b×i) Wᵀ` with `W` stored row-major as o×i.
pub fn matmul_xwt<T: Scalar>(x: &[T], w: &[T], y: &mut [T], b: usize, i: usize, o: usize, beta: T) {
    T::gemm(b, i, o, T::one(), x, i as isize, 1, w, 1, i as isize, beta, y, o as isize, 1);
}

/// `DX (b×i) = DY (b×o) W` with `W` stored row-major as o×i.
pub fn matmul_dyw<T: Scalar>(dy: &[T], w: &[T], dx: &mut [T], b: usize, i: usize, o: usize, beta: T) {
    T::gemm(b, o, i, T::one(), dy, o as isize, 1, w, i as isize, 1, beta, dx, i as isize, 1);
}

/// `DW (o×i) += DYᵀ X`.
pub fn matmul_dytx<T: Scalar>(dy: &[T], x: &[T], dw: &mut [T], b: usize, i: usize, o: usize) {
    T::gemm(o, b, i, T::one(), dy, 1, o as isize, x, i as isize, 1, T::one(), dw, i as isize, 1);
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Normal draw scaled by `std`, in the element type.
pub fn normal<T: Scalar, R: Rng>(rng: &mut R, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::from_f64_lossy(z * std)
}

/// Convert a parameter vector between element types.
pub fn cast_vec<A: Scalar, B: Scalar>(v: &[A]) -> Vec<B> {
    v.iter()
        .map(|x| B::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN)))
        .collect()
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Global L2 norm of a gradient vector, accumulated in f64 in index order.
pub fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter()
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}
