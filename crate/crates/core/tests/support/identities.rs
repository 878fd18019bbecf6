//! Randomized checks of the basic tensor identities. Each check returns the
//! largest error relative to the scale of the quantities compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rompca_core::linalg::thin_qr;
use rompca_core::tensor::{
    contracted_product, fold, frobenius_norm, inner, kronecker, mode_expand, mode_product,
    multi_mode_expand, multi_mode_product, unfold, vectorize, DenseTensor, Matrix,
};

pub struct Instance {
    pub core: DenseTensor,
    pub factors: Vec<Matrix>,
    pub other: DenseTensor,
}

fn normal_ish(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| normal_ish(rng)).unwrap()
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal_ish(rng))
}

/// Order 1 to 4, ranks 1 to 3, dimensions up to 4.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = rng.random_range(1..=4);
    let ranks: Vec<usize> = (0..order).map(|_| rng.random_range(1..=3)).collect();
    let dims: Vec<usize> = ranks.iter().map(|&k| rng.random_range(k..=4)).collect();
    let factors = dims
        .iter()
        .zip(&ranks)
        .map(|(&p, &k)| matrix(&mut rng, p, k))
        .collect();
    Instance {
        core: tensor(&mut rng, &ranks),
        factors,
        other: tensor(&mut rng, &dims),
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

fn mat_diff(a: &Matrix, b: &Matrix) -> f64 {
    rel(a.max_abs_diff(b), b.frobenius_norm())
}

fn ten_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    rel(a.max_abs_diff(b), frobenius_norm(b))
}

/// `V_L ⊗ ... ⊗ V_1` over the modes other than `skip`.
fn kron_all(factors: &[Matrix], skip: Option<usize>) -> Matrix {
    let mut acc = Matrix::identity(1);
    for (l, v) in factors.iter().enumerate() {
        if Some(l) != skip {
            acc = kronecker(v, &acc);
        }
    }
    acc
}

/// Elementwise oracle for `U x {V}`.
fn expand_oracle(core: &DenseTensor, factors: &[Matrix]) -> DenseTensor {
    let dims: Vec<usize> = factors.iter().map(|v| v.rows()).collect();
    DenseTensor::from_fn(&dims, |p| {
        (0..core.len())
            .map(|lin| {
                let k = core.multi_index(lin);
                factors
                    .iter()
                    .enumerate()
                    .fold(core.as_slice()[lin], |acc, (l, v)| acc * v.get(p[l], k[l]))
            })
            .sum()
    })
    .unwrap()
}

pub fn check(inst: &Instance) -> f64 {
    let Instance {
        core,
        factors,
        other,
    } = inst;
    let order = core.order();
    let dims = other.shape().to_vec();
    let mut worst = 0.0f64;
    let mut note = |e: f64| worst = worst.max(e);

    let full = multi_mode_expand(core, factors, None).unwrap();
    note(ten_diff(&full, &expand_oracle(core, factors)));

    // vec(U x {V}) = (V_L ⊗ ... ⊗ V_1) vec(U)
    let kv = kron_all(factors, None).matvec(&vectorize(core)).unwrap();
    let expected = DenseTensor::from_vec(&dims, kv).unwrap();
    note(ten_diff(&full, &expected));

    for l in 0..order {
        // fold inverts unfold exactly
        let back = fold(&unfold(other, l).unwrap(), l, &dims).unwrap();
        assert_eq!(&back, other);

        // (U x {V})_(l) = V_l U_(l) (⊗_{j != l} V_j)^T
        let rhs = factors[l]
            .matmul(&unfold(core, l).unwrap())
            .unwrap()
            .matmul(&kron_all(factors, Some(l)).transpose())
            .unwrap();
        note(mat_diff(&unfold(&full, l).unwrap(), &rhs));

        // single mode: (A x_l V^T)_(l) = V^T A_(l), and expand is the transpose product
        let proj = mode_product(other, &factors[l], l).unwrap();
        let rhs = factors[l].t_matmul(&unfold(other, l).unwrap()).unwrap();
        note(mat_diff(&unfold(&proj, l).unwrap(), &rhs));
        let via_expand = mode_expand(other, &factors[l].transpose(), l).unwrap();
        note(ten_diff(&proj, &via_expand));

        // same-mode composition: (A x_l V^T) x_l V = A x_l (V V^T)
        let twice = mode_expand(&proj, &factors[l], l).unwrap();
        let vvt = factors[l].matmul(&factors[l].transpose()).unwrap();
        note(ten_diff(&twice, &mode_expand(other, &vvt, l).unwrap()));

        // partial projection skips one mode
        let partial = multi_mode_product(other, factors, Some(l)).unwrap();
        let rhs = unfold(other, l)
            .unwrap()
            .matmul(&kron_all(factors, Some(l)))
            .unwrap();
        note(mat_diff(&unfold(&partial, l).unwrap(), &rhs));
    }

    // distinct modes commute
    if order >= 2 {
        let a = mode_expand(&mode_expand(core, &factors[0], 0).unwrap(), &factors[1], 1).unwrap();
        let b = mode_expand(&mode_expand(core, &factors[1], 1).unwrap(), &factors[0], 0).unwrap();
        note(ten_diff(&a, &b));
    }

    // adjoint: <U x {V}, B> = <U, B x {V^T}>
    let proj = multi_mode_product(other, factors, None).unwrap();
    let lhs = inner(&full, other).unwrap();
    let rhs = inner(core, &proj).unwrap();
    note(rel(
        (lhs - rhs).abs(),
        frobenius_norm(&full) * frobenius_norm(other),
    ));

    // full contraction is the inner product; partial contraction is A_(.)^T B_(.)
    let c = contracted_product(&full, other, order).unwrap();
    note(rel((c.as_slice()[0] - lhs).abs(), lhs.abs()));
    let n_contract = order / 2 + 1;
    let inner_dims: usize = dims[..n_contract].iter().product();
    let outer = other.len() / inner_dims;
    let part = contracted_product(&full, other, n_contract.min(order)).unwrap();
    if n_contract <= order {
        let a = Matrix::from_col_major(inner_dims, outer, full.as_slice().to_vec()).unwrap();
        let b = Matrix::from_col_major(inner_dims, outer, other.as_slice().to_vec()).unwrap();
        let ab = a.t_matmul(&b).unwrap();
        note(rel(
            part.as_slice()
                .iter()
                .zip(ab.as_slice())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            ab.frobenius_norm(),
        ));
    }

    // orthonormal factors preserve the Frobenius norm
    let q: Vec<Matrix> = factors.iter().map(|v| thin_qr(v).unwrap().0).collect();
    let expanded = multi_mode_expand(core, &q, None).unwrap();
    note(rel(
        (frobenius_norm(&expanded) - frobenius_norm(core)).abs(),
        frobenius_norm(core),
    ));
    worst
}
