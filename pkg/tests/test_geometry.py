import numpy as np
import pytest
from scipy.linalg import logm
from scipy.optimize import minimize

from clickview import geometry as G
from clickview.tensor import Tensor

from gradcheck import check_tensor_grad


def random_rotation(rng):
    # QR of a Gaussian matrix, sign-fixed to det +1
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def logm_distance(r1, r2):
    """Independent oracle: ||log(R1^T R2)||_F / sqrt(2) via scipy's matrix log."""
    l = logm(r1.T @ r2)
    return float(np.linalg.norm(l, "fro") / np.sqrt(2.0))


def test_bin_round_trip_exact():
    for n in (8, 24, 72, 360):
        for b in range(n):
            assert G.angle_to_bin(G.bin_to_angle(b, n), n) == b


def test_bin_floor_definition():
    assert G.angle_to_bin(0.0, 24) == 0
    assert G.angle_to_bin(14.999, 24) == 0
    assert G.angle_to_bin(15.0, 24) == 1
    assert G.angle_to_bin(359.999, 24) == 23


def test_viewpoint_label_normalizes_angles():
    v = G.ViewpointLabel(-10.0, 370.0, 360.0, 24)
    assert v.azimuth_deg == 350.0
    assert v.elevation_deg == 10.0
    assert v.tilt_deg == 0.0


def test_rotation_identity_at_zero():
    r = G.rotation_from_viewpoint(G.ViewpointLabel(0, 0, 0))
    np.testing.assert_allclose(r, np.eye(3), atol=1e-15)


def test_rotation_180_azimuth_is_pi_from_identity():
    r = G.rotation_from_viewpoint(G.ViewpointLabel(180, 0, 0))
    d = G.geodesic_distance(r, np.eye(3))
    assert abs(d - np.pi) < 1e-10
    # agree with the numeric matrix-log oracle
    assert abs(logm_distance(r, np.eye(3)) - d) < 1e-6


@pytest.mark.parametrize("seed", range(25))
def test_rotation_is_orthonormal_det_one(seed):
    rng = np.random.default_rng(seed)
    v = G.ViewpointLabel(rng.uniform(0, 360), rng.uniform(0, 360), rng.uniform(0, 360))
    r = G.rotation_from_viewpoint(v)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-10)
    assert abs(np.linalg.det(r) - 1.0) < 1e-10


def test_geodesic_zero_for_equal_rotations():
    rng = np.random.default_rng(42)
    for _ in range(10):
        r = random_rotation(rng)
        assert G.geodesic_distance(r, r) < 1e-7


def test_geodesic_z_rotation_pi_over_6():
    r = G.rot_z(np.pi / 6)
    d = G.geodesic_distance(r, np.eye(3))
    assert abs(d - np.pi / 6) < 1e-12
    assert abs(d - logm_distance(r, np.eye(3))) < 1e-8


def test_geodesic_symmetry():
    rng = np.random.default_rng(7)
    for _ in range(20):
        r1, r2 = random_rotation(rng), random_rotation(rng)
        assert abs(G.geodesic_distance(r1, r2) - G.geodesic_distance(r2, r1)) < 1e-12


def test_geodesic_matches_matrix_log_oracle_1000_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        r1, r2 = random_rotation(rng), random_rotation(rng)
        assert abs(G.geodesic_distance(r1, r2) - logm_distance(r1, r2)) < 1e-8


def test_geodesic_principal_axes():
    axes = {
        "z": G.rot_z,
        "x": G.rot_x,
        "y": lambda a: G.rot_z(np.pi / 2) @ G.rot_x(a) @ G.rot_z(-np.pi / 2),
    }
    for phi in np.linspace(0.0, np.pi, 30):
        for make in axes.values():
            assert abs(G.geodesic_distance(np.eye(3), make(phi)) - abs(phi)) < 1e-9


def test_geodesic_rejects_non_rotation():
    with pytest.raises(ValueError):
        G.geodesic_distance(np.eye(3) * 1.1, np.eye(3))
    with pytest.raises(ValueError):
        G.geodesic_distance(np.eye(3), np.diag([1.0, 1.0, -1.0]))


def test_circular_bin_distance():
    assert G.circular_bin_distance(5, 5, 24) == 0.0
    assert abs(G.circular_bin_distance(0, 180, 360) - np.pi) < 1e-12
    # wrap-around: bins 1 and 7 of 8 are two steps apart
    assert abs(G.circular_bin_distance(1, 7, 8) - np.pi / 2) < 1e-12
    with pytest.raises(ValueError):
        G.circular_bin_distance(0, 8, 8)


def test_loss_uniform_probabilities_direct_summation():
    n, t, gt = 8, 0.5, 3
    logits = Tensor(np.zeros(n))
    loss = G.structure_aware_loss(logits, gt, t, n)
    expect = sum(np.exp(-G.circular_bin_distance(b, gt, n) / t) * np.log(n) for b in range(n))
    assert abs(float(loss.data) - expect) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_loss_tiny_temperature_equals_cross_entropy_bitwise(seed):
    rng = np.random.default_rng(seed)
    n = 24
    logits = rng.uniform(-3, 3, n)
    gt = int(rng.integers(0, n))
    loss = G.structure_aware_loss(Tensor(logits), gt, 1e-6, n)
    shifted = logits - logits.max()
    ce = -(shifted[gt] - np.log(np.exp(shifted).sum()))
    assert float(loss.data) == ce


def test_loss_minimized_at_weighted_softmax_point():
    """The gradient vanishes exactly where softmax(logits) matches the
    normalized weight row, and numeric minimization lands there too."""
    n, t, gt = 8, 0.4, 2
    w = G.bin_weight_row(gt, n, t)
    logits = Tensor(np.log(w / w.sum()), requires_grad=True)
    loss = G.structure_aware_loss(logits, gt, t, n)
    loss.backward()
    assert np.max(np.abs(logits.grad)) < 1e-12

    def f(z):
        return float(G.structure_aware_loss(Tensor(z), gt, t, n).data)

    res = minimize(f, np.zeros(n), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 20000})
    p_opt = np.exp(res.x - res.x.max())
    p_opt /= p_opt.sum()
    np.testing.assert_allclose(p_opt, w / w.sum(), atol=1e-4)


def test_loss_lower_bound_is_gt_cross_entropy():
    rng = np.random.default_rng(3)
    n, t = 24, G.default_loss_temperature(24)
    for _ in range(50):
        logits = rng.uniform(-4, 4, n)
        gt = int(rng.integers(0, n))
        loss = float(G.structure_aware_loss(Tensor(logits), gt, t, n).data)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        assert loss >= -np.log(p[gt]) - 1e-12


def test_loss_decreasing_in_gt_probability_below_minimizer():
    """Raising the gt logit strictly lowers the loss while p(gt) stays below
    the weighted-softmax optimum w_gt / sum(w); past that point the loss
    turns back up, so the monotone region is where training operates."""
    n, t, gt = 8, 0.4, 5
    w = G.bin_weight_row(gt, n, t)
    p_star = 1.0 / w.sum()
    logits = np.zeros(n)
    prev = float(G.structure_aware_loss(Tensor(logits), gt, t, n).data)
    for _ in range(40):
        logits[gt] += 0.05
        p = np.exp(logits - logits.max())
        p /= p.sum()
        if p[gt] >= p_star:
            break
        cur = float(G.structure_aware_loss(Tensor(logits), gt, t, n).data)
        assert cur < prev
        prev = cur


def test_loss_gradcheck():
    rng = np.random.default_rng(11)
    n = 12
    logits = Tensor(rng.uniform(-1, 1, n), requires_grad=True)

    def loss():
        return G.structure_aware_loss(logits, 4, 0.3, n)

    check_tensor_grad(loss, {"logits": logits})


def test_batched_loss_matches_mean_of_singles():
    rng = np.random.default_rng(12)
    n, b, t = 10, 5, 0.35
    logits = rng.uniform(-2, 2, (b, n))
    gts = rng.integers(0, n, b)
    batched = float(G.batched_structure_aware_loss(Tensor(logits), gts, t, n).data)
    singles = [float(G.structure_aware_loss(Tensor(logits[i]), int(gts[i]), t, n).data)
               for i in range(b)]
    assert abs(batched - np.mean(singles)) < 1e-12


def test_loss_rejects_bad_temperature():
    with pytest.raises(ValueError):
        G.structure_aware_loss(Tensor(np.zeros(8)), 0, 0.0, 8)
