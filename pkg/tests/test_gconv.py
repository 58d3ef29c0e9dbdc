import numpy as np
import pytest

from cubekit.gconv import (
    check_equivariance,
    conv3d,
    conv3d_backward,
    gconv_backward,
    gconv_direct,
    gconv_hidden,
    gconv_lift,
    rotated_filter_bank,
)
from cubekit.symmetry import generate_group
from cubekit.voxel import apply_group_action

from oracles import brute_group_conv, central_difference, naive_conv3d, rel_error

V = generate_group("V")
T4 = generate_group("T4")
S4 = generate_group("S4")


def test_conv3d_delta_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 4))
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1.0
    assert np.array_equal(conv3d(x, w), x)


def test_conv3d_ones():
    x = np.ones((1, 3, 3, 3))
    w = np.ones((1, 1, 3, 3, 3))
    assert conv3d(x, w, "valid").item() == 27.0
    out = conv3d(x, w, "same")
    assert out[0, 1, 1, 1] == 27 and out[0, 0, 0, 0] == 8  # corner sees a 2x2x2 block


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv3d_matches_naive_oracle(padding):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 4, 6))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    assert np.max(np.abs(conv3d(x, w, padding) - naive_conv3d(x, w, padding))) <= 1e-12


def test_conv3d_batched_equals_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 2, 4, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3, 3))
    batched = conv3d(x, w)
    for n in range(3):
        assert np.allclose(batched[n], conv3d(x[n], w), atol=1e-13)


def test_conv3d_shape_errors():
    with pytest.raises(ValueError):
        conv3d(np.zeros((2, 4, 4, 4)), np.zeros((1, 3, 3, 3, 3)))
    with pytest.raises(ValueError):
        conv3d(np.zeros((1, 4, 4, 4)), np.zeros((1, 1, 2, 2, 2)))
    with pytest.raises(ValueError):
        conv3d(np.zeros((1, 2, 2, 2)), np.zeros((1, 1, 3, 3, 3)), "valid")
    with pytest.raises(ValueError):
        conv3d(np.zeros((1, 4, 4, 4)), np.zeros((1, 1, 3, 3, 3)), "full")


def test_lift_slices_are_rotated_kernels():
    rng = np.random.default_rng(3)
    F = rng.normal(size=(1, 1, 5, 5, 5))
    Wt = rng.normal(size=(1, 1, 1, 3, 3, 3))
    out = gconv_lift(F, Wt, V)
    from cubekit.voxel import rotate_spatial

    for r in range(4):
        kr = rotate_spatial(Wt[:, :, 0], V.matrices[r])
        assert np.allclose(out[0, r], conv3d(F[:, 0], kr)[0], atol=1e-13)


def test_lift_shape_and_group_axis_checks():
    F = np.zeros((2, 1, 5, 5, 5))
    assert gconv_lift(F, np.zeros((3, 2, 1, 3, 3, 3)), S4).shape == (3, 24, 5, 5, 5)
    assert gconv_lift(F, np.zeros((3, 2, 1, 3, 3, 3)), S4, "valid").shape == (3, 24, 3, 3, 3)
    with pytest.raises(ValueError):
        gconv_hidden(F, np.zeros((3, 2, 1, 3, 3, 3)), S4)
    with pytest.raises(ValueError):
        gconv_lift(np.zeros((2, 4, 5, 5, 5)), np.zeros((3, 2, 4, 3, 3, 3)), V)


def test_hidden_delta_filter_example():
    """Centre-tap filter on input slot rho=0 routes input channel 0 to output channel r."""
    rng = np.random.default_rng(4)
    F = rng.normal(size=(1, 4, 3, 3, 3))
    Wt = np.zeros((1, 1, 4, 3, 3, 3))
    Wt[0, 0, 0, 1, 1, 1] = 1.0
    out = gconv_hidden(F, Wt, V)
    # out[r] = sum_rho F[rho] W[r^-1 rho] picks rho with r^-1 rho = e, i.e. rho = r
    for r in range(4):
        assert np.array_equal(out[0, r], F[0, r])


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_fast_and_direct_match_brute_force_v(padding):
    rng = np.random.default_rng(5)
    Fl = rng.normal(size=(2, 1, 4, 4, 4))
    Wl = rng.normal(size=(2, 2, 1, 3, 3, 3))
    ref = brute_group_conv(Fl, Wl, V.matrices, padding)
    assert np.max(np.abs(gconv_lift(Fl, Wl, V, padding) - ref)) <= 1e-12
    Fh = rng.normal(size=(2, 4, 4, 4, 4))
    Wh = rng.normal(size=(2, 2, 4, 3, 3, 3))
    ref = brute_group_conv(Fh, Wh, V.matrices, padding)
    assert np.max(np.abs(gconv_hidden(Fh, Wh, V, padding) - ref)) <= 1e-12
    assert np.max(np.abs(gconv_direct(Fh, Wh, V, padding) - ref)) <= 1e-12


def test_direct_matches_brute_force_s4():
    rng = np.random.default_rng(6)
    Fh = rng.normal(size=(1, 24, 3, 3, 3))
    Wh = rng.normal(size=(1, 1, 24, 3, 3, 3))
    ref = brute_group_conv(Fh, Wh, S4.matrices, "same")
    assert np.max(np.abs(gconv_direct(Fh, Wh, S4) - ref)) <= 1e-12


@pytest.mark.parametrize("group", [V, T4, S4], ids=lambda g: g.kind.value)
def test_fast_matches_direct(group):
    rng = np.random.default_rng(7)
    for trial in range(3):
        lift = trial == 0
        gin = 1 if lift else group.order
        F = rng.normal(size=(2, 2, gin, 4, 4, 4))
        Wt = rng.normal(size=(2, 2, gin, 3, 3, 3))
        fast = (gconv_lift if lift else gconv_hidden)(F, Wt, group)
        slow = gconv_direct(F, Wt, group)
        assert np.max(np.abs(fast - slow)) <= 1e-12


def test_slow_flag_uses_direct():
    rng = np.random.default_rng(8)
    F = rng.normal(size=(1, 4, 3, 3, 3))
    Wt = rng.normal(size=(1, 1, 4, 3, 3, 3))
    assert np.array_equal(gconv_hidden(F, Wt, V, slow=True), gconv_direct(F, Wt, V))


def test_rotated_bank_identity_copy():
    Wt = np.random.default_rng(0).normal(size=(2, 1, 4, 3, 3, 3))
    bank = rotated_filter_bank(Wt, V)
    assert bank.shape == (2, 4, 1, 4, 3, 3, 3)
    assert np.array_equal(bank[:, 0], Wt)


def test_linearity():
    rng = np.random.default_rng(9)
    F1, F2 = rng.normal(size=(2, 2, 12, 4, 4, 4))
    Wt = rng.normal(size=(2, 2, 12, 3, 3, 3))
    a, b = 0.7, -1.3
    lhs = gconv_hidden(a * F1 + b * F2, Wt, T4)
    rhs = a * gconv_hidden(F1, Wt, T4) + b * gconv_hidden(F2, Wt, T4)
    assert np.max(np.abs(lhs - rhs)) <= 1e-11


def test_lift_subgroup_consistency():
    """Lifting over V equals the V-rows of lifting over S4."""
    rng = np.random.default_rng(10)
    F = rng.normal(size=(1, 1, 4, 4, 4))
    Wt = rng.normal(size=(2, 1, 1, 3, 3, 3))
    full = gconv_lift(F, Wt, S4)
    sub = gconv_lift(F, Wt, V)
    rows = [S4.index_of(m) for m in V.matrices]
    assert np.array_equal(sub, full[:, rows])


# ---------------------------------------------------------------- gradients

def _fd_check(kind, group, padding, rng):
    gin = 1 if kind == "lift" else group.order
    F = rng.normal(size=(2, 2, gin, 4, 4, 4))
    Wt = rng.normal(size=(2, 2, gin, 3, 3, 3))
    fn = gconv_lift if kind == "lift" else gconv_hidden
    U = rng.normal(size=fn(F, Wt, group, padding).shape)
    gx, gw = gconv_backward(kind, F, Wt, U, group, padding)

    idx_f = [tuple(rng.integers(0, s) for s in F.shape) for _ in range(12)]
    idx_w = [tuple(rng.integers(0, s) for s in Wt.shape) for _ in range(12)]
    num_f = central_difference(lambda z: np.sum(fn(z, Wt, group, padding) * U), F, 1e-5, idx_f)
    num_w = central_difference(lambda z: np.sum(fn(F, z, group, padding) * U), Wt, 1e-5, idx_w)
    err_f = max(rel_error(gx[i], num_f[i]) for i in idx_f)
    err_w = max(rel_error(gw[i], num_w[i]) for i in idx_w)
    return max(err_f, err_w)


@pytest.mark.parametrize("kind", ["lift", "hidden"])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_backward_finite_difference(kind, padding):
    rng = np.random.default_rng(11)
    assert _fd_check(kind, V, padding, rng) <= 1e-6
    assert _fd_check(kind, S4, padding, rng) <= 1e-6


@pytest.mark.parametrize("kind", ["lift", "hidden"])
def test_backward_adjoint_dot_test(kind):
    """<gconv(F), U> == <F, dF> and == <W, dW> because the map is bilinear."""
    rng = np.random.default_rng(12)
    gin = 1 if kind == "lift" else 12
    F = rng.normal(size=(1, 2, gin, 5, 5, 5))
    Wt = rng.normal(size=(3, 2, gin, 3, 3, 3))
    fn = gconv_lift if kind == "lift" else gconv_hidden
    out = fn(F, Wt, T4)
    U = rng.normal(size=out.shape)
    gx, gw = gconv_backward(kind, F, Wt, U, T4)
    total = np.sum(out * U)
    assert abs(np.sum(F * gx) - total) <= 1e-10 * abs(total)
    assert abs(np.sum(Wt * gw) - total) <= 1e-10 * abs(total)


def test_backward_zero_upstream():
    F = np.random.default_rng(0).normal(size=(1, 1, 4, 4, 4))
    Wt = np.ones((1, 1, 1, 3, 3, 3))
    gx, gw = gconv_backward("lift", F, Wt, np.zeros((1, 4, 4, 4, 4)), V)
    assert not gx.any() and not gw.any()


def test_backward_argument_checks():
    with pytest.raises(ValueError):
        gconv_backward("bogus", np.zeros((1, 1, 3, 3, 3)), np.zeros((1, 1, 1, 3, 3, 3)),
                       np.zeros((1, 4, 3, 3, 3)), V)
    with pytest.raises(ValueError):
        gconv_backward("lift", np.zeros((1, 1, 3, 3, 3)), np.zeros((1, 1, 1, 3, 3, 3)),
                       np.zeros((1, 2, 3, 3, 3)), V)


def test_conv3d_backward_matches_fd():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3, 3))
    U = rng.normal(size=(2, 4, 4, 4))
    gx, gw = conv3d_backward(x, w, U)
    num_x = central_difference(lambda z: np.sum(conv3d(z, w) * U), x)
    assert np.max(rel_error(gx, num_x)) <= 1e-6
    num_w = central_difference(lambda z: np.sum(conv3d(x, z) * U), w)
    assert np.max(rel_error(gw, num_w)) <= 1e-6


# ---------------------------------------------------------------- equivariance

@pytest.mark.parametrize("kind", ["V", "T4", "S4"])
@pytest.mark.parametrize("layer", ["lift", "hidden"])
def test_equivariance_f64(kind, layer):
    report = check_equivariance(layer, kind, trials=3, tol=1e-12, size=4)
    assert report.passed, report.as_dict()


def test_equivariance_f32():
    report = check_equivariance("hidden", "S4", trials=2, tol=1e-5, precision="f32", size=4)
    assert report.passed, report.as_dict()
    assert report.precision == "f32"


def test_equivariance_identity_error_is_zero():
    report = check_equivariance("hidden", "T4", trials=2, size=4)
    assert report.per_element_max_abs[0] == 0.0


def test_equivariance_valid_padding_and_noise():
    assert check_equivariance("hidden", "V", trials=2, padding="valid", size=5).passed
    assert check_equivariance("lift", "S4", trials=2, noise_std=0.3, size=4).passed


def test_broken_reindex_is_detected():
    report = check_equivariance("hidden", "S4", trials=2, size=4, cayley_reindex=False)
    assert not report.passed
    assert report.max_abs_error > 1e-2


def test_equivariance_by_hand_quarter_turn():
    rng = np.random.default_rng(14)
    F = rng.normal(size=(1, 1, 5, 5, 5))
    Wt = rng.normal(size=(2, 1, 1, 3, 3, 3))
    p = S4.index_of(np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]]))
    lhs = gconv_lift(apply_group_action(F, S4, p), Wt, S4)
    rhs = apply_group_action(gconv_lift(F, Wt, S4), S4, p)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_check_equivariance_rejects_bad_layer():
    with pytest.raises(ValueError):
        check_equivariance("dense", "V")
