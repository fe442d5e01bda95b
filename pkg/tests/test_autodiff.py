import numpy as np
import pytest

from sparse_ot import autodiff, icnn, kernels, trainer
from sparse_ot.errors import ShapeError
from sparse_ot.penalty import Penalty


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b).max() / max(1.0, np.abs(b).max())


def fd_params(net, y, h=1e-5):
    out = np.empty_like(net.theta)
    for i in range(net.theta.size):
        old = net.theta[i]
        net.theta[i] = old + h
        up = icnn.evaluate(net, y)
        net.theta[i] = old - h
        down = icnn.evaluate(net, y)
        net.theta[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def fd_input(net, y, h=1e-5):
    out = np.empty_like(y)
    for i in range(len(y)):
        e = np.zeros_like(y)
        e[i] = h
        out[i] = (icnn.evaluate(net, y + e) - icnn.evaluate(net, y - e)) / (2 * h)
    return out


def straight_line(net, y):
    """Direct re-evaluation of the ICNN recursion, written independently of the library."""
    acts = {
        "softplus": lambda a: np.logaddexp(0.0, a),
        "relu": lambda a: np.maximum(a, 0.0),
        "leaky_softplus": lambda a: 0.2 * a + 0.8 * np.logaddexp(0.0, a),
    }
    act = acts[net.activation]
    z = act(net.Wy(0) @ y + net.b(0))
    for i in range(1, net.n_layers):
        z = act(net.Wz(i) @ z + net.Wy(i) @ y + net.b(i))
    return float(z[0]) + 0.5 * net.quadratic * float(y @ y)


def test_zero_weight_single_layer_is_softplus_zero():
    net = icnn.IcnnNet(2, [1])
    val, _ = autodiff.forward(net, np.array([1.0, 2.0]))
    assert val == pytest.approx(np.log(2.0), abs=1e-15)


def test_sum_of_inputs_net():
    # relu of a nonnegative sum reproduces the sum itself
    net = icnn.IcnnNet(3, [1], activation="relu")
    net.Wy(0)[...] = 1.0
    val, _ = autodiff.forward(net, np.ones(3))
    assert val == 3.0


@pytest.mark.parametrize("act", ["softplus", "relu", "leaky_softplus"])
def test_forward_matches_straight_line(act):
    rng = np.random.default_rng(3)
    for seed in range(10):
        net = icnn.init(4, [6, 5, 1], act, seed, quadratic=0.3)
        y = rng.normal(size=4)
        val, _ = autodiff.forward(net, y)
        assert val == pytest.approx(straight_line(net, y), rel=1e-13, abs=1e-13)
        assert icnn.evaluate(net, y) == pytest.approx(val, rel=1e-13, abs=1e-13)


def test_linear_weight_gradient():
    tape = autodiff.Tape()
    w = tape.var(np.array([[0.7]]))
    y = tape.var(np.array([2.0]))
    root = tape.sum(tape.affine(y, w))
    tape.backward(root)
    assert w.grad[0, 0] == 2.0


def test_constant_net_has_zero_gradients():
    # every unit is a dead relu, so the output is locally constant in everything
    net = icnn.IcnnNet(3, [4, 1], activation="relu")
    net.b(0)[...] = -1.0
    net.b(1)[...] = -1.0
    y = np.array([0.5, -1.0, 2.0])
    _, tape = autodiff.forward(net, y)
    grads = autodiff.grad_params(tape)
    assert all(np.all(g == 0.0) for g in grads.values())
    assert np.all(autodiff.grad_input(net, y) == 0.0)


def test_non_scalar_root_rejected():
    net = icnn.init(2, [3, 1], seed=0)
    _, tape = autodiff.forward(net, np.ones(2))
    with pytest.raises(ValueError):
        tape.backward(tape.params["Wy0"])


def test_dimension_mismatch_names_layer():
    net = icnn.init(3, [4, 1], seed=0)
    with pytest.raises(ShapeError, match="layer 0"):
        autodiff.forward(net, np.ones(2))


def test_quadratic_head_gives_identity_map():
    net = icnn.IcnnNet(2, [1], activation="relu", quadratic=1.0)
    net.b(0)[...] = -1.0  # relu(-1) = 0, so only the quadratic head remains
    assert np.allclose(autodiff.grad_input(net, np.array([3.0, -1.0])), [3.0, -1.0], atol=0)


def test_gradient_check_100_pairs():
    rng = np.random.default_rng(0)
    worst_p = worst_y = 0.0
    for trial in range(100):
        d = int(rng.integers(1, 5))
        widths = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), 1]
        net = icnn.init(d, widths, "softplus", trial, quadratic=float(rng.uniform(0, 1)))
        y = rng.normal(size=d)
        _, tape = autodiff.forward(net, y)
        gp = autodiff.flatten_grads(net, autodiff.grad_params(tape))
        worst_p = max(worst_p, rel_err(gp, fd_params(net, y)))
        worst_y = max(worst_y, rel_err(autodiff.grad_input(net, y), fd_input(net, y)))
    assert worst_p <= 1e-4
    assert worst_y <= 1e-4


def test_linearity_of_gradients():
    rng = np.random.default_rng(5)
    n1 = icnn.init(3, [5, 1], seed=1)
    n2 = icnn.init(3, [4, 4, 1], seed=2)
    y = rng.normal(size=3)
    a, b = 1.7, -0.4
    tape = autodiff.Tape()
    P1 = autodiff.param_nodes(tape, n1, "p")
    P2 = autodiff.param_nodes(tape, n2, "q")
    yn = tape.var(y)
    o1, _ = autodiff.build_forward(tape, n1, P1, yn, "p")
    o2, _ = autodiff.build_forward(tape, n2, P2, yn, "q")
    root = tape.add(tape.scale(tape.sum(o1), a), tape.scale(tape.sum(o2), b))
    tape.backward(root)
    expect = a * autodiff.grad_input(n1, y) + b * autodiff.grad_input(n2, y)
    assert np.allclose(yn.grad, expect, rtol=1e-13, atol=1e-13)


def test_determinism():
    net = icnn.init(3, [8, 8, 1], seed=4)
    y = np.array([0.3, -0.2, 1.1])
    _, t1 = autodiff.forward(net, y)
    _, t2 = autodiff.forward(net, y)
    for n1, n2 in zip(t1.nodes, t2.nodes):
        assert np.array_equal(n1.value, n2.value)
    g1, g2 = autodiff.grad_params(t1), autodiff.grad_params(t2)
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_tape_is_topologically_ordered():
    net = icnn.init(2, [3, 3, 1], seed=0)
    _, tape = autodiff.forward(net, np.ones(2))
    for n in tape.nodes:
        assert all(x.index < n.index for x in n.inputs)


# -- cross checks against the fused kernels used in training ---------------


@pytest.mark.parametrize("act", ["softplus", "leaky_softplus"])
def test_kernel_param_grad_matches_tape(act):
    rng = np.random.default_rng(1)
    net = icnn.init(3, [5, 4, 1], act, 7)
    Y = rng.normal(size=(6, 3))
    w = rng.normal(size=6)
    tape = autodiff.Tape()
    P = autodiff.param_nodes(tape, net)
    out, _ = autodiff.build_forward(tape, net, P, tape.var(Y))
    root = tape.inner(out, tape.var(w[:, None]))
    grads = autodiff.flatten_grads(net, autodiff.grad_params(tape, root))
    got = kernels.icnn_param_grad(net.theta, net.layout, 3, net.act_code, Y, w)
    assert rel_err(got, grads) < 1e-12


def test_kernel_mixed_grad_matches_tape():
    """Parameter gradient of sum <V_b, grad_y h(y_b)>, through a differentiated graph."""
    rng = np.random.default_rng(2)
    net = icnn.init(3, [5, 4, 1], "softplus", 8)
    Y = rng.normal(size=(7, 3))
    V = rng.normal(size=(7, 3))
    tape = autodiff.Tape()
    P = autodiff.param_nodes(tape, net)
    yn = tape.var(Y)
    _, pres = autodiff.build_forward(tape, net, P, yn)
    G = autodiff.build_input_grad(tape, net, P, yn, pres)
    root = tape.inner(G, tape.var(V))
    grads = autodiff.flatten_grads(net, autodiff.grad_params(tape, root))
    got = kernels.icnn_mixed_param_grad(net.theta, net.layout, 3, net.act_code, Y, V)
    assert rel_err(got, grads) < 1e-12


@pytest.mark.parametrize("kind", ["l1", "stvs", "sl0"])
def test_g_player_gradient_matches_tape(kind):
    rng = np.random.default_rng(11)
    d = 3
    cfg = trainer.TrainConfig(widths=[6, 5, 1], seed=3, quadratic=1.0)
    pair = trainer.init_pair(d, cfg)
    ys = rng.normal(size=(9, d))
    lam = 0.37
    tau = Penalty(kind, gamma=2.0, xi=0.8)

    g, f = pair.g, pair.f
    tape = autodiff.Tape()
    Pg = autodiff.param_nodes(tape, g, "g")
    Pf = autodiff.param_nodes(tape, f, "f")
    yn = tape.var(ys)
    _, pres = autodiff.build_forward(tape, g, Pg, yn, "g")
    u = autodiff.build_input_grad(tape, g, Pg, yn, pres, "g")
    fu, _ = autodiff.build_forward(tape, f, Pf, u, "f")
    B = len(ys)
    loss = tape.sub(tape.scale(tape.sum(fu), 1.0 / B), tape.scale(tape.inner(yn, u), 1.0 / B))
    pen = tape.rowwise(tape.sub(u, yn), tau.value, tau.grad)
    loss = tape.add(loss, tape.scale(tape.sum(pen), lam / B))
    tape.backward(loss)
    expect = autodiff.flatten_grads(g, {k[1:]: tape.params[k].grad for k in tape.params if k.startswith("g")})

    got, val = trainer.g_gradient(pair, ys, lam, tau)
    assert val == pytest.approx(float(loss.value), rel=1e-12)
    assert rel_err(got, expect) < 1e-10
