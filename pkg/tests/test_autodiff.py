import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from layoutforge import autodiff as ad
from layoutforge.autodiff import SGD, Adam, Parameter, Tensor, grad_check, no_grad
from layoutforge.errors import CheckpointError, DomainError, MissingGradientError, ShapeError

EPS = ad.EPS


def rand_param(rng, shape, name):
    return Parameter(rng.standard_normal(shape), name)


# forward values


def test_linear_zero_weight_and_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = ad.linear(x, Tensor(np.zeros((3, 4))), Tensor(np.full(4, 2.5)))
    assert np.all(out.data == 2.5)
    out = ad.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x.data)


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


def test_activation_values():
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert list(ad.relu(Tensor([-1.0, 2.0])).data) == [0.0, 2.0]
    assert ad.leaky_relu(Tensor([-1.0]), 0.2).data[0] == pytest.approx(-0.2)
    big = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] >= 0 and big[1] <= 1


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_sigmoid_range(xs):
    out = ad.sigmoid(Tensor(xs)).data
    assert np.all((out >= 0) & (out <= 1))
    ref = 1.0 / (1.0 + np.exp(-np.asarray(xs)))
    assert np.allclose(out, ref, rtol=1e-12, atol=1e-15)


def test_reconstruction_distance_examples():
    assert ad.reconstruction_distance(Tensor([0.0, 0.0]), Tensor([1.0, 3.0]), "l1").item() == 2.0
    assert ad.reconstruction_distance(Tensor([0.0]), Tensor([2.0]), "l2").item() == 4.0
    x = Tensor(np.random.default_rng(0).standard_normal(5))
    assert ad.reconstruction_distance(x, x, "l1").item() == 0.0
    with pytest.raises(ShapeError):
        ad.reconstruction_distance(Tensor([1.0]), Tensor([1.0, 2.0]))
    with pytest.raises(ValueError):
        ad.reconstruction_distance(x, x, "l3")


def test_bce_examples():
    assert ad.bce_discriminator_loss(Tensor([EPS]), Tensor([1 - EPS])).item() == pytest.approx(0.0, abs=1e-6)
    assert ad.bce_discriminator_loss(Tensor([0.5]), Tensor([0.5])).item() == pytest.approx(2 * math.log(2))
    fooled = ad.bce_discriminator_loss(Tensor([1 - EPS]), Tensor([EPS])).item()
    assert fooled == pytest.approx(2 * math.log(1 / EPS), rel=1e-6)


def test_bce_monotone_in_real_score():
    grid = np.linspace(0.01, 0.99, 50)
    losses = [ad.bce_discriminator_loss(Tensor([0.3]), Tensor([r])).item() for r in grid]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_generator_adversarial_loss_values():
    assert ad.adversarial_generator_loss(Tensor([1 - EPS])).item() == pytest.approx(0.0, abs=1e-6)
    assert ad.adversarial_generator_loss(Tensor([0.5])).item() == pytest.approx(math.log(2))


@pytest.mark.parametrize("bad", [-0.1, 1.1, math.nan])
def test_scores_outside_unit_interval_rejected(bad):
    with pytest.raises(DomainError):
        ad.bce_discriminator_loss(Tensor([bad]), Tensor([0.5]))
    with pytest.raises(DomainError):
        ad.adversarial_generator_loss(Tensor([bad]))


def test_losses_non_negative():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f, r = rng.uniform(0, 1, 4), rng.uniform(0, 1, 4)
        assert ad.bce_discriminator_loss(Tensor(f), Tensor(r)).item() >= 0
        assert ad.adversarial_generator_loss(Tensor(f)).item() >= 0


# gradients


def _check(closure, params, tol=1e-4):
    report = grad_check(closure, params, eps=1e-5, tolerance=tol)
    assert report["passed"], report["errors"]


@pytest.mark.parametrize("seed", range(3))
def test_linear_gradients(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rand_param(rng, (3, 4), "x"), rand_param(rng, (4, 2), "w"), rand_param(rng, (2,), "b")
    _check(lambda: (ad.linear(x, w, b) ** 2).sum(), [x, w, b])


@pytest.mark.parametrize(
    "fn",
    [
        lambda t: ad.sigmoid(t),
        lambda t: ad.tanh(t),
        lambda t: ad.leaky_relu(t, 0.3),
        lambda t: ad.relu(t),
        lambda t: ad.softmax(t, axis=1),
        lambda t: t.exp(),
        lambda t: (t.abs() + 0.5).log(),
        lambda t: t.clip(-0.5, 0.5),
        lambda t: t[:, 1:3] * t.T[0:2, :].sum(),
        lambda t: ad.concat([t, t * 2.0], axis=0).mean(axis=0, keepdims=True),
        lambda t: (t / (t.square() + 1.0)).reshape(-1),
    ],
)
def test_elementwise_and_structural_gradients(fn):
    rng = np.random.default_rng(11)
    x = rand_param(rng, (3, 4), "x")
    # keep away from kinks of relu/abs/clip
    x.data[np.abs(x.data) < 0.05] += 0.2
    x.data[np.abs(np.abs(x.data) - 0.5) < 0.05] += 0.2
    weights = Tensor(rng.standard_normal(fn(Tensor(x.data)).shape))
    _check(lambda: (fn(x) * weights).sum(), [x])


def test_leaky_relu_negative_slope_matches_alpha():
    x = Parameter(np.array([-1.5, -0.3]), "x")
    ad.leaky_relu(x, 0.15).sum().backward()
    assert np.allclose(x.grad, 0.15)
    numeric = ad.numerical_gradient(lambda: ad.leaky_relu(x, 0.15).sum(), x)
    assert np.allclose(numeric, 0.15, atol=1e-9)


def test_generator_loss_gradient_wrt_logit():
    logit = Parameter(np.array([[0.7], [-1.2]]), "logit")
    _check(lambda: ad.adversarial_generator_loss(ad.sigmoid(logit)), [logit])
    _check(lambda: ad.bce_discriminator_loss(ad.sigmoid(logit), ad.sigmoid(-logit)), [logit])


def test_linear_sigmoid_bce_micronet():
    rng = np.random.default_rng(5)
    w, b = rand_param(rng, (6, 1), "w"), rand_param(rng, (1,), "b")
    real, fake = Tensor(rng.standard_normal((4, 6))), Tensor(rng.standard_normal((4, 6)))
    closure = lambda: ad.bce_discriminator_loss(ad.sigmoid(ad.linear(fake, w, b)), ad.sigmoid(ad.linear(real, w, b)))
    report = grad_check(closure, [w, b])
    assert report["max_error"] < 1e-4


def test_constant_loss_has_zero_gradients():
    p = Parameter(np.ones(3), "p")
    report = grad_check(lambda: Tensor(2.0) + p.sum() * 0.0, [p])
    assert report["passed"] and report["max_error"] == 0.0


def test_corrupted_backward_is_caught():
    p = Parameter(np.array([0.3, -0.4]), "p")

    def bad_square(t):
        return Tensor._from_op(t.data**2, (t,), lambda g: (g * 3.0 * t.data,))

    report = grad_check(lambda: bad_square(p).sum(), [p])
    assert not report["passed"]


def test_gradient_accumulates_over_reuse():
    p = Parameter(np.array([2.0]), "p")
    (p * p + p).sum().backward()
    assert p.grad[0] == pytest.approx(5.0)


def test_no_grad_builds_no_tape():
    p = Parameter(np.array([1.0]), "p")
    with no_grad():
        out = (p * 3.0).sum()
    assert not out.requires_grad
    with pytest.raises(RuntimeError):
        out.backward()
    assert p.grad is None


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    x, w, b = rand_param(rng, (5, 7), "x"), rand_param(rng, (7, 3), "w"), rand_param(rng, (3,), "b")
    a = ad.softmax(ad.linear(x, w, b)).data
    assert a.tobytes() == ad.softmax(ad.linear(x, w, b)).data.tobytes()


# optimizers


def test_sgd_rule_and_zeroing():
    p = Parameter(np.array([1.0]), "p")
    p.grad = np.array([0.5])
    opt = SGD([p], 0.1)
    opt.step()
    assert p.data[0] == pytest.approx(0.95)
    assert p.grad is None


def test_zero_gradient_leaves_parameter():
    p = Parameter(np.array([1.0, -2.0]), "p")
    for opt in (SGD([p], 0.1), Adam([p], 0.1)):
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])


@pytest.mark.parametrize("g", [0.3, -7.0, 1e-3])
def test_adam_first_step_moves_by_lr_against_gradient(g):
    p = Parameter(np.array([1.0]), "p")
    p.grad = np.array([g])
    Adam([p], 1e-3).step()
    # hand evaluation: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    expected = 1.0 - 1e-3 * g / (abs(g) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)


def test_adam_matches_textbook_over_several_steps():
    rng = np.random.default_rng(2)
    p = Parameter(rng.standard_normal(4), "p")
    ref, m, v = p.data.copy(), np.zeros(4), np.zeros(4)
    opt = Adam([p], 0.01)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p.data, ref, rtol=1e-12, atol=1e-14)


def test_missing_gradient_names_parameter():
    p = Parameter(np.zeros(2), "g1.layer0.weight")
    with pytest.raises(MissingGradientError, match="g1.layer0.weight"):
        Adam([p]).step()


def test_optimizer_validation():
    with pytest.raises(ValueError):
        SGD([], 0.0)
    with pytest.raises(ValueError):
        Adam([], 1e-3, beta1=1.0)


# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    entries = {"a": np.arange(6.0).reshape(2, 3), "b.c": np.array([math.pi]), "s": np.zeros((0,))}
    path = tmp_path / "x.lfck"
    ad.save_checkpoint(path, entries)
    data = path.read_bytes()
    assert data[:4] == b"LFCK" and data[4] == 1
    back = ad.load_checkpoint(path)
    assert list(back) == list(entries)
    for k in entries:
        assert np.array_equal(back[k], entries[k])
    ad.save_checkpoint(tmp_path / "y.lfck", back)
    assert (tmp_path / "y.lfck").read_bytes() == data


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE")
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "bad")
    ad.save_checkpoint(tmp_path / "ok", {"w": np.ones((4, 4))})
    (tmp_path / "cut").write_bytes((tmp_path / "ok").read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "cut")
