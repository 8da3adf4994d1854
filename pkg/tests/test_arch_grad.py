"""Whole-network finite-difference gradient verification (64-bit)."""
import numpy as np

from tsunet.arch import ArchSpec, MUNet, UNet
from tsunet.gradcheck import numerical_gradient, rel_error
from tsunet.train import soft_dice_loss

from helpers import desk_spec


# Conv biases feed straight into batch norm, which makes the loss exactly
# invariant to them: their true gradient is zero and both sides sit at float
# noise. Central differences cannot resolve below eps*|loss|/(2h) ~ 5e-12, so
# arrays where both sides are under ZERO_RESOLUTION count as matching zeros.
ZERO_RESOLUTION = 1e-10
GRAD_FLOOR = 1e-8


def check_all_param_gradients(model, x, target, tol):
    probs = model.forward(x, train=True)
    _, dprobs = soft_dice_loss(probs, target)
    model.zero_grads()
    dx_analytic = model.backward(dprobs)

    worst = ("", 0.0)
    for name, p in model.named_params():
        analytic = p.grad.copy()
        original = p.value.copy()

        def f(v, p=p):
            p.value[...] = v
            loss, _ = soft_dice_loss(model.forward(x, train=True), target)
            return loss

        numeric = numerical_gradient(f, original.copy(), h=1e-5)
        p.value[...] = original
        if max(np.abs(analytic).max(), np.abs(numeric).max()) < ZERO_RESOLUTION:
            continue  # zero gradient on both sides, to FD measurement precision
        err = rel_error(analytic, numeric, floor=GRAD_FLOOR)
        if err > worst[1]:
            worst = (name, err)
        assert err < tol, f"{name}: rel err {err:.3e} >= {tol}"

    def f_input(v):
        loss, _ = soft_dice_loss(model.forward(v, train=True), target)
        return loss

    dx_numeric = numerical_gradient(f_input, x.copy(), h=1e-5)
    err = rel_error(dx_analytic, dx_numeric, floor=GRAD_FLOOR)
    assert err < tol, f"input gradient: rel err {err:.3e}"
    return worst


def test_desk_unet_gradients_match_finite_differences():
    spec = desk_spec()  # L=64, depth=3, base_width=4
    model = UNet(spec, seed=12, dtype=np.float64)
    rng = np.random.default_rng(42)
    x = rng.normal(size=(2, 64, 1))
    target = (rng.random((2, 64, spec.classes)) < 0.25).astype(np.float64)
    worst = check_all_param_gradients(model, x, target, tol=1e-5)
    print(f"worst unet param gradient: {worst[0]} rel err {worst[1]:.2e}")


def test_tiny_munet_gradients_match_finite_differences():
    spec = ArchSpec(kind="munet", channels=2, input_length=16, depth=2,
                    base_width=2, classes=2)
    model = MUNet(spec, seed=3, dtype=np.float64)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 16, 2))
    target = (rng.random((2, 16, 2)) < 0.3).astype(np.float64)
    check_all_param_gradients(model, x, target, tol=1e-5)


def test_single_label_desk_net_gradients():
    spec = desk_spec(label_mode="single_label", classes=2, input_length=16,
                     depth=2, base_width=2)
    model = UNet(spec, seed=5, dtype=np.float64)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 16, 1))
    y = (rng.random((2, 16, 2)) < 0.3)
    nominal = ~y.any(axis=2, keepdims=True)
    target = np.concatenate([y, nominal], axis=2).astype(np.float64)
    check_all_param_gradients(model, x, target, tol=1e-5)
