import numpy as np
import pytest

from fluidforge.core import Blob, ParticleSet, ScenarioConfig

# (name, verdict) pairs recorded by the acceptance suite; printed in the
# terminal summary so the per-criterion lines survive output capture.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{name}: {verdict}")

# Central-difference steps for gradient checks, largest first.  A step is
# trusted only if the estimate agrees with the next smaller step (otherwise a
# ReLU kink sits inside the probed interval and the FD estimate is invalid);
# first-layer bias tensors see pre-activations of order 1e-3, so kink-free
# probes at h=1e-4 are not always available and the check falls back.
FD_STEPS = (1e-4, 1e-5, 1e-6)


def fd_gradient_check(weights, batch, targets, grads, name, rng,
                      entries=3, rel_tol=1e-4):
    """Check sampled entries of one parameter tensor against central FD."""
    from fluidforge.neural import loss_and_gradients

    def loss_with(entry, delta):
        probe = weights.copy()
        probe.params[name].reshape(-1)[entry] += delta
        loss, _ = loss_and_gradients(probe, batch, targets)
        return loss

    flat_size = weights.params[name].size
    checked = 0
    for entry in rng.permutation(flat_size)[:8]:
        estimates = {}
        for h in FD_STEPS + (FD_STEPS[-1] / 10,):
            estimates[h] = (loss_with(entry, h) - loss_with(entry, -h)) / (2 * h)
        valid = None
        for h, smaller in zip(FD_STEPS, FD_STEPS[1:] + (FD_STEPS[-1] / 10,)):
            # converged-to-better-than-assertion gate: the two estimates must
            # agree an order of magnitude tighter than rel_tol
            if abs(estimates[h] - estimates[smaller]) <= 0.1 * rel_tol * max(abs(estimates[smaller]), 1e-8):
                valid = h
                break
        if valid is None:
            continue
        analytic = grads[name].reshape(-1)[entry]
        fd = estimates[valid]
        assert abs(analytic - fd) <= rel_tol * max(abs(fd), 1e-10), (
            f"{name}[{entry}]: analytic {analytic} vs fd({valid}) {fd}")
        checked += 1
        if checked >= entries:
            break
    assert checked > 0, f"no kink-free probe found for {name}"
    return checked


def make_particles(positions, velocities=None, masses=None, material=0):
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if velocities is None:
        velocities = np.zeros_like(positions)
    if masses is None:
        masses = np.ones(n)
    return ParticleSet.from_arrays(positions, velocities, masses,
                                   np.full(n, material, dtype=np.uint8))


def kinetic_energy(particles):
    speed2 = (particles.velocities ** 2).sum(axis=1)
    return 0.5 * float((particles.masses * speed2).sum())


@pytest.fixture
def water_block_config():
    return ScenarioConfig(
        name="block", dim=2, total_steps=50, gravity=(0.0, -9.8),
        blobs=(Blob(shape="box", center=(0.5, 0.5), size=(0.2, 0.2)),),
        spacing=0.01, seed=0)


@pytest.fixture
def drift_config():
    # Gravity-free blob in the domain interior: nothing touches a boundary.
    return ScenarioConfig(
        name="drift", dim=2, total_steps=20, gravity=(0.0, 0.0),
        blobs=(Blob(shape="box", center=(0.5, 0.5), size=(0.1, 0.1),
                    velocity_low=(0.02, 0.01), velocity_high=(0.02, 0.01)),),
        spacing=0.01, seed=7)
