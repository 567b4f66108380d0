import math

import numpy as np
import pytest

from vimseq.costs import CostSpec
from vimseq.dynamics import _rollout
from vimseq.es import EsConfig, run
from vimseq.ilqr import OcpSpec, solve
from vimseq.tasks import DmpReaching, SequentialReaching, SequentialTracking

# Regression values of the unoptimised chained iLQR episode under the shipped
# defaults (w_e = 1, p_s = pi/24 for every sub-movement).
ILQR0_E_IN = 2.965155318159753
ILQR0_J_P = 178.20911399975958


@pytest.fixture(scope="module")
def reach(params):
    return SequentialReaching(params)


@pytest.fixture(scope="module")
def ilqr0(reach):
    return reach.episode(reach.initial())


def test_ilqr0_reproduces(ilqr0):
    assert ilqr0.report.E_in == pytest.approx(ILQR0_E_IN, rel=1e-6)
    assert ilqr0.report.J_p == pytest.approx(ILQR0_J_P, rel=1e-6)
    assert all(ilqr0.diagnostics["converged"])


def test_ilqr0_reaches_every_target(ilqr0, reach):
    q = ilqr0.fine.states[:, 0]
    ends = np.cumsum(ilqr0.segment_steps)
    assert np.abs(q[ends] - np.array(reach.targets)).max() < 0.05


def test_chaining_starts_each_solve_at_previous_end(ilqr0, reach, params):
    assert ilqr0.controls.shape == (150, 3)
    assert ilqr0.fine.states.shape == (3001, 6)
    x1 = _rollout(reach.x0, ilqr0.controls[:50], reach.dt, params.packed())[-1]
    ocp = OcpSpec(x0=x1, cost=CostSpec(target=reach.targets[1]), p_s=math.pi / 24)
    again = solve(ocp, params, reach.settings).trajectory.controls
    assert np.array_equal(again, ilqr0.controls[50:100])


def test_single_sub_movement(params):
    one = SequentialReaching(params, targets=(0.7,))
    xi = one.initial()
    assert xi.shape == (2,)
    ep = one.episode(xi)
    assert ep.segment_steps == [1000]
    assert abs(ep.fine.final_state[0] - 0.7) < 0.05


def test_policy_length_is_checked(reach):
    with pytest.raises(ValueError):
        reach.episode(np.ones(5))


def test_dmp_policy_dimension(params):
    ad = DmpReaching(params)
    xi = ad.initial()
    assert xi.size == 99 and ad.lower.size == 99
    ep = ad.episode(xi)
    assert ep.controls.shape == (150, 3)
    assert ep.report.J_e == ep.diagnostics["composite"]
    assert ep.report.E_in > 0


def test_dmp_energy_objective(params):
    ad = DmpReaching(params, objective="E_in")
    ep = ad.episode(ad.initial())
    assert ep.report.J_e == ep.report.E_in


def test_dmp_sample_count_per_iteration(params):
    ad = DmpReaching(params)
    calls = []

    class Counting:
        lower, upper, labels = ad.lower, ad.upper, ad.labels

        def evaluate(self, xi):
            calls.append(1)
            return ad.evaluate(xi)

    sigma = (10.0,) * 90 + (0.5,) * 9
    res = run(Counting(), EsConfig(K=45, mu=15, gamma=0.95, sigma=sigma, max_iters=1),
              ad.initial(), J_bar=math.inf)
    # baseline + 45 perturbed + one unperturbed evaluation
    assert len(calls) == 47
    assert res.history[1].n_samples == 45


def test_tracking_baseline(params):
    ad = SequentialTracking(params)
    xi = ad.initial()
    assert np.allclose(xi, [0.6] * 3 + [0.2] * 4)
    ep = ad.episode(xi)
    assert ep.diagnostics["durations"] == pytest.approx([0.6] * 4)
    assert ep.fine.tf == pytest.approx(2.4, abs=1e-12)
    assert ep.report.E_in > 0 and ep.diagnostics["rank_deficient_steps"] == 0


def test_tracking_rejects_infeasible_timing(params):
    ad = SequentialTracking(params)
    with pytest.raises(ValueError):
        ad.episode(np.array([1.0, 1.0, 0.3, 0.2, 0.2, 0.2, 0.2]))
