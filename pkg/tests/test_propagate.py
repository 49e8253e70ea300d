import numpy as np
import pytest
import scipy.linalg

from ptwalk.bloch import max_imag_lambda
from ptwalk.lattice import (
    BlochState,
    Boundary,
    LatticeSpec,
    build_h0,
    build_h_lossy,
    build_h_pt,
    localized_state,
)
from ptwalk.propagate import (
    Kind,
    NonlinearSpec,
    StepControl,
    evolve_linear,
    evolve_nonlinear,
    intensity_csv,
    intensity_map,
)


def norms(traj):
    return np.linalg.norm(traj.states, axis=1)


class TestStepControl:
    @pytest.mark.parametrize("kw", [
        {"dt": 0.0}, {"dt": -1.0}, {"t_max": 0.0}, {"rel_tol": 1e-15}, {"rel_tol": 0.1},
        {"intensity_cap": 1.0}, {"stride": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            StepControl(**kw)

    def test_default_dt(self):
        ctrl = StepControl().resolve(LatticeSpec(5, 0.25, 0.75, 0.5))
        assert ctrl.dt == pytest.approx(0.02 / 1.5)

    def test_explicit_dt_kept(self):
        assert StepControl(dt=0.1).resolve(LatticeSpec(5, 0.25, 0.75, 0.5)).dt == 0.1

    def test_negative_eta(self):
        with pytest.raises(ValueError):
            NonlinearSpec(-0.1)


class TestLinear:
    def test_unitary_limit(self):
        spec = LatticeSpec(21, 0.3, 0.7, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(t_max=50.0), spec=spec)
        assert traj.flag == "ok"
        assert np.max(np.abs(norms(traj) - 1)) <= 1e-10

    def test_eigenvector_phase_only(self):
        spec = LatticeSpec(11, 0.4, 0.6, 0.0, Boundary.PERIODIC)
        h = build_h0(spec)
        _, vecs = np.linalg.eigh(h)
        v = vecs[:, 3].astype(complex)
        traj = evolve_linear(h, v, StepControl(dt=0.05, t_max=20.0))
        assert np.max(np.abs(np.abs(traj.states.conj() @ v) - 1)) <= 1e-10

    def test_matches_direct_exponential(self):
        spec = LatticeSpec(15, 0.35, 0.65, 0.4)
        h = build_h_pt(spec)
        psi0 = localized_state(spec, 0, BlochState(1.0, 0.4))
        traj = evolve_linear(h, psi0, StepControl(t_max=20.0), spec=spec)
        direct = scipy.linalg.expm(-1j * h * traj.times[-1]) @ psi0
        assert traj.times[-1] == pytest.approx(20.0)
        assert np.linalg.norm(traj.final - direct) <= 1e-8

    def test_gauge_relation(self):
        spec = LatticeSpec(15, 0.6, 0.4, 0.5)
        psi0 = localized_state(spec, 1, BlochState(2.0, 1.0))
        ctrl = StepControl(t_max=30.0)
        pt = evolve_linear(build_h_pt(spec), psi0, ctrl, spec=spec)
        lossy = evolve_linear(build_h_lossy(spec), psi0, ctrl, kind=Kind.LINEAR_LOSSY, spec=spec)
        np.testing.assert_array_equal(pt.times, lossy.times)
        np.testing.assert_allclose(lossy.states, np.exp(-0.5 * pt.times)[:, None] * pt.states, rtol=0, atol=1e-10)

    def test_loss_rate_identity(self):
        spec = LatticeSpec(21, 0.3, 0.7, 0.4)
        dt = 1e-4
        traj = evolve_linear(build_h_lossy(spec), localized_state(spec), StepControl(dt=dt, t_max=8.0),
                             kind=Kind.LINEAR_LOSSY, spec=spec)
        n2 = norms(traj) ** 2
        rate = (n2[2:] - n2[:-2]) / (2 * dt)
        target = -4 * spec.gamma * np.sum(np.abs(traj.states[1:-1, 1::2]) ** 2, axis=1)
        picks = np.linspace(1000, len(rate) - 1, 20).astype(int)
        np.testing.assert_allclose(rate[picks], target[picks], rtol=1e-6)

    def test_symmetric_phase_norm_bounded(self):
        spec = LatticeSpec(41, 0.75, 0.25, 0.3, Boundary.PERIODIC)
        traj = evolve_linear(build_h_pt(spec), localized_state(spec), StepControl(t_max=200.0, stride=10), spec=spec)
        n = norms(traj)
        assert n.max() / n.min() < 1e4

    def test_broken_phase_growth_rate(self):
        spec = LatticeSpec(41, 0.3, 0.7, 0.5, Boundary.PERIODIC)
        traj = evolve_linear(build_h_pt(spec), localized_state(spec), StepControl(t_max=100.0, stride=10),
                             spec=spec)
        late = traj.times >= 0.9 * traj.times[-1]
        slope = np.polyfit(traj.times[late], np.log(norms(traj)[late] ** 2), 1)[0]
        assert 0 < slope <= 2 * max_imag_lambda(spec) + 1e-3

    def test_overflow_flag(self):
        spec = LatticeSpec(11, 0.5, 0.5, 0.8)
        traj = evolve_linear(build_h_pt(spec), localized_state(spec), StepControl(t_max=500.0, intensity_cap=1e6),
                             spec=spec)
        assert traj.flag == "diverged"
        assert traj.times[-1] < 500.0
        assert np.max(np.abs(traj.states) ** 2) <= 1e6

    def test_stop_hook(self):
        spec = LatticeSpec(5, 0.5, 0.5, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(dt=0.1, t_max=10.0),
                             stop_when=lambda t, psi: t >= 1.0)
        assert traj.times[-1] == pytest.approx(1.0)

    def test_stride(self):
        spec = LatticeSpec(5, 0.5, 0.5, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(dt=0.1, t_max=2.0, stride=4))
        np.testing.assert_allclose(np.diff(traj.times), 0.4)
        assert traj.times[0] == 0.0 and np.all(np.diff(traj.times) > 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evolve_linear(np.eye(4), np.ones(6))


class TestNonlinear:
    def test_reduces_to_linear(self):
        spec = LatticeSpec(21, 0.3, 0.7, 0.4)
        psi0 = localized_state(spec, 0, BlochState(1.0, 2.0))
        ctrl = StepControl(t_max=20.0, stride=5, rel_tol=1e-10)
        lin = evolve_linear(build_h_pt(spec), psi0, ctrl, spec=spec)
        nl = evolve_nonlinear(spec, NonlinearSpec(0.0), psi0, ctrl)
        np.testing.assert_allclose(nl.times, lin.times, rtol=1e-12)
        assert np.max(np.abs(nl.states - lin.states)) <= 1e-8

    def test_conservative_limit(self):
        spec = LatticeSpec(21, 0.3, 0.7, 0.0)
        traj = evolve_nonlinear(spec, NonlinearSpec(2.0), localized_state(spec), StepControl(t_max=30.0, stride=5))
        assert traj.flag == "ok"
        assert np.max(np.abs(norms(traj) - 1)) <= 1e-8

    def test_phase_covariance(self):
        spec = LatticeSpec(11, 0.4, 0.6, 0.3)
        psi0 = localized_state(spec, 0, BlochState(0.7, 0.2))
        ctrl = StepControl(t_max=10.0, stride=5)
        a = evolve_nonlinear(spec, NonlinearSpec(1.0), psi0, ctrl)
        b = evolve_nonlinear(spec, NonlinearSpec(1.0), np.exp(0.9j) * psi0, ctrl)
        assert np.max(np.abs(b.states - np.exp(0.9j) * a.states)) <= 1e-8

    def test_uniform_samples(self):
        spec = LatticeSpec(11, 0.4, 0.6, 0.3)
        traj = evolve_nonlinear(spec, NonlinearSpec(1.0), localized_state(spec), StepControl(dt=0.25, t_max=5.0))
        np.testing.assert_allclose(traj.times, np.arange(21) * 0.25, atol=1e-12)
        assert traj.steps >= 20 and traj.eta == 1.0

    def test_diverged(self):
        spec = LatticeSpec(11, 0.5, 0.5, 0.8)
        traj = evolve_nonlinear(spec, NonlinearSpec(0.01), localized_state(spec),
                                StepControl(t_max=200.0, intensity_cap=1e4))
        assert traj.flag == "diverged" and traj.times[-1] < 200.0

    def test_budget(self):
        spec = LatticeSpec(11, 0.4, 0.6, 0.3)
        traj = evolve_nonlinear(spec, NonlinearSpec(1.0), localized_state(spec),
                                StepControl(t_max=50.0, max_steps=30))
        assert traj.flag == "budget" and traj.steps == 30

    def test_stalled(self):
        spec = LatticeSpec(11, 0.4, 0.6, 0.3)
        traj = evolve_nonlinear(spec, NonlinearSpec(1.0), localized_state(spec),
                                StepControl(dt=1.0, t_max=5.0, rel_tol=1e-13, min_step=0.5))
        assert traj.flag == "stalled"

    def test_wrong_shape(self):
        spec = LatticeSpec(5, 0.4, 0.6, 0.3)
        with pytest.raises(ValueError):
            evolve_nonlinear(spec, NonlinearSpec(0.0), np.ones(4, dtype=complex))

    def test_periodic_corners(self):
        spec = LatticeSpec(7, 0.3, 0.7, 0.2, Boundary.PERIODIC)
        psi0 = localized_state(spec, 3)
        ctrl = StepControl(t_max=5.0, stride=5)
        lin = evolve_linear(build_h_pt(spec), psi0, ctrl, spec=spec)
        nl = evolve_nonlinear(spec, NonlinearSpec(0.0), psi0, ctrl)
        assert np.max(np.abs(nl.states - lin.states)) <= 1e-8


class TestIntensity:
    def test_initial_sample(self):
        spec = LatticeSpec(7, 0.75, 0.25, 0.5)
        traj = evolve_linear(build_h_pt(spec), localized_state(spec), StepControl(t_max=1.0), spec=spec)
        rows = intensity_map(traj)
        first = [r for r in rows if r[0] == 0.0]
        assert len(first) == 14
        assert [r for r in first if r[3] != 0.0] == [(0.0, 0, "A", 1.0)]

    def test_row_order(self):
        spec = LatticeSpec(3, 0.5, 0.5, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(dt=0.5, t_max=1.0))
        keys = [(r[0], r[1], r[2]) for r in intensity_map(traj)]
        assert keys[:6] == [(0.0, -1, "A"), (0.0, -1, "B"), (0.0, 0, "A"), (0.0, 0, "B"), (0.0, 1, "A"), (0.0, 1, "B")]
        assert keys == sorted(keys, key=lambda k: (k[0], k[1], k[2]))

    def test_unitary_sums(self):
        spec = LatticeSpec(9, 0.3, 0.7, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(t_max=10.0, stride=10))
        sums = {}
        for t, _, _, value in intensity_map(traj):
            sums[t] = sums.get(t, 0.0) + value
        assert max(abs(s - 1) for s in sums.values()) <= 1e-10

    def test_broken_total_grows(self):
        spec = LatticeSpec(21, 0.5, 0.5, 0.5)
        traj = evolve_linear(build_h_pt(spec), localized_state(spec), StepControl(t_max=40.0, stride=25), spec=spec)
        total = np.sum(np.abs(traj.states) ** 2, axis=1)
        late = total[len(total) // 2:]
        assert np.all(np.diff(late) > 0)

    def test_csv(self):
        spec = LatticeSpec(3, 0.5, 0.5, 0.0)
        traj = evolve_linear(build_h0(spec), localized_state(spec), StepControl(dt=0.5, t_max=0.5))
        lines = intensity_csv(traj).split("\n")
        assert lines[0] == "t,cell,sublattice,intensity"
        assert lines[3] == "0.0,0,A,1.0"
        assert len(lines) == 1 + 12 + 1 and lines[-1] == ""
