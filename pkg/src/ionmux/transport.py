"""Classical transport dynamics of an ion chain in a moving harmonic well.

Equations of motion are integrated in scaled units (length ``l`` of the
reference frequency, time ``1/w_ref``):

    u_i'' = -(w(t)/w_ref)^2 [(u_i - c(t)) + kappa (u_i - c(t))^3]
            + sum_{j != i} sgn(u_i - u_j) / (u_i - u_j)^2

``kappa`` is an optional dimensionless quartic coefficient.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import io
import logging

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .chain import equilibrium_positions, length_scale, normal_modes
from .constants import CONSTANTS
from .errors import ChainMeltedError, ConvergenceError, IonMuxError, NumericError
from .waveform import schedule_potential

log = logging.getLogger(__name__)

__all__ = [
    "IntegratorOptions",
    "TrajectoryResult",
    "ModeExcitation",
    "SweepResult",
    "OptimizeResult",
    "OptimizationError",
    "simulate_transport",
    "mode_excitations",
    "sweep_transport_time",
    "optimize_ramp",
    "timing_objective",
    "MELT_FRACTION",
]

MELT_FRACTION = 0.05


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "dop853"  # or "leapfrog"
    rtol: float = 1e-10
    atol: float = 1e-12  # scaled units
    step: float = 2e-9  # s, leapfrog only
    max_samples: int = 2001

    def __post_init__(self):
        if self.method not in ("dop853", "leapfrog"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0 and self.step > 0):
            raise ValueError("tolerances and step must be positive")
        if self.max_samples < 2:
            raise ValueError("max_samples must be >= 2")


@dataclass(frozen=True)
class TrajectoryResult:
    times: np.ndarray  # s
    positions: np.ndarray  # m, (n_ions, samples)
    velocities: np.ndarray  # m/s
    final_center: float
    final_omega: float
    quartic: float = 0.0
    config: object = field(default=None, repr=False)

    @property
    def final_positions(self):
        return self.positions[:, -1]

    @property
    def final_velocities(self):
        return self.velocities[:, -1]

    def to_csv(self, dest=None):
        buf = io.StringIO()
        n = self.positions.shape[0]
        buf.write("time_s," + ",".join(f"x{i + 1}" for i in range(n)) + "\n")
        for k, t in enumerate(self.times):
            buf.write(f"{t:.12e}," + ",".join(f"{x:.12e}" for x in self.positions[:, k]) + "\n")
        return _emit(buf.getvalue(), dest)


@dataclass(frozen=True)
class ModeExcitation:
    alpha: np.ndarray  # complex, per mode
    frequencies: np.ndarray

    @property
    def n_alpha(self):
        return np.abs(self.alpha) ** 2

    @property
    def com_n_alpha(self):
        return float(self.n_alpha[0])

    def __len__(self):
        return len(self.alpha)


@dataclass(frozen=True)
class SweepResult:
    total_time: np.ndarray
    omega: np.ndarray
    com_n_alpha: np.ndarray

    def curve(self, omega):
        sel = np.isclose(self.omega, omega, rtol=1e-12)
        return self.total_time[sel], self.com_n_alpha[sel]

    def to_csv(self, dest=None):
        buf = io.StringIO()
        buf.write("total_time_s,omega_rad_s,com_n_alpha\n")
        for t, w, n in zip(self.total_time, self.omega, self.com_n_alpha):
            buf.write(f"{t:.9e},{w:.9e},{n:.9e}\n")
        return _emit(buf.getvalue(), dest)


def _emit(text, dest):
    if dest is None:
        return text
    with open(dest, "w", newline="\n") as fh:
        fh.write(text)


def _accel(u, center, wratio2, kappa):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    coulomb = np.sum(np.sign(d) / d ** 2, axis=1)
    disp = u - center
    return -wratio2 * (disp + kappa * disp ** 3) + coulomb


def simulate_transport(config, potential, opts=None, *, initial_positions=None,
                       initial_velocities=None, quartic=0.0, sample_times=None):
    """Integrate the chain through ``potential`` from its ``t_start`` to ``t_end``.

    ``potential`` needs ``center(t)``, ``omega(t)``, ``t_start``, ``t_end``
    and ``breakpoints``; integration restarts at every breakpoint so kinks in
    the drive do not degrade the adaptive step control. The default initial
    state is the equilibrium at ``t_start`` with zero velocity.
    """
    opts = opts or IntegratorOptions()
    n = config.n_ions
    w_ref = config.axial_freq
    ell = length_scale(config)
    t0, t1 = float(potential.t_start), float(potential.t_end)

    if initial_positions is None:
        eq = equilibrium_positions(
            config.with_frequency(float(potential.omega(t0))), float(potential.center(t0)),
            quartic=quartic,
        )
        x0 = eq.positions
    else:
        x0 = np.sort(np.asarray(initial_positions, dtype=float))
    v0 = np.zeros(n) if initial_velocities is None else np.asarray(initial_velocities, dtype=float)
    if x0.shape != (n,) or v0.shape != (n,):
        raise ValueError("initial state must have one entry per ion")

    if sample_times is None:
        sample_times = np.linspace(t0, t1, opts.max_samples)
    sample_times = np.asarray(sample_times, dtype=float)

    def center_s(tau):
        return potential.center(tau / w_ref) / ell

    def wratio2(tau):
        return (potential.omega(tau / w_ref) / w_ref) ** 2

    state = np.concatenate([x0 / ell, v0 / (ell * w_ref)])
    bps = np.unique(np.concatenate([[t0], np.asarray(potential.breakpoints, float), [t1]]))
    bps = bps[(bps >= t0) & (bps <= t1)]
    melt = MELT_FRACTION

    out_t, out_y = [], []
    if opts.method == "dop853":
        def rhs(tau, y):
            u = y[:n]
            return np.concatenate([y[n:], _accel(u, center_s(tau), wratio2(tau), quartic)])

        def melted(tau, y):
            return np.min(np.diff(y[:n])) - melt if n > 1 else 1.0
        melted.terminal = True

        for a, b in zip(bps[:-1], bps[1:]):
            if b <= a:
                continue
            sel = (sample_times >= a) & ((sample_times < b) | ((b == t1) & (sample_times <= b)))
            sol = solve_ivp(
                rhs, (a * w_ref, b * w_ref), state, method="DOP853",
                rtol=opts.rtol, atol=opts.atol, dense_output=True,
                events=melted if n > 1 else None,
            )
            if sol.status == 1:
                raise ChainMeltedError(
                    f"chain melted: ions closer than {melt} l at t = {sol.t_events[0][0] / w_ref:.6e} s"
                )
            if sol.status != 0:
                raise ConvergenceError(f"integration failed at t = {sol.t[-1] / w_ref:.6e} s: {sol.message}")
            if np.any(sel):
                out_t.append(sample_times[sel])
                out_y.append(sol.sol(sample_times[sel] * w_ref))
            state = sol.y[:, -1]
    else:
        h_target = opts.step * w_ref
        for a, b in zip(bps[:-1], bps[1:]):
            if b <= a:
                continue
            sel = (sample_times >= a) & ((sample_times < b) | ((b == t1) & (sample_times <= b)))
            ts, ys, state = _leapfrog(state, a * w_ref, b * w_ref, h_target, n, center_s,
                                      wratio2, quartic, sample_times[sel] * w_ref, melt)
            if len(ts):
                out_t.append(ts / w_ref)
                out_y.append(ys)

    times = np.concatenate(out_t) if out_t else np.array([t1])
    if out_y:
        ys = np.concatenate(out_y, axis=1)
    else:
        ys = state[:, None]
    if times[-1] != t1:
        times = np.append(times, t1)
        ys = np.concatenate([ys, state[:, None]], axis=1)
    else:
        ys[:, -1] = state
    positions = ys[:n] * ell
    velocities = ys[n:] * ell * w_ref
    if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities))):
        raise NumericError("non-finite state in trajectory")
    return TrajectoryResult(
        times, positions, velocities, float(potential.center(t1)), float(potential.omega(t1)),
        quartic, config,
    )


def _leapfrog(state, a, b, h_target, n, center_s, wratio2, kappa, sample_taus, melt):
    """Kick-drift-kick velocity Verlet on [a, b] with a step dividing b - a."""
    steps = max(1, int(np.ceil((b - a) / h_target)))
    h = (b - a) / steps
    u = state[:n].copy()
    v = state[n:].copy()
    acc = _accel(u, center_s(a), wratio2(a), kappa)
    ts, ys = [], []
    k_sample = 0
    tau = a
    for step in range(steps + 1):
        while k_sample < len(sample_taus) and sample_taus[k_sample] <= tau + 0.5 * h:
            # samples are taken at the nearest grid point
            ts.append(sample_taus[k_sample])
            ys.append(np.concatenate([u, v]))
            k_sample += 1
        if step == steps:
            break
        v_half = v + 0.5 * h * acc
        u = u + h * v_half
        tau = a + (step + 1) * h
        acc = _accel(u, center_s(tau), wratio2(tau), kappa)
        v = v_half + 0.5 * h * acc
        if n > 1 and np.min(np.diff(u)) < melt:
            raise ChainMeltedError(f"chain melted: ions closer than {melt} l")
    ys = np.array(ys).T if ys else np.empty((2 * n, 0))
    return np.array(ts), ys, np.concatenate([u, v])


def mode_excitations(traj, modes, config=None):
    """Project the final displacement and velocity onto the normal modes.

    The reference is the equilibrium of the final (static) potential.
    """
    config = config or traj.config or modes.config
    final_cfg = config.with_frequency(traj.final_omega)
    try:
        eq = equilibrium_positions(final_cfg, traj.final_center, quartic=traj.quartic)
    except IonMuxError as exc:
        raise NumericError(f"no equilibrium for the final potential: {exc}") from exc
    delta = traj.final_positions - eq.positions
    vel = traj.final_velocities
    m = config.ion_mass
    hbar = CONSTANTS.hbar
    w = modes.frequencies
    q = modes.eigenvectors @ delta
    p = m * (modes.eigenvectors @ vel)
    alpha = np.sqrt(m * w / (2 * hbar)) * q + 1j * p / np.sqrt(2 * m * hbar * w)
    return ModeExcitation(alpha, w.copy())


def _sweep_point(args):
    config, template, calibration, omega, total_time, opts, scale_dwell = args
    schedule = template.with_ramp_duration(total_time, scale_dwell)
    potential = schedule_potential(schedule, calibration, forward_only=True, omega=omega)
    chain_cfg = config.with_frequency(omega)
    traj = simulate_transport(chain_cfg, potential, opts)
    modes = normal_modes(equilibrium_positions(chain_cfg))
    return mode_excitations(traj, modes, chain_cfg).com_n_alpha


def sweep_transport_time(config, template, calibration, omegas, total_times, opts=None,
                         workers=1, scale_dwell=False):
    """COM coherent excitation after the forward pass on an (omega, time) grid.

    ``total_times`` is the duration ``T`` of each transport step (every
    forward ramp of the template is set to it); dwells are kept unless
    ``scale_dwell``. Rows are ordered omega-major.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    total_times = np.atleast_1d(np.asarray(total_times, dtype=float))
    if omegas.size == 0 or total_times.size == 0:
        raise ValueError("sweep grids must be non-empty")
    opts = opts or IntegratorOptions(max_samples=2)
    grid = [(w, t) for w in omegas for t in total_times]
    jobs = [(config, template, calibration, w, t, opts, scale_dwell) for w, t in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_sweep_point, jobs))
    else:
        values = [_sweep_point(job) for job in jobs]
    w_col = np.array([w for w, _ in grid])
    t_col = np.array([t for _, t in grid])
    return SweepResult(t_col, w_col, np.array(values))


class OptimizationError(NumericError):
    pass


@dataclass(frozen=True)
class OptimizeResult:
    x: np.ndarray
    value: float
    initial_value: float
    n_evals: int
    history: list = field(repr=False, default_factory=list)


def optimize_ramp(objective, x0, bounds, budget=200, seed=0):
    """Derivative-free minimisation: coarse scan, then bounded Nelder-Mead.

    About 40% of ``budget`` goes to the scan (a full grid for up to two
    parameters, seeded uniform samples otherwise); the rest refines from the
    best scanned point. The initial point is always evaluated first and the
    best evaluation is returned, so the result is never worse than ``x0``.
    Evaluations that raise or return non-finite values count as failures.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if len(bounds) != len(x0) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("need one (low, high) pair with low < high per parameter")
    if np.any(x0 < bounds[:, 0]) or np.any(x0 > bounds[:, 1]):
        raise ValueError("initial point outside bounds")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    history = []

    def evaluate(x):
        x = np.clip(np.asarray(x, dtype=float), bounds[:, 0], bounds[:, 1])
        try:
            val = float(objective(x))
        except (IonMuxError, ArithmeticError, ValueError) as exc:
            log.debug("evaluation failed at %s: %s", x, exc)
            val = np.inf
        if not np.isfinite(val):
            val = np.inf
        history.append((x.copy(), val))
        return val

    initial_value = evaluate(x0)
    dim = len(x0)
    n_scan = int(0.4 * (budget - 1))
    if n_scan >= 2:
        if dim <= 2:
            per = max(2, int(np.floor(n_scan ** (1.0 / dim))))
            axes = [np.linspace(lo, hi, per) for lo, hi in bounds]
            pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(dim, -1).T
        else:
            rng = np.random.default_rng(seed)
            pts = bounds[:, 0] + rng.random((n_scan, dim)) * (bounds[:, 1] - bounds[:, 0])
        for p in pts:
            evaluate(p)

    remaining = budget - len(history)
    if remaining > 0:
        start = min(history, key=lambda h: h[1])[0]
        if np.isfinite(min(h[1] for h in history)):
            span = bounds[:, 1] - bounds[:, 0]
            simplex = [start]
            for i in range(dim):
                vertex = start.copy()
                step = 0.05 * span[i]
                vertex[i] = vertex[i] + step if vertex[i] + step <= bounds[i, 1] else vertex[i] - step
                simplex.append(vertex)
            minimize(
                evaluate, start, method="Nelder-Mead", bounds=bounds,
                options={"maxfev": remaining, "initial_simplex": np.array(simplex),
                         "xatol": 1e-12 * float(np.max(span)), "fatol": 0.0},
            )

    finite = [h for h in history if np.isfinite(h[1])]
    if not finite:
        raise OptimizationError("all objective evaluations failed")
    best_x, best_val = min(finite, key=lambda h: h[1])
    if not best_val < initial_value:
        best_x, best_val = history[0]
    return OptimizeResult(best_x, best_val, initial_value, len(history), history)


def timing_objective(config, spacings, calibration, timing, free, opts=None):
    """Objective ``params -> COM n_alpha`` after the forward pass.

    ``free`` names the parameters: ``"ramp_duration"``, ``"dwell"`` or
    ``"ramp_<k>"`` for the duration of step ``k`` alone.
    """
    from dataclasses import replace as _replace

    from .waveform import build_schedule

    opts = opts or IntegratorOptions(max_samples=2)
    n_steps = len(spacings)
    modes = normal_modes(equilibrium_positions(config))

    def objective(params):
        ramps = np.full(n_steps, timing.ramp_duration, dtype=float)
        dwell = timing.dwell
        for name, value in zip(free, params):
            if name == "ramp_duration":
                ramps[:] = value
            elif name == "dwell":
                dwell = value
            elif name.startswith("ramp_"):
                ramps[int(name.split("_")[1])] = value
            else:
                raise ValueError(f"unknown free parameter {name!r}")
        sched = build_schedule(spacings, calibration, _replace(timing, ramp_duration=ramps, dwell=dwell))
        pot = schedule_potential(sched, calibration, forward_only=True, omega=config.axial_freq)
        traj = simulate_transport(config, pot, opts)
        return mode_excitations(traj, modes, config).com_n_alpha

    return objective
