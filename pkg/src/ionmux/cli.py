"""Command-line entry point: ``ionmux <subcommand> --config run.yaml --out DIR``.

Every subcommand writes one or more CSV tables (or JSON with
``--format json``), a ``<subcommand>.summary.json`` sidecar that records the
config digest, and prints a one-line digest of the result. Exit codes: 0 ok,
2 config, 3 input, 4 numeric or convergence failure.
"""
import argparse
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import sys

import numpy as np

from .chain import chain_spacings, equilibrium_positions, lamb_dicke_table, normal_modes
from .config import config_digest, load_config
from .errors import ConfigError, InputError, IonMuxError
from .photonics import (
    CrosstalkMatrix,
    EmissionModel,
    TrialSchedule,
    bin_temporal_profile,
    chain_predicted_g2,
    correlation_histogram,
    dark_probability_for_floor,
    iter_synthetic_tags,
    predicted_g2,
    rate_budget,
    write_time_tags,
)
from .spectroscopy import (
    MotionalState,
    first_flop_contrast,
    sideband_spectrum,
    simulate_carrier_flop,
)
from .transport import (
    mode_excitations,
    optimize_ramp,
    simulate_transport,
    sweep_transport_time,
    timing_objective,
)
from .waveform import apply_lowpass, build_schedule, potential_trajectory, schedule_potential

log = logging.getLogger("ionmux")

EXIT_CODES = {"config": 2, "input": 3, "numeric": 4, "convergence": 4}


@dataclass
class Table:
    name: str
    columns: dict
    text: str = None  # preformatted CSV when the format is fixed

    def csv(self):
        if self.text is not None:
            return self.text
        names = list(self.columns)
        cols = [np.asarray(self.columns[n]) for n in names]
        lines = [",".join(names)]
        for row in zip(*cols):
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def records(self):
        return {k: np.asarray(v).tolist() for k, v in self.columns.items()}


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


@dataclass
class Outcome:
    tables: list
    summary: dict
    message: str
    plots: list = field(default_factory=list)  # (stem, x column, y columns, table)


# --- shared builders -------------------------------------------------------


def _chain(cfg):
    return equilibrium_positions(cfg.chain_config())


def _schedule(cfg, chain=None):
    chain = chain or _chain(cfg)
    return build_schedule(chain_spacings(chain), cfg.calibration_model(), cfg.timing.build())


def _trial_schedule(cfg):
    return TrialSchedule.from_schedule(_schedule(cfg), cfg.analysis.window_length)


def _emission_model(cfg):
    ph = cfg.photonics
    n = cfg.chain.n_ions
    dark = ph.dark_rate
    if dark is None:
        rho = ph.emission_prob * ph.detection_efficiency
        dark = dark_probability_for_floor(ph.g2_floor, rho) / cfg.analysis.coincidence_window
    return EmissionModel.uniform(
        n, ph.emission_prob, ph.crosstalk, detection_efficiency=ph.detection_efficiency,
        dark_rate=dark, emission_delay=ph.emission_delay,
    )


def _require_tags(args):
    if args.tags is None:
        raise InputError("this subcommand needs --tags PATH")
    path = Path(args.tags)
    if not path.is_file():
        raise InputError(f"tag file not found: {path}")
    return path


# --- subcommands -----------------------------------------------------------


def cmd_equilibrium(cfg, args):
    chain = _chain(cfg)
    x = chain.positions
    table = Table("equilibrium", {"ion": np.arange(1, len(x) + 1), "position_m": x,
                                  "scaled": chain.scaled_positions})
    span = float(x[-1] - x[0])
    gaps = np.diff(x) if len(x) > 1 else np.array([0.0])
    summary = {"span_m": span, "min_spacing_m": float(gaps.min()),
               "center_spacing_m": float(gaps[len(gaps) // 2]), "residual": chain.residual}
    msg = f"{len(x)} ions, span {span * 1e6:.2f} um, min spacing {gaps.min() * 1e6:.2f} um"
    return Outcome([table], summary, msg, [("equilibrium", "ion", ["position_m"], table)])


def cmd_modes(cfg, args):
    modes = normal_modes(_chain(cfg))
    sp = cfg.spectroscopy
    eta = lamb_dicke_table(modes, sp.wavelength, sp.projection_cosine)
    f = modes.frequencies / (2 * np.pi)
    cols = {"mode": np.arange(len(f)), "frequency_hz": f, "ratio": f / f[0],
            "eta_rms": np.sqrt(np.mean(eta.eta ** 2, axis=1))}
    for i in range(modes.eigenvectors.shape[1]):
        cols[f"b{i + 1}"] = modes.eigenvectors[:, i]
    table = Table("modes", cols)
    summary = {"lowest_hz": float(f[0]), "highest_hz": float(f[-1]),
               "eta_single": eta.eta_single, "eta_com_effective": eta.com_effective}
    msg = (f"{len(f)} modes, lowest {f[0] / 1e3:.3f} kHz, highest {f[-1] / 1e3:.3f} kHz, "
           f"eta_com {eta.com_effective:.4f}")
    return Outcome([table], summary, msg, [("modes", "mode", ["frequency_hz"], table)])


def _waveform(cfg, sched, t_end=None):
    wf = sched.to_waveform(cfg.waveform.sample_period, cfg.waveform.include_return, t_end=t_end)
    if cfg.filter.enabled:
        wf = apply_lowpass(wf, cfg.filter.build())
    return wf


def cmd_waveform(cfg, args):
    sched = _schedule(cfg)
    wf = _waveform(cfg, sched)
    table = Table("waveform", {"time_s": wf.times, "v1": wf.v1, "v2": wf.v2}, wf.to_csv())
    summary = {"samples": len(wf), "duration_s": wf.duration, "filtered": cfg.filter.enabled,
               "total_delta_v": float(sched.total_delta_v)}
    msg = f"{len(wf)} samples over {wf.duration * 1e6:.2f} us, total dV {sched.total_delta_v:.4f} V"
    return Outcome([table], summary, msg, [("waveform", "time_s", ["v1", "v2"], table)])


def cmd_transport(cfg, args):
    chain_cfg = cfg.chain_config()
    sched = _schedule(cfg)
    calib = cfg.calibration_model()
    tr = cfg.transport
    if cfg.filter.enabled:
        end = (sched.forward_duration if tr.forward_only else sched.end_time) + tr.hold
        potential = potential_trajectory(_waveform(cfg, sched, t_end=end), calib)
    else:
        potential = schedule_potential(sched, calib, forward_only=tr.forward_only, hold=tr.hold)
    traj = simulate_transport(chain_cfg, potential, cfg.integrator.build(), quartic=tr.quartic)
    modes = normal_modes(equilibrium_positions(chain_cfg))
    exc = mode_excitations(traj, modes, chain_cfg)
    cols = {"time_s": traj.times}
    for i, row in enumerate(traj.positions):
        cols[f"x{i + 1}"] = row
    traj_table = Table("trajectory", cols, traj.to_csv())
    exc_table = Table("excitations", {
        "mode": np.arange(len(exc)), "frequency_hz": exc.frequencies / (2 * np.pi),
        "alpha_re": exc.alpha.real, "alpha_im": exc.alpha.imag, "n_alpha": exc.n_alpha,
    })
    total = float(exc.n_alpha.sum())
    summary = {"com_n_alpha": exc.com_n_alpha, "total_n_alpha": total,
               "com_fraction": exc.com_n_alpha / total if total > 0 else 1.0}
    msg = f"COM n_alpha {exc.com_n_alpha:.4g} (total {total:.4g}) after {traj.times[-1] * 1e6:.2f} us"
    return Outcome([traj_table, exc_table], summary, msg,
                   [("trajectory", "time_s", list(cols)[1:], traj_table)])


def cmd_sweep(cfg, args):
    sched = _schedule(cfg)
    omegas = 2 * np.pi * np.asarray(cfg.sweep.freqs_hz)
    res = sweep_transport_time(cfg.chain_config(), sched, cfg.calibration_model(), omegas,
                               cfg.sweep.durations(), cfg.integrator.build(max_samples=2),
                               workers=args.threads, scale_dwell=cfg.sweep.scale_dwell)
    table = Table("sweep", {"total_time_s": res.total_time, "omega_rad_s": res.omega,
                            "com_n_alpha": res.com_n_alpha}, res.to_csv())
    per = {f"{w / (2 * np.pi):.0f}": [float(v.min()), float(v.max())]
           for w in omegas for v in [res.curve(w)[1]]}
    summary = {"points": len(res.total_time), "range_by_freq_hz": per}
    msg = f"{len(res.total_time)} points, COM n_alpha range {res.com_n_alpha.min():.3g}..{res.com_n_alpha.max():.3g}"
    return Outcome([table], summary, msg, [("sweep", None, None, res)])


def cmd_optimize(cfg, args):
    chain = _chain(cfg)
    op = cfg.optimize
    objective = timing_objective(cfg.chain_config(), chain_spacings(chain), cfg.calibration_model(),
                                 cfg.timing.build(), op.free, cfg.integrator.build(max_samples=2))
    res = optimize_ramp(objective, op.x0, op.bounds, budget=op.budget, seed=args.seed)
    xs = np.array([np.atleast_1d(x) for x, _ in res.history])
    cols = {"eval": np.arange(len(res.history))}
    for i, name in enumerate(op.free):
        cols[name] = xs[:, i]
    cols["value"] = np.array([v for _, v in res.history])
    table = Table("optimize", cols)
    summary = {"best": dict(zip(op.free, map(float, np.atleast_1d(res.x)))), "value": res.value,
               "initial_value": res.initial_value, "evaluations": res.n_evals}
    msg = f"COM n_alpha {res.initial_value:.4g} -> {res.value:.4g} in {res.n_evals} evaluations"
    return Outcome([table], summary, msg, [("optimize", "eval", ["value"], table)])


def _eta_com(cfg):
    sp = cfg.spectroscopy
    if sp.eta is not None:
        return sp.eta
    modes = normal_modes(_chain(cfg))
    return lamb_dicke_table(modes, sp.wavelength, sp.projection_cosine).com_effective


def cmd_rabi(cfg, args):
    sp = cfg.spectroscopy
    eta = _eta_com(cfg)
    times = np.linspace(0.0, sp.t_max, sp.n_times)
    state = MotionalState.single(sp.n_thermal, sp.n_alpha)
    curve = simulate_carrier_flop(state, eta, 2 * np.pi * sp.rabi_hz, times, cfg.chain.n_ions)
    table = Table("rabi", {"time_s": curve.times, "p_up": curve.excitation}, curve.to_csv())
    contrast = first_flop_contrast(curve)
    summary = {"eta": eta, "first_flop_contrast": contrast}
    msg = f"eta {eta:.4f}, first-flop contrast {contrast:.3f}"
    return Outcome([table], summary, msg, [("rabi", "time_s", ["p_up"], table)])


def cmd_spectrum(cfg, args):
    sp = cfg.spectroscopy
    modes = normal_modes(_chain(cfg))
    eta = lamb_dicke_table(modes, sp.wavelength, sp.projection_cosine)
    n = len(modes.frequencies)
    alpha = np.zeros(n, complex)
    alpha[0] = np.sqrt(sp.n_alpha)
    state = MotionalState(np.full(n, sp.n_thermal), alpha)
    spec = sideband_spectrum(modes, state, eta, exact=sp.exact_sidebands)
    cols = {"detuning_rad_s": [l.detuning for l in spec.lines], "order": [l.order for l in spec.lines],
            "strength": [l.strength for l in spec.lines]}
    table = Table("spectrum", cols, spec.to_csv())
    summary = {"lines": len(spec)}
    msg = f"{len(spec)} lines over {n} modes"
    return Outcome([table], summary, msg, [("spectrum", "detuning_rad_s", ["strength"], table)])


def cmd_profile(cfg, args):
    path = _require_tags(args)
    prof = bin_temporal_profile(path, _trial_schedule(cfg), cfg.analysis.bin_width)
    table = Table("profile", {"bin_start_s": prof.edges[:-1], "bin_end_s": prof.edges[1:],
                              "mode": prof.modes, "counts": prof.counts}, prof.to_csv())
    per_mode = prof.per_mode()
    summary = {"syncs": prof.n_syncs, "counts_per_mode": per_mode.tolist(),
               "unassigned": int(prof.counts[prof.modes < 0].sum())}
    msg = f"{prof.n_syncs} syncs, {int(prof.counts.sum())} detector tags, per mode {per_mode.tolist()}"
    return Outcome([table], summary, msg, [("profile", "bin_start_s", ["counts"], table)])


def cmd_g2(cfg, args):
    path = _require_tags(args)
    an = cfg.analysis
    hist = correlation_histogram(path, _trial_schedule(cfg), an.coincidence_window, an.max_delay)
    table = Table("g2", {"delay": hist.delays, "counts": hist.coincidences,
                         "normalized": hist.normalized, "error": hist.stat_error}, hist.to_csv())
    g0, e0 = hist.value(0), hist.error(0)
    summary = {"g2_0": g0, "g2_0_error": e0, "zero_delay_counts": int(hist.coincidences[hist.delays == 0][0])}
    msg = f"g2(0) = {g0:.4f} +/- {e0:.4f}"
    return Outcome([table], summary, msg, [("g2", "delay", ["normalized"], table)])


def cmd_predict_g2(cfg, args):
    ph = cfg.photonics
    rho0 = ph.emission_prob * ph.detection_efficiency
    r1 = ph.crosstalk[0] if ph.crosstalk else 0.0
    g_interior = predicted_g2(rho0, r1 * rho0, r1 * rho0, ph.g2_floor)
    ct = CrosstalkMatrix.from_neighbor_ratios(cfg.chain.n_ions, ph.crosstalk)
    g_chain = chain_predicted_g2(rho0, ct, ph.g2_floor)
    table = Table("predict_g2", {"crosstalk": [r1], "g2_floor": [ph.g2_floor],
                                 "g2_interior": [g_interior], "g2_chain_average": [g_chain]})
    summary = {"g2_interior": g_interior, "g2_chain_average": g_chain}
    msg = f"predicted g2(0) {g_interior:.4f} (interior ion), {g_chain:.4f} (chain average)"
    return Outcome([table], summary, msg)


def cmd_synth(cfg, args):
    model = _emission_model(cfg)
    sched = _trial_schedule(cfg)
    chunks = list(iter_synthetic_tags(model, sched, cfg.photonics.n_cycles, args.seed))
    text = write_time_tags(chunks)
    n = sum(len(c) for c in chunks)
    counts = [int(sum(c.count(ch) for c in chunks)) for ch in (0, 1, 2)]
    table = Table("tags", {}, text)
    summary = {"records": n, "syncs": counts[0], "det1": counts[1], "det2": counts[2],
               "dark_rate_hz": model.dark_rate, "seed": args.seed}
    msg = f"{n} tags ({counts[0]} syncs, {counts[1]}/{counts[2]} on detectors 1/2), seed {args.seed}"
    return Outcome([table], summary, msg)


def cmd_rate(cfg, args):
    ph = cfg.photonics
    budget = rate_budget(_schedule(cfg), ph.extraction, ph.collection,
                         include_collection=ph.include_collection)
    d = budget.as_dict()
    table = Table("rate", {k: [v] for k, v in d.items()})
    msg = (f"attempt rate {budget.attempt_rate / 1e3:.2f} kHz, "
           f"detected {budget.detected_rate:.1f} cps")
    return Outcome([table], d, msg)


COMMANDS = {
    "equilibrium": (cmd_equilibrium, "ion equilibrium positions"),
    "modes": (cmd_modes, "axial normal modes and Lamb-Dicke table"),
    "waveform": (cmd_waveform, "sampled endcap voltage waveform"),
    "transport": (cmd_transport, "simulate one transport schedule"),
    "sweep": (cmd_sweep, "COM excitation versus step time and trap frequency"),
    "optimize": (cmd_optimize, "derivative-free ramp timing optimisation"),
    "rabi": (cmd_rabi, "carrier Rabi flop after transport"),
    "spectrum": (cmd_spectrum, "carrier and first-sideband line table"),
    "profile": (cmd_profile, "temporal emission profile from time tags"),
    "g2": (cmd_g2, "mode-resolved photon correlation from time tags"),
    "predict-g2": (cmd_predict_g2, "g2(0) expected from crosstalk"),
    "synth": (cmd_synth, "synthetic time-tag stream"),
    "rate": (cmd_rate, "attempt and detected photon rates"),
}


# --- output ----------------------------------------------------------------


def _write_outputs(name, outcome, out_dir, fmt, digest, cfg):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for table in outcome.tables:
        if fmt == "json" and table.columns:
            path = out_dir / f"{table.name}.json"
            payload = {"config_digest": digest, "columns": table.records()}
            path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        else:
            path = out_dir / f"{table.name}.csv"
            with open(path, "w", newline="\n") as fh:
                fh.write(table.csv())
        written.append(path.name)
    summary = {"command": name, "config_digest": digest, "outputs": written,
               "result": _jsonable(outcome.summary), "config": cfg.model_dump(mode="json")}
    (out_dir / f"{name}.summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _plot(outcome, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for stem, xcol, ycols, src in outcome.plots:
        fig, ax = plt.subplots(figsize=(6, 4))
        if xcol is None:  # sweep result: one line per frequency
            for w in np.unique(src.omega):
                t, v = src.curve(w)
                ax.semilogy(t * 1e6, v, label=f"{w / (2 * np.pi) / 1e3:.0f} kHz")
            ax.set_xlabel("step time (us)")
            ax.set_ylabel("COM n_alpha")
            ax.legend()
        else:
            x = np.asarray(src.columns[xcol])
            for y in ycols:
                ax.plot(x, np.asarray(src.columns[y]), label=y)
            ax.set_xlabel(xcol)
            if len(ycols) > 1:
                ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out_dir / f"{stem}.png", dpi=120)
        plt.close(fig)


def build_parser():
    parser = argparse.ArgumentParser(prog="ionmux", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--plot", action="store_true", help="also write PNG figures")
        p.add_argument("--tags", type=Path, help="time-tag CSV input (profile, g2)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
        args.seed = cfg.seed
        digest = config_digest(cfg)
        func = COMMANDS[args.command][0]
        outcome = func(cfg, args)
        _write_outputs(args.command, outcome, args.out, args.format, digest, cfg)
        if args.plot and outcome.plots:
            _plot(outcome, args.out)
    except IonMuxError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except ValueError as exc:
        # domain-validation failures raised by the numerical layer
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_CODES["input"]
    print(f"{args.command}: {outcome.message} [config {digest[:12]}]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
