"""Command-line interface: powerflow, certify, eigen, simulate, sweep.

Exit codes are uniform across subcommands: 0 success/stable, 1 unstable,
2 error (bad config, solver failure, capability violation), 3 marginal.
Outputs are deterministic for identical configs; the timestamp header/field
is suppressed with --no-timestamp. CSV files use 12 significant digits.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from .certificate import CertificateError, certify
from .config import ConfigError, apply_load_mode, load_config
from .devices import CapabilityError, DroopInverter, TwoAxisGenerator, VsgInverter
from .linearization import DegenerateEquilibriumError, eigenvalue_verdict
from .network import PowerFlowError, normalize_angle, solve_power_flow
from .simulation import perturbed_state, simulate
from .system import PowerSystem

__all__ = ["main"]

_VERDICT_EXIT = {"stable": 0, "unstable": 1, "marginal": 3}


def _fmt(x):
    return f"{x:.12g}"


def _timestamp_line():
    return f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}"


def _emit(text, out_path):
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)


def _solve(cfg):
    return solve_power_flow(cfg.system.net, cfg.bus_specs)


def cmd_powerflow(args):
    cfg = load_config(args.config)
    flow = _solve(cfg)
    buf = io.StringIO()
    if not args.no_timestamp:
        buf.write(_timestamp_line() + "\n")
    buf.write(f"{'bus':>4} {'theta[rad]':>12} {'V[pu]':>10} {'P[pu]':>10} {'Q[pu]':>10}\n")
    theta = normalize_angle(flow.theta)
    for i, bus_id in enumerate(cfg.bus_ids):
        buf.write(f"{bus_id:>4} {theta[i]:>12.4f} {flow.V[i]:>10.4f} "
                  f"{flow.P[i]:>10.4f} {flow.Q[i]:>10.4f}\n")
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_certify(args):
    cfg = apply_load_mode(load_config(args.config), args.load_mode)
    flow = _solve(cfg)
    report = certify(flow, cfg.system, bus_ids=cfg.bus_ids)
    doc = report.to_json_dict()
    if not args.no_timestamp:
        doc["generated"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    print(report.to_text(), file=sys.stderr)
    return _VERDICT_EXIT[report.verdict]


def cmd_eigen(args):
    cfg = apply_load_mode(load_config(args.config), args.load_mode)
    flow = _solve(cfg)
    eq = cfg.system.equilibrium(flow)
    report = eigenvalue_verdict(cfg.system, eq)
    buf = io.StringIO()
    if not args.no_timestamp:
        buf.write(_timestamp_line() + "\n")
    buf.write("re,im\n")
    for re, im in report.to_csv_rows():
        buf.write(f"{_fmt(re)},{_fmt(im)}\n")
    _emit(buf.getvalue(), args.out)
    print(f"verdict: {report.verdict}", file=sys.stderr)
    return _VERDICT_EXIT[report.verdict]


def _parse_perturbations(items, bus_ids):
    out = []
    index = {bus_id: i for i, bus_id in enumerate(bus_ids)}
    for item in items or []:
        try:
            bus_text, rad_text = item.split("=", 1)
            bus, rad = int(bus_text), float(rad_text)
        except ValueError as exc:
            raise ConfigError(f"--perturb expects BUS=RAD, got {item!r}") from exc
        if bus not in index:
            raise ConfigError(f"--perturb references unknown bus id {bus}")
        out.append((index[bus], rad))
    return out


def cmd_simulate(args):
    cfg = apply_load_mode(load_config(args.config), args.load_mode)
    flow = _solve(cfg)
    eq = cfg.system.equilibrium(flow)
    x0 = eq.x()
    for bus_index, rad in _parse_perturbations(args.perturb, cfg.bus_ids):
        x0 = x0.copy()
        sl = cfg.system.state_slices()[bus_index]
        if sl.stop == sl.start:
            raise ConfigError(f"bus id {cfg.bus_ids[bus_index]} hosts a load; nothing to perturb")
        x0[sl.start] += rad
    traj = simulate(cfg.system, eq, x0=x0, dt=args.dt, t_end=args.t_end)

    buf = io.StringIO()
    if not args.no_timestamp:
        buf.write(_timestamp_line() + "\n")
    buf.write("t,bus,theta,V,P,Q,delta,omega,E_q,E_d,W\n")
    slices = cfg.system.state_slices()
    for k in range(traj.t.size):
        v = traj.v[k]
        for i, dev in enumerate(cfg.system.devices):
            theta_i, V_i = v[2 * i], v[2 * i + 1]
            state = traj.x[k][slices[i]]
            P, Q = dev.output_power(state, theta_i, V_i, eq.setpoints[i])
            cells = {"delta": "", "omega": "", "E_q": "", "E_d": ""}
            for name, value in zip(dev.state_names, state):
                cells[name] = _fmt(value)
            buf.write(",".join([
                _fmt(traj.t[k]), str(cfg.bus_ids[i]), _fmt(theta_i), _fmt(V_i),
                _fmt(P), _fmt(Q), cells["delta"], cells["omega"],
                cells["E_q"], cells["E_d"], _fmt(traj.W[k]),
            ]) + "\n")
    _emit(buf.getvalue(), args.out)
    if traj.truncated:
        print(traj.diagnostic, file=sys.stderr)
        return 2
    return 0


def _parse_range(text):
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise ConfigError(f"range must be 'a:b:n', got {text!r}") from exc
    if a <= 0 or b <= 0 or n < 1:
        raise ConfigError(f"range endpoints must be positive and n >= 1, got {text!r}")
    return np.linspace(a, b, n)


def _with_reactances(system, bus_index, x_d, x_q):
    dev = system.devices[bus_index]
    if isinstance(dev, VsgInverter):
        new = VsgInverter(M=dev.M, D=dev.D, X_d=x_d, X_q=x_q)
    elif isinstance(dev, DroopInverter):
        new = DroopInverter(D=dev.D, X_d=x_d, X_q=x_q)
    elif isinstance(dev, TwoAxisGenerator):
        new = TwoAxisGenerator(M=dev.M, D=dev.D, tau_d=dev.tau_d, tau_q=dev.tau_q,
                               X_d=x_d, X_q=x_q,
                               X_d_prime=dev.X_d_prime, X_q_prime=dev.X_q_prime)
    else:
        raise ConfigError("sweep bus must host a generator or grid-forming inverter")
    devices = list(system.devices)
    devices[bus_index] = new
    return PowerSystem(system.net, devices, system.omega0)


def _sweep_point(cfg, flow, bus_index, x_d, x_q):
    try:
        system = _with_reactances(cfg.system, bus_index, x_d, x_q)
    except (ConfigError, ValueError):
        return "infeasible", "infeasible", ""
    try:
        report = certify(flow, system, bus_ids=cfg.bus_ids)
        v_cert = report.verdict
        min_eig = _fmt(report.min_eig) if report.min_eig is not None else ""
    except (CapabilityError, CertificateError):
        return "infeasible", "infeasible", ""
    try:
        eq = system.equilibrium(flow)
        v_eig = eigenvalue_verdict(system, eq).verdict
    except (CapabilityError, DegenerateEquilibriumError, ValueError, np.linalg.LinAlgError):
        v_eig = "infeasible"
    return v_cert, v_eig, min_eig


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.sweep_bus not in cfg.bus_ids:
        raise ConfigError(f"--sweep-bus references unknown bus id {args.sweep_bus}")
    bus_index = cfg.bus_ids.index(args.sweep_bus)
    xd_values = _parse_range(args.xd_range)
    xq_values = _parse_range(args.xq_range)
    modes = [args.load_mode] if args.load_mode else ["forming", "following"]

    threads = os.environ.get("GRIDCERT_THREADS")
    max_workers = max(1, int(threads)) if threads else min(32, os.cpu_count() or 1)

    buf = io.StringIO()
    if not args.no_timestamp:
        buf.write(_timestamp_line() + "\n")
    buf.write("X_d,X_q,load_mode,verdict_certificate,verdict_eigen,min_eig\n")
    for mode in modes:
        mode_cfg = apply_load_mode(cfg, mode)
        flow = _solve(mode_cfg)
        points = [(x_d, x_q) for x_d in xd_values for x_q in xq_values]
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(
                lambda p: _sweep_point(mode_cfg, flow, bus_index, p[0], p[1]), points))
        for (x_d, x_q), (v_cert, v_eig, min_eig) in zip(points, results):
            buf.write(f"{_fmt(x_d)},{_fmt(x_q)},{mode},{v_cert},{v_eig},{min_eig}\n")
    _emit(buf.getvalue(), args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridcert",
        description="Stationary power flow and small-signal stability certificates "
                    "for lossless inverter-integrated power systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, load_mode=True):
        p.add_argument("--config", required=True, help="path to a JSON system config")
        p.add_argument("--out", help="also write the output to this file")
        p.add_argument("--no-timestamp", action="store_true",
                       help="suppress the timestamp header/field")
        if load_mode:
            p.add_argument("--load-mode", choices=["forming", "following"],
                           help="device mode at the consumption bus")

    p = sub.add_parser("powerflow", help="solve the stationary power flow")
    common(p, load_mode=False)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("certify", help="closed-form stability certificate (JSON report)")
    common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("eigen", help="eigenvalue stability verdict (spectrum CSV)")
    common(p)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("simulate", help="nonlinear time-domain simulation (trajectory CSV)")
    common(p)
    p.add_argument("--dt", type=float, default=1e-3, help="integration step [s]")
    p.add_argument("--t-end", type=float, default=1.0, help="simulation horizon [s]")
    p.add_argument("--perturb", action="append", metavar="BUS=RAD",
                   help="shift a bus rotor angle by RAD radians (repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="stability verdicts over a reactance grid (CSV)")
    common(p)
    p.add_argument("--sweep-bus", type=int, required=True,
                   help="bus id whose (X_d, X_q) is swept")
    p.add_argument("--xd-range", required=True, metavar="a:b:n")
    p.add_argument("--xq-range", required=True, metavar="a:b:n")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PowerFlowError as exc:
        print(f"error: power flow failed: {exc}", file=sys.stderr)
        return 2
    except (CertificateError, DegenerateEquilibriumError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
