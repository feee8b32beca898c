"""Command-line interface: ``chronomech <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .dynamics import MechSystem, State, hertz_reduce, integrate, newton_field
from .expr import ExpressionSyntaxError, UnknownSymbolError, parse
from .geometry import MetricError, MetricField
from .hamjac import InitialManifold, propagate, seed_conormal, wavefront
from .operators import DiffOperator, PhaseFunction, SymTensorField, indices_from_counts
from .quantize import dequantize, quantize, schrodinger_operator
from .schrodgrid import phase_report

SCHEMA = {
    "type": "object",
    "required": ["coordinates", "metric"],
    "additionalProperties": False,
    "properties": {
        "coordinates": {
            "type": "array",
            "items": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z_0-9]*$"},
            "minItems": 1,
            "maxItems": 4,
            "uniqueItems": True,
        },
        "metric": {"type": "array", "items": {"type": "array", "items": {"type": ["string", "number"]}}},
        "potential": {"type": ["string", "number"]},
        "force_form": {"type": "array", "items": {"type": ["string", "number"]}},
        "time_coordinate": {"type": "string"},
        "hbar": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "P0": {"type": "number"},
        "E": {"type": "number"},
        "sample_points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "initial_state": {
            "type": "object",
            "required": ["x"],
            "additionalProperties": False,
            "properties": {
                "x": {"type": "array", "items": {"type": "number"}},
                "v": {"type": "array", "items": {"type": "number"}},
                "direction": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
    "oneOf": [{"required": ["potential"]}, {"required": ["force_form"]}],
}


class LoadError(ValueError):
    pass


@dataclass
class SystemDescription:
    path: str
    coordinates: tuple[str, ...]
    metric: MetricField
    system: MechSystem
    time_coordinate: str | None = None
    hbar: float = 1.0
    c: float = 1.0
    P0: float | None = None
    E: float | None = None
    sample_points: list = field(default_factory=list)
    initial_state: dict | None = None
    raw: dict = field(default_factory=dict)

    def initial(self, E: float | None = None) -> State:
        """Initial state; with a direction the speed is fixed by the energy."""
        init = self.initial_state
        if init is None:
            raise LoadError(f"{self.path}: no initial_state")
        E = self.E if E is None else E
        if "direction" in init:
            if E is None:
                raise LoadError("an energy is needed to turn the direction into a velocity")
            return self.system.state_at_energy(init["x"], init["direction"], E)
        if "v" not in init:
            raise LoadError(f"{self.path}: initial_state needs 'v' or 'direction'")
        return State(init["x"], init["v"])


def _resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    shipped = resources.files("chronomech") / "data" / "systems" / p.name
    if shipped.is_file():
        return Path(str(shipped))
    raise LoadError(f"no such file: {path}")


def _expr_error(where: str, text, exc) -> LoadError:
    if isinstance(exc, ExpressionSyntaxError):
        return LoadError(f"{where}: syntax error at offset {exc.offset} in {text!r}")
    return LoadError(f"{where}: {exc}")


def load(path) -> SystemDescription:
    """Read, validate and build a system description."""
    p = _resolve(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{p}: invalid JSON: {exc}") from exc
    if isinstance(raw, dict) and ("potential" in raw) == ("force_form" in raw):
        raise LoadError(f"{p}: schema error at <root>: exactly one of potential/force_form is required")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(a) for a in exc.absolute_path) or "<root>"
        raise LoadError(f"{p}: schema error at {loc}: {exc.message}") from exc
    coords = tuple(raw["coordinates"])
    n = len(coords)
    m = raw["metric"]
    if len(m) != n or any(len(row) != n for row in m):
        raise LoadError(f"{p}: schema error at metric: must be {n}x{n}")
    for i in range(n):
        for j in range(n):
            try:
                parse(str(m[i][j]), coords)
            except (ExpressionSyntaxError, UnknownSymbolError) as exc:
                raise _expr_error(f"{p}: metric/{i}/{j}", m[i][j], exc) from exc
    for key in ("sample_points",):
        for k, pt in enumerate(raw.get(key, [])):
            if len(pt) != n:
                raise LoadError(f"{p}: schema error at {key}/{k}: expected {n} numbers")
    init = raw.get("initial_state")
    if init is not None:
        for key in ("x", "v", "direction"):
            if key in init and len(init[key]) != n:
                raise LoadError(f"{p}: schema error at initial_state/{key}: expected {n} numbers")
    t = raw.get("time_coordinate")
    if t is not None and t not in coords:
        raise LoadError(f"{p}: schema error at time_coordinate: {t!r} is not a coordinate")
    try:
        metric = MetricField(coords, [[str(a) for a in row] for row in m], raw.get("sample_points"))
    except MetricError as exc:
        raise LoadError(f"{p}: metric: {exc}") from exc
    if "potential" in raw:
        try:
            U = parse(str(raw["potential"]), coords)
        except (ExpressionSyntaxError, UnknownSymbolError) as exc:
            raise _expr_error(f"{p}: potential", raw["potential"], exc) from exc
        system = MechSystem(metric, potential=U)
    else:
        ff = raw["force_form"]
        if len(ff) != n:
            raise LoadError(f"{p}: schema error at force_form: expected {n} entries")
        names = coords + tuple(f"{c}_dot" for c in coords)
        alpha = []
        for i, a in enumerate(ff):
            try:
                alpha.append(parse(str(a), names))
            except (ExpressionSyntaxError, UnknownSymbolError) as exc:
                raise _expr_error(f"{p}: force_form/{i}", a, exc) from exc
        system = MechSystem(metric, force_form=alpha)
    return SystemDescription(
        path=str(p),
        coordinates=coords,
        metric=metric,
        system=system,
        time_coordinate=t,
        hbar=float(raw.get("hbar", 1.0)),
        c=float(raw.get("c", 1.0)),
        P0=raw.get("P0"),
        E=raw.get("E"),
        sample_points=raw.get("sample_points", []),
        initial_state=init,
        raw=raw,
    )


# commands ----------------------------------------------------------------------------


def _out_text(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    desc = load(args.system)
    s0 = desc.initial(args.E)
    fld = newton_field(desc.system)
    if args.step is not None and args.tol is None:
        traj = integrate(fld, s0, args.span, step=args.step, adaptive=False)
    else:
        traj = integrate(fld, s0, args.span, step=args.step, tol=args.tol or 1e-10)
    traj.to_csv(args.out or sys.stdout)
    return 0


def cmd_hj(args) -> int:
    desc = load(args.system)
    E = args.E if args.E is not None else desc.E
    if E is None:
        raise LoadError("hj needs an energy (--E or 'E' in the system file)")
    if desc.initial_state is None:
        raise LoadError("hj needs initial_state.x as the source point")
    X = InitialManifold.from_point(desc.initial_state["x"])
    seeds = seed_conormal(X, desc.system, E, args.seeds)
    bundle = propagate(seeds, desc.system, args.span, tol=args.tol or 1e-10, energy=E)
    out = args.out or "hj_out"
    written = bundle.export(out)
    s = args.action
    if s is None:
        ok = bundle.ok
        s = 0.5 * min(float(c.trajectory.S[-1]) for c in ok) if ok else 0.0
    front = wavefront(bundle, s)
    front.to_json(os.path.join(out, "wavefront.json"))
    print(f"{len(bundle.ok)} characteristics ok, {len(bundle.failures)} failed; {len(written)} files in {out}")
    return 0 if bundle.ok else 1


def _tensor_for(desc: SystemDescription, which: str) -> SymTensorField:
    g = desc.metric
    if which == "metric":
        return SymTensorField.metric(g)
    if which == "hamiltonian":
        phi = SymTensorField.metric(g).scaled(0.5)
        if desc.system.potential is not None:
            phi = phi + SymTensorField(g.coords, {(0, ()): desc.system.potential})
        return phi
    raise LoadError(f"unknown tensor {which!r} (use metric or hamiltonian)")


def cmd_quantize(args) -> int:
    desc = load(args.system)
    hbar = args.hbar if args.hbar is not None else desc.hbar
    op = quantize(_tensor_for(desc, args.tensor), desc.metric, hbar)
    _out_text(op.format(), args.out)
    return 0


def cmd_dequantize(args) -> int:
    desc = load(args.system)
    hbar = args.hbar if args.hbar is not None else desc.hbar
    if args.operator:
        op = DiffOperator.parse_text(Path(args.operator).read_text(), desc.coordinates, hbar)
    else:
        op = schrodinger_operator(desc.system, hbar)
    phi = dequantize(op, desc.metric, hbar)
    text = phi.format()
    H = PhaseFunction.from_tensor(phi)
    text += "# hamiltonian: " + " + ".join(
        f"(-i*hbar)^{k} * ({c}) * " + ("*".join(f"p_{desc.coordinates[i]}^{a}" for i, a in enumerate(alpha) if a) or "1")
        for (k, alpha), c in sorted(H.terms.items(), key=lambda kv: (sum(kv[0][1]), indices_from_counts(kv[0][1]), kv[0][0]))
    ) + "\n"
    _out_text(text, args.out)
    return 0


def cmd_reduce(args) -> int:
    desc = load(args.system)
    P0 = args.P0 if args.P0 is not None else desc.P0
    if P0 is None:
        raise LoadError("reduce needs P0 (--P0 or 'P0' in the system file)")
    red = hertz_reduce(desc.system, P0, desc.time_coordinate)
    keep = [i for i, c in enumerate(desc.coordinates) if c in red.coords]
    doc = {
        "coordinates": list(red.coords),
        "metric": [[str(e) for e in row] for row in red.metric.g],
        "potential": str(red.potential),
        "hbar": desc.hbar,
        "sample_points": [[float(p[i]) for i in keep] for p in desc.sample_points],
    }
    _out_text(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def cmd_verify(args) -> int:
    from . import acceptance

    names = None if args.all or not args.checks else args.checks
    results = acceptance.run_all(names, stream=sys.stdout)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"FAILED: {failed[0].name}", file=sys.stderr)
        return 1
    return 0


def cmd_phase_report(args) -> int:
    desc = load(args.system)
    E = args.E if args.E is not None else desc.E
    if E is None:
        raise LoadError("phase-report needs an energy")
    hbar = args.hbar if args.hbar is not None else desc.hbar
    init = desc.initial_state or {}
    direction = init.get("direction", init.get("v"))
    rep = phase_report(desc.system, hbar, E, x0=init.get("x"), direction=direction)
    _out_text(json.dumps(rep.to_dict(), indent=1) + "\n", args.out)
    return 0 if rep.bound else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chronomech", description="geometric mechanics and quantization toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, energy=True):
        p.add_argument("system", help="system description (JSON); shipped names also work")
        if energy:
            p.add_argument("--E", type=float, default=None, help="energy level")
        p.add_argument("--out", default=None, help="output file or directory")
        return p

    p = common(sub.add_parser("simulate", help="integrate the Newton field"))
    p.add_argument("--span", type=float, default=10.0)
    p.add_argument("--step", type=float, default=None, help="RK4 step (adaptive when --tol is also given)")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("hj", help="point-source characteristics and a wavefront"))
    p.add_argument("--span", type=float, default=5.0)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--seeds", type=int, default=16)
    p.add_argument("--action", type=float, default=None, help="action value of the exported wavefront")
    p.set_defaults(func=cmd_hj)

    p = common(sub.add_parser("quantize", help="quantize a tensor of the system"), energy=False)
    p.add_argument("--tensor", default="metric", help="metric or hamiltonian")
    p.add_argument("--hbar", type=float, default=None)
    p.set_defaults(func=cmd_quantize)

    p = common(sub.add_parser("dequantize", help="tensor (and Hamiltonian) of an operator"), energy=False)
    p.add_argument("--operator", default=None, help="operator text file (default: Schrödinger operator)")
    p.add_argument("--hbar", type=float, default=None)
    p.set_defaults(func=cmd_dequantize)

    p = common(sub.add_parser("reduce", help="Hertz reduction at p0 = P0"), energy=False)
    p.add_argument("--P0", type=float, default=None)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("checks", nargs="*", help="check names (default: all)")
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("phase-report", help="cycle times and quantum phase advance"))
    p.add_argument("--hbar", type=float, default=None)
    p.set_defaults(func=cmd_phase_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LoadError, MetricError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
