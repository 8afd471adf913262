"""Command line front end: ``srlab <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
Errors are reported on stderr as a single ``error:<category>:<message>`` line.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
import tempfile
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fixtures, __version__
from .branches import DEFAULT_HGRID, HAT_TOL, branch_fit, compare_fit, limit_density, nested_hats
from .brackets import RANK_TOL, enumerate_brackets, growth_at, hormander_scan
from .errors import SRError
from .gram import assemble, det_expansion
from .laplace import FIXED, RIEMANNIAN, SCHEMES, Grid, convergence_study
from .popp import compare_volumes, popp
from .symcalc.structure import parse_structure

SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- inputs

def _load(source: str):
    """Structure from a file path, or a built-in fixture name."""
    p = Path(source)
    if p.exists():
        text = p.read_text()
        return parse_structure(text, p.stem), text
    if source in fixtures.names():
        text = fixtures.text(source)
        return parse_structure(text, source), text
    raise SRError(f"no such file or built-in structure: {source}")


def _floats(text: str) -> list:
    try:
        return [float(eval_number(v)) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def eval_number(tok: str) -> float:
    tok = tok.strip()
    m = re.fullmatch(r"([-+]?\d+(?:\.\d*)?)\^([-+]?\d+)", tok)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    try:
        return float(tok)
    except ValueError:
        raise ValueError(f"not a number: {tok!r}") from None


def parse_hgrid(text: str) -> list:
    """``2^-3:2^-10`` (every integer power in between) or a comma list."""
    m = re.fullmatch(r"\s*([\d.]+)\^([-+]?\d+)\s*:\s*([\d.]+)\^([-+]?\d+)\s*", text)
    if m:
        base, e1, base2, e2 = float(m.group(1)), int(m.group(2)), float(m.group(3)), int(m.group(4))
        if base != base2:
            raise UsageError("both ends of an h range must use the same base")
        step = 1 if e2 >= e1 else -1
        return [base ** e for e in range(e1, e2 + step, step)]
    return _floats(text)


def _point(text, d):
    pt = _floats(text)
    if len(pt) != d:
        raise UsageError(f"--point needs {d} coordinates, got {len(pt)}")
    return pt


# ---------------------------------------------------------------- outputs

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _stamp():
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def render_json(payload: dict, meta: dict) -> str:
    doc = {"schema": SCHEMA, **meta, "generated_at": _stamp(), "result": payload}
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def render_csv(header: list, rows: list, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA}\n")
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(_clean(meta[key]), sort_keys=True)}\n")
    buf.write(f"# generated_at: {_stamp()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_atomic(path: str, text: str):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text: str):
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _meta(args, source_text):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    return {"config": cfg, "input_sha256": hashlib.sha256(source_text.encode()).hexdigest(),
            "version": __version__}


def _output(args, source_text, payload, header=None, rows=None):
    meta = _meta(args, source_text)
    if args.format == "csv" and header is not None:
        _emit(args, render_csv(header, rows, meta))
    else:
        _emit(args, render_json(payload, meta))


# ---------------------------------------------------------------- commands

def _table(args):
    s, text = _load(args.input)
    kw = {"seed": args.seed}
    if args.command == "brackets" and args.tol is not None:
        kw["tol"] = args.tol
    return s, text, enumerate_brackets(s, **kw)


def cmd_brackets(args):
    s, text, t = _table(args)
    rows = [(e.layer, e.position, e.label, " ".join(map(str, e.index)), ";".join(str(c) for c in e.field.components))
            for e in t.entries()]
    _output(args, text, t.to_dict(), ["layer", "position", "label", "index", "components"], rows)


def cmd_growth(args):
    s, text, t = _table(args)
    tol = args.tol if args.tol is not None else RANK_TOL
    rep = hormander_scan(t, s.domain.grid(args.grid), tol)
    width = max((len(g.n) for g in rep.rows), default=1)
    header = [f"x{i}" for i in range(s.d)] + [f"n_{i}" for i in range(width)] + ["step", "sigma", "Q", "singular"]
    rows = [list(g.point) + list(g.n) + [s.d] * (width - len(g.n)) + [g.step, g.sigma, g.Q, g.singular]
            for g in rep.rows]
    payload = {**rep.to_dict(), "rows": [g.to_row() for g in rep.rows]}
    _output(args, text, payload, header, rows)
    return 0


def cmd_gram(args):
    s, text, t = _table(args)
    m = _point(args.point, s.d)
    g = assemble(t, m, args.tol if args.tol is not None else RANK_TOL)
    payload = g.to_dict(args.h)
    payload["growth"] = growth_at(t, m).to_row()
    if args.det_grid:
        payload["det_expansion"] = det_expansion(g).to_dict()
    _output(args, text, payload)


def cmd_branches(args):
    s, text, t = _table(args)
    m = _point(args.point, s.d)
    tol = args.tol if args.tol is not None else HAT_TOL
    rep = limit_density(t, m, tol=tol)
    g = assemble(t, m)
    fit = branch_fit(g, parse_hgrid(args.hgrid) if args.hgrid else DEFAULT_HGRID)
    ok, gap = compare_fit(fit, nested_hats(g.A, tol))
    _output(args, text, {**rep.to_dict(), "fit": fit.to_dict(), "fit_agrees": ok, "fit_gap": gap})


def cmd_density(args):
    s, text, t = _table(args)
    tol = args.tol if args.tol is not None else HAT_TOL
    rows = []
    for p in s.domain.grid(args.grid):
        r = limit_density(t, p, tol=tol)
        rows.append(list(r.point) + [r.f, r.sigma, r.density_SR, r.singular])
    header = [f"x{i}" for i in range(s.d)] + ["f", "sigma", "density_SR", "singular"]
    payload = {"rows": [dict(zip(header, r)) for r in rows]}
    _output(args, text, payload, header, rows)


def cmd_popp(args):
    s, text, t = _table(args)
    m = _point(args.point, s.d)
    if args.compare:
        c = compare_volumes(t, m, args.tol if args.tol is not None else 1e-6, method=args.method)
        _output(args, text, c.to_dict())
        return 0 if c.ok else 1
    _output(args, text, popp(t, m, method=args.method).to_dict())


def cmd_spectrum(args):
    s, text, t = _table(args)
    grid = Grid.for_structure(s, args.grid)
    hs = parse_hgrid(args.hlist)
    mode = FIXED if args.mode == "fixed" else RIEMANNIAN
    st = convergence_study(s, t, grid, hs, args.k, mode, scheme=args.scheme, workers=args.workers,
                           atol=args.tol if args.tol is not None else 1e-9)
    rows = [(h, k, lam, md, grid.n) for h, k, lam, md in st.rows]
    _output(args, text, st.to_dict(), ["h", "k", "lambda", "mode", "grid_n"], rows)
    if args.diagnostics:
        write_atomic(args.diagnostics, render_json(st.diagnostics, _meta(args, text)))


# ---------------------------------------------------------------- reproduce

class _Checks:
    def __init__(self):
        self.items = []

    def close(self, name, got, want, rtol=0.0, atol=0.0):
        got_a, want_a = np.asarray(got, dtype=float), np.asarray(want, dtype=float)
        ok = bool(got_a.shape == want_a.shape and np.all(np.abs(got_a - want_a) <= atol + rtol * np.abs(want_a)))
        self.items.append({"check": name, "got": got, "expected": want, "ok": ok})

    def true(self, name, cond, detail=None):
        self.items.append({"check": name, "got": detail, "expected": True, "ok": bool(cond)})

    @property
    def ok(self):
        return all(c["ok"] for c in self.items)


def reproduce_heisenberg(seed=0):
    s = fixtures.load("heisenberg")
    t = enumerate_brackets(s, seed=seed)
    c = _Checks()
    c.true("growth (2,3) everywhere", hormander_scan(t, s.domain.grid(5)).growth_vectors == {(2, 3): 125})
    for p in s.domain.sample(8, seed):
        g = assemble(t, p)
        for h in (1.0, 0.5, 0.1, 0.01):
            c.close(f"det Ginv(h={h}) at {np.round(p, 4).tolist()}",
                    float(np.prod(np.linalg.svd(g.stacked(h), compute_uv=False) ** 2)), 2 * h * h, rtol=1e-12)
        br = limit_density(t, p)
        c.close(f"f at {np.round(p, 4).tolist()}", br.f, 2.0, rtol=1e-9)
        cv = compare_volumes(t, p)
        c.close(f"Popp density at {np.round(p, 4).tolist()}", cv.popp_density, 2 ** -0.5, rtol=1e-9)
        c.close(f"limit density at {np.round(p, 4).tolist()}", cv.limit_density, 2 ** -0.5, rtol=1e-9)
        c.close("B_1", cv.popp.B[1].tolist(), [[2.0]], atol=1e-12)
        fit = branch_fit(g)
        c.true(f"branch orders (0,0,2) at {np.round(p, 4).tolist()}", fit.orders == [0, 0, 2], fit.orders)
    return c


def reproduce_martinet(seed=0):
    s = fixtures.load("martinet")
    t = enumerate_brackets(s, seed=seed)
    c = _Checks()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scan = hormander_scan(t, s.domain.grid(5))
    c.true("two strata (2,3) and (2,2,3)", set(scan.growth_vectors) == {(2, 3), (2, 2, 3)},
           {",".join(map(str, k)): v for k, v in scan.growth_vectors.items()})
    c.true("singular line is x = 0", all(p[0] == 0.0 for p in scan.singular_points) and scan.singular_points,
           len(scan.singular_points))
    c.true("Q - sigma = 3 everywhere", all(g.Q - g.sigma == 3 for g in scan.rows))
    for x in (1.0, -1.0, 0.5, -0.5):
        p = [x, 0.3, -0.2]
        g = assemble(t, p)
        for h in (1.0, 0.5, 0.1):
            want = 2 * h * h * x * x + 2 * h ** 4
            c.close(f"det Ginv(h={h}) at x={x}", float(np.linalg.det(g.Ginv(h))), want, rtol=1e-10)
        gr = growth_at(t, p)
        c.true(f"growth (2,3), Q=4 at x={x}", gr.n == (2, 3) and gr.Q == 4, gr.to_row())
        br = limit_density(t, p)
        c.close(f"f at x={x}", br.f, 2 * x * x, rtol=1e-8)
        c.close(f"density at x={x}", br.density_SR, 1 / (math.sqrt(2) * abs(x)), rtol=1e-8)
        c.close(f"Popp density at x={x}", popp(t, p).popp_density, 1 / (math.sqrt(2) * abs(x)), rtol=1e-8)
    p0 = [0.0, 0.3, -0.2]
    gr = growth_at(t, p0)
    c.true("growth (2,2,3), Q=5 at x=0", gr.n == (2, 2, 3) and gr.Q == 5 and gr.singular, gr.to_row())
    de = det_expansion(assemble(t, p0))
    c.true("det vanishes to order h^4 at x=0", de.leading_order == 4, de.leading_order)
    c.close("leading det coefficient at x=0", de.leading_coefficient, 2.0, rtol=1e-6)
    return c


def reproduce_r4(seed=0):
    s = fixtures.load("r4")
    t = enumerate_brackets(s, seed=seed)
    c = _Checks()
    for x, y in ((1.0, 1.0), (2.0, 0.5)):
        p = [x, y, 0.1, -0.3]
        g = assemble(t, p)
        for h in (1.0, 0.5, 0.1):
            want = np.eye(4)
            want[2:, 2:] = [[x * x + 2 * h * h, x * y], [x * y, y * y + 2 * h * h]]
            c.close(f"Ginv(h={h}) at ({x},{y})", g.Ginv(h).tolist(), want.tolist(), atol=1e-14)
        fit = branch_fit(g)
        c.true(f"branch orders (0,0,0,2) at ({x},{y})", fit.orders == [0, 0, 0, 2], fit.orders)
        br = limit_density(t, p)
        de = det_expansion(g)
        c.close(f"f equals leading det coefficient at ({x},{y})", br.f, de.leading_coefficient, rtol=1e-8)
        c.close(f"f at ({x},{y})", br.f, 2 * (x * x + y * y), rtol=1e-9)
        cv = compare_volumes(t, p)
        want = 1 / math.sqrt(2 * (x * x + y * y))
        c.true(f"pipelines agree at ({x},{y})", cv.ok, cv.relative_gap)
        c.close(f"Popp density at ({x},{y})", cv.popp_density, want, rtol=1e-6)
    return c


REPRODUCE = {"heisenberg": reproduce_heisenberg, "martinet": reproduce_martinet, "r4": reproduce_r4}


def cmd_reproduce(args):
    checks = REPRODUCE[args.example](args.seed)
    text = fixtures.text(args.example)
    _output(args, text, {"example": args.example, "passed": checks.ok, "checks": checks.items},
            ["check", "got", "expected", "ok"],
            [(c["check"], json.dumps(_clean(c["got"])), json.dumps(_clean(c["expected"])), c["ok"])
             for c in checks.items])
    return 0 if checks.ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--tol", type=float, default=None, help="main tolerance of the subcommand")
    common.add_argument("--seed", type=int, default=0, help="seed for quasi-random sampling (default 0)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="json")

    p = _Parser(prog="srlab", description="Sub-Riemannian structures: brackets, limit volumes, spectra.")
    p.add_argument("--version", action="version", version=f"srlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, helptext, input_arg=True):
        sp_ = sub.add_parser(name, parents=[common], help=helptext, description=helptext)
        if input_arg:
            sp_.add_argument("input", help="structure file, or the name of a built-in structure")
        sp_.set_defaults(func=func)
        return sp_

    add("brackets", cmd_brackets, "list the bracket layers")
    q = add("growth", cmd_growth, "growth vectors over a tensor grid")
    q.add_argument("--grid", type=int, default=9, help="points per axis")
    q = add("gram", cmd_gram, "bracket matrices and Ginv(h) at a point")
    q.add_argument("--point", required=True)
    q.add_argument("--h", type=float, default=1.0)
    q.add_argument("--det-grid", action="store_true", help="also fit det Ginv(h) as a polynomial in h^2")
    q = add("branches", cmd_branches, "eigenvalue branches and limit density at a point")
    q.add_argument("--point", required=True)
    q.add_argument("--hgrid", default=None, help="e.g. 2^-3:2^-10 or 0.1,0.05,0.01,...")
    q = add("density", cmd_density, "limit density over a tensor grid")
    q.add_argument("--grid", type=int, default=9)
    q = add("popp", cmd_popp, "adapted frame, B_j and M_i matrices, Popp density at a point")
    q.add_argument("--point", required=True)
    q.add_argument("--compare", action="store_true", help="compare with the limit density")
    q.add_argument("--method", choices=("greedy", "spectral"), default="greedy")
    q = add("spectrum", cmd_spectrum, "lowest eigenvalues of the discretized operators across h")
    q.add_argument("--grid", type=int, default=24)
    q.add_argument("--hlist", default="1,0.5,0.25,0.1,0.05,0")
    q.add_argument("--k", type=int, default=8)
    q.add_argument("--mode", choices=("fixed", "riemannian"), default="fixed")
    q.add_argument("--scheme", choices=SCHEMES, default="compact")
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--diagnostics", default=None, help="write convergence diagnostics JSON here")
    q = add("reproduce", cmd_reproduce, "check the worked examples", input_arg=False)
    q.add_argument("example", choices=sorted(REPRODUCE))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            warnings.showwarning = _show_warning
            status = args.func(args)
        return int(status or 0)
    except UsageError as exc:
        print(f"error:usage:{exc}", file=sys.stderr)
        return 2
    except SRError as exc:
        print(f"error:{exc.category}:{_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io:{_one_line(exc)}", file=sys.stderr)
        return 1


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning:{category.__name__}:{message}", file=sys.stderr)


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
