"""Configuration, scan drivers, CSV output and the ``bh-signal`` command line.

Every command reads a JSON configuration with the top-level sections
``mass``, ``scenario``, ``sender``, ``receiver``, ``solver`` and ``output``;
unknown keys are rejected.  Results are CSV files that start with
``#schema=bh-signal-v1`` and a hash of the effective configuration, followed by
a header row.  Complex values are written as ``re;im``.

Scans write finished rows to ``<out>.partial`` as they complete, so an
interrupted run resumes where it stopped; the final file is assembled in
scenario order and is byte-identical across runs.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import channel as ch
from .cid import SMOOTHINGS, ModeGridCache, ModeSumConfig, dp_tables, field_green
from .geometry import (BlackHole, GeometryError, connecting_ray, infall_worldline, lapse,
                       static_distance, tortoise)
from .hadamard import tail_coefficients
from .numkit import NumericalError
from .pvmodel import PvScenario, pv_terms, s2_from_geometry

SCHEMA = "bh-signal-v1"
log = logging.getLogger("bh-signal")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


# --------------------------------------------------------------------------- configuration

COMMAND_KINDS = {
    "green-dp": "green-probe",
    "green-ql": "green-probe",
    "signal-static": "static-pair",
    "scan-grid": "static-grid",
    "scan-switch": "switch-shift",
    "infall-scan": "infall-scan",
    "distances": "distances",
    "pv-model": "pv-model",
    "minkowski-ref": "minkowski-ref",
}

TOP_KEYS = {"mass", "scenario", "sender", "receiver", "solver", "output"}
DETECTOR_KEYS = {"r", "omega", "start", "stop"}
RECEIVER_KEYS = DETECTOR_KEYS | {"align"}
OUTPUT_KEYS = {"path", "cache"}
SOLVER_DEFAULTS = {
    "h": 0.01,
    "ell_max": 100,
    "ell_cut": None,
    "smoothing": "gaussian",
    "tail_order": 10,
    "ql_validity": 1e-3,
    "dp_margin": 3.5,
    "caustic_band": 0.02,
    "panel": 0.05,
    "green": "auto",
}
SCENARIO_KEYS = {
    "green-probe": {"kind", "provider", "r", "rp", "gamma", "dt"},
    "static-pair": {"kind", "gamma"},
    "static-grid": {"kind", "gamma", "r_B", "cap"},
    "switch-shift": {"kind", "gamma", "B1"},
    "infall-scan": {"kind", "r_A", "omega", "duration"},
    "distances": {"kind", "r_B"},
    "pv-model": {"kind", "mode", "s2", "L", "gamma", "ladder"},
    "minkowski-ref": {"kind", "L", "T", "omega"},
}
LADDER_KEYS = ("r_B", "r_A", "gamma", "B1", "dt", "ladder", "L")
PRESET_POINTS = {"desk": {"lattice": 8, "ladder": 30}, "paper": {"lattice": 60, "ladder": 400}}


@dataclass(frozen=True)
class RunConfig:
    command: str
    kind: str
    mass: float
    scenario: dict
    sender: dict
    receiver: dict
    solver: dict
    output: dict
    preset: str = "desk"

    @property
    def bh(self) -> BlackHole:
        return BlackHole(self.mass)

    def canonical(self) -> str:
        blob = {"command": self.command, "mass": self.mass, "scenario": self.scenario,
                "sender": self.sender, "receiver": self.receiver, "solver": self.solver,
                "preset": self.preset}
        return json.dumps(blob, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def mode_sum(self) -> ModeSumConfig:
        s = self.solver
        return ModeSumConfig(int(s["ell_max"]), s["ell_cut"], s["smoothing"])


def _reject_unknown(section: str, data: dict, allowed: set):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def ladder(spec, preset: str = "desk", kind: str = "ladder") -> np.ndarray:
    """A list of numbers or {start, stop[, num]}; num defaults to the preset size."""
    if isinstance(spec, (int, float)):
        values = np.array([float(spec)])
    elif isinstance(spec, list):
        values = np.array([float(v) for v in spec])
    elif isinstance(spec, dict):
        _reject_unknown("ladder", spec, {"start", "stop", "num"})
        if "start" not in spec or "stop" not in spec:
            raise ConfigError("ladder objects need 'start' and 'stop'")
        num = int(spec.get("num", PRESET_POINTS[preset][kind]))
        if num < 1:
            raise ConfigError("ladder 'num' must be positive")
        values = np.linspace(float(spec["start"]), float(spec["stop"]), num)
    else:
        raise ConfigError(f"cannot read ladder {spec!r}")
    if values.size == 0:
        raise ConfigError("ladders must be non-empty")
    if not np.all(np.isfinite(values)):
        raise ConfigError("ladder values must be finite")
    return values


def load_config(data: dict, command: str, preset: str = "desk", out: str | None = None,
                cache: str | None = None) -> RunConfig:
    """Validate a parsed JSON configuration for one command."""
    if command not in COMMAND_KINDS:
        raise ConfigError(f"unknown command {command}")
    if preset not in PRESET_POINTS:
        raise ConfigError(f"unknown preset {preset}")
    _reject_unknown("config", data, TOP_KEYS)
    mass = float(data.get("mass", 1.0))
    if not (math.isfinite(mass) and mass >= 0):
        raise ConfigError("mass must be finite and non-negative")
    kind = COMMAND_KINDS[command]
    scen = copy.deepcopy(data.get("scenario", {}))
    _reject_unknown("scenario", scen, SCENARIO_KEYS[kind])
    if scen.get("kind", kind) != kind:
        raise ConfigError(f"command {command} runs scenario kind '{kind}', "
                          f"config declares '{scen['kind']}'")
    scen["kind"] = kind
    if command in ("green-dp", "green-ql"):
        want = command.split("-")[1]
        if scen.setdefault("provider", want) != want:
            raise ConfigError(f"{command} requires provider '{want}'")
    sender = copy.deepcopy(data.get("sender", {}))
    receiver = copy.deepcopy(data.get("receiver", {}))
    _reject_unknown("sender", sender, DETECTOR_KEYS)
    _reject_unknown("receiver", receiver, RECEIVER_KEYS)
    solver = dict(SOLVER_DEFAULTS)
    given = data.get("solver", {})
    _reject_unknown("solver", given, set(SOLVER_DEFAULTS))
    solver.update(given)
    output = dict(data.get("output", {}))
    _reject_unknown("output", output, OUTPUT_KEYS)
    if out is not None:
        output["path"] = out
    if cache is not None:
        output["cache"] = cache
    cfg = RunConfig(command, kind, mass, scen, sender, receiver, solver, output, preset)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    s = cfg.solver
    for key in ("h", "ql_validity", "dp_margin", "panel"):
        if not (isinstance(s[key], (int, float)) and s[key] > 0):
            raise ConfigError(f"solver.{key} must be positive")
    if not (isinstance(s["ell_max"], int) and s["ell_max"] >= 1):
        raise ConfigError("solver.ell_max must be a positive integer")
    if s["ell_cut"] is not None and not s["ell_cut"] > 0:
        raise ConfigError("solver.ell_cut must be positive")
    if s["smoothing"] not in SMOOTHINGS:
        raise ConfigError(f"solver.smoothing must be one of {', '.join(SMOOTHINGS)}")
    if not (isinstance(s["tail_order"], int) and 0 <= s["tail_order"] <= 12):
        raise ConfigError("solver.tail_order must be an integer in [0, 12]")
    if not 0 <= s["caustic_band"] < 0.5:
        raise ConfigError("solver.caustic_band must lie in [0, 0.5)")
    if s["green"] not in ("auto", "ql", "dp", "none"):
        raise ConfigError("solver.green must be auto, ql, dp or none")
    horizon = 2 * cfg.mass
    radii = []
    for sec in (cfg.sender, cfg.receiver):
        if "r" in sec:
            radii.append(float(sec["r"]))
    sc = cfg.scenario
    for key in LADDER_KEYS:
        if key in sc:
            ladder(sc[key], cfg.preset)
    for key in ("r_B", "r_A"):
        if key in sc:
            radii.extend(ladder(sc[key], cfg.preset, "lattice"))
    for key in ("r", "rp"):
        if key in sc:
            radii.append(float(sc[key]))
    for r in radii:
        if not r > horizon:
            raise ConfigError(f"radius {r} is not outside the horizon r = {horizon}")
    for sec in (cfg.sender, cfg.receiver):
        if "omega" in sec and not float(sec["omega"]) >= 0:
            raise ConfigError("energy gaps must be non-negative")
        if "start" in sec and "stop" in sec and sec["start"] is not None \
                and sec["stop"] is not None and float(sec["stop"]) < float(sec["start"]):
            raise ConfigError("switch-off must not precede switch-on")


def _need(sec: dict, key: str, name: str):
    if key not in sec or sec[key] is None:
        raise ConfigError(f"missing {name}.{key}")
    return float(sec[key])


# --------------------------------------------------------------------------- CSV


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (complex, np.complexfloating)):
        return f"{v.real + 0.0:.17g};{v.imag + 0.0:.17g}"
    if isinstance(v, (float, np.floating)):
        return f"{float(v) + 0.0:.17g}"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v).replace(",", " ").replace("\n", " ")


def parse_complex(field: str) -> complex:
    re, im = field.split(";")
    return complex(float(re), float(im))


def header_lines(cfg: RunConfig, columns: list[str]) -> list[str]:
    return [f"#schema={SCHEMA}", f"#command={cfg.command} config={cfg.digest()}",
            ",".join(["index", *columns])]


class RowSink:
    """Collects rows, mirrors them to a partial file, and writes the final CSV in order."""

    def __init__(self, cfg: RunConfig, columns: list[str], path: Path | None):
        self.cfg, self.columns, self.path = cfg, columns, path
        self.rows: dict[int, str] = {}
        self.partial = None
        if path is not None:
            self.partial_path = path.with_name(path.name + ".partial")
            head = header_lines(cfg, columns)
            if self.partial_path.exists():
                lines = self.partial_path.read_text().splitlines()
                if lines[:3] == head:
                    for line in lines[3:]:
                        idx, _, _ = line.partition(",")
                        if idx.isdigit() and line.count(",") == len(columns):
                            self.rows[int(idx)] = line
                else:
                    log.warning("discarding partial results from a different configuration")
            if not self.partial_path.exists() or not self.rows:
                self.partial_path.write_text("\n".join(head) + "\n")
            else:
                # rewrite without a possibly truncated last line
                body = [self.rows[i] for i in sorted(self.rows)]
                self.partial_path.write_text("\n".join(head + body) + "\n")
            self.partial = self.partial_path.open("a")

    def done(self, idx: int) -> bool:
        return idx in self.rows

    def add(self, idx: int, row: dict):
        line = ",".join([str(idx)] + [fmt(row.get(c)) for c in self.columns])
        self.rows[idx] = line
        if self.partial is not None:
            self.partial.write(line + "\n")
            self.partial.flush()

    def text(self) -> str:
        head = header_lines(self.cfg, self.columns)
        return "\n".join(head + [self.rows[i] for i in sorted(self.rows)]) + "\n"

    def finish(self) -> str:
        text = self.text()
        if self.path is not None:
            self.partial.close()
            tmp = self.path.with_name(self.path.name + ".tmp")
            tmp.write_text(text)
            tmp.replace(self.path)
            self.partial_path.unlink()
        return text


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Parse a bh-signal CSV into (columns, rows of strings)."""
    return read_csv_text(Path(path).read_text())


def read_csv_text(text: str) -> tuple[list[str], list[dict]]:
    lines = text.splitlines()
    if not lines or lines[0] != f"#schema={SCHEMA}":
        raise ValueError("not a bh-signal-v1 file")
    body = [l for l in lines if not l.startswith("#")]
    cols = body[0].split(",")
    return cols, [dict(zip(cols, l.split(","))) for l in body[1:]]


# --------------------------------------------------------------------------- providers


class InfallGreen:
    """Non-direct Green function for a moving sender: QL tail where valid, else full-grid DP.

    DP values are trusted only ``margin`` past the radial light cone; points
    covered by neither raise a coverage error.
    """

    name = "ql+dp-field"
    cauchy = None

    def __init__(self, bh, r_base, tail, validity, field=None, margin=3.5):
        self.bh, self.r_base, self.tail = bh, r_base, tail
        self.validity, self.field, self.margin = validity, field, margin

    def coverage(self, r_field=None):
        return -math.inf, math.inf

    def breaks(self, r_field=None):
        return ()

    def knots(self, r_field=None):
        return None

    def __call__(self, dt, r):
        dt = np.asarray(dt, dtype=float)
        r = np.broadcast_to(np.asarray(r, dtype=float), dt.shape)
        out = np.full(dt.shape, np.nan)
        ok = np.zeros(dt.shape, dtype=bool)
        if self.tail is not None:
            ratio = self.tail.last_term_ratio(dt, 0.0, r)
            ql = ratio <= self.validity
            out[ql] = -self.tail.value(dt[ql], 0.0, r[ql])
            ok |= ql
        if self.field is not None:
            t_dir = np.abs(tortoise(self.bh, r) - tortoise(self.bh, self.r_base))
            dp = ~ok & (dt >= t_dir + self.margin) & self.field.inside(dt, r)
            if np.any(dp):
                out[dp] = self.field(dt[dp], r[dp])
            ok |= dp
        if not np.all(ok):
            bad = np.flatnonzero(~ok.ravel())
            d, rr = dt.ravel()[bad], r.ravel()[bad]
            raise ch.CoverageError(f"no provider covers dt in [{d.min():.6g}, {d.max():.6g}] at "
                                   f"sender radii [{rr.min():.6g}, {rr.max():.6g}]")
        return out


class Providers:
    """Builds and memoizes Green-function providers for static pairs."""

    def __init__(self, cfg: RunConfig, cache: ModeGridCache | None, threads: int | None):
        self.cfg, self.cache, self.threads = cfg, cache, threads
        self.bh = cfg.bh
        self._tails = {}
        self._tables = {}

    def tail(self, r):
        if r not in self._tails:
            self._tails[r] = tail_coefficients(self.bh, r, self.cfg.solver["tail_order"])
        return self._tails[r]

    def ql(self, r_A, r_B, gamma):
        return ch.QLTailGreen(self.tail(r_A), r_B, gamma, self.cfg.solver["ql_validity"])

    def prefetch_dp(self, r_A, r_B, gammas, dt_max):
        key = (r_A, r_B)
        have = self._tables.get(key)
        if have is not None and have[0] >= dt_max and all(g in have[1] for g in gammas):
            return
        s = self.cfg.solver
        tabs = dp_tables(self.bh, r_B, r_A, list(gammas), dt_max, self.cfg.mode_sum(), s["h"],
                         self.threads, self.cache)
        self._tables[key] = (dt_max, dict(zip(gammas, tabs)))

    def dp(self, r_A, r_B, gamma, dt_direct, dt_max):
        self.prefetch_dp(r_A, r_B, [gamma], dt_max)
        table = self._tables[(r_A, r_B)][1][gamma]
        crossings = []
        for cls in ("secondary", "tertiary"):
            try:
                crossings.append(connecting_ray(self.bh, r_A, r_B, gamma, cls,
                                                self.cfg.solver["caustic_band"]).dt)
            except (GeometryError, NumericalError):
                pass
        return ch.DPGreen(table, dt_direct, self.cfg.solver["dp_margin"], tuple(crossings))

    def for_pair(self, r_A, r_B, gamma, dt_direct, dt_need):
        """Provider for a static pair needing dt up to dt_need; None when nothing is requested."""
        if self.bh.M == 0:
            return ch.FlatGreen()
        mode = self.cfg.solver["green"]
        if mode == "none":
            return None
        if mode == "ql":
            return self.ql(r_A, r_B, gamma)
        if mode == "dp":
            return self.dp(r_A, r_B, gamma, dt_direct, dt_need + 1.0)
        ql = self.ql(r_A, r_B, gamma)
        lo, hi = ql.coverage()
        if dt_need <= hi:
            return ql
        dp = self.dp(r_A, r_B, gamma, dt_direct, dt_need + 1.0)
        dlo, dhi = dp.coverage()
        if dlo <= hi:
            return ch.PiecewiseGreen(((ql, lo, dlo), (dp, dlo, dhi)))
        return dp


def _dt_need(scn: ch.Scenario) -> float:
    p = scn.pair
    return (p.nu * scn.receiver.stop - scn.sender.start) / p.N_A + p.dt_direct


# --------------------------------------------------------------------------- evaluation helpers

TERM_COLUMNS = ["C2", "D2", "C2_d", "D2_d", "C2_nd", "D2_nd", "strength", "err_nd", "backend",
                "status"]


def _terms_row(terms: ch.SignalTerms | None, status: str) -> dict:
    if terms is None:
        return {"status": status}
    return {"C2": terms.C2, "D2": terms.D2, "C2_d": terms.direct[0], "D2_d": terms.direct[1],
            "C2_nd": terms.nondirect[0], "D2_nd": terms.nondirect[1],
            "strength": abs(terms.C2) + abs(terms.D2),
            "err_nd": max(terms.errors.values(), default=0.0),
            "backend": terms.backend.get("nondirect", ""), "status": status}


def evaluate_static(scn: ch.Scenario, panel: float) -> dict:
    """Direct part always; non-direct when a provider covers it, else flagged in status."""
    wA, wB = scn.sender.omega, scn.receiver.omega
    status = "ok"
    if scn.pair.ray is not None:
        cd = ch.c2_direct(scn, wA, wB)
        dd = -ch.c2_direct(scn, wA, -wB)
    else:
        # coincident positions: no direct ray exists, only the non-direct part is defined
        cd = dd = 0j
        status = "nondirect-only"
    if scn.green is None and scn.bh.M > 0:
        cn = dn = 0j
        errs = {}
        status = "direct-only"
    else:
        try:
            cn, e1 = ch.c2_nondirect(scn, wA, wB, panel, return_error=True)
            dn, e2 = ch.c2_nondirect(scn, wA, -wB, panel, return_error=True)
            dn = -dn
            errs = {"C2_nd": e1, "D2_nd": e2}
        except ch.CoverageError as exc:
            cn = dn = 0j
            errs = {}
            status = f"coverage-gap: {exc}"
    backend = {"direct": "closed-form", "nondirect": getattr(scn.provider, "name", "none")}
    terms = ch.SignalTerms.from_parts((cd, dd), (cn, dn), backend, errs)
    row = _terms_row(terms, status)
    if status.startswith("coverage-gap"):
        for k in ("C2", "D2", "C2_nd", "D2_nd", "strength"):
            row[k] = None
    return row


def _run_points(points: list, fn: Callable[[object], dict], sink: RowSink, threads: int | None):
    pending = [(i, p) for i, p in enumerate(points) if not sink.done(i)]

    def one(item):
        i, p = item
        try:
            row = fn(p)
        except (NumericalError, GeometryError, ValueError, NotImplementedError) as exc:
            row = dict(p.row() if hasattr(p, "row") else {})
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        return i, row

    workers = max(1, threads or 1)
    if workers == 1:
        for item in pending:
            i, row = one(item)
            sink.add(i, row)
    else:
        with ThreadPoolExecutor(workers) as pool:
            for i, row in pool.map(one, pending):
                sink.add(i, row)


# --------------------------------------------------------------------------- drivers


@dataclass(frozen=True)
class GridPoint:
    r_B: float
    gamma: float

    def row(self):
        return {"x_B": self.r_B * math.cos(self.gamma), "y_B": self.r_B * math.sin(self.gamma),
                "r_B": self.r_B, "gamma": self.gamma}


def run_static_grid(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Strength over an (r_B, gamma) lattice with the sender fixed."""
    bh, sc, s = cfg.bh, cfg.scenario, cfg.solver
    r_A = _need(cfg.sender, "r", "sender")
    A = (_need(cfg.sender, "start", "sender"), _need(cfg.sender, "stop", "sender"))
    B = (_need(cfg.receiver, "start", "receiver"), _need(cfg.receiver, "stop", "receiver"))
    wA, wB = _need(cfg.sender, "omega", "sender"), _need(cfg.receiver, "omega", "receiver")
    r_Bs = ladder(sc.get("r_B"), cfg.preset, "lattice") if "r_B" in sc else _missing("r_B")
    gammas = ladder(sc.get("gamma"), cfg.preset, "lattice") if "gamma" in sc else _missing("gamma")
    cap = float(sc.get("cap", 0.25))
    band = s["caustic_band"]
    points = [GridPoint(float(r), float(g)) for r in r_Bs for g in gammas]
    cols = ["x_B", "y_B", "r_B", "gamma", *TERM_COLUMNS]
    sink = RowSink(cfg, cols, sink_path)
    prov = Providers(cfg, cache, threads)
    if s["green"] in ("dp", "auto") and bh.M > 0:
        # one sweep over l per radius serves every angle
        for r in r_Bs:
            ok = [g for g in gammas if band <= g <= math.pi - band or g == 0.0]
            if ok and s["green"] == "dp":
                nu = lapse(bh, r_A) / lapse(bh, r)
                prov.prefetch_dp(r_A, float(r), [float(g) for g in ok],
                                 (nu * B[1] - A[0]) / lapse(bh, r_A) + _max_flight(bh, r_A, r) + 1)

    def fn(pt: GridPoint):
        row = pt.row()
        chord = math.sqrt(max(r_A**2 + pt.r_B**2 - 2 * r_A * pt.r_B * math.cos(pt.gamma), 0.0))
        if chord < cap:
            row["status"] = "capped"
            return row
        if pt.gamma > math.pi - band or 0.0 < pt.gamma < band:
            row["status"] = "skipped-caustic"
            return row
        base = ch.static_scenario(bh, r_A, pt.r_B, pt.gamma, wA, wB, A, B)
        try:
            p = base.pair
        except GeometryError as exc:
            row["status"] = f"skipped-caustic: {exc}"
            return row
        green = prov.for_pair(r_A, pt.r_B, pt.gamma, p.dt_direct, _dt_need(base))
        scn = ch.Scenario(bh, base.sender, base.receiver, pt.gamma, green, band)
        row.update(evaluate_static(scn, s["panel"]))
        return row

    _run_points(points, fn, sink, threads)
    return sink.finish()


def _max_flight(bh, r_A, r_B):
    return abs(tortoise(bh, r_A) - tortoise(bh, r_B)) + math.pi * max(r_A, r_B)


def _missing(key):
    raise ConfigError(f"missing scenario.{key}")


@dataclass(frozen=True)
class ShiftPoint:
    B1: float

    def row(self):
        return {"B1": self.B1}


def run_switch_shift(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Non-direct terms per receiver switch-on B1 with window length A2/nu."""
    bh, sc, s = cfg.bh, cfg.scenario, cfg.solver
    r_A, r_B = _need(cfg.sender, "r", "sender"), _need(cfg.receiver, "r", "receiver")
    A = (_need(cfg.sender, "start", "sender"), _need(cfg.sender, "stop", "sender"))
    wA, wB = _need(cfg.sender, "omega", "sender"), _need(cfg.receiver, "omega", "receiver")
    gamma = float(sc.get("gamma", 0.0))
    B1s = ladder(sc["B1"], cfg.preset) if "B1" in sc else _missing("B1")
    ref = ch.static_scenario(bh, r_A, r_B, gamma, wA, wB, A)
    p = ref.pair
    c_ref = ch.c2_direct(ref)
    d_ref = -ch.c2_direct(ref, wA, -wB)
    width = A[1] / p.nu
    cols = ["B1", "B2", "C2_nd", "D2_nd", "abs_C2_nd", "abs_D2_nd", "C2_d", "D2_d",
            "C2_d_B1_0", "D2_d_B1_0", "err_nd", "backend", "status"]
    sink = RowSink(cfg, cols, sink_path)
    prov = Providers(cfg, cache, threads)
    dt_top = (p.nu * (float(B1s.max()) + width) - A[0]) / p.N_A + p.dt_direct
    green = prov.for_pair(r_A, r_B, gamma, p.dt_direct, dt_top)

    def fn(pt: ShiftPoint):
        scn = ch.static_scenario(bh, r_A, r_B, gamma, wA, wB, A, (pt.B1, pt.B1 + width), green)
        row = evaluate_static(scn, s["panel"])
        out = {"B1": pt.B1, "B2": pt.B1 + width, "C2_nd": row.get("C2_nd"),
               "D2_nd": row.get("D2_nd"), "C2_d": row["C2_d"], "D2_d": row["D2_d"],
               "C2_d_B1_0": c_ref, "D2_d_B1_0": d_ref, "err_nd": row.get("err_nd"),
               "backend": row.get("backend"), "status": row["status"]}
        if row.get("C2_nd") is not None and row["status"] == "ok":
            out["abs_C2_nd"] = abs(row["C2_nd"])
            out["abs_D2_nd"] = abs(row["D2_nd"])
        return out

    _run_points([ShiftPoint(float(b)) for b in B1s], fn, sink, threads)
    return sink.finish()


@dataclass(frozen=True)
class InfallPoint:
    r_A: float
    omega: float

    def row(self):
        return {"r_A": self.r_A, "omega": self.omega}


def run_infall_scan(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Sender falling from rest at the receiver radius, fixed proper-time window."""
    bh, sc, s = cfg.bh, cfg.scenario, cfg.solver
    if bh.M == 0:
        raise ConfigError("the infall scenario needs a black hole (mass > 0)")
    r_B = _need(cfg.receiver, "r", "receiver")
    r_As = ladder(sc["r_A"], cfg.preset) if "r_A" in sc else _missing("r_A")
    omegas = ladder(sc.get("omega", [1.0]), cfg.preset)
    duration = float(sc.get("duration", 0.25))
    if duration <= 0:
        raise ConfigError("scenario.duration must be positive")
    wl = infall_worldline(bh, r_B, 0.0)
    green = None
    if s["green"] != "none":
        tail = tail_coefficients(bh, r_B, s["tail_order"]) if s["green"] in ("ql", "auto") else None
        field = None
        if s["green"] in ("dp", "auto"):
            spans = []
            for r in r_As:
                try:
                    scn = ch.infall_scenario(bh, float(r), duration, 1.0, r_B, worldline=wl)
                except GeometryError:
                    continue
                rb = scn.receiver.worldline
                spans.append(float(rb.t_of_tau(scn.receiver.stop)
                                   - wl.t_of_tau(scn.sender.start)))
            if spans:
                r_min = float(wl.r_of_tau(min(wl.tau_end, wl.tau_of_r(float(r_As.min()))
                                          + duration)))
                cache_obj = cache
                field = field_green(bh, r_B, r_min, max(spans) + 1.0, cfg.mode_sum(), s["h"],
                                    threads, cache_obj)
        green = InfallGreen(bh, r_B, tail, s["ql_validity"], field, s["dp_margin"])
    cols = ["r_A", "omega", "A1", "A2", "B1", "B2", *TERM_COLUMNS]
    sink = RowSink(cfg, cols, sink_path)

    def fn(pt: InfallPoint):
        row = pt.row()
        try:
            scn = ch.infall_scenario(bh, pt.r_A, duration, pt.omega, r_B, green, wl)
        except GeometryError as exc:
            row["status"] = f"skipped: {exc}"
            return row
        row.update({"A1": scn.sender.start, "A2": scn.sender.stop, "B1": scn.receiver.start,
                    "B2": scn.receiver.stop})
        cd, cn, (e1, e2), gap = _general_parts(scn, pt.omega, pt.omega, s["panel"], green)
        status = "ok"
        dd, dn, (e3, e4), gap2 = _general_parts(scn, pt.omega, -pt.omega, s["panel"], green)
        dd, dn = -dd, (-dn if dn is not None else None)
        if cn is None or dn is None:
            status = f"coverage-gap: {gap or gap2}" if green is not None else "direct-only"
        backend = {"direct": "quadrature", "nondirect": getattr(green, "name", "none")}
        terms = ch.SignalTerms.from_parts((cd, dd), (cn or 0j, dn or 0j), backend,
                                          {"C2_nd": e2, "D2_nd": e4})
        row.update(_terms_row(terms, status))
        if status != "ok":
            for k in ("C2", "D2", "C2_nd", "D2_nd", "strength"):
                if status != "direct-only" or k in ("C2_nd", "D2_nd"):
                    row[k] = None
            if status != "direct-only":
                row["err_nd"] = None
        return row

    points = [InfallPoint(float(r), float(w)) for r in r_As for w in omegas]
    _run_points(points, fn, sink, threads)
    return sink.finish()


def _general_parts(scn, wA, wB, panel, green):
    """(direct, non-direct or None, errors, gap message)."""
    d, d_err = ch.c2_direct_general(scn, wA, wB, panel)
    if green is None:
        return d, None, (d_err, 0.0), ""
    try:
        _, nd, (_, nd_err) = ch.c2_general(scn, wA, wB, panel, parts=True)
    except ch.CoverageError as exc:
        return d, None, (d_err, 0.0), str(exc)
    return d, nd, (d_err, nd_err), ""


@dataclass(frozen=True)
class RadiusPoint:
    r_B: float

    def row(self):
        return {"r_B": self.r_B}


def run_distances(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Distance notions and direct strengths for radial static pairs."""
    bh, sc = cfg.bh, cfg.scenario
    r_A = _need(cfg.sender, "r", "sender")
    A = (float(cfg.sender.get("start", 0.0)), float(cfg.sender.get("stop", 1.0)))
    T = A[1] - A[0]
    w = float(cfg.sender.get("omega", 1.0))
    r_Bs = ladder(sc["r_B"], cfg.preset) if "r_B" in sc else _missing("r_B")
    cols = ["r_B", "static_distance", "half_return_sender", "half_return_receiver",
            "mimicking_distance", "strength_identical", "strength_resonant", "minkowski_identical",
            "minkowski_resonant", "status"]
    sink = RowSink(cfg, cols, sink_path)

    def fn(pt: RadiusPoint):
        row = pt.row()
        if pt.r_B == r_A:
            row["status"] = "capped"
            return row
        L = static_distance(bh, r_A, pt.r_B)
        hs, hr = ch.half_return_times(bh, r_A, pt.r_B)
        row.update({"static_distance": L, "half_return_sender": hs, "half_return_receiver": hr,
                    "mimicking_distance": ch.mimicking_distance(bh, r_A, pt.r_B, T)})
        for label, wB in (("identical", w), ("resonant", None)):
            s0 = ch.static_scenario(bh, r_A, pt.r_B, 0.0, w, w, A)
            wB = s0.nu * w if wB is None else wB
            scn = ch.static_scenario(bh, r_A, pt.r_B, 0.0, w, wB, A)
            row[f"strength_{label}"] = abs(ch.c2_direct(scn)) + abs(ch.c2_direct(scn, w, -wB))
        row["minkowski_identical"] = ch.minkowski_strength(w, T, L)
        row["minkowski_resonant"] = ch.minkowski_strength(w, T, L)
        row["status"] = "ok"
        return row

    _run_points([RadiusPoint(float(r)) for r in r_Bs], fn, sink, threads)
    return sink.finish()


@dataclass(frozen=True)
class LadderPoint:
    x: float

    def row(self):
        return {"x": self.x}


def run_pv_model(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Principal-value model scans (synchronized shift or cumulative switch-off)."""
    bh, sc = cfg.bh, cfg.scenario
    mode = sc.get("mode", "shift")
    if mode not in ("shift", "cumulative"):
        raise ConfigError("scenario.mode must be shift or cumulative")
    r_A, r_B = _need(cfg.sender, "r", "sender"), _need(cfg.receiver, "r", "receiver")
    A = (_need(cfg.sender, "start", "sender"), _need(cfg.sender, "stop", "sender"))
    wA, wB = _need(cfg.sender, "omega", "sender"), _need(cfg.receiver, "omega", "receiver")
    nu = lapse(bh, r_A) / lapse(bh, r_B) if bh.M > 0 else 1.0
    if "s2" in sc:
        s2 = float(sc["s2"])
    else:
        gamma = float(sc.get("gamma", 0.0))
        d = connecting_ray(bh, r_A, r_B, gamma, "direct", cfg.solver["caustic_band"]).dt
        sec = connecting_ray(bh, r_A, r_B, gamma, "secondary", cfg.solver["caustic_band"]).dt
        s2 = s2_from_geometry(lapse(bh, r_A), sec, d)
    model = PvScenario(nu, A[0], A[1], s2, wA, wB, float(sc.get("L", 1.0)))
    xs = ladder(sc["ladder"], cfg.preset) if "ladder" in sc else _missing("ladder")
    cols = ["B1", "B2", "B1_shifted", "C2", "D2", "strength", "status"]
    sink = RowSink(cfg, cols, sink_path)

    def fn(pt: LadderPoint):
        if mode == "shift":
            B1, B2 = pt.x, pt.x + model.window
        else:
            B1, B2 = A[0] / nu, pt.x
            if B2 < A[1] / nu:
                return {"B1": B1, "B2": B2, "status": "skipped: B2 < A2/nu"}
        c, d = pv_terms(model, B1, B2)
        return {"B1": B1, "B2": B2, "B1_shifted": B1 - model.symmetry_shift, "C2": c, "D2": d,
                "strength": abs(c) + abs(d), "status": "ok"}

    _run_points([LadderPoint(float(x)) for x in xs], fn, sink, threads)
    return sink.finish()


def run_green_probe(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Tabulate the QL tail or the DP mode sum between two static radii."""
    bh, sc, s = cfg.bh, cfg.scenario, cfg.solver
    r = float(sc["r"]) if "r" in sc else _need(cfg.receiver, "r", "receiver")
    rp = float(sc["rp"]) if "rp" in sc else _need(cfg.sender, "r", "sender")
    gamma = float(sc.get("gamma", 0.0))
    dts = ladder(sc["dt"], cfg.preset) if "dt" in sc else _missing("dt")
    if sc["provider"] == "ql":
        tail = tail_coefficients(bh, rp, s["tail_order"])
        cols = ["dt", "G", "last_term_ratio", "in_window", "status"]
        sink = RowSink(cfg, cols, sink_path)
        for i, dt in enumerate(dts):
            if sink.done(i):
                continue
            ratio = float(tail.last_term_ratio(dt, gamma, r))
            sink.add(i, {"dt": float(dt), "G": -float(tail.value(dt, gamma, r)),
                         "last_term_ratio": ratio, "in_window": ratio <= s["ql_validity"],
                         "status": "ok"})
        return sink.finish()
    if float(dts.max()) <= abs(tortoise(bh, r) - tortoise(bh, rp)) and bh.M > 0:
        raise ConfigError("dt ladder must extend beyond the radial flight time")
    table = dp_tables(bh, r, rp, [gamma], float(dts.max()) + 0.1, cfg.mode_sum(), s["h"],
                      threads, cache)[0]
    cols = ["dt", "G", "in_window", "status"]
    sink = RowSink(cfg, cols, sink_path)
    start = table.t_direct + s["dp_margin"]
    for i, dt in enumerate(dts):
        if not sink.done(i):
            sink.add(i, {"dt": float(dt), "G": float(table(dt)), "in_window": dt >= start,
                         "status": "ok"})
    return sink.finish()


def run_static_pair(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    bh, s = cfg.bh, cfg.solver
    r_A, r_B = _need(cfg.sender, "r", "sender"), _need(cfg.receiver, "r", "receiver")
    A = (_need(cfg.sender, "start", "sender"), _need(cfg.sender, "stop", "sender"))
    wA, wB = _need(cfg.sender, "omega", "sender"), _need(cfg.receiver, "omega", "receiver")
    gamma = float(cfg.scenario.get("gamma", 0.0))
    align = cfg.receiver.get("align", "start" not in cfg.receiver)
    B = None if align else (_need(cfg.receiver, "start", "receiver"),
                            _need(cfg.receiver, "stop", "receiver"))
    base = ch.static_scenario(bh, r_A, r_B, gamma, wA, wB, A, B)
    p = base.pair
    prov = Providers(cfg, cache, threads)
    green = prov.for_pair(r_A, r_B, gamma, p.dt_direct, _dt_need(base))
    scn = ch.Scenario(bh, base.sender, base.receiver, gamma, green, s["caustic_band"])
    cols = ["r_A", "r_B", "gamma", "nu", "B1", "B2", *TERM_COLUMNS]
    sink = RowSink(cfg, cols, sink_path)
    row = evaluate_static(scn, s["panel"])
    row.update({"r_A": r_A, "r_B": r_B, "gamma": gamma, "nu": p.nu, "B1": scn.receiver.start,
                "B2": scn.receiver.stop})
    sink.add(0, row)
    return sink.finish()


def run_minkowski_ref(cfg: RunConfig, sink_path, threads=None, cache=None) -> str:
    """Flat-space identical detectors against the closed form and the linear bound."""
    sc = cfg.scenario
    Ls = ladder(sc["L"], cfg.preset) if "L" in sc else _missing("L")
    T = float(sc.get("T", 1.0))
    w = float(sc.get("omega", 1.0))
    if T <= 0 or w < 0:
        raise ConfigError("T must be positive and omega non-negative")
    flat = BlackHole(0.0)
    cols = ["L", "T", "omega", "C2", "D2", "strength", "closed_form", "bound", "status"]
    sink = RowSink(cfg, cols, sink_path)
    for i, L in enumerate(Ls):
        if sink.done(i):
            continue
        if L <= 0:
            sink.add(i, {"L": L, "status": "error: L must be positive"})
            continue
        scn = ch.static_scenario(flat, 10.0, 10.0 + float(L), 0.0, w, w, (0.0, T))
        t = ch.signal_terms(scn)
        sink.add(i, {"L": float(L), "T": T, "omega": w, "C2": t.C2, "D2": t.D2,
                     "strength": t.strength, "closed_form": ch.minkowski_strength(w, T, float(L)),
                     "bound": T / (2 * math.pi * float(L)), "status": "ok"})
    return sink.finish()


def cache_modegrids(cfg: RunConfig, threads: int | None = None) -> dict:
    """Build (or load) the mode data a configuration needs; returns the cache manifest."""
    if not cfg.output.get("cache"):
        raise ConfigError("cache_modegrids needs output.cache")
    if cfg.mass == 0:
        raise ConfigError("flat space needs no mode grids")
    cache = ModeGridCache(cfg.output["cache"])
    bh, sc = cfg.bh, cfg.scenario
    if cfg.kind == "green-probe":
        r = float(sc["r"]) if "r" in sc else _need(cfg.receiver, "r", "receiver")
        rp = float(sc["rp"]) if "rp" in sc else _need(cfg.sender, "r", "sender")
        dts = ladder(sc["dt"], cfg.preset) if "dt" in sc else _missing("dt")
        dp_tables(bh, r, rp, [float(sc.get("gamma", 0.0))], float(dts.max()) + 0.1,
                  cfg.mode_sum(), cfg.solver["h"], threads, cache)
    elif cfg.kind in ("static-pair", "switch-shift"):
        r_A, r_B = _need(cfg.sender, "r", "sender"), _need(cfg.receiver, "r", "receiver")
        A = (_need(cfg.sender, "start", "sender"), _need(cfg.sender, "stop", "sender"))
        gamma = float(sc.get("gamma", 0.0))
        ref = ch.static_scenario(bh, r_A, r_B, gamma, 1.0, 1.0, A)
        p = ref.pair
        if cfg.kind == "switch-shift":
            B1s = ladder(sc["B1"], cfg.preset) if "B1" in sc else _missing("B1")
            top = float(B1s.max()) + A[1] / p.nu
        else:
            top = float(cfg.receiver.get("stop", A[1] / p.nu))
        dt_need = (p.nu * top - A[0]) / p.N_A + p.dt_direct
        Providers(cfg, cache, threads).prefetch_dp(r_A, r_B, [gamma], dt_need + 1.0)
    else:
        raise ConfigError(f"no mode-grid prebuild defined for scenario kind {cfg.kind}")
    return dict(cache.manifest)


DRIVERS = {
    "green-probe": run_green_probe,
    "static-pair": run_static_pair,
    "static-grid": run_static_grid,
    "switch-shift": run_switch_shift,
    "infall-scan": run_infall_scan,
    "distances": run_distances,
    "pv-model": run_pv_model,
    "minkowski-ref": run_minkowski_ref,
}


def run(cfg: RunConfig, threads: int | None = None) -> str:
    """Execute a validated configuration; returns the CSV text (also written if a path is set)."""
    path = cfg.output.get("path")
    path = Path(path) if path else None
    cache = ModeGridCache(cfg.output["cache"]) if cfg.output.get("cache") else None
    t0 = time.perf_counter()
    text = DRIVERS[cfg.kind](cfg, path, threads, cache)
    log.info("%s finished in %.2f s", cfg.command, time.perf_counter() - t0)
    return text


# --------------------------------------------------------------------------- verify


def verify_checks() -> list[tuple[str, bool, str]]:
    """Fast invariant suite: returns (name, passed, detail)."""
    out = []
    bh = BlackHole(1.0)

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # report every failure mode as a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))

    def golden():
        scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 1.0, (0.0, 1.0))
        c, d = abs(ch.c2_direct(scn)), abs(ch.c2_direct(scn, 1.0, -1.0))
        ok = abs(c / 0.0121551 - 1) < 0.01 and abs(d / 0.0107647 - 1) < 0.01
        return ok, f"|C2d|={c:.7f} |D2d|={d:.7f}"

    def redshift():
        nu = lapse(bh, 6.0) / lapse(bh, 3.01)
        return abs(nu - 1.40954) < 1e-4 and abs(1 / nu - 0.71) < 1e-2, f"nu={nu:.6f}"

    def minkowski():
        worst = 0.0
        for w, T, L in ((1.3, 2.0, 1.0), (0.4, 1.0, 3.0), (2.0, 0.5, 0.7)):
            scn = ch.static_scenario(BlackHole(0.0), 5.0, 5.0 + L, 0.0, w, w, (0.0, T))
            t = ch.signal_terms(scn)
            worst = max(worst, abs(t.strength - ch.minkowski_strength(w, T, L)))
            if t.strength > T / (2 * math.pi * L):
                return False, "bound violated"
        return worst < 1e-6, f"max deviation {worst:.2e}"

    def mirror():
        scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 0.7, (0.0, 1.0), (0.1, 0.8))
        m = ch.time_mirror(scn)
        c, cm = ch.c2_direct(scn), ch.c2_direct(m)
        d, dm = -ch.c2_direct(scn, 1.0, -0.7), -ch.c2_direct(m, 0.7, -1.0)
        dev = max(abs(c - cm), abs(dm + np.conj(d)))
        return dev < 1e-8, f"deviation {dev:.2e}"

    def pv_symmetry():
        from .pvmodel import pv_shift_scan
        nu = lapse(bh, 6.0) / lapse(bh, 3.01)
        m = PvScenario(nu, 0.0, 1.0, 5.0, 1.0, 1.0)
        c = m.symmetry_shift + m.window
        x = np.linspace(0.0, 2.0, 9)
        dev = float(np.max(np.abs(pv_shift_scan(m, c - x) - pv_shift_scan(m, c + x))))
        return dev < 1e-9, f"asymmetry {dev:.2e}"

    check("direct golden values", golden)
    check("redshift constants", redshift)
    check("minkowski closed form and bound", minkowski)
    check("time-mirror symmetry", mirror)
    check("pv shift-scan symmetry", pv_symmetry)
    return out


# --------------------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bh-signal",
                                 description="Detector signalling on a Schwarzschild background")
    ap.add_argument("command", choices=[*COMMAND_KINDS, "verify"])
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--cache", help="mode-grid cache directory")
    ap.add_argument("--out", help="output CSV path (stdout when absent)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads")
    ap.add_argument("--preset", choices=sorted(PRESET_POINTS), default="desk")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "verify":
        results = verify_checks()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return 0 if all(ok for _, ok, _ in results) else 3
    try:
        if not args.config:
            raise ConfigError("--config is required")
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(data, args.command, args.preset, args.out, args.cache)
        text = run(cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, GeometryError, ValueError, NotImplementedError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if not cfg.output.get("path"):
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
