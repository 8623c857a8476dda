"""Scenario and design files.

A scenario is a JSON object::

    {
      "family": "sigmoid_emax",
      "design_space": [0, 8],
      "n": 150,
      "delta_over_sqrt_n": [0.1, 1],
      "nominal": {"sigma2": 4.5, "vartheta": [1.81, 0.79], "gamma0": [0, 1]},
      "candidates": [{"S": []}, {"S": [2]}, {"S": [1]}, {"S": [1, 2]}],
      "g_weights": [0.25, 0.25, 0.25, 0.25],
      "target": {"type": "ED", "alpha": 0.6},
      "prior": {"grids": {"vartheta2": [0.79, 1.79, 2.79], "gamma2": [1, 2, 3]}},
      "truths": [{"id": "t1", "sigma2": 4.5, "vartheta": [1.81, 0.79], "gamma": [0.1, 2]}]
    }

``prior`` may instead list atoms explicitly as
``{"atoms": [{"sigma2": .., "vartheta": [..], "gamma": [..], "weight": ..}]}``.
Grid priors put equal weight on every combination; parameters without a grid
keep their nominal value (``gamma0`` for the optional ones).  Combinations
are enumerated with the canonical parameter order, the last parameter
varying fastest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .criterion import CriterionProblem, PriorAtom, PriorSpec
from .errors import ValidationError
from .models import AveragingScheme, Design, DesignSpace, Misspecification, ModelFamily, ParamVector, get_family, normalize_design
from .simulation import TruthSpec
from .targets import AUC, ED, PointMean, validate_target

_TOP_KEYS = {"name", "family", "design_space", "n", "delta_over_sqrt_n", "nominal", "candidates", "g_weights", "target", "prior", "truths"}


@dataclass(frozen=True)
class Scenario:
    family: ModelFamily
    space: DesignSpace
    n: int
    delta_over_sqrt_n: tuple
    nominal: ParamVector
    scheme: AveragingScheme
    target: object
    prior: PriorSpec
    truths: tuple = ()
    prior_grids: Optional[tuple] = None  # ((name, values), ...) when built from grids
    name: str = ""

    @property
    def misspec(self) -> Misspecification:
        return self.prior.misspec

    def problem(self) -> CriterionProblem:
        return CriterionProblem(self.scheme, self.family, self.prior, self.target)

    def truth(self, truth_id: Optional[str] = None) -> TruthSpec:
        if not self.truths:
            raise ValidationError("scenario defines no truths")
        if truth_id is None:
            return self.truths[0]
        for t in self.truths:
            if t.truth_id == truth_id:
                return t
        raise ValidationError(f"unknown truth id {truth_id!r}")


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _need(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: expected an object")
    if key not in d:
        raise ValidationError(f"{path}.{key}: missing")
    return d[key]


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValidationError(f"{path}: must be finite")
    return v


def _nums(v, path: str, length: Optional[int] = None) -> tuple:
    if not isinstance(v, list):
        raise ValidationError(f"{path}: expected a list of numbers")
    out = tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))
    if length is not None and len(out) != length:
        raise ValidationError(f"{path}: expected {length} values, got {len(out)}")
    return out


def _wrap(path: str, fn, *args):
    try:
        return fn(*args)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _parse_target(t, space: DesignSpace, path: str):
    kind = _need(t, "type", path)
    if kind == "ED":
        target = _wrap(path, ED, _num(_need(t, "alpha", path), f"{path}.alpha"), space)
    elif kind == "AUC":
        target = _wrap(path, AUC, _nums(_need(t, "region", path), f"{path}.region", 2))
    elif kind == "POINT":
        target = PointMean(_num(_need(t, "x0", path), f"{path}.x0"))
    else:
        raise ValidationError(f"{path}.type: expected ED, AUC or POINT, got {kind!r}")
    _wrap(path, validate_target, target, space)
    return target


def _target_dict(target) -> dict:
    if isinstance(target, ED):
        return {"type": "ED", "alpha": target.alpha}
    if isinstance(target, AUC):
        return {"type": "AUC", "region": list(target.region)}
    return {"type": "POINT", "x0": target.x0}


def _parse_params(d, family: ModelFamily, path: str, gamma_key: str = "gamma") -> ParamVector:
    s2 = _num(_need(d, "sigma2", path), f"{path}.sigma2")
    vt = _nums(_need(d, "vartheta", path), f"{path}.vartheta", family.n_vartheta)
    g = _nums(_need(d, gamma_key, path), f"{path}.{gamma_key}", family.q)
    try:
        params = ParamVector(s2, vt, g)
        family.validate(params)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return params


def _expand_grids(grids: dict, family: ModelFamily, nominal: ParamVector, path: str):
    names = family.param_names or tuple(f"p{i}" for i in range(family.dim))
    unknown = set(grids) - set(names)
    if unknown:
        raise ValidationError(f"{path}: unknown parameter names {sorted(unknown)}; expected some of {list(names)}")
    if not grids:
        raise ValidationError(f"{path}: at least one grid is required")
    ordered = tuple((nm, _nums(grids[nm], f"{path}.{nm}")) for nm in names if nm in grids)
    for nm, vals in ordered:
        if not vals:
            raise ValidationError(f"{path}.{nm}: empty grid")
    base = nominal.full
    combos = list(itertools.product(*[vals for _, vals in ordered]))
    w = 1.0 / len(combos)
    atoms = []
    for combo in combos:
        full = base.copy()
        for (nm, _), v in zip(ordered, combo):
            full[names.index(nm)] = v
        params = ParamVector.from_full(full, family.n_vartheta)
        try:
            family.validate(params)
        except ValueError as exc:
            raise ValidationError(f"{path}: grid point {combo}: {exc}") from None
        atoms.append(PriorAtom(params, w))
    return tuple(atoms), ordered


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ValidationError("scenario: expected a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"scenario: unknown keys {sorted(unknown)}")
    fam_name = _need(d, "family", "scenario")
    base_family = get_family(fam_name)

    lo, hi = _nums(_need(d, "design_space", "scenario"), "scenario.design_space", 2)
    space = _wrap("scenario.design_space", DesignSpace, lo, hi)

    n = _need(d, "n", "scenario")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ValidationError(f"scenario.n: expected a positive integer, got {n!r}")

    nom = _need(d, "nominal", "scenario")
    gamma0 = _nums(_need(nom, "gamma0", "scenario.nominal"), "scenario.nominal.gamma0", base_family.q)
    family = base_family if gamma0 == base_family.gamma0 else dataclasses.replace(base_family, gamma0=gamma0)
    nominal = _parse_params(nom, family, "scenario.nominal", gamma_key="gamma0")

    dos = _nums(_need(d, "delta_over_sqrt_n", "scenario"), "scenario.delta_over_sqrt_n", family.q)

    cands = _need(d, "candidates", "scenario")
    if not isinstance(cands, list) or not cands:
        raise ValidationError("scenario.candidates: expected a nonempty list")
    subsets = []
    for i, c in enumerate(cands):
        S = _need(c, "S", f"scenario.candidates[{i}]")
        if not isinstance(S, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in S):
            raise ValidationError(f"scenario.candidates[{i}].S: expected a list of integers")
        subsets.append(tuple(S))
    g = _nums(_need(d, "g_weights", "scenario"), "scenario.g_weights")
    if len(g) != len(subsets):
        raise ValidationError(f"scenario.g_weights: {len(g)} weights for {len(subsets)} candidates")
    scheme = _wrap("scenario", AveragingScheme, tuple(subsets), g)
    _wrap("scenario.candidates", scheme.build, family)

    target = _parse_target(_need(d, "target", "scenario"), space, "scenario.target")

    prior_d = _need(d, "prior", "scenario")
    misspec = Misspecification.from_scaled(dos, n)
    grids_used = None
    if isinstance(prior_d, dict) and "grids" in prior_d:
        grids = prior_d["grids"]
        if not isinstance(grids, dict):
            raise ValidationError("scenario.prior.grids: expected an object")
        atoms, grids_used = _expand_grids(grids, family, nominal, "scenario.prior.grids")
    elif isinstance(prior_d, dict) and "atoms" in prior_d:
        raw = prior_d["atoms"]
        if not isinstance(raw, list) or not raw:
            raise ValidationError("scenario.prior.atoms: expected a nonempty list")
        atoms = tuple(
            PriorAtom(
                _parse_params(a, family, f"scenario.prior.atoms[{i}]"),
                _num(_need(a, "weight", f"scenario.prior.atoms[{i}]"), f"scenario.prior.atoms[{i}].weight"),
            )
            for i, a in enumerate(raw)
        )
    else:
        raise ValidationError("scenario.prior: expected {\"grids\": ...} or {\"atoms\": [...]}")
    prior = _wrap("scenario.prior", PriorSpec, atoms, misspec)

    truths = []
    for i, t in enumerate(d.get("truths", []) or []):
        path = f"scenario.truths[{i}]"
        tid = t.get("id", f"t{i + 1}") if isinstance(t, dict) else None
        if not isinstance(tid, str):
            raise ValidationError(f"{path}.id: expected a string")
        truths.append(TruthSpec(_parse_params(t, family, path), tid))
    ids = [t.truth_id for t in truths]
    if len(set(ids)) != len(ids):
        raise ValidationError("scenario.truths: duplicate ids")

    name = d.get("name", "")
    if not isinstance(name, str):
        raise ValidationError("scenario.name: expected a string")
    return Scenario(family, space, n, dos, nominal, scheme, target, prior, tuple(truths), grids_used, name)


def scenario_to_dict(sc: Scenario) -> dict:
    out = {}
    if sc.name:
        out["name"] = sc.name
    out.update(
        {
            "family": sc.family.name,
            "design_space": [sc.space.lower, sc.space.upper],
            "n": sc.n,
            "delta_over_sqrt_n": list(sc.delta_over_sqrt_n),
            "nominal": {"sigma2": sc.nominal.sigma2, "vartheta": list(sc.nominal.vartheta), "gamma0": list(sc.family.gamma0)},
            "candidates": [{"S": list(s.indices)} for s in sc.scheme.candidates],
            "g_weights": list(sc.scheme.g_weights),
            "target": _target_dict(sc.target),
        }
    )
    if sc.prior_grids is not None:
        out["prior"] = {"grids": {nm: list(vals) for nm, vals in sc.prior_grids}}
    else:
        out["prior"] = {
            "atoms": [
                {"sigma2": a.params.sigma2, "vartheta": list(a.params.vartheta), "gamma": list(a.params.gamma), "weight": a.weight}
                for a in sc.prior.atoms
            ]
        }
    if sc.truths:
        out["truths"] = [
            {"id": t.truth_id, "sigma2": t.params.sigma2, "vartheta": list(t.params.vartheta), "gamma": list(t.params.gamma)}
            for t in sc.truths
        ]
    return out


def dumps_json(obj) -> str:
    """Deterministic JSON text; floats use the shortest round-trip repr."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def scenario_hash(sc: Scenario) -> str:
    canon = json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; errors name the offending field."""
    return scenario_from_dict(_read_json(path))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_json(scenario_to_dict(sc)), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------


def design_from_dict(d, path: str = "design") -> Design:
    """Build a design from ``{"points": [...], "weights": [...]}``.

    Weights that do not sum exactly to 1 (as in designs transcribed to three
    decimals) are rescaled; no points are merged or dropped.
    """
    pts = _nums(_need(d, "points", path), f"{path}.points")
    wts = _nums(_need(d, "weights", path), f"{path}.weights", len(pts))
    if not pts:
        raise ValidationError(f"{path}: empty design")
    if any(w <= 0 for w in wts):
        raise ValidationError(f"{path}.weights: must be positive")
    if abs(math.fsum(wts) - 1.0) > 0.01:
        raise ValidationError(f"{path}.weights: sum {math.fsum(wts)!r} is not close to 1")
    if list(pts) != sorted(set(pts)):
        raise ValidationError(f"{path}.points: must be strictly increasing")
    return _wrap(path, normalize_design, pts, wts, None, 0.0, 0.0)


def design_to_dict(design: Design) -> dict:
    return {"points": list(design.points), "weights": list(design.weights)}


def load_design(path) -> Design:
    return design_from_dict(_read_json(path), str(path))


def save_design(design: Design, path) -> None:
    Path(path).write_text(dumps_json(design_to_dict(design)), encoding="utf-8", newline="\n")
