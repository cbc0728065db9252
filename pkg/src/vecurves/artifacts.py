"""Human-readable serialization of fitted pipelines plus run manifests.

A fit artifact is a sectioned key-value text file: ``[section]`` headers
with ``key = tokens`` lines, floats written at full precision.  It stores
the risk-model estimate, both censored-normal nuisance fits, the sampling
weight tables (or a marker that user-supplied columns were used), the
covariate-mix models, the estimation options, and the digest of the
dataset it came from, which later commands verify before reusing it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .censnorm import CensoredNormalModel
from .curves import CategoryMix, _FixedMix
from .errors import SchemaError
from .likelihood import FitResult
from .model import RiskParams
from .multinomial import MultinomialModel
from .nuisance import NuisanceFit, SamplingWeights
from .pipeline import EstimationOptions, PipelineFit
from .quadrature import Quadrature

__all__ = ["write_fit", "read_fit", "FitArtifact", "file_sha256", "write_manifest"]

RISK_LABELS = ("intercept", "z", "s", "zs", "b", "zb")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _fmt_vec(arr):
    return " ".join(repr(float(v)) for v in np.asarray(arr, dtype=float).ravel())


class _Writer:
    def __init__(self):
        self.lines = ["# vecurves fit artifact v1"]

    def section(self, name):
        self.lines.append("")
        self.lines.append(f"[{name}]")

    def put(self, key, value):
        if isinstance(value, (np.ndarray, list, tuple)):
            value = _fmt_vec(value) if not all(isinstance(v, str) for v in value) \
                else " ".join(value)
        else:
            value = _fmt(value)
        self.lines.append(f"{key} = {value}")

    def text(self):
        return "\n".join(self.lines) + "\n"


def write_fit(path, pipefit, *, dataset_path=None, dataset_sha256=None, n_rows=None):
    """Serialize a PipelineFit to a sectioned text file."""
    w = _Writer()
    nu = pipefit.nuisance
    fr = pipefit.fit

    w.section("meta")
    w.put("version", __version__)
    if dataset_path is not None:
        w.put("dataset_path", dataset_path)
    if dataset_sha256 is not None:
        w.put("dataset_sha256", dataset_sha256)
    if n_rows is not None:
        w.put("n_rows", n_rows)
    w.put("limit", nu.limit)
    w.put("n_levels", nu.n_levels)

    w.section("options")
    for key, val in pipefit.options.to_dict().items():
        w.put(key, val)

    w.section("risk_model")
    labels = RISK_LABELS + tuple(f"x{j}" for j in range(2, nu.n_levels + 1))
    w.put("design", labels)
    w.put("coefficients", fr.params.as_array())
    w.put("loglik", fr.loglik)
    w.put("grad_norm", fr.grad_norm)
    w.put("iterations", fr.n_iter)
    w.put("clamped", fr.n_clamped)
    w.put("converged", fr.converged)

    for name, model in (("b_given_x", nu.b_given_x), ("s_given_b", nu.s_given_b)):
        w.section(name)
        w.put("design", model.design_labels)
        w.put("coefficients", model.coef)
        w.put("sigma", model.sigma)
        w.put("loglik", model.loglik)
        w.put("grad_norm", model.grad_norm)

    sw = nu.weights
    w.section("sampling_weights")
    w.put("stratified_by_delta_b", sw.stratified)
    w.put("from_user_columns", sw.from_user)
    for key, (strata, table) in sw.tables.items():
        w.section(f"table_{key}")
        w.put("strata", strata)
        w.put("shape", " ".join(str(d) for d in table.shape))
        w.put("values", table)

    for stratum, model in pipefit.mix.models.items():
        w.section(f"mix_{stratum}")
        if isinstance(model, _FixedMix):
            w.put("fixed_probs", model.probs)
        else:
            w.put("design", model.design_labels)
            w.put("n_levels", model.n_levels)
            for j, row in enumerate(model.gamma, start=2):
                w.put(f"gamma{j}", row)
            w.put("capped", model.capped)
    w.section("mix_meta")
    w.put("seroneg_linear", pipefit.mix.seroneg_linear)

    with open(path, "w") as fh:
        fh.write(w.text())


def _parse_sections(path):
    sections = {}
    current = None
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = {}
                continue
            if "=" not in line or current is None:
                raise SchemaError(f"{path}:{ln}: malformed artifact line {line!r}")
            key, _, value = line.partition("=")
            sections[current][key.strip()] = value.strip()
    return sections


def _get(sec, key, conv=str):
    if key not in sec:
        raise SchemaError(f"artifact is missing key {key!r}")
    return conv(sec[key])


def _vec(text):
    return np.array([float(t) for t in text.split()]) if text else np.array([])


def _bool(text):
    return text.lower() == "true"


@dataclass
class FitArtifact:
    """Parsed fit artifact; ``to_pipeline(data)`` rebinds it to a dataset."""

    meta: dict
    options: EstimationOptions
    fit: FitResult
    b_given_x: CensoredNormalModel
    s_given_b: CensoredNormalModel
    weight_tables: dict
    stratified: bool
    from_user: bool
    mix_models: dict
    seroneg_linear: bool
    limit: float
    n_levels: int

    def to_pipeline(self, data):
        """Reconstruct a PipelineFit against the (verified) dataset."""
        sw = _weights_from_tables(data, self.weight_tables, self.stratified)
        nuisance = NuisanceFit(
            b_given_x=self.b_given_x, s_given_b=self.s_given_b, weights=sw,
            limit=self.limit, n_levels=self.n_levels,
        )
        mix = CategoryMix(models=self.mix_models, seroneg_linear=self.seroneg_linear)
        return PipelineFit(
            nuisance=nuisance, mix=mix, fit=self.fit,
            quad=Quadrature(self.options.quad_nodes), options=self.options,
        )


def _weights_from_tables(data, tables, stratified):
    from .nuisance import estimate_sampling_weights, _cell_codes

    if not tables:
        # fit used user-supplied weight columns; they must still be present
        if data.weight_s is None and data.weight_b is None:
            raise SchemaError(
                "artifact carries no weight tables but dataset has no weight columns"
            )
        return estimate_sampling_weights(data, stratify_s_by_delta_b=stratified)
    D = data.n_levels
    x0 = data.x - 1
    if "pi_s" in tables:
        table = tables["pi_s"][1]
        code = _cell_codes((data.z, data.y, x0), (2, 2, D))
        pi_s_marginal = table.reshape(-1)[code]
    else:
        pi_s_marginal = np.asarray(data.weight_s, dtype=float)
    if "pi_s_by_delta_b" in tables:
        table = tables["pi_s_by_delta_b"][1]
        code = _cell_codes((data.z, data.y, x0, data.delta_b), (2, 2, D, 2))
        pi_s_fit = table.reshape(-1)[code]
    else:
        pi_s_fit = pi_s_marginal
    if "pi_b" in tables:
        table = tables["pi_b"][1]
        code = _cell_codes((data.z, x0), (2, D))
        pi_b = table.reshape(-1)[code]
    else:
        pi_b = np.asarray(data.weight_b, dtype=float)
    sw = SamplingWeights(
        pi_s_marginal=np.where(data.delta == 1, pi_s_marginal, np.nan),
        pi_s_fit=np.where(data.delta == 1, pi_s_fit, np.nan),
        pi_b=np.where(data.delta_b == 1, pi_b, np.nan),
        stratified=stratified,
        from_user=not tables,
        tables=tables,
    )
    sw.check_positive(data.delta == 1, data.delta_b == 1)
    return sw


def read_fit(path):
    sec = _parse_sections(path)
    for required in ("meta", "options", "risk_model", "b_given_x", "s_given_b"):
        if required not in sec:
            raise SchemaError(f"artifact is missing the [{required}] section")
    meta = dict(sec["meta"])
    limit = float(meta.get("limit", 1.0))
    n_levels = int(meta.get("n_levels", 4))

    opts = {}
    defaults = EstimationOptions()
    for key, val in sec["options"].items():
        cur = getattr(defaults, key, None)
        if isinstance(cur, bool):
            opts[key] = _bool(val)
        elif isinstance(cur, int):
            opts[key] = int(val)
        elif isinstance(cur, float):
            opts[key] = float(val)
        else:
            opts[key] = val
    options = EstimationOptions.from_dict(opts)

    rm = sec["risk_model"]
    fit = FitResult(
        params=RiskParams.from_array(_vec(_get(rm, "coefficients"))),
        loglik=_get(rm, "loglik", float),
        grad_norm=_get(rm, "grad_norm", float),
        n_iter=_get(rm, "iterations", int),
        n_clamped=_get(rm, "clamped", int),
        converged=_bool(_get(rm, "converged")),
    )

    def censored(name):
        s = sec[name]
        return CensoredNormalModel(
            coef=_vec(_get(s, "coefficients")),
            sigma=_get(s, "sigma", float),
            limit=limit,
            design_labels=tuple(_get(s, "design").split()),
            loglik=float(s.get("loglik", "nan")),
            grad_norm=float(s.get("grad_norm", "nan")),
        )

    tables = {}
    for name, body in sec.items():
        if not name.startswith("table_"):
            continue
        shape = tuple(int(t) for t in _get(body, "shape").split())
        tables[name[len("table_"):]] = (
            _get(body, "strata"), _vec(_get(body, "values")).reshape(shape),
        )

    mix_models = {}
    for name, body in sec.items():
        if not name.startswith("mix_") or name == "mix_meta":
            continue
        stratum = name[len("mix_"):]
        if "fixed_probs" in body:
            mix_models[stratum] = _FixedMix(_vec(body["fixed_probs"]))
            continue
        rows = []
        j = 2
        while f"gamma{j}" in body:
            rows.append(_vec(body[f"gamma{j}"]))
            j += 1
        mix_models[stratum] = MultinomialModel(
            gamma=np.vstack(rows),
            n_levels=int(body.get("n_levels", n_levels)),
            design_labels=tuple(_get(body, "design").split()),
            capped=_bool(body.get("capped", "false")),
        )
    seroneg_linear = _bool(sec.get("mix_meta", {}).get("seroneg_linear", "true"))

    sw_sec = sec.get("sampling_weights", {})
    return FitArtifact(
        meta=meta, options=options, fit=fit,
        b_given_x=censored("b_given_x"), s_given_b=censored("s_given_b"),
        weight_tables=tables,
        stratified=_bool(sw_sec.get("stratified_by_delta_b", "false")),
        from_user=_bool(sw_sec.get("from_user_columns", "false")),
        mix_models=mix_models, seroneg_linear=seroneg_linear,
        limit=limit, n_levels=n_levels,
    )


def write_manifest(path, *, command, config=None, inputs=None, seed=None, outputs=None):
    """Write the JSON run manifest every CLI command emits."""
    payload = {
        "command": list(command),
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": {p: file_sha256(p) for p in (inputs or [])},
        "outputs": list(outputs or []),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return payload
