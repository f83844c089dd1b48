"""Benchmark ingestion, model/pool persistence and experiment configuration.

Container format (models and pools)::

    8 bytes   magic  b"CMOSAIC\\0"
    4 bytes   format version, little-endian uint32
    8 bytes   header length H, little-endian uint64
    H bytes   UTF-8 JSON header: metadata + list of arrays (name, shape)
    ...       arrays, row-major little-endian float64, in header order
    32 bytes  SHA-256 of everything above
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .nn import MlpConfig, MlpModel, TclModel, TrainConfig
from .lica import LinearUnmixing

logger = logging.getLogger(__name__)

MAGIC = b"CMOSAIC\0"
FORMAT_VERSION = 1
_PAIR_FILE = re.compile(r"^pair(\d{4})\.txt$")
META_FILE = "pairmeta.txt"
POOL_TABLES = ("taccs", "vaccs", "cacc", "w_models", "vacc_all", "w_trials", "votes")


class IntegrityError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class CausalPair:
    pair_id: int
    data: np.ndarray
    cause: Optional[int] = None
    weight: float = 1.0


@dataclass
class TcepRecord(CausalPair):
    multivariate: bool = False
    dropped_rows: int = 0


# ---------------------------------------------------------------- benchmark

def _parse_numeric_file(path: Path) -> tuple[np.ndarray, int]:
    rows = []
    dropped = 0
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            values = []
            for tok in tokens:
                try:
                    values.append(float(tok))
                except ValueError:
                    raise FormatError(f"{path.name}:{lineno}: non-numeric token {tok!r}") from None
            if any(np.isnan(v) for v in values):
                dropped += 1
                continue
            rows.append(values)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise FormatError(f"{path.name}: ragged rows with widths {sorted(widths)}")
    return np.array(rows, dtype=float), dropped


def read_metadata(path) -> dict[int, tuple[int, int, int, int, float]]:
    meta = {}
    data, _ = _parse_numeric_file(Path(path))
    for row in data:
        if row.size != 6:
            raise FormatError(f"{Path(path).name}: metadata rows need 6 fields")
        pid = int(row[0])
        meta[pid] = (int(row[1]), int(row[2]), int(row[3]), int(row[4]), float(row[5]))
    return meta


def load_tcep(directory, include_multivariate: bool = False) -> list[TcepRecord]:
    """Load a directory laid out like the Tuebingen cause-effect pairs.

    Data files are ``pairNNNN.txt``; ``pairmeta.txt`` rows hold pair id,
    cause column start/end, effect column start/end (1-based) and weight.
    Pairs whose cause or effect spans several columns are multivariate and
    are dropped unless ``include_multivariate``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"benchmark directory {directory} does not exist")
    meta_path = directory / META_FILE
    if not meta_path.exists():
        raise IntegrityError(f"missing metadata file {meta_path}")
    meta = read_metadata(meta_path)
    files = {int(m.group(1)): p for p in directory.iterdir()
             if (m := _PAIR_FILE.match(p.name))}
    missing_meta = sorted(set(files) - set(meta))
    missing_data = sorted(set(meta) - set(files))
    if missing_meta:
        raise IntegrityError(f"data files without metadata rows: pairs {missing_meta}")
    if missing_data:
        raise IntegrityError(f"metadata rows without data files: pairs {missing_data}")

    records = []
    for pid in sorted(files):
        cs, ce, es, ee, weight = meta[pid]
        if weight <= 0:
            raise IntegrityError(f"pair {pid}: weight must be positive")
        multivariate = ce > cs or ee > es
        if multivariate and not include_multivariate:
            records.append(TcepRecord(pid, np.empty((0, 2)), None, weight, True))
            continue
        data, dropped = _parse_numeric_file(files[pid])
        if dropped:
            logger.warning("pair %d: dropped %d rows with missing values", pid, dropped)
        if multivariate:
            records.append(TcepRecord(pid, data, None, weight, True, dropped))
            continue
        if data.ndim != 2 or data.shape[1] < max(cs, es):
            raise FormatError(f"pair {pid}: expected at least {max(cs, es)} columns")
        pair = data[:, [0, 1]] if {cs, es} == {1, 2} else data[:, [min(cs, es) - 1, max(cs, es) - 1]]
        cause = 1 if cs < es else 2
        records.append(TcepRecord(pid, pair, cause, weight, False, dropped))
    return records


def bivariate(records: Iterable[TcepRecord]) -> list[TcepRecord]:
    return [r for r in records if not r.multivariate]


def write_tcep(directory, pairs) -> None:
    """Write ``(pair_id, data, cause_index, weight)`` tuples in benchmark layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta_lines = []
    for pid, data, cause, weight in pairs:
        data = np.asarray(data, dtype=float)
        lines = [" ".join(repr(float(v)) for v in row) for row in data]
        (directory / f"pair{pid:04d}.txt").write_text("\n".join(lines) + "\n")
        c, e = (1, 2) if cause == 1 else (2, 1)
        meta_lines.append(f"{pid} {c} {c} {e} {e} {float(weight)!r}")
    (directory / META_FILE).write_text("\n".join(meta_lines) + "\n")


def content_hash(directory) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(directory).glob("pair*.txt")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def read_pair_file(path) -> np.ndarray:
    data, _ = _parse_numeric_file(Path(path))
    if data.ndim != 2 or data.shape[1] != 2:
        raise FormatError(f"{path}: expected two columns, got shape {data.shape}")
    return data


# ---------------------------------------------------------------- container

def write_container(path, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(meta)
    header["arrays"] = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<IQ", FORMAT_VERSION, len(hbytes))
    body += hbytes
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a model container (bad magic or truncated)")
    body, digest = raw[:-32], raw[-32:]
    version, hlen = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: container version {version}, expected {FORMAT_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (corrupted or truncated file)")
    offset = len(MAGIC) + 12
    header = json.loads(body[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    arrays = {}
    for spec in header.pop("arrays"):
        count = int(np.prod(spec["shape"], dtype=int))
        end = offset + 8 * count
        if end > len(body):
            raise FormatError(f"{path}: truncated array section")
        arrays[spec["name"]] = np.frombuffer(body[offset:end], dtype="<f8").reshape(
            spec["shape"]).astype(float)
        offset = end
    if offset != len(body):
        raise FormatError(f"{path}: trailing bytes after arrays")
    return header, arrays


def _model_entries(model: TclModel, prefix: str):
    cfg = dataclasses.asdict(model.mlp.config)
    meta = {
        "mlp_config": cfg,
        "train_accuracy": model.train_accuracy,
        "standardize": model.standardize,
        "pair_ids": [int(p) if isinstance(p, (int, np.integer)) else p for p in model.pair_ids],
        "hyperparameters": model.hyperparameters,
        "has_pooled_stats": model.pooled_stats is not None,
        "has_unmixing": model.unmixing is not None,
    }
    arrays = []
    for k, (W, b) in enumerate(model.mlp.layers):
        arrays += [(f"{prefix}W{k}", W), (f"{prefix}b{k}", b)]
    arrays += [(f"{prefix}head_W", model.mlp.head[0]), (f"{prefix}head_b", model.mlp.head[1])]
    if model.pooled_stats is not None:
        arrays += [(f"{prefix}pooled_mean", model.pooled_stats[0]),
                   (f"{prefix}pooled_std", model.pooled_stats[1])]
    if model.unmixing is not None:
        u = model.unmixing
        meta["unmixing"] = {"converged": bool(u.converged), "iterations": int(u.iterations)}
        arrays += [(f"{prefix}ica_mean", u.mean), (f"{prefix}ica_whitening", u.whitening),
                   (f"{prefix}ica_rotation", u.rotation)]
    return meta, arrays


def _model_from_entries(meta: dict, arrays: dict, prefix: str) -> TclModel:
    cfg = dict(meta["mlp_config"])
    if cfg.get("sub_widths") is not None:
        cfg["sub_widths"] = tuple(cfg["sub_widths"])
    config = MlpConfig(**cfg)
    layers = [(arrays[f"{prefix}W{k}"], arrays[f"{prefix}b{k}"]) for k in range(config.n_layers)]
    mlp = MlpModel(config, layers, (arrays[f"{prefix}head_W"], arrays[f"{prefix}head_b"]))
    pooled = None
    if meta["has_pooled_stats"]:
        pooled = (arrays[f"{prefix}pooled_mean"], arrays[f"{prefix}pooled_std"])
    unmixing = None
    if meta["has_unmixing"]:
        u = meta["unmixing"]
        unmixing = LinearUnmixing(arrays[f"{prefix}ica_mean"], arrays[f"{prefix}ica_whitening"],
                                  arrays[f"{prefix}ica_rotation"], u["converged"], u["iterations"])
    return TclModel(mlp=mlp, train_accuracy=meta["train_accuracy"], standardize=meta["standardize"],
                    pooled_stats=pooled, pair_ids=tuple(meta["pair_ids"]), unmixing=unmixing,
                    hyperparameters=meta["hyperparameters"])


def save_model(path, model: TclModel) -> None:
    meta, arrays = _model_entries(model, "")
    write_container(path, {"kind": "model", "model": meta}, arrays)


def load_model(path) -> TclModel:
    header, arrays = read_container(path)
    if header.get("kind") != "model":
        raise FormatError(f"{path}: container holds a {header.get('kind')!r}, not a model")
    return _model_from_entries(header["model"], arrays, "")


def save_pool(path, pool) -> None:
    """Persist a :class:`causal_mosaic.mosaic.TesseraPool` in one container."""
    entries = []
    arrays = []
    for n, model in enumerate(pool.models):
        if model is None:
            entries.append(None)
            continue
        meta, arr = _model_entries(model, f"m{n}/")
        entries.append(meta)
        arrays += arr
    for name in POOL_TABLES:
        value = getattr(pool, name)
        if value is not None:
            arrays.append((name, np.asarray(value, dtype=float)))
    header = {
        "kind": "pool",
        "models": entries,
        "training_sets": [list(t) for t in pool.training_sets],
        "pair_ids": list(pool.pair_ids),
        "tables": [name for name in POOL_TABLES if getattr(pool, name) is not None],
        "manifest": pool.manifest,
    }
    write_container(path, header, arrays)


def load_pool(path):
    from .mosaic import TesseraPool

    header, arrays = read_container(path)
    if header.get("kind") != "pool":
        raise FormatError(f"{path}: container holds a {header.get('kind')!r}, not a pool")
    models = [None if meta is None else _model_from_entries(meta, arrays, f"m{n}/")
              for n, meta in enumerate(header["models"])]
    tables = {name: arrays[name] for name in header["tables"]}
    return TesseraPool(models=models, training_sets=[tuple(t) for t in header["training_sets"]],
                       pair_ids=tuple(header["pair_ids"]), taccs=tables.get("taccs"),
                       vaccs=tables.get("vaccs"), cacc=tables.get("cacc"),
                       w_models=tables.get("w_models"), vacc_all=tables.get("vacc_all"),
                       w_trials=tables.get("w_trials"), votes=tables.get("votes"),
                       manifest=header["manifest"])


# ---------------------------------------------------------------- results

def format_decision_line(pair_id, decision) -> str:
    values = " ".join(f"{e.value:.10g}" for e in decision.evidence)
    return f"{pair_id}\t{decision.rule}\t{decision.label}\t{decision.margin:.10g}\t{values}"


def write_results(path, rows) -> None:
    """Tab-separated ``pair_id rule cause margin evidence...`` lines."""
    lines = ["# pair_id\trule\tcause\tmargin\tevidence"]
    lines += [format_decision_line(pid, d) for pid, d in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ExperimentConfig:
    setting: str = "multi-pair"
    rules: tuple = ("rule1", "rule2")
    measures: tuple = ("dcor",)
    topologies: tuple = ("structural",)
    widths: tuple = (40,)
    pair_counts: tuple = (10, 20, 30, 40, 50)
    n_mixings: int = 100
    n_per_pair: int = 512
    mixing_depth: int = 5
    leaky_slope: float = 0.2
    confounded: bool = False
    alpha: float = 0.05
    restarts: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.setting not in ("multi-pair", "multi-env"):
            raise ValueError(f"setting must be multi-pair or multi-env, got {self.setting!r}")
        for r in self.rules:
            if r not in ("rule1", "rule2", "vote", "pooled", "thresholded"):
                raise ValueError(f"unknown rule {r!r}")
        for m in self.measures:
            if m not in ("dcor", "hsic"):
                raise ValueError(f"unknown measure {m!r}")
        if self.n_mixings < 1 or self.n_per_pair < 50:
            raise ValueError("n_mixings must be >= 1 and n_per_pair >= 50")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


def _config_sections():
    from .mosaic import EnsembleConfig

    return {"mlp": MlpConfig, "train": TrainConfig, "ensemble": EnsembleConfig,
            "experiment": ExperimentConfig}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple) or default is None:
        parts = [p for p in re.split(r"[,\s]+", raw) if p]
        out = []
        for p in parts:
            try:
                out.append(int(p))
            except ValueError:
                try:
                    out.append(float(p))
                except ValueError:
                    out.append(p)
        return tuple(out)
    return raw


def load_config(path=None, text: Optional[str] = None) -> dict:
    """Read an INI-style experiment file.

    Sections ``[mlp]``, ``[train]``, ``[ensemble]`` and ``[experiment]``;
    keys are the dataclass field names. Missing keys keep their defaults,
    unknown sections or keys raise ``ValueError``.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    if text is None:
        text = Path(path).read_text() if path is not None else ""
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    sections = _config_sections()
    unknown = set(parser.sections()) - set(sections)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for name, cls in sections.items():
        fields = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls()
        kwargs = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in fields:
                    raise ValueError(f"[{name}] unknown key {key!r}")
                kwargs[key] = _coerce(raw, getattr(defaults, key), f"{name}.{key}")
        out[name] = cls(**kwargs)
    return out
