"""Forward model of a thermo-optically tuned MZI mesh, plus a virtual chip.

Conventions used throughout the package:

* Weights are power transmissions expressed in dB as 10*log10(linear).
* Phases are radians; heater voltages are volts; heater power goes as V^2.
* A weight matrix is a plain (n_outputs, n_inputs) float64 ndarray of dB
  values, row index = output port, column index = input port.

The tunable unit cell is a Mach-Zehnder interferometer with a finite
extinction ratio ER (dB). With r = (sqrt(ER_lin) - 1)/(sqrt(ER_lin) + 1)
its power transmission at internal phase phi on the +/- branch is

    t = |r +- exp(i*phi)|^2 / 4 = (r^2 + 1 +- 2*r*cos(phi)) / 4

which lies in [ (1-r)^2/4, (1+r)^2/4 ]. The phase of MZI m is

    phi_m = phi0_m + sum_n phi2[m, n] * V_n^2

where the off-diagonal phi2 entries capture thermal crosstalk between
heaters. An input->output route is described by an ordered set of
(mzi_index, sign) pairs; the route weight is the per-path loss alpha times
the product of the traversed MZI transmissions.

The virtual chip extends this with terms the analytical model does not
have (per-MZI extinction ratios, a quartic self-phase term, measurement
noise); it stands in for fabricated hardware as the ground-truth oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PathEntry = tuple[int, int]  # (mzi_index, sign); sign is +1 or -1

SCHEMA_VERSION = 1


def _as_float_array(x, shape=None, name="array") -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if shape is not None and a.shape != shape:
        raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class MeshTopology:
    """Which MZIs each input->output route traverses, with branch signs.

    path_sets maps (output i, input j) to an ordered tuple of
    (mzi_index, sign) pairs. Every (i, j) pair must be present.
    """

    n_inputs: int
    n_outputs: int
    n_mzi: int
    path_sets: dict[tuple[int, int], tuple[PathEntry, ...]]

    def __post_init__(self):
        if self.n_mzi < 1:
            raise ValueError("n_mzi must be >= 1")
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ValueError("port counts must be >= 1")
        expected = {(i, j) for i in range(self.n_outputs) for j in range(self.n_inputs)}
        if set(self.path_sets) != expected:
            raise ValueError("path_sets must cover every (output, input) pair exactly")
        norm = {}
        for key, entries in self.path_sets.items():
            entries = tuple((int(m), int(s)) for m, s in entries)
            for m, s in entries:
                if not 0 <= m < self.n_mzi:
                    raise ValueError(f"path {key} references MZI {m} >= n_mzi={self.n_mzi}")
                if s not in (1, -1):
                    raise ValueError(f"path {key} has sign {s}, expected +1 or -1")
            norm[key] = entries
        object.__setattr__(self, "path_sets", norm)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_outputs, self.n_inputs)

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "n_mzi": self.n_mzi,
            "path_sets": [
                {"output": i, "input": j, "path": [[m, s] for m, s in self.path_sets[(i, j)]]}
                for i in range(self.n_outputs)
                for j in range(self.n_inputs)
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "MeshTopology":
        paths = {
            (int(e["output"]), int(e["input"])): tuple((int(m), int(s)) for m, s in e["path"])
            for e in d["path_sets"]
        }
        return MeshTopology(
            n_inputs=int(d["n_inputs"]),
            n_outputs=int(d["n_outputs"]),
            n_mzi=int(d["n_mzi"]),
            path_sets=paths,
        )


@dataclass(frozen=True)
class AnalyticalParams:
    """Trainable forward-model parameters for a given topology.

    alpha_db: per-route loss in dB, <= 0, shape (n_outputs, n_inputs).
    er_db:    shared extinction ratio in dB, > 0 and finite.
    phi0:     phase offsets in rad, shape (n_mzi,).
    phi2:     quadratic phase coefficients in rad/V^2, shape (n_mzi, n_mzi);
              off-diagonal entries are thermal crosstalk.
    """

    topology: MeshTopology
    alpha_db: np.ndarray
    er_db: float
    phi0: np.ndarray
    phi2: np.ndarray

    def __post_init__(self):
        t = self.topology
        object.__setattr__(self, "alpha_db", _as_float_array(self.alpha_db, t.shape, "alpha_db"))
        object.__setattr__(self, "phi0", _as_float_array(self.phi0, (t.n_mzi,), "phi0"))
        object.__setattr__(self, "phi2", _as_float_array(self.phi2, (t.n_mzi, t.n_mzi), "phi2"))
        er = float(self.er_db)
        if not math.isfinite(er) or er <= 0.0:
            raise ValueError(f"er_db must be finite and > 0, got {er}")
        object.__setattr__(self, "er_db", er)
        if np.any(self.alpha_db > 0.0):
            raise ValueError("alpha_db entries must be <= 0 (loss never amplifies)")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "analytical_params",
            "topology": self.topology.to_dict(),
            "alpha_db": self.alpha_db.tolist(),
            "er_db": self.er_db,
            "phi0": self.phi0.tolist(),
            "phi2": self.phi2.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "AnalyticalParams":
        return AnalyticalParams(
            topology=MeshTopology.from_dict(d["topology"]),
            alpha_db=np.array(d["alpha_db"], dtype=float),
            er_db=float(d["er_db"]),
            phi0=np.array(d["phi0"], dtype=float),
            phi2=np.array(d["phi2"], dtype=float),
        )


@dataclass(frozen=True)
class VirtualChipParams:
    """Ground-truth oracle: the analytical form plus mismatch and noise.

    Setting phi4 = 0, noise_sigma_db = 0 and all er_db_per_mzi equal to
    base.er_db reduces the chip exactly to the analytical form.
    """

    base: AnalyticalParams
    er_db_per_mzi: np.ndarray
    phi4: np.ndarray  # rad/V^4, applied as phi4[m] * V_m^4
    noise_sigma_db: float

    def __post_init__(self):
        n_mzi = self.base.topology.n_mzi
        object.__setattr__(
            self, "er_db_per_mzi", _as_float_array(self.er_db_per_mzi, (n_mzi,), "er_db_per_mzi")
        )
        object.__setattr__(self, "phi4", _as_float_array(self.phi4, (n_mzi,), "phi4"))
        if np.any(self.er_db_per_mzi <= 0.0):
            raise ValueError("er_db_per_mzi entries must be > 0")
        sigma = float(self.noise_sigma_db)
        if not math.isfinite(sigma) or sigma < 0.0:
            raise ValueError(f"noise_sigma_db must be finite and >= 0, got {sigma}")
        object.__setattr__(self, "noise_sigma_db", sigma)

    @property
    def topology(self) -> MeshTopology:
        return self.base.topology

    def to_dict(self) -> dict:
        d = self.base.to_dict()
        d["kind"] = "virtual_chip"
        d["er_db_per_mzi"] = self.er_db_per_mzi.tolist()
        d["phi4"] = self.phi4.tolist()
        d["noise_sigma_db"] = self.noise_sigma_db
        return d

    @staticmethod
    def from_dict(d: dict) -> "VirtualChipParams":
        return VirtualChipParams(
            base=AnalyticalParams.from_dict(d),
            er_db_per_mzi=np.array(d["er_db_per_mzi"], dtype=float),
            phi4=np.array(d["phi4"], dtype=float),
            noise_sigma_db=float(d["noise_sigma_db"]),
        )


# ---------------------------------------------------------------------------
# Core physics


def extinction_reflectivity(er_db) -> np.ndarray | float:
    """r = (sqrt(ER) - 1)/(sqrt(ER) + 1) from the extinction ratio in dB.

    Written as 1 - 2/(sqrt(ER) + 1) so er_db = +inf gives exactly r = 1.
    """
    er_db = np.asarray(er_db, dtype=float)
    if np.any(np.isnan(er_db)) or np.any(er_db <= 0.0):
        raise ValueError("er_db must be > 0")
    sqrt_er = np.power(10.0, er_db / 20.0)
    r = 1.0 - 2.0 / (sqrt_er + 1.0)
    return float(r) if r.ndim == 0 else r


def mzi_transmission(phase, er_db, sign: int = 1):
    """Power transmission (r^2 + 1 +- 2*r*cos(phase)) / 4 of one MZI branch.

    phase may be a scalar or array; er_db broadcasts against it. Returns a
    value in [(1-r)^2/4, (1+r)^2/4].
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    phase = np.asarray(phase, dtype=float)
    if not np.all(np.isfinite(phase)):
        raise ValueError("phase must be finite")
    r = np.asarray(extinction_reflectivity(er_db))
    t = (r * r + 1.0 + 2.0 * sign * r * np.cos(phase)) / 4.0
    return float(t) if t.ndim == 0 else t


def phases_from_voltages(params: AnalyticalParams, v) -> np.ndarray:
    """phi_m = phi0_m + sum_n phi2[m, n] * v_n^2 for one voltage vector."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return _phases(params.phi0, params.phi2, v[None, :])[0]
    return _phases(params.phi0, params.phi2, v)


def _phases(phi0: np.ndarray, phi2: np.ndarray, volts: np.ndarray) -> np.ndarray:
    """Batch phases, shape (n_samples, n_mzi). volts is (n_samples, n_mzi)."""
    if volts.ndim != 2 or volts.shape[1] != phi0.shape[0]:
        raise ValueError(f"voltage batch has shape {volts.shape}, expected (*, {phi0.shape[0]})")
    if not np.all(np.isfinite(volts)):
        raise ValueError("voltages must be finite")
    return phi0[None, :] + (volts**2) @ phi2.T


def _weights_db(
    topology: MeshTopology,
    alpha_db: np.ndarray,
    er_db_per_mzi: np.ndarray,
    phases: np.ndarray,
) -> np.ndarray:
    """dB weights for a batch of per-MZI phases, shape (S, n_out, n_in).

    Computed as alpha_db + 10*sum(log10 t) over the route; the sum-of-logs
    form keeps multi-MZI routes away from linear underflow.
    """
    r = extinction_reflectivity(er_db_per_mzi)  # (n_mzi,)
    cos_phi = np.cos(phases)  # (S, n_mzi)
    base = r * r + 1.0
    cross = 2.0 * r * cos_phi
    used_signs = {sign for entries in topology.path_sets.values() for _, sign in entries}
    log_t = {sign: 10.0 * np.log10((base + sign * cross) / 4.0) for sign in used_signs}
    s = phases.shape[0]
    out = np.empty((s, topology.n_outputs, topology.n_inputs))
    for (i, j), entries in topology.path_sets.items():
        acc = np.full(s, alpha_db[i, j])
        for m, sign in entries:
            acc = acc + log_t[sign][:, m]
        out[:, i, j] = acc
    return out


def predict_weights(params: AnalyticalParams, v) -> np.ndarray:
    """Analytical-model weight matrix in dB for one voltage vector."""
    return predict_weights_batch(params, np.asarray(v, dtype=float)[None, :])[0]


def predict_weights_batch(params: AnalyticalParams, volts) -> np.ndarray:
    """Analytical-model weights for a (n_samples, n_mzi) voltage batch."""
    volts = np.asarray(volts, dtype=float)
    phases = _phases(params.phi0, params.phi2, volts)
    er = np.full(params.topology.n_mzi, params.er_db)
    return _weights_db(params.topology, params.alpha_db, er, phases)


def virtual_chip_measure(chip: VirtualChipParams, v, rng_seed) -> np.ndarray:
    """One noisy virtual-chip measurement; deterministic given rng_seed."""
    return virtual_chip_measure_batch(chip, np.asarray(v, dtype=float)[None, :], rng_seed)[0]


def virtual_chip_measure_batch(chip: VirtualChipParams, volts, rng_seed) -> np.ndarray:
    """Measure a (n_samples, n_mzi) voltage batch on the virtual chip.

    Relative to the analytical form: each MZI uses its own extinction
    ratio, the phase gains phi4[m] * V_m^4, and i.i.d. Gaussian noise of
    noise_sigma_db is added per dB entry. With all mismatch zeroed this is
    bit-identical to predict_weights_batch (same code path).
    """
    volts = np.asarray(volts, dtype=float)
    base = chip.base
    phases = _phases(base.phi0, base.phi2, volts)
    phases = phases + (volts**4) * chip.phi4[None, :]
    w = _weights_db(chip.topology, base.alpha_db, chip.er_db_per_mzi, phases)
    if chip.noise_sigma_db > 0.0:
        rng = np.random.default_rng(rng_seed)
        w = w + rng.normal(0.0, chip.noise_sigma_db, size=w.shape)
    return w


# ---------------------------------------------------------------------------
# Bundled topologies and fixtures


def default_crossbar_topology(n: int) -> MeshTopology:
    """n x n crossbar: one dedicated MZI per matrix element, n^2 total."""
    if n < 1:
        raise ValueError("n must be >= 1")
    paths = {(i, j): ((i * n + j, 1),) for i in range(n) for j in range(n)}
    return MeshTopology(n_inputs=n, n_outputs=n, n_mzi=n * n, path_sets=paths)


def split_tree_topology(n: int) -> MeshTopology:
    """n x n mesh routing every input through a shared splitter stage.

    Input j first traverses splitter MZI j (bar branch for the upper half
    of the outputs, cross branch for the lower half), then a dedicated
    weight MZI per (i, j). Every route has |path| = 2 and both branch
    signs occur, so products over multi-MZI paths are exercised.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    paths = {}
    for i in range(n):
        for j in range(n):
            split_sign = 1 if i < (n + 1) // 2 else -1
            paths[(i, j)] = ((j, split_sign), (n + i * n + j, 1))
    return MeshTopology(n_inputs=n, n_outputs=n, n_mzi=n + n * n, path_sets=paths)


def default_virtual_chip(
    n: int = 3,
    seed: int = 20230,
    topology: MeshTopology | None = None,
    noise_sigma_db: float = 0.3,
) -> VirtualChipParams:
    """Build a mismatched virtual chip with seeded random parameters.

    The base model gets losses of a few dB, random phase offsets, a
    quadratic coefficient near pi/4 rad/V^2 per heater (one half-period
    over 0..2 V) and percent-level thermal crosstalk. Mismatch terms: the
    per-MZI extinction ratios spread over 15..35 dB around the 25 dB base
    value, and quartic self-phase coefficients of magnitude 0.10..0.18
    rad/V^4. The magnitudes are sized so the best achievable analytical
    fit is left with an error floor above 1 dB, which is what makes the
    transfer-learning comparison non-trivial.
    """
    topo = topology if topology is not None else default_crossbar_topology(n)
    rng = np.random.default_rng(seed)
    m = topo.n_mzi
    alpha = -rng.uniform(1.0, 4.0, size=topo.shape)
    phi0 = rng.uniform(0.0, 2.0 * np.pi, size=m)
    phi2 = rng.uniform(-0.05, 0.05, size=(m, m))
    diag = (np.pi / 4.0) * rng.uniform(0.9, 1.1, size=m)
    phi2[np.arange(m), np.arange(m)] = diag
    base = AnalyticalParams(topology=topo, alpha_db=alpha, er_db=25.0, phi0=phi0, phi2=phi2)
    er_spread = rng.uniform(15.0, 35.0, size=m)
    phi4 = rng.uniform(0.10, 0.18, size=m) * rng.choice([-1.0, 1.0], size=m)
    return VirtualChipParams(
        base=base, er_db_per_mzi=er_spread, phi4=phi4, noise_sigma_db=noise_sigma_db
    )


# ---------------------------------------------------------------------------
# Fixture persistence (human-readable JSON, versioned)


def save_params(obj: AnalyticalParams | VirtualChipParams, path: str | Path) -> None:
    """Write a parameter fixture as versioned JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj.to_dict(), f, indent=1)
        f.write("\n")


def load_params(path: str | Path) -> AnalyticalParams | VirtualChipParams:
    """Load a fixture written by save_params; dispatches on its "kind"."""
    with open(path) as f:
        d = json.load(f)
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version} in {path}")
    kind = d.get("kind")
    if kind == "analytical_params":
        return AnalyticalParams.from_dict(d)
    if kind == "virtual_chip":
        return VirtualChipParams.from_dict(d)
    raise ValueError(f"unknown fixture kind {kind!r} in {path}")


def bundled_fixture_path(name: str) -> Path:
    """Path of a fixture shipped with the package (e.g. 'crossbar3x3')."""
    p = Path(__file__).parent / "fixtures" / f"{name}.json"
    if not p.exists():
        available = sorted(q.stem for q in p.parent.glob("*.json"))
        raise ValueError(f"no bundled fixture {name!r}; available: {available}")
    return p


def topology_hash(topology: MeshTopology) -> str:
    """Stable sha256 over the canonical topology JSON, for manifests."""
    import hashlib

    blob = json.dumps(topology.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
