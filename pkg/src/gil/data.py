"""Synthetic spring-coupled N-body systems and their dataset plumbing.

Every pair of particles is joined by a spring with a (r-1)^2 potential, the
only force law generated here (the remaining laws of the source simulation
family — orbital 1/r and 1/r^2, charged, damped springs, discontinuous —
are listed as extension points, not implemented). Targets come in two
flavors: per-particle force vectors ("newtonian") and the scalar total
energy ("hamiltonian"). With unit masses, force and acceleration coincide,
which is why unit masses are the default.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = "gil-dataset-1"
_COINCIDENT_TOL = 1e-12


@dataclass
class ParticleSystem:
    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray  # (n, 3)
    masses: np.ndarray  # (n,), all positive

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite coordinates")

    @property
    def n(self):
        return len(self.masses)


def random_system(n=10, seed=0):
    """Seeded initial conditions: positions uniform in a side-2 cube,
    velocities gaussian with sigma 0.5, unit masses."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1.0, 1.0, size=(n, 3))
    vel = rng.normal(0.0, 0.5, size=(n, 3))
    return ParticleSystem(pos, vel, np.ones(n))


def _separations(positions):
    diff = positions[:, None, :] - positions[None, :, :]  # diff[i,j] = x_i - x_j
    r = np.sqrt((diff * diff).sum(axis=-1))
    return diff, r


def spring_forces(sys):
    """Force on particle i: sum over j of -2 (r_ij - 1) r_hat, r_hat from j to i."""
    diff, r = _separations(sys.positions)
    n = sys.n
    off = ~np.eye(n, dtype=bool)
    if np.any(r[off] < _COINCIDENT_TOL):
        raise ValueError("singular separation")
    r_safe = np.where(off, r, 1.0)
    coef = np.where(off, -2.0 * (r - 1.0) / r_safe, 0.0)
    return (coef[:, :, None] * diff).sum(axis=1)


def potential_energy(sys):
    _, r = _separations(sys.positions)
    iu = np.triu_indices(sys.n, k=1)
    return float(((r[iu] - 1.0) ** 2).sum())


def hamiltonian(sys):
    """Total energy: sum of kinetic terms plus (r-1)^2 over unordered pairs."""
    kinetic = 0.5 * (sys.masses * (sys.velocities**2).sum(axis=1)).sum()
    return float(kinetic) + potential_energy(sys)


def simulate(sys, dt, steps, integrator="verlet"):
    """Velocity-Verlet trajectory; returns steps+1 states including the input.

    Aborts with the step index if any coordinate exceeds 1e6 (divergence).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if integrator != "verlet":
        raise ValueError(f"unknown integrator {integrator!r}")
    x = np.array(sys.positions)
    v = np.array(sys.velocities)
    m = sys.masses
    states = [ParticleSystem(x.copy(), v.copy(), m.copy())]
    a = spring_forces(states[0]) / m[:, None]
    for step in range(1, steps + 1):
        x = x + v * dt + 0.5 * a * dt * dt
        if np.any(np.abs(x) > 1e6):
            raise RuntimeError(f"trajectory diverged at step {step}")
        cur = ParticleSystem(x.copy(), v.copy(), m.copy())
        a_new = spring_forces(cur) / m[:, None]
        v = v + 0.5 * (a + a_new) * dt
        a = a_new
        states.append(ParticleSystem(x.copy(), v.copy(), m.copy()))
    return states


@dataclass
class DatasetRecord:
    """One timeframe: geometry, per-node features, and exactly one target."""

    id: int
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    node_features: np.ndarray  # (n, 2): mass, speed
    graph_target: float | None = None
    node_targets: np.ndarray | None = None

    def __post_init__(self):
        if (self.graph_target is None) == (self.node_targets is None):
            raise ValueError("exactly one of graph_target / node_targets required")

    @property
    def n(self):
        return len(self.masses)


def _node_features(sys):
    speed = np.linalg.norm(sys.velocities, axis=1)
    return np.stack([sys.masses, speed], axis=1)


def record_from_state(state, task, rec_id):
    if task == "newtonian":
        return DatasetRecord(rec_id, state.positions, state.velocities, state.masses,
                             _node_features(state), node_targets=spring_forces(state))
    if task == "hamiltonian":
        return DatasetRecord(rec_id, state.positions, state.velocities, state.masses,
                             _node_features(state), graph_target=hamiltonian(state))
    raise ValueError(f"unknown task {task!r}")


def emit_dataset(trajectory, task, out_path, meta=None):
    """Write one JSON line per trajectory state, preceded by a metadata line.

    Floats serialize via json's repr round-trip, so load(emit(x)) == x exactly.
    """
    states = list(trajectory)
    if not states:
        raise ValueError("empty trajectory")
    header = {"format": FORMAT_VERSION, "task": task, "records": len(states)}
    if meta:
        header.update(meta)
    with open(out_path, "w") as fh:
        fh.write(json.dumps({"_meta": header}) + "\n")
        for rec_id, state in enumerate(states):
            rec = record_from_state(state, task, rec_id)
            row = {
                "id": rec.id,
                "positions": rec.positions.tolist(),
                "velocities": rec.velocities.tolist(),
                "masses": rec.masses.tolist(),
                "node_features": rec.node_features.tolist(),
            }
            if rec.graph_target is not None:
                row["graph_target"] = rec.graph_target
            else:
                row["node_targets"] = rec.node_targets.tolist()
            fh.write(json.dumps(row) + "\n")


def load_dataset(path):
    """Read a JSONL dataset; returns (records, metadata)."""
    records = []
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed dataset line {lineno}") from exc
            if "_meta" in row:
                meta = row["_meta"]
                continue
            try:
                records.append(DatasetRecord(
                    id=row["id"],
                    positions=np.array(row["positions"], dtype=np.float64),
                    velocities=np.array(row["velocities"], dtype=np.float64),
                    masses=np.array(row["masses"], dtype=np.float64),
                    node_features=np.array(row["node_features"], dtype=np.float64),
                    graph_target=row.get("graph_target"),
                    node_targets=(np.array(row["node_targets"], dtype=np.float64)
                                  if "node_targets" in row else None),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"malformed dataset line {lineno}: {exc}") from exc
    return records, meta


def split_dataset(records, seed):
    """Seeded disjoint 80/10/10 split by count, remainders to train.

    Fewer than 10 records cannot honor the ratio; everything goes to train
    (with a warning).
    """
    records = list(records)
    n = len(records)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = n // 10
    n_test = n // 10
    if n < 10:
        warnings.warn(f"{n} records cannot be split 80/10/10; all assigned to train",
                      stacklevel=2)
    val = [records[i] for i in order[:n_val]]
    test = [records[i] for i in order[n_val:n_val + n_test]]
    train = [records[i] for i in order[n_val + n_test:]]
    return train, val, test
