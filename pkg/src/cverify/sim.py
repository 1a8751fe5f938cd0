"""Black-box simulators: bundled ODE benchmarks and a subprocess client.

A simulator maps a parameter vector theta to a trajectory sampled at the
requested times.  Everything here is deterministic: the bundled models use
classical fixed-step RK4, and the external client just frames requests.

Bundled models
--------------
``vdp``           time-reversed van der Pol oscillator; theta is the initial
                  state (x1, x2), output is the full state.
``mountain-car``  underpowered car on a sinusoidal valley with a bang-bang
                  energy-pumping controller u = sign(v) (u = +1 when v = 0);
                  theta is (position, velocity) at t = 0, output is
                  (position, velocity).

External protocol
-----------------
Line-delimited JSON over the child's stdin/stdout.  On spawn the child
writes ``{"k": <int>, "n": <int>}``.  Each request is
``{"id": <int>, "theta": [..], "times": [..]}`` on one line; the reply is
``{"id": <int>, "values": [[..], ..]}`` with one output vector per
requested time, or ``{"id": <int>, "error": "<msg>"}``.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .signals import Signal

GRID_TOL = 1e-9
DEFAULT_STEP = 0.01
DEFAULT_PERIOD = 0.05
DEFAULT_TIMEOUT = 60.0


class SimFailure(RuntimeError):
    """Simulation could not produce a trajectory (crash, timeout, bad reply)."""


class DimensionMismatch(ValueError):
    """Parameter vector length does not match the simulator's input dimension."""


class UnknownModel(ValueError):
    """No bundled model under that name."""


# ---------------------------------------------------------------------------
# Fixed-step RK4 models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeModel:
    """Deterministic ODE simulator; theta is mapped to the initial state.

    rhs operates on a batch of states, shape (m, state_dim) -> (m, state_dim),
    so one integrator pass can carry many parameter vectors at once.
    """

    name: str
    k: int
    n: int
    state_dim: int
    rhs: Callable[[np.ndarray, float], np.ndarray]
    init: Callable[[np.ndarray], np.ndarray] = field(default=None)
    project: Callable[[np.ndarray], np.ndarray] = field(default=None)
    h: float = DEFAULT_STEP

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("integration step must be positive")
        if self.init is None:
            object.__setattr__(self, "init", lambda thetas: np.array(thetas))
        if self.project is None:
            object.__setattr__(self, "project", lambda states: states)

    def _steps_for(self, times: np.ndarray) -> np.ndarray:
        steps = np.rint(times / self.h).astype(np.int64)
        off = np.abs(steps * self.h - times)
        if np.any(off > GRID_TOL):
            bad = float(times[int(np.argmax(off))])
            raise SimFailure(
                f"requested time {bad} does not fall on the h={self.h} "
                f"integration grid (off by {off.max():.3g})"
            )
        return steps

    def simulate_batch(self, thetas, times) -> np.ndarray:
        """Trajectories for many parameter vectors: array (m, T, n)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.k:
            raise DimensionMismatch(
                f"{self.name} takes {self.k} parameters, got {thetas.shape[1]}"
            )
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a nonempty 1-D sequence")
        if np.any(np.diff(times) <= 0) or times[0] < 0:
            raise ValueError("times must be strictly increasing and nonnegative")
        steps = self._steps_for(times)

        x = np.asarray(self.init(thetas), dtype=float)
        m = x.shape[0]
        out = np.empty((m, times.size, self.n))
        j = 0
        while j < steps.size and steps[j] == 0:
            out[:, j, :] = self.project(x)
            j += 1
        h = self.h
        # Trajectories that escape the float64 range are frozen at their last
        # representable state: the held values keep the escape sign and an
        # astronomically large magnitude, so robustness stays finite while
        # still registering maximal violation.
        alive = np.ones(m, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(1, int(steps[-1]) + 1):
                t = (s - 1) * h
                k1 = self.rhs(x, t)
                k2 = self.rhs(x + 0.5 * h * k1, t + 0.5 * h)
                k3 = self.rhs(x + 0.5 * h * k2, t + 0.5 * h)
                k4 = self.rhs(x + h * k3, t + h)
                nxt = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                ok = np.isfinite(nxt).all(axis=1)
                keep = alive & ok
                x = np.where(keep[:, None], nxt, x)
                alive = keep
                while j < steps.size and steps[j] == s:
                    out[:, j, :] = self.project(x)
                    j += 1
        return out

    def simulate(self, theta, times) -> Signal:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        vals = self.simulate_batch(theta[None, :], times)[0]
        return Signal(times=np.asarray(times, dtype=float), values=vals)


def _vdp_rhs(x, t):
    x1, x2 = x[:, 0], x[:, 1]
    return np.stack([-x2, 4.0 * (x1 * x1 - 1.0) * x2 + x1], axis=1)


def vdp_model(h: float = DEFAULT_STEP) -> OdeModel:
    """Time-reversed van der Pol: dx1 = -x2, dx2 = 4(x1^2 - 1)x2 + x1."""
    return OdeModel(name="vdp", k=2, n=2, state_dim=2, rhs=_vdp_rhs, h=h)


MC_MASS = 0.2
MC_GRAVITY = 9.8
MC_FORCE = 0.2
MC_FRICTION = 0.5


def bang_bang(pos, vel):
    """Energy-pumping control: push in the direction of travel, +1 at rest."""
    return np.where(vel >= 0.0, 1.0, -1.0)


def mountain_car_model(
    h: float = DEFAULT_STEP,
    control: Callable = bang_bang,
    friction: float = MC_FRICTION,
) -> OdeModel:
    """Underpowered car in a cos(3x) valley.

    dx = v;  dv = -m*g*cos(3x) + (F/m)*u - friction*v
    with m = 0.2, g = 9.8, F = 0.2.  `control` and `friction` are exposed so
    the conservation tests can switch the drive off.
    """

    def rhs(x, t):
        pos, vel = x[:, 0], x[:, 1]
        u = control(pos, vel)
        acc = (
            -MC_MASS * MC_GRAVITY * np.cos(3.0 * pos)
            + (MC_FORCE / MC_MASS) * u
            - friction * vel
        )
        return np.stack([vel, acc], axis=1)

    return OdeModel(name="mountain-car", k=2, n=2, state_dim=2, rhs=rhs, h=h)


_BUILTINS = {"vdp": vdp_model, "mountain-car": mountain_car_model}


def builtin(name: str):
    """Bundled simulator by name ("vdp" or "mountain-car")."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownModel(
            f"unknown model {name!r}; available: {sorted(_BUILTINS)}"
        ) from None
    return factory()


# ---------------------------------------------------------------------------
# External subprocess simulators
# ---------------------------------------------------------------------------

class ExternalSimulator:
    """Synchronous line-JSON client around a child simulator process.

    Not shareable across threads: requests are serialized on an internal
    lock, and a pool of workers should own one instance each.
    """

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise SimFailure(f"cannot spawn {self.command}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

        hello = self._read_json("handshake")
        try:
            self.k = int(hello["k"])
            self.n = int(hello["n"])
        except (KeyError, TypeError, ValueError):
            self._die()
            raise SimFailure(f"bad handshake from child: {hello!r}") from None
        if self.k <= 0 or self.n <= 0:
            self._die()
            raise SimFailure(f"nonpositive dimensions in handshake: {hello!r}")

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _die(self):
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def _read_json(self, what: str) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._die()
            raise SimFailure(
                f"timeout waiting for {what} after {self.timeout}s"
            ) from None
        if line is None:
            self._die()
            raise SimFailure(f"child exited while waiting for {what}")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self._die()
            raise SimFailure(f"malformed JSON in {what}: {line!r}") from exc
        if not isinstance(msg, dict):
            self._die()
            raise SimFailure(f"expected a JSON object in {what}, got: {line!r}")
        return msg

    def simulate(self, theta, times) -> Signal:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.k:
            raise DimensionMismatch(
                f"child takes {self.k} parameters, got {theta.size}"
            )
        times = np.asarray(times, dtype=float)
        with self._lock:
            if self._proc.poll() is not None:
                raise SimFailure("child process is gone")
            rid = self._next_id
            self._next_id += 1
            req = {"id": rid, "theta": theta.tolist(), "times": times.tolist()}
            try:
                self._proc.stdin.write(json.dumps(req) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._die()
                raise SimFailure(f"child closed stdin pipe: {exc}") from exc
            reply = self._read_json(f"reply to request {rid}")
        if reply.get("id") != rid:
            self._die()
            raise SimFailure(f"reply id {reply.get('id')!r} != request id {rid}")
        if "error" in reply:
            raise SimFailure(f"child reported: {reply['error']}")
        values = reply.get("values")
        if not isinstance(values, list) or len(values) != times.size:
            got = len(values) if isinstance(values, list) else values
            self._die()
            raise SimFailure(
                f"expected {times.size} output rows, got {got!r}"
            )
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != self.n:
            self._die()
            raise SimFailure(
                f"expected rows of width {self.n}, got shape {arr.shape}"
            )
        return Signal(times=times, values=arr)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._die()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external(command, timeout: float = DEFAULT_TIMEOUT) -> ExternalSimulator:
    """Spawn an external simulator speaking the line-JSON protocol."""
    return ExternalSimulator(command, timeout=timeout)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def simulate(sim, theta, times) -> Signal:
    """Run one simulation; dispatches to the simulator's own method."""
    return sim.simulate(theta, times)


def simulate_many(sim, thetas, times) -> list[Signal]:
    """Trajectories for a batch of parameter vectors.

    Uses the model's vectorized path when available, otherwise loops.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if hasattr(sim, "simulate_batch"):
        vals = sim.simulate_batch(thetas, times)
        times = np.asarray(times, dtype=float)
        return [Signal(times=times, values=vals[i]) for i in range(vals.shape[0])]
    return [sim.simulate(theta, times) for theta in thetas]


def sample_times(horizon: float, period: float = DEFAULT_PERIOD) -> np.ndarray:
    """Uniform sampling grid 0, period, ..., horizon (inclusive)."""
    count = int(round(horizon / period))
    if abs(count * period - horizon) > GRID_TOL:
        raise ValueError(
            f"horizon {horizon} is not a whole number of periods {period}"
        )
    return np.linspace(0.0, horizon, count + 1)
