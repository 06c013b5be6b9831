"""Revenue-maximization training loop and checkpointing.

One iteration draws ``samples_per_iter`` fresh auctions and applies one Adam
step per minibatch of ``batch`` samples, minimizing the negative relaxed
revenue. The learning rate warms up linearly over the first ``warmup_iters``
iterations, holds at ``lr_peak``, then drops to ``lr_floor`` after
``lr_floor_after`` iterations. Training is bitwise deterministic for a fixed
seed; checkpoints capture parameters, optimizer moments, the sampler state
and the iteration counter, so a resumed run reproduces an uninterrupted one
exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .ama import soft_revenue
from .autodiff import Tensor
from .menunet import MenuNet, ModelConfig, config_for_setting
from .settings import SettingSpec, ValuationBatch, make_rng, sample

_CKPT_MAGIC = b"AMACKPT\x00"
_CKPT_VERSION = 1
_TRAIN_STREAM = 0xA11
_EVAL_STREAM = 0xE7A


class NumericalError(RuntimeError):
    """Training hit a non-finite loss; the message carries diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run (paper-scale defaults)."""

    menu_size: int
    menu_temperature: float
    iterations: int = 2000
    samples_per_iter: int = 32768
    batch: int = 2048
    lr_peak: float = 3e-4
    lr_floor: float = 5e-5
    lr_floor_after: int = 3000
    warmup_iters: int = 100
    warmup_start: float = 1e-8
    tau_a: float = 500.0
    soft_ir_cap: bool = True
    clip_norm: float | None = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 50
    eval_samples: int = 4096

    def __post_init__(self):
        if self.iterations < 1 or self.iterations > 8000:
            raise ValueError("iterations must be in [1, 8000]")
        for name in ("lr_peak", "lr_floor", "warmup_start", "tau_a",
                     "menu_temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.samples_per_iter % self.batch:
            raise ValueError(
                f"batch ({self.batch}) must divide samples_per_iter "
                f"({self.samples_per_iter})")


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Warm up linearly to the peak, hold, then drop to the floor."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if iteration <= config.warmup_iters:
        frac = iteration / config.warmup_iters
        return config.warmup_start + (config.lr_peak - config.warmup_start) * frac
    if iteration <= config.lr_floor_after:
        return config.lr_peak
    return config.lr_floor


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, parameters: Mapping[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = dict(parameters)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.steps = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.parameters.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.parameters.items()}

    def step(self, learning_rate: float | None = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.steps += 1
        correct1 = 1.0 - self.beta1 ** self.steps
        correct2 = 1.0 - self.beta2 ** self.steps
        for name, p in self.parameters.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def clip_gradients(parameters: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in parameters.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in parameters.values():
            if p.grad is not None:
                p.grad *= scale
    return float(norm)


@dataclass
class Checkpoint:
    """Everything needed to evaluate or bitwise-resume a training run."""

    version: int
    setting: SettingSpec
    model_config: ModelConfig
    train_config: TrainConfig
    parameters: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_steps: int
    rng_state: dict
    iteration: int
    revenue_estimate: float


class Trainer:
    """Owns the model, optimizer and sampler stream for one run."""

    def __init__(self, spec: SettingSpec, config: TrainConfig,
                 model_config: ModelConfig | None = None):
        self.spec = spec
        self.config = config
        self.model_config = model_config or config_for_setting(
            spec, config.menu_size, config.menu_temperature)
        if self.model_config.menu_size != config.menu_size:
            raise ValueError("model and train configs disagree on menu size")
        self.model = MenuNet(self.model_config, seed=config.seed)
        self.parameters = self.model.named_parameters()
        self.adam = Adam(self.parameters, learning_rate=config.lr_peak,
                         beta1=config.adam_beta1, beta2=config.adam_beta2,
                         eps=config.adam_eps)
        self.rng = make_rng(np.random.SeedSequence([config.seed, _TRAIN_STREAM]))
        self.iteration = 0
        self.revenue_estimate = float("nan")

    # -- single gradient step ---------------------------------------------------

    def _params_tensors(self, batch: ValuationBatch):
        if self.model_config.classic:
            return self.model.forward_classic_tensors(*batch.V.shape[1:])
        return self.model.forward_tensors(batch.X, batch.Y)

    def train_step(self, batch: ValuationBatch,
                   learning_rate: float | None = None) -> float:
        """One forward/backward/update on a minibatch; returns the loss."""
        params = self._params_tensors(batch)
        loss = -soft_revenue(batch.V, params, self.config.tau_a,
                             ir_cap=self.config.soft_ir_cap)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(self._diagnostics(params, batch))
        self.model.zero_grad()
        loss.backward()
        if self.config.clip_norm is not None:
            clip_gradients(self.parameters, self.config.clip_norm)
        self.adam.step(learning_rate)
        self.model.zero_grad()
        return value

    def _diagnostics(self, params, batch: ValuationBatch) -> str:
        menu, w, lam = params.menu.data, params.weights.data, params.boosts.data
        return (
            "non-finite training loss; "
            f"menu range [{np.nanmin(menu):.3e}, {np.nanmax(menu):.3e}], "
            f"weights range [{np.nanmin(w):.3e}, {np.nanmax(w):.3e}], "
            f"boosts range [{np.nanmin(lam):.3e}, {np.nanmax(lam):.3e}], "
            f"bid range [{batch.V.min():.3e}, {batch.V.max():.3e}]")

    # -- evaluation during training ------------------------------------------------

    def hard_revenue(self, samples: int | None = None) -> float:
        """Exact-argmax revenue on a fresh seeded evaluation stream.

        Delegates to the evaluation harness so training reports exactly what
        the harness would measure on the same samples.
        """
        from .evaluation import MenuNetMechanism, estimate_revenue

        mean, _ = estimate_revenue(
            MenuNetMechanism(self.model), self.spec,
            samples or self.config.eval_samples,
            seed=np.random.SeedSequence([self.config.seed, _EVAL_STREAM]))
        return mean

    # -- checkpointing -----------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            version=_CKPT_VERSION,
            setting=self.spec,
            model_config=self.model_config,
            train_config=self.config,
            parameters={k: p.data.copy() for k, p in self.parameters.items()},
            adam_m={k: v.copy() for k, v in self.adam.m.items()},
            adam_v={k: v.copy() for k, v in self.adam.v.items()},
            adam_steps=self.adam.steps,
            rng_state=self.rng.bit_generator.state,
            iteration=self.iteration,
            revenue_estimate=self.revenue_estimate)

    def restore(self, ckpt: Checkpoint) -> None:
        if set(ckpt.parameters) != set(self.parameters):
            raise ValueError("checkpoint parameter names do not match the model")
        for name, data in ckpt.parameters.items():
            self.parameters[name].data = data.copy()
        self.adam.m = {k: v.copy() for k, v in ckpt.adam_m.items()}
        self.adam.v = {k: v.copy() for k, v in ckpt.adam_v.items()}
        self.adam.steps = ckpt.adam_steps
        self.rng.bit_generator.state = ckpt.rng_state
        self.iteration = ckpt.iteration
        self.revenue_estimate = ckpt.revenue_estimate


def fit(spec: SettingSpec, config: TrainConfig,
        model_config: ModelConfig | None = None,
        curve_path: str | None = None,
        resume: Checkpoint | None = None,
        progress: Callable[[int, float, float | None], None] | None = None) -> Checkpoint:
    """Train a menu network on one setting and return the final checkpoint.

    Writes a training-curve CSV (iteration, loss, hard revenue every
    ``eval_every`` iterations) when ``curve_path`` is given. Re-running with
    the same seed reproduces the curve byte for byte.
    """
    trainer = Trainer(spec, config, model_config)
    if resume is not None:
        trainer.restore(resume)
    rows: list[tuple] = []
    while trainer.iteration < config.iterations:
        lr = lr_schedule(trainer.iteration, config)
        batch = sample(spec, config.samples_per_iter, trainer.rng)
        losses = []
        for start in range(0, config.samples_per_iter, config.batch):
            piece = ValuationBatch(
                None if batch.X is None else batch.X[start:start + config.batch],
                None if batch.Y is None else batch.Y[start:start + config.batch],
                batch.V[start:start + config.batch])
            losses.append(trainer.train_step(piece, lr))
        trainer.iteration += 1
        loss = float(np.mean(losses))
        revenue = None
        if trainer.iteration % config.eval_every == 0 or trainer.iteration == config.iterations:
            revenue = trainer.hard_revenue()
            trainer.revenue_estimate = revenue
        rows.append((trainer.iteration, loss, revenue))
        if progress is not None:
            progress(trainer.iteration, loss, revenue)
    if curve_path is not None:
        write_curve(rows, curve_path)
    return trainer.checkpoint()


def write_curve(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# amanet-curve-v1\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "hard_revenue"])
        for iteration, loss, revenue in rows:
            writer.writerow([iteration, repr(loss),
                             "" if revenue is None else repr(revenue)])


def model_from_checkpoint(ckpt: Checkpoint) -> MenuNet:
    """Rebuild the network; forward outputs match the saved run bitwise."""
    model = MenuNet(ckpt.model_config, seed=ckpt.train_config.seed)
    params = model.named_parameters()
    if set(params) != set(ckpt.parameters):
        raise ValueError("checkpoint parameter names do not match the architecture")
    for name, data in ckpt.parameters.items():
        params[name].data = data.copy()
    return model


# -- binary checkpoint format -----------------------------------------------------
#
# magic | u32 version | records. Each record is:
#   u32 name length | name utf8 | u8 kind | payload
# kind 0: f64 tensor (u32 ndim, u64 dims..., little-endian doubles)
# kind 1: utf8 JSON blob (u64 byte length, bytes)


def _write_record(fh, name: str, kind: int, payload: bytes) -> None:
    encoded = name.encode()
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", kind))
    fh.write(payload)


def _tensor_payload(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype("<f8").tobytes()


def _json_payload(obj) -> bytes:
    blob = json.dumps(obj).encode()
    return struct.pack("<Q", len(blob)) + blob


def save(ckpt: Checkpoint, path: str) -> None:
    meta = {
        "setting": dataclasses.asdict(ckpt.setting),
        "model_config": dataclasses.asdict(ckpt.model_config),
        "train_config": dataclasses.asdict(ckpt.train_config),
        "adam_steps": ckpt.adam_steps,
        "iteration": ckpt.iteration,
        "revenue_estimate": ckpt.revenue_estimate,
        "rng_state": _encode_rng(ckpt.rng_state),
    }
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        _write_record(fh, "__meta__", 1, _json_payload(meta))
        for group, tensors in (("param", ckpt.parameters), ("adam_m", ckpt.adam_m),
                               ("adam_v", ckpt.adam_v)):
            for name in sorted(tensors):
                _write_record(fh, f"{group}/{name}", 0, _tensor_payload(tensors[name]))


def _read_exact(fh, count: int) -> bytes:
    raw = fh.read(count)
    if len(raw) != count:
        raise ValueError("truncated checkpoint file")
    return raw


def load(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = None
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode()
            (kind,) = struct.unpack("<B", _read_exact(fh, 1))
            if kind == 1:
                (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8))
                obj = json.loads(_read_exact(fh, blob_len).decode())
                if name == "__meta__":
                    meta = obj
            elif kind == 0:
                (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
                shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
                count = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
                data = data.reshape(shape).copy()
                group, _, short = name.partition("/")
                if group not in groups:
                    raise ValueError(f"unknown record group {group!r}")
                groups[group][short] = data
            else:
                raise ValueError(f"unknown record kind {kind}")
    if meta is None:
        raise ValueError("checkpoint has no metadata record")
    return Checkpoint(
        version=version,
        setting=SettingSpec(**meta["setting"]),
        model_config=ModelConfig(**meta["model_config"]),
        train_config=TrainConfig(**meta["train_config"]),
        parameters=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_steps=meta["adam_steps"],
        rng_state=_decode_rng(meta["rng_state"]),
        iteration=meta["iteration"],
        revenue_estimate=meta["revenue_estimate"])


def _encode_rng(state: dict) -> dict:
    def convert(value):
        if isinstance(value, np.ndarray):
            return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
        if isinstance(value, (np.integer,)):
            return int(value)
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        return value

    return convert(state)


def _decode_rng(state: dict) -> dict:
    def convert(value):
        if isinstance(value, dict) and "__ndarray__" in value:
            return np.array(value["__ndarray__"], dtype=value["dtype"])
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        return value

    return convert(state)


# -- desk-scale presets --------------------------------------------------------------
#
# Calibrated to finish each run on a two-core desktop within the acceptance
# budget while clearing the revenue gates. Paper-scale numbers remain the
# TrainConfig defaults; the presets shrink samples per iteration, iteration
# counts, and (for contextual settings) the network width, and they pick the
# soft-argmax temperature and initialization scales that keep desk-scale
# training out of the dead zero-trade basins (see the menu-network module
# notes on boost scale).


def desk_preset(spec: SettingSpec, seed: int = 0):
    """(TrainConfig, ModelConfig) tuned for small-machine runs."""
    from .menunet import config_for_setting

    key = (spec.tag, spec.n, spec.m)
    if key == ("D", 3, 1):
        cfg = TrainConfig(menu_size=16, menu_temperature=10.0, iterations=400,
                          samples_per_iter=8192, batch=2048, tau_a=100.0,
                          eval_every=100, seed=seed)
        model = config_for_setting(spec, 16, 10.0, init_std=0.2,
                                   boost_init_scale=0.1)
    elif key == ("E", 1, 2):
        cfg = TrainConfig(menu_size=128, menu_temperature=10.0, iterations=300,
                          samples_per_iter=8192, batch=2048, tau_a=100.0,
                          eval_every=100, seed=seed)
        model = config_for_setting(spec, 128, 10.0, init_std=0.2,
                                   boost_init_scale=0.1)
    elif key == ("F", 1, 2):
        cfg = TrainConfig(menu_size=40, menu_temperature=10.0, iterations=500,
                          samples_per_iter=16384, batch=2048, tau_a=500.0,
                          eval_every=100, seed=seed)
        model = config_for_setting(spec, 40, 10.0, init_std=0.2,
                                   boost_init_scale=0.01)
    elif spec.tag == "A":
        cfg = TrainConfig(menu_size=32, menu_temperature=5.0, iterations=900,
                          samples_per_iter=1024, batch=1024, tau_a=500.0,
                          eval_every=100, eval_samples=2048, seed=seed)
        model = config_for_setting(spec, 32, 5.0, d=32, d_hidden=32,
                                   interaction_modules=2, init_std=0.2,
                                   boost_init_scale=0.1)
    elif spec.tag == "B":
        cfg = TrainConfig(menu_size=64, menu_temperature=3.0, iterations=150,
                          samples_per_iter=1024, batch=1024, tau_a=500.0,
                          eval_every=50, eval_samples=2048, seed=seed)
        model = config_for_setting(spec, 64, 3.0, d=32, d_hidden=32,
                                   interaction_modules=2, init_std=0.2,
                                   boost_init_scale=0.1)
    else:  # classic C sizes; reduced-scale property runs for the big menus
        cfg = TrainConfig(menu_size=64, menu_temperature=10.0, iterations=200,
                          samples_per_iter=4096, batch=2048, tau_a=100.0,
                          eval_every=50, seed=seed)
        model = config_for_setting(spec, 64, 10.0, init_std=0.2,
                                   boost_init_scale=0.1)
    return cfg, model


def _fit_seed_worker(payload):
    spec, seed, eval_samples, eval_seed, overrides = payload
    import os
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    cfg, model_cfg = desk_preset(spec, seed=seed)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    ckpt = fit(spec, cfg, model_config=model_cfg)
    from .evaluation import MenuNetMechanism, estimate_revenue
    mech = MenuNetMechanism(model_from_checkpoint(ckpt))
    revenue, stderr = estimate_revenue(mech, spec, eval_samples, seed=eval_seed)
    return seed, revenue, stderr, ckpt


def fit_seeds(spec: SettingSpec, seeds, eval_samples: int = 100000,
              eval_seed: int = 0xEA7, processes: int = 1, overrides=None):
    """Train one desk-preset run per seed, evaluate each on fresh samples.

    Returns a list of (seed, revenue, stderr, checkpoint), seed order
    preserved. ``processes > 1`` farms runs out to worker processes.
    """
    payloads = [(spec, seed, eval_samples, eval_seed, overrides or {})
                for seed in seeds]
    if processes <= 1:
        return [_fit_seed_worker(p) for p in payloads]
    import multiprocessing as mp
    with mp.get_context("spawn").Pool(processes) as pool:
        return pool.map(_fit_seed_worker, payloads)
