"""The learned local operator: embedding -> width-(2r+1) conv -> pointwise convs -> logits.

All parameters live in one flat float64 vector; the named fields are views
into it, which keeps the optimizer, gradient check and checkpoints trivial.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import ContractError, Lattice, pad

MAGIC = b"SEAD1"
_NONLIN = ("tanh", "relu")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class KernelArch:
    alphabet_size: int
    embed_dim: int
    radius: int = 1
    hidden: tuple[int, ...] = (8,)
    nonlinearity: str = "tanh"
    quiescent_id: int = 0
    task: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.radius < 1 or self.embed_dim < 1 or self.alphabet_size < 2:
            raise ContractError("invalid kernel architecture")
        if any(h < 1 for h in self.hidden):
            raise ContractError("hidden widths must be positive")
        if self.nonlinearity not in _NONLIN:
            raise ContractError(f"nonlinearity must be one of {_NONLIN}")

    @property
    def window(self) -> int:
        return 2 * self.radius + 1

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every dense map after the embedding, head last."""
        dims = [self.window * self.embed_dim, *self.hidden, self.alphabet_size]
        return list(zip(dims[:-1], dims[1:]))

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = [("embedding", (self.alphabet_size, self.embed_dim))]
        for k, (i, o) in enumerate(self.layer_dims()):
            out += [(f"W{k}", (i, o)), (f"b{k}", (o,))]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())


@dataclass(eq=False)
class KernelParams:
    arch: KernelArch
    theta: np.ndarray
    views: dict[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.n_params,):
            raise ContractError(f"expected {self.arch.n_params} parameters, got {self.theta.shape}")
        self.views, off = {}, 0
        for name, shape in self.arch.shapes():
            n = int(np.prod(shape))
            self.views[name] = self.theta[off : off + n].reshape(shape)
            off += n

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def embedding(self) -> np.ndarray:
        return self.views["embedding"]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        n = len(self.arch.layer_dims())
        return [(self.views[f"W{k}"], self.views[f"b{k}"]) for k in range(n)]

    def copy(self) -> "KernelParams":
        return KernelParams(self.arch, self.theta.copy())

    def checksum(self) -> str:
        return hashlib.blake2b(self.theta.astype("<f8").tobytes(), digest_size=8).hexdigest()


def default_arch(task: str) -> KernelArch:
    presets = {
        "parity": dict(alphabet_size=6, embed_dim=2, hidden=(3,)),
        "addition": dict(alphabet_size=12, embed_dim=4, hidden=(6,)),
        "rule110": dict(alphabet_size=2, embed_dim=2, hidden=(4,)),
    }
    if task not in presets:
        raise ContractError(f"no default architecture for {task!r}")
    return KernelArch(task=task, **presets[task])


def init_params(arch: KernelArch, seed: int = 0) -> KernelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = KernelParams(arch, np.zeros(arch.n_params))
    p.embedding[...] = rng.uniform(-1.0, 1.0, size=p.embedding.shape)
    for W, _ in p.layers:
        bound = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return p


@dataclass
class ForwardCache:
    cells: np.ndarray
    windows: np.ndarray
    activations: list[np.ndarray]
    preacts: list[np.ndarray]
    token: str


def _as_cells(params: KernelParams, lattice) -> np.ndarray:
    if isinstance(lattice, Lattice):
        if lattice.alphabet.size != params.arch.alphabet_size:
            raise ContractError("lattice alphabet does not match kernel")
        return lattice.cells
    cells = np.asarray(lattice)
    if cells.size and cells.max() >= params.arch.alphabet_size:
        raise ContractError("symbol outside kernel alphabet")
    return cells


def forward_logits(params: KernelParams, lattice, return_cache: bool = False, dtype=np.float64):
    """Per-cell logits for a lattice, a ``(L,)`` array or a ``(batch, L)`` array.

    Cell ``i`` sees exactly cells ``i-r..i+r``, out-of-range cells read as quiescent.
    """
    arch = params.arch
    cells = _as_cells(params, lattice)
    padded = pad(cells, arch.radius, arch.quiescent_id)
    L = cells.shape[-1]
    windows = np.stack([padded[..., k : k + L] for k in range(arch.window)], axis=-1)
    emb = params.embedding.astype(dtype, copy=False)
    h = emb[windows].reshape(*cells.shape, arch.window * arch.embed_dim)
    acts, pres = [h], []
    layers = params.layers
    for k, (W, b) in enumerate(layers):
        z = h @ W.astype(dtype, copy=False) + b.astype(dtype, copy=False)
        if k == len(layers) - 1:
            h = z
            break
        pres.append(z)
        h = np.tanh(z) if arch.nonlinearity == "tanh" else np.maximum(z, 0)
        acts.append(h)
    if not return_cache:
        return h
    return h, ForwardCache(cells, windows, acts, pres, params.checksum())


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Mean over cells of -log softmax(logits)[target], plus the per-cell values."""
    t = target.cells if isinstance(target, Lattice) else np.asarray(target)
    if logits.shape[:-1] != t.shape:
        raise ContractError(f"logit field {logits.shape} does not match target {t.shape}")
    lp = log_softmax(logits)
    per_cell = -np.take_along_axis(lp, t[..., None].astype(np.intp), axis=-1)[..., 0]
    return float(per_cell.mean()), per_cell


def backward(params: KernelParams, cache: ForwardCache, target) -> KernelParams:
    """Exact gradient of the mean cross-entropy, returned in the parameter layout."""
    if cache.token != params.checksum():
        raise ContractError("forward cache was computed with different parameters")
    arch = params.arch
    t = target.cells if isinstance(target, Lattice) else np.asarray(target)
    if t.shape != cache.cells.shape:
        raise ContractError("target shape does not match the cached forward pass")
    grad = KernelParams(arch, np.zeros(arch.n_params))
    S = arch.alphabet_size
    n_cells = t.size
    # recompute logits from the cached last activation
    W_last, b_last = params.layers[-1]
    logits = cache.activations[-1] @ W_last + b_last
    p = np.exp(log_softmax(logits)).reshape(n_cells, S)
    p[np.arange(n_cells), t.reshape(-1)] -= 1.0
    delta = p / n_cells
    layers, glayers = params.layers, grad.layers
    for k in range(len(layers) - 1, -1, -1):
        a = cache.activations[k].reshape(n_cells, -1)
        gW, gb = glayers[k]
        gW[...] = a.T @ delta
        gb[...] = delta.sum(axis=0)
        delta = delta @ layers[k][0].T
        if k > 0:
            z = cache.preacts[k - 1].reshape(n_cells, -1)
            if arch.nonlinearity == "tanh":
                delta = delta * (1.0 - np.tanh(z) ** 2)
            else:
                delta = delta * (z > 0)
    np.add.at(grad.embedding, cache.windows.reshape(-1), delta.reshape(-1, arch.embed_dim))
    return grad


def loss_and_grad(params: KernelParams, cells: np.ndarray, target: np.ndarray) -> tuple[float, KernelParams]:
    logits, cache = forward_logits(params, cells, return_cache=True)
    loss, _ = cross_entropy_loss(logits, target)
    return loss, backward(params, cache, target)


def grad_check(params: KernelParams, cells, target, h: float = 1e-5, kink_tol: float = 1e-6) -> float:
    """Max relative error between ``backward`` and central finite differences.

    For relu kernels, parameters whose +-h perturbation moves any pre-activation
    across zero (within ``kink_tol``) are skipped; the derivative is not defined there.
    """
    cells = cells.cells if isinstance(cells, Lattice) else np.asarray(cells)
    target = target.cells if isinstance(target, Lattice) else np.asarray(target)
    _, analytic = loss_and_grad(params, cells, target)
    work = params.copy()

    def f() -> float:
        return cross_entropy_loss(forward_logits(work, cells), target)[0]

    def near_kink() -> bool:
        if work.arch.nonlinearity != "relu":
            return False
        _, c = forward_logits(work, cells, return_cache=True)
        return any((np.abs(z) < kink_tol + h * 10).any() for z in c.preacts)

    worst = 0.0
    for j in range(work.n_params):
        orig = work.theta[j]
        if near_kink():
            continue
        work.theta[j] = orig + h
        fp = f()
        work.theta[j] = orig - h
        fm = f()
        work.theta[j] = orig
        numeric = (fp - fm) / (2 * h)
        a = analytic.theta[j]
        worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


# -- checkpoints -------------------------------------------------------------------


def _header(arch: KernelArch) -> str:
    return "\n".join(
        [
            f"task={arch.task}",
            f"alphabet_size={arch.alphabet_size}",
            f"quiescent_id={arch.quiescent_id}",
            f"embed_dim={arch.embed_dim}",
            f"radius={arch.radius}",
            f"hidden={','.join(map(str, arch.hidden))}",
            f"nonlinearity={arch.nonlinearity}",
            f"n_params={arch.n_params}",
        ]
    )


def checkpoint_bytes(params: KernelParams) -> bytes:
    header = _header(params.arch).encode()
    payload = params.theta.astype("<f8").tobytes()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return MAGIC + struct.pack("<I", len(header)) + header + payload + digest


def save_checkpoint(params: KernelParams, path) -> str:
    """Writes the checkpoint and returns the payload checksum (hex)."""
    data = checkpoint_bytes(params)
    Path(path).write_bytes(data)
    return data[-8:].hex()


def load_checkpoint(path) -> KernelParams:
    return parse_checkpoint(Path(path).read_bytes())


def parse_checkpoint(data: bytes) -> KernelParams:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("magic: not a SEAD1 checkpoint")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise CheckpointError("header_length: file truncated")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        fields = dict(line.split("=", 1) for line in data[off : off + hlen].decode().splitlines())
    except (UnicodeDecodeError, ValueError):
        raise CheckpointError("header: unreadable") from None
    off += hlen

    def need(key, conv=int):
        try:
            return conv(fields[key])
        except (KeyError, ValueError):
            raise CheckpointError(f"{key}: missing or malformed") from None

    try:
        arch = KernelArch(
            alphabet_size=need("alphabet_size"),
            embed_dim=need("embed_dim"),
            radius=need("radius"),
            hidden=need("hidden", lambda s: tuple(int(v) for v in s.split(",") if v)),
            nonlinearity=need("nonlinearity", str),
            quiescent_id=need("quiescent_id"),
            task=need("task", str),
        )
    except ContractError as exc:
        raise CheckpointError(f"arch: {exc}") from None
    n = need("n_params")
    if n != arch.n_params:
        raise CheckpointError(f"n_params: header says {n}, layer dims imply {arch.n_params}")
    end = off + 8 * n
    if len(data) != end + 8:
        raise CheckpointError(f"payload: expected {end + 8} bytes, file has {len(data)}")
    payload = data[off:end]
    if hashlib.blake2b(payload, digest_size=8).digest() != data[end:]:
        raise CheckpointError("checksum: payload does not match")
    return KernelParams(arch, np.frombuffer(payload, dtype="<f8").astype(np.float64))
