"""Small dense feed-forward classifiers with hand-rolled dual backprop.

The backward pass returns the loss gradient with respect to BOTH the input
sample and the flat parameter vector in one sweep; the attack engine consumes
the former, the parameter-adaptation logic the latter. Architectures are
stacks of Dense and ReLU layers (plus Softplus when a twice-differentiable
surrogate is needed); parameters live in a single flat float64 vector laid
out as [W0, b0, W1, b1, ...] with row-major weights, and that layout is also
the on-disk format.
"""

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import as_tensor, ensure_finite

MODEL_FORMAT = "p3a-model-v1"


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"dense dims must be positive, got {self}")

    @property
    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Softplus:
    # smooth ReLU surrogate: (1/s) * log(1 + exp(s*z)); derivative sigmoid(s*z)
    sharpness: float = 10.0


@dataclass(frozen=True)
class ModelArch:
    """Layer stack description. The final Dense layer's out_dim is the class count."""

    input_dim: int
    layers: tuple

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        dims = self.input_dim
        saw_dense = False
        for layer in self.layers:
            if isinstance(layer, Dense):
                if layer.in_dim != dims:
                    raise ValueError(
                        f"layer dims do not chain: expected in_dim {dims}, got {layer}"
                    )
                dims = layer.out_dim
                saw_dense = True
            elif not isinstance(layer, (ReLU, Softplus)):
                raise ValueError(f"unknown layer kind {layer!r}")
        if not saw_dense:
            raise ValueError("architecture needs at least one Dense layer")
        if not isinstance(self.layers[-1], Dense):
            raise ValueError("final layer must be Dense (its out_dim is the class count)")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers if isinstance(l, Dense))


def mlp(input_dim: int, hidden: list[int], classes: int, activation: str = "relu") -> ModelArch:
    """Convenience constructor: Dense/activation stack ending in a Dense head."""
    act = {"relu": ReLU, "softplus": Softplus, "linear": None}.get(activation, "?")
    if act == "?":
        raise ValueError(f"unknown activation {activation!r}")
    layers = []
    dims = input_dim
    for h in hidden:
        layers.append(Dense(dims, h))
        if act is not None:
            layers.append(act())
        dims = h
    layers.append(Dense(dims, classes))
    return ModelArch(input_dim, tuple(layers))


def smoothed(arch: ModelArch, sharpness: float = 10.0) -> ModelArch:
    """Same architecture with every ReLU replaced by Softplus (for second-order tests)."""
    layers = tuple(
        Softplus(sharpness) if isinstance(l, ReLU) else l for l in arch.layers
    )
    return ModelArch(arch.input_dim, layers)


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y_true: int


@dataclass
class LabeledDataset:
    """Row-per-sample inputs in [0,1] with integer class labels."""

    x: np.ndarray  # (n, input_dim)
    y: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.x.shape[0]

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(self.x[i], int(self.y[i]))


@dataclass
class DualGrad:
    loss: float
    g_x: np.ndarray
    g_theta: np.ndarray


def init_params(arch: ModelArch, seed: int) -> np.ndarray:
    """Uniform +-sqrt(6/(in+out)) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in arch.layers:
        if not isinstance(layer, Dense):
            continue
        bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        w = rng.uniform(-bound, bound, size=(layer.out_dim, layer.in_dim))
        chunks.append(w.ravel())
        chunks.append(np.zeros(layer.out_dim))
    return np.concatenate(chunks)


def _unpack(arch: ModelArch, theta: np.ndarray):
    """Yield (W, b) views into the flat parameter vector, Dense layers in order."""
    if theta.shape != (arch.param_count,):
        raise ValueError(
            f"parameter vector has length {theta.shape}, arch needs {arch.param_count}"
        )
    pos = 0
    for layer in arch.layers:
        if not isinstance(layer, Dense):
            continue
        w = theta[pos:pos + layer.in_dim * layer.out_dim].reshape(layer.out_dim, layer.in_dim)
        pos += layer.in_dim * layer.out_dim
        b = theta[pos:pos + layer.out_dim]
        pos += layer.out_dim
        yield layer, w, b


def _softplus(z: np.ndarray, s: float) -> np.ndarray:
    # stable (1/s)*log(1+exp(s*z)) for large |s*z|
    sz = s * z
    return (np.maximum(sz, 0.0) + np.log1p(np.exp(-np.abs(sz)))) / s


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_pass(arch: ModelArch, theta: np.ndarray, x: np.ndarray):
    """Run the stack, caching (layer, input, pre-activation) for backprop."""
    if x.shape != (arch.input_dim,):
        raise ValueError(f"input has shape {x.shape}, arch expects ({arch.input_dim},)")
    denses = iter(_unpack(arch, theta))
    act = x
    tape = []
    for layer in arch.layers:
        if isinstance(layer, Dense):
            _, w, b = next(denses)
            tape.append((layer, act, w))
            act = w @ act + b
        else:
            tape.append((layer, act, None))
            if isinstance(layer, ReLU):
                act = np.maximum(act, 0.0)
            else:
                act = _softplus(act, layer.sharpness)
    return act, tape


def forward(arch: ModelArch, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Logits (length = class count). Softmax is applied only inside losses/metrics."""
    logits, _ = _forward_pass(arch, theta, x)
    return ensure_finite(logits, "forward")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.exp(shifted).sum())


def loss_ce(logits: np.ndarray, y_true: int) -> float:
    """Cross-entropy -log softmax(logits)[y_true], max-subtraction stabilized."""
    k = logits.shape[0]
    if not 0 <= y_true < k:
        raise ValueError(f"class index {y_true} out of range for {k} classes")
    return float(-log_softmax(logits)[y_true])


def kl_metric(logits_ref: np.ndarray, logits_adv: np.ndarray) -> float:
    """KL(softmax(ref) || softmax(adv)); 0 iff the two distributions match.

    Measures how far the attacked prediction drifted from the clean one.
    """
    if logits_ref.shape != logits_adv.shape:
        raise ValueError(f"logit shapes differ: {logits_ref.shape} vs {logits_adv.shape}")
    p = softmax(logits_ref)
    diff = log_softmax(logits_ref) - log_softmax(logits_adv)
    return max(float(np.dot(p, diff)), 0.0)


def _backward_pass(arch, theta, sample: LabeledSample, need_theta: bool) -> DualGrad:
    logits, tape = _forward_pass(arch, theta, sample.x)
    loss = loss_ce(logits, sample.y_true)
    delta = softmax(logits)
    delta[sample.y_true] -= 1.0
    g_theta = np.zeros(arch.param_count) if need_theta else None
    pos = arch.param_count
    for layer, inp, w in reversed(tape):
        if isinstance(layer, Dense):
            if need_theta:
                pos -= layer.out_dim
                g_theta[pos:pos + layer.out_dim] = delta
                pos -= layer.in_dim * layer.out_dim
                g_theta[pos:pos + layer.in_dim * layer.out_dim] = np.outer(delta, inp).ravel()
            delta = w.T @ delta
        elif isinstance(layer, ReLU):
            delta = delta * (inp > 0)
        else:
            delta = delta * _sigmoid(layer.sharpness * inp)
    g_x = ensure_finite(delta, "backward g_x")
    if need_theta:
        ensure_finite(g_theta, "backward g_theta")
    return DualGrad(loss, g_x, g_theta)


def backward_dual(arch: ModelArch, theta: np.ndarray, sample: LabeledSample) -> DualGrad:
    """Analytic dL/dx and dL/dtheta of the cross-entropy loss in one sweep."""
    return _backward_pass(arch, theta, sample, need_theta=True)


def input_gradient(arch: ModelArch, theta: np.ndarray, sample: LabeledSample) -> np.ndarray:
    """dL/dx only; cheaper than backward_dual when dL/dtheta is not needed."""
    return _backward_pass(arch, theta, sample, need_theta=False).g_x


def perturb_params(theta: np.ndarray, direction: np.ndarray, scale: float) -> np.ndarray:
    """Fresh vector theta + scale*direction; theta itself is never touched."""
    if theta.shape != direction.shape:
        raise ValueError(f"length mismatch: {theta.shape} vs {direction.shape}")
    return theta + scale * direction


def accuracy(arch: ModelArch, theta: np.ndarray, dataset: LabeledDataset) -> float:
    correct = 0
    for i in range(len(dataset)):
        logits = forward(arch, theta, dataset.x[i])
        correct += int(np.argmax(logits)) == int(dataset.y[i])
    return correct / len(dataset)


def train_sgd(arch: ModelArch, dataset: LabeledDataset, epochs: int, lr: float,
              seed: int) -> np.ndarray:
    """Plain single-sample SGD on cross-entropy; deterministic per seed."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    theta = init_params(arch, seed)
    rng = np.random.default_rng([seed, 1])
    for _ in range(epochs):
        for i in rng.permutation(len(dataset)):
            grads = backward_dual(arch, theta, dataset.sample(int(i)))
            theta = theta - lr * grads.g_theta
    return theta


@dataclass(frozen=True)
class Model:
    """A fixed victim: architecture plus its flat parameter vector."""

    arch: ModelArch
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.theta.shape != (self.arch.param_count,):
            raise ValueError(
                f"theta length {self.theta.shape} does not match arch "
                f"({self.arch.param_count} params)"
            )

    def logits(self, x: np.ndarray) -> np.ndarray:
        return forward(self.arch, self.theta, x)

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.logits(x)))


def arch_to_json(arch: ModelArch) -> dict:
    layers = []
    for layer in arch.layers:
        if isinstance(layer, Dense):
            layers.append({"kind": "dense", "in": layer.in_dim, "out": layer.out_dim})
        elif isinstance(layer, ReLU):
            layers.append({"kind": "relu"})
        else:
            layers.append({"kind": "softplus", "sharpness": layer.sharpness})
    return {"input_dim": arch.input_dim, "classes": arch.num_classes, "layers": layers}


def arch_from_json(doc: dict) -> ModelArch:
    layers = []
    for entry in doc["layers"]:
        kind = entry["kind"]
        if kind == "dense":
            layers.append(Dense(entry["in"], entry["out"]))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "softplus":
            layers.append(Softplus(entry.get("sharpness", 10.0)))
        else:
            raise ValueError(f"unknown layer kind {kind!r} in model file")
    return ModelArch(doc["input_dim"], tuple(layers))


def save_model(model: Model, path, seed: int | None = None, embed: bool = True) -> None:
    """Write the architecture manifest plus parameters (little-endian float64).

    Parameters are embedded base64 by default; embed=False writes them to a
    sibling `<name>.params.bin` referenced from the manifest.
    """
    path = Path(path)
    doc = arch_to_json(model.arch)
    doc["format"] = MODEL_FORMAT
    if seed is not None:
        doc["seed"] = seed
    raw = model.theta.astype("<f8").tobytes()
    if embed:
        doc["params_b64"] = base64.b64encode(raw).decode("ascii")
    else:
        bin_name = path.stem + ".params.bin"
        (path.parent / bin_name).write_bytes(raw)
        doc["params_file"] = bin_name
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path) -> Model:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    arch = arch_from_json(doc)
    if "params_b64" in doc:
        raw = base64.b64decode(doc["params_b64"])
    elif "params_file" in doc:
        raw = (path.parent / doc["params_file"]).read_bytes()
    else:
        raise ValueError(f"{path}: neither params_b64 nor params_file present")
    theta = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if theta.size != arch.param_count:
        raise ValueError(
            f"{path}: {theta.size} parameters on disk, arch needs {arch.param_count}"
        )
    return Model(arch, as_tensor(theta))


def model_file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
