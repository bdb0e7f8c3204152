"""PnP-Net: the plug-and-play ADMM iteration unrolled into trainable blocks.

Each block maps ``(V1, G1, V2, G2)`` from the previous block to new values
through six layers::

    A  = softmax_R( DCL_W1(X) + DCL_Q1(V1 - G1) )
    V1 = theta1 * C(V1_prev) + theta2 * (A + G1)      # C is a frozen denoiser
    G1 = G1 + theta3 * (A - V1)
    M  = X W2 + (G2 - V2) Q2
    V2 = relu(M + G2)
    G2 = G2 + theta4 * (M - V2)

``DCL`` is the dynamic convolution layer: parallel kernels of increasing odd
size whose entries are reweighted by an input-dependent attention canvas
(squeeze-and-excitation followed by a positional softmax over the kernels
that cover each canvas position).
"""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._errors import DivergenceError, FormatError, ParameterError
from .denoisers import DenoiserSpec, denoise_array
from .initialization import initialize
from .validation import check_hsi

logger = logging.getLogger(__name__)

DEFAULT_BETA_K = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class NetConfig:
    K: int = 5
    kernel_sizes: tuple = (1, 3, 5)
    q_kernel_sizes: tuple = (1, 3, 5)
    lr: float = 5e-4
    beta_k: tuple = None
    epochs: int = 1000
    alpha: float = 0.1
    beta: float = 0.1
    theta_init: tuple = (0.5, 0.5, 0.1, 0.1)
    attention_scale: float = 0.01
    patience: int = 100
    min_improvement: float = 1e-8
    divergence_factor: float = 10.0
    denoiser: DenoiserSpec = field(default_factory=lambda: DenoiserSpec("gaussian", sigma=1.0))
    projection: str = "softmax"
    seed: int = 0

    @property
    def L(self):
        return len(self.kernel_sizes)

    @property
    def P(self):
        return len(self.q_kernel_sizes)

    def weights(self):
        if self.beta_k is None:
            if self.K == len(DEFAULT_BETA_K):
                return DEFAULT_BETA_K
            return tuple(10.0 ** -(self.K - 1 - k) for k in range(self.K))
        return tuple(self.beta_k)

    def validate(self):
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if len(self.weights()) != self.K:
            raise ParameterError(f"beta_k needs {self.K} entries, got {len(self.weights())}")
        for sizes in (self.kernel_sizes, self.q_kernel_sizes):
            if not sizes or any(k % 2 == 0 or k < 1 for k in sizes) or list(sizes) != sorted(set(sizes)):
                raise ParameterError(f"kernel sizes must be odd and strictly ascending: {sizes}")
        if self.projection not in ("softmax", "none"):
            raise ParameterError("projection must be 'softmax' or 'none'")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if isinstance(d.get("denoiser"), dict):
            d["denoiser"] = DenoiserSpec.from_dict(d["denoiser"])
        for key in ("kernel_sizes", "q_kernel_sizes", "beta_k", "theta_init"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown network fields {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self):
        d = asdict(self)
        for key in ("kernel_sizes", "q_kernel_sizes", "beta_k", "theta_init"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


# -- parameters ---------------------------------------------------------------

@dataclass
class DclParams:
    """Kernels and attention weights of one dynamic convolution layer.

    ``kernels[l]`` has shape ``(C_out, C_in, k_l, k_l)``. The attention
    module is GAP -> fc1 -> ReLU -> fc2 -> one head per branch producing the
    ``k_l * k_l`` logits of that branch. Leaves may be arrays or graph nodes.
    """

    kernels: list
    fc1_w: object
    fc1_b: object
    fc2_w: object
    fc2_b: object
    head_w: list
    head_b: list

    @property
    def sizes(self):
        return tuple(k.shape[-1] for k in self.kernels)

    @property
    def max_size(self):
        return max(self.sizes)

    def named(self, prefix):
        for i, k in enumerate(self.kernels):
            yield f"{prefix}.kernel{i}", k
        yield f"{prefix}.fc1_w", self.fc1_w
        yield f"{prefix}.fc1_b", self.fc1_b
        yield f"{prefix}.fc2_w", self.fc2_w
        yield f"{prefix}.fc2_b", self.fc2_b
        for i, (w, b) in enumerate(zip(self.head_w, self.head_b)):
            yield f"{prefix}.head{i}_w", w
            yield f"{prefix}.head{i}_b", b

    def map(self, fn):
        """Apply ``fn`` to every leaf, visiting them in :meth:`named` order."""
        kernels = [fn(k) for k in self.kernels]
        fc = [fn(a) for a in (self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b)]
        heads = [(fn(w), fn(b)) for w, b in zip(self.head_w, self.head_b)]
        return DclParams(kernels, *fc, head_w=[w for w, _ in heads], head_b=[b for _, b in heads])


@dataclass
class BlockParams:
    W1: DclParams
    Q1: DclParams
    theta1: object
    theta2: object
    W2: object
    Q2: object
    theta3: object
    theta4: object

    def named(self, prefix):
        yield from self.W1.named(f"{prefix}.W1")
        yield from self.Q1.named(f"{prefix}.Q1")
        for name in ("theta1", "theta2", "W2", "Q2", "theta3", "theta4"):
            yield f"{prefix}.{name}", getattr(self, name)

    def map(self, fn):
        return BlockParams(
            W1=self.W1.map(fn), Q1=self.Q1.map(fn),
            **{n: fn(getattr(self, n)) for n in
               ("theta1", "theta2", "W2", "Q2", "theta3", "theta4")})


def named_arrays(params):
    for k, block in enumerate(params):
        yield from block.named(str(k))


def hidden_width(c_in):
    return max(4, c_in // 4)


def init_dcl(c_in, c_out, sizes, rng, scale):
    hid = hidden_width(c_in)
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    return DclParams(
        kernels=[np.zeros((c_out, c_in, k, k)) for k in sizes],
        fc1_w=u(hid, c_in), fc1_b=np.zeros(hid),
        fc2_w=u(hid, hid), fc2_b=np.zeros(hid),
        head_w=[u(k * k, hid) for k in sizes], head_b=[np.zeros(k * k) for k in sizes])


def closed_form_block(M, A, alpha, beta, theta, config, rng):
    """Block whose linear maps reproduce one ADMM sweep at ``(M, A)``.

    The 1x1 kernels hold ``(M^T M + alpha I)^-1 M^T`` and
    ``alpha (M^T M + alpha I)^-1``; ``W2 = A^T (A A^T + beta I)^-1`` and
    ``Q2 = -beta (A A^T + beta I)^-1`` (the sign pairs with the
    ``(G2 - V2)`` ordering of the endmember layer).
    """
    B, R = M.shape
    if 1 not in config.kernel_sizes or 1 not in config.q_kernel_sizes:
        raise ParameterError("closed-form initialization needs a 1x1 branch")
    lhs = np.linalg.inv(M.T @ M + alpha * np.eye(R))
    W1 = init_dcl(B, R, config.kernel_sizes, rng, config.attention_scale)
    Q1 = init_dcl(R, R, config.q_kernel_sizes, rng, config.attention_scale)
    W1.kernels[config.kernel_sizes.index(1)][:, :, 0, 0] = lhs @ M.T
    Q1.kernels[config.q_kernel_sizes.index(1)][:, :, 0, 0] = alpha * lhs
    gram = np.linalg.inv(A @ A.T + beta * np.eye(R))
    t1, t2, t3, t4 = (np.array(float(t)) for t in theta)
    return BlockParams(W1=W1, Q1=Q1, theta1=t1, theta2=t2, W2=A.T @ gram,
                       Q2=-beta * gram, theta3=t3, theta4=t4)


def init_params(X, init, config):
    """Initial parameters of all ``K`` blocks from a VCA/FCLS initialization."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    M0 = np.asarray(init.endmembers.data)
    A0 = np.asarray(init.abundances.data)
    if M0.shape[0] != np.shape(X)[0] or A0.shape[1] != np.shape(X)[1]:
        raise ParameterError("initialization does not match X")
    return [closed_form_block(M0, A0, config.alpha, config.beta, config.theta_init, config, rng)
            for _ in range(config.K)]


def saturate_attention(dcl, branch, logit=50.0):
    """Force the attention of ``dcl`` onto one branch (test hook).

    Heads become constants: ``+logit`` on ``branch`` and ``-logit`` elsewhere,
    so the positional softmax is one-hot wherever ``branch`` is live.
    """
    for l in range(len(dcl.kernels)):
        dcl.head_w[l] = np.zeros_like(dcl.head_w[l])
        dcl.head_b[l] = np.full_like(dcl.head_b[l], logit if l == branch else -logit)
    return dcl


# -- layers -------------------------------------------------------------------

def live_mask(sizes):
    """``(L, S, S)`` availability of each branch on the max-size canvas."""
    S = max(sizes)
    mask = np.zeros((len(sizes), S, S), dtype=bool)
    for l, k in enumerate(sizes):
        off = (S - k) // 2
        mask[l, off:off + k, off:off + k] = True
    return mask


def attention(x, p):
    """Attention canvases ``T`` of shape ``(L, S, S)`` computed from input ``x``."""
    sizes, S = p.sizes, p.max_size
    g = ad.global_avg_pool(x)
    h = ad.relu(ad.linear(g, p.fc1_w, p.fc1_b))
    z = ad.linear(h, p.fc2_w, p.fc2_b)
    canvases = []
    for k, w, b in zip(sizes, p.head_w, p.head_b):
        logits = ad.reshape(ad.linear(z, w, b), (1, k, k))
        canvases.append(ad.zero_pad_center(logits, S))
    return ad.softmaxpro(ad.concat(canvases, axis=0), live_mask(sizes))


def dcl_kernel(x, p):
    """Effective kernel ``sum_l pad(T_l (.) K_l)`` of shape ``(C_out, C_in, S, S)``."""
    T = attention(x, p)
    S = p.max_size
    out = None
    for l, K in enumerate(p.kernels):
        term = ad.mul(ad.take(T, l), ad.zero_pad_center(K, S))
        out = term if out is None else ad.add(out, term)
    return out


def dcl_forward(x, p, cols=None):
    return ad.conv2d(x, dcl_kernel(x, p), cols=cols)


def layer_V1(A, G1, V1_prev, theta1, theta2, denoiser):
    denoised = ad.constant(denoise_array(V1_prev.value, denoiser))
    return ad.add(ad.mul(theta1, denoised), ad.mul(theta2, ad.add(A, G1)))


def layer_G(G, primal, aux, theta):
    return ad.add(G, ad.mul(theta, ad.sub(primal, aux)))


def layer_M(V2, G2, X, W2, Q2):
    return ad.add(ad.matmul(X, W2), ad.matmul(ad.sub(G2, V2), Q2))


def layer_V2(M, G2):
    return ad.relu(ad.add(M, G2))


@dataclass
class NetState:
    """Iterates entering a block: ``V1``, ``G1`` as ``(R, H, W)``; ``V2``, ``G2`` as ``(B, R)``."""

    V1: np.ndarray
    G1: np.ndarray
    V2: np.ndarray
    G2: np.ndarray

    @classmethod
    def from_init(cls, init):
        A0 = init.abundances.image()
        M0 = np.asarray(init.endmembers.data)
        return cls(V1=A0.copy(), G1=np.zeros_like(A0), V2=M0.copy(), G2=np.zeros_like(M0))


class PnPNet:
    """Forward pass over a fixed image ``X`` (``B x N`` with geometry ``shape``)."""

    def __init__(self, X, shape, config):
        self.config = config.validate()
        self.X = np.asarray(X, dtype=np.float64)
        self.shape = tuple(shape)
        B, N = self.X.shape
        if N != self.shape[0] * self.shape[1]:
            raise ParameterError("X does not match the image shape")
        self.cube = self.X.reshape((B,) + self.shape)
        self._cols = None

    @property
    def cols(self):
        if self._cols is None:
            self._cols = ad.im2col(self.cube, max(self.config.kernel_sizes))
        return self._cols

    def forward(self, params, state, requires_grad=False):
        """Run all blocks.

        Returns
        -------
        outputs : list of dict
            Per block: nodes ``A`` (R x N), ``M``, ``V1``, ``G1``, ``V2``, ``G2``
            and ``Xhat``.
        loss : Node
        """
        cfg = self.config
        if len(params) != cfg.K:
            raise ParameterError(f"expected {cfg.K} blocks, got {len(params)}")
        leaf = ad.parameter if requires_grad else ad.constant
        nodes = [blk.map(leaf) for blk in params]
        B, N = self.X.shape
        R = params[0].Q2.shape[0]
        H, W = self.shape
        x_img = ad.constant(self.cube)
        x_mat = ad.constant(self.X)

        kernels = ad.concat([dcl_kernel(x_img, p.W1) for p in nodes], axis=0)
        x_branch = ad.conv2d(x_img, kernels, cols=self.cols)

        V1, G1 = ad.constant(state.V1), ad.constant(state.G1)
        V2, G2 = ad.constant(state.V2), ad.constant(state.G2)
        outputs, loss = [], None
        for k, p in enumerate(nodes):
            logits = ad.add(ad.take(x_branch, k * R, (k + 1) * R),
                            dcl_forward(ad.sub(V1, G1), p.Q1))
            A = ad.channel_softmax(logits) if cfg.projection == "softmax" else logits
            V1_new = layer_V1(A, G1, V1, p.theta1, p.theta2, cfg.denoiser)
            G1 = layer_G(G1, A, V1_new, p.theta3)
            V1 = V1_new
            M = layer_M(V2, G2, x_mat, p.W2, p.Q2)
            V2_new = layer_V2(M, G2)
            G2 = layer_G(G2, M, V2_new, p.theta4)
            V2 = V2_new
            A_mat = ad.reshape(A, (R, N))
            Xhat = ad.matmul(M, A_mat)
            term = ad.scale(ad.mse(Xhat, x_mat), cfg.weights()[k] * B / 2.0)
            loss = term if loss is None else ad.add(loss, term)
            outputs.append(dict(A=A_mat, M=M, V1=V1, G1=G1, V2=V2, G2=G2, Xhat=Xhat))
        self._leaves = nodes
        return outputs, loss


def reconstruction_loss(X, Xhats, beta_k):
    """``1/(2N) sum_k beta_k ||X - Xhat_k||_F^2`` on plain arrays."""
    N = X.shape[1]
    return sum(b * float(np.sum((X - Xh) ** 2)) for b, Xh in zip(beta_k, Xhats)) / (2.0 * N)


class Adam:
    """First/second-moment gradient descent over a list of arrays, updated in place."""

    def __init__(self, arrays, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, scales=None):
        self.arrays = list(arrays)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.scales = [1.0] * len(self.arrays) if scales is None else list(scales)
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for a, g, m, v, s in zip(self.arrays, grads, self.m, self.v, self.scales):
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a -= s * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: list
    M: np.ndarray
    A: np.ndarray
    history: list
    outputs: list
    diverged: bool = False


def tensor_lr_scale(name, array, n_pixels):
    """Step-size multiplier that normalizes each tensor's step by its fan-in.

    A sign-like Adam step moves every entry by about ``lr``, so the change
    of the layer output grows with the number of summed terms. ``k x k``
    kernels get ``1/k^2`` (relative to the 1x1 branch) and ``W2``, which
    sums over all pixels, gets ``1/n_pixels``.
    """
    leaf = name.split(".", 1)[1]
    if leaf == "W2":
        return 1.0 / n_pixels
    if ".kernel" in name:
        return 1.0 / (array.shape[-1] * array.shape[-2])
    return 1.0


def _leaf_grads(net):
    # leaves that do not reach the loss (last-block duals) get zero gradient
    return [np.zeros_like(node.value) if node.grad is None else node.grad
            for blk in net._leaves for _, node in blk.named("")]


def train(X, config, init, shape=None, params=None, callback=None):
    """Blind training on the single image ``X`` (``B x N``).

    Returns a :class:`TrainResult` with the trained parameters and the final
    block's endmembers and abundances. Raises :class:`DivergenceError` when
    the loss exceeds ``divergence_factor`` times its initial value.
    """
    config = config.validate()
    if shape is None:
        shape = (init.abundances.height, init.abundances.width)
    net = PnPNet(X, shape, config)
    if params is None:
        params = init_params(X, init, config)
    state = NetState.from_init(init)
    named = list(named_arrays(params))
    opt = Adam([a for _, a in named], lr=config.lr,
               scales=[tensor_lr_scale(n, a, X.shape[1]) for n, a in named])
    history = []
    # reference floor relative to the all-zero output, so an exact initial fit
    # does not turn optimizer jitter into a divergence
    floor = 1e-6 * sum(config.weights()) * float(np.sum(np.square(X))) / (2 * X.shape[1])
    for epoch in range(config.epochs):
        _, loss = net.forward(params, state, requires_grad=True)
        value = float(loss.value)
        limit = config.divergence_factor * max(history[0], floor) if history else np.inf
        if not np.isfinite(value) or value > limit:
            raise DivergenceError(f"loss {value:.6g} at epoch {epoch} exceeds "
                                  f"{config.divergence_factor}x the initial loss", history)
        history.append(value)
        loss.backward()
        opt.step(_leaf_grads(net))
        if callback is not None:
            callback(epoch, value, params)
        if epoch >= config.patience and history[-config.patience - 1] - value < config.min_improvement:
            logger.debug("early stop at epoch %d", epoch)
            break
    outputs, _ = net.forward(params, state)
    last = outputs[-1]
    return TrainResult(params=params, M=last["M"].value.copy(), A=last["A"].value.copy(),
                       history=history, outputs=[{k: v.value for k, v in o.items()} for o in outputs])


def predict(X, params, config, init, shape):
    """Forward pass with fixed parameters; returns ``(M, A)`` of the last block."""
    outputs, _ = PnPNet(X, shape, config).forward(params, NetState.from_init(init))
    return outputs[-1]["M"].value, outputs[-1]["A"].value


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, params, config, state=None, extra=None):
    """JSON header line followed by raw float64 little-endian tensors in header order."""
    entries = list(named_arrays(params))
    if state is not None:
        entries += [(f"state.{n}", getattr(state, n)) for n in ("V1", "G1", "V2", "G2")]
    header = {
        "format": "pnpnet-checkpoint/1",
        "dtype": "f64le",
        "config": config.to_dict(),
        "seed": config.seed,
        "K": len(params),
        "kernel_sizes": [list(blk.W1.sizes) for blk in params][:1],
        "tensors": [{"name": n, "shape": list(np.shape(a))} for n, a in entries],
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for _, a in entries:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, config, state_or_None, header)``."""
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
        specs = header["tensors"]
        config = NetConfig.from_dict(header["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from None
    expected = sum(8 * int(np.prod(s["shape"])) for s in specs)
    if expected != len(payload):
        raise FormatError(f"{path}: header declares {expected} bytes, payload has {len(payload)}")
    tensors, offset = {}, 0
    for s in specs:
        n = int(np.prod(s["shape"]))
        tensors[s["name"]] = np.frombuffer(payload, "<f8", n, offset).reshape(s["shape"]).copy()
        offset += 8 * n

    def dcl(prefix, count):
        return DclParams(
            kernels=[tensors[f"{prefix}.kernel{i}"] for i in range(count)],
            fc1_w=tensors[f"{prefix}.fc1_w"], fc1_b=tensors[f"{prefix}.fc1_b"],
            fc2_w=tensors[f"{prefix}.fc2_w"], fc2_b=tensors[f"{prefix}.fc2_b"],
            head_w=[tensors[f"{prefix}.head{i}_w"] for i in range(count)],
            head_b=[tensors[f"{prefix}.head{i}_b"] for i in range(count)])

    params = []
    for k in range(config.K):
        params.append(BlockParams(
            W1=dcl(f"{k}.W1", config.L), Q1=dcl(f"{k}.Q1", config.P),
            **{n: tensors[f"{k}.{n}"] for n in
               ("theta1", "theta2", "W2", "Q2", "theta3", "theta4")}))
    state = None
    if "state.V1" in tensors:
        state = NetState(**{n: tensors[f"state.{n}"] for n in ("V1", "G1", "V2", "G2")})
    return params, config, state, header


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(history, start=1):
            writer.writerow([i, repr(v)])


class PnPNetUnmixer(TransformerMixin, BaseEstimator):
    """Blind unmixing by training an unrolled PnP-ADMM network on the input image.

    Parameters mirror :class:`NetConfig`. Inputs are ``(n_pixels, n_bands)``
    with ``image_shape`` given, or ``(height, width, n_bands)``.

    Attributes
    ----------
    endmembers_ : ndarray of shape (n_bands, n_endmembers)
    abundances_ : ndarray of shape (n_endmembers, n_pixels)
    params_ : list of BlockParams
    history_ : list of float
        Training loss per epoch.
    """

    def __init__(self, n_endmembers=4, image_shape=None, n_blocks=5, kernel_sizes=(1, 3, 5),
                 lr=5e-4, beta_k=None, epochs=1000, alpha=0.1, beta=0.1, denoiser=None,
                 random_state=0):
        self.n_endmembers = n_endmembers
        self.image_shape = image_shape
        self.n_blocks = n_blocks
        self.kernel_sizes = kernel_sizes
        self.lr = lr
        self.beta_k = beta_k
        self.epochs = epochs
        self.alpha = alpha
        self.beta = beta
        self.denoiser = denoiser
        self.random_state = random_state

    def _config(self):
        den = self.denoiser
        if den is None:
            den = DenoiserSpec("gaussian", sigma=1.0)
        elif isinstance(den, dict):
            den = DenoiserSpec.from_dict(den)
        sizes = tuple(self.kernel_sizes)
        return NetConfig(K=self.n_blocks, kernel_sizes=sizes, q_kernel_sizes=sizes, lr=self.lr,
                         beta_k=None if self.beta_k is None else tuple(self.beta_k),
                         epochs=self.epochs, alpha=self.alpha, beta=self.beta,
                         denoiser=den, seed=self.random_state).validate()

    def fit(self, X, y=None, init=None):
        Xmat, shape = check_hsi(X, self.image_shape)
        if init is None:
            init = initialize(Xmat, self.n_endmembers, shape, seed=self.random_state)
        config = self._config()
        result = train(Xmat, config, init, shape)
        self.config_ = config
        self.init_ = init
        self.params_ = result.params
        self.history_ = result.history
        self.endmembers_ = result.M
        self.abundances_ = result.A
        self.image_shape_ = shape
        return self

    def fit_transform(self, X, y=None, init=None):
        return self.fit(X, init=init).abundances_.T

    def transform(self, X):
        """Run the trained network on an image of the same size."""
        check_is_fitted(self, "params_")
        Xmat, shape = check_hsi(X, self.image_shape or self.image_shape_)
        if shape != self.image_shape_:
            raise ParameterError("the trained network is tied to the training image size")
        _, A = predict(Xmat, self.params_, self.config_, self.init_, shape)
        return A.T

    def inverse_transform(self, A):
        check_is_fitted(self, "endmembers_")
        return np.asarray(A) @ self.endmembers_.T
