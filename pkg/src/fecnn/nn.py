"""Small feed-forward CNN inference in float64, plus model and IDX file I/O.

Edge layers are convolutions or fully-connected layers; each may be followed
by a ReLU and a square max-pool. Convolution weights are stored flat in
(c_out, c_in, kernel row, kernel col) order, fully-connected weights in
(out, in) order. A fully-connected layer after a convolution sees the
feature map flattened channel-major.

Model file layout (all integers little-endian)::

    8 bytes   magic b"FECNNMDL"
    u32       format version (1)
    u32       header length L
    L bytes   UTF-8 JSON header: {"class_count", "input_shape": [H, W, C],
              "dtype": "<f4" | "<f8", "layers": [{"kind", "c_in", "c_out",
              "kernel", "stride", "feat", "activation", "pool",
              "n_weights", "n_bias"}, ...]}
    then per layer: n_weights values, n_bias values, in ``dtype``
"""

import gzip
import json
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MODEL_MAGIC = b"FECNNMDL"
MODEL_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

ASSET_DIR = Path(__file__).resolve().parent / "assets"
REFERENCE_MODEL = ASSET_DIR / "mnist_cnn_v1.fecnn"


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeLayer:
    kind: str  # "conv" or "fc"
    c_in: int
    c_out: int
    weights: np.ndarray
    bias: np.ndarray
    kernel: int = 1
    stride: int = 1
    feat: int = 1
    activation: str = "relu"
    pool: int = 1

    @property
    def n_weights(self):
        if self.kind == "conv":
            return self.c_out * self.c_in * self.kernel * self.kernel
        return self.c_out * self.c_in

    @property
    def out_feat(self):
        if self.kind == "fc":
            return 1
        return ((self.feat - self.kernel) // self.stride + 1) // self.pool


@dataclass(frozen=True)
class LayerMeta:
    c_in: int
    c_out: int
    kernel: int
    stride: int
    feat: int
    w_count: int

    def as_tuple(self):
        return (self.c_in, self.c_out, self.kernel, self.stride, self.feat, self.w_count)


@dataclass(frozen=True)
class NetworkModel:
    layers: tuple
    class_count: int
    input_shape: tuple  # (H, W, C)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    def validate(self):
        if not self.layers:
            raise ShapeError("a model needs at least one edge layer")
        h, w, c = self.input_shape
        if h != w:
            raise ShapeError("only square inputs are supported")
        feat, ch, flat = h, c, False
        for i, layer in enumerate(self.layers):
            if layer.weights.size != layer.n_weights:
                raise ShapeError(f"layer {i}: {layer.weights.size} weights, expected {layer.n_weights}")
            if layer.bias.size != layer.c_out:
                raise ShapeError(f"layer {i}: bias length {layer.bias.size} != c_out {layer.c_out}")
            if layer.kind == "conv":
                if flat:
                    raise ShapeError(f"layer {i}: convolution after a fully-connected layer")
                if layer.c_in != ch or layer.feat != feat or layer.kernel > feat:
                    raise ShapeError(f"layer {i}: geometry does not match incoming {ch}x{feat}x{feat}")
                feat, ch = layer.out_feat, layer.c_out
            elif layer.kind == "fc":
                expected = ch if flat else ch * feat * feat
                if layer.c_in != expected:
                    raise ShapeError(f"layer {i}: fc expects {layer.c_in} inputs, receives {expected}")
                ch, flat, feat = layer.c_out, True, 1
            else:
                raise ShapeError(f"layer {i}: unknown kind {layer.kind!r}")
        if ch * (1 if flat else feat * feat) != self.class_count:
            raise ShapeError(f"final layer yields {ch} outputs for {self.class_count} classes")

    @property
    def layer_sizes(self):
        return [layer.n_weights for layer in self.layers]

    def weights(self):
        return [layer.weights for layer in self.layers]

    def with_weights(self, weights):
        if len(weights) != len(self.layers):
            raise ShapeError("weight list length differs from layer count")
        layers = [
            replace(layer, weights=np.asarray(w, dtype=np.float64).reshape(-1))
            for layer, w in zip(self.layers, weights)
        ]
        return NetworkModel(layers, self.class_count, self.input_shape)


def conv_layer(c_in, c_out, kernel, feat, weights=None, bias=None, stride=1, activation="relu", pool=1):
    w = np.zeros(c_out * c_in * kernel * kernel) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    b = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64).ravel()
    return EdgeLayer("conv", c_in, c_out, w, b, kernel, stride, feat, activation, pool)


def fc_layer(c_in, c_out, weights=None, bias=None, activation="relu"):
    w = np.zeros(c_out * c_in) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    b = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64).ravel()
    return EdgeLayer("fc", c_in, c_out, w, b, 1, 1, 1, activation, 1)


# ----------------------------------------------------------------- forward


def _patches(x, k, s):
    """(B, H, W, C) -> (B*oh*ow, C*k*k) in (c, kr, kc) order."""
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    b, oh, ow = win.shape[:3]
    return np.ascontiguousarray(win).reshape(b * oh * ow, -1), oh, ow


def _prepare(images, model):
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    h, w, c = model.input_shape
    if x.shape[1:] != (h, w, c):
        raise ShapeError(f"image shape {x.shape[1:]} does not match model input {(h, w, c)}")
    return x.astype(np.float64) / 255.0


def _maxpool(x, p):
    hh, ww = x.shape[1] // p, x.shape[2] // p
    out = x[:, 0 : hh * p : p, 0 : ww * p : p]
    for dy in range(p):
        for dx in range(p):
            if dy or dx:
                out = np.maximum(out, x[:, dy : hh * p : p, dx : ww * p : p])
    return out


def forward_batch(model, x, first_patches=None):
    """Scores for a float batch shaped (B, H, W, C); optional cached first-layer patches.

    Activations stay channel-last; max-pool runs before the ReLU, which gives
    the same result because both are monotone.
    """
    b = x.shape[0]
    flat = False
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            if i == 0 and first_patches is not None:
                cols, oh, ow = first_patches
            else:
                cols, oh, ow = _patches(x, layer.kernel, layer.stride)
            y = cols @ layer.weights.reshape(layer.c_out, -1).T
            y += layer.bias
            x = y.reshape(b, oh, ow, layer.c_out)
            if layer.pool > 1:
                x = _maxpool(x, layer.pool)
        else:
            if not flat:
                # channel-major flatten
                x = x.transpose(0, 3, 1, 2).reshape(b, -1)
                flat = True
            x = x @ layer.weights.reshape(layer.c_out, layer.c_in).T
            x += layer.bias
        if layer.activation == "relu":
            x = np.maximum(x, 0.0)
    if not flat:
        x = x.transpose(0, 3, 1, 2)
    return x.reshape(b, -1)


def forward(model, image):
    """Class scores for one H x W x C image (or a batch of them)."""
    x = _prepare(image, model)
    scores = forward_batch(model, x)
    return scores[0] if np.asarray(image).ndim == 3 else scores


def softmax(scores):
    z = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ----------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, H, W, C) uint8
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        if len(self.images) == 0 or len(self.images) != len(self.labels):
            raise ValueError("dataset must be nonempty with one label per image")

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        return Dataset(self.images[:n], self.labels[:n])


class Evaluator:
    """Accuracy on the first ``limit`` samples of a dataset, for many weight sets.

    Inputs and first-layer convolution patches are built once, since only the
    weights change between noisy trials.
    """

    def __init__(self, model, dataset, limit=None, chunk=250):
        limit = len(dataset) if limit is None else int(limit)
        if limit > len(dataset):
            raise ValueError(f"limit {limit} exceeds dataset size {len(dataset)}")
        self.model = model
        self.labels = np.asarray(dataset.labels[:limit])
        self.chunks = []
        first = model.layers[0]
        for start in range(0, limit, chunk):
            x = _prepare(dataset.images[start : min(limit, start + chunk)], model)
            patches = _patches(x, first.kernel, first.stride) if first.kind == "conv" else None
            self.chunks.append((x, patches))

    def scores(self, model=None):
        model = self.model if model is None else model
        return np.concatenate([forward_batch(model, x, p) for x, p in self.chunks])

    def accuracy(self, model=None):
        s = self.scores(model)
        s = np.where(np.isnan(s), -np.inf, s)
        # argmax takes the lowest index among ties
        return float(np.mean(np.argmax(s, axis=1) == self.labels))


def evaluate_accuracy(model, dataset, limit=None):
    return Evaluator(model, dataset, limit).accuracy()


def layer_metadata(model):
    out = []
    for layer in model.layers:
        if layer.kind == "fc":
            out.append(LayerMeta(layer.c_in, layer.c_out, 1, 1, 1, layer.n_weights))
        else:
            out.append(LayerMeta(layer.c_in, layer.c_out, layer.kernel, layer.stride, layer.feat, layer.n_weights))
    return out


# ----------------------------------------------------------------- IDX


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path):
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    dtype = _IDX_DTYPES.get(data[2])
    if dtype is None:
        raise ValueError(f"{path}: unknown IDX type code 0x{data[2]:02x}")
    ndim = data[3]
    dims = struct.unpack(">" + "I" * ndim, data[4 : 4 + 4 * ndim])
    body = data[4 + 4 * ndim :]
    count = int(np.prod(dims)) if dims else 1
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size {len(body)} does not match dims {dims}")
    magic = struct.unpack(">I", data[:4])[0]
    return magic, np.frombuffer(body, dtype=dtype).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    code = {np.dtype("u1"): 0x08, np.dtype("i1"): 0x09}.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ValueError("only 8-bit IDX payloads are written")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(">" + "I" * array.ndim, *array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_idx_dataset(images_path, labels_path):
    magic, images = read_idx(images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    magic, labels = read_idx(labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if images.ndim == 3:
        images = images[..., None]
    return Dataset(np.asarray(images, dtype=np.uint8), np.asarray(labels, dtype=np.int64))


_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_dir():
    """Dataset directory: ``$FECNN_DATA_DIR`` if set, else the packaged assets."""
    env = os.environ.get("FECNN_DATA_DIR")
    return Path(env) if env else ASSET_DIR


def load_dataset(path=None, split="test"):
    """Load an MNIST-style split from a directory (plain or .gz IDX files)."""
    root = Path(path) if path is not None else data_dir()
    names = _SPLIT_FILES[split]
    found = []
    for name in names:
        for cand in (root / name, root / (name + ".gz")):
            if cand.exists():
                found.append(cand)
                break
        else:
            raise FileNotFoundError(f"{name}[.gz] not found in {root}")
    return load_idx_dataset(*found)


# ----------------------------------------------------------------- model files


def save_model(model, path, dtype="<f4"):
    dtype = np.dtype(dtype)
    layers = []
    for layer in model.layers:
        layers.append(
            {
                "kind": layer.kind,
                "c_in": layer.c_in,
                "c_out": layer.c_out,
                "kernel": layer.kernel,
                "stride": layer.stride,
                "feat": layer.feat,
                "activation": layer.activation,
                "pool": layer.pool,
                "n_weights": int(layer.weights.size),
                "n_bias": int(layer.bias.size),
            }
        )
    header = json.dumps(
        {
            "class_count": model.class_count,
            "input_shape": list(model.input_shape),
            "dtype": dtype.str,
            "layers": layers,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    body = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(header)), header]
    for layer in model.layers:
        body.append(np.asarray(layer.weights, dtype=dtype.newbyteorder("<")).tobytes())
        body.append(np.asarray(layer.bias, dtype=dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(body))


def load_model(path=None):
    data = Path(path or REFERENCE_MODEL).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad model magic")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    header = json.loads(data[16 : 16 + hlen])
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    pos = 16 + hlen
    layers = []
    for spec in header["layers"]:
        arrays = []
        for count in (spec["n_weights"], spec["n_bias"]):
            nbytes = count * dtype.itemsize
            arrays.append(np.frombuffer(data[pos : pos + nbytes], dtype=dtype).astype(np.float64))
            pos += nbytes
        layers.append(
            EdgeLayer(
                spec["kind"],
                spec["c_in"],
                spec["c_out"],
                arrays[0],
                arrays[1],
                spec["kernel"],
                spec["stride"],
                spec["feat"],
                spec["activation"],
                spec["pool"],
            )
        )
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return NetworkModel(layers, header["class_count"], header["input_shape"])
