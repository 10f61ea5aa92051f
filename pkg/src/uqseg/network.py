"""Small encoder-decoder evidence network.

Per-pixel class evidence comes out of a softplus head, so it is non-negative
by construction. The architecture is a desk-scale stand-in: conv 3x3 blocks,
2x2 max pooling down, nearest-neighbor upsampling with skip concatenation up.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"PRNW"


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    levels: int = 3
    base_width: int = 8
    in_channels: int = 1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.levels < 1 or self.base_width < 1:
            raise ValueError("levels and base_width must be positive")

    def divisor(self):
        return 2 ** (self.levels - 1)


class EvidenceNet:
    """Parameters live in a flat named list; forward builds a fresh graph."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self._names = []
        self._params = []
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6E65742D]))
        c = config
        widths = [c.base_width * (2**l) for l in range(c.levels)]
        ch = c.in_channels
        for l in range(c.levels):
            for j in range(2):
                self._add_conv(f"enc{l}_conv{j}", ch, widths[l], rng)
                ch = widths[l]
        for l in range(c.levels - 2, -1, -1):
            ch_in = ch + widths[l]
            for j in range(2):
                self._add_conv(f"dec{l}_conv{j}", ch_in if j == 0 else widths[l], widths[l], rng)
            ch = widths[l]
        self._add_conv("head", ch, c.num_classes, rng)

    def _add_conv(self, name, cin, cout, rng):
        # fan-in scaled uniform init, biases start at zero
        scale = 1.0 / np.sqrt(cin * 9.0)
        w = ad.Tensor(rng.uniform(-scale, scale, size=(cout, cin, 3, 3)), requires_grad=True)
        b = ad.Tensor(np.zeros(cout), requires_grad=True)
        self._names += [f"{name}_w", f"{name}_b"]
        self._params += [w, b]

    def parameters(self):
        return list(self._params)

    def parameter_names(self):
        return list(self._names)

    def _conv(self, name, x):
        i = self._names.index(f"{name}_w")
        return ad.conv3x3(x, self._params[i], self._params[i + 1])

    def forward(self, images):
        """images: (N, H, W) float array -> evidence Tensor (N, C, H, W)."""
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ValueError(f"expected (N, H, W) input, got shape {x.shape}")
        d = self.config.divisor()
        if x.shape[1] % d or x.shape[2] % d:
            raise ValueError(
                f"spatial dims {x.shape[1]}x{x.shape[2]} must be divisible by {d}"
            )
        t = ad.Tensor(x[:, None, :, :])
        skips = []
        for l in range(self.config.levels):
            if l > 0:
                t = ad.maxpool2(t)
            t = ad.relu(self._conv(f"enc{l}_conv0", t))
            t = ad.relu(self._conv(f"enc{l}_conv1", t))
            skips.append(t)
        for l in range(self.config.levels - 2, -1, -1):
            t = ad.concat([ad.upsample2(t), skips[l]], axis=1)
            t = ad.relu(self._conv(f"dec{l}_conv0", t))
            t = ad.relu(self._conv(f"dec{l}_conv1", t))
        return ad.softplus(self._conv("head", t))

    def state_arrays(self):
        return [p.data.copy() for p in self._params]

    def load_arrays(self, arrays):
        if len(arrays) != len(self._params):
            raise ValueError(
                f"checkpoint has {len(arrays)} tensors, network expects {len(self._params)}"
            )
        for p, a in zip(self._params, arrays):
            if p.data.shape != a.shape:
                raise ValueError(f"shape mismatch: {p.data.shape} vs {a.shape}")
            p.data = a.astype(np.float64).copy()

    @classmethod
    def from_arrays(cls, arrays):
        """Rebuild a network whose architecture is implied by checkpoint shapes."""
        count = len(arrays)
        if count % 8 != 6:
            raise ValueError(f"unexpected checkpoint tensor count {count}")
        levels = (count + 2) // 8
        base_width = arrays[0].shape[0]
        in_channels = arrays[0].shape[1]
        num_classes = arrays[-2].shape[0]
        net = cls(NetworkConfig(num_classes, levels, base_width, in_channels), seed=0)
        net.load_arrays(arrays)
        return net


def save_checkpoint(arrays, path):
    """magic | u32 count | per tensor (u32 rank, u32 dims..., f64 payload) | crc32."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", len(arrays))
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        blob += struct.pack("<I", a.ndim)
        for dim in a.shape:
            blob += struct.pack("<I", dim)
        blob += a.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ValueError("checkpoint CRC mismatch")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    arrays = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        a = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += 8 * size
        arrays.append(a.copy())
    if offset != len(blob) - 4:
        raise ValueError("checkpoint has trailing bytes")
    return arrays
