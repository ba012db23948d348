"""Tracking network: pair encoder, ConvLSTM cell, SE(3) pose head.

The encoder consumes two RGB frames stacked on the channel axis and runs
nine strided conv layers with tanh activations, producing one feature map
per frame pair. A ConvLSTM turns the per-pair features into a tracked state
whose output feeds a pooled linear head that regresses the 6-DoF relative
pose (tx, ty, tz, phi_x, phi_y, phi_z) of the newer frame in the older
frame's coordinates.
"""

import json
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .votb import read_votb, write_votb

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_FORMAT = "memvo-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderLayer:
    out_channels: int
    kernel: int
    stride: int

    @property
    def padding(self):
        return self.kernel // 2


@dataclass(frozen=True)
class EncoderConfig:
    """Nine conv layers over a stacked frame pair."""

    height: int
    width: int
    layers: tuple
    in_channels: int = 6

    def __post_init__(self):
        if len(self.layers) != 9:
            raise ValueError("encoder takes exactly 9 layers, got %d" % len(self.layers))
        down = self.total_stride
        if self.height % down or self.width % down:
            raise ValueError("input %dx%d not divisible by total stride %d"
                             % (self.height, self.width, down))

    @property
    def total_stride(self):
        out = 1
        for layer in self.layers:
            out *= layer.stride
        return out

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    @property
    def out_extents(self):
        h, w = self.height, self.width
        for layer in self.layers:
            h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
            w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        return h, w

    def to_dict(self):
        return {
            "height": self.height,
            "width": self.width,
            "in_channels": self.in_channels,
            "layers": [[l.out_channels, l.kernel, l.stride] for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        layers = tuple(EncoderLayer(*row) for row in d["layers"])
        return cls(height=d["height"], width=d["width"], layers=layers,
                   in_channels=d.get("in_channels", 6))


def _layers(channels, kernels, strides):
    return tuple(EncoderLayer(c, k, s) for c, k, s in zip(channels, kernels, strides))


PRESETS = {
    # small enough to train and finite-difference on a laptop
    "desk": EncoderConfig(
        height=64, width=64,
        layers=_layers((8, 8, 16, 16, 32, 32, 64, 64, 64),
                       (7, 5, 3, 3, 3, 3, 3, 3, 3),
                       (2, 2, 2, 1, 2, 1, 1, 1, 1))),
    # full-size channel widths; 1280x384 frames map to a 1024 x 6 x 20 state
    "kitti-shape": EncoderConfig(
        height=384, width=1280,
        layers=_layers((64, 128, 256, 256, 512, 512, 512, 512, 1024),
                       (7, 5, 5, 3, 3, 3, 3, 3, 3),
                       (2, 2, 2, 1, 2, 1, 2, 1, 2))),
    # for exhaustive gradient sweeps in tests
    "tiny": EncoderConfig(
        height=32, width=32,
        layers=_layers((2, 2, 2, 2, 4, 4, 4, 4, 4),
                       (3, 3, 3, 3, 3, 3, 3, 3, 3),
                       (2, 2, 2, 1, 2, 1, 1, 1, 1))),
}

_GATES = ("i", "f", "o", "g")


def glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class VONet:
    """Parameter container plus the forward passes that use it.

    The tracking and refining ConvLSTMs share spatial extents and channel
    count with the encoder output; the attention in the refining stage
    compares those tensors directly, so the equality is enforced here.
    """

    def __init__(self, preset="desk", seed=0, config=None):
        if config is None:
            if preset not in PRESETS:
                raise ValueError("unknown preset %r (have %s)" % (preset, sorted(PRESETS)))
            config = PRESETS[preset]
        self.preset = preset
        self.config = config
        self.seed = int(seed)
        self.hidden = config.out_channels
        self.extents = config.out_extents
        self.params = OrderedDict()
        self._init_params(np.random.default_rng(self.seed))

    def _add(self, name, data):
        self.params[name] = T.Tensor(data, requires_grad=True)

    def _init_params(self, rng):
        cfg = self.config
        c_in = cfg.in_channels
        for i, layer in enumerate(cfg.layers, start=1):
            k, o = layer.kernel, layer.out_channels
            fan_in, fan_out = c_in * k * k, o * k * k
            self._add("encoder.l%d.kernel" % i, glorot(rng, (o, c_in, k, k), fan_in, fan_out))
            self._add("encoder.l%d.bias" % i, np.zeros(o))
            c_in = o
        h = self.hidden
        for stage in ("track", "refine"):
            for gate in _GATES:
                self._add("%s.%s.wx" % (stage, gate), glorot(rng, (h, h, 3, 3), h * 9, h * 9))
                self._add("%s.%s.wh" % (stage, gate), glorot(rng, (h, h, 3, 3), h * 9, h * 9))
                self._add("%s.%s.bias" % (stage, gate), np.zeros(h))
        self._add("fuse.conv1.kernel", glorot(rng, (h, 2 * h, 3, 3), 2 * h * 9, h * 9))
        self._add("fuse.conv1.bias", np.zeros(h))
        self._add("fuse.conv2.kernel", glorot(rng, (h, h, 3, 3), h * 9, h * 9))
        self._add("fuse.conv2.bias", np.zeros(h))
        for head in ("track", "refine"):
            self._add("head.%s.weight" % head, glorot(rng, (6, h), h, 6))
            self._add("head.%s.bias" % head, np.zeros(6))

    def param_tensors(self):
        return list(self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def zero_state(self):
        c, (h, w) = self.hidden, self.extents
        return T.Tensor(np.zeros((c, h, w))), T.Tensor(np.zeros((c, h, w)))

    def _check_frame(self, frame):
        want = (3, self.config.height, self.config.width)
        if frame.data.shape != want:
            raise ValueError("frame shape %s, preset wants %s" % (frame.data.shape, want))
        return frame

    def encode_pair(self, prev_frame, frame):
        """Two (3,H,W) frames -> one (C,h,w) feature map."""
        prev_frame = self._check_frame(T._as_tensor(prev_frame))
        frame = self._check_frame(T._as_tensor(frame))
        x = T.concat_channels([prev_frame, frame])
        for i, layer in enumerate(self.config.layers, start=1):
            x = T.conv2d(x, self.params["encoder.l%d.kernel" % i],
                         self.params["encoder.l%d.bias" % i],
                         stride=layer.stride, padding=layer.padding)
            x = T.tanh(x)
        return x

    def _lstm_step(self, stage, x, h, c):
        def gate(name, f):
            z = T.add(T.conv2d(x, self.params["%s.%s.wx" % (stage, name)],
                               self.params["%s.%s.bias" % (stage, name)], padding=1),
                      T.conv2d(h, self.params["%s.%s.wh" % (stage, name)], padding=1))
            return f(z)

        i = gate("i", T.sigmoid)
        f = gate("f", T.sigmoid)
        o = gate("o", T.sigmoid)
        g = gate("g", T.tanh)
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def track_step(self, x, h, c):
        """One ConvLSTM update; the output equals the new hidden state."""
        h_new, c_new = self._lstm_step("track", x, h, c)
        return h_new, h_new, c_new

    def refine_step(self, x, h, c):
        h_new, c_new = self._lstm_step("refine", x, h, c)
        return h_new, h_new, c_new

    def pose_head(self, which, out_map):
        """Pooled linear readout of a (C,h,w) state to a 6-vector."""
        pooled = T.global_avg_pool(out_map)
        return T.linear(self.params["head.%s.weight" % which], pooled,
                        self.params["head.%s.bias" % which])

    def fuse(self, guided_mem, guided_obs):
        """Concat the two guided maps and mix them with two 3x3 convs."""
        x = T.concat_channels([guided_mem, guided_obs])
        x = T.tanh(T.conv2d(x, self.params["fuse.conv1.kernel"],
                            self.params["fuse.conv1.bias"], padding=1))
        return T.conv2d(x, self.params["fuse.conv2.kernel"],
                        self.params["fuse.conv2.bias"], padding=1)

    def track_sequence(self, frames):
        """Run the tracking pass over T >= 2 frames.

        Returns a TrackResult with, per step t = 1..T-1: the encoded pair
        features, the ConvLSTM output map, and the relative pose 6-vector
        (still a graph Tensor; .rel_poses() converts to Pose6DoF).
        """
        frames = [T._as_tensor(f) for f in frames]
        if len(frames) < 2:
            raise ValueError("track_sequence needs at least 2 frames")
        h, c = self.zero_state()
        feats, outs, rels = [], [], []
        for t in range(1, len(frames)):
            x = self.encode_pair(frames[t - 1], frames[t])
            out, h, c = self.track_step(x, h, c)
            feats.append(x)
            outs.append(out)
            rels.append(self.pose_head("track", out))
        return TrackResult(feats=feats, outs=outs, rels=rels)


class TrackResult:
    def __init__(self, feats, outs, rels):
        self.feats = feats
        self.outs = outs
        self.rels = rels

    def rel_poses(self):
        from .geometry import Pose6DoF
        return [Pose6DoF.from_vector(r.data) for r in self.rels]


def save_checkpoint(model, dirpath):
    """Write one VOTB blob per parameter plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    entries = {}
    for name, p in model.params.items():
        fname = name + ".votb"
        write_votb(os.path.join(dirpath, fname), p.data)
        entries[name] = fname
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": {
            "preset": model.preset,
            "seed": model.seed,
            "config": model.config.to_dict(),
        },
        "params": entries,
    }
    with open(os.path.join(dirpath, CHECKPOINT_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(dirpath):
    """Rebuild a VONet from save_checkpoint output; loads are bit exact."""
    mpath = os.path.join(dirpath, CHECKPOINT_MANIFEST)
    if not os.path.isfile(mpath):
        raise ValueError("%s: no checkpoint manifest" % dirpath)
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("%s: not a checkpoint manifest" % mpath)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError("%s: unsupported checkpoint version %r" % (mpath, manifest.get("version")))
    info = manifest["model"]
    config = EncoderConfig.from_dict(info["config"])
    model = VONet(preset=info.get("preset", "custom"), seed=info.get("seed", 0), config=config)
    entries = manifest["params"]
    missing = set(model.params) - set(entries)
    extra = set(entries) - set(model.params)
    if missing or extra:
        raise ValueError("checkpoint parameter set mismatch (missing %s, extra %s)"
                         % (sorted(missing), sorted(extra)))
    for name, fname in entries.items():
        data = read_votb(os.path.join(dirpath, fname))
        if data.shape != model.params[name].data.shape:
            raise ValueError("parameter %s has shape %s, model wants %s"
                             % (name, data.shape, model.params[name].data.shape))
        model.params[name].data = data
    return model
