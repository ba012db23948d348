"""Attention-guided refinement of tracked poses into absolute poses.

The previous refined output steers two attentions over the memory buffer:
a temporal softmax over whole slots and, inside each slot, a per-channel
recalibration. The guided memory summary and the recalibrated current
features are fused by two convs and fed to a second ConvLSTM whose head
regresses the absolute pose of frame t in frame 0 coordinates.
"""

import numpy as np

from . import tensor as T


def temporal_weights(guidance, slots):
    """Softmax over cosine(guidance, slot state); uniform for zero guidance."""
    if not slots:
        raise ValueError("temporal_weights needs at least one slot")
    scores = T.stack([T.cosine_similarity(guidance, s.state) for s in slots])
    return T.softmax(scores)


def spatial_weights(guidance, state):
    """Per-channel weights, mean one: C * softmax(channel cosines).

    All-zero guidance gives exactly all ones, so an unguided first step
    passes slot contents through unchanged.
    """
    c = state.data.shape[0]
    return T.mul(T.softmax(T.channel_cosine(guidance, state)), float(c))


def recalibrate(guidance, state):
    """Scale each channel of state by its guidance-derived weight."""
    return T.scale_channels(state, spatial_weights(guidance, state))


def guided_memory(guidance, slots):
    """Aggregate the buffer into one map: sum_i alpha_i * recalibrated(m_i).

    alpha comes from the raw slot states; the per-channel recalibration
    happens inside each slot before the weighted sum.
    """
    alpha = temporal_weights(guidance, slots)
    total = None
    for i, slot in enumerate(slots):
        term = T.mul(recalibrate(guidance, slot.state), alpha[i])
        total = term if total is None else T.add(total, term)
    return total


def guided_observation(guidance, feat):
    """Recalibrate the current encoded features with the same guidance."""
    return recalibrate(guidance, feat)


def refine_sequence(model, feats, buffer_or_slots):
    """Run the refinement pass over tracked features.

    feats are the encoded pair features X_1..X_N from the tracking pass;
    the buffer holds the selected tracking states for the same window. Step
    t is guided by the refined output of step t-1 (zeros at the start).
    Returns (absolute pose tensors, refined output maps), one per step; the
    pose at step t is the pose of frame t in frame 0 coordinates.
    """
    slots = buffer_or_slots.snapshot() if hasattr(buffer_or_slots, "snapshot") else list(buffer_or_slots)
    if not slots:
        raise ValueError("refine_sequence needs a non-empty memory")
    h, c = model.zero_state()
    guidance = T.Tensor(np.zeros((model.hidden,) + model.extents))
    abs_poses, outs = [], []
    for feat in feats:
        mem = guided_memory(guidance, slots)
        obs = guided_observation(guidance, feat)
        fused = model.fuse(mem, obs)
        out, h, c = model.refine_step(fused, h, c)
        abs_poses.append(model.pose_head("refine", out))
        outs.append(out)
        guidance = out
    return abs_poses, outs
