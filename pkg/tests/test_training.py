import numpy as np
import pytest

import memvo.tensor as T
from memvo.geometry import Pose6DoF, integrate_relative, pose_compose
from memvo.memory import MemoryPolicy
from memvo.net import VONet
from memvo.synthetic import SyntheticSpec, generate_dataset, generate_sequence
from memvo.training import (Adam, TrainConfig, TrainingDiverged, loss_global,
                            loss_local, loss_total, lr_at, run_window,
                            sliding_window_infer, train, window_ground_truth,
                            window_loss, write_loss_csv)


def vec(p=(0, 0, 0), phi=(0, 0, 0)):
    return T.Tensor(np.array(list(p) + list(phi), dtype=np.float64))


def zero_pose():
    return Pose6DoF(p=np.zeros(3), phi=np.zeros(3))


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert c.window_length == 11 and c.batch_size == 4
        assert c.base_lr == 1e-4 and c.decay_every == 60000
        assert c.k == 100.0 and c.memory_size == 11

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(window_length=1)
        with pytest.raises(ValueError):
            TrainConfig(base_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(iterations=0)
        with pytest.raises(ValueError):
            TrainConfig(preset="nope")

    def test_json_round_trip(self, tmp_path):
        c = TrainConfig(window_length=5, base_lr=3e-4, preset="tiny", seed=9)
        path = str(tmp_path / "cfg.json")
        c.to_json(path)
        assert TrainConfig.from_json(path) == c

    def test_unknown_field_rejected(self, tmp_path):
        path = str(tmp_path / "cfg.json")
        with open(path, "w") as fh:
            fh.write('{"window_length": 5, "warp_drive": true}')
        with pytest.raises(ValueError, match="warp_drive"):
            TrainConfig.from_json(path)

    def test_policy_mapping(self):
        c = TrainConfig(theta_rot=0.1, theta_trans=2.0, memory_size=3,
                        memory_require_both=True)
        p = c.policy()
        assert p == MemoryPolicy(theta_rot=0.1, theta_trans=2.0, max_slots=3,
                                 require_both=True)


class TestLrSchedule:
    def test_halving_boundaries(self):
        assert lr_at(0, 1e-4, 60000) == 1e-4
        assert lr_at(59999, 1e-4, 60000) == 1e-4
        assert lr_at(60000, 1e-4, 60000) == 0.5e-4
        assert lr_at(120000, 1e-4, 60000) == 0.25e-4

    def test_small_period(self):
        assert [lr_at(i, 8.0, 2) for i in range(6)] == [8, 8, 4, 4, 2, 2]


class TestLossLocal:
    def test_pred_equals_gt_is_zero(self):
        gt = [Pose6DoF(p=np.array([1.0, 2, 3]), phi=np.array([0.1, 0, 0]))]
        pred = [T.Tensor(gt[0].to_vector())]
        assert loss_local(pred, gt, k=100.0).data == 0.0

    def test_unit_translation_any_k(self):
        gt = [zero_pose()]
        for k in (0.0, 1.0, 100.0):
            out = loss_local([vec(p=(1, 0, 0))], gt, k=k)
            assert abs(out.data - 1.0) < 1e-15

    def test_hand_case_eleven_point_five(self):
        # two steps, translation error norms 1 and 2, rotation error norm 0.1
        # each, k=100: (1/2)*((1 + 100*0.1) + (2 + 100*0.1)) = 11.5
        pred = [vec(p=(1, 0, 0), phi=(0.1, 0, 0)),
                vec(p=(0, 2, 0), phi=(0, 0.1, 0))]
        gt = [zero_pose(), zero_pose()]
        out = loss_local(pred, gt, k=100.0)
        assert abs(out.data - 11.5) < 1e-12

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_local([vec()], [zero_pose(), zero_pose()], k=1.0)
        with pytest.raises(ValueError):
            loss_local([], [], k=1.0)

    def test_k_linearity(self):
        rng = np.random.default_rng(0)
        pred = [T.Tensor(rng.normal(size=6)) for _ in range(3)]
        gt = [Pose6DoF.from_vector(rng.normal(size=6) * 0.1) for _ in range(3)]
        at0 = loss_local(pred, gt, k=0.0).data
        slope = loss_local(pred, gt, k=1.0).data - at0
        for k in (0.5, 2.0, 7.25, 100.0):
            got = loss_local(pred, gt, k=k).data
            assert abs(got - (at0 + k * slope)) < 1e-12 * max(1.0, abs(got))


class TestLossGlobal:
    def test_pred_equals_gt_is_zero(self):
        gt = [Pose6DoF(p=np.array([0.5, 0, 0]), phi=np.zeros(3))] * 2
        pred = [T.Tensor(g.to_vector()) for g in gt]
        assert loss_global(pred, gt, k=100.0).data == 0.0

    def test_hand_case_inverse_index_weights(self):
        # errors e1, e2 with exact rotations weight as e1 + e2/2
        e1, e2 = 0.75, 0.5
        pred = [vec(p=(e1, 0, 0)), vec(p=(0, 0, e2))]
        gt = [zero_pose(), zero_pose()]
        out = loss_global(pred, gt, k=100.0)
        assert abs(out.data - (e1 + e2 / 2.0)) < 1e-12

    def test_four_frame_term_by_term(self):
        rng = np.random.default_rng(1)
        k = 37.5
        pred = [T.Tensor(rng.normal(size=6)) for _ in range(4)]
        gt = [Pose6DoF.from_vector(rng.normal(size=6) * 0.1) for _ in range(4)]
        expect = 0.0
        for i, (pr, g) in enumerate(zip(pred, gt), start=1):
            d = pr.data - g.to_vector()
            expect += (np.linalg.norm(d[:3]) + k * np.linalg.norm(d[3:])) / i
        out = loss_global(pred, gt, k=k)
        assert abs(out.data - expect) < 1e-12

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_global([vec()], [], k=1.0)


class TestLossTotal:
    def test_simple_sum(self):
        pred_r = [vec(p=(1.5, 0, 0))]
        pred_a = [vec(p=(0, 2.5, 0))]
        gt = [zero_pose()]
        out = loss_total(pred_r, gt, pred_a, gt, k=100.0)
        assert abs(out.data - 4.0) < 1e-12

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        x = T.Tensor(rng.normal(size=6), requires_grad=True)
        gt = [Pose6DoF.from_vector(rng.normal(size=6))]

        def f(_):
            return loss_total([x], gt, [T.mul(x, 2.0)], gt, k=3.0)

        assert T.finite_diff_check(f, x) < 1e-7


class TestAdam:
    def test_zero_grad_zero_decay_unchanged(self):
        p = T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        p.grad = np.zeros(3)
        opt = Adam({"p": p}, weight_decay=0.0)
        before = p.data.copy()
        opt.step(lr=0.1)
        assert np.array_equal(p.data, before)

    def test_none_grad_skipped_entirely(self):
        p = T.Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p}, weight_decay=0.5)
        opt.step(lr=0.1)
        assert p.data[0] == 1.0  # decay only applies to touched params

    def test_single_step_matches_hand_formula(self):
        g = np.array([2.0, -0.5])
        p = T.Tensor(np.array([1.0, 1.0]), requires_grad=True)
        p.grad = g.copy()
        opt = Adam({"p": p}, weight_decay=0.0)
        opt.step(lr=0.01)
        # bias correction cancels the (1-beta) factors on the first step
        expect = np.array([1.0, 1.0]) - 0.01 * g / (np.abs(g) + 1e-8)
        assert np.max(np.abs(p.data - expect)) < 1e-15

    def test_decay_applied_before_update(self):
        p = T.Tensor(np.array([10.0]), requires_grad=True)
        p.grad = np.zeros(1)
        opt = Adam({"p": p}, weight_decay=4e-4)
        opt.step(lr=0.5)
        assert p.data[0] == 10.0 - 0.5 * 4e-4 * 10.0

    def test_nonfinite_gradient_names_parameter(self):
        p = T.Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        opt = Adam({"encoder.l1.kernel": p})
        with pytest.raises(TrainingDiverged, match="encoder.l1.kernel"):
            opt.step(lr=0.1)

    def test_two_params_independent(self):
        a = T.Tensor(np.array([1.0]), requires_grad=True)
        b = T.Tensor(np.array([1.0]), requires_grad=True)
        a.grad = np.array([1.0])
        b.grad = np.array([-1.0])
        opt = Adam({"a": a, "b": b}, weight_decay=0.0)
        opt.step(lr=0.1)
        assert a.data[0] < 1.0 < b.data[0]


def tiny_dataset(n=2, frames=6, seed=0):
    spec = SyntheticSpec(frames=frames, height=32, width=32, max_shift=1.0,
                         max_yaw=0.05, seed=seed)
    return generate_dataset(n, spec, seed=seed)


def tiny_config(**kw):
    base = dict(window_length=4, batch_size=2, base_lr=1e-3, k=10.0,
                theta_rot=0.0, theta_trans=0.0, memory_size=4, seed=0,
                preset="tiny", iterations=3)
    base.update(kw)
    return TrainConfig(**base)


class TestWindowPipeline:
    def test_window_ground_truth_consistency(self):
        seq = generate_sequence(SyntheticSpec(frames=8, height=32, width=32, seed=3))
        gt_rels, gt_abs = window_ground_truth(seq.poses, start=2, length=5)
        assert len(gt_rels) == len(gt_abs) == 4
        # composing the relatives from identity must land on the anchored abs
        chain = integrate_relative(gt_rels)
        for got, want in zip(chain[1:], gt_abs):
            assert np.max(np.abs(got - want.to_matrix())) < 1e-9

    def test_run_window_shapes_and_memory(self):
        model = VONet(preset="tiny", seed=0)
        seq = generate_sequence(SyntheticSpec(frames=5, height=32, width=32, seed=4))
        res = run_window(model, seq.frames, MemoryPolicy(theta_rot=0.0, theta_trans=0.0,
                                                         max_slots=10))
        assert len(res.track.rels) == 4
        assert len(res.abs_tensors) == 4
        assert len(res.buffer) == 4
        assert len(res.refined_poses()) == 4

    def test_run_window_detach_flag(self):
        model = VONet(preset="tiny", seed=0)
        seq = generate_sequence(SyntheticSpec(frames=3, height=32, width=32, seed=5))
        policy = MemoryPolicy(theta_rot=0.0, theta_trans=0.0, max_slots=5)
        detached = run_window(model, seq.frames, policy, detach_memory=True)
        live = run_window(model, seq.frames, policy, detach_memory=False)
        assert all(not s.state.requires_grad for s in detached.buffer.snapshot())
        assert any(s.state.requires_grad for s in live.buffer.snapshot())

    def test_window_loss_finite_and_positive(self):
        model = VONet(preset="tiny", seed=1)
        seq = generate_sequence(SyntheticSpec(frames=6, height=32, width=32, seed=6))
        cfg = tiny_config()
        local, glob, _ = window_loss(model, seq, 0, cfg, cfg.policy())
        assert np.isfinite(local.data) and local.data > 0
        assert np.isfinite(glob.data) and glob.data > 0


class TestTrain:
    def test_history_and_determinism(self):
        data = tiny_dataset()
        cfg = tiny_config()
        model_a, hist_a = train(data, cfg)
        model_b, hist_b = train(data, cfg)
        assert len(hist_a) == 3
        assert all(len(row) == 4 for row in hist_a)
        assert [r[0] for r in hist_a] == [0, 1, 2]
        assert hist_a == hist_b
        for name in model_a.params:
            assert np.array_equal(model_a.params[name].data, model_b.params[name].data)

    def test_loss_components_sum(self):
        data = tiny_dataset(seed=1)
        _, hist = train(data, tiny_config(batch_size=1))
        for _, local, glob, total in hist:
            assert abs(total - (local + glob)) < 1e-9

    def test_short_sequence_rejected(self):
        data = tiny_dataset(frames=3)
        with pytest.raises(ValueError, match="shorter"):
            train(data, tiny_config(window_length=4))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train([], tiny_config())

    def test_nan_frames_diverge(self):
        data = tiny_dataset()
        data[0].frames[1][:] = np.nan
        with pytest.raises(TrainingDiverged):
            train(data, tiny_config(iterations=50))

    def test_write_loss_csv(self, tmp_path):
        path = str(tmp_path / "loss.csv")
        write_loss_csv(path, [(0, 1.25, 2.5, 3.75), (1, 1.0, 2.0, 3.0)])
        lines = open(path).read().splitlines()
        assert lines[0] == "iteration,loss_local,loss_global,loss_total"
        assert lines[1] == "0,1.25,2.5,3.75"
        assert len(lines) == 3


class TestSlidingWindowInfer:
    def _infer(self, n_frames, **kw):
        model = VONet(preset="tiny", seed=2)
        seq = generate_sequence(SyntheticSpec(frames=n_frames, height=32, width=32, seed=7))
        policy = MemoryPolicy(theta_rot=0.0, theta_trans=0.0, max_slots=11)
        return sliding_window_infer(model, seq.frames, policy, **kw)

    def test_one_pose_per_frame_identity_start(self):
        traj = self._infer(9, window=4)
        assert len(traj) == 9
        assert np.array_equal(traj[0], np.eye(4))
        for pose in traj[1:]:
            assert not np.array_equal(pose, np.eye(4))

    def test_window_clamped_to_length(self):
        assert len(self._infer(3, window=11)) == 3

    def test_stride_validation(self):
        with pytest.raises(ValueError):
            self._infer(9, window=4, stride=0)
        with pytest.raises(ValueError):
            self._infer(9, window=4, stride=4)

    def test_stride_one_still_covers_all_frames(self):
        traj = self._infer(6, window=3, stride=1)
        assert len(traj) == 6

    def test_deterministic(self):
        a = self._infer(7, window=4)
        b = self._infer(7, window=4)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)

    def test_too_few_frames(self):
        model = VONet(preset="tiny", seed=0)
        with pytest.raises(ValueError):
            sliding_window_infer(model, [np.zeros((3, 32, 32))],
                                 MemoryPolicy(), window=4)
