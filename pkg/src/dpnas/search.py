"""Search loop: sample a block, compile it, train it briefly, reward the agent.

With ``workers > 1`` candidates train in separate processes and the agent is
updated in completion order; ``workers == 1`` is strictly sequential and
reproducible byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .agent import EpsilonSchedule, QAgent, RewardConfig, compute_reward
from .compile import ShapeMismatch, count_params, infer_shapes
from .config import Config
from .data import DenoiseData, add_awgn, center_crop, extract_patches, load_dir, split, synth_images
from .engine import psnr, seeded_rng
from .nsc import NscCode, Op, codes_from_obj, codes_to_json, prune_inactive, validate
from .runtime import FullTrainer, NonFiniteLoss, PriorModel, build_block, evaluate, train_candidate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_FIELDS = ["episode", "epsilon", "nsc", "params", "psnr", "reward", "status"]


class VersionMismatch(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


# ---------------------------------------------------------------------------
# data


def make_data(cfg: Config) -> DenoiseData:
    """Training patches and validation crops from directories or procedurally."""
    if cfg.train_dir:
        train_imgs = load_dir(cfg.train_dir)
        if cfg.val_dir:
            val_imgs = load_dir(cfg.val_dir)
        else:
            train_imgs, val_imgs = split(train_imgs, 0.05, [cfg.seed, 2])
        patches = extract_patches(train_imgs, cfg.patch_size, cfg.n_patches, [cfg.seed, 3])
        val = np.stack([center_crop(v, cfg.patch_size) for v in val_imgs])
        return DenoiseData(patches, val, cfg.noise_sigma, cfg.seed)
    return DenoiseData.synthetic(cfg.n_images, cfg.image_size, cfg.patch_size, cfg.n_patches,
                                 cfg.n_val, cfg.noise_sigma, cfg.seed, cfg.image_channels)


def make_test_set(cfg: Config):
    """``(noisy, clean)`` test arrays with a fixed noise draw."""
    if cfg.test_dir:
        clean = np.stack([center_crop(im, cfg.patch_size) for im in load_dir(cfg.test_dir)])
    else:
        clean = synth_images(cfg.n_test, cfg.patch_size, [cfg.seed, 4], cfg.image_channels)
    noisy = add_awgn(clean, cfg.noise_sigma, np.random.default_rng([cfg.seed, 5]))
    return noisy, clean


# ---------------------------------------------------------------------------
# candidate evaluation


DEAD_LAYER_COST = 0.5

# conv depth credited per layer on the longest path to the terminal
_DEPTH_GAIN = {(Op.CONV, 3): 1.0, (Op.CONV, 1): 0.4}


def surrogate_psnr(graph, plan, params) -> float:
    """Analytic stand-in for trained PSNR, used to test the agent quickly.

    Saturates in the conv depth of the deepest input-to-terminal path, with
    small bonuses for the global skip and a down/up pair, and a cost per
    dead layer.
    """
    depth = {0: 0.0}
    for c in graph.active_codes():
        if c.op.is_terminal:
            depth[c.index] = depth[c.index - 1]
        else:
            depth[c.index] = _DEPTH_GAIN.get((c.op, c.kernel), 0.0) + max(depth[p] for p in c.inputs())
    s = 20.2 + 6.0 * (1.0 - math.exp(-depth[graph.codes[-1].index] / 3.0))
    ops = {c.op for c in graph.active_codes()}
    if Op.TERMINAL2 in ops:
        s += 0.5
    if Op.DOWN in ops and Op.UP in ops:
        s += 0.5
    return s - DEAD_LAYER_COST * graph.n_inactive


@dataclass
class CandidateOutcome:
    episode: int
    codes: list
    params: int
    psnr: float | None
    active: tuple
    status: str = "ok"
    iterations: int = 0


def evaluate_candidate(codes, cfg: Config, episode: int, data=None) -> CandidateOutcome:
    g = prune_inactive(validate(codes, cfg.max_layers))
    shape = (cfg.image_channels, cfg.patch_size, cfg.patch_size)
    try:
        plan = infer_shapes(g, shape, cfg.dmm_mode, cfg.base_width)
    except ShapeMismatch as e:
        return CandidateOutcome(episode, codes, 1, None, g.active, f"shape_mismatch:{e.layer}")
    params = count_params(g, plan)
    if cfg.surrogate:
        return CandidateOutcome(episode, codes, params, surrogate_psnr(g, plan, params), g.active)
    block = build_block(g, plan, (cfg.seed, episode), dtype=np.dtype(cfg.dtype))
    try:
        res = train_candidate(block, data, cfg.candidate_budget, cfg.early_stop, cfg.lr,
                              cfg.batch_size, (cfg.seed, episode))
    except NonFiniteLoss:
        return CandidateOutcome(episode, codes, params, None, g.active, "non_finite")
    return CandidateOutcome(episode, codes, params, res.psnr_early_stop, g.active, "ok", res.iterations)


_WORKER = {}


def _worker_init(cfg_dict):
    cfg = Config.from_dict(cfg_dict)
    _WORKER["cfg"] = cfg
    _WORKER["data"] = None if cfg.surrogate else make_data(cfg)


def _worker_eval(codes_json, episode):
    codes = codes_from_obj(json.loads(codes_json))
    return evaluate_candidate(codes, _WORKER["cfg"], episode, _WORKER["data"])


# ---------------------------------------------------------------------------


@dataclass
class LogRow:
    episode: int
    epsilon: float
    nsc: str
    params: int
    psnr: float | None
    reward: float
    status: str

    def as_csv(self):
        return [self.episode, repr(self.epsilon), self.nsc, self.params,
                "" if self.psnr is None else repr(self.psnr), repr(self.reward), self.status]


@dataclass
class SearchReport:
    rows: list
    top_k: list
    selected: LogRow | None
    config: Config = field(repr=False, default=None)

    def log_csv(self) -> str:
        return rows_to_csv(self.rows)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


class Searcher:
    def __init__(self, cfg: Config, data=None):
        self.cfg = cfg
        self.data = data
        if data is None and not cfg.surrogate and cfg.workers == 1:
            self.data = make_data(cfg)
        self.agent = QAgent(cfg.space, cfg.alpha, cfg.gamma, cfg.replay_capacity)
        self.schedule = EpsilonSchedule(cfg.episodes)
        self.reward_cfg = RewardConfig(cfg.effective_mu, cfg.psnr_clamp, cfg.reward_floor)
        self.sample_rng = seeded_rng(cfg.seed, 1)
        self.replay_rng = seeded_rng(cfg.seed, 2)
        self.next_episode = 0
        self.completed = 0
        self.rows: list[LogRow] = []

    # -- one candidate

    def _record(self, out: CandidateOutcome, epsilon: float) -> LogRow:
        if out.psnr is None:
            r_L = self.reward_cfg.floor
            rewards = [r_L if a else 0.0 for a in out.active]
        else:
            r_L, rewards = compute_reward(out.psnr, out.params, out.active, self.reward_cfg)
        self.agent.store_episode(out.codes, rewards)
        self.completed += 1
        if self.completed > self.cfg.warmup_episodes:
            self.agent.update(self.replay_rng, self.cfg.replay_batch)
        row = LogRow(out.episode, epsilon, codes_to_json(out.codes), out.params, out.psnr, r_L, out.status)
        self.rows.append(row)
        log.info("episode %d eps=%.2f params=%d psnr=%s reward=%.4f %s", out.episode, epsilon,
                 out.params, "-" if out.psnr is None else f"{out.psnr:.3f}", r_L, out.status)
        return row

    def _sample(self):
        t = self.next_episode
        eps = self.schedule(t)
        codes = self.agent.sample_episode(eps, self.sample_rng)
        self.next_episode += 1
        return t, eps, codes

    def run(self, checkpoint_path=None, until=None) -> SearchReport:
        until = self.cfg.episodes if until is None else min(until, self.cfg.episodes)
        if self.cfg.workers > 1 and not self.cfg.surrogate:
            self._run_parallel(until, checkpoint_path)
        else:
            while self.next_episode < until:
                t, eps, codes = self._sample()
                self._record(evaluate_candidate(codes, self.cfg, t, self.data), eps)
                self._maybe_checkpoint(checkpoint_path)
        return self.report()

    def _run_parallel(self, until, checkpoint_path):
        eps_of = {}
        with ProcessPoolExecutor(self.cfg.workers, initializer=_worker_init,
                                 initargs=(self.cfg.to_dict(),)) as pool:
            pending = set()
            while self.next_episode < until or pending:
                while self.next_episode < until and len(pending) < self.cfg.workers:
                    t, eps, codes = self._sample()
                    eps_of[t] = eps
                    pending.add(pool.submit(_worker_eval, codes_to_json(codes), t))
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: f.result().episode):
                    out = fut.result()
                    self._record(out, eps_of.pop(out.episode))
                    self._maybe_checkpoint(checkpoint_path)

    def _maybe_checkpoint(self, path):
        every = self.cfg.checkpoint_every
        if path and every and self.completed % every == 0:
            self.checkpoint(path)

    # -- results

    def report(self) -> SearchReport:
        return SearchReport(self.rows, self.top_k(), self.selected(), self.cfg)

    def top_k(self, k=None) -> list[LogRow]:
        k = k or self.cfg.top_k
        best: dict[str, LogRow] = {}
        for r in self.rows:
            if r.status == "ok" and (r.nsc not in best or r.reward > best[r.nsc].reward):
                best[r.nsc] = r
        return sorted(best.values(), key=lambda r: (-r.reward, r.episode))[:k]

    def selected(self) -> LogRow | None:
        start = self.schedule.final_phase_start
        ok = [r for r in self.rows if r.status == "ok"]
        pool = [r for r in ok if r.episode >= start] or ok
        if not pool:
            return None
        metric = (lambda r: r.psnr) if self.cfg.select_by == "psnr" else (lambda r: r.reward)
        return max(pool, key=lambda r: (metric(r), -r.episode))

    # -- persistence

    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "next_episode": self.next_episode,
            "completed": self.completed,
            "rows": [r.__dict__ for r in self.rows],
            "qtable": self.agent.table_dict(),
            "memory": self.agent.memory_list(),
            "sample_rng": self.sample_rng.bit_generator.state,
            "replay_rng": self.replay_rng.bit_generator.state,
        }

    def checkpoint(self, path):
        body = json.dumps(self.state_dict(), sort_keys=True)
        digest = hashlib.sha256(body.encode()).hexdigest()
        tmp = f"{path}.tmp"
        with open(tmp, "w") as f:
            f.write(json.dumps({"sha256": digest, "body": body}))
        os.replace(tmp, path)

    @classmethod
    def resume(cls, path, data=None) -> "Searcher":
        try:
            with open(path) as f:
                outer = json.load(f)
            body = outer["body"]
            if hashlib.sha256(body.encode()).hexdigest() != outer["sha256"]:
                raise CorruptCheckpoint(f"{path}: checksum mismatch")
            state = json.loads(body)
        except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as e:
            raise CorruptCheckpoint(f"{path}: {e}") from None
        if state.get("version") != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {state.get('version')}, expected {CHECKPOINT_VERSION}")
        s = cls(Config.from_dict(state["config"]), data)
        s.next_episode = state["next_episode"]
        s.completed = state["completed"]
        s.rows = [LogRow(**r) for r in state["rows"]]
        s.agent.load_table(state["qtable"])
        s.agent.load_memory(state["memory"])
        s.sample_rng.bit_generator.state = state["sample_rng"]
        s.replay_rng.bit_generator.state = state["replay_rng"]
        return s


def run_search(cfg: Config, data=None, checkpoint_path=None) -> SearchReport:
    return Searcher(cfg, data).run(checkpoint_path)


# ---------------------------------------------------------------------------
# full model


@dataclass
class FullResult:
    model: PriorModel
    trainer: FullTrainer
    test_psnr: float
    per_image: list
    noisy_psnr: float


def run_full_training(codes, cfg: Config, K=None, data=None, test_set=None,
                      checkpoint_dir=None, resume_from=None) -> FullResult:
    """Train ``K`` unshared copies of the block jointly and evaluate them."""
    K = cfg.K if K is None else K
    g = prune_inactive(validate(codes))
    plan = infer_shapes(g, (cfg.image_channels, cfg.patch_size, cfg.patch_size), cfg.dmm_mode, cfg.base_width)
    data = data if data is not None else make_data(cfg)
    model = PriorModel.build(g, plan, K, cfg.seed, cfg.delta, cfg.eta, np.dtype(cfg.dtype))
    trainer = FullTrainer(model, data, cfg.batch_size, cfg.lr, cfg.iters_per_epoch, cfg.lr_halve_every,
                          cfg.eval_interval, cfg.seed)
    if resume_from:
        trainer.restore(resume_from)
    trainer.run(cfg.full_iterations)
    if checkpoint_dir:
        trainer.save(checkpoint_dir)
    noisy, clean = test_set if test_set is not None else make_test_set(cfg)
    mean, per = evaluate(trainer.model, noisy, clean)
    baseline = float(np.mean([psnr(n, c) for n, c in zip(noisy, clean)]))
    return FullResult(trainer.model, trainer, mean, per, baseline)


def k_sweep(codes, cfg: Config, ks=(1, 2, 3, 4), data=None) -> list[tuple[int, float]]:
    data = data if data is not None else make_data(cfg)
    test = make_test_set(cfg)
    return [(k, run_full_training(codes, cfg, k, data, test).test_psnr) for k in ks]


def parse_arch(text) -> list[NscCode]:
    return codes_from_obj(json.loads(text))
