"""Xavier initialization, Adam, and the two-phase episodic schedule.

The full schedule pre-trains on source-domain episodes for the first
source_iterations, then fine-tunes on the (augmented) target pool; encoders
and the token are shared across phases while each domain keeps its own
channel-mapping layer. The target-only mode skips the source phase
entirely. Every iteration is a pure function of (seed, iteration) given the
pools, which is what makes bitwise checkpoint resume possible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .data import group_by_class
from .episodes import EpisodeConfig, sample_episode
from .errors import ConfigError, NumericError
from .fewshot import compute_prototypes, mixed_episode_loss
from .mixing import MixedQuery, apply_mix, cutmix_lambdas, draw_pairs
from .model import ModelParams, TransformerConfig, extract_features_and_attention, param_shapes

MODES = ("apnt", "apnt*")
MIX_MODES = ("transmix", "cutmix", "none")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    total_iterations: int = 3000
    source_iterations: int = 1000
    mode: str = "apnt"
    mix_mode: str = "transmix"
    seed: int = 0

    def __post_init__(self):
        self.mode = {"apnt-star": "apnt*"}.get(self.mode.lower(), self.mode.lower())
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mix_mode not in MIX_MODES:
            raise ConfigError(f"mix_mode must be one of {MIX_MODES}, got {self.mix_mode!r}")
        if self.mode == "apnt*":
            self.source_iterations = 0
        if not 0 <= self.source_iterations <= self.total_iterations:
            raise ConfigError(
                f"source_iterations ({self.source_iterations}) must lie in "
                f"[0, total_iterations={self.total_iterations}]"
            )
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class OptimizerState:
    """Adam first/second moment estimates per parameter plus the step count."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_for(cls, params: ModelParams):
        return cls(
            m={n: np.zeros_like(t.data) for n, t in params.tensors.items()},
            v={n: np.zeros_like(t.data) for n, t in params.tensors.items()},
        )


@dataclass
class TrainState:
    params: ModelParams
    opt: OptimizerState
    iteration: int = 0


@dataclass
class LogEntry:
    iteration: int
    phase: str
    loss: float
    mean_lambda1: float
    wall_ms: float

    def line(self):
        return (
            f"{self.iteration}\t{self.phase}\t{self.loss:.12g}"
            f"\t{self.mean_lambda1:.6g}\t{self.wall_ms:.3f}"
        )


def init_params(cfg: TransformerConfig, d_in_source, d_in_target, seed):
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
    unit layer-norm gains, Xavier-scaled token; deterministic per seed."""
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    rng = np.random.default_rng([seed, 0x1A17])
    tensors = {}
    for name, shape in param_shapes(cfg, d_in_source, d_in_target).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        elif name == "token":
            bound = np.sqrt(6.0 / (1 + cfg.d_model))
            data = rng.uniform(-bound, bound, size=shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = ad.Tensor(data, requires_grad=True)
    return ModelParams(cfg, tensors)


def adam_update(params: ModelParams, grads, opt: OptimizerState, cfg: TrainConfig):
    """One Adam step with bias correction over the parameters that received
    gradients; untouched parameters (the other domain's mapping) stay frozen."""
    opt.step += 1
    t = opt.step
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for name in params.tensors:
        g = grads.get(name)
        if g is None:
            continue
        m = opt.m[name] = cfg.beta1 * opt.m[name] + (1.0 - cfg.beta1) * g
        v = opt.v[name] = cfg.beta2 * opt.v[name] + (1.0 - cfg.beta2) * (g * g)
        step = cfg.lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        params.tensors[name].data -= step


def _stack_pixels(samples):
    return np.stack([np.asarray(s.pixels, dtype=np.float64) for s in samples])


def episode_loss(params: ModelParams, episode, train_cfg: TrainConfig, mix_rng, domain):
    """Forward pass and mixed episode loss; one batched model call covers
    supports, original queries (transmix only), and mixed queries."""
    supports = episode.support
    queries = episode.query
    n_support = len(supports)
    n_query = len(queries)
    support_labels = np.array([s.label for s in supports])
    support_px = _stack_pixels(supports)
    query_px = _stack_pixels(queries)

    if train_cfg.mix_mode == "none":
        batch = np.concatenate([support_px, query_px])
        features, _ = extract_features_and_attention(batch, domain, params)
        prototypes = compute_prototypes(features[:n_support], support_labels, episode.class_ids)
        mixed = [
            MixedQuery(
                pixels=q.pixels,
                source_i=i,
                source_k=i,
                label_i=int(q.label),
                label_k=int(q.label),
                lambda_1=1.0,
                lambda_2=0.0,
                mask=None,
            )
            for i, q in enumerate(queries)
        ]
        return mixed_episode_loss(mixed, features[n_support:], prototypes)

    pairs = draw_pairs(n_query, params.cfg.patch_size, mix_rng)
    mixed_px = np.stack(
        [apply_mix(query_px[i], query_px[k], mask) for i, (k, mask) in enumerate(pairs)]
    )

    if train_cfg.mix_mode == "cutmix":
        batch = np.concatenate([support_px, mixed_px])
        features, _ = extract_features_and_attention(batch, domain, params)
        prototypes = compute_prototypes(features[:n_support], support_labels, episode.class_ids)
        mixed_features = features[n_support:]
        lambda_tensors = None
        lambdas = [cutmix_lambdas(mask) for _, mask in pairs]
    else:
        # transmix: the original queries ride along in the batch so their
        # attention maps (and the label weights derived from them) stay on
        # the gradient tape.
        batch = np.concatenate([support_px, query_px, mixed_px])
        features, maps = extract_features_and_attention(batch, domain, params)
        prototypes = compute_prototypes(features[:n_support], support_labels, episode.class_ids)
        query_maps = maps[n_support:n_support + n_query]
        mixed_features = features[n_support + n_query:]
        partner = np.array([k for k, _ in pairs])
        keep = np.stack([mask.grid.astype(np.float64) for _, mask in pairs])
        raw_1 = (query_maps * keep).sum(axis=(1, 2))
        raw_2 = (query_maps[partner] * (1.0 - keep)).sum(axis=(1, 2))
        total = raw_1 + raw_2
        if not np.isfinite(total.data).all():
            raise NumericError("attention mass over the mix regions is not finite")
        if not (total.data > 0).all():
            raise NumericError("attention mass over both mix regions is zero")
        lam_1 = raw_1 / total
        lam_2 = raw_2 / total
        lambda_tensors = (lam_1, lam_2)
        lambdas = list(zip(lam_1.data.tolist(), lam_2.data.tolist()))

    mixed = [
        MixedQuery(
            pixels=mixed_px[i],
            source_i=i,
            source_k=k,
            label_i=int(queries[i].label),
            label_k=int(queries[k].label),
            lambda_1=lambdas[i][0],
            lambda_2=lambdas[i][1],
            mask=mask,
        )
        for i, (k, mask) in enumerate(pairs)
    ]
    return mixed_episode_loss(mixed, mixed_features, prototypes, lambda_tensors=lambda_tensors)


def train_step(params: ModelParams, opt: OptimizerState, episode, train_cfg: TrainConfig,
               mix_rng, domain):
    """One optimization step on one episode; updates params and opt in place."""
    for t in params.tensors.values():
        t.zero_grad()
    try:
        breakdown = episode_loss(params, episode, train_cfg, mix_rng, domain)
    except NumericError as exc:
        raise NumericError(f"numeric failure at episode {episode.episode_index}: {exc}") from exc
    if not np.isfinite(breakdown.total):
        raise NumericError(
            f"non-finite loss ({breakdown.total}) at episode {episode.episode_index}"
        )
    ad.backward(breakdown.loss)
    grads = {n: t.grad for n, t in params.tensors.items() if t.grad is not None}
    adam_update(params, grads, opt, train_cfg)
    return breakdown


def run_schedule(source_pool, target_pool, model_cfg: TransformerConfig,
                 train_cfg: TrainConfig, episode_cfg: EpisodeConfig,
                 state: TrainState | None = None, log_stream=None):
    """Run the episodic schedule and return (final state, per-iteration log).

    ``source_pool``/``target_pool`` are lists of patch samples; the target
    pool is normally the augmented labeled set. Passing a ``state`` resumes
    an interrupted run and reproduces the uninterrupted run bitwise, since
    episode sampling and mixing draws depend only on (seed, iteration).
    """
    needs_source = train_cfg.source_iterations > 0
    if train_cfg.mode == "apnt" and needs_source and not source_pool:
        raise ConfigError("apnt mode needs a source pool for its pre-training phase")
    if not target_pool:
        raise ConfigError("run_schedule needs a non-empty target pool")

    d_in_target = target_pool[0].pixels.shape[2]
    d_in_source = source_pool[0].pixels.shape[2] if source_pool else None
    if state is None:
        params = init_params(
            model_cfg,
            d_in_source if train_cfg.mode == "apnt" else None,
            d_in_target,
            train_cfg.seed,
        )
        state = TrainState(params=params, opt=OptimizerState.zeros_for(params), iteration=0)

    source_grouped = group_by_class(source_pool) if source_pool else {}
    target_grouped = group_by_class(target_pool)
    log = []
    for it in range(state.iteration, train_cfg.total_iterations):
        started = time.perf_counter()
        in_source_phase = it < train_cfg.source_iterations
        phase = "source" if in_source_phase else "target"
        pool = source_grouped if in_source_phase else target_grouped
        episode = sample_episode(pool, episode_cfg, episode_index=it)
        mix_rng = np.random.default_rng([train_cfg.seed, it, 1])
        breakdown = train_step(state.params, state.opt, episode, train_cfg, mix_rng, phase)
        state.iteration = it + 1
        entry = LogEntry(
            iteration=it,
            phase=phase,
            loss=breakdown.total,
            mean_lambda1=breakdown.mean_lambda1,
            wall_ms=(time.perf_counter() - started) * 1e3,
        )
        log.append(entry)
        if log_stream is not None:
            log_stream.write(entry.line() + "\n")
    return state, log


# ---------------------------------------------------------------------------
# checkpoint plumbing

_STEP_KEY = "adam.step"
_ITERATION_KEY = "train.iteration"


def state_to_named(state: TrainState):
    """Flatten a training state into the checkpoint's named-tensor directory."""
    named = state.params.named_arrays()
    for name, m in state.opt.m.items():
        named[f"adam.m.{name}"] = m.copy()
    for name, v in state.opt.v.items():
        named[f"adam.v.{name}"] = v.copy()
    named[_STEP_KEY] = np.array(float(state.opt.step))
    named[_ITERATION_KEY] = np.array(float(state.iteration))
    return named


def state_from_named(cfg: TransformerConfig, named):
    param_arrays = {
        n: a for n, a in named.items()
        if not n.startswith(("adam.", "train."))
    }
    params = ModelParams.from_arrays(cfg, param_arrays)
    opt = OptimizerState(
        m={n: named[f"adam.m.{n}"].copy() for n in param_arrays},
        v={n: named[f"adam.v.{n}"].copy() for n in param_arrays},
        step=int(named[_STEP_KEY].item()),
    )
    return TrainState(params=params, opt=opt, iteration=int(named[_ITERATION_KEY].item()))


def save_train_state(path, state: TrainState):
    ckpt.save_checkpoint(path, state.params.cfg, state_to_named(state))


def load_train_state(path):
    cfg, named = ckpt.load_checkpoint(path)
    return state_from_named(cfg, named)


def load_params(path):
    """Load just the model parameters (for evaluation) from a checkpoint."""
    cfg, named = ckpt.load_checkpoint(path)
    if _ITERATION_KEY in named:
        return state_from_named(cfg, named).params
    return ModelParams.from_arrays(cfg, named)
