"""Experiment orchestration: the misalignment cause study and the S1-S9
attack scenarios.

Scenario semantics (all shadows are trained with the same algorithm as the
target):

    S1  auditor — the meta-classifier trains on features of the target model
        itself over known member/non-member records; no shadow models.
    S2  shadows share the target's weight-initialisation seed.
    S3  shadows differ in every seed and train on adversary data.
    S4  S3 plus weight-sorting canonicalisation of shadows and target.
    S5  S3 plus bottom-up weight-based re-alignment to the target.
    S6  S3 plus top-down weight-based re-alignment.
    S7  S3 plus activation-based re-alignment.
    S8  S3 plus correlation-based re-alignment.
    S9  shadows re-aligned to the target right after initialisation, then
        trained (top-down weight matching).

Everything derives from the master seed: dataset, partitions, per-repetition
target seeds, per-shadow seeds and the meta-classifier's own streams, so a
run is reproducible end to end. Shadow models whose seeds do not depend on
the repetition (S3 and its re-aligned variants) are trained once and reused,
optionally cached on disk as checkpoints.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    FeatureSpec,
    build_attack_dataset,
    evaluate,
    train_meta_classifier,
)
from .attack.meta import MetaClassifierConfig
from .checkpoint import load_checkpoint, load_dataset, save_checkpoint
from .config import SCENARIO_REALIGN, ExperimentConfig
from .data import LabeledDataset, Splits, gen_synthetic, load_csv_dataset, make_splits
from .errors import ConfigError, ScenarioError, ShadowAlignError
from .metrics import random_perm_baseline, wms
from .nn.model import Model, build_cnn, build_mlp
from .realign import realign, realign_after_init, weight_sort_canonical
from .rng import (
    TAG_DATA,
    TAG_META_CLASSIFIER,
    TAG_METRICS,
    TAG_SPLITS,
    SeedBundle,
    derive_seed,
    stream,
)
from .training import train

TAG_TARGET = 0x5447
TAG_SHADOW = 0x5348


# ---------------------------------------------------------------------------
# Shared preparation


def build_template(cfg: ExperimentConfig) -> Model:
    if cfg.arch == "mlp":
        return build_mlp(
            cfg.layer_sizes, cfg.n_classes, activation=cfg.activation, dropout_p=cfg.dropout_p
        )
    return build_cnn(
        cfg.image_size,
        cfg.n_classes,
        conv_filters=cfg.layer_sizes,
        fc_sizes=cfg.fc_sizes,
        dropout_p=cfg.dropout_p,
    )


def load_experiment_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    if cfg.dataset.startswith("csv:"):
        return load_csv_dataset(cfg.dataset[4:], cfg.n_classes)
    if cfg.dataset.startswith("file:"):
        return load_dataset(cfg.dataset[5:])
    return gen_synthetic(cfg.synthetic_spec(), stream(derive_seed(cfg.seed, TAG_DATA)))


@dataclass
class RunContext:
    cfg: ExperimentConfig
    dataset: LabeledDataset
    splits: Splits
    template: Model
    probe_x: np.ndarray  # fixed matching/metrics probe records (from V2)
    # record positions for the meta-classifier pools
    mc_train_pool: np.ndarray
    mc_val_pool: np.ndarray
    test_members: np.ndarray
    test_nonmembers: np.ndarray
    s1_train: tuple = ()  # (members, nonmembers)
    s1_val: tuple = ()

    def val_target(self) -> LabeledDataset:
        return self.dataset.subset(self.splits.v1)

    def val_shadow(self) -> LabeledDataset:
        return self.dataset.subset(self.splits.v2)

    def data_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.dataset.x.tobytes())
        h.update(self.dataset.y.tobytes())
        return h.hexdigest()[:16]


def prepare_run(cfg: ExperimentConfig) -> RunContext:
    cfg.validate()
    dataset = load_experiment_dataset(cfg)
    template = build_template(cfg)
    if tuple(template.input_shape) != dataset.x.shape[1:]:
        raise ConfigError(
            f"architecture input {template.input_shape} does not match data {dataset.x.shape[1:]}"
        )
    split_rng = stream(derive_seed(cfg.seed, TAG_SPLITS))
    splits = make_splits(dataset, cfg.partition_spec(), split_rng)
    probe_n = min(cfg.probe_r, len(splits.v2))
    probe_x = dataset.x[splits.v2[:probe_n]]

    pool_rng = stream(derive_seed(cfg.seed, TAG_SPLITS, 2))
    aux = splits.aux.copy()
    pool_rng.shuffle(aux)
    if cfg.mc_train + cfg.mc_val > len(aux):
        raise ConfigError("mc_train + mc_val exceeds the adversary pool")
    mc_train_pool = np.sort(aux[: cfg.mc_train])
    mc_val_pool = np.sort(aux[cfg.mc_train : cfg.mc_train + cfg.mc_val])

    half_test = cfg.mc_test // 2
    members = splits.target_train.copy()
    pool_rng.shuffle(members)
    outside = np.setdiff1d(splits.target_pool, splits.target_train)
    pool_rng.shuffle(outside)
    if half_test > len(members) or half_test > len(outside):
        raise ConfigError("mc_test too large for the target pool")
    test_members = members[:half_test]
    test_nonmembers = outside[:half_test]
    # auditor pools never overlap the test records
    s1_m = members[half_test:]
    s1_n = outside[half_test:]
    need_m = cfg.mc_train // 2 + cfg.mc_val // 2
    if cfg.scenario == "S1" and (need_m > len(s1_m) or need_m > len(s1_n)):
        raise ConfigError("S1 needs more member/non-member records than remain")
    s1_train = (s1_m[: cfg.mc_train // 2], s1_n[: cfg.mc_train // 2])
    s1_val = (
        s1_m[cfg.mc_train // 2 : need_m],
        s1_n[cfg.mc_train // 2 : need_m],
    )
    return RunContext(
        cfg=cfg,
        dataset=dataset,
        splits=splits,
        template=template,
        probe_x=probe_x,
        mc_train_pool=mc_train_pool,
        mc_val_pool=mc_val_pool,
        test_members=test_members,
        test_nonmembers=test_nonmembers,
        s1_train=s1_train,
        s1_val=s1_val,
    )


def target_seeds(cfg: ExperimentConfig, rep: int) -> SeedBundle:
    return SeedBundle.from_master(derive_seed(cfg.seed, TAG_TARGET, rep))


def shadow_seeds(cfg: ExperimentConfig, k: int) -> SeedBundle:
    return SeedBundle.from_master(derive_seed(cfg.seed, TAG_SHADOW, k))


# ---------------------------------------------------------------------------
# Cached / parallel training helpers


def _train_job(args):
    template, train_ds, val_ds, seeds, train_cfg = args
    model, log = train(template, train_ds, val_ds, seeds, train_cfg)
    return model, log


def _run_jobs(jobs: int, tasks: list):
    if jobs <= 1 or len(tasks) <= 1:
        return [_train_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_job, tasks))


class ModelCache:
    """Disk cache of trained models keyed by architecture, data and seeds."""

    def __init__(self, directory: str | None):
        self.directory = directory
        if directory:
            os.makedirs(directory, exist_ok=True)

    def key(self, ctx: RunContext, role: str, seeds: SeedBundle, train_idx: np.ndarray) -> str:
        h = hashlib.sha256()
        h.update(ctx.template.arch_id.encode())
        h.update(ctx.data_digest().encode())
        h.update(role.encode())
        h.update(np.asarray(train_idx).tobytes())
        h.update(repr(seeds.as_dict()).encode())
        h.update(repr(ctx.cfg.train_config()).encode())
        return h.hexdigest()[:24]

    def load(self, key: str):
        if not self.directory:
            return None
        path = os.path.join(self.directory, key + ".ckpt")
        if not os.path.exists(path):
            return None
        model, meta = load_checkpoint(path)
        return model, meta.get("n_epochs", 0)

    def store(self, key: str, model: Model, seeds: SeedBundle, n_epochs: int):
        if not self.directory:
            return
        path = os.path.join(self.directory, key + ".ckpt")
        save_checkpoint(model, seeds, path, extra_meta={"n_epochs": n_epochs})


def _train_cached(ctx: RunContext, cache: ModelCache, role: str, seeds: SeedBundle, idx, val_ds):
    key = cache.key(ctx, role, seeds, idx)
    hit = cache.load(key)
    if hit is not None:
        return hit
    model, log = train(
        ctx.template, ctx.dataset.subset(idx), val_ds, seeds, ctx.cfg.train_config()
    )
    cache.store(key, model, seeds, len(log.epochs))
    return model, len(log.epochs)


# ---------------------------------------------------------------------------
# Cause study


@dataclass
class CauseStudyRow:
    condition: str
    layer: int
    mean: float
    sd: float


@dataclass
class CauseStudyResult:
    rows: list = field(default_factory=list)
    repetitions: int = 0

    def value(self, condition: str, layer: int) -> tuple[float, float]:
        for row in self.rows:
            if row.condition == condition and row.layer == layer:
                return row.mean, row.sd
        raise KeyError((condition, layer))


def _condition_setup(condition: str, tgt: SeedBundle, shd: SeedBundle):
    """Seed bundle and dataset choice ('same' | 'overlap' | 'disjoint') per condition."""
    if condition == "same":
        return tgt, "same"
    if condition == "diff_wi":
        return SeedBundle(shd.weight_init, tgt.batch_order, tgt.dropout), "same"
    if condition == "diff_bo":
        return SeedBundle(tgt.weight_init, shd.batch_order, tgt.dropout), "same"
    if condition == "diff_ds":
        return SeedBundle(tgt.weight_init, tgt.batch_order, shd.dropout), "same"
    if condition == "overlap_data":
        return tgt, "overlap"
    if condition == "disjoint_data":
        return tgt, "disjoint"
    if condition == "diff_bo_ds_dd":
        return SeedBundle(tgt.weight_init, shd.batch_order, shd.dropout), "disjoint"
    if condition == "diff_wi_bo_ds":
        return shd, "same"
    if condition == "all_diff":
        return shd, "disjoint"
    raise ConfigError(f"unknown cause condition {condition!r}")


def run_cause_study(cfg: ExperimentConfig, jobs: int = 1) -> CauseStudyResult:
    """Per-factor misalignment study: train shadows that differ from the
    target in exactly the configured factors and report per-layer weight
    misalignment (mean and sd over repetitions), plus the random-permutation
    baseline."""
    ctx = prepare_run(cfg)
    tgt_seeds = target_seeds(cfg, 0)
    val1 = ctx.val_target()
    target, _ = train(
        ctx.template, ctx.dataset.subset(ctx.splits.target_train), val1, tgt_seeds,
        cfg.train_config(),
    )
    n_layers = ctx.template.n_param_layers
    result = CauseStudyResult(repetitions=cfg.repetitions)

    base_rng = stream(derive_seed(cfg.seed, TAG_METRICS))
    for layer in range(n_layers):
        mean, sd = random_perm_baseline(target, layer, cfg.repetitions, base_rng)
        result.rows.append(CauseStudyRow("random_permutation", layer, mean, sd))

    data_rng = stream(derive_seed(cfg.seed, TAG_SPLITS, 3))
    disjoint_pool = np.setdiff1d(ctx.splits.aux, ctx.splits.target_train)
    for condition in cfg.cause_conditions:
        tasks = []
        for k in range(cfg.repetitions):
            seeds, data_kind = _condition_setup(condition, tgt_seeds, shadow_seeds(cfg, k))
            if data_kind == "same":
                idx = ctx.splits.target_train
            elif data_kind == "overlap":
                idx = np.sort(
                    data_rng.choice(ctx.splits.target_pool, size=cfg.train_size, replace=False)
                )
            else:
                if len(disjoint_pool) < cfg.train_size:
                    raise ConfigError("adversary pool too small for disjoint shadows")
                idx = np.sort(data_rng.choice(disjoint_pool, size=cfg.train_size, replace=False))
            tasks.append((ctx.template, ctx.dataset.subset(idx), val1, seeds, cfg.train_config()))
        models = _run_jobs(jobs, tasks)
        for layer in range(n_layers):
            scores = np.array([wms(target, m, layer) for m, _ in models])
            result.rows.append(
                CauseStudyRow(condition, layer, float(scores.mean()), float(scores.std()))
            )
    return result


# ---------------------------------------------------------------------------
# Attack scenarios


@dataclass
class RepetitionResult:
    rep: int
    auc: float
    tpr_at: dict
    seconds: float
    wms_before: list = field(default_factory=list)  # per layer, mean over shadows
    wms_after: list = field(default_factory=list)
    roc = None


@dataclass
class ScenarioReport:
    scenario: str
    feature_desc: str
    repetitions: list = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        return float(np.mean([r.auc for r in self.repetitions]))

    def ci95(self) -> float:
        """Student-t 95% half-width; 0 when fewer than 2 repetitions."""
        n = len(self.repetitions)
        if n < 2:
            return 0.0
        aucs = np.array([r.auc for r in self.repetitions])
        tval = {2: 12.706, 3: 4.303, 4: 3.182, 5: 2.776, 6: 2.571, 7: 2.447, 8: 2.365,
                9: 2.306, 10: 2.262}.get(n, 1.96)
        return float(tval * aucs.std(ddof=1) / np.sqrt(n))


def feature_spec_from_cfg(cfg: ExperimentConfig) -> FeatureSpec:
    return FeatureSpec(
        oa_layers=tuple(cfg.oa_layers),
        grad_layers=tuple(cfg.grad_layers),
        include_input_activations=cfg.include_ia,
        include_label=cfg.include_label,
    )


def mc_config_from_cfg(cfg: ExperimentConfig, rep: int) -> MetaClassifierConfig:
    return MetaClassifierConfig(
        lr=cfg.mc_lr,
        min_lr=cfg.mc_min_lr,
        max_epochs=cfg.mc_max_epochs,
        batch_size=cfg.mc_batch_size,
        seed=derive_seed(cfg.seed, TAG_META_CLASSIFIER, rep),
        mode="balanced" if cfg.overlap == "identical" else "rotate",
    )


def _member_ids(ctx: RunContext, idx: np.ndarray) -> np.ndarray:
    return ctx.dataset.ids[idx]


def _pool_dataset(ctx: RunContext, positions: np.ndarray) -> LabeledDataset:
    return ctx.dataset.subset(positions)


def _choose_validation_shadow(cfg: ExperimentConfig, epochs: list) -> int:
    if not cfg.median_epoch_val_shadow:
        return 0
    order = np.argsort(epochs, kind="stable")
    return int(order[len(order) // 2])


def _scenario_shadow_models(ctx, cfg, scenario, rep, target, cache, jobs):
    """Train (or fetch) the scenario's shadow models and apply its
    re-alignment. Returns (models, member_sets, epochs, wms_before, wms_after,
    target_for_test)."""
    k = cfg.k_shadows
    val2 = ctx.val_shadow()
    reused = scenario not in ("S2", "S9")
    models, epochs = [], []
    if scenario == "S9":
        for i in range(k):
            seeds = shadow_seeds(cfg, i)
            model, _plan, log = realign_after_init(
                ctx.template,
                target,
                seeds,
                ctx.dataset.subset(ctx.splits.shadow_train[i]),
                val2,
                cfg.train_config(),
            )
            models.append(model)
            epochs.append(len(log.epochs))
    elif scenario == "S2":
        tseeds = target_seeds(cfg, rep)
        tasks = []
        for i in range(k):
            base = shadow_seeds(cfg, i)
            seeds = SeedBundle(tseeds.weight_init, base.batch_order, base.dropout)
            tasks.append(
                (ctx.template, ctx.dataset.subset(ctx.splits.shadow_train[i]), val2, seeds,
                 cfg.train_config())
            )
        for model, log in _run_jobs(jobs, tasks):
            models.append(model)
            epochs.append(len(log.epochs))
    else:
        uncached = []
        for i in range(k):
            seeds = shadow_seeds(cfg, i)
            key = cache.key(ctx, "shadow", seeds, ctx.splits.shadow_train[i])
            hit = cache.load(key)
            if hit is None:
                uncached.append((i, seeds, key))
                models.append(None)
                epochs.append(0)
            else:
                models.append(hit[0])
                epochs.append(hit[1])
        tasks = [
            (ctx.template, ctx.dataset.subset(ctx.splits.shadow_train[i]), val2, seeds,
             cfg.train_config())
            for i, seeds, _ in uncached
        ]
        for (i, seeds, key), (model, log) in zip(uncached, _run_jobs(jobs, tasks)):
            cache.store(key, model, seeds, len(log.epochs))
            models[i] = model
            epochs[i] = len(log.epochs)

    n_layers = ctx.template.n_param_layers
    wms_before = [
        float(np.mean([wms(target, m, l) for m in models])) for l in range(n_layers)
    ]
    target_for_test = target
    realign_kind = SCENARIO_REALIGN.get(scenario)
    if realign_kind is not None and scenario != "S9":
        method, direction = realign_kind
        if method == "weight_sort":
            target_for_test = weight_sort_canonical(target)
            models = [weight_sort_canonical(m) for m in models]
        else:
            aligned = []
            for m in models:
                new_model, _plan = realign(m, target, method, direction, probe_x=ctx.probe_x)
                aligned.append(new_model)
            models = aligned
    wms_after = [
        float(np.mean([wms(target_for_test, m, l) for m in models])) for l in range(n_layers)
    ]
    member_sets = [_member_ids(ctx, ctx.splits.shadow_train[i]) for i in range(k)]
    return models, member_sets, epochs, wms_before, wms_after, target_for_test, reused


def run_scenario(
    cfg: ExperimentConfig, jobs: int = 1, cache_dir: str | None = None
) -> ScenarioReport:
    """Run the configured scenario end to end for every repetition."""
    try:
        ctx = prepare_run(cfg)
    except ShadowAlignError:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise ScenarioError("prepare", str(exc)) from exc
    scenario = cfg.scenario
    spec = feature_spec_from_cfg(cfg).normalized(ctx.template)
    cache = ModelCache(cache_dir)
    report = ScenarioReport(scenario=scenario, feature_desc=",".join(spec.group_names()))
    val1 = ctx.val_target()
    test_pool = _pool_dataset(ctx, np.concatenate([ctx.test_members, ctx.test_nonmembers]))
    test_member_ids = _member_ids(ctx, ctx.test_members)

    for rep in range(cfg.repetitions):
        t0 = time.perf_counter()
        try:
            tseeds = target_seeds(cfg, rep)
            target, _ = _train_cached(
                ctx, cache, "target", tseeds, ctx.splits.target_train, val1
            )
            wms_before = wms_after = []
            if scenario == "S1":
                m_tr, n_tr = ctx.s1_train
                m_va, n_va = ctx.s1_val
                train_pool = _pool_dataset(ctx, np.concatenate([m_tr, n_tr]))
                val_pool = _pool_dataset(ctx, np.concatenate([m_va, n_va]))
                member_ids = _member_ids(ctx, ctx.splits.target_train)
                train_feats = build_attack_dataset([target], [member_ids], train_pool, spec)
                val_feats = build_attack_dataset([target], [member_ids], val_pool, spec)
                target_for_test = target
            else:
                (models, member_sets, epochs, wms_before, wms_after, target_for_test, _r) = (
                    _scenario_shadow_models(ctx, cfg, scenario, rep, target, cache, jobs)
                )
                val_idx = _choose_validation_shadow(cfg, epochs)
                train_models = [m for i, m in enumerate(models) if i != val_idx]
                train_members = [s for i, s in enumerate(member_sets) if i != val_idx]
                train_feats = build_attack_dataset(
                    train_models, train_members, _pool_dataset(ctx, ctx.mc_train_pool), spec
                )
                val_feats = build_attack_dataset(
                    [models[val_idx]],
                    [member_sets[val_idx]],
                    _pool_dataset(ctx, ctx.mc_val_pool),
                    spec,
                )
            mc = train_meta_classifier(
                train_feats, val_feats, mc_config_from_cfg(cfg, rep), cfg.n_classes
            )
            test_feats = build_attack_dataset(
                [target_for_test], [test_member_ids], test_pool, spec
            )
            roc = evaluate(mc, test_feats)
        except ShadowAlignError:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise ScenarioError(f"rep{rep}", str(exc)) from exc
        rr = RepetitionResult(
            rep=rep,
            auc=roc.auc,
            tpr_at=dict(roc.tpr_at),
            seconds=time.perf_counter() - t0,
            wms_before=wms_before,
            wms_after=wms_after,
        )
        rr.roc = roc
        report.repetitions.append(rr)
    return report
