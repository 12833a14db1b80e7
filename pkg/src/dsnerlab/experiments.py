"""Canned experiment matrices: the ablation benchmark and the noise sweep.

These are the desk-scale counterparts of the reported comparisons: four
training arms (full method, no uncertainty gate, no student transfer,
plain dual self-training) on a dictionary-annotated synthetic corpus, and
a label-corruption sweep comparing the full method against the plain
baseline across noise ratios. Scripts under scripts/ and the acceptance
suite both drive these.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

from .config import ConfigFile, ExperimentConfig
from .distant_supervision import (
    GeneratorConfig,
    NoiseSpec,
    generate_synthetic,
    inject_noise,
    match_dataset,
    split_dataset,
)
from .engine import run_experiment
from .rng import STREAM_NOISE, derive_seed

ARMS = ("full", "no_utl", "no_scl", "vanilla")


def benchmark_generator(seed: int, train_sentences: int = 2000) -> GeneratorConfig:
    """Default synthetic benchmark: dictionary coverage 0.7, ambiguity 0.2,
    many distinct multi-token surfaces so that coverage gaps create genuinely
    conflicted token evidence rather than memorizable exceptions."""
    return GeneratorConfig(
        seed=seed,
        train_sentences=train_sentences,
        dev_sentences=300,
        test_sentences=400,
        surfaces_per_type=300,
        tokens_per_type=24,
        surface_len_min=2,
        surface_len_max=3,
        trigger_prob=0.8,
        coverage=0.7,
        ambiguity=0.2,
    )


def benchmark_experiment(seed: int, total_epochs: int = 16,
                         pretrain_epochs: int = 12) -> ExperimentConfig:
    """Training recipe calibrated for the synthetic benchmark scale."""
    return ExperimentConfig(
        seed=seed,
        lr=3e-3,
        batch_size=32,
        ema_alpha=0.99,
        warmup_steps=20,
        total_epochs=total_epochs,
        pretrain_epochs=pretrain_epochs,
        sigma_co=0.5,
        sigma_ua=0.02,
        mc_passes=8,
        dropout_rate=0.3,
        scl_delta=0.3,
        update_cycle=126,
        net1_hidden=48,
        net1_window=2,
        net2_hidden=24,
        net2_window=1,
    )


def apply_arm(exp: ExperimentConfig, arm: str) -> ExperimentConfig:
    if arm == "full":
        return exp
    if arm == "no_utl":
        return exp.without_utl()
    if arm == "no_scl":
        return exp.without_scl()
    if arm == "vanilla":
        return exp.without_utl().without_scl()
    raise ValueError(f"unknown arm {arm!r}")


def run_benchmark_arm(seed: int, arm: str, train_sentences: int = 2000,
                      datasets: Optional[tuple] = None,
                      **exp_overrides) -> dict:
    """One (seed, arm) cell of the ablation matrix; returns the run record.

    `datasets` may carry a prebuilt (train_ds, dev, test) triple so multiple
    arms can share one generated corpus.
    """
    gen = benchmark_generator(seed, train_sentences)
    if datasets is None:
        datasets = build_benchmark_datasets(gen)
    train_ds, dev, test = datasets
    exp = benchmark_experiment(seed)
    if exp_overrides:
        exp = exp.replace(**exp_overrides)
    exp = apply_arm(exp.replace(run_name=f"{arm}_seed{seed}"), arm)
    out = run_experiment(ConfigFile(exp, gen), train=train_ds, dev=dev, test=test)
    return out.result


def build_benchmark_datasets(gen: GeneratorConfig):
    clean, gazetteer = generate_synthetic(gen)
    train_clean, dev, test = split_dataset(clean, gen)
    return match_dataset(train_clean, gazetteer), dev, test


def run_ablation_matrix(seeds, train_sentences: int = 2000,
                        arms=ARMS, progress=None, **exp_overrides) -> dict:
    """{arm: {seed: run record}} over a shared corpus per seed."""
    results: dict = {arm: {} for arm in arms}
    for seed in seeds:
        gen = benchmark_generator(seed, train_sentences)
        datasets = build_benchmark_datasets(gen)
        for arm in arms:
            record = run_benchmark_arm(seed, arm, train_sentences,
                                       datasets=datasets, **exp_overrides)
            results[arm][seed] = record
            if progress is not None:
                progress(arm, seed, record)
    return results


def sweep_generator(seed: int, train_sentences: int = 800) -> GeneratorConfig:
    gen = benchmark_generator(seed, train_sentences)
    # clean corpus only; the sweep corrupts it directly, so dictionary
    # coverage is irrelevant here
    return gen


def sweep_experiment(seed: int) -> ExperimentConfig:
    return benchmark_experiment(seed, total_epochs=10, pretrain_epochs=10).replace(
        update_cycle=0)


def run_noise_matrix(seeds, ratios, arms=("full", "vanilla"),
                     train_sentences: int = 800, progress=None) -> dict:
    """{arm: {ratio: {seed: run record}}} on clean corpora with injected noise."""
    results: dict = {arm: {r: {} for r in ratios} for arm in arms}
    for seed in seeds:
        gen = sweep_generator(seed, train_sentences)
        clean, _ = generate_synthetic(gen)
        train_clean, dev, test = split_dataset(clean, gen)
        for ratio in ratios:
            spec = NoiseSpec(float(ratio), "mixed",
                             seed=derive_seed(seed, STREAM_NOISE))
            noisy = inject_noise(train_clean, spec)
            for arm in arms:
                exp = apply_arm(
                    sweep_experiment(seed).replace(
                        run_name=f"{arm}_k{ratio}_seed{seed}"),
                    arm)
                gen_echo = dataclasses.replace(gen, noise_ratio=float(ratio))
                out = run_experiment(ConfigFile(exp, gen_echo),
                                     train=noisy, dev=dev, test=test)
                results[arm][ratio][seed] = out.result
                if progress is not None:
                    progress(arm, ratio, seed, out.result)
    return results
