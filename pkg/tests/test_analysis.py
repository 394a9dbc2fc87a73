import time

import numpy as np
import pytest

from sonar_llm.analysis import (ArchShape, FlopsModel, crossover_length, crossover_search, decoder_flops,
                                encoder_flops, fit_scaling_law, flops_csv, flops_sonar_llm,
                                flops_sonar_llm_steps, flops_table, flops_token_llm, flops_token_llm_steps,
                                linear_scan_crossover, quadratic_coefficients)
from sonar_llm.errors import ContractError
from sonar_llm.model import ConceptModelConfig, count_params

N_TRAINABLE = np.array([11e6, 34e6, 170e6, 450e6, 700e6])
REFERENCE_FITS = {
    "llm": (4.06e5, 0.791, 1.24),
    "mse_lcm": (3.21e4, 0.515, 199.0),
    "diffusion_lcm": (1.58e5, 0.485, 84.0),
    "sonar_llm": (2.09e3, 0.569, 1.73),
}

LLM_600M = ArchShape(24, 1280, 20, 4)
CONCEPT_600M = ArchShape(24, 1280, 20, 4, d_embed=1024)
CODEC_SHAPE = ArchShape(24, 1024, 16, 4)


def fm600(lam=60):
    return FlopsModel(CONCEPT_600M, CODEC_SHAPE, CODEC_SHAPE, lam)


def synth(row, noise=0.0, seed=11):
    a, alpha, b = REFERENCE_FITS[row]
    loss = a * N_TRAINABLE ** -alpha + b
    if noise:
        loss = loss * (1 + noise * np.random.default_rng(seed).normal(size=loss.size))
    return list(zip(N_TRAINABLE, loss))


@pytest.mark.parametrize("row", sorted(REFERENCE_FITS))
def test_fit_recovers_noise_free_rows(row):
    fit = fit_scaling_law(synth(row))
    a, alpha, b = REFERENCE_FITS[row]
    assert abs(fit.alpha - alpha) < 1e-3
    assert fit.r2 > 0.99999
    y = np.array([p[1] for p in synth(row)])
    resid = np.max(np.abs(fit.predict(N_TRAINABLE) - y) / y)
    assert resid < 1e-9
    assert fit.a == pytest.approx(a, rel=1e-6) and fit.b == pytest.approx(b, rel=1e-6)


def test_fit_noisy_llm_row():
    fit = fit_scaling_law(synth("llm", noise=0.01))
    assert fit.r2 >= 0.995
    assert fit.alpha > 0


def test_fit_degenerate_constant_losses():
    fit = fit_scaling_law([(n, 2.5) for n in N_TRAINABLE])
    assert fit.degenerate and fit.a == 0.0 and fit.b == 2.5 and fit.r2 == 1.0


def test_fit_contract_errors():
    with pytest.raises(ContractError):
        fit_scaling_law([(1e6, 3.0), (2e6, 2.0), (3e6, 1.0)])
    with pytest.raises(ContractError):
        fit_scaling_law([(1e6, 3.0), (1e6, 2.0), (3e6, 1.0), (4e6, 1.0)])
    with pytest.raises(ContractError):
        fit_scaling_law([(1e6, 3.0), (2e6, -2.0), (3e6, 1.0), (4e6, 1.0)])


def test_fit_is_fast():
    t0 = time.perf_counter()
    for row in REFERENCE_FITS:
        fit_scaling_law(synth(row))
    assert time.perf_counter() - t0 < 1.0


def test_arch_shape_params_match_count_params():
    cfg = ConceptModelConfig(d_model=1280, n_layers=24, n_heads=20, ffn_mult=4, d_embed=1024)
    assert CONCEPT_600M.params == count_params(cfg)
    assert LLM_600M.params == count_params(cfg, kind="token")


def test_token_flops_single_step_and_brute_force():
    p, w = LLM_600M.params, LLM_600M.n_layers * LLM_600M.d_model
    assert flops_token_llm(LLM_600M, 1) == 2 * p + 4 * w
    for t in (1, 2, 59, 60, 61, 1000, 12345):
        loop = sum(2 * p + 4 * w * k for k in range(1, t + 1))
        assert flops_token_llm(LLM_600M, t) == loop == flops_token_llm_steps(LLM_600M, t)


def test_token_flops_quadratic_regime():
    ratio = flops_token_llm(LLM_600M, 2 ** 20) / flops_token_llm(LLM_600M, 2 ** 19)
    assert abs(ratio - 4) / 4 < 0.05


def test_sonar_flops_boundaries_and_brute_force():
    fm = fm600()
    one = flops_sonar_llm(fm, 60)
    assert flops_sonar_llm(fm, 1) == one
    assert flops_sonar_llm(fm, 61) > one
    per = encoder_flops(CODEC_SHAPE, 60) + decoder_flops(CODEC_SHAPE, 60)
    assert one == 2 * CONCEPT_600M.params + 4 * CONCEPT_600M.attn_width + per
    for t in (1, 59, 60, 61, 1000, 12345):
        assert flops_sonar_llm(fm, t) == flops_sonar_llm_steps(fm, t)


@pytest.mark.parametrize("lam", [1, 7, 60, 128])
def test_quadratic_coefficient_ratio(lam):
    tok, son = quadratic_coefficients(LLM_600M, fm600(lam))
    assert abs(son / tok - 1 / lam ** 2) <= 1e-9 / lam ** 2


def test_asymptotic_cost_ratio_small_shapes():
    # the quadratic attention term must dominate the linear 2P term by 2^20
    tok = ArchShape(1, 8, 2, 4)
    core = ArchShape(2, 8, 2, 4, d_embed=4)
    codec = ArchShape(1, 4, 2, 1)
    lam = 16
    fm = FlopsModel(core, codec, codec, lam)
    t = 2 ** 20
    expected = (core.attn_width / tok.attn_width) / lam ** 2
    assert abs(flops_sonar_llm(fm, t) / flops_token_llm(tok, t) / expected - 1) < 0.01


def test_crossover_600m():
    cross = crossover_search(LLM_600M, fm600(), 16384)
    assert cross.length is not None and 1024 <= cross.length <= 16384
    assert not cross.fallback
    assert flops_sonar_llm(fm600(), cross.length) < flops_token_llm(LLM_600M, cross.length)
    assert flops_sonar_llm(fm600(), cross.length - 1) >= flops_token_llm(LLM_600M, cross.length - 1)


def test_crossover_lambda_one_has_none():
    fm = FlopsModel(ArchShape(24, 1280, 20, 4, d_embed=1280), CODEC_SHAPE, CODEC_SHAPE, 1)
    assert crossover_length(LLM_600M, fm, 100_000) is None


@pytest.mark.parametrize("lam", [20, 60, 90])
def test_crossover_matches_linear_scan(lam):
    assert crossover_length(LLM_600M, fm600(lam), 100_000) == linear_scan_crossover(LLM_600M, fm600(lam), 100_000)


def test_flops_table_matches_scalar_forms():
    ts = np.array([1, 2, 59, 60, 61, 4096, 2 ** 20])
    llm, son = flops_table(LLM_600M, fm600(), ts)
    assert llm.tolist() == [flops_token_llm(LLM_600M, int(t)) for t in ts]
    assert son.tolist() == [flops_sonar_llm(fm600(), int(t)) for t in ts]


def test_flops_csv_grids():
    text = flops_csv(LLM_600M, fm600(), 1000, "pow2")
    lines = text.splitlines()
    assert lines[0] == "T,flops_llm,flops_sonar"
    assert [int(r.split(",")[0]) for r in lines[1:]] == [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1000]
    lin = flops_csv(LLM_600M, fm600(), 10, "linear", stride=4).splitlines()[1:]
    assert [int(r.split(",")[0]) for r in lin] == [4, 8, 10]


def test_flops_csv_full_linear_grid_is_fast():
    t0 = time.perf_counter()
    text = flops_csv(LLM_600M, fm600(), 2 ** 20, "linear")
    assert time.perf_counter() - t0 < 5.0
    assert text.count("\n") == 2 ** 20 + 1
