"""Acceptance criteria, one test each; results are summarised at the end of the run.

Every test records ``(passed, detail)`` in ``conftest.ACCEPTANCE`` before
asserting, so the summary shows a PASS or FAIL line per criterion.
"""

import math

import numpy as np
import pytest

import conftest
from oracles import brute_force_lambda, hard_rod_lambda0
from spacingchains import cli
from spacingchains.chains import (GridSampler, HarmonicSampler, IIDSampler, RenewalLaw,
                                  autocorrelation, batch_means_se, sample_gibbs_path,
                                  sample_harmonic_path, sample_renewal_path)
from spacingchains.correlations import growth_rate_alpha, second_moment_ergodic, second_moment_palm
from spacingchains.models import harmonic_derive, make_hard_rod, make_square_well
from spacingchains.regeneration import (embedded_walk_stats, find_minorisation, iid_row_chain,
                                        simulate_split, tau_tail_diagnostics, verify_certificate)
from spacingchains.renewal import blackwell_gap, decreasing_within_noise, estimate_renewal, fit_decay
from spacingchains.transfer import (GridSpec, exp_moment_growth_bound, gibbs_free_energy,
                                    gibbs_model, harmonic_model, solve_pressure)

pytestmark = pytest.mark.acceptance

ROD = make_hard_rod(1.0)
WELL = make_square_well(1.0, 2.5, -0.5)
H = harmonic_derive(1.0, 0.3, 1.0, 1.0)
SHIFTS = np.array([2.0, 5.0, 10.0, 20.0])
UNIT = (0.0, 1.0)


def record(key, ok, detail):
    conftest.ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def rod_model():
    return gibbs_model(ROD, 1.0, 1.0, GridSpec(n_nodes=512))


@pytest.fixture(scope="module")
def well_model():
    return gibbs_model(WELL, 1.0, 1.0, GridSpec(n_nodes=512))


@pytest.fixture(scope="module")
def h_model():
    return harmonic_model(H, n_nodes=256)


def test_1_transfer_eigen_oracle():
    m = gibbs_model(ROD, 1.0, 1.0, GridSpec(n_nodes=512, z_max=41.0))
    lam = m.eigen.lambda0
    exact = hard_rod_lambda0(1.0, 1.0, 1.0, 41.0)
    z = m.grid.nodes
    phi = m.eigen.phi0 / np.linalg.norm(m.eigen.phi0)
    ref = np.exp(-z / 2)
    ref /= np.linalg.norm(ref)
    rel = float(np.max(np.abs(phi - ref) / ref))
    lam_err = abs(lam - math.exp(-1.0))
    ok = lam_err < 1e-9 and rel < 1e-6
    record("1 transfer eigen oracle", ok,
           f"|lambda0 - e^-1| = {lam_err:.2e} (truncated exact {abs(lam - exact):.2e}), "
           f"max rel err phi0 = {rel:.2e}")


def test_2_pressure_inversion():
    p = solve_pressure(ROD, 1.0, 0.5, GridSpec(n_nodes=512))
    record("2 pressure inversion", abs(p - 1.0) < 1e-6, f"p = {p:.12f}")


def test_3_harmonic_stationary_law():
    z = sample_harmonic_path(H, 10**6, seed=3).z
    mean, se_mean = z.mean(), batch_means_se(z)
    dev = (z - mean) ** 2
    var, se_var = dev.mean(), batch_means_se(dev)
    u = z - mean
    prod = u[:-1] * u[1:] / var
    lag1, se_lag = prod.mean(), batch_means_se(prod)
    checks = [abs(mean - 1.0) < 3 * se_mean, abs(var - 0.674199) < 3 * se_var,
              abs(lag1 + 0.194601) < 3 * se_lag]
    record("3 harmonic stationary law", all(checks),
           f"mean {mean:.5f} (se {se_mean:.1e}), var {var:.5f} (se {se_var:.1e}), "
           f"lag-1 {lag1:.5f} (se {se_lag:.1e})")


def test_4_minorisation_validity(rod_model, well_model, h_model):
    parts, ok = [], True
    for name, model in [("hard rod", rod_model), ("square well", well_model), ("harmonic", h_model)]:
        cert = find_minorisation(model)
        slack = verify_certificate(model, cert)
        brute = min(brute_force_lambda(model.matrix, cert.r, cert.regen_set, cert.nu), 1.0)
        Pr = np.linalg.matrix_power(model.matrix, cert.r)
        direct = float(np.min(Pr - cert.lambda_min * cert.nu[None, :]))
        good = slack >= -1e-12 and direct >= -1e-12 and cert.lambda_min <= brute + 1e-12
        ok &= good
        parts.append(f"{name}: r={cert.r} lambda={cert.lambda_min:.4f} |R|={cert.regen_set.size} "
                     f"slack={direct:.1e}")
    record("4 minorisation validity", ok, "; ".join(parts))


def test_5_regeneration_tails(well_model, h_model):
    synth = iid_row_chain(64, 0.3)
    _, rec = simulate_split(synth, find_minorisation(synth), 10**4, seed=5)
    t_syn = tau_tail_diagnostics(rec)
    target = -math.log(0.7)
    ok = abs(t_syn.rate - target) <= 0.1 * target
    parts = [f"synthetic rate {t_syn.rate:.4f} vs {target:.4f}"]
    # the square-well tail decays fast enough that 1e4 cycles leave fewer than five usable points
    for name, model, n in [("harmonic", h_model, 10**4), ("square well", well_model, 10**5)]:
        _, rec = simulate_split(model, find_minorisation(model), n, seed=6)
        tail = tau_tail_diagnostics(rec)
        ok &= tail.slope < 0 and tail.r_squared > 0.98
        parts.append(f"{name} slope {tail.slope:.4f} R2 {tail.r_squared:.5f}")
    record("5 regeneration tails", ok, "; ".join(parts))


def test_6_embedded_walk(well_model, h_model):
    ok, parts = True, []
    for name, model in [("square well", well_model), ("harmonic", h_model)]:
        _, rec = simulate_split(model, find_minorisation(model), 2 * 10**4, seed=7)
        w = embedded_walk_stats(rec, model.emitted_mean())
        good = abs(w.acf1) <= w.acf_halfwidth and abs(w.drift_gap) <= 3 * w.drift_se
        ok &= good
        parts.append(f"{name}: acf1 {w.acf1:+.4f} (+-{w.acf_halfwidth:.4f}), "
                     f"drift {w.mean:.4f} vs {w.drift_target:.4f} (gap {w.drift_gap:+.1e}, se {w.drift_se:.1e})")
    record("6 embedded walk i.i.d.", ok, "; ".join(parts))


def test_7_blackwell_limit(rod_model):
    t = np.arange(2.0, 30.01, 0.5)
    est = estimate_renewal(GridSampler(rod_model), t, 0.5, 10**4, seed=8)
    dev = blackwell_gap(est, 1.0, 2.0)
    far = t >= 20
    fit = fit_decay(dev.t, dev.deviation, dev.stderr)
    checks = [decreasing_within_noise(dev.deviation, dev.stderr),
              bool(np.all(np.abs(dev.deviation[far]) <= 4 * dev.stderr[far])),
              fit.positive_or_below_noise]
    record("7 Blackwell limit", all(checks),
           f"max |dev|/se for t>=20: {np.max(np.abs(dev.deviation[far]) / dev.stderr[far]):.2f}; "
           f"decreasing within noise: {checks[0]}; fit: {fit.status} rate {fit.rate:.3g}")


def test_8_negative_direction_renewal():
    t = np.arange(-15.0, -5 * H.stat_sd + 1e-9, 0.5)
    est = estimate_renewal(HarmonicSampler(H), t, 0.5, 10**4, seed=9)
    ok = bool(np.all(np.abs(est.u_hat) <= 4 * est.stderr))
    record("8 negative-direction renewal", ok,
           f"{t.size} bins t <= {t.max():.3f}: max u_hat {est.u_hat.max():.2e}")


def _cov_checks(name, sampler, path, n_rep, seed):
    palm = second_moment_palm(sampler, UNIT, UNIT, SHIFTS, n_rep, seed=seed)
    erg = second_moment_ergodic(path, UNIT, UNIT, SHIFTS)
    agree = bool(np.all(np.abs(palm.cov_hat - erg.cov_hat) <= 4 * np.hypot(palm.stderr, erg.stderr)))
    far = abs(palm.cov_hat[-1]) <= 4 * palm.stderr[-1] and abs(erg.cov_hat[-1]) <= 4 * erg.stderr[-1]
    env = (decreasing_within_noise(palm.cov_hat, palm.stderr)
           and decreasing_within_noise(erg.cov_hat, erg.stderr))
    detail = (f"{name}: palm {np.array2string(palm.cov_hat, precision=4)}, "
              f"ergodic {np.array2string(erg.cov_hat, precision=4)}")
    return agree and far and env, detail


def test_9_covariance_decay(rod_model):
    ok_r, d_r = _cov_checks("hard rod", GridSampler(rod_model),
                            sample_gibbs_path(rod_model, 2 * 10**6, seed=10), 10**5, 11)
    ok_h, d_h = _cov_checks("harmonic", HarmonicSampler(H),
                            sample_harmonic_path(H, 2 * 10**6, seed=12), 4 * 10**4, 13)
    poisson = IIDSampler(RenewalLaw.exponential(1.0))
    palm = second_moment_palm(poisson, UNIT, UNIT, SHIFTS, 4 * 10**4, seed=14)
    erg = second_moment_ergodic(sample_renewal_path(RenewalLaw.exponential(1.0), 10**6, seed=15),
                                UNIT, UNIT, SHIFTS)
    ok_p = bool(np.all(np.abs(palm.cov_hat) <= 4 * palm.stderr) and
                np.all(np.abs(erg.cov_hat) <= 4 * erg.stderr))
    record("9 covariance decay", ok_r and ok_h and ok_p,
           f"{d_r}; {d_h}; poisson max |cov|/se palm "
           f"{np.max(np.abs(palm.cov_hat) / palm.stderr):.2f} ergodic {np.max(np.abs(erg.cov_hat) / erg.stderr):.2f}")


@pytest.fixture(scope="module")
def rod_alpha(rod_model):
    return growth_rate_alpha(GridSampler(rod_model), [0.1, 0.25], 400, 10**4, seed=16)


def test_10_exponential_moment_bound_as_stated(rod_alpha):
    # bound evaluated exactly as written: lambda_0 at the raised pressure p + delta
    spec = GridSpec(n_nodes=512)
    parts, ok = [], True
    for d, a in zip(rod_alpha.delta, rod_alpha.richardson):
        g0 = gibbs_free_energy(ROD, 1.0, 1.0, spec)
        g1 = gibbs_free_energy(ROD, 1.0, 1.0 + 2 * (d / 2), spec)
        bound = g1 - g0
        ok &= a <= bound + 0.02
        parts.append(f"delta {d}: alpha {a:.4f} vs bound {bound:.4f}")
    record("10 exponential-moment bound (as stated)", ok, "; ".join(parts))


def test_10_exponential_moment_bound_lowered_pressure(rod_alpha):
    parts, ok = [], True
    for d, a in zip(rod_alpha.delta, rod_alpha.richardson):
        bound = exp_moment_growth_bound(ROD, 1.0, 1.0, d / 2, GridSpec(n_nodes=512))
        ok &= a <= bound + 0.02
        parts.append(f"delta {d}: alpha {a:.4f} vs bound {bound:.4f}")
    record("10b exponential-moment bound (pressure p - delta)", ok, "; ".join(parts))


ACCEPTANCE_RUNS = {
    "eigen": "grid:\n  n_nodes: 512\n  z_max: 41.0\n",
    "pressure": "grid:\n  n_nodes: 512\nexperiment:\n  target_intensity: 0.5\n",
    "sample": "model:\n  kind: harmonic\nexperiment:\n  n: 100000\nseed: 3\n",
    "regen": "model:\n  kind: harmonic\nexperiment:\n  n_cycles: 10000\nseed: 6\n",
    "renewal": "grid:\n  n_nodes: 512\nexperiment:\n  n_replicas: 10000\n  q: 0.5\nseed: 8\n",
    "cov": "grid:\n  n_nodes: 512\nexperiment:\n  n_replicas: 20000\n  path_length: 200000\nseed: 11\n",
    "alpha": "grid:\n  n_nodes: 512\nexperiment:\n  n_replicas: 4000\n  alpha_n: 400\nseed: 16\n",
}


def test_11_determinism(tmp_path):
    bad = []
    for cmd, text in ACCEPTANCE_RUNS.items():
        cfg = tmp_path / f"{cmd}.yaml"
        cfg.write_text(text)
        outs = []
        for label, threads in [("a", 1), ("b", 8), ("c", 8)]:
            out = tmp_path / f"{cmd}-{label}"
            assert cli.main([cmd, "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
            outs.append((out / f"{cmd}.csv").read_bytes())
        if not (outs[0] == outs[1] == outs[2]):
            bad.append(cmd)
    record("11 determinism", not bad,
           f"{len(ACCEPTANCE_RUNS)} commands, 1 vs 8 threads and repeat: "
           + ("byte-identical" if not bad else f"differs for {bad}"))
