"""Acceptance suite: exact identities, brute-force oracles, and trend checks.

Each test prints one [PASS]/[FAIL] line (run with -s to see them). The heavy
fixtures (32-seed testbed sweeps) are shared across the trend criteria.
"""

import json
import os
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from lfcfg.cli import main as cli_main
from lfcfg.errors import ManifestError
from lfcfg.field import Field
from lfcfg.frequency import split
from lfcfg.guidance import (
    GuidanceConfig,
    VelocityPair,
    cfg_update,
    combination_update,
    downweight,
    lfcfg_update,
)
from lfcfg.metrics import clipped_fraction, saturation, toy_accumulation
from lfcfg.models import (
    GaussianMixtureModel,
    TestbedSpec,
    build_testbed,
    load_manifest,
    write_manifest,
)
from lfcfg.npyio import npy_bytes, parse_npy, read_field, write_bytes_atomic, write_field
from lfcfg.regions import ThresholdPolicy, low_change_mask, mask_fraction, threshold
from lfcfg.regions import change_map as region_change_map
from lfcfg.regions import rho_for
from lfcfg.sampler import compose_replay, run

RECORDER_DIR = os.environ.get(
    "LFCFG_PARITY_DIR", os.path.join(os.path.dirname(os.path.dirname(__file__)), "recorder")
)


def verdict(cid: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    assert ok, f"{cid}: {detail}"


def random_pair(rng, t, shape=(3, 16, 16)):
    return VelocityPair(Field(rng.standard_normal(shape)), Field(rng.standard_normal(shape)), t)


# ------------------------------------------------------------------ G1

def test_g1_reduction_identity():
    rng = np.random.default_rng(101)
    config = GuidanceConfig(w=0.0, policy=ThresholdPolicy(rho_mode="manual", rho_manual=1.0))
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        w = rng.uniform(0.0, 15.0)
        trial = GuidanceConfig(w=w, policy=config.policy)
        pair, prev = random_pair(rng, 0.5), random_pair(rng, 0.55)
        err = lfcfg_update(pair, prev, trial).max_abs_diff(cfg_update(pair, w))
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    verdict(
        "G1",
        worst <= 1e-12 and elapsed < 5.0,
        f"unit-rho reduction max|err|={worst:.2e} (<=1e-12) in {elapsed:.2f}s (<5s)",
    )


# ------------------------------------------------------------------ F2

def test_f2_exact_reconstruction():
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        f = Field(rng.standard_normal((3, 16, 16)))
        for s in (1, 2, 4, 8):
            parts = split(f, s)
            worst = max(worst, float(np.abs(parts.low.data + parts.high.data - f.data).max()))
    elapsed = time.perf_counter() - start
    verdict(
        "F2",
        worst <= 1e-15 and elapsed < 5.0,
        f"low+high reconstruction max|err|={worst:.2e} (<=1e-15) in {elapsed:.2f}s (<5s)",
    )


# ------------------------------------------------------------------ G3

def test_g3_update_equals_combination_three():
    rng = np.random.default_rng(103)
    config = GuidanceConfig(w=7.5)
    worst = 0.0
    for _ in range(100):
        pair, prev = random_pair(rng, 0.5), random_pair(rng, 0.55)
        low_uc = split(pair.v_uc, config.filter_scale).low
        low_c = split(pair.v_c, config.filter_scale).low
        r_uc = region_change_map(split(prev.v_uc, config.filter_scale).low, low_uc)
        r_c = region_change_map(split(prev.v_c, config.filter_scale).low, low_c)
        m_uc = low_change_mask(r_uc, threshold(r_uc, config.policy.k))
        m_c = low_change_mask(r_c, threshold(r_c, config.policy.k))
        rho = rho_for(config.policy, (mask_fraction(m_uc) + mask_fraction(m_c)) / 2)
        composed = combination_update(
            3, pair, downweight(low_uc, m_uc, rho), downweight(low_c, m_c, rho), config
        )
        worst = max(worst, composed.max_abs_diff(lfcfg_update(pair, prev, config)))
    verdict("G3", worst <= 1e-12, f"masked-difference recombination max|err|={worst:.2e} (<=1e-12)")


# ------------------------------------------------------------------ R4

def test_r4_gaussian_mask_fraction():
    rng = np.random.default_rng(104)
    fractions = []
    for _ in range(20):
        injected = rng.standard_normal((256, 256))
        gamma = threshold(injected, 1.0)
        fractions.append(mask_fraction(low_change_mask(injected, gamma)))
    mean = float(np.mean(fractions))
    # the mathematically forced value is Phi(1); the often-quoted two-thirds
    # capture figure does not apply to a one-sided mean+std cut
    print(f"      note: measured below-threshold fraction {mean:.4f} vs the ~0.667 folklore figure")
    verdict("R4", abs(mean - 0.8413) < 0.01, f"mean fraction {mean:.4f} within 0.8413±0.01")


# ------------------------------------------------------------------ M5

def _is_conditional(v, mu, sigma, t, n, rng):
    """Per-element E[x1-x0 | x_t=v] for one Gaussian class via importance sampling.

    Uses only the generative definition: propose x0 from the class, solve the
    interpolation for x1, weight by the standard-normal density of x1.
    """
    x0 = rng.normal(mu, sigma, size=(n,) + v.shape)
    x1 = (v - (1.0 - t) * x0) / t
    logw = -0.5 * x1 * x1
    logw -= logw.max(axis=0, keepdims=True)
    w = np.exp(logw)
    f = x1 - x0
    sw = w.sum(axis=0)
    est = (w * f).sum(axis=0) / sw
    se = np.sqrt((w * w * (f - est) ** 2).sum(axis=0)) / sw
    return est, se


def _is_mixture_scalar(v, mus, sigmas, priors, t, n, rng):
    """Scalar-mixture conditional expectation and class posterior via sampling."""
    k = rng.choice(len(mus), size=n, p=priors)
    x0 = rng.normal(np.take(mus, k), np.take(sigmas, k))
    x1 = (v - (1.0 - t) * x0) / t
    logw = -0.5 * x1 * x1
    logw -= logw.max()
    w = np.exp(logw)
    f = x1 - x0
    sw = w.sum()
    est = (w * f).sum() / sw
    se = np.sqrt((w * w * (f - est) ** 2).sum()) / sw
    p0 = w[k == 0].sum() / sw
    p0_se = np.sqrt((w * w * ((k == 0) - p0) ** 2).sum()) / sw
    return est, se, p0, p0_se


def test_m5_velocities_match_monte_carlo():
    """Closed-form velocities vs sampling oracles at three-sigma confidence.

    Per (class, t) the 64 per-element z-scores are tested jointly with a
    chi-square bound at the Phi(3) quantile; single-scalar checks use |z|<=3.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 100_000
    sigma = 0.5
    mu = np.stack([rng.normal(0, 0.5, (1, 8, 8)), rng.normal(0, 0.5, (1, 8, 8))])
    model_a = GaussianMixtureModel(mu, [sigma, sigma], [0.5, 0.5])
    chi_bound = stats.chi2.ppf(stats.norm.cdf(3.0), 64)

    worst_chi = 0.0
    for t in (0.1, 0.5, 0.9):
        for c in (0, 1):
            # evaluate each class at a point drawn from its own process so the
            # sampling proposal overlaps the conditioning event
            x0 = rng.normal(mu[c], sigma)
            x1 = rng.normal(0, 1, (1, 8, 8))
            v = (1 - t) * x0 + t * x1
            closed = model_a.conditional_velocity(Field(v), t, c).data
            est, se = _is_conditional(v, mu[c], sigma, t, n, rng)
            chi = float((((closed - est) / se) ** 2).sum())
            worst_chi = max(worst_chi, chi)

    # mixture posterior: means equal except one element, so the class weight is
    # a scalar-mixture quantity the sampler can estimate directly
    mu_b = mu[0].copy()
    star = (0, 3, 5)
    mu_b[star] += 1.2
    model_b = GaussianMixtureModel(np.stack([mu[0], mu_b]), [sigma, sigma], [0.5, 0.5])
    worst_z = 0.0
    for t in (0.1, 0.5, 0.9):
        x0 = rng.normal(mu[0], sigma)
        x1 = rng.normal(0, 1, (1, 8, 8))
        v = (1 - t) * x0 + t * x1
        closed = model_b.uncond_velocity(Field(v), t).data
        est, se, p0, p0_se = _is_mixture_scalar(
            v[star], [mu[0][star], mu_b[star]], [sigma, sigma], [0.5, 0.5], t, n, rng
        )
        worst_z = max(worst_z, abs(closed[star] - est) / se)
        p_closed = model_b.posterior_weights(Field(v), t)[0]
        worst_z = max(worst_z, abs(p_closed - p0) / max(p0_se, 1e-12))

    elapsed = time.perf_counter() - start
    verdict(
        "M5",
        worst_chi <= chi_bound and worst_z <= 3.0 and elapsed < 60.0,
        f"conditional chi2 max {worst_chi:.1f} (<= {chi_bound:.1f}), mixture |z| max "
        f"{worst_z:.2f} (<=3) in {elapsed:.1f}s (<60s)",
    )


# ------------------------------------------------------------------ shared testbed runs

@pytest.fixture(scope="module")
def testbed_runs():
    model = build_testbed(TestbedSpec())
    cache = {}

    def sweep(tag, config):
        if tag not in cache:
            sats, clips = [], []
            for seed in range(32):
                final = run(model, config, 20, seed=seed, condition=0).final
                sats.append(saturation(final))
                clips.append(clipped_fraction(final))
            cache[tag] = (np.asarray(sats), np.asarray(clips))
        return cache[tag]

    return sweep


# ------------------------------------------------------------------ M6

def test_m6_directional_oversaturation(testbed_runs):
    start = time.perf_counter()
    s1, c1 = testbed_runs("cfg-1", GuidanceConfig(w=1.0, mode="cfg"))
    s5, c5 = testbed_runs("cfg-5", GuidanceConfig(w=5.0, mode="cfg"))
    s15, c15 = testbed_runs("cfg-15", GuidanceConfig(w=15.0, mode="cfg"))
    sl, cl = testbed_runs("lfcfg-15", GuidanceConfig(w=15.0, mode="lfcfg"))
    elapsed = time.perf_counter() - start
    ok = (
        s15.mean() > s1.mean()
        and sl.mean() < s15.mean()
        and c1.mean() < c5.mean() < c15.mean()  # clipped mass grows monotonically in w
        and cl.mean() < c15.mean()
        and elapsed < 120.0
    )
    verdict(
        "M6",
        ok,
        "saturation cfg(w=1)=%.4f < cfg(w=15)=%.4f, lfcfg(w=15)=%.4f < cfg(w=15); "
        "clipped %.4f < %.4f < %.4f, lfcfg %.4f < %.4f; %.0fs (<120s)"
        % (
            s1.mean(),
            s15.mean(),
            sl.mean(),
            c1.mean(),
            c5.mean(),
            c15.mean(),
            cl.mean(),
            c15.mean(),
            elapsed,
        ),
    )


# ------------------------------------------------------------------ D7

def test_d7_zeroing_diagnostics(testbed_runs):
    s15, _ = testbed_runs("cfg-15", GuidanceConfig(w=15.0, mode="cfg"))
    s_low, _ = testbed_runs("diag-low-15", GuidanceConfig(w=15.0, mode="diag-zero-low-change"))
    s_high, _ = testbed_runs("diag-high-15", GuidanceConfig(w=15.0, mode="diag-zero-high-change"))
    reduces = s_low.mean() < s15.mean()
    diff = s15 - s_high
    within_noise = diff.mean() <= 2.0 * diff.std()
    verdict(
        "D7",
        reduces and within_noise,
        "zero-low-change %.4f < cfg %.4f; zero-high-change reduction %.4f <= 2*std %.4f"
        % (s_low.mean(), s15.mean(), diff.mean(), 2.0 * diff.std()),
    )


# ------------------------------------------------------------------ T8

def test_t8_toy_accumulation():
    value = toy_accumulation(7.5, 20, 0.1)
    verdict("T8", value == 15.5, f"toy accumulation 0.5 + 7.5*20*0.1 = {value!r} (== 15.5)")


# ------------------------------------------------------------------ I9

def test_i9_npy_round_trip_and_manifest_rejection(tmp_path):
    rng = np.random.default_rng(109)
    f = Field(rng.standard_normal((3, 8, 8)))
    path = tmp_path / "f.npy"
    write_field(f, str(path))
    first = path.read_bytes()
    write_field(read_field(str(path)), str(path))
    bit_exact = path.read_bytes() == first

    def session(mutate=None, drop=None, swap_file=None):
        root = tmp_path / f"m{session.counter}"
        session.counter += 1
        root.mkdir()
        steps = []
        for i in range(2):
            uc, c = f"uc_{i}.npy", f"c_{i}.npy"
            write_bytes_atomic(str(root / uc), npy_bytes(rng.standard_normal((1, 4, 4)), "float64"))
            write_bytes_atomic(str(root / c), npy_bytes(rng.standard_normal((1, 4, 4)), "float64"))
            steps.append({"t": 1.0 - 0.3 * i, "v_uc": uc, "v_c": c})
        mpath = root / "manifest.json"
        write_manifest(str(mpath), "float64", (1, 4, 4), steps, "crafted")
        if drop:
            (root / drop).unlink()
        if swap_file:
            name, arr, dtype = swap_file
            write_bytes_atomic(str(root / name), npy_bytes(arr, dtype))
        if mutate:
            doc = json.loads(mpath.read_text())
            mutate(doc)
            mpath.write_text(json.dumps(doc))
        return str(mpath)

    session.counter = 0

    def swap_t(doc):
        doc["steps"][0]["t"], doc["steps"][1]["t"] = doc["steps"][1]["t"], doc["steps"][0]["t"]

    def bad_keys(doc):
        doc["apocrypha"] = True

    crafted = [
        ("missing tensor file", session(drop="c_1.npy"), "missing tensor file"),
        ("non-monotone t", session(mutate=swap_t), "decreasing"),
        ("tensor shape mismatch", session(swap_file=("uc_0.npy", np.zeros((1, 2, 2)), "float64")), "shape"),
        ("tensor dtype mismatch", session(swap_file=("uc_0.npy", np.zeros((1, 4, 4)), "float32")), "dtype"),
        ("unknown manifest keys", session(mutate=bad_keys), "keys"),
    ]
    rejected = 0
    for label, mpath, needle in crafted:
        try:
            load_manifest(mpath)
        except ManifestError as exc:
            if needle in str(exc):
                rejected += 1
            else:
                print(f"      {label}: rejected but message lacks {needle!r}: {exc}")
    verdict(
        "I9",
        bit_exact and rejected == 5,
        f"float64 round-trip bit-exact={bit_exact}, {rejected}/5 crafted manifests rejected with named errors",
    )


# ------------------------------------------------------------------ A10

def test_a10_threshold_ablation(tmp_path):
    """Ablation over the threshold multiplier must not saturate more at k=1 than k=3."""
    config = {
        "backend": {"kind": "analytic"},
        "guidance": {"w": 10.0, "mode": "lfcfg"},
        "steps": 20,
        "seeds": list(range(32)),
        "jobs": 1,
    }
    config_path = tmp_path / "ablate.json"
    config_path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = cli_main(
        [
            "ablate",
            "--config",
            str(config_path),
            "--out",
            str(out),
            "--axis",
            "k",
            "--values",
            "1,3",
        ]
    )
    assert code == 0
    rows = (out / "ablate.csv").read_text().splitlines()
    cells = {float(r.split(",")[1]): float(r.split(",")[2]) for r in rows[1:]}
    verdict(
        "A10",
        cells[1.0] <= cells[3.0],
        f"ablation saturation k=1 {cells[1.0]:.4f} <= k=3 {cells[3.0]:.4f}",
    )


# ------------------------------------------------------------------ P11 / P12 (cross-implementation parity)

def _parity_paths():
    cases = os.path.join(RECORDER_DIR, "parity", "cases.json")
    sessions_root = os.path.join(RECORDER_DIR, "sessions")
    session = None
    if os.path.isdir(sessions_root):
        for name in sorted(os.listdir(sessions_root)):
            if os.path.exists(os.path.join(sessions_root, name, "manifest.json")):
                session = os.path.join(sessions_root, name)
                break
    return (cases if os.path.exists(cases) else None), session


def _guidance_from_doc(doc):
    policy = ThresholdPolicy(
        k=float(doc.get("k", 1.0)),
        rho_mode=doc.get("rho_mode", "paper-fixed"),
        rho_manual=doc.get("rho_manual"),
    )
    return GuidanceConfig(
        w=float(doc["w"]),
        mode="lfcfg",
        filter_scale=int(doc.get("filter_scale", 8)),
        combination=int(doc.get("combination", 3)),
        policy=policy,
        first_step=doc.get("first_step", "uncond"),
    )


def test_p11_cross_implementation_parity(tmp_path):
    cases_path, session = _parity_paths()
    if cases_path is None and session is None:
        pytest.skip("notice: no recorded session or parity cases present; build the recorder first")

    worst_ratio = 0.0
    checked = 0
    if cases_path is not None:
        base = os.path.dirname(cases_path)
        for case in json.loads(open(cases_path).read()):
            fields = {
                key: read_field(os.path.join(base, case["files"][key]))
                for key in ("v_uc", "v_c", "prev_uc", "prev_c", "expected")
            }
            pair = VelocityPair(fields["v_uc"], fields["v_c"], float(case["t"]))
            prev = VelocityPair(fields["prev_uc"], fields["prev_c"], float(case["prev_t"]))
            ours = lfcfg_update(pair, prev, _guidance_from_doc(case)).data
            if case.get("dtype", "float32") == "float32":
                err = float(np.abs(ours.astype(np.float32) - fields["expected"].data.astype(np.float32)).max())
                tolerance = 1e-5
            else:
                err = float(np.abs(ours - fields["expected"].data).max())
                tolerance = 1e-10
            worst_ratio = max(worst_ratio, err / tolerance)
            checked += 1

    if session is not None:
        config_doc = json.loads(open(os.path.join(session, "config.json")).read())
        model = load_manifest(os.path.join(session, "manifest.json"))
        composed = compose_replay(model, _guidance_from_doc(config_doc))
        for index, _, velocity, _ in composed:
            ref = read_field(os.path.join(session, f"composed_{index:03d}.npy"))
            ours32 = velocity.data.astype(np.float32)
            err = float(np.abs(ours32 - ref.data.astype(np.float32)).max())
            worst_ratio = max(worst_ratio, err / 1e-5)
            checked += 1

        # the CLI re-export must be byte-identical to the narrowed library output
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            code = cli_main(
                [
                    "replay",
                    "--manifest",
                    os.path.join(session, "manifest.json"),
                    "--out",
                    str(out),
                    "--w",
                    str(config_doc["w"]),
                    "--scale",
                    str(config_doc.get("filter_scale", 8)),
                    "--k",
                    str(config_doc.get("k", 1.0)),
                ]
            )
            assert code == 0
        for index, _, velocity, _ in composed:
            name = f"composed_{index:03d}.npy"
            file_a = (out_a / name).read_bytes()
            assert file_a == (out_b / name).read_bytes(), "re-export not reproducible"
            assert file_a == npy_bytes(velocity.data, "float32"), "re-export differs from library"

    verdict(
        "P11",
        worst_ratio <= 1.0,
        f"{checked} parity checks, worst error at {worst_ratio:.3f} of tolerance "
        "(1e-5 float32, 1e-10 float64)",
    )


def test_p12_recorder_output_loads_cleanly():
    _, session = _parity_paths()
    if session is None:
        pytest.skip("notice: no recorded session present; build the recorder first")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = load_manifest(os.path.join(session, "manifest.json"))
    tensor_files = [f for f in os.listdir(session) if f.startswith("v_") and f.endswith(".npy")]
    verdict(
        "P12",
        len(caught) == 0 and len(tensor_files) == 2 * model.steps,
        f"loaded {model.steps} steps, {len(tensor_files)} tensor files, {len(caught)} warnings",
    )
