"""Experiment orchestration: configs, test-case presets, and the commands.

Each command is a pure function of an ExperimentConfig (plus prior command
outputs) producing files under an output directory together with a manifest
listing every file with its content hash.  All randomness flows through
explicit seeds, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import fast, gp
from .design import HyperBox, lhs_design, multistart_fit, write_trace_csv
from .fields import ScalarField3D, atomic_write_text, fmt17
from .kernels import HyperParams, SourceParams, WaveKernel
from .oracle import (SphericalRule, dalembert_residuals, is_smooth_point,
                     kv_wave_quadrature, ku_wave_quadrature, lp_relative_error,
                     matern_radial_base)
from .sim import (FieldHistory, InitialCondition, SensorDataset, SimConfig,
                  add_noise, run_simulation, sample_sensors)

DEFAULT_SIM = SimConfig(L=1.0, dx=0.043, dt=1.0 / 200.0, c=0.5, T=1.5)

# Optimization domains per number of enabled components.
SINGLE_COMPONENT_BOX = HyperBox(
    lower=[0.0, 0.0, 0.0, 0.03, 0.02, 0.1, 0.2, 1e-8],
    upper=[1.0, 1.0, 1.0, 0.50, 2.00, 5.0, 0.8, 1e-2])
DOUBLE_COMPONENT_BOX = HyperBox(
    lower=[0.0, 0.0, 0.0, 0.05, 0.02, 0.1] * 2 + [0.2, 1e-8],
    upper=[1.0, 1.0, 1.0, 0.40, 2.00, 5.0] * 2 + [0.8, 1e-2])


def case_ics(case):
    """Initial conditions (u0, v0) of the three standard test cases."""
    if case == 1:
        return (InitialCondition("raised_cosine", x0=[0.65, 0.3, 0.5],
                                 radii=(0.25,), amplitude=5.0),
                InitialCondition("zero"))
    if case == 2:
        return (InitialCondition("zero"),
                InitialCondition("ring_cosine", x0=[0.3, 0.6, 0.7],
                                 radii=(0.05, 0.15), amplitude=50.0))
    if case == 3:
        return (InitialCondition("raised_cosine", x0=[0.65, 0.3, 0.5],
                                 radii=(0.25,), amplitude=2.5),
                InitialCondition("ring_cosine", x0=[0.3, 0.6, 0.7],
                                 radii=(0.05, 0.15), amplitude=30.0))
    raise ValueError(f"unknown test case {case}")


def case_theta(case, noise_sigma=0.09):
    """Reference hyperparameters supplied in the known-theta experiments."""
    lam = noise_sigma**2
    u1 = SourceParams(x0=[0.65, 0.3, 0.5], radius=0.3, rho=0.2, sigma2=3.0)
    v2 = SourceParams(x0=[0.3, 0.6, 0.7], radius=0.15, rho=0.03, sigma2=3.0)
    if case == 1:
        return HyperParams(c=0.5, u=u1, lam=lam)
    if case == 2:
        return HyperParams(c=0.5, v=v2, lam=lam)
    if case == 3:
        u3 = replace(u1, sigma2=0.3)
        return HyperParams(c=0.5, u=u3, v=v2, lam=lam)
    raise ValueError(f"unknown test case {case}")


def default_box(components):
    return SINGLE_COMPONENT_BOX if len(components) == 1 else DOUBLE_COMPONENT_BOX


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: simulation, sensing, fitting and reconstruction."""

    test_case: int = 1
    sim: SimConfig = DEFAULT_SIM
    n_sensors: int = 30
    sensor_bounds: tuple = (0.2, 0.8)
    layout_seed: int = 7
    layout_restarts: int = 40
    sensor_positions: tuple = None
    sample_rate: float = 50.0
    noise_sigma: float = 0.09
    noise_seed: int = 11
    fit_n_mult: int = 20
    fit_seed: int = 13
    fit_max_evals: int = 600
    fit_tol: float = 1e-4
    dx_grid: float = 0.02
    dt_v: float = 1e-7

    def sensors(self):
        if self.sensor_positions is not None:
            return np.asarray(self.sensor_positions, dtype=float).reshape(-1, 3)
        lo, hi = self.sensor_bounds
        return lhs_design(self.n_sensors, [lo] * 3, [hi] * 3,
                          restarts=self.layout_restarts, seed=self.layout_seed)

    def components(self):
        return {1: ("u",), 2: ("v",), 3: ("u", "v")}[self.test_case]

    def to_json(self):
        blob = {
            "test_case": self.test_case,
            "sim": {"L": self.sim.L, "dx": self.sim.dx, "dt": self.sim.dt,
                    "c": self.sim.c, "T": self.sim.T,
                    "abc_order": self.sim.abc_order},
            "n_sensors": self.n_sensors,
            "sensor_bounds": list(self.sensor_bounds),
            "layout_seed": self.layout_seed,
            "layout_restarts": self.layout_restarts,
            "sample_rate": self.sample_rate,
            "noise_sigma": self.noise_sigma,
            "noise_seed": self.noise_seed,
            "fit_n_mult": self.fit_n_mult,
            "fit_seed": self.fit_seed,
            "fit_max_evals": self.fit_max_evals,
            "fit_tol": self.fit_tol,
            "dx_grid": self.dx_grid,
            "dt_v": self.dt_v,
        }
        if self.sensor_positions is not None:
            blob["sensor_positions"] = np.asarray(
                self.sensor_positions, dtype=float).tolist()
        return json.dumps(blob, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        blob = json.loads(text)
        sim = blob.pop("sim", None)
        kwargs = {}
        if sim is not None:
            kwargs["sim"] = SimConfig(**sim)
        for key in ("test_case", "n_sensors", "layout_seed", "layout_restarts",
                    "sample_rate", "noise_sigma", "noise_seed", "fit_n_mult",
                    "fit_seed", "fit_max_evals", "fit_tol", "dx_grid", "dt_v"):
            if key in blob:
                kwargs[key] = blob[key]
        if "sensor_bounds" in blob:
            kwargs["sensor_bounds"] = tuple(blob["sensor_bounds"])
        if "sensor_positions" in blob:
            kwargs["sensor_positions"] = tuple(
                tuple(p) for p in blob["sensor_positions"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def theta_to_json(params: HyperParams):
    blob = {"c": params.c, "lam": params.lam, "alpha_cut": params.alpha_cut}
    for name in params.components:
        src = getattr(params, name)
        blob[name] = {"x0": list(src.x0), "radius": src.radius,
                      "rho": src.rho, "sigma2": src.sigma2}
    return json.dumps(blob, sort_keys=True, indent=1)


def theta_from_json(text):
    blob = json.loads(text)
    def block(name):
        if name not in blob:
            return None
        b = blob[name]
        return SourceParams(x0=b["x0"], radius=b["radius"], rho=b["rho"],
                            sigma2=b["sigma2"])
    return HyperParams(c=blob["c"], u=block("u"), v=block("v"),
                       lam=blob.get("lam", 0.0),
                       alpha_cut=blob.get("alpha_cut", 0.8))


class Manifest:
    """Collects output files and writes a hash manifest."""

    def __init__(self, outdir):
        self.outdir = outdir
        self.entries = {}
        self.meta = {}
        os.makedirs(outdir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.outdir, name)

    def register(self, *names):
        for name in names:
            with open(self.path(name), "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            self.entries[name] = digest

    def write(self, name="manifest.json"):
        blob = {"files": self.entries, **self.meta}
        atomic_write_text(self.path(name), json.dumps(blob, sort_keys=True,
                                                      indent=1) + "\n")


def cmd_simulate(config: ExperimentConfig, outdir):
    """Run the FDTD, sample sensors, add noise, persist everything."""
    manifest = Manifest(outdir)
    u0, v0 = case_ics(config.test_case)
    history = run_simulation(config.sim, u0, v0, sample_rate=config.sample_rate)
    for k in range(len(history.times)):
        prefix = manifest.path(f"snapshot_{k:04d}")
        history.snapshot_field(k).save(prefix)
        manifest.register(f"snapshot_{k:04d}.bin", f"snapshot_{k:04d}.json")
    dataset = cmd_sample(config, history, manifest=manifest)
    manifest.meta["n_observations"] = dataset.n
    manifest.meta["n_sensors"] = dataset.q
    manifest.meta["n_times"] = dataset.n_times
    atomic_write_text(manifest.path("config.json"), config.to_json() + "\n")
    manifest.register("config.json")
    manifest.write()
    return history, dataset


def cmd_sample(config: ExperimentConfig, history: FieldHistory, manifest=None,
               outdir=None):
    """Sensor sampling plus seeded noise; writes sensors.csv."""
    if manifest is None:
        if outdir is None:
            raise ValueError("cmd_sample needs a manifest or an outdir")
        manifest = Manifest(outdir)
    clean = sample_sensors(history, config.sensors())
    noisy = add_noise(clean, config.noise_sigma, config.noise_seed)
    noisy.to_csv(manifest.path("sensors.csv"))
    manifest.register("sensors.csv")
    if outdir is not None:
        manifest.write()
    return noisy


def cmd_fit(config: ExperimentConfig, dataset: SensorDataset, outdir,
            theta_true: HyperParams = None, box: HyperBox = None):
    """Hyperparameter estimation (or pass-through when n_mult = 0).

    With ``fit_n_mult = 0`` the supplied theta is passed through unchanged
    (the known-theta mode); otherwise multistart likelihood minimization
    runs over the box.  Writes the trace CSV, the selected theta, and a
    summary row of the estimated base-kernel hyperparameters.
    """
    manifest = Manifest(outdir)
    components = config.components()
    if config.fit_n_mult == 0:
        if theta_true is None:
            raise ValueError("pass-through fit requires a supplied theta")
        best, trace = theta_true, []
    else:
        if box is None:
            box = default_box(components)
        best, trace = multistart_fit(
            dataset, components, box, n_mult=config.fit_n_mult,
            seed=config.fit_seed, tol=config.fit_tol,
            max_evals=config.fit_max_evals)
    atomic_write_text(manifest.path("theta.json"), theta_to_json(best) + "\n")
    write_trace_csv(trace, components, manifest.path("fit_trace.csv"))
    summary = ["case,n_sensors," + ",".join(
        f"{f}_{c}" for c in components for f in ("rho", "sigma2")) + ",lam"]
    row = [str(config.test_case), str(dataset.q)]
    for name in components:
        src = getattr(best, name)
        row.extend([fmt17(src.rho), fmt17(src.sigma2)])
    row.append(fmt17(best.lam))
    summary.append(",".join(row))
    atomic_write_text(manifest.path("fit_summary.csv"), "\n".join(summary) + "\n")
    manifest.register("theta.json", "fit_trace.csv", "fit_summary.csv")
    manifest.write()
    return best, trace


def reconstruction_grid(config: ExperimentConfig):
    n = int(round(config.sim.L / config.dx_grid)) + 1
    return ScalarField3D.zeros(np.zeros(3), config.dx_grid, (n, n, n))


def cmd_reconstruct(config: ExperimentConfig, dataset: SensorDataset,
                    theta: HyperParams, outdir):
    """Initial-condition reconstruction on the grid.

    u0 is the posterior mean at t = 0; v0 the forward difference
    (m(x, dt_v) - m(x, 0)) / dt_v.  Grid evaluation goes through the
    light-cone-pruned fast prediction, so points outside the admissible
    shells are exact zeros.
    """
    manifest = Manifest(outdir)
    kernel = WaveKernel(theta)
    x, t = dataset.points()
    model = gp.fit_posterior(kernel, x, t, dataset.values, theta.lam)
    grid = reconstruction_grid(config)
    pts = grid.points()
    zero_t = np.zeros(pts.shape[0])
    mean0 = fast.posterior_mean(model, pts, zero_t)
    mean_dt = fast.posterior_mean(model, pts, zero_t + config.dt_v)
    u_field = grid.like(mean0)
    v_field = grid.like((mean_dt - mean0) / config.dt_v)
    u_field.save(manifest.path("u0_recon"))
    v_field.save(manifest.path("v0_recon"))
    manifest.register("u0_recon.bin", "u0_recon.json",
                      "v0_recon.bin", "v0_recon.json")
    manifest.write()
    return u_field, v_field, model


def render_truth(config: ExperimentConfig):
    """True initial conditions rendered on the reconstruction grid."""
    u0, v0 = case_ics(config.test_case)
    grid = reconstruction_grid(config)
    pts = grid.points()
    return grid.like(u0.eval(pts)), grid.like(v0.eval(pts))


def cmd_errors(config: ExperimentConfig, u_field, v_field, outdir,
               ps=(1, 2, np.inf)):
    """Relative Lp errors of the reconstructed fields against the truth."""
    manifest = Manifest(outdir)
    u_truth, v_truth = render_truth(config)
    lines = ["field,p,rel_error"]
    report = {}
    for name, approx, truth in (("u0", u_field, u_truth),
                                ("v0", v_field, v_truth)):
        for p in ps:
            if truth.norm(p) == 0.0:
                continue
            err = lp_relative_error(approx, truth, p)
            report[(name, p)] = err
            lines.append(f"{name},{p},{fmt17(err)}")
    atomic_write_text(manifest.path("errors.csv"), "\n".join(lines) + "\n")
    manifest.register("errors.csv")
    manifest.write()
    return report


def scan_limit_profile(dataset: SensorDataset, scan_points, c, radius,
                       lam=None, alpha=0.8, chunk=8192):
    """Point-source objective on scan candidates.

    Evaluates the small-lambda limit profile |W|^2 (1 - r(x0)^2) (or the
    regularized rank-one likelihood when ``lam`` is given) against the
    mollified Green traces at each candidate source position.
    """
    scan_points = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    w = dataset.values
    w2 = float(w @ w)
    if w2 == 0.0:
        raise ValueError("degenerate scan: all-zero observation traces")
    times = dataset.times
    out = np.empty(scan_points.shape[0])
    wmat = dataset.traces()
    for lo in range(0, scan_points.shape[0], chunk):
        block = scan_points[lo: lo + chunk]
        # distances (m, q)
        dist = np.linalg.norm(block[:, None, :] - dataset.positions[None, :, :],
                              axis=2)
        fw = np.zeros(block.shape[0])
        f2 = np.zeros(block.shape[0])
        for k, t in enumerate(times):
            fk = fast.regularized_green(dist, t, c, radius, alpha)
            fw += fk @ wmat[:, k]
            f2 += np.einsum("mq,mq->m", fk, fk)
        if lam is None:
            vals = w2 * (1.0 - np.where(f2 > 0.0, fw * fw / (
                np.where(f2 > 0.0, f2, 1.0) * w2), 0.0))
        else:
            n = dataset.n
            vals = (w2 / lam * (1.0 - fw * fw / (w2 * (lam + f2)))
                    + (n - 1) * np.log(lam) + np.log(lam + f2))
        out[lo: lo + chunk] = vals
    return out


def cmd_pointsource_scan(dataset: SensorDataset, scan_grid: ScalarField3D,
                         radius, c, lam, outdir, mode="limit"):
    """Scan the point-source likelihood over a grid and locate the argmin."""
    manifest = Manifest(outdir)
    pts = scan_grid.points()
    vals = scan_limit_profile(dataset, pts, c, radius,
                              lam=None if mode == "limit" else lam)
    volume = scan_grid.like(vals)
    volume.save(manifest.path("scan_volume"))
    best = int(np.argmin(vals))
    result = {"argmin_index": best,
              "argmin_point": [fmt17(v) for v in pts[best]],
              "argmin_value": fmt17(vals[best]),
              "mode": mode}
    atomic_write_text(manifest.path("scan_argmin.json"),
                      json.dumps(result, sort_keys=True, indent=1) + "\n")
    manifest.register("scan_volume.bin", "scan_volume.json",
                      "scan_argmin.json")
    manifest.write()
    return volume, pts[best]


def _verify_kernel_psd(params, seed=0, n=40, tamper=False):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, (n, 3))
    t = rng.uniform(0.0, 1.4, n)
    kernel = WaveKernel(params)
    kmat = gp.assemble_covariance(kernel, x, t)
    if tamper:
        kmat = -kmat
    eig_min = float(np.linalg.eigvalsh(kmat).min())
    bound = -1e-8 * max(float(kmat.diagonal().max()), 1e-30)
    return {"name": "kernel_psd", "measured": eig_min, "tolerance": bound,
            "passed": bool(eig_min >= bound)}


def _verify_oracle_match(params, order=24, n_pairs=6, seed=1):
    rng = np.random.default_rng(seed)
    rule = SphericalRule.product(order)
    worst = 0.0
    for _ in range(n_pairs):
        x0 = rng.uniform(0.3, 0.7, 3)
        src = SourceParams(x0=x0, radius=np.inf, rho=rng.uniform(0.4, 1.2),
                           sigma2=rng.uniform(0.5, 3.0))
        z = (x0 + rng.normal(size=3) * 0.2, rng.uniform(0.1, 1.0))
        zp = (x0 + rng.normal(size=3) * 0.2, rng.uniform(0.1, 1.0))
        from .kernels import ku_wave_radial, kv_wave_radial
        closed_v = kv_wave_radial([z[0]], [z[1]], [zp[0]], [zp[1]],
                                  params.c, src)[0, 0]
        quad_v = kv_wave_quadrature(matern_radial_base(src, "v"), z, zp,
                                    params.c, rule)
        closed_u = ku_wave_radial([z[0]], [z[1]], [zp[0]], [zp[1]],
                                  params.c, src, params.alpha_cut)[0, 0]
        quad_u = ku_wave_quadrature(matern_radial_base(src, "u"), z, zp,
                                    params.c, rule)
        for closed, quad in ((closed_v, quad_v), (closed_u, quad_u)):
            if abs(closed) > 1e-12:
                worst = max(worst, abs(quad - closed) / abs(closed))
    return {"name": "oracle_equivalence", "measured": worst,
            "tolerance": 1e-4, "passed": bool(worst <= 1e-4)}


def _verify_pde_residual(params, seed=2, n_points=40, step=1e-3):
    rng = np.random.default_rng(seed)
    zp_x = getattr(params, params.components[0]).x0 + 0.21
    zp_t = 0.8

    def slice_fn(x, t):
        return WaveKernel(params).pairwise(x, t, [zp_x], [zp_t])[:, 0]

    xs, ts = [], []
    while len(ts) < n_points:
        x = rng.uniform(0.0, 1.0, 3)
        t = rng.uniform(0.1, 1.3)
        if (is_smooth_point(params, [x], [t], step)[0]
                and WaveKernel(params).diag([x], [t])[0] > 1e-6):
            xs.append(x)
            ts.append(t)
    res = dalembert_residuals(slice_fn, np.array(xs), np.array(ts), params.c,
                              step)
    worst = float(res.max())
    return {"name": "pde_residual_kernel_slice", "measured": worst,
            "tolerance": 5e-2, "passed": bool(worst <= 5e-2)}


def _verify_lp_stability():
    from .oracle import lp_stability_check
    from .sim import InitialCondition

    u0 = InitialCondition("raised_cosine", x0=[0, 0, 0], radii=(0.25,),
                          amplitude=5.0)
    v0 = InitialCondition("ring_cosine", x0=[0, 0, 0], radii=(0.05, 0.15),
                          amplitude=50.0)
    t = 0.5
    extent = 0.3 + 0.5 * t + 0.1
    n = int(2 * extent / 0.02) + 1
    grid = ScalarField3D.zeros([-extent] * 3, 2 * extent / (n - 1), (n, n, n))
    rep = lp_stability_check(u0, v0, 0.5, t, 2, grid)
    ratio = max(rep["v_lhs"] / max(rep["v_rhs"], 1e-300),
                rep["u_lhs"] / max(rep["u_rhs"], 1e-300))
    return {"name": "lp_stability", "measured": ratio, "tolerance": 1.02,
            "passed": bool(rep["v_ok"] and rep["u_ok"])}


def _verify_rank_one_limit():
    rng = np.random.default_rng(4)
    f = rng.normal(size=30)
    w = rng.normal(size=30)
    lim = fast.limit_profile(fast.RankOneData(f, w, 1.0))
    gaps = [abs(lam * fast.rank_one_nll(fast.RankOneData(f, w, lam)) - lim)
            for lam in (1e-2, 1e-4, 1e-6)]
    return {"name": "rank_one_limit", "measured": gaps[-1],
            "tolerance": 1e-4 * float(w @ w),
            "passed": bool(gaps[0] > gaps[1] > gaps[2]
                           and gaps[-1] <= 1e-4 * float(w @ w))}


def cmd_verify(selector="fast", outdir=None, kernel_params=None,
               quad_order=24, tamper_psd=False):
    """Machine-readable invariant checks (values vs tolerances).

    ``selector`` picks the suite depth: "fast" runs the kernel PSD, oracle
    equivalence and PDE residual checks at small sizes; "full" adds the Lp
    stability and rank-one limit checks.  Failures are reported as
    entries, never raised.
    """
    params = kernel_params
    if params is None:
        params = HyperParams(
            c=0.5,
            u=SourceParams(x0=[0.65, 0.3, 0.5], radius=0.3, rho=0.2, sigma2=3.0),
            v=SourceParams(x0=[0.3, 0.6, 0.7], radius=0.15, rho=0.03, sigma2=3.0),
            lam=0.0081)
    checks = [_verify_kernel_psd(params, tamper=tamper_psd)]
    if selector in ("fast", "full"):
        checks.append(_verify_oracle_match(params, order=quad_order))
        checks.append(_verify_pde_residual(params))
    if selector == "full":
        checks.append(_verify_lp_stability())
        checks.append(_verify_rank_one_limit())
    report = {"selector": selector,
              "passed": all(c["passed"] for c in checks),
              "checks": checks}
    if outdir is not None:
        manifest = Manifest(outdir)
        atomic_write_text(manifest.path("verify.json"),
                          json.dumps(report, sort_keys=True, indent=1,
                                     default=float) + "\n")
        manifest.register("verify.json")
        manifest.write()
    return report
