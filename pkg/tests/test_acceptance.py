"""Acceptance gate: one test per shipped guarantee, tolerances pinned.

Each test prints as a single pass/fail line under pytest -v.  Budgets
are wall-clock seconds measured with time.monotonic on the whole
criterion body.
"""

import time

import numpy as np
import pytest

from nestedsurf import cli
from nestedsurf.lme import fit_lme, simulate_cohort
from nestedsurf.mesher import marching_cubes, mesh_diagnostics
from nestedsurf.metrics import (PointSet, curvature_gradient,
                                gaussian_curvature, median_cg,
                                surface_distance,
                                surface_distance_bruteforce)
from nestedsurf.phantom import PhantomSpec, generate, inject_violations
from nestedsurf.sdf import (check_nesting, enforce_nesting,
                            signed_distance_from_mask)
from nestedsurf.volumetry import enclosed_volume, measure_nested
from nestedsurf.grid import BINARY_MASK, VoxelGrid

from conftest import (brute_force_edt_squared, icosahedron_mesh,
                      random_spacing, random_two_phase_mask, sphere_field)

SPHERE_MM3 = 33510.321638291124  # 4/3 pi 20^3


def _sphere_phantom(dims=(49, 49, 49), radii=(10.0, 15.0, 20.0)):
    return generate(PhantomSpec(kind="sphere", dims=dims,
                                spacing=(1.0, 1.0, 1.0), layers=radii))


def test_criterion_01_sdf_matches_brute_force_exactly():
    start = time.monotonic()
    rng = np.random.Generator(np.random.Philox(42001))
    for _ in range(50):
        mask = random_two_phase_mask(rng, max_side=16)
        spacing = random_spacing(rng)
        grid = VoxelGrid(mask.shape, spacing, (0.0, 0.0, 0.0),
                         mask.astype(np.uint8), BINARY_MASK)
        phi = signed_distance_from_mask(grid).values
        to_fg, to_bg = brute_force_edt_squared(mask != 0, spacing)
        assert np.array_equal(phi, np.sqrt(to_fg) - np.sqrt(to_bg))
    assert time.monotonic() - start < 10.0


def test_criterion_02_enforcement_repairs_all_seeded_corruptions():
    start = time.monotonic()
    clean = _sphere_phantom()
    in_pia = clean.pia.values
    rng = np.random.Generator(np.random.Philox(42002))
    for seed in range(100):
        count = int(rng.integers(1, 1001))
        magnitude = float(rng.uniform(0.1, 2.0))
        broken = inject_violations(clean, count, magnitude, seed=seed)
        in_ara = broken.arachnoid.values
        in_epi = broken.epidural.values
        fixed = enforce_nesting(*broken.layers())
        report = check_nesting(fixed)
        assert report.arachnoid_violations == 0
        assert report.epidural_violations == 0
        held = (in_pia >= in_ara) & (in_ara >= in_epi)
        assert np.array_equal(fixed.arachnoid.values[held], in_ara[held])
        assert np.array_equal(fixed.epidural.values[held], in_epi[held])
        again = enforce_nesting(*fixed.layers())
        for a, b in zip(fixed.layers(), again.layers()):
            assert a.values.tobytes() == b.values.tobytes()
    assert time.monotonic() - start < 30.0


def test_criterion_03_mesh_topology_and_total_curvature():
    closed = {
        "sphere": marching_cubes(_sphere_phantom().epidural),
        "ellipsoid": marching_cubes(generate(PhantomSpec(
            kind="ellipsoid", dims=(48, 48, 48), spacing=(1.0, 1.0, 1.0),
            layers=((8.0, 6.0, 5.0), (12.0, 9.0, 7.0),
                    (16.0, 12.0, 9.0)))).epidural),
    }
    torus = marching_cubes(generate(PhantomSpec(
        kind="torus", dims=(49, 49, 49), spacing=(1.0, 1.0, 1.0),
        layers=(15.0, 6.0))))
    for mesh in closed.values():
        diag = mesh_diagnostics(mesh)
        assert diag.euler_characteristic == 2
        assert diag.boundary_edge_count == 0
        assert diag.watertight
        total = gaussian_curvature(mesh).K.sum()
        assert abs(total - 4.0 * np.pi) <= 1e-6 * 4.0 * np.pi
    diag = mesh_diagnostics(torus)
    assert diag.euler_characteristic == 0
    assert diag.boundary_edge_count == 0
    field = gaussian_curvature(torus)
    assert abs(field.K.sum()) <= 1e-6 * np.abs(field.K).sum()


def test_criterion_04_sphere_mesh_accuracy_and_convergence():
    def radial_errors(dims, spacing):
        field = sphere_field((dims,) * 3, (spacing,) * 3, 20.0)
        mesh = marching_cubes(field)
        center = (dims - 1) / 2.0 * spacing
        radii = np.linalg.norm(mesh.vertices - center, axis=1)
        vol_err = abs(enclosed_volume(mesh) - SPHERE_MM3)
        return np.abs(radii - 20.0), vol_err

    coarse, vol_coarse = radial_errors(64, 1.0)
    assert coarse.max() < 0.5
    assert coarse.mean() < 0.1
    assert vol_coarse < 0.01 * SPHERE_MM3
    fine, vol_fine = radial_errors(128, 0.5)
    assert fine.mean() <= coarse.mean() / 2.0
    assert vol_fine <= vol_coarse / 2.0


def test_criterion_05_curvature_density_and_icosahedron_deficit():
    mesh = marching_cubes(sphere_field((64, 64, 64), (1.0, 1.0, 1.0), 20.0))
    field = gaussian_curvature(mesh)
    mean_density = field.K_density[~field.boundary].mean()
    assert mean_density == pytest.approx(0.0025, rel=0.05)
    deficits = gaussian_curvature(icosahedron_mesh()).K
    assert deficits == pytest.approx(np.pi / 3.0, abs=1e-12)


def test_criterion_06_curvature_gradient_separates_smooth_from_rough():
    base = sphere_field((64, 64, 64), (1.0, 1.0, 1.0), 20.0)
    rng = np.random.Generator(np.random.Philox(4242))
    noisy = base.with_values(base.values
                             + rng.uniform(-0.2, 0.2, base.values.shape))
    scores = []
    for field in (base, noisy):
        mesh = marching_cubes(field)
        curv = curvature_gradient(mesh, gaussian_curvature(mesh))
        scores.append(median_cg(curv))
    assert scores[0] * 5.0 <= scores[1]


def test_criterion_07_surface_distance_oracle_and_analytic():
    mesh = marching_cubes(sphere_field((64, 64, 64), (1.0, 1.0, 1.0), 20.0))
    rng = np.random.Generator(np.random.Philox(47007))
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = rng.uniform(15.0, 25.0, 100)
    xyz = 31.5 + dirs * radii[:, None]
    points = PointSet(tuple(range(100)), xyz)
    fast = surface_distance(points, mesh).distances
    slow = surface_distance_bruteforce(points, mesh)
    assert np.abs(fast - slow).max() <= 1e-9
    assert np.abs(fast - np.abs(radii - 20.0)).max() < 0.15


def test_criterion_08_nested_volumetry_analytic_values():
    layers = generate(PhantomSpec(kind="sphere", dims=(64, 64, 64),
                                  spacing=(1.0, 1.0, 1.0),
                                  layers=(10.0, 15.0, 20.0)))
    report = measure_nested(layers)
    sas_cm3 = 4.0 / 3.0 * np.pi * (15.0 ** 3 - 10.0 ** 3) / 1000.0
    assert report.sas_cm3 == pytest.approx(sas_cm3, rel=0.01)
    assert report.icv_cm3 == pytest.approx(SPHERE_MM3 / 1000.0, rel=0.01)


def test_criterion_09_lme_coverage_and_ols_agreement():
    start = time.monotonic()
    beta_true = np.array([1400.0, 150.0, -2.0, -1.5])
    psi = np.diag([100.0, 1.0])
    covered = np.zeros(4, dtype=np.int64)
    for rep in range(200):
        table = simulate_cohort(60, 4, beta_true, psi, 25.0,
                                seed=49000 + rep)
        fit = fit_lme(table, "icv")
        covered += np.abs(fit.beta - beta_true) <= 2.0 * fit.se
    assert (covered >= 190).all()

    table = simulate_cohort(60, 4, beta_true, psi, 25.0, seed=49000)
    pinned = fit_lme(table, "icv", random_effects=False)
    x = np.column_stack([np.ones(table.n_rows), table.sex,
                         table.baseline_age, table.interval])
    beta_ols, _, _, _ = np.linalg.lstsq(x, table.icv, rcond=None)
    resid = table.icv - x @ beta_ols
    sigma2 = float(resid @ resid) / (table.n_rows - 4)
    se_ols = np.sqrt(np.diag(sigma2 * np.linalg.inv(x.T @ x)))
    assert pinned.beta == pytest.approx(beta_ols, rel=1e-8)
    assert pinned.se == pytest.approx(se_ols, rel=1e-8)
    assert time.monotonic() - start < 60.0


def test_criterion_10_pipeline_determinism_at_scale(tmp_path):
    cfg = tmp_path / "large.cfg"
    cfg.write_text("kind = sphere\ndims = 256,256,256\n"
                   "spacing = 1.0,1.0,1.0\nradii = 60,80,100\n")
    phantom_dir = tmp_path / "phantom"
    phantom_dir.mkdir()
    assert cli.main(["phantom", "--spec", str(cfg),
                     "--out-dir", str(phantom_dir)]) == 0
    manifest = str(phantom_dir / "nested.manifest")

    outputs = ("pia.obj", "arachnoid.obj", "epidural.obj", "volumes.csv")
    runs = {}
    for label, extra in (("a", []), ("b", []),
                         ("t1", ["--threads", "1"]),
                         ("t4", ["--threads", "4"])):
        out = tmp_path / label
        out.mkdir()
        start = time.monotonic()
        assert cli.main(["pipeline", "--manifest", manifest,
                         "--out-dir", str(out)] + extra) == 0
        assert time.monotonic() - start < 30.0
        runs[label] = {name: (out / name).read_bytes() for name in outputs}
    assert runs["a"] == runs["b"] == runs["t1"] == runs["t4"]
