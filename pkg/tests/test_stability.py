import math

import numpy as np
import pytest

from kinwass import growth, kinetic, stability, transport, vlasov
from kinwass.stability import (BoundConfig, StabilityReport, a_of_t,
                               apply_perturbation, bound_curve,
                               closed_form_bounds, diagonal_plan,
                               interpolation_check, j_of_t, loeper_lp_probe,
                               osgood_check, run_twin_experiment,
                               run_vpb_twin, surrogate_phi_inv, vpb_j_tilde)


def make_cfg(family="bounded", p=2, d=1, **kw):
    if family == "bounded":
        gf = growth.bounded()
    elif family == "orlicz1":
        gf = growth.orlicz(1)
    else:
        gf = growth.iterlog(1)
    consts = growth.default_constants(gf, p, d)
    return BoundConfig(p=p, gf=gf, consts=consts, d=d, **kw)


class TestCoefficients:
    def test_a_of_t_p1(self):
        assert a_of_t(2.0, 3.0, 1) == pytest.approx(3.0)

    def test_a_of_t_p2(self):
        # max(2,2)^{3/2} * 2^{1/2} = 2^2
        assert a_of_t(2.0, 2.0, 2) == pytest.approx(4.0)

    def test_a_of_t_floors_at_one(self):
        assert a_of_t(0.5, 0.2, 1) == 1.0

    def test_j_of_t_zero_amplitude(self):
        cfg = make_cfg(p=2)
        assert j_of_t(cfg, 0.0) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            j_of_t(cfg, -1.0)

    def test_j_of_t_p1_affine_in_a(self):
        cfg = make_cfg(p=1)
        a = 3.0
        # J(2A) - J(0) = 2 (J(A) - J(0)) exactly for p = 1
        assert j_of_t(cfg, 2 * a) - j_of_t(cfg, 0.0) == pytest.approx(
            2 * (j_of_t(cfg, a) - j_of_t(cfg, 0.0)), rel=1e-13)

    def test_j_of_t_constant_factors(self):
        cfg = make_cfg(p=2)
        c = cfg.consts
        expect = 2.0 * (1.0 + 2 * (0.5 + c.c_phi) * c.c_log * c.c_bar
                        * 1.0 * math.exp(0.5)
                        * 2 * math.exp(0.5) * cfg.c_d * cfg.c_hw_max)
        assert j_of_t(cfg, 1.0) == pytest.approx(expect, rel=1e-13)

    def test_vpb_reduces_to_j_without_field_terms(self):
        gfb = growth.bounded()
        cb = growth.default_constants(gfb, 2, 2)
        cfg = make_cfg(p=2, d=2, b_sup=0.0, c_b=0.0, gf_bar=gfb,
                       consts_bar=cb)
        # zero field constants, zero moment/history: only J remains
        assert vpb_j_tilde(cfg, 1.0, 0.5, 0.0, 0.0) == pytest.approx(
            j_of_t(cfg, 1.0))

    def test_vpb_requires_constants(self):
        cfg = make_cfg(p=2, d=2)
        with pytest.raises(ValueError):
            vpb_j_tilde(cfg, 1.0, 0.0, 0.0, 0.0)

    def test_vpb_additive_term_positive(self):
        gfb = growth.bounded()
        cb = growth.default_constants(gfb, 2, 2)
        cfg = make_cfg(p=2, d=2, b_sup=0.5, c_b=1.0, gf_bar=gfb,
                       consts_bar=cb)
        assert vpb_j_tilde(cfg, 1.0, 1.0, 0.3, 0.7) > j_of_t(cfg, 1.0)


class TestBoundCurves:
    def test_surrogate_regime_errors(self):
        cfg = make_cfg()
        with pytest.raises(growth.RegimeError):
            surrogate_phi_inv(cfg, 0.5)          # above c_small
        with pytest.raises(growth.RegimeError):
            surrogate_phi_inv(cfg, cfg.consts.c_small)  # G0 lands above c

    def test_bound_curve_starts_at_adjusted_value(self):
        cfg = make_cfg()
        w0 = 1e-10
        curve = bound_curve(w0, lambda t: 0.1 * t, cfg)
        g0 = surrogate_phi_inv(cfg, w0)
        assert curve(0.0) == pytest.approx(g0, rel=1e-9)
        assert curve(0.0) >= w0

    def test_bound_curve_nondecreasing(self):
        cfg = make_cfg()
        curve = bound_curve(1e-10, lambda t: 0.1 * t, cfg)
        ts = np.linspace(0, 3, 20)
        vals = [curve(t) for t in ts]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_bound_curve_budget_exhaustion(self):
        cfg = make_cfg()
        curve = bound_curve(1e-10, lambda t: 10.0 * t, cfg)
        with pytest.raises(growth.RegimeError):
            curve(100.0)

    def test_admissibility_horizon_monotone_in_w0(self):
        cfg = make_cfg()

        def horizon(w0):
            curve = bound_curve(w0, lambda t: 0.5 * t, cfg)
            lo, hi = 0.0, 1e6
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                try:
                    curve(mid)
                    lo = mid
                except growth.RegimeError:
                    hi = mid
            return lo

        assert horizon(1e-14) > horizon(1e-8) > horizon(1e-5)

    @pytest.mark.parametrize("family,gf,kw", [
        ("bounded", growth.bounded(), {}),
        ("orlicz", growth.orlicz(2), {"alpha": 2}),
        ("orlicz1", growth.orlicz(1), {}),
    ])
    def test_closed_forms_match_integral_machinery(self, family, gf, kw):
        p = 2
        consts = growth.default_constants(gf, p, 1)
        cfg = BoundConfig(p=p, gf=gf, consts=consts, d=1)
        w0 = 1e-10
        jint = lambda t: 0.2 * t
        curve_int = bound_curve(w0, jint, cfg)
        curve_cf = closed_form_bounds(family, w0, jint, p, **kw)
        for t in (0.0, 0.5, 1.5, 3.0):
            assert curve_cf(t) == pytest.approx(curve_int(t), rel=1e-8)

    def test_iterlog_closed_form_n1(self):
        gf = growth.iterlog(1)
        p = 2
        consts = growth.default_constants(gf, p, 1)
        cfg = BoundConfig(p=p, gf=gf, consts=consts, d=1)
        w0 = 1e-12
        jint = lambda t: 0.05 * t
        curve_int = bound_curve(w0, jint, cfg)
        curve_cf = closed_form_bounds("iterlog", w0, jint, p, n=1)
        for t in (0.0, 0.4, 1.0, 2.0):
            assert curve_cf(t) == pytest.approx(curve_int(t), rel=1e-8)

    def test_iterlog_closed_form_n2(self):
        gf = growth.iterlog(2)
        p = 2
        consts = growth.default_constants(gf, p, 1)
        cfg = BoundConfig(p=p, gf=gf, consts=consts, d=1)
        w0 = 1e-40
        jint = lambda t: 0.01 * t
        curve_int = bound_curve(w0, jint, cfg)
        curve_cf = closed_form_bounds("iterlog", w0, jint, p, n=2)
        for t in (0.0, 0.5, 1.0):
            assert curve_cf(t) == pytest.approx(curve_int(t), rel=1e-8)

    def test_closed_form_validation(self):
        with pytest.raises(ValueError):
            closed_form_bounds("bounded", 2.0, lambda t: t, 2)
        with pytest.raises(ValueError):
            closed_form_bounds("orlicz", 1e-8, lambda t: t, 2, alpha=1)
        with pytest.raises(ValueError):
            closed_form_bounds("weird", 1e-8, lambda t: t, 2)


class TestOsgood:
    def test_ode_agrees_with_psi(self):
        gf = growth.bounded()
        consts = growth.default_constants(gf, 1, 1)
        out = osgood_check(1e-8, lambda t: 0.3, gf, 1, consts, t_max=2.0)
        assert out["status"] == "ok"
        assert out["max_rel_err"] < 1e-6

    def test_orlicz_agrees(self):
        gf = growth.orlicz(1)
        consts = growth.default_constants(gf, 1, 1)
        out = osgood_check(1e-10, lambda t: 0.2 + 0.1 * t, gf, 1, consts,
                           t_max=1.5)
        assert out["status"] == "ok"
        assert out["max_rel_err"] < 1e-6

    def test_budget_exceeded(self):
        gf = growth.bounded()
        consts = growth.default_constants(gf, 1, 1)
        out = osgood_check(1e-4, lambda t: 50.0, gf, 1, consts, t_max=5.0)
        assert out["status"] == "budget_exceeded"

    def test_g0_validation(self):
        gf = growth.bounded()
        consts = growth.default_constants(gf, 1, 1)
        with pytest.raises(ValueError):
            osgood_check(0.5, lambda t: 0.1, gf, 1, consts, t_max=1.0)


class TestProbes:
    def test_loeper_identical_densities(self):
        rho = 1.0 + 0.2 * np.cos(2 * np.pi * np.arange(128) / 128)
        kv = kinetic.KineticValue(s=1e-6, lam=10.0, cx=1e-7, cv=0.0,
                                  in_regime=True)
        gf = growth.bounded()
        consts = growth.default_constants(gf, 2, 1)
        out = loeper_lp_probe(rho, rho, 2, gf, consts, kv)
        assert out["status"] == "ok"
        assert out["lhs"] == 0.0
        assert out["ratio"] == 0.0

    def test_loeper_regime_gate(self):
        rho = np.ones(64)
        kv = kinetic.KineticValue(s=0.5, lam=1.0, cx=0.0, cv=0.5,
                                  in_regime=False)
        gf = growth.bounded()
        consts = growth.default_constants(gf, 2, 1)
        out = loeper_lp_probe(rho, rho, 2, gf, consts, kv)
        assert out["status"] == "out_of_regime"

    def test_loeper_needs_p_above_one(self):
        kv = kinetic.KineticValue(s=1e-6, lam=1.0, cx=0.0, cv=1e-6,
                                  in_regime=True)
        gf = growth.bounded()
        consts = growth.default_constants(gf, 1, 1)
        with pytest.raises(ValueError):
            loeper_lp_probe(np.ones(32), np.ones(32), 1, gf, consts, kv)

    def test_loeper_bounded_ratio(self, rng):
        x = np.arange(256) / 256
        rho1 = 1.0 + 0.3 * np.cos(2 * np.pi * x)
        rho2 = 1.0 + 0.3 * np.cos(2 * np.pi * (x - 1e-4))
        gf = growth.bounded()
        consts = growth.default_constants(gf, 2, 1)
        kv = kinetic.KineticValue(s=1e-7, lam=30.0, cx=3e-9, cv=1e-8,
                                  in_regime=True)
        out = loeper_lp_probe(rho1, rho2, 2, gf, consts, kv)
        assert out["status"] == "ok"
        assert out["ratio"] >= 0

    def test_interpolation_constant_equality(self):
        out = interpolation_check(np.full(64, 3.0), 2.0, 1.0, 4.0)
        assert out["ok"]
        assert out["lhs"] == pytest.approx(out["rhs"], rel=1e-12)

    def test_interpolation_indicator(self):
        h = np.zeros(64)
        h[:32] = 1.0
        out = interpolation_check(h, 2.0, 1.0, math.inf)
        # ||1_E||_a = |E|^{1/a}: equality case of the interpolation bound
        assert out["ok"]
        assert out["lhs"] == pytest.approx(2 ** -0.5, rel=1e-12)
        assert out["lhs"] == pytest.approx(out["rhs"], rel=1e-12)

    def test_interpolation_random_sweep(self, rng):
        for _ in range(20):
            h = rng.random(128) + 0.1
            a, b, c = sorted(rng.uniform(1.0, 8.0, 3))
            if a == b or b == c:
                continue
            out = interpolation_check(h, b, a, c)
            assert out["ok"]

    def test_interpolation_exponent_validation(self):
        with pytest.raises(ValueError):
            interpolation_check(np.ones(8), 2.0, 3.0, 4.0)


class TestReportFormat:
    @staticmethod
    def tiny_report():
        row = {c: 0.0 for c in stability.REPORT_COLUMNS}
        row.update(t=0.0, Wpp_f=1e-9, Dp=1e-8, in_regime=True,
                   admissible=True, **{"lambda": 1.0})
        row2 = dict(row, t=0.5, Wpp_f=2e-9)
        return StabilityReport(rows=[row, row2], metadata={"p": 2})

    def test_csv_bools_and_header(self, tmp_path):
        rep = self.tiny_report()
        path = tmp_path / "report.csv"
        rep.to_csv(path, header_lines=("seed=1",))
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=1"
        assert lines[1] == ",".join(stability.REPORT_COLUMNS)
        cells = lines[2].split(",")
        assert cells[stability.REPORT_COLUMNS.index("in_regime")] == "1"
        assert cells[stability.REPORT_COLUMNS.index("admissible")] == "1"

    def test_csv_repr_floats_roundtrip(self, tmp_path):
        rep = self.tiny_report()
        path = tmp_path / "report.csv"
        rep.to_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data[0, 1] == 1e-9

    def test_metadata_json(self, tmp_path):
        rep = self.tiny_report()
        path = tmp_path / "meta.json"
        rep.write_metadata(path)
        import json
        assert json.loads(path.read_text()) == {"p": 2}

    def test_control_violations(self):
        rep = self.tiny_report()
        rep.rows[0].update(Wpp_f=1.0, Dp=0.5, Wpp_rho=0.0, **{"lambda": 1.0})
        assert len(rep.control_violations()) == 1
        rep.rows[0]["in_regime"] = False
        assert rep.control_violations() == []


class TestPerturbations:
    def test_velocity_shift(self, rng):
        ens = vlasov.make_initial("uniform_perturbed", {"vth": 0.1}, 50, 3)
        out = apply_perturbation(ens, {"kind": "velocity_shift",
                                       "delta": 1e-3})
        np.testing.assert_array_equal(out.x, ens.x)
        np.testing.assert_allclose(out.v[:, 0] - ens.v[:, 0], 1e-3)

    def test_position_shift_wraps(self):
        ens = vlasov.ParticleEnsemble(x=np.array([[0.95]]),
                                      v=np.zeros((1, 1)), w=np.array([1.0]))
        out = apply_perturbation(ens, {"kind": "position_shift",
                                       "delta": 0.1})
        assert out.x[0, 0] == pytest.approx(0.05)

    def test_unknown_kind(self):
        ens = vlasov.make_initial("uniform_perturbed", {}, 10, 0)
        with pytest.raises(ValueError):
            apply_perturbation(ens, {"kind": "spin"})


class TestTwinExperiments:
    SIM = {"N": 128, "grid_n": 32, "dt": 2e-3, "T": 0.2, "seed": 5,
           "output_every": 25,
           "initial": {"kind": "uniform_perturbed",
                       "params": {"amplitude": 0.02, "vth": 0.2}}}

    def test_zero_perturbation_zero_distances(self):
        cfg = make_cfg()
        rep = run_twin_experiment(cfg, self.SIM,
                                  {"kind": "velocity_shift", "delta": 0.0})
        for row in rep.rows:
            assert row["Wpp_f"] == 0.0
            assert row["Dp"] == 0.0

    def test_control_inequalities_hold(self):
        cfg = make_cfg()
        rep = run_twin_experiment(cfg, self.SIM,
                                  {"kind": "velocity_shift", "delta": 1e-4})
        assert rep.rows, "no rows produced"
        assert rep.control_violations() == []
        assert rep.metadata["diagonal_gap_t0"] >= -1e-15

    def test_free_transport_twin_analytic(self):
        # uniform equispaced start: zero force, velocity shift delta gives
        # W_pp(f) = delta^p at all times under the diagonal coupling
        sim = {"N": 256, "grid_n": 64, "dt": 2e-3, "T": 0.1, "seed": 1,
               "output_every": 10,
               "initial": {"kind": "uniform_perturbed",
                           "params": {"amplitude": 0.0, "vth": 0.0}}}
        cfg = make_cfg()
        delta = 1e-4
        rep = run_twin_experiment(cfg, sim, {"kind": "velocity_shift",
                                             "delta": delta})
        for row in rep.rows:
            assert row["Cv"] == pytest.approx(delta ** 2, rel=1e-10)
            # positions drift apart linearly: Cx = (delta t)^2
            assert row["Cx"] == pytest.approx((delta * row["t"]) ** 2,
                                              rel=1e-6, abs=1e-30)

    def test_threads_deterministic(self):
        cfg = make_cfg()
        pert = {"kind": "velocity_shift", "delta": 1e-4}
        rep1 = run_twin_experiment(cfg, self.SIM, pert, threads=1)
        rep2 = run_twin_experiment(cfg, self.SIM, pert, threads=2)
        for r1, r2 in zip(rep1.rows, rep2.rows):
            for col in stability.REPORT_COLUMNS:
                if isinstance(r1[col], float) and math.isnan(r1[col]):
                    assert math.isnan(r2[col])
                else:
                    assert r1[col] == r2[col], col

    def test_bound_rows_when_in_regime(self):
        cfg = make_cfg()
        rep = run_twin_experiment(cfg, self.SIM,
                                  {"kind": "velocity_shift", "delta": 1e-5})
        admissible = [r for r in rep.rows if r["admissible"]]
        assert admissible
        for row in admissible:
            assert row["bound"] >= row["Wpp_f"] - 1e-15

    def test_vpb_twin_runs_and_margins(self):
        gfb = growth.bounded()
        cb = growth.default_constants(gfb, 2, 2)
        cfg = make_cfg(p=2, d=2, b_sup=0.3, c_b=1.0, gf_bar=gfb,
                       consts_bar=cb)
        sim = {"d": 2, "N": 400, "grid_n": 16, "dt": 2e-3, "T": 0.05,
               "seed": 2, "output_every": 5,
               "initial": {"kind": "uniform_perturbed",
                           "params": {"amplitude": 0.02, "vth": 0.05}}}
        b = vlasov.MagneticField(fn=lambda t, x: np.full(x.shape[0], 0.3),
                                 sup_norm=0.3)
        rep, extras = run_vpb_twin(cfg, sim, {"kind": "velocity_shift",
                                              "delta": 1e-4}, b)
        assert rep.metadata["magnetized"]
        assert all(m >= 0 for m in extras["velocity_margins"])
        assert rep.control_violations() == []
        # magnetized coefficient strictly exceeds the unmagnetized one
        for row in rep.rows:
            assert row["J"] > j_of_t(cfg, row["A"])

    def test_vpb_requires_b_sup(self):
        cfg = make_cfg(p=2, d=2)
        b = vlasov.MagneticField(fn=lambda t, x: np.zeros(x.shape[0]),
                                 sup_norm=0.0)
        with pytest.raises(ValueError):
            run_vpb_twin(cfg, {"d": 2, "N": 16, "grid_n": 8, "dt": 1e-3,
                               "T": 0.01}, {"kind": "velocity_shift",
                                            "delta": 0.0}, b)
