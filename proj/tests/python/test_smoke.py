import math

import numpy as np
import pytest

import committee as cm


def test_labels_sum_to_one():
    ch = cm.Channel.committee(2)
    omega = np.array([0.3, -0.7])
    v = np.array([[1.0, 0.2], [0.2, 0.5]])
    total = sum(cm.z_out(y, omega, v, ch) for y in cm.label_support(ch))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_g_out_is_score():
    ch = cm.Channel.parity()
    omega = np.array([0.4, 0.1])
    v = np.array([[0.8, -0.1], [-0.1, 0.6]])
    h = 1e-5
    g = cm.g_out(omega, 1.0, v, ch)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (math.log(cm.z_out(1.0, omega + e, v, ch)) - math.log(cm.z_out(1.0, omega - e, v, ch))) / (2 * h)
        assert g[i] == pytest.approx(fd, abs=1e-6)


def test_rademacher_denoiser_mean_is_bounded():
    prior = cm.Prior.rademacher(2)
    w = cm.f_w(np.eye(2), np.array([3.0, -3.0]), prior)
    assert np.all(np.abs(w) < 1) and w[0] > 0.9 and w[1] < -0.9


def test_se_phase_specializes_at_large_alpha():
    prior, ch = cm.Prior.gaussian(2), cm.Channel.committee(2)
    low = cm.se_phase(1.0, [cm.SeInit.Uninformed, cm.SeInit.Informed], prior, ch)
    high = cm.se_phase(3.0, [cm.SeInit.Uninformed, cm.SeInit.Informed], prior, ch)
    assert low["points"][low["dominant"]]["branch"] == cm.Branch.NonSpecialized
    top = high["points"][high["dominant"]]
    assert top["branch"] == cm.Branch.Specialized
    assert top["q00"] > top["q01"]
    assert 0 < top["eps_g"] < 0.25


def test_se_trace_keeps_rho_minus_q_psd():
    prior, ch = cm.Prior.rademacher(2), cm.Channel.committee(2)
    cfg = cm.SeConfig()
    cfg.record_trace = True
    fp = cm.se_run(cm.initial_overlap(cm.SeInit.Uninformed, prior, cfg), 1.8, prior, ch, cfg)
    assert fp["converged"]
    assert min(t[2] for t in fp["trace"]) >= -1e-12


def test_large_k_plateau_and_decay():
    plateau = cm.dominant_scaled(5.0)
    assert plateau.branch == cm.Branch.NonSpecialized
    assert plateau.eps_g == pytest.approx(0.28, abs=0.01)
    far = cm.dominant_scaled(50.0)
    assert far.branch == cm.Branch.Specialized
    assert 1.1 <= far.eps_g * 50.0 <= 1.4


def test_amp_small_instance_is_reproducible():
    prior, ch = cm.Prior.gaussian(2), cm.Channel.committee(2)
    inst = cm.generate_instance(200, 2.0, prior, ch, 5)
    assert inst.x.shape == (400, 200) and inst.x.dtype == np.float32
    assert set(np.unique(inst.y)) <= {-1.0, 0.0, 1.0}
    cfg = cm.AmpConfig()
    cfg.max_iters = 200
    a = cm.amp_run(inst, cm.AmpInit.Random, cfg, n_test=2000)
    b = cm.amp_run(inst, cm.AmpInit.Random, cfg, n_test=2000)
    assert np.array_equal(a["w_hat"], b["w_hat"])
    assert a["eps_g_empirical"] == b["eps_g_empirical"]
    assert a["w_hat"].shape == (200, 2)
    assert 0 <= a["eps_g_closed"] <= 0.5


def test_errors_carry_codes():
    with pytest.raises(cm.CommitteeError) as info:
        cm.find_transition(cm.TransitionKind.Spec, 0.5, 1.0, cm.Prior.gaussian(2), cm.Channel.committee(2))
    assert info.value.args[0] == "BracketError"
    with pytest.raises(cm.CommitteeError) as info:
        cm.se_phase(1.0, [cm.SeInit.Uninformed], cm.Prior.gaussian(3), cm.Channel.parity(3))
    assert info.value.args[0] == "ConfigError"


def test_cli_in_process():
    code, out, err = cm.run_cli(["--mode", "se", "--alpha-min", "2", "--alpha-steps", "1", "--init", "uninformed"])
    assert code == 0
    header, row = out.strip().split("\r\n")
    assert header.startswith("mode,alpha,")
    assert row.startswith("se,2,")
    code, _, err = cm.run_cli(["--channel", "parity", "--k", "3"])
    assert code == 2 and "parity requires K=2" in err
