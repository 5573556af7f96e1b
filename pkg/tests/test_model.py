import json

import numpy as np
import pytest

from asymgame.errors import (
    AsymmetryBeyondTolerance,
    DefinitenessViolation,
    DimensionMismatch,
    ParseError,
)
from asymgame.filtering import FilterStage
from asymgame.model import (
    GameModel,
    Stage,
    StationaryModel,
    augment,
    double_integrator_2d,
    dump_model,
    load_model,
    model_hash,
    save_model,
    validate_model,
)
from asymgame.scenarios import scenario_config, scenario_model


def pe_matrices() -> dict:
    return dict(scenario_config("pe-baseline")["matrices"])


def scalar_stage(**over) -> Stage:
    one = np.ones((1, 1))
    mats = {k: one.copy() for k in ("A", "B1", "B2", "W", "C1", "C2", "V1", "V2", "Q", "R")}
    mats["S"] = -one
    mats.update(over)
    return Stage(**mats)


def test_pursuit_evasion_model_accepted() -> None:
    m = validate_model(pe_matrices(), horizon="infinite")
    assert isinstance(m, StationaryModel)
    assert (m.n, m.m1, m.m2, m.p1, m.p2) == (4, 2, 2, 2, 2)
    np.testing.assert_array_equal(m.S, -8 * np.eye(2))


def test_zero_R_rejected() -> None:
    mats = pe_matrices()
    mats["R"] = np.zeros((2, 2))
    with pytest.raises(DefinitenessViolation, match="R"):
        validate_model(mats, horizon="infinite")


def test_positive_S_rejected() -> None:
    mats = pe_matrices()
    mats["S"] = np.eye(2)
    with pytest.raises(DefinitenessViolation, match="S"):
        validate_model(mats, horizon="infinite")


def test_indefinite_W_reports_eigenvalue() -> None:
    mats = pe_matrices()
    mats["W"] = np.diag([1.0, -1.0, 0.0, 0.0])
    with pytest.raises(DefinitenessViolation, match="W.*-1"):
        validate_model(mats, horizon="infinite")


def test_dimension_mismatch_names_stage_and_matrix() -> None:
    mats = pe_matrices()
    A = np.array(mats["A"])
    mats["A"] = [A.tolist(), A.tolist(), np.eye(3).tolist()]
    with pytest.raises(DimensionMismatch, match=r"A at stage 2"):
        validate_model(mats, horizon=3)


def test_wrong_input_width_rejected() -> None:
    mats = pe_matrices()
    mats["R"] = np.eye(3)
    with pytest.raises(DimensionMismatch, match="R"):
        validate_model(mats, horizon="infinite")


def test_small_asymmetry_is_symmetrized() -> None:
    mats = pe_matrices()
    Q = np.array(mats["Q"])
    Q[0, 1] = 1e-3 * 1e-13
    mats["Q"] = Q
    m = validate_model(mats, horizon="infinite")
    np.testing.assert_array_equal(m.Q, m.Q.T)


def test_large_asymmetry_rejected() -> None:
    mats = pe_matrices()
    Q = np.array(mats["Q"])
    Q[0, 1] = 1e-4
    mats["Q"] = Q
    with pytest.raises(AsymmetryBeyondTolerance, match="Q"):
        validate_model(mats, horizon="infinite")


def test_missing_S_is_parse_error_naming_field() -> None:
    cfg = scenario_config("pe-baseline")
    del cfg["matrices"]["S"]
    with pytest.raises(ParseError, match="S"):
        load_model(cfg)


def test_R2_alias_for_S() -> None:
    cfg = scenario_config("pe-baseline")
    cfg["matrices"]["R2"] = cfg["matrices"].pop("S")
    m = load_model(cfg)
    np.testing.assert_array_equal(m.S, -8 * np.eye(2))


def test_template_expands_to_double_integrator() -> None:
    cfg = scenario_config("pe-baseline")
    mats = cfg["matrices"]
    for k in ("A", "B1", "B2"):
        del mats[k]
    cfg["template"] = {"name": "double_integrator_2d", "dt": 0.1}
    m = load_model(cfg)
    A = np.eye(4)
    A[0, 2] = A[1, 3] = 0.1
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 0.1
    np.testing.assert_array_equal(m.A, A)
    np.testing.assert_array_equal(m.B1, B)
    np.testing.assert_array_equal(m.B2, -B)


def test_template_bad_dt() -> None:
    cfg = scenario_config("pe-baseline")
    cfg["template"] = {"name": "double_integrator_2d", "dt": "fast"}
    with pytest.raises(ParseError, match="dt"):
        load_model(cfg)


def test_shipped_scenario_file_loads(tmp_path) -> None:
    path = tmp_path / "pe.json"
    path.write_text(json.dumps(scenario_config("pe-baseline")))
    m = load_model(path)
    A, B = double_integrator_2d(0.1)
    np.testing.assert_array_equal(m.A, A)
    np.testing.assert_array_equal(m.B2, -B)
    np.testing.assert_array_equal(m.Q, 1e-3 * np.eye(4))


def test_invalid_json_reports_position() -> None:
    with pytest.raises(ParseError, match="line 1"):
        load_model('{"horizon": 3, "matrices": [}')


def test_time_invariant_shorthand_expands_to_all_stages() -> None:
    m = load_model(scenario_config("pe-baseline"), horizon=5)
    assert isinstance(m, GameModel)
    assert m.A.shape == (5, 4, 4)
    for t in range(5):
        np.testing.assert_array_equal(m.stage(t).A, m.A[0])
    np.testing.assert_array_equal(m.Q_T, m.Q[0])
    np.testing.assert_array_equal(m.x0_mean, [-10.0, 0.0, 0.0, 0.0])


def test_round_trip_is_bit_exact(rng) -> None:
    mats = pe_matrices()
    T = 4
    A = np.array(mats["A"])
    mats["A"] = np.stack([A + rng.normal(scale=1e-3, size=A.shape) for _ in range(T)])
    L = rng.normal(size=(4, 4))
    mats["x0_cov"] = L @ L.T / 3.0
    mats["x0_mean"] = rng.normal(size=4)
    m = validate_model(mats, horizon=T)
    text = dump_model(m)
    back = load_model(text)
    for k in ("A", "B1", "B2", "W", "C1", "C2", "V1", "V2", "Q", "R", "S", "Q_T", "x0_mean", "x0_cov"):
        np.testing.assert_array_equal(getattr(back, k), getattr(m, k))
    assert model_hash(back) == model_hash(m)


def test_round_trip_stationary() -> None:
    m = load_model(scenario_config("pe-noisy-pursuer"))
    back = load_model(save_model(m))
    for k in ("A", "B1", "V1", "S"):
        np.testing.assert_array_equal(getattr(back, k), getattr(m, k))


def test_validate_is_idempotent() -> None:
    m = validate_model(pe_matrices(), horizon=3)
    again = validate_model(m)
    assert model_hash(again) == model_hash(m)
    np.testing.assert_array_equal(again.W, m.W)


def test_models_are_immutable() -> None:
    m = validate_model(pe_matrices(), horizon="infinite")
    with pytest.raises(ValueError):
        m.A[0, 0] = 2.0


def test_hash_changes_with_data() -> None:
    a = load_model(scenario_config("pe-baseline"))
    b = load_model(scenario_config("pe-slow-pursuer"))
    assert model_hash(a) != model_hash(b)


def test_augment_trivial_filter() -> None:
    m = validate_model(pe_matrices(), horizon="infinite")
    n = m.n
    filt = FilterStage(m.A, m.A, m.B1, m.B2, np.zeros((n, 2)), np.zeros((n, 2)), np.zeros((n, 2)), np.zeros((n, 2)))
    aug = augment(m, filt)
    Z = np.zeros((n, n))
    np.testing.assert_array_equal(aug.A_aug[n:, :n], np.vstack((Z, Z)))
    np.testing.assert_array_equal(aug.A_aug[n : 2 * n, n : 2 * n], m.A)
    np.testing.assert_array_equal(aug.A_aug[2 * n :, 2 * n :], m.A)
    np.testing.assert_array_equal(aug.B1_aug, np.vstack((m.B1, np.zeros_like(m.B1), m.B1)))
    np.testing.assert_array_equal(aug.B2_aug, np.vstack((m.B2, m.B2, np.zeros_like(m.B2))))


def test_augment_zero_L1_gives_zero_middle_column() -> None:
    m = validate_model(pe_matrices(), horizon="infinite")
    n = m.n
    L2 = np.arange(8.0).reshape(4, 2) / 10
    filt = FilterStage(m.A, m.A, m.B1, m.B2, np.zeros((n, 2)), m.A @ L2, np.zeros((n, 2)), L2)
    G = augment(m, filt).G_aug
    I = np.eye(n)
    np.testing.assert_array_equal(G[:n], np.hstack((I, np.zeros((n, 4)))))
    np.testing.assert_array_equal(G[n : 2 * n], np.hstack((I, np.zeros((n, 4)))))
    np.testing.assert_array_equal(G[2 * n :], np.hstack((I, np.zeros((n, 2)), -m.A @ L2)))


def test_augment_scalar_hand_assembly() -> None:
    st = scalar_stage()
    one = np.ones((1, 1))
    half = 0.5 * one
    filt = FilterStage(one, one, one, one, half, half, half, half)
    aug = augment(st, filt)
    np.testing.assert_array_equal(aug.A_aug, np.diag([1.0, 0.5, 0.5]))


def test_augment_block_structure_random(rng) -> None:
    n, m1, m2, p1, p2 = 3, 2, 1, 2, 1
    st = Stage(
        A=rng.normal(size=(n, n)), B1=rng.normal(size=(n, m1)), B2=rng.normal(size=(n, m2)), W=np.eye(n),
        C1=rng.normal(size=(p1, n)), C2=rng.normal(size=(p2, n)), V1=np.eye(p1), V2=np.eye(p2),
        Q=np.eye(n), R=np.eye(m1), S=-np.eye(m2),
    )
    A1, A2 = rng.normal(size=(n, n)), rng.normal(size=(n, n))
    Bb1, Bb2 = rng.normal(size=(n, m1)), rng.normal(size=(n, m2))
    Lb1, Lb2 = rng.normal(size=(n, p1)), rng.normal(size=(n, p2))
    aug = augment(st, FilterStage(A1, A2, Bb1, Bb2, Lb1, Lb2, Lb1, Lb2))
    Z = np.zeros((n, n))
    expect_A = np.block([
        [st.A, Z, Z],
        [st.A - A1, A1 - Lb1 @ st.C1, Z],
        [st.A - A2, Z, A2 - Lb2 @ st.C2],
    ])
    np.testing.assert_allclose(aug.A_aug, expect_A, rtol=0, atol=1e-14)
    np.testing.assert_allclose(aug.B1_aug, np.vstack((st.B1, st.B1 - Bb1, st.B1)), atol=1e-15)
    np.testing.assert_allclose(aug.B2_aug, np.vstack((st.B2, st.B2, st.B2 - Bb2)), atol=1e-15)
    I = np.eye(n)
    expect_G = np.block([
        [I, np.zeros((n, p1)), np.zeros((n, p2))],
        [I, -Lb1, np.zeros((n, p2))],
        [I, np.zeros((n, p1)), -Lb2],
    ])
    np.testing.assert_array_equal(aug.G_aug, expect_G)
    GWG = aug.G_aug @ aug.W_aug @ aug.G_aug.T
    np.testing.assert_allclose(GWG, GWG.T, atol=1e-14)
    assert np.linalg.eigvalsh(GWG)[0] >= -1e-10 * np.trace(GWG)


def test_augment_top_left_is_A_every_stage(rng) -> None:
    m = validate_model(pe_matrices(), horizon=3)
    n = m.n
    for t in range(3):
        st = m.stage(t)
        L = rng.normal(size=(n, 2))
        aug = augment(st, FilterStage(st.A, st.A, st.B1, st.B2, L, L, L, L))
        np.testing.assert_array_equal(aug.A_aug[:n, :n], st.A)


def test_augment_dimension_check() -> None:
    m = validate_model(pe_matrices(), horizon="infinite")
    filt = FilterStage(m.A, m.A, m.B1, m.B2, np.zeros((4, 3)), np.zeros((4, 2)), np.zeros((4, 3)), np.zeros((4, 2)))
    with pytest.raises(DimensionMismatch, match="Lbar1"):
        augment(m, filt)


def test_zero_horizon_round_trip_keeps_dimensions() -> None:
    m = scenario_model("pe-baseline").with_horizon(0, x0_mean=np.ones(4), Q_T=2 * np.eye(4))
    back = load_model(save_model(m))
    assert back.horizon == 0
    assert back.A.shape == (0, 4, 4) and back.B1.shape == (0, 4, 2) and back.S.shape == (0, 2, 2)
    np.testing.assert_array_equal(back.Q_T, m.Q_T)
    assert model_hash(back) == model_hash(m)
