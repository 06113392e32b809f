"""Self-consistency checks that freeze the reference computations.

These tests only exercise tests/_oracles.py. Once green they pin down the
conventions (bit order, control-first gates, no-swap DFT) that the package
tests rely on.
"""
import math
from fractions import Fraction

import numpy as np
import pytest

import _oracles as orc


def is_unitary(U):
    return np.allclose(U @ U.conj().T, np.eye(U.shape[0]), atol=1e-12)


def test_catalog_unitary():
    for U in [orc.H, orc.X, orc.Z, orc.CX, orc.CZ, orc.CCX,
              orc.rz(3), orc.sr(2), orc.qft(3), orc.qft_inv(4),
              orc.cu_mod(7, 15, 4), orc.maj_matrix(), orc.uma_matrix()]:
        assert is_unitary(U)


def test_cx_is_control_first():
    # |10> -> |11>, |01> stays
    psi = orc.apply(orc.CX, [0, 1], orc.basis_state("10"))
    assert abs(psi[0b11] - 1) < 1e-12
    psi = orc.apply(orc.CX, [0, 1], orc.basis_state("01"))
    assert abs(psi[0b01] - 1) < 1e-12


def test_maj_uma_match_truth_tables():
    MAJ, UMA = orc.maj_matrix(), orc.uma_matrix()
    for x in (0, 1):
        for y in (0, 1):
            for t in (0, 1):
                vin = orc.basis_state(f"{x}{y}{t}")
                xo, yo, to = orc.maj_bits(x, y, t)
                assert abs((MAJ @ vin)[int(f"{xo}{yo}{to}", 2)] - 1) < 1e-12
                xo, yo, to = orc.uma_bits(x, y, t)
                assert abs((UMA @ vin)[int(f"{xo}{yo}{to}", 2)] - 1) < 1e-12


def test_uma_reverses_maj_and_sums():
    # composed on the same triple: x, t restored, y = x + y + t (mod 2)
    for x in (0, 1):
        for y in (0, 1):
            for t in (0, 1):
                m = orc.maj_bits(x, y, t)
                xo, yo, to = orc.uma_bits(*m)
                assert (xo, to) == (x, t)
                assert yo == (x + y + t) % 2


def test_ripple_adder_circuit_all_inputs():
    for y in range(8):
        for t in range(8):
            for c in (0, 1):
                s, ov = orc.ripple_add(y, t, c, 3)
                yo, to, x0o, x1o = orc.ripple_adder_circuit(y, t, c)
                assert (yo, to, x0o, x1o) == (s, t, c, ov)


def test_qft_no_swap_convention():
    # n=2: input |10> (big = 2) maps to sum_k omega^(2*lit(k)) |k> / 2
    M = orc.qft(2)
    col = M[:, 0b10]
    omega = np.exp(2j * np.pi / 4)
    for k in range(4):
        lit_k = int(format(k, "02b")[::-1], 2)
        assert abs(col[k] - omega ** (2 * lit_k) / 2) < 1e-12


def test_sr_zero_is_pauli_z_ladder_head():
    assert np.allclose(orc.sr(0), orc.rz(1))
    assert np.allclose(orc.rz(1), np.diag([1, -1]))


def test_draper_adder_matches_classical():
    for n in (2, 3):
        for x in range(1 << n):
            for y in range(1 << n):
                assert orc.draper_adder_circuit(x, y, n) == (x + y) % (1 << n)


def test_cu_mod_is_modular_multiplication():
    U = orc.cu_mod(7, 15, 4)
    # control set: 13 -> 7*13 mod 15 = 1
    psi = orc.apply(U, [0, 1, 2, 3, 4], orc.basis_state("1" + format(13, "04b")))
    assert abs(psi[int("1" + format(1, "04b"), 2)] - 1) < 1e-12
    # control clear: identity
    psi = orc.apply(U, [0, 1, 2, 3, 4], orc.basis_state("0" + format(13, "04b")))
    assert abs(psi[int("0" + format(13, "04b"), 2)] - 1) < 1e-12
    # y >= N fixed
    psi = orc.apply(U, [0, 1, 2, 3, 4], orc.basis_state("1" + format(15, "04b")))
    assert abs(psi[int("1" + format(15, "04b"), 2)] - 1) < 1e-12


def test_order_finding_peaks():
    dist = orc.order_finding_dist(15, 7, 3)
    # ord(7,15) = 4 divides 2^3, so the estimate is exact: peaks at
    # multiples of 2^3/4 = 2, probability 1/4 each.
    expected = {format(s, "03b"): 0.25 for s in (0, 2, 4, 6)}
    assert set(dist) == set(expected)
    for k, p in expected.items():
        assert abs(dist[k] - p) < 1e-9


def test_order_of_7_mod_15():
    k, v = 1, 7
    while v != 1:
        v = (v * 7) % 15
        k += 1
    assert k == 4


def test_teleport_terminal_and_phase_distance():
    v = orc.teleport_terminal(3 / 5, 4j / 5)
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert orc.global_phase_distance(-v, v) < 1e-12
    assert orc.global_phase_distance(1j * v, v) < 1e-12
    w = v.copy()
    w[0] += 0.1
    assert orc.global_phase_distance(w, v) > 1e-3


def test_measure_dist_bell():
    psi = (orc.basis_state("00") + orc.basis_state("11")) / math.sqrt(2)
    d = orc.measure_dist(psi, [0])
    assert abs(d["0"] - 0.5) < 1e-12 and abs(d["1"] - 0.5) < 1e-12
    d = orc.measure_dist(psi, [0, 1])
    assert abs(d["00"] - 0.5) < 1e-12 and abs(d["11"] - 0.5) < 1e-12


def test_path_probability_dyadics_exact():
    # the checker's tolerance only absorbs float error; dyadic products
    # of the fixture probabilities are exactly representable
    assert Fraction(1, 2) * Fraction(1, 2) == Fraction(1, 4)
    assert 0.5 * 0.5 == 0.25
    assert (1 / 3) ** 4 == pytest.approx(1 / 81, abs=1e-15)
