import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from disq import gates as gt
from disq import qstate as qs

import _oracles as orc
from test_qstate import values_st


def mk(name, params=(), width=None):
    g = gt.make_gate(name, list(params), width or 0)
    return g


CHECKABLE = [
    ("H", (), 1), ("X", (), 1), ("Z", (), 1), ("CX", (), 2), ("CZ", (), 2),
    ("RZ", (3,), 1), ("SR", (2,), 3), ("CSR", (2,), 4),
    ("QFT", (), 4), ("QFTinv", (), 4), ("MAJ", (), 3), ("UMA", (), 3),
    ("CU", (7, 15), 5), ("CU", (4, 15), 5),
]


@pytest.mark.parametrize("name,params,width", CHECKABLE)
def test_catalog_unitary(name, params, width):
    g = gt.make_gate(name, list(params), width)
    M = gt.matrix(g)
    assert np.allclose(M @ M.conj().T, np.eye(M.shape[0]), atol=1e-9)


@pytest.mark.parametrize("name,params,width,oracle", [
    ("H", (), 1, orc.H), ("X", (), 1, orc.X), ("Z", (), 1, orc.Z),
    ("CX", (), 2, orc.CX), ("CZ", (), 2, orc.CZ),
    ("RZ", (3,), 1, orc.rz(3)), ("SR", (2,), 3, orc.sr(2)),
    ("CSR", (2,), 4, orc.controlled(orc.sr(2))),
    ("QFT", (), 3, orc.qft(3)), ("QFTinv", (), 3, orc.qft_inv(3)),
    ("MAJ", (), 3, orc.maj_matrix()), ("UMA", (), 3, orc.uma_matrix()),
    ("CU", (7, 15), 5, orc.cu_mod(7, 15, 4)),
])
def test_catalog_matches_oracle_matrices(name, params, width, oracle):
    g = gt.make_gate(name, list(params), width)
    assert np.allclose(gt.matrix(g), oracle, atol=1e-9)


def test_h_on_zero():
    v = gt.apply_gate(mk("H", width=1), qs.basis_value("0"))
    assert qs.approx_equal(v, qs.value(
        [(1 / math.sqrt(2), "0"), (1 / math.sqrt(2), "1")]))


def test_cx_on_swapped_channel_kets():
    # CX on sum 1/2 |m j> (control first) -> sum 1/2 |m (j xor m)> pooled
    v = qs.value([(0.5, f"{m}{j}") for j in (0, 1) for m in (0, 1)])
    w = gt.apply_gate(mk("CX", width=2), v)
    assert qs.approx_equal(w, v)  # uniform sum is CX-invariant as a set
    v2 = qs.value([(0.5, "00"), (0.5, "11"), (-0.5, "01"), (-0.5, "10")])
    w2 = gt.apply_gate(mk("CX", width=2), v2)
    assert qs.approx_equal(
        w2, qs.value([(0.5, "00"), (0.5, "10"), (-0.5, "01"), (-0.5, "11")]))


def test_apply_gate_prefix_only():
    # CX hits the first two bits; trailing bits ride along
    v = qs.value([(1.0, "110")])
    w = gt.apply_gate(mk("CX", width=2), v)
    assert qs.approx_equal(w, qs.value([(1.0, "100")]))
    v = qs.value([(1.0, "101")])
    w = gt.apply_gate(mk("CX", width=2), v)
    assert qs.approx_equal(w, qs.value([(1.0, "111")]))


def test_apply_gate_keeps_frozen():
    v = qs.QuantumValue((qs.BasisKet(1.0, "0", ("10",)),), 1)
    w = gt.apply_gate(mk("X", width=1), v)
    assert w.kets[0].basis == "1" and w.kets[0].frozen == ("10",)


def test_apply_gate_arity_error():
    with pytest.raises(gt.MalformedApplication):
        gt.apply_gate(mk("CX", width=2), qs.basis_value("0"))


def test_unknown_gate():
    with pytest.raises(gt.UnknownGate):
        gt.make_gate("FOO", [], 1)
    with pytest.raises(gt.UnknownGate):
        gt.make_gate("CU", [3, 15], 5)  # gcd(3,15) != 1


def test_qft_inverse_pair():
    for n in (1, 2, 3, 4, 5):
        M = gt.matrix(gt.make_gate("QFT", [], n))
        Minv = gt.matrix(gt.make_gate("QFTinv", [], n))
        assert np.allclose(Minv @ M, np.eye(1 << n), atol=1e-9)


def test_maj_uma_add_with_carry():
    maj, uma = mk("MAJ", width=3), mk("UMA", width=3)
    for x in (0, 1):
        for y in (0, 1):
            for t in (0, 1):
                v = qs.basis_value(f"{x}{y}{t}")
                out = gt.apply_gate(uma, gt.apply_gate(maj, v))
                bits = out.kets[0].basis
                assert bits[0] == str(x) and bits[2] == str(t)
                assert int(bits[1]) == (x + y + t) % 2


def test_cu_examples():
    g = mk("CU", (7, 15), width=5)
    v = gt.apply_gate(g, qs.basis_value("1" + "0001"))
    assert v == qs.value([(1.0, "1" + "0111")])  # 7*1 mod 15 = 7
    v = gt.apply_gate(g, qs.basis_value("0" + "0001"))
    assert v == qs.value([(1.0, "0" + "0001")])


def test_full_ripple_composition_all_inputs():
    # layout x0 y0 y1 y2 t0 t1 t2 x1, index 0 least significant
    maj, uma, cx = mk("MAJ", width=3), mk("UMA", width=3), mk("CX", width=2)
    X0, Y0, Y1, Y2, T0, T1, T2, X1 = range(8)

    def on(positions, g, v):
        rest = [i for i in range(8) if i not in positions]
        perm = positions + rest
        v = qs.reorder(v, perm)
        v = gt.apply_gate(g, v)
        inv = [perm.index(i) for i in range(8)]
        return qs.reorder(v, inv)

    for y in range(8):
        for t in range(8):
            bits = "0" + "".join(str((y >> i) & 1) for i in range(3)) + \
                "".join(str((t >> i) & 1) for i in range(3)) + "0"
            v = qs.basis_value(bits)
            v = on([X0, Y0, T0], maj, v)
            v = on([T0, Y1, T1], maj, v)
            v = on([T1, Y2, T2], maj, v)
            v = on([T2, X1], cx, v)
            v = on([T1, Y2, T2], uma, v)
            v = on([T0, Y1, T1], uma, v)
            v = on([X0, Y0, T0], uma, v)
            out = v.kets[0].basis
            y_out = sum(int(out[Y0 + i]) << i for i in range(3))
            t_out = sum(int(out[T0 + i]) << i for i in range(3))
            s, ov = orc.ripple_add(y, t, 0, 3)
            assert (y_out, t_out, out[X0], int(out[X1])) == (s, t, "0", ov)


@given(values_st(2, 4), st.sampled_from(["H", "X", "Z", "CX", "RZ"]))
def test_apply_gate_preserves_norm(v, name):
    params = [2] if name == "RZ" else []
    g = gt.make_gate(name, params, v.width)
    w = gt.apply_gate(g, v)
    assert w.norm_sq() == pytest.approx(v.norm_sq(), abs=1e-12)
